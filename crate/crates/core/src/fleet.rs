//! EV charging requests: validation, canonical monotone vertices, grouping by
//! arrival/departure window, sampling and file ingestion.
//!
//! Time steps are 1-based and a window `(a, d)` covers steps `a..d`, i.e. the
//! vehicle may draw power at `t = a, …, d − 1` and `p = d − a` steps in total.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, RowError, RowErrors};

/// Slack added to `E / m` before flooring so an exact multiple stored
/// inexactly does not lose a full-power step.
pub const QUOTIENT_EPS: f64 = 1e-12;

/// Relative tolerance for the `E = p·m` singleton test and the upper energy bound.
const CAPACITY_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TimeHorizon {
    pub n: usize,
}

impl TimeHorizon {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyHorizon);
        }
        Ok(Self { n })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Every valid window `1 ≤ a < d ≤ n + 1`, ordered by `(a, d)`.
    pub fn windows(&self) -> impl Iterator<Item = Window> + '_ {
        (1..=self.n).flat_map(move |a| (a + 1..=self.n + 1).map(move |d| Window { a, d }))
    }
}

/// Arrival/departure pair. Ordered by `(a, d)` so block maps iterate stably.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Window {
    pub a: usize,
    pub d: usize,
}

impl Window {
    pub fn new(a: usize, d: usize, horizon: TimeHorizon) -> Result<Self> {
        let w = Window { a, d };
        w.check(horizon)?;
        Ok(w)
    }

    pub fn check(&self, horizon: TimeHorizon) -> Result<()> {
        if self.a < 1 || self.a >= self.d || self.d > horizon.n + 1 {
            return Err(Error::BadWindow {
                a: self.a,
                d: self.d,
                n: horizon.n,
            });
        }
        Ok(())
    }

    /// Number of steps `p = d − a`.
    pub fn len(&self) -> usize {
        self.d - self.a
    }

    pub fn is_empty(&self) -> bool {
        self.d <= self.a
    }

    /// Zero-based index range of the window inside a length-`n` profile.
    pub fn range(&self) -> std::ops::Range<usize> {
        self.a - 1..self.d - 1
    }

    /// Whether 1-based step `t` lies inside the window.
    pub fn contains(&self, t: usize) -> bool {
        self.a <= t && t < self.d
    }
}

impl fmt::Display for Window {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.a, self.d)
    }
}

/// One vehicle's charging requirement `(E, a, d, m)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvRequest {
    pub id: String,
    #[serde(rename = "arrival")]
    pub arrival: usize,
    #[serde(rename = "departure")]
    pub departure: usize,
    pub energy: f64,
    pub power: f64,
}

/// How much freedom a valid request leaves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flexibility {
    Flexible,
    /// `E = 0` or `E = p·m`: the flexibility set is a single point.
    Singleton,
}

impl EvRequest {
    pub fn new(id: impl Into<String>, energy: f64, arrival: usize, departure: usize, power: f64) -> Self {
        Self {
            id: id.into(),
            arrival,
            departure,
            energy,
            power,
        }
    }

    pub fn window(&self) -> Window {
        Window {
            a: self.arrival,
            d: self.departure,
        }
    }

    /// Maximum deliverable energy `p·m`.
    pub fn capacity(&self) -> f64 {
        self.window().len() as f64 * self.power
    }

    /// Checks the request against the horizon and reports whether it is a
    /// singleton (zero flexibility). Singletons are valid.
    pub fn validate(&self, horizon: TimeHorizon) -> Result<Flexibility> {
        self.window().check(horizon)?;
        if !(self.power.is_finite() && self.power > 0.0) {
            return Err(Error::NonpositivePower {
                id: self.id.clone(),
                power: self.power,
            });
        }
        let capacity = self.capacity();
        let slack = CAPACITY_RTOL * capacity.max(1.0);
        if !(self.energy.is_finite() && self.energy >= 0.0) || self.energy > capacity + slack {
            return Err(Error::InfeasibleRequest {
                id: self.id.clone(),
                energy: self.energy,
                capacity,
            });
        }
        if self.energy == 0.0 || (capacity - self.energy).abs() <= slack {
            Ok(Flexibility::Singleton)
        } else {
            Ok(Flexibility::Flexible)
        }
    }

    /// The unique nonincreasing vertex `(m, …, m, r, 0, …, 0)` of the
    /// request's flexibility set, with `q = ⌊E/m⌋` full-power steps and
    /// residual `r = E − q·m`.
    pub fn monotone_vertex(&self) -> MonotoneVertex {
        let window = self.window();
        let p = window.len();
        let m = self.power;
        let q = ((self.energy / m + QUOTIENT_EPS).floor() as usize).min(p);
        let mut values = vec![0.0; p];
        values[..q].fill(m);
        if q < p {
            values[q] = (self.energy - q as f64 * m).clamp(0.0, m);
        }
        MonotoneVertex { window, values }
    }
}

/// Nonincreasing, nonnegative generator of a permutahedron living on a window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotoneVertex {
    pub window: Window,
    pub values: Vec<f64>,
}

impl MonotoneVertex {
    pub fn zeros(window: Window) -> Self {
        Self {
            window,
            values: vec![0.0; window.len()],
        }
    }

    /// Builds a vertex from arbitrary values by sorting them nonincreasing.
    pub fn from_unsorted(window: Window, mut values: Vec<f64>) -> Result<Self> {
        if values.len() != window.len() {
            return Err(Error::LengthMismatch {
                expected: window.len(),
                actual: values.len(),
            });
        }
        values.sort_by(|x, y| y.total_cmp(x));
        Ok(Self { window, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn is_monotone(&self) -> bool {
        self.values.windows(2).all(|w| w[0] >= w[1]) && self.values.iter().all(|&v| v >= 0.0)
    }
}

/// A window together with the accumulated vertex of all vehicles sharing it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub window: Window,
    pub nu: MonotoneVertex,
    pub members: Vec<String>,
}

/// Partitions the fleet by exact `(a, d)` and sums member vertices per window.
pub fn group_and_accumulate(fleet: &[EvRequest]) -> BTreeMap<Window, Block> {
    let mut blocks: BTreeMap<Window, Block> = BTreeMap::new();
    for ev in fleet {
        let v = ev.monotone_vertex();
        let block = blocks.entry(v.window).or_insert_with(|| Block {
            window: v.window,
            nu: MonotoneVertex::zeros(v.window),
            members: Vec::new(),
        });
        for (acc, x) in block.nu.values.iter_mut().zip(&v.values) {
            *acc += x;
        }
        block.members.push(ev.id.clone());
    }
    blocks
}

/// Validates every request, returning the first failure.
pub fn validate_fleet(fleet: &[EvRequest], horizon: TimeHorizon) -> Result<()> {
    for ev in fleet {
        ev.validate(horizon)?;
    }
    Ok(())
}

/// Samples `count` strictly flexible requests: windows uniform over all valid
/// `(a, d)` pairs, power uniform on `[0.5, 3]`, energy uniform on `(0, p·m)`.
pub fn sample_fleet(seed: u64, count: usize, horizon: TimeHorizon) -> Vec<EvRequest> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let windows: Vec<Window> = horizon.windows().collect();
    let mut fleet = Vec::with_capacity(count);
    for i in 0..count {
        let w = windows[rng.gen_range(0..windows.len())];
        let power = rng.gen_range(0.5..=3.0);
        let capacity = w.len() as f64 * power;
        let ev = loop {
            let energy = rng.gen_range(0.0..capacity);
            let ev = EvRequest::new(format!("ev{}", i + 1), energy, w.a, w.d, power);
            if matches!(ev.validate(horizon), Ok(Flexibility::Flexible)) {
                break ev;
            }
        };
        fleet.push(ev);
    }
    fleet
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FleetFormat {
    Csv,
    Json,
}

impl FleetFormat {
    /// Guesses the format from the file extension; anything but `.json` is CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("json") => FleetFormat::Json,
            _ => FleetFormat::Csv,
        }
    }
}

/// Reads and validates a fleet file. All row failures are collected and
/// returned together as [`Error::Rows`].
pub fn load_fleet(path: &Path, format: FleetFormat, horizon: TimeHorizon) -> Result<Vec<EvRequest>> {
    let text = std::fs::read_to_string(path)?;
    parse_fleet(&text, format, horizon)
}

pub fn parse_fleet(text: &str, format: FleetFormat, horizon: TimeHorizon) -> Result<Vec<EvRequest>> {
    let parsed: Vec<Result<EvRequest>> = match format {
        FleetFormat::Csv => {
            let mut reader = csv::ReaderBuilder::new()
                .trim(csv::Trim::All)
                .from_reader(text.as_bytes());
            reader
                .deserialize::<EvRequest>()
                .map(|r| r.map_err(|e| Error::Parse(e.to_string())))
                .collect()
        }
        FleetFormat::Json => {
            if text.trim().is_empty() {
                Vec::new()
            } else {
                let rows: Vec<serde_json::Value> = serde_json::from_str(text)?;
                rows.into_iter()
                    .map(|v| serde_json::from_value(v).map_err(|e| Error::Parse(e.to_string())))
                    .collect()
            }
        }
    };

    let mut fleet = Vec::with_capacity(parsed.len());
    let mut errors = Vec::new();
    for (i, row) in parsed.into_iter().enumerate() {
        match row.and_then(|ev| ev.validate(horizon).map(|_| ev)) {
            Ok(ev) => fleet.push(ev),
            Err(error) => errors.push(RowError { row: i + 1, error }),
        }
    }
    if !errors.is_empty() {
        return Err(Error::Rows(RowErrors(errors)));
    }
    if fleet.is_empty() {
        log::warn!("fleet file contains no requests");
    }
    Ok(fleet)
}

/// Writes the fleet in CSV form with header `id,arrival,departure,energy,power`.
pub fn write_fleet_csv<W: Write>(fleet: &[EvRequest], mut out: W) -> Result<()> {
    writeln!(out, "id,arrival,departure,energy,power")?;
    for ev in fleet {
        writeln!(
            out,
            "{},{},{},{},{}",
            ev.id, ev.arrival, ev.departure, ev.energy, ev.power
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn h(n: usize) -> TimeHorizon {
        TimeHorizon::new(n).unwrap()
    }

    #[test]
    fn validate_examples() {
        let ev = EvRequest::new("a", 6.0, 1, 4, 2.0);
        assert_eq!(ev.validate(h(4)).unwrap(), Flexibility::Singleton);

        let ev = EvRequest::new("b", 7.0, 1, 4, 2.0);
        assert!(matches!(ev.validate(h(4)), Err(Error::InfeasibleRequest { .. })));

        let ev = EvRequest::new("c", 3.0, 2, 4, 2.0);
        assert_eq!(ev.validate(h(4)).unwrap(), Flexibility::Flexible);
    }

    #[test]
    fn validate_errors() {
        let bad = |ev: EvRequest| ev.validate(h(4)).unwrap_err();
        assert!(matches!(bad(EvRequest::new("x", 1.0, 3, 3, 1.0)), Error::BadWindow { .. }));
        assert!(matches!(bad(EvRequest::new("x", 1.0, 0, 3, 1.0)), Error::BadWindow { .. }));
        assert!(matches!(bad(EvRequest::new("x", 1.0, 2, 6, 1.0)), Error::BadWindow { .. }));
        assert!(matches!(bad(EvRequest::new("x", 1.0, 1, 3, 0.0)), Error::NonpositivePower { .. }));
        assert!(matches!(bad(EvRequest::new("x", -1.0, 1, 3, 1.0)), Error::InfeasibleRequest { .. }));
        // departure may equal n + 1
        assert!(EvRequest::new("x", 1.0, 1, 5, 1.0).validate(h(4)).is_ok());
        assert_eq!(
            EvRequest::new("z", 0.0, 1, 3, 1.0).validate(h(4)).unwrap(),
            Flexibility::Singleton
        );
    }

    #[test]
    fn monotone_vertex_examples() {
        assert_eq!(EvRequest::new("a", 5.0, 1, 5, 2.0).monotone_vertex().values, vec![2.0, 2.0, 1.0, 0.0]);
        assert_eq!(EvRequest::new("b", 6.0, 1, 4, 2.0).monotone_vertex().values, vec![2.0, 2.0, 2.0]);
        assert_eq!(EvRequest::new("c", 0.0, 1, 3, 2.0).monotone_vertex().values, vec![0.0, 0.0]);
    }

    #[test]
    fn monotone_vertex_inexact_multiple() {
        // 0.3 / 0.1 = 2.9999999999999996 in binary floating point
        let v = EvRequest::new("a", 0.3, 1, 5, 0.1).monotone_vertex();
        assert_eq!(&v.values[..3], &[0.1, 0.1, 0.1]);
        assert!(v.values[3] >= 0.0 && v.values[3] < 1e-15);
    }

    #[test]
    fn grouping_examples() {
        let mut a = EvRequest::new("a", 3.0, 1, 4, 2.0);
        let mut b = EvRequest::new("b", 7.0, 1, 4, 3.0);
        // v¹ = (2, 1, 0), v² = (3, 3, 1)
        let blocks = group_and_accumulate(&[a.clone(), b.clone()]);
        assert_eq!(blocks.len(), 1);
        let block = &blocks[&Window { a: 1, d: 4 }];
        assert_eq!(block.nu.values, vec![5.0, 4.0, 1.0]);
        assert_eq!(block.members, vec!["a", "b"]);

        let blocks = group_and_accumulate(std::slice::from_ref(&a));
        assert_eq!(blocks[&a.window()].nu, a.monotone_vertex());

        b.arrival = 2;
        b.energy = 4.0;
        a.departure = 4;
        let blocks = group_and_accumulate(&[a, b]);
        assert_eq!(blocks.len(), 2);
        assert_eq!(blocks[&Window { a: 2, d: 4 }].nu.values, vec![3.0, 1.0]);
    }

    #[test]
    fn sample_is_valid_and_reproducible() {
        let fleet = sample_fleet(1, 100, h(48));
        assert_eq!(fleet.len(), 100);
        for ev in &fleet {
            assert_eq!(ev.validate(h(48)).unwrap(), Flexibility::Flexible);
            assert!((0.5..=3.0).contains(&ev.power));
        }
        let mut x = Vec::new();
        let mut y = Vec::new();
        write_fleet_csv(&fleet, &mut x).unwrap();
        write_fleet_csv(&sample_fleet(1, 100, h(48)), &mut y).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn sample_tiny_horizon() {
        let fleet = sample_fleet(2, 1, h(2));
        let w = fleet[0].window();
        assert!([(1, 2), (1, 3), (2, 3)].contains(&(w.a, w.d)));
    }

    #[test]
    fn load_csv_row() {
        let text = "id,arrival,departure,energy,power\nev7,2,5,3.0,1.5\n";
        let fleet = parse_fleet(text, FleetFormat::Csv, h(6)).unwrap();
        assert_eq!(fleet, vec![EvRequest::new("ev7", 3.0, 2, 5, 1.5)]);
    }

    #[test]
    fn load_collects_row_errors() {
        let text = "id,arrival,departure,energy,power\nok,1,3,1,1\nbad,2,1,1,1\nworse,1,2,x,1\n";
        let err = parse_fleet(text, FleetFormat::Csv, h(6)).unwrap_err();
        let Error::Rows(RowErrors(rows)) = err else { panic!("expected row errors") };
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].row, 2);
        assert!(matches!(rows[0].error, Error::BadWindow { .. }));
        assert_eq!(rows[1].row, 3);
        assert!(matches!(rows[1].error, Error::Parse(_)));
    }

    #[test]
    fn load_empty() {
        assert!(parse_fleet("", FleetFormat::Csv, h(4)).unwrap().is_empty());
        assert!(parse_fleet("id,arrival,departure,energy,power\n", FleetFormat::Csv, h(4)).unwrap().is_empty());
        assert!(parse_fleet("[]", FleetFormat::Json, h(4)).unwrap().is_empty());
    }

    #[test]
    fn load_json() {
        let text = r#"[{"id":"a","arrival":1,"departure":3,"energy":1.5,"power":1.0},
                       {"id":"b","arrival":1,"departure":3,"energy":9.0,"power":1.0}]"#;
        let err = parse_fleet(text, FleetFormat::Json, h(4)).unwrap_err();
        let Error::Rows(RowErrors(rows)) = err else { panic!() };
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].row, 2);
        assert!(matches!(rows[0].error, Error::InfeasibleRequest { .. }));
    }
}
