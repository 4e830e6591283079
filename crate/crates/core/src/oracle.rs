//! Brute-force references for tests and debugging.
//!
//! Nothing here calls into the permutahedron or aggregate code: vertices are
//! rebuilt from the request tuple, permutations are enumerated directly and
//! Minkowski sums are formed point by point.

use crate::error::{Error, Result};
use crate::fleet::{EvRequest, TimeHorizon};

/// Upper bound on `Π pⁱ!` accepted by [`brute_force_cloud`].
pub const CLOUD_LIMIT: u128 = 1_000_000;

const DEDUP_EPS: f64 = 1e-12;

/// Candidate extreme points of a Minkowski sum; its convex hull is the sum.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexCloud {
    pub points: Vec<Vec<f64>>,
}

impl VertexCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Every vertex of one vehicle's flexibility set, embedded in `ℝⁿ`.
pub fn ev_vertices(ev: &EvRequest, n: usize) -> Vec<Vec<f64>> {
    let p = ev.departure - ev.arrival;
    let full = ((ev.energy / ev.power + 1e-12).floor() as usize).min(p);
    let mut base = vec![0.0; p];
    for v in base.iter_mut().take(full) {
        *v = ev.power;
    }
    if full < p {
        base[full] = (ev.energy - full as f64 * ev.power).max(0.0);
    }
    let mut out = Vec::new();
    heap_permutations(&mut base, &mut |perm| {
        let mut point = vec![0.0; n];
        point[ev.arrival - 1..ev.departure - 1].copy_from_slice(perm);
        out.push(point);
    });
    dedup(out)
}

/// Heap's algorithm over all `k!` orderings, duplicates included.
fn heap_permutations(items: &mut [f64], visit: &mut dyn FnMut(&[f64])) {
    let k = items.len();
    let mut c = vec![0usize; k];
    visit(items);
    let mut i = 0;
    while i < k {
        if c[i] < i {
            if i % 2 == 0 {
                items.swap(0, i);
            } else {
                items.swap(c[i], i);
            }
            visit(items);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}

fn lex_cmp(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        if (x - y).abs() > DEDUP_EPS {
            return x.total_cmp(y);
        }
    }
    std::cmp::Ordering::Equal
}

fn dedup(mut points: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    points.sort_by(|a, b| lex_cmp(a, b));
    points.dedup_by(|a, b| lex_cmp(a, b).is_eq());
    points
}

/// Minkowski sum of the vehicles' vertex sets, deduplicated after each
/// summand.
pub fn brute_force_cloud(fleet: &[EvRequest], horizon: TimeHorizon) -> Result<VertexCloud> {
    let mut combos: u128 = 1;
    for ev in fleet {
        let p = (ev.departure - ev.arrival) as u128;
        let fact = (1..=p).fold(1u128, |acc, k| acc.saturating_mul(k));
        combos = combos.saturating_mul(fact);
        if combos > CLOUD_LIMIT {
            return Err(Error::TooLarge(combos));
        }
    }
    let n = horizon.n;
    let mut points = vec![vec![0.0; n]];
    for ev in fleet {
        let verts = ev_vertices(ev, n);
        let mut next = Vec::with_capacity(points.len() * verts.len());
        for base in &points {
            for v in &verts {
                next.push(base.iter().zip(v).map(|(a, b)| a + b).collect());
            }
        }
        points = dedup(next);
    }
    Ok(VertexCloud { points })
}

/// `max_{z ∈ cloud} ⟨z, y⟩`.
pub fn cloud_support(cloud: &VertexCloud, y: &[f64]) -> Result<f64> {
    let mut best: Option<f64> = None;
    for z in &cloud.points {
        if z.len() != y.len() {
            return Err(Error::LengthMismatch {
                expected: z.len(),
                actual: y.len(),
            });
        }
        let v: f64 = z.iter().zip(y).map(|(a, b)| a * b).sum();
        best = Some(best.map_or(v, |b| b.max(v)));
    }
    best.ok_or(Error::EmptyCloud)
}

/// Cheapest profile for one vehicle under fixed prices: full power in the
/// cheapest in-window slots, the remainder in the next cheapest.
pub fn greedy_linear_oracle(ev: &EvRequest, price: &[f64]) -> (Vec<f64>, f64) {
    let mut slots: Vec<usize> = (ev.arrival - 1..ev.departure - 1).collect();
    slots.sort_by(|&i, &j| price[i].total_cmp(&price[j]).then(i.cmp(&j)));
    let mut profile = vec![0.0; price.len()];
    let mut remaining = ev.energy;
    for t in slots {
        if remaining <= 0.0 {
            break;
        }
        let take = remaining.min(ev.power);
        profile[t] = take;
        remaining -= take;
    }
    let cost = profile.iter().zip(price).map(|(u, p)| u * p).sum();
    (profile, cost)
}
