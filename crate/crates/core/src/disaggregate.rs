//! Per-EV schedules from an aggregate solution. Each vehicle receives its
//! block's convex combination of permutations applied to its own monotone
//! vertex, so profiles sum to `x*` and each stays inside the vehicle's
//! permutahedron.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::aggregate::AggregateFlexibility;
use crate::error::{Error, Result};
use crate::fleet::{EvRequest, Window};
use crate::solver::SolverSolution;

#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    /// `(id, profile)` in fleet order; each profile has length `n`.
    pub profiles: Vec<(String, Vec<f64>)>,
    pub aggregate: Vec<f64>,
}

impl Schedule {
    pub fn profile(&self, id: &str) -> Option<&[f64]> {
        self.profiles.iter().find(|(i, _)| i == id).map(|(_, p)| p.as_slice())
    }

    pub fn n(&self) -> usize {
        self.aggregate.len()
    }

    /// Writes `id,t1,…,tn` rows followed by an `AGGREGATE` row. Profiles are
    /// passed through [`emitted_profile`] so every entry is nonnegative.
    pub fn write_csv<W: Write>(&self, fleet: &[EvRequest], tol_rel: f64, mut out: W) -> Result<()> {
        let n = self.n();
        let header: Vec<String> = std::iter::once("id".to_string())
            .chain((1..=n).map(|t| format!("t{t}")))
            .collect();
        writeln!(out, "{}", header.join(","))?;
        let mut total = vec![0.0; n];
        for ((id, u), ev) in self.profiles.iter().zip(fleet) {
            let row = emitted_profile(u, ev.window(), tol_rel * ev.energy.max(1.0));
            for (acc, v) in total.iter_mut().zip(&row) {
                *acc += v;
            }
            writeln!(out, "{},{}", id, join(&row))?;
        }
        writeln!(out, "AGGREGATE,{}", join(&total))?;
        Ok(())
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

/// Clamps entries in `[−tol, 0)` to zero and adds the removed mass to the
/// largest in-window entry so the row sum is unchanged.
pub fn emitted_profile(u: &[f64], window: Window, tol: f64) -> Vec<f64> {
    let mut out = u.to_vec();
    let mut residual = 0.0;
    for v in out.iter_mut() {
        if *v < 0.0 && *v >= -tol {
            residual += *v;
            *v = 0.0;
        }
    }
    if residual != 0.0 {
        let range = window.range();
        if let Some(j) = (range.clone()).max_by(|&i, &j| out[i].total_cmp(&out[j])) {
            out[j] += residual;
        }
    }
    out
}

/// `uⁱ = Σₖ wₖ · embed(apply(vⁱ, πₖ))` using the atoms of the vehicle's block.
pub fn schedule(solution: &SolverSolution, fleet: &[EvRequest], agg: &AggregateFlexibility) -> Result<Schedule> {
    let n = agg.n();
    let profiles = fleet
        .par_iter()
        .map(|ev| {
            let w = ev.window();
            let var = solution.variable(w).ok_or_else(|| Error::FleetMismatch {
                id: ev.id.clone(),
                a: w.a,
                d: w.d,
            })?;
            let local = var.apply_to(&ev.monotone_vertex().values);
            let mut u = vec![0.0; n];
            u[w.range()].copy_from_slice(&local);
            Ok((ev.id.clone(), u))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut aggregate = vec![0.0; n];
    for (_, u) in &profiles {
        for (a, v) in aggregate.iter_mut().zip(u) {
            *a += v;
        }
    }
    Ok(Schedule { profiles, aggregate })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Bound on `‖Σᵢ uⁱ − x*‖∞`.
    pub aggregate: f64,
    /// Per-EV tolerance is `per_ev_rel · max(1, Eⁱ)`.
    pub per_ev_rel: f64,
}

impl Tolerances {
    pub fn for_fleet(fleet: &[EvRequest]) -> Self {
        let total: f64 = fleet.iter().map(|ev| ev.energy).sum();
        Self {
            aggregate: 1e-7 * total.max(1.0),
            per_ev_rel: 1e-7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EvIssue {
    MissingProfile,
    OutsideWindow { t: usize, value: f64 },
    Negative { t: usize, value: f64 },
    AbovePower { t: usize, value: f64, power: f64 },
    Energy { delivered: f64, required: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvViolation {
    pub id: String,
    pub issues: Vec<EvIssue>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub passed: bool,
    pub tracking_error: f64,
    pub tracking_ok: bool,
    pub violations: Vec<EvViolation>,
}

/// Checks that profiles sum to `x*` and that every profile is feasible for
/// its vehicle: zero outside the window, within `[0, m]` inside, and
/// delivering exactly `E`.
pub fn verify(sched: &Schedule, x_star: &[f64], fleet: &[EvRequest], tol: Tolerances) -> VerificationReport {
    let n = x_star.len();
    let mut sum = vec![0.0; n];
    for (_, u) in &sched.profiles {
        for (s, v) in sum.iter_mut().zip(u) {
            *s += v;
        }
    }
    let tracking_error = if sched.profiles.iter().all(|(_, u)| u.len() == n) {
        sum.iter().zip(x_star).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    } else {
        f64::INFINITY
    };
    let tracking_ok = tracking_error <= tol.aggregate;

    let violations: Vec<EvViolation> = fleet
        .iter()
        .filter_map(|ev| {
            let issues = match sched.profile(&ev.id) {
                None => vec![EvIssue::MissingProfile],
                Some(u) if u.len() != n => vec![EvIssue::MissingProfile],
                Some(u) => check_profile(ev, u, tol.per_ev_rel * ev.energy.max(1.0)),
            };
            (!issues.is_empty()).then(|| EvViolation { id: ev.id.clone(), issues })
        })
        .collect();

    VerificationReport {
        passed: tracking_ok && violations.is_empty(),
        tracking_error,
        tracking_ok,
        violations,
    }
}

fn check_profile(ev: &EvRequest, u: &[f64], tol: f64) -> Vec<EvIssue> {
    let w = ev.window();
    let mut issues = Vec::new();
    for (i, &v) in u.iter().enumerate() {
        let t = i + 1;
        if !w.contains(t) {
            if v != 0.0 {
                issues.push(EvIssue::OutsideWindow { t, value: v });
            }
        } else if v < -tol {
            issues.push(EvIssue::Negative { t, value: v });
        } else if v > ev.power + tol {
            issues.push(EvIssue::AbovePower { t, value: v, power: ev.power });
        }
    }
    let delivered: f64 = u.iter().sum();
    if (delivered - ev.energy).abs() > tol {
        issues.push(EvIssue::Energy {
            delivered,
            required: ev.energy,
        });
    }
    issues
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fleet::TimeHorizon;
    use crate::solver::{solve, Objective, SolveOptions};

    fn setup(fleet: &[EvRequest], n: usize, obj: &Objective) -> (AggregateFlexibility, SolverSolution) {
        let agg = AggregateFlexibility::build(fleet, TimeHorizon::new(n).unwrap()).unwrap();
        let sol = solve(&agg, obj, &SolveOptions::default()).unwrap();
        (agg, sol)
    }

    #[test]
    fn single_ev_gets_aggregate() {
        let fleet = [EvRequest::new("e", 3.0, 1, 4, 2.0)];
        let (agg, sol) = setup(&fleet, 3, &Objective::TrackL2 { signal: vec![1.0, 1.0, 1.0] });
        let s = schedule(&sol, &fleet, &agg).unwrap();
        for (u, x) in s.profile("e").unwrap().iter().zip(&sol.x_star) {
            assert!((u - x).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_evs_split_evenly() {
        let fleet = [EvRequest::new("a", 2.5, 2, 5, 1.5), EvRequest::new("b", 2.5, 2, 5, 1.5)];
        let (agg, sol) = setup(&fleet, 5, &Objective::TrackL2 { signal: vec![0.0, 2.0, 1.0, 2.0, 0.0] });
        let s = schedule(&sol, &fleet, &agg).unwrap();
        let (ua, ub) = (s.profile("a").unwrap(), s.profile("b").unwrap());
        for t in 0..5 {
            assert_eq!(ua[t], ub[t]);
            assert!((ua[t] - sol.x_star[t] / 2.0).abs() < 1e-12);
        }
        assert_eq!(ua[0], 0.0);
        assert_eq!(ua[4], 0.0);
    }

    #[test]
    fn identity_atoms_give_unpermuted_vertices() {
        let fleet = [EvRequest::new("a", 2.5, 1, 4, 1.0), EvRequest::new("b", 1.0, 1, 4, 2.0)];
        let agg = AggregateFlexibility::build(&fleet, TimeHorizon::new(3).unwrap()).unwrap();
        // zero iterations keeps the identity initialization
        let sol = solve(
            &agg,
            &Objective::TrackL2 { signal: vec![0.0; 3] },
            &SolveOptions { max_iters: 0, ..Default::default() },
        )
        .unwrap();
        let s = schedule(&sol, &fleet, &agg).unwrap();
        assert_eq!(s.profile("a").unwrap(), &[1.0, 1.0, 0.5]);
        assert_eq!(s.profile("b").unwrap(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn fleet_mismatch() {
        let fleet = [EvRequest::new("a", 1.0, 1, 3, 1.0)];
        let (agg, sol) = setup(&fleet, 3, &Objective::Linear { price: vec![1.0; 3] });
        let other = [EvRequest::new("z", 1.0, 2, 4, 1.0)];
        assert!(matches!(schedule(&sol, &other, &agg), Err(Error::FleetMismatch { .. })));
    }

    #[test]
    fn verify_passes_then_catches_faults() {
        let fleet = crate::fleet::sample_fleet(9, 40, TimeHorizon::new(10).unwrap());
        let (agg, sol) = setup(&fleet, 10, &Objective::TrackL2 { signal: vec![10.0; 10] });
        let s = schedule(&sol, &fleet, &agg).unwrap();
        let tol = Tolerances::for_fleet(&fleet);
        let report = verify(&s, &sol.x_star, &fleet, tol);
        assert!(report.passed, "{report:?}");

        let mut bumped = s.clone();
        let victim = fleet[3].clone();
        let t = victim.window().range().start;
        bumped.profiles[3].1[t] += 0.1;
        let report = verify(&bumped, &sol.x_star, &fleet, tol);
        assert!(!report.passed && !report.tracking_ok);
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].id, victim.id);

        // move charge outside the window, keeping the energy total
        let ev = fleet.iter().position(|e| e.arrival > 1).unwrap();
        let mut leaked = s.clone();
        let inside = fleet[ev].window().range().start;
        let amount = leaked.profiles[ev].1[inside];
        leaked.profiles[ev].1[inside] = 0.0;
        leaked.profiles[ev].1[0] = amount.max(0.01);
        let report = verify(&leaked, &sol.x_star, &fleet, tol);
        assert!(!report.passed);
        let issues = &report.violations.iter().find(|v| v.id == fleet[ev].id).unwrap().issues;
        assert!(issues.iter().any(|i| matches!(i, EvIssue::OutsideWindow { t: 1, .. })));
    }

    #[test]
    fn emitted_profile_clamps_and_preserves_sum() {
        let w = Window { a: 2, d: 5 };
        let u = [0.0, 2.0, -1e-12, 1.0, 0.0];
        let out = emitted_profile(&u, w, 1e-9);
        assert!(out.iter().all(|&v| v >= 0.0));
        assert_eq!(out[2], 0.0);
        assert!((out.iter().sum::<f64>() - u.iter().sum::<f64>()).abs() < 1e-15);
        assert!((out[1] - (2.0 - 1e-12)).abs() < 1e-15);
    }

    #[test]
    fn csv_layout() {
        let fleet = [EvRequest::new("a", 1.0, 1, 3, 1.0), EvRequest::new("b", 2.0, 2, 4, 2.0)];
        let (agg, sol) = setup(&fleet, 3, &Objective::Linear { price: vec![3.0, 2.0, 1.0] });
        let s = schedule(&sol, &fleet, &agg).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&fleet, 1e-7, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "id,t1,t2,t3");
        assert_eq!(lines[1], "a,0,1,0");
        assert_eq!(lines[2], "b,0,0,2");
        assert_eq!(lines[3], "AGGREGATE,0,1,2");
    }
}
