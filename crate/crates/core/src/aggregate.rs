//! The exact aggregate flexibility set: a Minkowski sum of permutahedra, one
//! per occupied window, embedded in `ℝⁿ`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fleet::{group_and_accumulate, validate_fleet, Block, EvRequest, MonotoneVertex, TimeHorizon, Window};
use crate::permutahedron::{embedded_vertex, support, top_sums, Permutation};
use crate::solver::{self, Method, Objective, SolveOptions};

/// Largest horizon accepted by [`AggregateFlexibility::membership_exhaustive`].
pub const MAX_EXHAUSTIVE_N: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateFlexibility {
    horizon: TimeHorizon,
    blocks: Vec<Block>,
    total_energy: f64,
}

/// Why a point failed a membership test.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    /// `⟨x, 1⟩` differs from the total energy.
    Energy { sum: f64, expected: f64 },
    /// `Σ_{t∈S} x_t > b(S)`; `subset` holds 1-based steps.
    Subset { subset: Vec<usize>, lhs: f64, bound: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Membership {
    pub member: bool,
    pub violated: Option<Violation>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionMembership {
    pub member: bool,
    pub distance: f64,
    pub iterations: usize,
}

impl AggregateFlexibility {
    /// Validates the fleet and accumulates one block per occupied window.
    /// Blocks whose generator is all zero are kept.
    pub fn build(fleet: &[EvRequest], horizon: TimeHorizon) -> Result<Self> {
        validate_fleet(fleet, horizon)?;
        let blocks: Vec<Block> = group_and_accumulate(fleet).into_values().collect();
        Ok(Self::from_blocks(horizon, blocks))
    }

    fn from_blocks(horizon: TimeHorizon, blocks: Vec<Block>) -> Self {
        let total_energy = blocks.iter().map(|b| b.nu.sum()).sum();
        Self {
            horizon,
            blocks,
            total_energy,
        }
    }

    /// Assembles an aggregate directly from per-window generators.
    pub fn from_generators(horizon: TimeHorizon, generators: Vec<MonotoneVertex>) -> Result<Self> {
        let blocks = generators
            .into_iter()
            .map(|nu| Block {
                window: nu.window,
                nu,
                members: Vec::new(),
            })
            .collect();
        Self::from_checked_blocks(horizon, blocks)
    }

    fn from_checked_blocks(horizon: TimeHorizon, mut blocks: Vec<Block>) -> Result<Self> {
        for b in &blocks {
            b.window.check(horizon)?;
            if b.nu.window != b.window || b.nu.len() != b.window.len() {
                return Err(Error::LengthMismatch {
                    expected: b.window.len(),
                    actual: b.nu.len(),
                });
            }
            if !b.nu.is_monotone() {
                return Err(Error::Parse(format!(
                    "generator on {} is not nonincreasing and nonnegative",
                    b.window
                )));
            }
        }
        blocks.sort_by_key(|b| b.window);
        if let Some(w) = blocks.windows(2).find(|w| w[0].window == w[1].window) {
            return Err(Error::Parse(format!("duplicate block window {}", w[0].window)));
        }
        Ok(Self::from_blocks(horizon, blocks))
    }

    pub fn horizon(&self) -> TimeHorizon {
        self.horizon
    }

    pub fn n(&self) -> usize {
        self.horizon.n
    }

    /// Blocks sorted by window.
    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block(&self, window: Window) -> Option<&Block> {
        self.blocks
            .binary_search_by_key(&window, |b| b.window)
            .ok()
            .map(|i| &self.blocks[i])
    }

    pub fn total_energy(&self) -> f64 {
        self.total_energy
    }

    /// Default membership tolerance `1e−9 · max(1, total_energy)`.
    pub fn default_tol(&self) -> f64 {
        1e-9 * self.total_energy.max(1.0)
    }

    /// The vertex `μ_π = Σ_blocks ν̂_π`.
    pub fn vertex_mu(&self, pi: &Permutation) -> Result<Vec<f64>> {
        let mut mu = vec![0.0; self.n()];
        for b in &self.blocks {
            let v = embedded_vertex(&b.nu, b.window, pi, self.horizon)?;
            for (m, x) in mu.iter_mut().zip(v) {
                *m += x;
            }
        }
        Ok(mu)
    }

    /// `h(P^agg, y) = Σ_blocks h(Π(ν), y|_window)`.
    pub fn support(&self, y: &[f64]) -> Result<f64> {
        self.check_len(y)?;
        self.blocks
            .iter()
            .map(|b| support(&b.nu, &y[b.window.range()]))
            .sum()
    }

    /// Upper bound `b(S)` on `Σ_{t∈S} x_t`. `subset` holds 1-based steps and
    /// must be nonempty and proper.
    pub fn facet_bound(&self, subset: &[usize]) -> Result<f64> {
        let mut member = vec![false; self.n()];
        for &t in subset {
            if t == 0 || t > self.n() {
                return Err(Error::BadSubset);
            }
            member[t - 1] = true;
        }
        let size = member.iter().filter(|&&m| m).count();
        if size == 0 || size == self.n() {
            return Err(Error::BadSubset);
        }
        Ok(self
            .blocks
            .iter()
            .map(|b| {
                let k = member[b.window.range()].iter().filter(|&&m| m).count();
                b.nu.values[..k].iter().sum::<f64>()
            })
            .sum())
    }

    /// Exact membership via the energy equality and all `2ⁿ − 2` subset bounds.
    /// Reports the first violated subset in bitmask order.
    pub fn membership_exhaustive(&self, x: &[f64], tol: f64) -> Result<Membership> {
        let n = self.n();
        if n > MAX_EXHAUSTIVE_N {
            return Err(Error::HorizonTooLarge(n));
        }
        self.check_len(x)?;
        let sum: f64 = x.iter().sum();
        if (sum - self.total_energy).abs() > tol {
            return Ok(Membership {
                member: false,
                violated: Some(Violation::Energy {
                    sum,
                    expected: self.total_energy,
                }),
            });
        }
        let full: u32 = (1u32 << n) - 1;
        let mask_to_set = |mask: u32| -> Vec<usize> { (0..n).filter(|t| mask >> t & 1 == 1).map(|t| t + 1).collect() };

        // Negativity: x_t < 0 means the complement of {t} carries more than
        // the total energy.
        if let Some(t) = x.iter().position(|&v| v < -tol) {
            let mask = full & !(1u32 << t);
            return Ok(Membership {
                member: false,
                violated: Some(Violation::Subset {
                    subset: mask_to_set(mask),
                    lhs: sum - x[t],
                    bound: self.subset_bound_mask(mask, &self.prefix_tables()),
                }),
            });
        }

        let tables = self.prefix_tables();
        let check = |mask: u32| -> Option<(f64, f64)> {
            let lhs: f64 = (0..n).filter(|t| mask >> t & 1 == 1).map(|t| x[t]).sum();
            let bound = self.subset_bound_mask(mask, &tables);
            (lhs > bound + tol).then_some((lhs, bound))
        };
        let first = (1..full).into_par_iter().find_first(|&mask| check(mask).is_some());
        Ok(match first {
            None => Membership {
                member: true,
                violated: None,
            },
            Some(mask) => {
                let (lhs, bound) = check(mask).expect("violation re-evaluates");
                Membership {
                    member: false,
                    violated: Some(Violation::Subset {
                        subset: mask_to_set(mask),
                        lhs,
                        bound,
                    }),
                }
            }
        })
    }

    /// Membership by projection: minimizes `‖y − x‖²` over the set and accepts
    /// when the achieved distance is within `tol`. Works for any horizon.
    ///
    /// For a member the squared distance is bounded by the Frank–Wolfe gap, so
    /// the solve runs until the gap certifies a distance of `tol / 4`.
    pub fn membership_projection(&self, x: &[f64], tol: f64) -> Result<ProjectionMembership> {
        self.check_len(x)?;
        let opts = SolveOptions {
            method: Method::Pairwise,
            max_iters: 20_000,
            gap_tol: (tol / 4.0).powi(2),
            ..SolveOptions::default()
        };
        let sol = solver::solve(self, &Objective::TrackL2 { signal: x.to_vec() }, &opts)?;
        if !sol.objective_value.is_finite() {
            return Err(Error::SolverFailure("non-finite tracking objective".into()));
        }
        let distance = sol.objective_value.max(0.0).sqrt();
        Ok(ProjectionMembership {
            member: distance <= tol,
            distance,
            iterations: sol.iterations,
        })
    }

    fn check_len(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.n() {
            return Err(Error::LengthMismatch {
                expected: self.n(),
                actual: y.len(),
            });
        }
        Ok(())
    }

    fn prefix_tables(&self) -> Vec<(u32, Vec<f64>)> {
        self.blocks
            .iter()
            .map(|b| {
                let mask = b.window.range().fold(0u32, |m, t| m | 1 << t);
                (mask, top_sums(&b.nu))
            })
            .collect()
    }

    fn subset_bound_mask(&self, mask: u32, tables: &[(u32, Vec<f64>)]) -> f64 {
        tables
            .iter()
            .map(|(wmask, sums)| sums[(mask & wmask).count_ones() as usize])
            .sum()
    }

    pub fn to_doc(&self) -> AggregateDoc {
        AggregateDoc {
            horizon: self.n(),
            total_energy: self.total_energy,
            blocks: self
                .blocks
                .iter()
                .map(|b| BlockDoc {
                    arrival: b.window.a,
                    departure: b.window.d,
                    nu: b.nu.values.clone(),
                    members: b.members.clone(),
                })
                .collect(),
        }
    }

    pub fn from_doc(doc: AggregateDoc) -> Result<Self> {
        let horizon = TimeHorizon::new(doc.horizon)?;
        let blocks = doc
            .blocks
            .into_iter()
            .map(|b| {
                let window = Window {
                    a: b.arrival,
                    d: b.departure,
                };
                Block {
                    window,
                    nu: MonotoneVertex { window, values: b.nu },
                    members: b.members,
                }
            })
            .collect();
        Self::from_checked_blocks(horizon, blocks)
    }
}

/// JSON form of an aggregate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateDoc {
    pub horizon: usize,
    pub total_energy: f64,
    pub blocks: Vec<BlockDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockDoc {
    pub arrival: usize,
    pub departure: usize,
    pub nu: Vec<f64>,
    #[serde(default)]
    pub members: Vec<String>,
}
