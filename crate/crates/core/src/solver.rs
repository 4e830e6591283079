//! Convex optimization over the aggregate set through its Birkhoff extended
//! formulation.
//!
//! Each block's doubly stochastic matrix is never materialized. It is held as
//! a convex combination of permutations (atoms), whose image under the block
//! generator is cached. The linear minimization oracle over a block is a
//! sort, so a Frank–Wolfe iteration costs `O(Σ p log p)` over occupied blocks.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::aggregate::AggregateFlexibility;
use crate::error::{Error, Result};
use crate::fleet::{MonotoneVertex, Window};
use crate::permutahedron::Permutation;

/// Atoms lighter than this are dropped.
pub const ATOM_PRUNE: f64 = 1e-14;

const PRUNE_EVERY: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Objective {
    /// `pᵀx`.
    Linear { price: Vec<f64> },
    /// `xᵀPx + xᵀPd` with `P = diag(p)`, `p ≥ 0`.
    QuadraticPrice { price: Vec<f64>, demand: Vec<f64> },
    /// `‖x − g‖₂²`.
    TrackL2 { signal: Vec<f64> },
}

impl Objective {
    pub fn validate(&self, n: usize) -> Result<()> {
        let check = |v: &[f64]| {
            if v.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    actual: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidObjective("non-finite coefficient".into()));
            }
            Ok(())
        };
        match self {
            Objective::Linear { price } => check(price),
            Objective::QuadraticPrice { price, demand } => {
                check(price)?;
                check(demand)?;
                if price.iter().any(|&p| p < 0.0) {
                    return Err(Error::InvalidObjective("quadratic price must be nonnegative".into()));
                }
                Ok(())
            }
            Objective::TrackL2 { signal } => check(signal),
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, Objective::Linear { .. })
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Objective::Linear { price } => dot(price, x),
            Objective::QuadraticPrice { price, demand } => x
                .iter()
                .zip(price)
                .zip(demand)
                .map(|((&x, &p), &d)| p * x * x + p * x * d)
                .sum(),
            Objective::TrackL2 { signal } => x.iter().zip(signal).map(|(&x, &g)| (x - g) * (x - g)).sum(),
        }
    }

    /// The objective is separable, so the partial derivative at `t` only
    /// depends on `x_t`.
    #[inline]
    fn partial(&self, t: usize, xt: f64) -> f64 {
        match self {
            Objective::Linear { price } => price[t],
            Objective::QuadraticPrice { price, demand } => 2.0 * price[t] * xt + price[t] * demand[t],
            Objective::TrackL2 { signal } => 2.0 * (xt - signal[t]),
        }
    }

    /// Coefficient `c_t` with `f_t(x + δ) = f_t(x) + f_t'(x)·δ + c_t·δ²`.
    #[inline]
    fn curvature_at(&self, t: usize) -> f64 {
        match self {
            Objective::Linear { .. } => 0.0,
            Objective::QuadraticPrice { price, .. } => price[t],
            Objective::TrackL2 { .. } => 1.0,
        }
    }

    fn curvature(&self, dir: &[f64]) -> f64 {
        dir.iter().enumerate().map(|(t, &v)| self.curvature_at(t) * v * v).sum()
    }
}

/// `∇f(x)`.
pub fn gradient(obj: &Objective, x: &[f64]) -> Result<Vec<f64>> {
    obj.validate(x.len())?;
    Ok(x.iter().enumerate().map(|(t, &xt)| obj.partial(t, xt)).collect())
}

/// Permutation minimizing `⟨grad|_w, ν_π⟩`: the largest generator entries go
/// to the cheapest slots. Ties keep lower indices first.
pub fn lmo_block(nu: &MonotoneVertex, w: Window, grad: &[f64]) -> Permutation {
    lmo_local(&grad[w.range()], nu.len())
}

fn lmo_local(g: &[f64], p: usize) -> Permutation {
    debug_assert_eq!(g.len(), p);
    let mut order: Vec<u32> = (0..p as u32).collect();
    order.sort_by(|&i, &j| g[i as usize].total_cmp(&g[j as usize]));
    let mut perm = vec![0u32; p];
    for (rank, &pos) in order.iter().enumerate() {
        perm[pos as usize] = rank as u32;
    }
    Permutation::from_zero_based(perm)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    /// Closed-form line search for the quadratic objectives, `γ = 1` for linear.
    Exact,
    /// `γ = 2 / (k + 2)`.
    OpenLoop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Classic conditional gradient.
    FrankWolfe,
    /// Block-wise pairwise steps that move weight from the worst active atom
    /// to the oracle atom. Converges linearly on the tracking objective,
    /// which projection-based membership relies on.
    Pairwise,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub max_iters: usize,
    pub gap_tol: f64,
    pub step_rule: StepRule,
    pub method: Method,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            max_iters: 5000,
            gap_tol: 1e-6,
            step_rule: StepRule::Exact,
            method: Method::FrankWolfe,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub weight: f64,
    pub perm: Permutation,
}

/// One block's doubly stochastic matrix as a convex combination of
/// permutation matrices, plus its cached image `Σ wₖ · ν_{πₖ}` on the window.
#[derive(Debug, Clone)]
pub struct BirkhoffVariable {
    window: Window,
    atoms: Vec<Atom>,
    image: Vec<f64>,
    // Stored weights are relative to `scale`; see `normalize`.
    scale: f64,
    index: HashMap<Permutation, usize>,
}

impl BirkhoffVariable {
    fn at_identity(nu: &MonotoneVertex) -> Self {
        let perm = Permutation::identity(nu.len());
        let mut index = HashMap::new();
        index.insert(perm.clone(), 0);
        Self {
            window: nu.window,
            atoms: vec![Atom { weight: 1.0, perm }],
            image: nu.values.clone(),
            scale: 1.0,
            index,
        }
    }

    /// Rebuilds a variable from explicit atoms, recomputing the image.
    pub fn from_atoms(nu: &MonotoneVertex, atoms: Vec<Atom>) -> Result<Self> {
        let p = nu.len();
        let mut image = vec![0.0; p];
        let mut index: HashMap<Permutation, usize> = HashMap::new();
        let mut merged: Vec<Atom> = Vec::with_capacity(atoms.len());
        for atom in atoms {
            if atom.perm.len() != p {
                return Err(Error::LengthMismatch {
                    expected: p,
                    actual: atom.perm.len(),
                });
            }
            if atom.weight.is_nan() || atom.weight < 0.0 {
                return Err(Error::Parse(format!("negative atom weight {}", atom.weight)));
            }
            atom.perm.apply_scaled_into(&nu.values, atom.weight, &mut image);
            match index.get(&atom.perm) {
                Some(&i) => merged[i].weight += atom.weight,
                None => {
                    index.insert(atom.perm.clone(), merged.len());
                    merged.push(atom);
                }
            }
        }
        let total: f64 = merged.iter().map(|a| a.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Parse(format!("atom weights sum to {total}, expected 1")));
        }
        Ok(Self {
            window: nu.window,
            atoms: merged,
            image,
            scale: 1.0,
            index,
        })
    }

    pub fn window(&self) -> Window {
        self.window
    }

    /// Atoms with normalized weights.
    pub fn atoms(&self) -> &[Atom] {
        debug_assert_eq!(self.scale, 1.0, "atoms read before normalization");
        &self.atoms
    }

    /// Cached image on the window (length `p`).
    pub fn image(&self) -> &[f64] {
        &self.image
    }

    /// Image embedded in `ℝⁿ`.
    pub fn embedded_image(&self, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        out[self.window.range()].copy_from_slice(&self.image);
        out
    }

    /// `Σ wₖ · apply(v, πₖ)` for any vector `v` on this window.
    pub fn apply_to(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        for atom in &self.atoms {
            atom.perm.apply_scaled_into(v, atom.weight * self.scale, &mut out);
        }
        out
    }

    /// The implied `p × p` matrix `A` with `image = A ν`. Row `j` has a one at
    /// column `π[j]` for each atom.
    pub fn implied_matrix(&self) -> Vec<Vec<f64>> {
        let p = self.window.len();
        let mut m = vec![vec![0.0; p]; p];
        for atom in &self.atoms {
            for (j, row) in m.iter_mut().enumerate() {
                row[atom.perm.get(j)] += atom.weight * self.scale;
            }
        }
        m
    }

    /// `max |image − Σ wₖ ν_{πₖ}|`.
    pub fn image_residual(&self, nu: &MonotoneVertex) -> f64 {
        self.apply_to(&nu.values)
            .iter()
            .zip(&self.image)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Scales every weight by `(1 − γ)` and adds `γ` to `perm`. The scaling is
    /// lazy: stored weights are divided by a running factor.
    fn fw_step(&mut self, gamma: f64, perm: Permutation, target: &[f64]) {
        for (y, s) in self.image.iter_mut().zip(target) {
            *y = (1.0 - gamma) * *y + gamma * s;
        }
        if gamma >= 1.0 {
            self.atoms.clear();
            self.index.clear();
            self.scale = 1.0;
            self.push_atom(1.0, perm);
            return;
        }
        self.scale *= 1.0 - gamma;
        let w = gamma / self.scale;
        match self.index.get(&perm) {
            Some(&i) => self.atoms[i].weight += w,
            None => self.push_atom(w, perm),
        }
        if self.scale < 1e-100 {
            self.normalize();
        }
    }

    fn push_atom(&mut self, weight: f64, perm: Permutation) {
        self.index.insert(perm.clone(), self.atoms.len());
        self.atoms.push(Atom { weight, perm });
    }

    /// Folds the lazy scale into the weights and drops negligible atoms.
    fn normalize(&mut self) {
        let scale = self.scale;
        for a in &mut self.atoms {
            a.weight *= scale;
        }
        self.scale = 1.0;
        let before = self.atoms.len();
        self.atoms.retain(|a| a.weight >= ATOM_PRUNE);
        if self.atoms.len() != before {
            self.reindex();
        }
    }

    fn reindex(&mut self) {
        self.index = self
            .atoms
            .iter()
            .enumerate()
            .map(|(i, a)| (a.perm.clone(), i))
            .collect();
    }

    fn weight_sum(&self) -> f64 {
        self.atoms.iter().map(|a| a.weight).sum::<f64>() * self.scale
    }
}

#[derive(Debug, Clone)]
pub struct SolverSolution {
    pub variables: Vec<BirkhoffVariable>,
    pub x_star: Vec<f64>,
    pub objective_value: f64,
    pub fw_gap: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl SolverSolution {
    pub fn variable(&self, window: Window) -> Option<&BirkhoffVariable> {
        self.variables
            .binary_search_by_key(&window, |v| v.window)
            .ok()
            .map(|i| &self.variables[i])
    }

    pub fn to_doc(&self) -> SolutionDoc {
        SolutionDoc {
            horizon: self.x_star.len(),
            x_star: self.x_star.clone(),
            objective_value: self.objective_value,
            fw_gap: self.fw_gap,
            iterations: self.iterations,
            converged: self.converged,
            blocks: self
                .variables
                .iter()
                .map(|v| BlockAtomsDoc {
                    arrival: v.window.a,
                    departure: v.window.d,
                    atoms: v.atoms().to_vec(),
                })
                .collect(),
        }
    }

    /// Restores a solution against the aggregate it was computed from. Block
    /// images and `x*` are recomputed from the atoms.
    pub fn from_doc(doc: SolutionDoc, agg: &AggregateFlexibility) -> Result<Self> {
        if doc.horizon != agg.n() {
            return Err(Error::DimensionMismatch {
                expected: agg.n(),
                actual: doc.horizon,
            });
        }
        let mut variables = Vec::with_capacity(doc.blocks.len());
        for b in doc.blocks {
            let window = Window {
                a: b.arrival,
                d: b.departure,
            };
            let block = agg.block(window).ok_or_else(|| {
                Error::Parse(format!("solution block {window} is not in the aggregate"))
            })?;
            variables.push(BirkhoffVariable::from_atoms(&block.nu, b.atoms)?);
        }
        variables.sort_by_key(|v| v.window);
        if variables.len() != agg.blocks().len() {
            return Err(Error::Parse(format!(
                "solution has {} blocks, aggregate has {}",
                variables.len(),
                agg.blocks().len()
            )));
        }
        let x_star = assemble(&variables, agg.n());
        Ok(Self {
            variables,
            x_star,
            objective_value: doc.objective_value,
            fw_gap: doc.fw_gap,
            iterations: doc.iterations,
            converged: doc.converged,
        })
    }
}

/// JSON form of a solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionDoc {
    pub horizon: usize,
    pub x_star: Vec<f64>,
    pub objective_value: f64,
    pub fw_gap: f64,
    pub iterations: usize,
    pub converged: bool,
    pub blocks: Vec<BlockAtomsDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockAtomsDoc {
    pub arrival: usize,
    pub departure: usize,
    pub atoms: Vec<Atom>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn assemble(vars: &[BirkhoffVariable], n: usize) -> Vec<f64> {
    let mut x = vec![0.0; n];
    for v in vars {
        for (xt, y) in x[v.window.range()].iter_mut().zip(&v.image) {
            *xt += y;
        }
    }
    x
}

/// Oracle vertex of every block for the given gradient, with images.
fn oracle(agg: &AggregateFlexibility, grad: &[f64]) -> Vec<(Permutation, Vec<f64>)> {
    agg.blocks()
        .iter()
        .map(|b| {
            let perm = lmo_block(&b.nu, b.window, grad);
            let img = perm.apply(&b.nu.values).expect("oracle permutation matches block");
            (perm, img)
        })
        .collect()
}

/// Minimizes `obj` over the aggregate set.
///
/// Every block starts at its identity atom. Iteration stops once the
/// Frank–Wolfe gap `⟨∇f(x), x − s⟩` drops to `gap_tol · max(1, |f(x)|)` or
/// `max_iters` steps were taken; in the latter case the last iterate is
/// returned with `converged = false`. Linear objectives always take exactly
/// one full step onto the oracle vertex, which is optimal.
pub fn solve(agg: &AggregateFlexibility, obj: &Objective, opts: &SolveOptions) -> Result<SolverSolution> {
    let n = agg.n();
    obj.validate(n)?;
    if opts.gap_tol.is_nan() || opts.gap_tol < 0.0 {
        return Err(Error::SolverFailure(format!("invalid gap tolerance {}", opts.gap_tol)));
    }

    let mut vars: Vec<BirkhoffVariable> = agg.blocks().iter().map(|b| BirkhoffVariable::at_identity(&b.nu)).collect();
    let mut x = assemble(&vars, n);
    let mut iterations = 0;
    let mut prev_value = f64::INFINITY;

    let (fw_gap, converged) = loop {
        let grad = gradient(obj, &x)?;
        let targets = oracle(agg, &grad);
        let s = {
            let mut s = vec![0.0; n];
            for (b, (_, img)) in agg.blocks().iter().zip(&targets) {
                for (st, y) in s[b.window.range()].iter_mut().zip(img) {
                    *st += y;
                }
            }
            s
        };
        let dir: Vec<f64> = s.iter().zip(&x).map(|(s, x)| s - x).collect();
        let gap = -dot(&grad, &dir);
        let value = obj.value(&x);
        if !gap.is_finite() || !value.is_finite() {
            return Err(Error::SolverFailure(format!("non-finite iterate at iteration {iterations}")));
        }
        debug_assert!(
            opts.step_rule == StepRule::OpenLoop || value <= prev_value + 1e-12 * prev_value.abs().max(1.0),
            "exact line search increased the objective"
        );
        prev_value = value;

        let threshold = opts.gap_tol * value.abs().max(1.0);
        let must_step = obj.is_linear() && iterations == 0 && !vars.is_empty();
        if gap <= threshold && !must_step {
            break (gap.max(0.0), true);
        }
        if iterations >= opts.max_iters {
            break (gap.max(0.0), false);
        }

        if opts.method == Method::Pairwise && !obj.is_linear() {
            pairwise_sweep(agg, obj, &mut vars, &mut x);
        } else {
            let gamma = if obj.is_linear() {
                1.0
            } else {
                match opts.step_rule {
                    StepRule::Exact => {
                        let curv = obj.curvature(&dir);
                        if curv > 0.0 {
                            (gap / (2.0 * curv)).clamp(0.0, 1.0)
                        } else {
                            1.0
                        }
                    }
                    StepRule::OpenLoop => 2.0 / (iterations as f64 + 2.0),
                }
            };
            for (v, (perm, img)) in vars.iter_mut().zip(targets) {
                v.fw_step(gamma, perm, &img);
            }
            if (iterations + 1) % PRUNE_EVERY == 0 {
                vars.iter_mut().for_each(BirkhoffVariable::normalize);
            }
            x = assemble(&vars, n);
        }
        iterations += 1;
    };

    vars.iter_mut().for_each(BirkhoffVariable::normalize);
    debug_assert!(vars.iter().all(|v| (v.weight_sum() - 1.0).abs() < 1e-9));
    let objective_value = obj.value(&x);
    if !converged {
        log::warn!("solver stopped after {iterations} iterations with gap {fw_gap:e}");
    }
    Ok(SolverSolution {
        variables: vars,
        x_star: x,
        objective_value,
        fw_gap,
        iterations,
        converged,
    })
}

/// One pass of block-coordinate pairwise steps. The objective is separable,
/// so each block step only reads and writes `x` on its own window.
fn pairwise_sweep(agg: &AggregateFlexibility, obj: &Objective, vars: &mut [BirkhoffVariable], x: &mut [f64]) {
    for (b, var) in agg.blocks().iter().zip(vars.iter_mut()) {
        let range = b.window.range();
        let offset = range.start;
        let g: Vec<f64> = range.clone().map(|t| obj.partial(t, x[t])).collect();
        let toward = lmo_local(&g, b.nu.len());
        let toward_img = toward.apply(&b.nu.values).expect("oracle permutation matches block");

        var.normalize();
        let away_idx = var
            .atoms
            .iter()
            .map(|a| {
                let mut img = vec![0.0; b.nu.len()];
                a.perm.apply_scaled_into(&b.nu.values, 1.0, &mut img);
                dot(&g, &img)
            })
            .enumerate()
            .max_by(|(_, p), (_, q)| p.total_cmp(q))
            .map(|(i, _)| i)
            .expect("variable has at least one atom");
        if var.atoms[away_idx].perm == toward {
            continue;
        }
        let away_img = var.atoms[away_idx].perm.apply(&b.nu.values).expect("atom matches block");
        let dir: Vec<f64> = toward_img.iter().zip(&away_img).map(|(s, a)| s - a).collect();
        let descent = -dot(&g, &dir);
        if descent.is_nan() || descent <= 0.0 {
            continue;
        }
        let max_step = var.atoms[away_idx].weight;
        let curv: f64 = dir
            .iter()
            .enumerate()
            .map(|(j, &v)| obj.curvature_at(offset + j) * v * v)
            .sum();
        let gamma = if curv > 0.0 {
            (descent / (2.0 * curv)).min(max_step)
        } else {
            max_step
        };

        for (j, &v) in dir.iter().enumerate() {
            var.image[j] += gamma * v;
            x[offset + j] += gamma * v;
        }
        match var.index.get(&toward) {
            Some(&i) => var.atoms[i].weight += gamma,
            None => var.push_atom(gamma, toward),
        }
        if gamma >= max_step {
            var.atoms.swap_remove(away_idx);
            var.reindex();
        } else {
            var.atoms[away_idx].weight -= gamma;
        }
    }
}

/// Entries of the full extended formulation: `Σ (d − a)²` over every window
/// of an `n`-step horizon, `n(n+1)²(n+2)/12`.
pub fn decision_variable_count(n: usize) -> usize {
    (1..=n).map(|p| (n + 1 - p) * p * p).sum()
}
