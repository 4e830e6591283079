//! Permutahedra `Π(ν)`: permutations in one-line notation, window rankings,
//! embedded vertices, support functions and same-window Minkowski sums.
//!
//! Convention used throughout the crate: applying `π` to `x` gives
//! `y[j] = x[π[j]]`, so position `j` receives the `π[j]`-th entry of `x`.
//! With `x` nonincreasing, the position holding the smallest `π` entry gets
//! the largest value.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fleet::{MonotoneVertex, TimeHorizon, Window};

/// A bijection of `{1..k}`, stored zero-based.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Permutation(Vec<u32>);

impl Permutation {
    pub fn identity(k: usize) -> Self {
        Permutation((0..k as u32).collect())
    }

    /// Parses one-line notation with entries `1..=k`.
    pub fn from_one_line(one_line: &[usize]) -> Result<Self> {
        let k = one_line.len();
        let mut seen = vec![false; k];
        for &e in one_line {
            if e == 0 || e > k || seen[e - 1] {
                return Err(Error::InvalidPermutation(one_line.to_vec()));
            }
            seen[e - 1] = true;
        }
        Ok(Permutation(one_line.iter().map(|&e| (e - 1) as u32).collect()))
    }

    /// Builds from zero-based images. Caller guarantees bijectivity.
    pub(crate) fn from_zero_based(images: Vec<u32>) -> Self {
        debug_assert!({
            let mut s = images.clone();
            s.sort_unstable();
            s.iter().enumerate().all(|(i, &e)| i as u32 == e)
        });
        Permutation(images)
    }

    /// One-line notation, entries `1..=k`.
    pub fn one_line(&self) -> Vec<usize> {
        self.0.iter().map(|&e| e as usize + 1).collect()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Zero-based image of zero-based position `j`.
    #[inline]
    pub fn get(&self, j: usize) -> usize {
        self.0[j] as usize
    }

    pub fn is_identity(&self) -> bool {
        self.0.iter().enumerate().all(|(i, &e)| i as u32 == e)
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0u32; self.0.len()];
        for (j, &e) in self.0.iter().enumerate() {
            inv[e as usize] = j as u32;
        }
        Permutation(inv)
    }

    /// `y[j] = x[π[j]]`.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.len() {
            return Err(Error::LengthMismatch {
                expected: self.len(),
                actual: x.len(),
            });
        }
        Ok(self.0.iter().map(|&e| x[e as usize]).collect())
    }

    /// Adds `weight · apply(x)` into `out` without allocating.
    #[inline]
    pub(crate) fn apply_scaled_into(&self, x: &[f64], weight: f64, out: &mut [f64]) {
        for (o, &e) in out.iter_mut().zip(&self.0) {
            *o += weight * x[e as usize];
        }
    }
}

impl Serialize for Permutation {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.one_line().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Permutation {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<usize>::deserialize(d)?;
        Permutation::from_one_line(&v).map_err(serde::de::Error::custom)
    }
}

/// Free-function form of [`Permutation::apply`].
pub fn apply(x: &[f64], pi: &Permutation) -> Result<Vec<f64>> {
    pi.apply(x)
}

/// Ranks the entries of `π` at positions `a..d` (1-based, `d` exclusive);
/// rank 1 is the smallest entry.
pub fn rank_within_window(pi: &Permutation, w: Window) -> Result<Permutation> {
    w.check(TimeHorizon { n: pi.len() })?;
    let slice = &pi.0[w.range()];
    let mut order: Vec<usize> = (0..slice.len()).collect();
    order.sort_unstable_by_key(|&j| slice[j]);
    let mut ranks = vec![0u32; slice.len()];
    for (rank, &j) in order.iter().enumerate() {
        ranks[j] = rank as u32;
    }
    Ok(Permutation(ranks))
}

/// `(0, …, 0, ν_{π^{a,d}}, 0, …, 0)` in `ℝⁿ`.
pub fn embedded_vertex(
    nu: &MonotoneVertex,
    w: Window,
    pi: &Permutation,
    horizon: TimeHorizon,
) -> Result<Vec<f64>> {
    if nu.len() != w.len() {
        return Err(Error::LengthMismatch {
            expected: w.len(),
            actual: nu.len(),
        });
    }
    if pi.len() != horizon.n {
        return Err(Error::LengthMismatch {
            expected: horizon.n,
            actual: pi.len(),
        });
    }
    let ranks = rank_within_window(pi, w)?;
    let mut out = vec![0.0; horizon.n];
    ranks.apply_scaled_into(&nu.values, 1.0, &mut out[w.range()]);
    Ok(out)
}

/// Support function `h(Π(ν), y) = max_π ⟨ν_π, y⟩`, evaluated by pairing the
/// sorted generator with `y` sorted nonincreasing.
pub fn support(nu: &MonotoneVertex, y: &[f64]) -> Result<f64> {
    if y.len() != nu.len() {
        return Err(Error::LengthMismatch {
            expected: nu.len(),
            actual: y.len(),
        });
    }
    let mut ys = y.to_vec();
    ys.sort_by(|a, b| b.total_cmp(a));
    Ok(nu.values.iter().zip(&ys).map(|(a, b)| a * b).sum())
}

/// `Π(ν₁) ⊕ Π(ν₂) = Π(ν₁ + ν₂)` for generators on the same window.
pub fn minkowski_add(nu1: &MonotoneVertex, nu2: &MonotoneVertex) -> Result<MonotoneVertex> {
    if nu1.window != nu2.window || nu1.len() != nu2.len() {
        return Err(Error::WindowMismatch {
            left: (nu1.window.a, nu1.window.d),
            right: (nu2.window.a, nu2.window.d),
        });
    }
    Ok(MonotoneVertex {
        window: nu1.window,
        values: nu1.values.iter().zip(&nu2.values).map(|(a, b)| a + b).collect(),
    })
}

/// Prefix sums of a generator: `out[k]` is the sum of its `k` largest entries.
pub fn top_sums(nu: &MonotoneVertex) -> Vec<f64> {
    let mut out = Vec::with_capacity(nu.len() + 1);
    let mut acc = 0.0;
    out.push(0.0);
    for &v in &nu.values {
        acc += v;
        out.push(acc);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn perm(v: &[usize]) -> Permutation {
        Permutation::from_one_line(v).unwrap()
    }

    fn mv(a: usize, values: &[f64]) -> MonotoneVertex {
        MonotoneVertex {
            window: Window { a, d: a + values.len() },
            values: values.to_vec(),
        }
    }

    fn all_perms(k: usize) -> Vec<Vec<usize>> {
        if k == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in all_perms(k - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, k);
                out.push(q);
            }
        }
        out
    }

    fn brute_support(nu: &[f64], y: &[f64]) -> f64 {
        all_perms(nu.len())
            .iter()
            .map(|p| {
                let img = perm(p).apply(nu).unwrap();
                img.iter().zip(y).map(|(a, b)| a * b).sum::<f64>()
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    #[test]
    fn one_line_validation() {
        assert!(Permutation::from_one_line(&[1, 1]).is_err());
        assert!(Permutation::from_one_line(&[0, 1]).is_err());
        assert!(Permutation::from_one_line(&[1, 3]).is_err());
        assert_eq!(perm(&[3, 1, 2]).one_line(), vec![3, 1, 2]);
    }

    #[test]
    fn apply_examples() {
        assert_eq!(
            perm(&[1, 3, 4, 2]).apply(&[9.0, 7.0, 4.0, 1.0]).unwrap(),
            vec![9.0, 4.0, 1.0, 7.0]
        );
        assert_eq!(perm(&[2, 1]).apply(&[5.0, 0.0]).unwrap(), vec![0.0, 5.0]);
        let x = [1.5, -2.0, 3.0];
        assert_eq!(Permutation::identity(3).apply(&x).unwrap(), x.to_vec());
        assert!(matches!(perm(&[1, 2]).apply(&x), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn apply_convention_matches_support_maximizer() {
        // For y strictly decreasing, the maximizer of ⟨ν_π, y⟩ over all
        // permutations must be the identity.
        let nu = [9.0, 7.0, 4.0, 1.0];
        let y = [4.0, 3.0, 2.0, 1.0];
        let best = all_perms(4)
            .into_iter()
            .max_by(|p, q| {
                let f = |p: &Vec<usize>| -> f64 {
                    perm(p).apply(&nu).unwrap().iter().zip(&y).map(|(a, b)| a * b).sum()
                };
                f(p).total_cmp(&f(q))
            })
            .unwrap();
        assert_eq!(best, vec![1, 2, 3, 4]);
    }

    #[test]
    fn rank_examples() {
        let pi = perm(&[3, 1, 4, 5, 2, 6]);
        assert_eq!(rank_within_window(&pi, Window { a: 2, d: 6 }).unwrap().one_line(), vec![1, 3, 4, 2]);
        assert_eq!(rank_within_window(&pi, Window { a: 2, d: 5 }).unwrap().one_line(), vec![1, 2, 3]);
        let id = Permutation::identity(6);
        assert!(rank_within_window(&id, Window { a: 3, d: 6 }).unwrap().is_identity());
        assert_eq!(rank_within_window(&pi, Window { a: 1, d: 7 }).unwrap(), pi);
        assert!(matches!(
            rank_within_window(&pi, Window { a: 3, d: 8 }),
            Err(Error::BadWindow { .. })
        ));
    }

    #[test]
    fn embedded_examples() {
        let n = TimeHorizon { n: 6 };
        let w = Window { a: 2, d: 6 };
        let nu = MonotoneVertex { window: w, values: vec![9.0, 7.0, 4.0, 1.0] };
        let pi = perm(&[3, 1, 4, 5, 2, 6]);
        assert_eq!(embedded_vertex(&nu, w, &pi, n).unwrap(), vec![0.0, 9.0, 4.0, 1.0, 7.0, 0.0]);

        let full = Window { a: 1, d: 7 };
        let nu = MonotoneVertex { window: full, values: vec![6.0, 5.0, 4.0, 3.0, 2.0, 1.0] };
        assert_eq!(embedded_vertex(&nu, full, &Permutation::identity(6), n).unwrap(), nu.values);

        let z = MonotoneVertex::zeros(w);
        assert_eq!(embedded_vertex(&z, w, &pi, n).unwrap(), vec![0.0; 6]);

        assert!(matches!(
            embedded_vertex(&z, Window { a: 1, d: 3 }, &pi, n),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn support_examples() {
        let nu = mv(1, &[2.0, 1.0, 0.0]);
        // brute force over all 6 permutations gives 8
        assert_eq!(brute_support(&nu.values, &[3.0, 2.0, 1.0]), 8.0);
        assert_eq!(support(&nu, &[3.0, 2.0, 1.0]).unwrap(), 8.0);
        assert_eq!(support(&nu, &[1.0, 1.0, 1.0]).unwrap(), 3.0);
        assert_eq!(support(&nu, &[0.0; 3]).unwrap(), 0.0);
        assert!(support(&nu, &[1.0]).is_err());
    }

    #[test]
    fn minkowski_examples() {
        let s = minkowski_add(&mv(1, &[2.0, 1.0, 0.0]), &mv(1, &[3.0, 0.0, 0.0])).unwrap();
        assert_eq!(s.values, vec![5.0, 1.0, 0.0]);
        let nu = mv(1, &[4.0, 2.0]);
        assert_eq!(minkowski_add(&nu, &MonotoneVertex::zeros(nu.window)).unwrap(), nu);
        assert_eq!(minkowski_add(&mv(1, &[1.0, 1.0]), &mv(1, &[1.0, 0.0])).unwrap().values, vec![2.0, 1.0]);
        assert!(matches!(
            minkowski_add(&mv(1, &[1.0, 1.0]), &mv(2, &[1.0, 0.0])),
            Err(Error::WindowMismatch { .. })
        ));
    }

    fn arb_perm(k: usize) -> impl Strategy<Value = Permutation> {
        Just((1..=k).collect::<Vec<_>>())
            .prop_shuffle()
            .prop_map(|v| Permutation::from_one_line(&v).unwrap())
    }

    fn arb_nu(k: usize) -> impl Strategy<Value = MonotoneVertex> {
        prop::collection::vec(0.0..10.0f64, k)
            .prop_map(move |v| MonotoneVertex::from_unsorted(Window { a: 1, d: k + 1 }, v).unwrap())
    }

    proptest! {
        #[test]
        fn support_matches_exhaustive(
            (nu, y) in (1usize..=6).prop_flat_map(|k| (arb_nu(k), prop::collection::vec(-5.0..5.0f64, k)))
        ) {
            let fast = support(&nu, &y).unwrap();
            let slow = brute_support(&nu.values, &y);
            prop_assert!((fast - slow).abs() <= 1e-9 * (1.0 + slow.abs()));
        }

        #[test]
        fn support_is_minkowski_additive(
            (a, b, y) in (1usize..=12).prop_flat_map(|k| (arb_nu(k), arb_nu(k), prop::collection::vec(-5.0..5.0f64, k)))
        ) {
            let sum = minkowski_add(&a, &b).unwrap();
            prop_assert!(sum.is_monotone());
            let lhs = support(&sum, &y).unwrap();
            let rhs = support(&a, &y).unwrap() + support(&b, &y).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-10);
        }

        #[test]
        fn apply_inverse_roundtrip(
            (pi, x) in (1usize..=10).prop_flat_map(|k| (arb_perm(k), prop::collection::vec(-5.0..5.0f64, k)))
        ) {
            let y = pi.apply(&x).unwrap();
            prop_assert_eq!(pi.inverse().apply(&y).unwrap(), x);
        }

        #[test]
        fn embedded_vertex_preserves_energy(
            (pi, a, len, vals) in (2usize..=9).prop_flat_map(|n| (arb_perm(n), 1..=n)).prop_flat_map(|(pi, a)| {
                let n = pi.len();
                (Just(pi), Just(a), 1..=(n + 1 - a), prop::collection::vec(0.0..5.0f64, n))
            })
        ) {
            let n = pi.len();
            let w = Window { a, d: a + len };
            let nu = MonotoneVertex::from_unsorted(w, vals[..len].to_vec()).unwrap();
            let v = embedded_vertex(&nu, w, &pi, TimeHorizon { n }).unwrap();
            let total: f64 = v.iter().sum();
            prop_assert!((total - nu.sum()).abs() <= 1e-12 * (1.0 + nu.sum()));
            for (t, &x) in v.iter().enumerate() {
                if !w.contains(t + 1) {
                    prop_assert_eq!(x, 0.0);
                }
            }
        }

        #[test]
        fn rank_is_a_permutation(
            (pi, a, d) in (1usize..=9).prop_flat_map(|n| (arb_perm(n), 1..=n)).prop_flat_map(|(pi, a)| {
                let n = pi.len();
                (Just(pi), Just(a), (a + 1)..=(n + 1))
            })
        ) {
            let r = rank_within_window(&pi, Window { a, d }).unwrap();
            prop_assert!(Permutation::from_one_line(&r.one_line()).is_ok());
            prop_assert_eq!(r.len(), d - a);
        }
    }
}
