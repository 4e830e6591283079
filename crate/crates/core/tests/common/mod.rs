#![allow(dead_code)]

use flexagg::fleet::{EvRequest, TimeHorizon};
use flexagg::permutahedron::Permutation;
use flexagg::AggregateFlexibility;
use rand::seq::SliceRandom;
use rand::Rng;

/// Random valid request on an `n`-step horizon. Energies include the
/// degenerate ends `0` and `p·m` as well as exact multiples of `m`.
pub fn random_request<R: Rng>(rng: &mut R, id: usize, n: usize) -> EvRequest {
    let a = rng.gen_range(1..=n);
    let d = rng.gen_range(a + 1..=n + 1);
    let m = rng.gen_range(0.5..3.0);
    let p = (d - a) as f64;
    let energy = match rng.gen_range(0..10) {
        0 => 0.0,
        1 => p * m,
        2 => rng.gen_range(0..=(d - a)) as f64 * m,
        _ => rng.gen_range(0.0..p * m),
    };
    EvRequest::new(format!("ev{id}"), energy, a, d, m)
}

/// Small fleet with `K ≤ 4`, `n ≤ 4` and positive total energy.
pub fn small_fleet<R: Rng>(rng: &mut R) -> (Vec<EvRequest>, TimeHorizon) {
    loop {
        let n = rng.gen_range(1..=4);
        let k = rng.gen_range(1..=4);
        let fleet: Vec<EvRequest> = (0..k).map(|i| random_request(rng, i + 1, n)).collect();
        if fleet.iter().map(|e| e.energy).sum::<f64>() > 0.1 {
            return (fleet, TimeHorizon::new(n).unwrap());
        }
    }
}

pub fn random_perm<R: Rng>(rng: &mut R, k: usize) -> Permutation {
    let mut v: Vec<usize> = (1..=k).collect();
    v.shuffle(rng);
    Permutation::from_one_line(&v).unwrap()
}

pub fn random_direction<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Random convex combination of `count` vertices `μ_π`.
pub fn random_member<R: Rng>(rng: &mut R, agg: &AggregateFlexibility, count: usize) -> Vec<f64> {
    let n = agg.n();
    let weights: Vec<f64> = (0..count).map(|_| rng.gen_range(0.05..1.0)).collect();
    let total: f64 = weights.iter().sum();
    let mut x = vec![0.0; n];
    for w in weights {
        let mu = agg.vertex_mu(&random_perm(rng, n)).unwrap();
        for (xt, m) in x.iter_mut().zip(mu) {
            *xt += w / total * m;
        }
    }
    x
}

/// Random point of the aggregate built block by block from a few random
/// permutation atoms each. Generically interior.
pub fn random_atom_point<R: Rng>(rng: &mut R, agg: &AggregateFlexibility, atoms: usize) -> Vec<f64> {
    let mut g = vec![0.0; agg.n()];
    for b in agg.blocks() {
        let p = b.window.len();
        let weights: Vec<f64> = (0..atoms).map(|_| rng.gen_range(0.05..1.0)).collect();
        let total: f64 = weights.iter().sum();
        for w in weights {
            let img = random_perm(rng, p).apply(&b.nu.values).unwrap();
            for (gt, v) in g[b.window.range()].iter_mut().zip(img) {
                *gt += w / total * v;
            }
        }
    }
    g
}
