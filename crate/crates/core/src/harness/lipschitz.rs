//! Empirical Lipschitz quotients of the band functions,
//! `|μ_b(k1) - μ_b(k2)| / ((|μ_b(k1)| + 1)|k1 - k2|)`, over random near pairs.

use std::time::Instant;

use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Provenance;
use crate::bloch::{davidson_lowest, BlochProblem, Hamiltonian, PlaneWaveBasis};
use crate::error::{Error, Result};
use crate::lattice::{add, dot, norm, sub, Honeycomb, Vec2};
use crate::potential::FourierPotential;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzConfig {
    pub npairs: usize,
    pub bands: usize,
    /// Largest `|k1 - k2|` in units of `q`.
    pub radius: f64,
    /// Smallest `|k1 - k2|`, absolute.
    pub floor: f64,
    pub seed: u64,
    /// Points per side of the coarse grid used to warm-start the eigensolver.
    pub coarse: usize,
    /// Residual tolerance of the iterative eigensolver.
    pub tol: f64,
}

impl Default for LipschitzConfig {
    fn default() -> Self {
        Self { npairs: 10_000, bands: 6, radius: 0.01, floor: 1e-8, seed: 1, coarse: 16, tol: 1e-9 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzReport {
    pub provenance: Provenance,
    pub npairs: usize,
    pub bands: usize,
    /// Maximum quotient per band.
    pub per_band_max: Vec<f64>,
    pub max_quotient: f64,
    /// Maximum over the first half of the pairs.
    pub max_first_half: f64,
    /// `(k1, k2, band)` of the largest quotient.
    pub worst: (Vec2, Vec2, usize),
    pub finite: bool,
    pub runtime_s: f64,
}

/// Deterministic pair list: `k1` uniform in the K-centred zone, `k2 - k1`
/// uniform in the disk of radius `radius·q` with `|k2 - k1| >= floor`.
pub fn sample_pairs(lattice: &Honeycomb, cfg: &LipschitzConfig) -> Vec<(Vec2, Vec2)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let rmax = cfg.radius * lattice.q();
    let dual = lattice.dual;
    (0..cfg.npairs)
        .map(|_| {
            let s: [f64; 2] = [rng.gen(), rng.gen()];
            let k1 = dual.reduce_to_bz(dual.point(s[0], s[1])).k;
            loop {
                let r = rmax * rng.gen::<f64>().sqrt();
                let th = 2.0 * std::f64::consts::PI * rng.gen::<f64>();
                if r >= cfg.floor {
                    return (k1, add(k1, [r * th.cos(), r * th.sin()]));
                }
            }
        })
        .collect()
}

pub fn quotient(mu1: f64, mu2: f64, k1: Vec2, k2: Vec2) -> f64 {
    (mu1 - mu2).abs() / ((mu1.abs() + 1.0) * norm(sub(k1, k2)))
}

struct Coarse {
    points: Vec<Vec2>,
    vectors: Vec<Vec<Vec<f64>>>,
}

fn real_hamiltonian(problem: &BlochProblem, k: Vec2) -> Result<Mat<f64>> {
    match problem.hamiltonian(k) {
        Hamiltonian::Real(h) => Ok(h),
        Hamiltonian::Complex(_) => Err(Error::Domain("Lipschitz sampling needs a real, even potential".into())),
    }
}

fn coarse_grid(problem: &BlochProblem, g: usize, nvec: usize) -> Result<Coarse> {
    let dual = problem.lattice.dual;
    let points: Vec<Vec2> = (0..g * g)
        .map(|i| dual.reduce_to_bz(dual.point((i / g) as f64 / g as f64, (i % g) as f64 / g as f64)).k)
        .collect();
    let vectors = points
        .par_iter()
        .map(|&k| {
            let pairs = crate::bloch::solve_bands_real(&real_hamiltonian(problem, k)?, nvec)?;
            Ok(pairs.into_iter().map(|(_, v)| v).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Coarse { points, vectors })
}

pub fn lipschitz_check(
    lattice: &Honeycomb,
    potential: &FourierPotential,
    cutoff: i32,
    cfg: &LipschitzConfig,
) -> Result<LipschitzReport> {
    let start = Instant::now();
    let problem = BlochProblem::new(*lattice, potential.clone(), PlaneWaveBasis::square(cutoff))?;
    let nb = cfg.bands;
    if nb == 0 || nb + 2 > problem.dim() {
        return Err(Error::Config(format!("cannot resolve {nb} bands at cutoff {cutoff}")));
    }
    let coarse = coarse_grid(&problem, cfg.coarse.max(2), nb + 2)?;
    let pairs = sample_pairs(lattice, cfg);
    let quotients = pairs
        .par_iter()
        .map(|&(k1, k2)| -> Result<Vec<f64>> {
            let near = coarse
                .points
                .iter()
                .enumerate()
                .min_by(|a, b| {
                    let (da, db) = (sub(*a.1, k1), sub(*b.1, k1));
                    dot(da, da).total_cmp(&dot(db, db))
                })
                .map(|(i, _)| i)
                .unwrap();
            let (w1, v1) = davidson_lowest(&real_hamiltonian(&problem, k1)?, nb, Some(&coarse.vectors[near]), cfg.tol, 200)?;
            let (w2, _) = davidson_lowest(&real_hamiltonian(&problem, k2)?, nb, Some(&v1), cfg.tol, 200)?;
            Ok((0..nb).map(|b| quotient(w1[b], w2[b], k1, k2)).collect())
        })
        .collect::<Result<Vec<_>>>()?;

    let mut per_band_max = vec![0.0f64; nb];
    let mut max_first_half = 0.0f64;
    let mut worst = (pairs[0].0, pairs[0].1, 1);
    let mut best = -1.0;
    for (i, q) in quotients.iter().enumerate() {
        for (b, &v) in q.iter().enumerate() {
            per_band_max[b] = per_band_max[b].max(v);
            if i < cfg.npairs / 2 {
                max_first_half = max_first_half.max(v);
            }
            if v > best {
                best = v;
                worst = (pairs[i].0, pairs[i].1, b + 1);
            }
        }
    }
    let max_quotient = per_band_max.iter().cloned().fold(0.0, f64::max);
    let provenance = Provenance::new(potential.hash_hex(), cutoff)
        .with("radius", cfg.radius)
        .with("floor", cfg.floor)
        .with("coarse", cfg.coarse as f64)
        .with("tol", cfg.tol)
        .with("seed", cfg.seed as f64);
    Ok(LipschitzReport {
        provenance,
        npairs: cfg.npairs,
        bands: nb,
        per_band_max,
        max_quotient,
        max_first_half,
        worst,
        finite: max_quotient.is_finite(),
        runtime_s: start.elapsed().as_secs_f64(),
    })
}

/// Largest difference between the quotients of the free operator computed by
/// the band solver and in closed form from sorted `|k + m·k|²`.
pub fn free_quotient_check(lattice: &Honeycomb, cfg: &LipschitzConfig) -> Result<f64> {
    let problem = BlochProblem::new(*lattice, FourierPotential::zero(), PlaneWaveBasis::square(4))?;
    let pairs = sample_pairs(lattice, cfg);
    let dual = lattice.dual;
    let closed = |k: Vec2| -> Vec<f64> {
        let mut e: Vec<f64> = PlaneWaveBasis::square(6)
            .indices()
            .iter()
            .map(|m| {
                let g = add(k, dual.vector(*m));
                dot(g, g)
            })
            .collect();
        e.sort_by(f64::total_cmp);
        e
    };
    let mut worst = 0.0f64;
    for &(k1, k2) in &pairs {
        let w1 = problem.eigenvalues(k1, cfg.bands)?;
        let w2 = problem.eigenvalues(k2, cfg.bands)?;
        let (c1, c2) = (closed(k1), closed(k2));
        for b in 0..cfg.bands {
            let d = (quotient(w1[b], w2[b], k1, k2) - quotient(c1[b], c2[b], k1, k2)).abs();
            worst = worst.max(d);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairs_are_deterministic_and_within_bounds() {
        let h = Honeycomb::new(1.0).unwrap();
        let cfg = LipschitzConfig { npairs: 200, ..Default::default() };
        let a = sample_pairs(&h, &cfg);
        assert_eq!(a, sample_pairs(&h, &cfg));
        for (k1, k2) in &a {
            assert!(h.dual.in_bz(*k1, 1e-12));
            let d = norm(sub(*k1, *k2));
            assert!(d >= cfg.floor && d <= cfg.radius * h.q());
        }
    }

    #[test]
    fn free_quotients_match_closed_form() {
        let h = Honeycomb::new(1.0).unwrap();
        let cfg = LipschitzConfig { npairs: 100, ..Default::default() };
        assert!(free_quotient_check(&h, &cfg).unwrap() < 1e-10);
    }

    #[test]
    fn iterative_quotients_match_dense_ones() {
        let h = Honeycomb::new(1.0).unwrap();
        let v = FourierPotential::three_cosine(1.0).unwrap();
        let cfg = LipschitzConfig { npairs: 20, bands: 4, coarse: 6, ..Default::default() };
        let r = lipschitz_check(&h, &v, 5, &cfg).unwrap();
        let problem = BlochProblem::with_cutoff(h, v, 5).unwrap();
        let mut dense_max = 0.0f64;
        for (k1, k2) in sample_pairs(&h, &cfg) {
            let w1 = problem.eigenvalues(k1, 4).unwrap();
            let w2 = problem.eigenvalues(k2, 4).unwrap();
            for b in 0..4 {
                dense_max = dense_max.max(quotient(w1[b], w2[b], k1, k2));
            }
        }
        assert!((r.max_quotient - dense_max).abs() < 1e-6 * dense_max, "{} {}", r.max_quotient, dense_max);
        assert!(r.finite);
    }
}
