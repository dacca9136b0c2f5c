//! Comparison of the full Schrödinger evolution of a Dirac-point wave packet
//! with the effective Dirac envelope dynamics, over a list of scale
//! parameters `δ`.
//!
//! A packet built from envelopes on a periodic domain of side `L = nδa`
//! occupies only the supercell fibers `k = K + (r1 k1 + r2 k2)/n` labelled by
//! the envelope frequencies `r`. Evolution never couples fibers, so each
//! occupied fiber is diagonalized once, evaluated at all sample times, and
//! discarded. The supercell itself never has to be stored on a grid.

use std::time::Instant;

use num_complex::Complex64 as c64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fit_slope, Provenance};
use crate::bloch::{BlochProblem, Hamiltonian, PlaneWaveBasis};
use crate::dirac_env::{domain_side, EnvelopeGrid, EnvelopePreset, EnvelopeSpectrum};
use crate::dirac_point::DiracPointData;
use crate::error::{Error, Result};
use crate::fft::signed_frequency;
use crate::lattice::{add, dot, Honeycomb};
use crate::potential::FourierPotential;
use crate::schrodinger::{dirac_fibers, FiberEigen, FiberField};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingConfig {
    pub deltas: Vec<f64>,
    pub rho: f64,
    pub eps1: f64,
    pub preset: EnvelopePreset,
    /// Logarithmically spaced sample times per run (plus `t = 0`).
    pub samples: usize,
    /// Envelope grid points per side.
    pub envelope_points: usize,
    /// Upper bound on the simulated time; the uncapped horizon is recorded.
    pub time_cap: Option<f64>,
    /// Fibers are added in order of decreasing mass until the remainder is
    /// below this fraction of the total.
    pub mass_floor: f64,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        Self {
            deltas: vec![0.5, 0.25, 0.125],
            rho: 1.0,
            eps1: 1.0,
            preset: EnvelopePreset::default(),
            samples: 32,
            envelope_points: 64,
            time_cap: None,
            mass_floor: 1e-16,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorSample {
    pub t: f64,
    pub abs: f64,
    pub rel: f64,
    pub grad_rel: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub delta: f64,
    /// Simulated horizon.
    pub t_final: f64,
    /// `ρ δ^{-2+ε1}` before capping.
    pub t_horizon: f64,
    pub capped: bool,
    /// Supercell cells per side.
    pub cells: usize,
    pub envelope_side: f64,
    pub fibers: usize,
    /// Fraction of `‖ψ0‖²` in fibers that were not simulated.
    pub discarded_mass: f64,
    pub zero_time_error: f64,
    pub sup_abs: f64,
    pub sup_rel: f64,
    pub sup_grad_rel: f64,
    pub t_at_sup: f64,
    pub samples: Vec<ErrorSample>,
    pub runtime_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub kind: String,
    pub provenance: Provenance,
    pub mu_star: f64,
    pub lambda_sharp: c64,
    pub rho: f64,
    pub eps1: f64,
    pub preset: EnvelopePreset,
    /// Sorted by `δ` descending.
    pub rows: Vec<ScalingRow>,
    /// Fitted only with at least three rows.
    pub tau_star: Option<f64>,
    pub strictly_decreasing: bool,
    pub pass: bool,
}

/// `count` times spaced geometrically over `[t_final/1000, t_final]`.
pub fn sample_times(t_final: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![t_final],
        _ => (0..count)
            .map(|i| t_final * 10f64.powf(-3.0 * (1.0 - i as f64 / (count - 1) as f64)))
            .collect(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorNorms {
    pub abs: f64,
    /// Relative to `‖ψ0‖`.
    pub rel: f64,
    pub grad_abs: f64,
    /// Relative to `‖∇ψ0‖`.
    pub grad_rel: f64,
}

/// `η = e^{iμ* t} ψ(t) - δ Σ_j α_j(δ·, δt) Φ_j` and its norms.
pub fn effective_dynamics_error(
    psi_t: &FiberField,
    env_t: &EnvelopeSpectrum,
    dp: &DiracPointData,
    delta: f64,
    t: f64,
    psi0: &FiberField,
) -> Result<ErrorNorms> {
    if (env_t.lambda_sharp - dp.lambda_sharp).norm() > 1e-12 * (1.0 + dp.lambda_sharp.norm()) {
        return Err(Error::Config("envelope was propagated with a different λ♯".into()));
    }
    let (ansatz, _) = dirac_fibers(env_t, dp, delta, &psi_t.cell)?;
    let eta = if t == 0.0 {
        psi_t.difference(&ansatz)
    } else {
        psi_t.scaled(c64::from_polar(1.0, dp.mu_star * t)).difference(&ansatz)
    };
    let (n0, g0) = (psi0.norm(), psi0.gradient_norm());
    let (abs, grad_abs) = (eta.norm(), eta.gradient_norm());
    Ok(ErrorNorms {
        abs,
        rel: if n0 > 0.0 { abs / n0 } else { abs },
        grad_abs,
        grad_rel: if g0 > 0.0 { grad_abs / g0 } else { grad_abs },
    })
}

/// Run the study for every `δ` in the configuration.
pub fn scaling_study(
    lattice: &Honeycomb,
    potential: &FourierPotential,
    dp: &DiracPointData,
    cfg: &ScalingConfig,
) -> Result<SimulationReport> {
    if dp.potential_hash != potential.hash_hex() {
        return Err(Error::Config("Dirac point data was computed for a different potential".into()));
    }
    if cfg.deltas.is_empty() {
        return Err(Error::Config("scaling study needs at least one δ".into()));
    }
    let problem = BlochProblem::new(*lattice, potential.clone(), PlaneWaveBasis::from_indices(dp.indices.clone()))?;
    if problem.basis.indices() != dp.indices.as_slice() {
        return Err(Error::Config("Dirac point indices are not a sorted plane-wave basis".into()));
    }
    let mut deltas = cfg.deltas.clone();
    deltas.sort_by(|a, b| b.total_cmp(a));
    let rows = deltas
        .iter()
        .map(|&d| run_delta(&problem, dp, d, cfg))
        .collect::<Result<Vec<_>>>()?;

    let strictly_decreasing = rows.windows(2).all(|w| w[1].sup_rel < w[0].sup_rel);
    let tau_star = if rows.len() >= 3 {
        let x: Vec<f64> = rows.iter().map(|r| r.delta.ln()).collect();
        let y: Vec<f64> = rows.iter().map(|r| r.sup_rel.ln()).collect();
        fit_slope(&x, &y)
    } else {
        None
    };
    let zero_ok = rows.iter().all(|r| r.zero_time_error == 0.0);
    let pass = strictly_decreasing && zero_ok && tau_star.is_some_and(|t| t > 0.0);
    let provenance = Provenance::new(potential.hash_hex(), dp.cutoff)
        .with("envelope_points", cfg.envelope_points as f64)
        .with("samples", cfg.samples as f64)
        .with("mass_floor", cfg.mass_floor);
    Ok(SimulationReport {
        kind: "scaling".into(),
        provenance,
        mu_star: dp.mu_star,
        lambda_sharp: dp.lambda_sharp,
        rho: cfg.rho,
        eps1: cfg.eps1,
        preset: cfg.preset,
        rows,
        tau_star,
        strictly_decreasing,
        pass,
    })
}

fn run_delta(problem: &BlochProblem, dp: &DiracPointData, delta: f64, cfg: &ScalingConfig) -> Result<ScalingRow> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Config(format!("δ must lie in (0, 1), got {delta}")));
    }
    let start = Instant::now();
    let lattice = problem.lattice;
    let t_horizon = cfg.rho * delta.powf(-2.0 + cfg.eps1);
    let t_final = cfg.time_cap.map_or(t_horizon, |c| t_horizon.min(c));
    let min_side = domain_side(&cfg.preset, dp.lambda_abs(), delta * t_final);
    let ne = cfg.envelope_points;
    let cells = ((min_side / (delta * lattice.a())).ceil() as usize).max(ne);
    let side = cells as f64 * delta * lattice.a();
    let grid = EnvelopeGrid::new(lattice, ne, side)?;
    let env0 = EnvelopeSpectrum::periodized(grid, dp.lambda_sharp, &cfg.preset);
    let tail = env0.tail_fraction(0.8);
    if tail > 1e-10 {
        return Err(Error::Domain(format!(
            "envelope grid of {ne} points does not resolve the initial data (tail {tail:e})"
        )));
    }

    let mut times = vec![0.0];
    times.extend(sample_times(t_final, cfg.samples));
    let spectra: Vec<EnvelopeSpectrum> = times.iter().map(|&t| env0.propagate(delta * t)).collect();

    // occupied fibers, heaviest first
    let mass: Vec<f64> = (0..ne * ne).map(|i| env0.hat1[i].norm_sqr() + env0.hat2[i].norm_sqr()).collect();
    let total: f64 = mass.iter().sum();
    let mut order: Vec<usize> = (0..ne * ne).collect();
    order.sort_by(|&a, &b| mass[b].total_cmp(&mass[a]).then(a.cmp(&b)));
    let mut remaining = total;
    let mut chosen = Vec::new();
    for &i in &order {
        if remaining <= cfg.mass_floor * total {
            break;
        }
        chosen.push(i);
        remaining -= mass[i];
    }
    let discarded = (remaining / total).max(0.0);

    let amp = delta * cells as f64;
    let dual = lattice.dual;
    let kvec = dp.k;
    let per_fiber = chosen
        .par_iter()
        .map(|&idx| -> Result<Vec<[f64; 4]>> {
            let r = [signed_frequency(idx / ne, ne), signed_frequency(idx % ne, ne)];
            let k = add(kvec, dual.point(r[0] as f64 / cells as f64, r[1] as f64 / cells as f64));
            let h = match problem.hamiltonian(k) {
                Hamiltonian::Real(h) => h,
                Hamiltonian::Complex(_) => {
                    return Err(Error::Domain("scaling study needs a real, even potential".into()))
                }
            };
            let eig = FiberEigen::of(&h)?;
            let weight: Vec<f64> = problem
                .basis
                .wave_vectors(&dual, k)
                .into_iter()
                .map(|g| dot(g, g))
                .collect();
            let ansatz = |s: &EnvelopeSpectrum| -> Vec<c64> {
                let (a1, a2) = (s.hat1[idx], s.hat2[idx]);
                dp.phi1.iter().zip(&dp.phi2).map(|(c1, c2)| amp * (a1 * c1 + a2 * c2)).collect()
            };
            let beta0 = ansatz(&spectra[0]);
            let (n0, g0) = beta0
                .iter()
                .zip(&weight)
                .fold((0.0, 0.0), |(a, b), (z, w)| (a + z.norm_sqr(), b + w * z.norm_sqr()));
            Ok(times
                .iter()
                .zip(&spectra)
                .map(|(&t, s)| {
                    let psi = eig.evolve(&beta0, t, dp.mu_star);
                    let gamma = ansatz(s);
                    let (mut e, mut ge) = (0.0, 0.0);
                    for ((p, g), w) in psi.iter().zip(&gamma).zip(&weight) {
                        let d = (p - g).norm_sqr();
                        e += d;
                        ge += w * d;
                    }
                    [e, ge, n0, g0]
                })
                .collect())
        })
        .collect::<Result<Vec<_>>>()?;

    // ordered reduction keeps the result independent of thread scheduling
    let mut acc = vec![[0.0f64; 4]; times.len()];
    for f in &per_fiber {
        for (a, v) in acc.iter_mut().zip(f) {
            for c in 0..4 {
                a[c] += v[c];
            }
        }
    }
    let samples: Vec<ErrorSample> = times
        .iter()
        .zip(&acc)
        .map(|(&t, a)| ErrorSample {
            t,
            abs: a[0].sqrt(),
            rel: (a[0] / a[2]).sqrt(),
            grad_rel: (a[1] / a[3]).sqrt(),
        })
        .collect();
    let zero_time_error = samples[0].abs;
    let sup = samples
        .iter()
        .skip(1)
        .max_by(|a, b| a.rel.total_cmp(&b.rel))
        .cloned()
        .unwrap_or_else(|| samples[0].clone());
    let sup_grad_rel = samples.iter().map(|s| s.grad_rel).fold(0.0, f64::max);
    Ok(ScalingRow {
        delta,
        t_final,
        t_horizon,
        capped: t_final < t_horizon,
        cells,
        envelope_side: side,
        fibers: chosen.len(),
        discarded_mass: discarded,
        zero_time_error,
        sup_abs: sup.abs,
        sup_rel: sup.rel,
        sup_grad_rel,
        t_at_sup: sup.t,
        samples,
        runtime_s: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dirac_point;
    use crate::schrodinger::{build_wavepacket, FiberModel, Supercell, SupercellBands};

    #[test]
    fn sample_times_are_geometric() {
        let t = sample_times(8.0, 32);
        assert_eq!(t.len(), 32);
        assert!((t[0] - 8e-3).abs() < 1e-15);
        assert!((t[31] - 8.0).abs() < 1e-12);
        let r = t[1] / t[0];
        assert!(t.windows(2).all(|w| (w[1] / w[0] - r).abs() < 1e-12));
        assert_eq!(sample_times(2.0, 1), vec![2.0]);
    }

    #[test]
    fn streaming_errors_match_the_grid_pipeline() {
        // Same packet through the supercell grid: fiber eigenvectors differ only
        // in plane waves outside the grid box, which carry no weight here.
        let h = Honeycomb::new(1.0).unwrap();
        let v = FourierPotential::three_cosine(1.0).unwrap();
        let dp = dirac_point::detect(&h, &v, 6, dirac_point::DEFAULT_DEGENERACY_TOL).unwrap();
        let delta = 0.25;
        let cfg = ScalingConfig {
            deltas: vec![delta],
            envelope_points: 48,
            samples: 2,
            time_cap: Some(0.4),
            preset: EnvelopePreset::Gaussian { width: 0.5 },
            ..Default::default()
        };
        let report = scaling_study(&h, &v, &dp, &cfg).unwrap();
        assert!(report.tau_star.is_none());
        let row = &report.rows[0];
        assert_eq!(row.zero_time_error, 0.0);

        let cell = Supercell::at_vertex(h, row.cells, 14).unwrap();
        let grid = EnvelopeGrid::new(h, 48, row.envelope_side).unwrap();
        let env0 = EnvelopeSpectrum::periodized(grid, dp.lambda_sharp, &cfg.preset);
        let wp = build_wavepacket(&env0, &dp, delta, &cell).unwrap();
        let bands = SupercellBands::for_field(FiberModel::new(cell, v).unwrap(), &wp.fibers).unwrap();
        let t = row.t_final;
        let psi = bands.bloch_evolve(&wp.fibers, t).unwrap();
        let env_t = env0.propagate(delta * t);
        let e = effective_dynamics_error(&psi, &env_t, &dp, delta, t, &wp.fibers).unwrap();
        let last = row.samples.last().unwrap();
        assert!((e.rel - last.rel).abs() < 1e-6 * last.rel, "{} {}", e.rel, last.rel);
        assert!((e.grad_rel - last.grad_rel).abs() < 1e-6 * last.grad_rel);
        let e0 = effective_dynamics_error(&wp.fibers, &env0, &dp, delta, 0.0, &wp.fibers).unwrap();
        assert_eq!(e0.abs, 0.0);
    }

    #[test]
    fn mismatched_provenance_is_rejected() {
        let h = Honeycomb::new(1.0).unwrap();
        let v = FourierPotential::three_cosine(1.0).unwrap();
        let dp = dirac_point::detect(&h, &v, 6, dirac_point::DEFAULT_DEGENERACY_TOL).unwrap();
        let other = FourierPotential::three_cosine(2.0).unwrap();
        assert!(matches!(
            scaling_study(&h, &other, &dp, &ScalingConfig::default()),
            Err(Error::Config(_))
        ));
    }
}
