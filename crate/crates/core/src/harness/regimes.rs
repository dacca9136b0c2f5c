//! Single-band wave packets away from Dirac points: ballistic transport at
//! the group velocity, and effective-mass spreading at band edges.

use std::time::Instant;

use num_complex::Complex64 as c64;
use serde::{Deserialize, Serialize};

use super::{fit_slope, Provenance};
use crate::bloch::BlochProblem;
use crate::dirac_env::{EnvelopeGrid, EnvelopePair, EnvelopePreset, EnvelopeSpectrum};
use crate::error::{Error, Result};
use crate::lattice::{add, norm, scale, Honeycomb, Vec2};
use crate::potential::FourierPotential;
use crate::schrodinger::{modulated_fibers, Field, FiberField, FiberModel, Supercell, SupercellBands};

/// Centre and covariance of `|ψ|²` on the periodic supercell.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    /// Fractional position along the supercell edges, unwrapped against the
    /// previous sample when one is given.
    pub frac: Vec2,
    pub centre: Vec2,
    pub covariance: [[f64; 2]; 2],
}

/// Circular mean along each edge, then second moments of the minimum-image
/// displacement. Accurate while the packet is small against the supercell.
pub fn density_moments(field: &Field, previous: Option<Vec2>) -> Moments {
    let cell = field.cell;
    let nn = cell.grid_len();
    let tau = 2.0 * std::f64::consts::PI;
    let phase: Vec<c64> = (0..nn).map(|j| c64::from_polar(1.0, tau * j as f64 / nn as f64)).collect();
    let (mut z1, mut z2, mut total) = (c64::new(0.0, 0.0), c64::new(0.0, 0.0), 0.0);
    let mut row = vec![0.0; nn];
    let mut col = vec![0.0; nn];
    for j1 in 0..nn {
        for j2 in 0..nn {
            let rho = field.data[j1 * nn + j2].norm_sqr();
            row[j1] += rho;
            col[j2] += rho;
        }
    }
    for j in 0..nn {
        z1 += row[j] * phase[j];
        z2 += col[j] * phase[j];
        total += row[j];
    }
    let mut frac = [z1.arg() / tau, z2.arg() / tau];
    if let Some(p) = previous {
        for a in 0..2 {
            frac[a] += (p[a] - frac[a]).round();
        }
    }
    let base = [frac[0].rem_euclid(1.0), frac[1].rem_euclid(1.0)];
    let (v1, v2) = (cell.lattice.direct.v1, cell.lattice.direct.v2);
    let nf = cell.n as f64;
    let mut cov = [[0.0; 2]; 2];
    for j1 in 0..nn {
        let d1 = wrap_half(j1 as f64 / nn as f64 - base[0]);
        for j2 in 0..nn {
            let rho = field.data[j1 * nn + j2].norm_sqr();
            if rho == 0.0 {
                continue;
            }
            let d2 = wrap_half(j2 as f64 / nn as f64 - base[1]);
            let x = add(scale(nf * d1, v1), scale(nf * d2, v2));
            for a in 0..2 {
                for b in 0..2 {
                    cov[a][b] += rho * x[a] * x[b];
                }
            }
        }
    }
    for r in cov.iter_mut() {
        for v in r.iter_mut() {
            *v /= total;
        }
    }
    let centre = add(scale(nf * frac[0], v1), scale(nf * frac[1], v2));
    Moments { frac, centre, covariance: cov }
}

fn wrap_half(x: f64) -> f64 {
    x - x.round()
}

/// Smallest multiple of 8 not below `x`, which keeps the grid FFT-friendly.
fn cells_for(x: f64) -> usize {
    ((x / 8.0).ceil() as usize).max(1) * 8
}

/// Band `band` at the supercell twist as complex plane-wave amplitudes.
fn twist_mode(model: &FiberModel, band: usize) -> Result<(Vec<c64>, f64)> {
    let e = model.eigen([0, 0])?;
    if band == 0 || band > e.values.len() {
        return Err(Error::Domain(format!("band {band} is not available")));
    }
    let c = (0..e.vectors.nrows()).map(|i| c64::new(e.vectors[(i, band - 1)], 0.0)).collect();
    Ok((c, e.values[band - 1]))
}

/// `δ α(δx) Φ_b(x; k̃)` projected onto band `b` in every fiber.
fn single_band_packet(
    model: &FiberModel,
    band: usize,
    delta: f64,
    env: &EnvelopeSpectrum,
) -> Result<(SupercellBands, FiberField, f64, f64)> {
    let cell = model.cell;
    let (c, mu0) = twist_mode(model, band)?;
    let (raw, dropped) = modulated_fibers(&cell, delta, &env.grid, &[&env.hat1], &cell.box_indices(), &[&c])?;
    if dropped > 1e-12 {
        return Err(Error::Domain(format!("{dropped:e} of the packet lies outside the grid")));
    }
    let bands = SupercellBands::for_field(model.clone(), &raw)?;
    let (proj, lost) = bands.project_bands(&raw, band - 1..band)?;
    Ok((bands, proj, lost, mu0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BallisticConfig {
    pub ktilde: Vec2,
    /// One-based.
    pub band: usize,
    pub delta: f64,
    /// Defaults to `1/δ`.
    pub t_final: Option<f64>,
    pub p: usize,
    /// Envelope width in slow units.
    pub width: f64,
    pub envelope_points: usize,
    pub samples: usize,
    /// Plane-wave cutoff for the finite-difference group velocity.
    pub cutoff: i32,
    /// Finite-difference step in units of `q`.
    pub fd_step: f64,
    pub contamination_limit: f64,
}

impl BallisticConfig {
    pub fn at(ktilde: Vec2, band: usize, delta: f64) -> Self {
        Self {
            ktilde,
            band,
            delta,
            t_final: None,
            p: 8,
            width: 1.0,
            envelope_points: 64,
            samples: 9,
            cutoff: crate::bloch::DEFAULT_CUTOFF,
            fd_step: 1e-4,
            contamination_limit: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BallisticReport {
    pub provenance: Provenance,
    pub ktilde: Vec2,
    pub band: usize,
    pub delta: f64,
    pub t_final: f64,
    pub mu: f64,
    pub group_velocity: Vec2,
    pub velocity_fit: Vec2,
    /// `|v_fit - ∇μ| / |∇μ|`.
    pub rel_deviation: f64,
    /// Centre displacement over the run relative to the initial width, for
    /// packets at critical points.
    pub drift_over_width: f64,
    /// `(t, x, y)` of the density centre.
    pub centres: Vec<[f64; 3]>,
    /// Root of the covariance trace per sample.
    pub widths: Vec<f64>,
    pub max_width_change: f64,
    /// Fraction of the raw packet outside the chosen band.
    pub contamination: f64,
    pub pass: bool,
    pub runtime_s: f64,
}

pub fn ballistic_experiment(
    lattice: &Honeycomb,
    potential: &FourierPotential,
    cfg: &BallisticConfig,
) -> Result<BallisticReport> {
    let start = Instant::now();
    let delta = cfg.delta;
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Config(format!("δ must lie in (0, 1), got {delta}")));
    }
    let t_final = cfg.t_final.unwrap_or(1.0 / delta);
    let problem = BlochProblem::with_cutoff(*lattice, potential.clone(), cfg.cutoff)?;
    let gv = problem.group_velocity(cfg.ktilde, cfg.band, cfg.fd_step * lattice.q())?;

    // room for ten envelope widths on either side of the centre
    let sin60 = (std::f64::consts::PI / 3.0).sin();
    let cells = cells_for(2.0 * 10.0 * cfg.width / (delta * lattice.a() * sin60)).max(cfg.envelope_points);
    let cell = Supercell::new(*lattice, cells, cfg.p, cfg.ktilde)?;
    let model = FiberModel::new(cell, potential.clone())?;
    let grid = EnvelopeGrid::new(*lattice, cfg.envelope_points, cells as f64 * delta * lattice.a())?;
    let env = EnvelopeSpectrum::periodized(grid, c64::new(0.0, 0.0), &EnvelopePreset::Gaussian { width: cfg.width });
    let (bands, packet, contamination, mu) = single_band_packet(&model, cfg.band, delta, &env)?;
    if contamination > cfg.contamination_limit {
        return Err(Error::Domain(format!(
            "packet has {:.2}% of its mass outside band {}",
            100.0 * contamination,
            cfg.band
        )));
    }

    let ns = cfg.samples.max(2);
    let mut centres = Vec::with_capacity(ns);
    let mut widths = Vec::with_capacity(ns);
    let mut prev = None;
    for i in 0..ns {
        let t = t_final * i as f64 / (ns - 1) as f64;
        let psi = Field::from_fibers(&bands.bloch_evolve(&packet, t)?);
        let m = density_moments(&psi, prev);
        prev = Some(m.frac);
        centres.push([t, m.centre[0], m.centre[1]]);
        widths.push((m.covariance[0][0] + m.covariance[1][1]).sqrt());
    }
    let ts: Vec<f64> = centres.iter().map(|c| c[0]).collect();
    let xs: Vec<f64> = centres.iter().map(|c| c[1]).collect();
    let ys: Vec<f64> = centres.iter().map(|c| c[2]).collect();
    let vfit = [fit_slope(&ts, &xs).unwrap_or(0.0), fit_slope(&ts, &ys).unwrap_or(0.0)];
    let v = gv.velocity;
    let speed = norm(v);
    let rel_deviation = if speed > 0.0 { norm([vfit[0] - v[0], vfit[1] - v[1]]) / speed } else { f64::INFINITY };
    let last = centres[ns - 1];
    let drift = norm([last[1] - centres[0][1], last[2] - centres[0][2]]);
    let max_width_change = widths.iter().map(|w| (w - widths[0]).abs() / widths[0]).fold(0.0, f64::max);
    let provenance = Provenance::new(potential.hash_hex(), cfg.cutoff)
        .with("cells", cells as f64)
        .with("p", cfg.p as f64)
        .with("envelope_points", cfg.envelope_points as f64)
        .with("fd_step", cfg.fd_step);
    Ok(BallisticReport {
        provenance,
        ktilde: cfg.ktilde,
        band: cfg.band,
        delta,
        t_final,
        mu,
        group_velocity: v,
        velocity_fit: vfit,
        rel_deviation,
        drift_over_width: drift / widths[0],
        centres,
        widths,
        max_width_change,
        contamination,
        pass: rel_deviation < 0.02,
        runtime_s: start.elapsed().as_secs_f64(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectiveMassConfig {
    pub ktilde: Vec2,
    pub band: usize,
    pub delta: f64,
    /// Final slow time `τ = δ² t`.
    pub tau_final: f64,
    pub p: usize,
    pub width: f64,
    pub envelope_points: usize,
    pub cutoff: i32,
    /// Finite-difference step in units of `q`.
    pub fd_step: f64,
    pub contamination_limit: f64,
}

impl EffectiveMassConfig {
    pub fn at(ktilde: Vec2, band: usize, delta: f64) -> Self {
        Self {
            ktilde,
            band,
            delta,
            tau_final: 1.0,
            p: 8,
            width: 1.0,
            envelope_points: 64,
            cutoff: crate::bloch::DEFAULT_CUTOFF,
            fd_step: 1e-3,
            contamination_limit: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectiveMassReport {
    pub provenance: Provenance,
    pub ktilde: Vec2,
    pub band: usize,
    pub delta: f64,
    pub t_final: f64,
    pub mu: f64,
    /// `½ D²μ` at the edge.
    pub a_eff: [[f64; 2]; 2],
    pub gradient: Vec2,
    /// `|A12| / tr A`.
    pub off_diagonal_ratio: f64,
    /// Covariance growth of `|ψ|²` in fast units.
    pub growth_simulated: [[f64; 2]; 2],
    /// Same growth from the homogenized envelope evolution.
    pub growth_homogenized: [[f64; 2]; 2],
    /// `2τ² A² / δ²` for the unit Gaussian.
    pub growth_predicted: [[f64; 2]; 2],
    /// Frobenius relative error of the simulated against the predicted growth.
    pub growth_rel_error: f64,
    /// `1 - λ_min/λ_max` of the final covariance.
    pub eccentricity: f64,
    /// `‖e^{iμt}ψ - δ α(δ·, τ) Φ‖ / ‖ψ‖` at the final time.
    pub field_deviation: f64,
    pub drift_over_width: f64,
    pub contamination: f64,
    pub pass: bool,
    pub runtime_s: f64,
}

fn mat_mul(a: [[f64; 2]; 2], b: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let mut o = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            o[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    o
}

fn sym_eigenvalues(m: [[f64; 2]; 2]) -> (f64, f64) {
    let tr = m[0][0] + m[1][1];
    let d = ((m[0][0] - m[1][1]).powi(2) + 4.0 * m[0][1] * m[1][0]).max(0.0).sqrt();
    (0.5 * (tr - d), 0.5 * (tr + d))
}

fn frobenius(m: [[f64; 2]; 2]) -> f64 {
    m.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
}

/// Covariance of `|α|²` on the envelope torus.
fn envelope_covariance(env: &EnvelopePair) -> [[f64; 2]; 2] {
    let g = env.grid;
    let c = g.centre();
    let mut cov = [[0.0; 2]; 2];
    let mut total = 0.0;
    for j1 in 0..g.n {
        for j2 in 0..g.n {
            let rho = env.alpha1[j1 * g.n + j2].norm_sqr();
            let d = g.wrap(g.point(j1, j2), c);
            total += rho;
            for a in 0..2 {
                for b in 0..2 {
                    cov[a][b] += rho * d[a] * d[b];
                }
            }
        }
    }
    cov.map(|r| r.map(|v| v / total))
}

pub fn effective_mass_experiment(
    lattice: &Honeycomb,
    potential: &FourierPotential,
    cfg: &EffectiveMassConfig,
) -> Result<EffectiveMassReport> {
    let start = Instant::now();
    let delta = cfg.delta;
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Config(format!("δ must lie in (0, 1), got {delta}")));
    }
    let problem = BlochProblem::with_cutoff(*lattice, potential.clone(), cfg.cutoff)?;
    let em = problem.effective_mass_tensor(cfg.ktilde, cfg.band, cfg.fd_step * lattice.q())?;
    if !em.critical {
        return Err(Error::Domain(format!(
            "k = {:?} is not a critical point of band {} (|∇μ| = {:e})",
            cfg.ktilde,
            cfg.band,
            norm(em.gradient)
        )));
    }
    let a = em.tensor;
    let (amin, amax) = sym_eigenvalues(a);
    if amin.abs() < 1e-8 * amax.abs().max(1.0) {
        return Err(Error::Domain(format!(
            "effective mass tensor is degenerate at k = {:?}; try another band edge",
            cfg.ktilde
        )));
    }
    let tau = cfg.tau_final;
    let t_final = tau / (delta * delta);

    // the spread envelope must still fit: eight standard deviations each side
    let w = cfg.width;
    let sigma_max = (0.5 * w * w * (1.0 + 4.0 * amax.abs().max(amin.abs()).powi(2) * tau * tau / w.powi(4))).sqrt();
    let sin60 = (std::f64::consts::PI / 3.0).sin();
    let cells = cells_for(2.0 * 8.0 * sigma_max / (delta * lattice.a() * sin60)).max(cfg.envelope_points);
    let cell = Supercell::new(*lattice, cells, cfg.p, cfg.ktilde)?;
    let model = FiberModel::new(cell, potential.clone())?;
    let grid = EnvelopeGrid::new(*lattice, cfg.envelope_points, cells as f64 * delta * lattice.a())?;
    let env0 = EnvelopeSpectrum::periodized(grid, c64::new(0.0, 0.0), &EnvelopePreset::Gaussian { width: w });
    let (bands, packet, contamination, mu) = single_band_packet(&model, cfg.band, delta, &env0)?;
    if contamination > cfg.contamination_limit {
        return Err(Error::Domain(format!(
            "packet has {:.2}% of its mass outside band {}",
            100.0 * contamination,
            cfg.band
        )));
    }

    // homogenized evolution: α̂(Ξ, τ) = e^{-iΞ·AΞ τ} α̂0(Ξ)
    let mut env_t = env0.clone();
    let ne = grid.n;
    for i in 0..ne {
        for j in 0..ne {
            let xi = grid.xi_bin(i, j);
            let q = xi[0] * (a[0][0] * xi[0] + a[0][1] * xi[1]) + xi[1] * (a[1][0] * xi[0] + a[1][1] * xi[1]);
            env_t.hat1[i * ne + j] *= c64::from_polar(1.0, -q * tau);
        }
    }
    let hom0 = envelope_covariance(&env0.to_fields());
    let hom1 = envelope_covariance(&env_t.to_fields());
    let s = 1.0 / (delta * delta);
    let growth_homogenized = [[(hom1[0][0] - hom0[0][0]) * s, (hom1[0][1] - hom0[0][1]) * s], [
        (hom1[1][0] - hom0[1][0]) * s,
        (hom1[1][1] - hom0[1][1]) * s,
    ]];
    let a2 = mat_mul(a, a);
    let growth_predicted = a2.map(|r| r.map(|v| 2.0 * tau * tau * v * s / (w * w)));

    let psi_t = bands.bloch_evolve(&packet, t_final)?;
    let m0 = density_moments(&Field::from_fibers(&packet), None);
    let m1 = density_moments(&Field::from_fibers(&psi_t), Some(m0.frac));
    let mut growth_simulated = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            growth_simulated[i][j] = m1.covariance[i][j] - m0.covariance[i][j];
        }
    }
    let mut diff = growth_simulated;
    for i in 0..2 {
        for j in 0..2 {
            diff[i][j] -= growth_predicted[i][j];
        }
    }
    let growth_rel_error = frobenius(diff) / frobenius(growth_predicted);
    let (cmin, cmax) = sym_eigenvalues(m1.covariance);
    let eccentricity = 1.0 - cmin / cmax;

    // fields: e^{iμt} ψ(t) against δ α(δx, τ) Φ_b(x; k̃)
    let (c, _) = twist_mode(&model, cfg.band)?;
    let (ansatz, _) = modulated_fibers(&cell, delta, &grid, &[&env_t.hat1], &cell.box_indices(), &[&c])?;
    let rotated = psi_t.scaled(c64::from_polar(1.0, mu * t_final));
    let field_deviation = rotated.difference(&ansatz).norm() / psi_t.norm();

    let drift = norm([m1.centre[0] - m0.centre[0], m1.centre[1] - m0.centre[1]]);
    let width0 = (m0.covariance[0][0] + m0.covariance[1][1]).sqrt();
    let off_diagonal_ratio = a[0][1].abs() / (a[0][0] + a[1][1]).abs();
    let provenance = Provenance::new(potential.hash_hex(), cfg.cutoff)
        .with("cells", cells as f64)
        .with("p", cfg.p as f64)
        .with("envelope_points", cfg.envelope_points as f64)
        .with("fd_step", cfg.fd_step);
    let pass = growth_rel_error < 0.05 && off_diagonal_ratio < 1e-6 && eccentricity < 0.02;
    Ok(EffectiveMassReport {
        provenance,
        ktilde: cfg.ktilde,
        band: cfg.band,
        delta,
        t_final,
        mu,
        a_eff: a,
        gradient: em.gradient,
        off_diagonal_ratio,
        growth_simulated,
        growth_homogenized,
        growth_predicted,
        growth_rel_error,
        eccentricity,
        field_deviation,
        drift_over_width: drift / width0,
        contamination,
        pass,
        runtime_s: start.elapsed().as_secs_f64(),
    })
}
