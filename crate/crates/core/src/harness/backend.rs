//! Split-step evolution checked against exact Bloch evolution on a small supercell.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::Provenance;
use crate::dirac_env::{EnvelopeGrid, EnvelopePreset, EnvelopeSpectrum};
use crate::dirac_point::DiracPointData;
use crate::error::{Error, Result};
use crate::lattice::Honeycomb;
use crate::potential::FourierPotential;
use crate::schrodinger::{build_wavepacket, split_step_evolve, Field, FiberModel, Supercell, SupercellBands};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    /// Cells per side.
    pub n: usize,
    /// Grid points per cell side.
    pub p: usize,
    pub delta: f64,
    pub t: f64,
    /// Initial step; halved until the tolerance is met or `max_halvings` is reached.
    pub dt: f64,
    pub tolerance: f64,
    pub max_halvings: usize,
    /// Also run with `dt/2` after the tolerance is met to measure the order.
    pub measure_order: bool,
    pub preset: EnvelopePreset,
}

impl BackendConfig {
    /// Step `5e-3 (a/q)²` scaled to the lattice.
    pub fn default_dt(lattice: &Honeycomb) -> f64 {
        5e-3 / (lattice.q() * lattice.q())
    }

    pub fn for_lattice(lattice: &Honeycomb) -> Self {
        Self {
            n: 8,
            p: 16,
            delta: 0.5,
            t: 10.0,
            dt: Self::default_dt(lattice),
            tolerance: 1e-5,
            max_halvings: 3,
            measure_order: false,
            preset: EnvelopePreset::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRun {
    pub dt: f64,
    pub steps: usize,
    pub rel_diff: f64,
    pub norm_drift: f64,
    pub max_phase_per_step: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackendComparison {
    pub provenance: Provenance,
    pub runs: Vec<StepRun>,
    /// Relative difference at the accepted step.
    pub rel_diff: f64,
    /// Error ratio between the last two runs when the order was measured.
    pub halving_ratio: Option<f64>,
    pub bloch_norm_drift: f64,
    pub pass: bool,
    pub runtime_s: f64,
}

pub fn backend_equivalence(
    lattice: &Honeycomb,
    potential: &FourierPotential,
    dp: &DiracPointData,
    cfg: &BackendConfig,
) -> Result<BackendComparison> {
    let start = Instant::now();
    let cell = Supercell::at_vertex(*lattice, cfg.n, cfg.p)?;
    let grid = EnvelopeGrid::new(*lattice, cfg.n, cfg.n as f64 * cfg.delta * lattice.a())?;
    let env = EnvelopeSpectrum::periodized(grid, dp.lambda_sharp, &cfg.preset);
    let wp = build_wavepacket(&env, dp, cfg.delta, &cell)?;
    let model = FiberModel::new(cell, potential.clone())?;
    let bands = SupercellBands::for_field(model.clone(), &wp.fibers)?;
    let exact_fibers = bands.bloch_evolve(&wp.fibers, cfg.t)?;
    let n0 = wp.fibers.norm();
    let bloch_norm_drift = (exact_fibers.norm() - n0).abs() / n0;
    let exact = Field::from_fibers(&exact_fibers);
    let psi0 = wp.field();

    let mut runs = Vec::new();
    let mut dt = cfg.dt;
    let mut accepted = None;
    for _ in 0..=cfg.max_halvings {
        let (out, rep) = split_step_evolve(&psi0, &model, cfg.t, dt)?;
        let rel = out.distance(&exact) / exact.norm();
        runs.push(StepRun {
            dt: rep.dt,
            steps: rep.steps,
            rel_diff: rel,
            norm_drift: rep.norm_drift,
            max_phase_per_step: rep.max_phase_per_step,
        });
        if rel < cfg.tolerance {
            accepted = Some(runs.len() - 1);
            break;
        }
        dt *= 0.5;
    }
    let mut halving_ratio = None;
    if cfg.measure_order {
        if runs.len() < 2 {
            let (out, rep) = split_step_evolve(&psi0, &model, cfg.t, 0.5 * dt)?;
            let rel = out.distance(&exact) / exact.norm();
            runs.push(StepRun {
                dt: rep.dt,
                steps: rep.steps,
                rel_diff: rel,
                norm_drift: rep.norm_drift,
                max_phase_per_step: rep.max_phase_per_step,
            });
        }
        let k = runs.len();
        halving_ratio = Some(runs[k - 2].rel_diff / runs[k - 1].rel_diff);
    }
    let rel_diff = match accepted {
        Some(i) => runs[i].rel_diff,
        None => runs.last().map(|r| r.rel_diff).ok_or_else(|| Error::Numerical("no split-step run".into()))?,
    };
    let provenance = Provenance::new(potential.hash_hex(), dp.cutoff)
        .with("n", cfg.n as f64)
        .with("p", cfg.p as f64)
        .with("delta", cfg.delta)
        .with("t", cfg.t)
        .with("dt", runs[accepted.unwrap_or(runs.len() - 1)].dt);
    Ok(BackendComparison {
        provenance,
        runs,
        rel_diff,
        halving_ratio,
        bloch_norm_drift,
        pass: accepted.is_some(),
        runtime_s: start.elapsed().as_secs_f64(),
    })
}
