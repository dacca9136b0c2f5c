//! Inversion and rotation symmetry of the bands, and Plancherel for the
//! supercell Bloch transform.

use std::collections::BTreeMap;
use std::time::Instant;

use num_complex::Complex64 as c64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Provenance;
use crate::bloch::BlochProblem;
use crate::error::{Error, Result};
use crate::lattice::{rotate_r, rotate_r_inv, scale, Honeycomb, Vec2};
use crate::potential::FourierPotential;
use crate::schrodinger::{BlochCoefficients, FiberField, FiberModel, Supercell, SupercellBands};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymmetryConfig {
    /// Points per side of the k grid over the zone.
    pub grid: usize,
    pub bands: usize,
    pub cutoff: i32,
    /// Supercell used for the Plancherel check.
    pub cells: usize,
    pub points_per_cell: usize,
    pub seed: u64,
    pub band_tol: f64,
    pub plancherel_tol: f64,
}

impl Default for SymmetryConfig {
    fn default() -> Self {
        Self {
            grid: 30,
            bands: 6,
            cutoff: 8,
            cells: 4,
            points_per_cell: 8,
            seed: 7,
            band_tol: 1e-10,
            plancherel_tol: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymmetrySuiteReport {
    pub provenance: Provenance,
    pub kpoints: usize,
    /// `max |μ_b(k) - μ_b(-k)|`.
    pub max_inversion: f64,
    /// `max |μ_b(k) - μ_b(Rk)|` over both rotation directions.
    pub max_rotation: f64,
    /// Residual for a random field expanded in every band.
    pub plancherel_full: f64,
    /// Residual for a random combination of the lowest `bands` bands.
    pub plancherel_band_limited: f64,
    pub pass: bool,
    pub runtime_s: f64,
}

fn random_c64(rng: &mut ChaCha8Rng) -> c64 {
    c64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
}

pub fn symmetry_suite(lattice: &Honeycomb, potential: &FourierPotential, cfg: &SymmetryConfig) -> Result<SymmetrySuiteReport> {
    let start = Instant::now();
    if cfg.grid == 0 || cfg.bands == 0 {
        return Err(Error::Config("symmetry grid and band count must be positive".into()));
    }
    let problem = BlochProblem::with_cutoff(*lattice, potential.clone(), cfg.cutoff)?;
    let dual = lattice.dual;
    let g = cfg.grid;
    let kpoints: Vec<Vec2> = (0..g * g)
        .map(|i| dual.reduce_to_bz(dual.point((i / g) as f64 / g as f64, (i % g) as f64 / g as f64)).k)
        .collect();
    let nb = cfg.bands;
    let errs = kpoints
        .par_iter()
        .map(|&k| -> Result<(f64, f64)> {
            let mu = problem.eigenvalues(k, nb)?;
            let diff = |other: Vec2| -> Result<f64> {
                let w = problem.eigenvalues(other, nb)?;
                Ok(mu.iter().zip(&w).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            };
            let inv = diff(scale(-1.0, k))?;
            let rot = diff(rotate_r(k))?.max(diff(rotate_r_inv(k))?);
            Ok((inv, rot))
        })
        .collect::<Result<Vec<_>>>()?;
    let max_inversion = errs.iter().map(|e| e.0).fold(0.0, f64::max);
    let max_rotation = errs.iter().map(|e| e.1).fold(0.0, f64::max);

    let cell = Supercell::at_vertex(*lattice, cfg.cells, cfg.points_per_cell)?;
    let model = FiberModel::new(cell, potential.clone())?;
    let bands = SupercellBands::all(model)?;
    let dim = bands.model.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut fibers = BTreeMap::new();
    for f in bands.fibers.keys() {
        fibers.insert(*f, (0..dim).map(|_| random_c64(&mut rng)).collect::<Vec<_>>());
    }
    let field = FiberField { cell, fibers };
    let plancherel_full = bands.bloch_transform(&field, dim)?.plancherel_residual;

    let nlim = nb.min(dim);
    let mut coeffs = BTreeMap::new();
    for f in bands.fibers.keys() {
        coeffs.insert(*f, (0..nlim).map(|_| random_c64(&mut rng)).collect::<Vec<_>>());
    }
    let limited = bands.synthesize(&BlochCoefficients { cell, nbands: nlim, coeffs, plancherel_residual: 0.0 })?;
    let plancherel_band_limited = bands.bloch_transform(&limited, nlim)?.plancherel_residual;

    let pass = max_inversion < cfg.band_tol
        && max_rotation < cfg.band_tol
        && plancherel_full < cfg.plancherel_tol
        && plancherel_band_limited < cfg.plancherel_tol;
    let provenance = Provenance::new(potential.hash_hex(), cfg.cutoff)
        .with("grid", g as f64)
        .with("cells", cfg.cells as f64)
        .with("points_per_cell", cfg.points_per_cell as f64);
    Ok(SymmetrySuiteReport {
        provenance,
        kpoints: kpoints.len(),
        max_inversion,
        max_rotation,
        plancherel_full,
        plancherel_band_limited,
        pass,
        runtime_s: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suite_passes() {
        let h = Honeycomb::new(1.0).unwrap();
        let v = FourierPotential::three_cosine(1.0).unwrap();
        let cfg = SymmetryConfig { grid: 6, cutoff: 5, bands: 4, ..Default::default() };
        let r = symmetry_suite(&h, &v, &cfg).unwrap();
        assert!(r.pass, "{r:?}");
        assert_eq!(r.kpoints, 36);
    }

    #[test]
    fn broken_rotation_is_detected() {
        // Only one of the three rotated Fourier pairs survives, so the
        // potential keeps inversion but loses rotation.
        let h = Honeycomb::new(1.0).unwrap();
        let v = FourierPotential::from_coefficients(vec![([1, 0], c64::new(1.0, 0.0)), ([-1, 0], c64::new(1.0, 0.0))]);
        let cfg = SymmetryConfig { grid: 4, cutoff: 5, bands: 4, ..Default::default() };
        let r = symmetry_suite(&h, &v, &cfg).unwrap();
        assert!(r.max_inversion < 1e-10);
        assert!(r.max_rotation > 1e-3);
        assert!(!r.pass);
    }
}
