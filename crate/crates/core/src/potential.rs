//! Honeycomb lattice potentials stored by their dual-lattice Fourier coefficients.
//!
//! `V(x) = Σ_m V_m e^{i m·k·x}` with `m·k = m1 k1 + m2 k2`. The coefficients are
//! the only source of truth; real-space values are derived on demand.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_complex::Complex64 as c64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::lattice::{DualBasis, Honeycomb, IndexRotation, LatticeBasis, Vec2};

pub const DEFAULT_SYMMETRY_TOL: f64 = 1e-12;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FourierPotential {
    coeffs: BTreeMap<[i32; 2], c64>,
}

/// One `(m1, m2, re, im)` row of the text representation.
pub type CoefficientRow = (i32, i32, f64, f64);

impl FourierPotential {
    pub fn zero() -> Self {
        Self::default()
    }

    /// Build from explicit coefficients; exact zeros are dropped.
    pub fn from_coefficients(coeffs: impl IntoIterator<Item = ([i32; 2], c64)>) -> Self {
        let mut map = BTreeMap::new();
        for (m, v) in coeffs {
            if v != c64::new(0.0, 0.0) {
                *map.entry(m).or_insert(c64::new(0.0, 0.0)) += v;
            }
        }
        Self { coeffs: map }
    }

    /// Rows scaled by an overall amplitude, as read from a config file.
    pub fn from_rows(eps: f64, rows: &[CoefficientRow]) -> Self {
        Self::from_coefficients(
            rows.iter().map(|&(m1, m2, re, im)| ([m1, m2], eps * c64::new(re, im))),
        )
    }

    pub fn rows(&self) -> Vec<CoefficientRow> {
        self.coeffs.iter().map(|(m, v)| (m[0], m[1], v.re, v.im)).collect()
    }

    /// `eps·[cos(k1·x) + cos(k2·x) + cos((k1+k2)·x)]`.
    pub fn three_cosine(eps: f64) -> Result<Self> {
        if eps == 0.0 || !eps.is_finite() {
            return Err(Error::Domain(format!(
                "three-cosine amplitude must be finite and nonzero, got {eps}"
            )));
        }
        let h = c64::new(eps / 2.0, 0.0);
        Ok(Self::from_coefficients(
            [[1, 0], [-1, 0], [0, 1], [0, -1], [1, 1], [-1, -1]].map(|m| (m, h)),
        ))
    }

    pub fn coeff(&self, m: [i32; 2]) -> c64 {
        self.coeffs.get(&m).copied().unwrap_or_default()
    }

    pub fn iter(&self) -> impl Iterator<Item = ([i32; 2], c64)> + '_ {
        self.coeffs.iter().map(|(m, v)| (*m, *v))
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Largest `|m|∞` among stored coefficients (0 for the zero potential).
    pub fn cutoff(&self) -> i32 {
        self.coeffs.keys().map(|m| m[0].abs().max(m[1].abs())).max().unwrap_or(0)
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.values().all(|v| v.norm() == 0.0)
    }

    /// True when every coefficient is real and `V_{-m} = V_m` exactly, so the
    /// Bloch Hamiltonian is real symmetric.
    pub fn is_real_even(&self) -> bool {
        self.coeffs.iter().all(|(m, v)| v.im == 0.0 && self.coeff([-m[0], -m[1]]) == *v)
    }

    pub fn symmetry_report(&self, dual: &DualBasis, tol: f64) -> Result<SymmetryReport> {
        let rot = IndexRotation::about_origin(dual)?;
        let mut real = 0.0f64;
        let mut even = 0.0f64;
        let mut rotation = 0.0f64;
        for (m, v) in self.iter() {
            let neg = self.coeff([-m[0], -m[1]]);
            real = real.max((neg - v.conj()).norm());
            even = even.max((neg - v).norm());
            rotation = rotation.max((self.coeff(rot.apply(m)) - v).norm());
        }
        Ok(SymmetryReport {
            real: real < tol,
            even: even < tol,
            r_invariant: rotation < tol,
            residual_real: real,
            residual_even: even,
            residual_rotation: rotation,
        })
    }

    /// `∫_Ω e^{-i(k1+k2)·y} V(y) dy = |Ω| V_{(1,1)}`.
    pub fn v11_coefficient(&self, lattice: &LatticeBasis) -> c64 {
        lattice.cell_area() * self.coeff([1, 1])
    }

    pub fn evaluate(&self, dual: &DualBasis, x: Vec2) -> f64 {
        let mut s = c64::new(0.0, 0.0);
        for (m, v) in self.iter() {
            let g = dual.vector(m);
            s += v * c64::from_polar(1.0, g[0] * x[0] + g[1] * x[1]);
        }
        s.re
    }

    /// Values at `x_{ij} = (i/n) v1 + (j/n) v2`, row-major in `i`.
    pub fn evaluate_grid(&self, n: usize) -> Result<Vec<f64>> {
        let need = 2 * self.cutoff() as usize + 2;
        if n < need {
            return Err(Error::Domain(format!(
                "grid of {n} points per cell aliases a potential of cutoff {} (need at least {need})",
                self.cutoff()
            )));
        }
        // m·k·x_{ij} = 2π (m1 i + m2 j)/n
        let mut out = vec![c64::new(0.0, 0.0); n * n];
        for (m, v) in self.iter() {
            for i in 0..n {
                for j in 0..n {
                    let phase = 2.0 * PI * ((m[0] as i64 * i as i64 + m[1] as i64 * j as i64)
                        .rem_euclid(n as i64)) as f64
                        / n as f64;
                    out[i * n + j] += v * c64::from_polar(1.0, phase);
                }
            }
        }
        let scale = 1.0 + self.iter().map(|(_, v)| v.norm()).sum::<f64>();
        let imag = out.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
        if imag > 1e-12 * scale {
            return Err(Error::Domain(format!(
                "potential is not real: imaginary residue {imag:e} on the grid"
            )));
        }
        Ok(out.into_iter().map(|z| z.re).collect())
    }

    /// Discrete Fourier analysis of grid values (inverse of `evaluate_grid`),
    /// keeping coefficients with `|m|∞ ≤ cutoff` above `drop_below`.
    pub fn from_grid(values: &[f64], n: usize, cutoff: i32, drop_below: f64) -> Self {
        let mut coeffs = Vec::new();
        for m1 in -cutoff..=cutoff {
            for m2 in -cutoff..=cutoff {
                let mut s = c64::new(0.0, 0.0);
                for i in 0..n {
                    for j in 0..n {
                        let phase = -2.0 * PI * ((m1 as i64 * i as i64 + m2 as i64 * j as i64)
                            .rem_euclid(n as i64)) as f64
                            / n as f64;
                        s += values[i * n + j] * c64::from_polar(1.0, phase);
                    }
                }
                s /= (n * n) as f64;
                if s.norm() > drop_below {
                    coeffs.push(([m1, m2], s));
                }
            }
        }
        Self::from_coefficients(coeffs)
    }

    /// Stable content hash of the coefficient table.
    pub fn hash_hex(&self) -> String {
        let mut h = Sha256::new();
        for (m, v) in self.iter() {
            h.update(m[0].to_le_bytes());
            h.update(m[1].to_le_bytes());
            h.update(v.re.to_bits().to_le_bytes());
            h.update(v.im.to_bits().to_le_bytes());
        }
        hex(&h.finalize())
    }

    /// Full check that this is a honeycomb potential for `lattice`.
    pub fn require_honeycomb(&self, lattice: &Honeycomb) -> Result<()> {
        let rep = self.symmetry_report(&lattice.dual, DEFAULT_SYMMETRY_TOL)?;
        if rep.all() {
            Ok(())
        } else {
            Err(Error::SymmetryViolation(format!("potential is not of honeycomb type: {rep:?}")))
        }
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymmetryReport {
    pub real: bool,
    pub even: bool,
    pub r_invariant: bool,
    pub residual_real: f64,
    pub residual_even: f64,
    pub residual_rotation: f64,
}

impl SymmetryReport {
    pub fn all(&self) -> bool {
        self.real && self.even && self.r_invariant
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{rotate_r_inv, Honeycomb};
    use rand::{Rng, SeedableRng};

    #[test]
    fn three_cosine_coefficients() {
        let v = FourierPotential::three_cosine(1.0).unwrap();
        assert_eq!(v.coeff([1, 1]), c64::new(0.5, 0.0));
        assert_eq!(v.len(), 6);
        assert_eq!(v.cutoff(), 1);
        assert!(v.is_real_even());
        assert!(FourierPotential::three_cosine(0.0).is_err());
    }

    #[test]
    fn symmetry_flags() {
        let h = Honeycomb::new(1.0).unwrap();
        let rep = FourierPotential::three_cosine(0.7).unwrap().symmetry_report(&h.dual, 1e-12).unwrap();
        assert!(rep.all());
        assert!(rep.residual_rotation < 1e-14);

        let single = FourierPotential::from_coefficients([
            ([1, 0], c64::new(0.5, 0.0)),
            ([-1, 0], c64::new(0.5, 0.0)),
        ]);
        let rep = single.symmetry_report(&h.dual, 1e-12).unwrap();
        assert!(rep.real && rep.even && !rep.r_invariant);

        let imag = FourierPotential::from_coefficients([([1, 0], c64::new(0.0, 1.0))]);
        assert!(!imag.symmetry_report(&h.dual, 1e-12).unwrap().real);
    }

    #[test]
    fn v11_values() {
        let h = Honeycomb::new(1.0).unwrap();
        let quarter = 3f64.sqrt() / 4.0;
        let v = FourierPotential::three_cosine(1.0).unwrap().v11_coefficient(&h.direct);
        assert!((v - c64::new(quarter, 0.0)).norm() < 1e-15);
        let v = FourierPotential::three_cosine(-1.0).unwrap().v11_coefficient(&h.direct);
        assert!((v + c64::new(quarter, 0.0)).norm() < 1e-15);
        assert_eq!(FourierPotential::zero().v11_coefficient(&h.direct), c64::new(0.0, 0.0));
    }

    #[test]
    fn grid_values() {
        let v = FourierPotential::three_cosine(1.0).unwrap();
        let g = v.evaluate_grid(8).unwrap();
        assert!((g[0] - 3.0).abs() < 1e-14);
        assert!(FourierPotential::zero().evaluate_grid(4).unwrap().iter().all(|&x| x == 0.0));
        assert!(v.evaluate_grid(3).is_err());
        let imag = FourierPotential::from_coefficients([([1, 0], c64::new(0.0, 1.0))]);
        assert!(imag.evaluate_grid(8).is_err());
    }

    #[test]
    fn grid_roundtrip() {
        let v = FourierPotential::from_coefficients([
            ([1, 0], c64::new(0.3, 0.0)),
            ([-1, 0], c64::new(0.3, 0.0)),
            ([2, -1], c64::new(0.1, 0.2)),
            ([-2, 1], c64::new(0.1, -0.2)),
        ]);
        let g = v.evaluate_grid(12).unwrap();
        let back = FourierPotential::from_grid(&g, 12, 3, 1e-14);
        assert_eq!(back.len(), v.len());
        for (m, c) in v.iter() {
            assert!((back.coeff(m) - c).norm() < 1e-12);
        }
    }

    #[test]
    fn periodic_even_and_rotation_invariant_in_space() {
        let h = Honeycomb::new(1.0).unwrap();
        let v = FourierPotential::three_cosine(1.3).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let x = [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)];
            let base = v.evaluate(&h.dual, x);
            let shifted = v.evaluate(&h.dual, crate::lattice::add(x, h.direct.v1));
            assert!((base - shifted).abs() < 1e-10);
            assert!((base - v.evaluate(&h.dual, [-x[0], -x[1]])).abs() < 1e-10);
            assert!((base - v.evaluate(&h.dual, rotate_r_inv(x))).abs() < 1e-10);
        }
    }

    #[test]
    fn rows_roundtrip_and_hash() {
        let v = FourierPotential::three_cosine(1.0).unwrap();
        let w = FourierPotential::from_rows(1.0, &v.rows());
        assert_eq!(v, w);
        assert_eq!(v.hash_hex(), w.hash_hex());
        assert_ne!(v.hash_hex(), FourierPotential::three_cosine(2.0).unwrap().hash_hex());
    }
}
