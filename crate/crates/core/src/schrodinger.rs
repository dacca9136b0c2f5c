//! Time-dependent Schrödinger evolution `i∂_t ψ = (-Δ + V)ψ` on a periodic
//! supercell of `n × n` unit cells sampled with `p × p` points per cell.
//!
//! Fields are allowed a twist: `ψ(x + n vi) = e^{i k0·n vi} ψ(x)`. With the
//! twist at the Dirac point every supercell size admits `K` as a quasi-momentum.
//! The twisted-periodic part `u = e^{-ik0·x} ψ` is expanded on the grid as
//! `u(x) = Σ_J û(J) e^{i(J1 k1 + J2 k2)·x/n}` with `J ∈ [-N/2, N/2)²`, `N = np`.
//! Writing `J = n m + f` with `f ∈ [0, n)²` splits the modes into `n²` fibers
//! of quasi-momentum `k_f = k0 + (f1 k1 + f2 k2)/n`, each holding the `p²`
//! plane waves `m ∈ [-p/2, p/2)²`.
//!
//! Multiplication by `V` on the grid couples `m` and `m - ℓ mod p` within a
//! fiber. The fiber Hamiltonians below use exactly this wrap, so that
//! [`SupercellBands`] evolution and [`split_step_evolve`] discretize the same
//! operator.

use std::collections::BTreeMap;

use faer::Mat;
use num_complex::Complex64 as c64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bloch::symmetric_eigen;
use crate::dirac_env::{EnvelopeGrid, EnvelopeSpectrum};
use crate::dirac_point::DiracPointData;
use crate::error::{Error, Result};
use crate::fft::{signed_frequency, Fft2};
use crate::lattice::{add, dot, norm, scale, sub, Honeycomb, Vec2};
use crate::potential::FourierPotential;

/// Maximum relative norm drift tolerated by the split-step integrator.
pub const NORM_DRIFT_LIMIT: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Supercell {
    pub lattice: Honeycomb,
    /// Cells per side.
    pub n: usize,
    /// Grid points per cell side.
    pub p: usize,
    /// Quasi-momentum twist `k0`.
    pub twist: Vec2,
}

impl Supercell {
    pub fn new(lattice: Honeycomb, n: usize, p: usize, twist: Vec2) -> Result<Self> {
        if n == 0 {
            return Err(Error::Domain("supercell needs at least one cell per side".into()));
        }
        if p < 4 || p % 2 == 1 {
            return Err(Error::Domain(format!("points per cell must be even and at least 4 (got {p})")));
        }
        Ok(Self { lattice, n, p, twist })
    }

    /// Supercell twisted to the `K` vertex of the Brillouin zone.
    pub fn at_vertex(lattice: Honeycomb, n: usize, p: usize) -> Result<Self> {
        Self::new(lattice, n, p, lattice.vertex_k())
    }

    /// Grid points per side, `N = n p`.
    pub fn grid_len(&self) -> usize {
        self.n * self.p
    }

    pub fn point(&self, j1: usize, j2: usize) -> Vec2 {
        let d = &self.lattice.direct;
        add(scale(j1 as f64 / self.p as f64, d.v1), scale(j2 as f64 / self.p as f64, d.v2))
    }

    pub fn area(&self) -> f64 {
        (self.n * self.n) as f64 * self.lattice.cell_area()
    }

    pub fn fiber_momentum(&self, f: [usize; 2]) -> Vec2 {
        let k = &self.lattice.dual;
        add(self.twist, k.point(f[0] as f64 / self.n as f64, f[1] as f64 / self.n as f64))
    }

    /// Plane-wave indices of one fiber, `m1`-major.
    pub fn box_indices(&self) -> Vec<[i32; 2]> {
        let h = (self.p / 2) as i32;
        let mut out = Vec::with_capacity(self.p * self.p);
        for m1 in -h..h {
            for m2 in -h..h {
                out.push([m1, m2]);
            }
        }
        out
    }

    fn box_position(&self, m: [i32; 2]) -> Option<usize> {
        let h = (self.p / 2) as i32;
        if m[0] < -h || m[0] >= h || m[1] < -h || m[1] >= h {
            return None;
        }
        Some(((m[0] + h) as usize) * self.p + (m[1] + h) as usize)
    }

    /// Fiber and in-fiber index of the global mode `J`.
    pub fn split_mode(&self, j: [i64; 2]) -> Option<([usize; 2], usize)> {
        let n = self.n as i64;
        let half = (self.grid_len() / 2) as i64;
        if j.iter().any(|&x| x < -half || x >= half) {
            return None;
        }
        let f = [j[0].rem_euclid(n) as usize, j[1].rem_euclid(n) as usize];
        let m = [j[0].div_euclid(n) as i32, j[1].div_euclid(n) as i32];
        self.box_position(m).map(|pos| (f, pos))
    }

    /// Wave vector `k0 + (J1 k1 + J2 k2)/n`.
    pub fn wave_vector(&self, j: [i64; 2]) -> Vec2 {
        let k = &self.lattice.dual;
        add(self.twist, k.point(j[0] as f64 / self.n as f64, j[1] as f64 / self.n as f64))
    }

    fn bin_mode(&self, i: usize, j: usize) -> [i64; 2] {
        let nn = self.grid_len();
        [signed_frequency(i, nn), signed_frequency(j, nn)]
    }

    /// `e^{ik0·x_j}` factors along each grid axis; the full phase is their product.
    fn twist_phases(&self) -> (Vec<c64>, Vec<c64>) {
        let d = &self.lattice.direct;
        let (a1, a2) = (dot(self.twist, d.v1) / self.p as f64, dot(self.twist, d.v2) / self.p as f64);
        let nn = self.grid_len();
        (
            (0..nn).map(|j| c64::from_polar(1.0, a1 * j as f64)).collect(),
            (0..nn).map(|j| c64::from_polar(1.0, a2 * j as f64)).collect(),
        )
    }
}

/// A field sampled on the supercell grid, row-major in the `v1` index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Field {
    pub cell: Supercell,
    pub data: Vec<c64>,
}

impl Field {
    pub fn zeros(cell: Supercell) -> Self {
        let nn = cell.grid_len();
        Self { cell, data: vec![c64::new(0.0, 0.0); nn * nn] }
    }

    pub fn from_fn(cell: Supercell, f: impl Fn(Vec2) -> c64) -> Self {
        let nn = cell.grid_len();
        let mut data = Vec::with_capacity(nn * nn);
        for j1 in 0..nn {
            for j2 in 0..nn {
                data.push(f(cell.point(j1, j2)));
            }
        }
        Self { cell, data }
    }

    fn cell_weight(&self) -> f64 {
        let nn = self.cell.grid_len();
        self.cell.area() / (nn * nn) as f64
    }

    /// Grid L² norm; exact for trigonometric polynomials resolved by the grid.
    pub fn norm(&self) -> f64 {
        (self.cell_weight() * self.data.iter().map(|z| z.norm_sqr()).sum::<f64>()).sqrt()
    }

    pub fn distance(&self, other: &Field) -> f64 {
        let s: f64 = self.data.iter().zip(&other.data).map(|(a, b)| (a - b).norm_sqr()).sum();
        (self.cell_weight() * s).sqrt()
    }

    /// Normalized spectrum `û` of the twisted-periodic part.
    fn spectrum(&self, fft: &Fft2) -> Vec<c64> {
        let nn = self.cell.grid_len();
        let (r, c) = self.cell.twist_phases();
        let mut u = self.data.clone();
        for j1 in 0..nn {
            for j2 in 0..nn {
                u[j1 * nn + j2] *= (r[j1] * c[j2]).conj();
            }
        }
        fft.forward(&mut u);
        let s = 1.0 / (nn * nn) as f64;
        u.iter_mut().for_each(|z| *z *= s);
        u
    }

    fn from_spectrum(cell: Supercell, mut hat: Vec<c64>, fft: &Fft2) -> Self {
        let nn = cell.grid_len();
        fft.inverse(&mut hat);
        let (r, c) = cell.twist_phases();
        for j1 in 0..nn {
            for j2 in 0..nn {
                hat[j1 * nn + j2] *= r[j1] * c[j2];
            }
        }
        Self { cell, data: hat }
    }

    /// Split into fibers. Every fiber is present in the result.
    pub fn to_fibers(&self) -> FiberField {
        let cell = self.cell;
        let nn = cell.grid_len();
        let hat = self.spectrum(&Fft2::new(nn));
        let s = cell.area().sqrt();
        let mut fibers: BTreeMap<[usize; 2], Vec<c64>> = BTreeMap::new();
        for f1 in 0..cell.n {
            for f2 in 0..cell.n {
                fibers.insert([f1, f2], vec![c64::new(0.0, 0.0); cell.p * cell.p]);
            }
        }
        for i in 0..nn {
            for j in 0..nn {
                let (f, pos) = cell.split_mode(cell.bin_mode(i, j)).expect("grid mode outside fiber boxes");
                fibers.get_mut(&f).unwrap()[pos] = s * hat[i * nn + j];
            }
        }
        FiberField { cell, fibers }
    }

    pub fn from_fibers(fibers: &FiberField) -> Self {
        let cell = fibers.cell;
        let nn = cell.grid_len();
        let s = 1.0 / cell.area().sqrt();
        let mut hat = vec![c64::new(0.0, 0.0); nn * nn];
        let index = cell.box_indices();
        let n = cell.n as i64;
        for (f, beta) in &fibers.fibers {
            for (pos, m) in index.iter().enumerate() {
                let j = [n * m[0] as i64 + f[0] as i64, n * m[1] as i64 + f[1] as i64];
                let b = [j[0].rem_euclid(nn as i64) as usize, j[1].rem_euclid(nn as i64) as usize];
                hat[b[0] * nn + b[1]] = s * beta[pos];
            }
        }
        Self::from_spectrum(cell, hat, &Fft2::new(nn))
    }
}

/// A field stored by fiber: `β_f(m)` is the amplitude of `e^{i(k_f + mk)·x}`,
/// scaled so that `Σ_f Σ_m |β_f(m)|² = ‖ψ‖²` over the supercell. Absent fibers
/// are zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiberField {
    pub cell: Supercell,
    pub fibers: BTreeMap<[usize; 2], Vec<c64>>,
}

impl FiberField {
    pub fn empty(cell: Supercell) -> Self {
        Self { cell, fibers: BTreeMap::new() }
    }

    pub fn norm(&self) -> f64 {
        self.fibers.values().flatten().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// `‖∇ψ‖` over the supercell.
    pub fn gradient_norm(&self) -> f64 {
        let index = self.cell.box_indices();
        let dual = self.cell.lattice.dual;
        let mut s = 0.0;
        for (f, beta) in &self.fibers {
            let kf = self.cell.fiber_momentum(*f);
            for (m, b) in index.iter().zip(beta) {
                let g = add(kf, dual.vector(*m));
                s += dot(g, g) * b.norm_sqr();
            }
        }
        s.sqrt()
    }

    /// `self - other`, fiber by fiber.
    pub fn difference(&self, other: &FiberField) -> FiberField {
        let mut out = self.clone();
        for (f, beta) in &other.fibers {
            let e = out.fibers.entry(*f).or_insert_with(|| vec![c64::new(0.0, 0.0); beta.len()]);
            for (a, b) in e.iter_mut().zip(beta) {
                *a -= b;
            }
        }
        out
    }

    pub fn scaled(&self, s: c64) -> FiberField {
        let mut out = self.clone();
        out.fibers.values_mut().flatten().for_each(|z| *z *= s);
        out
    }

    /// Norm per fiber.
    pub fn fiber_masses(&self) -> BTreeMap<[usize; 2], f64> {
        self.fibers.iter().map(|(f, b)| (*f, b.iter().map(|z| z.norm_sqr()).sum())).collect()
    }
}

/// The discrete operator `-Δ + V` restricted to each fiber.
#[derive(Clone, Debug)]
pub struct FiberModel {
    pub cell: Supercell,
    pub potential: FourierPotential,
    /// `V̂(ℓ mod p)` on a `p × p` table.
    wrapped: Vec<f64>,
    index: Vec<[i32; 2]>,
}

impl FiberModel {
    pub fn new(cell: Supercell, potential: FourierPotential) -> Result<Self> {
        if !potential.is_real_even() {
            return Err(Error::Domain("supercell evolution needs a real, even potential".into()));
        }
        let p = cell.p;
        if p < 2 * potential.cutoff() as usize + 2 {
            return Err(Error::Domain(format!(
                "{p} points per cell alias a potential of cutoff {}",
                potential.cutoff()
            )));
        }
        let mut wrapped = vec![0.0; p * p];
        for (m, v) in potential.iter() {
            let i = m[0].rem_euclid(p as i32) as usize;
            let j = m[1].rem_euclid(p as i32) as usize;
            wrapped[i * p + j] += v.re;
        }
        let index = cell.box_indices();
        Ok(Self { cell, potential, wrapped, index })
    }

    pub fn dim(&self) -> usize {
        self.index.len()
    }

    pub fn hamiltonian(&self, f: [usize; 2]) -> Mat<f64> {
        let p = self.cell.p as i32;
        let kf = self.cell.fiber_momentum(f);
        let dual = self.cell.lattice.dual;
        let idx = &self.index;
        Mat::from_fn(idx.len(), idx.len(), |a, b| {
            let d = [(idx[a][0] - idx[b][0]).rem_euclid(p), (idx[a][1] - idx[b][1]).rem_euclid(p)];
            let mut h = self.wrapped[(d[0] * p + d[1]) as usize];
            if a == b {
                let g = add(kf, dual.vector(idx[a]));
                h += dot(g, g);
            }
            h
        })
    }

    /// Full eigendecomposition of one fiber.
    pub fn eigen(&self, f: [usize; 2]) -> Result<FiberEigen> {
        FiberEigen::of(&self.hamiltonian(f))
    }

    /// Potential on the full grid, tiled from one cell.
    pub fn grid_potential(&self) -> Result<Vec<f64>> {
        let p = self.cell.p;
        let cellv = self.potential.evaluate_grid(p)?;
        let nn = self.cell.grid_len();
        let mut out = Vec::with_capacity(nn * nn);
        for j1 in 0..nn {
            for j2 in 0..nn {
                out.push(cellv[(j1 % p) * p + j2 % p]);
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Debug)]
pub struct FiberEigen {
    /// Ascending.
    pub values: Vec<f64>,
    /// Orthonormal eigenvectors as columns.
    pub vectors: Mat<f64>,
}

impl FiberEigen {
    pub fn of(h: &Mat<f64>) -> Result<Self> {
        let (values, vectors) = symmetric_eigen(h)?;
        Ok(Self { values, vectors })
    }

    /// `U^T β` restricted to the first `nbands` columns.
    pub fn analyze(&self, beta: &[c64], nbands: usize) -> Vec<c64> {
        let u = &self.vectors;
        (0..nbands)
            .map(|b| {
                let mut s = c64::new(0.0, 0.0);
                for i in 0..beta.len() {
                    s += u[(i, b)] * beta[i];
                }
                s
            })
            .collect()
    }

    /// `Σ_b f̃_b U[:, b]`.
    pub fn synthesize(&self, coeffs: &[c64]) -> Vec<c64> {
        let u = &self.vectors;
        let n = u.nrows();
        let mut out = vec![c64::new(0.0, 0.0); n];
        for (b, c) in coeffs.iter().enumerate() {
            if *c == c64::new(0.0, 0.0) {
                continue;
            }
            for i in 0..n {
                out[i] += u[(i, b)] * c;
            }
        }
        out
    }

    /// `e^{iμ_ref t} e^{-iHt} β`, written as `β + U((e^{-i(μ-μ_ref)t} - 1)∘U^Tβ)` so
    /// that `t = 0` returns `β` exactly.
    pub fn evolve(&self, beta: &[c64], t: f64, mu_ref: f64) -> Vec<c64> {
        let n = beta.len();
        let mut c = self.analyze(beta, n);
        for (ci, mu) in c.iter_mut().zip(&self.values) {
            *ci *= c64::from_polar(1.0, -(mu - mu_ref) * t) - 1.0;
        }
        let d = self.synthesize(&c);
        beta.iter().zip(d).map(|(b, x)| b + x).collect()
    }
}

/// Eigendecompositions for a set of fibers of one supercell.
#[derive(Clone, Debug)]
pub struct SupercellBands {
    pub model: FiberModel,
    pub fibers: BTreeMap<[usize; 2], FiberEigen>,
}

impl SupercellBands {
    /// Decompose the listed fibers (in parallel).
    pub fn compute(model: FiberModel, fibers: &[[usize; 2]]) -> Result<Self> {
        let eig = fibers
            .par_iter()
            .map(|&f| model.eigen(f).map(|e| (f, e)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { model, fibers: eig.into_iter().collect() })
    }

    pub fn all(model: FiberModel) -> Result<Self> {
        let n = model.cell.n;
        let fibers: Vec<[usize; 2]> = (0..n).flat_map(|a| (0..n).map(move |b| [a, b])).collect();
        Self::compute(model, &fibers)
    }

    /// Bands for exactly the fibers occupied by `field`.
    pub fn for_field(model: FiberModel, field: &FiberField) -> Result<Self> {
        let f: Vec<[usize; 2]> = field.fibers.keys().copied().collect();
        Self::compute(model, &f)
    }

    fn get(&self, f: &[usize; 2]) -> Result<&FiberEigen> {
        self.fibers
            .get(f)
            .ok_or_else(|| Error::Domain(format!("no band data for fiber {f:?}")))
    }

    /// Bloch coefficients `f̃_b(k_f) = ⟨Φ_b(·; k_f), ψ⟩` for the lowest `nbands`.
    pub fn bloch_transform(&self, field: &FiberField, nbands: usize) -> Result<BlochCoefficients> {
        let dim = self.model.dim();
        if nbands == 0 || nbands > dim {
            return Err(Error::Domain(format!("nbands must lie in 1..={dim}")));
        }
        let coeffs = field
            .fibers
            .iter()
            .map(|(f, beta)| Ok((*f, self.get(f)?.analyze(beta, nbands))))
            .collect::<Result<BTreeMap<_, _>>>()?;
        let total = field.norm().powi(2);
        let captured: f64 = coeffs.values().flatten().map(|z| z.norm_sqr()).sum();
        let residual = if total > 0.0 { (total - captured).abs() / total } else { 0.0 };
        if residual > 1e-3 {
            return Err(Error::Numerical(format!(
                "Plancherel residual {residual:e} with {nbands} bands; increase nbands"
            )));
        }
        Ok(BlochCoefficients { cell: field.cell, nbands, coeffs, plancherel_residual: residual })
    }

    pub fn synthesize(&self, c: &BlochCoefficients) -> Result<FiberField> {
        let fibers = c
            .coeffs
            .iter()
            .map(|(f, v)| Ok((*f, self.get(f)?.synthesize(v))))
            .collect::<Result<BTreeMap<_, _>>>()?;
        Ok(FiberField { cell: c.cell, fibers })
    }

    /// Exact evolution `e^{-iHt}ψ` on the discrete model.
    pub fn bloch_evolve(&self, field: &FiberField, t: f64) -> Result<FiberField> {
        self.evolve_in_frame(field, t, 0.0)
    }

    /// `e^{iμ_ref t} e^{-iHt}ψ`; removing a large common phase keeps long runs accurate.
    pub fn evolve_in_frame(&self, field: &FiberField, t: f64, mu_ref: f64) -> Result<FiberField> {
        let entries: Vec<(&[usize; 2], &Vec<c64>)> = field.fibers.iter().collect();
        let fibers = entries
            .par_iter()
            .map(|(f, beta)| Ok((**f, self.get(f)?.evolve(beta, t, mu_ref))))
            .collect::<Result<BTreeMap<_, _>>>()?;
        Ok(FiberField { cell: field.cell, fibers })
    }

    /// Keep only the components in the lowest `nbands` bands of each fiber.
    /// Returns the projected field and the discarded fraction of `‖ψ‖²`.
    pub fn project_bands(&self, field: &FiberField, bands: std::ops::Range<usize>) -> Result<(FiberField, f64)> {
        let total = field.norm().powi(2);
        let mut fibers = BTreeMap::new();
        for (f, beta) in &field.fibers {
            let e = self.get(f)?;
            let mut c = e.analyze(beta, self.model.dim());
            for (b, ci) in c.iter_mut().enumerate() {
                if !bands.contains(&b) {
                    *ci = c64::new(0.0, 0.0);
                }
            }
            fibers.insert(*f, e.synthesize(&c));
        }
        let out = FiberField { cell: field.cell, fibers };
        let kept = out.norm().powi(2);
        let lost = if total > 0.0 { (total - kept).max(0.0) / total } else { 0.0 };
        Ok((out, lost))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlochCoefficients {
    pub cell: Supercell,
    pub nbands: usize,
    /// `coeffs[f][b]`, band index zero-based.
    pub coeffs: BTreeMap<[usize; 2], Vec<c64>>,
    pub plancherel_residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitStepReport {
    pub steps: usize,
    pub dt: f64,
    /// `dt · max_J |k0 + Jk/n|²`.
    pub max_phase_per_step: f64,
    pub norm_drift: f64,
}

/// Strang split-step Fourier evolution to time `t` with step at most `dt`:
/// half kinetic, full potential, half kinetic. Consecutive half kinetic steps
/// are fused.
pub fn split_step_evolve(field: &Field, model: &FiberModel, t: f64, dt: f64) -> Result<(Field, SplitStepReport)> {
    if !(dt > 0.0) || t < 0.0 {
        return Err(Error::Domain(format!("split-step needs dt > 0 and t >= 0 (got {dt}, {t})")));
    }
    if field.cell != model.cell {
        return Err(Error::Domain("field and fiber model live on different supercells".into()));
    }
    let cell = field.cell;
    let nn = cell.grid_len();
    let steps = (t / dt).ceil().max(1.0) as usize;
    let h = t / steps as f64;
    let fft = Fft2::new(nn);
    let norm0 = field.norm();

    let inv = 1.0 / (nn * nn) as f64;
    let mut half = vec![c64::new(0.0, 0.0); nn * nn];
    let mut full = half.clone();
    let mut emax: f64 = 0.0;
    for i in 0..nn {
        for j in 0..nn {
            let g = cell.wave_vector(cell.bin_mode(i, j));
            let e = dot(g, g);
            emax = emax.max(e);
            half[i * nn + j] = c64::from_polar(1.0, -0.5 * e * h);
            full[i * nn + j] = c64::from_polar(1.0, -e * h);
        }
    }
    // the potential step also absorbs the 1/N² of each FFT round trip
    let vphase: Vec<c64> = model.grid_potential()?.iter().map(|v| c64::from_polar(inv, -v * h)).collect();

    let (r, c) = cell.twist_phases();
    let mut u = field.data.clone();
    for j1 in 0..nn {
        for j2 in 0..nn {
            u[j1 * nn + j2] *= (r[j1] * c[j2]).conj();
        }
    }
    fft.forward(&mut u);
    u.iter_mut().zip(&half).for_each(|(a, b)| *a *= b);
    for s in 0..steps {
        fft.inverse(&mut u);
        u.iter_mut().zip(&vphase).for_each(|(a, b)| *a *= b);
        fft.forward(&mut u);
        let k = if s + 1 == steps { &half } else { &full };
        u.iter_mut().zip(k).for_each(|(a, b)| *a *= b);
    }
    fft.inverse(&mut u);
    for j1 in 0..nn {
        for j2 in 0..nn {
            u[j1 * nn + j2] *= inv * r[j1] * c[j2];
        }
    }
    let out = Field { cell, data: u };
    let drift = if norm0 > 0.0 { (out.norm() - norm0).abs() / norm0 } else { 0.0 };
    if drift > NORM_DRIFT_LIMIT {
        return Err(Error::Numerical(format!(
            "split-step norm drift {drift:e} after {steps} steps of {h:e}"
        )));
    }
    Ok((out, SplitStepReport { steps, dt: h, max_phase_per_step: emax * h, norm_drift: drift }))
}

/// `δ Σ_j α_j(δx) Φ_j(x)` sampled into fibers, where `Φ_j` are Bloch modes at
/// the supercell twist given by plane-wave amplitudes on `indices` (unit ℓ²
/// norm) and `α_j` are trigonometric polynomials on `env`. The envelope
/// domain must tile the supercell: `side = n δ a`.
///
/// Returns the field and the fraction of its mass that fell outside the
/// fiber boxes and was dropped.
pub fn modulated_fibers(
    cell: &Supercell,
    delta: f64,
    env: &EnvelopeGrid,
    envelopes: &[&[c64]],
    indices: &[[i32; 2]],
    modes: &[&[c64]],
) -> Result<(FiberField, f64)> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Domain(format!("δ must lie in (0, 1), got {delta}")));
    }
    if envelopes.len() != modes.len() {
        return Err(Error::Domain("one envelope per Bloch mode is required".into()));
    }
    let want = cell.n as f64 * delta * cell.lattice.a();
    if (env.side - want).abs() > 1e-9 * want {
        return Err(Error::Domain(format!(
            "envelope domain side {} does not tile the supercell (need n·δ·a = {want})",
            env.side
        )));
    }
    if env.n > cell.n {
        return Err(Error::Domain(format!(
            "envelope grid of {} points needs at least as many cells per side (have {})",
            env.n, cell.n
        )));
    }
    // û(J) = δ Σ_j α̂_j(r) c_j(m)/√|Ω| at J = n m + r; fiber amplitudes carry √area
    let amp = delta * cell.n as f64;
    let n = cell.n as i64;
    let mut fibers: BTreeMap<[usize; 2], Vec<c64>> = BTreeMap::new();
    let (mut kept, mut dropped) = (0.0, 0.0);
    for i in 0..env.n {
        for j in 0..env.n {
            let r = [signed_frequency(i, env.n), signed_frequency(j, env.n)];
            let a: Vec<c64> = envelopes.iter().map(|e| e[i * env.n + j]).collect();
            if a.iter().all(|z| *z == c64::new(0.0, 0.0)) {
                continue;
            }
            for (pos, m) in indices.iter().enumerate() {
                let mut v = c64::new(0.0, 0.0);
                for (aj, cj) in a.iter().zip(modes) {
                    v += aj * cj[pos];
                }
                let v = amp * v;
                let jm = [n * m[0] as i64 + r[0], n * m[1] as i64 + r[1]];
                match cell.split_mode(jm) {
                    Some((f, at)) => {
                        kept += v.norm_sqr();
                        fibers.entry(f).or_insert_with(|| vec![c64::new(0.0, 0.0); cell.p * cell.p])[at] += v;
                    }
                    None => dropped += v.norm_sqr(),
                }
            }
        }
    }
    let total = kept + dropped;
    let frac = if total > 0.0 { dropped / total } else { 0.0 };
    Ok((FiberField { cell: *cell, fibers }, frac))
}

/// The wave packet `δ(α1(δx)Φ1(x) + α2(δx)Φ2(x))` built at a Dirac point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WavePacket {
    pub fibers: FiberField,
    pub delta: f64,
    pub envelope: EnvelopeSpectrum,
    pub mu_star: f64,
    pub lambda_sharp: c64,
    pub potential_hash: String,
    /// Mass fraction lost to the finite fiber boxes.
    pub dropped_mass: f64,
}

impl WavePacket {
    pub fn field(&self) -> Field {
        Field::from_fibers(&self.fibers)
    }
}

/// Synthesize the packet from envelope data at `T = 0`.
pub fn build_wavepacket(env: &EnvelopeSpectrum, dp: &DiracPointData, delta: f64, cell: &Supercell) -> Result<WavePacket> {
    if norm(sub(cell.twist, dp.k)) > 1e-12 * (1.0 + norm(dp.k)) {
        return Err(Error::Config("supercell twist is not the Dirac point of the packet".into()));
    }
    if (env.lambda_sharp - dp.lambda_sharp).norm() > 1e-12 * (1.0 + dp.lambda_sharp.norm()) {
        return Err(Error::Config("envelope λ♯ differs from the Dirac point data".into()));
    }
    let tail = env.tail_fraction(0.8);
    if tail > 1e-10 {
        return Err(Error::Domain(format!(
            "envelope spectrum not resolved (tail mass {tail:e}); use a finer envelope grid or larger n"
        )));
    }
    let (fibers, dropped) = dirac_fibers(env, dp, delta, cell)?;
    if dropped > 1e-8 {
        return Err(Error::Domain(format!(
            "{dropped:e} of the packet mass lies outside the grid; increase points per cell"
        )));
    }
    Ok(WavePacket {
        fibers,
        delta,
        envelope: env.clone(),
        mu_star: dp.mu_star,
        lambda_sharp: dp.lambda_sharp,
        potential_hash: dp.potential_hash.clone(),
        dropped_mass: dropped,
    })
}

/// `δ Σ_j α_j(δx) Φ_j(x)` for the given envelopes, without the `e^{-iμ* t}` phase.
pub fn dirac_fibers(env: &EnvelopeSpectrum, dp: &DiracPointData, delta: f64, cell: &Supercell) -> Result<(FiberField, f64)> {
    modulated_fibers(
        cell,
        delta,
        &env.grid,
        &[&env.hat1, &env.hat2],
        &dp.indices,
        &[&dp.phi1, &dp.phi2],
    )
}
