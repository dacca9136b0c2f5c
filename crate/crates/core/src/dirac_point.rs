//! Detection and characterization of the conical degeneracy at the vertex `K`.
//!
//! The two degenerate Bloch modes are split by the rotation operator into a
//! `τ` state `Φ1` and a `τ̄` state `Φ2 = conj(Φ1(-x))`. The Dirac velocity
//! `λ♯ = -2i⟨Φ2, ∂_{x1}Φ1⟩` is computed from their plane-wave coefficients
//! and cross-checked against the opening slope of the cone.

use std::collections::HashMap;
use std::f64::consts::PI;

use num_complex::Complex64 as c64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bloch::{
    inner, norm_c, symmetry_decompose_at_k, BlochProblem, PlaneWaveBasis, RotationAction,
    SymmetryLabel,
};
use crate::error::{Error, Result};
use crate::lattice::{add, DualBasis, Honeycomb, IndexRotation, Vec2};
use crate::potential::FourierPotential;

pub const DEFAULT_DEGENERACY_TOL: f64 = 1e-7;
/// Lowest bands searched for the degenerate pair.
const SEARCH_BANDS: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaEstimates {
    pub inner_product: c64,
    pub cone_fit: Option<f64>,
    /// Unrestricted Fourier sum; informational only.
    pub fourier_sum: Option<c64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiracPointData {
    pub mu_star: f64,
    /// One-based index of the lower band of the degenerate pair.
    pub b1: usize,
    pub k: Vec2,
    /// Plane-wave indices shared by `phi1` and `phi2`.
    pub indices: Vec<[i32; 2]>,
    pub phi1: Vec<c64>,
    pub phi2: Vec<c64>,
    pub lambda_sharp: c64,
    pub estimates: LambdaEstimates,
    pub checks: InnerProductChecks,
    pub degeneracy_gap: f64,
    /// Distance from `μ*` to the nearest eigenvalue outside the pair.
    pub isolation: f64,
    pub tolerance: f64,
    /// Largest eigenvalue of the `σ = 1` projection restricted to the pair.
    pub sigma_one_weight: f64,
    pub labels: [SymmetryLabel; 2],
    pub cutoff: i32,
    pub potential_hash: String,
    pub cone_residuals: Vec<ConeSample>,
}

impl DiracPointData {
    /// Coefficients of `Φ1` (`j = 0`) or `Φ2` (`j = 1`) keyed by index.
    pub fn coefficient_map(&self, j: usize) -> HashMap<[i32; 2], c64> {
        let c = if j == 0 { &self.phi1 } else { &self.phi2 };
        self.indices.iter().copied().zip(c.iter().copied()).collect()
    }

    pub fn lambda_abs(&self) -> f64 {
        self.lambda_sharp.norm()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InnerProductChecks {
    /// `|2i⟨Φ2, ∂_{x2}Φ1⟩ - iλ♯|`.
    pub zeta2_residual: f64,
    /// `max_a max_j |⟨Φ_a, ∂_{x_j}Φ_a⟩|`.
    pub self_term: f64,
    /// `|2i⟨Φ1, ζ·∇Φ2⟩ - conj(2i⟨Φ2, ζ̄·∇Φ1⟩)|` for a fixed complex `ζ`.
    pub conjugate_pairing: f64,
    /// `|⟨Φ1, Φ2⟩|`.
    pub overlap: f64,
}

/// Locate the Dirac point at `K` and extract `(μ*, Φ1, Φ2, λ♯)`.
pub fn detect(lattice: &Honeycomb, potential: &FourierPotential, cutoff: i32, tol: f64) -> Result<DiracPointData> {
    potential.require_honeycomb(lattice)?;
    let rot = IndexRotation::about_k(&lattice.dual)?;
    let basis = PlaneWaveBasis::rotation_closed(cutoff, &rot);
    let action = RotationAction::new(&basis, &rot)?;
    let problem = BlochProblem::new(*lattice, potential.clone(), basis)?;
    let k = lattice.vertex_k();
    let pairs = problem.eigenpairs(k, SEARCH_BANDS.min(problem.dim()))?;
    let mus: Vec<f64> = pairs.iter().map(|p| p.mu).collect();

    let groups = crate::bloch::clusters(&mus, tol);
    let first = groups
        .iter()
        .take_while(|g| g.start < 6)
        .find(|g| g.len() >= 2)
        .cloned()
        .ok_or_else(|| Error::NotADiracPoint {
            mu: mus[0],
            multiplicity: 1,
            bands: mus.clone(),
            tol,
        })?;
    let mu_star = mus[first.clone()].iter().sum::<f64>() / first.len() as f64;
    if first.len() != 2 {
        return Err(Error::NotADiracPoint { mu: mu_star, multiplicity: first.len(), bands: mus, tol });
    }
    let b1 = first.start + 1;
    let gap = mus[first.start + 1] - mus[first.start];
    let isolation = mus
        .iter()
        .enumerate()
        .filter(|(i, _)| !first.contains(i))
        .map(|(_, m)| (m - mu_star).abs())
        .fold(f64::INFINITY, f64::min);
    let scale = 1.0 + mu_star.abs();
    if isolation < 1e3 * tol * scale {
        return Err(Error::NotADiracPoint { mu: mu_star, multiplicity: 3, bands: mus, tol });
    }

    let labeled = symmetry_decompose_at_k(&pairs[first.clone()], &action, 1e3 * tol)?;
    let mut labels = [labeled[0].label, labeled[1].label];
    labels.sort_by_key(|l| *l as u8);
    if labels != [SymmetryLabel::Tau, SymmetryLabel::TauBar] {
        return Err(Error::SymmetryViolation(format!(
            "degenerate pair at mu = {mu_star} carries labels {labels:?}, expected one tau and one tau-bar"
        )));
    }
    let sigma_one_weight = pairs[first.clone()]
        .iter()
        .map(|p| norm_c(&action.project(SymmetryLabel::One, &p.coeffs)).powi(2))
        .sum::<f64>();

    let mut phi1 = labeled
        .iter()
        .find(|s| s.label == SymmetryLabel::Tau)
        .map(|s| s.coeffs.clone())
        .expect("tau state present");
    let (imax, _) = phi1
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
        .expect("nonempty basis");
    let gauge = phi1[imax].conj() / phi1[imax].norm();
    phi1.iter_mut().for_each(|z| *z *= gauge);
    // x -> -x followed by conjugation maps e^{i(K+mk)x} to itself, so the
    // conjugate-inversion image only conjugates the coefficients.
    let phi2: Vec<c64> = phi1.iter().map(|z| z.conj()).collect();

    let tau_bar_defect = norm_c(
        &action
            .project(SymmetryLabel::TauBar, &phi2)
            .iter()
            .zip(&phi2)
            .map(|(a, b)| a - b)
            .collect::<Vec<_>>(),
    );
    let residual = eigen_residual(&problem, k, mu_star, &phi2);
    if tau_bar_defect > 1e-8 || residual > 1e-8 * scale {
        return Err(Error::SymmetryViolation(format!(
            "conjugate-inversion image of phi1 is not a tau-bar eigenvector \
             (projection defect {tau_bar_defect:e}, residual {residual:e})"
        )));
    }

    let (lambda, checks) = lambda_sharp_inner_product(&phi1, &phi2, problem.basis.indices(), &lattice.dual, k)?;
    let fourier_sum = fourier_sum_estimate(&phi1, problem.basis.indices(), &lattice.dual, k);

    Ok(DiracPointData {
        mu_star,
        b1,
        k,
        indices: problem.basis.indices().to_vec(),
        phi1,
        phi2,
        lambda_sharp: lambda,
        estimates: LambdaEstimates { inner_product: lambda, cone_fit: None, fourier_sum: Some(fourier_sum) },
        checks,
        degeneracy_gap: gap,
        isolation,
        tolerance: tol,
        sigma_one_weight,
        labels: [SymmetryLabel::Tau, SymmetryLabel::TauBar],
        cutoff,
        potential_hash: potential.hash_hex(),
        cone_residuals: Vec::new(),
    })
}

fn eigen_residual(problem: &BlochProblem, k: Vec2, mu: f64, v: &[c64]) -> f64 {
    let h = problem.hamiltonian(k).to_complex();
    let n = v.len();
    (0..n)
        .map(|i| {
            let s: c64 = (0..n).map(|j| h[(i, j)] * v[j]).sum::<c64>() - mu * v[i];
            s.norm_sqr()
        })
        .sum::<f64>()
        .sqrt()
}

/// `⟨Φ_a, ζ·∇Φ_b⟩` from plane-wave coefficients on the K-pseudo-periodic basis.
fn gradient_matrix_element(a: &[c64], b: &[c64], zeta: [c64; 2], waves: &[Vec2]) -> c64 {
    a.iter()
        .zip(b)
        .zip(waves)
        .map(|((x, y), g)| x.conj() * c64::new(0.0, 1.0) * (zeta[0] * g[0] + zeta[1] * g[1]) * y)
        .sum()
}

/// `λ♯ = -2i⟨Φ2, ∂_{x1}Φ1⟩`, with the consistency identities checked.
pub fn lambda_sharp_inner_product(
    phi1: &[c64],
    phi2: &[c64],
    indices: &[[i32; 2]],
    dual: &DualBasis,
    k: Vec2,
) -> Result<(c64, InnerProductChecks)> {
    let waves: Vec<Vec2> = indices.iter().map(|&m| add(k, dual.vector(m))).collect();
    let one = c64::new(1.0, 0.0);
    let zero = c64::new(0.0, 0.0);
    let i = c64::new(0.0, 1.0);
    let lambda = -2.0 * i * gradient_matrix_element(phi2, phi1, [one, zero], &waves);
    let zeta2 = 2.0 * i * gradient_matrix_element(phi2, phi1, [zero, one], &waves);
    let zeta2_residual = (zeta2 - i * lambda).norm();
    let mut self_term = 0.0f64;
    for phi in [phi1, phi2] {
        for z in [[one, zero], [zero, one]] {
            self_term = self_term.max(gradient_matrix_element(phi, phi, z, &waves).norm());
        }
    }
    let zeta = [c64::new(0.3, -0.7), c64::new(1.1, 0.4)];
    let zeta_bar = [zeta[0].conj(), zeta[1].conj()];
    let lhs = 2.0 * i * gradient_matrix_element(phi1, phi2, zeta, &waves);
    let rhs = (2.0 * i * gradient_matrix_element(phi2, phi1, zeta_bar, &waves)).conj();
    let conjugate_pairing = (lhs - rhs).norm();
    let overlap = inner(phi1, phi2).norm();
    let checks = InnerProductChecks { zeta2_residual, self_term, conjugate_pairing, overlap };
    let scale = 1.0 + lambda.norm();
    if zeta2_residual > 1e-10 * scale || self_term > 1e-10 * scale {
        return Err(Error::SymmetryViolation(format!(
            "inner-product identities fail: zeta2 residual {zeta2_residual:e}, self term {self_term:e}"
        )));
    }
    Ok((lambda, checks))
}

/// `3·Σ_m c(m)² ((K+mk)_1 + i(K+mk)_2)` over all basis indices, with `c`
/// normalized in ℓ² (equivalently `3|Ω| Σ c_Ω(m)² (1, i)·K^m` with `L²(Ω)`
/// normalized Fourier coefficients).
pub fn fourier_sum_estimate(phi1: &[c64], indices: &[[i32; 2]], dual: &DualBasis, k: Vec2) -> c64 {
    indices
        .iter()
        .zip(phi1)
        .map(|(&m, c)| {
            let g = add(k, dual.vector(m));
            3.0 * c * c * c64::new(g[0], g[1])
        })
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConeSample {
    pub radius: f64,
    pub angle: f64,
    pub mu_minus: f64,
    pub mu_plus: f64,
    pub e_plus: f64,
    pub e_minus: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConeFit {
    pub slope: f64,
    /// Per-angle slope estimates for the upper and lower sheets.
    pub angular_slopes: Vec<(f64, f64, f64)>,
    /// `max |s(θ) - s| / s` over angles and sheets.
    pub isotropy: f64,
    /// Fitted quadratic coefficients `(upper, lower)` averaged over angles.
    pub quadratic: (f64, f64),
    /// `max |E±| / |κ|` over all samples.
    pub linear_constant: f64,
    /// `max |E±|` on each ring, in the order of `radii`.
    pub ring_max_error: Vec<f64>,
    /// Largest ring radius on which `max |E±| ≤ 0.1`.
    pub validity_radius: f64,
    pub samples: Vec<ConeSample>,
}

/// Fit the cone opening slope from rings of quasi-momenta around `K`.
///
/// For every angle the two smallest rings determine `s r + c r²` exactly for
/// each sheet; the slope is the mean over angles and sheets.
pub fn cone_slope_fit(
    problem: &BlochProblem,
    mu_star: f64,
    b1: usize,
    radii: &[f64],
    nangles: usize,
) -> Result<ConeFit> {
    if radii.len() < 2 || nangles == 0 {
        return Err(Error::Domain("cone fit needs at least two radii and one angle".into()));
    }
    let k = problem.lattice.vertex_k();
    let mut order: Vec<usize> = (0..radii.len()).collect();
    order.sort_by(|&a, &b| radii[a].total_cmp(&radii[b]));
    let (ia, ib) = (order[0], order[1]);
    let angles: Vec<f64> = (0..nangles).map(|j| 2.0 * PI * j as f64 / nangles as f64).collect();
    let jobs: Vec<(usize, usize)> =
        (0..nangles).flat_map(|a| (0..radii.len()).map(move |r| (a, r))).collect();
    let values = jobs
        .par_iter()
        .map(|&(a, r)| {
            let kk = [k[0] + radii[r] * angles[a].cos(), k[1] + radii[r] * angles[a].sin()];
            let w = problem.eigenvalues(kk, b1 + 1)?;
            Ok((w[b1 - 1], w[b1]))
        })
        .collect::<Result<Vec<_>>>()?;
    let at = |a: usize, r: usize| values[a * radii.len() + r];

    let (ra, rb) = (radii[ia], radii[ib]);
    let solve = |da: f64, db: f64| {
        // s ra + c ra² = da, s rb + c rb² = db
        let det = ra * rb * rb - rb * ra * ra;
        let s = (da * rb * rb - db * ra * ra) / det;
        let c = (ra * db - rb * da) / det;
        (s, c)
    };
    let mut angular = Vec::with_capacity(nangles);
    let (mut qu, mut ql) = (0.0, 0.0);
    for a in 0..nangles {
        let (ma, pa) = at(a, ia);
        let (mb, pb) = at(a, ib);
        let (su, cu) = solve(pa - mu_star, pb - mu_star);
        let (sl, cl) = solve(mu_star - ma, mu_star - mb);
        angular.push((angles[a], su, sl));
        qu += cu / nangles as f64;
        ql -= cl / nangles as f64;
    }
    let slope = angular.iter().map(|(_, u, l)| u + l).sum::<f64>() / (2 * nangles) as f64;
    if !(slope > 0.0) {
        return Err(Error::ConeFitFailure(format!("fitted slope {slope} is not positive")));
    }
    let isotropy = angular
        .iter()
        .map(|(_, u, l)| ((u - slope).abs()).max((l - slope).abs()) / slope)
        .fold(0.0, f64::max);
    if isotropy > 0.1 {
        return Err(Error::ConeFitFailure(format!(
            "slope varies by {:.1}% around the ring; the pair does not open as a cone",
            100.0 * isotropy
        )));
    }
    let mut samples = Vec::with_capacity(jobs.len());
    let mut ring_max = vec![0.0f64; radii.len()];
    let mut linear_constant = 0.0f64;
    for &(a, r) in &jobs {
        let (m, p) = at(a, r);
        let e_plus = (p - mu_star) / (slope * radii[r]) - 1.0;
        let e_minus = (m - mu_star) / (-slope * radii[r]) - 1.0;
        let e = e_plus.abs().max(e_minus.abs());
        ring_max[r] = ring_max[r].max(e);
        linear_constant = linear_constant.max(e / radii[r]);
        samples.push(ConeSample { radius: radii[r], angle: angles[a], mu_minus: m, mu_plus: p, e_plus, e_minus });
    }
    let validity_radius = radii
        .iter()
        .zip(&ring_max)
        .filter(|(_, e)| **e <= 0.1)
        .map(|(r, _)| *r)
        .fold(0.0, f64::max);
    Ok(ConeFit {
        slope,
        angular_slopes: angular,
        isotropy,
        quadratic: (qu, ql),
        linear_constant,
        ring_max_error: ring_max,
        validity_radius,
        samples,
    })
}

/// Default ring radii, in units of `q`: the two smallest carry the fit.
pub const DEFAULT_CONE_RADII: [f64; 4] = [4e-3, 2e-3, 1e-3, 5e-4];

/// Run the cone fit on the square basis and store it in `dp`.
pub fn attach_cone_fit(dp: &mut DiracPointData, problem: &BlochProblem, nangles: usize) -> Result<ConeFit> {
    let q = problem.lattice.q();
    let radii: Vec<f64> = DEFAULT_CONE_RADII.iter().map(|r| r * q).collect();
    let fit = cone_slope_fit(problem, dp.mu_star, dp.b1, &radii, nangles)?;
    dp.estimates.cone_fit = Some(fit.slope);
    dp.cone_residuals = fit.samples.clone();
    Ok(fit)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchProjection {
    /// `+1` for the upper sheet, `-1` for the lower.
    pub sign: f64,
    /// Components along `(p1, p2)` after the phase normalization.
    pub components: [c64; 2],
    /// Distance of `components` from `(α/√2, ±1/√2)`.
    pub error: f64,
    /// `1 - |components|²`: mass outside `span{p1, p2}`.
    pub out_of_span: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpansionResidual {
    pub kappa: Vec2,
    /// `α(κ) = (conj(λ♯)/|λ♯|)(κ1 + iκ2)/|κ|`.
    pub alpha: c64,
    pub upper: BranchProjection,
    pub lower: BranchProjection,
}

/// Compare the Bloch modes at `K + κ` with their leading-order expansion in
/// terms of `p1, p2`.
pub fn eigenvector_expansion_residual(
    problem: &BlochProblem,
    dp: &DiracPointData,
    kappa: Vec2,
) -> Result<ExpansionResidual> {
    let r = kappa[0].hypot(kappa[1]);
    if r == 0.0 {
        return Err(Error::Domain("kappa must be nonzero".into()));
    }
    if problem.basis.indices() != dp.indices.as_slice() {
        return Err(Error::Domain("problem basis differs from the Dirac-point basis".into()));
    }
    let k = add(dp.k, kappa);
    let pairs = problem.eigenpairs(k, dp.b1 + 1)?;
    let lam = dp.lambda_sharp;
    let alpha = lam.conj() / lam.norm() * c64::new(kappa[0], kappa[1]) / r;
    let project = |coeffs: &[c64], sign: f64| -> Result<BranchProjection> {
        let a1 = inner(&dp.phi1, coeffs);
        let a2 = inner(&dp.phi2, coeffs);
        let mass = a1.norm_sqr() + a2.norm_sqr();
        if mass < 0.5 {
            return Err(Error::Numerical(format!(
                "only {mass:.3} of the mode at K + kappa lies in span(p1, p2); wrong band pairing"
            )));
        }
        let fix = sign * a2.conj() / a2.norm();
        let c = [a1 * fix, a2 * fix];
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let error = ((c[0] - alpha * h).norm_sqr() + (c[1] - c64::new(sign * h, 0.0)).norm_sqr()).sqrt();
        Ok(BranchProjection { sign, components: c, error, out_of_span: 1.0 - mass })
    };
    let lower = project(&pairs[dp.b1 - 1].coeffs, -1.0)?;
    let upper = project(&pairs[dp.b1].coeffs, 1.0)?;
    Ok(ExpansionResidual { kappa, alpha, upper, lower })
}

/// Winding number of `arg α(κ)` extracted from the upper-sheet eigenvectors
/// on a circle of radius `radius` around `K`.
pub fn alpha_winding(problem: &BlochProblem, dp: &DiracPointData, radius: f64, npoints: usize) -> Result<f64> {
    let mut phases = Vec::with_capacity(npoints + 1);
    for j in 0..=npoints {
        let th = 2.0 * PI * j as f64 / npoints as f64;
        let res = eigenvector_expansion_residual(problem, dp, [radius * th.cos(), radius * th.sin()])?;
        phases.push(res.upper.components[0].arg());
    }
    let mut total = 0.0;
    for w in phases.windows(2) {
        let mut d = w[1] - w[0];
        while d > PI {
            d -= 2.0 * PI;
        }
        while d < -PI {
            d += 2.0 * PI;
        }
        total += d;
    }
    Ok(total / (2.0 * PI))
}

/// Matrix elements of the first-order coupling `2(K + mk)·κ` between the two
/// Dirac modes, `(⟨Φ1|·|Φ2⟩, ⟨Φ2|·|Φ1⟩)`.
pub fn first_order_coupling(dp: &DiracPointData, dual: &DualBasis, kappa: Vec2) -> (c64, c64) {
    let mut h12 = c64::new(0.0, 0.0);
    let mut h21 = c64::new(0.0, 0.0);
    for ((&m, a), b) in dp.indices.iter().zip(&dp.phi1).zip(&dp.phi2) {
        let g = add(dp.k, dual.vector(m));
        let w = 2.0 * (g[0] * kappa[0] + g[1] * kappa[1]);
        h12 += a.conj() * w * b;
        h21 += b.conj() * w * a;
    }
    (h12, h21)
}
