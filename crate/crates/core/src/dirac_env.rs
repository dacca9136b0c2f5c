//! Exact spectral propagator for the effective Dirac system
//!
//! ```text
//! ∂_T α1 = -conj(λ♯)(∂_{X1} + i∂_{X2}) α2
//! ∂_T α2 = -λ♯ (∂_{X1} - i∂_{X2}) α1
//! ```
//!
//! on a periodic parallelogram `{s1 L v̂1 + s2 L v̂2 : s ∈ [0,1)²}` where
//! `v̂i = vi / a`. In Fourier space the system is `∂_T α̂ = -iΩ(Ξ) α̂` with
//! `Ω(Ξ) = [[0, conj(λ♯)(ξ1 + iξ2)], [λ♯(ξ1 - iξ2), 0]]`, so every mode is
//! advanced by a closed-form 2×2 unitary.

use num_complex::Complex64 as c64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::{signed_frequency, Fft2};
use crate::lattice::{add, scale, Honeycomb, Vec2};

/// Periodic envelope domain and its uniform grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeGrid {
    pub lattice: Honeycomb,
    /// Points per side.
    pub n: usize,
    /// Side length of the parallelogram in slow units.
    pub side: f64,
}

impl EnvelopeGrid {
    pub fn new(lattice: Honeycomb, n: usize, side: f64) -> Result<Self> {
        if n < 4 || !(side > 0.0) {
            return Err(Error::Domain(format!("envelope grid needs n >= 4 and side > 0 (got {n}, {side})")));
        }
        Ok(Self { lattice, n, side })
    }

    fn edge(&self, i: usize) -> Vec2 {
        let v = if i == 0 { self.lattice.direct.v1 } else { self.lattice.direct.v2 };
        scale(self.side / self.lattice.a(), v)
    }

    pub fn point(&self, j1: usize, j2: usize) -> Vec2 {
        add(
            scale(j1 as f64 / self.n as f64, self.edge(0)),
            scale(j2 as f64 / self.n as f64, self.edge(1)),
        )
    }

    pub fn centre(&self) -> Vec2 {
        scale(0.5, add(self.edge(0), self.edge(1)))
    }

    /// Area of the periodic domain.
    pub fn area(&self) -> f64 {
        let (e1, e2) = (self.edge(0), self.edge(1));
        (e1[0] * e2[1] - e1[1] * e2[0]).abs()
    }

    /// Wave vector of the Fourier mode with signed integer frequencies `r`.
    pub fn xi(&self, r: [i64; 2]) -> Vec2 {
        let f = self.lattice.a() / self.side;
        scale(f, self.lattice.dual.point(r[0] as f64, r[1] as f64))
    }

    /// Wave vector of FFT bin `(i, j)`.
    pub fn xi_bin(&self, i: usize, j: usize) -> Vec2 {
        self.xi([signed_frequency(i, self.n), signed_frequency(j, self.n)])
    }

    /// Distance between opposite sides of the parallelogram.
    pub fn width(&self) -> f64 {
        self.side * (std::f64::consts::PI / 3.0).sin()
    }

    /// Minimum-image displacement from `b` to `a` on the torus.
    pub fn wrap(&self, a: Vec2, b: Vec2) -> Vec2 {
        let d = [a[0] - b[0], a[1] - b[1]];
        // vi·kj = 2π δij, so d·ki/2π is the coordinate along vi
        let s = [
            (d[0] * self.lattice.dual.k1[0] + d[1] * self.lattice.dual.k1[1]) / (2.0 * std::f64::consts::PI)
                * self.lattice.a()
                / self.side,
            (d[0] * self.lattice.dual.k2[0] + d[1] * self.lattice.dual.k2[1]) / (2.0 * std::f64::consts::PI)
                * self.lattice.a()
                / self.side,
        ];
        let mut best = d;
        let mut best_r = f64::INFINITY;
        for o1 in -1..=1 {
            for o2 in -1..=1 {
                let t1 = s[0] - s[0].round() + o1 as f64;
                let t2 = s[1] - s[1].round() + o2 as f64;
                let c = add(scale(t1, self.edge(0)), scale(t2, self.edge(1)));
                let r = c[0] * c[0] + c[1] * c[1];
                if r < best_r {
                    best_r = r;
                    best = c;
                }
            }
        }
        best
    }
}

/// Initial envelope shapes, centred on the middle of the domain.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EnvelopePreset {
    /// `α1 = exp(-|X|²/(2w²))`, `α2 = 0`.
    Gaussian { width: f64 },
    /// `α1 = exp(-|X|²/(2w²))`, `α2 = ((X1 + iX2)/w) exp(-|X|²/(2w²)) / √2`.
    GaussianPair { width: f64 },
}

impl Default for EnvelopePreset {
    fn default() -> Self {
        EnvelopePreset::Gaussian { width: 1.0 }
    }
}

impl EnvelopePreset {
    pub fn width(&self) -> f64 {
        match *self {
            EnvelopePreset::Gaussian { width } | EnvelopePreset::GaussianPair { width } => width,
        }
    }

    /// `(α10(X), α20(X))` for `X` measured from the packet centre.
    pub fn evaluate(&self, x: Vec2) -> (c64, c64) {
        let w = self.width();
        let g = (-(x[0] * x[0] + x[1] * x[1]) / (2.0 * w * w)).exp();
        match self {
            EnvelopePreset::Gaussian { .. } => (c64::new(g, 0.0), c64::new(0.0, 0.0)),
            EnvelopePreset::GaussianPair { .. } => (
                c64::new(g, 0.0),
                c64::new(x[0], x[1]) / w * g * std::f64::consts::FRAC_1_SQRT_2,
            ),
        }
    }

    /// Radius beyond which both components are below `1e-8` of their peak.
    pub fn support_radius(&self) -> f64 {
        // exp(-r²/2) r < 1e-8 comfortably for r = 6.5
        6.5 * self.width()
    }
}

/// The pair of envelope fields on an [`EnvelopeGrid`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopePair {
    pub grid: EnvelopeGrid,
    pub alpha1: Vec<c64>,
    pub alpha2: Vec<c64>,
    pub lambda_sharp: c64,
}

impl EnvelopePair {
    pub fn from_fn(grid: EnvelopeGrid, lambda_sharp: c64, f: impl Fn(Vec2) -> (c64, c64)) -> Self {
        let n = grid.n;
        let mut alpha1 = Vec::with_capacity(n * n);
        let mut alpha2 = Vec::with_capacity(n * n);
        for j1 in 0..n {
            for j2 in 0..n {
                let (a, b) = f(grid.point(j1, j2));
                alpha1.push(a);
                alpha2.push(b);
            }
        }
        Self { grid, alpha1, alpha2, lambda_sharp }
    }

    /// Preset centred on the middle of the domain. Wrap-around images are not
    /// added; the domain is expected to be large enough that they are below
    /// roundoff.
    pub fn from_preset(grid: EnvelopeGrid, lambda_sharp: c64, preset: &EnvelopePreset) -> Self {
        let c = grid.centre();
        Self::from_fn(grid, lambda_sharp, |x| preset.evaluate([x[0] - c[0], x[1] - c[1]]))
    }

    pub fn zeros(grid: EnvelopeGrid, lambda_sharp: c64) -> Self {
        let z = vec![c64::new(0.0, 0.0); grid.n * grid.n];
        Self { grid, alpha1: z.clone(), alpha2: z, lambda_sharp }
    }

    /// Normalized Fourier coefficients: `α(X) = Σ_r α̂(r) e^{iΞ_r·X}`.
    pub fn spectrum(&self) -> EnvelopeSpectrum {
        let fft = Fft2::new(self.grid.n);
        let norm = 1.0 / (self.grid.n * self.grid.n) as f64;
        let mut a1 = self.alpha1.clone();
        let mut a2 = self.alpha2.clone();
        fft.forward(&mut a1);
        fft.forward(&mut a2);
        a1.iter_mut().chain(a2.iter_mut()).for_each(|z| *z *= norm);
        EnvelopeSpectrum { grid: self.grid, hat1: a1, hat2: a2, lambda_sharp: self.lambda_sharp }
    }

    pub fn l2_norm(&self) -> f64 {
        let cell = self.grid.area() / (self.grid.n * self.grid.n) as f64;
        (cell * self.alpha1.iter().chain(&self.alpha2).map(|z| z.norm_sqr()).sum::<f64>()).sqrt()
    }

    /// Propagate to slow time `t` in one spectral step.
    pub fn propagate(&self, t: f64) -> EnvelopePair {
        self.spectrum().propagate(t).to_fields()
    }

    /// Fraction of spectral mass beyond `frac` of the Nyquist radius.
    pub fn spectral_tail(&self, frac: f64) -> f64 {
        self.spectrum().tail_fraction(frac)
    }

    /// The grid resolves the data when the tail beyond 0.8 Nyquist is below 1e-10.
    pub fn resolves_spectrum(&self) -> bool {
        self.spectral_tail(0.8) < 1e-10
    }

    /// `‖∂^o α‖_{L²}` for `o = 0..=order`, summed over both components and all
    /// multi-indices of length `o`.
    pub fn conserved_norms(&self, order: usize) -> Vec<f64> {
        self.spectrum().derivative_norms(order)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeSpectrum {
    pub grid: EnvelopeGrid,
    pub hat1: Vec<c64>,
    pub hat2: Vec<c64>,
    pub lambda_sharp: c64,
}

impl EnvelopeSpectrum {
    /// Spectrum of the preset summed over all its periodic images, centred on
    /// the middle of the domain. Equals the sampled preset up to wrap-around
    /// overlap and is band-limited only up to the Gaussian tail.
    pub fn periodized(grid: EnvelopeGrid, lambda_sharp: c64, preset: &EnvelopePreset) -> Self {
        let n = grid.n;
        let w = preset.width();
        let c = grid.centre();
        let mut hat1 = vec![c64::new(0.0, 0.0); n * n];
        let mut hat2 = hat1.clone();
        let pref = 2.0 * std::f64::consts::PI * w * w / grid.area();
        for i in 0..n {
            for j in 0..n {
                let xi = grid.xi_bin(i, j);
                let g = pref * (-0.5 * w * w * (xi[0] * xi[0] + xi[1] * xi[1])).exp();
                let shift = c64::from_polar(g, -(xi[0] * c[0] + xi[1] * c[1]));
                let idx = i * n + j;
                hat1[idx] = shift;
                if let EnvelopePreset::GaussianPair { .. } = preset {
                    // X1 + iX2 becomes i(∂ξ1 + i∂ξ2) on the transform
                    hat2[idx] = c64::new(0.0, -w * w) * c64::new(xi[0], xi[1]) * shift
                        / w
                        * std::f64::consts::FRAC_1_SQRT_2;
                }
            }
        }
        Self { grid, hat1, hat2, lambda_sharp }
    }

    pub fn propagate(&self, t: f64) -> EnvelopeSpectrum {
        let n = self.grid.n;
        let mut hat1 = self.hat1.clone();
        let mut hat2 = self.hat2.clone();
        for i in 0..n {
            for j in 0..n {
                let idx = i * n + j;
                let u = dirac_step_matrix(self.grid.xi_bin(i, j), self.lambda_sharp, t);
                let (a, b) = (self.hat1[idx], self.hat2[idx]);
                hat1[idx] = u[0][0] * a + u[0][1] * b;
                hat2[idx] = u[1][0] * a + u[1][1] * b;
            }
        }
        EnvelopeSpectrum { grid: self.grid, hat1, hat2, lambda_sharp: self.lambda_sharp }
    }

    pub fn to_fields(&self) -> EnvelopePair {
        let fft = Fft2::new(self.grid.n);
        let mut a1 = self.hat1.clone();
        let mut a2 = self.hat2.clone();
        fft.inverse(&mut a1);
        fft.inverse(&mut a2);
        EnvelopePair { grid: self.grid, alpha1: a1, alpha2: a2, lambda_sharp: self.lambda_sharp }
    }

    pub fn tail_fraction(&self, frac: f64) -> f64 {
        let n = self.grid.n;
        let limit = frac * (n / 2) as f64;
        let (mut total, mut tail) = (0.0, 0.0);
        for i in 0..n {
            for j in 0..n {
                let idx = i * n + j;
                let m = self.hat1[idx].norm_sqr() + self.hat2[idx].norm_sqr();
                total += m;
                let r = signed_frequency(i, n).abs().max(signed_frequency(j, n).abs()) as f64;
                if r > limit {
                    tail += m;
                }
            }
        }
        if total == 0.0 {
            0.0
        } else {
            tail / total
        }
    }

    pub fn derivative_norms(&self, order: usize) -> Vec<f64> {
        let n = self.grid.n;
        let area = self.grid.area();
        (0..=order)
            .map(|o| {
                let mut s = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        let idx = i * n + j;
                        let xi = self.grid.xi_bin(i, j);
                        let w = (xi[0] * xi[0] + xi[1] * xi[1]).powi(o as i32);
                        s += w * (self.hat1[idx].norm_sqr() + self.hat2[idx].norm_sqr());
                    }
                }
                (area * s).sqrt()
            })
            .collect()
    }

    /// `α̂_j(r)` for signed frequencies `r`, zero outside the grid.
    pub fn coefficient(&self, j: usize, r: [i64; 2]) -> c64 {
        let n = self.grid.n as i64;
        let half = n / 2;
        if r[0] < -half || r[0] >= n - half || r[1] < -half || r[1] >= n - half {
            return c64::new(0.0, 0.0);
        }
        let idx = (r[0].rem_euclid(n) * n + r[1].rem_euclid(n)) as usize;
        if j == 0 {
            self.hat1[idx]
        } else {
            self.hat2[idx]
        }
    }
}

/// `e^{-iΩ(Ξ)T} = cos(ωT) I - i sin(ωT) Ω(Ξ)/ω` with `ω = |λ♯||Ξ|`.
pub fn dirac_step_matrix(xi: Vec2, lambda_sharp: c64, t: f64) -> [[c64; 2]; 2] {
    let omega = lambda_sharp.norm() * xi[0].hypot(xi[1]);
    let one = c64::new(1.0, 0.0);
    let zero = c64::new(0.0, 0.0);
    if omega == 0.0 {
        return [[one, zero], [zero, one]];
    }
    let c = (omega * t).cos();
    let s = (omega * t).sin() / omega;
    let o12 = lambda_sharp.conj() * c64::new(xi[0], xi[1]);
    let o21 = lambda_sharp * c64::new(xi[0], -xi[1]);
    let mi = c64::new(0.0, -1.0);
    [[c * one, mi * s * o12], [mi * s * o21, c * one]]
}

/// The generator `Ω(Ξ)`.
pub fn dirac_symbol(xi: Vec2, lambda_sharp: c64) -> [[c64; 2]; 2] {
    let zero = c64::new(0.0, 0.0);
    [
        [zero, lambda_sharp.conj() * c64::new(xi[0], xi[1])],
        [lambda_sharp * c64::new(xi[0], -xi[1]), zero],
    ]
}

/// `‖(α1(T+h) - 2α1(T) + α1(T-h))/h² - |λ♯|² Δα1(T)‖_{L²}`; shrinks like `h²`.
pub fn wave_equation_residual(spec: &EnvelopeSpectrum, t: f64, h: f64) -> f64 {
    let plus = spec.propagate(t + h);
    let mid = spec.propagate(t);
    let minus = spec.propagate(t - h);
    let lam2 = spec.lambda_sharp.norm_sqr();
    let n = spec.grid.n;
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            let idx = i * n + j;
            let xi = spec.grid.xi_bin(i, j);
            let lap = -(xi[0] * xi[0] + xi[1] * xi[1]);
            let d2 = (plus.hat1[idx] - 2.0 * mid.hat1[idx] + minus.hat1[idx]) / (h * h);
            s += (d2 - lam2 * lap * mid.hat1[idx]).norm_sqr();
        }
    }
    (spec.grid.area() * s).sqrt()
}

/// Side of the periodic domain that keeps a packet of the given preset away
/// from its own wrap-around images up to slow time `t_max`: the distance
/// between opposite sides must be at least `2(|λ♯| t_max + 10 w)`.
pub fn domain_side(preset: &EnvelopePreset, lambda_abs: f64, t_max: f64) -> f64 {
    2.0 * (lambda_abs * t_max + 10.0 * preset.width()) / (std::f64::consts::PI / 3.0).sin()
}
