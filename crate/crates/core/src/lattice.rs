//! Honeycomb lattice geometry.
//!
//! The direct lattice is spanned by `v1 = a(√3/2, 1/2)` and `v2 = a(√3/2, -1/2)`,
//! the dual lattice by `k1 = q(1/2, √3/2)` and `k2 = q(1/2, -√3/2)` with
//! `q = 4π/(a√3)`, so that `k_i · v_j = 2π δ_ij`. Quasi-momenta are reduced to
//! the hexagonal zone centred at the vertex `K = (k1 - k2)/3`.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

pub type Vec2 = [f64; 2];

const SQRT3: f64 = 1.732_050_807_568_877_2;

#[inline]
pub fn dot(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[inline]
pub fn add(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] + b[0], a[1] + b[1]]
}

#[inline]
pub fn sub(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
pub fn scale(s: f64, a: Vec2) -> Vec2 {
    [s * a[0], s * a[1]]
}

#[inline]
pub fn norm(a: Vec2) -> f64 {
    a[0].hypot(a[1])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeBasis {
    pub a: f64,
    pub v1: Vec2,
    pub v2: Vec2,
}

impl LatticeBasis {
    /// Area of the fundamental cell, `|v1 × v2| = a²√3/2`.
    pub fn cell_area(&self) -> f64 {
        (self.v1[0] * self.v2[1] - self.v1[1] * self.v2[0]).abs()
    }

    /// The point `s1 v1 + s2 v2`.
    pub fn point(&self, s1: f64, s2: f64) -> Vec2 {
        add(scale(s1, self.v1), scale(s2, self.v2))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualBasis {
    pub q: f64,
    pub k1: Vec2,
    pub k2: Vec2,
}

impl DualBasis {
    /// The dual lattice vector `m1 k1 + m2 k2`.
    pub fn vector(&self, m: [i32; 2]) -> Vec2 {
        self.point(m[0] as f64, m[1] as f64)
    }

    pub fn point(&self, s1: f64, s2: f64) -> Vec2 {
        add(scale(s1, self.k1), scale(s2, self.k2))
    }

    /// The high-symmetry vertex `K = (k1 - k2)/3`.
    pub fn vertex_k(&self) -> Vec2 {
        scale(1.0 / 3.0, sub(self.k1, self.k2))
    }

    /// Both inequivalent vertices `(K, K' = -K)`.
    pub fn vertices(&self) -> (QuasiMomentum, QuasiMomentum) {
        let k = self.vertex_k();
        (
            QuasiMomentum { k, reduced: true },
            QuasiMomentum { k: scale(-1.0, k), reduced: false },
        )
    }

    /// Coordinates `(s1, s2)` with `k = s1 k1 + s2 k2`.
    pub fn coordinates(&self, k: Vec2) -> Vec2 {
        // k1 and k2 are not orthogonal, so solve the 2x2 system directly.
        let det = self.k1[0] * self.k2[1] - self.k1[1] * self.k2[0];
        [
            (k[0] * self.k2[1] - k[1] * self.k2[0]) / det,
            (self.k1[0] * k[1] - self.k1[1] * k[0]) / det,
        ]
    }

    /// Reduce `k` modulo the dual lattice into the hexagon centred at `K`.
    ///
    /// Points on the hexagon boundary have several equivalent images; the
    /// lexicographically smallest one (x first, then y) is returned so the
    /// map is deterministic and idempotent.
    pub fn reduce_to_bz(&self, k: Vec2) -> QuasiMomentum {
        let centre = self.vertex_k();
        let rel = sub(k, centre);
        let s = self.coordinates(rel);
        let base = [s[0].round(), s[1].round()];
        let tol = 1e-12 * self.q * self.q;
        let mut best: Option<(f64, Vec2)> = None;
        for d1 in -2..=2 {
            for d2 in -2..=2 {
                let cand = sub(rel, self.point(base[0] + d1 as f64, base[1] + d2 as f64));
                let r2 = dot(cand, cand);
                best = match best {
                    None => Some((r2, cand)),
                    Some((b2, bv)) => {
                        if r2 < b2 - tol {
                            Some((r2, cand))
                        } else if r2 <= b2 + tol && lex_less(cand, bv, 1e-12 * self.q) {
                            Some((r2.min(b2), cand))
                        } else {
                            Some((b2, bv))
                        }
                    }
                };
            }
        }
        let (_, v) = best.expect("candidate set is nonempty");
        QuasiMomentum { k: add(centre, v), reduced: true }
    }

    /// Membership test for the K-centred hexagon (closed, with tolerance).
    pub fn in_bz(&self, k: Vec2, tol: f64) -> bool {
        let rel = sub(k, self.vertex_k());
        [self.k1, self.k2, add(self.k1, self.k2)]
            .iter()
            .all(|g| dot(rel, *g).abs() <= 0.5 * dot(*g, *g) * (1.0 + tol))
    }
}

fn lex_less(a: Vec2, b: Vec2, tol: f64) -> bool {
    if (a[0] - b[0]).abs() > tol {
        a[0] < b[0]
    } else {
        a[1] < b[1] - tol
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuasiMomentum {
    pub k: Vec2,
    /// Set when `k` is known to lie in the K-centred zone.
    pub reduced: bool,
}

/// Primitive and dual bases of the honeycomb lattice with constant `a`.
pub fn honeycomb_basis(a: f64) -> Result<(LatticeBasis, DualBasis)> {
    if !(a > 0.0) || !a.is_finite() {
        return Err(Error::Domain(format!("lattice constant must be positive, got {a}")));
    }
    let v1 = [a * SQRT3 / 2.0, a / 2.0];
    let v2 = [a * SQRT3 / 2.0, -a / 2.0];
    let q = 4.0 * PI / (a * SQRT3);
    let k1 = [q / 2.0, q * SQRT3 / 2.0];
    let k2 = [q / 2.0, -q * SQRT3 / 2.0];
    Ok((LatticeBasis { a, v1, v2 }, DualBasis { q, k1, k2 }))
}

/// Both bases together; this is what most of the crate passes around.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Honeycomb {
    pub direct: LatticeBasis,
    pub dual: DualBasis,
}

impl Honeycomb {
    pub fn new(a: f64) -> Result<Self> {
        let (direct, dual) = honeycomb_basis(a)?;
        Ok(Self { direct, dual })
    }

    pub fn a(&self) -> f64 {
        self.direct.a
    }

    pub fn q(&self) -> f64 {
        self.dual.q
    }

    pub fn cell_area(&self) -> f64 {
        self.direct.cell_area()
    }

    pub fn vertex_k(&self) -> Vec2 {
        self.dual.vertex_k()
    }
}

/// Clockwise rotation by 2π/3.
pub fn rotate_r(v: Vec2) -> Vec2 {
    [-0.5 * v[0] + 0.5 * SQRT3 * v[1], -0.5 * SQRT3 * v[0] - 0.5 * v[1]]
}

/// Counter-clockwise rotation by 2π/3 (`R* = R⁻¹`).
pub fn rotate_r_inv(v: Vec2) -> Vec2 {
    [-0.5 * v[0] - 0.5 * SQRT3 * v[1], 0.5 * SQRT3 * v[0] - 0.5 * v[1]]
}

/// Action of `R` on dual indices, as an integer affine map.
///
/// `R (c + m1 k1 + m2 k2) = c + m'1 k1 + m'2 k2` with `m' = L m + shift`,
/// where the centre `c` is either the origin (`shift = 0`) or the vertex `K`
/// (`shift = (0, 1)` because `R K = K + k2`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexRotation {
    pub linear: [[i32; 2]; 2],
    pub shift: [i32; 2],
}

impl IndexRotation {
    /// Rotation of dual lattice vectors about the origin.
    pub fn about_origin(dual: &DualBasis) -> Result<Self> {
        Self::resolve(dual, [0.0, 0.0])
    }

    /// Rotation of the K-pseudo-periodic plane waves `e^{i(K + mk)·x}`.
    pub fn about_k(dual: &DualBasis) -> Result<Self> {
        Self::resolve(dual, dual.vertex_k())
    }

    fn resolve(dual: &DualBasis, centre: Vec2) -> Result<Self> {
        let to_int = |x: f64| -> Result<i32> {
            let r = x.round();
            if (x - r).abs() > 1e-12 {
                return Err(Error::Numerical(format!(
                    "index rotation is not integral (coordinate {x}); broken lattice basis"
                )));
            }
            Ok(r as i32)
        };
        let c1 = dual.coordinates(rotate_r(dual.k1));
        let c2 = dual.coordinates(rotate_r(dual.k2));
        let s = dual.coordinates(sub(rotate_r(centre), centre));
        Ok(Self {
            linear: [[to_int(c1[0])?, to_int(c2[0])?], [to_int(c1[1])?, to_int(c2[1])?]],
            shift: [to_int(s[0])?, to_int(s[1])?],
        })
    }

    pub fn apply(&self, m: [i32; 2]) -> [i32; 2] {
        let l = &self.linear;
        [
            l[0][0] * m[0] + l[0][1] * m[1] + self.shift[0],
            l[1][0] * m[0] + l[1][1] * m[1] + self.shift[1],
        ]
    }

    pub fn apply_inverse(&self, m: [i32; 2]) -> [i32; 2] {
        // R has order three.
        self.apply(self.apply(m))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: Vec2, b: Vec2, tol: f64) -> bool {
        (a[0] - b[0]).abs() < tol && (a[1] - b[1]).abs() < tol
    }

    #[test]
    fn unit_lattice_values() {
        let (l, d) = honeycomb_basis(1.0).unwrap();
        assert!(close(l.v1, [SQRT3 / 2.0, 0.5], 1e-15));
        assert!((d.q - 4.0 * PI / SQRT3).abs() < 1e-14);
        assert!(close(d.vertex_k(), [0.0, 4.0 * PI / 3.0], 1e-14));
    }

    #[test]
    fn biorthogonality_and_lengths() {
        for a in [0.3, 1.0, 2.0, 7.5] {
            let (l, d) = honeycomb_basis(a).unwrap();
            let vs = [l.v1, l.v2];
            let ks = [d.k1, d.k2];
            for i in 0..2 {
                for j in 0..2 {
                    let want = if i == j { 2.0 * PI } else { 0.0 };
                    assert!((dot(ks[i], vs[j]) - want).abs() < 1e-13);
                }
            }
            assert!((dot(l.v1, l.v2) - a * a / 2.0).abs() < 1e-13 * a * a);
            assert!((dot(d.k1, d.k2) + d.q * d.q / 2.0).abs() < 1e-13 * d.q * d.q);
        }
    }

    #[test]
    fn cell_area_for_a_two() {
        let (l, d) = honeycomb_basis(2.0).unwrap();
        assert!((l.cell_area() - 2.0 * SQRT3).abs() < 1e-14);
        assert!((d.q - 2.0 * PI / SQRT3).abs() < 1e-14);
    }

    #[test]
    fn nonpositive_constant_is_rejected() {
        assert!(honeycomb_basis(0.0).is_err());
        assert!(honeycomb_basis(-1.0).is_err());
        assert!(honeycomb_basis(f64::NAN).is_err());
    }

    #[test]
    fn rotation_maps_vertices() {
        let d = honeycomb_basis(1.0).unwrap().1;
        let (k, kp) = d.vertices();
        assert!(close(rotate_r(k.k), add(k.k, d.k2), 1e-13));
        assert!(close(rotate_r(kp.k), sub(kp.k, d.k2), 1e-13));
        assert!(close(add(k.k, kp.k), [0.0, 0.0], 1e-15));
    }

    #[test]
    fn rotation_has_order_three() {
        let v = [0.37, -1.91];
        let w = rotate_r(rotate_r(rotate_r(v)));
        assert!(close(v, w, 1e-14));
        assert!(close(rotate_r_inv(rotate_r(v)), v, 1e-15));
    }

    #[test]
    fn index_rotation_about_k() {
        let d = honeycomb_basis(1.0).unwrap().1;
        let rot = IndexRotation::about_k(&d).unwrap();
        assert_eq!(rot.apply([0, 0]), [0, 1]);
        assert_eq!(rot.linear, [[0, -1], [1, -1]]);
        for m in [[3, -2], [0, 5], [-4, -4]] {
            assert_eq!(rot.apply(rot.apply(rot.apply(m))), m);
            let lhs = rotate_r(add(d.vertex_k(), d.vector(m)));
            let rhs = add(d.vertex_k(), d.vector(rot.apply(m)));
            assert!(close(lhs, rhs, 1e-12));
        }
    }

    #[test]
    fn shortest_dual_vectors_form_a_three_cycle() {
        let d = honeycomb_basis(1.0).unwrap().1;
        let rot = IndexRotation::about_origin(&d).unwrap();
        assert_eq!(rot.shift, [0, 0]);
        let pair = |m: [i32; 2]| if m < [-m[0], -m[1]] { m } else { [-m[0], -m[1]] };
        let a = pair([1, 0]);
        let b = pair(rot.apply(a));
        let c = pair(rot.apply(b));
        assert!(a != b && b != c && a != c);
        assert_eq!(pair(rot.apply(c)), a);
        let set = [pair([1, 0]), pair([0, 1]), pair([1, 1])];
        for x in [a, b, c] {
            assert!(set.contains(&x));
        }
    }

    #[test]
    fn reduction_examples() {
        let d = honeycomb_basis(1.0).unwrap().1;
        let k = d.vertex_k();
        assert!(close(d.reduce_to_bz(add(k, d.k1)).k, k, 1e-12));
        let far = add(k, d.point(7.0, -3.0));
        assert!(close(d.reduce_to_bz(far).k, k, 1e-12));
        assert!(close(d.reduce_to_bz(k).k, k, 1e-15));
    }

    #[test]
    fn vertex_orbits_under_rotation() {
        // The six zone vertices around the origin split into two orbits of
        // three, one equivalent to K and one to K'.
        let d = honeycomb_basis(1.0).unwrap().1;
        let k = d.vertex_k();
        let mut verts = vec![k];
        for _ in 0..5 {
            let last = *verts.last().unwrap();
            // rotation by π/3 counter-clockwise
            let c = 0.5;
            let s = SQRT3 / 2.0;
            verts.push([c * last[0] - s * last[1], s * last[0] + c * last[1]]);
        }
        for (i, v) in verts.iter().enumerate() {
            let diff = d.coordinates(sub(*v, if i % 2 == 0 { k } else { scale(-1.0, k) }));
            assert!((diff[0] - diff[0].round()).abs() < 1e-12);
            assert!((diff[1] - diff[1].round()).abs() < 1e-12);
            let rv = rotate_r(*v);
            let orbit_mate = verts[(i + 4) % 6];
            assert!(close(rv, orbit_mate, 1e-12));
        }
    }

    #[test]
    fn reduced_points_are_inside_the_zone() {
        use rand::{Rng, SeedableRng};
        let d = honeycomb_basis(1.0).unwrap().1;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let k = [rng.gen_range(-60.0..60.0), rng.gen_range(-60.0..60.0)];
            let r = d.reduce_to_bz(k);
            assert!(d.in_bz(r.k, 1e-9));
            let back = d.coordinates(sub(k, r.k));
            assert!((back[0] - back[0].round()).abs() < 1e-9);
            assert!((back[1] - back[1].round()).abs() < 1e-9);
            let rr = d.reduce_to_bz(r.k);
            assert!(close(rr.k, r.k, 1e-12));
        }
    }
}
