//! Unramified Whittaker values: the GL(2) Casselman–Shalika values used to
//! specialize the formal `W[...]` symbols, Satake points, Sp(4) characters
//! and the GSp(4) test functions `g_{a,b,c}`.

use std::collections::BTreeMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exactnum::ExactRational;
use crate::laurent::{LaurentExpr, Symbol, WLabel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WhittakerError {
    #[error("weight ({0}, {1}) is not dominant")]
    NotDominant(i64, i64),
    #[error("c must be 0 or 1, got {0}")]
    BadTwist(i64),
    #[error("Satake point has the wrong rank for this operation")]
    WrongRank,
}

/// `W(diag(p^n, 1)) = Q^n (A^{n+1} − A^{−(n+1)})/(A − A^{−1})`, zero for `n < 0`.
pub fn cs_value(n: i64, p: u64) -> LaurentExpr {
    let mut out = LaurentExpr::zero(p);
    if n < 0 {
        return out;
    }
    for k in 0..=n {
        out = out
            + LaurentExpr::monomial(
                p,
                ExactRational::one(),
                &[(Symbol::Q, n as i32), (Symbol::A, (n - 2 * k) as i32)],
            );
    }
    out
}

/// Numeric `W(diag(p^n,1))` at the Satake parameter `alpha`.
pub fn cs_value_at(n: i64, alpha: Complex64, p: u64) -> Complex64 {
    if n < 0 {
        return Complex64::new(0.0, 0.0);
    }
    let q = (p as f64).powf(-0.5 * n as f64);
    let s: Complex64 = (0..=n).map(|k| alpha.powi((n - 2 * k) as i32)).sum();
    s * q
}

/// Value of a formal Whittaker symbol under the spherical instance.
pub fn spherical_substitution(label: WLabel, p: u64) -> LaurentExpr {
    match label {
        WLabel::One | WLabel::W => LaurentExpr::one(p),
        WLabel::P => cs_value(1, p),
        WLabel::P2 => cs_value(2, p),
        WLabel::PinvW => LaurentExpr::zero(p),
    }
}

/// Bindings replacing every `W[...]` symbol by its spherical value.
pub fn spherical_bindings(p: u64) -> BTreeMap<Symbol, LaurentExpr> {
    WLabel::ALL
        .iter()
        .map(|&l| (Symbol::W(l), spherical_substitution(l, p)))
        .collect()
}

/// Satake parameters in a canonical representative of their Weyl orbit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum SatakePoint {
    GL2(Complex64),
    GSp4(Complex64, Complex64),
}

const UNIT_TOL: f64 = 1e-12;

/// Representative of `{z, 1/z}`: the one outside the unit disc, or on the
/// circle the one in the closed upper half plane.
fn canonical_inverse_pair(z: Complex64) -> Complex64 {
    let r = z.norm();
    let keep = if r > 1.0 + UNIT_TOL {
        true
    } else if r < 1.0 - UNIT_TOL {
        false
    } else {
        z.im >= 0.0
    };
    if keep {
        z
    } else {
        z.inv()
    }
}

fn key(z: Complex64) -> (f64, f64) {
    (z.re, z.im)
}

impl SatakePoint {
    pub fn canonical(self) -> SatakePoint {
        match self {
            SatakePoint::GL2(a) => SatakePoint::GL2(canonical_inverse_pair(a)),
            SatakePoint::GSp4(a, b) => {
                let a = canonical_inverse_pair(a);
                let b = canonical_inverse_pair(b);
                if key(a) <= key(b) {
                    SatakePoint::GSp4(a, b)
                } else {
                    SatakePoint::GSp4(b, a)
                }
            }
        }
    }

    /// The eight (GSp4) or two (GL2) points of the Weyl orbit.
    pub fn orbit(self) -> Vec<SatakePoint> {
        match self {
            SatakePoint::GL2(a) => vec![SatakePoint::GL2(a), SatakePoint::GL2(a.inv())],
            SatakePoint::GSp4(a, b) => {
                let mut v = Vec::new();
                for (x, y) in [(a, b), (b, a)] {
                    for x2 in [x, x.inv()] {
                        for y2 in [y, y.inv()] {
                            v.push(SatakePoint::GSp4(x2, y2));
                        }
                    }
                }
                v
            }
        }
    }
}

/// Unramified Whittaker function of GL(2) with `W(1) = 1`.
#[derive(Clone, Copy, Debug)]
pub struct WhittakerInstance {
    pub alpha: Complex64,
}

impl WhittakerInstance {
    pub fn unramified(alpha: Complex64) -> Self {
        WhittakerInstance { alpha }
    }

    /// `W(diag(p^n,1))`, and the same at `diag(p^n,1)·w` by right invariance.
    pub fn value(&self, n: i64, p: u64) -> Complex64 {
        cs_value_at(n, self.alpha, p)
    }

    pub fn value_of(&self, label: WLabel, p: u64) -> Complex64 {
        match label {
            WLabel::One | WLabel::W => self.value(0, p),
            WLabel::P => self.value(1, p),
            WLabel::P2 => self.value(2, p),
            WLabel::PinvW => self.value(-1, p),
        }
    }
}

/// Chebyshev polynomial of the second kind `U_n(c)` with `U_{-1} = 0`.
fn chebyshev_u(n: i64, c: Complex64) -> Complex64 {
    let mut prev = Complex64::new(0.0, 0.0);
    let mut cur = Complex64::new(1.0, 0.0);
    if n < 0 {
        return prev;
    }
    for _ in 0..n {
        let next = c * cur * 2.0 - prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// Antisymmetric numerator of the Weyl character formula in the variables
/// `c_j = (x_j + x_j^{-1})/2`, after cancelling the `sin θ` factors.
fn weyl_numerator(l1: i64, l2: i64, c1: Complex64, c2: Complex64) -> Complex64 {
    chebyshev_u(l1 - 1, c1) * chebyshev_u(l2 - 1, c2) - chebyshev_u(l1 - 1, c2) * chebyshev_u(l2 - 1, c1)
}

const WALL_STEP: f64 = 1e-3;

/// Character of the Sp(4) irreducible with highest weight `(λ1, λ2)` at the
/// torus element with eigenvalues `x1^{±1}, x2^{±1}`.
pub fn sp4_character_at(lambda1: i64, lambda2: i64, x1: Complex64, x2: Complex64) -> Result<Complex64, WhittakerError> {
    if !(lambda1 >= lambda2 && lambda2 >= 0) {
        return Err(WhittakerError::NotDominant(lambda1, lambda2));
    }
    let (l1, l2) = (lambda1 + 2, lambda2 + 1);
    let c1 = (x1 + x1.inv()) * 0.5;
    let c2 = (x2 + x2.inv()) * 0.5;
    let ratio = |a: Complex64, b: Complex64| weyl_numerator(l1, l2, a, b) / ((a - b) * 2.0);
    let d = (c1 - c2) * 0.5;
    if d.norm() > WALL_STEP {
        return Ok(ratio(c1, c2));
    }
    // Near the wall c1 = c2 the quotient is an even polynomial in the
    // half-difference d; interpolate linearly in d² from two offset points.
    let m = (c1 + c2) * 0.5;
    let h1 = WALL_STEP;
    let h2 = 2.0 * WALL_STEP;
    let g1 = ratio(m + h1, m - h1);
    let g2 = ratio(m + h2, m - h2);
    let t = (d * d - h1 * h1) / (h2 * h2 - h1 * h1);
    Ok(g1 + (g2 - g1) * t)
}

/// `sp4_character_at` with eigenvalue angles.
pub fn sp4_character(lambda1: i64, lambda2: i64, theta1: f64, theta2: f64) -> Result<f64, WhittakerError> {
    let x1 = Complex64::from_polar(1.0, theta1);
    let x2 = Complex64::from_polar(1.0, theta2);
    Ok(sp4_character_at(lambda1, lambda2, x1, x2)?.re)
}

/// Weyl dimension formula for Sp(4).
pub fn sp4_dimension(lambda1: i64, lambda2: i64) -> i64 {
    let (a, b) = (lambda1, lambda2);
    (a - b + 1) * (a + b + 3) * (a + 2) * (b + 1) / 6
}

/// Highest weight of the Sp(4) character attached to the torus element
/// `diag(p^a, p^b, p^{c−a}, p^{c−b})`, or `None` outside the dominant cone.
pub fn torus_weight(a: i64, b: i64, c: i64) -> Option<(i64, i64)> {
    (a >= b && 2 * b >= c).then_some((a + b - c, a - b))
}

/// Unramified GSp(4) Whittaker value at `diag(p^a, p^b, p^{c−a}, p^{c−b})`.
///
/// Casselman–Shalika specialization normalized by `g_{0,0,0} = 1`:
/// `δ_B^{1/2}(t) · χ_λ(α, β)` with `δ_B^{1/2}(t) = p^{−(2a + b − 3c/2)}` and
/// `λ = (a + b − c, a − b)`. Outside the dominant cone the value is zero.
pub fn g_abc(a: i64, b: i64, c: i64, satake: SatakePoint, p: u64) -> Result<Complex64, WhittakerError> {
    if c != 0 && c != 1 {
        return Err(WhittakerError::BadTwist(c));
    }
    let SatakePoint::GSp4(alpha, beta) = satake.canonical() else {
        return Err(WhittakerError::WrongRank);
    };
    let Some((l1, l2)) = torus_weight(a, b, c) else {
        return Ok(Complex64::new(0.0, 0.0));
    };
    let delta = (p as f64).powf(-(2.0 * a as f64 + b as f64 - 1.5 * c as f64));
    Ok(sp4_character_at(l1, l2, alpha, beta)? * delta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn hecke_oracle(n: i64, p: u64) -> LaurentExpr {
        // s_{n+1} = s_1 s_n − Q² s_{n−1}
        let s1 = LaurentExpr::symbol(p, Symbol::Q) * (LaurentExpr::symbol(p, Symbol::A) + LaurentExpr::monomial(p, ExactRational::one(), &[(Symbol::A, -1)]));
        let q2 = LaurentExpr::monomial(p, ExactRational::one(), &[(Symbol::Q, 2)]);
        let mut prev = LaurentExpr::one(p);
        let mut cur = s1.clone();
        if n == 0 {
            return prev;
        }
        for _ in 1..n {
            let next = &s1 * &cur - &q2 * &prev;
            prev = cur;
            cur = next;
        }
        cur
    }

    #[test]
    fn cs_value_examples() {
        let p = 5;
        assert_eq!(cs_value(0, p), LaurentExpr::one(p));
        assert!(cs_value(-1, p).is_zero());
        let want = LaurentExpr::monomial(p, ExactRational::one(), &[(Symbol::Q, 2), (Symbol::A, 2)])
            + LaurentExpr::monomial(p, ExactRational::one(), &[(Symbol::Q, 2)])
            + LaurentExpr::monomial(p, ExactRational::one(), &[(Symbol::Q, 2), (Symbol::A, -2)]);
        assert_eq!(cs_value(2, p), want);
        for n in 0..=8 {
            assert_eq!(cs_value(n, p), hecke_oracle(n, p), "n = {n}");
        }
    }

    #[test]
    fn tempered_bound() {
        for p in [2u64, 3, 7] {
            for n in 0..10 {
                for k in 0..32 {
                    let a = Complex64::from_polar(1.0, k as f64 * 0.2);
                    let v = cs_value_at(n, a, p).norm();
                    assert!(v <= (n + 1) as f64 * (p as f64).powf(-0.5 * n as f64) + 1e-12);
                }
            }
        }
    }

    #[test]
    fn substitution_examples() {
        let p = 3;
        assert_eq!(spherical_substitution(WLabel::W, p), LaurentExpr::one(p));
        assert_eq!(spherical_substitution(WLabel::P, p), cs_value(1, p));
        assert!(spherical_substitution(WLabel::PinvW, p).is_zero());
    }

    #[test]
    fn character_examples() {
        for &(t1, t2) in &[(0.3, 1.1), (0.0, 0.0), (0.7, 0.7), (0.0, std::f64::consts::PI), (2.0, 2.0 + 1e-9)] {
            assert!((sp4_character(0, 0, t1, t2).unwrap() - 1.0).abs() < 1e-10);
            let want = 2.0 * f64::cos(t1) + 2.0 * f64::cos(t2);
            assert!((sp4_character(1, 0, t1, t2).unwrap() - want).abs() < 1e-9, "{t1} {t2}");
        }
        for l1 in 0..5 {
            for l2 in 0..=l1 {
                let v = sp4_character(l1, l2, 0.0, 0.0).unwrap();
                assert!((v - sp4_dimension(l1, l2) as f64).abs() < 1e-7 * v.abs().max(1.0), "{l1} {l2} {v}");
            }
        }
        assert_eq!(sp4_dimension(1, 1), 5);
        assert!(sp4_character(0, 1, 0.1, 0.2).is_err());
    }

    #[test]
    fn g_abc_examples() {
        let p = 3;
        let one = SatakePoint::GSp4(Complex64::new(1.0, 0.0), Complex64::new(1.0, 0.0));
        assert!((g_abc(0, 0, 0, one, p).unwrap() - 1.0).norm() < 1e-12);
        assert_eq!(g_abc(0, 1, 0, one, p).unwrap(), Complex64::new(0.0, 0.0));
        let v = g_abc(1, 0, 0, one, p).unwrap();
        assert!((v.re - 5.0 / 9.0).abs() < 1e-9);
        assert!(g_abc(1, 0, 2, one, p).is_err());
    }

    proptest! {
        #[test]
        fn canonical_is_idempotent(r1 in 0.5f64..2.0, t1 in -3.0f64..3.0, r2 in 0.5f64..2.0, t2 in -3.0f64..3.0) {
            let s = SatakePoint::GSp4(Complex64::from_polar(r1, t1), Complex64::from_polar(r2, t2));
            let c = s.canonical();
            prop_assert_eq!(c.canonical(), c);
        }

        #[test]
        fn g_abc_is_weyl_invariant(t1 in 0.0f64..3.1, t2 in 0.0f64..3.1, a in 0i64..3, b in 0i64..3, c in 0i64..2) {
            let s = SatakePoint::GSp4(Complex64::from_polar(1.0, t1), Complex64::from_polar(1.0, t2));
            let base = g_abc(a, b, c, s, 5).unwrap();
            for o in s.orbit() {
                let v = g_abc(a, b, c, o, 5).unwrap();
                prop_assert!((v - base).norm() < 1e-9);
            }
        }

        #[test]
        fn character_is_weyl_invariant(t1 in 0.0f64..3.1, t2 in 0.0f64..3.1) {
            let a = sp4_character(3, 1, t1, t2).unwrap();
            prop_assert!((a - sp4_character(3, 1, t2, t1).unwrap()).abs() < 1e-8);
            prop_assert!((a - sp4_character(3, 1, -t1, t2).unwrap()).abs() < 1e-8);
        }
    }
}
