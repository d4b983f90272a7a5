//! Exact multivariate Laurent polynomials over the rationals in the symbols
//! `Q = p^{-1/2}`, `T1 = p^{-ν1}`, `T2 = p^{-ν2}`, the GL(2) Satake parameter
//! `A`, and formal Whittaker values `W(label)`.
//!
//! The prime `p` is a numeric constant of each expression; `Q²` is always
//! rewritten to the rational `1/p`, so `Q` appears with exponent 0 or 1.

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exactnum::ExactRational;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LaurentError {
    #[error("expressions live over different primes ({0} and {1})")]
    PrimeMismatch(u64, u64),
    #[error("symbol {0} has no binding")]
    Unbound(Symbol),
    #[error("binding for {0} is not a monomial but is needed with a negative exponent")]
    NonInvertibleBinding(Symbol),
    #[error("Q is fixed to p^(-1/2) and cannot be rebound")]
    QBinding,
    #[error("unknown Whittaker label {0:?}")]
    UnknownLabel(String),
}

/// Arguments of the formal GL(2) Whittaker values appearing in closed forms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum WLabel {
    /// `W(1)`
    One,
    /// `W(w)` with `w` the antidiagonal Weyl element
    W,
    /// `W(diag(p,1))`
    P,
    /// `W(diag(p²,1))`
    P2,
    /// `W(diag(p^{-1},1)·w)`
    PinvW,
}

impl WLabel {
    pub const ALL: [WLabel; 5] = [WLabel::One, WLabel::W, WLabel::P, WLabel::P2, WLabel::PinvW];

    pub fn name(self) -> &'static str {
        match self {
            WLabel::One => "1",
            WLabel::W => "w",
            WLabel::P => "diag(p,1)",
            WLabel::P2 => "diag(p^2,1)",
            WLabel::PinvW => "diag(p^-1,1)w",
        }
    }

    pub fn parse(s: &str) -> Result<WLabel, LaurentError> {
        WLabel::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| LaurentError::UnknownLabel(s.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Symbol {
    Q,
    T1,
    T2,
    A,
    W(WLabel),
}

impl Symbol {
    /// Maximal parabolics use a single `T = p^{-ν}`, stored as `T1`.
    pub const T: Symbol = Symbol::T1;
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Symbol::Q => write!(f, "Q"),
            Symbol::T1 => write!(f, "T1"),
            Symbol::T2 => write!(f, "T2"),
            Symbol::A => write!(f, "A"),
            Symbol::W(l) => write!(f, "W[{}]", l.name()),
        }
    }
}

/// Exponent vector with no zero entries.
pub type Monomial = BTreeMap<Symbol, i32>;

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct LaurentExpr {
    p: u64,
    terms: BTreeMap<Monomial, ExactRational>,
}

fn normalize_q(mono: &mut Monomial, coef: &mut ExactRational, p: u64) {
    if let Some(e) = mono.get(&Symbol::Q).copied() {
        let half = e.div_euclid(2);
        let rem = e.rem_euclid(2);
        if half != 0 {
            *coef *= &ExactRational::p_power(p, -(half as i64));
        }
        if rem == 0 {
            mono.remove(&Symbol::Q);
        } else {
            mono.insert(Symbol::Q, 1);
        }
    }
}

impl LaurentExpr {
    pub fn zero(p: u64) -> Self {
        LaurentExpr {
            p,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(p: u64, c: ExactRational) -> Self {
        let mut e = LaurentExpr::zero(p);
        e.add_term(Monomial::new(), c);
        e
    }

    pub fn one(p: u64) -> Self {
        LaurentExpr::constant(p, ExactRational::one())
    }

    pub fn symbol(p: u64, s: Symbol) -> Self {
        LaurentExpr::monomial(p, ExactRational::one(), &[(s, 1)])
    }

    /// `coef · Π s^e`.
    pub fn monomial(p: u64, coef: ExactRational, powers: &[(Symbol, i32)]) -> Self {
        let mut mono = Monomial::new();
        for &(s, e) in powers {
            *mono.entry(s).or_insert(0) += e;
        }
        mono.retain(|_, e| *e != 0);
        let mut e = LaurentExpr::zero(p);
        e.add_term(mono, coef);
        e
    }

    pub fn prime(&self) -> u64 {
        self.p
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, &ExactRational)> {
        self.terms.iter()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// The constant coefficient if the expression has no symbols.
    pub fn as_constant(&self) -> Option<ExactRational> {
        match self.terms.len() {
            0 => Some(ExactRational::zero()),
            1 => self.terms.get(&Monomial::new()).cloned(),
            _ => None,
        }
    }

    /// Add `coef · mono` in place, applying the `Q² = 1/p` rule.
    pub fn add_term(&mut self, mut mono: Monomial, mut coef: ExactRational) {
        if coef.is_zero() {
            return;
        }
        mono.retain(|_, e| *e != 0);
        normalize_q(&mut mono, &mut coef, self.p);
        match self.terms.entry(mono) {
            Entry::Vacant(v) => {
                v.insert(coef);
            }
            Entry::Occupied(mut o) => {
                *o.get_mut() += &coef;
                if o.get().is_zero() {
                    o.remove();
                }
            }
        }
    }

    fn check(&self, other: &Self) -> Result<(), LaurentError> {
        if self.p != other.p {
            Err(LaurentError::PrimeMismatch(self.p, other.p))
        } else {
            Ok(())
        }
    }

    pub fn checked_add(&self, other: &Self) -> Result<Self, LaurentError> {
        self.check(other)?;
        let mut out = self.clone();
        for (m, c) in &other.terms {
            out.add_term(m.clone(), c.clone());
        }
        Ok(out)
    }

    pub fn checked_sub(&self, other: &Self) -> Result<Self, LaurentError> {
        self.checked_add(&other.neg_ref())
    }

    pub fn checked_mul(&self, other: &Self) -> Result<Self, LaurentError> {
        self.check(other)?;
        let mut out = LaurentExpr::zero(self.p);
        for (m1, c1) in &self.terms {
            for (m2, c2) in &other.terms {
                let mut m = m1.clone();
                for (s, e) in m2 {
                    *m.entry(*s).or_insert(0) += e;
                }
                out.add_term(m, c1 * c2);
            }
        }
        Ok(out)
    }

    fn neg_ref(&self) -> Self {
        LaurentExpr {
            p: self.p,
            terms: self.terms.iter().map(|(m, c)| (m.clone(), -c)).collect(),
        }
    }

    pub fn scale(&self, c: &ExactRational) -> Self {
        let mut out = LaurentExpr::zero(self.p);
        for (m, k) in &self.terms {
            out.add_term(m.clone(), k * c);
        }
        out
    }

    /// Nonnegative power, or a negative power of a single monomial.
    pub fn pow(&self, e: i32) -> Result<Self, LaurentError> {
        if e < 0 {
            return self.monomial_inverse()?.pow(-e);
        }
        let mut out = LaurentExpr::one(self.p);
        for _ in 0..e {
            out = out.checked_mul(self)?;
        }
        Ok(out)
    }

    fn monomial_inverse(&self) -> Result<Self, LaurentError> {
        if self.terms.len() != 1 {
            let s = self
                .terms
                .keys()
                .flat_map(|m| m.keys())
                .next()
                .copied()
                .unwrap_or(Symbol::Q);
            return Err(LaurentError::NonInvertibleBinding(s));
        }
        let (m, c) = self.terms.iter().next().expect("one term");
        let inv = c.recip().map_err(|_| LaurentError::NonInvertibleBinding(Symbol::Q))?;
        let mono: Monomial = m.iter().map(|(s, e)| (*s, -e)).collect();
        let mut out = LaurentExpr::zero(self.p);
        out.add_term(mono, inv);
        Ok(out)
    }

    /// Symbols occurring with nonzero exponent.
    pub fn symbols(&self) -> Vec<Symbol> {
        let mut v: Vec<Symbol> = self.terms.keys().flat_map(|m| m.keys().copied()).collect();
        v.sort();
        v.dedup();
        v
    }

    /// Replace symbols by Laurent expressions; unbound symbols stay formal.
    pub fn substitute(&self, bindings: &BTreeMap<Symbol, LaurentExpr>) -> Result<Self, LaurentError> {
        if bindings.contains_key(&Symbol::Q) {
            return Err(LaurentError::QBinding);
        }
        for b in bindings.values() {
            self.check(b)?;
        }
        let mut out = LaurentExpr::zero(self.p);
        for (m, c) in &self.terms {
            let mut term = LaurentExpr::constant(self.p, c.clone());
            let mut rest = Monomial::new();
            for (s, e) in m {
                match bindings.get(s) {
                    Some(b) => {
                        let f = b.pow(*e).map_err(|_| LaurentError::NonInvertibleBinding(*s))?;
                        term = term.checked_mul(&f)?;
                    }
                    None => {
                        rest.insert(*s, *e);
                    }
                }
            }
            let mut tail = LaurentExpr::zero(self.p);
            tail.add_term(rest, ExactRational::one());
            out = out.checked_add(&term.checked_mul(&tail)?)?;
        }
        Ok(out)
    }

    /// Complex value; `Q` evaluates to `p^{-1/2}` and every other symbol must be bound.
    pub fn evaluate(&self, values: &BTreeMap<Symbol, Complex64>) -> Result<Complex64, LaurentError> {
        let q = (self.p as f64).powf(-0.5);
        let mut total = Complex64::new(0.0, 0.0);
        for (m, c) in &self.terms {
            let mut t = Complex64::new(c.to_f64(), 0.0);
            for (s, e) in m {
                let base = match s {
                    Symbol::Q => Complex64::new(q, 0.0),
                    other => *values.get(other).ok_or(LaurentError::Unbound(*other))?,
                };
                t *= base.powi(*e);
            }
            total += t;
        }
        Ok(total)
    }

    /// Canonical text form: sorted monomials with exact coefficients.
    pub fn canonical_text(&self) -> String {
        self.to_string()
    }

    /// Sum of absolute values of coefficients after numeric evaluation of each
    /// monomial, used as a scale for relative comparisons.
    pub fn abs_sum(&self, values: &BTreeMap<Symbol, Complex64>) -> Result<f64, LaurentError> {
        let mut s = 0.0;
        for (m, c) in &self.terms {
            let mut single = LaurentExpr::zero(self.p);
            single.add_term(m.clone(), c.clone());
            s += single.evaluate(values)?.norm();
        }
        Ok(s)
    }
}

/// `ζ_p(c0 + c1 ν1 + c2 ν2)^{-1} = 1 − p^{-c0} T1^{c1} T2^{c2}`.
pub fn zeta_p_inverse(p: u64, c1: i32, c2: i32, c0: i32) -> LaurentExpr {
    LaurentExpr::one(p)
        - LaurentExpr::monomial(
            p,
            ExactRational::one(),
            &[(Symbol::Q, 2 * c0), (Symbol::T1, c1), (Symbol::T2, c2)],
        )
}

impl fmt::Display for LaurentExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let mut first = true;
        for (m, c) in &self.terms {
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            write!(f, "({c})")?;
            for (s, e) in m {
                if *e == 1 {
                    write!(f, "*{s}")?;
                } else {
                    write!(f, "*{s}^{e}")?;
                }
            }
        }
        Ok(())
    }
}

macro_rules! laurent_op {
    ($tr:ident, $m:ident, $checked:ident) => {
        impl $tr<LaurentExpr> for LaurentExpr {
            type Output = LaurentExpr;
            /// Panics when the operands live over different primes.
            fn $m(self, rhs: LaurentExpr) -> LaurentExpr {
                self.$checked(&rhs).expect("Laurent operands over one prime")
            }
        }
        impl $tr<&LaurentExpr> for &LaurentExpr {
            type Output = LaurentExpr;
            fn $m(self, rhs: &LaurentExpr) -> LaurentExpr {
                self.$checked(rhs).expect("Laurent operands over one prime")
            }
        }
    };
}

laurent_op!(Add, add, checked_add);
laurent_op!(Sub, sub, checked_sub);
laurent_op!(Mul, mul, checked_mul);

impl Neg for LaurentExpr {
    type Output = LaurentExpr;
    fn neg(self) -> LaurentExpr {
        self.neg_ref()
    }
}

impl Neg for &LaurentExpr {
    type Output = LaurentExpr;
    fn neg(self) -> LaurentExpr {
        self.neg_ref()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t1(p: u64) -> LaurentExpr {
        LaurentExpr::symbol(p, Symbol::T1)
    }

    #[test]
    fn basic_identities() {
        let p = 3;
        let one = LaurentExpr::one(p);
        let lhs = (&one - &t1(p)) * (&one + &t1(p));
        let rhs = &one - &(t1(p) * t1(p));
        assert_eq!(lhs, rhs);
        let q = LaurentExpr::symbol(p, Symbol::Q);
        assert_eq!((&q * &q).as_constant(), Some(ExactRational::new(1, 3)));
        let a = LaurentExpr::symbol(p, Symbol::A);
        let ainv = a.pow(-1).unwrap();
        assert_eq!(a * ainv, one);
    }

    #[test]
    fn mixed_primes_error() {
        let e = LaurentExpr::one(2).checked_add(&LaurentExpr::one(3));
        assert_eq!(e, Err(LaurentError::PrimeMismatch(2, 3)));
    }

    #[test]
    fn substitution_examples() {
        let p = 3;
        let w = LaurentExpr::symbol(p, Symbol::W(WLabel::P));
        let q = LaurentExpr::symbol(p, Symbol::Q);
        let a = LaurentExpr::symbol(p, Symbol::A);
        let img = &q * &(&a + &a.pow(-1).unwrap());
        let mut b = BTreeMap::new();
        b.insert(Symbol::W(WLabel::P), img.clone());
        assert_eq!(w.substitute(&b).unwrap(), img);

        let mut b = BTreeMap::new();
        b.insert(Symbol::T1, LaurentExpr::constant(p, ExactRational::new(1, 9)));
        assert_eq!(t1(p).substitute(&b).unwrap().as_constant(), Some(ExactRational::new(1, 9)));

        let p = 5;
        let e = LaurentExpr::one(p)
            - LaurentExpr::monomial(p, ExactRational::one(), &[(Symbol::Q, 2), (Symbol::T1, 1)]);
        let mut v = BTreeMap::new();
        v.insert(Symbol::T1, Complex64::new(1.0, 0.0));
        assert!((e.evaluate(&v).unwrap() - Complex64::new(0.8, 0.0)).norm() < 1e-15);
        assert_eq!(e.evaluate(&BTreeMap::new()), Err(LaurentError::Unbound(Symbol::T1)));
    }

    #[test]
    fn non_monomial_binding_with_negative_power_fails() {
        let p = 5;
        let e = t1(p).pow(-1).unwrap();
        let mut b = BTreeMap::new();
        b.insert(Symbol::T1, LaurentExpr::one(p) + t1(p));
        assert!(matches!(e.substitute(&b), Err(LaurentError::NonInvertibleBinding(_))));
    }

    #[test]
    fn zeta_factors() {
        let p = 7;
        assert_eq!(
            zeta_p_inverse(p, 1, 0, 1),
            LaurentExpr::one(p) - LaurentExpr::monomial(p, ExactRational::new(1, 7), &[(Symbol::T1, 1)])
        );
        assert_eq!(
            zeta_p_inverse(p, 1, 1, 1),
            LaurentExpr::one(p)
                - LaurentExpr::monomial(p, ExactRational::new(1, 7), &[(Symbol::T1, 1), (Symbol::T2, 1)])
        );
        assert_eq!(zeta_p_inverse(p, 0, 0, 1).as_constant(), Some(ExactRational::new(6, 7)));
    }

    #[test]
    fn canonical_text_is_stable() {
        let p = 2;
        let e = LaurentExpr::monomial(p, ExactRational::new(-3, 4), &[(Symbol::T2, -1), (Symbol::Q, 3)])
            + LaurentExpr::one(p);
        assert_eq!(e.canonical_text(), "(1) + (-3/8)*Q*T2^-1");
    }

    fn arb_expr(p: u64) -> impl Strategy<Value = LaurentExpr> {
        let syms = [Symbol::Q, Symbol::T1, Symbol::T2, Symbol::A, Symbol::W(WLabel::P)];
        proptest::collection::vec((-5i64..5, 1i64..4, proptest::collection::vec(-2i32..3, 5)), 0..4).prop_map(
            move |ts| {
                let mut e = LaurentExpr::zero(p);
                for (n, d, exps) in ts {
                    let powers: Vec<_> = syms.iter().copied().zip(exps).collect();
                    e = e + LaurentExpr::monomial(p, ExactRational::new(n, d), &powers);
                }
                e
            },
        )
    }

    proptest! {
        #[test]
        fn ring_axioms(a in arb_expr(3), b in arb_expr(3), c in arb_expr(3)) {
            prop_assert_eq!(&(&a * &b) * &c, &a * &(&b * &c));
            prop_assert_eq!(&a * &(&b + &c), &(&a * &b) + &(&a * &c));
            prop_assert_eq!(&a * &b, &b * &a);
            prop_assert!((&a - &a).is_zero());
        }

        #[test]
        fn substitution_composes(a in arb_expr(5), k in 1i64..4) {
            let mut b1 = BTreeMap::new();
            b1.insert(Symbol::T1, LaurentExpr::monomial(5, ExactRational::from_int(k), &[(Symbol::T2, 1)]));
            let mut b2 = BTreeMap::new();
            b2.insert(Symbol::T2, LaurentExpr::monomial(5, ExactRational::new(1, 2), &[(Symbol::A, 1)]));
            let two_step = a.substitute(&b1).unwrap().substitute(&b2).unwrap();
            let mut once = BTreeMap::new();
            once.insert(Symbol::T1, b1[&Symbol::T1].substitute(&b2).unwrap());
            once.insert(Symbol::T2, b2[&Symbol::T2].clone());
            prop_assert_eq!(two_step, a.substitute(&once).unwrap());
        }
    }
}
