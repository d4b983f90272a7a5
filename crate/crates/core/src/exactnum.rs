//! Exact rational arithmetic, p-adic valuations, the standard additive
//! character of `Q_p/Z_p`, Gauss averages over `Z_p^×`, and measured
//! enumeration of valuation shells.

use std::cmp::Ordering;
use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};
use std::str::FromStr;

use num_bigint::BigInt;
use num_complex::Complex64;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ExactError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("cannot parse rational from {0:?}")]
    Parse(String),
    #[error("{0} is not prime")]
    NotPrime(u64),
    #[error("character sum did not reduce to a rational (residual degree {0})")]
    NotRational(usize),
}

/// Arbitrary-precision rational in lowest terms with positive denominator.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct ExactRational(BigRational);

impl ExactRational {
    /// `n/d`; panics when `d == 0`.
    pub fn new(n: i64, d: i64) -> Self {
        assert!(d != 0, "zero denominator");
        ExactRational(BigRational::new(BigInt::from(n), BigInt::from(d)))
    }

    pub fn from_int(n: i64) -> Self {
        ExactRational(BigRational::from_integer(BigInt::from(n)))
    }

    pub fn from_bigint(n: BigInt) -> Self {
        ExactRational(BigRational::from_integer(n))
    }

    pub fn from_big_parts(n: BigInt, d: BigInt) -> Result<Self, ExactError> {
        if d.is_zero() {
            return Err(ExactError::DivisionByZero);
        }
        Ok(ExactRational(BigRational::new(n, d)))
    }

    pub fn zero() -> Self {
        ExactRational(BigRational::zero())
    }

    pub fn one() -> Self {
        ExactRational(BigRational::one())
    }

    /// `p^k` for any integer `k`.
    pub fn p_power(p: u64, k: i64) -> Self {
        let base = BigInt::from(p).pow(k.unsigned_abs() as u32);
        if k >= 0 {
            ExactRational(BigRational::from_integer(base))
        } else {
            ExactRational(BigRational::new(BigInt::one(), base))
        }
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    pub fn is_one(&self) -> bool {
        self.0.is_one()
    }

    pub fn is_integer(&self) -> bool {
        self.0.is_integer()
    }

    pub fn is_negative(&self) -> bool {
        self.0.is_negative()
    }

    pub fn numer(&self) -> &BigInt {
        self.0.numer()
    }

    pub fn denom(&self) -> &BigInt {
        self.0.denom()
    }

    pub fn inner(&self) -> &BigRational {
        &self.0
    }

    pub fn recip(&self) -> Result<Self, ExactError> {
        if self.is_zero() {
            Err(ExactError::DivisionByZero)
        } else {
            Ok(ExactRational(self.0.recip()))
        }
    }

    pub fn checked_div(&self, other: &Self) -> Result<Self, ExactError> {
        if other.is_zero() {
            Err(ExactError::DivisionByZero)
        } else {
            Ok(ExactRational(&self.0 / &other.0))
        }
    }

    pub fn abs(&self) -> Self {
        ExactRational(self.0.abs())
    }

    /// Integer power; negative exponents invert (panics on `0^-k`).
    pub fn pow(&self, e: i32) -> Self {
        ExactRational(num_traits::Pow::pow(&self.0, e))
    }

    pub fn to_f64(&self) -> f64 {
        match self.0.to_f64() {
            Some(v) => v,
            None => {
                // Very large numerator/denominator: fall back on bit lengths.
                let n = self.0.numer();
                let d = self.0.denom();
                let shift = n.bits().max(d.bits()) as i64 - 60;
                let (ns, ds) = if shift > 0 {
                    (n >> shift as usize, d >> shift as usize)
                } else {
                    (n.clone(), d.clone())
                };
                ns.to_f64().unwrap_or(0.0) / ds.to_f64().unwrap_or(f64::INFINITY)
            }
        }
    }
}

impl From<i64> for ExactRational {
    fn from(n: i64) -> Self {
        ExactRational::from_int(n)
    }
}

impl From<BigRational> for ExactRational {
    fn from(r: BigRational) -> Self {
        ExactRational(r)
    }
}

impl fmt::Display for ExactRational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_integer() {
            write!(f, "{}", self.0.numer())
        } else {
            write!(f, "{}/{}", self.0.numer(), self.0.denom())
        }
    }
}

impl fmt::Debug for ExactRational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl FromStr for ExactRational {
    type Err = ExactError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let bad = || ExactError::Parse(s.to_string());
        match s.split_once('/') {
            Some((n, d)) => {
                let n = BigInt::from_str(n.trim()).map_err(|_| bad())?;
                let d = BigInt::from_str(d.trim()).map_err(|_| bad())?;
                ExactRational::from_big_parts(n, d)
            }
            None => Ok(ExactRational::from_bigint(
                BigInt::from_str(s).map_err(|_| bad())?,
            )),
        }
    }
}

impl Serialize for ExactRational {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for ExactRational {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

macro_rules! forward_binop {
    ($tr:ident, $m:ident, $op:tt) => {
        impl $tr<&ExactRational> for &ExactRational {
            type Output = ExactRational;
            fn $m(self, rhs: &ExactRational) -> ExactRational {
                ExactRational(&self.0 $op &rhs.0)
            }
        }
        impl $tr<ExactRational> for ExactRational {
            type Output = ExactRational;
            fn $m(self, rhs: ExactRational) -> ExactRational {
                ExactRational(self.0 $op rhs.0)
            }
        }
        impl $tr<&ExactRational> for ExactRational {
            type Output = ExactRational;
            fn $m(self, rhs: &ExactRational) -> ExactRational {
                ExactRational(self.0 $op &rhs.0)
            }
        }
        impl $tr<ExactRational> for &ExactRational {
            type Output = ExactRational;
            fn $m(self, rhs: ExactRational) -> ExactRational {
                ExactRational(&self.0 $op rhs.0)
            }
        }
    };
}

forward_binop!(Add, add, +);
forward_binop!(Sub, sub, -);
forward_binop!(Mul, mul, *);
// Division panics on a zero divisor, like the underlying integer types.
forward_binop!(Div, div, /);

impl Neg for ExactRational {
    type Output = ExactRational;
    fn neg(self) -> ExactRational {
        ExactRational(-self.0)
    }
}

impl Neg for &ExactRational {
    type Output = ExactRational;
    fn neg(self) -> ExactRational {
        ExactRational(-&self.0)
    }
}

impl AddAssign<&ExactRational> for ExactRational {
    fn add_assign(&mut self, rhs: &ExactRational) {
        self.0 += &rhs.0;
    }
}

impl SubAssign<&ExactRational> for ExactRational {
    fn sub_assign(&mut self, rhs: &ExactRational) {
        self.0 -= &rhs.0;
    }
}

impl MulAssign<&ExactRational> for ExactRational {
    fn mul_assign(&mut self, rhs: &ExactRational) {
        self.0 *= &rhs.0;
    }
}

impl std::iter::Sum for ExactRational {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(ExactRational::zero(), |a, b| a + b)
    }
}

/// p-adic valuation; zero has valuation `Infinite`, which compares above
/// every finite value.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Serialize, Deserialize)]
pub enum Valuation {
    Finite(i64),
    Infinite,
}

impl Valuation {
    pub fn finite(self) -> Option<i64> {
        match self {
            Valuation::Finite(v) => Some(v),
            Valuation::Infinite => None,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, Valuation::Infinite)
    }

    /// `self < k` for a finite bound.
    pub fn lt(self, k: i64) -> bool {
        self < Valuation::Finite(k)
    }

    pub fn ge(self, k: i64) -> bool {
        self >= Valuation::Finite(k)
    }

    pub fn shift(self, k: i64) -> Valuation {
        match self {
            Valuation::Finite(v) => Valuation::Finite(v + k),
            Valuation::Infinite => Valuation::Infinite,
        }
    }
}

impl Add for Valuation {
    type Output = Valuation;
    fn add(self, rhs: Valuation) -> Valuation {
        match (self, rhs) {
            (Valuation::Finite(a), Valuation::Finite(b)) => Valuation::Finite(a + b),
            _ => Valuation::Infinite,
        }
    }
}

impl fmt::Display for Valuation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Valuation::Finite(v) => write!(f, "{v}"),
            Valuation::Infinite => write!(f, "+inf"),
        }
    }
}

pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    let mut d = 2;
    while d * d <= n {
        if n % d == 0 {
            return false;
        }
        d += 1;
    }
    true
}

/// Valuation of a nonzero integer, returning it together with the prime-to-p part.
fn split_int(n: &BigInt, p: u64) -> (i64, BigInt) {
    let pb = BigInt::from(p);
    let mut m = n.clone();
    let mut k = 0;
    loop {
        let (q, r) = m.div_rem(&pb);
        if !r.is_zero() {
            return (k, m);
        }
        m = q;
        k += 1;
    }
}

/// Exact p-adic valuation of a rational.
pub fn vp(r: &ExactRational, p: u64) -> Valuation {
    if r.is_zero() {
        return Valuation::Infinite;
    }
    let (a, _) = split_int(r.numer(), p);
    let (b, _) = split_int(r.denom(), p);
    Valuation::Finite(a - b)
}

/// The representative `f ∈ [0,1)` with p-power denominator and `r − f ∈ Z_p`.
pub fn frac_part(r: &ExactRational, p: u64) -> ExactRational {
    if r.is_zero() {
        return ExactRational::zero();
    }
    let (k, d_prime) = split_int(r.denom(), p);
    if k == 0 {
        return ExactRational::zero();
    }
    let modulus = BigInt::from(p).pow(k as u32);
    let inv = mod_inverse(&d_prime, &modulus);
    let m = (r.numer() * inv).mod_floor(&modulus);
    ExactRational(BigRational::new(m, modulus))
}

fn mod_inverse(a: &BigInt, m: &BigInt) -> BigInt {
    let e = a.mod_floor(m).extended_gcd(m);
    debug_assert!(e.gcd.is_one());
    e.x.mod_floor(m)
}

/// Residue of a p-integral rational modulo `p^k`, or `None` if `v_p(r) < 0`.
pub fn residue_mod_pk(r: &ExactRational, p: u64, k: u32) -> Option<BigInt> {
    let modulus = BigInt::from(p).pow(k);
    let (vd, d_prime) = split_int(r.denom(), p);
    if vd > 0 {
        return None;
    }
    let inv = mod_inverse(&d_prime, &modulus);
    Some((r.numer() * inv).mod_floor(&modulus))
}

/// `θ_p(r) = e^{2πi·frac_part(r)}`.
pub fn theta(r: &ExactRational, p: u64) -> Complex64 {
    let f = frac_part(r, p);
    if f.is_zero() {
        return Complex64::new(1.0, 0.0);
    }
    Complex64::from_polar(1.0, 2.0 * PI * f.to_f64())
}

/// `∫_{Z_p^×} θ(λa) d^×λ`: 1, `−1/(p−1)` or 0 according as `|a| ≤ 1`,
/// `|a| = p` or `|a| > p`.
pub fn gauss_average(a: &ExactRational, p: u64) -> ExactRational {
    gauss_average_by_valuation(vp(a, p), p)
}

pub fn gauss_average_by_valuation(v: Valuation, p: u64) -> ExactRational {
    match v {
        Valuation::Infinite => ExactRational::one(),
        Valuation::Finite(k) if k >= 0 => ExactRational::one(),
        Valuation::Finite(-1) => ExactRational::new(-1, p as i64 - 1),
        Valuation::Finite(_) => ExactRational::zero(),
    }
}

/// Exact average of `θ(λa)` over `λ ∈ (Z/p^k)^×`, computed in the cyclotomic
/// ring `Z[x]/Φ_{p^J}(x)` where `p^J` is the denominator of `frac_part(a)`.
///
/// Requires `k ≥ max(1, −v_p(a))` so that the average is over full unit classes.
pub fn unit_character_average(a: &ExactRational, p: u64, k: u32) -> Result<ExactRational, ExactError> {
    if !is_prime(p) {
        return Err(ExactError::NotPrime(p));
    }
    let f = frac_part(a, p);
    let units = (p - 1) * p.pow(k - 1);
    if f.is_zero() {
        return Ok(ExactRational::one());
    }
    let (j, _) = split_int(f.denom(), p);
    let j = j as u32;
    assert!(k >= j, "precision k={k} below the conductor exponent {j}");
    let pj = p.pow(j);
    let num = f.numer().mod_floor(&BigInt::from(pj)).to_u64().expect("small numerator");
    let mut counts = vec![0i64; pj as usize];
    let pk = p.pow(k);
    for lam in 1..pk {
        if lam % p == 0 {
            continue;
        }
        let m = ((lam as u128 * num as u128) % pj as u128) as usize;
        counts[m] += 1;
    }
    // Reduce modulo Φ_{p^j}(x) = Σ_{i<p} x^{i p^{j-1}}.
    let step = (pj / p) as usize;
    let deg = (p as usize - 1) * step;
    for m in deg..pj as usize {
        let c = counts[m];
        if c == 0 {
            continue;
        }
        counts[m] = 0;
        let r = m - deg;
        for i in 0..(p as usize - 1) {
            counts[i * step + r] -= c;
        }
    }
    if let Some(pos) = counts.iter().skip(1).position(|&c| c != 0) {
        return Err(ExactError::NotRational(pos + 1));
    }
    Ok(ExactRational::new(counts[0], units as i64))
}

/// Inclusive range of valuations `[v_min, v_max]` for one coordinate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValuationWindow {
    pub v_min: i64,
    pub v_max: i64,
}

impl ValuationWindow {
    pub fn new(v_min: i64, v_max: i64) -> Self {
        ValuationWindow { v_min, v_max }
    }

    pub fn is_empty(&self) -> bool {
        self.v_min > self.v_max
    }

    /// Haar measure of `{x : v_min ≤ v(x) ≤ v_max}`.
    pub fn measure(&self, p: u64) -> ExactRational {
        if self.is_empty() {
            return ExactRational::zero();
        }
        ExactRational::p_power(p, -self.v_min) - ExactRational::p_power(p, -self.v_max - 1)
    }
}

/// One cell `Π_i (r_i + p^{v_i + m} Z_p)` of an enumerated region, where
/// `v_i` is the valuation of `r_i` and `m` is `precision_exponent`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionCell {
    pub representative: Vec<ExactRational>,
    pub measure: ExactRational,
    pub precision_exponent: u32,
}

/// Cells of one coordinate: all `u·p^k` with `k` in the window and `u` a unit
/// residue modulo `p^m`.
fn shell_cells(w: &ValuationWindow, m: u32, p: u64) -> Vec<(ExactRational, ExactRational)> {
    let mut out = Vec::new();
    if w.is_empty() {
        return out;
    }
    let pm = p.pow(m);
    for k in w.v_min..=w.v_max {
        let scale = ExactRational::p_power(p, k);
        let meas = ExactRational::p_power(p, -k - m as i64);
        for u in 1..pm {
            if u % p != 0 {
                out.push((&scale * &ExactRational::from_int(u as i64), meas.clone()));
            }
        }
    }
    out
}

/// Iterator over the product of per-coordinate shell cells.
pub struct RegionIter {
    axes: Vec<Vec<(ExactRational, ExactRational)>>,
    idx: Vec<usize>,
    m: u32,
    done: bool,
}

impl Iterator for RegionIter {
    type Item = RegionCell;

    fn next(&mut self) -> Option<RegionCell> {
        if self.done {
            return None;
        }
        let mut rep = Vec::with_capacity(self.axes.len());
        let mut meas = ExactRational::one();
        for (axis, &i) in self.axes.iter().zip(&self.idx) {
            rep.push(axis[i].0.clone());
            meas *= &axis[i].1;
        }
        // Odometer step.
        let mut d = 0;
        loop {
            if d == self.idx.len() {
                self.done = true;
                break;
            }
            self.idx[d] += 1;
            if self.idx[d] < self.axes[d].len() {
                break;
            }
            self.idx[d] = 0;
            d += 1;
        }
        Some(RegionCell {
            representative: rep,
            measure: meas,
            precision_exponent: self.m,
        })
    }
}

/// Enumerate the product of valuation windows at residue precision `m ≥ 1`.
///
/// Each coordinate's shell `v = k` is split into the `p^m(1 − 1/p)` cells
/// `u p^k + p^{k+m} Z_p`, each of measure `p^{-k-m}`.
pub fn enumerate_region(windows: &[ValuationWindow], m: u32, p: u64) -> RegionIter {
    assert!(m >= 1, "residue precision must be at least 1");
    let axes: Vec<_> = windows.iter().map(|w| shell_cells(w, m, p)).collect();
    let done = axes.is_empty() || axes.iter().any(|a| a.is_empty());
    RegionIter {
        idx: vec![0; axes.len()],
        axes,
        m,
        done,
    }
}

/// Compare two valuations against a strict bound helper used by predicates.
pub fn vmin(vals: &[Valuation]) -> Valuation {
    vals.iter().copied().min().unwrap_or(Valuation::Infinite)
}

/// Orders rationals by their p-adic absolute value.
pub fn cmp_abs_p(a: &ExactRational, b: &ExactRational, p: u64) -> Ordering {
    vp(b, p).cmp(&vp(a, p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn q(n: i64, d: i64) -> ExactRational {
        ExactRational::new(n, d)
    }

    #[test]
    fn valuation_examples() {
        assert_eq!(vp(&ExactRational::zero(), 5), Valuation::Infinite);
        assert_eq!(vp(&q(3, 4), 2), Valuation::Finite(-2));
        assert_eq!(vp(&q(50, 3), 5), Valuation::Finite(2));
        assert!(Valuation::Finite(1_000_000) < Valuation::Infinite);
    }

    #[test]
    fn frac_part_examples() {
        assert_eq!(frac_part(&q(7, 4), 2), q(3, 4));
        assert_eq!(frac_part(&q(3, 1), 5), ExactRational::zero());
        let f = frac_part(&q(1, 6), 3);
        let hits: Vec<_> = (0..3)
            .filter(|&k| vp(&(q(1, 6) - q(k, 3)), 3) >= Valuation::Finite(0))
            .collect();
        assert_eq!(hits.len(), 1);
        assert_eq!(f, q(hits[0], 3));
        assert_eq!(frac_part(&q(-1, 9), 3), q(8, 9));
    }

    #[test]
    fn theta_examples() {
        assert!((theta(&q(17, 1), 7) - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        let z = theta(&q(1, 5), 5);
        assert!((z.powu(5) - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        assert!((z - Complex64::new(1.0, 0.0)).norm() > 0.1);
        for p in [2u64, 3, 5, 7] {
            let s: Complex64 = (0..p as i64).map(|k| theta(&q(k, p as i64), p)).sum();
            assert!(s.norm() < 1e-12);
        }
    }

    #[test]
    fn gauss_average_examples() {
        assert_eq!(gauss_average(&q(3, 1), 5), ExactRational::one());
        assert_eq!(gauss_average(&q(1, 5), 5), q(-1, 4));
        assert_eq!(gauss_average(&q(1, 25), 5), ExactRational::zero());
        assert_eq!(gauss_average(&ExactRational::zero(), 5), ExactRational::one());
    }

    #[test]
    fn gauss_average_matches_cyclotomic_sum() {
        for p in [2u64, 3, 5] {
            for v in -3i64..=2 {
                for u in [1i64, 2, 4, 7] {
                    if u as u64 % p == 0 {
                        continue;
                    }
                    let a = &ExactRational::p_power(p, v) * &q(u, 1);
                    let k = (-v).max(1) as u32;
                    assert_eq!(unit_character_average(&a, p, k).unwrap(), gauss_average(&a, p));
                    assert_eq!(unit_character_average(&a, p, k + 1).unwrap(), gauss_average(&a, p));
                }
            }
        }
    }

    #[test]
    fn region_examples() {
        let cells: Vec<_> = enumerate_region(&[ValuationWindow::new(0, 0)], 1, 3).collect();
        assert_eq!(cells.len(), 2);
        assert!(cells.iter().all(|c| c.measure == q(1, 3)));
        let total: ExactRational = enumerate_region(&[ValuationWindow::new(-2, -2)], 1, 2)
            .map(|c| c.measure)
            .sum();
        assert_eq!(total, q(2, 1));
        let m = 3;
        let total: ExactRational = enumerate_region(&[ValuationWindow::new(0, m)], 2, 3)
            .map(|c| c.measure)
            .sum();
        assert_eq!(total, ExactRational::one() - ExactRational::p_power(3, -(m + 1)));
        assert_eq!(enumerate_region(&[ValuationWindow::new(1, 0)], 1, 3).count(), 0);
    }

    #[test]
    fn region_product_measure() {
        let w = [ValuationWindow::new(-1, 1), ValuationWindow::new(0, 2)];
        let total: ExactRational = enumerate_region(&w, 1, 2).map(|c| c.measure).sum();
        assert_eq!(total, w[0].measure(2) * w[1].measure(2));
        for c in enumerate_region(&w, 2, 3) {
            for r in &c.representative {
                assert!(vp(r, 3).finite().is_some());
            }
        }
    }

    fn arb_rat() -> impl Strategy<Value = ExactRational> {
        (-10_000i64..10_000, 1i64..5_000).prop_map(|(n, d)| q(n, d))
    }

    proptest! {
        #[test]
        fn valuation_is_a_valuation(a in arb_rat(), b in arb_rat(), pi in 0usize..4) {
            let p = [2u64, 3, 5, 7][pi];
            prop_assert_eq!(vp(&(&a * &b), p), vp(&a, p) + vp(&b, p));
            prop_assert!(vp(&(&a + &b), p) >= vp(&a, p).min(vp(&b, p)));
        }

        #[test]
        fn vp_of_constructed_power(k in -8i64..=8, u in 1i64..1000, pi in 0usize..4) {
            let p = [2u64, 3, 5, 7][pi];
            prop_assume!(u % p as i64 != 0);
            let r = &ExactRational::p_power(p, k) * &q(u, 1);
            prop_assert_eq!(vp(&r, p), Valuation::Finite(k));
        }

        #[test]
        fn theta_is_additive(a in arb_rat(), b in arb_rat(), pi in 0usize..4) {
            let p = [2u64, 3, 5, 7][pi];
            let lhs = theta(&(&a + &b), p);
            let rhs = theta(&a, p) * theta(&b, p);
            prop_assert!((lhs - rhs).norm() < 1e-12);
        }

        #[test]
        fn frac_part_is_representative(a in arb_rat(), pi in 0usize..4) {
            let p = [2u64, 3, 5, 7][pi];
            let f = frac_part(&a, p);
            prop_assert!(f >= ExactRational::zero() && f < ExactRational::one());
            prop_assert!(vp(&(&a - &f), p) >= Valuation::Finite(0));
        }
    }
}
