//! Archimedean Jacquet integrals at diagonal `g = diag(y1√y2, √y2, 1/(y1√y2), 1/√y2)`:
//! Bessel `K` of complex order, the two-dimensional integral representation,
//! its one-dimensional three-Bessel reduction, the table integral that
//! collapses the inner variable, the normalized Jacquet integral and a
//! numerical monitor for its growth in the imaginary directions.
//!
//! Every integral over `(0, ∞)` is taken in the logarithmic variable, where
//! the integrands decay double exponentially, and evaluated with trapezoidal
//! sums whose step is halved until consecutive levels agree.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ArchError {
    #[error("quadrature missed tolerance {tol:e} after {nodes} nodes (last change {change:e})")]
    Budget { tol: f64, nodes: usize, change: f64 },
    #[error("Bessel argument must be positive, got {0}")]
    NonPositive(f64),
    #[error("Bessel order {0} has |Re s| > 2")]
    OrderOutOfRange(Complex64),
    #[error("Gamma has a pole at {0}")]
    GammaPole(Complex64),
    #[error("spectral parameter {0} has |Re| > 1/2")]
    SpectralRange(Complex64),
    #[error("torus coordinates must be positive, got ({0}, {1})")]
    TorusRange(f64, f64),
}

// ---------------------------------------------------------------------------
// Quadrature
// ---------------------------------------------------------------------------

/// Controls for [`integrate_line`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineRule {
    /// Relative tolerance between consecutive levels.
    pub tol: f64,
    /// Node budget summed over all levels.
    pub max_nodes: usize,
    /// Initial step.
    pub h0: f64,
}

impl LineRule {
    pub fn with_tol(tol: f64) -> Self {
        LineRule { tol, max_nodes: 1 << 20, h0: 0.25 }
    }
}

/// Relative size below which integrand values count as zero when
/// looking for the ends of the support.
const NEGLIGIBLE: f64 = 1e-18;

/// `∫_ℝ f(u) du` for an analytic `f` with rapid decay in both directions.
///
/// The support is found by walking outward from `center` at the initial
/// step until four consecutive values are negligible, then the step is
/// halved until two levels agree to `rule.tol` (relative) or to rounding
/// in `h·Σ|f|`.
pub fn integrate_line<F>(f: F, center: f64, rule: LineRule) -> Result<Complex64, ArchError>
where
    F: Fn(f64) -> Complex64 + Sync,
{
    let h0 = rule.h0;
    let mut peak = 0.0f64;
    let mut coarse: Vec<(f64, Complex64)> = Vec::new();
    let v0 = f(center);
    peak = peak.max(v0.norm());
    coarse.push((center, v0));
    let mut ends = [center, center];
    for (side, dir) in [(0usize, -1.0f64), (1, 1.0)] {
        let mut quiet = 0;
        let mut k = 1;
        while quiet < 4 {
            let u = center + dir * k as f64 * h0;
            let v = f(u);
            let a = v.norm();
            if !a.is_finite() {
                return Err(ArchError::Budget { tol: rule.tol, nodes: coarse.len(), change: f64::INFINITY });
            }
            peak = peak.max(a);
            quiet = if a <= NEGLIGIBLE * peak { quiet + 1 } else { 0 };
            coarse.push((u, v));
            ends[side] = u;
            k += 1;
            if coarse.len() > rule.max_nodes {
                return Err(ArchError::Budget { tol: rule.tol, nodes: coarse.len(), change: f64::INFINITY });
            }
        }
    }
    let mut nodes = coarse.len();
    let mut abs_sum: f64 = coarse.iter().map(|(_, v)| v.norm()).sum();
    let mut sum: Complex64 = coarse.iter().map(|(_, v)| *v).sum();
    let mut h = h0;
    let mut estimate = sum * h;
    let mut level = 0;
    loop {
        let count = ((ends[1] - ends[0]) / h).round() as usize;
        let half = h / 2.0;
        let mids: Vec<Complex64> = (0..count)
            .into_par_iter()
            .map(|i| f(ends[0] + half + i as f64 * h))
            .collect();
        nodes += mids.len();
        sum += mids.iter().sum::<Complex64>();
        abs_sum += mids.iter().map(|v| v.norm()).sum::<f64>();
        h = half;
        level += 1;
        let next = sum * h;
        let change = (next - estimate).norm();
        let floor = 64.0 * f64::EPSILON * abs_sum * h;
        estimate = next;
        if level >= 2 && change <= (rule.tol * next.norm()).max(floor) {
            return Ok(next);
        }
        if nodes > rule.max_nodes {
            return Err(ArchError::Budget { tol: rule.tol, nodes, change });
        }
    }
}

/// `∫_0^∞ f(t) dt/t`, integrated in `u = log t`.
pub fn integrate_dt_over_t<F>(f: F, rule: LineRule) -> Result<Complex64, ArchError>
where
    F: Fn(f64) -> Complex64 + Sync,
{
    integrate_line(|u| f(u.exp()), 0.0, rule)
}

// ---------------------------------------------------------------------------
// Bessel K and Gamma
// ---------------------------------------------------------------------------

/// `K_s(x) = ∫_0^∞ exp(−x cosh t) cosh(st) dt` with relative tolerance `1e-12`.
pub fn bessel_k(s: Complex64, x: f64) -> Result<Complex64, ArchError> {
    bessel_k_tol(s, x, 1e-12)
}

/// Contour height for order `s` at argument `x`: the integral
/// `½∫_ℝ exp(−x cosh τ − sτ) dτ` is moved to `Im τ = α`. For `x ≥ |Im s|`
/// the line passes through the saddle `α = −arcsin(Im s/x)`; below that
/// the saddles sit near `Im τ = ∓π/2` and the line stops `1/|Im s|` short,
/// which bounds the cancellation by a factor `e`.
fn contour_height(s: Complex64, x: f64) -> f64 {
    let nu = s.im.abs();
    let near_axis = (1.0 / nu).min(PI / 2.0);
    let saddle = (nu / x).min(1.0).asin();
    -s.im.signum() * saddle.min(PI / 2.0 - near_axis)
}

pub fn bessel_k_tol(s: Complex64, x: f64, tol: f64) -> Result<Complex64, ArchError> {
    if !(x > 0.0) {
        return Err(ArchError::NonPositive(x));
    }
    if s.re.abs() > 2.0 {
        return Err(ArchError::OrderOutOfRange(s));
    }
    let alpha = if s.im == 0.0 { 0.0 } else { contour_height(s, x) };
    let shift = Complex64::new(0.0, alpha);
    // Peak of |integrand| sits where x cos α sinh t = −Re s.
    let center = (-s.re / (x * alpha.cos())).asinh();
    let rule = LineRule { tol, max_nodes: 1 << 18, h0: 0.25 };
    let v = integrate_line(
        |t| {
            let tau = Complex64::new(t, 0.0) + shift;
            0.5 * (-x * tau.cosh() - s * tau).exp()
        },
        center,
        rule,
    )?;
    Ok(v)
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// `log Γ(z)` (some branch) by the Lanczos approximation with reflection.
pub fn ln_gamma(z: Complex64) -> Result<Complex64, ArchError> {
    if z.im == 0.0 && z.re <= 0.0 && z.re == z.re.round() {
        return Err(ArchError::GammaPole(z));
    }
    if z.re < 0.5 {
        let s = (PI * z).sin();
        if s.norm() == 0.0 {
            return Err(ArchError::GammaPole(z));
        }
        return Ok(Complex64::new(PI.ln(), 0.0) - s.ln() - ln_gamma(1.0 - z)?);
    }
    let z = z - 1.0;
    let mut a = Complex64::new(LANCZOS[0], 0.0);
    for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (z + i as f64);
    }
    let t = z + LANCZOS_G + 0.5;
    Ok(0.5 * (2.0 * PI).ln() + (z + 0.5) * t.ln() - t + a.ln())
}

pub fn gamma(z: Complex64) -> Result<Complex64, ArchError> {
    Ok(ln_gamma(z)?.exp())
}

// ---------------------------------------------------------------------------
// Jacquet integrals
// ---------------------------------------------------------------------------

/// Spectral coordinates `μ1 = (ν1+ν2)/2`, `μ2 = (ν1−ν2)/2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralPoint {
    pub mu1: Complex64,
    pub mu2: Complex64,
}

impl SpectralPoint {
    pub fn new(mu1: Complex64, mu2: Complex64) -> Result<Self, ArchError> {
        for m in [mu1, mu2] {
            if m.re.abs() > 0.5 {
                return Err(ArchError::SpectralRange(m));
            }
        }
        Ok(SpectralPoint { mu1, mu2 })
    }

    pub fn real(mu1: f64, mu2: f64) -> Result<Self, ArchError> {
        Self::new(Complex64::new(mu1, 0.0), Complex64::new(mu2, 0.0))
    }

    pub fn from_nu(nu1: Complex64, nu2: Complex64) -> Result<Self, ArchError> {
        Self::new((nu1 + nu2) / 2.0, (nu1 - nu2) / 2.0)
    }

    pub fn swapped(self) -> Self {
        SpectralPoint { mu1: self.mu2, mu2: self.mu1 }
    }

    pub fn conj(self) -> Self {
        SpectralPoint { mu1: self.mu1.conj(), mu2: self.mu2.conj() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TorusPointR {
    pub y1: f64,
    pub y2: f64,
}

impl TorusPointR {
    pub fn new(y1: f64, y2: f64) -> Result<Self, ArchError> {
        if !(y1 > 0.0 && y2 > 0.0) {
            return Err(ArchError::TorusRange(y1, y2));
        }
        Ok(TorusPointR { y1, y2 })
    }
}

/// Tolerance of the Bessel evaluations nested inside the Jacquet integrals.
const INNER_TOL: f64 = 1e-12;

/// Integrand of the two-dimensional representation at `(t1, t2)`, without
/// the measure `dt1/t1 dt2/t2`.
pub fn integrand_2d(pt: SpectralPoint, g: TorusPointR, t1: f64, t2: f64) -> Result<Complex64, ArchError> {
    let (y1, y2) = (g.y1, g.y2);
    let e = (-PI * (y1 * y1 * y2 / (t1 * t1) + t1 * t1 / y2 + y2 / (t2 * t2) + y2 * t2 * t2)).exp();
    if e == 0.0 {
        return Ok(Complex64::new(0.0, 0.0));
    }
    let k2 = bessel_k_tol(pt.mu2, 2.0 * PI * t1 / t2, INNER_TOL)?;
    let k1 = bessel_k_tol(pt.mu1, 2.0 * PI * t1 * t2, INNER_TOL)?;
    Ok(k2 * k1 * e)
}

/// Integrand of the one-dimensional reduction at `t`, without `dt/t`.
pub fn integrand_1d(pt: SpectralPoint, g: TorusPointR, t: f64) -> Result<Complex64, ArchError> {
    let (y1, y2) = (g.y1, g.y2);
    let w = 2.0 * PI * y2 * (1.0 + 1.0 / (t * t)).sqrt();
    let z = 2.0 * PI * y1 * (1.0 + t * t).sqrt();
    // Each factor decays like exp(−argument); skip nodes far below rounding.
    if 2.0 * PI * y1 * t + z + w > 1400.0 {
        return Ok(Complex64::new(0.0, 0.0));
    }
    let a = bessel_k_tol(pt.mu2, 2.0 * PI * y1 * t, INNER_TOL)?;
    let b = bessel_k_tol(pt.mu1, z, INNER_TOL)?;
    let c = bessel_k_tol(pt.mu1, w, INNER_TOL)?;
    Ok(a * b * c)
}

/// Runs `f` and records the first error raised inside an integrand.
fn guarded<T>(
    run: impl FnOnce(&(dyn Fn(Result<Complex64, ArchError>) -> Complex64 + Sync)) -> Result<T, ArchError>,
) -> Result<T, ArchError> {
    let first: std::sync::Mutex<Option<ArchError>> = std::sync::Mutex::new(None);
    let unwrap = |r: Result<Complex64, ArchError>| match r {
        Ok(v) => v,
        Err(e) => {
            first.lock().unwrap().get_or_insert(e);
            Complex64::new(0.0, 0.0)
        }
    };
    let out = run(&unwrap);
    match first.into_inner().unwrap() {
        Some(e) => Err(e),
        None => out,
    }
}

/// The two-dimensional integral over `(t1, t2) ∈ (0,∞)²` against `dt1/t1 dt2/t2`.
pub fn jacquet_2d(pt: SpectralPoint, g: TorusPointR, tol: f64) -> Result<Complex64, ArchError> {
    let inner_rule = LineRule::with_tol(tol * 0.1);
    guarded(|unwrap| {
        integrate_line(
            |u2| {
                let t2 = u2.exp();
                let inner = integrate_line(|u1| unwrap(integrand_2d(pt, g, u1.exp(), t2)), centre_t1(g), inner_rule);
                unwrap(inner)
            },
            0.0,
            LineRule::with_tol(tol),
        )
    })
}

/// `log t1` where the Gaussian factor in `t1` peaks.
fn centre_t1(g: TorusPointR) -> f64 {
    0.5 * (g.y1 * g.y2).ln()
}

/// The one-dimensional three-Bessel integral against `dt/t`, without any
/// prefactor.
pub fn jacquet_1d(pt: SpectralPoint, g: TorusPointR, tol: f64) -> Result<Complex64, ArchError> {
    guarded(|unwrap| integrate_dt_over_t(|t| unwrap(integrand_1d(pt, g, t)), LineRule::with_tol(tol)))
}

/// Ratio of the two-dimensional integral to the one-dimensional integral,
/// as measured by [`reduction_check`] on every tested point. It is
/// positive and equal to one, not `−4`.
pub const REDUCTION_FACTOR: f64 = 1.0;

/// The prefactor printed in front of the one-dimensional reduction.
pub const PRINTED_REDUCTION_FACTOR: f64 = -4.0;

/// Comparison of the two representations at one point.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReductionReport {
    pub point: SpectralPoint,
    pub g: TorusPointR,
    pub two_d: Complex64,
    pub one_d: Complex64,
    /// `two_d / one_d`.
    pub ratio: Complex64,
    /// `| |two_d| − 4|one_d| | / |two_d|`.
    pub printed_rel_error: f64,
    /// `|two_d − REDUCTION_FACTOR·one_d| / |two_d|`.
    pub measured_rel_error: f64,
    pub printed_holds: bool,
    pub measured_holds: bool,
}

pub fn reduction_check(pt: SpectralPoint, g: TorusPointR, tol: f64) -> Result<ReductionReport, ArchError> {
    let quad = (tol * 1e-3).max(1e-11);
    let two_d = jacquet_2d(pt, g, quad)?;
    let one_d = jacquet_1d(pt, g, quad)?;
    let printed_rel_error = (two_d.norm() - PRINTED_REDUCTION_FACTOR.abs() * one_d.norm()).abs() / two_d.norm();
    let measured_rel_error = (two_d - REDUCTION_FACTOR * one_d).norm() / two_d.norm();
    Ok(ReductionReport {
        point: pt,
        g,
        two_d,
        one_d,
        ratio: two_d / one_d,
        printed_rel_error,
        measured_rel_error,
        printed_holds: printed_rel_error < tol,
        measured_holds: measured_rel_error < tol,
    })
}

/// Both sides of `∫_0^∞ K_ν(zw/x) exp(−x/2 − (z²+w²)/(2x)) dx/x = 2K_ν(z)K_ν(w)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CollapseReport {
    pub nu: Complex64,
    pub z: f64,
    pub w: f64,
    pub lhs: Complex64,
    pub rhs: Complex64,
    pub rel_error: f64,
    pub pass: bool,
}

pub fn collapse_lhs(nu: Complex64, z: f64, w: f64, tol: f64) -> Result<Complex64, ArchError> {
    let rule = LineRule::with_tol(tol);
    // The Gaussian part peaks at x = √(z²+w²).
    let centre = 0.5 * (z * z + w * w).ln();
    guarded(|unwrap| {
        integrate_line(
            |u| {
                let x = u.exp();
                let e = (-x / 2.0 - (z * z + w * w) / (2.0 * x)).exp();
                if e == 0.0 {
                    return Complex64::new(0.0, 0.0);
                }
                unwrap(bessel_k_tol(nu, z * w / x, INNER_TOL)) * e
            },
            centre,
            rule,
        )
    })
}

pub fn gr_collapse_check(nu: Complex64, z: f64, w: f64, tol: f64) -> Result<CollapseReport, ArchError> {
    let lhs = collapse_lhs(nu, z, w, (tol * 1e-3).max(1e-12))?;
    let rhs = 2.0 * bessel_k(nu, z)? * bessel_k(nu, w)?;
    let rel_error = (lhs - rhs).norm() / rhs.norm();
    Ok(CollapseReport { nu, z, w, lhs, rhs, rel_error, pass: rel_error < tol })
}

/// Which representation feeds [`normalized_jacquet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum JacquetRoute {
    TwoD,
    /// The one-dimensional integral times [`REDUCTION_FACTOR`].
    OneD,
}

/// `16π² y1² y2^{3/2} I_ν(g) / (Γ((μ2+μ1+1)/2) Γ((μ2−μ1+1)/2) Γ(μ2+½) Γ(μ1+½))`.
pub fn normalized_jacquet(
    pt: SpectralPoint,
    g: TorusPointR,
    route: JacquetRoute,
    tol: f64,
) -> Result<Complex64, ArchError> {
    let (m1, m2) = (pt.mu1, pt.mu2);
    let ln_den = ln_gamma((m2 + m1 + 1.0) / 2.0)?
        + ln_gamma((m2 - m1 + 1.0) / 2.0)?
        + ln_gamma(m2 + 0.5)?
        + ln_gamma(m1 + 0.5)?;
    let i = match route {
        JacquetRoute::TwoD => jacquet_2d(pt, g, tol)?,
        JacquetRoute::OneD => REDUCTION_FACTOR * jacquet_1d(pt, g, tol)?,
    };
    let pre = 16.0 * PI * PI * g.y1 * g.y1 * g.y2.powf(1.5);
    Ok(pre * i * (-ln_den).exp())
}

/// One point of the growth sweep.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BoundPoint {
    pub mu1: Complex64,
    pub mu2: Complex64,
    pub value_abs: f64,
    /// `|J| / ((1+|Im μ1|)^0.6 (1+|Im μ2|)^0.6 (1+|Im μ1|+|Im μ2|))`.
    pub ratio: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BoundReport {
    pub g: TorusPointR,
    pub points: Vec<BoundPoint>,
    pub max_ratio: f64,
    pub finite: bool,
}

pub fn bound_weight(mu1: Complex64, mu2: Complex64) -> f64 {
    let (a, b) = (mu1.im.abs(), mu2.im.abs());
    (1.0 + a).powf(0.6) * (1.0 + b).powf(0.6) * (1.0 + a + b)
}

/// Sweeps `Im μ1, Im μ2` over `imag` and `Re μ1 = Re μ2` over `real`.
pub fn bound_monitor(imag: &[f64], real: &[f64], g: TorusPointR, tol: f64) -> Result<BoundReport, ArchError> {
    let grid: Vec<(Complex64, Complex64)> = real
        .iter()
        .flat_map(|&r| {
            imag.iter()
                .flat_map(move |&a| imag.iter().map(move |&b| (Complex64::new(r, a), Complex64::new(r, b))))
        })
        .collect();
    let points = grid
        .into_par_iter()
        .map(|(mu1, mu2)| {
            let pt = SpectralPoint::new(mu1, mu2)?;
            let j = normalized_jacquet(pt, g, JacquetRoute::OneD, tol)?;
            Ok(BoundPoint { mu1, mu2, value_abs: j.norm(), ratio: j.norm() / bound_weight(mu1, mu2) })
        })
        .collect::<Result<Vec<_>, ArchError>>()?;
    let max_ratio = points.iter().map(|p| p.ratio).fold(0.0, f64::max);
    let finite = points.iter().all(|p| p.ratio.is_finite());
    Ok(BoundReport { g, points, max_ratio, finite })
}

/// `n` equally spaced values in `[−extent, extent]`.
pub fn symmetric_grid(extent: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.0];
    }
    (0..n).map(|i| -extent + 2.0 * extent * i as f64 / (n - 1) as f64).collect()
}

// ---------------------------------------------------------------------------
// Bessel envelope
// ---------------------------------------------------------------------------

/// `K_{1/2}(x) = √(π/(2x)) e^{−x}`.
pub fn k_half_closed_form(x: f64) -> f64 {
    (PI / (2.0 * x)).sqrt() * (-x).exp()
}

/// The two-case envelope for `|Re s| ≤ σ`: `((1+|Im s|)/x)^{σ+ε} e^{−π|Im s|/2}`
/// when `x ≤ 1 + π|Im s|/2`, and `e^{−x} x^{−1/2}` beyond. The flag is
/// `true` in the small-`x` case.
pub fn bessel_envelope(s: Complex64, x: f64, sigma: f64, eps: f64) -> (f64, bool) {
    let t = s.im.abs();
    if x <= 1.0 + PI * t / 2.0 {
        (((1.0 + t) / x).powf(sigma + eps) * (-PI * t / 2.0).exp(), true)
    } else {
        ((-x).exp() / x.sqrt(), false)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnvelopeSample {
    pub s: Complex64,
    pub x: f64,
    pub value_abs: f64,
    pub envelope: f64,
    pub ratio: f64,
    pub small_x: bool,
}

/// Smallest constants making the envelope an upper bound on a grid.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnvelopeFit {
    pub sigma: f64,
    pub eps: f64,
    pub samples: Vec<EnvelopeSample>,
    pub constant_small_x: f64,
    pub constant_large_x: f64,
    /// Largest constant per `|Im s|`, in the order of the grid.
    pub by_imag: Vec<(f64, f64)>,
    pub constant: f64,
}

/// Default sweep: `Re s ∈ {0, σ/2, σ}`, `Im s ∈ {0, ½, 1, 2, 5, 10, 20}`,
/// 40 log-spaced `x` in `[0.05, 60]`.
pub fn default_envelope_grid(sigma: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let re = vec![0.0, sigma / 2.0, sigma];
    let im = vec![0.0, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0];
    let (lo, hi) = (0.05f64.ln(), 60f64.ln());
    let xs = (0..40).map(|i| (lo + (hi - lo) * i as f64 / 39.0).exp()).collect();
    (re, im, xs)
}

pub fn envelope_fit(re: &[f64], im: &[f64], xs: &[f64], sigma: f64, eps: f64) -> Result<EnvelopeFit, ArchError> {
    let grid: Vec<(Complex64, f64)> = re
        .iter()
        .flat_map(|&a| im.iter().flat_map(move |&b| xs.iter().map(move |&x| (Complex64::new(a, b), x))))
        .collect();
    let samples = grid
        .into_par_iter()
        .map(|(s, x)| {
            let value_abs = bessel_k(s, x)?.norm();
            let (envelope, small_x) = bessel_envelope(s, x, sigma, eps);
            Ok(EnvelopeSample { s, x, value_abs, envelope, ratio: value_abs / envelope, small_x })
        })
        .collect::<Result<Vec<_>, ArchError>>()?;
    let max_where = |keep: &dyn Fn(&EnvelopeSample) -> bool| {
        samples.iter().filter(|s| keep(s)).map(|s| s.ratio).fold(0.0, f64::max)
    };
    let constant_small_x = max_where(&|s| s.small_x);
    let constant_large_x = max_where(&|s| !s.small_x);
    let by_imag = im.iter().map(|&b| (b, max_where(&|s| s.s.im == b))).collect();
    Ok(EnvelopeFit {
        sigma,
        eps,
        constant: constant_small_x.max(constant_large_x),
        samples,
        constant_small_x,
        constant_large_x,
        by_imag,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn k_half_matches_closed_form() {
        for x in [0.5, 1.0, 5.0] {
            let k = bessel_k(c(0.5, 0.0), x).unwrap();
            assert!((k.re - k_half_closed_form(x)).abs() < 1e-10 * k_half_closed_form(x), "{x} {k}");
            assert!(k.im.abs() < 1e-15);
        }
    }

    #[test]
    fn k_is_even_in_order() {
        for (s, x) in [(c(0.3, 1.7), 0.8), (c(-0.2, 6.0), 3.0), (c(0.45, -12.0), 9.0), (c(1.5, 0.25), 0.1)] {
            let a = bessel_k(s, x).unwrap();
            let b = bessel_k(-s, x).unwrap();
            assert!((a - b).norm() <= 1e-12 * a.norm(), "{s} {x}: {a} {b}");
        }
    }

    #[test]
    fn k_satisfies_recurrence() {
        // K_{s+1} − K_{s−1} = (2s/x) K_s.
        for (s, x) in [(c(0.5, 3.0), 2.0), (c(0.0, 15.0), 4.0), (c(0.2, -7.5), 0.7)] {
            let lhs = bessel_k(s + 1.0, x).unwrap() - bessel_k(s - 1.0, x).unwrap();
            let rhs = 2.0 * s / x * bessel_k(s, x).unwrap();
            assert!((lhs - rhs).norm() <= 1e-10 * rhs.norm(), "{s} {x}: {lhs} {rhs}");
        }
    }

    #[test]
    fn k_reference_values() {
        // Frozen from an independent arbitrary-precision evaluation.
        let cases = [
            (c(0.0, 1.0), 1.0, c(0.2894280370259921, 0.0)),
            (c(0.0, 10.0), 2.0, c(1.1735704221220611e-7, 0.0)),
            (c(0.25, 20.0), 5.0, c(-1.0722191057077967e-14, 1.3059650414834538e-15)),
            (c(0.0, 0.0), 0.01, c(4.721244730161095, 0.0)),
            (c(0.25, 5.0), 60.0, c(1.1501724194915702e-27, 2.3795570052227875e-29)),
            (c(0.0, 10.0), 60.0, c(6.175394956726216e-28, 0.0)),
            (c(0.5, 20.0), 33.0, c(2.037598772271432e-18, 6.723412346793315e-19)),
        ];
        for (s, x, want) in cases {
            let got = bessel_k(s, x).unwrap();
            assert!((got - want).norm() <= 1e-9 * want.norm(), "{s} {x}: {got} vs {want}");
        }
    }

    #[test]
    fn envelope_constant_on_default_grid() {
        let (re, im, xs) = default_envelope_grid(0.5);
        let fit = envelope_fit(&re, &im, &xs, 0.5, 0.1).unwrap();
        assert!(fit.constant <= 10.0, "{:?}", fit.by_imag);
    }

    #[test]
    fn large_argument_constant() {
        let x = 20.0;
        let k = bessel_k(c(0.0, 1.0), x).unwrap().norm();
        let ratio = k / ((-x).exp() / x.sqrt());
        assert!(ratio <= 2.0, "{ratio}");
    }

    #[test]
    fn gamma_values() {
        let g = gamma(c(0.5, 0.0)).unwrap();
        assert!((g.re - PI.sqrt()).abs() < 1e-13);
        let g = gamma(c(5.0, 0.0)).unwrap();
        assert!((g.re - 24.0).abs() < 1e-11);
        // |Γ(½ + it)|² = π / cosh(πt).
        for t in [0.3, 4.0, 15.0] {
            let g = gamma(c(0.5, t)).unwrap().norm_sqr();
            let want = PI / (PI * t).cosh();
            assert!((g - want).abs() < 1e-12 * want, "{t}");
        }
        // Γ(z+1) = zΓ(z) across the reflection line.
        let z = c(-0.3, 2.2);
        assert!((gamma(z + 1.0).unwrap() - z * gamma(z).unwrap()).norm() < 1e-12);
        assert!(matches!(gamma(c(-2.0, 0.0)), Err(ArchError::GammaPole(_))));
    }

    #[test]
    fn two_d_integrand_is_positive_for_real_order() {
        let pt = SpectralPoint::real(0.1, 0.2).unwrap();
        let g = TorusPointR::new(1.0, 1.0).unwrap();
        for i in -8..8 {
            for j in -8..8 {
                let v = integrand_2d(pt, g, (i as f64 * 0.3).exp(), (j as f64 * 0.3).exp()).unwrap();
                assert!(v.re >= 0.0 && v.im == 0.0);
            }
        }
    }

    #[test]
    fn two_d_symmetry_under_swap() {
        let pt = SpectralPoint::real(0.1, 0.35).unwrap();
        let g = TorusPointR::new(1.0, 1.0).unwrap();
        let a = jacquet_2d(pt, g, 1e-9).unwrap();
        let b = jacquet_2d(pt.swapped(), g, 1e-9).unwrap();
        assert!((a - b).norm() <= 1e-8 * a.norm());
    }

    #[test]
    fn decay_in_torus() {
        let pt = SpectralPoint::real(0.1, 0.2).unwrap();
        let near = jacquet_2d(pt, TorusPointR::new(1.0, 1.0).unwrap(), 1e-8).unwrap();
        let far = jacquet_2d(pt, TorusPointR::new(4.0, 4.0).unwrap(), 1e-8).unwrap();
        assert!(near.norm() > 10.0 * far.norm());
        let mut last = f64::INFINITY;
        for y1 in [0.5, 1.0, 1.5, 2.0] {
            let v = jacquet_1d(pt, TorusPointR::new(y1, 1.0).unwrap(), 1e-9).unwrap().norm();
            assert!(v < last);
            last = v;
        }
    }

    #[test]
    fn one_d_at_zero_order() {
        let pt = SpectralPoint::real(0.0, 0.0).unwrap();
        let v = jacquet_1d(pt, TorusPointR::new(1.0, 1.0).unwrap(), 1e-9).unwrap();
        assert!(v.re.is_finite() && v.re > 0.0);
    }

    #[test]
    fn reduction_factor_is_stable() {
        let r = reduction_check(
            SpectralPoint::real(0.1, 0.2).unwrap(),
            TorusPointR::new(1.0, 1.0).unwrap(),
            1e-5,
        )
        .unwrap();
        assert!(r.measured_holds, "{r:?}");
        assert!(!r.printed_holds);
    }

    #[test]
    fn collapse_examples() {
        let r = gr_collapse_check(c(0.5, 0.0), 1.0, 1.0, 1e-8).unwrap();
        let closed = 2.0 * k_half_closed_form(1.0).powi(2);
        assert!(r.pass && (r.lhs.re - closed).abs() < 1e-8 * closed);
        assert!(gr_collapse_check(c(0.0, 0.3), 1.0, 2.0, 1e-7).unwrap().pass);
        let a = collapse_lhs(c(0.2, 1.0), 0.7, 2.5, 1e-12).unwrap();
        let b = collapse_lhs(c(0.2, 1.0), 2.5, 0.7, 1e-12).unwrap();
        assert!((a - b).norm() < 1e-10 * a.norm());
    }

    #[test]
    fn normalized_jacquet_symmetries() {
        let g = TorusPointR::new(1.0, 1.0).unwrap();
        let real = SpectralPoint::real(0.1, 0.25).unwrap();
        let j = normalized_jacquet(real, g, JacquetRoute::OneD, 1e-9).unwrap();
        assert!(j.norm().is_finite() && j.norm() > 0.0);
        let pt = SpectralPoint::new(c(0.1, 1.5), c(0.2, -0.7)).unwrap();
        let a = normalized_jacquet(pt, g, JacquetRoute::OneD, 1e-9).unwrap();
        let b = normalized_jacquet(pt.conj(), g, JacquetRoute::OneD, 1e-9).unwrap();
        assert!((a - b.conj()).norm() < 1e-8 * a.norm());
    }

    #[test]
    fn bound_ratio_at_origin() {
        let g = TorusPointR::new(1.0, 1.0).unwrap();
        let r = bound_monitor(&[0.0], &[0.0], g, 1e-9).unwrap();
        let j = normalized_jacquet(SpectralPoint::real(0.0, 0.0).unwrap(), g, JacquetRoute::OneD, 1e-9).unwrap();
        assert!((r.max_ratio - j.norm()).abs() < 1e-9 * j.norm());
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(bessel_k(c(0.0, 0.0), 0.0), Err(ArchError::NonPositive(_))));
        assert!(matches!(bessel_k(c(2.5, 0.0), 1.0), Err(ArchError::OrderOutOfRange(_))));
        assert!(SpectralPoint::real(0.6, 0.0).is_err());
        assert!(TorusPointR::new(-1.0, 1.0).is_err());
    }
}
