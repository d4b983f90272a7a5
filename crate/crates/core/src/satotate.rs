//! The GSp(4) Sato-Tate measure on tempered Satake angles
//! `0 ≤ θ1 ≤ θ2 ≤ π`: the density, quadrature on the triangle, moments of the
//! test functions `g_{a,b,c}`, Sp(4) character orthonormality, and a seeded
//! rejection sampler with a Kolmogorov-Smirnov check.
//!
//! The density as written, `(4/π²)(cos θ1 − cos θ2)² sin²θ1 sin²θ2`, has total
//! mass `1/4` on the triangle. Integrals are taken against the probability
//! measure [`haar_density`], four times that, which is the pushforward of
//! Haar measure on `USp(4)` by the Weyl integration formula.

use std::f64::consts::PI;
use std::num::NonZeroUsize;
use std::sync::OnceLock;

use gauss_quad::legendre::GaussLegendre;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::whittaker_p::{g_abc, sp4_character, SatakePoint, WhittakerError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SatoTateError {
    #[error("angles ({0}, {1}) are outside 0 ≤ θ1 ≤ θ2 ≤ π")]
    OutsideDomain(f64, f64),
    #[error("need b ≤ a, got a = {0}, b = {1}")]
    BadOrder(i64, i64),
    #[error("character weights go up to λ1 = 4, got {0}")]
    GramTooLarge(i64),
    #[error("sample size must be positive")]
    EmptySample,
    #[error(transparent)]
    Whittaker(#[from] WhittakerError),
}

/// A tempered Satake pair `(e^{iθ1}, e^{iθ2})` in its canonical form.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnglePoint {
    pub theta1: f64,
    pub theta2: f64,
}

impl AnglePoint {
    pub fn new(theta1: f64, theta2: f64) -> Result<Self, SatoTateError> {
        if !(0.0 <= theta1 && theta1 <= theta2 && theta2 <= PI) {
            return Err(SatoTateError::OutsideDomain(theta1, theta2));
        }
        Ok(AnglePoint { theta1, theta2 })
    }

    pub fn satake(self) -> SatakePoint {
        SatakePoint::GSp4(Complex64::from_polar(1.0, self.theta1), Complex64::from_polar(1.0, self.theta2))
    }
}

/// `(4/π²)(cos θ1 − cos θ2)² sin²θ1 sin²θ2`, as written.
pub fn density(pt: AnglePoint) -> f64 {
    let (c1, c2) = (pt.theta1.cos(), pt.theta2.cos());
    let (s1, s2) = (pt.theta1.sin(), pt.theta2.sin());
    4.0 / (PI * PI) * (c1 - c2).powi(2) * s1 * s1 * s2 * s2
}

/// Total mass of [`density`] on the triangle: `(4/π²)·(π²/16)`.
pub const PRINTED_MASS: f64 = 0.25;

/// The Sato-Tate probability density on the triangle, `density / PRINTED_MASS`.
pub fn haar_density(pt: AnglePoint) -> f64 {
    density(pt) / PRINTED_MASS
}

/// Default number of Gauss-Legendre nodes per direction.
pub const DEFAULT_NODES: usize = 200;

/// Gauss-Legendre `(node, weight)` pairs on `[−1, 1]`; the default size is cached.
fn legendre(n: usize) -> Vec<(f64, f64)> {
    static DEFAULT: OnceLock<GaussLegendre> = OnceLock::new();
    let build = || GaussLegendre::new(NonZeroUsize::new(n.max(1)).unwrap());
    if n == DEFAULT_NODES {
        DEFAULT.get_or_init(build).as_node_weight_pairs().to_vec()
    } else {
        build().as_node_weight_pairs().to_vec()
    }
}

/// Tensor rule on the triangle through `θ2 = π(1+s)/2`, `θ1 = θ2(1+r)/2`,
/// as `(point, weight)` pairs including the Jacobian `θ2·π/4`.
pub fn triangle_rule(n: usize) -> Vec<(AnglePoint, f64)> {
    let gl = legendre(n);
    let mut out = Vec::with_capacity(gl.len() * gl.len());
    for &(s, ws) in &gl {
        let t2 = PI * (1.0 + s) / 2.0;
        for &(r, wr) in &gl {
            let t1 = t2 * (1.0 + r) / 2.0;
            out.push((AnglePoint { theta1: t1, theta2: t2 }, ws * wr * t2 * PI / 4.0));
        }
    }
    out
}

/// `∫ f dμ_ST` over the triangle with an `n × n` rule.
pub fn integrate_with<F>(f: F, n: usize) -> f64
where
    F: Fn(AnglePoint) -> f64 + Sync,
{
    let rule = triangle_rule(n);
    let parts: Vec<f64> = rule
        .par_chunks(n.max(1))
        .map(|row| row.iter().map(|&(pt, w)| w * haar_density(pt) * f(pt)).sum())
        .collect();
    parts.iter().sum()
}

/// Against a different density: `∫ f·d` over the triangle.
pub fn integrate_density<F, D>(f: F, d: D, n: usize) -> f64
where
    F: Fn(AnglePoint) -> f64 + Sync,
    D: Fn(AnglePoint) -> f64 + Sync,
{
    triangle_rule(n).iter().map(|&(pt, w)| w * d(pt) * f(pt)).sum()
}

pub fn integrate<F>(f: F) -> f64
where
    F: Fn(AnglePoint) -> f64 + Sync,
{
    integrate_with(f, DEFAULT_NODES)
}

/// `∫ g_{a,b,c} dμ_ST` at tempered points.
pub fn moment(a: i64, b: i64, c: i64, p: u64) -> Result<Complex64, SatoTateError> {
    if b > a {
        return Err(SatoTateError::BadOrder(a, b));
    }
    // Validate c and the rank once; the integrand below cannot fail after that.
    g_abc(a, b, c, AnglePoint { theta1: 0.0, theta2: 0.0 }.satake(), p)?;
    let value = |pt: AnglePoint| g_abc(a, b, c, pt.satake(), p).expect("validated above");
    let re = integrate(|pt| value(pt).re);
    let im = integrate(|pt| value(pt).im);
    Ok(Complex64::new(re, im))
}

/// One `(a, b, c)` moment.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MomentRecord {
    pub a: i64,
    pub b: i64,
    pub c: i64,
    pub p: u64,
    pub value: Complex64,
    pub expected: f64,
    pub pass: bool,
}

/// Moments for `0 ≤ b ≤ a ≤ a_max`, `c ∈ {0, 1}`; the expected value is
/// `1` at `(0,0,0)` and `0` elsewhere.
pub fn moment_table(a_max: i64, p: u64, tol: f64) -> Result<Vec<MomentRecord>, SatoTateError> {
    let mut out = Vec::new();
    for a in 0..=a_max {
        for b in 0..=a {
            for c in 0..=1 {
                let value = moment(a, b, c, p)?;
                let expected = if (a, b, c) == (0, 0, 0) { 1.0 } else { 0.0 };
                let pass = (value - expected).norm() < tol;
                out.push(MomentRecord { a, b, c, p, value, expected, pass });
            }
        }
    }
    Ok(out)
}

/// Dominant weights `λ1 ≥ λ2 ≥ 0` with `λ1 ≤ lambda_max`.
pub fn dominant_weights(lambda_max: i64) -> Vec<(i64, i64)> {
    (0..=lambda_max).flat_map(|l1| (0..=l1).map(move |l2| (l1, l2))).collect()
}

/// Gram matrix of Sp(4) characters under `μ_ST`, indexed by
/// [`dominant_weights`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CharacterGram {
    pub weights: Vec<(i64, i64)>,
    pub matrix: Vec<Vec<f64>>,
    /// `max |G − I|`.
    pub max_deviation: f64,
}

pub fn character_gram(lambda_max: i64) -> Result<CharacterGram, SatoTateError> {
    if lambda_max > 4 {
        return Err(SatoTateError::GramTooLarge(lambda_max));
    }
    let weights = dominant_weights(lambda_max);
    let rule = triangle_rule(DEFAULT_NODES);
    // Character values at every node, then weighted inner products.
    let values: Vec<Vec<f64>> = weights
        .par_iter()
        .map(|&(l1, l2)| {
            rule.iter()
                .map(|&(pt, _)| sp4_character(l1, l2, pt.theta1, pt.theta2))
                .collect::<Result<Vec<f64>, _>>()
        })
        .collect::<Result<_, _>>()?;
    let w: Vec<f64> = rule.iter().map(|&(pt, w)| w * haar_density(pt)).collect();
    let k = weights.len();
    let mut matrix = vec![vec![0.0; k]; k];
    let mut max_deviation = 0.0f64;
    for i in 0..k {
        for j in 0..k {
            let g: f64 = (0..w.len()).map(|n| w[n] * values[i][n] * values[j][n]).sum();
            matrix[i][j] = g;
            let target = if i == j { 1.0 } else { 0.0 };
            max_deviation = max_deviation.max((g - target).abs());
        }
    }
    Ok(CharacterGram { weights, matrix, max_deviation })
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

/// Accepted samples per independent RNG stream.
const BATCH: usize = 4096;

/// Upper bound for [`haar_density`]: the maximum over a 400×400 grid
/// scan, padded by 10%.
pub fn density_envelope() -> f64 {
    static MAX: OnceLock<f64> = OnceLock::new();
    *MAX.get_or_init(|| {
        let n = 400;
        let mut best = 0.0f64;
        for i in 0..=n {
            for j in i..=n {
                let pt = AnglePoint { theta1: PI * i as f64 / n as f64, theta2: PI * j as f64 / n as f64 };
                best = best.max(haar_density(pt));
            }
        }
        1.1 * best
    })
}

/// `n` points drawn from `μ_ST` by rejection from the uniform law on the
/// triangle. Batch `k` uses stream `k` of a ChaCha generator keyed by
/// `seed`, so the output does not depend on the thread count.
pub fn sample(seed: u64, n: usize) -> Result<Vec<AnglePoint>, SatoTateError> {
    if n == 0 {
        return Err(SatoTateError::EmptySample);
    }
    let envelope = density_envelope();
    let batches = n.div_ceil(BATCH);
    let mut out: Vec<AnglePoint> = (0..batches)
        .into_par_iter()
        .flat_map_iter(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let mut got = Vec::with_capacity(BATCH);
            while got.len() < BATCH {
                let u: f64 = rng.random::<f64>() * PI;
                let v: f64 = rng.random::<f64>() * PI;
                let pt = AnglePoint { theta1: u.min(v), theta2: u.max(v) };
                if rng.random::<f64>() * envelope < haar_density(pt) {
                    got.push(pt);
                }
            }
            got
        })
        .collect();
    out.truncate(n);
    Ok(out)
}

/// Marginal law of `θ1`: density and distribution function, tabulated on
/// a uniform grid from Gauss-Legendre integrals of [`haar_density`].
#[derive(Clone, Debug)]
pub struct Marginal {
    grid: Vec<f64>,
    pdf: Vec<f64>,
    cdf: Vec<f64>,
}

impl Marginal {
    pub fn theta1(points: usize) -> Self {
        let gl = legendre(64);
        let pdf_at = |t1: f64| -> f64 {
            // ∫_{t1}^{π} haar(t1, θ2) dθ2
            let half = (PI - t1) / 2.0;
            gl.iter()
                .map(|&(x, w)| w * half * haar_density(AnglePoint { theta1: t1, theta2: t1 + half * (1.0 + x) }))
                .sum()
        };
        let grid: Vec<f64> = (0..=points).map(|i| PI * i as f64 / points as f64).collect();
        let pdf: Vec<f64> = grid.iter().map(|&t| pdf_at(t)).collect();
        let mut cdf = vec![0.0; grid.len()];
        for i in 1..grid.len() {
            let (a, b) = (grid[i - 1], grid[i]);
            let half = (b - a) / 2.0;
            let piece: f64 = gl.iter().take(64).map(|&(x, w)| w * half * pdf_at(a + half * (1.0 + x))).sum();
            cdf[i] = cdf[i - 1] + piece;
        }
        Marginal { grid, pdf, cdf }
    }

    pub fn total(&self) -> f64 {
        *self.cdf.last().unwrap()
    }

    /// Cubic Hermite interpolation of the distribution function.
    pub fn cdf(&self, t: f64) -> f64 {
        let n = self.grid.len() - 1;
        let h = PI / n as f64;
        let i = ((t / h).floor() as usize).min(n - 1);
        let s = (t - self.grid[i]) / h;
        let (f0, f1) = (self.cdf[i], self.cdf[i + 1]);
        let (d0, d1) = (self.pdf[i] * h, self.pdf[i + 1] * h);
        let s2 = s * s;
        let s3 = s2 * s;
        (2.0 * s3 - 3.0 * s2 + 1.0) * f0 + (s3 - 2.0 * s2 + s) * d0 + (-2.0 * s3 + 3.0 * s2) * f1 + (s3 - s2) * d1
    }
}

/// Outcome of the sampler checks.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SamplerReport {
    pub seed: u64,
    pub n: usize,
    pub ks_statistic: f64,
    /// Asymptotic 1% critical value `1.628/√n`.
    pub ks_critical: f64,
    /// Empirical mean and standard error of `cos θ1 + cos θ2`.
    pub cos_mean: (f64, f64),
    /// Empirical mean and standard error of the `(1,0)` character.
    pub character_mean: (f64, f64),
    pub pass: bool,
}

fn mean_and_error(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, (var / n).sqrt())
}

pub fn sampler_check(seed: u64, n: usize) -> Result<SamplerReport, SatoTateError> {
    let pts = sample(seed, n)?;
    let marginal = Marginal::theta1(4096);
    let mut t1: Vec<f64> = pts.iter().map(|p| p.theta1).collect();
    t1.sort_by(|a, b| a.total_cmp(b));
    let nf = n as f64;
    let ks_statistic = t1
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let f = marginal.cdf(t);
            (f - i as f64 / nf).abs().max(((i + 1) as f64 / nf - f).abs())
        })
        .fold(0.0, f64::max);
    let ks_critical = 1.628 / nf.sqrt();
    let cos: Vec<f64> = pts.iter().map(|p| p.theta1.cos() + p.theta2.cos()).collect();
    let chi: Vec<f64> = pts
        .iter()
        .map(|p| sp4_character(1, 0, p.theta1, p.theta2))
        .collect::<Result<_, _>>()?;
    let cos_mean = mean_and_error(&cos);
    let character_mean = mean_and_error(&chi);
    let pass = ks_statistic < ks_critical
        && cos_mean.0.abs() < 3.0 * cos_mean.1
        && character_mean.0.abs() < 3.0 * character_mean.1
        && pts.iter().all(|p| AnglePoint::new(p.theta1, p.theta2).is_ok());
    Ok(SamplerReport { seed, n, ks_statistic, ks_critical, cos_mean, character_mean, pass })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(a: f64, b: f64) -> AnglePoint {
        AnglePoint::new(a, b).unwrap()
    }

    #[test]
    fn density_examples() {
        assert_eq!(density(pt(1.0, 1.0)), 0.0);
        assert!(density(pt(0.0, 2.0)).abs() < 1e-30);
        assert!(density(pt(PI, PI)).abs() < 1e-30);
        let d = density(pt(PI / 3.0, 2.0 * PI / 3.0));
        assert!((d - 9.0 / (4.0 * PI * PI)).abs() < 1e-15);
        assert!(AnglePoint::new(2.0, 1.0).is_err());
    }

    #[test]
    fn printed_density_has_quarter_mass() {
        let m = integrate_density(|_| 1.0, density, DEFAULT_NODES);
        assert!((m - PRINTED_MASS).abs() < 1e-12);
    }

    #[test]
    fn normalization_and_symmetry() {
        assert!((integrate(|_| 1.0) - 1.0).abs() < 1e-8);
        assert!(integrate(|p| p.theta1.cos() + p.theta2.cos()).abs() < 1e-8);
        let chi = integrate(|p| sp4_character(1, 0, p.theta1, p.theta2).unwrap().powi(2));
        assert!((chi - 1.0).abs() < 1e-6);
    }

    #[test]
    fn small_moments() {
        assert!((moment(0, 0, 0, 3).unwrap() - 1.0).norm() < 1e-8);
        assert!(moment(1, 0, 0, 3).unwrap().norm() < 1e-6);
        assert!(moment(2, 1, 0, 5).unwrap().norm() < 1e-6);
        assert!(matches!(moment(0, 1, 0, 3), Err(SatoTateError::BadOrder(0, 1))));
    }

    #[test]
    fn gram_is_identity() {
        let g = character_gram(2).unwrap();
        assert_eq!(g.weights.len(), 6);
        assert!(g.max_deviation < 1e-6, "{:?}", g.matrix);
        assert!((g.matrix[0][0] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn sampler_is_deterministic_and_in_domain() {
        let a = sample(9, 5000).unwrap();
        let b = sample(9, 5000).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|p| 0.0 <= p.theta1 && p.theta1 <= p.theta2 && p.theta2 <= PI));
        assert_ne!(a, sample(10, 5000).unwrap());
    }

    #[test]
    fn marginal_total_is_one() {
        let m = Marginal::theta1(512);
        assert!((m.total() - 1.0).abs() < 1e-12);
        assert!(m.cdf(0.0).abs() < 1e-15);
        assert!((m.cdf(PI) - 1.0).abs() < 1e-12);
    }
}
