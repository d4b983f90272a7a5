//! Batch verification driver.
//!
//! A [`VerificationConfig`] (TOML file plus flag overrides) selects primes,
//! windows, spectral points and tolerances; [`run`] executes the requested
//! checks and assembles a versioned [`Report`]. Everything inside
//! [`Report::body`] is a pure function of the config; the wall-clock
//! timestamp lives in a separate field.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::archimedean::{
    bessel_k, bound_monitor, default_envelope_grid, envelope_fit, gr_collapse_check, k_half_closed_form,
    reduction_check, symmetric_grid, SpectralPoint, TorusPointR, PRINTED_REDUCTION_FACTOR, REDUCTION_FACTOR,
};
use crate::cosets::{cosets_report, CosetLabel};
use crate::exactnum::{gauss_average, is_prime, unit_character_average, vp, ExactRational, Valuation};
use crate::gsp4core::{kloosterman_entry_identity, kloosterman_observed_identity, ParabolicKind, WeylWord};
use crate::local_integrals::{
    check_convergent, gauss_reduction_check, membership_agreement, oracle_records, region_identities,
    sanity_identity, RegionSampler,
};
use crate::satotate::{character_gram, integrate, integrate_density, density, moment_table, sampler_check};
use crate::whittaker_p::WhittakerInstance;

pub const SCHEMA_VERSION: u32 = 1;

/// Exit code for a usage or configuration error.
pub const EXIT_USAGE: i32 = 2;
/// Exit code when some check fails.
pub const EXIT_FAILURE: i32 = 1;

/// Largest prime at which the exhaustive finite-group checks run.
pub const EXHAUSTIVE_MAX_PRIME: u64 = 3;

const MAX_WITNESSES: usize = 5;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot parse config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error("cannot serialize report: {0}")]
    Json(#[from] serde_json::Error),
    #[error("cannot build thread pool: {0}")]
    Threads(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Check {
    VerifyCosets,
    VerifyRegions,
    VerifyClosedForms,
    VerifyIdentities,
    Oracle,
    Archimedean,
    SatoTate,
    All,
}

impl Check {
    pub const SECTIONS: [Check; 7] = [
        Check::VerifyCosets,
        Check::VerifyRegions,
        Check::VerifyClosedForms,
        Check::VerifyIdentities,
        Check::Oracle,
        Check::Archimedean,
        Check::SatoTate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Check::VerifyCosets => "verify-cosets",
            Check::VerifyRegions => "verify-regions",
            Check::VerifyClosedForms => "verify-closed-forms",
            Check::VerifyIdentities => "verify-identities",
            Check::Oracle => "oracle",
            Check::Archimedean => "archimedean",
            Check::SatoTate => "sato-tate",
            Check::All => "all",
        }
    }
}

/// Tolerance keys understood by [`VerificationConfig::tolerances`].
pub const TOLERANCE_KEYS: [&str; 8] = [
    "oracle",
    "gauss_reduction",
    "collapse",
    "reduction",
    "k_half",
    "envelope_constant",
    "normalization",
    "moments",
];

fn default_tolerances() -> BTreeMap<String, f64> {
    [
        ("oracle", 1e-3),
        ("gauss_reduction", 1e-4),
        ("collapse", 1e-7),
        ("reduction", 1e-5),
        ("k_half", 1e-10),
        ("envelope_constant", 10.0),
        ("normalization", 1e-8),
        ("moments", 1e-6),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

/// Parameters of a verification run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerificationConfig {
    /// Primes for the exact and sampled checks. The exhaustive group checks
    /// use those not above [`EXHAUSTIVE_MAX_PRIME`].
    pub primes: Vec<u64>,
    /// Primes for the oracle comparison.
    pub oracle_primes: Vec<u64>,
    /// Valuation range `[lo, hi]` of the region sampler.
    pub valuation_window: (i64, i64),
    /// Units are sampled modulo `p^residue_precision`.
    pub residue_precision: u32,
    pub region_points_per_cell: usize,
    pub membership_samples: usize,
    /// Valuation cutoff of the oracle.
    pub cutoff: u32,
    /// Spectral parameters: one entry for the maximal parabolics, two for the Borel.
    pub nu_values: Vec<Vec<f64>>,
    /// Coordinates of the Gauss reduction run over `p^{-window} Z_p`
    /// (one less for the Borel).
    pub gauss_window: u32,
    pub gauss_inputs: usize,
    pub kloosterman_trials: usize,
    pub sato_tate_samples: usize,
    pub tolerances: BTreeMap<String, f64>,
    pub seed: u64,
}

impl Default for VerificationConfig {
    fn default() -> Self {
        VerificationConfig {
            primes: vec![2, 3, 5],
            oracle_primes: vec![3, 5],
            valuation_window: (-6, 2),
            residue_precision: 9,
            region_points_per_cell: 2,
            membership_samples: 10_000,
            cutoff: 8,
            nu_values: vec![vec![2.0], vec![3.0], vec![3.0, 2.0], vec![4.0, 2.5]],
            gauss_window: 3,
            gauss_inputs: 100,
            kloosterman_trials: 50,
            sato_tate_samples: 100_000,
            tolerances: default_tolerances(),
            seed: 1,
        }
    }
}

impl VerificationConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let mut cfg: VerificationConfig = toml::from_str(text)?;
        // A partial tolerance table keeps the remaining defaults.
        let mut tol = default_tolerances();
        tol.extend(std::mem::take(&mut cfg.tolerances));
        cfg.tolerances = tol;
        Ok(cfg)
    }

    pub fn tol(&self, key: &str) -> f64 {
        self.tolerances[key]
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.primes.is_empty() {
            return bad("no primes given".into());
        }
        for &p in self.primes.iter().chain(&self.oracle_primes) {
            if !is_prime(p) {
                return bad(format!("{p} is not prime"));
            }
            if p.checked_pow(self.residue_precision).is_none_or(|m| m > i64::MAX as u64) {
                return bad(format!("residue precision {} too large for p = {p}", self.residue_precision));
            }
        }
        let (lo, hi) = self.valuation_window;
        if lo > hi {
            return bad(format!("empty valuation window [{lo}, {hi}]"));
        }
        if self.residue_precision == 0 || self.cutoff == 0 || self.gauss_window == 0 {
            return bad("residue_precision, cutoff and gauss_window must be positive".into());
        }
        if self.membership_samples == 0 || self.gauss_inputs == 0 || self.kloosterman_trials == 0 {
            return bad("sample counts must be positive".into());
        }
        if self.sato_tate_samples < 2 || self.region_points_per_cell == 0 {
            return bad("sample counts must be positive".into());
        }
        for (k, &v) in &self.tolerances {
            if !TOLERANCE_KEYS.contains(&k.as_str()) {
                return bad(format!("unknown tolerance '{k}'"));
            }
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("tolerance '{k}' must be positive, got {v}"));
            }
        }
        if !self.nu_values.iter().any(|n| n.len() == 1) || !self.nu_values.iter().any(|n| n.len() == 2) {
            return bad("nu_values needs at least one 1-tuple and one 2-tuple".into());
        }
        for nu in &self.nu_values {
            let kind = match nu.len() {
                1 => ParabolicKind::Klingen,
                2 => ParabolicKind::Borel,
                n => return bad(format!("nu tuple of length {n}")),
            };
            check_convergent(kind, nu).map_err(|e| CliError::Config(e.to_string()))?;
        }
        Ok(())
    }

    fn nus(&self, kind: ParabolicKind) -> Vec<Vec<f64>> {
        let len = if kind == ParabolicKind::Borel { 2 } else { 1 };
        self.nu_values.iter().filter(|n| n.len() == len).cloned().collect()
    }

    fn rng(&self, tag: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(tag);
        rng
    }
}

/// Outcome of one subcommand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub name: String,
    pub passed: bool,
    pub summary: Vec<String>,
    /// Failing cases, at most a few per check.
    pub witnesses: Vec<String>,
    /// Statements checked as printed that do not hold; recorded, not gating.
    pub deviations: Vec<String>,
    pub details: Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportBody {
    pub schema_version: u32,
    pub subcommand: String,
    pub config: VerificationConfig,
    pub passed: bool,
    pub sections: Vec<Section>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    /// Seconds since the Unix epoch when the report was assembled.
    pub generated_at: u64,
    pub body: ReportBody,
}

impl Report {
    pub fn exit_code(&self) -> i32 {
        if self.body.passed {
            0
        } else {
            EXIT_FAILURE
        }
    }
}

struct SectionBuilder {
    section: Section,
}

impl SectionBuilder {
    fn new(check: Check) -> Self {
        SectionBuilder {
            section: Section {
                name: check.name().to_string(),
                passed: true,
                summary: Vec::new(),
                witnesses: Vec::new(),
                deviations: Vec::new(),
                details: json!({}),
            },
        }
    }

    fn line(&mut self, s: String) {
        self.section.summary.push(s);
    }

    fn require(&mut self, ok: bool, witness: impl FnOnce() -> String) {
        if !ok {
            self.section.passed = false;
            self.section.witnesses.push(witness());
        }
    }

    fn detail(&mut self, key: &str, v: impl Serialize) {
        let v = serde_json::to_value(v).expect("report values serialize");
        self.section.details[key] = v;
    }

    fn fail(&mut self, msg: String) {
        self.section.passed = false;
        self.section.witnesses.push(msg);
    }

    fn finish(self) -> Section {
        self.section
    }
}

fn exhaustive_primes(cfg: &VerificationConfig) -> (Vec<u64>, Vec<u64>) {
    cfg.primes.iter().partition(|&&p| p <= EXHAUSTIVE_MAX_PRIME)
}

fn verify_cosets(cfg: &VerificationConfig) -> Section {
    let mut s = SectionBuilder::new(Check::VerifyCosets);
    let (run, skipped) = exhaustive_primes(cfg);
    if run.is_empty() {
        s.fail(format!("no configured prime is at most {EXHAUSTIVE_MAX_PRIME}"));
    }
    let mut reports = Vec::new();
    for p in run {
        let mut rng = cfg.rng(0x100 + p);
        match cosets_report(p, &mut rng) {
            Ok(rep) => {
                let c = rep.classification.label_counts();
                s.line(format!(
                    "p={p}: {} elements classified, {}/{}/{} labels",
                    rep.classification.group_order, c[0], c[1], c[2]
                ));
                s.require(rep.classification.passed(), || format!("p={p}: classification {:?}", rep.classification.counts));
                for st in &rep.stabilizers {
                    s.require(st.product_identity_holds() && st.pattern_matches, || format!("p={p}: stabilizer {st:?}"));
                }
                for l in &rep.lemmas.checks {
                    s.require(l.passed(), || format!("p={p}: {} failed: {:?}", l.name, l.witness));
                }
                s.require(rep.ledger.borel_index_is_length, || format!("p={p}: Borel index differs from p^length"));
                for r in rep.ledger.rows.iter().filter(|r| !r.holds) {
                    s.fail(format!("p={p}: exponent inequality fails at {:?}", r.label));
                }
                reports.push(rep);
            }
            Err(e) => s.fail(format!("p={p}: {e}")),
        }
    }
    if !skipped.is_empty() {
        s.line(format!("skipped (not exhaustively enumerable): {skipped:?}"));
    }
    s.detail("reports", &reports);
    s.finish()
}

fn verify_regions(cfg: &VerificationConfig) -> Section {
    let mut s = SectionBuilder::new(Check::VerifyRegions);
    let jobs: Vec<(u64, ParabolicKind)> =
        cfg.primes.iter().flat_map(|&p| ParabolicKind::ALL.map(|k| (p, k))).collect();
    let membership: Vec<_> = jobs
        .par_iter()
        .map(|&(p, k)| membership_agreement(k, p, cfg.membership_samples, cfg.seed))
        .collect();
    for m in &membership {
        s.line(format!(
            "membership {} p={}: {} points, {} disagreements",
            m.parabolic.name(),
            m.p,
            m.samples,
            m.disagreements.len()
        ));
        for d in m.disagreements.iter().take(MAX_WITNESSES) {
            s.fail(format!("membership {} p={}: {d}", m.parabolic.name(), m.p));
        }
        s.require(m.hits.iter().all(|h| h.1 > 0), || format!("membership {} p={}: empty label {:?}", m.parabolic.name(), m.p, m.hits));
    }
    let sampler = RegionSampler {
        v_min: cfg.valuation_window.0,
        v_max: cfg.valuation_window.1,
        precision: cfg.residue_precision,
        per_cell: cfg.region_points_per_cell,
        seed: cfg.seed,
    };
    let regions: Vec<_> = cfg.primes.par_iter().map(|&p| region_identities(p, &sampler)).collect();
    for (p, reps) in cfg.primes.iter().zip(&regions) {
        let bad = reps.iter().filter(|r| !r.passed()).count();
        s.line(format!("regions p={p}: {} lemmas, {} with counterexamples", reps.len(), bad));
        for r in reps {
            s.require(r.passed(), || format!("region p={p}: {:?}", r.counterexample));
        }
    }
    s.detail("membership", &membership);
    s.detail("regions", &regions);
    s.finish()
}

fn random_rational<R: Rng>(rng: &mut R, p: u64) -> ExactRational {
    let v = rng.random_range(-3i64..=2);
    let num = loop {
        let n = rng.random_range(-200i64..=200);
        if n != 0 && n % p as i64 != 0 {
            break n;
        }
    };
    let den = loop {
        let d = rng.random_range(1i64..=50);
        if d % p as i64 != 0 {
            break d;
        }
    };
    &ExactRational::p_power(p, v) * &ExactRational::new(num, den)
}

fn verify_closed_forms(cfg: &VerificationConfig) -> Section {
    let mut s = SectionBuilder::new(Check::VerifyClosedForms);
    let mut gauss_rows = Vec::new();
    for &p in &cfg.primes {
        let mut rng = cfg.rng(0x200 + p);
        let mut agree = 0;
        for _ in 0..cfg.gauss_inputs {
            let a = random_rational(&mut rng, p);
            let k = match vp(&a, p) {
                Valuation::Finite(v) => (-v).max(1) as u32,
                Valuation::Infinite => 1,
            };
            let lemma = gauss_average(&a, p);
            match unit_character_average(&a, p, k) {
                Ok(sum) if sum == lemma => agree += 1,
                Ok(sum) => s.fail(format!("gauss average p={p} a={a}: lemma {lemma}, finite sum {sum}")),
                Err(e) => s.fail(format!("gauss average p={p} a={a}: {e}")),
            }
        }
        s.line(format!("gauss average p={p}: {agree}/{} inputs agree with finite sums", cfg.gauss_inputs));
        gauss_rows.push(json!({ "p": p, "inputs": cfg.gauss_inputs, "agree": agree }));
    }
    s.detail("gauss_average", gauss_rows);

    let (primes, skipped) = exhaustive_primes(cfg);
    let alpha = Complex64::from_polar(1.0, PI / 3.0);
    let instance = WhittakerInstance::unramified(alpha);
    let jobs: Vec<(u64, CosetLabel)> =
        primes.iter().flat_map(|&p| CosetLabel::all().into_iter().map(move |l| (p, l))).collect();
    let tol = cfg.tol("gauss_reduction");
    let reports: Vec<_> = jobs
        .par_iter()
        .map(|&(p, label)| {
            let kind = label.parabolic;
            let nu = cfg.nus(kind).remove(0);
            let window = if kind == ParabolicKind::Borel { cfg.gauss_window.saturating_sub(1).max(1) } else { cfg.gauss_window };
            gauss_reduction_check(label, &nu, &instance, p, window, tol).map_err(|e| format!("{label:?} p={p}: {e}"))
        })
        .collect();
    let mut ok = Vec::new();
    for r in reports {
        match r {
            Ok(rep) => {
                s.require(rep.passed, || {
                    format!("gauss reduction {} {} p={}: rel error {:.3e}", rep.parabolic.name(), rep.label, rep.p, rep.max_rel_error)
                });
                ok.push(rep);
            }
            Err(e) => s.fail(e),
        }
    }
    let worst = ok.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    s.line(format!("gauss reduction: {} labels at p in {primes:?}, max rel error {worst:.3e}", ok.len()));
    if !skipped.is_empty() {
        s.line(format!("gauss reduction skipped at {skipped:?}"));
    }
    s.detail("gauss_reduction", &ok);
    s.finish()
}

fn verify_identities(cfg: &VerificationConfig) -> Section {
    let mut s = SectionBuilder::new(Check::VerifyIdentities);
    let mut rows = Vec::new();
    for &p in &cfg.primes {
        for kind in ParabolicKind::ALL {
            match sanity_identity(kind, p) {
                Ok(r) => {
                    s.require(r.holds, || format!("{} p={p}: difference {}", kind.name(), r.difference));
                    rows.push(r);
                }
                Err(e) => s.fail(format!("{} p={p}: {e}", kind.name())),
            }
        }
    }
    let held = rows.iter().filter(|r| r.holds).count();
    s.line(format!("local factors: {held}/{} exact identities hold", ParabolicKind::ALL.len() * cfg.primes.len()));
    s.detail("local_factors", &rows);

    let mut observed = Vec::new();
    let mut printed = Vec::new();
    for (i, sigma) in [WeylWord::J, WeylWord::S1S2S1, WeylWord::S2S1S2].into_iter().enumerate() {
        let mut rng = cfg.rng(0x300 + i as u64);
        let o = kloosterman_observed_identity(sigma, cfg.kloosterman_trials, &mut rng);
        s.require(o.holds, || format!("Kloosterman entries for {sigma}: {:?}", o.checks));
        let mut rng = cfg.rng(0x300 + i as u64);
        let pr = kloosterman_entry_identity(sigma, cfg.kloosterman_trials, &mut rng);
        if !pr.holds {
            s.section.deviations.push(format!("Kloosterman entries as printed for {sigma}: {:?}", pr.checks));
        }
        observed.push(o);
        printed.push(pr);
    }
    s.line(format!(
        "Kloosterman entries: {}/3 elements hold on {} trials",
        observed.iter().filter(|o| o.holds).count(),
        cfg.kloosterman_trials
    ));
    s.detail("kloosterman", &observed);
    s.detail("kloosterman_as_printed", &printed);
    s.finish()
}

fn oracle(cfg: &VerificationConfig) -> Section {
    let mut s = SectionBuilder::new(Check::Oracle);
    let alphas = [Complex64::new(1.0, 0.0), Complex64::from_polar(1.0, PI / 3.0)];
    let tol = cfg.tol("oracle");
    let jobs: Vec<(u64, ParabolicKind)> =
        cfg.oracle_primes.iter().flat_map(|&p| ParabolicKind::ALL.map(|k| (p, k))).collect();
    let results: Vec<_> = jobs
        .par_iter()
        .map(|&(p, kind)| oracle_records(kind, p, cfg.cutoff, &cfg.nus(kind), &alphas, tol).map_err(|e| format!("{} p={p}: {e}", kind.name())))
        .collect();
    let mut records = Vec::new();
    for r in results {
        match r {
            Ok(v) => records.extend(v),
            Err(e) => s.fail(e),
        }
    }
    for r in records.iter().filter(|r| !r.pass).take(MAX_WITNESSES) {
        s.fail(format!(
            "{} {} p={} nu={:?} alpha={}: rel error {:.3e}, tail {:.3e}",
            r.parabolic.name(),
            r.label,
            r.p,
            r.nu,
            r.alpha,
            r.rel_error,
            r.tail_bound
        ));
    }
    if records.iter().any(|r| !r.pass) {
        s.section.passed = false;
    }
    let worst = records.iter().map(|r| r.rel_error).fold(0.0, f64::max);
    let tail = records.iter().map(|r| r.tail_bound).fold(0.0, f64::max);
    s.line(format!(
        "{} comparisons at cutoff {}: max rel error {worst:.3e}, max tail bound {tail:.3e}",
        records.len(),
        cfg.cutoff
    ));
    s.detail("records", &records);
    s.finish()
}

/// Spectral points for the reduction check, as `(μ1, μ2)`.
pub fn reduction_points() -> Vec<(Complex64, Complex64)> {
    let r = |a: f64, b: f64| (Complex64::new(a, 0.0), Complex64::new(b, 0.0));
    vec![
        r(0.1, 0.2),
        r(0.3, -0.1),
        r(0.45, 0.25),
        (Complex64::new(0.1, 2.0), Complex64::new(0.2, -1.0)),
        (Complex64::new(0.0, 1.5), Complex64::new(0.0, 0.5)),
    ]
}

/// `(ν, z, w)` points for the Bessel collapse.
pub fn collapse_points() -> Vec<(Complex64, f64, f64)> {
    vec![
        (Complex64::new(0.5, 0.0), 1.0, 1.0),
        (Complex64::new(0.0, 0.3), 1.0, 2.0),
        (Complex64::new(0.2, 1.0), 0.7, 2.5),
        (Complex64::new(0.4, -2.0), 1.5, 1.5),
        (Complex64::new(0.0, 0.0), 3.0, 0.5),
    ]
}

fn archimedean(cfg: &VerificationConfig) -> Section {
    let mut s = SectionBuilder::new(Check::Archimedean);
    let g = TorusPointR::new(1.0, 1.0).expect("positive torus point");

    let tol = cfg.tol("collapse");
    let collapse: Vec<_> = collapse_points()
        .into_par_iter()
        .map(|(nu, z, w)| gr_collapse_check(nu, z, w, tol))
        .collect();
    let mut worst: f64 = 0.0;
    for r in collapse {
        match r {
            Ok(r) => {
                worst = worst.max(r.rel_error);
                s.require(r.pass, || format!("collapse nu={} z={} w={}: rel error {:.3e}", r.nu, r.z, r.w, r.rel_error));
            }
            Err(e) => s.fail(format!("collapse: {e}")),
        }
    }
    s.line(format!("Bessel collapse: 5 points, max rel error {worst:.3e}"));
    s.detail("collapse_max_rel_error", worst);

    let tol = cfg.tol("reduction");
    let reduction: Vec<_> = reduction_points()
        .into_iter()
        .map(|(m1, m2)| SpectralPoint::new(m1, m2).and_then(|pt| reduction_check(pt, g, tol)))
        .collect();
    let mut reports = Vec::new();
    for r in reduction {
        match r {
            Ok(r) => {
                s.require(r.measured_holds, || {
                    format!("2D vs {REDUCTION_FACTOR}·1D at mu=({}, {}): rel error {:.3e}", r.point.mu1, r.point.mu2, r.measured_rel_error)
                });
                if !r.printed_holds {
                    s.section.deviations.push(format!(
                        "|2D| = {}|1D| at mu=({}, {}): ratio {:.6}, rel error {:.3e}",
                        PRINTED_REDUCTION_FACTOR.abs(),
                        r.point.mu1,
                        r.point.mu2,
                        r.ratio.norm(),
                        r.printed_rel_error
                    ));
                }
                reports.push(r);
            }
            Err(e) => s.fail(format!("reduction: {e}")),
        }
    }
    let worst = reports.iter().map(|r| r.measured_rel_error).fold(0.0, f64::max);
    s.line(format!(
        "2D vs 1D Jacquet integral: {} points, factor {REDUCTION_FACTOR}, max rel error {worst:.3e}",
        reports.len()
    ));
    s.detail("reduction", &reports);

    let tol = cfg.tol("k_half");
    let mut worst: f64 = 0.0;
    for x in [0.05, 0.5, 1.0, 2.0, 5.0, 20.0] {
        match bessel_k(Complex64::new(0.5, 0.0), x) {
            Ok(k) => {
                let exact = k_half_closed_form(x);
                let err = (k - exact).norm() / exact;
                worst = worst.max(err);
                s.require(err < tol, || format!("K_1/2({x}) = {k}, closed form {exact}"));
            }
            Err(e) => s.fail(format!("K_1/2({x}): {e}")),
        }
    }
    s.line(format!("K_1/2 closed form: max rel error {worst:.3e}"));
    s.detail("k_half_max_rel_error", worst);

    let (re, im, xs) = default_envelope_grid(0.5);
    match envelope_fit(&re, &im, &xs, 0.5, 0.1) {
        Ok(f) => {
            s.require(f.constant <= cfg.tol("envelope_constant"), || format!("envelope constant {}", f.constant));
            s.line(format!("Bessel envelope: {} samples, fitted constant {:.4}", f.samples.len(), f.constant));
            s.detail("envelope_constant", f.constant);
            s.detail("envelope_by_imag", &f.by_imag);
        }
        Err(e) => s.fail(format!("envelope: {e}")),
    }

    // Nested grids with step 5: the inner one is the |Im μ| ≤ 10 part.
    match bound_monitor(&symmetric_grid(20.0, 9), &[0.0, 0.2], g, 1e-8) {
        Ok(b) => {
            let inner = b
                .points
                .iter()
                .filter(|p| p.mu1.im.abs() <= 10.0 && p.mu2.im.abs() <= 10.0)
                .map(|p| p.ratio)
                .fold(0.0, f64::max);
            s.require(b.finite, || "bound monitor produced a non-finite ratio".to_string());
            s.line(format!(
                "bound monitor: {} points, max ratio {:.3e} (|Im mu| <= 10: {inner:.3e})",
                b.points.len(),
                b.max_ratio
            ));
            s.detail("bound_monitor", &b);
            s.detail("bound_monitor_inner_max", inner);
        }
        Err(e) => s.fail(format!("bound monitor: {e}")),
    }
    s.finish()
}

fn sato_tate(cfg: &VerificationConfig) -> Section {
    let mut s = SectionBuilder::new(Check::SatoTate);
    let norm = (integrate(|_| 1.0) - 1.0).abs();
    s.require(norm < cfg.tol("normalization"), || format!("total mass off by {norm:.3e}"));
    s.line(format!("normalization: |mass - 1| = {norm:.3e}"));
    let printed = integrate_density(|_| 1.0, density, crate::satotate::DEFAULT_NODES);
    if (printed - 1.0).abs() >= cfg.tol("normalization") {
        s.section.deviations.push(format!("printed density has total mass {printed:.12}"));
    }
    s.detail("normalization_error", norm);
    s.detail("printed_density_mass", printed);

    let tol = cfg.tol("moments");
    match character_gram(3) {
        Ok(g) => {
            s.require(g.max_deviation < tol, || format!("Gram deviation {:.3e}", g.max_deviation));
            s.line(format!("character Gram (lambda1 <= 3): max |G - I| = {:.3e}", g.max_deviation));
            s.detail("gram", &g);
        }
        Err(e) => s.fail(format!("gram: {e}")),
    }

    let tables: Vec<_> = cfg.primes.par_iter().map(|&p| moment_table(3, p, tol)).collect();
    let mut moments = Vec::new();
    for t in tables {
        match t {
            Ok(t) => moments.extend(t),
            Err(e) => s.fail(format!("moments: {e}")),
        }
    }
    for m in moments.iter().filter(|m| !m.pass).take(MAX_WITNESSES) {
        s.fail(format!("moment ({},{},{}) p={}: {}", m.a, m.b, m.c, m.p, m.value));
    }
    if moments.iter().any(|m| !m.pass) {
        s.section.passed = false;
    }
    let worst = moments.iter().filter(|m| m.expected == 0.0).map(|m| m.value.norm()).fold(0.0, f64::max);
    s.line(format!("moments a <= 3: {} values, max |nontrivial| = {worst:.3e}", moments.len()));
    s.detail("moments", &moments);

    match sampler_check(cfg.seed, cfg.sato_tate_samples) {
        Ok(r) => {
            s.require(r.pass, || format!("sampler: {r:?}"));
            s.line(format!("sampler: n={}, KS {:.4} vs critical {:.4}", r.n, r.ks_statistic, r.ks_critical));
            s.detail("sampler", &r);
        }
        Err(e) => s.fail(format!("sampler: {e}")),
    }
    s.finish()
}

fn run_section(check: Check, cfg: &VerificationConfig) -> Section {
    match check {
        Check::VerifyCosets => verify_cosets(cfg),
        Check::VerifyRegions => verify_regions(cfg),
        Check::VerifyClosedForms => verify_closed_forms(cfg),
        Check::VerifyIdentities => verify_identities(cfg),
        Check::Oracle => oracle(cfg),
        Check::Archimedean => archimedean(cfg),
        Check::SatoTate => sato_tate(cfg),
        Check::All => unreachable!("expanded by run"),
    }
}

/// Runs `check` under `cfg`. Configuration errors are returned; failing
/// checks are reported through [`Report::exit_code`].
pub fn run(check: Check, cfg: &VerificationConfig) -> Result<Report, CliError> {
    cfg.validate()?;
    let checks: Vec<Check> = if check == Check::All { Check::SECTIONS.to_vec() } else { vec![check] };
    let sections: Vec<Section> = checks.par_iter().map(|&c| run_section(c, cfg)).collect();
    let generated_at = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    Ok(Report {
        generated_at,
        body: ReportBody {
            schema_version: SCHEMA_VERSION,
            subcommand: check.name().to_string(),
            config: cfg.clone(),
            passed: sections.iter().all(|s| s.passed),
            sections,
        },
    })
}

#[derive(Debug, Parser)]
#[command(name = "gsp4lab", version, about = "Verification suite for GSp(4) local and Archimedean integrals")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Comma-separated primes for every check.
    #[arg(long, visible_alias = "p", global = true, value_delimiter = ',')]
    pub primes: Option<Vec<u64>>,
    /// Valuation cutoff of the oracle.
    #[arg(long, global = true)]
    pub cutoff: Option<u32>,
    /// Spectral parameter, `3` (maximal parabolics) or `4,2.5` (Borel); repeatable.
    #[arg(long, global = true)]
    pub nu: Vec<String>,
    /// Tolerance override `key=value`; repeatable.
    #[arg(long, global = true)]
    pub tol: Vec<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Write the JSON report here.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Print the JSON report to stdout instead of the summary.
    #[arg(long, global = true)]
    pub json: bool,
}

#[derive(Clone, Copy, Debug, Subcommand)]
pub enum Command {
    /// Exhaustive double coset checks over F_p.
    VerifyCosets,
    /// Membership predicates and region dissections.
    VerifyRegions,
    /// Gauss averages and reductions.
    VerifyClosedForms,
    /// Exact local factor identities and Kloosterman entries.
    VerifyIdentities,
    /// Closed forms against the p-adic quadrature oracle.
    Oracle,
    /// Archimedean Bessel and Jacquet integral checks.
    Archimedean,
    /// Sato-Tate measure, moments and sampler.
    SatoTate,
    /// Every check above.
    All,
}

impl From<Command> for Check {
    fn from(c: Command) -> Check {
        match c {
            Command::VerifyCosets => Check::VerifyCosets,
            Command::VerifyRegions => Check::VerifyRegions,
            Command::VerifyClosedForms => Check::VerifyClosedForms,
            Command::VerifyIdentities => Check::VerifyIdentities,
            Command::Oracle => Check::Oracle,
            Command::Archimedean => Check::Archimedean,
            Command::SatoTate => Check::SatoTate,
            Command::All => Check::All,
        }
    }
}

impl Cli {
    /// The config file (or defaults) with flag overrides applied.
    pub fn config(&self) -> Result<VerificationConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|source| CliError::Read { path: path.clone(), source })?;
                VerificationConfig::from_toml(&text)?
            }
            None => VerificationConfig::default(),
        };
        if let Some(p) = &self.primes {
            cfg.primes = p.clone();
            cfg.oracle_primes = p.clone();
        }
        if let Some(c) = self.cutoff {
            cfg.cutoff = c;
        }
        if !self.nu.is_empty() {
            let given: Vec<Vec<f64>> = self
                .nu
                .iter()
                .map(|s| {
                    s.split(',')
                        .map(|x| x.trim().parse::<f64>().map_err(|e| CliError::Config(format!("bad --nu '{s}': {e}"))))
                        .collect()
                })
                .collect::<Result<_, _>>()?;
            // Flags replace the configured tuples of the lengths they supply.
            cfg.nu_values.retain(|n| !given.iter().any(|g| g.len() == n.len()));
            cfg.nu_values.extend(given);
        }
        for t in &self.tol {
            let (k, v) = t.split_once('=').ok_or_else(|| CliError::Config(format!("--tol expects key=value, got '{t}'")))?;
            let v: f64 = v.parse().map_err(|e| CliError::Config(format!("bad --tol '{t}': {e}")))?;
            cfg.tolerances.insert(k.trim().to_string(), v);
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }
}

/// Thread count from `GSP4LAB_THREADS`, if set.
pub fn threads_from_env() -> Result<Option<usize>, CliError> {
    match std::env::var("GSP4LAB_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .map(Some)
            .ok_or_else(|| CliError::Config(format!("GSP4LAB_THREADS must be a positive integer, got '{v}'"))),
        Err(_) => Ok(None),
    }
}

/// Human-readable summary, one block per section.
pub fn render_summary(report: &Report) -> String {
    let mut out = String::new();
    for s in &report.body.sections {
        out.push_str(&format!("{} {}\n", if s.passed { "PASS" } else { "FAIL" }, s.name));
        for l in &s.summary {
            out.push_str(&format!("    {l}\n"));
        }
        for w in &s.witnesses {
            out.push_str(&format!("    witness: {w}\n"));
        }
        for d in &s.deviations {
            out.push_str(&format!("    deviation: {d}\n"));
        }
    }
    out.push_str(if report.body.passed { "all checks passed\n" } else { "some checks failed\n" });
    out
}

/// Parses arguments, runs, writes output and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
    }
}

fn execute(cli: &Cli) -> Result<i32, CliError> {
    let cfg = cli.config()?;
    cfg.validate()?;
    let check = Check::from(cli.command);
    let report = match threads_from_env()? {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Threads(e.to_string()))?
            .install(|| run(check, &cfg))?,
        None => run(check, &cfg)?,
    };
    let text = serde_json::to_string_pretty(&report)?;
    if let Some(path) = &cli.out {
        std::fs::write(path, &text).map_err(|source| CliError::Write { path: path.clone(), source })?;
    }
    if cli.json {
        println!("{text}");
    } else {
        print!("{}", render_summary(&report));
    }
    Ok(report.exit_code())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> VerificationConfig {
        VerificationConfig {
            primes: vec![2, 3],
            membership_samples: 50,
            region_points_per_cell: 1,
            valuation_window: (-2, 1),
            residue_precision: 4,
            sato_tate_samples: 1000,
            gauss_inputs: 10,
            kloosterman_trials: 5,
            ..VerificationConfig::default()
        }
    }

    #[test]
    fn defaults_validate() {
        VerificationConfig::default().validate().unwrap();
    }

    #[test]
    fn bad_configs_are_rejected() {
        let mut c = VerificationConfig::default();
        c.primes = vec![4];
        assert!(matches!(c.validate(), Err(CliError::Config(_))));
        let mut c = VerificationConfig::default();
        c.valuation_window = (2, -1);
        assert!(c.validate().is_err());
        let mut c = VerificationConfig::default();
        c.tolerances.insert("oracle".into(), -1.0);
        assert!(c.validate().is_err());
        let mut c = VerificationConfig::default();
        c.nu_values = vec![vec![1.0], vec![3.0, 2.0]];
        assert!(c.validate().is_err());
    }

    #[test]
    fn toml_round_trip_and_partial_tolerances() {
        let cfg = VerificationConfig::from_toml("primes = [3]\nseed = 9\ntolerances = { oracle = 0.01 }\n").unwrap();
        assert_eq!(cfg.primes, vec![3]);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.tol("oracle"), 0.01);
        assert_eq!(cfg.tol("moments"), 1e-6);
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(VerificationConfig::from_toml(&text).unwrap(), cfg);
        assert!(VerificationConfig::from_toml("bogus = 1").is_err());
    }

    #[test]
    fn identities_section_counts() {
        let mut cfg = small();
        cfg.primes = vec![2, 3, 5];
        let rep = run(Check::VerifyIdentities, &cfg).unwrap();
        assert!(rep.body.passed, "{}", render_summary(&rep));
        assert!(rep.body.sections[0].summary[0].contains("9/9"));
        assert_eq!(rep.exit_code(), 0);
    }

    #[test]
    fn cosets_section_at_two() {
        let mut cfg = small();
        cfg.primes = vec![2];
        let rep = run(Check::VerifyCosets, &cfg).unwrap();
        assert!(rep.body.passed);
        assert_eq!(rep.body.sections[0].summary[0], "p=2: 720 elements classified, 8/4/4 labels");
    }

    #[test]
    fn body_is_deterministic() {
        let cfg = small();
        let a = run(Check::VerifyRegions, &cfg).unwrap();
        let b = run(Check::VerifyRegions, &cfg).unwrap();
        assert_eq!(serde_json::to_string(&a.body).unwrap(), serde_json::to_string(&b.body).unwrap());
    }

    #[test]
    fn flags_override_config() {
        let cli = Cli::try_parse_from(["gsp4lab", "oracle", "--p", "3", "--nu", "4", "--nu", "5,3", "--tol", "oracle=0.01", "--seed", "4"]).unwrap();
        let cfg = cli.config().unwrap();
        assert_eq!(cfg.primes, vec![3]);
        assert_eq!(cfg.nu_values, vec![vec![4.0], vec![5.0, 3.0]]);
        assert_eq!(cfg.tol("oracle"), 0.01);
        assert_eq!(cfg.seed, 4);
        assert_eq!(main_with_args(["gsp4lab", "oracle", "--tol", "bogus=1"]), EXIT_USAGE);
        assert_eq!(main_with_args(["gsp4lab", "nonsense"]), EXIT_USAGE);
    }
}
