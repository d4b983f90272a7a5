//! Double cosets `(P ∩ K) \ K / B(p)` through their finite-field shadows,
//! stabilizer indices, finite group lemmas and the exponent ledger.
//!
//! Everything here works in `GSp4(F_p)`: the stabilizers involved are
//! depth-one congruence conditions, so their indices are visible mod p.

use std::collections::{HashMap, HashSet, VecDeque};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exactnum::ExactRational;
use crate::gsp4core::{
    bruhat_cell, inv_mod, subgroup_membership, weyl_int, weyl_matrix, FpMat, GMat, GroupElement, ParabolicKind,
    RootVector, SubgroupKind, WeylWord, S1_INT, S2_INT,
};

#[derive(Debug, Error)]
pub enum CosetError {
    #[error("{0} is not a valid representative for the {1} parabolic")]
    InvalidLabel(WeylWord, &'static str),
    #[error("element is not in GSp4(F_p)")]
    NotInGroup,
    #[error("primes other than 2 and 3 are not enumerated exhaustively (got {0})")]
    UnsupportedPrime(u64),
}

/// A double coset `(P ∩ K) x B(p)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CosetLabel {
    pub parabolic: ParabolicKind,
    pub word: WeylWord,
}

impl CosetLabel {
    pub fn new(parabolic: ParabolicKind, word: WeylWord) -> Result<Self, CosetError> {
        if parabolic.representatives().contains(&word) {
            Ok(CosetLabel { parabolic, word })
        } else {
            Err(CosetError::InvalidLabel(word, parabolic.name()))
        }
    }

    pub fn all() -> Vec<CosetLabel> {
        ParabolicKind::ALL
            .iter()
            .flat_map(|&p| p.representatives().iter().map(move |&w| CosetLabel { parabolic: p, word: w }))
            .collect()
    }
}

/// Label of the double coset containing `k`.
pub fn classify(k: &FpMat, parabolic: ParabolicKind, p: u64) -> Result<CosetLabel, CosetError> {
    let cell = bruhat_cell(k, p).map_err(|_| CosetError::NotInGroup)?;
    Ok(CosetLabel {
        parabolic,
        word: parabolic.coset_representative(cell),
    })
}

fn primitive_root(p: u64) -> u32 {
    (1..p as u32)
        .find(|&g| {
            let mut x = 1u64;
            (1..p - 1).all(|_| {
                x = x * g as u64 % p;
                x != 1
            })
        })
        .expect("prime has a primitive root")
}

fn fp_torus(a1: u32, a2: u32, a3: u32, p: u64) -> FpMat {
    let pp = p as u32;
    let d = [a1, a2, a3 * inv_mod(a1, pp) % pp, a3 * inv_mod(a2, pp) % pp];
    let mut e = [0u8; 16];
    for i in 0..4 {
        e[5 * i] = d[i] as u8;
    }
    FpMat(e)
}

fn fp_root(r: RootVector, p: u64) -> FpMat {
    let mut m = [[0i64; 4]; 4];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 1;
    }
    for &(s, i, j) in r.terms() {
        m[i][j] += s;
    }
    FpMat::from_ints(m, p)
}

/// Generators of `B(F_p)`.
pub fn borel_generators(p: u64) -> Vec<FpMat> {
    let g = primitive_root(p);
    let mut v = vec![fp_torus(g, 1, 1, p), fp_torus(1, g, 1, p), fp_torus(1, 1, g, p)];
    v.extend(RootVector::ALL.iter().filter(|r| r.is_positive()).map(|&r| fp_root(r, p)));
    v
}

/// Generators of `P(F_p)`.
pub fn parabolic_generators(kind: ParabolicKind, p: u64) -> Vec<FpMat> {
    let mut v = borel_generators(p);
    match kind {
        ParabolicKind::Borel => {}
        ParabolicKind::Siegel => v.push(fp_root(RootVector::Neg1, p)),
        ParabolicKind::Klingen => v.push(fp_root(RootVector::Neg3, p)),
    }
    v
}

/// Closure of `gens` under multiplication, capped at `limit` elements.
pub fn generate_subgroup(gens: &[FpMat], p: u64, limit: usize) -> Option<Vec<FpMat>> {
    let mut seen: HashSet<FpMat> = HashSet::new();
    let mut queue = VecDeque::new();
    seen.insert(FpMat::identity());
    queue.push_back(FpMat::identity());
    let mut out = vec![FpMat::identity()];
    while let Some(x) = queue.pop_front() {
        for g in gens {
            let y = x.mul(g, p);
            if seen.insert(y) {
                if seen.len() > limit {
                    return None;
                }
                out.push(y);
                queue.push_back(y);
            }
        }
    }
    Some(out)
}

/// `|GSp4(F_p)| = (p−1)p⁴(p²−1)(p⁴−1)`.
pub fn group_order(p: u64) -> u64 {
    (p - 1) * p.pow(4) * (p * p - 1) * (p.pow(4) - 1)
}

fn in_pattern(m: &FpMat, zeros: &[[bool; 4]; 4]) -> bool {
    (0..4).all(|i| (0..4).all(|j| !zeros[i][j] || m.get(i, j) == 0))
}

fn levi_projection(m: &FpMat, kind: ParabolicKind) -> FpMat {
    let mut e = [0u8; 16];
    for &(i, j) in kind.levi_positions() {
        e[4 * i + j] = m.0[4 * i + j];
    }
    FpMat(e)
}

/// `GSp4(F_p)` enumerated once, with the Bruhat cell of each element.
pub struct FiniteGroup {
    pub p: u64,
    pub elements: Vec<FpMat>,
    pub cells: Vec<WeylWord>,
}

impl FiniteGroup {
    pub fn enumerate(p: u64) -> Result<FiniteGroup, CosetError> {
        if p != 2 && p != 3 {
            return Err(CosetError::UnsupportedPrime(p));
        }
        let mut gens = borel_generators(p);
        gens.push(FpMat::from_ints(S1_INT, p));
        gens.push(FpMat::from_ints(S2_INT, p));
        let elements = generate_subgroup(&gens, p, usize::MAX).expect("no cap");
        let cells = elements
            .par_iter()
            .map(|k| bruhat_cell(k, p).expect("enumerated elements are similitudes"))
            .collect();
        Ok(FiniteGroup { p, elements, cells })
    }

    pub fn order(&self) -> usize {
        self.elements.len()
    }

    /// Elements of `P(F_p)`.
    pub fn parabolic(&self, kind: ParabolicKind) -> Vec<FpMat> {
        let z = kind.zero_pattern();
        self.elements.iter().filter(|m| in_pattern(m, &z)).copied().collect()
    }
}

/// Indices of the stabilizer of the coset `x B(F_p)` in `P`, `N` and `M`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StabilizerReport {
    pub label: CosetLabel,
    pub index_p: u64,
    pub index_n: u64,
    pub index_m: u64,
    /// Orbit size of `x B(F_p)` under `P(F_p)`, counted directly.
    pub orbit_size: u64,
    /// The stabilizer agrees with the tabulated congruence pattern.
    pub pattern_matches: bool,
}

impl StabilizerReport {
    pub fn product_identity_holds(&self) -> bool {
        self.index_p == self.index_n * self.index_m && self.index_p == self.orbit_size
    }
}

/// Positions forced to vanish mod p in the Levi and unipotent factors of
/// `P_x = P ∩ [Levi pattern][unipotent pattern]`.
pub fn stabilizer_pattern(label: CosetLabel) -> ([[bool; 4]; 4], [[bool; 4]; 4]) {
    let mut levi = [[false; 4]; 4];
    let mut unip = [[false; 4]; 4];
    let set = |z: &mut [[bool; 4]; 4], pos: &[(usize, usize)]| {
        for &(i, j) in pos {
            z[i - 1][j - 1] = true;
        }
    };
    use WeylWord::*;
    match label.parabolic {
        ParabolicKind::Siegel => {
            set(&mut levi, &[(2, 1), (3, 4)]);
            let u: &[(usize, usize)] = match label.word {
                Id => &[],
                S2 => &[(2, 4)],
                S2S1 => &[(1, 4), (2, 3), (2, 4)],
                _ => &[(1, 3), (1, 4), (2, 3), (2, 4)],
            };
            set(&mut unip, u);
        }
        ParabolicKind::Klingen => {
            set(&mut levi, &[(4, 2)]);
            let u: &[(usize, usize)] = match label.word {
                Id => &[],
                S1 => &[(1, 2), (4, 3)],
                S1S2 => &[(1, 2), (1, 3), (4, 3)],
                _ => &[(1, 2), (1, 3), (1, 4), (2, 3), (4, 3)],
            };
            set(&mut unip, u);
        }
        ParabolicKind::Borel => {
            // Upper positions (i,j) whose conjugate by σ^{-1} is below the diagonal.
            let w = weyl_int(label.word);
            let bz = ParabolicKind::Borel.zero_pattern();
            for i in 0..4 {
                for j in 0..4 {
                    if i == j || bz[i][j] {
                        continue;
                    }
                    // σ^{-1} E_ij σ = E_{π(i) π(j)} up to sign, where σ e_π(i) = ±e_i.
                    let pi = (0..4).find(|&a| w[i][a] != 0).expect("permutation");
                    let pj = (0..4).find(|&a| w[j][a] != 0).expect("permutation");
                    if bz[pi][pj] {
                        unip[i][j] = true;
                    }
                }
            }
        }
    }
    (levi, unip)
}

pub fn stabilizer_indices(group: &FiniteGroup, label: CosetLabel) -> StabilizerReport {
    let p = group.p;
    let kind = label.parabolic;
    let x = FpMat::from_ints(weyl_int(label.word), p);
    let xinv = x.inverse(p);
    let bz = ParabolicKind::Borel.zero_pattern();
    let parab = group.parabolic(kind);
    let id = FpMat::identity();
    let is_levi_identity = |g: &FpMat| kind.levi_positions().iter().all(|&(i, j)| g.get(i, j) == id.get(i, j));
    let in_stab = |g: &FpMat| in_pattern(&xinv.mul(g, p).mul(&x, p), &bz);

    let stab: Vec<FpMat> = parab.iter().filter(|g| in_stab(g)).copied().collect();
    let n_all = parab.iter().filter(|g| is_levi_identity(g)).count() as u64;
    let n_stab = stab.iter().filter(|g| is_levi_identity(g)).count() as u64;
    let levi_pattern = {
        let mut z = [[true; 4]; 4];
        for &(i, j) in kind.levi_positions() {
            z[i][j] = false;
        }
        z
    };
    let m_all = parab.iter().filter(|g| in_pattern(g, &levi_pattern)).count() as u64;
    let m_x: HashSet<FpMat> = stab.iter().map(|g| levi_projection(g, kind)).collect();

    // Orbit of x·B(F_p) under P(F_p), counted through Borel-coset keys.
    let borel: Vec<FpMat> = group.elements.iter().filter(|m| in_pattern(m, &bz)).copied().collect();
    let coset_key = |g: &FpMat| -> FpMat { borel.iter().map(|b| g.mul(b, p)).min().expect("nonempty") };
    let orbit: HashSet<FpMat> = parab.par_iter().map(|g| coset_key(&g.mul(&x, p))).collect::<Vec<_>>().into_iter().collect();

    let (lz, uz) = stabilizer_pattern(label);
    let predicted: HashSet<FpMat> = parab
        .iter()
        .filter(|g| {
            let m = levi_projection(g, kind);
            in_pattern(&m, &lz) && in_pattern(&m.inverse(p).mul(g, p), &uz)
        })
        .copied()
        .collect();
    let actual: HashSet<FpMat> = stab.iter().copied().collect();

    StabilizerReport {
        label,
        index_p: parab.len() as u64 / stab.len() as u64,
        index_n: n_all / n_stab,
        index_m: m_all / m_x.len() as u64,
        orbit_size: orbit.len() as u64,
        pattern_matches: predicted == actual,
    }
}

/// Exhaustive classification of `GSp4(F_p)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub p: u64,
    pub group_order: usize,
    /// Per parabolic, the number of elements in each double coset.
    pub counts: Vec<(ParabolicKind, Vec<(WeylWord, usize)>)>,
    /// Per Bruhat cell, `(size, |B|·p^ℓ)`.
    pub cell_sizes: Vec<(WeylWord, usize, usize)>,
    /// Double cosets built by closing `x` under left `P` and right `B`
    /// generators agree with `classify` and partition the group.
    pub explicit_cosets_agree: bool,
    /// `classify` is unchanged under random left/right translates.
    pub translation_invariant: bool,
}

impl ClassificationReport {
    pub fn label_counts(&self) -> Vec<usize> {
        self.counts.iter().map(|(_, v)| v.iter().filter(|(_, n)| *n > 0).count()).collect()
    }

    pub fn passed(&self) -> bool {
        self.group_order as u64 == group_order(self.p)
            && self.label_counts() == vec![8, 4, 4]
            && self.cell_sizes.iter().all(|&(_, a, b)| a == b)
            && self.explicit_cosets_agree
            && self.translation_invariant
    }
}

fn explicit_double_cosets(group: &FiniteGroup, kind: ParabolicKind) -> HashMap<FpMat, WeylWord> {
    let p = group.p;
    let left = parabolic_generators(kind, p);
    let right = borel_generators(p);
    let mut owner: HashMap<FpMat, WeylWord> = HashMap::new();
    for &x in kind.representatives() {
        let start = FpMat::from_ints(weyl_int(x), p);
        let mut queue = VecDeque::from([start]);
        owner.insert(start, x);
        while let Some(g) = queue.pop_front() {
            for h in left.iter().map(|l| l.mul(&g, p)).chain(right.iter().map(|r| g.mul(r, p))) {
                if let std::collections::hash_map::Entry::Vacant(e) = owner.entry(h) {
                    e.insert(x);
                    queue.push_back(h);
                }
            }
        }
    }
    owner
}

pub fn classification_report<R: Rng>(group: &FiniteGroup, rng: &mut R) -> ClassificationReport {
    let p = group.p;
    let borel_order = group.parabolic(ParabolicKind::Borel).len();
    let mut counts = Vec::new();
    let mut explicit_ok = true;
    let mut invariant = true;
    for kind in ParabolicKind::ALL {
        let labels: Vec<WeylWord> = group.cells.iter().map(|&c| kind.coset_representative(c)).collect();
        let per: Vec<(WeylWord, usize)> = kind
            .representatives()
            .iter()
            .map(|&w| (w, labels.iter().filter(|&&l| l == w).count()))
            .collect();
        counts.push((kind, per));

        let owner = explicit_double_cosets(group, kind);
        explicit_ok &= owner.len() == group.order()
            && group.elements.iter().zip(&labels).all(|(g, l)| owner.get(g) == Some(l));

        let parab = group.parabolic(kind);
        let borel = group.parabolic(ParabolicKind::Borel);
        for _ in 0..200 {
            let i = rng.random_range(0..group.order());
            let a = parab[rng.random_range(0..parab.len())];
            let b = borel[rng.random_range(0..borel.len())];
            let g = a.mul(&group.elements[i], p).mul(&b, p);
            invariant &= classify(&g, kind, p).map(|c| c.word).ok() == Some(labels[i]);
        }
    }
    let cell_sizes = WeylWord::ALL
        .iter()
        .map(|&w| {
            let n = group.cells.iter().filter(|&&c| c == w).count();
            (w, n, borel_order * p.pow(w.length()) as usize)
        })
        .collect();
    ClassificationReport {
        p,
        group_order: group.order(),
        counts,
        cell_sizes,
        explicit_cosets_agree: explicit_ok,
        translation_invariant: invariant,
    }
}

/// Outcome of one finite group lemma check.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LemmaCheck {
    pub name: String,
    pub cases: usize,
    /// Cases skipped because a hypothesis was not met.
    pub skipped: usize,
    pub failures: usize,
    pub witness: Option<String>,
}

impl LemmaCheck {
    fn new(name: &str) -> Self {
        LemmaCheck {
            name: name.to_string(),
            cases: 0,
            skipped: 0,
            failures: 0,
            witness: None,
        }
    }

    fn record(&mut self, ok: bool, witness: impl FnOnce() -> String) {
        self.cases += 1;
        if !ok {
            self.failures += 1;
            if self.witness.is_none() {
                self.witness = Some(witness());
            }
        }
    }

    pub fn passed(&self) -> bool {
        self.failures == 0 && self.cases > 0
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GroupLemmaReport {
    pub p: u64,
    pub checks: Vec<LemmaCheck>,
}

impl GroupLemmaReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(LemmaCheck::passed)
    }
}

fn random_element<R: Rng>(group: &FiniteGroup, rng: &mut R) -> FpMat {
    group.elements[rng.random_range(0..group.order())]
}

fn det_mod_p(m: &FpMat, p: u64) -> u32 {
    let pp = p as u32;
    let mut a: [[u32; 4]; 4] = std::array::from_fn(|i| std::array::from_fn(|j| m.get(i, j)));
    let mut det = 1u32;
    for c in 0..4 {
        let Some(piv) = (c..4).find(|&r| a[r][c] != 0) else {
            return 0;
        };
        if piv != c {
            a.swap(piv, c);
            det = (pp - det) % pp;
        }
        det = det * a[c][c] % pp;
        let inv = inv_mod(a[c][c], pp);
        for r in c + 1..4 {
            let f = a[r][c] * inv % pp;
            for cc in c..4 {
                a[r][cc] = (a[r][cc] + pp * pp - f * a[c][cc]) % pp;
            }
        }
    }
    det
}

/// The three containment patterns, as forced-zero positions (1-based).
const CONGRUENCE_PATTERNS: [&[(usize, usize)]; 3] = [
    &[(2, 1), (3, 1), (4, 1)],
    &[(3, 1), (3, 2), (3, 4)],
    &[(3, 1), (3, 2), (4, 1), (4, 2)],
];

fn satisfies_congruence_hypothesis(g: &FpMat, p: u64) -> bool {
    g.get(2, 0) == 0 && (g.get(2, 1) * g.get(3, 0)) % p as u32 == 0
}

fn random_gl4_hypothesis<R: Rng>(p: u64, rng: &mut R) -> FpMat {
    loop {
        let mut e = [0u8; 16];
        for x in e.iter_mut() {
            *x = rng.random_range(0..p) as u8;
        }
        let m = FpMat(e);
        if det_mod_p(&m, p) != 0 && satisfies_congruence_hypothesis(&m, p) {
            return m;
        }
    }
}

/// Random element of the paramodular group built from its generators.
pub fn random_paramodular<R: Rng>(p: u64, rng: &mut R, steps: usize) -> GMat {
    let pi = p as i64;
    let mut g = GMat::identity();
    for _ in 0..steps {
        let t = rng.random_range(-3 * pi..=3 * pi);
        let f = match rng.random_range(0..10) {
            0 => RootVector::Pos1.unipotent(&ExactRational::from_int(t)),
            1 => RootVector::Pos2.unipotent(&ExactRational::new(t, pi)),
            2 => RootVector::Pos3.unipotent(&ExactRational::from_int(t)),
            3 => RootVector::Pos4.unipotent(&ExactRational::from_int(t)),
            4 => RootVector::Neg1.unipotent(&ExactRational::from_int(t * pi)),
            5 => RootVector::Neg2.unipotent(&ExactRational::from_int(t * pi)),
            6 => RootVector::Neg3.unipotent(&ExactRational::from_int(t)),
            7 => RootVector::Neg4.unipotent(&ExactRational::from_int(t * pi)),
            8 => weyl_matrix(WeylWord::S2),
            _ => {
                let u = |rng: &mut R| loop {
                    let u = rng.random_range(1..4 * pi);
                    if u % pi != 0 {
                        break ExactRational::from_int(u);
                    }
                };
                GMat::torus(&u(rng), &u(rng), &u(rng))
            }
        };
        g = g.mul(&f);
    }
    g
}

/// `diag(1,p,p,1)·s1`.
pub fn paramodular_normalizer(p: u64) -> GMat {
    let one = ExactRational::one();
    let pp = ExactRational::from_int(p as i64);
    GMat::torus(&one, &pp, &pp).mul(&weyl_matrix(WeylWord::S1))
}

/// Checks of the finite group lemmas at `p`:
/// the index product identity on the coset action, the index monotonicity
/// `[U : U∩H] ≤ [K : H]`, the mod-p congruence-subgroup trichotomy,
/// `GSp4(F_p) = B·W·U`, and the paramodular normalizer.
pub fn verify_group_lemmas<R: Rng>(group: &FiniteGroup, rng: &mut R) -> GroupLemmaReport {
    let p = group.p;
    let mut checks = Vec::new();

    let mut a = LemmaCheck::new("index product identity on P-orbits of G/B");
    for label in CosetLabel::all() {
        let r = stabilizer_indices(group, label);
        a.record(r.product_identity_holds(), || format!("{r:?}"));
    }
    checks.push(a);

    let mut b = LemmaCheck::new("[U : U∩H] <= [K : H]");
    let structured: Vec<Vec<FpMat>> = ParabolicKind::ALL.iter().map(|&k| group.parabolic(k)).collect();
    let unipotent: Vec<FpMat> = structured[0]
        .iter()
        .filter(|m| (0..4).all(|i| m.get(i, i) == 1))
        .copied()
        .collect();
    for trial in 0..60 {
        let c = random_element(group, rng);
        let cinv = c.inverse(p);
        let h: HashSet<FpMat> = structured[trial % 3].iter().map(|x| c.mul(x, p).mul(&cinv, p)).collect();
        let u: Vec<FpMat> = if trial % 2 == 0 {
            unipotent.clone()
        } else {
            generate_subgroup(&[random_element(group, rng), random_element(group, rng)], p, group.order())
                .expect("subgroup of a finite group")
        };
        let inter = u.iter().filter(|x| h.contains(x)).count();
        let lhs = u.len() / inter;
        let rhs = group.order() / h.len();
        b.record(lhs <= rhs, || format!("trial {trial}: [U:U∩H]={lhs}, [K:H]={rhs}"));
    }
    checks.push(b);

    let mut c = LemmaCheck::new("congruence subgroup trichotomy mod p");
    for _ in 0..200 {
        let ngens = rng.random_range(1..=2);
        let gens: Vec<FpMat> = (0..ngens).map(|_| random_gl4_hypothesis(p, rng)).collect();
        let Some(h) = generate_subgroup(&gens, p, 20_000) else {
            c.skipped += 1;
            continue;
        };
        if !h.iter().all(|g| satisfies_congruence_hypothesis(g, p)) {
            c.skipped += 1;
            continue;
        }
        let ok = CONGRUENCE_PATTERNS
            .iter()
            .any(|pat| h.iter().all(|g| pat.iter().all(|&(i, j)| g.get(i - 1, j - 1) == 0)));
        c.record(ok, || gens.iter().map(FpMat::to_text).collect::<Vec<_>>().join(" "));
    }
    checks.push(c);

    let mut d = LemmaCheck::new("GSp4(F_p) = B W U");
    let borel = group.parabolic(ParabolicKind::Borel);
    let unip_set: Vec<FpMat> = unipotent.clone();
    let products: HashSet<FpMat> = WeylWord::ALL
        .par_iter()
        .flat_map_iter(|&w| {
            let wm = FpMat::from_ints(weyl_int(w), p);
            let borel = &borel;
            let unip_set = &unip_set;
            borel.iter().flat_map(move |b| {
                let bw = b.mul(&wm, p);
                unip_set.iter().map(move |u| bw.mul(u, p))
            })
        })
        .collect();
    for g in &group.elements {
        d.record(products.contains(g), || g.to_text());
    }
    checks.push(d);

    let mut e = LemmaCheck::new("diag(1,p,p,1)s1 normalizes the paramodular group");
    let eta = paramodular_normalizer(p);
    let eta_inv = eta.inverse();
    for _ in 0..200 {
        let k = random_paramodular(p, rng, 12);
        let member = subgroup_membership(&GroupElement::GSp4(k.clone()), SubgroupKind::Paramodular, p);
        let fwd = eta.mul(&k).mul(&eta_inv);
        let back = eta_inv.mul(&k).mul(&eta);
        let ok = member
            && subgroup_membership(&GroupElement::GSp4(fwd), SubgroupKind::Paramodular, p)
            && subgroup_membership(&GroupElement::GSp4(back), SubgroupKind::Paramodular, p);
        e.record(ok, || k.to_text());
    }
    checks.push(e);

    GroupLemmaReport { p, checks }
}

/// `α(x)` for Borel labels.
pub fn alpha_borel(w: WeylWord) -> ExactRational {
    use WeylWord::*;
    ExactRational::from_int(match w {
        Id | S1 => 2,
        S2 | S1S2 | S2S1 | S1S2S1 | S2S1S2 => 1,
        J => 0,
    })
}

/// `α(x)` for maximal-parabolic labels.
pub fn alpha_maximal(kind: ParabolicKind, w: WeylWord) -> ExactRational {
    use WeylWord::*;
    match (kind, w) {
        (ParabolicKind::Siegel, Id) => ExactRational::new(3, 2),
        (ParabolicKind::Klingen, Id) => ExactRational::from_int(1),
        (_, S2) | (_, S2S1) => ExactRational::new(1, 2),
        (_, S1) => ExactRational::from_int(1),
        _ => ExactRational::zero(),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LedgerRow {
    pub label: CosetLabel,
    pub alpha: ExactRational,
    /// `ℓ(x)` for Borel labels, `log_p [N∩K : N_x]` otherwise.
    pub exponent: u32,
    /// `2α + exponent`.
    pub total: ExactRational,
    pub bound: i64,
    pub holds: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExponentLedger {
    pub p: u64,
    pub rows: Vec<LedgerRow>,
    /// For Borel labels, `[P∩K : P_x] = p^{ℓ(x)}`.
    pub borel_index_is_length: bool,
}

impl ExponentLedger {
    pub fn passed(&self) -> bool {
        self.borel_index_is_length && self.rows.iter().all(|r| r.holds)
    }
}

fn exact_log(n: u64, p: u64) -> Option<u32> {
    let mut k = 0;
    let mut m = n;
    while m % p == 0 && m > 1 {
        m /= p;
        k += 1;
    }
    (m == 1).then_some(k)
}

/// Checks `2α(s) + ℓ(s) ≥ 3` on Borel labels and `2α(x) + log_p index_N ≥ 2`
/// on maximal-parabolic labels.
pub fn exponent_ledger(group: &FiniteGroup) -> ExponentLedger {
    let p = group.p;
    let mut rows = Vec::new();
    let mut borel_ok = true;
    for label in CosetLabel::all() {
        let rep = stabilizer_indices(group, label);
        let (alpha, exponent, bound) = match label.parabolic {
            ParabolicKind::Borel => {
                borel_ok &= rep.index_p == p.pow(label.word.length());
                (alpha_borel(label.word), label.word.length(), 3)
            }
            kind => {
                let e = exact_log(rep.index_n, p).unwrap_or(u32::MAX);
                (alpha_maximal(kind, label.word), e, 2)
            }
        };
        let total = &(&ExactRational::from_int(2) * &alpha) + &ExactRational::from_int(exponent as i64);
        let holds = exponent != u32::MAX && total >= ExactRational::from_int(bound);
        rows.push(LedgerRow {
            label,
            alpha,
            exponent,
            total,
            bound,
            holds,
        });
    }
    ExponentLedger {
        p,
        rows,
        borel_index_is_length: borel_ok,
    }
}

/// Full cosets report at one prime.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CosetsReport {
    pub classification: ClassificationReport,
    pub stabilizers: Vec<StabilizerReport>,
    pub lemmas: GroupLemmaReport,
    pub ledger: ExponentLedger,
}

impl CosetsReport {
    pub fn passed(&self) -> bool {
        self.classification.passed()
            && self.stabilizers.iter().all(|s| s.product_identity_holds() && s.pattern_matches)
            && self.lemmas.passed()
            && self.ledger.passed()
    }
}

pub fn cosets_report<R: Rng>(p: u64, rng: &mut R) -> Result<CosetsReport, CosetError> {
    let group = FiniteGroup::enumerate(p)?;
    let classification = classification_report(&group, rng);
    let stabilizers = CosetLabel::all().into_iter().map(|l| stabilizer_indices(&group, l)).collect();
    let lemmas = verify_group_lemmas(&group, rng);
    let ledger = exponent_ledger(&group);
    Ok(CosetsReport {
        classification,
        stabilizers,
        lemmas,
        ledger,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn group_orders() {
        assert_eq!(FiniteGroup::enumerate(2).unwrap().order(), 720);
        assert_eq!(group_order(3), 103_680);
    }

    #[test]
    fn classify_examples() {
        let p = 2;
        assert_eq!(classify(&FpMat::identity(), ParabolicKind::Siegel, p).unwrap().word, WeylWord::Id);
        let s1 = FpMat::from_ints(S1_INT, p);
        assert_eq!(classify(&s1, ParabolicKind::Siegel, p).unwrap().word, WeylWord::Id);
        assert_eq!(classify(&s1, ParabolicKind::Klingen, p).unwrap().word, WeylWord::S1);
        assert!(CosetLabel::new(ParabolicKind::Siegel, WeylWord::S1).is_err());
    }

    #[test]
    fn exhaustive_at_two() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rep = cosets_report(2, &mut rng).unwrap();
        assert_eq!(rep.classification.label_counts(), vec![8, 4, 4]);
        assert!(rep.passed(), "{rep:#?}");
        let klingen_j = rep
            .stabilizers
            .iter()
            .find(|s| s.label.parabolic == ParabolicKind::Klingen && s.label.word == WeylWord::S1S2S1)
            .unwrap();
        assert!(klingen_j.index_n >= 4);
    }

    #[test]
    fn alpha_tables() {
        assert_eq!(alpha_borel(WeylWord::J), ExactRational::zero());
        assert_eq!(alpha_maximal(ParabolicKind::Siegel, WeylWord::Id), ExactRational::new(3, 2));
        assert_eq!(alpha_maximal(ParabolicKind::Klingen, WeylWord::S1S2S1), ExactRational::zero());
    }
}
