//! GSp(4) over the rationals and its p-adic and finite-field shadows:
//! multiplier, Weyl group, parabolic data, Iwasawa and Bruhat
//! decompositions, power functions and congruence-subgroup membership.
//!
//! Conventions: `J = [[0,0,1,0],[0,0,0,1],[-1,0,0,0],[0,-1,0,0]]` and
//! `ᵗg J g = μ(g) J`. The Borel subgroup has shape
//! `[[*,*,*,*],[0,*,*,*],[0,0,*,0],[0,0,*,*]]`, which is upper triangular in
//! the basis order (e1, e2, e4, e3). The torus is `diag(a1, a2, a3/a1, a3/a2)`.

use std::fmt;
use std::sync::OnceLock;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exactnum::{residue_mod_pk, vp, ExactRational, Valuation};
use crate::laurent::{LaurentExpr, Symbol};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GspError {
    #[error("matrix is not a symplectic similitude")]
    NotSimilitude,
    #[error("matrix is singular")]
    Singular,
    #[error("matrix is not integral at p = {0}")]
    NotIntegral(u64),
    #[error("power function has a half-integral exponent of ν")]
    HalfIntegralExponent,
    #[error("Weyl word {0:?} not recognised")]
    UnknownWord(String),
}

/// Scalars on which the Iwasawa elimination can run: exact rationals, or
/// p-adic balls for which some valuations may be undetermined.
pub trait PadicScalar: Clone + fmt::Debug {
    fn from_rational(r: &ExactRational) -> Self;
    fn add(&self, o: &Self) -> Self;
    fn sub(&self, o: &Self) -> Self;
    fn mul(&self, o: &Self) -> Self;
    fn neg(&self) -> Self;
    /// Valuation, or `None` if it is not determined.
    fn val(&self, p: u64) -> Option<Valuation>;
    /// Lower bound on the valuation of every represented element.
    fn val_lower_bound(&self, p: u64) -> Valuation;
    /// Inverse, or `None` if the element may be zero.
    fn inv(&self, p: u64) -> Option<Self>;
    /// Residue modulo p of an integral element, if determined.
    fn residue(&self, p: u64) -> Option<u64>;

    fn zero() -> Self {
        Self::from_rational(&ExactRational::zero())
    }

    fn one() -> Self {
        Self::from_rational(&ExactRational::one())
    }
}

impl PadicScalar for ExactRational {
    fn from_rational(r: &ExactRational) -> Self {
        r.clone()
    }
    fn add(&self, o: &Self) -> Self {
        self + o
    }
    fn sub(&self, o: &Self) -> Self {
        self - o
    }
    fn mul(&self, o: &Self) -> Self {
        self * o
    }
    fn neg(&self) -> Self {
        -self
    }
    fn val(&self, p: u64) -> Option<Valuation> {
        Some(vp(self, p))
    }
    fn val_lower_bound(&self, p: u64) -> Valuation {
        vp(self, p)
    }
    fn inv(&self, _p: u64) -> Option<Self> {
        self.recip().ok()
    }
    fn residue(&self, p: u64) -> Option<u64> {
        residue_mod_pk(self, p, 1).map(|r| {
            use num_traits::ToPrimitive;
            r.to_u64().expect("residue fits")
        })
    }
}

pub type Mat4<S> = [[S; 4]; 4];

pub fn mat_identity<S: PadicScalar>() -> Mat4<S> {
    std::array::from_fn(|i| std::array::from_fn(|j| if i == j { S::one() } else { S::zero() }))
}

pub fn mat_mul<S: PadicScalar>(a: &Mat4<S>, b: &Mat4<S>) -> Mat4<S> {
    std::array::from_fn(|i| {
        std::array::from_fn(|j| {
            let mut acc = a[i][0].mul(&b[0][j]);
            for k in 1..4 {
                acc = acc.add(&a[i][k].mul(&b[k][j]));
            }
            acc
        })
    })
}

pub fn mat_transpose<S: PadicScalar>(a: &Mat4<S>) -> Mat4<S> {
    std::array::from_fn(|i| std::array::from_fn(|j| a[j][i].clone()))
}

pub fn mat_from_ints<S: PadicScalar>(m: [[i64; 4]; 4]) -> Mat4<S> {
    std::array::from_fn(|i| std::array::from_fn(|j| S::from_rational(&ExactRational::from_int(m[i][j]))))
}

pub const J_INT: [[i64; 4]; 4] = [[0, 0, 1, 0], [0, 0, 0, 1], [-1, 0, 0, 0], [0, -1, 0, 0]];
pub const S1_INT: [[i64; 4]; 4] = [[0, 1, 0, 0], [1, 0, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]];
pub const S2_INT: [[i64; 4]; 4] = [[1, 0, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0], [0, -1, 0, 0]];

/// `ᵗg J g` for an exact matrix.
fn gram(g: &Mat4<ExactRational>) -> Mat4<ExactRational> {
    let j: Mat4<ExactRational> = mat_from_ints(J_INT);
    mat_mul(&mat_mul(&mat_transpose(g), &j), g)
}

/// A 4×4 rational symplectic similitude with cached multiplier.
#[derive(Clone, PartialEq, Eq)]
pub struct GMat {
    entries: Mat4<ExactRational>,
    mu: ExactRational,
}

impl GMat {
    pub fn new(entries: Mat4<ExactRational>) -> Result<Self, GspError> {
        let mu = multiplier(&entries)?;
        Ok(GMat { entries, mu })
    }

    pub fn from_ints(m: [[i64; 4]; 4]) -> Result<Self, GspError> {
        GMat::new(mat_from_ints(m))
    }

    pub fn identity() -> Self {
        GMat {
            entries: mat_identity(),
            mu: ExactRational::one(),
        }
    }

    pub fn j() -> Self {
        GMat::from_ints(J_INT).expect("J is symplectic")
    }

    pub fn entries(&self) -> &Mat4<ExactRational> {
        &self.entries
    }

    pub fn entry(&self, i: usize, j: usize) -> &ExactRational {
        &self.entries[i][j]
    }

    pub fn mu(&self) -> &ExactRational {
        &self.mu
    }

    pub fn mul(&self, other: &GMat) -> GMat {
        GMat {
            entries: mat_mul(&self.entries, &other.entries),
            mu: &self.mu * &other.mu,
        }
    }

    /// `g^{-1} = μ^{-1} J^{-1} ᵗg J`.
    pub fn inverse(&self) -> GMat {
        let j: Mat4<ExactRational> = mat_from_ints(J_INT);
        let jinv: Mat4<ExactRational> = mat_from_ints(J_INT.map(|r| r.map(|x| -x)));
        let t = mat_mul(&mat_mul(&jinv, &mat_transpose(&self.entries)), &j);
        let s = self.mu.recip().expect("nonzero multiplier");
        GMat {
            entries: t.map(|r| r.map(|x| &x * &s)),
            mu: s,
        }
    }

    /// `diag(a1, a2, a3/a1, a3/a2)`.
    pub fn torus(a1: &ExactRational, a2: &ExactRational, a3: &ExactRational) -> GMat {
        let z = ExactRational::zero();
        let d = [a1.clone(), a2.clone(), a3 / a1, a3 / a2];
        GMat {
            entries: std::array::from_fn(|i| std::array::from_fn(|j| if i == j { d[i].clone() } else { z.clone() })),
            mu: a3.clone(),
        }
    }

    /// Klingen unipotent `n(x,y,z) = [[1,x,z,y],[0,1,y,0],[0,0,1,0],[0,0,-x,1]]`.
    pub fn klingen_unipotent(x: &ExactRational, y: &ExactRational, z: &ExactRational) -> GMat {
        let o = ExactRational::one();
        let n = ExactRational::zero();
        GMat {
            entries: [
                [o.clone(), x.clone(), z.clone(), y.clone()],
                [n.clone(), o.clone(), y.clone(), n.clone()],
                [n.clone(), n.clone(), o.clone(), n.clone()],
                [n.clone(), n.clone(), -x, o.clone()],
            ],
            mu: o,
        }
    }

    /// Siegel unipotent `[[1, Y],[0, 1]]` with `Y = [[x,y],[y,z]]`.
    pub fn siegel_unipotent(x: &ExactRational, y: &ExactRational, z: &ExactRational) -> GMat {
        let o = ExactRational::one();
        let n = ExactRational::zero();
        GMat {
            entries: [
                [o.clone(), n.clone(), x.clone(), y.clone()],
                [n.clone(), o.clone(), y.clone(), z.clone()],
                [n.clone(), n.clone(), o.clone(), n.clone()],
                [n.clone(), n.clone(), n.clone(), o.clone()],
            ],
            mu: o,
        }
    }

    /// Borel unipotent `u = n_x · n_Y` with `n_x = n(x,0,0)` and `Y = [[a,b],[b,c]]`.
    pub fn borel_unipotent(x: &ExactRational, a: &ExactRational, b: &ExactRational, c: &ExactRational) -> GMat {
        let z = ExactRational::zero();
        GMat::klingen_unipotent(x, &z, &z).mul(&GMat::siegel_unipotent(a, b, c))
    }

    /// Canonical one-line text form.
    pub fn to_text(&self) -> String {
        let rows: Vec<String> = self
            .entries
            .iter()
            .map(|r| format!("[{}]", r.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")))
            .collect();
        format!("[{}]", rows.join(","))
    }
}

impl fmt::Debug for GMat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GMat{}", self.to_text())
    }
}

/// The scalar `μ` with `ᵗg J g = μ J`.
pub fn multiplier(g: &Mat4<ExactRational>) -> Result<ExactRational, GspError> {
    let m = gram(g);
    let mu = m[0][2].clone();
    let j: Mat4<ExactRational> = mat_from_ints(J_INT);
    for i in 0..4 {
        for k in 0..4 {
            if m[i][k] != &mu * &j[i][k] {
                return Err(GspError::NotSimilitude);
            }
        }
    }
    if mu.is_zero() {
        return Err(GspError::Singular);
    }
    Ok(mu)
}

/// The eight elements of the Weyl group, stored by a fixed reduced word.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum WeylWord {
    Id,
    S1,
    S2,
    S1S2,
    S2S1,
    S1S2S1,
    S2S1S2,
    J,
}

impl WeylWord {
    pub const ALL: [WeylWord; 8] = [
        WeylWord::Id,
        WeylWord::S1,
        WeylWord::S2,
        WeylWord::S1S2,
        WeylWord::S2S1,
        WeylWord::S1S2S1,
        WeylWord::S2S1S2,
        WeylWord::J,
    ];

    pub fn length(self) -> u32 {
        self.generators().len() as u32
    }

    /// Reduced word as a sequence of generator indices (1 or 2).
    pub fn generators(self) -> &'static [u8] {
        match self {
            WeylWord::Id => &[],
            WeylWord::S1 => &[1],
            WeylWord::S2 => &[2],
            WeylWord::S1S2 => &[1, 2],
            WeylWord::S2S1 => &[2, 1],
            WeylWord::S1S2S1 => &[1, 2, 1],
            WeylWord::S2S1S2 => &[2, 1, 2],
            WeylWord::J => &[1, 2, 1, 2],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            WeylWord::Id => "1",
            WeylWord::S1 => "s1",
            WeylWord::S2 => "s2",
            WeylWord::S1S2 => "s1s2",
            WeylWord::S2S1 => "s2s1",
            WeylWord::S1S2S1 => "s1s2s1",
            WeylWord::S2S1S2 => "s2s1s2",
            WeylWord::J => "J",
        }
    }

    pub fn parse(s: &str) -> Result<WeylWord, GspError> {
        WeylWord::ALL
            .into_iter()
            .find(|w| w.name() == s)
            .ok_or_else(|| GspError::UnknownWord(s.to_string()))
    }

    pub fn inverse(self) -> WeylWord {
        match self {
            WeylWord::S1S2 => WeylWord::S2S1,
            WeylWord::S2S1 => WeylWord::S1S2,
            w => w,
        }
    }

    /// Group product `self · other`.
    pub fn compose(self, other: WeylWord) -> WeylWord {
        weyl_tables().product[self as usize][other as usize]
    }

    /// Zero pattern of the signed permutation matrix.
    pub fn support(self) -> [[bool; 4]; 4] {
        weyl_tables().support[self as usize]
    }
}

impl fmt::Display for WeylWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

struct WeylTables {
    ints: [[[i64; 4]; 4]; 8],
    support: [[[bool; 4]; 4]; 8],
    product: [[WeylWord; 8]; 8],
}

fn int_mul(a: &[[i64; 4]; 4], b: &[[i64; 4]; 4]) -> [[i64; 4]; 4] {
    std::array::from_fn(|i| std::array::from_fn(|j| (0..4).map(|k| a[i][k] * b[k][j]).sum()))
}

fn weyl_tables() -> &'static WeylTables {
    static T: OnceLock<WeylTables> = OnceLock::new();
    T.get_or_init(|| {
        let mut ints = [[[0i64; 4]; 4]; 8];
        for w in WeylWord::ALL {
            let mut m = [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 1, 0], [0, 0, 0, 1]];
            for &g in w.generators() {
                m = int_mul(&m, if g == 1 { &S1_INT } else { &S2_INT });
            }
            ints[w as usize] = m;
        }
        let support = ints.map(|m| m.map(|r| r.map(|x| x != 0)));
        let find = |m: &[[i64; 4]; 4]| {
            let s = m.map(|r| r.map(|x| x != 0));
            WeylWord::ALL[support.iter().position(|t| *t == s).expect("Weyl closure")]
        };
        let product = std::array::from_fn(|a| std::array::from_fn(|b| find(&int_mul(&ints[a], &ints[b]))));
        WeylTables { ints, support, product }
    })
}

/// Integer matrix of the product of generator matrices along the reduced word.
pub fn weyl_int(w: WeylWord) -> [[i64; 4]; 4] {
    weyl_tables().ints[w as usize]
}

pub fn weyl_matrix(w: WeylWord) -> GMat {
    GMat::from_ints(weyl_int(w)).expect("Weyl elements are symplectic")
}

/// Parabolic subgroups containing the fixed Borel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ParabolicKind {
    Borel,
    Siegel,
    Klingen,
}

impl ParabolicKind {
    pub const ALL: [ParabolicKind; 3] = [ParabolicKind::Borel, ParabolicKind::Siegel, ParabolicKind::Klingen];

    pub fn name(self) -> &'static str {
        match self {
            ParabolicKind::Borel => "Borel",
            ParabolicKind::Siegel => "Siegel",
            ParabolicKind::Klingen => "Klingen",
        }
    }

    /// `ρ_P`: (2,1) for the Borel, 3/2 for Siegel, 2 for Klingen.
    pub fn rho(self) -> Vec<ExactRational> {
        match self {
            ParabolicKind::Borel => vec![ExactRational::from_int(2), ExactRational::from_int(1)],
            ParabolicKind::Siegel => vec![ExactRational::new(3, 2)],
            ParabolicKind::Klingen => vec![ExactRational::from_int(2)],
        }
    }

    /// The Weyl element `σ_P` in front of the unipotent variable of the local integral.
    pub fn sigma(self) -> WeylWord {
        match self {
            ParabolicKind::Borel => WeylWord::J,
            ParabolicKind::Siegel => WeylWord::S2S1S2,
            ParabolicKind::Klingen => WeylWord::S1S2S1,
        }
    }

    /// Weyl group of the Levi factor.
    pub fn levi_weyl(self) -> &'static [WeylWord] {
        match self {
            ParabolicKind::Borel => &[WeylWord::Id],
            ParabolicKind::Siegel => &[WeylWord::Id, WeylWord::S1],
            ParabolicKind::Klingen => &[WeylWord::Id, WeylWord::S2],
        }
    }

    /// Representatives of `(P ∩ K) \ K / B(p)`.
    pub fn representatives(self) -> &'static [WeylWord] {
        match self {
            ParabolicKind::Borel => &WeylWord::ALL,
            ParabolicKind::Siegel => &[WeylWord::Id, WeylWord::S2, WeylWord::S2S1, WeylWord::S2S1S2],
            ParabolicKind::Klingen => &[WeylWord::Id, WeylWord::S1, WeylWord::S1S2, WeylWord::S1S2S1],
        }
    }

    /// Representative of the coset `W_P · w`.
    pub fn coset_representative(self, w: WeylWord) -> WeylWord {
        let reps = self.representatives();
        for &l in self.levi_weyl() {
            let c = l.compose(w);
            if reps.contains(&c) {
                return c;
            }
        }
        unreachable!("every coset meets the representative set")
    }

    /// Positions (row, col) that are structurally zero in `P`.
    pub fn zero_pattern(self) -> [[bool; 4]; 4] {
        let mut z = [[false; 4]; 4];
        let zeros: &[(usize, usize)] = match self {
            ParabolicKind::Borel => &[(1, 0), (2, 0), (2, 1), (2, 3), (3, 0), (3, 1)],
            ParabolicKind::Siegel => &[(2, 0), (2, 1), (3, 0), (3, 1)],
            ParabolicKind::Klingen => &[(1, 0), (2, 0), (2, 1), (2, 3), (3, 0)],
        };
        for &(i, j) in zeros {
            z[i][j] = true;
        }
        z
    }

    /// Positions (row, col) of the Levi factor.
    pub fn levi_positions(self) -> &'static [(usize, usize)] {
        match self {
            ParabolicKind::Borel => &[(0, 0), (1, 1), (2, 2), (3, 3)],
            ParabolicKind::Siegel => &[(0, 0), (0, 1), (1, 0), (1, 1), (2, 2), (2, 3), (3, 2), (3, 3)],
            ParabolicKind::Klingen => &[(0, 0), (1, 1), (1, 3), (3, 1), (3, 3), (2, 2)],
        }
    }
}

/// Root-group generators of `GSp4(Z_p)` acting on columns by right multiplication.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RootVector {
    /// `E12 − E43`
    Pos1,
    /// `E13`
    Pos2,
    /// `E24`
    Pos3,
    /// `E14 + E23`
    Pos4,
    /// `E21 − E34`
    Neg1,
    /// `E31`
    Neg2,
    /// `E42`
    Neg3,
    /// `E32 + E41`
    Neg4,
}

impl RootVector {
    pub const ALL: [RootVector; 8] = [
        RootVector::Pos1,
        RootVector::Pos2,
        RootVector::Pos3,
        RootVector::Pos4,
        RootVector::Neg1,
        RootVector::Neg2,
        RootVector::Neg3,
        RootVector::Neg4,
    ];

    /// Terms `(sign, i, j)` of the Lie algebra element, 0-based.
    pub fn terms(self) -> &'static [(i64, usize, usize)] {
        match self {
            RootVector::Pos1 => &[(1, 0, 1), (-1, 3, 2)],
            RootVector::Pos2 => &[(1, 0, 2)],
            RootVector::Pos3 => &[(1, 1, 3)],
            RootVector::Pos4 => &[(1, 0, 3), (1, 1, 2)],
            RootVector::Neg1 => &[(1, 1, 0), (-1, 2, 3)],
            RootVector::Neg2 => &[(1, 2, 0)],
            RootVector::Neg3 => &[(1, 3, 1)],
            RootVector::Neg4 => &[(1, 2, 1), (1, 3, 0)],
        }
    }

    pub fn is_positive(self) -> bool {
        matches!(self, RootVector::Pos1 | RootVector::Pos2 | RootVector::Pos3 | RootVector::Pos4)
    }

    /// `I + tX` as an exact matrix.
    pub fn unipotent(self, t: &ExactRational) -> GMat {
        let mut m: Mat4<ExactRational> = mat_identity();
        for &(s, i, j) in self.terms() {
            m[i][j] = &m[i][j] + &(&ExactRational::from_int(s) * t);
        }
        GMat::new(m).expect("root unipotents are symplectic")
    }
}

/// Right-multiply by `I + tX`: column `j` gains `t·sign·column i` for each term `E_ij`.
pub fn apply_root<S: PadicScalar>(m: &mut Mat4<S>, r: RootVector, t: &S) {
    for &(s, i, j) in r.terms() {
        let coef = if s == 1 { t.clone() } else { t.neg() };
        for row in m.iter_mut() {
            let add = row[i].mul(&coef);
            row[j] = row[j].add(&add);
        }
    }
}

/// Right-multiply by a Weyl matrix.
pub fn apply_weyl<S: PadicScalar>(m: &mut Mat4<S>, w: WeylWord) {
    let wi = weyl_int(w);
    let old = m.clone();
    for (r, row) in m.iter_mut().enumerate() {
        for c in 0..4 {
            let mut acc = S::zero();
            for k in 0..4 {
                match wi[k][c] {
                    0 => {}
                    1 => acc = acc.add(&old[r][k]),
                    -1 => acc = acc.sub(&old[r][k]),
                    _ => unreachable!(),
                }
            }
            row[c] = acc;
        }
    }
}

/// Marker for an elimination step whose pivot is not determined at the
/// current precision.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Undetermined;

/// `g · k' = b` with `b` in the Borel and `k'` in `GSp4(Z_p)`.
#[derive(Clone, Debug)]
pub struct BorelSplit<S> {
    pub b: Mat4<S>,
    pub kprime: Mat4<S>,
}

/// Shortest Weyl element moving column `j` to column 3 (index 2).
fn mover_to_col3(j: usize) -> WeylWord {
    let mut best = None;
    for w in WeylWord::ALL {
        if weyl_int(w)[j][2] != 0 && best.map_or(true, |b: WeylWord| w.length() < b.length()) {
            best = Some(w);
        }
    }
    best.expect("Weyl group is transitive on columns")
}

/// Index of an entry whose valuation is determined and no larger than any
/// possible valuation of the others; ties go to `prefer`.
fn pick_pivot<S: PadicScalar>(cands: &[(usize, &S)], prefer: usize, p: u64) -> Result<usize, Undetermined> {
    let mut best: Option<(i64, usize)> = None;
    for &(i, s) in cands {
        if let Some(Valuation::Finite(v)) = s.val(p) {
            let better = match best {
                None => true,
                Some((bv, bi)) => v < bv || (v == bv && i == prefer && bi != prefer),
            };
            if better {
                best = Some((v, i));
            }
        }
    }
    let (bv, bi) = best.ok_or(Undetermined)?;
    for &(_, s) in cands {
        if s.val(p).is_none() && s.val_lower_bound(p) < Valuation::Finite(bv) {
            return Err(Undetermined);
        }
    }
    Ok(bi)
}

/// Column elimination from the bottom rows by generators of `GSp4(Z_p)`.
pub fn borel_split<S: PadicScalar>(g: &Mat4<S>, p: u64) -> Result<BorelSplit<S>, Undetermined> {
    let mut b = g.clone();
    let mut k: Mat4<S> = mat_identity();
    let both = |b: &mut Mat4<S>, k: &mut Mat4<S>, r: RootVector, t: &S| {
        apply_root(b, r, t);
        apply_root(k, r, t);
    };

    // Row 3 becomes (0, 0, *, 0).
    let row: Vec<(usize, &S)> = (0..4).map(|j| (j, &b[2][j])).collect();
    let j = pick_pivot(&row, 2, p)?;
    if j != 2 {
        let w = mover_to_col3(j);
        apply_weyl(&mut b, w);
        apply_weyl(&mut k, w);
    }
    let pinv = b[2][2].inv(p).ok_or(Undetermined)?;
    let t = b[2][3].mul(&pinv);
    both(&mut b, &mut k, RootVector::Neg1, &t);
    let t = b[2][1].mul(&pinv).neg();
    both(&mut b, &mut k, RootVector::Neg4, &t);
    let t = b[2][0].mul(&pinv).neg();
    both(&mut b, &mut k, RootVector::Neg2, &t);

    // Row 4 becomes (0, 0, *, *); its first entry vanishes by isotropy.
    let row: Vec<(usize, &S)> = vec![(1, &b[3][1]), (3, &b[3][3])];
    let j = pick_pivot(&row, 3, p)?;
    if j == 1 {
        apply_weyl(&mut b, WeylWord::S2);
        apply_weyl(&mut k, WeylWord::S2);
    }
    let pinv = b[3][3].inv(p).ok_or(Undetermined)?;
    let t = b[3][1].mul(&pinv).neg();
    both(&mut b, &mut k, RootVector::Neg3, &t);
    Ok(BorelSplit { b, kprime: k })
}

/// Valuations `(v(a1), v(a2), v(a3))` of the torus part of `b`.
pub fn torus_valuations<S: PadicScalar>(b: &Mat4<S>, p: u64) -> Option<(i64, i64, i64)> {
    let v1 = b[0][0].val(p)?.finite()?;
    let v2 = b[1][1].val(p)?.finite()?;
    let v33 = b[2][2].val(p)?.finite()?;
    Some((v1, v2, v1 + v33))
}

/// `g = n · m · k` with `n ∈ N_P`, `m ∈ M_P`, `k ∈ GSp4(Z_p)`.
#[derive(Clone, Debug)]
pub struct IwasawaData {
    pub n: GMat,
    pub m: GMat,
    pub k: GMat,
}

pub fn iwasawa(g: &GMat, kind: ParabolicKind, p: u64) -> IwasawaData {
    let split = borel_split(g.entries(), p).expect("exact pivots are always determined");
    let kprime = GMat::new(split.kprime).expect("generators are symplectic");
    let b = g.mul(&kprime);
    let mut m: Mat4<ExactRational> = std::array::from_fn(|_| std::array::from_fn(|_| ExactRational::zero()));
    for &(i, j) in kind.levi_positions() {
        m[i][j] = b.entry(i, j).clone();
    }
    let m = GMat::new(m).expect("Levi part of a Borel element is a similitude");
    let n = b.mul(&m.inverse());
    IwasawaData { n, m, k: kprime.inverse() }
}

/// Is `g` in the unipotent radical of `P`?
pub fn in_unipotent_radical(g: &GMat, kind: ParabolicKind) -> bool {
    let z = kind.zero_pattern();
    let levi = kind.levi_positions();
    for i in 0..4 {
        for j in 0..4 {
            let e = g.entry(i, j);
            if z[i][j] && !e.is_zero() {
                return false;
            }
            if levi.contains(&(i, j)) {
                let want = if i == j { ExactRational::one() } else { ExactRational::zero() };
                if *e != want {
                    return false;
                }
            }
        }
    }
    true
}

/// Is `g` in the Levi factor of `P`?
pub fn in_levi(g: &GMat, kind: ParabolicKind) -> bool {
    let levi = kind.levi_positions();
    (0..4).all(|i| (0..4).all(|j| levi.contains(&(i, j)) || g.entry(i, j).is_zero()))
}

/// Exponent data of `I_{P,ν}`: `I_{P,ν}(g) = p^{-Σ ν_i ℓ_i}` with the
/// functionals `ℓ_i` returned here (one for maximal parabolics, two for the Borel).
pub fn power_exponents_from_valuations(kind: ParabolicKind, v: (i64, i64, i64)) -> Vec<ExactRational> {
    let (v1, v2, v3) = v;
    let half = ExactRational::new(v3, 2);
    match kind {
        ParabolicKind::Borel => vec![
            &ExactRational::from_int(v1) - &half,
            &ExactRational::from_int(v2) - &half,
        ],
        ParabolicKind::Siegel => vec![ExactRational::from_int(v1 + v2 - v3)],
        ParabolicKind::Klingen => vec![&ExactRational::from_int(v1) - &half],
    }
}

pub fn power_exponents(g: &GMat, kind: ParabolicKind, p: u64) -> Vec<ExactRational> {
    let split = borel_split(g.entries(), p).expect("exact pivots are always determined");
    let v = torus_valuations(&split.b, p).expect("exact valuations");
    power_exponents_from_valuations(kind, v)
}

/// Numeric `I_{P,ν}(g)` for real `ν` (one entry, or two for the Borel).
pub fn power_function(g: &GMat, kind: ParabolicKind, nu: &[f64], p: u64) -> f64 {
    let ell = power_exponents(g, kind, p);
    let e: f64 = ell.iter().zip(nu).map(|(l, n)| l.to_f64() * n).sum();
    (p as f64).powf(-e)
}

/// `I_{P,ρ_P+ν}(g)` as a monomial in `Q`, `T1`, `T2`.
pub fn power_function_laurent(g: &GMat, kind: ParabolicKind, p: u64) -> Result<LaurentExpr, GspError> {
    let ell = power_exponents(g, kind, p);
    shifted_power_monomial(kind, &ell, p)
}

/// `p^{-Σ (ρ_i + ν_i) ℓ_i}` written as `Q^{2Σρ_iℓ_i} T1^{ℓ_1} T2^{ℓ_2}`.
pub fn shifted_power_monomial(kind: ParabolicKind, ell: &[ExactRational], p: u64) -> Result<LaurentExpr, GspError> {
    let rho = kind.rho();
    let mut q = ExactRational::zero();
    for (r, l) in rho.iter().zip(ell) {
        q += &(&ExactRational::from_int(2) * &(r * l));
    }
    let as_int = |x: &ExactRational| -> Result<i32, GspError> {
        if x.is_integer() {
            use num_traits::ToPrimitive;
            Ok(x.numer().to_i32().expect("small exponent"))
        } else {
            Err(GspError::HalfIntegralExponent)
        }
    };
    let mut powers = vec![(Symbol::Q, as_int(&q)?)];
    powers.push((Symbol::T1, as_int(&ell[0])?));
    if ell.len() > 1 {
        powers.push((Symbol::T2, as_int(&ell[1])?));
    }
    Ok(LaurentExpr::monomial(p, ExactRational::one(), &powers))
}

/// A 4×4 matrix over `F_p` stored as residues.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct FpMat(pub [u8; 16]);

impl FpMat {
    pub fn identity() -> FpMat {
        let mut e = [0u8; 16];
        for i in 0..4 {
            e[5 * i] = 1;
        }
        FpMat(e)
    }

    pub fn get(&self, i: usize, j: usize) -> u32 {
        self.0[4 * i + j] as u32
    }

    pub fn from_ints(m: [[i64; 4]; 4], p: u64) -> FpMat {
        let mut e = [0u8; 16];
        for i in 0..4 {
            for j in 0..4 {
                e[4 * i + j] = m[i][j].rem_euclid(p as i64) as u8;
            }
        }
        FpMat(e)
    }

    /// Reduction of an integral matrix.
    pub fn reduce<S: PadicScalar>(m: &Mat4<S>, p: u64) -> Option<FpMat> {
        let mut e = [0u8; 16];
        for i in 0..4 {
            for j in 0..4 {
                e[4 * i + j] = m[i][j].residue(p)? as u8;
            }
        }
        Some(FpMat(e))
    }

    pub fn mul(&self, o: &FpMat, p: u64) -> FpMat {
        let mut e = [0u8; 16];
        for i in 0..4 {
            for j in 0..4 {
                let mut s = 0u32;
                for k in 0..4 {
                    s += self.get(i, k) * o.get(k, j);
                }
                e[4 * i + j] = (s % p as u32) as u8;
            }
        }
        FpMat(e)
    }

    pub fn transpose(&self) -> FpMat {
        let mut e = [0u8; 16];
        for i in 0..4 {
            for j in 0..4 {
                e[4 * i + j] = self.0[4 * j + i];
            }
        }
        FpMat(e)
    }

    /// Multiplier over `F_p`, if `k` is a similitude there.
    pub fn multiplier(&self, p: u64) -> Option<u32> {
        let j = FpMat::from_ints(J_INT, p);
        let m = self.transpose().mul(&j, p).mul(self, p);
        let mu = m.get(0, 2);
        if mu == 0 {
            return None;
        }
        let want = FpMat(j.0.map(|x| ((x as u32 * mu) % p as u32) as u8));
        (m == want).then_some(mu)
    }

    /// `g^{-1} = μ^{-1} J^{-1} ᵗg J` over `F_p`.
    pub fn inverse(&self, p: u64) -> FpMat {
        let mu = self.multiplier(p).expect("similitude");
        let inv_mu = inv_mod(mu, p as u32);
        let j = FpMat::from_ints(J_INT, p);
        let jinv = FpMat::from_ints(J_INT.map(|r| r.map(|x| -x)), p);
        let t = jinv.mul(&self.transpose(), p).mul(&j, p);
        FpMat(t.0.map(|x| ((x as u32 * inv_mu) % p as u32) as u8))
    }

    pub fn to_text(&self) -> String {
        let rows: Vec<String> = (0..4)
            .map(|i| format!("[{}]", (0..4).map(|j| self.get(i, j).to_string()).collect::<Vec<_>>().join(",")))
            .collect();
        format!("[{}]", rows.join(","))
    }
}

pub fn inv_mod(a: u32, p: u32) -> u32 {
    let mut r = 1u64;
    let mut b = a as u64 % p as u64;
    let mut e = p - 2;
    while e > 0 {
        if e & 1 == 1 {
            r = r * b % p as u64;
        }
        b = b * b % p as u64;
        e >>= 1;
    }
    r as u32
}

fn rank_mod_p(rows: &mut [[u32; 4]], ncols: usize, p: u32) -> usize {
    let mut rank = 0;
    for c in 0..ncols {
        let Some(piv) = (rank..rows.len()).find(|&r| rows[r][c] != 0) else {
            continue;
        };
        rows.swap(rank, piv);
        let inv = inv_mod(rows[rank][c], p);
        for r in 0..rows.len() {
            if r != rank && rows[r][c] != 0 {
                let f = rows[r][c] * inv % p;
                for cc in 0..ncols {
                    rows[r][cc] = (rows[r][cc] + p * p - f * rows[rank][cc]) % p;
                }
            }
        }
        rank += 1;
    }
    rank
}

/// The Weyl element `s` with `k ∈ B(F_p) s B(F_p)`.
pub fn bruhat_cell(k: &FpMat, p: u64) -> Result<WeylWord, GspError> {
    if k.multiplier(p).is_none() {
        return Err(GspError::NotSimilitude);
    }
    // Reorder basis to (e1, e2, e4, e3) so the Borel is upper triangular.
    let perm = [0usize, 1, 3, 2];
    let g: [[u32; 4]; 4] = std::array::from_fn(|i| std::array::from_fn(|j| k.get(perm[i], perm[j])));
    // r[i][j] = rank of rows i.. and columns ..j (exclusive bounds in 0..=4).
    let mut r = [[0usize; 5]; 5];
    for i in 0..4 {
        for j in 1..=4 {
            let mut rows: Vec<[u32; 4]> = (i..4).map(|a| std::array::from_fn(|b| if b < j { g[a][b] } else { 0 })).collect();
            r[i][j] = rank_mod_p(&mut rows, j, p as u32);
        }
    }
    let mut support = [[false; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            let val = r[i][j + 1] as i64 - r[i + 1][j + 1] as i64 - r[i][j] as i64 + r[i + 1][j] as i64;
            support[perm[i]][perm[j]] = val == 1;
        }
    }
    WeylWord::ALL
        .into_iter()
        .find(|w| w.support() == support)
        .ok_or(GspError::NotSimilitude)
}

/// Congruence subgroups tested by valuation patterns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SubgroupKind {
    /// `GSp4(Z_p)`
    MaximalCompact,
    /// `B(p)`: integral and Borel-shaped modulo p
    Iwahori,
    /// `Γ0(p) ⊂ GL2(Z_p)`
    Gamma0,
    /// The paramodular group of level p
    Paramodular,
}

/// Either a GSp(4) element or a GL(2) element, for membership tests.
#[derive(Clone, Debug)]
pub enum GroupElement {
    GSp4(GMat),
    GL2([[ExactRational; 2]; 2]),
}

pub fn subgroup_membership(g: &GroupElement, which: SubgroupKind, p: u64) -> bool {
    let ge = |x: &ExactRational, k: i64| vp(x, p) >= Valuation::Finite(k);
    let unit = |x: &ExactRational| vp(x, p) == Valuation::Finite(0);
    match (g, which) {
        (GroupElement::GL2(m), SubgroupKind::Gamma0) => {
            let det = &(&m[0][0] * &m[1][1]) - &(&m[0][1] * &m[1][0]);
            m.iter().flatten().all(|x| ge(x, 0)) && ge(&m[1][0], 1) && unit(&det)
        }
        (GroupElement::GL2(_), _) | (GroupElement::GSp4(_), SubgroupKind::Gamma0) => false,
        (GroupElement::GSp4(g), kind) => {
            if !unit(g.mu()) {
                return false;
            }
            let pattern: [[i64; 4]; 4] = match kind {
                SubgroupKind::MaximalCompact => [[0; 4]; 4],
                SubgroupKind::Iwahori => [[0, 0, 0, 0], [1, 0, 0, 0], [1, 1, 0, 1], [1, 1, 0, 0]],
                SubgroupKind::Paramodular => [[0, 0, -1, 0], [1, 0, 0, 0], [1, 1, 0, 1], [1, 0, 0, 0]],
                SubgroupKind::Gamma0 => unreachable!(),
            };
            (0..4).all(|i| (0..4).all(|j| ge(g.entry(i, j), pattern[i][j])))
        }
    }
}

/// Result of checking lower-left entries of `u1 σ δ u2`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KloostermanReport {
    pub sigma: WeylWord,
    pub trials: usize,
    /// (entry name, asserted value description, number of trials where it held)
    pub checks: Vec<(String, String, usize)>,
    pub holds: bool,
}

/// Which entries of the lower-left block `C` of `u1 σ δ u2` are asserted,
/// as (row, col, coefficient of d1, coefficient of d2).
pub fn kloosterman_assertions(sigma: WeylWord) -> Vec<(usize, usize, i64, i64)> {
    match sigma {
        WeylWord::J | WeylWord::S1S2S1 => vec![(0, 0, 1, 0)],
        WeylWord::S2S1S2 => vec![(0, 0, 0, 0), (0, 1, -1, 0), (1, 0, 0, -1)],
        _ => vec![],
    }
}

/// The entries that `u1 σ δ u2` actually has under the conventions of this
/// crate. Differs from [`kloosterman_assertions`] only in signs and in which of
/// `d1`, `d2` lands in `C12` and `C21`.
pub fn kloosterman_observed(sigma: WeylWord) -> Vec<(usize, usize, i64, i64)> {
    match sigma {
        WeylWord::J | WeylWord::S1S2S1 => vec![(0, 0, -1, 0)],
        WeylWord::S2S1S2 => vec![(0, 0, 0, 0), (0, 1, 0, -1), (1, 0, -1, 0)],
        _ => vec![],
    }
}

fn random_rational<R: Rng>(rng: &mut R) -> ExactRational {
    ExactRational::new(rng.random_range(-30..=30), rng.random_range(1..=12))
}

fn random_nonzero_rational<R: Rng>(rng: &mut R) -> ExactRational {
    loop {
        let r = random_rational(rng);
        if !r.is_zero() {
            return r;
        }
    }
}

/// Random element of the upper unipotent `U` with rational coordinates.
pub fn random_upper_unipotent<R: Rng>(rng: &mut R) -> GMat {
    GMat::borel_unipotent(
        &random_rational(rng),
        &random_rational(rng),
        &random_rational(rng),
        &random_rational(rng),
    )
}

/// Random element of `Ū_σ = U ∩ σ ᵗU σ^{-1}`: a product of the positive
/// root groups that `σ^{-1}` sends to negative roots.
pub fn random_ubar_sigma<R: Rng>(sigma: WeylWord, rng: &mut R) -> GMat {
    let w = weyl_matrix(sigma);
    let winv = w.inverse();
    let mut g = GMat::identity();
    for r in RootVector::ALL.into_iter().filter(|r| r.is_positive()) {
        let x = r.unipotent(&ExactRational::one());
        let conj = winv.mul(&x).mul(&w);
        // Conjugate lies in the lower triangular (opposite) unipotent iff all its
        // off-diagonal support is below the Borel shape.
        let lower = (0..4).all(|i| {
            (0..4).all(|j| i == j || conj.entry(i, j).is_zero() || ParabolicKind::Borel.zero_pattern()[i][j])
        });
        if lower {
            g = g.mul(&r.unipotent(&random_rational(rng)));
        }
    }
    g
}

/// Evaluate the asserted lower-left entries of `u1 σ δ u2` on random data.
pub fn kloosterman_entry_identity<R: Rng>(sigma: WeylWord, trials: usize, rng: &mut R) -> KloostermanReport {
    kloosterman_check(sigma, &kloosterman_assertions(sigma), trials, rng)
}

/// Same as [`kloosterman_entry_identity`] against [`kloosterman_observed`].
pub fn kloosterman_observed_identity<R: Rng>(sigma: WeylWord, trials: usize, rng: &mut R) -> KloostermanReport {
    kloosterman_check(sigma, &kloosterman_observed(sigma), trials, rng)
}

/// Count, per assertion `(i, j, c1, c2)`, the trials with `C[i][j] = c1 d1 + c2 d2`.
pub fn kloosterman_check<R: Rng>(
    sigma: WeylWord,
    asserts: &[(usize, usize, i64, i64)],
    trials: usize,
    rng: &mut R,
) -> KloostermanReport {
    let mut counts = vec![0usize; asserts.len()];
    for _ in 0..trials {
        let d1 = random_nonzero_rational(rng);
        let d2 = random_nonzero_rational(rng);
        let d3 = random_nonzero_rational(rng);
        let delta = GMat::torus(&d1, &d2, &d3);
        let u1 = random_upper_unipotent(rng);
        let u2 = random_ubar_sigma(sigma, rng);
        let g = u1.mul(&weyl_matrix(sigma)).mul(&delta).mul(&u2);
        for (n, &(i, j, c1, c2)) in asserts.iter().enumerate() {
            let want = &(&ExactRational::from_int(c1) * &d1) + &(&ExactRational::from_int(c2) * &d2);
            if *g.entry(2 + i, j) == want {
                counts[n] += 1;
            }
        }
    }
    let describe = |c1: i64, c2: i64| match (c1, c2) {
        (0, 0) => "0".to_string(),
        (1, 0) => "d1".to_string(),
        (-1, 0) => "-d1".to_string(),
        (0, 1) => "d2".to_string(),
        (0, -1) => "-d2".to_string(),
        _ => format!("{c1}*d1+{c2}*d2"),
    };
    let checks: Vec<_> = asserts
        .iter()
        .zip(&counts)
        .map(|(&(i, j, c1, c2), &n)| (format!("C{}{}", i + 1, j + 1), describe(c1, c2), n))
        .collect();
    let holds = counts.iter().all(|&n| n == trials);
    KloostermanReport {
        sigma,
        trials,
        checks,
        holds,
    }
}

/// Random element of `GSp4(Z_p)` built from generators with integral parameters.
pub fn random_integral_element<R: Rng>(rng: &mut R, p: u64, steps: usize) -> GMat {
    let mut g = GMat::identity();
    for _ in 0..steps {
        let choice = rng.random_range(0..11);
        let f = match choice {
            0..=7 => {
                let t = ExactRational::from_int(rng.random_range(-(p as i64) * 3..=(p as i64) * 3));
                RootVector::ALL[choice].unipotent(&t)
            }
            8 => weyl_matrix(WeylWord::S1),
            9 => weyl_matrix(WeylWord::S2),
            _ => {
                let unit = |rng: &mut R| loop {
                    let u = rng.random_range(1..(4 * p as i64));
                    if u % p as i64 != 0 {
                        break ExactRational::from_int(if rng.random_bool(0.5) { u } else { -u });
                    }
                };
                GMat::torus(&unit(rng), &unit(rng), &unit(rng))
            }
        };
        g = g.mul(&f);
    }
    g
}

/// Random element of the Levi factor of `P` with rational entries.
pub fn random_levi<R: Rng>(kind: ParabolicKind, rng: &mut R) -> GMat {
    let a1 = random_nonzero_rational(rng);
    let a2 = random_nonzero_rational(rng);
    let a3 = random_nonzero_rational(rng);
    let t = GMat::torus(&a1, &a2, &a3);
    let extra = match kind {
        ParabolicKind::Borel => GMat::identity(),
        ParabolicKind::Siegel => {
            let mut g = GMat::identity();
            if rng.random_bool(0.5) {
                g = weyl_matrix(WeylWord::S1);
            }
            g.mul(&RootVector::Pos1.unipotent(&random_rational(rng)))
        }
        ParabolicKind::Klingen => {
            let mut g = GMat::identity();
            if rng.random_bool(0.5) {
                g = weyl_matrix(WeylWord::S2);
            }
            g.mul(&RootVector::Pos3.unipotent(&random_rational(rng)))
        }
    };
    t.mul(&extra)
}

/// Random element of the unipotent radical of `P` with rational entries.
pub fn random_radical<R: Rng>(kind: ParabolicKind, rng: &mut R) -> GMat {
    let mut r = || random_rational(rng);
    match kind {
        ParabolicKind::Borel => GMat::borel_unipotent(&r(), &r(), &r(), &r()),
        ParabolicKind::Siegel => GMat::siegel_unipotent(&r(), &r(), &r()),
        ParabolicKind::Klingen => GMat::klingen_unipotent(&r(), &r(), &r()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn q(n: i64, d: i64) -> ExactRational {
        ExactRational::new(n, d)
    }

    #[test]
    fn multiplier_examples() {
        assert_eq!(*GMat::identity().mu(), ExactRational::one());
        assert_eq!(*GMat::j().mu(), ExactRational::one());
        let t = GMat::torus(&q(2, 1), &q(-3, 5), &q(7, 4));
        assert_eq!(multiplier(t.entries()).unwrap(), q(7, 4));
        let mut bad: Mat4<ExactRational> = mat_identity();
        bad[0][1] = q(1, 1);
        assert_eq!(multiplier(&bad), Err(GspError::NotSimilitude));
    }

    #[test]
    fn weyl_group_structure() {
        assert_eq!(weyl_matrix(WeylWord::S1).mul(&weyl_matrix(WeylWord::S1)), GMat::identity());
        assert_eq!(weyl_matrix(WeylWord::J), GMat::j());
        let supports: std::collections::HashSet<_> = WeylWord::ALL.iter().map(|w| w.support()).collect();
        assert_eq!(supports.len(), 8);
        for a in WeylWord::ALL {
            assert_eq!(a.compose(a.inverse()), WeylWord::Id);
            for b in WeylWord::ALL {
                for c in WeylWord::ALL {
                    assert_eq!(a.compose(b).compose(c), a.compose(b.compose(c)));
                }
            }
        }
        assert_eq!(WeylWord::S1.compose(WeylWord::S2), WeylWord::S1S2);
    }

    #[test]
    fn coset_representatives() {
        use ParabolicKind::*;
        assert_eq!(Siegel.coset_representative(WeylWord::S1), WeylWord::Id);
        assert_eq!(Siegel.coset_representative(WeylWord::J), WeylWord::S2S1S2);
        assert_eq!(Klingen.coset_representative(WeylWord::S2), WeylWord::Id);
        assert_eq!(Klingen.coset_representative(WeylWord::J), WeylWord::S1S2S1);
    }

    #[test]
    fn root_unipotents_are_symplectic() {
        for r in RootVector::ALL {
            let u = r.unipotent(&q(3, 7));
            assert_eq!(*u.mu(), ExactRational::one());
            let mut m = GMat::identity().entries().clone();
            apply_root(&mut m, r, &q(3, 7));
            assert_eq!(&m, u.entries());
        }
    }

    #[test]
    fn bruhat_cells_of_weyl_elements() {
        for p in [2u64, 3, 5] {
            for w in WeylWord::ALL {
                let k = FpMat::from_ints(weyl_int(w), p);
                assert_eq!(bruhat_cell(&k, p).unwrap(), w);
            }
        }
    }

    #[test]
    fn iwasawa_on_integral_is_trivial() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for p in [2u64, 3, 5] {
            for _ in 0..20 {
                let k = random_integral_element(&mut rng, p, 12);
                let d = iwasawa(&k, ParabolicKind::Borel, p);
                for i in 0..4 {
                    for j in 0..4 {
                        assert!(vp(d.n.entry(i, j), p) >= Valuation::Finite(0));
                    }
                    assert_eq!(vp(d.m.entry(i, i), p), Valuation::Finite(0));
                }
                assert_eq!(power_function(&k, ParabolicKind::Borel, &[2.5, 1.0], p), 1.0);
            }
        }
    }

    #[test]
    fn iwasawa_recomposes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for p in [2u64, 3, 5] {
            for kind in ParabolicKind::ALL {
                for _ in 0..40 {
                    let g = random_radical(kind, &mut rng)
                        .mul(&random_levi(kind, &mut rng))
                        .mul(&random_integral_element(&mut rng, p, 10));
                    let d = iwasawa(&g, kind, p);
                    assert_eq!(d.n.mul(&d.m).mul(&d.k), g);
                    assert!(in_unipotent_radical(&d.n, kind), "{:?}", d.n);
                    assert!(in_levi(&d.m, kind));
                    assert!(subgroup_membership(&GroupElement::GSp4(d.k.clone()), SubgroupKind::MaximalCompact, p));
                }
            }
        }
    }

    #[test]
    fn klingen_levi_at_j_n() {
        let p = 3;
        let z = q(5, 3);
        let g = GMat::j().mul(&GMat::klingen_unipotent(&ExactRational::zero(), &ExactRational::zero(), &z));
        let d = iwasawa(&g, ParabolicKind::Klingen, p);
        let ratio = d.m.entry(0, 0) * &z;
        assert_eq!(vp(&ratio, p), Valuation::Finite(0));
    }

    #[test]
    fn power_function_invariance_and_factorisation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for p in [2u64, 3] {
            for _ in 0..30 {
                let g = random_radical(ParabolicKind::Borel, &mut rng)
                    .mul(&random_levi(ParabolicKind::Borel, &mut rng))
                    .mul(&random_integral_element(&mut rng, p, 8));
                let k = random_integral_element(&mut rng, p, 8);
                for kind in ParabolicKind::ALL {
                    let n = random_radical(kind, &mut rng);
                    assert_eq!(power_exponents(&g, kind, p), power_exponents(&g.mul(&k), kind, p));
                    assert_eq!(power_exponents(&g, kind, p), power_exponents(&n.mul(&g), kind, p));
                }
                let (n1, n2) = (3.25, 1.5);
                let b = power_function(&g, ParabolicKind::Borel, &[n1, n2], p);
                let kl = power_function(&g, ParabolicKind::Klingen, &[n1 - n2], p);
                let si = power_function(&g, ParabolicKind::Siegel, &[n2], p);
                assert!((b - kl * si).abs() <= 1e-12 * b.abs());
            }
        }
    }

    #[test]
    fn membership_examples() {
        let p = 5;
        for kind in [SubgroupKind::MaximalCompact, SubgroupKind::Iwahori, SubgroupKind::Paramodular] {
            assert!(subgroup_membership(&GroupElement::GSp4(GMat::identity()), kind, p));
        }
        let one = ExactRational::one();
        let zero = ExactRational::zero();
        let id2 = [[one.clone(), zero.clone()], [zero.clone(), one.clone()]];
        assert!(subgroup_membership(&GroupElement::GL2(id2), SubgroupKind::Gamma0, p));
        assert!(subgroup_membership(
            &GroupElement::GSp4(weyl_matrix(WeylWord::S2)),
            SubgroupKind::Paramodular,
            p
        ));
        let x = GMat::siegel_unipotent(&q(1, 5), &zero, &zero);
        assert!(subgroup_membership(&GroupElement::GSp4(x.clone()), SubgroupKind::Paramodular, p));
        assert!(!subgroup_membership(&GroupElement::GSp4(x), SubgroupKind::MaximalCompact, p));
    }

    #[test]
    fn kloosterman_observed_entries_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for sigma in [WeylWord::J, WeylWord::S1S2S1, WeylWord::S2S1S2] {
            let r = kloosterman_observed_identity(sigma, 50, &mut rng);
            assert!(r.holds, "{r:?}");
        }
    }

    #[test]
    fn kloosterman_printed_signs_differ() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for sigma in [WeylWord::J, WeylWord::S1S2S1, WeylWord::S2S1S2] {
            let r = kloosterman_entry_identity(sigma, 50, &mut rng);
            assert!(!r.holds, "{r:?}");
        }
        let r = kloosterman_entry_identity(WeylWord::S2S1S2, 50, &mut rng);
        assert_eq!(r.checks[0].2, 50, "C11 = 0 holds");
    }
}
