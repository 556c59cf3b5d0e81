//! Free-group and automorphism arithmetic.
//!
//! Conventions, fixed once and used everywhere:
//! * commutator `[g,h] = g^-1 h^-1 g h`;
//! * automorphisms compose as functions, `(f.g)(x) = f(g(x))`, so in a
//!   product word the rightmost factor acts first;
//! * stored letter sequences are in application order (first letter acts
//!   first), matching the word convention of [`crate::regmod`].
//!
//! Under these conventions the swap relation between the two generator kinds
//! reads `[K_bcd, K_ab] = [K_ac, K_ad]`, which `verify_relations` checks
//! exhaustively by composition.

use crate::exactalg::{ExactError, Int, IntMatrix, ModuleElement};
use crate::ia_ab::KappaLabel;
use crate::regmod::{GroupWord, Letter, LetterKind};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FreeError {
    #[error("generator index {0} out of range for rank {1}")]
    BadGenerator(u8, u8),
    #[error("invalid Magnus generator indices ({0})")]
    BadMagnusIndices(String),
    #[error("endomorphism ranks differ ({0} vs {1})")]
    RankMismatch(u8, u8),
    #[error("word is not in the commutator subgroup (nonzero exponent sum)")]
    NotInGamma2,
    #[error("automorphism does not act trivially on the abelianization")]
    NotInIa,
    #[error("cannot parse word token `{0}`")]
    BadToken(String),
    #[error(transparent)]
    Exact(#[from] ExactError),
}

// ---------------------------------------------------------------------------
// Reduced words
// ---------------------------------------------------------------------------

/// Freely reduced word over `x_1 .. x_n`, a sequence of (generator, +-1).
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FreeWord {
    letters: Vec<(u8, i8)>,
}

impl FreeWord {
    pub fn identity() -> Self {
        FreeWord::default()
    }

    pub fn generator(i: u8) -> Self {
        FreeWord { letters: vec![(i, 1)] }
    }

    pub fn from_letters(letters: &[(u8, i8)]) -> Self {
        let mut out: Vec<(u8, i8)> = Vec::with_capacity(letters.len());
        for &(g, e) in letters {
            debug_assert!(e == 1 || e == -1);
            if let Some(&(lg, le)) = out.last() {
                if lg == g && le == -e {
                    out.pop();
                    continue;
                }
            }
            out.push((g, e));
        }
        FreeWord { letters: out }
    }

    pub fn is_identity(&self) -> bool {
        self.letters.is_empty()
    }

    pub fn len(&self) -> usize {
        self.letters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.letters.is_empty()
    }

    pub fn letters(&self) -> &[(u8, i8)] {
        &self.letters
    }

    pub fn inverse(&self) -> FreeWord {
        FreeWord { letters: self.letters.iter().rev().map(|&(g, e)| (g, -e)).collect() }
    }

    pub fn mul(&self, other: &FreeWord) -> FreeWord {
        let mut v = self.letters.clone();
        v.extend(other.letters.iter().copied());
        FreeWord::from_letters(&v)
    }

    /// Exponent sum of each generator `1..=n`.
    pub fn exponents(&self, n: u8) -> Vec<Int> {
        let mut out = vec![0; n as usize];
        for &(g, e) in &self.letters {
            out[(g - 1) as usize] += Int::from(e);
        }
        out
    }

    /// Tokens in the `x1 x2^-1` style.
    pub fn tokens(&self) -> String {
        self.letters
            .iter()
            .map(|&(g, e)| if e == 1 { format!("x{g}") } else { format!("x{g}^-1") })
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn parse(text: &str, n: u8) -> Result<FreeWord, FreeError> {
        let mut letters = Vec::new();
        for tok in text.split_whitespace() {
            let (body, e) = match tok.strip_suffix("^-1") {
                Some(b) => (b, -1),
                None => (tok, 1),
            };
            let g: u8 = body
                .strip_prefix('x')
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| FreeError::BadToken(tok.to_string()))?;
            if g == 0 || g > n {
                return Err(FreeError::BadGenerator(g, n));
            }
            letters.push((g, e));
        }
        Ok(FreeWord::from_letters(&letters))
    }
}

impl fmt::Display for FreeWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_identity() {
            write!(f, "1")
        } else {
            write!(f, "{}", self.tokens())
        }
    }
}

/// Commutator `[u, v] = u^-1 v^-1 u v` of two words.
pub fn word_commutator(u: &FreeWord, v: &FreeWord) -> FreeWord {
    u.inverse().mul(&v.inverse()).mul(u).mul(v)
}

// ---------------------------------------------------------------------------
// Endomorphisms by generator images
// ---------------------------------------------------------------------------

/// Endomorphism of the free group of rank `n`, given by generator images.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreeEndo {
    pub n: u8,
    images: Vec<FreeWord>,
}

impl FreeEndo {
    pub fn identity(n: u8) -> Self {
        FreeEndo { n, images: (1..=n).map(FreeWord::generator).collect() }
    }

    pub fn new(n: u8, images: Vec<FreeWord>) -> Result<Self, FreeError> {
        if images.len() != n as usize {
            return Err(FreeError::RankMismatch(n, images.len() as u8));
        }
        for w in &images {
            for &(g, _) in w.letters() {
                if g == 0 || g > n {
                    return Err(FreeError::BadGenerator(g, n));
                }
            }
        }
        Ok(FreeEndo { n, images })
    }

    pub fn image(&self, i: u8) -> &FreeWord {
        &self.images[(i - 1) as usize]
    }

    pub fn apply(&self, w: &FreeWord) -> FreeWord {
        let mut out = FreeWord::identity();
        for &(g, e) in w.letters() {
            let img = self.image(g);
            out = if e == 1 { out.mul(img) } else { out.mul(&img.inverse()) };
        }
        out
    }

    /// Function composition: `(self.compose(g))(x) = self(g(x))`.
    pub fn compose(&self, g: &FreeEndo) -> FreeEndo {
        assert_eq!(self.n, g.n, "rank mismatch in composition");
        FreeEndo { n: self.n, images: g.images.iter().map(|w| self.apply(w)).collect() }
    }

    /// Matrix on the abelianization, column `i` = exponent vector of the
    /// image of `x_i`.
    pub fn ab_matrix(&self) -> IntMatrix {
        let n = self.n as usize;
        let mut m = IntMatrix::zero(n, n);
        for (c, w) in self.images.iter().enumerate() {
            for (r, v) in w.exponents(self.n).into_iter().enumerate() {
                m.set(r, c, v);
            }
        }
        m
    }

    pub fn is_ia(&self) -> bool {
        self.ab_matrix() == IntMatrix::identity(self.n as usize)
    }
}

pub fn endo_eq(f: &FreeEndo, g: &FreeEndo) -> bool {
    f == g
}

/// `[f, g] = f^-1 g^-1 f g` given explicit inverses of both.
pub fn endo_commutator(f: &FreeEndo, finv: &FreeEndo, g: &FreeEndo, ginv: &FreeEndo) -> FreeEndo {
    finv.compose(&ginv.compose(&f.compose(g)))
}

// ---------------------------------------------------------------------------
// Magnus generators
// ---------------------------------------------------------------------------

/// The standard generators: `K[i,j]` conjugates one generator, `K[i,j,k]`
/// multiplies one generator by a commutator (`j < k`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MagnusGen {
    Kij { i: u8, j: u8 },
    Kijk { i: u8, j: u8, k: u8 },
}

impl MagnusGen {
    pub fn kij(i: u8, j: u8) -> Result<Self, FreeError> {
        if i == j || i == 0 || j == 0 {
            return Err(FreeError::BadMagnusIndices(format!("{i},{j}")));
        }
        Ok(MagnusGen::Kij { i, j })
    }

    pub fn kijk(i: u8, j: u8, k: u8) -> Result<Self, FreeError> {
        if !(j < k && i != j && i != k && i != 0 && j != 0) {
            return Err(FreeError::BadMagnusIndices(format!("{i},{j},{k}")));
        }
        Ok(MagnusGen::Kijk { i, j, k })
    }

    pub fn max_index(&self) -> u8 {
        match *self {
            MagnusGen::Kij { i, j } => i.max(j),
            MagnusGen::Kijk { i, j, k } => i.max(j).max(k),
        }
    }

    /// Index support: which letters of `1..n` the generator touches.
    pub fn support(&self) -> Vec<u8> {
        let mut v = match *self {
            MagnusGen::Kij { i, j } => vec![i, j],
            MagnusGen::Kijk { i, j, k } => vec![i, j, k],
        };
        v.sort_unstable();
        v
    }

    pub fn endo(&self, n: u8) -> FreeEndo {
        self.endo_pow(n, 1)
    }

    pub fn endo_inv(&self, n: u8) -> FreeEndo {
        self.endo_pow(n, -1)
    }

    /// `K_ij: x_i -> x_j^-1 x_i x_j`, `K_ijk: x_i -> x_i [x_j, x_k]`, with
    /// explicit inverses (`K_ij^-1: x_i -> x_j x_i x_j^-1`, `K_ijk^-1 = K_ikj`).
    fn endo_pow(&self, n: u8, exp: i8) -> FreeEndo {
        assert!(self.max_index() <= n, "generator indices exceed rank");
        let mut images: Vec<FreeWord> = (1..=n).map(FreeWord::generator).collect();
        match *self {
            MagnusGen::Kij { i, j } => {
                let xi = FreeWord::generator(i);
                let xj = FreeWord::generator(j);
                let img = if exp == 1 {
                    xj.inverse().mul(&xi).mul(&xj)
                } else {
                    xj.mul(&xi).mul(&xj.inverse())
                };
                images[(i - 1) as usize] = img;
            }
            MagnusGen::Kijk { i, j, k } => {
                let xi = FreeWord::generator(i);
                let xj = FreeWord::generator(j);
                let xk = FreeWord::generator(k);
                let c = if exp == 1 {
                    word_commutator(&xj, &xk)
                } else {
                    word_commutator(&xk, &xj)
                };
                images[(i - 1) as usize] = xi.mul(&c);
            }
        }
        FreeEndo { n, images }
    }

    pub fn token(&self) -> String {
        match *self {
            MagnusGen::Kij { i, j } => format!("K[{i},{j}]"),
            MagnusGen::Kijk { i, j, k } => format!("K[{i},{j},{k}]"),
        }
    }

    /// The kappa class under the abelianization: `K_ij -> k_iij`,
    /// `K_ijk -> k_ijk`.
    pub fn kappa_class(&self) -> (KappaLabel, Int) {
        match *self {
            MagnusGen::Kij { i, j } => {
                KappaLabel::normalized(i, i, j).expect("i != j")
            }
            MagnusGen::Kijk { i, j, k } => (KappaLabel::new(i, j, k), 1),
        }
    }
}

impl fmt::Display for MagnusGen {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.token())
    }
}

/// All standard generators for rank `n`: every `K[i,j]`, then every
/// `K[i,j,k]` with `j < k`, lexicographically.
pub fn standard_generators(n: u8) -> Vec<MagnusGen> {
    let mut out = Vec::new();
    for i in 1..=n {
        for j in 1..=n {
            if i != j {
                out.push(MagnusGen::Kij { i, j });
            }
        }
    }
    for i in 1..=n {
        for j in 1..=n {
            for k in j + 1..=n {
                if i != j && i != k {
                    out.push(MagnusGen::Kijk { i, j, k });
                }
            }
        }
    }
    out
}

/// Parse `K[1,2]` / `K[1,2,3]` with an optional `^-1` suffix.
pub fn parse_magnus_token(tok: &str) -> Result<(MagnusGen, i8), FreeError> {
    let bad = || FreeError::BadToken(tok.to_string());
    let (body, exp) = match tok.strip_suffix("^-1") {
        Some(b) => (b, -1),
        None => (tok, 1),
    };
    let inner = body.strip_prefix("K[").and_then(|s| s.strip_suffix(']')).ok_or_else(bad)?;
    let parts: Vec<u8> =
        inner.split(',').map(|p| p.trim().parse().ok()).collect::<Option<_>>().ok_or_else(bad)?;
    let g = match parts.as_slice() {
        [i, j] => MagnusGen::kij(*i, *j)?,
        [i, j, k] if j < k => MagnusGen::kijk(*i, *j, *k)?,
        // K[i,k,j] with k > j is the inverse of the canonical generator.
        [i, j, k] => (MagnusGen::kijk(*i, *k, *j)?, ()).0,
        _ => return Err(bad()),
    };
    if let [_, j, k] = parts.as_slice() {
        if j > k {
            return Ok((g, -exp));
        }
    }
    Ok((g, exp))
}

// ---------------------------------------------------------------------------
// Words in the Magnus generators
// ---------------------------------------------------------------------------

/// A formal word in the standard generators with its composed endomorphism
/// cached; letters are stored in application order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupElementWord {
    pub n: u8,
    letters: Vec<(MagnusGen, i8)>,
    endo: FreeEndo,
}

impl GroupElementWord {
    pub fn identity(n: u8) -> Self {
        GroupElementWord { n, letters: Vec::new(), endo: FreeEndo::identity(n) }
    }

    pub fn from_letters(n: u8, letters: &[(MagnusGen, i8)]) -> Self {
        let mut endo = FreeEndo::identity(n);
        for &(g, e) in letters {
            let step = if e == 1 { g.endo(n) } else { g.endo_inv(n) };
            endo = step.compose(&endo);
        }
        GroupElementWord { n, letters: letters.to_vec(), endo }
    }

    pub fn single(n: u8, g: MagnusGen) -> Self {
        Self::from_letters(n, &[(g, 1)])
    }

    pub fn letters(&self) -> &[(MagnusGen, i8)] {
        &self.letters
    }

    pub fn endo(&self) -> &FreeEndo {
        &self.endo
    }

    pub fn inverse(&self) -> GroupElementWord {
        let letters: Vec<(MagnusGen, i8)> =
            self.letters.iter().rev().map(|&(g, e)| (g, -e)).collect();
        Self::from_letters(self.n, &letters)
    }

    pub fn mul(&self, next: &GroupElementWord) -> GroupElementWord {
        let mut letters = self.letters.clone();
        letters.extend(next.letters.iter().copied());
        Self::from_letters(self.n, &letters)
    }

    pub fn tokens(&self) -> Vec<String> {
        self.letters
            .iter()
            .map(|&(g, e)| if e == 1 { g.token() } else { format!("{}^-1", g.token()) })
            .collect()
    }

    pub fn parse_tokens(n: u8, tokens: &[String]) -> Result<Self, FreeError> {
        let mut letters = Vec::new();
        for t in tokens {
            let (g, e) = parse_magnus_token(t)?;
            if g.max_index() > n {
                return Err(FreeError::BadGenerator(g.max_index(), n));
            }
            letters.push((g, e));
        }
        Ok(Self::from_letters(n, &letters))
    }
}

/// Letters of `[g, h] = g^-1 h^-1 g h` in application order.
pub fn commutator_letters(g: MagnusGen, h: MagnusGen) -> Vec<(MagnusGen, i8)> {
    vec![(h, 1), (g, 1), (h, -1), (g, -1)]
}

// ---------------------------------------------------------------------------
// Relation verification
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct RelationReport {
    pub n: u8,
    pub r1_checked: usize,
    pub r2_checked: usize,
    pub r3_checked: usize,
    pub r4_checked: usize,
    pub failures: Vec<String>,
}

impl RelationReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Exhaustively verify the generator relations by endomorphism composition:
///
/// * (R1) `[K_a1a2, K_b1b2] = 1` when `a1 not in {b1,b2}` and `b1 not in {a1,a2}`;
/// * (R2) `[K_a1a2, K_b1b2b3] = 1` when `a1 not in {b1,b2,b3}` and `b1 not in {a1,a2}`;
/// * (R3) `[K_a1a2a3, K_b1b2b3] = 1` under the analogous side conditions;
/// * (R4) `[K_bcd, K_ab] = [K_ac, K_ad]` for distinct `a,b,c,d`.
pub fn verify_relations(n: u8) -> RelationReport {
    let mut report = RelationReport { n, ..Default::default() };
    let comm = |g: MagnusGen, h: MagnusGen| -> FreeEndo {
        endo_commutator(&g.endo(n), &g.endo_inv(n), &h.endo(n), &h.endo_inv(n))
    };
    let id = FreeEndo::identity(n);

    let kij_gens: Vec<(u8, u8)> =
        (1..=n).flat_map(|i| (1..=n).filter(move |&j| j != i).map(move |j| (i, j))).collect();
    let kijk_gens: Vec<(u8, u8, u8)> = standard_generators(n)
        .into_iter()
        .filter_map(|g| match g {
            MagnusGen::Kijk { i, j, k } => Some((i, j, k)),
            _ => None,
        })
        .collect();

    for &(a1, a2) in &kij_gens {
        for &(b1, b2) in &kij_gens {
            if a1 != b1 && a1 != b2 && b1 != a1 && b1 != a2 {
                report.r1_checked += 1;
                let c = comm(MagnusGen::Kij { i: a1, j: a2 }, MagnusGen::Kij { i: b1, j: b2 });
                if c != id {
                    report.failures.push(format!("R1 [K[{a1},{a2}],K[{b1},{b2}]]"));
                }
            }
        }
    }
    for &(a1, a2) in &kij_gens {
        for &(b1, b2, b3) in &kijk_gens {
            if a1 != b1 && a1 != b2 && a1 != b3 && b1 != a1 && b1 != a2 {
                report.r2_checked += 1;
                let c =
                    comm(MagnusGen::Kij { i: a1, j: a2 }, MagnusGen::Kijk { i: b1, j: b2, k: b3 });
                if c != id {
                    report.failures.push(format!("R2 [K[{a1},{a2}],K[{b1},{b2},{b3}]]"));
                }
            }
        }
    }
    for &(a1, a2, a3) in &kijk_gens {
        for &(b1, b2, b3) in &kijk_gens {
            if a1 != b1 && a1 != b2 && a1 != b3 && b1 != a1 && b1 != a2 && b1 != a3 {
                report.r3_checked += 1;
                let c = comm(
                    MagnusGen::Kijk { i: a1, j: a2, k: a3 },
                    MagnusGen::Kijk { i: b1, j: b2, k: b3 },
                );
                if c != id {
                    report.failures.push(format!("R3 [K[{a1},{a2},{a3}],K[{b1},{b2},{b3}]]"));
                }
            }
        }
    }
    // R4 over ordered distinct 4-tuples; K_bcd is built directly so the sweep
    // covers both orientations of (c,d).
    for a in 1..=n {
        for b in 1..=n {
            for c in 1..=n {
                for d in 1..=n {
                    if a == b || a == c || a == d || b == c || b == d || c == d {
                        continue;
                    }
                    report.r4_checked += 1;
                    let kbcd = kijk_any(b, c, d, n);
                    let kbcd_inv = kijk_any(b, d, c, n);
                    let kab = MagnusGen::Kij { i: a, j: b };
                    let lhs =
                        endo_commutator(&kbcd, &kbcd_inv, &kab.endo(n), &kab.endo_inv(n));
                    let kac = MagnusGen::Kij { i: a, j: c };
                    let kad = MagnusGen::Kij { i: a, j: d };
                    let rhs = endo_commutator(
                        &kac.endo(n),
                        &kac.endo_inv(n),
                        &kad.endo(n),
                        &kad.endo_inv(n),
                    );
                    if lhs != rhs {
                        report
                            .failures
                            .push(format!("R4 [K[{b},{c},{d}],K[{a},{b}]] != [K[{a},{c}],K[{a},{d}]]"));
                    }
                }
            }
        }
    }
    report
}

/// `x_i -> x_i [x_j, x_k]` without the `j < k` normalization.
fn kijk_any(i: u8, j: u8, k: u8, n: u8) -> FreeEndo {
    let mut images: Vec<FreeWord> = (1..=n).map(FreeWord::generator).collect();
    let c = word_commutator(&FreeWord::generator(j), &FreeWord::generator(k));
    images[(i - 1) as usize] = FreeWord::generator(i).mul(&c);
    FreeEndo { n, images }
}

// ---------------------------------------------------------------------------
// Lifts of the elementary letters
// ---------------------------------------------------------------------------

/// Fixed lift to the automorphism group: `E_ij` sends `x_j -> x_j x_i` and
/// `F_ij` sends `x_i -> x_j^-1, x_j -> x_i`; both abelianize to the matrices
/// of the same name.
pub fn lift_elementary(n: u8, l: &Letter) -> FreeEndo {
    assert!(l.i != l.j && l.i >= 1 && l.j >= 1 && l.i <= n && l.j <= n, "bad letter");
    let mut images: Vec<FreeWord> = (1..=n).map(FreeWord::generator).collect();
    match (l.kind, l.exp >= 0) {
        (LetterKind::E, true) => {
            images[(l.j - 1) as usize] =
                FreeWord::generator(l.j).mul(&FreeWord::generator(l.i));
        }
        (LetterKind::E, false) => {
            images[(l.j - 1) as usize] =
                FreeWord::generator(l.j).mul(&FreeWord::generator(l.i).inverse());
        }
        (LetterKind::F, true) => {
            images[(l.i - 1) as usize] = FreeWord::generator(l.j).inverse();
            images[(l.j - 1) as usize] = FreeWord::generator(l.i);
        }
        (LetterKind::F, false) => {
            images[(l.i - 1) as usize] = FreeWord::generator(l.j);
            images[(l.j - 1) as usize] = FreeWord::generator(l.i).inverse();
        }
    }
    FreeEndo { n, images }
}

/// Lift of a whole word, letters applied left to right.
pub fn lift_word(n: u8, w: &GroupWord) -> FreeEndo {
    let mut endo = FreeEndo::identity(n);
    for l in &w.0 {
        endo = lift_elementary(n, l).compose(&endo);
    }
    endo
}

// ---------------------------------------------------------------------------
// Truncated Magnus expansion and the degree-1 Johnson class
// ---------------------------------------------------------------------------

/// Element of the degree-2 exterior power, `sum c_pq e_p ^ e_q` over `p < q`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Wedge2 {
    pub coeffs: BTreeMap<(u8, u8), Int>,
}

impl Wedge2 {
    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn add(&self, other: &Wedge2) -> Wedge2 {
        let mut out = self.clone();
        for (&k, &v) in &other.coeffs {
            let e = out.coeffs.entry(k).or_insert(0);
            *e += v;
            if *e == 0 {
                out.coeffs.remove(&k);
            }
        }
        out
    }
}

/// Wedge of two abelianization vectors.
pub fn wedge_of(a: &[Int], b: &[Int]) -> Wedge2 {
    let mut out = Wedge2::default();
    for p in 0..a.len() {
        for q in p + 1..a.len() {
            let c = a[p] * b[q] - a[q] * b[p];
            if c != 0 {
                out.coeffs.insert((p as u8 + 1, q as u8 + 1), c);
            }
        }
    }
    out
}

/// Class of a commutator-subgroup word in `wedge^2`: expand through
/// `x_i -> 1 + X_i`, `x_i^-1 -> 1 - X_i + X_i^2` in the ring truncated at
/// total degree 2 and read off the antisymmetric part.
pub fn gamma2_class(w: &FreeWord, n: u8) -> Result<Wedge2, FreeError> {
    let nn = n as usize;
    if w.exponents(n).iter().any(|&e| e != 0) {
        return Err(FreeError::NotInGamma2);
    }
    let mut lin = vec![0 as Int; nn];
    let mut quad: BTreeMap<(u8, u8), Int> = BTreeMap::new();
    for &(g, e) in w.letters() {
        let a: Int = Int::from(e);
        let b: Int = if e == -1 { 1 } else { 0 };
        // (1 + lin + quad) * (1 + a X_g + b X_g^2), truncated at degree 2.
        for (p, &lp) in lin.iter().enumerate() {
            if lp != 0 {
                *quad.entry((p as u8 + 1, g)).or_insert(0) += lp * a;
            }
        }
        if b != 0 {
            *quad.entry((g, g)).or_insert(0) += b;
        }
        lin[(g - 1) as usize] += a;
    }
    // The degree-2 part of a commutator-subgroup word is antisymmetric; a
    // failure here would mean the expansion itself is wrong.
    for g in 1..=n {
        assert_eq!(quad.get(&(g, g)).copied().unwrap_or(0), 0, "diagonal term survived");
    }
    let mut out = Wedge2::default();
    for p in 1..=n {
        for q in p + 1..=n {
            let c = quad.get(&(p, q)).copied().unwrap_or(0);
            let c_rev = quad.get(&(q, p)).copied().unwrap_or(0);
            assert_eq!(c, -c_rev, "asymmetric quadratic part");
            if c != 0 {
                out.coeffs.insert((p, q), c);
            }
        }
    }
    Ok(out)
}

/// Degree-1 Johnson class of an IA automorphism, as an element of the kappa
/// module: `sum_i e_i* (x) class(phi(x_i) x_i^-1)`.
pub fn johnson1(phi: &FreeEndo) -> Result<ModuleElement, FreeError> {
    if !phi.is_ia() {
        return Err(FreeError::NotInIa);
    }
    let n = phi.n;
    let mut out = ModuleElement::zero();
    for i in 1..=n {
        let w = phi.image(i).mul(&FreeWord::generator(i).inverse());
        let cls = gamma2_class(&w, n)?;
        for (&(p, q), &c) in &cls.coeffs {
            let lbl = KappaLabel::new(i, p, q).label();
            let v = out.z.get(&lbl).copied().unwrap_or(0) + c;
            if v == 0 {
                out.z.remove(&lbl);
            } else {
                out.z.insert(lbl, v);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ia_ab::ia_ab_module;
    use crate::regmod::apply_word;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn kme(pairs: &[(KappaLabel, Int)]) -> ModuleElement {
        let strs: Vec<(String, Int)> = pairs.iter().map(|&(l, c)| (l.label(), c)).collect();
        let refs: Vec<(&str, Int)> = strs.iter().map(|(l, c)| (l.as_str(), *c)).collect();
        ModuleElement::from_z(&refs)
    }

    #[test]
    fn magnus_generator_images() {
        let n = 4;
        let k12 = MagnusGen::kij(1, 2).unwrap().endo(n);
        assert_eq!(k12.image(1), &FreeWord::parse("x2^-1 x1 x2", n).unwrap());
        assert_eq!(k12.image(3), &FreeWord::generator(3));
        let k123 = MagnusGen::kijk(1, 2, 3).unwrap().endo(n);
        assert_eq!(k123.image(1), &FreeWord::parse("x1 x2^-1 x3^-1 x2 x3", n).unwrap());
    }

    #[test]
    fn composition_and_inverses() {
        let n = 4;
        let id = FreeEndo::identity(n);
        let k12 = MagnusGen::kij(1, 2).unwrap();
        assert_eq!(id.compose(&k12.endo(n)), k12.endo(n));
        assert_eq!(k12.endo(n).compose(&k12.endo_inv(n)), id);
        let k123 = MagnusGen::kijk(1, 2, 3).unwrap();
        assert_eq!(k123.endo(n).compose(&k123.endo_inv(n)), id);
        // K_ijk^-1 = K_ikj after label normalization.
        assert_eq!(k123.endo_inv(n), kijk_any(1, 3, 2, n));
        // Disjoint conjugation generators commute (an R1 instance).
        let k34 = MagnusGen::kij(3, 4).unwrap();
        assert_eq!(
            k12.endo(n).compose(&k34.endo(n)),
            k34.endo(n).compose(&k12.endo(n))
        );
    }

    #[test]
    fn relations_hold_for_small_ranks() {
        for n in [4u8, 5] {
            let report = verify_relations(n);
            assert!(report.passed(), "n = {n}: {:?}", report.failures);
            assert!(report.r1_checked > 0 && report.r4_checked > 0);
        }
        assert_eq!(verify_relations(4).r4_checked, 24);
    }

    #[test]
    fn k12_and_k21_do_not_commute() {
        let n = 4;
        let k12 = MagnusGen::kij(1, 2).unwrap();
        let k21 = MagnusGen::kij(2, 1).unwrap();
        let c = endo_commutator(&k12.endo(n), &k12.endo_inv(n), &k21.endo(n), &k21.endo_inv(n));
        assert_ne!(c, FreeEndo::identity(n));
    }

    #[test]
    fn lifts_abelianize_to_their_letters() {
        let n = 4;
        for l in [Letter::e(1, 2), Letter::e_inv(1, 2), Letter::f(1, 2)] {
            let a = lift_elementary(n, &l);
            // Compare with the standard module action matrix, column by column.
            let m = crate::regmod::standard_module(n).unwrap();
            let mat = a.ab_matrix();
            for c in 1..=n {
                let e = ModuleElement::from_z(&[(&format!("e:{c}"), 1)]);
                let img = apply_word(&GroupWord(vec![l]), &e, &m).unwrap();
                for r in 1..=n {
                    let want = img.z.get(&format!("e:{r}")).copied().unwrap_or(0);
                    assert_eq!(mat.get((r - 1) as usize, (c - 1) as usize), want);
                }
            }
        }
        let e12 = lift_elementary(n, &Letter::e(1, 2));
        let e12i = lift_elementary(n, &Letter::e_inv(1, 2));
        assert_eq!(e12.compose(&e12i), FreeEndo::identity(n));
        let f12 = lift_elementary(n, &Letter::f(1, 2));
        let f12i = lift_elementary(n, &Letter::f(1, 2).inverse());
        assert_eq!(f12.compose(&f12i), FreeEndo::identity(n));
    }

    #[test]
    fn gamma2_fixes_the_sign_convention() {
        let n = 3;
        let c = word_commutator(&FreeWord::generator(1), &FreeWord::generator(2));
        let cls = gamma2_class(&c, n).unwrap();
        assert_eq!(cls.coeffs.get(&(1, 2)), Some(&1));
        assert_eq!(cls.coeffs.len(), 1);
        let c_rev = word_commutator(&FreeWord::generator(2), &FreeWord::generator(1));
        let cls_rev = gamma2_class(&c_rev, n).unwrap();
        assert_eq!(cls_rev.coeffs.get(&(1, 2)), Some(&-1));
        assert!(gamma2_class(&FreeWord::identity(), n).unwrap().is_zero());
        assert_eq!(gamma2_class(&FreeWord::generator(1), n), Err(FreeError::NotInGamma2));
    }

    #[test]
    fn gamma2_is_bilinear_on_commutators() {
        let n = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..60 {
            let len = rng.gen_range(0..8);
            let rand_word = |rng: &mut ChaCha8Rng, len: usize| {
                let letters: Vec<(u8, i8)> = (0..len)
                    .map(|_| (rng.gen_range(1..=n), if rng.gen_bool(0.5) { 1 } else { -1 }))
                    .collect();
                FreeWord::from_letters(&letters)
            };
            let u = rand_word(&mut rng, len);
            let vlen = rng.gen_range(0..8);
            let v = rand_word(&mut rng, vlen);
            let cls = gamma2_class(&word_commutator(&u, &v), n).unwrap();
            let want = wedge_of(&u.exponents(n), &v.exponents(n));
            assert_eq!(cls, want, "u={u} v={v}");
        }
    }

    #[test]
    fn johnson_classes_of_generators() {
        let n = 4;
        let k12 = MagnusGen::kij(1, 2).unwrap();
        assert_eq!(
            johnson1(&k12.endo(n)).unwrap(),
            kme(&[(KappaLabel::new(1, 1, 2), 1)])
        );
        let k123 = MagnusGen::kijk(1, 2, 3).unwrap();
        assert_eq!(
            johnson1(&k123.endo(n)).unwrap(),
            kme(&[(KappaLabel::new(1, 2, 3), 1)])
        );
        let prod = k12.endo(n).compose(&MagnusGen::kij(3, 4).unwrap().endo(n));
        assert_eq!(
            johnson1(&prod).unwrap(),
            kme(&[(KappaLabel::new(1, 1, 2), 1), (KappaLabel::new(3, 3, 4), 1)])
        );
        // Not IA: a plain elementary lift.
        assert_eq!(
            johnson1(&lift_elementary(n, &Letter::e(1, 2))),
            Err(FreeError::NotInIa)
        );
    }

    #[test]
    fn johnson_is_a_homomorphism_on_random_words() {
        let n = 4;
        let gens = standard_generators(n);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..40 {
            let pick = |rng: &mut ChaCha8Rng| {
                let g = gens[rng.gen_range(0..gens.len())];
                let e: i8 = if rng.gen_bool(0.5) { 1 } else { -1 };
                (g, e)
            };
            let u: Vec<(MagnusGen, i8)> = (0..rng.gen_range(1..5)).map(|_| pick(&mut rng)).collect();
            let v: Vec<(MagnusGen, i8)> = (0..rng.gen_range(1..5)).map(|_| pick(&mut rng)).collect();
            let wu = GroupElementWord::from_letters(n, &u);
            let wv = GroupElementWord::from_letters(n, &v);
            let sum = johnson1(wu.endo())
                .unwrap()
                .add(&johnson1(wv.endo()).unwrap());
            let prod = johnson1(&wu.mul(&wv).endo().clone()).unwrap();
            assert_eq!(prod, sum);
        }
    }

    #[test]
    fn equivariance_spot_check() {
        // johnson1(lift(g) . phi . lift(g)^-1) = g . johnson1(phi)
        let n = 4;
        let m = ia_ab_module(n).unwrap();
        let phi = MagnusGen::kij(1, 3).unwrap().endo(n);
        let g = Letter::e(1, 2);
        let a = lift_elementary(n, &g);
        let ai = lift_elementary(n, &g.inverse());
        let conj = a.compose(&phi).compose(&ai);
        let lhs = johnson1(&conj).unwrap();
        let rhs = apply_word(&GroupWord(vec![g]), &johnson1(&phi).unwrap(), &m).unwrap();
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn group_word_round_trips() {
        let n = 5;
        let letters = vec![
            (MagnusGen::kij(1, 2).unwrap(), 1i8),
            (MagnusGen::kijk(3, 4, 5).unwrap(), -1i8),
        ];
        let w = GroupElementWord::from_letters(n, &letters);
        let parsed = GroupElementWord::parse_tokens(n, &w.tokens()).unwrap();
        assert_eq!(parsed, w);
        assert_eq!(w.mul(&w.inverse()).endo(), &FreeEndo::identity(n));
        // K[1,3,2] parses to the inverse of the canonical K[1,2,3].
        let (g, e) = parse_magnus_token("K[1,3,2]").unwrap();
        assert_eq!((g, e), (MagnusGen::kijk(1, 2, 3).unwrap(), -1));
    }
}
