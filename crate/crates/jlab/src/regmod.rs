//! n-indexed gradings and the regular-module calculus.
//!
//! A [`RegularModule`] is a mixed Z/F2 module together with an n-indexed
//! grading (subgroups `V^I` for `I` a subset of `{1..n}`, jointly generating)
//! and an action of the elementary matrices `E_ij`. The derived `F_ij` always
//! means `E_ij E_ji^-1 E_ij`. Words in these letters act on module elements
//! and on characters; [`check_regular`] verifies the three compatibility
//! conditions between grading and action and reports every violation.

use crate::exactalg::{
    iadd, imul, mixed_span_contains, smith_normal_form, solve_z, DenseElt, ExactError,
    F2Matrix, Int, IntMatrix, MixedModule, ModuleElement,
};
use crate::exactalg::{char_eval, Character, TargetElement};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RegError {
    #[error("n must be at least {0}")]
    TooSmallN(u8),
    #[error("modules have different n ({0} vs {1})")]
    MismatchedN(u8, u8),
    #[error("letter index out of range or i = j: ({0},{1}) with n = {2}")]
    BadIndex(u8, u8, u8),
    #[error("tensor factors must both be pure Z or both pure F2")]
    IncompatibleScalars,
    #[error("relations do not span an action-invariant subgroup (letter {0})")]
    NotInvariant(String),
    #[error("quotient has unsupported torsion {0} (only free and 2-torsion parts are representable)")]
    UnsupportedTorsion(Int),
    #[error("quotient of a mixed module is not supported")]
    MixedQuotient,
    #[error("cannot parse letter token `{0}`")]
    BadLetterToken(String),
    #[error(transparent)]
    Exact(#[from] ExactError),
}

// ---------------------------------------------------------------------------
// Index subsets of {1..n}
// ---------------------------------------------------------------------------

/// Subsets of `{1..n}` as bitmasks (bit `i-1` for index `i`).
pub type IndexSet = u32;

pub fn set_from(indices: &[u8]) -> IndexSet {
    indices.iter().fold(0, |m, &i| m | (1 << (i - 1)))
}

pub fn set_to_vec(s: IndexSet) -> Vec<u8> {
    (1..=32).filter(|&i| s & (1 << (i - 1)) != 0).collect()
}

pub fn set_contains(s: IndexSet, i: u8) -> bool {
    s & (1 << (i - 1)) != 0
}

pub fn set_size(s: IndexSet) -> usize {
    s.count_ones() as usize
}

pub fn set_to_string(s: IndexSet) -> String {
    let v: Vec<String> = set_to_vec(s).iter().map(u8::to_string).collect();
    v.join(",")
}

pub fn set_parse(text: &str) -> Option<IndexSet> {
    if text.is_empty() {
        return Some(0);
    }
    let mut s = 0;
    for part in text.split(',') {
        let i: u8 = part.trim().parse().ok()?;
        if i == 0 || i > 32 {
            return None;
        }
        s |= 1 << (i - 1);
    }
    Some(s)
}

/// Image of a subset under the transposition (i j).
pub fn set_transpose(s: IndexSet, i: u8, j: u8) -> IndexSet {
    let bi = set_contains(s, i);
    let bj = set_contains(s, j);
    let mut out = s & !(1 << (i - 1)) & !(1 << (j - 1));
    if bi {
        out |= 1 << (j - 1);
    }
    if bj {
        out |= 1 << (i - 1);
    }
    out
}

/// Order subsets by their sorted element lists (so `{1,2} < {1,2,3} < {1,3}`).
pub fn set_lex_cmp(a: IndexSet, b: IndexSet) -> std::cmp::Ordering {
    set_to_vec(a).cmp(&set_to_vec(b))
}

// ---------------------------------------------------------------------------
// Letters and words
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LetterKind {
    E,
    F,
}

/// One generator letter `E_ij^{+-1}` or `F_ij^{+-1}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Letter {
    pub kind: LetterKind,
    pub i: u8,
    pub j: u8,
    pub exp: i8,
}

impl Letter {
    pub fn e(i: u8, j: u8) -> Self {
        Letter { kind: LetterKind::E, i, j, exp: 1 }
    }

    pub fn e_inv(i: u8, j: u8) -> Self {
        Letter { kind: LetterKind::E, i, j, exp: -1 }
    }

    pub fn f(i: u8, j: u8) -> Self {
        Letter { kind: LetterKind::F, i, j, exp: 1 }
    }

    pub fn inverse(&self) -> Letter {
        Letter { exp: -self.exp, ..*self }
    }

    pub fn token(&self) -> String {
        let kind = match self.kind {
            LetterKind::E => "E",
            LetterKind::F => "F",
        };
        if self.exp == 1 {
            format!("{kind}:{},{}", self.i, self.j)
        } else {
            format!("{kind}:{},{}^-1", self.i, self.j)
        }
    }

    pub fn parse(token: &str) -> Result<Letter, RegError> {
        let bad = || RegError::BadLetterToken(token.to_string());
        let (body, exp) = match token.strip_suffix("^-1") {
            Some(b) => (b, -1),
            None => (token, 1),
        };
        let (kind, rest) = if let Some(r) = body.strip_prefix("E:") {
            (LetterKind::E, r)
        } else if let Some(r) = body.strip_prefix("F:") {
            (LetterKind::F, r)
        } else {
            return Err(bad());
        };
        let mut parts = rest.split(',');
        let i: u8 = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        let j: u8 = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        if parts.next().is_some() || i == j || i == 0 || j == 0 {
            return Err(bad());
        }
        Ok(Letter { kind, i, j, exp })
    }
}

impl fmt::Display for Letter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.token())
    }
}

/// A word in the generator letters, stored in application order: the first
/// letter acts first, so `apply(w1.w2, x) = apply(w2, apply(w1, x))`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupWord(pub Vec<Letter>);

impl GroupWord {
    pub fn identity() -> Self {
        GroupWord(Vec::new())
    }

    pub fn inverse(&self) -> GroupWord {
        GroupWord(self.0.iter().rev().map(Letter::inverse).collect())
    }

    pub fn then(&self, next: &GroupWord) -> GroupWord {
        let mut letters = self.0.clone();
        letters.extend(next.0.iter().copied());
        GroupWord(letters)
    }

    pub fn push(&mut self, l: Letter) {
        self.0.push(l);
    }

    pub fn tokens(&self) -> Vec<String> {
        self.0.iter().map(Letter::token).collect()
    }

    pub fn parse_tokens(tokens: &[String]) -> Result<GroupWord, RegError> {
        Ok(GroupWord(tokens.iter().map(|t| Letter::parse(t)).collect::<Result<_, _>>()?))
    }
}

// ---------------------------------------------------------------------------
// Endomorphisms of a mixed module
// ---------------------------------------------------------------------------

/// Column-sparse endomorphism of `Z^zdim (+) F2^fdim`. The only maps out of
/// the F2 part land back in it, so the block shape is `[[zz, 0], [zf, ff]]`
/// with `zf` applied to the mod-2 reduction of the Z part.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MixedMap {
    pub zdim: usize,
    pub fdim: usize,
    zz: Vec<Vec<(usize, Int)>>,
    zf: Vec<Vec<usize>>,
    ff: Vec<Vec<usize>>,
}

impl MixedMap {
    pub fn identity(zdim: usize, fdim: usize) -> Self {
        MixedMap {
            zdim,
            fdim,
            zz: (0..zdim).map(|i| vec![(i, 1)]).collect(),
            zf: vec![Vec::new(); zdim],
            ff: (0..fdim).map(|i| vec![i]).collect(),
        }
    }

    pub fn from_columns(
        zdim: usize,
        fdim: usize,
        zz: Vec<Vec<(usize, Int)>>,
        zf: Vec<Vec<usize>>,
        ff: Vec<Vec<usize>>,
    ) -> Self {
        assert_eq!(zz.len(), zdim);
        assert_eq!(zf.len(), zdim);
        assert_eq!(ff.len(), fdim);
        let mut m = MixedMap { zdim, fdim, zz, zf, ff };
        m.normalize();
        m
    }

    fn normalize(&mut self) {
        for col in &mut self.zz {
            col.sort_by_key(|&(r, _)| r);
            let mut merged: Vec<(usize, Int)> = Vec::with_capacity(col.len());
            for &(r, v) in col.iter() {
                if let Some(last) = merged.last_mut() {
                    if last.0 == r {
                        last.1 = iadd(last.1, v);
                        continue;
                    }
                }
                merged.push((r, v));
            }
            merged.retain(|&(_, v)| v != 0);
            *col = merged;
        }
        let cancel = |col: &mut Vec<usize>| {
            col.sort_unstable();
            let mut merged = Vec::with_capacity(col.len());
            let mut iter = col.iter().peekable();
            while let Some(&r) = iter.next() {
                let mut count = 1;
                while iter.peek() == Some(&&r) {
                    iter.next();
                    count += 1;
                }
                if count % 2 == 1 {
                    merged.push(r);
                }
            }
            *col = merged;
        };
        for col in &mut self.zf {
            cancel(col);
        }
        for col in &mut self.ff {
            cancel(col);
        }
    }

    pub fn apply(&self, x: &DenseElt) -> DenseElt {
        assert_eq!(x.z.len(), self.zdim);
        assert_eq!(x.f.len(), self.fdim);
        let mut out = DenseElt::zero(self.zdim, self.fdim);
        for (j, &c) in x.z.iter().enumerate() {
            if c == 0 {
                continue;
            }
            for &(r, v) in &self.zz[j] {
                out.z[r] = iadd(out.z[r], imul(c, v));
            }
            if c.rem_euclid(2) == 1 {
                for &r in &self.zf[j] {
                    out.f[r] ^= true;
                }
            }
        }
        for (j, &b) in x.f.iter().enumerate() {
            if b {
                for &r in &self.ff[j] {
                    out.f[r] ^= true;
                }
            }
        }
        out
    }

    /// Composition `self o first` (apply `first`, then `self`).
    pub fn compose(&self, first: &MixedMap) -> MixedMap {
        assert_eq!(self.zdim, first.zdim);
        assert_eq!(self.fdim, first.fdim);
        let mut zz = vec![Vec::new(); self.zdim];
        let mut zf = vec![Vec::new(); self.zdim];
        let mut ff = vec![Vec::new(); self.fdim];
        for j in 0..self.zdim {
            for &(k, v) in &first.zz[j] {
                for &(r, w) in &self.zz[k] {
                    zz[j].push((r, imul(v, w)));
                }
                if v.rem_euclid(2) == 1 {
                    zf[j].extend(self.zf[k].iter().copied());
                }
            }
            for &k in &first.zf[j] {
                zf[j].extend(self.ff[k].iter().copied());
            }
        }
        for j in 0..self.fdim {
            for &k in &first.ff[j] {
                ff[j].extend(self.ff[k].iter().copied());
            }
        }
        MixedMap::from_columns(self.zdim, self.fdim, zz, zf, ff)
    }

    pub fn is_identity(&self) -> bool {
        self == &MixedMap::identity(self.zdim, self.fdim)
    }

    /// Exact inverse, if the map is an automorphism of `Z^zdim (+) F2^fdim`.
    pub fn inverse(&self) -> Option<MixedMap> {
        let mut zmat = IntMatrix::zero(self.zdim, self.zdim);
        for (j, col) in self.zz.iter().enumerate() {
            for &(r, v) in col {
                zmat.set(r, j, v);
            }
        }
        let mut zz_inv_cols: Vec<Vec<(usize, Int)>> = Vec::with_capacity(self.zdim);
        if self.zdim > 0 {
            let snf = smith_normal_form(&zmat);
            if snf.rank() != self.zdim || snf.factors().iter().any(|&d| d != 1) {
                return None;
            }
            for j in 0..self.zdim {
                let mut e = vec![0; self.zdim];
                e[j] = 1;
                let x = solve_z(&zmat, &e)?;
                zz_inv_cols.push(x.iter().enumerate().filter(|&(_, &v)| v != 0).map(|(r, &v)| (r, v)).collect());
            }
        }
        let mut fmat = F2Matrix::zero(self.fdim, self.fdim);
        for (j, col) in self.ff.iter().enumerate() {
            for &r in col {
                fmat.set(r, j, true);
            }
        }
        let finv = if self.fdim > 0 { fmat.invert()? } else { fmat };
        let ff_inv: Vec<Vec<usize>> =
            (0..self.fdim).map(|j| (0..self.fdim).filter(|&r| finv.get(r, j)).collect()).collect();
        // zf block of the inverse: ff^-1 * zf * zz^-1 over F2.
        let mut zf_inv = vec![Vec::new(); self.zdim];
        for j in 0..self.zdim {
            let mut acc = vec![false; self.fdim];
            for &(k, v) in &zz_inv_cols[j] {
                if v.rem_euclid(2) == 1 {
                    for &r in &self.zf[k] {
                        acc[r] ^= true;
                    }
                }
            }
            // acc = zf(zz^-1 e_j); now push through ff^-1.
            let mut out = vec![false; self.fdim];
            for (k, &b) in acc.iter().enumerate() {
                if b {
                    for &r in &ff_inv[k] {
                        out[r] ^= true;
                    }
                }
            }
            zf_inv[j] = out.iter().enumerate().filter(|&(_, &b)| b).map(|(r, _)| r).collect();
        }
        let inv = MixedMap::from_columns(self.zdim, self.fdim, zz_inv_cols, zf_inv, ff_inv);
        Some(inv)
    }

    pub fn zz_column(&self, j: usize) -> &[(usize, Int)] {
        &self.zz[j]
    }

    pub fn zf_column(&self, j: usize) -> &[usize] {
        &self.zf[j]
    }

    pub fn ff_column(&self, j: usize) -> &[usize] {
        &self.ff[j]
    }
}

// ---------------------------------------------------------------------------
// Elementary actions
// ---------------------------------------------------------------------------

/// Action of the elementary matrices: one invertible [`MixedMap`] per ordered
/// pair `(i,j)`, stored together with its inverse.
#[derive(Clone, Debug)]
pub struct ElementaryAction {
    pub n: u8,
    maps: BTreeMap<(u8, u8), (MixedMap, MixedMap)>,
}

impl ElementaryAction {
    pub fn new(n: u8, maps: BTreeMap<(u8, u8), (MixedMap, MixedMap)>) -> Self {
        ElementaryAction { n, maps }
    }

    /// Check every stored pair really is mutually inverse.
    pub fn verify_invertible(&self) -> bool {
        self.maps.values().all(|(m, minv)| m.compose(minv).is_identity() && minv.compose(m).is_identity())
    }

    pub fn e_map(&self, i: u8, j: u8, exp: i8) -> Result<&MixedMap, RegError> {
        let (fwd, back) = self.maps.get(&(i, j)).ok_or(RegError::BadIndex(i, j, self.n))?;
        Ok(if exp >= 0 { fwd } else { back })
    }

    /// Resolve any letter to a concrete map; `F_ij = E_ij E_ji^-1 E_ij`.
    pub fn letter_map(&self, l: &Letter) -> Result<MixedMap, RegError> {
        if l.i == l.j || l.i == 0 || l.j == 0 || l.i > self.n || l.j > self.n {
            return Err(RegError::BadIndex(l.i, l.j, self.n));
        }
        match l.kind {
            LetterKind::E => Ok(self.e_map(l.i, l.j, l.exp)?.clone()),
            LetterKind::F => {
                if l.exp >= 0 {
                    let a = self.e_map(l.i, l.j, 1)?;
                    let b = self.e_map(l.j, l.i, -1)?;
                    Ok(a.compose(&b.compose(a)))
                } else {
                    let a = self.e_map(l.i, l.j, -1)?;
                    let b = self.e_map(l.j, l.i, 1)?;
                    Ok(a.compose(&b.compose(a)))
                }
            }
        }
    }

    pub fn pairs(&self) -> impl Iterator<Item = (u8, u8)> + '_ {
        self.maps.keys().copied()
    }
}

// ---------------------------------------------------------------------------
// Gradings and regular modules
// ---------------------------------------------------------------------------

/// n-indexed grading: finitely many subsets with generating sets; an absent
/// key is the zero piece.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NGrading {
    pub n: u8,
    pub pieces: BTreeMap<IndexSet, Vec<ModuleElement>>,
}

impl NGrading {
    pub fn new(n: u8, pieces: BTreeMap<IndexSet, Vec<ModuleElement>>) -> Self {
        let pieces = pieces
            .into_iter()
            .map(|(k, gens)| (k, gens.into_iter().filter(|g| !g.is_zero()).collect::<Vec<_>>()))
            .filter(|(_, gens): &(IndexSet, Vec<ModuleElement>)| !gens.is_empty())
            .collect();
        NGrading { n, pieces }
    }

    pub fn gens(&self, s: IndexSet) -> &[ModuleElement] {
        self.pieces.get(&s).map_or(&[], Vec::as_slice)
    }

    /// Keys in lexicographic order of their element lists.
    pub fn keys_lex(&self) -> Vec<IndexSet> {
        let mut keys: Vec<IndexSet> = self.pieces.keys().copied().collect();
        keys.sort_by(|&a, &b| set_lex_cmp(a, b));
        keys
    }

    pub fn degree(&self) -> usize {
        self.pieces.keys().map(|&s| set_size(s)).max().unwrap_or(0)
    }
}

#[derive(Clone, Debug)]
pub struct RegularModule {
    pub module: MixedModule,
    pub grading: NGrading,
    pub action: ElementaryAction,
}

impl RegularModule {
    pub fn n(&self) -> u8 {
        self.grading.n
    }

    pub fn degree(&self) -> usize {
        self.grading.degree()
    }

    pub fn piece_gens_dense(&self, s: IndexSet) -> Vec<DenseElt> {
        self.grading
            .gens(s)
            .iter()
            .map(|g| self.module.dense(g).expect("grading generators live in the module"))
            .collect()
    }

    /// Every basis element lies in the subgroup generated by all pieces.
    pub fn grading_complete(&self) -> bool {
        let mut all: Vec<DenseElt> = Vec::new();
        for gens in self.grading.pieces.values() {
            for g in gens {
                all.push(self.module.dense(g).expect("grading generators live in the module"));
            }
        }
        for label in self.module.zbasis().iter().chain(self.module.f2basis().iter()) {
            let e = self.module.basis_element(label).expect("basis label");
            let e = self.module.dense(&e).expect("basis label");
            if !mixed_span_contains(&all, &e) {
                return false;
            }
        }
        true
    }
}

// ---------------------------------------------------------------------------
// Built-in modules
// ---------------------------------------------------------------------------

/// Rank-n free module with `E_ij: e_j -> e_j + e_i` and grading `{i} -> Z e_i`.
pub fn standard_module(n: u8) -> Result<RegularModule, RegError> {
    if n < 2 {
        return Err(RegError::TooSmallN(2));
    }
    let labels: Vec<String> = (1..=n).map(|i| format!("e:{i}")).collect();
    let module = MixedModule::new(labels, Vec::new())?;
    let nn = n as usize;
    let mut maps = BTreeMap::new();
    for i in 1..=n {
        for j in 1..=n {
            if i == j {
                continue;
            }
            let col = |eps: Int| {
                let mut zz: Vec<Vec<(usize, Int)>> = (0..nn).map(|c| vec![(c, 1)]).collect();
                zz[(j - 1) as usize].push(((i - 1) as usize, eps));
                MixedMap::from_columns(nn, 0, zz, vec![Vec::new(); nn], Vec::new())
            };
            maps.insert((i, j), (col(1), col(-1)));
        }
    }
    let mut pieces = BTreeMap::new();
    for i in 1..=n {
        pieces.insert(set_from(&[i]), vec![ModuleElement::from_z(&[(&format!("e:{i}"), 1)])]);
    }
    Ok(RegularModule {
        module,
        grading: NGrading::new(n, pieces),
        action: ElementaryAction::new(n, maps),
    })
}

/// Dual of the standard module: `E_ij: e_i* -> e_i* - e_j*`.
pub fn dual_module(n: u8) -> Result<RegularModule, RegError> {
    if n < 2 {
        return Err(RegError::TooSmallN(2));
    }
    let labels: Vec<String> = (1..=n).map(|i| format!("e*:{i}")).collect();
    let module = MixedModule::new(labels, Vec::new())?;
    let nn = n as usize;
    let mut maps = BTreeMap::new();
    for i in 1..=n {
        for j in 1..=n {
            if i == j {
                continue;
            }
            let col = |eps: Int| {
                let mut zz: Vec<Vec<(usize, Int)>> = (0..nn).map(|c| vec![(c, 1)]).collect();
                zz[(i - 1) as usize].push(((j - 1) as usize, -eps));
                MixedMap::from_columns(nn, 0, zz, vec![Vec::new(); nn], Vec::new())
            };
            maps.insert((i, j), (col(1), col(-1)));
        }
    }
    let mut pieces = BTreeMap::new();
    for i in 1..=n {
        pieces.insert(set_from(&[i]), vec![ModuleElement::from_z(&[(&format!("e*:{i}"), 1)])]);
    }
    Ok(RegularModule {
        module,
        grading: NGrading::new(n, pieces),
        action: ElementaryAction::new(n, maps),
    })
}

// ---------------------------------------------------------------------------
// Direct sum, tensor, quotient
// ---------------------------------------------------------------------------

fn relabel(prefix: &str, m: &RegularModule) -> RegularModule {
    let ren = |l: &String| format!("{prefix}{l}");
    let module = MixedModule::new(
        m.module.zbasis().iter().map(&ren).collect(),
        m.module.f2basis().iter().map(&ren).collect(),
    )
    .expect("renamed labels stay unique");
    let pieces = m
        .grading
        .pieces
        .iter()
        .map(|(&k, gens)| {
            let gens = gens
                .iter()
                .map(|g| ModuleElement {
                    z: g.z.iter().map(|(l, &c)| (ren(l), c)).collect(),
                    f: g.f.iter().map(&ren).collect(),
                })
                .collect();
            (k, gens)
        })
        .collect();
    RegularModule {
        module,
        grading: NGrading::new(m.grading.n, pieces),
        action: m.action.clone(),
    }
}

/// Direct sum with piece-wise grading. Colliding label sets are disambiguated
/// by `a:`/`b:` prefixes.
pub fn direct_sum(v: &RegularModule, w: &RegularModule) -> Result<RegularModule, RegError> {
    if v.n() != w.n() {
        return Err(RegError::MismatchedN(v.n(), w.n()));
    }
    let collide = v
        .module
        .zbasis()
        .iter()
        .chain(v.module.f2basis())
        .any(|l| w.module.zindex(l).is_some() || w.module.findex(l).is_some());
    let (v, w) = if collide {
        (relabel("a:", v), relabel("b:", w))
    } else {
        (v.clone(), w.clone())
    };

    let zbasis: Vec<String> = v.module.zbasis().iter().chain(w.module.zbasis()).cloned().collect();
    let f2basis: Vec<String> = v.module.f2basis().iter().chain(w.module.f2basis()).cloned().collect();
    let module = MixedModule::new(zbasis, f2basis)?;
    let (vz, vf) = (v.module.zrank(), v.module.f2dim());
    let (zdim, fdim) = (module.zrank(), module.f2dim());

    let mut maps = BTreeMap::new();
    for (i, j) in v.action.pairs() {
        let mk = |a: &MixedMap, b: &MixedMap| {
            let mut zz: Vec<Vec<(usize, Int)>> = Vec::with_capacity(zdim);
            let mut zf: Vec<Vec<usize>> = Vec::with_capacity(zdim);
            let mut ff: Vec<Vec<usize>> = Vec::with_capacity(fdim);
            for c in 0..vz {
                zz.push(a.zz_column(c).to_vec());
                zf.push(a.zf_column(c).to_vec());
            }
            for c in 0..b.zdim {
                zz.push(b.zz_column(c).iter().map(|&(r, x)| (r + vz, x)).collect());
                zf.push(b.zf_column(c).iter().map(|&r| r + vf).collect());
            }
            for c in 0..vf {
                ff.push(a.ff_column(c).to_vec());
            }
            for c in 0..b.fdim {
                ff.push(b.ff_column(c).iter().map(|&r| r + vf).collect());
            }
            MixedMap::from_columns(zdim, fdim, zz, zf, ff)
        };
        let (a, ai) = (v.action.e_map(i, j, 1)?, v.action.e_map(i, j, -1)?);
        let (b, bi) = (w.action.e_map(i, j, 1)?, w.action.e_map(i, j, -1)?);
        maps.insert((i, j), (mk(a, b), mk(ai, bi)));
    }

    let mut pieces: BTreeMap<IndexSet, Vec<ModuleElement>> = BTreeMap::new();
    for (&k, gens) in v.grading.pieces.iter().chain(w.grading.pieces.iter()) {
        pieces.entry(k).or_default().extend(gens.iter().cloned());
    }
    Ok(RegularModule {
        module,
        grading: NGrading::new(v.n(), pieces),
        action: ElementaryAction::new(v.n(), maps),
    })
}

fn tensor_label(l: &str, r: &str) -> String {
    format!("({l})|({r})")
}

/// Tensor product of two pure-Z (or two pure-F2) modules, graded by
/// `(V (x) W)^I = sum over I1 u I2 = I of V^I1 (x) W^I2`.
pub fn tensor(v: &RegularModule, w: &RegularModule) -> Result<RegularModule, RegError> {
    if v.n() != w.n() {
        return Err(RegError::MismatchedN(v.n(), w.n()));
    }
    let pure_z = v.module.is_pure_z() && w.module.is_pure_z();
    let pure_f = v.module.is_pure_f2() && w.module.is_pure_f2();
    if !pure_z && !pure_f {
        return Err(RegError::IncompatibleScalars);
    }

    let (lv, lw): (Vec<String>, Vec<String>) = if pure_z {
        (v.module.zbasis().to_vec(), w.module.zbasis().to_vec())
    } else {
        (v.module.f2basis().to_vec(), w.module.f2basis().to_vec())
    };
    let (dv, dw) = (lv.len(), lw.len());
    let labels: Vec<String> =
        lv.iter().flat_map(|a| lw.iter().map(move |b| tensor_label(a, b))).collect();
    let module = if pure_z {
        MixedModule::new(labels, Vec::new())?
    } else {
        MixedModule::new(Vec::new(), labels)?
    };
    let dim = dv * dw;

    let kron_z = |a: &MixedMap, b: &MixedMap| {
        let mut zz: Vec<Vec<(usize, Int)>> = Vec::with_capacity(dim);
        for c1 in 0..dv {
            for c2 in 0..dw {
                let mut col = Vec::new();
                for &(r1, x) in a.zz_column(c1) {
                    for &(r2, y) in b.zz_column(c2) {
                        col.push((r1 * dw + r2, imul(x, y)));
                    }
                }
                zz.push(col);
            }
        }
        MixedMap::from_columns(dim, 0, zz, vec![Vec::new(); dim], Vec::new())
    };
    let kron_f = |a: &MixedMap, b: &MixedMap| {
        let mut ff: Vec<Vec<usize>> = Vec::with_capacity(dim);
        for c1 in 0..dv {
            for c2 in 0..dw {
                let mut col = Vec::new();
                for &r1 in a.ff_column(c1) {
                    for &r2 in b.ff_column(c2) {
                        col.push(r1 * dw + r2);
                    }
                }
                ff.push(col);
            }
        }
        MixedMap::from_columns(0, dim, Vec::new(), Vec::new(), ff)
    };

    let mut maps = BTreeMap::new();
    for (i, j) in v.action.pairs() {
        let (a, ai) = (v.action.e_map(i, j, 1)?, v.action.e_map(i, j, -1)?);
        let (b, bi) = (w.action.e_map(i, j, 1)?, w.action.e_map(i, j, -1)?);
        let pair = if pure_z {
            (kron_z(a, b), kron_z(ai, bi))
        } else {
            (kron_f(a, b), kron_f(ai, bi))
        };
        maps.insert((i, j), pair);
    }

    let tensor_elt = |x: &ModuleElement, y: &ModuleElement| -> ModuleElement {
        let mut out = ModuleElement::zero();
        if pure_z {
            for (a, &ca) in &x.z {
                for (b, &cb) in &y.z {
                    let l = tensor_label(a, b);
                    let v0 = out.z.get(&l).copied().unwrap_or(0);
                    let v1 = iadd(v0, imul(ca, cb));
                    if v1 == 0 {
                        out.z.remove(&l);
                    } else {
                        out.z.insert(l, v1);
                    }
                }
            }
        } else {
            for a in &x.f {
                for b in &y.f {
                    let l = tensor_label(a, b);
                    if !out.f.remove(&l) {
                        out.f.insert(l);
                    }
                }
            }
        }
        out
    };

    let mut pieces: BTreeMap<IndexSet, Vec<ModuleElement>> = BTreeMap::new();
    for (&i1, g1) in &v.grading.pieces {
        for (&i2, g2) in &w.grading.pieces {
            let key = i1 | i2;
            let entry = pieces.entry(key).or_default();
            for x in g1 {
                for y in g2 {
                    entry.push(tensor_elt(x, y));
                }
            }
        }
    }
    Ok(RegularModule {
        module,
        grading: NGrading::new(v.n(), pieces),
        action: ElementaryAction::new(v.n(), maps),
    })
}

/// Projection/section pair for a quotient module, kept so callers can move
/// elements between the source and the quotient coordinates.
#[derive(Clone, Debug)]
pub struct QuotientMaps {
    /// Dense coordinates of the source module mapped to the quotient.
    pub proj_zz: IntMatrix,
    pub proj_zf: F2Matrix,
    pub proj_ff: F2Matrix,
    /// Integer representatives for the quotient basis (columns).
    pub lift_z: IntMatrix,
    pub lift_f: IntMatrix,
    pub source_pure_z: bool,
}

impl QuotientMaps {
    pub fn project(&self, x: &DenseElt) -> DenseElt {
        if self.source_pure_z {
            let z = self.proj_zz.mul_vec(&x.z);
            let mut f = vec![false; self.proj_zf.rows];
            for r in 0..self.proj_zf.rows {
                let mut acc = false;
                for c in 0..self.proj_zf.cols {
                    if self.proj_zf.get(r, c) && x.z[c].rem_euclid(2) == 1 {
                        acc ^= true;
                    }
                }
                f[r] = acc;
            }
            DenseElt { z, f }
        } else {
            let mut f = vec![false; self.proj_ff.rows];
            for r in 0..self.proj_ff.rows {
                let mut acc = false;
                for c in 0..self.proj_ff.cols {
                    if self.proj_ff.get(r, c) && x.f[c] {
                        acc ^= true;
                    }
                }
                f[r] = acc;
            }
            DenseElt { z: Vec::new(), f }
        }
    }

    pub fn lift(&self, x: &DenseElt) -> DenseElt {
        if self.source_pure_z {
            let mut out = vec![0; self.lift_z.rows];
            for (c, &v) in x.z.iter().enumerate() {
                if v != 0 {
                    for r in 0..self.lift_z.rows {
                        out[r] = iadd(out[r], imul(v, self.lift_z.get(r, c)));
                    }
                }
            }
            for (c, &b) in x.f.iter().enumerate() {
                if b {
                    for r in 0..self.lift_f.rows {
                        out[r] = iadd(out[r], self.lift_f.get(r, c));
                    }
                }
            }
            DenseElt { z: out, f: Vec::new() }
        } else {
            let mut out = vec![false; self.lift_f.rows];
            for (c, &b) in x.f.iter().enumerate() {
                if b {
                    for r in 0..self.lift_f.rows {
                        if self.lift_f.get(r, c) != 0 {
                            out[r] ^= true;
                        }
                    }
                }
            }
            DenseElt { z: Vec::new(), f: out }
        }
    }
}

pub struct Quotient {
    pub module: RegularModule,
    pub maps: QuotientMaps,
}

/// Quotient by the subgroup generated by `relations`, which must be invariant
/// under every `E_ij^{+-1}`. The grading is the image grading. Only quotients
/// whose carrier is again `Z^r (+) F2^s` are representable; other torsion is
/// rejected.
pub fn quotient(v: &RegularModule, relations: &[ModuleElement]) -> Result<RegularModule, RegError> {
    Ok(quotient_with_maps(v, relations)?.module)
}

pub fn quotient_with_maps(v: &RegularModule, relations: &[ModuleElement]) -> Result<Quotient, RegError> {
    let rel_dense: Vec<DenseElt> =
        relations.iter().map(|r| v.module.dense(r)).collect::<Result<_, _>>()?;
    // Invariance of the relation subgroup under every letter.
    for (i, j) in v.action.pairs() {
        for exp in [1, -1] {
            let m = v.action.e_map(i, j, exp)?;
            for r in &rel_dense {
                if !mixed_span_contains(&rel_dense, &m.apply(r)) {
                    let l = Letter { kind: LetterKind::E, i, j, exp };
                    return Err(RegError::NotInvariant(l.token()));
                }
            }
        }
    }
    if v.module.is_pure_z() {
        quotient_pure_z(v, &rel_dense)
    } else if v.module.is_pure_f2() {
        quotient_pure_f2(v, &rel_dense)
    } else {
        Err(RegError::MixedQuotient)
    }
}

fn quotient_pure_z(v: &RegularModule, rel_dense: &[DenseElt]) -> Result<Quotient, RegError> {
    let dim = v.module.zrank();
    let m = rel_dense.len();
    let mut r = IntMatrix::zero(dim, m.max(1));
    for (c, rel) in rel_dense.iter().enumerate() {
        for (row, &val) in rel.z.iter().enumerate() {
            r.set(row, c, val);
        }
    }
    let snf = smith_normal_form(&r);
    // In coordinates y = u x the relation subgroup is spanned by d_i e_i.
    let mut free_rows = Vec::new();
    let mut tors_rows = Vec::new();
    for row in 0..dim {
        let d = if row < dim.min(r.cols) { snf.d.get(row, row) } else { 0 };
        match d {
            0 => free_rows.push(row),
            1 => {}
            2 => tors_rows.push(row),
            other => return Err(RegError::UnsupportedTorsion(other)),
        }
    }
    let zlabels: Vec<String> = (0..free_rows.len()).map(|i| format!("q:{i}")).collect();
    let flabels: Vec<String> = (0..tors_rows.len()).map(|i| format!("q2:{i}")).collect();
    let module = MixedModule::new(zlabels, flabels)?;
    let (zdim, fdim) = (free_rows.len(), tors_rows.len());

    let mut proj_zz = IntMatrix::zero(zdim, dim);
    let mut proj_zf = F2Matrix::zero(fdim, dim);
    for c in 0..dim {
        for (rr, &row) in free_rows.iter().enumerate() {
            proj_zz.set(rr, c, snf.u.get(row, c));
        }
        for (rr, &row) in tors_rows.iter().enumerate() {
            proj_zf.set(rr, c, snf.u.get(row, c).rem_euclid(2) == 1);
        }
    }
    let mut lift_z = IntMatrix::zero(dim, zdim);
    let mut lift_f = IntMatrix::zero(dim, fdim);
    for (cc, &row) in free_rows.iter().enumerate() {
        for rr in 0..dim {
            lift_z.set(rr, cc, snf.uinv.get(rr, row));
        }
    }
    for (cc, &row) in tors_rows.iter().enumerate() {
        for rr in 0..dim {
            lift_f.set(rr, cc, snf.uinv.get(rr, row));
        }
    }
    let maps = QuotientMaps { proj_zz, proj_zf, proj_ff: F2Matrix::zero(0, 0), lift_z, lift_f, source_pure_z: true };

    let mut action_maps = BTreeMap::new();
    for (i, j) in v.action.pairs() {
        let mk = |old: &MixedMap| -> Result<MixedMap, RegError> {
            let mut zz = Vec::with_capacity(zdim);
            let mut zf = Vec::with_capacity(zdim);
            let mut ff = Vec::with_capacity(fdim);
            for c in 0..zdim {
                let mut e = DenseElt::zero(zdim, fdim);
                e.z[c] = 1;
                let img = maps.project(&old.apply(&maps.lift(&e)));
                zz.push(img.z.iter().enumerate().filter(|&(_, &x)| x != 0).map(|(r, &x)| (r, x)).collect());
                zf.push(img.f.iter().enumerate().filter(|&(_, &b)| b).map(|(r, _)| r).collect());
            }
            for c in 0..fdim {
                let mut e = DenseElt::zero(zdim, fdim);
                e.f[c] = true;
                let img = maps.project(&old.apply(&maps.lift(&e)));
                // A torsion class has image of order dividing 2; its free part
                // must vanish for the induced map to respect the carrier.
                if img.z.iter().any(|&x| x != 0) {
                    return Err(RegError::UnsupportedTorsion(2));
                }
                ff.push(img.f.iter().enumerate().filter(|&(_, &b)| b).map(|(r, _)| r).collect());
            }
            Ok(MixedMap::from_columns(zdim, fdim, zz, zf, ff))
        };
        let fwd = mk(v.action.e_map(i, j, 1)?)?;
        let back = mk(v.action.e_map(i, j, -1)?)?;
        action_maps.insert((i, j), (fwd, back));
    }

    let mut pieces: BTreeMap<IndexSet, Vec<ModuleElement>> = BTreeMap::new();
    for (&k, gens) in &v.grading.pieces {
        let mut out = Vec::new();
        for g in gens {
            let d = v.module.dense(g)?;
            let img = maps.project(&d);
            out.push(module.sparse(&img));
        }
        pieces.insert(k, out);
    }
    Ok(Quotient {
        module: RegularModule {
            module,
            grading: NGrading::new(v.n(), pieces),
            action: ElementaryAction::new(v.n(), action_maps),
        },
        maps,
    })
}

fn quotient_pure_f2(v: &RegularModule, rel_dense: &[DenseElt]) -> Result<Quotient, RegError> {
    let dim = v.module.f2dim();
    // Row reduce the relations to find pivot coordinates.
    let mut rows: Vec<Vec<bool>> = rel_dense.iter().map(|r| r.f.clone()).collect();
    let mut pivots: Vec<usize> = Vec::new();
    let mut rank = 0;
    for c in 0..dim {
        let Some(p) = (rank..rows.len()).find(|&r| rows[r][c]) else { continue };
        rows.swap(rank, p);
        let pivot_row = rows[rank].clone();
        for (r, row) in rows.iter_mut().enumerate() {
            if r != rank && row[c] {
                for (a, b) in row.iter_mut().zip(&pivot_row) {
                    *a ^= b;
                }
            }
        }
        pivots.push(c);
        rank += 1;
    }
    let kept: Vec<usize> = (0..dim).filter(|c| !pivots.contains(c)).collect();
    let flabels: Vec<String> = (0..kept.len()).map(|i| format!("q2:{i}")).collect();
    let module = MixedModule::new(Vec::new(), flabels)?;
    let fdim = kept.len();

    // proj: eliminate pivot coordinates using the reduced relations, keep the rest.
    let mut proj_ff = F2Matrix::zero(fdim, dim);
    for (rr, &c) in kept.iter().enumerate() {
        proj_ff.set(rr, c, true);
    }
    for (pi, &pc) in pivots.iter().enumerate() {
        // x_pc is congruent to the sum of the non-pivot entries of relation pi.
        for (rr, &c) in kept.iter().enumerate() {
            if rows[pi][c] {
                let v0 = proj_ff.get(rr, pc);
                proj_ff.set(rr, pc, v0 ^ true);
            }
        }
    }
    let mut lift_f = IntMatrix::zero(dim, fdim);
    for (cc, &c) in kept.iter().enumerate() {
        lift_f.set(c, cc, 1);
    }
    let maps = QuotientMaps {
        proj_zz: IntMatrix::zero(0, 0),
        proj_zf: F2Matrix::zero(0, 0),
        proj_ff,
        lift_z: IntMatrix::zero(dim, 0),
        lift_f,
        source_pure_z: false,
    };

    let mut action_maps = BTreeMap::new();
    for (i, j) in v.action.pairs() {
        let mk = |old: &MixedMap| -> MixedMap {
            let mut ff = Vec::with_capacity(fdim);
            for c in 0..fdim {
                let mut e = DenseElt::zero(0, fdim);
                e.f[c] = true;
                let img = maps.project(&old.apply(&maps.lift(&e)));
                ff.push(img.f.iter().enumerate().filter(|&(_, &b)| b).map(|(r, _)| r).collect());
            }
            MixedMap::from_columns(0, fdim, Vec::new(), Vec::new(), ff)
        };
        let fwd = mk(v.action.e_map(i, j, 1)?);
        let back = mk(v.action.e_map(i, j, -1)?);
        action_maps.insert((i, j), (fwd, back));
    }

    let mut pieces: BTreeMap<IndexSet, Vec<ModuleElement>> = BTreeMap::new();
    for (&k, gens) in &v.grading.pieces {
        let mut out = Vec::new();
        for g in gens {
            let d = v.module.dense(g)?;
            out.push(module.sparse(&maps.project(&d)));
        }
        pieces.insert(k, out);
    }
    Ok(Quotient {
        module: RegularModule {
            module,
            grading: NGrading::new(v.n(), pieces),
            action: ElementaryAction::new(v.n(), action_maps),
        },
        maps,
    })
}

/// Smallest subgroup containing `gens` and stable under every `E_ij^{+-1}`.
pub fn invariant_closure(
    v: &RegularModule,
    gens: &[ModuleElement],
) -> Result<Vec<ModuleElement>, RegError> {
    let mut basis: Vec<DenseElt> = Vec::new();
    for g in gens {
        let d = v.module.dense(g)?;
        if !d.is_zero() && !mixed_span_contains(&basis, &d) {
            basis.push(d);
        }
    }
    let mut frontier = basis.clone();
    while !frontier.is_empty() {
        let mut next = Vec::new();
        for (i, j) in v.action.pairs() {
            for exp in [1, -1] {
                let m = v.action.e_map(i, j, exp)?;
                for x in &frontier {
                    let img = m.apply(x);
                    if !mixed_span_contains(&basis, &img) {
                        basis.push(img.clone());
                        next.push(img);
                    }
                }
            }
        }
        frontier = next;
    }
    Ok(basis.iter().map(|d| v.module.sparse(d)).collect())
}

// ---------------------------------------------------------------------------
// Regularity checker
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RegularityViolation {
    pub condition: u8,
    pub piece: String,
    pub i: u8,
    pub j: u8,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RegularityReport {
    pub degree: usize,
    pub violations: Vec<RegularityViolation>,
}

impl RegularityReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Verify the three regularity conditions on the grading generators. The
/// report lists every violated triple in a deterministic order. Condition (2)
/// is only required for `i` in `I`, `j` outside; pairs with both indices in
/// `I` are unconstrained.
pub fn check_regular(m: &RegularModule) -> Result<RegularityReport, RegError> {
    let n = m.n();
    let mut violations = Vec::new();
    let keys = m.grading.keys_lex();

    for &key in &keys {
        let gens = m.grading.gens(key);
        let dense: Vec<DenseElt> =
            gens.iter().map(|g| m.module.dense(g)).collect::<Result<_, _>>()?;

        // (1) E_ij trivial when I and {i,j} are disjoint.
        for i in 1..=n {
            for j in 1..=n {
                if i == j || set_contains(key, i) || set_contains(key, j) {
                    continue;
                }
                let map = m.action.e_map(i, j, 1)?;
                for (gi, g) in dense.iter().enumerate() {
                    if &map.apply(g) != g {
                        violations.push(RegularityViolation {
                            condition: 1,
                            piece: set_to_string(key),
                            i,
                            j,
                            detail: format!("E_{{{i},{j}}} moves generator {gi}"),
                        });
                    }
                }
            }
        }

        // (2) gv - v lands in V^{I u {j} \ {i}} + V^{I u {j}}.
        for i in set_to_vec(key) {
            for j in 1..=n {
                if set_contains(key, j) {
                    continue;
                }
                let moved = key & !(1 << (i - 1)) | (1 << (j - 1));
                let grown = key | (1 << (j - 1));
                let mut target = m.piece_gens_dense(moved);
                target.extend(m.piece_gens_dense(grown));
                for (a, b, exp) in [(i, j, 1), (i, j, -1), (j, i, 1), (j, i, -1)] {
                    let map = m.action.e_map(a, b, exp)?;
                    for (gi, g) in dense.iter().enumerate() {
                        let diff = map.apply(g).sub(g);
                        if !mixed_span_contains(&target, &diff) {
                            violations.push(RegularityViolation {
                                condition: 2,
                                piece: set_to_string(key),
                                i,
                                j,
                                detail: format!(
                                    "E_{{{a},{b}}}^{exp} on generator {gi} leaves the allowed pieces"
                                ),
                            });
                        }
                    }
                }
            }
        }
    }

    // (3) F_ij V^I = V^{(i,j)I}, checked as two inclusions on generators.
    let mut every: Vec<IndexSet> = keys.clone();
    for &key in &keys {
        for i in 1..=n {
            for j in i + 1..=n {
                let t = set_transpose(key, i, j);
                if !every.contains(&t) {
                    every.push(t);
                }
            }
        }
    }
    every.sort_by(|&a, &b| set_lex_cmp(a, b));
    for &key in &every {
        for i in 1..=n {
            for j in i + 1..=n {
                let t = set_transpose(key, i, j);
                let fwd = m.action.letter_map(&Letter::f(i, j))?;
                let back = m.action.letter_map(&Letter::f(i, j).inverse())?;
                let src = m.piece_gens_dense(key);
                let dst = m.piece_gens_dense(t);
                for (gi, g) in src.iter().enumerate() {
                    if !mixed_span_contains(&dst, &fwd.apply(g)) {
                        violations.push(RegularityViolation {
                            condition: 3,
                            piece: set_to_string(key),
                            i,
                            j,
                            detail: format!("F_{{{i},{j}}} image of generator {gi} not in piece {}", set_to_string(t)),
                        });
                    }
                }
                for (gi, g) in dst.iter().enumerate() {
                    if !mixed_span_contains(&src, &back.apply(g)) {
                        violations.push(RegularityViolation {
                            condition: 3,
                            piece: set_to_string(key),
                            i,
                            j,
                            detail: format!("F_{{{i},{j}}}^-1 image of generator {gi} of piece {} not in piece", set_to_string(t)),
                        });
                    }
                }
            }
        }
    }

    Ok(RegularityReport { degree: m.degree(), violations })
}

// ---------------------------------------------------------------------------
// Word actions
// ---------------------------------------------------------------------------

/// Apply a word to a module element, letters acting left to right.
pub fn apply_word(
    word: &GroupWord,
    x: &ModuleElement,
    m: &RegularModule,
) -> Result<ModuleElement, RegError> {
    let mut cur = m.module.dense(x)?;
    for l in &word.0 {
        cur = m.action.letter_map(l)?.apply(&cur);
    }
    Ok(m.module.sparse(&cur))
}

/// Apply one letter to a character: `(g lambda)(x) = lambda(g^-1 x)`.
fn apply_letter_to_char(l: &Letter, lam: &Character, m: &RegularModule) -> Result<Character, RegError> {
    let inv = m.action.letter_map(&l.inverse())?;
    let mut values: BTreeMap<String, TargetElement> = BTreeMap::new();
    for (c, label) in m.module.zbasis().iter().enumerate() {
        let mut acc = lam.target.zero_elt();
        for &(r, v) in inv.zz_column(c) {
            acc = lam.target.add(&acc, &lam.target.scale(&lam.value(&m.module.zbasis()[r]), v));
        }
        for &r in inv.zf_column(c) {
            acc = lam.target.add(&acc, &lam.value(&m.module.f2basis()[r]));
        }
        if !acc.is_zero() {
            values.insert(label.clone(), acc);
        }
    }
    for (c, label) in m.module.f2basis().iter().enumerate() {
        let mut acc = lam.target.zero_elt();
        for &r in inv.ff_column(c) {
            acc = lam.target.add(&acc, &lam.value(&m.module.f2basis()[r]));
        }
        if !acc.is_zero() {
            values.insert(label.clone(), acc);
        }
    }
    Ok(lam.with_values(values))
}

/// Apply a word to a character (left to right), returning the moved character.
pub fn apply_word_to_char(
    word: &GroupWord,
    lam: &Character,
    m: &RegularModule,
) -> Result<Character, RegError> {
    let mut cur = lam.clone();
    for l in &word.0 {
        cur = apply_letter_to_char(l, &cur, m)?;
    }
    Ok(cur)
}

/// Evaluate a moved character on an element without materializing it:
/// `(word lambda)(x) = lambda(word^-1 x)`.
pub fn eval_word_char(
    word: &GroupWord,
    lam: &Character,
    x: &ModuleElement,
    m: &RegularModule,
) -> Result<TargetElement, RegError> {
    let moved = apply_word(&word.inverse(), x, m)?;
    Ok(char_eval(lam, &moved)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exactalg::FgAbelianTarget;

    #[test]
    fn standard_action_matches_elementary_rule() {
        let std3 = standard_module(3).unwrap();
        let e2 = ModuleElement::from_z(&[("e:2", 1)]);
        let out = apply_word(&GroupWord(vec![Letter::e(1, 2)]), &e2, &std3).unwrap();
        assert_eq!(out, ModuleElement::from_z(&[("e:1", 1), ("e:2", 1)]));
        // Untouched coordinate.
        let e3 = ModuleElement::from_z(&[("e:3", 1)]);
        let out = apply_word(&GroupWord(vec![Letter::e(1, 2)]), &e3, &std3).unwrap();
        assert_eq!(out, e3);
    }

    #[test]
    fn dual_action_matches_elementary_rule() {
        let d3 = dual_module(3).unwrap();
        let e1s = ModuleElement::from_z(&[("e*:1", 1)]);
        let out = apply_word(&GroupWord(vec![Letter::e(1, 2)]), &e1s, &d3).unwrap();
        assert_eq!(out, ModuleElement::from_z(&[("e*:1", 1), ("e*:2", -1)]));
    }

    #[test]
    fn word_inverse_cancels() {
        let std3 = standard_module(3).unwrap();
        let x = ModuleElement::from_z(&[("e:1", 2), ("e:2", -3), ("e:3", 5)]);
        let w = GroupWord(vec![Letter::e(1, 2), Letter::e(1, 2).inverse()]);
        assert_eq!(apply_word(&w, &x, &std3).unwrap(), x);
        let empty = GroupWord::identity();
        assert_eq!(apply_word(&empty, &x, &std3).unwrap(), x);
    }

    #[test]
    fn word_concatenation_convention() {
        // apply(w1.w2, x) = apply(w2, apply(w1, x))
        let std3 = standard_module(3).unwrap();
        let x = ModuleElement::from_z(&[("e:2", 1), ("e:3", 4)]);
        let w1 = GroupWord(vec![Letter::e(1, 2)]);
        let w2 = GroupWord(vec![Letter::e(2, 3), Letter::f(1, 3)]);
        let both = apply_word(&w1.then(&w2), &x, &std3).unwrap();
        let stepwise = apply_word(&w2, &apply_word(&w1, &x, &std3).unwrap(), &std3).unwrap();
        assert_eq!(both, stepwise);
    }

    #[test]
    fn f_letter_is_composite_and_signs_match() {
        // F_ij = E_ij E_ji^-1 E_ij sends e_i -> -e_j and e_j -> e_i.
        let std3 = standard_module(3).unwrap();
        let f12 = GroupWord(vec![Letter::f(1, 2)]);
        let e1 = ModuleElement::from_z(&[("e:1", 1)]);
        let e2 = ModuleElement::from_z(&[("e:2", 1)]);
        assert_eq!(apply_word(&f12, &e1, &std3).unwrap(), ModuleElement::from_z(&[("e:2", -1)]));
        assert_eq!(apply_word(&f12, &e2, &std3).unwrap(), ModuleElement::from_z(&[("e:1", 1)]));
    }

    #[test]
    fn builtin_modules_are_regular_of_degree_one() {
        for m in [standard_module(3).unwrap(), dual_module(4).unwrap()] {
            let report = check_regular(&m).unwrap();
            assert!(report.passed(), "{:?}", report.violations);
            assert_eq!(report.degree, 1);
            assert!(m.grading_complete());
            assert!(m.action.verify_invertible());
        }
    }

    #[test]
    fn sum_and_tensor_degrees() {
        let s = standard_module(4).unwrap();
        let d = dual_module(4).unwrap();
        let sum = direct_sum(&s, &d).unwrap();
        assert_eq!(sum.degree(), 1);
        assert!(check_regular(&sum).unwrap().passed());

        let t = tensor(&d, &s).unwrap();
        assert!(t.degree() <= 2);
        assert!(check_regular(&t).unwrap().passed());
        assert!(t.grading_complete());
    }

    #[test]
    fn tensor_piece_contents() {
        let s = standard_module(3).unwrap();
        let t = tensor(&s, &s).unwrap();
        let gens = t.grading.gens(set_from(&[1, 2]));
        let l12 = tensor_label("e:1", "e:2");
        let l21 = tensor_label("e:2", "e:1");
        assert!(gens.iter().any(|g| g.z.contains_key(&l12)));
        assert!(gens.iter().any(|g| g.z.contains_key(&l21)));
    }

    fn wedge2(n: u8) -> Quotient {
        let s = standard_module(n).unwrap();
        let t = tensor(&s, &s).unwrap();
        let mut rels = Vec::new();
        for i in 1..=n {
            let l = tensor_label(&format!("e:{i}"), &format!("e:{i}"));
            rels.push(ModuleElement::from_z(&[(&l, 1)]));
        }
        for i in 1..=n {
            for j in i + 1..=n {
                let a = tensor_label(&format!("e:{i}"), &format!("e:{j}"));
                let b = tensor_label(&format!("e:{j}"), &format!("e:{i}"));
                rels.push(ModuleElement::from_z(&[(&a, 1), (&b, 1)]));
            }
        }
        quotient_with_maps(&t, &rels).unwrap()
    }

    #[test]
    fn wedge_square_quotient_is_regular() {
        let q = wedge2(4);
        assert_eq!(q.module.module.zrank(), 6);
        let report = check_regular(&q.module).unwrap();
        assert!(report.passed(), "{:?}", report.violations);
        assert!(report.degree <= 2);
        assert!(q.module.grading_complete());
    }

    #[test]
    fn quotient_edge_cases() {
        let s = standard_module(3).unwrap();
        // Empty relations give the module back (up to relabeling).
        let q = quotient(&s, &[]).unwrap();
        assert_eq!(q.module.zrank(), 3);
        assert!(check_regular(&q).unwrap().passed());
        // Quotient by the whole module is zero of degree 0.
        let all: Vec<ModuleElement> =
            (1..=3).map(|i| ModuleElement::from_z(&[(&format!("e:{i}"), 1)])).collect();
        let q = quotient(&s, &all).unwrap();
        assert_eq!(q.module.zrank(), 0);
        assert_eq!(q.degree(), 0);
    }

    #[test]
    fn quotient_rejects_non_invariant_relations() {
        let s = standard_module(3).unwrap();
        // Z e_1 is not invariant under E_21 (e_1 -> e_1 + e_2).
        let rels = vec![ModuleElement::from_z(&[("e:1", 1)])];
        assert!(matches!(quotient(&s, &rels), Err(RegError::NotInvariant(_))));
    }

    #[test]
    fn quotient_with_two_torsion() {
        // std(2) / 2 std(2) is pure F2 with the mod-2 action.
        let s = standard_module(2).unwrap();
        let rels: Vec<ModuleElement> =
            (1..=2).map(|i| ModuleElement::from_z(&[(&format!("e:{i}"), 2)])).collect();
        let q = quotient(&s, &rels).unwrap();
        assert_eq!(q.module.zrank(), 0);
        assert_eq!(q.module.f2dim(), 2);
        assert!(check_regular(&q).unwrap().passed());
    }

    #[test]
    fn misgraded_module_fails_condition_three() {
        // Put every generator of std(4) in the piece {1}: F_12 must move it.
        let s = standard_module(4).unwrap();
        let mut pieces = BTreeMap::new();
        pieces.insert(
            set_from(&[1]),
            (1..=4).map(|i| ModuleElement::from_z(&[(&format!("e:{i}"), 1)])).collect::<Vec<_>>(),
        );
        let bad = RegularModule {
            module: s.module.clone(),
            grading: NGrading::new(4, pieces),
            action: s.action.clone(),
        };
        let report = check_regular(&bad).unwrap();
        assert!(report.violations.iter().any(|v| v.condition == 3));
    }

    #[test]
    fn commuting_tensor_square_quotient_has_degree_one() {
        // V = std(4) (+) dual(4); kill the invariant closure of all products of
        // generators from disjoint pieces. What survives is spanned by the
        // diagonal classes, a module of degree 1 (the sharper bound m(d-1)+1
        // with m = 2, d = 1 rather than md = 2).
        let v = direct_sum(&standard_module(4).unwrap(), &dual_module(4).unwrap()).unwrap();
        let t = tensor(&v, &v).unwrap();
        let mut seed = Vec::new();
        for (&i1, g1) in &v.grading.pieces {
            for (&i2, g2) in &v.grading.pieces {
                if i1 & i2 == 0 {
                    for x in g1 {
                        for y in g2 {
                            let mut prod = ModuleElement::zero();
                            for (a, &ca) in &x.z {
                                for (b, &cb) in &y.z {
                                    prod.z.insert(tensor_label(a, b), imul(ca, cb));
                                }
                            }
                            seed.push(prod);
                        }
                    }
                }
            }
        }
        let closure = invariant_closure(&t, &seed).unwrap();
        let q = quotient(&t, &closure).unwrap();
        assert!(q.module.zrank() > 0, "quotient should not collapse entirely");
        let report = check_regular(&q).unwrap();
        assert!(report.passed(), "{:?}", report.violations);
        assert_eq!(report.degree, 1);
    }

    #[test]
    fn apply_word_to_char_matches_pointwise_rule() {
        let std3 = standard_module(3).unwrap();
        let target = FgAbelianTarget::free(1);
        let mut values = BTreeMap::new();
        values.insert("e:1".to_string(), target.element(vec![2], vec![]).unwrap());
        values.insert("e:2".to_string(), target.element(vec![5], vec![]).unwrap());
        let lam = Character::new(std3.module.clone(), target.clone(), values).unwrap();
        let w = GroupWord(vec![Letter::e(1, 2), Letter::f(2, 3)]);
        let moved = apply_word_to_char(&w, &lam, &std3).unwrap();
        for label in ["e:1", "e:2", "e:3"] {
            let x = ModuleElement::from_z(&[(label, 1)]);
            let lhs = char_eval(&moved, &x).unwrap();
            let rhs = eval_word_char(&w, &lam, &x, &std3).unwrap();
            assert_eq!(lhs, rhs, "label {label}");
        }
        // Empty word returns the character unchanged.
        let same = apply_word_to_char(&GroupWord::identity(), &lam, &std3).unwrap();
        assert_eq!(same.values(), lam.values());
    }

    #[test]
    fn letter_tokens_round_trip() {
        for l in [Letter::e(1, 2), Letter::e_inv(3, 1), Letter::f(2, 4), Letter::f(2, 4).inverse()] {
            assert_eq!(Letter::parse(&l.token()).unwrap(), l);
        }
        assert!(Letter::parse("E:1,1").is_err());
        assert!(Letter::parse("G:1,2").is_err());
    }
}
