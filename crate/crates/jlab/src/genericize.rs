//! Character supports, the disjointness potential and its hill-climb,
//! interval packing, and coefficient genericization.
//!
//! The potential of an s-tuple of support sets is
//! `D(I_1..I_s) = sum |I_i| - sum_{i != j} |I_i n I_j|` (ordered pairs, each
//! unordered intersection counted twice). The hill-climb moves a character
//! through its orbit until a maximally disjoint tuple is either pairwise
//! disjoint or covers `{1..n}`; each applied move strictly increases the
//! maximum potential, which bounds the number of rounds.

use crate::exactalg::{char_eval, mixed_span_contains, Character, ExactError, TargetElement};
use crate::exactalg::ModuleElement;
use crate::ia_ab::{coeff, IaError};
use crate::regmod::{
    apply_word_to_char, set_contains, set_lex_cmp, set_size, set_to_vec, GroupWord, IndexSet,
    Letter, RegError, RegularModule,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GenError {
    #[error("character is zero")]
    ZeroCharacter,
    #[error("support is empty")]
    EmptySupport,
    #[error("n = {0} is too small (need at least {1})")]
    TooSmallN(u8, u8),
    #[error("r = {0} is too small (need at least 2)")]
    TooSmallR(u8),
    #[error("packing precondition violated: {0}")]
    PackPrecondition(String),
    #[error("internal inconsistency (would contradict the climbing guarantee): {0}")]
    InternalInconsistency(String),
    #[error("bounded search failed to reach the stated postcondition: {0}")]
    NotFound(String),
    #[error(transparent)]
    Reg(#[from] RegError),
    #[error(transparent)]
    Exact(#[from] ExactError),
    #[error(transparent)]
    Ia(#[from] IaError),
}

// ---------------------------------------------------------------------------
// Supports and the potential
// ---------------------------------------------------------------------------

/// All grading index sets on which the character does not vanish, in
/// lexicographic order. By additivity this is exactly nonvanishing on some
/// generator of the piece.
pub fn support(lam: &Character, m: &RegularModule) -> Result<Vec<IndexSet>, GenError> {
    let mut out = Vec::new();
    for (&key, gens) in &m.grading.pieces {
        for g in gens {
            if !char_eval(lam, g)?.is_zero() {
                out.push(key);
                break;
            }
        }
    }
    out.sort_by(|&a, &b| set_lex_cmp(a, b));
    Ok(out)
}

/// `D(I_1..I_s)` with the ordered-pair convention.
pub fn d_value(tuple: &[IndexSet]) -> i64 {
    let mut v: i64 = tuple.iter().map(|&s| set_size(s) as i64).sum();
    for a in 0..tuple.len() {
        for b in a + 1..tuple.len() {
            v -= 2 * set_size(tuple[a] & tuple[b]) as i64;
        }
    }
    v
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DTupleResult {
    pub tuple: Vec<IndexSet>,
    pub value: i64,
}

impl DTupleResult {
    pub fn is_disjoint(&self) -> bool {
        for a in 0..self.tuple.len() {
            for b in a + 1..self.tuple.len() {
                if self.tuple[a] & self.tuple[b] != 0 {
                    return false;
                }
            }
        }
        true
    }

    pub fn union(&self) -> IndexSet {
        self.tuple.iter().fold(0, |acc, &s| acc | s)
    }
}

/// Maximally disjoint s-tuple over the support (repetition allowed),
/// lexicographically least among the maximizers. Branch-and-bound over
/// non-decreasing tuples in the lexicographic candidate order.
pub fn max_disjoint_tuple(supp: &[IndexSet], s: usize) -> Result<DTupleResult, GenError> {
    if supp.is_empty() {
        return Err(GenError::EmptySupport);
    }
    let mut cands = supp.to_vec();
    cands.sort_by(|&a, &b| set_lex_cmp(a, b));
    cands.dedup();
    let sizes: Vec<i64> = cands.iter().map(|&c| set_size(c) as i64).collect();
    let mut suffix_max = vec![0i64; cands.len() + 1];
    for i in (0..cands.len()).rev() {
        suffix_max[i] = sizes[i].max(suffix_max[i + 1]);
    }

    struct Dfs<'a> {
        cands: &'a [IndexSet],
        sizes: &'a [i64],
        suffix_max: &'a [i64],
        s: usize,
        best: Option<(i64, Vec<usize>)>,
    }
    impl Dfs<'_> {
        fn run(&mut self, start: usize, chosen: &mut Vec<usize>, partial: i64) {
            if chosen.len() == self.s {
                if self.best.as_ref().map_or(true, |(bv, _)| partial > *bv) {
                    self.best = Some((partial, chosen.clone()));
                }
                return;
            }
            let remaining = (self.s - chosen.len()) as i64;
            for c in start..self.cands.len() {
                let bound = partial + self.sizes[c] + (remaining - 1) * self.suffix_max[c];
                if let Some((bv, _)) = &self.best {
                    if bound <= *bv {
                        // Candidates are in lexicographic order, so anything
                        // from here on is lex-later and cannot do better.
                        if self.suffix_max[c] >= self.suffix_max.get(c + 1).copied().unwrap_or(0) {
                            continue;
                        }
                        continue;
                    }
                }
                let mut add = self.sizes[c];
                for &p in chosen.iter() {
                    add -= 2 * set_size(self.cands[p] & self.cands[c]) as i64;
                }
                chosen.push(c);
                self.run(c, chosen, partial + add);
                chosen.pop();
            }
        }
    }
    let mut dfs = Dfs { cands: &cands, sizes: &sizes, suffix_max: &suffix_max, s, best: None };
    let mut chosen = Vec::new();
    dfs.run(0, &mut chosen, 0);
    let (value, idx) = dfs.best.expect("nonempty support yields a tuple");
    Ok(DTupleResult { tuple: idx.into_iter().map(|i| cands[i]).collect(), value })
}

// ---------------------------------------------------------------------------
// Hill-climb
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HillClimbRound {
    pub round: usize,
    pub tuple: Vec<Vec<u8>>,
    pub d_before: i64,
    pub i: u8,
    pub j: u8,
    pub prefix_len: usize,
    pub d_after: i64,
}

#[derive(Clone, Debug)]
pub struct HillClimbOutcome {
    pub word: GroupWord,
    pub mu: Character,
    pub tuple: Vec<IndexSet>,
    pub value: i64,
    pub disjoint: bool,
    pub covering: bool,
    pub trace: Vec<HillClimbRound>,
}

/// Move the character through its orbit until a maximally disjoint s-tuple is
/// pairwise disjoint or covers `{1..n}`. Non-terminal states always admit a
/// strictly improving prefix of `E_ij, E_ji^-1, E_ij` (the climbing
/// guarantee); its absence is reported as an internal inconsistency since it
/// would indicate a broken action table.
pub fn hillclimb(
    lam: &Character,
    m: &RegularModule,
    s: usize,
) -> Result<HillClimbOutcome, GenError> {
    if lam.is_zero() {
        return Err(GenError::ZeroCharacter);
    }
    let n = m.n();
    let full: IndexSet = if n == 32 { !0 } else { (1u32 << n) - 1 };
    let mut word = GroupWord::identity();
    let mut mu = lam.clone();
    let mut trace = Vec::new();
    let cap = 4 * s * m.degree() + 16;
    for round in 0..cap {
        let supp = support(&mu, m)?;
        let mdt = max_disjoint_tuple(&supp, s)?;
        if mdt.is_disjoint() || mdt.union() == full {
            return Ok(HillClimbOutcome {
                word,
                mu,
                disjoint: mdt.is_disjoint(),
                covering: mdt.union() == full,
                tuple: mdt.tuple,
                value: mdt.value,
                trace,
            });
        }
        // Least overlapping pair, least i in the intersection, least j outside
        // the union.
        let (p, q) = (0..mdt.tuple.len())
            .flat_map(|a| ((a + 1)..mdt.tuple.len()).map(move |b| (a, b)))
            .find(|&(a, b)| mdt.tuple[a] & mdt.tuple[b] != 0)
            .expect("non-disjoint tuple has an overlapping pair");
        let i = set_to_vec(mdt.tuple[p] & mdt.tuple[q])[0];
        let j = (1..=n)
            .find(|&x| !set_contains(mdt.union(), x))
            .expect("union is proper, some index is free");
        let moves =
            [Letter::e(i, j), Letter::e_inv(j, i), Letter::e(i, j)];
        let mut improved = false;
        let mut cur = mu.clone();
        for (plen, l) in moves.iter().enumerate() {
            cur = apply_word_to_char(&GroupWord(vec![*l]), &cur, m)?;
            let s2 = support(&cur, m)?;
            let v2 = max_disjoint_tuple(&s2, s)?.value;
            if v2 > mdt.value {
                for ll in &moves[..=plen] {
                    word.push(*ll);
                }
                trace.push(HillClimbRound {
                    round,
                    tuple: mdt.tuple.iter().map(|&t| set_to_vec(t)).collect(),
                    d_before: mdt.value,
                    i,
                    j,
                    prefix_len: plen + 1,
                    d_after: v2,
                });
                mu = cur;
                improved = true;
                break;
            }
        }
        if !improved {
            return Err(GenError::InternalInconsistency(format!(
                "no strictly improving prefix at round {round} (i={i}, j={j}, D={})",
                mdt.value
            )));
        }
    }
    Err(GenError::InternalInconsistency("improvement cap exceeded".into()))
}

// ---------------------------------------------------------------------------
// Interval packing
// ---------------------------------------------------------------------------

/// Certificate of genericity: after applying `word`, the moved character is
/// nonvanishing on the graded sum below each of the listed disjoint
/// consecutive intervals, as witnessed by the stored elements.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GenericCertificate {
    pub word: Vec<String>,
    pub intervals: Vec<Vec<u8>>,
    pub witnesses: Vec<ModuleElement>,
}

/// Word of `F` letters realizing a permutation on supports (application
/// order). The permutation is decomposed by fixing `1, 2, ...` in turn.
pub fn permutation_word(sigma: &[u8]) -> GroupWord {
    let mut rho: Vec<u8> = sigma.to_vec();
    let mut taus: Vec<(u8, u8)> = Vec::new();
    for x in 1..=(rho.len() as u8) {
        let y = rho[(x - 1) as usize];
        if y != x {
            taus.push((x.min(y), x.max(y)));
            for v in rho.iter_mut() {
                if *v == x {
                    *v = y;
                } else if *v == y {
                    *v = x;
                }
            }
        }
    }
    GroupWord(taus.into_iter().rev().map(|(a, b)| Letter::f(a, b)).collect())
}

/// Pack `d+1` disjoint support sets of size at most `M` into the consecutive
/// intervals `I_k = {(k-1)M+1, .., kM}` by a product of `F` letters, and
/// return witnesses re-evaluated under the moved character.
pub fn pack_intervals(
    mu: &Character,
    tuple: &[IndexSet],
    m: &RegularModule,
    d: usize,
    big_m: usize,
) -> Result<GenericCertificate, GenError> {
    let n = m.n() as usize;
    if tuple.len() != d + 1 {
        return Err(GenError::PackPrecondition(format!(
            "need d+1 = {} sets, got {}",
            d + 1,
            tuple.len()
        )));
    }
    for a in 0..tuple.len() {
        for b in a + 1..tuple.len() {
            if tuple[a] & tuple[b] != 0 {
                return Err(GenError::PackPrecondition("sets are not pairwise disjoint".into()));
            }
        }
    }
    if tuple.iter().any(|&t| set_size(t) > big_m) {
        return Err(GenError::PackPrecondition(format!("a set exceeds size M = {big_m}")));
    }
    if n < (d + 1) * big_m {
        return Err(GenError::PackPrecondition(format!(
            "n = {n} below (d+1)M = {}",
            (d + 1) * big_m
        )));
    }

    // sigma(J_k) fills the front of I_k; everything else keeps its order.
    let mut sigma = vec![0u8; n];
    let mut used_targets = vec![false; n];
    for (k, &jk) in tuple.iter().enumerate() {
        for (t, &x) in set_to_vec(jk).iter().enumerate() {
            let target = k * big_m + t + 1;
            sigma[(x - 1) as usize] = target as u8;
            used_targets[target - 1] = true;
        }
    }
    let mut rest_targets = (1..=n as u8).filter(|&t| !used_targets[(t - 1) as usize]);
    for x in 1..=n as u8 {
        if sigma[(x - 1) as usize] == 0 {
            sigma[(x - 1) as usize] = rest_targets.next().expect("targets and sources balance");
        }
    }
    let word = permutation_word(&sigma);
    let moved = apply_word_to_char(&word, mu, m)?;

    let mut intervals = Vec::new();
    let mut witnesses = Vec::new();
    for (k, &jk) in tuple.iter().enumerate() {
        let interval: Vec<u8> = (k * big_m + 1..=(k + 1) * big_m).map(|x| x as u8).collect();
        let target: IndexSet = set_to_vec(jk)
            .iter()
            .map(|&x| 1u32 << (sigma[(x - 1) as usize] - 1))
            .fold(0, |a, b| a | b);
        let witness = m
            .grading
            .gens(target)
            .iter()
            .find(|g| char_eval(&moved, g).map(|v| !v.is_zero()).unwrap_or(false))
            .cloned()
            .ok_or_else(|| {
                GenError::InternalInconsistency(format!(
                    "no nonvanishing witness in transported piece {:?}",
                    set_to_vec(target)
                ))
            })?;
        intervals.push(interval);
        witnesses.push(witness);
    }
    Ok(GenericCertificate { word: word.tokens(), intervals, witnesses })
}

/// Re-check a generic certificate against the character it was issued for:
/// intervals disjoint and consecutive, every witness inside the graded sum
/// below its interval, and the moved character nonzero on every witness.
pub fn verify_generic_certificate(
    cert: &GenericCertificate,
    mu: &Character,
    m: &RegularModule,
) -> Result<bool, GenError> {
    if cert.intervals.len() != cert.witnesses.len() {
        return Ok(false);
    }
    let mut seen: Vec<u8> = Vec::new();
    for iv in &cert.intervals {
        if iv.is_empty() || iv.windows(2).any(|w| w[1] != w[0] + 1) {
            return Ok(false);
        }
        for &x in iv {
            if seen.contains(&x) {
                return Ok(false);
            }
            seen.push(x);
        }
    }
    let word = GroupWord::parse_tokens(&cert.word)?;
    let moved = apply_word_to_char(&word, mu, m)?;
    for (iv, w) in cert.intervals.iter().zip(&cert.witnesses) {
        let mask: IndexSet = iv.iter().fold(0, |a, &x| a | (1u32 << (x - 1)));
        let mut gens = Vec::new();
        for (&key, pieces) in &m.grading.pieces {
            if key & !mask == 0 {
                for g in pieces {
                    gens.push(m.module.dense(g)?);
                }
            }
        }
        let wd = m.module.dense(w)?;
        if !mixed_span_contains(&gens, &wd) {
            return Ok(false);
        }
        if char_eval(&moved, w)?.is_zero() {
            return Ok(false);
        }
    }
    Ok(true)
}

// ---------------------------------------------------------------------------
// Threshold arithmetic
// ---------------------------------------------------------------------------

/// `M = 1 + m(d-1)` for weakly commuting data, `M = m d` otherwise.
pub fn compute_m(m: u64, d: u64, weakly_commuting: bool) -> u64 {
    if weakly_commuting {
        1 + m * (d - 1)
    } else {
        m * d
    }
}

/// Rank threshold: `d(d+1)(N-1)` in general, `(d+1) + (d^2-1)(N-1)` for
/// weakly commuting data.
pub fn threshold_n(d: u64, big_n: u64, weakly_commuting: bool) -> u64 {
    if weakly_commuting {
        (d + 1) + (d * d - 1) * (big_n - 1)
    } else {
        d * (d + 1) * (big_n - 1)
    }
}

/// `n >= (d+1) M(m)` for every nilpotency class `m <= N-1`.
pub fn admits_packing(n: u64, d: u64, big_n: u64, weakly_commuting: bool) -> bool {
    (1..big_n).all(|m| n >= (d + 1) * compute_m(m, d, weakly_commuting))
}

// ---------------------------------------------------------------------------
// Coefficient genericization on the kappa module
// ---------------------------------------------------------------------------

struct Mover<'a> {
    m: &'a RegularModule,
    word: GroupWord,
    mu: Character,
}

impl<'a> Mover<'a> {
    fn new(lam: &Character, m: &'a RegularModule) -> Self {
        Mover { m, word: GroupWord::identity(), mu: lam.clone() }
    }

    fn apply(&mut self, l: Letter) -> Result<(), GenError> {
        self.word.push(l);
        self.mu = apply_word_to_char(&GroupWord(vec![l]), &self.mu, self.m)?;
        Ok(())
    }

    fn c(&self, i: u8, j: u8, k: u8) -> Result<TargetElement, GenError> {
        Ok(coeff(&self.mu, i, j, k)?)
    }

    fn nz(&self, i: u8, j: u8, k: u8) -> Result<bool, GenError> {
        Ok(!self.c(i, j, k)?.is_zero())
    }

    /// Transposition word moving coefficient position `(a, b)` to `(p, q)`.
    fn move_pair(&mut self, a: u8, b: u8, p: u8, q: u8) -> Result<(), GenError> {
        let mut b = b;
        if a != p {
            self.apply(Letter::f(p.min(a), p.max(a)))?;
            if b == p {
                b = a;
            }
        }
        if b != q {
            self.apply(Letter::f(q.min(b), q.max(b)))?;
        }
        Ok(())
    }
}

/// Genericize so that `c_112, c_221, c_334, c_443` of the moved character are
/// all nonzero (`n >= 4`). Deterministic case analysis; every step is an
/// explicit letter application and the postcondition is audited on a fresh
/// evaluation path before returning.
pub fn lemkey4(lam: &Character, m: &RegularModule) -> Result<GroupWord, GenError> {
    let n = m.n();
    if n < 4 {
        return Err(GenError::TooSmallN(n, 4));
    }
    if lam.is_zero() {
        return Err(GenError::ZeroCharacter);
    }
    let mut mv = Mover::new(lam, m);

    // Step 1: make c_112 nonzero.
    'step1: {
        let mut first_xxy: Option<(u8, u8)> = None;
        for x in 1..=n {
            for y in 1..=n {
                if x != y && mv.nz(x, x, y)? {
                    first_xxy = Some((x, y));
                    break;
                }
            }
            if first_xxy.is_some() {
                break;
            }
        }
        let (a, b) = match first_xxy {
            Some(ab) => ab,
            None => {
                // All conjugation-type coefficients vanish, so some fully
                // distinct coefficient does not; fold it down with one E move.
                let mut found = None;
                'outer: for a in 1..=n {
                    for b in 1..=n {
                        for c in 1..=n {
                            if a != b && a != c && b != c && mv.nz(a, b, c)? {
                                found = Some((a, b, c));
                                break 'outer;
                            }
                        }
                    }
                }
                let Some((a, b, c)) = found else {
                    return Err(GenError::ZeroCharacter);
                };
                mv.apply(Letter::e(c, a))?;
                if !mv.nz(a, a, b)? {
                    return Err(GenError::InternalInconsistency("step 1 fold produced zero".into()));
                }
                (a, b)
            }
        };
        mv.move_pair(a, b, 1, 2)?;
        if !mv.nz(1, 1, 2)? {
            return Err(GenError::InternalInconsistency("step 1 move lost c_112".into()));
        }
        break 'step1;
    }

    // The goal of steps 2-4 may already hold.
    let mut second_alt = mv.nz(3, 3, 4)?;

    // Step 2: make c_113 nonzero as well.
    if !second_alt && !mv.nz(1, 1, 3)? {
        mv.apply(Letter::e(2, 3))?;
    }

    // Step 3: reach either (c_112, c_113, c_221) or (c_112, c_334) nonzero.
    if second_alt {
    } else if mv.nz(2, 2, 4)? {
        mv.apply(Letter::f(2, 3))?;
        second_alt = true;
    } else if mv.nz(2, 2, 1)? {
        // First alternative already holds.
    } else if mv.nz(2, 2, 3)? {
        mv.apply(Letter::e(3, 4))?;
        mv.apply(Letter::f(2, 3))?;
        second_alt = true;
    } else if !mv.nz(1, 2, 3)? {
        mv.apply(Letter::e(2, 1))?;
    } else {
        mv.apply(Letter::e(2, 1))?;
        mv.apply(Letter::f(1, 2))?;
    }

    // Step 4: reach (c_112, c_334) nonzero.
    if !second_alt {
        if mv.nz(4, 4, 3)? {
            mv.apply(Letter::f(3, 4))?;
        } else if mv.nz(2, 2, 4)? {
            mv.apply(Letter::f(2, 3))?;
        } else {
            let c413_zero = !mv.nz(4, 1, 3)?;
            mv.apply(Letter::e(1, 4))?;
            if c413_zero {
                mv.apply(Letter::f(2, 3))?;
            } else {
                mv.apply(Letter::f(1, 2))?;
                mv.apply(Letter::f(3, 4))?;
            }
        }
    }
    if !(mv.nz(1, 1, 2)? && mv.nz(3, 3, 4)?) {
        return Err(GenError::InternalInconsistency("step 4 postcondition failed".into()));
    }

    // Final step: fix c_221 and c_443 without disturbing the other two.
    if !mv.nz(2, 2, 1)? {
        mv.apply(Letter::e(2, 1))?;
    }
    if !mv.nz(4, 4, 3)? {
        mv.apply(Letter::e(4, 3))?;
    }

    // Postcondition audit on a fresh evaluation path.
    let audited = apply_word_to_char(&mv.word, lam, m)?;
    for (i, j, k) in [(1, 1, 2), (2, 2, 1), (3, 3, 4), (4, 4, 3)] {
        if coeff(&audited, i, j, k)?.is_zero() {
            return Err(GenError::InternalInconsistency(format!(
                "audit: c_{i}{j}{k} is zero after genericization"
            )));
        }
    }
    Ok(mv.word)
}

/// Postcondition of [`lemkey5`]: `c_{2i-1,2i-1,2i}` and `c_{2i,2i,2i-1}`
/// nonzero for all `i <= r`.
pub fn pairs_generic(lam: &Character, r: u8) -> Result<bool, GenError> {
    for t in 1..=r {
        let (p, q) = (2 * t - 1, 2 * t);
        if coeff(lam, p, p, q)?.is_zero() || coeff(lam, q, q, p)?.is_zero() {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Genericize so that both conjugation coefficients of each of the first `r`
/// index pairs are nonzero (`n >= 2r`). The strategy is search-based: climb
/// to `r` disjoint support sets, transport them onto the pairs `{2t-1, 2t}`
/// (third elements of 3-sets go to spare indices), then finish each pair with
/// moves confined to its own region; conversion and spreading moves handle
/// sparse supports, and the postcondition is always re-verified.
pub fn lemkey5(lam: &Character, r: u8, m: &RegularModule) -> Result<GroupWord, GenError> {
    let n = m.n();
    if r < 2 {
        return Err(GenError::TooSmallR(r));
    }
    if n < 2 * r {
        return Err(GenError::TooSmallN(n, 2 * r));
    }
    if lam.is_zero() {
        return Err(GenError::ZeroCharacter);
    }
    let mut mv = Mover::new(lam, m);
    let cap = 64 + 8 * (r as usize) * (n as usize);
    for _round in 0..cap {
        if pairs_generic(&mv.mu, r)? {
            let audited = apply_word_to_char(&mv.word, lam, m)?;
            if !pairs_generic(&audited, r)? {
                return Err(GenError::InternalInconsistency("pairs audit failed".into()));
            }
            return Ok(mv.word);
        }
        let supp = support(&mv.mu, m)?;
        let mdt = max_disjoint_tuple(&supp, r as usize)?;
        if mdt.is_disjoint() {
            place_and_finish(&mut mv, &mdt.tuple, r)?;
            continue;
        }
        let full: IndexSet = (1u32 << n) - 1;
        if mdt.union() != full {
            // Ordinary climbing move.
            let (p, q) = (0..mdt.tuple.len())
                .flat_map(|a| ((a + 1)..mdt.tuple.len()).map(move |b| (a, b)))
                .find(|&(a, b)| mdt.tuple[a] & mdt.tuple[b] != 0)
                .expect("non-disjoint tuple has an overlapping pair");
            let i = set_to_vec(mdt.tuple[p] & mdt.tuple[q])[0];
            let j = (1..=n).find(|&x| !set_contains(mdt.union(), x)).expect("proper union");
            let mut cur = mv.mu.clone();
            let mut applied = false;
            let moves = [Letter::e(i, j), Letter::e_inv(j, i), Letter::e(i, j)];
            for (plen, l) in moves.iter().enumerate() {
                cur = apply_word_to_char(&GroupWord(vec![*l]), &cur, m)?;
                let v2 = max_disjoint_tuple(&support(&cur, m)?, r as usize)?.value;
                if v2 > mdt.value {
                    for ll in &moves[..=plen] {
                        mv.apply(*ll)?;
                    }
                    applied = true;
                    break;
                }
            }
            if applied {
                continue;
            }
            return Err(GenError::InternalInconsistency("no improving prefix".into()));
        }
        // Stuck covering state: convert a 3-set support into a pair support,
        // or spread support with the first letter that creates a new set.
        if let Some(&t3) = supp.iter().find(|&&t| set_size(t) == 3) {
            let v = set_to_vec(t3);
            let mut done = false;
            'conv: for &i0 in &v {
                for &j0 in &v {
                    for &k0 in &v {
                        if i0 == j0 || i0 == k0 || j0 == k0 || j0 > k0 {
                            continue;
                        }
                        if mv.nz(i0, j0, k0)? && !mv.nz(i0, i0, j0)? {
                            mv.apply(Letter::e(k0, i0))?;
                            done = true;
                            break 'conv;
                        }
                    }
                }
            }
            if done {
                continue;
            }
        }
        let mut spread = false;
        'spread: for a in 1..=n {
            for b in 1..=n {
                if a == b {
                    continue;
                }
                for exp in [1i8, -1] {
                    let l = Letter { kind: crate::regmod::LetterKind::E, i: a, j: b, exp };
                    let cur = apply_word_to_char(&GroupWord(vec![l]), &mv.mu, m)?;
                    let s2 = support(&cur, m)?;
                    if s2.iter().any(|t| !supp.contains(t)) {
                        mv.apply(l)?;
                        spread = true;
                        break 'spread;
                    }
                }
            }
        }
        if !spread {
            return Err(GenError::NotFound(
                "no conversion or spreading move available from the stuck state".into(),
            ));
        }
    }
    Err(GenError::NotFound(format!("iteration cap {cap} reached")))
}

/// Transport `r` disjoint support sets onto the index pairs and make both
/// conjugation coefficients of each pair nonzero with region-local moves.
fn place_and_finish(mv: &mut Mover<'_>, tuple: &[IndexSet], r: u8) -> Result<(), GenError> {
    let n = mv.m.n() as usize;
    // sigma: two least elements of each set onto the pair slots, extras onto
    // spare slots beyond 2r, the rest order preserving.
    let mut sigma = vec![0u8; n];
    let mut used = vec![false; n];
    let mut extras: Vec<(usize, u8)> = Vec::new();
    for (k, &jk) in tuple.iter().enumerate() {
        let v = set_to_vec(jk);
        for (t, &x) in v.iter().take(2).enumerate() {
            let target = 2 * k + t + 1;
            sigma[(x - 1) as usize] = target as u8;
            used[target - 1] = true;
        }
        if v.len() > 2 {
            extras.push((k, v[2]));
        }
    }
    let spare: Vec<u8> =
        (2 * r as usize + 1..=n).map(|t| t as u8).filter(|&t| !used[(t - 1) as usize]).collect();
    let mut spare = spare.into_iter();
    let mut extra_of: Vec<Option<u8>> = vec![None; tuple.len()];
    for (k, x) in extras {
        let target = spare.next().ok_or_else(|| {
            GenError::InternalInconsistency("disjoint sets always fit beside the pairs".into())
        })?;
        sigma[(x - 1) as usize] = target;
        used[(target - 1) as usize] = true;
        extra_of[k] = Some(target);
    }
    let mut rest = (1..=n as u8).filter(|&t| !used[(t - 1) as usize]);
    for x in 1..=n as u8 {
        if sigma[(x - 1) as usize] == 0 {
            sigma[(x - 1) as usize] = rest.next().expect("sources and targets balance");
        }
    }
    for l in permutation_word(&sigma).0 {
        mv.apply(l)?;
    }

    for (k, _) in tuple.iter().enumerate() {
        let p = (2 * k + 1) as u8;
        let q = (2 * k + 2) as u8;
        finish_region(mv, p, q, extra_of[k])?;
    }
    Ok(())
}

/// Make `c_ppq` and `c_qqp` nonzero using only moves inside
/// `{p, q} u extra`; support on the transported piece is guaranteed.
fn finish_region(mv: &mut Mover<'_>, p: u8, q: u8, extra: Option<u8>) -> Result<(), GenError> {
    let region: Vec<u8> = match extra {
        Some(x) => vec![p, q, x],
        None => vec![p, q],
    };
    if !mv.nz(p, p, q)? {
        // Find a conjugation-type coefficient inside the region, folding a
        // fully distinct one down with an E move first if necessary.
        let mut pair_at: Option<(u8, u8)> = None;
        for &a in &region {
            for &b in &region {
                if a != b && mv.nz(a, a, b)? {
                    pair_at = Some((a, b));
                    break;
                }
            }
            if pair_at.is_some() {
                break;
            }
        }
        if pair_at.is_none() {
            if let Some(x) = extra {
                let mut found = None;
                'outer: for &a in &region {
                    for &b in &region {
                        for &c in &region {
                            if a != b && a != c && b != c && b < c && mv.nz(a, b, c)? {
                                found = Some((a, b, c));
                                break 'outer;
                            }
                        }
                    }
                }
                let Some((a, b, c)) = found else {
                    return Err(GenError::InternalInconsistency(format!(
                        "transported support lost in region ({p},{q},{x})"
                    )));
                };
                // All c_yyz vanish here, so the fold cannot cancel.
                mv.apply(Letter::e(c, a))?;
                pair_at = Some((a, b));
            } else {
                return Err(GenError::InternalInconsistency(format!(
                    "transported support lost in region ({p},{q})"
                )));
            }
        }
        let (a, b) = pair_at.expect("found or folded above");
        if (a, b) != (p, q) {
            mv.move_pair(a, b, p, q)?;
        }
        if !mv.nz(p, p, q)? {
            return Err(GenError::InternalInconsistency(format!(
                "region ({p},{q}) move lost its coefficient"
            )));
        }
    }
    if !mv.nz(q, q, p)? {
        mv.apply(Letter::e(q, p))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exactalg::FgAbelianTarget;
    use crate::ia_ab::ia_ab_module;
    use crate::regmod::set_from;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    fn dual_char(m: &RegularModule, labels: &[&str]) -> Character {
        let target = FgAbelianTarget::free(1);
        let mut values = BTreeMap::new();
        for l in labels {
            values.insert(l.to_string(), target.element(vec![1], vec![]).unwrap());
        }
        Character::new(m.module.clone(), target, values).unwrap()
    }

    #[test]
    fn support_examples() {
        let m = ia_ab_module(4).unwrap();
        let zero = Character::zero(m.module.clone(), FgAbelianTarget::free(1));
        assert!(support(&zero, &m).unwrap().is_empty());
        let lam = dual_char(&m, &["k:1,1,2"]);
        assert_eq!(support(&lam, &m).unwrap(), vec![set_from(&[1, 2])]);
        let lam = dual_char(&m, &["k:1,2,3", "k:1,1,2"]);
        assert_eq!(
            support(&lam, &m).unwrap(),
            vec![set_from(&[1, 2]), set_from(&[1, 2, 3])]
        );
    }

    #[test]
    fn d_value_examples() {
        assert_eq!(d_value(&[set_from(&[1, 2]), set_from(&[3, 4])]), 4);
        assert_eq!(d_value(&[set_from(&[1, 2]), set_from(&[2, 3])]), 2);
        assert_eq!(d_value(&[set_from(&[1, 2]), set_from(&[1, 2])]), 0);
    }

    #[test]
    fn max_disjoint_tuple_examples() {
        let supp = vec![set_from(&[1, 2]), set_from(&[3, 4])];
        let r = max_disjoint_tuple(&supp, 2).unwrap();
        assert_eq!(r.value, 4);
        assert!(r.is_disjoint());

        let supp = vec![set_from(&[1, 2])];
        let r = max_disjoint_tuple(&supp, 2).unwrap();
        assert_eq!(r.tuple, vec![set_from(&[1, 2]), set_from(&[1, 2])]);
        assert_eq!(r.value, 0);

        // Brute-force oracle over all 9 ordered pairs says the max is 4 and
        // the lex-least maximizer is ({1,2},{4,5}).
        let supp = vec![set_from(&[1, 2]), set_from(&[2, 3]), set_from(&[4, 5])];
        let mut best = i64::MIN;
        for &a in &supp {
            for &b in &supp {
                best = best.max(d_value(&[a, b]));
            }
        }
        assert_eq!(best, 4);
        let r = max_disjoint_tuple(&supp, 2).unwrap();
        assert_eq!(r.value, 4);
        assert_eq!(r.tuple, vec![set_from(&[1, 2]), set_from(&[4, 5])]);

        assert!(matches!(max_disjoint_tuple(&[], 2), Err(GenError::EmptySupport)));
    }

    #[test]
    fn hillclimb_trivial_when_already_disjoint() {
        let m = ia_ab_module(8).unwrap();
        let lam = dual_char(&m, &["k:1,1,2", "k:3,3,4", "k:5,5,6", "k:7,7,8"]);
        let out = hillclimb(&lam, &m, 4).unwrap();
        assert!(out.disjoint);
        assert!(out.word.0.is_empty());
        assert!(out.trace.is_empty());
        assert_eq!(out.value, 8);
    }

    #[test]
    fn hillclimb_reaches_dichotomy_from_single_triple() {
        let m = ia_ab_module(4).unwrap();
        let lam = dual_char(&m, &["k:1,2,3"]);
        let out = hillclimb(&lam, &m, 2).unwrap();
        assert!(out.disjoint || out.covering);
        // Postcondition re-verified independently.
        let supp = support(&out.mu, &m).unwrap();
        let re = max_disjoint_tuple(&supp, 2).unwrap();
        assert!(re.is_disjoint() || re.union() == 0b1111);
        for w in out.trace.windows(2) {
            assert!(w[1].d_before >= w[0].d_after);
        }
        for r in &out.trace {
            assert!(r.d_after > r.d_before);
        }
        assert!(matches!(
            hillclimb(&Character::zero(m.module.clone(), FgAbelianTarget::free(1)), &m, 2),
            Err(GenError::ZeroCharacter)
        ));
    }

    #[test]
    fn pack_intervals_formula_and_preconditions() {
        let m = ia_ab_module(12).unwrap();
        let lam = dual_char(&m, &["k:1,2,3", "k:4,5,6", "k:7,8,9", "k:10,11,12"]);
        let tuple = vec![
            set_from(&[1, 2, 3]),
            set_from(&[4, 5, 6]),
            set_from(&[7, 8, 9]),
            set_from(&[10, 11, 12]),
        ];
        let cert = pack_intervals(&lam, &tuple, &m, 3, 3).unwrap();
        assert_eq!(
            cert.intervals,
            vec![vec![1, 2, 3], vec![4, 5, 6], vec![7, 8, 9], vec![10, 11, 12]]
        );
        // Tuple already equals the intervals, so no letters are needed.
        assert!(cert.word.is_empty());
        assert!(verify_generic_certificate(&cert, &lam, &m).unwrap());

        // Disjointness violation is rejected.
        let bad = vec![set_from(&[1, 2, 3]), set_from(&[3, 4, 5]), set_from(&[7, 8, 9]), set_from(&[10, 11, 12])];
        assert!(matches!(pack_intervals(&lam, &bad, &m, 3, 3), Err(GenError::PackPrecondition(_))));
    }

    #[test]
    fn pack_intervals_moves_a_displaced_pair() {
        // J_1 = {2}: sigma = (1 2), the word is a single F letter and the
        // certificate survives re-evaluation.
        let m = ia_ab_module(4).unwrap();
        let lam = dual_char(&m, &["k:2,2,3"]);
        // {2,3} and {4} style sets do not fit this module's grading, so use a
        // two-interval packing with M = 2, d = 1: J_1 = {2,3}, J_2 = {1,4}.
        let lam2 = dual_char(&m, &["k:2,2,3", "k:1,1,4"]);
        let tuple = vec![set_from(&[2, 3]), set_from(&[1, 4])];
        let cert = pack_intervals(&lam2, &tuple, &m, 1, 2).unwrap();
        assert!(verify_generic_certificate(&cert, &lam2, &m).unwrap());
        drop(lam);
    }

    #[test]
    fn threshold_values() {
        assert_eq!(compute_m(1, 3, true), 3);
        assert_eq!(compute_m(1, 3, false), 3);
        assert_eq!(compute_m(2, 3, true), 5);
        assert_eq!(threshold_n(3, 2, true), 12);
        assert_eq!(threshold_n(3, 2, false), 12);
        for big_n in 2..=5u64 {
            assert_eq!(threshold_n(3, big_n, true), 8 * big_n - 4);
            assert!(admits_packing(threshold_n(3, big_n, true), 3, big_n, true));
            assert!(admits_packing(threshold_n(3, big_n, false), 3, big_n, false));
        }
    }

    #[test]
    fn lemkey4_on_dual_basis_characters() {
        let m = ia_ab_module(4).unwrap();
        // Already generic up to the final adjustments.
        let lam = dual_char(&m, &["k:1,1,2", "k:3,3,4"]);
        let w = lemkey4(&lam, &m).unwrap();
        let moved = apply_word_to_char(&w, &lam, &m).unwrap();
        for (i, j, k) in [(1u8, 1u8, 2u8), (2, 2, 1), (3, 3, 4), (4, 4, 3)] {
            assert!(!coeff(&moved, i, j, k).unwrap().is_zero());
        }
        // Only the two final-step letters are needed here.
        assert_eq!(w.0.len(), 2);

        // Single fully distinct coefficient.
        let lam = dual_char(&m, &["k:1,2,3"]);
        let w = lemkey4(&lam, &m).unwrap();
        let moved = apply_word_to_char(&w, &lam, &m).unwrap();
        for (i, j, k) in [(1u8, 1u8, 2u8), (2, 2, 1), (3, 3, 4), (4, 4, 3)] {
            assert!(!coeff(&moved, i, j, k).unwrap().is_zero());
        }

        let zero = Character::zero(m.module.clone(), FgAbelianTarget::free(1));
        assert!(matches!(lemkey4(&zero, &m), Err(GenError::ZeroCharacter)));
    }

    fn random_char(
        rng: &mut ChaCha8Rng,
        m: &RegularModule,
        target: &FgAbelianTarget,
        density: f64,
    ) -> Character {
        loop {
            let mut values = BTreeMap::new();
            for l in m.module.zbasis() {
                if rng.gen_bool(density) {
                    let free = (0..target.rank).map(|_| rng.gen_range(-3..=3)).collect();
                    let tors = target.torsion.iter().map(|&d| rng.gen_range(0..d)).collect();
                    let v = target.element(free, tors).unwrap();
                    if !v.is_zero() {
                        values.insert(l.clone(), v);
                    }
                }
            }
            let lam = Character::new(m.module.clone(), target.clone(), values).unwrap();
            if !lam.is_zero() {
                return lam;
            }
        }
    }

    #[test]
    fn lemkey4_random_sweep_small() {
        let targets = [
            FgAbelianTarget::free(1),
            FgAbelianTarget::new(0, &[2]).unwrap(),
            FgAbelianTarget::new(0, &[6]).unwrap(),
            FgAbelianTarget::new(1, &[4]).unwrap(),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for n in [4u8, 5] {
            let m = ia_ab_module(n).unwrap();
            for target in &targets {
                for _ in 0..25 {
                    let lam = random_char(&mut rng, &m, target, 0.15);
                    let w = lemkey4(&lam, &m).unwrap();
                    let moved = apply_word_to_char(&w, &lam, &m).unwrap();
                    for (i, j, k) in [(1u8, 1u8, 2u8), (2, 2, 1), (3, 3, 4), (4, 4, 3)] {
                        assert!(!coeff(&moved, i, j, k).unwrap().is_zero());
                    }
                }
            }
        }
    }

    #[test]
    fn lemkey5_already_generic_is_empty() {
        let m = ia_ab_module(6).unwrap();
        let lam = dual_char(
            &m,
            &["k:1,1,2", "k:2,1,2", "k:3,3,4", "k:4,3,4", "k:5,5,6", "k:6,5,6"],
        );
        assert!(pairs_generic(&lam, 3).unwrap());
        let w = lemkey5(&lam, 3, &m).unwrap();
        assert!(w.0.is_empty());
    }

    #[test]
    fn lemkey5_random_sweep() {
        let targets = [
            FgAbelianTarget::free(1),
            FgAbelianTarget::new(0, &[2]).unwrap(),
            FgAbelianTarget::new(0, &[6]).unwrap(),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (n, r) in [(6u8, 3u8), (7, 3), (8, 3), (4, 2)] {
            let m = ia_ab_module(n).unwrap();
            for target in &targets {
                for _ in 0..8 {
                    let lam = random_char(&mut rng, &m, target, 0.1);
                    let w = lemkey5(&lam, r, &m).unwrap();
                    let moved = apply_word_to_char(&w, &lam, &m).unwrap();
                    assert!(pairs_generic(&moved, r).unwrap());
                }
            }
        }
    }

    #[test]
    fn lemkey5_sparse_adversarial() {
        // Support on two overlapping triples: forces conversion moves.
        let m = ia_ab_module(6).unwrap();
        for labels in [
            vec!["k:1,2,3", "k:1,4,5"],
            vec!["k:1,2,3", "k:4,5,6", "k:2,3,4"],
            vec!["k:1,1,2", "k:1,1,3", "k:1,1,4"],
        ] {
            let lam = dual_char(&m, &labels.iter().map(|s| *s).collect::<Vec<_>>());
            let w = lemkey5(&lam, 3, &m).unwrap();
            let moved = apply_word_to_char(&w, &lam, &m).unwrap();
            assert!(pairs_generic(&moved, 3).unwrap(), "labels {labels:?}");
        }
    }

    #[test]
    fn support_transposition_under_f_letters() {
        // supp(F_ij lam) is the transposed support, exactly.
        let m = ia_ab_module(5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let target = FgAbelianTarget::new(1, &[4]).unwrap();
        for _ in 0..10 {
            let lam = random_char(&mut rng, &m, &target, 0.15);
            let s0 = support(&lam, &m).unwrap();
            let i = rng.gen_range(1..=4u8);
            let j = rng.gen_range(i + 1..=5u8);
            let moved = apply_word_to_char(&GroupWord(vec![Letter::f(i, j)]), &lam, &m).unwrap();
            let mut expect: Vec<IndexSet> =
                s0.iter().map(|&t| crate::regmod::set_transpose(t, i, j)).collect();
            expect.sort_by(|&a, &b| set_lex_cmp(a, b));
            assert_eq!(support(&moved, &m).unwrap(), expect);
        }
    }
}
