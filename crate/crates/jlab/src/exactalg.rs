//! Exact linear algebra over Z and F2.
//!
//! Everything downstream reduces to three primitives implemented here:
//! Smith normal form of integer matrices, Gaussian elimination over F2, and
//! membership tests in subgroups of a mixed module `Z^r (+) F2^s` (done by
//! lifting the F2 part to Z and adjoining the relations `2 e_t = 0`).

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;
use thiserror::Error;

/// Scalar used for all integer arithmetic. Desk-scale inputs keep values far
/// below the overflow bound; all arithmetic is checked.
pub type Int = i128;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ExactError {
    #[error("module mismatch: label `{0}` is not a basis label of the module")]
    ModuleMismatch(String),
    #[error("torsion order {0} is invalid (every order must be >= 2)")]
    BadTorsionOrder(Int),
    #[error("target mismatch: element has wrong shape for the target")]
    TargetMismatch,
    #[error("character is not 2-torsion on F2 basis label `{0}`")]
    NotTwoTorsion(String),
    #[error("duplicate basis label `{0}`")]
    DuplicateLabel(String),
}

#[inline]
pub(crate) fn iadd(a: Int, b: Int) -> Int {
    a.checked_add(b).expect("integer overflow in exact arithmetic")
}

#[inline]
pub(crate) fn imul(a: Int, b: Int) -> Int {
    a.checked_mul(b).expect("integer overflow in exact arithmetic")
}

// ---------------------------------------------------------------------------
// Integer matrices and Smith normal form
// ---------------------------------------------------------------------------

/// Dense integer matrix, row major.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntMatrix {
    pub rows: usize,
    pub cols: usize,
    data: Vec<Int>,
}

impl fmt::Debug for IntMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "IntMatrix {}x{}", self.rows, self.cols)?;
        for r in 0..self.rows {
            writeln!(f, "  {:?}", &self.data[r * self.cols..(r + 1) * self.cols])?;
        }
        Ok(())
    }
}

impl IntMatrix {
    pub fn zero(rows: usize, cols: usize) -> Self {
        IntMatrix { rows, cols, data: vec![0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zero(n, n);
        for i in 0..n {
            m.set(i, i, 1);
        }
        m
    }

    pub fn from_rows(rows: &[Vec<Int>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|row| row.len() == c), "ragged rows");
        IntMatrix { rows: r, cols: c, data: rows.concat() }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> Int {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: Int) {
        self.data[r * self.cols + c] = v;
    }

    pub fn column(&self, c: usize) -> Vec<Int> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn mul(&self, other: &IntMatrix) -> IntMatrix {
        assert_eq!(self.cols, other.rows, "dimension mismatch in matrix product");
        let mut out = IntMatrix::zero(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(r, k);
                if a == 0 {
                    continue;
                }
                for c in 0..other.cols {
                    let v = iadd(out.get(r, c), imul(a, other.get(k, c)));
                    out.set(r, c, v);
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, x: &[Int]) -> Vec<Int> {
        assert_eq!(self.cols, x.len());
        (0..self.rows)
            .map(|r| (0..self.cols).fold(0, |acc, c| iadd(acc, imul(self.get(r, c), x[c]))))
            .collect()
    }

    pub fn is_diagonal(&self) -> bool {
        (0..self.rows).all(|r| (0..self.cols).all(|c| r == c || self.get(r, c) == 0))
    }

    /// Inverse of a unimodular square matrix (`None` otherwise). From
    /// `u m v = 1` the inverse is `v u`.
    pub fn inverse_unimodular(&self) -> Option<IntMatrix> {
        if self.rows != self.cols {
            return None;
        }
        let snf = smith_normal_form(self);
        if snf.rank() != self.rows || snf.factors().iter().any(|&d| d != 1) {
            return None;
        }
        Some(snf.v.mul(&snf.u))
    }

    /// Determinant by fraction-free (Bareiss) elimination. Square only.
    pub fn det(&self) -> Int {
        assert_eq!(self.rows, self.cols);
        let n = self.rows;
        if n == 0 {
            return 1;
        }
        let mut a = self.clone();
        let mut sign: Int = 1;
        let mut prev: Int = 1;
        for k in 0..n - 1 {
            if a.get(k, k) == 0 {
                let Some(p) = (k + 1..n).find(|&r| a.get(r, k) != 0) else {
                    return 0;
                };
                for c in 0..n {
                    let t = a.get(k, c);
                    a.set(k, c, a.get(p, c));
                    a.set(p, c, t);
                }
                sign = -sign;
            }
            for i in k + 1..n {
                for j in k + 1..n {
                    let num = iadd(
                        imul(a.get(i, j), a.get(k, k)),
                        -imul(a.get(i, k), a.get(k, j)),
                    );
                    a.set(i, j, num / prev);
                }
                a.set(i, k, 0);
            }
            prev = a.get(k, k);
        }
        imul(sign, a.get(n - 1, n - 1))
    }
}

/// Result of a Smith normal form computation: `u * m * v = d` with `u`, `v`
/// unimodular and `d` diagonal with each entry dividing the next.
#[derive(Clone, Debug)]
pub struct Snf {
    pub u: IntMatrix,
    pub uinv: IntMatrix,
    pub d: IntMatrix,
    pub v: IntMatrix,
    pub vinv: IntMatrix,
}

impl Snf {
    pub fn rank(&self) -> usize {
        let n = self.d.rows.min(self.d.cols);
        (0..n).take_while(|&i| self.d.get(i, i) != 0).count()
    }

    pub fn factors(&self) -> Vec<Int> {
        let n = self.d.rows.min(self.d.cols);
        (0..n).map(|i| self.d.get(i, i)).take_while(|&x| x != 0).collect()
    }
}

pub fn smith_normal_form(m: &IntMatrix) -> Snf {
    let rows = m.rows;
    let cols = m.cols;
    let mut d = m.clone();
    let mut u = IntMatrix::identity(rows);
    let mut uinv = IntMatrix::identity(rows);
    let mut v = IntMatrix::identity(cols);
    let mut vinv = IntMatrix::identity(cols);

    // Row op "row r += q * row p" on d and u; uinv gets the inverse column op.
    let row_op = |d: &mut IntMatrix, u: &mut IntMatrix, uinv: &mut IntMatrix, r: usize, p: usize, q: Int| {
        for c in 0..d.cols {
            let val = iadd(d.get(r, c), imul(q, d.get(p, c)));
            d.set(r, c, val);
        }
        for c in 0..u.cols {
            let val = iadd(u.get(r, c), imul(q, u.get(p, c)));
            u.set(r, c, val);
        }
        for rr in 0..uinv.rows {
            let val = iadd(uinv.get(rr, p), -imul(q, uinv.get(rr, r)));
            uinv.set(rr, p, val);
        }
    };
    let col_op = |d: &mut IntMatrix, v: &mut IntMatrix, vinv: &mut IntMatrix, c: usize, p: usize, q: Int| {
        for r in 0..d.rows {
            let val = iadd(d.get(r, c), imul(q, d.get(r, p)));
            d.set(r, c, val);
        }
        for r in 0..v.rows {
            let val = iadd(v.get(r, c), imul(q, v.get(r, p)));
            v.set(r, c, val);
        }
        for cc in 0..vinv.cols {
            let val = iadd(vinv.get(p, cc), -imul(q, vinv.get(c, cc)));
            vinv.set(p, cc, val);
        }
    };
    let swap_rows = |d: &mut IntMatrix, u: &mut IntMatrix, uinv: &mut IntMatrix, a: usize, b: usize| {
        if a == b {
            return;
        }
        for c in 0..d.cols {
            let t = d.get(a, c);
            d.set(a, c, d.get(b, c));
            d.set(b, c, t);
        }
        for c in 0..u.cols {
            let t = u.get(a, c);
            u.set(a, c, u.get(b, c));
            u.set(b, c, t);
        }
        for r in 0..uinv.rows {
            let t = uinv.get(r, a);
            uinv.set(r, a, uinv.get(r, b));
            uinv.set(r, b, t);
        }
    };
    let swap_cols = |d: &mut IntMatrix, v: &mut IntMatrix, vinv: &mut IntMatrix, a: usize, b: usize| {
        if a == b {
            return;
        }
        for r in 0..d.rows {
            let t = d.get(r, a);
            d.set(r, a, d.get(r, b));
            d.set(r, b, t);
        }
        for r in 0..v.rows {
            let t = v.get(r, a);
            v.set(r, a, v.get(r, b));
            v.set(r, b, t);
        }
        for c in 0..vinv.cols {
            let t = vinv.get(a, c);
            vinv.set(a, c, vinv.get(b, c));
            vinv.set(b, c, t);
        }
    };

    let limit = rows.min(cols);
    for t in 0..limit {
        'pivot: loop {
            // Smallest nonzero entry of the trailing submatrix becomes the pivot.
            let mut best: Option<(usize, usize)> = None;
            for r in t..rows {
                for c in t..cols {
                    let x = d.get(r, c);
                    if x != 0 && best.map_or(true, |(br, bc)| x.abs() < d.get(br, bc).abs()) {
                        best = Some((r, c));
                    }
                }
            }
            let Some((pr, pc)) = best else { break 'pivot };
            swap_rows(&mut d, &mut u, &mut uinv, t, pr);
            swap_cols(&mut d, &mut v, &mut vinv, t, pc);

            let mut clean = true;
            for r in t + 1..rows {
                if d.get(r, t) != 0 {
                    let q = d.get(r, t).div_euclid(d.get(t, t));
                    row_op(&mut d, &mut u, &mut uinv, r, t, -q);
                    if d.get(r, t) != 0 {
                        clean = false;
                    }
                }
            }
            for c in t + 1..cols {
                if d.get(t, c) != 0 {
                    let q = d.get(t, c).div_euclid(d.get(t, t));
                    col_op(&mut d, &mut v, &mut vinv, c, t, -q);
                    if d.get(t, c) != 0 {
                        clean = false;
                    }
                }
            }
            if !clean {
                continue 'pivot;
            }
            // Divisibility sweep: drag a bad entry into the pivot row.
            for r in t + 1..rows {
                for c in t + 1..cols {
                    if d.get(r, c).rem_euclid(d.get(t, t)) != 0 {
                        row_op(&mut d, &mut u, &mut uinv, t, r, 1);
                        continue 'pivot;
                    }
                }
            }
            break 'pivot;
        }
        if d.get(t, t) < 0 {
            for c in 0..cols {
                d.set(t, c, -d.get(t, c));
            }
            for c in 0..rows {
                u.set(t, c, -u.get(t, c));
            }
            for r in 0..rows {
                uinv.set(r, t, -uinv.get(r, t));
            }
        }
    }
    Snf { u, uinv, d, v, vinv }
}

/// Solve `a x = b` over Z. Returns any solution, or `None` when `b` is not in
/// the column lattice of `a`.
pub fn solve_z(a: &IntMatrix, b: &[Int]) -> Option<Vec<Int>> {
    assert_eq!(a.rows, b.len());
    let snf = smith_normal_form(a);
    let y = snf.u.mul_vec(b);
    let mut q = vec![0; a.cols];
    for (i, &yi) in y.iter().enumerate() {
        let di = if i < a.cols.min(a.rows) { snf.d.get(i, i) } else { 0 };
        if di == 0 {
            if yi != 0 {
                return None;
            }
        } else {
            if yi % di != 0 {
                return None;
            }
            q[i] = yi / di;
        }
    }
    Some(snf.v.mul_vec(&q))
}

// ---------------------------------------------------------------------------
// F2 linear algebra
// ---------------------------------------------------------------------------

/// Dense matrix over F2, row major.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct F2Matrix {
    pub rows: usize,
    pub cols: usize,
    data: Vec<bool>,
}

impl F2Matrix {
    pub fn zero(rows: usize, cols: usize) -> Self {
        F2Matrix { rows, cols, data: vec![false; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zero(n, n);
        for i in 0..n {
            m.set(i, i, true);
        }
        m
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> bool {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: bool) {
        self.data[r * self.cols + c] = v;
    }

    pub fn mul(&self, other: &F2Matrix) -> F2Matrix {
        assert_eq!(self.cols, other.rows);
        let mut out = F2Matrix::zero(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                if self.get(r, k) {
                    for c in 0..other.cols {
                        let v = out.get(r, c) ^ other.get(k, c);
                        out.set(r, c, v);
                    }
                }
            }
        }
        out
    }

    pub fn rank(&self) -> usize {
        let mut a = self.clone();
        let mut rank = 0;
        for c in 0..a.cols {
            if rank == a.rows {
                break;
            }
            let Some(p) = (rank..a.rows).find(|&r| a.get(r, c)) else { continue };
            for cc in 0..a.cols {
                let t = a.get(rank, cc);
                a.set(rank, cc, a.get(p, cc));
                a.set(p, cc, t);
            }
            for r in 0..a.rows {
                if r != rank && a.get(r, c) {
                    for cc in 0..a.cols {
                        let v = a.get(r, cc) ^ a.get(rank, cc);
                        a.set(r, cc, v);
                    }
                }
            }
            rank += 1;
        }
        rank
    }

    pub fn invert(&self) -> Option<F2Matrix> {
        assert_eq!(self.rows, self.cols);
        let n = self.rows;
        let mut a = self.clone();
        let mut inv = F2Matrix::identity(n);
        for c in 0..n {
            let p = (c..n).find(|&r| a.get(r, c))?;
            for cc in 0..n {
                let t = a.get(c, cc);
                a.set(c, cc, a.get(p, cc));
                a.set(p, cc, t);
                let t = inv.get(c, cc);
                inv.set(c, cc, inv.get(p, cc));
                inv.set(p, cc, t);
            }
            for r in 0..n {
                if r != c && a.get(r, c) {
                    for cc in 0..n {
                        let v = a.get(r, cc) ^ a.get(c, cc);
                        a.set(r, cc, v);
                        let v = inv.get(r, cc) ^ inv.get(c, cc);
                        inv.set(r, cc, v);
                    }
                }
            }
        }
        Some(inv)
    }
}

pub fn solve_f2(a: &F2Matrix, b: &[bool]) -> Option<Vec<bool>> {
    assert_eq!(a.rows, b.len());
    let mut m = a.clone();
    let mut rhs = b.to_vec();
    let mut pivots: Vec<(usize, usize)> = Vec::new();
    let mut row = 0;
    for c in 0..m.cols {
        if row == m.rows {
            break;
        }
        let Some(p) = (row..m.rows).find(|&r| m.get(r, c)) else { continue };
        for cc in 0..m.cols {
            let t = m.get(row, cc);
            m.set(row, cc, m.get(p, cc));
            m.set(p, cc, t);
        }
        rhs.swap(row, p);
        for r in 0..m.rows {
            if r != row && m.get(r, c) {
                for cc in 0..m.cols {
                    let v = m.get(r, cc) ^ m.get(row, cc);
                    m.set(r, cc, v);
                }
                rhs[r] ^= rhs[row];
            }
        }
        pivots.push((row, c));
        row += 1;
    }
    // Rows without pivots must have zero rhs.
    for r in row..m.rows {
        if rhs[r] {
            return None;
        }
    }
    let mut x = vec![false; m.cols];
    for &(r, c) in &pivots {
        x[c] = rhs[r];
    }
    Some(x)
}

// ---------------------------------------------------------------------------
// Mixed Z/F2 modules
// ---------------------------------------------------------------------------

#[derive(Debug, PartialEq, Eq)]
struct ModuleData {
    zbasis: Vec<String>,
    f2basis: Vec<String>,
    zindex: BTreeMap<String, usize>,
    findex: BTreeMap<String, usize>,
}

/// A free Z-module plus an F2-vector-space part, with a fixed ordered basis of
/// string labels. Cheap to clone (shared immutable data).
#[derive(Clone, Debug)]
pub struct MixedModule(Arc<ModuleData>);

impl PartialEq for MixedModule {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
            || (self.0.zbasis == other.0.zbasis && self.0.f2basis == other.0.f2basis)
    }
}
impl Eq for MixedModule {}

impl MixedModule {
    pub fn new(zbasis: Vec<String>, f2basis: Vec<String>) -> Result<Self, ExactError> {
        let mut seen = BTreeSet::new();
        for l in zbasis.iter().chain(f2basis.iter()) {
            if !seen.insert(l.clone()) {
                return Err(ExactError::DuplicateLabel(l.clone()));
            }
        }
        let zindex = zbasis.iter().cloned().enumerate().map(|(i, l)| (l, i)).collect();
        let findex = f2basis.iter().cloned().enumerate().map(|(i, l)| (l, i)).collect();
        Ok(MixedModule(Arc::new(ModuleData { zbasis, f2basis, zindex, findex })))
    }

    pub fn zrank(&self) -> usize {
        self.0.zbasis.len()
    }

    pub fn f2dim(&self) -> usize {
        self.0.f2basis.len()
    }

    pub fn zbasis(&self) -> &[String] {
        &self.0.zbasis
    }

    pub fn f2basis(&self) -> &[String] {
        &self.0.f2basis
    }

    pub fn zindex(&self, label: &str) -> Option<usize> {
        self.0.zindex.get(label).copied()
    }

    pub fn findex(&self, label: &str) -> Option<usize> {
        self.0.findex.get(label).copied()
    }

    pub fn is_pure_z(&self) -> bool {
        self.f2dim() == 0
    }

    pub fn is_pure_f2(&self) -> bool {
        self.zrank() == 0
    }

    /// Convert a sparse element to dense coordinates, validating labels.
    pub fn dense(&self, x: &ModuleElement) -> Result<DenseElt, ExactError> {
        let mut z = vec![0; self.zrank()];
        let mut f = vec![false; self.f2dim()];
        for (l, &c) in &x.z {
            let i = self.zindex(l).ok_or_else(|| ExactError::ModuleMismatch(l.clone()))?;
            z[i] = c;
        }
        for l in &x.f {
            let i = self.findex(l).ok_or_else(|| ExactError::ModuleMismatch(l.clone()))?;
            f[i] = true;
        }
        Ok(DenseElt { z, f })
    }

    pub fn sparse(&self, x: &DenseElt) -> ModuleElement {
        let mut e = ModuleElement::zero();
        for (i, &c) in x.z.iter().enumerate() {
            if c != 0 {
                e.z.insert(self.0.zbasis[i].clone(), c);
            }
        }
        for (i, &b) in x.f.iter().enumerate() {
            if b {
                e.f.insert(self.0.f2basis[i].clone());
            }
        }
        e
    }

    pub fn basis_element(&self, label: &str) -> Result<ModuleElement, ExactError> {
        let mut e = ModuleElement::zero();
        if self.zindex(label).is_some() {
            e.z.insert(label.to_string(), 1);
        } else if self.findex(label).is_some() {
            e.f.insert(label.to_string());
        } else {
            return Err(ExactError::ModuleMismatch(label.to_string()));
        }
        Ok(e)
    }
}

/// Sparse element of a mixed module: integer coordinates on the Z part, a set
/// of labels with coefficient 1 on the F2 part.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModuleElement {
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub z: BTreeMap<String, Int>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub f: BTreeSet<String>,
}

impl ModuleElement {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn is_zero(&self) -> bool {
        self.z.values().all(|&c| c == 0) && self.f.is_empty()
    }

    pub fn from_z(pairs: &[(&str, Int)]) -> Self {
        let mut e = Self::zero();
        for &(l, c) in pairs {
            if c != 0 {
                let v = iadd(e.z.get(l).copied().unwrap_or(0), c);
                if v == 0 {
                    e.z.remove(l);
                } else {
                    e.z.insert(l.to_string(), v);
                }
            }
        }
        e
    }

    pub fn add(&self, other: &ModuleElement) -> ModuleElement {
        let mut out = self.clone();
        for (l, &c) in &other.z {
            let v = iadd(out.z.get(l).copied().unwrap_or(0), c);
            if v == 0 {
                out.z.remove(l);
            } else {
                out.z.insert(l.clone(), v);
            }
        }
        for l in &other.f {
            if !out.f.remove(l) {
                out.f.insert(l.clone());
            }
        }
        out
    }

    pub fn neg(&self) -> ModuleElement {
        let mut out = self.clone();
        for v in out.z.values_mut() {
            *v = -*v;
        }
        out
    }

    pub fn scale(&self, c: Int) -> ModuleElement {
        let mut out = ModuleElement::zero();
        for (l, &v) in &self.z {
            if imul(v, c) != 0 {
                out.z.insert(l.clone(), imul(v, c));
            }
        }
        if c.rem_euclid(2) == 1 {
            out.f = self.f.clone();
        }
        out
    }
}

/// Dense coordinates of a module element.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DenseElt {
    pub z: Vec<Int>,
    pub f: Vec<bool>,
}

impl DenseElt {
    pub fn zero(zdim: usize, fdim: usize) -> Self {
        DenseElt { z: vec![0; zdim], f: vec![false; fdim] }
    }

    pub fn is_zero(&self) -> bool {
        self.z.iter().all(|&c| c == 0) && self.f.iter().all(|&b| !b)
    }

    pub fn add_assign(&mut self, other: &DenseElt) {
        for (a, b) in self.z.iter_mut().zip(&other.z) {
            *a = iadd(*a, *b);
        }
        for (a, b) in self.f.iter_mut().zip(&other.f) {
            *a ^= *b;
        }
    }

    pub fn sub(&self, other: &DenseElt) -> DenseElt {
        let z = self.z.iter().zip(&other.z).map(|(&a, &b)| iadd(a, -b)).collect();
        let f = self.f.iter().zip(&other.f).map(|(&a, &b)| a ^ b).collect();
        DenseElt { z, f }
    }
}

/// Does `x` lie in the subgroup of `Z^zdim (+) F2^fdim` generated by `gens`?
///
/// The F2 part is lifted to Z and the relations `2 e_t = 0` are adjoined, so
/// the question becomes an integer lattice membership solved by SNF. Rows are
/// restricted to the union of the supports first.
pub fn mixed_span_contains(gens: &[DenseElt], x: &DenseElt) -> bool {
    if x.is_zero() {
        return true;
    }
    if gens.is_empty() {
        return false;
    }
    let zdim = x.z.len();
    let fdim = x.f.len();
    let mut zrows: BTreeSet<usize> = BTreeSet::new();
    let mut frows: BTreeSet<usize> = BTreeSet::new();
    for g in gens {
        assert_eq!(g.z.len(), zdim);
        assert_eq!(g.f.len(), fdim);
        zrows.extend((0..zdim).filter(|&i| g.z[i] != 0));
        frows.extend((0..fdim).filter(|&i| g.f[i]));
    }
    // A coordinate of x outside every generator support is unreachable.
    if (0..zdim).any(|i| x.z[i] != 0 && !zrows.contains(&i)) {
        return false;
    }
    for i in 0..fdim {
        if x.f[i] {
            frows.insert(i);
        }
    }
    let zrows: Vec<usize> = zrows.into_iter().collect();
    let frows: Vec<usize> = frows.into_iter().collect();
    let nrows = zrows.len() + frows.len();
    let ncols = gens.len() + frows.len();
    let mut a = IntMatrix::zero(nrows, ncols);
    for (col, g) in gens.iter().enumerate() {
        for (r, &i) in zrows.iter().enumerate() {
            a.set(r, col, g.z[i]);
        }
        for (r, &i) in frows.iter().enumerate() {
            a.set(zrows.len() + r, col, if g.f[i] { 1 } else { 0 });
        }
    }
    for (t, _) in frows.iter().enumerate() {
        a.set(zrows.len() + t, gens.len() + t, 2);
    }
    let mut b = Vec::with_capacity(nrows);
    b.extend(zrows.iter().map(|&i| x.z[i]));
    b.extend(frows.iter().map(|&i| if x.f[i] { 1 } else { 0 }));
    solve_z(&a, &b).is_some()
}

/// Two generating sets span the same subgroup.
pub fn mixed_span_eq(a: &[DenseElt], b: &[DenseElt]) -> bool {
    b.iter().all(|x| mixed_span_contains(a, x)) && a.iter().all(|x| mixed_span_contains(b, x))
}

// ---------------------------------------------------------------------------
// Finitely generated abelian targets and characters
// ---------------------------------------------------------------------------

/// Explicit finitely generated abelian group `Z^rank (+) Z/d_1 (+) ... (+) Z/d_k`.
///
/// Torsion orders are normalized to invariant-factor form (each dividing the
/// next) at construction; orders equal to 1 are dropped.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FgAbelianTarget {
    pub rank: usize,
    pub torsion: Vec<Int>,
}

impl FgAbelianTarget {
    pub fn new(rank: usize, torsion: &[Int]) -> Result<Self, ExactError> {
        for &d in torsion {
            if d < 2 {
                return Err(ExactError::BadTorsionOrder(d));
            }
        }
        let torsion = normalize_torsion(torsion);
        Ok(FgAbelianTarget { rank, torsion })
    }

    pub fn free(rank: usize) -> Self {
        FgAbelianTarget { rank, torsion: Vec::new() }
    }

    pub fn zero_elt(&self) -> TargetElement {
        TargetElement { free: vec![0; self.rank], tors: vec![0; self.torsion.len()] }
    }

    pub fn element(&self, free: Vec<Int>, tors: Vec<Int>) -> Result<TargetElement, ExactError> {
        if free.len() != self.rank || tors.len() != self.torsion.len() {
            return Err(ExactError::TargetMismatch);
        }
        let tors = tors.iter().zip(&self.torsion).map(|(&x, &d)| x.rem_euclid(d)).collect();
        Ok(TargetElement { free, tors })
    }

    pub fn add(&self, a: &TargetElement, b: &TargetElement) -> TargetElement {
        let free = a.free.iter().zip(&b.free).map(|(&x, &y)| iadd(x, y)).collect();
        let tors = a
            .tors
            .iter()
            .zip(&b.tors)
            .zip(&self.torsion)
            .map(|((&x, &y), &d)| iadd(x, y).rem_euclid(d))
            .collect();
        TargetElement { free, tors }
    }

    pub fn neg(&self, a: &TargetElement) -> TargetElement {
        let free = a.free.iter().map(|&x| -x).collect();
        let tors = a.tors.iter().zip(&self.torsion).map(|(&x, &d)| (-x).rem_euclid(d)).collect();
        TargetElement { free, tors }
    }

    pub fn sub(&self, a: &TargetElement, b: &TargetElement) -> TargetElement {
        self.add(a, &self.neg(b))
    }

    pub fn scale(&self, a: &TargetElement, c: Int) -> TargetElement {
        let free = a.free.iter().map(|&x| imul(x, c)).collect();
        let tors = a.tors.iter().zip(&self.torsion).map(|(&x, &d)| imul(x, c).rem_euclid(d)).collect();
        TargetElement { free, tors }
    }
}

fn normalize_torsion(orders: &[Int]) -> Vec<Int> {
    if orders.is_empty() {
        return Vec::new();
    }
    let n = orders.len();
    let mut m = IntMatrix::zero(n, n);
    for (i, &d) in orders.iter().enumerate() {
        m.set(i, i, d);
    }
    smith_normal_form(&m).factors().into_iter().filter(|&d| d > 1).collect()
}

/// Element of an [`FgAbelianTarget`]: free coordinates plus torsion
/// coordinates reduced into `[0, d_i)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetElement {
    pub free: Vec<Int>,
    pub tors: Vec<Int>,
}

impl TargetElement {
    pub fn is_zero(&self) -> bool {
        self.free.iter().all(|&x| x == 0) && self.tors.iter().all(|&x| x == 0)
    }
}

/// A homomorphism from a mixed module to an explicit f.g. abelian target,
/// given by its values on the basis labels (absent label = zero value).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Character {
    pub module: MixedModule,
    pub target: FgAbelianTarget,
    values: BTreeMap<String, TargetElement>,
}

impl Character {
    pub fn new(
        module: MixedModule,
        target: FgAbelianTarget,
        values: BTreeMap<String, TargetElement>,
    ) -> Result<Self, ExactError> {
        for (l, v) in &values {
            if v.free.len() != target.rank || v.tors.len() != target.torsion.len() {
                return Err(ExactError::TargetMismatch);
            }
            if module.zindex(l).is_none() && module.findex(l).is_none() {
                return Err(ExactError::ModuleMismatch(l.clone()));
            }
            if module.findex(l).is_some() && !target.scale(v, 2).is_zero() {
                return Err(ExactError::NotTwoTorsion(l.clone()));
            }
        }
        let values = values
            .into_iter()
            .map(|(l, v)| {
                let v = target.element(v.free, v.tors).expect("shape checked");
                (l, v)
            })
            .filter(|(_, v)| !v.is_zero())
            .collect();
        Ok(Character { module, target, values })
    }

    pub fn zero(module: MixedModule, target: FgAbelianTarget) -> Self {
        Character { module, target, values: BTreeMap::new() }
    }

    pub fn value(&self, label: &str) -> TargetElement {
        self.values.get(label).cloned().unwrap_or_else(|| self.target.zero_elt())
    }

    pub fn values(&self) -> &BTreeMap<String, TargetElement> {
        &self.values
    }

    pub fn is_zero(&self) -> bool {
        self.values.is_empty()
    }

    pub fn with_values(&self, values: BTreeMap<String, TargetElement>) -> Self {
        Character::new(self.module.clone(), self.target.clone(), values)
            .expect("values produced from an existing character")
    }
}

/// Evaluate a character on a module element by additive extension.
pub fn char_eval(lam: &Character, x: &ModuleElement) -> Result<TargetElement, ExactError> {
    let mut acc = lam.target.zero_elt();
    for (l, &c) in &x.z {
        if lam.module.zindex(l).is_none() {
            return Err(ExactError::ModuleMismatch(l.clone()));
        }
        acc = lam.target.add(&acc, &lam.target.scale(&lam.value(l), c));
    }
    for l in &x.f {
        if lam.module.findex(l).is_none() {
            return Err(ExactError::ModuleMismatch(l.clone()));
        }
        acc = lam.target.add(&acc, &lam.value(l));
    }
    Ok(acc)
}

/// True iff the character kills every listed element (hence the subgroup they
/// generate).
pub fn char_vanishes_on(lam: &Character, gens: &[ModuleElement]) -> Result<bool, ExactError> {
    for g in gens {
        if !char_eval(lam, g)?.is_zero() {
            return Ok(false);
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m2(rows: [[Int; 2]; 2]) -> IntMatrix {
        IntMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>())
    }

    fn check_snf(m: &IntMatrix) -> Snf {
        let snf = smith_normal_form(m);
        assert_eq!(snf.u.mul(m).mul(&snf.v), snf.d, "u*m*v = d");
        assert_eq!(snf.u.mul(&snf.uinv), IntMatrix::identity(m.rows));
        assert_eq!(snf.vinv.mul(&snf.v), IntMatrix::identity(m.cols));
        assert_eq!(snf.u.det().abs(), 1, "u unimodular");
        assert_eq!(snf.v.det().abs(), 1, "v unimodular");
        assert!(snf.d.is_diagonal());
        let f = snf.factors();
        for w in f.windows(2) {
            assert!(w[0] > 0 && w[1] % w[0] == 0, "divisor chain");
        }
        snf
    }

    #[test]
    fn snf_identity() {
        let snf = check_snf(&IntMatrix::identity(2));
        assert_eq!(snf.d, IntMatrix::identity(2));
    }

    #[test]
    fn snf_diag_2_3() {
        // Oracle: determinantal divisors. gcd of 1x1 minors = gcd(2,3) = 1,
        // gcd of 2x2 minors = 6, so the invariant factors are 1 and 6.
        let m = m2([[2, 0], [0, 3]]);
        let snf = check_snf(&m);
        assert_eq!(snf.factors(), vec![1, 6]);
    }

    #[test]
    fn snf_zero() {
        let m = IntMatrix::zero(2, 3);
        let snf = check_snf(&m);
        assert_eq!(snf.d, IntMatrix::zero(2, 3));
    }

    /// Determinantal-divisor oracle: the product d_1 ... d_k equals the gcd of
    /// all k x k minors.
    fn minor_gcd_oracle(m: &IntMatrix, k: usize) -> Int {
        fn combos(n: usize, k: usize) -> Vec<Vec<usize>> {
            if k == 0 {
                return vec![vec![]];
            }
            let mut out = Vec::new();
            for first in 0..n {
                for mut rest in combos(n - first - 1, k - 1) {
                    for x in rest.iter_mut() {
                        *x += first + 1;
                    }
                    rest.insert(0, first);
                    out.push(rest);
                }
            }
            out
        }
        let mut g: Int = 0;
        for rs in combos(m.rows, k) {
            for cs in combos(m.cols, k) {
                let mut sub = IntMatrix::zero(k, k);
                for (i, &r) in rs.iter().enumerate() {
                    for (j, &c) in cs.iter().enumerate() {
                        sub.set(i, j, m.get(r, c));
                    }
                }
                let d = sub.det().abs();
                g = gcd(g, d);
            }
        }
        g
    }

    fn gcd(a: Int, b: Int) -> Int {
        if b == 0 {
            a.abs()
        } else {
            gcd(b, a % b)
        }
    }

    #[test]
    fn snf_matches_minor_gcd_oracle() {
        // A few fixed matrices plus a small deterministic sweep.
        let samples: Vec<IntMatrix> = vec![
            IntMatrix::from_rows(&[vec![2, 4, 4], vec![-6, 6, 12], vec![10, 4, 16]]),
            IntMatrix::from_rows(&[vec![1, 2], vec![3, 4], vec![5, 6]]),
            IntMatrix::from_rows(&[vec![0, 0, 2], vec![0, 4, 0]]),
        ];
        for m in samples {
            let snf = check_snf(&m);
            let f = snf.factors();
            let mut prod: Int = 1;
            for (k, &d) in f.iter().enumerate() {
                prod = imul(prod, d);
                assert_eq!(prod, minor_gcd_oracle(&m, k + 1), "minor gcd at {}", k + 1);
            }
            // Beyond the rank all minors vanish.
            if f.len() < m.rows.min(m.cols) {
                assert_eq!(minor_gcd_oracle(&m, f.len() + 1), 0);
            }
        }
    }

    #[test]
    fn solve_z_basic() {
        let a = IntMatrix::from_rows(&[vec![2, 0], vec![0, 3]]);
        assert_eq!(solve_z(&a, &[4, 9]), Some(vec![2, 3]));
        assert_eq!(solve_z(&a, &[1, 0]), None);
    }

    #[test]
    fn mixed_membership_lifts_torsion() {
        // Subgroup of Z (+) F2 generated by (2, 1): contains (4, 0) and (2, 1)
        // but not (1, 0) or (0, 1).
        let g = DenseElt { z: vec![2], f: vec![true] };
        let gens = [g];
        assert!(mixed_span_contains(&gens, &DenseElt { z: vec![4], f: vec![false] }));
        assert!(mixed_span_contains(&gens, &DenseElt { z: vec![2], f: vec![true] }));
        assert!(!mixed_span_contains(&gens, &DenseElt { z: vec![1], f: vec![false] }));
        assert!(!mixed_span_contains(&gens, &DenseElt { z: vec![0], f: vec![true] }));
    }

    #[test]
    fn target_normalizes_torsion() {
        let t = FgAbelianTarget::new(0, &[2, 3]).unwrap();
        assert_eq!(t.torsion, vec![6]);
        let t = FgAbelianTarget::new(1, &[4, 6]).unwrap();
        assert_eq!(t.torsion, vec![2, 12]);
        assert!(FgAbelianTarget::new(0, &[1]).is_err());
    }

    #[test]
    fn character_eval_and_vanishing() {
        let module = MixedModule::new(vec!["b1".into(), "b2".into()], vec!["e".into()]).unwrap();
        let target = FgAbelianTarget::new(1, &[2]).unwrap();
        let t = |f: Int, tr: Int| target.element(vec![f], vec![tr]).unwrap();
        let mut values = BTreeMap::new();
        values.insert("b1".to_string(), t(1, 0));
        values.insert("e".to_string(), t(0, 1));
        let lam = Character::new(module.clone(), target.clone(), values).unwrap();

        // lambda(0) = 0 and additivity on 3*b1.
        assert!(char_eval(&lam, &ModuleElement::zero()).unwrap().is_zero());
        let x = ModuleElement::from_z(&[("b1", 3)]);
        assert_eq!(char_eval(&lam, &x).unwrap(), t(3, 0));
        // F2 label evaluates by direct lookup.
        let e = module.basis_element("e").unwrap();
        assert_eq!(char_eval(&lam, &e).unwrap(), t(0, 1));

        // Vanishing: empty set vanishes; b1 does not; b2 does.
        assert!(char_vanishes_on(&lam, &[]).unwrap());
        assert!(!char_vanishes_on(&lam, &[x]).unwrap());
        let y = ModuleElement::from_z(&[("b2", 5)]);
        assert!(char_vanishes_on(&lam, &[y]).unwrap());

        // A non-2-torsion value on an F2 label is rejected.
        let mut bad = BTreeMap::new();
        bad.insert("e".to_string(), t(1, 0));
        assert!(Character::new(module, target, bad).is_err());
    }

    #[test]
    fn char_eval_rejects_foreign_labels() {
        let module = MixedModule::new(vec!["b1".into()], vec![]).unwrap();
        let lam = Character::zero(module, FgAbelianTarget::free(1));
        let x = ModuleElement::from_z(&[("nope", 1)]);
        assert!(matches!(char_eval(&lam, &x), Err(ExactError::ModuleMismatch(_))));
    }
}
