//! The abelianization of `IA_n` as a concrete regular module.
//!
//! The basis is the set of kappa labels `k:i,j,k` (`j < k`), where `k:i,j,k`
//! stands for `e_i* (x) (e_j ^ e_k)`. The elementary actions are implemented
//! in closed form by expanding
//! `(e_a* - eps d_{a,i} e_j*) (x) (e_b + eps d_{b,j} e_i) ^ (e_c + eps d_{c,j} e_i)`
//! and renormalizing; an independent oracle rebuilds the same module as
//! `dual(n) (x) wedge2(std(n))` through the generic constructors and
//! transports the action back along the kappa identification.

use crate::exactalg::{
    char_eval, Character, ExactError, Int, IntMatrix, MixedModule, ModuleElement, TargetElement,
};
use crate::regmod::{
    dual_module, quotient_with_maps, set_from, standard_module, tensor, ElementaryAction, IndexSet,
    Letter, NGrading, Quotient, RegError, RegularModule,
};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IaError {
    #[error("kappa index out of range: ({0},{1},{2}) with n = {3}")]
    BadKappaIndex(u8, u8, u8, u8),
    #[error("kappa wedge indices must differ (got j = k = {0})")]
    EqualWedgeIndices(u8),
    #[error(transparent)]
    Reg(#[from] RegError),
    #[error(transparent)]
    Exact(#[from] ExactError),
}

/// Basis label `e_i* (x) (e_j ^ e_k)` with `j < k`; `i` may equal `j` or `k`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct KappaLabel {
    pub i: u8,
    pub j: u8,
    pub k: u8,
}

impl KappaLabel {
    pub fn new(i: u8, j: u8, k: u8) -> Self {
        assert!(j < k, "kappa label requires j < k");
        KappaLabel { i, j, k }
    }

    /// Normalize arbitrary wedge indices, returning the sign of the
    /// reordering; `None` when the wedge collapses (`p == q`).
    pub fn normalized(i: u8, p: u8, q: u8) -> Option<(KappaLabel, Int)> {
        match p.cmp(&q) {
            std::cmp::Ordering::Less => Some((KappaLabel::new(i, p, q), 1)),
            std::cmp::Ordering::Greater => Some((KappaLabel::new(i, q, p), -1)),
            std::cmp::Ordering::Equal => None,
        }
    }

    pub fn label(&self) -> String {
        format!("k:{},{},{}", self.i, self.j, self.k)
    }

    pub fn parse(text: &str) -> Option<KappaLabel> {
        let rest = text.strip_prefix("k:")?;
        let parts: Vec<u8> = rest.split(',').map(|p| p.parse().ok()).collect::<Option<_>>()?;
        if parts.len() != 3 || parts[1] >= parts[2] {
            return None;
        }
        Some(KappaLabel { i: parts[0], j: parts[1], k: parts[2] })
    }

    pub fn index_set(&self) -> IndexSet {
        set_from(&[self.i, self.j, self.k])
    }
}

impl fmt::Display for KappaLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.label())
    }
}

pub fn kappa_labels(n: u8) -> Vec<KappaLabel> {
    let mut out = Vec::new();
    for i in 1..=n {
        for j in 1..=n {
            for k in j + 1..=n {
                out.push(KappaLabel { i, j, k });
            }
        }
    }
    out
}

/// Closed-form action of `E_ij^eps` on a kappa basis element.
pub fn e_action_on_kappa(i: u8, j: u8, eps: Int, l: &KappaLabel) -> Vec<(KappaLabel, Int)> {
    let mut dual_terms: Vec<(u8, Int)> = vec![(l.i, 1)];
    if l.i == i {
        dual_terms.push((j, -eps));
    }
    let mut wedge_terms: Vec<((u8, u8), Int)> = vec![((l.j, l.k), 1)];
    if l.j == j {
        wedge_terms.push(((i, l.k), eps));
    }
    if l.k == j {
        wedge_terms.push(((l.j, i), eps));
    }
    let mut acc: BTreeMap<KappaLabel, Int> = BTreeMap::new();
    for &(a, ca) in &dual_terms {
        for &((p, q), cw) in &wedge_terms {
            if let Some((lbl, sg)) = KappaLabel::normalized(a, p, q) {
                let coef = ca * cw * sg;
                let v = acc.entry(lbl).or_insert(0);
                *v += coef;
            }
        }
    }
    acc.into_iter().filter(|&(_, c)| c != 0).collect()
}

/// Closed-form action of `F_ij` on a kappa basis element: the labels are
/// transposed and each slot equal to `i` contributes a minus sign.
pub fn f_action_on_kappa(i: u8, j: u8, l: &KappaLabel) -> (KappaLabel, Int) {
    let map = |t: u8| -> (u8, Int) {
        if t == i {
            (j, -1)
        } else if t == j {
            (i, 1)
        } else {
            (t, 1)
        }
    };
    let (a, sa) = map(l.i);
    let (p, sp) = map(l.j);
    let (q, sq) = map(l.k);
    let (lbl, sg) = KappaLabel::normalized(a, p, q).expect("transposition keeps indices distinct");
    (lbl, sa * sp * sq * sg)
}

/// The abelianization of `IA_n` as a regular module: free on the kappa
/// labels, graded by the index set of each label.
pub fn ia_ab_module(n: u8) -> Result<RegularModule, IaError> {
    if n < 2 {
        return Err(RegError::TooSmallN(2).into());
    }
    let labels = kappa_labels(n);
    let index: BTreeMap<KappaLabel, usize> =
        labels.iter().enumerate().map(|(c, &l)| (l, c)).collect();
    let module = MixedModule::new(labels.iter().map(KappaLabel::label).collect(), Vec::new())?;
    let dim = labels.len();

    let mut maps = BTreeMap::new();
    for i in 1..=n {
        for j in 1..=n {
            if i == j {
                continue;
            }
            let mk = |eps: Int| {
                let mut zz: Vec<Vec<(usize, Int)>> = Vec::with_capacity(dim);
                for l in &labels {
                    let col = e_action_on_kappa(i, j, eps, l)
                        .into_iter()
                        .map(|(lbl, c)| (index[&lbl], c))
                        .collect();
                    zz.push(col);
                }
                crate::regmod::MixedMap::from_columns(dim, 0, zz, vec![Vec::new(); dim], Vec::new())
            };
            maps.insert((i, j), (mk(1), mk(-1)));
        }
    }

    let mut pieces: BTreeMap<IndexSet, Vec<ModuleElement>> = BTreeMap::new();
    for l in &labels {
        pieces
            .entry(l.index_set())
            .or_default()
            .push(ModuleElement::from_z(&[(&l.label(), 1)]));
    }
    Ok(RegularModule {
        module,
        grading: NGrading::new(n, pieces),
        action: ElementaryAction::new(n, maps),
    })
}

/// Coefficient map `c_ijk(lambda) = lambda(kappa_ijk)`, with antisymmetry in
/// the last two indices handled at this boundary.
pub fn coeff(lam: &Character, i: u8, j: u8, k: u8) -> Result<TargetElement, IaError> {
    let n = coeff_rank(lam);
    if i == 0 || j == 0 || k == 0 || i > n || j > n || k > n {
        return Err(IaError::BadKappaIndex(i, j, k, n));
    }
    if j == k {
        return Err(IaError::EqualWedgeIndices(j));
    }
    if j < k {
        let x = ModuleElement::from_z(&[(&KappaLabel::new(i, j, k).label(), 1)]);
        Ok(char_eval(lam, &x)?)
    } else {
        let x = ModuleElement::from_z(&[(&KappaLabel::new(i, k, j).label(), -1)]);
        Ok(char_eval(lam, &x)?)
    }
}

fn coeff_rank(lam: &Character) -> u8 {
    // n C(n,2) labels; recover n from the largest index mentioned.
    lam.module
        .zbasis()
        .iter()
        .filter_map(|l| KappaLabel::parse(l))
        .map(|l| l.i.max(l.k))
        .max()
        .unwrap_or(0)
}

/// Independent action oracle: the same module rebuilt from the generic
/// constructors as `dual(n) (x) (std(n) (x) std(n) / wedge relations)`, with
/// the unimodular change of basis onto the kappa labels.
pub struct KappaOracle {
    pub n: u8,
    tensor_mod: RegularModule,
    psi: IntMatrix,
    psi_inv: IntMatrix,
    kappa: Vec<KappaLabel>,
    kappa_index: BTreeMap<KappaLabel, usize>,
}

fn wedge2_of_standard(n: u8) -> Result<Quotient, RegError> {
    let s = standard_module(n)?;
    let t = tensor(&s, &s)?;
    let lab = |a: u8, b: u8| format!("(e:{a})|(e:{b})");
    let mut rels = Vec::new();
    for i in 1..=n {
        rels.push(ModuleElement::from_z(&[(&lab(i, i), 1)]));
    }
    for i in 1..=n {
        for j in i + 1..=n {
            rels.push(ModuleElement::from_z(&[(&lab(i, j), 1), (&lab(j, i), 1)]));
        }
    }
    quotient_with_maps(&t, &rels)
}

impl KappaOracle {
    pub fn new(n: u8) -> Result<Self, IaError> {
        let w2 = wedge2_of_standard(n)?;
        let d = dual_module(n)?;
        let o = tensor(&d, &w2.module)?;
        let kappa = kappa_labels(n);
        let dim = kappa.len();
        assert_eq!(o.module.zrank(), dim, "oracle carrier has the kappa rank");

        // psi column for kappa_{i,j,k}: coordinates of e_i* (x) [e_j (x) e_k].
        let w2rank = w2.module.module.zrank();
        let mut psi = IntMatrix::zero(dim, dim);
        let t = tensor(&standard_module(n)?, &standard_module(n)?)?;
        for (col, l) in kappa.iter().enumerate() {
            let src = format!("(e:{})|(e:{})", l.j, l.k);
            let dense = t.module.dense(&ModuleElement::from_z(&[(&src, 1)]))?;
            let q = w2.maps.project(&dense);
            for (t_idx, &c) in q.z.iter().enumerate() {
                if c != 0 {
                    let row = (l.i as usize - 1) * w2rank + t_idx;
                    psi.set(row, col, c);
                }
            }
        }
        let psi_inv = psi
            .inverse_unimodular()
            .expect("kappa identification is a unimodular change of basis");
        let kappa_index = kappa.iter().enumerate().map(|(c, &l)| (l, c)).collect();
        Ok(KappaOracle { n, tensor_mod: o, psi, psi_inv, kappa, kappa_index })
    }

    /// Act by one letter on an element written in kappa coordinates.
    pub fn act(&self, letter: &Letter, x: &ModuleElement) -> Result<ModuleElement, IaError> {
        let dim = self.kappa.len();
        let mut vec = vec![0; dim];
        for (lbl, &c) in &x.z {
            let l = KappaLabel::parse(lbl)
                .ok_or_else(|| ExactError::ModuleMismatch(lbl.clone()))?;
            let idx =
                *self.kappa_index.get(&l).ok_or_else(|| ExactError::ModuleMismatch(lbl.clone()))?;
            vec[idx] = c;
        }
        let in_tensor = self.psi.mul_vec(&vec);
        let map = self.tensor_mod.action.letter_map(letter)?;
        let img = map.apply(&crate::exactalg::DenseElt { z: in_tensor, f: Vec::new() });
        let back = self.psi_inv.mul_vec(&img.z);
        let mut out = ModuleElement::zero();
        for (idx, &c) in back.iter().enumerate() {
            if c != 0 {
                out.z.insert(self.kappa[idx].label(), c);
            }
        }
        Ok(out)
    }
}
