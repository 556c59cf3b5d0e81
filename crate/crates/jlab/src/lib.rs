//! Exact-arithmetic computational algebra for graded `SL_n(Z)`-module actions.
//!
//! The library works over Z and F2 only, with no floating point anywhere:
//!
//! * [`exactalg`] — integer matrices, Smith normal form, finitely generated
//!   abelian targets, mixed Z/F2 modules and characters on them;
//! * [`regmod`] — n-indexed gradings, elementary `E_ij`/`F_ij` actions, the
//!   regular-module calculus (sums, tensors, quotients, regularity checker);
//! * [`ia_ab`] — the abelianization of `IA_n` as a concrete regular module
//!   with its kappa basis and an independent tensor-built action oracle;
//! * [`freegroup`] — free-group words, automorphisms given by generator
//!   images, the Magnus generators and their relations, truncated Magnus
//!   expansion and the degree-1 Johnson class;
//! * [`genericize`] — character supports, the disjointness potential, the
//!   orbit hill-climb, interval packing and coefficient genericization;
//! * [`cgseq`] — construction and machine verification of centralizing
//!   generating-sequence certificates;
//! * [`torelli`] — the Torelli abelianization carrier: symplectic homology,
//!   the F2-ring B3, the fiber product W and its graded description.

pub mod cgseq;
pub mod exactalg;
pub mod freegroup;
pub mod genericize;
pub mod ia_ab;
pub mod jsonio;
pub mod randchar;
pub mod regmod;
pub mod torelli;
