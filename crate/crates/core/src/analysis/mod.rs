//! Cost accounting, closed-form module costs, receptive-field reach,
//! gradient checks and feature similarity.

pub mod cost;
pub mod formula;
pub mod gradcheck;
pub mod influence;
pub mod mpl;
pub mod similarity;

pub use cost::{count_block, count_costs, Breakdown, Category, CostRecord, CostReport};
pub use formula::{formula_costs, FormulaArgs, FormulaCosts, ModuleKind};
pub use gradcheck::{grad_check, gradcheck_suite, primitive_suite, Differentiable, GradReport, NamedCheck, Primitive};
pub use influence::{influence_mask, InfluenceMask, InfluenceMode};
pub use mpl::{max_path_length, MplReport};
pub use similarity::{compare_similarity, diag_similarity, SimilarityComparison, StageProbe};
