//! Class-relation operators: side-information tables, block structure,
//! and the dynamic operators built during a forward pass.

mod blocks;
mod dynamic;
mod similarity;
mod spec;
mod taxonomy;

pub use blocks::{auxiliary_operators, mask_blocks, split_blocks, Block, BlockSet, Layout};
pub use dynamic::{dynamic_prototype_operator, key_attention_operator, normalize_operator, prototype_relation, ProtoMetric};
pub use similarity::{ClassSimilarity, SYMMETRY_TOL};
pub use spec::{Normalization, OperatorKind, OperatorSpec};
pub use taxonomy::{taxonomy_path_similarity, Taxonomy};
