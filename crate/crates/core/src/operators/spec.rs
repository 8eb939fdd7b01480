use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::blocks::BlockSet;
use crate::error::{Error, Result};
use crate::model::ThetaForm;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    /// Plain identity; used by the prototypical-network baseline.
    Identity,
    /// Similarity table read from a CSV file.
    SemanticFile,
    /// Path similarity over a taxonomy file.
    TaxonomyPath,
    /// Cosine similarity of the dataset's class attributes.
    AttributeCosine,
    /// Cosine similarity of the current prototypes.
    ProtoCosine,
    /// Negative squared distance between the current (unit) prototypes.
    ProtoL2,
    AuxSeenSelf,
    AuxNovelSelf,
    /// Novel→seen attention in a learned key space.
    KeyAttention,
}

impl OperatorKind {
    pub fn is_dynamic(self) -> bool {
        matches!(self, Self::ProtoCosine | Self::ProtoL2 | Self::KeyAttention)
    }

    pub fn is_auxiliary(self) -> bool {
        matches!(self, Self::AuxSeenSelf | Self::AuxNovelSelf)
    }

    /// Kinds backed by a side-information similarity table.
    pub fn is_semantic(self) -> bool {
        matches!(self, Self::SemanticFile | Self::TaxonomyPath | Self::AttributeCosine)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Identity => "identity",
            Self::SemanticFile => "semantic_file",
            Self::TaxonomyPath => "taxonomy_path",
            Self::AttributeCosine => "attribute_cosine",
            Self::ProtoCosine => "proto_cosine",
            Self::ProtoL2 => "proto_l2",
            Self::AuxSeenSelf => "aux_seen_self",
            Self::AuxNovelSelf => "aux_novel_self",
            Self::KeyAttention => "key_attention",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    #[default]
    None,
    /// Row softmax with a learnable temperature (initialized to 1).
    RowSoftmax,
}

fn default_true() -> bool {
    true
}

/// One member of the operator set of a graph-convolution layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorSpec {
    pub kind: OperatorKind,
    #[serde(default)]
    pub normalization: Normalization,
    #[serde(default = "all_blocks")]
    pub blocks: BlockSet,
    /// Similarity CSV or taxonomy file for `semantic_file` / `taxonomy_path`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<PathBuf>,
    /// Shuffle the class identities of the side information (control runs).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shuffle_seed: Option<u64>,
    /// Overrides the model-wide post-convolution transform form.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<ThetaForm>,
    /// Whether the trade-off scalar `s_B` is learned; fixed at 1 otherwise.
    #[serde(default = "default_true")]
    pub scale_trainable: bool,
}

fn all_blocks() -> BlockSet {
    BlockSet::ALL
}

impl OperatorSpec {
    pub fn new(kind: OperatorKind) -> Self {
        Self {
            kind,
            normalization: Normalization::None,
            blocks: BlockSet::ALL,
            source: None,
            shuffle_seed: None,
            theta: None,
            scale_trainable: true,
        }
    }

    /// A side-information or prototype-similarity operator, softmax-normalized.
    pub fn normalized(kind: OperatorKind) -> Self {
        Self {
            normalization: Normalization::RowSoftmax,
            ..Self::new(kind)
        }
    }

    pub fn with_blocks(mut self, blocks: BlockSet) -> Self {
        self.blocks = blocks;
        self
    }

    pub fn with_theta(mut self, theta: ThetaForm) -> Self {
        self.theta = Some(theta);
        self
    }

    pub fn with_source(mut self, source: impl Into<PathBuf>) -> Self {
        self.source = Some(source.into());
        self
    }

    pub fn shuffled(mut self, seed: u64) -> Self {
        self.shuffle_seed = Some(seed);
        self
    }

    pub fn fixed_scale(mut self) -> Self {
        self.scale_trainable = false;
        self
    }

    /// Whether the operator carries a learnable temperature.
    pub fn has_temperature(&self) -> bool {
        self.kind == OperatorKind::KeyAttention || self.normalization == Normalization::RowSoftmax
    }

    pub fn label(&self) -> String {
        if self.blocks.is_all() {
            self.kind.name().to_string()
        } else {
            format!("{}{:?}", self.kind.name(), self.blocks)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("operator `{}`: {m}", self.kind.name())));
        if (self.kind.is_auxiliary() || self.kind == OperatorKind::Identity)
            && (self.normalization != Normalization::None || !self.blocks.is_all())
        {
            return bad("fixed block operators are never normalized or masked");
        }
        if self.kind == OperatorKind::KeyAttention && (self.normalization != Normalization::None || !self.blocks.is_all()) {
            return bad("key attention is softmax-normalized internally and lives in the novel→seen block");
        }
        if matches!(self.kind, OperatorKind::SemanticFile | OperatorKind::TaxonomyPath) && self.source.is_none() {
            return bad("a `source` file is required");
        }
        if self.shuffle_seed.is_some() && !self.kind.is_semantic() {
            return bad("only side-information operators can be shuffled");
        }
        Ok(())
    }
}
