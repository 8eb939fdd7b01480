//! Named model variants. Each is plain configuration over a base config.

use super::config::{ModelConfig, SpecialCase, ThetaForm};
use crate::error::{Error, Result};
use crate::operators::{Block, BlockSet, OperatorKind, OperatorSpec};

pub const VARIANTS: &[&str] = &[
    "pn_plus",
    "dfsl_avg",
    "dfsl_att",
    "gcgpn",
    "gcgpn-aux",
    "gcgpn-split",
    "gcgpn-aux-split",
    "gcgpn-cos-aux",
    "gcgpn-l2-aux",
    "gcgpn-aux-sn",
    "gcgpn-aux-fctheta",
];

fn aux() -> [OperatorSpec; 2] {
    [OperatorSpec::new(OperatorKind::AuxSeenSelf), OperatorSpec::new(OperatorKind::AuxNovelSelf)]
}

fn split(semantic: &OperatorSpec) -> Vec<OperatorSpec> {
    Block::ALL
        .into_iter()
        .map(|b| semantic.clone().with_blocks(BlockSet::only(b)))
        .collect()
}

/// Builds variant `name` on top of `base` (extractor, dimensions, layers).
/// `semantic` is the side-information operator used by the variants that
/// need one; it is normalized by row softmax.
pub fn variant(name: &str, base: &ModelConfig, semantic: &OperatorSpec) -> Result<ModelConfig> {
    let mut semantic = semantic.clone();
    semantic.normalization = crate::operators::Normalization::RowSoftmax;
    semantic.blocks = BlockSet::ALL;

    let mut cfg = ModelConfig {
        special_case: SpecialCase::None,
        theta_form: ThetaForm::Diagonal,
        ..base.clone()
    };
    cfg.operators = match name {
        "pn_plus" => {
            cfg.special_case = SpecialCase::PnPlus;
            vec![OperatorSpec::new(OperatorKind::Identity)]
        }
        "dfsl_avg" => {
            cfg.special_case = SpecialCase::DfslAvg;
            aux().to_vec()
        }
        "dfsl_att" => {
            cfg.special_case = SpecialCase::DfslAvg;
            vec![OperatorSpec::new(OperatorKind::KeyAttention)]
        }
        "gcgpn" => vec![semantic],
        "gcgpn-aux" => [vec![semantic], aux().to_vec()].concat(),
        "gcgpn-split" => split(&semantic),
        "gcgpn-aux-split" => [split(&semantic), aux().to_vec()].concat(),
        "gcgpn-cos-aux" => [vec![OperatorSpec::normalized(OperatorKind::ProtoCosine)], aux().to_vec()].concat(),
        "gcgpn-l2-aux" => [vec![OperatorSpec::normalized(OperatorKind::ProtoL2)], aux().to_vec()].concat(),
        "gcgpn-aux-sn" => [vec![semantic.with_blocks(BlockSet::only(Block::Sn))], aux().to_vec()].concat(),
        "gcgpn-aux-fctheta" | "gcgpn-aux-fcθ" => {
            cfg.theta_form = ThetaForm::Full;
            [vec![semantic], aux().to_vec()].concat()
        }
        other => {
            return Err(Error::Config(format!(
                "unknown variant `{other}`; expected one of {}",
                VARIANTS.join(", ")
            )))
        }
    };
    cfg.resolved()
}
