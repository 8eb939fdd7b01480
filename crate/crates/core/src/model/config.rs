use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operators::{OperatorKind, OperatorSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExtractorConfig {
    /// Features are the raw inputs; requires `d_in == d`.
    Identity,
    Linear,
    /// Hidden layers with ReLU, then a linear map to `d`.
    Mlp { hidden: Vec<usize> },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Identity,
    Relu,
}

/// Post-convolution transform applied after neighbor aggregation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaForm {
    /// Learnable `d`-vector applied elementwise.
    #[default]
    Diagonal,
    /// Learnable `d × d` matrix.
    Full,
    /// Identity, not learned.
    FixedIdentity,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpecialCase {
    #[default]
    None,
    /// Prototypical network on the joint label space: no relation modeling.
    PnPlus,
    /// Average weight generator: block-identity operators, diagonal novel transform.
    DfslAvg,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub extractor: ExtractorConfig,
    pub d_in: usize,
    /// Feature and prototype dimension.
    pub d: usize,
    pub layers: usize,
    pub rho: Activation,
    pub theta_form: ThetaForm,
    pub operators: Vec<OperatorSpec>,
    pub tau_init: f64,
    pub special_case: SpecialCase,
    /// Key-space dimension for key attention; defaults to `d`.
    pub d_key: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            extractor: ExtractorConfig::Mlp { hidden: vec![64] },
            d_in: 32,
            d: 32,
            layers: 1,
            rho: Activation::Identity,
            theta_form: ThetaForm::Diagonal,
            operators: vec![
                OperatorSpec::normalized(OperatorKind::AttributeCosine),
                OperatorSpec::new(OperatorKind::AuxSeenSelf),
                OperatorSpec::new(OperatorKind::AuxNovelSelf),
            ],
            tau_init: 1.0,
            special_case: SpecialCase::None,
            d_key: None,
        }
    }
}

impl ModelConfig {
    /// Applies the constraints implied by `special_case` and validates.
    pub fn resolved(&self) -> Result<ModelConfig> {
        let mut cfg = self.clone();
        match cfg.special_case {
            SpecialCase::None => {}
            SpecialCase::PnPlus => {
                cfg.operators = vec![OperatorSpec::new(OperatorKind::Identity)
                    .with_theta(ThetaForm::FixedIdentity)
                    .fixed_scale()];
                cfg.rho = Activation::Identity;
            }
            SpecialCase::DfslAvg => {
                let extra: Vec<OperatorSpec> = cfg
                    .operators
                    .iter()
                    .filter(|o| o.kind == OperatorKind::KeyAttention)
                    .cloned()
                    .collect();
                cfg.operators = vec![
                    OperatorSpec::new(OperatorKind::AuxSeenSelf)
                        .with_theta(ThetaForm::FixedIdentity)
                        .fixed_scale(),
                    OperatorSpec::new(OperatorKind::AuxNovelSelf)
                        .with_theta(ThetaForm::Diagonal)
                        .fixed_scale(),
                ];
                cfg.operators.extend(extra);
                cfg.rho = Activation::Identity;
                cfg.layers = 1;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.d == 0 || self.d_in == 0 {
            return bad("model dimensions must be positive".into());
        }
        if self.layers == 0 {
            return bad("at least one graph-convolution layer is required".into());
        }
        if self.operators.is_empty() {
            return bad("the operator set is empty".into());
        }
        if self.extractor == ExtractorConfig::Identity && self.d_in != self.d {
            return bad(format!("identity extractor needs d_in == d, got {} and {}", self.d_in, self.d));
        }
        if let ExtractorConfig::Mlp { hidden } = &self.extractor {
            if hidden.contains(&0) {
                return bad("mlp hidden widths must be positive".into());
            }
        }
        if !(self.tau_init > 0.0 && self.tau_init.is_finite()) {
            return bad("tau_init must be positive".into());
        }
        for op in &self.operators {
            op.validate()?;
        }
        Ok(())
    }

    pub fn theta_for(&self, op: &OperatorSpec) -> ThetaForm {
        op.theta.unwrap_or(self.theta_form)
    }

    pub fn key_dim(&self) -> usize {
        self.d_key.unwrap_or(self.d)
    }
}
