//! Run configuration: one TOML file with a section per stage. Every field
//! has a default and unknown keys are rejected.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use gcgpn::episodes::{generate_synthetic, load_dataset, Dataset, SynthSpec};
use gcgpn::eval::EvalConfig;
use gcgpn::model::{variant, ModelConfig, VARIANTS};
use gcgpn::operators::{OperatorKind, OperatorSpec};
use gcgpn::trainer::TrainConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// A dataset directory written by `synth`. When absent the synthetic
    /// benchmark described by `synth` is generated in memory.
    pub path: Option<PathBuf>,
    pub synth: SynthSpec,
}

impl DataSection {
    pub fn load(&self) -> Result<Dataset> {
        match &self.path {
            Some(p) => load_dataset(p).with_context(|| format!("loading dataset from {}", p.display())),
            None => generate_synthetic(&self.synth).context("generating the synthetic dataset"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// Named preset applied on top of `base`; `None` uses `base` verbatim.
    pub variant: Option<String>,
    /// Side-information operator used by presets that need one.
    pub semantic: OperatorSpec,
    pub base: ModelConfig,
    pub init_seed: u64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            variant: Some("gcgpn-aux".into()),
            semantic: OperatorSpec::new(OperatorKind::AttributeCosine),
            base: ModelConfig::default(),
            init_seed: 0,
        }
    }
}

impl ModelSection {
    pub fn resolve(&self, name: Option<&str>) -> Result<ModelConfig> {
        match name.or(self.variant.as_deref()) {
            Some(v) => Ok(variant(v, &self.base, &self.semantic)?),
            None => Ok(self.base.resolved()?),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorSource {
    #[default]
    AttributeCosine,
    TaxonomyPath,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OperatorSection {
    pub kind: OperatorSource,
    /// Tab-separated `parent<TAB>child` edges, for `taxonomy_path`.
    pub taxonomy: Option<PathBuf>,
}

const ABLATION_VARIANTS: &[&str] = &[
    "pn_plus",
    "dfsl_avg",
    "gcgpn",
    "gcgpn-aux",
    "gcgpn-split",
    "gcgpn-aux-split",
    "gcgpn-cos-aux",
    "gcgpn-l2-aux",
    "gcgpn-aux-sn",
    "gcgpn-aux-fctheta",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateSection {
    pub variants: Vec<String>,
}

impl Default for AblateSection {
    fn default() -> Self {
        Self {
            variants: ABLATION_VARIANTS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub ks: Vec<usize>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self { ks: vec![1, 2, 5, 10] }
    }
}

/// The gradient check runs on a small fixed synthetic task, independent of
/// `[data]`, so that finite differences stay cheap.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckSection {
    pub h: f64,
    pub tolerance: f64,
    pub variants: Vec<String>,
    /// Uniform perturbation applied to non-extractor parameters before the
    /// check, to move away from the identity initialization.
    pub perturbation: f64,
}

impl Default for GradcheckSection {
    fn default() -> Self {
        Self {
            h: 1e-5,
            tolerance: 1e-4,
            variants: VARIANTS.iter().map(|s| s.to_string()).collect(),
            perturbation: 0.1,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed. When set it replaces the train, eval and model-init
    /// seeds of the sections below.
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    /// Checkpoint evaluated by `eval`.
    pub checkpoint: Option<PathBuf>,
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub operator: OperatorSection,
    pub ablate: AblateSection,
    pub sweep: SweepSection,
    pub gradcheck: GradcheckSection,
}

impl RunConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        toml::from_str(text).with_context(|| format!("invalid config {}", origin.display()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text, path)
    }

    /// Applies command-line overrides and propagates the master seed.
    pub fn finalize(mut self, seed: Option<u64>, out: Option<PathBuf>) -> Result<Self> {
        if seed.is_some() {
            self.seed = seed;
        }
        if out.is_some() {
            self.out = out;
        }
        if let Some(s) = self.seed {
            self.train.seed = s;
            self.eval.seed = s;
            self.model.init_seed = s;
        }
        self.model.resolve(None).context("invalid [model] section")?;
        for (key, names) in [("ablate.variants", &self.ablate.variants), ("gradcheck.variants", &self.gradcheck.variants)] {
            for name in names {
                self.model.resolve(Some(name)).with_context(|| format!("invalid {key}"))?;
            }
        }
        if self.sweep.ks.contains(&0) {
            bail!("sweep.ks: shot counts must be positive");
        }
        self.train.validate().context("invalid [train] section")?;
        Ok(self)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).context("serializing the effective config")
    }
}
