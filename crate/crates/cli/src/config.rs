//! Experiment configuration: one TOML file per experiment, parsed strictly
//! (unknown keys rejected) and serialized to a canonical form whose hash
//! identifies the run in stage manifests.

use std::path::{Path, PathBuf};

use fakebench_core::attacks::{AttackConfig, AttackKind, NormP};
use fakebench_core::tensor::fnv1a64;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    /// 0 means one worker per logical core.
    #[serde(default)]
    pub workers: usize,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub generator: GeneratorSpec,
    pub model: ModelSpec,
    #[serde(default)]
    pub attacks: Vec<AttackSpec>,
    #[serde(default)]
    pub eval: EvalSpec,
    #[serde(default)]
    pub transfer: TransferSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub dir: PathBuf,
    pub n_real: usize,
    pub n_fake: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorSpec {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f32,
    /// Number of procedural reals the autoencoder pre-training consumes.
    pub train_images: usize,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self { epochs: 6, batch: 32, lr: 2e-3, train_images: 1600 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    /// pixel-cnn | spectral-cnn | pixel-cnn-small
    pub arch: String,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default = "default_lr")]
    pub lr: f32,
    #[serde(default = "default_true")]
    pub augment: bool,
}

fn default_epochs() -> usize {
    20
}
fn default_batch() -> usize {
    32
}
fn default_lr() -> f32 {
    1e-3
}
fn default_true() -> bool {
    true
}

/// Attack stanza: kind plus optional overrides of that kind's defaults.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub iterations: Option<usize>,
    pub step: Option<f32>,
    pub pixel_cap: Option<f32>,
    pub p: Option<NormP>,
    pub epsilon: Option<f32>,
    pub c0: Option<f32>,
    pub c1: Option<f32>,
    pub bisection_rounds: Option<usize>,
    /// Cap on the number of test images attacked (0 = all).
    #[serde(default)]
    pub n_images: usize,
    /// Patch/latent training budget override (0 = kind default).
    #[serde(default)]
    pub train_images: usize,
}

impl AttackSpec {
    pub fn of_kind(kind: AttackKind) -> Self {
        Self {
            kind,
            iterations: None,
            step: None,
            pixel_cap: None,
            p: None,
            epsilon: None,
            c0: None,
            c1: None,
            bisection_rounds: None,
            n_images: 0,
            train_images: 0,
        }
    }

    pub fn resolve(&self, seed: u64) -> AttackConfig {
        let base = match self.kind {
            AttackKind::L2Min => AttackConfig::l2_min(),
            AttackKind::L0LowBit => AttackConfig::l0_lowbit(),
            AttackKind::Reverse => AttackConfig::reverse(),
            AttackKind::LossMax => {
                AttackConfig::loss_max(self.epsilon.unwrap_or(0.4), self.p.unwrap_or(NormP::L0))
            }
            AttackKind::Patch => AttackConfig::patch(),
            AttackKind::Latent => AttackConfig::latent(),
        };
        AttackConfig {
            kind: self.kind,
            iterations: self.iterations.unwrap_or(base.iterations),
            step: self.step.unwrap_or(base.step),
            pixel_cap: self.pixel_cap.or(base.pixel_cap),
            p: self.p.unwrap_or(base.p),
            epsilon: self.epsilon.unwrap_or(base.epsilon),
            c0: self.c0.unwrap_or(base.c0),
            c1: self.c1.unwrap_or(base.c1),
            bisection_rounds: self.bisection_rounds.unwrap_or(base.bisection_rounds),
            seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSpec {
    /// False-positive-rate target for tau calibration.
    pub target_fpr: f64,
    pub laundering: Vec<LaunderSpec>,
}

impl Default for EvalSpec {
    fn default() -> Self {
        Self {
            target_fpr: 0.05,
            laundering: vec![
                LaunderSpec::Jpeg { quality: 80 },
                LaunderSpec::Blur { sigma: 1.0 },
                LaunderSpec::Rescale { scale: 0.5 },
            ],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LaunderSpec {
    Jpeg { quality: u32 },
    Blur { sigma: f32 },
    Rescale { scale: f32 },
}

impl LaunderSpec {
    pub fn name(&self) -> String {
        match self {
            LaunderSpec::Jpeg { quality } => format!("jpeg{quality}"),
            LaunderSpec::Blur { sigma } => format!("blur{sigma}"),
            LaunderSpec::Rescale { scale } => format!("rescale{scale}"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TransferSpec {
    /// Test fakes attacked through the surrogate.
    pub n_images: usize,
    /// Inner iterations of the capped distortion runs.
    pub iterations: usize,
    /// Training epochs for the target/surrogate pair.
    pub epochs: usize,
    /// The attack drives source scores below the threshold whose FPR on the
    /// source's real validation scores equals this value (overdrive).
    pub overdrive_fpr: f64,
}

impl Default for TransferSpec {
    fn default() -> Self {
        Self { n_images: 150, iterations: 150, epochs: 10, overdrive_fpr: 0.75 }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Canonical serialized form; parse(canonical(x)) == x.
    pub fn canonical(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn hash(&self) -> u64 {
        fnv1a64(self.canonical().as_bytes())
    }
}
