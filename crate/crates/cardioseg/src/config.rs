//! The TOML run configuration: a flat file with one section per command.
//!
//! ```toml
//! seed = 1
//!
//! [generate]
//! count = 50
//! preset = "source"
//!
//! [train]
//! mode = "uda"
//! source_manifest = "source/manifest.toml"
//! target_manifest = "target/manifest.toml"
//! steps = 300
//! ```
//!
//! Unknown keys are rejected everywhere. Relative paths are taken relative
//! to the configuration file.

use std::path::{Path, PathBuf};

use cardioseg_core::ctr::CtrOptions;
use cardioseg_core::data::{Domain, NUM_CLASSES};
use cardioseg_core::loss::LossConfig;
use cardioseg_core::model::{DiscriminatorConfig, ModelConfig, SegmentorConfig};
use cardioseg_core::nn::AdamConfig;
use cardioseg_core::phantom::{PhantomSampler, PhantomSpec};
use cardioseg_core::train::{TrainConfig, TrainMode};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{parse_toml, read_to_string};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds every random choice of the command; `--seed` overrides it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Output directory; `--out` overrides it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generate: Option<GenerateSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predict: Option<PredictSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ctr: Option<CtrSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evaluate: Option<EvaluateSection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerPreset {
    #[default]
    Source,
    ShiftedTarget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateSection {
    /// Number of randomly drawn phantoms.
    #[serde(default)]
    pub count: usize,
    #[serde(default = "default_side")]
    pub height: usize,
    #[serde(default = "default_side")]
    pub width: usize,
    #[serde(default)]
    pub preset: SamplerPreset,
    /// Replaces the preset ranges entirely.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampler: Option<PhantomSampler>,
    #[serde(default = "default_domain")]
    pub domain: Domain,
    #[serde(default = "default_prefix")]
    pub id_prefix: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pixel_spacing: Option<(f64, f64)>,
    /// Explicit phantoms, written after the random ones.
    #[serde(default, rename = "spec", skip_serializing_if = "Vec::is_empty")]
    pub specs: Vec<PhantomSpec>,
}

fn default_side() -> usize {
    64
}

fn default_domain() -> Domain {
    Domain::Source
}

fn default_prefix() -> String {
    "phantom".into()
}

impl GenerateSection {
    pub fn sampler(&self) -> PhantomSampler {
        self.sampler.clone().unwrap_or_else(|| match self.preset {
            SamplerPreset::Source => PhantomSampler::source(self.height, self.width),
            SamplerPreset::ShiftedTarget => PhantomSampler::shifted_target(self.height, self.width),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub mode: TrainMode,
    /// Labeled data.
    pub source_manifest: PathBuf,
    /// Unlabeled data: the target domain (uda) or an extra unlabeled pool
    /// (semi_supervised).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_manifest: Option<PathBuf>,
    /// Keeps this fraction of the source masks. In semi_supervised mode the
    /// rest of the source images become unlabeled training data; in the
    /// supervised modes they are dropped.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labeled_fraction: Option<f64>,
    pub steps: u64,
    /// Also write a checkpoint every this many steps (0: final only).
    #[serde(default)]
    pub checkpoint_every: u64,
    /// Defaults to the desk-scale networks at 64×64.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub optimizer: AdamConfig,
    #[serde(default = "default_d_steps")]
    pub d_steps_per_s_step: u32,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default)]
    pub augmentation: bool,
}

fn default_d_steps() -> u32 {
    2
}

pub fn default_model() -> ModelConfig {
    ModelConfig {
        segmentor: SegmentorConfig::desk(64, 64, NUM_CLASSES),
        discriminator: Some(DiscriminatorConfig::desk(NUM_CLASSES)),
    }
}

impl TrainSection {
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            mode: self.mode,
            model: self.model.clone().unwrap_or_else(default_model),
            optimizer: self.optimizer,
            d_steps_per_s_step: self.d_steps_per_s_step,
            loss: self.loss,
            segmentor_steps: self.steps,
            seed,
            augmentation: self.augmentation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictSection {
    pub checkpoint: PathBuf,
    pub manifest: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CtrSection {
    /// Entries whose masks are measured.
    pub manifest: PathBuf,
    #[serde(default)]
    pub options: CtrOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateSection {
    pub checkpoint: PathBuf,
    pub manifest: PathBuf,
    /// When given, must match the checkpoint's configuration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub options: CtrOptions,
}

impl RunConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        parse_toml(text, path)
    }

    /// Reads a configuration and anchors its relative paths at the file's
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::parse(&read_to_string(path)?, path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.rebase(base);
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(o) = &mut self.out {
            fix(o);
        }
        if let Some(t) = &mut self.train {
            fix(&mut t.source_manifest);
            if let Some(p) = &mut t.target_manifest {
                fix(p);
            }
        }
        if let Some(p) = &mut self.predict {
            fix(&mut p.checkpoint);
            fix(&mut p.manifest);
        }
        if let Some(c) = &mut self.ctr {
            fix(&mut c.manifest);
        }
        if let Some(e) = &mut self.evaluate {
            fix(&mut e.checkpoint);
            fix(&mut e.manifest);
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn section<'a, T>(&'a self, s: &'a Option<T>, name: &str) -> Result<&'a T> {
        s.as_ref()
            .ok_or_else(|| Error::Config(format!("the configuration has no [{name}] section")))
    }

    /// The configuration as it was actually run: seed filled in, defaults
    /// made explicit, output directory left out so that reruns elsewhere
    /// produce the same snapshot.
    pub fn resolved(&self) -> Self {
        let mut r = self.clone();
        r.seed = Some(self.seed());
        r.out = None;
        if let Some(t) = &mut r.train {
            t.model.get_or_insert_with(default_model);
        }
        r
    }
}
