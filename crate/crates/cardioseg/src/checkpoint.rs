//! JSON checkpoints: a versioned container of named parameter arrays, the
//! model configuration, its fingerprint and the update counters.
//!
//! Floats are written in shortest round-trip form and parsed exactly, so
//! save, load and save again yields identical bytes.

use std::path::Path;

use cardioseg_core::model::{Discriminator, ModelConfig, ModelParams, Segmentor};
use cardioseg_core::nn::{Param, ParamSet};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io::{read_to_string, write_file};

pub const FORMAT: &str = "cardioseg-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    /// SHA-256 of the compact JSON form of `model`.
    pub config_fingerprint: String,
    pub model: ModelConfig,
    pub segmentor_updates: u64,
    pub discriminator_updates: u64,
    /// Segmentor parameters (`seg.*`) followed by discriminator ones.
    pub params: Vec<Param>,
}

pub fn fingerprint(model: &ModelConfig) -> String {
    let json = serde_json::to_string(model).expect("model config serialises");
    Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

impl Checkpoint {
    pub fn from_params(params: &ModelParams) -> Self {
        let model = params.config();
        let mut all = params.segmentor.params.params.clone();
        if let Some(d) = &params.discriminator {
            all.extend(d.params.params.iter().cloned());
        }
        Self {
            format: FORMAT.into(),
            version: VERSION,
            config_fingerprint: fingerprint(&model),
            model,
            segmentor_updates: params.segmentor_updates,
            discriminator_updates: params.discriminator_updates,
            params: all,
        }
    }

    /// Rebuilds the networks, checking every array against the layout the
    /// configuration implies.
    pub fn to_params(&self, path: &Path) -> Result<ModelParams> {
        let bad = |message: String| Error::Checkpoint {
            path: path.to_path_buf(),
            message,
        };
        let seg_template = Segmentor::init(self.model.segmentor.clone(), 0)?;
        let disc_template = match &self.model.discriminator {
            Some(c) => Some(Discriminator::init(c.clone(), 0)?),
            None => None,
        };
        let mut expected: Vec<&Param> = seg_template.params.params.iter().collect();
        if let Some(d) = &disc_template {
            expected.extend(&d.params.params);
        }
        if expected.len() != self.params.len() {
            return Err(bad(format!(
                "{} parameter arrays, configuration implies {}",
                self.params.len(),
                expected.len()
            )));
        }
        for (want, got) in expected.iter().zip(&self.params) {
            if want.name != got.name || want.shape != got.shape {
                return Err(bad(format!(
                    "array `{}` {:?} where `{}` {:?} was expected",
                    got.name, got.shape, want.name, want.shape
                )));
            }
            if got.data.len() != got.shape.iter().product::<usize>() {
                return Err(bad(format!("array `{}` has {} values", got.name, got.data.len())));
            }
            if got.data.iter().any(|v| !v.is_finite()) {
                return Err(bad(format!("array `{}` holds non-finite values", got.name)));
            }
        }
        let n_seg = seg_template.params.params.len();
        let segmentor = Segmentor {
            config: self.model.segmentor.clone(),
            params: ParamSet {
                params: self.params[..n_seg].to_vec(),
            },
        };
        let discriminator = disc_template.map(|d| Discriminator {
            config: d.config,
            params: ParamSet {
                params: self.params[n_seg..].to_vec(),
            },
        });
        Ok(ModelParams {
            segmentor,
            discriminator,
            segmentor_updates: self.segmentor_updates,
            discriminator_updates: self.discriminator_updates,
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string(self).expect("checkpoint serialises");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, self.to_json())
    }

    /// Parses and verifies format, version and fingerprint.
    pub fn load(path: &Path) -> Result<Self> {
        let text = read_to_string(path)?;
        let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Checkpoint {
            path: path.to_path_buf(),
            message: format!("line {}, column {}: {e}", e.line(), e.column()),
        })?;
        if ck.format != FORMAT || ck.version != VERSION {
            return Err(Error::Checkpoint {
                path: path.to_path_buf(),
                message: format!(
                    "unsupported format {} version {} (expected {FORMAT} version {VERSION})",
                    ck.format, ck.version
                ),
            });
        }
        let actual = fingerprint(&ck.model);
        if actual != ck.config_fingerprint {
            return Err(Error::FingerprintMismatch {
                expected: ck.config_fingerprint,
                found: actual,
            });
        }
        Ok(ck)
    }

    /// Fails unless `model` is the configuration the checkpoint was
    /// trained with.
    pub fn require_model(&self, model: &ModelConfig) -> Result<()> {
        let found = fingerprint(model);
        if found != self.config_fingerprint {
            return Err(Error::FingerprintMismatch {
                expected: self.config_fingerprint.clone(),
                found,
            });
        }
        Ok(())
    }
}
