//! Experiment configuration: TOML schema, defaults, validation, and the
//! echo/hash pair that ties output directories and checkpoints back to the
//! exact settings that produced them.
//!
//! Unknown keys are hard errors everywhere; a typo must never silently fall
//! back to a default.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::attacks::AttackSpec;
use crate::client::{ClientHyper, WeightMode};
use crate::data::{AugmentationPolicy, SynthParams};
use crate::server::DefenseHyper;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub rounds: u64,
    pub client_fraction: f64,
    pub eval_every: u64,
    pub k: Vec<usize>,
    pub base_seed: u64,
    pub out_dir: String,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            rounds: 100,
            client_fraction: 0.1,
            eval_every: 5,
            k: vec![5, 10, 20],
            base_seed: 0,
            out_dir: "out".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Csv,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub source: DataSource,
    /// Required when source = "csv"; ignored otherwise.
    pub csv_path: Option<String>,
    pub num_users: usize,
    pub num_items: usize,
    pub seq_len_min: usize,
    pub seq_len_max: usize,
    pub transition_skew: f64,
    /// Sequences are truncated to their most recent max_seq_len items.
    pub max_seq_len: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            source: DataSource::Synthetic,
            csv_path: None,
            num_users: 200,
            num_items: 200,
            seq_len_min: 10,
            seq_len_max: 30,
            transition_skew: 0.8,
            max_seq_len: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub dim: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection { dim: 32 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClientSection {
    pub lambda_cl: f64,
    pub lambda_tcr: f64,
    pub tau: f64,
    pub noise_sigma: f64,
    pub local_epochs: usize,
    pub lr: f64,
    pub tcr_window: usize,
    pub item_view_step: f64,
    pub neg_count: usize,
    pub weight_mode: WeightMode,
    pub crop_prob: f64,
    pub crop_ratio: f64,
    pub mask_prob: f64,
    pub mask_ratio: f64,
    pub reorder_prob: f64,
    pub reorder_window: usize,
}

impl Default for ClientSection {
    fn default() -> Self {
        ClientSection {
            lambda_cl: 0.1,
            lambda_tcr: 0.1,
            tau: 0.5,
            noise_sigma: 0.1,
            local_epochs: 2,
            lr: 0.1,
            tcr_window: 3,
            item_view_step: 0.5,
            neg_count: 8,
            weight_mode: WeightMode::Interactions,
            crop_prob: 0.8,
            crop_ratio: 0.6,
            mask_prob: 0.3,
            mask_ratio: 0.3,
            reorder_prob: 0.2,
            reorder_window: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DefenseSection {
    pub lambda_sep: f64,
    pub lambda_var: f64,
    pub tau_sep: f64,
    pub hot_fraction: f64,
    pub sp_fraction: f64,
    pub neighborhood_k: usize,
    pub server_lr: f64,
    pub ema_beta: f64,
    pub steps: usize,
}

impl Default for DefenseSection {
    fn default() -> Self {
        DefenseSection {
            lambda_sep: 0.0,
            lambda_var: 0.0,
            tau_sep: 0.2,
            hot_fraction: 0.05,
            sp_fraction: 0.05,
            neighborhood_k: 5,
            server_lr: 0.1,
            ema_beta: 0.9,
            steps: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub data: DataSection,
    pub model: ModelSection,
    pub client: ClientSection,
    pub defense: DefenseSection,
    pub attack: AttackSpec,
}

impl ExperimentConfig {
    /// Static validation. Attack target ids are checked against the item
    /// universe later, once the dataset is loaded.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |msg: String| Err(ConfigError::Invalid(msg));

        let e = &self.experiment;
        if e.rounds < 1 {
            return bad("experiment.rounds must be >= 1".into());
        }
        if !(e.client_fraction > 0.0 && e.client_fraction <= 1.0) {
            return bad("experiment.client_fraction must be in (0,1]".into());
        }
        if e.eval_every < 1 {
            return bad("experiment.eval_every must be >= 1".into());
        }
        if e.k.is_empty() || e.k.iter().any(|&k| k == 0) {
            return bad("experiment.k must list cutoffs >= 1".into());
        }

        let d = &self.data;
        match d.source {
            DataSource::Csv => {
                if d.csv_path.is_none() {
                    return bad("data.csv_path is required when data.source = \"csv\"".into());
                }
            }
            DataSource::Synthetic => {
                if d.num_users < 1 {
                    return bad("data.num_users must be >= 1".into());
                }
                if d.num_items < 10 {
                    return bad("data.num_items must be >= 10".into());
                }
                if d.seq_len_min < 3 {
                    return bad("data.seq_len_min must be >= 3".into());
                }
                if d.seq_len_max < d.seq_len_min {
                    return bad("data.seq_len_max must be >= data.seq_len_min".into());
                }
                if !(0.0..=1.0).contains(&d.transition_skew) {
                    return bad("data.transition_skew must be in [0,1]".into());
                }
            }
        }
        if d.max_seq_len < 3 {
            return bad("data.max_seq_len must be >= 3".into());
        }

        if self.model.dim < 2 {
            return bad("model.dim must be >= 2".into());
        }

        self.client_hyper()
            .check()
            .map_err(|m| ConfigError::Invalid(format!("client.{m}")))?;
        self.defense_hyper()
            .check()
            .map_err(|m| ConfigError::Invalid(format!("defense.{m}")))?;
        // Item-range checks happen post-load; everything else now.
        self.attack
            .check(usize::MAX)
            .map_err(ConfigError::Invalid)?;
        Ok(())
    }

    pub fn client_hyper(&self) -> ClientHyper {
        let c = &self.client;
        ClientHyper {
            lambda_cl: c.lambda_cl,
            lambda_tcr: c.lambda_tcr,
            tau: c.tau,
            noise_sigma: c.noise_sigma,
            local_epochs: c.local_epochs,
            lr: c.lr,
            tcr_window: c.tcr_window,
            item_view_step: c.item_view_step,
            neg_count: c.neg_count,
            weight_mode: c.weight_mode,
            augmentation: AugmentationPolicy {
                crop_prob: c.crop_prob,
                crop_ratio: c.crop_ratio,
                mask_prob: c.mask_prob,
                mask_ratio: c.mask_ratio,
                reorder_prob: c.reorder_prob,
                reorder_window: c.reorder_window,
            },
        }
    }

    pub fn defense_hyper(&self) -> DefenseHyper {
        let s = &self.defense;
        DefenseHyper {
            lambda_sep: s.lambda_sep,
            lambda_var: s.lambda_var,
            tau_sep: s.tau_sep,
            hot_fraction: s.hot_fraction,
            sp_fraction: s.sp_fraction,
            neighborhood_k: s.neighborhood_k,
            server_lr: s.server_lr,
            ema_beta: s.ema_beta,
            steps: s.steps,
        }
    }

    pub fn synth_params(&self, seed: u64) -> SynthParams {
        let d = &self.data;
        SynthParams {
            num_users: d.num_users,
            num_items: d.num_items,
            seq_len_min: d.seq_len_min,
            seq_len_max: d.seq_len_max,
            transition_skew: d.transition_skew,
            seed,
        }
    }

    /// Canonical serialized form, written next to the metrics as
    /// `config.echo`. parse(echo(c)) == c.
    pub fn echo(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the canonical echo; checkpoints embed it so a model can
    /// refuse to resume under different settings.
    pub fn hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.echo().as_bytes());
        h.finalize().into()
    }

    /// Resume-compatibility hash: like `hash`, but with the run-control
    /// fields (output directory, total rounds) normalized away. A checkpoint
    /// may legitimately seed a longer run in a different directory; every
    /// state-defining setting must still match bit for bit.
    pub fn state_hash(&self) -> [u8; 32] {
        let mut c = self.clone();
        c.experiment.out_dir = String::new();
        c.experiment.rounds = 0;
        let mut h = Sha256::new();
        h.update(c.echo().as_bytes());
        h.finalize().into()
    }

    pub fn hash_hex(&self) -> String {
        self.hash().iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub fn parse_config_str(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let cfg: ExperimentConfig =
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    parse_config_str(&text)
}
