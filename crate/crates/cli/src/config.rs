//! Run configuration: a single JSON document mirroring the training
//! configuration plus the dataset manifest path and ablation flags.
//! Unknown keys are rejected; `--set key=value` overrides apply by dotted
//! path before validation, and all validation problems are reported at
//! once.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use gi_core::loss::LossConfig;
use gi_core::train::{AblationFlags, TrainConfig};
use gi_core::{Error, Result};

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub no_group_level: bool,
    pub no_item_level: bool,
    pub no_item_enhancement: bool,
    pub no_context_enhancement: bool,
    /// Disables both contrastive losses.
    pub no_ssl: bool,
    pub no_ssl1: bool,
    pub no_ssl2: bool,
    pub const_beta: Option<f64>,
    pub swap_anneal_weights: bool,
}

impl AblationConfig {
    pub fn to_flags(&self) -> AblationFlags {
        AblationFlags {
            no_group_level: self.no_group_level,
            no_item_level: self.no_item_level,
            no_item_enhancement: self.no_item_enhancement,
            no_context_enhancement: self.no_context_enhancement,
            no_ssl1: self.no_ssl1 || self.no_ssl,
            no_ssl2: self.no_ssl2 || self.no_ssl,
            const_beta: self.const_beta,
            swap_anneal_weights: self.swap_anneal_weights,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Dataset manifest path (written by `prepare` or `synth`).
    pub manifest: String,
    pub d: usize,
    pub layers: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub gamma: f64,
    pub eval_ks: Vec<usize>,
    pub loss: LossConfig,
    pub ablation: AblationConfig,
    /// Cold-start cap: keep at most this many training memberships per user.
    pub coldstart_k: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        RunConfig {
            manifest: String::new(),
            d: t.d,
            layers: t.layers,
            lr: t.lr,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            patience: t.patience,
            seed: t.seed,
            gamma: t.gamma,
            eval_ks: t.eval_ks,
            loss: t.loss,
            ablation: AblationConfig::default(),
            coldstart_k: None,
        }
    }
}

impl RunConfig {
    pub fn to_train_config(&self) -> TrainConfig {
        TrainConfig {
            d: self.d,
            layers: self.layers,
            lr: self.lr,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            seed: self.seed,
            gamma: self.gamma,
            eval_ks: self.eval_ks.clone(),
            loss: self.loss,
            ablation: self.ablation.to_flags(),
        }
    }

    /// Every validation problem, not just the first.
    pub fn validation_errors(&self) -> Vec<String> {
        let mut problems = self.to_train_config().validation_errors();
        if self.manifest.is_empty() {
            problems.push("manifest path must be set".into());
        }
        if let Some(k) = self.coldstart_k {
            if k < 1 {
                problems.push(format!("coldstart_k must be >= 1, got {k}"));
            }
        }
        if self.ablation.no_ssl && (self.ablation.no_ssl1 || self.ablation.no_ssl2) {
            // consistent but redundant; normalize silently
            log::debug!("no_ssl already implies no_ssl1 and no_ssl2");
        }
        problems
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.validation_errors();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("\n")))
        }
    }

    /// Canonical JSON form: embedded in checkpoints and hashed into the
    /// reproducibility block.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Apply one `key=value` override at a dotted path inside a JSON tree.
/// The value parses as JSON when possible and falls back to a string.
fn apply_override(tree: &mut serde_json::Value, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {spec:?} is not key=value")))?;
    let value: serde_json::Value = serde_json::from_str(raw)
        .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let mut node = tree;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node.as_object_mut().ok_or_else(|| {
            Error::Config(format!("override path {path:?} crosses a non-object"))
        })?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj
            .entry(part.to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    unreachable!("loop returns on last segment")
}

/// Load a config file, apply `--set` overrides and an optional seed
/// override, and reject unknown keys.
pub fn load_run_config(
    path: &Path,
    overrides: &[String],
    seed: Option<u64>,
) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut tree: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("bad config JSON: {e}")))?;
    for spec in overrides {
        apply_override(&mut tree, spec)?;
    }
    if let Some(s) = seed {
        apply_override(&mut tree, &format!("seed={s}"))?;
    }
    let cfg: RunConfig = serde_json::from_value(tree)
        .map_err(|e| Error::Config(format!("invalid config: {e}")))?;
    Ok(cfg)
}
