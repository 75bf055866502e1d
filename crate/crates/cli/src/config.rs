//! The resolved run configuration: a named profile, deep-merged with an
//! optional JSON file, then with command-line overrides.

use std::path::Path;

use anyhow::{bail, Context, Result};
use c3det_core::synthgen::GenConfig;
use c3det_model::evalharness::EvalConfig;
use c3det_model::{ModelConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const PROFILES: [&str; 3] = ["default", "desk", "paper-profile"];

/// Everything a subcommand needs; echoed verbatim so a run can be repeated
/// from the banner alone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResolvedConfig {
    pub profile: String,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub gen: GenConfig,
}

impl ResolvedConfig {
    pub fn profile(name: &str) -> Result<Self> {
        if !PROFILES.contains(&name) {
            bail!("unknown profile {name:?} (expected one of {PROFILES:?})");
        }
        Ok(Self {
            profile: name.to_string(),
            model: ModelConfig::profile(name)?,
            train: TrainConfig::profile(name)?,
            eval: EvalConfig::default(),
            gen: GenConfig::default(),
        })
    }

    /// `profile` (or the file's `"profile"` key, or `"desk"`) overlaid with the file.
    pub fn load(file: Option<&Path>, profile: Option<&str>) -> Result<Self> {
        let overlay = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
                let v: Value = serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
                if !v.is_object() {
                    bail!("config {} must be a JSON object", path.display());
                }
                v
            }
            None => Value::Object(Default::default()),
        };
        let name = profile
            .map(str::to_string)
            .or_else(|| overlay.get("profile").and_then(Value::as_str).map(str::to_string))
            .unwrap_or_else(|| "desk".to_string());
        let mut base = serde_json::to_value(Self::profile(&name)?)?;
        deep_merge(&mut base, overlay);
        base["profile"] = Value::String(name);
        let resolved: Self = serde_json::from_value(base).context("invalid configuration")?;
        resolved.model.validate()?;
        resolved.train.validate()?;
        resolved.gen.validate()?;
        Ok(resolved)
    }

    /// `--seed` drives every random stream of the run.
    pub fn set_seed(&mut self, seed: u64) {
        self.train.seed = seed;
        self.train.click_seed = None;
        self.eval.seed = seed;
        self.gen.seed = seed;
    }

    pub fn banner(&self) -> String {
        format!(
            "resolved config:\n{}",
            serde_json::to_string_pretty(self).expect("config serializes")
        )
    }
}

/// Recursively overlay `patch` onto `base`: objects merge key by key, any
/// other value replaces.
pub fn deep_merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => deep_merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
