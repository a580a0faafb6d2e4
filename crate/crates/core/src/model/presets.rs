use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{ModelConfig, ModelConfigFile};
use crate::error::{Result, SimError};

const BUILTIN: &str = include_str!("../../presets/models.toml");

/// Presets shipped with the crate.
pub fn builtin_presets() -> BTreeMap<String, ModelConfig> {
    parse_presets(BUILTIN).expect("bundled presets are valid")
}

/// Reads a preset file: one TOML table per model, keyed by model name.
pub fn load_presets(path: impl AsRef<Path>) -> Result<BTreeMap<String, ModelConfig>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| SimError::io(path, e))?;
    parse_presets(&text)
}

pub fn parse_presets(text: &str) -> Result<BTreeMap<String, ModelConfig>> {
    let tables: BTreeMap<String, ModelConfigFile> =
        toml::from_str(text).map_err(|e| SimError::Config(format!("model presets: {e}")))?;
    tables
        .into_iter()
        .map(|(name, t)| {
            let cfg = ModelConfig::new(
                name.clone(),
                t.num_layers,
                t.hidden_dim,
                t.num_heads,
                t.ffn_dim,
                t.vocab_size,
                t.bytes_per_param,
            )?;
            Ok((name, cfg))
        })
        .collect()
}
