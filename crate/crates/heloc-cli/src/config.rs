use std::fs;
use std::path::Path;

use heloc_core::rsgnn::Activation;
use heloc_core::TrainConfig;

use crate::errors::CliError;
use crate::ioutil;
use crate::ConfigArgs;

impl ConfigArgs {
    /// Resolve the effective training config: profile base, then the config
    /// file, then individual flag overrides.
    pub fn resolve(&self) -> Result<TrainConfig, CliError> {
        let mut cfg = match self.profile.as_str() {
            "desk" => TrainConfig::desk(),
            "paper" => TrainConfig::default(),
            other => {
                return Err(CliError::input(format!(
                    "unknown profile `{other}` (expected `desk` or `paper`)"
                )))
            }
        };
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            cfg.apply_kv_text(&text)
                .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.h {
            cfg.h = v;
        }
        if let Some(v) = self.layers {
            cfg.layers = v;
        }
        if let Some(v) = self.max_depth {
            cfg.max_depth = v;
        }
        if let Some(v) = self.max_paths {
            cfg.max_paths = v;
        }
        if let Some(v) = self.max_nodes {
            cfg.max_nodes = v;
        }
        if let Some(v) = self.lr {
            cfg.lr = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.steps {
            cfg.steps = v;
        }
        if let Some(v) = self.margin {
            cfg.margin = v;
        }
        if let Some(v) = self.triplets_per_graph {
            cfg.triplets_per_graph = v;
        }
        if let Some(v) = &self.activation {
            cfg.activation = Activation::parse(v)
                .ok_or_else(|| CliError::input(format!("unknown activation `{v}`")))?;
        }
        if self.no_nep {
            cfg.no_nep = true;
        }
        if self.no_nro {
            cfg.no_nro = true;
        }
        if self.no_self_attention {
            cfg.no_self_attention = true;
        }
        if self.no_residual {
            cfg.no_residual = true;
        }
        Ok(cfg)
    }
}

/// Write the resolved configuration next to a run's outputs so every run is
/// reproducible from its artifacts alone.
pub fn write_effective_config(
    out_dir: &Path,
    command: &str,
    cfg: &TrainConfig,
    extras: &[(&str, String)],
) -> Result<(), CliError> {
    let mut text = format!("command={command}\n");
    for (k, v) in extras {
        text.push_str(&format!("{k}={v}\n"));
    }
    text.push_str(&cfg.to_kv_text());
    ioutil::atomic_write(&out_dir.join("effective_config.txt"), text.as_bytes())
}
