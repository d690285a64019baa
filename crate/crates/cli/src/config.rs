//! The run configuration: one JSON file, overridable per field from the command line.

use std::path::{Path, PathBuf};

use didex_core::dataset::ExtensionOptions;
use didex_core::diffusion::BackendConfig;
use didex_core::prompt::PromptConfig;
use didex_core::seed;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const EFFECTIVE_CONFIG_FILE: &str = "effective_config.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed; every subsystem seed is derived from it.
    pub seed: u64,
    /// Labeled source dataset (directory or `dataset.json`).
    pub source: Option<PathBuf>,
    pub prompt: PromptConfig,
    pub backend: BackendConfig,
    pub extension: ExtensionOptions,
    /// Toy adaptation scenario; the committed color-shift scenario when unset.
    pub scenario: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            source: None,
            prompt: PromptConfig::default(),
            backend: BackendConfig::mock(),
            extension: ExtensionOptions::default(),
            scenario: None,
        }
    }
}

impl RunConfig {
    /// Relative paths in the file resolve against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
        let mut config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Config { path: path.to_path_buf(), message: e.to_string() })?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        config.source.as_mut().map(resolve);
        config.scenario.as_mut().map(resolve);
        config.extension.depth_dir.as_mut().map(resolve);
        Ok(config)
    }

    /// The config with subsystem seeds split from the root and the backend
    /// environment variables applied.
    pub fn effective(mut self) -> Self {
        self.prompt.seed = seed::derive(self.seed, "prompt");
        self.extension.seed = seed::derive(self.seed, "generation");
        self.backend = self.backend.with_env_overrides();
        self
    }

    pub fn subsample_seed(&self) -> u64 {
        seed::derive(self.seed, "subsample")
    }

    /// Writes the config next to a command's outputs, token redacted.
    pub fn echo(&self, out: &Path) -> Result<PathBuf> {
        let mut shown = self.clone();
        if shown.backend.token.is_some() {
            shown.backend.token = Some("<redacted>".into());
        }
        std::fs::create_dir_all(out).map_err(CliError::io(out))?;
        let path = out.join(EFFECTIVE_CONFIG_FILE);
        let text = serde_json::to_string_pretty(&shown).expect("config serializes") + "\n";
        std::fs::write(&path, text).map_err(CliError::io(&path))?;
        Ok(path)
    }
}

/// Checks every path the command will read before any work starts.
pub fn require_exists<'a>(paths: impl IntoIterator<Item = (&'a str, &'a Path)>) -> Result<()> {
    for (what, path) in paths {
        if !path.exists() {
            return Err(CliError::Usage(format!("{what} `{}` does not exist", path.display())));
        }
    }
    Ok(())
}
