//! Declarative experiment runner for importance-weighting studies.

pub mod config;
pub mod fetch;
pub mod output;
pub mod run;

use std::path::PathBuf;

use config::{ExperimentConfig, Scale};

/// Command-line replacements for config fields.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub scale: Option<Scale>,
    pub seeds: Option<Vec<u64>>,
    pub output_dir: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(&self, mut config: ExperimentConfig) -> ExperimentConfig {
        if let Some(s) = self.scale {
            config.scale = s;
        }
        if let Some(s) = &self.seeds {
            config.seeds = s.clone();
        }
        if let Some(o) = &self.output_dir {
            config.output_dir = o.clone();
        }
        config
    }
}
