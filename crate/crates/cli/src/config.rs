use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use supercell::eval::LshConfig;
use supercell::learner::TrainConfig;

use crate::CliError;

/// One JSON file drives every stage. Relative paths resolve against the
/// directory holding the config.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// `scenario.json` listing the spec, dictionaries and source files.
    #[serde(default)]
    pub scenario: Option<PathBuf>,
    /// Held-out scenario for `ablate`.
    #[serde(default)]
    pub test_scenario: Option<PathBuf>,
    /// Perturbation plan for `augment` and `ablate`.
    #[serde(default)]
    pub plan: Option<PathBuf>,
    /// Model file; defaults to `<out>/model.bin`.
    #[serde(default)]
    pub model: Option<PathBuf>,
    /// Target example CSV for `baseline`; defaults to the scenario's oracle.
    #[serde(default)]
    pub target_example: Option<PathBuf>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub lsh: LshConfig,
    /// Days per window for `eval`.
    #[serde(default)]
    pub eval_days: Option<usize>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.scenario,
            &mut cfg.test_scenario,
            &mut cfg.plan,
            &mut cfg.model,
            &mut cfg.target_example,
            &mut cfg.out,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.train.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        if !(0.0..=1.0).contains(&cfg.lsh.threshold) || cfg.lsh.signature_len == 0 {
            return Err(CliError::Usage("lsh: threshold must be in [0, 1] and signature_len positive".into()));
        }
        Ok(cfg)
    }

    /// Apply the effective seed to every seeded component.
    pub fn reseed(&mut self, seed: u64) {
        self.seed = Some(seed);
        self.train.seed = seed;
        self.lsh.seed = seed;
    }

    pub fn require<'a>(&self, field: &'a Option<PathBuf>, name: &str) -> Result<&'a Path, CliError> {
        field
            .as_deref()
            .ok_or_else(|| CliError::Usage(format!("config field {name:?} is required for this subcommand")))
    }
}
