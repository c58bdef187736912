use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use soda::approx::SodaConfig;
use soda::env_grid::{Difficulty, GridSpec, PRESET_MAX_STEPS};
use soda::env_pointnav::{DemoQuality, PointNavSpec};
use soda::tabular::{OracleConfig, TrainConfig};

/// Bad input from the user: flags, config files or missing fixtures.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridOptions {
    /// Only used for map files; presets carry their own settings.
    pub wrap_around: bool,
    pub max_steps: usize,
}

impl Default for GridOptions {
    fn default() -> Self {
        Self {
            wrap_around: false,
            max_steps: PRESET_MAX_STEPS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoOptions {
    /// Demo file; collected on the fly when unset.
    pub path: Option<PathBuf>,
    pub count: usize,
    pub quality: DemoQuality,
    /// Demo `i` is rolled out with seed `seed + i`.
    pub seed: u64,
}

impl Default for DemoOptions {
    fn default() -> Self {
        Self {
            path: None,
            count: 10,
            quality: DemoQuality::Optimal,
            seed: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegretOptions {
    pub epsilon: f64,
    pub rollouts: usize,
    pub max_steps: usize,
    /// Oracle demonstrations written into the warm table.
    pub demo_count: usize,
    /// Tiers reported when no `--env` is given.
    pub tiers: Vec<Difficulty>,
}

impl Default for RegretOptions {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            rollouts: 1000,
            max_steps: PRESET_MAX_STEPS,
            demo_count: 1,
            tiers: Difficulty::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateOptions {
    pub counts: Vec<usize>,
    /// Evaluation success that counts as solved.
    pub threshold: f64,
}

impl Default for AblateOptions {
    fn default() -> Self {
        Self {
            counts: vec![1, 5, 10, 50],
            threshold: 0.8,
        }
    }
}

/// Everything a command needs, loaded from TOML and then overridden by flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    /// `easy`, `medium`, `hard`, `pointnav` or a map file path.
    pub env: Option<String>,
    /// Oracle Q-table cache; defaults to `<out>/oracle-cache`.
    pub cache_dir: Option<PathBuf>,
    pub grid: GridOptions,
    pub pointnav: PointNavSpec,
    pub tabular: TrainConfig,
    pub oracle: OracleConfig,
    pub soda: SodaConfig,
    pub demos: DemoOptions,
    pub regret: RegretOptions,
    pub ablate: AblateOptions,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seeds: vec![0, 1, 2],
            out: PathBuf::from("runs"),
            env: None,
            cache_dir: None,
            grid: GridOptions::default(),
            pointnav: PointNavSpec::default(),
            tabular: TrainConfig::default(),
            oracle: OracleConfig::default(),
            soda: SodaConfig::default(),
            demos: DemoOptions::default(),
            regret: RegretOptions::default(),
            ablate: AblateOptions::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| usage(format!("invalid config {}: {e}", path.display())))
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.seeds.is_empty() {
            return Err(usage("seed list is empty"));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(usage("seed list contains duplicates"));
        }
        self.tabular.validate()?;
        self.soda.validate()?;
        self.pointnav.validate()?;
        if !(0.0..=1.0).contains(&self.regret.epsilon) {
            return Err(usage(format!("regret epsilon {} outside [0, 1]", self.regret.epsilon)));
        }
        Ok(())
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.cache_dir.clone().unwrap_or_else(|| self.out.join("oracle-cache"))
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Resolves `env`, falling back to `default` when unset.
    pub fn env_choice(&self, default: &str) -> anyhow::Result<EnvChoice> {
        let name = self.env.as_deref().unwrap_or(default);
        if name == "pointnav" {
            return Ok(EnvChoice::PointNav(self.pointnav.clone()));
        }
        if let Ok(tier) = name.parse::<Difficulty>() {
            return Ok(EnvChoice::Grid(GridSpec::preset(tier), Some(tier)));
        }
        let path = Path::new(name);
        if !path.exists() {
            return Err(usage(format!(
                "unknown environment {name:?}: expected easy, medium, hard, pointnav or a map file"
            )));
        }
        let spec = GridSpec::from_map_file(path, self.grid.wrap_around, self.grid.max_steps)?;
        Ok(EnvChoice::Grid(spec, None))
    }
}

#[derive(Debug, Clone)]
pub enum EnvChoice {
    Grid(GridSpec, Option<Difficulty>),
    PointNav(PointNavSpec),
}

impl EnvChoice {
    pub fn label(&self) -> String {
        match self {
            EnvChoice::Grid(_, Some(tier)) => tier.name().to_string(),
            EnvChoice::Grid(spec, None) => format!("map-{}", &spec.fingerprint()[..8]),
            EnvChoice::PointNav(_) => "pointnav".to_string(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml().unwrap();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<ExperimentConfig>("bogus = 1").is_err());
        assert!(toml::from_str::<ExperimentConfig>("[soda]\nlr = 0.1").is_err());
        let ok: ExperimentConfig = toml::from_str("seeds = [4]\n[soda]\nlearning_rate = 0.001").unwrap();
        assert_eq!(ok.seeds, vec![4]);
        assert_eq!(ok.soda.learning_rate, 0.001);
    }

    #[test]
    fn env_selection() {
        let mut cfg = ExperimentConfig::default();
        assert!(matches!(cfg.env_choice("easy").unwrap(), EnvChoice::Grid(_, Some(Difficulty::Easy))));
        assert!(matches!(cfg.env_choice("pointnav").unwrap(), EnvChoice::PointNav(_)));
        cfg.env = Some("no-such-env".into());
        let err = cfg.env_choice("easy").unwrap_err();
        assert!(err.downcast_ref::<Usage>().is_some());
    }
}
