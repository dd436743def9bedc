//! Run configuration: one TOML document with a section per stage.

use std::fs;
use std::path::{Path, PathBuf};

use catheter_core::dqn::DqnConfig;
use catheter_core::env::EnvConfig;
use catheter_core::eval::EvalConfig;
use catheter_core::protocol::{CampaignConfig, SplitFractions};
use catheter_core::rng::derive_seed;
use catheter_core::surrogate::SurrogateTrainConfig;
use catheter_core::td3::Td3Config;
use catheter_core::PlantParams;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::{CliError, CliResult};

pub const SNAPSHOT_FILE: &str = "config.resolved.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Output root; relative paths resolve against the working directory.
    pub out_dir: PathBuf,
    pub plant: PlantParams,
    pub campaign: CampaignConfig,
    pub split: SplitFractions,
    pub surrogate: SurrogateTrainConfig,
    pub env: EnvConfig,
    pub dqn: DqnConfig,
    pub td3: Td3Config,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 7,
            out_dir: PathBuf::from("runs/default"),
            plant: PlantParams::default(),
            campaign: CampaignConfig::default(),
            split: SplitFractions::default(),
            surrogate: SurrogateTrainConfig::default(),
            env: EnvConfig::default(),
            dqn: DqnConfig::default(),
            td3: Td3Config::default(),
            eval: EvalConfig::default(),
        }
    }
}

/// Per-stage seed tags mixed with the global seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Campaign,
    Split,
    Surrogate,
    DqnEnv,
    Dqn,
    Td3Env,
    Td3,
    EvalEnv,
}

impl Stage {
    fn tag(self) -> u64 {
        match self {
            Stage::Campaign => 1,
            Stage::Split => 2,
            Stage::Surrogate => 3,
            Stage::DqnEnv => 4,
            Stage::Dqn => 5,
            Stage::Td3Env => 6,
            Stage::Td3 => 7,
            Stage::EvalEnv => 8,
        }
    }
}

impl RunConfig {
    pub fn seed_for(&self, stage: Stage) -> u64 {
        derive_seed(self.seed, stage.tag())
    }

    pub fn validate(&self) -> CliResult<()> {
        self.plant.validate()?;
        if self.campaign.n_trials == 0 || !(self.campaign.dt > 0.0) {
            return Err(CliError::Config("campaign: n_trials and dt must be positive".into()));
        }
        let s = self.split;
        if [s.train, s.val, s.test].iter().any(|f| !(*f >= 0.0)) || (s.train + s.val + s.test - 1.0).abs() > 1e-6 {
            return Err(CliError::Config("split: fractions must be non-negative and sum to 1".into()));
        }
        self.surrogate.validate()?;
        self.env.validate()?;
        self.dqn.validate()?;
        self.td3.validate()?;
        self.eval.validate()?;
        Ok(())
    }

    /// Parses a TOML document, applying `key.path=value` overrides first.
    pub fn from_toml(text: &str, overrides: &[String]) -> CliResult<Self> {
        let mut table: Table = text.parse().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = table.try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` (or the defaults when `None`) and applies overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> CliResult<Self> {
        let text = match path {
            Some(p) => fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::from_toml(&text, overrides)
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn write_snapshot(&self, dir: &Path) -> CliResult<()> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let path = dir.join(SNAPSHOT_FILE);
        fs::write(&path, self.to_toml()?).map_err(|e| CliError::io(&path, e))
    }
}

/// Parses the right-hand side as a TOML value, falling back to a bare string.
fn parse_value(raw: &str) -> Value {
    let doc = format!("v = {raw}");
    match doc.parse::<Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(raw.into())),
        Err(_) => Value::String(raw.into()),
    }
}

pub fn apply_override(table: &mut Table, spec: &str) -> CliResult<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{spec}` is not of the form key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("override `{spec}` has an empty key segment")));
    }
    let (last, sections) = parts.split_last().expect("split yields at least one segment");
    let mut cur = table;
    for s in sections {
        let entry = cur.entry(s.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override `{spec}`: `{s}` is not a section")))?;
    }
    cur.insert(last.to_string(), parse_value(raw.trim()));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use catheter_core::env::Padding;

    #[test]
    fn defaults_carry_stated_constants() {
        let c = RunConfig::default();
        assert_eq!(c.env.lambda, 5e-3);
        assert_eq!(c.env.t_max, 150);
        assert_eq!((c.dqn.tau, c.td3.tau), (0.005, 0.005));
        assert_eq!((c.dqn.buffer_capacity, c.td3.buffer_capacity), (100_000, 200_000));
        assert_eq!((c.dqn.batch_size, c.td3.batch_size), (128, 256));
        assert_eq!((c.td3.critic_lr, c.td3.actor_lr), (1e-3, 1e-4));
        assert_eq!((c.dqn.gamma, c.td3.gamma), (0.99, 0.99));
        assert_eq!(c.surrogate.dropout, 0.2);
        assert_eq!(c.campaign.dt, 0.1);
        c.validate().unwrap();
    }

    #[test]
    fn round_trip() {
        let mut c = RunConfig::default();
        c.seed = 99;
        c.env.padding = Padding::WarmStart;
        c.eval.extra_thresholds = vec![0.02, 0.1];
        let back = RunConfig::from_toml(&c.to_toml().unwrap(), &[]).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn overrides_apply_before_parsing() {
        let c = RunConfig::from_toml(
            "seed = 3\n[dqn]\nepisodes = 10\n",
            &["dqn.episodes=20".into(), "env.padding=\"warm-start\"".into(), "eval.goal=[10.0, -5.0]".into()],
        )
        .unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.dqn.episodes, 20);
        assert_eq!(c.env.padding, Padding::WarmStart);
        assert_eq!(c.eval.goal, [10.0, -5.0]);
    }

    #[test]
    fn bare_strings_accepted() {
        let c = RunConfig::from_toml("", &["out_dir=/tmp/x".into(), "eval.backend=plant".into()]).unwrap();
        assert_eq!(c.out_dir, PathBuf::from("/tmp/x"));
    }

    #[test]
    fn invalid_values_rejected() {
        for o in ["env.t_max=0", "split.test=0.5", "nosuch.key=1", "dqn.gamma=1.5", "seed"] {
            let err = RunConfig::from_toml("", &[o.into()]).expect_err(o);
            assert_eq!(err.exit_code(), 2, "{o}: {err}");
        }
    }

    #[test]
    fn stage_seeds_differ() {
        let c = RunConfig::default();
        let stages = [
            Stage::Campaign,
            Stage::Split,
            Stage::Surrogate,
            Stage::DqnEnv,
            Stage::Dqn,
            Stage::Td3Env,
            Stage::Td3,
            Stage::EvalEnv,
        ];
        let mut seeds: Vec<u64> = stages.iter().map(|s| c.seed_for(*s)).collect();
        seeds.sort_unstable();
        seeds.dedup();
        assert_eq!(seeds.len(), stages.len());
    }
}
