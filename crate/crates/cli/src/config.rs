//! Run configuration: a TOML file with one section per concern, optionally
//! patched by `--set section.key=value` overrides.

use std::path::{Path, PathBuf};

use dvelab::envs::{gapworld, parse_level_set, Family, LevelHandle};
use dvelab::models::{HeadKind, NetConfig};
use dvelab::seed::derive_seed;
use dvelab::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: ExperimentSection,
    pub env: EnvSection,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub run: RunSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub name: String,
    /// Master seed; every random stream of the run is derived from it.
    pub seed: u64,
    /// Defaults to `<output root>/<name>`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvSection {
    /// Training levels, e.g. `gapworld:50`, `gapworld:0..100:2` or
    /// `tabular:1,2,3`.
    pub levels: String,
    /// Levels used for periodic evaluation; the training levels if unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_levels: Option<String>,
    pub gapworld_length: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadName {
    Baseline,
    Dynamic,
    Control,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub head: HeadName,
    /// Basis values of the dynamic head; the control head gets twice as
    /// many hidden units.
    pub n_basis: usize,
    pub encoder_hidden: usize,
    pub lstm_hidden: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// Environment-step budget, rounded up to whole updates.
    pub total_steps: u64,
    /// Evaluate every this many updates (and after the last one).
    pub eval_every: u64,
    pub eval_episodes: usize,
    /// Derived from the master seed if unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_seed: Option<u64>,
    pub checkpoint_every: u64,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection { name: "run".into(), seed: 0, output_dir: None }
    }
}

impl Default for EnvSection {
    fn default() -> Self {
        EnvSection { levels: "gapworld:50".into(), eval_levels: None, gapworld_length: gapworld::DEFAULT_LENGTH }
    }
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection { head: HeadName::Dynamic, n_basis: 4, encoder_hidden: 32, lstm_hidden: 64 }
    }
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection { total_steps: 204_800, eval_every: 25, eval_episodes: 100, eval_seed: None, checkpoint_every: 50 }
    }
}

/// Turns `section.key=value` into a TOML value, reading `value` as TOML
/// when it parses and as a bare string otherwise (so `head=control` works
/// without quotes).
fn parse_override(item: &str) -> Result<(String, String, toml::Value), CliError> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("--set expects section.key=value, got `{item}`")))?;
    let (section, field) = key
        .trim()
        .split_once('.')
        .ok_or_else(|| CliError::Usage(format!("--set key `{key}` needs a section, e.g. train.lr")))?;
    let raw = raw.trim();
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed table has the key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    Ok((section.to_string(), field.to_string(), value))
}

impl RunConfig {
    /// Parses a config file's text. Errors carry the offending line and
    /// field.
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses `text`, then applies `--set` overrides.
    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Self, CliError> {
        let cfg = Self::from_toml(text)?;
        if overrides.is_empty() {
            return Ok(cfg);
        }
        let mut table: toml::Table = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        for item in overrides {
            let (section, field, value) = parse_override(item)?;
            let entry = table.entry(section.clone()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
            let toml::Value::Table(t) = entry else {
                return Err(CliError::Config(format!("`{section}` is not a section")));
            };
            t.insert(field, value);
        }
        let cfg = RunConfig::deserialize(toml::Value::Table(table))
            .map_err(|e| CliError::Config(format!("after --set overrides: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_with_overrides(&text, overrides).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configs always serialise")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.experiment.name.is_empty() || self.experiment.name.contains(['/', '\\']) {
            return bad(format!("experiment.name `{}` must be a plain, non-empty name", self.experiment.name));
        }
        self.train.validate().map_err(|e| CliError::Config(format!("train: {e}")))?;
        self.net_config()?.validate().map_err(|e| CliError::Config(format!("model: {e}")))?;
        if self.run.total_steps == 0 {
            return bad("run.total_steps must be positive".into());
        }
        if self.run.eval_every == 0 || self.run.checkpoint_every == 0 || self.run.eval_episodes == 0 {
            return bad("run.eval_every, run.checkpoint_every and run.eval_episodes must be positive".into());
        }
        Ok(())
    }

    pub fn family(&self) -> Result<Family, CliError> {
        let name = self.env.levels.split(':').next().unwrap_or_default();
        name.parse().map_err(|e: dvelab::envs::EnvError| CliError::Config(format!("env.levels: {e}")))
    }

    pub fn head(&self) -> HeadKind {
        match self.model.head {
            HeadName::Baseline => HeadKind::Baseline,
            HeadName::Dynamic => HeadKind::Dynamic { n_basis: self.model.n_basis },
            HeadName::Control => HeadKind::control_for(self.model.n_basis),
        }
    }

    pub fn net_config(&self) -> Result<NetConfig, CliError> {
        let family = self.family()?;
        Ok(NetConfig::new(family.obs_dim(), family.n_actions(), self.head())
            .with_sizes(self.model.encoder_hidden, self.model.lstm_hidden))
    }

    pub fn levels(&self) -> Result<Vec<LevelHandle>, CliError> {
        parse_level_set(&self.env.levels, self.env.gapworld_length)
            .map_err(|e| CliError::Config(format!("env.levels: {e}")))
    }

    pub fn eval_levels(&self) -> Result<Vec<LevelHandle>, CliError> {
        match &self.env.eval_levels {
            None => self.levels(),
            Some(spec) => {
                let levels = parse_level_set(spec, self.env.gapworld_length)
                    .map_err(|e| CliError::Config(format!("env.eval_levels: {e}")))?;
                if levels[0].family() != self.family()? {
                    return Err(CliError::Config("env.eval_levels must use the training family".into()));
                }
                Ok(levels)
            }
        }
    }

    pub fn total_updates(&self) -> u64 {
        self.run.total_steps.div_ceil(self.train.batch_size() as u64)
    }

    pub fn eval_seed(&self) -> u64 {
        self.run.eval_seed.unwrap_or_else(|| derive_seed(self.experiment.seed, "eval"))
    }
}
