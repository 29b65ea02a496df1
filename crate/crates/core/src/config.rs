//! Run configuration: a sectioned TOML document with defaults for every key.
//!
//! Environment variables named `ISCM_<SECTION>_<KEY>` override file values,
//! e.g. `ISCM_AGENT_BATCH_SIZE=32`. Values are parsed as TOML literals and
//! fall back to plain strings.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agent::AgentConfig;
use crate::curiosity::CuriosityConfig;
use crate::env::{EnvConfig, Task, FRAME_SIZE};
use crate::error::{Error, Result};
use crate::models::ModelConfig;
use crate::sound::SoundConfig;

pub const ENV_PREFIX: &str = "ISCM_";

/// Exploration method used for pretraining.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Vision plus sound curiosity.
    Iscm,
    /// Vision-only curiosity.
    Icm,
    /// No pretraining; finetune from fresh parameters.
    Ddpg,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Iscm => "iscm",
            Method::Icm => "icm",
            Method::Ddpg => "ddpg",
        }
    }

    pub fn uses_audio(self) -> bool {
        self == Method::Iscm
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iscm" => Ok(Method::Iscm),
            "icm" => Ok(Method::Icm),
            "ddpg" => Ok(Method::Ddpg),
            other => Err(Error::Usage(format!("unknown method `{other}` (expected iscm, icm, ddpg)"))),
        }
    }
}

/// Whether finetuning keeps the pretrained actor and critic.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyInit {
    Reuse,
    Reinit,
}

impl PolicyInit {
    pub fn as_str(self) -> &'static str {
        match self {
            PolicyInit::Reuse => "reuse",
            PolicyInit::Reinit => "reinit",
        }
    }
}

impl std::str::FromStr for PolicyInit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reuse" => Ok(PolicyInit::Reuse),
            "reinit" => Ok(PolicyInit::Reinit),
            other => Err(Error::Usage(format!("unknown policy init `{other}` (expected reuse or reinit)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub method: Method,
    pub policy_init: PolicyInit,
    pub pretrain_steps: usize,
    pub finetune_steps: usize,
    pub seeds: Vec<u64>,
    pub pretrain_task: Task,
    /// Finetuning and evaluation task.
    pub task: Task,
    pub output_dir: PathBuf,
    pub eval_episodes: usize,
    /// Step spacing of the aggregated learning curves.
    pub curve_grid: usize,
    /// Episodes in the moving average of plotted curves.
    pub smoothing_window: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            method: Method::Iscm,
            policy_init: PolicyInit::Reuse,
            pretrain_steps: 20_000,
            finetune_steps: 5_000,
            seeds: vec![0, 1, 2],
            pretrain_task: Task::ThreeCubes,
            task: Task::Ceramic,
            output_dir: PathBuf::from("runs"),
            eval_episodes: 10,
            curve_grid: 250,
            smoothing_window: 10,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub env: EnvConfig,
    pub sound: SoundConfig,
    pub curiosity: CuriosityConfig,
    pub agent: AgentConfig,
    pub model: ModelConfig,
    pub run: RunConfig,
}

const SECTIONS: [&str; 6] = ["env", "sound", "curiosity", "agent", "model", "run"];

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_toml_with_overrides(text, std::iter::empty::<(String, String)>())
    }

    /// Parses `text`, applies `ISCM_*` overrides from `vars`, validates.
    pub fn from_toml_with_overrides<I, K, V>(text: &str, vars: I) -> Result<Self>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        for (k, v) in vars {
            apply_override(&mut table, k.as_ref(), v.as_ref())?;
        }
        let config: Config = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Loads a file and applies overrides from the process environment.
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_with_overrides(&text, std::env::vars()).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    /// SHA-256 of the canonical serialization.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_toml()?.as_bytes())))
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.sound.validate()?;
        self.curiosity.validate()?;
        self.agent.validate()?;
        self.model.validate()?;
        if self.model.input_size != FRAME_SIZE {
            return Err(Error::Config(format!("model.input_size must be {FRAME_SIZE} to match rendered frames")));
        }
        let r = &self.run;
        if r.seeds.is_empty() {
            return Err(Error::Config("run.seeds must not be empty".into()));
        }
        if r.curve_grid == 0 || r.smoothing_window == 0 {
            return Err(Error::Config("run.curve_grid and run.smoothing_window must be positive".into()));
        }
        let control_dt = self.env.control_dt();
        if (self.sound.step_duration - control_dt).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "sound.step_duration ({}) must equal env.physics_dt * env.substeps ({control_dt})",
                self.sound.step_duration
            )));
        }
        Ok(())
    }

    /// Environment settings with the cube layout of `task`.
    pub fn env_for(&self, task: Task) -> EnvConfig {
        self.env.clone().for_task(task)
    }

    /// `section.key = value` pairs, sorted, for flat manifests.
    pub fn flatten(&self) -> Result<Vec<(String, String)>> {
        let value = toml::Value::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        let mut out = Vec::new();
        flatten_into("", &value, &mut out);
        out.sort();
        Ok(out)
    }
}

fn flatten_into(prefix: &str, value: &toml::Value, out: &mut Vec<(String, String)>) {
    match value {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten_into(&key, v, out);
            }
        }
        toml::Value::String(s) => out.push((prefix.to_string(), s.clone())),
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

fn apply_override(table: &mut toml::Table, var: &str, raw: &str) -> Result<()> {
    let Some(rest) = var.strip_prefix(ENV_PREFIX) else {
        return Ok(());
    };
    let lower = rest.to_ascii_lowercase();
    let Some((section, key)) = lower.split_once('_') else {
        return Err(Error::Config(format!("override `{var}` must look like ISCM_<SECTION>_<KEY>")));
    };
    if !SECTIONS.contains(&section) {
        return Err(Error::Config(format!("override `{var}`: unknown section `{section}`")));
    }
    let value = parse_literal(raw);
    let entry = table
        .entry(section.to_string())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    let toml::Value::Table(section_table) = entry else {
        return Err(Error::Config(format!("`{section}` must be a table")));
    };
    section_table.insert(key.to_string(), value);
    Ok(())
}

fn parse_literal(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_all_defaults() {
        assert_eq!(Config::from_toml_str("").unwrap(), Config::default());
    }

    #[test]
    fn round_trip_is_identity() {
        let mut c = Config::default();
        c.agent.batch_size = 64;
        c.run.method = Method::Icm;
        c.sound.silence_threshold = Some(0.0125);
        let text = c.to_toml().unwrap();
        let back = Config::from_toml_str(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash().unwrap(), c.hash().unwrap());
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = Config::from_toml_str("[agent]\nbatchsize = 3\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
        assert!(Config::from_toml_str("[nonsense]\n").is_err());
    }

    #[test]
    fn environment_overrides() {
        let vars = [
            ("ISCM_AGENT_BATCH_SIZE", "32"),
            ("ISCM_RUN_METHOD", "icm"),
            ("ISCM_RUN_SEEDS", "[4, 5]"),
            ("PATH", "/usr/bin"),
        ];
        let c = Config::from_toml_with_overrides("[agent]\nbatch_size = 8\n", vars).unwrap();
        assert_eq!(c.agent.batch_size, 32);
        assert_eq!(c.run.method, Method::Icm);
        assert_eq!(c.run.seeds, vec![4, 5]);
        assert!(Config::from_toml_with_overrides("", [("ISCM_BOGUS_X", "1")]).is_err());
    }

    #[test]
    fn out_of_range_values_rejected() {
        assert!(Config::from_toml_str("[curiosity]\nreward_mix = 1.5\n").is_err());
        assert!(Config::from_toml_str("[agent]\ndiscount = 1.0\n").is_err());
        assert!(Config::from_toml_str("[run]\nseeds = []\n").is_err());
        assert!(Config::from_toml_str("[sound]\nstep_duration = 0.2\n").is_err());
    }

    #[test]
    fn flatten_has_dotted_keys() {
        let flat = Config::default().flatten().unwrap();
        assert!(flat.iter().any(|(k, v)| k == "agent.batch_size" && v == "256"));
        assert!(flat.iter().any(|(k, v)| k == "run.method" && v == "iscm"));
    }
}
