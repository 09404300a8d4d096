use std::fs;
use std::path::{Path, PathBuf};

use risenet::data::DataConfig;
use risenet::model::ModelConfig;
use risenet::synthgen::GenConfig;
use risenet::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Input and artifact locations. Relative paths resolve against the working directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Directory holding `diffusion.csv`, `purchases.csv` and `items.csv`.
    pub input: Option<PathBuf>,
    /// Run directory written by `ingest`.
    pub dataset: Option<PathBuf>,
    /// Parameter file written by `train`.
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub paths: Paths,
    pub gen: GenConfig,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

/// Parses `raw` as a TOML value, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Sets `dotted` (e.g. `model.d_h`) in `table`, creating sections as needed.
pub fn set_path(table: &mut toml::Table, dotted: &str, value: toml::Value) -> Result<(), CliError> {
    let mut parts: Vec<&str> = dotted.split('.').collect();
    let leaf = parts
        .pop()
        .filter(|s| !s.is_empty())
        .ok_or_else(|| CliError::Config(format!("bad key `{dotted}`")))?;
    let mut cur = table;
    for p in parts {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("`{p}` in `{dotted}` is not a section")))?;
    }
    cur.insert(leaf.to_string(), value);
    Ok(())
}

/// Explicit flag values applied over the config file.
#[derive(Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub input: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    /// `key=value` pairs with dotted keys.
    pub set: Vec<String>,
}

pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<RunConfig, CliError> {
    let mut table = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::MissingInput(format!("{}: {e}", p.display())))?;
            toml::from_str::<toml::Table>(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => toml::Table::new(),
    };
    for kv in &overrides.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("--set expects key=value, got `{kv}`")))?;
        set_path(&mut table, k.trim(), parse_value(v.trim()))?;
    }
    if let Some(seed) = overrides.seed {
        let v = i64::try_from(seed).map_err(|_| CliError::Config(format!("seed {seed} out of range")))?;
        set_path(&mut table, "gen.seed", toml::Value::Integer(v))?;
        set_path(&mut table, "train.seed", toml::Value::Integer(v))?;
    }
    let path_value = |p: &Path| toml::Value::String(p.display().to_string());
    for (key, value) in [
        ("paths.input", &overrides.input),
        ("paths.dataset", &overrides.dataset),
        ("paths.checkpoint", &overrides.checkpoint),
    ] {
        if let Some(p) = value {
            set_path(&mut table, key, path_value(p))?;
        }
    }
    let config: RunConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Config(e.message().to_string()))?;
    config.validate()?;
    Ok(config)
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        let cfg = |e: &dyn std::fmt::Display| CliError::Config(e.to_string());
        self.gen.validate().map_err(|e| cfg(&e))?;
        self.data.validate().map_err(|e| cfg(&e))?;
        self.model.validate().map_err(|e| cfg(&e))?;
        self.train.validate().map_err(|e| cfg(&e))?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn values_parse_as_toml_or_string() {
        assert_eq!(parse_value("4"), toml::Value::Integer(4));
        assert_eq!(parse_value("0.5"), toml::Value::Float(0.5));
        assert_eq!(parse_value("true"), toml::Value::Boolean(true));
        assert_eq!(parse_value("per_week"), toml::Value::String("per_week".into()));
    }

    #[test]
    fn set_overrides_and_round_trips() {
        let o = Overrides {
            seed: Some(9),
            set: vec![
                "model.d_h=4".into(),
                "model.d_i=4".into(),
                "data.rank_mode=per_week".into(),
            ],
            ..Overrides::default()
        };
        let c = load(None, &o).unwrap();
        assert_eq!((c.model.d_h, c.gen.seed, c.train.seed), (4, 9, 9));
        let back: RunConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        let o = Overrides {
            set: vec!["model.depth=3".into()],
            ..Overrides::default()
        };
        let CliError::Config(msg) = load(None, &o).unwrap_err() else {
            panic!()
        };
        assert!(msg.contains("depth"), "{msg}");
        let o = Overrides {
            set: vec!["train.learning_rate=0".into()],
            ..Overrides::default()
        };
        assert!(matches!(load(None, &o), Err(CliError::Config(_))));
    }
}
