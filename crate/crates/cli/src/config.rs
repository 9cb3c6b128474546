//! Run configuration: an optional TOML file merged over built-in defaults.
//! Command-line flags are applied on top by each subcommand.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const SEED_ENV: &str = "OS2_SEED";

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub filter: Option<toml::Table>,
    pub guidance: Option<toml::Table>,
    pub scaling: Option<toml::Table>,
    pub toy: Option<toml::Table>,
    pub gaussian: Option<toml::Table>,
    pub cost_model: Option<toml::Table>,
    pub stages: Option<Vec<toml::Table>>,
    pub buckets: Option<Vec<toml::Table>>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::missing(format!("config {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| CliError::config(format!("config {}: {e}", path.display())))
    }

    /// Flag, then config file, then `OS2_SEED`, then 0.
    pub fn seed(&self, flag: Option<u64>) -> CliResult<u64> {
        if let Some(s) = flag.or(self.seed) {
            return Ok(s);
        }
        match std::env::var(SEED_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| CliError::config(format!("{SEED_ENV}={v} is not a u64"))),
            Err(_) => Ok(0),
        }
    }
}

fn merge(base: &mut toml::Table, over: &toml::Table) {
    for (k, v) in over {
        match (base.get_mut(k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

/// `T::default()` with the keys of `section` laid over it.
pub fn section<T: Serialize + DeserializeOwned + Default>(
    section: Option<&toml::Table>,
    name: &str,
) -> CliResult<T> {
    let Some(over) = section else {
        return Ok(T::default());
    };
    let mut base = toml::Table::try_from(T::default())
        .map_err(|e| CliError::config(format!("[{name}] defaults: {e}")))?;
    merge(&mut base, over);
    base.try_into()
        .map_err(|e| CliError::config(format!("[{name}]: {e}")))
}

pub fn table_list<T: DeserializeOwned>(list: &[toml::Table], name: &str) -> CliResult<Vec<T>> {
    list.iter()
        .map(|t| {
            t.clone()
                .try_into()
                .map_err(|e| CliError::config(format!("[[{name}]]: {e}")))
        })
        .collect()
}
