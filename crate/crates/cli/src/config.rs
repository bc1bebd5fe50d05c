//! Run configuration: profile defaults, then the TOML config file, then
//! command-line flags.

use std::path::Path;

use clap::ValueEnum;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use vulntrans_core::baselines::BaselineConfig;
use vulntrans_core::{ModelConfig, PairingConfig, SynthesisSpec};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// 32 hidden units, 5,000 steps in 500-step iterations.
    Desk,
    /// 256 hidden units, 50,000 steps in 5,000-step iterations.
    Paper,
}

impl Profile {
    pub fn model(self) -> ModelConfig {
        match self {
            Profile::Desk => ModelConfig::desk(),
            Profile::Paper => ModelConfig::paper(),
        }
    }
}

/// The config file. Every table is optional and may be partial.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    seed: Option<u64>,
    profile: Option<Profile>,
    model: Option<toml::Table>,
    pairing: Option<toml::Table>,
    synth: Option<toml::Table>,
    baseline: Option<toml::Table>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub profile: Profile,
    pub model: ModelConfig,
    pub pairing: PairingConfig,
    pub synth: SynthesisSpec,
    pub baseline: BaselineConfig,
}

fn config_error(what: &str, e: impl std::fmt::Display) -> CliError {
    CliError::Usage(format!("invalid {what}: {e}"))
}

/// Recursively overwrites `base` with the keys of `patch`.
fn merge(base: &mut toml::Table, patch: &toml::Table) {
    for (key, value) in patch {
        match (base.get_mut(key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(p)) => merge(b, p),
            _ => {
                base.insert(key.clone(), value.clone());
            }
        }
    }
}

fn overlay<T: Serialize + DeserializeOwned>(base: T, patch: Option<&toml::Table>, what: &str) -> Result<T, CliError> {
    let Some(patch) = patch else { return Ok(base) };
    let mut table = toml::Table::try_from(&base).map_err(|e| config_error(what, e))?;
    merge(&mut table, patch);
    table.try_into().map_err(|e| config_error(what, e))
}

impl RunConfig {
    /// Resolves profile and config file; `seed` and `profile` are the
    /// command-line values, which win over the file.
    pub fn resolve(config_path: Option<&Path>, seed: Option<u64>, profile: Option<Profile>) -> Result<Self, CliError> {
        let file: ConfigFile = match config_path {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
                toml::from_str(&text).map_err(|e| config_error("config file", e))?
            }
            None => ConfigFile::default(),
        };
        let profile = profile.or(file.profile).unwrap_or(Profile::Desk);
        let run_seed = seed.or(file.seed).unwrap_or(0);
        let table_seed = |t: &Option<toml::Table>| t.as_ref().is_some_and(|t| t.contains_key("seed"));

        let mut model = overlay(profile.model(), file.model.as_ref(), "[model] table")?;
        if seed.is_some() || !table_seed(&file.model) {
            model.seed = run_seed;
        }
        let mut pairing = overlay(PairingConfig::default(), file.pairing.as_ref(), "[pairing] table")?;
        if seed.is_some() || !table_seed(&file.pairing) {
            pairing.seed = run_seed;
        }
        let synth = overlay(SynthesisSpec::default(), file.synth.as_ref(), "[synth] table")?;
        let mut baseline = overlay(BaselineConfig::default(), file.baseline.as_ref(), "[baseline] table")?;
        baseline.classifier.seed = run_seed;
        model.validate()?;
        Ok(RunConfig { seed: run_seed, profile, model, pairing, synth, baseline })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(text: &str) -> tempfile::NamedTempFile {
        let f = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(f.path(), text).unwrap();
        f
    }

    #[test]
    fn defaults_are_the_desk_profile() {
        let c = RunConfig::resolve(None, None, None).unwrap();
        assert_eq!(c.profile, Profile::Desk);
        assert_eq!(c.model, ModelConfig::desk());
        assert_eq!(c.seed, 0);
    }

    #[test]
    fn flags_beat_file_beat_profile() {
        let f = write("seed = 5\nprofile = \"paper\"\n[model]\nhidden_units = 48\n[pairing]\nnon_vuln_ratio = 2.0\n");
        let c = RunConfig::resolve(Some(f.path()), None, None).unwrap();
        assert_eq!((c.seed, c.profile, c.model.hidden_units, c.model.max_steps), (5, Profile::Paper, 48, 50_000));
        assert_eq!((c.model.seed, c.pairing.seed, c.pairing.non_vuln_ratio), (5, 5, 2.0));
        let c = RunConfig::resolve(Some(f.path()), Some(9), Some(Profile::Desk)).unwrap();
        assert_eq!((c.seed, c.profile, c.model.hidden_units, c.model.max_steps, c.model.seed), (9, Profile::Desk, 48, 5_000, 9));
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        let f = write("[model]\nhiden_units = 4\n");
        assert!(matches!(RunConfig::resolve(Some(f.path()), None, None), Err(CliError::Usage(_))));
        let f = write("[model]\nmax_decode_length = 10\n");
        assert!(RunConfig::resolve(Some(f.path()), None, None).is_err());
        let f = write("colour = 1\n");
        assert!(RunConfig::resolve(Some(f.path()), None, None).is_err());
    }
}
