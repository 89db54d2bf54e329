//! Run-config files and provenance records.
//!
//! Both are TOML with one table per sub-command, so a provenance record can be
//! passed back through `--config` to repeat a run.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{CliError, Result};

pub const PROVENANCE: &str = "provenance.toml";

pub fn load(path: &Path) -> Result<toml::Table> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    text.parse::<toml::Table>()
        .map_err(|e| CliError::Usage(format!("cannot parse {}: {e}", path.display())))
}

/// The `[command]` table of a config file, or defaults when absent.
pub fn section<T: DeserializeOwned + Default>(file: Option<&toml::Table>, command: &str) -> Result<T> {
    match file.and_then(|t| t.get(command)) {
        None => Ok(T::default()),
        Some(toml::Value::Table(t)) => t
            .clone()
            .try_into()
            .map_err(|e| CliError::Usage(format!("invalid [{command}] config: {e}"))),
        Some(_) => Err(CliError::Usage(format!("config entry `{command}` must be a table"))),
    }
}

pub fn encode_provenance<T: Serialize>(command: &str, resolved: &T) -> Result<String> {
    let body = toml::Value::try_from(resolved)
        .map_err(|e| CliError::Usage(format!("configuration cannot be recorded: {e}")))?;
    let mut doc = toml::Table::new();
    doc.insert("tool".into(), "lwpt".into());
    doc.insert("version".into(), env!("CARGO_PKG_VERSION").into());
    doc.insert(command.into(), body);
    toml::to_string(&doc).map_err(|e| CliError::Runtime(format!("cannot encode provenance: {e}")))
}

pub fn write_provenance<T: Serialize>(path: &Path, command: &str, resolved: &T) -> Result<()> {
    let text = encode_provenance(command, resolved)?;
    lwpt_core::signal::write_atomic(path, text.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::args::GenerateArgs;

    #[test]
    fn provenance_round_trips_as_config() {
        let args = GenerateArgs {
            class: Some("bumps".into()),
            count: Some(4),
            sigma: Some(0.25),
            seed: Some(9),
            ..GenerateArgs::default()
        };
        let text = encode_provenance("generate", &args).unwrap();
        assert!(text.contains("version = "));
        let table: toml::Table = text.parse().unwrap();
        let back: GenerateArgs = section(Some(&table), "generate").unwrap();
        assert_eq!(back.class.as_deref(), Some("bumps"));
        assert_eq!(back.sigma, Some(0.25));
        assert_eq!(back.seed, Some(9));
        assert_eq!(back.out, None);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let table: toml::Table = "[generate]\nsigmaa = 1.0\n".parse().unwrap();
        assert!(matches!(section::<GenerateArgs>(Some(&table), "generate"), Err(CliError::Usage(_))));
    }

    #[test]
    fn missing_section_gives_defaults() {
        let table: toml::Table = "[train]\nepochs = 3\n".parse().unwrap();
        let g: GenerateArgs = section(Some(&table), "generate").unwrap();
        assert!(g.class.is_none());
    }

    #[test]
    fn flags_override_file_values() {
        let table: toml::Table = "[generate]\nsigma = 0.5\ncount = 3\n".parse().unwrap();
        let file: GenerateArgs = section(Some(&table), "generate").unwrap();
        let cli = GenerateArgs {
            sigma: Some(0.1),
            ..GenerateArgs::default()
        };
        let merged = cli.overlay(file);
        assert_eq!(merged.sigma, Some(0.1));
        assert_eq!(merged.count, Some(3));
    }
}
