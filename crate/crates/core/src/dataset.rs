//! Paired dataset directories: `<id>_clean.<ext>`, `<id>_noisy.<ext>` and `manifest.csv`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bench::PairRecipe;
use crate::error::{Error, Result};
use crate::signal::{read_signal, write_atomic, write_signal, Signal, SignalFormat};

pub const MANIFEST: &str = "manifest.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub id: String,
    pub class: String,
    /// Noise level, or the SNR in dB (or `raw`) for audio mixtures.
    pub sigma: String,
    pub family: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetPair {
    pub row: ManifestRow,
    pub noisy: Signal,
    pub clean: Signal,
}

pub fn pair_paths(dir: &Path, id: &str, format: SignalFormat) -> (PathBuf, PathBuf) {
    let ext = format.extension();
    (
        dir.join(format!("{id}_noisy.{ext}")),
        dir.join(format!("{id}_clean.{ext}")),
    )
}

pub fn pair_id(index: usize) -> String {
    format!("{index:06}")
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn write_pair(dir: &Path, id: &str, noisy: &Signal, clean: &Signal, format: SignalFormat) -> Result<()> {
    let (noisy_path, clean_path) = pair_paths(dir, id, format);
    write_signal(&noisy_path, noisy)?;
    write_signal(&clean_path, clean)
}

pub fn encode_manifest(rows: &[ManifestRow]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory CSV write");
    }
    w.into_inner().expect("in-memory CSV flush")
}

pub fn write_manifest(dir: &Path, rows: &[ManifestRow]) -> Result<()> {
    write_atomic(&dir.join(MANIFEST), &encode_manifest(rows))
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestRow>> {
    let path = dir.join(MANIFEST);
    let file = std::fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
    csv::Reader::from_reader(file)
        .deserialize()
        .map(|r| r.map_err(|e| Error::format(&path, e.to_string())))
        .collect()
}

/// Locates the files of `id` in whichever supported format exists.
pub fn find_pair(dir: &Path, id: &str) -> Result<(PathBuf, PathBuf)> {
    for format in [SignalFormat::Binary, SignalFormat::Csv, SignalFormat::Wav] {
        let (noisy, clean) = pair_paths(dir, id, format);
        if noisy.exists() && clean.exists() {
            return Ok((noisy, clean));
        }
    }
    Err(Error::Ingestion {
        path: dir.to_path_buf(),
        reason: format!("no clean/noisy files for pair '{id}'"),
    })
}

/// Finds the signal file `<id>_<suffix>.<ext>` in any supported format.
pub fn find_signal(dir: &Path, id: &str, suffix: &str) -> Result<PathBuf> {
    for format in [SignalFormat::Binary, SignalFormat::Csv, SignalFormat::Wav] {
        let p = dir.join(format!("{id}_{suffix}.{}", format.extension()));
        if p.exists() {
            return Ok(p);
        }
    }
    Err(Error::Ingestion {
        path: dir.to_path_buf(),
        reason: format!("no '{suffix}' file for pair '{id}'"),
    })
}

pub fn load_dataset(dir: &Path) -> Result<Vec<DatasetPair>> {
    read_manifest(dir)?
        .into_iter()
        .map(|row| {
            let (noisy_path, clean_path) = find_pair(dir, &row.id)?;
            let noisy = read_signal(&noisy_path)?;
            let clean = read_signal(&clean_path)?;
            if noisy.len() != clean.len() {
                return Err(Error::Shape(format!(
                    "pair '{}' has {} noisy and {} clean samples",
                    row.id,
                    noisy.len(),
                    clean.len()
                )));
            }
            Ok(DatasetPair { row, noisy, clean })
        })
        .collect()
}

/// Pairs grouped by manifest class, in manifest order within each class.
pub fn group_by_class(pairs: Vec<DatasetPair>) -> BTreeMap<String, Vec<DatasetPair>> {
    let mut out: BTreeMap<String, Vec<DatasetPair>> = BTreeMap::new();
    for p in pairs {
        out.entry(p.row.class.clone()).or_default().push(p);
    }
    out
}

/// Realizes `count` pairs of `recipe` into `dir`.
pub fn generate_dataset(
    dir: &Path,
    recipe: &PairRecipe,
    count: usize,
    seed: u64,
    format: SignalFormat,
) -> Result<Vec<ManifestRow>> {
    create_dir(dir)?;
    let mut rows = Vec::with_capacity(count);
    for i in 0..count {
        let pair = recipe.realize(seed, i as u64)?;
        let id = pair_id(i);
        write_pair(dir, &id, &Signal::new(pair.noisy)?, &Signal::new(pair.clean)?, format)?;
        rows.push(ManifestRow {
            id,
            class: recipe.class.to_string(),
            sigma: recipe.sigma.to_string(),
            family: recipe.family.to_string(),
            seed,
        });
    }
    write_manifest(dir, &rows)?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::{ClassId, NoiseFamily};

    fn recipe() -> PairRecipe {
        PairRecipe {
            class: ClassId::Block,
            length: 64,
            family: NoiseFamily::Uniform,
            sigma: 0.5,
            modification: None,
        }
    }

    #[test]
    fn generate_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let rows = generate_dataset(dir.path(), &recipe(), 3, 9, SignalFormat::Binary).unwrap();
        assert_eq!(rows.len(), 3);
        let text = std::fs::read_to_string(dir.path().join(MANIFEST)).unwrap();
        assert!(text.starts_with("id,class,sigma,family,seed\n000000,block,0.5,uniform,9\n"));
        let pairs = load_dataset(dir.path()).unwrap();
        assert_eq!(pairs.len(), 3);
        let expected = recipe().realize(9, 2).unwrap();
        assert_eq!(pairs[2].noisy.samples(), expected.noisy.as_slice());
        assert_eq!(pairs[2].clean.samples(), expected.clean.as_slice());
    }

    #[test]
    fn csv_and_binary_datasets_agree() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        generate_dataset(a.path(), &recipe(), 2, 1, SignalFormat::Csv).unwrap();
        generate_dataset(b.path(), &recipe(), 2, 1, SignalFormat::Binary).unwrap();
        assert_eq!(load_dataset(a.path()).unwrap(), load_dataset(b.path()).unwrap());
    }

    #[test]
    fn missing_pair_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        generate_dataset(dir.path(), &recipe(), 2, 1, SignalFormat::Csv).unwrap();
        std::fs::remove_file(dir.path().join("000001_clean.csv")).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Ingestion { .. })));
    }
}
