//! File formats: descriptor CSVs, pool manifests, feature caches and the
//! pretraining ratings table.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{aggregate, DescriptorMatrix, FeatureVector};
use crate::types::{validate_pool, AvRecord, Excerpt, ExcerptMetadata, SourceType};

pub const MANIFEST_FILE: &str = "manifest.json";

/// One entry of a pool manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub source_type: SourceType,
    pub title: String,
    /// Path relative to the manifest's directory.
    pub descriptor_csv: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio_uri: Option<String>,
}

/// Cached feature vector for one excerpt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CachedFeatures {
    pub id: String,
    pub vector: Vec<f64>,
}

fn parse_f64(path: &Path, row: usize, column: usize, cell: &str) -> Result<f64> {
    let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        row,
        column,
        message: format!("`{cell}` is not a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            row,
            column,
            message: format!("`{cell}` is not finite"),
        });
    }
    Ok(v)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let row = e.position().map_or(0, |p| p.line() as usize);
    Error::Parse {
        path: path.to_path_buf(),
        row,
        column: 0,
        message: e.to_string(),
    }
}

/// Reads a descriptor CSV: a header of descriptor names, then one numeric
/// row per window.
pub fn load_descriptor_csv(path: &Path, excerpt_id: &str) -> Result<DescriptorMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let names: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let mut values = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| csv_error(path, e))?;
        if record.len() != names.len() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                row,
                column: record.len().min(names.len()) + 1,
                message: format!("expected {} columns, found {}", names.len(), record.len()),
            });
        }
        let parsed = record
            .iter()
            .enumerate()
            .map(|(j, cell)| parse_f64(path, row, j + 1, cell))
            .collect::<Result<Vec<_>>>()?;
        values.push(parsed);
    }
    let m = DescriptorMatrix {
        excerpt_id: excerpt_id.to_string(),
        names,
        values,
        window_s: 1.0,
        hop_fraction: 0.5,
    };
    m.validate()
        .map_err(|e| Error::validation(format!("{}: {e}", path.display())))?;
    Ok(m)
}

pub fn write_descriptor_csv(path: &Path, m: &DescriptorMatrix) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(&m.names).map_err(|e| csv_error(path, e))?;
    for row in &m.values {
        w.write_record(row.iter().map(|v| v.to_string()))
            .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::file(path, e))?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestEntry>> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::file(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::validation(format!("{}: {e}", path.display())))
}

/// Loads a pool directory, computing features from each descriptor CSV.
pub fn load_pool(dir: &Path) -> Result<Vec<Excerpt>> {
    load_pool_with_cache(dir, None)
}

/// Loads a pool directory, taking features from `cache` when an entry exists
/// there and falling back to the descriptor CSV otherwise.
pub fn load_pool_with_cache(dir: &Path, cache: Option<&Path>) -> Result<Vec<Excerpt>> {
    let cached = match cache {
        Some(c) => read_feature_cache(c)?,
        None => HashMap::new(),
    };
    let manifest = read_manifest(dir)?;
    let mut pool = Vec::with_capacity(manifest.len());
    for entry in manifest {
        let features = match cached.get(&entry.id) {
            Some(v) => v.clone(),
            None => {
                let m = load_descriptor_csv(&dir.join(&entry.descriptor_csv), &entry.id)?;
                aggregate(&m)?
            }
        };
        pool.push(Excerpt {
            id: entry.id,
            source_type: entry.source_type,
            features,
            metadata: ExcerptMetadata {
                title: entry.title,
                duration_s: 30.0,
                audio_uri: entry.audio_uri,
            },
        });
    }
    validate_pool(&pool)?;
    Ok(pool)
}

/// Writes one `<id>.json` file per excerpt.
pub fn write_feature_cache(dir: &Path, pool: &[Excerpt]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    let mut written = Vec::with_capacity(pool.len());
    for e in pool {
        let path = dir.join(format!("{}.json", e.id));
        let body = serde_json::to_string(&CachedFeatures {
            id: e.id.clone(),
            vector: e.features.as_slice().to_vec(),
        })?;
        fs::write(&path, body).map_err(|err| Error::file(&path, err))?;
        written.push(path);
    }
    Ok(written)
}

pub fn read_feature_cache(dir: &Path) -> Result<HashMap<String, FeatureVector>> {
    let mut out = HashMap::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::file(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::file(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("json") {
            continue;
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::file(&path, e))?;
        let c: CachedFeatures =
            serde_json::from_str(&text).map_err(|e| Error::validation(format!("{}: {e}", path.display())))?;
        let v = FeatureVector::new(c.vector);
        if !v.is_finite() {
            return Err(Error::validation(format!(
                "{}: cached vector has non-finite entries",
                path.display()
            )));
        }
        out.insert(c.id, v);
    }
    Ok(out)
}

/// Reads the pretraining table: `song_id,valence,arousal,<features...>`.
pub fn load_av_csv(path: &Path) -> Result<Vec<AvRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let expect = ["song_id", "valence", "arousal"];
    for (j, name) in expect.iter().enumerate() {
        if headers.get(j).map(str::trim) != Some(*name) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                row: 1,
                column: j + 1,
                message: format!("expected header `{name}`"),
            });
        }
    }
    let n_features = headers.len().saturating_sub(3);
    if n_features == 0 {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            row: 1,
            column: 4,
            message: "no feature columns".into(),
        });
    }
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| csv_error(path, e))?;
        if record.len() != headers.len() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                row,
                column: record.len().min(headers.len()) + 1,
                message: format!("expected {} columns, found {}", headers.len(), record.len()),
            });
        }
        let valence = parse_f64(path, row, 2, &record[1])?;
        let arousal = parse_f64(path, row, 3, &record[2])?;
        let features = (3..record.len())
            .map(|j| parse_f64(path, row, j + 1, &record[j]))
            .collect::<Result<Vec<_>>>()?;
        out.push(AvRecord {
            song_id: record[0].trim().to_string(),
            valence,
            arousal,
            features: FeatureVector::new(features),
        });
    }
    Ok(out)
}

pub fn write_av_csv(path: &Path, records: &[AvRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let dim = records.first().map_or(0, |r| r.features.len());
    let mut header = vec!["song_id".to_string(), "valence".into(), "arousal".into()];
    header.extend((0..dim).map(|i| format!("f{i}")));
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for r in records {
        let mut row = vec![r.song_id.clone(), r.valence.to_string(), r.arousal.to_string()];
        row.extend(r.features.as_slice().iter().map(|v| v.to_string()));
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::file(path, e))?;
    Ok(())
}

/// Writes a pool directory (manifest plus one descriptor CSV per excerpt).
pub fn write_pool(dir: &Path, entries: &[(ManifestEntry, DescriptorMatrix)]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    let mut manifest = Vec::with_capacity(entries.len());
    for (entry, matrix) in entries {
        let path = dir.join(&entry.descriptor_csv);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::file(parent, e))?;
        }
        write_descriptor_csv(&path, matrix)?;
        manifest.push(entry.clone());
    }
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::file(&path, e))?;
    Ok(())
}
