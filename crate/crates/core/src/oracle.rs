//! Simulated annotators.
//!
//! A profile answers every query by sampling a quadrant from a distribution
//! chosen by the excerpt's source type alone. The uniform draw behind each
//! answer comes from a stream keyed by `(seed, excerpt id)`, so an excerpt
//! gets the same label no matter when or in what order it is asked.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::types::{Excerpt, Quadrant, SourceType, N_QUADRANTS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alignment {
    Left,
    Center,
    Right,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleProfile {
    pub name: String,
    pub alignment: Alignment,
    /// Quadrant distribution `[Q1, Q2, Q3, Q4]` per source type.
    pub label_dist: BTreeMap<SourceType, [f64; N_QUADRANTS]>,
    #[serde(default)]
    pub seed: u64,
}

impl OracleProfile {
    pub fn new(
        name: impl Into<String>,
        alignment: Alignment,
        label_dist: BTreeMap<SourceType, [f64; N_QUADRANTS]>,
        seed: u64,
    ) -> Result<Self> {
        let p = Self {
            name: name.into(),
            alignment,
            label_dist,
            seed,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (t, dist) in &self.label_dist {
            if dist.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::validation(format!(
                    "profile `{}`: distribution for {t} has invalid entries {dist:?}",
                    self.name
                )));
            }
            let sum: f64 = dist.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::validation(format!(
                    "profile `{}`: distribution for {t} sums to {sum}",
                    self.name
                )));
            }
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    /// The profile with the source types' distributions exchanged.
    pub fn mirrored(&self) -> Self {
        Self {
            label_dist: self.label_dist.iter().map(|(t, d)| (t.swapped(), *d)).collect(),
            ..self.clone()
        }
    }

    pub fn label(&self, excerpt: &Excerpt) -> Result<Quadrant> {
        self.label_for(&excerpt.id, excerpt.source_type)
    }

    pub fn label_for(&self, excerpt_id: &str, source_type: SourceType) -> Result<Quadrant> {
        let dist = self.label_dist.get(&source_type).ok_or_else(|| {
            Error::validation(format!("profile `{}` has no distribution for {source_type}", self.name))
        })?;
        let u: f64 = keyed_rng(self.seed, excerpt_id).random();
        let mut acc = 0.0;
        for (k, p) in dist.iter().enumerate() {
            acc += p;
            if u < acc {
                return Ok(Quadrant::ALL[k]);
            }
        }
        // Rounding left a sliver above the last cumulative mass.
        let last = dist.iter().rposition(|&p| p > 0.0).unwrap_or(N_QUADRANTS - 1);
        Ok(Quadrant::ALL[last])
    }

    /// Reads a profile from a `.toml` or `.json` file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        let p: Self = match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => toml::from_str(&text).map_err(|e| Error::validation(format!("{}: {e}", path.display())))?,
            _ => serde_json::from_str(&text).map_err(|e| Error::validation(format!("{}: {e}", path.display())))?,
        };
        p.validate()?;
        Ok(p)
    }
}

fn keyed_rng(seed: u64, excerpt_id: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(excerpt_id.as_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// Free-function form of [`OracleProfile::label`].
pub fn label(profile: &OracleProfile, excerpt: &Excerpt) -> Result<Quadrant> {
    profile.label(excerpt)
}

/// Shipped synthetic profiles: left, center and right.
///
/// These numbers are illustrative configuration. The left annotator hears
/// type-B songs mostly as Q2 and type-A songs as Q1/Q4; the right annotator
/// is its mirror; the center annotator is mildly Q2 for both types.
pub fn default_profiles() -> Vec<OracleProfile> {
    let left = OracleProfile {
        name: "left".into(),
        alignment: Alignment::Left,
        label_dist: BTreeMap::from([
            (SourceType::TypeA, [0.45, 0.05, 0.05, 0.45]),
            (SourceType::TypeB, [0.05, 0.80, 0.10, 0.05]),
        ]),
        seed: 0,
    };
    let right = OracleProfile {
        name: "right".into(),
        alignment: Alignment::Right,
        ..left.mirrored()
    };
    let center = OracleProfile {
        name: "center".into(),
        alignment: Alignment::Center,
        label_dist: BTreeMap::from([
            (SourceType::TypeA, [0.30, 0.35, 0.10, 0.25]),
            (SourceType::TypeB, [0.30, 0.35, 0.10, 0.25]),
        ]),
        seed: 0,
    };
    vec![left, center, right]
}

/// Looks up a shipped profile by name (`left`, `center`, `right`).
pub fn profile_by_name(name: &str) -> Option<OracleProfile> {
    default_profiles().into_iter().find(|p| p.name == name)
}
