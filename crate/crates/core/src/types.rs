//! Shared domain vocabulary: emotion quadrants, source types, pool excerpts,
//! annotations and pretraining rows.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureVector;

/// Number of emotion classes.
pub const N_QUADRANTS: usize = 4;

/// Rating midpoint of the 1–9 scale used by the pretraining annotations.
pub const DEFAULT_MIDPOINT: f64 = 5.0;

/// Discretized valence/arousal emotion category.
///
/// * `Q1`: positive valence, high arousal (joy, wonder, power)
/// * `Q2`: negative valence, high arousal (tension, anger, fear)
/// * `Q3`: negative valence, low arousal (sadness, bitterness)
/// * `Q4`: positive valence, low arousal (tenderness, peacefulness)
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Quadrant {
    Q1,
    Q2,
    Q3,
    Q4,
}

impl Quadrant {
    pub const ALL: [Quadrant; N_QUADRANTS] = [Quadrant::Q1, Quadrant::Q2, Quadrant::Q3, Quadrant::Q4];

    /// Zero-based class index used by the classifiers.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Quadrant> {
        Self::ALL.get(i).copied()
    }
}

impl fmt::Display for Quadrant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Q{}", self.index() + 1)
    }
}

impl FromStr for Quadrant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "Q1" | "q1" => Ok(Quadrant::Q1),
            "Q2" | "q2" => Ok(Quadrant::Q2),
            "Q3" | "q3" => Ok(Quadrant::Q3),
            "Q4" | "q4" => Ok(Quadrant::Q4),
            other => Err(Error::validation(format!("unknown quadrant `{other}`"))),
        }
    }
}

/// Maps a valence/arousal rating pair onto its quadrant.
///
/// Signs are taken relative to `midpoint`; a rating exactly at the midpoint
/// counts as non-positive.
pub fn quadrant_from_av(valence: f64, arousal: f64, midpoint: f64) -> Result<Quadrant> {
    if !(valence.is_finite() && arousal.is_finite() && midpoint.is_finite()) {
        return Err(Error::validation(format!(
            "non-finite rating (valence={valence}, arousal={arousal}, midpoint={midpoint})"
        )));
    }
    let positive_v = valence > midpoint;
    let positive_a = arousal > midpoint;
    Ok(match (positive_v, positive_a) {
        (true, true) => Quadrant::Q1,
        (false, true) => Quadrant::Q2,
        (false, false) => Quadrant::Q3,
        (true, false) => Quadrant::Q4,
    })
}

/// Which of the two song collections an excerpt was drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceType {
    #[serde(alias = "TypeA", alias = "a")]
    TypeA,
    #[serde(alias = "TypeB", alias = "b")]
    TypeB,
}

impl SourceType {
    pub const ALL: [SourceType; 2] = [SourceType::TypeA, SourceType::TypeB];

    /// The other source type.
    pub fn swapped(self) -> SourceType {
        match self {
            SourceType::TypeA => SourceType::TypeB,
            SourceType::TypeB => SourceType::TypeA,
        }
    }
}

impl fmt::Display for SourceType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SourceType::TypeA => "type_a",
            SourceType::TypeB => "type_b",
        })
    }
}

/// Human-readable labels for the two source types.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceTypeNames {
    pub type_a: String,
    pub type_b: String,
}

impl Default for SourceTypeNames {
    fn default() -> Self {
        Self {
            type_a: "FARC-songs".to_string(),
            type_b: "AUC-songs".to_string(),
        }
    }
}

impl SourceTypeNames {
    pub fn name(&self, t: SourceType) -> &str {
        match t {
            SourceType::TypeA => &self.type_a,
            SourceType::TypeB => &self.type_b,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcerptMetadata {
    pub title: String,
    #[serde(default = "default_duration")]
    pub duration_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio_uri: Option<String>,
}

fn default_duration() -> f64 {
    30.0
}

/// One item of the annotation pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Excerpt {
    pub id: String,
    pub source_type: SourceType,
    /// Unstandardized summary features.
    pub features: FeatureVector,
    pub metadata: ExcerptMetadata,
}

/// A user's quadrant judgment for one queried excerpt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub excerpt_id: String,
    pub label: Quadrant,
    /// 1-based iteration in which the label was collected.
    pub iteration: usize,
    pub timestamp: DateTime<Utc>,
}

/// Pretraining row with continuous valence/arousal ratings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AvRecord {
    pub song_id: String,
    pub valence: f64,
    pub arousal: f64,
    pub features: FeatureVector,
}

impl AvRecord {
    pub fn quadrant(&self, midpoint: f64) -> Result<Quadrant> {
        quadrant_from_av(self.valence, self.arousal, midpoint)
            .map_err(|e| Error::validation(format!("record `{}`: {e}", self.song_id)))
    }
}

/// Validates that pool ids are unique and feature dimensions agree.
pub fn validate_pool(pool: &[Excerpt]) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    let dim = pool.first().map(|e| e.features.len());
    for e in pool {
        if !seen.insert(e.id.as_str()) {
            return Err(Error::validation(format!("duplicate excerpt id `{}`", e.id)));
        }
        if Some(e.features.len()) != dim {
            return Err(Error::validation(format!(
                "excerpt `{}` has {} features, expected {}",
                e.id,
                e.features.len(),
                dim.unwrap_or(0)
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn quadrant_examples() {
        assert_eq!(quadrant_from_av(7.0, 8.0, 5.0).unwrap(), Quadrant::Q1);
        assert_eq!(quadrant_from_av(5.0, 5.0, 5.0).unwrap(), Quadrant::Q3);
        assert_eq!(quadrant_from_av(2.0, 8.0, 5.0).unwrap(), Quadrant::Q2);
        assert_eq!(quadrant_from_av(8.0, 2.0, 5.0).unwrap(), Quadrant::Q4);
    }

    #[test]
    fn non_finite_rejected() {
        assert!(quadrant_from_av(f64::NAN, 1.0, 5.0).is_err());
        assert!(quadrant_from_av(1.0, f64::INFINITY, 5.0).is_err());
        assert!(quadrant_from_av(1.0, 1.0, f64::NEG_INFINITY).is_err());
    }

    #[test]
    fn quadrant_json_names() {
        assert_eq!(serde_json::to_string(&Quadrant::Q2).unwrap(), "\"Q2\"");
        assert_eq!(serde_json::to_string(&SourceType::TypeB).unwrap(), "\"type_b\"");
        let t: SourceType = serde_json::from_str("\"TypeA\"").unwrap();
        assert_eq!(t, SourceType::TypeA);
        assert!(Quadrant::Q1 < Quadrant::Q2 && Quadrant::Q3 < Quadrant::Q4);
    }

    #[test]
    fn quadrant_parse_roundtrip() {
        for q in Quadrant::ALL {
            assert_eq!(q.to_string().parse::<Quadrant>().unwrap(), q);
        }
        assert!("Q5".parse::<Quadrant>().is_err());
    }

    #[test]
    fn duplicate_pool_ids_rejected() {
        let e = Excerpt {
            id: "x".into(),
            source_type: SourceType::TypeA,
            features: FeatureVector::new(vec![0.0; 4]),
            metadata: ExcerptMetadata {
                title: "x".into(),
                duration_s: 30.0,
                audio_uri: None,
            },
        };
        assert!(validate_pool(&[e.clone(), e]).is_err());
    }

    fn flip_v(q: Quadrant) -> Quadrant {
        match q {
            Quadrant::Q1 => Quadrant::Q2,
            Quadrant::Q2 => Quadrant::Q1,
            Quadrant::Q3 => Quadrant::Q4,
            Quadrant::Q4 => Quadrant::Q3,
        }
    }

    fn flip_a(q: Quadrant) -> Quadrant {
        match q {
            Quadrant::Q1 => Quadrant::Q4,
            Quadrant::Q4 => Quadrant::Q1,
            Quadrant::Q2 => Quadrant::Q3,
            Quadrant::Q3 => Quadrant::Q2,
        }
    }

    proptest! {
        #[test]
        fn quadrant_mirror_symmetry(dv in -100.0f64..100.0, da in -100.0f64..100.0, m in -10.0f64..10.0) {
            prop_assume!(dv != 0.0 && da != 0.0);
            let q = quadrant_from_av(m + dv, m + da, m).unwrap();
            prop_assert_eq!(quadrant_from_av(m - dv, m + da, m).unwrap(), flip_v(q));
            prop_assert_eq!(quadrant_from_av(m + dv, m - da, m).unwrap(), flip_a(q));
        }

        #[test]
        fn quadrant_partition_is_sign_based(v in -1e6f64..1e6, a in -1e6f64..1e6) {
            let q = quadrant_from_av(v, a, 0.0).unwrap();
            let expected = match (v > 0.0, a > 0.0) {
                (true, true) => Quadrant::Q1,
                (false, true) => Quadrant::Q2,
                (false, false) => Quadrant::Q3,
                (true, false) => Quadrant::Q4,
            };
            prop_assert_eq!(q, expected);
        }
    }
}
