//! Synthetic stand-ins for the rated pretraining corpus and the two-source
//! annotation pool.
//!
//! Every item has latent valence/arousal ratings and a latent "style" value.
//! A handful of descriptors track the ratings, a handful track the style, and
//! the rest are noise. Pretraining songs have style independent of emotion;
//! pool excerpts take a style centred at `-separation` (type A) or
//! `+separation` (type B), so the two source types are acoustically
//! separable while sharing the same emotion distribution.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::features::{aggregate, DescriptorMatrix};
use crate::io::ManifestEntry;
use crate::types::{AvRecord, Excerpt, ExcerptMetadata, SourceType};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_descriptors: usize,
    /// 30 s of 1 s windows at 50% overlap.
    pub n_windows: usize,
    pub per_type: usize,
    pub n_records: usize,
    pub separation: f64,
    /// Song-level nuisance on each emotion descriptor, so ratings are only
    /// partly recoverable from the audio.
    pub emotion_noise: f64,
    /// Spread of the pretraining songs' style around zero; the pool types
    /// sit at `±separation`, mostly outside it.
    pub pretrain_style_sd: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 2021,
            n_descriptors: 65,
            n_windows: 59,
            per_type: 50,
            n_records: 200,
            separation: 1.5,
            emotion_noise: 2.0,
            pretrain_style_sd: 0.3,
        }
    }
}

const EMOTION_DESCRIPTORS: usize = 10;
const STYLE_DESCRIPTORS: usize = 10;
const WINDOW_NOISE: f64 = 0.3;

/// Fixed loadings of the emotion and style descriptors.
struct Loadings {
    valence: Vec<f64>,
    arousal: Vec<f64>,
    style: Vec<f64>,
}

impl Loadings {
    fn new() -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_10ad);
        let mut signed = |lo: f64, hi: f64| {
            let m: f64 = rng.random_range(lo..hi);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        };
        let valence = (0..EMOTION_DESCRIPTORS)
            .map(|i| if i % 2 == 0 { signed(0.6, 1.2) } else { signed(0.0, 0.3) })
            .collect();
        let arousal = (0..EMOTION_DESCRIPTORS)
            .map(|i| if i % 2 == 1 { signed(0.6, 1.2) } else { signed(0.0, 0.3) })
            .collect();
        let style = (0..STYLE_DESCRIPTORS).map(|_| signed(0.7, 1.3)).collect();
        Self {
            valence,
            arousal,
            style,
        }
    }
}

fn rating(rng: &mut ChaCha8Rng) -> f64 {
    let n = Normal::new(5.0_f64, 1.6).expect("valid normal");
    n.sample(rng).clamp(1.0, 9.0)
}

fn descriptor_matrix(
    id: &str,
    valence: f64,
    arousal: f64,
    style: f64,
    cfg: &SynthConfig,
    loadings: &Loadings,
    rng: &mut ChaCha8Rng,
) -> DescriptorMatrix {
    let unit = Normal::new(0.0, 1.0).expect("valid normal");
    let v = (valence - 5.0) / 2.0;
    let a = (arousal - 5.0) / 2.0;
    let levels: Vec<f64> = (0..cfg.n_descriptors)
        .map(|j| {
            if j < EMOTION_DESCRIPTORS {
                loadings.valence[j] * v + loadings.arousal[j] * a + cfg.emotion_noise * unit.sample(rng)
            } else if j < EMOTION_DESCRIPTORS + STYLE_DESCRIPTORS {
                loadings.style[j - EMOTION_DESCRIPTORS] * style
            } else {
                unit.sample(rng)
            }
        })
        .collect();
    // Higher arousal also means more window-to-window movement.
    let spread = WINDOW_NOISE * (1.0 + 0.25 * a).max(0.2);
    let values = (0..cfg.n_windows)
        .map(|_| levels.iter().map(|l| l + spread * unit.sample(rng)).collect())
        .collect();
    DescriptorMatrix {
        excerpt_id: id.to_string(),
        names: (0..cfg.n_descriptors).map(|j| format!("lld_{j:02}")).collect(),
        values,
        window_s: 1.0,
        hop_fraction: 0.5,
    }
}

/// Rated pretraining songs.
pub fn synthetic_records(cfg: &SynthConfig) -> Result<Vec<AvRecord>> {
    let loadings = Loadings::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let unit = Normal::new(0.0, 1.0).expect("valid normal");
    (0..cfg.n_records)
        .map(|i| {
            let id = format!("song-{i:04}");
            let valence = rating(&mut rng);
            let arousal = rating(&mut rng);
            let style = cfg.pretrain_style_sd * unit.sample(&mut rng);
            let m = descriptor_matrix(&id, valence, arousal, style, cfg, &loadings, &mut rng);
            Ok(AvRecord {
                song_id: id,
                valence,
                arousal,
                features: aggregate(&m)?,
            })
        })
        .collect()
}

/// Pool manifest entries with their descriptor matrices. Ids are shuffled
/// so they carry no hint of the source type.
pub fn synthetic_pool_matrices(cfg: &SynthConfig) -> Vec<(ManifestEntry, DescriptorMatrix)> {
    let loadings = Loadings::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut types: Vec<SourceType> = SourceType::ALL
        .iter()
        .flat_map(|&t| std::iter::repeat_n(t, cfg.per_type))
        .collect();
    types.shuffle(&mut rng);
    let style_noise = Normal::new(0.0, 0.4).expect("valid normal");
    types
        .into_iter()
        .enumerate()
        .map(|(i, t)| {
            let id = format!("ex-{i:03}");
            let centre = match t {
                SourceType::TypeA => -cfg.separation,
                SourceType::TypeB => cfg.separation,
            };
            let style = centre + style_noise.sample(&mut rng);
            let valence = rating(&mut rng);
            let arousal = rating(&mut rng);
            let m = descriptor_matrix(&id, valence, arousal, style, cfg, &loadings, &mut rng);
            let entry = ManifestEntry {
                id: id.clone(),
                source_type: t,
                title: format!("Synthetic excerpt {i:03}"),
                descriptor_csv: format!("descriptors/{id}.csv"),
                audio_uri: None,
            };
            (entry, m)
        })
        .collect()
}

/// The synthetic pool with features aggregated in memory.
pub fn synthetic_pool(cfg: &SynthConfig) -> Result<Vec<Excerpt>> {
    synthetic_pool_matrices(cfg)
        .into_iter()
        .map(|(entry, m)| {
            Ok(Excerpt {
                id: entry.id,
                source_type: entry.source_type,
                features: aggregate(&m)?,
                metadata: ExcerptMetadata {
                    title: entry.title,
                    duration_s: 30.0,
                    audio_uri: entry.audio_uri,
                },
            })
        })
        .collect()
}

/// The same pool with every source type swapped.
pub fn swap_types(pool: &[Excerpt]) -> Vec<Excerpt> {
    pool.iter()
        .map(|e| Excerpt {
            source_type: e.source_type.swapped(),
            ..e.clone()
        })
        .collect()
}
