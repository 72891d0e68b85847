//! Query-by-committee ensemble: members pretrained on complementary
//! cross-validation splits, probability averaging, and the consensus entropy
//! used to rank excerpts for annotation.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{apply_scaler, fit_scaler, FeatureVector, Scaler};
use crate::gbt::{train, BoostedEnsemble, TrainParams};
use crate::types::{AvRecord, Quadrant, DEFAULT_MIDPOINT, N_QUADRANTS};

pub const DEFAULT_MEMBERS: usize = 15;

/// Shuffled k-fold partition of `0..n`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CvSplits {
    /// Fold index of every row.
    pub fold_of: Vec<usize>,
    pub k: usize,
}

impl CvSplits {
    /// Rows held out from member `i`.
    pub fn held_out(&self, i: usize) -> Vec<usize> {
        (0..self.fold_of.len()).filter(|&r| self.fold_of[r] == i).collect()
    }

    /// Rows member `i` trains on, ascending.
    pub fn train_indices(&self, i: usize) -> Vec<usize> {
        (0..self.fold_of.len()).filter(|&r| self.fold_of[r] != i).collect()
    }

    pub fn all_train_indices(&self) -> Vec<Vec<usize>> {
        (0..self.k).map(|i| self.train_indices(i)).collect()
    }
}

/// Assigns `n` rows to `k` folds after a seeded shuffle; fold sizes differ by
/// at most one.
pub fn make_cv_splits(n: usize, k: usize, seed: u64) -> Result<CvSplits> {
    if k < 2 {
        return Err(Error::validation(format!("need at least 2 folds, got {k}")));
    }
    if n < k {
        return Err(Error::validation(format!("{n} rows cannot fill {k} folds")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold_of = vec![0; n];
    for (pos, &row) in order.iter().enumerate() {
        fold_of[row] = pos % k;
    }
    Ok(CvSplits { fold_of, k })
}

/// Standardized, labeled pretraining rows kept for later retraining.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingCorpus {
    pub dataset_id: String,
    pub song_ids: Vec<String>,
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<Quadrant>,
}

impl TrainingCorpus {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Fits a scaler on the records, standardizes them, and labels each row
    /// by its rating quadrant.
    pub fn from_records(dataset_id: impl Into<String>, records: &[AvRecord], midpoint: f64) -> Result<(Self, Scaler)> {
        let raw: Vec<FeatureVector> = records.iter().map(|r| r.features.clone()).collect();
        let scaler = fit_scaler(&raw)?;
        let features = raw
            .iter()
            .map(|v| apply_scaler(&scaler, v).map(FeatureVector::into_inner))
            .collect::<Result<Vec<_>>>()?;
        let labels = records
            .iter()
            .map(|r| r.quadrant(midpoint))
            .collect::<Result<Vec<_>>>()?;
        Ok((
            Self {
                dataset_id: dataset_id.into(),
                song_ids: records.iter().map(|r| r.song_id.clone()).collect(),
                features,
                labels,
            },
            scaler,
        ))
    }
}

/// Where a committee came from and what has been folded into it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub dataset_id: String,
    pub seed: u64,
    pub splits: CvSplits,
    pub params: TrainParams,
    /// Ids of user-annotated excerpts the members were retrained with.
    #[serde(default)]
    pub user_annotations: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_weight: Option<f64>,
    #[serde(default = "default_true")]
    pub retain_pretraining: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Committee {
    pub members: Vec<BoostedEnsemble>,
    pub scaler: Scaler,
    pub n_classes: usize,
    pub provenance: Provenance,
}

impl Committee {
    pub fn new(members: Vec<BoostedEnsemble>, scaler: Scaler, provenance: Provenance) -> Result<Self> {
        if members.len() < 2 {
            return Err(Error::validation(format!(
                "a committee needs at least 2 members, got {}",
                members.len()
            )));
        }
        let n_features = members[0].n_features;
        if members
            .iter()
            .any(|m| m.n_features != n_features || m.n_classes != N_QUADRANTS)
        {
            return Err(Error::validation(
                "committee members disagree on feature dimension or class count",
            ));
        }
        if scaler.dim() != n_features {
            return Err(Error::validation(format!(
                "scaler dimension {} differs from member dimension {n_features}",
                scaler.dim()
            )));
        }
        Ok(Self {
            members,
            scaler,
            n_classes: N_QUADRANTS,
            provenance,
        })
    }

    pub fn n_features(&self) -> usize {
        self.members[0].n_features
    }

    /// Average member probabilities for a standardized input.
    pub fn proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut acc = vec![0.0; self.n_classes];
        for m in &self.members {
            for (a, p) in acc.iter_mut().zip(m.predict_proba(x)?) {
                *a += p;
            }
        }
        let n = self.members.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        Ok(acc)
    }

    /// Consensus entropy of a standardized input.
    pub fn entropy(&self, x: &[f64]) -> Result<f64> {
        consensus_entropy(&self.proba(x)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// Mean of the member probability vectors.
pub fn committee_proba(c: &Committee, x: &FeatureVector) -> Result<Vec<f64>> {
    c.proba(x.as_slice())
}

/// Shannon entropy in nats with `0 ln 0 = 0`.
pub fn consensus_entropy(p: &[f64]) -> Result<f64> {
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::validation(format!("{p:?} has negative or non-finite entries")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::validation(format!("{p:?} sums to {sum}, not 1")));
    }
    Ok(-p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>())
}

fn subset(corpus: &TrainingCorpus, idx: &[usize]) -> (Vec<Vec<f64>>, Vec<Quadrant>) {
    (
        idx.iter().map(|&i| corpus.features[i].clone()).collect(),
        idx.iter().map(|&i| corpus.labels[i]).collect(),
    )
}

/// Trains one member per fold, each on every row outside its fold.
pub fn pretrain(
    corpus: &TrainingCorpus,
    scaler: Scaler,
    params: &TrainParams,
    k: usize,
    seed: u64,
) -> Result<Committee> {
    let splits = make_cv_splits(corpus.len(), k, seed)?;
    let params = params.without_weights();
    let members = (0..k)
        .into_par_iter()
        .map(|i| {
            let (x, y) = subset(corpus, &splits.train_indices(i));
            train(&x, &y, &params)
        })
        .collect::<Result<Vec<_>>>()?;
    Committee::new(
        members,
        scaler,
        Provenance {
            dataset_id: corpus.dataset_id.clone(),
            seed,
            splits,
            params,
            user_annotations: Vec::new(),
            user_weight: None,
            retain_pretraining: true,
        },
    )
}

/// A user label attached to a standardized feature row.
#[derive(Debug, Clone, PartialEq)]
pub struct UserExample {
    pub excerpt_id: String,
    pub features: Vec<f64>,
    pub label: Quadrant,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrainOptions {
    /// Sample weight of every user-annotated row.
    pub user_weight: f64,
    /// Keep each member's pretraining split in its retraining set.
    pub retain_pretraining: bool,
}

impl Default for RetrainOptions {
    fn default() -> Self {
        Self {
            user_weight: 10.0,
            retain_pretraining: true,
        }
    }
}

/// Retrains every member from scratch on its pretraining split plus the
/// weighted user annotations.
pub fn retrain_with_user(
    c: &Committee,
    corpus: &TrainingCorpus,
    user: &[UserExample],
    opts: RetrainOptions,
) -> Result<Committee> {
    if !opts.user_weight.is_finite() || opts.user_weight < 0.0 {
        return Err(Error::validation("user weight must be finite and non-negative"));
    }
    if corpus.len() != c.provenance.splits.fold_of.len() {
        return Err(Error::validation(format!(
            "corpus has {} rows but the committee was pretrained on {}",
            corpus.len(),
            c.provenance.splits.fold_of.len()
        )));
    }
    let splits = &c.provenance.splits;
    let params = &c.provenance.params;
    let members = (0..c.members.len())
        .into_par_iter()
        .map(|i| {
            let (mut x, mut y) = if opts.retain_pretraining {
                subset(corpus, &splits.train_indices(i))
            } else {
                (Vec::new(), Vec::new())
            };
            let mut w = vec![1.0; x.len()];
            for u in user {
                x.push(u.features.clone());
                y.push(u.label);
                w.push(opts.user_weight);
            }
            let p = TrainParams {
                sample_weights: Some(w),
                ..params.clone()
            };
            train(&x, &y, &p)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut provenance = c.provenance.clone();
    provenance.user_annotations = user.iter().map(|u| u.excerpt_id.clone()).collect();
    provenance.user_weight = Some(opts.user_weight);
    provenance.retain_pretraining = opts.retain_pretraining;
    Committee::new(members, c.scaler.clone(), provenance)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub members: usize,
    pub seed: u64,
    pub midpoint: f64,
    pub params: TrainParams,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            members: DEFAULT_MEMBERS,
            seed: 0,
            midpoint: DEFAULT_MIDPOINT,
            params: TrainParams::default(),
        }
    }
}

/// A pretrained committee together with the corpus it was trained on, which
/// personalization needs to rebuild every member.
#[derive(Debug, Clone, PartialEq)]
pub struct Pretrained {
    pub committee: Committee,
    pub corpus: TrainingCorpus,
}

const MEMBERS_DIR: &str = "members";
const SCALER_FILE: &str = "scaler.json";
const PROVENANCE_FILE: &str = "provenance.json";
const CORPUS_FILE: &str = "corpus.json";

impl Pretrained {
    pub fn from_records(dataset_id: &str, records: &[AvRecord], cfg: &PretrainConfig) -> Result<Self> {
        let (corpus, scaler) = TrainingCorpus::from_records(dataset_id, records, cfg.midpoint)?;
        let committee = pretrain(&corpus, scaler, &cfg.params, cfg.members, cfg.seed)?;
        Ok(Self { committee, corpus })
    }

    /// Writes `members/member-NN.json`, `scaler.json`, `provenance.json` and
    /// `corpus.json` under `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let members_dir = dir.join(MEMBERS_DIR);
        fs::create_dir_all(&members_dir).map_err(|e| Error::file(&members_dir, e))?;
        for (i, m) in self.committee.members.iter().enumerate() {
            let p = members_dir.join(format!("member-{i:02}.json"));
            fs::write(&p, m.to_json()?).map_err(|e| Error::file(&p, e))?;
        }
        write_json(&dir.join(SCALER_FILE), &self.committee.scaler)?;
        write_json(&dir.join(PROVENANCE_FILE), &self.committee.provenance)?;
        write_json(&dir.join(CORPUS_FILE), &self.corpus)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let members_dir = dir.join(MEMBERS_DIR);
        let mut paths: Vec<_> = fs::read_dir(&members_dir)
            .map_err(|e| Error::file(&members_dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("json"))
            .collect();
        paths.sort();
        let members = paths
            .iter()
            .map(|p| {
                let s = fs::read_to_string(p).map_err(|e| Error::file(p, e))?;
                BoostedEnsemble::from_json(&s)
            })
            .collect::<Result<Vec<_>>>()?;
        let scaler: Scaler = read_json(&dir.join(SCALER_FILE))?;
        let provenance: Provenance = read_json(&dir.join(PROVENANCE_FILE))?;
        let corpus: TrainingCorpus = read_json(&dir.join(CORPUS_FILE))?;
        if provenance.splits.k != members.len() {
            return Err(Error::validation(format!(
                "{}: provenance lists {} folds but {} member files were found",
                dir.display(),
                provenance.splits.k,
                members.len()
            )));
        }
        Ok(Self {
            committee: Committee::new(members, scaler, provenance)?,
            corpus,
        })
    }
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    fs::write(path, serde_json::to_string(v)?).map_err(|e| Error::file(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let s = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    serde_json::from_str(&s).map_err(|e| Error::validation(format!("{}: {e}", path.display())))
}
