//! Multi-class gradient-boosted regression trees.
//!
//! Each boosting round fits one tree per class on the Newton statistics of
//! the softmax cross-entropy, and the class margins move additively by
//! `learning_rate * tree(x)`. Training is deterministic: no subsampling, exact
//! split search, fixed tie-breaking.

mod objective;
mod tree;

pub use objective::{softmax, softmax_grad_hess, weighted_cross_entropy};
pub use tree::{fit_tree, fit_tree_sorted, SortedColumns, TreeNode};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Quadrant, N_QUADRANTS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainParams {
    pub rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_child_weight: f64,
    pub lambda_l2: f64,
    /// Per-row weights; `None` means every row weighs 1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_weights: Option<Vec<f64>>,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            rounds: 50,
            learning_rate: 0.1,
            max_depth: 3,
            min_child_weight: 1.0,
            lambda_l2: 1.0,
            sample_weights: None,
        }
    }
}

impl TrainParams {
    pub fn validate(&self) -> Result<()> {
        if self.rounds < 1 {
            return Err(Error::validation("rounds must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::validation(format!(
                "learning_rate {} outside (0, 1]",
                self.learning_rate
            )));
        }
        if self.max_depth < 1 {
            return Err(Error::validation("max_depth must be at least 1"));
        }
        if !self.lambda_l2.is_finite() || self.lambda_l2 < 0.0 {
            return Err(Error::validation("lambda_l2 must be finite and non-negative"));
        }
        if !self.min_child_weight.is_finite() || self.min_child_weight < 0.0 {
            return Err(Error::validation("min_child_weight must be finite and non-negative"));
        }
        Ok(())
    }

    /// The same hyperparameters without per-row weights.
    pub fn without_weights(&self) -> Self {
        Self {
            sample_weights: None,
            ..self.clone()
        }
    }
}

/// A trained multi-class boosted tree model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedEnsemble {
    pub params: TrainParams,
    pub n_classes: usize,
    pub n_features: usize,
    pub learning_rate: f64,
    pub base_score: Vec<f64>,
    /// `trees[round][class]`.
    pub trees: Vec<Vec<TreeNode>>,
}

impl BoostedEnsemble {
    /// A model with no trees that always predicts `softmax(base_score)`.
    pub fn constant(base_score: Vec<f64>, n_features: usize) -> Self {
        Self {
            params: TrainParams::default(),
            n_classes: base_score.len(),
            n_features,
            learning_rate: TrainParams::default().learning_rate,
            base_score,
            trees: Vec::new(),
        }
    }

    pub fn rounds(&self) -> usize {
        self.trees.len()
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_features {
            return Err(Error::validation(format!(
                "input has {} features, model expects {}",
                x.len(),
                self.n_features
            )));
        }
        Ok(())
    }

    pub fn predict_margin(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.predict_margin_rounds(x, self.rounds())
    }

    /// Margins using only the first `rounds` boosting rounds.
    pub fn predict_margin_rounds(&self, x: &[f64], rounds: usize) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let mut margin = self.base_score.clone();
        for round in self.trees.iter().take(rounds) {
            for (m, tree) in margin.iter_mut().zip(round) {
                *m += self.learning_rate * tree.predict(x);
            }
        }
        Ok(margin)
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.predict_margin(x)?))
    }

    /// Canonical JSON form; identical models give identical bytes.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(s)?;
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<()> {
        if self.base_score.len() != self.n_classes {
            return Err(Error::validation("base_score length differs from n_classes"));
        }
        for round in &self.trees {
            if round.len() != self.n_classes {
                return Err(Error::validation("boosting round missing class trees"));
            }
            if let Some(f) = round.iter().filter_map(TreeNode::max_feature_index).max() {
                if f >= self.n_features {
                    return Err(Error::validation(format!(
                        "tree references feature {f} of {}",
                        self.n_features
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Trains a four-quadrant classifier.
pub fn train(x: &[Vec<f64>], y: &[Quadrant], params: &TrainParams) -> Result<BoostedEnsemble> {
    let labels: Vec<usize> = y.iter().map(|q| q.index()).collect();
    train_multiclass(x, &labels, N_QUADRANTS, params)
}

/// Trains a `n_classes`-way classifier on integer labels.
///
/// Rows with zero weight are dropped before training, so they influence
/// neither the priors nor the split candidates.
pub fn train_multiclass(
    x: &[Vec<f64>],
    labels: &[usize],
    n_classes: usize,
    params: &TrainParams,
) -> Result<BoostedEnsemble> {
    params.validate()?;
    if x.is_empty() {
        return Err(Error::validation("training set is empty"));
    }
    if labels.len() != x.len() {
        return Err(Error::validation(format!(
            "{} rows but {} labels",
            x.len(),
            labels.len()
        )));
    }
    if n_classes < 2 {
        return Err(Error::validation("need at least two classes"));
    }
    let n_features = x[0].len();
    for (i, row) in x.iter().enumerate() {
        if row.len() != n_features {
            return Err(Error::validation(format!(
                "row {i} has {} features, expected {n_features}",
                row.len()
            )));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation(format!("row {i} has non-finite features")));
        }
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(Error::validation(format!("label {bad} out of range")));
    }
    let weights = match &params.sample_weights {
        Some(w) if w.len() != x.len() => {
            return Err(Error::validation(format!(
                "{} sample weights for {} rows",
                w.len(),
                x.len()
            )))
        }
        Some(w) => {
            if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::validation("sample weights must be finite and non-negative"));
            }
            w.clone()
        }
        None => vec![1.0; x.len()],
    };

    let keep: Vec<usize> = (0..x.len()).filter(|&i| weights[i] > 0.0).collect();
    if keep.is_empty() {
        return Err(Error::validation("all sample weights are zero"));
    }
    let rows: Vec<Vec<f64>> = keep.iter().map(|&i| x[i].clone()).collect();
    let y: Vec<usize> = keep.iter().map(|&i| labels[i]).collect();
    let w: Vec<f64> = keep.iter().map(|&i| weights[i]).collect();

    // Log-priors with add-one smoothing so empty classes stay finite.
    let total: f64 = w.iter().sum();
    let mut class_weight = vec![0.0; n_classes];
    for (&yi, &wi) in y.iter().zip(&w) {
        class_weight[yi] += wi;
    }
    let base_score: Vec<f64> = class_weight
        .iter()
        .map(|cw| ((cw + 1.0) / (total + n_classes as f64)).ln())
        .collect();

    let sorted = SortedColumns::new(&rows);
    let mut margins = vec![base_score.clone(); rows.len()];
    let mut trees = Vec::with_capacity(params.rounds);
    let mut g_col = vec![0.0; rows.len()];
    let mut h_col = vec![0.0; rows.len()];
    let mut scratch = tree::TreeScratch::default();
    for _ in 0..params.rounds {
        let (grad, hess) = softmax_grad_hess(&margins, &y, &w)?;
        let mut round = Vec::with_capacity(n_classes);
        for k in 0..n_classes {
            for i in 0..rows.len() {
                g_col[i] = grad[i][k];
                h_col[i] = hess[i][k];
            }
            round.push(tree::fit_tree_with(&sorted, &g_col, &h_col, params, &mut scratch));
        }
        for (m, row) in margins.iter_mut().zip(&rows) {
            for (mk, tree) in m.iter_mut().zip(&round) {
                *mk += params.learning_rate * tree.predict(row);
            }
        }
        trees.push(round);
    }

    Ok(BoostedEnsemble {
        params: params.without_weights(),
        n_classes,
        n_features,
        learning_rate: params.learning_rate,
        base_score,
        trees,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    pub(crate) fn blobs(seed: u64, n: usize, d: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.5).unwrap();
        let centers: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..d).map(|_| rng.random_range(-3.0..3.0)).collect())
            .collect();
        let mut x = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let c = i % 4;
            x.push(centers[c].iter().map(|m| m + noise.sample(&mut rng)).collect());
            y.push(c);
        }
        (x, y)
    }

    fn accuracy(m: &BoostedEnsemble, x: &[Vec<f64>], y: &[usize]) -> f64 {
        let hits = x
            .iter()
            .zip(y)
            .filter(|(row, &label)| {
                let p = m.predict_proba(row).unwrap();
                argmax(&p) == label
            })
            .count();
        hits as f64 / y.len() as f64
    }

    fn argmax(v: &[f64]) -> usize {
        v.iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap()
    }

    #[test]
    fn fits_small_blobs() {
        let (x, y) = blobs(0, 40, 3);
        let m = train_multiclass(&x, &y, 4, &TrainParams::default()).unwrap();
        assert!(accuracy(&m, &x, &y) >= 0.95);
        assert_eq!(m.rounds(), 50);
        for p in x.iter().map(|r| m.predict_proba(r).unwrap()) {
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn single_class_dominates() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x: Vec<Vec<f64>> = (0..12).map(|_| vec![rng.random(), rng.random()]).collect();
        let y = vec![Quadrant::Q3; 12];
        let m = train(&x, &y, &TrainParams::default()).unwrap();
        for _ in 0..50 {
            let q = vec![rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)];
            assert_eq!(argmax(&m.predict_proba(&q).unwrap()), Quadrant::Q3.index());
        }
    }

    #[test]
    fn empty_training_set_rejected() {
        assert!(train(&[], &[], &TrainParams::default()).is_err());
        let bad = TrainParams {
            learning_rate: 0.0,
            ..TrainParams::default()
        };
        assert!(train(&[vec![0.0]], &[Quadrant::Q1], &bad).is_err());
    }

    #[test]
    fn half_weight_duplicates_match_original() {
        let (x, y) = blobs(9, 60, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w: Vec<f64> = (0..60).map(|_| rng.random_range(0.5..3.0)).collect();
        let p = TrainParams {
            sample_weights: Some(w.clone()),
            ..TrainParams::default()
        };
        let m1 = train_multiclass(&x, &y, 4, &p).unwrap();
        let x2: Vec<Vec<f64>> = x.iter().flat_map(|r| [r.clone(), r.clone()]).collect();
        let y2: Vec<usize> = y.iter().flat_map(|&l| [l, l]).collect();
        let w2: Vec<f64> = w.iter().flat_map(|&v| [v / 2.0, v / 2.0]).collect();
        let p2 = TrainParams {
            sample_weights: Some(w2),
            ..TrainParams::default()
        };
        let m2 = train_multiclass(&x2, &y2, 4, &p2).unwrap();
        for _ in 0..100 {
            let q: Vec<f64> = (0..4).map(|_| rng.random_range(-4.0..4.0)).collect();
            let a = m1.predict_margin(&q).unwrap();
            let b = m2.predict_margin(&q).unwrap();
            for (u, v) in a.iter().zip(&b) {
                assert!((u - v).abs() < 1e-9, "{u} vs {v}");
            }
        }
    }

    #[test]
    fn zero_weight_rows_are_ignored() {
        let (x, y) = blobs(2, 40, 3);
        let base = train_multiclass(&x, &y, 4, &TrainParams::default()).unwrap();
        let mut x2 = x.clone();
        let mut y2 = y.clone();
        x2.extend((0..10).map(|i| vec![i as f64 * 0.3 - 1.0; 3]));
        y2.extend(vec![1; 10]);
        let mut w = vec![1.0; 40];
        w.extend(vec![0.0; 10]);
        let p = TrainParams {
            sample_weights: Some(w),
            ..TrainParams::default()
        };
        let m = train_multiclass(&x2, &y2, 4, &p).unwrap();
        assert_eq!(m.to_json().unwrap(), base.to_json().unwrap());
    }

    #[test]
    fn constant_model_is_uniform() {
        let m = BoostedEnsemble::constant(vec![0.0; 4], 3);
        assert_eq!(m.predict_proba(&[1.0, 2.0, 3.0]).unwrap(), vec![0.25; 4]);
        assert!(m.predict_proba(&[1.0]).is_err());
    }

    #[test]
    fn proba_normalized_and_argmax_consistent() {
        let (x, y) = blobs(5, 80, 4);
        let m = train_multiclass(&x, &y, 4, &TrainParams::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..1000 {
            let q: Vec<f64> = (0..4).map(|_| rng.random_range(-6.0..6.0)).collect();
            let margin = m.predict_margin(&q).unwrap();
            let p = m.predict_proba(&q).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
            assert_eq!(argmax(&p), argmax(&margin));
        }
    }

    #[test]
    fn deterministic_serialization() {
        let (x, y) = blobs(8, 50, 5);
        let a = train_multiclass(&x, &y, 4, &TrainParams::default()).unwrap();
        let b = train_multiclass(&x, &y, 4, &TrainParams::default()).unwrap();
        let ja = a.to_json().unwrap();
        assert_eq!(ja, b.to_json().unwrap());
        let back = BoostedEnsemble::from_json(&ja).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn feature_scaling_covariance() {
        let (x, y) = blobs(12, 60, 3);
        let c = 3.7;
        let scaled: Vec<Vec<f64>> = x.iter().map(|r| vec![r[0], r[1] * c, r[2]]).collect();
        let m1 = train_multiclass(&x, &y, 4, &TrainParams::default()).unwrap();
        let m2 = train_multiclass(&scaled, &y, 4, &TrainParams::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..200 {
            let q: Vec<f64> = (0..3).map(|_| rng.random_range(-4.0..4.0)).collect();
            let qs = vec![q[0], q[1] * c, q[2]];
            let a = m1.predict_proba(&q).unwrap();
            let b = m2.predict_proba(&qs).unwrap();
            for (u, v) in a.iter().zip(&b) {
                assert!((u - v).abs() < 1e-9);
            }
        }
    }

    const LOSS_RESOLUTION: f64 = 1e-12;

    #[test]
    fn training_loss_never_increases() {
        for seed in 0..20 {
            let (x, y) = blobs(100 + seed, 80, 4);
            let m = train_multiclass(&x, &y, 4, &TrainParams::default()).unwrap();
            let w = vec![1.0; x.len()];
            let mut prev = f64::INFINITY;
            for r in 0..=m.rounds() {
                let margins: Vec<Vec<f64>> = x.iter().map(|row| m.predict_margin_rounds(row, r).unwrap()).collect();
                let loss = weighted_cross_entropy(&margins, &y, &w).unwrap();
                // Once trees collapse to near-zero leaves the loss only moves at
                // the last bit of its f64 representation.
                assert!(
                    loss <= prev * (1.0 + LOSS_RESOLUTION),
                    "seed {seed} round {r}: {loss} > {prev}"
                );
                prev = loss;
            }
        }
    }
}
