//! Summary features from per-window low-level descriptors.
//!
//! A descriptor matrix holds one row per analysis window. Each descriptor
//! column contributes four summary values: the mean and population standard
//! deviation of the column, and the mean and standard deviation of its first
//! differences. The output is laid out block-wise as
//! `[mean(x) | std(x) | mean(dx) | std(dx)]`, so 65 descriptors give 260
//! features.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_DESCRIPTORS: usize = 65;
pub const DEFAULT_FEATURE_DIM: usize = 4 * DEFAULT_DESCRIPTORS;

/// Per-window descriptor values for one excerpt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptorMatrix {
    pub excerpt_id: String,
    pub names: Vec<String>,
    /// Row-major, `n_windows` rows of `names.len()` values.
    pub values: Vec<Vec<f64>>,
    pub window_s: f64,
    pub hop_fraction: f64,
}

impl DescriptorMatrix {
    pub fn new(excerpt_id: impl Into<String>, values: Vec<Vec<f64>>) -> Result<Self> {
        let n_desc = values.first().map_or(0, Vec::len);
        let names = (0..n_desc).map(|i| format!("d{i}")).collect();
        let m = Self {
            excerpt_id: excerpt_id.into(),
            names,
            values,
            window_s: 1.0,
            hop_fraction: 0.5,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn n_windows(&self) -> usize {
        self.values.len()
    }

    pub fn n_descriptors(&self) -> usize {
        self.names.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_windows() < 2 {
            return Err(Error::validation(format!(
                "descriptor matrix `{}` has {} windows; at least 2 are required",
                self.excerpt_id,
                self.n_windows()
            )));
        }
        if self.n_descriptors() == 0 {
            return Err(Error::validation(format!(
                "descriptor matrix `{}` has no descriptors",
                self.excerpt_id
            )));
        }
        for (t, row) in self.values.iter().enumerate() {
            if row.len() != self.n_descriptors() {
                return Err(Error::validation(format!(
                    "descriptor matrix `{}`: window {t} has {} values, expected {}",
                    self.excerpt_id,
                    row.len(),
                    self.n_descriptors()
                )));
            }
            if let Some(j) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::validation(format!(
                    "descriptor matrix `{}`: non-finite value at window {t}, descriptor {j}",
                    self.excerpt_id
                )));
            }
        }
        Ok(())
    }
}

/// Fixed-length summary of one excerpt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector {
    values: Vec<f64>,
}

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

impl From<Vec<f64>> for FeatureVector {
    fn from(values: Vec<f64>) -> Self {
        Self::new(values)
    }
}

/// First differences along the window axis, with a zero first row.
pub fn first_order_delta(m: &DescriptorMatrix) -> Result<Vec<Vec<f64>>> {
    m.validate()?;
    let d = m.n_descriptors();
    let mut out = Vec::with_capacity(m.n_windows());
    out.push(vec![0.0; d]);
    for pair in m.values.windows(2) {
        out.push(pair[1].iter().zip(&pair[0]).map(|(b, a)| b - a).collect());
    }
    Ok(out)
}

fn column_mean_std(rows: &[Vec<f64>], d: usize) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let mut mean = vec![0.0; d];
    for row in rows {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; d];
    for row in rows {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std = var.into_iter().map(|s| (s / n).sqrt()).collect();
    (mean, std)
}

/// Summarizes a descriptor matrix into a `4 * n_descriptors` feature vector.
pub fn aggregate(m: &DescriptorMatrix) -> Result<FeatureVector> {
    let delta = first_order_delta(m)?;
    let d = m.n_descriptors();
    let (mean, std) = column_mean_std(&m.values, d);
    let (dmean, dstd) = column_mean_std(&delta, d);
    let mut values = Vec::with_capacity(4 * d);
    values.extend(mean);
    values.extend(std);
    values.extend(dmean);
    values.extend(dstd);
    Ok(FeatureVector::new(values))
}

/// Per-dimension standardization fitted on a reference set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub fitted_on: usize,
    /// Dimensions with zero variance in the fitting set; their std is 1.
    pub degenerate_dims: Vec<usize>,
}

impl Scaler {
    pub fn identity(dim: usize) -> Self {
        Self {
            means: vec![0.0; dim],
            stds: vec![1.0; dim],
            fitted_on: 0,
            degenerate_dims: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.means.len()
    }

    pub fn apply(&self, v: &FeatureVector) -> Result<FeatureVector> {
        apply_scaler(self, v)
    }

    /// Undoes [`apply_scaler`].
    pub fn invert(&self, v: &FeatureVector) -> Result<FeatureVector> {
        self.check_dim(v)?;
        Ok(FeatureVector::new(
            v.as_slice()
                .iter()
                .zip(self.means.iter().zip(&self.stds))
                .map(|(x, (m, s))| x * s + m)
                .collect(),
        ))
    }

    fn check_dim(&self, v: &FeatureVector) -> Result<()> {
        if v.len() != self.dim() {
            return Err(Error::validation(format!(
                "feature dimension {} does not match scaler dimension {}",
                v.len(),
                self.dim()
            )));
        }
        Ok(())
    }
}

/// Fits per-dimension mean and population std over `vectors`.
pub fn fit_scaler(vectors: &[FeatureVector]) -> Result<Scaler> {
    if vectors.len() < 2 {
        return Err(Error::validation(format!(
            "scaler needs at least 2 vectors, got {}",
            vectors.len()
        )));
    }
    let dim = vectors[0].len();
    if let Some((i, v)) = vectors.iter().enumerate().find(|(_, v)| v.len() != dim) {
        return Err(Error::validation(format!(
            "vector {i} has dimension {}, expected {dim}",
            v.len()
        )));
    }
    let rows: Vec<Vec<f64>> = vectors.iter().map(|v| v.as_slice().to_vec()).collect();
    let (means, mut stds) = column_mean_std(&rows, dim);
    let mut degenerate_dims = Vec::new();
    for (i, s) in stds.iter_mut().enumerate() {
        if s.is_nan() || *s <= 0.0 {
            *s = 1.0;
            degenerate_dims.push(i);
        }
    }
    Ok(Scaler {
        means,
        stds,
        fitted_on: vectors.len(),
        degenerate_dims,
    })
}

pub fn apply_scaler(s: &Scaler, v: &FeatureVector) -> Result<FeatureVector> {
    s.check_dim(v)?;
    Ok(FeatureVector::new(
        v.as_slice()
            .iter()
            .zip(s.means.iter().zip(&s.stds))
            .map(|(x, (m, sd))| (x - m) / sd)
            .collect(),
    ))
}
