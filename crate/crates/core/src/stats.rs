//! Data statistics consumed by the perturbation strategies: per-column
//! spread and range, Pearson correlation, quantile buckets with smoothed
//! local spread, and the categorical data envelope.

use std::collections::{BTreeSet, HashMap};

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::noise;

#[derive(Debug, Clone, PartialEq)]
pub struct ColumnStats {
    /// Sample standard deviation (denominator `n - 1`).
    pub sigma: Vec<f64>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub mean: Vec<f64>,
}

impl ColumnStats {
    pub fn p_num(&self) -> usize {
        self.sigma.len()
    }
}

fn mean_sd(col: ArrayView1<f64>) -> (f64, f64) {
    let n = col.len() as f64;
    let mean = col.sum() / n;
    if col.len() < 2 {
        return (mean, 0.0);
    }
    // A column whose values are all identical has sd exactly 0.
    let first = col[0];
    if col.iter().all(|&v| v == first) {
        return (first, 0.0);
    }
    let ss: f64 = col.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

pub fn column_stats(ds: &Dataset) -> Result<ColumnStats> {
    if ds.n_rows() < 2 {
        return Err(Error::InsufficientData(format!(
            "column statistics need at least 2 rows, got {}",
            ds.n_rows()
        )));
    }
    let p = ds.schema().p_num();
    let mut stats = ColumnStats {
        sigma: Vec::with_capacity(p),
        min: Vec::with_capacity(p),
        max: Vec::with_capacity(p),
        mean: Vec::with_capacity(p),
    };
    for col in ds.numeric().axis_iter(Axis(1)) {
        let (mean, sd) = mean_sd(col);
        stats.mean.push(mean);
        stats.sigma.push(sd);
        stats.min.push(col.iter().copied().fold(f64::INFINITY, f64::min));
        stats.max.push(col.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    }
    Ok(stats)
}

/// Pearson correlation of the columns of `values` (rows are observations).
/// Zero-variance columns correlate 0 with everything else; the diagonal is
/// exactly 1 and the result is exactly symmetric.
pub fn pearson_matrix(values: ArrayView2<f64>) -> Array2<f64> {
    let p = values.ncols();
    let mut centered = values.to_owned();
    let mut sq_norms = vec![0.0; p];
    for (j, mut col) in centered.axis_iter_mut(Axis(1)).enumerate() {
        let (mean, sd) = mean_sd(col.view());
        if sd == 0.0 {
            col.fill(0.0);
            continue;
        }
        col.mapv_inplace(|v| v - mean);
        sq_norms[j] = col.dot(&col);
    }
    let mut corr = Array2::<f64>::eye(p);
    for a in 0..p {
        for b in (a + 1)..p {
            let r = if sq_norms[a] == 0.0 || sq_norms[b] == 0.0 {
                0.0
            } else {
                let dot = centered.column(a).dot(&centered.column(b));
                (dot / (sq_norms[a] * sq_norms[b]).sqrt()).clamp(-1.0, 1.0)
            };
            corr[[a, b]] = r;
            corr[[b, a]] = r;
        }
    }
    corr
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationModel {
    pub matrix: Array2<f64>,
    /// Lower-triangular factor of `matrix + jitter_used * I`.
    pub factor: Array2<f64>,
    pub repaired: bool,
    pub jitter_used: f64,
}

impl CorrelationModel {
    /// Identity correlation of dimension `p` (independent noise).
    pub fn identity(p: usize) -> Self {
        Self {
            matrix: Array2::eye(p),
            factor: Array2::eye(p),
            repaired: false,
            jitter_used: 0.0,
        }
    }

    pub fn from_matrix(matrix: Array2<f64>) -> Result<Self> {
        let f = noise::factorize(&matrix)?;
        Ok(Self {
            matrix,
            factor: f.factor,
            repaired: f.repaired,
            jitter_used: f.jitter_used,
        })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

pub fn pearson_correlation(ds: &Dataset) -> Result<CorrelationModel> {
    if ds.n_rows() < 2 {
        return Err(Error::InsufficientData(format!(
            "correlation needs at least 2 rows, got {}",
            ds.n_rows()
        )));
    }
    CorrelationModel::from_matrix(pearson_matrix(ds.numeric().view()))
}

/// Empirical quantile with linear interpolation between order statistics.
/// `sorted` must be ascending and non-empty.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Quantile buckets of one numeric column.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnBuckets {
    /// `Q + 1` boundaries: column minimum, the `i/Q` quantiles, column maximum.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    /// Per-bucket sample sd before smoothing.
    pub raw_sd: Vec<f64>,
    /// Smoothed spread `s_q`.
    pub s: Vec<f64>,
    pub s_max: f64,
}

impl ColumnBuckets {
    pub fn n_buckets(&self) -> usize {
        self.s.len()
    }

    /// Bucket holding `v`; a value equal to an inner edge belongs to the lower
    /// bucket, values outside the range go to the end buckets.
    pub fn bucket_of(&self, v: f64) -> usize {
        let inner = &self.edges[1..self.edges.len() - 1];
        inner.partition_point(|&e| e < v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BucketSpec {
    pub columns: Vec<ColumnBuckets>,
    pub window: usize,
}

pub const DEFAULT_BUCKETS: usize = 20;
pub const DEFAULT_WINDOW: usize = 3;

/// Centered rolling mean, truncated at both ends.
fn rolling_mean(values: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    let n = values.len();
    (0..n)
        .map(|q| {
            let lo = q.saturating_sub(half);
            let hi = (q + half).min(n - 1);
            values[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect()
}

pub fn quantile_buckets(ds: &Dataset, q: usize, window: usize) -> Result<BucketSpec> {
    if q < 2 {
        return Err(Error::Contract(format!("bucket count must be >= 2, got {q}")));
    }
    if window == 0 || window.is_multiple_of(2) {
        return Err(Error::Contract(format!(
            "rolling window must be odd and positive, got {window}"
        )));
    }
    if ds.n_rows() < q {
        return Err(Error::InsufficientData(format!(
            "{} rows cannot fill {q} buckets",
            ds.n_rows()
        )));
    }
    let columns = ds
        .numeric()
        .axis_iter(Axis(1))
        .map(|col| column_buckets(col, q, window))
        .collect();
    Ok(BucketSpec { columns, window })
}

fn column_buckets(col: ArrayView1<f64>, q: usize, window: usize) -> ColumnBuckets {
    let mut sorted = col.to_vec();
    sorted.sort_by(f64::total_cmp);
    let edges: Vec<f64> = (0..=q)
        .map(|i| quantile_sorted(&sorted, i as f64 / q as f64))
        .collect();
    let mut cb = ColumnBuckets {
        edges,
        counts: vec![0; q],
        raw_sd: vec![0.0; q],
        s: Vec::new(),
        s_max: 0.0,
    };
    let mut members: Vec<Vec<f64>> = vec![Vec::new(); q];
    for &v in col.iter() {
        members[cb.bucket_of(v)].push(v);
    }
    for (b, m) in members.iter().enumerate() {
        cb.counts[b] = m.len();
        if m.len() >= 2 {
            cb.raw_sd[b] = mean_sd(ArrayView1::from(m.as_slice())).1;
        }
    }
    cb.s = rolling_mean(&cb.raw_sd, window);
    cb.s_max = cb.s.iter().copied().fold(0.0, f64::max);
    cb
}

/// Distinct categorical code tuples observed in the data.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalEnvelope {
    combos: Vec<Vec<u32>>,
    index: HashMap<Vec<u32>, usize>,
    p_cat: usize,
}

impl CategoricalEnvelope {
    pub fn from_combos(p_cat: usize, combos: impl IntoIterator<Item = Vec<u32>>) -> Self {
        let set: BTreeSet<Vec<u32>> = combos.into_iter().collect();
        let combos: Vec<Vec<u32>> = set.into_iter().collect();
        let index = combos
            .iter()
            .enumerate()
            .map(|(i, c)| (c.clone(), i))
            .collect();
        Self {
            combos,
            index,
            p_cat,
        }
    }

    /// Combos in lexicographic code order.
    pub fn combos(&self) -> &[Vec<u32>] {
        &self.combos
    }

    pub fn len(&self) -> usize {
        self.combos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.combos.is_empty()
    }

    pub fn p_cat(&self) -> usize {
        self.p_cat
    }

    pub fn contains(&self, combo: &[u32]) -> bool {
        self.index.contains_key(combo)
    }

    pub fn position(&self, combo: &[u32]) -> Option<usize> {
        self.index.get(combo).copied()
    }
}

pub fn extract_envelope(ds: &Dataset) -> Result<CategoricalEnvelope> {
    let p_cat = ds.schema().p_cat();
    if p_cat == 0 {
        return Err(Error::EmptyEnvelope);
    }
    Ok(CategoricalEnvelope::from_combos(
        p_cat,
        ds.categorical().axis_iter(Axis(0)).map(|r| r.to_vec()),
    ))
}
