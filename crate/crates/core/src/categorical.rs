//! Categorical perturbation over the data envelope.
//!
//! Levels of a categorical column are compared through the absolute
//! difference of their mean response, scaled so the most disparate pair sits
//! at distance 1. Observations are compared through the weighted sum of those
//! per-column distances. A perturbation of `x` at budget `b` is a uniform draw
//! from the observed combos within `b · Σ w_j` of `x`, kept with probability
//! `max_prop` and otherwise replaced by `x` itself.
//!
//! Note that `x` is always at distance 0 from itself, so at `b = 0` the
//! neighbor set is the zero-distance class of `x`, never empty.

use std::collections::HashMap;
use std::fs::File;
use std::path::Path;

use ndarray::parallel::prelude::*;
use ndarray::{Array2, Array3, Axis};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ColumnSchema, Dataset};
use crate::error::{Error, Result};
use crate::noise::{substream_rng, CATEGORICAL_STREAM, SHUFFLE_STREAM};
use crate::stats::CategoricalEnvelope;

/// Slack for distances that equal the threshold up to rounding.
const TIE_TOLERANCE: f64 = 1e-12;

/// Scaled level-distance matrix of one categorical column.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnDistance {
    pub matrix: Array2<f64>,
    /// Mean response per level; empty when the matrix was user-supplied.
    pub level_means: Vec<f64>,
    /// All level means equal, so every distance is 0.
    pub degenerate: bool,
}

impl ColumnDistance {
    pub fn from_means(means: &[f64]) -> Self {
        let m = means.len();
        let raw = Array2::from_shape_fn((m, m), |(a, b)| (means[a] - means[b]).abs());
        let max = raw.iter().copied().fold(0.0, f64::max);
        let degenerate = max == 0.0;
        let matrix = if degenerate { raw } else { raw / max };
        Self {
            matrix,
            level_means: means.to_vec(),
            degenerate,
        }
    }

    /// Accepts an expert-supplied matrix: square, symmetric, zero diagonal,
    /// entries in `[0, 1]`.
    pub fn from_matrix(matrix: Array2<f64>) -> Result<Self> {
        let m = matrix.nrows();
        if matrix.ncols() != m {
            return Err(Error::Contract("distance matrix must be square".into()));
        }
        for a in 0..m {
            if matrix[[a, a]] != 0.0 {
                return Err(Error::Contract("distance matrix needs a zero diagonal".into()));
            }
            for b in 0..m {
                let v = matrix[[a, b]];
                if !(0.0..=1.0).contains(&v) || v != matrix[[b, a]] {
                    return Err(Error::Contract(
                        "distance matrix must be symmetric with entries in [0, 1]".into(),
                    ));
                }
            }
        }
        let degenerate = matrix.iter().all(|&v| v == 0.0);
        Ok(Self {
            matrix,
            level_means: Vec::new(),
            degenerate,
        })
    }

    /// CSV with a `level` header column followed by one column per level.
    pub fn read_csv(path: impl AsRef<Path>, column: &ColumnSchema) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
        let header = rdr.headers()?.clone();
        let m = column.levels.len();
        let order: Vec<u32> = header
            .iter()
            .skip(1)
            .map(|l| {
                column.level_code(l).ok_or_else(|| {
                    Error::Schema(format!("distance file {}: unknown level `{l}`", path.display()))
                })
            })
            .collect::<Result<_>>()?;
        if order.len() != m {
            return Err(Error::Schema(format!(
                "distance file {} covers {} of {m} levels",
                path.display(),
                order.len()
            )));
        }
        let mut matrix = Array2::<f64>::from_elem((m, m), f64::NAN);
        for record in rdr.records() {
            let record = record?;
            let label = record.get(0).unwrap_or("");
            let a = column.level_code(label).ok_or_else(|| {
                Error::Schema(format!("distance file {}: unknown level `{label}`", path.display()))
            })? as usize;
            for (pos, &b) in order.iter().enumerate() {
                let token = record.get(pos + 1).unwrap_or("");
                matrix[[a, b as usize]] = token.parse().map_err(|_| Error::Parse {
                    row: a,
                    column: column.levels[b as usize].clone(),
                    token: token.to_string(),
                })?;
            }
        }
        if matrix.iter().any(|v| v.is_nan()) {
            return Err(Error::Schema(format!("distance file {} is incomplete", path.display())));
        }
        Self::from_matrix(matrix)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>, column: &ColumnSchema) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        let mut header = vec!["level".to_string()];
        header.extend(column.levels.iter().cloned());
        w.write_record(&header)?;
        for (a, level) in column.levels.iter().enumerate() {
            let mut row = vec![level.clone()];
            row.extend(self.matrix.row(a).iter().map(|v| format!("{v:.16e}")));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelDistance {
    pub columns: Vec<ColumnDistance>,
}

/// Per-column distances from level-conditional response means.
pub fn fit_level_distance(ds: &Dataset) -> Result<LevelDistance> {
    let y = ds
        .response()
        .ok_or_else(|| Error::MissingResponse("pseudo-distance needs the response".into()))?;
    let schema = ds.schema();
    let mut columns = Vec::with_capacity(schema.p_cat());
    for (j, codes) in ds.categorical().axis_iter(Axis(1)).enumerate() {
        let col = schema.categorical(j);
        let m = col.levels.len();
        let mut sum = vec![0.0; m];
        let mut count = vec![0usize; m];
        for (&c, &yi) in codes.iter().zip(y) {
            sum[c as usize] += yi;
            count[c as usize] += 1;
        }
        if let Some(l) = count.iter().position(|&c| c == 0) {
            return Err(Error::UnobservedLevel {
                column: col.name.clone(),
                level: col.levels[l].clone(),
            });
        }
        let means: Vec<f64> = sum.iter().zip(&count).map(|(s, &c)| s / c as f64).collect();
        let dist = ColumnDistance::from_means(&means);
        if dist.degenerate {
            log::warn!(
                "column `{}`: all levels share the same mean response, every level distance is 0",
                col.name
            );
        }
        columns.push(dist);
    }
    Ok(LevelDistance { columns })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalSpace {
    pub envelope: CategoricalEnvelope,
    pub distances: LevelDistance,
    pub weights: Vec<f64>,
}

impl CategoricalSpace {
    pub fn new(envelope: CategoricalEnvelope, distances: LevelDistance, weights: Vec<f64>) -> Result<Self> {
        let p = envelope.p_cat();
        if distances.columns.len() != p || weights.len() != p {
            return Err(Error::Contract(format!(
                "categorical space needs {p} distance matrices and weights"
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::Contract("categorical weights must be finite and >= 0".into()));
        }
        Ok(Self {
            envelope,
            distances,
            weights,
        })
    }

    pub fn with_unit_weights(envelope: CategoricalEnvelope, distances: LevelDistance) -> Result<Self> {
        let p = envelope.p_cat();
        Self::new(envelope, distances, vec![1.0; p])
    }

    /// Largest attainable distance, `Σ w_j`.
    pub fn max_distance(&self) -> f64 {
        self.weights.iter().sum()
    }
}

pub fn observation_distance(a: &[u32], b: &[u32], space: &CategoricalSpace) -> f64 {
    a.iter()
        .zip(b)
        .zip(space.distances.columns.iter().zip(&space.weights))
        .map(|((&x, &z), (d, &w))| w * d.matrix[[x as usize, z as usize]])
        .sum()
}

/// Envelope positions within `b_cat · Σ w_j` of `x` (boundary included).
pub fn neighbor_set(x: &[u32], space: &CategoricalSpace, b_cat: f64) -> Vec<usize> {
    neighbor_set_within(x, space, b_cat, None)
}

/// As [`neighbor_set`], additionally requiring agreement with `x` on every
/// column not flagged in `free`.
pub fn neighbor_set_within(x: &[u32], space: &CategoricalSpace, b_cat: f64, free: Option<&[bool]>) -> Vec<usize> {
    let threshold = b_cat * space.max_distance() + TIE_TOLERANCE;
    space
        .envelope
        .combos()
        .iter()
        .enumerate()
        .filter(|(_, z)| match free {
            Some(free) => z.iter().zip(x).zip(free).all(|((a, b), &f)| f || a == b),
            None => true,
        })
        .filter(|(_, z)| observation_distance(z, x, space) <= threshold)
        .map(|(i, _)| i)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CategoricalMethod {
    #[default]
    PseudoDistance,
    Shuffle,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalPerturbPlan {
    pub budget: f64,
    pub k: usize,
    pub max_prop: f64,
    pub method: CategoricalMethod,
    /// Categorical column indices allowed to change.
    pub target_columns: Vec<usize>,
}

impl CategoricalPerturbPlan {
    pub fn all_columns(budget: f64, k: usize, max_prop: f64, method: CategoricalMethod, p_cat: usize) -> Self {
        Self {
            budget,
            k,
            max_prop,
            method,
            target_columns: (0..p_cat).collect(),
        }
    }

    pub fn validate(&self, p_cat: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.budget) {
            return Err(Error::Contract(format!(
                "categorical budget must lie in [0, 1], got {}",
                self.budget
            )));
        }
        if !(self.max_prop > 0.0 && self.max_prop <= 1.0) {
            return Err(Error::Contract(format!(
                "max_prop must lie in (0, 1], got {}",
                self.max_prop
            )));
        }
        if self.k == 0 {
            return Err(Error::Contract("K must be at least 1".into()));
        }
        if self.target_columns.is_empty() {
            return Err(Error::Contract("categorical plan targets no columns".into()));
        }
        if let Some(&j) = self.target_columns.iter().find(|&&j| j >= p_cat) {
            return Err(Error::Contract(format!("categorical column index {j} out of range")));
        }
        Ok(())
    }

    fn free_mask(&self, p_cat: usize) -> Option<Vec<bool>> {
        if self.target_columns.len() == p_cat {
            return None;
        }
        let mut mask = vec![false; p_cat];
        for &j in &self.target_columns {
            mask[j] = true;
        }
        Some(mask)
    }
}

/// K perturbed categorical code tuples per observation.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalBatch {
    /// Shape `(n, K, p_cat)`.
    pub values: Array3<u32>,
    pub method: CategoricalMethod,
    pub budget: f64,
    /// Draws that passed the `max_prop` acceptance step (pseudo-distance only).
    pub accepted: usize,
}

impl CategoricalBatch {
    pub fn unperturbed(ds: &Dataset, k: usize) -> Self {
        let (n, p) = ds.categorical().dim();
        Self {
            values: Array3::from_shape_fn((n, k, p), |(i, _, j)| ds.categorical()[[i, j]]),
            method: CategoricalMethod::PseudoDistance,
            budget: 0.0,
            accepted: 0,
        }
    }

    pub fn n(&self) -> usize {
        self.values.len_of(Axis(0))
    }

    pub fn k(&self) -> usize {
        self.values.len_of(Axis(1))
    }

    pub fn acceptance_fraction(&self) -> f64 {
        self.accepted as f64 / (self.n() * self.k()) as f64
    }
}

pub fn pseudo_perturb(
    ds: &Dataset,
    space: &CategoricalSpace,
    plan: &CategoricalPerturbPlan,
    master_seed: u64,
) -> Result<CategoricalBatch> {
    let p = ds.schema().p_cat();
    plan.validate(p)?;
    if plan.method != CategoricalMethod::PseudoDistance {
        return Err(Error::Contract("pseudo_perturb called with a shuffle plan".into()));
    }
    if space.envelope.p_cat() != p {
        return Err(Error::Contract("categorical space does not match the dataset".into()));
    }
    let free = plan.free_mask(p);

    // Neighbor sets depend only on the combo, so compute one per distinct combo.
    let mut distinct: Vec<Vec<u32>> = ds
        .categorical()
        .axis_iter(Axis(0))
        .map(|r| r.to_vec())
        .collect();
    distinct.sort();
    distinct.dedup();
    let neighbors: HashMap<Vec<u32>, Vec<usize>> = distinct
        .into_par_iter()
        .map(|c| {
            let set = neighbor_set_within(&c, space, plan.budget, free.as_deref());
            (c, set)
        })
        .collect();

    let (n, k) = (ds.n_rows(), plan.k);
    let combos = space.envelope.combos();
    let mut values = Array3::<u32>::zeros((n, k, p));
    let accepted: usize = values
        .axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .map(|(i, mut block)| {
            let x = ds.categorical_row(i).to_vec();
            let set = &neighbors[&x];
            let mut rng = substream_rng(master_seed, CATEGORICAL_STREAM, i as u64);
            let mut accepted = 0;
            for kk in 0..k {
                let pick = rng.random_range(0..set.len().max(1));
                let keep = rng.random::<f64>() < plan.max_prop;
                let chosen: &[u32] = if keep && !set.is_empty() {
                    accepted += 1;
                    &combos[set[pick]]
                } else {
                    &x
                };
                for (j, &c) in chosen.iter().enumerate() {
                    block[[kk, j]] = c;
                }
            }
            accepted
        })
        .sum();
    Ok(CategoricalBatch {
        values,
        method: CategoricalMethod::PseudoDistance,
        budget: plan.budget,
        accepted,
    })
}

/// Empirical level frequencies of each categorical column.
pub fn categorical_marginals(ds: &Dataset) -> Vec<Vec<f64>> {
    let schema = ds.schema();
    let n = ds.n_rows() as f64;
    ds.categorical()
        .axis_iter(Axis(1))
        .enumerate()
        .map(|(j, codes)| {
            let mut freq = vec![0.0; schema.categorical(j).levels.len()];
            for &c in codes {
                freq[c as usize] += 1.0;
            }
            freq.iter_mut().for_each(|f| *f /= n);
            freq
        })
        .collect()
}

/// Replaces every targeted cell by an independent draw from its column's
/// marginal, ignoring the original value and the other columns.
pub fn shuffle_perturb(
    ds: &Dataset,
    marginals: &[Vec<f64>],
    plan: &CategoricalPerturbPlan,
    master_seed: u64,
) -> Result<CategoricalBatch> {
    let p = ds.schema().p_cat();
    plan.validate(p)?;
    if plan.method != CategoricalMethod::Shuffle {
        return Err(Error::Contract("shuffle_perturb called with a pseudo-distance plan".into()));
    }
    if marginals.len() != p {
        return Err(Error::Contract("one marginal per categorical column required".into()));
    }
    let samplers: Vec<WeightedIndex<f64>> = marginals
        .iter()
        .map(|m| WeightedIndex::new(m).map_err(|e| Error::Contract(format!("bad marginal: {e}"))))
        .collect::<Result<_>>()?;
    let (n, k) = (ds.n_rows(), plan.k);
    let mut values = Array3::<u32>::zeros((n, k, p));
    values
        .axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(i, mut block)| {
            let x = ds.categorical_row(i);
            let mut rng = substream_rng(master_seed, SHUFFLE_STREAM, i as u64);
            for kk in 0..k {
                for j in 0..p {
                    block[[kk, j]] = x[j];
                }
                for &j in &plan.target_columns {
                    block[[kk, j]] = samplers[j].sample(&mut rng) as u32;
                }
            }
        });
    Ok(CategoricalBatch {
        values,
        method: CategoricalMethod::Shuffle,
        budget: plan.budget,
        accepted: n * k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Schema;
    use crate::stats::extract_envelope;
    use approx::assert_abs_diff_eq;

    const EDUCATION: [&str; 4] = ["graduate school", "university", "high school", "others"];
    const EDU_MEANS: [f64; 4] = [0.197065, 0.234813, 0.256193, 0.076655];
    const MARRIAGE_MEANS: [f64; 3] = [0.234975, 0.211688, 0.235808];

    fn cat_dataset(cols: Vec<ColumnSchema>, rows: &[Vec<u32>], y: Option<Vec<f64>>) -> Dataset {
        let p = cols.len();
        let m = Array2::from_shape_fn((rows.len(), p), |(i, j)| rows[i][j]);
        Dataset::new(Schema::new(cols).unwrap(), Array2::zeros((rows.len(), 0)), m, y).unwrap()
    }

    fn full_cross(levels: &[usize]) -> CategoricalEnvelope {
        let mut combos = vec![vec![]];
        for &m in levels {
            combos = combos
                .into_iter()
                .flat_map(|c: Vec<u32>| {
                    (0..m as u32).map(move |l| {
                        let mut c = c.clone();
                        c.push(l);
                        c
                    })
                })
                .collect();
        }
        CategoricalEnvelope::from_combos(levels.len(), combos)
    }

    #[test]
    fn marriage_scaled_distances() {
        let d = ColumnDistance::from_means(&MARRIAGE_MEANS);
        // Raw: |0.234975-0.235808| = 0.000833, |0.234975-0.211688| = 0.023287,
        // |0.211688-0.235808| = 0.024120 (the maximum).
        assert_abs_diff_eq!(d.matrix[[0, 2]], 0.000833 / 0.024120, epsilon = 1e-12);
        assert_abs_diff_eq!(d.matrix[[0, 2]], 0.0345, epsilon = 1e-4);
        assert_abs_diff_eq!(d.matrix[[0, 1]], 0.9655, epsilon = 1e-4);
        assert_eq!(d.matrix[[1, 2]], 1.0);
    }

    #[test]
    fn education_scaled_distances() {
        let d = ColumnDistance::from_means(&EDU_MEANS);
        assert_eq!(d.matrix[[2, 3]], 1.0);
        assert_abs_diff_eq!(d.matrix[[1, 2]], 0.02138 / 0.179538, epsilon = 1e-9);
        assert_abs_diff_eq!(d.matrix[[1, 2]], 0.1191, epsilon = 1e-4);
    }

    #[test]
    fn equal_means_give_zero_matrix() {
        let d = ColumnDistance::from_means(&[0.3, 0.3]);
        assert!(d.degenerate);
        assert!(d.matrix.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn level_distance_invariants() {
        let d = ColumnDistance::from_means(&EDU_MEANS);
        for a in 0..4 {
            assert_eq!(d.matrix[[a, a]], 0.0);
            for b in 0..4 {
                assert_eq!(d.matrix[[a, b]], d.matrix[[b, a]]);
                assert!((0.0..=1.0).contains(&d.matrix[[a, b]]));
            }
        }
    }

    #[test]
    fn fit_from_data() {
        let ds = cat_dataset(
            vec![ColumnSchema::categorical("c", ["a", "b", "c"])],
            &[vec![0], vec![0], vec![1], vec![2]],
            Some(vec![1.0, 0.0, 1.0, 0.0]),
        );
        let d = fit_level_distance(&ds).unwrap();
        assert_eq!(d.columns[0].level_means, vec![0.5, 1.0, 0.0]);
        assert_eq!(d.columns[0].matrix[[0, 1]], 0.5);
        assert_eq!(d.columns[0].matrix[[1, 2]], 1.0);
    }

    #[test]
    fn unobserved_level_is_an_error() {
        let ds = cat_dataset(
            vec![ColumnSchema::categorical("c", ["a", "b", "z"])],
            &[vec![0], vec![1]],
            Some(vec![1.0, 0.0]),
        );
        match fit_level_distance(&ds) {
            Err(Error::UnobservedLevel { level, .. }) => assert_eq!(level, "z"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn fit_requires_response() {
        let ds = cat_dataset(vec![ColumnSchema::categorical("c", ["a"])], &[vec![0]], None);
        assert!(matches!(fit_level_distance(&ds), Err(Error::MissingResponse(_))));
    }

    fn toy_space() -> CategoricalSpace {
        // Column 0 levels at distances {0, 0.2, 0.7} from level 0; column 1 binary at 0.9.
        let c0 = ColumnDistance::from_matrix(ndarray::array![
            [0.0, 0.2, 0.7],
            [0.2, 0.0, 1.0],
            [0.7, 1.0, 0.0]
        ])
        .unwrap();
        let c1 = ColumnDistance::from_matrix(ndarray::array![[0.0, 0.9], [0.9, 0.0]]).unwrap();
        let env = CategoricalEnvelope::from_combos(2, vec![vec![0, 0], vec![1, 0], vec![2, 0], vec![2, 1]]);
        CategoricalSpace::with_unit_weights(env, LevelDistance { columns: vec![c0, c1] }).unwrap()
    }

    #[test]
    fn observation_distance_cases() {
        let s = toy_space();
        assert_eq!(observation_distance(&[1, 1], &[1, 1], &s), 0.0);
        assert_eq!(observation_distance(&[1, 0], &[2, 0], &s), 1.0);
        let weighted = CategoricalSpace::new(s.envelope.clone(), s.distances.clone(), vec![2.0, 1.0]).unwrap();
        // Per-column distances (0.5, 1.0) realised by a custom space.
        let half = ColumnDistance::from_matrix(ndarray::array![[0.0, 0.5], [0.5, 0.0]]).unwrap();
        let one = ColumnDistance::from_matrix(ndarray::array![[0.0, 1.0], [1.0, 0.0]]).unwrap();
        let sp = CategoricalSpace::new(
            CategoricalEnvelope::from_combos(2, vec![vec![0, 0]]),
            LevelDistance { columns: vec![half, one] },
            vec![2.0, 1.0],
        )
        .unwrap();
        assert_eq!(observation_distance(&[0, 0], &[1, 1], &sp), 2.0);
        assert_eq!(weighted.max_distance(), 3.0);
    }

    #[test]
    fn toy_neighbor_enumeration() {
        // Distances from (0,0): 0, 0.2, 0.7, 1.6; threshold 0.4 · 2 = 0.8.
        let s = toy_space();
        let x = [0, 0];
        let d: Vec<f64> = s.envelope.combos().iter().map(|z| observation_distance(z, &x, &s)).collect();
        assert_eq!(d, vec![0.0, 0.2, 0.7, 1.6]);
        assert_eq!(neighbor_set(&x, &s, 0.4), vec![0, 1, 2]);
        assert_eq!(neighbor_set(&x, &s, 1.0).len(), 4);
        assert_eq!(neighbor_set(&x, &s, 0.0), vec![0]);
    }

    #[test]
    fn threshold_ties_included() {
        let s = toy_space();
        // D((0,0),(2,0)) = 0.7 = 0.35 · 2.
        assert!(neighbor_set(&[0, 0], &s, 0.35).contains(&2));
    }

    #[test]
    fn single_binary_column_never_moves_below_full_budget() {
        let ds = cat_dataset(
            vec![ColumnSchema::categorical("sex", ["m", "f"])],
            &[vec![0], vec![1], vec![0], vec![1]],
            Some(vec![0.0, 1.0, 1.0, 1.0]),
        );
        let env = extract_envelope(&ds).unwrap();
        let space = CategoricalSpace::with_unit_weights(env, fit_level_distance(&ds).unwrap()).unwrap();
        let plan = CategoricalPerturbPlan::all_columns(0.99, 200, 1.0, CategoricalMethod::PseudoDistance, 1);
        let batch = pseudo_perturb(&ds, &space, &plan, 5).unwrap();
        assert_eq!(batch, CategoricalBatch { accepted: 800, budget: 0.99, ..CategoricalBatch::unperturbed(&ds, 200) });
    }

    #[test]
    fn max_prop_one_with_trivial_neighborhood_is_identity() {
        let s = toy_space();
        let ds = cat_dataset(
            vec![ColumnSchema::categorical("a", ["0", "1", "2"]), ColumnSchema::categorical("b", ["0", "1"])],
            &[vec![0, 0], vec![2, 1]],
            None,
        );
        let plan = CategoricalPerturbPlan::all_columns(0.05, 30, 1.0, CategoricalMethod::PseudoDistance, 2);
        let batch = pseudo_perturb(&ds, &s, &plan, 1).unwrap();
        assert_eq!(batch.values, CategoricalBatch::unperturbed(&ds, 30).values);
    }

    #[test]
    fn acceptance_fraction_near_max_prop() {
        let ds = cat_dataset(
            vec![ColumnSchema::categorical("a", ["0", "1", "2"]), ColumnSchema::categorical("b", ["0", "1"])],
            &(0..1000).map(|i| vec![(i % 3) as u32, (i % 2) as u32]).collect::<Vec<_>>(),
            None,
        );
        let s = CategoricalSpace::with_unit_weights(full_cross(&[3, 2]), toy_space().distances).unwrap();
        let plan = CategoricalPerturbPlan::all_columns(0.5, 100, 0.5, CategoricalMethod::PseudoDistance, 2);
        let batch = pseudo_perturb(&ds, &s, &plan, 77).unwrap();
        let f = batch.acceptance_fraction();
        assert!((0.47..=0.53).contains(&f), "accepted {f}");
    }

    #[test]
    fn university_prefers_high_school() {
        // SEX, EDUCATION, MARRIAGE with every combination observed.
        let sex = ColumnDistance::from_means(&[0.24, 0.21]);
        let space = CategoricalSpace::with_unit_weights(
            full_cross(&[2, 4, 3]),
            LevelDistance {
                columns: vec![
                    sex,
                    ColumnDistance::from_means(&EDU_MEANS),
                    ColumnDistance::from_means(&MARRIAGE_MEANS),
                ],
            },
        )
        .unwrap();
        let ds = cat_dataset(
            vec![
                ColumnSchema::categorical("SEX", ["male", "female"]),
                ColumnSchema::categorical("EDUCATION", EDUCATION),
                ColumnSchema::categorical("MARRIAGE", ["married", "single", "others"]),
            ],
            &[vec![1, 1, 1], vec![0, 1, 0]],
            None,
        );
        let plan = CategoricalPerturbPlan::all_columns(0.4, 100, 0.5, CategoricalMethod::PseudoDistance, 3);
        let batch = pseudo_perturb(&ds, &space, &plan, 2024).unwrap();
        for i in 0..2 {
            let mut counts = [0usize; 4];
            for k in 0..100 {
                counts[batch.values[[i, k, 1]] as usize] += 1;
            }
            let most = (0..4).max_by_key(|&l| counts[l]).unwrap();
            assert_eq!(most, 1, "counts {counts:?}");
            let changed = [0usize, 2, 3].into_iter().max_by_key(|&l| counts[l]).unwrap();
            assert_eq!(changed, 2, "counts {counts:?}");
        }
    }

    #[test]
    fn restricted_columns_stay_fixed() {
        let s = CategoricalSpace::with_unit_weights(full_cross(&[3, 2]), toy_space().distances).unwrap();
        let ds = cat_dataset(
            vec![ColumnSchema::categorical("a", ["0", "1", "2"]), ColumnSchema::categorical("b", ["0", "1"])],
            &[vec![0, 0], vec![1, 1], vec![2, 0]],
            None,
        );
        let mut plan = CategoricalPerturbPlan::all_columns(1.0, 50, 1.0, CategoricalMethod::PseudoDistance, 2);
        plan.target_columns = vec![0];
        let batch = pseudo_perturb(&ds, &s, &plan, 3).unwrap();
        for i in 0..3 {
            for k in 0..50 {
                assert_eq!(batch.values[[i, k, 1]], ds.categorical()[[i, 1]]);
            }
        }
        assert!(batch.values.index_axis(Axis(2), 0).iter().any(|&v| v != 0));
    }

    #[test]
    fn shuffle_matches_marginal() {
        let rows: Vec<Vec<u32>> = (0..1000).map(|i| vec![u32::from(i % 10 >= 7)]).collect();
        let ds = cat_dataset(vec![ColumnSchema::categorical("c", ["x", "y"])], &rows, None);
        let marg = categorical_marginals(&ds);
        assert_abs_diff_eq!(marg[0][0], 0.7, epsilon = 1e-12);
        let plan = CategoricalPerturbPlan::all_columns(0.0, 100, 1.0, CategoricalMethod::Shuffle, 1);
        let batch = shuffle_perturb(&ds, &marg, &plan, 8).unwrap();
        let ones = batch.values.iter().filter(|&&v| v == 1).count() as f64 / 1e5;
        assert!((ones - 0.3).abs() < 0.01, "freq {ones}");
        // Rows starting at x and at y see the same output distribution.
        let freq_for = |orig: u32| {
            let idx: Vec<usize> = (0..1000).filter(|&i| rows[i][0] == orig).collect();
            let hits = idx.iter().flat_map(|&i| (0..100).map(move |k| (i, k)))
                .filter(|&(i, k)| batch.values[[i, k, 0]] == 1).count();
            hits as f64 / (idx.len() * 100) as f64
        };
        assert!((freq_for(0) - freq_for(1)).abs() < 0.02);
    }

    #[test]
    fn shuffle_single_level_constant() {
        let ds = cat_dataset(vec![ColumnSchema::categorical("c", ["only"])], &[vec![0], vec![0]], None);
        let plan = CategoricalPerturbPlan::all_columns(0.0, 10, 1.0, CategoricalMethod::Shuffle, 1);
        let batch = shuffle_perturb(&ds, &categorical_marginals(&ds), &plan, 1).unwrap();
        assert!(batch.values.iter().all(|&v| v == 0));
    }

    #[test]
    fn plan_validation() {
        let ok = CategoricalPerturbPlan::all_columns(0.2, 10, 0.5, CategoricalMethod::PseudoDistance, 2);
        assert!(ok.validate(2).is_ok());
        assert!(CategoricalPerturbPlan { budget: 1.5, ..ok.clone() }.validate(2).is_err());
        assert!(CategoricalPerturbPlan { max_prop: 0.0, ..ok.clone() }.validate(2).is_err());
        assert!(CategoricalPerturbPlan { k: 0, ..ok.clone() }.validate(2).is_err());
        assert!(CategoricalPerturbPlan { target_columns: vec![3], ..ok }.validate(2).is_err());
    }

    #[test]
    fn distance_csv_round_trip() {
        let col = ColumnSchema::categorical("EDUCATION", EDUCATION);
        let d = ColumnDistance::from_means(&EDU_MEANS);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("edu.csv");
        d.write_csv(&path, &col).unwrap();
        let back = ColumnDistance::read_csv(&path, &col).unwrap();
        assert_eq!(back.matrix, d.matrix);
    }
}
