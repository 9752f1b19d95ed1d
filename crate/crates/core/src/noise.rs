//! Seeded Gaussian noise fields.
//!
//! Every observation draws from its own substream, so a field is a pure
//! function of `(master_seed, observation index, mode, K, p)` no matter how
//! the work is scheduled. The substream seed is
//!
//! ```text
//! seed_i = splitmix64(splitmix64(master_seed ^ stream_tag) ^ i)
//! ```
//!
//! and seeds a `ChaCha8Rng` through `SeedableRng::seed_from_u64`. Standard
//! normals come from `rand_distr::StandardNormal` (ziggurat).

use ndarray::parallel::prelude::*;
use ndarray::{Array2, Array3, ArrayView1, ArrayViewMut1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::CorrelationModel;

pub const NUMERIC_STREAM: u64 = 0x6e75_6d65_7269_6301;
pub const CATEGORICAL_STREAM: u64 = 0x6361_7465_676f_7201;
pub const SHUFFLE_STREAM: u64 = 0x7368_7566_666c_6501;

const MIN_JITTER: f64 = 1e-10;
const MAX_JITTER: f64 = 1e-6;
const PIVOT_FLOOR: f64 = 1e-12;

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn substream_seed(master_seed: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master_seed ^ stream) ^ index)
}

pub fn substream_rng(master_seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(substream_seed(master_seed, stream, index))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    #[default]
    Correlated,
    Independent,
}

impl std::fmt::Display for NoiseMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NoiseMode::Correlated => "correlated",
            NoiseMode::Independent => "independent",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Factorization {
    pub factor: Array2<f64>,
    pub repaired: bool,
    pub jitter_used: f64,
}

fn cholesky(m: &Array2<f64>, jitter: f64) -> Option<Array2<f64>> {
    let p = m.nrows();
    let mut l = Array2::<f64>::zeros((p, p));
    for i in 0..p {
        for j in 0..=i {
            let mut s = m[[i, j]];
            if i == j {
                s += jitter;
            }
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                // NaN pivots fail too.
                if s.is_nan() || s <= PIVOT_FLOOR {
                    return None;
                }
                l[[i, i]] = s.sqrt();
            } else {
                l[[i, j]] = s / l[[j, j]];
            }
        }
    }
    Some(l)
}

/// Lower-triangular factor of a correlation matrix. A matrix that fails the
/// plain factorization gets `ε·I` added, with ε doubling from 1e-10 up to 1e-6.
pub fn factorize(matrix: &Array2<f64>) -> Result<Factorization> {
    let p = matrix.nrows();
    if matrix.ncols() != p {
        return Err(Error::Contract("correlation matrix must be square".into()));
    }
    for i in 0..p {
        if (matrix[[i, i]] - 1.0).abs() > 1e-12 {
            return Err(Error::Contract(format!(
                "correlation diagonal entry {i} is {}",
                matrix[[i, i]]
            )));
        }
        for j in 0..i {
            if (matrix[[i, j]] - matrix[[j, i]]).abs() > 1e-12 {
                return Err(Error::Contract("correlation matrix is not symmetric".into()));
            }
        }
    }
    if let Some(factor) = cholesky(matrix, 0.0) {
        return Ok(Factorization {
            factor,
            repaired: false,
            jitter_used: 0.0,
        });
    }
    let mut jitter = MIN_JITTER;
    loop {
        if let Some(factor) = cholesky(matrix, jitter) {
            return Ok(Factorization {
                factor,
                repaired: true,
                jitter_used: jitter,
            });
        }
        if jitter >= MAX_JITTER {
            return Err(Error::NotPositiveDefinite {
                max_jitter: MAX_JITTER,
            });
        }
        jitter = (jitter * 2.0).min(MAX_JITTER);
    }
}

/// `K × p` standard-normal (or correlated) draws per observation.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseField {
    /// Shape `(n, K, p)`.
    pub values: Array3<f64>,
    pub mode: NoiseMode,
    pub master_seed: u64,
}

impl NoiseField {
    pub fn n(&self) -> usize {
        self.values.len_of(Axis(0))
    }

    pub fn k(&self) -> usize {
        self.values.len_of(Axis(1))
    }

    pub fn p(&self) -> usize {
        self.values.len_of(Axis(2))
    }
}

fn lower_matvec(l: &Array2<f64>, z: ArrayView1<f64>, mut out: ArrayViewMut1<f64>) {
    for i in 0..l.nrows() {
        let mut s = 0.0;
        for j in 0..=i {
            s += l[[i, j]] * z[j];
        }
        out[i] = s;
    }
}

pub fn sample_noise(
    n: usize,
    k: usize,
    corr: &CorrelationModel,
    mode: NoiseMode,
    master_seed: u64,
) -> Result<NoiseField> {
    if k == 0 {
        return Err(Error::Contract("K must be at least 1".into()));
    }
    let p = corr.dim();
    let mut values = Array3::<f64>::zeros((n, k, p));
    values
        .axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(i, mut block)| {
            let mut rng = substream_rng(master_seed, NUMERIC_STREAM, i as u64);
            let mut z = ndarray::Array1::<f64>::zeros(p);
            for mut row in block.axis_iter_mut(Axis(0)) {
                z.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
                match mode {
                    NoiseMode::Independent => row.assign(&z),
                    NoiseMode::Correlated => lower_matvec(&corr.factor, z.view(), row.view_mut()),
                }
            }
        });
    Ok(NoiseField {
        values,
        mode,
        master_seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn identity_factor() {
        let f = factorize(&Array2::eye(3)).unwrap();
        assert_eq!(f.factor, Array2::<f64>::eye(3));
        assert!(!f.repaired);
    }

    #[test]
    fn two_by_two_closed_form() {
        let f = factorize(&array![[1.0, 0.5], [0.5, 1.0]]).unwrap();
        assert_eq!(f.factor[[0, 0]], 1.0);
        assert_eq!(f.factor[[0, 1]], 0.0);
        assert_abs_diff_eq!(f.factor[[1, 0]], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(f.factor[[1, 1]], 0.75f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(f.factor[[1, 1]], 0.866025, epsilon = 1e-6);
    }

    #[test]
    fn rank_deficient_is_repaired() {
        let m = array![[1.0, 1.0], [1.0, 1.0]];
        let f = factorize(&m).unwrap();
        assert!(f.repaired);
        let rebuilt = f.factor.dot(&f.factor.t());
        let target = &m + &(Array2::<f64>::eye(2) * f.jitter_used);
        for (a, b) in rebuilt.iter().zip(target.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-8);
        }
    }

    #[test]
    fn indefinite_matrix_fails() {
        let m = array![[1.0, 0.9, -0.9], [0.9, 1.0, 0.9], [-0.9, 0.9, 1.0]];
        assert!(matches!(factorize(&m), Err(Error::NotPositiveDefinite { .. })));
    }

    #[test]
    fn non_symmetric_rejected() {
        assert!(factorize(&array![[1.0, 0.2], [0.3, 1.0]]).is_err());
    }

    #[test]
    fn independent_moments() {
        // 10^5 draws per component: |mean| < 5/sqrt(1e5) ≈ 0.016, sd within 5σ of 1.
        let field = sample_noise(10_000, 10, &CorrelationModel::identity(2), NoiseMode::Independent, 7).unwrap();
        for j in 0..2 {
            let col = field.values.index_axis(Axis(2), j);
            let n = col.len() as f64;
            let mean = col.sum() / n;
            let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            assert!(mean.abs() < 0.02, "mean {mean}");
            assert!((0.98..=1.02).contains(&sd), "sd {sd}");
        }
    }

    #[test]
    fn correlated_sample_correlation() {
        let corr = CorrelationModel::from_matrix(array![[1.0, 0.9], [0.9, 1.0]]).unwrap();
        let field = sample_noise(10_000, 10, &corr, NoiseMode::Correlated, 8).unwrap();
        let flat = field.values.into_shape_with_order((100_000, 2)).unwrap();
        let r = crate::stats::pearson_matrix(flat.view())[[0, 1]];
        assert!((0.88..=0.92).contains(&r), "r = {r}");
    }

    #[test]
    fn thread_count_does_not_change_noise() {
        let corr = CorrelationModel::from_matrix(array![[1.0, 0.3], [0.3, 1.0]]).unwrap();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| sample_noise(257, 5, &corr, NoiseMode::Correlated, 99).unwrap())
        };
        let a = run(1);
        let b = run(4);
        assert!(a.values.iter().zip(b.values.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn modes_agree_under_identity() {
        let id = CorrelationModel::identity(3);
        let a = sample_noise(20, 4, &id, NoiseMode::Correlated, 1).unwrap();
        let b = sample_noise(20, 4, &id, NoiseMode::Independent, 1).unwrap();
        assert_eq!(a.values, b.values);
    }

    #[test]
    fn observation_noise_independent_of_n() {
        // Substreams are keyed by index, so a prefix of a larger field matches.
        let id = CorrelationModel::identity(2);
        let small = sample_noise(5, 3, &id, NoiseMode::Independent, 42).unwrap();
        let large = sample_noise(50, 3, &id, NoiseMode::Independent, 42).unwrap();
        assert_eq!(small.values, large.values.slice(ndarray::s![..5, .., ..]));
    }
}
