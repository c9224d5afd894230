//! Column-stochastic matrices: the carrier of observable laws, transition
//! factors and policy matrices.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column-sum tolerance used when validating inputs.
pub const STOCHASTIC_TOL: f64 = 1e-10;
/// Negative entries down to this magnitude are treated as round-off and clamped to 0.
pub const NEGATIVE_CLAMP: f64 = 1e-12;

/// A nonnegative matrix whose columns each sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatrixDoc", into = "MatrixDoc")]
pub struct StochasticMatrix {
    inner: DMatrix<f64>,
    tol: f64,
}

/// Serialized form: dimensions plus column-major entries.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixDoc {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl TryFrom<MatrixDoc> for StochasticMatrix {
    type Error = Error;

    fn try_from(doc: MatrixDoc) -> Result<Self> {
        if doc.data.len() != doc.rows * doc.cols {
            return Err(Error::shape(
                "matrix document",
                doc.rows * doc.cols,
                doc.data.len(),
            ));
        }
        StochasticMatrix::new(DMatrix::from_vec(doc.rows, doc.cols, doc.data))
    }
}

impl From<StochasticMatrix> for MatrixDoc {
    fn from(m: StochasticMatrix) -> Self {
        MatrixDoc {
            rows: m.inner.nrows(),
            cols: m.inner.ncols(),
            data: m.inner.as_slice().to_vec(),
        }
    }
}

/// Max column-sum deviation from one and the smallest entry.
pub fn stochastic_deviation(m: &DMatrix<f64>) -> (f64, f64) {
    let dev = m
        .column_iter()
        .map(|c| (c.sum() - 1.0).abs())
        .fold(0.0, f64::max);
    let min = m.iter().copied().fold(f64::INFINITY, f64::min);
    (dev, if m.is_empty() { 0.0 } else { min })
}

pub fn is_column_stochastic(m: &DMatrix<f64>, tol: f64) -> bool {
    let (dev, min) = stochastic_deviation(m);
    dev <= tol && min >= -NEGATIVE_CLAMP
}

impl StochasticMatrix {
    /// Validates with the default tolerance, clamping round-off negatives.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        Self::with_tolerance(m, STOCHASTIC_TOL)
    }

    pub fn with_tolerance(mut m: DMatrix<f64>, tol: f64) -> Result<Self> {
        let (dev, min) = stochastic_deviation(&m);
        if dev > tol || min < -NEGATIVE_CLAMP || m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NotStochastic {
                max_deviation: dev,
                min_entry: min,
            });
        }
        m.apply(|v| *v = v.max(0.0));
        Ok(Self { inner: m, tol })
    }

    /// Clamps negatives and rescales every column to unit sum. Zero columns become uniform.
    pub fn normalized(mut m: DMatrix<f64>) -> Self {
        let rows = m.nrows();
        for mut col in m.column_iter_mut() {
            col.apply(|v| *v = v.max(0.0));
            let s = col.sum();
            if s > 0.0 {
                col /= s;
            } else {
                col.fill(1.0 / rows as f64);
            }
        }
        Self {
            inner: m,
            tol: STOCHASTIC_TOL,
        }
    }

    pub fn from_columns(rows: usize, cols: &[Vec<f64>]) -> Result<Self> {
        if let Some(bad) = cols.iter().find(|c| c.len() != rows) {
            return Err(Error::shape("column length", rows, bad.len()));
        }
        let data: Vec<f64> = cols.iter().flatten().copied().collect();
        Self::new(DMatrix::from_vec(rows, cols.len(), data))
    }

    pub fn identity(k: usize) -> Self {
        Self {
            inner: DMatrix::identity(k, k),
            tol: STOCHASTIC_TOL,
        }
    }

    pub fn uniform(rows: usize, cols: usize) -> Self {
        Self {
            inner: DMatrix::from_element(rows, cols, 1.0 / rows as f64),
            tol: STOCHASTIC_TOL,
        }
    }

    /// Columns drawn uniformly from the simplex (flat Dirichlet).
    pub fn random<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let m = DMatrix::from_fn(rows, cols, |_, _| Exp1.sample(rng));
        Self::normalized(m)
    }

    pub fn rows(&self) -> usize {
        self.inner.nrows()
    }

    pub fn cols(&self) -> usize {
        self.inner.ncols()
    }

    pub fn tolerance(&self) -> f64 {
        self.tol
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.inner
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.inner
    }

    pub fn column(&self, j: usize) -> DVector<f64> {
        self.inner.column(j).into_owned()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.inner[(i, j)]
    }

    pub fn select_columns(&self, idx: &[usize]) -> Self {
        Self {
            inner: self.inner.select_columns(idx),
            tol: self.tol,
        }
    }

    /// Reorders columns: output column `a` is input column `perm[a]`.
    pub fn permute_columns(&self, perm: &[usize]) -> Self {
        self.select_columns(perm)
    }

    /// Reorders rows: output row `a` is input row `perm[a]`.
    pub fn permute_rows(&self, perm: &[usize]) -> Self {
        Self {
            inner: self.inner.select_rows(perm),
            tol: self.tol,
        }
    }

    pub fn max_abs_diff(&self, other: &StochasticMatrix) -> f64 {
        (&self.inner - &other.inner).amax()
    }
}

impl AsRef<DMatrix<f64>> for StochasticMatrix {
    fn as_ref(&self) -> &DMatrix<f64> {
        &self.inner
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn rejects_bad_columns_and_clamps_roundoff() {
        let bad = DMatrix::from_row_slice(2, 1, &[0.6, 0.6]);
        assert!(matches!(
            StochasticMatrix::new(bad),
            Err(Error::NotStochastic { .. })
        ));
        let neg = DMatrix::from_row_slice(2, 1, &[1.1, -0.1]);
        assert!(StochasticMatrix::new(neg).is_err());
        let tiny = DMatrix::from_row_slice(2, 1, &[1.0 + 5e-13, -5e-13]);
        let m = StochasticMatrix::new(tiny).unwrap();
        assert_eq!(m.get(1, 0), 0.0);
    }

    #[test]
    fn random_matrices_are_stochastic() {
        let mut r = rng::stream(1, "test", 0);
        for _ in 0..50 {
            let m = StochasticMatrix::random(6, 4, &mut r);
            assert!(is_column_stochastic(m.as_matrix(), 1e-12));
        }
    }

    #[test]
    fn serde_roundtrip_is_column_major() {
        let m = StochasticMatrix::from_columns(2, &[vec![0.25, 0.75], vec![1.0, 0.0]]).unwrap();
        let s = serde_json::to_string(&m).unwrap();
        assert_eq!(s, r#"{"rows":2,"cols":2,"data":[0.25,0.75,1.0,0.0]}"#);
        let back: StochasticMatrix = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
        let bad = r#"{"rows":2,"cols":1,"data":[0.5,0.6]}"#;
        assert!(serde_json::from_str::<StochasticMatrix>(bad).is_err());
    }
}
