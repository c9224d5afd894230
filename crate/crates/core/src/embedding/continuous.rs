use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{Embedder, TransitionDistribution};
use crate::error::{Error, Result};
use crate::nmf::{factorize_in_metric, SolverOptions};
use crate::stochastic::StochasticMatrix;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContinuousFactorization {
    /// Recovered latent transitions as dictionary mixtures.
    pub transitions: Vec<TransitionDistribution>,
    /// Mixture coordinates `C` (dictionary size x k).
    pub coordinates: StochasticMatrix,
    pub policies: StochasticMatrix,
    /// `det(C' K C)`.
    pub objective: f64,
    /// `||W - C Pi||_F` in coordinates.
    pub residual: f64,
    pub effective_rank: usize,
    pub best_restart: usize,
    pub converged: bool,
}

/// Minimum Gram-determinant factorization of observables that are mixtures
/// over a shared dictionary.
///
/// Candidate latent transitions are restricted to the same dictionary, so
/// nonnegativity of the measures is coordinate-wise nonnegativity.
pub fn continuous_minvol_factorize(
    embedder: &Embedder,
    observables: &[TransitionDistribution],
    opts: &SolverOptions,
) -> Result<ContinuousFactorization> {
    let dict = embedder
        .dictionary()
        .ok_or(Error::Empty("dictionary for continuous factorization"))?;
    if observables.is_empty() {
        return Err(Error::Empty("observables"));
    }
    let mut cols = Vec::with_capacity(observables.len());
    for obs in observables {
        match obs {
            TransitionDistribution::DictMixture { weights } if weights.len() == dict.len() => {
                obs.validate()?;
                cols.push(weights.clone());
            }
            TransitionDistribution::DictMixture { weights } => {
                return Err(Error::shape("observable coordinates", dict.len(), weights.len()))
            }
            other => {
                return Err(Error::InvalidArgument(format!(
                    "observables must be dictionary mixtures, got {}",
                    other.kind()
                )))
            }
        }
    }
    let w = StochasticMatrix::from_columns(dict.len(), &cols)?;
    let res = factorize_in_metric(w.as_matrix(), Some(dict.gram()), opts)?;
    let c: &DMatrix<f64> = res.transitions.as_matrix();
    let transitions = c
        .column_iter()
        .map(|col| TransitionDistribution::DictMixture {
            weights: col.iter().copied().collect(),
        })
        .collect();
    Ok(ContinuousFactorization {
        transitions,
        coordinates: res.transitions,
        policies: res.policies,
        objective: res.objective,
        residual: res.residual,
        effective_rank: res.effective_rank,
        best_restart: res.best_restart,
        converged: res.converged,
    })
}
