use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A next-observation law in one of the representations the embedding
/// understands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TransitionDistribution {
    /// Weights over finite atoms `0..n`.
    Categorical { weights: Vec<f64> },
    /// Isotropic gaussian `N(mean, variance I)`.
    Gaussian { mean: Vec<f64>, variance: f64 },
    /// Point mass; embedded as a zero-variance gaussian.
    Dirac { point: Vec<f64> },
    /// Weights over the components of a shared dictionary.
    DictMixture { weights: Vec<f64> },
    /// Uniform over a finite sample.
    Empirical { points: Vec<Vec<f64>> },
}

fn check_weights(w: &[f64]) -> Result<()> {
    let s: f64 = w.iter().sum();
    if w.is_empty() || w.iter().any(|&v| v < -1e-12 || !v.is_finite()) || (s - 1.0).abs() > 1e-10 {
        return Err(Error::NotStochastic {
            max_deviation: (s - 1.0).abs(),
            min_entry: w.iter().copied().fold(f64::INFINITY, f64::min),
        });
    }
    Ok(())
}

impl TransitionDistribution {
    pub fn gaussian(mean: Vec<f64>, variance: f64) -> Self {
        Self::Gaussian { mean, variance }
    }

    pub fn dirac(point: Vec<f64>) -> Self {
        Self::Dirac { point }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Categorical { weights } | Self::DictMixture { weights } => check_weights(weights),
            Self::Gaussian { mean, variance } => {
                if !(*variance >= 0.0) || mean.is_empty() {
                    return Err(Error::InvalidArgument(format!(
                        "gaussian needs a non-empty mean and variance >= 0, got {variance}"
                    )));
                }
                Ok(())
            }
            Self::Dirac { point } if point.is_empty() => Err(Error::Empty("dirac point")),
            Self::Dirac { .. } => Ok(()),
            Self::Empirical { points } if points.is_empty() => Err(Error::Empty("empirical sample")),
            Self::Empirical { .. } => Ok(()),
        }
    }

    /// Mean and variance when the law is a gaussian or a point mass.
    pub fn as_gaussian(&self) -> Option<(&[f64], f64)> {
        match self {
            Self::Gaussian { mean, variance } => Some((mean, *variance)),
            Self::Dirac { point } => Some((point, 0.0)),
            _ => None,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::Categorical { .. } => "categorical",
            Self::Gaussian { .. } => "gaussian",
            Self::Dirac { .. } => "dirac",
            Self::DictMixture { .. } => "dict_mixture",
            Self::Empirical { .. } => "empirical",
        }
    }

    /// Draws one point. Categorical laws return the atom index as a
    /// one-element vector; dictionary mixtures need the dictionary.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, dictionary: Option<&[TransitionDistribution]>) -> Result<Vec<f64>> {
        match self {
            Self::Categorical { weights } => Ok(vec![sample_index(weights, rng) as f64]),
            Self::Gaussian { mean, variance } => {
                let sd = variance.sqrt();
                Ok(mean
                    .iter()
                    .map(|&mu| {
                        let z: f64 = StandardNormal.sample(rng);
                        mu + sd * z
                    })
                    .collect())
            }
            Self::Dirac { point } => Ok(point.clone()),
            Self::DictMixture { weights } => {
                let dict = dictionary.ok_or(Error::Empty("dictionary for mixture sampling"))?;
                let c = sample_index(weights, rng);
                dict.get(c)
                    .ok_or_else(|| Error::shape("dictionary size", weights.len(), dict.len()))?
                    .sample(rng, None)
            }
            Self::Empirical { points } => Ok(points[rng.random_range(0..points.len())].clone()),
        }
    }
}

/// Inverse-CDF draw from a weight vector.
pub fn sample_index<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random::<f64>() * weights.iter().sum::<f64>();
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}
