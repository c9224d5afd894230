//! Kernels that induce the mean embedding, as interchangeable strategies.

use std::collections::BTreeMap;
use std::fmt::Debug;

use serde::{Deserialize, Serialize};

use super::TransitionDistribution;
use crate::error::{Error, Result};

/// A kernel on the observation space together with closed-form inner
/// products between the embeddings of the base distribution types it
/// supports. Dictionary mixtures are handled by [`super::Embedder`].
pub trait Kernel: Debug + Send + Sync {
    fn name(&self) -> &'static str;

    fn eval(&self, x: &[f64], y: &[f64]) -> f64;

    /// `<Phi(p), Phi(q)>` for two non-mixture distributions.
    fn inner(&self, p: &TransitionDistribution, q: &TransitionDistribution) -> Result<f64>;

    fn spec(&self) -> KernelSpec;
}

fn incompatible(kernel: &str, p: &TransitionDistribution, q: &TransitionDistribution) -> Error {
    Error::IncompatibleKernel {
        kernel: kernel.to_string(),
        what: format!("({}, {})", p.kind(), q.kind()),
    }
}

/// `k(x, y) = exp(-||x - y||^2 / (2 h^2))` on `R^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianKernel {
    pub bandwidth: f64,
    pub dim: usize,
}

impl GaussianKernel {
    pub fn new(bandwidth: f64, dim: usize) -> Result<Self> {
        if !(bandwidth > 0.0) || dim == 0 {
            return Err(Error::InvalidArgument(format!(
                "gaussian kernel needs bandwidth > 0 and dim >= 1 (got {bandwidth}, {dim})"
            )));
        }
        Ok(Self { bandwidth, dim })
    }

    /// Expected kernel value between two isotropic gaussians.
    pub fn gaussian_pair(&self, mu_i: &[f64], var_i: f64, mu_j: &[f64], var_j: f64) -> f64 {
        let h2 = self.bandwidth * self.bandwidth;
        let s = h2 + var_i + var_j;
        let d2: f64 = mu_i.iter().zip(mu_j).map(|(a, b)| (a - b) * (a - b)).sum();
        (h2 / s).powf(self.dim as f64 / 2.0) * (-d2 / (2.0 * s)).exp()
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::shape("gaussian kernel point", self.dim, x.len()));
        }
        Ok(())
    }
}

impl Kernel for GaussianKernel {
    fn name(&self) -> &'static str {
        "gaussian"
    }

    fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        (-d2 / (2.0 * self.bandwidth * self.bandwidth)).exp()
    }

    fn inner(&self, p: &TransitionDistribution, q: &TransitionDistribution) -> Result<f64> {
        use TransitionDistribution::Empirical;
        match (p, q) {
            (Empirical { points: xs }, Empirical { points: ys }) => {
                let mut acc = 0.0;
                for x in xs {
                    self.check_dim(x)?;
                    for y in ys {
                        acc += self.eval(x, y);
                    }
                }
                Ok(acc / (xs.len() * ys.len()) as f64)
            }
            (Empirical { points }, other) | (other, Empirical { points }) => {
                let (mu, var) = other.as_gaussian().ok_or_else(|| incompatible("gaussian", p, q))?;
                self.check_dim(mu)?;
                let acc: f64 = points.iter().map(|x| self.gaussian_pair(x, 0.0, mu, var)).sum();
                Ok(acc / points.len() as f64)
            }
            _ => {
                let (mi, vi) = p.as_gaussian().ok_or_else(|| incompatible("gaussian", p, q))?;
                let (mj, vj) = q.as_gaussian().ok_or_else(|| incompatible("gaussian", p, q))?;
                self.check_dim(mi)?;
                self.check_dim(mj)?;
                Ok(self.gaussian_pair(mi, vi, mj, vj))
            }
        }
    }

    fn spec(&self) -> KernelSpec {
        KernelSpec {
            kind: "gaussian".into(),
            bandwidth: Some(self.bandwidth),
            dim: Some(self.dim),
            size: None,
        }
    }
}

/// `k(i, j) = [i == j]` on a finite space; the embedding of a categorical
/// law is its weight vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteDeltaKernel {
    pub size: usize,
}

impl Kernel for FiniteDeltaKernel {
    fn name(&self) -> &'static str {
        "finite-delta"
    }

    fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        if x == y {
            1.0
        } else {
            0.0
        }
    }

    fn inner(&self, p: &TransitionDistribution, q: &TransitionDistribution) -> Result<f64> {
        use TransitionDistribution::{Categorical, Empirical};
        let weights = |d: &TransitionDistribution| -> Result<Vec<f64>> {
            match d {
                Categorical { weights } if weights.len() == self.size => Ok(weights.clone()),
                Categorical { weights } => Err(Error::shape("categorical support", self.size, weights.len())),
                Empirical { points } => {
                    let mut w = vec![0.0; self.size];
                    for x in points {
                        let i = x.first().copied().unwrap_or(-1.0);
                        if i < 0.0 || i.fract() != 0.0 || i as usize >= self.size {
                            return Err(incompatible("finite-delta", p, q));
                        }
                        w[i as usize] += 1.0 / points.len() as f64;
                    }
                    Ok(w)
                }
                _ => Err(incompatible("finite-delta", p, q)),
            }
        };
        let (a, b) = (weights(p)?, weights(q)?);
        Ok(a.iter().zip(&b).map(|(x, y)| x * y).sum())
    }

    fn spec(&self) -> KernelSpec {
        KernelSpec {
            kind: "finite-delta".into(),
            bandwidth: None,
            dim: None,
            size: Some(self.size),
        }
    }
}

/// Config-facing description of a kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size: Option<usize>,
}

impl KernelSpec {
    pub fn gaussian(bandwidth: Option<f64>, dim: usize) -> Self {
        Self {
            kind: "gaussian".into(),
            bandwidth,
            dim: Some(dim),
            size: None,
        }
    }

    pub fn finite_delta(size: usize) -> Self {
        Self {
            kind: "finite-delta".into(),
            bandwidth: None,
            dim: None,
            size: Some(size),
        }
    }
}

type KernelFactory = fn(&KernelSpec, Option<f64>) -> Result<Box<dyn Kernel>>;

/// Name-keyed kernel constructors. The optional `f64` passed to a factory is
/// a fallback bandwidth (e.g. from the median heuristic) used when the spec
/// leaves it unset.
pub struct KernelRegistry {
    factories: BTreeMap<&'static str, KernelFactory>,
}

impl KernelRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, name: &'static str, factory: KernelFactory) {
        self.factories.insert(name, factory);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.factories.keys().copied().collect()
    }

    pub fn build(&self, spec: &KernelSpec, fallback_bandwidth: Option<f64>) -> Result<Box<dyn Kernel>> {
        let factory = self.factories.get(spec.kind.as_str()).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "unknown kernel '{}'; registered: {}",
                spec.kind,
                self.names().join(", ")
            ))
        })?;
        factory(spec, fallback_bandwidth)
    }
}

impl Default for KernelRegistry {
    fn default() -> Self {
        let mut r = Self::empty();
        r.register("gaussian", |spec, fallback| {
            let h = spec.bandwidth.or(fallback).ok_or_else(|| {
                Error::InvalidArgument("gaussian kernel needs a bandwidth".into())
            })?;
            let dim = spec
                .dim
                .ok_or_else(|| Error::InvalidArgument("gaussian kernel needs dim".into()))?;
            Ok(Box::new(GaussianKernel::new(h, dim)?))
        });
        r.register("finite-delta", |spec, _| {
            let size = spec
                .size
                .ok_or_else(|| Error::InvalidArgument("finite-delta kernel needs size".into()))?;
            Ok(Box::new(FiniteDeltaKernel { size }))
        });
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_builds_known_kernels() {
        let reg = KernelRegistry::default();
        assert_eq!(reg.names(), vec!["finite-delta", "gaussian"]);
        let k = reg.build(&KernelSpec::gaussian(None, 2), Some(0.5)).unwrap();
        assert_eq!(k.name(), "gaussian");
        assert_eq!(k.spec().bandwidth, Some(0.5));
        assert!(reg.build(&KernelSpec::gaussian(None, 2), None).is_err());
        let err = reg
            .build(&KernelSpec { kind: "laplace".into(), bandwidth: None, dim: None, size: None }, None)
            .unwrap_err();
        assert!(err.to_string().contains("finite-delta, gaussian"));
    }

    #[test]
    fn gaussian_kernel_rejects_bad_bandwidth() {
        assert!(GaussianKernel::new(0.0, 1).is_err());
        assert!(GaussianKernel::new(1.0, 0).is_err());
    }

    #[test]
    fn finite_delta_rejects_continuous_laws() {
        let k = FiniteDeltaKernel { size: 2 };
        let p = TransitionDistribution::dirac(vec![0.0]);
        assert!(matches!(k.inner(&p, &p), Err(Error::IncompatibleKernel { .. })));
    }
}
