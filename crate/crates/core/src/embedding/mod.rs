//! Kernel mean embeddings of transition laws: Gram matrices, embedded rank,
//! MMD, and the Gram-determinant factorization over a component dictionary.

mod continuous;
mod distribution;
mod kernel;

pub use continuous::{continuous_minvol_factorize, ContinuousFactorization};
pub use distribution::{sample_index, TransitionDistribution};
pub use kernel::{FiniteDeltaKernel, GaussianKernel, Kernel, KernelRegistry, KernelSpec};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{sym_eigenvalues, symmetrize};

/// Gram matrices must be PSD up to this slack.
pub const PSD_SLACK: f64 = 1e-9;

/// Fixed base distributions spanning the candidate transition laws, with
/// their Gram matrix under the embedder's kernel.
#[derive(Debug, Clone)]
pub struct ComponentDictionary {
    components: Vec<TransitionDistribution>,
    gram: DMatrix<f64>,
}

impl ComponentDictionary {
    pub fn new(components: Vec<TransitionDistribution>, kernel: &dyn Kernel) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Empty("dictionary"));
        }
        for c in &components {
            c.validate()?;
            if matches!(c, TransitionDistribution::DictMixture { .. }) {
                return Err(Error::InvalidArgument("dictionary components cannot be mixtures".into()));
            }
        }
        let n = components.len();
        let mut gram = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = kernel.inner(&components[i], &components[j])?;
                gram[(i, j)] = v;
                gram[(j, i)] = v;
            }
        }
        check_psd(&gram)?;
        Ok(Self { components, gram })
    }

    /// Categorical one-hot atoms `e_0 .. e_{n-1}`.
    pub fn atoms(n: usize, kernel: &dyn Kernel) -> Result<Self> {
        let comps = (0..n)
            .map(|i| {
                let mut w = vec![0.0; n];
                w[i] = 1.0;
                TransitionDistribution::Categorical { weights: w }
            })
            .collect();
        Self::new(comps, kernel)
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn components(&self) -> &[TransitionDistribution] {
        &self.components
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }
}

/// Median of the pairwise distances between component locations, the usual
/// default bandwidth. Returns `None` when fewer than two located components exist.
pub fn median_heuristic(components: &[TransitionDistribution]) -> Option<f64> {
    let locs: Vec<&[f64]> = components.iter().filter_map(|c| c.as_gaussian().map(|g| g.0)).collect();
    let mut d: Vec<f64> = Vec::new();
    for i in 0..locs.len() {
        for j in (i + 1)..locs.len() {
            let v: f64 = locs[i].iter().zip(locs[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            if v > 0.0 {
                d.push(v.sqrt());
            }
        }
    }
    if d.is_empty() {
        return None;
    }
    d.sort_by(f64::total_cmp);
    let mid = d.len() / 2;
    Some(if d.len() % 2 == 0 { 0.5 * (d[mid - 1] + d[mid]) } else { d[mid] })
}

fn check_psd(g: &DMatrix<f64>) -> Result<()> {
    let asym = (g - g.transpose()).amax();
    let min_eig = sym_eigenvalues(g).min();
    if asym > 1e-12 || min_eig < -PSD_SLACK {
        return Err(Error::Numerical(format!(
            "gram matrix not symmetric PSD (asymmetry {asym:.2e}, min eigenvalue {min_eig:.2e})"
        )));
    }
    Ok(())
}

/// The map `Phi` realized through inner products: a kernel plus an optional
/// dictionary for mixture coordinates.
#[derive(Debug)]
pub struct Embedder {
    kernel: Box<dyn Kernel>,
    dictionary: Option<ComponentDictionary>,
}

impl Embedder {
    pub fn new(kernel: Box<dyn Kernel>) -> Self {
        Self {
            kernel,
            dictionary: None,
        }
    }

    pub fn with_dictionary(kernel: Box<dyn Kernel>, components: Vec<TransitionDistribution>) -> Result<Self> {
        let dictionary = ComponentDictionary::new(components, kernel.as_ref())?;
        Ok(Self {
            kernel,
            dictionary: Some(dictionary),
        })
    }

    pub fn kernel(&self) -> &dyn Kernel {
        self.kernel.as_ref()
    }

    pub fn dictionary(&self) -> Option<&ComponentDictionary> {
        self.dictionary.as_ref()
    }

    fn mixture_weights<'a>(&'a self, w: &'a [f64]) -> Result<(&'a ComponentDictionary, &'a [f64])> {
        let dict = self
            .dictionary
            .as_ref()
            .ok_or(Error::Empty("dictionary for mixture embedding"))?;
        if w.len() != dict.len() {
            return Err(Error::shape("mixture weights", dict.len(), w.len()));
        }
        Ok((dict, w))
    }

    /// `<Phi(p), Phi(q)>`.
    pub fn inner(&self, p: &TransitionDistribution, q: &TransitionDistribution) -> Result<f64> {
        use TransitionDistribution::DictMixture;
        match (p, q) {
            (DictMixture { weights: a }, DictMixture { weights: b }) => {
                let (dict, a) = self.mixture_weights(a)?;
                let (_, b) = self.mixture_weights(b)?;
                let va = nalgebra::DVector::from_column_slice(a);
                let vb = nalgebra::DVector::from_column_slice(b);
                Ok((va.transpose() * dict.gram() * vb)[(0, 0)])
            }
            (DictMixture { weights }, other) | (other, DictMixture { weights }) => {
                let (dict, w) = self.mixture_weights(weights)?;
                let mut acc = 0.0;
                for (c, &wc) in dict.components().iter().zip(w) {
                    if wc != 0.0 {
                        acc += wc * self.kernel.inner(c, other)?;
                    }
                }
                Ok(acc)
            }
            _ => self.kernel.inner(p, q),
        }
    }

    /// Embedded Gram matrix `[<Phi(t_i), Phi(t_j)>]`.
    pub fn gram_matrix(&self, dists: &[TransitionDistribution]) -> Result<DMatrix<f64>> {
        let n = dists.len();
        let mut g = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = self.inner(&dists[i], &dists[j])?;
                g[(i, j)] = v;
                g[(j, i)] = v;
            }
        }
        let g = symmetrize(&g);
        check_psd(&g)?;
        Ok(g)
    }

    /// Number of Gram eigenvalues above `tol * lambda_max`.
    pub fn embedded_rank(&self, dists: &[TransitionDistribution], tol: f64) -> Result<usize> {
        if dists.is_empty() {
            return Ok(0);
        }
        let eig = sym_eigenvalues(&self.gram_matrix(dists)?);
        let top = eig.max();
        if top <= 0.0 {
            return Ok(0);
        }
        Ok(eig.iter().filter(|&&v| v > tol * top).count())
    }

    /// `||Phi(p) - Phi(q)||`.
    pub fn mmd(&self, p: &TransitionDistribution, q: &TransitionDistribution) -> Result<f64> {
        let sq = self.inner(p, p)? - 2.0 * self.inner(p, q)? + self.inner(q, q)?;
        Ok(sq.max(0.0).sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn gauss(h: f64, d: usize) -> Embedder {
        Embedder::new(Box::new(GaussianKernel::new(h, d).unwrap()))
    }

    #[test]
    fn identical_diracs_have_unit_inner_product() {
        let e = gauss(0.7, 2);
        let x = TransitionDistribution::dirac(vec![0.3, -1.0]);
        let g = e.gram_matrix(&[x.clone(), x]).unwrap();
        assert!(g.iter().all(|&v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn separated_point_gaussians_match_closed_form() {
        let e = gauss(1.0, 1);
        let a = TransitionDistribution::gaussian(vec![0.0], 0.0);
        let b = TransitionDistribution::gaussian(vec![2.0], 0.0);
        let g = e.gram_matrix(&[a, b]).unwrap();
        assert!((g[(0, 1)] - (-2.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn categorical_gram_is_weight_inner_product() {
        let e = Embedder::new(Box::new(FiniteDeltaKernel { size: 3 }));
        let w = [vec![0.2, 0.3, 0.5], vec![1.0, 0.0, 0.0]];
        let dists: Vec<_> = w
            .iter()
            .map(|w| TransitionDistribution::Categorical { weights: w.clone() })
            .collect();
        let g = e.gram_matrix(&dists).unwrap();
        let wm = DMatrix::from_columns(&[
            nalgebra::DVector::from_column_slice(&w[0]),
            nalgebra::DVector::from_column_slice(&w[1]),
        ]);
        assert!((g - wm.transpose() * wm).amax() < 1e-15);
    }

    #[test]
    fn embedded_rank_examples() {
        let e = gauss(0.05, 2);
        let diracs: Vec<_> = (0..4)
            .map(|i| TransitionDistribution::dirac(vec![i as f64, 0.0]))
            .collect();
        assert_eq!(e.embedded_rank(&diracs, 1e-9).unwrap(), 4);
        let mut dup = diracs.clone();
        dup.push(diracs[1].clone());
        assert_eq!(e.embedded_rank(&dup, 1e-9).unwrap(), 4);
        assert_eq!(e.embedded_rank(&diracs[..1], 1e-9).unwrap(), 1);
    }

    #[test]
    fn mmd_examples() {
        let e = gauss(1.3, 2);
        let p = TransitionDistribution::dirac(vec![0.0, 1.0]);
        let q = TransitionDistribution::dirac(vec![1.0, -0.5]);
        assert_eq!(e.mmd(&p, &p).unwrap(), 0.0);
        let kxy = e.kernel().eval(&[0.0, 1.0], &[1.0, -0.5]);
        assert!((e.mmd(&p, &q).unwrap() - (2.0 - 2.0 * kxy).sqrt()).abs() < 1e-14);
        assert_eq!(e.mmd(&p, &q).unwrap(), e.mmd(&q, &p).unwrap());
    }

    #[test]
    fn mixtures_require_a_dictionary() {
        let e = gauss(1.0, 1);
        let m = TransitionDistribution::DictMixture { weights: vec![1.0] };
        assert!(e.inner(&m, &m).is_err());
    }

    #[test]
    fn mixture_against_base_expands_linearly() {
        let comps = vec![
            TransitionDistribution::gaussian(vec![0.0], 0.1),
            TransitionDistribution::gaussian(vec![1.5], 0.2),
        ];
        let e = Embedder::with_dictionary(Box::new(GaussianKernel::new(0.8, 1).unwrap()), comps.clone()).unwrap();
        let mix = TransitionDistribution::DictMixture { weights: vec![0.3, 0.7] };
        let q = TransitionDistribution::dirac(vec![0.4]);
        let direct = 0.3 * e.inner(&comps[0], &q).unwrap() + 0.7 * e.inner(&comps[1], &q).unwrap();
        assert!((e.inner(&mix, &q).unwrap() - direct).abs() < 1e-15);
        assert!((e.inner(&q, &mix).unwrap() - direct).abs() < 1e-15);
    }

    #[test]
    fn random_gaussian_grams_are_psd() {
        let mut r = rng::stream(9, "psd-test", 0);
        for _ in 0..50 {
            let e = gauss(r.random_range(0.2..2.0), 3);
            let dists: Vec<_> = (0..6)
                .map(|_| {
                    TransitionDistribution::gaussian(
                        (0..3).map(|_| r.random_range(-1.0..1.0)).collect(),
                        r.random_range(0.0..0.5),
                    )
                })
                .collect();
            let g = e.gram_matrix(&dists).unwrap();
            assert!(sym_eigenvalues(&g).min() >= -PSD_SLACK);
            assert_eq!(g, g.transpose());
        }
    }

    #[test]
    fn median_heuristic_examples() {
        let c: Vec<_> = [0.0, 1.0, 3.0]
            .iter()
            .map(|&x| TransitionDistribution::dirac(vec![x]))
            .collect();
        // distances 1, 3, 2
        assert_eq!(median_heuristic(&c), Some(2.0));
        assert_eq!(median_heuristic(&c[..1]), None);
    }
}
