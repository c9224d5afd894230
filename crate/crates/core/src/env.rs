//! The generative model: latent actions drawn from demonstrator policies,
//! next observations drawn from action-conditioned kernels shared by all
//! demonstrators.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::embedding::{sample_index, TransitionDistribution};
use crate::error::{Error, Result};
use crate::linalg::permutations;
use crate::rng;
use crate::stochastic::{is_column_stochastic, StochasticMatrix, STOCHASTIC_TOL};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObservationSpace {
    Finite {
        size: usize,
    },
    Continuous {
        dim: usize,
        /// Evaluation states; state ids index into this list.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        grid: Option<Vec<Vec<f64>>>,
    },
}

impl ObservationSpace {
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Finite { size: 0 } => Err(Error::InvalidArgument("finite space needs size >= 1".into())),
            Self::Continuous { dim: 0, .. } => Err(Error::InvalidArgument("continuous space needs dim >= 1".into())),
            Self::Continuous { dim, grid: Some(grid) } => {
                if let Some(p) = grid.iter().find(|p| p.len() != *dim) {
                    return Err(Error::shape("grid point", dim, p.len()));
                }
                for i in 0..grid.len() {
                    for j in (i + 1)..grid.len() {
                        if grid[i] == grid[j] {
                            return Err(Error::InvalidArgument(format!("grid states {i} and {j} coincide")));
                        }
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// Per-state latent transitions: a column-stochastic matrix over a finite
/// space, or one law per action otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TransitionBlock {
    Matrix(StochasticMatrix),
    Distributions(Vec<TransitionDistribution>),
}

/// Ground-truth world with `k` latent actions and `m` demonstrators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EnvDoc", into = "EnvDoc")]
pub struct LatentEnv {
    k: usize,
    m: usize,
    space: ObservationSpace,
    states: Vec<usize>,
    transitions: Vec<TransitionBlock>,
    policies: Vec<StochasticMatrix>,
    dictionary: Option<Vec<TransitionDistribution>>,
    identifiable_by_construction: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EnvDoc {
    k: usize,
    m: usize,
    space: ObservationSpace,
    states: Vec<usize>,
    #[serde(rename = "T_star")]
    t_star: BTreeMap<usize, TransitionBlock>,
    #[serde(rename = "Pi_star")]
    pi_star: BTreeMap<usize, StochasticMatrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dictionary: Option<Vec<TransitionDistribution>>,
    #[serde(default)]
    identifiable_by_construction: bool,
}

impl TryFrom<EnvDoc> for LatentEnv {
    type Error = Error;

    fn try_from(mut doc: EnvDoc) -> Result<Self> {
        let mut transitions = Vec::with_capacity(doc.states.len());
        let mut policies = Vec::with_capacity(doc.states.len());
        for s in &doc.states {
            transitions.push(
                doc.t_star
                    .remove(s)
                    .ok_or_else(|| Error::InvalidArgument(format!("T_star missing state {s}")))?,
            );
            policies.push(
                doc.pi_star
                    .remove(s)
                    .ok_or_else(|| Error::InvalidArgument(format!("Pi_star missing state {s}")))?,
            );
        }
        if let Some(extra) = doc.t_star.keys().chain(doc.pi_star.keys()).next() {
            return Err(Error::InvalidArgument(format!("state {extra} is not listed in states")));
        }
        LatentEnv::new(doc.k, doc.m, doc.space, doc.states, transitions, policies, doc.dictionary)
            .map(|e| e.flag_identifiable(doc.identifiable_by_construction))
            .and_then(|e| {
                if e.identifiable_by_construction && e.k > e.m {
                    Err(Error::InvalidArgument("identifiable-by-construction needs k <= m".into()))
                } else {
                    Ok(e)
                }
            })
    }
}

impl From<LatentEnv> for EnvDoc {
    fn from(e: LatentEnv) -> Self {
        EnvDoc {
            k: e.k,
            m: e.m,
            space: e.space,
            t_star: e.states.iter().copied().zip(e.transitions).collect(),
            pi_star: e.states.iter().copied().zip(e.policies).collect(),
            states: e.states,
            dictionary: e.dictionary,
            identifiable_by_construction: e.identifiable_by_construction,
        }
    }
}

/// How per-state policy matrices are drawn by the generators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyFamily {
    /// `[I_k | random columns]`; requires `m >= k`.
    Separable,
    /// Every column drawn uniformly from the simplex.
    Random,
    /// Every column equal to `(1/k, ..., 1/k)`.
    Uniform,
}

impl PolicyFamily {
    pub fn draw<R: rand::Rng + ?Sized>(self, k: usize, m: usize, rng: &mut R) -> Result<StochasticMatrix> {
        match self {
            PolicyFamily::Separable => {
                if m < k {
                    return Err(Error::InvalidArgument(format!("separable policies need m >= k ({m} < {k})")));
                }
                let mut pi = DMatrix::zeros(k, m);
                pi.view_mut((0, 0), (k, k)).fill_with_identity();
                if m > k {
                    let extra = StochasticMatrix::random(k, m - k, rng);
                    pi.view_mut((0, k), (k, m - k)).copy_from(extra.as_matrix());
                }
                StochasticMatrix::new(pi)
            }
            PolicyFamily::Random => Ok(StochasticMatrix::random(k, m, rng)),
            PolicyFamily::Uniform => Ok(StochasticMatrix::uniform(k, m)),
        }
    }
}

impl LatentEnv {
    pub fn new(
        k: usize,
        m: usize,
        space: ObservationSpace,
        states: Vec<usize>,
        transitions: Vec<TransitionBlock>,
        policies: Vec<StochasticMatrix>,
        dictionary: Option<Vec<TransitionDistribution>>,
    ) -> Result<Self> {
        space.validate()?;
        if k == 0 || m == 0 {
            return Err(Error::InvalidArgument("k and m must be at least 1".into()));
        }
        if states.is_empty() {
            return Err(Error::Empty("states"));
        }
        if transitions.len() != states.len() || policies.len() != states.len() {
            return Err(Error::shape("per-state blocks", states.len(), format!("{} / {}", transitions.len(), policies.len())));
        }
        let mut sorted = states.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != states.len() {
            return Err(Error::InvalidArgument("state ids must be distinct".into()));
        }
        let bound = match &space {
            ObservationSpace::Finite { size } => Some(*size),
            ObservationSpace::Continuous { grid, .. } => grid.as_ref().map(Vec::len),
        };
        if let (Some(b), Some(&s)) = (bound, states.iter().find(|&&s| Some(s) >= bound)) {
            return Err(Error::InvalidArgument(format!("state {s} outside the observation space of size {b}")));
        }
        for (pi, block) in policies.iter().zip(&transitions) {
            if pi.rows() != k || pi.cols() != m {
                return Err(Error::shape("policy matrix", format!("{k}x{m}"), format!("{}x{}", pi.rows(), pi.cols())));
            }
            match (&space, block) {
                (ObservationSpace::Finite { size }, TransitionBlock::Matrix(t)) => {
                    if t.rows() != *size || t.cols() != k {
                        return Err(Error::shape("transition matrix", format!("{size}x{k}"), format!("{}x{}", t.rows(), t.cols())));
                    }
                }
                (ObservationSpace::Continuous { dim, .. }, TransitionBlock::Distributions(ds)) => {
                    if ds.len() != k {
                        return Err(Error::shape("transition list", k, ds.len()));
                    }
                    for d in ds {
                        d.validate()?;
                        if let Some((mu, _)) = d.as_gaussian() {
                            if mu.len() != *dim {
                                return Err(Error::shape("transition mean", dim, mu.len()));
                            }
                        }
                    }
                }
                _ => {
                    return Err(Error::InvalidArgument(
                        "transition representation does not match the observation space".into(),
                    ))
                }
            }
        }
        Ok(Self {
            k,
            m,
            space,
            states,
            transitions,
            policies,
            dictionary,
            identifiable_by_construction: false,
        })
    }

    pub fn flag_identifiable(mut self, flag: bool) -> Self {
        self.identifiable_by_construction = flag;
        self
    }

    /// All `n` observations are states; transitions are flat-Dirichlet columns.
    pub fn random_finite(n: usize, k: usize, m: usize, family: PolicyFamily, seed: u64) -> Result<Self> {
        let mut transitions = Vec::with_capacity(n);
        let mut policies = Vec::with_capacity(n);
        for o in 0..n {
            let mut r = rng::stream(seed, "random_finite", o as u64);
            transitions.push(TransitionBlock::Matrix(StochasticMatrix::random(n, k, &mut r)));
            policies.push(family.draw(k, m, &mut r)?);
        }
        Ok(Self::new(
            k,
            m,
            ObservationSpace::Finite { size: n },
            (0..n).collect(),
            transitions,
            policies,
            None,
        )?
        .flag_identifiable(family == PolicyFamily::Separable && k <= m))
    }

    /// `n` states on a segment of the plane; latent transitions are narrow
    /// gaussians around `k` well separated centers that drift slowly with
    /// the state, so neighbors share labels.
    pub fn smooth_path(n: usize, k: usize, m: usize, seed: u64) -> Result<Self> {
        let mut r = rng::stream(seed, "smooth_path", 0);
        let grid: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64 / n as f64, 0.0]).collect();
        let centers: Vec<[f64; 2]> = (0..k)
            .map(|a| {
                let ang = 2.0 * std::f64::consts::PI * a as f64 / k as f64;
                [2.0 * ang.cos(), 2.0 * ang.sin()]
            })
            .collect();
        let transitions = grid
            .iter()
            .map(|x| {
                TransitionBlock::Distributions(
                    centers
                        .iter()
                        .map(|c| TransitionDistribution::gaussian(vec![c[0] + 0.3 * x[0], c[1] + 0.1 * x[0]], 0.05))
                        .collect(),
                )
            })
            .collect();
        let policies = (0..n).map(|_| PolicyFamily::Separable.draw(k, m, &mut r)).collect::<Result<Vec<_>>>()?;
        Ok(Self::new(k, m, ObservationSpace::Continuous { dim: 2, grid: Some(grid) }, (0..n).collect(), transitions, policies, None)?
            .flag_identifiable(k <= m))
    }

    /// Latent transitions are random mixtures over `components` gaussians in
    /// `R^dim` with means in `[-3, 3]^dim` and variance 0.1; separable policies.
    pub fn gaussian_dictionary(num_states: usize, dim: usize, components: usize, k: usize, m: usize, seed: u64) -> Result<Self> {
        use rand::Rng;
        let mut r = rng::stream(seed, "gaussian_dictionary", 0);
        let dictionary: Vec<TransitionDistribution> = (0..components)
            .map(|_| TransitionDistribution::gaussian((0..dim).map(|_| r.random_range(-3.0..3.0)).collect(), 0.1))
            .collect();
        let mut transitions = Vec::with_capacity(num_states);
        let mut policies = Vec::with_capacity(num_states);
        for o in 0..num_states {
            let mut r = rng::stream(seed, "gaussian_dictionary", 1 + o as u64);
            let c = StochasticMatrix::random(components, k, &mut r);
            transitions.push(TransitionBlock::Distributions(
                (0..k)
                    .map(|a| TransitionDistribution::DictMixture { weights: c.column(a).iter().copied().collect() })
                    .collect(),
            ));
            policies.push(PolicyFamily::Separable.draw(k, m, &mut r)?);
        }
        Ok(Self::new(
            k,
            m,
            ObservationSpace::Continuous { dim, grid: None },
            (0..num_states).collect(),
            transitions,
            policies,
            Some(dictionary),
        )?
        .flag_identifiable(k <= m))
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn space(&self) -> &ObservationSpace {
        &self.space
    }

    pub fn states(&self) -> &[usize] {
        &self.states
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn identifiable_by_construction(&self) -> bool {
        self.identifiable_by_construction
    }

    pub fn dictionary(&self) -> Option<&[TransitionDistribution]> {
        self.dictionary.as_deref()
    }

    pub fn state_index(&self, o: usize) -> Option<usize> {
        self.states.iter().position(|&s| s == o)
    }

    pub fn transitions(&self, idx: usize) -> &TransitionBlock {
        &self.transitions[idx]
    }

    pub fn policy(&self, idx: usize) -> &StochasticMatrix {
        &self.policies[idx]
    }

    /// `T*(o)` for finite spaces.
    pub fn transition_matrix(&self, idx: usize) -> Result<&StochasticMatrix> {
        match &self.transitions[idx] {
            TransitionBlock::Matrix(t) => Ok(t),
            TransitionBlock::Distributions(_) => Err(Error::InvalidArgument("environment is not finite".into())),
        }
    }

    /// Exact observable `P*(o) = T*(o) Pi*(o)` for finite spaces.
    pub fn observable(&self, idx: usize) -> Result<StochasticMatrix> {
        mix_observable(self.transition_matrix(idx)?, &self.policies[idx])
    }

    /// Dictionary coordinates of the latent transitions at state `idx`
    /// (dictionary size x k).
    pub fn dictionary_coordinates(&self, idx: usize) -> Result<StochasticMatrix> {
        let size = self.dictionary.as_ref().ok_or(Error::Empty("dictionary"))?.len();
        let TransitionBlock::Distributions(ds) = &self.transitions[idx] else {
            return Err(Error::InvalidArgument("state has matrix transitions, not dictionary mixtures".into()));
        };
        let cols = ds
            .iter()
            .map(|d| match d {
                TransitionDistribution::DictMixture { weights } => Ok(weights.clone()),
                other => Err(Error::InvalidArgument(format!("expected a dictionary mixture, got {}", other.kind()))),
            })
            .collect::<Result<Vec<_>>>()?;
        StochasticMatrix::from_columns(size, &cols)
    }

    /// Observable laws at state `idx` as dictionary mixtures, one per demonstrator.
    pub fn dictionary_observables(&self, idx: usize) -> Result<Vec<TransitionDistribution>> {
        let w = mix_observable(&self.dictionary_coordinates(idx)?, &self.policies[idx])?;
        Ok((0..w.cols())
            .map(|e| TransitionDistribution::DictMixture { weights: w.column(e).iter().copied().collect() })
            .collect())
    }

    pub fn finite_size(&self) -> Option<usize> {
        match self.space {
            ObservationSpace::Finite { size } => Some(size),
            ObservationSpace::Continuous { .. } => None,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// `P = T Pi`: mixes latent transitions with demonstrator weights.
pub fn mix_observable(t: &StochasticMatrix, pi: &StochasticMatrix) -> Result<StochasticMatrix> {
    mix_observable_raw(t.as_matrix(), pi.as_matrix())
}

/// Same as [`mix_observable`] for unvalidated inputs.
pub fn mix_observable_raw(t: &DMatrix<f64>, pi: &DMatrix<f64>) -> Result<StochasticMatrix> {
    if t.ncols() != pi.nrows() {
        return Err(Error::shape("mix_observable inner dimension", t.ncols(), pi.nrows()));
    }
    for m in [t, pi] {
        if !is_column_stochastic(m, STOCHASTIC_TOL) {
            let (dev, min) = crate::stochastic::stochastic_deviation(m);
            return Err(Error::NotStochastic {
                max_deviation: dev,
                min_entry: min,
            });
        }
    }
    StochasticMatrix::new(t * pi)
}

/// Sampling weights over `(state index, demonstrator)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct StartDistribution {
    weights: DMatrix<f64>,
}

impl StartDistribution {
    pub fn new(weights: DMatrix<f64>) -> Result<Self> {
        if weights.iter().any(|&w| w < 0.0 || !w.is_finite()) || weights.sum() <= 0.0 {
            return Err(Error::InvalidArgument("start distribution has no positive mass".into()));
        }
        Ok(Self { weights })
    }

    pub fn uniform(num_states: usize, m: usize) -> Self {
        Self {
            weights: DMatrix::from_element(num_states, m, 1.0),
        }
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NextObservation {
    State(usize),
    Point(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub o: usize,
    pub next: NextObservation,
    pub e: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrajectoryBatch {
    pub transitions: Vec<Transition>,
    pub seed: Option<u64>,
}

#[derive(Serialize, Deserialize)]
struct CsvRow {
    o: usize,
    o_next: String,
    e: usize,
}

impl TrajectoryBatch {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// Columns `o,o_next,e`; continuous next observations are `;`-joined.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        for t in &self.transitions {
            let o_next = match &t.next {
                NextObservation::State(s) => s.to_string(),
                NextObservation::Point(p) => p.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(";"),
            };
            wtr.serialize(CsvRow { o: t.o, o_next, e: t.e })?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R, seed: Option<u64>) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut transitions = Vec::new();
        for row in rdr.deserialize() {
            let row: CsvRow = row?;
            let next = if row.o_next.contains(';') || row.o_next.contains('.') || row.o_next.contains('e') {
                let pts: std::result::Result<Vec<f64>, _> = row.o_next.split(';').map(str::parse).collect();
                NextObservation::Point(pts.map_err(|e| Error::InvalidArgument(format!("bad o_next '{}': {e}", row.o_next)))?)
            } else {
                NextObservation::State(
                    row.o_next
                        .parse()
                        .map_err(|e| Error::InvalidArgument(format!("bad o_next '{}': {e}", row.o_next)))?,
                )
            };
            transitions.push(Transition { o: row.o, next, e: row.e });
        }
        Ok(Self { transitions, seed })
    }
}

/// Draws `n` i.i.d. triples: `(o, e)` from `start`, `a ~ Pi*(o)[:, e]`,
/// `o' ~ T*(o)[:, a]`.
pub fn sample_transitions(env: &LatentEnv, start: &StartDistribution, n: usize, seed: u64) -> Result<TrajectoryBatch> {
    if n == 0 {
        return Err(Error::InvalidArgument("sample count must be at least 1".into()));
    }
    let w = start.weights();
    if w.shape() != (env.num_states(), env.m()) {
        return Err(Error::shape("start distribution", format!("{}x{}", env.num_states(), env.m()), format!("{:?}", w.shape())));
    }
    // column-major flattening: index = s + e * num_states
    let flat = w.as_slice();
    let ns = env.num_states();
    let mut r = rng::stream(seed, "sample_transitions", 0);
    let mut transitions = Vec::with_capacity(n);
    for _ in 0..n {
        let cell = sample_index(flat, &mut r);
        let (s, e) = (cell % ns, cell / ns);
        let pi = env.policy(s);
        let a = sample_index(pi.as_matrix().column(e).as_slice(), &mut r);
        let next = match env.transitions(s) {
            TransitionBlock::Matrix(t) => NextObservation::State(sample_index(t.as_matrix().column(a).as_slice(), &mut r)),
            TransitionBlock::Distributions(ds) => NextObservation::Point(ds[a].sample(&mut r, env.dictionary())?),
        };
        transitions.push(Transition { o: env.states()[s], next, e });
    }
    Ok(TrajectoryBatch {
        transitions,
        seed: Some(seed),
    })
}

/// Next-state counts per `(o, e)` over a finite space.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalConditional {
    n: usize,
    m: usize,
    states: Vec<usize>,
    counts: Vec<DMatrix<f64>>,
}

/// Normalized counts for one state. Columns without data are zero and listed
/// in `missing`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalEstimate {
    pub frequencies: DMatrix<f64>,
    pub counts: Vec<u64>,
    pub missing: Vec<usize>,
}

impl ConditionalEstimate {
    pub fn observed_columns(&self) -> Vec<usize> {
        (0..self.counts.len()).filter(|j| !self.missing.contains(j)).collect()
    }

    /// The stochastic matrix restricted to observed columns, if any.
    pub fn observed_matrix(&self) -> Option<(StochasticMatrix, Vec<usize>)> {
        let cols = self.observed_columns();
        if cols.is_empty() {
            return None;
        }
        let m = StochasticMatrix::normalized(self.frequencies.select_columns(&cols));
        Some((m, cols))
    }

    pub fn min_observed_count(&self) -> u64 {
        self.counts.iter().copied().filter(|&c| c > 0).min().unwrap_or(0)
    }
}

pub fn estimate_conditionals(batch: &TrajectoryBatch, n: usize, states: &[usize], m: usize) -> Result<EmpiricalConditional> {
    let mut counts = vec![DMatrix::zeros(n, m); states.len()];
    let index: BTreeMap<usize, usize> = states.iter().enumerate().map(|(i, &s)| (s, i)).collect();
    for (i, t) in batch.transitions.iter().enumerate() {
        let s = *index
            .get(&t.o)
            .ok_or_else(|| Error::InvalidArgument(format!("triple {i}: unknown state {}", t.o)))?;
        let NextObservation::State(next) = t.next else {
            return Err(Error::InvalidArgument(format!("triple {i}: continuous next observation in a finite space")));
        };
        if next >= n || t.e >= m {
            return Err(Error::InvalidArgument(format!("triple {i}: index out of range")));
        }
        counts[s][(next, t.e)] += 1.0;
    }
    Ok(EmpiricalConditional {
        n,
        m,
        states: states.to_vec(),
        counts,
    })
}

impl EmpiricalConditional {
    pub fn states(&self) -> &[usize] {
        &self.states
    }

    pub fn counts(&self, idx: usize) -> &DMatrix<f64> {
        &self.counts[idx]
    }

    pub fn estimate(&self, idx: usize) -> ConditionalEstimate {
        let c = &self.counts[idx];
        let mut freq = DMatrix::zeros(self.n, self.m);
        let mut counts = Vec::with_capacity(self.m);
        let mut missing = Vec::new();
        for j in 0..self.m {
            let total = c.column(j).sum();
            counts.push(total as u64);
            if total > 0.0 {
                freq.set_column(j, &(c.column(j) / total));
            } else {
                missing.push(j);
            }
        }
        ConditionalEstimate {
            frequencies: freq,
            counts,
            missing,
        }
    }

    pub fn estimates(&self) -> BTreeMap<usize, ConditionalEstimate> {
        (0..self.states.len()).map(|i| (self.states[i], self.estimate(i))).collect()
    }
}

/// A stochastic factorization `(T, w)` of a single observable column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleColumnFactorization {
    pub transitions: StochasticMatrix,
    pub weights: StochasticMatrix,
}

impl SingleColumnFactorization {
    pub fn reconstruct(&self) -> DMatrix<f64> {
        self.transitions.as_matrix() * self.weights.as_matrix()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counterexample {
    pub observable: StochasticMatrix,
    pub first: SingleColumnFactorization,
    pub second: SingleColumnFactorization,
}

impl Counterexample {
    pub fn residuals(&self) -> (f64, f64) {
        let p = self.observable.as_matrix();
        ((p - self.first.reconstruct()).amax(), (p - self.second.reconstruct()).amax())
    }

    /// Smallest max-abs difference between the two transition matrices over
    /// all relabelings of the second.
    pub fn permutation_gap(&self) -> f64 {
        let a = self.first.transitions.as_matrix();
        let b = self.second.transitions.as_matrix();
        permutations(a.ncols())
            .expect("counterexample has two actions")
            .iter()
            .map(|p| (a - b.select_columns(p)).amax())
            .fold(f64::INFINITY, f64::min)
    }
}

/// Two stochastic factorizations of `(1/2, 1/2)` that are not relabelings of
/// each other: pure transitions, and `(3/4, 1/4), (1/4, 3/4)`, both with
/// equal weights.
pub fn build_counterexample() -> Counterexample {
    let col = |v: &[f64]| v.to_vec();
    let half = StochasticMatrix::from_columns(2, &[col(&[0.5, 0.5])]).expect("valid column");
    let pure = StochasticMatrix::identity(2);
    let blurred = StochasticMatrix::from_columns(2, &[col(&[0.75, 0.25]), col(&[0.25, 0.75])]).expect("valid columns");
    Counterexample {
        observable: half.clone(),
        first: SingleColumnFactorization {
            transitions: pure,
            weights: half.clone(),
        },
        second: SingleColumnFactorization {
            transitions: blurred,
            weights: half,
        },
    }
}
