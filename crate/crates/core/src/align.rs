//! Statewise label alignment over a state graph, and anchor resolution of the
//! remaining global relabeling.

use std::collections::{BTreeMap, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{sample_index, Embedder, TransitionDistribution};
use crate::env::{LatentEnv, TransitionBlock};
use crate::error::{Error, Result};
use crate::linalg::{invert_permutation, is_permutation, permutations};
use crate::rng;
use crate::stochastic::StochasticMatrix;

/// Floor applied to probabilities before taking logs in anchor scoring.
pub const LOG_FLOOR: f64 = 1e-300;
/// Log-likelihood gaps at or below this are reported as ties.
pub const TIE_TOL: f64 = 1e-9;

/// Undirected graph over state ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateGraph {
    nodes: Vec<usize>,
    edges: Vec<(usize, usize)>,
}

impl StateGraph {
    pub fn new(nodes: Vec<usize>, edges: Vec<(usize, usize)>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::Empty("graph nodes"));
        }
        let mut sorted = nodes.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != nodes.len() {
            return Err(Error::InvalidArgument("graph nodes must be distinct".into()));
        }
        for &(a, b) in &edges {
            if !nodes.contains(&a) || !nodes.contains(&b) || a == b {
                return Err(Error::InvalidArgument(format!("edge ({a}, {b}) is not between two distinct nodes")));
            }
        }
        Ok(Self { nodes, edges })
    }

    /// `nodes[0] - nodes[1] - ... - nodes[n-1]`.
    pub fn path(nodes: Vec<usize>) -> Result<Self> {
        let edges = nodes.windows(2).map(|w| (w[0], w[1])).collect();
        Self::new(nodes, edges)
    }

    /// Connects each point to its `neighbors` nearest others (Euclidean).
    pub fn knn(nodes: Vec<usize>, points: &[Vec<f64>], neighbors: usize) -> Result<Self> {
        if points.len() != nodes.len() {
            return Err(Error::shape("knn points", nodes.len(), points.len()));
        }
        let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
        let mut edges = Vec::new();
        for i in 0..nodes.len() {
            let mut order: Vec<usize> = (0..nodes.len()).filter(|&j| j != i).collect();
            order.sort_by(|&a, &b| dist(&points[i], &points[a]).total_cmp(&dist(&points[i], &points[b])));
            for &j in order.iter().take(neighbors) {
                let e = (nodes[i.min(j)], nodes[i.max(j)]);
                if !edges.contains(&e) {
                    edges.push(e);
                }
            }
        }
        Self::new(nodes, edges)
    }

    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    fn adjacency(&self) -> BTreeMap<usize, Vec<usize>> {
        let mut adj: BTreeMap<usize, Vec<usize>> = self.nodes.iter().map(|&n| (n, Vec::new())).collect();
        for &(a, b) in &self.edges {
            adj.get_mut(&a).expect("validated edge").push(b);
            adj.get_mut(&b).expect("validated edge").push(a);
        }
        adj
    }

    /// Connected components, each listed in node order.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let adj = self.adjacency();
        let mut seen = BTreeMap::new();
        let mut out = Vec::new();
        for &start in &self.nodes {
            if seen.contains_key(&start) {
                continue;
            }
            let mut comp = vec![start];
            seen.insert(start, ());
            let mut queue = VecDeque::from([start]);
            while let Some(u) = queue.pop_front() {
                for &v in &adj[&u] {
                    if seen.insert(v, ()).is_none() {
                        comp.push(v);
                        queue.push_back(v);
                    }
                }
            }
            out.push(comp);
        }
        out
    }

    pub fn is_connected(&self) -> bool {
        self.components().len() == 1
    }
}

/// Per-state recovered transitions and policies, with their separation margins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatewiseFactorization {
    pub states: Vec<usize>,
    pub transitions: Vec<Vec<TransitionDistribution>>,
    pub policies: Vec<StochasticMatrix>,
    pub margins: Vec<f64>,
}

/// Smallest embedded distance between two actions at one state, and the pair
/// attaining it. `pair` is `None` when fewer than two actions exist, in which
/// case the value is `+inf`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeparationMargin {
    pub value: f64,
    pub pair: Option<(usize, usize)>,
}

pub fn separation_margin(transitions: &[TransitionDistribution], embedder: &Embedder) -> Result<SeparationMargin> {
    let mut best = SeparationMargin {
        value: f64::INFINITY,
        pair: None,
    };
    for i in 0..transitions.len() {
        for j in (i + 1)..transitions.len() {
            let d = embedder.mmd(&transitions[i], &transitions[j])?;
            if best.pair.is_none() || d < best.value {
                best = SeparationMargin {
                    value: d,
                    pair: Some((i, j)),
                };
            }
        }
    }
    Ok(best)
}

fn categorical_columns(t: &StochasticMatrix) -> Vec<TransitionDistribution> {
    (0..t.cols())
        .map(|a| TransitionDistribution::Categorical {
            weights: t.column(a).iter().copied().collect(),
        })
        .collect()
}

impl StatewiseFactorization {
    pub fn new(
        states: Vec<usize>,
        transitions: Vec<Vec<TransitionDistribution>>,
        policies: Vec<StochasticMatrix>,
        embedder: &Embedder,
    ) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::Empty("states"));
        }
        if transitions.len() != states.len() || policies.len() != states.len() {
            return Err(Error::shape("per-state factors", states.len(), format!("{} / {}", transitions.len(), policies.len())));
        }
        let k = transitions[0].len();
        let m = policies[0].cols();
        for (t, pi) in transitions.iter().zip(&policies) {
            if t.len() != k || pi.rows() != k || pi.cols() != m {
                return Err(Error::shape("per-state factor shape", format!("k={k}, m={m}"), format!("k={}, {}x{}", t.len(), pi.rows(), pi.cols())));
            }
        }
        let margins = transitions
            .iter()
            .map(|t| separation_margin(t, embedder).map(|s| s.value))
            .collect::<Result<_>>()?;
        Ok(Self {
            states,
            transitions,
            policies,
            margins,
        })
    }

    /// Finite-space factors: each transition column becomes a categorical law.
    pub fn from_finite(states: Vec<usize>, transitions: &[StochasticMatrix], policies: Vec<StochasticMatrix>, embedder: &Embedder) -> Result<Self> {
        let t = transitions.iter().map(categorical_columns).collect();
        Self::new(states, t, policies, embedder)
    }

    /// The ground-truth factors of an environment.
    pub fn from_env(env: &LatentEnv, embedder: &Embedder) -> Result<Self> {
        let t = (0..env.num_states())
            .map(|i| match env.transitions(i) {
                TransitionBlock::Matrix(t) => categorical_columns(t),
                TransitionBlock::Distributions(d) => d.clone(),
            })
            .collect();
        let pi = (0..env.num_states()).map(|i| env.policy(i).clone()).collect();
        Self::new(env.states().to_vec(), t, pi, embedder)
    }

    pub fn k(&self) -> usize {
        self.transitions[0].len()
    }

    pub fn m(&self) -> usize {
        self.policies[0].cols()
    }

    pub fn state_index(&self, o: usize) -> Option<usize> {
        self.states.iter().position(|&s| s == o)
    }

    /// Relabels state `i` so its new action `c` is the old action `perms[i][c]`.
    pub fn shuffled(&self, perms: &[Vec<usize>]) -> Result<Self> {
        if perms.len() != self.states.len() || perms.iter().any(|p| p.len() != self.k() || !is_permutation(p)) {
            return Err(Error::InvalidArgument("one permutation of [k] per state is required".into()));
        }
        let mut out = self.clone();
        for (i, p) in perms.iter().enumerate() {
            out.transitions[i] = p.iter().map(|&a| self.transitions[i][a].clone()).collect();
            out.policies[i] = self.policies[i].permute_rows(p);
        }
        Ok(out)
    }

    /// Applies an assignment so that every state uses canonical labels.
    pub fn relabel(&self, assignment: &PermutationAssignment) -> Result<Self> {
        let perms: Vec<Vec<usize>> = self
            .states
            .iter()
            .map(|s| {
                assignment
                    .permutations
                    .get(s)
                    .map(|p| invert_permutation(p))
                    .ok_or_else(|| Error::InvalidArgument(format!("assignment has no entry for state {s}")))
            })
            .collect::<Result<_>>()?;
        self.shuffled(&perms)
    }
}

/// Per-state map from recovered action index to canonical label:
/// `permutations[o][a]` is the canonical label of recovered action `a` at `o`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationAssignment {
    pub permutations: BTreeMap<usize, Vec<usize>>,
    pub global: bool,
    pub anchor_resolved: bool,
    /// Component index of every state.
    pub components: BTreeMap<usize, usize>,
    /// Largest matched-distance-to-threshold ratio over tree edges; below 1
    /// when the certificate holds.
    pub certificate_ratio: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
}

fn distance_table(a: &[TransitionDistribution], b: &[TransitionDistribution], embedder: &Embedder) -> Result<Vec<Vec<f64>>> {
    a.iter()
        .map(|x| b.iter().map(|y| embedder.mmd(x, y)).collect::<Result<Vec<_>>>())
        .collect()
}

/// Minimum-total-distance matching: `child a` is matched to `parent perm[a]`.
fn best_matching(table: &[Vec<f64>], perms: &[Vec<usize>]) -> (Vec<usize>, Vec<f64>) {
    let cost = |p: &[usize]| p.iter().enumerate().map(|(a, &b)| table[a][b]).sum::<f64>();
    let best = perms
        .iter()
        .min_by(|p, q| cost(p).total_cmp(&cost(q)))
        .expect("at least one permutation");
    let dists = best.iter().enumerate().map(|(a, &b)| table[a][b]).collect();
    (best.clone(), dists)
}

/// Propagates labels outward from `root` by breadth-first search, matching
/// each child's actions to its parent's. Every matched distance must be below
/// half the smaller of the two states' margins. Disconnected graphs get one
/// independent labeling per component and `global = false`.
pub fn align_statewise(facts: &StatewiseFactorization, graph: &StateGraph, root: usize, embedder: &Embedder) -> Result<PermutationAssignment> {
    for s in &facts.states {
        if !graph.nodes().contains(s) {
            return Err(Error::InvalidArgument(format!("state {s} is not in the graph")));
        }
    }
    if graph.nodes().len() != facts.states.len() {
        return Err(Error::InvalidArgument("graph nodes must match the factorized states".into()));
    }
    if !graph.nodes().contains(&root) {
        return Err(Error::InvalidArgument(format!("root {root} is not in the graph")));
    }
    let k = facts.k();
    let perms = permutations(k)?;
    let identity: Vec<usize> = (0..k).collect();
    let adj = graph.adjacency();
    let idx = |s: usize| facts.state_index(s).expect("graph nodes checked");

    let mut comps = graph.components();
    // root's component goes first
    comps.sort_by_key(|c| !c.contains(&root));
    let mut assigned: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut component_of = BTreeMap::new();
    let mut ratio: f64 = 0.0;
    for (ci, comp) in comps.iter().enumerate() {
        let start = if ci == 0 { root } else { comp[0] };
        assigned.insert(start, identity.clone());
        let mut queue = VecDeque::from([start]);
        while let Some(parent) = queue.pop_front() {
            component_of.insert(parent, ci);
            for &child in &adj[&parent] {
                if assigned.contains_key(&child) {
                    continue;
                }
                let (pi_, ci_) = (idx(parent), idx(child));
                let table = distance_table(&facts.transitions[ci_], &facts.transitions[pi_], embedder)?;
                let (matching, dists) = best_matching(&table, &perms);
                let threshold = facts.margins[pi_].min(facts.margins[ci_]) / 2.0;
                let worst = dists.iter().copied().fold(0.0, f64::max);
                if !(worst < threshold) {
                    return Err(Error::MarginViolation {
                        parent,
                        child,
                        distance: worst,
                        threshold,
                    });
                }
                if threshold.is_finite() {
                    ratio = ratio.max(worst / threshold);
                }
                let parent_perm = &assigned[&parent];
                let child_perm: Vec<usize> = matching.iter().map(|&b| parent_perm[b]).collect();
                assigned.insert(child, child_perm);
                queue.push_back(child);
            }
        }
    }
    Ok(PermutationAssignment {
        permutations: assigned,
        global: comps.len() == 1,
        anchor_resolved: false,
        components: component_of,
        certificate_ratio: ratio,
        sigma: None,
        confidence: None,
    })
}

/// Edges whose own best matching disagrees with the composed assignment.
pub fn inconsistent_edges(
    facts: &StatewiseFactorization,
    graph: &StateGraph,
    assignment: &PermutationAssignment,
    embedder: &Embedder,
) -> Result<Vec<(usize, usize)>> {
    let perms = permutations(facts.k())?;
    let mut bad = Vec::new();
    for &(a, b) in graph.edges() {
        let (ia, ib) = match (facts.state_index(a), facts.state_index(b)) {
            (Some(x), Some(y)) => (x, y),
            _ => return Err(Error::InvalidArgument(format!("edge ({a}, {b}) references unknown states"))),
        };
        let table = distance_table(&facts.transitions[ib], &facts.transitions[ia], embedder)?;
        let (matching, _) = best_matching(&table, &perms);
        let (pa, pb) = (&assignment.permutations[&a], &assignment.permutations[&b]);
        if matching.iter().enumerate().any(|(c, &p)| pb[c] != pa[p]) {
            bad.push((a, b));
        }
    }
    Ok(bad)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Anchor {
    pub o: usize,
    pub e: usize,
    pub action: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AnchorDataset {
    pub anchors: Vec<Anchor>,
}

impl AnchorDataset {
    /// Draws `r` labeled triples: a uniform state and demonstrator, then the
    /// true action from the environment's policy.
    pub fn sample_from_env(env: &LatentEnv, r: usize, seed: u64) -> Self {
        let mut g = rng::stream(seed, "anchors", 0);
        let anchors = (0..r)
            .map(|_| {
                let s = g.random_range(0..env.num_states());
                let e = g.random_range(0..env.m());
                let action = sample_index(env.policy(s).column(e).as_slice(), &mut g);
                Anchor {
                    o: env.states()[s],
                    e,
                    action,
                }
            })
            .collect();
        Self { anchors }
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorResolution {
    /// `sigma[a*]` is the model label carrying true label `a*`.
    pub sigma: Vec<usize>,
    pub log_likelihood: f64,
    /// Gap to the runner-up permutation.
    pub confidence: f64,
    pub tied: bool,
}

/// Chooses the relabeling under which the anchors are most likely given the
/// aligned policies.
pub fn resolve_anchor(facts: &StatewiseFactorization, anchors: &AnchorDataset) -> Result<AnchorResolution> {
    if anchors.is_empty() {
        return Err(Error::Empty("anchors"));
    }
    let k = facts.k();
    let mut lookup = Vec::with_capacity(anchors.len());
    for a in &anchors.anchors {
        let i = facts
            .state_index(a.o)
            .ok_or_else(|| Error::InvalidArgument(format!("anchor state {} is not factorized", a.o)))?;
        if a.action >= k || a.e >= facts.m() {
            return Err(Error::InvalidArgument(format!("anchor {a:?} out of range")));
        }
        lookup.push((i, a.e, a.action));
    }
    let mut scored: Vec<(f64, Vec<usize>)> = permutations(k)?
        .into_iter()
        .map(|sigma| {
            let ll = lookup
                .iter()
                .map(|&(i, e, a)| facts.policies[i].get(sigma[a], e).max(LOG_FLOOR).ln())
                .sum::<f64>();
            (ll, sigma)
        })
        .collect();
    // stable sort keeps lexicographic order among equal scores
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (best, sigma) = scored[0].clone();
    let confidence = scored.get(1).map_or(f64::INFINITY, |r| best - r.0);
    Ok(AnchorResolution {
        sigma,
        log_likelihood: best,
        confidence,
        tied: confidence <= TIE_TOL,
    })
}

impl PermutationAssignment {
    /// Folds an anchor resolution into the canonical labels so that anchored
    /// actions carry their stated indices.
    pub fn apply_anchor(&mut self, res: &AnchorResolution) {
        let inv = invert_permutation(&res.sigma);
        for p in self.permutations.values_mut() {
            *p = p.iter().map(|&c| inv[c]).collect();
        }
        self.anchor_resolved = true;
        self.sigma = Some(res.sigma.clone());
        self.confidence = Some(res.confidence);
    }
}
