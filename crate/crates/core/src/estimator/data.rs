//! Training data reduced to the sufficient form each transition head needs.

use std::collections::BTreeMap;

use crate::env::{NextObservation, TrajectoryBatch};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Samples {
    /// Next-state counts indexed `[state][demonstrator][next state]`, plus
    /// the first triple index seen in each cell (`usize::MAX` if none).
    Counts { n: usize, counts: Vec<f64>, first: Vec<usize> },
    /// `(state index, demonstrator, next point, triple index)`.
    Points { dim: usize, points: Vec<(usize, usize, Vec<f64>, usize)> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitData {
    pub states: Vec<usize>,
    pub m: usize,
    pub samples: Samples,
    pub total: f64,
    /// Fraction of triples observed at each state.
    pub state_weights: Vec<f64>,
}

fn state_map(states: &[usize]) -> BTreeMap<usize, usize> {
    states.iter().enumerate().map(|(i, &s)| (s, i)).collect()
}

impl FitData {
    pub fn finite(batch: &TrajectoryBatch, states: &[usize], m: usize, n: usize) -> Result<Self> {
        let map = state_map(states);
        let mut counts = vec![0.0; states.len() * m * n];
        let mut first = vec![usize::MAX; counts.len()];
        let mut per_state = vec![0.0; states.len()];
        for (i, t) in batch.transitions.iter().enumerate() {
            let s = *map.get(&t.o).ok_or_else(|| Error::InvalidArgument(format!("triple {i}: unknown state {}", t.o)))?;
            let NextObservation::State(o) = t.next else {
                return Err(Error::InvalidArgument(format!("triple {i}: expected a finite next state")));
            };
            if o >= n || t.e >= m {
                return Err(Error::InvalidArgument(format!("triple {i}: index out of range")));
            }
            let c = (s * m + t.e) * n + o;
            counts[c] += 1.0;
            first[c] = first[c].min(i);
            per_state[s] += 1.0;
        }
        Self::finish(states, m, Samples::Counts { n, counts, first }, per_state)
    }

    pub fn continuous(batch: &TrajectoryBatch, states: &[usize], m: usize, dim: usize) -> Result<Self> {
        let map = state_map(states);
        let mut points = Vec::with_capacity(batch.len());
        let mut per_state = vec![0.0; states.len()];
        for (i, t) in batch.transitions.iter().enumerate() {
            let s = *map.get(&t.o).ok_or_else(|| Error::InvalidArgument(format!("triple {i}: unknown state {}", t.o)))?;
            let NextObservation::Point(x) = &t.next else {
                return Err(Error::InvalidArgument(format!("triple {i}: expected a continuous next observation")));
            };
            if x.len() != dim || t.e >= m {
                return Err(Error::InvalidArgument(format!("triple {i}: shape out of range")));
            }
            points.push((s, t.e, x.clone(), i));
            per_state[s] += 1.0;
        }
        Self::finish(states, m, Samples::Points { dim, points }, per_state)
    }

    fn finish(states: &[usize], m: usize, samples: Samples, per_state: Vec<f64>) -> Result<Self> {
        let total: f64 = per_state.iter().sum();
        if total == 0.0 {
            return Err(Error::Empty("training triples"));
        }
        Ok(Self {
            states: states.to_vec(),
            m,
            samples,
            total,
            state_weights: per_state.iter().map(|c| c / total).collect(),
        })
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    /// The same data with every other state's triples removed but the
    /// normalization kept, so objective terms evaluate to state `s`'s share.
    pub(crate) fn restricted_to(&self, s: usize) -> Self {
        let mut out = self.clone();
        for (i, w) in out.state_weights.iter_mut().enumerate() {
            if i != s {
                *w = 0.0;
            }
        }
        match &mut out.samples {
            Samples::Counts { n, counts, .. } => {
                let block = self.m * *n;
                for (i, c) in counts.iter_mut().enumerate() {
                    if i / block != s {
                        *c = 0.0;
                    }
                }
            }
            Samples::Points { points, .. } => points.retain(|p| p.0 == s),
        }
        out
    }

    pub fn state_index(&self, o: usize) -> Option<usize> {
        self.states.iter().position(|&s| s == o)
    }
}
