use std::collections::{BTreeMap, BTreeSet};

use latentact_core::align::{align_statewise, inconsistent_edges, resolve_anchor, AnchorDataset, StateGraph, StatewiseFactorization};
use latentact_core::embedding::{Embedder, KernelRegistry, KernelSpec};
use latentact_core::env::LatentEnv;
use latentact_core::linalg::invert_permutation;
use latentact_core::rng;
use rand::seq::SliceRandom;

use super::{reject_blocks, Scenario};
use crate::config::{AlignOptions, EnvSpec, GraphKind, ScenarioConfig};
use crate::error::HarnessError;
use crate::report::{Check, Comparison, Outcome, StateResult};

/// Observations of the smooth path environment live in the plane.
const PATH_DIM: usize = 2;

pub struct GlobalAlignment;

impl Scenario for GlobalAlignment {
    fn name(&self) -> &'static str {
        "global-alignment"
    }

    fn summary(&self) -> &'static str {
        "propagate shuffled statewise labels over a state graph and fix them with anchors"
    }

    fn normalize(&self, cfg: &mut ScenarioConfig) -> Result<(), HarnessError> {
        reject_blocks(cfg, &["solver", "diversity", "estimator"])?;
        let env = &mut cfg.env;
        env.reject(self.name(), &["path", "family", "samples", "dim", "components"])?;
        let n = EnvSpec::fill(&mut env.num_states, 50);
        let k = EnvSpec::fill(&mut env.k, 3);
        let m = EnvSpec::fill(&mut env.m, 5);
        EnvSpec::fill(&mut env.anchors, 20);
        if n < 2 || k == 0 || m < k {
            return Err(HarnessError::invalid("env", "need num_states >= 2 and m >= k >= 1"));
        }
        let spec = cfg.embedding.get_or_insert_with(|| KernelSpec::gaussian(Some(1.0), PATH_DIM));
        if spec.kind != "gaussian" || spec.dim != Some(PATH_DIM) {
            return Err(HarnessError::invalid("embedding", format!("path observations need a gaussian kernel with dim = {PATH_DIM}")));
        }
        let a = cfg.align.get_or_insert_with(AlignOptions::default);
        if a.root >= n {
            return Err(HarnessError::invalid("align.root", format!("must be below num_states = {n}")));
        }
        if a.components == 0 || a.components > n {
            return Err(HarnessError::invalid("align.components", format!("must lie in 1..={n}")));
        }
        if a.graph == GraphKind::Knn && a.neighbors == 0 {
            return Err(HarnessError::invalid("align.neighbors", "must be at least 1"));
        }
        Ok(())
    }

    fn run(&self, cfg: &ScenarioConfig) -> anyhow::Result<Outcome> {
        let need = |v: Option<usize>| v.ok_or_else(|| anyhow::anyhow!("config is not normalized"));
        let (n, k, m) = (need(cfg.env.num_states)?, need(cfg.env.k)?, need(cfg.env.m)?);
        let opts = cfg.align.clone().ok_or_else(|| anyhow::anyhow!("config is not normalized"))?;
        let spec = cfg.embedding.as_ref().ok_or_else(|| anyhow::anyhow!("config is not normalized"))?;
        let env = LatentEnv::smooth_path(n, k, m, cfg.seed)?;
        let e = Embedder::new(KernelRegistry::default().build(spec, None)?);

        let truth = StatewiseFactorization::from_env(&env, &e)?;
        let planted = planted_shuffles(n, k, cfg.seed);
        let facts = truth.shuffled(&planted)?;
        let piece = |i: usize| i * opts.components / n;
        let edges: Vec<(usize, usize)> = match opts.graph {
            GraphKind::Path => (0..n - 1).map(|i| (i, i + 1)).collect(),
            GraphKind::Knn => {
                let points: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64 / n as f64]).collect();
                StateGraph::knn((0..n).collect(), &points, opts.neighbors)?.edges().to_vec()
            }
        };
        let edges = edges.into_iter().filter(|&(a, b)| piece(a) == piece(b)).collect();
        let graph = StateGraph::new((0..n).collect(), edges)?;
        let mut a = align_statewise(&facts, &graph, opts.root, &e)?;

        let mut out = Outcome::default();
        let found: BTreeSet<usize> = a.components.values().copied().collect();
        let mut reps: BTreeMap<usize, usize> = BTreeMap::new();
        for i in 0..n {
            reps.entry(piece(i)).or_insert(i);
        }
        let mut consistent = true;
        for i in 0..n {
            let ok = true_to_canonical(&a.permutations, &planted, i) == true_to_canonical(&a.permutations, &planted, reps[&piece(i)]);
            consistent &= ok;
            out.per_state.push(
                StateResult::new(i)
                    .metric("margin", facts.margins[i])
                    .metric("consistent", ok as u8 as f64)
                    .label("permutation", format!("{:?}", a.permutations[&i])),
            );
        }
        let bad_edges = inconsistent_edges(&facts, &graph, &a, &e)?;
        out.metric("certificate_ratio", a.certificate_ratio);
        out.metric("components", found.len() as f64);
        out.metric("inconsistent_edges", bad_edges.len() as f64);
        out.checks.push(Check::flag("labels_consistent_within_components", consistent));
        let count_error = (found.len() as f64 - opts.components as f64).abs();
        out.checks.push(Check::new("component_count_error", count_error, Comparison::AtMost, 0.0));
        out.checks.push(Check::new("inconsistent_edges", bad_edges.len() as f64, Comparison::AtMost, 0.0));

        if opts.components == 1 {
            out.checks.push(Check::new("certificate_ratio", a.certificate_ratio, Comparison::Below, 1.0));
            let anchors = AnchorDataset::sample_from_env(&env, need(cfg.env.anchors)?, cfg.seed);
            let res = resolve_anchor(&facts.relabel(&a)?, &anchors)?;
            let sigma_ok = res.sigma == true_to_canonical(&a.permutations, &planted, opts.root);
            a.apply_anchor(&res);
            let exact = facts.relabel(&a)? == truth;
            out.metric("anchor_confidence", res.confidence);
            out.metric("anchor_log_likelihood", res.log_likelihood);
            out.checks.push(Check::flag("anchor_recovers_global_permutation", sigma_ok));
            out.checks.push(Check::new("anchor_confidence", res.confidence, Comparison::Above, 0.0));
            out.checks.push(Check::flag("exact_after_anchoring", exact));
        } else {
            out.checks.push(Check::flag("reported_not_global", !a.global));
        }
        out.detail("assignment", &a);
        Ok(out)
    }
}

fn planted_shuffles(n: usize, k: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut r = rng::stream(seed, "scenario-shuffle", 0);
    (0..n)
        .map(|_| {
            let mut p: Vec<usize> = (0..k).collect();
            p.shuffle(&mut r);
            p
        })
        .collect()
}

/// True label to canonical label at state `i` under the planted shuffle.
fn true_to_canonical(perms: &BTreeMap<usize, Vec<usize>>, planted: &[Vec<usize>], i: usize) -> Vec<usize> {
    invert_permutation(&planted[i]).iter().map(|&c| perms[&i][c]).collect()
}
