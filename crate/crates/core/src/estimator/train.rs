//! Full-batch gradient descent with monotone backtracking.

use std::collections::VecDeque;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::data::{FitData, Samples};
use super::objective::{objective, Terms};
use super::params::{Model, PolicyParams, TransitionParams};
use super::{HyperParams, Optimizer};
use crate::align::AnchorDataset;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Gradient norm fell below the tolerance.
    Converged,
    /// No step size produced a sufficient decrease.
    Stalled,
    Budget,
    /// A non-finite gradient appeared; the last valid iterate is returned.
    Diverged,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub fit: f64,
    pub vol: f64,
    pub pol: f64,
    pub anchor: f64,
    pub total: f64,
    pub step_size: f64,
}

impl TraceRow {
    fn new(step: usize, t: &Terms, step_size: f64) -> Self {
        Self {
            step,
            fit: t.fit,
            vol: t.vol,
            pol: t.pol,
            anchor: t.anchor,
            total: t.total,
            step_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// Row 0 is the initialization; one row per accepted step after that.
    pub trajectory: Vec<TraceRow>,
    pub initial: Terms,
    pub final_terms: Terms,
    pub iterations: usize,
    pub stop: StopReason,
    pub grad_norm: f64,
    /// Restart chosen for each state.
    pub restart_per_state: Vec<usize>,
    /// Trajectories of the individual restarts when there was more than one;
    /// `trajectory` is then the run that produced the returned model.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub restart_trajectories: Vec<Vec<TraceRow>>,
}

impl FitReport {
    /// Columns `run,step,fit,vol,pol,anchor,total`; `run` is `restart-<i>`
    /// for each restart and `final` for the returned run.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["run", "step", "fit", "vol", "pol", "anchor", "total"])?;
        let runs = self
            .restart_trajectories
            .iter()
            .enumerate()
            .map(|(i, t)| (format!("restart-{i}"), t))
            .chain(std::iter::once(("final".to_string(), &self.trajectory)));
        for (run, r) in runs.flat_map(|(run, t)| t.iter().map(move |r| (run.clone(), r))) {
            wtr.write_record([
                run,
                r.step.to_string(),
                r.fit.to_string(),
                r.vol.to_string(),
                r.pol.to_string(),
                r.anchor.to_string(),
                r.total.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: Model,
    pub report: FitReport,
}

const LBFGS_MEMORY: usize = 10;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// L-BFGS two-loop recursion: approximates `-H^{-1} g` from stored pairs.
fn two_loop(g: &[f64], memory: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(memory.len());
    for (s, y, rho) in memory.iter().rev() {
        let a = rho * dot(s, &q);
        q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
        alphas.push(a);
    }
    if let Some((s, y, _)) = memory.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in memory.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

/// Policy logits are small uniform noise. Tabular transitions start at each
/// state's pooled next-state frequencies plus logit noise; gaussian means at
/// the pooled mean plus noise scaled by the pooled spread.
pub fn initial_model(data: &FitData, k: usize, hp: &HyperParams) -> Result<Model> {
    initial_model_for_restart(data, k, hp, 0)
}

pub(crate) fn initial_model_for_restart(data: &FitData, k: usize, hp: &HyperParams, restart: usize) -> Result<Model> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let ns = data.num_states();
    let m = data.m;
    let mut r = rng::stream(hp.seed, "estimator-init", restart as u64);
    let policy = PolicyParams::random(ns, m, k, hp.init_scale, &mut r);
    let transitions = match &data.samples {
        Samples::Counts { n, counts, .. } => {
            let n = *n;
            let mut logits = vec![0.0; ns * k * n];
            for s in 0..ns {
                let marg: Vec<f64> = (0..n).map(|o| (0..m).map(|e| counts[(s * m + e) * n + o]).sum()).collect();
                let tot: f64 = marg.iter().sum();
                for a in 0..k {
                    for o in 0..n {
                        let p = if tot > 0.0 { (marg[o] + 0.5) / (tot + 0.5 * n as f64) } else { 1.0 / n as f64 };
                        logits[(s * k + a) * n + o] = p.ln() + r.random_range(-hp.init_scale..=hp.init_scale);
                    }
                }
            }
            TransitionParams::Tabular { num_states: ns, k, n, logits }
        }
        Samples::Points { dim, points } => {
            let dim = *dim;
            let mut sums = vec![0.0; ns * dim];
            let mut cnt = vec![0.0; ns];
            for (s, _, x, _) in points {
                for i in 0..dim {
                    sums[s * dim + i] += x[i];
                }
                cnt[*s] += 1.0;
            }
            let mut sq = 0.0;
            for (s, _, x, _) in points {
                for i in 0..dim {
                    sq += (x[i] - sums[s * dim + i] / cnt[*s]).powi(2);
                }
            }
            let spread = (sq / (points.len() as f64 * dim as f64)).sqrt().max(1e-3);
            let mut means = vec![0.0; ns * k * dim];
            for s in 0..ns {
                for a in 0..k {
                    for i in 0..dim {
                        let c = if cnt[s] > 0.0 { sums[s * dim + i] / cnt[s] } else { 0.0 };
                        means[(s * k + a) * dim + i] = c + spread * r.random_range(-hp.init_scale..=hp.init_scale);
                    }
                }
            }
            TransitionParams::Gaussian {
                num_states: ns,
                k,
                dim,
                means,
                log_sigma: spread.ln(),
            }
        }
    };
    Model::new(policy, transitions)
}

/// Trains from `hp.restarts` seeded initializations (the first is
/// [`initial_model`]). With a tabular head the objective is a sum of
/// per-state terms over disjoint parameters, so each state keeps the restart
/// with its least contribution and the assembled model is polished with one
/// more run. The gaussian head shares `log sigma`, so the restart with the
/// least total wins. Ties go to the earlier restart.
pub fn train(data: &FitData, anchors: &AnchorDataset, k: usize, hp: &HyperParams) -> Result<TrainOutcome> {
    if hp.restarts == 0 {
        return Err(Error::InvalidArgument("restarts must be at least 1".into()));
    }
    let mut runs = run_restarts(data, anchors, k, hp)?;
    if runs.len() == 1 {
        return Ok(runs.pop().expect("one run"));
    }
    if !runs[0].model.transitions.is_tabular() {
        let best = (0..runs.len())
            .min_by(|&a, &b| runs[a].report.final_terms.total.total_cmp(&runs[b].report.final_terms.total))
            .expect("runs");
        let traces = runs.iter().map(|r| r.report.trajectory.clone()).collect();
        let mut out = runs.swap_remove(best);
        out.report.restart_per_state = vec![best; data.num_states()];
        out.report.restart_trajectories = traces;
        return Ok(out);
    }
    let mut assembled = runs[0].model.clone();
    let mut chosen = Vec::with_capacity(data.num_states());
    for s in 0..data.num_states() {
        let scores = runs
            .iter()
            .map(|r| state_objective(&r.model, data, anchors, hp, s))
            .collect::<Result<Vec<_>>>()?;
        let best = (0..scores.len()).min_by(|&a, &b| scores[a].total_cmp(&scores[b])).expect("runs");
        copy_state(&mut assembled, &runs[best].model, s);
        chosen.push(best);
    }
    let mut out = train_from(assembled, data, anchors, hp)?;
    out.report.restart_per_state = chosen;
    out.report.restart_trajectories = runs.into_iter().map(|r| r.report.trajectory).collect();
    Ok(out)
}

/// Every restart on its own thread, at most `available_parallelism` at a
/// time. Results come back in restart order.
fn run_restarts(data: &FitData, anchors: &AnchorDataset, k: usize, hp: &HyperParams) -> Result<Vec<TrainOutcome>> {
    let width = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut runs = Vec::with_capacity(hp.restarts);
    let ids: Vec<usize> = (0..hp.restarts).collect();
    for chunk in ids.chunks(width) {
        let batch = std::thread::scope(|scope| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&restart| {
                    scope.spawn(move || {
                        let init = initial_model_for_restart(data, k, hp, restart)?;
                        train_from(init, data, anchors, hp)
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("restart thread panicked")).collect::<Vec<_>>()
        });
        for run in batch {
            runs.push(run?);
        }
    }
    Ok(runs)
}

/// State `s`'s share of the total objective.
fn state_objective(model: &Model, data: &FitData, anchors: &AnchorDataset, hp: &HyperParams, s: usize) -> Result<f64> {
    let restricted = data.restricted_to(s);
    let o = data.states[s];
    let local = AnchorDataset {
        anchors: anchors.anchors.iter().copied().filter(|a| a.o == o).collect(),
    };
    let no_anchor = HyperParams {
        lambda_anchor: 0.0,
        ..hp.clone()
    };
    let (terms, _) = objective(model, &restricted, &AnchorDataset::default(), &no_anchor, false)?;
    let anchor = if local.is_empty() || hp.lambda_anchor == 0.0 {
        0.0
    } else {
        super::objective::anchor_loss(&model.policy, &local, data)? * local.len() as f64 / anchors.len() as f64
    };
    Ok(terms.total + hp.lambda_anchor * anchor)
}

fn copy_state(dst: &mut Model, src: &Model, s: usize) {
    let (m, k) = (dst.policy.m, dst.policy.k);
    let p = dst.policy.index(s, 0, 0);
    dst.policy.logits[p..p + m * k].copy_from_slice(&src.policy.logits[p..p + m * k]);
    if let (TransitionParams::Tabular { n, logits, .. }, TransitionParams::Tabular { logits: from, .. }) = (&mut dst.transitions, &src.transitions) {
        let block = k * *n;
        logits[s * block..(s + 1) * block].copy_from_slice(&from[s * block..(s + 1) * block]);
    }
}

pub fn train_from(mut model: Model, data: &FitData, anchors: &AnchorDataset, hp: &HyperParams) -> Result<TrainOutcome> {
    hp.validate()?;
    if hp.lambda_anchor > 0.0 && anchors.is_empty() {
        return Err(Error::InvalidArgument("lambda_anchor > 0 requires anchors".into()));
    }
    let split = model.num_policy_params();
    let masked = |g: &mut Vec<f64>| {
        if hp.freeze_policy {
            g[..split].iter_mut().for_each(|v| *v = 0.0);
        }
        if hp.freeze_transitions {
            g[split..].iter_mut().for_each(|v| *v = 0.0);
        }
    };
    let (mut terms, g) = objective(&model, data, anchors, hp, true)?;
    if !terms.total.is_finite() {
        return Err(Error::Divergence { step: 0 });
    }
    let mut g = g.expect("gradient requested");
    masked(&mut g);
    let initial = terms;
    let mut trajectory = vec![TraceRow::new(0, &terms, 0.0)];
    let mut x = model.flat();
    let mut step = hp.step_size;
    let mut stop = StopReason::Budget;
    let mut iterations = 0;
    let norm = |g: &[f64]| g.iter().map(|v| v * v).sum::<f64>();
    let mut g2 = norm(&g);

    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    for it in 0..hp.max_iters {
        if !g2.is_finite() {
            stop = StopReason::Diverged;
            break;
        }
        if g2.sqrt() < hp.grad_tol {
            stop = StopReason::Converged;
            break;
        }
        let mut accepted = None;
        let mut trial = model.clone();
        // quasi-Newton first; on failure retry once along the plain gradient
        for quasi in [hp.optimizer == Optimizer::Lbfgs && !memory.is_empty(), false] {
            let d: Vec<f64> = if quasi { two_loop(&g, &memory) } else { g.iter().map(|v| -v).collect() };
            let slope = dot(&g, &d);
            if !(slope < 0.0) {
                memory.clear();
                continue;
            }
            let mut alpha = if quasi { 1.0 } else { step };
            for _ in 0..60 {
                let xn: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + alpha * b).collect();
                trial.set_flat(&xn);
                // a zero-density trial point is just a rejected step
                if let Ok((t, _)) = objective(&trial, data, anchors, hp, false) {
                    if t.total.is_finite() && t.total <= terms.total + hp.armijo * alpha * slope {
                        accepted = Some((xn, alpha));
                        break;
                    }
                }
                alpha *= hp.backtrack;
            }
            if accepted.is_some() {
                if !quasi {
                    step = alpha;
                }
                break;
            }
            memory.clear();
        }
        let Some((xn, alpha)) = accepted else {
            stop = StopReason::Stalled;
            break;
        };
        let (t, gn) = objective(&trial, data, anchors, hp, true)?;
        let mut gn = gn.expect("gradient requested");
        masked(&mut gn);
        if hp.optimizer == Optimizer::Lbfgs {
            let sv: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
            let yv: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
            let sy = dot(&sv, &yv);
            if sy > 1e-12 * dot(&sv, &sv).sqrt() * dot(&yv, &yv).sqrt() {
                memory.push_back((sv, yv, 1.0 / sy));
                if memory.len() > LBFGS_MEMORY {
                    memory.pop_front();
                }
            }
        }
        x = xn;
        model = trial;
        terms = t;
        g = gn;
        g2 = norm(&g);
        iterations = it + 1;
        trajectory.push(TraceRow::new(iterations, &terms, alpha));
        step = (step / hp.backtrack).min(hp.max_step);
    }
    Ok(TrainOutcome {
        model,
        report: FitReport {
            trajectory,
            initial,
            final_terms: terms,
            iterations,
            stop,
            grad_norm: g2.sqrt(),
            restart_per_state: Vec::new(),
            restart_trajectories: Vec::new(),
        },
    })
}
