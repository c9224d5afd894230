use super::*;
use crate::align::{Anchor, AnchorDataset};
use crate::env::{sample_transitions, LatentEnv, PolicyFamily, StartDistribution};
use crate::rng;
use crate::stochastic::StochasticMatrix;
use nalgebra::DMatrix;
use rand::Rng;

fn finite_setup(n: usize, k: usize, m: usize, samples: usize, seed: u64) -> (LatentEnv, FitData) {
    let env = LatentEnv::random_finite(n, k, m, PolicyFamily::Separable, seed).unwrap();
    let batch = sample_transitions(&env, &StartDistribution::uniform(n, m), samples, seed).unwrap();
    let data = FitData::finite(&batch, env.states(), m, n).unwrap();
    (env, data)
}

fn truth_model(env: &LatentEnv) -> Model {
    let pis: Vec<_> = (0..env.num_states()).map(|s| env.policy(s).clone()).collect();
    let ts: Vec<_> = (0..env.num_states()).map(|s| env.transition_matrix(s).unwrap().clone()).collect();
    Model::new(PolicyParams::from_matrices(&pis).unwrap(), TransitionParams::tabular_from_matrices(&ts).unwrap()).unwrap()
}

fn counts(data: &FitData) -> (&[f64], usize) {
    match &data.samples {
        Samples::Counts { counts, n, .. } => (counts, *n),
        _ => unreachable!(),
    }
}

#[test]
fn single_action_fit_is_plain_conditional_nll() {
    let (_, data) = finite_setup(4, 1, 2, 2000, 1);
    let mut r = rng::stream(1, "est-test", 0);
    let model = initial_model(&data, 1, &HyperParams::default()).unwrap();
    let model = Model::new(PolicyParams::random(4, 2, 1, 3.0, &mut r), model.transitions).unwrap();
    let (c, n) = counts(&data);
    let mut direct = 0.0;
    for s in 0..4 {
        let t = model.transitions.matrix(s).unwrap();
        for e in 0..2 {
            for o in 0..n {
                direct -= c[(s * 2 + e) * n + o] * t[(o, 0)].ln();
            }
        }
    }
    assert!((nll_fit(&model, &data).unwrap() - direct / data.total).abs() < 1e-12);
}

#[test]
fn truth_parameters_give_the_exact_mixture_likelihood() {
    let (env, data) = finite_setup(5, 3, 5, 200_000, 2);
    let model = truth_model(&env);
    let (c, n) = counts(&data);
    let (mut oracle, mut entropy) = (0.0, 0.0);
    for s in 0..5 {
        let p = env.observable(s).unwrap();
        for e in 0..5 {
            for o in 0..n {
                let q = p.get(o, e);
                oracle -= c[(s * 5 + e) * n + o] * q.ln();
                if q > 0.0 {
                    entropy -= data.state_weights[s] / 5.0 * q * q.ln();
                }
            }
        }
    }
    let nll = nll_fit(&model, &data).unwrap();
    assert!((nll - oracle / data.total).abs() < 1e-10);
    assert!((nll - entropy).abs() < 0.01, "nll {nll} entropy {entropy}");
}

#[test]
fn uniform_model_costs_log_n_per_sample() {
    let (_, data) = finite_setup(6, 3, 4, 1000, 3);
    let model = Model::new(PolicyParams::zeros(6, 4, 3), TransitionParams::tabular_zeros(6, 3, 6)).unwrap();
    assert!((nll_fit(&model, &data).unwrap() - 6f64.ln()).abs() < 1e-12);
}

#[test]
fn zero_density_names_the_triple() {
    let (env, data) = finite_setup(3, 2, 2, 200, 4);
    let mut model = truth_model(&env);
    if let TransitionParams::Tabular { logits, .. } = &mut model.transitions {
        logits.iter_mut().for_each(|l| *l = -1e6);
        for s in 0..3 {
            for a in 0..2 {
                logits[(s * 2 + a) * 3] = 0.0;
            }
        }
    }
    match nll_fit(&model, &data) {
        Err(crate::Error::ZeroDensity { index, .. }) => assert!(index < 200),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn volume_regularizer_examples() {
    let (_, data) = finite_setup(4, 2, 3, 500, 5);
    let same = StochasticMatrix::from_columns(4, &vec![vec![0.4, 0.3, 0.2, 0.1]; 2]).unwrap();
    let distinct = StochasticMatrix::from_columns(4, &[vec![0.4, 0.3, 0.2, 0.1], vec![0.1, 0.2, 0.3, 0.4]]).unwrap();
    let vs = reg_vol(&TransitionParams::tabular_from_matrices(&vec![same; 4]).unwrap(), &data, 1e-6, 1.0).unwrap();
    let td = TransitionParams::tabular_from_matrices(&vec![distinct; 4]).unwrap();
    let vd = reg_vol(&td, &data, 1e-6, 1.0).unwrap();
    assert!(vs < vd);
    let mut prev = f64::NEG_INFINITY;
    for eps in [1e-6, 1e-3, 1.0, 1e3, 1e6] {
        let v = reg_vol(&td, &data, eps, 1.0).unwrap();
        assert!(v > prev);
        prev = v;
    }
    let big = reg_vol(&td, &data, 1e8, 1.0).unwrap();
    assert!((big - 2.0 * 1e8f64.ln()).abs() < 1e-6);
    assert!(reg_vol(&td, &data, 0.0, 1.0).is_err());
}

#[test]
fn deterministic_heads_give_pointwise_kernel_grams() {
    let means = vec![0.0, 0.0, 1.0, 0.5, -0.5, 2.0];
    let t = TransitionParams::Gaussian {
        num_states: 1,
        k: 3,
        dim: 2,
        means: means.clone(),
        log_sigma: -40.0,
    };
    let g = model_gram(&t, 0, 0.8).unwrap();
    for a in 0..3 {
        for b in 0..3 {
            let d2: f64 = (0..2).map(|i| (means[a * 2 + i] - means[b * 2 + i]).powi(2)).sum();
            assert!((g[(a, b)] - (-d2 / (2.0 * 0.64)).exp()).abs() < 1e-14);
        }
    }
}

#[test]
fn policy_barrier_examples() {
    let (_, data) = finite_setup(3, 3, 3, 300, 6);
    let ident = PolicyParams::from_matrices(&vec![StochasticMatrix::identity(3); 3]).unwrap();
    assert_eq!(reg_pol(&ident, &data, 1e-6, 0.0).unwrap(), 0.0);
    assert_eq!(reg_pol(&ident, &data, 1e-6, -1.0).unwrap(), 0.0);
    let shared = PolicyParams::from_matrices(&vec![StochasticMatrix::uniform(3, 3); 3]).unwrap();
    let tau = 3.0 * 1e-6f64.ln() + 20.0;
    assert!(reg_pol(&shared, &data, 1e-6, tau).unwrap() > 0.0);
    assert_eq!(reg_pol(&shared, &data, 1e-6, f64::NEG_INFINITY).unwrap(), 0.0);
    assert!((HyperParams::default_tau(3) - (3.0 * (1.0f64 / 3.0).ln() - 1.0)).abs() < 1e-15);
}

#[test]
fn anchor_loss_examples() {
    let (_, data) = finite_setup(2, 3, 3, 100, 7);
    let anchors = AnchorDataset {
        anchors: vec![Anchor { o: 0, e: 0, action: 0 }, Anchor { o: 1, e: 1, action: 2 }],
    };
    let uniform = PolicyParams::zeros(2, 3, 3);
    assert!((anchor_loss(&uniform, &anchors, &data).unwrap() - 3f64.ln()).abs() < 1e-12);
    let mut sure = PolicyParams::zeros(2, 3, 3);
    let (i, j) = (sure.index(0, 0, 0), sure.index(1, 1, 2));
    sure.logits[i] = 800.0;
    sure.logits[j] = 800.0;
    assert!(anchor_loss(&sure, &anchors, &data).unwrap() < 1e-12);
    assert!(anchor_loss(&uniform, &AnchorDataset::default(), &data).is_err());

    let hp = HyperParams {
        fit_weight: 0.0,
        lambda_vol: 0.0,
        lambda_pol: 0.0,
        lambda_anchor: 1.0,
        max_iters: 1,
        ..HyperParams::default()
    };
    let model = Model::new(uniform, TransitionParams::tabular_zeros(2, 3, 2)).unwrap();
    let out = train_from(model, &data, &anchors, &hp).unwrap();
    assert!(anchor_loss(&out.model.policy, &anchors, &data).unwrap() < 3f64.ln());
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 { 0.0 } else { diff / scale }
}

pub(crate) fn finite_difference(model: &Model, data: &FitData, anchors: &AnchorDataset, hp: &HyperParams) -> Vec<f64> {
    let x = model.flat();
    let h = 1e-6;
    let mut probe = model.clone();
    (0..x.len())
        .map(|i| {
            let mut xp = x.clone();
            xp[i] += h;
            probe.set_flat(&xp);
            let fp = objective(&probe, data, anchors, hp, false).unwrap().0.total;
            xp[i] -= 2.0 * h;
            probe.set_flat(&xp);
            let fm = objective(&probe, data, anchors, hp, false).unwrap().0.total;
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

#[test]
fn tabular_gradient_matches_finite_differences() {
    for inst in 0..20u64 {
        let mut r = rng::stream(inst, "grad-check", 0);
        let (n, k, m) = (r.random_range(2..5), r.random_range(1..4), r.random_range(1..4));
        let (env, data) = finite_setup(n, k, m.max(k), 300, inst);
        let anchors = AnchorDataset::sample_from_env(&env, 5, inst);
        let hp = HyperParams {
            lambda_vol: 0.3,
            lambda_anchor: 0.5,
            // well inside the active region of the hinge
            tau: Some(5.0),
            seed: inst,
            init_scale: 1.0,
            ..HyperParams::default()
        };
        let model = initial_model(&data, k, &hp).unwrap();
        let g = objective(&model, &data, &anchors, &hp, true).unwrap().1.unwrap();
        let fd = finite_difference(&model, &data, &anchors, &hp);
        let e = rel_err(&g, &fd);
        assert!(e <= 1e-4, "instance {inst}: relative error {e}");
    }
}

fn gaussian_data(seed: u64) -> (LatentEnv, FitData) {
    let env = LatentEnv::smooth_path(3, 2, 3, seed).unwrap();
    let batch = sample_transitions(&env, &StartDistribution::uniform(3, 3), 300, seed).unwrap();
    let data = FitData::continuous(&batch, env.states(), 3, 2).unwrap();
    (env, data)
}

#[test]
fn gaussian_head_gradient_matches_finite_differences() {
    for inst in 0..5u64 {
        let (env, data) = gaussian_data(inst);
        let anchors = AnchorDataset::sample_from_env(&env, 5, inst);
        let hp = HyperParams {
            lambda_vol: 0.3,
            lambda_anchor: 0.5,
            tau: Some(5.0),
            seed: inst,
            gram_bandwidth: 1.5,
            ..HyperParams::default()
        };
        let model = initial_model(&data, 2, &hp).unwrap();
        let g = objective(&model, &data, &anchors, &hp, true).unwrap().1.unwrap();
        let fd = finite_difference(&model, &data, &anchors, &hp);
        let e = rel_err(&g, &fd);
        assert!(e <= 1e-4, "instance {inst}: relative error {e}");
    }
}

#[test]
fn zero_budget_returns_the_initialization() {
    let (env, data) = finite_setup(3, 2, 3, 300, 8);
    let hp = HyperParams {
        max_iters: 0,
        ..HyperParams::default()
    };
    let anchors = AnchorDataset::sample_from_env(&env, 4, 8);
    let init = initial_model(&data, 2, &hp).unwrap();
    let out = train(&data, &anchors, 2, &hp).unwrap();
    assert_eq!(out.model, init);
    assert_eq!(out.report.trajectory.len(), 1);
    assert_eq!(out.report.stop, StopReason::Budget);
}

#[test]
fn anchors_alone_fit_the_labeled_frequencies() {
    let (env, data) = finite_setup(3, 3, 3, 300, 9);
    let anchors = AnchorDataset::sample_from_env(&env, 40, 9);
    let hp = HyperParams {
        fit_weight: 0.0,
        lambda_vol: 0.0,
        lambda_pol: 0.0,
        lambda_anchor: 1.0,
        freeze_transitions: true,
        max_iters: 3000,
        ..HyperParams::default()
    };
    let mut init = truth_model(&env);
    init.policy = PolicyParams::zeros(3, 3, 3);
    let out = train_from(init.clone(), &data, &anchors, &hp).unwrap();
    assert_eq!(out.model.transitions, init.transitions);
    // supervised oracle: per anchored (o, e), the empirical label frequencies
    let mut freq = std::collections::BTreeMap::<(usize, usize), Vec<f64>>::new();
    for a in &anchors.anchors {
        freq.entry((a.o, a.e)).or_insert_with(|| vec![0.0; 3])[a.action] += 1.0;
    }
    for ((o, e), c) in freq {
        let tot: f64 = c.iter().sum();
        let p = out.model.policy.probs(o, e);
        let excess: f64 = c.iter().zip(&p).filter(|(c, _)| **c > 0.0).map(|(c, p)| c / tot * ((c / tot) / p).ln()).sum();
        assert!(excess <= 0.01, "({o}, {e}): excess cross-entropy {excess}");
    }
}

#[test]
fn accepted_steps_never_increase_the_objective() {
    let (env, data) = finite_setup(4, 2, 3, 2000, 10);
    let anchors = AnchorDataset::sample_from_env(&env, 6, 10);
    let hp = HyperParams {
        max_iters: 300,
        ..HyperParams::default()
    };
    let out = train(&data, &anchors, 2, &hp).unwrap();
    for w in out.report.trajectory.windows(2) {
        assert!(w[1].total <= w[0].total);
    }
    for s in 0..4 {
        for e in 0..3 {
            assert!((out.model.policy.probs(s, e).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
    let mut buf = Vec::new();
    out.report.write_csv(&mut buf).unwrap();
    assert!(String::from_utf8(buf).unwrap().starts_with("run,step,fit,vol,pol,anchor,total\nfinal,0,"));
}

#[test]
fn evaluation_absorbs_relabeling() {
    let (env, data) = finite_setup(4, 3, 4, 100, 11);
    let truth = truth_model(&env);
    let m0 = evaluate(&truth, &env).unwrap();
    assert!(m0.policy_tv_max < 1e-12 && m0.transition_error_max < 1e-12);
    let perm = [2, 0, 1];
    let pis: Vec<_> = (0..4).map(|s| env.policy(s).permute_rows(&perm)).collect();
    let ts: Vec<_> = (0..4).map(|s| env.transition_matrix(s).unwrap().permute_columns(&perm)).collect();
    let relabeled = Model::new(PolicyParams::from_matrices(&pis).unwrap(), TransitionParams::tabular_from_matrices(&ts).unwrap()).unwrap();
    let m1 = evaluate(&relabeled, &env).unwrap();
    assert!(m1.policy_tv_max < 1e-12 && m1.transition_error_max < 1e-12);
    let random = initial_model(&data, 3, &HyperParams::default()).unwrap();
    let m2 = evaluate(&random, &env).unwrap();
    assert!(m2.policy_tv_max.is_finite() && m2.transition_error_max > 0.0);
    let wrong_k = initial_model(&data, 2, &HyperParams::default()).unwrap();
    assert!(evaluate(&wrong_k, &env).is_err());
}

#[test]
fn training_recovers_an_identifiable_environment() {
    let (env, data) = finite_setup(6, 3, 5, 200_000, 2);
    let anchors = AnchorDataset::sample_from_env(&env, 30, 2);
    let hp = HyperParams { lambda_vol: 1e-3, restarts: 24, ..HyperParams::default() };
    let out = train(&data, &anchors, 3, &hp).unwrap();
    let m = evaluate(&out.model, &env).unwrap();
    assert!(m.policy_tv_max <= 0.1 && m.transition_error_max <= 0.1, "{m:?} stop {:?}", out.report.stop);
    assert_eq!(out.report.restart_per_state.len(), 6);
}

#[test]
fn per_state_selection_is_no_worse_than_any_single_restart() {
    let (env, data) = finite_setup(3, 2, 3, 20_000, 4);
    let anchors = AnchorDataset::sample_from_env(&env, 10, 4);
    let hp = HyperParams { lambda_vol: 1e-3, restarts: 4, ..HyperParams::default() };
    let best = train(&data, &anchors, 2, &hp).unwrap().report.final_terms.total;
    for r in 0..4 {
        let init = train::initial_model_for_restart(&data, 2, &hp, r).unwrap();
        let single = train_from(init, &data, &anchors, &hp).unwrap().report.final_terms.total;
        assert!(best <= single + 1e-12, "restart {r}: {best} > {single}");
    }
}

#[test]
fn dropping_the_policy_barrier_lets_demonstrators_collapse() {
    let inst = collapse_instance(3, 4, 20_000, 7).unwrap();
    let hp = HyperParams { freeze_transitions: true, lambda_vol: 0.0, lambda_anchor: 0.0, ..HyperParams::default() };
    let ab = policy_barrier_ablation(&inst.init, &inst.data, &AnchorDataset::default(), &hp).unwrap();
    assert!(ab.shows_collapse(), "{ab:?}");
    assert!(ab.without_barrier.min_logdet < ab.tau);
    assert_eq!(ab.with_barrier.stop, StopReason::Converged);
    assert_eq!(ab.without_barrier.stop, StopReason::Converged);
}

#[test]
fn hyperparameters_are_validated() {
    assert!(HyperParams::default().validate().is_ok());
    assert!(HyperParams { eps: 0.0, ..HyperParams::default() }.validate().is_err());
    assert!(HyperParams { lambda_vol: -1.0, ..HyperParams::default() }.validate().is_err());
    assert!(HyperParams { backtrack: 1.0, ..HyperParams::default() }.validate().is_err());
    let _ = DMatrix::<f64>::zeros(1, 1);
}

