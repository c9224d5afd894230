//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the process exits nonzero if any fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use latentact_core::align::{align_statewise, inconsistent_edges, resolve_anchor, AnchorDataset, StateGraph, StatewiseFactorization};
use latentact_core::diversity::{diversity_report, mc_scattered_check, DiversityOptions, Verdict, CONE_TOL_EXACT};
use latentact_core::embedding::{continuous_minvol_factorize, ComponentDictionary, Embedder, FiniteDeltaKernel, GaussianKernel, Kernel, TransitionDistribution};
use latentact_core::env::{build_counterexample, estimate_conditionals, sample_transitions, LatentEnv, PolicyFamily, StartDistribution};
use latentact_core::estimator::{
    collapse_instance, evaluate, initial_model, objective, policy_barrier_ablation, train, FitData, HyperParams,
};
use latentact_core::linalg::{invert_permutation, sym_eigenvalues, tv_distance};
use latentact_core::nmf::{best_permutation_error, check_det_bound, check_no_scaling, minvol_factorize, rescale_pair, SolverOptions};
use latentact_core::rng;
use latentact_core::StochasticMatrix;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within(elapsed: Duration, limit: Option<Duration>) -> bool {
    limit.is_none_or(|l| elapsed < l)
}

/// Best-permutation TV error of recovered factors: columns of `T` are laws
/// over next observations, columns of `Pi` are laws over actions.
fn factor_tv(t: &DMatrix<f64>, t_ref: &DMatrix<f64>, pi: &DMatrix<f64>, pi_ref: &DMatrix<f64>) -> (f64, f64) {
    let perm = best_permutation_error(t, t_ref, pi, pi_ref).unwrap().perm;
    let col = |m: &DMatrix<f64>, j: usize| m.column(j).iter().copied().collect::<Vec<_>>();
    let t_err = perm
        .iter()
        .enumerate()
        .map(|(a, &b)| tv_distance(&col(t, a), &col(t_ref, b)))
        .fold(0.0, f64::max);
    let mut aligned = DMatrix::zeros(pi.nrows(), pi.ncols());
    for (a, &b) in perm.iter().enumerate() {
        aligned.set_row(b, &pi.row(a));
    }
    let pi_err = (0..pi.ncols()).map(|e| tv_distance(&col(&aligned, e), &col(pi_ref, e))).fold(0.0, f64::max);
    (t_err, pi_err)
}

fn counterexample() -> Outcome {
    let c = build_counterexample();
    let (r1, r2) = c.residuals();
    let gap = c.permutation_gap();
    outcome(r1 <= 1e-12 && r2 <= 1e-12 && gap >= 0.25, format!("residuals {r1:.1e}, {r2:.1e}; permutation gap {gap:.3}"))
}

fn exact_recovery() -> Outcome {
    let (mut ok_runs, mut feasible) = (0, true);
    let mut worst_residual = 0.0f64;
    for seed in 0..50u64 {
        let env = LatentEnv::random_finite(6, 3, 5, PolicyFamily::Separable, seed).unwrap();
        let mut run_ok = true;
        for s in 0..env.num_states() {
            let p = env.observable(s).unwrap();
            let opts = SolverOptions { seed, ..SolverOptions::exact(3) };
            let res = minvol_factorize(&p, &opts).unwrap();
            worst_residual = worst_residual.max(res.residual);
            feasible &= res.residual <= 1e-8;
            let m = best_permutation_error(
                res.transitions.as_matrix(),
                env.transition_matrix(s).unwrap().as_matrix(),
                res.policies.as_matrix(),
                env.policy(s).as_matrix(),
            )
            .unwrap();
            run_ok &= m.error <= 1e-5;
        }
        ok_runs += run_ok as usize;
    }
    outcome(ok_runs >= 48 && feasible, format!("{ok_runs}/50 runs within 1e-5; worst residual {worst_residual:.1e}"))
}

fn sampled_env() -> (LatentEnv, latentact_core::env::TrajectoryBatch) {
    let env = LatentEnv::random_finite(6, 3, 5, PolicyFamily::Separable, 0).unwrap();
    let batch = sample_transitions(&env, &StartDistribution::uniform(6, 5), 200_000, 0).unwrap();
    (env, batch)
}

fn sampled_recovery() -> Outcome {
    let (env, batch) = sampled_env();
    let emp = estimate_conditionals(&batch, 6, env.states(), 5).unwrap();
    let (mut t_worst, mut pi_worst) = (0.0f64, 0.0f64);
    for s in 0..env.num_states() {
        let est = emp.estimate(s);
        let (p, cols) = est.observed_matrix().unwrap();
        assert_eq!(cols.len(), 5, "every demonstrator observed at state {s}");
        let res = minvol_factorize(&p, &SolverOptions::sampled(3, est.min_observed_count())).unwrap();
        let (t_err, pi_err) = factor_tv(
            res.transitions.as_matrix(),
            env.transition_matrix(s).unwrap().as_matrix(),
            res.policies.as_matrix(),
            env.policy(s).as_matrix(),
        );
        t_worst = t_worst.max(t_err);
        pi_worst = pi_worst.max(pi_err);
    }
    outcome(t_worst <= 0.05 && pi_worst <= 0.05, format!("max TV: T {t_worst:.4}, Pi {pi_worst:.4}"))
}

fn det_bound() -> Outcome {
    let mut r = rng::stream(4, "acceptance-det", 0);
    let mut extra = DMatrix::zeros(3, 5);
    extra.view_mut((0, 0), (3, 3)).fill_with_identity();
    extra.view_mut((0, 3), (3, 2)).copy_from(StochasticMatrix::random(3, 2, &mut r).as_matrix());
    let pi_star = StochasticMatrix::new(extra).unwrap();
    let (mut accepted, mut tried, mut near, mut all_ok) = (0, 0, 0, true);
    let mut max_det = 0.0f64;
    while accepted < 1000 {
        tried += 1;
        let mut perm: Vec<usize> = (0..3).collect();
        perm.shuffle(&mut r);
        let t: f64 = if r.random_bool(0.2) { 0.0 } else { 10f64.powf(r.random_range(-12.0..0.0)) };
        let mut a = DMatrix::from_fn(3, 3, |i, j| if perm[j] == i { 1.0 - t } else { 0.0 });
        for j in 0..3 {
            let raw: Vec<f64> = (0..3).map(|_| r.random_range(-0.5..1.5)).collect();
            let s: f64 = raw.iter().sum();
            for i in 0..3 {
                a[(i, j)] += t * raw[i] / s;
            }
        }
        let rep = check_det_bound(&a, &pi_star).unwrap();
        if !rep.feasible {
            continue;
        }
        accepted += 1;
        max_det = max_det.max(rep.abs_det);
        all_ok &= rep.abs_det <= 1.0 + 1e-10;
        if rep.abs_det > 1.0 - 1e-8 {
            near += 1;
            all_ok &= rep.distance_to_permutation.is_some_and(|d| d <= 1e-6);
        }
    }
    outcome(all_ok, format!("{accepted} feasible of {tried} drawn; max |det| {max_det:.12}; {near} near-unit samples all near permutations"))
}

fn no_scaling() -> Outcome {
    let mut r = rng::stream(5, "acceptance-scaling", 0);
    let (mut stochastic, mut worst, mut nontrivial) = (0, 0.0f64, 0);
    for _ in 0..500 {
        let k = r.random_range(2..=4);
        let t = StochasticMatrix::random(r.random_range(k..=6), k, &mut r).into_inner();
        let pi = StochasticMatrix::random(k, r.random_range(k..=6), &mut r).into_inner();
        let d = nalgebra::DVector::from_fn(k, |_, _| if r.random_bool(0.8) { 1.0 } else { r.random_range(0.5..2.0) });
        let (tp, pip) = rescale_pair(&t, &pi, &d);
        let check = check_no_scaling(&t, &tp, &pi, &pip);
        if check.all_stochastic {
            stochastic += 1;
            worst = worst.max(check.max_deviation_from_identity);
        } else {
            nontrivial += (check.max_deviation_from_identity > 0.0) as usize;
        }
    }
    outcome(
        stochastic > 0 && worst <= 1e-12,
        format!("{stochastic}/500 all-stochastic, max |D - I| {worst:.1e}; {nontrivial} rescaled pairs leave the simplex"),
    )
}

fn normal(r: &mut rng::StreamRng) -> f64 {
    StandardNormal.sample(r)
}

fn embedding() -> Outcome {
    let mut r = rng::stream(6, "acceptance-embedding", 0);
    let mut worst_rel = 0.0f64;
    let mut min_eig = f64::INFINITY;
    for _ in 0..20 {
        let dim = r.random_range(1..=3);
        let h = r.random_range(0.5..2.0);
        let kernel = GaussianKernel::new(h, dim).unwrap();
        let draw = |r: &mut rng::StreamRng| {
            TransitionDistribution::gaussian((0..dim).map(|_| r.random_range(-0.5..0.5)).collect(), r.random_range(0.05..0.5))
        };
        let (p, q) = (draw(&mut r), draw(&mut r));
        let closed = kernel.inner(&p, &q).unwrap();
        let (mp, vp) = p.as_gaussian().unwrap();
        let (mq, vq) = q.as_gaussian().unwrap();
        let mut acc = 0.0;
        let n = 100_000;
        for _ in 0..n {
            let x: Vec<f64> = mp.iter().map(|m| m + vp.sqrt() * normal(&mut r)).collect();
            let y: Vec<f64> = mq.iter().map(|m| m + vq.sqrt() * normal(&mut r)).collect();
            acc += kernel.eval(&x, &y);
        }
        worst_rel = worst_rel.max((acc / n as f64 - closed).abs() / closed);
        let set: Vec<_> = (0..6).map(|_| draw(&mut r)).collect();
        let g = Embedder::new(Box::new(kernel)).gram_matrix(&set).unwrap();
        min_eig = min_eig.min(sym_eigenvalues(&g).min());
    }
    let mut worst_equiv = 0.0f64;
    for seed in 0..5u64 {
        let env = LatentEnv::random_finite(5, 3, 5, PolicyFamily::Separable, 100 + seed).unwrap();
        let p = env.observable(0).unwrap();
        let kernel = FiniteDeltaKernel { size: 5 };
        let atoms = ComponentDictionary::atoms(5, &kernel).unwrap();
        min_eig = min_eig.min(sym_eigenvalues(atoms.gram()).min());
        let e = Embedder::with_dictionary(Box::new(kernel), atoms.components().to_vec()).unwrap();
        let obs: Vec<_> = (0..5)
            .map(|j| TransitionDistribution::DictMixture { weights: p.column(j).iter().copied().collect() })
            .collect();
        let opts = SolverOptions { seed, ..SolverOptions::exact(3) };
        let cont = continuous_minvol_factorize(&e, &obs, &opts).unwrap();
        let fin = minvol_factorize(&p, &opts).unwrap();
        worst_equiv = worst_equiv
            .max(cont.coordinates.max_abs_diff(&fin.transitions))
            .max(cont.policies.max_abs_diff(&fin.policies));
    }
    outcome(
        worst_rel <= 2e-2 && min_eig >= -1e-9 && worst_equiv <= 1e-8,
        format!("MC rel err {worst_rel:.2e}; min Gram eigenvalue {min_eig:.1e}; delta-kernel vs finite {worst_equiv:.1e}"),
    )
}

fn dictionary_recovery() -> Outcome {
    let env = LatentEnv::gaussian_dictionary(3, 2, 8, 3, 5, 7).unwrap();
    let e = Embedder::with_dictionary(Box::new(GaussianKernel::new(1.0, 2).unwrap()), env.dictionary().unwrap().to_vec()).unwrap();
    let mut worst = 0.0f64;
    for s in 0..env.num_states() {
        let res = continuous_minvol_factorize(&e, &env.dictionary_observables(s).unwrap(), &SolverOptions::exact(3)).unwrap();
        let m = best_permutation_error(
            res.coordinates.as_matrix(),
            env.dictionary_coordinates(s).unwrap().as_matrix(),
            res.policies.as_matrix(),
            env.policy(s).as_matrix(),
        )
        .unwrap();
        worst = worst.max(m.error);
    }
    outcome(worst <= 1e-4, format!("max coordinate error {worst:.1e} over {} states", env.num_states()))
}

fn planted_shuffles(n: usize, k: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut r = rng::stream(seed, "acceptance-shuffle", 0);
    (0..n)
        .map(|_| {
            let mut p: Vec<usize> = (0..k).collect();
            p.shuffle(&mut r);
            p
        })
        .collect()
}

/// True label to canonical label at state `i` under the planted shuffle.
fn true_to_canonical(perms: &std::collections::BTreeMap<usize, Vec<usize>>, planted: &[Vec<usize>], i: usize) -> Vec<usize> {
    invert_permutation(&planted[i]).iter().map(|&c| perms[&i][c]).collect()
}

fn global_alignment() -> Outcome {
    let n = 50;
    let env = LatentEnv::smooth_path(n, 3, 5, 8).unwrap();
    let e = Embedder::new(Box::new(GaussianKernel::new(1.0, 2).unwrap()));
    let truth = StatewiseFactorization::from_env(&env, &e).unwrap();
    let planted = planted_shuffles(n, 3, 8);
    let facts = truth.shuffled(&planted).unwrap();
    let graph = StateGraph::path((0..n).collect()).unwrap();
    let mut a = align_statewise(&facts, &graph, 0, &e).unwrap();
    let g = true_to_canonical(&a.permutations, &planted, 0);
    let consistent = (0..n).all(|i| true_to_canonical(&a.permutations, &planted, i) == g);
    let certified = a.certificate_ratio < 1.0 && inconsistent_edges(&facts, &graph, &a, &e).unwrap().is_empty();
    let anchors = AnchorDataset::sample_from_env(&env, 20, 8);
    let res = resolve_anchor(&facts.relabel(&a).unwrap(), &anchors).unwrap();
    let anchor_ok = res.sigma == g && res.confidence > 0.0;
    a.apply_anchor(&res);
    let exact = facts.relabel(&a).unwrap() == truth;

    let mut edges: Vec<(usize, usize)> = (0..24).map(|i| (i, i + 1)).collect();
    edges.extend((25..49).map(|i| (i, i + 1)));
    let split = align_statewise(&facts, &StateGraph::new((0..n).collect(), edges).unwrap(), 0, &e).unwrap();
    let mut comps: Vec<usize> = split.components.values().copied().collect();
    comps.dedup();
    let per_component = [(0..25, 0), (25..50, 25)]
        .into_iter()
        .all(|(range, rep)| range.into_iter().all(|i| true_to_canonical(&split.permutations, &planted, i) == true_to_canonical(&split.permutations, &planted, rep)));
    let two = !split.global && comps.len() == 2 && per_component;
    outcome(
        consistent && certified && anchor_ok && exact && two,
        format!(
            "consistent {consistent}, certificate ratio {:.3}, anchor sigma {:?} confidence {:.2}, exact after anchoring {exact}, two-component split {two}",
            a.certificate_ratio, res.sigma, res.confidence
        ),
    )
}

/// Relative error between the analytic gradient and central differences.
fn gradient_error(seed: u64) -> f64 {
    let mut r = rng::stream(seed, "acceptance-grad", 0);
    let (n, k, m) = (r.random_range(2..=4), r.random_range(2..=3), r.random_range(2..=4));
    let family = if k <= m { PolicyFamily::Separable } else { PolicyFamily::Random };
    let env = LatentEnv::random_finite(n, k, m, family, seed).unwrap();
    let batch = sample_transitions(&env, &StartDistribution::uniform(n, m), 500, seed).unwrap();
    let data = FitData::finite(&batch, env.states(), m, n).unwrap();
    let anchors = AnchorDataset::sample_from_env(&env, 5, seed);
    let hp = HyperParams { lambda_vol: 0.1, lambda_anchor: 0.1, tau: Some(5.0), seed, init_scale: 1.0, ..HyperParams::default() };
    let mut model = initial_model(&data, k, &hp).unwrap();
    let x = model.flat();
    let grad = objective(&model, &data, &anchors, &hp, true).unwrap().1.unwrap();
    let h = 1e-6;
    let mut fd = vec![0.0; x.len()];
    for i in 0..x.len() {
        let mut y = x.clone();
        y[i] = x[i] + h;
        model.set_flat(&y);
        let up = objective(&model, &data, &anchors, &hp, false).unwrap().0.total;
        y[i] = x[i] - h;
        model.set_flat(&y);
        let down = objective(&model, &data, &anchors, &hp, false).unwrap().0.total;
        fd[i] = (up - down) / (2.0 * h);
    }
    let diff: f64 = grad.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    diff / norm(&grad).max(norm(&fd)).max(1e-12)
}

fn estimator() -> Outcome {
    let (env, batch) = sampled_env();
    let data = FitData::finite(&batch, env.states(), 5, 6).unwrap();
    let anchors = AnchorDataset::sample_from_env(&env, 30, 0);
    let hp = HyperParams { lambda_vol: 1e-3, restarts: 24, ..HyperParams::default() };
    let out = train(&data, &anchors, 3, &hp).unwrap();
    let metrics = evaluate(&out.model, &env).unwrap();
    let recovered = metrics.policy_tv_max <= 0.1 && metrics.transition_error_max <= 0.1;

    let grad_worst = (0..20u64).map(gradient_error).fold(0.0, f64::max);

    let inst = collapse_instance(3, 4, 20_000, 7).unwrap();
    let hp_ab = HyperParams { freeze_transitions: true, lambda_vol: 0.0, lambda_anchor: 0.0, ..HyperParams::default() };
    let ab = policy_barrier_ablation(&inst.init, &inst.data, &AnchorDataset::default(), &hp_ab).unwrap();
    outcome(
        recovered && grad_worst <= 1e-4 && ab.shows_collapse(),
        format!(
            "TV pi {:.3}, T {:.3}; gradient rel err {grad_worst:.1e}; log-det without barrier {:.2} < with {:.2}, R_pol with barrier {}",
            metrics.policy_tv_max, metrics.transition_error_max, ab.without_barrier.min_logdet, ab.with_barrier.min_logdet, ab.with_barrier.r_pol
        ),
    )
}

fn diversity_audit() -> Outcome {
    let opts = DiversityOptions::default();
    let verdict = |env: &LatentEnv| {
        let p = env.observable(0).unwrap();
        diversity_report(p.as_matrix(), env.policy(0), env.k(), &opts).unwrap().verdict
    };
    let single = (0..5u64).all(|s| verdict(&LatentEnv::random_finite(5, 3, 1, PolicyFamily::Random, s).unwrap()) == Verdict::Violated);
    let identity = (0..5u64).all(|s| verdict(&LatentEnv::random_finite(5, 3, 3, PolicyFamily::Separable, s).unwrap()) == Verdict::CertifiedSufficient);
    let uniform = (0..5u64).all(|s| {
        let v = verdict(&LatentEnv::random_finite(5, 3, 4, PolicyFamily::Uniform, s).unwrap());
        matches!(v, Verdict::Violated | Verdict::Inconclusive)
    });
    let mut r = rng::stream(10, "acceptance-diversity", 0);
    let mut monotone = 0;
    for trial in 0..200u64 {
        let m = r.random_range(3..=6);
        let pi = StochasticMatrix::random(3, m, &mut r);
        let extra = StochasticMatrix::random(3, 1, &mut r);
        let mut wider = pi.as_matrix().clone().insert_column(m, 0.0);
        wider.set_column(m, &extra.as_matrix().column(0));
        let wider = StochasticMatrix::new(wider).unwrap();
        let before = mc_scattered_check(&pi, 300, trial, CONE_TOL_EXACT).unwrap();
        let after = mc_scattered_check(&wider, 300, trial, CONE_TOL_EXACT).unwrap();
        monotone += (after >= before) as usize;
    }
    outcome(
        single && identity && uniform && monotone == 200,
        format!("m=1 violated {single}; identity block certified {identity}; uniform never certified {uniform}; monotone {monotone}/200"),
    )
}

fn main() -> ExitCode {
    let criteria: Vec<(u32, &str, Option<u64>, fn() -> Outcome)> = vec![
        (1, "non-identifiability counterexample", Some(1), counterexample),
        (2, "exact recovery on 50 environments", Some(60), exact_recovery),
        (3, "recovery from sampled transitions", Some(120), sampled_recovery),
        (4, "determinant bound", None, det_bound),
        (5, "no diagonal rescaling", None, no_scaling),
        (6, "kernel embedding", None, embedding),
        (7, "gaussian dictionary recovery", Some(60), dictionary_recovery),
        (8, "statewise alignment and anchors", None, global_alignment),
        (9, "penalized estimator", None, estimator),
        (10, "diversity audit", None, diversity_audit),
    ];
    let mut failed = 0;
    for (id, name, limit, run) in criteria {
        let start = Instant::now();
        let out = run();
        let elapsed = start.elapsed();
        let limit = limit.map(Duration::from_secs);
        let pass = out.pass && within(elapsed, limit);
        failed += (!pass) as usize;
        let budget = limit.map_or(String::new(), |l| format!(" (limit {}s)", l.as_secs()));
        println!(
            "criterion {id:>2} {}: {name}: {} [{:.2}s{budget}]",
            if pass { "PASS" } else { "FAIL" },
            out.detail,
            elapsed.as_secs_f64()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
