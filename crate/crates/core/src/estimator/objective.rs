//! The penalized negative log-likelihood and its gradient.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::data::{FitData, Samples};
use super::params::{softmax_backward, Model, PolicyParams, TransitionParams};
use super::HyperParams;
use crate::align::AnchorDataset;
use crate::embedding::GaussianKernel;
use crate::error::{Error, Result};
use crate::linalg::{logdet_spd, spd_inverse};

/// Mixture densities below this are treated as zero.
pub const DENSITY_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Terms {
    pub fit: f64,
    pub vol: f64,
    pub pol: f64,
    pub anchor: f64,
    pub total: f64,
}

fn zero_density(index: usize, data: &FitData, s: usize, e: usize) -> Error {
    Error::ZeroDensity {
        index,
        o: data.states[s],
        e,
    }
}

fn check_shapes(model: &Model, data: &FitData) -> Result<()> {
    if model.policy.num_states != data.num_states() || model.policy.m != data.m {
        return Err(Error::shape(
            "model vs data",
            format!("{} states, m={}", data.num_states(), data.m),
            format!("{} states, m={}", model.policy.num_states, model.policy.m),
        ));
    }
    match (&model.transitions, &data.samples) {
        (TransitionParams::Tabular { n, .. }, Samples::Counts { n: dn, .. }) if n == dn => Ok(()),
        (TransitionParams::Gaussian { dim, .. }, Samples::Points { dim: dd, .. }) if dim == dd => Ok(()),
        _ => Err(Error::InvalidArgument("transition head does not match the data".into())),
    }
}

/// Gradient buffers: policy logits, and transition parameters in the same
/// layout as [`Model::flat`]. Tabular transition gradients are accumulated
/// w.r.t. probabilities and pushed through the softmax at the end.
struct Grad {
    policy: Vec<f64>,
    trans_prob: Vec<f64>,
    trans: Vec<f64>,
}

fn fit_term(model: &Model, data: &FitData, scale: f64, mut grad: Option<&mut Grad>) -> Result<f64> {
    let k = model.k();
    let m = data.m;
    let mut nll = 0.0;
    match (&model.transitions, &data.samples) {
        (TransitionParams::Tabular { n, .. }, Samples::Counts { counts, first, .. }) => {
            let n = *n;
            for s in 0..data.num_states() {
                let t = model.transitions.matrix(s).expect("tabular");
                for e in 0..m {
                    let pi = model.policy.probs(s, e);
                    let mut g_pi = vec![0.0; k];
                    for o in 0..n {
                        let c = counts[(s * m + e) * n + o];
                        if c == 0.0 {
                            continue;
                        }
                        let q: f64 = (0..k).map(|a| pi[a] * t[(o, a)]).sum();
                        if !(q >= DENSITY_FLOOR) {
                            return Err(zero_density(first[(s * m + e) * n + o], data, s, e));
                        }
                        nll -= c * q.ln();
                        if let Some(g) = grad.as_deref_mut() {
                            let w = scale * c / (q * data.total);
                            for a in 0..k {
                                g_pi[a] -= w * t[(o, a)];
                                g.trans_prob[(s * k + a) * n + o] -= w * pi[a];
                            }
                        }
                    }
                    if let Some(g) = grad.as_deref_mut() {
                        let start = model.policy.index(s, e, 0);
                        softmax_backward(&pi, &g_pi, &mut g.policy[start..start + k]);
                    }
                }
            }
        }
        (TransitionParams::Gaussian { dim, means, log_sigma, .. }, Samples::Points { points, .. }) => {
            let d = *dim as f64;
            let var = (2.0 * log_sigma).exp();
            let norm = -0.5 * d * (2.0 * std::f64::consts::PI).ln() - d * log_sigma;
            let mut logp = vec![0.0; k];
            for (s, e, x, idx) in points {
                let (s, e) = (*s, *e);
                let pi = model.policy.probs(s, e);
                for a in 0..k {
                    let mu = &means[(s * k + a) * dim..(s * k + a + 1) * dim];
                    let d2: f64 = x.iter().zip(mu).map(|(u, v)| (u - v) * (u - v)).sum();
                    logp[a] = pi[a].ln() + norm - d2 / (2.0 * var);
                }
                let top = logp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lq = top + logp.iter().map(|l| (l - top).exp()).sum::<f64>().ln();
                if !(lq >= DENSITY_FLOOR.ln()) {
                    return Err(zero_density(*idx, data, s, e));
                }
                nll -= lq;
                if let Some(g) = grad.as_deref_mut() {
                    let w = scale / data.total;
                    let start = model.policy.index(s, e, 0);
                    let ls_slot = g.trans.len() - 1;
                    for a in 0..k {
                        let r = (logp[a] - lq).exp();
                        g.policy[start + a] -= w * (r - pi[a]);
                        let base = (s * k + a) * dim;
                        let mut d2 = 0.0;
                        for i in 0..*dim {
                            let diff = x[i] - means[base + i];
                            d2 += diff * diff;
                            g.trans[base + i] -= w * r * diff / var;
                        }
                        g.trans[ls_slot] -= w * r * (d2 / var - d);
                    }
                }
            }
        }
        _ => return Err(Error::InvalidArgument("transition head does not match the data".into())),
    }
    Ok(nll / data.total)
}

/// `G(s)` of the model transitions at one state.
pub fn model_gram(transitions: &TransitionParams, s: usize, bandwidth: f64) -> Result<DMatrix<f64>> {
    match transitions {
        TransitionParams::Tabular { .. } => {
            let t = transitions.matrix(s).expect("tabular");
            Ok(t.transpose() * t)
        }
        TransitionParams::Gaussian { k, dim, log_sigma, .. } => {
            let kern = GaussianKernel::new(bandwidth, *dim)?;
            let var = (2.0 * log_sigma).exp();
            Ok(DMatrix::from_fn(*k, *k, |a, b| {
                kern.gaussian_pair(transitions.mean(s, a).unwrap(), var, transitions.mean(s, b).unwrap(), var)
            }))
        }
    }
}

fn vol_term(transitions: &TransitionParams, data: &FitData, eps: f64, bandwidth: f64, scale: f64, mut grad: Option<&mut Grad>) -> Result<f64> {
    let k = transitions.k();
    let mut total = 0.0;
    for s in 0..data.num_states() {
        let w = data.state_weights[s];
        if w == 0.0 {
            continue;
        }
        let g = model_gram(transitions, s, bandwidth)?;
        let f = &g + DMatrix::identity(k, k) * eps;
        let ld = logdet_spd(&f).map_err(|_| Error::Numerical(format!("gram at state {} is not positive definite", data.states[s])))?;
        total += w * ld;
        let Some(gr) = grad.as_deref_mut() else { continue };
        let finv = spd_inverse(&f)?;
        let c = scale * w;
        match transitions {
            TransitionParams::Tabular { n, .. } => {
                let t = transitions.matrix(s).expect("tabular");
                let dt = &t * &finv * (2.0 * c);
                for a in 0..k {
                    for o in 0..*n {
                        gr.trans_prob[(s * k + a) * n + o] += dt[(o, a)];
                    }
                }
            }
            TransitionParams::Gaussian { dim, log_sigma, .. } => {
                let var = (2.0 * log_sigma).exp();
                let sh = bandwidth * bandwidth + 2.0 * var;
                let d = *dim as f64;
                let ls_slot = gr.trans.len() - 1;
                for a in 0..k {
                    let mu_a = transitions.mean(s, a).unwrap();
                    for b in 0..k {
                        let mu_b = transitions.mean(s, b).unwrap();
                        let d2: f64 = mu_a.iter().zip(mu_b).map(|(u, v)| (u - v) * (u - v)).sum();
                        let dg_ds = g[(a, b)] * (-d / (2.0 * sh) + d2 / (2.0 * sh * sh));
                        gr.trans[ls_slot] += c * finv[(a, b)] * dg_ds * 4.0 * var;
                        if a == b {
                            continue;
                        }
                        // G_ab and G_ba both move with mu_a
                        let base = (s * k + a) * dim;
                        for i in 0..*dim {
                            gr.trans[base + i] += c * 2.0 * finv[(a, b)] * g[(a, b)] * (-(mu_a[i] - mu_b[i]) / sh);
                        }
                    }
                }
            }
        }
    }
    Ok(total)
}

fn pol_term(policy: &PolicyParams, data: &FitData, eps: f64, tau: f64, scale: f64, mut grad: Option<&mut Grad>) -> Result<f64> {
    let k = policy.k;
    let mut total = 0.0;
    for s in 0..data.num_states() {
        let w = data.state_weights[s];
        if w == 0.0 {
            continue;
        }
        let pi = policy.matrix(s);
        let mm = &pi * pi.transpose() + DMatrix::identity(k, k) * eps;
        let h = tau - logdet_spd(&mm)?;
        if !(h > 0.0) {
            continue;
        }
        total += w * h;
        let Some(gr) = grad.as_deref_mut() else { continue };
        let dpi = spd_inverse(&mm)? * &pi * (-2.0 * scale * w);
        for e in 0..policy.m {
            let p: Vec<f64> = pi.column(e).iter().copied().collect();
            let gp: Vec<f64> = dpi.column(e).iter().copied().collect();
            let start = policy.index(s, e, 0);
            softmax_backward(&p, &gp, &mut gr.policy[start..start + k]);
        }
    }
    Ok(total)
}

fn anchor_term(policy: &PolicyParams, anchors: &AnchorDataset, data: &FitData, scale: f64, mut grad: Option<&mut Grad>) -> Result<f64> {
    if anchors.is_empty() {
        return Err(Error::Empty("anchors"));
    }
    let r = anchors.len() as f64;
    let mut loss = 0.0;
    for a in &anchors.anchors {
        let s = data
            .state_index(a.o)
            .ok_or_else(|| Error::InvalidArgument(format!("anchor state {} is not in the data", a.o)))?;
        if a.e >= policy.m || a.action >= policy.k {
            return Err(Error::InvalidArgument(format!("anchor {a:?} out of range")));
        }
        let p = policy.probs(s, a.e);
        loss -= p[a.action].max(DENSITY_FLOOR).ln();
        if let Some(gr) = grad.as_deref_mut() {
            let start = policy.index(s, a.e, 0);
            for b in 0..policy.k {
                let target = if b == a.action { 1.0 } else { 0.0 };
                gr.policy[start + b] -= scale * (target - p[b]) / r;
            }
        }
    }
    Ok(loss / r)
}

/// `-(1/N) sum log sum_a pi(a|o,e) p(o'|o,a)`.
pub fn nll_fit(model: &Model, data: &FitData) -> Result<f64> {
    check_shapes(model, data)?;
    fit_term(model, data, 0.0, None)
}

/// Data-weighted mean of `log det(G(o) + eps I)`.
pub fn reg_vol(transitions: &TransitionParams, data: &FitData, eps: f64, bandwidth: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument("eps must be positive".into()));
    }
    vol_term(transitions, data, eps, bandwidth, 0.0, None)
}

/// Data-weighted mean of `[tau - log det(Pi Pi' + eps I)]_+`.
pub fn reg_pol(policy: &PolicyParams, data: &FitData, eps: f64, tau: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument("eps must be positive".into()));
    }
    pol_term(policy, data, eps, tau, 0.0, None)
}

/// Mean negative log-probability of the labeled actions.
pub fn anchor_loss(policy: &PolicyParams, anchors: &AnchorDataset, data: &FitData) -> Result<f64> {
    anchor_term(policy, anchors, data, 0.0, None)
}

/// All terms, and the gradient w.r.t. [`Model::flat`] when requested.
pub fn objective(model: &Model, data: &FitData, anchors: &AnchorDataset, hp: &HyperParams, with_grad: bool) -> Result<(Terms, Option<Vec<f64>>)> {
    check_shapes(model, data)?;
    let k = model.k();
    let tau = hp.tau_for(k);
    let mut grad = with_grad.then(|| Grad {
        policy: vec![0.0; model.policy.logits.len()],
        trans_prob: vec![0.0; if model.transitions.is_tabular() { model.transitions.len() } else { 0 }],
        trans: vec![0.0; model.transitions.len()],
    });

    let mut terms = Terms::default();
    if hp.fit_weight > 0.0 {
        terms.fit = fit_term(model, data, hp.fit_weight, grad.as_mut())?;
    }
    if hp.lambda_vol > 0.0 {
        terms.vol = vol_term(&model.transitions, data, hp.eps, hp.gram_bandwidth, hp.lambda_vol, grad.as_mut())?;
    }
    if hp.lambda_pol > 0.0 {
        terms.pol = pol_term(&model.policy, data, hp.eps, tau, hp.lambda_pol, grad.as_mut())?;
    }
    if hp.lambda_anchor > 0.0 {
        terms.anchor = anchor_term(&model.policy, anchors, data, hp.lambda_anchor, grad.as_mut())?;
    } else if !anchors.is_empty() {
        terms.anchor = anchor_term(&model.policy, anchors, data, 0.0, None)?;
    }
    terms.total = hp.fit_weight * terms.fit + hp.lambda_vol * terms.vol + hp.lambda_pol * terms.pol + hp.lambda_anchor * terms.anchor;

    let flat = grad.map(|mut g| {
        if let TransitionParams::Tabular { num_states, k, n, .. } = &model.transitions {
            for s in 0..*num_states {
                let t = model.transitions.matrix(s).expect("tabular");
                for a in 0..*k {
                    let start = (s * k + a) * n;
                    let p: Vec<f64> = t.column(a).iter().copied().collect();
                    softmax_backward(&p, &g.trans_prob[start..start + n], &mut g.trans[start..start + n]);
                }
            }
        }
        let mut x = g.policy;
        x.extend(g.trans);
        x
    });
    Ok((terms, flat))
}

/// Relative error `||g - g_fd|| / max(||g||, ||g_fd||)` between the analytic
/// gradient and central differences with step `h`.
pub fn gradient_check(model: &Model, data: &FitData, anchors: &AnchorDataset, hp: &HyperParams, h: f64) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument("finite-difference step must be positive".into()));
    }
    let grad = objective(model, data, anchors, hp, true)?.1.expect("gradient requested");
    let x = model.flat();
    let mut probe = model.clone();
    let mut fd = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let mut y = x.clone();
        y[i] = x[i] + h;
        probe.set_flat(&y);
        let up = objective(&probe, data, anchors, hp, false)?.0.total;
        y[i] = x[i] - h;
        probe.set_flat(&y);
        let down = objective(&probe, data, anchors, hp, false)?.0.total;
        fd.push((up - down) / (2.0 * h));
    }
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let diff: Vec<f64> = grad.iter().zip(&fd).map(|(a, b)| a - b).collect();
    Ok(norm(&diff) / norm(&grad).max(norm(&fd)).max(f64::MIN_POSITIVE))
}
