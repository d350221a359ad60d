//! Exact gradients of occupancy functionals with respect to the policy
//! parameters `theta[g, h, x] = pi^g_h(a=1 | x)`.
//!
//! Every quantity the solver touches is built from three per-step linear
//! statistics of the occupancy measure:
//!
//! - `accept[g, h]      = P(a_h = 1)`
//! - `qual_accept[g, h] = P(a_h = 1, y_h = 1)`
//! - `qual[g, h]        = P(y_h = 1)`
//!
//! plus the population reward. A smooth function of these statistics is
//! differentiated by pushing its partial derivatives into per-step weights
//! `w_h(s, a)` and running one backward (adjoint) pass per group:
//!
//! ```text
//! Q_h(s,a) = w_h(s,a) + sum_s' p(s'|s,a) V_{h+1}(s')
//! V_h(s)   = sum_a pi_h(a|x) Q_h(s,a)
//! dF/dtheta[g,h,x] = sum_y mu_h(x,y) (Q_h((x,y),1) - Q_h((x,y),0))
//! ```
//!
//! where `mu_h` is the state distribution from the forward pass.

use alloc::vec;
use alloc::vec::Vec;

use crate::mdp::PlanningModel;
use crate::ACTIONS;

/// Per-group, per-step statistics plus the forward state distributions.
#[derive(Debug, Clone)]
pub struct Forward {
    pub groups: usize,
    pub horizon: usize,
    pub states: usize,
    /// `mu[(g * H + h) * S + s]`
    pub mu: Vec<f64>,
    pub accept: Vec<f64>,
    pub qual_accept: Vec<f64>,
    pub qual: Vec<f64>,
    /// `sum_h R_h`
    pub objective: f64,
}

impl Forward {
    #[inline]
    pub fn at(&self, group: usize, h: usize) -> usize {
        group * self.horizon + h
    }
}

/// Partial derivatives of a scalar function with respect to the statistics
/// in [`Forward`], plus the weight on the reward objective.
#[derive(Debug, Clone)]
pub struct Sensitivity {
    pub objective: f64,
    pub accept: Vec<f64>,
    pub qual_accept: Vec<f64>,
    pub qual: Vec<f64>,
}

impl Sensitivity {
    pub fn zeros(groups: usize, horizon: usize) -> Self {
        let n = groups * horizon;
        Self {
            objective: 0.0,
            accept: vec![0.0; n],
            qual_accept: vec![0.0; n],
            qual: vec![0.0; n],
        }
    }
}

/// Forward pass over flat parameters laid out like [`crate::Policy::params`].
pub fn forward(model: &PlanningModel, theta: &[f64]) -> Forward {
    let space = model.space;
    let (horizon, states, features) = (space.horizon(), space.states(), space.features());
    let groups = model.group_count();
    let mut mu = vec![0.0; groups * horizon * states];
    let mut accept = vec![0.0; groups * horizon];
    let mut qual_accept = vec![0.0; groups * horizon];
    let mut qual = vec![0.0; groups * horizon];
    let mut objective = 0.0;
    for g in 0..groups {
        let kernel = &model.kernels[g];
        let reward = &model.rewards[g];
        let weight = model.proportions[g];
        mu[g * horizon * states..(g * horizon + 1) * states].copy_from_slice(kernel.initial());
        for h in 0..horizon {
            let base = (g * horizon + h) * states;
            let i = g * horizon + h;
            let (mut m, mut n, mut d, mut r) = (0.0, 0.0, 0.0, 0.0);
            let mut next = if h + 1 < horizon { Some(vec![0.0; states]) } else { None };
            for s in 0..states {
                let p1 = theta[i * features + s / 2];
                let ms = mu[base + s];
                let r1 = ms * p1;
                let r0 = ms * (1.0 - p1);
                m += r1;
                if s % 2 == 1 {
                    n += r1;
                    d += ms;
                }
                r += r0 * reward[s * ACTIONS] + r1 * reward[s * ACTIONS + 1];
                if let Some(next) = next.as_mut() {
                    for (a, w) in [(0, r0), (1, r1)] {
                        if w != 0.0 {
                            for (nv, p) in next.iter_mut().zip(kernel.row(s, a)) {
                                *nv += w * p;
                            }
                        }
                    }
                }
            }
            accept[i] = m;
            qual_accept[i] = n;
            qual[i] = d;
            objective += weight * r;
            if let Some(next) = next {
                mu[base + states..base + 2 * states].copy_from_slice(&next);
            }
        }
    }
    Forward {
        groups,
        horizon,
        states,
        mu,
        accept,
        qual_accept,
        qual,
        objective,
    }
}

/// Gradient of `sens.objective * J + sum sens.stat * stat` with respect to theta.
pub fn backward(model: &PlanningModel, theta: &[f64], fwd: &Forward, sens: &Sensitivity) -> Vec<f64> {
    let (horizon, states) = (fwd.horizon, fwd.states);
    let features = states / 2;
    let mut grad = vec![0.0; theta.len()];
    let mut v_next = vec![0.0; states];
    let mut v_now = vec![0.0; states];
    let mut q = vec![0.0; states * ACTIONS];
    for g in 0..fwd.groups {
        let kernel = &model.kernels[g];
        let reward = &model.rewards[g];
        let rw = sens.objective * model.proportions[g];
        v_next.iter_mut().for_each(|v| *v = 0.0);
        for h in (0..horizon).rev() {
            let i = fwd.at(g, h);
            let (wa, wn, wd) = (sens.accept[i], sens.qual_accept[i], sens.qual[i]);
            for s in 0..states {
                let qualified = s % 2 == 1;
                for a in 0..ACTIONS {
                    let mut w = rw * reward[s * ACTIONS + a];
                    if a == 1 {
                        w += wa;
                        if qualified {
                            w += wn;
                        }
                    }
                    if qualified {
                        w += wd;
                    }
                    let cont: f64 = if h + 1 < horizon {
                        kernel.row(s, a).iter().zip(&v_next).map(|(p, v)| p * v).sum()
                    } else {
                        0.0
                    };
                    q[s * ACTIONS + a] = w + cont;
                }
            }
            let mu = &fwd.mu[i * states..(i + 1) * states];
            for x in 0..features {
                let p1 = theta[i * features + x];
                let mut slope = 0.0;
                for y in 0..2 {
                    let s = 2 * x + y;
                    let (q0, q1) = (q[s * ACTIONS], q[s * ACTIONS + 1]);
                    slope += mu[s] * (q1 - q0);
                    v_now[s] = (1.0 - p1) * q0 + p1 * q1;
                }
                grad[i * features + x] = slope;
            }
            core::mem::swap(&mut v_now, &mut v_next);
        }
    }
    grad
}

/// Unordered group pairs `(i, j)` with `i < j`.
pub fn group_pairs(groups: usize) -> Vec<(usize, usize)> {
    (0..groups)
        .flat_map(|i| (i + 1..groups).map(move |j| (i, j)))
        .collect()
}

/// Value and gradient of the reward objective `J = sum_h R_h`.
pub fn objective_gradient(model: &PlanningModel, theta: &[f64]) -> (f64, Vec<f64>) {
    let fwd = forward(model, theta);
    let mut sens = Sensitivity::zeros(fwd.groups, fwd.horizon);
    sens.objective = 1.0;
    (fwd.objective, backward(model, theta, &fwd, &sens))
}

/// One signed constraint functional at a step for a group pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairStep {
    pub h: usize,
    pub first: usize,
    pub second: usize,
}

/// `P(a=1)` difference between the pair at step `h`.
pub fn dp_difference(fwd: &Forward, ps: PairStep) -> f64 {
    fwd.accept[fwd.at(ps.first, ps.h)] - fwd.accept[fwd.at(ps.second, ps.h)]
}

pub fn add_dp_sensitivity(fwd: &Forward, ps: PairStep, coef: f64, sens: &mut Sensitivity) {
    sens.accept[fwd.at(ps.first, ps.h)] += coef;
    sens.accept[fwd.at(ps.second, ps.h)] -= coef;
}

/// Cross-multiplied equal-opportunity difference
/// `(n_i D_j - n_j D_i) / scale`, which equals the ratio difference
/// `n_i / D_i - n_j / D_j` when `scale = D_i D_j`.
pub fn eqopt_cross_difference(fwd: &Forward, ps: PairStep, scale: f64) -> f64 {
    let (i, j) = (fwd.at(ps.first, ps.h), fwd.at(ps.second, ps.h));
    (fwd.qual_accept[i] * fwd.qual[j] - fwd.qual_accept[j] * fwd.qual[i]) / scale
}

pub fn add_eqopt_cross_sensitivity(fwd: &Forward, ps: PairStep, scale: f64, coef: f64, sens: &mut Sensitivity) {
    let (i, j) = (fwd.at(ps.first, ps.h), fwd.at(ps.second, ps.h));
    let c = coef / scale;
    sens.qual_accept[i] += c * fwd.qual[j];
    sens.qual[j] += c * fwd.qual_accept[i];
    sens.qual_accept[j] -= c * fwd.qual[i];
    sens.qual[i] -= c * fwd.qual_accept[j];
}

/// Exact ratio difference `P(a=1|y=1)_i - P(a=1|y=1)_j`.
pub fn eqopt_ratio_difference(fwd: &Forward, ps: PairStep) -> f64 {
    let (i, j) = (fwd.at(ps.first, ps.h), fwd.at(ps.second, ps.h));
    fwd.qual_accept[i] / fwd.qual[i] - fwd.qual_accept[j] / fwd.qual[j]
}

/// All `(step, pair)` combinations in a fixed order.
pub fn pair_steps(groups: usize, horizon: usize) -> Vec<PairStep> {
    let pairs = group_pairs(groups);
    (0..horizon)
        .flat_map(|h| {
            pairs.iter().map(move |&(first, second)| PairStep { h, first, second })
        })
        .collect()
}

/// Value and gradient of every demographic-parity difference functional.
pub fn dp_constraint_gradients(model: &PlanningModel, theta: &[f64]) -> Vec<(PairStep, f64, Vec<f64>)> {
    let fwd = forward(model, theta);
    pair_steps(fwd.groups, fwd.horizon)
        .into_iter()
        .map(|ps| {
            let mut sens = Sensitivity::zeros(fwd.groups, fwd.horizon);
            add_dp_sensitivity(&fwd, ps, 1.0, &mut sens);
            (ps, dp_difference(&fwd, ps), backward(model, theta, &fwd, &sens))
        })
        .collect()
}

/// Value and gradient of every cross-multiplied equal-opportunity
/// functional, normalized by the denominators at `scale_at`.
pub fn eqopt_constraint_gradients(
    model: &PlanningModel,
    theta: &[f64],
    scale_at: &[f64],
) -> Vec<(PairStep, f64, Vec<f64>)> {
    let fwd = forward(model, theta);
    let reference = forward(model, scale_at);
    pair_steps(fwd.groups, fwd.horizon)
        .into_iter()
        .map(|ps| {
            let scale = eqopt_scale(&reference, ps);
            let mut sens = Sensitivity::zeros(fwd.groups, fwd.horizon);
            add_eqopt_cross_sensitivity(&fwd, ps, scale, 1.0, &mut sens);
            (ps, eqopt_cross_difference(&fwd, ps, scale), backward(model, theta, &fwd, &sens))
        })
        .collect()
}

/// `D_i D_j` at a reference point.
pub fn eqopt_scale(reference: &Forward, ps: PairStep) -> f64 {
    reference.qual[reference.at(ps.first, ps.h)] * reference.qual[reference.at(ps.second, ps.h)]
}
