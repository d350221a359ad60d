//! Box-constrained greedy baseline without fairness constraints.
//!
//! Groups decouple, and for each group the return is multilinear in the
//! acceptance probabilities, so an optimum sits at a vertex of the box.
//! Small groups are solved by enumerating vertices. Larger ones use
//! backward sweeps in which every `(h, x)` is set to the endpoint favored by
//! the advantage `sum_y mu_h(x, y) (Q_h(s, 1) - Q_h(s, 0))`; since `y` is
//! hidden from the policy this is a coordinate-wise optimum, and several
//! starting points are tried.

use alloc::vec;
use alloc::vec::Vec;

use super::gradient::forward;
use super::{check_eta, Diagnostics, SolveResult, SolveStatus};
use crate::error::Result;
use crate::mdp::{PlanningModel, Policy};
use crate::ACTIONS;

/// Largest per-group parameter count solved by vertex enumeration.
pub const ENUMERATION_LIMIT: usize = 16;

const MAX_SWEEPS: usize = 64;
const TIE: f64 = 1e-12;

/// State distributions `mu[h * S + s]` and the group's unweighted return.
fn group_forward(model: &PlanningModel, g: usize, theta: &[f64]) -> (Vec<f64>, f64) {
    let space = model.space;
    let (horizon, states, features) = (space.horizon(), space.states(), space.features());
    let kernel = &model.kernels[g];
    let reward = &model.rewards[g];
    let mut mu = vec![0.0; horizon * states];
    mu[..states].copy_from_slice(kernel.initial());
    let mut value = 0.0;
    for h in 0..horizon {
        for s in 0..states {
            let m = mu[h * states + s];
            if m == 0.0 {
                continue;
            }
            let p1 = theta[h * features + s / 2];
            let w = [m * (1.0 - p1), m * p1];
            value += w[0] * reward[s * ACTIONS] + w[1] * reward[s * ACTIONS + 1];
            if h + 1 < horizon {
                for (a, wa) in w.into_iter().enumerate() {
                    if wa == 0.0 {
                        continue;
                    }
                    let row = kernel.row(s, a);
                    let next = &mut mu[(h + 1) * states..(h + 2) * states];
                    for (n, p) in next.iter_mut().zip(row) {
                        *n += wa * p;
                    }
                }
            }
        }
    }
    (mu, value)
}

/// One backward sweep; returns whether any parameter moved.
fn sweep(model: &PlanningModel, g: usize, theta: &mut [f64], lo: f64, hi: f64) -> bool {
    let space = model.space;
    let (horizon, states, features) = (space.horizon(), space.states(), space.features());
    let kernel = &model.kernels[g];
    let reward = &model.rewards[g];
    let (mu, _) = group_forward(model, g, theta);
    let mut v_next = vec![0.0; states];
    let mut v_now = vec![0.0; states];
    let mut q = vec![0.0; states * ACTIONS];
    let mut changed = false;
    for h in (0..horizon).rev() {
        for s in 0..states {
            for a in 0..ACTIONS {
                let cont: f64 = if h + 1 < horizon {
                    kernel.row(s, a).iter().zip(&v_next).map(|(p, v)| p * v).sum()
                } else {
                    0.0
                };
                q[s * ACTIONS + a] = reward[s * ACTIONS + a] + cont;
            }
        }
        for x in 0..features {
            let slope: f64 = (0..2)
                .map(|y| {
                    let s = 2 * x + y;
                    mu[h * states + s] * (q[s * ACTIONS + 1] - q[s * ACTIONS])
                })
                .sum();
            let pick = if slope > TIE { hi } else { lo };
            let i = h * features + x;
            if theta[i] != pick {
                theta[i] = pick;
                changed = true;
            }
            for y in 0..2 {
                let s = 2 * x + y;
                v_now[s] = (1.0 - pick) * q[s * ACTIONS] + pick * q[s * ACTIONS + 1];
            }
        }
        core::mem::swap(&mut v_now, &mut v_next);
    }
    changed
}

/// Best vertex policy for one group, and the number of sweeps or vertices
/// examined.
fn group_greedy(model: &PlanningModel, g: usize, lo: f64, hi: f64) -> (Vec<f64>, usize) {
    let space = model.space;
    let n = space.horizon() * space.features();
    if n <= ENUMERATION_LIMIT {
        let mut best = vec![lo; n];
        let mut best_value = group_forward(model, g, &best).1;
        let mut theta = vec![lo; n];
        for mask in 1u32..(1u32 << n) {
            for (i, t) in theta.iter_mut().enumerate() {
                *t = if mask >> i & 1 == 1 { hi } else { lo };
            }
            let v = group_forward(model, g, &theta).1;
            if v > best_value + TIE {
                best_value = v;
                best.copy_from_slice(&theta);
            }
        }
        return (best, 1usize << n);
    }
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut sweeps = 0;
    for start in [lo, hi, 0.5 * (lo + hi)] {
        let mut theta = vec![start; n];
        for _ in 0..MAX_SWEEPS {
            sweeps += 1;
            if !sweep(model, g, &mut theta, lo, hi) {
                break;
            }
        }
        let v = group_forward(model, g, &theta).1;
        if best.as_ref().is_none_or(|(_, bv)| v > bv + TIE) {
            best = Some((theta, v));
        }
    }
    (best.map(|b| b.0).unwrap_or_default(), sweeps)
}

pub(crate) fn greedy_params(model: &PlanningModel, eta: f64) -> (Vec<f64>, usize) {
    let (lo, hi) = (eta, 1.0 - eta);
    let mut params = Vec::new();
    let mut work = 0;
    for g in 0..model.group_count() {
        let (theta, w) = group_greedy(model, g, lo, hi);
        params.extend(theta);
        work += w;
    }
    (params, work)
}

/// Optimal fairness-agnostic policy in the box `[eta, 1 - eta]`.
pub fn solve_unconstrained(model: &PlanningModel, eta: f64) -> Result<SolveResult> {
    check_eta(eta)?;
    let (params, work) = greedy_params(model, eta);
    let objective = forward(model, &params).objective;
    let policy = Policy::new(model.group_count(), model.space, params)?;
    Ok(SolveResult {
        policy,
        objective,
        surrogate: objective,
        max_violation: 0.0,
        status: SolveStatus::Feasible,
        diagnostics: Diagnostics {
            restarts: 1,
            iterations: work,
            ..Diagnostics::default()
        },
    })
}
