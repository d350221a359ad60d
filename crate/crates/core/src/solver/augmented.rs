//! Augmented-Lagrangian and penalty solvers.
//!
//! Each `|gap_h| <= b_h` is split into `+gap_h - b_h <= 0` and
//! `-gap_h - b_h <= 0` and handled with the Powell-Hestenes-Rockafellar
//! term
//!
//! ```text
//! psi(g, lambda, mu) = ( max(0, lambda + mu g)^2 - lambda^2 ) / (2 mu)
//! ```
//!
//! The inner problems run spectral projected gradient on the box.
//! Equal-opportunity gaps enter in cross-multiplied form,
//! `(n_i D_j - n_j D_i) / (D_i D_j)`, with the denominators frozen at the
//! start of each outer iteration.

use alloc::vec;
use alloc::vec::Vec;

use super::gradient::{
    add_dp_sensitivity, add_eqopt_cross_sensitivity, backward, dp_difference, eqopt_cross_difference,
    eqopt_scale, forward, pair_steps, Forward, PairStep, Sensitivity,
};
use super::greedy::greedy_params;
use super::spg::{minimize, Objective};
use super::{
    check_conditioning, max_excess, penalty_value, step_gaps, ConstraintKind, Diagnostics, Fairness,
    OuterRecord, SolveProblem, SolveResult, SolveStatus,
};
use crate::error::{Error, Result};
use crate::mdp::Policy;
use crate::rng::StreamRng;
use crate::{PlanningModel, DENOMINATOR_FLOOR};

/// Relative objective change under which a feasible outer loop stops.
const STALL: f64 = 1e-9;

/// Inner re-solves allowed before a violation increase is accepted.
const MAX_RETRIES: usize = 3;

enum Term<'a> {
    Augmented {
        bounds: &'a [f64],
        scales: &'a [f64],
        multipliers: &'a [f64],
        mu: f64,
    },
    Penalty {
        lambda: f64,
    },
}

/// Negated Lagrangian (or penalized objective), to be minimized.
struct Surrogate<'a> {
    model: &'a PlanningModel,
    fairness: Fairness,
    pairs: &'a [PairStep],
    term: Term<'a>,
}

impl Surrogate<'_> {
    fn gap(&self, fwd: &Forward, c: usize, scales: &[f64]) -> f64 {
        let ps = self.pairs[c];
        match self.fairness {
            Fairness::DemographicParity => dp_difference(fwd, ps),
            Fairness::EqualOpportunity => eqopt_cross_difference(fwd, ps, scales[c]),
        }
    }

    /// Value of the extra term and its derivative with respect to each gap.
    fn extra(&self, fwd: &Forward) -> (f64, Vec<f64>) {
        let mut slopes = vec![0.0; self.pairs.len()];
        let mut value = 0.0;
        match self.term {
            Term::Augmented {
                bounds,
                scales,
                multipliers,
                mu,
            } => {
                for (c, slope) in slopes.iter_mut().enumerate() {
                    let d = self.gap(fwd, c, scales);
                    let b = bounds[self.pairs[c].h];
                    for (side, sign) in [(0, 1.0), (1, -1.0)] {
                        let l = multipliers[2 * c + side];
                        let shifted = (l + mu * (sign * d - b)).max(0.0);
                        value += (shifted * shifted - l * l) / (2.0 * mu);
                        *slope += shifted * sign;
                    }
                }
            }
            Term::Penalty { lambda } => {
                let ones = vec![1.0; self.pairs.len()];
                for (c, slope) in slopes.iter_mut().enumerate() {
                    let d = self.gap(fwd, c, &ones);
                    value += lambda * d * d;
                    *slope = 2.0 * lambda * d;
                }
            }
        }
        (value, slopes)
    }

    fn scales(&self) -> Option<&[f64]> {
        match self.term {
            Term::Augmented { scales, .. } => Some(scales),
            Term::Penalty { .. } => None,
        }
    }
}

impl Objective for Surrogate<'_> {
    fn value(&mut self, x: &[f64]) -> f64 {
        let fwd = forward(self.model, x);
        -fwd.objective + self.extra(&fwd).0
    }

    fn value_grad(&mut self, x: &[f64]) -> (f64, Vec<f64>) {
        let fwd = forward(self.model, x);
        let (extra, slopes) = self.extra(&fwd);
        let mut sens = Sensitivity::zeros(fwd.groups, fwd.horizon);
        sens.objective = -1.0;
        let unit;
        let scales = match self.scales() {
            Some(s) => s,
            None => {
                unit = vec![1.0; self.pairs.len()];
                &unit
            }
        };
        for (c, &slope) in slopes.iter().enumerate() {
            if slope == 0.0 {
                continue;
            }
            let ps = self.pairs[c];
            match self.fairness {
                Fairness::DemographicParity => add_dp_sensitivity(&fwd, ps, slope, &mut sens),
                Fairness::EqualOpportunity => add_eqopt_cross_sensitivity(&fwd, ps, scales[c], slope, &mut sens),
            }
        }
        (-fwd.objective + extra, backward(self.model, x, &fwd, &sens))
    }
}

/// Starting points in order: midpoint, all-accept, greedy, then random.
fn starting_points(problem: &SolveProblem, n: usize) -> Vec<Vec<f64>> {
    let (lo, hi) = (problem.eta, 1.0 - problem.eta);
    let restarts = problem.settings.restarts;
    let mut starts = Vec::with_capacity(restarts);
    for r in 0..restarts {
        let x = match r {
            0 => vec![0.5f64.clamp(lo, hi); n],
            1 => vec![hi; n],
            2 => greedy_params(&problem.model, problem.eta).0,
            _ => {
                let mut rng = StreamRng::for_coords(problem.settings.seed, &[r as u64]);
                (0..n).map(|_| lo + (hi - lo) * rng.uniform()).collect()
            }
        };
        starts.push(x);
    }
    starts
}

struct RestartOutcome {
    best_feasible: Option<(Vec<f64>, f64)>,
    last: Vec<f64>,
    last_violation: f64,
    multipliers: Vec<f64>,
    mu: f64,
    iterations: usize,
}

fn true_violation(fwd: &Forward, fairness: Fairness, bounds: &[f64]) -> f64 {
    max_excess(&step_gaps(fwd, fairness), bounds)
}

fn run_restart(
    problem: &SolveProblem,
    fairness: Fairness,
    pairs: &[PairStep],
    restart: usize,
    start: Vec<f64>,
    trace: &mut Vec<OuterRecord>,
) -> RestartOutcome {
    let s = &problem.settings;
    let (lo, hi) = (problem.eta, 1.0 - problem.eta);
    let bounds = &problem.relaxation[..];
    let mut x = start;
    x.iter_mut().for_each(|v| *v = v.clamp(lo, hi));
    let fwd0 = forward(&problem.model, &x);
    let mut violation = true_violation(&fwd0, fairness, bounds);
    let mut best_feasible = (violation <= s.feasibility_tolerance).then(|| (x.clone(), fwd0.objective));
    let mut multipliers = vec![0.0; 2 * pairs.len()];
    let mut mu = s.initial_penalty;
    let mut iterations = 0;
    let mut previous_objective = fwd0.objective;
    let mut accepted = 0;
    let mut retries = 0;
    for outer in 0..s.max_outer {
        let reference = forward(&problem.model, &x);
        let scales: Vec<f64> = pairs
            .iter()
            .map(|&ps| match fairness {
                Fairness::DemographicParity => 1.0,
                Fairness::EqualOpportunity => eqopt_scale(&reference, ps).max(DENOMINATOR_FLOOR * DENOMINATOR_FLOOR),
            })
            .collect();
        let mut surrogate = Surrogate {
            model: &problem.model,
            fairness,
            pairs,
            term: Term::Augmented {
                bounds,
                scales: &scales,
                multipliers: &multipliers,
                mu,
            },
        };
        let out = minimize(&mut surrogate, &x, lo, hi, s.inner_tolerance, s.max_inner);
        iterations += out.iterations;
        let fwd = forward(&problem.model, &out.x);
        let candidate = true_violation(&fwd, fairness, bounds);
        // an accepted iterate never raises the violation past the last one;
        // otherwise retry from the same point with a stiffer penalty
        if accepted > 0 && candidate > violation.max(s.feasibility_tolerance) && retries < MAX_RETRIES {
            retries += 1;
            mu *= s.penalty_growth;
            continue;
        }
        retries = 0;
        accepted += 1;
        x = out.x;
        let gaps: Vec<f64> = (0..pairs.len()).map(|c| surrogate.gap(&fwd, c, &scales)).collect();
        for (c, (ps, d)) in pairs.iter().zip(gaps).enumerate() {
            let b = bounds[ps.h];
            for (side, sign) in [(0, 1.0), (1, -1.0)] {
                let l = &mut multipliers[2 * c + side];
                *l = (*l + mu * (sign * d - b)).max(0.0);
            }
        }
        let previous_violation = violation;
        violation = candidate;
        trace.push(OuterRecord {
            restart,
            outer,
            objective: fwd.objective,
            max_violation: violation,
            penalty: mu,
            multipliers: multipliers.clone(),
        });
        let feasible = violation <= s.feasibility_tolerance;
        if feasible && best_feasible.as_ref().is_none_or(|(_, j)| fwd.objective > *j) {
            best_feasible = Some((x.clone(), fwd.objective));
        }
        let stalled = crate::math::abs(fwd.objective - previous_objective) <= STALL * (1.0 + crate::math::abs(fwd.objective));
        if feasible && (stalled || multipliers.iter().all(|&l| l == 0.0)) {
            break;
        }
        if violation > 0.25 * previous_violation {
            mu *= s.penalty_growth;
        }
        previous_objective = fwd.objective;
    }
    RestartOutcome {
        best_feasible,
        last: x,
        last_violation: violation,
        multipliers,
        mu,
        iterations,
    }
}

/// Maximizes `sum_h R_h` subject to a per-step bound on every pairwise
/// fairness gap, over the box `[eta, 1 - eta]`.
pub fn solve_constrained(problem: &SolveProblem) -> Result<SolveResult> {
    problem.validate()?;
    let fairness = match problem.kind {
        ConstraintKind::Dp => Fairness::DemographicParity,
        ConstraintKind::EqOpt => Fairness::EqualOpportunity,
        other => {
            return Err(Error::Precondition(alloc::format!(
                "solve_constrained needs a DP or EqOpt constraint, got {other:?}"
            )))
        }
    };
    if fairness == Fairness::EqualOpportunity {
        check_conditioning(&problem.model, problem.eta)?;
    }
    let model = &problem.model;
    let pairs = pair_steps(model.group_count(), model.space.horizon());
    let n = model.group_count() * model.space.horizon() * model.space.features();
    let mut trace = Vec::new();
    let mut outcomes = Vec::new();
    for (r, start) in starting_points(problem, n).into_iter().enumerate() {
        outcomes.push(run_restart(problem, fairness, &pairs, r, start, &mut trace));
    }
    let iterations = outcomes.iter().map(|o| o.iterations).sum();
    let mut chosen: Option<(usize, f64)> = None;
    for (r, o) in outcomes.iter().enumerate() {
        if let Some((_, j)) = &o.best_feasible {
            if chosen.is_none_or(|(_, best)| *j > best) {
                chosen = Some((r, *j));
            }
        }
    }
    let (r, params, status) = match chosen {
        Some((r, _)) => (r, outcomes[r].best_feasible.clone().unwrap().0, SolveStatus::Feasible),
        None => {
            let mut r = 0;
            for (i, o) in outcomes.iter().enumerate() {
                if o.last_violation < outcomes[r].last_violation {
                    r = i;
                }
            }
            (r, outcomes[r].last.clone(), SolveStatus::BestEffortInfeasible)
        }
    };
    let fwd = forward(model, &params);
    let objective = fwd.objective;
    let max_violation = true_violation(&fwd, fairness, &problem.relaxation);
    let o = &outcomes[r];
    Ok(SolveResult {
        policy: Policy::new(model.group_count(), model.space, params)?,
        objective,
        surrogate: objective,
        max_violation,
        status,
        diagnostics: Diagnostics {
            restarts: outcomes.len(),
            iterations,
            chosen_restart: r,
            multipliers: o.multipliers.clone(),
            penalty: o.mu,
            trace,
        },
    })
}

/// Maximizes `sum_h R_h - lambda * sum_h sum_pairs gap_h^2` over the box.
///
/// The equal-opportunity gap is the raw cross product
/// `n_i D_j - n_j D_i`.
pub fn solve_penalty(problem: &SolveProblem) -> Result<SolveResult> {
    problem.validate()?;
    let fairness = match problem.kind {
        ConstraintKind::DpPenalty => Fairness::DemographicParity,
        ConstraintKind::EqOptPenalty => Fairness::EqualOpportunity,
        other => {
            return Err(Error::Precondition(alloc::format!(
                "solve_penalty needs a penalty kind, got {other:?}"
            )))
        }
    };
    let model = &problem.model;
    let s = &problem.settings;
    let (lo, hi) = (problem.eta, 1.0 - problem.eta);
    let pairs = pair_steps(model.group_count(), model.space.horizon());
    let n = model.group_count() * model.space.horizon() * model.space.features();
    let mut surrogate = Surrogate {
        model,
        fairness,
        pairs: &pairs,
        term: Term::Penalty { lambda: problem.lambda },
    };
    let mut best: Option<(usize, Vec<f64>, f64)> = None;
    let mut iterations = 0;
    let mut restarts = 0;
    for (r, start) in starting_points(problem, n).into_iter().enumerate() {
        restarts += 1;
        let out = minimize(&mut surrogate, &start, lo, hi, s.inner_tolerance, s.max_inner * s.max_outer);
        iterations += out.iterations;
        if best.as_ref().is_none_or(|(_, _, v)| out.value < *v) {
            best = Some((r, out.x, out.value));
        }
    }
    let (r, params, value) = best.expect("at least one restart");
    let fwd = forward(model, &params);
    let gaps = step_gaps(&fwd, fairness);
    debug_assert!(
        crate::math::abs(value + fwd.objective - problem.lambda * penalty_value(&fwd, fairness))
            < 1e-9 * (1.0 + crate::math::abs(value))
    );
    Ok(SolveResult {
        policy: Policy::new(model.group_count(), model.space, params)?,
        objective: fwd.objective,
        surrogate: -value,
        max_violation: gaps.iter().copied().fold(0.0, f64::max),
        status: SolveStatus::Feasible,
        diagnostics: Diagnostics {
            restarts,
            iterations,
            chosen_restart: r,
            multipliers: Vec::new(),
            penalty: problem.lambda,
            trace: Vec::new(),
        },
    })
}
