//! Policy optimization for the stepwise-fair programs.
//!
//! All solvers optimize the acceptance probabilities directly; occupancy
//! is derived by forward recursion, so only the fairness inequalities and
//! the box `[eta, 1 - eta]` remain as constraints.

mod augmented;
pub mod gradient;
mod greedy;
mod oracle;
mod spg;

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::mdp::{PlanningModel, Policy};
use crate::DENOMINATOR_FLOOR;

pub use augmented::{solve_constrained, solve_penalty};
pub use greedy::{solve_unconstrained, ENUMERATION_LIMIT};
pub use oracle::{brute_force_oracle, grid_values, OracleTarget, ORACLE_PARAMETER_LIMIT};

/// Which fairness quantity a constraint or penalty refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Fairness {
    /// `P(a = 1)` per step.
    DemographicParity,
    /// `P(a = 1 | y = 1)` per step.
    EqualOpportunity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConstraintKind {
    Dp,
    EqOpt,
    None,
    DpPenalty,
    EqOptPenalty,
}

impl ConstraintKind {
    pub fn fairness(self) -> Option<Fairness> {
        match self {
            Self::Dp | Self::DpPenalty => Some(Fairness::DemographicParity),
            Self::EqOpt | Self::EqOptPenalty => Some(Fairness::EqualOpportunity),
            Self::None => None,
        }
    }

    pub fn is_penalty(self) -> bool {
        matches!(self, Self::DpPenalty | Self::EqOptPenalty)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverSettings {
    pub restarts: usize,
    /// Seeds the random restarts.
    pub seed: u64,
    /// Stop the inner loop when the projected-gradient step is below this.
    pub inner_tolerance: f64,
    pub feasibility_tolerance: f64,
    pub penalty_growth: f64,
    pub initial_penalty: f64,
    pub max_outer: usize,
    pub max_inner: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            restarts: 8,
            seed: 0,
            inner_tolerance: 1e-7,
            feasibility_tolerance: 1e-5,
            penalty_growth: 10.0,
            initial_penalty: 10.0,
            max_outer: 12,
            max_inner: 400,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveProblem {
    pub model: PlanningModel,
    pub kind: ConstraintKind,
    /// Per-step bound on the fairness gap; ignored by penalty and
    /// unconstrained kinds.
    pub relaxation: Vec<f64>,
    pub eta: f64,
    pub lambda: f64,
    pub settings: SolverSettings,
}

impl SolveProblem {
    pub fn constrained(model: PlanningModel, fairness: Fairness, relaxation: Vec<f64>, eta: f64) -> Self {
        let kind = match fairness {
            Fairness::DemographicParity => ConstraintKind::Dp,
            Fairness::EqualOpportunity => ConstraintKind::EqOpt,
        };
        Self {
            model,
            kind,
            relaxation,
            eta,
            lambda: 0.0,
            settings: SolverSettings::default(),
        }
    }

    pub fn penalized(model: PlanningModel, fairness: Fairness, lambda: f64, eta: f64) -> Self {
        let kind = match fairness {
            Fairness::DemographicParity => ConstraintKind::DpPenalty,
            Fairness::EqualOpportunity => ConstraintKind::EqOptPenalty,
        };
        Self {
            model,
            kind,
            relaxation: Vec::new(),
            eta,
            lambda,
            settings: SolverSettings::default(),
        }
    }

    pub fn with_settings(mut self, settings: SolverSettings) -> Self {
        self.settings = settings;
        self
    }

    fn validate(&self) -> Result<()> {
        check_eta(self.eta)?;
        let horizon = self.model.space.horizon();
        if self.kind.is_penalty() {
            if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
                return Err(Error::OutOfRange {
                    what: "penalty weight",
                    value: self.lambda,
                });
            }
        } else if self.kind != ConstraintKind::None {
            if self.relaxation.len() != horizon {
                return Err(Error::Shape {
                    what: "relaxation per step",
                    expected: horizon,
                    found: self.relaxation.len(),
                });
            }
            if let Some(&b) = self.relaxation.iter().find(|b| !(0.0..=1.0).contains(*b)) {
                return Err(Error::OutOfRange {
                    what: "relaxation bound",
                    value: b,
                });
            }
        }
        if self.kind.fairness().is_some() && self.model.group_count() < 2 {
            return Err(Error::Precondition(format!(
                "fairness constraints need at least two groups, got {}",
                self.model.group_count()
            )));
        }
        if self.settings.restarts == 0 {
            return Err(Error::Precondition("at least one restart is required".into()));
        }
        Ok(())
    }
}

pub(crate) fn check_eta(eta: f64) -> Result<()> {
    if !(0.0..0.5).contains(&eta) {
        return Err(Error::OutOfRange {
            what: "policy box eta",
            value: eta,
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Feasible,
    BestEffortInfeasible,
}

/// One outer iteration of the augmented Lagrangian.
#[derive(Debug, Clone, PartialEq)]
pub struct OuterRecord {
    pub restart: usize,
    pub outer: usize,
    pub objective: f64,
    pub max_violation: f64,
    pub penalty: f64,
    pub multipliers: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Diagnostics {
    pub restarts: usize,
    /// Inner iterations summed over restarts and outer iterations.
    pub iterations: usize,
    /// Index of the restart that produced the returned policy.
    pub chosen_restart: usize,
    pub multipliers: Vec<f64>,
    pub penalty: f64,
    pub trace: Vec<OuterRecord>,
}

impl Diagnostics {
    /// Restarts whose violation sequence increased after the first
    /// multiplier update.
    pub fn non_monotone_restarts(&self, tolerance: f64) -> Vec<usize> {
        let mut bad = Vec::new();
        for r in 0..self.restarts {
            let v: Vec<f64> = self
                .trace
                .iter()
                .filter(|t| t.restart == r)
                .map(|t| t.max_violation)
                .collect();
            if v.windows(2).any(|w| w[1] > w[0] + tolerance) {
                bad.push(r);
            }
        }
        bad
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub policy: Policy,
    /// `sum_h R_h` under the planning model.
    pub objective: f64,
    /// What was maximized: the objective minus any penalty term.
    pub surrogate: f64,
    /// Worst per-step excess over the bound for constrained kinds; the
    /// worst per-step fairness gap for penalty kinds; zero otherwise.
    pub max_violation: f64,
    pub status: SolveStatus,
    pub diagnostics: Diagnostics,
}

/// Per-step worst pairwise gap of a policy under the planning model.
pub fn fairness_gaps(model: &PlanningModel, policy: &Policy, fairness: Fairness) -> Vec<f64> {
    let fwd = gradient::forward(model, policy.params());
    step_gaps(&fwd, fairness)
}

pub(crate) fn step_gaps(fwd: &gradient::Forward, fairness: Fairness) -> Vec<f64> {
    let mut gaps = alloc::vec![0.0; fwd.horizon];
    for ps in gradient::pair_steps(fwd.groups, fwd.horizon) {
        let d = match fairness {
            Fairness::DemographicParity => gradient::dp_difference(fwd, ps),
            Fairness::EqualOpportunity => gradient::eqopt_ratio_difference(fwd, ps),
        };
        gaps[ps.h] = f64::max(gaps[ps.h], crate::math::abs(d));
    }
    gaps
}

pub(crate) fn max_excess(gaps: &[f64], bounds: &[f64]) -> f64 {
    gaps.iter()
        .zip(bounds)
        .map(|(g, b)| (g - b).max(0.0))
        .fold(0.0, f64::max)
}

/// Rejects equal-opportunity problems where some policy in the box
/// `[eta, 1 - eta]` can push `P(y_h = 1)` below the floor.
///
/// The minimum is taken over state-dependent policies by backward
/// recursion, which bounds the x-only class from below.
pub(crate) fn check_conditioning(model: &PlanningModel, eta: f64) -> Result<()> {
    let states = model.space.states();
    let horizon = model.space.horizon();
    for (g, kernel) in model.kernels.iter().enumerate() {
        for h in 0..horizon {
            // w[s] = min probability of y_h = 1 starting from s at step t
            let mut w: Vec<f64> = (0..states).map(|s| (s % 2) as f64).collect();
            for _ in 0..h {
                w = (0..states)
                    .map(|s| {
                        let q = |a: usize| -> f64 { kernel.row(s, a).iter().zip(&w).map(|(p, v)| p * v).sum() };
                        let (q0, q1) = (q(0), q(1));
                        f64::min((1.0 - eta) * q0 + eta * q1, eta * q0 + (1.0 - eta) * q1)
                    })
                    .collect();
            }
            let mass: f64 = kernel.initial().iter().zip(&w).map(|(p, v)| p * v).sum();
            if mass < DENOMINATOR_FLOOR {
                return Err(Error::DegenerateConditioning {
                    group: g,
                    step: h,
                    denominator: mass,
                });
            }
        }
    }
    Ok(())
}

/// Squared pairwise penalty `sum_h sum_pairs diff^2`, with the raw
/// cross-multiplied difference for equal opportunity.
pub(crate) fn penalty_value(fwd: &gradient::Forward, fairness: Fairness) -> f64 {
    gradient::pair_steps(fwd.groups, fwd.horizon)
        .into_iter()
        .map(|ps| {
            let d = match fairness {
                Fairness::DemographicParity => gradient::dp_difference(fwd, ps),
                Fairness::EqualOpportunity => gradient::eqopt_cross_difference(fwd, ps, 1.0),
            };
            d * d
        })
        .sum()
}

#[cfg(test)]
mod tests;
