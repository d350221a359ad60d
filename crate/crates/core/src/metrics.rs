//! Ground-truth evaluation, regret, and aggregation across seeds.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::mdp::{action_marginal, eqopt_conditional, forward_occupancy, OccupancyMeasure, Policy, ProblemSpec};
use crate::math::{abs, sqrt};

/// Normal quantile used for the confidence bands.
pub const Z_95: f64 = 1.96;

#[derive(Debug, Clone, PartialEq)]
pub struct StepViolations {
    /// Worst pairwise gap at each step.
    pub per_step: Vec<f64>,
    /// Mean of `per_step` over the horizon.
    pub mean: f64,
}

impl StepViolations {
    fn from_steps(per_step: Vec<f64>) -> Self {
        let mean = if per_step.is_empty() {
            0.0
        } else {
            per_step.iter().sum::<f64>() / per_step.len() as f64
        };
        Self { per_step, mean }
    }
}

fn occupancy(policy: &Policy, truth: &ProblemSpec) -> Result<OccupancyMeasure> {
    forward_occupancy(policy, &truth.kernels())
}

fn pairwise_max(values: &[f64]) -> f64 {
    let mut worst = 0.0;
    for i in 0..values.len() {
        for j in i + 1..values.len() {
            worst = f64::max(worst, abs(values[i] - values[j]));
        }
    }
    worst
}

fn dp_from(occ: &OccupancyMeasure) -> StepViolations {
    let per_step = (0..occ.horizon())
        .map(|h| {
            let m: Vec<f64> = (0..occ.groups()).map(|g| action_marginal(occ, g, h)).collect();
            pairwise_max(&m)
        })
        .collect();
    StepViolations::from_steps(per_step)
}

fn eqopt_from(occ: &OccupancyMeasure) -> Result<StepViolations> {
    let mut per_step = Vec::with_capacity(occ.horizon());
    for h in 0..occ.horizon() {
        let c = (0..occ.groups())
            .map(|g| eqopt_conditional(occ, g, h))
            .collect::<Result<Vec<f64>>>()?;
        per_step.push(pairwise_max(&c));
    }
    Ok(StepViolations::from_steps(per_step))
}

/// Demographic-parity violation under the true dynamics.
pub fn violation_dp(policy: &Policy, truth: &ProblemSpec) -> Result<StepViolations> {
    Ok(dp_from(&occupancy(policy, truth)?))
}

/// Equal-opportunity violation under the true dynamics.
pub fn violation_eqopt(policy: &Policy, truth: &ProblemSpec) -> Result<StepViolations> {
    eqopt_from(&occupancy(policy, truth)?)
}

/// `sum_h R*_h` of `policy` under the true model.
pub fn episodic_return(policy: &Policy, truth: &ProblemSpec) -> Result<f64> {
    truth.planning_model().total_reward(policy)
}

/// `(1/H) (sum_h R*_h(comparator) - sum_h R*_h(policy))`.
pub fn reward_regret(policy: &Policy, truth: &ProblemSpec, comparator: &Policy) -> Result<f64> {
    let model = truth.planning_model();
    let gap = model.total_reward(comparator)? - model.total_reward(policy)?;
    Ok(gap / truth.space().horizon() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeMetrics {
    pub episode: u64,
    pub reward_regret: f64,
    pub dp_violation: f64,
    pub eqopt_violation: f64,
    pub episodic_return: f64,
    pub dp_per_step: Vec<f64>,
    pub eqopt_per_step: Vec<f64>,
}

/// All ground-truth metrics of `policy` in one pass.
///
/// The equal-opportunity entries are `NaN` when some group has no
/// qualified mass at a step.
pub fn evaluate(policy: &Policy, truth: &ProblemSpec, comparator: &Policy, episode: u64) -> Result<EpisodeMetrics> {
    let occ = occupancy(policy, truth)?;
    let model = truth.planning_model();
    let episodic_return: f64 = model.reward_profile(&occ)?.iter().sum();
    let comparator_return = model.total_reward(comparator)?;
    let dp = dp_from(&occ);
    let eqopt = match eqopt_from(&occ) {
        Ok(v) => v,
        Err(Error::DegenerateConditioning { .. }) => StepViolations {
            per_step: vec![f64::NAN; occ.horizon()],
            mean: f64::NAN,
        },
        Err(e) => return Err(e),
    };
    Ok(EpisodeMetrics {
        episode,
        reward_regret: (comparator_return - episodic_return) / truth.space().horizon() as f64,
        dp_violation: dp.mean,
        eqopt_violation: eqopt.mean,
        episodic_return,
        dp_per_step: dp.per_step,
        eqopt_per_step: eqopt.per_step,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Band {
    pub mean: f64,
    /// Sample standard deviation (`n - 1` denominator).
    pub sd: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Mean, sample sd and `mean ± 1.96 sd / sqrt(n)` of one sample.
pub fn band(values: &[f64]) -> Result<Band> {
    let n = values.len();
    if n < 2 {
        return Err(Error::Precondition(alloc::format!(
            "confidence bands need at least two seeds, got {n}"
        )));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    let sd = sqrt(var);
    let half = Z_95 * sd / sqrt(n as f64);
    Ok(Band {
        mean,
        sd,
        lower: mean - half,
        upper: mean + half,
    })
}

/// Per-checkpoint bands from one series per seed.
pub fn aggregate(runs: &[Vec<f64>]) -> Result<Vec<Band>> {
    let Some(first) = runs.first() else {
        return Err(Error::Precondition("no runs to aggregate".into()));
    };
    if let Some(bad) = runs.iter().find(|r| r.len() != first.len()) {
        return Err(Error::Shape {
            what: "checkpoints per seed",
            expected: first.len(),
            found: bad.len(),
        });
    }
    (0..first.len())
        .map(|i| band(&runs.iter().map(|r| r[i]).collect::<Vec<_>>()))
        .collect()
}

/// A (return, violation) summary of one method configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParetoPoint {
    pub episodic_return: f64,
    pub violation: f64,
}

impl ParetoPoint {
    /// At least as good in both coordinates and strictly better in one.
    pub fn dominates(&self, other: &ParetoPoint) -> bool {
        self.episodic_return >= other.episodic_return
            && self.violation <= other.violation
            && (self.episodic_return > other.episodic_return || self.violation < other.violation)
    }
}

/// Indices of the points not dominated by any other.
pub fn pareto_front(points: &[ParetoPoint]) -> Vec<usize> {
    (0..points.len())
        .filter(|&i| !points.iter().any(|p| p.dominates(&points[i])))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_seed_band() {
        let b = band(&[0.0, 2.0]).unwrap();
        assert_eq!(b.mean, 1.0);
        assert!((b.sd - 2f64.sqrt()).abs() < 1e-15);
        let half = 1.96 * 2f64.sqrt() / 2f64.sqrt();
        assert!((b.upper - (1.0 + half)).abs() < 1e-12);
    }

    #[test]
    fn constant_series_has_zero_width() {
        let runs = vec![vec![0.3, 0.7]; 5];
        for b in aggregate(&runs).unwrap() {
            assert_eq!(b.sd, 0.0);
            assert_eq!(b.lower, b.upper);
        }
    }

    #[test]
    fn one_seed_rejected() {
        assert!(band(&[1.0]).is_err());
        assert!(aggregate(&[vec![1.0, 2.0], vec![1.0]]).is_err());
    }

    #[test]
    fn dominance_is_strict() {
        let a = ParetoPoint {
            episodic_return: 1.0,
            violation: 0.1,
        };
        assert!(!a.dominates(&a));
        let b = ParetoPoint {
            episodic_return: 1.0,
            violation: 0.2,
        };
        assert!(a.dominates(&b));
        assert_eq!(pareto_front(&[a, b]), vec![0]);
    }
}
