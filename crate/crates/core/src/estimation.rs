//! Counting estimators, exploration bonus and relaxation schedules.
//!
//! Counts are cumulative over every ingested episode and the estimated
//! model is rebuilt from them from scratch at each policy update.
//!
//! With `N(s,a) = max(1, visits)`, `S` states, `A` actions, horizon `H`,
//! episode index `k` and confidence `delta`:
//!
//! ```text
//! bonus(s,a) = min(2H, 2H sqrt(2 ln(16 S A H k^2 / delta) / N(s,a)))
//! eps_k      = 1 / (k H S)
//! eta_k      = min(k^(-1/3), 0.4)
//! c_hat      = sum_g [ H sqrt(2 S ln(16 S A H k^2 / (eps_k delta)) / N_g,min) + 2 eps_k H S ]
//! d_hat      = sum_g (3H sqrt(2 S ln(32 S A k^2 / (eps_k delta)) / N_g,min) + 3 eps_k H S)
//!                    / (p_g,min (p_g,min - gate_g))
//! gate_g     = sqrt((4 ln 2 + 2 ln(4 S A k^2 / delta)) / N_g,min)
//! ```
//!
//! `d_hat` falls back to 1 unless `p_g,min > gate_g` for every group, and
//! both relaxations are capped at 1.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{cbrt, ln, sqrt};
use crate::mdp::{PlanningModel, StateSpace, TransitionKernel};
use crate::sim::EpisodeBatch;
use crate::ACTIONS;

/// Upper cap on the reachability margin so that `[eta, 1 - eta]` is never empty.
pub const ETA_CAP: f64 = 0.4;

#[derive(Debug, Clone, PartialEq)]
pub struct GroupCounts {
    raw_visits: Vec<u64>,
    transitions: Vec<u64>,
    reward_sum: Vec<f64>,
    initial: Vec<u64>,
}

impl GroupCounts {
    fn new(states: usize) -> Self {
        Self {
            raw_visits: vec![0; states * ACTIONS],
            transitions: vec![0; states * ACTIONS * states],
            reward_sum: vec![0.0; states * ACTIONS],
            initial: vec![0; states],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CountTable {
    space: StateSpace,
    groups: Vec<GroupCounts>,
    last_episode: Option<u64>,
}

impl CountTable {
    pub fn new(space: StateSpace, groups: usize) -> Self {
        Self {
            space,
            groups: (0..groups).map(|_| GroupCounts::new(space.states())).collect(),
            last_episode: None,
        }
    }

    pub fn space(&self) -> StateSpace {
        self.space
    }

    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    pub fn last_episode(&self) -> Option<u64> {
        self.last_episode
    }

    /// Ingests one batch. Transitions are only counted when the successor
    /// state was observed, i.e. not after the final step or an opt-out.
    pub fn update(&mut self, batch: &EpisodeBatch) -> Result<()> {
        if let Some(last) = self.last_episode {
            if batch.episode <= last {
                return Err(Error::Sequencing {
                    last,
                    got: batch.episode,
                });
            }
        }
        if batch.groups.len() != self.groups.len() {
            return Err(Error::Shape {
                what: "batch groups",
                expected: self.groups.len(),
                found: batch.groups.len(),
            });
        }
        let states = self.space.states();
        for (counts, trajectories) in self.groups.iter_mut().zip(&batch.groups) {
            for t in trajectories {
                if let Some(first) = t.steps.first() {
                    counts.initial[first.state] += 1;
                }
                for (i, step) in t.steps.iter().enumerate() {
                    let sa = step.state * ACTIONS + step.action;
                    counts.raw_visits[sa] += 1;
                    counts.reward_sum[sa] += step.reward;
                    if let Some(next) = t.steps.get(i + 1) {
                        counts.transitions[sa * states + next.state] += 1;
                    }
                }
            }
        }
        self.last_episode = Some(batch.episode);
        Ok(())
    }

    #[inline]
    pub fn raw_visits(&self, group: usize, s: usize, a: usize) -> u64 {
        self.groups[group].raw_visits[s * ACTIONS + a]
    }

    /// `N(s,a) = max(1, raw visits)`.
    #[inline]
    pub fn visits(&self, group: usize, s: usize, a: usize) -> u64 {
        self.raw_visits(group, s, a).max(1)
    }

    #[inline]
    pub fn transitions(&self, group: usize, s: usize, a: usize, next: usize) -> u64 {
        let states = self.space.states();
        self.groups[group].transitions[(s * ACTIONS + a) * states + next]
    }

    pub fn transition_total(&self, group: usize, s: usize, a: usize) -> u64 {
        let states = self.space.states();
        let r = (s * ACTIONS + a) * states;
        self.groups[group].transitions[r..r + states].iter().sum()
    }

    pub fn reward_sum(&self, group: usize, s: usize, a: usize) -> f64 {
        self.groups[group].reward_sum[s * ACTIONS + a]
    }

    pub fn initial_counts(&self, group: usize) -> &[u64] {
        &self.groups[group].initial
    }
}

/// Functional form of [`CountTable::update`].
pub fn update_counts(counts: &CountTable, batch: &EpisodeBatch) -> Result<CountTable> {
    let mut next = counts.clone();
    next.update(batch)?;
    Ok(next)
}

/// Dimensions and confidence shared by the bonus and relaxation formulas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleInputs {
    pub k: u64,
    pub horizon: usize,
    pub states: usize,
    pub actions: usize,
    pub delta: f64,
    pub epsilon: f64,
}

impl ScheduleInputs {
    /// Uses the default `eps_k = 1 / (k H S)`.
    pub fn new(k: u64, horizon: usize, states: usize, actions: usize, delta: f64) -> Self {
        Self {
            k,
            horizon,
            states,
            actions,
            delta,
            epsilon: epsilon(k, horizon, states),
        }
    }

    fn sa(&self) -> f64 {
        (self.states * self.actions) as f64
    }

    fn k2(&self) -> f64 {
        let k = self.k as f64;
        k * k
    }
}

/// `eps_k = 1 / (k H S)`.
pub fn epsilon(k: u64, horizon: usize, states: usize) -> f64 {
    1.0 / (k as f64 * horizon as f64 * states as f64)
}

/// `eta_k = min(k^(-1/3), ETA_CAP)`.
pub fn eta(k: u64) -> f64 {
    (1.0 / cbrt(k as f64)).min(ETA_CAP)
}

/// Exploration bonus for a clamped visit count `n >= 1`.
pub fn bonus(n: u64, inputs: &ScheduleInputs) -> f64 {
    let h = inputs.horizon as f64;
    let log_term = ln(16.0 * inputs.sa() * h * inputs.k2() / inputs.delta);
    let raw = 2.0 * h * sqrt(2.0 * log_term / n.max(1) as f64);
    raw.min(2.0 * h)
}

/// Demographic-parity relaxation from the per-group minimum visit counts.
pub fn compat_c(n_min: &[u64], inputs: &ScheduleInputs) -> f64 {
    let h = inputs.horizon as f64;
    let s = inputs.states as f64;
    let eps = inputs.epsilon;
    let log_term = ln(16.0 * inputs.sa() * h * inputs.k2() / (eps * inputs.delta));
    let total: f64 = n_min
        .iter()
        .map(|&n| h * sqrt(2.0 * s * log_term / n.max(1) as f64) + 2.0 * eps * h * s)
        .sum();
    total.min(1.0)
}

/// The positivity gate on `p_min` used by [`compat_d`].
pub fn compat_d_gate(n_min: u64, inputs: &ScheduleInputs) -> f64 {
    let log_term = ln(4.0 * inputs.sa() * inputs.k2() / inputs.delta);
    sqrt((4.0 * core::f64::consts::LN_2 + 2.0 * log_term) / n_min.max(1) as f64)
}

/// Equal-opportunity relaxation from `(N_min, p_min)` per group.
pub fn compat_d(groups: &[(u64, f64)], inputs: &ScheduleInputs) -> f64 {
    let h = inputs.horizon as f64;
    let s = inputs.states as f64;
    let eps = inputs.epsilon;
    let log_term = ln(32.0 * inputs.sa() * inputs.k2() / (eps * inputs.delta));
    let mut total = 0.0;
    for &(n, p_min) in groups {
        let gate = compat_d_gate(n, inputs);
        if !(p_min > gate) {
            return 1.0;
        }
        let num = 3.0 * h * sqrt(2.0 * s * log_term / n.max(1) as f64) + 3.0 * eps * h * s;
        total += num / (p_min * (p_min - gate));
    }
    total.min(1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupEstimate {
    /// Empirical kernel, including the empirical first-state distribution.
    pub kernel: TransitionKernel,
    pub reward_hat: Vec<f64>,
    pub bonus: Vec<f64>,
    /// `reward_hat + bonus`, not capped.
    pub optimistic: Vec<f64>,
    /// Clamped visit counts `N(s,a)`.
    pub visits: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatedModel {
    pub space: StateSpace,
    pub k: u64,
    pub delta: f64,
    pub groups: Vec<GroupEstimate>,
}

impl EstimatedModel {
    /// Planning view with the optimistic reward.
    pub fn planning_model(&self, proportions: &[f64]) -> Result<PlanningModel> {
        PlanningModel::new(
            self.space,
            proportions.to_vec(),
            self.groups.iter().map(|g| g.kernel.clone()).collect(),
            self.groups.iter().map(|g| g.optimistic.clone()).collect(),
        )
    }

    /// `min_{s,a} N(s,a)`.
    pub fn n_min(&self, group: usize) -> u64 {
        self.groups[group].visits.iter().copied().min().unwrap_or(1)
    }

    /// `min_{s,a} p_k(y' = 1 | s, a)`.
    pub fn p_min(&self, group: usize) -> f64 {
        let kernel = &self.groups[group].kernel;
        (0..self.space.states())
            .flat_map(|s| (0..ACTIONS).map(move |a| (s, a)))
            .map(|(s, a)| kernel.qualify_prob(s, a))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn schedule_inputs(&self) -> ScheduleInputs {
        ScheduleInputs::new(self.k, self.space.horizon(), self.space.states(), ACTIONS, self.delta)
    }
}

/// Builds `p_k`, `r_hat_k`, the bonus and the optimistic reward.
///
/// Rows of `(s,a)` pairs with no observed successor fall back to the
/// uniform distribution; unvisited pairs have `r_hat = 0`.
pub fn build_model(counts: &CountTable, k: u64, delta: f64) -> Result<EstimatedModel> {
    if k == 0 {
        return Err(Error::Precondition("episode index k starts at 1".into()));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::OutOfRange {
            what: "confidence delta",
            value: delta,
        });
    }
    let space = counts.space();
    let states = space.states();
    let inputs = ScheduleInputs::new(k, space.horizon(), states, ACTIONS, delta);
    let uniform = 1.0 / states as f64;
    let mut groups = Vec::with_capacity(counts.group_count());
    for g in 0..counts.group_count() {
        let mut table = vec![uniform; states * ACTIONS * states];
        let mut reward_hat = vec![0.0; states * ACTIONS];
        let mut bonus_table = vec![0.0; states * ACTIONS];
        let mut visits = vec![0; states * ACTIONS];
        for s in 0..states {
            for a in 0..ACTIONS {
                let sa = s * ACTIONS + a;
                let n = counts.visits(g, s, a);
                visits[sa] = n;
                reward_hat[sa] = counts.reward_sum(g, s, a) / n as f64;
                bonus_table[sa] = bonus(n, &inputs);
                let observed = counts.transition_total(g, s, a);
                if observed > 0 {
                    let row = &mut table[sa * states..(sa + 1) * states];
                    for (next, p) in row.iter_mut().enumerate() {
                        *p = counts.transitions(g, s, a, next) as f64 / observed as f64;
                    }
                }
            }
        }
        let init_counts = counts.initial_counts(g);
        let init_total: u64 = init_counts.iter().sum();
        let initial = if init_total > 0 {
            init_counts.iter().map(|&c| c as f64 / init_total as f64).collect()
        } else {
            vec![uniform; states]
        };
        let optimistic = reward_hat.iter().zip(&bonus_table).map(|(r, b)| r + b).collect();
        groups.push(GroupEstimate {
            kernel: TransitionKernel::for_group(g, states, initial, table)?,
            reward_hat,
            bonus: bonus_table,
            optimistic,
            visits,
        });
    }
    Ok(EstimatedModel {
        space,
        k,
        delta,
        groups,
    })
}

/// Relaxations and reachability margin for one policy update. The values
/// do not depend on the step, so a single scalar covers every `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxationSchedule {
    pub k: u64,
    pub delta: f64,
    pub epsilon: f64,
    pub eta: f64,
    pub c_hat: f64,
    pub d_hat: f64,
    pub n_min: Vec<u64>,
    pub p_min: Vec<f64>,
}

impl RelaxationSchedule {
    pub fn from_model(model: &EstimatedModel) -> Self {
        let inputs = model.schedule_inputs();
        let n_min: Vec<u64> = (0..model.groups.len()).map(|g| model.n_min(g)).collect();
        let p_min: Vec<f64> = (0..model.groups.len()).map(|g| model.p_min(g)).collect();
        let pairs: Vec<(u64, f64)> = n_min.iter().copied().zip(p_min.iter().copied()).collect();
        Self {
            k: model.k,
            delta: model.delta,
            epsilon: inputs.epsilon,
            eta: eta(model.k),
            c_hat: compat_c(&n_min, &inputs),
            d_hat: compat_d(&pairs, &inputs),
            n_min,
            p_min,
        }
    }

    pub fn c_per_step(&self, horizon: usize) -> Vec<f64> {
        vec![self.c_hat; horizon]
    }

    pub fn d_per_step(&self, horizon: usize) -> Vec<f64> {
        vec![self.d_hat; horizon]
    }
}
