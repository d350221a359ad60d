//! Finite-horizon model and exact computations.
//!
//! States are `s = 2x + y` with feature `x` and hidden qualification `y`.
//! Actions are `0` (reject) and `1` (accept). Every table is dense and
//! row-major over `(s, a)`. Steps are zero-based in the API: `h` runs over
//! `0..horizon`.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::abs;
use crate::{ACTIONS, DENOMINATOR_FLOOR};

/// Row sums closer to one than this are silently renormalized.
pub const RENORMALIZE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateSpace {
    features: usize,
    horizon: usize,
}

impl StateSpace {
    pub fn new(features: usize, horizon: usize) -> Result<Self> {
        if features == 0 {
            return Err(Error::Precondition("feature count must be at least 1".into()));
        }
        if horizon == 0 {
            return Err(Error::Precondition("horizon must be at least 1".into()));
        }
        Ok(Self { features, horizon })
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// `S = 2 * |X|`.
    pub fn states(&self) -> usize {
        2 * self.features
    }

    #[inline]
    pub fn state(&self, x: usize, y: usize) -> usize {
        debug_assert!(x < self.features && y < 2);
        2 * x + y
    }

    #[inline]
    pub fn decompose(&self, s: usize) -> (usize, usize) {
        (s / 2, s % 2)
    }
}

fn validate_distribution(values: &mut [f64], group: usize, row: Option<(usize, usize)>) -> Result<()> {
    let mut sum = 0.0;
    for &p in values.iter() {
        if !(p >= 0.0) || !p.is_finite() {
            return Err(Error::InvalidDistribution { group, row, sum: p });
        }
        sum += p;
    }
    if abs(sum - 1.0) > RENORMALIZE_TOLERANCE {
        return Err(Error::InvalidDistribution { group, row, sum });
    }
    if sum != 1.0 {
        for p in values.iter_mut() {
            *p /= sum;
        }
    }
    Ok(())
}

fn check_len(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::Shape {
            what,
            expected,
            found,
        })
    }
}

/// Time-invariant transition table `p(s'|s,a)` plus the distribution of the
/// first state of an episode.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionKernel {
    states: usize,
    initial: Vec<f64>,
    table: Vec<f64>,
}

impl TransitionKernel {
    /// `table` holds `S * A` rows of length `S`, row index `2s + a`.
    pub fn new(states: usize, initial: Vec<f64>, table: Vec<f64>) -> Result<Self> {
        Self::for_group(0, states, initial, table)
    }

    /// Same as [`TransitionKernel::new`] but tags validation errors with `group`.
    pub fn for_group(group: usize, states: usize, mut initial: Vec<f64>, mut table: Vec<f64>) -> Result<Self> {
        check_len("initial distribution", states, initial.len())?;
        check_len("kernel table", states * ACTIONS * states, table.len())?;
        validate_distribution(&mut initial, group, None)?;
        for s in 0..states {
            for a in 0..ACTIONS {
                let r = (s * ACTIONS + a) * states;
                validate_distribution(&mut table[r..r + states], group, Some((s, a)))?;
            }
        }
        Ok(Self {
            states,
            initial,
            table,
        })
    }

    pub fn uniform(states: usize) -> Self {
        let p = 1.0 / states as f64;
        Self {
            states,
            initial: vec![p; states],
            table: vec![p; states * ACTIONS * states],
        }
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    #[inline]
    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        let r = (s * ACTIONS + a) * self.states;
        &self.table[r..r + self.states]
    }

    #[inline]
    pub fn prob(&self, s: usize, a: usize, next: usize) -> f64 {
        self.table[(s * ACTIONS + a) * self.states + next]
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    /// Smallest entry of the table (the initial distribution is excluded).
    pub fn min_entry(&self) -> f64 {
        self.table.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `p(y'=1 | s, a)`.
    pub fn qualify_prob(&self, s: usize, a: usize) -> f64 {
        self.row(s, a).iter().skip(1).step_by(2).sum()
    }
}

/// How realized rewards scatter around the mean table.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum RewardNoise {
    #[default]
    Deterministic,
    /// Reward is 1 with probability equal to the mean, else 0.
    Bernoulli,
    /// Uniform on `[m - w, m + w]` with `w = min(half_width, m, 1 - m)`.
    UniformBand { half_width: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewardModel {
    mean: Vec<f64>,
    noise: RewardNoise,
    raw_bounds: Option<(f64, f64)>,
}

impl RewardModel {
    /// `mean` is indexed `2s + a` and must lie in `[0, 1]`.
    pub fn new(states: usize, mean: Vec<f64>) -> Result<Self> {
        check_len("reward table", states * ACTIONS, mean.len())?;
        if let Some(&bad) = mean.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(Error::OutOfRange {
                what: "normalized mean reward",
                value: bad,
            });
        }
        Ok(Self {
            mean,
            noise: RewardNoise::Deterministic,
            raw_bounds: None,
        })
    }

    /// Maps raw rewards in `[lower, upper]` affinely onto `[0, 1]`.
    pub fn from_raw(states: usize, raw: &[f64], lower: f64, upper: f64) -> Result<Self> {
        if !(upper > lower) {
            return Err(Error::OutOfRange {
                what: "reward bound width",
                value: upper - lower,
            });
        }
        let mean = raw.iter().map(|r| (r - lower) / (upper - lower)).collect();
        let mut model = Self::new(states, mean)?;
        model.raw_bounds = Some((lower, upper));
        Ok(model)
    }

    pub fn with_noise(mut self, noise: RewardNoise) -> Result<Self> {
        if let RewardNoise::UniformBand { half_width } = noise {
            if !(half_width >= 0.0) {
                return Err(Error::OutOfRange {
                    what: "reward noise half width",
                    value: half_width,
                });
            }
        }
        self.noise = noise;
        Ok(self)
    }

    pub fn mean_table(&self) -> &[f64] {
        &self.mean
    }

    #[inline]
    pub fn mean(&self, s: usize, a: usize) -> f64 {
        self.mean[s * ACTIONS + a]
    }

    pub fn noise(&self) -> RewardNoise {
        self.noise
    }

    pub fn raw_bounds(&self) -> Option<(f64, f64)> {
        self.raw_bounds
    }

    /// Draws a reward using a single uniform variate `u` in `[0, 1)`.
    pub fn sample(&self, s: usize, a: usize, u: f64) -> f64 {
        let m = self.mean(s, a);
        match self.noise {
            RewardNoise::Deterministic => m,
            RewardNoise::Bernoulli => {
                if u < m {
                    1.0
                } else {
                    0.0
                }
            }
            RewardNoise::UniformBand { half_width } => {
                let w = half_width.min(m).min(1.0 - m);
                m + w * (2.0 * u - 1.0)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupModel {
    pub id: String,
    pub proportion: f64,
    pub kernel: TransitionKernel,
    pub reward: RewardModel,
}

/// Ground truth of an environment.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    space: StateSpace,
    groups: Vec<GroupModel>,
}

impl ProblemSpec {
    pub fn new(space: StateSpace, mut groups: Vec<GroupModel>) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::Precondition("a problem needs at least one group".into()));
        }
        let states = space.states();
        for g in &groups {
            check_len("group kernel states", states, g.kernel.states())?;
            check_len("group reward table", states * ACTIONS, g.reward.mean_table().len())?;
        }
        let mut proportions: Vec<f64> = groups.iter().map(|g| g.proportion).collect();
        normalize_proportions(&mut proportions)?;
        for (g, p) in groups.iter_mut().zip(proportions) {
            g.proportion = p;
        }
        Ok(Self { space, groups })
    }

    pub fn space(&self) -> StateSpace {
        self.space
    }

    pub fn groups(&self) -> &[GroupModel] {
        &self.groups
    }

    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    pub fn proportions(&self) -> Vec<f64> {
        self.groups.iter().map(|g| g.proportion).collect()
    }

    pub fn kernels(&self) -> Vec<TransitionKernel> {
        self.groups.iter().map(|g| g.kernel.clone()).collect()
    }

    /// The planning view with mean rewards.
    pub fn planning_model(&self) -> PlanningModel {
        PlanningModel {
            space: self.space,
            proportions: self.proportions(),
            kernels: self.kernels(),
            rewards: self.groups.iter().map(|g| g.reward.mean_table().to_vec()).collect(),
        }
    }
}

fn normalize_proportions(p: &mut [f64]) -> Result<()> {
    let mut sum = 0.0;
    for &v in p.iter() {
        if !(v >= 0.0) || !v.is_finite() {
            return Err(Error::OutOfRange {
                what: "group proportion",
                value: v,
            });
        }
        sum += v;
    }
    if abs(sum - 1.0) > RENORMALIZE_TOLERANCE {
        return Err(Error::OutOfRange {
            what: "sum of group proportions",
            value: sum,
        });
    }
    for v in p.iter_mut() {
        *v /= sum;
    }
    Ok(())
}

/// What the planner sees: kernels, reward tables (not necessarily in
/// `[0, 1]`, optimistic rewards exceed it) and group proportions.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanningModel {
    pub space: StateSpace,
    pub proportions: Vec<f64>,
    pub kernels: Vec<TransitionKernel>,
    pub rewards: Vec<Vec<f64>>,
}

impl PlanningModel {
    pub fn new(
        space: StateSpace,
        mut proportions: Vec<f64>,
        kernels: Vec<TransitionKernel>,
        rewards: Vec<Vec<f64>>,
    ) -> Result<Self> {
        check_len("group kernels", proportions.len(), kernels.len())?;
        check_len("group rewards", proportions.len(), rewards.len())?;
        for (k, r) in kernels.iter().zip(&rewards) {
            check_len("kernel states", space.states(), k.states())?;
            check_len("reward table", space.states() * ACTIONS, r.len())?;
        }
        normalize_proportions(&mut proportions)?;
        Ok(Self {
            space,
            proportions,
            kernels,
            rewards,
        })
    }

    pub fn group_count(&self) -> usize {
        self.proportions.len()
    }

    pub fn occupancy(&self, policy: &Policy) -> Result<OccupancyMeasure> {
        forward_occupancy(policy, &self.kernels)
    }

    pub fn reward_profile(&self, occ: &OccupancyMeasure) -> Result<Vec<f64>> {
        expected_reward_profile(occ, &self.rewards, &self.proportions)
    }

    /// `sum_h R_h`, the population return of `policy`.
    pub fn total_reward(&self, policy: &Policy) -> Result<f64> {
        let occ = self.occupancy(policy)?;
        Ok(self.reward_profile(&occ)?.iter().sum())
    }

    pub fn values(&self, policy: &Policy) -> Result<ValueFunctions> {
        value_functions(policy, &self.kernels, &self.rewards)
    }
}

/// Group-dependent acceptance probabilities `pi^g_h(a=1 | x)`.
///
/// The qualification `y` is not an input, so x-only dependence holds by
/// construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    groups: usize,
    horizon: usize,
    features: usize,
    accept: Vec<f64>,
}

impl Policy {
    /// `accept` is indexed `(g * H + h) * |X| + x`.
    pub fn new(groups: usize, space: StateSpace, accept: Vec<f64>) -> Result<Self> {
        check_len("policy", groups * space.horizon() * space.features(), accept.len())?;
        if let Some(&bad) = accept.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::OutOfRange {
                what: "acceptance probability",
                value: bad,
            });
        }
        Ok(Self {
            groups,
            horizon: space.horizon(),
            features: space.features(),
            accept,
        })
    }

    pub fn constant(groups: usize, space: StateSpace, value: f64) -> Result<Self> {
        Self::new(groups, space, vec![value; groups * space.horizon() * space.features()])
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn features(&self) -> usize {
        self.features
    }

    #[inline]
    pub fn index(&self, group: usize, h: usize, x: usize) -> usize {
        (group * self.horizon + h) * self.features + x
    }

    #[inline]
    pub fn accept(&self, group: usize, h: usize, x: usize) -> f64 {
        self.accept[self.index(group, h, x)]
    }

    /// `pi(a | x)` for either action.
    #[inline]
    pub fn action_prob(&self, group: usize, h: usize, x: usize, a: usize) -> f64 {
        let p = self.accept(group, h, x);
        if a == 1 {
            p
        } else {
            1.0 - p
        }
    }

    pub fn set(&mut self, group: usize, h: usize, x: usize, value: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::OutOfRange {
                what: "acceptance probability",
                value,
            });
        }
        let i = self.index(group, h, x);
        self.accept[i] = value;
        Ok(())
    }

    pub fn params(&self) -> &[f64] {
        &self.accept
    }

    /// Smallest probability assigned to any action anywhere.
    pub fn min_action_probability(&self) -> f64 {
        self.accept
            .iter()
            .map(|&p| p.min(1.0 - p))
            .fold(f64::INFINITY, f64::min)
    }

    /// Membership in the reachability class: both actions keep at least `eta`.
    pub fn in_class(&self, eta: f64) -> bool {
        self.min_action_probability() >= eta - 1e-12
    }

    /// Clamps every entry onto `[eta, 1 - eta]`.
    pub fn project(&mut self, eta: f64) {
        let (lo, hi) = (eta, 1.0 - eta);
        for p in &mut self.accept {
            *p = p.clamp(lo, hi);
        }
    }
}

/// `rho^g(x, y, a, h)` for every group.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyMeasure {
    groups: usize,
    horizon: usize,
    states: usize,
    data: Vec<f64>,
}

impl OccupancyMeasure {
    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn states(&self) -> usize {
        self.states
    }

    #[inline]
    fn offset(&self, group: usize, h: usize) -> usize {
        (group * self.horizon + h) * self.states * ACTIONS
    }

    /// Slice of `rho(s, a)` at one step, indexed `2s + a`.
    pub fn step(&self, group: usize, h: usize) -> &[f64] {
        let o = self.offset(group, h);
        &self.data[o..o + self.states * ACTIONS]
    }

    #[inline]
    pub fn rho(&self, group: usize, x: usize, y: usize, a: usize, h: usize) -> f64 {
        self.step(group, h)[(2 * x + y) * ACTIONS + a]
    }

    pub fn step_mass(&self, group: usize, h: usize) -> f64 {
        self.step(group, h).iter().sum()
    }
}

/// Propagates the initial distribution forward through `policy` and the
/// per-group kernels.
pub fn forward_occupancy(policy: &Policy, kernels: &[TransitionKernel]) -> Result<OccupancyMeasure> {
    check_len("kernels per policy group", policy.groups(), kernels.len())?;
    let states = 2 * policy.features();
    let horizon = policy.horizon();
    let mut data = vec![0.0; policy.groups() * horizon * states * ACTIONS];
    let mut mu = vec![0.0; states];
    let mut next = vec![0.0; states];
    for (g, kernel) in kernels.iter().enumerate() {
        check_len("kernel states", states, kernel.states())?;
        mu.copy_from_slice(kernel.initial());
        for h in 0..horizon {
            let o = (g * horizon + h) * states * ACTIONS;
            let step = &mut data[o..o + states * ACTIONS];
            next.iter_mut().for_each(|v| *v = 0.0);
            for s in 0..states {
                let p1 = policy.accept(g, h, s / 2);
                let r0 = mu[s] * (1.0 - p1);
                let r1 = mu[s] * p1;
                step[s * ACTIONS] = r0;
                step[s * ACTIONS + 1] = r1;
                if h + 1 < horizon {
                    for (a, r) in [(0, r0), (1, r1)] {
                        if r != 0.0 {
                            for (n, p) in next.iter_mut().zip(kernel.row(s, a)) {
                                *n += r * p;
                            }
                        }
                    }
                }
            }
            core::mem::swap(&mut mu, &mut next);
        }
    }
    Ok(OccupancyMeasure {
        groups: policy.groups(),
        horizon,
        states,
        data,
    })
}

/// `Q(s,a,h)` and `V(s,h)` per group, with `V(., H) = 0` (zero-based).
#[derive(Debug, Clone, PartialEq)]
pub struct ValueFunctions {
    horizon: usize,
    states: usize,
    q: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl ValueFunctions {
    #[inline]
    pub fn q(&self, group: usize, s: usize, a: usize, h: usize) -> f64 {
        self.q[group][(h * self.states + s) * ACTIONS + a]
    }

    /// Defined for `h` in `0..=H`; the last layer is zero.
    #[inline]
    pub fn v(&self, group: usize, s: usize, h: usize) -> f64 {
        self.v[group][h * self.states + s]
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// `sum_s p_init(s) V(s, 0)` for one group.
    pub fn initial_value(&self, group: usize, kernel: &TransitionKernel) -> f64 {
        kernel
            .initial()
            .iter()
            .enumerate()
            .map(|(s, p)| p * self.v(group, s, 0))
            .sum()
    }
}

/// Backward recursion `Q = r + P V'`, `V = E_pi Q`.
pub fn value_functions(policy: &Policy, kernels: &[TransitionKernel], rewards: &[Vec<f64>]) -> Result<ValueFunctions> {
    check_len("kernels per policy group", policy.groups(), kernels.len())?;
    check_len("rewards per policy group", policy.groups(), rewards.len())?;
    let states = 2 * policy.features();
    let horizon = policy.horizon();
    let mut qs = Vec::with_capacity(kernels.len());
    let mut vs = Vec::with_capacity(kernels.len());
    for (g, (kernel, reward)) in kernels.iter().zip(rewards).enumerate() {
        check_len("kernel states", states, kernel.states())?;
        check_len("reward table", states * ACTIONS, reward.len())?;
        let mut q = vec![0.0; horizon * states * ACTIONS];
        let mut v = vec![0.0; (horizon + 1) * states];
        for h in (0..horizon).rev() {
            let (now, later) = v.split_at_mut((h + 1) * states);
            let v_next = &later[..states];
            let v_now = &mut now[h * states..];
            for s in 0..states {
                let p1 = policy.accept(g, h, s / 2);
                let mut val = 0.0;
                for a in 0..ACTIONS {
                    let cont: f64 = kernel.row(s, a).iter().zip(v_next).map(|(p, w)| p * w).sum();
                    let qa = reward[s * ACTIONS + a] + cont;
                    q[(h * states + s) * ACTIONS + a] = qa;
                    val += if a == 1 { p1 } else { 1.0 - p1 } * qa;
                }
                v_now[s] = val;
            }
        }
        qs.push(q);
        vs.push(v);
    }
    Ok(ValueFunctions {
        horizon,
        states,
        q: qs,
        v: vs,
    })
}

/// `R_h = sum_g p_g sum_{s,a} rho^g(s,a,h) r^g(s,a)` for every step.
pub fn expected_reward_profile(occ: &OccupancyMeasure, rewards: &[Vec<f64>], proportions: &[f64]) -> Result<Vec<f64>> {
    check_len("rewards per occupancy group", occ.groups(), rewards.len())?;
    check_len("proportions per occupancy group", occ.groups(), proportions.len())?;
    let mut profile = vec![0.0; occ.horizon()];
    for (g, (reward, w)) in rewards.iter().zip(proportions).enumerate() {
        check_len("reward table", occ.states() * ACTIONS, reward.len())?;
        for (h, out) in profile.iter_mut().enumerate() {
            let e: f64 = occ.step(g, h).iter().zip(reward).map(|(r, v)| r * v).sum();
            *out += w * e;
        }
    }
    Ok(profile)
}

/// `P(a_h = 1)` for one group.
///
/// Divided by the step mass, which equals one up to rounding, so that a
/// policy accepting everybody yields exactly `1.0`.
pub fn action_marginal(occ: &OccupancyMeasure, group: usize, h: usize) -> f64 {
    let step = occ.step(group, h);
    let mut total = 0.0;
    let mut accepted = 0.0;
    for pair in step.chunks_exact(ACTIONS) {
        total += pair[0] + pair[1];
        accepted += pair[1];
    }
    accepted / total
}

/// `P(a_h = 1 | y_h = 1)` for one group.
pub fn eqopt_conditional(occ: &OccupancyMeasure, group: usize, h: usize) -> Result<f64> {
    let (num, den) = eqopt_parts(occ, group, h);
    if !(den > DENOMINATOR_FLOOR) {
        return Err(Error::DegenerateConditioning {
            group,
            step: h,
            denominator: den,
        });
    }
    Ok(num / den)
}

/// `(P(a=1, y=1), P(y=1))` at step `h`.
pub fn eqopt_parts(occ: &OccupancyMeasure, group: usize, h: usize) -> (f64, f64) {
    let step = occ.step(group, h);
    let mut num = 0.0;
    let mut den = 0.0;
    // qualified states are the odd indices
    for pair in step.chunks_exact(2 * ACTIONS) {
        num += pair[3];
        den += pair[2] + pair[3];
    }
    (num, den)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_feature_spec(horizon: usize) -> (StateSpace, TransitionKernel) {
        let space = StateSpace::new(1, horizon).unwrap();
        let kernel = TransitionKernel::new(2, vec![0.5, 0.5], vec![0.5; 8]).unwrap();
        (space, kernel)
    }

    #[test]
    fn single_step_all_accept() {
        let (space, kernel) = one_feature_spec(1);
        let policy = Policy::constant(1, space, 1.0).unwrap();
        let occ = forward_occupancy(&policy, &[kernel]).unwrap();
        assert_eq!(occ.rho(0, 0, 0, 1, 0), 0.5);
        assert_eq!(occ.rho(0, 0, 1, 1, 0), 0.5);
        assert_eq!(occ.rho(0, 0, 0, 0, 0), 0.0);
        assert_eq!(occ.rho(0, 0, 1, 0, 0), 0.0);
        assert_eq!(action_marginal(&occ, 0, 0), 1.0);
    }

    #[test]
    fn identity_kernel_keeps_state_marginal() {
        let space = StateSpace::new(3, 5).unwrap();
        let s = space.states();
        let mut table = vec![0.0; s * 2 * s];
        for st in 0..s {
            for a in 0..2 {
                table[(st * 2 + a) * s + st] = 1.0;
            }
        }
        let init = vec![0.1, 0.2, 0.05, 0.15, 0.3, 0.2];
        let kernel = TransitionKernel::new(s, init.clone(), table).unwrap();
        let policy = Policy::new(1, space, vec![0.3, 0.9, 0.5].repeat(5)).unwrap();
        let occ = forward_occupancy(&policy, &[kernel]).unwrap();
        for h in 0..5 {
            for st in 0..s {
                let m = occ.step(0, h)[st * 2] + occ.step(0, h)[st * 2 + 1];
                assert!((m - init[st]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn terminal_layer_q_is_reward() {
        let (space, kernel) = one_feature_spec(1);
        let reward = vec![0.1, 0.2, 0.3, 0.4];
        let policy = Policy::constant(1, space, 0.7).unwrap();
        let vf = value_functions(&policy, &[kernel], &[reward.clone()]).unwrap();
        for s in 0..2 {
            for a in 0..2 {
                assert_eq!(vf.q(0, s, a, 0), reward[s * 2 + a]);
            }
            assert_eq!(vf.v(0, s, 1), 0.0);
        }
    }

    #[test]
    fn constant_reward_telescopes_to_horizon() {
        let (space, kernel) = one_feature_spec(6);
        let policy = Policy::constant(1, space, 0.25).unwrap();
        let vf = value_functions(&policy, &[kernel], &[vec![1.0; 4]]).unwrap();
        for s in 0..2 {
            assert!((vf.v(0, s, 0) - 6.0).abs() < 1e-12);
        }
    }

    #[test]
    fn two_step_values_match_trajectory_enumeration() {
        // one feature, so S = 2 states; enumerate (s1,a1,s2,a2)
        let space = StateSpace::new(1, 2).unwrap();
        let init = vec![0.35, 0.65];
        let table = vec![0.2, 0.8, 0.6, 0.4, 0.9, 0.1, 0.3, 0.7];
        let kernel = TransitionKernel::new(2, init.clone(), table).unwrap();
        let reward = vec![0.1, 0.7, 0.4, 0.95];
        let policy = Policy::new(1, space, vec![0.3, 0.8]).unwrap();
        let vf = value_functions(&policy, &[kernel.clone()], &[reward.clone()]).unwrap();
        let mut expected = 0.0;
        for s1 in 0..2 {
            for a1 in 0..2 {
                let p_a1 = policy.action_prob(0, 0, 0, a1);
                for s2 in 0..2 {
                    for a2 in 0..2 {
                        let p = init[s1] * p_a1 * kernel.prob(s1, a1, s2) * policy.action_prob(0, 1, 0, a2);
                        expected += p * (reward[s1 * 2 + a1] + reward[s2 * 2 + a2]);
                    }
                }
            }
        }
        assert!((vf.initial_value(0, &kernel) - expected).abs() < 1e-14);
    }

    #[test]
    fn value_is_policy_average_of_q() {
        let (space, kernel) = one_feature_spec(3);
        let policy = Policy::new(1, space, vec![0.2, 0.6, 0.9]).unwrap();
        let vf = value_functions(&policy, &[kernel], &[vec![0.3, 0.1, 0.8, 0.5]]).unwrap();
        for h in 0..3 {
            for s in 0..2 {
                let avg = policy.action_prob(0, h, 0, 0) * vf.q(0, s, 0, h) + policy.action_prob(0, h, 0, 1) * vf.q(0, s, 1, h);
                assert!((avg - vf.v(0, s, h)).abs() < 1e-12);
                assert!(vf.v(0, s, h) >= 0.0 && vf.v(0, s, h) <= (3 - h) as f64);
            }
        }
    }

    #[test]
    fn reward_profile_examples() {
        let (space, kernel) = one_feature_spec(1);
        let policy = Policy::constant(1, space, 1.0).unwrap();
        let occ = forward_occupancy(&policy, &[kernel]).unwrap();
        let zero = expected_reward_profile(&occ, &[vec![0.0; 4]], &[1.0]).unwrap();
        assert_eq!(zero, vec![0.0]);
        // r((0,1), 1) = 1, state (0,1) has index 1
        let r = vec![0.0, 0.0, 0.0, 1.0];
        let prof = expected_reward_profile(&occ, &[r], &[1.0]).unwrap();
        assert_eq!(prof, vec![0.5]);
    }

    #[test]
    fn eqopt_conditional_of_constant_policy_is_the_constant() {
        let space = StateSpace::new(2, 3).unwrap();
        let kernel = TransitionKernel::new(
            4,
            vec![0.1, 0.4, 0.3, 0.2],
            [0.1, 0.2, 0.3, 0.4].repeat(8),
        )
        .unwrap();
        let policy = Policy::constant(1, space, 0.37).unwrap();
        let occ = forward_occupancy(&policy, &[kernel.clone()]).unwrap();
        for h in 0..3 {
            assert!((eqopt_conditional(&occ, 0, h).unwrap() - 0.37).abs() < 1e-14);
        }
        let all = Policy::constant(1, space, 1.0).unwrap();
        let occ = forward_occupancy(&all, &[kernel.clone()]).unwrap();
        assert_eq!(eqopt_conditional(&occ, 0, 2).unwrap(), 1.0);
        let none = Policy::constant(1, space, 0.0).unwrap();
        let occ = forward_occupancy(&none, &[kernel]).unwrap();
        assert_eq!(action_marginal(&occ, 0, 1), 0.0);
    }

    #[test]
    fn eqopt_conditional_rejects_missing_qualified_mass() {
        let space = StateSpace::new(1, 2).unwrap();
        // qualification never happens
        let kernel = TransitionKernel::new(2, vec![1.0, 0.0], [1.0, 0.0].repeat(4)).unwrap();
        let policy = Policy::constant(1, space, 0.5).unwrap();
        let occ = forward_occupancy(&policy, &[kernel]).unwrap();
        match eqopt_conditional(&occ, 0, 1) {
            Err(Error::DegenerateConditioning { denominator, .. }) => assert_eq!(denominator, 0.0),
            other => panic!("expected degenerate conditioning, got {other:?}"),
        }
    }

    #[test]
    fn construction_renormalizes_small_deviations_and_rejects_large() {
        let k = TransitionKernel::new(2, vec![0.5, 0.5 + 1e-12], vec![0.5; 8]).unwrap();
        assert!((k.initial().iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let err = TransitionKernel::for_group(3, 2, vec![0.5, 0.5], [0.5, 0.6].repeat(4)).unwrap_err();
        assert!(matches!(err, Error::InvalidDistribution { group: 3, row: Some((0, 0)), .. }));
        assert!(matches!(
            TransitionKernel::new(2, vec![1.0], vec![0.5; 8]),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn shape_errors_surface() {
        let (space, kernel) = one_feature_spec(2);
        let policy = Policy::constant(2, space, 0.5).unwrap();
        assert!(matches!(forward_occupancy(&policy, &[kernel]), Err(Error::Shape { .. })));
    }
}
