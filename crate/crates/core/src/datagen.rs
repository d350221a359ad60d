//! Benchmark instances: a synthetic two-group environment and a
//! credit-score environment driven by per-group empirical score data.
//!
//! Both use five feature levels read as scores `{0, 25, 50, 75, 100}` and
//! the reward
//!
//! ```text
//! r((x, y), 1) =  beta1 * score(x)   if y = 1
//! r((x, y), 1) = -beta2 * score(x)   if y = 0
//! r((x, y), 0) =  0
//! ```
//!
//! mapped onto `[0, 1]` with the bounds `l = -max_g beta2_g * 100` and
//! `u = max_g beta1_g * 100`, shared by all groups.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::mdp::{GroupModel, ProblemSpec, RewardModel, StateSpace, TransitionKernel};
use crate::math::abs;
use crate::rng::StreamRng;
use crate::ACTIONS;

pub const FEATURES: usize = 5;
pub const DEFAULT_HORIZON: usize = 8;
pub const MAX_SCORE: f64 = 100.0;
const ROW_TOLERANCE: f64 = 1e-9;

/// Feature-move rows `D_j` of the synthetic instance, shared by both groups
/// and both next qualifications.
pub const SYNTHETIC_MOVES: [[f64; FEATURES]; FEATURES] = [
    [0.3, 0.25, 0.2, 0.15, 0.1],
    [0.22, 0.26, 0.22, 0.17, 0.13],
    [0.17, 0.21, 0.24, 0.21, 0.17],
    [0.13, 0.17, 0.22, 0.26, 0.22],
    [0.1, 0.15, 0.2, 0.25, 0.3],
];

/// Score-model feature moves `G[y][a][j]`, shared by both groups.
pub const FICO_MOVES: [[[[f64; FEATURES]; FEATURES]; ACTIONS]; 2] = [
    // y = 0
    [
        // a = 0
        [
            [0.38, 0.24, 0.19, 0.13, 0.06],
            [0.25, 0.3, 0.2, 0.15, 0.1],
            [0.18, 0.23, 0.27, 0.18, 0.14],
            [0.14, 0.18, 0.23, 0.27, 0.18],
            [0.1, 0.15, 0.2, 0.25, 0.3],
        ],
        // a = 1
        [
            [0.3, 0.25, 0.2, 0.15, 0.1],
            [0.18, 0.27, 0.23, 0.18, 0.14],
            [0.14, 0.18, 0.27, 0.23, 0.18],
            [0.1, 0.15, 0.2, 0.3, 0.25],
            [0.1, 0.15, 0.2, 0.25, 0.3],
        ],
    ],
    // y = 1
    [
        [
            [0.38, 0.24, 0.19, 0.13, 0.06],
            [0.25, 0.3, 0.2, 0.15, 0.1],
            [0.18, 0.23, 0.27, 0.18, 0.14],
            [0.14, 0.18, 0.23, 0.27, 0.18],
            [0.1, 0.15, 0.2, 0.25, 0.3],
        ],
        [
            [0.3, 0.25, 0.2, 0.15, 0.1],
            [0.18, 0.27, 0.23, 0.18, 0.14],
            [0.14, 0.18, 0.27, 0.23, 0.18],
            [0.1, 0.15, 0.2, 0.3, 0.25],
            [0.06, 0.13, 0.19, 0.24, 0.38],
        ],
    ],
];

/// Identity, population share and reward weights of one group.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupSetup {
    pub id: String,
    pub proportion: f64,
    pub beta1: f64,
    pub beta2: f64,
}

/// The two default groups: `alpha` with `(0.1, 0.9)`, `beta` with `(0.9, 0.1)`.
pub fn default_groups() -> Vec<GroupSetup> {
    vec![
        GroupSetup {
            id: "alpha".to_string(),
            proportion: 0.5,
            beta1: 0.1,
            beta2: 0.9,
        },
        GroupSetup {
            id: "beta".to_string(),
            proportion: 0.5,
            beta1: 0.9,
            beta2: 0.1,
        },
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub groups: Vec<GroupSetup>,
    pub horizon: usize,
    /// `p(y' = 1 | y, a)` indexed `[y][a]`.
    pub qualify: [[f64; ACTIONS]; 2],
    /// Feature moves per group, indexed `[g][y'][x][x']`.
    pub moves: Vec<[Vec<Vec<f64>>; 2]>,
    /// `P(x_0 | y_0)` indexed `[y_0][x]`.
    pub initial_feature: [Vec<f64>; 2],
    /// `P(y_0 = 1)`.
    pub initial_qualified: f64,
}

fn table_rows<const N: usize>(rows: &[[f64; N]]) -> Vec<Vec<f64>> {
    rows.iter().map(|r| r.to_vec()).collect()
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        let groups = default_groups();
        let moves = groups
            .iter()
            .map(|_| [table_rows(&SYNTHETIC_MOVES), table_rows(&SYNTHETIC_MOVES)])
            .collect();
        Self {
            groups,
            horizon: DEFAULT_HORIZON,
            qualify: [[0.4, 0.6], [0.4, 0.6]],
            moves,
            initial_feature: [vec![0.2; FEATURES], vec![0.2; FEATURES]],
            initial_qualified: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FicoConfig {
    pub groups: Vec<GroupSetup>,
    pub horizon: usize,
    /// Feature moves per group, indexed `[g][y][a][x][x']`.
    pub moves: Vec<[[Vec<Vec<f64>>; ACTIONS]; 2]>,
}

impl Default for FicoConfig {
    fn default() -> Self {
        let groups = default_groups();
        let moves = groups
            .iter()
            .map(|_| {
                [
                    [table_rows(&FICO_MOVES[0][0]), table_rows(&FICO_MOVES[0][1])],
                    [table_rows(&FICO_MOVES[1][0]), table_rows(&FICO_MOVES[1][1])],
                ]
            })
            .collect();
        Self {
            groups,
            horizon: DEFAULT_HORIZON,
            moves,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GeneratorConfig {
    Synthetic(SyntheticConfig),
    Fico(FicoConfig),
}

/// Per-group score data: `P(x)` and `P(y = 1 | x)` over the five levels.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalGroup {
    pub id: String,
    pub score_marginal: Vec<f64>,
    pub qualify_given_score: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalDistribution {
    pub groups: Vec<EmpiricalGroup>,
}

impl EmpiricalDistribution {
    pub fn validate(&self) -> Result<()> {
        if self.groups.is_empty() {
            return Err(Error::Precondition("empirical file lists no groups".into()));
        }
        for g in &self.groups {
            if g.score_marginal.len() != FEATURES || g.qualify_given_score.len() != FEATURES {
                return Err(Error::Precondition(format!(
                    "empirical group {:?}: score_marginal and qualify_given_score need {FEATURES} entries each",
                    g.id
                )));
            }
            check_row(&g.score_marginal, || format!("score_marginal of empirical group {:?}", g.id))?;
            if let Some(&p) = g.qualify_given_score.iter().find(|p| !(0.0..=1.0).contains(*p)) {
                return Err(Error::OutOfRange {
                    what: "qualify_given_score entry",
                    value: p,
                });
            }
        }
        Ok(())
    }

    pub fn group(&self, id: &str) -> Option<&EmpiricalGroup> {
        self.groups.iter().find(|g| g.id == id)
    }
}

fn check_row(row: &[f64], name: impl Fn() -> String) -> Result<()> {
    if row.iter().any(|p| !(*p >= 0.0)) {
        return Err(Error::Precondition(format!("{} has a negative entry", name())));
    }
    let sum: f64 = row.iter().sum();
    if abs(sum - 1.0) > ROW_TOLERANCE {
        return Err(Error::Precondition(format!("{} sums to {sum}, not 1", name())));
    }
    Ok(())
}

fn check_square(rows: &[Vec<f64>], name: impl Fn(usize) -> String) -> Result<()> {
    if rows.len() != FEATURES {
        return Err(Error::Shape {
            what: "feature-move rows",
            expected: FEATURES,
            found: rows.len(),
        });
    }
    for (j, r) in rows.iter().enumerate() {
        if r.len() != FEATURES {
            return Err(Error::Shape {
                what: "feature-move row length",
                expected: FEATURES,
                found: r.len(),
            });
        }
        check_row(r, || name(j))?;
    }
    Ok(())
}

fn check_groups(groups: &[GroupSetup], moves: usize) -> Result<()> {
    if groups.is_empty() {
        return Err(Error::Precondition("at least one group is required".into()));
    }
    if moves != groups.len() {
        return Err(Error::Shape {
            what: "feature-move tables per group",
            expected: groups.len(),
            found: moves,
        });
    }
    for g in groups {
        for (what, v) in [("beta1", g.beta1), ("beta2", g.beta2)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Precondition(format!("{what} of group {:?} must lie in (0, 1), got {v}", g.id)));
            }
        }
    }
    Ok(())
}

/// Score of feature level `x`.
pub fn score(x: usize) -> f64 {
    MAX_SCORE * x as f64 / (FEATURES - 1) as f64
}

/// Raw score-based reward table, indexed `2s + a`.
pub fn raw_reward(space: StateSpace, beta1: f64, beta2: f64) -> Vec<f64> {
    let mut raw = vec![0.0; space.states() * ACTIONS];
    for x in 0..space.features() {
        raw[space.state(x, 1) * ACTIONS + 1] = beta1 * score(x);
        raw[space.state(x, 0) * ACTIONS + 1] = -beta2 * score(x);
    }
    raw
}

/// Shared normalization bounds `(l, u)`.
pub fn reward_bounds(groups: &[GroupSetup]) -> (f64, f64) {
    let l = -groups.iter().map(|g| g.beta2).fold(0.0, f64::max) * MAX_SCORE;
    let u = groups.iter().map(|g| g.beta1).fold(0.0, f64::max) * MAX_SCORE;
    (l, u)
}

fn score_rewards(space: StateSpace, groups: &[GroupSetup]) -> Result<Vec<RewardModel>> {
    let (l, u) = reward_bounds(groups);
    groups
        .iter()
        .map(|g| RewardModel::from_raw(space.states(), &raw_reward(space, g.beta1, g.beta2), l, u))
        .collect()
}

/// Kernel `p(y' | y, a) D[y'][x][x']` with `P(x_0, y_0) = P(x_0 | y_0) P(y_0)`.
pub fn build_synthetic(config: &SyntheticConfig) -> Result<ProblemSpec> {
    check_groups(&config.groups, config.moves.len())?;
    for (g, m) in config.moves.iter().enumerate() {
        for (yn, rows) in m.iter().enumerate() {
            check_square(rows, |j| format!("feature-move row D[group {g}][y' {yn}][{j}]"))?;
        }
    }
    for row in config.qualify.iter().flatten() {
        if !(0.0..=1.0).contains(row) {
            return Err(Error::OutOfRange {
                what: "qualification transition probability",
                value: *row,
            });
        }
    }
    for (y, row) in config.initial_feature.iter().enumerate() {
        if row.len() != FEATURES {
            return Err(Error::Shape {
                what: "initial feature distribution",
                expected: FEATURES,
                found: row.len(),
            });
        }
        check_row(row, || format!("initial feature distribution for y0 = {y}"))?;
    }
    if !(0.0..=1.0).contains(&config.initial_qualified) {
        return Err(Error::OutOfRange {
            what: "initial qualification probability",
            value: config.initial_qualified,
        });
    }
    let space = StateSpace::new(FEATURES, config.horizon)?;
    let states = space.states();
    let rewards = score_rewards(space, &config.groups)?;
    let mut models = Vec::with_capacity(config.groups.len());
    for (g, (setup, reward)) in config.groups.iter().zip(rewards).enumerate() {
        let moves = &config.moves[g];
        let mut table = vec![0.0; states * ACTIONS * states];
        for s in 0..states {
            let (x, y) = space.decompose(s);
            for a in 0..ACTIONS {
                let q1 = config.qualify[y][a];
                let row = &mut table[(s * ACTIONS + a) * states..(s * ACTIONS + a + 1) * states];
                for (yn, qy) in [(0, 1.0 - q1), (1, q1)] {
                    for xn in 0..FEATURES {
                        row[space.state(xn, yn)] = qy * moves[yn][x][xn];
                    }
                }
            }
        }
        let mut initial = vec![0.0; states];
        for (y, py) in [(0, 1.0 - config.initial_qualified), (1, config.initial_qualified)] {
            for x in 0..FEATURES {
                initial[space.state(x, y)] = py * config.initial_feature[y][x];
            }
        }
        models.push(GroupModel {
            id: setup.id.clone(),
            proportion: setup.proportion,
            kernel: TransitionKernel::for_group(g, states, initial, table)?,
            reward,
        });
    }
    ProblemSpec::new(space, models)
}

/// Kernel `G[y][a][x][x'] P(y' | x')` with `P(x_0, y_0) = P(x_0) P(y_0 | x_0)`.
///
/// Empirical groups are matched to the configured groups by id.
pub fn build_fico(config: &FicoConfig, empirical: &EmpiricalDistribution) -> Result<ProblemSpec> {
    check_groups(&config.groups, config.moves.len())?;
    empirical.validate()?;
    for (g, m) in config.moves.iter().enumerate() {
        for (y, per_a) in m.iter().enumerate() {
            for (a, rows) in per_a.iter().enumerate() {
                check_square(rows, |j| format!("feature-move row G[group {g}][x {j}][y {y}][a {a}]"))?;
            }
        }
    }
    let space = StateSpace::new(FEATURES, config.horizon)?;
    let states = space.states();
    let rewards = score_rewards(space, &config.groups)?;
    let mut models = Vec::with_capacity(config.groups.len());
    for (g, (setup, reward)) in config.groups.iter().zip(rewards).enumerate() {
        let data = empirical.group(&setup.id).ok_or_else(|| {
            Error::Precondition(format!(
                "empirical file has no group with id {:?} (expected {{\"groups\": [{{\"id\", \"score_marginal\": [5], \"qualify_given_score\": [5]}}]}})",
                setup.id
            ))
        })?;
        let q = &data.qualify_given_score;
        let moves = &config.moves[g];
        let mut table = vec![0.0; states * ACTIONS * states];
        for s in 0..states {
            let (x, y) = space.decompose(s);
            for a in 0..ACTIONS {
                let row = &mut table[(s * ACTIONS + a) * states..(s * ACTIONS + a + 1) * states];
                for xn in 0..FEATURES {
                    let m = moves[y][a][x][xn];
                    row[space.state(xn, 1)] = m * q[xn];
                    row[space.state(xn, 0)] = m * (1.0 - q[xn]);
                }
            }
        }
        let mut initial = vec![0.0; states];
        for x in 0..FEATURES {
            initial[space.state(x, 1)] = data.score_marginal[x] * q[x];
            initial[space.state(x, 0)] = data.score_marginal[x] * (1.0 - q[x]);
        }
        models.push(GroupModel {
            id: setup.id.clone(),
            proportion: setup.proportion,
            kernel: TransitionKernel::for_group(g, states, initial, table)?,
            reward,
        });
    }
    ProblemSpec::new(space, models)
}

pub fn build(config: &GeneratorConfig, empirical: Option<&EmpiricalDistribution>) -> Result<ProblemSpec> {
    match config {
        GeneratorConfig::Synthetic(c) => build_synthetic(c),
        GeneratorConfig::Fico(c) => match empirical {
            Some(e) => build_fico(c, e),
            None => Err(Error::Precondition(
                "the score-based instance needs an empirical distribution file".into(),
            )),
        },
    }
}

/// Random dense instance with uniform-then-normalized rows and uniform
/// rewards in `[0, 1]`.
pub fn random_spec(seed: u64, groups: usize, features: usize, horizon: usize) -> Result<ProblemSpec> {
    let space = StateSpace::new(features, horizon)?;
    let states = space.states();
    let mut rng = StreamRng::for_coords(seed, &[0x7261_6e64]);
    let draw_row = |n: usize, rng: &mut StreamRng| -> Vec<f64> {
        let raw: Vec<f64> = (0..n).map(|_| 0.05 + rng.uniform()).collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / total).collect()
    };
    let weights = draw_row(groups, &mut rng);
    let mut models = Vec::with_capacity(groups);
    for g in 0..groups {
        let initial = draw_row(states, &mut rng);
        let mut table = Vec::with_capacity(states * ACTIONS * states);
        for _ in 0..states * ACTIONS {
            table.extend(draw_row(states, &mut rng));
        }
        let mean = (0..states * ACTIONS).map(|_| rng.uniform()).collect();
        models.push(GroupModel {
            id: format!("g{g}"),
            proportion: weights[g],
            kernel: TransitionKernel::for_group(g, states, initial, table)?,
            reward: RewardModel::new(states, mean)?,
        });
    }
    ProblemSpec::new(space, models)
}

/// Minimum kernel entry of one group and where its zeros are.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelReport {
    pub group: usize,
    pub min_entry: f64,
    /// `(s, a, s')` of every zero transition.
    pub zeros: Vec<(usize, usize, usize)>,
}

impl KernelReport {
    pub fn strictly_positive(&self) -> bool {
        self.zeros.is_empty()
    }
}

/// Reports zeros in the transition kernels; zeros are legal but break
/// full reachability.
pub fn kernel_report(spec: &ProblemSpec) -> Vec<KernelReport> {
    let states = spec.space().states();
    spec.groups()
        .iter()
        .enumerate()
        .map(|(g, m)| {
            let mut zeros = Vec::new();
            for s in 0..states {
                for a in 0..ACTIONS {
                    for (n, &p) in m.kernel.row(s, a).iter().enumerate() {
                        if p == 0.0 {
                            zeros.push((s, a, n));
                        }
                    }
                }
            }
            KernelReport {
                group: g,
                min_entry: m.kernel.min_entry(),
                zeros,
            }
        })
        .collect()
}
