//! Episode simulation under the true dynamics.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::mdp::{Policy, ProblemSpec};
use crate::rng::StreamRng;

/// Resampling attempts before a dropout-emptied batch is reported as an error.
pub const MAX_DROPOUT_RETRIES: u32 = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub group: usize,
    pub steps: Vec<Step>,
    /// Number of recorded steps; equals the horizon unless the individual
    /// opted out.
    pub active_until: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeBatch {
    pub episode: u64,
    /// Trajectories per group.
    pub groups: Vec<Vec<Trajectory>>,
}

impl EpisodeBatch {
    pub fn counts(&self) -> Vec<usize> {
        self.groups.iter().map(Vec::len).collect()
    }

    /// Group whose individuals all left before the final step, if any.
    pub fn emptied_group(&self, horizon: usize) -> Option<usize> {
        self.groups
            .iter()
            .position(|ts| !ts.iter().any(|t| t.active_until == horizon))
    }
}

/// Random stream of one individual. `attempt` distinguishes dropout resamples.
pub fn individual_rng(seed: u64, episode: u64, group: usize, individual: usize, attempt: u32) -> StreamRng {
    StreamRng::for_coords(seed, &[episode, group as u64, individual as u64, attempt as u64])
}

/// Rolls one individual of `group` through the horizon.
///
/// With `survival = Some(q)`, the individual stays for step `h + 1` with
/// probability `q` after each step `h < H`.
pub fn sample_individual(
    spec: &ProblemSpec,
    policy: &Policy,
    group: usize,
    survival: Option<f64>,
    rng: &mut StreamRng,
) -> Trajectory {
    let horizon = spec.space().horizon();
    let model = &spec.groups()[group];
    let mut steps = Vec::with_capacity(horizon);
    let mut s = rng.categorical(model.kernel.initial());
    for h in 0..horizon {
        let a = usize::from(rng.bernoulli(policy.accept(group, h, s / 2)));
        let reward = model.reward.sample(s, a, rng.uniform());
        steps.push(Step {
            state: s,
            action: a,
            reward,
        });
        if h + 1 == horizon {
            break;
        }
        if let Some(q) = survival {
            if !rng.bernoulli(q) {
                break;
            }
        }
        s = rng.categorical(model.kernel.row(s, a));
    }
    let active_until = steps.len();
    Trajectory {
        group,
        steps,
        active_until,
    }
}

pub fn check_sampling_inputs(
    spec: &ProblemSpec,
    policy: &Policy,
    n_per_group: &[usize],
    survival: Option<f64>,
) -> Result<()> {
    if n_per_group.len() != spec.group_count() {
        return Err(Error::Shape {
            what: "individuals per group",
            expected: spec.group_count(),
            found: n_per_group.len(),
        });
    }
    if let Some(g) = n_per_group.iter().position(|&n| n == 0) {
        return Err(Error::Precondition(format!(
            "group {g} needs at least one individual per episode"
        )));
    }
    if let Some(q) = survival {
        if !(q > 0.0 && q <= 1.0) {
            return Err(Error::OutOfRange {
                what: "survival probability",
                value: q,
            });
        }
    }
    let space = spec.space();
    if policy.groups() != spec.group_count()
        || policy.horizon() != space.horizon()
        || policy.features() != space.features()
    {
        return Err(Error::Shape {
            what: "policy parameters",
            expected: spec.group_count() * space.horizon() * space.features(),
            found: policy.params().len(),
        });
    }
    Ok(())
}

/// Draws `n_per_group[g]` i.i.d. individuals for every group.
///
/// If dropout leaves some group without an individual reaching the final
/// step, the whole batch is redrawn on fresh streams, up to
/// [`MAX_DROPOUT_RETRIES`] times.
pub fn sample_episode(
    spec: &ProblemSpec,
    policy: &Policy,
    n_per_group: &[usize],
    survival: Option<f64>,
    seed: u64,
    episode: u64,
) -> Result<EpisodeBatch> {
    check_sampling_inputs(spec, policy, n_per_group, survival)?;
    let horizon = spec.space().horizon();
    let mut failed = 0;
    for attempt in 0..MAX_DROPOUT_RETRIES {
        let groups = n_per_group
            .iter()
            .enumerate()
            .map(|(g, &n)| {
                (0..n)
                    .map(|i| {
                        let mut rng = individual_rng(seed, episode, g, i, attempt);
                        sample_individual(spec, policy, g, survival, &mut rng)
                    })
                    .collect()
            })
            .collect();
        let batch = EpisodeBatch { episode, groups };
        match batch.emptied_group(horizon) {
            None => return Ok(batch),
            Some(g) => failed = g,
        }
    }
    Err(Error::DropoutExhausted {
        group: failed,
        retries: MAX_DROPOUT_RETRIES,
    })
}
