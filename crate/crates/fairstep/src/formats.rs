//! JSON documents read and written by the command line, and atomic file
//! output.
//!
//! Kernel rows are listed in `(s, a)` order with `s = 2x + y`; every
//! table row has one entry per next state.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use fairstep_core::datagen::{
    EmpiricalDistribution, EmpiricalGroup, FicoConfig, GeneratorConfig, GroupSetup, SyntheticConfig,
};
use fairstep_core::estimation::{EstimatedModel, RelaxationSchedule};
use fairstep_core::{GroupModel, Policy, ProblemSpec, RewardModel, RewardNoise, StateSpace, TransitionKernel, ACTIONS};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseDoc {
    Deterministic,
    Bernoulli,
    UniformBand { half_width: f64 },
}

impl From<RewardNoise> for NoiseDoc {
    fn from(n: RewardNoise) -> Self {
        match n {
            RewardNoise::Deterministic => Self::Deterministic,
            RewardNoise::Bernoulli => Self::Bernoulli,
            RewardNoise::UniformBand { half_width } => Self::UniformBand { half_width },
        }
    }
}

impl From<NoiseDoc> for RewardNoise {
    fn from(n: NoiseDoc) -> Self {
        match n {
            NoiseDoc::Deterministic => Self::Deterministic,
            NoiseDoc::Bernoulli => Self::Bernoulli,
            NoiseDoc::UniformBand { half_width } => Self::UniformBand { half_width },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GroupDoc {
    pub id: String,
    pub proportion: f64,
    pub initial: Vec<f64>,
    /// One row per `(s, a)`.
    pub kernel: Vec<Vec<f64>>,
    /// One `[r(s, 0), r(s, 1)]` row per state, normalized to `[0, 1]`.
    pub reward_mean: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward_noise: Option<NoiseDoc>,
    /// Raw `[l, u]` the rewards were normalized from, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_bounds: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SpecDoc {
    pub features: usize,
    pub horizon: usize,
    pub groups: Vec<GroupDoc>,
}

impl SpecDoc {
    pub fn from_spec(spec: &ProblemSpec) -> Self {
        let space = spec.space();
        let states = space.states();
        let groups = spec
            .groups()
            .iter()
            .map(|g| GroupDoc {
                id: g.id.clone(),
                proportion: g.proportion,
                initial: g.kernel.initial().to_vec(),
                kernel: g.kernel.table().chunks(states).map(<[f64]>::to_vec).collect(),
                reward_mean: g.reward.mean_table().chunks(ACTIONS).map(<[f64]>::to_vec).collect(),
                reward_noise: match g.reward.noise() {
                    RewardNoise::Deterministic => None,
                    other => Some(other.into()),
                },
                raw_bounds: g.reward.raw_bounds().map(|(l, u)| [l, u]),
            })
            .collect();
        Self {
            features: space.features(),
            horizon: space.horizon(),
            groups,
        }
    }

    pub fn to_spec(&self) -> Result<ProblemSpec> {
        let space = StateSpace::new(self.features, self.horizon)?;
        let states = space.states();
        let mut groups = Vec::with_capacity(self.groups.len());
        for (g, doc) in self.groups.iter().enumerate() {
            check_rows(&doc.kernel, states * ACTIONS, states, || format!("kernel of group {:?}", doc.id))?;
            check_rows(&doc.reward_mean, states, ACTIONS, || format!("reward_mean of group {:?}", doc.id))?;
            let table = doc.kernel.concat();
            let kernel = TransitionKernel::for_group(g, states, doc.initial.clone(), table)
                .with_context(|| format!("group {:?}", doc.id))?;
            let mean = doc.reward_mean.concat();
            let mut reward = match doc.raw_bounds {
                Some([l, u]) => {
                    let raw: Vec<f64> = mean.iter().map(|m| l + m * (u - l)).collect();
                    RewardModel::from_raw(states, &raw, l, u)?
                }
                None => RewardModel::new(states, mean)?,
            };
            if let Some(noise) = &doc.reward_noise {
                reward = reward.with_noise(noise.clone().into())?;
            }
            groups.push(GroupModel {
                id: doc.id.clone(),
                proportion: doc.proportion,
                kernel,
                reward,
            });
        }
        Ok(ProblemSpec::new(space, groups)?)
    }
}

fn check_rows(rows: &[Vec<f64>], count: usize, width: usize, name: impl Fn() -> String) -> Result<()> {
    if rows.len() != count {
        bail!("{} has {} rows, expected {count}", name(), rows.len());
    }
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != width) {
        bail!("{} row {i} has {} entries, expected {width}", name(), r.len());
    }
    Ok(())
}

/// Policy snapshot: group id -> step -> feature -> `pi(a = 1 | x)`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PolicyDoc {
    pub groups: BTreeMap<String, Vec<Vec<f64>>>,
}

impl PolicyDoc {
    pub fn from_policy(policy: &Policy, ids: &[String]) -> Self {
        let groups = ids
            .iter()
            .enumerate()
            .map(|(g, id)| {
                let steps = (0..policy.horizon())
                    .map(|h| (0..policy.features()).map(|x| policy.accept(g, h, x)).collect())
                    .collect();
                (id.clone(), steps)
            })
            .collect();
        Self { groups }
    }

    pub fn to_policy(&self, spec: &ProblemSpec) -> Result<Policy> {
        let space = spec.space();
        let mut params = Vec::new();
        for g in spec.groups() {
            let steps = self
                .groups
                .get(&g.id)
                .ok_or_else(|| anyhow!("policy has no entry for group {:?}", g.id))?;
            if steps.len() != space.horizon() {
                bail!("policy of group {:?} has {} steps, expected {}", g.id, steps.len(), space.horizon());
            }
            for row in steps {
                if row.len() != space.features() {
                    bail!("policy of group {:?} has a step with {} features, expected {}", g.id, row.len(), space.features());
                }
                params.extend_from_slice(row);
            }
        }
        if let Some(extra) = self.groups.keys().find(|k| !spec.groups().iter().any(|g| &g.id == *k)) {
            bail!("policy names unknown group {extra:?}");
        }
        Ok(Policy::new(spec.group_count(), space, params)?)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EmpiricalGroupDoc {
    pub id: String,
    pub score_marginal: Vec<f64>,
    pub qualify_given_score: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EmpiricalDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub groups: Vec<EmpiricalGroupDoc>,
}

impl EmpiricalDoc {
    pub fn to_distribution(&self) -> Result<EmpiricalDistribution> {
        let d = EmpiricalDistribution {
            groups: self
                .groups
                .iter()
                .map(|g| EmpiricalGroup {
                    id: g.id.clone(),
                    score_marginal: g.score_marginal.clone(),
                    qualify_given_score: g.qualify_given_score.clone(),
                })
                .collect(),
        };
        d.validate()?;
        Ok(d)
    }
}

/// Stand-in score data shipped with the crate. Invented numbers with the
/// right shape; not measured data.
pub const FICO_STANDIN: &str = include_str!("../data/fico_standin.json");

pub fn standin_empirical() -> EmpiricalDistribution {
    let doc: EmpiricalDoc = serde_json::from_str(FICO_STANDIN).expect("bundled stand-in parses");
    doc.to_distribution().expect("bundled stand-in is valid")
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GroupSetupDoc {
    pub id: String,
    #[serde(default = "half")]
    pub proportion: f64,
    pub beta1: f64,
    pub beta2: f64,
}

fn half() -> f64 {
    0.5
}

impl From<&GroupSetupDoc> for GroupSetup {
    fn from(d: &GroupSetupDoc) -> Self {
        GroupSetup {
            id: d.id.clone(),
            proportion: d.proportion,
            beta1: d.beta1,
            beta2: d.beta2,
        }
    }
}

/// Instance generator settings; omitted fields take the built-in defaults.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorDoc {
    Synthetic {
        #[serde(default)]
        groups: Option<Vec<GroupSetupDoc>>,
        #[serde(default)]
        horizon: Option<usize>,
        #[serde(default)]
        initial_qualified: Option<f64>,
    },
    Fico {
        #[serde(default)]
        groups: Option<Vec<GroupSetupDoc>>,
        #[serde(default)]
        horizon: Option<usize>,
    },
}

impl GeneratorDoc {
    pub fn to_config(&self) -> GeneratorConfig {
        match self {
            Self::Synthetic {
                groups,
                horizon,
                initial_qualified,
            } => {
                let mut c = SyntheticConfig::default();
                if let Some(gs) = groups {
                    let moves = c.moves[0].clone();
                    c.groups = gs.iter().map(Into::into).collect();
                    c.moves = vec![moves; c.groups.len()];
                }
                if let Some(h) = horizon {
                    c.horizon = *h;
                }
                if let Some(q) = initial_qualified {
                    c.initial_qualified = *q;
                }
                GeneratorConfig::Synthetic(c)
            }
            Self::Fico { groups, horizon } => {
                let mut c = FicoConfig::default();
                if let Some(gs) = groups {
                    let moves = c.moves[0].clone();
                    c.groups = gs.iter().map(Into::into).collect();
                    c.moves = vec![moves; c.groups.len()];
                }
                if let Some(h) = horizon {
                    c.horizon = *h;
                }
                GeneratorConfig::Fico(c)
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GroupSnapshot {
    pub id: String,
    /// Clamped visits `max(1, N(s, a))` per `(s, a)`.
    pub visits: Vec<u64>,
    pub kernel: Vec<Vec<f64>>,
    pub reward_hat: Vec<f64>,
    pub bonus: Vec<f64>,
    pub optimistic: Vec<f64>,
    pub n_min: u64,
    pub p_min: f64,
}

/// Estimation state at one policy update.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelSnapshot {
    pub episode: u64,
    pub k: u64,
    pub delta: f64,
    pub epsilon: f64,
    pub eta: f64,
    pub c_hat: f64,
    pub d_hat: f64,
    pub groups: Vec<GroupSnapshot>,
}

impl ModelSnapshot {
    pub fn new(episode: u64, model: &EstimatedModel, schedule: &RelaxationSchedule, ids: &[String]) -> Self {
        let states = model.space.states();
        let groups = model
            .groups
            .iter()
            .enumerate()
            .map(|(g, e)| GroupSnapshot {
                id: ids[g].clone(),
                visits: e.visits.clone(),
                kernel: e.kernel.table().chunks(states).map(<[f64]>::to_vec).collect(),
                reward_hat: e.reward_hat.clone(),
                bonus: e.bonus.clone(),
                optimistic: e.optimistic.clone(),
                n_min: schedule.n_min[g],
                p_min: schedule.p_min[g],
            })
            .collect();
        Self {
            episode,
            k: model.k,
            delta: model.delta,
            epsilon: schedule.epsilon,
            eta: schedule.eta,
            c_hat: schedule.c_hat,
            d_hat: schedule.d_hat,
            groups,
        }
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn read_spec(path: &Path) -> Result<ProblemSpec> {
    read_json::<SpecDoc>(path)?
        .to_spec()
        .with_context(|| format!("invalid problem in {}", path.display()))
}

pub fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Writes `bytes` to a temporary sibling and renames it over `path`, so
/// readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let name = path
        .file_name()
        .ok_or_else(|| anyhow!("{} is not a file path", path.display()))?
        .to_string_lossy();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let mut f = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
    f.write_all(bytes)?;
    f.sync_all()?;
    drop(f);
    fs::rename(&tmp, path).with_context(|| format!("renaming onto {}", path.display()))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, &to_json(value)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use fairstep_core::datagen::{build_fico, build_synthetic};

    #[test]
    fn spec_round_trips() {
        let spec = build_synthetic(&SyntheticConfig::default()).unwrap();
        let doc = SpecDoc::from_spec(&spec);
        let text = serde_json::to_string(&doc).unwrap();
        let back: SpecDoc = serde_json::from_str(&text).unwrap();
        let again = back.to_spec().unwrap();
        // rows are renormalized on load, which may move the last bit
        for (a, b) in spec.groups().iter().zip(again.groups()) {
            assert_eq!(a.id, b.id);
            let pairs = a.kernel.table().iter().zip(b.kernel.table());
            assert!(pairs.into_iter().all(|(x, y)| (x - y).abs() < 1e-15));
            for (x, y) in a.reward.mean_table().iter().zip(b.reward.mean_table()) {
                assert!((x - y).abs() < 1e-15);
            }
            assert_eq!(a.reward.raw_bounds(), b.reward.raw_bounds());
        }
    }

    #[test]
    fn standin_builds_score_instance() {
        let spec = build_fico(&FicoConfig::default(), &standin_empirical()).unwrap();
        assert_eq!(spec.group_count(), 2);
    }

    #[test]
    fn policy_round_trips_by_group_id() {
        let spec = build_synthetic(&SyntheticConfig::default()).unwrap();
        let ids: Vec<String> = spec.groups().iter().map(|g| g.id.clone()).collect();
        let n = 2 * spec.space().horizon() * spec.space().features();
        let p = Policy::new(2, spec.space(), (0..n).map(|i| i as f64 / n as f64).collect()).unwrap();
        let doc = PolicyDoc::from_policy(&p, &ids);
        assert_eq!(doc.to_policy(&spec).unwrap(), p);
        let mut bad = doc.clone();
        bad.groups.remove("beta");
        assert!(bad.to_policy(&spec).is_err());
    }

    #[test]
    fn short_kernel_row_is_reported() {
        let spec = build_synthetic(&SyntheticConfig::default()).unwrap();
        let mut doc = SpecDoc::from_spec(&spec);
        doc.groups[1].kernel[3].pop();
        let err = doc.to_spec().unwrap_err().to_string();
        assert!(err.contains("row 3"), "{err}");
    }

    #[test]
    fn atomic_write_leaves_no_temporaries() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.json");
        write_json(&path, &vec![1, 2, 3]).unwrap();
        write_json(&path, &vec![4]).unwrap();
        let names: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names.len(), 1);
        assert_eq!(fs::read_to_string(&path).unwrap(), "[\n  4\n]\n");
    }
}
