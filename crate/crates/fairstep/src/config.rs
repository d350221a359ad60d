//! Experiment configuration and its JSON form.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use fairstep_core::solver::{ConstraintKind, SolverSettings};
use serde::{Deserialize, Serialize};

use crate::formats::{read_json, GeneratorDoc};

/// Where the ground-truth environment comes from.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum InstanceSource {
    Generator {
        generator: GeneratorDoc,
        /// Score data for the score-based generator; the bundled stand-in
        /// is used when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        empirical: Option<PathBuf>,
    },
    SpecFile {
        spec_file: PathBuf,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MethodDoc {
    ConstrainedDp,
    ConstrainedEqopt,
    PenaltyDp { lambdas: Vec<f64> },
    PenaltyEqopt { lambdas: Vec<f64> },
    Unconstrained,
}

/// One learner: a constraint kind plus, for penalty kinds, one weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Method {
    pub kind: ConstraintKind,
    pub lambda: f64,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self.kind {
            ConstraintKind::Dp => "constrained_dp",
            ConstraintKind::EqOpt => "constrained_eqopt",
            ConstraintKind::DpPenalty => "penalty_dp",
            ConstraintKind::EqOptPenalty => "penalty_eqopt",
            ConstraintKind::None => "unconstrained",
        }
    }

    pub fn label(&self) -> String {
        if self.kind.is_penalty() {
            format!("{} (lambda={})", self.name(), self.lambda)
        } else {
            self.name().to_string()
        }
    }
}

pub fn expand_methods(docs: &[MethodDoc]) -> Vec<Method> {
    let mut out = Vec::new();
    for d in docs {
        let (kind, lambdas): (ConstraintKind, &[f64]) = match d {
            MethodDoc::ConstrainedDp => (ConstraintKind::Dp, &[0.0]),
            MethodDoc::ConstrainedEqopt => (ConstraintKind::EqOpt, &[0.0]),
            MethodDoc::PenaltyDp { lambdas } => (ConstraintKind::DpPenalty, lambdas),
            MethodDoc::PenaltyEqopt { lambdas } => (ConstraintKind::EqOptPenalty, lambdas),
            MethodDoc::Unconstrained => (ConstraintKind::None, &[0.0]),
        };
        out.extend(lambdas.iter().map(|&lambda| Method { kind, lambda }));
    }
    out
}

/// Policy-update schedule: either `k = 2^l` for `l` in a range, or an
/// explicit list of episode counts.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum Checkpoints {
    Powers { l_min: u32, l_max: u32 },
    Explicit(Vec<u64>),
}

impl Checkpoints {
    pub fn episodes(&self) -> Vec<u64> {
        match self {
            Self::Powers { l_min, l_max } => (*l_min..=*l_max).map(|l| 1u64 << l).collect(),
            Self::Explicit(v) => v.clone(),
        }
    }
}

/// Individuals drawn per group each episode.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum GroupCounts {
    Same(usize),
    PerGroup(Vec<usize>),
}

impl GroupCounts {
    pub fn resolve(&self, groups: usize) -> Result<Vec<usize>> {
        let v = match self {
            Self::Same(n) => vec![*n; groups],
            Self::PerGroup(v) if v.len() == groups => v.clone(),
            Self::PerGroup(v) => bail!("n_per_group lists {} counts for {groups} groups", v.len()),
        };
        if v.contains(&0) {
            bail!("every group needs at least one individual per episode");
        }
        Ok(v)
    }
}

/// Overrides of the solver defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SolverDoc {
    pub restarts: Option<usize>,
    pub inner_tolerance: Option<f64>,
    pub feasibility_tolerance: Option<f64>,
    pub penalty_growth: Option<f64>,
    pub initial_penalty: Option<f64>,
    pub max_outer: Option<usize>,
    pub max_inner: Option<usize>,
}

impl SolverDoc {
    pub fn settings(&self) -> SolverSettings {
        let d = SolverSettings::default();
        SolverSettings {
            restarts: self.restarts.unwrap_or(d.restarts),
            seed: d.seed,
            inner_tolerance: self.inner_tolerance.unwrap_or(d.inner_tolerance),
            feasibility_tolerance: self.feasibility_tolerance.unwrap_or(d.feasibility_tolerance),
            penalty_growth: self.penalty_growth.unwrap_or(d.penalty_growth),
            initial_penalty: self.initial_penalty.unwrap_or(d.initial_penalty),
            max_outer: self.max_outer.unwrap_or(d.max_outer),
            max_inner: self.max_inner.unwrap_or(d.max_inner),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// `k = 2^3 .. 2^12`, 2000 evaluation episodes, 5 seeds.
    Desk,
    /// `k = 2^3 .. 2^18`, 8000 evaluation episodes, 5 seeds.
    Full,
}

/// The JSON document; unset fields come from the preset.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ConfigDoc {
    pub instance: InstanceSource,
    pub methods: Vec<MethodDoc>,
    #[serde(default)]
    pub preset: Option<Preset>,
    #[serde(default)]
    pub horizon: Option<usize>,
    #[serde(default)]
    pub checkpoints: Option<Checkpoints>,
    #[serde(default)]
    pub n_per_group: Option<GroupCounts>,
    #[serde(default)]
    pub eval_episodes: Option<usize>,
    #[serde(default)]
    pub monte_carlo: Option<bool>,
    #[serde(default)]
    pub seeds: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub delta: Option<f64>,
    /// Per-step survival probability for the opt-out variant.
    #[serde(default)]
    pub survival: Option<f64>,
    #[serde(default)]
    pub solver: Option<SolverDoc>,
    #[serde(default)]
    pub comparator_restarts: Option<usize>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub snapshots: Option<bool>,
    #[serde(default)]
    pub solve_traces: Option<bool>,
    #[serde(default)]
    pub dump_trajectories: Option<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub instance: InstanceSource,
    pub methods: Vec<Method>,
    /// Overrides the generator horizon; must match a spec file.
    pub horizon: Option<usize>,
    pub checkpoints: Vec<u64>,
    pub n_per_group: GroupCounts,
    pub eval_episodes: usize,
    pub monte_carlo: bool,
    pub seeds: usize,
    /// First seed; runs use `seed, seed + 1, ...`.
    pub seed: u64,
    pub delta: f64,
    pub survival: Option<f64>,
    pub solver: SolverSettings,
    pub comparator_restarts: usize,
    pub output: PathBuf,
    pub snapshots: bool,
    pub solve_traces: bool,
    pub dump_trajectories: bool,
}

impl ExperimentConfig {
    pub fn from_doc(doc: ConfigDoc, base: &Path) -> Result<Self> {
        let preset = doc.preset.unwrap_or(Preset::Desk);
        let (checkpoints, eval) = match preset {
            Preset::Desk => (Checkpoints::Powers { l_min: 3, l_max: 12 }, 2000),
            Preset::Full => (Checkpoints::Powers { l_min: 3, l_max: 18 }, 8000),
        };
        let rebase = |p: PathBuf| if p.is_relative() { base.join(p) } else { p };
        let instance = match doc.instance {
            InstanceSource::Generator { generator, empirical } => InstanceSource::Generator {
                generator,
                empirical: empirical.map(rebase),
            },
            InstanceSource::SpecFile { spec_file } => InstanceSource::SpecFile {
                spec_file: rebase(spec_file),
            },
        };
        let config = Self {
            instance,
            methods: expand_methods(&doc.methods),
            horizon: doc.horizon,
            checkpoints: doc.checkpoints.unwrap_or(checkpoints).episodes(),
            n_per_group: doc.n_per_group.unwrap_or(GroupCounts::Same(4)),
            eval_episodes: doc.eval_episodes.unwrap_or(eval),
            monte_carlo: doc.monte_carlo.unwrap_or(false),
            seeds: doc.seeds.unwrap_or(5),
            seed: doc.seed.unwrap_or(0),
            delta: doc.delta.unwrap_or(0.1),
            survival: doc.survival,
            solver: doc.solver.unwrap_or_default().settings(),
            comparator_restarts: doc.comparator_restarts.unwrap_or(32),
            output: doc.output.map(rebase).unwrap_or_else(|| base.join("out")),
            snapshots: doc.snapshots.unwrap_or(false),
            solve_traces: doc.solve_traces.unwrap_or(false),
            dump_trajectories: doc.dump_trajectories.unwrap_or(false),
        };
        config.validate()?;
        Ok(config)
    }

    /// Reads a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let doc: ConfigDoc = read_json(path)?;
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Self::from_doc(doc, &base).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            bail!("no methods configured");
        }
        for m in &self.methods {
            if m.kind.is_penalty() && !(m.lambda >= 0.0 && m.lambda.is_finite()) {
                bail!("penalty weight {} is not a finite non-negative number", m.lambda);
            }
        }
        if self.checkpoints.is_empty() || self.checkpoints[0] == 0 {
            bail!("checkpoints must be non-empty and start at an episode >= 1");
        }
        if self.checkpoints.windows(2).any(|w| w[1] <= w[0]) {
            bail!("checkpoints must be strictly increasing, got {:?}", self.checkpoints);
        }
        if self.seeds == 0 {
            bail!("at least one seed is required");
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            bail!("delta must lie in (0, 1), got {}", self.delta);
        }
        if let Some(q) = self.survival {
            if !(q > 0.0 && q <= 1.0) {
                bail!("survival must lie in (0, 1], got {q}");
            }
        }
        if self.monte_carlo && self.eval_episodes == 0 {
            bail!("monte-carlo evaluation needs eval_episodes >= 1");
        }
        if self.solver.restarts == 0 || self.comparator_restarts == 0 {
            bail!("solver restarts must be positive");
        }
        Ok(())
    }

    pub fn seed_values(&self) -> Vec<u64> {
        (0..self.seeds as u64).map(|i| self.seed + i).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig> {
        ExperimentConfig::from_doc(serde_json::from_str(text)?, Path::new("/tmp/x"))
    }

    #[test]
    fn defaults_follow_desk_preset() {
        let c = parse(r#"{"instance": {"generator": {"kind": "synthetic"}}, "methods": [{"kind": "unconstrained"}]}"#).unwrap();
        assert_eq!(c.checkpoints.len(), 10);
        assert_eq!(*c.checkpoints.last().unwrap(), 4096);
        assert_eq!(c.eval_episodes, 2000);
        assert_eq!(c.seeds, 5);
        assert_eq!(c.output, Path::new("/tmp/x/out"));
    }

    #[test]
    fn full_preset_has_sixteen_updates() {
        let c = parse(
            r#"{"instance": {"spec_file": "s.json"}, "methods": [{"kind": "constrained_dp"}], "preset": "full"}"#,
        )
        .unwrap();
        assert_eq!(c.checkpoints.len(), 16);
        assert_eq!(c.checkpoints[0], 8);
        assert_eq!(*c.checkpoints.last().unwrap(), 262_144);
        assert_eq!(c.eval_episodes, 8000);
    }

    #[test]
    fn penalty_lambdas_expand() {
        let c = parse(
            r#"{"instance": {"spec_file": "s.json"}, "methods": [{"kind": "penalty_eqopt", "lambdas": [0.1, 10]}, {"kind": "constrained_eqopt"}]}"#,
        )
        .unwrap();
        assert_eq!(c.methods.len(), 3);
        assert_eq!(c.methods[1].lambda, 10.0);
        assert_eq!(c.methods[1].label(), "penalty_eqopt (lambda=10)");
    }

    #[test]
    fn bad_configs_rejected() {
        let base = r#""instance": {"spec_file": "s.json"}, "methods": [{"kind": "unconstrained"}]"#;
        assert!(parse(&format!("{{{base}, \"checkpoints\": [8, 8]}}")).is_err());
        assert!(parse(&format!("{{{base}, \"seeds\": 0}}")).is_err());
        assert!(parse(&format!("{{{base}, \"delta\": 1.5}}")).is_err());
        assert!(parse(&format!("{{{base}, \"typo\": 1}}")).is_err());
        assert!(parse(r#"{"instance": {"spec_file": "s.json"}, "methods": []}"#).is_err());
    }
}
