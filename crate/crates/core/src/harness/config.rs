use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::lqr::{Gain, LqrTask};
use crate::maml::{FinetuneConfig, GuardPolicy, MamlConfig, MamlMode};
use crate::taskgen::{self, GenSpec, TaskBundle};
use crate::theory::TheoryOptions;
use crate::zo::ZoConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Convergence,
    HetSweep,
    Adaptation,
    CheckTheory,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    ModelBased,
    ModelFree,
}

/// Experiment configuration as read from JSON. Task sets come from
/// `tasks_file` or are generated from `generate`. Generated sets are redrawn
/// for every seed with masks fixed by the spec's own seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<Experiment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tasks_file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generate: Option<GenSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_gain: Option<Gain>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub algorithm: Option<Algorithm>,
    #[serde(default = "default_step")]
    pub eta_l: f64,
    #[serde(default = "default_step")]
    pub eta: f64,
    #[serde(rename = "N", default = "default_iterations")]
    pub iterations: usize,
    #[serde(default)]
    pub guard: GuardPolicy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zo: Option<ZoConfig>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub plot: bool,
    /// Levels for the heterogeneity sweep; defaults to the three standard levels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<[f64; 4]>>,
    #[serde(default = "default_fraction")]
    pub holdout_fraction: f64,
    #[serde(default)]
    pub finetune: FinetuneConfig,
    #[serde(default)]
    pub theory: TheoryOptions,
}

fn default_step() -> f64 {
    8e-6
}

fn default_iterations() -> usize {
    200
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_fraction() -> f64 {
    0.8
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: Self = serde_json::from_str(&text)?;
        if let (Some(file), Some(dir)) = (&cfg.tasks_file, path.parent()) {
            if file.is_relative() {
                cfg.tasks_file = Some(dir.join(file));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.tasks_file.is_some() && self.generate.is_some() {
            return Err(Error::Config("give either tasks_file or generate, not both".into()));
        }
        if let Some(f) = &self.tasks_file {
            if !f.exists() {
                return Err(Error::Config(format!("tasks file {} does not exist", f.display())));
            }
        }
        if let Some(spec) = &self.generate {
            spec.validate()?;
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return Err(Error::Config(format!("holdout_fraction must lie in (0, 1), got {}", self.holdout_fraction)));
        }
        self.maml(Algorithm::ModelBased, 0).validate()
    }

    /// Meta-learning settings for one seed. The seed replaces the zo seed.
    pub fn maml(&self, algorithm: Algorithm, seed: u64) -> MamlConfig {
        let mode = match algorithm {
            Algorithm::ModelBased => MamlMode::ModelBased,
            Algorithm::ModelFree => {
                let mut zo = self.zo.clone().unwrap_or_default();
                zo.rng_seed = seed;
                MamlMode::ModelFree(zo)
            }
        };
        MamlConfig {
            eta_l: self.eta_l,
            eta: self.eta,
            iterations: self.iterations,
            guard: self.guard,
            mode,
        }
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// A loaded or generated task set.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskSource {
    pub tasks: Vec<LqrTask>,
    /// Reference task for the nominal cost-gap curve.
    pub nominal: LqrTask,
    pub initial_gain: Option<Gain>,
    pub bundle: Option<TaskBundle>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum TasksFile {
    Bundle(Box<TaskBundle>),
    Wrapped {
        tasks: Vec<LqrTask>,
        #[serde(default)]
        initial_gain: Option<Gain>,
    },
    Bare(Vec<LqrTask>),
}

pub fn load_tasks(path: &Path) -> Result<TaskSource> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let parsed: TasksFile = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{} is not a task set: {e}", path.display())))?;
    let (tasks, initial_gain, bundle) = match parsed {
        TasksFile::Bundle(b) => (b.tasks.clone(), b.initial_gain.clone(), Some(*b)),
        TasksFile::Wrapped { tasks, initial_gain } => (tasks, initial_gain, None),
        TasksFile::Bare(tasks) => (tasks, None, None),
    };
    let nominal = match &bundle {
        Some(b) => b.nominal.clone(),
        None => tasks
            .first()
            .cloned()
            .ok_or_else(|| Error::Config(format!("{} holds no tasks", path.display())))?,
    };
    Ok(TaskSource { tasks, nominal, initial_gain, bundle })
}

impl ExperimentConfig {
    /// Task set for `seed`, overriding the generation level when `levels` is given.
    pub fn task_source(&self, seed: u64, levels: Option<[f64; 4]>) -> Result<TaskSource> {
        if let Some(file) = &self.tasks_file {
            return load_tasks(file);
        }
        let mut spec = self
            .generate
            .clone()
            .unwrap_or_else(|| GenSpec::boeing(taskgen::LEVELS[0], 10, 0));
        if spec.masks.is_none() {
            spec.masks = Some(spec.resolved_masks());
        }
        spec.seed = seed;
        if let Some(l) = levels {
            spec.levels = l;
        }
        let bundle = TaskBundle::from_spec(&spec, None)?;
        Ok(TaskSource {
            tasks: bundle.tasks.clone(),
            nominal: bundle.nominal.clone(),
            initial_gain: None,
            bundle: Some(bundle),
        })
    }

    /// Starting gain: explicit, then from the tasks file, then the Boeing
    /// default for `4 × 2` systems.
    pub fn initial_gain_for(&self, source: &TaskSource) -> Result<Gain> {
        if let Some(g) = self.initial_gain.clone().or_else(|| source.initial_gain.clone()) {
            return Ok(g);
        }
        let (nx, nu) = (source.nominal.nx(), source.nominal.nu());
        if (nx, nu) == (4, 2) {
            return Ok(taskgen::boeing_nominal().1);
        }
        Err(Error::Config(format!("initial_gain is required for n_x = {nx}, n_u = {nu}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_experimental_setup() {
        let cfg = ExperimentConfig::default();
        assert_eq!((cfg.eta, cfg.eta_l, cfg.iterations), (8e-6, 8e-6, 200));
        assert_eq!(cfg.holdout_fraction, 0.8);
        let zo = match cfg.maml(Algorithm::ModelFree, 4).mode {
            MamlMode::ModelFree(z) => z,
            _ => unreachable!(),
        };
        assert_eq!((zo.r, zo.m, zo.rng_seed), (1e-2, 20, 4));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"etaa": 1}"#).is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig { eta: 1e-5, ..a.clone() };
        assert_eq!(a.hash(), a.clone().hash());
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn empty_seed_list_rejected() {
        let cfg = ExperimentConfig { seeds: vec![], ..Default::default() };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
