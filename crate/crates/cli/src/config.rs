//! Experiment configuration: a TOML file plus dotted-path overrides.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use eb_lab::baselines::NpmleConfig;
use eb_lab::PopSpec;
use serde::{Deserialize, Serialize};

pub const SEED_ENV: &str = "EB_LAB_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    #[default]
    Poisson,
    Gaussian,
}

impl Model {
    pub fn as_str(self) -> &'static str {
        match self {
            Model::Poisson => "poisson",
            Model::Gaussian => "gaussian",
        }
    }
}

/// A fixed test prior; the support bound is taken from `pop`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestPrior {
    pub atoms: Vec<f64>,
    pub weights: Vec<f64>,
}

fn default_estimators() -> Vec<String> {
    vec!["oracle".into(), "hb".into()]
}
fn default_reps() -> usize {
    eb_lab::bench::DEFAULT_REGRET_REPS
}
fn default_contraction_reps() -> usize {
    eb_lab::bench::DEFAULT_CONTRACTION_REPS
}
fn default_mc_draws() -> usize {
    eb_lab::hb::DEFAULT_MC_DRAWS
}
fn default_batches() -> usize {
    1000
}
fn default_reference() -> String {
    "lengen".into()
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub model: Model,
    pub pop: PopSpec,
    pub n: usize,
    #[serde(default)]
    pub n_test_list: Vec<usize>,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<String>,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default = "default_mc_draws")]
    pub mc_draws: usize,
    #[serde(default)]
    pub alpha_grid: Vec<f64>,
    #[serde(default)]
    pub root_seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Sequence lengths for `contract`.
    #[serde(default)]
    pub n_list: Vec<usize>,
    #[serde(default = "default_contraction_reps")]
    pub contraction_reps: usize,
    /// Number of training batches `M` for `gen` and the `erm` estimator.
    #[serde(default = "default_batches")]
    pub batches: usize,
    /// Reference estimator for `alphafit`: `lengen` or `hb`.
    #[serde(default = "default_reference")]
    pub reference: String,
    /// Fixed test prior `G0`. Without it, `G0` is drawn once from
    /// `test_pop` (or from `pop` when that is absent too).
    #[serde(default)]
    pub test_prior: Option<TestPrior>,
    #[serde(default)]
    pub test_pop: Option<PopSpec>,
    #[serde(default)]
    pub npmle: Option<NpmleConfig>,
}

pub const POISSON_ESTIMATORS: &[&str] = &["oracle", "hb", "lengen", "robbins", "npmle", "erm"];
pub const GAUSSIAN_ESTIMATORS: &[&str] = &["oracle", "hb", "lengen", "bayes_reg"];

impl ExperimentConfig {
    pub fn known_estimators(&self) -> &'static [&'static str] {
        match self.model {
            Model::Poisson => POISSON_ESTIMATORS,
            Model::Gaussian => GAUSSIAN_ESTIMATORS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.pop.validate().context("pop")?;
        if let Some(p) = &self.test_pop {
            p.validate().context("test_pop")?;
        }
        if self.n == 0 {
            bail!("n must be at least 1");
        }
        if self.reps == 0 {
            bail!("reps must be at least 1");
        }
        if let Some(name) = self
            .estimators
            .iter()
            .find(|e| !self.known_estimators().contains(&e.as_str()))
        {
            bail!(
                "unknown estimator {name:?} for the {} model",
                self.model.as_str()
            );
        }
        if !["lengen", "hb"].contains(&self.reference.as_str()) {
            bail!("unknown alphafit reference {:?}", self.reference);
        }
        if self.n_test_list.contains(&0) || self.n_list.contains(&0) {
            bail!("sequence lengths must be at least 1");
        }
        if let Some(cfg) = &self.npmle {
            cfg.validate(self.pop.support_bound).context("npmle")?;
        }
        Ok(())
    }

    pub fn npmle_config(&self) -> NpmleConfig {
        self.npmle
            .unwrap_or_else(|| NpmleConfig::for_support(self.pop.support_bound))
    }

    /// Hash of everything that affects results (the output directory does not).
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(obj) = value.as_object_mut() {
            obj.remove("output_dir");
        }
        eb_lab::seed::config_hash(value.to_string().as_bytes())
    }
}

/// Applies `a.b.c=value`; `value` is read as a TOML value, or as a plain
/// string if it does not parse.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| anyhow!("override {assignment:?} is not of the form key=value"))?;
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        bail!("override path {path:?} has an empty component");
    }
    let (last, parents) = keys.split_last().expect("nonempty");
    let mut node = table;
    for key in parents {
        let entry = node
            .entry(key.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| anyhow!("override path {path:?}: {key:?} is not a table"))?;
    }
    node.insert(last.to_string(), value);
    Ok(())
}

/// Reads, overrides and validates a configuration.
pub fn load(path: &Path, overrides: &[String], seed_env: Option<&str>) -> Result<ExperimentConfig> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut table: toml::Table =
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let mut cfg: ExperimentConfig = table.try_into().context("invalid configuration")?;
    if let Some(seed) = seed_env {
        cfg.root_seed = seed
            .trim()
            .parse()
            .with_context(|| format!("{SEED_ENV}={seed:?} is not a 64-bit unsigned integer"))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
        n = 10
        [pop]
        support_bound = 5.0
        kind = "UNIFORM_DIRICHLET"
        k = 3
    "#;

    fn parse(extra: &[&str]) -> Result<ExperimentConfig> {
        let mut table: toml::Table = toml::from_str(BASE).unwrap();
        for o in extra {
            apply_override(&mut table, o)?;
        }
        let cfg: ExperimentConfig = table.try_into()?;
        cfg.validate()?;
        Ok(cfg)
    }

    #[test]
    fn defaults_and_overrides() {
        let cfg = parse(&[]).unwrap();
        assert_eq!(cfg.reps, 4096);
        assert_eq!(cfg.model, Model::Poisson);
        let cfg = parse(&[
            "pop.k=7",
            "n_test_list=[10, 20]",
            "output_dir=results/x",
            "model=gaussian",
        ])
        .unwrap();
        assert_eq!(cfg.n_test_list, vec![10, 20]);
        assert_eq!(cfg.output_dir, PathBuf::from("results/x"));
        assert_eq!(cfg.model, Model::Gaussian);
        assert!(matches!(
            cfg.pop.kind,
            eb_lab::pop::PopKind::UniformDirichlet { k: 7 }
        ));
    }

    #[test]
    fn rejects_bad_input() {
        let err = parse(&["estimators=[\"hb\", \"magic\"]"]).unwrap_err();
        assert!(format!("{err:#}").contains("magic"));
        assert!(parse(&["n=0"]).is_err());
        assert!(parse(&["typo=1"]).is_err());
        assert!(parse(&["no_equals_sign"]).is_err());
        assert!(parse(&["n.x=1"]).is_err());
        assert!(parse(&["model=gaussian", "estimators=[\"robbins\"]"]).is_err());
    }

    #[test]
    fn hash_ignores_output_dir_only() {
        let a = parse(&[]).unwrap();
        let b = parse(&["output_dir=\"elsewhere\""]).unwrap();
        let c = parse(&["root_seed=1"]).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
    }
}
