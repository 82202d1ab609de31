//! TOML experiment configuration.
//!
//! ```toml
//! kind = "solve"              # solve | stability | local_limit | weak | audit | concrete
//! n_bins = 100
//! grid = [100, 100]
//! replicates = 5
//!
//! [map]
//! id = "ellipse"              # or "powerlaw" with [map.params] r = 0.3
//!
//! [domain]
//! lower = [-5.0, -5.0]
//! upper = [5.0, 5.0]
//!
//! [prior]
//! kind = "truncated_gaussian_mixture"
//! components = [{ weight = 1.0, center = [1.25, 1.25], covariance = [[1.0, 0.0], [0.0, 1.0]] }]
//!
//! [data]
//! source = "synthetic"        # or "csv" with path, age_range, r_range, bootstrap_count, noise_sd
//! tgd = { kind = "uniform" }
//!
//! [counts]
//! observed = 100000
//! prior = 100000
//! solution = 10000
//!
//! [seeds]
//! observed = 1
//! prior = 2
//! solution = 3
//! ```
//!
//! Stability configs add `[[stability.pairs]]` tables with `a` and `b`
//! density specs. Convergence configs add a `[sequence]` table with a
//! `limit`, optional `test_functions`, and either explicit `stages` or a
//! `shrinking` block (`atoms`, `scales`, optional weighted `fixed` part).
//! Relative CSV paths resolve against the config file's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diagnostics::{ExperimentSetup, TestFunction};
use crate::error::{Result, ScpError};
use crate::map_model::{BoxDomain, MapRegistry, MapSpec};
use crate::measures::{shrinking_sequence, standard_mollifier, Atom, DensitySpec, WeightedSpec};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Solve,
    Stability,
    LocalLimit,
    Weak,
    Audit,
    Concrete,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Solve => "solve",
            Self::Stability => "stability",
            Self::LocalLimit => "local_limit",
            Self::Weak => "weak",
            Self::Audit => "audit",
            Self::Concrete => "concrete",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic {
        tgd: DensitySpec,
    },
    Csv {
        path: PathBuf,
        age_range: [f64; 2],
        r_range: [f64; 2],
        /// Second age window for the young-vs-old comparison.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        compare_age_range: Option<[f64; 2]>,
        bootstrap_count: usize,
        noise_sd: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Counts {
    pub observed: usize,
    pub prior: usize,
    #[serde(default = "default_solution_count")]
    pub solution: usize,
}

fn default_solution_count() -> usize {
    10_000
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub observed: u64,
    pub prior: u64,
    pub solution: u64,
}

impl Seeds {
    /// Seeds derived from a single base seed.
    pub fn from_base(seed: u64) -> Self {
        Self { observed: rng::derive_seed(seed, 0), prior: rng::derive_seed(seed, 1), solution: rng::derive_seed(seed, 2) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilityPair {
    #[serde(default)]
    pub name: String,
    pub a: DensitySpec,
    pub b: DensitySpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilityConfig {
    pub pairs: Vec<StabilityPair>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Shrinking {
    pub atoms: Vec<Atom>,
    pub scales: Vec<f64>,
    /// Fixed density part mixed into every stage; atoms take the remaining weight.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed: Option<WeightedSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceConfig {
    pub limit: DensitySpec,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stages: Vec<DensitySpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shrinking: Option<Shrinking>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub test_functions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<ExperimentKind>,
    pub map: MapSpec,
    pub domain: BoxDomain,
    pub prior: DensitySpec,
    pub data: DataSource,
    pub counts: Counts,
    pub n_bins: usize,
    pub grid: Vec<usize>,
    pub seeds: Seeds,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stability: Option<StabilityConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sequence: Option<SequenceConfig>,
}

fn default_replicates() -> usize {
    5
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| ScpError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file, resolving relative data paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ScpError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| ScpError::Config(format!("{}: {e}", path.display())))?;
        if let DataSource::Csv { path: csv, .. } = &mut cfg.data {
            if csv.is_relative() {
                *csv = path.parent().unwrap_or(Path::new(".")).join(&*csv);
            }
            if !csv.exists() {
                return Err(ScpError::Config(format!("{}: data file {} not found", path.display(), csv.display())));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| ScpError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(ScpError::Config(msg.to_string()));
        if self.counts.observed == 0 || self.counts.prior == 0 || self.counts.solution == 0 {
            return bad("counts must be at least 1");
        }
        if self.n_bins < 2 {
            return bad("n_bins must be at least 2");
        }
        if self.grid.len() != self.domain.dim() || self.grid.iter().any(|g| *g == 0) {
            return bad("grid must give a positive cell count per domain axis");
        }
        if self.replicates == 0 {
            return bad("replicates must be at least 1");
        }
        if let DataSource::Csv { bootstrap_count, noise_sd, .. } = &self.data {
            if *bootstrap_count == 0 || !(noise_sd.is_finite() && *noise_sd >= 0.0) {
                return bad("bootstrap_count must be positive and noise_sd non-negative");
            }
        }
        if let Some(seq) = &self.sequence {
            if seq.stages.is_empty() == seq.shrinking.is_none() {
                return bad("sequence needs exactly one of `stages` or `shrinking`");
            }
        }
        Ok(())
    }

    /// Replaces all seeds with ones derived from `seed`.
    pub fn override_seed(&mut self, seed: u64) {
        self.seeds = Seeds::from_base(seed);
    }

    pub fn build_map(&self) -> Result<crate::map_model::QoiMap> {
        let map = MapRegistry::default().build(&self.map)?;
        if map.dim() != self.domain.dim() {
            return Err(ScpError::Config(format!(
                "map '{}' has dimension {} but the domain has {}",
                self.map.id,
                map.dim(),
                self.domain.dim()
            )));
        }
        Ok(map)
    }

    pub fn setup(&self) -> Result<ExperimentSetup> {
        Ok(ExperimentSetup {
            domain: self.domain.clone(),
            map: self.build_map()?,
            prior: self.prior.clone(),
            n_bins: self.n_bins,
            grid: self.grid.clone(),
            n_observed: self.counts.observed,
            n_prior: self.counts.prior,
            prior_seed: self.seeds.prior,
            observed_seed: self.seeds.observed,
        })
    }

    pub fn tgd(&self) -> Result<&DensitySpec> {
        match &self.data {
            DataSource::Synthetic { tgd } => Ok(tgd),
            DataSource::Csv { .. } => Err(ScpError::Config("this experiment needs a synthetic data source".into())),
        }
    }

    fn sequence_config(&self) -> Result<&SequenceConfig> {
        self.sequence.as_ref().ok_or_else(|| ScpError::Config("missing [sequence] table".into()))
    }

    /// Stage specs of the convergence sequence.
    pub fn stages(&self) -> Result<Vec<DensitySpec>> {
        let seq = self.sequence_config()?;
        let Some(sh) = &seq.shrinking else {
            return Ok(seq.stages.clone());
        };
        let atoms: Vec<(f64, Vec<f64>)> = sh.atoms.iter().map(|a| (a.weight, a.center.clone())).collect();
        let shrunk = shrinking_sequence(&standard_mollifier(self.domain.dim()), &atoms, &sh.scales)?;
        Ok(match &sh.fixed {
            None => shrunk,
            Some(fixed) => shrunk
                .into_iter()
                .map(|s| DensitySpec::ConvexCombination {
                    parts: vec![fixed.clone(), WeightedSpec { weight: 1.0 - fixed.weight, spec: s }],
                })
                .collect(),
        })
    }

    pub fn limit(&self) -> Result<&DensitySpec> {
        Ok(&self.sequence_config()?.limit)
    }

    pub fn test_functions(&self) -> Result<Vec<TestFunction>> {
        let names = &self.sequence_config()?.test_functions;
        let names: Vec<&str> = if names.is_empty() {
            vec!["lambda1", "lambda2", "lambda1_lambda2"]
        } else {
            names.iter().map(String::as_str).collect()
        };
        names.into_iter().map(|n| TestFunction::from_name(n, &self.domain)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        n_bins = 20
        grid = [10, 10]
        [map]
        id = "ellipse"
        [domain]
        lower = [-5.0, -5.0]
        upper = [5.0, 5.0]
        [prior]
        kind = "uniform"
        [data]
        source = "synthetic"
        tgd = { kind = "uniform" }
        [counts]
        observed = 100
        prior = 1000
        [seeds]
        observed = 1
        prior = 2
        solution = 3
    "#;

    #[test]
    fn parses_and_round_trips() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.replicates, 5);
        assert_eq!(cfg.counts.solution, 10_000);
        let again = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(ExperimentConfig::from_toml(&MINIMAL.replace("observed = 100", "observed = 0")).is_err());
        assert!(ExperimentConfig::from_toml(&MINIMAL.replace("grid = [10, 10]", "grid = [10]")).is_err());
        assert!(ExperimentConfig::from_toml(&MINIMAL.replace("ellipse", "nope")).unwrap().build_map().is_err());
        let unknown = format!("bogus = 1\n{MINIMAL}");
        assert!(matches!(ExperimentConfig::from_toml(&unknown), Err(ScpError::Config(_))));
    }

    #[test]
    fn seed_override_changes_every_seed() {
        let mut cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        cfg.override_seed(9);
        assert_eq!(cfg.seeds, Seeds::from_base(9));
        assert_ne!(cfg.seeds.observed, cfg.seeds.prior);
    }
}
