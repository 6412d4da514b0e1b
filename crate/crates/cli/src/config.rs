//! Study configuration files (TOML).

use std::path::{Path, PathBuf};

use longrun::benchmarks::{BenchmarkProblem, ProblemConfig};
use longrun::harness::{DesignSpec, ScheduleConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::Failure;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub seed: u64,
    pub n_reps: usize,
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Short-run noise levels for an optional sensitivity table.
    #[serde(default)]
    pub noise_sweep: Vec<f64>,
    pub problem: ProblemConfig,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    pub designs: Vec<DesignSpec>,
}

impl StudyConfig {
    pub fn parse(text: &str) -> Result<Self, Failure> {
        toml::from_str(text).map_err(|e| Failure::Config(format!("config: {e}")))
    }

    /// Reads and validates a config, applying command-line overrides.
    pub fn load(path: &Path, seed: Option<u64>, reps: Option<usize>) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        if let Some(s) = seed {
            cfg.seed = s;
        }
        if let Some(r) = reps {
            cfg.n_reps = r;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), Failure> {
        self.build_problem()?;
        if self.n_reps < 2 {
            return Err(Failure::Config("n_reps: at least two replications are needed".into()));
        }
        self.schedule
            .validate()
            .map_err(|e| Failure::Config(format!("schedule: {e}")))?;
        if self.designs.is_empty() {
            return Err(Failure::Config("designs: at least one design is needed".into()));
        }
        let mut names = std::collections::BTreeSet::new();
        for (i, d) in self.designs.iter().enumerate() {
            d.validate().map_err(|e| Failure::Config(format!("designs[{i}]: {e}")))?;
            if !names.insert(d.name()) {
                return Err(Failure::Config(format!("designs[{i}]: duplicate design name {}", d.name())));
            }
        }
        if let Some(v) = self.noise_sweep.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(Failure::Config(format!("noise_sweep: invalid level {v}")));
        }
        Ok(())
    }

    pub fn build_problem(&self) -> Result<BenchmarkProblem, Failure> {
        self.problem
            .build()
            .map_err(|e| Failure::Config(format!("problem.name = {:?}: {e}", self.problem.name)))
    }

    /// SHA-256 of the resolved config, overrides included.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    pub fn header(&self) -> String {
        header_line(&self.hash(), self.seed)
    }
}

pub fn header_line(hash: &str, seed: u64) -> String {
    format!("# longrun {} config={hash} seed={seed}", env!("CARGO_PKG_VERSION"))
}
