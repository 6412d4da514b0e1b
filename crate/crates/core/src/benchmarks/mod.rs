//! Ground-truth problems for simulated A/B testing: closed-form test
//! functions and a retrieval simulator, each observed through a sigmoid
//! convergence toward the long-run value and optionally a time-of-day cycle.

mod functions;
mod retrieval;

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{contract, input, Result};

pub use functions::{ackley, ackley3, hartmann3, time_varying_factor, TimeVaryingConfig, ACKLEY_BOUND};
pub use retrieval::{retrieval_utility, RetrievalConfig, RetrievalOutcome, RetrievalSimulator};

const SEM_PROBE_POINTS: usize = 1024;
const SEM_PROBE_SEED: u64 = 0x5E3_1024;

/// Observed values and standard errors for one arm at one time.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricPanel {
    pub values: BTreeMap<String, (f64, f64)>,
}

impl MetricPanel {
    pub fn value(&self, metric: &str) -> Option<f64> {
        self.values.get(metric).map(|v| v.0)
    }

    pub fn sem(&self, metric: &str) -> Option<f64> {
        self.values.get(metric).map(|v| v.1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialKind {
    LongRun,
    ShortRun,
}

/// Multiplicative daily cycle on short-run readings, clock in hours.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TimeOfDay {
    pub amplitude: f64,
    pub phase: f64,
}

impl Default for TimeOfDay {
    fn default() -> Self {
        Self {
            amplitude: 0.3,
            phase: 0.0,
        }
    }
}

impl TimeOfDay {
    pub fn factor(&self, clock_hours: f64) -> f64 {
        1.0 + self.amplitude * (2.0 * std::f64::consts::PI * (clock_hours + self.phase) / 24.0).sin()
    }
}

#[derive(Clone, Debug)]
pub enum ProblemKind {
    Hartmann3,
    Ackley3,
    /// Smooth concave bowl on the unit square, peak 1 at (0.3, 0.6).
    Quadratic2,
    Retrieval(Arc<RetrievalSimulator>),
}

#[derive(Clone, Debug)]
pub struct BenchmarkProblem {
    pub name: String,
    pub bounds: Vec<(f64, f64)>,
    pub integer: Vec<bool>,
    pub kind: ProblemKind,
    pub dynamics: TimeVaryingConfig,
    pub time_of_day: Option<TimeOfDay>,
    /// Metric names; the first is the objective (utility).
    pub metrics: Vec<String>,
    /// Metrics whose short-run readings serve as proxies.
    pub proxies: Vec<String>,
    /// Short-run SEM per metric, in `metrics` order.
    pub sem: Vec<f64>,
    /// Long-run SEM as a fraction of the short-run SEM.
    pub long_run_sem_ratio: f64,
}

impl BenchmarkProblem {
    fn from_kind(name: &str, kind: ProblemKind, dynamics: TimeVaryingConfig) -> Result<Self> {
        let (bounds, integer, metrics) = match &kind {
            ProblemKind::Hartmann3 => (vec![(0.0, 1.0); 3], vec![false; 3], vec!["objective".to_string()]),
            ProblemKind::Ackley3 => (
                vec![(-ACKLEY_BOUND, ACKLEY_BOUND); 3],
                vec![false; 3],
                vec!["objective".to_string()],
            ),
            ProblemKind::Quadratic2 => (vec![(0.0, 1.0); 2], vec![false; 2], vec!["objective".to_string()]),
            ProblemKind::Retrieval(sim) => {
                let d = sim.dim();
                let mut m = vec!["utility".to_string(), "quality".to_string(), "cost".to_string()];
                m.extend((0..d).map(|k| format!("score_{k}")));
                (vec![(0.0, sim.config.max_count as f64); d], vec![true; d], m)
            }
        };
        dynamics.validate(bounds.len())?;
        let n = metrics.len();
        Ok(Self {
            name: name.to_string(),
            bounds,
            integer,
            kind,
            dynamics,
            time_of_day: None,
            proxies: metrics.clone(),
            metrics,
            sem: vec![0.0; n],
            long_run_sem_ratio: 0.2,
        })
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn objective(&self) -> &str {
        &self.metrics[0]
    }

    pub fn metric_index(&self, metric: &str) -> Option<usize> {
        self.metrics.iter().position(|m| m == metric)
    }

    /// Rounds integer-valued dimensions.
    pub fn round_arm(&self, arm: &[f64]) -> Vec<f64> {
        arm.iter()
            .zip(&self.integer)
            .map(|(v, int)| if *int { v.round() } else { *v })
            .collect()
    }

    pub fn check_arm(&self, arm: &[f64]) -> Result<()> {
        if arm.len() != self.dim() {
            return input(format!("{}: arm has {} coordinates, expected {}", self.name, arm.len(), self.dim()));
        }
        for (k, (v, (lo, hi))) in arm.iter().zip(&self.bounds).enumerate() {
            let slack = if self.integer[k] { 0.5 } else { 1e-9 * (hi - lo) };
            if !v.is_finite() || *v < lo - slack || *v > hi + slack {
                return input(format!("{}: coordinate {k} = {v} outside [{lo}, {hi}]", self.name));
            }
        }
        Ok(())
    }

    pub fn normalize(&self, arm: &[f64]) -> Vec<f64> {
        arm.iter()
            .zip(&self.bounds)
            .map(|(v, (lo, hi))| ((v - lo) / (hi - lo)).clamp(0.0, 1.0))
            .collect()
    }

    /// True long-run values of every metric, in `metrics` order.
    pub fn true_metrics(&self, arm: &[f64]) -> Result<Vec<f64>> {
        self.check_arm(arm)?;
        let arm = self.round_arm(arm);
        Ok(match &self.kind {
            ProblemKind::Hartmann3 => vec![-hartmann3(&arm)],
            ProblemKind::Ackley3 => vec![-ackley3(&arm)],
            ProblemKind::Quadratic2 => vec![1.0 - (arm[0] - 0.3).powi(2) - (arm[1] - 0.6).powi(2)],
            ProblemKind::Retrieval(sim) => {
                let out = sim.simulate(&arm)?;
                let mut v = vec![retrieval_utility(out.quality, out.cost), out.quality, out.cost];
                v.extend(out.source_scores);
                v
            }
        })
    }

    /// True long-run objective.
    pub fn f_true(&self, arm: &[f64]) -> Result<f64> {
        Ok(self.true_metrics(arm)?[0])
    }

    /// Noiseless means at elapsed time `t` and clock hour `clock`.
    pub fn mean_metrics(&self, arm: &[f64], t: f64, clock: f64, trial: TrialKind) -> Result<Vec<f64>> {
        let truth = self.true_metrics(arm)?;
        let mut factor = time_varying_factor(&self.normalize(arm), t, &self.dynamics)?;
        if let (Some(tod), TrialKind::ShortRun) = (&self.time_of_day, trial) {
            factor *= tod.factor(clock);
        }
        let mut means: Vec<f64> = truth.iter().map(|v| v * factor).collect();
        if matches!(self.kind, ProblemKind::Retrieval(_)) {
            means[0] = retrieval_utility(means[1], means[2]);
        }
        Ok(means)
    }

    pub fn metric_sem(&self, trial: TrialKind) -> Vec<f64> {
        match trial {
            TrialKind::ShortRun => self.sem.clone(),
            TrialKind::LongRun => self.sem.iter().map(|s| s * self.long_run_sem_ratio).collect(),
        }
    }

    /// Sets each metric's short-run SEM to `fraction` of its range over a
    /// fixed quasi-random probe of the domain.
    pub fn calibrate_noise(&mut self, fraction: f64) -> Result<()> {
        if !(fraction >= 0.0 && fraction.is_finite()) {
            return input("noise fraction must be nonnegative");
        }
        let probe = crate::qmc::sobol_points(SEM_PROBE_POINTS, self.dim(), SEM_PROBE_SEED)?;
        let mut lo = vec![f64::INFINITY; self.metrics.len()];
        let mut hi = vec![f64::NEG_INFINITY; self.metrics.len()];
        for u in probe {
            let raw = crate::acquisition::from_unit(&u, &self.bounds);
            for (k, v) in self.true_metrics(&raw)?.into_iter().enumerate() {
                lo[k] = lo[k].min(v);
                hi[k] = hi[k].max(v);
            }
        }
        self.sem = lo.iter().zip(&hi).map(|(a, b)| fraction * (b - a)).collect();
        Ok(())
    }
}

/// Reading at elapsed time `t` with the clock equal to `t`.
pub fn observe(
    problem: &BenchmarkProblem,
    arm: &[f64],
    t: f64,
    trial: TrialKind,
    rng: &mut impl Rng,
) -> Result<MetricPanel> {
    observe_at(problem, arm, t, t, trial, rng)
}

/// Reading at elapsed time `t` (since the arm started) and clock hour `clock`.
pub fn observe_at(
    problem: &BenchmarkProblem,
    arm: &[f64],
    t: f64,
    clock: f64,
    trial: TrialKind,
    rng: &mut impl Rng,
) -> Result<MetricPanel> {
    let means = problem.mean_metrics(arm, t, clock, trial)?;
    let sems = problem.metric_sem(trial);
    let mut values = BTreeMap::new();
    for ((name, m), s) in problem.metrics.iter().zip(means).zip(sems) {
        let z: f64 = rng.sample(StandardNormal);
        let v = m + s * z;
        if !v.is_finite() {
            return contract(format!("{}: non-finite reading for {name}", problem.name));
        }
        values.insert(name.clone(), (v, s));
    }
    Ok(MetricPanel { values })
}

pub fn hartmann3_problem(dynamics: TimeVaryingConfig) -> Result<BenchmarkProblem> {
    BenchmarkProblem::from_kind("hartmann3", ProblemKind::Hartmann3, dynamics)
}

pub fn ackley3_problem(dynamics: TimeVaryingConfig) -> Result<BenchmarkProblem> {
    BenchmarkProblem::from_kind("ackley3", ProblemKind::Ackley3, dynamics)
}

pub fn quadratic2_problem(dynamics: TimeVaryingConfig) -> Result<BenchmarkProblem> {
    BenchmarkProblem::from_kind("quadratic2", ProblemKind::Quadratic2, dynamics)
}

pub fn retrieval_problem(cfg: RetrievalConfig, dynamics: TimeVaryingConfig) -> Result<BenchmarkProblem> {
    let sim = RetrievalSimulator::new(cfg)?;
    BenchmarkProblem::from_kind("retrieval", ProblemKind::Retrieval(Arc::new(sim)), dynamics)
}

pub fn make_time_of_day_problem(base: BenchmarkProblem, amplitude: f64, phase: f64) -> Result<BenchmarkProblem> {
    if !(amplitude.abs() < 1.0) || !phase.is_finite() {
        return input(format!("time-of-day amplitude {amplitude} must lie in (-1, 1)"));
    }
    let mut p = base;
    p.time_of_day = Some(TimeOfDay { amplitude, phase });
    p.name = format!("{}-tod", p.name);
    Ok(p)
}

/// Structured description of a problem, as read from a config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemConfig {
    /// One of `hartmann3`, `ackley3`, `quadratic2`, `retrieval`.
    pub name: String,
    pub dynamics: TimeVaryingConfig,
    /// Short-run SEM as a fraction of each metric's range.
    pub noise_fraction: f64,
    pub long_run_sem_ratio: f64,
    pub time_of_day: Option<TimeOfDay>,
    pub retrieval: RetrievalConfig,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        Self {
            name: "hartmann3".into(),
            dynamics: TimeVaryingConfig::default(),
            noise_fraction: 0.05,
            long_run_sem_ratio: 0.2,
            time_of_day: None,
            retrieval: RetrievalConfig::default(),
        }
    }
}

impl ProblemConfig {
    pub fn build(&self) -> Result<BenchmarkProblem> {
        let dyn_ = self.dynamics.clone();
        let mut p = match self.name.as_str() {
            "hartmann3" => hartmann3_problem(dyn_)?,
            "ackley3" => ackley3_problem(dyn_)?,
            "quadratic2" => quadratic2_problem(dyn_)?,
            "retrieval" => retrieval_problem(self.retrieval.clone(), dyn_)?,
            other => return input(format!("unknown problem '{other}'")),
        };
        if !(self.long_run_sem_ratio >= 0.0) {
            return input("long_run_sem_ratio must be nonnegative");
        }
        p.long_run_sem_ratio = self.long_run_sem_ratio;
        p.calibrate_noise(self.noise_fraction)?;
        if let Some(tod) = self.time_of_day {
            p = make_time_of_day_problem(p, tod.amplitude, tod.phase)?;
        }
        Ok(p)
    }
}
