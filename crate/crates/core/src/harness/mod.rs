//! Simulated experimentation: a long-run trial running beside a sequence of
//! short-run batches (or short-run batches alone), a model refit after each
//! batch, and the model-identified best arm scored against the ground truth.

mod replicate;
mod schedule;

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::acquisition::{from_unit, optimize_batch, quasi_random_design, to_unit, AcquisitionConfig};
use crate::benchmarks::{observe_at, BenchmarkProblem, MetricPanel, TrialKind};
use crate::error::{input, Result};
use crate::gp::{fit_gp, FitOptions, FittedGp, GpConfig, TrainingSet};
use crate::multitask::{assemble_tasks, fit_mtgp, FittedMtgp, MtgpConfig, TaskGranularity};
use crate::optim::{compass_maximize, CompassOptions};
use crate::qmc::sobol_points;
use crate::seeds::{derive, derive_path, derive_str, rng};
use crate::surrogate::Surrogate;
use crate::tagp::{fit_base_models_with, fit_tagp, ProxyDataset, TagpConfig, TagpModel};
use crate::temporal::{fit_temporal_gp, time_averaged_effect, TemporalTrainingSet};

pub use replicate::{noise_sweep, replicate, write_curves_csv, write_sweep_csv, CurvePoint, ReplicationResult, SweepRow};
pub use schedule::{
    calendar_time, parallel_timeline, sequential_long_run_timeline, sequential_timeline, Budget, ScheduleConfig,
    TrialSpan,
};

const TAG_LRE: u64 = 1;
const TAG_SRE: u64 = 2;
const BEST_PROBE_POINTS: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DesignKind {
    /// Short-run batches only, single-task GP.
    Sequential,
    ParallelIcm,
    ParallelTagp,
    /// ICM whose short-run task holds time-of-day averaged effects.
    ParallelTemporal,
    /// Single-task GP on the long-run trial alone.
    LreOnly,
}

impl DesignKind {
    pub fn label(self) -> &'static str {
        match self {
            Self::Sequential => "sequential",
            Self::ParallelIcm => "parallel-icm",
            Self::ParallelTagp => "parallel-tagp",
            Self::ParallelTemporal => "parallel-temporal",
            Self::LreOnly => "lre-only",
        }
    }

    pub fn is_parallel(self) -> bool {
        !matches!(self, Self::Sequential)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesignSpec {
    pub kind: DesignKind,
    /// Overrides the kind's label in logs and tables.
    pub label: Option<String>,
    pub granularity: TaskGranularity,
    pub cauchy_scale: f64,
    /// Restarts for the first hyperparameter fit of a run.
    pub fit_restarts: usize,
    /// Random restarts for later fits, which also start from the previous
    /// iteration's optimum.
    pub refit_restarts: usize,
    /// Local searches when locating the best posterior mean.
    pub best_starts: usize,
    pub acquisition: AcquisitionConfig,
}

impl Default for DesignSpec {
    fn default() -> Self {
        Self {
            kind: DesignKind::ParallelIcm,
            label: None,
            granularity: TaskGranularity::Collapsed,
            cauchy_scale: 0.1,
            fit_restarts: 16,
            refit_restarts: 16,
            best_starts: 8,
            acquisition: AcquisitionConfig::default(),
        }
    }
}

impl DesignSpec {
    pub fn new(kind: DesignKind) -> Self {
        Self {
            kind,
            ..Default::default()
        }
    }

    pub fn name(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.kind.label().to_string())
    }

    pub fn validate(&self) -> Result<()> {
        if self.fit_restarts == 0 || self.refit_restarts == 0 || self.best_starts == 0 {
            return input(format!(
                "design {}: fit_restarts, refit_restarts and best_starts must be positive",
                self.name()
            ));
        }
        if self.kind == DesignKind::ParallelTagp && !(self.cauchy_scale > 0.0 && self.cauchy_scale.is_finite()) {
            return input(format!("design {}: cauchy_scale must be positive", self.name()));
        }
        self.acquisition.validate()
    }

    fn gp_config(&self, warm: Option<&Vec<f64>>) -> GpConfig {
        GpConfig {
            fit: FitOptions {
                restarts: if warm.is_some() {
                    self.refit_restarts
                } else {
                    self.fit_restarts
                },
                warm_starts: warm.cloned().into_iter().collect(),
                ..Default::default()
            },
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeployedArm {
    pub id: String,
    pub trial: String,
    pub arm: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationRecord {
    pub arm_id: String,
    pub trial: String,
    /// Time since the arm's trial started.
    pub elapsed: f64,
    /// Calendar time of the reading.
    pub clock: f64,
    pub metric: String,
    pub value: f64,
    pub sem: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub design: String,
    pub seed: u64,
    pub iteration: usize,
    /// Calendar time at which this iteration's data arrived.
    pub elapsed_time: f64,
    /// Arms whose trials started at the beginning of this iteration.
    pub deployed: Vec<DeployedArm>,
    pub observations: Vec<ObservationRecord>,
    pub best_arm: Vec<f64>,
    /// Ground-truth long-run value of `best_arm`.
    pub best_value: f64,
    pub acquisition_value: Option<f64>,
    pub fallback: bool,
    pub warnings: Vec<String>,
}

/// Append-only log of one simulated study.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub records: Vec<IterationRecord>,
}

impl RunLog {
    pub fn push(&mut self, record: IterationRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if !(record.elapsed_time > last.elapsed_time) {
                return input("run log times must increase");
            }
        }
        self.records.push(record);
        Ok(())
    }

    pub fn final_value(&self) -> Option<f64> {
        self.records.last().map(|r| r.best_value)
    }

    pub fn calendar_time(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.elapsed_time)
    }

    pub fn arms_deployed(&self) -> usize {
        self.records.iter().map(|r| r.deployed.len()).sum()
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(self.to_jsonl()?.as_bytes())?;
        f.flush()?;
        Ok(())
    }

    /// Reads one record per line; blank and `#` lines are skipped.
    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut log = RunLog::default();
        for line in f.lines() {
            let line = line?;
            if !line.trim().is_empty() && !line.starts_with('#') {
                log.records.push(serde_json::from_str(&line)?);
            }
        }
        Ok(log)
    }
}

enum Model {
    Gp(FittedGp),
    Mtgp(FittedMtgp),
    Tagp(Box<TagpModel>),
}

impl Model {
    fn surrogate(&self) -> &dyn Surrogate {
        match self {
            Model::Gp(m) => m,
            Model::Mtgp(m) => m,
            Model::Tagp(m) => m.as_ref(),
        }
    }
}

struct Arm {
    id: String,
    raw: Vec<f64>,
    unit: Vec<f64>,
}

struct Reading {
    clock: f64,
    panel: MetricPanel,
}

/// Everything observed so far in one run.
struct Study<'a> {
    problem: &'a BenchmarkProblem,
    seed: u64,
    lre: Vec<Arm>,
    lre_latest: Vec<MetricPanel>,
    batches: Vec<Vec<(Arm, Vec<Reading>)>>,
}

impl<'a> Study<'a> {
    fn arm(&self, trial: &str, slot: usize, raw: Vec<f64>) -> Arm {
        let raw = self.problem.round_arm(&raw);
        Arm {
            id: format!("{trial}-{slot}"),
            unit: to_unit(&raw, &self.problem.bounds),
            raw,
        }
    }

    fn observe_lre(&mut self, iteration: usize, t: f64, out: &mut Vec<ObservationRecord>) -> Result<()> {
        self.lre_latest.clear();
        for (slot, arm) in self.lre.iter().enumerate() {
            let mut r = rng(derive_path(self.seed, &[TAG_LRE, slot as u64, iteration as u64]));
            let panel = observe_at(self.problem, &arm.raw, t, t, TrialKind::LongRun, &mut r)?;
            push_records(out, &arm.id, "lre", t, t, &panel);
            self.lre_latest.push(panel);
        }
        Ok(())
    }

    /// Observes short-run batch `b` (0-based) that started at `start`.
    fn observe_batch(
        &mut self,
        b: usize,
        arms: Vec<Arm>,
        start: f64,
        length: f64,
        out: &mut Vec<ObservationRecord>,
    ) -> Result<()> {
        let hourly = self.problem.time_of_day.is_some();
        let times: Vec<f64> = if hourly {
            (1..=(length.round().max(1.0) as usize)).map(|h| h as f64).collect()
        } else {
            vec![length]
        };
        let trial = format!("sre-{}", b + 1);
        let mut batch = Vec::with_capacity(arms.len());
        for (slot, arm) in arms.into_iter().enumerate() {
            let mut readings = Vec::with_capacity(times.len());
            for (h, e) in times.iter().enumerate() {
                let mut r = rng(derive_path(self.seed, &[TAG_SRE, slot as u64, b as u64, h as u64]));
                let panel = observe_at(self.problem, &arm.raw, *e, start + e, TrialKind::ShortRun, &mut r)?;
                push_records(out, &arm.id, &trial, *e, start + e, &panel);
                readings.push(Reading {
                    clock: start + e,
                    panel,
                });
            }
            batch.push((arm, readings));
        }
        self.batches.push(batch);
        Ok(())
    }

    fn lre_set(&self, metric: &str) -> TrainingSet {
        let mut t = TrainingSet::default();
        for (arm, p) in self.lre.iter().zip(&self.lre_latest) {
            let (v, s) = p.values[metric];
            t.push(arm.unit.clone(), v, s);
        }
        t
    }

    /// Per-arm short-run summaries (mean of readings) for one batch.
    fn batch_set(&self, b: usize, metric: &str) -> TrainingSet {
        let mut t = TrainingSet::default();
        for (arm, readings) in &self.batches[b] {
            let n = readings.len() as f64;
            let mean = readings.iter().map(|r| r.panel.values[metric].0).sum::<f64>() / n;
            let sem = readings.iter().map(|r| r.panel.values[metric].1.powi(2)).sum::<f64>().sqrt() / n;
            t.push(arm.unit.clone(), mean, sem);
        }
        t
    }

    fn sre_set(&self, metric: &str) -> TrainingSet {
        let mut all = TrainingSet::default();
        for b in 0..self.batches.len() {
            let s = self.batch_set(b, metric);
            for i in 0..s.len() {
                all.push(s.x[i].clone(), s.y[i], s.noise_sem[i]);
            }
        }
        all
    }

    fn sre_arms(&self) -> impl Iterator<Item = &Arm> {
        self.batches.iter().flatten().map(|(a, _)| a)
    }

    fn baseline(&self, kind: DesignKind) -> Vec<Vec<f64>> {
        let lre = self.lre.iter().map(|a| a.raw.clone());
        let sre = self.sre_arms().map(|a| a.raw.clone());
        match kind {
            DesignKind::Sequential => sre.collect(),
            DesignKind::LreOnly => lre.collect(),
            _ => lre.chain(sre).collect(),
        }
    }

    /// Observed arm with the best raw objective reading (used when no model is available).
    fn best_observed(&self) -> Vec<f64> {
        let obj = self.problem.objective();
        let mut best: Option<(f64, &Vec<f64>)> = None;
        let lre = self.lre.iter().zip(&self.lre_latest).map(|(a, p)| (p.values[obj].0, &a.raw));
        let sre = self.batches.iter().flatten().map(|(a, r)| {
            let m = r.iter().map(|x| x.panel.values[obj].0).sum::<f64>() / r.len() as f64;
            (m, &a.raw)
        });
        for (v, x) in lre.chain(sre) {
            if best.as_ref().is_none_or(|(bv, bx)| v > *bv || (v == *bv && x < bx)) {
                best = Some((v, x));
            }
        }
        best.map(|b| b.1.clone()).unwrap_or_else(|| self.problem.bounds.iter().map(|b| b.0).collect())
    }

    /// Fits the design's model. `warm` holds the previous optimum of each
    /// fit (keyed by role) and is updated on success.
    fn fit(&self, design: &DesignSpec, seed: u64, warm: &mut BTreeMap<String, Vec<f64>>) -> Result<Model> {
        let obj = self.problem.objective();
        let gp_cfg = design.gp_config(warm.get("main"));
        let mt_cfg = MtgpConfig {
            fit: gp_cfg.fit.clone(),
            ..Default::default()
        };
        let model = match design.kind {
            DesignKind::Sequential => Model::Gp(fit_gp(&self.sre_set(obj), &gp_cfg, seed)?),
            DesignKind::LreOnly => Model::Gp(fit_gp(&self.lre_set(obj), &gp_cfg, seed)?),
            DesignKind::ParallelIcm => {
                let batches: Vec<TrainingSet> = (0..self.batches.len()).map(|b| self.batch_set(b, obj)).collect();
                let tasks = assemble_tasks(self.lre_set(obj), &batches, design.granularity);
                Model::Mtgp(fit_mtgp(&tasks, &mt_cfg, seed)?)
            }
            DesignKind::ParallelTemporal => {
                let mut readings = TemporalTrainingSet::default();
                for (arm, rs) in self.batches.iter().flatten() {
                    for r in rs {
                        let (v, s) = r.panel.values[obj];
                        readings.push(arm.unit.clone(), r.clock, v, s);
                    }
                }
                let temporal = fit_temporal_gp(
                    &readings,
                    &design.gp_config(warm.get("temporal")),
                    derive_str(seed, "temporal"),
                )?;
                warm.insert("temporal".into(), temporal.gp.theta());
                let mut batches = Vec::with_capacity(self.batches.len());
                for batch in &self.batches {
                    let mut t = TrainingSet::default();
                    for (arm, _) in batch {
                        let (m, v) = time_averaged_effect(&temporal, &arm.unit)?;
                        t.push(arm.unit.clone(), m, v.max(0.0).sqrt());
                    }
                    batches.push(t);
                }
                let tasks = assemble_tasks(self.lre_set(obj), &batches, design.granularity);
                Model::Mtgp(fit_mtgp(&tasks, &mt_cfg, seed)?)
            }
            DesignKind::ParallelTagp => {
                let proxies: Vec<ProxyDataset> = self
                    .problem
                    .proxies
                    .iter()
                    .map(|m| ProxyDataset::new(m.clone(), self.sre_set(m)))
                    .collect();
                let base = fit_base_models_with(
                    &proxies,
                    |id| design.gp_config(warm.get(&format!("base:{id}"))),
                    derive_str(seed, "base"),
                );
                for m in &base.models {
                    warm.insert(format!("base:{}", m.id), m.gp.gp.theta());
                }
                let cfg = TagpConfig {
                    cauchy_scale: design.cauchy_scale,
                    gp: gp_cfg.clone(),
                    ..Default::default()
                };
                Model::Tagp(Box::new(fit_tagp(&base, &self.lre_set(obj), &cfg, seed)?))
            }
        };
        let theta = match &model {
            Model::Gp(m) => m.gp.theta(),
            Model::Mtgp(m) => m.gp.theta(),
            Model::Tagp(m) => m.bias.gp.theta(),
        };
        warm.insert("main".into(), theta);
        Ok(model)
    }
}

fn push_records(out: &mut Vec<ObservationRecord>, id: &str, trial: &str, elapsed: f64, clock: f64, p: &MetricPanel) {
    for (metric, (value, sem)) in &p.values {
        out.push(ObservationRecord {
            arm_id: id.to_string(),
            trial: trial.to_string(),
            elapsed,
            clock,
            metric: metric.clone(),
            value: *value,
            sem: *sem,
        });
    }
}

/// Multi-start maximization of the model's posterior mean over the unit
/// cube, returned in raw coordinates with integer dimensions rounded.
/// `extra_starts` (normalized) join the quasi-random probe. Ties go to the
/// lexicographically smallest point. On failure the best extra start is
/// returned together with a warning.
pub fn identify_best(
    model: &dyn Surrogate,
    bounds: &[(f64, f64)],
    integer: &[bool],
    extra_starts: &[Vec<f64>],
    starts: usize,
    seed: u64,
) -> Result<(Vec<f64>, Option<String>)> {
    crate::acquisition::validate_bounds(bounds)?;
    if model.dim() != bounds.len() || integer.len() != bounds.len() {
        return input("identify_best: dimension mismatch");
    }
    let d = bounds.len();
    let mut probe = sobol_points(BEST_PROBE_POINTS, d, derive_str(seed, "best-probe"))?;
    probe.extend(extra_starts.iter().cloned());
    let mut scored: Vec<(f64, Vec<f64>)> = probe
        .into_iter()
        .map(|u| (model.posterior_mean(&u), u))
        .filter(|(v, _)| v.is_finite())
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.partial_cmp(&b.1).unwrap()));
    let unit = vec![(0.0, 1.0); d];
    let mut best: Option<(f64, Vec<f64>)> = None;
    for (_, s) in scored.iter().take(starts.max(1)) {
        let (x, v) = compass_maximize(|u: &[f64]| model.posterior_mean(u), s, &unit, &CompassOptions::default());
        if !v.is_finite() {
            continue;
        }
        if best.as_ref().is_none_or(|(bv, bx)| v > *bv || (v == *bv && x < *bx)) {
            best = Some((v, x));
        }
    }
    let round = |u: &[f64]| -> Vec<f64> {
        from_unit(u, bounds)
            .into_iter()
            .zip(integer)
            .map(|(v, i)| if *i { v.round() } else { v })
            .collect()
    };
    match best {
        Some((_, u)) => Ok((round(&u), None)),
        None => {
            let msg = "posterior-mean search failed; reporting the first observed arm".to_string();
            warn!("{msg}");
            let fallback = extra_starts.first().cloned().unwrap_or_else(|| vec![0.0; d]);
            Ok((round(&fallback), Some(msg)))
        }
    }
}

/// Simulates one study. Deterministic given `seed`.
pub fn run_design(
    problem: &BenchmarkProblem,
    design: &DesignSpec,
    schedule: &ScheduleConfig,
    seed: u64,
) -> Result<RunLog> {
    let iterations = schedule.validate()?;
    design.validate()?;
    let name = design.name();
    let bounds = &problem.bounds;
    let l = schedule.iteration_length;
    let mut study = Study {
        problem,
        seed,
        lre: Vec::new(),
        lre_latest: Vec::new(),
        batches: Vec::new(),
    };
    let mut log = RunLog::default();

    if iterations == 0 {
        return run_degenerate(&mut study, design, schedule, seed);
    }

    let seq_sizes = schedule.sequential_batches()?;
    let first_size = if design.kind.is_parallel() {
        schedule.sre_batch_size
    } else {
        seq_sizes[0]
    };
    let mut deployed: Vec<DeployedArm> = Vec::new();
    if design.kind.is_parallel() {
        let lre = quasi_random_design(bounds, schedule.lre_arms, derive_str(seed, "lre-design"))?;
        study.lre = lre.into_iter().enumerate().map(|(s, x)| study.arm("lre", s, x)).collect();
        deployed.extend(study.lre.iter().map(|a| DeployedArm {
            id: a.id.clone(),
            trial: "lre".into(),
            arm: a.raw.clone(),
        }));
    }
    let mut next: Vec<Vec<f64>> = quasi_random_design(bounds, first_size, derive_str(seed, "sre-design"))?;
    let mut model: Option<Model> = None;
    let mut warm = BTreeMap::new();

    for k in 1..=iterations {
        let t = k as f64 * l;
        let mut warnings = Vec::new();
        let mut observations = Vec::new();
        let batch: Vec<Arm> = next
            .drain(..)
            .enumerate()
            .map(|(s, x)| study.arm(&format!("sre-{k}"), s, x))
            .collect();
        deployed.extend(batch.iter().map(|a| DeployedArm {
            id: a.id.clone(),
            trial: format!("sre-{k}"),
            arm: a.raw.clone(),
        }));
        if design.kind.is_parallel() {
            study.observe_lre(k, t, &mut observations)?;
        }
        study.observe_batch(k - 1, batch, t - l, l, &mut observations)?;

        match study.fit(design, derive_path(seed, &[0xF17, k as u64]), &mut warm) {
            Ok(m) => model = Some(m),
            Err(e) => {
                let msg = format!("iteration {k}: model fit failed ({e}); keeping the previous model");
                warn!("{msg}");
                warnings.push(msg);
            }
        }

        let baseline = study.baseline(design.kind);
        let mut acquisition_value = None;
        let mut fallback = false;
        if k < iterations {
            let size = if design.kind.is_parallel() {
                schedule.sre_batch_size
            } else {
                seq_sizes[k]
            };
            let acq = AcquisitionConfig {
                batch_size: size,
                seed: derive_path(seed, &[0xACC, k as u64]),
                ..design.acquisition.clone()
            };
            let chosen = match &model {
                Some(m) => optimize_batch(m.surrogate(), bounds, &acq, &baseline, &[]),
                None => input("no model available"),
            };
            match chosen {
                Ok(c) => {
                    acquisition_value = Some(c.acquisition_value).filter(|v| v.is_finite());
                    fallback = c.fallback;
                    if c.fallback {
                        warnings.push(format!("iteration {k}: acquisition fell back to a quasi-random candidate"));
                    }
                    next = c.arms;
                }
                Err(e) => {
                    let msg = format!("iteration {k}: acquisition failed ({e}); deploying quasi-random arms");
                    warn!("{msg}");
                    warnings.push(msg);
                    fallback = true;
                    next = quasi_random_design(bounds, size, derive_path(seed, &[0xBAC, k as u64]))?;
                }
            }
        }

        let best_arm = match &model {
            Some(m) => {
                let starts: Vec<Vec<f64>> = baseline.iter().map(|x| to_unit(x, bounds)).collect();
                let (arm, w) = identify_best(
                    m.surrogate(),
                    bounds,
                    &problem.integer,
                    &starts,
                    design.best_starts,
                    derive_path(seed, &[0xBE57, k as u64]),
                )?;
                warnings.extend(w);
                arm
            }
            None => {
                warnings.push(format!("iteration {k}: no model; reporting the best observed arm"));
                study.best_observed()
            }
        };
        let best_value = problem.f_true(&best_arm)?;
        log.push(IterationRecord {
            design: name.clone(),
            seed,
            iteration: k,
            elapsed_time: t,
            deployed: std::mem::take(&mut deployed),
            observations,
            best_arm,
            best_value,
            acquisition_value,
            fallback,
            warnings,
        })?;
    }
    Ok(log)
}

/// All arms quasi-random, read once after one iteration length; the best
/// arm is chosen among them by posterior mean.
fn run_degenerate(study: &mut Study, design: &DesignSpec, schedule: &ScheduleConfig, seed: u64) -> Result<RunLog> {
    let problem = study.problem;
    let l = schedule.iteration_length;
    let arms = quasi_random_design(&problem.bounds, schedule.total_arms, derive_str(seed, "lre-design"))?;
    let arms: Vec<Arm> = arms.into_iter().enumerate().map(|(s, x)| study.arm("lre", s, x)).collect();
    let deployed = arms
        .iter()
        .map(|a| DeployedArm {
            id: a.id.clone(),
            trial: "lre".into(),
            arm: a.raw.clone(),
        })
        .collect();
    let mut observations = Vec::new();
    let mut warnings = Vec::new();
    study.lre = arms;
    study.observe_lre(1, l, &mut observations)?;
    let obj = problem.objective();
    let best_arm = match fit_gp(&study.lre_set(obj), &design.gp_config(None), derive_path(seed, &[0xF17, 0])) {
        Ok(gp) => {
            let mut best = (f64::NEG_INFINITY, study.lre[0].raw.clone());
            for a in &study.lre {
                let v = gp.posterior_mean(&a.unit);
                if v > best.0 || (v == best.0 && a.raw < best.1) {
                    best = (v, a.raw.clone());
                }
            }
            best.1
        }
        Err(e) => {
            warnings.push(format!("model fit failed ({e}); reporting the best observed arm"));
            study.best_observed()
        }
    };
    let best_value = problem.f_true(&best_arm)?;
    let mut log = RunLog::default();
    log.push(IterationRecord {
        design: design.name(),
        seed,
        iteration: 0,
        elapsed_time: l,
        deployed,
        observations,
        best_arm,
        best_value,
        acquisition_value: None,
        fallback: false,
        warnings,
    })?;
    Ok(log)
}

/// The time-of-day comparison: plain ICM, time-aware ICM, or a GP on the
/// long-run trial alone, with hourly short-run readings.
pub fn run_time_of_day_design(
    problem: &BenchmarkProblem,
    design: &DesignSpec,
    schedule: &ScheduleConfig,
    seed: u64,
) -> Result<RunLog> {
    if problem.time_of_day.is_none() {
        return input(format!("problem {} has no time-of-day effect", problem.name));
    }
    if !matches!(
        design.kind,
        DesignKind::ParallelIcm | DesignKind::ParallelTemporal | DesignKind::LreOnly
    ) {
        return input(format!("design {} is not a time-of-day comparator", design.name()));
    }
    run_design(problem, design, schedule, seed)
}

/// Seed of replication `rep` under `root`.
pub fn replication_seed(root: u64, rep: usize) -> u64 {
    derive(root, rep as u64)
}
