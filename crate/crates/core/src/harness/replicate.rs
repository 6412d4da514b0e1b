//! Paired replications and aggregate curves.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{replication_seed, run_design, DesignSpec, RunLog, ScheduleConfig};
use crate::benchmarks::{BenchmarkProblem, ProblemConfig};
use crate::error::{input, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iteration: usize,
    pub elapsed: f64,
    pub mean: f64,
    pub sem: f64,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicationResult {
    pub design: String,
    /// Seeds of the successful runs, aligned with `logs`.
    pub seeds: Vec<u64>,
    pub logs: Vec<RunLog>,
    /// Seeds whose run failed, with the error.
    pub failures: Vec<(u64, String)>,
    pub curve: Vec<CurvePoint>,
}

impl ReplicationResult {
    pub fn final_values(&self) -> Vec<f64> {
        self.logs.iter().filter_map(|l| l.final_value()).collect()
    }

    /// Final value for `seed`, if that run succeeded.
    pub fn final_for_seed(&self, seed: u64) -> Option<f64> {
        self.seeds
            .iter()
            .position(|s| *s == seed)
            .and_then(|i| self.logs[i].final_value())
    }

    pub fn final_point(&self) -> Option<&CurvePoint> {
        self.curve.last()
    }

    /// Rebuilds the aggregate from stored logs, e.g. runs read back from disk.
    pub fn from_logs(design: impl Into<String>, seeds: Vec<u64>, logs: Vec<RunLog>) -> Result<Self> {
        if seeds.len() != logs.len() {
            return input("one seed per run log");
        }
        let curve = aggregate(&logs)?;
        Ok(Self {
            design: design.into(),
            seeds,
            logs,
            failures: Vec::new(),
            curve,
        })
    }
}

fn mean_sem(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

fn aggregate(logs: &[RunLog]) -> Result<Vec<CurvePoint>> {
    let Some(first) = logs.first() else {
        return Ok(Vec::new());
    };
    let grid: Vec<(usize, f64)> = first.records.iter().map(|r| (r.iteration, r.elapsed_time)).collect();
    for l in logs {
        let g: Vec<(usize, f64)> = l.records.iter().map(|r| (r.iteration, r.elapsed_time)).collect();
        if g != grid {
            return input("replications disagree on the iteration grid");
        }
    }
    Ok(grid
        .iter()
        .enumerate()
        .map(|(i, (iteration, elapsed))| {
            let v: Vec<f64> = logs.iter().map(|l| l.records[i].best_value).collect();
            let (mean, sem) = mean_sem(&v);
            CurvePoint {
                iteration: *iteration,
                elapsed: *elapsed,
                mean,
                sem,
                n: v.len(),
            }
        })
        .collect())
}

/// Runs every design on the same `n_reps` seeds derived from `root_seed`.
/// Runs with the same seed share their noise streams. A failed run is
/// recorded and left out of the aggregate.
pub fn replicate(
    problem: &BenchmarkProblem,
    designs: &[DesignSpec],
    schedule: &ScheduleConfig,
    n_reps: usize,
    root_seed: u64,
) -> Result<Vec<ReplicationResult>> {
    if n_reps < 2 {
        return input("replicate needs at least two replications");
    }
    schedule.validate()?;
    for d in designs {
        d.validate()?;
    }
    let seeds: Vec<u64> = (0..n_reps).map(|r| replication_seed(root_seed, r)).collect();
    let jobs: Vec<(usize, u64)> = (0..designs.len()).flat_map(|d| seeds.iter().map(move |s| (d, *s))).collect();
    let runs: Vec<Result<RunLog>> = jobs
        .par_iter()
        .map(|(d, s)| run_design(problem, &designs[*d], schedule, *s))
        .collect();
    let mut out = Vec::with_capacity(designs.len());
    let mut runs = runs.into_iter();
    for d in designs {
        let mut res = ReplicationResult {
            design: d.name(),
            seeds: Vec::new(),
            logs: Vec::new(),
            failures: Vec::new(),
            curve: Vec::new(),
        };
        for s in &seeds {
            match runs.next().expect("one run per job") {
                Ok(log) => {
                    res.seeds.push(*s);
                    res.logs.push(log);
                }
                Err(e) => {
                    log::warn!("design {} seed {s} failed: {e}", res.design);
                    res.failures.push((*s, e.to_string()));
                }
            }
        }
        res.curve = aggregate(&res.logs)?;
        out.push(res);
    }
    Ok(out)
}

/// `design,iteration,elapsed,mean,sem,n` rows.
pub fn write_curves_csv<W: std::io::Write>(results: &[ReplicationResult], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["design", "iteration", "elapsed", "mean", "sem", "n"])?;
    for r in results {
        for p in &r.curve {
            wr.write_record([
                r.design.clone(),
                p.iteration.to_string(),
                p.elapsed.to_string(),
                p.mean.to_string(),
                p.sem.to_string(),
                p.n.to_string(),
            ])?;
        }
    }
    wr.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub noise_fraction: f64,
    pub design: String,
    pub mean: f64,
    pub sem: f64,
    pub n: usize,
}

/// Final-value table over short-run noise levels (long-run SEM follows the
/// problem's ratio).
pub fn noise_sweep(
    problem: &ProblemConfig,
    levels: &[f64],
    designs: &[DesignSpec],
    schedule: &ScheduleConfig,
    n_reps: usize,
    root_seed: u64,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for level in levels {
        let p = ProblemConfig {
            noise_fraction: *level,
            ..problem.clone()
        }
        .build()?;
        for r in replicate(&p, designs, schedule, n_reps, root_seed)? {
            if let Some(pt) = r.final_point() {
                rows.push(SweepRow {
                    noise_fraction: *level,
                    design: r.design.clone(),
                    mean: pt.mean,
                    sem: pt.sem,
                    n: pt.n,
                });
            }
        }
    }
    Ok(rows)
}

pub fn write_sweep_csv<W: std::io::Write>(rows: &[SweepRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}
