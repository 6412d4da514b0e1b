//! Leave-one-out diagnostics on a CSV dataset.
//!
//! Rows are `x_1..x_d, task_or_metric, t, y, sem`. Inputs are rescaled to the
//! unit cube column by column before fitting.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use longrun::gp::{fit_gp, GpConfig, TrainingSet};
use longrun::multitask::{fit_mtgp, MtgpConfig, TaskId};
use longrun::report::{loo_report, LooReport};
use longrun::tagp::{fit_base_models, fit_tagp, ProxyDataset, TagpConfig};
use longrun::temporal::{fit_temporal_gp_with, TemporalTrainingSet};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::header_line;
use crate::{runtime, Failure, ModelKind};

#[derive(Clone, Debug)]
struct Row {
    x: Vec<f64>,
    metric: String,
    t: f64,
    y: f64,
    sem: f64,
}

#[derive(Debug, Default)]
pub struct Dataset {
    /// Metrics in order of first appearance.
    metrics: Vec<String>,
    rows: Vec<Row>,
}

fn bad(row: usize, msg: impl std::fmt::Display) -> Failure {
    Failure::Config(format!("row {row}: {msg}"))
}

impl Dataset {
    pub fn parse(text: &str) -> Result<Self, Failure> {
        let mut rd = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
        let head = rd.headers().map_err(|e| bad(1, e))?.clone();
        let col = |name: &str| head.iter().position(|h| h.trim() == name);
        let mut xcols = Vec::new();
        while let Some(c) = col(&format!("x_{}", xcols.len() + 1)) {
            xcols.push(c);
        }
        if xcols.is_empty() {
            return Err(bad(1, "no x_1 column"));
        }
        let need = |name: &str| col(name).ok_or_else(|| bad(1, format!("missing column {name}")));
        let (mc, tc, yc, sc) = (need("task_or_metric")?, need("t")?, need("y")?, need("sem")?);
        let mut data = Dataset::default();
        for (i, rec) in rd.records().enumerate() {
            // header is line 1
            let line = rec.as_ref().ok().and_then(|r| r.position()).map_or(i + 2, |p| p.line() as usize);
            let rec = rec.map_err(|e| bad(line, e))?;
            let num = |c: usize, name: &str| -> Result<f64, Failure> {
                let v: f64 = rec
                    .get(c)
                    .unwrap_or("")
                    .trim()
                    .parse()
                    .map_err(|_| bad(line, format!("{name} is not a number")))?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(bad(line, format!("{name} is not finite")))
                }
            };
            let x = xcols
                .iter()
                .enumerate()
                .map(|(k, c)| num(*c, &format!("x_{}", k + 1)))
                .collect::<Result<Vec<_>, _>>()?;
            let metric = rec.get(mc).unwrap_or("").trim().to_string();
            if metric.is_empty() {
                return Err(bad(line, "empty task_or_metric"));
            }
            let (t, y, sem) = (num(tc, "t")?, num(yc, "y")?, num(sc, "sem")?);
            if sem < 0.0 {
                return Err(bad(line, "sem is negative"));
            }
            if t < 0.0 {
                return Err(bad(line, "t is negative"));
            }
            if !data.metrics.contains(&metric) {
                data.metrics.push(metric.clone());
            }
            data.rows.push(Row { x, metric, t, y, sem });
        }
        if data.rows.is_empty() {
            return Err(bad(2, "no data rows"));
        }
        data.rescale();
        Ok(data)
    }

    fn rescale(&mut self) {
        let d = self.rows[0].x.len();
        for k in 0..d {
            let lo = self.rows.iter().map(|r| r.x[k]).fold(f64::INFINITY, f64::min);
            let hi = self.rows.iter().map(|r| r.x[k]).fold(f64::NEG_INFINITY, f64::max);
            for r in &mut self.rows {
                r.x[k] = if hi > lo { (r.x[k] - lo) / (hi - lo) } else { 0.5 };
            }
        }
    }

    fn of<'a>(&'a self, metric: &'a str) -> impl Iterator<Item = &'a Row> {
        self.rows.iter().filter(move |r| r.metric == metric)
    }

    fn training(&self, metric: &str) -> Result<TrainingSet, Failure> {
        let rows: Vec<&Row> = self.of(metric).collect();
        Ok(TrainingSet::new(
            rows.iter().map(|r| r.x.clone()).collect(),
            rows.iter().map(|r| r.y).collect(),
            rows.iter().map(|r| r.sem).collect(),
        )?)
    }

    fn temporal(&self, metric: &str) -> TemporalTrainingSet {
        let mut t = TemporalTrainingSet::default();
        for r in self.of(metric) {
            t.push(r.x.clone(), r.t, r.y, r.sem);
        }
        t
    }
}

#[derive(Serialize)]
struct LooLine<'a> {
    metric: &'a str,
    model_kind: &'a str,
    point_id: usize,
    observed: f64,
    pred_mean: f64,
    pred_sd: f64,
    nll: f64,
    sq_err: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub metric: String,
    pub model_kind: String,
    pub n: usize,
    pub total_nll: f64,
    pub mse: f64,
}

/// One report per metric (single-metric kinds) or one for the target.
pub fn evaluate(
    data: &Dataset,
    model: ModelKind,
    target: Option<&str>,
    seed: u64,
) -> Result<Vec<(String, LooReport)>, Failure> {
    let gp_cfg = GpConfig::default();
    let fit_err = |m: &str, e: longrun::Error| runtime(format!("metric {m}: {e}"));
    match model {
        ModelKind::Gp | ModelKind::Temporal | ModelKind::Spatial => data
            .metrics
            .iter()
            .map(|m| {
                let report = match model {
                    ModelKind::Gp => {
                        loo_report(&fit_gp(&data.training(m)?, &gp_cfg, seed).map_err(|e| fit_err(m, e))?)
                    }
                    _ => loo_report(
                        &fit_temporal_gp_with(&data.temporal(m), &gp_cfg, model == ModelKind::Temporal, seed)
                            .map_err(|e| fit_err(m, e))?,
                    ),
                };
                Ok((m.clone(), report.map_err(|e| fit_err(m, e))?))
            })
            .collect(),
        ModelKind::Mtgp | ModelKind::Tagp => {
            let target = match target {
                Some(t) if data.metrics.iter().any(|m| m == t) => t.to_string(),
                Some(t) => return Err(Failure::Config(format!("--target {t}: not a metric in the dataset"))),
                None => data.metrics[0].clone(),
            };
            let others: Vec<&String> = data.metrics.iter().filter(|m| **m != target).collect();
            let lr = data.training(&target)?;
            let report = if model == ModelKind::Mtgp {
                let mut tasks = BTreeMap::new();
                tasks.insert(TaskId::LONG_RUN, lr);
                for (k, m) in others.iter().enumerate() {
                    tasks.insert(TaskId(k + 1), data.training(m)?);
                }
                let fit = fit_mtgp(&tasks, &MtgpConfig::default(), seed).map_err(|e| fit_err(&target, e))?;
                loo_report(&fit)
            } else {
                let proxies = others
                    .iter()
                    .map(|m| Ok(ProxyDataset::new(m.as_str(), data.training(m)?)))
                    .collect::<Result<Vec<_>, Failure>>()?;
                let base = fit_base_models(&proxies, &gp_cfg, seed);
                let fit = fit_tagp(&base, &lr, &TagpConfig::default(), seed).map_err(|e| fit_err(&target, e))?;
                loo_report(&fit)
            };
            Ok(vec![(target.clone(), report.map_err(|e| fit_err(&target, e))?)])
        }
    }
}

pub fn summarize(reports: &[(String, LooReport)]) -> Vec<Summary> {
    reports
        .iter()
        .map(|(m, r)| Summary {
            metric: m.clone(),
            model_kind: r.rows.first().map(|x| x.model_kind.clone()).unwrap_or_default(),
            n: r.rows.len(),
            total_nll: r.total_nll(),
            mse: r.mse(),
        })
        .collect()
}

fn write_csv<T: Serialize>(path: &Path, header: &str, rows: &[T]) -> Result<(), Failure> {
    std::fs::create_dir_all(path.parent().unwrap_or(Path::new("."))).map_err(runtime)?;
    let mut f = std::fs::File::create(path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    writeln!(f, "{header}").map_err(runtime)?;
    let mut w = csv::Writer::from_writer(f);
    for r in rows {
        w.serialize(r).map_err(runtime)?;
    }
    w.flush().map_err(runtime)?;
    Ok(())
}

pub fn run(path: &Path, model: ModelKind, target: Option<&str>, out: &Path, seed: u64) -> Result<(), Failure> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
    let data = Dataset::parse(&text)?;
    let reports = evaluate(&data, model, target, seed)?;
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    hasher.update(format!("{model:?}|{target:?}").as_bytes());
    let header = header_line(&hex::encode(hasher.finalize()), seed);

    let mut lines = Vec::new();
    for (m, r) in &reports {
        lines.extend(r.rows.iter().map(|x| LooLine {
            metric: m,
            model_kind: &x.model_kind,
            point_id: x.point_id,
            observed: x.observed,
            pred_mean: x.pred_mean,
            pred_sd: x.pred_sd,
            nll: x.nll,
            sq_err: x.sq_err,
        }));
    }
    let summary = summarize(&reports);
    write_csv(&out.join("loo.csv"), &header, &lines)?;
    write_csv(&out.join("loo_summary.csv"), &header, &summary)?;
    for s in &summary {
        println!(
            "{:<16} {:<9} n={:<4} nll={:.6} mse={:.6}",
            s.metric, s.model_kind, s.n, s.total_nll, s.mse
        );
    }
    Ok(())
}
