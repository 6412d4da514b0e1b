//! Leave-one-out diagnostic tables shared by every model kind.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{input, Result};
use crate::gp::{FittedGp, LooPoint};
use crate::multitask::{FittedMtgp, TaskId};
use crate::tagp::TagpModel;
use crate::temporal::FittedTemporalGp;

/// A model that can produce leave-one-out predictions for its target points.
pub trait LooModel {
    fn kind(&self) -> &'static str;
    fn loo_points(&self) -> Result<Vec<LooPoint>>;
}

impl LooModel for FittedGp {
    fn kind(&self) -> &'static str {
        "gp"
    }
    fn loo_points(&self) -> Result<Vec<LooPoint>> {
        self.loo_cv()
    }
}

/// Only the long-run task's points are held out.
impl LooModel for FittedMtgp {
    fn kind(&self) -> &'static str {
        "mtgp"
    }
    fn loo_points(&self) -> Result<Vec<LooPoint>> {
        self.loo_for_task(TaskId::LONG_RUN)
    }
}

impl LooModel for TagpModel {
    fn kind(&self) -> &'static str {
        "tagp"
    }
    fn loo_points(&self) -> Result<Vec<LooPoint>> {
        self.loo_cv()
    }
}

impl LooModel for FittedTemporalGp {
    fn kind(&self) -> &'static str {
        if self.is_periodic() {
            "temporal"
        } else {
            "spatial"
        }
    }
    fn loo_points(&self) -> Result<Vec<LooPoint>> {
        self.loo_cv()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LooRow {
    pub model_kind: String,
    pub point_id: usize,
    pub observed: f64,
    pub pred_mean: f64,
    pub pred_sd: f64,
    pub nll: f64,
    pub sq_err: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LooReport {
    pub rows: Vec<LooRow>,
}

pub fn loo_report(model: &dyn LooModel) -> Result<LooReport> {
    let points = model.loo_points()?;
    if points.len() < 3 {
        return input("a leave-one-out report needs at least three target points");
    }
    Ok(LooReport {
        rows: points
            .iter()
            .enumerate()
            .map(|(i, p)| LooRow {
                model_kind: model.kind().to_string(),
                point_id: i,
                observed: p.observed,
                pred_mean: p.pred_mean,
                pred_sd: p.pred_var.sqrt(),
                nll: p.nll,
                sq_err: p.squared_error,
            })
            .collect(),
    })
}

impl LooReport {
    pub fn total_nll(&self) -> f64 {
        self.rows.iter().map(|r| r.nll).sum()
    }

    pub fn mse(&self) -> f64 {
        if self.rows.is_empty() {
            return f64::NAN;
        }
        self.rows.iter().map(|r| r.sq_err).sum::<f64>() / self.rows.len() as f64
    }

    pub fn extend(&mut self, other: LooReport) {
        self.rows.extend(other.rows);
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.rows {
            out.serialize(r)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads a table written by [`LooReport::write_csv`]; `#` lines are skipped.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
        let rows = rd.deserialize().collect::<std::result::Result<Vec<LooRow>, _>>()?;
        Ok(Self { rows })
    }
}
