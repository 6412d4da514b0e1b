//! Resource budget and the calendar of trials.

use serde::{Deserialize, Serialize};

use crate::error::{input, Result};

/// How `total_arms` is counted.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Budget {
    /// Arms deployed over the whole study: `lre_arms + iterations * sre_batch_size`.
    #[default]
    Deployments,
    /// Arms running at the same time: `lre_arms + sre_batch_size`; a
    /// sequential design runs `total_arms` short-run arms per iteration.
    Concurrent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub total_arms: usize,
    pub lre_arms: usize,
    pub sre_batch_size: usize,
    /// Duration of one short-run trial (days, or hours on hourly problems).
    pub iteration_length: f64,
    /// Duration of the long-run trial.
    pub total_duration: f64,
    /// Time at which long-run outcomes are considered settled.
    pub long_term_horizon: f64,
    pub budget: Budget,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self::hartmann()
    }
}

impl ScheduleConfig {
    /// 24 arms deployed: 14 long-run, ten 2-day short-run batches of one.
    pub fn hartmann() -> Self {
        Self {
            total_arms: 24,
            lre_arms: 14,
            sre_batch_size: 1,
            iteration_length: 2.0,
            total_duration: 20.0,
            long_term_horizon: 20.0,
            budget: Budget::Deployments,
        }
    }

    /// 32 arms deployed: 12 long-run, ten 2-day short-run batches of two.
    pub fn ackley() -> Self {
        Self {
            total_arms: 32,
            lre_arms: 12,
            sre_batch_size: 2,
            ..Self::hartmann()
        }
    }

    pub fn retrieval() -> Self {
        Self::ackley()
    }

    /// `total_arms` running at once, split evenly between the long-run
    /// trial and each short-run batch, over ten 2-day iterations.
    pub fn concurrent(total_arms: usize) -> Self {
        Self {
            total_arms,
            lre_arms: total_arms - total_arms / 2,
            sre_batch_size: total_arms / 2,
            budget: Budget::Concurrent,
            ..Self::hartmann()
        }
    }

    /// Arms deployed over the study by a parallel or sequential design.
    pub fn deployed_arms(&self, parallel: bool) -> Result<usize> {
        let k = self.validate()?;
        Ok(if parallel && k > 0 {
            self.lre_arms + k * self.sre_batch_size
        } else {
            self.sequential_batches()?.iter().sum()
        })
    }

    /// 48 arms deployed: 6 long-run, fourteen 4-hour short-run batches of three.
    pub fn time_of_day() -> Self {
        Self {
            total_arms: 48,
            lre_arms: 6,
            sre_batch_size: 3,
            iteration_length: 4.0,
            total_duration: 56.0,
            long_term_horizon: 56.0,
            budget: Budget::Deployments,
        }
    }

    /// Number of short-run iterations.
    pub fn iterations(&self) -> Result<usize> {
        if !(self.iteration_length > 0.0 && self.iteration_length.is_finite()) {
            return input("schedule.iteration_length must be positive");
        }
        if !(self.total_duration >= 0.0 && self.total_duration.is_finite()) {
            return input("schedule.total_duration must be nonnegative");
        }
        let ratio = self.total_duration / self.iteration_length;
        let k = ratio.round();
        if (ratio - k).abs() > 1e-9 {
            return input(format!(
                "schedule.total_duration {} is not a whole number of {}-long iterations",
                self.total_duration, self.iteration_length
            ));
        }
        Ok(k as usize)
    }

    pub fn validate(&self) -> Result<usize> {
        let k = self.iterations()?;
        if self.total_arms == 0 {
            return input("schedule.total_arms must be positive");
        }
        match self.budget {
            Budget::Deployments if self.lre_arms + k * self.sre_batch_size != self.total_arms => {
                return input(format!(
                    "schedule: {} long-run arms + {k} x {} short-run arms != {} total arms",
                    self.lre_arms, self.sre_batch_size, self.total_arms
                ));
            }
            Budget::Concurrent if k > 0 && self.lre_arms + self.sre_batch_size != self.total_arms => {
                return input(format!(
                    "schedule: {} long-run arms + {} short-run arms != {} concurrent arms",
                    self.lre_arms, self.sre_batch_size, self.total_arms
                ));
            }
            _ => {}
        }
        if k > 0 && self.sre_batch_size == 0 {
            return input("schedule.sre_batch_size must be positive");
        }
        if k > 0 && self.lre_arms == 0 {
            return input("schedule.lre_arms must be positive");
        }
        if !(self.long_term_horizon >= self.total_duration) {
            return input("schedule.long_term_horizon must be at least total_duration");
        }
        Ok(k)
    }

    /// Sequential batch sizes that spend the whole budget in short-run
    /// trials. Counting deployments, batches are equal with the first
    /// absorbing the remainder.
    pub fn sequential_batches(&self) -> Result<Vec<usize>> {
        let k = self.validate()?;
        if k == 0 {
            return Ok(vec![self.total_arms]);
        }
        if self.budget == Budget::Concurrent {
            return Ok(vec![self.total_arms; k]);
        }
        let b = self.total_arms / k;
        if b == 0 {
            return input("schedule: fewer arms than iterations for a sequential design");
        }
        let mut sizes = vec![b; k];
        sizes[0] += self.total_arms - b * k;
        Ok(sizes)
    }
}

/// One trial on the simulated calendar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialSpan {
    pub label: String,
    pub start: f64,
    pub end: f64,
    pub arms: usize,
}

/// Calendar of a parallel design: the long-run trial spans the whole
/// duration while short-run batches run back to back beside it.
pub fn parallel_timeline(schedule: &ScheduleConfig) -> Result<Vec<TrialSpan>> {
    let k = schedule.validate()?;
    let l = schedule.iteration_length;
    let mut spans = vec![TrialSpan {
        label: "lre".into(),
        start: 0.0,
        end: (k as f64 * l).max(if k == 0 { l } else { 0.0 }),
        arms: if k == 0 { schedule.total_arms } else { schedule.lre_arms },
    }];
    for b in 0..k {
        spans.push(TrialSpan {
            label: format!("sre-{}", b + 1),
            start: b as f64 * l,
            end: (b + 1) as f64 * l,
            arms: schedule.sre_batch_size,
        });
    }
    Ok(spans)
}

/// Calendar of the sequential short-run design.
pub fn sequential_timeline(schedule: &ScheduleConfig) -> Result<Vec<TrialSpan>> {
    let l = schedule.iteration_length;
    Ok(schedule
        .sequential_batches()?
        .into_iter()
        .enumerate()
        .map(|(b, arms)| TrialSpan {
            label: format!("sre-{}", b + 1),
            start: b as f64 * l,
            end: (b + 1) as f64 * l,
            arms,
        })
        .collect())
}

/// Calendar of `k` long-run trials run one after another, each as long as
/// the long-run trial of the parallel design.
pub fn sequential_long_run_timeline(schedule: &ScheduleConfig, k: usize) -> Result<Vec<TrialSpan>> {
    schedule.validate()?;
    let d = schedule.total_duration;
    let per = match schedule.budget {
        Budget::Deployments => schedule.total_arms / k.max(1),
        Budget::Concurrent => schedule.total_arms,
    };
    Ok((0..k)
        .map(|b| TrialSpan {
            label: format!("lre-{}", b + 1),
            start: b as f64 * d,
            end: (b + 1) as f64 * d,
            arms: per,
        })
        .collect())
}

/// Time at which the last trial ends.
pub fn calendar_time(spans: &[TrialSpan]) -> f64 {
    spans.iter().map(|s| s.end).fold(0.0, f64::max)
}
