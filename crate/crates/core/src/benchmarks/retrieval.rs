//! Simulated recommender sourcing: a fixed universe of topical items, 25
//! sources with their own topic mix, de-duplication across sources, and a
//! cost-penalized utility.

use std::collections::HashSet;

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{input, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    pub n_sources: usize,
    /// Indices of the tuned sources (the decision variables, in order).
    pub tuned: Vec<usize>,
    /// Retrieval count used by every source that is not tuned.
    pub fixed_count: u32,
    pub max_count: u32,
    pub n_topics: usize,
    pub dirichlet_alpha: f64,
    pub relevance_range: (f64, f64),
    pub pool_per_topic: u32,
    pub cost_base: f64,
    pub cost_slope: f64,
    pub seed: u64,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            n_sources: 25,
            tuned: (0..6).collect(),
            fixed_count: 20,
            max_count: 50,
            n_topics: 10,
            dirichlet_alpha: 0.3,
            relevance_range: (0.1, 1.0),
            pool_per_topic: 200,
            cost_base: 0.01,
            cost_slope: 0.04,
            seed: 20_240_601,
        }
    }
}

/// One retrieved item: a topic and an id within that topic's pool.
type Item = (u16, u32);

#[derive(Clone, Debug)]
pub struct RetrievalSimulator {
    pub config: RetrievalConfig,
    /// Topic relevance scores.
    pub relevance: Vec<f64>,
    /// Per-source cost per fetched item.
    pub cost_per_item: Vec<f64>,
    /// Per-source item streams; retrieving `k` items takes the first `k`.
    streams: Vec<Vec<Item>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalOutcome {
    pub quality: f64,
    pub cost: f64,
    /// Relevance credited to each tuned source after de-duplication
    /// (duplicates count for the lowest-index source).
    pub source_scores: Vec<f64>,
    /// Set when a non-integer count was rounded.
    pub rounded: bool,
}

impl RetrievalSimulator {
    pub fn new(config: RetrievalConfig) -> Result<Self> {
        if config.n_sources == 0 || config.n_topics == 0 || config.pool_per_topic == 0 {
            return input("retrieval simulator needs sources, topics and item pools");
        }
        if config.tuned.iter().any(|s| *s >= config.n_sources) {
            return input("tuned source index out of range");
        }
        let mut seen = HashSet::new();
        if !config.tuned.iter().all(|s| seen.insert(*s)) {
            return input("tuned sources must be distinct");
        }
        if !(config.dirichlet_alpha > 0.0) || !(config.relevance_range.0 < config.relevance_range.1) {
            return input("invalid Dirichlet concentration or relevance range");
        }
        let mut rng = crate::seeds::rng(config.seed);
        let (lo, hi) = config.relevance_range;
        let relevance: Vec<f64> = (0..config.n_topics).map(|_| rng.random_range(lo..hi)).collect();
        let stream_len = config.max_count.max(config.fixed_count) as usize;
        let mut streams = Vec::with_capacity(config.n_sources);
        let mut cost_per_item = Vec::with_capacity(config.n_sources);
        for s in 0..config.n_sources {
            let mut srng = crate::seeds::rng(crate::seeds::derive(config.seed, s as u64 + 1));
            let mix: Vec<f64> = if config.n_topics == 1 {
                vec![1.0]
            } else {
                // Dirichlet draw as normalized Gamma variates.
                let gamma = Gamma::new(config.dirichlet_alpha, 1.0)
                    .map_err(|e| crate::Error::Input(format!("dirichlet: {e}")))?;
                let g: Vec<f64> = (0..config.n_topics).map(|_| gamma.sample(&mut srng)).collect();
                let total: f64 = g.iter().sum();
                if total > 0.0 {
                    g.iter().map(|v| v / total).collect()
                } else {
                    vec![1.0 / config.n_topics as f64; config.n_topics]
                }
            };
            let mean_rel: f64 = mix.iter().zip(&relevance).map(|(w, r)| w * r).sum();
            cost_per_item.push(config.cost_base + config.cost_slope * mean_rel);
            let stream = (0..stream_len)
                .map(|_| {
                    let u: f64 = srng.random();
                    let mut acc = 0.0;
                    let mut topic = config.n_topics - 1;
                    for (t, w) in mix.iter().enumerate() {
                        acc += w;
                        if u < acc {
                            topic = t;
                            break;
                        }
                    }
                    (topic as u16, srng.random_range(0..config.pool_per_topic))
                })
                .collect();
            streams.push(stream);
        }
        Ok(Self {
            config,
            relevance,
            cost_per_item,
            streams,
        })
    }

    pub fn dim(&self) -> usize {
        self.config.tuned.len()
    }

    /// Retrieval counts for every source given the tuned coordinates.
    fn counts(&self, x: &[f64]) -> Result<(Vec<u32>, bool)> {
        if x.len() != self.dim() {
            return input(format!("retrieval policy must have {} coordinates", self.dim()));
        }
        let mut counts = vec![self.config.fixed_count; self.config.n_sources];
        let mut rounded = false;
        for (k, s) in self.config.tuned.iter().enumerate() {
            let v = x[k];
            if !v.is_finite() || v < -0.5 || v > self.config.max_count as f64 + 0.5 {
                return input(format!("retrieval count {v} outside [0, {}]", self.config.max_count));
            }
            let r = v.round();
            rounded |= r != v;
            counts[*s] = r.clamp(0.0, self.config.max_count as f64) as u32;
        }
        Ok((counts, rounded))
    }

    pub fn simulate(&self, x: &[f64]) -> Result<RetrievalOutcome> {
        let (counts, rounded) = self.counts(x)?;
        let mut seen: HashSet<Item> = HashSet::new();
        let mut quality = 0.0;
        let mut cost = 0.0;
        let mut per_source = vec![0.0; self.config.n_sources];
        for (s, stream) in self.streams.iter().enumerate() {
            let k = counts[s] as usize;
            cost += self.cost_per_item[s] * k as f64;
            for item in &stream[..k] {
                if seen.insert(*item) {
                    let r = self.relevance[item.0 as usize];
                    quality += r;
                    per_source[s] += r;
                }
            }
        }
        Ok(RetrievalOutcome {
            quality,
            cost,
            source_scores: self.config.tuned.iter().map(|s| per_source[*s]).collect(),
            rounded,
        })
    }
}

/// `quality - 0.6 cost - 20 max(cost - 16, 0)`.
pub fn retrieval_utility(quality: f64, cost: f64) -> f64 {
    quality - 0.6 * cost - 20.0 * (cost - 16.0).max(0.0)
}
