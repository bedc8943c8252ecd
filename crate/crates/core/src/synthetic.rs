//! Toy hierarchies with known structure, for tests and demos.
//!
//! The root has a weekly cycle plus multiplicative noise. Each family
//! splits its parent by Dirichlet proportions whose mean depends on the
//! day of the week, so a model that reads calendar covariates can predict
//! the split while a trailing average cannot.

use chrono::{Datelike, NaiveDate};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dirichlet;
use crate::hierarchy::{daily_index, HierarchyTree, SeriesPanel};
use crate::matrix::Matrix;
use crate::rng::stream_rng;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub parents: usize,
    pub leaves_per_parent: usize,
    pub len: usize,
    pub start: NaiveDate,
    pub root_level: f64,
    /// Relative amplitude of the weekly root cycle.
    pub weekly_amplitude: f64,
    /// Standard deviation of the multiplicative root noise.
    pub root_noise: f64,
    /// Amplitude of the weekday effect on child log-shares.
    pub pattern_strength: f64,
    /// Dirichlet precision `Σα` of every family.
    pub concentration: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            parents: 3,
            leaves_per_parent: 4,
            len: 364,
            start: NaiveDate::from_ymd_opt(2023, 1, 2).expect("valid date"),
            root_level: 1000.0,
            weekly_amplitude: 0.3,
            root_noise: 0.03,
            pattern_strength: 1.0,
            concentration: 80.0,
            seed: 0,
        }
    }
}

fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let e: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Root `total`, parents `P0…`, leaves `P0_L0…`.
pub fn toy_tree(parents: usize, leaves_per_parent: usize) -> Result<HierarchyTree> {
    if parents < 1 || leaves_per_parent < 1 {
        return Err(Error::Config(
            "toy tree needs at least one parent and one leaf each".into(),
        ));
    }
    let mut edges = Vec::new();
    for p in 0..parents {
        edges.push((format!("P{p}"), "total".to_string()));
        for l in 0..leaves_per_parent {
            edges.push((format!("P{p}_L{l}"), format!("P{p}")));
        }
    }
    HierarchyTree::from_edges(&edges)
}

/// Draws a coherent toy panel. The same config always gives the same panel.
pub fn generate(config: &SyntheticConfig) -> Result<(HierarchyTree, SeriesPanel)> {
    if config.len == 0 {
        return Err(Error::Config("synthetic series length must be >= 1".into()));
    }
    if !(config.concentration > 0.0) || !(config.root_level > 0.0) {
        return Err(Error::Config("concentration and root_level must be positive".into()));
    }
    let tree = toy_tree(config.parents, config.leaves_per_parent)?;
    let index = daily_index(config.start, config.len);
    let mut rng = stream_rng(config.seed, 0);

    // per family and child: a base log-share and a weekday phase
    let families = tree.families();
    let shapes: Vec<Vec<(f64, f64)>> = families
        .iter()
        .map(|f| {
            f.children
                .iter()
                .map(|_| {
                    let base = rng.random_range(-0.5..0.5);
                    let phase = rng.random_range(0.0..std::f64::consts::TAU);
                    (base, phase)
                })
                .collect()
        })
        .collect();

    let mut values = Matrix::zeros(config.len, tree.len());
    for (t, date) in index.iter().enumerate() {
        let dow = date.weekday().num_days_from_monday() as f64;
        let cycle = 1.0 + config.weekly_amplitude * (std::f64::consts::TAU * dow / 7.0).sin();
        let z: f64 = StandardNormal.sample(&mut rng);
        let root = (config.root_level * cycle * (1.0 + config.root_noise * z)).max(0.0);
        values.set(t, tree.root(), root);
        for (f, shape) in families.iter().zip(&shapes) {
            let logits: Vec<f64> = shape
                .iter()
                .map(|(base, phase)| base + config.pattern_strength * (std::f64::consts::TAU * dow / 7.0 + phase).cos())
                .collect();
            let alpha: Vec<f64> = softmax(&logits).iter().map(|m| m * config.concentration).collect();
            let a = dirichlet::sample(&alpha, &mut rng);
            let parent = values.get(t, f.parent);
            for (&c, share) in f.children.iter().zip(a) {
                values.set(t, c, share * parent);
            }
        }
    }
    Ok((tree, SeriesPanel::new(values, index)?))
}
