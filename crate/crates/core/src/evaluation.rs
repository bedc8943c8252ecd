//! Quantile-grid CRPS and level-normalized scores.

use std::io::Write;

use serde::Serialize;

use crate::hierarchy::HierarchyTree;
use crate::inference::QuantileForecast;
use crate::matrix::Matrix;
use crate::{Error, Result};

/// Integration weights for a quantile grid: each level owns the cell
/// between the midpoints to its neighbours, with 0 and 1 closing the ends.
pub fn grid_weights(q_grid: &[f64]) -> Vec<f64> {
    let k = q_grid.len();
    (0..k)
        .map(|i| {
            let lo = if i == 0 { 0.0 } else { 0.5 * (q_grid[i - 1] + q_grid[i]) };
            let hi = if i + 1 == k {
                1.0
            } else {
                0.5 * (q_grid[i] + q_grid[i + 1])
            };
            hi - lo
        })
        .collect()
}

/// `Σ_s ∫₀¹ 2(𝟙[y_s ≤ Q_s(q)] − q)(Q_s(q) − y_s) dq` by the midpoint rule.
///
/// `quantiles` is F×|q|; row `s` must be non-decreasing.
pub fn crps_quantile(quantiles: &Matrix, q_grid: &[f64], actuals: &[f64]) -> Result<f64> {
    if quantiles.cols() != q_grid.len() || quantiles.rows() != actuals.len() {
        return Err(Error::Dimension(format!(
            "quantiles {:?} do not match {} levels × {} actuals",
            quantiles.shape(),
            q_grid.len(),
            actuals.len()
        )));
    }
    let weights = grid_weights(q_grid);
    let mut total = 0.0;
    for (s, &y) in actuals.iter().enumerate() {
        let row = quantiles.row(s);
        if row.windows(2).any(|w| !(w[1] >= w[0])) {
            return Err(Error::Data(format!("quantiles at step {s} are not non-decreasing")));
        }
        for ((&q, &w), &v) in q_grid.iter().zip(&weights).zip(row) {
            let hit = if y <= v { 1.0 } else { 0.0 };
            total += w * 2.0 * (hit - q) * (v - y);
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelScore {
    pub level: usize,
    pub num_series: usize,
    /// `None` when the level's actuals are all zero.
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreReport {
    pub levels: Vec<LevelScore>,
    /// Arithmetic mean of the defined level scores.
    pub mean: f64,
    /// Raw CRPS per node, in node order.
    pub per_series: Vec<f64>,
}

impl ScoreReport {
    pub fn level(&self, level: usize) -> Option<f64> {
        self.levels.iter().find(|l| l.level == level).and_then(|l| l.score)
    }

    /// `level,score` rows; undefined levels have an empty score.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["level", "score"])?;
        for l in &self.levels {
            let score = l.score.map(|s| s.to_string()).unwrap_or_default();
            w.write_record([l.level.to_string(), score])?;
        }
        w.write_record(["mean".to_string(), self.mean.to_string()])?;
        w.flush().map_err(|e| Error::io("score csv", e))?;
        Ok(())
    }
}

/// Per-level `Σ_i CRPS_i / Σ_i Σ_s |y_s^(i)|` and their mean.
///
/// `actuals` is F×N in node order.
pub fn level_scores(forecast: &QuantileForecast, actuals: &Matrix, tree: &HierarchyTree) -> Result<ScoreReport> {
    let n = tree.len();
    if forecast.num_nodes() != n || actuals.cols() != n {
        return Err(Error::Dimension(format!(
            "forecast covers {} nodes and actuals {}, tree has {n}",
            forecast.num_nodes(),
            actuals.cols()
        )));
    }
    if actuals.rows() != forecast.horizon() {
        return Err(Error::Dimension(format!(
            "actuals cover {} steps, forecast {}",
            actuals.rows(),
            forecast.horizon()
        )));
    }
    let per_series = (0..n)
        .map(|node| crps_quantile(&forecast.node(node), forecast.q_grid(), &actuals.column(node)))
        .collect::<Result<Vec<_>>>()?;
    let mut levels = Vec::new();
    for level in 0..tree.num_levels() {
        let nodes = tree.nodes_at_level(level);
        let crps: f64 = nodes.iter().map(|&i| per_series[i]).sum();
        let scale: f64 = nodes
            .iter()
            .map(|&i| actuals.column(i).iter().map(|v| v.abs()).sum::<f64>())
            .sum();
        let score = if scale > 0.0 {
            Some(crps / scale)
        } else {
            log::warn!("level {level} has all-zero actuals; its score is undefined");
            None
        };
        levels.push(LevelScore {
            level,
            num_series: nodes.len(),
            score,
        });
    }
    let defined: Vec<f64> = levels.iter().filter_map(|l| l.score).collect();
    if defined.is_empty() {
        return Err(Error::Data("every level has all-zero actuals".into()));
    }
    let mean = defined.iter().sum::<f64>() / defined.len() as f64;
    Ok(ScoreReport {
        levels,
        mean,
        per_series,
    })
}
