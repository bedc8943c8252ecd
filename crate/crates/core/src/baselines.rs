//! Reference coherent methods: bottom-up aggregation, top-down with fixed
//! historical proportions, and OLS reconciliation.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::hierarchy::{aggregate_rows, compute_proportions, AggregationMatrix, HierarchyTree};
use crate::inference::{topdown_sample, FamilySplit, ForecastSampleSet, SplitPlan};
use crate::linalg::lstsq;
use crate::matrix::Matrix;
use crate::rng::stream_rng;
use crate::root_model::{PathEnsemble, RootModelSpec};
use crate::{Error, Result};

/// Trailing window used by the historical-proportions baseline.
pub const DEFAULT_HISTORY_WINDOW: usize = 28;

/// `F×m` leaf point forecasts (columns in leaf order) summed up to `F×N`.
pub fn bottom_up(leaf_forecasts: &Matrix, tree: &HierarchyTree) -> Result<Matrix> {
    aggregate_rows(leaf_forecasts, tree)
}

/// One `F×m` leaf panel per sample, each aggregated up the tree.
pub fn bottom_up_samples(leaf_samples: &[Matrix], tree: &HierarchyTree) -> Result<ForecastSampleSet> {
    let panels = leaf_samples
        .iter()
        .map(|m| aggregate_rows(m, tree))
        .collect::<Result<Vec<_>>>()?;
    ForecastSampleSet::from_panels(panels)
}

/// Per family, the mean of the non-degenerate proportion rows among the
/// last `window` steps of `values` (T×N), repeated over `horizon` steps.
pub fn historical_proportions(
    values: &Matrix,
    tree: &HierarchyTree,
    window: usize,
    horizon: usize,
) -> Result<SplitPlan> {
    if window == 0 {
        return Err(Error::Config("history window must be >= 1".into()));
    }
    if values.rows() < window {
        return Err(Error::Data(format!(
            "{} steps of history cannot fill a window of {window}",
            values.rows()
        )));
    }
    let recent = values.row_range(values.rows() - window, window);
    let mut plan = SplitPlan::new(tree);
    for family in tree.families() {
        let props = compute_proportions(&recent, &family)?;
        let c = family.num_children();
        let mut mean = vec![0.0; c];
        let mut used = 0usize;
        for t in (0..window).filter(|&t| !props.degenerate[t]) {
            for (m, v) in mean.iter_mut().zip(props.values.row(t)) {
                *m += v;
            }
            used += 1;
        }
        if used == 0 {
            return Err(Error::Data(format!(
                "every step of the last {window} has a zero total under {}",
                tree.name(family.parent)
            )));
        }
        mean.iter_mut().for_each(|m| *m /= used as f64);
        plan.set(
            family.parent,
            FamilySplit::Fixed(Matrix::from_fn(horizon, c, |_, j| mean[j])),
        );
    }
    Ok(plan)
}

/// Root samples split down the tree by fixed historical fractions.
pub fn historical_proportions_forecast(
    values: &Matrix,
    tree: &HierarchyTree,
    root: &PathEnsemble,
    window: usize,
) -> Result<ForecastSampleSet> {
    let plan = historical_proportions(values, tree, window, root.horizon())?;
    // fixed splits consume no randomness, so the seed is irrelevant
    topdown_sample(tree, &plan, root, 0)
}

/// `ỹ = S (SᵀS)⁻¹ Sᵀ ŷ` for every row of an F×N base forecast, via a QR
/// least-squares solve rather than the normal equations.
pub fn mint_ols(base: &Matrix, s: &AggregationMatrix) -> Result<Matrix> {
    let (n, _) = s.matrix().shape();
    if base.cols() != n {
        return Err(Error::Dimension(format!(
            "base forecasts have {} columns, aggregation matrix {n} rows",
            base.cols()
        )));
    }
    if !base.is_finite() {
        return Err(Error::Data("base forecasts contain non-finite values".into()));
    }
    let sd = s.to_dmatrix();
    // columns of the right-hand side are time steps
    let rhs = DMatrix::from_fn(n, base.rows(), |i, t| base.get(t, i));
    let leaves = lstsq(&sd, &rhs)?;
    let fitted = &sd * leaves;
    Ok(Matrix::from_fn(base.rows(), n, |t, i| fitted[(i, t)]))
}

/// Independent per-node forecasts from one root-model family: point
/// forecasts (F×N) plus `n_samples` sample panels. Node `i` samples from
/// generator stream `(seed, i)`.
#[derive(Debug, Clone)]
pub struct IndependentForecasts {
    pub points: Matrix,
    /// `n_samples` panels, each F×N.
    pub samples: Vec<Matrix>,
}

pub fn independent_forecasts(
    values: &Matrix,
    spec: &RootModelSpec,
    horizon: usize,
    n_samples: usize,
    seed: u64,
) -> Result<IndependentForecasts> {
    let n = values.cols();
    let fits = (0..n)
        .into_par_iter()
        .map(|i| {
            let model = spec.fit(&values.column(i))?;
            let mut rng = stream_rng(seed, i as u64);
            Ok((
                model.point_forecast(horizon),
                model.sample_paths(horizon, n_samples, &mut rng)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let points = Matrix::from_fn(horizon, n, |s, i| fits[i].0[s]);
    let samples = (0..n_samples)
        .map(|k| Matrix::from_fn(horizon, n, |s, i| fits[i].1.samples().get(k, s)))
        .collect();
    Ok(IndependentForecasts { points, samples })
}

impl IndependentForecasts {
    /// Leaf columns of every sample, in leaf order.
    pub fn leaf_samples(&self, tree: &HierarchyTree) -> Vec<Matrix> {
        self.samples.iter().map(|m| m.select_cols(tree.leaves())).collect()
    }
}
