//! Glue between windowing, training, root forecasting and sampling.

use chrono::{Months, NaiveDate};

use crate::baselines::historical_proportions_forecast;
use crate::data_io::{make_windows, window_inputs, CovariateMatrix, Split, SplitSpec, WindowInputs, WindowSpec};
use crate::hierarchy::{HierarchyTree, SeriesPanel};
use crate::inference::{topdown_sample, ForecastSampleSet, SplitPlan};
use crate::proportions::{train, ModelConfig, ProportionsModel, WindowSet};
use crate::rng::stream_rng;
use crate::root_model::{PathEnsemble, RootModelSpec};
use crate::{Error, Result};

/// Generator stream of the root ensemble. Sample panels use streams
/// `0..n_samples`, so this one never collides with them.
const ROOT_STREAM: u64 = 1 << 63;

/// Windows of every family of `tree` for one split.
pub fn window_sets(
    tree: &HierarchyTree,
    panel: &SeriesPanel,
    covariates: &CovariateMatrix,
    window: &WindowSpec,
    split: &SplitSpec,
    which: Split,
) -> Result<Vec<WindowSet>> {
    tree.families()
        .into_iter()
        .map(|family| {
            let windows = make_windows(panel, covariates, &family, window, split, which)?;
            Ok(WindowSet { family, windows })
        })
        .collect()
}

/// Trains one model over all families on the train split, early-stopping
/// on the validation split.
pub fn train_on_panel(
    tree: &HierarchyTree,
    panel: &SeriesPanel,
    covariates: &CovariateMatrix,
    window: &WindowSpec,
    split: &SplitSpec,
    config: ModelConfig,
) -> Result<ProportionsModel> {
    let train_sets = window_sets(tree, panel, covariates, window, split, Split::Train)?;
    let val_sets = window_sets(tree, panel, covariates, window, split, Split::Validation)?;
    if train_sets.iter().all(|s| s.windows.is_empty()) {
        return Err(Error::Config(format!(
            "no training windows: the train range {:?} is shorter than H + F = {}",
            split.train,
            window.history + window.horizon
        )));
    }
    train(&train_sets, &val_sets, config, tree.names().to_vec())
}

/// Inputs of every family for a forecast issued at `origin`.
pub fn origin_inputs(
    tree: &HierarchyTree,
    panel: &SeriesPanel,
    covariates: &CovariateMatrix,
    window: &WindowSpec,
    origin: usize,
) -> Result<Vec<WindowInputs>> {
    tree.families()
        .iter()
        .map(|f| window_inputs(panel, covariates, f, window, origin))
        .collect()
}

/// `index` followed by `extra` further timestamps. Month-spaced indices
/// continue by calendar months, anything else by the last gap in days.
pub fn extend_index(index: &[NaiveDate], extra: usize) -> Result<Vec<NaiveDate>> {
    if index.len() < 2 {
        return Err(Error::Data("need two timestamps to infer the spacing".into()));
    }
    let gaps: Vec<i64> = index.windows(2).map(|w| (w[1] - w[0]).num_days()).collect();
    let monthly = gaps.iter().all(|g| (28..=31).contains(g)) && gaps.iter().any(|&g| g != gaps[0]);
    let last = *index.last().expect("non-empty");
    let step = *gaps.last().expect("non-empty");
    let mut out = index.to_vec();
    for k in 1..=extra {
        let next = if monthly {
            last.checked_add_months(Months::new(k as u32))
        } else {
            last.checked_add_signed(chrono::Duration::days(step * k as i64))
        };
        out.push(next.ok_or_else(|| Error::Data("date overflow while extending the index".into()))?);
    }
    Ok(out)
}

/// Root trajectories from a model fitted on the root history before `origin`.
pub fn root_ensemble(
    tree: &HierarchyTree,
    panel: &SeriesPanel,
    spec: &RootModelSpec,
    origin: usize,
    horizon: usize,
    n_samples: usize,
    seed: u64,
) -> Result<PathEnsemble> {
    let history: Vec<f64> = panel.series(tree.root())[..origin].to_vec();
    let model = spec.fit(&history)?;
    let mut rng = stream_rng(seed, ROOT_STREAM);
    model.sample_paths(horizon, n_samples, &mut rng)
}

/// Top-down forecast issued at `origin` with model-predicted proportions.
#[allow(clippy::too_many_arguments)]
pub fn forecast_topdown(
    tree: &HierarchyTree,
    panel: &SeriesPanel,
    covariates: &CovariateMatrix,
    window: &WindowSpec,
    model: &ProportionsModel,
    root: &PathEnsemble,
    origin: usize,
    seed: u64,
) -> Result<ForecastSampleSet> {
    let inputs = origin_inputs(tree, panel, covariates, window, origin)?;
    let plan = SplitPlan::from_model(tree, model, &inputs)?;
    topdown_sample(tree, &plan, root, seed)
}

/// Historical-proportions forecast issued at `origin`.
pub fn forecast_historical(
    tree: &HierarchyTree,
    panel: &SeriesPanel,
    root: &PathEnsemble,
    origin: usize,
    history_window: usize,
) -> Result<ForecastSampleSet> {
    let values = panel.values().row_range(0, origin);
    historical_proportions_forecast(&values, tree, root, history_window)
}
