use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::Serialize;
use topdown_core::baselines::{bottom_up_samples, independent_forecasts, mint_ols};
use topdown_core::data_io::{
    load_panel, window_starts, write_hierarchy, write_panel, CovariateMatrix, Split, SplitSpec, WindowSpec,
};
use topdown_core::evaluation::{level_scores, ScoreReport};
use topdown_core::hierarchy::{AggregationMatrix, HierarchyTree, SeriesPanel};
use topdown_core::inference::{empirical_quantiles, ForecastSampleSet};
use topdown_core::matrix::Matrix;
use topdown_core::pipeline::{extend_index, forecast_historical, forecast_topdown, root_ensemble, train_on_panel};
use topdown_core::proportions::ProportionsModel;
use topdown_core::theory_sim::monte_carlo_compare;

use crate::artifacts::{read_forecasts, write_forecasts, write_json, MethodForecast, BASELINE, CHECKPOINT, FORECAST};
use crate::config::{BaselineMethod, Origin, PipelineConfig};
use crate::CliError;

/// Method label of the learned top-down forecast.
pub const TOPDOWN_METHOD: &str = "tdprob";

/// Loaded panel with everything derived from the `windows` section.
struct Data {
    tree: HierarchyTree,
    panel: SeriesPanel,
    window: WindowSpec,
    covariates: CovariateMatrix,
    split: SplitSpec,
}

impl Data {
    fn load(cfg: &PipelineConfig) -> Result<Self, CliError> {
        let (panel_path, hierarchy_path) = cfg.data_paths()?;
        let wc = cfg.windows()?;
        let (panel, tree) = load_panel(panel_path, hierarchy_path)?;
        let window = wc.window_spec()?;
        let t = panel.len();
        if window.history + window.horizon > t {
            return Err(CliError::new(
                "config",
                format!(
                    "H + F = {} + {} exceeds the series length T = {t}",
                    window.history, window.horizon
                ),
            ));
        }
        let split = SplitSpec::standard(t, window.horizon)?;
        let covariates = wc.covariates(panel.time_index())?;
        Ok(Self {
            tree,
            panel,
            window,
            covariates,
            split,
        })
    }

    /// Forecast origin, step dates and covariates long enough to cover them.
    fn origin(&self, cfg: &PipelineConfig) -> Result<(usize, Vec<NaiveDate>, CovariateMatrix), CliError> {
        let f = self.window.horizon;
        match cfg.origin {
            Origin::Test => {
                let o = self.split.test.0;
                Ok((o, self.panel.time_index()[o..o + f].to_vec(), self.covariates.clone()))
            }
            Origin::End => {
                let o = self.panel.len();
                let index = extend_index(self.panel.time_index(), f)?;
                let cov = cfg.windows()?.covariates(&index)?;
                Ok((o, index[o..].to_vec(), cov))
            }
        }
    }
}

fn to_forecast(
    method: &str,
    samples: &ForecastSampleSet,
    q_grid: &[f64],
    dates: &[NaiveDate],
) -> Result<MethodForecast, CliError> {
    Ok(MethodForecast {
        method: method.to_string(),
        dates: dates.to_vec(),
        quantiles: empirical_quantiles(samples, q_grid)?,
    })
}

#[derive(Serialize)]
struct IngestSummary {
    series: usize,
    leaves: usize,
    levels: usize,
    steps: usize,
    start: String,
    end: String,
    covariates: Vec<String>,
    train: (usize, usize),
    validation: (usize, usize),
    test: (usize, usize),
    train_windows: usize,
    validation_windows: usize,
}

pub fn ingest(cfg: &PipelineConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let data = Data::load(cfg)?;
    let index = data.panel.time_index();
    let n_windows = |which| window_starts(data.panel.len(), &data.window, &data.split, which).len();
    let summary = IngestSummary {
        series: data.tree.len(),
        leaves: data.tree.num_leaves(),
        levels: data.tree.num_levels(),
        steps: data.panel.len(),
        start: index[0].to_string(),
        end: index[index.len() - 1].to_string(),
        covariates: data.covariates.names.clone(),
        train: data.split.train,
        validation: data.split.validation,
        test: data.split.test,
        train_windows: n_windows(Split::Train),
        validation_windows: n_windows(Split::Validation),
    };
    let path = out.join("ingest.json");
    write_json(&path, &summary)?;
    Ok(vec![path])
}

pub fn train(cfg: &PipelineConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let data = Data::load(cfg)?;
    let model = train_on_panel(
        &data.tree,
        &data.panel,
        &data.covariates,
        &data.window,
        &data.split,
        cfg.model.clone(),
    )?;
    let ck = out.join(CHECKPOINT);
    model.save(&ck)?;

    let hist = out.join("training_history.csv");
    let mut w = csv::Writer::from_path(&hist).map_err(|e| CliError::csv(&hist, e))?;
    let mut write = || -> csv::Result<()> {
        w.write_record(["epoch", "learning_rate", "train_loss", "validation_loss"])?;
        for e in &model.history.epochs {
            w.write_record([
                e.epoch.to_string(),
                e.learning_rate.to_string(),
                e.train_loss.to_string(),
                e.validation_loss.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    };
    write().map_err(|e| CliError::csv(&hist, e))?;
    if let Some(best) = model.history.best() {
        log::info!(
            "kept epoch {} with validation loss {:.6}",
            best.epoch,
            best.validation_loss
        );
    }
    Ok(vec![ck, hist])
}

pub fn forecast(cfg: &PipelineConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let data = Data::load(cfg)?;
    let ck = out.join(CHECKPOINT);
    if !ck.is_file() {
        return Err(CliError::new(
            "config",
            format!("no checkpoint at {}; run `train` first", ck.display()),
        ));
    }
    let model = ProportionsModel::load(&ck)?;
    if model.node_names != data.tree.names() {
        return Err(CliError::new(
            "config",
            "the checkpoint was trained on a different hierarchy",
        ));
    }
    let (origin, dates, cov) = data.origin(cfg)?;
    let f = data.window.horizon;
    let root = root_ensemble(&data.tree, &data.panel, &cfg.root, origin, f, cfg.n_samples, cfg.seed)?;
    let samples = forecast_topdown(
        &data.tree,
        &data.panel,
        &cov,
        &data.window,
        &model,
        &root,
        origin,
        cfg.seed,
    )?;
    let path = out.join(FORECAST);
    write_forecasts(
        &path,
        &data.tree,
        &[to_forecast(TOPDOWN_METHOD, &samples, &cfg.q_grid, &dates)?],
    )?;
    Ok(vec![path])
}

pub fn baseline(cfg: &PipelineConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let data = Data::load(cfg)?;
    let (origin, dates, _) = data.origin(cfg)?;
    let f = data.window.horizon;
    let history = data.panel.values().row_range(0, origin);
    let mut forecasts = Vec::new();
    for &method in &cfg.baseline.methods {
        let samples = match method {
            BaselineMethod::Historical => {
                let root = root_ensemble(&data.tree, &data.panel, &cfg.root, origin, f, cfg.n_samples, cfg.seed)?;
                forecast_historical(&data.tree, &data.panel, &root, origin, cfg.baseline.window)?
            }
            BaselineMethod::BottomUp => {
                let base = independent_forecasts(&history, &cfg.root, f, cfg.n_samples, cfg.seed)?;
                bottom_up_samples(&base.leaf_samples(&data.tree), &data.tree)?
            }
            BaselineMethod::MintOls => {
                let base = independent_forecasts(&history, &cfg.root, f, cfg.n_samples, cfg.seed)?;
                let s = AggregationMatrix::new(&data.tree);
                let panels = base
                    .samples
                    .iter()
                    .map(|m| mint_ols(m, &s))
                    .collect::<topdown_core::Result<Vec<_>>>()?;
                ForecastSampleSet::from_panels(panels)?
            }
        };
        forecasts.push(to_forecast(method.name(), &samples, &cfg.q_grid, &dates)?);
    }
    if forecasts.is_empty() {
        return Err(CliError::new("config", "baseline.methods is empty"));
    }
    let path = out.join(BASELINE);
    write_forecasts(&path, &data.tree, &forecasts)?;
    Ok(vec![path])
}

#[derive(Serialize)]
struct MethodScores<'a> {
    method: &'a str,
    #[serde(flatten)]
    report: &'a ScoreReport,
}

pub fn evaluate(cfg: &PipelineConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let data = Data::load(cfg)?;
    let mut forecasts = Vec::new();
    for name in [FORECAST, BASELINE] {
        let p = out.join(name);
        if p.is_file() {
            forecasts.extend(read_forecasts(&p, &data.tree)?);
        }
    }
    if forecasts.is_empty() {
        return Err(CliError::new(
            "config",
            format!(
                "no {FORECAST} or {BASELINE} in {}; run `forecast` or `baseline` first",
                out.display()
            ),
        ));
    }
    let index = data.panel.time_index();
    let mut reports = Vec::new();
    for f in &forecasts {
        let rows = f
            .dates
            .iter()
            .map(|d| {
                index.binary_search(d).map_err(|_| {
                    CliError::new("data", format!("{}: no actual value at {d} to score against", f.method))
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let actuals = Matrix::from_fn(rows.len(), data.tree.len(), |s, i| data.panel.values().get(rows[s], i));
        reports.push(level_scores(&f.quantiles, &actuals, &data.tree)?);
    }

    let csv_path = out.join("scores.csv");
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| CliError::csv(&csv_path, e))?;
    let mut write = || -> csv::Result<()> {
        w.write_record(["method", "level", "num_series", "score"])?;
        for (f, r) in forecasts.iter().zip(&reports) {
            for l in &r.levels {
                let score = l.score.map(|s| s.to_string()).unwrap_or_default();
                w.write_record([f.method.clone(), l.level.to_string(), l.num_series.to_string(), score])?;
            }
            w.write_record([
                f.method.clone(),
                "mean".into(),
                data.tree.len().to_string(),
                r.mean.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    };
    write().map_err(|e| CliError::csv(&csv_path, e))?;

    let json_path = out.join("scores.json");
    let json: Vec<MethodScores> = forecasts
        .iter()
        .zip(&reports)
        .map(|(f, report)| MethodScores {
            method: &f.method,
            report,
        })
        .collect();
    write_json(&json_path, &json)?;
    Ok(vec![csv_path, json_path])
}

pub fn simulate_theory(cfg: &PipelineConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let result = monte_carlo_compare(&cfg.theory)?;
    let json = out.join("theory.json");
    write_json(&json, &result)?;
    let csv_path = out.join("theory.csv");
    let file = std::fs::File::create(&csv_path).map_err(|e| CliError::io(&csv_path, e))?;
    result.write_csv(std::io::BufWriter::new(file))?;
    log::info!("bottom-up / top-down risk ratio {:.3}", result.ratio);
    Ok(vec![json, csv_path])
}

pub fn generate(cfg: &PipelineConfig) -> Result<Vec<PathBuf>, CliError> {
    let (tree, panel) = topdown_core::synthetic::generate(&cfg.synthetic)?;
    let panel_path = cfg.panel_path()?.to_path_buf();
    let hierarchy_path = cfg.hierarchy_path()?.to_path_buf();
    for p in [&panel_path, &hierarchy_path] {
        if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
    }
    write_panel(&panel_path, &panel, &tree)?;
    write_hierarchy(&hierarchy_path, &tree)?;
    Ok(vec![panel_path, hierarchy_path])
}
