//! The pipeline config file: one JSON document with a section per command.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use topdown_core::baselines::DEFAULT_HISTORY_WINDOW;
use topdown_core::data_io::WindowConfig;
use topdown_core::inference::default_q_grid;
use topdown_core::proportions::ModelConfig;
use topdown_core::root_model::RootModelSpec;
use topdown_core::synthetic::SyntheticConfig;
use topdown_core::theory_sim::SimConfig;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMethod {
    /// Top-down with trailing-average proportions.
    Historical,
    /// Independent leaf forecasts summed upward.
    BottomUp,
    /// Independent forecasts of every node, OLS-reconciled per sample.
    MintOls,
}

impl BaselineMethod {
    pub fn name(self) -> &'static str {
        match self {
            Self::Historical => "historical",
            Self::BottomUp => "bottom_up",
            Self::MintOls => "mint_ols",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub methods: Vec<BaselineMethod>,
    /// Trailing window of the historical-proportions baseline.
    pub window: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            methods: vec![
                BaselineMethod::Historical,
                BaselineMethod::BottomUp,
                BaselineMethod::MintOls,
            ],
            window: DEFAULT_HISTORY_WINDOW,
        }
    }
}

/// Where forecasts are issued.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    /// Start of the held-out test range, so the forecast can be scored.
    #[default]
    Test,
    /// Past the last observation.
    End,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Long-format `series,timestamp,value` file.
    #[serde(default)]
    pub panel: Option<PathBuf>,
    /// `child,parent` edge list.
    #[serde(default)]
    pub hierarchy: Option<PathBuf>,
    #[serde(default)]
    pub windows: Option<WindowConfig>,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub root: RootModelSpec,
    #[serde(default = "default_samples")]
    pub n_samples: usize,
    #[serde(default = "default_q_grid")]
    pub q_grid: Vec<f64>,
    #[serde(default)]
    pub origin: Origin,
    #[serde(default)]
    pub baseline: BaselineConfig,
    #[serde(default)]
    pub theory: SimConfig,
    #[serde(default)]
    pub synthetic: SyntheticConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

fn default_samples() -> usize {
    1000
}

/// A parsed config with paths resolved against the config's directory.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: PipelineConfig,
    pub bytes: Vec<u8>,
    pub out: PathBuf,
}

impl PipelineConfig {
    /// Reads `path`, applies `--seed` to every seeded section and resolves
    /// the output directory: `--out`, then `TOPDOWN_OUT`, then the file's
    /// `out`, then `out/` beside the config.
    pub fn load(path: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<Loaded, CliError> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        let mut config: PipelineConfig =
            serde_json::from_slice(&bytes).map_err(|e| CliError::new("config", format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        config.panel = config.panel.as_deref().map(resolve);
        config.hierarchy = config.hierarchy.as_deref().map(resolve);
        if let Some(s) = seed {
            config.seed = s;
            config.model.seed = s;
            config.theory.seed = s;
            config.synthetic.seed = s;
        }
        let out = out
            .or_else(|| {
                std::env::var_os("TOPDOWN_OUT")
                    .filter(|v| !v.is_empty())
                    .map(PathBuf::from)
            })
            .unwrap_or_else(|| resolve(config.out.as_deref().unwrap_or(Path::new("out"))));
        config.validate()?;
        Ok(Loaded { config, bytes, out })
    }

    fn validate(&self) -> Result<(), CliError> {
        if self.n_samples < 2 {
            return Err(CliError::new("config", "n_samples must be >= 2"));
        }
        if self.q_grid.is_empty()
            || self.q_grid.iter().any(|&q| !(q > 0.0 && q < 1.0))
            || self.q_grid.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(CliError::new(
                "config",
                "q_grid must be strictly increasing inside (0, 1)",
            ));
        }
        if self.baseline.window == 0 {
            return Err(CliError::new("config", "baseline.window must be >= 1"));
        }
        self.model.validate()?;
        if let Some(w) = &self.windows {
            w.window_spec()?;
        }
        Ok(())
    }

    pub fn windows(&self) -> Result<&WindowConfig, CliError> {
        self.windows
            .as_ref()
            .ok_or_else(|| CliError::new("config", "the `windows` section is required for this command"))
    }

    /// Panel and hierarchy paths, which must exist.
    pub fn data_paths(&self) -> Result<(&Path, &Path), CliError> {
        let panel = self.panel_path()?;
        let hierarchy = self.hierarchy_path()?;
        for p in [panel, hierarchy] {
            if !p.is_file() {
                return Err(CliError::new(
                    "config",
                    format!("data file {} does not exist", p.display()),
                ));
            }
        }
        Ok((panel, hierarchy))
    }

    pub fn panel_path(&self) -> Result<&Path, CliError> {
        self.panel
            .as_deref()
            .ok_or_else(|| CliError::new("config", "the `panel` path is required for this command"))
    }

    pub fn hierarchy_path(&self) -> Result<&Path, CliError> {
        self.hierarchy
            .as_deref()
            .ok_or_else(|| CliError::new("config", "the `hierarchy` path is required for this command"))
    }
}
