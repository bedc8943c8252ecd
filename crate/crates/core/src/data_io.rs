//! Ingestion of long-format series and edge-list hierarchy files, calendar
//! and holiday covariates, and windowed train/validation/test datasets.

use std::collections::{BTreeSet, HashMap};
use std::io::Read;
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::hierarchy::{self, compute_proportions, Family, HierarchyTree, SeriesPanel};
use crate::matrix::Matrix;
use crate::{Error, Result};

/// Default holiday-kernel bandwidth, in steps.
pub const DEFAULT_TAU: f64 = 3.0;

fn open(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|e| Error::io(path, e))
}

/// Reads a `child,parent` edge list.
pub fn read_hierarchy<R: Read>(reader: R) -> Result<HierarchyTree> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Data(format!("hierarchy file lacks a `{name}` column")))
    };
    let (ci, pi) = (col("child")?, col("parent")?);
    let mut edges = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        edges.push((rec[ci].to_string(), rec[pi].to_string()));
    }
    HierarchyTree::from_edges(&edges)
}

pub fn load_hierarchy(path: impl AsRef<Path>) -> Result<HierarchyTree> {
    read_hierarchy(open(path.as_ref())?)
}

/// Parses `YYYY-MM-DD`, `YYYY-MM` (first of the month) or an integer day
/// offset from 1970-01-01.
pub fn parse_timestamp(s: &str) -> Result<NaiveDate> {
    let s = s.trim();
    if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        return Ok(d);
    }
    if let Ok(d) = NaiveDate::parse_from_str(&format!("{s}-01"), "%Y-%m-%d") {
        return Ok(d);
    }
    if let Ok(n) = s.parse::<i64>() {
        let epoch = NaiveDate::from_ymd_opt(1970, 1, 1).expect("valid date");
        return epoch
            .checked_add_signed(chrono::Duration::days(n))
            .ok_or_else(|| Error::Data(format!("timestamp offset {n} out of range")));
    }
    Err(Error::Data(format!("unparseable timestamp {s:?}")))
}

/// Reads a long-format `series,timestamp,value` panel against `tree`.
///
/// Every (series, timestamp) cell must be present exactly once. When the
/// file holds only the leaves, internal nodes are filled by aggregation.
pub fn read_panel<R: Read>(reader: R, tree: &HierarchyTree) -> Result<SeriesPanel> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Data(format!("panel file lacks a `{name}` column")))
    };
    let (si, ti, vi) = (col("series")?, col("timestamp")?, col("value")?);
    let mut cells: HashMap<(usize, NaiveDate), f64> = HashMap::new();
    let mut stamps = BTreeSet::new();
    let mut seen = vec![false; tree.len()];
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let name = &rec[si];
        let id = tree
            .id_of(name)
            .ok_or_else(|| Error::Data(format!("unknown series id {name:?} on row {}", line + 2)))?;
        let ts = parse_timestamp(&rec[ti])?;
        let value: f64 = rec[vi]
            .parse()
            .map_err(|_| Error::Data(format!("non-numeric value {:?} on row {}", &rec[vi], line + 2)))?;
        if !value.is_finite() {
            return Err(Error::Data(format!("non-finite value on row {}", line + 2)));
        }
        if cells.insert((id, ts), value).is_some() {
            return Err(Error::Data(format!("duplicate cell ({name}, {ts})")));
        }
        stamps.insert(ts);
        seen[id] = true;
    }
    if stamps.is_empty() {
        return Err(Error::Data("panel file has no rows".into()));
    }
    let time_index: Vec<NaiveDate> = stamps.into_iter().collect();
    let leaves_only =
        tree.leaves().iter().all(|&l| seen[l]) && (0..tree.len()).all(|i| seen[i] == tree.is_leaf(i)) && tree.len() > 1;
    let columns: Vec<usize> = if leaves_only {
        tree.leaves().to_vec()
    } else {
        if let Some(missing) = (0..tree.len()).find(|&i| !seen[i]) {
            return Err(Error::Data(format!(
                "series {:?} missing from panel",
                tree.name(missing)
            )));
        }
        (0..tree.len()).collect()
    };
    let mut values = Matrix::zeros(time_index.len(), columns.len());
    for (t, ts) in time_index.iter().enumerate() {
        for (j, &id) in columns.iter().enumerate() {
            let v = cells.get(&(id, *ts)).ok_or_else(|| {
                Error::Data(format!(
                    "ragged timestamps: series {:?} has no value at {ts}",
                    tree.name(id)
                ))
            })?;
            values.set(t, j, *v);
        }
    }
    if leaves_only {
        hierarchy::aggregate_from_leaves(&values, tree, time_index)
    } else {
        SeriesPanel::new(values, time_index)
    }
}

pub fn load_panel(
    panel_csv: impl AsRef<Path>,
    hierarchy_csv: impl AsRef<Path>,
) -> Result<(SeriesPanel, HierarchyTree)> {
    let tree = load_hierarchy(hierarchy_csv)?;
    let panel = read_panel(open(panel_csv.as_ref())?, &tree)?;
    Ok((panel, tree))
}

/// Writes a panel in the long `series,timestamp,value` layout.
pub fn write_panel(path: impl AsRef<Path>, panel: &SeriesPanel, tree: &HierarchyTree) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["series", "timestamp", "value"])?;
    for node in 0..tree.len() {
        for (t, ts) in panel.time_index().iter().enumerate() {
            w.write_record([
                tree.name(node).to_string(),
                ts.format("%Y-%m-%d").to_string(),
                panel.values().get(t, node).to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_hierarchy(path: impl AsRef<Path>, tree: &HierarchyTree) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["child", "parent"])?;
    for (c, p) in tree.edges() {
        w.write_record([c, p])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CalendarEncoding {
    /// One column per calendar feature, categories evenly spaced.
    #[default]
    Scalar,
    /// One column per category.
    OneHot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalendarSpec {
    pub day_of_week: bool,
    pub month_of_year: bool,
    pub encoding: CalendarEncoding,
}

impl Default for CalendarSpec {
    fn default() -> Self {
        Self {
            day_of_week: true,
            month_of_year: true,
            encoding: CalendarEncoding::Scalar,
        }
    }
}

/// Global T×D features shared by every series, each column in [-0.5, 0.5].
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateMatrix {
    pub values: Matrix,
    pub names: Vec<String>,
}

impl CovariateMatrix {
    pub fn empty(len: usize) -> Self {
        Self {
            values: Matrix::zeros(len, 0),
            names: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }

    /// Appends raw columns, normalizing each one.
    pub fn with_columns(self, extra: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let mut cols: Vec<Vec<f64>> = (0..self.dim()).map(|j| self.values.column(j)).collect();
        let mut names = self.names;
        for (name, mut col) in extra {
            if col.len() != self.values.rows() {
                return Err(Error::Dimension(format!(
                    "covariate {name} has {} rows, expected {}",
                    col.len(),
                    self.values.rows()
                )));
            }
            if col.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("covariate {name} has missing values")));
            }
            normalize_column(&mut col);
            cols.push(col);
            names.push(name);
        }
        Ok(Self {
            values: columns_to_matrix(self.values.rows(), &cols),
            names,
        })
    }
}

fn columns_to_matrix(rows: usize, cols: &[Vec<f64>]) -> Matrix {
    Matrix::from_fn(rows, cols.len(), |i, j| cols[j][i])
}

/// Affine min-max rescaling onto [-0.5, 0.5]; constant columns become 0.
pub fn normalize_column(col: &mut [f64]) {
    let (lo, hi) = col
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    if !(hi > lo) {
        col.fill(0.0);
        return;
    }
    let span = hi - lo;
    for v in col.iter_mut() {
        *v = (*v - lo) / span - 0.5;
    }
}

/// `exp(−Δ² / (2τ²))`.
pub fn holiday_kernel(delta: f64, tau: f64) -> f64 {
    (-delta * delta / (2.0 * tau * tau)).exp()
}

/// Average spacing of the index in days (1 for a single stamp).
fn step_days(index: &[NaiveDate]) -> f64 {
    match (index.first(), index.last()) {
        (Some(a), Some(b)) if index.len() > 1 => (*b - *a).num_days() as f64 / (index.len() - 1) as f64,
        _ => 1.0,
    }
}

/// Calendar and holiday-proximity features over `time_index`.
///
/// The holiday distance Δ is the signed offset from the holiday measured in
/// steps of the index (days for daily data, ~30.4 days for monthly data).
pub fn build_covariates(
    time_index: &[NaiveDate],
    calendar: &CalendarSpec,
    holidays: &[NaiveDate],
    tau: f64,
) -> Result<CovariateMatrix> {
    if time_index.is_empty() {
        return Err(Error::Data("empty time index".into()));
    }
    if !(tau > 0.0) {
        return Err(Error::Config(format!("holiday bandwidth tau must be > 0, got {tau}")));
    }
    let mut names = Vec::new();
    let mut cols: Vec<Vec<f64>> = Vec::new();
    let mut categorical = |label: &str, levels: usize, cat: &dyn Fn(&NaiveDate) -> usize| match calendar.encoding {
        CalendarEncoding::Scalar => {
            names.push(label.to_string());
            let denom = (levels - 1) as f64;
            cols.push(time_index.iter().map(|d| cat(d) as f64 / denom - 0.5).collect());
        }
        CalendarEncoding::OneHot => {
            for k in 0..levels {
                names.push(format!("{label}_{k}"));
                cols.push(
                    time_index
                        .iter()
                        .map(|d| if cat(d) == k { 0.5 } else { -0.5 })
                        .collect(),
                );
            }
        }
    };
    if calendar.day_of_week {
        categorical("day_of_week", 7, &|d| d.weekday().num_days_from_monday() as usize);
    }
    if calendar.month_of_year {
        categorical("month_of_year", 12, &|d| d.month0() as usize);
    }
    let step = step_days(time_index);
    for h in holidays {
        let mut col: Vec<f64> = time_index
            .iter()
            .map(|d| holiday_kernel((*d - *h).num_days() as f64 / step, tau))
            .collect();
        normalize_column(&mut col);
        names.push(format!("holiday_{}", h.format("%Y-%m-%d")));
        cols.push(col);
    }
    Ok(CovariateMatrix {
        values: columns_to_matrix(time_index.len(), &cols),
        names,
    })
}

/// History and horizon lengths plus the stride between window starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub history: usize,
    pub horizon: usize,
    pub stride: usize,
}

impl WindowSpec {
    pub fn new(history: usize, horizon: usize, stride: usize) -> Result<Self> {
        if history == 0 || horizon == 0 || stride == 0 {
            return Err(Error::Config(format!(
                "history ({history}), horizon ({horizon}) and stride ({stride}) must all be >= 1"
            )));
        }
        Ok(Self {
            history,
            horizon,
            stride,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

/// Contiguous half-open ranges with train < validation < test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: (usize, usize),
    pub validation: (usize, usize),
    pub test: (usize, usize),
}

impl SplitSpec {
    /// Test is the last `horizon` steps, validation the `horizon` steps
    /// before it, train everything earlier.
    pub fn standard(len: usize, horizon: usize) -> Result<Self> {
        if len < 2 * horizon + 1 {
            return Err(Error::Config(format!(
                "series of length {len} cannot hold validation and test ranges of {horizon} steps"
            )));
        }
        let test_start = len - horizon;
        let val_start = test_start - horizon;
        Ok(Self {
            train: (0, val_start),
            validation: (val_start, test_start),
            test: (test_start, len),
        })
    }

    pub fn range(&self, split: Split) -> (usize, usize) {
        match split {
            Split::Train => self.train,
            Split::Validation => self.validation,
            Split::Test => self.test,
        }
    }
}

/// Model inputs for one family over one history/horizon window.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowInputs {
    pub parent: usize,
    /// First history step; the horizon starts at `start + H`.
    pub start: usize,
    /// H×C historical proportions.
    pub history_props: Matrix,
    /// Parent history divided by its in-window mean (1 when the mean is 0).
    pub parent_history: Vec<f64>,
    /// (H+F)×D covariates, history rows first.
    pub covariates: Matrix,
}

/// Inputs plus future proportion targets. Rows whose parent value was zero
/// are excluded through `target_mask`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingWindow {
    pub inputs: WindowInputs,
    /// F×C
    pub targets: Matrix,
    pub target_mask: Vec<bool>,
}

fn scaled_parent(values: &[f64]) -> Vec<f64> {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let scale = if mean == 0.0 { 1.0 } else { mean };
    values.iter().map(|v| v / scale).collect()
}

fn check_family(panel: &SeriesPanel, family: &Family) -> Result<()> {
    let n = panel.num_series();
    if family.parent >= n || family.children.iter().any(|&c| c >= n) {
        return Err(Error::Data(format!(
            "family of node {} is absent from a panel with {n} series",
            family.parent
        )));
    }
    Ok(())
}

/// Builds window inputs with history `[origin − H, origin)` and covariates
/// over `[origin − H, origin + F)`.
pub fn window_inputs(
    panel: &SeriesPanel,
    covariates: &CovariateMatrix,
    family: &Family,
    window: &WindowSpec,
    origin: usize,
) -> Result<WindowInputs> {
    check_family(panel, family)?;
    let (h, f) = (window.history, window.horizon);
    if origin < h || origin > panel.len() {
        return Err(Error::Config(format!(
            "forecast origin {origin} needs {h} history steps inside a panel of length {}",
            panel.len()
        )));
    }
    if covariates.len() < origin + f {
        return Err(Error::Dimension(format!(
            "covariates cover {} steps, window needs {}",
            covariates.len(),
            origin + f
        )));
    }
    let start = origin - h;
    let history = panel.head(origin);
    let props = compute_proportions(&history.values().row_range(start, h), family)?;
    let parent: Vec<f64> = (start..origin).map(|t| panel.values().get(t, family.parent)).collect();
    Ok(WindowInputs {
        parent: family.parent,
        start,
        history_props: props.values,
        parent_history: scaled_parent(&parent),
        covariates: covariates.values.row_range(start, h + f),
    })
}

/// Valid window start offsets whose horizon lies inside `split`.
pub fn window_starts(len: usize, window: &WindowSpec, split: &SplitSpec, which: Split) -> Vec<usize> {
    let (h, f) = (window.history, window.horizon);
    let (lo, hi) = split.range(which);
    let hi = hi.min(len);
    let mut out = Vec::new();
    match which {
        Split::Train => {
            let mut s = lo;
            while s + h + f <= hi {
                out.push(s);
                s += window.stride;
            }
        }
        Split::Validation | Split::Test => {
            let mut fut = lo;
            while fut + f <= hi {
                if fut >= h {
                    out.push(fut - h);
                }
                fut += window.stride;
            }
        }
    }
    out
}

/// All windows of one family whose horizon falls in `which`. Training
/// windows lie wholly inside the train range; validation and test windows
/// may take their history from earlier ranges but never their horizon.
pub fn make_windows(
    panel: &SeriesPanel,
    covariates: &CovariateMatrix,
    family: &Family,
    window: &WindowSpec,
    split: &SplitSpec,
    which: Split,
) -> Result<Vec<TrainingWindow>> {
    check_family(panel, family)?;
    let (h, f) = (window.history, window.horizon);
    if panel.len() < h + f {
        return Err(Error::Config(format!(
            "series length {} is shorter than history + horizon = {}",
            panel.len(),
            h + f
        )));
    }
    if covariates.len() != panel.len() {
        return Err(Error::Dimension(format!(
            "covariates have {} rows, panel has {}",
            covariates.len(),
            panel.len()
        )));
    }
    let props = compute_proportions(panel.values(), family)?;
    let values = panel.values();
    window_starts(panel.len(), window, split, which)
        .into_iter()
        .map(|s| {
            let parent: Vec<f64> = (s..s + h).map(|t| values.get(t, family.parent)).collect();
            Ok(TrainingWindow {
                inputs: WindowInputs {
                    parent: family.parent,
                    start: s,
                    history_props: props.values.row_range(s, h),
                    parent_history: scaled_parent(&parent),
                    covariates: covariates.values.row_range(s, h + f),
                },
                targets: props.values.row_range(s + h, f),
                target_mask: props.degenerate[s + h..s + h + f].iter().map(|d| !d).collect(),
            })
        })
        .collect()
}

/// Window and covariate settings as they appear in the JSON config:
/// `{"H":28,"F":7,"stride":1,"holidays":[...],"tau":3.0}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowConfig {
    #[serde(rename = "H")]
    pub history: usize,
    #[serde(rename = "F")]
    pub horizon: usize,
    #[serde(default = "one")]
    pub stride: usize,
    #[serde(default)]
    pub holidays: Vec<String>,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "yes")]
    pub day_of_week: bool,
    #[serde(default = "yes")]
    pub month_of_year: bool,
    #[serde(default)]
    pub encoding: CalendarEncoding,
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

fn default_tau() -> f64 {
    DEFAULT_TAU
}

impl WindowConfig {
    pub fn window_spec(&self) -> Result<WindowSpec> {
        WindowSpec::new(self.history, self.horizon, self.stride)
    }

    pub fn calendar(&self) -> CalendarSpec {
        CalendarSpec {
            day_of_week: self.day_of_week,
            month_of_year: self.month_of_year,
            encoding: self.encoding,
        }
    }

    pub fn holiday_dates(&self) -> Result<Vec<NaiveDate>> {
        self.holidays.iter().map(|h| parse_timestamp(h)).collect()
    }

    pub fn covariates(&self, time_index: &[NaiveDate]) -> Result<CovariateMatrix> {
        build_covariates(time_index, &self.calendar(), &self.holiday_dates()?, self.tau)
    }
}
