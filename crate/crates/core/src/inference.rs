//! Top-down sampling and empirical quantiles.
//!
//! Each sample panel starts from one root trajectory. Walking the tree from
//! the root, every family draws a proportion vector per step and hands its
//! parent's value to the children in those proportions. Parents therefore
//! equal the sum of their children exactly, up to floating-point rounding.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::data_io::WindowInputs;
use crate::dirichlet;
use crate::hierarchy::{check_coherence, CoherenceReport, HierarchyTree};
use crate::matrix::Matrix;
use crate::proportions::{FamilyBatch, ProportionsModel};
use crate::rng::stream_rng;
use crate::root_model::PathEnsemble;
use crate::{Error, Result};

/// How one family splits its parent over the horizon.
#[derive(Debug, Clone, PartialEq)]
pub enum FamilySplit {
    /// F×C Dirichlet concentrations; one fresh draw per step and sample.
    Dirichlet(Matrix),
    /// F×C fixed fractions, rows on the simplex.
    Fixed(Matrix),
}

impl FamilySplit {
    fn shape(&self) -> (usize, usize) {
        match self {
            Self::Dirichlet(m) | Self::Fixed(m) => m.shape(),
        }
    }
}

/// One [`FamilySplit`] per non-leaf node, indexed by parent id.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitPlan {
    splits: Vec<Option<FamilySplit>>,
}

impl SplitPlan {
    pub fn new(tree: &HierarchyTree) -> Self {
        Self {
            splits: vec![None; tree.len()],
        }
    }

    pub fn set(&mut self, parent: usize, split: FamilySplit) {
        self.splits[parent] = Some(split);
    }

    pub fn get(&self, parent: usize) -> Option<&FamilySplit> {
        self.splits.get(parent).and_then(Option::as_ref)
    }

    /// Concentrations from the proportions model, one window of inputs per family.
    pub fn from_model(tree: &HierarchyTree, model: &ProportionsModel, inputs: &[WindowInputs]) -> Result<Self> {
        let mut plan = Self::new(tree);
        for family in tree.families() {
            let w = inputs
                .iter()
                .find(|w| w.parent == family.parent)
                .ok_or_else(|| Error::Data(format!("no inputs for the family of {}", tree.name(family.parent))))?;
            let params = model.forward(&FamilyBatch::from_inputs(&family, vec![w]))?;
            let alpha = params.per_window.into_iter().next().expect("one window");
            plan.set(family.parent, FamilySplit::Dirichlet(alpha));
        }
        Ok(plan)
    }

    fn validate(&self, tree: &HierarchyTree, horizon: usize) -> Result<()> {
        for family in tree.families() {
            let split = self
                .get(family.parent)
                .ok_or_else(|| Error::Data(format!("no proportions for the family of {}", tree.name(family.parent))))?;
            let expected = (horizon, family.num_children());
            if split.shape() != expected {
                return Err(Error::Dimension(format!(
                    "proportions for {} are {:?}, expected {expected:?}",
                    tree.name(family.parent),
                    split.shape()
                )));
            }
            if let FamilySplit::Dirichlet(a) = split {
                if a.as_slice().iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                    return Err(Error::Numerical(format!(
                        "non-positive concentration for the family of {}",
                        tree.name(family.parent)
                    )));
                }
            }
        }
        Ok(())
    }
}

/// `n_samples × F × N` sampled values, node axis fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastSampleSet {
    n_samples: usize,
    horizon: usize,
    num_nodes: usize,
    data: Vec<f64>,
}

impl ForecastSampleSet {
    pub fn from_panels(panels: Vec<Matrix>) -> Result<Self> {
        let first = panels
            .first()
            .ok_or_else(|| Error::Dimension("no sample panels".into()))?;
        let (horizon, num_nodes) = first.shape();
        if panels.iter().any(|p| p.shape() != (horizon, num_nodes)) {
            return Err(Error::Dimension("sample panels differ in shape".into()));
        }
        let n_samples = panels.len();
        let data: Vec<f64> = panels.into_iter().flat_map(Matrix::into_vec).collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite forecast sample".into()));
        }
        Ok(Self {
            n_samples,
            horizon,
            num_nodes,
            data,
        })
    }

    pub fn num_samples(&self) -> usize {
        self.n_samples
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn get(&self, sample: usize, step: usize, node: usize) -> f64 {
        self.data[(sample * self.horizon + step) * self.num_nodes + node]
    }

    /// F×N panel of one sample.
    pub fn panel(&self, sample: usize) -> Matrix {
        let size = self.horizon * self.num_nodes;
        Matrix::from_vec(
            self.horizon,
            self.num_nodes,
            self.data[sample * size..(sample + 1) * size].to_vec(),
        )
    }

    /// Values of one node at one step across all samples.
    pub fn draws(&self, step: usize, node: usize) -> Vec<f64> {
        (0..self.n_samples).map(|i| self.get(i, step, node)).collect()
    }

    /// Coherence of all samples stacked as one (n·F)×N panel.
    pub fn coherence(&self, tree: &HierarchyTree, rel_tol: f64) -> Result<CoherenceReport> {
        let stacked = Matrix::from_vec(self.n_samples * self.horizon, self.num_nodes, self.data.clone());
        check_coherence(&stacked, tree, rel_tol)
    }
}

fn sample_panel(tree: &HierarchyTree, plan: &SplitPlan, root_path: &[f64], seed: u64, index: u64) -> Matrix {
    let mut rng = stream_rng(seed, index);
    let horizon = root_path.len();
    let mut panel = Matrix::zeros(horizon, tree.len());
    for (s, &v) in root_path.iter().enumerate() {
        panel.set(s, tree.root(), v);
    }
    // ids are assigned top-down, so every parent is filled before its children
    for family in tree.families() {
        let split = plan.get(family.parent).expect("plan validated");
        for s in 0..horizon {
            let parent = panel.get(s, family.parent);
            let props = match split {
                FamilySplit::Dirichlet(a) => dirichlet::sample(a.row(s), &mut rng),
                FamilySplit::Fixed(p) => p.row(s).to_vec(),
            };
            for (&child, a) in family.children.iter().zip(props) {
                panel.set(s, child, a * parent);
            }
        }
    }
    panel
}

/// One coherent panel per root trajectory.
///
/// Sample `i` uses its own generator stream `(seed, i)`, so the output is
/// independent of how many threads do the work.
pub fn topdown_sample(
    tree: &HierarchyTree,
    plan: &SplitPlan,
    root: &PathEnsemble,
    seed: u64,
) -> Result<ForecastSampleSet> {
    plan.validate(tree, root.horizon())?;
    let panels: Vec<Matrix> = (0..root.num_samples())
        .into_par_iter()
        .map(|i| sample_panel(tree, plan, root.path(i), seed, i as u64))
        .collect();
    ForecastSampleSet::from_panels(panels)
}

/// Levels `0.01, 0.02, …, 0.99`.
pub fn default_q_grid() -> Vec<f64> {
    (1..=99).map(|k| k as f64 / 100.0).collect()
}

fn check_q_grid(q_grid: &[f64]) -> Result<()> {
    if q_grid.is_empty() {
        return Err(Error::Config("quantile grid is empty".into()));
    }
    if let Some(bad) = q_grid.iter().find(|&&q| !(q > 0.0 && q < 1.0)) {
        return Err(Error::Config(format!("quantile level {bad} is outside (0, 1)")));
    }
    if q_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("quantile levels must be strictly increasing".into()));
    }
    Ok(())
}

/// Quantiles of `values` with the `k`-th order statistic (1-based) at level
/// `k/(n+1)`, linear in between and clamped to the extremes outside.
pub fn quantiles_of(values: &[f64], q_grid: &[f64]) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    q_grid
        .iter()
        .map(|&q| {
            let pos = q * (n as f64 + 1.0);
            if pos <= 1.0 {
                sorted[0]
            } else if pos >= n as f64 {
                sorted[n - 1]
            } else {
                let lo = pos.floor() as usize;
                let frac = pos - lo as f64;
                sorted[lo - 1] + frac * (sorted[lo] - sorted[lo - 1])
            }
        })
        .collect()
}

/// `N × F × |q|` quantiles, quantile axis fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileForecast {
    q_grid: Vec<f64>,
    num_nodes: usize,
    horizon: usize,
    values: Vec<f64>,
}

impl QuantileForecast {
    /// Builds from per-(node, step) curves; each must be non-decreasing.
    pub fn new(q_grid: Vec<f64>, num_nodes: usize, horizon: usize, values: Vec<f64>) -> Result<Self> {
        check_q_grid(&q_grid)?;
        if values.len() != num_nodes * horizon * q_grid.len() {
            return Err(Error::Dimension(format!(
                "{} quantile values for {num_nodes} nodes × {horizon} steps × {} levels",
                values.len(),
                q_grid.len()
            )));
        }
        let out = Self {
            q_grid,
            num_nodes,
            horizon,
            values,
        };
        for node in 0..num_nodes {
            for s in 0..horizon {
                if out.curve(node, s).windows(2).any(|w| !(w[1] >= w[0])) {
                    return Err(Error::Data(format!(
                        "quantiles of node {node} step {s} are not non-decreasing"
                    )));
                }
            }
        }
        Ok(out)
    }

    pub fn q_grid(&self) -> &[f64] {
        &self.q_grid
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Quantile curve of one node at one step.
    pub fn curve(&self, node: usize, step: usize) -> &[f64] {
        let q = self.q_grid.len();
        let at = (node * self.horizon + step) * q;
        &self.values[at..at + q]
    }

    /// F×|q| block of one node.
    pub fn node(&self, node: usize) -> Matrix {
        let q = self.q_grid.len();
        let at = node * self.horizon * q;
        Matrix::from_vec(self.horizon, q, self.values[at..at + self.horizon * q].to_vec())
    }

    /// `series,step,quantile,value` rows, steps numbered from 1.
    pub fn write_csv<W: Write>(&self, writer: W, names: &[String]) -> Result<()> {
        if names.len() != self.num_nodes {
            return Err(Error::Dimension("one series name per node required".into()));
        }
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["series", "step", "quantile", "value"])?;
        for (node, name) in names.iter().enumerate() {
            for s in 0..self.horizon {
                for (q, v) in self.q_grid.iter().zip(self.curve(node, s)) {
                    w.write_record([name.clone(), (s + 1).to_string(), q.to_string(), v.to_string()])?;
                }
            }
        }
        w.flush().map_err(|e| Error::io("forecast csv", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path, names: &[String]) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file), names)
    }
}

pub fn empirical_quantiles(samples: &ForecastSampleSet, q_grid: &[f64]) -> Result<QuantileForecast> {
    check_q_grid(q_grid)?;
    if samples.num_samples() < 2 {
        return Err(Error::Data("empirical quantiles need at least two samples".into()));
    }
    let (n_nodes, horizon) = (samples.num_nodes(), samples.horizon());
    let values: Vec<f64> = (0..n_nodes * horizon)
        .into_par_iter()
        .flat_map_iter(|k| quantiles_of(&samples.draws(k % horizon, k / horizon), q_grid))
        .collect();
    QuantileForecast::new(q_grid.to_vec(), n_nodes, horizon, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::DEFAULT_COHERENCE_TOL;

    fn toy_tree() -> HierarchyTree {
        let mut edges = Vec::new();
        for p in 0..3 {
            edges.push((format!("P{p}"), "total".to_string()));
            for l in 0..4 {
                edges.push((format!("L{p}{l}"), format!("P{p}")));
            }
        }
        HierarchyTree::from_edges(&edges).unwrap()
    }

    fn random_plan(tree: &HierarchyTree, horizon: usize) -> SplitPlan {
        let mut plan = SplitPlan::new(tree);
        for (k, f) in tree.families().iter().enumerate() {
            let a = Matrix::from_fn(horizon, f.num_children(), |s, j| 0.3 + ((k + s + j) % 5) as f64);
            plan.set(f.parent, FamilySplit::Dirichlet(a));
        }
        plan
    }

    fn root_ensemble(n: usize, horizon: usize) -> PathEnsemble {
        PathEnsemble::new(Matrix::from_fn(n, horizon, |i, s| {
            100.0 + (i * 7 + s * 13) as f64 % 50.0
        }))
        .unwrap()
    }

    #[test]
    fn samples_are_coherent() {
        let tree = toy_tree();
        let plan = random_plan(&tree, 4);
        let out = topdown_sample(&tree, &plan, &root_ensemble(1000, 4), 3).unwrap();
        assert_eq!((out.num_samples(), out.horizon(), out.num_nodes()), (1000, 4, 16));
        let report = out.coherence(&tree, DEFAULT_COHERENCE_TOL).unwrap();
        assert!(report.passed(), "{}", report.max_violation);
    }

    #[test]
    fn root_scaling_scales_every_node() {
        let tree = toy_tree();
        let plan = random_plan(&tree, 3);
        let root = root_ensemble(50, 3);
        let a = topdown_sample(&tree, &plan, &root, 8).unwrap();
        let b = topdown_sample(&tree, &plan, &root.scale(4.0), 8).unwrap();
        for i in 0..50 {
            for s in 0..3 {
                for n in 0..tree.len() {
                    assert_eq!(b.get(i, s, n), 4.0 * a.get(i, s, n));
                }
            }
        }
    }

    #[test]
    fn concentrated_dirichlet_matches_fixed_split() {
        let tree = HierarchyTree::from_edges(&[("a", "r"), ("b", "r"), ("c", "r")]).unwrap();
        let p = [0.2, 0.5, 0.3];
        let mut plan = SplitPlan::new(&tree);
        plan.set(0, FamilySplit::Dirichlet(Matrix::from_fn(2, 3, |_, j| 1e8 * p[j])));
        let root = PathEnsemble::deterministic(&[10.0, 20.0], 200).unwrap();
        let out = topdown_sample(&tree, &plan, &root, 0).unwrap();
        for i in 0..200 {
            for (s, r) in [10.0, 20.0].iter().enumerate() {
                for (j, pj) in p.iter().enumerate() {
                    let v = out.get(i, s, j + 1);
                    assert!((v - pj * r).abs() / (pj * r) < 1e-3);
                }
            }
        }
    }

    #[test]
    fn missing_family_is_an_error() {
        let tree = toy_tree();
        let mut plan = random_plan(&tree, 2);
        plan.splits[1] = None;
        assert!(topdown_sample(&tree, &plan, &root_ensemble(5, 2), 0).is_err());
        assert!(topdown_sample(&tree, &random_plan(&tree, 3), &root_ensemble(5, 2), 0).is_err());
    }

    #[test]
    fn thread_count_does_not_change_samples() {
        let tree = toy_tree();
        let plan = random_plan(&tree, 2);
        let root = root_ensemble(64, 2);
        let a = topdown_sample(&tree, &plan, &root, 5).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| topdown_sample(&tree, &plan, &root, 5).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn order_statistic_convention() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(quantiles_of(&v, &[0.5]), vec![50.5]);
        assert_eq!(quantiles_of(&[3.0; 10], &[0.01, 0.5, 0.99]), vec![3.0; 3]);
        let q = quantiles_of(&[5.0, 1.0, 3.0], &[0.25, 0.5, 0.75, 0.9]);
        assert_eq!(q, vec![1.0, 3.0, 5.0, 5.0]);
    }

    #[test]
    fn quantile_grid_validation() {
        let tree = toy_tree();
        let out = topdown_sample(&tree, &random_plan(&tree, 1), &root_ensemble(10, 1), 0).unwrap();
        assert!(empirical_quantiles(&out, &[0.0, 0.5]).is_err());
        assert!(empirical_quantiles(&out, &[0.5, 1.0]).is_err());
        assert!(empirical_quantiles(&out, &[0.6, 0.5]).is_err());
        let q = empirical_quantiles(&out, &default_q_grid()).unwrap();
        for n in 0..tree.len() {
            assert!(q.curve(n, 0).windows(2).all(|w| w[1] >= w[0]));
        }
        let one = topdown_sample(&tree, &random_plan(&tree, 1), &root_ensemble(1, 1), 0).unwrap();
        assert!(empirical_quantiles(&one, &[0.5]).is_err());
    }

    #[test]
    fn csv_layout() {
        let tree = HierarchyTree::from_edges(&[("a", "r"), ("b", "r")]).unwrap();
        let mut plan = SplitPlan::new(&tree);
        plan.set(0, FamilySplit::Fixed(Matrix::from_rows(&[vec![0.25, 0.75]])));
        let out = topdown_sample(&tree, &plan, &PathEnsemble::deterministic(&[8.0], 3).unwrap(), 0).unwrap();
        let q = empirical_quantiles(&out, &[0.5]).unwrap();
        let mut buf = Vec::new();
        q.write_csv(&mut buf, tree.names()).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "series,step,quantile,value\nr,1,0.5,8\na,1,0.5,2\nb,1,0.5,6\n");
    }
}
