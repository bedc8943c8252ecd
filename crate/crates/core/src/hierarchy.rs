//! Hierarchy trees, families, the aggregation matrix and coherence.
//!
//! Node ids are assigned breadth-first from the root with siblings sorted
//! lexicographically by name, so the same edge set always yields the same
//! ids and the same child order inside every [`Family`], whatever order the
//! edges were listed in. Because ids follow BFS order, every parent id is
//! smaller than the ids of its children.

use std::collections::{BTreeMap, HashMap, VecDeque};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;
use crate::{Error, Result};

/// Default relative tolerance for coherence checks.
pub const DEFAULT_COHERENCE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct HierarchyTree {
    names: Vec<String>,
    parent: Vec<Option<usize>>,
    level: Vec<usize>,
    children: Vec<Vec<usize>>,
    index: HashMap<String, usize>,
    leaves: Vec<usize>,
    leaf_pos: Vec<Option<usize>>,
}

/// A parent node together with its ordered children.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Family {
    pub parent: usize,
    pub children: Vec<usize>,
}

impl Family {
    pub fn num_children(&self) -> usize {
        self.children.len()
    }
}

impl HierarchyTree {
    /// Builds a tree from `(child, parent)` name pairs.
    pub fn from_edges<S: AsRef<str>>(edges: &[(S, S)]) -> Result<Self> {
        if edges.is_empty() {
            return Err(Error::Hierarchy("edge list is empty".into()));
        }
        let mut parent_of: BTreeMap<&str, &str> = BTreeMap::new();
        let mut kids: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for (c, p) in edges {
            let (c, p) = (c.as_ref(), p.as_ref());
            if c.is_empty() || p.is_empty() {
                return Err(Error::Hierarchy(format!("dangling reference in edge ({c:?}, {p:?})")));
            }
            if c == p {
                return Err(Error::Hierarchy(format!("cycle detected: {c} is its own parent")));
            }
            match parent_of.get(c) {
                Some(&prev) if prev != p => {
                    return Err(Error::Hierarchy(format!("node {c} has two parents: {prev} and {p}")));
                }
                Some(_) => continue,
                None => {
                    parent_of.insert(c, p);
                    kids.entry(p).or_default().push(c);
                }
            }
        }
        let roots: Vec<&str> = kids.keys().copied().filter(|p| !parent_of.contains_key(p)).collect();
        let root = match roots.as_slice() {
            [] => return Err(Error::Hierarchy("cycle detected: no root node".into())),
            [r] => *r,
            many => return Err(Error::Hierarchy(format!("multiple roots: {}", many.join(", ")))),
        };
        for v in kids.values_mut() {
            v.sort_unstable();
        }

        let total = parent_of.len() + 1;
        let mut names = Vec::with_capacity(total);
        let mut parent = Vec::with_capacity(total);
        let mut level = Vec::with_capacity(total);
        let mut queue = VecDeque::from([(root, None::<usize>, 0usize)]);
        while let Some((name, par, lvl)) = queue.pop_front() {
            let id = names.len();
            names.push(name.to_string());
            parent.push(par);
            level.push(lvl);
            if let Some(cs) = kids.get(name) {
                for c in cs {
                    queue.push_back((c, Some(id), lvl + 1));
                }
            }
        }
        if names.len() != total {
            let reached: std::collections::HashSet<&str> = names.iter().map(String::as_str).collect();
            let stray: Vec<&str> = parent_of.keys().copied().filter(|n| !reached.contains(n)).collect();
            return Err(Error::Hierarchy(format!(
                "cycle detected among nodes unreachable from root {root}: {}",
                stray.join(", ")
            )));
        }
        Ok(Self::assemble(names, parent, level))
    }

    fn assemble(names: Vec<String>, parent: Vec<Option<usize>>, level: Vec<usize>) -> Self {
        let n = names.len();
        let mut children = vec![Vec::new(); n];
        for (id, p) in parent.iter().enumerate() {
            if let Some(p) = p {
                children[*p].push(id);
            }
        }
        let index = names.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        let leaves: Vec<usize> = (0..n).filter(|&i| children[i].is_empty()).collect();
        let mut leaf_pos = vec![None; n];
        for (k, &l) in leaves.iter().enumerate() {
            leaf_pos[l] = Some(k);
        }
        Self {
            names,
            parent,
            level,
            children,
            index,
            leaves,
            leaf_pos,
        }
    }

    /// A tree made of a single root with no children.
    pub fn single_node(name: &str) -> Self {
        Self::assemble(vec![name.to_string()], vec![None], vec![0])
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn root(&self) -> usize {
        0
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn id_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn parent_of(&self, id: usize) -> Option<usize> {
        self.parent[id]
    }

    pub fn level_of(&self, id: usize) -> usize {
        self.level[id]
    }

    pub fn children_of(&self, id: usize) -> &[usize] {
        &self.children[id]
    }

    pub fn is_leaf(&self, id: usize) -> bool {
        self.children[id].is_empty()
    }

    /// Leaf ids in id order; this is the column order of the aggregation matrix.
    pub fn leaves(&self) -> &[usize] {
        &self.leaves
    }

    pub fn num_leaves(&self) -> usize {
        self.leaves.len()
    }

    pub fn leaf_position(&self, id: usize) -> Option<usize> {
        self.leaf_pos[id]
    }

    /// Number of distinct levels (root only = 1).
    pub fn num_levels(&self) -> usize {
        self.level.iter().max().map_or(0, |m| m + 1)
    }

    pub fn nodes_at_level(&self, level: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.level[i] == level).collect()
    }

    /// One family per non-leaf node, ordered top-down by parent id.
    pub fn families(&self) -> Vec<Family> {
        (0..self.len())
            .filter(|&p| !self.children[p].is_empty())
            .map(|p| Family {
                parent: p,
                children: self.children[p].clone(),
            })
            .collect()
    }

    pub fn family_of(&self, parent: usize) -> Option<Family> {
        (!self.children[parent].is_empty()).then(|| Family {
            parent,
            children: self.children[parent].clone(),
        })
    }

    /// Leaf ids under `id` (itself when it is a leaf).
    pub fn descendant_leaves(&self, id: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![id];
        while let Some(v) = stack.pop() {
            if self.is_leaf(v) {
                out.push(v);
            } else {
                stack.extend(self.children[v].iter().rev());
            }
        }
        out.sort_unstable();
        out
    }

    /// `(child, parent)` edges in id order.
    pub fn edges(&self) -> Vec<(String, String)> {
        (1..self.len())
            .map(|c| {
                let p = self.parent[c].expect("non-root has a parent");
                (self.names[c].clone(), self.names[p].clone())
            })
            .collect()
    }
}

/// Binary N×m matrix with `y = S·b` for any coherent node vector `y` and leaf vector `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregationMatrix {
    s: Matrix,
}

impl AggregationMatrix {
    pub fn new(tree: &HierarchyTree) -> Self {
        let mut s = Matrix::zeros(tree.len(), tree.num_leaves());
        for node in 0..tree.len() {
            for leaf in tree.descendant_leaves(node) {
                let col = tree.leaf_position(leaf).expect("leaf has a column");
                s.set(node, col, 1.0);
            }
        }
        Self { s }
    }

    pub fn matrix(&self) -> &Matrix {
        &self.s
    }

    pub fn num_nodes(&self) -> usize {
        self.s.rows()
    }

    pub fn num_leaves(&self) -> usize {
        self.s.cols()
    }

    /// `S·b` for one leaf vector.
    pub fn apply(&self, leaves: &[f64]) -> Vec<f64> {
        assert_eq!(leaves.len(), self.num_leaves());
        (0..self.num_nodes())
            .map(|i| self.s.row(i).iter().zip(leaves).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn to_dmatrix(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_row_slice(self.s.rows(), self.s.cols(), self.s.as_slice())
    }
}

pub fn aggregation_matrix(tree: &HierarchyTree) -> AggregationMatrix {
    AggregationMatrix::new(tree)
}

/// Observed values for every node (T×N, columns in node-id order) over a
/// strictly increasing time index.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesPanel {
    values: Matrix,
    time_index: Vec<NaiveDate>,
}

impl SeriesPanel {
    pub fn new(values: Matrix, time_index: Vec<NaiveDate>) -> Result<Self> {
        if values.rows() != time_index.len() {
            return Err(Error::Dimension(format!(
                "panel has {} rows but time index has {} entries",
                values.rows(),
                time_index.len()
            )));
        }
        if let Some(w) = time_index.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::Data(format!(
                "time index not strictly increasing at {} -> {}",
                w[0], w[1]
            )));
        }
        if !values.is_finite() {
            return Err(Error::Data("panel contains non-finite values".into()));
        }
        Ok(Self { values, time_index })
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn time_index(&self) -> &[NaiveDate] {
        &self.time_index
    }

    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.rows() == 0
    }

    pub fn num_series(&self) -> usize {
        self.values.cols()
    }

    pub fn series(&self, node: usize) -> Vec<f64> {
        self.values.column(node)
    }

    /// The first `len` time steps.
    pub fn head(&self, len: usize) -> SeriesPanel {
        SeriesPanel {
            values: self.values.row_range(0, len),
            time_index: self.time_index[..len].to_vec(),
        }
    }
}

/// Consecutive daily dates starting at `start`.
pub fn daily_index(start: NaiveDate, len: usize) -> Vec<NaiveDate> {
    start.iter_days().take(len).collect()
}

/// Sums leaf columns (ordered as the aggregation matrix columns) up the tree.
/// Returns a T×N matrix in node-id order.
pub fn aggregate_rows(leaves: &Matrix, tree: &HierarchyTree) -> Result<Matrix> {
    if leaves.cols() != tree.num_leaves() {
        return Err(Error::Dimension(format!(
            "expected {} leaf columns, got {}",
            tree.num_leaves(),
            leaves.cols()
        )));
    }
    let n = tree.len();
    let mut out = Matrix::zeros(leaves.rows(), n);
    for t in 0..leaves.rows() {
        let row = out.row_mut(t);
        for (k, &leaf) in tree.leaves().iter().enumerate() {
            row[leaf] = leaves.get(t, k);
        }
        // children have larger ids than their parent
        for node in (0..n).rev() {
            if !tree.is_leaf(node) {
                row[node] = tree.children_of(node).iter().map(|&c| row[c]).sum();
            }
        }
    }
    Ok(out)
}

pub fn aggregate_from_leaves(leaves: &Matrix, tree: &HierarchyTree, time_index: Vec<NaiveDate>) -> Result<SeriesPanel> {
    SeriesPanel::new(aggregate_rows(leaves, tree)?, time_index)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoherenceViolation {
    pub time: usize,
    pub node: usize,
    pub relative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoherenceReport {
    pub rel_tol: f64,
    /// Largest `|y_p − Σ children| / max(1, |y_p|)` over all parents and times.
    pub max_violation: f64,
    pub violations: Vec<CoherenceViolation>,
}

impl CoherenceReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks every parent against the sum of its children at every row of a
/// T×N node-ordered matrix.
pub fn check_coherence(values: &Matrix, tree: &HierarchyTree, rel_tol: f64) -> Result<CoherenceReport> {
    if values.cols() != tree.len() {
        return Err(Error::Dimension(format!(
            "panel has {} columns, tree has {} nodes",
            values.cols(),
            tree.len()
        )));
    }
    let mut max_violation = 0.0_f64;
    let mut violations = Vec::new();
    for t in 0..values.rows() {
        let row = values.row(t);
        for node in 0..tree.len() {
            let kids = tree.children_of(node);
            if kids.is_empty() {
                continue;
            }
            let sum: f64 = kids.iter().map(|&c| row[c]).sum();
            let rel = (row[node] - sum).abs() / row[node].abs().max(1.0);
            let rel = if rel.is_nan() { f64::INFINITY } else { rel };
            max_violation = max_violation.max(rel);
            if rel > rel_tol {
                violations.push(CoherenceViolation {
                    time: t,
                    node,
                    relative: rel,
                });
            }
        }
    }
    Ok(CoherenceReport {
        rel_tol,
        max_violation,
        violations,
    })
}

/// Per-step child proportions of one family (T×C) with the rows whose
/// children sum to zero flagged.
#[derive(Debug, Clone, PartialEq)]
pub struct Proportions {
    pub values: Matrix,
    pub degenerate: Vec<bool>,
}

pub fn compute_proportions(panel: &Matrix, family: &Family) -> Result<Proportions> {
    let c = family.num_children();
    if let Some(&bad) = family.children.iter().find(|&&id| id >= panel.cols()) {
        return Err(Error::Dimension(format!(
            "family child {bad} outside panel with {} columns",
            panel.cols()
        )));
    }
    let mut values = Matrix::zeros(panel.rows(), c);
    let mut degenerate = vec![false; panel.rows()];
    for t in 0..panel.rows() {
        let row = panel.row(t);
        let mut sum = 0.0;
        for &id in &family.children {
            let v = row[id];
            if v < 0.0 {
                return Err(Error::Data(format!(
                    "negative value {v} for node {id} at step {t}; proportions are undefined"
                )));
            }
            sum += v;
        }
        let out = values.row_mut(t);
        if sum == 0.0 {
            out.fill(1.0 / c as f64);
            degenerate[t] = true;
        } else {
            for (o, &id) in out.iter_mut().zip(&family.children) {
                *o = row[id] / sum;
            }
        }
    }
    Ok(Proportions { values, degenerate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy() -> HierarchyTree {
        HierarchyTree::from_edges(&[("A", "root"), ("B", "root")]).unwrap()
    }

    fn random_tree(rng: &mut impl Rng, max_nodes: usize) -> HierarchyTree {
        let n = rng.random_range(2..=max_nodes);
        let edges: Vec<(String, String)> = (1..n)
            .map(|i| (format!("n{i:03}"), format!("n{:03}", rng.random_range(0..i))))
            .collect();
        HierarchyTree::from_edges(&edges).unwrap()
    }

    #[test]
    fn smallest_tree() {
        let t = toy();
        assert_eq!(t.len(), 3);
        assert_eq!(t.num_leaves(), 2);
        assert_eq!(t.name(0), "root");
        assert_eq!(t.level_of(t.id_of("A").unwrap()), 1);
        assert_eq!(t.level_of(t.id_of("B").unwrap()), 1);
        assert_eq!(t.level_of(0), 0);
        assert_eq!(t.num_levels(), 2);
    }

    #[test]
    fn tree_errors() {
        let cycle = HierarchyTree::from_edges(&[("A", "B"), ("B", "A")]).unwrap_err();
        assert!(cycle.to_string().contains("cycle"), "{cycle}");
        let multi = HierarchyTree::from_edges(&[("A", "r1"), ("B", "r2")]).unwrap_err();
        assert!(multi.to_string().contains("multiple roots"));
        let two = HierarchyTree::from_edges(&[("A", "r"), ("A", "B"), ("B", "r")]).unwrap_err();
        assert!(two.to_string().contains("two parents"));
        let dangling = HierarchyTree::from_edges(&[("A", "")]).unwrap_err();
        assert!(dangling.to_string().contains("dangling"));
        let empty: [(&str, &str); 0] = [];
        assert!(HierarchyTree::from_edges(&empty).is_err());
        // a rooted part plus a detached cycle
        let detached = HierarchyTree::from_edges(&[("A", "r"), ("X", "Y"), ("Y", "X")]).unwrap_err();
        assert!(detached.to_string().contains("cycle"));
    }

    #[test]
    fn toy_aggregation_matrix() {
        let s = aggregation_matrix(&toy());
        let expected = Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(s.matrix(), &expected);
    }

    #[test]
    fn aggregation_matches_recursive_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        // three levels: root -> 3 mids -> 2..4 leaves each
        let mut edges = Vec::new();
        for m in 0..3 {
            edges.push((format!("m{m}"), "root".to_string()));
            for l in 0..rng.random_range(2..5) {
                edges.push((format!("m{m}l{l}"), format!("m{m}")));
            }
        }
        let tree = HierarchyTree::from_edges(&edges).unwrap();
        let s = aggregation_matrix(&tree);
        let b: Vec<f64> = (0..tree.num_leaves()).map(|_| rng.random::<f64>() * 10.0).collect();
        let y = s.apply(&b);
        fn rec(tree: &HierarchyTree, node: usize, b: &[f64]) -> f64 {
            if tree.is_leaf(node) {
                b[tree.leaf_position(node).unwrap()]
            } else {
                tree.children_of(node).iter().map(|&c| rec(tree, c, b)).sum()
            }
        }
        for node in 0..tree.len() {
            assert!((y[node] - rec(&tree, node, &b)).abs() < 1e-12);
        }
        assert_eq!(s.matrix().row(0).iter().sum::<f64>(), tree.num_leaves() as f64);
    }

    #[test]
    fn ols_projection_recovers_leaves() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for max_nodes in [3, 20, 200] {
            let tree = random_tree(&mut rng, max_nodes);
            let s = aggregation_matrix(&tree).to_dmatrix();
            let sts = s.transpose() * &s;
            let p = sts.clone().lu().solve(&s.transpose()).unwrap();
            let ident = p * &s;
            let m = tree.num_leaves();
            let err = (ident - nalgebra::DMatrix::<f64>::identity(m, m)).amax();
            assert!(err < 1e-9, "P·S deviates from identity by {err}");
        }
    }

    #[test]
    fn aggregate_toy_and_zero() {
        let t = toy();
        let leaves = Matrix::from_rows(&[vec![2.0, 3.0]]);
        let panel = aggregate_rows(&leaves, &t).unwrap();
        assert_eq!(panel.row(0), &[5.0, 2.0, 3.0]);
        let zero = aggregate_rows(&Matrix::zeros(4, 2), &t).unwrap();
        assert!(zero.as_slice().iter().all(|&v| v == 0.0));
        assert!(aggregate_rows(&Matrix::zeros(1, 3), &t).is_err());
    }

    #[test]
    fn aggregate_equals_s_rowwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let tree = random_tree(&mut rng, 40);
        let s = aggregation_matrix(&tree);
        let leaves = Matrix::from_fn(6, tree.num_leaves(), |_, _| rng.random::<f64>());
        let out = aggregate_rows(&leaves, &tree).unwrap();
        for t in 0..6 {
            let y = s.apply(leaves.row(t));
            for (a, b) in y.iter().zip(out.row(t)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        for (k, &leaf) in tree.leaves().iter().enumerate() {
            assert_eq!(out.column(leaf), leaves.column(k));
        }
    }

    #[test]
    fn coherence_pass_and_single_failure() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let tree = random_tree(&mut rng, 30);
        let leaves = Matrix::from_fn(10, tree.num_leaves(), |_, _| rng.random::<f64>() * 100.0);
        let mut panel = aggregate_rows(&leaves, &tree).unwrap();
        let report = check_coherence(&panel, &tree, DEFAULT_COHERENCE_TOL).unwrap();
        assert!(report.passed());
        assert_eq!(report.max_violation, 0.0);

        let parent = tree.families()[0].parent;
        panel[(4, parent)] += 1.0;
        let report = check_coherence(&panel, &tree, DEFAULT_COHERENCE_TOL).unwrap();
        let failing: Vec<(usize, usize)> = report.violations.iter().map(|v| (v.time, v.node)).collect();
        // the perturbed parent fails, and so does its own parent if it has one
        assert!(failing.contains(&(4, parent)));
        let expected: Vec<(usize, usize)> = std::iter::once(parent)
            .chain(tree.parent_of(parent))
            .map(|n| (4, n))
            .collect();
        let mut sorted = failing.clone();
        sorted.sort_unstable_by_key(|&(_, n)| n);
        let mut exp = expected;
        exp.sort_unstable_by_key(|&(_, n)| n);
        assert_eq!(sorted, exp);

        assert!(check_coherence(&Matrix::zeros(2, tree.len() + 1), &tree, 1e-9).is_err());
    }

    #[test]
    fn rounded_panel_passes_relative_tolerance() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let tree = random_tree(&mut rng, 50);
        let leaves = Matrix::from_fn(20, tree.num_leaves(), |_, _| rng.random::<f64>() * 1e3);
        let panel = aggregate_rows(&leaves, &tree).unwrap();
        let rounded = panel.map(|v| (v * 1e12).round() / 1e12);
        assert!(check_coherence(&rounded, &tree, 1e-9).unwrap().passed());
    }

    #[test]
    fn proportions_examples() {
        let t = toy();
        let fam = t.families().remove(0);
        let panel = Matrix::from_rows(&[vec![5.0, 2.0, 3.0], vec![0.0, 0.0, 0.0]]);
        let p = compute_proportions(&panel, &fam).unwrap();
        assert!((p.values.get(0, 0) - 0.4).abs() < 1e-15);
        assert!((p.values.get(0, 1) - 0.6).abs() < 1e-15);
        assert_eq!(p.values.row(1), &[0.5, 0.5]);
        assert_eq!(p.degenerate, vec![false, true]);

        let neg = Matrix::from_rows(&[vec![1.0, 2.0, -1.0]]);
        assert!(compute_proportions(&neg, &fam).is_err());
    }

    #[test]
    fn proportions_match_rowwise_normalization() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let edges: Vec<(String, String)> = (0..5).map(|i| (format!("c{i}"), "p".to_string())).collect();
        let tree = HierarchyTree::from_edges(&edges).unwrap();
        let fam = tree.families().remove(0);
        let leaves = Matrix::from_fn(100, 5, |_, _| rng.random::<f64>() * 50.0 + 1e-3);
        let panel = aggregate_rows(&leaves, &tree).unwrap();
        let p = compute_proportions(&panel, &fam).unwrap();
        for t in 0..100 {
            let total: f64 = leaves.row(t).iter().sum();
            for c in 0..5 {
                assert!((p.values.get(t, c) - leaves.get(t, c) / total).abs() < 1e-12);
            }
            assert!((p.values.row(t).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn panel_validation() {
        let d = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        let idx = daily_index(d, 2);
        assert!(SeriesPanel::new(Matrix::zeros(3, 1), idx.clone()).is_err());
        assert!(SeriesPanel::new(Matrix::zeros(2, 1), vec![d, d]).is_err());
        assert!(SeriesPanel::new(Matrix::filled(2, 1, f64::NAN), idx.clone()).is_err());
        assert!(SeriesPanel::new(Matrix::zeros(2, 1), idx).is_ok());
    }

    proptest! {
        #[test]
        fn build_is_order_independent(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(2..40usize);
            let mut edges: Vec<(String, String)> = (1..n)
                .map(|i| (format!("x{}", (i * 7919) % 1000), format!("x{}", (rng.random_range(0..i) * 7919) % 1000)))
                .collect();
            let a = HierarchyTree::from_edges(&edges).unwrap();
            // Fisher-Yates shuffle of the edge list
            for i in (1..edges.len()).rev() {
                let j = rng.random_range(0..=i);
                edges.swap(i, j);
            }
            let b = HierarchyTree::from_edges(&edges).unwrap();
            prop_assert_eq!(a.names(), b.names());
            prop_assert_eq!(a.families(), b.families());
            for f in a.families() {
                let names: Vec<&str> = f.children.iter().map(|&c| a.name(c)).collect();
                let mut sorted = names.clone();
                sorted.sort_unstable();
                prop_assert_eq!(names, sorted);
                for &c in &f.children {
                    prop_assert_eq!(a.level_of(c), a.level_of(f.parent) + 1);
                }
            }
        }

        #[test]
        fn aggregated_panels_are_exactly_coherent(seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let tree = random_tree(&mut rng, 25);
            let leaves = Matrix::from_fn(5, tree.num_leaves(), |_, _| rng.random::<f64>() * 1e4);
            let panel = aggregate_rows(&leaves, &tree).unwrap();
            let r = check_coherence(&panel, &tree, 1e-9).unwrap();
            prop_assert_eq!(r.max_violation, 0.0);
        }
    }
}
