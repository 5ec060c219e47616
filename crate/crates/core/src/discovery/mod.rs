//! Structure learning over the bioclimatic variables.

mod expm;
pub mod lbfgs;
mod notears;

use std::collections::BinaryHeap;
use std::cmp::Reverse;
use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use expm::{acyclicity_h, expm};
pub use notears::{least_squares_loss, notears_fit, LinearNotears, NotearsConfig, NotearsFit, OuterIterate};

#[derive(Debug, thiserror::Error)]
pub enum DiscoveryError {
    #[error("matrix is {rows}x{cols}, expected square")]
    NonSquare { rows: usize, cols: usize },
    #[error("column {0:?} has zero variance")]
    DegenerateData(String),
    #[error("data contains non-finite values")]
    NonFinite,
    #[error("data has {columns} columns but {names} names")]
    ShapeMismatch { columns: usize, names: usize },
    #[error("augmented Lagrangian did not converge: h = {h:e} at rho = {rho:e}")]
    DidNotConverge { h: f64, rho: f64 },
    #[error("graph has a cycle through {0:?}")]
    CycleDetected(Vec<usize>),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("malformed DAG document: {0}")]
    Malformed(String),
}

/// Samples in rows, named variables in columns.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    x: DMatrix<f64>,
    column_names: Vec<String>,
}

impl DataMatrix {
    pub fn new(x: DMatrix<f64>, column_names: Vec<String>) -> Result<Self, DiscoveryError> {
        if x.ncols() != column_names.len() {
            return Err(DiscoveryError::ShapeMismatch { columns: x.ncols(), names: column_names.len() });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(DiscoveryError::NonFinite);
        }
        if x.nrows() <= x.ncols() {
            log::warn!("only {} samples for {} variables", x.nrows(), x.ncols());
        }
        Ok(Self { x, column_names })
    }

    /// From row-major rows of equal length.
    pub fn from_rows(rows: &[Vec<f64>], column_names: Vec<String>) -> Result<Self, DiscoveryError> {
        let d = column_names.len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(DiscoveryError::ShapeMismatch { columns: rows.first().map_or(0, Vec::len), names: d });
        }
        let x = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
        Self::new(x, column_names)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.x.column(j).iter().copied().collect()
    }

    /// Columns with their order rearranged: output column `k` is input
    /// column `perm[k]`.
    pub fn permute_columns(&self, perm: &[usize]) -> Self {
        let x = DMatrix::from_fn(self.n(), perm.len(), |i, k| self.x[(i, perm[k])]);
        let names = perm.iter().map(|&j| self.column_names[j].clone()).collect();
        Self { x, column_names: names }
    }

    fn check_variance(&self) -> Result<(), DiscoveryError> {
        for (j, col) in self.x.column_iter().enumerate() {
            let first = col[0];
            if col.iter().all(|&v| v == first) {
                return Err(DiscoveryError::DegenerateData(self.column_names[j].clone()));
            }
        }
        Ok(())
    }

    /// Column means subtracted; with `standardize`, also scaled to unit
    /// (population) variance.
    pub fn preprocessed(&self, standardize: bool) -> Result<DMatrix<f64>, DiscoveryError> {
        if self.n() == 0 {
            return Err(DiscoveryError::InvalidConfig("no samples".into()));
        }
        self.check_variance()?;
        let n = self.n() as f64;
        let mut out = self.x.clone();
        for mut col in out.column_iter_mut() {
            let mean = col.sum() / n;
            col.add_scalar_mut(-mean);
            if standardize {
                let sd = (col.norm_squared() / n).sqrt();
                col /= sd;
            }
        }
        Ok(out)
    }
}

/// `w[(i, j)]` is the weight of edge `i → j`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedDag {
    pub w: DMatrix<f64>,
    pub column_names: Vec<String>,
    pub threshold_used: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub weight: f64,
}

/// JSON form of a [`WeightedDag`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DagDocument {
    pub variables: Vec<String>,
    pub edges: Vec<Edge>,
    pub threshold: f64,
}

impl WeightedDag {
    pub fn new(w: DMatrix<f64>, column_names: Vec<String>, threshold_used: f64) -> Result<Self, DiscoveryError> {
        if !w.is_square() {
            return Err(DiscoveryError::NonSquare { rows: w.nrows(), cols: w.ncols() });
        }
        if w.nrows() != column_names.len() {
            return Err(DiscoveryError::ShapeMismatch { columns: w.nrows(), names: column_names.len() });
        }
        Ok(Self { w, column_names, threshold_used })
    }

    pub fn from_edges(d: usize, edges: &[(usize, usize, f64)], column_names: Vec<String>) -> Result<Self, DiscoveryError> {
        let mut w = DMatrix::zeros(d, d);
        for &(i, j, v) in edges {
            w[(i, j)] = v;
        }
        Self::new(w, column_names, 0.0)
    }

    pub fn d(&self) -> usize {
        self.w.nrows()
    }

    pub fn edges(&self) -> Vec<Edge> {
        let d = self.d();
        let mut out = Vec::new();
        for i in 0..d {
            for j in 0..d {
                let v = self.w[(i, j)];
                if v != 0.0 {
                    out.push(Edge { from: i, to: j, weight: v });
                }
            }
        }
        out
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        self.w[(from, to)] != 0.0
    }

    pub fn parents(&self, node: usize) -> Vec<usize> {
        (0..self.d()).filter(|&i| self.w[(i, node)] != 0.0).collect()
    }

    pub fn children(&self, node: usize) -> Vec<usize> {
        (0..self.d()).filter(|&j| self.w[(node, j)] != 0.0).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.column_names.iter().position(|n| n == name)
    }

    pub fn to_document(&self) -> DagDocument {
        DagDocument { variables: self.column_names.clone(), edges: self.edges(), threshold: self.threshold_used }
    }

    pub fn from_document(doc: &DagDocument) -> Result<Self, DiscoveryError> {
        let d = doc.variables.len();
        let mut w = DMatrix::zeros(d, d);
        for e in &doc.edges {
            if e.from >= d || e.to >= d || e.from == e.to {
                return Err(DiscoveryError::Malformed(format!("edge {} -> {}", e.from, e.to)));
            }
            w[(e.from, e.to)] = e.weight;
        }
        Self::new(w, doc.variables.clone(), doc.threshold)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("DAG serialises")
    }

    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph habitat {\n  rankdir=LR;\n");
        for name in &self.column_names {
            let _ = writeln!(out, "  \"{name}\";");
        }
        for e in self.edges() {
            let _ = writeln!(
                out,
                "  \"{}\" -> \"{}\" [label=\"{:.3}\"];",
                self.column_names[e.from], self.column_names[e.to], e.weight
            );
        }
        out.push_str("}\n");
        out
    }
}

/// Kahn's algorithm with the lowest ready index taken first.
pub fn topological_order(dag: &WeightedDag) -> Result<Vec<usize>, DiscoveryError> {
    let d = dag.d();
    let mut indegree: Vec<usize> = (0..d).map(|j| dag.parents(j).len()).collect();
    let mut ready: BinaryHeap<Reverse<usize>> = (0..d).filter(|&j| indegree[j] == 0).map(Reverse).collect();
    let mut order = Vec::with_capacity(d);
    while let Some(Reverse(u)) = ready.pop() {
        order.push(u);
        for v in dag.children(u) {
            indegree[v] -= 1;
            if indegree[v] == 0 {
                ready.push(Reverse(v));
            }
        }
    }
    if order.len() == d {
        return Ok(order);
    }
    Err(DiscoveryError::CycleDetected(find_cycle(dag, &indegree)))
}

/// A cycle among the nodes Kahn's algorithm could not release.
fn find_cycle(dag: &WeightedDag, indegree: &[usize]) -> Vec<usize> {
    let stuck: Vec<bool> = indegree.iter().map(|&k| k > 0).collect();
    // every stuck node has a stuck parent; walk parents until a repeat
    let start = stuck.iter().position(|&s| s).expect("a stuck node exists");
    let mut seen = vec![usize::MAX; dag.d()];
    let mut path = Vec::new();
    let mut u = start;
    while seen[u] == usize::MAX {
        seen[u] = path.len();
        path.push(u);
        u = dag.parents(u).into_iter().find(|&p| stuck[p]).expect("stuck parent");
    }
    let mut cycle: Vec<usize> = path[seen[u]..].to_vec();
    cycle.reverse();
    let min_pos = cycle.iter().enumerate().min_by_key(|(_, &v)| v).map(|(i, _)| i).unwrap_or(0);
    cycle.rotate_left(min_pos);
    cycle
}

pub fn is_dag(dag: &WeightedDag) -> bool {
    topological_order(dag).is_ok()
}

/// Structural Hamming distance: each unordered pair whose edge state
/// (absent, forward, backward) differs counts once.
pub fn structural_hamming_distance(truth: &WeightedDag, estimate: &WeightedDag) -> usize {
    let d = truth.d();
    let mut shd = 0;
    for i in 0..d {
        for j in (i + 1)..d {
            let a = (truth.has_edge(i, j), truth.has_edge(j, i));
            let b = (estimate.has_edge(i, j), estimate.has_edge(j, i));
            if a != b {
                shd += 1;
            }
        }
    }
    shd
}

/// Learner interface; linear NOTEARS is the only implementation.
pub trait StructureLearner {
    fn fit(&self, data: &DataMatrix) -> Result<NotearsFit, DiscoveryError>;
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(d: usize) -> Vec<String> {
        (0..d).map(|i| format!("X{i}")).collect()
    }

    #[test]
    fn chain_order() {
        let dag = WeightedDag::from_edges(3, &[(0, 1, 1.0), (1, 2, 1.0)], names(3)).unwrap();
        assert_eq!(topological_order(&dag).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn tie_break_by_index() {
        let dag = WeightedDag::from_edges(3, &[], names(3)).unwrap();
        assert_eq!(topological_order(&dag).unwrap(), vec![0, 1, 2]);
        let dag = WeightedDag::from_edges(4, &[(3, 0, 1.0), (2, 1, 1.0)], names(4)).unwrap();
        assert_eq!(topological_order(&dag).unwrap(), vec![2, 1, 3, 0]);
    }

    #[test]
    fn two_cycle_detected() {
        let dag = WeightedDag::from_edges(2, &[(0, 1, 1.0), (1, 0, 1.0)], names(2)).unwrap();
        match topological_order(&dag) {
            Err(DiscoveryError::CycleDetected(c)) => assert_eq!(c, vec![0, 1]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn reported_cycle_is_a_cycle() {
        // 0 -> 1 -> 2 -> 3 -> 1, plus 3 -> 4
        let dag = WeightedDag::from_edges(5, &[(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0), (3, 1, 1.0), (3, 4, 1.0)], names(5))
            .unwrap();
        let Err(DiscoveryError::CycleDetected(c)) = topological_order(&dag) else { panic!() };
        assert_eq!(c, vec![1, 2, 3]);
        for k in 0..c.len() {
            assert!(dag.has_edge(c[k], c[(k + 1) % c.len()]));
        }
    }

    #[test]
    fn shd_counts_reversal_once() {
        let t = WeightedDag::from_edges(3, &[(0, 1, 1.0), (1, 2, 1.0)], names(3)).unwrap();
        let e = WeightedDag::from_edges(3, &[(1, 0, 1.0), (0, 2, 1.0)], names(3)).unwrap();
        assert_eq!(structural_hamming_distance(&t, &e), 3);
        assert_eq!(structural_hamming_distance(&t, &t), 0);
    }

    #[test]
    fn document_round_trip_and_dot() {
        let dag = WeightedDag::from_edges(3, &[(2, 0, 0.75)], vec!["BIO11".into(), "BIO6".into(), "BIO1".into()]).unwrap();
        let doc: DagDocument = serde_json::from_str(&dag.to_json()).unwrap();
        assert_eq!(WeightedDag::from_document(&doc).unwrap(), dag);
        assert!(dag.to_dot().contains("\"BIO1\" -> \"BIO11\" [label=\"0.750\"]"));
    }

    #[test]
    fn constant_column_is_degenerate() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, 3.0]).collect();
        let data = DataMatrix::from_rows(&rows, names(2)).unwrap();
        assert!(matches!(data.preprocessed(false), Err(DiscoveryError::DegenerateData(n)) if n == "X1"));
    }
}
