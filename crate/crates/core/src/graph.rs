//! Communication graphs, doubly stochastic mixing matrices, and the spectral quantity
//! `lambda_w = lambda_max(W - (1/n) 1 1^T)` that every step-size condition depends on.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stacked;

const STOCHASTIC_TOL: f64 = 1e-12;

/// Built-in topologies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    Complete,
    Ring,
    Path,
    Star,
    BalancedBinaryTree,
}

impl fmt::Display for TopologyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TopologyKind::Complete => "complete",
            TopologyKind::Ring => "ring",
            TopologyKind::Path => "path",
            TopologyKind::Star => "star",
            TopologyKind::BalancedBinaryTree => "balanced_binary_tree",
        };
        f.write_str(s)
    }
}

impl FromStr for TopologyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "complete" => Ok(TopologyKind::Complete),
            "ring" => Ok(TopologyKind::Ring),
            "path" => Ok(TopologyKind::Path),
            "star" => Ok(TopologyKind::Star),
            "balanced_binary_tree" | "balanced-binary-tree" => Ok(TopologyKind::BalancedBinaryTree),
            other => Err(Error::InvalidGraph(format!("unknown topology `{other}`"))),
        }
    }
}

/// Undirected simple graph on nodes `0..n`. Edges are stored as `(i, j)` with `i < j`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl Graph {
    /// Builds a graph from an explicit edge list and checks that it is simple and connected.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidGraph("graph must have at least one node".into()));
        }
        let mut set = BTreeSet::new();
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::InvalidGraph(format!(
                    "edge ({i}, {j}) references a node outside [0, {n})"
                )));
            }
            if i == j {
                return Err(Error::InvalidGraph(format!("self-loop at node {i}")));
            }
            if !set.insert((i.min(j), i.max(j))) {
                return Err(Error::InvalidGraph(format!("duplicate edge ({i}, {j})")));
            }
        }
        let g = Graph { n, edges: set };
        g.check_connected()?;
        Ok(g)
    }

    /// Parses the plain-text edge list format: first non-empty line `n`, then one
    /// whitespace-separated `i j` pair per line (0-indexed). Lines starting with `#` are skipped.
    pub fn parse_edge_list(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(k, l)| (k + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (line, first) = lines.next().ok_or(Error::Parse {
            line: 1,
            message: "empty edge list; expected node count".into(),
        })?;
        let n: usize = first.parse().map_err(|_| Error::Parse {
            line,
            message: format!("expected node count, found `{first}`"),
        })?;
        let mut edges = Vec::new();
        for (line, l) in lines {
            let fields: Vec<&str> = l.split_whitespace().collect();
            let parse = |s: &str| {
                s.parse::<usize>().map_err(|_| Error::Parse {
                    line,
                    message: format!("expected node index, found `{s}`"),
                })
            };
            match fields.as_slice() {
                [a, b] => edges.push((parse(a)?, parse(b)?)),
                _ => {
                    return Err(Error::Parse {
                        line,
                        message: format!("expected `i j`, found `{l}`"),
                    })
                }
            }
        }
        Graph::from_edges(n, &edges)
    }

    pub fn load_edge_list(path: &Path) -> Result<Self> {
        Graph::parse_edge_list(&std::fs::read_to_string(path)?)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edges.contains(&(i.min(j), i.max(j)))
    }

    pub fn degree(&self, i: usize) -> usize {
        self.edges.iter().filter(|&&(a, b)| a == i || b == i).count()
    }

    pub fn is_complete(&self) -> bool {
        self.edges.len() == self.n * (self.n - 1) / 2
    }

    fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for &(i, j) in &self.edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        adj
    }

    fn check_connected(&self) -> Result<()> {
        let adj = self.neighbors();
        let mut seen = vec![false; self.n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(i) = queue.pop_front() {
            for &j in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        let component: Vec<usize> = (0..self.n).filter(|&i| !seen[i]).collect();
        if component.is_empty() {
            Ok(())
        } else {
            Err(Error::Disconnected { component })
        }
    }
}

/// Constructs one of the built-in topologies on `n` nodes.
pub fn build_graph(kind: TopologyKind, n: usize) -> Result<Graph> {
    if n == 0 {
        return Err(Error::InvalidGraph("graph must have at least one node".into()));
    }
    let mut edges = BTreeSet::new();
    match kind {
        TopologyKind::Complete => {
            for i in 0..n {
                for j in i + 1..n {
                    edges.insert((i, j));
                }
            }
        }
        TopologyKind::Ring => {
            for i in 0..n {
                let j = (i + 1) % n;
                if i != j {
                    edges.insert((i.min(j), i.max(j)));
                }
            }
        }
        TopologyKind::Path => {
            for i in 1..n {
                edges.insert((i - 1, i));
            }
        }
        TopologyKind::Star => {
            for i in 1..n {
                edges.insert((0, i));
            }
        }
        TopologyKind::BalancedBinaryTree => {
            for i in 1..n {
                edges.insert(((i - 1) / 2, i));
            }
        }
    }
    let g = Graph { n, edges };
    g.check_connected()?;
    Ok(g)
}

/// Weight scheme for [`build_mixing_matrix`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum MixingScheme {
    /// `W_ij = 1 / (1 + max(d_i, d_j))` on edges, diagonal fills the row.
    Metropolis,
    /// `W = (1 - s) I + (s / n) 1 1^T`; complete graphs only.
    LazyUniform { laziness: f64 },
}

/// Symmetric doubly stochastic weights with the cached spectral gap.
#[derive(Clone, Debug, PartialEq)]
pub struct MixingMatrix {
    w: DMatrix<f64>,
    lambda_w: f64,
}

pub fn build_mixing_matrix(g: &Graph, scheme: MixingScheme) -> Result<MixingMatrix> {
    let n = g.n();
    let mut w = DMatrix::zeros(n, n);
    match scheme {
        MixingScheme::Metropolis => {
            for (i, j) in g.edges() {
                let wij = 1.0 / (1.0 + g.degree(i).max(g.degree(j)) as f64);
                w[(i, j)] = wij;
                w[(j, i)] = wij;
            }
            for i in 0..n {
                let off: f64 = (0..n).filter(|&j| j != i).map(|j| w[(i, j)]).sum();
                w[(i, i)] = 1.0 - off;
            }
        }
        MixingScheme::LazyUniform { laziness } => {
            if !(laziness > 0.0 && laziness <= 1.0) {
                return Err(Error::InvalidParameter {
                    name: "laziness",
                    reason: format!("must lie in (0, 1], got {laziness}"),
                });
            }
            if !g.is_complete() {
                return Err(Error::InvalidMixing(
                    "lazy-uniform weights need a complete graph; off-edge entries would be nonzero".into(),
                ));
            }
            let off = laziness / n as f64;
            w.fill(off);
            for i in 0..n {
                w[(i, i)] = 1.0 - laziness + off;
            }
        }
    }
    MixingMatrix::new(w, Some(g))
}

impl MixingMatrix {
    /// Validates user-supplied weights. When a graph is given, the sparsity pattern must
    /// respect its edges.
    pub fn new(w: DMatrix<f64>, g: Option<&Graph>) -> Result<Self> {
        let n = w.nrows();
        if n == 0 || w.ncols() != n {
            return Err(Error::InvalidMixing(format!(
                "weights must be a non-empty square matrix, got {}x{}",
                w.nrows(),
                w.ncols()
            )));
        }
        if let Some(g) = g {
            if g.n() != n {
                return Err(Error::DimensionMismatch {
                    expected: g.n(),
                    got: n,
                });
            }
        }
        for i in 0..n {
            if w[(i, i)] <= 0.0 {
                return Err(Error::InvalidMixing(format!(
                    "diagonal entry W[{i}][{i}] must be positive"
                )));
            }
            for j in 0..n {
                if w[(i, j)] < 0.0 {
                    return Err(Error::InvalidMixing(format!("negative entry W[{i}][{j}]")));
                }
                if i != j && w[(i, j)] != 0.0 {
                    if let Some(g) = g {
                        if !g.has_edge(i, j) {
                            return Err(Error::InvalidMixing(format!(
                                "W[{i}][{j}] is nonzero but ({i}, {j}) is not an edge"
                            )));
                        }
                    }
                }
            }
        }
        for (i, row) in w.row_iter().enumerate() {
            let s = row.sum();
            if (s - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::InvalidMixing(format!("row {i} sums to {s}")));
            }
        }
        for (j, col) in w.column_iter().enumerate() {
            let s = col.sum();
            if (s - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::InvalidMixing(format!("column {j} sums to {s}")));
            }
        }
        let lambda_w = spectral_gap(&w)?;
        Ok(MixingMatrix { w, lambda_w })
    }

    pub fn n(&self) -> usize {
        self.w.nrows()
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn lambda_w(&self) -> f64 {
        self.lambda_w
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.w.row_iter().map(|r| r.sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        self.w.column_iter().map(|c| c.sum()).collect()
    }

    /// One communication round: `out_i = sum_j W_ij v_j`.
    pub fn mix(&self, blocks: &[DVector<f64>]) -> Vec<DVector<f64>> {
        let n = self.n();
        debug_assert_eq!(blocks.len(), n);
        (0..n)
            .map(|i| {
                let mut acc = DVector::zeros(blocks[0].len());
                for (j, b) in blocks.iter().enumerate() {
                    let wij = self.w[(i, j)];
                    if wij != 0.0 {
                        acc.axpy(wij, b, 1.0);
                    }
                }
                acc
            })
            .collect()
    }
}

/// Largest-magnitude eigenvalue of `W - (1/n) 1 1^T`.
///
/// Subtracting the averaging matrix deflates the consensus eigenpair `(1, 1/sqrt(n))`
/// of a doubly stochastic `W`; the remaining spectrum is taken from a dense symmetric
/// eigendecomposition.
pub fn spectral_gap(w: &DMatrix<f64>) -> Result<f64> {
    let n = w.nrows();
    if w.ncols() != n {
        return Err(Error::InvalidMixing("matrix is not square".into()));
    }
    for i in 0..n {
        for j in i + 1..n {
            if w[(i, j)] != w[(j, i)] {
                return Err(Error::InvalidMixing(format!(
                    "matrix is not symmetric: W[{i}][{j}] = {} but W[{j}][{i}] = {}",
                    w[(i, j)],
                    w[(j, i)]
                )));
            }
        }
    }
    let deflated = w.map(|v| v - 1.0 / n as f64);
    let eig = SymmetricEigen::new(deflated);
    Ok(eig.eigenvalues.iter().fold(0.0_f64, |m, v| m.max(v.abs())))
}

/// Checks `||(W (x) I) x - J x|| <= lambda_w ||x - J x||` (+1e-12) for a stacked vector
/// of `n` equal-length blocks, where `J` is block averaging.
pub fn consensus_contract_check(w: &MixingMatrix, x: &[f64]) -> Result<bool> {
    let n = w.n();
    if x.is_empty() || !x.len().is_multiple_of(n) {
        return Err(Error::DimensionMismatch {
            expected: n * (x.len() / n).max(1),
            got: x.len(),
        });
    }
    let d = x.len() / n;
    let blocks: Vec<DVector<f64>> = x.chunks(d).map(DVector::from_column_slice).collect();
    let mixed = w.mix(&blocks);
    let lhs = stacked::deviation_sq(&mixed).sqrt();
    let rhs = w.lambda_w() * stacked::deviation_sq(&blocks).sqrt();
    Ok(lhs <= rhs + 1e-12)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn edge_vec(g: &Graph) -> Vec<(usize, usize)> {
        g.edges().collect()
    }

    #[test]
    fn named_topologies_have_expected_edges() {
        let g = build_graph(TopologyKind::Complete, 3).unwrap();
        assert_eq!(edge_vec(&g), vec![(0, 1), (0, 2), (1, 2)]);
        let g = build_graph(TopologyKind::Ring, 4).unwrap();
        assert_eq!(edge_vec(&g), vec![(0, 1), (0, 3), (1, 2), (2, 3)]);
        let g = build_graph(TopologyKind::Path, 3).unwrap();
        assert_eq!(edge_vec(&g), vec![(0, 1), (1, 2)]);
        let g = build_graph(TopologyKind::Star, 4).unwrap();
        assert_eq!(edge_vec(&g), vec![(0, 1), (0, 2), (0, 3)]);
        let g = build_graph(TopologyKind::BalancedBinaryTree, 6).unwrap();
        assert_eq!(edge_vec(&g), vec![(0, 1), (0, 2), (1, 3), (1, 4), (2, 5)]);
    }

    #[test]
    fn small_rings_do_not_duplicate_edges() {
        assert_eq!(build_graph(TopologyKind::Ring, 2).unwrap().num_edges(), 1);
        assert_eq!(build_graph(TopologyKind::Ring, 1).unwrap().num_edges(), 0);
    }

    #[test]
    fn disconnected_edge_list_names_component() {
        let err = Graph::from_edges(4, &[(0, 1), (2, 3)]).unwrap_err();
        match err {
            Error::Disconnected { component } => assert_eq!(component, vec![2, 3]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn edge_list_rejects_bad_edges() {
        assert!(Graph::from_edges(3, &[(0, 3)]).is_err());
        assert!(Graph::from_edges(3, &[(1, 1), (0, 1), (1, 2)]).is_err());
        assert!(Graph::from_edges(3, &[(0, 1), (1, 0), (1, 2)]).is_err());
    }

    #[test]
    fn parses_edge_list_text() {
        let g = Graph::parse_edge_list("3\n0 1\n\n1 2\n").unwrap();
        assert_eq!(edge_vec(&g), vec![(0, 1), (1, 2)]);
        match Graph::parse_edge_list("3\n0 1\n1 x\n").unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            Graph::parse_edge_list("3\n0 1\n"),
            Err(Error::Disconnected { .. })
        ));
    }

    #[test]
    fn lazy_uniform_complete_three() {
        let g = build_graph(TopologyKind::Complete, 3).unwrap();
        let w = build_mixing_matrix(&g, MixingScheme::LazyUniform { laziness: 0.5 }).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expected = if i == j { 2.0 / 3.0 } else { 1.0 / 6.0 };
                assert_abs_diff_eq!(w.weights()[(i, j)], expected, epsilon = 1e-15);
            }
        }
        assert_abs_diff_eq!(w.lambda_w(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn fully_lazy_uniform_is_averaging() {
        let g = build_graph(TopologyKind::Complete, 5).unwrap();
        let w = build_mixing_matrix(&g, MixingScheme::LazyUniform { laziness: 1.0 }).unwrap();
        assert_abs_diff_eq!(w.lambda_w(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn metropolis_ring_four() {
        let g = build_graph(TopologyKind::Ring, 4).unwrap();
        let w = build_mixing_matrix(&g, MixingScheme::Metropolis).unwrap();
        for i in 0..4 {
            assert_abs_diff_eq!(w.weights()[(i, i)], 1.0 / 3.0, epsilon = 1e-15);
            assert_abs_diff_eq!(w.weights()[(i, (i + 1) % 4)], 1.0 / 3.0, epsilon = 1e-15);
            assert_eq!(w.weights()[(i, (i + 2) % 4)], 0.0);
        }
        assert_abs_diff_eq!(w.lambda_w(), 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn lazy_uniform_needs_complete_graph() {
        let g = build_graph(TopologyKind::Ring, 4).unwrap();
        assert!(matches!(
            build_mixing_matrix(&g, MixingScheme::LazyUniform { laziness: 0.5 }),
            Err(Error::InvalidMixing(_))
        ));
    }

    #[test]
    fn spectral_gap_extremes() {
        assert_abs_diff_eq!(spectral_gap(&DMatrix::identity(4, 4)).unwrap(), 1.0, epsilon = 1e-12);
        let avg = DMatrix::from_element(4, 4, 0.25);
        assert_abs_diff_eq!(spectral_gap(&avg).unwrap(), 0.0, epsilon = 1e-12);
        let mut asym = DMatrix::from_element(2, 2, 0.5);
        asym[(0, 1)] = 0.4;
        assert!(spectral_gap(&asym).is_err());
    }

    #[test]
    fn contraction_examples() {
        let g = build_graph(TopologyKind::Ring, 4).unwrap();
        let w = build_mixing_matrix(&g, MixingScheme::Metropolis).unwrap();
        assert!(consensus_contract_check(&w, &[1.5, -2.0, 1.5, -2.0, 1.5, -2.0, 1.5, -2.0]).unwrap());
        assert!(consensus_contract_check(&w, &[1.0, 2.0, 3.0]).is_err());
        let g = build_graph(TopologyKind::Complete, 4).unwrap();
        let avg = build_mixing_matrix(&g, MixingScheme::LazyUniform { laziness: 1.0 }).unwrap();
        assert!(consensus_contract_check(&avg, &[3.0, -1.0, 7.0, 0.5]).unwrap());
    }

    #[test]
    fn custom_weights_validated_against_graph() {
        let g = build_graph(TopologyKind::Path, 3).unwrap();
        let mut w = DMatrix::from_element(3, 3, 1.0 / 3.0);
        assert!(MixingMatrix::new(w.clone(), Some(&g)).is_err());
        w[(0, 2)] = 0.0;
        w[(2, 0)] = 0.0;
        w[(0, 0)] = 2.0 / 3.0;
        w[(2, 2)] = 2.0 / 3.0;
        assert!(MixingMatrix::new(w, Some(&g)).is_ok());
        let ident = MixingMatrix::new(DMatrix::identity(3, 3), Some(&g)).unwrap();
        assert_abs_diff_eq!(ident.lambda_w(), 1.0, epsilon = 1e-12);
    }
}
