//! User–user graph from thresholded cosine similarity.
//!
//! An undirected edge `{i, j}` exists iff `cos(f_i, f_j) >= tau`. No
//! follower data is involved; the graph depends only on the feature rows.

use std::collections::{BTreeMap, VecDeque};
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};

pub const DEFAULT_TAU: f64 = 0.90;

/// Cosine similarity accumulated in `f64` and clamped to `[-1, 1]`.
/// Zero-norm inputs have similarity 0.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(cosine_with_norms(a, b, dot(a, a).sqrt(), dot(b, b).sqrt()))
}

#[inline]
fn cosine_with_norms(a: &[f64], b: &[f64], na: f64, nb: f64) -> f64 {
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot(a, b) / (na * nb)).clamp(-1.0, 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityGraph {
    n: usize,
    tau: f64,
    adj: Vec<Vec<usize>>,
}

impl SimilarityGraph {
    /// Builds from an undirected edge list; duplicates are merged, self-loops rejected.
    pub fn from_edges(n: usize, tau: f64, edges: &[(usize, usize)]) -> Result<Self> {
        check_tau(tau)?;
        let mut adj = vec![Vec::new(); n];
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::Data(format!("edge ({i}, {j}) out of range for {n} nodes")));
            }
            if i == j {
                return Err(Error::Data(format!("self-loop on node {i}")));
            }
            adj[i].push(j);
            adj[j].push(i);
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        Ok(SimilarityGraph { n, tau, adj })
    }

    /// Graph with no edges.
    pub fn empty(n: usize, tau: f64) -> Self {
        SimilarityGraph {
            n,
            tau,
            adj: vec![Vec::new(); n],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adj[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adj[i].len()
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adj[i].binary_search(&j).is_ok()
    }

    /// Edges as `(i, j)` with `i < j`, ascending.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.edge_count());
        for (i, list) in self.adj.iter().enumerate() {
            out.extend(list.iter().filter(|&&j| j > i).map(|&j| (i, j)));
        }
        out
    }

    /// Dense 0/1 adjacency, for debugging small graphs.
    pub fn to_dense(&self) -> Vec<Vec<u8>> {
        let mut a = vec![vec![0u8; self.n]; self.n];
        for (i, list) in self.adj.iter().enumerate() {
            for &j in list {
                a[i][j] = 1;
            }
        }
        a
    }

    /// Text edge list: node count, tau, then `i j` per line with `i < j`.
    pub fn to_edge_list(&self) -> String {
        let mut s = format!("{}\n{}\n", self.n, self.tau);
        for (i, j) in self.edges() {
            writeln!(s, "{i} {j}").unwrap();
        }
        s
    }

    pub fn from_edge_list(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let mut header = |what: &str| -> Result<String> {
            lines
                .next()
                .map(|(_, l)| l.trim().to_string())
                .ok_or_else(|| Error::parse("edge list", format!("missing {what}")))
        };
        let n: usize = header("node count")?
            .parse()
            .map_err(|e| Error::parse("edge list:1", e))?;
        let tau: f64 = header("tau")?
            .parse()
            .map_err(|e| Error::parse("edge list:2", e))?;
        let mut edges = Vec::new();
        for (lineno, line) in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let loc = format!("edge list:{}", lineno + 1);
            let mut parts = line.split_whitespace();
            let mut next = || -> Result<usize> {
                parts
                    .next()
                    .ok_or_else(|| Error::parse(&loc, "expected `i j`"))?
                    .parse()
                    .map_err(|e| Error::parse(&loc, e))
            };
            let (i, j) = (next()?, next()?);
            if i >= j {
                return Err(Error::parse(&loc, "edges must satisfy i < j"));
            }
            edges.push((i, j));
        }
        Self::from_edges(n, tau, &edges)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_edge_list()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_edge_list(&text)
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if !(-1.0..=1.0).contains(&tau) {
        return Err(Error::Config(format!("tau must lie in [-1, 1], got {tau}")));
    }
    Ok(())
}

fn row_norms(features: &Matrix) -> Result<Vec<f64>> {
    if !features.is_finite() {
        return Err(Error::Data("feature matrix has non-finite values".into()));
    }
    Ok(features.iter_rows().map(|r| dot(r, r).sqrt()).collect())
}

/// All pairs `(i, j, sim)` with `i < j` and `sim >= floor`, ordered by `(i, j)`.
fn similar_pairs(features: &Matrix, floor: f64) -> Result<Vec<(usize, usize, f64)>> {
    let norms = row_norms(features)?;
    let n = features.rows();
    let per_row: Vec<Vec<(usize, usize, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let fi = features.row(i);
            ((i + 1)..n)
                .filter_map(|j| {
                    let s = cosine_with_norms(fi, features.row(j), norms[i], norms[j]);
                    (s >= floor).then_some((i, j, s))
                })
                .collect()
        })
        .collect();
    Ok(per_row.into_iter().flatten().collect())
}

/// Thresholded cosine graph over the rows of `features`.
pub fn build_graph(features: &Matrix, tau: f64) -> Result<SimilarityGraph> {
    check_tau(tau)?;
    let n = features.rows();
    let pairs = similar_pairs(features, tau)?;
    let mut adj = vec![Vec::new(); n];
    // pairs arrive sorted by (i, j), so each list ends up sorted
    for &(i, j, _) in &pairs {
        adj[i].push(j);
    }
    for &(i, j, _) in &pairs {
        adj[j].push(i);
    }
    for list in &mut adj {
        list.sort_unstable();
    }
    Ok(SimilarityGraph { n, tau, adj })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GraphStats {
    pub nodes: usize,
    pub edge_count: usize,
    pub density: f64,
    pub isolated_node_count: usize,
    /// degree → number of nodes with that degree
    pub degree_histogram: BTreeMap<usize, usize>,
    pub connected_component_count: usize,
}

pub fn graph_stats(g: &SimilarityGraph) -> GraphStats {
    let n = g.n();
    let edge_count = g.edge_count();
    let density = if n >= 2 {
        2.0 * edge_count as f64 / (n as f64 * (n as f64 - 1.0))
    } else {
        0.0
    };
    let mut degree_histogram = BTreeMap::new();
    for i in 0..n {
        *degree_histogram.entry(g.degree(i)).or_insert(0) += 1;
    }
    let isolated_node_count = degree_histogram.get(&0).copied().unwrap_or(0);

    let mut seen = vec![false; n];
    let mut components = 0;
    let mut queue = VecDeque::new();
    for start in 0..n {
        if seen[start] {
            continue;
        }
        components += 1;
        seen[start] = true;
        queue.push_back(start);
        while let Some(u) = queue.pop_front() {
            for &v in g.neighbors(u) {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
    }

    GraphStats {
        nodes: n,
        edge_count,
        density,
        isolated_node_count,
        degree_histogram,
        connected_component_count: components,
    }
}

/// Graph statistics at several thresholds from a single similarity pass.
pub fn sweep_threshold(features: &Matrix, taus: &[f64]) -> Result<Vec<(f64, GraphStats)>> {
    if taus.is_empty() {
        return Err(Error::Config("threshold sweep needs at least one tau".into()));
    }
    for &t in taus {
        check_tau(t)?;
    }
    let floor = taus.iter().copied().fold(f64::INFINITY, f64::min);
    let pairs = similar_pairs(features, floor)?;
    let n = features.rows();
    Ok(taus
        .iter()
        .map(|&tau| {
            let edges: Vec<(usize, usize)> = pairs
                .iter()
                .filter(|p| p.2 >= tau)
                .map(|&(i, j, _)| (i, j))
                .collect();
            let g = SimilarityGraph::from_edges(n, tau, &edges).expect("pairs are valid edges");
            (tau, graph_stats(&g))
        })
        .collect())
}
