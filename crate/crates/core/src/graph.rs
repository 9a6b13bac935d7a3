//! Graphs, batches and the plain-text dataset format.
//!
//! Dataset text format:
//!
//! ```text
//! N_GRAPHS d c
//! N m label          # one block per graph
//! f_1 ... f_d        # N feature rows
//! src dst            # m undirected edge lines
//! ```
//!
//! Edge lines are undirected: the loader stores both directions, and the
//! writer emits each pair once with `src <= dst`. Floats are written in
//! shortest round-trip form. Blank lines are ignored on read.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Graph {
    num_nodes: usize,
    features: Tensor,
    edges: Vec<(usize, usize)>,
    edge_features: Option<Tensor>,
    label: usize,
}

impl Graph {
    /// Validates endpoints and feature rows. `edges` are taken as given
    /// (directed); see [`Graph::undirected`] to symmetrise.
    pub fn new(features: Tensor, edges: Vec<(usize, usize)>, label: usize) -> Result<Self> {
        let (n, _) = features.require_matrix("Graph::new")?;
        for &(s, d) in &edges {
            if s >= n || d >= n {
                return Err(Error::Index(format!(
                    "edge ({s}, {d}) out of range for {n} nodes"
                )));
            }
        }
        Ok(Self {
            num_nodes: n,
            features,
            edges,
            edge_features: None,
            label,
        })
    }

    /// Builds a graph storing both directions of every pair (self-loops once).
    pub fn undirected(features: Tensor, pairs: &[(usize, usize)], label: usize) -> Result<Self> {
        let mut edges = Vec::with_capacity(2 * pairs.len());
        for &(s, d) in pairs {
            edges.push((s, d));
            if s != d {
                edges.push((d, s));
            }
        }
        Self::new(features, edges, label)
    }

    pub fn with_edge_features(mut self, ef: Tensor) -> Result<Self> {
        if ef.rows() != self.edges.len() {
            return Err(Error::Schema(format!(
                "{} edge feature rows for {} edges",
                ef.rows(),
                self.edges.len()
            )));
        }
        self.edge_features = Some(ef);
        Ok(self)
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn features_mut(&mut self) -> &mut Tensor {
        &mut self.features
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_features(&self) -> Option<&Tensor> {
        self.edge_features.as_ref()
    }

    pub fn label(&self) -> usize {
        self.label
    }

    /// Undirected pairs with `src <= dst`, deduplicated, in sorted order.
    pub fn undirected_pairs(&self) -> Vec<(usize, usize)> {
        let mut pairs: Vec<(usize, usize)> = self
            .edges
            .iter()
            .map(|&(s, d)| (s.min(d), s.max(d)))
            .collect();
        pairs.sort_unstable();
        pairs.dedup();
        pairs
    }

    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.num_nodes];
        for &(s, d) in &self.edges {
            adj[s].push(d);
        }
        adj
    }

    pub fn is_connected(&self) -> bool {
        if self.num_nodes == 0 {
            return true;
        }
        let adj = self.neighbors();
        let mut seen = vec![false; self.num_nodes];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for &u in &adj[v] {
                if !seen[u] {
                    seen[u] = true;
                    stack.push(u);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// The same graph with nodes relabelled so that old node `i` becomes
    /// `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.num_nodes;
        let mut inverse = vec![usize::MAX; n];
        for (old, &new) in perm.iter().enumerate() {
            if new >= n || inverse[new] != usize::MAX {
                return Err(Error::Contract("not a permutation".into()));
            }
            inverse[new] = old;
        }
        let features = self.features.gather_rows(&inverse)?;
        let edges = self.edges.iter().map(|&(s, d)| (perm[s], perm[d])).collect();
        let mut g = Self::new(features, edges, self.label)?;
        g.edge_features = self.edge_features.clone();
        Ok(g)
    }
}

/// Block-concatenation of several graphs into one disconnected graph.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphBatch {
    pub features: Tensor,
    pub edges: Vec<(usize, usize)>,
    pub edge_features: Option<Tensor>,
    /// Graph id of each node; nondecreasing.
    pub graph_index: Vec<usize>,
    pub labels: Vec<usize>,
    /// Offset of each graph's first node; has `num_graphs + 1` entries.
    pub node_offsets: Vec<usize>,
    /// Offset of each graph's first edge; has `num_graphs + 1` entries.
    pub edge_offsets: Vec<usize>,
}

impl GraphBatch {
    pub fn num_graphs(&self) -> usize {
        self.labels.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.graph_index.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn graph_sizes(&self) -> Vec<usize> {
        self.node_offsets.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Splits the batch back into its member graphs.
    pub fn unbatch(&self) -> Result<Vec<Graph>> {
        let d = self.feature_dim();
        (0..self.num_graphs())
            .map(|gi| {
                let (n0, n1) = (self.node_offsets[gi], self.node_offsets[gi + 1]);
                let (e0, e1) = (self.edge_offsets[gi], self.edge_offsets[gi + 1]);
                let feats = Tensor::new(
                    vec![n1 - n0, d],
                    self.features.values()[n0 * d..n1 * d].to_vec(),
                )?;
                let edges = self.edges[e0..e1]
                    .iter()
                    .map(|&(s, t)| (s - n0, t - n0))
                    .collect();
                let mut g = Graph::new(feats, edges, self.labels[gi])?;
                if let Some(ef) = &self.edge_features {
                    let de = ef.cols();
                    g = g.with_edge_features(Tensor::new(
                        vec![e1 - e0, de],
                        ef.values()[e0 * de..e1 * de].to_vec(),
                    )?)?;
                }
                Ok(g)
            })
            .collect()
    }
}

/// Concatenates graphs, shifting each graph's edges by its node offset.
pub fn batch_graphs<G: std::borrow::Borrow<Graph>>(graphs: &[G]) -> Result<GraphBatch> {
    let d = graphs.first().map_or(0, |g| g.borrow().feature_dim());
    let has_ef = graphs
        .first()
        .is_some_and(|g| g.borrow().edge_features.is_some());
    let mut rows = Vec::new();
    let mut edges = Vec::new();
    let mut ef_rows: Vec<Tensor> = Vec::new();
    let mut graph_index = Vec::new();
    let mut labels = Vec::with_capacity(graphs.len());
    let mut node_offsets = vec![0];
    let mut edge_offsets = vec![0];
    for (gi, g) in graphs.iter().enumerate() {
        let g = g.borrow();
        if g.feature_dim() != d {
            return Err(Error::Schema(format!(
                "graph {gi} has feature dim {} but batch uses {d}",
                g.feature_dim()
            )));
        }
        if g.edge_features.is_some() != has_ef {
            return Err(Error::Schema(format!(
                "graph {gi} disagrees with the batch on edge features"
            )));
        }
        let off = *node_offsets.last().unwrap();
        rows.push(g.features.clone());
        edges.extend(g.edges.iter().map(|&(s, t)| (s + off, t + off)));
        if let Some(ef) = &g.edge_features {
            ef_rows.push(ef.clone());
        }
        graph_index.extend(std::iter::repeat_n(gi, g.num_nodes));
        labels.push(g.label);
        node_offsets.push(off + g.num_nodes);
        edge_offsets.push(edges.len());
    }
    let features = if rows.is_empty() {
        Tensor::zeros(&[0, d])
    } else {
        Tensor::vstack(&rows)?
    };
    let edge_features = if has_ef {
        Some(Tensor::vstack(&ef_rows)?)
    } else {
        None
    };
    Ok(GraphBatch {
        features,
        edges,
        edge_features,
        graph_index,
        labels,
        node_offsets,
        edge_offsets,
    })
}

/// `X' = s * X + delta` on copies of the graphs; structure and labels kept.
pub fn gaussian_feature_shift(graphs: &[Graph], delta: f64, scale: f64) -> Result<Vec<Graph>> {
    if scale.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        return Err(Error::Domain(format!("feature scale must be > 0, got {scale}")));
    }
    Ok(graphs
        .iter()
        .map(|g| {
            let mut g = g.clone();
            for v in g.features.values_mut() {
                *v = scale * *v + delta;
            }
            g
        })
        .collect())
}

/// Like [`gaussian_feature_shift`] with additive per-entry noise
/// `N(0, noise_std^2)` drawn from `rng`.
pub fn noisy_feature_shift(
    graphs: &[Graph],
    delta: f64,
    scale: f64,
    noise_std: f64,
    rng: &mut RngStream,
) -> Result<Vec<Graph>> {
    let mut out = gaussian_feature_shift(graphs, delta, scale)?;
    if noise_std > 0.0 {
        for g in &mut out {
            for v in g.features.values_mut() {
                *v += noise_std * rng.normal();
            }
        }
    }
    Ok(out)
}

/// Header of a dataset file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetHeader {
    pub num_graphs: usize,
    pub feature_dim: usize,
    pub num_classes: usize,
}

pub fn parse_dataset(text: &str) -> Result<(Option<DatasetHeader>, Vec<Graph>)> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());

    let Some((hline, header)) = lines.next() else {
        return Ok((None, Vec::new()));
    };
    let h = parse_ints(header, hline, 3)?;
    let header = DatasetHeader {
        num_graphs: h[0],
        feature_dim: h[1],
        num_classes: h[2],
    };
    let d = header.feature_dim;
    let mut graphs = Vec::with_capacity(header.num_graphs);
    for gi in 0..header.num_graphs {
        let (gline, g) = lines.next().ok_or_else(|| Error::Parse {
            line: hline,
            msg: format!("expected {} graphs, found {gi}", header.num_graphs),
        })?;
        let g = parse_ints(g, gline, 3)?;
        let (n, m, label) = (g[0], g[1], g[2]);
        if label >= header.num_classes {
            return Err(Error::Parse {
                line: gline,
                msg: format!("label {label} not below class count {}", header.num_classes),
            });
        }
        let mut feats = Vec::with_capacity(n * d);
        for _ in 0..n {
            let (fl, row) = lines.next().ok_or_else(|| Error::Parse {
                line: gline,
                msg: "unexpected end of file in feature rows".into(),
            })?;
            let before = feats.len();
            for tok in row.split_whitespace() {
                feats.push(tok.parse::<f64>().map_err(|e| Error::Parse {
                    line: fl,
                    msg: format!("bad float `{tok}`: {e}"),
                })?);
            }
            if feats.len() - before != d {
                return Err(Error::Schema(format!(
                    "line {fl}: {} features, header declares {d}",
                    feats.len() - before
                )));
            }
        }
        let mut pairs = Vec::with_capacity(m);
        for _ in 0..m {
            let (el, e) = lines.next().ok_or_else(|| Error::Parse {
                line: gline,
                msg: "unexpected end of file in edge list".into(),
            })?;
            let e = parse_ints(e, el, 2)?;
            if e[0] >= n || e[1] >= n {
                return Err(Error::Parse {
                    line: el,
                    msg: format!("edge ({}, {}) out of range for {n} nodes", e[0], e[1]),
                });
            }
            pairs.push((e[0], e[1]));
        }
        graphs.push(Graph::undirected(Tensor::new(vec![n, d], feats)?, &pairs, label)?);
    }
    if let Some((l, _)) = lines.next() {
        return Err(Error::Parse {
            line: l,
            msg: "trailing content after last graph".into(),
        });
    }
    Ok((Some(header), graphs))
}

fn parse_ints(line: &str, lineno: usize, expect: usize) -> Result<Vec<usize>> {
    let vals: Vec<usize> = line
        .split_whitespace()
        .map(|t| {
            t.parse::<usize>().map_err(|e| Error::Parse {
                line: lineno,
                msg: format!("bad integer `{t}`: {e}"),
            })
        })
        .collect::<Result<_>>()?;
    if vals.len() != expect {
        return Err(Error::Parse {
            line: lineno,
            msg: format!("expected {expect} integers, found {}", vals.len()),
        });
    }
    Ok(vals)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<Graph>> {
    let text = std::fs::read_to_string(path)?;
    Ok(parse_dataset(&text)?.1)
}

pub fn format_dataset(graphs: &[Graph], num_classes: usize) -> Result<String> {
    let d = graphs.first().map_or(0, Graph::feature_dim);
    let mut out = String::new();
    writeln!(out, "{} {d} {num_classes}", graphs.len()).unwrap();
    for (gi, g) in graphs.iter().enumerate() {
        if g.feature_dim() != d {
            return Err(Error::Schema(format!("graph {gi} has feature dim {}", g.feature_dim())));
        }
        let pairs = g.undirected_pairs();
        writeln!(out, "{} {} {}", g.num_nodes, pairs.len(), g.label).unwrap();
        for i in 0..g.num_nodes {
            let row: Vec<String> = g.features.row_slice(i).iter().map(f64::to_string).collect();
            writeln!(out, "{}", row.join(" ")).unwrap();
        }
        for (s, t) in pairs {
            writeln!(out, "{s} {t}").unwrap();
        }
    }
    Ok(out)
}

pub fn save_dataset(path: impl AsRef<Path>, graphs: &[Graph], num_classes: usize) -> Result<()> {
    std::fs::write(path, format_dataset(graphs, num_classes)?)?;
    Ok(())
}
