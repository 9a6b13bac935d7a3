//! Synthetic motif benchmark: a random basis graph with one attached motif,
//! labelled by the motif. Supports size, covariate (held-out basis) and
//! concept (basis/label correlation) shifts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::rng::RngStream;
use crate::split::{size_quantile_split, DatasetSplit, SplitKind};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisKind {
    Path,
    Cycle,
    Star,
    Tree,
}

impl BasisKind {
    pub fn name(self) -> &'static str {
        match self {
            BasisKind::Path => "path",
            BasisKind::Cycle => "cycle",
            BasisKind::Star => "star",
            BasisKind::Tree => "tree",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "path" => Ok(BasisKind::Path),
            "cycle" => Ok(BasisKind::Cycle),
            "star" => Ok(BasisKind::Star),
            "tree" => Ok(BasisKind::Tree),
            other => Err(Error::Config(format!("unknown basis kind `{other}`"))),
        }
    }

    /// Edges of a basis on `n` nodes. Cycles have at least 6 nodes so they
    /// never contain a 3-, 4- or 5-cycle.
    pub fn build(self, n: usize, rng: &mut RngStream) -> (usize, Vec<(usize, usize)>) {
        let n = match self {
            BasisKind::Cycle => n.max(6),
            _ => n.max(2),
        };
        let edges = match self {
            BasisKind::Path => (1..n).map(|i| (i - 1, i)).collect(),
            BasisKind::Cycle => (0..n).map(|i| (i, (i + 1) % n)).collect(),
            BasisKind::Star => (1..n).map(|i| (0, i)).collect(),
            BasisKind::Tree => (1..n).map(|i| (rng.index(i), i)).collect(),
        };
        (n, edges)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotifKind {
    Triangle,
    Square,
    Pentagon,
    House,
    Diamond,
}

impl MotifKind {
    pub fn name(self) -> &'static str {
        match self {
            MotifKind::Triangle => "triangle",
            MotifKind::Square => "square",
            MotifKind::Pentagon => "pentagon",
            MotifKind::House => "house",
            MotifKind::Diamond => "diamond",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "triangle" => Ok(MotifKind::Triangle),
            "square" => Ok(MotifKind::Square),
            "pentagon" => Ok(MotifKind::Pentagon),
            "house" => Ok(MotifKind::House),
            "diamond" => Ok(MotifKind::Diamond),
            other => Err(Error::Config(format!("unknown motif kind `{other}`"))),
        }
    }

    pub fn build(self) -> (usize, Vec<(usize, usize)>) {
        match self {
            MotifKind::Triangle => (3, vec![(0, 1), (1, 2), (2, 0)]),
            MotifKind::Square => (4, vec![(0, 1), (1, 2), (2, 3), (3, 0)]),
            MotifKind::Pentagon => (5, vec![(0, 1), (1, 2), (2, 3), (3, 4), (4, 0)]),
            MotifKind::House => (5, vec![(0, 1), (1, 2), (2, 3), (3, 0), (0, 4), (1, 4)]),
            MotifKind::Diamond => (4, vec![(0, 1), (0, 2), (0, 3), (1, 2), (1, 3)]),
        }
    }

    /// Number of (triangles, 4-cycles, 5-cycles) in the motif; distinct for
    /// every kind.
    pub fn cycle_signature(self) -> (usize, usize, usize) {
        match self {
            MotifKind::Triangle => (1, 0, 0),
            MotifKind::Square => (0, 1, 0),
            MotifKind::Pentagon => (0, 0, 1),
            MotifKind::House => (1, 1, 1),
            MotifKind::Diamond => (2, 1, 0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MotifShift {
    None,
    Size {
        train_quantile: f64,
        eval_quantile: f64,
    },
    Covariate {
        held_out: Vec<BasisKind>,
    },
    Concept {
        rho: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotifSpec {
    pub bases: Vec<BasisKind>,
    /// Label `i` is `motifs[i]`.
    pub motifs: Vec<MotifKind>,
    /// Inclusive basis node-count range.
    pub basis_size: (usize, usize),
    pub shift: MotifShift,
    pub feature_dim: usize,
    /// Std of the Gaussian noise columns (all columns but the first, which
    /// is constant 1).
    pub feature_noise: f64,
    pub val_fraction: f64,
}

impl Default for MotifSpec {
    fn default() -> Self {
        Self {
            bases: vec![BasisKind::Path, BasisKind::Cycle, BasisKind::Star, BasisKind::Tree],
            motifs: vec![MotifKind::House, MotifKind::Pentagon, MotifKind::Diamond],
            basis_size: (6, 20),
            shift: MotifShift::None,
            feature_dim: 2,
            feature_noise: 1.0,
            val_fraction: 0.1,
        }
    }
}

impl MotifSpec {
    pub fn num_classes(&self) -> usize {
        self.motifs.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.motifs.is_empty() {
            return Err(Error::Config("motif set is empty".into()));
        }
        for (i, m) in self.motifs.iter().enumerate() {
            if self.motifs[..i].contains(m) {
                return Err(Error::Config(format!("motif `{}` listed twice", m.name())));
            }
        }
        if self.bases.is_empty() {
            return Err(Error::Config("basis set is empty".into()));
        }
        if self.basis_size.0 < 2 || self.basis_size.0 > self.basis_size.1 {
            return Err(Error::Config(format!("bad basis size range {:?}", self.basis_size)));
        }
        if self.feature_dim == 0 {
            return Err(Error::Config("feature_dim must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config(format!("val_fraction {} not in [0, 1)", self.val_fraction)));
        }
        match &self.shift {
            MotifShift::Concept { rho } if !(0.0..=1.0).contains(rho) => {
                Err(Error::Config(format!("rho {rho} not in [0, 1]")))
            }
            MotifShift::Covariate { held_out } => {
                if self.bases.iter().all(|b| held_out.contains(b)) {
                    return Err(Error::Config("every basis is held out".into()));
                }
                for b in held_out {
                    if !self.bases.contains(b) {
                        return Err(Error::Config(format!(
                            "held-out basis `{}` not among the bases",
                            b.name()
                        )));
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MotifDataset {
    pub graphs: Vec<Graph>,
    pub split: DatasetSplit,
    /// Basis used for each graph.
    pub basis: Vec<BasisKind>,
    pub num_classes: usize,
}

/// One basis graph with `motif` bridged to a random basis node; node order
/// is shuffled.
pub fn motif_graph(
    basis: BasisKind,
    basis_nodes: usize,
    motif: MotifKind,
    label: usize,
    feature_dim: usize,
    feature_noise: f64,
    rng: &mut RngStream,
) -> Result<Graph> {
    let (nb, mut pairs) = basis.build(basis_nodes, rng);
    let (nm, motif_pairs) = motif.build();
    pairs.extend(motif_pairs.iter().map(|&(s, t)| (s + nb, t + nb)));
    pairs.push((rng.index(nb), nb + rng.index(nm)));
    let n = nb + nm;
    let perm = rng.permutation(n);
    let pairs: Vec<(usize, usize)> = pairs.into_iter().map(|(s, t)| (perm[s], perm[t])).collect();
    let mut feats = Vec::with_capacity(n * feature_dim);
    for _ in 0..n {
        feats.push(1.0);
        for _ in 1..feature_dim {
            feats.push(feature_noise * rng.normal());
        }
    }
    Graph::undirected(Tensor::new(vec![n, feature_dim], feats)?, &pairs, label)
}

const TRAIN_FRAC: f64 = 0.6;
const TEST_ID_FRAC: f64 = 0.15;

pub fn generate_motif_dataset(spec: &MotifSpec, n_graphs: usize, rng: &mut RngStream) -> Result<MotifDataset> {
    spec.validate()?;
    if n_graphs < 50 {
        return Err(Error::Config(format!("need at least 50 graphs, got {n_graphs}")));
    }
    let c = spec.num_classes();
    let mut graph_rng = rng.derive("graphs");
    let mut split_rng = rng.derive("split");

    // Role assignment for the non-size shifts: 0 train, 1 val, 2 test-id, 3 test-ood.
    let mut roles: Vec<u8> = (0..n_graphs)
        .map(|i| {
            let f = i as f64 / n_graphs as f64;
            if f < TRAIN_FRAC {
                0
            } else if f < TRAIN_FRAC + spec.val_fraction {
                1
            } else if f < TRAIN_FRAC + spec.val_fraction + TEST_ID_FRAC {
                2
            } else {
                3
            }
        })
        .collect();
    split_rng.shuffle(&mut roles);

    let in_dist_bases: Vec<BasisKind> = match &spec.shift {
        MotifShift::Covariate { held_out } => spec
            .bases
            .iter()
            .copied()
            .filter(|b| !held_out.contains(b))
            .collect(),
        _ => spec.bases.clone(),
    };

    let mut graphs = Vec::with_capacity(n_graphs);
    let mut basis = Vec::with_capacity(n_graphs);
    for (i, &role) in roles.iter().enumerate() {
        let label = i % c;
        let is_ood = role == 3 && !matches!(spec.shift, MotifShift::Size { .. });
        let b = match &spec.shift {
            MotifShift::Covariate { held_out } if is_ood && !held_out.is_empty() => {
                held_out[graph_rng.index(held_out.len())]
            }
            MotifShift::Concept { rho } if !is_ood && graph_rng.bernoulli(*rho) => {
                spec.bases[label % spec.bases.len()]
            }
            _ => in_dist_bases[graph_rng.index(in_dist_bases.len())],
        };
        let size = graph_rng.range_inclusive(spec.basis_size.0, spec.basis_size.1);
        graphs.push(motif_graph(
            b,
            size,
            spec.motifs[label],
            label,
            spec.feature_dim,
            spec.feature_noise,
            &mut graph_rng,
        )?);
        basis.push(b);
    }

    let split = match &spec.shift {
        MotifShift::Size {
            train_quantile,
            eval_quantile,
        } => size_quantile_split(&graphs, *train_quantile, *eval_quantile, spec.val_fraction, &mut split_rng)?,
        shift => {
            let pick = |r: u8| -> Vec<usize> { (0..n_graphs).filter(|&i| roles[i] == r).collect() };
            let kind = match shift {
                MotifShift::Covariate { held_out } => SplitKind::Covariate {
                    held_out: held_out.iter().map(|b| b.name().to_string()).collect(),
                },
                MotifShift::Concept { rho } => SplitKind::Concept { rho: *rho },
                _ => SplitKind::None,
            };
            DatasetSplit {
                train: pick(0),
                val: pick(1),
                test_id: pick(2),
                test_ood: pick(3),
                kind,
            }
        }
    };
    split.check(graphs.len())?;
    Ok(MotifDataset {
        graphs,
        split,
        basis,
        num_classes: c,
    })
}
