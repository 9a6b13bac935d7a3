//! GCN / GIN graph classifiers: stacked message-passing layers, a
//! permutation-invariant readout, and an MLP head. Anchoring hooks sit at
//! the input, after a chosen message-passing layer, or after the readout.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::anchoring::{anchor_fixed, anchor_input_fixed, anchor_input_train, anchor_self, anchor_shuffle, AnchorDistribution};
use crate::autodiff::{SparseMatrix, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::{batch_graphs, Graph, GraphBatch};
use crate::optim::ParamStore;
use crate::rng::RngStream;
use crate::tensor::{softmax_rows, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backbone {
    Gcn,
    Gin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReadoutKind {
    Mean,
    Sum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnnConfig {
    pub backbone: Backbone,
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub readout: ReadoutKind,
    /// Number of linear layers in the classifier head.
    pub mlp_depth: usize,
    pub gin_epsilon: f64,
    pub dropout: f64,
}

impl Default for GnnConfig {
    fn default() -> Self {
        Self {
            backbone: Backbone::Gin,
            num_layers: 3,
            hidden_dim: 64,
            readout: ReadoutKind::Mean,
            mlp_depth: 2,
            gin_epsilon: 0.0,
            dropout: 0.0,
        }
    }
}

impl GnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 || self.hidden_dim == 0 || self.mlp_depth == 0 {
            return Err(Error::Config(format!(
                "layers, hidden_dim and mlp_depth must be >= 1: {self:?}"
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Where (if anywhere) the network is anchored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnchorVariant {
    None,
    /// `[x - c || x]` on node features, `c` from a fitted Gaussian.
    Input,
    /// `[h - c || c]` on node representations after message-passing layer
    /// `layer` (1-based, `1..=num_layers`).
    Mpnn { layer: usize },
    /// `[g - g_c || g_c]` on graph representations.
    Readout,
    /// Readout anchoring on a frozen pretrained trunk.
    PretrainedReadout,
}

impl AnchorVariant {
    pub fn tag(self) -> String {
        match self {
            AnchorVariant::None => "none".into(),
            AnchorVariant::Input => "input".into(),
            AnchorVariant::Mpnn { layer } => format!("mpnn{layer}"),
            AnchorVariant::Readout => "readout".into(),
            AnchorVariant::PretrainedReadout => "pretrained_readout".into(),
        }
    }

    pub fn is_anchored(self) -> bool {
        self != AnchorVariant::None
    }

    /// Anchors live in graph-representation space rather than node space.
    pub fn at_readout(self) -> bool {
        matches!(self, AnchorVariant::Readout | AnchorVariant::PretrainedReadout)
    }
}

/// How anchors are supplied to one forward pass.
#[derive(Debug, Clone, Copy)]
pub enum AnchorFeed<'a> {
    /// Unanchored model.
    None,
    /// Training, input variant: an independent Gaussian anchor per node.
    Gaussian(&'a AnchorDistribution),
    /// Training, hidden variants: anchors are a shuffle of the batch rows.
    Shuffle,
    /// Every row anchors to itself.
    SelfAnchor,
    /// One fixed anchor broadcast to every row (inference).
    Fixed(&'a [f64]),
}

#[derive(Debug, Clone, Copy)]
pub enum Mode<'a> {
    Eval,
    /// Dropout at the configured rate on every site.
    Train,
    /// Dropout at rate `p` on the enabled sites (all when `sites` is None).
    McDropout { p: f64, sites: Option<&'a [bool]> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Linear {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum MpLayer {
    Gcn(Linear),
    Gin(Linear, Linear),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnnModel {
    pub config: GnnConfig,
    pub variant: AnchorVariant,
    pub input_dim: usize,
    pub num_classes: usize,
    pub params: ParamStore,
    /// Gaussian fitted to training node features (input variant).
    pub anchor_dist: Option<AnchorDistribution>,
    layers: Vec<MpLayer>,
    head: Vec<Linear>,
}

fn glorot(fan_in: usize, fan_out: usize, rng: &mut RngStream) -> Tensor {
    let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| s * (2.0 * rng.uniform() - 1.0)).collect();
    Tensor::new(vec![fan_in, fan_out], data).expect("shape")
}

fn linear(params: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut RngStream) -> Linear {
    let w = params.push(format!("{name}.w"), glorot(fan_in, fan_out, rng));
    let b = params.push(format!("{name}.b"), Tensor::zeros(&[1, fan_out]));
    Linear { w, b }
}

/// Number of dropout sites: one after each message-passing layer plus one
/// after each hidden head layer.
pub fn dropout_sites(config: &GnnConfig) -> usize {
    config.num_layers + config.mlp_depth - 1
}

impl GnnModel {
    pub fn new(
        config: GnnConfig,
        variant: AnchorVariant,
        input_dim: usize,
        num_classes: usize,
        rng: &mut RngStream,
    ) -> Result<Self> {
        config.validate()?;
        if input_dim == 0 || num_classes < 2 {
            return Err(Error::Config(format!(
                "input_dim {input_dim} / num_classes {num_classes} invalid"
            )));
        }
        if let AnchorVariant::Mpnn { layer } = variant {
            if layer == 0 || layer > config.num_layers {
                return Err(Error::Config(format!(
                    "anchor layer {layer} outside 1..={}",
                    config.num_layers
                )));
            }
        }
        let h = config.hidden_dim;
        let mut params = ParamStore::new();
        let mut layers = Vec::with_capacity(config.num_layers);
        for i in 0..config.num_layers {
            let mut fan_in = if i == 0 { input_dim } else { h };
            let doubled = match variant {
                AnchorVariant::Input => i == 0,
                AnchorVariant::Mpnn { layer } => i == layer,
                _ => false,
            };
            if doubled {
                fan_in *= 2;
            }
            let name = format!("mp{i}");
            layers.push(match config.backbone {
                Backbone::Gcn => MpLayer::Gcn(linear(&mut params, &name, fan_in, h, rng)),
                Backbone::Gin => MpLayer::Gin(
                    linear(&mut params, &format!("{name}.mlp0"), fan_in, h, rng),
                    linear(&mut params, &format!("{name}.mlp1"), h, h, rng),
                ),
            });
        }
        let mut model = Self {
            config,
            variant,
            input_dim,
            num_classes,
            params,
            anchor_dist: None,
            layers,
            head: Vec::new(),
        };
        model.reset_head(rng);
        Ok(model)
    }

    fn head_input_dim(&self) -> usize {
        let h = self.config.hidden_dim;
        match self.variant {
            AnchorVariant::Readout | AnchorVariant::PretrainedReadout => 2 * h,
            AnchorVariant::Mpnn { layer } if layer == self.config.num_layers => 2 * h,
            _ => h,
        }
    }

    /// Drops any existing head and initialises a fresh one sized for the
    /// current variant.
    pub(crate) fn reset_head(&mut self, rng: &mut RngStream) {
        let mut kept = ParamStore::new();
        let mut remap = std::collections::HashMap::new();
        for (i, p) in self.params.iter().enumerate() {
            if !p.name.starts_with("head") {
                let j = kept.push(p.name.clone(), p.value.clone());
                kept.get_mut(j).trainable = p.trainable;
                remap.insert(i, j);
            }
        }
        let fix = |l: &mut Linear| {
            l.w = remap[&l.w];
            l.b = remap[&l.b];
        };
        for layer in &mut self.layers {
            match layer {
                MpLayer::Gcn(l) => fix(l),
                MpLayer::Gin(a, b) => {
                    fix(a);
                    fix(b);
                }
            }
        }
        self.params = kept;
        let depth = self.config.mlp_depth;
        let mut fan_in = self.head_input_dim();
        self.head = (0..depth)
            .map(|j| {
                let fan_out = if j + 1 == depth {
                    self.num_classes
                } else {
                    self.config.hidden_dim
                };
                let l = linear(&mut self.params, &format!("head{j}"), fan_in, fan_out, rng);
                fan_in = fan_out;
                l
            })
            .collect();
    }

    /// Registers parameters on `tape`. Frozen parameters, and all parameters
    /// when `track` is false, are recorded as constants.
    pub fn register(&self, tape: &mut Tape, track: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| {
                if track && p.trainable {
                    tape.param(p.value.clone())
                } else {
                    tape.constant(p.value.clone())
                }
            })
            .collect()
    }

    pub fn param_tensors(&self) -> Vec<Tensor> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    fn check_vars(&self, vars: &[Var]) -> Result<()> {
        if vars.len() != self.params.len() {
            return Err(Error::Shape {
                op: "model_forward",
                lhs: vec![self.params.len()],
                rhs: vec![vars.len()],
            });
        }
        Ok(())
    }

    fn dropout(
        &self,
        tape: &mut Tape,
        x: Var,
        site: usize,
        mode: Mode<'_>,
        rng: &mut RngStream,
    ) -> Result<Var> {
        let p = match mode {
            Mode::Eval => return Ok(x),
            Mode::Train => self.config.dropout,
            Mode::McDropout { p, sites } => {
                if sites.is_some_and(|s| !s.get(site).copied().unwrap_or(false)) {
                    return Ok(x);
                }
                p
            }
        };
        if p <= 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let mask = (0..tape.value(x).numel())
            .map(|_| if rng.bernoulli(p) { 0.0 } else { keep })
            .collect();
        tape.mul_const(x, mask)
    }

    fn apply_linear(&self, tape: &mut Tape, vars: &[Var], l: &Linear, x: Var, name: &str) -> Result<Var> {
        let xw = tape.matmul(x, vars[l.w]).map_err(|e| layer_err(e, name))?;
        tape.add_bias(xw, vars[l.b]).map_err(|e| layer_err(e, name))
    }

    fn anchor_nodes_or_graphs(
        &self,
        tape: &mut Tape,
        h: Var,
        feed: AnchorFeed<'_>,
        rng: &mut RngStream,
    ) -> Result<Var> {
        match feed {
            AnchorFeed::Shuffle => anchor_shuffle(tape, h, rng),
            AnchorFeed::SelfAnchor => anchor_self(tape, h),
            AnchorFeed::Fixed(c) => anchor_fixed(tape, h, c),
            AnchorFeed::None | AnchorFeed::Gaussian(_) => Err(Error::Contract(format!(
                "variant {} needs a shuffle, self or fixed anchor feed",
                self.variant.tag()
            ))),
        }
    }

    fn check_feed(&self, feed: AnchorFeed<'_>) -> Result<()> {
        match (self.variant, feed) {
            (AnchorVariant::None, AnchorFeed::None) => Ok(()),
            (AnchorVariant::None, _) => Err(Error::Contract("vanilla model takes no anchors".into())),
            (_, AnchorFeed::None) => Err(Error::Contract(format!(
                "anchored model ({}) needs an anchor feed",
                self.variant.tag()
            ))),
            _ => Ok(()),
        }
    }

    /// Records the forward pass and returns the `[num_graphs x classes]`
    /// logits. With `stop_at_anchor`, returns instead the representation
    /// the anchor is applied to (node rows or graph rows).
    #[allow(clippy::too_many_arguments)]
    fn forward_impl(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        batch: &GraphBatch,
        mode: Mode<'_>,
        feed: AnchorFeed<'_>,
        rng: &mut RngStream,
        stop_at_anchor: bool,
    ) -> Result<Var> {
        self.check_vars(vars)?;
        if batch.feature_dim() != self.input_dim {
            return Err(Error::Shape {
                op: "model_forward: input features",
                lhs: vec![self.input_dim],
                rhs: vec![batch.feature_dim()],
            });
        }
        if !stop_at_anchor {
            self.check_feed(feed)?;
        }
        let n = batch.num_nodes();
        let mut h = tape.constant(batch.features.clone());

        if self.variant == AnchorVariant::Input {
            if stop_at_anchor {
                return Ok(h);
            }
            h = match feed {
                AnchorFeed::Gaussian(dist) => anchor_input_train(tape, h, dist, rng)?,
                AnchorFeed::Fixed(c) => anchor_input_fixed(tape, h, c)?,
                AnchorFeed::SelfAnchor => {
                    let x = tape.value(h).clone();
                    let z = tape.constant(Tensor::zeros(x.shape()));
                    tape.concat_cols(z, h)?
                }
                _ => {
                    return Err(Error::Contract(
                        "input anchoring needs a Gaussian, self or fixed anchor feed".into(),
                    ))
                }
            };
        }

        let adjacency = Arc::new(match self.config.backbone {
            Backbone::Gcn => gcn_adjacency(n, &batch.edges)?,
            Backbone::Gin => gin_adjacency(n, &batch.edges, self.config.gin_epsilon)?,
        });

        for (i, layer) in self.layers.iter().enumerate() {
            if let AnchorVariant::Mpnn { layer: r } = self.variant {
                if i == r {
                    if stop_at_anchor {
                        return Ok(h);
                    }
                    h = self.anchor_nodes_or_graphs(tape, h, feed, rng)?;
                }
            }
            let name = format!("mp{i}");
            h = match layer {
                MpLayer::Gcn(l) => {
                    let xw = tape.matmul(h, vars[l.w]).map_err(|e| layer_err(e, &name))?;
                    let agg = tape.sparse_matmul(adjacency.clone(), xw)?;
                    let z = tape.add_bias(agg, vars[l.b]).map_err(|e| layer_err(e, &name))?;
                    tape.relu(z)
                }
                MpLayer::Gin(l0, l1) => {
                    let agg = tape.sparse_matmul(adjacency.clone(), h)?;
                    let z = self.apply_linear(tape, vars, l0, agg, &name)?;
                    let z = tape.relu(z);
                    let z = self.apply_linear(tape, vars, l1, z, &name)?;
                    tape.relu(z)
                }
            };
            h = self.dropout(tape, h, i, mode, rng)?;
        }
        if let AnchorVariant::Mpnn { layer: r } = self.variant {
            if r == self.layers.len() {
                if stop_at_anchor {
                    return Ok(h);
                }
                h = self.anchor_nodes_or_graphs(tape, h, feed, rng)?;
            }
        }

        let pool = Arc::new(pool_matrix(batch, self.config.readout)?);
        let mut g = tape.sparse_matmul(pool, h)?;

        if self.variant.at_readout() {
            if stop_at_anchor {
                return Ok(g);
            }
            g = self.anchor_nodes_or_graphs(tape, g, feed, rng)?;
        }
        if stop_at_anchor {
            return Err(Error::Contract("vanilla model has no anchor point".into()));
        }

        let depth = self.head.len();
        for (j, l) in self.head.iter().enumerate() {
            g = self.apply_linear(tape, vars, l, g, &format!("head{j}"))?;
            if j + 1 < depth {
                g = tape.relu(g);
                g = self.dropout(tape, g, self.layers.len() + j, mode, rng)?;
            }
        }
        Ok(g)
    }

    /// Logits for `batch` using parameter leaves `vars` (see [`GnnModel::register`]).
    pub fn forward(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        batch: &GraphBatch,
        mode: Mode<'_>,
        feed: AnchorFeed<'_>,
        rng: &mut RngStream,
    ) -> Result<Var> {
        self.forward_impl(tape, vars, batch, mode, feed, rng, false)
    }

    /// Untracked logits for a batch.
    pub fn logits(
        &self,
        batch: &GraphBatch,
        mode: Mode<'_>,
        feed: AnchorFeed<'_>,
        rng: &mut RngStream,
    ) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.register(&mut tape, false);
        let out = self.forward(&mut tape, &vars, batch, mode, feed, rng)?;
        let logits = tape.value(out).clone();
        if !logits.all_finite() {
            return Err(Error::Diverged("non-finite logits".into()));
        }
        Ok(logits)
    }

    /// Eval-mode logits for many graphs, batched in chunks.
    pub fn logits_for(&self, graphs: &[&Graph], feed: AnchorFeed<'_>) -> Result<Tensor> {
        let mut rng = RngStream::new(0);
        let parts = graphs
            .chunks(EVAL_CHUNK)
            .map(|chunk| {
                let batch = batch_graphs(chunk)?;
                self.logits(&batch, Mode::Eval, feed, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        if parts.is_empty() {
            return Ok(Tensor::zeros(&[0, self.num_classes]));
        }
        Tensor::vstack(&parts)
    }

    /// Eval-mode softmax probabilities for an unanchored model.
    pub fn predict_probs(&self, graphs: &[&Graph]) -> Result<Tensor> {
        Ok(softmax_rows(&self.logits_for(graphs, AnchorFeed::None)?))
    }

    /// Deterministic representation at the anchoring point: node rows
    /// (input / mpnn variants) or graph rows (readout variants).
    pub fn anchor_point_rows(&self, graphs: &[&Graph]) -> Result<Tensor> {
        if !self.variant.is_anchored() {
            return Err(Error::Contract("vanilla model has no anchor point".into()));
        }
        let mut rng = RngStream::new(0);
        let parts = graphs
            .chunks(EVAL_CHUNK)
            .map(|chunk| {
                let batch = batch_graphs(chunk)?;
                let mut tape = Tape::new();
                let vars = self.register(&mut tape, false);
                let v = self.forward_impl(&mut tape, &vars, &batch, Mode::Eval, AnchorFeed::None, &mut rng, true)?;
                Ok(tape.value(v).clone())
            })
            .collect::<Result<Vec<_>>>()?;
        Tensor::vstack(&parts)
    }

    /// Width of an anchor vector for this model's variant.
    pub fn anchor_dim(&self) -> usize {
        match self.variant {
            AnchorVariant::Input => self.input_dim,
            _ => self.config.hidden_dim,
        }
    }

    /// Names of the message-passing (trunk) parameters.
    pub fn is_trunk_param(name: &str) -> bool {
        name.starts_with("mp")
    }
}

const EVAL_CHUNK: usize = 256;

fn layer_err(e: Error, layer: &str) -> Error {
    match e {
        Error::Shape { lhs, rhs, .. } => Error::Schema(format!(
            "parameter shape mismatch in layer {layer}: {lhs:?} vs {rhs:?}"
        )),
        other => other,
    }
}

/// `D^-1/2 (A + I) D^-1/2` with messages flowing `src -> dst`.
pub fn gcn_adjacency(n: usize, edges: &[(usize, usize)]) -> Result<SparseMatrix> {
    let mut deg = vec![1.0f64; n];
    for &(_, d) in edges {
        deg[d] += 1.0;
    }
    let mut trip: Vec<(usize, usize, f64)> = (0..n).map(|i| (i, i, 1.0 / deg[i])).collect();
    trip.extend(
        edges
            .iter()
            .map(|&(s, d)| (d, s, 1.0 / (deg[s] * deg[d]).sqrt())),
    );
    SparseMatrix::from_triplets(n, n, &trip)
}

/// `A + (1 + eps) I`: the GIN sum aggregator.
pub fn gin_adjacency(n: usize, edges: &[(usize, usize)], eps: f64) -> Result<SparseMatrix> {
    let mut trip: Vec<(usize, usize, f64)> = (0..n).map(|i| (i, i, 1.0 + eps)).collect();
    trip.extend(edges.iter().map(|&(s, d)| (d, s, 1.0)));
    SparseMatrix::from_triplets(n, n, &trip)
}

/// `[num_graphs x num_nodes]` pooling matrix for the readout.
pub fn pool_matrix(batch: &GraphBatch, kind: ReadoutKind) -> Result<SparseMatrix> {
    let sizes = batch.graph_sizes();
    if let Some(empty) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::Contract(format!("readout over empty graph {empty}")));
    }
    let trip: Vec<(usize, usize, f64)> = batch
        .graph_index
        .iter()
        .enumerate()
        .map(|(node, &g)| {
            let w = match kind {
                ReadoutKind::Mean => 1.0 / sizes[g] as f64,
                ReadoutKind::Sum => 1.0,
            };
            (g, node, w)
        })
        .collect();
    SparseMatrix::from_triplets(batch.num_graphs(), batch.num_nodes(), &trip)
}

/// Untracked readout of node rows `x` grouped by `graph_index`.
pub fn readout(x: &Tensor, graph_index: &[usize], kind: ReadoutKind) -> Result<Tensor> {
    let num_graphs = graph_index.iter().max().map_or(0, |&g| g + 1);
    let mut counts = vec![0usize; num_graphs];
    for &g in graph_index {
        counts[g] += 1;
    }
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Contract(format!("readout over empty graph {empty}")));
    }
    if graph_index.len() != x.rows() {
        return Err(Error::Contract("graph_index length differs from node count".into()));
    }
    let d = x.cols();
    let mut out = vec![0.0; num_graphs * d];
    for (node, &g) in graph_index.iter().enumerate() {
        let w = match kind {
            ReadoutKind::Mean => 1.0 / counts[g] as f64,
            ReadoutKind::Sum => 1.0,
        };
        for (o, v) in out[g * d..(g + 1) * d].iter_mut().zip(x.row_slice(node)) {
            *o += w * v;
        }
    }
    Tensor::new(vec![num_graphs, d], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::matmul;

    fn path3() -> Graph {
        let x = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![2.0, -1.0]]).unwrap();
        Graph::undirected(x, &[(0, 1), (1, 2)], 0).unwrap()
    }

    #[test]
    fn gcn_adjacency_matches_dense_oracle() {
        let g = path3();
        let s = gcn_adjacency(3, g.edges()).unwrap().to_dense();
        // dense oracle: A + I, degrees, symmetric normalisation
        let a = [[1.0, 1.0, 0.0], [1.0, 1.0, 1.0], [0.0, 1.0, 1.0]];
        let deg: Vec<f64> = a.iter().map(|r| r.iter().sum()).collect();
        for i in 0..3 {
            for j in 0..3 {
                let expect = a[i][j] / (deg[i] * deg[j]).sqrt();
                assert!((s.get(i, j) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn readout_identities() {
        let x = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        let idx = [0, 1, 1];
        let mean = readout(&x, &idx, ReadoutKind::Mean).unwrap();
        let sum = readout(&x, &idx, ReadoutKind::Sum).unwrap();
        assert_eq!(mean.row_slice(0), &[1.0, 2.0]);
        assert_eq!(mean.row_slice(1), &[4.0, 5.0]);
        for (g, n) in [(0usize, 1.0), (1, 2.0)] {
            for j in 0..2 {
                assert!((sum.get(g, j) - n * mean.get(g, j)).abs() < 1e-12);
            }
        }
        assert!(readout(&x, &[0, 2, 2], ReadoutKind::Mean).is_err());
    }

    #[test]
    fn single_gcn_layer_on_isolated_node() {
        let mut rng = RngStream::new(0);
        let cfg = GnnConfig {
            backbone: Backbone::Gcn,
            num_layers: 1,
            hidden_dim: 3,
            mlp_depth: 1,
            ..GnnConfig::default()
        };
        let model = GnnModel::new(cfg, AnchorVariant::None, 2, 2, &mut rng).unwrap();
        let g = Graph::new(Tensor::row(&[0.7, -1.2]), vec![], 0).unwrap();
        let batch = batch_graphs(&[&g]).unwrap();
        let mut tape = Tape::new();
        let vars = model.register(&mut tape, false);
        let feats = tape.constant(batch.features.clone());
        let adj = Arc::new(gcn_adjacency(1, &[]).unwrap());
        let xw = tape.matmul(feats, vars[0]).unwrap();
        let agg = tape.sparse_matmul(adj, xw).unwrap();
        let expect = matmul(&g.features().clone(), &model.params.get(0).value).unwrap();
        assert_eq!(tape.value(agg), &expect);
    }

    #[test]
    fn zero_params_give_uniform_probs() {
        let mut rng = RngStream::new(0);
        let mut model = GnnModel::new(GnnConfig { hidden_dim: 4, ..GnnConfig::default() }, AnchorVariant::None, 2, 3, &mut rng).unwrap();
        for i in 0..model.params.len() {
            let p = model.params.get_mut(i);
            p.value = Tensor::zeros(p.value.shape());
        }
        let g = path3();
        let probs = model.predict_probs(&[&g]).unwrap();
        assert!(probs.values().iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn rejects_bad_anchor_layer() {
        let mut rng = RngStream::new(0);
        assert!(GnnModel::new(GnnConfig::default(), AnchorVariant::Mpnn { layer: 4 }, 2, 2, &mut rng).is_err());
        assert!(GnnModel::new(GnnConfig::default(), AnchorVariant::Mpnn { layer: 0 }, 2, 2, &mut rng).is_err());
    }

    #[test]
    fn anchored_widths_double_only_at_anchor() {
        let mut rng = RngStream::new(0);
        let cfg = GnnConfig { hidden_dim: 8, ..GnnConfig::default() };
        let m = GnnModel::new(cfg.clone(), AnchorVariant::Mpnn { layer: 1 }, 3, 2, &mut rng).unwrap();
        let shape = |name: &str| m.params.get(m.params.index_of(name).unwrap()).value.shape().to_vec();
        assert_eq!(shape("mp0.mlp0.w"), vec![3, 8]);
        assert_eq!(shape("mp1.mlp0.w"), vec![16, 8]);
        assert_eq!(shape("mp2.mlp0.w"), vec![8, 8]);
        assert_eq!(shape("head0.w"), vec![8, 8]);

        let r = GnnModel::new(cfg.clone(), AnchorVariant::Readout, 3, 2, &mut rng).unwrap();
        assert_eq!(r.params.get(r.params.index_of("head0.w").unwrap()).value.shape(), &[16, 8]);
        let i = GnnModel::new(cfg, AnchorVariant::Input, 3, 2, &mut rng).unwrap();
        assert_eq!(i.params.get(i.params.index_of("mp0.mlp0.w").unwrap()).value.shape(), &[6, 8]);
    }

    #[test]
    fn param_count_mismatch_is_shape_error() {
        let mut rng = RngStream::new(0);
        let model = GnnModel::new(GnnConfig { hidden_dim: 4, ..GnnConfig::default() }, AnchorVariant::None, 2, 2, &mut rng).unwrap();
        let g = path3();
        let batch = batch_graphs(&[&g]).unwrap();
        let mut tape = Tape::new();
        let vars = model.register(&mut tape, false);
        let r = model.forward(&mut tape, &vars[1..], &batch, Mode::Eval, AnchorFeed::None, &mut rng);
        assert!(matches!(r, Err(Error::Shape { .. })));
    }
}
