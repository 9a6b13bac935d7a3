//! Stochastic anchoring for GNNs.
//!
//! Training builds anchored pairs on the fly: input features pair with a
//! Gaussian anchor as `[x - c || x]`; hidden node or graph representations
//! pair with a shuffled copy of the batch as `[h - c || c]`, where `c` is a
//! constant for backward. Inference runs `K` passes with fixed anchors and
//! aggregates them into a mean, a per-class sample std and the modulated
//! score `mean * (1 - std)`.

use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::model::{AnchorFeed, AnchorVariant, GnnModel};
use crate::rng::RngStream;
use crate::tensor::{argmax, softmax_rows, Tensor};

/// Lower bound on a fitted per-dimension std.
pub const SIGMA_FLOOR: f64 = 1e-6;

/// Diagonal Gaussian over node features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorDistribution {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Number of node rows the fit pooled.
    pub fitted_on_nodes: usize,
}

impl AnchorDistribution {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn sample(&self, rng: &mut RngStream) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.std)
            .map(|(m, s)| m + s * rng.normal())
            .collect()
    }
}

/// Per-dimension mean and sample std (`n - 1`) over every node of every
/// graph. Dimensions with std below [`SIGMA_FLOOR`] are floored.
pub fn fit_anchor_gaussian<G: std::borrow::Borrow<Graph>>(graphs: &[G]) -> Result<AnchorDistribution> {
    let d = graphs
        .first()
        .map(|g| g.borrow().feature_dim())
        .ok_or_else(|| Error::Contract("cannot fit anchors on an empty graph set".into()))?;
    let mut n = 0usize;
    let mut mean = vec![0.0; d];
    let mut m2 = vec![0.0; d];
    // Welford accumulation
    for g in graphs {
        let g = g.borrow();
        if g.feature_dim() != d {
            return Err(Error::Schema("mixed feature dims while fitting anchors".into()));
        }
        for i in 0..g.num_nodes() {
            n += 1;
            for (j, &x) in g.features().row_slice(i).iter().enumerate() {
                let delta = x - mean[j];
                mean[j] += delta / n as f64;
                m2[j] += delta * (x - mean[j]);
            }
        }
    }
    if n == 0 {
        return Err(Error::Contract("cannot fit anchors without nodes".into()));
    }
    let mut std: Vec<f64> = m2
        .iter()
        .map(|&s| if n > 1 { (s / (n - 1) as f64).sqrt() } else { 0.0 })
        .collect();
    for (j, s) in std.iter_mut().enumerate() {
        if *s < SIGMA_FLOOR {
            warn!("anchor feature dimension {j} has ~zero variance; flooring std at {SIGMA_FLOOR}");
            *s = SIGMA_FLOOR;
        }
    }
    Ok(AnchorDistribution {
        mean,
        std,
        fitted_on_nodes: n,
    })
}

/// `[x - c || x]` with an independent Gaussian anchor per node row.
pub fn anchor_input_train(tape: &mut Tape, x: Var, dist: &AnchorDistribution, rng: &mut RngStream) -> Result<Var> {
    let (n, d) = tape.value(x).require_matrix("anchor_input_train")?;
    if d != dist.dim() {
        return Err(Error::Shape {
            op: "anchor_input_train",
            lhs: vec![n, d],
            rhs: vec![dist.dim()],
        });
    }
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n {
        data.extend(dist.sample(rng));
    }
    let c = tape.constant(Tensor::new(vec![n, d], data)?);
    let diff = tape.sub(x, c)?;
    tape.concat_cols(diff, x)
}

/// `[x - c || x]` with one anchor broadcast over all node rows.
pub fn anchor_input_fixed(tape: &mut Tape, x: Var, anchor: &[f64]) -> Result<Var> {
    let (n, d) = tape.value(x).require_matrix("anchor_input_fixed")?;
    if d != anchor.len() {
        return Err(Error::Shape {
            op: "anchor_input_fixed",
            lhs: vec![n, d],
            rhs: vec![anchor.len()],
        });
    }
    let c = tape.constant(Tensor::broadcast_row(anchor, n));
    let diff = tape.sub(x, c)?;
    tape.concat_cols(diff, x)
}

/// `[h - c || c]` where `c` is the detached row permutation `perm` of `h`.
pub fn anchor_permuted(tape: &mut Tape, h: Var, perm: &[usize]) -> Result<Var> {
    let c = tape.value(h).gather_rows(perm)?;
    let c = tape.constant(c);
    let diff = tape.sub(h, c)?;
    tape.concat_cols(diff, c)
}

/// Hidden-layer training anchors: rows of `h` shuffled over the batch.
pub fn anchor_shuffle(tape: &mut Tape, h: Var, rng: &mut RngStream) -> Result<Var> {
    let n = tape.value(h).rows();
    if n < 2 {
        warn!("anchor shuffle over a single row; falling back to self-anchoring");
        return anchor_permuted(tape, h, &[0]);
    }
    let perm = rng.permutation(n);
    anchor_permuted(tape, h, &perm)
}

/// `[h - h || h]` for the self-anchor control. The anchor is the query
/// itself, so gradient flows through both slots and the layer reduces to a
/// vanilla layer fed `h`.
pub fn anchor_self(tape: &mut Tape, h: Var) -> Result<Var> {
    let diff = tape.sub(h, h)?;
    tape.concat_cols(diff, h)
}

/// `[h - c || c]` with one fixed anchor broadcast over every row.
pub fn anchor_fixed(tape: &mut Tape, h: Var, anchor: &[f64]) -> Result<Var> {
    let (n, d) = tape.value(h).require_matrix("anchor_fixed")?;
    if d != anchor.len() {
        return Err(Error::Shape {
            op: "anchor_fixed",
            lhs: vec![n, d],
            rhs: vec![anchor.len()],
        });
    }
    let c = tape.constant(Tensor::broadcast_row(anchor, n));
    let diff = tape.sub(h, c)?;
    tape.concat_cols(diff, c)
}

/// `K` frozen anchors used for every inference pass of an evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedAnchorSet {
    pub variant: String,
    pub k: usize,
    pub dim: usize,
    pub anchors: Vec<Vec<f64>>,
    pub source_seed: u64,
}

impl FixedAnchorSet {
    pub fn new(variant: AnchorVariant, anchors: Vec<Vec<f64>>, source_seed: u64) -> Result<Self> {
        let dim = anchors.first().map_or(0, Vec::len);
        if anchors.is_empty() || anchors.iter().any(|a| a.len() != dim) {
            return Err(Error::Contract("anchor set must hold K >= 1 equal-width anchors".into()));
        }
        Ok(Self {
            variant: variant.tag(),
            k: anchors.len(),
            dim,
            anchors,
            source_seed,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let set: FixedAnchorSet = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if set.k != set.anchors.len() || set.anchors.iter().any(|a| a.len() != set.dim) {
            return Err(Error::Schema("anchor file K / dim disagree with the anchor matrix".into()));
        }
        Ok(set)
    }
}

/// Draws the fixed inference anchors for `model`.
///
/// Input variant: `K` samples of the model's fitted Gaussian. Hidden
/// variants: `K` rows of the deterministic representation at the anchoring
/// point computed on `validation` (node rows for mpnn, graph rows for
/// readout); drawn without replacement unless `K` exceeds the row count.
pub fn freeze_anchor_set(
    model: &GnnModel,
    validation: &[&Graph],
    k: usize,
    rng: &mut RngStream,
) -> Result<FixedAnchorSet> {
    if k == 0 {
        return Err(Error::Contract("K must be >= 1".into()));
    }
    let seed = rng.seed();
    let anchors = match model.variant {
        AnchorVariant::None => return Err(Error::Contract("vanilla model has no anchors".into())),
        AnchorVariant::Input => {
            let dist = model
                .anchor_dist
                .as_ref()
                .ok_or_else(|| Error::Contract("input-anchored model has no fitted Gaussian".into()))?;
            (0..k).map(|_| dist.sample(rng)).collect()
        }
        _ => {
            if validation.is_empty() {
                return Err(Error::Contract("no validation graphs to draw anchors from".into()));
            }
            let rows = model.anchor_point_rows(validation)?;
            let n = rows.rows();
            let picks: Vec<usize> = if k > n {
                warn!("K = {k} exceeds {n} validation rows; sampling anchors with replacement");
                (0..k).map(|_| rng.index(n)).collect()
            } else {
                let mut perm = rng.permutation(n);
                perm.truncate(k);
                perm
            };
            picks.iter().map(|&i| rows.row_slice(i).to_vec()).collect()
        }
    };
    FixedAnchorSet::new(model.variant, anchors, seed)
}

/// Which score drives the predicted class and confidence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ConfidenceSource {
    /// `mean * (1 - std)`.
    #[default]
    Modulated,
    Mean,
}

/// Aggregate of `K` probability vectors for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSummary {
    pub per_sample: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub calibrated: Vec<f64>,
    pub predicted: usize,
    pub confidence: f64,
}

impl PredictionSummary {
    /// Mean, sample std (`K - 1` denominator; zero when `K = 1`) and the
    /// modulated score, all per class.
    pub fn from_samples(per_sample: Vec<Vec<f64>>, source: ConfidenceSource) -> Result<Self> {
        let k = per_sample.len();
        let c = per_sample.first().map_or(0, Vec::len);
        if k == 0 || c == 0 || per_sample.iter().any(|r| r.len() != c) {
            return Err(Error::Contract("need K >= 1 equal-length probability rows".into()));
        }
        // Shifted by the first row so identical rows give exactly that row.
        let first = per_sample[0].clone();
        let mut shift = vec![0.0; c];
        for row in &per_sample[1..] {
            for ((m, p), f) in shift.iter_mut().zip(row).zip(&first) {
                *m += p - f;
            }
        }
        let mean: Vec<f64> = first.iter().zip(&shift).map(|(f, m)| f + m / k as f64).collect();
        let std: Vec<f64> = if k == 1 {
            vec![0.0; c]
        } else {
            (0..c)
                .map(|j| {
                    let ss: f64 = per_sample.iter().map(|r| (r[j] - mean[j]).powi(2)).sum();
                    (ss / (k - 1) as f64).sqrt()
                })
                .collect()
        };
        let calibrated: Vec<f64> = mean.iter().zip(&std).map(|(m, s)| m * (1.0 - s)).collect();
        let scores = match source {
            ConfidenceSource::Modulated => &calibrated,
            ConfidenceSource::Mean => &mean,
        };
        let predicted = argmax(scores);
        let confidence = scores[predicted].clamp(0.0, 1.0);
        Ok(Self {
            per_sample,
            mean,
            std,
            calibrated,
            predicted,
            confidence,
        })
    }
}

/// Collates `[K]` probability matrices of shape `[n x c]` into `n` summaries.
pub fn summarize_passes(passes: &[Tensor], source: ConfidenceSource) -> Result<Vec<PredictionSummary>> {
    let n = passes.first().map_or(0, Tensor::rows);
    (0..n)
        .map(|i| {
            let rows = passes.iter().map(|p| p.row_slice(i).to_vec()).collect();
            PredictionSummary::from_samples(rows, source)
        })
        .collect()
}

/// Runs one anchored pass per fixed anchor and aggregates them per graph.
pub fn infer_with_anchors(
    model: &GnnModel,
    anchors: &FixedAnchorSet,
    graphs: &[&Graph],
    source: ConfidenceSource,
) -> Result<Vec<PredictionSummary>> {
    if anchors.variant != model.variant.tag() {
        return Err(Error::Contract(format!(
            "anchor set for `{}` used with a `{}` model",
            anchors.variant,
            model.variant.tag()
        )));
    }
    if anchors.dim != model.anchor_dim() {
        return Err(Error::Shape {
            op: "infer_with_anchors",
            lhs: vec![model.anchor_dim()],
            rhs: vec![anchors.dim],
        });
    }
    if anchors.k == 1 {
        log::info!("single anchor: std is defined as 0");
    }
    let passes = anchors
        .anchors
        .iter()
        .map(|c| Ok(softmax_rows(&model.logits_for(graphs, AnchorFeed::Fixed(c))?)))
        .collect::<Result<Vec<_>>>()?;
    summarize_passes(&passes, source)
}

/// Turns a trained vanilla model into a pretrained-readout anchored model:
/// the message-passing trunk is frozen and the head is re-initialised with
/// doubled input width.
pub fn convert_pretrained(vanilla: &GnnModel, rng: &mut RngStream) -> Result<GnnModel> {
    if vanilla.variant != AnchorVariant::None {
        return Err(Error::Contract(format!(
            "pretrained conversion expects a vanilla model, got `{}`",
            vanilla.variant.tag()
        )));
    }
    let mut model = vanilla.clone();
    model.variant = AnchorVariant::PretrainedReadout;
    model.params.set_trainable(GnnModel::is_trunk_param, false);
    model.reset_head(rng);
    Ok(model)
}
