//! Comparison methods: deep ensembles, Monte Carlo dropout and temperature
//! scaling.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::anchoring::{summarize_passes, ConfidenceSource, PredictionSummary};
use crate::error::{Error, Result};
use crate::graph::{batch_graphs, Graph};
use crate::model::{AnchorFeed, AnchorVariant, GnnConfig, GnnModel, Mode};
use crate::rng::RngStream;
use crate::tensor::{softmax_rows, Tensor};
use crate::train::{train_model, AnchorTraining, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub seeds: Vec<u64>,
    pub config: GnnConfig,
}

impl EnsembleSpec {
    pub fn members(&self) -> usize {
        self.seeds.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.len() < 2 {
            return Err(Error::Config(format!(
                "an ensemble needs M >= 2 members, got {}",
                self.seeds.len()
            )));
        }
        Ok(())
    }
}

const MAX_MEMBER_ATTEMPTS: u64 = 3;

/// Trains one model per seed. A member that diverges is retrained with a
/// fresh seed, up to three attempts.
pub fn train_deep_ensemble(
    spec: &EnsembleSpec,
    train: &[&Graph],
    input_dim: usize,
    num_classes: usize,
    train_cfg: &TrainConfig,
) -> Result<Vec<GnnModel>> {
    spec.validate()?;
    train_ensemble_members(&spec.seeds, &spec.config, train, input_dim, num_classes, train_cfg)
}

/// Same as [`train_deep_ensemble`] without the `M >= 2` contract; used to
/// check that identical seeds collapse to one model.
pub fn train_ensemble_members(
    seeds: &[u64],
    config: &GnnConfig,
    train: &[&Graph],
    input_dim: usize,
    num_classes: usize,
    train_cfg: &TrainConfig,
) -> Result<Vec<GnnModel>> {
    seeds
        .iter()
        .map(|&seed| {
            let mut last_err = None;
            for attempt in 0..MAX_MEMBER_ATTEMPTS {
                let root = if attempt == 0 {
                    RngStream::new(seed)
                } else {
                    RngStream::new(seed).derive_index("retry", attempt)
                };
                match train_single(config, train, input_dim, num_classes, train_cfg, &root) {
                    Ok(m) => return Ok(m),
                    Err(e @ (Error::Diverged(_) | Error::NonFiniteGradient(_))) => {
                        warn!("ensemble member with seed {seed} diverged ({e}); retrying with a new seed");
                        last_err = Some(e);
                    }
                    Err(e) => return Err(e),
                }
            }
            Err(last_err.expect("at least one attempt"))
        })
        .collect()
}

/// Vanilla model trained from `root`: init from `root/init`, data order
/// from `root/train`.
pub fn train_single(
    config: &GnnConfig,
    train: &[&Graph],
    input_dim: usize,
    num_classes: usize,
    train_cfg: &TrainConfig,
    root: &RngStream,
) -> Result<GnnModel> {
    let mut init = root.derive("init");
    let mut order = root.derive("train");
    let mut model = GnnModel::new(config.clone(), AnchorVariant::None, input_dim, num_classes, &mut init)?;
    train_model(&mut model, train, train_cfg, AnchorTraining::Stochastic, &mut order)?;
    Ok(model)
}

/// Mean of the members' softmax outputs per graph.
pub fn ensemble_predict(models: &[GnnModel], graphs: &[&Graph]) -> Result<Vec<PredictionSummary>> {
    if models.is_empty() {
        return Err(Error::Contract("empty ensemble".into()));
    }
    let passes = models
        .iter()
        .map(|m| m.predict_probs(graphs))
        .collect::<Result<Vec<_>>>()?;
    summarize_passes(&passes, ConfidenceSource::Mean)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McdSpec {
    pub p: f64,
    pub samples: usize,
    /// Dropout sites active at inference; all when `None`.
    pub sites: Option<Vec<bool>>,
}

impl Default for McdSpec {
    fn default() -> Self {
        Self {
            p: 0.1,
            samples: 10,
            sites: None,
        }
    }
}

/// `S` stochastic passes with dropout on; mean / std as for anchors,
/// confidence from the mean.
pub fn mcd_predict(
    model: &GnnModel,
    graphs: &[&Graph],
    spec: &McdSpec,
    rng: &mut RngStream,
) -> Result<Vec<PredictionSummary>> {
    if !(spec.p > 0.0 && spec.p < 1.0) {
        return Err(Error::Contract(format!(
            "MC dropout needs 0 < p < 1, got {}",
            spec.p
        )));
    }
    if spec.samples == 0 {
        return Err(Error::Contract("MC dropout needs S >= 1".into()));
    }
    let mode = Mode::McDropout {
        p: spec.p,
        sites: spec.sites.as_deref(),
    };
    let mut passes = Vec::with_capacity(spec.samples);
    for _ in 0..spec.samples {
        let mut parts = Vec::new();
        for chunk in graphs.chunks(256) {
            let batch = batch_graphs(chunk)?;
            parts.push(softmax_rows(&model.logits(&batch, mode, AnchorFeed::None, rng)?));
        }
        passes.push(Tensor::vstack(&parts)?);
    }
    summarize_passes(&passes, ConfidenceSource::Mean)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TempScaleState {
    pub temperature: f64,
    pub nll_before: f64,
    pub nll_after: f64,
}

pub const TEMPERATURE_MAX: f64 = 100.0;
const TEMPERATURE_MIN: f64 = 1e-3;
const TEMPERATURE_TOL: f64 = 1e-4;

/// Mean NLL of `labels` under `softmax(logits / t)`.
pub fn temperature_nll(logits: &Tensor, labels: &[usize], t: f64) -> f64 {
    let c = logits.cols();
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row_slice(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max) / t;
        let lse = max + row.iter().map(|v| (v / t - max).exp()).sum::<f64>().ln();
        total += lse - row[y.min(c - 1)] / t;
    }
    total / labels.len() as f64
}

/// Golden-section search for the NLL-minimising temperature on `(0, 100]`.
/// Falls back to `T = 1` if the search ends worse than the identity.
pub fn fit_temperature(val_logits: &Tensor, val_labels: &[usize]) -> Result<TempScaleState> {
    if val_labels.is_empty() || val_logits.rows() != val_labels.len() {
        return Err(Error::Config(format!(
            "temperature fit needs matching non-empty logits ({} rows) and labels ({})",
            val_logits.rows(),
            val_labels.len()
        )));
    }
    if let Some(&bad) = val_labels.iter().find(|&&y| y >= val_logits.cols()) {
        return Err(Error::Index(format!("label {bad} out of range")));
    }
    let f = |t: f64| temperature_nll(val_logits, val_labels, t);
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (TEMPERATURE_MIN, TEMPERATURE_MAX);
    let mut x1 = b - ratio * (b - a);
    let mut x2 = a + ratio * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while b - a > TEMPERATURE_TOL {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - ratio * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + ratio * (b - a);
            f2 = f(x2);
        }
    }
    let nll_before = f(1.0);
    let mut temperature = 0.5 * (a + b);
    let mut nll_after = f(temperature);
    if !(nll_after <= nll_before) {
        temperature = 1.0;
        nll_after = nll_before;
    }
    Ok(TempScaleState {
        temperature,
        nll_before,
        nll_after,
    })
}

pub fn apply_temperature(logits: &Tensor, t: f64) -> Result<Tensor> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!("temperature must be > 0, got {t}")));
    }
    let mut scaled = logits.clone();
    for v in scaled.values_mut() {
        *v /= t;
    }
    Ok(softmax_rows(&scaled))
}
