//! Mini-batch training with Adam.

use serde::{Deserialize, Serialize};

use crate::anchoring::fit_anchor_gaussian;
use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::graph::{batch_graphs, Graph};
use crate::model::{AnchorFeed, AnchorVariant, GnnModel, Mode};
use crate::optim::{adam_step, AdamConfig, OptimizerState};
use crate::rng::RngStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            adam: AdamConfig::default(),
        }
    }
}

/// Anchor source during training of an anchored model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AnchorTraining {
    /// Gaussian anchors (input variant) or batch shuffles (hidden variants).
    #[default]
    Stochastic,
    /// Each row is its own anchor.
    SelfAnchor,
}

#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
}

impl TrainReport {
    pub fn final_loss(&self) -> f64 {
        self.epoch_losses.last().copied().unwrap_or(f64::NAN)
    }
}

pub fn train_model(
    model: &mut GnnModel,
    train: &[&Graph],
    cfg: &TrainConfig,
    anchoring: AnchorTraining,
    rng: &mut RngStream,
) -> Result<TrainReport> {
    if train.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    if model.variant == AnchorVariant::Input && model.anchor_dist.is_none() {
        model.anchor_dist = Some(fit_anchor_gaussian(train)?);
    }
    let mut state = OptimizerState::new(&model.params, cfg.adam);
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let graphs: Vec<&Graph> = chunk.iter().map(|&i| train[i]).collect();
            let batch = batch_graphs(&graphs)?;
            let dist = model.anchor_dist.clone();
            let feed = match (model.variant, anchoring) {
                (AnchorVariant::None, _) => AnchorFeed::None,
                (_, AnchorTraining::SelfAnchor) => AnchorFeed::SelfAnchor,
                (AnchorVariant::Input, _) => AnchorFeed::Gaussian(dist.as_ref().expect("fitted above")),
                _ => AnchorFeed::Shuffle,
            };
            let mut tape = Tape::new();
            let vars = model.register(&mut tape, true);
            let logits = model.forward(&mut tape, &vars, &batch, Mode::Train, feed, rng)?;
            let loss = tape.softmax_cross_entropy(logits, &batch.labels)?;
            let lv = tape.value(loss).values()[0];
            if !lv.is_finite() {
                return Err(Error::Diverged(format!("non-finite loss at epoch {epoch}")));
            }
            total += lv * graphs.len() as f64;
            tape.backward(loss)?;
            let grads: Vec<_> = vars
                .iter()
                .zip(model.params.iter())
                .map(|(&v, p)| if p.trainable { tape.grad(v).cloned() } else { None })
                .collect();
            adam_step(&mut model.params, &grads, &mut state)?;
        }
        report.epoch_losses.push(total / train.len() as f64);
    }
    Ok(report)
}

/// Fraction of `graphs` whose eval-mode argmax matches the label
/// (vanilla models) or whose self-anchored argmax matches (anchored).
pub fn train_accuracy(model: &GnnModel, graphs: &[&Graph]) -> Result<f64> {
    let feed = if model.variant.is_anchored() && model.variant != AnchorVariant::Input {
        AnchorFeed::SelfAnchor
    } else if model.variant == AnchorVariant::Input {
        let dist = model
            .anchor_dist
            .as_ref()
            .ok_or_else(|| Error::Contract("input model without fitted Gaussian".into()))?;
        return accuracy_with(model, graphs, AnchorFeed::Fixed(&dist.mean));
    } else {
        AnchorFeed::None
    };
    accuracy_with(model, graphs, feed)
}

fn accuracy_with(model: &GnnModel, graphs: &[&Graph], feed: AnchorFeed<'_>) -> Result<f64> {
    let logits = model.logits_for(graphs, feed)?;
    let pred = logits.argmax_rows();
    let correct = pred
        .iter()
        .zip(graphs)
        .filter(|(p, g)| **p == g.label())
        .count();
    Ok(correct as f64 / graphs.len().max(1) as f64)
}
