#![allow(dead_code)]

use std::path::PathBuf;

use gduq::baselines::ensemble_predict;
use gduq::metrics::{ece, EvalRecord, SplitTag};
use gduq::{ExperimentConfig, GnnModel, Graph};

pub const ECE_BINS: usize = 10;

pub fn config_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

pub fn bundled(name: &str) -> ExperimentConfig {
    ExperimentConfig::load(config_dir().join(name)).expect("bundled config")
}

pub fn bundled_names() -> Vec<String> {
    let mut names: Vec<String> = std::fs::read_dir(config_dir())
        .expect("config dir")
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".conf"))
        .collect();
    names.sort();
    names
}

/// Eval-mode records of a single model or an averaged ensemble.
pub fn ensemble_records(models: &[GnnModel], graphs: &[&Graph], tag: SplitTag) -> Vec<EvalRecord> {
    ensemble_predict(models, graphs)
        .expect("predict")
        .iter()
        .zip(graphs)
        .map(|(p, g)| EvalRecord::new(p.confidence, p.predicted, g.label(), tag))
        .collect()
}

pub fn ensemble_ece(models: &[GnnModel], graphs: &[&Graph]) -> f64 {
    ece(&ensemble_records(models, graphs, SplitTag::Ood), ECE_BINS).expect("ece")
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

use gduq::autodiff::gradcheck;
use gduq::model::{AnchorFeed, AnchorVariant, Backbone, GnnConfig, Mode, ReadoutKind};
use gduq::tensor::Tensor;
use gduq::{batch_graphs, RngStream};

/// Connected random graph: a random spanning tree plus `extra` chords.
pub fn random_graph(n: usize, d: usize, extra: usize, label: usize, rng: &mut RngStream) -> Graph {
    let mut pairs: Vec<(usize, usize)> = (1..n).map(|i| (rng.index(i), i)).collect();
    for _ in 0..extra {
        let (a, b) = (rng.index(n), rng.index(n));
        if a != b && !pairs.contains(&(a, b)) && !pairs.contains(&(b, a)) {
            pairs.push((a, b));
        }
    }
    let feats = (0..n * d).map(|_| rng.normal()).collect();
    Graph::undirected(Tensor::new(vec![n, d], feats).unwrap(), &pairs, label).unwrap()
}

pub fn small_config(backbone: Backbone, readout: ReadoutKind) -> GnnConfig {
    GnnConfig {
        backbone,
        num_layers: 2,
        hidden_dim: 5,
        readout,
        mlp_depth: 2,
        gin_epsilon: 0.0,
        dropout: 0.0,
    }
}

/// Max relative error of tape gradients against central differences for
/// the cross-entropy loss of a random model on a random batch.
pub fn model_gradcheck(backbone: Backbone, variant: AnchorVariant, seed: u64) -> f64 {
    let mut rng = RngStream::new(seed);
    let readout = if seed % 2 == 0 { ReadoutKind::Mean } else { ReadoutKind::Sum };
    let graphs: Vec<Graph> = (0..3)
        .map(|i| {
            let n = 2 + rng.index(5);
            random_graph(n, 3, 2, i % 2, &mut rng)
        })
        .collect();
    let batch = batch_graphs(&graphs).unwrap();
    let model = GnnModel::new(small_config(backbone, readout), variant, 3, 2, &mut rng).unwrap();
    let anchor = vec![0.3; model.anchor_dim()];
    gradcheck(
        |tape, vars| {
            let feed = if variant.is_anchored() {
                AnchorFeed::Fixed(&anchor)
            } else {
                AnchorFeed::None
            };
            let logits = model.forward(tape, vars, &batch, Mode::Eval, feed, &mut RngStream::new(0))?;
            tape.softmax_cross_entropy(logits, &batch.labels)
        },
        &model.param_tensors(),
        1e-6,
    )
    .unwrap()
}
