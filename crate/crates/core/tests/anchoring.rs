mod common;

use common::{random_graph, small_config};
use gduq::anchoring::{
    anchor_input_train, convert_pretrained, fit_anchor_gaussian, freeze_anchor_set, infer_with_anchors,
    AnchorDistribution, ConfidenceSource, FixedAnchorSet, PredictionSummary,
};
use gduq::autodiff::Tape;
use gduq::model::{AnchorFeed, AnchorVariant, Backbone, ReadoutKind};
use gduq::optim::AdamConfig;
use gduq::tensor::{softmax_rows, Tensor};
use gduq::train::{train_model, AnchorTraining, TrainConfig};
use gduq::{GnnModel, Graph, RngStream};
use proptest::prelude::*;

fn graphs(seed: u64, count: usize) -> Vec<Graph> {
    let mut rng = RngStream::new(seed);
    (0..count).map(|i| random_graph(3 + i % 5, 3, 2, i % 2, &mut rng)).collect()
}

#[test]
fn gaussian_fit_recovers_standard_normal() {
    let mut rng = RngStream::new(1);
    let x = Tensor::new(vec![10_000, 2], (0..20_000).map(|_| rng.normal()).collect()).unwrap();
    let g = Graph::new(x, vec![], 0).unwrap();
    let dist = fit_anchor_gaussian(&[g]).unwrap();
    for j in 0..2 {
        assert!(dist.mean[j].abs() < 0.05);
        assert!((dist.std[j] - 1.0).abs() < 0.05);
    }
}

#[test]
fn input_anchor_column_means_match_monte_carlo_oracle() {
    let dist = AnchorDistribution {
        mean: vec![0.5, -1.0],
        std: vec![1.0, 2.0],
        fitted_on_nodes: 0,
    };
    let x = Tensor::from_rows(&[vec![1.0, 2.0], vec![-3.0, 0.0]]).unwrap();
    let mut rng = RngStream::new(3);
    let draws = 20_000;
    let mut sums = vec![0.0; 8];
    for _ in 0..draws {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let out = anchor_input_train(&mut tape, xv, &dist, &mut rng).unwrap();
        for (s, v) in sums.iter_mut().zip(tape.value(out).values()) {
            *s += v;
        }
    }
    for i in 0..2 {
        for j in 0..2 {
            let diff_mean = sums[i * 4 + j] / draws as f64;
            let query_mean = sums[i * 4 + 2 + j] / draws as f64;
            let expected = x.get(i, j) - dist.mean[j];
            // Four standard errors of the anchor mean.
            assert!((diff_mean - expected).abs() < 4.0 * dist.std[j] / (draws as f64).sqrt());
            assert_eq!(query_mean, x.get(i, j));
        }
    }
}

#[test]
fn identical_anchors_reduce_to_one_deterministic_pass() {
    let data = graphs(5, 12);
    let refs: Vec<&Graph> = data.iter().collect();
    for variant in [AnchorVariant::Input, AnchorVariant::Mpnn { layer: 1 }, AnchorVariant::Readout] {
        let mut model = GnnModel::new(small_config(Backbone::Gin, ReadoutKind::Mean), variant, 3, 2, &mut RngStream::new(0)).unwrap();
        if variant == AnchorVariant::Input {
            model.anchor_dist = Some(fit_anchor_gaussian(&refs).unwrap());
        }
        let set = freeze_anchor_set(&model, &refs, 1, &mut RngStream::new(1)).unwrap();
        let anchor = set.anchors[0].clone();
        let repeated = FixedAnchorSet::new(variant, vec![anchor.clone(); 6], 1).unwrap();
        let summaries = infer_with_anchors(&model, &repeated, &refs, ConfidenceSource::Modulated).unwrap();
        let single = softmax_rows(&model.logits_for(&refs, AnchorFeed::Fixed(&anchor)).unwrap());
        for (i, s) in summaries.iter().enumerate() {
            assert!(s.std.iter().all(|&v| v == 0.0));
            assert_eq!(s.mean, s.calibrated);
            for (c, &m) in s.mean.iter().enumerate() {
                assert!((m - single.get(i, c)).abs() < 1e-12);
            }
            let row = single.row_slice(i);
            let best = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            assert_eq!(s.predicted, best);
        }
    }
}

#[test]
fn frozen_anchor_sets_are_seeded() {
    let data = graphs(6, 10);
    let refs: Vec<&Graph> = data.iter().collect();
    let model = GnnModel::new(small_config(Backbone::Gcn, ReadoutKind::Sum), AnchorVariant::Readout, 3, 2, &mut RngStream::new(0)).unwrap();
    let a = freeze_anchor_set(&model, &refs, 4, &mut RngStream::new(9)).unwrap();
    let b = freeze_anchor_set(&model, &refs, 4, &mut RngStream::new(9)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.k, 4);
    let one = freeze_anchor_set(&model, &refs, 1, &mut RngStream::new(9)).unwrap();
    assert_eq!(one.anchors.len(), 1);
    // More anchors than validation graphs: sampled with replacement.
    assert_eq!(freeze_anchor_set(&model, &refs, 25, &mut RngStream::new(9)).unwrap().k, 25);
}

#[test]
fn pretrained_head_training_leaves_trunk_untouched() {
    let data = graphs(8, 24);
    let refs: Vec<&Graph> = data.iter().collect();
    let vanilla = GnnModel::new(small_config(Backbone::Gin, ReadoutKind::Mean), AnchorVariant::None, 3, 2, &mut RngStream::new(2)).unwrap();
    let mut model = convert_pretrained(&vanilla, &mut RngStream::new(3)).unwrap();
    let trunk_before = model.anchor_point_rows(&refs).unwrap();
    let params_before = model.params.clone();
    let tc = TrainConfig {
        epochs: 5,
        batch_size: 8,
        adam: AdamConfig {
            lr: 0.05,
            ..AdamConfig::default()
        },
    };
    train_model(&mut model, &refs, &tc, AnchorTraining::Stochastic, &mut RngStream::new(4)).unwrap();
    let mut head_moved = false;
    for (before, after) in params_before.iter().zip(model.params.iter()) {
        if GnnModel::is_trunk_param(&before.name) {
            assert_eq!(before.value, after.value, "{} moved", before.name);
            assert!(!after.trainable);
        } else {
            head_moved |= before.value != after.value;
        }
    }
    assert!(head_moved);
    assert_eq!(model.anchor_point_rows(&refs).unwrap(), trunk_before);
}

proptest! {
    #[test]
    fn summaries_respect_probability_invariants(
        logits in prop::collection::vec(prop::collection::vec(-8.0f64..8.0, 3), 1..12),
    ) {
        let t = Tensor::from_rows(&logits).unwrap();
        let probs = softmax_rows(&t);
        let rows: Vec<Vec<f64>> = (0..probs.rows()).map(|i| probs.row_slice(i).to_vec()).collect();
        for r in &rows {
            prop_assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let k = rows.len() as f64;
        let s = PredictionSummary::from_samples(rows, ConfidenceSource::Modulated).unwrap();
        prop_assert!((s.mean.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        // Sample std of K values in [0, 1] is at most 0.5 * sqrt(K / (K - 1)).
        let bound = if k > 1.0 { 0.5 * (k / (k - 1.0)).sqrt() } else { 0.0 };
        for ((&m, &sd), &cal) in s.mean.iter().zip(&s.std).zip(&s.calibrated) {
            prop_assert!(sd >= 0.0 && sd <= bound + 1e-12);
            prop_assert!(cal <= m);
            prop_assert!((cal - m * (1.0 - sd)).abs() < 1e-15);
        }
    }
}
