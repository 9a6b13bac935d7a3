mod common;

use gduq::graph::gaussian_feature_shift;
use gduq::model::{AnchorVariant, GnnConfig};
use gduq::motif::{generate_motif_dataset, BasisKind, MotifSpec};
use gduq::optim::AdamConfig;
use gduq::split::size_quantile_split_sizes;
use gduq::train::{train_accuracy, train_model, AnchorTraining, TrainConfig};
use gduq::{GnnModel, Graph, RngStream};

/// Number of simple cycles of each length 3, 4, 5, by exhaustive search.
fn cycle_counts(g: &Graph) -> (usize, usize, usize) {
    let adj = g.neighbors();
    let mut counts = [0usize; 6];
    fn walk(adj: &[Vec<usize>], start: usize, path: &mut Vec<usize>, counts: &mut [usize; 6]) {
        let last = *path.last().unwrap();
        for &next in &adj[last] {
            if next == start && path.len() >= 3 {
                counts[path.len()] += 1;
            } else if next > start && !path.contains(&next) && path.len() < 5 {
                path.push(next);
                walk(adj, start, path, counts);
                path.pop();
            }
        }
    }
    for start in 0..g.num_nodes() {
        walk(&adj, start, &mut vec![start], &mut counts);
    }
    // Every cycle is found once per direction from its smallest node.
    (counts[3] / 2, counts[4] / 2, counts[5] / 2)
}

#[test]
fn labels_are_recoverable_by_cycle_counting() {
    let spec = MotifSpec::default();
    let ds = generate_motif_dataset(&spec, 200, &mut RngStream::new(4)).unwrap();
    for g in &ds.graphs {
        assert!(g.is_connected());
        assert_eq!(cycle_counts(g), spec.motifs[g.label()].cycle_signature());
    }
}

#[test]
fn gin_learns_motif_labels() {
    let spec = MotifSpec {
        bases: vec![BasisKind::Path, BasisKind::Cycle, BasisKind::Tree],
        feature_noise: 0.1,
        ..MotifSpec::default()
    };
    let ds = generate_motif_dataset(&spec, 500, &mut RngStream::new(1)).unwrap();
    let graphs: Vec<&Graph> = ds.graphs.iter().collect();
    let config = GnnConfig {
        hidden_dim: 32,
        ..GnnConfig::default()
    };
    assert_eq!(config.num_layers, 3);
    let rng = RngStream::new(0);
    let mut model = GnnModel::new(config, AnchorVariant::None, 2, ds.num_classes, &mut rng.derive("init")).unwrap();
    let tc = TrainConfig {
        epochs: 200,
        batch_size: 32,
        adam: AdamConfig::default(),
    };
    train_model(&mut model, &graphs, &tc, AnchorTraining::Stochastic, &mut rng.derive("train")).unwrap();
    let acc = train_accuracy(&model, &graphs).unwrap();
    assert!(acc > 0.9, "train accuracy {acc}");
}

/// `count` sizes symmetric about `mean` (exact mean), spread up to `spread`.
fn symmetric_sizes(mean: usize, count: usize, spread: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(count);
    if count % 2 == 1 {
        out.push(mean);
    }
    for i in 0..count / 2 {
        let d = i % (spread + 1);
        out.push(mean - d);
        out.push(mean + d);
    }
    out
}

#[test]
fn dd_like_sizes_reproduce_quantile_structure() {
    // 1178 graphs: 589 small (mean 144), 471 middle (mean 343), 118 large
    // (mean 746); overall mean 284.
    let mut sizes = symmetric_sizes(144, 589, 99);
    sizes.extend(symmetric_sizes(343, 471, 80));
    sizes.extend(symmetric_sizes(746, 118, 200));
    let mut rng = RngStream::new(0);
    let order = rng.permutation(sizes.len());
    let sizes: Vec<usize> = order.iter().map(|&i| sizes[i]).collect();

    let split = size_quantile_split_sizes(&sizes, 0.5, 0.9, 0.1, &mut rng).unwrap();
    split.check(sizes.len()).unwrap();
    let avg = |idx: &[usize]| idx.iter().map(|&i| sizes[i] as f64).sum::<f64>() / idx.len() as f64;
    let pool: Vec<usize> = split.train.iter().chain(&split.val).copied().collect();
    let all: Vec<usize> = (0..sizes.len()).collect();
    let max_train = pool.iter().map(|&i| sizes[i]).max().unwrap();
    let min_ood = split.test_ood.iter().map(|&i| sizes[i]).min().unwrap();
    assert!(max_train <= min_ood);
    assert!(avg(&pool) < avg(&all) && avg(&all) < avg(&split.test_ood));
    assert_eq!(avg(&pool).round(), 144.0);
    assert_eq!(avg(&all).round(), 284.0);
    assert_eq!(avg(&split.test_ood).round(), 746.0);
    assert_eq!(pool.len(), 589);
    assert_eq!(split.test_ood.len(), 118);
}

#[test]
fn feature_shift_moves_features_only() {
    let ds = generate_motif_dataset(&MotifSpec::default(), 60, &mut RngStream::new(2)).unwrap();
    let same = gaussian_feature_shift(&ds.graphs, 0.0, 1.0).unwrap();
    assert_eq!(same, ds.graphs);
    let moved = gaussian_feature_shift(&ds.graphs, 3.0, 1.0).unwrap();
    for (a, b) in ds.graphs.iter().zip(&moved) {
        assert_eq!(a.edges(), b.edges());
        assert_eq!(a.label(), b.label());
        for (x, y) in a.features().values().iter().zip(b.features().values()) {
            assert_eq!(*y, x + 3.0);
        }
    }
    assert!(gaussian_feature_shift(&ds.graphs, 0.0, 0.0).is_err());
}
