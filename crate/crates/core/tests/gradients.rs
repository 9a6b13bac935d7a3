mod common;

use std::time::Instant;

use common::model_gradcheck;
use gduq::anchoring::anchor_permuted;
use gduq::autodiff::Tape;
use gduq::model::{AnchorVariant, Backbone};
use gduq::tensor::Tensor;

#[test]
fn gcn_and_gin_losses_pass_gradcheck_quickly() {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for backbone in [Backbone::Gcn, Backbone::Gin] {
        for seed in 0..10 {
            worst = worst.max(model_gradcheck(backbone, AnchorVariant::None, seed));
        }
    }
    assert!(worst < 1e-5, "max relative error {worst:e}");
    assert!(start.elapsed().as_secs_f64() < 30.0);
}

#[test]
fn anchored_variants_pass_gradcheck() {
    let variants = [
        AnchorVariant::Input,
        AnchorVariant::Mpnn { layer: 1 },
        AnchorVariant::Mpnn { layer: 2 },
        AnchorVariant::Readout,
    ];
    for backbone in [Backbone::Gcn, Backbone::Gin] {
        for (i, v) in variants.iter().enumerate() {
            let err = model_gradcheck(backbone, *v, 100 + i as u64);
            assert!(err < 1e-5, "{backbone:?} {v:?}: {err:e}");
        }
    }
}

/// Loss `sum([h - c || c] W)` with `c` the row swap of `h`.
fn swapped_loss(tape: &mut Tape, h: Tensor, w: &Tensor) -> (gduq::autodiff::Var, f64) {
    let hv = tape.param(h);
    let a = anchor_permuted(tape, hv, &[1, 0]).unwrap();
    let wv = tape.constant(w.clone());
    let y = tape.matmul(a, wv).unwrap();
    let loss = tape.sum(y);
    let value = tape.value(loss).values()[0];
    tape.backward(loss).unwrap();
    (hv, value)
}

#[test]
fn anchor_branch_gradient_is_frozen() {
    let h = Tensor::from_rows(&[vec![1.0, -2.0], vec![0.5, 3.0]]).unwrap();
    let w = Tensor::from_rows(&[vec![2.0], vec![-1.0], vec![4.0], vec![0.25]]).unwrap();
    let mut tape = Tape::new();
    let (hv, _) = swapped_loss(&mut tape, h.clone(), &w);
    let grad = tape.grad(hv).unwrap().values().to_vec();
    // Only the residual slot contributes: d/dh of (h W1).
    assert_eq!(grad, vec![2.0, -1.0, 2.0, -1.0]);

    // Finite differences of the full function also see the anchor slot.
    let eps = 1e-6;
    let mut plus = h.clone();
    plus.values_mut()[0] += eps;
    let mut minus = h.clone();
    minus.values_mut()[0] -= eps;
    let (_, lp) = swapped_loss(&mut Tape::new(), plus, &w);
    let (_, lm) = swapped_loss(&mut Tape::new(), minus, &w);
    let numeric = (lp - lm) / (2.0 * eps);
    // Row 0 is also the anchor of row 1: -W1[0] + W2[0] = -2 + 4.
    assert!((numeric - (2.0 - 2.0 + 4.0)).abs() < 1e-6, "{numeric}");
    assert!((numeric - grad[0]).abs() > 1.0);
}
