use gduq::metrics::{auroc, coverage, ece, fit_gep_threshold, gep_error, EvalRecord, SplitTag};
use gduq::RngStream;
use proptest::prelude::*;

fn rec(conf: f64, correct: bool) -> EvalRecord {
    EvalRecord::new(conf, 0, if correct { 0 } else { 1 }, SplitTag::Id)
}

/// ECE by scanning each bin interval explicitly.
fn ece_oracle(records: &[(f64, bool)], bins: usize) -> f64 {
    let n = records.len() as f64;
    (0..bins)
        .map(|b| {
            let lo = b as f64 / bins as f64;
            let hi = (b + 1) as f64 / bins as f64;
            let members: Vec<&(f64, bool)> = records
                .iter()
                .filter(|(s, _)| *s >= lo && (*s < hi || (b + 1 == bins && *s <= 1.0)))
                .collect();
            if members.is_empty() {
                return 0.0;
            }
            let m = members.len() as f64;
            let acc = members.iter().filter(|(_, c)| *c).count() as f64 / m;
            let conf = members.iter().map(|(s, _)| s).sum::<f64>() / m;
            m / n * (acc - conf).abs()
        })
        .sum()
}

fn pairwise_auroc(id: &[f64], ood: &[f64]) -> f64 {
    let mut wins = 0.0;
    for &a in id {
        for &b in ood {
            wins += if a > b {
                1.0
            } else if a == b {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / (id.len() * ood.len()) as f64
}

#[test]
fn ece_hand_cases() {
    let cases: Vec<(Vec<(f64, bool)>, f64)> = vec![
        (vec![(0.95, true), (0.95, true), (0.65, true), (0.65, false)], 0.1),
        (vec![(1.0, true), (1.0, true)], 0.0),
        (vec![(0.25, false), (0.25, false), (0.25, true), (0.25, true)], 0.25),
        (vec![(0.05, true)], 0.95),
    ];
    for (case, expected) in cases {
        let records: Vec<EvalRecord> = case.iter().map(|&(s, c)| rec(s, c)).collect();
        let got = ece(&records, 10).unwrap();
        assert!((got - expected).abs() < 1e-15, "{got} vs {expected}");
        assert!((got - ece_oracle(&case, 10)).abs() < 1e-15);
    }
}

#[test]
fn auroc_hand_case() {
    assert_eq!(auroc(&[0.9, 0.4], &[0.6, 0.2]).unwrap(), 0.75);
}

#[test]
fn gep_threshold_matches_exhaustive_scan() {
    let mut rng = RngStream::new(5);
    for _ in 0..50 {
        let n = 5 + rng.index(40);
        let records: Vec<EvalRecord> = (0..n)
            .map(|_| {
                let s = (rng.uniform() * 20.0).round() / 20.0;
                rec(s, rng.bernoulli(s))
            })
            .collect();
        let fitted = fit_gep_threshold(&records).unwrap();
        let acc = records.iter().filter(|r| r.correct()).count() as f64 / n as f64;
        let best = (0..=10_000)
            .map(|i| (acc - coverage(&records, i as f64 / 10_000.0)).abs())
            .fold(f64::INFINITY, f64::min);
        assert!((fitted.val_error - best).abs() < 1e-12, "{} vs {best}", fitted.val_error);
        assert!((gep_error(&records, acc, fitted.tau) - fitted.val_error).abs() < 1e-12);
    }
}

#[test]
fn calibrated_scores_predict_accuracy() {
    let mut rng = RngStream::new(9);
    let mut draw = |n: usize| -> Vec<EvalRecord> {
        (0..n)
            .map(|_| {
                let s = 0.3 + 0.7 * rng.uniform();
                rec(s, rng.bernoulli(s))
            })
            .collect()
    };
    let val = draw(1000);
    let test = draw(1000);
    let tau = fit_gep_threshold(&val).unwrap();
    assert!(tau.val_error < 0.05);
    let acc = test.iter().filter(|r| r.correct()).count() as f64 / 1000.0;
    assert!(gep_error(&test, acc, tau.tau) < 0.05);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn auroc_matches_pairwise_oracle(
        id in prop::collection::vec(0u8..8, 1..30),
        ood in prop::collection::vec(0u8..8, 1..30),
    ) {
        let id: Vec<f64> = id.into_iter().map(|v| v as f64 / 8.0).collect();
        let ood: Vec<f64> = ood.into_iter().map(|v| v as f64 / 8.0).collect();
        let fast = auroc(&id, &ood).unwrap();
        prop_assert!((fast - pairwise_auroc(&id, &ood)).abs() < 1e-12);
    }

    #[test]
    fn ece_matches_oracle_and_ignores_duplication(
        raw in prop::collection::vec((0.0f64..=1.0, any::<bool>()), 1..60),
        copies in 2usize..4,
    ) {
        let records: Vec<EvalRecord> = raw.iter().map(|&(s, c)| rec(s, c)).collect();
        let e = ece(&records, 10).unwrap();
        prop_assert!((e - ece_oracle(&raw, 10)).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&e));
        let repeated: Vec<EvalRecord> = records.iter().cycle().take(records.len() * copies).copied().collect();
        prop_assert!((ece(&repeated, 10).unwrap() - e).abs() < 1e-12);
    }
}
