//! Safety metrics: accuracy, top-1 ECE, MSP AUROC, and generalization-gap
//! prediction with a validation-tuned confidence threshold.
//!
//! Record CSV columns, in order: `confidence,pred,true,split` where `split`
//! is `id` or `ood`.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Id,
    Ood,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub confidence: f64,
    #[serde(rename = "pred")]
    pub predicted: usize,
    #[serde(rename = "true")]
    pub label: usize,
    pub split: SplitTag,
}

impl EvalRecord {
    pub fn new(confidence: f64, predicted: usize, label: usize, split: SplitTag) -> Self {
        Self {
            confidence,
            predicted,
            label,
            split,
        }
    }

    pub fn correct(&self) -> bool {
        self.predicted == self.label
    }
}

fn require_nonempty(records: &[EvalRecord], what: &str) -> Result<()> {
    if records.is_empty() {
        return Err(Error::Contract(format!("{what} needs at least one record")));
    }
    Ok(())
}

pub fn accuracy(records: &[EvalRecord]) -> Result<f64> {
    require_nonempty(records, "accuracy")?;
    Ok(records.iter().filter(|r| r.correct()).count() as f64 / records.len() as f64)
}

/// Uniform-width reliability bins over `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationBins {
    pub counts: Vec<usize>,
    pub mean_confidence: Vec<f64>,
    pub accuracy: Vec<f64>,
}

impl CalibrationBins {
    /// Confidence `s` falls in bin `floor(s * B)`, with `s = 1` in the last bin.
    pub fn build(records: &[EvalRecord], num_bins: usize) -> Result<Self> {
        require_nonempty(records, "calibration binning")?;
        if num_bins == 0 {
            return Err(Error::Contract("need at least one bin".into()));
        }
        let mut counts = vec![0usize; num_bins];
        let mut conf = vec![0.0; num_bins];
        let mut hits = vec![0.0; num_bins];
        for r in records {
            if !(0.0..=1.0).contains(&r.confidence) {
                return Err(Error::Contract(format!("confidence {} outside [0, 1]", r.confidence)));
            }
            let b = ((r.confidence * num_bins as f64).floor() as usize).min(num_bins - 1);
            counts[b] += 1;
            conf[b] += r.confidence;
            if r.correct() {
                hits[b] += 1.0;
            }
        }
        let avg = |sum: &[f64]| -> Vec<f64> {
            sum.iter()
                .zip(&counts)
                .map(|(s, &n)| if n > 0 { s / n as f64 } else { 0.0 })
                .collect()
        };
        Ok(Self {
            mean_confidence: avg(&conf),
            accuracy: avg(&hits),
            counts,
        })
    }
}

/// Top-1 expected calibration error: `sum_b (n_b / N) |acc_b - conf_b|`.
pub fn ece(records: &[EvalRecord], num_bins: usize) -> Result<f64> {
    let bins = CalibrationBins::build(records, num_bins)?;
    let n = records.len() as f64;
    Ok(bins
        .counts
        .iter()
        .zip(bins.accuracy.iter().zip(&bins.mean_confidence))
        .filter(|(&c, _)| c > 0)
        .map(|(&c, (a, s))| c as f64 / n * (a - s).abs())
        .sum())
}

/// Probability that a random in-distribution score exceeds a random OOD
/// score, ties counting one half. In-distribution is the positive class.
pub fn auroc(scores_id: &[f64], scores_ood: &[f64]) -> Result<f64> {
    if scores_id.is_empty() || scores_ood.is_empty() {
        return Err(Error::Contract("AUROC needs ID and OOD scores".into()));
    }
    let mut all: Vec<(f64, bool)> = scores_id
        .iter()
        .map(|&s| (s, true))
        .chain(scores_ood.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Sum of mid-ranks (1-based) of the ID scores.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * all[i..=j].iter().filter(|x| x.1).count() as f64;
        i = j + 1;
    }
    let n_id = scores_id.len() as f64;
    let n_ood = scores_ood.len() as f64;
    Ok((rank_sum - n_id * (n_id + 1.0) / 2.0) / (n_id * n_ood))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GepThreshold {
    pub tau: f64,
    pub val_error: f64,
    pub val_accuracy: f64,
}

/// Fraction of records with confidence strictly above `tau`.
pub fn coverage(records: &[EvalRecord], tau: f64) -> f64 {
    records.iter().filter(|r| r.confidence > tau).count() as f64 / records.len().max(1) as f64
}

/// Picks the `tau` among all distinct validation confidences and `{0, 1}`
/// minimising `|acc_val - coverage(tau)|`; ties go to the smaller `tau`.
pub fn fit_gep_threshold(val: &[EvalRecord]) -> Result<GepThreshold> {
    require_nonempty(val, "threshold fitting")?;
    let acc = accuracy(val)?;
    let mut sorted: Vec<f64> = val.iter().map(|r| r.confidence).collect();
    sorted.sort_by(f64::total_cmp);
    let mut candidates = sorted.clone();
    candidates.push(0.0);
    candidates.push(1.0);
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    let n = sorted.len() as f64;
    let mut best = GepThreshold {
        tau: f64::NAN,
        val_error: f64::INFINITY,
        val_accuracy: acc,
    };
    for tau in candidates {
        let above = sorted.len() - sorted.partition_point(|&s| s <= tau);
        let err = (acc - above as f64 / n).abs();
        if err < best.val_error {
            best.tau = tau;
            best.val_error = err;
        }
    }
    Ok(best)
}

/// `|acc_target - coverage(tau)|` on a target set.
pub fn gep_error(records: &[EvalRecord], acc_target: f64, tau: f64) -> f64 {
    (acc_target - coverage(records, tau)).abs()
}

pub fn write_records_csv<W: Write>(records: &[EvalRecord], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(["confidence", "pred", "true", "split"])
        .map_err(csv_err)?;
    for r in records {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records_csv<R: Read>(input: R) -> Result<Vec<EvalRecord>> {
    let mut rd = csv::Reader::from_reader(input);
    let header = rd.headers().map_err(csv_err)?.clone();
    if header.iter().collect::<Vec<_>>() != ["confidence", "pred", "true", "split"] {
        return Err(Error::Schema(format!("unexpected record CSV header {header:?}")));
    }
    rd.deserialize().map(|r| r.map_err(csv_err)).collect()
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse {
            line,
            msg: format!("{other:?}"),
        },
    }
}
