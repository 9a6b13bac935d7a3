//! Seeded experiment runs: data, training per method, anchors, thresholds
//! and safety metrics on test-id and test-ood.

use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::anchoring::{
    convert_pretrained, freeze_anchor_set, infer_with_anchors, FixedAnchorSet, PredictionSummary,
};
use crate::baselines::{
    apply_temperature, ensemble_predict, fit_temperature, mcd_predict, train_ensemble_members, train_single,
    McdSpec,
};
use crate::config::{hex, DatasetSource, ExperimentConfig, MethodConfig, SplitConfig};
use crate::error::{Error, Result};
use crate::graph::{format_dataset, parse_dataset, Graph};
use crate::metrics::{
    accuracy, auroc, ece, fit_gep_threshold, gep_error, write_records_csv, EvalRecord, SplitTag,
};
use crate::model::GnnModel;
use crate::motif::generate_motif_dataset;
use crate::report::{emit_report, write_atomic, MetricsReport, RunRecord, RunStatus};
use crate::rng::RngStream;
use crate::split::{random_split, size_quantile_split, DatasetSplit};
use crate::tensor::Tensor;
use crate::train::{train_model, AnchorTraining, TrainConfig};

pub const ECE_BINS: usize = 10;

/// A loaded or generated dataset with its split.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub graphs: Vec<Graph>,
    pub split: DatasetSplit,
    pub num_classes: usize,
    pub input_dim: usize,
    /// Hex SHA-256 over the serialised graphs and split indices.
    pub hash: String,
}

impl PreparedData {
    pub fn subset(&self, idx: &[usize]) -> Vec<&Graph> {
        idx.iter().map(|&i| &self.graphs[i]).collect()
    }
}

pub fn prepare_data(cfg: &ExperimentConfig) -> Result<PreparedData> {
    let mut rng = RngStream::new(cfg.dataset.seed).derive("dataset");
    let (graphs, split, num_classes) = match &cfg.dataset.source {
        DatasetSource::Motif { n_graphs, .. } => {
            let spec = cfg.motif_spec().expect("motif source");
            let ds = generate_motif_dataset(&spec, *n_graphs, &mut rng)?;
            (ds.graphs, ds.split, ds.num_classes)
        }
        DatasetSource::File { path } => {
            let (header, graphs) = parse_dataset(&std::fs::read_to_string(path)?)?;
            let num_classes = header
                .map(|h| h.num_classes)
                .unwrap_or_else(|| graphs.iter().map(|g| g.label() + 1).max().unwrap_or(0));
            let split = match &cfg.split {
                SplitConfig::Size {
                    train_quantile,
                    eval_quantile,
                } => size_quantile_split(&graphs, *train_quantile, *eval_quantile, cfg.val_fraction, &mut rng)?,
                SplitConfig::None => random_split(graphs.len(), cfg.val_fraction, &mut rng)?,
                _ => return Err(Error::Config("covariate / concept splits need the motif generator".into())),
            };
            (graphs, split, num_classes)
        }
    };
    split.check(graphs.len())?;
    for (name, part) in [("train", &split.train), ("val", &split.val), ("test_id", &split.test_id), ("test_ood", &split.test_ood)] {
        if part.is_empty() {
            return Err(Error::Split(format!("{name} split is empty")));
        }
    }
    let input_dim = graphs[0].feature_dim();
    let mut hasher = Sha256::new();
    hasher.update(format_dataset(&graphs, num_classes)?.as_bytes());
    hasher.update(serde_json::to_string(&split)?.as_bytes());
    Ok(PreparedData {
        hash: hex(&hasher.finalize()),
        graphs,
        split,
        num_classes,
        input_dim,
    })
}

/// Everything needed to reproduce a run's predictions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: ExperimentConfig,
    pub seed: u64,
    /// One model, or the ensemble members.
    pub models: Vec<GnnModel>,
    pub temperature: Option<f64>,
    pub gep_tau: f64,
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), serde_json::to_string(self)?.as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let ckpt: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if ckpt.models.is_empty() {
            return Err(Error::Schema("checkpoint holds no model".into()));
        }
        for m in &ckpt.models {
            let expected = GnnModel::new(
                m.config.clone(),
                m.variant,
                m.input_dim,
                m.num_classes,
                &mut RngStream::new(0),
            )?;
            let shapes_match = expected.params.len() == m.params.len()
                && expected
                    .params
                    .iter()
                    .zip(m.params.iter())
                    .all(|(a, b)| a.name == b.name && a.value.shape() == b.value.shape());
            if !shapes_match || !m.params.all_finite() {
                return Err(Error::Schema("checkpoint parameters do not match the model architecture".into()));
            }
        }
        Ok(ckpt)
    }
}

/// `(confidence, predicted class)` per graph for a trained method.
pub fn predict(
    ckpt: &Checkpoint,
    anchors: Option<&FixedAnchorSet>,
    graphs: &[&Graph],
    stream: &str,
) -> Result<Vec<(f64, usize)>> {
    let model = &ckpt.models[0];
    let from_probs = |probs: Tensor| -> Vec<(f64, usize)> {
        probs
            .argmax_rows()
            .into_iter()
            .enumerate()
            .map(|(i, c)| (probs.row_slice(i)[c], c))
            .collect()
    };
    let from_summary = |s: Vec<PredictionSummary>| s.into_iter().map(|p| (p.confidence, p.predicted)).collect();
    Ok(match &ckpt.config.method {
        MethodConfig::Vanilla => from_probs(model.predict_probs(graphs)?),
        MethodConfig::Temp => {
            let t = ckpt
                .temperature
                .ok_or_else(|| Error::Schema("temperature checkpoint without T".into()))?;
            from_probs(apply_temperature(&model.logits_for(graphs, crate::model::AnchorFeed::None)?, t)?)
        }
        MethodConfig::Mcd { p, samples } => {
            let spec = McdSpec {
                p: *p,
                samples: *samples,
                sites: None,
            };
            let mut rng = RngStream::new(ckpt.seed).derive("mcd").derive(stream);
            from_summary(mcd_predict(model, graphs, &spec, &mut rng)?)
        }
        MethodConfig::DeepEns { .. } => from_summary(ensemble_predict(&ckpt.models, graphs)?),
        _ => {
            let anchors = anchors.ok_or_else(|| Error::Contract("anchored method needs an anchor set".into()))?;
            from_summary(infer_with_anchors(model, anchors, graphs, ckpt.config.confidence)?)
        }
    })
}

fn records(preds: &[(f64, usize)], graphs: &[&Graph], split: SplitTag) -> Vec<EvalRecord> {
    preds
        .iter()
        .zip(graphs)
        .map(|(&(c, p), g)| EvalRecord::new(c, p, g.label(), split))
        .collect()
}

/// Metrics from validation, test-id and test-ood records.
pub fn evaluate_records(val: &[EvalRecord], id: &[EvalRecord], ood: &[EvalRecord]) -> Result<(MetricsReport, f64)> {
    let tau = fit_gep_threshold(val)?.tau;
    let id_acc = accuracy(id)?;
    let ood_acc = accuracy(ood)?;
    let scores = |r: &[EvalRecord]| r.iter().map(|x| x.confidence).collect::<Vec<_>>();
    let report = MetricsReport {
        id_accuracy: id_acc,
        ood_accuracy: ood_acc,
        id_ece: ece(id, ECE_BINS)?,
        ood_ece: ece(ood, ECE_BINS)?,
        ood_auroc: auroc(&scores(id), &scores(ood))?,
        id_gep_mae: gep_error(id, id_acc, tau),
        ood_gep_mae: gep_error(ood, ood_acc, tau),
    };
    Ok((report, tau))
}

/// Trained models, optional temperature and optional anchors for one seed.
pub struct TrainedRun {
    pub models: Vec<GnnModel>,
    pub temperature: Option<f64>,
    pub anchors: Option<FixedAnchorSet>,
}

pub fn train_method(cfg: &ExperimentConfig, data: &PreparedData, seed: u64) -> Result<TrainedRun> {
    let root = RngStream::new(seed);
    let train = data.subset(&data.split.train);
    let val = data.subset(&data.split.val);
    let tc = |epochs: usize| TrainConfig {
        epochs,
        batch_size: cfg.train.batch_size,
        adam: crate::optim::AdamConfig {
            lr: cfg.train.lr,
            ..Default::default()
        },
    };
    let (d, c) = (data.input_dim, data.num_classes);
    let base = tc(cfg.train.epochs);
    let anchored = tc(cfg.train.epochs + cfg.train.anchor_extra_epochs);
    let mut temperature = None;
    let models = match &cfg.method {
        MethodConfig::Vanilla => vec![train_single(&cfg.model, &train, d, c, &base, &root)?],
        MethodConfig::Temp => {
            let m = train_single(&cfg.model, &train, d, c, &base, &root)?;
            let logits = m.logits_for(&val, crate::model::AnchorFeed::None)?;
            let labels: Vec<usize> = val.iter().map(|g| g.label()).collect();
            let t = fit_temperature(&logits, &labels)?;
            info!("seed {seed}: temperature {:.4} (val NLL {:.4} -> {:.4})", t.temperature, t.nll_before, t.nll_after);
            temperature = Some(t.temperature);
            vec![m]
        }
        MethodConfig::Mcd { p, .. } => {
            let mut mc = cfg.model.clone();
            mc.dropout = *p;
            vec![train_single(&mc, &train, d, c, &base, &root)?]
        }
        MethodConfig::DeepEns { members } => {
            let seeds: Vec<u64> = (0..*members as u64)
                .map(|j| root.derive_index("member", j).next_u64())
                .collect();
            train_ensemble_members(&seeds, &cfg.model, &train, d, c, &base)?
        }
        MethodConfig::GduqPretrained { head_epochs, .. } => {
            let vanilla = train_single(&cfg.model, &train, d, c, &base, &root)?;
            let mut m = convert_pretrained(&vanilla, &mut root.derive("head-init"))?;
            train_model(&mut m, &train, &tc(*head_epochs), AnchorTraining::Stochastic, &mut root.derive("head-train"))?;
            vec![m]
        }
        method => {
            let mut m = GnnModel::new(cfg.model.clone(), method.anchor_variant(), d, c, &mut root.derive("init"))?;
            train_model(&mut m, &train, &anchored, AnchorTraining::Stochastic, &mut root.derive("train"))?;
            vec![m]
        }
    };
    let anchors = match cfg.method.anchors() {
        Some(k) => Some(freeze_anchor_set(&models[0], &val, k, &mut root.derive("anchors"))?),
        None => None,
    };
    Ok(TrainedRun {
        models,
        temperature,
        anchors,
    })
}

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed-{seed}"))
}

/// Trains and evaluates one seed, writing checkpoint, anchors and
/// per-graph records under `seed_dir(out, seed)`.
pub fn run_seed(cfg: &ExperimentConfig, data: &PreparedData, seed: u64, out: &Path) -> Result<RunRecord> {
    let dir = seed_dir(out, seed);
    let base = RunRecord {
        config_hash: cfg.hash(),
        dataset_hash: data.hash.clone(),
        method: cfg.method.label(),
        seed,
        status: RunStatus::Ok,
        diagnostic: String::new(),
        checkpoint: format!("seed-{seed}/checkpoint.json"),
        metrics: None,
    };
    let trained = match train_method(cfg, data, seed) {
        Ok(t) => t,
        Err(e @ (Error::Diverged(_) | Error::NonFiniteGradient(_))) => {
            warn!("seed {seed} failed: {e}");
            return Ok(RunRecord {
                status: RunStatus::Failed,
                diagnostic: e.to_string(),
                checkpoint: String::new(),
                ..base
            });
        }
        Err(e) => return Err(e),
    };
    let mut ckpt = Checkpoint {
        config: cfg.clone(),
        seed,
        models: trained.models,
        temperature: trained.temperature,
        gep_tau: f64::NAN,
    };
    let anchors = trained.anchors.as_ref();
    let val = data.subset(&data.split.val);
    let id = data.subset(&data.split.test_id);
    let ood = data.subset(&data.split.test_ood);
    let val_recs = records(&predict(&ckpt, anchors, &val, "val")?, &val, SplitTag::Id);
    let id_recs = records(&predict(&ckpt, anchors, &id, "test-id")?, &id, SplitTag::Id);
    let ood_recs = records(&predict(&ckpt, anchors, &ood, "test-ood")?, &ood, SplitTag::Ood);
    let (metrics, tau) = evaluate_records(&val_recs, &id_recs, &ood_recs)?;
    ckpt.gep_tau = tau;

    std::fs::create_dir_all(&dir)?;
    ckpt.save(dir.join("checkpoint.json"))?;
    if let Some(a) = anchors {
        a.save(dir.join("anchors.json"))?;
    }
    let mut buf = Vec::new();
    write_records_csv(&[id_recs, ood_recs].concat(), &mut buf)?;
    write_atomic(&dir.join("records.csv"), &buf)?;
    Ok(RunRecord {
        metrics: Some(metrics),
        ..base
    })
}

/// Runs every seed (in parallel) and writes the report under the resolved
/// output directory. Wall times go to `timings.json`, outside the report.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    cfg.validate()?;
    let out = cfg.resolved_output();
    std::fs::create_dir_all(&out)?;
    let data = prepare_data(cfg)?;
    info!(
        "dataset {}: {} graphs (train {}, val {}, test-id {}, test-ood {})",
        &data.hash[..12],
        data.graphs.len(),
        data.split.train.len(),
        data.split.val.len(),
        data.split.test_id.len(),
        data.split.test_ood.len()
    );
    let results: Vec<(RunRecord, f64)> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let start = Instant::now();
            let rec = run_seed(cfg, &data, seed, &out)?;
            Ok((rec, start.elapsed().as_secs_f64()))
        })
        .collect::<Result<_>>()?;
    let (records, times): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    emit_report(&records, &out)?;
    let timings: Vec<serde_json::Value> = records
        .iter()
        .zip(&times)
        .map(|(r, t)| serde_json::json!({"seed": r.seed, "seconds": t}))
        .collect();
    write_atomic(&out.join("timings.json"), serde_json::to_string_pretty(&timings)?.as_bytes())?;
    Ok(records)
}

/// Recomputes a run's metrics from its checkpoint and anchors.
pub fn evaluate_checkpoint(ckpt: &Checkpoint, anchors: Option<&FixedAnchorSet>) -> Result<MetricsReport> {
    let data = prepare_data(&ckpt.config)?;
    let val = data.subset(&data.split.val);
    let id = data.subset(&data.split.test_id);
    let ood = data.subset(&data.split.test_ood);
    let val_recs = records(&predict(ckpt, anchors, &val, "val")?, &val, SplitTag::Id);
    let id_recs = records(&predict(ckpt, anchors, &id, "test-id")?, &id, SplitTag::Id);
    let ood_recs = records(&predict(ckpt, anchors, &ood, "test-ood")?, &ood, SplitTag::Ood);
    Ok(evaluate_records(&val_recs, &id_recs, &ood_recs)?.0)
}
