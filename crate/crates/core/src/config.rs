//! Experiment configuration files.
//!
//! Grammar (one statement per line):
//!
//! ```text
//! file     := line*
//! line     := blank | comment | section | pair
//! comment  := '#' any*
//! section  := '[' name ']'
//! pair     := key '=' value
//! ```
//!
//! Keys are only legal inside a section. Lists are comma separated. Every
//! key has a default except `method.name`. Sections and keys:
//!
//! | section   | keys |
//! |-----------|------|
//! | `dataset` | `source` (`motif` or `file`), `path`, `n_graphs`, `bases`, `motifs`, `basis_min`, `basis_max`, `feature_dim`, `feature_noise`, `seed` |
//! | `split`   | `kind` (`none`, `size`, `covariate`, `concept`), `train_quantile`, `eval_quantile`, `held_out`, `rho`, `val_fraction` |
//! | `model`   | `backbone` (`gcn`, `gin`), `layers`, `hidden`, `readout` (`mean`, `sum`), `mlp_depth`, `gin_epsilon`, `dropout` |
//! | `train`   | `epochs`, `lr`, `batch_size`, `anchor_extra_epochs` |
//! | `method`  | `name`, `layer`, `k`, `m`, `s`, `p`, `confidence` (`modulated`, `mean`), `head_epochs` |
//! | `run`     | `seeds`, `output` |
//!
//! Method names: `vanilla`, `temp`, `mcd`, `deep_ens`, `gduq_input`,
//! `gduq_mpnn`, `gduq_readout`, `gduq_pretrained`. `gduq_mpnn` requires
//! `layer`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::anchoring::ConfidenceSource;
use crate::error::{Error, Result};
use crate::model::{AnchorVariant, Backbone, GnnConfig, ReadoutKind};
use crate::motif::{BasisKind, MotifKind, MotifShift, MotifSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DatasetSource {
    Motif {
        n_graphs: usize,
        bases: Vec<BasisKind>,
        motifs: Vec<MotifKind>,
        basis_size: (usize, usize),
        feature_dim: usize,
        feature_noise: f64,
    },
    File {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub source: DatasetSource,
    /// Seed for data generation and splitting; fixed across training seeds.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SplitConfig {
    None,
    Size { train_quantile: f64, eval_quantile: f64 },
    Covariate { held_out: Vec<BasisKind> },
    Concept { rho: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Extra epochs given to anchored variants.
    pub anchor_extra_epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum MethodConfig {
    Vanilla,
    Temp,
    Mcd { p: f64, samples: usize },
    DeepEns { members: usize },
    GduqInput { k: usize },
    GduqMpnn { layer: usize, k: usize },
    GduqReadout { k: usize },
    GduqPretrained { k: usize, head_epochs: usize },
}

impl MethodConfig {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Vanilla => "vanilla",
            Self::Temp => "temp",
            Self::Mcd { .. } => "mcd",
            Self::DeepEns { .. } => "deep_ens",
            Self::GduqInput { .. } => "gduq_input",
            Self::GduqMpnn { .. } => "gduq_mpnn",
            Self::GduqReadout { .. } => "gduq_readout",
            Self::GduqPretrained { .. } => "gduq_pretrained",
        }
    }

    /// Name with the anchoring layer for `gduq_mpnn`, e.g. `gduq_mpnn(2)`.
    pub fn label(&self) -> String {
        match self {
            Self::GduqMpnn { layer, .. } => format!("gduq_mpnn({layer})"),
            other => other.name().to_string(),
        }
    }

    pub fn anchor_variant(&self) -> AnchorVariant {
        match self {
            Self::GduqInput { .. } => AnchorVariant::Input,
            Self::GduqMpnn { layer, .. } => AnchorVariant::Mpnn { layer: *layer },
            Self::GduqReadout { .. } => AnchorVariant::Readout,
            Self::GduqPretrained { .. } => AnchorVariant::PretrainedReadout,
            _ => AnchorVariant::None,
        }
    }

    pub fn anchors(&self) -> Option<usize> {
        match self {
            Self::GduqInput { k } | Self::GduqMpnn { k, .. } | Self::GduqReadout { k } => Some(*k),
            Self::GduqPretrained { k, .. } => Some(*k),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub split: SplitConfig,
    pub val_fraction: f64,
    pub model: GnnConfig,
    pub train: TrainSettings,
    pub method: MethodConfig,
    pub confidence: ConfidenceSource,
    pub seeds: Vec<u64>,
    pub output: PathBuf,
}

/// Environment variable that relocates relative output directories.
pub const OUTPUT_ROOT_ENV: &str = "GDUQ_OUTPUT_ROOT";

const KEYS: &[(&str, &[&str])] = &[
    (
        "dataset",
        &[
            "source", "path", "n_graphs", "bases", "motifs", "basis_min", "basis_max", "feature_dim",
            "feature_noise", "seed",
        ],
    ),
    ("split", &["kind", "train_quantile", "eval_quantile", "held_out", "rho", "val_fraction"]),
    ("model", &["backbone", "layers", "hidden", "readout", "mlp_depth", "gin_epsilon", "dropout"]),
    ("train", &["epochs", "lr", "batch_size", "anchor_extra_epochs"]),
    ("method", &["name", "layer", "k", "m", "s", "p", "confidence", "head_epochs"]),
    ("run", &["seeds", "output"]),
];

struct Entries {
    map: BTreeMap<(String, String), (String, usize)>,
}

impl Entries {
    fn raw(&self, section: &str, key: &str) -> Option<(&str, usize)> {
        self.map
            .get(&(section.to_string(), key.to_string()))
            .map(|(v, l)| (v.as_str(), *l))
    }

    fn str_or<'a>(&'a self, section: &str, key: &str, default: &'a str) -> &'a str {
        self.raw(section, key).map_or(default, |(v, _)| v)
    }

    fn parsed<T: std::str::FromStr>(&self, section: &str, key: &str, default: T) -> Result<T> {
        match self.raw(section, key) {
            None => Ok(default),
            Some((v, line)) => v.parse().map_err(|_| Error::Parse {
                line,
                msg: format!("{section}.{key}: cannot parse `{v}`"),
            }),
        }
    }

    fn list<T>(&self, section: &str, key: &str, default: Vec<T>, f: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
        match self.raw(section, key) {
            None => Ok(default),
            Some((v, line)) => v
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| {
                    f(s).map_err(|e| Error::Parse {
                        line,
                        msg: format!("{section}.{key}: {e}"),
                    })
                })
                .collect(),
        }
    }
}

fn tokenize(text: &str) -> Result<Entries> {
    let mut map = BTreeMap::new();
    let mut section: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest.strip_suffix(']').ok_or_else(|| Error::Parse {
                line: line_no,
                msg: format!("unterminated section header `{line}`"),
            })?;
            let name = name.trim();
            if !KEYS.iter().any(|(s, _)| *s == name) {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("unknown section `{name}`"),
                });
            }
            section = Some(name.to_string());
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: line_no,
            msg: format!("expected `key = value`, got `{line}`"),
        })?;
        let key = key.trim();
        let sec = section.as_deref().ok_or_else(|| Error::Parse {
            line: line_no,
            msg: format!("key `{key}` outside any section"),
        })?;
        let allowed = KEYS.iter().find(|(s, _)| *s == sec).map(|(_, k)| *k).unwrap_or(&[]);
        if !allowed.contains(&key) {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("unknown key `{key}` in [{sec}]"),
            });
        }
        if map
            .insert((sec.to_string(), key.to_string()), (value.trim().to_string(), line_no))
            .is_some()
        {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("duplicate key `{sec}.{key}`"),
            });
        }
    }
    Ok(Entries { map })
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let e = tokenize(text)?;
        let defaults = MotifSpec::default();

        let source = match e.str_or("dataset", "source", "motif") {
            "motif" => DatasetSource::Motif {
                n_graphs: e.parsed("dataset", "n_graphs", 400)?,
                bases: e.list("dataset", "bases", defaults.bases.clone(), BasisKind::parse)?,
                motifs: e.list("dataset", "motifs", defaults.motifs.clone(), MotifKind::parse)?,
                basis_size: (
                    e.parsed("dataset", "basis_min", defaults.basis_size.0)?,
                    e.parsed("dataset", "basis_max", defaults.basis_size.1)?,
                ),
                feature_dim: e.parsed("dataset", "feature_dim", defaults.feature_dim)?,
                feature_noise: e.parsed("dataset", "feature_noise", defaults.feature_noise)?,
            },
            "file" => DatasetSource::File {
                path: e
                    .raw("dataset", "path")
                    .map(|(v, _)| PathBuf::from(v))
                    .ok_or_else(|| Error::Config("dataset.source = file needs dataset.path".into()))?,
            },
            other => return Err(Error::Config(format!("unknown dataset source `{other}`"))),
        };
        let dataset = DatasetConfig {
            source,
            seed: e.parsed("dataset", "seed", 0)?,
        };

        let split = match e.str_or("split", "kind", "none") {
            "none" => SplitConfig::None,
            "size" => SplitConfig::Size {
                train_quantile: e.parsed("split", "train_quantile", 0.5)?,
                eval_quantile: e.parsed("split", "eval_quantile", 0.9)?,
            },
            "covariate" => SplitConfig::Covariate {
                held_out: e.list("split", "held_out", vec![BasisKind::Star], BasisKind::parse)?,
            },
            "concept" => SplitConfig::Concept {
                rho: e.parsed("split", "rho", 0.9)?,
            },
            other => return Err(Error::Config(format!("unknown split kind `{other}`"))),
        };

        let md = GnnConfig::default();
        let model = GnnConfig {
            backbone: match e.str_or("model", "backbone", "gin") {
                "gin" => Backbone::Gin,
                "gcn" => Backbone::Gcn,
                other => return Err(Error::Config(format!("unknown backbone `{other}`"))),
            },
            num_layers: e.parsed("model", "layers", md.num_layers)?,
            hidden_dim: e.parsed("model", "hidden", md.hidden_dim)?,
            readout: match e.str_or("model", "readout", "mean") {
                "mean" => ReadoutKind::Mean,
                "sum" => ReadoutKind::Sum,
                other => return Err(Error::Config(format!("unknown readout `{other}`"))),
            },
            mlp_depth: e.parsed("model", "mlp_depth", md.mlp_depth)?,
            gin_epsilon: e.parsed("model", "gin_epsilon", md.gin_epsilon)?,
            dropout: e.parsed("model", "dropout", md.dropout)?,
        };

        let train = TrainSettings {
            epochs: e.parsed("train", "epochs", 100)?,
            lr: e.parsed("train", "lr", 1e-3)?,
            batch_size: e.parsed("train", "batch_size", 32)?,
            anchor_extra_epochs: e.parsed("train", "anchor_extra_epochs", 50)?,
        };

        let k = || e.parsed("method", "k", 10usize);
        let name = e
            .raw("method", "name")
            .map(|(v, _)| v)
            .ok_or_else(|| Error::Config("method.name is required".into()))?;
        let method = match name {
            "vanilla" => MethodConfig::Vanilla,
            "temp" => MethodConfig::Temp,
            "mcd" => MethodConfig::Mcd {
                p: e.parsed("method", "p", 0.1)?,
                samples: e.parsed("method", "s", 10)?,
            },
            "deep_ens" => MethodConfig::DeepEns {
                members: e.parsed("method", "m", 5)?,
            },
            "gduq_input" => MethodConfig::GduqInput { k: k()? },
            "gduq_mpnn" => MethodConfig::GduqMpnn {
                layer: e
                    .raw("method", "layer")
                    .ok_or_else(|| Error::Config("gduq_mpnn needs method.layer".into()))?
                    .0
                    .parse()
                    .map_err(|_| Error::Config("method.layer must be a positive integer".into()))?,
                k: k()?,
            },
            "gduq_readout" => MethodConfig::GduqReadout { k: k()? },
            "gduq_pretrained" => MethodConfig::GduqPretrained {
                k: k()?,
                head_epochs: e.parsed("method", "head_epochs", train.epochs)?,
            },
            other => return Err(Error::Config(format!("unknown method `{other}`"))),
        };
        let confidence = match e.str_or("method", "confidence", "modulated") {
            "modulated" => ConfidenceSource::Modulated,
            "mean" => ConfidenceSource::Mean,
            other => return Err(Error::Config(format!("unknown confidence source `{other}`"))),
        };

        let cfg = Self {
            dataset,
            split,
            val_fraction: e.parsed("split", "val_fraction", 0.1)?,
            model,
            train,
            method,
            confidence,
            seeds: e.list("run", "seeds", vec![0, 1, 2], |s| {
                s.parse().map_err(|_| Error::Config(format!("bad seed `{s}`")))
            })?,
            output: PathBuf::from(e.str_or("run", "output", "runs/experiment")),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg = Self::parse(&std::fs::read_to_string(path)?)?;
        // Dataset paths are relative to the config file.
        if let DatasetSource::File { path: data } = &mut cfg.dataset.source {
            if data.is_relative() {
                if let Some(dir) = path.parent() {
                    *data = dir.join(&*data);
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("run.seeds must not be empty".into()));
        }
        self.model.validate()?;
        if self.train.epochs == 0 || self.train.batch_size == 0 || !(self.train.lr > 0.0) {
            return Err(Error::Config("train.epochs, train.batch_size and train.lr must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) || self.val_fraction == 0.0 {
            return Err(Error::Config(format!("val_fraction {} not in (0, 1)", self.val_fraction)));
        }
        match &self.method {
            MethodConfig::GduqMpnn { layer, .. } if *layer == 0 || *layer > self.model.num_layers => {
                return Err(Error::Config(format!(
                    "method.layer {layer} outside 1..={}",
                    self.model.num_layers
                )))
            }
            MethodConfig::Mcd { p, samples } if !(*p > 0.0 && *p < 1.0) || *samples == 0 => {
                return Err(Error::Config(format!("mcd needs 0 < p < 1 and s >= 1 (p = {p}, s = {samples})")))
            }
            MethodConfig::DeepEns { members } if *members < 2 => {
                return Err(Error::Config(format!("deep_ens needs m >= 2, got {members}")))
            }
            _ => {}
        }
        if self.method.anchors() == Some(0) {
            return Err(Error::Config("method.k must be >= 1".into()));
        }
        match (&self.dataset.source, &self.split) {
            (DatasetSource::File { .. }, SplitConfig::Covariate { .. } | SplitConfig::Concept { .. }) => {
                Err(Error::Config("covariate / concept splits need the motif generator".into()))
            }
            (DatasetSource::Motif { .. }, _) => self.motif_spec().expect("motif source").validate(),
            _ => Ok(()),
        }
    }

    /// Generator spec for motif datasets.
    pub fn motif_spec(&self) -> Option<MotifSpec> {
        let DatasetSource::Motif {
            bases,
            motifs,
            basis_size,
            feature_dim,
            feature_noise,
            ..
        } = &self.dataset.source
        else {
            return None;
        };
        let shift = match &self.split {
            SplitConfig::None => MotifShift::None,
            SplitConfig::Size {
                train_quantile,
                eval_quantile,
            } => MotifShift::Size {
                train_quantile: *train_quantile,
                eval_quantile: *eval_quantile,
            },
            SplitConfig::Covariate { held_out } => MotifShift::Covariate {
                held_out: held_out.clone(),
            },
            SplitConfig::Concept { rho } => MotifShift::Concept { rho: *rho },
        };
        Some(MotifSpec {
            bases: bases.clone(),
            motifs: motifs.clone(),
            basis_size: *basis_size,
            shift,
            feature_dim: *feature_dim,
            feature_noise: *feature_noise,
            val_fraction: self.val_fraction,
        })
    }

    /// Hex SHA-256 of the canonical form of every field except the output
    /// directory. Independent of key order and of omitted-vs-default keys.
    pub fn hash(&self) -> String {
        let mut canon = self.clone();
        canon.output = PathBuf::new();
        let json = serde_json::to_string(&canon).expect("config serialises");
        hex(&Sha256::digest(json.as_bytes()))
    }

    /// Output directory with [`OUTPUT_ROOT_ENV`] applied to relative paths.
    pub fn resolved_output(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(root) if self.output.is_relative() => PathBuf::from(root).join(&self.output),
            _ => self.output.clone(),
        }
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
