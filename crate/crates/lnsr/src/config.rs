//! `key=value` configuration grouped by `[section]` headers.
//!
//! ```text
//! [model]
//! embed_dim = 16
//! num_layers = 2
//!
//! [noise]
//! mode = standard
//! rel_magnitude = 0.05
//!
//! [regularizer]
//! mode = lnsr_standard
//! lambda = 0.2
//! ```
//!
//! Sections: `model`, `data`, `train`, `noise`, `regularizer`,
//! `experiment`. Unknown sections or keys are rejected.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use ini::Ini;
use lnsr_core::encoder::EncoderConfig;
use lnsr_core::noise::{Granularity, NoiseMode, RescaleRule};
use lnsr_core::objective::{Lambda, Mode, NormReduction};
use lnsr_core::trainer::TrainConfig;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataSource {
    Synthetic,
    Tsv,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub source: DataSource,
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub regression: bool,
    pub n_per_class: usize,
    pub num_classes: usize,
    pub seq_len: usize,
    pub margin: f64,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            train: None,
            dev: None,
            regression: false,
            n_per_class: 50,
            num_classes: 2,
            seq_len: 16,
            margin: 0.3,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepKind {
    InjectionLayer,
    MixRatio,
}

/// Settings of the diagnostic and multi-seed commands.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSettings {
    pub seeds: Vec<u64>,
    pub modes: Vec<Mode>,
    pub sweep: SweepKind,
    /// Empty means every layer (injection sweep) or the preset ratios.
    pub sweep_values: Vec<f64>,
    pub probe_size: usize,
    pub sigmas: Vec<f64>,
    pub mc_samples: usize,
    pub instances: usize,
    pub dim: usize,
    pub pca_samples: usize,
    pub pca_dim: usize,
    pub pca_k: usize,
    pub manifold_points: usize,
    pub curvature: f64,
    pub bench_reps: usize,
    pub checkpoint: Option<PathBuf>,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        Self {
            seeds: (0..10).collect(),
            modes: vec![Mode::Ft, Mode::LnsrStandard],
            sweep: SweepKind::InjectionLayer,
            sweep_values: Vec::new(),
            probe_size: lnsr_core::diagnostics::DEFAULT_PROBE_SIZE,
            sigmas: vec![0.1, 0.05, 0.01],
            mc_samples: 200_000,
            instances: 10,
            dim: 8,
            pca_samples: 10_000,
            pca_dim: 128,
            pca_k: 10,
            manifold_points: 10_000,
            curvature: 0.0,
            bench_reps: 5,
            checkpoint: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub model: EncoderConfig,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub experiment: ExperimentSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mut train = TrainConfig::default();
        train.reg.lambda = Lambda::Scalar(0.2);
        train.epochs = 20;
        Self {
            model: EncoderConfig::default(),
            data: DataConfig::default(),
            train,
            experiment: ExperimentSettings::default(),
        }
    }
}

fn bad(section: &str, key: &str, reason: impl std::fmt::Display) -> Error {
    Error::Config(format!("[{section}] {key}: {reason}"))
}

fn num<T: FromStr>(section: &str, key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| bad(section, key, format!("cannot parse {v:?}")))
}

fn boolean(section: &str, key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(bad(section, key, format!("expected true or false, got {v:?}"))),
    }
}

fn list<T: FromStr>(section: &str, key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| num(section, key, s))
        .collect()
}

fn mode(section: &str, key: &str, v: &str) -> Result<Mode> {
    Mode::parse(v).ok_or_else(|| bad(section, key, format!("unknown mode {v:?}")))
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let ini = Ini::load_from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut cfg = Self::default();
        for (section, props) in ini.iter() {
            let section = section.unwrap_or("");
            for (key, value) in props.iter() {
                cfg.set(section, key, value.trim())?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, s: &str, k: &str, v: &str) -> Result<()> {
        let m = &mut self.model;
        let d = &mut self.data;
        let t = &mut self.train;
        let e = &mut self.experiment;
        match (s, k) {
            ("model", "vocab_size") => m.vocab_size = num(s, k, v)?,
            ("model", "embed_dim") => m.embed_dim = num(s, k, v)?,
            ("model", "num_layers") => m.num_layers = num(s, k, v)?,
            ("model", "num_heads") => m.num_heads = num(s, k, v)?,
            ("model", "ffn_dim") => m.ffn_dim = num(s, k, v)?,
            ("model", "max_seq_len") => m.max_seq_len = num(s, k, v)?,
            ("model", "dropout_rate") => m.dropout_rate = num(s, k, v)?,
            ("model", "pre_norm") => m.pre_norm = boolean(s, k, v)?,

            ("data", "source") => {
                d.source = match v {
                    "synthetic" => DataSource::Synthetic,
                    "tsv" => DataSource::Tsv,
                    _ => return Err(bad(s, k, "expected synthetic or tsv")),
                }
            }
            ("data", "train") => d.train = Some(PathBuf::from(v)),
            ("data", "dev") => d.dev = Some(PathBuf::from(v)),
            ("data", "label_kind") => {
                d.regression = match v {
                    "class" => false,
                    "regression" => true,
                    _ => return Err(bad(s, k, "expected class or regression")),
                }
            }
            ("data", "n_per_class") => d.n_per_class = num(s, k, v)?,
            ("data", "num_classes") => d.num_classes = num(s, k, v)?,
            ("data", "seq_len") => d.seq_len = num(s, k, v)?,
            ("data", "margin") => d.margin = num(s, k, v)?,
            ("data", "seed") => d.seed = num(s, k, v)?,

            ("train", "lr") => t.lr = num(s, k, v)?,
            ("train", "batch_size") => t.batch_size = num(s, k, v)?,
            ("train", "beta1") => t.beta1 = num(s, k, v)?,
            ("train", "beta2") => t.beta2 = num(s, k, v)?,
            ("train", "adam_eps") => t.adam_eps = num(s, k, v)?,
            ("train", "weight_decay") => t.weight_decay = num(s, k, v)?,
            ("train", "warmup_ratio") => t.warmup_ratio = num(s, k, v)?,
            ("train", "epochs") => t.epochs = num(s, k, v)?,
            ("train", "seed") => t.seed = num(s, k, v)?,
            ("train", "dropout_in_perturbed") => t.dropout_in_perturbed = boolean(s, k, v)?,

            ("noise", "mode") => {
                t.noise.mode = match v {
                    "standard" => NoiseMode::Standard,
                    "in_manifold" => NoiseMode::InManifold,
                    "none" => NoiseMode::None,
                    _ => return Err(bad(s, k, "expected standard, in_manifold or none")),
                }
            }
            ("noise", "sigma") => t.noise.sigma = num(s, k, v)?,
            ("noise", "rel_magnitude") => t.noise.rel_magnitude = if v == "none" { None } else { Some(num(s, k, v)?) },
            ("noise", "injection_layer") => {
                t.noise.injection_layer = num(s, k, v)?;
                t.reg.injection_layer = t.noise.injection_layer;
            }
            ("noise", "granularity") => {
                t.noise.granularity = match v {
                    "per_token" => Granularity::PerToken,
                    "per_sequence" => Granularity::PerSequence,
                    _ => return Err(bad(s, k, "expected per_token or per_sequence")),
                }
            }
            ("noise", "rule") => {
                t.noise.rule = match v {
                    "norm_ratio" => RescaleRule::NormRatio,
                    "squared_ratio" => RescaleRule::SquaredRatio,
                    _ => return Err(bad(s, k, "expected norm_ratio or squared_ratio")),
                }
            }
            ("noise", "neighbors") => t.noise.neighbors = num(s, k, v)?,

            ("regularizer", "mode") => t.reg.mode = mode(s, k, v)?,
            ("regularizer", "lambda") => {
                let values: Vec<f64> = list(s, k, v)?;
                t.reg.lambda = match values.as_slice() {
                    [one] => Lambda::Scalar(*one),
                    [] => return Err(bad(s, k, "empty")),
                    many => Lambda::PerLayer(many.to_vec()),
                }
            }
            ("regularizer", "norm_reduction") => {
                t.reg.norm_reduction = match v {
                    "sum_squares" => NormReduction::SumSquares,
                    "mean_squares" => NormReduction::MeanSquares,
                    _ => return Err(bad(s, k, "expected sum_squares or mean_squares")),
                }
            }

            ("experiment", "seeds") => e.seeds = list(s, k, v)?,
            ("experiment", "modes") => {
                e.modes = v
                    .split(',')
                    .map(str::trim)
                    .filter(|x| !x.is_empty())
                    .map(|x| mode(s, k, x))
                    .collect::<Result<_>>()?
            }
            ("experiment", "sweep") => {
                e.sweep = match v {
                    "injection_layer" => SweepKind::InjectionLayer,
                    "mix_ratio" => SweepKind::MixRatio,
                    _ => return Err(bad(s, k, "expected injection_layer or mix_ratio")),
                }
            }
            ("experiment", "sweep_values") => e.sweep_values = list(s, k, v)?,
            ("experiment", "probe_size") => e.probe_size = num(s, k, v)?,
            ("experiment", "sigmas") => e.sigmas = list(s, k, v)?,
            ("experiment", "mc_samples") => e.mc_samples = num(s, k, v)?,
            ("experiment", "instances") => e.instances = num(s, k, v)?,
            ("experiment", "dim") => e.dim = num(s, k, v)?,
            ("experiment", "pca_samples") => e.pca_samples = num(s, k, v)?,
            ("experiment", "pca_dim") => e.pca_dim = num(s, k, v)?,
            ("experiment", "pca_k") => e.pca_k = num(s, k, v)?,
            ("experiment", "manifold_points") => e.manifold_points = num(s, k, v)?,
            ("experiment", "curvature") => e.curvature = num(s, k, v)?,
            ("experiment", "bench_reps") => e.bench_reps = num(s, k, v)?,
            ("experiment", "checkpoint") => e.checkpoint = Some(PathBuf::from(v)),
            _ => return Err(bad(s, k, "unknown key")),
        }
        Ok(())
    }

    /// Overrides every seed that drives training and sampling.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.train.seed = seed;
        self.train.noise.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let mut model = self.model.clone();
        model.num_outputs = if self.data.regression {
            1
        } else {
            self.data.num_classes.max(1)
        };
        model.validate()?;
        self.train.validate(&model)?;
        if self.data.source == DataSource::Tsv && (self.data.train.is_none() || self.data.dev.is_none()) {
            return Err(Error::Config("[data] tsv source needs train and dev paths".into()));
        }
        let e = &self.experiment;
        if e.probe_size == 0 {
            return Err(Error::Config("[experiment] probe_size must be positive".into()));
        }
        if e.sigmas.iter().any(|s| s.is_nan() || *s <= 0.0) {
            return Err(Error::Config("[experiment] sigmas must be positive".into()));
        }
        if e.bench_reps < 5 {
            return Err(Error::Config("[experiment] bench_reps must be at least 5".into()));
        }
        Ok(())
    }
}
