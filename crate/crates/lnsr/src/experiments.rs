//! Command implementations. Each returns the tables it produced; the
//! multi-seed commands also stream per-seed rows to disk as runs finish.

use std::path::{Path, PathBuf};
use std::time::Instant;

use lnsr_core::data::{synth_classification, synth_manifold, LabelKind, TextDataset};
use lnsr_core::diagnostics::{
    error_ratio_curve, manifold_noise_batch, pca_noise_spectrum, sensitivity_sweep, standard_noise_batch, NoiseSource,
    Sweep, MIX_RATIO_PRESETS,
};
use lnsr_core::encoder::{EncoderConfig, EncoderModel};
use lnsr_core::rng::{self, Rng, Stream};
use lnsr_core::theory::{cross_term_mc, mc_noise_stability, taylor_report, taylor_terms, SmoothNet, TaylorReport};
use lnsr_core::trainer::{run_training, MultiSeedReport, RunResult, TrainConfig};
use lnsr_core::Tensor;

use crate::bench::{bench_complexity, BenchParams};
use crate::config::{DataSource, ExperimentConfig, SweepKind};
use crate::error::{Error, Result};
use crate::formats::{load_checkpoint, save_checkpoint};
use crate::report::{output_path, RowSink, Table, Value};

/// Reads a `label<TAB>text` file.
pub fn load_tsv(
    path: &Path,
    kind: LabelKind,
    vocab: Option<&lnsr_core::data::Vocab>,
    max_len: usize,
) -> Result<TextDataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    lnsr_core::data::parse_tsv(&text, kind, vocab, max_len).map_err(|e| match e {
        lnsr_core::Error::Parse { line, reason } => Error::format(path, format!("line {line}: {reason}")),
        other => other.into(),
    })
}

/// Train and dev splits plus the model config sized to them.
pub fn load_data(cfg: &ExperimentConfig) -> Result<(EncoderConfig, TextDataset, TextDataset)> {
    let d = &cfg.data;
    let mut model = cfg.model.clone();
    let (train, dev) = match d.source {
        DataSource::Synthetic => synth_classification(
            d.n_per_class,
            d.num_classes,
            d.seq_len.min(model.max_seq_len),
            model.vocab_size,
            d.margin,
            d.seed,
        )?,
        DataSource::Tsv => {
            let kind = if d.regression {
                LabelKind::Regression
            } else {
                LabelKind::Class
            };
            let train_path = d
                .train
                .as_deref()
                .ok_or_else(|| Error::Config("[data] train missing".into()))?;
            let dev_path = d
                .dev
                .as_deref()
                .ok_or_else(|| Error::Config("[data] dev missing".into()))?;
            let train = load_tsv(train_path, kind, None, model.max_seq_len)?;
            let dev = load_tsv(dev_path, kind, Some(&train.vocab), model.max_seq_len)?;
            model.vocab_size = train.vocab.len();
            (train, dev)
        }
    };
    model.num_outputs = train.num_outputs();
    Ok((model, train, dev))
}

fn timed_run(
    model: &EncoderConfig,
    train: &TextDataset,
    dev: &TextDataset,
    cfg: &TrainConfig,
) -> Result<(RunResult, EncoderModel)> {
    let start = Instant::now();
    let trained = run_training(model, train, dev, cfg)?;
    let mut result = trained.result;
    result.wall_time_s = start.elapsed().as_secs_f64();
    Ok((result, trained.model))
}

pub const EPOCH_COLUMNS: [&str; 6] = [
    "epoch",
    "train_loss",
    "reg_term",
    "train_metric",
    "dev_metric",
    "fallbacks",
];
pub const RUN_COLUMNS: [&str; 7] = [
    "mode",
    "seed",
    "final_train_metric",
    "final_dev_metric",
    "generalization_gap",
    "epochs",
    "wall_time_s",
];

fn run_row(r: &RunResult) -> Vec<Value> {
    vec![
        r.config.reg.mode.name().into(),
        r.config.seed.into(),
        r.final_train_metric.into(),
        r.final_dev_metric.into(),
        r.generalization_gap.into(),
        r.epochs.len().into(),
        r.wall_time_s.into(),
    ]
}

/// Per-epoch table and one-row summary of a single run.
pub fn train_tables(r: &RunResult) -> (Table, Table) {
    let mut epochs = Table::new("train", &EPOCH_COLUMNS);
    for e in &r.epochs {
        epochs.push(vec![
            e.epoch.into(),
            e.train_loss.into(),
            e.reg_term.into(),
            e.train_metric.into(),
            e.dev_metric.into(),
            e.fallbacks.into(),
        ]);
    }
    let mut summary = Table::new("train-summary", &RUN_COLUMNS);
    summary.push(run_row(r));
    (epochs, summary)
}

pub const SUMMARY_COLUMNS: [&str; 9] = [
    "setting", "value", "runs", "dev_mean", "dev_std", "dev_max", "gap_mean", "gap_std", "gap_max",
];

fn summary_row(setting: &str, value: Value, r: &MultiSeedReport) -> Vec<Value> {
    vec![
        setting.into(),
        value,
        r.runs.len().into(),
        r.dev.mean.into(),
        r.dev.std.into(),
        r.dev.max.into(),
        r.gap.mean.into(),
        r.gap.std.into(),
        r.gap.max.into(),
    ]
}

/// Multi-seed statistics for each configured mode. Per-seed rows go to
/// `sink` as soon as each run completes.
pub fn gap_report(cfg: &ExperimentConfig, mut sink: Option<&mut RowSink>) -> Result<(Vec<MultiSeedReport>, Table)> {
    let (model, train, dev) = load_data(cfg)?;
    let seeds = &cfg.experiment.seeds;
    if seeds.len() < 2 {
        return Err(Error::Config("[experiment] seeds needs at least two entries".into()));
    }
    let mut table = Table::new("gap-report", &SUMMARY_COLUMNS);
    let mut reports = Vec::new();
    for &mode in &cfg.experiment.modes {
        let mut template = cfg.train.clone();
        template.reg.mode = mode;
        let mut runs = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let run_cfg = TrainConfig {
                seed,
                ..template.clone()
            };
            let (run, _) = timed_run(&model, &train, &dev, &run_cfg)?;
            if let Some(s) = sink.as_deref_mut() {
                s.push(&run_row(&run))?;
            }
            runs.push(run);
        }
        let report = MultiSeedReport::from_runs(seeds.clone(), runs)?;
        table.push(summary_row("mode", mode.name().into(), &report));
        reports.push(report);
    }
    Ok((reports, table))
}

pub fn sweep(cfg: &ExperimentConfig) -> Result<Table> {
    let (model, train, dev) = load_data(cfg)?;
    let e = &cfg.experiment;
    let sweep = match e.sweep {
        SweepKind::InjectionLayer if e.sweep_values.is_empty() => {
            Sweep::InjectionLayers((1..=model.num_layers).collect())
        }
        SweepKind::InjectionLayer => Sweep::InjectionLayers(e.sweep_values.iter().map(|v| *v as usize).collect()),
        SweepKind::MixRatio if e.sweep_values.is_empty() => Sweep::MixRatios(MIX_RATIO_PRESETS.to_vec()),
        SweepKind::MixRatio => Sweep::MixRatios(e.sweep_values.clone()),
    };
    let rows = sensitivity_sweep(&model, &train, &dev, &cfg.train, &sweep, &e.seeds)?;
    let mut table = Table::new("sweep", &SUMMARY_COLUMNS);
    for row in &rows {
        table.push(summary_row(&row.setting, row.value.into(), &row.report));
    }
    Ok(table)
}

fn random_quadratic(d: usize, rng: &mut Rng) -> (Vec<f64>, Tensor) {
    let j = (0..d).map(|_| rng::standard_normal(rng)).collect();
    let mut h = vec![0.0; d * d];
    for a in 0..d {
        for b in a..d {
            let v = rng::standard_normal(rng);
            h[a * d + b] = v;
            h[b * d + a] = v;
        }
    }
    (j, Tensor::new(vec![d, d], h).expect("square"))
}

fn quadratic_eval(j: &[f64], h: &Tensor, x: &[f64]) -> f64 {
    let d = j.len();
    let hd = h.data();
    let mut q = 0.0;
    for a in 0..d {
        let row: f64 = (0..d).map(|b| hd[a * d + b] * x[b]).sum();
        q += x[a] * row;
    }
    j.iter().zip(x).map(|(p, v)| p * v).sum::<f64>() + 0.5 * q
}

/// Expansion report for `f(x) = Jx + ½xᵀHx` at the origin with the exact
/// `J` and `H`.
pub fn quadratic_report(j: &[f64], h: &Tensor, sigma: f64, n: usize, rng: &mut Rng) -> Result<TaylorReport> {
    let terms = taylor_terms(j, h, sigma)?;
    let origin = vec![0.0; j.len()];
    let mc = mc_noise_stability(|x| quadratic_eval(j, h, x), &origin, sigma, n, rng)?;
    let cross = cross_term_mc(j, h, sigma, n, rng)?;
    Ok(TaylorReport {
        sigma,
        mc_estimate: mc.mean,
        mc_se: mc.std_err,
        r_j: terms.r_j,
        r_h_paper: terms.r_h_paper,
        r_h_exact: terms.r_h_exact,
        r_jh_mc: 2.0 * cross.mean,
        claim14_value: terms.claim14_value,
    })
}

/// Random quadratics plus one smooth two-layer network, at every sigma.
pub fn verify_claim1(cfg: &ExperimentConfig) -> Result<Table> {
    let e = &cfg.experiment;
    let mut columns = vec!["function", "instance"];
    columns.extend(TaylorReport::COLUMNS);
    columns.extend(["exact_z", "jacobian_gap"]);
    let mut table = Table::new("verify-claim1", &columns);
    let mut rng = rng::stream(cfg.train.seed, Stream::Probe);
    let push = |table: &mut Table, name: &str, i: usize, r: &TaylorReport| {
        let mut row: Vec<Value> = vec![name.into(), i.into()];
        row.extend(r.values().iter().map(|v| Value::from(*v)));
        let z = (r.mc_estimate - r.r_j - r.r_h_exact) / r.mc_se;
        row.push(z.into());
        row.push(((r.mc_estimate - r.r_j).abs() / r.mc_estimate).into());
        table.push(row);
    };
    for i in 0..e.instances {
        let (j, h) = random_quadratic(e.dim, &mut rng);
        for &sigma in &e.sigmas {
            let r = quadratic_report(&j, &h, sigma, e.mc_samples, &mut rng)?;
            push(&mut table, "quadratic", i, &r);
        }
    }
    let net = SmoothNet::random(e.dim, 16, 0.8, &mut rng);
    let x: Vec<f64> = (0..e.dim).map(|_| 0.3 * rng::standard_normal(&mut rng)).collect();
    for &sigma in &e.sigmas {
        let mut crn = rng::stream(cfg.train.seed, Stream::Generator);
        let r = taylor_report(|p| net.eval(p), &x, sigma, e.mc_samples, &mut crn)?;
        push(&mut table, "smooth_net", 0, &r);
    }
    Ok(table)
}

pub fn cross_term(cfg: &ExperimentConfig) -> Result<Table> {
    let e = &cfg.experiment;
    let mut table = Table::new(
        "cross-term",
        &["instance", "sigma", "mean", "std_err", "z", "within_3se"],
    );
    let mut rng = rng::stream(cfg.train.seed, Stream::Probe);
    for i in 0..e.instances {
        let (j, h) = random_quadratic(e.dim, &mut rng);
        for &sigma in &e.sigmas {
            let est = cross_term_mc(&j, &h, sigma, e.mc_samples, &mut rng)?;
            table.push(vec![
                i.into(),
                sigma.into(),
                est.mean.into(),
                est.std_err.into(),
                (est.mean / est.std_err).into(),
                est.within(0.0, 3.0).into(),
            ]);
        }
    }
    Ok(table)
}

/// Model used by the diagnostics: the configured checkpoint or a fresh
/// initialization.
pub fn diagnostic_model(cfg: &ExperimentConfig, model_cfg: &EncoderConfig) -> Result<EncoderModel> {
    match &cfg.experiment.checkpoint {
        Some(path) => load_checkpoint(path),
        None => Ok(EncoderModel::new(model_cfg.clone(), cfg.train.seed)?),
    }
}

/// Error-ratio curves for every injection layer over the first
/// `probe_size` dev examples.
pub fn noise_curve(cfg: &ExperimentConfig) -> Result<Table> {
    let (model_cfg, _, dev) = load_data(cfg)?;
    let model = diagnostic_model(cfg, &model_cfg)?;
    let probe: Vec<Vec<usize>> = dev
        .examples
        .iter()
        .take(cfg.experiment.probe_size)
        .map(|e| e.tokens.clone())
        .collect();
    let rho = cfg
        .train
        .noise
        .rel_magnitude
        .unwrap_or(lnsr_core::noise::DEFAULT_REL_MAGNITUDE);
    let mut table = Table::new(
        "noise-curve",
        &["injection_layer", "layer", "ratio", "rel_magnitude", "probe_size"],
    );
    let mut rng = rng::stream(cfg.train.seed, Stream::Probe);
    for b in 1..=model.config().num_layers {
        let curve = error_ratio_curve(&model, &probe, b, rho, &mut rng)?;
        let mut push = |layer: usize, ratio: f64| {
            table.push(vec![
                b.into(),
                layer.into(),
                ratio.into(),
                rho.into(),
                curve.probe_size.into(),
            ]);
        };
        push(b - 1, curve.injection_ratio);
        for (i, r) in curve.layer_ratios.iter().enumerate() {
            push(b + i, *r);
        }
    }
    Ok(table)
}

pub fn pca_spectrum(cfg: &ExperimentConfig) -> Result<Table> {
    let e = &cfg.experiment;
    let seed = cfg.train.seed;
    let set = synth_manifold(e.manifold_points, e.pca_dim, e.pca_k, e.curvature, seed)?;
    let mut rng = rng::stream(seed, Stream::Noise);
    let batches = [
        (
            NoiseSource::Standard,
            standard_noise_batch(e.pca_samples, e.pca_dim, 1.0, &mut rng)?,
        ),
        (
            NoiseSource::InManifold,
            manifold_noise_batch(&set, cfg.train.noise.neighbors, 1.0, e.pca_samples, &mut rng)?,
        ),
    ];
    let mut table = Table::new(
        "pca-spectrum",
        &[
            "source",
            "rank",
            "eigenvalue",
            "cumulative",
            "top_k_mass",
            "batch_size",
            "degenerate",
        ],
    );
    for (source, batch) in &batches {
        let report = pca_noise_spectrum(batch, *source)?;
        let top = report.top_mass(e.pca_k);
        let mut cumulative = 0.0;
        for (i, v) in report.sorted_eigenvalues.iter().enumerate() {
            cumulative += v;
            table.push(vec![
                source.name().into(),
                (i + 1).into(),
                (*v).into(),
                cumulative.into(),
                top.into(),
                report.batch_size.into(),
                report.degenerate.into(),
            ]);
        }
    }
    Ok(table)
}

pub fn bench(cfg: &ExperimentConfig) -> Result<Table> {
    let params = BenchParams {
        reps: cfg.experiment.bench_reps,
        seed: cfg.train.seed,
        ..BenchParams::default()
    };
    Ok(bench_complexity(&params)?.table())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Train,
    Sweep,
    VerifyClaim1,
    CrossTerm,
    NoiseCurve,
    PcaSpectrum,
    Bench,
    GapReport,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Train => "train",
            Command::Sweep => "sweep",
            Command::VerifyClaim1 => "verify-claim1",
            Command::CrossTerm => "cross-term",
            Command::NoiseCurve => "noise-curve",
            Command::PcaSpectrum => "pca-spectrum",
            Command::Bench => "bench",
            Command::GapReport => "gap-report",
        }
    }
}

/// Runs `cmd` and writes its CSV files under `out`. Returns the written
/// paths.
pub fn run_command(cmd: Command, cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let write = |t: &Table, stem: &str| -> Result<PathBuf> {
        let path = output_path(out, stem)?;
        t.write_csv(&path)?;
        Ok(path)
    };
    match cmd {
        Command::Train => {
            let (model_cfg, train, dev) = load_data(cfg)?;
            let (result, model) = timed_run(&model_cfg, &train, &dev, &cfg.train)?;
            let (epochs, summary) = train_tables(&result);
            let epochs_path = write(&epochs, "train")?;
            let summary_path = write(&summary, "train-summary")?;
            let ckpt = epochs_path.with_extension("ckpt");
            save_checkpoint(&model, &ckpt)?;
            Ok(vec![epochs_path, summary_path, ckpt])
        }
        Command::GapReport => {
            let mut sink = RowSink::create(output_path(out, "gap-report-runs")?, &RUN_COLUMNS)?;
            let (_, table) = gap_report(cfg, Some(&mut sink))?;
            Ok(vec![sink.path().to_path_buf(), write(&table, "gap-report")?])
        }
        Command::Sweep => Ok(vec![write(&sweep(cfg)?, cmd.name())?]),
        Command::VerifyClaim1 => Ok(vec![write(&verify_claim1(cfg)?, cmd.name())?]),
        Command::CrossTerm => Ok(vec![write(&cross_term(cfg)?, cmd.name())?]),
        Command::NoiseCurve => Ok(vec![write(&noise_curve(cfg)?, cmd.name())?]),
        Command::PcaSpectrum => Ok(vec![write(&pca_spectrum(cfg)?, cmd.name())?]),
        Command::Bench => Ok(vec![write(&bench(cfg)?, cmd.name())?]),
    }
}

/// Columns holding wall-clock measurements.
pub const TIMING_COLUMNS: [&str; 3] = ["wall_time_s", "median_s", "exponent"];
