//! Noise-propagation curves, PCA spectra of noise batches and
//! hyperparameter sweeps.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::{SyntheticManifoldSet, TextDataset};
use crate::encoder::{EncoderConfig, EncoderModel};
use crate::error::{contract, Error, Result};
use crate::linalg::{covariance, symmetric_eigen};
use crate::manifold::{sample_inmanifold_noise, NeighborIndex};
use crate::noise::{injection_noise, NoiseSpec};
use crate::numerics::Tensor;
use crate::rng::{self, Rng};
use crate::trainer::{multi_seed, MultiSeedReport, TrainConfig};

/// Probe-set size used when none is given.
pub const DEFAULT_PROBE_SIZE: usize = 64;
/// In-manifold mix ratios evaluated in sweeps.
pub const MIX_RATIO_PRESETS: [f64; 4] = [0.10, 0.12, 0.15, 0.20];

/// Mean relative deviation `‖x̂ⁱ − xⁱ‖ / ‖xⁱ‖` per layer.
///
/// Norms run over the valid (non-padding) rows of each `[M×d]` activation.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorRatioCurve {
    pub injection_layer: usize,
    pub rel_magnitude: f64,
    /// Ratio of the injected noise to the activation it was added to.
    pub injection_ratio: f64,
    /// Entries for the outputs of blocks `b..=L`.
    pub layer_ratios: Vec<f64>,
    pub probe_size: usize,
}

fn valid_norm(t: &Tensor, rows: usize) -> f64 {
    let d = t.dims2().1;
    libm::sqrt(t.data()[..rows * d].iter().map(|v| v * v).sum())
}

fn valid_diff_norm(a: &Tensor, b: &Tensor, rows: usize) -> f64 {
    let d = a.dims2().1;
    libm::sqrt(
        a.data()[..rows * d]
            .iter()
            .zip(&b.data()[..rows * d])
            .map(|(x, y)| (x - y) * (x - y))
            .sum(),
    )
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Injects ρ-rescaled per-token Gaussian noise at the input of block `b`
/// and averages the relative deviation of every later layer over the probe
/// set. Probes are processed in sorted order so the result does not depend
/// on how the probe set is ordered.
pub fn error_ratio_curve(
    model: &EncoderModel,
    probe: &[Vec<usize>],
    b: usize,
    rho: f64,
    rng: &mut Rng,
) -> Result<ErrorRatioCurve> {
    if probe.is_empty() {
        return Err(contract("empty probe set"));
    }
    let l = model.config().num_layers;
    if b == 0 || b > l {
        return Err(contract("injection layer outside 1..=L"));
    }
    let spec = NoiseSpec {
        rel_magnitude: Some(rho),
        injection_layer: b,
        ..NoiseSpec::default()
    };
    spec.validate()?;
    let mut sorted: Vec<&Vec<usize>> = probe.iter().collect();
    sorted.sort();
    let mut inj = 0.0;
    let mut sums = vec![0.0; l - b + 1];
    for tokens in sorted {
        let (_, clean) = model.forward(tokens)?;
        let rows = tokens.len();
        let x = &clean[b - 1];
        let noise = injection_noise(&spec, x, rows, rng)?;
        inj += ratio(valid_norm(&noise, rows), valid_norm(x, rows));
        let (_, noisy) = model.forward_noisy(tokens, b, noise)?;
        for (s, r) in sums.iter_mut().zip(b..=l) {
            *s += ratio(valid_diff_norm(&noisy[r], &clean[r], rows), valid_norm(&clean[r], rows));
        }
    }
    let n = probe.len() as f64;
    Ok(ErrorRatioCurve {
        injection_layer: b,
        rel_magnitude: rho,
        injection_ratio: inj / n,
        layer_ratios: sums.into_iter().map(|s| s / n).collect(),
        probe_size: probe.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseSource {
    Standard,
    InManifold,
}

impl NoiseSource {
    pub fn name(self) -> &'static str {
        match self {
            Self::Standard => "standard",
            Self::InManifold => "in_manifold",
        }
    }
}

/// Normalized covariance spectrum of a noise batch.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumReport {
    /// Descending, summing to 1; negatives clipped to 0.
    pub sorted_eigenvalues: Vec<f64>,
    pub source: NoiseSource,
    pub batch_size: usize,
    /// Sum of the raw eigenvalues.
    pub total_variance: f64,
    /// The batch had no variance and the spectrum is all zero.
    pub degenerate: bool,
}

impl SpectrumReport {
    /// Normalized mass of the `k` largest eigenvalues.
    pub fn top_mass(&self, k: usize) -> f64 {
        self.sorted_eigenvalues.iter().take(k).sum()
    }
}

pub fn pca_noise_spectrum(batch: &Tensor, source: NoiseSource) -> Result<SpectrumReport> {
    let (n, d) = batch.dims2();
    if n < 2 {
        return Err(contract("spectrum needs at least two samples"));
    }
    let cov = covariance(batch)?;
    let eig = symmetric_eigen(&cov)?;
    let clipped: Vec<f64> = eig.values.iter().map(|&v| v.max(0.0)).collect();
    let total: f64 = clipped.iter().sum();
    let degenerate = total == 0.0;
    let sorted_eigenvalues = if degenerate {
        vec![0.0; d]
    } else {
        clipped.iter().map(|v| v / total).collect()
    };
    Ok(SpectrumReport {
        sorted_eigenvalues,
        source,
        batch_size: n,
        total_variance: total,
        degenerate,
    })
}

/// `n` i.i.d. `N(0, σ²I)` vectors in `Rᵈ`.
pub fn standard_noise_batch(n: usize, d: usize, sigma: f64, rng: &mut Rng) -> Result<Tensor> {
    crate::noise::sample_standard_noise(&[n, d], sigma, rng)
}

/// `n` in-manifold noise vectors, each drawn at a uniformly chosen point
/// of `set` from the basis of its `k` nearest neighbors.
pub fn manifold_noise_batch(
    set: &SyntheticManifoldSet,
    k: usize,
    sigma: f64,
    n: usize,
    rng: &mut Rng,
) -> Result<Tensor> {
    let index = NeighborIndex::build(set.points.clone())?;
    let d = index.dim();
    let mut out = Vec::with_capacity(n * d);
    let mut cache = alloc::collections::BTreeMap::new();
    for _ in 0..n {
        let row = rng::below(rng, index.len());
        if let alloc::collections::btree_map::Entry::Vacant(e) = cache.entry(row) {
            e.insert(index.local_basis(row, k)?);
        }
        let basis = &cache[&row];
        out.extend(sample_inmanifold_noise(index.row(row), basis, sigma, rng, None)?);
    }
    Tensor::new(vec![n, d], out)
}

/// Setting varied across a sweep.
#[derive(Debug, Clone, PartialEq)]
pub enum Sweep {
    InjectionLayers(Vec<usize>),
    MixRatios(Vec<f64>),
}

impl Sweep {
    pub fn len(&self) -> usize {
        match self {
            Self::InjectionLayers(v) => v.len(),
            Self::MixRatios(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::InjectionLayers(_) => "injection_layer",
            Self::MixRatios(_) => "mix_ratio",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub setting: String,
    pub value: f64,
    pub report: MultiSeedReport,
}

/// One multi-seed summary per sweep setting.
pub fn sensitivity_sweep(
    model_cfg: &EncoderConfig,
    train: &TextDataset,
    dev: &TextDataset,
    base: &TrainConfig,
    sweep: &Sweep,
    seeds: &[u64],
) -> Result<Vec<SweepRow>> {
    if sweep.is_empty() {
        return Err(contract("empty sweep"));
    }
    let settings: Vec<(f64, TrainConfig)> = match sweep {
        Sweep::InjectionLayers(layers) => layers
            .iter()
            .map(|&b| {
                let mut c = base.clone();
                c.noise.injection_layer = b;
                c.reg.injection_layer = b;
                (b as f64, c)
            })
            .collect(),
        Sweep::MixRatios(ratios) => ratios
            .iter()
            .map(|&r| {
                let mut c = base.clone();
                c.noise.rel_magnitude = Some(r);
                (r, c)
            })
            .collect(),
    };
    settings
        .into_iter()
        .map(|(value, cfg)| {
            let report = multi_seed(model_cfg, train, dev, &cfg, seeds, |_| Ok(()))?;
            Ok(SweepRow {
                setting: String::from(sweep.name()),
                value,
                report,
            })
        })
        .collect::<Result<Vec<_>>>()
        .map_err(|e: Error| e)
}
