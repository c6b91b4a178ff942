//! Standard Gaussian noise and relative-magnitude rescaling.

use alloc::vec::Vec;

use crate::error::{config, contract, Result};
use crate::numerics::Tensor;
use crate::rng::{self, Rng};

/// Relative noise magnitude used when none is configured.
pub const DEFAULT_REL_MAGNITUDE: f64 = 0.05;

/// Neighbors used for in-manifold noise.
pub const DEFAULT_NEIGHBORS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseMode {
    Standard,
    InManifold,
    None,
}

/// How a sampled vector is brought to the target magnitude.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RescaleRule {
    /// `‖ε′‖ = ρ‖x‖`.
    NormRatio,
    /// Multiply by `η = ρ‖x‖²/‖ε‖²`, the squared-norm variant.
    SquaredRatio,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Granularity {
    PerToken,
    PerSequence,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    pub mode: NoiseMode,
    /// Raw standard deviation, used when `rel_magnitude` is `None`.
    pub sigma: f64,
    /// Relative magnitude ρ (or the in-manifold mix ratio).
    pub rel_magnitude: Option<f64>,
    pub injection_layer: usize,
    pub seed: u64,
    pub granularity: Granularity,
    pub rule: RescaleRule,
    pub neighbors: usize,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            mode: NoiseMode::Standard,
            sigma: 1.0,
            rel_magnitude: Some(DEFAULT_REL_MAGNITUDE),
            injection_layer: 1,
            seed: 0,
            granularity: Granularity::PerToken,
            rule: RescaleRule::NormRatio,
            neighbors: DEFAULT_NEIGHBORS,
        }
    }
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) {
            return Err(config("sigma", "must be positive"));
        }
        if let Some(r) = self.rel_magnitude {
            if !(r >= 0.0) || !r.is_finite() {
                return Err(config("rel_magnitude", "must be a finite non-negative number"));
            }
        }
        if self.injection_layer == 0 {
            return Err(config("injection_layer", "layers are numbered from 1"));
        }
        if self.mode == NoiseMode::InManifold && self.neighbors == 0 {
            return Err(config("neighbors", "must be at least 1"));
        }
        Ok(())
    }
}

/// I.i.d. `N(0, σ²)` draws of the given shape.
pub fn sample_standard_noise(shape: &[usize], sigma: f64, rng: &mut Rng) -> Result<Tensor> {
    if !(sigma > 0.0) {
        return Err(contract("noise sigma must be positive"));
    }
    let n: usize = shape.iter().product();
    if n == 0 {
        return Err(contract("noise shape must be non-empty"));
    }
    let data = (0..n).map(|_| sigma * rng::standard_normal(rng)).collect();
    Tensor::new(shape.to_vec(), data)
}

fn rescale_slice(noise: &[f64], x: &[f64], rho: f64, rule: RescaleRule, out: &mut [f64]) -> Result<()> {
    let nx2: f64 = x.iter().map(|v| v * v).sum();
    if nx2 == 0.0 {
        out.iter_mut().for_each(|v| *v = 0.0);
        return Ok(());
    }
    let ne2: f64 = noise.iter().map(|v| v * v).sum();
    if ne2 == 0.0 {
        return Err(contract("cannot rescale zero-norm noise"));
    }
    let eta = match rule {
        RescaleRule::NormRatio => rho * libm::sqrt(nx2) / libm::sqrt(ne2),
        RescaleRule::SquaredRatio => rho * nx2 / ne2,
    };
    for (o, &e) in out.iter_mut().zip(noise) {
        *o = e * eta;
    }
    Ok(())
}

/// Rescales `noise` so that `‖noise′‖ = ρ‖x‖` over the whole tensor.
pub fn rescale_relative(noise: &Tensor, x: &Tensor, rho: f64) -> Result<Tensor> {
    rescale_with(noise, x, rho, RescaleRule::NormRatio)
}

pub fn rescale_with(noise: &Tensor, x: &Tensor, rho: f64, rule: RescaleRule) -> Result<Tensor> {
    if noise.shape() != x.shape() {
        return Err(crate::Error::Shape {
            op: "rescale_relative",
            lhs: noise.shape().to_vec(),
            rhs: x.shape().to_vec(),
        });
    }
    let mut out = alloc::vec![0.0; noise.numel()];
    rescale_slice(noise.data(), x.data(), rho, rule, &mut out)?;
    Tensor::new(noise.shape().to_vec(), out)
}

/// Row-wise rescaling of the first `rows` rows of a `[M×d]` noise matrix;
/// remaining rows are zeroed.
pub fn rescale_rows(noise: &Tensor, x: &Tensor, rows: usize, rho: f64, rule: RescaleRule) -> Result<Tensor> {
    if noise.shape() != x.shape() {
        return Err(crate::Error::Shape {
            op: "rescale_rows",
            lhs: noise.shape().to_vec(),
            rhs: x.shape().to_vec(),
        });
    }
    let (m, d) = noise.dims2();
    let mut out = alloc::vec![0.0; m * d];
    for r in 0..rows.min(m) {
        rescale_slice(noise.row(r), x.row(r), rho, rule, &mut out[r * d..(r + 1) * d])?;
    }
    Tensor::new(noise.shape().to_vec(), out)
}

/// Standard-mode injection noise for an activation `x` of shape `[M×d]`.
///
/// Draws the full `[M×d]` block (so rng consumption is independent of the
/// sequence length), then zeroes padding rows and applies the configured
/// rescaling.
pub fn injection_noise(spec: &NoiseSpec, x: &Tensor, valid_rows: usize, rng: &mut Rng) -> Result<Tensor> {
    let raw = sample_standard_noise(x.shape(), spec.sigma, rng)?;
    shape_injection(spec, raw, x, valid_rows)
}

pub(crate) fn shape_injection(spec: &NoiseSpec, raw: Tensor, x: &Tensor, valid_rows: usize) -> Result<Tensor> {
    let (m, d) = raw.dims2();
    let valid_rows = valid_rows.min(m);
    match spec.rel_magnitude {
        None => {
            let mut data: Vec<f64> = raw.into_data();
            data[valid_rows * d..].iter_mut().for_each(|v| *v = 0.0);
            Tensor::new(alloc::vec![m, d], data)
        }
        Some(rho) => match spec.granularity {
            Granularity::PerToken => rescale_rows(&raw, x, valid_rows, rho, spec.rule),
            Granularity::PerSequence => {
                let mut data = raw.into_data();
                data[valid_rows * d..].iter_mut().for_each(|v| *v = 0.0);
                let masked = Tensor::new(alloc::vec![m, d], data)?;
                let mut xd = x.data().to_vec();
                xd[valid_rows * d..].iter_mut().for_each(|v| *v = 0.0);
                let xm = Tensor::new(alloc::vec![m, d], xd)?;
                rescale_with(&masked, &xm, rho, spec.rule)
            }
        },
    }
}
