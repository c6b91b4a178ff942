//! Summary statistics over completed runs.

use alloc::vec::Vec;

use crate::error::{contract, Result};

pub fn mean(xs: &[f64]) -> Result<f64> {
    if xs.is_empty() {
        return Err(contract("mean of an empty sample"));
    }
    Ok(xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Sample standard deviation with the `n − 1` denominator.
pub fn sample_std(xs: &[f64]) -> Result<f64> {
    if xs.len() < 2 {
        return Err(contract("sample std needs at least two values"));
    }
    let m = mean(xs)?;
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    Ok(libm::sqrt(ss / (xs.len() - 1) as f64))
}

pub fn max(xs: &[f64]) -> Result<f64> {
    xs.iter()
        .copied()
        .reduce(f64::max)
        .ok_or_else(|| contract("max of an empty sample"))
}

/// Pearson correlation; zero when either side has no variance.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(contract("pearson needs two equal-length samples of size ≥ 2"));
    }
    let (mx, my) = (mean(xs)?, mean(ys)?);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(0.0);
    }
    Ok(sxy / libm::sqrt(sxx * syy))
}

/// Mean, sample std and max of one metric.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(xs: &[f64]) -> Result<Self> {
        Ok(Self {
            mean: mean(xs)?,
            std: sample_std(xs)?,
            max: max(xs)?,
        })
    }
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(contract("slope fit needs two equal-length samples of size ≥ 2"));
    }
    if xs.iter().chain(ys).any(|v| !(*v > 0.0)) {
        return Err(contract("log-log fit needs positive values"));
    }
    let lx: Vec<f64> = xs.iter().map(|v| libm::log(*v)).collect();
    let ly: Vec<f64> = ys.iter().map(|v| libm::log(*v)).collect();
    let (mx, my) = (mean(&lx)?, mean(&ly)?);
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in lx.iter().zip(&ly) {
        num += (x - mx) * (y - my);
        den += (x - mx) * (x - mx);
    }
    if den == 0.0 {
        return Err(contract("slope fit needs distinct x values"));
    }
    Ok(num / den)
}
