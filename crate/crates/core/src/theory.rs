//! Numerical oracles for the second-order expansion of the noise stability
//! term of a scalar function `f: Rᵈ → R`.
//!
//! For `ε ~ N(0, σ²I)` and `f(x + ε) − f(x) ≈ Jε + ½εᵀHε`:
//!
//! * `R_J = σ²‖J‖²`
//! * the exact quadratic part is `E[(½εᵀHε)²] = σ⁴/4 (Tr(H)² + 2‖H‖_F²)`;
//!   the expansion as usually printed drops the diagonal excess and one
//!   pairing, giving `σ⁴/4 (Tr(H)² + ‖(1−I)∘H‖_F²)`. Both are reported.
//! * the cross term `E[(Jε)(½εᵀHε)]` vanishes because odd Gaussian
//!   moments do.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{contract, Error, Result};
use crate::numerics::{Graph, Tensor};
use crate::rng::{self, Rng};

/// Finite-difference step for gradients.
pub const JACOBIAN_STEP: f64 = 1e-5;
/// Finite-difference step for Hessians.
pub const HESSIAN_STEP: f64 = 1e-3;
/// Smallest Monte-Carlo sample size accepted.
pub const MIN_MC_SAMPLES: usize = 1000;

fn eval(f: &impl Fn(&[f64]) -> f64, x: &[f64], count: &mut usize) -> Result<f64> {
    let v = f(x);
    *count += 1;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(*count))
    }
}

/// Central-difference gradient `(f(x+heᵢ) − f(x−heᵢ)) / 2h`.
pub fn fd_jacobian(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(contract("finite-difference step must be positive"));
    }
    let mut count = 0;
    let mut xp = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        xp[i] = x[i] + h;
        let fp = eval(&f, &xp, &mut count)?;
        xp[i] = x[i] - h;
        let fm = eval(&f, &xp, &mut count)?;
        xp[i] = x[i];
        out.push((fp - fm) / (2.0 * h));
    }
    Ok(out)
}

/// Central second differences, symmetrized as `(H + Hᵀ)/2`.
pub fn fd_hessian(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Result<Tensor> {
    if !(h > 0.0) {
        return Err(contract("finite-difference step must be positive"));
    }
    let d = x.len();
    let mut count = 0;
    let f0 = eval(&f, x, &mut count)?;
    let mut hm = vec![0.0; d * d];
    let mut xp = x.to_vec();
    for i in 0..d {
        xp[i] = x[i] + h;
        let fp = eval(&f, &xp, &mut count)?;
        xp[i] = x[i] - h;
        let fm = eval(&f, &xp, &mut count)?;
        xp[i] = x[i];
        hm[i * d + i] = (fp - 2.0 * f0 + fm) / (h * h);
        for j in (i + 1)..d {
            let mut corner = |si: f64, sj: f64| -> Result<f64> {
                xp[i] = x[i] + si * h;
                xp[j] = x[j] + sj * h;
                let v = eval(&f, &xp, &mut count);
                xp[i] = x[i];
                xp[j] = x[j];
                v
            };
            let v = (corner(1.0, 1.0)? - corner(1.0, -1.0)? - corner(-1.0, 1.0)? + corner(-1.0, -1.0)?) / (4.0 * h * h);
            hm[i * d + j] = v;
            hm[j * d + i] = v;
        }
    }
    Tensor::new(vec![d, d], hm)
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_err: f64,
}

impl McEstimate {
    fn from_samples(samples: impl Iterator<Item = f64>) -> Self {
        // Welford, single pass.
        let (mut n, mut mean, mut m2) = (0.0, 0.0, 0.0);
        for s in samples {
            n += 1.0;
            let delta = s - mean;
            mean += delta / n;
            m2 += delta * (s - mean);
        }
        let var = if n > 1.0 { m2 / (n - 1.0) } else { 0.0 };
        Self {
            mean,
            std_err: libm::sqrt(var / n),
        }
    }

    /// `|mean − target| ≤ k · std_err`.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.std_err
    }
}

/// Monte-Carlo estimate of `E‖f(x+ε) − f(x)‖²`, `ε ~ N(0, σ²I)`.
pub fn mc_noise_stability(
    f: impl Fn(&[f64]) -> f64,
    x: &[f64],
    sigma: f64,
    n: usize,
    rng: &mut Rng,
) -> Result<McEstimate> {
    if n < MIN_MC_SAMPLES {
        return Err(contract("Monte-Carlo estimates need at least 1000 samples"));
    }
    let f0 = f(x);
    let mut xp = vec![0.0; x.len()];
    let mut err = None;
    let est = McEstimate::from_samples((0..n).map(|i| {
        for (p, &xi) in xp.iter_mut().zip(x) {
            *p = xi + sigma * rng::standard_normal(rng);
        }
        let v = f(&xp);
        if !v.is_finite() && err.is_none() {
            err = Some(Error::NonFinite(i));
        }
        (v - f0) * (v - f0)
    }));
    match err {
        Some(e) => Err(e),
        None => Ok(est),
    }
}

/// Closed-form terms of the second-order expansion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaylorTerms {
    /// `σ²‖J‖²`.
    pub r_j: f64,
    /// `σ⁴/4 (Tr(H)² + ‖(1−I)∘H‖_F²)`.
    pub r_h_paper: f64,
    /// `σ⁴/4 (Tr(H)² + 2‖H‖_F²)`.
    pub r_h_exact: f64,
    /// `σ²/4 (4‖J‖² + Tr(H)² + ‖(1−I)∘H‖_F²)`.
    pub claim14_value: f64,
}

pub fn taylor_terms(j: &[f64], h: &Tensor, sigma: f64) -> Result<TaylorTerms> {
    let d = j.len();
    if h.shape() != [d, d] {
        return Err(Error::Shape {
            op: "taylor_terms",
            lhs: vec![d, d],
            rhs: h.shape().to_vec(),
        });
    }
    let mut trace = 0.0;
    let mut fro = 0.0;
    let mut off = 0.0;
    for a in 0..d {
        trace += h.get2(a, a);
        for b in 0..d {
            let v = h.get2(a, b);
            if (v - h.get2(b, a)).abs() > 1e-8 {
                return Err(contract("Hessian must be symmetric within 1e-8"));
            }
            fro += v * v;
            if a != b {
                off += v * v;
            }
        }
    }
    let j2: f64 = j.iter().map(|v| v * v).sum();
    let s2 = sigma * sigma;
    let s4 = s2 * s2;
    Ok(TaylorTerms {
        r_j: s2 * j2,
        r_h_paper: s4 / 4.0 * (trace * trace + off),
        r_h_exact: s4 / 4.0 * (trace * trace + 2.0 * fro),
        claim14_value: s2 / 4.0 * (4.0 * j2 + trace * trace + off),
    })
}

/// Sample mean of `(J·ε)(½ εᵀHε)` over `n` draws.
pub fn cross_term_mc(j: &[f64], h: &Tensor, sigma: f64, n: usize, rng: &mut Rng) -> Result<McEstimate> {
    if n < MIN_MC_SAMPLES {
        return Err(contract("Monte-Carlo estimates need at least 1000 samples"));
    }
    let d = j.len();
    if h.shape() != [d, d] {
        return Err(Error::Shape {
            op: "cross_term_mc",
            lhs: vec![d, d],
            rhs: h.shape().to_vec(),
        });
    }
    let mut eps = vec![0.0; d];
    Ok(McEstimate::from_samples((0..n).map(|_| {
        for e in eps.iter_mut() {
            *e = sigma * rng::standard_normal(rng);
        }
        let lin: f64 = j.iter().zip(&eps).map(|(a, b)| a * b).sum();
        let mut quad = 0.0;
        for a in 0..d {
            let row = h.row(a);
            quad += eps[a] * row.iter().zip(&eps).map(|(x, y)| x * y).sum::<f64>();
        }
        lin * 0.5 * quad
    })))
}

/// One row of the expansion report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaylorReport {
    pub sigma: f64,
    pub mc_estimate: f64,
    pub mc_se: f64,
    pub r_j: f64,
    pub r_h_paper: f64,
    pub r_h_exact: f64,
    /// `2 E[(Jε)(½εᵀHε)]`, Monte-Carlo.
    pub r_jh_mc: f64,
    pub claim14_value: f64,
}

impl TaylorReport {
    pub const COLUMNS: [&'static str; 8] = [
        "sigma",
        "mc_estimate",
        "mc_se",
        "r_j",
        "r_h_paper",
        "r_h_exact",
        "r_jh_mc",
        "claim14_value",
    ];

    pub fn values(&self) -> [f64; 8] {
        [
            self.sigma,
            self.mc_estimate,
            self.mc_se,
            self.r_j,
            self.r_h_paper,
            self.r_h_exact,
            self.r_jh_mc,
            self.claim14_value,
        ]
    }
}

/// Full report for `f` at `x`: finite-difference `J` and `H`, closed-form
/// terms, and Monte-Carlo estimates of the stability term and cross term.
pub fn taylor_report(
    f: impl Fn(&[f64]) -> f64,
    x: &[f64],
    sigma: f64,
    n: usize,
    rng: &mut Rng,
) -> Result<TaylorReport> {
    let j = fd_jacobian(&f, x, JACOBIAN_STEP)?;
    let h = fd_hessian(&f, x, HESSIAN_STEP)?;
    let terms = taylor_terms(&j, &h, sigma)?;
    let mc = mc_noise_stability(&f, x, sigma, n, rng)?;
    let cross = cross_term_mc(&j, &h, sigma, n, rng)?;
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

/// Result of power iteration on `JᵀJ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralEstimate {
    /// Estimated largest singular value of `J`.
    pub value: f64,
    /// `‖J vₖ‖` after each iteration; nondecreasing.
    pub history: Vec<f64>,
}

/// Power iteration on `JᵀJ` using only matrix-vector products.
///
/// `jvp` maps `Rᵈ → Rᵐ`, `vjp` maps `Rᵐ → Rᵈ`.
pub fn spectral_norm_estimate(
    jvp: impl Fn(&[f64]) -> Vec<f64>,
    vjp: impl Fn(&[f64]) -> Vec<f64>,
    dim: usize,
    iters: usize,
    rng: &mut Rng,
) -> Result<SpectralEstimate> {
    if iters < 10 {
        return Err(contract("power iteration needs at least 10 iterations"));
    }
    let norm = |v: &[f64]| libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
    let mut v: Vec<f64> = (0..dim).map(|_| rng::standard_normal(rng)).collect();
    let n0 = norm(&v);
    v.iter_mut().for_each(|x| *x /= n0);
    let mut history = Vec::with_capacity(iters);
    for _ in 0..iters {
        let jv = jvp(&v);
        let s = norm(&jv);
        history.push(s);
        if s == 0.0 {
            break;
        }
        let mut w = vjp(&jv);
        let nw = norm(&w);
        if nw == 0.0 {
            break;
        }
        w.iter_mut().for_each(|x| *x /= nw);
        v = w;
    }
    let value = history.iter().copied().fold(0.0, f64::max);
    Ok(SpectralEstimate { value, history })
}

/// Spectral norm of an explicit `[m×d]` matrix.
pub fn matrix_spectral_norm(j: &Tensor, iters: usize, rng: &mut Rng) -> Result<f64> {
    let (m, d) = j.dims2();
    let jt = j.transpose();
    let apply = |a: &Tensor, rows: usize, cols: usize, v: &[f64]| -> Vec<f64> {
        (0..rows)
            .map(|r| {
                a.data()[r * cols..(r + 1) * cols]
                    .iter()
                    .zip(v)
                    .map(|(x, y)| x * y)
                    .sum()
            })
            .collect()
    };
    Ok(spectral_norm_estimate(|v| apply(j, m, d, v), |u| apply(&jt, d, m, u), d, iters, rng)?.value)
}

/// Largest Jacobian spectral norm over a finite point set, a lower estimate
/// of the local Lipschitz constant of `f` around those points.
pub fn pointset_lipschitz(
    points: &[Vec<f64>],
    jacobian: impl Fn(&[f64]) -> Result<Tensor>,
    iters: usize,
    rng: &mut Rng,
) -> Result<f64> {
    let mut best = 0.0f64;
    for p in points {
        best = best.max(matrix_spectral_norm(&jacobian(p)?, iters, rng)?);
    }
    Ok(best)
}

/// Random smooth two-layer network `f(x) = w₂ · tanh(W₁x + b₁) + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothNet {
    pub w1: Tensor,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub c: f64,
}

impl SmoothNet {
    pub fn random(input_dim: usize, hidden: usize, scale: f64, rng: &mut Rng) -> Self {
        let w1 = (0..input_dim * hidden)
            .map(|_| scale * rng::standard_normal(rng))
            .collect();
        let w1 = Tensor::new(vec![hidden, input_dim], w1).expect("positive dims");
        let b1 = (0..hidden).map(|_| 0.5 * rng::standard_normal(rng)).collect();
        let w2 = (0..hidden)
            .map(|_| rng::standard_normal(rng) / libm::sqrt(hidden as f64))
            .collect();
        Self { w1, b1, w2, c: 0.0 }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.dims2().1
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let (h, d) = self.w1.dims2();
        let mut out = self.c;
        for k in 0..h {
            let pre: f64 = self.w1.data()[k * d..(k + 1) * d]
                .iter()
                .zip(x)
                .map(|(a, b)| a * b)
                .sum::<f64>()
                + self.b1[k];
            out += self.w2[k] * libm::tanh(pre);
        }
        out
    }

    /// Input gradient through the autodiff graph.
    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let (h, d) = self.w1.dims2();
        let mut g = Graph::new();
        let xv = g.param(Tensor::new(vec![d, 1], x.to_vec())?);
        let w1 = g.constant(self.w1.clone());
        let b1 = g.constant(Tensor::new(vec![h, 1], self.b1.clone())?);
        let w2 = g.constant(Tensor::new(vec![1, h], self.w2.clone())?);
        let pre = g.matmul(w1, xv)?;
        let pre = g.add(pre, b1)?;
        let act = g.tanh(pre);
        let out = g.matmul(w2, act)?;
        let out = g.sum(out);
        g.backward(out)?;
        Ok(g.grad(xv).expect("input requires grad").data().to_vec())
    }
}
