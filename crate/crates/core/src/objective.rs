//! The layer-wise noise stability term and ablation objectives.
//!
//! `R = Σ_{r=b}^{L} λ_r ‖f^{b,r}(x + ε) − f^{b,r}(x)‖²`, summed over the
//! non-padding rows of each recorded `[M×d]` activation.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::encoder::ActivationTrace;
use crate::error::{config, contract, Result};
use crate::numerics::{Graph, Tensor, Var};

/// Regularization weights suggested for fine-tuning.
pub const LAMBDA_PRESETS: [f64; 5] = [1.0, 0.8, 0.6, 0.4, 0.2];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Plain fine-tuning on clean inputs.
    Ft,
    /// Task loss on the perturbed pass only; no stability term.
    FtNoiseOnly,
    LnsrStandard,
    LnsrInManifold,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Ft => "ft",
            Mode::FtNoiseOnly => "ft_noise_only",
            Mode::LnsrStandard => "lnsr_standard",
            Mode::LnsrInManifold => "lnsr_inmanifold",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "ft" => Mode::Ft,
            "ft_noise_only" => Mode::FtNoiseOnly,
            "lnsr_standard" => Mode::LnsrStandard,
            "lnsr_inmanifold" => Mode::LnsrInManifold,
            _ => return None,
        })
    }

    pub fn uses_regularizer(self) -> bool {
        matches!(self, Mode::LnsrStandard | Mode::LnsrInManifold)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormReduction {
    SumSquares,
    /// Sum of squares divided by the number of non-padding entries.
    MeanSquares,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Lambda {
    Scalar(f64),
    /// One weight per regularized layer `b..=L`.
    PerLayer(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegularizerConfig {
    pub lambda: Lambda,
    pub mode: Mode,
    pub norm_reduction: NormReduction,
    pub injection_layer: usize,
}

impl Default for RegularizerConfig {
    fn default() -> Self {
        Self {
            lambda: Lambda::Scalar(LAMBDA_PRESETS[0]),
            mode: Mode::LnsrStandard,
            norm_reduction: NormReduction::SumSquares,
            injection_layer: 1,
        }
    }
}

impl RegularizerConfig {
    /// Weights for layers `b..=num_layers`.
    pub fn lambdas(&self, num_layers: usize) -> Result<Vec<f64>> {
        let b = self.injection_layer;
        if b == 0 || b > num_layers {
            return Err(config("injection_layer", format!("{b} outside 1..={num_layers}")));
        }
        let count = num_layers - b + 1;
        let w = match &self.lambda {
            Lambda::Scalar(l) => vec![*l; count],
            Lambda::PerLayer(v) => {
                if v.len() != count {
                    return Err(config(
                        "lambda",
                        format!("expected {count} per-layer weights, got {}", v.len()),
                    ));
                }
                v.clone()
            }
        };
        if w.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
            return Err(config("lambda", "weights must be finite and non-negative"));
        }
        Ok(w)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveBreakdown {
    pub task_loss: f64,
    pub reg_term: f64,
    /// `‖f^{b,r}(x̃) − f^{b,r}(x)‖²` for `r = b..=L`, after norm reduction.
    pub per_layer_terms: Vec<f64>,
}

/// Differentiable stability term and its per-layer deviations.
pub fn lnsr_term(
    g: &mut Graph,
    clean: &ActivationTrace,
    perturbed: &ActivationTrace,
    cfg: &RegularizerConfig,
) -> Result<(Var, Vec<f64>)> {
    if clean.len() != perturbed.len() || clean.is_empty() {
        return Err(contract(format!(
            "trace lengths differ: clean {} vs perturbed {}",
            clean.len(),
            perturbed.len()
        )));
    }
    if let Some(b) = perturbed.injected_layer {
        if b != cfg.injection_layer {
            return Err(contract(format!(
                "perturbed trace injected at {b}, regularizer expects {}",
                cfg.injection_layer
            )));
        }
    }
    let num_layers = clean.len() - 1;
    let lambdas = cfg.lambdas(num_layers)?;
    let shape = g.value(clean.layers[0]).shape().to_vec();
    let (m, d) = (shape[0], shape[1]);
    let valid = clean.valid_len.min(m);
    let mask = (valid < m).then(|| {
        let mut data = vec![0.0; m * d];
        data[..valid * d].iter_mut().for_each(|v| *v = 1.0);
        g.constant(Tensor::new(shape.clone(), data).expect("mask shape"))
    });
    let denom = match cfg.norm_reduction {
        NormReduction::SumSquares => 1.0,
        NormReduction::MeanSquares => (valid * d) as f64,
    };
    let mut total: Option<Var> = None;
    let mut terms = Vec::with_capacity(lambdas.len());
    for (r, &lam) in (cfg.injection_layer..=num_layers).zip(&lambdas) {
        let mut diff = g.sub(perturbed.layers[r], clean.layers[r])?;
        if let Some(mask) = mask {
            diff = g.mul(diff, mask)?;
        }
        let sq = g.sq_norm(diff);
        let sq = if denom != 1.0 { g.scale(sq, 1.0 / denom) } else { sq };
        terms.push(g.value(sq).item());
        let weighted = g.scale(sq, lam);
        total = Some(match total {
            None => weighted,
            Some(t) => g.add(t, weighted)?,
        });
    }
    Ok((total.expect("at least one regularized layer"), terms))
}

/// Supervision target for one example.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    Class(usize),
    Value(f64),
}

pub fn task_loss(g: &mut Graph, logits: Var, target: Target) -> Result<Var> {
    match target {
        Target::Class(label) => g.cross_entropy(logits, label),
        Target::Value(y) => {
            let shape = g.value(logits).shape().to_vec();
            let t = g.constant(Tensor::full(&shape, y));
            g.mse(logits, t)
        }
    }
}

/// Per-example objective for the chosen ablation mode.
///
/// `ft` uses the clean logits, `ft_noise_only` the perturbed ones, and the
/// LNSR modes add `reg` to the clean task loss.
pub fn assemble_objective(
    g: &mut Graph,
    clean_logits: Var,
    perturbed_logits: Option<Var>,
    target: Target,
    reg: Option<Var>,
    mode: Mode,
) -> Result<Var> {
    match mode {
        Mode::Ft => task_loss(g, clean_logits, target),
        Mode::FtNoiseOnly => {
            let logits = perturbed_logits.ok_or_else(|| contract("ft_noise_only needs perturbed logits"))?;
            task_loss(g, logits, target)
        }
        Mode::LnsrStandard | Mode::LnsrInManifold => {
            let task = task_loss(g, clean_logits, target)?;
            match reg {
                Some(r) => g.add(task, r),
                None => Ok(task),
            }
        }
    }
}

/// Mean of scalar nodes.
pub fn batch_mean(g: &mut Graph, items: &[Var]) -> Result<Var> {
    let mut it = items.iter();
    let first = *it.next().ok_or_else(|| contract("empty batch"))?;
    let mut acc = first;
    for &v in it {
        acc = g.add(acc, v)?;
    }
    Ok(g.scale(acc, 1.0 / items.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(g: &mut Graph, layers: &[Tensor], valid_len: usize, inj: Option<usize>) -> ActivationTrace {
        ActivationTrace {
            layers: layers.iter().map(|t| g.param(t.clone())).collect(),
            valid_len,
            injected_layer: inj,
            injected_noise: None,
        }
    }

    fn mat(v: &[f64]) -> Tensor {
        Tensor::new(vec![1, v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn identical_traces_give_zero() {
        let mut g = Graph::new();
        let layers = [mat(&[1., 2.]), mat(&[3., 4.]), mat(&[5., 6.])];
        let a = trace(&mut g, &layers, 1, None);
        let b = trace(&mut g, &layers, 1, Some(1));
        let (r, terms) = lnsr_term(&mut g, &a, &b, &RegularizerConfig::default()).unwrap();
        assert_eq!(g.value(r).item(), 0.0);
        assert_eq!(terms, vec![0.0, 0.0]);
    }

    #[test]
    fn single_layer_and_weighted_sum() {
        let mut g = Graph::new();
        let clean = trace(&mut g, &[mat(&[0., 0.]), mat(&[0., 0.])], 1, None);
        let pert = trace(&mut g, &[mat(&[0., 0.]), mat(&[3., 4.])], 1, Some(1));
        let cfg = RegularizerConfig {
            lambda: Lambda::Scalar(1.0),
            ..RegularizerConfig::default()
        };
        let (r, _) = lnsr_term(&mut g, &clean, &pert, &cfg).unwrap();
        assert_eq!(g.value(r).item(), 25.0);

        let mut g = Graph::new();
        let s2 = 2f64.sqrt();
        let clean = trace(&mut g, &[mat(&[0.]), mat(&[0.]), mat(&[0.])], 1, None);
        let pert = trace(&mut g, &[mat(&[0.]), mat(&[s2]), mat(&[2.])], 1, Some(1));
        let cfg = RegularizerConfig {
            lambda: Lambda::PerLayer(vec![0.5, 0.5]),
            ..RegularizerConfig::default()
        };
        let (r, terms) = lnsr_term(&mut g, &clean, &pert, &cfg).unwrap();
        assert!((g.value(r).item() - 3.0).abs() < 1e-12);
        assert!((terms[0] - 2.0).abs() < 1e-12 && terms[1] == 4.0);
    }

    #[test]
    fn mismatched_traces_and_weights_rejected() {
        let mut g = Graph::new();
        let a = trace(&mut g, &[mat(&[0.]), mat(&[0.])], 1, None);
        let b = trace(&mut g, &[mat(&[0.]), mat(&[0.]), mat(&[0.])], 1, Some(1));
        assert!(lnsr_term(&mut g, &a, &b, &RegularizerConfig::default()).is_err());
        let cfg = RegularizerConfig {
            lambda: Lambda::PerLayer(vec![1.0, 1.0, 1.0]),
            ..RegularizerConfig::default()
        };
        let c = trace(&mut g, &[mat(&[0.]), mat(&[0.]), mat(&[0.])], 1, None);
        assert!(lnsr_term(&mut g, &c, &b, &cfg).is_err());
        let neg = RegularizerConfig {
            lambda: Lambda::Scalar(-1.0),
            ..RegularizerConfig::default()
        };
        assert!(neg.lambdas(2).is_err());
    }

    #[test]
    fn padding_rows_are_masked() {
        let mut g = Graph::new();
        let z = Tensor::zeros(&[2, 2]);
        let p = Tensor::new(vec![2, 2], vec![1., 0., 100., 100.]).unwrap();
        let clean = trace(&mut g, &[z.clone(), z.clone()], 1, None);
        let pert = trace(&mut g, &[z, p], 1, Some(1));
        let (r, _) = lnsr_term(&mut g, &clean, &pert, &RegularizerConfig::default()).unwrap();
        assert_eq!(g.value(r).item(), 1.0);
        let cfg = RegularizerConfig {
            norm_reduction: NormReduction::MeanSquares,
            ..RegularizerConfig::default()
        };
        let (r, _) = lnsr_term(&mut g, &clean, &pert, &cfg).unwrap();
        assert_eq!(g.value(r).item(), 0.5);
    }

    #[test]
    fn mode_contracts() {
        let mut g = Graph::new();
        let logits = g.param(Tensor::vector(vec![0.0, 0.0]));
        let five = g.constant(Tensor::scalar(5.0));
        let ft = assemble_objective(&mut g, logits, None, Target::Class(0), Some(five), Mode::Ft).unwrap();
        assert!((g.value(ft).item() - core::f64::consts::LN_2).abs() < 1e-15);

        let r = g.constant(Tensor::scalar(0.3));
        // MSE of a single output against 0 equals the squared prediction.
        let pred = g.param(Tensor::vector(vec![1.2f64.sqrt()]));
        let obj = assemble_objective(&mut g, pred, None, Target::Value(0.0), Some(r), Mode::LnsrStandard).unwrap();
        assert!((g.value(obj).item() - 1.5).abs() < 1e-12);
        assert!(assemble_objective(&mut g, pred, None, Target::Value(0.0), None, Mode::FtNoiseOnly).is_err());
    }

    #[test]
    fn lambda_linearity() {
        let mut g = Graph::new();
        let clean = trace(&mut g, &[mat(&[0., 1.]), mat(&[0.3, 0.]), mat(&[1., 1.])], 1, None);
        let pert = trace(&mut g, &[mat(&[0., 1.]), mat(&[0.1, 0.7]), mat(&[-1., 2.])], 1, Some(1));
        let one = RegularizerConfig {
            lambda: Lambda::PerLayer(vec![0.6, 0.2]),
            ..RegularizerConfig::default()
        };
        let two = RegularizerConfig {
            lambda: Lambda::PerLayer(vec![1.2, 0.4]),
            ..RegularizerConfig::default()
        };
        let (r1, _) = lnsr_term(&mut g, &clean, &pert, &one).unwrap();
        let (r2, _) = lnsr_term(&mut g, &clean, &pert, &two).unwrap();
        assert!((2.0 * g.value(r1).item() - g.value(r2).item()).abs() < 1e-12);
    }
}
