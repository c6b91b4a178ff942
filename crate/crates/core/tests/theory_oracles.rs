use lnsr_core::rng::{self, Rng};
use lnsr_core::theory::{
    cross_term_mc, fd_hessian, fd_jacobian, matrix_spectral_norm, mc_noise_stability, spectral_norm_estimate,
    taylor_report, taylor_terms, SmoothNet, HESSIAN_STEP, JACOBIAN_STEP,
};
use lnsr_core::Tensor;

fn random_quadratic(d: usize, rng: &mut Rng) -> (Vec<f64>, Tensor) {
    let j: Vec<f64> = (0..d).map(|_| rng::standard_normal(rng)).collect();
    let mut h = vec![0.0; d * d];
    for a in 0..d {
        for b in a..d {
            let v = rng::standard_normal(rng);
            h[a * d + b] = v;
            h[b * d + a] = v;
        }
    }
    (j, Tensor::new(vec![d, d], h).unwrap())
}

fn quad_eval(j: &[f64], h: &Tensor, x: &[f64]) -> f64 {
    let d = j.len();
    let lin: f64 = j.iter().zip(x).map(|(a, b)| a * b).sum();
    let mut q = 0.0;
    for a in 0..d {
        for b in 0..d {
            q += x[a] * h.get2(a, b) * x[b];
        }
    }
    lin + 0.5 * q
}

#[test]
fn quadratic_stability_is_exactly_jacobian_plus_exact_hessian_term() {
    let mut rng = rng::seeded(11);
    for _ in 0..4 {
        let (j, h) = random_quadratic(6, &mut rng);
        for sigma in [0.3, 0.1] {
            let est = mc_noise_stability(|x| quad_eval(&j, &h, x), &[0.0; 6], sigma, 50_000, &mut rng).unwrap();
            let t = taylor_terms(&j, &h, sigma).unwrap();
            assert!(
                est.within(t.r_j + t.r_h_exact, 3.0),
                "{est:?} vs {}",
                t.r_j + t.r_h_exact
            );
            assert!(t.r_h_paper != t.r_h_exact);
        }
    }
}

#[test]
fn printed_hessian_term_is_below_the_exact_one() {
    let mut rng = rng::seeded(12);
    for _ in 0..20 {
        let (j, h) = random_quadratic(5, &mut rng);
        let t = taylor_terms(&j, &h, 0.1).unwrap();
        assert!(t.r_h_paper < t.r_h_exact);
    }
}

#[test]
fn small_sigma_gap_to_jacobian_term_shrinks() {
    let mut rng = rng::seeded(13);
    let net = SmoothNet::random(6, 10, 0.8, &mut rng);
    let x: Vec<f64> = (0..6).map(|_| 0.3 * rng::standard_normal(&mut rng)).collect();
    let j = net.gradient(&x).unwrap();
    let jn2: f64 = j.iter().map(|v| v * v).sum();
    let mut gaps = Vec::new();
    for sigma in [0.1, 0.05, 0.01] {
        let mut crn = rng::seeded(77);
        let est = mc_noise_stability(|p| net.eval(p), &x, sigma, 200_000, &mut crn).unwrap();
        gaps.push((est.mean - sigma * sigma * jn2).abs() / est.mean);
    }
    assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "{gaps:?}");
}

#[test]
fn cross_term_vanishes_for_random_pairs() {
    let mut rng = rng::seeded(14);
    for _ in 0..20 {
        let (j, h) = random_quadratic(4, &mut rng);
        let est = cross_term_mc(&j, &h, 0.2, 100_000, &mut rng).unwrap();
        assert!(est.within(0.0, 3.0), "{est:?}");
    }
}

/// Singular values by one-sided Jacobi rotations on the columns.
fn jacobi_singular_values(a: &Tensor) -> Vec<f64> {
    let (m, n) = a.dims2();
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| (0..m).map(|i| a.get2(i, j)).collect()).collect();
    for _ in 0..60 {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha: f64 = cols[p].iter().map(|v| v * v).sum();
                let beta: f64 = cols[q].iter().map(|v| v * v).sum();
                let gamma: f64 = cols[p].iter().zip(&cols[q]).map(|(x, y)| x * y).sum();
                if gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (left, right) = cols.split_at_mut(q);
                for (x, y) in left[p].iter_mut().zip(right[0].iter_mut()) {
                    let (a, b) = (*x, *y);
                    *x = c * a - s * b;
                    *y = s * a + c * b;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sv: Vec<f64> = cols
        .iter()
        .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

#[test]
fn power_iteration_matches_jacobi_svd() {
    let mut rng = rng::seeded(15);
    for _ in 0..10 {
        let data = (0..64).map(|_| rng::standard_normal(&mut rng)).collect();
        let j = Tensor::new(vec![8, 8], data).unwrap();
        let top = jacobi_singular_values(&j)[0];
        let est = matrix_spectral_norm(&j, 2000, &mut rng).unwrap();
        assert!((est - top).abs() <= 1e-6, "{est} vs {top}");
    }
}

#[test]
fn power_iterates_never_decrease() {
    let mut rng = rng::seeded(16);
    let data: Vec<f64> = (0..30).map(|_| rng::standard_normal(&mut rng)).collect();
    let j = Tensor::new(vec![5, 6], data).unwrap();
    let jt = j.transpose();
    let apply = |a: &Tensor, v: &[f64]| -> Vec<f64> {
        let (r, c) = a.dims2();
        (0..r).map(|i| (0..c).map(|k| a.get2(i, k) * v[k]).sum()).collect()
    };
    let est = spectral_norm_estimate(|v| apply(&j, v), |u| apply(&jt, u), 6, 50, &mut rng).unwrap();
    assert!(
        est.history.windows(2).all(|w| w[1] >= w[0] - 1e-12),
        "{:?}",
        est.history
    );
}

fn smooth_net_hessian(net: &SmoothNet, x: &[f64]) -> Tensor {
    let (h, d) = net.w1.dims2();
    let mut out = vec![0.0; d * d];
    for k in 0..h {
        let pre: f64 = (0..d).map(|i| net.w1.get2(k, i) * x[i]).sum::<f64>() + net.b1[k];
        let t = pre.tanh();
        let curv = net.w2[k] * (-2.0 * t * (1.0 - t * t));
        for a in 0..d {
            for b in 0..d {
                out[a * d + b] += curv * net.w1.get2(k, a) * net.w1.get2(k, b);
            }
        }
    }
    Tensor::new(vec![d, d], out).unwrap()
}

#[test]
fn finite_differences_agree_with_analytic_derivatives() {
    let mut rng = rng::seeded(17);
    for _ in 0..5 {
        let net = SmoothNet::random(5, 8, 0.9, &mut rng);
        let x: Vec<f64> = (0..5).map(|_| 0.5 * rng::standard_normal(&mut rng)).collect();
        let ad = net.gradient(&x).unwrap();
        let fd = fd_jacobian(|p| net.eval(p), &x, JACOBIAN_STEP).unwrap();
        let num: f64 = ad.iter().zip(&fd).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let den: f64 = ad.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(num / den <= 1e-5);
        let hf = fd_hessian(|p| net.eval(p), &x, HESSIAN_STEP).unwrap();
        let ha = smooth_net_hessian(&net, &x);
        let num: f64 = hf
            .data()
            .iter()
            .zip(ha.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!(num / ha.norm() <= 1e-5, "{}", num / ha.norm());
    }
}

#[test]
fn report_columns_line_up() {
    let mut rng = rng::seeded(18);
    let r = taylor_report(|x| 3.0 * x[0] + 4.0 * x[1], &[0.0, 0.0], 0.1, 20_000, &mut rng).unwrap();
    assert!((r.r_j - 0.25).abs() < 1e-8);
    assert!(r.r_h_paper.abs() < 1e-8);
    assert!((r.mc_estimate - 0.25).abs() <= 3.0 * r.mc_se);
    assert_eq!(r.values()[0], 0.1);
}
