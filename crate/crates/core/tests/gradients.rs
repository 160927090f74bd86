mod common;

use common::{central_diff, deep_forward_ref, embed_sym_ref, flatten, rel_err, unflatten, KINK};
use fourier_diag::datagen::gen_grid;
use fourier_diag::embedding::{embed_doubled, embed_sym, EmbeddingConfig, EmbeddingKind};
use fourier_diag::model::{
    grad_deep_sample, grad_diag_sample, population_grad_w, Activation, DeepNetParams, DiagNetParams,
};
use fourier_diag::spectral::{Convention, SignedAlpha};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const INSTANCES: usize = 100;
const H: f64 = 1e-6;
const TOL: f64 = 1e-5;

fn diag_loss(w: &[f64], c: &[f64], act: Activation, x: &[f64], y: f64) -> f64 {
    let f: f64 = (0..x.len()).map(|k| c[k] * act.apply(w[k] * x[k])).sum();
    0.5 * (f - y) * (f - y)
}

#[test]
fn embeddings_match_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for m in [1, 4, 9] {
        let cfg = EmbeddingConfig::new(m).unwrap();
        for _ in 0..20 {
            let theta: f64 = rng.random_range(-1.0..=1.0);
            let got = embed_sym(theta, cfg).unwrap();
            let want = embed_sym_ref(theta, m);
            assert!(rel_err(got.as_slice(), &want) < 1e-14);
            let d = embed_doubled(theta, cfg).unwrap();
            assert_eq!(d.len(), 2 * (2 * m + 1));
            assert_eq!(d[0], 1.0);
            for k in 0..d.len() / 2 {
                assert_eq!(d[k], -d[d.len() / 2 + k]);
            }
        }
    }
}

#[test]
fn diag_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cfg = EmbeddingConfig::new(4).unwrap();
    let d = cfg.sym_dim();
    for act in [Activation::Relu, Activation::Identity] {
        let mut done = 0;
        while done < INSTANCES {
            let theta: f64 = rng.random_range(-1.0..=1.0);
            let y: f64 = rng.random_range(-2.0..=2.0);
            let w: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..=1.0)).collect();
            let c: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..=1.0)).collect();
            let x = embed_sym_ref(theta, 4);
            if act == Activation::Relu && w.iter().zip(&x).any(|(w, x)| (w * x).abs() < KINK) {
                continue;
            }
            let p = DiagNetParams::new(cfg, w.clone(), c.clone(), act).unwrap();
            let g = grad_diag_sample(&p, &embed_sym(theta, cfg).unwrap(), y).unwrap();
            let fd_w = central_diff(&w, H, |v| diag_loss(v, &c, act, &x, y));
            let fd_c = central_diff(&c, H, |v| diag_loss(&w, v, act, &x, y));
            assert!(rel_err(&g.grad_w, &fd_w) < TOL, "{act:?} grad_w");
            assert!(rel_err(&g.grad_c, &fd_c) < TOL, "{act:?} grad_c");
            done += 1;
        }
    }
}

fn random_deep(
    rng: &mut ChaCha8Rng,
    cfg: EmbeddingConfig,
    diagonal: bool,
    hidden: usize,
) -> DeepNetParams {
    let seed: u64 = rng.random();
    let mut p = if diagonal {
        DeepNetParams::diag(cfg, EmbeddingKind::Doubled, hidden, 5, seed).unwrap()
    } else {
        DeepNetParams::standard(cfg, EmbeddingKind::Doubled, hidden, 5, seed).unwrap()
    };
    if let Some(d) = p.diagonal.as_mut() {
        d.iter_mut().for_each(|v| *v = rng.random_range(-1.5..=1.5));
    }
    for l in &mut p.layers {
        l.bias
            .iter_mut()
            .for_each(|v| *v = rng.random_range(-0.5..=0.5));
    }
    p
}

fn check_deep(diagonal: bool, hidden: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = EmbeddingConfig::new(3).unwrap();
    let mut done = 0;
    while done < INSTANCES {
        let p = random_deep(&mut rng, cfg, diagonal, hidden);
        let theta: f64 = rng.random_range(-1.0..=1.0);
        let y: f64 = rng.random_range(-1.0..=1.0);
        let x = embed_doubled(theta, cfg).unwrap();
        let (_, margin) = deep_forward_ref(&p, &x);
        if margin < KINK {
            continue;
        }
        let g = grad_deep_sample(&p, theta, y).unwrap();
        let mut analytic: Vec<f64> = g.diagonal.iter().flat_map(|d| d.iter().copied()).collect();
        for l in &g.layers {
            analytic.extend(l.weight.iter());
            analytic.extend(l.bias.iter());
        }
        let fd = central_diff(&flatten(&p), H, |v| {
            let (f, _) = deep_forward_ref(&unflatten(&p, v), &x);
            0.5 * (f - y) * (f - y)
        });
        assert!(
            rel_err(&analytic, &fd) < TOL,
            "diagonal={diagonal} hidden={hidden}"
        );
        done += 1;
    }
}

#[test]
fn deep_diag0_gradients() {
    check_deep(true, 0, 2);
}

#[test]
fn deep_diag_n_gradients() {
    check_deep(true, 1, 3);
    check_deep(true, 3, 4);
}

#[test]
fn standard_n_gradients() {
    check_deep(false, 1, 5);
    check_deep(false, 3, 6);
}

#[test]
fn population_gradient_matches_monte_carlo() {
    let m = 2;
    let cfg = EmbeddingConfig::new(m).unwrap();
    let d = cfg.sym_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let tilde = vec![0.1, 0.6, 0.0, -0.3, 0.2];
    let alpha = SignedAlpha::from_tilde(&tilde).unwrap();
    let w: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let c: Vec<f64> = (0..d).map(|_| rng.random_range(-0.5..=0.5)).collect();
    let lambda = 0.1;
    let p = DiagNetParams::new(cfg, w.clone(), c.clone(), Activation::Relu).unwrap();
    let grid = gen_grid(1e-4).unwrap();
    let exact = population_grad_w(&p, &alpha, &grid, lambda, Convention::Sampled).unwrap();

    let n = 400_000;
    let mut sum = vec![0.0; d];
    let mut sum_sq = vec![0.0; d];
    for _ in 0..n {
        let theta: f64 = rng.random_range(-1.0..=1.0);
        let x = embed_sym_ref(theta, m);
        let f: f64 = (0..=2 * m).map(|l| tilde[l] * x[2 * m + l]).sum();
        let g = grad_diag_sample(&p, &embed_sym(theta, cfg).unwrap(), f).unwrap();
        for k in 0..d {
            sum[k] += g.grad_w[k];
            sum_sq[k] += g.grad_w[k] * g.grad_w[k];
        }
    }
    for k in 0..d {
        let mean = sum[k] / n as f64;
        let se = ((sum_sq[k] / n as f64 - mean * mean).max(0.0) / n as f64).sqrt();
        let mc = mean + lambda * w[k];
        assert!(
            (mc - exact[k]).abs() <= 5.0 * se + 1e-6,
            "slot {k}: mc {mc} vs {}",
            exact[k]
        );
    }
}
