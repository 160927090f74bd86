//! Acceptance criteria, one PASS/FAIL line each. Runs without the libtest
//! harness so the lines always print; exits nonzero if any criterion fails.

mod common;

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use common::{central_diff, deep_forward_ref, embed_sym_ref, flatten, rel_err, unflatten, KINK};
use fourier_diag::analysis::{capacity_weights, hessian_sup_check, recovery_report, RecoverySetup};
use fourier_diag::datagen::{gen_grid, make_dataset, Dataset, TargetSpec};
use fourier_diag::embedding::{embed_doubled, embed_sym, EmbeddingConfig, EmbeddingKind};
use fourier_diag::experiment::{
    build_dataset, clean_alpha_max, run_model, ModelKind, Preset, Settings,
};
use fourier_diag::model::{
    grad_deep_sample, grad_diag_sample, init_symmetric_c, Activation, DeepNetParams, DiagNetParams,
};
use fourier_diag::spectral::{lemma_expectation, relu_cheb_coeff, Convention, Sign, SignedAlpha};
use fourier_diag::train::{
    default_q1, project_box, train_layerwise, train_phase1, Phase1Config, Phase2Config,
    Phase2Schedule,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const M: usize = 64;
const R_C: f64 = 0.5;
const LAMBDA: f64 = 0.1;
const ETA: f64 = 0.01;

/// Exact coefficients of the first synthetic target: `0.5 cos 5πθ + 0.8 cos 29πθ + 0.3 sin 61πθ`.
fn ex1_tilde() -> Vec<f64> {
    let mut t = vec![0.0; 2 * M + 1];
    t[9] = 0.5;
    t[57] = 0.8;
    t[122] = 0.3;
    t
}

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn criterion(n: u32, name: &str, budget: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let out = f();
    let took = start.elapsed();
    let in_time = took <= budget;
    let passed = out.passed && in_time;
    println!(
        "criterion {n} [{name}]: {} ({}; {:.2}s of {:.0}s budget)",
        if passed { "PASS" } else { "FAIL" },
        out.detail,
        took.as_secs_f64(),
        budget.as_secs_f64()
    );
    passed
}

/// `p_i` from Simpson's rule on `ReLU(cos t) cos(i t)` over `[0, π/2]`, where the integrand is smooth.
fn cheb_simpson(i: usize) -> f64 {
    let n = 20_000;
    let h = PI / 2.0 / n as f64;
    let f = |t: f64| t.cos() * (i as f64 * t).cos();
    let mut s = f(0.0) + f(PI / 2.0);
    for k in 1..n {
        s += if k % 2 == 1 { 4.0 } else { 2.0 } * f(k as f64 * h);
    }
    let integral = s * h / 3.0;
    if i == 0 {
        integral / PI
    } else {
        2.0 * integral / PI
    }
}

fn c1_chebyshev() -> Outcome {
    let worst = (0..=20)
        .map(|i| (relu_cheb_coeff(i) - cheb_simpson(i)).abs())
        .fold(0.0, f64::max);
    let odd_zero = (3..=19).step_by(2).all(|i| relu_cheb_coeff(i) == 0.0);
    outcome(
        worst <= 1e-6 && odd_zero,
        format!("max |p_i - quadrature| = {worst:.2e}, odd p_i exactly zero: {odd_zero}"),
    )
}

fn c2_lemma() -> Outcome {
    let cfg = EmbeddingConfig::new(M).unwrap();
    let tilde = ex1_tilde();
    let alpha = SignedAlpha::from_tilde(&tilde).unwrap();
    let grid = gen_grid(2e-4).unwrap();
    let mut worst = 0.0_f64;
    for j in 1..=2 * M as i64 {
        for sign_j in [1, -1] {
            let idx = sign_j * j;
            let a_j = sign_j as f64 * tilde[j as usize];
            for (s, sv) in [(Sign::Plus, 1.0), (Sign::Minus, -1.0)] {
                let got = lemma_expectation(&alpha, idx, s, &grid, cfg).unwrap();
                worst = worst.max((got - sv * a_j / 2.0).abs());
            }
        }
    }
    outcome(
        worst <= 5e-5,
        format!("max deviation {worst:.2e} over 0 < |j| <= 128, both signs"),
    )
}

fn c3_gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let cfg = EmbeddingConfig::new(3).unwrap();
    let d = cfg.sym_dim();
    let (mut worst_diag, mut worst_deep) = (0.0_f64, 0.0_f64);
    let mut count = 0;
    while count < 100 {
        let theta: f64 = rng.random_range(-1.0..=1.0);
        let y: f64 = rng.random_range(-1.0..=1.0);
        let x = embed_sym_ref(theta, 3);
        let w: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let c: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..=1.0)).collect();
        if w.iter().zip(&x).any(|(w, x)| (w * x).abs() < KINK) {
            continue;
        }
        let p = DiagNetParams::new(cfg, w.clone(), c.clone(), Activation::Relu).unwrap();
        let g = grad_diag_sample(&p, &embed_sym(theta, cfg).unwrap(), y).unwrap();
        let loss = |w: &[f64], c: &[f64]| {
            let f: f64 = (0..d).map(|k| c[k] * (w[k] * x[k]).max(0.0)).sum();
            0.5 * (f - y) * (f - y)
        };
        let mut analytic = g.grad_w.clone();
        analytic.extend(&g.grad_c);
        let mut fd = central_diff(&w, 1e-6, |v| loss(v, &c));
        fd.extend(central_diff(&c, 1e-6, |v| loss(&w, v)));
        worst_diag = worst_diag.max(rel_err(&analytic, &fd));
        count += 1;
    }
    for (diagonal, hidden) in [
        (true, 0),
        (true, 1),
        (true, 2),
        (false, 1),
        (false, 2),
        (false, 3),
    ] {
        let mut count = 0;
        while count < 100 {
            let seed: u64 = rng.random();
            let mut p = if diagonal {
                DeepNetParams::diag(cfg, EmbeddingKind::Doubled, hidden, 6, seed).unwrap()
            } else {
                DeepNetParams::standard(cfg, EmbeddingKind::Doubled, hidden, 6, seed).unwrap()
            };
            if let Some(dg) = p.diagonal.as_mut() {
                dg.iter_mut()
                    .for_each(|v| *v = rng.random_range(-1.5..=1.5));
            }
            for l in &mut p.layers {
                l.bias
                    .iter_mut()
                    .for_each(|v| *v = rng.random_range(-0.5..=0.5));
            }
            let theta: f64 = rng.random_range(-1.0..=1.0);
            let y: f64 = rng.random_range(-1.0..=1.0);
            let x = embed_doubled(theta, cfg).unwrap();
            if deep_forward_ref(&p, &x).1 < KINK {
                continue;
            }
            let g = grad_deep_sample(&p, theta, y).unwrap();
            let mut analytic: Vec<f64> =
                g.diagonal.iter().flat_map(|v| v.iter().copied()).collect();
            for l in &g.layers {
                analytic.extend(l.weight.iter());
                analytic.extend(l.bias.iter());
            }
            let fd = central_diff(&flatten(&p), 1e-6, |v| {
                let f = deep_forward_ref(&unflatten(&p, v), &x).0;
                0.5 * (f - y) * (f - y)
            });
            worst_deep = worst_deep.max(rel_err(&analytic, &fd));
            count += 1;
        }
    }
    outcome(
        worst_diag <= 1e-5 && worst_deep <= 1e-5,
        format!("max relative gap: diag0 {worst_diag:.2e}, diag_n/standard_n {worst_deep:.2e} (100 instances each)"),
    )
}

struct FeatureRun {
    cfg: EmbeddingConfig,
    dataset: Dataset,
    c0: Vec<f64>,
    q1: f64,
    w_t: Vec<f64>,
}

const T: usize = 2000;

fn feature_run(sigma: f64, seed: u64) -> FeatureRun {
    let cfg = EmbeddingConfig::new(M).unwrap();
    let grid = gen_grid(2e-4).unwrap();
    let dataset = make_dataset(&TargetSpec::ex1(sigma), &grid, seed).unwrap();
    let c0 = init_symmetric_c(cfg, R_C, seed + 100).unwrap();
    let q1 = default_q1(R_C, 0.8, LAMBDA, M);
    let p1 = Phase1Config::new(ETA, LAMBDA, q1, T, 256);
    let (w_t, _) = train_phase1(&dataset, &c0, &p1, seed + 200).unwrap();
    FeatureRun {
        cfg,
        dataset,
        c0,
        q1,
        w_t,
    }
}

fn c4_feature_learning(run: &FeatureRun) -> Outcome {
    let tilde = ex1_tilde();
    let alpha = SignedAlpha::from_tilde(&tilde).unwrap();
    let geom = (1.0 - (1.0 - ETA * LAMBDA).powi(T as i32)) / LAMBDA;
    let b = 2 * M as i64;
    let signed = |j: i64| {
        if j < 0 {
            -tilde[(-j) as usize]
        } else {
            tilde[j as usize]
        }
    };
    let w_star: Vec<f64> = (-b..=b)
        .zip(&run.c0)
        .map(|(j, c)| geom * c * signed(j) * 0.5 / 2.0)
        .collect();
    let linf = run
        .w_t
        .iter()
        .zip(&w_star)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let min_support = w_star
        .iter()
        .filter(|v| v.abs() > 0.0)
        .map(|v| v.abs())
        .fold(f64::INFINITY, f64::min);

    let setup = RecoverySetup {
        eta: ETA,
        lambda: LAMBDA,
        t: T,
        convention: Convention::Sampled,
        tau: None,
    };
    let report = recovery_report(&run.w_t, &run.c0, &alpha, setup).unwrap();
    let found = report.found_positive();
    let paired = [9usize, 57, 122].iter().all(|&j| {
        let (p, n) = (run.w_t[2 * M + j], run.w_t[2 * M - j]);
        p.signum() == n.signum() && p != 0.0
    });
    let passed =
        linf <= 0.1 * min_support && found == vec![9, 57, 122] && paired && report.sign_paired;
    outcome(
        passed,
        format!(
            "||w_T - w*||_inf = {linf:.2e} vs 0.1 min|w*| = {:.2e}; support {found:?}; sign pairing {paired}",
            0.1 * min_support
        ),
    )
}

fn c5_capacity(run: &FeatureRun) -> Outcome {
    let alpha = SignedAlpha::from_tilde(&ex1_tilde()).unwrap();
    let cw = capacity_weights(&alpha, &run.w_t, 1e-8).unwrap();
    let truth = run.dataset.truth();
    let (mut num, mut den) = (0.0, 0.0);
    for (&theta, &f) in run.dataset.theta.iter().zip(truth) {
        let x = embed_sym_ref(theta, M);
        let pred: f64 = (0..x.len())
            .map(|k| cw.c_tilde[k] * (run.w_t[k] * x[k]).max(0.0))
            .sum();
        num += (pred - f) * (pred - f);
        den += f * f;
    }
    let rel = (num / den).sqrt();
    let bound = 8.0 * LAMBDA * (M as f64).sqrt() / (R_C * R_C);
    let linf = cw.c_tilde.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    outcome(
        rel <= 1e-3 && linf <= bound,
        format!("relative L2 {rel:.2e}; ||c~||_inf = {linf:.3} vs {bound:.1}"),
    )
}

fn c6_comparative() -> Outcome {
    let settings = Settings::default();
    let seeds = [0u64, 1, 2];
    let mut lines = Vec::new();
    let mut all = true;
    for preset in [Preset::Ex1, Preset::Ex2, Preset::Ex3] {
        let mut wins = 0;
        let mut summary = Vec::new();
        for &seed in &seeds {
            let ds = build_dataset(preset, &settings, seed).unwrap();
            let am = clean_alpha_max(preset, &ds, settings.m).unwrap();
            let models: Vec<ModelKind> = match preset {
                Preset::Ex3 => preset
                    .models()
                    .into_iter()
                    .filter(|k| *k != ModelKind::LayerwiseDiag0)
                    .collect(),
                _ => preset.models(),
            };
            let errs: Vec<(ModelKind, f64)> = models
                .iter()
                .map(|&k| (k, run_model(k, &ds, &settings, am, seed).unwrap().rel_l2))
                .collect();
            let err = |k: ModelKind| errs.iter().find(|(m, _)| *m == k).unwrap().1;
            let ok = match preset {
                Preset::Ex3 => errs
                    .iter()
                    .all(|&(k, e)| k == ModelKind::Diag(2) || err(ModelKind::Diag(2)) < e),
                _ => {
                    let s1 = err(ModelKind::Standard(1));
                    [
                        ModelKind::LayerwiseDiag0,
                        ModelKind::Diag(0),
                        ModelKind::Diag(1),
                    ]
                    .iter()
                    .all(|&k| err(k) < s1)
                }
            };
            wins += usize::from(ok);
            let listed: Vec<String> = errs.iter().map(|(k, e)| format!("{k}={e:.3}")).collect();
            summary.push(format!("seed {seed}: {}", listed.join(" ")));
        }
        let held = wins * 2 > seeds.len();
        all &= held;
        lines.push(format!(
            "{} ordering held in {wins}/3 seeds [{}]",
            preset.name(),
            summary.join("; ")
        ));
    }
    outcome(all, lines.join(" | "))
}

fn c7_hessian(runs: &[&FeatureRun]) -> Outcome {
    let mut details = Vec::new();
    let mut ok = true;
    for run in runs {
        let h = hessian_sup_check(&run.w_t, Activation::Relu, &run.dataset, run.q1).unwrap();
        // Trace of the frozen-feature Gram bounds its largest eigenvalue from above;
        // its largest diagonal entry bounds it from below.
        let n = run.dataset.len() as f64;
        let mut diag = vec![0.0; run.cfg.sym_dim()];
        for &theta in &run.dataset.theta {
            let x = embed_sym_ref(theta, M);
            for k in 0..x.len() {
                let phi = (run.w_t[k] * x[k]).max(0.0);
                diag[k] += phi * phi / n;
            }
        }
        let trace: f64 = diag.iter().sum();
        let lower = diag.iter().copied().fold(0.0, f64::max);
        let bound = 5.0 * M as f64 * run.q1 * run.q1;
        ok &= h.lambda_max <= bound
            && h.lambda_max <= trace * (1.0 + 1e-9)
            && h.lambda_max >= lower * (1.0 - 1e-9);
        details.push(format!("{:.3e}", h.lambda_max));
        ok &= (h.bound - bound).abs() <= 1e-9 * bound;
    }
    let bound = 5.0 * M as f64 * runs[0].q1 * runs[0].q1;
    outcome(
        ok,
        format!(
            "lambda_max per run [{}] vs 5mQ1^2 = {bound:.3}",
            details.join(", ")
        ),
    )
}

fn c8_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut nonexpansive = true;
    for _ in 0..1000 {
        let n = rng.random_range(1..64);
        let q: f64 = rng.random_range(0.01..3.0);
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let (pa, pb) = (project_box(&a, q), project_box(&b, q));
        let before = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        let after = pa
            .iter()
            .zip(&pb)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        nonexpansive &= after <= before;
    }

    let cfg = EmbeddingConfig::new(16).unwrap();
    let ds = make_dataset(&TargetSpec::ex1(0.4), &gen_grid(2e-3).unwrap(), 3).unwrap();
    let c0 = init_symmetric_c(cfg, R_C, 4).unwrap();
    let mut p1 = Phase1Config::new(0.5, LAMBDA, 0.02, 300, 32);
    p1.snapshot_every = 1;
    p1.eval_every = 50;
    let mut p2 = Phase2Config::new(2.0, 300, 0.5, 32, Phase2Schedule::Constant);
    p2.snapshot_every = 1;
    let (params, trace) = train_layerwise(&ds, &c0, &p1, &p2, 5).unwrap();
    let (w_snaps, c_snaps) = trace.snapshots.split_at(p1.t);
    let feasible = w_snaps.len() == p1.t
        && c_snaps.len() == p2.t_prime
        && w_snaps
            .iter()
            .all(|s| s.values.iter().all(|v| v.abs() <= p1.q1))
        && c_snaps
            .iter()
            .all(|s| s.values.iter().all(|v| v.abs() <= p2.q2));
    let (again, trace2) = train_layerwise(&ds, &c0, &p1, &p2, 5).unwrap();
    let identical = params == again
        && trace
            .loss
            .iter()
            .zip(&trace2.loss)
            .all(|(a, b)| a.to_bits() == b.to_bits())
        && trace.snapshots == trace2.snapshots
        && trace.rel_l2 == trace2.rel_l2;
    outcome(
        nonexpansive && feasible && identical,
        format!("non-expansive on 1000 pairs: {nonexpansive}; boxes after every step: {feasible}; bit-identical reruns: {identical}"),
    )
}

fn c9_snr() -> Outcome {
    let ds = make_dataset(&TargetSpec::ex1(0.4), &gen_grid(2e-4).unwrap(), 0).unwrap();
    let clean = ds.y_clean.as_ref().unwrap();
    let var = |v: &[f64]| {
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / v.len() as f64
    };
    let noise: Vec<f64> = ds.y.iter().zip(clean).map(|(y, c)| y - c).collect();
    let empirical = var(clean) / var(&noise);
    let nominal = ds.snr().unwrap();
    let ok = (empirical - 3.06).abs() <= 0.03 * 3.06 && (nominal - 3.06).abs() <= 0.03 * 3.06;
    outcome(
        ok,
        format!("empirical SNR {empirical:.3}, nominal {nominal:.3}, target 3.06 +/- 3%"),
    )
}

fn main() {
    let secs = Duration::from_secs;
    let mut results = Vec::new();
    results.push(criterion(
        1,
        "ReLU Chebyshev coefficients",
        secs(1),
        c1_chebyshev,
    ));
    results.push(criterion(2, "lemma identity", secs(10), c2_lemma));
    results.push(criterion(3, "gradient correctness", secs(30), c3_gradients));

    let mut feature = None;
    results.push(criterion(4, "feature learning", secs(120), || {
        let run = feature_run(0.1, 0);
        let out = c4_feature_learning(&run);
        feature = Some(run);
        out
    }));
    let feature = feature.expect("criterion 4 ran");
    results.push(criterion(5, "capacity weights", secs(30), || {
        c5_capacity(&feature)
    }));
    results.push(criterion(
        6,
        "end-to-end comparison",
        secs(900),
        c6_comparative,
    ));

    let noisy: Vec<FeatureRun> = (1..=2).map(|s| feature_run(0.4, s)).collect();
    results.push(criterion(7, "Hessian bound", secs(5), || {
        let mut runs = vec![&feature];
        runs.extend(noisy.iter());
        c7_hessian(&runs)
    }));
    results.push(criterion(
        8,
        "projection, feasibility, determinism",
        secs(10),
        c8_invariants,
    ));
    results.push(criterion(9, "SNR", secs(1), c9_snr));

    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
