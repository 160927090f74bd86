//! Self-check suites run by `--mode verify`, each producing a JSON-ready report.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::analysis::{
    capacity_weights, hessian_sup_check, recovery_report, relative_l2, RecoverySetup,
};
use crate::datagen::{eval_target, gen_grid, make_dataset, Dataset, TargetSpec};
use crate::embedding::{
    embed_doubled, embed_sym, EmbeddingConfig, EmbeddingKind, FeatureMatrix, ModeKind,
};
use crate::error::{Error, Result};
use crate::model::{
    forward_diag, forward_diag_slice, grad_deep_sample, grad_diag_sample, init_symmetric_c,
    Activation, DeepNetParams, DiagNetParams,
};
use crate::spectral::{
    fourier_coeffs, integrate, lemma_expectation, relu_cheb_coeff, signed_alpha, trapezoid_weights,
    Convention, Sign, SignedAlpha, SpectrumReport,
};
use crate::train::{default_q1, default_q2, train_phase1, Phase1Config};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Embedding,
    Spectral,
    Gradients,
    Lemma,
    Feature,
    Hessian,
    All,
}

impl Suite {
    pub const EACH: [Suite; 6] = [
        Suite::Embedding,
        Suite::Spectral,
        Suite::Gradients,
        Suite::Lemma,
        Suite::Feature,
        Suite::Hessian,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Embedding => "embedding",
            Suite::Spectral => "spectral",
            Suite::Gradients => "gradients",
            Suite::Lemma => "lemma",
            Suite::Feature => "feature",
            Suite::Hessian => "hessian",
            Suite::All => "all",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::EACH
            .into_iter()
            .chain([Suite::All])
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown suite `{s}`")))
    }
}

/// One measured quantity against its tolerance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl Check {
    fn at_most(name: &str, value: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            passed: value <= tolerance,
            value,
            tolerance,
            detail: String::new(),
        }
    }

    fn holds(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.into(),
            passed,
            value: f64::from(u8::from(passed)),
            tolerance: 1.0,
            detail,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub passed: bool,
    pub seconds: f64,
    pub checks: Vec<Check>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub seed: u64,
    pub suites: Vec<SuiteReport>,
}

pub fn run(suite: Suite, seed: u64) -> Result<VerifyReport> {
    let suites = match suite {
        Suite::All => Suite::EACH.to_vec(),
        s => vec![s],
    };
    let mut reports = Vec::with_capacity(suites.len());
    for s in suites {
        let start = Instant::now();
        let checks = match s {
            Suite::Embedding => embedding_checks(seed)?,
            Suite::Spectral => spectral_checks()?,
            Suite::Gradients => gradient_checks(seed)?,
            Suite::Lemma => lemma_checks()?,
            Suite::Feature => feature_checks(seed)?,
            Suite::Hessian => hessian_checks(seed)?,
            Suite::All => unreachable!("expanded above"),
        };
        reports.push(SuiteReport {
            suite: s,
            passed: checks.iter().all(|c| c.passed),
            seconds: start.elapsed().as_secs_f64(),
            checks,
        });
    }
    Ok(VerifyReport {
        passed: reports.iter().all(|r| r.passed),
        seed,
        suites: reports,
    })
}

fn embedding_checks(seed: u64) -> Result<Vec<Check>> {
    let cfg = EmbeddingConfig::new(8)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut anti = 0.0_f64;
    let mut doubled = 0.0_f64;
    for _ in 0..100 {
        let theta: f64 = rng.random_range(-1.0..=1.0);
        let x = embed_sym(theta, cfg)?;
        anti = anti.max((x.get(0) - 1.0).abs());
        for j in 1..=cfg.max_index() {
            anti = anti.max((x.get(-j) + x.get(j)).abs());
        }
        let d = embed_doubled(theta, cfg)?;
        let half = d.len() / 2;
        doubled = doubled.max(
            (0..half)
                .map(|i| (d[i] + d[half + i]).abs())
                .fold(0.0, f64::max),
        );
    }

    // Mass-2 Gram of the non-negative indices: diag(2, 1, 1, ...).
    let grid = gen_grid(2e-4)?;
    let weights = trapezoid_weights(&grid)?;
    let feats = FeatureMatrix::new(&grid, cfg, EmbeddingKind::Symmetrized)?;
    let off = 2 * cfg.m();
    let n = 2 * cfg.m() + 1;
    let mut gram_err = 0.0_f64;
    for a in 0..n {
        for b in a..n {
            let g: f64 = (0..feats.rows())
                .map(|r| weights[r] * feats.row(r)[off + a] * feats.row(r)[off + b])
                .sum();
            let expected = match (a, b) {
                (0, 0) => 2.0,
                _ if a == b => 1.0,
                _ => 0.0,
            };
            gram_err = gram_err.max((g - expected).abs());
        }
    }
    Ok(vec![
        Check::at_most("antisymmetry", anti, 0.0),
        Check::at_most("doubled_negation", doubled, 0.0),
        Check::at_most("orthogonality", gram_err, 1e-6),
    ])
}

/// `p_i` by trapezoid projection of `ReLU(cos t)` onto `cos(i t)` over `[0, π]`.
pub fn relu_cheb_quadrature(i: usize, n: usize) -> f64 {
    let h = PI / n as f64;
    let f = |k: usize| {
        let t = k as f64 * h;
        t.cos().max(0.0) * (i as f64 * t).cos()
    };
    let inner: f64 = (1..n).map(f).sum();
    let integral = h * (inner + 0.5 * (f(0) + f(n)));
    if i == 0 {
        integral / PI
    } else {
        2.0 * integral / PI
    }
}

fn ex1_spectrum(m: usize) -> Result<(Vec<f64>, SpectrumReport, Vec<f64>)> {
    let grid = gen_grid(2e-4)?;
    let spec = TargetSpec::ex1(0.0);
    let clean: Vec<f64> = grid.iter().map(|&t| eval_target(&spec, t)).collect();
    let report = fourier_coeffs(&clean, &grid, m)?;
    Ok((grid, report, clean))
}

fn spectral_checks() -> Result<Vec<Check>> {
    let cheb_err = (0..=20)
        .map(|i| (relu_cheb_coeff(i) - relu_cheb_quadrature(i, 200_000)).abs())
        .fold(0.0, f64::max);
    let odd_exact = (3..=41).step_by(2).all(|i| relu_cheb_coeff(i) == 0.0);

    let (grid, report, clean) = ex1_spectrum(64)?;
    let modes = report.support_modes();
    let expected = vec![
        (5, ModeKind::Cosine),
        (29, ModeKind::Cosine),
        (61, ModeKind::Sine),
    ];

    let constant = fourier_coeffs(&vec![1.5; grid.len()], &grid, 8)?;
    let off_zero = constant.alpha_tilde[1..]
        .iter()
        .fold(0.0_f64, |a, v| a.max(v.abs()));
    let constant_err = (constant.alpha_tilde[0] - 1.5).abs().max(off_zero);

    let weights = trapezoid_weights(&grid)?;
    let parseval_lhs = integrate(&weights, &clean.iter().map(|v| v * v).collect::<Vec<_>>());
    let a = &report.alpha_tilde;
    let parseval_rhs = 2.0 * a[0] * a[0] + a[1..].iter().map(|v| v * v).sum::<f64>();

    Ok(vec![
        Check::at_most("relu_chebyshev_vs_quadrature", cheb_err, 1e-6),
        Check::holds(
            "relu_chebyshev_odd_zero",
            odd_exact,
            "p_i for odd 3 <= i <= 41".into(),
        ),
        Check::holds("ex1_support", modes == expected, format!("{modes:?}")),
        Check::at_most("constant_only_index_zero", constant_err, 1e-12),
        Check::at_most("parseval", (parseval_lhs - parseval_rhs).abs(), 1e-6),
    ])
}

const FD_STEP: f64 = 1e-6;
const KINK_MARGIN: f64 = 1e-4;

fn rel_gap(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let scale = a
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

fn central_diff(params: &mut [f64], loss: &mut dyn FnMut(&[f64]) -> f64) -> Vec<f64> {
    (0..params.len())
        .map(|k| {
            let orig = params[k];
            params[k] = orig + FD_STEP;
            let up = loss(params);
            params[k] = orig - FD_STEP;
            let down = loss(params);
            params[k] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

fn deep_flat(p: &DeepNetParams) -> Vec<f64> {
    let mut v: Vec<f64> = p.diagonal.iter().flat_map(|d| d.iter().copied()).collect();
    for l in &p.layers {
        v.extend(l.weight.iter());
        v.extend(l.bias.iter());
    }
    v
}

fn deep_unflat(p: &mut DeepNetParams, v: &[f64]) {
    let mut it = v.iter().copied();
    if let Some(d) = p.diagonal.as_mut() {
        d.iter_mut()
            .for_each(|x| *x = it.next().expect("flat length"));
    }
    for l in &mut p.layers {
        l.weight
            .iter_mut()
            .for_each(|x| *x = it.next().expect("flat length"));
        l.bias
            .iter_mut()
            .for_each(|x| *x = it.next().expect("flat length"));
    }
}

/// Smallest `|pre-activation|` over the ReLU units of a deep network at `x`.
fn deep_margin(p: &DeepNetParams, x: &Array1<f64>) -> f64 {
    let mut margin = f64::INFINITY;
    let mut h = match &p.diagonal {
        Some(d) => {
            let z = x * d;
            margin = z.iter().fold(margin, |a, v| a.min(v.abs()));
            z.mapv(|v| v.max(0.0))
        }
        None => x.clone(),
    };
    let last = p.layers.len() - 1;
    for (i, l) in p.layers.iter().enumerate() {
        let z = h.dot(&l.weight) + &l.bias;
        if i < last {
            margin = z.iter().fold(margin, |a, v| a.min(v.abs()));
        }
        h = z.mapv(|v| v.max(0.0));
    }
    margin
}

/// Worst relative gap between analytic and finite-difference gradients of
/// each architecture over `instances` kink-free random draws.
pub fn gradient_gaps(seed: u64, instances: usize) -> Result<Vec<(String, f64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = EmbeddingConfig::new(3)?;
    let mut gaps = vec![
        ("diag_relu".to_string(), 0.0_f64),
        ("diag_identity".to_string(), 0.0),
    ];
    for (arch, act) in [(0, Activation::Relu), (1, Activation::Identity)] {
        let mut done = 0;
        while done < instances {
            let theta: f64 = rng.random_range(-1.0..=1.0);
            let y: f64 = rng.random_range(-1.0..=1.0);
            let d = cfg.sym_dim();
            let w: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..=1.0)).collect();
            let c: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..=1.0)).collect();
            let x = embed_sym(theta, cfg)?;
            if act == Activation::Relu
                && w.iter()
                    .zip(x.as_slice())
                    .any(|(w, x)| (w * x).abs() < KINK_MARGIN)
            {
                continue;
            }
            let params = DiagNetParams::new(cfg, w.clone(), c.clone(), act)?;
            let g = grad_diag_sample(&params, &x, y)?;
            let analytic: Vec<f64> = g.grad_w.iter().chain(&g.grad_c).copied().collect();
            let mut flat: Vec<f64> = w.into_iter().chain(c).collect();
            let xs = x.as_slice().to_vec();
            let fd = central_diff(&mut flat, &mut |v| {
                let r = forward_diag_slice(&v[..d], &v[d..], act, &xs) - y;
                0.5 * r * r
            });
            gaps[arch].1 = gaps[arch].1.max(rel_gap(&analytic, &fd));
            done += 1;
        }
    }

    let shapes: [(&str, bool, usize); 4] = [
        ("deep_diag0", true, 0),
        ("deep_diag2", true, 2),
        ("standard1", false, 1),
        ("standard3", false, 3),
    ];
    for (name, diagonal, hidden) in shapes {
        let mut worst = 0.0_f64;
        let mut done = 0;
        while done < instances {
            let s: u64 = rng.random();
            let mut p = if diagonal {
                let mut p = DeepNetParams::diag(cfg, EmbeddingKind::Doubled, hidden, 6, s)?;
                let d = p.diagonal.as_mut().expect("diagonal model");
                d.iter_mut().for_each(|v| *v = rng.random_range(-1.0..=1.0));
                p
            } else {
                DeepNetParams::standard(cfg, EmbeddingKind::Doubled, hidden, 6, s)?
            };
            for l in &mut p.layers {
                l.bias
                    .iter_mut()
                    .for_each(|v| *v = rng.random_range(-0.5..=0.5));
            }
            let theta: f64 = rng.random_range(-1.0..=1.0);
            let y: f64 = rng.random_range(-1.0..=1.0);
            let x = p.embed(theta)?;
            if deep_margin(&p, &x) < KINK_MARGIN {
                continue;
            }
            let g = grad_deep_sample(&p, theta, y)?;
            let mut analytic: Vec<f64> =
                g.diagonal.iter().flat_map(|d| d.iter().copied()).collect();
            for l in &g.layers {
                analytic.extend(l.weight.iter());
                analytic.extend(l.bias.iter());
            }
            let mut flat = deep_flat(&p);
            let mut probe = p.clone();
            let fd = central_diff(&mut flat, &mut |v| {
                deep_unflat(&mut probe, v);
                let r = crate::model::forward_deep(&probe, theta).expect("valid probe") - y;
                0.5 * r * r
            });
            worst = worst.max(rel_gap(&analytic, &fd));
            done += 1;
        }
        gaps.push((name.to_string(), worst));
    }
    Ok(gaps)
}

fn gradient_checks(seed: u64) -> Result<Vec<Check>> {
    Ok(gradient_gaps(seed, 100)?
        .into_iter()
        .map(|(name, gap)| Check::at_most(&format!("finite_difference_{name}"), gap, 1e-5))
        .collect())
}

/// Largest `|lemma_expectation(α, j, s) − s·α̃_j/2|` over `0 < |j| ≤ 2m`, both signs, on ex-1.
pub fn lemma_gap(m: usize) -> Result<f64> {
    let (grid, report, _) = ex1_spectrum(m)?;
    let alpha = signed_alpha(&report);
    let cfg = EmbeddingConfig::new(m)?;
    let mut worst = 0.0_f64;
    for j in cfg.indices().filter(|&j| j != 0) {
        for s in [Sign::Plus, Sign::Minus] {
            let got = lemma_expectation(&alpha, j, s, &grid, cfg)?;
            let want = s.value() * alpha.get(j) / 2.0;
            worst = worst.max((got - want).abs());
        }
    }
    Ok(worst)
}

fn lemma_checks() -> Result<Vec<Check>> {
    Ok(vec![Check::at_most(
        "lemma_identity_ex1",
        lemma_gap(64)?,
        5e-5,
    )])
}

/// Phase-1 run on ex-1 at the feature-learning setting.
#[derive(Debug, Clone)]
pub struct FeatureRun {
    pub cfg: EmbeddingConfig,
    pub dataset: Dataset,
    pub alpha: SignedAlpha,
    pub c0: Vec<f64>,
    pub p1: Phase1Config,
    pub w_t: Vec<f64>,
}

pub fn feature_run(sigma: f64, seed: u64) -> Result<FeatureRun> {
    let (m, r_c, lambda) = (64, 0.5, 0.1);
    let cfg = EmbeddingConfig::new(m)?;
    let grid = gen_grid(2e-4)?;
    let dataset = make_dataset(&TargetSpec::ex1(sigma), &grid, seed)?;
    let report = fourier_coeffs(dataset.truth(), &grid, m)?;
    let alpha = signed_alpha(&report);
    let a_max = report
        .alpha_tilde
        .iter()
        .fold(0.0_f64, |a, v| a.max(v.abs()));
    let c0 = init_symmetric_c(cfg, r_c, seed.wrapping_add(1))?;
    let p1 = Phase1Config::new(0.01, lambda, default_q1(r_c, a_max, lambda, m), 2000, 256);
    let (w_t, _) = train_phase1(&dataset, &c0, &p1, seed.wrapping_add(2))?;
    Ok(FeatureRun {
        cfg,
        dataset,
        alpha,
        c0,
        p1,
        w_t,
    })
}

/// Relative-L2 error of the capacity-weight reconstruction and `‖c̃‖∞`.
pub fn capacity_fit(run: &FeatureRun) -> Result<(f64, f64)> {
    let cw = capacity_weights(&run.alpha, &run.w_t, 1e-8)?;
    let params = DiagNetParams::new(
        run.cfg,
        run.w_t.clone(),
        cw.c_tilde.clone(),
        Activation::Relu,
    )?;
    let pred = run
        .dataset
        .theta
        .iter()
        .map(|&t| forward_diag(&params, &embed_sym(t, run.cfg)?))
        .collect::<Result<Vec<_>>>()?;
    Ok((relative_l2(&pred, run.dataset.truth())?, cw.linf()))
}

fn feature_checks(seed: u64) -> Result<Vec<Check>> {
    let run = feature_run(0.1, seed)?;
    let setup = RecoverySetup {
        eta: run.p1.eta,
        lambda: run.p1.lambda,
        t: run.p1.t,
        convention: Convention::Sampled,
        tau: None,
    };
    let rep = recovery_report(&run.w_t, &run.c0, &run.alpha, setup)?;
    let min_star = rep.min_support_w_star(run.cfg);
    let found = rep.found_positive();
    let (rel, linf) = capacity_fit(&run)?;
    Ok(vec![
        Check::at_most("w_linf_to_limit", rep.linf_error, 0.1 * min_star),
        Check::holds(
            "support_found",
            found == vec![9, 57, 122],
            format!("{found:?}"),
        ),
        Check::holds("sign_pairing", rep.sign_paired, String::new()),
        Check::at_most("capacity_rel_l2", rel, 1e-3),
        Check::at_most(
            "capacity_linf",
            linf,
            default_q2(run.p1.lambda, run.cfg.m(), 0.5),
        ),
    ])
}

fn hessian_checks(seed: u64) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    for k in 0..3 {
        let run = feature_run(0.4, seed.wrapping_add(10 * k))?;
        let h = hessian_sup_check(&run.w_t, Activation::Relu, &run.dataset, run.p1.q1)?;
        checks.push(Check::at_most(
            &format!("gram_lambda_max_run{k}"),
            h.lambda_max,
            h.bound,
        ));
    }
    Ok(checks)
}
