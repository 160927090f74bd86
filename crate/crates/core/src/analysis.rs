//! Feature-recovery diagnostics, capacity weights, risks and the Hessian check.

use std::io::Write;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::embedding::{EmbeddingConfig, EmbeddingKind, FeatureMatrix};
use crate::error::{Error, Result};
use crate::model::{forward_diag_slice, Activation, DiagNetParams};
use crate::spectral::{Convention, SignedAlpha, DEFAULT_SUPPORT_REL_THRESHOLD};

pub const POWER_ITERATION_TOL: f64 = 1e-8;
pub const POWER_ITERATION_MAX: usize = 10_000;

fn check_eta_lambda(eta: f64, lambda: f64) -> Result<()> {
    let p = eta * lambda;
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Config(format!("need 0 < ηλ < 1, got {p}")));
    }
    Ok(())
}

/// `((1 − (1 − ηλ)^T) / λ) · c₀ ⊙ α / 2`, with the `½` halved again under the
/// sampled convention.
pub fn limit_feature(
    c0: &[f64],
    alpha: &SignedAlpha,
    eta: f64,
    lambda: f64,
    t: usize,
    convention: Convention,
) -> Result<Vec<f64>> {
    check_eta_lambda(eta, lambda)?;
    if c0.len() != alpha.as_slice().len() {
        return Err(Error::shape(
            alpha.as_slice().len(),
            c0.len(),
            "output weights",
        ));
    }
    let geom = (1.0 - (1.0 - eta * lambda).powi(t as i32)) / lambda;
    let k = geom * convention.scale() / 2.0;
    Ok(c0
        .iter()
        .zip(alpha.as_slice())
        .map(|(c, a)| k * c * a)
        .collect())
}

/// `|w_T|` against `|w⋆|` for one index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeRecovery {
    pub index: i64,
    pub w_t: f64,
    pub w_star: f64,
}

/// Error terms of the feature-learning bound evaluated with `C = 1`; for
/// reference next to the measured error, never as a guarantee.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryReference {
    pub delta: f64,
    pub init_term: f64,
    pub noise_term: f64,
    pub bound: f64,
    /// `r_c² (‖α‖∞ + ‖f‖∞) / (λ √m)`.
    pub corollary_order: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub convention: Convention,
    pub w_star: Vec<f64>,
    pub linf_error: f64,
    pub tau: f64,
    pub support_true: Vec<i64>,
    pub support_found: Vec<i64>,
    pub sign_paired: bool,
    pub modes: Vec<ModeRecovery>,
    pub reference: Option<TheoryReference>,
}

/// Inputs of the recovery comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecoverySetup {
    pub eta: f64,
    pub lambda: f64,
    pub t: usize,
    pub convention: Convention,
    /// Support threshold; `None` picks the default.
    pub tau: Option<f64>,
}

/// Default threshold: half the smallest `|w⋆|` on the true support, or 10% of
/// `max |w_T|` when the support is empty.
pub fn default_tau(w_t: &[f64], w_star: &[f64], support_true: &[i64], cfg: EmbeddingConfig) -> f64 {
    let min_star = support_true
        .iter()
        .map(|&j| w_star[cfg.slot(j).expect("support within band")].abs())
        .fold(f64::INFINITY, f64::min);
    if min_star.is_finite() {
        0.5 * min_star
    } else {
        0.1 * w_t.iter().fold(0.0_f64, |a, v| a.max(v.abs()))
    }
}

pub fn recovery_report(
    w_t: &[f64],
    c0: &[f64],
    alpha: &SignedAlpha,
    setup: RecoverySetup,
) -> Result<RecoveryReport> {
    let cfg = alpha.cfg();
    if w_t.len() != cfg.sym_dim() {
        return Err(Error::shape(cfg.sym_dim(), w_t.len(), "diagonal weights"));
    }
    let w_star = limit_feature(
        c0,
        alpha,
        setup.eta,
        setup.lambda,
        setup.t,
        setup.convention,
    )?;
    let linf_error = w_t
        .iter()
        .zip(&w_star)
        .fold(0.0_f64, |a, (w, s)| a.max((w - s).abs()));
    let max_alpha = alpha.tilde().iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let support_true = alpha.support(DEFAULT_SUPPORT_REL_THRESHOLD * max_alpha);
    let tau = setup
        .tau
        .unwrap_or_else(|| default_tau(w_t, &w_star, &support_true, cfg));
    let support_found: Vec<i64> = cfg
        .indices()
        .filter(|&j| j != 0 && w_t[cfg.slot(j).unwrap()].abs() > tau)
        .collect();
    let w_at = |j: i64| w_t[cfg.slot(j).unwrap()];
    let sign_paired = support_true.iter().all(|&j| {
        let (a, b) = (w_at(j), w_at(-j));
        a != 0.0 && a.signum() == b.signum()
    });
    let modes = cfg
        .indices()
        .map(|j| {
            let s = cfg.slot(j).unwrap();
            ModeRecovery {
                index: j,
                w_t: w_t[s].abs(),
                w_star: w_star[s].abs(),
            }
        })
        .collect();
    Ok(RecoveryReport {
        convention: setup.convention,
        w_star,
        linf_error,
        tau,
        support_true,
        support_found,
        sign_paired,
        modes,
        reference: None,
    })
}

impl RecoveryReport {
    /// Positive indices of the found support.
    pub fn found_positive(&self) -> Vec<i64> {
        self.support_found
            .iter()
            .copied()
            .filter(|&j| j > 0)
            .collect()
    }

    /// Smallest `|w⋆|` over the true support.
    pub fn min_support_w_star(&self, cfg: EmbeddingConfig) -> f64 {
        self.support_true
            .iter()
            .map(|&j| self.w_star[cfg.slot(j).unwrap()].abs())
            .fold(f64::INFINITY, f64::min)
    }

    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }

    /// CSV with columns `index,w_t,w_star`.
    pub fn write_modes_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["index", "w_t", "w_star"])?;
        for m in &self.modes {
            wtr.write_record([m.index.to_string(), m.w_t.to_string(), m.w_star.to_string()])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Inputs to the reference bound beyond the recovery setup.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundInputs {
    pub r_c: f64,
    pub q1: f64,
    pub batch: usize,
    pub f_sup: f64,
    pub kappa: f64,
    /// Failure probability per step; must lie in `(0, 1/T)`.
    pub delta: f64,
}

/// Evaluates the feature-learning error bound with unit constants.
pub fn theory_reference(
    w1: &[f64],
    c0: &[f64],
    alpha: &SignedAlpha,
    setup: RecoverySetup,
    inputs: BoundInputs,
) -> Result<TheoryReference> {
    check_eta_lambda(setup.eta, setup.lambda)?;
    let (eta, lambda, t) = (setup.eta, setup.lambda, setup.t);
    if !(inputs.delta > 0.0 && inputs.delta < 1.0 / t as f64) {
        return Err(Error::Config(format!(
            "δ = {} must lie in (0, 1/T)",
            inputs.delta
        )));
    }
    let m = alpha.m() as f64;
    let half = convention_half(setup.convention);
    let init = w1
        .iter()
        .zip(c0)
        .zip(alpha.as_slice())
        .fold(0.0_f64, |acc, ((w, c), a)| {
            acc.max((w - eta * c * a * half).abs())
        });
    let init_term = (1.0 - eta * lambda).powi(t as i32 - 1) * init;
    let (rc2, log_m, log_d) = (
        inputs.r_c * inputs.r_c,
        m.ln().sqrt(),
        (1.0 / inputs.delta).ln(),
    );
    let sqrt5 = 5f64.sqrt();
    let b = inputs.batch as f64;
    let noise_term = (sqrt5 * rc2 * inputs.q1
        + 2.0 * sqrt5 * rc2 * inputs.q1 * log_m * log_d / b.sqrt()
        + 2.0 * (inputs.f_sup + inputs.kappa) * inputs.r_c * log_m * log_d / (b * m).sqrt())
        / lambda;
    let alpha_sup = alpha.tilde().iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    Ok(TheoryReference {
        delta: inputs.delta,
        init_term,
        noise_term,
        bound: init_term + noise_term,
        corollary_order: rc2 * (alpha_sup + inputs.f_sup) / (lambda * m.sqrt()),
    })
}

fn convention_half(convention: Convention) -> f64 {
    convention.scale() / 2.0
}

/// Output weights that make the frozen features reproduce `Σ α_j x_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityWeights {
    pub c_tilde: Vec<f64>,
    /// Support indices whose `|w_T|` fell below the floor (left at 0).
    pub degenerate: Vec<i64>,
}

impl CapacityWeights {
    pub fn linf(&self) -> f64 {
        self.c_tilde.iter().fold(0.0_f64, |a, v| a.max(v.abs()))
    }
}

/// `c̃_j = α_j / w_j` on the support of `α` where `|w_j| ≥ floor`, else 0.
///
/// The signed divisor keeps `c̃_j σ(w_j x_j) + c̃_{-j} σ(w_{-j} x_{-j}) = α_j x_j`
/// whenever `w_j` and `w_{-j}` share a sign, whichever sign that is.
pub fn capacity_weights(alpha: &SignedAlpha, w_t: &[f64], floor: f64) -> Result<CapacityWeights> {
    if !(floor > 0.0) {
        return Err(Error::Config(format!(
            "floor must be positive, got {floor}"
        )));
    }
    let cfg = alpha.cfg();
    if w_t.len() != cfg.sym_dim() {
        return Err(Error::shape(cfg.sym_dim(), w_t.len(), "diagonal weights"));
    }
    let max_alpha = alpha.tilde().iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let zero = DEFAULT_SUPPORT_REL_THRESHOLD * max_alpha;
    let mut c_tilde = vec![0.0; w_t.len()];
    let mut degenerate = Vec::new();
    for j in cfg.indices() {
        let s = cfg.slot(j).unwrap();
        let a = alpha.get(j);
        if a.abs() <= zero {
            continue;
        }
        if w_t[s].abs() < floor {
            degenerate.push(j);
        } else {
            c_tilde[s] = a / w_t[s];
        }
    }
    // The constant mode has no mirrored partner: σ(w₀) vanishes for w₀ < 0.
    if alpha.get(0).abs() > zero && w_t[cfg.slot(0).unwrap()] < 0.0 && !degenerate.contains(&0) {
        degenerate.push(0);
        c_tilde[cfg.slot(0).unwrap()] = 0.0;
    }
    Ok(CapacityWeights {
        c_tilde,
        degenerate,
    })
}

/// `½ mean (ŷ − y)²`.
pub fn empirical_risk(params: &DiagNetParams, dataset: &Dataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Data("empirical risk of an empty dataset".into()));
    }
    let feats = FeatureMatrix::new(&dataset.theta, params.cfg, EmbeddingKind::Symmetrized)?;
    let total: f64 = (0..feats.rows())
        .map(|i| {
            let r = forward_diag_slice(&params.w, &params.c, params.activation, feats.row(i))
                - dataset.y[i];
            0.5 * r * r
        })
        .sum();
    Ok(total / dataset.len() as f64)
}

/// Empirical risk plus `(λ/2) ‖w‖₂²`.
pub fn empirical_risk_reg(params: &DiagNetParams, dataset: &Dataset, lambda: f64) -> Result<f64> {
    let w2: f64 = params.w.iter().map(|w| w * w).sum();
    Ok(empirical_risk(params, dataset)? + 0.5 * lambda * w2)
}

/// `‖pred − truth‖₂ / ‖truth‖₂`.
pub fn relative_l2(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::shape(truth.len(), pred.len(), "predictions"));
    }
    let den: f64 = truth.iter().map(|t| t * t).sum();
    if den == 0.0 {
        return Err(Error::Numeric(
            "relative error against a zero reference".into(),
        ));
    }
    let num: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((num / den).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HessianCheck {
    pub lambda_max: f64,
    pub bound: f64,
    pub ok: bool,
    pub iterations: usize,
}

/// Largest eigenvalue of the frozen-feature Gram `(1/L) Σ σ(w⊙x) σ(w⊙x)ᵀ`
/// against `5 m Q₁²`.
pub fn hessian_sup_check(
    w_t: &[f64],
    activation: Activation,
    dataset: &Dataset,
    q1: f64,
) -> Result<HessianCheck> {
    if dataset.is_empty() {
        return Err(Error::Data("Hessian of an empty dataset".into()));
    }
    let d = w_t.len();
    if d < 5 || !(d - 1).is_multiple_of(4) {
        return Err(Error::Shape(format!(
            "weight vector length {d} is not 4m + 1"
        )));
    }
    let cfg = EmbeddingConfig::new((d - 1) / 4)?;
    let feats = FeatureMatrix::new(&dataset.theta, cfg, EmbeddingKind::Symmetrized)?;
    let w = Array1::from(w_t.to_vec());
    let x = Array2::from_shape_vec((feats.rows(), d), feats.as_slice().to_vec())
        .expect("feature matrix shape");
    let phi = (&x * &w).mapv(|z| activation.apply(z));
    let gram = phi.t().dot(&phi) / dataset.len() as f64;
    let (lambda_max, iterations) = power_iteration(&gram)?;
    let bound = 5.0 * cfg.m() as f64 * q1 * q1;
    Ok(HessianCheck {
        lambda_max,
        bound,
        ok: lambda_max <= bound,
        iterations,
    })
}

/// Dominant eigenvalue of a symmetric positive semidefinite matrix.
pub fn power_iteration(a: &Array2<f64>) -> Result<(f64, usize)> {
    let n = a.nrows();
    if a.iter().all(|v| *v == 0.0) {
        return Ok((0.0, 0));
    }
    let mut v = Array1::from_elem(n, 1.0 / (n as f64).sqrt());
    // A deterministic, non-symmetric start avoids landing orthogonal to the top
    // eigenvector for structured matrices.
    for (i, x) in v.iter_mut().enumerate() {
        *x *= 1.0 + 0.01 * ((i * 7919) % 101) as f64;
    }
    let norm = v.dot(&v).sqrt();
    v /= norm;
    let mut est = 0.0;
    for it in 1..=POWER_ITERATION_MAX {
        let av = a.dot(&v);
        let next = v.dot(&av);
        let norm = av.dot(&av).sqrt();
        if norm == 0.0 {
            return Ok((0.0, it));
        }
        v = av / norm;
        if (next - est).abs() <= POWER_ITERATION_TOL * next.abs().max(1e-300) {
            return Ok((next, it));
        }
        est = next;
    }
    Err(Error::Numeric(format!(
        "power iteration did not converge in {POWER_ITERATION_MAX} steps"
    )))
}
