use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{sign0, Activation};
use crate::embedding::{fill_sym, EmbeddingConfig, FourierVector};
use crate::error::{Error, Result};
use crate::spectral::{trapezoid_weights, Convention, SignedAlpha};

/// Parameters of `f̂(x; w, c) = Σ_j c_j σ(w_j x_j)` over the symmetrized embedding.
///
/// `w` and `c` are stored in embedding slot order (slot 0 is index `-2m`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagNetParams {
    pub cfg: EmbeddingConfig,
    pub w: Vec<f64>,
    pub c: Vec<f64>,
    pub activation: Activation,
    pub r_c: f64,
    pub q1: f64,
    pub q2: f64,
}

impl DiagNetParams {
    pub fn new(
        cfg: EmbeddingConfig,
        w: Vec<f64>,
        c: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        let d = cfg.sym_dim();
        if w.len() != d {
            return Err(Error::shape(d, w.len(), "diagonal weights"));
        }
        if c.len() != d {
            return Err(Error::shape(d, c.len(), "output weights"));
        }
        Ok(Self {
            cfg,
            w,
            c,
            activation,
            r_c: 1.0,
            q1: 10.0,
            q2: 10.0,
        })
    }

    pub fn with_boxes(mut self, q1: f64, q2: f64) -> Self {
        self.q1 = q1;
        self.q2 = q2;
        self
    }

    pub fn w_at(&self, j: i64) -> f64 {
        self.w[self.cfg.slot(j).expect("index within band")]
    }

    pub fn c_at(&self, j: i64) -> f64 {
        self.c[self.cfg.slot(j).expect("index within band")]
    }

    fn check_input(&self, x: &FourierVector) -> Result<()> {
        if x.cfg() != self.cfg {
            return Err(Error::Shape(format!(
                "embedding band {} does not match network band {}",
                x.cfg().m(),
                self.cfg.m()
            )));
        }
        Ok(())
    }
}

/// `Σ_j c_j σ(w_j x_j)` on raw slices of equal length.
#[inline]
pub fn forward_diag_slice(w: &[f64], c: &[f64], act: Activation, x: &[f64]) -> f64 {
    w.iter()
        .zip(c)
        .zip(x)
        .map(|((w, c), x)| c * act.apply(w * x))
        .sum()
}

pub fn forward_diag(params: &DiagNetParams, x: &FourierVector) -> Result<f64> {
    params.check_input(x)?;
    Ok(forward_diag_slice(
        &params.w,
        &params.c,
        params.activation,
        x.as_slice(),
    ))
}

/// Per-sample gradient of `½(f̂ - y)²`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagGrad {
    pub grad_w: Vec<f64>,
    pub grad_c: Vec<f64>,
    /// `f̂ - y`.
    pub residual: f64,
}

pub fn grad_diag_sample(params: &DiagNetParams, x: &FourierVector, y: f64) -> Result<DiagGrad> {
    params.check_input(x)?;
    let act = params.activation;
    let x = x.as_slice();
    let residual = forward_diag_slice(&params.w, &params.c, act, x) - y;
    let mut grad_w = Vec::with_capacity(x.len());
    let mut grad_c = Vec::with_capacity(x.len());
    for ((&w, &c), &xj) in params.w.iter().zip(&params.c).zip(x) {
        let z = w * xj;
        grad_w.push(residual * c * act.derivative(z) * xj);
        grad_c.push(residual * act.apply(z));
    }
    Ok(DiagGrad {
        grad_w,
        grad_c,
        residual,
    })
}

/// Symmetric initialization: `c_j = ±r_c/√m` for `j ≥ 0`, `c_{-j} = -c_j`.
pub fn init_symmetric_c(cfg: EmbeddingConfig, r_c: f64, seed: u64) -> Result<Vec<f64>> {
    if !(r_c > 0.0) {
        return Err(Error::Config(format!("r_c must be positive, got {r_c}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mag = r_c / (cfg.m() as f64).sqrt();
    let off = 2 * cfg.m();
    let mut c = vec![0.0; cfg.sym_dim()];
    for j in 0..=off {
        let v = if rng.random::<bool>() { mag } else { -mag };
        c[off + j] = v;
        if j > 0 {
            c[off - j] = -v;
        }
    }
    Ok(c)
}

/// Symmetric initialization on the doubled embedding: `±r_c/√m` on the first
/// half, negated on the second.
pub fn init_symmetric_c_doubled(cfg: EmbeddingConfig, r_c: f64, seed: u64) -> Result<Vec<f64>> {
    if !(r_c > 0.0) {
        return Err(Error::Config(format!("r_c must be positive, got {r_c}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mag = r_c / (cfg.m() as f64).sqrt();
    let half = 2 * cfg.m() + 1;
    let first: Vec<f64> = (0..half)
        .map(|_| if rng.random::<bool>() { mag } else { -mag })
        .collect();
    Ok(first
        .iter()
        .copied()
        .chain(first.iter().map(|v| -v))
        .collect())
}

struct Quadrature {
    thetas: Vec<f64>,
    weights: Vec<f64>,
}

impl Quadrature {
    fn new(grid: &[f64], m: usize, convention: Convention) -> Result<Self> {
        let n = grid.len();
        if n < 4 * m + 2 {
            return Err(Error::Resolution(format!(
                "{n} grid points cannot resolve band m = {m}"
            )));
        }
        let scale = convention.scale();
        let weights = trapezoid_weights(grid)?
            .into_iter()
            .map(|w| w * scale)
            .collect();
        Ok(Self {
            thetas: grid.to_vec(),
            weights,
        })
    }
}

/// `h(w)_j = Σ_k c_k |w_k| E[σ(sign(w_k) x_k) σ(sign(w_j) x_j)]` by quadrature.
pub fn h_vector(params: &DiagNetParams, grid: &[f64], convention: Convention) -> Result<Vec<f64>> {
    let m = params.cfg.m();
    let q = Quadrature::new(grid, m, convention)?;
    let d = params.cfg.sym_dim();
    let act = params.activation;
    let signs: Vec<f64> = params.w.iter().map(|&w| sign0(w)).collect();
    let mut x = vec![0.0; d];
    let mut h = vec![0.0; d];
    for (&theta, &wq) in q.thetas.iter().zip(&q.weights) {
        fill_sym(theta, m, &mut x);
        let pred: f64 = (0..d)
            .map(|k| params.c[k] * params.w[k].abs() * act.apply(signs[k] * x[k]))
            .sum();
        for j in 0..d {
            h[j] += wq * pred * act.apply(signs[j] * x[j]);
        }
    }
    Ok(h)
}

/// Population gradient `∇_w R^λ` for a noise-free band-limited target `Σ α̃_l x_l`.
///
/// Evaluated as the prediction term minus the target term plus `λw`, each
/// expectation by trapezoid quadrature on `grid` under `convention`.
pub fn population_grad_w(
    params: &DiagNetParams,
    alpha: &SignedAlpha,
    grid: &[f64],
    lambda: f64,
    convention: Convention,
) -> Result<Vec<f64>> {
    let m = params.cfg.m();
    if alpha.m() != m {
        return Err(Error::Shape(format!(
            "alpha band {} does not match network band {m}",
            alpha.m()
        )));
    }
    let q = Quadrature::new(grid, m, convention)?;
    let d = params.cfg.sym_dim();
    let off = 2 * m;
    let act = params.activation;
    let tilde = alpha.tilde();
    let mut x = vec![0.0; d];
    let mut pred_term = vec![0.0; d];
    let mut target_term = vec![0.0; d];
    for (&theta, &wq) in q.thetas.iter().zip(&q.weights) {
        fill_sym(theta, m, &mut x);
        let pred = forward_diag_slice(&params.w, &params.c, act, &x);
        let f: f64 = tilde.iter().enumerate().map(|(l, a)| a * x[off + l]).sum();
        for j in 0..d {
            let g = act.derivative(params.w[j] * x[j]) * x[j];
            if g != 0.0 {
                pred_term[j] += wq * pred * g;
                target_term[j] += wq * f * g;
            }
        }
    }
    Ok((0..d)
        .map(|j| params.c[j] * (pred_term[j] - target_term[j]) + lambda * params.w[j])
        .collect())
}
