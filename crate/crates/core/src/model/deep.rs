use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::embedding::{embed_doubled, embed_sym, EmbeddingConfig, EmbeddingKind};
use crate::error::{Error, Result};

/// Hidden width used when a preset does not name one.
pub const DEFAULT_HIDDEN_WIDTH: usize = 64;

/// Affine map `h ↦ h·W + b` with `W` stored `in × out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl DenseLayer {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Array2::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.ncols()
    }
}

/// Fourier embedding, optional diagonal layer, then dense layers with ReLU
/// between them and a linear scalar output.
///
/// With `diagonal` present this is `u^diag_n` (`n = layers.len() - 1` hidden
/// dense layers after the diagonal); without it, `u^standard_n` with
/// `n = layers.len() - 1` hidden dense layers after the embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeepNetParams {
    pub cfg: EmbeddingConfig,
    pub embedding: EmbeddingKind,
    pub diagonal: Option<Array1<f64>>,
    pub layers: Vec<DenseLayer>,
}

/// Glorot-normal dense layers for the width chain `widths[0] → … → widths[last]`.
pub fn init_glorot(widths: &[usize], seed: u64) -> Result<Vec<DenseLayer>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    glorot_layers(widths, &mut rng)
}

fn glorot_layers(widths: &[usize], rng: &mut ChaCha8Rng) -> Result<Vec<DenseLayer>> {
    if widths.len() < 2 || widths.contains(&0) {
        return Err(Error::Config(format!("invalid width chain {widths:?}")));
    }
    widths
        .windows(2)
        .map(|pair| {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
            let normal = Normal::new(0.0, std).map_err(|e| Error::Numeric(e.to_string()))?;
            let weight = Array2::from_shape_simple_fn((fan_in, fan_out), || normal.sample(rng));
            Ok(DenseLayer {
                weight,
                bias: Array1::zeros(fan_out),
            })
        })
        .collect()
}

/// Glorot-normal diagonal of length `dim`, treating it as `dim → dim`.
pub fn init_glorot_diagonal(dim: usize, seed: u64) -> Result<Array1<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    glorot_diagonal(dim, &mut rng)
}

fn glorot_diagonal(dim: usize, rng: &mut ChaCha8Rng) -> Result<Array1<f64>> {
    let std = (1.0 / dim as f64).sqrt();
    let normal = Normal::new(0.0, std).map_err(|e| Error::Numeric(e.to_string()))?;
    Ok(Array1::from_shape_simple_fn(dim, || normal.sample(rng)))
}

impl DeepNetParams {
    /// `u^diag_n`: diagonal layer, `hidden` dense ReLU layers of `width`, linear output.
    pub fn diag(
        cfg: EmbeddingConfig,
        embedding: EmbeddingKind,
        hidden: usize,
        width: usize,
        seed: u64,
    ) -> Result<Self> {
        let d = embedding.dim(cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let diagonal = glorot_diagonal(d, &mut rng)?;
        let layers = glorot_layers(&Self::chain(d, hidden, width), &mut rng)?;
        Self::from_parts(cfg, embedding, Some(diagonal), layers)
    }

    /// `u^standard_n`: `hidden` dense ReLU layers straight after the embedding.
    pub fn standard(
        cfg: EmbeddingConfig,
        embedding: EmbeddingKind,
        hidden: usize,
        width: usize,
        seed: u64,
    ) -> Result<Self> {
        let d = embedding.dim(cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = glorot_layers(&Self::chain(d, hidden, width), &mut rng)?;
        Self::from_parts(cfg, embedding, None, layers)
    }

    fn chain(input: usize, hidden: usize, width: usize) -> Vec<usize> {
        let mut widths = vec![input];
        widths.extend(std::iter::repeat_n(width, hidden));
        widths.push(1);
        widths
    }

    pub fn from_parts(
        cfg: EmbeddingConfig,
        embedding: EmbeddingKind,
        diagonal: Option<Array1<f64>>,
        layers: Vec<DenseLayer>,
    ) -> Result<Self> {
        let p = Self {
            cfg,
            embedding,
            diagonal,
            layers,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.input_dim();
        if let Some(diag) = &self.diagonal {
            if diag.len() != d {
                return Err(Error::shape(d, diag.len(), "diagonal layer"));
            }
        }
        if self.layers.is_empty() {
            return Err(Error::Shape("at least the output layer is required".into()));
        }
        let mut prev = d;
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.fan_in() != prev {
                return Err(Error::shape(
                    prev,
                    layer.fan_in(),
                    &format!("layer {i} fan-in"),
                ));
            }
            if layer.bias.len() != layer.fan_out() {
                return Err(Error::shape(
                    layer.fan_out(),
                    layer.bias.len(),
                    &format!("layer {i} bias"),
                ));
            }
            prev = layer.fan_out();
        }
        if prev != 1 {
            return Err(Error::shape(1, prev, "output width"));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.embedding.dim(self.cfg)
    }

    pub fn has_diagonal(&self) -> bool {
        self.diagonal.is_some()
    }

    /// Number of dense layers before the output layer.
    pub fn hidden_layers(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim()];
        w.extend(self.layers.iter().map(DenseLayer::fan_out));
        w
    }

    pub fn num_params(&self) -> usize {
        self.diagonal.as_ref().map_or(0, |d| d.len())
            + self
                .layers
                .iter()
                .map(|l| l.weight.len() + l.bias.len())
                .sum::<usize>()
    }

    pub fn embed(&self, theta: f64) -> Result<Array1<f64>> {
        let v = match self.embedding {
            EmbeddingKind::Symmetrized => embed_sym(theta, self.cfg)?.into_vec(),
            EmbeddingKind::Doubled => embed_doubled(theta, self.cfg)?,
        };
        Ok(Array1::from(v))
    }

    /// `params ← params - lr · grad`.
    pub fn apply_step(&mut self, grad: &DeepGrad, lr: f64) {
        if let (Some(d), Some(g)) = (self.diagonal.as_mut(), grad.diagonal.as_ref()) {
            d.scaled_add(-lr, g);
        }
        for (layer, g) in self.layers.iter_mut().zip(&grad.layers) {
            layer.weight.scaled_add(-lr, &g.weight);
            layer.bias.scaled_add(-lr, &g.bias);
        }
    }
}

/// Gradient of the mean loss `½ mean (ŷ - y)²` over a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct DeepGrad {
    pub diagonal: Option<Array1<f64>>,
    pub layers: Vec<DenseLayer>,
    pub loss: f64,
    /// Per-sample `ŷ - y`.
    pub residuals: Array1<f64>,
}

fn relu_inplace(a: &mut Array2<f64>) {
    a.mapv_inplace(|v| v.max(0.0));
}

/// Predictions for a batch of embedded inputs (`rows × input_dim`).
pub fn forward_batch(params: &DeepNetParams, x: ArrayView2<f64>) -> Result<Array1<f64>> {
    check_batch(params, x)?;
    let mut h = match &params.diagonal {
        Some(d) => {
            let mut h = &x * d;
            relu_inplace(&mut h);
            h
        }
        None => x.to_owned(),
    };
    let last = params.layers.len() - 1;
    for (i, layer) in params.layers.iter().enumerate() {
        let mut z = h.dot(&layer.weight) + &layer.bias;
        if i < last {
            relu_inplace(&mut z);
        }
        h = z;
    }
    Ok(h.column(0).to_owned())
}

fn check_batch(params: &DeepNetParams, x: ArrayView2<f64>) -> Result<()> {
    if x.ncols() != params.input_dim() {
        return Err(Error::shape(
            params.input_dim(),
            x.ncols(),
            "batch input width",
        ));
    }
    Ok(())
}

pub fn forward_deep(params: &DeepNetParams, theta: f64) -> Result<f64> {
    let x = params.embed(theta)?;
    let x = x.view().insert_axis(Axis(0));
    Ok(forward_batch(params, x)?[0])
}

/// Mean loss and its gradient over a batch by reverse accumulation.
pub fn grad_batch(
    params: &DeepNetParams,
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
) -> Result<DeepGrad> {
    check_batch(params, x)?;
    if y.len() != x.nrows() {
        return Err(Error::shape(x.nrows(), y.len(), "batch targets"));
    }
    let b = x.nrows() as f64;

    // Forward, keeping each layer's input and pre-activation.
    let diag_pre = params.diagonal.as_ref().map(|d| &x * d);
    let mut inputs: Vec<Array2<f64>> = Vec::with_capacity(params.layers.len());
    let mut pre: Vec<Array2<f64>> = Vec::with_capacity(params.layers.len());
    let mut h = match &diag_pre {
        Some(z) => z.mapv(|v| v.max(0.0)),
        None => x.to_owned(),
    };
    let last = params.layers.len() - 1;
    for (i, layer) in params.layers.iter().enumerate() {
        let z = h.dot(&layer.weight) + &layer.bias;
        let next = if i < last {
            z.mapv(|v| v.max(0.0))
        } else {
            z.clone()
        };
        inputs.push(h);
        pre.push(z);
        h = next;
    }
    let residuals = &h.column(0) - &y;
    let loss = 0.5 * residuals.mapv(|r| r * r).sum() / b;

    // Backward.
    let mut delta: Array2<f64> = (&residuals / b).insert_axis(Axis(1));
    let mut grads: Vec<DenseLayer> = Vec::with_capacity(params.layers.len());
    for i in (0..params.layers.len()).rev() {
        let layer = &params.layers[i];
        let weight = inputs[i].t().dot(&delta);
        let bias = delta.sum_axis(Axis(0));
        grads.push(DenseLayer { weight, bias });
        if i > 0 || diag_pre.is_some() {
            let mut back = delta.dot(&layer.weight.t());
            let gate = if i > 0 {
                &pre[i - 1]
            } else {
                diag_pre.as_ref().expect("diagonal present")
            };
            Zip::from(&mut back).and(gate).for_each(|d, &z| {
                if z <= 0.0 {
                    *d = 0.0;
                }
            });
            delta = back;
        }
    }
    grads.reverse();
    let diagonal = diag_pre.map(|_| (&delta * &x).sum_axis(Axis(0)));
    Ok(DeepGrad {
        diagonal,
        layers: grads,
        loss,
        residuals,
    })
}

/// Gradient of `½(ŷ - y)²` at a single input.
pub fn grad_deep_sample(params: &DeepNetParams, theta: f64, y: f64) -> Result<DeepGrad> {
    let x = params.embed(theta)?;
    let x = x.view().insert_axis(Axis(0));
    let y = Array1::from_elem(1, y);
    grad_batch(params, x, y.view())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{forward_diag, Activation, DiagNetParams};
    use approx::assert_abs_diff_eq;

    fn cfg(m: usize) -> EmbeddingConfig {
        EmbeddingConfig::new(m).unwrap()
    }

    #[test]
    fn glorot_contract() {
        let a = init_glorot(&[256, 256], 5).unwrap();
        let b = init_glorot(&[256, 256], 5).unwrap();
        assert_eq!(a, b);
        let w = &a[0].weight;
        let n = w.len() as f64;
        let mean = w.sum() / n;
        let var = w.mapv(|v| (v - mean) * (v - mean)).sum() / (n - 1.0);
        let target = 2.0 / 512.0;
        assert!(
            (var / target - 1.0).abs() < 0.2,
            "variance {var} vs {target}"
        );
        assert!(a[0].bias.iter().all(|&v| v == 0.0));
        assert!(init_glorot(&[3], 1).is_err());
    }

    #[test]
    fn widths_chain() {
        let c = cfg(4);
        let p = DeepNetParams::diag(c, EmbeddingKind::Doubled, 2, 16, 1).unwrap();
        assert_eq!(p.widths(), vec![18, 16, 16, 1]);
        assert_eq!(p.hidden_layers(), 2);
        let s = DeepNetParams::standard(c, EmbeddingKind::Doubled, 1, 16, 1).unwrap();
        assert!(!s.has_diagonal());
        assert_eq!(s.num_params(), 18 * 16 + 16 + 16 + 1);
    }

    #[test]
    fn mismatched_layers_rejected() {
        let c = cfg(2);
        let layers = vec![DenseLayer::zeros(10, 4), DenseLayer::zeros(5, 1)];
        assert!(matches!(
            DeepNetParams::from_parts(c, EmbeddingKind::Doubled, None, layers),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn diag0_reduces_to_diagonal_network() {
        let c = cfg(3);
        let p = DeepNetParams::diag(c, EmbeddingKind::Symmetrized, 0, 8, 9).unwrap();
        let w = p.diagonal.clone().unwrap().to_vec();
        let cv = p.layers[0].weight.column(0).to_vec();
        let dn = DiagNetParams::new(c, w, cv, Activation::Relu).unwrap();
        for theta in [-0.9, -0.2, 0.0, 0.31, 1.0] {
            let x = crate::embedding::embed_sym(theta, c).unwrap();
            assert_abs_diff_eq!(
                forward_deep(&p, theta).unwrap(),
                forward_diag(&dn, &x).unwrap(),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn zero_output_layer_blocks_gradient() {
        let c = cfg(3);
        let mut p = DeepNetParams::diag(c, EmbeddingKind::Doubled, 2, 8, 4).unwrap();
        let out = p.layers.last_mut().unwrap();
        out.weight.fill(0.0);
        out.bias.fill(0.0);
        assert_eq!(forward_deep(&p, 0.4).unwrap(), 0.0);
        let g = grad_deep_sample(&p, 0.4, 1.3).unwrap();
        assert!(g.diagonal.unwrap().iter().all(|&v| v == 0.0));
        for layer in &g.layers[..g.layers.len() - 1] {
            assert!(layer.weight.iter().all(|&v| v == 0.0));
            assert!(layer.bias.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn batch_gradient_is_mean_of_sample_gradients() {
        let c = cfg(3);
        let p = DeepNetParams::standard(c, EmbeddingKind::Doubled, 2, 6, 2).unwrap();
        let thetas = [-0.7, 0.1, 0.55];
        let ys = [0.2, -0.4, 1.0];
        let x = Array2::from_shape_fn((3, p.input_dim()), |(i, k)| p.embed(thetas[i]).unwrap()[k]);
        let g = grad_batch(&p, x.view(), Array1::from(ys.to_vec()).view()).unwrap();
        let mut acc = g.layers[0].weight.clone();
        acc.fill(0.0);
        for (t, y) in thetas.iter().zip(ys) {
            acc += &grad_deep_sample(&p, *t, y).unwrap().layers[0].weight;
        }
        acc /= 3.0;
        for (a, b) in acc.iter().zip(g.layers[0].weight.iter()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-12);
        }
    }
}
