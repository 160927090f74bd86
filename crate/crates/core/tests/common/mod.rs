#![allow(dead_code)]

use fourier_diag::model::DeepNetParams;

pub const KINK: f64 = 1e-4;

/// Central differences of `loss` at `x` with step `h`.
pub fn central_diff(x: &[f64], h: f64, loss: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|k| {
            p[k] = x[k] + h;
            let up = loss(&p);
            p[k] = x[k] - h;
            let down = loss(&p);
            p[k] = x[k];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `‖a − b‖₂ / max(‖a‖₂, ‖b‖₂)`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        norm(&diff)
    } else {
        norm(&diff) / scale
    }
}

/// Plain-loop forward pass of a deep network on an explicit input vector,
/// returning the output and the smallest `|pre-activation|` of any ReLU.
pub fn deep_forward_ref(p: &DeepNetParams, x: &[f64]) -> (f64, f64) {
    let mut margin = f64::INFINITY;
    let mut h: Vec<f64> = match &p.diagonal {
        Some(d) => x
            .iter()
            .zip(d.iter())
            .map(|(x, d)| {
                let z = x * d;
                margin = margin.min(z.abs());
                z.max(0.0)
            })
            .collect(),
        None => x.to_vec(),
    };
    let last = p.layers.len() - 1;
    for (i, l) in p.layers.iter().enumerate() {
        let mut z = l.bias.to_vec();
        for (r, hr) in h.iter().enumerate() {
            for (c, zc) in z.iter_mut().enumerate() {
                *zc += hr * l.weight[(r, c)];
            }
        }
        if i < last {
            for v in &mut z {
                margin = margin.min(v.abs());
                *v = v.max(0.0);
            }
        }
        h = z;
    }
    (h[0], margin)
}

/// All deep parameters in a fixed order: diagonal, then per layer weight then bias.
pub fn flatten(p: &DeepNetParams) -> Vec<f64> {
    let mut v: Vec<f64> = p.diagonal.iter().flat_map(|d| d.iter().copied()).collect();
    for l in &p.layers {
        v.extend(l.weight.iter());
        v.extend(l.bias.iter());
    }
    v
}

pub fn unflatten(p: &DeepNetParams, v: &[f64]) -> DeepNetParams {
    let mut out = p.clone();
    let mut it = v.iter().copied();
    if let Some(d) = out.diagonal.as_mut() {
        d.iter_mut().for_each(|x| *x = it.next().unwrap());
    }
    for l in &mut out.layers {
        l.weight.iter_mut().for_each(|x| *x = it.next().unwrap());
        l.bias.iter_mut().for_each(|x| *x = it.next().unwrap());
    }
    out
}

/// `cos(πiθ)` at `2i − 1`, `sin(πiθ)` at `2i`, `x₀ = 1`, `x₋ⱼ = −xⱼ`.
pub fn embed_ref(theta: f64, j: i64) -> f64 {
    use std::f64::consts::PI;
    if j == 0 {
        return 1.0;
    }
    if j < 0 {
        return -embed_ref(theta, -j);
    }
    let i = ((j + 1) / 2) as f64;
    if j % 2 == 1 {
        (PI * i * theta).cos()
    } else {
        (PI * i * theta).sin()
    }
}

/// Symmetrized embedding in slot order `-2m..=2m`.
pub fn embed_sym_ref(theta: f64, m: usize) -> Vec<f64> {
    let b = 2 * m as i64;
    (-b..=b).map(|j| embed_ref(theta, j)).collect()
}
