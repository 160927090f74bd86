//! Fourier embeddings of a scalar input `theta ∈ [-1, 1]`.
//!
//! The symmetrized embedding has `4m + 1` entries indexed by
//! `j ∈ {-2m, …, 2m}`:
//!
//! ```text
//! x_0      = 1
//! x_{2i-1} = cos(π i θ)        i = 1..m
//! x_{2i}   = sin(π i θ)
//! x_{-j}   = -x_j
//! ```
//!
//! Storage is a flat array with offset `2m`, so index `-2m` lives in slot 0.
//! Every other module goes through [`EmbeddingConfig::slot`] and
//! [`EmbeddingConfig::index_of_slot`] instead of doing the arithmetic itself.
//!
//! The doubled embedding used by the deep variants is `Φ(θ) = [φ; -φ]` with
//! `φ = [1, sin(πθ), cos(πθ), …, sin(mπθ), cos(mπθ)]`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum frequency `m` of the embedding (in units of π rad per unit θ).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingConfig {
    m: usize,
}

impl EmbeddingConfig {
    pub fn new(m: usize) -> Result<Self> {
        if m < 1 {
            return Err(Error::Config(format!(
                "embedding band m must be >= 1, got {m}"
            )));
        }
        Ok(Self { m })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Largest index magnitude, `2m`.
    pub fn max_index(&self) -> i64 {
        2 * self.m as i64
    }

    /// Dimension of the symmetrized embedding, `4m + 1`.
    pub fn sym_dim(&self) -> usize {
        4 * self.m + 1
    }

    /// Dimension of the doubled embedding, `2(2m + 1)`.
    pub fn doubled_dim(&self) -> usize {
        2 * (2 * self.m + 1)
    }

    /// Storage slot of index `j`, or `None` when `|j| > 2m`.
    pub fn slot(&self, j: i64) -> Option<usize> {
        let bound = self.max_index();
        if j.abs() > bound {
            None
        } else {
            Some((j + bound) as usize)
        }
    }

    pub fn index_of_slot(&self, slot: usize) -> i64 {
        slot as i64 - self.max_index()
    }

    pub fn indices(&self) -> std::ops::RangeInclusive<i64> {
        -self.max_index()..=self.max_index()
    }

    fn check_index(&self, j: i64) -> Result<usize> {
        self.slot(j).ok_or(Error::Index {
            index: j,
            bound: self.max_index(),
        })
    }
}

/// Output of [`embed_sym`]: values indexed `-2m..=2m`.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierVector {
    cfg: EmbeddingConfig,
    values: Vec<f64>,
}

impl FourierVector {
    pub fn cfg(&self) -> EmbeddingConfig {
        self.cfg
    }

    /// Value at signed index `j`.
    ///
    /// Panics if `|j| > 2m`; use [`FourierVector::try_get`] for checked access.
    pub fn get(&self, j: i64) -> f64 {
        self.values[self.cfg.slot(j).expect("index within band")]
    }

    pub fn try_get(&self, j: i64) -> Result<f64> {
        Ok(self.values[self.cfg.check_index(j)?])
    }

    /// Flat storage, slot 0 holding index `-2m`.
    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn iter_indexed(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        self.values
            .iter()
            .enumerate()
            .map(|(s, &v)| (self.cfg.index_of_slot(s), v))
    }
}

fn check_theta(theta: f64) -> Result<()> {
    if !theta.is_finite() || theta.abs() > 1.0 {
        return Err(Error::Domain(format!("theta {theta} outside [-1, 1]")));
    }
    Ok(())
}

/// Writes the symmetrized embedding of `theta` into `out` (length `4m + 1`).
///
/// No validation; callers check `theta` and the buffer length.
pub(crate) fn fill_sym(theta: f64, m: usize, out: &mut [f64]) {
    let off = 2 * m;
    out[off] = 1.0;
    for i in 1..=m {
        let (s, c) = (PI * i as f64 * theta).sin_cos();
        let cos_slot = off + 2 * i - 1;
        let sin_slot = off + 2 * i;
        out[cos_slot] = c;
        out[sin_slot] = s;
        out[off - (2 * i - 1)] = -c;
        out[off - 2 * i] = -s;
    }
}

pub(crate) fn fill_doubled(theta: f64, m: usize, out: &mut [f64]) {
    let half = 2 * m + 1;
    out[0] = 1.0;
    for i in 1..=m {
        let (s, c) = (PI * i as f64 * theta).sin_cos();
        out[2 * i - 1] = s;
        out[2 * i] = c;
    }
    for k in 0..half {
        out[half + k] = -out[k];
    }
}

/// Symmetrized Fourier embedding of `theta`.
pub fn embed_sym(theta: f64, cfg: EmbeddingConfig) -> Result<FourierVector> {
    check_theta(theta)?;
    let mut values = vec![0.0; cfg.sym_dim()];
    fill_sym(theta, cfg.m, &mut values);
    Ok(FourierVector { cfg, values })
}

/// Doubled-sign embedding `[φ; -φ]` of length `2(2m + 1)`.
pub fn embed_doubled(theta: f64, cfg: EmbeddingConfig) -> Result<Vec<f64>> {
    check_theta(theta)?;
    let mut values = vec![0.0; cfg.doubled_dim()];
    fill_doubled(theta, cfg.m, &mut values);
    Ok(values)
}

/// Which embedding a feature matrix or deep network uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingKind {
    Symmetrized,
    Doubled,
}

impl EmbeddingKind {
    pub fn dim(self, cfg: EmbeddingConfig) -> usize {
        match self {
            EmbeddingKind::Symmetrized => cfg.sym_dim(),
            EmbeddingKind::Doubled => cfg.doubled_dim(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EmbeddingKind::Symmetrized => "symmetrized",
            EmbeddingKind::Doubled => "doubled",
        }
    }
}

/// Row-major matrix of embeddings, one row per sample.
#[derive(Debug, Clone)]
pub struct FeatureMatrix {
    kind: EmbeddingKind,
    cfg: EmbeddingConfig,
    rows: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(thetas: &[f64], cfg: EmbeddingConfig, kind: EmbeddingKind) -> Result<Self> {
        let dim = kind.dim(cfg);
        let mut data = vec![0.0; thetas.len() * dim];
        for (row, &theta) in data.chunks_exact_mut(dim).zip(thetas) {
            check_theta(theta)?;
            match kind {
                EmbeddingKind::Symmetrized => fill_sym(theta, cfg.m, row),
                EmbeddingKind::Doubled => fill_doubled(theta, cfg.m, row),
            }
        }
        Ok(Self {
            kind,
            cfg,
            rows: thetas.len(),
            data,
        })
    }

    pub fn kind(&self) -> EmbeddingKind {
        self.kind
    }

    pub fn cfg(&self) -> EmbeddingConfig {
        self.cfg
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.kind.dim(self.cfg)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.data[i * d..(i + 1) * d]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeKind {
    Constant,
    Cosine,
    Sine,
}

impl ModeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModeKind::Constant => "constant",
            ModeKind::Cosine => "cos",
            ModeKind::Sine => "sin",
        }
    }
}

/// What a signed embedding index stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeDescriptor {
    pub frequency: usize,
    pub kind: ModeKind,
    /// `+1` for non-negative indices, `-1` for the mirrored copies.
    pub sign: i8,
}

impl ModeDescriptor {
    /// Signed index this descriptor was built from.
    pub fn index(&self) -> i64 {
        let base = match self.kind {
            ModeKind::Constant => 0,
            ModeKind::Cosine => 2 * self.frequency as i64 - 1,
            ModeKind::Sine => 2 * self.frequency as i64,
        };
        base * self.sign as i64
    }
}

pub fn mode_of(index: i64, cfg: EmbeddingConfig) -> Result<ModeDescriptor> {
    cfg.check_index(index)?;
    if index == 0 {
        return Ok(ModeDescriptor {
            frequency: 0,
            kind: ModeKind::Constant,
            sign: 1,
        });
    }
    let a = index.unsigned_abs() as usize;
    let kind = if a % 2 == 1 {
        ModeKind::Cosine
    } else {
        ModeKind::Sine
    };
    Ok(ModeDescriptor {
        frequency: a.div_ceil(2),
        kind,
        sign: if index > 0 { 1 } else { -1 },
    })
}

/// Mode at slot `s` of the first half of the doubled embedding.
pub fn doubled_mode(slot: usize, cfg: EmbeddingConfig) -> Option<(usize, ModeKind, i8)> {
    let half = 2 * cfg.m + 1;
    if slot >= 2 * half {
        return None;
    }
    let (k, sign) = if slot < half {
        (slot, 1)
    } else {
        (slot - half, -1)
    };
    if k == 0 {
        return Some((0, ModeKind::Constant, sign));
    }
    let kind = if k % 2 == 1 {
        ModeKind::Sine
    } else {
        ModeKind::Cosine
    };
    Some((k.div_ceil(2), kind, sign))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn cfg(m: usize) -> EmbeddingConfig {
        EmbeddingConfig::new(m).unwrap()
    }

    #[test]
    fn sym_half_theta_m1() {
        let v = embed_sym(0.5, cfg(1)).unwrap();
        let expected = [-1.0, 0.0, 1.0, 0.0, 1.0];
        for (got, want) in v.as_slice().iter().zip(expected) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-15);
        }
    }

    #[test]
    fn sym_zero_theta_m2() {
        let v = embed_sym(0.0, cfg(2)).unwrap();
        assert_eq!(
            v.as_slice(),
            &[0.0, -1.0, 0.0, -1.0, 1.0, 1.0, 0.0, 1.0, 0.0]
        );
    }

    #[test]
    fn sym_third() {
        let v = embed_sym(1.0 / 3.0, cfg(1)).unwrap();
        assert_abs_diff_eq!(v.get(1), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(v.get(2), 0.866_025_403_784_438_6, epsilon = 1e-12);
    }

    #[test]
    fn doubled_examples() {
        assert_eq!(
            embed_doubled(0.0, cfg(1)).unwrap(),
            vec![1.0, 0.0, 1.0, -1.0, -0.0, -1.0]
        );
        let v = embed_doubled(0.5, cfg(1)).unwrap();
        for (got, want) in v.iter().zip([1.0, 1.0, 0.0, -1.0, -1.0, 0.0]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-15);
        }
        let v = embed_doubled(0.123, cfg(8)).unwrap();
        let half = v.len() / 2;
        for k in 0..half {
            assert_eq!(v[half + k], -v[k]);
        }
    }

    #[test]
    fn endpoints_accepted_outside_rejected() {
        assert!(embed_sym(1.0, cfg(3)).is_ok());
        assert!(embed_sym(-1.0, cfg(3)).is_ok());
        assert!(matches!(
            embed_sym(1.0 + 1e-12, cfg(3)),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            embed_doubled(f64::NAN, cfg(3)),
            Err(Error::Domain(_))
        ));
        assert!(matches!(EmbeddingConfig::new(0), Err(Error::Config(_))));
    }

    #[test]
    fn mode_examples() {
        let c = cfg(64);
        let d = mode_of(9, c).unwrap();
        assert_eq!((d.frequency, d.kind, d.sign), (5, ModeKind::Cosine, 1));
        let d = mode_of(122, c).unwrap();
        assert_eq!((d.frequency, d.kind, d.sign), (61, ModeKind::Sine, 1));
        let d = mode_of(-57, c).unwrap();
        assert_eq!((d.frequency, d.kind, d.sign), (29, ModeKind::Cosine, -1));
        let d = mode_of(0, c).unwrap();
        assert_eq!((d.frequency, d.kind), (0, ModeKind::Constant));
        assert!(matches!(mode_of(129, c), Err(Error::Index { .. })));
    }

    #[test]
    fn mode_round_trip() {
        for m in 1..=12 {
            let c = cfg(m);
            for j in c.indices() {
                assert_eq!(mode_of(j, c).unwrap().index(), j);
            }
        }
    }

    #[test]
    fn doubled_modes_follow_sin_cos_order() {
        let c = cfg(3);
        assert_eq!(doubled_mode(0, c), Some((0, ModeKind::Constant, 1)));
        assert_eq!(doubled_mode(1, c), Some((1, ModeKind::Sine, 1)));
        assert_eq!(doubled_mode(2, c), Some((1, ModeKind::Cosine, 1)));
        assert_eq!(doubled_mode(7 + 6, c), Some((3, ModeKind::Cosine, -1)));
        assert_eq!(doubled_mode(14, c), None);
    }

    #[test]
    fn feature_matrix_rows_match_single_embedding() {
        let c = cfg(5);
        let thetas = [-1.0, -0.3, 0.0, 0.77, 1.0];
        let fm = FeatureMatrix::new(&thetas, c, EmbeddingKind::Symmetrized).unwrap();
        for (i, &t) in thetas.iter().enumerate() {
            assert_eq!(fm.row(i), embed_sym(t, c).unwrap().as_slice());
        }
        let fm = FeatureMatrix::new(&thetas, c, EmbeddingKind::Doubled).unwrap();
        assert_eq!(fm.row(3), embed_doubled(0.77, c).unwrap().as_slice());
    }
}
