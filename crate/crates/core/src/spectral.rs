//! Quadrature oracles for the sine–cosine expansion of a target.
//!
//! All inner products here use the mass-2 convention `∫₋₁¹ f g dθ`, so a pure
//! mode `A·cos(πkθ)` has coefficient exactly `A`. Sample-averaged quantities
//! (what SGD sees) are half of these; see [`Convention`].

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::embedding::{fill_sym, mode_of, EmbeddingConfig, ModeKind};
use crate::error::{Error, Result};

/// Normalization of an expectation over `θ ~ U[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Convention {
    /// `∫₋₁¹ · dθ`, total mass 2.
    Mass2,
    /// Uniform average `½∫₋₁¹ · dθ`; this is what sample means estimate.
    #[default]
    Sampled,
}

impl Convention {
    /// Multiplier turning a mass-2 integral into this convention.
    pub fn scale(self) -> f64 {
        match self {
            Convention::Mass2 => 1.0,
            Convention::Sampled => 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

/// Chebyshev coefficient `p_i` of `ReLU(cos t) = Σ p_i cos(i t)`.
pub fn relu_cheb_coeff(i: usize) -> f64 {
    match i {
        0 => 1.0 / PI,
        1 => 0.5,
        _ => {
            // cos(iπ/2) is 0 for odd i and ±1 for even i.
            if i % 2 == 1 {
                0.0
            } else {
                let c = if (i / 2).is_multiple_of(2) { 1.0 } else { -1.0 };
                let i = i as f64;
                2.0 / PI * c / (1.0 - i * i)
            }
        }
    }
}

/// Chebyshev polynomial of the first kind by the three-term recurrence.
#[allow(non_snake_case)]
pub fn chebyshev_T(n: usize, w: f64) -> Result<f64> {
    if !(w.abs() <= 1.0) {
        return Err(Error::Domain(format!(
            "chebyshev argument {w} outside [-1, 1]"
        )));
    }
    let (mut prev, mut cur) = (1.0, w);
    if n == 0 {
        return Ok(prev);
    }
    for _ in 1..n {
        let next = 2.0 * w * cur - prev;
        prev = cur;
        cur = next;
    }
    Ok(cur)
}

/// Composite trapezoid weights for an evenly spaced closed grid on `[-1, 1]`.
///
/// Rejects grids that do not start at -1, end at 1, or are not evenly spaced.
pub fn trapezoid_weights(grid: &[f64]) -> Result<Vec<f64>> {
    let n = grid.len();
    if n < 2 {
        return Err(Error::Grid(format!("need at least 2 grid points, got {n}")));
    }
    let h = 2.0 / (n - 1) as f64;
    if (grid[0] + 1.0).abs() > 1e-12 || (grid[n - 1] - 1.0).abs() > 1e-12 {
        return Err(Error::Grid(
            "grid must span the closed interval [-1, 1]".into(),
        ));
    }
    for (i, pair) in grid.windows(2).enumerate() {
        if ((pair[1] - pair[0]) - h).abs() > 1e-9 * h.max(1e-12) + 1e-12 {
            return Err(Error::Grid(format!(
                "grid is not evenly spaced near point {i}"
            )));
        }
    }
    let mut w = vec![h; n];
    w[0] = h / 2.0;
    w[n - 1] = h / 2.0;
    Ok(w)
}

/// Mass-2 trapezoid integral of `values` against precomputed weights.
pub fn integrate(weights: &[f64], values: &[f64]) -> f64 {
    weights.iter().zip(values).map(|(w, v)| w * v).sum()
}

/// Coefficients of the sine–cosine expansion, indexed `0..=2m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub m: usize,
    pub alpha_tilde: Vec<f64>,
    /// Indices in `1..=2m` whose coefficient clears the threshold.
    pub support: Vec<usize>,
    /// `sqrt(∫f² − energy captured in band)`, clamped at zero.
    pub residual_l2: f64,
    pub threshold: f64,
}

pub const DEFAULT_SUPPORT_REL_THRESHOLD: f64 = 1e-3;

impl SpectrumReport {
    /// Rebuilds the support with `|α̃_l| > rel · max|α̃|`.
    pub fn with_threshold(mut self, rel: f64) -> Self {
        let max = self.alpha_tilde.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        self.threshold = rel * max;
        self.support = (1..self.alpha_tilde.len())
            .filter(|&l| self.alpha_tilde[l].abs() > self.threshold)
            .collect();
        self
    }

    pub fn cfg(&self) -> EmbeddingConfig {
        EmbeddingConfig::new(self.m).expect("report built from a valid band")
    }

    /// Distinct frequencies present in the support, with their mode kinds.
    pub fn support_modes(&self) -> Vec<(usize, ModeKind)> {
        let cfg = self.cfg();
        self.support
            .iter()
            .map(|&l| {
                let d = mode_of(l as i64, cfg).expect("support within band");
                (d.frequency, d.kind)
            })
            .collect()
    }

    /// Band-limited reconstruction `Σ α̃_l x_l(θ)` at `theta`.
    pub fn reconstruct(&self, theta: f64) -> f64 {
        let mut x = vec![0.0; 4 * self.m + 1];
        fill_sym(theta, self.m, &mut x);
        let off = 2 * self.m;
        self.alpha_tilde
            .iter()
            .enumerate()
            .map(|(l, a)| a * x[off + l])
            .sum()
    }

    /// CSV with columns `index,frequency,kind,coefficient`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let cfg = self.cfg();
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["index", "frequency", "kind", "coefficient"])?;
        for (l, a) in self.alpha_tilde.iter().enumerate() {
            let d = mode_of(l as i64, cfg)?;
            wtr.write_record([
                l.to_string(),
                d.frequency.to_string(),
                d.kind.as_str().to_string(),
                a.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Sine–cosine coefficients of samples `f_on_grid` taken on `grid`.
pub fn fourier_coeffs(f_on_grid: &[f64], grid: &[f64], m: usize) -> Result<SpectrumReport> {
    let cfg = EmbeddingConfig::new(m)?;
    if f_on_grid.len() != grid.len() {
        return Err(Error::shape(grid.len(), f_on_grid.len(), "samples vs grid"));
    }
    let weights = trapezoid_weights(grid)?;
    let n = grid.len();
    let h = 2.0 / (n - 1) as f64;
    // Shortest period in the band is 2/m; ask for at least 2 samples per period
    // and at least 4m + 2 points overall.
    if n < 4 * m + 2 || 2.0 / m as f64 / h < 2.0 {
        return Err(Error::Resolution(format!(
            "{n} grid points cannot resolve band m = {} (need at least {})",
            cfg.m(),
            4 * m + 2
        )));
    }

    let mut alpha = vec![0.0; 2 * m + 1];
    let mut energy = 0.0;
    for ((&theta, &f), &w) in grid.iter().zip(f_on_grid).zip(&weights) {
        let wf = w * f;
        alpha[0] += wf;
        energy += wf * f;
        for k in 1..=m {
            let (s, c) = (PI * k as f64 * theta).sin_cos();
            alpha[2 * k - 1] += wf * c;
            alpha[2 * k] += wf * s;
        }
    }
    alpha[0] *= 0.5;
    let captured = 2.0 * alpha[0] * alpha[0] + alpha[1..].iter().map(|a| a * a).sum::<f64>();
    let report = SpectrumReport {
        m,
        alpha_tilde: alpha,
        support: Vec::new(),
        residual_l2: (energy - captured).max(0.0).sqrt(),
        threshold: 0.0,
    };
    Ok(report.with_threshold(DEFAULT_SUPPORT_REL_THRESHOLD))
}

/// Signed coefficient vector `α` over `-2m..=2m` with `α_{-j} = -α̃_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignedAlpha {
    m: usize,
    values: Vec<f64>,
}

impl SignedAlpha {
    /// Builds `α` straight from `α̃` (length `2m + 1`).
    pub fn from_tilde(alpha_tilde: &[f64]) -> Result<Self> {
        if alpha_tilde.len() < 3 || alpha_tilde.len().is_multiple_of(2) {
            return Err(Error::Shape(format!(
                "alpha_tilde must have odd length 2m + 1 >= 3, got {}",
                alpha_tilde.len()
            )));
        }
        let m = (alpha_tilde.len() - 1) / 2;
        let off = 2 * m;
        let mut values = vec![0.0; 4 * m + 1];
        for (l, &a) in alpha_tilde.iter().enumerate() {
            values[off + l] = a;
            if l > 0 {
                values[off - l] = -a;
            }
        }
        Ok(Self { m, values })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn cfg(&self) -> EmbeddingConfig {
        EmbeddingConfig::new(self.m).expect("valid band")
    }

    pub fn get(&self, j: i64) -> f64 {
        self.values[(j + 2 * self.m as i64) as usize]
    }

    /// Flat storage in embedding slot order.
    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    /// The non-negative half, `α̃`.
    pub fn tilde(&self) -> &[f64] {
        &self.values[2 * self.m..]
    }

    /// Nonzero signed indices (excluding 0).
    pub fn support(&self, threshold: f64) -> Vec<i64> {
        let cfg = self.cfg();
        cfg.indices()
            .filter(|&j| j != 0 && self.get(j).abs() > threshold)
            .collect()
    }
}

pub fn signed_alpha(report: &SpectrumReport) -> SignedAlpha {
    SignedAlpha::from_tilde(&report.alpha_tilde).expect("report has length 2m + 1")
}

/// Mass-2 quadrature of `Σ_{l=0}^{2m} α̃_l ∫ x_l σ(s·x_j) dθ` with ReLU `σ`.
pub fn lemma_expectation(
    alpha: &SignedAlpha,
    j: i64,
    s: Sign,
    grid: &[f64],
    cfg: EmbeddingConfig,
) -> Result<f64> {
    if alpha.m() != cfg.m() {
        return Err(Error::Shape(format!(
            "alpha band {} does not match embedding band {}",
            alpha.m(),
            cfg.m()
        )));
    }
    let slot_j = cfg.slot(j).ok_or(Error::Index {
        index: j,
        bound: cfg.max_index(),
    })?;
    if j == 0 {
        return Err(Error::InvalidMode(0));
    }
    let weights = trapezoid_weights(grid)?;
    let off = 2 * cfg.m();
    let tilde = alpha.tilde();
    let sv = s.value();
    let mut x = vec![0.0; cfg.sym_dim()];
    let mut total = 0.0;
    for (&theta, &w) in grid.iter().zip(&weights) {
        fill_sym(theta, cfg.m(), &mut x);
        let act = (sv * x[slot_j]).max(0.0);
        if act == 0.0 {
            continue;
        }
        let f: f64 = tilde.iter().enumerate().map(|(l, a)| a * x[off + l]).sum();
        total += w * f * act;
    }
    Ok(total)
}

/// Why a spectrum falls outside the recoverable class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum AlignmentIssue {
    /// Support index not of the form `4k + 1` or `4k + 2`.
    OffPattern { index: usize },
    /// Both the cosine and the sine of one frequency are active (a phase shift).
    PhaseMixed { frequency: usize },
}

/// Checks a spectrum's support against the `4k + 1` / `4k + 2` pattern and
/// against phase mixing. An empty result means the target is aligned.
pub fn check_alignment(report: &SpectrumReport) -> Vec<AlignmentIssue> {
    let mut issues: Vec<AlignmentIssue> = report
        .support
        .iter()
        .filter(|&&l| l % 4 != 1 && l % 4 != 2)
        .map(|&index| AlignmentIssue::OffPattern { index })
        .collect();
    for k in 1..=report.m {
        if report.support.contains(&(2 * k - 1)) && report.support.contains(&(2 * k)) {
            issues.push(AlignmentIssue::PhaseMixed { frequency: k });
        }
    }
    issues
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn grid(n: usize) -> Vec<f64> {
        (0..=n)
            .map(|i| (2 * i as i64 - n as i64) as f64 / n as f64)
            .collect()
    }

    #[test]
    fn relu_coefficients() {
        assert_eq!(relu_cheb_coeff(0), 1.0 / PI);
        assert_eq!(relu_cheb_coeff(1), 0.5);
        assert_eq!(relu_cheb_coeff(3), 0.0);
        assert_eq!(relu_cheb_coeff(17), 0.0);
        assert_abs_diff_eq!(relu_cheb_coeff(2), 2.0 / (3.0 * PI), epsilon = 1e-15);
        assert_abs_diff_eq!(relu_cheb_coeff(2), 0.212_206_590_789_193_8, epsilon = 1e-12);
        assert!(relu_cheb_coeff(4) < 0.0);
    }

    #[test]
    fn chebyshev_examples() {
        for w in [-1.0, 0.0, 0.3, 1.0] {
            assert_eq!(chebyshev_T(1, w).unwrap(), w);
            assert_eq!(chebyshev_T(0, w).unwrap(), 1.0);
        }
        assert_abs_diff_eq!(
            chebyshev_T(4, 0.7_f64.cos()).unwrap(),
            2.8_f64.cos(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            chebyshev_T(4, 0.7_f64.cos()).unwrap(),
            -0.942_222_340_668_658,
            epsilon = 1e-9
        );
        assert_abs_diff_eq!(
            chebyshev_T(3, 0.4_f64.sin()).unwrap(),
            -(1.2_f64.sin()),
            epsilon = 1e-12
        );
        assert!(matches!(chebyshev_T(2, 1.5), Err(Error::Domain(_))));
    }

    #[test]
    fn zero_signal_has_zero_spectrum() {
        let g = grid(400);
        let r = fourier_coeffs(&vec![0.0; g.len()], &g, 20).unwrap();
        assert!(r.alpha_tilde.iter().all(|&a| a == 0.0));
        assert!(r.support.is_empty());
        assert_eq!(r.residual_l2, 0.0);
    }

    #[test]
    fn constant_signal_lives_at_index_zero() {
        let g = grid(400);
        let r = fourier_coeffs(&vec![0.7; g.len()], &g, 20).unwrap();
        assert_abs_diff_eq!(r.alpha_tilde[0], 0.7, epsilon = 1e-12);
        assert!(r.support.is_empty());
    }

    #[test]
    fn coarse_grid_is_a_resolution_error() {
        let g = grid(40);
        let f: Vec<f64> = g.iter().map(|t| (PI * t).cos()).collect();
        assert!(matches!(
            fourier_coeffs(&f, &g, 20),
            Err(Error::Resolution(_))
        ));
    }

    #[test]
    fn uneven_grid_rejected() {
        let mut g = grid(100);
        g[10] += 1e-4;
        assert!(matches!(trapezoid_weights(&g), Err(Error::Grid(_))));
        assert!(matches!(
            trapezoid_weights(&[0.0, 1.0]),
            Err(Error::Grid(_))
        ));
    }

    #[test]
    fn signed_alpha_mirrors() {
        let a = SignedAlpha::from_tilde(&[0.0, 1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(a.get(1), 1.0);
        assert_eq!(a.get(-1), -1.0);
        assert_eq!(a.support(0.0), vec![-1, 1]);
        let z = SignedAlpha::from_tilde(&[0.0; 5]).unwrap();
        assert!(z.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lemma_rejects_constant_mode() {
        let cfg = EmbeddingConfig::new(2).unwrap();
        let a = SignedAlpha::from_tilde(&[0.0, 1.0, 0.0, 0.0, 0.0]).unwrap();
        let g = grid(200);
        assert!(matches!(
            lemma_expectation(&a, 0, Sign::Plus, &g, cfg),
            Err(Error::InvalidMode(0))
        ));
        assert!(matches!(
            lemma_expectation(&a, 5, Sign::Plus, &g, cfg),
            Err(Error::Index { .. })
        ));
    }

    #[test]
    fn alignment_flags_phase_mixing_and_off_pattern() {
        let mut tilde = vec![0.0; 2 * 8 + 1];
        tilde[1] = 1.0; // cos 1
        tilde[6] = 0.5; // sin 3
        let r = SpectrumReport {
            m: 8,
            alpha_tilde: tilde.clone(),
            support: vec![],
            residual_l2: 0.0,
            threshold: 0.0,
        }
        .with_threshold(1e-3);
        assert!(check_alignment(&r).is_empty());

        tilde[3] = 0.2; // cos 2: index 3 = 4·0 + 3
        tilde[5] = 0.2; // cos 3 alongside sin 3
        let r = SpectrumReport {
            alpha_tilde: tilde,
            ..r
        }
        .with_threshold(1e-3);
        let issues = check_alignment(&r);
        assert!(issues.contains(&AlignmentIssue::OffPattern { index: 3 }));
        assert!(issues.contains(&AlignmentIssue::PhaseMixed { frequency: 3 }));
    }
}
