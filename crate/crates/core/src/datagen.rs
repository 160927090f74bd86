//! Synthetic targets, noise corruption, sample grids and series ingestion.

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrigKind {
    Cos,
    Sin,
}

/// Scalar link applied to a sinusoid value in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "link", content = "param")]
pub enum Link {
    /// `s · v`.
    Scale(f64),
    /// `(s · v)³`.
    CubeOfScaled(f64),
    /// `tanh(β · v)`.
    TanhOfScaled(f64),
    /// `max(v, 0)`.
    Relu,
    /// `Σ_k a_k v^k`.
    Polynomial(Vec<f64>),
}

impl Link {
    pub fn apply(&self, v: f64) -> f64 {
        match self {
            Link::Scale(s) => s * v,
            Link::CubeOfScaled(s) => (s * v).powi(3),
            Link::TanhOfScaled(b) => (b * v).tanh(),
            Link::Relu => v.max(0.0),
            Link::Polynomial(a) => a.iter().rev().fold(0.0, |acc, &c| acc * v + c),
        }
    }
}

/// `link(trig(π · a · (θ − phase)))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkTerm {
    pub kind: TrigKind,
    pub frequency: usize,
    pub phase: f64,
    pub link: Link,
}

impl LinkTerm {
    pub fn new(kind: TrigKind, frequency: usize, link: Link) -> Self {
        Self {
            kind,
            frequency,
            phase: 0.0,
            link,
        }
    }

    pub fn with_phase(mut self, phase: f64) -> Self {
        self.phase = phase;
        self
    }

    pub fn eval(&self, theta: f64) -> f64 {
        let arg = PI * self.frequency as f64 * (theta - self.phase);
        let v = match self.kind {
            TrigKind::Cos => arg.cos(),
            TrigKind::Sin => arg.sin(),
        };
        self.link.apply(v)
    }
}

/// Additive noise distribution.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseModel {
    #[default]
    Gaussian,
    /// Gaussian truncated to `|z| ≤ kappa`.
    Clipped { kappa: f64 },
}

impl NoiseModel {
    /// Truncation at four standard deviations.
    pub fn clipped_4sigma(sigma: f64) -> Self {
        NoiseModel::Clipped { kappa: 4.0 * sigma }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub name: String,
    pub terms: Vec<LinkTerm>,
    pub noise_sigma: f64,
    #[serde(default)]
    pub noise: NoiseModel,
}

impl TargetSpec {
    pub fn new(name: impl Into<String>, terms: Vec<LinkTerm>, noise_sigma: f64) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::Config("target needs at least one term".into()));
        }
        if terms.iter().any(|t| t.frequency == 0) {
            return Err(Error::Config("term frequencies must be positive".into()));
        }
        if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
            return Err(Error::Config(format!(
                "noise sigma must be nonnegative, got {noise_sigma}"
            )));
        }
        Ok(Self {
            name: name.into(),
            terms,
            noise_sigma,
            noise: NoiseModel::Gaussian,
        })
    }

    /// `0.5 cos 5πθ + 0.8 cos 29πθ + 0.3 sin 61πθ`.
    pub fn ex1(noise_sigma: f64) -> Self {
        let terms = vec![
            LinkTerm::new(TrigKind::Cos, 5, Link::Scale(0.5)),
            LinkTerm::new(TrigKind::Cos, 29, Link::Scale(0.8)),
            LinkTerm::new(TrigKind::Sin, 61, Link::Scale(0.3)),
        ];
        Self::new("ex1", terms, noise_sigma).expect("valid preset")
    }

    /// `ex1` with phase shifts `(0.2, -0.1, 0.3)`.
    pub fn ex2(noise_sigma: f64) -> Self {
        let terms = vec![
            LinkTerm::new(TrigKind::Cos, 5, Link::Scale(0.5)).with_phase(0.2),
            LinkTerm::new(TrigKind::Cos, 29, Link::Scale(0.8)).with_phase(-0.1),
            LinkTerm::new(TrigKind::Sin, 61, Link::Scale(0.3)).with_phase(0.3),
        ];
        Self::new("ex2", terms, noise_sigma).expect("valid preset")
    }

    /// `(0.5 cos 5πθ)³ + tanh(10 cos 29πθ) + max(sin 61πθ, 0)`.
    pub fn ex3(noise_sigma: f64) -> Self {
        let terms = vec![
            LinkTerm::new(TrigKind::Cos, 5, Link::CubeOfScaled(0.5)),
            LinkTerm::new(TrigKind::Cos, 29, Link::TanhOfScaled(10.0)),
            LinkTerm::new(TrigKind::Sin, 61, Link::Relu),
        ];
        Self::new("ex3", terms, noise_sigma).expect("valid preset")
    }

    pub fn preset(name: &str, noise_sigma: f64) -> Result<Self> {
        match name {
            "ex1" => Ok(Self::ex1(noise_sigma)),
            "ex2" => Ok(Self::ex2(noise_sigma)),
            "ex3" => Ok(Self::ex3(noise_sigma)),
            other => Err(Error::Config(format!("unknown target preset `{other}`"))),
        }
    }

    pub fn with_noise(mut self, noise: NoiseModel) -> Self {
        self.noise = noise;
        self
    }
}

pub fn eval_target(spec: &TargetSpec, theta: f64) -> f64 {
    spec.terms.iter().map(|t| t.eval(theta)).sum()
}

/// Closed grid `-1, -1 + Δ, …, 1`; `2/Δ` must be an integer.
pub fn gen_grid(delta: f64) -> Result<Vec<f64>> {
    if !(delta > 0.0 && delta <= 2.0) {
        return Err(Error::Grid(format!(
            "grid step must lie in (0, 2], got {delta}"
        )));
    }
    let ratio = 2.0 / delta;
    let n = ratio.round();
    if (ratio - n).abs() > 1e-9 * n.max(1.0) {
        return Err(Error::Grid(format!("2 / {delta} is not an integer")));
    }
    let n = n as i64;
    Ok((0..=n).map(|i| (2 * i - n) as f64 / n as f64).collect())
}

/// Affine maps applied on ingestion, kept so predictions can be mapped back.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rescale {
    pub t_min: f64,
    pub t_max: f64,
    /// `(y_min, y_max)` when values were normalized to `[-1, 1]`.
    pub y_range: Option<(f64, f64)>,
}

fn to_unit(v: f64, lo: f64, hi: f64) -> f64 {
    2.0 * (v - lo) / (hi - lo) - 1.0
}

fn from_unit(u: f64, lo: f64, hi: f64) -> f64 {
    lo + (u + 1.0) * (hi - lo) / 2.0
}

impl Rescale {
    pub fn theta_to_t(&self, theta: f64) -> f64 {
        from_unit(theta, self.t_min, self.t_max)
    }

    pub fn value_to_raw(&self, y: f64) -> f64 {
        match self.y_range {
            Some((lo, hi)) => from_unit(y, lo, hi),
            None => y,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub seed: Option<u64>,
    pub sigma: f64,
    pub source: String,
    pub rescale: Option<Rescale>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub theta: Vec<f64>,
    pub y: Vec<f64>,
    pub y_clean: Option<Vec<f64>>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn new(
        theta: Vec<f64>,
        y: Vec<f64>,
        y_clean: Option<Vec<f64>>,
        meta: DatasetMeta,
    ) -> Result<Self> {
        let ds = Self {
            theta,
            y,
            y_clean,
            meta,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.theta.len();
        if self.y.len() != n {
            return Err(Error::shape(n, self.y.len(), "labels"));
        }
        if let Some(c) = &self.y_clean {
            if c.len() != n {
                return Err(Error::shape(n, c.len(), "clean labels"));
            }
        }
        if self.theta.iter().any(|t| !(t.abs() <= 1.0)) {
            return Err(Error::Domain("sample locations must lie in [-1, 1]".into()));
        }
        if self.theta.windows(2).any(|p| p[1] < p[0]) {
            return Err(Error::Data("sample locations must be nondecreasing".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    /// Clean labels if present, otherwise the observed ones.
    pub fn truth(&self) -> &[f64] {
        self.y_clean.as_deref().unwrap_or(&self.y)
    }

    /// `Var(clean) / σ²` with the nominal noise level.
    pub fn snr(&self) -> Option<f64> {
        let clean = self.y_clean.as_ref()?;
        (self.meta.sigma > 0.0).then(|| variance(clean) / (self.meta.sigma * self.meta.sigma))
    }

    /// Sample variance of `y - y_clean`.
    pub fn realized_noise_variance(&self) -> Option<f64> {
        let clean = self.y_clean.as_ref()?;
        let z: Vec<f64> = self.y.iter().zip(clean).map(|(y, c)| y - c).collect();
        Some(variance(&z))
    }

    /// CSV with header `theta,y[,y_clean]`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        match &self.y_clean {
            Some(clean) => {
                wtr.write_record(["theta", "y", "y_clean"])?;
                for ((t, y), c) in self.theta.iter().zip(&self.y).zip(clean) {
                    wtr.write_record([t.to_string(), y.to_string(), c.to_string()])?;
                }
            }
            None => {
                wtr.write_record(["theta", "y"])?;
                for (t, y) in self.theta.iter().zip(&self.y) {
                    wtr.write_record([t.to_string(), y.to_string()])?;
                }
            }
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let rows = read_numeric_csv(path, &["theta", "y"], Some("y_clean"))?;
        let theta = rows.iter().map(|r| r[0]).collect();
        let y = rows.iter().map(|r| r[1]).collect();
        let y_clean = rows
            .first()
            .is_some_and(|r| r.len() == 3)
            .then(|| rows.iter().map(|r| r[2]).collect());
        Dataset::new(
            theta,
            y,
            y_clean,
            DatasetMeta {
                source: path.display().to_string(),
                ..Default::default()
            },
        )
    }
}

fn variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n
}

/// Reads a headed numeric CSV with the `required` columns, in order, and an
/// optional trailing column. Errors carry the offending line number.
fn read_numeric_csv(
    path: &Path,
    required: &[&str],
    optional: Option<&str>,
) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path)?;
    let perr = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| perr(1, e.to_string()))?.clone();
    let mut cols: Vec<usize> = Vec::new();
    for name in required {
        let idx = headers
            .iter()
            .position(|h| h == *name)
            .ok_or_else(|| perr(1, format!("missing column `{name}`")))?;
        cols.push(idx);
    }
    if let Some(idx) = optional.and_then(|o| headers.iter().position(|h| h == o)) {
        cols.push(idx);
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| perr(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let row = cols
            .iter()
            .map(|&c| {
                let field = rec
                    .get(c)
                    .ok_or_else(|| perr(line, format!("missing field {}", c + 1)))?;
                let v: f64 = field
                    .parse()
                    .map_err(|_| perr(line, format!("`{field}` is not a number")))?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(perr(line, format!("`{field}` is not finite")))
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

/// `n` iid noise draws with standard deviation `sigma`.
pub fn noise_vector(n: usize, sigma: f64, model: NoiseModel, seed: u64) -> Result<Vec<f64>> {
    if sigma == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| {
            let z = normal.sample(&mut rng);
            match model {
                NoiseModel::Gaussian => z,
                NoiseModel::Clipped { kappa } => z.clamp(-kappa, kappa),
            }
        })
        .collect())
}

/// Clean target on `grid` plus iid noise at the preset noise level.
pub fn make_dataset(spec: &TargetSpec, grid: &[f64], seed: u64) -> Result<Dataset> {
    let clean: Vec<f64> = grid.iter().map(|&t| eval_target(spec, t)).collect();
    let noise = noise_vector(grid.len(), spec.noise_sigma, spec.noise, seed)?;
    let y = clean.iter().zip(&noise).map(|(c, z)| c + z).collect();
    Dataset::new(
        grid.to_vec(),
        y,
        Some(clean),
        DatasetMeta {
            seed: Some(seed),
            sigma: spec.noise_sigma,
            source: spec.name.clone(),
            rescale: None,
        },
    )
}

/// Corrupts the observed labels with Gaussian noise; the pre-noise labels
/// become the clean reference when none is recorded.
pub fn add_noise(dataset: &Dataset, sigma: f64, seed: u64) -> Result<Dataset> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Config(format!(
            "noise sigma must be nonnegative, got {sigma}"
        )));
    }
    let noise = noise_vector(dataset.len(), sigma, NoiseModel::Gaussian, seed)?;
    let mut out = dataset.clone();
    if out.y_clean.is_none() {
        out.y_clean = Some(dataset.y.clone());
    }
    for (y, z) in out.y.iter_mut().zip(&noise) {
        *y += z;
    }
    out.meta.seed = Some(seed);
    out.meta.sigma = sigma;
    Ok(out)
}

/// Loads a `t,y` series, mapping `t` affinely onto `[-1, 1]` and, when
/// `normalize` is set, `y` onto `[-1, 1]` as well.
pub fn load_series_csv(path: &Path, normalize: bool) -> Result<Dataset> {
    let mut rows = read_numeric_csv(path, &["t", "y"], None)?;
    if rows.len() < 2 {
        return Err(Error::Domain(format!(
            "{}: a series needs at least two points, found {}",
            path.display(),
            rows.len()
        )));
    }
    rows.sort_by(|a, b| a[0].total_cmp(&b[0]));
    let (t_min, t_max) = (rows[0][0], rows[rows.len() - 1][0]);
    if t_max <= t_min {
        return Err(Error::Domain("series time stamps are all equal".into()));
    }
    let ys: Vec<f64> = rows.iter().map(|r| r[1]).collect();
    let (y_lo, y_hi) = ys
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let y_range = (normalize && y_hi > y_lo).then_some((y_lo, y_hi));
    let theta = rows
        .iter()
        .map(|r| to_unit(r[0], t_min, t_max).clamp(-1.0, 1.0))
        .collect();
    let y = match y_range {
        Some((lo, hi)) => ys.iter().map(|&v| to_unit(v, lo, hi)).collect(),
        None => ys,
    };
    Dataset::new(
        theta,
        y,
        None,
        DatasetMeta {
            seed: None,
            sigma: 0.0,
            source: path.display().to_string(),
            rescale: Some(Rescale {
                t_min,
                t_max,
                y_range,
            }),
        },
    )
}

/// Piecewise-linear interpolation of the observed labels onto `grid`.
pub fn resample_linear(dataset: &Dataset, grid: &[f64]) -> Result<Dataset> {
    if dataset.len() < 2 {
        return Err(Error::Domain(
            "interpolation needs at least two points".into(),
        ));
    }
    let (th, y) = (&dataset.theta, &dataset.y);
    let mut k = 0;
    let values = grid
        .iter()
        .map(|&t| {
            while k + 2 < th.len() && th[k + 1] < t {
                k += 1;
            }
            let (t0, t1) = (th[k], th[k + 1]);
            if t1 == t0 {
                return y[k];
            }
            let s = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
            y[k] + s * (y[k + 1] - y[k])
        })
        .collect();
    Dataset::new(grid.to_vec(), values, None, dataset.meta.clone())
}
