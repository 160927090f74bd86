//! Regression presets: datasets, model sets and per-model training runs.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::analysis::relative_l2;
use crate::datagen::{
    add_noise, gen_grid, load_series_csv, make_dataset, resample_linear, Dataset, TargetSpec,
};
use crate::embedding::{doubled_mode, EmbeddingConfig, EmbeddingKind};
use crate::error::{Error, Result};
use crate::model::{Checkpoint, DeepNetParams, DEFAULT_HIDDEN_WIDTH};
use crate::spectral::fourier_coeffs;
use crate::train::{
    default_q1, default_q2, train_joint, train_layerwise_doubled, InverseDecay, JointConfig,
    JointModel, Phase1Config, Phase2Config, Phase2Schedule, TrainingTrace,
};

/// Iteration count assumed for a full-scale run.
pub const FULL_ITERS: usize = 50_000;

/// Network variant of a regression run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    /// `u^diag_0` trained layer-wise.
    LayerwiseDiag0,
    Diag(usize),
    Standard(usize),
}

impl ModelKind {
    pub fn name(&self) -> String {
        match self {
            ModelKind::LayerwiseDiag0 => "lwdiag0".into(),
            ModelKind::Diag(n) => format!("diag{n}"),
            ModelKind::Standard(n) => format!("standard{n}"),
        }
    }

    pub fn has_diagonal(&self) -> bool {
        !matches!(self, ModelKind::Standard(_))
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown model `{s}`"));
        if s == "lwdiag0" || s == "*diag0" {
            return Ok(ModelKind::LayerwiseDiag0);
        }
        if let Some(n) = s.strip_prefix("diag") {
            return n.parse().map(ModelKind::Diag).map_err(|_| bad());
        }
        if let Some(n) = s.strip_prefix("standard") {
            let n: usize = n.parse().map_err(|_| bad())?;
            return if n >= 1 {
                Ok(ModelKind::Standard(n))
            } else {
                Err(bad())
            };
        }
        Err(bad())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Ex1,
    Ex2,
    Ex3,
    Ex4,
}

impl Preset {
    pub const ALL: [Preset; 4] = [Preset::Ex1, Preset::Ex2, Preset::Ex3, Preset::Ex4];

    pub fn name(&self) -> &'static str {
        match self {
            Preset::Ex1 => "ex1",
            Preset::Ex2 => "ex2",
            Preset::Ex3 => "ex3",
            Preset::Ex4 => "ex4",
        }
    }

    pub fn models(&self) -> Vec<ModelKind> {
        use ModelKind::*;
        match self {
            Preset::Ex1 | Preset::Ex2 => vec![LayerwiseDiag0, Diag(0), Diag(1), Standard(1)],
            Preset::Ex3 | Preset::Ex4 => vec![
                LayerwiseDiag0,
                Diag(0),
                Diag(1),
                Diag(2),
                Standard(1),
                Standard(2),
                Standard(3),
            ],
        }
    }

    /// Synthetic target, if the preset has one.
    pub fn target(&self, sigma: f64) -> Option<TargetSpec> {
        match self {
            Preset::Ex1 => Some(TargetSpec::ex1(sigma)),
            Preset::Ex2 => Some(TargetSpec::ex2(sigma)),
            Preset::Ex3 => Some(TargetSpec::ex3(sigma)),
            Preset::Ex4 => None,
        }
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown preset `{s}`")))
    }
}

/// Every knob of a preset run. Defaults follow the published setup scaled to
/// desk size by `scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub m: usize,
    pub delta: f64,
    pub sigma: f64,
    pub width: usize,
    /// Iterations are `full_iters / scale`.
    pub scale: f64,
    pub full_iters: usize,
    pub schedule: InverseDecay,
    pub batch: usize,
    pub r_c: f64,
    pub lambda: f64,
    pub eta: f64,
    /// Phase-2 initial rate for layer-wise training.
    pub eta_prime: f64,
    pub eval_every: usize,
    pub snapshot_every: usize,
    /// Series file for the real-data preset.
    pub series: PathBuf,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            m: 64,
            delta: 2e-4,
            sigma: 0.4,
            width: DEFAULT_HIDDEN_WIDTH,
            scale: 10.0,
            full_iters: FULL_ITERS,
            schedule: InverseDecay::DEFAULT,
            batch: 201,
            r_c: 0.5,
            lambda: 0.1,
            eta: 0.01,
            eta_prime: 5.0,
            eval_every: 250,
            snapshot_every: 1000,
            series: default_series_path(),
        }
    }
}

pub fn default_series_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/sp500_trends_16d.csv")
}

impl Settings {
    pub fn iters(&self) -> usize {
        ((self.full_iters as f64 / self.scale).round() as usize).max(1)
    }

    pub fn embedding(&self) -> Result<EmbeddingConfig> {
        EmbeddingConfig::new(self.m)
    }

    pub fn joint(&self) -> JointConfig {
        JointConfig {
            schedule: self.schedule,
            batch: self.batch,
            iters: self.iters(),
            eval_every: self.eval_every,
            snapshot_every: self.snapshot_every,
        }
    }

    /// Phase configurations of the layer-wise run, each as long as a joint run
    /// and with the decay restarted for phase 2.
    pub fn layerwise(&self, alpha_tilde_max: Option<f64>) -> (Phase1Config, Phase2Config) {
        let q1 = alpha_tilde_max.map_or(10.0, |a| default_q1(self.r_c, a, self.lambda, self.m));
        let mut p1 = Phase1Config::new(self.eta, self.lambda, q1, self.iters(), self.batch);
        p1.eval_every = self.eval_every;
        p1.snapshot_every = self.snapshot_every;
        let q2 = if alpha_tilde_max.is_some() {
            default_q2(self.lambda, self.m, self.r_c)
        } else {
            10.0
        };
        let mut p2 = Phase2Config::new(
            self.eta_prime,
            self.iters(),
            q2,
            self.batch,
            Phase2Schedule::InverseDecay {
                gamma: self.schedule.gamma,
                m0: self.schedule.m0,
            },
        );
        p2.eval_every = self.eval_every;
        p2.snapshot_every = self.snapshot_every;
        (p1, p2)
    }
}

/// Noisy training data for a preset. The series preset is interpolated onto
/// the sample grid before corruption.
pub fn build_dataset(preset: Preset, settings: &Settings, seed: u64) -> Result<Dataset> {
    let grid = gen_grid(settings.delta)?;
    match preset.target(settings.sigma) {
        Some(spec) => make_dataset(&spec, &grid, seed),
        None => {
            let series = load_series_csv(&settings.series, true)?;
            let dense = resample_linear(&series, &grid)?;
            add_noise(&dense, settings.sigma, seed)
        }
    }
}

/// `max |α̃|` of the clean target, used to scale the layer-wise boxes.
pub fn clean_alpha_max(preset: Preset, dataset: &Dataset, m: usize) -> Result<Option<f64>> {
    if preset == Preset::Ex4 {
        return Ok(None);
    }
    let Some(clean) = &dataset.y_clean else {
        return Ok(None);
    };
    let report = fourier_coeffs(clean, &dataset.theta, m)?;
    Ok(Some(
        report
            .alpha_tilde
            .iter()
            .fold(0.0_f64, |a, v| a.max(v.abs())),
    ))
}

/// `|weight|` per embedding slot, with the mode it multiplies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightEntry {
    pub slot: usize,
    pub frequency: usize,
    pub kind: String,
    pub sign: i8,
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelRun {
    pub kind: ModelKind,
    pub seed: u64,
    pub pred: Vec<f64>,
    pub rel_l2: f64,
    pub trace: TrainingTrace,
    pub weights: Vec<WeightEntry>,
    pub checkpoint: Checkpoint,
}

/// Per-slot magnitudes: the diagonal when present, otherwise the row norms of
/// the first dense layer.
pub fn weight_distribution(params: &DeepNetParams) -> Vec<WeightEntry> {
    let mags: Vec<f64> = match &params.diagonal {
        Some(d) => d.iter().map(|v| v.abs()).collect(),
        None => params.layers[0]
            .weight
            .rows()
            .into_iter()
            .map(|r| r.dot(&r).sqrt())
            .collect(),
    };
    mags.into_iter()
        .enumerate()
        .map(|(slot, magnitude)| {
            let (frequency, kind, sign) = match params.embedding {
                EmbeddingKind::Doubled => {
                    doubled_mode(slot, params.cfg).expect("slot within embedding")
                }
                EmbeddingKind::Symmetrized => {
                    let d = crate::embedding::mode_of(params.cfg.index_of_slot(slot), params.cfg)
                        .expect("slot within embedding");
                    (d.frequency, d.kind, d.sign)
                }
            };
            WeightEntry {
                slot,
                frequency,
                kind: kind.as_str().into(),
                sign,
                magnitude,
            }
        })
        .collect()
}

/// Trains one model on `dataset` and scores it against the clean labels.
pub fn run_model(
    kind: ModelKind,
    dataset: &Dataset,
    settings: &Settings,
    alpha_max: Option<f64>,
    seed: u64,
) -> Result<ModelRun> {
    let cfg = settings.embedding()?;
    let (params, trace) = match kind {
        ModelKind::LayerwiseDiag0 => {
            let (p1, p2) = settings.layerwise(alpha_max);
            train_layerwise_doubled(dataset, cfg, settings.r_c, &p1, &p2, seed)?
        }
        ModelKind::Diag(n) | ModelKind::Standard(n) => {
            let init = if kind.has_diagonal() {
                DeepNetParams::diag(cfg, EmbeddingKind::Doubled, n, settings.width, seed)?
            } else {
                DeepNetParams::standard(cfg, EmbeddingKind::Doubled, n, settings.width, seed)?
            };
            let mut model = JointModel::Deep(init);
            let trace = train_joint(&mut model, dataset, &settings.joint(), seed.wrapping_add(1))?;
            let JointModel::Deep(params) = model else {
                unreachable!("deep model stays deep")
            };
            (params, trace)
        }
    };
    let pred = JointModel::Deep(params.clone()).predict(&dataset.theta)?;
    let rel_l2 = relative_l2(&pred, dataset.truth())?;
    Ok(ModelRun {
        kind,
        seed,
        weights: weight_distribution(&params),
        pred,
        rel_l2,
        trace,
        checkpoint: Checkpoint::Deep(params),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_names_round_trip() {
        for p in Preset::ALL {
            for k in p.models() {
                assert_eq!(k.name().parse::<ModelKind>().unwrap(), k);
            }
            assert_eq!(p.name().parse::<Preset>().unwrap(), p);
        }
        assert!("standard0".parse::<ModelKind>().is_err());
        assert!("ex5".parse::<Preset>().is_err());
    }

    #[test]
    fn preset_model_sets() {
        assert_eq!(Preset::Ex1.models().len(), 4);
        assert_eq!(Preset::Ex3.models().len(), 7);
        assert_eq!(Settings::default().iters(), 5000);
    }

    #[test]
    fn series_preset_dataset() {
        let settings = Settings {
            delta: 0.01,
            ..Settings::default()
        };
        let ds = build_dataset(Preset::Ex4, &settings, 1).unwrap();
        assert_eq!(ds.len(), 201);
        assert_eq!(ds.meta.sigma, 0.4);
        assert!(ds.y_clean.is_some());
    }

    #[test]
    fn tiny_runs_complete() {
        let settings = Settings {
            m: 4,
            delta: 0.02,
            width: 8,
            full_iters: 40,
            scale: 1.0,
            batch: 10,
            eval_every: 10,
            snapshot_every: 20,
            ..Settings::default()
        };
        let ds = build_dataset(Preset::Ex1, &settings, 0).unwrap();
        for kind in Preset::Ex3.models() {
            let run = run_model(kind, &ds, &settings, Some(0.8), 3).unwrap();
            assert!(run.rel_l2.is_finite());
            assert_eq!(run.pred.len(), ds.len());
            assert_eq!(run.weights.len(), 18);
        }
    }
}
