//! Layer-wise projected SGD on the diagonal network and the joint-SGD baseline.

use std::io::Write;
use std::time::Instant;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::embedding::{EmbeddingConfig, EmbeddingKind, FeatureMatrix};
use crate::error::{Error, Result};
use crate::model::{
    forward_batch, forward_diag_slice, grad_batch, init_symmetric_c_doubled, Activation,
    DeepNetParams, DenseLayer, DiagNetParams,
};

/// Losses above this abort joint training.
pub const DIVERGENCE_LOSS: f64 = 1e6;

/// Clamps every entry into `[-q, q]`.
pub fn project_box(v: &[f64], q: f64) -> Vec<f64> {
    let mut out = v.to_vec();
    project_box_inplace(&mut out, q);
    out
}

pub fn project_box_inplace(v: &mut [f64], q: f64) {
    for x in v {
        *x = x.clamp(-q, q);
    }
}

/// `α₀ / (1 + γ s / m₀)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InverseDecay {
    pub alpha0: f64,
    pub gamma: f64,
    pub m0: f64,
}

impl InverseDecay {
    pub const DEFAULT: InverseDecay = InverseDecay {
        alpha0: 2e-3,
        gamma: 0.95,
        m0: 5e4,
    };

    pub fn rate(&self, step: usize) -> f64 {
        self.alpha0 / (1.0 + self.gamma * step as f64 / self.m0)
    }

    fn validate(&self) -> Result<()> {
        if !(self.alpha0 > 0.0 && self.gamma >= 0.0 && self.m0 > 0.0) {
            return Err(Error::Config(format!(
                "invalid inverse-decay schedule {self:?}"
            )));
        }
        Ok(())
    }
}

/// Starting point `w¹` of phase 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum WInit {
    Zero,
    Constant(f64),
    /// Independent `±ε` per entry.
    RandomSign(f64),
}

impl WInit {
    /// Default for the activation: ReLU needs a nonzero start because
    /// `σ'(0) = 0` makes `w = 0` stationary.
    pub fn default_for(act: Activation) -> Self {
        match act {
            Activation::Relu => WInit::RandomSign(1e-6),
            Activation::Identity => WInit::Zero,
        }
    }

    fn draw(self, dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match self {
            WInit::Zero => vec![0.0; dim],
            WInit::Constant(v) => vec![v; dim],
            WInit::RandomSign(eps) => (0..dim)
                .map(|_| if rng.random::<bool>() { eps } else { -eps })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase1Config {
    pub eta: f64,
    pub lambda: f64,
    pub q1: f64,
    pub t: usize,
    pub batch: usize,
    pub activation: Activation,
    pub w_init: WInit,
    /// Step-size decay; `None` keeps `η` constant.
    pub decay: Option<InverseDecay>,
    /// Fail instead of wrapping when `T·B` exceeds the dataset.
    pub strict_fresh: bool,
    /// Snapshot cadence in iterations (0 disables).
    pub snapshot_every: usize,
    /// Relative-L2 evaluation cadence in iterations (0 disables).
    pub eval_every: usize,
}

impl Phase1Config {
    pub fn new(eta: f64, lambda: f64, q1: f64, t: usize, batch: usize) -> Self {
        Self {
            eta,
            lambda,
            q1,
            t,
            batch,
            activation: Activation::Relu,
            w_init: WInit::default_for(Activation::Relu),
            decay: None,
            strict_fresh: false,
            snapshot_every: 0,
            eval_every: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.lambda > 0.0 && self.lambda < 1.0 && self.q1 > 0.0) {
            return Err(Error::Config(format!(
                "phase 1 needs η > 0, λ in (0, 1), Q₁ > 0 (got η = {}, λ = {}, Q₁ = {})",
                self.eta, self.lambda, self.q1
            )));
        }
        if self.eta * self.lambda >= 1.0 {
            return Err(Error::Config(format!(
                "ηλ = {} must be below 1",
                self.eta * self.lambda
            )));
        }
        if self.t == 0 || self.batch == 0 {
            return Err(Error::Config("phase 1 needs T ≥ 1 and B ≥ 1".into()));
        }
        if let Some(d) = &self.decay {
            d.validate()?;
        }
        Ok(())
    }

    /// Checks `Q₁ ≥ ‖c₀ ⊙ α / 2‖∞ / λ`.
    pub fn check_theory_box(&self, c0: &[f64], alpha: &[f64]) -> Result<()> {
        let need = c0
            .iter()
            .zip(alpha)
            .fold(0.0_f64, |a, (c, al)| a.max((c * al / 2.0).abs()))
            / self.lambda;
        if self.q1 < need {
            return Err(Error::Config(format!(
                "Q₁ = {} is below the required {need}",
                self.q1
            )));
        }
        Ok(())
    }

    fn rate(&self, step: usize) -> f64 {
        match &self.decay {
            Some(d) => self.eta / (1.0 + d.gamma * step as f64 / d.m0),
            None => self.eta,
        }
    }
}

/// Default `Q₁ = r_c ‖α̃‖∞ / (λ √m)`.
pub fn default_q1(r_c: f64, alpha_tilde_max: f64, lambda: f64, m: usize) -> f64 {
    r_c * alpha_tilde_max / (lambda * (m as f64).sqrt())
}

/// Default `Q₂ = 8 λ √m / r_c²`.
pub fn default_q2(lambda: f64, m: usize, r_c: f64) -> f64 {
    8.0 * lambda * (m as f64).sqrt() / (r_c * r_c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Phase2Schedule {
    /// `η'` every step.
    Constant,
    /// `min{1/(10 Q₁²), η'/√T'}` every step.
    LastIterate { q1: f64 },
    /// `η' / (1 + γ s / m₀)`.
    InverseDecay { gamma: f64, m0: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase2Config {
    pub eta_prime: f64,
    pub t_prime: usize,
    pub q2: f64,
    pub batch: usize,
    pub schedule: Phase2Schedule,
    pub snapshot_every: usize,
    pub eval_every: usize,
}

impl Phase2Config {
    pub fn new(
        eta_prime: f64,
        t_prime: usize,
        q2: f64,
        batch: usize,
        schedule: Phase2Schedule,
    ) -> Self {
        Self {
            eta_prime,
            t_prime,
            q2,
            batch,
            schedule,
            snapshot_every: 0,
            eval_every: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta_prime > 0.0 && self.q2 > 0.0) || self.t_prime == 0 || self.batch == 0 {
            return Err(Error::Config(format!(
                "phase 2 needs η' > 0, Q₂ > 0, T' ≥ 1, B ≥ 1 (got {self:?})"
            )));
        }
        Ok(())
    }

    pub fn rate(&self, step: usize) -> f64 {
        match self.schedule {
            Phase2Schedule::Constant => self.eta_prime,
            Phase2Schedule::LastIterate { q1 } => {
                phase2_step_size(q1, self.eta_prime, self.t_prime)
            }
            Phase2Schedule::InverseDecay { gamma, m0 } => {
                self.eta_prime / (1.0 + gamma * step as f64 / m0)
            }
        }
    }
}

/// `min{1/(10 Q₁²), η'/√T'}`.
pub fn phase2_step_size(q1: f64, eta_prime: f64, t_prime: usize) -> f64 {
    (1.0 / (10.0 * q1 * q1)).min(eta_prime / (t_prime as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointConfig {
    pub schedule: InverseDecay,
    pub batch: usize,
    pub iters: usize,
    pub eval_every: usize,
    pub snapshot_every: usize,
}

impl JointConfig {
    /// `(α₀, γ, m₀, N_batch) = (2e-3, 0.95, 5e4, 201)`.
    pub fn with_iters(iters: usize) -> Self {
        Self {
            schedule: InverseDecay::DEFAULT,
            batch: 201,
            iters,
            eval_every: 0,
            snapshot_every: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if self.batch == 0 || self.iters == 0 {
            return Err(Error::Config(
                "joint training needs batch ≥ 1 and iters ≥ 1".into(),
            ));
        }
        Ok(())
    }
}

/// Periodic parameter copy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub iteration: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub loss: Vec<f64>,
    pub lr: Vec<f64>,
    /// Relative L2 against the clean target at the evaluation cadence.
    pub rel_l2: Vec<Option<f64>>,
    pub snapshots: Vec<Snapshot>,
    pub seed: u64,
    pub wall_time: f64,
    pub warnings: Vec<String>,
}

impl TrainingTrace {
    fn new(seed: u64) -> Self {
        Self {
            seed,
            ..Default::default()
        }
    }

    fn push(&mut self, loss: f64, lr: f64, rel: Option<f64>) {
        self.loss.push(loss);
        self.lr.push(lr);
        self.rel_l2.push(rel);
    }

    pub fn len(&self) -> usize {
        self.loss.len()
    }

    pub fn is_empty(&self) -> bool {
        self.loss.is_empty()
    }

    pub fn last_rel_l2(&self) -> Option<f64> {
        self.rel_l2.iter().rev().find_map(|r| *r)
    }

    /// Appends another trace, renumbering its iterations.
    pub fn extend(&mut self, other: TrainingTrace) {
        let offset = self.len();
        self.loss.extend(other.loss);
        self.lr.extend(other.lr);
        self.rel_l2.extend(other.rel_l2);
        self.snapshots
            .extend(other.snapshots.into_iter().map(|mut s| {
                s.iteration += offset;
                s
            }));
        self.wall_time += other.wall_time;
        self.warnings.extend(other.warnings);
    }

    /// CSV with columns `iteration,loss,rel_l2,lr`; `rel_l2` is blank between evaluations.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["iteration", "loss", "rel_l2", "lr"])?;
        for (i, ((loss, lr), rel)) in self.loss.iter().zip(&self.lr).zip(&self.rel_l2).enumerate() {
            wtr.write_record([
                (i + 1).to_string(),
                loss.to_string(),
                rel.map(|r| r.to_string()).unwrap_or_default(),
                lr.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn due(step: usize, every: usize, last: usize) -> bool {
    every > 0 && (step.is_multiple_of(every) || step == last)
}

/// Disjoint contiguous blocks of a seeded permutation, reshuffled on wrap.
struct BlockSampler {
    order: Vec<usize>,
    pos: usize,
    wrapped: bool,
}

impl BlockSampler {
    fn new(n: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        Self {
            order,
            pos: 0,
            wrapped: false,
        }
    }

    fn next(&mut self, b: usize, rng: &mut ChaCha8Rng) -> &[usize] {
        if self.pos + b > self.order.len() {
            self.order.shuffle(rng);
            self.pos = 0;
            self.wrapped = true;
        }
        let block = &self.order[self.pos..self.pos + b];
        self.pos += b;
        block
    }
}

fn check_pool(dataset: &Dataset, batch: usize) -> Result<()> {
    dataset.validate()?;
    if dataset.is_empty() || batch > dataset.len() {
        return Err(Error::Data(format!(
            "batch size {batch} exceeds the {} available samples",
            dataset.len()
        )));
    }
    Ok(())
}

fn band_of(len: usize) -> Result<EmbeddingConfig> {
    if len < 5 || !(len - 1).is_multiple_of(4) {
        return Err(Error::Shape(format!(
            "weight vector length {len} is not 4m + 1"
        )));
    }
    EmbeddingConfig::new((len - 1) / 4)
}

fn clean_truth(dataset: &Dataset) -> Option<&[f64]> {
    let t = dataset.y_clean.as_deref()?;
    t.iter().any(|v| *v != 0.0).then_some(t)
}

/// Relative L2 of `Σ_j c_j σ(w_j x_j)` over all rows.
fn rel_l2_diag(w: &[f64], c: &[f64], act: Activation, feats: &FeatureMatrix, truth: &[f64]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (i, t) in truth.iter().enumerate() {
        let p = forward_diag_slice(w, c, act, feats.row(i));
        num += (p - t) * (p - t);
        den += t * t;
    }
    (num / den).sqrt()
}

/// Training pool for the diagonal phases: embedded samples and labels.
struct Pool<'a> {
    feats: FeatureMatrix,
    y: &'a [f64],
    truth: Option<&'a [f64]>,
}

impl<'a> Pool<'a> {
    fn new(
        dataset: &'a Dataset,
        cfg: EmbeddingConfig,
        kind: EmbeddingKind,
        batch: usize,
    ) -> Result<Self> {
        check_pool(dataset, batch)?;
        Ok(Self {
            feats: FeatureMatrix::new(&dataset.theta, cfg, kind)?,
            y: &dataset.y,
            truth: clean_truth(dataset),
        })
    }
}

fn phase1_core(
    pool: &Pool,
    c0: &[f64],
    cfg: &Phase1Config,
    seed: u64,
) -> Result<(Vec<f64>, TrainingTrace)> {
    cfg.validate()?;
    let d = pool.feats.dim();
    if c0.len() != d {
        return Err(Error::shape(d, c0.len(), "output weights"));
    }
    let n = pool.y.len();
    let needed = cfg.t.saturating_mul(cfg.batch);
    let mut trace = TrainingTrace::new(seed);
    if needed > n {
        if cfg.strict_fresh {
            return Err(Error::Data(format!(
                "T·B = {needed} fresh samples requested but only {n} available"
            )));
        }
        trace.warnings.push(format!(
            "phase 1 needs T·B = {needed} samples but the pool holds {n}; batches wrap with reshuffling"
        ));
    }
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = cfg.w_init.draw(d, &mut rng);
    project_box_inplace(&mut w, cfg.q1);
    let mut sampler = BlockSampler::new(n, &mut rng);
    let act = cfg.activation;
    let truth = pool.truth.filter(|_| cfg.eval_every > 0);
    let mut g = vec![0.0; d];
    let inv_b = 1.0 / cfg.batch as f64;
    for step in 1..=cfg.t {
        g.iter_mut().for_each(|v| *v = 0.0);
        let mut loss = 0.0;
        for &i in sampler.next(cfg.batch, &mut rng) {
            let x = pool.feats.row(i);
            let r = forward_diag_slice(&w, c0, act, x) - pool.y[i];
            loss += 0.5 * r * r;
            for j in 0..d {
                g[j] += r * c0[j] * act.derivative(w[j] * x[j]) * x[j];
            }
        }
        let lr = cfg.rate(step - 1);
        for j in 0..d {
            w[j] -= lr * (g[j] * inv_b + cfg.lambda * w[j]);
        }
        project_box_inplace(&mut w, cfg.q1);
        let rel = match truth {
            Some(t) if due(step, cfg.eval_every, cfg.t) => {
                Some(rel_l2_diag(&w, c0, act, &pool.feats, t))
            }
            _ => None,
        };
        trace.push(loss * inv_b, lr, rel);
        if due(step, cfg.snapshot_every, cfg.t) {
            trace.snapshots.push(Snapshot {
                iteration: step,
                values: w.clone(),
            });
        }
    }
    trace.wall_time = start.elapsed().as_secs_f64();
    Ok((w, trace))
}

fn phase2_core(
    pool: &Pool,
    w_t: &[f64],
    c0: &[f64],
    activation: Activation,
    cfg: &Phase2Config,
    seed: u64,
) -> Result<(Vec<f64>, TrainingTrace)> {
    cfg.validate()?;
    let d = pool.feats.dim();
    if w_t.len() != d || c0.len() != d {
        return Err(Error::shape(d, w_t.len().min(c0.len()), "phase 2 weights"));
    }
    let n = pool.y.len();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sampler = BlockSampler::new(n, &mut rng);
    let mut c = project_box(c0, cfg.q2);
    // σ(w ⊙ x) for every sample; phase 2 is linear in these.
    let mut phi = vec![0.0; n * d];
    for (i, row) in phi.chunks_mut(d).enumerate() {
        for ((p, w), x) in row.iter_mut().zip(w_t).zip(pool.feats.row(i)) {
            *p = activation.apply(w * x);
        }
    }
    let truth = pool.truth.filter(|_| cfg.eval_every > 0);
    let mut trace = TrainingTrace::new(seed);
    let mut g = vec![0.0; d];
    let inv_b = 1.0 / cfg.batch as f64;
    for step in 1..=cfg.t_prime {
        g.iter_mut().for_each(|v| *v = 0.0);
        let mut loss = 0.0;
        for &i in sampler.next(cfg.batch, &mut rng) {
            let row = &phi[i * d..(i + 1) * d];
            let r = row.iter().zip(&c).map(|(p, c)| p * c).sum::<f64>() - pool.y[i];
            loss += 0.5 * r * r;
            for (gj, p) in g.iter_mut().zip(row) {
                *gj += r * p;
            }
        }
        let lr = cfg.rate(step - 1);
        for (cj, gj) in c.iter_mut().zip(&g) {
            *cj -= lr * gj * inv_b;
        }
        project_box_inplace(&mut c, cfg.q2);
        let rel = match truth {
            Some(t) if due(step, cfg.eval_every, cfg.t_prime) => {
                Some(rel_l2_diag(w_t, &c, activation, &pool.feats, t))
            }
            _ => None,
        };
        trace.push(loss * inv_b, lr, rel);
        if due(step, cfg.snapshot_every, cfg.t_prime) {
            trace.snapshots.push(Snapshot {
                iteration: step,
                values: c.clone(),
            });
        }
    }
    trace.wall_time = start.elapsed().as_secs_f64();
    Ok((c, trace))
}

/// Phase 1: `w ← P_{Q₁}(w − η(ĝ_w + λw))` with `c₀` frozen. Returns `w_T`.
///
/// Batches are disjoint contiguous blocks of a seeded permutation of the pool;
/// when `T·B` exceeds the pool the permutation is redrawn and a warning logged.
pub fn train_phase1(
    dataset: &Dataset,
    c0: &[f64],
    cfg: &Phase1Config,
    seed: u64,
) -> Result<(Vec<f64>, TrainingTrace)> {
    cfg.validate()?;
    let pool = Pool::new(
        dataset,
        band_of(c0.len())?,
        EmbeddingKind::Symmetrized,
        cfg.batch,
    )?;
    phase1_core(&pool, c0, cfg, seed)
}

/// Phase 2: projected SGD on `c` with `w_T` frozen, minibatches by shuffled
/// epochs over the same pool. Returns the last iterate.
pub fn train_phase2(
    dataset: &Dataset,
    w_t: &[f64],
    c0: &[f64],
    activation: Activation,
    cfg: &Phase2Config,
    seed: u64,
) -> Result<(Vec<f64>, TrainingTrace)> {
    cfg.validate()?;
    let pool = Pool::new(
        dataset,
        band_of(c0.len())?,
        EmbeddingKind::Symmetrized,
        cfg.batch,
    )?;
    phase2_core(&pool, w_t, c0, activation, cfg, seed)
}

/// Runs both phases of the layer-wise scheme and assembles the network.
pub fn train_layerwise(
    dataset: &Dataset,
    c0: &[f64],
    p1: &Phase1Config,
    p2: &Phase2Config,
    seed: u64,
) -> Result<(DiagNetParams, TrainingTrace)> {
    let band = band_of(c0.len())?;
    let pool = Pool::new(
        dataset,
        band,
        EmbeddingKind::Symmetrized,
        p1.batch.max(p2.batch),
    )?;
    let (w, mut trace) = phase1_core(&pool, c0, p1, seed)?;
    let (c, t2) = phase2_core(&pool, &w, c0, p1.activation, p2, seed.wrapping_add(1))?;
    trace.extend(t2);
    let params = DiagNetParams::new(band, w, c, p1.activation)?.with_boxes(p1.q1, p2.q2);
    Ok((params, trace))
}

/// Layer-wise training of `u^diag_0` on the doubled embedding: phase 1 on the
/// diagonal with a symmetric frozen output layer, then phase 2 on the output
/// weights. The output bias stays at zero; the embedding's `±1` entries carry
/// the constant mode.
pub fn train_layerwise_doubled(
    dataset: &Dataset,
    cfg: EmbeddingConfig,
    r_c: f64,
    p1: &Phase1Config,
    p2: &Phase2Config,
    seed: u64,
) -> Result<(DeepNetParams, TrainingTrace)> {
    let c0 = init_symmetric_c_doubled(cfg, r_c, seed)?;
    let pool = Pool::new(dataset, cfg, EmbeddingKind::Doubled, p1.batch.max(p2.batch))?;
    let (w, mut trace) = phase1_core(&pool, &c0, p1, seed.wrapping_add(1))?;
    let (c, t2) = phase2_core(&pool, &w, &c0, p1.activation, p2, seed.wrapping_add(2))?;
    trace.extend(t2);
    let d = c0.len();
    let layer = DenseLayer {
        weight: Array2::from_shape_vec((d, 1), c).expect("column shape"),
        bias: Array1::zeros(1),
    };
    let params = DeepNetParams::from_parts(
        cfg,
        EmbeddingKind::Doubled,
        Some(Array1::from(w)),
        vec![layer],
    )?;
    Ok((params, trace))
}

/// Network trained jointly by plain SGD.
#[derive(Debug, Clone, PartialEq)]
pub enum JointModel {
    Diag(DiagNetParams),
    Deep(DeepNetParams),
}

impl JointModel {
    /// Predictions on every sample location of `dataset`.
    pub fn predict(&self, theta: &[f64]) -> Result<Vec<f64>> {
        match self {
            JointModel::Diag(p) => {
                let f = FeatureMatrix::new(theta, p.cfg, EmbeddingKind::Symmetrized)?;
                Ok((0..f.rows())
                    .map(|i| forward_diag_slice(&p.w, &p.c, p.activation, f.row(i)))
                    .collect())
            }
            JointModel::Deep(p) => {
                let x = deep_inputs(p, theta)?;
                Ok(forward_batch(p, x.view())?.to_vec())
            }
        }
    }
}

fn deep_inputs(p: &DeepNetParams, theta: &[f64]) -> Result<Array2<f64>> {
    let f = FeatureMatrix::new(theta, p.cfg, p.embedding)?;
    Ok(
        Array2::from_shape_vec((f.rows(), f.dim()), f.as_slice().to_vec())
            .expect("feature matrix shape"),
    )
}

fn rel_l2(pred: &[f64], truth: &[f64]) -> f64 {
    let num: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    let den: f64 = truth.iter().map(|t| t * t).sum();
    (num / den).sqrt()
}

/// Joint SGD on all parameters with the inverse-decay rate, minibatches by
/// shuffled epochs. Aborts when the batch loss exceeds [`DIVERGENCE_LOSS`].
pub fn train_joint(
    model: &mut JointModel,
    dataset: &Dataset,
    cfg: &JointConfig,
    seed: u64,
) -> Result<TrainingTrace> {
    cfg.validate()?;
    check_pool(dataset, cfg.batch)?;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sampler = BlockSampler::new(dataset.len(), &mut rng);
    let truth = clean_truth(dataset).filter(|_| cfg.eval_every > 0);
    let mut trace = TrainingTrace::new(seed);
    match model {
        JointModel::Diag(p) => {
            let feats = FeatureMatrix::new(&dataset.theta, p.cfg, EmbeddingKind::Symmetrized)?;
            let d = p.w.len();
            let (mut gw, mut gc) = (vec![0.0; d], vec![0.0; d]);
            let act = p.activation;
            for step in 1..=cfg.iters {
                gw.iter_mut().chain(gc.iter_mut()).for_each(|v| *v = 0.0);
                let mut loss = 0.0;
                for &i in sampler.next(cfg.batch, &mut rng) {
                    let x = feats.row(i);
                    let r = forward_diag_slice(&p.w, &p.c, act, x) - dataset.y[i];
                    loss += 0.5 * r * r;
                    for j in 0..d {
                        let z = p.w[j] * x[j];
                        gw[j] += r * p.c[j] * act.derivative(z) * x[j];
                        gc[j] += r * act.apply(z);
                    }
                }
                let inv_b = 1.0 / cfg.batch as f64;
                loss *= inv_b;
                guard(step, loss)?;
                let lr = cfg.schedule.rate(step - 1);
                for j in 0..d {
                    p.w[j] -= lr * gw[j] * inv_b;
                    p.c[j] -= lr * gc[j] * inv_b;
                }
                let rel = match truth {
                    Some(t) if due(step, cfg.eval_every, cfg.iters) => {
                        Some(rel_l2_diag(&p.w, &p.c, act, &feats, t))
                    }
                    _ => None,
                };
                trace.push(loss, lr, rel);
                if due(step, cfg.snapshot_every, cfg.iters) {
                    trace.snapshots.push(Snapshot {
                        iteration: step,
                        values: p.w.clone(),
                    });
                }
            }
        }
        JointModel::Deep(p) => {
            let x = deep_inputs(p, &dataset.theta)?;
            let y = Array1::from(dataset.y.clone());
            for step in 1..=cfg.iters {
                let idx = sampler.next(cfg.batch, &mut rng).to_vec();
                let xb = x.select(Axis(0), &idx);
                let yb = y.select(Axis(0), &idx);
                let grad = grad_batch(p, xb.view(), yb.view())?;
                guard(step, grad.loss)?;
                let lr = cfg.schedule.rate(step - 1);
                p.apply_step(&grad, lr);
                let rel = match truth {
                    Some(t) if due(step, cfg.eval_every, cfg.iters) => Some(rel_l2(
                        forward_batch(p, x.view())?.as_slice().expect("contiguous"),
                        t,
                    )),
                    _ => None,
                };
                trace.push(grad.loss, lr, rel);
                if due(step, cfg.snapshot_every, cfg.iters) {
                    let values = match &p.diagonal {
                        Some(d) => d.to_vec(),
                        None => p.layers[0].weight.iter().copied().collect(),
                    };
                    trace.snapshots.push(Snapshot {
                        iteration: step,
                        values,
                    });
                }
            }
        }
    }
    trace.wall_time = start.elapsed().as_secs_f64();
    Ok(trace)
}

fn guard(step: usize, loss: f64) -> Result<()> {
    if !loss.is_finite() || loss > DIVERGENCE_LOSS {
        return Err(Error::Divergence { step, loss });
    }
    Ok(())
}
