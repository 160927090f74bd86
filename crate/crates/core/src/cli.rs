//! Command-line front end: argument and config-file resolution, the seven
//! modes, and run manifests.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use crate::analysis::{empirical_risk, relative_l2};
use crate::datagen::{gen_grid, load_series_csv, make_dataset, Dataset};
use crate::error::{Error, Result};
use crate::experiment::{
    build_dataset, clean_alpha_max, run_model, ModelKind, ModelRun, Preset, Settings,
};
use crate::model::{init_symmetric_c, read_checkpoint, write_checkpoint, Checkpoint};
use crate::spectral::fourier_coeffs;
use crate::train::{train_layerwise, JointModel, TrainingTrace};
use crate::verify::{self, Suite};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Generate,
    TrainLayerwise,
    TrainJoint,
    Evaluate,
    Spectrum,
    Verify,
    Reproduce,
}

impl Mode {
    fn name(self) -> String {
        self.to_possible_value()
            .expect("no skipped variants")
            .get_name()
            .to_string()
    }
}

/// Fourier-embedded diagonal networks: data, training, verification and
/// preset reproduction.
#[derive(Debug, Parser)]
#[command(name = "fourier-diag", version)]
pub struct Args {
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    /// ex1, ex2, ex3 or ex4; reproduce runs all four when omitted.
    #[arg(long)]
    pub preset: Option<String>,
    /// Embedding band.
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Flat `key=value` file; command-line flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Desk-scale factor: iterations are divided by it.
    #[arg(long)]
    pub scale: Option<f64>,
    /// Dataset CSV (`theta,y[,y_clean]`), or a `t,y` series with `--series-input`.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Treat `--input` as a raw `t,y` series to rescale onto `[-1, 1]`.
    #[arg(long)]
    pub series_input: bool,
    /// Checkpoint to score in evaluate mode.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// lwdiag0, diag<n> or standard<n>.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub suite: Option<String>,
    /// Parallel runs in reproduce mode.
    #[arg(long)]
    pub workers: Option<usize>,
}

/// Fully resolved run configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub mode: Mode,
    pub preset: Option<Preset>,
    pub seed: u64,
    pub out: PathBuf,
    pub input: Option<PathBuf>,
    pub series_input: bool,
    pub checkpoint: Option<PathBuf>,
    pub model: ModelKind,
    pub suite: Suite,
    pub workers: usize,
    pub settings: Settings,
}

const KEYS: &[&str] = &[
    "mode",
    "preset",
    "seed",
    "out",
    "input",
    "series_input",
    "checkpoint",
    "model",
    "suite",
    "workers",
    "m",
    "delta",
    "sigma",
    "width",
    "scale",
    "full_iters",
    "alpha0",
    "gamma",
    "m0",
    "batch",
    "r_c",
    "lambda",
    "eta",
    "eta_prime",
    "eval_every",
    "snapshot_every",
    "series",
];

/// Parses flat `key=value` text; `#` starts a comment.
pub fn parse_config_text(text: &str, path: &Path) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let perr = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i as u64 + 1,
            message,
        };
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| perr("expected key=value".into()))?;
        let k = k.trim();
        if !KEYS.contains(&k) {
            return Err(perr(format!("unknown key `{k}`")));
        }
        map.insert(k.to_string(), v.trim().to_string());
    }
    Ok(map)
}

fn parse_val<T: std::str::FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>()
        .map_err(|e| Error::Config(format!("`{key}`: {e}")))
}

impl RunConfig {
    /// Defaults, overridden by the config file, overridden by flags.
    pub fn resolve(args: &Args) -> Result<Self> {
        let mut kv = match &args.config {
            Some(p) => parse_config_text(&fs::read_to_string(p)?, p)?,
            None => BTreeMap::new(),
        };
        let mut set = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                kv.insert(k.to_string(), v);
            }
        };
        set("mode", args.mode.map(Mode::name));
        set("preset", args.preset.clone());
        set("m", args.m.map(|v| v.to_string()));
        set("seed", args.seed.map(|v| v.to_string()));
        set("out", args.out.as_ref().map(|p| p.display().to_string()));
        set("scale", args.scale.map(|v| v.to_string()));
        set(
            "input",
            args.input.as_ref().map(|p| p.display().to_string()),
        );
        set(
            "series_input",
            args.series_input.then(|| "true".to_string()),
        );
        set(
            "checkpoint",
            args.checkpoint.as_ref().map(|p| p.display().to_string()),
        );
        set("model", args.model.clone());
        set("suite", args.suite.clone());
        set("workers", args.workers.map(|v| v.to_string()));

        let mode = match kv.get("mode") {
            Some(v) => {
                Mode::from_str(v, false).map_err(|e| Error::Config(format!("`mode`: {e}")))?
            }
            None => {
                return Err(Error::Config(
                    "no mode given (use --mode or a `mode=` line)".into(),
                ))
            }
        };
        let mut s = Settings::default();
        let mut schedule = s.schedule;
        let mut cfg = RunConfig {
            mode,
            preset: None,
            seed: 0,
            out: PathBuf::from("out"),
            input: None,
            series_input: false,
            checkpoint: None,
            model: ModelKind::Diag(1),
            suite: Suite::All,
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
            settings: Settings::default(),
        };
        for (k, v) in &kv {
            match k.as_str() {
                "mode" => {}
                "preset" => cfg.preset = Some(v.parse()?),
                "seed" => cfg.seed = parse_val(k, v)?,
                "out" => cfg.out = PathBuf::from(v),
                "input" => cfg.input = Some(PathBuf::from(v)),
                "series_input" => cfg.series_input = parse_val(k, v)?,
                "checkpoint" => cfg.checkpoint = Some(PathBuf::from(v)),
                "model" => cfg.model = v.parse()?,
                "suite" => cfg.suite = v.parse()?,
                "workers" => cfg.workers = parse_val::<usize>(k, v)?.max(1),
                "m" => s.m = parse_val(k, v)?,
                "delta" => s.delta = parse_val(k, v)?,
                "sigma" => s.sigma = parse_val(k, v)?,
                "width" => s.width = parse_val(k, v)?,
                "scale" => s.scale = parse_val(k, v)?,
                "full_iters" => s.full_iters = parse_val(k, v)?,
                "alpha0" => schedule.alpha0 = parse_val(k, v)?,
                "gamma" => schedule.gamma = parse_val(k, v)?,
                "m0" => schedule.m0 = parse_val(k, v)?,
                "batch" => s.batch = parse_val(k, v)?,
                "r_c" => s.r_c = parse_val(k, v)?,
                "lambda" => s.lambda = parse_val(k, v)?,
                "eta" => s.eta = parse_val(k, v)?,
                "eta_prime" => s.eta_prime = parse_val(k, v)?,
                "eval_every" => s.eval_every = parse_val(k, v)?,
                "snapshot_every" => s.snapshot_every = parse_val(k, v)?,
                "series" => s.series = PathBuf::from(v),
                other => return Err(Error::Config(format!("unknown key `{other}`"))),
            }
        }
        s.schedule = schedule;
        if !(s.scale > 0.0) {
            return Err(Error::Config(format!(
                "scale must be positive, got {}",
                s.scale
            )));
        }
        cfg.settings = s;
        cfg.check_paths()?;
        Ok(cfg)
    }

    fn check_paths(&self) -> Result<()> {
        for p in [&self.input, &self.checkpoint].into_iter().flatten() {
            if !p.exists() {
                return Err(Error::Data(format!("{} does not exist", p.display())));
            }
        }
        if self.mode == Mode::Evaluate && self.checkpoint.is_none() {
            return Err(Error::Config("evaluate needs --checkpoint".into()));
        }
        Ok(())
    }

    /// Flat `key=value` echo; feeding it back through `--config` reruns the same job.
    pub fn to_config_text(&self) -> String {
        let s = &self.settings;
        let mut lines = vec![
            format!("mode={}", self.mode.name()),
            format!("seed={}", self.seed),
            format!("out={}", self.out.display()),
            format!("model={}", self.model),
            format!("suite={}", self.suite),
            format!("workers={}", self.workers),
            format!("m={}", s.m),
            format!("delta={}", s.delta),
            format!("sigma={}", s.sigma),
            format!("width={}", s.width),
            format!("scale={}", s.scale),
            format!("full_iters={}", s.full_iters),
            format!("alpha0={}", s.schedule.alpha0),
            format!("gamma={}", s.schedule.gamma),
            format!("m0={}", s.schedule.m0),
            format!("batch={}", s.batch),
            format!("r_c={}", s.r_c),
            format!("lambda={}", s.lambda),
            format!("eta={}", s.eta),
            format!("eta_prime={}", s.eta_prime),
            format!("eval_every={}", s.eval_every),
            format!("snapshot_every={}", s.snapshot_every),
            format!("series={}", s.series.display()),
            format!("series_input={}", self.series_input),
        ];
        if let Some(p) = self.preset {
            lines.push(format!("preset={}", p.name()));
        }
        if let Some(p) = &self.input {
            lines.push(format!("input={}", p.display()));
        }
        if let Some(p) = &self.checkpoint {
            lines.push(format!("checkpoint={}", p.display()));
        }
        lines.join("\n") + "\n"
    }
}

/// Record of one command invocation.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub mode: Mode,
    pub version: String,
    pub config: RunConfig,
    /// Training iterations per phase at the resolved scale.
    pub iterations: usize,
    pub seeds: BTreeMap<String, u64>,
    pub files: Vec<String>,
    pub metrics: BTreeMap<String, f64>,
    pub warnings: Vec<String>,
    pub wall_time: f64,
}

impl RunManifest {
    fn new(cfg: &RunConfig) -> Self {
        Self {
            mode: cfg.mode,
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: cfg.clone(),
            iterations: cfg.settings.iters(),
            seeds: BTreeMap::from([("base".to_string(), cfg.seed)]),
            files: Vec::new(),
            metrics: BTreeMap::new(),
            warnings: Vec::new(),
            wall_time: 0.0,
        }
    }
}

/// Writes through a temporary sibling and renames into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn write(
        &mut self,
        name: &str,
        f: impl FnOnce(&mut BufWriter<fs::File>) -> Result<()>,
    ) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(self.dir.join(name))?);
        f(&mut w)?;
        w.flush()?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn finish(
        mut self,
        mut manifest: RunManifest,
        cfg: &RunConfig,
        start: Instant,
    ) -> Result<RunManifest> {
        fs::write(self.dir.join("config.txt"), cfg.to_config_text())?;
        self.files.push("config.txt".into());
        self.files.push("manifest.json".into());
        manifest.files = self.files;
        manifest.wall_time = start.elapsed().as_secs_f64();
        write_atomic(
            &self.dir.join("manifest.json"),
            &serde_json::to_vec_pretty(&manifest)?,
        )?;
        Ok(manifest)
    }
}

fn write_predictions<W: Write>(out: W, ds: &Dataset, pred: &[f64]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["theta", "y", "truth", "pred"])?;
    let truth = ds.truth();
    for (((t, y), f), p) in ds.theta.iter().zip(&ds.y).zip(truth.iter()).zip(pred) {
        wtr.write_record([t.to_string(), y.to_string(), f.to_string(), p.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

fn write_snapshots<W: Write>(out: W, trace: &TrainingTrace) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["iteration", "slot", "value"])?;
    for s in &trace.snapshots {
        for (slot, v) in s.values.iter().enumerate() {
            wtr.write_record([s.iteration.to_string(), slot.to_string(), v.to_string()])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

fn write_weights<W: Write>(out: W, run: &ModelRun) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["slot", "frequency", "kind", "sign", "magnitude"])?;
    for e in &run.weights {
        wtr.write_record([
            e.slot.to_string(),
            e.frequency.to_string(),
            e.kind.clone(),
            e.sign.to_string(),
            e.magnitude.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Training data from `--input` or from the preset (ex1 when neither is given).
fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let s = &cfg.settings;
    match &cfg.input {
        Some(p) if cfg.series_input => {
            let series = load_series_csv(p, true)?;
            let dense = crate::datagen::resample_linear(&series, &gen_grid(s.delta)?)?;
            crate::datagen::add_noise(&dense, s.sigma, cfg.seed)
        }
        Some(p) => Dataset::read_csv(p),
        None => {
            let preset = cfg.preset.unwrap_or(Preset::Ex1);
            build_dataset(preset, s, cfg.seed)
        }
    }
}

pub fn cmd_generate(cfg: &RunConfig) -> Result<RunManifest> {
    let start = Instant::now();
    let ds = load_dataset(cfg)?;
    let mut out = Outputs::new(&cfg.out)?;
    out.write("dataset.csv", |w| ds.write_csv(w))?;
    let mut manifest = RunManifest::new(cfg);
    manifest.metrics.insert("samples".into(), ds.len() as f64);
    if let Some(snr) = ds.snr() {
        manifest.metrics.insert("snr".into(), snr);
    }
    out.finish(manifest, cfg, start)
}

pub fn cmd_train_layerwise(cfg: &RunConfig) -> Result<RunManifest> {
    let start = Instant::now();
    let s = &cfg.settings;
    let ds = load_dataset(cfg)?;
    let band = s.embedding()?;
    let alpha_max = match &ds.y_clean {
        Some(clean) => {
            let r = fourier_coeffs(clean, &ds.theta, s.m)?;
            Some(r.alpha_tilde.iter().fold(0.0_f64, |a, v| a.max(v.abs())))
        }
        None => None,
    };
    let (p1, p2) = s.layerwise(alpha_max);
    let c0 = init_symmetric_c(band, s.r_c, cfg.seed)?;
    let (params, trace) = train_layerwise(&ds, &c0, &p1, &p2, cfg.seed.wrapping_add(1))?;
    let pred = JointModel::Diag(params.clone()).predict(&ds.theta)?;

    let mut out = Outputs::new(&cfg.out)?;
    out.write("trace.csv", |w| trace.write_csv(w))?;
    out.write("snapshots.csv", |w| write_snapshots(w, &trace))?;
    out.write("pred.csv", |w| write_predictions(w, &ds, &pred))?;
    out.write("checkpoint.csv", |w| {
        write_checkpoint(&Checkpoint::Diag(params.clone()), w)
    })?;
    let mut manifest = RunManifest::new(cfg);
    manifest.seeds.insert("c0".into(), cfg.seed);
    manifest
        .seeds
        .insert("sgd".into(), cfg.seed.wrapping_add(1));
    manifest
        .metrics
        .insert("rel_l2".into(), relative_l2(&pred, ds.truth())?);
    manifest
        .metrics
        .insert("empirical_risk".into(), empirical_risk(&params, &ds)?);
    manifest.metrics.insert("q1".into(), p1.q1);
    manifest.metrics.insert("q2".into(), p2.q2);
    manifest.warnings = trace.warnings.clone();
    out.finish(manifest, cfg, start)
}

fn write_model_run(out: &mut Outputs, ds: &Dataset, run: &ModelRun, suffix: &str) -> Result<()> {
    out.write(&format!("trace_{suffix}.csv"), |w| run.trace.write_csv(w))?;
    out.write(&format!("pred_{suffix}.csv"), |w| {
        write_predictions(w, ds, &run.pred)
    })?;
    out.write(&format!("weights_{suffix}.csv"), |w| write_weights(w, run))?;
    out.write(&format!("snapshots_{suffix}.csv"), |w| {
        write_snapshots(w, &run.trace)
    })?;
    out.write(&format!("checkpoint_{suffix}.csv"), |w| {
        write_checkpoint(&run.checkpoint, w)
    })
}

pub fn cmd_train_joint(cfg: &RunConfig) -> Result<RunManifest> {
    let start = Instant::now();
    let ds = load_dataset(cfg)?;
    let alpha_max = match cfg.preset {
        Some(p) if cfg.input.is_none() => clean_alpha_max(p, &ds, cfg.settings.m)?,
        _ => None,
    };
    let run = run_model(cfg.model, &ds, &cfg.settings, alpha_max, cfg.seed)?;
    let mut out = Outputs::new(&cfg.out)?;
    let name = cfg.model.name();
    write_model_run(&mut out, &ds, &run, &name)?;
    let mut manifest = RunManifest::new(cfg);
    manifest
        .metrics
        .insert(format!("rel_l2_{name}"), run.rel_l2);
    manifest.warnings = run.trace.warnings.clone();
    out.finish(manifest, cfg, start)
}

pub fn cmd_evaluate(cfg: &RunConfig) -> Result<RunManifest> {
    let start = Instant::now();
    let path = cfg.checkpoint.as_ref().expect("checked at resolution");
    let ckpt = read_checkpoint(path)?;
    let ds = load_dataset(cfg)?;
    let model = match ckpt {
        Checkpoint::Diag(p) => JointModel::Diag(p),
        Checkpoint::Deep(p) => JointModel::Deep(p),
    };
    let pred = model.predict(&ds.theta)?;
    let mut out = Outputs::new(&cfg.out)?;
    out.write("pred.csv", |w| write_predictions(w, &ds, &pred))?;
    let mut manifest = RunManifest::new(cfg);
    let mse = pred
        .iter()
        .zip(&ds.y)
        .map(|(p, y)| 0.5 * (p - y) * (p - y))
        .sum::<f64>()
        / ds.len() as f64;
    manifest
        .metrics
        .insert("rel_l2".into(), relative_l2(&pred, ds.truth())?);
    manifest.metrics.insert("empirical_risk".into(), mse);
    out.finish(manifest, cfg, start)
}

pub fn cmd_spectrum(cfg: &RunConfig) -> Result<RunManifest> {
    let start = Instant::now();
    let s = &cfg.settings;
    let (theta, values) = match (&cfg.input, cfg.preset) {
        (None, Some(p)) if p != Preset::Ex4 => {
            let grid = gen_grid(s.delta)?;
            let spec = p.target(0.0).expect("synthetic preset");
            let ds = make_dataset(&spec, &grid, cfg.seed)?;
            (ds.theta, ds.y)
        }
        _ => {
            let ds = load_dataset(cfg)?;
            let values = ds.y_clean.clone().unwrap_or_else(|| ds.y.clone());
            (ds.theta, values)
        }
    };
    let report = fourier_coeffs(&values, &theta, s.m)?;
    let mut out = Outputs::new(&cfg.out)?;
    out.write("spectrum.csv", |w| report.write_csv(w))?;
    out.write("support.csv", |w| {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["index", "frequency", "kind", "coefficient"])?;
        for (&l, (freq, kind)) in report.support.iter().zip(report.support_modes()) {
            wtr.write_record([
                l.to_string(),
                freq.to_string(),
                kind.as_str().to_string(),
                report.alpha_tilde[l].to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    })?;
    let mut manifest = RunManifest::new(cfg);
    manifest
        .metrics
        .insert("support_size".into(), report.support.len() as f64);
    manifest
        .metrics
        .insert("residual_l2".into(), report.residual_l2);
    manifest
        .metrics
        .insert("threshold".into(), report.threshold);
    out.finish(manifest, cfg, start)
}

/// Runs the suite, writes `verify.json`, and reports whether everything passed.
pub fn cmd_verify(cfg: &RunConfig) -> Result<(RunManifest, bool)> {
    let start = Instant::now();
    let report = verify::run(cfg.suite, cfg.seed)?;
    let mut out = Outputs::new(&cfg.out)?;
    out.write("verify.json", |w| {
        Ok(serde_json::to_writer_pretty(w, &report)?)
    })?;
    let mut manifest = RunManifest::new(cfg);
    for s in &report.suites {
        for c in &s.checks {
            manifest
                .metrics
                .insert(format!("{}.{}", s.suite, c.name), c.value);
        }
    }
    Ok((out.finish(manifest, cfg, start)?, report.passed))
}

pub fn cmd_reproduce(cfg: &RunConfig) -> Result<RunManifest> {
    let start = Instant::now();
    let presets: Vec<Preset> = match cfg.preset {
        Some(p) => vec![p],
        None => Preset::ALL.to_vec(),
    };
    let s = &cfg.settings;
    let data: Vec<(Preset, Dataset, Option<f64>)> = presets
        .iter()
        .map(|&p| {
            let ds = build_dataset(p, s, cfg.seed)?;
            let am = clean_alpha_max(p, &ds, s.m)?;
            Ok((p, ds, am))
        })
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, ModelKind)> = data
        .iter()
        .enumerate()
        .flat_map(|(i, (p, _, _))| p.models().into_iter().map(move |k| (i, k)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let runs: Vec<ModelRun> = pool.install(|| {
        jobs.par_iter()
            .map(|&(i, k)| run_model(k, &data[i].1, s, data[i].2, cfg.seed))
            .collect::<Result<_>>()
    })?;

    let mut out = Outputs::new(&cfg.out)?;
    let mut manifest = RunManifest::new(cfg);
    for (i, (p, ds, _)) in data.iter().enumerate() {
        let prefix = if presets.len() > 1 {
            format!("{}/", p.name())
        } else {
            String::new()
        };
        if !prefix.is_empty() {
            fs::create_dir_all(cfg.out.join(p.name()))?;
        }
        out.write(&format!("{prefix}dataset.csv"), |w| ds.write_csv(w))?;
        if let Some(snr) = ds.snr() {
            manifest.metrics.insert(format!("{}.snr", p.name()), snr);
        }
        for ((_, k), run) in jobs.iter().zip(&runs).filter(|((j, _), _)| *j == i) {
            write_model_run(&mut out, ds, run, &format!("{prefix}{k}"))?;
            manifest
                .metrics
                .insert(format!("{}.rel_l2.{k}", p.name()), run.rel_l2);
            manifest.warnings.extend(
                run.trace
                    .warnings
                    .iter()
                    .map(|w| format!("{} {k}: {w}", p.name())),
            );
        }
    }
    manifest.seeds.insert("data".into(), cfg.seed);
    manifest.seeds.insert("init".into(), cfg.seed);
    manifest
        .seeds
        .insert("sgd".into(), cfg.seed.wrapping_add(1));
    out.finish(manifest, cfg, start)
}

/// Runs the resolved command and maps the outcome to an exit code.
pub fn execute(cfg: &RunConfig) -> Result<i32> {
    let summary = |m: &RunManifest| {
        for (k, v) in &m.metrics {
            println!("{k} = {v}");
        }
        println!("wrote {} files to {}", m.files.len(), cfg.out.display());
    };
    let manifest = match cfg.mode {
        Mode::Generate => cmd_generate(cfg)?,
        Mode::TrainLayerwise => cmd_train_layerwise(cfg)?,
        Mode::TrainJoint => cmd_train_joint(cfg)?,
        Mode::Evaluate => cmd_evaluate(cfg)?,
        Mode::Spectrum => cmd_spectrum(cfg)?,
        Mode::Reproduce => cmd_reproduce(cfg)?,
        Mode::Verify => {
            let (m, passed) = cmd_verify(cfg)?;
            summary(&m);
            println!(
                "verify {}: {}",
                cfg.suite,
                if passed { "PASS" } else { "FAIL" }
            );
            return Ok(if passed { EXIT_OK } else { EXIT_VERIFY_FAILED });
        }
    };
    summary(&manifest);
    Ok(EXIT_OK)
}

pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Index { .. } | Error::InvalidMode(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

/// Entry point for the binary.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args = match Args::try_parse_from(args) {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match RunConfig::resolve(&args).and_then(|cfg| execute(&cfg)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_text_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        fs::write(
            &path,
            "mode=generate\npreset=ex2 # comment\nscale=20\nalpha0=0.001\n",
        )
        .unwrap();
        let args = Args::parse_from([
            "fourier-diag",
            "--config",
            path.to_str().unwrap(),
            "--seed",
            "4",
        ]);
        let cfg = RunConfig::resolve(&args).unwrap();
        assert_eq!(cfg.mode, Mode::Generate);
        assert_eq!(cfg.preset, Some(Preset::Ex2));
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.settings.scale, 20.0);
        assert_eq!(cfg.settings.schedule.alpha0, 0.001);

        let echo = dir.path().join("echo.cfg");
        fs::write(&echo, cfg.to_config_text()).unwrap();
        let again = RunConfig::resolve(&Args::parse_from([
            "fourier-diag",
            "--config",
            echo.to_str().unwrap(),
        ]))
        .unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn unknown_key_reports_line() {
        let err = parse_config_text("mode=verify\n\nfoo=1\n", Path::new("x.cfg")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }));
    }

    #[test]
    fn exit_codes() {
        assert_eq!(
            main_with_args(["fourier-diag", "--mode", "bogus"]),
            EXIT_USAGE
        );
        assert_eq!(main_with_args(["fourier-diag"]), EXIT_USAGE);
        assert_eq!(
            main_with_args([
                "fourier-diag",
                "--mode",
                "generate",
                "--input",
                "/no/such/file.csv"
            ]),
            EXIT_DATA
        );
    }
}
