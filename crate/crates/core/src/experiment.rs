//! Paired walk-forward experiments: for each architecture, arm and session a
//! fresh model is trained on the session's windows and scored on the next
//! session.
//!
//! Output directory layout:
//!
//! ```text
//! sessions.csv                     model,arm,session,mape,rmse,flags
//! summary.csv                      model,mean_ann,std_ann,mean_kinn,std_kinn,wilcoxon_p,flags
//! traces/<model>_<arm>_s<NN>.csv   day,actual,predicted (window-major, horizon-minor)
//! run_metadata.json                hyperparameters, seeds, version, timestamp
//! windows.jsonl                    assembled windows (when dump_windows is set)
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::autodiff::AdamConfig;
use crate::dataset::{
    assemble_vectors, denormalize_forecast, load_series, load_series_for_sessions, make_window, plan_sessions,
    write_window_dump, DatasetError, SeriesFrame, SessionPlan, WindowSpec,
};
use crate::evaluation::{aggregate, session_metrics, write_sessions_csv, write_summary_csv, Arm, EvalError, MetricsTable, SessionResult};
use crate::kinloss::LossSpec;
use crate::models::{fit_model, Arch, ArchParams, ModelConfig, ModelError, TrainConfig};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DatasetError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("missing run artifact: {0}")]
    MissingArtifact(PathBuf),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io { path: path.to_path_buf(), source }
}

/// Which arms to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArmSelection {
    Baseline,
    Kinn,
    Both,
}

impl ArmSelection {
    pub fn arms(self) -> Vec<Arm> {
        match self {
            ArmSelection::Baseline => vec![Arm::Ann],
            ArmSelection::Kinn => vec![Arm::Kinn],
            ArmSelection::Both => vec![Arm::Ann, Arm::Kinn],
        }
    }
}

impl FromStr for ArmSelection {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "baseline" | "ann" => Ok(ArmSelection::Baseline),
            "kinn" => Ok(ArmSelection::Kinn),
            "both" => Ok(ArmSelection::Both),
            other => Err(ExperimentError::Config(format!("unknown arms `{other}` (baseline, kinn, both)"))),
        }
    }
}

/// Whether an architecture runs on min-max normalized windows unless told
/// otherwise.
pub fn default_normalize(arch: Arch) -> bool {
    matches!(arch, Arch::MlpSigmoid | Arch::MlpTanh | Arch::Rbf | Arch::Gmdh | Arch::Attention)
}

/// An architecture together with its normalization setting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub arch: Arch,
    pub normalize: bool,
}

impl ArchSpec {
    /// Name used in result tables, e.g. `kgate_norm`.
    pub fn label(&self) -> String {
        format!("{}_{}", self.arch, if self.normalize { "norm" } else { "raw" })
    }
}

impl FromStr for ArchSpec {
    type Err = ExperimentError;

    /// `kgate`, `kgate:norm` or `kgate:raw`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (name, mode) = match s.split_once(':') {
            Some((n, m)) => (n, Some(m.trim())),
            None => (s, None),
        };
        let arch: Arch = name.parse().map_err(|e: ModelError| ExperimentError::Config(e.to_string()))?;
        let normalize = match mode {
            None => default_normalize(arch),
            Some("norm") => true,
            Some("raw") => false,
            Some(other) => return Err(ExperimentError::Config(format!("unknown normalization `{other}` (norm, raw)"))),
        };
        Ok(ArchSpec { arch, normalize })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub data: PathBuf,
    pub architectures: Vec<ArchSpec>,
    pub arms: ArmSelection,
    pub session_len: usize,
    pub t_past: usize,
    pub t_future: usize,
    pub train_obs: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Worker threads; 0 uses all cores.
    pub threads: usize,
    pub velocity_supervision: bool,
    pub consistency_weight: f64,
    /// Run only the first N session pairs.
    pub max_sessions: Option<usize>,
    pub dump_windows: bool,
    pub arch_params: ArchParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: PathBuf::from("data/djia_2005_2022.csv"),
            architectures: vec![ArchSpec { arch: Arch::Kgate, normalize: true }],
            arms: ArmSelection::Both,
            session_len: 120,
            t_past: 30,
            t_future: 30,
            train_obs: 30,
            epochs: 1000,
            batch_size: 32,
            lr: 0.01,
            seed: 0,
            output_dir: PathBuf::from("kinn-output"),
            threads: 0,
            velocity_supervision: false,
            consistency_weight: 1.0,
            max_sessions: None,
            dump_windows: false,
            arch_params: ArchParams::default(),
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T, ExperimentError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| ExperimentError::Config(format!("{key} = `{value}`: {e}")))
}

impl RunConfig {
    pub fn window_spec(&self) -> WindowSpec {
        WindowSpec { session_len: self.session_len, t_past: self.t_past, t_future: self.t_future, train_obs: self.train_obs }
    }

    /// Apply one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ExperimentError> {
        let value = value.trim();
        match key.trim() {
            "data" => self.data = PathBuf::from(value),
            "architectures" => {
                self.architectures =
                    value.split(',').filter(|s| !s.trim().is_empty()).map(|s| s.trim().parse()).collect::<Result<_, _>>()?
            }
            "normalize" => {
                for item in value.split(',').filter(|s| !s.trim().is_empty()) {
                    let (name, flag) = item
                        .split_once('=')
                        .ok_or_else(|| ExperimentError::Config(format!("normalize entry `{item}` is not arch=bool")))?;
                    let arch: Arch = name.parse().map_err(|e: ModelError| ExperimentError::Config(e.to_string()))?;
                    let flag: bool = parse_value("normalize", flag.trim())?;
                    for spec in self.architectures.iter_mut().filter(|s| s.arch == arch) {
                        spec.normalize = flag;
                    }
                }
            }
            "arms" => self.arms = value.parse()?,
            "session_len" => self.session_len = parse_value(key, value)?,
            "t_past" => self.t_past = parse_value(key, value)?,
            "t_future" => self.t_future = parse_value(key, value)?,
            "train_obs" => self.train_obs = parse_value(key, value)?,
            "epochs" => self.epochs = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "lr" => self.lr = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "output_dir" => self.output_dir = PathBuf::from(value),
            "threads" => self.threads = parse_value(key, value)?,
            "velocity_supervision" => self.velocity_supervision = parse_value(key, value)?,
            "consistency_weight" => self.consistency_weight = parse_value(key, value)?,
            "max_sessions" => self.max_sessions = Some(parse_value(key, value)?),
            "dump_windows" => self.dump_windows = parse_value(key, value)?,
            "rbf_centers" => self.arch_params.rbf_centers = Some(parse_value(key, value)?),
            "gmdh_select_k" => self.arch_params.gmdh_select_k = Some(parse_value(key, value)?),
            "gmdh_max_layers" => self.arch_params.gmdh_max_layers = parse_value(key, value)?,
            "gmdh_candidate_cap" => self.arch_params.gmdh_candidate_cap = parse_value(key, value)?,
            "gmdh_candidate_epochs" => self.arch_params.gmdh_candidate_epochs = parse_value(key, value)?,
            "attention_width" => self.arch_params.attention_width = parse_value(key, value)?,
            other => return Err(ExperimentError::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Parse a flat `key = value` file; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, ExperimentError> {
        let mut cfg = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ExperimentError::Config(format!("line {}: expected key = value", i + 1)))?;
            cfg.set(k, v).map_err(|e| match e {
                ExperimentError::Config(m) => ExperimentError::Config(format!("line {}: {m}", i + 1)),
                e => e,
            })?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.architectures.is_empty() {
            return Err(ExperimentError::Config("no architectures selected".into()));
        }
        if self.batch_size == 0 {
            return Err(ExperimentError::Config("batch_size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(ExperimentError::Config("lr must be positive".into()));
        }
        if !(self.consistency_weight >= 0.0 && self.consistency_weight.is_finite()) {
            return Err(ExperimentError::Config("consistency_weight must be non-negative".into()));
        }
        if self.max_sessions == Some(0) {
            return Err(ExperimentError::Config("max_sessions must be positive".into()));
        }
        self.window_spec().validate()?;
        Ok(())
    }
}

/// Seed for one work item: the leading 8 bytes of
/// `sha256(master seed ‖ model label ‖ arm ‖ training-session start date)`.
pub fn derive_seed(master: u64, label: &str, arm: Arm, session_start: NaiveDate) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(label.as_bytes());
    h.update([0u8]);
    h.update(arm.name().as_bytes());
    h.update([0u8]);
    h.update(session_start.to_string().as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// One predicted day of a test window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub day: usize,
    pub actual: f64,
    pub predicted: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ItemResult {
    pub spec: ArchSpec,
    pub arm: Arm,
    pub session_index: usize,
    pub seed: u64,
    pub result: SessionResult,
    pub trace: Vec<TracePoint>,
    pub final_train_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub tables: Vec<MetricsTable>,
    pub items: Vec<ItemResult>,
    pub sessions: Vec<SessionPlan>,
    pub output_dir: PathBuf,
}

/// Train on one session and score the following one.
pub fn run_item(
    frame: &SeriesFrame,
    plan: &SessionPlan,
    spec: ArchSpec,
    arm: Arm,
    cfg: &RunConfig,
) -> Result<ItemResult, ExperimentError> {
    let label = spec.label();
    let seed = derive_seed(cfg.seed, &label, arm, frame.dates()[plan.train_range.0]);
    let kinematic = arm.kinematic();
    let mut model_cfg = ModelConfig::for_windows(spec.arch, cfg.t_past, cfg.t_future, kinematic, spec.normalize, seed);
    model_cfg.arch_params = cfg.arch_params;

    let mut xs = Vec::with_capacity(plan.train_obs);
    let mut ys = Vec::with_capacity(plan.train_obs);
    for start in plan.train_starts() {
        let w = make_window(frame, start, cfg.t_past, cfg.t_future, spec.normalize)?;
        let (x, y) = assemble_vectors(&w, kinematic);
        xs.push(x);
        ys.push(y);
    }
    let mut loss = if kinematic { LossSpec::kinematic(cfg.t_future) } else { LossSpec::mse(cfg.t_future) };
    loss.velocity_supervision = cfg.velocity_supervision;
    loss.consistency_weight = cfg.consistency_weight;
    let train_cfg =
        TrainConfig { epochs: cfg.epochs, batch_size: cfg.batch_size, adam: AdamConfig::with_lr(cfg.lr), loss };

    let failed = |seed| ItemResult {
        spec,
        arm,
        session_index: plan.session_index,
        seed,
        result: SessionResult::failed(plan.session_index),
        trace: Vec::new(),
        final_train_loss: None,
    };
    let (model, report) = match fit_model(&model_cfg, &xs, &ys, &train_cfg) {
        Ok(r) => r,
        Err(ModelError::Diverged { .. }) | Err(ModelError::Graph(_)) => return Ok(failed(seed)),
        Err(e) => return Err(e.into()),
    };

    let mut windows = Vec::with_capacity(plan.test_window_count);
    let mut inputs = Vec::with_capacity(plan.test_window_count);
    for start in plan.test_starts() {
        let w = make_window(frame, start, cfg.t_past, cfg.t_future, spec.normalize)?;
        inputs.push(assemble_vectors(&w, kinematic).0);
        windows.push(w);
    }
    let preds = match model.predict_batch(&inputs) {
        Ok(p) => p,
        Err(ModelError::Graph(_)) => return Ok(failed(seed)),
        Err(e) => return Err(e.into()),
    };
    let mut pairs = Vec::with_capacity(windows.len());
    let mut trace = Vec::with_capacity(windows.len() * cfg.t_future);
    for (w, p) in windows.iter().zip(&preds) {
        let forecast = denormalize_forecast(&p[..cfg.t_future], &w.norm);
        if forecast.iter().any(|v| !v.is_finite()) {
            return Ok(failed(seed));
        }
        let first_day = w.input_start + cfg.t_past;
        let actual = frame.values()[first_day..first_day + cfg.t_future].to_vec();
        for (h, (a, f)) in actual.iter().zip(&forecast).enumerate() {
            trace.push(TracePoint { day: first_day + h, actual: *a, predicted: *f });
        }
        pairs.push((actual, forecast));
    }
    let result = session_metrics(plan.session_index, &pairs)?;
    Ok(ItemResult {
        spec,
        arm,
        session_index: plan.session_index,
        seed,
        result,
        trace,
        final_train_loss: report.and_then(|r| r.final_loss()),
    })
}

/// Run every architecture, arm and session without writing files.
pub fn run_in_memory(cfg: &RunConfig, frame: &SeriesFrame) -> Result<(Vec<SessionPlan>, Vec<ItemResult>, Vec<MetricsTable>), ExperimentError> {
    cfg.validate()?;
    let mut sessions = plan_sessions(frame.len(), &cfg.window_spec())?;
    if let Some(k) = cfg.max_sessions {
        sessions.truncate(k);
    }
    let arms = cfg.arms.arms();
    let mut work: Vec<(ArchSpec, Arm, &SessionPlan)> = Vec::new();
    for spec in &cfg.architectures {
        for &arm in &arms {
            work.extend(sessions.iter().map(|p| (*spec, arm, p)));
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| ExperimentError::Config(format!("thread pool: {e}")))?;
    let items: Vec<ItemResult> = pool.install(|| {
        work.par_iter().map(|(spec, arm, plan)| run_item(frame, plan, *spec, *arm, cfg)).collect::<Result<_, _>>()
    })?;

    let mut tables = Vec::new();
    for spec in &cfg.architectures {
        let pick = |arm: Arm| -> Vec<SessionResult> {
            items.iter().filter(|i| i.spec == *spec && i.arm == arm).map(|i| i.result).collect()
        };
        tables.push(aggregate(&spec.label(), pick(Arm::Ann), pick(Arm::Kinn))?);
    }
    Ok((sessions, items, tables))
}

#[derive(Serialize)]
struct ItemMeta<'a> {
    model: String,
    arm: &'a str,
    session: usize,
    seed: u64,
    train_start_date: String,
    test_start_date: String,
    failed: bool,
    final_train_loss: Option<f64>,
}

#[derive(Serialize)]
struct RunMetadata<'a> {
    version: &'a str,
    created_at: String,
    config: &'a RunConfig,
    adam: AdamConfig,
    total_days: usize,
    session_pairs: usize,
    notes: Vec<String>,
    items: Vec<ItemMeta<'a>>,
}

pub fn trace_file_name(label: &str, arm: Arm, session: usize) -> String {
    format!("{label}_{arm}_s{session:02}.csv")
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), ExperimentError> {
    fs::write(path, contents).map_err(io_err(path))
}

/// Run the configured experiment and write all report files.
pub fn run_experiment(cfg: &RunConfig) -> Result<RunReport, ExperimentError> {
    cfg.validate()?;
    let frame = load_series_for_sessions(&cfg.data, cfg.session_len)?;
    let (sessions, items, tables) = run_in_memory(cfg, &frame)?;

    let out = &cfg.output_dir;
    let traces = out.join("traces");
    fs::create_dir_all(&traces).map_err(io_err(&traces))?;

    let mut buf = Vec::new();
    write_sessions_csv(&mut buf, &tables)?;
    write_file(&out.join("sessions.csv"), &buf)?;
    let mut buf = Vec::new();
    write_summary_csv(&mut buf, &tables)?;
    write_file(&out.join("summary.csv"), &buf)?;

    for item in &items {
        let mut s = String::from("day,actual,predicted\n");
        for p in &item.trace {
            let _ = writeln!(s, "{},{},{}", p.day, p.actual, p.predicted);
        }
        let path = traces.join(trace_file_name(&item.spec.label(), item.arm, item.session_index));
        write_file(&path, s.as_bytes())?;
    }

    if cfg.dump_windows {
        let path = out.join("windows.jsonl");
        let file = fs::File::create(&path).map_err(io_err(&path))?;
        let mut w = BufWriter::new(file);
        let normalize = cfg.architectures.iter().any(|s| s.normalize);
        for plan in &sessions {
            for (offset, start) in plan.train_starts().enumerate() {
                let win = make_window(&frame, start, cfg.t_past, cfg.t_future, normalize)?;
                write_window_dump(&mut w, plan.session_index, offset, &win, true).map_err(io_err(&path))?;
            }
        }
        w.flush().map_err(io_err(&path))?;
    }

    let mut notes = Vec::new();
    if cfg.batch_size >= cfg.train_obs {
        notes.push(format!(
            "batch_size {} >= {} training windows per session: one full-batch step per epoch",
            cfg.batch_size, cfg.train_obs
        ));
    }
    let item_meta = items
        .iter()
        .map(|i| {
            let plan = &sessions[i.session_index];
            ItemMeta {
                model: i.spec.label(),
                arm: i.arm.name(),
                session: i.session_index,
                seed: i.seed,
                train_start_date: frame.dates()[plan.train_range.0].to_string(),
                test_start_date: frame.dates()[plan.test_range().0].to_string(),
                failed: i.result.failed,
                final_train_loss: i.final_train_loss,
            }
        })
        .collect();
    let meta = RunMetadata {
        version: env!("CARGO_PKG_VERSION"),
        created_at: chrono::Utc::now().to_rfc3339(),
        config: cfg,
        adam: AdamConfig::with_lr(cfg.lr),
        total_days: frame.len(),
        session_pairs: sessions.len(),
        notes,
        items: item_meta,
    };
    let json = serde_json::to_string_pretty(&meta).expect("metadata serializes");
    write_file(&out.join("run_metadata.json"), json.as_bytes())?;

    Ok(RunReport { tables, items, sessions, output_dir: out.clone() })
}

/// Concatenate a model/arm's per-session traces into
/// `plot_<model>_<arm>.csv` with columns `session,window,horizon,day,date,actual,predicted`.
pub fn emit_plot_data(output_dir: &Path, model: &str, arm: Arm) -> Result<PathBuf, ExperimentError> {
    let meta_path = output_dir.join("run_metadata.json");
    let meta_text = fs::read_to_string(&meta_path).map_err(|_| ExperimentError::MissingArtifact(meta_path.clone()))?;
    let meta: serde_json::Value =
        serde_json::from_str(&meta_text).map_err(|e| ExperimentError::Config(format!("run metadata: {e}")))?;
    let config: RunConfig = serde_json::from_value(meta["config"].clone())
        .map_err(|e| ExperimentError::Config(format!("run metadata config: {e}")))?;
    let t_future = config.t_future;
    let frame = load_series(&config.data).ok();

    let mut sessions: BTreeMap<usize, ()> = BTreeMap::new();
    for item in meta["items"].as_array().into_iter().flatten() {
        if item["model"] == model && item["arm"] == arm.name() {
            if let Some(s) = item["session"].as_u64() {
                sessions.insert(s as usize, ());
            }
        }
    }
    if sessions.is_empty() {
        return Err(ExperimentError::MissingArtifact(output_dir.join("traces").join(trace_file_name(model, arm, 0))));
    }
    let mut out = String::from("session,window,horizon,day,date,actual,predicted\n");
    for &s in sessions.keys() {
        let path = output_dir.join("traces").join(trace_file_name(model, arm, s));
        let text = fs::read_to_string(&path).map_err(|_| ExperimentError::MissingArtifact(path.clone()))?;
        for (k, line) in text.lines().skip(1).enumerate() {
            let day: usize = line
                .split(',')
                .next()
                .and_then(|d| d.parse().ok())
                .ok_or_else(|| ExperimentError::Config(format!("{}: bad row `{line}`", path.display())))?;
            let rest = &line[line.find(',').map_or(line.len(), |i| i + 1)..];
            let date = frame.as_ref().and_then(|f| f.dates().get(day)).map(|d| d.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{s},{},{},{day},{date},{rest}", k / t_future, k % t_future);
        }
    }
    let path = output_dir.join(format!("plot_{model}_{arm}.csv"));
    write_file(&path, out.as_bytes())?;
    Ok(path)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DataSummary {
    pub rows: usize,
    pub first_date: NaiveDate,
    pub last_date: NaiveDate,
    pub full_sessions: usize,
    pub session_pairs: usize,
}

/// Check a series file and report how many sessions it supports.
pub fn validate_data(path: &Path, spec: &WindowSpec) -> Result<DataSummary, ExperimentError> {
    let frame = load_series_for_sessions(path, spec.session_len)?;
    let plans = plan_sessions(frame.len(), spec)?;
    Ok(DataSummary {
        rows: frame.len(),
        first_date: frame.dates()[0],
        last_date: *frame.dates().last().expect("non-empty"),
        full_sessions: frame.len() / spec.session_len,
        session_pairs: plans.len(),
    })
}
