//! Forecast error metrics, per-session pooling, aggregation and the
//! one-sided Wilcoxon signed-rank test.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("empty input")]
    Empty,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("actual value at position {0} is zero")]
    ZeroActual(usize),
    #[error("signed-rank test needs at least {min} non-zero differences, got {got}")]
    TooFewPairs { got: usize, min: usize },
    #[error("arms disagree on sessions: {0}")]
    SessionMismatch(String),
    #[error("csv: {0}")]
    Csv(String),
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<(), EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(())
}

/// Mean absolute percentage error as a fraction.
pub fn mape(actual: &[f64], forecast: &[f64]) -> Result<f64, EvalError> {
    check_pair(actual, forecast)?;
    let mut s = 0.0;
    for (i, (a, f)) in actual.iter().zip(forecast).enumerate() {
        if *a == 0.0 {
            return Err(EvalError::ZeroActual(i));
        }
        s += ((a - f) / a).abs();
    }
    Ok(s / actual.len() as f64)
}

pub fn rmse(actual: &[f64], forecast: &[f64]) -> Result<f64, EvalError> {
    check_pair(actual, forecast)?;
    let s: f64 = actual.iter().zip(forecast).map(|(a, f)| (a - f) * (a - f)).sum();
    Ok((s / actual.len() as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionResult {
    pub session_index: usize,
    pub mape: f64,
    pub rmse: f64,
    pub prediction_count: usize,
    /// Training diverged; metrics are NaN.
    pub failed: bool,
}

impl SessionResult {
    pub fn failed(session_index: usize) -> Self {
        Self { session_index, mape: f64::NAN, rmse: f64::NAN, prediction_count: 0, failed: true }
    }
}

/// Pool every predicted day of every window in a session into one flat
/// `(actual, forecast)` list and score it once.
pub fn session_metrics<A, F>(session_index: usize, windows: &[(A, F)]) -> Result<SessionResult, EvalError>
where
    A: AsRef<[f64]>,
    F: AsRef<[f64]>,
{
    let mut actual = Vec::new();
    let mut forecast = Vec::new();
    for (a, f) in windows {
        let (a, f) = (a.as_ref(), f.as_ref());
        if a.len() != f.len() {
            return Err(EvalError::LengthMismatch(a.len(), f.len()));
        }
        actual.extend_from_slice(a);
        forecast.extend_from_slice(f);
    }
    Ok(SessionResult {
        session_index,
        mape: mape(&actual, &forecast)?,
        rmse: rmse(&actual, &forecast)?,
        prediction_count: actual.len(),
        failed: false,
    })
}

pub const WILCOXON_MIN_PAIRS: usize = 5;
pub const WILCOXON_EXACT_MAX: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WilcoxonMethod {
    /// Exact null distribution up to 12 non-zero pairs, normal approximation above.
    Auto,
    Exact,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    pub p_value: f64,
    /// Sum of ranks of positive differences `x - y`.
    pub w_plus: f64,
    /// Pairs left after dropping zero differences.
    pub n: usize,
    pub exact: bool,
    /// All differences were zero.
    pub degenerate: bool,
}

/// Average ranks (1-based) of `|d|`, with tie group sizes.
fn signed_ranks(d: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..d.len()).collect();
    idx.sort_by(|&a, &b| d[a].abs().total_cmp(&d[b].abs()));
    let mut ranks = vec![0.0; d.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && d[idx[j + 1]].abs() == d[idx[i]].abs() {
            j += 1;
        }
        let avg = (i + j + 2) as f64 / 2.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        ties.push(j - i + 1);
        i = j + 1;
    }
    (ranks, ties)
}

/// `P(W+ >= w_plus)` under the null by dynamic programming over doubled
/// (integer) ranks.
pub fn exact_upper_tail(ranks: &[f64], w_plus: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let max: usize = doubled.iter().sum();
    let mut counts = vec![0.0f64; max + 1];
    counts[0] = 1.0;
    let mut reach = 0;
    for &r in &doubled {
        for s in (0..=reach).rev() {
            if counts[s] != 0.0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let obs = (2.0 * w_plus).round() as usize;
    let tail: f64 = counts[obs.min(max + 1)..].iter().sum();
    tail / 2f64.powi(ranks.len() as i32)
}

/// Normal approximation to `P(W+ >= w_plus)` with tie-corrected variance and
/// continuity correction.
pub fn normal_upper_tail(n: usize, ties: &[usize], w_plus: f64) -> f64 {
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / 48.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term;
    if var <= 0.0 {
        return if w_plus >= mean { 1.0 } else { 0.0 };
    }
    let z = (w_plus - mean - 0.5) / var.sqrt();
    let std_normal = Normal::new(0.0, 1.0).expect("valid normal");
    1.0 - std_normal.cdf(z)
}

/// One-sided paired signed-rank test of the alternative "arm B < arm A" on
/// `d = x - y`, where `x` holds arm A and `y` arm B.
pub fn wilcoxon_one_sided(x: &[f64], y: &[f64]) -> Result<WilcoxonResult, EvalError> {
    wilcoxon_one_sided_with(x, y, WilcoxonMethod::Auto)
}

pub fn wilcoxon_one_sided_with(x: &[f64], y: &[f64], method: WilcoxonMethod) -> Result<WilcoxonResult, EvalError> {
    check_pair(x, y)?;
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).filter(|d| *d != 0.0).collect();
    if d.is_empty() {
        return Ok(WilcoxonResult { p_value: 1.0, w_plus: 0.0, n: 0, exact: true, degenerate: true });
    }
    if d.len() < WILCOXON_MIN_PAIRS {
        return Err(EvalError::TooFewPairs { got: d.len(), min: WILCOXON_MIN_PAIRS });
    }
    let (ranks, ties) = signed_ranks(&d);
    let w_plus: f64 = ranks.iter().zip(&d).filter(|(_, d)| **d > 0.0).map(|(r, _)| r).sum();
    let exact = match method {
        WilcoxonMethod::Auto => d.len() <= WILCOXON_EXACT_MAX,
        WilcoxonMethod::Exact => true,
        WilcoxonMethod::Normal => false,
    };
    let p_value = if exact { exact_upper_tail(&ranks, w_plus) } else { normal_upper_tail(d.len(), &ties, w_plus) };
    Ok(WilcoxonResult { p_value: p_value.clamp(0.0, 1.0), w_plus, n: d.len(), exact, degenerate: false })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    /// Plain network on values with MSE loss.
    Ann,
    /// Velocity-augmented network with the kinematic loss.
    Kinn,
}

impl Arm {
    pub fn name(self) -> &'static str {
        match self {
            Arm::Ann => "ann",
            Arm::Kinn => "kinn",
        }
    }

    pub fn kinematic(self) -> bool {
        self == Arm::Kinn
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Sample mean and standard deviation (`n - 1` denominator).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub mean: f64,
    pub std: f64,
    pub sessions: usize,
    pub failed: usize,
}

fn summarize(results: &[SessionResult]) -> ArmSummary {
    let ok: Vec<f64> = results.iter().filter(|r| !r.failed).map(|r| r.mape).collect();
    let failed = results.len() - ok.len();
    let n = ok.len() as f64;
    let mean = if ok.is_empty() { f64::NAN } else { ok.iter().sum::<f64>() / n };
    let std = if ok.len() < 2 {
        if ok.is_empty() { f64::NAN } else { 0.0 }
    } else {
        (ok.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    ArmSummary { mean, std, sessions: ok.len(), failed }
}

/// Paired per-session results of one model with aggregate statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub model: String,
    pub ann: Vec<SessionResult>,
    pub kinn: Vec<SessionResult>,
    pub ann_summary: ArmSummary,
    pub kinn_summary: ArmSummary,
    /// Test of "KINN MAPE < ANN MAPE" over sessions where both arms succeeded.
    pub wilcoxon: Option<WilcoxonResult>,
    pub flags: Vec<String>,
}

impl MetricsTable {
    pub fn wilcoxon_p(&self) -> f64 {
        self.wilcoxon.map_or(f64::NAN, |w| w.p_value)
    }
}

pub fn aggregate(model: &str, ann: Vec<SessionResult>, kinn: Vec<SessionResult>) -> Result<MetricsTable, EvalError> {
    let single_arm = ann.is_empty() || kinn.is_empty();
    if !single_arm && ann.len() != kinn.len() {
        return Err(EvalError::SessionMismatch(format!("{} vs {} sessions", ann.len(), kinn.len())));
    }
    if let Some((a, _)) = ann.iter().zip(&kinn).find(|(a, k)| a.session_index != k.session_index) {
        return Err(EvalError::SessionMismatch(format!("session {} unmatched", a.session_index)));
    }
    let ann_summary = summarize(&ann);
    let kinn_summary = summarize(&kinn);
    let mut flags = Vec::new();
    if ann_summary.sessions == 1 || kinn_summary.sessions == 1 {
        flags.push("single_session".to_string());
    }
    let failed = ann_summary.failed + kinn_summary.failed;
    if failed > 0 {
        flags.push(format!("failed_sessions={failed}"));
    }
    let (x, y): (Vec<f64>, Vec<f64>) =
        ann.iter().zip(&kinn).filter(|(a, k)| !a.failed && !k.failed).map(|(a, k)| (a.mape, k.mape)).unzip();
    let paired = if single_arm {
        flags.push("single_arm".to_string());
        Err(EvalError::Empty)
    } else {
        wilcoxon_one_sided(&x, &y)
    };
    let wilcoxon = match paired {
        Err(EvalError::Empty) if single_arm => None,
        Ok(w) => {
            if w.degenerate {
                flags.push("wilcoxon_degenerate".to_string());
            }
            Some(w)
        }
        Err(EvalError::TooFewPairs { .. }) | Err(EvalError::Empty) => {
            flags.push("wilcoxon_too_few_pairs".to_string());
            None
        }
        Err(e) => return Err(e),
    };
    Ok(MetricsTable { model: model.to_string(), ann, kinn, ann_summary, kinn_summary, wilcoxon, flags })
}

fn csv_err(e: impl fmt::Display) -> EvalError {
    EvalError::Csv(e.to_string())
}

/// `model,arm,session,mape,rmse,flags`, one row per model, arm and session.
pub fn write_sessions_csv<W: Write>(out: W, tables: &[MetricsTable]) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["model", "arm", "session", "mape", "rmse", "flags"]).map_err(csv_err)?;
    for t in tables {
        for (arm, rows) in [(Arm::Ann, &t.ann), (Arm::Kinn, &t.kinn)] {
            for r in rows {
                let flag = if r.failed { "failed" } else { "" };
                w.write_record([
                    t.model.as_str(),
                    arm.name(),
                    &r.session_index.to_string(),
                    &r.mape.to_string(),
                    &r.rmse.to_string(),
                    flag,
                ])
                .map_err(csv_err)?;
            }
        }
    }
    w.flush().map_err(csv_err)
}

/// `model,mean_ann,std_ann,mean_kinn,std_kinn,wilcoxon_p,flags`, one row per model.
pub fn write_summary_csv<W: Write>(out: W, tables: &[MetricsTable]) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["model", "mean_ann", "std_ann", "mean_kinn", "std_kinn", "wilcoxon_p", "flags"])
        .map_err(csv_err)?;
    for t in tables {
        w.write_record([
            t.model.as_str(),
            &t.ann_summary.mean.to_string(),
            &t.ann_summary.std.to_string(),
            &t.kinn_summary.mean.to_string(),
            &t.kinn_summary.std.to_string(),
            &t.wilcoxon_p().to_string(),
            &t.flags.join(";"),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(csv_err)
}
