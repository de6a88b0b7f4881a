//! Velocity-augmented observation windows.
//!
//! A window holds `T_p` past values and their `T_p - 1` first differences as
//! input, and `T_f` future values plus `T_f - 1` differences as target. With
//! normalization on, the min-max map of the input values is applied to both
//! parts before the differences are taken, so the consistency relation
//! `v[t] = v[t-1] + e[t-1]` holds in model space.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{DatasetError, SeriesFrame};

/// Per-window affine map `x ↦ (x - min) / scale + offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationRecord {
    pub window_min: f64,
    pub window_max: f64,
    pub enabled: bool,
    /// Set when the input window was constant: values map to 0.5, scale 1.
    pub degenerate: bool,
}

impl NormalizationRecord {
    pub fn identity() -> Self {
        Self { window_min: 0.0, window_max: 0.0, enabled: false, degenerate: false }
    }

    pub fn fit(values: &[f64]) -> Self {
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self { window_min: min, window_max: max, enabled: true, degenerate: max <= min }
    }

    fn scale_offset(&self) -> (f64, f64) {
        if self.degenerate {
            (1.0, 0.5)
        } else {
            (self.window_max - self.window_min, 0.0)
        }
    }

    pub fn normalize(&self, x: f64) -> f64 {
        if !self.enabled {
            return x;
        }
        let (scale, offset) = self.scale_offset();
        (x - self.window_min) / scale + offset
    }

    pub fn denormalize(&self, y: f64) -> f64 {
        if !self.enabled {
            return y;
        }
        let (scale, offset) = self.scale_offset();
        (y - offset) * scale + self.window_min
    }
}

/// First differences `x[t+1] - x[t]`.
pub fn velocities(values: &[f64]) -> Vec<f64> {
    values.windows(2).map(|w| w[1] - w[0]).collect()
}

/// One (input, target) pair in model space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSample {
    pub input_start: usize,
    pub input_values: Vec<f64>,
    pub input_velocities: Vec<f64>,
    /// Empty for input-only (forecast) windows.
    pub target_values: Vec<f64>,
    pub target_velocities: Vec<f64>,
    pub norm: NormalizationRecord,
}

impl WindowSample {
    pub fn has_target(&self) -> bool {
        !self.target_values.is_empty()
    }

    /// Target values mapped back to index points.
    pub fn actual_target(&self) -> Vec<f64> {
        denormalize_forecast(&self.target_values, &self.norm)
    }
}

fn encode(
    frame: &SeriesFrame,
    input_start: usize,
    t_past: usize,
    t_future: usize,
    normalize: bool,
    with_target: bool,
) -> Result<WindowSample, DatasetError> {
    let needed = input_start + t_past + if with_target { t_future } else { 0 };
    if needed > frame.len() {
        return Err(DatasetError::WindowOutOfRange { start: input_start, needed, len: frame.len() });
    }
    let raw_in = &frame.values()[input_start..input_start + t_past];
    let norm = if normalize { NormalizationRecord::fit(raw_in) } else { NormalizationRecord::identity() };
    let input_values: Vec<f64> = raw_in.iter().map(|&x| norm.normalize(x)).collect();
    let input_velocities = velocities(&input_values);
    let (target_values, target_velocities) = if with_target {
        let raw_out = &frame.values()[input_start + t_past..needed];
        let tv: Vec<f64> = raw_out.iter().map(|&x| norm.normalize(x)).collect();
        let te = velocities(&tv);
        (tv, te)
    } else {
        (Vec::new(), Vec::new())
    };
    Ok(WindowSample { input_start, input_values, input_velocities, target_values, target_velocities, norm })
}

/// Window with inputs at days `[input_start, input_start + T_p)` and targets
/// at the following `T_f` days.
pub fn make_window(
    frame: &SeriesFrame,
    input_start: usize,
    t_past: usize,
    t_future: usize,
    normalize: bool,
) -> Result<WindowSample, DatasetError> {
    encode(frame, input_start, t_past, t_future, normalize, true)
}

/// Input part only, for forecasting beyond the end of the series.
pub fn make_input_window(
    frame: &SeriesFrame,
    input_start: usize,
    t_past: usize,
    normalize: bool,
) -> Result<WindowSample, DatasetError> {
    encode(frame, input_start, t_past, 0, normalize, false)
}

/// Flatten a window into model vectors. Kinematic layout is values followed
/// by velocities: lengths `2T_p - 1` and `2T_f - 1`. The baseline layout
/// carries values only.
pub fn assemble_vectors(sample: &WindowSample, kinematic: bool) -> (Vec<f64>, Vec<f64>) {
    let mut input = sample.input_values.clone();
    let mut target = sample.target_values.clone();
    if kinematic {
        input.extend_from_slice(&sample.input_velocities);
        target.extend_from_slice(&sample.target_velocities);
    }
    (input, target)
}

/// Map predicted values back to index points.
pub fn denormalize_forecast(pred: &[f64], norm: &NormalizationRecord) -> Vec<f64> {
    pred.iter().map(|&y| norm.denormalize(y)).collect()
}

#[derive(Serialize)]
struct DumpLine<'a> {
    session: usize,
    offset: usize,
    input: &'a [f64],
    target: &'a [f64],
    min: f64,
    max: f64,
}

/// Write one JSON line describing an assembled window.
pub fn write_window_dump<W: Write>(
    out: &mut W,
    session: usize,
    offset: usize,
    sample: &WindowSample,
    kinematic: bool,
) -> std::io::Result<()> {
    let (input, target) = assemble_vectors(sample, kinematic);
    let line = DumpLine {
        session,
        offset,
        input: &input,
        target: &target,
        min: sample.norm.window_min,
        max: sample.norm.window_max,
    };
    serde_json::to_writer(&mut *out, &line)?;
    out.write_all(b"\n")
}
