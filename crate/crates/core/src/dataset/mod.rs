//! Series ingestion, walk-forward session planning and window encoding.

mod series;
mod sessions;
mod window;

pub use series::{load_series, load_series_for_sessions, read_series, SeriesFrame};
pub use sessions::{plan_sessions, SessionPlan, WindowSpec};
pub use window::{
    assemble_vectors, denormalize_forecast, make_input_window, make_window, velocities,
    write_window_dump, NormalizationRecord, WindowSample,
};

use chrono::NaiveDate;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DatasetError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("line {line}: {message}")]
    Csv { line: usize, message: String },
    #[error("expected header `date,value`, found `{0}`")]
    Header(String),
    #[error("duplicate date {0}")]
    DuplicateDate(NaiveDate),
    #[error("value {value} on {date} is not a positive finite number")]
    NonPositiveValue { date: NaiveDate, value: f64 },
    #[error("insufficient data: {rows} rows, need at least {needed}")]
    Insufficient { rows: usize, needed: usize },
    #[error("invalid window geometry: {0}")]
    Geometry(String),
    #[error("window starting at day {start} needs {needed} days, series has {len}")]
    WindowOutOfRange { start: usize, needed: usize, len: usize },
}
