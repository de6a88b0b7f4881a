use std::collections::HashSet;
use std::io::Read;
use std::path::Path;

use chrono::NaiveDate;

use super::DatasetError;

/// Ordered trading-day index levels.
///
/// Day indices count rows, not calendar days.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesFrame {
    dates: Vec<NaiveDate>,
    values: Vec<f64>,
}

impl SeriesFrame {
    /// Build from unsorted `(date, value)` pairs. Rows are sorted by date;
    /// duplicate dates and non-positive or non-finite values are rejected.
    pub fn from_pairs(mut rows: Vec<(NaiveDate, f64)>) -> Result<Self, DatasetError> {
        let mut seen = HashSet::with_capacity(rows.len());
        for (date, value) in &rows {
            if !seen.insert(*date) {
                return Err(DatasetError::DuplicateDate(*date));
            }
            if !(value.is_finite() && *value > 0.0) {
                return Err(DatasetError::NonPositiveValue { date: *date, value: *value });
            }
        }
        rows.sort_by_key(|(d, _)| *d);
        let (dates, values) = rows.into_iter().unzip();
        Ok(Self { dates, values })
    }

    /// Synthetic frame with consecutive calendar dates starting at `start`.
    pub fn from_values(start: NaiveDate, values: Vec<f64>) -> Result<Self, DatasetError> {
        let rows = values
            .into_iter()
            .enumerate()
            .map(|(i, v)| (start + chrono::Duration::days(i as i64), v))
            .collect();
        Self::from_pairs(rows)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Contiguous sub-range of days `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> Self {
        Self { dates: self.dates[start..end].to_vec(), values: self.values[start..end].to_vec() }
    }
}

/// Parse a `date,value` CSV from any reader.
pub fn read_series<R: Read>(reader: R) -> Result<SeriesFrame, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| DatasetError::Csv { line: 1, message: e.to_string() })?;
    let names: Vec<&str> = headers.iter().collect();
    if names != ["date", "value"] {
        return Err(DatasetError::Header(headers.iter().collect::<Vec<_>>().join(",")));
    }
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| DatasetError::Csv {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let bad = |message: String| DatasetError::Csv { line, message };
        let date = NaiveDate::parse_from_str(&record[0], "%Y-%m-%d")
            .map_err(|e| bad(format!("bad date `{}`: {e}", &record[0])))?;
        let value: f64 = record[1]
            .parse()
            .map_err(|e| bad(format!("bad value `{}`: {e}", &record[1])))?;
        rows.push((date, value));
    }
    SeriesFrame::from_pairs(rows)
}

/// Load a `date,value` CSV. No minimum length is imposed here; see
/// [`load_series_for_sessions`].
pub fn load_series(path: impl AsRef<Path>) -> Result<SeriesFrame, DatasetError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)
        .map_err(|e| DatasetError::Io { path: path.display().to_string(), message: e.to_string() })?;
    read_series(std::io::BufReader::new(file))
}

/// Load a series that must hold at least two full sessions.
pub fn load_series_for_sessions(
    path: impl AsRef<Path>,
    session_len: usize,
) -> Result<SeriesFrame, DatasetError> {
    let frame = load_series(path)?;
    let needed = 2 * session_len;
    if frame.len() < needed {
        return Err(DatasetError::Insufficient { rows: frame.len(), needed });
    }
    Ok(frame)
}
