//! Walk-forward session schedule.
//!
//! The series is tiled from day 0 into blocks of `session_len` days. Block `s`
//! provides `train_obs` one-day-shifted training windows starting at its first
//! day; the model trained on it is tested on block `s + 1`. The first test
//! window takes its inputs from the final `T_p` days of block `s` and each
//! later one shifts by a day, until the last target day is the final day of
//! block `s + 1`.

use serde::{Deserialize, Serialize};

use super::DatasetError;

/// Window geometry shared by planning and window construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub session_len: usize,
    /// Past values per input window.
    pub t_past: usize,
    /// Future values per target window.
    pub t_future: usize,
    pub train_obs: usize,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self { session_len: 120, t_past: 30, t_future: 30, train_obs: 30 }
    }
}

impl WindowSpec {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let Self { session_len, t_past, t_future, train_obs } = *self;
        if t_past < 2 || t_future < 2 || train_obs < 1 {
            return Err(DatasetError::Geometry(format!(
                "need T_p >= 2, T_f >= 2 and train_obs >= 1 (got {t_past}, {t_future}, {train_obs})"
            )));
        }
        if t_past + t_future + train_obs - 1 > session_len {
            return Err(DatasetError::Geometry(format!(
                "T_p + T_f + train_obs - 1 = {} exceeds session length {session_len}",
                t_past + t_future + train_obs - 1
            )));
        }
        Ok(())
    }
}

/// One training session and the test session that follows it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionPlan {
    pub session_index: usize,
    /// `[start, end)` day range of the training block.
    pub train_range: (usize, usize),
    pub train_obs: usize,
    /// Input start day of the first test window.
    pub test_input_start: usize,
    pub test_window_count: usize,
    pub t_past: usize,
    pub t_future: usize,
}

impl SessionPlan {
    /// Input start days of the training windows.
    pub fn train_starts(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.train_obs).map(move |o| self.train_range.0 + o)
    }

    /// Input start days of the test windows.
    pub fn test_starts(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.test_window_count).map(move |k| self.test_input_start + k)
    }

    /// Last label day used in training.
    pub fn last_train_label_day(&self) -> usize {
        self.train_range.0 + self.train_obs - 1 + self.t_past + self.t_future - 1
    }

    /// `[start, end)` day range of the test block.
    pub fn test_range(&self) -> (usize, usize) {
        let len = self.train_range.1 - self.train_range.0;
        (self.train_range.1, self.train_range.1 + len)
    }

    pub fn first_test_target_day(&self) -> usize {
        self.test_input_start + self.t_past
    }

    pub fn last_test_target_day(&self) -> usize {
        self.test_input_start + self.test_window_count - 1 + self.t_past + self.t_future - 1
    }
}

/// Build the schedule for a series of `total_days` rows.
///
/// Yields `floor(total_days / session_len) - 1` session pairs.
pub fn plan_sessions(total_days: usize, spec: &WindowSpec) -> Result<Vec<SessionPlan>, DatasetError> {
    spec.validate()?;
    let blocks = total_days / spec.session_len;
    if blocks < 2 {
        return Err(DatasetError::Insufficient { rows: total_days, needed: 2 * spec.session_len });
    }
    let len = spec.session_len;
    let plans = (0..blocks - 1)
        .map(|s| {
            let start = s * len;
            let test_block = start + len;
            SessionPlan {
                session_index: s,
                train_range: (start, start + len),
                train_obs: spec.train_obs,
                test_input_start: test_block - spec.t_past,
                // last target day = test_block + len - 1
                test_window_count: len - spec.t_future + 1,
                t_past: spec.t_past,
                t_future: spec.t_future,
            }
        })
        .collect();
    Ok(plans)
}
