//! Kinematic-informed sequence-to-sequence forecasting.
//!
//! Velocity-augmented predictors trained with a two-term loss that penalises
//! both value errors and violations of `v[t] ≈ v[t-1] + e[t-1]`, evaluated
//! against identical non-kinematic baselines under walk-forward sessions.

pub mod autodiff;
pub mod dataset;
pub mod kinloss;
pub mod models;
pub mod evaluation;
pub mod experiment;
