//! Value MSE and the two-term kinematic loss.
//!
//! For a prediction laid out as `[v_1..v_Tf, e_1..e_{Tf-1}]` and target values
//! `v̂`, the kinematic loss is
//!
//! ```text
//! L = 1/Tf · Σ_{t=1..Tf} (v_t - v̂_t)²  +  w/(Tf-1) · Σ_{t=2..Tf} (v_t - (v_{t-1} + e_{t-1}))²
//! ```
//!
//! The second term uses predicted values and predicted velocities only. An
//! optional third term supervises the predicted velocities directly.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Graph, NodeId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("length mismatch: prediction {pred}, target {target}")]
    LengthMismatch { pred: usize, target: usize },
    #[error("kinematic loss needs T_f >= 2, got {0}")]
    HorizonTooShort(usize),
    #[error("kinematic loss expects vectors of length {expected}, got {got}")]
    Layout { expected: usize, got: usize },
    #[error("empty vectors")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    Kinematic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    pub t_future: usize,
    pub velocity_supervision: bool,
    pub consistency_weight: f64,
}

impl LossSpec {
    pub fn mse(t_future: usize) -> Self {
        Self { kind: LossKind::Mse, t_future, velocity_supervision: false, consistency_weight: 1.0 }
    }

    pub fn kinematic(t_future: usize) -> Self {
        Self { kind: LossKind::Kinematic, ..Self::mse(t_future) }
    }

    /// Expected prediction/target length.
    pub fn width(&self) -> usize {
        match self.kind {
            LossKind::Mse => self.t_future,
            LossKind::Kinematic => 2 * self.t_future - 1,
        }
    }

    pub fn validate(&self) -> Result<(), LossError> {
        match self.kind {
            LossKind::Mse if self.t_future == 0 => Err(LossError::Empty),
            LossKind::Kinematic if self.t_future < 2 => Err(LossError::HorizonTooShort(self.t_future)),
            _ => Ok(()),
        }
    }
}

/// Separate terms of the kinematic loss for one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KinematicTerms {
    pub value: f64,
    pub consistency: f64,
    pub velocity: f64,
}

impl KinematicTerms {
    pub fn total(&self, spec: &LossSpec) -> f64 {
        let mut l = self.value + spec.consistency_weight * self.consistency;
        if spec.velocity_supervision {
            l += self.velocity;
        }
        l
    }
}

pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<f64, LossError> {
    if pred.len() != target.len() {
        return Err(LossError::LengthMismatch { pred: pred.len(), target: target.len() });
    }
    if pred.is_empty() {
        return Err(LossError::Empty);
    }
    let s: f64 = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(s / pred.len() as f64)
}

pub fn kinematic_terms(pred: &[f64], target: &[f64], t_future: usize) -> Result<KinematicTerms, LossError> {
    if t_future < 2 {
        return Err(LossError::HorizonTooShort(t_future));
    }
    if pred.len() != target.len() {
        return Err(LossError::LengthMismatch { pred: pred.len(), target: target.len() });
    }
    let width = 2 * t_future - 1;
    if pred.len() != width {
        return Err(LossError::Layout { expected: width, got: pred.len() });
    }
    let (v, e) = pred.split_at(t_future);
    let (v_hat, e_hat) = target.split_at(t_future);
    let value = mse_loss(v, v_hat)?;
    let consistency = consistency_term(v, e);
    let velocity = mse_loss(e, e_hat)?;
    Ok(KinematicTerms { value, consistency, velocity })
}

/// `1/(Tf-1) · Σ_{t=2..Tf} (v_t - v_{t-1} - e_{t-1})²` for values `v` and
/// velocities `e` with `e.len() == v.len() - 1`.
pub fn consistency_term(v: &[f64], e: &[f64]) -> f64 {
    debug_assert_eq!(e.len() + 1, v.len());
    let s: f64 = v
        .windows(2)
        .zip(e)
        .map(|(w, e)| {
            let r = w[1] - (w[0] + e);
            r * r
        })
        .sum();
    s / e.len() as f64
}

pub fn kinematic_loss(pred: &[f64], target: &[f64], spec: &LossSpec) -> Result<f64, LossError> {
    Ok(kinematic_terms(pred, target, spec.t_future)?.total(spec))
}

/// Loss for one sample according to `spec`.
pub fn sample_loss(pred: &[f64], target: &[f64], spec: &LossSpec) -> Result<f64, LossError> {
    spec.validate()?;
    match spec.kind {
        LossKind::Mse => mse_loss(pred, target),
        LossKind::Kinematic => kinematic_loss(pred, target, spec),
    }
}

/// Mean over samples of the per-sample MSE for `[B, n]` nodes.
pub fn mse_graph(g: &mut Graph, pred: NodeId, target: NodeId) -> NodeId {
    let d = g.sub(pred, target);
    let sq = g.square(d);
    g.mean(sq, None)
}

/// Batch-averaged kinematic loss for `[B, 2Tf-1]` prediction and target nodes.
pub fn kinematic_graph(g: &mut Graph, pred: NodeId, target: NodeId, spec: &LossSpec) -> NodeId {
    let tf = spec.t_future;
    let v = g.slice(pred, 1, 0, tf);
    let v_hat = g.slice(target, 1, 0, tf);
    let value = mse_graph(g, v, v_hat);

    let v_next = g.slice(pred, 1, 1, tf);
    let v_prev = g.slice(pred, 1, 0, tf - 1);
    let e = g.slice(pred, 1, tf, 2 * tf - 1);
    let step = g.add(v_prev, e);
    let resid = g.sub(v_next, step);
    let sq = g.square(resid);
    let mut consistency = g.mean(sq, None);
    if spec.consistency_weight != 1.0 {
        consistency = g.scale(consistency, spec.consistency_weight);
    }
    let mut total = g.add(value, consistency);
    if spec.velocity_supervision {
        let e_hat = g.slice(target, 1, tf, 2 * tf - 1);
        let vel = mse_graph(g, e, e_hat);
        total = g.add(total, vel);
    }
    total
}

/// Loss fragment selected by `spec`.
pub fn loss_graph(g: &mut Graph, pred: NodeId, target: NodeId, spec: &LossSpec) -> NodeId {
    match spec.kind {
        LossKind::Mse => mse_graph(g, pred, target),
        LossKind::Kinematic => kinematic_graph(g, pred, target, spec),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_examples() {
        assert_eq!(mse_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse_loss(&[1.0, 1.0], &[0.0, 2.0]).unwrap(), 1.0);
        assert!(mse_loss(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn two_step_hand_value() {
        let spec = LossSpec::kinematic(2);
        assert_eq!(kinematic_loss(&[0.0, 1.0, 0.0], &[0.0, 1.0, 0.0], &spec).unwrap(), 1.0);
    }

    #[test]
    fn zero_when_consistent_and_exact() {
        let spec = LossSpec::kinematic(3);
        let p = [1.0, 3.0, 2.0, 2.0, -1.0];
        assert_eq!(kinematic_loss(&p, &p, &spec).unwrap(), 0.0);
    }

    #[test]
    fn short_horizon_rejected() {
        assert_eq!(
            kinematic_loss(&[1.0], &[1.0], &LossSpec::kinematic(1)),
            Err(LossError::HorizonTooShort(1))
        );
    }
}
