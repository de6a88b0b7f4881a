use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{batch_tensor, ModelError, ModelHandle, INPUT, TARGET};
use crate::autodiff::{inputs, AdamConfig, GraphError};
use crate::kinloss::LossSpec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub loss: LossSpec,
}

impl TrainConfig {
    pub fn new(loss: LossSpec) -> Self {
        Self { epochs: 1000, batch_size: 32, adam: AdamConfig::default(), loss }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean batch loss per epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: u64,
}

impl TrainReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.epoch_losses.last().copied()
    }
}

/// Mini-batch adam on `(inputs, targets)`. Each epoch visits the samples in a
/// seeded shuffled order; with fewer samples than the batch size every epoch
/// is a single full-batch step.
pub fn train(
    model: &mut ModelHandle,
    train_inputs: &[Vec<f64>],
    train_targets: &[Vec<f64>],
    cfg: &TrainConfig,
) -> Result<TrainReport, ModelError> {
    if train_inputs.is_empty() {
        return Err(ModelError::EmptyData);
    }
    if train_inputs.len() != train_targets.len() {
        return Err(ModelError::Dimension { expected: train_inputs.len(), got: train_targets.len() });
    }
    if cfg.batch_size == 0 {
        return Err(ModelError::Config("batch size must be positive".into()));
    }
    let graph = model.loss_graph(&cfg.loss)?;
    let (m, n) = (model.config.input_dim, model.config.output_dim);
    let mut rng = ChaCha8Rng::seed_from_u64(model.config.seed ^ 0x5eed_5eed_5eed_5eed);
    let mut order: Vec<usize> = (0..train_inputs.len()).collect();
    let full = if train_inputs.len() <= cfg.batch_size {
        Some((batch_tensor(train_inputs, m)?, batch_tensor(train_targets, n)?))
    } else {
        None
    };
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut total = 0.0;
        let mut batches = 0usize;
        let mut step = |x, y| -> Result<(), ModelError> {
            let feed = inputs([(INPUT, x), (TARGET, y)]);
            let (loss, grads) = match graph.gradients(&feed, &model.params) {
                Ok(r) => r,
                Err(GraphError::NonFinite { .. }) => return Err(ModelError::Diverged { epoch }),
                Err(e) => return Err(e.into()),
            };
            if !loss.is_finite() || !grads.all_finite() {
                return Err(ModelError::Diverged { epoch });
            }
            model.params.adam_step(&grads, &cfg.adam)?;
            total += loss;
            batches += 1;
            Ok(())
        };
        match &full {
            Some((x, y)) => step(x.clone(), y.clone())?,
            None => {
                order.shuffle(&mut rng);
                for chunk in order.chunks(cfg.batch_size) {
                    let xs: Vec<Vec<f64>> = chunk.iter().map(|&i| train_inputs[i].clone()).collect();
                    let ys: Vec<Vec<f64>> = chunk.iter().map(|&i| train_targets[i].clone()).collect();
                    step(batch_tensor(&xs, m)?, batch_tensor(&ys, n)?)?;
                }
            }
        }
        epoch_losses.push(total / batches as f64);
    }
    Ok(TrainReport { epoch_losses, steps: model.params.step_count() })
}
