//! Architectures built as graphs over [`crate::autodiff`], the closed-form
//! linear solver, GMDH growth and the training loop.
//!
//! Every model reads an input named `x` of shape `[B, m]` and produces a
//! prediction node of shape `[B, n]`. Hidden trunks follow the width rule
//! `m → m → 2m+1 → n`.

mod gmdh;
mod linear;
mod nets;
mod snapshot;
mod train;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{inputs, Graph, GraphError, NodeId, ParamStore, Tensor};
use crate::kinloss::{loss_graph, LossError, LossSpec};

pub use gmdh::{grow_gmdh, GmdhLayer, GmdhReport};
pub use linear::{fit_linear_closed_form, lstsq, LstsqSolution};
pub use nets::{build_attention, build_kgate, build_mlp, build_rbf};
pub use snapshot::ModelSnapshot;
pub use train::{train, TrainConfig, TrainReport};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("no training data")]
    EmptyData,
    #[error("training diverged to a non-finite loss at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("snapshot: {0}")]
    Snapshot(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    LinearClosedForm,
    LinearSgd,
    MlpRelu,
    MlpSigmoid,
    MlpTanh,
    Rbf,
    Kgate,
    Gmdh,
    Attention,
}

impl Arch {
    pub const ALL: [Arch; 9] = [
        Arch::LinearClosedForm,
        Arch::LinearSgd,
        Arch::MlpRelu,
        Arch::MlpSigmoid,
        Arch::MlpTanh,
        Arch::Rbf,
        Arch::Kgate,
        Arch::Gmdh,
        Arch::Attention,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Arch::LinearClosedForm => "linear_closed_form",
            Arch::LinearSgd => "linear_sgd",
            Arch::MlpRelu => "mlp_relu",
            Arch::MlpSigmoid => "mlp_sigmoid",
            Arch::MlpTanh => "mlp_tanh",
            Arch::Rbf => "rbf",
            Arch::Kgate => "kgate",
            Arch::Gmdh => "gmdh",
            Arch::Attention => "attention",
        }
    }

    /// Whether the model is fitted by gradient descent after construction.
    pub fn is_trainable(self) -> bool {
        self != Arch::LinearClosedForm
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Arch {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let arch = match s.trim().to_ascii_lowercase().as_str() {
            "linear_closed_form" | "linear" => Arch::LinearClosedForm,
            "linear_sgd" => Arch::LinearSgd,
            "mlp_relu" | "relu" => Arch::MlpRelu,
            "mlp_sigmoid" | "sigmoid" => Arch::MlpSigmoid,
            "mlp_tanh" | "tanh" => Arch::MlpTanh,
            "rbf" => Arch::Rbf,
            "kgate" => Arch::Kgate,
            "gmdh" => Arch::Gmdh,
            "attention" => Arch::Attention,
            other => return Err(ModelError::Config(format!("unknown architecture `{other}`"))),
        };
        Ok(arch)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArchParams {
    /// RBF unit count; `None` means `2m+1`.
    pub rbf_centers: Option<usize>,
    /// GMDH neurons kept per layer; `None` means `2m+1`.
    pub gmdh_select_k: Option<usize>,
    pub gmdh_max_layers: usize,
    pub gmdh_candidate_cap: usize,
    pub gmdh_candidate_epochs: usize,
    pub gmdh_validation_fraction: f64,
    /// Token width for attention.
    pub attention_width: usize,
}

impl Default for ArchParams {
    fn default() -> Self {
        Self {
            rbf_centers: None,
            gmdh_select_k: None,
            gmdh_max_layers: 4,
            gmdh_candidate_cap: 2000,
            gmdh_candidate_epochs: 300,
            gmdh_validation_fraction: 0.2,
            attention_width: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: Arch,
    pub input_dim: usize,
    pub output_dim: usize,
    pub kinematic: bool,
    pub normalize: bool,
    pub seed: u64,
    pub arch_params: ArchParams,
}

impl ModelConfig {
    /// Dimensions derived from the window geometry.
    pub fn for_windows(arch: Arch, t_past: usize, t_future: usize, kinematic: bool, normalize: bool, seed: u64) -> Self {
        let (m, n) = if kinematic { (2 * t_past - 1, 2 * t_future - 1) } else { (t_past, t_future) };
        Self { arch, input_dim: m, output_dim: n, kinematic, normalize, seed, arch_params: ArchParams::default() }
    }

    pub fn new(arch: Arch, input_dim: usize, output_dim: usize, seed: u64) -> Self {
        Self {
            arch,
            input_dim,
            output_dim,
            kinematic: false,
            normalize: false,
            seed,
            arch_params: ArchParams::default(),
        }
    }

    pub fn hidden_sizes(&self) -> (usize, usize) {
        (self.input_dim, 2 * self.input_dim + 1)
    }

    pub fn rbf_centers(&self) -> usize {
        self.arch_params.rbf_centers.unwrap_or(2 * self.input_dim + 1)
    }

    pub fn gmdh_select_k(&self) -> usize {
        self.arch_params.gmdh_select_k.unwrap_or(2 * self.input_dim + 1)
    }

    pub(crate) fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }

    pub(crate) fn check(&self) -> Result<(), ModelError> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(ModelError::Config("input and output dims must be positive".into()));
        }
        Ok(())
    }
}

/// A parameterized prediction graph with its dimension metadata.
#[derive(Debug, Clone)]
pub struct ModelHandle {
    pub config: ModelConfig,
    pub graph: Graph,
    pub params: ParamStore,
    /// `[B, m]` input node, bound under the name `x`.
    pub input: NodeId,
    /// `[B, n]` prediction node.
    pub prediction: NodeId,
    /// Attention weight nodes `[B, L, L]` (attention only).
    pub attention_nodes: Vec<NodeId>,
    /// Grown layer structure (GMDH only).
    pub gmdh_layers: Vec<GmdhLayer>,
}

pub(crate) const INPUT: &str = "x";
pub(crate) const TARGET: &str = "y";

impl ModelHandle {
    pub(crate) fn new(config: ModelConfig, graph: Graph, params: ParamStore, input: NodeId, prediction: NodeId) -> Self {
        Self { config, graph, params, input, prediction, attention_nodes: Vec::new(), gmdh_layers: Vec::new() }
    }

    pub fn parameter_count(&self) -> usize {
        self.params.scalar_count()
    }

    /// Copy of the prediction graph extended with a target input `y` and the
    /// loss selected by `spec` as its output.
    pub fn loss_graph(&self, spec: &LossSpec) -> Result<Graph, ModelError> {
        spec.validate()?;
        if spec.width() != self.config.output_dim {
            return Err(ModelError::Dimension { expected: self.config.output_dim, got: spec.width() });
        }
        let mut g = self.graph.clone();
        let y = g.input(TARGET);
        let loss = loss_graph(&mut g, self.prediction, y, spec);
        g.set_output(loss);
        Ok(g)
    }

    pub fn predict_batch(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, ModelError> {
        if rows.is_empty() {
            return Ok(Vec::new());
        }
        let x = batch_tensor(rows, self.config.input_dim)?;
        let out = self.graph.evaluate_node(self.prediction, &inputs([(INPUT, x)]), &self.params)?;
        Ok(out.rows().map(<[f64]>::to_vec).collect())
    }
}

/// Deterministic forward pass for one input vector.
pub fn predict(model: &ModelHandle, input: &[f64]) -> Result<Vec<f64>, ModelError> {
    let mut out = model.predict_batch(&[input.to_vec()])?;
    Ok(out.pop().expect("one row"))
}

pub(crate) fn batch_tensor(rows: &[Vec<f64>], width: usize) -> Result<Tensor, ModelError> {
    let mut data = Vec::with_capacity(rows.len() * width);
    for r in rows {
        if r.len() != width {
            return Err(ModelError::Dimension { expected: width, got: r.len() });
        }
        data.extend_from_slice(r);
    }
    Ok(Tensor::new(vec![rows.len(), width], data)?)
}

/// Build an untrained model. `train_inputs` seeds data-dependent
/// initializations (RBF centers); GMDH and the closed-form fit need targets
/// and go through [`fit_model`].
pub fn build_model(config: &ModelConfig, train_inputs: Option<&[Vec<f64>]>) -> Result<ModelHandle, ModelError> {
    config.check()?;
    match config.arch {
        Arch::LinearSgd | Arch::MlpRelu | Arch::MlpSigmoid | Arch::MlpTanh => build_mlp(config),
        Arch::Rbf => build_rbf(config, train_inputs),
        Arch::Kgate => build_kgate(config),
        Arch::Attention => build_attention(config),
        Arch::LinearClosedForm | Arch::Gmdh => Err(ModelError::Config(format!(
            "{} is constructed from data; use fit_model",
            config.arch
        ))),
    }
}

/// Construct and fit a model on `(inputs, targets)` in the way its
/// architecture prescribes: closed form, GMDH growth followed by gradient
/// fine-tuning, or gradient training from a seeded initialization.
pub fn fit_model(
    config: &ModelConfig,
    train_inputs: &[Vec<f64>],
    train_targets: &[Vec<f64>],
    train_cfg: &TrainConfig,
) -> Result<(ModelHandle, Option<TrainReport>), ModelError> {
    match config.arch {
        Arch::LinearClosedForm => Ok((fit_linear_closed_form(config, train_inputs, train_targets)?, None)),
        Arch::Gmdh => {
            let (mut model, _) = grow_gmdh(config, train_inputs, train_targets)?;
            let report = train(&mut model, train_inputs, train_targets, train_cfg)?;
            Ok((model, Some(report)))
        }
        _ => {
            let mut model = build_model(config, Some(train_inputs))?;
            let report = train(&mut model, train_inputs, train_targets, train_cfg)?;
            Ok((model, Some(report)))
        }
    }
}
