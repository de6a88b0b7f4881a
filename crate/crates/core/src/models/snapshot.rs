//! JSON parameter dump with a config header.
//!
//! ```json
//! { "config": { "arch": "kgate", "input_dim": 59, ... },
//!   "gmdh_layers": [],
//!   "params": [ { "name": "kg0.trunk.w", "shape": [59, 59], "data": [...] }, ... ] }
//! ```

use serde::{Deserialize, Serialize};

use super::gmdh::assemble;
use super::{build_model, Arch, GmdhLayer, ModelConfig, ModelError, ModelHandle, INPUT};
use crate::autodiff::{Graph, ParamStore, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSnapshot {
    pub config: ModelConfig,
    #[serde(default)]
    pub gmdh_layers: Vec<GmdhLayer>,
    pub params: Vec<NamedTensor>,
}

impl ModelSnapshot {
    pub fn capture(model: &ModelHandle) -> Self {
        let params = model
            .params
            .iter()
            .map(|(name, t)| NamedTensor { name: name.to_string(), shape: t.shape().to_vec(), data: t.data().to_vec() })
            .collect();
        Self { config: model.config, gmdh_layers: model.gmdh_layers.clone(), params }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("snapshot serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, ModelError> {
        serde_json::from_str(s).map_err(|e| ModelError::Snapshot(e.to_string()))
    }

    fn store(&self) -> Result<ParamStore, ModelError> {
        let mut store = ParamStore::new();
        for p in &self.params {
            store.add(p.name.clone(), Tensor::new(p.shape.clone(), p.data.clone())?);
        }
        Ok(store)
    }

    /// Rebuild the model with the stored parameter values.
    pub fn restore(&self) -> Result<ModelHandle, ModelError> {
        match self.config.arch {
            Arch::Gmdh => assemble(&self.config, self.store()?, &self.gmdh_layers),
            Arch::LinearClosedForm => {
                let params = self.store()?;
                let find = |n: &str| params.id(n).ok_or_else(|| ModelError::Snapshot(format!("missing parameter {n}")));
                let (w, b) = (find("linear.w")?, find("linear.b")?);
                let mut g = Graph::new();
                let x = g.input(INPUT);
                let y = g.affine(x, w, b);
                g.set_output(y);
                Ok(ModelHandle::new(self.config, g, params, x, y))
            }
            _ => {
                let mut model = build_model(&self.config, None)?;
                if model.params.len() != self.params.len() {
                    return Err(ModelError::Snapshot(format!(
                        "expected {} parameters, found {}",
                        model.params.len(),
                        self.params.len()
                    )));
                }
                for p in &self.params {
                    let id = model
                        .params
                        .id(&p.name)
                        .ok_or_else(|| ModelError::Snapshot(format!("unknown parameter {}", p.name)))?;
                    model.params.set(id, Tensor::new(p.shape.clone(), p.data.clone())?)?;
                }
                Ok(model)
            }
        }
    }
}
