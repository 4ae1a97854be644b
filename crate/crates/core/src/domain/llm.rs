use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of the served transformer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub n_layers: usize,
    pub hidden_size: usize,
    pub n_params: f64,
    pub bytes_per_param: f64,
}

impl ModelSpec {
    pub fn new(name: &str, n_layers: usize, hidden_size: usize, n_params: f64) -> Self {
        ModelSpec {
            name: name.to_string(),
            n_layers,
            hidden_size,
            n_params,
            bytes_per_param: 2.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 || self.hidden_size == 0 {
            return Err(Error::InvalidInput("model needs at least one layer and a hidden size".into()));
        }
        if !(self.n_params > 0.0 && self.bytes_per_param > 0.0) {
            return Err(Error::InvalidInput("model parameter count and width must be positive".into()));
        }
        Ok(())
    }

    /// Key plus value bytes for one token in one layer at 16-bit precision.
    pub fn kv_bytes_per_token_layer_16bit(&self) -> f64 {
        4.0 * self.hidden_size as f64
    }

    pub fn params_per_layer(&self) -> f64 {
        self.n_params / self.n_layers as f64
    }

    pub fn weight_bytes(&self) -> f64 {
        self.n_params * self.bytes_per_param
    }

    pub fn layer_bytes(&self) -> f64 {
        self.params_per_layer() * self.bytes_per_param
    }
}
