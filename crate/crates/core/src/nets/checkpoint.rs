use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{NetConfig, Network};
use super::Matrix;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedParam {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

/// Serialized network plus caller metadata (e.g. the agent configuration).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub seed: u64,
    pub config: NetConfig,
    pub meta: serde_json::Value,
    pub params: Vec<NamedParam>,
}

impl Checkpoint {
    pub fn from_network(net: &Network, meta: serde_json::Value) -> Self {
        let store = net.store();
        let params = store
            .slices()
            .iter()
            .map(|s| NamedParam {
                name: s.name.clone(),
                rows: s.rows,
                cols: s.cols,
                values: store.data()[s.offset..s.offset + s.rows * s.cols].to_vec(),
            })
            .collect();
        Checkpoint {
            version: CHECKPOINT_VERSION,
            seed: net.seed(),
            config: net.config().clone(),
            meta,
            params,
        }
    }

    /// Rebuilds the network; every parameter must be present with its shape.
    pub fn to_network(&self) -> Result<Network> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint version {}",
                self.version
            )));
        }
        let mut net = Network::new(self.config.clone(), self.seed)?;
        let layout = net.store().slices().to_vec();
        if layout.len() != self.params.len() {
            return Err(Error::Config(format!(
                "checkpoint has {} parameter blocks, network expects {}",
                self.params.len(),
                layout.len()
            )));
        }
        for (slot, p) in layout.iter().zip(&self.params) {
            if slot.name != p.name || slot.rows != p.rows || slot.cols != p.cols || p.values.len() != p.rows * p.cols {
                return Err(Error::Config(format!(
                    "checkpoint block {} ({}x{}) does not match {} ({}x{})",
                    p.name, p.rows, p.cols, slot.name, slot.rows, slot.cols
                )));
            }
            net.store_mut().data_mut()[slot.offset..slot.offset + p.values.len()]
                .copy_from_slice(&p.values);
        }
        Ok(net)
    }

    pub fn param(&self, name: &str) -> Option<Matrix> {
        self.params
            .iter()
            .find(|p| p.name == name)
            .map(|p| Matrix::from_vec(p.rows, p.cols, p.values.clone()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
