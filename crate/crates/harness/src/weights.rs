//! Network snapshots as JSON: the dataset, the architecture string and every
//! layer's forward and feedback weights.

use std::path::Path;

use qagrel_core::{Layer, LayerWeights, Network};
use qagrel_data::DatasetId;
use serde::{Deserialize, Serialize};

use crate::arch::parse_architecture;
use crate::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub dataset: DatasetId,
    pub architecture: String,
    pub weights: Vec<LayerWeights>,
}

impl Snapshot {
    pub fn of(net: &Network, dataset: DatasetId, architecture: &str) -> Self {
        Self {
            dataset,
            architecture: architecture.to_string(),
            weights: net.layers().iter().map(|l| l.weights.clone()).collect(),
        }
    }

    pub fn into_network(self) -> Result<Network> {
        let specs = parse_architecture(&self.architecture, &self.dataset.image_shape(), self.dataset.num_classes())?;
        if specs.len() != self.weights.len() {
            return Err(HarnessError::Config(format!(
                "snapshot has {} layers, architecture {:?} has {}",
                self.weights.len(),
                self.architecture,
                specs.len()
            )));
        }
        let layers = specs
            .into_iter()
            .zip(self.weights)
            .map(|(spec, weights)| Layer { spec, weights })
            .collect();
        Ok(Network::new(layers)?)
    }
}

pub fn save(path: &Path, snapshot: &Snapshot) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| HarnessError::io(format!("creating {}", path.display()), e))?;
    serde_json::to_writer(std::io::BufWriter::new(file), snapshot).map_err(|e| HarnessError::Other(e.to_string()))
}

pub fn load(path: &Path) -> Result<Snapshot> {
    let file = std::fs::File::open(path).map_err(|e| HarnessError::io(format!("opening {}", path.display()), e))?;
    serde_json::from_reader(std::io::BufReader::new(file))
        .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
}
