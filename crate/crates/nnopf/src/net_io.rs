//! Network files (JSON).

use nnopf_core::linalg::Matrix;
use nnopf_core::mlp::{MlpNetwork, NetError, Scaler, FORMAT_VERSION};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum NetFileError {
    #[error("invalid network JSON")]
    Json(#[from] serde_json::Error),
    #[error("unsupported network format version {0} (expected {FORMAT_VERSION})")]
    Version(u32),
    #[error("layer {0}: weights/mask length does not match the layer sizes")]
    Shape(usize),
    #[error(transparent)]
    Net(#[from] NetError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalerEntry {
    pub min: Vec<f64>,
    pub range: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetFile {
    pub format_version: u32,
    pub layers: Vec<usize>,
    /// Per layer, `out x in` row-major.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    /// Per layer, `false` for pruned weights.
    pub mask: Vec<Vec<bool>>,
    pub x_scale: ScalerEntry,
    pub y_scale: ScalerEntry,
}

impl From<&MlpNetwork> for NetFile {
    fn from(n: &MlpNetwork) -> Self {
        NetFile {
            format_version: FORMAT_VERSION,
            layers: n.layers.clone(),
            weights: n.weights.iter().map(|w| w.as_slice().to_vec()).collect(),
            biases: n.biases.clone(),
            mask: n.masks.clone(),
            x_scale: ScalerEntry {
                min: n.x_scale.min.clone(),
                range: n.x_scale.range.clone(),
            },
            y_scale: ScalerEntry {
                min: n.y_scale.min.clone(),
                range: n.y_scale.range.clone(),
            },
        }
    }
}

impl TryFrom<NetFile> for MlpNetwork {
    type Error = NetFileError;

    fn try_from(f: NetFile) -> Result<Self, NetFileError> {
        if f.format_version != FORMAT_VERSION {
            return Err(NetFileError::Version(f.format_version));
        }
        if f.layers.len() < 2 || f.weights.len() != f.layers.len() - 1 {
            return Err(NetError::TooFewLayers.into());
        }
        let mut weights = Vec::with_capacity(f.weights.len());
        for (k, w) in f.weights.into_iter().enumerate() {
            let (rows, cols) = (f.layers[k + 1], f.layers[k]);
            if w.len() != rows * cols || f.mask.get(k).map(Vec::len) != Some(rows * cols) {
                return Err(NetFileError::Shape(k));
            }
            weights.push(Matrix::from_row_major(rows, cols, w));
        }
        let net = MlpNetwork {
            layers: f.layers,
            weights,
            biases: f.biases,
            masks: f.mask,
            x_scale: Scaler {
                min: f.x_scale.min,
                range: f.x_scale.range,
            },
            y_scale: Scaler {
                min: f.y_scale.min,
                range: f.y_scale.range,
            },
        };
        net.validate()?;
        Ok(net)
    }
}

pub fn net_to_json(net: &MlpNetwork) -> String {
    let mut s = serde_json::to_string(&NetFile::from(net)).expect("network serializes");
    s.push('\n');
    s
}

pub fn net_from_json(text: &str) -> Result<MlpNetwork, NetFileError> {
    serde_json::from_str::<NetFile>(text)?.try_into()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrong_version_is_rejected() {
        let net = MlpNetwork::random(&[2, 3, 1], 1);
        let text = net_to_json(&net).replace("\"format_version\":1", "\"format_version\":9");
        assert!(matches!(net_from_json(&text), Err(NetFileError::Version(9))));
    }

    #[test]
    fn truncated_weights_are_rejected() {
        let net = MlpNetwork::random(&[2, 3, 1], 1);
        let mut f = NetFile::from(&net);
        f.weights[0].pop();
        let text = serde_json::to_string(&f).unwrap();
        assert!(matches!(net_from_json(&text), Err(NetFileError::Shape(0))));
    }
}
