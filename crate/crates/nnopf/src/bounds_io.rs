//! Cache of tightened neuron bounds keyed by a fingerprint of the network,
//! the domain and the tightening settings.

use std::path::Path;

use nnopf_core::dataset::InputDomain;
use nnopf_core::encode::{BoundSource, NeuronBound, NeuronBounds};
use nnopf_core::mlp::MlpNetwork;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data_io::DomainEntry;
use crate::fsutil::write_atomic;
use crate::net_io::net_to_json;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoundEntry {
    lo: f64,
    hi: f64,
    source: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoundsFile {
    fingerprint: String,
    layers: Vec<Vec<BoundEntry>>,
}

/// SHA-256 over the network file, the domain and a settings tag.
pub fn fingerprint(net: &MlpNetwork, domain: &InputDomain, settings: &str) -> String {
    let mut h = Sha256::new();
    h.update(net_to_json(net).as_bytes());
    h.update(
        serde_json::to_string(&DomainEntry::from(domain))
            .expect("domain serializes")
            .as_bytes(),
    );
    h.update(settings.as_bytes());
    format!("{:x}", h.finalize())
}

pub fn write_bounds(path: &Path, fingerprint: &str, bounds: &NeuronBounds) -> anyhow::Result<()> {
    let file = BoundsFile {
        fingerprint: fingerprint.to_string(),
        layers: bounds
            .layers
            .iter()
            .map(|l| {
                l.iter()
                    .map(|b| BoundEntry {
                        lo: b.lo,
                        hi: b.hi,
                        source: b.source.as_str().to_string(),
                    })
                    .collect()
            })
            .collect(),
    };
    write_atomic(path, serde_json::to_string(&file)?.as_bytes())
}

/// Cached bounds if the file exists and its fingerprint matches.
pub fn read_bounds(path: &Path, fingerprint: &str) -> Option<NeuronBounds> {
    let text = std::fs::read_to_string(path).ok()?;
    let file: BoundsFile = match serde_json::from_str(&text) {
        Ok(f) => f,
        Err(e) => {
            log::warn!("{}: unreadable bounds cache ({e}); recomputing", path.display());
            return None;
        }
    };
    if file.fingerprint != fingerprint {
        log::info!("{}: stale bounds cache; recomputing", path.display());
        return None;
    }
    let layers = file
        .layers
        .into_iter()
        .map(|l| {
            l.into_iter()
                .map(|b| {
                    Some(NeuronBound {
                        lo: b.lo,
                        hi: b.hi,
                        source: BoundSource::parse(&b.source)?,
                    })
                })
                .collect::<Option<Vec<_>>>()
        })
        .collect::<Option<Vec<_>>>()?;
    Some(NeuronBounds { layers })
}
