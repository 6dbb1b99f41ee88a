//! Per-layer and whole-network energy estimates.

use serde::{Deserialize, Serialize};

use crate::arch::{
    clf, kclc_exact, ConvLayerSpec, FcLayerSpec, LayerKind, LayerShape, LayerSpec, LoadMode, MacCount, NetworkArch,
};
use crate::error::{Error, Result};
use crate::profile::DeviceProfile;

/// Energy of a convolution: `kclc · (a_c + b_c · ofm)` joules.
pub fn energy_conv2d(layer: &ConvLayerSpec, profile: &DeviceProfile) -> Result<f64> {
    let kclc = kclc_exact(layer)? as f64;
    Ok(kclc * (profile.a_c + profile.b_c * layer.ofm as f64))
}

/// Energy of a fully connected layer: `clf · a_f` joules.
pub fn energy_fc(layer: &FcLayerSpec, profile: &DeviceProfile) -> Result<f64> {
    let a_f = profile.a_f.ok_or_else(|| Error::Uncalibrated { index: 0, device_id: profile.device_id.clone() })?;
    Ok(clf(layer)? as f64 * a_f)
}

/// Load and energy of any layer. Skipped layers cost nothing.
pub fn layer_energy(layer: &LayerSpec, profile: &DeviceProfile) -> Result<(u64, f64)> {
    let load = match layer.load(LoadMode::Exact)? {
        MacCount::Exact(n) => n,
        MacCount::Approx(_) => unreachable!("exact mode yields integer loads"),
    };
    let energy = match &layer.shape {
        LayerShape::Fc(fc) => energy_fc(fc, profile)?,
        LayerShape::Conv2d(conv) => energy_conv2d(conv, profile)?,
        LayerShape::Skipped { .. } => 0.0,
    };
    Ok((load, energy))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEnergy {
    pub index: usize,
    pub kind: LayerKind,
    pub load: u64,
    pub energy_j: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkEstimate {
    pub network_name: String,
    pub device_id: String,
    pub per_layer: Vec<LayerEnergy>,
    pub total_j: f64,
}

#[derive(Serialize, Deserialize)]
struct EstimateReport {
    network: String,
    device_id: String,
    total_j: f64,
    layers: Vec<LayerEnergy>,
    cumulative: Vec<f64>,
}

impl Serialize for NetworkEstimate {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        EstimateReport {
            network: self.network_name.clone(),
            device_id: self.device_id.clone(),
            total_j: self.total_j,
            layers: self.per_layer.clone(),
            cumulative: cumulative_profile(self).into_iter().map(|(_, e)| e).collect(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for NetworkEstimate {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let r = EstimateReport::deserialize(deserializer)?;
        Ok(NetworkEstimate { network_name: r.network, device_id: r.device_id, per_layer: r.layers, total_j: r.total_j })
    }
}

/// Estimates every layer in order and accumulates the total in the same order.
pub fn estimate_network(arch: &NetworkArch, profile: &DeviceProfile) -> Result<NetworkEstimate> {
    let mut per_layer = Vec::with_capacity(arch.layers.len());
    let mut total_j = 0.0;
    for (index, layer) in arch.layers.iter().enumerate() {
        let (load, energy_j) = layer_energy(layer, profile).map_err(|e| match e {
            Error::Uncalibrated { device_id, .. } => Error::Uncalibrated { index, device_id },
            other => Error::NotEstimable { index, reason: other.to_string() },
        })?;
        total_j += energy_j;
        per_layer.push(LayerEnergy { index, kind: layer.kind(), load, energy_j });
    }
    Ok(NetworkEstimate { network_name: arch.name.clone(), device_id: profile.device_id.clone(), per_layer, total_j })
}

/// Running energy after each layer. The last entry equals `total_j`.
pub fn cumulative_profile(estimate: &NetworkEstimate) -> Vec<(usize, f64)> {
    let mut acc = 0.0;
    estimate
        .per_layer
        .iter()
        .map(|l| {
            acc += l.energy_j;
            (l.index, acc)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum ComparisonOutcome {
    Estimated {
        total_j: f64,
        /// Layer energy relative to the reference device, per layer.
        layer_ratios: Vec<f64>,
    },
    Blocked {
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub device_id: String,
    #[serde(flatten)]
    pub outcome: ComparisonOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviceComparison {
    pub network: String,
    /// First device able to estimate the whole network; ratios are relative to it.
    pub reference_device: Option<String>,
    pub rows: Vec<ComparisonRow>,
}

pub fn compare_devices(arch: &NetworkArch, profiles: &[DeviceProfile]) -> Result<DeviceComparison> {
    if profiles.is_empty() {
        return Err(Error::InvalidInput("no device profiles to compare".into()));
    }
    let estimates: Vec<_> = profiles.iter().map(|p| (p, estimate_network(arch, p))).collect();
    let reference = estimates.iter().find_map(|(_, e)| e.as_ref().ok());
    let rows = estimates
        .iter()
        .map(|(p, est)| {
            let outcome = match (est, reference) {
                (Ok(est), Some(reference)) => ComparisonOutcome::Estimated {
                    total_j: est.total_j,
                    layer_ratios: est
                        .per_layer
                        .iter()
                        .zip(&reference.per_layer)
                        .map(|(l, r)| if l.energy_j == r.energy_j { 1.0 } else { l.energy_j / r.energy_j })
                        .collect(),
                },
                (Err(e), _) => ComparisonOutcome::Blocked { reason: e.to_string() },
                (Ok(_), None) => unreachable!("a successful estimate is its own reference"),
            };
            ComparisonRow { device_id: p.device_id.clone(), outcome }
        })
        .collect();
    Ok(DeviceComparison { network: arch.name.clone(), reference_device: reference.map(|r| r.device_id.clone()), rows })
}
