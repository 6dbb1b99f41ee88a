//! Seeded synthetic measurement campaigns.
//!
//! Each synthetic run draws i.i.d. Gaussian per-slot power, truncated at
//! zero, for as many slots as it takes the expected integrated energy to
//! match the model energy of the layer under a device profile.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::arch::{ConvLayerSpec, FcLayerSpec, LayerSpec};
use crate::error::{Error, Result};
use crate::estimate::layer_energy;
use crate::profile::DeviceProfile;
use crate::trace::{PowerTrace, TraceManifest, DEFAULT_DELTA_S};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthParams {
    pub n_runs: u64,
    pub mean_power_mw: f64,
    pub power_std_mw: f64,
    pub delta_s: f64,
    pub seed: u64,
}

impl SynthParams {
    fn validate(&self) -> Result<()> {
        if self.n_runs == 0 {
            return Err(Error::InvalidInput("n_runs must be at least 1".into()));
        }
        if !(self.mean_power_mw.is_finite() && self.mean_power_mw > 0.0) {
            return Err(Error::InvalidInput(format!("mean power must be positive, got {}", self.mean_power_mw)));
        }
        if !(self.power_std_mw.is_finite() && self.power_std_mw >= 0.0) {
            return Err(Error::InvalidInput(format!("power std must be non-negative, got {}", self.power_std_mw)));
        }
        if !(self.delta_s.is_finite() && self.delta_s > 0.0) {
            return Err(Error::InvalidInput(format!("delta_s must be positive, got {}", self.delta_s)));
        }
        Ok(())
    }
}

/// Slots needed for `energy_j` at `power_mw`, at least one.
pub fn slot_count(energy_j: f64, power_mw: f64, delta_s: f64) -> u64 {
    ((energy_j / (power_mw * 1e-3 * delta_s)).round() as u64).max(1)
}

fn model_energy(config: &LayerSpec, profile: &DeviceProfile) -> Result<f64> {
    let (_, energy) = layer_energy(config, profile)?;
    if !(energy.is_finite() && energy > 0.0) {
        return Err(Error::InvalidInput(format!("model energy of the config must be positive, got {energy}")));
    }
    Ok(energy)
}

/// Synthesizes `n_runs` power traces for one configuration.
pub fn synthesize_traces(
    config_id: &str,
    config: &LayerSpec,
    profile: &DeviceProfile,
    params: &SynthParams,
) -> Result<Vec<PowerTrace>> {
    params.validate()?;
    let energy = model_energy(config, profile)?;
    let slots = slot_count(energy, params.mean_power_mw, params.delta_s) as usize;
    let normal = Normal::new(params.mean_power_mw, params.power_std_mw)
        .map_err(|e| Error::InvalidInput(format!("power distribution: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    Ok((0..params.n_runs)
        .map(|run_id| PowerTrace {
            config_id: config_id.to_owned(),
            run_id,
            samples: (0..slots).map(|_| draw_non_negative(&normal, &mut rng)).collect(),
        })
        .collect())
}

// Rejection sampling keeps the draw a truncated normal rather than a clamped one.
fn draw_non_negative<R: Rng>(normal: &Normal<f64>, rng: &mut R) -> f64 {
    loop {
        let p = normal.sample(rng);
        if p >= 0.0 {
            return p;
        }
    }
}

/// Layer grid of a calibration campaign.
#[derive(Debug, Clone, PartialEq)]
pub struct CampaignGrid {
    pub ofms: Vec<u64>,
    pub conv_i_sizes: Vec<u64>,
    pub ifm: u64,
    pub ksize: u64,
    pub stride: u64,
    /// `(i_size, o_size)` of each FC config.
    pub fc_shapes: Vec<(u64, u64)>,
}

impl Default for CampaignGrid {
    /// `ofm` over the powers of two 1..=512, three input sizes per `ofm`,
    /// and four FC shapes.
    fn default() -> Self {
        CampaignGrid {
            ofms: (0..10).map(|k| 1u64 << k).collect(),
            conv_i_sizes: vec![32, 48, 64],
            ifm: 32,
            ksize: 3,
            stride: 1,
            fc_shapes: vec![(1024, 1024), (2048, 1024), (2048, 2048), (4096, 2048)],
        }
    }
}

impl CampaignGrid {
    pub fn configs(&self) -> Result<BTreeMap<String, LayerSpec>> {
        let mut configs = BTreeMap::new();
        for &ofm in &self.ofms {
            for &i in &self.conv_i_sizes {
                let layer = ConvLayerSpec::new(i, self.ifm, ofm, self.ksize, self.stride)?;
                configs.insert(format!("conv-o{ofm:04}-i{i:04}"), LayerSpec::conv2d(layer));
            }
        }
        for &(i, o) in &self.fc_shapes {
            configs.insert(format!("fc-i{i:05}-o{o:05}"), LayerSpec::fc(FcLayerSpec::new(i, o)?));
        }
        if configs.is_empty() {
            return Err(Error::InvalidInput("campaign grid is empty".into()));
        }
        Ok(configs)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignSettings {
    pub n_runs: u64,
    /// Target board power; each config's mean power is nudged from it so
    /// that a whole number of slots carries exactly the model energy.
    pub nominal_power_mw: f64,
    /// Per-slot standard deviation as a fraction of the mean power.
    pub power_std_frac: f64,
    pub delta_s: f64,
    pub seed: u64,
}

impl Default for CampaignSettings {
    fn default() -> Self {
        CampaignSettings {
            n_runs: 50,
            nominal_power_mw: 5000.0,
            power_std_frac: 0.05,
            delta_s: DEFAULT_DELTA_S,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Campaign {
    pub manifest: TraceManifest,
    /// Sorted by `(config_id, run_id)`, ready to be written as a trace CSV.
    pub traces: Vec<PowerTrace>,
}

/// Generates a full synthetic campaign for `profile` over `grid`.
pub fn generate_campaign(
    profile: &DeviceProfile,
    grid: &CampaignGrid,
    settings: &CampaignSettings,
) -> Result<Campaign> {
    if !(settings.power_std_frac.is_finite() && settings.power_std_frac >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "power std fraction must be non-negative, got {}",
            settings.power_std_frac
        )));
    }
    let configs = grid.configs()?;
    let manifest = TraceManifest::new(profile.device_id.clone(), settings.delta_s, configs)?;
    let mut traces = Vec::new();
    for (index, (id, layer)) in manifest.configs.iter().enumerate() {
        let energy = model_energy(layer, profile).map_err(|e| match e {
            Error::Uncalibrated { device_id, .. } => Error::Uncalibrated { index, device_id },
            other => other,
        })?;
        let slots = slot_count(energy, settings.nominal_power_mw, settings.delta_s);
        let mean_power_mw = energy / (slots as f64 * 1e-3 * settings.delta_s);
        let params = SynthParams {
            n_runs: settings.n_runs,
            mean_power_mw,
            power_std_mw: settings.power_std_frac * mean_power_mw,
            delta_s: settings.delta_s,
            seed: settings.seed.wrapping_add(index as u64),
        };
        traces.extend(synthesize_traces(id, layer, profile, &params)?);
    }
    Ok(Campaign { manifest, traces })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::bundled_profile;
    use crate::trace::{integrate_run, power_histogram};

    fn params(std: f64, seed: u64) -> SynthParams {
        SynthParams { n_runs: 5, mean_power_mw: 5000.0, power_std_mw: std, delta_s: 1e-4, seed }
    }

    fn conv() -> LayerSpec {
        LayerSpec::conv2d(ConvLayerSpec::new(32, 16, 64, 3, 1).unwrap())
    }

    #[test]
    fn noiseless_runs_integrate_to_model_energy() {
        let tx2 = bundled_profile("jetson-tx2").unwrap();
        let expected = 4.470_211_929_6e-3;
        let quantum = 5000.0 * 1e-3 * 1e-4;
        for t in synthesize_traces("c", &conv(), &tx2, &params(0.0, 1)).unwrap() {
            let e = integrate_run(&t, 1e-4).unwrap().energy_j;
            assert!((e - expected).abs() <= quantum, "{e}");
        }
    }

    #[test]
    fn same_seed_same_traces() {
        let nx = bundled_profile("jetson-xavier-nx").unwrap();
        let a = synthesize_traces("c", &conv(), &nx, &params(250.0, 42)).unwrap();
        let b = synthesize_traces("c", &conv(), &nx, &params(250.0, 42)).unwrap();
        assert_eq!(a, b);
        let c = synthesize_traces("c", &conv(), &nx, &params(250.0, 43)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn fc_needs_calibrated_profile() {
        let tx2 = bundled_profile("jetson-tx2").unwrap();
        let fc = LayerSpec::fc(FcLayerSpec::new(100, 100).unwrap());
        let err = synthesize_traces("f", &fc, &tx2, &params(0.0, 0)).unwrap_err();
        assert!(err.is_calibration_gap());
    }

    #[test]
    fn gaussian_runs_match_generator_moments() {
        // One slot per run, so each run's average power is a single draw.
        let nx = bundled_profile("jetson-xavier-nx").unwrap();
        let p = SynthParams { n_runs: 10_000, mean_power_mw: 5500.0, power_std_mw: 200.0, delta_s: 1.0, seed: 7 };
        let runs: Vec<_> = synthesize_traces("c", &conv(), &nx, &p)
            .unwrap()
            .iter()
            .map(|t| integrate_run(t, p.delta_s).unwrap())
            .collect();
        let h = power_histogram(&runs, 60).unwrap();
        let width = h.bin_width_mw;
        let mean: f64 = h.bins.iter().map(|(c, f)| c * f * width).sum();
        let var: f64 = h.bins.iter().map(|(c, f)| (c - mean).powi(2) * f * width).sum();
        assert!((mean - 5500.0).abs() / 5500.0 < 0.02, "{mean}");
        assert!((var.sqrt() - 200.0).abs() / 200.0 < 0.02, "{}", var.sqrt());
    }

    #[test]
    fn campaign_power_is_adjusted_to_whole_slots() {
        let nx = bundled_profile("jetson-xavier-nx").unwrap();
        let settings = CampaignSettings { n_runs: 1, power_std_frac: 0.0, ..CampaignSettings::default() };
        let campaign = generate_campaign(&nx, &CampaignGrid::default(), &settings).unwrap();
        assert_eq!(campaign.manifest.configs.len(), 34);
        for t in &campaign.traces {
            let layer = &campaign.manifest.configs[&t.config_id];
            let (_, model) = layer_energy(layer, &nx).unwrap();
            let e = integrate_run(t, settings.delta_s).unwrap().energy_j;
            assert!((e - model).abs() <= 1e-12 * model, "{} {e} {model}", t.config_id);
        }
        let ids: Vec<_> = campaign.traces.iter().map(|t| t.config_id.clone()).collect();
        let mut sorted = ids.clone();
        sorted.sort();
        assert_eq!(ids, sorted);
    }
}
