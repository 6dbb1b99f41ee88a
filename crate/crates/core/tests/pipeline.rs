mod support;

use edgewatt::calibrate::{calibrate, fit_fc};
use edgewatt::estimate::{cumulative_profile, estimate_network};
use edgewatt::profile::{bundled_profile, DeviceProfile};
use edgewatt::synth::{generate_campaign, synthesize_traces, CampaignGrid, CampaignSettings, SynthParams};
use edgewatt::trace::{aggregate_config, integrate_run, process_traces, write_traces, ConfigEnergyStats};
use edgewatt::{ConvLayerSpec, FcLayerSpec, LayerSpec, NetworkArch};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use support::oracle::rel_err;

fn run_campaign(profile: &DeviceProfile, settings: &CampaignSettings) -> edgewatt::calibrate::Calibration {
    let campaign = generate_campaign(profile, &CampaignGrid::default(), settings).unwrap();
    let mut csv = Vec::new();
    write_traces(&mut csv, &campaign.traces).unwrap();
    let stats = process_traces(csv.as_slice(), &campaign.manifest, 0.0).unwrap();
    calibrate(&stats, &campaign.manifest, &profile.device_id).unwrap()
}

#[test]
fn noiseless_campaign_recovers_tx2() {
    let tx2 = bundled_profile("jetson-tx2").unwrap();
    let grid = CampaignGrid { fc_shapes: vec![], ..CampaignGrid::default() };
    let settings = CampaignSettings { n_runs: 3, power_std_frac: 0.0, ..CampaignSettings::default() };
    let campaign = generate_campaign(&tx2, &grid, &settings).unwrap();
    let mut csv = Vec::new();
    write_traces(&mut csv, &campaign.traces).unwrap();
    let stats = process_traces(csv.as_slice(), &campaign.manifest, 0.0).unwrap();
    let cal = calibrate(&stats, &campaign.manifest, "jetson-tx2").unwrap();
    assert!(rel_err(cal.profile.a_c, tx2.a_c) < 1e-6);
    assert!(rel_err(cal.profile.b_c, tx2.b_c) < 1e-6);
    assert_eq!(cal.profile.a_f, None);
    assert!(cal.warnings.iter().any(|w| w.contains("a_f")));
}

#[test]
fn noiseless_campaign_recovers_xavier_including_fc() {
    let nx = bundled_profile("jetson-xavier-nx").unwrap();
    let settings = CampaignSettings { n_runs: 2, power_std_frac: 0.0, seed: 3, ..CampaignSettings::default() };
    let cal = run_campaign(&nx, &settings);
    assert!(rel_err(cal.profile.a_c, nx.a_c) < 1e-6);
    assert!(rel_err(cal.profile.b_c, nx.b_c) < 1e-6);
    assert!(rel_err(cal.profile.a_f.unwrap(), nx.a_f.unwrap()) < 1e-6);
    assert_eq!(cal.report.per_ofm.len(), 10);
}

#[test]
fn fifty_runs_average_to_target_energy() {
    // Per-run energies ~ N(5 J, 0.1 J) built directly, one run per "trace".
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let noise = Normal::new(5.0, 0.1).unwrap();
    let layer = LayerSpec::fc(FcLayerSpec::new(10, 10).unwrap());
    let runs: Vec<_> = (0..50)
        .map(|run_id| {
            let power_w: f64 = noise.sample(&mut rng);
            let trace = edgewatt::trace::PowerTrace { config_id: "c".into(), run_id, samples: vec![power_w * 1e3] };
            integrate_run(&trace, 1.0).unwrap()
        })
        .collect();
    let s = aggregate_config(&runs, &layer).unwrap();
    assert!((s.mean_energy_j - 5.0).abs() < 0.1);
    assert!(s.ci99_halfwidth_j > 0.0);
}

#[test]
fn fc_slope_under_multiplicative_noise() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let noise = Normal::new(0.0, 0.05).unwrap();
    let a_f = 6.2454e-9;
    let stats: Vec<_> = (0..100)
        .map(|i| {
            let load = rng.random_range(10_000u64..20_000_000);
            ConfigEnergyStats {
                config_id: format!("fc{i}"),
                n_runs: 1,
                computational_load: load,
                mean_energy_j: load as f64 * a_f * (1.0 + noise.sample(&mut rng)),
                std_energy_j: 0.0,
                ci99_halfwidth_j: 0.0,
            }
        })
        .collect();
    assert!(rel_err(fit_fc(&stats).unwrap().a_f, a_f) < 0.02);
}

#[test]
fn synthesized_conv_energy_matches_model() {
    let tx2 = bundled_profile("jetson-tx2").unwrap();
    let layer = LayerSpec::conv2d(ConvLayerSpec::new(32, 16, 64, 3, 1).unwrap());
    let p = SynthParams { n_runs: 3, mean_power_mw: 5000.0, power_std_mw: 0.0, delta_s: 1e-4, seed: 1 };
    for t in synthesize_traces("c", &layer, &tx2, &p).unwrap() {
        let e = integrate_run(&t, 1e-4).unwrap().energy_j;
        assert!((e - 4.470_211_929_6e-3).abs() <= 5000.0 * 1e-3 * 1e-4);
    }
}

fn random_arch(rng: &mut ChaCha8Rng) -> NetworkArch {
    let n = rng.random_range(2..12);
    let layers = (0..n)
        .map(|_| {
            if rng.random_bool(0.6) {
                let i = rng.random_range(4..96u64);
                let k = rng.random_range(1..=i.min(7));
                let layer = ConvLayerSpec::new(
                    i,
                    rng.random_range(1..128),
                    rng.random_range(1..512),
                    k,
                    rng.random_range(1..4),
                )
                .unwrap();
                LayerSpec::conv2d(layer)
            } else {
                LayerSpec::fc(FcLayerSpec::new(rng.random_range(1..4096), rng.random_range(1..4096)).unwrap())
            }
        })
        .collect();
    NetworkArch::new("random", layers).unwrap()
}

#[test]
fn estimates_are_additive_and_order_free() {
    let nx = bundled_profile("jetson-xavier-nx").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..50 {
        let arch = random_arch(&mut rng);
        let whole = estimate_network(&arch, &nx).unwrap();
        for cut in 1..arch.layers.len() {
            let a = estimate_network(&arch.slice(0..cut).unwrap(), &nx).unwrap().total_j;
            let b = estimate_network(&arch.slice(cut..arch.layers.len()).unwrap(), &nx).unwrap().total_j;
            assert!(rel_err(a + b, whole.total_j) <= 1e-12);
        }
        let mut shuffled = arch.clone();
        shuffled.layers.shuffle(&mut rng);
        let total = estimate_network(&shuffled, &nx).unwrap().total_j;
        assert!(rel_err(total, whole.total_j) <= 1e-12);
        assert_eq!(cumulative_profile(&whole).last().unwrap().1, whole.total_j);
    }
}
