use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use edgewatt::calibrate::calibrate;
use edgewatt::estimate::{compare_devices, cumulative_profile, ComparisonOutcome};
use edgewatt::profile::{load_profile_dir, ProfileRegistry};
use edgewatt::synth::{generate_campaign, CampaignGrid, CampaignSettings};
use edgewatt::trace::{process_traces, read_stats_csv, write_stats_csv, write_traces, TraceManifest};
use edgewatt::{estimate_network, ArchParseOptions, DeviceProfile, Error, LoadMode, MacCount, NetworkArch};
use serde_json::json;

use crate::cli::{
    Command, DeviceSelection, DevicesArgs, EstimateArgs, FitArgs, Format, ListFormat, LoadArgs, Mode, SynthArgs,
    TraceEnergyArgs,
};
use crate::format::{sig6, Table};
use crate::{CliError, Context, Report};

type CmdResult = Result<Report, CliError>;

pub(crate) fn dispatch(command: Command, ctx: &Context) -> CmdResult {
    match command {
        Command::Estimate(a) => estimate(a, ctx),
        Command::Load(a) => load(a),
        Command::TraceEnergy(a) => trace_energy(a),
        Command::Fit(a) => fit(a),
        Command::Synth(a) => synth(a, ctx),
        Command::Devices(a) => devices(a, ctx),
    }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_owned(), source })
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path).map(BufReader::new).map_err(|source| CliError::Io { path: path.to_owned(), source })
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|source| CliError::Io { path: path.to_owned(), source })
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|source| CliError::Io { path: path.to_owned(), source })
}

fn registry(ctx: &Context) -> Result<ProfileRegistry, CliError> {
    let mut reg = ProfileRegistry::bundled();
    if let Some(dir) = &ctx.profile_dir {
        reg.add_user(load_profile_dir(dir)?);
    }
    Ok(reg)
}

fn lookup(reg: &ProfileRegistry, id: &str) -> Result<DeviceProfile, CliError> {
    reg.get(id).cloned().ok_or_else(|| {
        Error::InvalidInput(format!("unknown device `{id}`; known devices: {}", reg.ids().join(", "))).into()
    })
}

fn read_profile(path: &Path) -> Result<DeviceProfile, CliError> {
    DeviceProfile::from_json_str(&read_text(path)?)
        .map_err(|e| Error::InvalidProfile(format!("{}: {e}", path.display())).into())
}

fn select_profiles(sel: &DeviceSelection, ctx: &Context) -> Result<Vec<DeviceProfile>, CliError> {
    if sel.devices.is_empty() && sel.profiles.is_empty() {
        return Err(CliError::Usage("select a device with --device ID or --profile FILE".into()));
    }
    let mut profiles = Vec::new();
    if !sel.devices.is_empty() {
        let reg = registry(ctx)?;
        for id in &sel.devices {
            profiles.push(lookup(&reg, id)?);
        }
    }
    for path in &sel.profiles {
        profiles.push(read_profile(path)?);
    }
    Ok(profiles)
}

fn read_arch(path: &Path, skip_unknown: bool) -> Result<(NetworkArch, Vec<String>), CliError> {
    let arch = NetworkArch::from_json_str(&read_text(path)?, ArchParseOptions { skip_unknown })?;
    let warnings = arch
        .skipped_layers()
        .into_iter()
        .map(|(i, kind)| format!("layer {i}: unsupported kind `{kind}` counted as zero"))
        .collect();
    Ok((arch, warnings))
}

fn to_json(value: &impl serde::Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report types serialize");
    s.push('\n');
    s
}

fn estimate(args: EstimateArgs, ctx: &Context) -> CmdResult {
    let (arch, warnings) = read_arch(&args.arch, args.skip_unknown)?;
    let profiles = select_profiles(&args.selection, ctx)?;
    let stdout = match profiles.as_slice() {
        [profile] => render_estimate(&arch, profile, args.format)?,
        _ => render_comparison(&arch, &profiles, args.format)?,
    };
    Ok(Report { stdout, warnings })
}

fn render_estimate(arch: &NetworkArch, profile: &DeviceProfile, format: Format) -> Result<String, CliError> {
    let est = estimate_network(arch, profile)?;
    let cumulative = cumulative_profile(&est);
    Ok(match format {
        Format::Json => to_json(&est),
        Format::Csv => {
            let mut out = String::from("index,kind,load,energy_j,cumulative_j\n");
            for (l, (_, c)) in est.per_layer.iter().zip(&cumulative) {
                out.push_str(&format!("{},{},{},{},{}\n", l.index, l.kind, l.load, l.energy_j, c));
            }
            out
        }
        Format::Table => {
            let mut t = Table::new(["layer", "kind", "load_macs", "energy_j", "cumulative_j"]);
            for (l, (_, c)) in est.per_layer.iter().zip(&cumulative) {
                t.row([l.index.to_string(), l.kind.to_string(), l.load.to_string(), sig6(l.energy_j), sig6(*c)]);
            }
            t.row(["total".into(), String::new(), String::new(), sig6(est.total_j), String::new()]);
            format!("network: {}\ndevice: {}\n{}", est.network_name, est.device_id, t.render())
        }
    })
}

fn render_comparison(arch: &NetworkArch, profiles: &[DeviceProfile], format: Format) -> Result<String, CliError> {
    let cmp = compare_devices(arch, profiles)?;
    if cmp.reference_device.is_none() {
        // No device can estimate the network: surface the first device's error.
        estimate_network(arch, &profiles[0])?;
    }
    let reference_total = cmp.rows.iter().find_map(|r| match &r.outcome {
        ComparisonOutcome::Estimated { total_j, .. } => Some(*total_j),
        ComparisonOutcome::Blocked { .. } => None,
    });
    let ratio = |total: f64| match reference_total {
        Some(r) if r == total => 1.0,
        Some(r) => total / r,
        None => f64::NAN,
    };
    Ok(match format {
        Format::Json => to_json(&cmp),
        Format::Csv => {
            let mut out = String::from("device_id,status,total_j,ratio,reason\n");
            for row in &cmp.rows {
                match &row.outcome {
                    ComparisonOutcome::Estimated { total_j, .. } => {
                        out.push_str(&format!("{},estimated,{},{},\n", row.device_id, total_j, ratio(*total_j)))
                    }
                    ComparisonOutcome::Blocked { reason } => {
                        out.push_str(&format!("{},blocked,,,\"{}\"\n", row.device_id, reason.replace('"', "\"\"")))
                    }
                }
            }
            out
        }
        Format::Table => {
            let mut t = Table::new(["device", "total_j", "ratio", "note"]);
            for row in &cmp.rows {
                match &row.outcome {
                    ComparisonOutcome::Estimated { total_j, .. } => {
                        t.row([row.device_id.clone(), sig6(*total_j), sig6(ratio(*total_j)), String::new()])
                    }
                    ComparisonOutcome::Blocked { reason } => {
                        t.row([row.device_id.clone(), "-".into(), "-".into(), reason.clone()])
                    }
                }
            }
            let reference = cmp.reference_device.as_deref().unwrap_or("-");
            format!("network: {}\nreference: {reference}\n{}", cmp.network, t.render())
        }
    })
}

fn load_json(load: MacCount) -> serde_json::Value {
    match load {
        MacCount::Exact(n) => json!(n),
        MacCount::Approx(x) => json!(x),
    }
}

fn load(args: LoadArgs) -> CmdResult {
    let (arch, warnings) = read_arch(&args.arch, args.skip_unknown)?;
    let mode = match args.mode {
        Mode::Exact => LoadMode::Exact,
        Mode::Approx => LoadMode::Approx,
    };
    let loads = arch
        .layers
        .iter()
        .enumerate()
        .map(|(index, l)| l.load(mode).map_err(|e| Error::NotEstimable { index, reason: e.to_string() }))
        .collect::<Result<Vec<_>, _>>()?;
    let total = match mode {
        LoadMode::Exact => loads
            .iter()
            .try_fold(0u64, |acc, l| match l {
                MacCount::Exact(n) => acc.checked_add(*n),
                MacCount::Approx(_) => None,
            })
            .map(MacCount::Exact)
            .ok_or(Error::Overflow("total network load"))?,
        LoadMode::Approx => MacCount::Approx(loads.iter().map(|l| l.as_f64()).sum()),
    };
    let mode_name = match mode {
        LoadMode::Exact => "exact",
        LoadMode::Approx => "approx",
    };
    let stdout = match args.format {
        Format::Json => {
            let layers: Vec<_> = arch
                .layers
                .iter()
                .zip(&loads)
                .enumerate()
                .map(|(i, (l, m))| json!({"index": i, "kind": l.kind(), "label": l.label, "load": load_json(*m)}))
                .collect();
            to_json(&json!({"network": arch.name, "mode": mode_name, "layers": layers, "total": load_json(total)}))
        }
        Format::Csv => {
            let mut out = String::from("index,kind,load\n");
            for (i, (l, m)) in arch.layers.iter().zip(&loads).enumerate() {
                out.push_str(&format!("{i},{},{m}\n", l.kind()));
            }
            out
        }
        Format::Table => {
            let mut t = Table::new(["layer", "kind", "label", "load_macs"]);
            for (i, (l, m)) in arch.layers.iter().zip(&loads).enumerate() {
                t.row([i.to_string(), l.kind().to_string(), l.label.clone().unwrap_or_default(), m.to_string()]);
            }
            t.row(["total".into(), String::new(), String::new(), total.to_string()]);
            format!("network: {}\nmode: {mode_name}\n{}", arch.name, t.render())
        }
    };
    Ok(Report { stdout, warnings })
}

fn read_manifest(path: &Path) -> Result<TraceManifest, CliError> {
    TraceManifest::from_json_str(&read_text(path)?).map_err(CliError::from)
}

fn trace_energy(args: TraceEnergyArgs) -> CmdResult {
    let manifest = read_manifest(&args.manifest)?;
    let stats = process_traces(open(&args.traces)?, &manifest, args.baseline_mw)?;
    if stats.is_empty() {
        return Err(Error::InvalidTrace(format!("{}: no trace rows", args.traces.display())).into());
    }
    let stdout = match &args.out {
        Some(path) => {
            let mut w = create(path)?;
            write_stats_csv(&mut w, &stats)?;
            w.flush().map_err(|source| CliError::Io { path: path.clone(), source })?;
            let mut t = Table::new(["config_id", "n_runs", "load", "mean_energy_j", "std_energy_j", "ci99_j"]);
            for s in &stats {
                t.row([
                    s.config_id.clone(),
                    s.n_runs.to_string(),
                    s.computational_load.to_string(),
                    sig6(s.mean_energy_j),
                    sig6(s.std_energy_j),
                    sig6(s.ci99_halfwidth_j),
                ]);
            }
            format!("wrote {} configs to {}\n{}", stats.len(), path.display(), t.render())
        }
        None => {
            let mut buf = Vec::new();
            write_stats_csv(&mut buf, &stats)?;
            String::from_utf8(buf).expect("CSV output is UTF-8")
        }
    };
    Ok(Report { stdout, warnings: Vec::new() })
}

fn fit(args: FitArgs) -> CmdResult {
    let manifest = read_manifest(&args.manifest)?;
    let stats = read_stats_csv(open(&args.stats)?)?;
    let device_id = args.device_id.unwrap_or_else(|| manifest.device_id.clone());
    let cal = calibrate(&stats, &manifest, &device_id)?;
    if let Some(path) = &args.out {
        write_file(path, &cal.profile.to_json_string())?;
    }
    Ok(Report { stdout: to_json(&cal.report), warnings: cal.warnings })
}

fn synth(args: SynthArgs, ctx: &Context) -> CmdResult {
    let profile = match &args.profile {
        Some(path) => read_profile(path)?,
        None => lookup(&registry(ctx)?, &args.device)?,
    };
    let mut warnings = Vec::new();
    let defaults = CampaignGrid::default();
    let mut grid = CampaignGrid {
        ofms: if args.ofm.is_empty() { defaults.ofms } else { args.ofm },
        conv_i_sizes: if args.i_size.is_empty() { defaults.conv_i_sizes } else { args.i_size },
        ifm: args.ifm,
        ksize: args.ksize,
        stride: args.stride,
        fc_shapes: if args.fc.is_empty() { defaults.fc_shapes } else { args.fc.clone() },
    };
    if args.no_fc {
        grid.fc_shapes.clear();
    } else if profile.a_f.is_none() && args.fc.is_empty() {
        // Explicitly requested FC shapes still fail with a calibration gap.
        grid.fc_shapes.clear();
        warnings.push(format!("device `{}` has no a_f; FC configs left out of the campaign", profile.device_id));
    }
    let settings = CampaignSettings {
        n_runs: args.runs,
        nominal_power_mw: args.power_mw,
        power_std_frac: args.power_std_frac,
        delta_s: args.delta_s,
        seed: args.seed,
    };
    let campaign = generate_campaign(&profile, &grid, &settings)?;

    fs::create_dir_all(&args.out_dir).map_err(|source| CliError::Io { path: args.out_dir.clone(), source })?;
    let traces_path = args.out_dir.join("traces.csv");
    let manifest_path = args.out_dir.join("manifest.json");
    let mut w = create(&traces_path)?;
    write_traces(&mut w, &campaign.traces)?;
    w.flush().map_err(|source| CliError::Io { path: traces_path.clone(), source })?;
    write_file(&manifest_path, &campaign.manifest.to_json_string())?;

    let samples: usize = campaign.traces.iter().map(|t| t.samples.len()).sum();
    let stdout = format!(
        "device: {}\nconfigs: {}\nruns per config: {}\ntrace rows: {samples}\nwrote {} and {}\n",
        profile.device_id,
        campaign.manifest.configs.len(),
        args.runs,
        traces_path.display(),
        manifest_path.display(),
    );
    Ok(Report { stdout, warnings })
}

fn devices(args: DevicesArgs, ctx: &Context) -> CmdResult {
    let reg = registry(ctx)?;
    let stdout = match args.format {
        ListFormat::Json => {
            let list: Vec<_> = reg
                .iter()
                .map(|(p, source)| {
                    json!({"device_id": p.device_id, "a_c": p.a_c, "b_c": p.b_c, "a_f": p.a_f,
                           "units": edgewatt::profile::UNITS, "source": source})
                })
                .collect();
            to_json(&list)
        }
        ListFormat::Table => {
            let mut t = Table::new(["device", "a_c", "b_c", "a_f", "units", "source"]);
            for (p, source) in reg.iter() {
                let source = serde_json::to_value(source).expect("source serializes");
                t.row([
                    p.device_id.clone(),
                    sig6(p.a_c),
                    sig6(p.b_c),
                    p.a_f.map_or_else(|| "-".into(), sig6),
                    edgewatt::profile::UNITS.into(),
                    source.as_str().unwrap_or_default().to_owned(),
                ]);
            }
            t.render()
        }
    };
    Ok(Report { stdout, warnings: Vec::new() })
}
