use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Estimate and calibrate neural-network inference energy on edge boards.
#[derive(Debug, Parser)]
#[command(name = "edgewatt", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the inference energy of a network on one or more devices.
    Estimate(EstimateArgs),
    /// Print the per-layer computational load (MAC count) of a network.
    Load(LoadArgs),
    /// Integrate power traces into per-configuration energy statistics.
    TraceEnergy(TraceEnergyArgs),
    /// Fit device coefficients from per-configuration energy statistics.
    Fit(FitArgs),
    /// Generate a seeded synthetic measurement campaign.
    Synth(SynthArgs),
    /// List the known device profiles.
    Devices(DevicesArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ListFormat {
    Table,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Exact,
    Approx,
}

#[derive(Debug, Args)]
pub struct DeviceSelection {
    /// Device profile id (bundled or from EDGEWATT_PROFILE_DIR). Repeat to compare devices.
    #[arg(long = "device", value_name = "ID")]
    pub devices: Vec<String>,
    /// Device profile JSON file. Repeat to compare devices.
    #[arg(long = "profile", value_name = "FILE")]
    pub profiles: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// Architecture JSON file.
    pub arch: PathBuf,
    #[command(flatten)]
    pub selection: DeviceSelection,
    #[arg(long, value_enum, default_value = "table")]
    pub format: Format,
    /// Treat unsupported layer kinds as zero-energy placeholders instead of failing.
    #[arg(long)]
    pub skip_unknown: bool,
}

#[derive(Debug, Args)]
pub struct LoadArgs {
    /// Architecture JSON file.
    pub arch: PathBuf,
    /// Exact floor-based output side, or the (i_size/stride)² approximation.
    #[arg(long, value_enum, default_value = "exact")]
    pub mode: Mode,
    #[arg(long, value_enum, default_value = "table")]
    pub format: Format,
    /// Treat unsupported layer kinds as zero-load placeholders instead of failing.
    #[arg(long)]
    pub skip_unknown: bool,
}

#[derive(Debug, Args)]
pub struct TraceEnergyArgs {
    /// Trace CSV with header `config_id,run_id,slot_idx,power_mw`.
    pub traces: PathBuf,
    /// Manifest JSON naming the layer of every config id.
    pub manifest: PathBuf,
    /// Write the stats CSV here instead of standard output.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Idle board power subtracted from every run's mean power.
    #[arg(long, value_name = "MW", default_value_t = 0.0)]
    pub baseline_mw: f64,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Stats CSV produced by `trace-energy`.
    pub stats: PathBuf,
    /// Manifest JSON of the campaign.
    pub manifest: PathBuf,
    /// Id of the fitted profile; defaults to the manifest's device id.
    #[arg(long, value_name = "ID")]
    pub device_id: Option<String>,
    /// Write the fitted device profile JSON here.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Ground-truth profile id.
    #[arg(long, value_name = "ID", default_value = "jetson-xavier-nx", conflicts_with = "profile")]
    pub device: String,
    /// Ground-truth profile JSON file.
    #[arg(long, value_name = "FILE")]
    pub profile: Option<PathBuf>,
    /// Output feature map counts of the conv grid [default: 1,2,4,...,512].
    #[arg(long, value_delimiter = ',')]
    pub ofm: Vec<u64>,
    /// Input sides of the conv grid [default: 32,48,64].
    #[arg(long, value_delimiter = ',')]
    pub i_size: Vec<u64>,
    #[arg(long, default_value_t = 32)]
    pub ifm: u64,
    #[arg(long, default_value_t = 3)]
    pub ksize: u64,
    #[arg(long, default_value_t = 1)]
    pub stride: u64,
    /// FC shapes as ISIZExOSIZE [default: 1024x1024,2048x1024,2048x2048,4096x2048].
    #[arg(long, value_delimiter = ',', value_parser = parse_fc_shape)]
    pub fc: Vec<(u64, u64)>,
    /// Leave FC configs out of the campaign.
    #[arg(long)]
    pub no_fc: bool,
    /// Inference runs per configuration.
    #[arg(long, default_value_t = 50)]
    pub runs: u64,
    /// Nominal mean board power.
    #[arg(long, value_name = "MW", default_value_t = 5000.0)]
    pub power_mw: f64,
    /// Per-slot power standard deviation as a fraction of the mean.
    #[arg(long, default_value_t = 0.05)]
    pub power_std_frac: f64,
    /// Timeslot length in seconds.
    #[arg(long, default_value_t = 1e-4)]
    pub delta_s: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory receiving `traces.csv` and `manifest.json`.
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct DevicesArgs {
    #[arg(long, value_enum, default_value = "table")]
    pub format: ListFormat,
}

fn parse_fc_shape(s: &str) -> Result<(u64, u64), String> {
    let (i, o) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected ISIZExOSIZE, got `{s}`"))?;
    let parse = |v: &str| v.trim().parse::<u64>().map_err(|e| format!("`{v}`: {e}"));
    Ok((parse(i)?, parse(o)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fc_shape_parsing() {
        assert_eq!(parse_fc_shape("1024x512"), Ok((1024, 512)));
        assert!(parse_fc_shape("1024").is_err());
        assert!(parse_fc_shape("ax2").is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
