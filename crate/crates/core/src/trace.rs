//! Power-trace ingestion and per-configuration energy statistics.
//!
//! A trace is one inference run sampled at a fixed timeslot. Its energy is
//! the run duration times the mean sampled power. Runs of the same
//! configuration are then reduced to a mean energy with a 99% Student-t
//! confidence interval.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::arch::{LayerSpec, LoadMode, MacCount};
use crate::error::{Error, Result};

pub const DEFAULT_DELTA_S: f64 = 1e-4;
pub const TRACE_HEADER: [&str; 4] = ["config_id", "run_id", "slot_idx", "power_mw"];

/// Measurement campaign description: which layer each config id ran.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceManifest {
    pub device_id: String,
    /// Seconds per timeslot.
    pub delta_s: f64,
    pub configs: BTreeMap<String, LayerSpec>,
}

#[derive(Serialize)]
struct ManifestOut<'a> {
    device_id: &'a str,
    delta_s: f64,
    configs: &'a BTreeMap<String, LayerSpec>,
}

impl TraceManifest {
    pub fn new(device_id: impl Into<String>, delta_s: f64, configs: BTreeMap<String, LayerSpec>) -> Result<Self> {
        if !(delta_s.is_finite() && delta_s > 0.0) {
            return Err(Error::InvalidInput(format!("delta_s must be positive, got {delta_s}")));
        }
        Ok(TraceManifest { device_id: device_id.into(), delta_s, configs })
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let doc: Value = serde_json::from_str(s).map_err(|e| Error::parse("manifest JSON", e))?;
        let obj = doc.as_object().ok_or_else(|| Error::parse("manifest JSON", "top level must be an object"))?;
        let device_id = obj
            .get("device_id")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::parse("manifest JSON", "missing string field `device_id`"))?;
        let delta_s = match obj.get("delta_s") {
            None => DEFAULT_DELTA_S,
            Some(v) => v.as_f64().ok_or_else(|| Error::parse("manifest JSON", "`delta_s` must be a number"))?,
        };
        let raw = obj
            .get("configs")
            .and_then(Value::as_object)
            .ok_or_else(|| Error::parse("manifest JSON", "missing object field `configs`"))?;
        let mut configs = BTreeMap::new();
        for (i, (id, v)) in raw.iter().enumerate() {
            let layer = LayerSpec::from_json_value(i, v, false)
                .map_err(|e| Error::Parse { what: "manifest JSON", message: format!("config `{id}`: {e}") })?;
            configs.insert(id.clone(), layer);
        }
        TraceManifest::new(device_id, delta_s, configs)
    }

    pub fn to_json_string(&self) -> String {
        let out = ManifestOut { device_id: &self.device_id, delta_s: self.delta_s, configs: &self.configs };
        serde_json::to_string_pretty(&out).expect("manifest serializes")
    }

    pub fn config(&self, config_id: &str) -> Result<&LayerSpec> {
        self.configs
            .get(config_id)
            .ok_or_else(|| Error::InvalidTrace(format!("config `{config_id}` is not declared in the manifest")))
    }
}

/// Power samples of one inference run, in milliwatts, one per timeslot.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerTrace {
    pub config_id: String,
    pub run_id: u64,
    pub samples: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEnergy {
    pub config_id: String,
    pub run_id: u64,
    pub duration_s: f64,
    pub avg_power_mw: f64,
    pub energy_j: f64,
}

/// Aggregate over all runs of one configuration. Field order is the
/// column order of the stats CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEnergyStats {
    pub config_id: String,
    pub n_runs: u64,
    #[serde(rename = "load")]
    pub computational_load: u64,
    pub mean_energy_j: f64,
    pub std_energy_j: f64,
    #[serde(rename = "ci99_j")]
    pub ci99_halfwidth_j: f64,
}

/// Correctly rounded sum of `values`. The result does not depend on the
/// order of the input.
pub fn exact_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut partials: Vec<f64> = Vec::new();
    for mut x in values {
        let mut i = 0;
        for j in 0..partials.len() {
            let mut y = partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        partials.truncate(i);
        partials.push(x);
    }

    // Round the non-overlapping partials from the top, fixing up ties.
    let mut n = partials.len();
    if n == 0 {
        return 0.0;
    }
    n -= 1;
    let mut hi = partials[n];
    let mut lo = 0.0;
    while n > 0 {
        let x = hi;
        n -= 1;
        let y = partials[n];
        hi = x + y;
        let yr = hi - x;
        lo = y - yr;
        if lo != 0.0 {
            break;
        }
    }
    if n > 0 && ((lo < 0.0 && partials[n - 1] < 0.0) || (lo > 0.0 && partials[n - 1] > 0.0)) {
        let y = lo * 2.0;
        let x = hi + y;
        let yr = x - hi;
        if y == yr {
            hi = x;
        }
    }
    hi
}

fn check_delta(delta_s: f64) -> Result<()> {
    if !(delta_s.is_finite() && delta_s > 0.0) {
        return Err(Error::InvalidInput(format!("delta_s must be positive, got {delta_s}")));
    }
    Ok(())
}

/// Energy of one run: `len · delta_s` seconds at the mean sampled power.
pub fn integrate_run(trace: &PowerTrace, delta_s: f64) -> Result<RunEnergy> {
    integrate_run_with_baseline(trace, delta_s, 0.0)
}

/// Like [`integrate_run`], with `baseline_mw` subtracted from the mean power
/// before integrating.
pub fn integrate_run_with_baseline(trace: &PowerTrace, delta_s: f64, baseline_mw: f64) -> Result<RunEnergy> {
    check_delta(delta_s)?;
    if trace.samples.is_empty() {
        return Err(Error::InvalidTrace(format!("config `{}` run {}: no samples", trace.config_id, trace.run_id)));
    }
    if let Some((slot, p)) = trace.samples.iter().enumerate().find(|(_, p)| !(p.is_finite() && **p >= 0.0)) {
        return Err(Error::InvalidTrace(format!(
            "config `{}` run {} slot {slot}: invalid power {p} mW",
            trace.config_id, trace.run_id
        )));
    }
    if !(baseline_mw.is_finite() && baseline_mw >= 0.0) {
        return Err(Error::InvalidInput(format!("baseline must be a non-negative power, got {baseline_mw}")));
    }

    let n = trace.samples.len() as f64;
    let mean = exact_sum(trace.samples.iter().copied()) / n;
    let avg_power_mw = mean - baseline_mw;
    if avg_power_mw < 0.0 {
        return Err(Error::InvalidTrace(format!(
            "config `{}` run {}: baseline {baseline_mw} mW exceeds mean power {mean} mW",
            trace.config_id, trace.run_id
        )));
    }
    let duration_s = n * delta_s;
    Ok(RunEnergy {
        config_id: trace.config_id.clone(),
        run_id: trace.run_id,
        duration_s,
        avg_power_mw,
        energy_j: duration_s * avg_power_mw * 1e-3,
    })
}

/// Half-width of the 99% Student-t interval for a mean of `n` samples.
pub fn ci99_halfwidth(std: f64, n: u64) -> f64 {
    if n < 2 {
        return 0.0;
    }
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("positive degrees of freedom").inverse_cdf(0.995);
    t * std / (n as f64).sqrt()
}

pub fn aggregate_config(runs: &[RunEnergy], config: &LayerSpec) -> Result<ConfigEnergyStats> {
    let first = runs.first().ok_or_else(|| Error::InvalidInput("cannot aggregate an empty run list".into()))?;
    if let Some(other) = runs.iter().find(|r| r.config_id != first.config_id) {
        return Err(Error::InvalidInput(format!("runs mix configs `{}` and `{}`", first.config_id, other.config_id)));
    }
    let load = match config.load(LoadMode::Exact)? {
        MacCount::Exact(n) if config.kind() != crate::arch::LayerKind::Skipped => n,
        _ => return Err(Error::InvalidInput(format!("config `{}` is not an fc or conv2d layer", first.config_id))),
    };

    let n = runs.len() as u64;
    let mean = exact_sum(runs.iter().map(|r| r.energy_j)) / n as f64;
    let std = if n > 1 {
        let ss = exact_sum(runs.iter().map(|r| (r.energy_j - mean).powi(2)));
        (ss / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(ConfigEnergyStats {
        config_id: first.config_id.clone(),
        n_runs: n,
        computational_load: load,
        mean_energy_j: mean,
        std_energy_j: std,
        ci99_halfwidth_j: ci99_halfwidth(std, n),
    })
}

/// Density-normalized histogram of per-run average power.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerHistogram {
    pub bin_width_mw: f64,
    /// `(bin_center_mw, density)`; densities times the bin width sum to 1.
    pub bins: Vec<(f64, f64)>,
}

pub fn power_histogram(runs: &[RunEnergy], bins: usize) -> Result<PowerHistogram> {
    if bins == 0 {
        return Err(Error::InvalidInput("histogram needs at least one bin".into()));
    }
    if runs.is_empty() {
        return Err(Error::InvalidInput("histogram needs at least one run".into()));
    }
    let (mut lo, mut hi) = runs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r.avg_power_mw), hi.max(r.avg_power_mw)));
    if lo == hi {
        lo -= 0.5;
        hi += 0.5;
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0u64; bins];
    for r in runs {
        let idx = (((r.avg_power_mw - lo) / width) as usize).min(bins - 1);
        counts[idx] += 1;
    }
    let total = runs.len() as f64;
    let bins =
        counts.iter().enumerate().map(|(i, &c)| (lo + (i as f64 + 0.5) * width, c as f64 / (total * width))).collect();
    Ok(PowerHistogram { bin_width_mw: width, bins })
}

struct Row {
    config_id: String,
    run_id: u64,
    slot: u64,
    power: f64,
    line: u64,
}

/// Streaming reader over a trace CSV, yielding one [`PowerTrace`] per run.
///
/// Rows must be sorted by `(config_id, run_id, slot_idx)` and slot indices
/// must count up from 0 without gaps.
pub struct TraceReader<R: Read> {
    records: csv::StringRecordsIntoIter<R>,
    pending: Option<Row>,
    last_key: Option<(String, u64)>,
    done: bool,
}

impl<R: Read> TraceReader<R> {
    pub fn new(reader: R) -> Result<Self> {
        let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header = csv.headers()?.clone();
        if header.iter().ne(TRACE_HEADER.iter().copied()) {
            return Err(Error::InvalidTrace(format!(
                "expected header `{}`, found `{}`",
                TRACE_HEADER.join(","),
                header.iter().collect::<Vec<_>>().join(",")
            )));
        }
        Ok(TraceReader { records: csv.into_records(), pending: None, last_key: None, done: false })
    }

    fn next_row(&mut self) -> Result<Option<Row>> {
        let Some(rec) = self.records.next() else { return Ok(None) };
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |i: usize| rec.get(i).unwrap_or("");
        let bad = |what: &str| {
            Error::InvalidTrace(format!("line {line}: invalid {what} `{}`", rec.iter().collect::<Vec<_>>().join(",")))
        };
        let config_id = field(0).to_owned();
        if config_id.is_empty() {
            return Err(bad("config_id"));
        }
        let run_id: u64 = field(1).parse().map_err(|_| bad("run_id"))?;
        let slot: u64 = field(2).parse().map_err(|_| bad("slot_idx"))?;
        let power: f64 = field(3).parse().map_err(|_| bad("power_mw"))?;
        if !(power.is_finite() && power >= 0.0) {
            return Err(Error::InvalidTrace(format!(
                "line {line}: config `{config_id}` run {run_id} slot {slot}: invalid power {power} mW"
            )));
        }
        Ok(Some(Row { config_id, run_id, slot, power, line }))
    }

    fn read_trace(&mut self) -> Result<Option<PowerTrace>> {
        let first = match self.pending.take() {
            Some(row) => row,
            None => match self.next_row()? {
                Some(row) => row,
                None => return Ok(None),
            },
        };
        let Row { config_id, run_id, slot, power, line } = first;
        let key = (config_id, run_id);
        if let Some(last) = &self.last_key {
            if key <= *last {
                return Err(Error::InvalidTrace(format!(
                    "line {line}: rows not sorted by (config_id, run_id): `{}` run {} follows `{}` run {}",
                    key.0, key.1, last.0, last.1
                )));
            }
        }
        if slot != 0 {
            return Err(Error::InvalidTrace(format!(
                "line {line}: gap in slot_idx for config `{}` run {}: expected 0, found {slot}",
                key.0, key.1
            )));
        }
        let mut samples = vec![power];
        loop {
            match self.next_row()? {
                Some(row) if row.config_id == key.0 && row.run_id == key.1 => {
                    let Row { slot, power, line, .. } = row;
                    let expected = samples.len() as u64;
                    if slot != expected {
                        return Err(Error::InvalidTrace(format!(
                            "line {line}: gap in slot_idx for config `{}` run {}: expected {expected}, found {slot}",
                            key.0, key.1
                        )));
                    }
                    samples.push(power);
                }
                Some(row) => {
                    self.pending = Some(row);
                    break;
                }
                None => break,
            }
        }
        self.last_key = Some(key.clone());
        Ok(Some(PowerTrace { config_id: key.0, run_id: key.1, samples }))
    }
}

impl<R: Read> Iterator for TraceReader<R> {
    type Item = Result<PowerTrace>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        match self.read_trace() {
            Ok(Some(t)) => Some(Ok(t)),
            Ok(None) => {
                self.done = true;
                None
            }
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}

pub fn write_traces<'a, W: Write>(writer: W, traces: impl IntoIterator<Item = &'a PowerTrace>) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(TRACE_HEADER)?;
    for t in traces {
        let run = t.run_id.to_string();
        for (slot, p) in t.samples.iter().enumerate() {
            csv.write_record([t.config_id.as_str(), run.as_str(), &slot.to_string(), &p.to_string()])?;
        }
    }
    csv.flush()?;
    Ok(())
}

/// Integrates every run in a trace stream and aggregates per config, in
/// stream order.
pub fn process_traces<R: Read>(
    reader: R,
    manifest: &TraceManifest,
    baseline_mw: f64,
) -> Result<Vec<ConfigEnergyStats>> {
    let mut stats = Vec::new();
    let mut current: Vec<RunEnergy> = Vec::new();
    let flush = |runs: &mut Vec<RunEnergy>, stats: &mut Vec<ConfigEnergyStats>| -> Result<()> {
        if let Some(first) = runs.first() {
            let layer = manifest.config(&first.config_id)?;
            stats.push(aggregate_config(runs, layer)?);
            runs.clear();
        }
        Ok(())
    };
    for trace in TraceReader::new(reader)? {
        let trace = trace?;
        manifest.config(&trace.config_id)?;
        if current.first().is_some_and(|r| r.config_id != trace.config_id) {
            flush(&mut current, &mut stats)?;
        }
        current.push(integrate_run_with_baseline(&trace, manifest.delta_s, baseline_mw)?);
    }
    flush(&mut current, &mut stats)?;
    if stats.is_empty() {
        return Err(Error::InvalidTrace("trace file contains no samples".into()));
    }
    Ok(stats)
}

pub fn write_stats_csv<W: Write>(writer: W, stats: &[ConfigEnergyStats]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    for s in stats {
        csv.serialize(s)?;
    }
    csv.flush()?;
    Ok(())
}

pub fn read_stats_csv<R: Read>(reader: R) -> Result<Vec<ConfigEnergyStats>> {
    let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let stats = csv.deserialize().collect::<std::result::Result<Vec<ConfigEnergyStats>, _>>()?;
    if stats.is_empty() {
        return Err(Error::InvalidInput("stats file has no rows".into()));
    }
    Ok(stats)
}
