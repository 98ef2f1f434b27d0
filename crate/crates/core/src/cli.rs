//! Parameter sweeps over systems with reproducible, plot-ready outputs.
//!
//! Every (value, system, replication) triple is one independent trial.
//! Replication `i` uses the same topology and frame streams for every
//! system and every swept value, so comparisons are paired. Results are
//! collected in key order, so output bytes do not depend on the number of
//! workers.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::analysis::{aggregate, empirical_cdf, AggregateMetrics, DistanceHistogram, RunMetrics, DISTANCE_BINS};
use crate::error::{invalid, Error, Result};
use crate::scenario::ScenarioConfig;
use crate::scheduler::{run_trial, System, TrialResult};

/// Version of the row layout of every output table.
pub const SCHEMA_VERSION: u32 = 1;

/// Points of the goodput CDF table.
pub const CDF_POINTS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SweepParam {
    /// PU activity of every cluster.
    QAct,
    /// Receive SNR in dB.
    Snr,
    /// Total number of mobiles.
    K,
    /// CSIT error variance.
    SigmaE2,
}

impl SweepParam {
    pub fn name(&self) -> &'static str {
        match self {
            SweepParam::QAct => "q_act",
            SweepParam::Snr => "snr",
            SweepParam::K => "k",
            SweepParam::SigmaE2 => "sigma_e2",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "q_act" => Ok(SweepParam::QAct),
            "snr" => Ok(SweepParam::Snr),
            "k" => Ok(SweepParam::K),
            "sigma_e2" => Ok(SweepParam::SigmaE2),
            _ => Err(invalid(format!("unknown sweep parameter `{s}` (q_act, snr, k, sigma_e2)"))),
        }
    }

    /// `base` with this parameter set to `value`.
    pub fn apply(&self, base: &ScenarioConfig, value: f64) -> Result<ScenarioConfig> {
        let mut cfg = base.clone();
        match self {
            SweepParam::QAct => {
                cfg.pu_activity = value;
                cfg.relay_pu_activity = None;
            }
            SweepParam::Snr => cfg.receive_snr_db = Some(value),
            SweepParam::K => {
                if value.fract() != 0.0 || value < 1.0 {
                    return Err(invalid(format!("user count {value} is not a positive integer")));
                }
                // Split evenly over the M + 1 clusters, remainder to cluster 0.
                let total = value as usize;
                let clusters = cfg.num_relays + 1;
                let per = total / clusters;
                cfg.relay_cluster_users = per;
                cfg.cluster0_receivers = cfg.num_relays + total - per * cfg.num_relays;
            }
            SweepParam::SigmaE2 => cfg.csit_error_variance = value,
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parses a system list. Baseline 1 has a reserved name but no implementation.
pub fn parse_systems(list: &str) -> Result<Vec<System>> {
    let mut out = Vec::new();
    for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        if name == "ssa" {
            return Err(invalid("baseline 1 (ssa) is not implemented"));
        }
        let sys = System::parse(name)
            .ok_or_else(|| invalid(format!("unknown system `{name}` (proposed, no_rs, no_rs_low, naive)")))?;
        if !out.contains(&sys) {
            out.push(sys);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSpec {
    pub param: SweepParam,
    pub values: Vec<f64>,
    pub trials: usize,
    pub systems: Vec<System>,
    pub out_dir: PathBuf,
    pub master_seed: u64,
    pub trace: bool,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(invalid("sweep value list is empty"));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("sweep values must be finite"));
        }
        if self.trials == 0 {
            return Err(invalid("trials must be at least 1"));
        }
        if self.systems.is_empty() {
            return Err(invalid("no systems selected"));
        }
        Ok(())
    }
}

/// Results of one (value, system) point.
#[derive(Debug, Clone)]
pub struct PointResult {
    pub value: f64,
    pub system: System,
    pub trials: Vec<TrialResult>,
    pub metrics: Vec<RunMetrics>,
    pub aggregate: AggregateMetrics,
    pub histogram: DistanceHistogram,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub config_hash: String,
    pub points: Vec<PointResult>,
}

impl SweepResult {
    pub fn point(&self, value: f64, system: System) -> Option<&PointResult> {
        self.points.iter().find(|p| p.value == value && p.system == system)
    }
}

/// Runs every trial of the sweep without writing anything.
pub fn run_points(base: &ScenarioConfig, spec: &SweepSpec) -> Result<SweepResult> {
    spec.validate()?;
    let configs: Vec<ScenarioConfig> =
        spec.values.iter().map(|&v| spec.param.apply(base, v)).collect::<Result<_>>()?;
    let mut keys = Vec::new();
    for vi in 0..spec.values.len() {
        for si in 0..spec.systems.len() {
            for rep in 0..spec.trials {
                keys.push((vi, si, rep));
            }
        }
    }
    let trials: Vec<TrialResult> = keys
        .par_iter()
        .map(|&(vi, si, rep)| run_trial(&configs[vi], spec.systems[si], spec.master_seed, rep as u64, spec.trace))
        .collect::<Result<_>>()?;

    let mut points = Vec::new();
    for (chunk, (vi, si)) in trials
        .chunks(spec.trials)
        .zip((0..spec.values.len()).flat_map(|v| (0..spec.systems.len()).map(move |s| (v, s))))
    {
        let cfg = &configs[vi];
        let metrics: Vec<RunMetrics> = chunk
            .iter()
            .map(|t| RunMetrics::from_trial(t, cfg.num_subchannels, cfg.pfs_floor))
            .collect::<Result<_>>()?;
        let mut histogram = DistanceHistogram::new(spec.systems[si], DISTANCE_BINS);
        for t in chunk {
            histogram.add(t, cfg.cell_radius_m);
        }
        points.push(PointResult {
            value: spec.values[vi],
            system: spec.systems[si],
            trials: chunk.to_vec(),
            aggregate: aggregate(&metrics)?,
            metrics,
            histogram,
        });
    }
    Ok(SweepResult { config_hash: base.config_hash(), points })
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    Ok(csv::Writer::from_path(path)?)
}

fn num(x: f64) -> String {
    format!("{x}")
}

#[derive(Serialize)]
struct Manifest<'a> {
    schema_version: u32,
    code_version: &'a str,
    config_hash: &'a str,
    master_seed: u64,
    seed_derivation: &'a str,
    param: &'a str,
    values: &'a [f64],
    systems: Vec<&'a str>,
    trials: usize,
    files: Vec<String>,
    config: &'a ScenarioConfig,
}

/// Runs the sweep and writes every output table under `spec.out_dir`.
/// Returns the written file names.
pub fn run_sweep(base: &ScenarioConfig, spec: &SweepSpec) -> Result<(SweepResult, Vec<String>)> {
    let result = run_points(base, spec)?;
    fs::create_dir_all(&spec.out_dir)?;
    let files = write_outputs(base, spec, &result)?;
    Ok((result, files))
}

pub fn write_outputs(base: &ScenarioConfig, spec: &SweepSpec, result: &SweepResult) -> Result<Vec<String>> {
    let dir = &spec.out_dir;
    let hash = result.config_hash.as_str();
    let seed = spec.master_seed.to_string();
    let version = SCHEMA_VERSION.to_string();
    let param = spec.param.name();
    let metric_names: Vec<&str> = result.points[0].metrics[0].fields().iter().map(|f| f.0).collect();
    let mut files = Vec::new();

    let mut w = writer(&dir.join("runs.csv"))?;
    let mut header = vec!["schema_version", "config_hash", "master_seed", "param", "value", "system", "replication", "topology_seed"];
    header.extend(&metric_names);
    w.write_record(&header)?;
    for p in &result.points {
        for (t, m) in p.trials.iter().zip(&p.metrics) {
            let mut row = vec![
                version.clone(),
                hash.to_string(),
                seed.clone(),
                param.to_string(),
                num(p.value),
                p.system.name().to_string(),
                t.replication.to_string(),
                t.topology_seed.to_string(),
            ];
            row.extend(m.fields().iter().map(|f| num(f.1)));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    files.push("runs.csv".to_string());

    let agg_header = || {
        let mut h: Vec<String> = ["schema_version", "config_hash", "master_seed", "param", "value", "system", "trials", "hop1_per_pooled", "hop2_per_pooled"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for n in &metric_names {
            h.push(format!("{n}_mean"));
            h.push(format!("{n}_std"));
        }
        h
    };
    let agg_row = |p: &PointResult| {
        let a = &p.aggregate;
        let mut row = vec![
            version.clone(),
            hash.to_string(),
            seed.clone(),
            param.to_string(),
            num(p.value),
            p.system.name().to_string(),
            a.trials.to_string(),
            num(a.hop1_per),
            num(a.hop2_per),
        ];
        for ((_, m), s) in a.mean.iter().zip(&a.std) {
            row.push(num(*m));
            row.push(num(*s));
        }
        row
    };
    let mut w = writer(&dir.join("aggregate.csv"))?;
    w.write_record(agg_header())?;
    for p in &result.points {
        w.write_record(agg_row(p))?;
    }
    w.flush()?;
    files.push("aggregate.csv".to_string());
    for sys in &spec.systems {
        let name = format!("aggregate_{}.csv", sys.name());
        let mut w = writer(&dir.join(&name))?;
        w.write_record(agg_header())?;
        for p in result.points.iter().filter(|p| p.system == *sys) {
            w.write_record(agg_row(p))?;
        }
        w.flush()?;
        files.push(name);
    }

    let mut w = writer(&dir.join("histogram.csv"))?;
    let mut header: Vec<String> = ["schema_version", "config_hash", "master_seed", "param", "value", "bin", "distance_lo_m", "distance_hi_m"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for sys in &spec.systems {
        header.push(format!("users_{}", sys.name()));
        header.push(format!("goodput_{}", sys.name()));
    }
    w.write_record(&header)?;
    let width = base.cell_radius_m / DISTANCE_BINS as f64;
    for &value in &spec.values {
        for bin in 0..DISTANCE_BINS {
            let mut row = vec![
                version.clone(),
                hash.to_string(),
                seed.clone(),
                param.to_string(),
                num(value),
                bin.to_string(),
                num(width * bin as f64),
                num(width * (bin + 1) as f64),
            ];
            for sys in &spec.systems {
                let h = &result.point(value, *sys).expect("every point ran").histogram;
                row.push(h.counts[bin].to_string());
                row.push(num(h.mean(bin)));
            }
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    files.push("histogram.csv".to_string());

    let mut w = writer(&dir.join("cdf.csv"))?;
    w.write_record(["schema_version", "config_hash", "master_seed", "param", "value", "system", "probability", "goodput"])?;
    for p in &result.points {
        let goodputs: Vec<f64> = p.trials.iter().flat_map(|t| t.mean_goodput.iter().copied()).collect();
        for (g, prob) in empirical_cdf(&goodputs, CDF_POINTS) {
            w.write_record([
                version.as_str(),
                hash,
                seed.as_str(),
                param,
                &num(p.value),
                p.system.name(),
                &num(prob),
                &num(g),
            ])?;
        }
    }
    w.flush()?;
    files.push("cdf.csv".to_string());

    if spec.trace {
        let mut w = writer(&dir.join("trace.csv"))?;
        w.write_record([
            "schema_version", "config_hash", "master_seed", "param", "value", "system", "replication", "frame",
            "total_scheduled", "total_goodput", "served_users", "hop1_packets", "hop1_errors", "hop2_packets",
            "hop2_errors", "feedback_reals",
        ])?;
        for p in &result.points {
            for t in &p.trials {
                for r in &t.trace {
                    w.write_record([
                        version.clone(),
                        hash.to_string(),
                        seed.clone(),
                        param.to_string(),
                        num(p.value),
                        p.system.name().to_string(),
                        t.replication.to_string(),
                        r.frame.to_string(),
                        num(r.total_scheduled),
                        num(r.total_goodput),
                        r.served_users.to_string(),
                        r.hop1_packets.to_string(),
                        r.hop1_errors.to_string(),
                        r.hop2_packets.to_string(),
                        r.hop2_errors.to_string(),
                        r.feedback_reals.to_string(),
                    ])?;
                }
            }
        }
        w.flush()?;
        files.push("trace.csv".to_string());
    }

    files.push("manifest.json".to_string());
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        code_version: env!("CARGO_PKG_VERSION"),
        config_hash: hash,
        master_seed: spec.master_seed,
        seed_derivation: "splitmix64(master, replication, stream); stream 0 = topology, 1 = frames",
        param,
        values: &spec.values,
        systems: spec.systems.iter().map(|s| s.name()).collect(),
        trials: spec.trials,
        files: files.clone(),
        config: base,
    };
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(dir.join("manifest.json"), text + "\n")?;
    Ok(files)
}

/// Parses a comma-separated value list.
pub fn parse_values(list: &str) -> Result<Vec<f64>> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| invalid(format!("bad sweep value `{s}`"))))
        .collect()
}

/// Builds a worker pool of `workers` threads (0 picks the core count).
pub fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))
}
