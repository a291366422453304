//! Experiment sweeps over protocols, peer counts and seeds, the named
//! scenario presets, and CSV plus JSON result emission.

use crate::gf::FieldSpec;
use crate::overlay::{CapacityTier, ChurnModel, DeparturePolicy};
use crate::par::Execution;
use crate::sim::{self, MetricsReport, ProtocolKind, SimConfig, SimError};
use serde::{Deserialize, Deserializer, Serialize};
use serde_json::{Map, Value};
use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config: {0}")]
    Parse(String),
    #[error("invalid experiment: {0}")]
    Invalid(String),
    #[error("conflicting settings: {0}")]
    Conflict(String),
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arrangement {
    /// Equal capacities, every peer present from the start.
    #[default]
    Homogeneous,
    /// As homogeneous, with independent per-transmission losses.
    HomogeneousLinkfail,
    /// Tiered capacities, peers arriving during the run and staying.
    DynamicStay,
    /// Tiered capacities, peers arriving during the run and leaving once done.
    DynamicLeave,
}

impl Arrangement {
    pub fn name(self) -> &'static str {
        match self {
            Arrangement::Homogeneous => "homogeneous",
            Arrangement::HomogeneousLinkfail => "homogeneous-linkfail",
            Arrangement::DynamicStay => "dynamic-stay",
            Arrangement::DynamicLeave => "dynamic-leave",
        }
    }

    pub fn is_dynamic(self) -> bool {
        matches!(self, Arrangement::DynamicStay | Arrangement::DynamicLeave)
    }
}

/// Arrivals of the dynamic arrangements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChurnParams {
    pub initial_fraction: f64,
    pub arrival_rate: f64,
    pub mean_lifetime: Option<f64>,
}

impl Default for ChurnParams {
    fn default() -> Self {
        ChurnParams { initial_fraction: 0.5, arrival_rate: 10.0, mean_lifetime: None }
    }
}

fn default_tiers() -> Vec<CapacityTier> {
    vec![
        CapacityTier { fraction: 0.5, weight: 0.5 },
        CapacityTier { fraction: 0.3, weight: 1.0 },
        CapacityTier { fraction: 0.2, weight: 2.0 },
    ]
}

fn one_or_many<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<i64>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(i64),
        Many(Vec<i64>),
    }
    Ok(match OneOrMany::deserialize(d)? {
        OneOrMany::One(n) => vec![n],
        OneOrMany::Many(v) => v,
    })
}

/// Keys of the `sim` block that a top-level field already controls.
const OWNED_KEYS: [&str; 10] = [
    "protocol",
    "seed",
    "content_size",
    "chunk_size",
    "chunks_per_segment",
    "group_size",
    "field",
    "horizon",
    "churn",
    "loss_probability",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Stem of the output files.
    pub name: String,
    pub protocols: Vec<ProtocolKind>,
    /// One peer count or a sweep list.
    #[serde(deserialize_with = "one_or_many")]
    pub peers: Vec<i64>,
    /// Base seed; run `i` of each point uses `seed + i`.
    pub seed: Option<u64>,
    /// Runs per (protocol, peer count) point.
    pub seeds: u32,
    pub arrangement: Arrangement,
    pub content_size: u64,
    pub chunk_size: u32,
    pub chunks_per_segment: u32,
    pub group_size: u32,
    pub field: FieldSpec,
    pub horizon: f64,
    /// Loss probability under the link-failure arrangement.
    pub link_failure: f64,
    pub churn: ChurnParams,
    /// Capacity tiers of the dynamic arrangements.
    pub tiers: Vec<CapacityTier>,
    /// Further simulator settings, merged over the defaults.
    pub sim: Map<String, Value>,
    pub out: Option<PathBuf>,
    #[serde(skip_serializing)]
    pub execution: Execution,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let s = SimConfig::default();
        ExperimentConfig {
            name: "experiment".into(),
            protocols: ProtocolKind::ALL.to_vec(),
            peers: vec![i64::from(s.topology.peers)],
            seed: None,
            seeds: 1,
            arrangement: Arrangement::Homogeneous,
            content_size: s.content_size,
            chunk_size: s.chunk_size,
            chunks_per_segment: s.chunks_per_segment,
            group_size: s.group_size,
            field: s.field,
            horizon: s.horizon,
            link_failure: 0.05,
            churn: ChurnParams::default(),
            tiers: default_tiers(),
            sim: Map::new(),
            out: None,
            execution: Execution::default(),
        }
    }
}

/// Parses a JSON experiment document; unknown keys are rejected.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ExperimentError> {
    serde_json::from_str(text).map_err(|e| ExperimentError::Parse(e.to_string()))
}

/// Reads and parses a config file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, ExperimentError> {
    let text =
        std::fs::read_to_string(path).map_err(|source| ExperimentError::Io { path: path.to_path_buf(), source })?;
    parse_config(&text).map_err(|e| match e {
        ExperimentError::Parse(m) => ExperimentError::Parse(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn merge(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, p) => *b = p.clone(),
    }
}

impl ExperimentConfig {
    /// Checks the sweep and every simulator config it expands to.
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Invalid(m));
        if self.seed.is_none() {
            return bad("a seed is required".into());
        }
        if self.name.is_empty() || !self.name.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) {
            return bad(format!(
                "name `{}` must be non-empty and use only letters, digits, `-`, `_` or `.`",
                self.name
            ));
        }
        if self.protocols.is_empty() {
            return bad("at least one protocol is required".into());
        }
        if self.protocols.iter().collect::<BTreeSet<_>>().len() != self.protocols.len() {
            return bad("protocols must not repeat".into());
        }
        if self.peers.is_empty() {
            return bad("at least one peer count is required".into());
        }
        if let Some(&n) = self.peers.iter().find(|&&n| n < 1 || n > i64::from(u32::MAX)) {
            return bad(format!("peer counts must be positive, got {n}"));
        }
        if self.seeds == 0 {
            return bad("seeds must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.link_failure) {
            return bad(format!("link failure must lie in [0, 1), got {}", self.link_failure));
        }
        for key in self.sim.keys() {
            if OWNED_KEYS.contains(&key.as_str()) {
                return Err(ExperimentError::Conflict(format!("`sim.{key}` duplicates the top-level setting")));
            }
        }
        if let Some(Value::Object(t)) = self.sim.get("topology") {
            for key in ["peers", "tiers"] {
                if t.contains_key(key) {
                    return Err(ExperimentError::Conflict(format!(
                        "`sim.topology.{key}` duplicates the top-level setting"
                    )));
                }
            }
        }
        for proto in &self.protocols {
            for &n in &self.peers {
                self.sim_config(*proto, n as u32, self.seed.unwrap_or(0))?.validate()?;
            }
        }
        Ok(())
    }

    pub fn peer_counts(&self) -> Vec<u32> {
        self.peers.iter().map(|&n| n as u32).collect()
    }

    /// Simulator config of one run.
    pub fn sim_config(&self, protocol: ProtocolKind, peers: u32, seed: u64) -> Result<SimConfig, ExperimentError> {
        let mut c = SimConfig::default();
        if !self.sim.is_empty() {
            let mut v = serde_json::to_value(&c).expect("config serializes");
            merge(&mut v, &Value::Object(self.sim.clone()));
            c = serde_json::from_value(v).map_err(|e| ExperimentError::Parse(format!("sim: {e}")))?;
        }
        c.protocol = protocol;
        c.seed = seed;
        c.topology.peers = peers;
        c.content_size = self.content_size;
        c.chunk_size = self.chunk_size;
        c.chunks_per_segment = self.chunks_per_segment;
        c.group_size = self.group_size;
        c.field = self.field;
        c.horizon = self.horizon;
        c.loss_probability = 0.0;
        c.churn = None;
        c.topology.tiers = Vec::new();
        match self.arrangement {
            Arrangement::Homogeneous => {}
            Arrangement::HomogeneousLinkfail => c.loss_probability = self.link_failure,
            Arrangement::DynamicStay | Arrangement::DynamicLeave => {
                c.topology.tiers = self.tiers.clone();
                c.churn = Some(ChurnModel {
                    initial_fraction: self.churn.initial_fraction,
                    arrival_rate: self.churn.arrival_rate,
                    mean_lifetime: self.churn.mean_lifetime,
                    policy: if self.arrangement == Arrangement::DynamicStay {
                        DeparturePolicy::StayAfterDownload
                    } else {
                        DeparturePolicy::LeaveAfterDownload
                    },
                });
            }
        }
        Ok(c)
    }

    /// Every run of the sweep in output order.
    pub fn runs(&self) -> Result<Vec<SimConfig>, ExperimentError> {
        let base = self.seed.ok_or_else(|| ExperimentError::Invalid("a seed is required".into()))?;
        let mut out = Vec::new();
        for &proto in &self.protocols {
            for n in self.peer_counts() {
                for i in 0..u64::from(self.seeds) {
                    out.push(self.sim_config(proto, n, base.wrapping_add(i))?);
                }
            }
        }
        Ok(out)
    }

    /// The same sweep under the homogeneous arrangement, for arrangements
    /// that are measured against it.
    pub fn baseline(&self) -> Option<ExperimentConfig> {
        (self.arrangement != Arrangement::Homogeneous)
            .then(|| ExperimentConfig { arrangement: Arrangement::Homogeneous, ..self.clone() })
    }
}

/// A named scenario and the claim it probes.
#[derive(Debug, Clone)]
pub struct Preset {
    pub name: &'static str,
    pub probes: &'static str,
    pub config: ExperimentConfig,
}

/// All scenario presets; seeds are left for the caller.
pub fn presets() -> Vec<Preset> {
    let base = |name: &str, arrangement, peers: &[i64], seeds| ExperimentConfig {
        name: name.into(),
        arrangement,
        peers: peers.to_vec(),
        seeds,
        ..ExperimentConfig::default()
    };
    vec![
        Preset {
            name: "fig4",
            probes: "average finish time: DSNC at most 0.9 x TNNC and no more than FNCM, means over 10 seeds",
            config: base("fig4", Arrangement::Homogeneous, &[100, 200, 400], 10),
        },
        Preset {
            name: "fig5",
            probes: "average finish time with 5% independent link losses: DSNC and FNCM below TNNC",
            config: base("fig5", Arrangement::HomogeneousLinkfail, &[100, 200, 400], 5),
        },
        Preset {
            name: "fig6",
            probes: "mean link stress: DSNC no more than FNCM at 100 peers and above",
            config: base("fig6", Arrangement::Homogeneous, &[50, 100, 200, 400], 5),
        },
        Preset {
            name: "fig7",
            probes: "arrivals during the run, peers stay: increase over the homogeneous baseline, TNNC above DSNC",
            config: base("fig7", Arrangement::DynamicStay, &[100, 200], 10),
        },
        Preset {
            name: "fig8",
            probes: "arrivals during the run, peers leave: TNNC increase at least 1.5 x the DSNC increase",
            config: base("fig8", Arrangement::DynamicLeave, &[100, 200], 10),
        },
        Preset {
            name: "fig9",
            probes: "share of download time per segment over four segments",
            config: ExperimentConfig {
                content_size: 4 * sim::MIB,
                ..base("fig9", Arrangement::Homogeneous, &[200], 5)
            },
        },
        Preset {
            name: "fig10",
            probes: "coding-vector overhead: DSNC group_size bytes per packet against FNCM segment bytes, TNNC zero",
            config: ExperimentConfig {
                content_size: 8 * sim::MIB,
                ..base("fig10", Arrangement::Homogeneous, &[100], 3)
            },
        },
    ]
}

pub fn preset(name: &str) -> Result<ExperimentConfig, ExperimentError> {
    presets()
        .into_iter()
        .find(|p| p.name == name)
        .map(|p| p.config)
        .ok_or_else(|| ExperimentError::UnknownPreset(name.into()))
}

/// Means over the seeds of one (protocol, peer count) point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub protocol: ProtocolKind,
    pub peers: u32,
    pub runs: u32,
    pub avg_finish: f64,
    pub max_finish: f64,
    pub failure_rate: f64,
    pub mean_link_stress: f64,
    pub overhead_bytes: f64,
    pub access_link_bytes: f64,
    pub throughput: f64,
    pub non_innovative: f64,
}

/// Relative change of the average finish time against the baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Degradation {
    pub protocol: ProtocolKind,
    pub peers: u32,
    pub baseline_avg_finish: f64,
    pub avg_finish: f64,
    pub relative_increase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub reports: Vec<MetricsReport>,
    pub aggregates: Vec<Aggregate>,
    pub baseline: Option<Vec<Aggregate>>,
    pub degradation: Vec<Degradation>,
    /// Runs that stalled or hit the horizon.
    pub flagged: Vec<String>,
}

impl ExperimentResult {
    pub fn aggregate(&self, protocol: ProtocolKind, peers: u32) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.protocol == protocol && a.peers == peers)
    }

    pub fn degradation_of(&self, protocol: ProtocolKind, peers: u32) -> Option<&Degradation> {
        self.degradation.iter().find(|d| d.protocol == protocol && d.peers == peers)
    }
}

fn aggregate(config: &ExperimentConfig, reports: &[MetricsReport]) -> Vec<Aggregate> {
    let mut out = Vec::new();
    for &protocol in &config.protocols {
        for peers in config.peer_counts() {
            let rs: Vec<&MetricsReport> =
                reports.iter().filter(|r| r.protocol == protocol.name() && r.peers == peers).collect();
            let n = rs.len() as f64;
            let mean = |f: &dyn Fn(&MetricsReport) -> f64| rs.iter().map(|r| f(r)).sum::<f64>() / n;
            out.push(Aggregate {
                protocol,
                peers,
                runs: rs.len() as u32,
                avg_finish: mean(&|r| r.avg_finish_time),
                max_finish: mean(&|r| r.max_finish_time),
                failure_rate: mean(&|r| r.failure_rate),
                mean_link_stress: mean(&|r| r.mean_link_stress),
                overhead_bytes: mean(&|r| r.message_overhead as f64),
                access_link_bytes: mean(&|r| r.access_link_traffic as f64),
                throughput: mean(&|r| r.throughput),
                non_innovative: mean(&|r| r.non_innovative as f64),
            });
        }
    }
    out
}

fn sweep(config: &ExperimentConfig) -> Result<Vec<MetricsReport>, ExperimentError> {
    let runs = config.runs()?;
    let results = config.execution.map(runs.len(), |i| sim::run(&runs[i]));
    let mut reports = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    for r in &mut reports {
        r.links.clear();
    }
    Ok(reports)
}

/// Runs every (protocol, peer count, seed) combination, plus the homogeneous
/// baseline for the other arrangements.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult, ExperimentError> {
    config.validate()?;
    let reports = sweep(config)?;
    let aggregates = aggregate(config, &reports);
    let (baseline, degradation) = match config.baseline() {
        Some(b) => {
            let base = aggregate(&b, &sweep(&b)?);
            let degradation = aggregates
                .iter()
                .zip(&base)
                .map(|(a, b)| Degradation {
                    protocol: a.protocol,
                    peers: a.peers,
                    baseline_avg_finish: b.avg_finish,
                    avg_finish: a.avg_finish,
                    relative_increase: a.avg_finish / b.avg_finish - 1.0,
                })
                .collect();
            (Some(base), degradation)
        }
        None => (None, Vec::new()),
    };
    let flagged = reports
        .iter()
        .filter(|r| r.stalled || r.horizon_exceeded)
        .map(|r| {
            let why = if r.stalled { "stalled" } else { "horizon exceeded" };
            format!("{} peers={} seed={}: {why}", r.protocol, r.peers, r.seed)
        })
        .collect();
    Ok(ExperimentResult { config: config.clone(), reports, aggregates, baseline, degradation, flagged })
}

pub const CSV_COLUMNS: [&str; 10] = [
    "protocol",
    "peers",
    "seed",
    "throughput",
    "avg_finish",
    "max_finish",
    "failure_rate",
    "mean_link_stress",
    "overhead_bytes",
    "access_link_bytes",
];

/// The fixed-column CSV of the reports.
pub fn csv_bytes(reports: &[MetricsReport]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_COLUMNS).expect("in-memory write");
    for r in reports {
        let f = |x: f64| format!("{x:.6}");
        w.write_record([
            r.protocol.clone(),
            r.peers.to_string(),
            r.seed.to_string(),
            f(r.throughput),
            f(r.avg_finish_time),
            f(r.max_finish_time),
            f(r.failure_rate),
            f(r.mean_link_stress),
            r.message_overhead.to_string(),
            r.access_link_traffic.to_string(),
        ])
        .expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ExperimentError> {
    let io = |source| ExperimentError::Io { path: path.to_path_buf(), source };
    let file = path.file_name().and_then(|f| f.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{file}.tmp"));
    std::fs::write(&tmp, bytes).map_err(io)?;
    std::fs::rename(&tmp, path).map_err(io)
}

/// Writes `<name>.csv` and `<name>.json` into `dir`; returns both paths.
pub fn emit_results(result: &ExperimentResult, dir: &Path) -> Result<(PathBuf, PathBuf), ExperimentError> {
    std::fs::create_dir_all(dir).map_err(|source| ExperimentError::Io { path: dir.to_path_buf(), source })?;
    let csv_path = dir.join(format!("{}.csv", result.config.name));
    let json_path = dir.join(format!("{}.json", result.config.name));
    write_atomic(&csv_path, &csv_bytes(&result.reports))?;
    let mut json = serde_json::to_vec_pretty(result).expect("result serializes");
    json.push(b'\n');
    write_atomic(&json_path, &json)?;
    Ok((csv_path, json_path))
}

/// Table comparing the protocols at each peer count.
pub fn summary_table(result: &ExperimentResult) -> String {
    let mut s = String::new();
    let c = &result.config;
    let _ = writeln!(s, "{} ({}, {} seed(s) per point)", c.name, c.arrangement.name(), c.seeds);
    let _ = writeln!(
        s,
        "{:<6} {:>6} {:>11} {:>11} {:>8} {:>8} {:>14} {:>14} {:>9}",
        "proto", "peers", "avg_finish", "max_finish", "failure", "stress", "overhead_B", "access_B", "vs_TNNC"
    );
    for a in &result.aggregates {
        let tnnc = result.aggregate(ProtocolKind::Tnnc, a.peers).map(|t| a.avg_finish / t.avg_finish);
        let _ = writeln!(
            s,
            "{:<6} {:>6} {:>11.3} {:>11.3} {:>8.4} {:>8.4} {:>14.0} {:>14.0} {:>9}",
            a.protocol.name(),
            a.peers,
            a.avg_finish,
            a.max_finish,
            a.failure_rate,
            a.mean_link_stress,
            a.overhead_bytes,
            a.access_link_bytes,
            tnnc.map_or("-".to_string(), |r| format!("{r:.3}")),
        );
    }
    if !result.degradation.is_empty() {
        let _ = writeln!(s, "increase over the homogeneous baseline:");
        for d in &result.degradation {
            let _ = writeln!(
                s,
                "{:<6} {:>6} {:>11.3} -> {:>9.3} ({:+.1}%)",
                d.protocol.name(),
                d.peers,
                d.baseline_avg_finish,
                d.avg_finish,
                100.0 * d.relative_increase
            );
        }
    }
    for f in &result.flagged {
        let _ = writeln!(s, "flagged: {f}");
    }
    s
}
