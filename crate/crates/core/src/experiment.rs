//! Experiment configuration, scenario runners, metrics and report files.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::consensus::{default_f, liveness_ratio, ConsensusError, EpochConfig, EpochMetrics, World, WorldSpec};
use crate::hash::NodeId;
use crate::rng::stream;
use crate::simnet::{export_trace, Behavior};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NON_OPERATIONAL: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("span must be positive")]
    ZeroSpan,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("committee became non-operational: {0}")]
    NonOperational(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ExperimentError {
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Io(_) => EXIT_IO,
            ExperimentError::NonOperational(_) => EXIT_NON_OPERATIONAL,
            ExperimentError::Config(_) | ExperimentError::ZeroSpan => EXIT_CONFIG,
        }
    }
}

/// Transactions per simulated second: `N_t / T_b`.
pub fn throughput(confirmed: u64, span_secs: f64) -> Result<f64, ExperimentError> {
    if span_secs.is_nan() || span_secs <= 0.0 {
        return Err(ExperimentError::ZeroSpan);
    }
    Ok(confirmed as f64 / span_secs)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub count: usize,
    pub mean: Option<f64>,
    pub p50: Option<f64>,
    pub p95: Option<f64>,
    pub unconfirmed: usize,
}

/// Nearest-rank percentiles over confirmed latencies. Unconfirmed
/// transactions are only counted.
pub fn latency_stats(samples: &[f64], unconfirmed: usize) -> LatencyStats {
    if samples.is_empty() {
        return LatencyStats { unconfirmed, ..LatencyStats::default() };
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let pct = |p: f64| {
        let rank = ((p / 100.0) * s.len() as f64).ceil() as usize;
        s[rank.clamp(1, s.len()) - 1]
    };
    LatencyStats {
        count: s.len(),
        mean: Some(s.iter().sum::<f64>() / s.len() as f64),
        p50: Some(pct(50.0)),
        p95: Some(pct(95.0)),
        unconfirmed,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    ThroughputLatency,
    FaultSweep,
    FairElection,
    EpochStabilization,
}

impl Scenario {
    pub fn as_str(&self) -> &'static str {
        match self {
            Scenario::ThroughputLatency => "throughput-latency",
            Scenario::FaultSweep => "fault-sweep",
            Scenario::FairElection => "fair-election",
            Scenario::EpochStabilization => "epoch-stabilization",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub node_count: usize,
    /// Extra node counts to sweep; empty means just `node_count`.
    pub node_counts: Vec<usize>,
    pub faulty_fraction: f64,
    /// Fault-sweep points; empty means just `faulty_fraction`.
    pub faulty_fractions: Vec<f64>,
    pub faulty_behaviors: BTreeSet<Behavior>,
    pub epochs: u64,
    pub seed: u64,
    /// Independent repetitions per sweep point; repetition `r` uses `seed + r`.
    pub runs: u64,
    pub tx_load: usize,
    pub payload_size: u32,
    pub f: Option<usize>,
    pub initial_rank: Option<f64>,
    pub capability_min_pct: f64,
    pub capability_max_pct: f64,
    /// Epoch whose leader turns malicious for that epoch only
    /// (epoch-stabilization).
    pub attack_epoch: Option<u64>,
    pub epoch: EpochConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scenario: Scenario::ThroughputLatency,
            node_count: 20,
            node_counts: Vec::new(),
            faulty_fraction: 0.0,
            faulty_fractions: Vec::new(),
            faulty_behaviors: [Behavior::WithholdBlocks].into_iter().collect(),
            epochs: 10,
            seed: 0,
            runs: 1,
            tx_load: 200,
            payload_size: 250,
            f: None,
            initial_rank: None,
            capability_min_pct: 5.0,
            capability_max_pct: 100.0,
            attack_epoch: None,
            epoch: EpochConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn for_scenario(scenario: Scenario) -> Self {
        let base = ExperimentConfig { scenario, ..Self::default() };
        match scenario {
            Scenario::ThroughputLatency => ExperimentConfig { node_counts: vec![10, 20, 40, 60], ..base },
            Scenario::FaultSweep => ExperimentConfig { faulty_fractions: vec![0.0, 0.1, 0.2, 0.3], ..base },
            Scenario::FairElection => ExperimentConfig { epochs: 10, ..base },
            Scenario::EpochStabilization => {
                ExperimentConfig { node_count: 100, epochs: 12, tx_load: 1500, attack_epoch: Some(2), ..base }
            }
        }
    }

    pub fn from_toml(s: &str) -> Result<Self, ExperimentError> {
        let c: ExperimentConfig = toml::from_str(s).map_err(|e| ExperimentError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        for n in self.node_counts() {
            if n < 4 {
                return bad(format!("node_count {n} is below 4"));
            }
        }
        for f in self.fractions() {
            if !(0.0..1.0).contains(&f) {
                return bad(format!("faulty fraction {f} outside [0, 1)"));
            }
        }
        if self.epochs == 0 || self.runs == 0 {
            return bad("epochs and runs must be positive".into());
        }
        let (lo, hi) = (self.capability_min_pct, self.capability_max_pct);
        if !(lo > 0.0 && lo <= hi && hi <= 100.0) {
            return bad("capability range must satisfy 0 < min <= max <= 100".into());
        }
        if let Some(r) = self.initial_rank {
            if !r.is_finite() {
                return bad("initial_rank must be finite".into());
            }
        }
        self.epoch.validate().map_err(|e| ExperimentError::Config(e.to_string()))
    }

    pub fn node_counts(&self) -> Vec<usize> {
        if self.node_counts.is_empty() {
            vec![self.node_count]
        } else {
            self.node_counts.clone()
        }
    }

    pub fn fractions(&self) -> Vec<f64> {
        if self.scenario != Scenario::FaultSweep || self.faulty_fractions.is_empty() {
            vec![self.faulty_fraction]
        } else {
            self.faulty_fractions.clone()
        }
    }

    /// Every independent run, in report order.
    pub fn points(&self) -> Vec<RunPoint> {
        let mut out = Vec::new();
        for n in self.node_counts() {
            for frac in self.fractions() {
                for r in 0..self.runs {
                    out.push(RunPoint {
                        index: out.len(),
                        seed: self.seed.wrapping_add(r),
                        node_count: n,
                        faulty_fraction: frac,
                    });
                }
            }
        }
        out
    }

    /// Indices of faulty nodes. Odd indices are used first, so index 0 (the
    /// initial primary) stays honest.
    pub fn faulty_indices(&self, n: usize, fraction: f64) -> Vec<usize> {
        let m = match self.scenario {
            Scenario::FairElection => n / 2,
            _ => (fraction * n as f64).round() as usize,
        };
        (1..n).step_by(2).chain((2..n).step_by(2)).take(m).collect()
    }

    pub fn world_spec(&self, p: &RunPoint) -> WorldSpec {
        let n = p.node_count;
        let faulty = self.faulty_indices(n, p.faulty_fraction);
        let adversaries = faulty.iter().map(|i| (*i, self.faulty_behaviors.clone())).collect();
        let f = self.f.unwrap_or(match self.scenario {
            // enough slack for every faulty node to be evicted
            Scenario::FairElection => (n - faulty.len()).saturating_sub(1) / 3,
            _ => default_f(n),
        });
        let initial_rank = self.initial_rank.or(match self.scenario {
            Scenario::ThroughputLatency => None,
            _ => Some(0.5),
        });
        let capabilities = (self.scenario == Scenario::EpochStabilization).then(|| {
            let mut rng = stream(p.seed, "capabilities");
            let (lo, hi) = (self.capability_min_pct / 100.0, self.capability_max_pct / 100.0);
            (0..n).map(|_| if lo == hi { lo } else { rng.gen_range(lo..=hi) }).collect()
        });
        WorldSpec {
            seed: p.seed,
            node_count: n,
            epoch: self.epoch.clone(),
            adversaries,
            f: Some(f),
            initial_rank,
            capabilities,
            tx_load: self.tx_load,
            payload_size: self.payload_size,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunPoint {
    pub index: usize,
    pub seed: u64,
    pub node_count: usize,
    pub faulty_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub point: RunPoint,
    pub theta: f64,
    pub live: bool,
    pub faulty: Vec<NodeId>,
    pub node_ids: Vec<NodeId>,
    pub capabilities: Vec<f64>,
    pub epochs: Vec<EpochMetrics>,
    pub aborted: Option<String>,
    pub tps: f64,
    pub latency: LatencyStats,
    pub attacked_leader: Option<NodeId>,
    /// Rank of every node after each epoch, in `node_ids` order.
    pub ranks: Vec<Vec<f64>>,
}

impl RunRecord {
    pub fn total_confirmed(&self) -> u64 {
        self.epochs.iter().map(|e| e.confirmed_txs as u64).sum()
    }
}

/// Text artifacts of one run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunArtifacts {
    pub trace: String,
    pub ranking: String,
    pub scp_log: String,
    /// The primary's ledger, JSON lines.
    pub ledger: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub mean_tps: f64,
    /// Per-transaction mean latency over all runs.
    pub mean_latency: Option<f64>,
    pub live_runs: usize,
    pub aborted_runs: usize,
    /// TPS averaged per distinct faulty fraction.
    pub tps_by_fraction: Vec<(f64, f64)>,
}

impl Aggregates {
    pub fn compute(runs: &[RunRecord]) -> Self {
        let mean_tps = if runs.is_empty() { 0.0 } else { runs.iter().map(|r| r.tps).sum::<f64>() / runs.len() as f64 };
        let (mut lat, mut n) = (0.0, 0usize);
        for e in runs.iter().flat_map(|r| &r.epochs) {
            if let Some(m) = e.mean_latency {
                lat += m * e.confirmed_txs as f64;
                n += e.confirmed_txs;
            }
        }
        let mut by_frac: Vec<(f64, f64, usize)> = Vec::new();
        for r in runs {
            match by_frac.iter_mut().find(|(f, _, _)| *f == r.point.faulty_fraction) {
                Some(slot) => {
                    slot.1 += r.tps;
                    slot.2 += 1;
                }
                None => by_frac.push((r.point.faulty_fraction, r.tps, 1)),
            }
        }
        Aggregates {
            mean_tps,
            mean_latency: (n > 0).then(|| lat / n as f64),
            live_runs: runs.iter().filter(|r| r.live).count(),
            aborted_runs: runs.iter().filter(|r| r.aborted.is_some()).count(),
            tps_by_fraction: by_frac.into_iter().map(|(f, t, c)| (f, t / c as f64)).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenario: Scenario,
    pub runs: Vec<RunRecord>,
    pub aggregates: Aggregates,
}

impl MetricsReport {
    /// Line-delimited JSON: one line per epoch, one per run, then the
    /// aggregates.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.runs {
            for e in &r.epochs {
                let line = serde_json::json!({"record": "epoch", "run": r.point.index, "metrics": e});
                writeln!(out, "{line}").unwrap();
            }
            let line = serde_json::json!({"record": "run", "run": r});
            writeln!(out, "{line}").unwrap();
        }
        let line = serde_json::json!({"record": "aggregate", "scenario": self.scenario, "aggregates": self.aggregates});
        writeln!(out, "{line}").unwrap();
        out
    }

    /// One row per (run, epoch).
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "run,seed,node_count,faulty_fraction,epoch,confirmed_blocks,confirmed_txs,tps,raw_ratio,\
             mean_latency,committee_size,theta,consistency,leader_capability,timeouts,conflicts,evicted\n",
        );
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
        for r in &self.runs {
            for e in &r.epochs {
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},{:.6},{},{},{},{:.6},{},{:.6},{},{},{}",
                    r.point.index,
                    r.point.seed,
                    r.point.node_count,
                    r.point.faulty_fraction,
                    e.epoch,
                    e.confirmed_blocks,
                    e.confirmed_txs,
                    e.tps,
                    opt(e.raw_ratio),
                    opt(e.mean_latency),
                    e.committee_size,
                    e.theta,
                    e.consistency,
                    e.leader_capability,
                    e.timeouts,
                    e.conflicts,
                    e.evicted.len()
                )
                .unwrap();
            }
        }
        out
    }
}

/// Runs one sweep point to completion or until the committee fails.
pub fn run_point(config: &ExperimentConfig, p: &RunPoint) -> Result<(RunRecord, RunArtifacts), ExperimentError> {
    let spec = config.world_spec(p);
    let mut world = World::new(&spec).map_err(|e| ExperimentError::Config(e.to_string()))?;
    let liveness = liveness_ratio(world.population()).map_err(|e| ExperimentError::Config(e.to_string()))?;
    let node_ids = world.node_ids().to_vec();
    let faulty = spec.adversaries.keys().map(|i| node_ids[*i]).collect();
    let capabilities = node_ids.iter().map(|id| world.capability(id)).collect();

    let mut aborted = None;
    let mut attacked = None;
    let mut ranks = Vec::new();
    for e in 1..=config.epochs {
        let res = if config.attack_epoch == Some(e) {
            let r = world.step_epoch_with(|w, el| {
                w.set_adversary(el.leader, [Behavior::DoubleSpend, Behavior::Equivocate]);
                attacked = Some(el.leader);
            });
            if let Some(l) = attacked {
                world.clear_adversary(&l);
            }
            r
        } else {
            world.step_epoch()
        };
        match res {
            Ok(_) => {}
            Err(ConsensusError::NonOperational(m)) => {
                aborted = Some(m);
                break;
            }
            Err(ConsensusError::ElectionFailure) => {
                aborted = Some("no eligible producer".into());
                break;
            }
            Err(e) => return Err(ExperimentError::Config(e.to_string())),
        }
        ranks.push(node_ids.iter().map(|id| world.table().rank(id).unwrap_or(0.0)).collect());
    }

    let epochs = world.metrics().to_vec();
    let span = config.epoch.epoch_length as f64 * epochs.len().max(1) as f64;
    let total: u64 = epochs.iter().map(|e| e.confirmed_txs as u64).sum();
    let record = RunRecord {
        point: *p,
        theta: liveness.theta,
        live: liveness.live,
        faulty,
        node_ids,
        capabilities,
        tps: throughput(total, span)?,
        latency: latency_stats(world.latencies(), world.unconfirmed_txs()),
        epochs,
        aborted,
        attacked_leader: attacked,
        ranks,
    };
    let artifacts = RunArtifacts {
        trace: export_trace(world.trace()),
        ranking: world.table().export(),
        scp_log: world.committee().export_log(),
        ledger: world.export_ledger(0),
    };
    Ok((record, artifacts))
}

/// Runs every sweep point, `jobs` at a time. Results are in point order
/// regardless of `jobs`.
pub fn run_experiment(
    config: &ExperimentConfig,
    jobs: usize,
) -> Result<(MetricsReport, Vec<RunArtifacts>), ExperimentError> {
    config.validate()?;
    let points = config.points();
    let jobs = jobs.max(1);
    let mut results: Vec<Option<Result<(RunRecord, RunArtifacts), ExperimentError>>> =
        (0..points.len()).map(|_| None).collect();
    for (chunk_pts, chunk_out) in points.chunks(jobs).zip(results.chunks_mut(jobs)) {
        std::thread::scope(|s| {
            let handles: Vec<_> = chunk_pts.iter().map(|p| s.spawn(move || run_point(config, p))).collect();
            for (h, slot) in handles.into_iter().zip(chunk_out.iter_mut()) {
                *slot = Some(h.join().expect("run thread panicked"));
            }
        });
    }
    let mut runs = Vec::with_capacity(points.len());
    let mut artifacts = Vec::with_capacity(points.len());
    for r in results {
        let (rec, art) = r.expect("every point ran")?;
        runs.push(rec);
        artifacts.push(art);
    }
    let aggregates = Aggregates::compute(&runs);
    Ok((MetricsReport { scenario: config.scenario, runs, aggregates }, artifacts))
}

/// Writes the report, the metrics table and each run's trace, ranking table,
/// session log and ledger into `out`.
pub fn write_report(out: &Path, report: &MetricsReport, artifacts: &[RunArtifacts]) -> Result<(), ExperimentError> {
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("report.jsonl"), report.to_jsonl())?;
    std::fs::write(out.join("metrics.csv"), report.to_csv())?;
    for (r, a) in report.runs.iter().zip(artifacts) {
        let i = r.point.index;
        std::fs::write(out.join(format!("trace_{i}.csv")), &a.trace)?;
        std::fs::write(out.join(format!("ranking_{i}.csv")), &a.ranking)?;
        std::fs::write(out.join(format!("scp_{i}.csv")), &a.scp_log)?;
        std::fs::write(out.join(format!("ledger_{i}.jsonl")), &a.ledger)?;
    }
    Ok(())
}

/// Runs `config` and writes the report. Returns the process exit code.
pub fn run_and_report(config: &ExperimentConfig, out: &Path, jobs: usize) -> Result<i32, ExperimentError> {
    let (report, artifacts) = run_experiment(config, jobs)?;
    write_report(out, &report, &artifacts)?;
    Ok(if report.aggregates.aborted_runs > 0 { EXIT_NON_OPERATIONAL } else { EXIT_OK })
}

/// Per-epoch means of `f` across runs, skipping runs that ended early.
pub fn epoch_means(runs: &[RunRecord], f: impl Fn(&EpochMetrics) -> f64) -> Vec<f64> {
    let n = runs.iter().map(|r| r.epochs.len()).max().unwrap_or(0);
    (0..n)
        .map(|i| {
            let vals: Vec<f64> = runs.iter().filter_map(|r| r.epochs.get(i)).map(&f).collect();
            vals.iter().sum::<f64>() / vals.len() as f64
        })
        .collect()
}

/// Nodes and the ranks they ended with, grouped by faulty flag.
pub fn final_ranks(run: &RunRecord) -> BTreeMap<bool, Vec<f64>> {
    let faulty: BTreeSet<NodeId> = run.faulty.iter().copied().collect();
    let mut out: BTreeMap<bool, Vec<f64>> = BTreeMap::new();
    if let Some(last) = run.ranks.last() {
        for (id, r) in run.node_ids.iter().zip(last) {
            out.entry(faulty.contains(id)).or_default().push(*r);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn throughput_examples() {
        assert_eq!(throughput(2000, 2.0).unwrap(), 1000.0);
        assert_eq!(throughput(0, 5.0).unwrap(), 0.0);
        assert!(matches!(throughput(1, 0.0), Err(ExperimentError::ZeroSpan)));
    }

    #[test]
    fn latency_examples() {
        let s = latency_stats(&[7.5], 0);
        assert_eq!((s.mean, s.p50, s.p95), (Some(7.5), Some(7.5), Some(7.5)));
        let s = latency_stats(&[], 4);
        assert_eq!((s.count, s.mean, s.unconfirmed), (0, None, 4));
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        let s = latency_stats(&v, 0);
        assert_eq!((s.p50, s.p95), (Some(50.0), Some(95.0)));
    }

    #[test]
    fn config_round_trip() {
        for sc in
            [Scenario::ThroughputLatency, Scenario::FaultSweep, Scenario::FairElection, Scenario::EpochStabilization]
        {
            let c = ExperimentConfig::for_scenario(sc);
            assert_eq!(ExperimentConfig::from_toml(&c.to_toml()).unwrap(), c);
        }
    }

    #[test]
    fn invalid_configs() {
        let c = ExperimentConfig { node_count: 3, ..Default::default() };
        assert!(c.validate().is_err());
        let c = ExperimentConfig { faulty_fraction: 1.0, ..Default::default() };
        assert_eq!(c.validate().unwrap_err().exit_code(), EXIT_CONFIG);
        assert!(ExperimentConfig::from_toml("bogus = 1").is_err());
    }

    #[test]
    fn faulty_indices_skip_primary() {
        let c = ExperimentConfig::for_scenario(Scenario::FairElection);
        assert_eq!(c.faulty_indices(6, 0.0), vec![1, 3, 5]);
        let c = ExperimentConfig::for_scenario(Scenario::FaultSweep);
        assert_eq!(c.faulty_indices(10, 0.3), vec![1, 3, 5]);
        assert_eq!(c.faulty_indices(4, 0.75), vec![1, 3, 2]);
    }
}
