//! Latency microbenchmarks and the failover drill, run against a localhost
//! cluster of node processes.

pub mod cluster;

use std::fmt;
use std::path::Path;
use std::time::Duration;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use cluster::{free_port, monotonic_us, Cluster, Spawn, Tools};

pub const WARMUP: usize = 32;
const OVERLAY_PORT: u16 = 9000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Ttfb,
    Rtt,
    Recovery,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Ttfb => "ttfb",
            Metric::Rtt => "rtt",
            Metric::Recovery => "recovery",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencySample {
    pub scenario: String,
    pub metric: Metric,
    pub run_id: String,
    pub value_us: u64,
}

pub fn write_samples(path: &Path, samples: &[LatencySample]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for s in samples {
        w.serialize(s)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_samples(r: impl std::io::Read) -> anyhow::Result<Vec<LatencySample>> {
    csv::Reader::from_reader(r)
        .deserialize()
        .map(|r| r.map_err(Into::into))
        .collect()
}

/// Values of one scenario, in input order.
pub fn values(samples: &[LatencySample], scenario: &str) -> Vec<u64> {
    samples
        .iter()
        .filter(|s| s.scenario == scenario)
        .map(|s| s.value_us)
        .collect()
}

/// Lower median.
pub fn median(values: &[u64]) -> Option<u64> {
    let mut v = values.to_vec();
    v.sort_unstable();
    v.get(v.len().saturating_sub(1) / 2).copied()
}

/// Empirical CDF as (value, fraction of samples <= value), one row per
/// distinct value.
pub fn cdf(values: &[u64]) -> Vec<(u64, f64)> {
    let mut v = values.to_vec();
    v.sort_unstable();
    let n = v.len() as f64;
    let mut rows: Vec<(u64, f64)> = Vec::new();
    for (i, x) in v.iter().enumerate() {
        let frac = (i + 1) as f64 / n;
        match rows.last_mut() {
            Some(last) if last.0 == *x => last.1 = frac,
            _ => rows.push((*x, frac)),
        }
    }
    rows
}

/// CDF rows for every scenario: `scenario,value_us,fraction`.
pub fn write_cdf(path: &Path, samples: &[LatencySample]) -> anyhow::Result<()> {
    let mut scenarios: Vec<&str> = samples.iter().map(|s| s.scenario.as_str()).collect();
    scenarios.sort_unstable();
    scenarios.dedup();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["scenario", "value_us", "fraction"])?;
    for sc in scenarios {
        for (v, f) in cdf(&values(samples, sc)) {
            w.write_record([sc.to_string(), v.to_string(), format!("{f:.6}")])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy)]
pub struct LatencyParams {
    pub pairs: usize,
    pub reps: usize,
    pub payload: usize,
}

impl Default for LatencyParams {
    fn default() -> Self {
        LatencyParams {
            pairs: 4,
            reps: 128,
            payload: 1024,
        }
    }
}

/// Paired overlay/native samples. For each pair a server node and a client
/// node are started; the client guest measures both paths alternately in
/// one process lifetime. Pairs run one after another.
pub fn latency_bench(
    tools: &Tools,
    metric: Metric,
    p: LatencyParams,
) -> anyhow::Result<Vec<LatencySample>> {
    if p.reps == 0 || p.pairs == 0 {
        return Ok(Vec::new());
    }
    let mut cluster = Cluster::start(tools.clone())?;
    let mut all = Vec::new();
    for pair in 0..p.pairs {
        let scenario = |s: &str| format!("{metric} pair {pair} {s}");
        let server_name = format!("server-{pair}");
        let native_port = free_port()?.to_string();
        let port = OVERLAY_PORT.to_string();
        let _server = cluster.join(Spawn::named(&server_name).guest(
            tools,
            &[
                "latency-server",
                "--port",
                &port,
                "--native-port",
                &native_port,
            ],
        ))?;
        let out = cluster.root().join(format!("{metric}-{pair}.csv"));
        let (reps, warmup, payload) = (
            p.reps.to_string(),
            WARMUP.to_string(),
            p.payload.to_string(),
        );
        let mut client = cluster.join(
            Spawn::named(&format!("client-{pair}"))
                .wait_for(&[&server_name])
                .guest(
                    tools,
                    &[
                        "latency-client",
                        "--host",
                        &server_name,
                        "--port",
                        &port,
                        "--native-port",
                        &native_port,
                        "--metric",
                        &metric.to_string(),
                        "--reps",
                        &reps,
                        "--warmup",
                        &warmup,
                        "--payload",
                        &payload,
                        "--run-id",
                        &pair.to_string(),
                        "--out",
                        &out.display().to_string(),
                    ],
                ),
        )?;
        let status = client.wait_timeout(Duration::from_secs(120))?;
        if !status.success() {
            bail!(
                "{}: client failed ({status}): {}",
                scenario("run"),
                client.guest_stderr().trim()
            );
        }
        let text = std::fs::read(&out).with_context(|| scenario("samples"))?;
        all.extend(read_guest_rows(&text)?);
    }
    Ok(all)
}

/// The guest writes headerless `scenario,metric,run_id,value_us` rows with
/// scenario `overlay` or `native`; the run id is the pair index.
fn read_guest_rows(text: &[u8]) -> anyhow::Result<Vec<LatencySample>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(text);
    let rows: Result<Vec<LatencySample>, _> = r.deserialize().collect();
    let rows = rows?;
    if let Some(bad) = rows.iter().find(|s| s.value_us == 0) {
        bail!("zero-valued sample in {}", bad.scenario);
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy)]
pub struct DrillParams {
    pub replicas: usize,
    pub kill_at: Duration,
    pub run_for: Duration,
    pub bucket: Duration,
    /// Service time of one read at a replica.
    pub service: Duration,
    /// Start a replacement node right after the kill.
    pub replace: bool,
}

impl Default for DrillParams {
    fn default() -> Self {
        DrillParams {
            replicas: 3,
            kill_at: Duration::from_secs(2),
            run_for: Duration::from_secs(7),
            bucket: Duration::from_millis(100),
            service: Duration::from_millis(2),
            replace: true,
        }
    }
}

/// Result of one failover drill. Times are monotonic microseconds.
#[derive(Debug, Clone)]
pub struct Timeline {
    /// (bucket start, completed reads)
    pub buckets: Vec<(u64, u64)>,
    pub bucket_us: u64,
    /// Client-side membership events: (time, "join name" / "leave name").
    pub events: Vec<(u64, String)>,
    pub kill_us: Option<u64>,
    pub join_complete_us: Option<u64>,
    pub pre_kill_mean: f64,
    /// End of the first post-kill bucket at or above 90% of the pre-kill mean.
    pub recovered_us: Option<u64>,
}

impl Timeline {
    pub fn recovery(&self) -> Option<Duration> {
        Some(Duration::from_micros(
            self.recovered_us?.checked_sub(self.kill_us?)?,
        ))
    }

    /// Buckets after the kill that stayed below the threshold.
    pub fn dip(&self) -> usize {
        let (Some(k), Some(r)) = (self.kill_us, self.recovered_us) else {
            return 0;
        };
        self.buckets
            .iter()
            .filter(|(t, _)| *t >= k && *t + self.bucket_us < r)
            .count()
    }

    pub fn write_csv(&self, path: &Path) -> anyhow::Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["t_ms", "reads", "event"])?;
        let t0 = self.buckets.first().map(|b| b.0).unwrap_or(0);
        let ms = |t: u64| format!("{:.1}", t.saturating_sub(t0) as f64 / 1000.0);
        let mut rows: Vec<(u64, String, String)> = self
            .buckets
            .iter()
            .map(|(t, n)| (*t, n.to_string(), String::new()))
            .collect();
        rows.extend(
            self.events
                .iter()
                .map(|(t, e)| (*t, String::new(), e.clone())),
        );
        if let Some(k) = self.kill_us {
            rows.push((k, String::new(), "kill".into()));
        }
        if let Some(j) = self.join_complete_us {
            rows.push((j, String::new(), "replacement ready".into()));
        }
        if let Some(r) = self.recovered_us {
            rows.push((r, String::new(), "recovered".into()));
        }
        rows.sort_by_key(|r| r.0);
        for (t, n, e) in rows {
            w.write_record([ms(t), n, e])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Pre-kill mean and recovery point from a bucket series.
pub fn analyze(
    buckets: &[(u64, u64)],
    bucket_us: u64,
    kill_us: Option<u64>,
    skip_us: u64,
) -> (f64, Option<u64>) {
    let Some(first) = buckets.first().map(|b| b.0) else {
        return (0.0, None);
    };
    let steady_from = first + skip_us;
    let before: Vec<u64> = buckets
        .iter()
        .filter(|(t, _)| *t >= steady_from && kill_us.is_none_or(|k| *t + bucket_us <= k))
        .map(|b| b.1)
        .collect();
    let mean = if before.is_empty() {
        0.0
    } else {
        before.iter().sum::<u64>() as f64 / before.len() as f64
    };
    let Some(k) = kill_us else {
        return (mean, None);
    };
    let rec = buckets
        .iter()
        .find(|(t, n)| *t >= k && *n as f64 >= 0.9 * mean)
        .map(|(t, _)| t + bucket_us);
    (mean, rec)
}

/// Runs `replicas` quorum replicas on their own nodes and a fan-out reader
/// on another. At `kill_at` one replica's node is killed and a replacement
/// node joins.
pub fn failover_drill(tools: &Tools, p: DrillParams) -> anyhow::Result<Timeline> {
    let port = OVERLAY_PORT.to_string();
    let service = p.service.as_micros().to_string();
    let replica = |name: &str| {
        Spawn::named(name).guest(
            tools,
            &["quorum-replica", "--port", &port, "--service-us", &service],
        )
    };
    let mut cluster = Cluster::start(tools.clone())?;
    let steady_by = std::time::Instant::now() + Duration::from_secs(30);
    let mut replicas = Vec::new();
    let mut names = Vec::new();
    for i in 1..=p.replicas {
        let name = format!("replica-{i}");
        replicas.push(cluster.join(replica(&name))?);
        names.push(name);
    }
    let out = cluster.root().join("timeline.csv");
    let wait: Vec<&str> = names.iter().map(String::as_str).collect();
    let mut client = cluster.join(Spawn::named("reader").wait_for(&wait).guest(
        tools,
        &[
            "quorum-client",
            "--port",
            &port,
            "--duration-ms",
            &p.run_for.as_millis().to_string(),
            "--bucket-ms",
            &p.bucket.as_millis().to_string(),
            "--out",
            &out.display().to_string(),
        ],
    ))?;
    if std::time::Instant::now() > steady_by {
        bail!("cluster took more than 30 s to reach steady state");
    }
    let started = client.ready_us;

    let mut kill_us = None;
    let mut join_complete_us = None;
    let mut _replacement = None;
    if p.kill_at < p.run_for {
        let target = started + p.kill_at.as_micros() as u64;
        let now = monotonic_us();
        if target > now {
            std::thread::sleep(Duration::from_micros(target - now));
        }
        let mut victim = replicas.remove(0);
        kill_us = Some(monotonic_us());
        victim.kill();
        if p.replace {
            let r = cluster.join(replica(&format!("replica-{}", p.replicas + 1)))?;
            join_complete_us = Some(r.ready_us);
            _replacement = Some(r);
        }
    }

    let status = client.wait_timeout(p.run_for + Duration::from_secs(30))?;
    if !status.success() {
        bail!(
            "failover: reader failed ({status}): {}",
            client.guest_stderr().trim()
        );
    }
    let text = std::fs::read_to_string(&out).context("failover: reading timeline")?;
    let mut buckets = Vec::new();
    let mut events = Vec::new();
    for line in text.lines().skip(1) {
        let mut f = line.splitn(3, ',');
        let (Some(kind), Some(t), Some(v)) = (f.next(), f.next(), f.next()) else {
            continue;
        };
        let t: u64 = t.parse()?;
        match kind {
            "bucket" => buckets.push((t, v.parse()?)),
            _ => events.push((t, v.to_string())),
        }
    }
    let bucket_us = p.bucket.as_micros() as u64;
    // the reader connects to replicas as their join events arrive
    let (pre_kill_mean, recovered_us) = analyze(&buckets, bucket_us, kill_us, 500_000);
    Ok(Timeline {
        buckets,
        bucket_us,
        events,
        kill_us,
        join_complete_us,
        pre_kill_mean,
        recovered_us,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cdf_merges_ties_and_ends_at_one() {
        let c = cdf(&[3, 1, 3, 2]);
        assert_eq!(c, vec![(1, 0.25), (2, 0.5), (3, 1.0)]);
        assert!(cdf(&[]).is_empty());
    }

    #[test]
    fn lower_median() {
        assert_eq!(median(&[4, 1, 3, 2]), Some(2));
        assert_eq!(median(&[5]), Some(5));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn recovery_is_first_full_bucket_after_kill() {
        let b: Vec<(u64, u64)> = [0u64, 150, 150, 150, 150, 100, 100, 140, 150]
            .iter()
            .enumerate()
            .map(|(i, n)| (i as u64 * 100, *n))
            .collect();
        let (mean, rec) = analyze(&b, 100, Some(500), 100);
        assert_eq!(mean, 150.0);
        assert_eq!(rec, Some(800));
        let (_, none) = analyze(&b, 100, None, 100);
        assert_eq!(none, None);
    }

    #[test]
    fn guest_rows_parse() {
        let rows = read_guest_rows(b"overlay,ttfb,0,12\nnative,ttfb,0,9\n").unwrap();
        assert_eq!(
            rows[1],
            LatencySample {
                scenario: "native".into(),
                metric: Metric::Ttfb,
                run_id: "0".into(),
                value_us: 9
            }
        );
        assert!(read_guest_rows(b"overlay,rtt,0,0\n").is_err());
    }
}
