//! `boxer-bench ttfb|rtt|failover --pairs N --reps M --out samples.csv`

use std::path::PathBuf;
use std::time::Duration;

use anyhow::bail;
use boxer::bench::cluster::Tools;
use boxer::bench::{self, DrillParams, LatencyParams, LatencySample, Metric};
use clap::{Parser, ValueEnum};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Which {
    Ttfb,
    Rtt,
    Failover,
}

#[derive(Debug, Parser)]
#[command(
    name = "boxer-bench",
    version,
    about = "Overlay latency benchmarks and failover drill"
)]
struct Args {
    which: Which,
    /// Node pairs (latency, default 4) or quorum replicas (failover, default 3).
    #[arg(long)]
    pairs: Option<usize>,
    /// Measured repetitions per pair (latency, default 128) or drills
    /// (failover, default 1).
    #[arg(long)]
    reps: Option<usize>,
    /// Ping-pong payload in bytes.
    #[arg(long, default_value_t = 1024)]
    payload: usize,
    /// Seconds into the drill at which a replica node is killed.
    #[arg(long, default_value_t = 2.0)]
    kill_at: f64,
    /// Drill length in seconds.
    #[arg(long, default_value_t = 7.0)]
    run_for: f64,
    #[arg(long)]
    out: PathBuf,
    /// Also write per-scenario CDF rows (latency) or the timeline (failover).
    #[arg(long)]
    cdf: Option<PathBuf>,
}

fn report(samples: &[LatencySample]) {
    let o = bench::median(&bench::values(samples, "overlay"));
    let n = bench::median(&bench::values(samples, "native"));
    if let (Some(o), Some(n)) = (o, n) {
        println!(
            "median overlay {o} us, native {n} us, ratio {:.2}",
            o as f64 / n as f64
        );
    }
}

fn main() -> anyhow::Result<()> {
    let a = Args::parse();
    let tools = Tools::locate()?;
    match a.which {
        Which::Ttfb | Which::Rtt => {
            let metric = if matches!(a.which, Which::Ttfb) {
                Metric::Ttfb
            } else {
                Metric::Rtt
            };
            let p = LatencyParams {
                pairs: a.pairs.unwrap_or(4),
                reps: a.reps.unwrap_or(128),
                payload: a.payload,
            };
            let samples = bench::latency_bench(&tools, metric, p)?;
            if samples.is_empty() {
                println!("no samples");
                return Ok(());
            }
            bench::write_samples(&a.out, &samples)?;
            if let Some(c) = &a.cdf {
                bench::write_cdf(c, &samples)?;
            }
            report(&samples);
        }
        Which::Failover => {
            if a.kill_at < 0.0 || a.run_for <= 0.0 {
                bail!("--kill-at and --run-for must be positive");
            }
            let p = DrillParams {
                replicas: a.pairs.unwrap_or(3),
                kill_at: Duration::from_secs_f64(a.kill_at),
                run_for: Duration::from_secs_f64(a.run_for),
                ..DrillParams::default()
            };
            let mut samples = Vec::new();
            for run in 0..a.reps.unwrap_or(1) {
                let t = bench::failover_drill(&tools, p)?;
                if let Some(c) = &a.cdf {
                    let path = if run == 0 {
                        c.clone()
                    } else {
                        c.with_extension(format!("{run}.csv"))
                    };
                    t.write_csv(&path)?;
                }
                match t.recovery() {
                    Some(r) => {
                        println!(
                            "drill {run}: pre-kill {:.1} reads/bucket, recovered after {:.0} ms",
                            t.pre_kill_mean,
                            r.as_secs_f64() * 1000.0
                        );
                        samples.push(LatencySample {
                            scenario: "failover".into(),
                            metric: Metric::Recovery,
                            run_id: run.to_string(),
                            value_us: r.as_micros() as u64,
                        });
                    }
                    None if t.kill_us.is_none() => println!("drill {run}: no kill within the run"),
                    None => println!("drill {run}: throughput did not recover"),
                }
            }
            bench::write_samples(&a.out, &samples)?;
        }
    }
    Ok(())
}
