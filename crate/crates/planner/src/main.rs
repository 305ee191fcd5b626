//! `boxer-plan`: cost curve and savings table for a request trace.

use std::path::PathBuf;

use anyhow::Context;
use boxer_planner::{list_price_params, load_trace, savings_table, sweep, CostParams, Synthetic};
use clap::Parser;

#[derive(Debug, Parser)]
#[command(
    name = "boxer-plan",
    version,
    about = "VM-plus-function deployment cost planner"
)]
struct Args {
    /// `timestamp,requests` CSV; the bundled synthetic trace when omitted.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// VM requests per interval per core.
    #[arg(long)]
    alpha: Option<f64>,
    /// Function requests per interval per core.
    #[arg(long)]
    gamma: Option<f64>,
    /// VM price per core per interval.
    #[arg(long)]
    price_vm: Option<f64>,
    /// Function price per core per interval.
    #[arg(long)]
    price_fn: Option<f64>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
    mult: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "100,99,95,90")]
    percentiles: Vec<f64>,
    #[arg(long, default_value_t = 200)]
    steps: usize,
    /// Round core counts up to whole cores.
    #[arg(long)]
    ceil_cores: bool,
    /// Savings table CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Cost curve CSV (one column per multiplier).
    #[arg(long)]
    curve: Option<PathBuf>,
    /// Write the trace that was used.
    #[arg(long)]
    write_trace: Option<PathBuf>,
}

fn main() -> anyhow::Result<()> {
    let a = Args::parse();
    let trace = match &a.trace {
        Some(p) => load_trace(p)?,
        None => Synthetic::default().generate(),
    };
    if let Some(p) = &a.write_trace {
        trace.write_csv(std::fs::File::create(p)?)?;
    }
    let d = list_price_params();
    let params = CostParams {
        alpha: a.alpha.unwrap_or(d.alpha),
        gamma: a.gamma.unwrap_or(d.gamma),
        price_vm: a.price_vm.unwrap_or(d.price_vm),
        price_fn: a.price_fn.unwrap_or(d.price_fn),
        multiplier: 1.0,
        ceil_cores: a.ceil_cores,
    };
    params.validate()?;
    println!(
        "trace: {} intervals of {}s, peak {}",
        trace.len(),
        trace.interval_s,
        trace.peak()
    );

    let plans = a
        .mult
        .iter()
        .map(|m| sweep(&trace, &params.with_multiplier(*m), a.steps))
        .collect::<Result<Vec<_>, _>>()?;
    for (m, p) in a.mult.iter().zip(&plans) {
        println!(
            "{m}x: best beta {:.1} ({:.1}% of peak), cost {:.6}",
            p.best_beta,
            p.beta_fraction_of_peak * 100.0,
            p.best_cost
        );
    }
    if let Some(path) = &a.curve {
        let mut w = csv::Writer::from_path(path)?;
        let mut head = vec!["beta".to_string()];
        head.extend(a.mult.iter().map(|m| format!("cost_{m}x")));
        w.write_record(&head)?;
        for i in 0..a.steps {
            let mut row = vec![plans[0].curve[i].0.to_string()];
            row.extend(plans.iter().map(|p| p.curve[i].1.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
    }

    let table = savings_table(&trace, &params, &a.percentiles, &a.mult, a.steps)?;
    let mut text = String::from("multiplier");
    for p in &a.percentiles {
        text.push_str(&format!(",c{p}"));
    }
    text.push('\n');
    for row in &table {
        text.push_str(&format!("{}x", row[0].multiplier));
        for c in row {
            text.push_str(&format!(",{}", c.label()));
        }
        text.push('\n');
    }
    print!("{text}");
    if let Some(path) = &a.out {
        std::fs::write(path, &text).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}
