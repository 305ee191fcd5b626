//! Cost planning for a VM baseline that spills load bursts onto
//! short-lived function instances.
//!
//! Per interval `t` with load `δt` and VM capacity `β`:
//!
//! ```text
//! cost(β) = Σt  (β/α)·price_vm + max(0, m·(δt − β)/γ)·price_fn
//! ```
//!
//! where `α` and `γ` are per-core throughputs of VMs and functions and `m`
//! is the function resource multiplier.

mod cost;
mod synth;
mod trace;

pub use cost::{
    capacity_percentile, deployment_cost, grid, savings_table, sweep, vm_only_cost, CostParams,
    PlanResult, SavingsCell,
};
pub use synth::Synthetic;
pub use trace::{load_trace, parse_trace, TraceSeries};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("empty trace")]
    Empty,
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("{0}")]
    InvalidParams(String),
    #[error("{0}")]
    Io(String),
}

impl From<std::io::Error> for PlanError {
    fn from(e: std::io::Error) -> Self {
        PlanError::Io(e.to_string())
    }
}

impl From<csv::Error> for PlanError {
    fn from(e: csv::Error) -> Self {
        let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
        PlanError::Parse {
            line,
            msg: e.to_string(),
        }
    }
}

/// List prices per core-second: a c6g.2xlarge VM ($0.272/h for 8 vCPU) and
/// an arm64 2 GB function ($0.0000266668/s) with 2048/1769 vCPU. Per-core
/// throughputs are equal.
pub fn list_price_params() -> CostParams {
    CostParams {
        alpha: 100.0,
        gamma: 100.0,
        price_vm: 0.272 / 3600.0 / 8.0,
        price_fn: 2.0 * 0.000_013_333_4 / (2048.0 / 1769.0),
        multiplier: 1.0,
        ceil_cores: false,
    }
}
