//! Deployment cost of a VM baseline plus functions for the excess load.

use crate::{PlanError, TraceSeries};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostParams {
    /// VM throughput, requests per interval per core.
    pub alpha: f64,
    /// Function throughput, requests per interval per core.
    pub gamma: f64,
    /// Price of one VM core for one interval.
    pub price_vm: f64,
    /// Price of one function core for one interval.
    pub price_fn: f64,
    /// Function resources needed per request, as a multiple.
    pub multiplier: f64,
    /// Round core counts up to whole cores.
    pub ceil_cores: bool,
}

impl CostParams {
    pub fn validate(&self) -> Result<(), PlanError> {
        let bad = |m: &str| Err(PlanError::InvalidParams(m.into()));
        if !(self.alpha > 0.0 && self.gamma > 0.0) {
            return bad("throughputs must be positive");
        }
        if !(self.price_vm >= 0.0 && self.price_fn >= 0.0) {
            return bad("prices must be non-negative");
        }
        if self.multiplier.is_nan() || self.multiplier < 1.0 {
            return bad("multiplier must be at least 1");
        }
        Ok(())
    }

    pub fn with_multiplier(self, multiplier: f64) -> Self {
        CostParams { multiplier, ..self }
    }

    fn cores(&self, c: f64) -> f64 {
        if self.ceil_cores {
            c.ceil()
        } else {
            c
        }
    }

    /// VM cost of capacity `beta` for one interval.
    pub fn vm_term(&self, beta: f64) -> f64 {
        self.cores(beta / self.alpha) * self.price_vm
    }

    /// Function cost of load `delta` over capacity `beta` for one interval.
    pub fn fn_term(&self, delta: f64, beta: f64) -> f64 {
        let excess = (delta - beta).max(0.0);
        self.cores(self.multiplier * excess / self.gamma) * self.price_fn
    }
}

pub fn deployment_cost(trace: &TraceSeries, beta: f64, p: &CostParams) -> f64 {
    let vm = p.vm_term(beta);
    trace.samples.iter().map(|d| vm + p.fn_term(*d, beta)).sum()
}

/// Cost of provisioning VMs for `beta` and serving nothing else.
pub fn vm_only_cost(trace: &TraceSeries, beta: f64, p: &CostParams) -> f64 {
    trace.len() as f64 * p.vm_term(beta)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanResult {
    /// (beta, total cost) on the swept grid.
    pub curve: Vec<(f64, f64)>,
    pub best_beta: f64,
    pub best_cost: f64,
    /// `best_beta` over the trace's peak; 0 for an all-zero trace.
    pub beta_fraction_of_peak: f64,
}

/// Even grid of `steps` capacities from 0 to the peak.
pub fn grid(peak: f64, steps: usize) -> Vec<f64> {
    (0..steps)
        .map(|i| peak * i as f64 / (steps - 1) as f64)
        .collect()
}

pub fn sweep(trace: &TraceSeries, p: &CostParams, steps: usize) -> Result<PlanResult, PlanError> {
    if trace.is_empty() {
        return Err(PlanError::Empty);
    }
    if steps < 2 {
        return Err(PlanError::InvalidParams(
            "a sweep needs at least 2 steps".into(),
        ));
    }
    p.validate()?;
    let peak = trace.peak();
    let curve: Vec<(f64, f64)> = grid(peak, steps)
        .into_iter()
        .map(|b| (b, deployment_cost(trace, b, p)))
        .collect();
    // strict comparison keeps the smallest beta among ties
    let (best_beta, best_cost) =
        curve
            .iter()
            .copied()
            .fold((f64::NAN, f64::INFINITY), |best, c| {
                if c.1 < best.1 {
                    c
                } else {
                    best
                }
            });
    let beta_fraction_of_peak = if peak > 0.0 { best_beta / peak } else { 0.0 };
    Ok(PlanResult {
        curve,
        best_beta,
        best_cost,
        beta_fraction_of_peak,
    })
}

/// Smallest sample value such that at least `pct` percent of intervals are
/// at or below it.
pub fn capacity_percentile(trace: &TraceSeries, pct: f64) -> Result<f64, PlanError> {
    if trace.is_empty() {
        return Err(PlanError::Empty);
    }
    if !(pct > 0.0 && pct <= 100.0) {
        return Err(PlanError::InvalidParams(format!(
            "percentile {pct} is outside (0, 100]"
        )));
    }
    let mut v = trace.samples.clone();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    // tolerance keeps exact products like 90% of 100 from rounding up
    let k = ((pct * n as f64 / 100.0) - 1e-9)
        .ceil()
        .clamp(1.0, n as f64) as usize;
    Ok(v[k - 1])
}

#[derive(Debug, Clone, PartialEq)]
pub struct SavingsCell {
    pub percentile: f64,
    pub multiplier: f64,
    /// Fraction saved; `None` when the hybrid costs more than the baseline.
    pub saving: Option<f64>,
    pub baseline: f64,
    pub hybrid: f64,
}

impl SavingsCell {
    /// Percent with two decimals, or `no-saving`.
    pub fn label(&self) -> String {
        match self.saving {
            Some(s) => format!("{:.2}%", s * 100.0),
            None => "no-saving".into(),
        }
    }
}

/// One row per multiplier, one cell per percentile. The baseline is VMs
/// provisioned at the percentile capacity with no functions; the hybrid is
/// the cheapest point of the sweep.
pub fn savings_table(
    trace: &TraceSeries,
    p: &CostParams,
    percentiles: &[f64],
    multipliers: &[f64],
    steps: usize,
) -> Result<Vec<Vec<SavingsCell>>, PlanError> {
    if percentiles.is_empty() || multipliers.is_empty() {
        return Err(PlanError::InvalidParams(
            "need at least one percentile and one multiplier".into(),
        ));
    }
    let caps: Vec<f64> = percentiles
        .iter()
        .map(|pc| capacity_percentile(trace, *pc))
        .collect::<Result<_, _>>()?;
    multipliers
        .iter()
        .map(|m| {
            let pm = p.with_multiplier(*m);
            let hybrid = sweep(trace, &pm, steps)?.best_cost;
            Ok(percentiles
                .iter()
                .zip(&caps)
                .map(|(pc, cap)| {
                    let baseline = vm_only_cost(trace, *cap, &pm);
                    let saving = if hybrid < baseline {
                        Some(1.0 - hybrid / baseline)
                    } else if hybrid <= baseline * (1.0 + 1e-12) {
                        Some(0.0)
                    } else {
                        None
                    };
                    SavingsCell {
                        percentile: *pc,
                        multiplier: *m,
                        saving,
                        baseline,
                        hybrid,
                    }
                })
                .collect())
        })
        .collect()
}
