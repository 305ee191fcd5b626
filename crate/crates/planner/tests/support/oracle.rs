//! An independently written evaluator for the cost model.

use boxer_planner::{deployment_cost, sweep, CostParams, TraceSeries};
use proptest::prelude::*;

/// Straight transcription of the per-interval sum, written without the
/// library's helpers.
#[allow(clippy::too_many_arguments)]
pub fn brute_cost(
    loads: &[f64],
    beta: f64,
    a: f64,
    g: f64,
    pv: f64,
    pf: f64,
    m: f64,
    ceil: bool,
) -> f64 {
    let mut total = 0.0;
    for &d in loads {
        let mut vm_cores = beta / a;
        if ceil {
            vm_cores = vm_cores.ceil();
        }
        total += vm_cores * pv;
        if d > beta {
            let mut fn_cores = m * (d - beta) / g;
            if ceil {
                fn_cores = fn_cores.ceil();
            }
            total += fn_cores * pf;
        }
    }
    total
}

pub fn brute_percentile(loads: &[f64], p: f64) -> f64 {
    let mut v = loads.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    // smallest candidate with at least p% of samples at or below it
    for &c in &v {
        let below = loads.iter().filter(|d| **d <= c).count() as f64;
        if below * 100.0 >= p * loads.len() as f64 - 1e-6 {
            return c;
        }
    }
    unreachable!()
}

#[derive(Debug, Clone)]
pub struct Instance {
    pub loads: Vec<f64>,
    pub beta: f64,
    pub p: CostParams,
}

pub fn instance() -> impl Strategy<Value = Instance> {
    (
        prop::collection::vec(0u32..2000, 1..60),
        0.0f64..1.2,
        (
            0.5f64..200.0,
            0.5f64..200.0,
            0.0f64..5.0,
            0.0f64..20.0,
            prop::sample::select(vec![1.0, 2.0, 4.0, 8.0]),
        ),
        any::<bool>(),
    )
        .prop_map(
            |(raw, frac, (alpha, gamma, price_vm, price_fn, multiplier), ceil_cores)| {
                let loads: Vec<f64> = raw.into_iter().map(f64::from).collect();
                let peak = loads.iter().copied().fold(0.0, f64::max);
                Instance {
                    beta: peak * frac,
                    loads,
                    p: CostParams {
                        alpha,
                        gamma,
                        price_vm,
                        price_fn,
                        multiplier,
                        ceil_cores,
                    },
                }
            },
        )
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

pub fn brute(i: &Instance, beta: f64) -> f64 {
    let p = &i.p;
    brute_cost(
        &i.loads,
        beta,
        p.alpha,
        p.gamma,
        p.price_vm,
        p.price_fn,
        p.multiplier,
        p.ceil_cores,
    )
}

/// The library's cost at `i.beta` agrees with the evaluator.
pub fn cost_matches(i: &Instance) -> Result<(), TestCaseError> {
    let t = TraceSeries::new(1, i.loads.clone());
    let (got, want) = (deployment_cost(&t, i.beta, &i.p), brute(i, i.beta));
    prop_assert!(rel_err(got, want) <= 1e-9, "{} vs {}", got, want);
    Ok(())
}

/// The sweep picks the first grid point at the evaluator's minimum.
pub fn argmin_matches(i: &Instance, steps: usize) -> Result<(), TestCaseError> {
    let t = TraceSeries::new(1, i.loads.clone());
    let plan = sweep(&t, &i.p, steps).unwrap();
    let peak = i.loads.iter().copied().fold(0.0, f64::max);
    let costs: Vec<(f64, f64)> = (0..steps)
        .map(|k| {
            let b = peak * k as f64 / (steps - 1) as f64;
            (b, brute(i, b))
        })
        .collect();
    let min = costs.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
    // allow for summation-order rounding between near-equal grid points
    let want = costs
        .iter()
        .find(|c| c.1 <= min + min.abs() * 1e-9)
        .unwrap();
    prop_assert!(rel_err(plan.best_cost, min) <= 1e-9);
    prop_assert_eq!(plan.best_beta, want.0);
    Ok(())
}
