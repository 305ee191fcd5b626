//! Shape of the cost curve and savings table on the bundled synthetic trace
//! with list-price parameters. Each check panics on failure.

use boxer_planner::{list_price_params, savings_table, sweep, Synthetic};

const MULTS: [f64; 4] = [1.0, 2.0, 4.0, 8.0];
const PCTS: [f64; 4] = [100.0, 99.0, 95.0, 90.0];

pub fn cost_curve_is_u_shaped() {
    let t = Synthetic::default().generate();
    let plan = sweep(&t, &list_price_params(), 200).unwrap();
    let i = plan
        .curve
        .iter()
        .position(|c| c.0 == plan.best_beta)
        .unwrap();
    assert!(
        i > 0 && i < plan.curve.len() - 1,
        "argmin at grid index {i}"
    );
    for w in plan.curve[..=i].windows(2) {
        assert!(w[1].1 <= w[0].1, "not descending before the minimum");
    }
    for w in plan.curve[i..].windows(2) {
        assert!(w[1].1 >= w[0].1, "not ascending after the minimum");
    }
    assert!(plan.best_cost < plan.curve[0].1 && plan.best_cost < plan.curve.last().unwrap().1);
}

pub fn savings_table_structure() {
    let t = Synthetic::default().generate();
    let table = savings_table(&t, &list_price_params(), &PCTS, &MULTS, 200).unwrap();
    let s = |m: usize, p: usize| table[m][p].saving;
    for (p, pct) in PCTS.iter().enumerate() {
        // down each percentile column: more function resources, less saving
        for m in 1..MULTS.len() {
            let (hi, lo) = (
                s(m - 1, p).unwrap_or(f64::NEG_INFINITY),
                s(m, p).unwrap_or(f64::NEG_INFINITY),
            );
            assert!(lo <= hi, "column c{pct} not decreasing");
            assert!(lo < hi || lo == f64::NEG_INFINITY);
        }
    }
    for m in 0..MULTS.len() {
        // along each row: cheaper baselines, less saving
        for p in 1..PCTS.len() {
            assert!(
                s(m, p).unwrap_or(f64::NEG_INFINITY) <= s(m, p - 1).unwrap_or(f64::NEG_INFINITY)
            );
        }
    }
    // full provisioning always loses; single-function bursts always win
    assert!((0..4).all(|m| s(m, 0).is_some_and(|v| v > 0.5)));
    assert!((0..4).all(|p| s(0, p).is_some_and(|v| v > 0.0)));
    // no-saving appears for high multipliers at low percentiles only
    assert!(s(3, 3).is_none() && s(3, 2).is_none());
    for m in 0..4 {
        for p in 0..4 {
            if s(m, p).is_none() {
                assert!(
                    m + 1 == 4 || s(m + 1, p).is_none(),
                    "no-saving above a saving cell"
                );
                assert!(
                    p + 1 == 4 || s(m, p + 1).is_none(),
                    "no-saving left of a saving cell"
                );
            }
        }
    }
}
