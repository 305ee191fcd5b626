use std::io::Write;

use boxer_planner::{load_trace, PlanError, Synthetic};

fn file(body: &str) -> tempfile::NamedTempFile {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    f.write_all(body.as_bytes()).unwrap();
    f
}

#[test]
fn three_lines() {
    let t = load_trace(file("0,10\n60,20\n120,30\n").path()).unwrap();
    assert_eq!(t.samples, vec![10.0, 20.0, 30.0]);
    assert_eq!(t.interval_s, 60);
}

#[test]
fn one_missing_interval_is_zero_filled() {
    let t = load_trace(file("timestamp,requests\n100,5\n110,6\n130,7\n140,8\n").path()).unwrap();
    // (last - first) / interval + 1 samples
    assert_eq!(t.len(), ((140 - 100) / 10 + 1) as usize);
    assert_eq!(t.samples, vec![5.0, 6.0, 0.0, 7.0, 8.0]);
}

#[test]
fn negative_count_names_its_line() {
    match load_trace(file("0,1\n1,2\n2,-3\n").path()) {
        Err(PlanError::Parse { line, .. }) => assert_eq!(line, 3),
        other => panic!("{other:?}"),
    }
}

#[test]
fn written_trace_loads_back() {
    let t = Synthetic {
        intervals: 500,
        ..Synthetic::default()
    }
    .generate();
    let mut f = tempfile::NamedTempFile::new().unwrap();
    t.write_csv(&mut f).unwrap();
    let back = load_trace(f.path()).unwrap();
    assert_eq!(back.samples, t.samples);
    assert_eq!(back.interval_s, t.interval_s);
}
