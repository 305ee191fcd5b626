//! Request-count traces.

use std::io::Read;
use std::path::Path;

use crate::PlanError;

/// Requests per interval, one sample per interval with gaps zero-filled.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSeries {
    /// Timestamp of the first sample.
    pub start: i64,
    pub interval_s: i64,
    pub samples: Vec<f64>,
}

impl TraceSeries {
    pub fn new(interval_s: i64, samples: Vec<f64>) -> Self {
        TraceSeries {
            start: 0,
            interval_s,
            samples,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().copied().fold(0.0, f64::max)
    }

    pub fn write_csv(&self, w: impl std::io::Write) -> Result<(), PlanError> {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(["timestamp", "requests"])?;
        for (i, d) in self.samples.iter().enumerate() {
            w.write_record([
                (self.start + i as i64 * self.interval_s).to_string(),
                d.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn load_trace(path: &Path) -> Result<TraceSeries, PlanError> {
    let f =
        std::fs::File::open(path).map_err(|e| PlanError::Io(format!("{}: {e}", path.display())))?;
    parse_trace(f)
}

/// `timestamp,requests` lines. A header line is tolerated. The interval is
/// the smallest step between timestamps; longer steps must be multiples of
/// it and are zero-filled.
pub fn parse_trace(r: impl Read) -> Result<TraceSeries, PlanError> {
    let mut rows: Vec<(usize, i64, f64)> = Vec::new();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(r);
    for (i, rec) in reader.records().enumerate() {
        let line = i + 1;
        let rec = rec?;
        if rec.iter().all(str::is_empty) {
            continue;
        }
        let err = |msg: String| PlanError::Parse { line, msg };
        if rec.len() != 2 {
            return Err(err(format!(
                "expected `timestamp,requests`, got {} fields",
                rec.len()
            )));
        }
        let (ts, req) = (rec[0].parse::<i64>(), rec[1].parse::<f64>());
        let (ts, req) = match (ts, req) {
            (Ok(t), Ok(r)) => (t, r),
            _ if rows.is_empty() && line == 1 => continue,
            _ => return Err(err(format!("cannot parse `{},{}`", &rec[0], &rec[1]))),
        };
        if !req.is_finite() || req < 0.0 {
            return Err(err(format!("request count {req} is negative")));
        }
        if let Some((_, prev, _)) = rows.last() {
            if ts <= *prev {
                return Err(err(format!("timestamp {ts} does not increase on {prev}")));
            }
        }
        rows.push((line, ts, req));
    }
    let Some(&(_, start, _)) = rows.first() else {
        return Ok(TraceSeries {
            start: 0,
            interval_s: 1,
            samples: Vec::new(),
        });
    };
    let interval = rows.windows(2).map(|w| w[1].1 - w[0].1).min().unwrap_or(1);
    let mut samples = Vec::with_capacity(rows.len());
    let mut expect = start;
    for (line, ts, req) in rows {
        let gap = ts - expect;
        if gap % interval != 0 {
            return Err(PlanError::Parse {
                line,
                msg: format!("timestamp {ts} is off the {interval}s grid"),
            });
        }
        samples.extend(std::iter::repeat_n(0.0, (gap / interval) as usize));
        samples.push(req);
        expect = ts + interval;
    }
    Ok(TraceSeries {
        start,
        interval_s: interval,
        samples,
    })
}
