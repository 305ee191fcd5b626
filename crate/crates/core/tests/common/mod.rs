#![allow(dead_code)]

use std::path::PathBuf;
use std::time::{Duration, Instant};

use boxer::bench::cluster::{NodeProc, Tools};

pub fn tools() -> Tools {
    Tools {
        ns: PathBuf::from(env!("CARGO_BIN_EXE_boxer-ns")),
        guest: PathBuf::from(env!("CARGO_BIN_EXE_boxer-guest")),
    }
}

/// Polls `f` until it holds or `limit` passes.
pub fn eventually(limit: Duration, mut f: impl FnMut() -> bool) -> bool {
    let start = Instant::now();
    while start.elapsed() < limit {
        if f() {
            return true;
        }
        std::thread::sleep(Duration::from_millis(10));
    }
    f()
}

/// Waits for a guest-running node to exit and returns the guest's stdout.
pub fn finish(mut n: NodeProc, limit: Duration) -> String {
    let status = n.wait_timeout(limit).expect("node exits");
    let out = n.guest_stdout();
    assert!(
        status.success(),
        "guest failed ({status}): stdout {out} stderr {}",
        n.guest_stderr()
    );
    out
}

pub mod coordlog;
pub mod inproc;
pub mod punch;
pub mod scenarios;
