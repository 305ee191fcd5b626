//! Starting guests with the monitor preloaded.

use std::fs::File;
use std::io;
use std::os::unix::process::ExitStatusExt;
use std::path::PathBuf;
use std::process::{ExitStatus, Stdio};
use std::sync::atomic::Ordering;

use thiserror::Error;
use tokio::process::{Child, Command};
use tracing::info;

use super::{BarrierTimeout, Node, LOG_DIR};
use crate::config::{GuestSpec, GuestSpecError};

const SHIM_FILE: &str = "libboxer_monitor.so";

#[derive(Debug, Error)]
pub enum LaunchError {
    #[error(transparent)]
    Spec(#[from] GuestSpecError),
    #[error(transparent)]
    Barrier(#[from] BarrierTimeout),
    #[error("monitor library {SHIM_FILE} not found (set BOXER_MONITOR_LIB)")]
    NoShim,
    #[error("opening guest log: {0}")]
    Log(io::Error),
    #[error("starting `{cmd}`: {source}")]
    Spawn { cmd: String, source: io::Error },
}

/// How a guest ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GuestExit(pub ExitStatus);

impl GuestExit {
    /// Shell convention: the exit code, or 128 plus the fatal signal.
    pub fn code(&self) -> i32 {
        self.0
            .code()
            .or_else(|| self.0.signal().map(|s| 128 + s))
            .unwrap_or(1)
    }
}

/// Locates the monitor shared object: `BOXER_MONITOR_LIB`, then next to
/// this executable (or its `deps/` or parent directory).
pub fn shim_path() -> Option<PathBuf> {
    if let Some(p) = std::env::var_os("BOXER_MONITOR_LIB").filter(|p| !p.is_empty()) {
        return Some(PathBuf::from(p));
    }
    let exe = std::env::current_exe().ok()?;
    let dir = exe.parent()?;
    [
        dir.join(SHIM_FILE),
        dir.join("deps").join(SHIM_FILE),
        dir.parent()?.join(SHIM_FILE),
    ]
    .into_iter()
    .find(|p| p.is_file())
}

impl Node {
    /// Waits for the spec's barrier, then starts the guest. Its output goes
    /// to `log/guest-<n>.out` and `.err` under the base directory.
    pub async fn launch(&self, spec: &GuestSpec) -> Result<Child, LaunchError> {
        spec.validate()?;
        let shim = shim_path().ok_or(LaunchError::NoShim)?;
        self.wait_barrier(&spec.barrier).await?;

        let n = self.guests.fetch_add(1, Ordering::Relaxed);
        let logs = self.cfg.dir.join(LOG_DIR);
        let out = File::create(logs.join(format!("guest-{n}.out"))).map_err(LaunchError::Log)?;
        let err = File::create(logs.join(format!("guest-{n}.err"))).map_err(LaunchError::Log)?;

        let preload = match std::env::var("LD_PRELOAD") {
            Ok(prev) if !prev.is_empty() => format!("{}:{prev}", shim.display()),
            _ => shim.display().to_string(),
        };
        let mut cmd = Command::new(&spec.argv[0]);
        cmd.args(&spec.argv[1..])
            .env("LD_PRELOAD", preload)
            .env("BOXER_DIR", &self.cfg.dir)
            .env("BOXER_OVERLAY_CIDR", self.cfg.cidr.to_string())
            .envs(&spec.env)
            .stdin(Stdio::null())
            .stdout(out)
            .stderr(err);
        if let Some(cwd) = &spec.cwd {
            cmd.current_dir(cwd);
        }
        // SAFETY: prctl is async-signal-safe.
        unsafe {
            cmd.pre_exec(|| {
                if libc::prctl(libc::PR_SET_PDEATHSIG, libc::SIGKILL) != 0 {
                    return Err(io::Error::last_os_error());
                }
                Ok(())
            });
        }
        let child = cmd.spawn().map_err(|source| LaunchError::Spawn {
            cmd: spec.argv.join(" "),
            source,
        })?;
        info!(guest = n, pid = child.id(), cmd = %spec.argv.join(" "), "guest started");
        Ok(child)
    }

    pub async fn run_guest(&self, spec: &GuestSpec) -> Result<GuestExit, LaunchError> {
        let mut child = self.launch(spec).await?;
        let status = child.wait().await.map_err(|source| LaunchError::Spawn {
            cmd: spec.argv.join(" "),
            source,
        })?;
        info!(status = %status, "guest exited");
        Ok(GuestExit(status))
    }
}
