//! A localhost cluster of `boxer-ns` processes.

use std::io::{BufRead, BufReader};
use std::net::{Ipv4Addr, SocketAddrV4};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, ExitStatus, Stdio};
use std::sync::mpsc;
use std::time::{Duration, Instant};

use anyhow::{anyhow, bail, Context};

use crate::supervisor::LOG_DIR;

/// Paths of the node and guest executables.
#[derive(Debug, Clone)]
pub struct Tools {
    pub ns: PathBuf,
    pub guest: PathBuf,
}

impl Tools {
    /// Looks next to the running executable, then one directory up (test
    /// binaries live in `deps/`).
    pub fn locate() -> anyhow::Result<Tools> {
        let exe = std::env::current_exe()?;
        let dir = exe.parent().context("executable has no directory")?;
        for d in [Some(dir), dir.parent()].into_iter().flatten() {
            let t = Tools {
                ns: d.join("boxer-ns"),
                guest: d.join("boxer-guest"),
            };
            if t.ns.is_file() && t.guest.is_file() {
                return Ok(t);
            }
        }
        bail!("boxer-ns and boxer-guest not found near {}", exe.display())
    }
}

/// `CLOCK_MONOTONIC` in microseconds; comparable across processes.
pub fn monotonic_us() -> u64 {
    let mut ts = libc::timespec {
        tv_sec: 0,
        tv_nsec: 0,
    };
    // SAFETY: valid out-pointer.
    unsafe { libc::clock_gettime(libc::CLOCK_MONOTONIC, &mut ts) };
    ts.tv_sec as u64 * 1_000_000 + ts.tv_nsec as u64 / 1000
}

/// One running node process.
#[derive(Debug)]
pub struct NodeProc {
    child: Child,
    pub id: u32,
    pub ip: Ipv4Addr,
    pub endpoint: SocketAddrV4,
    pub dir: PathBuf,
    /// When the `ready` line was read (monotonic microseconds).
    pub ready_us: u64,
}

impl NodeProc {
    pub fn pid(&self) -> u32 {
        self.child.id()
    }

    pub fn kill(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }

    /// Sends SIGTERM, letting the node leave cleanly.
    pub fn terminate(&mut self) {
        // SAFETY: plain kill(2) on our own child.
        unsafe { libc::kill(self.child.id() as i32, libc::SIGTERM) };
    }

    pub fn wait_timeout(&mut self, limit: Duration) -> anyhow::Result<ExitStatus> {
        let start = Instant::now();
        loop {
            if let Some(s) = self.child.try_wait()? {
                return Ok(s);
            }
            if start.elapsed() > limit {
                self.kill();
                bail!("node {} did not exit within {limit:?}", self.id);
            }
            std::thread::sleep(Duration::from_millis(10));
        }
    }

    /// Contents of the first guest's stdout log.
    pub fn guest_stdout(&self) -> String {
        std::fs::read_to_string(self.dir.join(LOG_DIR).join("guest-0.out")).unwrap_or_default()
    }

    pub fn guest_stderr(&self) -> String {
        std::fs::read_to_string(self.dir.join(LOG_DIR).join("guest-0.err")).unwrap_or_default()
    }
}

impl Drop for NodeProc {
    fn drop(&mut self) {
        self.kill();
    }
}

/// Options for one node.
#[derive(Debug, Clone, Default)]
pub struct Spawn {
    pub name: Option<String>,
    pub wait_names: Vec<String>,
    pub transport: Option<String>,
    pub env: Vec<(String, String)>,
    pub guest: Vec<String>,
}

impl Spawn {
    pub fn named(name: &str) -> Spawn {
        Spawn {
            name: Some(name.into()),
            ..Spawn::default()
        }
    }

    pub fn wait_for(mut self, names: &[&str]) -> Spawn {
        self.wait_names = names.iter().map(|s| s.to_string()).collect();
        self
    }

    pub fn transport(mut self, t: &str) -> Spawn {
        self.transport = Some(t.into());
        self
    }

    /// Runs `boxer-guest` with these arguments.
    pub fn guest<S: AsRef<str>>(mut self, tools: &Tools, args: &[S]) -> Spawn {
        self.guest = std::iter::once(tools.guest.display().to_string())
            .chain(args.iter().map(|a| a.as_ref().to_string()))
            .collect();
        self
    }

    pub fn env(mut self, k: &str, v: &str) -> Spawn {
        self.env.push((k.into(), v.into()));
        self
    }
}

/// A seed plus members, each in its own directory under `root`.
pub struct Cluster {
    pub tools: Tools,
    root: tempfile::TempDir,
    pub seed: NodeProc,
    spawned: usize,
}

const READY_WITHIN: Duration = Duration::from_secs(30);

impl Cluster {
    pub fn start(tools: Tools) -> anyhow::Result<Cluster> {
        Cluster::start_with(tools, Spawn::default())
    }

    /// Starts the seed node with the given options.
    pub fn start_with(tools: Tools, seed: Spawn) -> anyhow::Result<Cluster> {
        let root = tempfile::Builder::new().prefix("boxer-cluster").tempdir()?;
        let seed = launch(&tools, &root.path().join("n0"), None, &seed)?;
        Ok(Cluster {
            tools,
            root,
            seed,
            spawned: 1,
        })
    }

    pub fn root(&self) -> &Path {
        self.root.path()
    }

    /// Starts a member and waits for its `ready` line.
    pub fn join(&mut self, opts: Spawn) -> anyhow::Result<NodeProc> {
        let dir = self.root.path().join(format!("n{}", self.spawned));
        self.spawned += 1;
        launch(&self.tools, &dir, Some(self.seed.endpoint), &opts)
    }
}

fn launch(
    tools: &Tools,
    dir: &Path,
    seed: Option<SocketAddrV4>,
    opts: &Spawn,
) -> anyhow::Result<NodeProc> {
    let mut cmd = Command::new(&tools.ns);
    match seed {
        Some(s) => cmd.arg("--seed").arg(s.to_string()),
        None => cmd.arg("--be-seed"),
    };
    cmd.arg("--dir").arg(dir);
    if let Some(n) = &opts.name {
        cmd.arg("--name").arg(n);
    }
    if !opts.wait_names.is_empty() {
        cmd.arg("--wait-names").arg(opts.wait_names.join(","));
    }
    if let Some(t) = &opts.transport {
        cmd.arg("--transport").arg(t);
    }
    for (k, v) in &opts.env {
        cmd.env(k, v);
    }
    if !opts.guest.is_empty() {
        cmd.arg("--").args(&opts.guest);
    }
    cmd.env_remove("BOXER_SEED")
        .env_remove("BOXER_NODE_NAME")
        .env_remove("BOXER_DIR");
    cmd.stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::inherit());
    let mut child = cmd
        .spawn()
        .with_context(|| format!("starting {}", tools.ns.display()))?;

    let stdout = child.stdout.take().expect("piped stdout");
    let (tx, rx) = mpsc::channel();
    std::thread::spawn(move || {
        let mut lines = BufReader::new(stdout).lines();
        if let Some(Ok(l)) = lines.next() {
            let _ = tx.send((l, monotonic_us()));
        }
        // keep draining so the node never blocks on a full pipe
        for _ in lines {}
    });
    let (line, ready_us) = match rx.recv_timeout(READY_WITHIN) {
        Ok(r) => r,
        Err(_) => {
            let _ = child.kill();
            let status = child.wait()?;
            bail!("node in {} never became ready ({status})", dir.display());
        }
    };
    let (id, ip, endpoint) =
        parse_ready(&line).ok_or_else(|| anyhow!("unexpected first line: {line}"))?;
    Ok(NodeProc {
        child,
        id,
        ip,
        endpoint,
        dir: dir.to_path_buf(),
        ready_us,
    })
}

/// `ready node=<id> ip=<ip> endpoint=<addr> dir=<dir>`
fn parse_ready(line: &str) -> Option<(u32, Ipv4Addr, SocketAddrV4)> {
    let mut id = None;
    let mut ip = None;
    let mut ep = None;
    let mut words = line.split_whitespace();
    if words.next()? != "ready" {
        return None;
    }
    for w in words {
        match w.split_once('=')? {
            ("node", v) => id = v.parse().ok(),
            ("ip", v) => ip = v.parse().ok(),
            ("endpoint", v) => ep = v.parse().ok(),
            _ => {}
        }
    }
    Some((id?, ip?, ep?))
}

/// A loopback port that was free a moment ago.
pub fn free_port() -> std::io::Result<u16> {
    Ok(std::net::TcpListener::bind("127.0.0.1:0")?
        .local_addr()?
        .port())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_ready_line() {
        let (id, ip, ep) =
            parse_ready("ready node=3 ip=10.0.0.4 endpoint=127.0.0.1:4000 dir=/tmp/x").unwrap();
        assert_eq!((id, ip, ep.port()), (3, Ipv4Addr::new(10, 0, 0, 4), 4000));
        assert!(parse_ready("listening 0.0.0.0:1").is_none());
    }
}
