//! `boxer-ns`: run one overlay node, optionally with a guest.
//!
//! ```text
//! boxer-ns --be-seed --name a -- ./server
//! boxer-ns --seed 127.0.0.1:7700 --name b --wait 2 -- ./client a
//! ```
//!
//! Prints one `ready` line with the node's identity and endpoint once it has
//! joined. With a guest command it exits with the guest's exit code;
//! without one it serves until SIGINT or SIGTERM.

use std::net::{Ipv4Addr, SocketAddrV4};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use boxer::config::{Barrier, GuestSpec, NodeConfig, TransportPolicy};
use boxer::supervisor::Node;
use boxer_proto::OverlayCidr;
use clap::{ArgGroup, Parser};
use tokio::signal::unix::{signal, SignalKind};
use tracing_subscriber::EnvFilter;

#[derive(Debug, Parser)]
#[command(
    name = "boxer-ns",
    version,
    about = "Run an overlay node and its guest"
)]
#[command(group(ArgGroup::new("role").required(true).args(["seed", "be_seed"])))]
struct Args {
    /// Endpoint of the seed node to join.
    #[arg(long, env = "BOXER_SEED")]
    seed: Option<SocketAddrV4>,
    /// Start a new network with this node as its seed.
    #[arg(long)]
    be_seed: bool,
    /// Name to register for this node.
    #[arg(long, env = "BOXER_NODE_NAME")]
    name: Option<String>,
    /// Start the guest only once this many nodes are members.
    #[arg(long, env = "BOXER_WAIT_NODES", default_value_t = 0)]
    wait: usize,
    /// Start the guest only once these names are registered.
    #[arg(long, env = "BOXER_WAIT_NAMES", value_delimiter = ',')]
    wait_names: Vec<String>,
    /// Base directory for sockets, membership files and logs.
    #[arg(long, env = "BOXER_DIR")]
    dir: Option<PathBuf>,
    #[arg(long, env = "BOXER_OVERLAY_CIDR", default_value_t = OverlayCidr::DEFAULT)]
    cidr: OverlayCidr,
    /// Local address of this node's endpoint.
    #[arg(long, default_value_t = SocketAddrV4::new(Ipv4Addr::LOCALHOST, 0))]
    listen: SocketAddrV4,
    /// direct, punch, or proxy:<node-id>.
    #[arg(long, env = "BOXER_TRANSPORT", default_value = "direct")]
    transport: TransportPolicy,
    /// File-name remapping rules.
    #[arg(long, env = "BOXER_REMAP")]
    remap: Option<PathBuf>,
    /// Guest command.
    #[arg(last = true)]
    command: Vec<String>,
}

impl Args {
    fn node_config(&self) -> NodeConfig {
        let dir = self
            .dir
            .clone()
            .unwrap_or_else(|| std::env::temp_dir().join(format!("boxer-{}", std::process::id())));
        let mut cfg = match self.seed {
            Some(seed) if !self.be_seed => NodeConfig::member(dir, seed),
            _ => NodeConfig::seed(dir),
        };
        cfg.name = self.name.clone().filter(|n| !n.is_empty());
        cfg.cidr = self.cidr;
        cfg.listen = self.listen;
        cfg.transport = self.transport;
        cfg.remap_file = self.remap.clone();
        cfg
    }

    fn guest(&self) -> Option<GuestSpec> {
        if self.command.is_empty() {
            return None;
        }
        let mut g = GuestSpec::new(self.command.clone());
        g.barrier = Barrier {
            count: self.wait,
            names: self.wait_names.clone(),
        };
        Some(g)
    }
}

async fn terminated() {
    let mut term = signal(SignalKind::terminate()).expect("installing SIGTERM handler");
    tokio::select! {
        _ = tokio::signal::ctrl_c() => {}
        _ = term.recv() => {}
    }
}

async fn run(args: Args) -> anyhow::Result<u8> {
    let guest = args.guest();
    if let Some(g) = &guest {
        g.validate()?;
    }
    let node = Node::start(args.node_config())
        .await
        .context("starting node")?;
    println!(
        "ready node={} ip={} endpoint={} dir={}",
        node.id().0,
        node.overlay_ip(),
        node.endpoint(),
        node.dir().display()
    );
    let code = match guest {
        None => {
            terminated().await;
            0
        }
        Some(g) => tokio::select! {
            r = node.run_guest(&g) => r?.code().clamp(0, 255) as u8,
            _ = terminated() => 143,
        },
    };
    node.shutdown().await;
    Ok(code)
}

fn main() -> ExitCode {
    let args = Args::parse();
    tracing_subscriber::fmt()
        .with_env_filter(
            EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();
    let rt = tokio::runtime::Runtime::new().expect("building the runtime");
    match rt.block_on(run(args)) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("boxer-ns: {e:#}");
            ExitCode::from(1)
        }
    }
}
