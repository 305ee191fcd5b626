//! The node supervisor: one process per node that joins the control
//! network, serves its guests' monitors and launches the guests.

mod control;
mod launch;
mod procfs;
mod service;
mod streams;

use std::collections::HashSet;
use std::net::{Ipv4Addr, SocketAddr, SocketAddrV4};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use anyhow::{anyhow, Context};
use boxer_proto::{MembershipUpdate, NodeId, NodeRecord, OverlayAddr, SIGNAL_PEER_IP};
use serde::Serialize;
use tokio::net::{TcpListener, TcpSocket, UnixListener};
use tokio::sync::{broadcast, watch};
use tokio::task::{AbortHandle, JoinHandle};
use tracing::{debug, info, warn};

use crate::config::{Barrier, NodeConfig, SeedMode};
use crate::coord::files::write_membership;
use crate::coord::{Change, Follower, MembershipSet, Registry};
use crate::fsremap::RemapTable;
use crate::netservice::sockets::{Delivery, SocketTable, TableStats};
use crate::netservice::transport::{self, Fabric, Inbound, TransportCounters, TransportStats};

pub use launch::{shim_path, GuestExit, LaunchError};
pub use streams::read_debug;

pub const NS_SOCK: &str = "ns.sock";
pub const COORD_SOCK: &str = "coord.sock";
pub const DEBUG_SOCK: &str = "debug.sock";
pub const LOG_DIR: &str = "log";

/// Live subscribers of the membership stream fall behind by at most this
/// many events before being cut off.
pub const EVENT_BUFFER: usize = 1024;

#[derive(Debug, thiserror::Error)]
#[error("barrier not met within {0:?}")]
pub struct BarrierTimeout(pub Duration);

#[derive(Debug, Default)]
struct ServiceStats {
    requests: AtomicU64,
    responses: AtomicU64,
    abandoned: AtomicU64,
    malformed: AtomicU64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DebugState {
    pub node_id: u64,
    pub name: Option<String>,
    pub overlay_ip: Ipv4Addr,
    pub endpoint: SocketAddrV4,
    pub transport: String,
    pub membership_version: u64,
    pub members: usize,
    pub stale: bool,
    pub table: TableStats,
    pub requests: u64,
    pub responses: u64,
    pub abandoned: u64,
    pub malformed: u64,
    pub transports: TransportCounters,
}

pub struct Node {
    cfg: NodeConfig,
    id: NodeId,
    overlay_ip: Ipv4Addr,
    endpoint: SocketAddrV4,
    remap: RemapTable,
    sockets: Mutex<SocketTable<Inbound, service::AcceptSlot>>,
    members: Mutex<Follower>,
    events: broadcast::Sender<Change>,
    version: watch::Sender<u64>,
    seed: Option<Mutex<control::SeedState>>,
    uplink: Mutex<Option<control::Uplink>>,
    nonces: Mutex<HashSet<u64>>,
    transport_stats: TransportStats,
    service_stats: ServiceStats,
    tasks: Mutex<Vec<AbortHandle>>,
    guests: AtomicU64,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

fn bind_unix(path: &Path) -> anyhow::Result<UnixListener> {
    match std::fs::remove_file(path) {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
        Err(e) => return Err(e).with_context(|| format!("removing stale {}", path.display())),
    }
    UnixListener::bind(path).with_context(|| format!("binding {}", path.display()))
}

impl Node {
    /// Joins (or founds) the network and starts serving. Must run inside a
    /// tokio runtime; background tasks stop on [`shutdown`](Self::shutdown).
    pub async fn start(cfg: NodeConfig) -> anyhow::Result<Arc<Node>> {
        std::fs::create_dir_all(cfg.dir.join(LOG_DIR))
            .with_context(|| format!("creating base directory {}", cfg.dir.display()))?;
        let remap = match &cfg.remap_file {
            Some(f) => RemapTable::load(f, &cfg.dir)?,
            None => RemapTable::builtin(&cfg.dir),
        };
        let resolver = std::fs::read("/etc/resolv.conf").unwrap_or_default();
        crate::coord::files::write_atomic(&cfg.dir.join("resolv.conf"), &resolver)
            .with_context(|| format!("base directory {} is not writable", cfg.dir.display()))?;

        let listener = TcpListener::bind(cfg.listen)
            .await
            .with_context(|| format!("binding {}", cfg.listen))?;
        let endpoint = match listener.local_addr()? {
            SocketAddr::V4(a) => a,
            other => return Err(anyhow!("endpoint {other} is not IPv4")),
        };

        let (id, follower, seed, link) = match cfg.seed {
            SeedMode::BeSeed => {
                let reg = Registry::new(cfg.cidr, cfg.name.clone(), endpoint)
                    .map_err(|(r, d)| anyhow!("cannot start network: {r:?}: {d}"))?;
                let follower = Follower::new(reg.set().clone());
                (
                    NodeId::SEED,
                    follower,
                    Some(Mutex::new(control::SeedState::new(reg))),
                    None,
                )
            }
            SeedMode::Join(seed) => {
                let (stream, joined) =
                    control::join(seed, cfg.name.clone(), endpoint, &cfg.timing).await?;
                let set = MembershipSet::from_snapshot(joined.version, joined.records);
                (joined.node_id, Follower::new(set), None, Some(stream))
            }
        };
        let overlay_ip = follower
            .set()
            .get(id)
            .map(|r| r.overlay_ip)
            .ok_or_else(|| anyhow!("own record missing"))?;
        let version = follower.set().version();
        let local_ip = overlay_ip;

        let node = Arc::new(Node {
            id,
            overlay_ip,
            endpoint,
            remap,
            sockets: Mutex::new(SocketTable::new(local_ip)),
            members: Mutex::new(follower),
            events: broadcast::channel(EVENT_BUFFER).0,
            version: watch::channel(version).0,
            seed,
            uplink: Mutex::new(None),
            nonces: Mutex::new(HashSet::new()),
            transport_stats: TransportStats::default(),
            service_stats: ServiceStats::default(),
            tasks: Mutex::new(Vec::new()),
            guests: AtomicU64::new(0),
            cfg,
        });
        write_membership(&node.cfg.dir, id, &node.membership())
            .context("writing membership files")?;

        let ns = bind_unix(&node.cfg.dir.join(NS_SOCK))?;
        let coord = bind_unix(&node.cfg.dir.join(COORD_SOCK))?;
        let dbg = bind_unix(&node.cfg.dir.join(DEBUG_SOCK))?;
        node.spawn(node.clone().accept_streams(listener));
        node.spawn(service::serve(node.clone(), ns));
        node.spawn(streams::serve_coord(node.clone(), coord));
        node.spawn(streams::serve_debug(node.clone(), dbg));
        node.spawn(node.clone().keep_files());
        node.spawn(node.clone().reap_loop());
        match link {
            Some(stream) => control::run_member(&node, stream),
            None => {
                node.spawn(control::watchdog(node.clone()));
            }
        }
        info!(node = id.0, ip = %overlay_ip, %endpoint, "node up");
        Ok(node)
    }

    fn spawn<F>(&self, fut: F) -> JoinHandle<()>
    where
        F: std::future::Future<Output = ()> + Send + 'static,
    {
        let h = tokio::spawn(fut);
        lock(&self.tasks).push(h.abort_handle());
        h
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn overlay_ip(&self) -> Ipv4Addr {
        self.overlay_ip
    }

    pub fn endpoint(&self) -> SocketAddrV4 {
        self.endpoint
    }

    pub fn dir(&self) -> &Path {
        &self.cfg.dir
    }

    pub fn config(&self) -> &NodeConfig {
        &self.cfg
    }

    pub fn name(&self) -> Option<String> {
        lock(&self.members)
            .set()
            .get(self.id)
            .and_then(|r| r.name.clone())
    }

    pub fn membership(&self) -> MembershipSet {
        lock(&self.members).set().clone()
    }

    pub fn is_stale(&self) -> bool {
        lock(&self.members).is_stale()
    }

    /// Applies a seed-sequenced update; out-of-order ones are held.
    fn apply_update(&self, u: MembershipUpdate) {
        let mut m = lock(&self.members);
        let changes = m.offer(u);
        if changes.is_empty() {
            return;
        }
        for c in changes {
            debug!(node = self.id.0, change = %c, "membership");
            let _ = self.events.send(c);
        }
        self.version.send_replace(m.set().version());
    }

    async fn keep_files(self: Arc<Self>) {
        let mut rx = self.version.subscribe();
        while rx.changed().await.is_ok() {
            let node = self.clone();
            let r = tokio::task::spawn_blocking(move || {
                write_membership(&node.cfg.dir, node.id, &node.membership())
            })
            .await;
            if let Ok(Err(e)) = r {
                warn!(error = %e, "rewriting membership files");
            }
        }
    }

    fn barrier_met(&self, b: &Barrier) -> bool {
        let m = lock(&self.members);
        m.set().len() >= b.count && m.set().has_names(&b.names)
    }

    /// Waits until the membership satisfies `b`.
    pub async fn wait_barrier(&self, b: &Barrier) -> Result<(), BarrierTimeout> {
        let limit = self.cfg.timing.barrier_timeout;
        let mut rx = self.version.subscribe();
        let wait = async {
            while !self.barrier_met(b) {
                if rx.changed().await.is_err() {
                    std::future::pending::<()>().await;
                }
            }
        };
        tokio::time::timeout(limit, wait)
            .await
            .map_err(|_| BarrierTimeout(limit))
    }

    pub fn debug_state(&self) -> DebugState {
        let (version, members, stale) = {
            let m = lock(&self.members);
            (m.set().version(), m.set().len(), m.is_stale())
        };
        let s = &self.service_stats;
        DebugState {
            node_id: self.id.0,
            name: self.name(),
            overlay_ip: self.overlay_ip,
            endpoint: self.endpoint,
            transport: self.cfg.transport.to_string(),
            membership_version: version,
            members,
            stale,
            table: lock(&self.sockets).stats(),
            requests: s.requests.load(Ordering::Relaxed),
            responses: s.responses.load(Ordering::Relaxed),
            abandoned: s.abandoned.load(Ordering::Relaxed),
            malformed: s.malformed.load(Ordering::Relaxed),
            transports: self.transport_stats.snapshot(),
        }
    }

    /// Leaves the network (best effort) and stops every background task.
    pub async fn shutdown(&self) {
        control::leave(self).await;
        for t in lock(&self.tasks).drain(..) {
            t.abort();
        }
    }

    async fn accept_streams(self: Arc<Self>, listener: TcpListener) {
        loop {
            let (s, peer) = match listener.accept().await {
                Ok(x) => x,
                Err(e) => {
                    warn!(error = %e, "endpoint accept failed");
                    tokio::time::sleep(Duration::from_millis(10)).await;
                    continue;
                }
            };
            let node = self.clone();
            tokio::spawn(async move {
                let mut s = s;
                let mut b = [0u8; 1];
                if tokio::io::AsyncReadExt::read_exact(&mut s, &mut b)
                    .await
                    .is_err()
                {
                    return;
                }
                if b[0] == boxer_proto::transport::PREAMBLE_CONTROL {
                    control::serve_peer(node, s).await;
                } else {
                    debug!(%peer, preamble = b[0], "inbound stream");
                    let timing = node.cfg.timing;
                    transport::serve_inbound(node, b[0], s, timing).await;
                }
            });
        }
    }

    /// Wakes pollers: one throwaway connection per signalled listener.
    fn flush_signals(&self, targets: Vec<SocketAddrV4>) {
        for native in targets {
            tokio::spawn(async move {
                let r = async {
                    let sock = TcpSocket::new_v4()?;
                    // reset on close: no TIME_WAIT pile-up under heavy signalling
                    socket2::SockRef::from(&sock).set_linger(Some(Duration::ZERO))?;
                    sock.bind(SocketAddrV4::new(SIGNAL_PEER_IP, 0).into())?;
                    sock.connect(native.into()).await
                };
                if let Err(e) = r.await {
                    debug!(%native, error = %e, "signal connection failed");
                }
            });
        }
    }

    async fn reap_loop(self: Arc<Self>) {
        let mut tick = tokio::time::interval(self.cfg.timing.reap_every);
        tick.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
        loop {
            tick.tick().await;
            let owners = lock(&self.sockets).owners();
            if owners.is_empty() {
                continue;
            }
            let Ok(verdicts) = tokio::task::spawn_blocking(move || procfs::audit(&owners)).await
            else {
                continue;
            };
            let mut t = lock(&self.sockets);
            for (inode, holders) in verdicts {
                if holders.is_empty() {
                    debug!(inode = inode.0, "reaping socket");
                    t.close(inode);
                } else {
                    t.adopt(inode, holders);
                }
            }
        }
    }
}

impl Fabric for Node {
    fn me(&self) -> NodeId {
        self.id
    }

    fn bind_ip(&self) -> Ipv4Addr {
        *self.endpoint.ip()
    }

    fn peer(&self, id: NodeId) -> Option<NodeRecord> {
        lock(&self.members).set().get(id).cloned()
    }

    fn peer_by_ip(&self, ip: Ipv4Addr) -> Option<NodeRecord> {
        lock(&self.members).set().by_overlay_ip(ip).cloned()
    }

    fn would_admit(&self, dest: OverlayAddr) -> bool {
        lock(&self.sockets).would_admit(dest)
    }

    fn deliver(&self, conn: Inbound) -> bool {
        let (ok, signals) = {
            let mut t = lock(&self.sockets);
            let ok = !matches!(t.deliver(conn.dest, conn), Delivery::Refused(_));
            (ok, t.take_signals())
        };
        self.flush_signals(signals);
        ok
    }

    fn fresh_nonce(&self, nonce: u64) -> bool {
        lock(&self.nonces).insert(nonce)
    }

    fn transport_stats(&self) -> &TransportStats {
        &self.transport_stats
    }
}
