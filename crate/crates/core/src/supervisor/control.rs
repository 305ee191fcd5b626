//! The control network: every node keeps one framed connection to the seed,
//! which sequences membership changes and fans them out.

use std::collections::HashMap;
use std::net::{Ipv4Addr, SocketAddrV4};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, bail};
use boxer_proto::transport::PREAMBLE_CONTROL;
use boxer_proto::{ControlMessage, MembershipEvent, MembershipUpdate, NodeId, NodeRecord};
use tokio::net::tcp::OwnedWriteHalf;
use tokio::net::TcpStream;
use tokio::sync::mpsc;
use tokio::task::JoinHandle;
use tokio::time::Instant;
use tracing::{debug, info, warn};

use super::{lock, Node};
use crate::config::Timing;
use crate::coord::Registry;
use crate::framed::{read_frame, write_frame, write_preamble_frame};

struct Peer {
    tx: mpsc::UnboundedSender<ControlMessage>,
    last_seen: Instant,
}

pub(super) struct SeedState {
    registry: Registry,
    peers: HashMap<NodeId, Peer>,
}

impl SeedState {
    pub(super) fn new(registry: Registry) -> Self {
        SeedState {
            registry,
            peers: HashMap::new(),
        }
    }
}

/// The member's link to the seed.
pub(super) struct Uplink {
    tx: mpsc::UnboundedSender<ControlMessage>,
    writer: JoinHandle<()>,
}

pub(super) struct Joined {
    pub node_id: NodeId,
    pub version: u64,
    pub records: Vec<NodeRecord>,
}

#[derive(Debug)]
enum JoinError {
    Rejected(String),
    Retry(anyhow::Error),
}

async fn try_join(
    seed: SocketAddrV4,
    name: Option<String>,
    endpoint: SocketAddrV4,
    timing: &Timing,
) -> Result<(TcpStream, Joined), JoinError> {
    let retry = |e: anyhow::Error| JoinError::Retry(e);
    let mut s = tokio::time::timeout(timing.connect_timeout, TcpStream::connect(seed))
        .await
        .map_err(|_| retry(anyhow!("connecting to seed {seed} timed out")))?
        .map_err(|e| retry(anyhow!("connecting to seed {seed}: {e}")))?;
    s.set_nodelay(true).map_err(|e| retry(e.into()))?;
    write_preamble_frame(
        &mut s,
        PREAMBLE_CONTROL,
        &ControlMessage::Join { name, endpoint },
    )
    .await
    .map_err(|e| retry(e.into()))?;
    let reply = tokio::time::timeout(
        timing.connect_timeout,
        read_frame::<ControlMessage, _>(&mut s),
    )
    .await
    .map_err(|_| retry(anyhow!("seed did not answer the join")))?
    .map_err(|e| retry(e.into()))?;
    match reply {
        Some(ControlMessage::JoinAck {
            node_id,
            version,
            records,
            ..
        }) => Ok((
            s,
            Joined {
                node_id,
                version,
                records,
            },
        )),
        Some(ControlMessage::JoinReject { reason, detail }) => {
            Err(JoinError::Rejected(format!("{reason:?}: {detail}")))
        }
        other => Err(retry(anyhow!("unexpected join reply {other:?}"))),
    }
}

/// Joins through `seed`, retrying with capped exponential backoff.
pub(super) async fn join(
    seed: SocketAddrV4,
    name: Option<String>,
    endpoint: SocketAddrV4,
    timing: &Timing,
) -> anyhow::Result<(TcpStream, Joined)> {
    let mut delay = timing.join_backoff;
    for attempt in 1..=timing.join_attempts {
        match try_join(seed, name.clone(), endpoint, timing).await {
            Ok(x) => return Ok(x),
            Err(JoinError::Rejected(why)) => bail!("join rejected: {why}"),
            Err(JoinError::Retry(e)) if attempt < timing.join_attempts => {
                warn!(attempt, error = %e, "join failed, retrying");
                tokio::time::sleep(delay).await;
                delay = (delay * 2).min(timing.join_backoff_cap);
            }
            Err(JoinError::Retry(e)) => {
                return Err(e.context(format!("join failed after {attempt} attempts")))
            }
        }
    }
    bail!("join attempts must be at least 1")
}

async fn write_loop(mut w: OwnedWriteHalf, mut rx: mpsc::UnboundedReceiver<ControlMessage>) {
    while let Some(msg) = rx.recv().await {
        let last = matches!(
            msg,
            ControlMessage::Leave { .. } | ControlMessage::JoinReject { .. }
        );
        if let Err(e) = write_frame(&mut w, &msg).await {
            debug!(error = %e, "control write failed");
            return;
        }
        if last {
            return;
        }
    }
}

// ---- member side ----

pub(super) fn run_member(node: &Arc<Node>, stream: TcpStream) {
    let (mut rd, wr) = stream.into_split();
    let (tx, rx) = mpsc::unbounded_channel();
    let writer = tokio::spawn(write_loop(wr, rx));
    *lock(&node.uplink) = Some(Uplink {
        tx: tx.clone(),
        writer,
    });

    let n = node.clone();
    node.spawn(async move {
        loop {
            match read_frame::<ControlMessage, _>(&mut rd).await {
                Ok(Some(ControlMessage::Update(u))) => n.apply_update(u),
                Ok(Some(ControlMessage::UpdateBatch { updates })) => {
                    for u in updates {
                        n.apply_update(u);
                    }
                }
                Ok(Some(other)) => debug!(?other, "ignoring control message"),
                Ok(None) | Err(_) => break,
            }
        }
        warn!(node = n.id.0, "lost the seed; membership is now stale");
        lock(&n.members).mark_stale();
    });

    let n = node.clone();
    let timing = node.cfg.timing;
    node.spawn(async move {
        let mut tick = tokio::time::interval(timing.heartbeat);
        loop {
            tick.tick().await;
            let version = lock(&n.members).set().version();
            if tx
                .send(ControlMessage::Heartbeat {
                    node_id: n.id,
                    version,
                })
                .is_err()
            {
                return;
            }
        }
    });

    let n = node.clone();
    node.spawn(async move { fill_gaps(n, timing).await });
}

/// Refetches from the seed when an update has been held past the refetch
/// delay, and marks membership stale if the gap stays open.
async fn fill_gaps(node: Arc<Node>, timing: Timing) {
    let mut tick = tokio::time::interval(timing.refetch_after / 4);
    let mut gap_since: Option<Instant> = None;
    let mut asked: Option<Instant> = None;
    loop {
        tick.tick().await;
        let Some(from_seq) = lock(&node.members).missing() else {
            gap_since = None;
            asked = None;
            continue;
        };
        let since = *gap_since.get_or_insert_with(Instant::now);
        if since.elapsed() < timing.refetch_after {
            continue;
        }
        if asked.is_none_or(|t| t.elapsed() >= timing.refetch_after) {
            if let Some(up) = lock(&node.uplink).as_ref() {
                let _ = up.tx.send(ControlMessage::FetchUpdates { from_seq });
            }
            asked = Some(Instant::now());
        }
        if since.elapsed() >= timing.refetch_after * 2 {
            lock(&node.members).mark_stale();
        }
    }
}

/// Tells the seed this node is going away and waits briefly for the
/// message to leave.
pub(super) async fn leave(node: &Node) {
    let Some(up) = lock(&node.uplink).take() else {
        return;
    };
    let _ = up.tx.send(ControlMessage::Leave { node_id: node.id });
    drop(up.tx);
    let _ = tokio::time::timeout(Duration::from_secs(1), up.writer).await;
}

// ---- seed side ----

impl Node {
    fn seed(&self) -> std::sync::MutexGuard<'_, SeedState> {
        lock(
            self.seed
                .as_ref()
                .expect("only the seed serves control peers"),
        )
    }

    /// Sends `u` to every peer, then applies it locally. Runs with the seed
    /// lock held so peers see updates in sequence order.
    fn publish(&self, seed: &mut SeedState, u: MembershipUpdate) {
        for p in seed.peers.values() {
            let _ = p.tx.send(ControlMessage::Update(u.clone()));
        }
        self.apply_update(u);
    }

    fn drop_peer(&self, id: NodeId, why: &str) {
        let mut seed = self.seed();
        if seed.peers.remove(&id).is_none() {
            return;
        }
        info!(node = id.0, why, "member left");
        if let Some(u) = seed.registry.leave(id) {
            self.publish(&mut seed, u);
        }
    }
}

pub(super) async fn serve_peer(node: Arc<Node>, s: TcpStream) {
    if node.seed.is_none() {
        debug!("control connection to a non-seed node");
        return;
    }
    let _ = s.set_nodelay(true);
    let (mut rd, wr) = s.into_split();
    let Ok(Some(ControlMessage::Join { name, endpoint })) =
        read_frame::<ControlMessage, _>(&mut rd).await
    else {
        debug!("control connection without a join");
        return;
    };
    let (tx, rx) = mpsc::unbounded_channel();
    let writer = tokio::spawn(write_loop(wr, rx));
    let admitted = {
        let mut seed = node.seed();
        match seed.registry.admit(name, endpoint) {
            Ok(u) => {
                let MembershipEvent::Join(rec) = &u.event else {
                    unreachable!("admit yields a join")
                };
                let (id, ip): (NodeId, Ipv4Addr) = (rec.node_id, rec.overlay_ip);
                let records: Vec<NodeRecord> = seed.registry.set().records().cloned().collect();
                let ack = ControlMessage::JoinAck {
                    node_id: id,
                    overlay_ip: ip,
                    version: seed.registry.version(),
                    records,
                };
                let _ = tx.send(ack);
                node.publish(&mut seed, u);
                seed.peers.insert(
                    id,
                    Peer {
                        tx,
                        last_seen: Instant::now(),
                    },
                );
                Some(id)
            }
            Err((reason, detail)) => {
                info!(?reason, %detail, "join rejected");
                let _ = tx.send(ControlMessage::JoinReject { reason, detail });
                None
            }
        }
    };
    let Some(id) = admitted else {
        let _ = writer.await;
        return;
    };
    info!(node = id.0, %endpoint, "member joined");

    let why = loop {
        match read_frame::<ControlMessage, _>(&mut rd).await {
            Ok(Some(ControlMessage::Heartbeat { .. })) => {
                if let Some(p) = node.seed().peers.get_mut(&id) {
                    p.last_seen = Instant::now();
                }
            }
            Ok(Some(ControlMessage::FetchUpdates { from_seq })) => {
                let seed = node.seed();
                if let Some(p) = seed.peers.get(&id) {
                    let _ = p.tx.send(ControlMessage::UpdateBatch {
                        updates: seed.registry.since(from_seq),
                    });
                }
            }
            Ok(Some(ControlMessage::RegisterName { name, .. })) => {
                let mut seed = node.seed();
                match seed.registry.register_name(id, name) {
                    Ok(u) => node.publish(&mut seed, u),
                    Err((reason, detail)) => {
                        info!(node = id.0, ?reason, %detail, "name registration refused")
                    }
                }
            }
            Ok(Some(ControlMessage::Leave { .. })) => break "left",
            Ok(Some(other)) => debug!(?other, "ignoring control message"),
            Ok(None) => break "disconnected",
            Err(e) => {
                debug!(error = %e, "control read failed");
                break "protocol error";
            }
        }
    };
    node.drop_peer(id, why);
}

/// Declares members dead after a heartbeat gap.
pub(super) async fn watchdog(node: Arc<Node>) {
    let timing = node.cfg.timing;
    let mut tick = tokio::time::interval(timing.heartbeat / 2);
    loop {
        tick.tick().await;
        let dead: Vec<NodeId> = node
            .seed()
            .peers
            .iter()
            .filter(|(_, p)| p.last_seen.elapsed() > timing.heartbeat_miss)
            .map(|(id, _)| *id)
            .collect();
        for id in dead {
            node.drop_peer(id, "missed heartbeats");
        }
    }
}
