//! Byte-stream establishment between supervisors.
//!
//! Three ways to get a stream to the node owning an overlay address:
//!
//! * direct: dial the peer's endpoint and send a [`TransportHeader`];
//! * hole punch: swap candidate endpoints over a rendezvous exchange, dial
//!   both ways at once and keep exactly one nonce-verified stream;
//! * proxy: ask a relay node to dial the target and splice the two streams.
//!
//! Every path ends with the target answering one admission byte, so a
//! refused connection is reported before the guest ever sees a descriptor.

use std::io;
use std::net::{Ipv4Addr, SocketAddrV4};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use boxer_proto::transport::{
    ProxyHeader, PunchHello, TransportHeader, ADMITTED, PREAMBLE_DIRECT, PREAMBLE_PROXY,
    PREAMBLE_RENDEZVOUS, REFUSED, VERDICT_LOSE, VERDICT_WIN,
};
use boxer_proto::{ControlMessage, NodeId, NodeRecord, OverlayAddr, PunchOffer, Status};
use serde::Serialize;
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::{TcpListener, TcpSocket, TcpStream};
use tokio::sync::mpsc;
use tokio::time::{timeout, Instant};
use tracing::debug;

use crate::config::{Timing, TransportPolicy};
use crate::framed::{read_frame, write_frame, write_preamble_frame};

/// How long the initiator keeps collecting the losing side of a double
/// success after choosing a winner.
const LOSER_GRACE: Duration = Duration::from_millis(500);

/// An admitted inbound stream waiting for a guest accept.
#[derive(Debug)]
pub struct Inbound {
    pub stream: std::net::TcpStream,
    pub peer: OverlayAddr,
    pub dest: OverlayAddr,
}

/// What the transports need from the node they run in.
pub trait Fabric: Send + Sync + 'static {
    fn me(&self) -> NodeId;
    /// Local IP candidate listeners bind to.
    fn bind_ip(&self) -> Ipv4Addr;
    fn peer(&self, id: NodeId) -> Option<NodeRecord>;
    fn peer_by_ip(&self, ip: Ipv4Addr) -> Option<NodeRecord>;
    fn would_admit(&self, dest: OverlayAddr) -> bool;
    /// False when the connection was refused after all.
    fn deliver(&self, conn: Inbound) -> bool;
    /// Records a rendezvous nonce; false if it was seen before.
    fn fresh_nonce(&self, nonce: u64) -> bool;
    fn transport_stats(&self) -> &TransportStats;
}

#[derive(Debug, Default)]
pub struct TransportStats {
    pub direct: AtomicU64,
    pub punched: AtomicU64,
    pub proxied: AtomicU64,
    pub inbound: AtomicU64,
    pub refused: AtomicU64,
    pub punch_rounds: AtomicU64,
    pub punch_verified: AtomicU64,
    pub punch_won: AtomicU64,
    pub punch_lost: AtomicU64,
    pub relayed: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct TransportCounters {
    pub direct: u64,
    pub punched: u64,
    pub proxied: u64,
    pub inbound: u64,
    pub refused: u64,
    pub punch_rounds: u64,
    pub punch_verified: u64,
    pub punch_won: u64,
    pub punch_lost: u64,
    pub relayed: u64,
}

impl TransportStats {
    pub fn snapshot(&self) -> TransportCounters {
        let g = |a: &AtomicU64| a.load(Ordering::Relaxed);
        TransportCounters {
            direct: g(&self.direct),
            punched: g(&self.punched),
            proxied: g(&self.proxied),
            inbound: g(&self.inbound),
            refused: g(&self.refused),
            punch_rounds: g(&self.punch_rounds),
            punch_verified: g(&self.punch_verified),
            punch_won: g(&self.punch_won),
            punch_lost: g(&self.punch_lost),
            relayed: g(&self.relayed),
        }
    }
}

fn bump(a: &AtomicU64) {
    a.fetch_add(1, Ordering::Relaxed);
}

async fn dial(endpoint: SocketAddrV4) -> Result<TcpStream, Status> {
    let s = TcpStream::connect(endpoint).await.map_err(|e| {
        debug!(%endpoint, error = %e, "dial failed");
        Status::HostUnreachable
    })?;
    let _ = s.set_nodelay(true);
    Ok(s)
}

async fn read_admission(s: &mut TcpStream) -> Result<(), Status> {
    let mut b = [0u8; 1];
    match s.read_exact(&mut b).await {
        Ok(_) if b[0] == ADMITTED => Ok(()),
        Ok(_) => Err(Status::ConnectionRefused),
        Err(_) => Err(Status::TransportUnavailable),
    }
}

/// Opens a stream for a guest connection from `src` to `dest`.
pub async fn establish<F: Fabric>(
    f: &Arc<F>,
    policy: TransportPolicy,
    dest: OverlayAddr,
    src: OverlayAddr,
    timing: &Timing,
) -> Result<TcpStream, Status> {
    let target = f.peer_by_ip(dest.ip).ok_or(Status::HostUnreachable)?;
    let hdr = TransportHeader {
        dest,
        src,
        src_node: f.me(),
    };
    let s = match policy {
        TransportPolicy::Direct => {
            let s = direct(target.endpoint, hdr).await?;
            bump(&f.transport_stats().direct);
            s
        }
        TransportPolicy::HolePunch => {
            let s = punch(f, &target, hdr, timing).await?;
            bump(&f.transport_stats().punched);
            s
        }
        TransportPolicy::ProxyVia(relay) => {
            let relay = f.peer(relay).ok_or(Status::TransportUnavailable)?;
            let s = proxy(relay.endpoint, target.node_id, hdr).await?;
            bump(&f.transport_stats().proxied);
            s
        }
    };
    Ok(s)
}

async fn direct(endpoint: SocketAddrV4, hdr: TransportHeader) -> Result<TcpStream, Status> {
    let mut s = direct_raw(endpoint, hdr)
        .await
        .map_err(|_| Status::HostUnreachable)?;
    read_admission(&mut s).await?;
    Ok(s)
}

async fn proxy(
    relay: SocketAddrV4,
    target: NodeId,
    hdr: TransportHeader,
) -> Result<TcpStream, Status> {
    let mut s = dial(relay)
        .await
        .map_err(|_| Status::TransportUnavailable)?;
    let mut msg = vec![PREAMBLE_PROXY];
    msg.extend_from_slice(&ProxyHeader { target, inner: hdr }.encode());
    s.write_all(&msg)
        .await
        .map_err(|_| Status::TransportUnavailable)?;
    read_admission(&mut s).await?;
    Ok(s)
}

async fn candidate_listener(ip: Ipv4Addr) -> io::Result<(TcpListener, SocketAddrV4)> {
    let sock = TcpSocket::new_v4()?;
    sock.set_reuseaddr(true)?;
    sock.bind(SocketAddrV4::new(ip, 0).into())?;
    let l = sock.listen(16)?;
    let addr = match l.local_addr()? {
        std::net::SocketAddr::V4(a) => a,
        _ => unreachable!("bound to an IPv4 address"),
    };
    Ok((l, addr))
}

/// Swaps hellos and checks the peer names the same rendezvous.
async fn hello(s: &mut TcpStream, nonce: u64, me: NodeId, peer: NodeId) -> io::Result<()> {
    s.write_all(&PunchHello { nonce, node: me }.encode())
        .await?;
    let mut b = [0u8; PunchHello::LEN];
    s.read_exact(&mut b).await?;
    let h = PunchHello::decode(&b)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))?;
    if h.nonce != nonce || h.node != peer {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            "hello for another rendezvous",
        ));
    }
    Ok(())
}

/// Feeds `out` with every stream reachable in both directions until
/// `deadline`: one outbound dial to `remote` and whatever arrives on
/// `listener`. Each stream is passed through `check` first.
fn race<C, Fut>(
    listener: TcpListener,
    remote: SocketAddrV4,
    deadline: Instant,
    check: C,
    out: mpsc::Sender<TcpStream>,
) where
    C: Fn(TcpStream) -> Fut + Clone + Send + 'static,
    Fut: std::future::Future<Output = Option<TcpStream>> + Send,
{
    let (c, o) = (check.clone(), out.clone());
    tokio::spawn(async move {
        let _ = tokio::time::timeout_at(deadline, async move {
            if let Ok(s) = TcpStream::connect(remote).await {
                let _ = s.set_nodelay(true);
                if let Some(s) = c(s).await {
                    let _ = o.send(s).await;
                }
            }
        })
        .await;
    });
    tokio::spawn(async move {
        let _ = tokio::time::timeout_at(deadline, async move {
            while let Ok((s, _)) = listener.accept().await {
                let _ = s.set_nodelay(true);
                let (c, o) = (check.clone(), out.clone());
                tokio::spawn(async move {
                    if let Some(s) = c(s).await {
                        let _ = o.send(s).await;
                    }
                });
            }
        })
        .await;
    });
}

async fn punch<F: Fabric>(
    f: &Arc<F>,
    target: &NodeRecord,
    hdr: TransportHeader,
    timing: &Timing,
) -> Result<TcpStream, Status> {
    for round in 0..timing.punch_rounds {
        bump(&f.transport_stats().punch_rounds);
        match timeout(
            timing.punch_round,
            punch_round(f, target, hdr, timing.punch_round),
        )
        .await
        {
            Ok(Ok(s)) => return Ok(s),
            Ok(Err(Status::ConnectionRefused)) => return Err(Status::ConnectionRefused),
            Ok(Err(e)) => debug!(round, ?e, "punch round failed"),
            Err(_) => debug!(round, "punch round timed out"),
        }
    }
    Err(Status::TransportUnavailable)
}

async fn punch_round<F: Fabric>(
    f: &Arc<F>,
    target: &NodeRecord,
    hdr: TransportHeader,
    budget: Duration,
) -> Result<TcpStream, Status> {
    let deadline = Instant::now() + budget;
    let nonce: u64 = rand::random();
    let (listener, cand) = candidate_listener(f.bind_ip())
        .await
        .map_err(|_| Status::TransportUnavailable)?;
    let mut rv = dial(target.endpoint).await?;
    let offer = PunchOffer {
        initiator: f.me(),
        responder: target.node_id,
        initiator_endpoint: cand,
        responder_endpoint: SocketAddrV4::new(Ipv4Addr::UNSPECIFIED, 0),
        nonce,
        dest: hdr.dest,
        src: hdr.src,
    };
    write_preamble_frame(
        &mut rv,
        PREAMBLE_RENDEZVOUS,
        &ControlMessage::PunchOffer(offer),
    )
    .await
    .map_err(|_| Status::TransportUnavailable)?;
    let remote = match read_frame::<ControlMessage, _>(&mut rv).await {
        Ok(Some(ControlMessage::PunchAnswer {
            nonce: n,
            responder_endpoint,
            status,
        })) if n == nonce => {
            if !status.is_ok() {
                return Err(status);
            }
            responder_endpoint
        }
        _ => return Err(Status::ProtocolError),
    };

    let (tx, mut rx) = mpsc::channel(4);
    let (me, peer) = (f.me(), target.node_id);
    let fab = f.clone();
    race(
        listener,
        remote,
        deadline,
        move |mut s: TcpStream| {
            let fab = fab.clone();
            async move {
                hello(&mut s, nonce, me, peer).await.ok()?;
                bump(&fab.transport_stats().punch_verified);
                Some(s)
            }
        },
        tx,
    );
    let mut winner = rx.recv().await.ok_or(Status::TransportUnavailable)?;
    winner
        .write_all(&[VERDICT_WIN])
        .await
        .map_err(|_| Status::TransportUnavailable)?;
    bump(&f.transport_stats().punch_won);
    let fab = f.clone();
    tokio::spawn(async move {
        let grace = Instant::now() + LOSER_GRACE;
        while let Ok(Some(mut s)) = tokio::time::timeout_at(grace, rx.recv()).await {
            let _ = s.write_all(&[VERDICT_LOSE]).await;
            bump(&fab.transport_stats().punch_lost);
        }
    });
    read_admission(&mut winner).await?;
    Ok(winner)
}

/// Serves one inbound stream whose preamble byte was already read.
pub async fn serve_inbound<F: Fabric>(f: Arc<F>, preamble: u8, s: TcpStream, timing: Timing) {
    let _ = s.set_nodelay(true);
    let r = match preamble {
        PREAMBLE_DIRECT => accept_direct(&f, s).await,
        PREAMBLE_RENDEZVOUS => accept_rendezvous(&f, s, timing.punch_round).await,
        PREAMBLE_PROXY => relay(&f, s).await,
        other => {
            debug!(preamble = other, "unknown stream preamble");
            Ok(())
        }
    };
    if let Err(e) = r {
        debug!(error = %e, "inbound stream failed");
    }
}

async fn accept_direct<F: Fabric>(f: &Arc<F>, mut s: TcpStream) -> io::Result<()> {
    let mut b = [0u8; TransportHeader::LEN];
    s.read_exact(&mut b).await?;
    let hdr = TransportHeader::decode(&b)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))?;
    admit(f, s, hdr).await
}

/// Answers the admission byte and, if admitted, hands the stream to the
/// socket table.
async fn admit<F: Fabric>(f: &Arc<F>, mut s: TcpStream, hdr: TransportHeader) -> io::Result<()> {
    if !f.would_admit(hdr.dest) {
        bump(&f.transport_stats().refused);
        return s.write_all(&[REFUSED]).await;
    }
    s.write_all(&[ADMITTED]).await?;
    let stream = s.into_std()?;
    stream.set_nonblocking(false)?;
    bump(&f.transport_stats().inbound);
    if !f.deliver(Inbound {
        stream,
        peer: hdr.src,
        dest: hdr.dest,
    }) {
        bump(&f.transport_stats().refused);
    }
    Ok(())
}

async fn accept_rendezvous<F: Fabric>(
    f: &Arc<F>,
    mut rv: TcpStream,
    budget: Duration,
) -> io::Result<()> {
    let deadline = Instant::now() + budget;
    let Some(ControlMessage::PunchOffer(offer)) = read_frame::<ControlMessage, _>(&mut rv).await?
    else {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            "expected a punch offer",
        ));
    };
    let answer = |status, ep| ControlMessage::PunchAnswer {
        nonce: offer.nonce,
        responder_endpoint: ep,
        status,
    };
    let unspecified = SocketAddrV4::new(Ipv4Addr::UNSPECIFIED, 0);
    let verdict = if offer.responder != f.me() {
        Status::InvalidAddress
    } else if !f.fresh_nonce(offer.nonce) {
        Status::ProtocolError
    } else if !f.would_admit(offer.dest) {
        Status::ConnectionRefused
    } else {
        Status::Ok
    };
    if verdict != Status::Ok {
        return write_frame(&mut rv, &answer(verdict, unspecified)).await;
    }
    let (listener, cand) = candidate_listener(f.bind_ip()).await?;
    write_frame(&mut rv, &answer(Status::Ok, cand)).await?;

    let (tx, mut rx) = mpsc::channel(4);
    let (me, peer, nonce) = (f.me(), offer.initiator, offer.nonce);
    race(
        listener,
        offer.initiator_endpoint,
        deadline,
        move |mut s: TcpStream| async move {
            hello(&mut s, nonce, me, peer).await.ok()?;
            let mut v = [0u8; 1];
            s.read_exact(&mut v).await.ok()?;
            (v[0] == VERDICT_WIN).then_some(s)
        },
        tx,
    );
    let Ok(Some(winner)) = tokio::time::timeout_at(deadline, rx.recv()).await else {
        debug!(nonce, "punch round ended without a winner");
        return Ok(());
    };
    admit(
        f,
        winner,
        TransportHeader {
            dest: offer.dest,
            src: offer.src,
            src_node: offer.initiator,
        },
    )
    .await
}

async fn relay<F: Fabric>(f: &Arc<F>, mut a: TcpStream) -> io::Result<()> {
    let mut b = [0u8; ProxyHeader::LEN];
    a.read_exact(&mut b).await?;
    let hdr = ProxyHeader::decode(&b)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))?;
    let Some(target) = f.peer(hdr.target) else {
        return a.write_all(&[REFUSED]).await;
    };
    let mut t = match direct_raw(target.endpoint, hdr.inner).await {
        Ok(t) => t,
        Err(_) => return a.write_all(&[REFUSED]).await,
    };
    let mut byte = [0u8; 1];
    t.read_exact(&mut byte).await?;
    a.write_all(&byte).await?;
    if byte[0] != ADMITTED {
        return Ok(());
    }
    bump(&f.transport_stats().relayed);
    debug!(target = hdr.target.0, "relaying");
    tokio::io::copy_bidirectional(&mut a, &mut t)
        .await
        .map(|_| ())
}

/// A direct stream whose admission byte is left unread.
async fn direct_raw(endpoint: SocketAddrV4, hdr: TransportHeader) -> io::Result<TcpStream> {
    let mut s = TcpStream::connect(endpoint).await?;
    s.set_nodelay(true)?;
    let mut msg = vec![PREAMBLE_DIRECT];
    msg.extend_from_slice(&hdr.encode());
    s.write_all(&msg).await?;
    Ok(s)
}
