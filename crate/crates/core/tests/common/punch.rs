//! Hole-punch and proxy trials over in-process nodes.

use std::net::{Ipv4Addr, SocketAddrV4};
use std::sync::atomic::{AtomicU16, Ordering};
use std::sync::OnceLock;
use std::time::Duration;

use boxer::config::TransportPolicy;
use boxer::framed::{read_frame, write_preamble_frame};
use boxer_proto::transport::PREAMBLE_RENDEZVOUS;
use boxer_proto::{ControlMessage, NodeId, OverlayAddr, PunchOffer, Status};
use proptest::prelude::*;
use tokio::net::TcpStream;

use super::inproc::{connect, echo_once, overlay, round_trip, InProc, Listener};

pub const PUNCH: [usize; 2] = [1, 2];
pub const PROXY: [usize; 2] = [3, 4];

pub fn fresh() -> InProc {
    let relay = TransportPolicy::ProxyVia(NodeId(0));
    InProc::start(&[
        TransportPolicy::HolePunch,
        TransportPolicy::HolePunch,
        relay,
        relay,
    ])
}

/// Shared by trials that do not read global counters.
pub fn cluster() -> &'static InProc {
    static C: OnceLock<InProc> = OnceLock::new();
    C.get_or_init(fresh)
}

pub fn next_port() -> u16 {
    static P: AtomicU16 = AtomicU16::new(20000);
    P.fetch_add(1, Ordering::Relaxed)
}

fn checksum(b: &[u8]) -> u64 {
    b.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, x| {
        (h ^ *x as u64).wrapping_mul(0x100_0000_01b3)
    })
}

/// (client node, server choice among the others, payload)
pub fn trial() -> impl Strategy<Value = (usize, usize, Vec<u8>)> {
    (
        prop::sample::select(vec![PUNCH[0], PUNCH[1], PROXY[0], PROXY[1]]),
        0usize..4,
        prop::collection::vec(any::<u8>(), 1..200_000),
    )
}

/// Echoes `payload` from `client` to a listener on another node.
pub fn payload_survives(
    client: usize,
    server_pick: usize,
    payload: &[u8],
) -> Result<(), TestCaseError> {
    let c = cluster();
    let server = (0..c.nodes.len())
        .filter(|i| *i != client)
        .nth(server_pick)
        .unwrap();
    let (cn, sn) = (&c.nodes[client], &c.nodes[server]);
    let port = next_port();
    let server_thread = echo_once(Listener::open(sn, port));
    let before = sn.debug_state().table.counters.delivered;
    let s = connect(cn, overlay(sn, port))
        .map_err(|e| TestCaseError::fail(format!("connect: {e:?}")))?;
    let back = round_trip(s, payload);
    server_thread.join().unwrap();
    prop_assert_eq!(checksum(&back), checksum(payload));
    prop_assert_eq!(back.len(), payload.len());
    prop_assert_eq!(sn.debug_state().table.counters.delivered, before + 1);
    Ok(())
}

/// Every punched connection is a double success: both sides dial. Exactly
/// one verified stream per connection must survive.
pub fn double_success_leaves_one_stream(n: u64) {
    let c = &fresh();
    let (a, b) = (&c.nodes[PUNCH[0]], &c.nodes[PUNCH[1]]);
    let before = a.debug_state().transports;
    let delivered = b.debug_state().table.counters.delivered;
    for _ in 0..n {
        let port = next_port();
        let t = echo_once(Listener::open(b, port));
        let s = connect(a, overlay(b, port)).unwrap();
        assert_eq!(round_trip(s, b"hello"), b"hello");
        t.join().unwrap();
    }
    // losers are told within the grace period
    std::thread::sleep(Duration::from_millis(700));
    let after = a.debug_state().transports;
    assert_eq!(after.punched - before.punched, n);
    // both directions of every rendezvous verified; one won, one was told to lose
    assert_eq!(after.punch_verified - before.punch_verified, 2 * n);
    assert_eq!(after.punch_won - before.punch_won, n);
    assert_eq!(after.punch_lost - before.punch_lost, n);
    assert_eq!(b.debug_state().table.counters.delivered - delivered, n);
}

/// Sends one raw rendezvous offer to a node's endpoint.
fn offer(c: &InProc, to: usize, responder: NodeId, nonce: u64, dest: OverlayAddr) -> Status {
    let ep = c.nodes[to].endpoint();
    c.rt.block_on(async {
        let mut s = TcpStream::connect(ep).await.unwrap();
        let o = PunchOffer {
            initiator: NodeId(1),
            responder,
            initiator_endpoint: SocketAddrV4::new(Ipv4Addr::LOCALHOST, 9),
            responder_endpoint: SocketAddrV4::new(Ipv4Addr::UNSPECIFIED, 0),
            nonce,
            dest,
            src: OverlayAddr::new(c.nodes[1].overlay_ip(), 40000),
        };
        write_preamble_frame(&mut s, PREAMBLE_RENDEZVOUS, &ControlMessage::PunchOffer(o))
            .await
            .unwrap();
        match read_frame::<ControlMessage, _>(&mut s).await.unwrap() {
            Some(ControlMessage::PunchAnswer {
                nonce: n, status, ..
            }) => {
                assert_eq!(n, nonce);
                status
            }
            other => panic!("unexpected {other:?}"),
        }
    })
}

/// Raw offers: wrong responder, unlistened port, success, replayed nonce.
pub fn rendezvous_offer_checks() {
    let c = cluster();
    let b = &c.nodes[PUNCH[1]];
    let port = next_port();
    let _l = Listener::open(b, port);
    let dest = overlay(b, port);
    let nonce = 0x5eed_0001;
    assert_eq!(
        offer(c, PUNCH[1], NodeId(99), nonce, dest),
        Status::InvalidAddress
    );
    assert_eq!(
        offer(c, PUNCH[1], b.id(), nonce + 1, overlay(b, 1)),
        Status::ConnectionRefused
    );
    assert_eq!(offer(c, PUNCH[1], b.id(), nonce + 2, dest), Status::Ok);
    // a replayed nonce is rejected
    assert_eq!(
        offer(c, PUNCH[1], b.id(), nonce + 2, dest),
        Status::ProtocolError
    );
}
