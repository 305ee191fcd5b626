mod common;

use std::time::Duration;

use boxer_proto::Status;
use common::inproc::{connect, echo_once, overlay, round_trip, Listener};
use common::punch::{
    cluster, double_success_leaves_one_stream, fresh, next_port, payload_survives,
    rendezvous_offer_checks, trial, PROXY, PUNCH,
};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn payload_survives_punch_and_proxy((client, server_pick, payload) in trial()) {
        payload_survives(client, server_pick, &payload)?;
    }
}

#[test]
fn double_success_leaves_one_verified_stream() {
    double_success_leaves_one_stream(5);
}

#[test]
fn proxy_path_goes_through_the_relay() {
    let c = &fresh();
    let (a, b, relay) = (&c.nodes[PROXY[0]], &c.nodes[PUNCH[0]], &c.nodes[0]);
    let relayed = relay.debug_state().transports.relayed;
    let port = next_port();
    let t = echo_once(Listener::open(b, port));
    let s = connect(a, overlay(b, port)).unwrap();
    assert_eq!(round_trip(s, &[7u8; 4096]), vec![7u8; 4096]);
    t.join().unwrap();
    assert_eq!(relay.debug_state().transports.relayed, relayed + 1);
}

#[test]
fn unlistened_port_is_refused_on_every_transport() {
    let c = cluster();
    for client in [PUNCH[0], PROXY[0], 0] {
        let target = if client == PUNCH[1] {
            PUNCH[0]
        } else {
            PUNCH[1]
        };
        let t0 = std::time::Instant::now();
        let r = connect(&c.nodes[client], overlay(&c.nodes[target], 1));
        assert_eq!(r.err(), Some(Status::ConnectionRefused), "client {client}");
        assert!(t0.elapsed() < Duration::from_secs(1));
    }
}

#[test]
fn rendezvous_checks_responder_nonce_and_listener() {
    rendezvous_offer_checks();
}
