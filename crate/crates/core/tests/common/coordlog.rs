//! Out-of-order application of a real membership log.

use std::net::{Ipv4Addr, SocketAddrV4};

use boxer::coord::membership::{Follower, MembershipSet};
use boxer::coord::registry::Registry;
use boxer_proto::{MembershipUpdate, NodeId, OverlayCidr};
use proptest::prelude::*;

pub const LOG_LEN: usize = 20;

#[derive(Debug, Clone)]
pub enum Step {
    Join(Option<u8>),
    Leave(u8),
    Name(u8, u8),
}

pub fn step() -> impl Strategy<Value = Step> {
    prop_oneof![
        3 => prop::option::of(0u8..12).prop_map(Step::Join),
        1 => (0u8..8).prop_map(Step::Leave),
        1 => (0u8..8, 0u8..12).prop_map(|(n, k)| Step::Name(n, k)),
    ]
}

fn ep(i: u16) -> SocketAddrV4 {
    SocketAddrV4::new(Ipv4Addr::LOCALHOST, 7000 + i)
}

/// Drives a real seed registry until it has logged `LOG_LEN` updates after
/// its own join. Returns the starting snapshot, the log and the seed's
/// final view.
fn seed_log(steps: &[Step]) -> (MembershipSet, Vec<MembershipUpdate>, MembershipSet) {
    let mut r = Registry::new(OverlayCidr::DEFAULT, Some("seed".into()), ep(0)).unwrap();
    let start = r.set().clone();
    let base = r.version();
    for (i, s) in steps.iter().cycle().enumerate().take(10_000) {
        if r.since(base).len() >= LOG_LEN {
            break;
        }
        // rejected steps (name conflicts, unknown nodes) log nothing
        match s {
            Step::Join(n) => drop(r.admit(n.map(|k| format!("svc-{k}")), ep(i as u16 + 1))),
            Step::Leave(n) => drop(r.leave(NodeId(*n as u64 + 1))),
            Step::Name(n, k) => drop(r.register_name(NodeId(*n as u64 + 1), format!("svc-{k}"))),
        }
    }
    (start, r.since(base), r.set().clone())
}

/// `order` is a permutation of the log; `dups` are extra re-deliveries
/// interleaved with it.
pub fn converges(steps: &[Step], order: &[usize], dups: &[usize]) -> Result<(), TestCaseError> {
    let (start, log, seed_view) = seed_log(steps);
    prop_assume!(log.len() == LOG_LEN);

    let mut inorder = Follower::new(start.clone());
    let mut want = Vec::new();
    for u in &log {
        want.extend(inorder.offer(u.clone()));
    }
    prop_assert_eq!(inorder.set(), &seed_view);

    let mut f = Follower::new(start);
    let mut got = Vec::new();
    for (k, i) in order.iter().enumerate() {
        got.extend(f.offer(log[*i].clone()));
        if let Some(d) = dups.get(k) {
            got.extend(f.offer(log[*d].clone()));
        }
    }
    prop_assert_eq!(f.held(), 0);
    prop_assert_eq!(f.set(), &seed_view);
    // released changes come out in sequence order whatever the arrival order
    prop_assert_eq!(
        got.iter().map(|c| c.to_string()).collect::<Vec<_>>(),
        want.iter().map(|c| c.to_string()).collect::<Vec<_>>()
    );
    Ok(())
}
