//! The seed's authoritative view: identity assignment, the name registry and
//! the sequenced update log.

use std::net::SocketAddrV4;

use boxer_proto::{
    MembershipEvent, MembershipUpdate, NodeId, NodeRecord, OverlayCidr, RejectReason,
};

use super::membership::MembershipSet;

const MAX_NAME: usize = 63;

#[derive(Debug, Clone)]
pub struct Registry {
    cidr: OverlayCidr,
    next_id: u64,
    log: Vec<MembershipUpdate>,
    set: MembershipSet,
}

pub type Rejection = (RejectReason, String);

impl Registry {
    /// Starts a network with the seed as node 0; its join is update 1.
    pub fn new(
        cidr: OverlayCidr,
        name: Option<String>,
        endpoint: SocketAddrV4,
    ) -> Result<Self, Rejection> {
        let mut r = Registry {
            cidr,
            next_id: 0,
            log: Vec::new(),
            set: MembershipSet::new(),
        };
        r.admit(name, endpoint)?;
        Ok(r)
    }

    pub fn set(&self) -> &MembershipSet {
        &self.set
    }

    pub fn version(&self) -> u64 {
        self.set.version()
    }

    fn check_name(&self, name: &str, id: NodeId) -> Result<(), Rejection> {
        if name.is_empty()
            || name.len() > MAX_NAME
            || name.chars().any(|c| c.is_whitespace() || c.is_control())
        {
            return Err((
                RejectReason::Malformed,
                format!("invalid node name {name:?}"),
            ));
        }
        if let Some(owner) = NodeId::from_canonical_name(name) {
            if owner != id {
                return Err((
                    RejectReason::NameConflict,
                    format!("{name} is the canonical name of another node"),
                ));
            }
        }
        if let Some(other) = self.set.by_name(name) {
            if other.node_id != id {
                return Err((
                    RejectReason::NameConflict,
                    format!("{name} already registered by node {}", other.node_id.0),
                ));
            }
        }
        Ok(())
    }

    fn push(&mut self, event: MembershipEvent) -> MembershipUpdate {
        let u = MembershipUpdate {
            seq: self.set.version() + 1,
            event,
        };
        self.set.apply(&u);
        self.log.push(u.clone());
        u
    }

    pub fn admit(
        &mut self,
        name: Option<String>,
        endpoint: SocketAddrV4,
    ) -> Result<MembershipUpdate, Rejection> {
        let id = NodeId(self.next_id);
        if let Some(n) = &name {
            self.check_name(n, id)?;
        }
        let ip = self.cidr.host_for(id).ok_or_else(|| {
            (
                RejectReason::CidrExhausted,
                format!("no address left in {}", self.cidr),
            )
        })?;
        self.next_id += 1;
        let record = NodeRecord {
            node_id: id,
            endpoint,
            overlay_ip: ip,
            name,
            seq: 0,
        };
        Ok(self.push(MembershipEvent::Join(record)))
    }

    pub fn leave(&mut self, id: NodeId) -> Option<MembershipUpdate> {
        self.set.get(id)?;
        Some(self.push(MembershipEvent::Leave(id)))
    }

    pub fn register_name(
        &mut self,
        id: NodeId,
        name: String,
    ) -> Result<MembershipUpdate, Rejection> {
        if self.set.get(id).is_none() {
            return Err((
                RejectReason::Malformed,
                format!("node {} is not a member", id.0),
            ));
        }
        self.check_name(&name, id)?;
        Ok(self.push(MembershipEvent::Name { node_id: id, name }))
    }

    /// Log entries with `seq >= from`.
    pub fn since(&self, from: u64) -> Vec<MembershipUpdate> {
        let start = from.saturating_sub(1) as usize;
        self.log.get(start..).map(<[_]>::to_vec).unwrap_or_default()
    }

    pub fn log(&self) -> &[MembershipUpdate] {
        &self.log
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::net::Ipv4Addr;

    fn ep(p: u16) -> SocketAddrV4 {
        SocketAddrV4::new(Ipv4Addr::LOCALHOST, p)
    }

    #[test]
    fn allocation_follows_node_id() {
        let mut r = Registry::new(OverlayCidr::DEFAULT, None, ep(1)).unwrap();
        let u = r.admit(Some("zk-3".into()), ep(2)).unwrap();
        let MembershipEvent::Join(rec) = u.event else {
            panic!()
        };
        assert_eq!(rec.node_id, NodeId(1));
        assert_eq!(rec.overlay_ip, Ipv4Addr::new(10, 77, 0, 2));
        assert_eq!(u.seq, 2);
        assert_eq!(r.set().resolve("zk-3"), Some(rec.overlay_ip));
    }

    #[test]
    fn duplicate_name_rejected_without_change() {
        let mut r = Registry::new(OverlayCidr::DEFAULT, Some("a".into()), ep(1)).unwrap();
        let before = r.set().clone();
        let (why, _) = r.admit(Some("a".into()), ep(2)).unwrap_err();
        assert_eq!(why, RejectReason::NameConflict);
        assert_eq!(r.set(), &before);
        // the id is not consumed by a rejected join
        let MembershipEvent::Join(rec) = r.admit(None, ep(3)).unwrap().event else {
            panic!()
        };
        assert_eq!(rec.node_id, NodeId(1));
    }

    #[test]
    fn canonical_names_are_reserved() {
        let mut r = Registry::new(OverlayCidr::DEFAULT, None, ep(1)).unwrap();
        assert_eq!(
            r.admit(Some("node-0".into()), ep(2)).unwrap_err().0,
            RejectReason::NameConflict
        );
        assert!(r.admit(Some("node-1".into()), ep(2)).is_ok());
    }

    #[test]
    fn exhausted_cidr_rejects() {
        let cidr: OverlayCidr = "10.9.0.0/30".parse().unwrap();
        let mut r = Registry::new(cidr, None, ep(1)).unwrap();
        r.admit(None, ep(2)).unwrap();
        assert_eq!(
            r.admit(None, ep(3)).unwrap_err().0,
            RejectReason::CidrExhausted
        );
    }

    #[test]
    fn log_replays_from_any_point() {
        let mut r = Registry::new(OverlayCidr::DEFAULT, None, ep(1)).unwrap();
        r.admit(None, ep(2)).unwrap();
        r.leave(NodeId(1)).unwrap();
        assert_eq!(r.since(1).len(), 3);
        assert_eq!(
            r.since(3).iter().map(|u| u.seq).collect::<Vec<_>>(),
            vec![3]
        );
        assert!(r.since(4).is_empty());
        assert!(r.leave(NodeId(1)).is_none());
    }
}
