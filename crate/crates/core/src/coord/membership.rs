//! Membership state as seen by one node, and the hold-and-reorder buffer
//! that feeds it seed-sequenced updates.

use std::collections::BTreeMap;
use std::fmt;
use std::net::Ipv4Addr;

use boxer_proto::control::encode_record;
use boxer_proto::{MembershipEvent, MembershipUpdate, NodeId, NodeRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChangeKind {
    Join,
    Leave,
    Name,
}

impl ChangeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ChangeKind::Join => "join",
            ChangeKind::Leave => "leave",
            ChangeKind::Name => "name",
        }
    }
}

/// An applied update, carrying the record as it was after a join or rename
/// and before a leave.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Change {
    pub seq: u64,
    pub kind: ChangeKind,
    pub record: NodeRecord,
}

impl fmt::Display for Change {
    /// The streaming-interface line, without the trailing newline.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let r = &self.record;
        write!(
            f,
            "EVENT {} {} {} {}",
            self.kind.as_str(),
            r.node_id.0,
            r.overlay_ip,
            r.name.as_deref().unwrap_or("-")
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Applied {
    /// The update advanced the version; `None` when it touched no live record.
    Next(Option<Change>),
    Duplicate,
    /// Predecessors are missing.
    Gap,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MembershipSet {
    version: u64,
    records: BTreeMap<NodeId, NodeRecord>,
}

impl MembershipSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_snapshot(version: u64, records: impl IntoIterator<Item = NodeRecord>) -> Self {
        MembershipSet {
            version,
            records: records.into_iter().map(|r| (r.node_id, r)).collect(),
        }
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> impl Iterator<Item = &NodeRecord> {
        self.records.values()
    }

    pub fn get(&self, id: NodeId) -> Option<&NodeRecord> {
        self.records.get(&id)
    }

    pub fn by_overlay_ip(&self, ip: Ipv4Addr) -> Option<&NodeRecord> {
        self.records.values().find(|r| r.overlay_ip == ip)
    }

    pub fn by_name(&self, name: &str) -> Option<&NodeRecord> {
        self.records
            .values()
            .find(|r| r.name.as_deref() == Some(name))
    }

    /// Registered name first, then the canonical `node-<id>` form.
    pub fn resolve(&self, name: &str) -> Option<Ipv4Addr> {
        if let Some(r) = self.by_name(name) {
            return Some(r.overlay_ip);
        }
        NodeId::from_canonical_name(name)
            .and_then(|id| self.get(id))
            .map(|r| r.overlay_ip)
    }

    pub fn has_names<'a>(&self, names: impl IntoIterator<Item = &'a String>) -> bool {
        names.into_iter().all(|n| self.by_name(n).is_some())
    }

    pub fn apply(&mut self, u: &MembershipUpdate) -> Applied {
        if u.seq <= self.version {
            return Applied::Duplicate;
        }
        if u.seq != self.version + 1 {
            return Applied::Gap;
        }
        self.version = u.seq;
        let change = match &u.event {
            MembershipEvent::Join(rec) => {
                let rec = NodeRecord {
                    seq: u.seq,
                    ..rec.clone()
                };
                self.records.insert(rec.node_id, rec.clone());
                Some(Change {
                    seq: u.seq,
                    kind: ChangeKind::Join,
                    record: rec,
                })
            }
            MembershipEvent::Leave(id) => self.records.remove(id).map(|record| Change {
                seq: u.seq,
                kind: ChangeKind::Leave,
                record,
            }),
            MembershipEvent::Name { node_id, name } => self.records.get_mut(node_id).map(|r| {
                r.name = Some(name.clone());
                r.seq = u.seq;
                Change {
                    seq: u.seq,
                    kind: ChangeKind::Name,
                    record: r.clone(),
                }
            }),
        };
        Applied::Next(change)
    }

    /// Canonical byte form: version, then every record in id order.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = self.version.to_be_bytes().to_vec();
        for r in self.records.values() {
            out.extend_from_slice(&encode_record(r));
        }
        out
    }

    /// `<overlay-ip> <name|-> <node-id>` per node, sorted by id.
    pub fn hosts_file(&self) -> String {
        let mut s = String::new();
        for r in self.records.values() {
            s.push_str(&format!(
                "{} {} {}\n",
                r.overlay_ip,
                r.name.as_deref().unwrap_or("-"),
                r.node_id.0
            ));
        }
        s
    }

    /// Snapshot lines for a new stream subscriber.
    pub fn snapshot_changes(&self) -> Vec<Change> {
        self.records
            .values()
            .map(|r| Change {
                seq: r.seq,
                kind: ChangeKind::Join,
                record: r.clone(),
            })
            .collect()
    }
}

/// Applies updates strictly in sequence, holding early arrivals until their
/// predecessors show up.
#[derive(Debug, Clone, Default)]
pub struct Follower {
    set: MembershipSet,
    held: BTreeMap<u64, MembershipUpdate>,
    stale: bool,
}

impl Follower {
    pub fn new(set: MembershipSet) -> Self {
        Follower {
            set,
            held: BTreeMap::new(),
            stale: false,
        }
    }

    pub fn set(&self) -> &MembershipSet {
        &self.set
    }

    /// Returns the changes this update released, in sequence order.
    pub fn offer(&mut self, u: MembershipUpdate) -> Vec<Change> {
        if u.seq <= self.set.version() {
            return Vec::new();
        }
        self.held.insert(u.seq, u);
        let mut out = Vec::new();
        while let Some(next) = self.held.remove(&(self.set.version() + 1)) {
            if let Applied::Next(Some(c)) = self.set.apply(&next) {
                out.push(c);
            }
        }
        if self.held.is_empty() {
            self.stale = false;
        }
        out
    }

    /// First missing sequence number while updates are being held.
    pub fn missing(&self) -> Option<u64> {
        (!self.held.is_empty()).then(|| self.set.version() + 1)
    }

    pub fn held(&self) -> usize {
        self.held.len()
    }

    pub fn mark_stale(&mut self) {
        self.stale = true;
    }

    pub fn is_stale(&self) -> bool {
        self.stale
    }
}
