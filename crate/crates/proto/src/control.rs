//! Control-network messages exchanged between supervisors.

use std::net::{Ipv4Addr, SocketAddrV4};

use crate::frame::Message;
use crate::types::{NodeId, OverlayAddr, Status};
use crate::wire::{Reader, WireError, Writer};

pub mod kind {
    pub const JOIN: u8 = 0x21;
    pub const JOIN_ACK: u8 = 0x22;
    pub const JOIN_REJECT: u8 = 0x23;
    pub const UPDATE: u8 = 0x24;
    pub const HEARTBEAT: u8 = 0x25;
    pub const FETCH_UPDATES: u8 = 0x26;
    pub const UPDATE_BATCH: u8 = 0x27;
    pub const PUNCH_OFFER: u8 = 0x28;
    pub const PUNCH_ANSWER: u8 = 0x29;
    pub const REGISTER_NAME: u8 = 0x2a;
    pub const LEAVE: u8 = 0x2b;
}

/// One participant of the overlay.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NodeRecord {
    pub node_id: NodeId,
    /// Real address of the node's supervisor (control and transport).
    pub endpoint: SocketAddrV4,
    pub overlay_ip: Ipv4Addr,
    pub name: Option<String>,
    /// Sequence number of the last update that touched this record.
    pub seq: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum MembershipEvent {
    Join(NodeRecord),
    Leave(NodeId),
    Name { node_id: NodeId, name: String },
}

/// A seed-sequenced membership change.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MembershipUpdate {
    pub seq: u64,
    pub event: MembershipEvent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum RejectReason {
    NameConflict = 1,
    CidrExhausted = 2,
    Malformed = 3,
}

impl RejectReason {
    fn from_code(c: u8) -> Result<Self, WireError> {
        match c {
            1 => Ok(RejectReason::NameConflict),
            2 => Ok(RejectReason::CidrExhausted),
            3 => Ok(RejectReason::Malformed),
            _ => Err(WireError::Invalid("reject reason")),
        }
    }
}

/// Rendezvous state for a hole-punched stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PunchOffer {
    pub initiator: NodeId,
    pub responder: NodeId,
    pub initiator_endpoint: SocketAddrV4,
    pub responder_endpoint: SocketAddrV4,
    pub nonce: u64,
    /// Overlay destination the initiator's guest is connecting to.
    pub dest: OverlayAddr,
    /// Overlay source address of the connecting guest socket.
    pub src: OverlayAddr,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ControlMessage {
    Join {
        name: Option<String>,
        endpoint: SocketAddrV4,
    },
    JoinAck {
        node_id: NodeId,
        overlay_ip: Ipv4Addr,
        version: u64,
        records: Vec<NodeRecord>,
    },
    JoinReject {
        reason: RejectReason,
        detail: String,
    },
    Update(MembershipUpdate),
    Heartbeat {
        node_id: NodeId,
        version: u64,
    },
    FetchUpdates {
        from_seq: u64,
    },
    UpdateBatch {
        updates: Vec<MembershipUpdate>,
    },
    PunchOffer(PunchOffer),
    PunchAnswer {
        nonce: u64,
        responder_endpoint: SocketAddrV4,
        status: Status,
    },
    RegisterName {
        node_id: NodeId,
        name: String,
    },
    Leave {
        node_id: NodeId,
    },
}

fn put_record(w: &mut Writer, r: &NodeRecord) {
    w.node(r.node_id);
    w.sockaddr(r.endpoint);
    w.ipv4(r.overlay_ip);
    w.opt(r.name.as_deref(), Writer::str);
    w.u64(r.seq);
}

fn get_record(r: &mut Reader<'_>) -> Result<NodeRecord, WireError> {
    Ok(NodeRecord {
        node_id: r.node()?,
        endpoint: r.sockaddr()?,
        overlay_ip: r.ipv4()?,
        name: r.opt(Reader::str)?,
        seq: r.u64()?,
    })
}

const EVENT_JOIN: u8 = 1;
const EVENT_LEAVE: u8 = 2;
const EVENT_NAME: u8 = 3;

fn put_update(w: &mut Writer, u: &MembershipUpdate) {
    w.u64(u.seq);
    match &u.event {
        MembershipEvent::Join(rec) => {
            w.u8(EVENT_JOIN);
            put_record(w, rec);
        }
        MembershipEvent::Leave(id) => {
            w.u8(EVENT_LEAVE);
            w.node(*id);
        }
        MembershipEvent::Name { node_id, name } => {
            w.u8(EVENT_NAME);
            w.node(*node_id);
            w.str(name);
        }
    }
}

fn get_update(r: &mut Reader<'_>) -> Result<MembershipUpdate, WireError> {
    let seq = r.u64()?;
    let event = match r.u8()? {
        EVENT_JOIN => MembershipEvent::Join(get_record(r)?),
        EVENT_LEAVE => MembershipEvent::Leave(r.node()?),
        EVENT_NAME => MembershipEvent::Name {
            node_id: r.node()?,
            name: r.str()?,
        },
        _ => return Err(WireError::Invalid("membership event tag")),
    };
    Ok(MembershipUpdate { seq, event })
}

/// Encodes a record on its own; used for byte-level state comparison.
pub fn encode_record(rec: &NodeRecord) -> Vec<u8> {
    let mut w = Writer::new();
    put_record(&mut w, rec);
    w.into_inner()
}

impl Message for ControlMessage {
    fn kind(&self) -> u8 {
        match self {
            ControlMessage::Join { .. } => kind::JOIN,
            ControlMessage::JoinAck { .. } => kind::JOIN_ACK,
            ControlMessage::JoinReject { .. } => kind::JOIN_REJECT,
            ControlMessage::Update(_) => kind::UPDATE,
            ControlMessage::Heartbeat { .. } => kind::HEARTBEAT,
            ControlMessage::FetchUpdates { .. } => kind::FETCH_UPDATES,
            ControlMessage::UpdateBatch { .. } => kind::UPDATE_BATCH,
            ControlMessage::PunchOffer(_) => kind::PUNCH_OFFER,
            ControlMessage::PunchAnswer { .. } => kind::PUNCH_ANSWER,
            ControlMessage::RegisterName { .. } => kind::REGISTER_NAME,
            ControlMessage::Leave { .. } => kind::LEAVE,
        }
    }

    fn encode_body(&self, w: &mut Writer) -> Result<(), WireError> {
        match self {
            ControlMessage::Join { name, endpoint } => {
                w.opt(name.as_deref(), Writer::str);
                w.sockaddr(*endpoint);
            }
            ControlMessage::JoinAck {
                node_id,
                overlay_ip,
                version,
                records,
            } => {
                w.node(*node_id);
                w.ipv4(*overlay_ip);
                w.u64(*version);
                w.list(records, put_record)?;
            }
            ControlMessage::JoinReject { reason, detail } => {
                w.u8(*reason as u8);
                w.str(detail);
            }
            ControlMessage::Update(u) => put_update(w, u),
            ControlMessage::Heartbeat { node_id, version } => {
                w.node(*node_id);
                w.u64(*version);
            }
            ControlMessage::FetchUpdates { from_seq } => w.u64(*from_seq),
            ControlMessage::UpdateBatch { updates } => w.list(updates, put_update)?,
            ControlMessage::PunchOffer(o) => {
                w.node(o.initiator);
                w.node(o.responder);
                w.sockaddr(o.initiator_endpoint);
                w.sockaddr(o.responder_endpoint);
                w.u64(o.nonce);
                w.overlay(o.dest);
                w.overlay(o.src);
            }
            ControlMessage::PunchAnswer {
                nonce,
                responder_endpoint,
                status,
            } => {
                w.u64(*nonce);
                w.sockaddr(*responder_endpoint);
                w.status(*status);
            }
            ControlMessage::RegisterName { node_id, name } => {
                w.node(*node_id);
                w.str(name);
            }
            ControlMessage::Leave { node_id } => w.node(*node_id),
        }
        Ok(())
    }

    fn decode_body(k: u8, r: &mut Reader<'_>) -> Result<Self, WireError> {
        Ok(match k {
            kind::JOIN => ControlMessage::Join {
                name: r.opt(Reader::str)?,
                endpoint: r.sockaddr()?,
            },
            kind::JOIN_ACK => ControlMessage::JoinAck {
                node_id: r.node()?,
                overlay_ip: r.ipv4()?,
                version: r.u64()?,
                records: r.list(get_record)?,
            },
            kind::JOIN_REJECT => ControlMessage::JoinReject {
                reason: RejectReason::from_code(r.u8()?)?,
                detail: r.str()?,
            },
            kind::UPDATE => ControlMessage::Update(get_update(r)?),
            kind::HEARTBEAT => ControlMessage::Heartbeat {
                node_id: r.node()?,
                version: r.u64()?,
            },
            kind::FETCH_UPDATES => ControlMessage::FetchUpdates { from_seq: r.u64()? },
            kind::UPDATE_BATCH => ControlMessage::UpdateBatch {
                updates: r.list(get_update)?,
            },
            kind::PUNCH_OFFER => ControlMessage::PunchOffer(PunchOffer {
                initiator: r.node()?,
                responder: r.node()?,
                initiator_endpoint: r.sockaddr()?,
                responder_endpoint: r.sockaddr()?,
                nonce: r.u64()?,
                dest: r.overlay()?,
                src: r.overlay()?,
            }),
            kind::PUNCH_ANSWER => ControlMessage::PunchAnswer {
                nonce: r.u64()?,
                responder_endpoint: r.sockaddr()?,
                status: r.status()?,
            },
            kind::REGISTER_NAME => ControlMessage::RegisterName {
                node_id: r.node()?,
                name: r.str()?,
            },
            kind::LEAVE => ControlMessage::Leave { node_id: r.node()? },
            other => return Err(WireError::UnknownKind(other)),
        })
    }
}
