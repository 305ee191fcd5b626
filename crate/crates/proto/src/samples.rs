//! One representative instance of every wire variant, named. These back the
//! checked-in golden hex fixtures and the protocol reference document.

use std::net::{Ipv4Addr, SocketAddrV4};

use crate::control::{
    ControlMessage, MembershipEvent, MembershipUpdate, NodeRecord, PunchOffer, RejectReason,
};
use crate::frame::encode_frame;
use crate::service::{ServiceRequest, ServiceResponse};
use crate::types::{Inode, NodeId, OverlayAddr, Status};

fn ov(last: u8, port: u16) -> OverlayAddr {
    OverlayAddr::new(Ipv4Addr::new(10, 77, 0, last), port)
}

fn ep(port: u16) -> SocketAddrV4 {
    SocketAddrV4::new(Ipv4Addr::LOCALHOST, port)
}

fn record(id: u64, name: Option<&str>, seq: u64) -> NodeRecord {
    NodeRecord {
        node_id: NodeId(id),
        endpoint: ep(7000 + id as u16),
        overlay_ip: Ipv4Addr::new(10, 77, 0, id as u8 + 1),
        name: name.map(str::to_string),
        seq,
    }
}

pub fn service_requests() -> Vec<(&'static str, ServiceRequest)> {
    vec![
        ("req_socket", ServiceRequest::Socket { inode: Inode(4242) }),
        (
            "req_bind",
            ServiceRequest::Bind {
                inode: Inode(4242),
                addr: ov(1, 8080),
                native: SocketAddrV4::new(crate::SHADOW_BIND_IP, 41000),
                reuse_port: false,
            },
        ),
        (
            "req_listen",
            ServiceRequest::Listen {
                inode: Inode(4242),
                backlog: 128,
            },
        ),
        (
            "req_accept",
            ServiceRequest::Accept {
                inode: Inode(7),
                blocking: true,
            },
        ),
        (
            "req_connect",
            ServiceRequest::Connect {
                inode: Inode(9),
                dest: ov(2, 8080),
                blocking: true,
            },
        ),
        (
            "req_name_lookup",
            ServiceRequest::NameLookup {
                name: "nginx-thrift".into(),
            },
        ),
        ("req_uname", ServiceRequest::Uname),
        (
            "req_path_remap",
            ServiceRequest::PathRemap {
                path: "/etc/resolv.conf".into(),
            },
        ),
        (
            "req_close_notify",
            ServiceRequest::CloseNotify { inode: Inode(4242) },
        ),
        (
            "req_sock_name",
            ServiceRequest::SockName { inode: Inode(4242) },
        ),
    ]
}

pub fn service_responses() -> Vec<(&'static str, ServiceResponse)> {
    vec![
        (
            "resp_socket",
            ServiceResponse::Socket { status: Status::Ok },
        ),
        (
            "resp_bind",
            ServiceResponse::Bind {
                status: Status::Ok,
                addr: Some(ov(1, 8080)),
            },
        ),
        (
            "resp_listen",
            ServiceResponse::Listen { status: Status::Ok },
        ),
        (
            "resp_accept",
            ServiceResponse::Accept {
                status: Status::Ok,
                peer: Some(ov(2, 40000)),
                fd_attached: true,
            },
        ),
        (
            "resp_connect",
            ServiceResponse::Connect {
                status: Status::ConnectionRefused,
                local: None,
                fd_attached: false,
            },
        ),
        (
            "resp_name_lookup",
            ServiceResponse::NameLookup {
                status: Status::Ok,
                addrs: vec![Ipv4Addr::new(10, 77, 0, 4)],
            },
        ),
        (
            "resp_uname",
            ServiceResponse::Uname {
                status: Status::Ok,
                nodename: Some("zk-3".into()),
            },
        ),
        (
            "resp_path_remap",
            ServiceResponse::PathRemap {
                status: Status::Ok,
                path: Some("/tmp/boxer/resolv.conf".into()),
            },
        ),
        (
            "resp_close_notify",
            ServiceResponse::CloseNotify {
                status: Status::InvalidSocket,
            },
        ),
        (
            "resp_sock_name",
            ServiceResponse::SockName {
                status: Status::Ok,
                addr: Some(ov(1, 32768)),
            },
        ),
    ]
}

pub fn control_messages() -> Vec<(&'static str, ControlMessage)> {
    vec![
        (
            "ctl_join",
            ControlMessage::Join {
                name: Some("zk-3".into()),
                endpoint: ep(7003),
            },
        ),
        (
            "ctl_join_ack",
            ControlMessage::JoinAck {
                node_id: NodeId(1),
                overlay_ip: Ipv4Addr::new(10, 77, 0, 2),
                version: 2,
                records: vec![record(0, None, 1), record(1, Some("zk-3"), 2)],
            },
        ),
        (
            "ctl_join_reject",
            ControlMessage::JoinReject {
                reason: RejectReason::NameConflict,
                detail: "zk-3".into(),
            },
        ),
        (
            "ctl_update",
            ControlMessage::Update(MembershipUpdate {
                seq: 3,
                event: MembershipEvent::Join(record(2, None, 3)),
            }),
        ),
        (
            "ctl_heartbeat",
            ControlMessage::Heartbeat {
                node_id: NodeId(2),
                version: 3,
            },
        ),
        (
            "ctl_fetch_updates",
            ControlMessage::FetchUpdates { from_seq: 4 },
        ),
        (
            "ctl_update_batch",
            ControlMessage::UpdateBatch {
                updates: vec![
                    MembershipUpdate {
                        seq: 4,
                        event: MembershipEvent::Leave(NodeId(1)),
                    },
                    MembershipUpdate {
                        seq: 5,
                        event: MembershipEvent::Name {
                            node_id: NodeId(2),
                            name: "memcached-1".into(),
                        },
                    },
                ],
            },
        ),
        (
            "ctl_punch_offer",
            ControlMessage::PunchOffer(PunchOffer {
                initiator: NodeId(1),
                responder: NodeId(2),
                initiator_endpoint: ep(45000),
                responder_endpoint: SocketAddrV4::new(Ipv4Addr::UNSPECIFIED, 0),
                nonce: 0x0123_4567_89ab_cdef,
                dest: ov(3, 8080),
                src: ov(2, 33000),
            }),
        ),
        (
            "ctl_punch_answer",
            ControlMessage::PunchAnswer {
                nonce: 0x0123_4567_89ab_cdef,
                responder_endpoint: ep(46000),
                status: Status::Ok,
            },
        ),
        (
            "ctl_register_name",
            ControlMessage::RegisterName {
                node_id: NodeId(2),
                name: "memcached-1".into(),
            },
        ),
        ("ctl_leave", ControlMessage::Leave { node_id: NodeId(2) }),
    ]
}

/// Every sample as `(name, kind tag, encoded frame)`.
pub fn encoded() -> Vec<(&'static str, u8, Vec<u8>)> {
    use crate::frame::Message;
    let mut out = Vec::new();
    for (n, m) in service_requests() {
        out.push((n, m.kind(), encode_frame(&m).expect("sample encodes")));
    }
    for (n, m) in service_responses() {
        out.push((n, m.kind(), encode_frame(&m).expect("sample encodes")));
    }
    for (n, m) in control_messages() {
        out.push((n, m.kind(), encode_frame(&m).expect("sample encodes")));
    }
    out
}

pub fn to_hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Small deterministic generator (splitmix64) for randomized wire messages.
pub struct SplitMix(pub u64);

impl SplitMix {
    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    pub fn below(&mut self, n: u64) -> u64 {
        self.next_u64() % n
    }

    fn bool(&mut self) -> bool {
        self.next_u64() & 1 == 1
    }

    fn ip(&mut self) -> Ipv4Addr {
        Ipv4Addr::from(self.next_u64() as u32)
    }

    fn overlay(&mut self) -> OverlayAddr {
        OverlayAddr::new(self.ip(), self.next_u64() as u16)
    }

    fn sockaddr(&mut self) -> SocketAddrV4 {
        SocketAddrV4::new(self.ip(), self.next_u64() as u16)
    }

    fn status(&mut self) -> Status {
        Status::ALL[self.below(Status::ALL.len() as u64) as usize]
    }

    fn text(&mut self) -> String {
        const ALPHABET: &[char] = &['a', 'z', '0', '-', '.', '/', 'é', '✓', ' '];
        let n = self.below(20) as usize;
        (0..n)
            .map(|_| ALPHABET[self.below(ALPHABET.len() as u64) as usize])
            .collect()
    }

    fn opt<T>(&mut self, f: impl FnOnce(&mut Self) -> T) -> Option<T> {
        if self.bool() {
            Some(f(self))
        } else {
            None
        }
    }

    fn record(&mut self) -> NodeRecord {
        NodeRecord {
            node_id: NodeId(self.next_u64()),
            endpoint: self.sockaddr(),
            overlay_ip: self.ip(),
            name: self.opt(Self::text),
            seq: self.next_u64(),
        }
    }

    fn update(&mut self) -> MembershipUpdate {
        let event = match self.below(3) {
            0 => MembershipEvent::Join(self.record()),
            1 => MembershipEvent::Leave(NodeId(self.next_u64())),
            _ => MembershipEvent::Name {
                node_id: NodeId(self.next_u64()),
                name: self.text(),
            },
        };
        MembershipUpdate {
            seq: self.next_u64(),
            event,
        }
    }

    pub fn service_request(&mut self) -> ServiceRequest {
        let inode = Inode(self.next_u64());
        match self.below(10) {
            0 => ServiceRequest::Socket { inode },
            1 => ServiceRequest::Bind {
                inode,
                addr: self.overlay(),
                native: self.sockaddr(),
                reuse_port: self.bool(),
            },
            2 => ServiceRequest::Listen {
                inode,
                backlog: self.next_u64() as u32,
            },
            3 => ServiceRequest::Accept {
                inode,
                blocking: self.bool(),
            },
            4 => ServiceRequest::Connect {
                inode,
                dest: self.overlay(),
                blocking: self.bool(),
            },
            5 => ServiceRequest::NameLookup { name: self.text() },
            6 => ServiceRequest::Uname,
            7 => ServiceRequest::PathRemap { path: self.text() },
            8 => ServiceRequest::CloseNotify { inode },
            _ => ServiceRequest::SockName { inode },
        }
    }

    pub fn service_response(&mut self) -> ServiceResponse {
        let status = self.status();
        match self.below(10) {
            0 => ServiceResponse::Socket { status },
            1 => ServiceResponse::Bind {
                status,
                addr: self.opt(Self::overlay),
            },
            2 => ServiceResponse::Listen { status },
            3 => ServiceResponse::Accept {
                status,
                peer: self.opt(Self::overlay),
                fd_attached: self.bool(),
            },
            4 => ServiceResponse::Connect {
                status,
                local: self.opt(Self::overlay),
                fd_attached: self.bool(),
            },
            5 => {
                let n = self.below(6) as usize;
                ServiceResponse::NameLookup {
                    status,
                    addrs: (0..n).map(|_| self.ip()).collect(),
                }
            }
            6 => ServiceResponse::Uname {
                status,
                nodename: self.opt(Self::text),
            },
            7 => ServiceResponse::PathRemap {
                status,
                path: self.opt(Self::text),
            },
            8 => ServiceResponse::CloseNotify { status },
            _ => ServiceResponse::SockName {
                status,
                addr: self.opt(Self::overlay),
            },
        }
    }

    pub fn control_message(&mut self) -> ControlMessage {
        match self.below(11) {
            0 => ControlMessage::Join {
                name: self.opt(Self::text),
                endpoint: self.sockaddr(),
            },
            1 => {
                let n = self.below(5) as usize;
                ControlMessage::JoinAck {
                    node_id: NodeId(self.next_u64()),
                    overlay_ip: self.ip(),
                    version: self.next_u64(),
                    records: (0..n).map(|_| self.record()).collect(),
                }
            }
            2 => ControlMessage::JoinReject {
                reason: [
                    RejectReason::NameConflict,
                    RejectReason::CidrExhausted,
                    RejectReason::Malformed,
                ][self.below(3) as usize],
                detail: self.text(),
            },
            3 => ControlMessage::Update(self.update()),
            4 => ControlMessage::Heartbeat {
                node_id: NodeId(self.next_u64()),
                version: self.next_u64(),
            },
            5 => ControlMessage::FetchUpdates {
                from_seq: self.next_u64(),
            },
            6 => {
                let n = self.below(5) as usize;
                ControlMessage::UpdateBatch {
                    updates: (0..n).map(|_| self.update()).collect(),
                }
            }
            7 => ControlMessage::PunchOffer(PunchOffer {
                initiator: NodeId(self.next_u64()),
                responder: NodeId(self.next_u64()),
                initiator_endpoint: self.sockaddr(),
                responder_endpoint: self.sockaddr(),
                nonce: self.next_u64(),
                dest: self.overlay(),
                src: self.overlay(),
            }),
            8 => ControlMessage::PunchAnswer {
                nonce: self.next_u64(),
                responder_endpoint: self.sockaddr(),
                status: self.status(),
            },
            9 => ControlMessage::RegisterName {
                node_id: NodeId(self.next_u64()),
                name: self.text(),
            },
            _ => ControlMessage::Leave {
                node_id: NodeId(self.next_u64()),
            },
        }
    }
}
