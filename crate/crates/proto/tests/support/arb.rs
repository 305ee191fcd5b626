//! Strategies over every wire message, and the round-trip and prefix check.

use std::net::{Ipv4Addr, SocketAddrV4};

use boxer_proto::control::{
    ControlMessage, MembershipEvent, MembershipUpdate, NodeRecord, PunchOffer, RejectReason,
};
use boxer_proto::frame::{decode_frame, encode_frame, Decoded, Message};
use boxer_proto::service::{ServiceRequest, ServiceResponse};
use boxer_proto::{Inode, NodeId, OverlayAddr, Status};
use proptest::prelude::*;

fn ipv4() -> impl Strategy<Value = Ipv4Addr> {
    any::<u32>().prop_map(Ipv4Addr::from)
}

fn overlay() -> impl Strategy<Value = OverlayAddr> {
    (ipv4(), any::<u16>()).prop_map(|(ip, port)| OverlayAddr::new(ip, port))
}

fn sockaddr() -> impl Strategy<Value = SocketAddrV4> {
    (ipv4(), any::<u16>()).prop_map(|(ip, port)| SocketAddrV4::new(ip, port))
}

fn inode() -> impl Strategy<Value = Inode> {
    any::<u64>().prop_map(Inode)
}

fn node() -> impl Strategy<Value = NodeId> {
    any::<u64>().prop_map(NodeId)
}

fn status() -> impl Strategy<Value = Status> {
    prop::sample::select(Status::ALL.to_vec())
}

fn text() -> impl Strategy<Value = String> {
    "\\PC{0,24}"
}

pub fn request() -> impl Strategy<Value = ServiceRequest> {
    prop_oneof![
        inode().prop_map(|inode| ServiceRequest::Socket { inode }),
        (inode(), overlay(), sockaddr(), any::<bool>()).prop_map(
            |(inode, addr, native, reuse_port)| {
                ServiceRequest::Bind {
                    inode,
                    addr,
                    native,
                    reuse_port,
                }
            }
        ),
        (inode(), any::<u32>())
            .prop_map(|(inode, backlog)| ServiceRequest::Listen { inode, backlog }),
        (inode(), any::<bool>())
            .prop_map(|(inode, blocking)| ServiceRequest::Accept { inode, blocking }),
        (inode(), overlay(), any::<bool>()).prop_map(|(inode, dest, blocking)| {
            ServiceRequest::Connect {
                inode,
                dest,
                blocking,
            }
        }),
        text().prop_map(|name| ServiceRequest::NameLookup { name }),
        Just(ServiceRequest::Uname),
        text().prop_map(|path| ServiceRequest::PathRemap { path }),
        inode().prop_map(|inode| ServiceRequest::CloseNotify { inode }),
        inode().prop_map(|inode| ServiceRequest::SockName { inode }),
    ]
}

pub fn response() -> impl Strategy<Value = ServiceResponse> {
    prop_oneof![
        status().prop_map(|status| ServiceResponse::Socket { status }),
        (status(), prop::option::of(overlay()))
            .prop_map(|(status, addr)| ServiceResponse::Bind { status, addr }),
        status().prop_map(|status| ServiceResponse::Listen { status }),
        (status(), prop::option::of(overlay()), any::<bool>()).prop_map(
            |(status, peer, fd_attached)| ServiceResponse::Accept {
                status,
                peer,
                fd_attached
            }
        ),
        (status(), prop::option::of(overlay()), any::<bool>()).prop_map(
            |(status, local, fd_attached)| ServiceResponse::Connect {
                status,
                local,
                fd_attached
            }
        ),
        (status(), prop::collection::vec(ipv4(), 0..8))
            .prop_map(|(status, addrs)| ServiceResponse::NameLookup { status, addrs }),
        (status(), prop::option::of(text()))
            .prop_map(|(status, nodename)| ServiceResponse::Uname { status, nodename }),
        (status(), prop::option::of(text()))
            .prop_map(|(status, path)| ServiceResponse::PathRemap { status, path }),
        status().prop_map(|status| ServiceResponse::CloseNotify { status }),
        (status(), prop::option::of(overlay()))
            .prop_map(|(status, addr)| ServiceResponse::SockName { status, addr }),
    ]
}

fn record() -> impl Strategy<Value = NodeRecord> {
    (
        node(),
        sockaddr(),
        ipv4(),
        prop::option::of(text()),
        any::<u64>(),
    )
        .prop_map(|(node_id, endpoint, overlay_ip, name, seq)| NodeRecord {
            node_id,
            endpoint,
            overlay_ip,
            name,
            seq,
        })
}

fn update() -> impl Strategy<Value = MembershipUpdate> {
    let event = prop_oneof![
        record().prop_map(MembershipEvent::Join),
        node().prop_map(MembershipEvent::Leave),
        (node(), text()).prop_map(|(node_id, name)| MembershipEvent::Name { node_id, name }),
    ];
    (any::<u64>(), event).prop_map(|(seq, event)| MembershipUpdate { seq, event })
}

pub fn control() -> impl Strategy<Value = ControlMessage> {
    prop_oneof![
        (prop::option::of(text()), sockaddr())
            .prop_map(|(name, endpoint)| ControlMessage::Join { name, endpoint }),
        (
            node(),
            ipv4(),
            any::<u64>(),
            prop::collection::vec(record(), 0..6)
        )
            .prop_map(
                |(node_id, overlay_ip, version, records)| ControlMessage::JoinAck {
                    node_id,
                    overlay_ip,
                    version,
                    records
                }
            ),
        (
            prop::sample::select(vec![
                RejectReason::NameConflict,
                RejectReason::CidrExhausted,
                RejectReason::Malformed
            ]),
            text()
        )
            .prop_map(|(reason, detail)| ControlMessage::JoinReject { reason, detail }),
        update().prop_map(ControlMessage::Update),
        (node(), any::<u64>())
            .prop_map(|(node_id, version)| ControlMessage::Heartbeat { node_id, version }),
        any::<u64>().prop_map(|from_seq| ControlMessage::FetchUpdates { from_seq }),
        prop::collection::vec(update(), 0..6)
            .prop_map(|updates| ControlMessage::UpdateBatch { updates }),
        (
            node(),
            node(),
            sockaddr(),
            sockaddr(),
            any::<u64>(),
            overlay(),
            overlay()
        )
            .prop_map(
                |(
                    initiator,
                    responder,
                    initiator_endpoint,
                    responder_endpoint,
                    nonce,
                    dest,
                    src,
                )| {
                    ControlMessage::PunchOffer(PunchOffer {
                        initiator,
                        responder,
                        initiator_endpoint,
                        responder_endpoint,
                        nonce,
                        dest,
                        src,
                    })
                }
            ),
        (any::<u64>(), sockaddr(), status()).prop_map(|(nonce, responder_endpoint, status)| {
            ControlMessage::PunchAnswer {
                nonce,
                responder_endpoint,
                status,
            }
        }),
        (node(), text()).prop_map(|(node_id, name)| ControlMessage::RegisterName { node_id, name }),
        node().prop_map(|node_id| ControlMessage::Leave { node_id }),
    ]
}

/// Encodes `m`, decodes it back, and checks every strict prefix asks for
/// more data.
pub fn check_round_trip_and_prefixes<M>(m: &M) -> Result<(), TestCaseError>
where
    M: Message + PartialEq + std::fmt::Debug,
{
    let bytes = encode_frame(m).unwrap();
    let len = u32::from_be_bytes(bytes[..4].try_into().unwrap()) as usize;
    prop_assert_eq!(len, bytes.len() - 4);
    match decode_frame::<M>(&bytes).unwrap() {
        Decoded::Frame { message, rest } => {
            prop_assert_eq!(&message, m);
            prop_assert!(rest.is_empty());
            prop_assert_eq!(encode_frame(&message).unwrap(), bytes.clone());
        }
        Decoded::NeedMoreData => prop_assert!(false, "complete frame reported incomplete"),
    }
    for cut in 0..bytes.len() {
        prop_assert_eq!(
            decode_frame::<M>(&bytes[..cut]).unwrap(),
            Decoded::NeedMoreData
        );
    }
    Ok(())
}
