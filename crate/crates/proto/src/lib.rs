//! Wire formats for the overlay.
//!
//! Everything that crosses a process boundary is defined here: the framed
//! control messages exchanged between supervisors, the request/response
//! messages on service connections between a process monitor and its local
//! supervisor, the fixed transport headers written at the start of every
//! overlay byte stream, and the descriptor-passing helpers for the local
//! service sockets.
//!
//! Encoding is hand-rolled: fixed field order, fixed-width big-endian
//! integers, `u32` length prefixes for strings and `u16` counts for lists.

pub mod client;
pub mod control;
pub mod fdpass;
pub mod frame;
pub mod samples;
pub mod service;
pub mod transport;
pub mod types;
pub mod wire;

pub use control::{
    ControlMessage, MembershipEvent, MembershipUpdate, NodeRecord, PunchOffer, RejectReason,
};
pub use frame::{decode_frame, encode_frame, Decoded, FrameError, Message, FRAME_CAP};
pub use service::{ServiceRequest, ServiceResponse};
pub use types::{Inode, NodeId, OverlayAddr, OverlayCidr, Status, SHADOW_BIND_IP, SIGNAL_PEER_IP};
pub use wire::WireError;
