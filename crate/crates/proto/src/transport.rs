//! Fixed-size headers written at the start of supervisor-to-supervisor TCP
//! streams.
//!
//! Every inbound connection to a supervisor endpoint starts with a one-byte
//! preamble naming its purpose. Transport streams then carry a fixed header
//! and are answered by a single admission byte; after that the stream belongs
//! to the guests and carries only their bytes.

use crate::types::{NodeId, OverlayAddr};
use crate::wire::{Reader, WireError, Writer};

/// Persistent control link (framed [`ControlMessage`](crate::ControlMessage)s).
pub const PREAMBLE_CONTROL: u8 = b'C';
/// One-shot rendezvous exchange (a single offer and its answer).
pub const PREAMBLE_RENDEZVOUS: u8 = b'R';
/// Direct transport stream, followed by a [`TransportHeader`].
pub const PREAMBLE_DIRECT: u8 = b'T';
/// Relayed transport stream, followed by a [`ProxyHeader`].
pub const PREAMBLE_PROXY: u8 = b'P';

pub const ADMITTED: u8 = 1;
pub const REFUSED: u8 = 0;

pub const VERDICT_WIN: u8 = 1;
pub const VERDICT_LOSE: u8 = 0;

/// Identifies the connection a transport stream will back.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransportHeader {
    pub dest: OverlayAddr,
    pub src: OverlayAddr,
    pub src_node: NodeId,
}

impl TransportHeader {
    pub const LEN: usize = 6 + 6 + 8;

    pub fn encode(&self) -> [u8; Self::LEN] {
        let mut w = Writer::new();
        w.overlay(self.dest);
        w.overlay(self.src);
        w.node(self.src_node);
        w.into_inner().try_into().expect("fixed header length")
    }

    pub fn decode(bytes: &[u8; Self::LEN]) -> Result<Self, WireError> {
        let mut r = Reader::new(bytes);
        let h = TransportHeader {
            dest: r.overlay()?,
            src: r.overlay()?,
            src_node: r.node()?,
        };
        r.finish()?;
        Ok(h)
    }
}

/// Asks a relay to open a direct stream to `target` and splice it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProxyHeader {
    pub target: NodeId,
    pub inner: TransportHeader,
}

impl ProxyHeader {
    pub const LEN: usize = 8 + TransportHeader::LEN;

    pub fn encode(&self) -> [u8; Self::LEN] {
        let mut out = [0u8; Self::LEN];
        out[..8].copy_from_slice(&self.target.0.to_be_bytes());
        out[8..].copy_from_slice(&self.inner.encode());
        out
    }

    pub fn decode(bytes: &[u8; Self::LEN]) -> Result<Self, WireError> {
        let target = NodeId(u64::from_be_bytes(bytes[..8].try_into().expect("8 bytes")));
        let inner = TransportHeader::decode(bytes[8..].try_into().expect("header bytes"))?;
        Ok(ProxyHeader { target, inner })
    }
}

/// First bytes each side writes on a punched stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PunchHello {
    pub nonce: u64,
    pub node: NodeId,
}

impl PunchHello {
    pub const MAGIC: [u8; 4] = *b"BXP1";
    pub const LEN: usize = 4 + 8 + 8;

    pub fn encode(&self) -> [u8; Self::LEN] {
        let mut out = [0u8; Self::LEN];
        out[..4].copy_from_slice(&Self::MAGIC);
        out[4..12].copy_from_slice(&self.nonce.to_be_bytes());
        out[12..].copy_from_slice(&self.node.0.to_be_bytes());
        out
    }

    pub fn decode(bytes: &[u8; Self::LEN]) -> Result<Self, WireError> {
        if bytes[..4] != Self::MAGIC {
            return Err(WireError::Invalid("punch hello magic"));
        }
        Ok(PunchHello {
            nonce: u64::from_be_bytes(bytes[4..12].try_into().expect("8 bytes")),
            node: NodeId(u64::from_be_bytes(bytes[12..].try_into().expect("8 bytes"))),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::net::Ipv4Addr;

    #[test]
    fn headers_round_trip() {
        let h = TransportHeader {
            dest: OverlayAddr::new(Ipv4Addr::new(10, 77, 0, 2), 8080),
            src: OverlayAddr::new(Ipv4Addr::new(10, 77, 0, 1), 40001),
            src_node: NodeId(0),
        };
        assert_eq!(TransportHeader::decode(&h.encode()).unwrap(), h);
        let p = ProxyHeader {
            target: NodeId(7),
            inner: h,
        };
        assert_eq!(ProxyHeader::decode(&p.encode()).unwrap(), p);
        let hello = PunchHello {
            nonce: 0xdead_beef,
            node: NodeId(3),
        };
        assert_eq!(PunchHello::decode(&hello.encode()).unwrap(), hello);
    }

    #[test]
    fn hello_rejects_bad_magic() {
        let mut b = PunchHello {
            nonce: 1,
            node: NodeId(1),
        }
        .encode();
        b[0] = b'X';
        assert!(PunchHello::decode(&b).is_err());
    }
}
