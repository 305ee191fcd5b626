//! Length-prefixed frames.
//!
//! ```text
//! +----------------+------+-----------------+
//! | length: u32 BE | kind | body ...        |
//! +----------------+------+-----------------+
//! ```
//!
//! `length` counts every byte after the prefix (the kind tag plus the body),
//! so a message with an empty body is the 5-byte frame `00 00 00 01 <kind>`.

use crate::wire::{Reader, WireError, Writer};

/// Largest permitted value of the length field.
pub const FRAME_CAP: usize = 16 * 1024 * 1024;

const PREFIX_LEN: usize = 4;

/// A message type with a registered kind tag and a fixed-order body.
pub trait Message: Sized {
    fn kind(&self) -> u8;
    fn encode_body(&self, w: &mut Writer) -> Result<(), WireError>;
    fn decode_body(kind: u8, r: &mut Reader<'_>) -> Result<Self, WireError>;
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FrameError {
    #[error("frame payload of {0} bytes exceeds the {FRAME_CAP}-byte cap")]
    Oversize(usize),
    #[error("empty frame (no kind tag)")]
    Empty,
    #[error("protocol error: {0}")]
    Protocol(#[from] WireError),
}

#[derive(Debug, PartialEq, Eq)]
pub enum Decoded<'a, M> {
    Frame { message: M, rest: &'a [u8] },
    NeedMoreData,
}

pub fn encode_frame<M: Message>(msg: &M) -> Result<Vec<u8>, FrameError> {
    let mut w = Writer::new();
    w.u32(0);
    w.u8(msg.kind());
    msg.encode_body(&mut w)?;
    let mut buf = w.into_inner();
    let payload = buf.len() - PREFIX_LEN;
    if payload > FRAME_CAP {
        return Err(FrameError::Oversize(payload));
    }
    buf[..PREFIX_LEN].copy_from_slice(&(payload as u32).to_be_bytes());
    Ok(buf)
}

/// Length of the first frame in `bytes`, if its prefix is complete.
pub fn frame_len(bytes: &[u8]) -> Result<Option<usize>, FrameError> {
    if bytes.len() < PREFIX_LEN {
        return Ok(None);
    }
    let len = u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) as usize;
    if len > FRAME_CAP {
        return Err(FrameError::Oversize(len));
    }
    if len == 0 {
        return Err(FrameError::Empty);
    }
    Ok(Some(PREFIX_LEN + len))
}

/// Decodes the first frame of `bytes`. Partial input yields `NeedMoreData`.
pub fn decode_frame<M: Message>(bytes: &[u8]) -> Result<Decoded<'_, M>, FrameError> {
    let Some(total) = frame_len(bytes)? else {
        return Ok(Decoded::NeedMoreData);
    };
    if bytes.len() < total {
        return Ok(Decoded::NeedMoreData);
    }
    let kind = bytes[PREFIX_LEN];
    let mut r = Reader::new(&bytes[PREFIX_LEN + 1..total]);
    let message = M::decode_body(kind, &mut r)?;
    r.finish()?;
    Ok(Decoded::Frame {
        message,
        rest: &bytes[total..],
    })
}
