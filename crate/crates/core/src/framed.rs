//! Async reading and writing of length-prefixed frames.

use std::io;

use boxer_proto::frame::{decode_frame, encode_frame, frame_len, Decoded, Message};
use tokio::io::{AsyncRead, AsyncReadExt, AsyncWrite, AsyncWriteExt};

fn invalid(e: impl std::fmt::Display) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, e.to_string())
}

/// Reads one frame. A clean end of stream before the first byte is `None`.
pub async fn read_frame<M: Message, R: AsyncRead + Unpin>(r: &mut R) -> io::Result<Option<M>> {
    let mut buf = vec![0u8; 4];
    match r.read_exact(&mut buf).await {
        Ok(_) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let total = frame_len(&buf)
        .map_err(invalid)?
        .expect("prefix is complete");
    buf.resize(total, 0);
    r.read_exact(&mut buf[4..]).await?;
    match decode_frame::<M>(&buf).map_err(invalid)? {
        Decoded::Frame { message, .. } => Ok(Some(message)),
        Decoded::NeedMoreData => unreachable!("whole frame was read"),
    }
}

pub async fn write_frame<M: Message, W: AsyncWrite + Unpin>(w: &mut W, msg: &M) -> io::Result<()> {
    let bytes = encode_frame(msg).map_err(invalid)?;
    w.write_all(&bytes).await
}

/// Preamble byte followed by one frame, in a single write.
pub async fn write_preamble_frame<M: Message, W: AsyncWrite + Unpin>(
    w: &mut W,
    preamble: u8,
    msg: &M,
) -> io::Result<()> {
    let mut bytes = vec![preamble];
    bytes.extend(encode_frame(msg).map_err(invalid)?);
    w.write_all(&bytes).await
}
