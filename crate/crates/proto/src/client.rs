//! Blocking service-connection client.
//!
//! Each call opens its own connection to the supervisor's service socket, so
//! a request that parks (a blocking accept) never holds up another thread's
//! calls, and forked children never share a half-used connection.

use std::io::{self, Write};
use std::os::fd::{AsRawFd, OwnedFd};
use std::os::unix::net::UnixStream;
use std::path::{Path, PathBuf};
use std::time::Duration;

use crate::fdpass;
use crate::frame::{decode_frame, encode_frame, frame_len, Decoded};
use crate::service::{ServiceRequest, ServiceResponse};

/// Name of the service socket inside the supervisor's base directory.
pub const SERVICE_SOCKET: &str = "ns.sock";

#[derive(Debug, Clone)]
pub struct ServiceClient {
    path: PathBuf,
    timeout: Option<Duration>,
}

impl ServiceClient {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        ServiceClient {
            path: path.into(),
            timeout: None,
        }
    }

    pub fn for_dir(dir: impl AsRef<Path>) -> Self {
        Self::new(dir.as_ref().join(SERVICE_SOCKET))
    }

    /// Upper bound on waiting for a response to a non-parking request.
    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = Some(timeout);
        self
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn call(&self, req: &ServiceRequest) -> io::Result<(ServiceResponse, Option<OwnedFd>)> {
        let mut stream = UnixStream::connect(&self.path)?;
        let parks = matches!(req, ServiceRequest::Accept { blocking: true, .. });
        if !parks {
            stream.set_read_timeout(self.timeout)?;
        }
        let frame =
            encode_frame(req).map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e))?;
        stream.write_all(&frame)?;
        let (resp, fd) = read_response(&stream)?;
        if !resp.answers(req) {
            return Err(io::Error::new(
                io::ErrorKind::InvalidData,
                "mismatched response kind",
            ));
        }
        if resp.fd_attached() != fd.is_some() {
            return Err(io::Error::new(
                io::ErrorKind::InvalidData,
                "descriptor flag mismatch",
            ));
        }
        Ok((resp, fd))
    }
}

/// Reads exactly one response frame, keeping the descriptor that arrives with
/// it.
pub fn read_response(stream: &UnixStream) -> io::Result<(ServiceResponse, Option<OwnedFd>)> {
    let mut buf = Vec::with_capacity(256);
    let mut chunk = [0u8; 4096];
    let mut fd = None;
    loop {
        let want = match frame_len(&buf).map_err(invalid)? {
            Some(total) => total.saturating_sub(buf.len()).min(chunk.len()),
            None => 4 - buf.len(),
        };
        let (n, got) = fdpass::recv_with_fd(stream.as_raw_fd(), &mut chunk[..want.max(1)])?;
        if got.is_some() && fd.is_none() {
            fd = got;
        }
        if n == 0 {
            return Err(io::Error::new(
                io::ErrorKind::ConnectionReset,
                "supervisor closed connection",
            ));
        }
        buf.extend_from_slice(&chunk[..n]);
        if let Decoded::Frame { message, .. } =
            decode_frame::<ServiceResponse>(&buf).map_err(invalid)?
        {
            return Ok((message, fd));
        }
    }
}

fn invalid(e: impl std::error::Error + Send + Sync + 'static) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, e)
}
