//! Primitive field encoders shared by every message body.

use std::net::{Ipv4Addr, SocketAddrV4};

use crate::types::{Inode, NodeId, OverlayAddr, Status};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WireError {
    #[error("message body truncated")]
    Truncated,
    #[error("{0} trailing bytes after message body")]
    TrailingBytes(usize),
    #[error("unknown message kind tag 0x{0:02x}")]
    UnknownKind(u8),
    #[error("invalid {0}")]
    Invalid(&'static str),
    #[error("field too long for its length prefix")]
    FieldTooLong,
}

#[derive(Debug, Default)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Writer::default()
    }

    pub fn into_inner(self) -> Vec<u8> {
        self.buf
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn bool(&mut self, v: bool) {
        self.buf.push(v as u8);
    }

    pub fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }

    pub fn ipv4(&mut self, ip: Ipv4Addr) {
        self.buf.extend_from_slice(&ip.octets());
    }

    pub fn sockaddr(&mut self, sa: SocketAddrV4) {
        self.ipv4(*sa.ip());
        self.u16(sa.port());
    }

    pub fn overlay(&mut self, a: OverlayAddr) {
        self.ipv4(a.ip);
        self.u16(a.port);
    }

    pub fn node(&mut self, n: NodeId) {
        self.u64(n.0);
    }

    pub fn inode(&mut self, i: Inode) {
        self.u64(i.0);
    }

    pub fn status(&mut self, s: Status) {
        self.u8(s.code());
    }

    /// Strings carry a `u32` byte-length prefix.
    pub fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }

    pub fn opt<T>(&mut self, v: Option<T>, f: impl FnOnce(&mut Self, T)) {
        match v {
            None => self.u8(0),
            Some(v) => {
                self.u8(1);
                f(self, v);
            }
        }
    }

    /// Lists carry a `u16` element count.
    pub fn list<T>(
        &mut self,
        items: &[T],
        mut f: impl FnMut(&mut Self, &T),
    ) -> Result<(), WireError> {
        let n = u16::try_from(items.len()).map_err(|_| WireError::FieldTooLong)?;
        self.u16(n);
        for it in items {
            f(self, it);
        }
        Ok(())
    }
}

pub struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf }
    }

    pub fn remaining(&self) -> usize {
        self.buf.len()
    }

    pub fn finish(self) -> Result<(), WireError> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(WireError::TrailingBytes(self.buf.len()))
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.buf.len() < n {
            return Err(WireError::Truncated);
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], WireError> {
        let mut out = [0u8; N];
        out.copy_from_slice(self.take(N)?);
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    pub fn bool(&mut self) -> Result<bool, WireError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(WireError::Invalid("bool")),
        }
    }

    pub fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_be_bytes(self.array()?))
    }

    pub fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_be_bytes(self.array()?))
    }

    pub fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_be_bytes(self.array()?))
    }

    pub fn ipv4(&mut self) -> Result<Ipv4Addr, WireError> {
        Ok(Ipv4Addr::from(self.array::<4>()?))
    }

    pub fn sockaddr(&mut self) -> Result<SocketAddrV4, WireError> {
        let ip = self.ipv4()?;
        Ok(SocketAddrV4::new(ip, self.u16()?))
    }

    pub fn overlay(&mut self) -> Result<OverlayAddr, WireError> {
        let ip = self.ipv4()?;
        Ok(OverlayAddr::new(ip, self.u16()?))
    }

    pub fn node(&mut self) -> Result<NodeId, WireError> {
        Ok(NodeId(self.u64()?))
    }

    pub fn inode(&mut self) -> Result<Inode, WireError> {
        Ok(Inode(self.u64()?))
    }

    pub fn status(&mut self) -> Result<Status, WireError> {
        Status::from_code(self.u8()?).ok_or(WireError::Invalid("status code"))
    }

    pub fn str(&mut self) -> Result<String, WireError> {
        let n = self.u32()? as usize;
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| WireError::Invalid("utf-8 string"))
    }

    pub fn opt<T>(
        &mut self,
        f: impl FnOnce(&mut Self) -> Result<T, WireError>,
    ) -> Result<Option<T>, WireError> {
        match self.u8()? {
            0 => Ok(None),
            1 => f(self).map(Some),
            _ => Err(WireError::Invalid("option tag")),
        }
    }

    pub fn list<T>(
        &mut self,
        mut f: impl FnMut(&mut Self) -> Result<T, WireError>,
    ) -> Result<Vec<T>, WireError> {
        let n = self.u16()? as usize;
        let mut out = Vec::with_capacity(n.min(1024));
        for _ in 0..n {
            out.push(f(self)?);
        }
        Ok(out)
    }
}
