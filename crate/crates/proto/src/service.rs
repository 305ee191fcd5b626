//! Service-connection messages between a process monitor and its supervisor.
//!
//! Every request kind `k` (0x01..=0x0a) has exactly one response kind
//! `k | 0x80`. A response transfers at most one descriptor; when it does, the
//! `fd_attached` flag is set and the descriptor rides in the ancillary data of
//! the first chunk of the response frame.

use std::net::{Ipv4Addr, SocketAddrV4};

use crate::frame::Message;
use crate::types::{Inode, OverlayAddr, Status};
use crate::wire::{Reader, WireError, Writer};

pub mod kind {
    pub const SOCKET: u8 = 0x01;
    pub const BIND: u8 = 0x02;
    pub const LISTEN: u8 = 0x03;
    pub const ACCEPT: u8 = 0x04;
    pub const CONNECT: u8 = 0x05;
    pub const NAME_LOOKUP: u8 = 0x06;
    pub const UNAME: u8 = 0x07;
    pub const PATH_REMAP: u8 = 0x08;
    pub const CLOSE_NOTIFY: u8 = 0x09;
    pub const SOCK_NAME: u8 = 0x0a;
    pub const RESPONSE: u8 = 0x80;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ServiceRequest {
    /// A stream socket was created; registers its inode.
    Socket {
        inode: Inode,
    },
    /// `native` is the loopback endpoint the real socket was bound to; signal
    /// connections are aimed at it.
    Bind {
        inode: Inode,
        addr: OverlayAddr,
        native: SocketAddrV4,
        reuse_port: bool,
    },
    Listen {
        inode: Inode,
        backlog: u32,
    },
    Accept {
        inode: Inode,
        blocking: bool,
    },
    Connect {
        inode: Inode,
        dest: OverlayAddr,
        blocking: bool,
    },
    NameLookup {
        name: String,
    },
    Uname,
    PathRemap {
        path: String,
    },
    CloseNotify {
        inode: Inode,
    },
    SockName {
        inode: Inode,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ServiceResponse {
    Socket {
        status: Status,
    },
    Bind {
        status: Status,
        addr: Option<OverlayAddr>,
    },
    Listen {
        status: Status,
    },
    Accept {
        status: Status,
        peer: Option<OverlayAddr>,
        fd_attached: bool,
    },
    Connect {
        status: Status,
        local: Option<OverlayAddr>,
        fd_attached: bool,
    },
    NameLookup {
        status: Status,
        addrs: Vec<Ipv4Addr>,
    },
    Uname {
        status: Status,
        nodename: Option<String>,
    },
    PathRemap {
        status: Status,
        path: Option<String>,
    },
    CloseNotify {
        status: Status,
    },
    SockName {
        status: Status,
        addr: Option<OverlayAddr>,
    },
}

impl ServiceRequest {
    pub fn inode(&self) -> Option<Inode> {
        match self {
            ServiceRequest::Socket { inode }
            | ServiceRequest::Bind { inode, .. }
            | ServiceRequest::Listen { inode, .. }
            | ServiceRequest::Accept { inode, .. }
            | ServiceRequest::Connect { inode, .. }
            | ServiceRequest::CloseNotify { inode }
            | ServiceRequest::SockName { inode } => Some(*inode),
            _ => None,
        }
    }

    /// The response sent when the request cannot be served at all.
    pub fn failure(&self, status: Status) -> ServiceResponse {
        match self {
            ServiceRequest::Socket { .. } => ServiceResponse::Socket { status },
            ServiceRequest::Bind { .. } => ServiceResponse::Bind { status, addr: None },
            ServiceRequest::Listen { .. } => ServiceResponse::Listen { status },
            ServiceRequest::Accept { .. } => ServiceResponse::Accept {
                status,
                peer: None,
                fd_attached: false,
            },
            ServiceRequest::Connect { .. } => ServiceResponse::Connect {
                status,
                local: None,
                fd_attached: false,
            },
            ServiceRequest::NameLookup { .. } => ServiceResponse::NameLookup {
                status,
                addrs: Vec::new(),
            },
            ServiceRequest::Uname => ServiceResponse::Uname {
                status,
                nodename: None,
            },
            ServiceRequest::PathRemap { .. } => ServiceResponse::PathRemap { status, path: None },
            ServiceRequest::CloseNotify { .. } => ServiceResponse::CloseNotify { status },
            ServiceRequest::SockName { .. } => ServiceResponse::SockName { status, addr: None },
        }
    }
}

impl ServiceResponse {
    pub fn status(&self) -> Status {
        match self {
            ServiceResponse::Socket { status }
            | ServiceResponse::Bind { status, .. }
            | ServiceResponse::Listen { status }
            | ServiceResponse::Accept { status, .. }
            | ServiceResponse::Connect { status, .. }
            | ServiceResponse::NameLookup { status, .. }
            | ServiceResponse::Uname { status, .. }
            | ServiceResponse::PathRemap { status, .. }
            | ServiceResponse::CloseNotify { status }
            | ServiceResponse::SockName { status, .. } => *status,
        }
    }

    pub fn fd_attached(&self) -> bool {
        matches!(
            self,
            ServiceResponse::Accept {
                fd_attached: true,
                ..
            } | ServiceResponse::Connect {
                fd_attached: true,
                ..
            }
        )
    }

    /// Whether this is the response variant paired with `req`.
    pub fn answers(&self, req: &ServiceRequest) -> bool {
        self.kind() == req.kind() | kind::RESPONSE
    }
}

impl Message for ServiceRequest {
    fn kind(&self) -> u8 {
        match self {
            ServiceRequest::Socket { .. } => kind::SOCKET,
            ServiceRequest::Bind { .. } => kind::BIND,
            ServiceRequest::Listen { .. } => kind::LISTEN,
            ServiceRequest::Accept { .. } => kind::ACCEPT,
            ServiceRequest::Connect { .. } => kind::CONNECT,
            ServiceRequest::NameLookup { .. } => kind::NAME_LOOKUP,
            ServiceRequest::Uname => kind::UNAME,
            ServiceRequest::PathRemap { .. } => kind::PATH_REMAP,
            ServiceRequest::CloseNotify { .. } => kind::CLOSE_NOTIFY,
            ServiceRequest::SockName { .. } => kind::SOCK_NAME,
        }
    }

    fn encode_body(&self, w: &mut Writer) -> Result<(), WireError> {
        match self {
            ServiceRequest::Socket { inode }
            | ServiceRequest::CloseNotify { inode }
            | ServiceRequest::SockName { inode } => w.inode(*inode),
            ServiceRequest::Bind {
                inode,
                addr,
                native,
                reuse_port,
            } => {
                w.inode(*inode);
                w.overlay(*addr);
                w.sockaddr(*native);
                w.bool(*reuse_port);
            }
            ServiceRequest::Listen { inode, backlog } => {
                w.inode(*inode);
                w.u32(*backlog);
            }
            ServiceRequest::Accept { inode, blocking } => {
                w.inode(*inode);
                w.bool(*blocking);
            }
            ServiceRequest::Connect {
                inode,
                dest,
                blocking,
            } => {
                w.inode(*inode);
                w.overlay(*dest);
                w.bool(*blocking);
            }
            ServiceRequest::NameLookup { name } => w.str(name),
            ServiceRequest::Uname => {}
            ServiceRequest::PathRemap { path } => w.str(path),
        }
        Ok(())
    }

    fn decode_body(k: u8, r: &mut Reader<'_>) -> Result<Self, WireError> {
        Ok(match k {
            kind::SOCKET => ServiceRequest::Socket { inode: r.inode()? },
            kind::BIND => ServiceRequest::Bind {
                inode: r.inode()?,
                addr: r.overlay()?,
                native: r.sockaddr()?,
                reuse_port: r.bool()?,
            },
            kind::LISTEN => ServiceRequest::Listen {
                inode: r.inode()?,
                backlog: r.u32()?,
            },
            kind::ACCEPT => ServiceRequest::Accept {
                inode: r.inode()?,
                blocking: r.bool()?,
            },
            kind::CONNECT => ServiceRequest::Connect {
                inode: r.inode()?,
                dest: r.overlay()?,
                blocking: r.bool()?,
            },
            kind::NAME_LOOKUP => ServiceRequest::NameLookup { name: r.str()? },
            kind::UNAME => ServiceRequest::Uname,
            kind::PATH_REMAP => ServiceRequest::PathRemap { path: r.str()? },
            kind::CLOSE_NOTIFY => ServiceRequest::CloseNotify { inode: r.inode()? },
            kind::SOCK_NAME => ServiceRequest::SockName { inode: r.inode()? },
            other => return Err(WireError::UnknownKind(other)),
        })
    }
}

impl Message for ServiceResponse {
    fn kind(&self) -> u8 {
        kind::RESPONSE
            | match self {
                ServiceResponse::Socket { .. } => kind::SOCKET,
                ServiceResponse::Bind { .. } => kind::BIND,
                ServiceResponse::Listen { .. } => kind::LISTEN,
                ServiceResponse::Accept { .. } => kind::ACCEPT,
                ServiceResponse::Connect { .. } => kind::CONNECT,
                ServiceResponse::NameLookup { .. } => kind::NAME_LOOKUP,
                ServiceResponse::Uname { .. } => kind::UNAME,
                ServiceResponse::PathRemap { .. } => kind::PATH_REMAP,
                ServiceResponse::CloseNotify { .. } => kind::CLOSE_NOTIFY,
                ServiceResponse::SockName { .. } => kind::SOCK_NAME,
            }
    }

    fn encode_body(&self, w: &mut Writer) -> Result<(), WireError> {
        w.status(self.status());
        match self {
            ServiceResponse::Socket { .. }
            | ServiceResponse::Listen { .. }
            | ServiceResponse::CloseNotify { .. } => {}
            ServiceResponse::Bind { addr, .. } | ServiceResponse::SockName { addr, .. } => {
                w.opt(*addr, Writer::overlay)
            }
            ServiceResponse::Accept {
                peer: addr,
                fd_attached,
                ..
            }
            | ServiceResponse::Connect {
                local: addr,
                fd_attached,
                ..
            } => {
                w.opt(*addr, Writer::overlay);
                w.bool(*fd_attached);
            }
            ServiceResponse::NameLookup { addrs, .. } => w.list(addrs, |w, ip| w.ipv4(*ip))?,
            ServiceResponse::Uname { nodename: s, .. }
            | ServiceResponse::PathRemap { path: s, .. } => w.opt(s.as_deref(), Writer::str),
        }
        Ok(())
    }

    fn decode_body(k: u8, r: &mut Reader<'_>) -> Result<Self, WireError> {
        if k & kind::RESPONSE == 0 {
            return Err(WireError::UnknownKind(k));
        }
        let status = r.status()?;
        Ok(match k & !kind::RESPONSE {
            kind::SOCKET => ServiceResponse::Socket { status },
            kind::BIND => ServiceResponse::Bind {
                status,
                addr: r.opt(Reader::overlay)?,
            },
            kind::LISTEN => ServiceResponse::Listen { status },
            kind::ACCEPT => ServiceResponse::Accept {
                status,
                peer: r.opt(Reader::overlay)?,
                fd_attached: r.bool()?,
            },
            kind::CONNECT => ServiceResponse::Connect {
                status,
                local: r.opt(Reader::overlay)?,
                fd_attached: r.bool()?,
            },
            kind::NAME_LOOKUP => ServiceResponse::NameLookup {
                status,
                addrs: r.list(Reader::ipv4)?,
            },
            kind::UNAME => ServiceResponse::Uname {
                status,
                nodename: r.opt(Reader::str)?,
            },
            kind::PATH_REMAP => ServiceResponse::PathRemap {
                status,
                path: r.opt(Reader::str)?,
            },
            kind::CLOSE_NOTIFY => ServiceResponse::CloseNotify { status },
            kind::SOCK_NAME => ServiceResponse::SockName {
                status,
                addr: r.opt(Reader::overlay)?,
            },
            _ => return Err(WireError::UnknownKind(k)),
        })
    }
}
