use std::fmt;
use std::net::{Ipv4Addr, SocketAddrV4};
use std::str::FromStr;

/// Loopback address every overlay-claimed guest socket is natively bound to.
///
/// The monitor recognises overlay sockets by this local address alone, so it
/// never has to remember which descriptors it claimed.
pub const SHADOW_BIND_IP: Ipv4Addr = Ipv4Addr::new(127, 77, 0, 1);

/// Reserved source address of signal connections. Nothing else on a node may
/// originate connections from it.
pub const SIGNAL_PEER_IP: Ipv4Addr = Ipv4Addr::new(127, 77, 0, 2);

/// Node identity assigned by the seed coordinator. Id 0 is the seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct NodeId(pub u64);

impl NodeId {
    pub const SEED: NodeId = NodeId(0);

    /// Canonical host name, `node-<id>`.
    pub fn canonical_name(self) -> String {
        format!("node-{}", self.0)
    }

    /// Parses a canonical `node-<id>` name.
    pub fn from_canonical_name(name: &str) -> Option<NodeId> {
        let digits = name.strip_prefix("node-")?;
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        digits.parse().ok().map(NodeId)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Socket inode as reported by `fstat` on the guest descriptor. Shared by
/// every process that inherited the socket.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Inode(pub u64);

impl fmt::Display for Inode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "i{}", self.0)
    }
}

/// Address inside the overlay network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct OverlayAddr {
    pub ip: Ipv4Addr,
    pub port: u16,
}

impl OverlayAddr {
    pub const fn new(ip: Ipv4Addr, port: u16) -> Self {
        OverlayAddr { ip, port }
    }

    pub fn is_wildcard_port(&self) -> bool {
        self.port == 0
    }
}

impl From<SocketAddrV4> for OverlayAddr {
    fn from(sa: SocketAddrV4) -> Self {
        OverlayAddr {
            ip: *sa.ip(),
            port: sa.port(),
        }
    }
}

impl From<OverlayAddr> for SocketAddrV4 {
    fn from(a: OverlayAddr) -> Self {
        SocketAddrV4::new(a.ip, a.port)
    }
}

impl fmt::Display for OverlayAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.ip, self.port)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid overlay CIDR {0:?}")]
pub struct CidrParseError(pub String);

/// The overlay's virtual IPv4 range. Node `n` owns host `base + n + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OverlayCidr {
    base: Ipv4Addr,
    prefix: u8,
}

impl OverlayCidr {
    pub const DEFAULT: OverlayCidr = OverlayCidr {
        base: Ipv4Addr::new(10, 77, 0, 0),
        prefix: 16,
    };

    pub fn new(base: Ipv4Addr, prefix: u8) -> Result<Self, CidrParseError> {
        if !(1..=30).contains(&prefix) {
            return Err(CidrParseError(format!("{base}/{prefix}")));
        }
        let mask = Self::mask_for(prefix);
        Ok(OverlayCidr {
            base: Ipv4Addr::from(u32::from(base) & mask),
            prefix,
        })
    }

    fn mask_for(prefix: u8) -> u32 {
        u32::MAX << (32 - prefix as u32)
    }

    pub fn base(&self) -> Ipv4Addr {
        self.base
    }

    pub fn prefix(&self) -> u8 {
        self.prefix
    }

    pub fn contains(&self, ip: Ipv4Addr) -> bool {
        u32::from(ip) & Self::mask_for(self.prefix) == u32::from(self.base)
    }

    /// Number of node addresses available (network and broadcast excluded).
    pub fn capacity(&self) -> u64 {
        (1u64 << (32 - self.prefix as u32)) - 2
    }

    /// Overlay IP of a node, or `None` when the range is exhausted.
    pub fn host_for(&self, node: NodeId) -> Option<Ipv4Addr> {
        if node.0 >= self.capacity() {
            return None;
        }
        Some(Ipv4Addr::from(u32::from(self.base) + node.0 as u32 + 1))
    }

    pub fn node_for(&self, ip: Ipv4Addr) -> Option<NodeId> {
        if !self.contains(ip) {
            return None;
        }
        let offset = u32::from(ip) - u32::from(self.base);
        if offset == 0 || offset as u64 > self.capacity() {
            return None;
        }
        Some(NodeId(offset as u64 - 1))
    }
}

impl Default for OverlayCidr {
    fn default() -> Self {
        Self::DEFAULT
    }
}

impl fmt::Display for OverlayCidr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.base, self.prefix)
    }
}

impl FromStr for OverlayCidr {
    type Err = CidrParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || CidrParseError(s.to_string());
        let (ip, prefix) = s.trim().split_once('/').ok_or_else(err)?;
        let ip: Ipv4Addr = ip.parse().map_err(|_| err())?;
        let prefix: u8 = prefix.parse().map_err(|_| err())?;
        OverlayCidr::new(ip, prefix).map_err(|_| err())
    }
}

/// Result codes carried by service responses. Each maps onto exactly one
/// errno the monitor reports to guest code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Status {
    Ok = 0,
    WouldBlock = 1,
    AddrInUse = 2,
    InvalidAddress = 3,
    InvalidSocket = 4,
    InvalidState = 5,
    ConnectionRefused = 6,
    HostUnreachable = 7,
    TimedOut = 8,
    Closed = 9,
    NotFound = 10,
    ProtocolError = 11,
    TransportUnavailable = 12,
}

impl Status {
    pub const ALL: [Status; 13] = [
        Status::Ok,
        Status::WouldBlock,
        Status::AddrInUse,
        Status::InvalidAddress,
        Status::InvalidSocket,
        Status::InvalidState,
        Status::ConnectionRefused,
        Status::HostUnreachable,
        Status::TimedOut,
        Status::Closed,
        Status::NotFound,
        Status::ProtocolError,
        Status::TransportUnavailable,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Status> {
        Status::ALL.get(code as usize).copied()
    }

    pub fn is_ok(self) -> bool {
        self == Status::Ok
    }

    pub fn to_errno(self) -> i32 {
        match self {
            Status::Ok => 0,
            Status::WouldBlock => libc::EAGAIN,
            Status::AddrInUse => libc::EADDRINUSE,
            Status::InvalidAddress => libc::EADDRNOTAVAIL,
            Status::InvalidSocket => libc::ENOTSOCK,
            Status::InvalidState => libc::EINVAL,
            Status::ConnectionRefused => libc::ECONNREFUSED,
            Status::HostUnreachable => libc::EHOSTUNREACH,
            Status::TimedOut => libc::ETIMEDOUT,
            Status::Closed => libc::EBADF,
            Status::NotFound => libc::ENOENT,
            Status::ProtocolError => libc::EPROTO,
            Status::TransportUnavailable => libc::ENETUNREACH,
        }
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}
