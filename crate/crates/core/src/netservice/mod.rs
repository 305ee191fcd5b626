//! The network service: socket-layer emulation and inter-node transports.

pub mod sockets;
pub mod transport;
