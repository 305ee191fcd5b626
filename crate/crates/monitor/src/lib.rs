//! Process monitor: a preloadable shim that takes over the control-path
//! calls of a guest process and hands them to the node supervisor.
//!
//! Build output `libboxer_monitor.so` is injected with `LD_PRELOAD`. Every
//! hook forwards to the next definition of its symbol when `BOXER_DIR` is
//! unset, so the library is inert outside a supervised guest. Data-path calls
//! (read/write/send/recv and friends) and readiness calls (epoll/select/poll)
//! are never exported here; once accept or connect hands back a descriptor
//! the guest talks to the kernel directly.
//!
//! The monitor keeps no tables. Whether a descriptor belongs to the overlay
//! is recovered from the descriptor itself: overlay-claimed listeners are
//! natively bound to [`SHADOW_BIND_IP`](boxer_proto::SHADOW_BIND_IP).

mod hooks;
mod real;
mod sys;

use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::Duration;

use boxer_proto::client::ServiceClient;
use boxer_proto::OverlayCidr;

/// Every symbol this library exports over the C library.
pub const INTERCEPT_SURFACE: [&str; 24] = [
    // stream sockets
    "socket",
    "bind",
    "listen",
    "accept",
    "accept4",
    "connect",
    "getsockname",
    // names
    "getaddrinfo",
    "gethostbyname",
    "gethostbyname2",
    "gethostbyname_r",
    "uname",
    "gethostname",
    // files
    "open",
    "open64",
    "openat",
    "openat64",
    "__open_2",
    "__open64_2",
    "creat",
    "creat64",
    "fopen",
    "fopen64",
    "close",
];

/// Calls that must stay native for data-path transparency.
pub const NEVER_INTERCEPTED: [&str; 22] = [
    "read",
    "write",
    "readv",
    "writev",
    "send",
    "recv",
    "sendto",
    "recvfrom",
    "sendmsg",
    "recvmsg",
    "sendfile",
    "splice",
    "pread",
    "pwrite",
    "select",
    "pselect",
    "poll",
    "ppoll",
    "epoll_wait",
    "epoll_pwait",
    "epoll_ctl",
    "epoll_create1",
];

/// How long a guest may wait on a non-parking service request.
const REQUEST_TIMEOUT: Duration = Duration::from_secs(10);

/// Upper bound on a native accept that lost a race for a pending connection.
const ACCEPT_PROBE_MICROS: i64 = 10_000;

pub(crate) struct Config {
    client: ServiceClient,
    cidr: OverlayCidr,
}

pub(crate) fn config() -> Option<&'static Config> {
    static CONFIG: OnceLock<Option<Config>> = OnceLock::new();
    CONFIG
        .get_or_init(|| {
            let dir = PathBuf::from(std::env::var_os("BOXER_DIR").filter(|d| !d.is_empty())?);
            let cidr = std::env::var("BOXER_OVERLAY_CIDR")
                .ok()
                .and_then(|s| s.parse().ok())
                .unwrap_or(OverlayCidr::DEFAULT);
            Some(Config {
                client: ServiceClient::for_dir(dir).with_timeout(REQUEST_TIMEOUT),
                cidr,
            })
        })
        .as_ref()
}
