//! Small wrappers over descriptor inspection and sockaddr conversion.

use std::mem;
use std::net::{Ipv4Addr, SocketAddrV4};
use std::os::fd::RawFd;

use boxer_proto::{Inode, SHADOW_BIND_IP};
use libc::{c_int, sockaddr, sockaddr_in, socklen_t};

use crate::real::real;

pub fn errno() -> c_int {
    unsafe { *libc::__errno_location() }
}

pub fn set_errno(e: c_int) {
    unsafe { *libc::__errno_location() = e }
}

/// Sets errno and returns -1, the usual failure shape.
pub fn fail(e: c_int) -> c_int {
    set_errno(e);
    -1
}

pub unsafe fn read_v4(addr: *const sockaddr, len: socklen_t) -> Option<SocketAddrV4> {
    if addr.is_null() || (len as usize) < mem::size_of::<sockaddr_in>() {
        return None;
    }
    if (*addr).sa_family as c_int != libc::AF_INET {
        return None;
    }
    let sin: sockaddr_in = std::ptr::read_unaligned(addr as *const sockaddr_in);
    Some(SocketAddrV4::new(
        Ipv4Addr::from(u32::from_be(sin.sin_addr.s_addr)),
        u16::from_be(sin.sin_port),
    ))
}

pub fn to_sockaddr(a: SocketAddrV4) -> sockaddr_in {
    let mut sin: sockaddr_in = unsafe { mem::zeroed() };
    sin.sin_family = libc::AF_INET as libc::sa_family_t;
    sin.sin_port = a.port().to_be();
    sin.sin_addr.s_addr = u32::from(*a.ip()).to_be();
    sin
}

/// Writes `a` to a caller-supplied buffer with the truncation rules of
/// accept and getsockname.
pub unsafe fn write_v4(a: SocketAddrV4, out: *mut sockaddr, len: *mut socklen_t) {
    if out.is_null() || len.is_null() {
        return;
    }
    let sin = to_sockaddr(a);
    let full = mem::size_of::<sockaddr_in>();
    let n = (*len as usize).min(full);
    std::ptr::copy_nonoverlapping(&sin as *const sockaddr_in as *const u8, out as *mut u8, n);
    *len = full as socklen_t;
}

fn sockopt_int(fd: RawFd, level: c_int, name: c_int) -> Option<c_int> {
    let mut v: c_int = 0;
    let mut len = mem::size_of::<c_int>() as socklen_t;
    let rc = unsafe {
        libc::getsockopt(
            fd,
            level,
            name,
            &mut v as *mut c_int as *mut libc::c_void,
            &mut len,
        )
    };
    (rc == 0).then_some(v)
}

pub fn is_inet_stream(fd: RawFd) -> bool {
    sockopt_int(fd, libc::SOL_SOCKET, libc::SO_DOMAIN) == Some(libc::AF_INET)
        && sockopt_int(fd, libc::SOL_SOCKET, libc::SO_TYPE) == Some(libc::SOCK_STREAM)
}

pub fn reuse_port(fd: RawFd) -> bool {
    sockopt_int(fd, libc::SOL_SOCKET, libc::SO_REUSEPORT).unwrap_or(0) != 0
}

pub fn inode(fd: RawFd) -> Option<Inode> {
    let mut st: libc::stat = unsafe { mem::zeroed() };
    (unsafe { libc::fstat(fd, &mut st) } == 0).then_some(Inode(st.st_ino))
}

pub fn is_socket(fd: RawFd) -> bool {
    let mut st: libc::stat = unsafe { mem::zeroed() };
    unsafe { libc::fstat(fd, &mut st) == 0 && (st.st_mode & libc::S_IFMT) == libc::S_IFSOCK }
}

pub fn local_v4(fd: RawFd) -> Option<SocketAddrV4> {
    let getsockname = real!(getsockname: fn(c_int, *mut sockaddr, *mut socklen_t) -> c_int);
    let mut sin: sockaddr_in = unsafe { mem::zeroed() };
    let mut len = mem::size_of::<sockaddr_in>() as socklen_t;
    if unsafe { getsockname(fd, &mut sin as *mut sockaddr_in as *mut sockaddr, &mut len) } != 0 {
        return None;
    }
    unsafe { read_v4(&sin as *const sockaddr_in as *const sockaddr, len) }
}

fn has_peer(fd: RawFd) -> bool {
    let mut sin: sockaddr_in = unsafe { mem::zeroed() };
    let mut len = mem::size_of::<sockaddr_in>() as socklen_t;
    unsafe { libc::getpeername(fd, &mut sin as *mut sockaddr_in as *mut sockaddr, &mut len) == 0 }
}

/// True for sockets natively bound to the shadow address, i.e. those the
/// overlay claimed at bind time.
pub fn shadow_bound(fd: RawFd) -> bool {
    matches!(local_v4(fd), Some(a) if *a.ip() == SHADOW_BIND_IP)
}

/// The inode to forget on close: overlay-bound sockets, and stream sockets
/// that were registered but never bound or connected.
pub fn close_notify_inode(fd: RawFd) -> Option<Inode> {
    if !is_socket(fd) || !is_inet_stream(fd) {
        return None;
    }
    let local = local_v4(fd)?;
    let untouched = local.ip().is_unspecified() && local.port() == 0 && !has_peer(fd);
    if *local.ip() == SHADOW_BIND_IP || untouched {
        inode(fd)
    } else {
        None
    }
}

pub fn status_flags(fd: RawFd) -> c_int {
    unsafe { libc::fcntl(fd, libc::F_GETFL) }
}

pub fn set_nonblocking(fd: RawFd, on: bool) {
    let fl = status_flags(fd);
    if fl < 0 {
        return;
    }
    let want = if on {
        fl | libc::O_NONBLOCK
    } else {
        fl & !libc::O_NONBLOCK
    };
    if want != fl {
        unsafe { libc::fcntl(fd, libc::F_SETFL, want) };
    }
}

pub fn set_cloexec(fd: RawFd, on: bool) {
    let fl = unsafe { libc::fcntl(fd, libc::F_GETFD) };
    if fl < 0 {
        return;
    }
    let want = if on {
        fl | libc::FD_CLOEXEC
    } else {
        fl & !libc::FD_CLOEXEC
    };
    unsafe { libc::fcntl(fd, libc::F_SETFD, want) };
}

pub fn is_cloexec(fd: RawFd) -> bool {
    unsafe { libc::fcntl(fd, libc::F_GETFD) & libc::FD_CLOEXEC != 0 }
}

/// Socket options a guest may have set before connect that must survive the
/// descriptor swap.
const CARRIED: [(c_int, c_int); 3] = [
    (libc::IPPROTO_TCP, libc::TCP_NODELAY),
    (libc::SOL_SOCKET, libc::SO_KEEPALIVE),
    (libc::SOL_SOCKET, libc::SO_OOBINLINE),
];

const CARRIED_TIMEOUTS: [c_int; 2] = [libc::SO_RCVTIMEO, libc::SO_SNDTIMEO];

pub fn copy_socket_options(from: RawFd, to: RawFd) {
    for (level, name) in CARRIED {
        if let Some(v) = sockopt_int(from, level, name) {
            set_int(to, level, name, v);
        }
    }
    for name in CARRIED_TIMEOUTS {
        let mut tv: libc::timeval = unsafe { mem::zeroed() };
        let mut len = mem::size_of::<libc::timeval>() as socklen_t;
        let rc = unsafe {
            libc::getsockopt(
                from,
                libc::SOL_SOCKET,
                name,
                &mut tv as *mut libc::timeval as *mut libc::c_void,
                &mut len,
            )
        };
        if rc == 0 && (tv.tv_sec != 0 || tv.tv_usec != 0) {
            unsafe {
                libc::setsockopt(
                    to,
                    libc::SOL_SOCKET,
                    name,
                    &tv as *const libc::timeval as *const libc::c_void,
                    mem::size_of::<libc::timeval>() as socklen_t,
                )
            };
        }
    }
}

pub fn set_int(fd: RawFd, level: c_int, name: c_int, v: c_int) {
    unsafe {
        libc::setsockopt(
            fd,
            level,
            name,
            &v as *const c_int as *const libc::c_void,
            mem::size_of::<c_int>() as socklen_t,
        )
    };
}

/// Bounds how long a native accept on a shadow socket can block when another
/// process takes the pending connection between the readiness probe and the
/// accept.
pub fn set_accept_timeout(fd: RawFd, micros: i64) {
    let tv = libc::timeval {
        tv_sec: 0,
        tv_usec: micros as libc::suseconds_t,
    };
    unsafe {
        libc::setsockopt(
            fd,
            libc::SOL_SOCKET,
            libc::SO_RCVTIMEO,
            &tv as *const libc::timeval as *const libc::c_void,
            mem::size_of::<libc::timeval>() as socklen_t,
        )
    };
}

pub fn readable_now(fd: RawFd) -> bool {
    let mut p = libc::pollfd {
        fd,
        events: libc::POLLIN,
        revents: 0,
    };
    unsafe { libc::poll(&mut p, 1, 0) == 1 && p.revents & libc::POLLIN != 0 }
}
