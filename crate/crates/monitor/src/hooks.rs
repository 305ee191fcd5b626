//! The exported C symbols.

use std::ffi::{CStr, CString};
use std::mem;
use std::net::{IpAddr, Ipv4Addr, SocketAddrV4};
use std::os::fd::IntoRawFd;

use boxer_proto::{
    Inode, OverlayAddr, ServiceRequest, ServiceResponse, Status, SHADOW_BIND_IP, SIGNAL_PEER_IP,
};
use libc::{
    addrinfo, c_char, c_int, hostent, mode_t, size_t, sockaddr, sockaddr_in, socklen_t, FILE,
};

use crate::real::{real, Guard};
use crate::sys::{self, fail};
use crate::{config, Config, ACCEPT_PROBE_MICROS};

fn enter() -> Option<(Guard, &'static Config)> {
    let g = Guard::enter()?;
    let cfg = config()?;
    Some((g, cfg))
}

impl Config {
    fn call(&self, req: ServiceRequest) -> Option<(ServiceResponse, Option<std::os::fd::OwnedFd>)> {
        self.client.call(&req).ok()
    }

    /// Sends a bookkeeping request whose answer does not change the guest's
    /// result.
    fn tell(&self, req: ServiceRequest) {
        let _ = self.client.call(&req);
    }

    /// Like `call`, but a socket the supervisor has already forgotten is
    /// registered again and the request retried once.
    fn call_registered(
        &self,
        req: ServiceRequest,
    ) -> Option<(ServiceResponse, Option<std::os::fd::OwnedFd>)> {
        let first = self.call(req.clone())?;
        match (first.0.status(), req.inode()) {
            (Status::InvalidSocket, Some(inode)) => {
                self.tell(ServiceRequest::Socket { inode });
                self.call(req)
            }
            _ => Some(first),
        }
    }

    fn forget(&self, fd: c_int) {
        if let Some(inode) = sys::inode(fd) {
            self.tell(ServiceRequest::CloseNotify { inode });
        }
    }

    fn lookup(&self, name: &str) -> Option<Ipv4Addr> {
        match self.call(ServiceRequest::NameLookup {
            name: name.to_owned(),
        })? {
            (
                ServiceResponse::NameLookup {
                    status: Status::Ok,
                    addrs,
                },
                _,
            ) => addrs.first().copied(),
            _ => None,
        }
    }

    fn nodename(&self) -> Option<String> {
        match self.call(ServiceRequest::Uname)? {
            (
                ServiceResponse::Uname {
                    status: Status::Ok,
                    nodename,
                },
                _,
            ) => nodename,
            _ => None,
        }
    }
}

fn is_stream(ty: c_int) -> bool {
    ty & !(libc::SOCK_NONBLOCK | libc::SOCK_CLOEXEC) == libc::SOCK_STREAM
}

fn inode_or_fail(fd: c_int) -> Result<Inode, c_int> {
    sys::inode(fd).ok_or_else(|| fail(libc::EBADF))
}

// ---- stream sockets ----

#[no_mangle]
pub unsafe extern "C" fn socket(domain: c_int, ty: c_int, protocol: c_int) -> c_int {
    let real = real!(socket: fn(c_int, c_int, c_int) -> c_int);
    let fd = real(domain, ty, protocol);
    if fd < 0 || domain != libc::AF_INET || !is_stream(ty) {
        return fd;
    }
    if let Some((_g, cfg)) = enter() {
        if let Some(inode) = sys::inode(fd) {
            cfg.tell(ServiceRequest::Socket { inode });
        }
    }
    fd
}

#[no_mangle]
pub unsafe extern "C" fn bind(fd: c_int, addr: *const sockaddr, len: socklen_t) -> c_int {
    let real = real!(bind: fn(c_int, *const sockaddr, socklen_t) -> c_int);
    let Some((_g, cfg)) = enter() else {
        return real(fd, addr, len);
    };
    let Some(want) = sys::read_v4(addr, len) else {
        return real(fd, addr, len);
    };
    if !sys::is_inet_stream(fd) {
        return real(fd, addr, len);
    }
    if !(want.ip().is_unspecified() || cfg.cidr.contains(*want.ip())) {
        let rc = real(fd, addr, len);
        if rc == 0 {
            cfg.forget(fd);
        }
        return rc;
    }
    let inode = match inode_or_fail(fd) {
        Ok(i) => i,
        Err(rc) => return rc,
    };
    let shadow = sys::to_sockaddr(SocketAddrV4::new(SHADOW_BIND_IP, 0));
    if real(
        fd,
        &shadow as *const sockaddr_in as *const sockaddr,
        mem::size_of::<sockaddr_in>() as socklen_t,
    ) != 0
    {
        return -1;
    }
    sys::set_accept_timeout(fd, ACCEPT_PROBE_MICROS);
    let Some(native) = sys::local_v4(fd) else {
        return fail(libc::EINVAL);
    };
    let req = ServiceRequest::Bind {
        inode,
        addr: OverlayAddr::from(want),
        native,
        reuse_port: sys::reuse_port(fd),
    };
    match cfg.call_registered(req) {
        Some((resp, _)) if resp.status().is_ok() => 0,
        Some((resp, _)) => fail(resp.status().to_errno()),
        None => fail(libc::ECONNRESET),
    }
}

#[no_mangle]
pub unsafe extern "C" fn listen(fd: c_int, backlog: c_int) -> c_int {
    let real = real!(listen: fn(c_int, c_int) -> c_int);
    let Some((_g, cfg)) = enter() else {
        return real(fd, backlog);
    };
    let rc = real(fd, backlog);
    if rc != 0 || !sys::shadow_bound(fd) {
        return rc;
    }
    let inode = match inode_or_fail(fd) {
        Ok(i) => i,
        Err(rc) => return rc,
    };
    match cfg.call(ServiceRequest::Listen {
        inode,
        backlog: backlog.max(0) as u32,
    }) {
        Some((resp, _)) if resp.status().is_ok() => 0,
        Some((resp, _)) => fail(resp.status().to_errno()),
        None => fail(libc::ECONNRESET),
    }
}

type Accept4 = unsafe extern "C" fn(c_int, *mut sockaddr, *mut socklen_t, c_int) -> c_int;

unsafe fn overlay_accept(
    real_accept4: Accept4,
    cfg: &Config,
    fd: c_int,
    addr: *mut sockaddr,
    len: *mut socklen_t,
    flags: c_int,
) -> c_int {
    // Anything pending natively is either a signal connection, which only
    // exists to wake a poller and is dropped here, or a stray local
    // connection, which is handed over unchanged.
    while sys::readable_now(fd) {
        let mut peer: sockaddr_in = mem::zeroed();
        let mut plen = mem::size_of::<sockaddr_in>() as socklen_t;
        let c = real_accept4(
            fd,
            &mut peer as *mut sockaddr_in as *mut sockaddr,
            &mut plen,
            flags | libc::SOCK_CLOEXEC,
        );
        if c < 0 {
            break;
        }
        let from = sys::read_v4(&peer as *const sockaddr_in as *const sockaddr, plen);
        if matches!(from, Some(a) if *a.ip() == SIGNAL_PEER_IP) {
            real!(close: fn(c_int) -> c_int)(c);
            continue;
        }
        sys::set_cloexec(c, flags & libc::SOCK_CLOEXEC != 0);
        if let Some(a) = from {
            sys::write_v4(a, addr, len);
        }
        return c;
    }

    let inode = match inode_or_fail(fd) {
        Ok(i) => i,
        Err(rc) => return rc,
    };
    let blocking = sys::status_flags(fd) & libc::O_NONBLOCK == 0;
    match cfg.call(ServiceRequest::Accept { inode, blocking }) {
        Some((
            ServiceResponse::Accept {
                status: Status::Ok,
                peer,
                ..
            },
            Some(conn),
        )) => {
            let c = conn.into_raw_fd();
            sys::set_nonblocking(c, flags & libc::SOCK_NONBLOCK != 0);
            sys::set_cloexec(c, flags & libc::SOCK_CLOEXEC != 0);
            if let Some(p) = peer {
                sys::write_v4(p.into(), addr, len);
            }
            c
        }
        Some((resp, _)) if !resp.status().is_ok() => fail(resp.status().to_errno()),
        Some(_) => fail(libc::EPROTO),
        None => fail(libc::ECONNABORTED),
    }
}

#[no_mangle]
pub unsafe extern "C" fn accept(fd: c_int, addr: *mut sockaddr, len: *mut socklen_t) -> c_int {
    accept4(fd, addr, len, 0)
}

#[no_mangle]
pub unsafe extern "C" fn accept4(
    fd: c_int,
    addr: *mut sockaddr,
    len: *mut socklen_t,
    flags: c_int,
) -> c_int {
    let real = real!(accept4: fn(c_int, *mut sockaddr, *mut socklen_t, c_int) -> c_int);
    let Some((_g, cfg)) = enter() else {
        return real(fd, addr, len, flags);
    };
    if !sys::shadow_bound(fd) {
        return real(fd, addr, len, flags);
    }
    overlay_accept(real, cfg, fd, addr, len, flags)
}

#[no_mangle]
pub unsafe extern "C" fn connect(fd: c_int, addr: *const sockaddr, len: socklen_t) -> c_int {
    let real = real!(connect: fn(c_int, *const sockaddr, socklen_t) -> c_int);
    let Some((_g, cfg)) = enter() else {
        return real(fd, addr, len);
    };
    let Some(dest) = sys::read_v4(addr, len) else {
        return real(fd, addr, len);
    };
    if !sys::is_inet_stream(fd) {
        return real(fd, addr, len);
    }
    if !cfg.cidr.contains(*dest.ip()) {
        return real(fd, addr, len);
    }

    let inode = match inode_or_fail(fd) {
        Ok(i) => i,
        Err(rc) => return rc,
    };
    let nonblocking = sys::status_flags(fd) & libc::O_NONBLOCK != 0;
    let cloexec = sys::is_cloexec(fd);
    let req = ServiceRequest::Connect {
        inode,
        dest: dest.into(),
        blocking: !nonblocking,
    };
    match cfg.call_registered(req) {
        Some((
            ServiceResponse::Connect {
                status: Status::Ok, ..
            },
            Some(conn),
        )) => {
            let c = conn.into_raw_fd();
            sys::copy_socket_options(fd, c);
            sys::set_nonblocking(c, nonblocking);
            let rc = libc::dup3(c, fd, if cloexec { libc::O_CLOEXEC } else { 0 });
            let err = sys::errno();
            real!(close: fn(c_int) -> c_int)(c);
            if rc < 0 {
                return fail(err);
            }
            0
        }
        Some((resp, _)) if !resp.status().is_ok() => fail(resp.status().to_errno()),
        Some(_) => fail(libc::EPROTO),
        None => fail(libc::ECONNRESET),
    }
}

#[no_mangle]
pub unsafe extern "C" fn getsockname(fd: c_int, addr: *mut sockaddr, len: *mut socklen_t) -> c_int {
    let real = real!(getsockname: fn(c_int, *mut sockaddr, *mut socklen_t) -> c_int);
    let Some((_g, cfg)) = enter() else {
        return real(fd, addr, len);
    };
    if !sys::shadow_bound(fd) {
        return real(fd, addr, len);
    }
    let inode = match inode_or_fail(fd) {
        Ok(i) => i,
        Err(rc) => return rc,
    };
    match cfg.call(ServiceRequest::SockName { inode }) {
        Some((
            ServiceResponse::SockName {
                status: Status::Ok,
                addr: Some(a),
            },
            _,
        )) => {
            sys::write_v4(a.into(), addr, len);
            0
        }
        _ => real(fd, addr, len),
    }
}

#[no_mangle]
pub unsafe extern "C" fn close(fd: c_int) -> c_int {
    let real = real!(close: fn(c_int) -> c_int);
    let Some((_g, cfg)) = enter() else {
        return real(fd);
    };
    let tracked = sys::close_notify_inode(fd);
    let rc = real(fd);
    let err = sys::errno();
    if let Some(inode) = tracked {
        cfg.tell(ServiceRequest::CloseNotify { inode });
    }
    sys::set_errno(err);
    rc
}

// ---- names ----

/// The overlay address for `name`, skipping literals that never need the
/// coordinator.
unsafe fn overlay_ip(cfg: &Config, name: *const c_char) -> Option<CString> {
    if name.is_null() {
        return None;
    }
    let s = CStr::from_ptr(name).to_str().ok()?;
    if s.is_empty() || s.parse::<IpAddr>().is_ok() {
        return None;
    }
    let ip = cfg.lookup(s)?;
    CString::new(ip.to_string()).ok()
}

#[no_mangle]
pub unsafe extern "C" fn getaddrinfo(
    node: *const c_char,
    service: *const c_char,
    hints: *const addrinfo,
    res: *mut *mut addrinfo,
) -> c_int {
    let real = real!(getaddrinfo: fn(*const c_char, *const c_char, *const addrinfo, *mut *mut addrinfo) -> c_int);
    let Some((_g, cfg)) = enter() else {
        return real(node, service, hints, res);
    };
    if !hints.is_null() && (*hints).ai_family == libc::AF_INET6 {
        return real(node, service, hints, res);
    }
    let Some(numeric) = overlay_ip(cfg, node) else {
        return real(node, service, hints, res);
    };
    let mut h: addrinfo = if hints.is_null() {
        mem::zeroed()
    } else {
        *hints
    };
    if hints.is_null() {
        h.ai_family = libc::AF_UNSPEC;
    }
    h.ai_flags |= libc::AI_NUMERICHOST;
    real(numeric.as_ptr(), service, &h, res)
}

#[no_mangle]
pub unsafe extern "C" fn gethostbyname(name: *const c_char) -> *mut hostent {
    let real = real!(gethostbyname: fn(*const c_char) -> *mut hostent);
    let Some((_g, cfg)) = enter() else {
        return real(name);
    };
    match overlay_ip(cfg, name) {
        Some(numeric) => real(numeric.as_ptr()),
        None => real(name),
    }
}

#[no_mangle]
pub unsafe extern "C" fn gethostbyname2(name: *const c_char, af: c_int) -> *mut hostent {
    let real = real!(gethostbyname2: fn(*const c_char, c_int) -> *mut hostent);
    let Some((_g, cfg)) = enter() else {
        return real(name, af);
    };
    if af != libc::AF_INET {
        return real(name, af);
    }
    match overlay_ip(cfg, name) {
        Some(numeric) => real(numeric.as_ptr(), af),
        None => real(name, af),
    }
}

#[no_mangle]
pub unsafe extern "C" fn gethostbyname_r(
    name: *const c_char,
    ret: *mut hostent,
    buf: *mut c_char,
    buflen: size_t,
    result: *mut *mut hostent,
    h_errnop: *mut c_int,
) -> c_int {
    let real = real!(gethostbyname_r: fn(*const c_char, *mut hostent, *mut c_char, size_t, *mut *mut hostent, *mut c_int) -> c_int);
    let Some((_g, cfg)) = enter() else {
        return real(name, ret, buf, buflen, result, h_errnop);
    };
    match overlay_ip(cfg, name) {
        Some(numeric) => real(numeric.as_ptr(), ret, buf, buflen, result, h_errnop),
        None => real(name, ret, buf, buflen, result, h_errnop),
    }
}

#[no_mangle]
pub unsafe extern "C" fn uname(buf: *mut libc::utsname) -> c_int {
    let real = real!(uname: fn(*mut libc::utsname) -> c_int);
    let rc = real(buf);
    if rc != 0 {
        return rc;
    }
    if let Some((_g, cfg)) = enter() {
        if let Some(name) = cfg.nodename() {
            let field = &mut (*buf).nodename;
            let n = name.len().min(field.len() - 1);
            for (dst, src) in field.iter_mut().zip(name.as_bytes()[..n].iter()) {
                *dst = *src as c_char;
            }
            field[n] = 0;
        }
    }
    0
}

#[no_mangle]
pub unsafe extern "C" fn gethostname(out: *mut c_char, len: size_t) -> c_int {
    let real = real!(gethostname: fn(*mut c_char, size_t) -> c_int);
    let Some((_g, cfg)) = enter() else {
        return real(out, len);
    };
    let Some(name) = cfg.nodename() else {
        return real(out, len);
    };
    if name.len() + 1 > len {
        return fail(libc::ENAMETOOLONG);
    }
    std::ptr::copy_nonoverlapping(name.as_ptr() as *const c_char, out, name.len());
    *out.add(name.len()) = 0;
    0
}

// ---- files ----

/// The substitute for an absolute path, when a rule rewrites it.
unsafe fn remapped(path: *const c_char) -> Option<CString> {
    if path.is_null() || *path != b'/' as c_char {
        return None;
    }
    let (_g, cfg) = enter()?;
    let s = CStr::from_ptr(path).to_str().ok()?;
    match cfg.call(ServiceRequest::PathRemap { path: s.to_owned() })? {
        (
            ServiceResponse::PathRemap {
                status: Status::Ok,
                path: Some(p),
            },
            _,
        ) if p != s => CString::new(p).ok(),
        _ => None,
    }
}

/// Picks the remapped path when there is one. The returned pointer borrows
/// from `holder`.
unsafe fn pick(path: *const c_char, holder: &mut Option<CString>) -> *const c_char {
    *holder = remapped(path);
    holder.as_ref().map_or(path, |c| c.as_ptr())
}

// `mode` is variadic in C and only read by the next definition when the
// flags carry O_CREAT or O_TMPFILE.

#[no_mangle]
pub unsafe extern "C" fn open(path: *const c_char, flags: c_int, mode: mode_t) -> c_int {
    let real = real!(open: fn(*const c_char, c_int, mode_t) -> c_int);
    let mut h = None;
    real(pick(path, &mut h), flags, mode)
}

#[no_mangle]
pub unsafe extern "C" fn open64(path: *const c_char, flags: c_int, mode: mode_t) -> c_int {
    let real = real!(open64: fn(*const c_char, c_int, mode_t) -> c_int);
    let mut h = None;
    real(pick(path, &mut h), flags, mode)
}

#[no_mangle]
pub unsafe extern "C" fn openat(
    dirfd: c_int,
    path: *const c_char,
    flags: c_int,
    mode: mode_t,
) -> c_int {
    let real = real!(openat: fn(c_int, *const c_char, c_int, mode_t) -> c_int);
    let mut h = None;
    real(dirfd, pick(path, &mut h), flags, mode)
}

#[no_mangle]
pub unsafe extern "C" fn openat64(
    dirfd: c_int,
    path: *const c_char,
    flags: c_int,
    mode: mode_t,
) -> c_int {
    let real = real!(openat64: fn(c_int, *const c_char, c_int, mode_t) -> c_int);
    let mut h = None;
    real(dirfd, pick(path, &mut h), flags, mode)
}

#[no_mangle]
pub unsafe extern "C" fn __open_2(path: *const c_char, flags: c_int) -> c_int {
    let real = real!(__open_2: fn(*const c_char, c_int) -> c_int);
    let mut h = None;
    real(pick(path, &mut h), flags)
}

#[no_mangle]
pub unsafe extern "C" fn __open64_2(path: *const c_char, flags: c_int) -> c_int {
    let real = real!(__open64_2: fn(*const c_char, c_int) -> c_int);
    let mut h = None;
    real(pick(path, &mut h), flags)
}

#[no_mangle]
pub unsafe extern "C" fn creat(path: *const c_char, mode: mode_t) -> c_int {
    let real = real!(creat: fn(*const c_char, mode_t) -> c_int);
    let mut h = None;
    real(pick(path, &mut h), mode)
}

#[no_mangle]
pub unsafe extern "C" fn creat64(path: *const c_char, mode: mode_t) -> c_int {
    let real = real!(creat64: fn(*const c_char, mode_t) -> c_int);
    let mut h = None;
    real(pick(path, &mut h), mode)
}

#[no_mangle]
pub unsafe extern "C" fn fopen(path: *const c_char, mode: *const c_char) -> *mut FILE {
    let real = real!(fopen: fn(*const c_char, *const c_char) -> *mut FILE);
    let mut h = None;
    real(pick(path, &mut h), mode)
}

#[no_mangle]
pub unsafe extern "C" fn fopen64(path: *const c_char, mode: *const c_char) -> *mut FILE {
    let real = real!(fopen64: fn(*const c_char, *const c_char) -> *mut FILE);
    let mut h = None;
    real(pick(path, &mut h), mode)
}
