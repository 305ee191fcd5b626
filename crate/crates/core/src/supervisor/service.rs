//! Service connections from process monitors: one request, one response.

use std::io;
use std::os::fd::{AsRawFd, RawFd};
use std::sync::atomic::Ordering;
use std::sync::Arc;

use boxer_proto::frame::encode_frame;
use boxer_proto::{fdpass, Inode, ServiceRequest, ServiceResponse, Status};
use tokio::io::{AsyncReadExt, Interest};
use tokio::net::{UnixListener, UnixStream};
use tokio::sync::oneshot;
use tracing::{debug, warn};

use super::{lock, procfs, Node};
use crate::framed::read_frame;
use crate::netservice::sockets::{AcceptOutcome, SocketState, Waiter};
use crate::netservice::transport::{establish, Inbound};

/// A blocked accept parked in the socket table.
pub struct AcceptSlot(oneshot::Sender<Result<Inbound, Status>>);

impl Waiter<Inbound> for AcceptSlot {
    fn offer(self, conn: Inbound) -> Result<(), Inbound> {
        self.0
            .send(Ok(conn))
            .map_err(|back| back.expect("sent a connection"))
    }

    fn cancel(self, status: Status) {
        let _ = self.0.send(Err(status));
    }
}

/// A descriptor travelling with a response.
enum Handoff {
    Accepted(Inbound),
    Connected(std::net::TcpStream),
}

impl Handoff {
    fn fd(&self) -> RawFd {
        match self {
            Handoff::Accepted(i) => i.stream.as_raw_fd(),
            Handoff::Connected(s) => s.as_raw_fd(),
        }
    }
}

pub(super) async fn serve(node: Arc<Node>, listener: UnixListener) {
    loop {
        match listener.accept().await {
            Ok((s, _)) => {
                let node = node.clone();
                tokio::spawn(async move { node.serve_conn(s).await });
            }
            Err(e) => {
                warn!(error = %e, "service accept failed");
                tokio::time::sleep(std::time::Duration::from_millis(10)).await;
            }
        }
    }
}

async fn send_response(
    s: &UnixStream,
    resp: &ServiceResponse,
    fd: Option<RawFd>,
) -> io::Result<()> {
    let bytes = encode_frame(resp)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))?;
    let (mut off, mut fd) = (0, fd);
    while off < bytes.len() {
        s.writable().await?;
        match s.try_io(Interest::WRITABLE, || {
            fdpass::send_with_fd(s.as_raw_fd(), &bytes[off..], fd)
        }) {
            Ok(n) => {
                off += n;
                fd = None;
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => {}
            Err(e) => return Err(e),
        }
    }
    Ok(())
}

impl Node {
    async fn serve_conn(self: Arc<Self>, mut s: UnixStream) {
        let pid = s
            .peer_cred()
            .ok()
            .and_then(|c| c.pid())
            .map_or(0, |p| p as u32);
        let req = match read_frame::<ServiceRequest, _>(&mut s).await {
            Ok(Some(r)) => r,
            Ok(None) => return,
            Err(e) => {
                self.service_stats.malformed.fetch_add(1, Ordering::Relaxed);
                warn!(pid, error = %e, "dropping service connection");
                return;
            }
        };
        self.service_stats.requests.fetch_add(1, Ordering::Relaxed);
        let Some((resp, handoff)) = self.dispatch(req, pid, &mut s).await else {
            self.service_stats.abandoned.fetch_add(1, Ordering::Relaxed);
            return;
        };
        match send_response(&s, &resp, handoff.as_ref().map(Handoff::fd)).await {
            Ok(()) => {
                self.service_stats.responses.fetch_add(1, Ordering::Relaxed);
            }
            Err(e) => {
                debug!(pid, error = %e, "response not delivered");
                self.service_stats.abandoned.fetch_add(1, Ordering::Relaxed);
                if let Some(Handoff::Accepted(conn)) = handoff {
                    self.requeue(conn);
                }
            }
        }
    }

    fn requeue(&self, conn: Inbound) {
        let signals = {
            let mut t = lock(&self.sockets);
            let _ = t.requeue(conn.dest, conn);
            t.take_signals()
        };
        self.flush_signals(signals);
    }

    /// `None` when the guest went away before an answer existed.
    async fn dispatch(
        self: &Arc<Self>,
        req: ServiceRequest,
        pid: u32,
        s: &mut UnixStream,
    ) -> Option<(ServiceResponse, Option<Handoff>)> {
        let plain = |r: ServiceResponse| Some((r, None));
        match req {
            ServiceRequest::Socket { inode } => {
                lock(&self.sockets).register(inode, pid);
                plain(ServiceResponse::Socket { status: Status::Ok })
            }
            ServiceRequest::Bind {
                inode,
                addr,
                native,
                reuse_port,
            } => {
                let r = lock(&self.sockets).bind(inode, pid, addr, Some(native), reuse_port);
                plain(match r {
                    Ok(a) => ServiceResponse::Bind {
                        status: Status::Ok,
                        addr: Some(a),
                    },
                    Err(status) => ServiceResponse::Bind { status, addr: None },
                })
            }
            ServiceRequest::Listen { inode, .. } => {
                let status = lock(&self.sockets)
                    .listen(inode, pid)
                    .err()
                    .unwrap_or(Status::Ok);
                plain(ServiceResponse::Listen { status })
            }
            ServiceRequest::Accept { inode, blocking } => {
                self.accept(inode, pid, blocking, s).await
            }
            ServiceRequest::Connect {
                inode,
                dest,
                blocking,
            } => {
                let src = match lock(&self.sockets).connect_source(inode, pid) {
                    Ok(a) => a,
                    Err(status) => return plain(req_failure(&req, status)),
                };
                let t = &self.cfg.timing;
                let budget = if blocking {
                    t.connect_timeout
                } else {
                    t.nonblocking_connect
                };
                let out =
                    tokio::time::timeout(budget, establish(self, self.cfg.transport, dest, src, t))
                        .await;
                let stream = match out {
                    Ok(Ok(stream)) => stream,
                    Ok(Err(status)) => return plain(req_failure(&req, status)),
                    Err(_) => return plain(req_failure(&req, Status::TimedOut)),
                };
                let stream = match stream
                    .into_std()
                    .and_then(|s| s.set_nonblocking(false).map(|()| s))
                {
                    Ok(s) => s,
                    Err(_) => return plain(req_failure(&req, Status::TransportUnavailable)),
                };
                lock(&self.sockets).connected(inode);
                Some((
                    ServiceResponse::Connect {
                        status: Status::Ok,
                        local: Some(src),
                        fd_attached: true,
                    },
                    Some(Handoff::Connected(stream)),
                ))
            }
            ServiceRequest::NameLookup { name } => {
                let ip = lock(&self.members).set().resolve(&name);
                plain(match ip {
                    Some(ip) => ServiceResponse::NameLookup {
                        status: Status::Ok,
                        addrs: vec![ip],
                    },
                    None => ServiceResponse::NameLookup {
                        status: Status::NotFound,
                        addrs: Vec::new(),
                    },
                })
            }
            ServiceRequest::Uname => {
                let name = self.name().unwrap_or_else(|| self.id.canonical_name());
                plain(ServiceResponse::Uname {
                    status: Status::Ok,
                    nodename: Some(name),
                })
            }
            ServiceRequest::PathRemap { path } => plain(match self.remap.lookup(&path) {
                Some(p) => ServiceResponse::PathRemap {
                    status: Status::Ok,
                    path: Some(p.to_string_lossy().into_owned()),
                },
                None => ServiceResponse::PathRemap {
                    status: Status::NotFound,
                    path: None,
                },
            }),
            ServiceRequest::CloseNotify { inode } => {
                self.close_notify(inode).await;
                plain(ServiceResponse::CloseNotify { status: Status::Ok })
            }
            ServiceRequest::SockName { inode } => {
                plain(match lock(&self.sockets).sock_name(inode, pid) {
                    Ok(addr) => ServiceResponse::SockName {
                        status: Status::Ok,
                        addr,
                    },
                    Err(status) => ServiceResponse::SockName { status, addr: None },
                })
            }
        }
    }

    async fn accept(
        &self,
        inode: Inode,
        pid: u32,
        blocking: bool,
        s: &mut UnixStream,
    ) -> Option<(ServiceResponse, Option<Handoff>)> {
        let (tx, mut rx) = oneshot::channel();
        let (outcome, signals) = {
            let mut t = lock(&self.sockets);
            let o = t.accept(inode, pid, blocking.then(|| AcceptSlot(tx)));
            (o, t.take_signals())
        };
        self.flush_signals(signals);
        let fail = |status| {
            Some((
                ServiceResponse::Accept {
                    status,
                    peer: None,
                    fd_attached: false,
                },
                None,
            ))
        };
        let ready = |conn: Inbound| {
            Some((
                ServiceResponse::Accept {
                    status: Status::Ok,
                    peer: Some(conn.peer),
                    fd_attached: true,
                },
                Some(Handoff::Accepted(conn)),
            ))
        };
        match outcome {
            AcceptOutcome::Ready(conn) => ready(conn),
            AcceptOutcome::WouldBlock => fail(Status::WouldBlock),
            AcceptOutcome::Failed(status) => fail(status),
            AcceptOutcome::Parked => {
                let mut probe = [0u8; 1];
                tokio::select! {
                    r = &mut rx => match r {
                        Ok(Ok(conn)) => ready(conn),
                        Ok(Err(status)) => fail(status),
                        Err(_) => fail(Status::Closed),
                    },
                    _ = s.read(&mut probe) => {
                        // the guest hung up (or died) while parked
                        rx.close();
                        if let Ok(Ok(conn)) = rx.try_recv() {
                            self.requeue(conn);
                        }
                        None
                    }
                }
            }
        }
    }

    /// Drops a socket record unless another process still holds the socket.
    async fn close_notify(&self, inode: Inode) {
        let state = lock(&self.sockets).record(inode).map(|r| r.state);
        match state {
            None => {}
            Some(SocketState::Created) => {
                lock(&self.sockets).close(inode);
            }
            Some(_) => {
                let holders = tokio::task::spawn_blocking(move || procfs::holders_of(inode))
                    .await
                    .unwrap_or_default();
                let mut t = lock(&self.sockets);
                if holders.is_empty() {
                    t.close(inode);
                } else {
                    t.adopt(inode, holders);
                }
            }
        }
    }
}

fn req_failure(req: &ServiceRequest, status: Status) -> ServiceResponse {
    req.failure(status)
}
