//! In-process nodes driven through the service protocol by a test thread
//! standing in for the preloaded monitor.

use std::io::{Read, Write};
use std::net::{Ipv4Addr, Shutdown, SocketAddrV4, TcpListener, TcpStream};
use std::os::fd::{AsRawFd, RawFd};
use std::os::unix::fs::MetadataExt;
use std::sync::Arc;

use boxer::config::{NodeConfig, TransportPolicy};
use boxer::supervisor::Node;
use boxer_proto::client::ServiceClient;
use boxer_proto::{Inode, OverlayAddr, ServiceRequest, ServiceResponse, Status};

pub struct InProc {
    pub rt: tokio::runtime::Runtime,
    _root: tempfile::TempDir,
    pub nodes: Vec<Arc<Node>>,
}

impl InProc {
    /// A seed followed by one member per policy.
    pub fn start(policies: &[TransportPolicy]) -> InProc {
        let rt = tokio::runtime::Builder::new_multi_thread()
            .enable_all()
            .build()
            .unwrap();
        let root = tempfile::tempdir().unwrap();
        let seed = rt
            .block_on(Node::start(NodeConfig::seed(root.path().join("n0"))))
            .unwrap();
        let mut nodes = vec![seed.clone()];
        for (i, p) in policies.iter().enumerate() {
            let cfg = NodeConfig::member(root.path().join(format!("n{}", i + 1)), seed.endpoint())
                .with_transport(*p);
            nodes.push(rt.block_on(Node::start(cfg)).unwrap());
        }
        let n = nodes.len();
        for node in &nodes {
            assert!(super::eventually(
                std::time::Duration::from_secs(5),
                || node.membership().len() == n
            ));
        }
        InProc {
            rt,
            _root: root,
            nodes,
        }
    }
}

impl Drop for InProc {
    fn drop(&mut self) {
        for n in &self.nodes {
            self.rt.block_on(n.shutdown());
        }
    }
}

pub fn inode(fd: RawFd) -> Inode {
    Inode(
        std::fs::metadata(format!("/proc/self/fd/{fd}"))
            .unwrap()
            .ino(),
    )
}

fn expect_ok(r: ServiceResponse) {
    assert_eq!(r.status(), Status::Ok, "{r:?}");
}

/// A listening overlay socket as the monitor would set it up.
pub struct Listener {
    shadow: TcpListener,
    client: ServiceClient,
}

impl Listener {
    pub fn open(node: &Node, port: u16) -> Listener {
        let shadow = TcpListener::bind("127.77.0.1:0").unwrap();
        let std::net::SocketAddr::V4(native) = shadow.local_addr().unwrap() else {
            unreachable!()
        };
        let client = ServiceClient::for_dir(node.dir());
        let ino = inode(shadow.as_raw_fd());
        expect_ok(
            client
                .call(&ServiceRequest::Socket { inode: ino })
                .unwrap()
                .0,
        );
        let addr = OverlayAddr::new(Ipv4Addr::UNSPECIFIED, port);
        expect_ok(
            client
                .call(&ServiceRequest::Bind {
                    inode: ino,
                    addr,
                    native,
                    reuse_port: false,
                })
                .unwrap()
                .0,
        );
        expect_ok(
            client
                .call(&ServiceRequest::Listen {
                    inode: ino,
                    backlog: 16,
                })
                .unwrap()
                .0,
        );
        Listener { shadow, client }
    }

    pub fn accept(&self) -> TcpStream {
        let ino = inode(self.shadow.as_raw_fd());
        let (r, fd) = self
            .client
            .call(&ServiceRequest::Accept {
                inode: ino,
                blocking: true,
            })
            .unwrap();
        expect_ok(r);
        TcpStream::from(fd.expect("accepted stream attached"))
    }
}

impl Drop for Listener {
    fn drop(&mut self) {
        let ino = inode(self.shadow.as_raw_fd());
        let _ = self
            .client
            .call(&ServiceRequest::CloseNotify { inode: ino });
    }
}

/// Connects to `dest` through `node`, returning the stream or the status.
pub fn connect(node: &Node, dest: OverlayAddr) -> Result<TcpStream, Status> {
    let sock = socket2::Socket::new(socket2::Domain::IPV4, socket2::Type::STREAM, None).unwrap();
    let client = ServiceClient::for_dir(node.dir());
    let ino = inode(sock.as_raw_fd());
    expect_ok(
        client
            .call(&ServiceRequest::Socket { inode: ino })
            .unwrap()
            .0,
    );
    let (r, fd) = client
        .call(&ServiceRequest::Connect {
            inode: ino,
            dest,
            blocking: true,
        })
        .unwrap();
    let _ = client.call(&ServiceRequest::CloseNotify { inode: ino });
    match r.status() {
        Status::Ok => Ok(TcpStream::from(fd.expect("connected stream attached"))),
        s => Err(s),
    }
}

/// Serves one echo on `l` in a thread.
pub fn echo_once(l: Listener) -> std::thread::JoinHandle<()> {
    std::thread::spawn(move || {
        let mut s = l.accept();
        let mut r = s.try_clone().unwrap();
        std::io::copy(&mut r, &mut s).unwrap();
        s.shutdown(Shutdown::Write).unwrap();
    })
}

/// Sends `payload` and returns what came back.
pub fn round_trip(s: TcpStream, payload: &[u8]) -> Vec<u8> {
    let mut w = s.try_clone().unwrap();
    let out = payload.to_vec();
    let t = std::thread::spawn(move || {
        w.write_all(&out).unwrap();
        w.shutdown(Shutdown::Write).unwrap();
    });
    let mut back = Vec::new();
    (&s).read_to_end(&mut back).unwrap();
    t.join().unwrap();
    back
}

pub fn overlay(node: &Node, port: u16) -> OverlayAddr {
    OverlayAddr::new(node.overlay_ip(), port)
}

#[allow(unused)]
pub fn native_of(l: &Listener) -> SocketAddrV4 {
    let std::net::SocketAddr::V4(a) = l.shadow.local_addr().unwrap() else {
        unreachable!()
    };
    a
}
