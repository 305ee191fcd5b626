//! `boxer-guest`: ordinary socket programs used as guests by the tests and
//! benchmarks. Nothing here knows about the overlay; every address comes
//! from the command line and goes through the standard resolver.

use std::collections::HashMap;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::os::fd::{AsRawFd, FromRawFd};
use std::os::unix::net::UnixStream;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use clap::{Parser, Subcommand};
use rand::{RngCore, SeedableRng};

#[derive(Parser)]
#[command(name = "boxer-guest")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Echo every connection back until EOF, `conns` times (0: forever).
    EchoServer {
        #[arg(long)]
        port: u16,
        #[arg(long, default_value_t = 1)]
        conns: usize,
    },
    /// Send a seeded random payload and check the echo.
    EchoClient {
        #[arg(long)]
        host: String,
        #[arg(long)]
        port: u16,
        #[arg(long, default_value_t = 1 << 20)]
        bytes: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Latency server: one byte on accept, then echo. Listens on the
    /// wildcard address and on a loopback-only native port.
    LatencyServer {
        #[arg(long)]
        port: u16,
        #[arg(long)]
        native_port: u16,
    },
    /// Paired overlay/native latency client writing CSV samples.
    LatencyClient {
        #[arg(long)]
        host: String,
        #[arg(long)]
        port: u16,
        #[arg(long)]
        native_port: u16,
        #[arg(long, value_parser = ["ttfb", "rtt"])]
        metric: String,
        #[arg(long)]
        reps: usize,
        #[arg(long, default_value_t = 32)]
        warmup: usize,
        #[arg(long, default_value_t = 1024)]
        payload: usize,
        #[arg(long, default_value = "0")]
        run_id: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Accepts from one listener in two processes (fork after listen).
    SharedListener {
        #[arg(long)]
        port: u16,
    },
    /// Two SO_REUSEPORT sockets on one address, one accepting thread each.
    ReusePair {
        #[arg(long)]
        port: u16,
    },
    /// Non-blocking listener driven by poll(2).
    PollAccepter {
        #[arg(long)]
        port: u16,
    },
    /// Opens `count` connections per thread, each sending a distinct id,
    /// and checks the server's acknowledgement.
    Tagger {
        #[arg(long)]
        host: String,
        #[arg(long)]
        port: u16,
        #[arg(long, default_value_t = 0)]
        first: u32,
        #[arg(long)]
        count: u32,
        #[arg(long, default_value_t = 1)]
        threads: u32,
    },
    /// One connect attempt; prints the outcome and elapsed milliseconds.
    ConnectProbe {
        #[arg(long)]
        host: String,
        #[arg(long)]
        port: u16,
    },
    /// Replica of the toy quorum service: fixed service time per read.
    QuorumReplica {
        #[arg(long)]
        port: u16,
        #[arg(long, default_value_t = 2000)]
        service_us: u64,
    },
    /// Closed-loop reader fanning out over the replicas in the membership
    /// stream; writes a throughput timeline.
    QuorumClient {
        #[arg(long, default_value = "replica")]
        prefix: String,
        #[arg(long)]
        port: u16,
        #[arg(long)]
        duration_ms: u64,
        #[arg(long, default_value_t = 100)]
        bucket_ms: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Prints the host name, a resolved name, and a file's contents.
    Inspect {
        #[arg(long)]
        resolve: Vec<String>,
        #[arg(long)]
        cat: Vec<PathBuf>,
    },
}

fn resolve(host: &str, port: u16) -> io::Result<SocketAddr> {
    (host, port)
        .to_socket_addrs()?
        .find(SocketAddr::is_ipv4)
        .ok_or_else(|| {
            io::Error::new(
                io::ErrorKind::NotFound,
                format!("no IPv4 address for {host}"),
            )
        })
}

/// Connects, retrying while the server is not up yet.
fn connect_retry(host: &str, port: u16, within: Duration) -> io::Result<TcpStream> {
    let start = Instant::now();
    loop {
        let r = resolve(host, port).and_then(TcpStream::connect);
        match r {
            Ok(s) => return Ok(s),
            Err(e) if start.elapsed() < within => {
                if e.kind() != io::ErrorKind::ConnectionRefused
                    && e.kind() != io::ErrorKind::NotFound
                {
                    eprintln!("connect {host}:{port}: {e}, retrying");
                }
                thread::sleep(Duration::from_millis(20));
            }
            Err(e) => return Err(e),
        }
    }
}

fn monotonic_us() -> u64 {
    let mut ts = libc::timespec {
        tv_sec: 0,
        tv_nsec: 0,
    };
    unsafe { libc::clock_gettime(libc::CLOCK_MONOTONIC, &mut ts) };
    ts.tv_sec as u64 * 1_000_000 + ts.tv_nsec as u64 / 1000
}

fn echo(mut s: TcpStream) -> io::Result<u64> {
    let mut r = s.try_clone()?;
    let n = io::copy(&mut r, &mut s)?;
    s.shutdown(Shutdown::Write)?;
    Ok(n)
}

fn echo_server(port: u16, conns: usize) -> io::Result<()> {
    let l = TcpListener::bind(("0.0.0.0", port))?;
    println!("listening {}", l.local_addr()?);
    let mut served = 0;
    while conns == 0 || served < conns {
        let (s, peer) = l.accept()?;
        let n = echo(s)?;
        println!("echoed {n} bytes for {peer}");
        served += 1;
    }
    Ok(())
}

fn payload(bytes: usize, seed: u64) -> Vec<u8> {
    let mut v = vec![0u8; bytes];
    rand::rngs::StdRng::seed_from_u64(seed).fill_bytes(&mut v);
    v
}

fn echo_client(host: &str, port: u16, bytes: usize, seed: u64) -> io::Result<bool> {
    let data = payload(bytes, seed);
    let s = connect_retry(host, port, Duration::from_secs(5))?;
    let mut w = s.try_clone()?;
    let out = data.clone();
    let writer = thread::spawn(move || -> io::Result<()> {
        w.write_all(&out)?;
        w.shutdown(Shutdown::Write)
    });
    let mut back = Vec::with_capacity(bytes);
    (&s).read_to_end(&mut back)?;
    writer.join().expect("writer thread")?;
    let ok = back == data;
    println!(
        "{} {} bytes from {host}:{port}",
        if ok { "match" } else { "MISMATCH" },
        back.len()
    );
    Ok(ok)
}

fn latency_conn(mut s: TcpStream) -> io::Result<()> {
    s.set_nodelay(true)?;
    s.write_all(b"!")?;
    let mut buf = vec![0u8; 64 * 1024];
    loop {
        let n = s.read(&mut buf)?;
        if n == 0 {
            return Ok(());
        }
        s.write_all(&buf[..n])?;
    }
}

fn serve_forever(l: TcpListener) {
    for s in l.incoming() {
        match s {
            Ok(s) => {
                thread::spawn(move || {
                    let _ = latency_conn(s);
                });
            }
            Err(e) => eprintln!("accept: {e}"),
        }
    }
}

fn latency_server(port: u16, native_port: u16) -> io::Result<()> {
    let overlay = TcpListener::bind(("0.0.0.0", port))?;
    let native = TcpListener::bind(("127.0.0.1", native_port))?;
    println!(
        "listening overlay {} native {}",
        overlay.local_addr()?,
        native.local_addr()?
    );
    thread::spawn(move || serve_forever(native));
    serve_forever(overlay);
    Ok(())
}

/// Connect-to-first-byte on a fresh socket; the socket is created before
/// the clock starts.
fn ttfb_once(addr: SocketAddr) -> io::Result<u64> {
    let fd = unsafe { libc::socket(libc::AF_INET, libc::SOCK_STREAM | libc::SOCK_CLOEXEC, 0) };
    if fd < 0 {
        return Err(io::Error::last_os_error());
    }
    let SocketAddr::V4(a) = addr else {
        unreachable!("resolved to IPv4")
    };
    let sin = libc::sockaddr_in {
        sin_family: libc::AF_INET as libc::sa_family_t,
        sin_port: a.port().to_be(),
        sin_addr: libc::in_addr {
            s_addr: u32::from(*a.ip()).to_be(),
        },
        sin_zero: [0; 8],
    };
    let mut s = unsafe { TcpStream::from_raw_fd(fd) };
    let t0 = Instant::now();
    let rc = unsafe {
        libc::connect(
            fd,
            &sin as *const libc::sockaddr_in as *const libc::sockaddr,
            std::mem::size_of_val(&sin) as u32,
        )
    };
    if rc != 0 {
        return Err(io::Error::last_os_error());
    }
    let mut b = [0u8; 1];
    s.read_exact(&mut b)?;
    let us = t0.elapsed().as_micros() as u64;
    Ok(us.max(1))
}

fn rtt_once(s: &mut TcpStream, buf: &mut [u8]) -> io::Result<u64> {
    let t0 = Instant::now();
    s.write_all(buf)?;
    s.read_exact(buf)?;
    Ok((t0.elapsed().as_micros() as u64).max(1))
}

fn latency_stream(addr: SocketAddr) -> io::Result<TcpStream> {
    let mut s = TcpStream::connect(addr)?;
    s.set_nodelay(true)?;
    let mut b = [0u8; 1];
    s.read_exact(&mut b)?;
    Ok(s)
}

#[allow(clippy::too_many_arguments)]
fn latency_client(
    host: &str,
    port: u16,
    native_port: u16,
    metric: &str,
    reps: usize,
    warmup: usize,
    payload_len: usize,
    run_id: &str,
    out: &PathBuf,
) -> io::Result<()> {
    let overlay = resolve(host, port)?;
    let native: SocketAddr = ([127, 0, 0, 1], native_port).into();
    // wait for the server, outside the measurement
    drop(connect_retry(host, port, Duration::from_secs(10))?);
    let mut rows = String::new();
    match metric {
        "ttfb" => {
            for i in 0..warmup + reps {
                let o = ttfb_once(overlay)?;
                let n = ttfb_once(native)?;
                if i >= warmup {
                    rows.push_str(&format!(
                        "overlay,ttfb,{run_id},{o}\nnative,ttfb,{run_id},{n}\n"
                    ));
                }
            }
        }
        _ => {
            let mut so = latency_stream(overlay)?;
            let mut sn = latency_stream(native)?;
            let mut buf = payload(payload_len, 7);
            for i in 0..warmup + reps {
                let o = rtt_once(&mut so, &mut buf)?;
                let n = rtt_once(&mut sn, &mut buf)?;
                if i >= warmup {
                    rows.push_str(&format!(
                        "overlay,rtt,{run_id},{o}\nnative,rtt,{run_id},{n}\n"
                    ));
                }
            }
        }
    }
    std::fs::write(out, rows)
}

/// Reads the 4-byte tag a [`tagger`] connection carries and acknowledges it.
fn take_tag(mut s: TcpStream, who: &str) {
    let mut b = [0u8; 4];
    match s.read_exact(&mut b) {
        Ok(()) => {
            let id = u32::from_be_bytes(b);
            println!("got {id} {who}");
            let _ = s.write_all(&b);
        }
        Err(e) => println!("untagged {who} {e}"),
    }
}

fn wildcard_listener(port: u16, reuse_port: bool) -> io::Result<TcpListener> {
    unsafe {
        let fd = libc::socket(libc::AF_INET, libc::SOCK_STREAM | libc::SOCK_CLOEXEC, 0);
        if fd < 0 {
            return Err(io::Error::last_os_error());
        }
        let l = TcpListener::from_raw_fd(fd);
        if reuse_port {
            let one: libc::c_int = 1;
            let rc = libc::setsockopt(
                fd,
                libc::SOL_SOCKET,
                libc::SO_REUSEPORT,
                &one as *const libc::c_int as *const libc::c_void,
                std::mem::size_of::<libc::c_int>() as u32,
            );
            if rc != 0 {
                return Err(io::Error::last_os_error());
            }
        }
        let sin = libc::sockaddr_in {
            sin_family: libc::AF_INET as libc::sa_family_t,
            sin_port: port.to_be(),
            sin_addr: libc::in_addr { s_addr: 0 },
            sin_zero: [0; 8],
        };
        if libc::bind(
            fd,
            &sin as *const libc::sockaddr_in as *const libc::sockaddr,
            std::mem::size_of_val(&sin) as u32,
        ) != 0
        {
            return Err(io::Error::last_os_error());
        }
        if libc::listen(fd, 128) != 0 {
            return Err(io::Error::last_os_error());
        }
        Ok(l)
    }
}

fn shared_listener(port: u16) -> io::Result<()> {
    let l = TcpListener::bind(("0.0.0.0", port))?;
    let pid = unsafe { libc::fork() };
    if pid < 0 {
        return Err(io::Error::last_os_error());
    }
    let who = if pid == 0 {
        unsafe { libc::prctl(libc::PR_SET_PDEATHSIG, libc::SIGKILL) };
        "child"
    } else {
        println!("listening {} forked {pid}", l.local_addr()?);
        "parent"
    };
    loop {
        let (s, _) = l.accept()?;
        take_tag(s, &format!("{who}:{}", std::process::id()));
    }
}

fn reuse_pair(port: u16) -> io::Result<()> {
    let a = wildcard_listener(port, true)?;
    let b = wildcard_listener(port, true)?;
    println!("listening twice on port {port}");
    let t = thread::spawn(move || loop {
        if let Ok((s, _)) = b.accept() {
            take_tag(s, "socket-b");
        }
    });
    loop {
        let (s, _) = a.accept()?;
        take_tag(s, "socket-a");
        if t.is_finished() {
            return Ok(());
        }
    }
}

fn poll_accepter(port: u16) -> io::Result<()> {
    let l = TcpListener::bind(("0.0.0.0", port))?;
    l.set_nonblocking(true)?;
    println!("listening {} nonblocking", l.local_addr()?);
    let mut wakeups = 0u64;
    loop {
        let mut pfd = libc::pollfd {
            fd: l.as_raw_fd(),
            events: libc::POLLIN,
            revents: 0,
        };
        let rc = unsafe { libc::poll(&mut pfd, 1, -1) };
        if rc < 0 {
            return Err(io::Error::last_os_error());
        }
        wakeups += 1;
        loop {
            match l.accept() {
                Ok((s, _)) => {
                    s.set_nonblocking(false)?;
                    take_tag(s, &format!("poller wakeup={wakeups}"));
                }
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => break,
                Err(e) => return Err(e),
            }
        }
    }
}

fn tag_range(addr: SocketAddr, ids: std::ops::Range<u32>) -> io::Result<bool> {
    let mut ok = true;
    for id in ids {
        let mut s = TcpStream::connect(addr)?;
        s.write_all(&id.to_be_bytes())?;
        let mut b = [0u8; 4];
        s.read_exact(&mut b)?;
        if u32::from_be_bytes(b) != id {
            println!("bad ack for {id}");
            ok = false;
        }
    }
    Ok(ok)
}

fn tagger(host: &str, port: u16, first: u32, count: u32, threads: u32) -> io::Result<bool> {
    let addr = resolve(host, port)?;
    let handles: Vec<_> = (0..threads)
        .map(|t| {
            let from = first + t * count;
            thread::spawn(move || tag_range(addr, from..from + count))
        })
        .collect();
    let mut ok = true;
    for h in handles {
        ok &= h.join().expect("tagger thread")?;
    }
    println!("sent {} tags from {first}", count * threads);
    Ok(ok)
}

fn connect_probe(host: &str, port: u16) -> io::Result<()> {
    let addr = resolve(host, port)?;
    let t0 = Instant::now();
    let r = TcpStream::connect(addr);
    let ms = t0.elapsed().as_millis();
    match r {
        Ok(_) => println!("connected {ms}"),
        Err(e) => println!("error {} {ms}", e.raw_os_error().unwrap_or(0)),
    }
    Ok(())
}

fn quorum_replica(port: u16, service_us: u64) -> io::Result<()> {
    let l = TcpListener::bind(("0.0.0.0", port))?;
    println!("replica listening {}", l.local_addr()?);
    let counter = Arc::new(AtomicU64::new(0));
    for s in l.incoming() {
        let Ok(mut s) = s else { continue };
        let counter = counter.clone();
        thread::spawn(move || {
            let _ = s.set_nodelay(true);
            let mut req = [0u8; 8];
            while s.read_exact(&mut req).is_ok() {
                thread::sleep(Duration::from_micros(service_us));
                let v = counter.fetch_add(1, Ordering::Relaxed);
                if s.write_all(&v.to_be_bytes()).is_err() {
                    break;
                }
            }
        });
    }
    Ok(())
}

fn quorum_client(
    prefix: &str,
    port: u16,
    duration_ms: u64,
    bucket_ms: u64,
    out: &PathBuf,
) -> io::Result<()> {
    let dir = std::env::var_os("BOXER_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("."));
    let stream = UnixStream::connect(dir.join("coord.sock"))?;
    let start_us = monotonic_us();
    let end_us = start_us + duration_ms * 1000;
    let completions: Arc<Mutex<Vec<u64>>> = Arc::default();
    let events: Arc<Mutex<Vec<(u64, String)>>> = Arc::default();
    let workers: Arc<Mutex<HashMap<String, thread::JoinHandle<()>>>> = Arc::default();

    {
        let (completions, events, workers, prefix) = (
            completions.clone(),
            events.clone(),
            workers.clone(),
            prefix.to_string(),
        );
        thread::spawn(move || {
            for line in BufReader::new(stream).lines() {
                let Ok(line) = line else { return };
                let f: Vec<&str> = line.split_whitespace().collect();
                let [_, kind, _id, _ip, name] = f[..] else {
                    continue;
                };
                events
                    .lock()
                    .unwrap()
                    .push((monotonic_us(), format!("{kind} {name}")));
                if kind != "join" || !name.starts_with(&prefix) {
                    continue;
                }
                let name = name.to_string();
                let c = completions.clone();
                let h = thread::spawn({
                    let name = name.clone();
                    move || {
                        let Ok(mut s) = connect_retry(&name, port, Duration::from_secs(5)) else {
                            return;
                        };
                        let _ = s.set_nodelay(true);
                        let mut b = [0u8; 8];
                        loop {
                            if s.write_all(&[0u8; 8]).is_err() || s.read_exact(&mut b).is_err() {
                                return;
                            }
                            let now = monotonic_us();
                            if now >= end_us {
                                return;
                            }
                            c.lock().unwrap().push(now);
                        }
                    }
                });
                workers.lock().unwrap().insert(name, h);
            }
        });
    }

    thread::sleep(Duration::from_millis(duration_ms));
    let done = completions.lock().unwrap().clone();
    let buckets = duration_ms.div_ceil(bucket_ms) as usize;
    let mut counts = vec![0u64; buckets];
    for t in done {
        let i = ((t - start_us) / 1000 / bucket_ms) as usize;
        if i < buckets {
            counts[i] += 1;
        }
    }
    let mut text = String::from("kind,t_us,value\n");
    for (i, c) in counts.iter().enumerate() {
        text.push_str(&format!(
            "bucket,{},{c}\n",
            start_us + i as u64 * bucket_ms * 1000
        ));
    }
    for (t, e) in events.lock().unwrap().iter() {
        text.push_str(&format!("event,{t},{e}\n"));
    }
    std::fs::write(out, text)?;
    println!("timeline written with {buckets} buckets");
    Ok(())
}

fn inspect(names: &[String], files: &[PathBuf]) -> io::Result<()> {
    let mut u: libc::utsname = unsafe { std::mem::zeroed() };
    unsafe { libc::uname(&mut u) };
    let node = unsafe { std::ffi::CStr::from_ptr(u.nodename.as_ptr()) };
    println!("nodename {}", node.to_string_lossy());
    for n in names {
        match resolve(n, 0) {
            Ok(a) => println!("resolve {n} {}", a.ip()),
            Err(e) => println!("resolve {n} error {e}"),
        }
    }
    for f in files {
        match std::fs::read_to_string(f) {
            Ok(t) => println!("file {} {}", f.display(), t.trim_end()),
            Err(e) => println!("file {} error {e}", f.display()),
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let r = match cli.cmd {
        Cmd::EchoServer { port, conns } => echo_server(port, conns),
        Cmd::EchoClient {
            host,
            port,
            bytes,
            seed,
        } => echo_client(&host, port, bytes, seed).and_then(|ok| {
            if ok {
                Ok(())
            } else {
                Err(io::Error::new(io::ErrorKind::InvalidData, "echo mismatch"))
            }
        }),
        Cmd::LatencyServer { port, native_port } => latency_server(port, native_port),
        Cmd::LatencyClient {
            host,
            port,
            native_port,
            metric,
            reps,
            warmup,
            payload,
            run_id,
            out,
        } => latency_client(
            &host,
            port,
            native_port,
            &metric,
            reps,
            warmup,
            payload,
            &run_id,
            &out,
        ),
        Cmd::SharedListener { port } => shared_listener(port),
        Cmd::ReusePair { port } => reuse_pair(port),
        Cmd::PollAccepter { port } => poll_accepter(port),
        Cmd::Tagger {
            host,
            port,
            first,
            count,
            threads,
        } => tagger(&host, port, first, count, threads).and_then(|ok| {
            if ok {
                Ok(())
            } else {
                Err(io::Error::new(
                    io::ErrorKind::InvalidData,
                    "bad acknowledgement",
                ))
            }
        }),
        Cmd::ConnectProbe { host, port } => connect_probe(&host, port),
        Cmd::QuorumReplica { port, service_us } => quorum_replica(port, service_us),
        Cmd::QuorumClient {
            prefix,
            port,
            duration_ms,
            bucket_ms,
            out,
        } => quorum_client(&prefix, port, duration_ms, bucket_ms, &out),
        Cmd::Inspect { resolve, cat } => inspect(&resolve, &cat),
    };
    if let Err(e) = r {
        eprintln!("boxer-guest: {e}");
        std::process::exit(1);
    }
}
