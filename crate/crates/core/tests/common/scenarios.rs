//! Multi-process scenarios shared by the integration tests and the
//! acceptance runner. Each panics on failure.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use boxer::bench::cluster::{Cluster, NodeProc, Spawn};
use boxer::coord::files::{parse_hosts, HOSTS_FILE};
use boxer::supervisor::read_debug;

use super::{eventually, finish, tools};

pub fn echo_by_registered_name() {
    let t0 = Instant::now();
    let t = tools();
    let mut c = Cluster::start_with(
        t.clone(),
        Spawn::named("server").guest(&t, &["echo-server", "--port", "7000"]),
    )
    .unwrap();
    let client = c
        .join(Spawn::named("client").wait_for(&["server"]).guest(
            &t,
            &[
                "echo-client",
                "--host",
                "server",
                "--port",
                "7000",
                "--bytes",
                "1048576",
                "--seed",
                "42",
            ],
        ))
        .unwrap();
    let out = finish(client, Duration::from_secs(10));
    assert!(out.contains("match 1048576 bytes"), "{out}");
    assert!(
        t0.elapsed() < Duration::from_secs(10),
        "took {:?}",
        t0.elapsed()
    );
}

pub fn membership_files_follow_joins_and_leaves() {
    let mut c = Cluster::start(tools()).unwrap();
    let hosts = c.seed.dir.join(HOSTS_FILE);
    let names = || parse_hosts(&std::fs::read_to_string(&hosts).unwrap_or_default());
    let has = |n: &str| {
        names()
            .iter()
            .any(|(_, name, _)| name.as_deref() == Some(n))
    };

    let mut m = c.join(Spawn::named("member")).unwrap();
    assert!(
        eventually(Duration::from_secs(2), || has("member")),
        "join not reflected"
    );
    // the member's own copy lists the seed too
    let own = parse_hosts(&std::fs::read_to_string(m.dir.join(HOSTS_FILE)).unwrap());
    assert!(own.iter().any(|(_, _, id)| *id == 0));

    m.terminate();
    assert!(
        eventually(Duration::from_secs(2), || !has("member")),
        "leave not reflected"
    );

    let mut k = c.join(Spawn::named("killed")).unwrap();
    assert!(eventually(Duration::from_secs(2), || has("killed")));
    k.kill();
    assert!(
        eventually(Duration::from_secs(2), || !has("killed")),
        "crash not reflected"
    );
}

pub fn connect_to_unlistened_address_is_refused_fast() {
    let t = tools();
    let mut c = Cluster::start_with(t.clone(), Spawn::named("quiet")).unwrap();
    let n = c
        .join(
            Spawn::named("prober")
                .guest(&t, &["connect-probe", "--host", "quiet", "--port", "4444"]),
        )
        .unwrap();
    let out = finish(n, Duration::from_secs(10));
    let fields: Vec<&str> = out.split_whitespace().collect();
    assert_eq!(
        fields[..2],
        ["error", &libc::ECONNREFUSED.to_string()][..],
        "{out}"
    );
    let ms: u64 = fields[2].parse().unwrap();
    assert!(ms < 1000, "refusal took {ms} ms");
}

/// `got <id> <who...>` lines from a server guest's log, as id -> who.
fn deliveries(server: &NodeProc) -> BTreeMap<u32, Vec<String>> {
    let mut m: BTreeMap<u32, Vec<String>> = BTreeMap::new();
    for l in server.guest_stdout().lines() {
        let mut f = l.splitn(3, ' ');
        if f.next() == Some("got") {
            let id = f.next().unwrap().parse().unwrap();
            m.entry(id)
                .or_default()
                .push(f.next().unwrap_or("").to_string());
        }
    }
    m
}

/// Starts `server_args` on one node and a tagger on another; returns the
/// server node once every id has been acknowledged.
fn run_tags(server_args: &[&str], threads: u32, count: u32) -> (Cluster, NodeProc) {
    let t = tools();
    let mut c = Cluster::start(t.clone()).unwrap();
    let server = c.join(Spawn::named("srv").guest(&t, server_args)).unwrap();
    let tagger = c
        .join(Spawn::named("tagger").wait_for(&["srv"]).guest(
            &t,
            &[
                "tagger",
                "--host",
                "srv",
                "--port",
                "8080",
                "--count",
                &count.to_string(),
                "--threads",
                &threads.to_string(),
            ],
        ))
        .unwrap();
    finish(tagger, Duration::from_secs(60));
    let total = (threads * count) as usize;
    assert!(
        eventually(Duration::from_secs(5), || deliveries(&server).len()
            == total),
        "lost deliveries"
    );
    (c, server)
}

fn assert_exactly_once(d: &BTreeMap<u32, Vec<String>>, total: u32) {
    assert_eq!(d.len() as u32, total, "lost deliveries");
    let dups: Vec<_> = d.iter().filter(|(_, w)| w.len() != 1).collect();
    assert!(dups.is_empty(), "duplicated deliveries: {dups:?}");
    assert_eq!(
        d.keys().copied().collect::<Vec<_>>(),
        (0..total).collect::<Vec<_>>()
    );
}

pub fn shared_listener_both_accept() {
    let (_c, server) = run_tags(&["shared-listener", "--port", "8080"], 4, 10);
    let d = deliveries(&server);
    assert_exactly_once(&d, 40);
    let parent = d.values().filter(|w| w[0].starts_with("parent")).count();
    let child = d.values().filter(|w| w[0].starts_with("child")).count();
    assert!(parent > 0 && child > 0, "parent {parent} child {child}");
}

pub fn two_sockets_share_one_queue() {
    let (_c, server) = run_tags(&["reuse-pair", "--port", "8080"], 4, 10);
    assert_exactly_once(&deliveries(&server), 40);
    let dbg = read_debug(&server.dir).unwrap();
    let queues = dbg["table"]["queues"].as_array().unwrap();
    let on_port: Vec<_> = queues
        .iter()
        .filter(|q| q["addr"].as_str().unwrap().ends_with(":8080"))
        .collect();
    assert_eq!(on_port.len(), 1, "{queues:?}");
    assert_eq!(on_port[0]["listeners"].as_array().unwrap().len(), 2);
}

pub fn polling_accepter_is_woken_invisibly() {
    let (_c, server) = run_tags(&["poll-accepter", "--port", "8080"], 2, 20);
    assert_exactly_once(&deliveries(&server), 40);
    let out = server.guest_stdout();
    assert!(
        !out.contains("untagged"),
        "a signal connection reached the guest:\n{out}"
    );
    let dbg = read_debug(&server.dir).unwrap();
    assert!(
        dbg["table"]["counters"]["signals_injected"]
            .as_u64()
            .unwrap()
            > 0
    );
}

pub fn stress_hundred_by_hundred() {
    let (_c, server) = run_tags(&["shared-listener", "--port", "8080"], 100, 100);
    assert_exactly_once(&deliveries(&server), 10_000);
    let dbg = read_debug(&server.dir).unwrap();
    assert_eq!(
        dbg["table"]["counters"]["delivered"].as_u64(),
        Some(10_000),
        "{}",
        dbg["table"]
    );
}
