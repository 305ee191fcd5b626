//! Guest-visible socket semantics over two tables: inode-keyed socket
//! records and listen-address-keyed connection queues.
//!
//! The table is generic over the connection type `C` and the parked-accept
//! handle `W`, so the same state machine runs under the supervisor (real
//! streams, oneshot senders) and in tests (plain ids, channels).

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::net::{Ipv4Addr, SocketAddrV4};
use std::ops::RangeInclusive;

use boxer_proto::{Inode, OverlayAddr, Status};
use serde::Serialize;

/// Ready connections a queue holds before refusing more.
pub const QUEUE_CAP: usize = 128;

/// Ports handed out for wildcard-port binds and unbound connects.
pub const EPHEMERAL_PORTS: RangeInclusive<u16> = 32768..=60999;

/// A parked blocking accept.
pub trait Waiter<C> {
    /// Hands `conn` over, giving it back if the waiter has gone away.
    fn offer(self, conn: C) -> Result<(), C>;
    fn cancel(self, status: Status);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SocketState {
    Created,
    Bound,
    Listening,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct QueueId(pub u64);

pub struct SocketRecord<W> {
    pub inode: Inode,
    pub owners: BTreeSet<u32>,
    pub state: SocketState,
    pub bound: Option<OverlayAddr>,
    /// Real loopback address of the guest's socket, where signal connections
    /// are aimed.
    pub native: Option<SocketAddrV4>,
    pub reuse_port: bool,
    pub queue: Option<QueueId>,
    waiters: VecDeque<(u64, W)>,
    signal_outstanding: bool,
}

impl<W> SocketRecord<W> {
    fn new(inode: Inode, pid: u32) -> Self {
        SocketRecord {
            inode,
            owners: BTreeSet::from([pid]),
            state: SocketState::Created,
            bound: None,
            native: None,
            reuse_port: false,
            queue: None,
            waiters: VecDeque::new(),
            signal_outstanding: false,
        }
    }

    pub fn parked(&self) -> usize {
        self.waiters.len()
    }
}

pub struct ConnectionQueue<C> {
    pub id: QueueId,
    pub addr: OverlayAddr,
    ready: VecDeque<C>,
    listeners: BTreeSet<Inode>,
}

impl<C> ConnectionQueue<C> {
    pub fn len(&self) -> usize {
        self.ready.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ready.is_empty()
    }

    pub fn listeners(&self) -> impl Iterator<Item = Inode> + '_ {
        self.listeners.iter().copied()
    }
}

#[derive(Debug)]
pub enum AcceptOutcome<C> {
    Ready(C),
    Parked,
    WouldBlock,
    Failed(Status),
}

#[derive(Debug)]
pub enum Delivery<C> {
    /// Given straight to a parked accept.
    Handed,
    Queued,
    Refused(C),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Counters {
    pub delivered: u64,
    pub handed_off: u64,
    pub accepted_from_queue: u64,
    pub refused: u64,
    pub signals_injected: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct QueueStats {
    pub id: QueueId,
    pub addr: String,
    pub len: usize,
    pub listeners: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TableStats {
    pub sockets: usize,
    pub queues: Vec<QueueStats>,
    pub parked: usize,
    pub counters: Counters,
}

pub struct SocketTable<C, W> {
    local_ip: Ipv4Addr,
    records: HashMap<Inode, SocketRecord<W>>,
    queues: HashMap<OverlayAddr, ConnectionQueue<C>>,
    next_queue: u64,
    next_waiter: u64,
    next_port: u16,
    signals: Vec<SocketAddrV4>,
    counters: Counters,
}

impl<C, W: Waiter<C>> SocketTable<C, W> {
    pub fn new(local_ip: Ipv4Addr) -> Self {
        SocketTable {
            local_ip,
            records: HashMap::new(),
            queues: HashMap::new(),
            next_queue: 1,
            next_waiter: 0,
            next_port: *EPHEMERAL_PORTS.start(),
            signals: Vec::new(),
            counters: Counters::default(),
        }
    }

    pub fn local_ip(&self) -> Ipv4Addr {
        self.local_ip
    }

    pub fn record(&self, inode: Inode) -> Option<&SocketRecord<W>> {
        self.records.get(&inode)
    }

    pub fn queue(&self, addr: OverlayAddr) -> Option<&ConnectionQueue<C>> {
        self.queues.get(&addr)
    }

    fn known(&mut self, inode: Inode, pid: u32) -> Result<&mut SocketRecord<W>, Status> {
        let r = self.records.get_mut(&inode).ok_or(Status::InvalidSocket)?;
        r.owners.insert(pid);
        Ok(r)
    }

    /// A fresh registration for an inode already in the table means the old
    /// socket is gone and the kernel reused its number.
    pub fn register(&mut self, inode: Inode, pid: u32) {
        if self.records.contains_key(&inode) {
            self.close(inode);
        }
        self.records.insert(inode, SocketRecord::new(inode, pid));
    }

    fn port_taken(&self, port: u16) -> bool {
        self.records
            .values()
            .any(|r| r.bound.is_some_and(|b| b.port == port))
    }

    fn allocate_port(&mut self) -> Option<u16> {
        let span = EPHEMERAL_PORTS.len();
        for _ in 0..span {
            let p = self.next_port;
            self.next_port = if p == *EPHEMERAL_PORTS.end() {
                *EPHEMERAL_PORTS.start()
            } else {
                p + 1
            };
            if !self.port_taken(p) {
                return Some(p);
            }
        }
        None
    }

    fn listener_conflict(&self, inode: Inode, addr: OverlayAddr, reuse_port: bool) -> bool {
        self.records.values().any(|r| {
            r.inode != inode
                && r.state == SocketState::Listening
                && r.bound == Some(addr)
                && !(reuse_port && r.reuse_port)
        })
    }

    pub fn bind(
        &mut self,
        inode: Inode,
        pid: u32,
        addr: OverlayAddr,
        native: Option<SocketAddrV4>,
        reuse_port: bool,
    ) -> Result<OverlayAddr, Status> {
        let state = self.known(inode, pid)?.state;
        if state != SocketState::Created {
            return Err(Status::InvalidState);
        }
        let ip = if addr.ip.is_unspecified() {
            self.local_ip
        } else {
            addr.ip
        };
        if ip != self.local_ip {
            return Err(Status::InvalidAddress);
        }
        let port = if addr.port == 0 {
            self.allocate_port().ok_or(Status::AddrInUse)?
        } else {
            addr.port
        };
        let addr = OverlayAddr::new(ip, port);
        if self.listener_conflict(inode, addr, reuse_port) {
            return Err(Status::AddrInUse);
        }
        let r = self.records.get_mut(&inode).expect("checked above");
        r.state = SocketState::Bound;
        r.bound = Some(addr);
        r.native = native;
        r.reuse_port = reuse_port;
        Ok(addr)
    }

    pub fn listen(&mut self, inode: Inode, pid: u32) -> Result<QueueId, Status> {
        let r = self.known(inode, pid)?;
        match r.state {
            SocketState::Created => return Err(Status::InvalidState),
            SocketState::Listening => return Ok(r.queue.expect("listening implies queue")),
            SocketState::Bound => {}
        }
        let (addr, reuse) = (r.bound.expect("bound implies address"), r.reuse_port);
        if self.listener_conflict(inode, addr, reuse) {
            return Err(Status::AddrInUse);
        }
        let next_queue = &mut self.next_queue;
        let q = self.queues.entry(addr).or_insert_with(|| {
            let id = QueueId(*next_queue);
            *next_queue += 1;
            ConnectionQueue {
                id,
                addr,
                ready: VecDeque::new(),
                listeners: BTreeSet::new(),
            }
        });
        q.listeners.insert(inode);
        let id = q.id;
        let r = self.records.get_mut(&inode).expect("checked above");
        r.state = SocketState::Listening;
        r.queue = Some(id);
        Ok(id)
    }

    fn signal(&mut self, inode: Inode) {
        if let Some(r) = self.records.get_mut(&inode) {
            if let (false, Some(native)) = (r.signal_outstanding, r.native) {
                r.signal_outstanding = true;
                self.signals.push(native);
                self.counters.signals_injected += 1;
            }
        }
    }

    /// `park` is the waiter to keep when the accept blocks; `None` makes an
    /// empty queue answer would-block.
    pub fn accept(&mut self, inode: Inode, pid: u32, park: Option<W>) -> AcceptOutcome<C> {
        let r = match self.known(inode, pid) {
            Ok(r) => r,
            Err(s) => return AcceptOutcome::Failed(s),
        };
        if r.state != SocketState::Listening {
            return AcceptOutcome::Failed(Status::InvalidState);
        }
        r.signal_outstanding = false;
        let addr = r.bound.expect("listening implies bound");
        let q = self.queues.get_mut(&addr).expect("listening implies queue");
        if let Some(c) = q.ready.pop_front() {
            self.counters.accepted_from_queue += 1;
            if !q.ready.is_empty() {
                // keep a polling guest's socket readable while work remains
                self.signal(inode);
            }
            return AcceptOutcome::Ready(c);
        }
        match park {
            Some(w) => {
                let seq = self.next_waiter;
                self.next_waiter += 1;
                self.records
                    .get_mut(&inode)
                    .expect("checked above")
                    .waiters
                    .push_back((seq, w));
                AcceptOutcome::Parked
            }
            None => AcceptOutcome::WouldBlock,
        }
    }

    /// Whether a connection for `dest` would currently be taken.
    pub fn would_admit(&self, dest: OverlayAddr) -> bool {
        self.queues
            .get(&dest)
            .is_some_and(|q| q.ready.len() < QUEUE_CAP)
    }

    fn oldest_waiter(&mut self, addr: OverlayAddr) -> Option<W> {
        let q = self.queues.get(&addr)?;
        let inode = q
            .listeners
            .iter()
            .filter_map(|i| {
                self.records
                    .get(i)
                    .and_then(|r| r.waiters.front().map(|(s, _)| (*s, *i)))
            })
            .min()?
            .1;
        self.records
            .get_mut(&inode)?
            .waiters
            .pop_front()
            .map(|(_, w)| w)
    }

    pub fn deliver(&mut self, dest: OverlayAddr, conn: C) -> Delivery<C> {
        if !self.would_admit(dest) {
            self.counters.refused += 1;
            return Delivery::Refused(conn);
        }
        self.counters.delivered += 1;
        let mut conn = conn;
        while let Some(w) = self.oldest_waiter(dest) {
            match w.offer(conn) {
                Ok(()) => {
                    self.counters.handed_off += 1;
                    return Delivery::Handed;
                }
                Err(back) => conn = back,
            }
        }
        let q = self.queues.get_mut(&dest).expect("admitted above");
        q.ready.push_back(conn);
        let listeners: Vec<Inode> = q.listeners.iter().copied().collect();
        for i in listeners {
            self.signal(i);
        }
        Delivery::Queued
    }

    /// Puts back a connection whose accept could not be completed, ahead of
    /// later arrivals.
    pub fn requeue(&mut self, dest: OverlayAddr, conn: C) -> Result<(), C> {
        let mut conn = conn;
        while let Some(w) = self.oldest_waiter(dest) {
            match w.offer(conn) {
                Ok(()) => return Ok(()),
                Err(back) => conn = back,
            }
        }
        match self.queues.get_mut(&dest) {
            Some(q) => {
                q.ready.push_front(conn);
                let listeners: Vec<Inode> = q.listeners.iter().copied().collect();
                for i in listeners {
                    self.signal(i);
                }
                Ok(())
            }
            None => Err(conn),
        }
    }

    /// Forgets a socket. Parked accepts on it fail with `Closed`; a queue
    /// left without listeners is dropped with its pending connections.
    pub fn close(&mut self, inode: Inode) -> bool {
        let Some(r) = self.records.remove(&inode) else {
            return false;
        };
        for (_, w) in r.waiters {
            w.cancel(Status::Closed);
        }
        if let (SocketState::Listening, Some(addr)) = (r.state, r.bound) {
            if let Some(q) = self.queues.get_mut(&addr) {
                q.listeners.remove(&inode);
                if q.listeners.is_empty() {
                    self.queues.remove(&addr);
                }
            }
        }
        true
    }

    /// Source overlay address for an outbound connection from `inode`.
    pub fn connect_source(&mut self, inode: Inode, pid: u32) -> Result<OverlayAddr, Status> {
        let r = self.known(inode, pid)?;
        match (r.state, r.bound) {
            (SocketState::Listening, _) => Err(Status::InvalidState),
            (_, Some(b)) => Ok(b),
            (_, None) => {
                let port = self.allocate_port().ok_or(Status::AddrInUse)?;
                Ok(OverlayAddr::new(self.local_ip, port))
            }
        }
    }

    /// The guest's descriptor now refers to the connected stream; the
    /// registered socket no longer exists.
    pub fn connected(&mut self, inode: Inode) {
        self.close(inode);
    }

    pub fn sock_name(&mut self, inode: Inode, pid: u32) -> Result<Option<OverlayAddr>, Status> {
        Ok(self.known(inode, pid)?.bound)
    }

    /// Drops records whose every known owner has exited.
    pub fn reap(&mut self, alive: impl Fn(u32) -> bool) -> Vec<Inode> {
        let dead: Vec<Inode> = self
            .records
            .values()
            .filter(|r| !r.owners.iter().any(|p| alive(*p)))
            .map(|r| r.inode)
            .collect();
        for i in &dead {
            self.close(*i);
        }
        dead
    }

    /// Every record with its recorded owner pids.
    pub fn owners(&self) -> Vec<(Inode, BTreeSet<u32>)> {
        self.records
            .values()
            .map(|r| (r.inode, r.owners.clone()))
            .collect()
    }

    /// Replaces a record's owner set with the processes found holding it.
    pub fn adopt(&mut self, inode: Inode, pids: impl IntoIterator<Item = u32>) {
        if let Some(r) = self.records.get_mut(&inode) {
            r.owners = pids.into_iter().collect();
        }
    }

    pub fn inodes(&self) -> Vec<Inode> {
        self.records.keys().copied().collect()
    }

    pub fn take_signals(&mut self) -> Vec<SocketAddrV4> {
        std::mem::take(&mut self.signals)
    }

    pub fn counters(&self) -> Counters {
        self.counters
    }

    pub fn stats(&self) -> TableStats {
        let mut queues: Vec<QueueStats> = self
            .queues
            .values()
            .map(|q| QueueStats {
                id: q.id,
                addr: q.addr.to_string(),
                len: q.ready.len(),
                listeners: q.listeners.iter().map(|i| i.0).collect(),
            })
            .collect();
        queues.sort_by_key(|q| q.id);
        TableStats {
            sockets: self.records.len(),
            queues,
            parked: self.records.values().map(|r| r.waiters.len()).sum(),
            counters: self.counters,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::RefCell;
    use std::rc::Rc;

    /// Records what it was given; `alive = false` models a hung-up guest.
    #[derive(Clone)]
    struct Slot {
        got: Rc<RefCell<Option<Result<u32, Status>>>>,
        alive: bool,
    }

    impl Slot {
        fn new() -> Self {
            Slot {
                got: Rc::default(),
                alive: true,
            }
        }
        fn taken(&self) -> Option<Result<u32, Status>> {
            *self.got.borrow()
        }
    }

    impl Waiter<u32> for Slot {
        fn offer(self, conn: u32) -> Result<(), u32> {
            if !self.alive {
                return Err(conn);
            }
            *self.got.borrow_mut() = Some(Ok(conn));
            Ok(())
        }
        fn cancel(self, status: Status) {
            *self.got.borrow_mut() = Some(Err(status));
        }
    }

    const IP: Ipv4Addr = Ipv4Addr::new(10, 77, 0, 1);

    fn native(p: u16) -> Option<SocketAddrV4> {
        Some(SocketAddrV4::new(Ipv4Addr::new(127, 77, 0, 1), p))
    }

    fn listening(
        t: &mut SocketTable<u32, Slot>,
        inode: u64,
        port: u16,
        reuse: bool,
    ) -> OverlayAddr {
        t.register(Inode(inode), 1);
        let a = t
            .bind(
                Inode(inode),
                1,
                OverlayAddr::new(Ipv4Addr::UNSPECIFIED, port),
                native(inode as u16),
                reuse,
            )
            .unwrap();
        t.listen(Inode(inode), 1).unwrap();
        a
    }

    #[test]
    fn wildcard_bind_takes_local_ip_and_port_zero_is_ephemeral() {
        let mut t: SocketTable<u32, Slot> = SocketTable::new(IP);
        t.register(Inode(1), 1);
        let a = t
            .bind(
                Inode(1),
                1,
                OverlayAddr::new(Ipv4Addr::UNSPECIFIED, 0),
                None,
                false,
            )
            .unwrap();
        assert_eq!(a.ip, IP);
        assert!(EPHEMERAL_PORTS.contains(&a.port));
    }

    #[test]
    fn foreign_ip_is_invalid_address() {
        let mut t: SocketTable<u32, Slot> = SocketTable::new(IP);
        t.register(Inode(1), 1);
        let err = t.bind(
            Inode(1),
            1,
            OverlayAddr::new(Ipv4Addr::new(10, 77, 0, 9), 80),
            None,
            false,
        );
        assert_eq!(err, Err(Status::InvalidAddress));
    }

    #[test]
    fn live_listener_makes_address_in_use() {
        let mut t: SocketTable<u32, Slot> = SocketTable::new(IP);
        let a = listening(&mut t, 1, 8080, false);
        t.register(Inode(2), 2);
        assert_eq!(t.bind(Inode(2), 2, a, None, false), Err(Status::AddrInUse));
    }

    #[test]
    fn shared_address_shares_one_queue() {
        let mut t: SocketTable<u32, Slot> = SocketTable::new(IP);
        let a = listening(&mut t, 1, 8080, true);
        let b = listening(&mut t, 2, 8080, true);
        assert_eq!(a, b);
        assert_eq!(
            t.record(Inode(1)).unwrap().queue,
            t.record(Inode(2)).unwrap().queue
        );
        assert_eq!(t.stats().queues.len(), 1);
    }

    #[test]
    fn listen_needs_bind_and_is_idempotent() {
        let mut t: SocketTable<u32, Slot> = SocketTable::new(IP);
        t.register(Inode(1), 1);
        assert_eq!(t.listen(Inode(1), 1), Err(Status::InvalidState));
        listening(&mut t, 2, 80, false);
        let q = t.record(Inode(2)).unwrap().queue.unwrap();
        assert_eq!(t.listen(Inode(2), 1), Ok(q));
        assert_eq!(t.stats().queues.len(), 1);
    }

    #[test]
    fn parked_waiter_gets_direct_handoff() {
        let mut t: SocketTable<u32, Slot> = SocketTable::new(IP);
        let a = listening(&mut t, 1, 80, false);
        let w = Slot::new();
        assert!(matches!(
            t.accept(Inode(1), 1, Some(w.clone())),
            AcceptOutcome::Parked
        ));
        assert!(matches!(t.deliver(a, 7), Delivery::Handed));
        assert_eq!(w.taken(), Some(Ok(7)));
        assert_eq!(t.queue(a).unwrap().len(), 0);
        assert!(t.take_signals().is_empty());
    }

    #[test]
    fn queued_delivery_injects_one_signal_per_record() {
        let mut t: SocketTable<u32, Slot> = SocketTable::new(IP);
        let a = listening(&mut t, 1, 80, false);
        assert!(matches!(t.deliver(a, 1), Delivery::Queued));
        assert!(matches!(t.deliver(a, 2), Delivery::Queued));
        assert_eq!(t.take_signals(), vec![native(1).unwrap()]);
        // accepting with work left re-arms readiness
        assert!(matches!(
            t.accept(Inode(1), 1, None),
            AcceptOutcome::Ready(1)
        ));
        assert_eq!(t.take_signals().len(), 1);
        assert!(matches!(
            t.accept(Inode(1), 1, None),
            AcceptOutcome::Ready(2)
        ));
        assert!(t.take_signals().is_empty());
        assert!(matches!(
            t.accept(Inode(1), 1, None),
            AcceptOutcome::WouldBlock
        ));
    }

    #[test]
    fn unlistened_address_refuses() {
        let mut t: SocketTable<u32, Slot> = SocketTable::new(IP);
        assert!(matches!(
            t.deliver(OverlayAddr::new(IP, 1), 1),
            Delivery::Refused(1)
        ));
        assert_eq!(t.counters().refused, 1);
    }

    #[test]
    fn full_queue_refuses() {
        let mut t: SocketTable<u32, Slot> = SocketTable::new(IP);
        let a = listening(&mut t, 1, 80, false);
        for i in 0..QUEUE_CAP as u32 {
            assert!(matches!(t.deliver(a, i), Delivery::Queued));
        }
        assert!(matches!(t.deliver(a, 999), Delivery::Refused(999)));
    }

    #[test]
    fn waiters_are_fifo_across_processes() {
        let mut t: SocketTable<u32, Slot> = SocketTable::new(IP);
        let a = listening(&mut t, 1, 80, true);
        listening(&mut t, 2, 80, true);
        let (w1, w2, w3) = (Slot::new(), Slot::new(), Slot::new());
        t.accept(Inode(2), 20, Some(w1.clone()));
        t.accept(Inode(1), 10, Some(w2.clone()));
        t.accept(Inode(2), 21, Some(w3.clone()));
        for c in [100, 101, 102] {
            t.deliver(a, c);
        }
        assert_eq!(
            (w1.taken(), w2.taken(), w3.taken()),
            (Some(Ok(100)), Some(Ok(101)), Some(Ok(102)))
        );
    }

    #[test]
    fn gone_waiter_is_skipped() {
        let mut t: SocketTable<u32, Slot> = SocketTable::new(IP);
        let a = listening(&mut t, 1, 80, false);
        let dead = Slot {
            alive: false,
            ..Slot::new()
        };
        let live = Slot::new();
        t.accept(Inode(1), 1, Some(dead.clone()));
        t.accept(Inode(1), 1, Some(live.clone()));
        assert!(matches!(t.deliver(a, 5), Delivery::Handed));
        assert_eq!((dead.taken(), live.taken()), (None, Some(Ok(5))));
    }

    #[test]
    fn close_cancels_parked_and_drops_orphan_queue() {
        let mut t: SocketTable<u32, Slot> = SocketTable::new(IP);
        let a = listening(&mut t, 1, 80, false);
        let w = Slot::new();
        t.accept(Inode(1), 1, Some(w.clone()));
        assert!(t.close(Inode(1)));
        assert_eq!(w.taken(), Some(Err(Status::Closed)));
        assert!(t.queue(a).is_none());
        assert!(matches!(t.deliver(a, 1), Delivery::Refused(1)));
    }

    #[test]
    fn unknown_inode_is_invalid_socket() {
        let mut t: SocketTable<u32, Slot> = SocketTable::new(IP);
        assert!(matches!(
            t.accept(Inode(9), 1, None),
            AcceptOutcome::Failed(Status::InvalidSocket)
        ));
        assert_eq!(t.listen(Inode(9), 1), Err(Status::InvalidSocket));
    }

    #[test]
    fn reaping_drops_sockets_of_exited_processes() {
        let mut t: SocketTable<u32, Slot> = SocketTable::new(IP);
        listening(&mut t, 1, 80, false);
        t.register(Inode(2), 2);
        assert_eq!(t.reap(|pid| pid == 2), vec![Inode(1)]);
        assert_eq!(t.stats().sockets, 1);
    }
}
