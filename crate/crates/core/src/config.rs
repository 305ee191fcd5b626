//! Node and guest configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::net::{Ipv4Addr, SocketAddrV4};
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Duration;

use boxer_proto::{NodeId, OverlayCidr};
use thiserror::Error;

/// How a node obtains byte streams to peers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TransportPolicy {
    #[default]
    Direct,
    HolePunch,
    ProxyVia(NodeId),
}

#[derive(Debug, Error)]
#[error("unknown transport `{0}` (expected direct, punch or proxy:<node-id>)")]
pub struct TransportParseError(String);

impl FromStr for TransportPolicy {
    type Err = TransportParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "direct" => Ok(TransportPolicy::Direct),
            "punch" => Ok(TransportPolicy::HolePunch),
            "proxy" => Ok(TransportPolicy::ProxyVia(NodeId::SEED)),
            _ => s
                .strip_prefix("proxy:")
                .and_then(|id| id.parse().ok())
                .map(|id| TransportPolicy::ProxyVia(NodeId(id)))
                .ok_or_else(|| TransportParseError(s.to_string())),
        }
    }
}

impl fmt::Display for TransportPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TransportPolicy::Direct => f.write_str("direct"),
            TransportPolicy::HolePunch => f.write_str("punch"),
            TransportPolicy::ProxyVia(id) => write!(f, "proxy:{}", id.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SeedMode {
    BeSeed,
    Join(SocketAddrV4),
}

/// Start condition for guests: at least `count` live members and every
/// listed name registered.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Barrier {
    pub count: usize,
    pub names: Vec<String>,
}

impl Barrier {
    pub fn is_trivial(&self) -> bool {
        self.count <= 1 && self.names.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct NodeConfig {
    pub seed: SeedMode,
    pub name: Option<String>,
    pub cidr: OverlayCidr,
    pub dir: PathBuf,
    /// Local address for the supervisor's TCP endpoint; port 0 picks one.
    pub listen: SocketAddrV4,
    pub transport: TransportPolicy,
    pub remap_file: Option<PathBuf>,
    pub timing: Timing,
}

impl NodeConfig {
    pub fn seed(dir: impl Into<PathBuf>) -> Self {
        NodeConfig {
            seed: SeedMode::BeSeed,
            name: None,
            cidr: OverlayCidr::DEFAULT,
            dir: dir.into(),
            listen: SocketAddrV4::new(Ipv4Addr::LOCALHOST, 0),
            transport: TransportPolicy::Direct,
            remap_file: None,
            timing: Timing::default(),
        }
    }

    pub fn member(dir: impl Into<PathBuf>, seed: SocketAddrV4) -> Self {
        NodeConfig {
            seed: SeedMode::Join(seed),
            ..Self::seed(dir)
        }
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }

    pub fn with_transport(mut self, t: TransportPolicy) -> Self {
        self.transport = t;
        self
    }
}

/// Every timer the supervisor runs on.
#[derive(Debug, Clone, Copy)]
pub struct Timing {
    pub connect_timeout: Duration,
    pub nonblocking_connect: Duration,
    pub punch_round: Duration,
    pub punch_rounds: u32,
    pub heartbeat: Duration,
    pub heartbeat_miss: Duration,
    pub refetch_after: Duration,
    pub join_attempts: u32,
    pub join_backoff: Duration,
    pub join_backoff_cap: Duration,
    pub barrier_timeout: Duration,
    pub reap_every: Duration,
}

impl Default for Timing {
    fn default() -> Self {
        Timing {
            connect_timeout: Duration::from_secs(3),
            nonblocking_connect: Duration::from_millis(500),
            punch_round: Duration::from_secs(1),
            punch_rounds: 3,
            heartbeat: Duration::from_millis(500),
            heartbeat_miss: Duration::from_secs(2),
            refetch_after: Duration::from_secs(1),
            join_attempts: 5,
            join_backoff: Duration::from_millis(100),
            join_backoff_cap: Duration::from_secs(5),
            barrier_timeout: Duration::from_secs(60),
            reap_every: Duration::from_secs(2),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct GuestSpec {
    pub argv: Vec<String>,
    pub env: BTreeMap<String, String>,
    pub cwd: Option<PathBuf>,
    pub barrier: Barrier,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GuestSpecError {
    #[error("empty guest command")]
    EmptyCommand,
    #[error("barrier name `{0}` listed twice")]
    DuplicateName(String),
}

impl GuestSpec {
    pub fn new<S: Into<String>>(argv: impl IntoIterator<Item = S>) -> Self {
        GuestSpec {
            argv: argv.into_iter().map(Into::into).collect(),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), GuestSpecError> {
        if self.argv.first().is_none_or(|c| c.is_empty()) {
            return Err(GuestSpecError::EmptyCommand);
        }
        let mut seen = std::collections::HashSet::new();
        for n in &self.barrier.names {
            if !seen.insert(n) {
                return Err(GuestSpecError::DuplicateName(n.clone()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transport_round_trips() {
        for s in ["direct", "punch", "proxy:3"] {
            assert_eq!(s.parse::<TransportPolicy>().unwrap().to_string(), s);
        }
        assert_eq!(
            "proxy".parse::<TransportPolicy>().unwrap(),
            TransportPolicy::ProxyVia(NodeId::SEED)
        );
        assert!("carrier-pigeon".parse::<TransportPolicy>().is_err());
    }

    #[test]
    fn guest_spec_validation() {
        assert_eq!(
            GuestSpec::new(Vec::<String>::new()).validate(),
            Err(GuestSpecError::EmptyCommand)
        );
        let mut g = GuestSpec::new(["echo"]);
        g.barrier.names = vec!["a".into(), "a".into()];
        assert_eq!(g.validate(), Err(GuestSpecError::DuplicateName("a".into())));
    }
}
