//! Coordination: seed-assigned identity, name resolution and membership
//! propagation.

pub mod files;
pub mod membership;
pub mod registry;

pub use membership::{Applied, Change, ChangeKind, Follower, MembershipSet};
pub use registry::Registry;
