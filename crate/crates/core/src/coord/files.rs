//! Membership artifacts guests read from the base directory.

use std::io::{self, Write};
use std::path::Path;

use boxer_proto::NodeId;

use super::membership::MembershipSet;

pub const HOSTS_FILE: &str = "hosts";
pub const SELF_FILE: &str = "self";

/// Replaces `path` with `contents` so readers never see a partial file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> io::Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_data()?;
    }
    std::fs::rename(&tmp, path)
}

pub fn write_membership(dir: &Path, me: NodeId, set: &MembershipSet) -> io::Result<()> {
    write_atomic(&dir.join(HOSTS_FILE), set.hosts_file().as_bytes())?;
    write_atomic(&dir.join(SELF_FILE), format!("{}\n", me.0).as_bytes())
}

/// Parses a hosts file back into `(ip, name, id)` rows.
pub fn parse_hosts(text: &str) -> Vec<(String, Option<String>, u64)> {
    text.lines()
        .filter_map(|l| {
            let mut it = l.split_whitespace();
            let ip = it.next()?.to_string();
            let name = it.next()?;
            let id = it.next()?.parse().ok()?;
            Some((ip, (name != "-").then(|| name.to_string()), id))
        })
        .collect()
}
