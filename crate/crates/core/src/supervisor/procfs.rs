//! Which processes still hold a socket, from `/proc/<pid>/fd`.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;

use boxer_proto::Inode;

fn socket_inode(link: &std::path::Path) -> Option<u64> {
    let target = fs::read_link(link).ok()?;
    let s = target.to_str()?;
    s.strip_prefix("socket:[")?.strip_suffix(']')?.parse().ok()
}

/// Socket inodes open in `pid`; empty if the process is gone.
pub fn socket_inodes(pid: u32) -> HashSet<u64> {
    let Ok(dir) = fs::read_dir(format!("/proc/{pid}/fd")) else {
        return HashSet::new();
    };
    dir.filter_map(|e| socket_inode(&e.ok()?.path())).collect()
}

fn all_holders() -> HashMap<u64, Vec<u32>> {
    let mut out: HashMap<u64, Vec<u32>> = HashMap::new();
    let Ok(proc) = fs::read_dir("/proc") else {
        return out;
    };
    for e in proc.flatten() {
        let Some(pid) = e.file_name().to_str().and_then(|s| s.parse::<u32>().ok()) else {
            continue;
        };
        for ino in socket_inodes(pid) {
            out.entry(ino).or_default().push(pid);
        }
    }
    out
}

pub fn holders_of(inode: Inode) -> Vec<u32> {
    all_holders().remove(&inode.0).unwrap_or_default()
}

/// For every socket none of whose recorded owners still holds it, the
/// processes that do (possibly none). Sockets still held by an owner are
/// omitted.
pub fn audit(owners: &[(Inode, BTreeSet<u32>)]) -> Vec<(Inode, Vec<u32>)> {
    let mut cache: HashMap<u32, HashSet<u64>> = HashMap::new();
    let orphans: Vec<Inode> = owners
        .iter()
        .filter(|(inode, pids)| {
            !pids.iter().any(|p| {
                cache
                    .entry(*p)
                    .or_insert_with(|| socket_inodes(*p))
                    .contains(&inode.0)
            })
        })
        .map(|(i, _)| *i)
        .collect();
    if orphans.is_empty() {
        return Vec::new();
    }
    let mut all = all_holders();
    orphans
        .into_iter()
        .map(|i| (i, all.remove(&i.0).unwrap_or_default()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::os::fd::AsRawFd;

    fn inode_of(fd: i32) -> u64 {
        let mut st: libc::stat = unsafe { std::mem::zeroed() };
        assert_eq!(unsafe { libc::fstat(fd, &mut st) }, 0);
        st.st_ino
    }

    #[test]
    fn finds_own_sockets() {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let ino = inode_of(l.as_raw_fd());
        let me = std::process::id();
        assert!(socket_inodes(me).contains(&ino));
        assert!(holders_of(Inode(ino)).contains(&me));
        let owners = vec![(Inode(ino), BTreeSet::from([me]))];
        assert!(audit(&owners).is_empty());
        drop(l);
        assert_eq!(audit(&owners), vec![(Inode(ino), vec![])]);
    }
}
