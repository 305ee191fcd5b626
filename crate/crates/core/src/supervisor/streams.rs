//! Read-only local endpoints: the membership event stream and the debug
//! snapshot.

use std::io;
use std::path::Path;
use std::sync::Arc;

use tokio::io::AsyncWriteExt;
use tokio::net::{UnixListener, UnixStream};
use tokio::sync::broadcast::error::RecvError;
use tracing::debug;

use super::{lock, Node, DEBUG_SOCK};

pub(super) async fn serve_coord(node: Arc<Node>, listener: UnixListener) {
    while let Ok((s, _)) = listener.accept().await {
        tokio::spawn(subscriber(node.clone(), s));
    }
}

/// Full snapshot first, then live events. A subscriber that falls more
/// than the buffer behind is disconnected.
async fn subscriber(node: Arc<Node>, mut s: UnixStream) {
    let (snapshot, mut rx) = {
        let m = lock(&node.members);
        (m.set().snapshot_changes(), node.events.subscribe())
    };
    let mut text = String::new();
    for c in snapshot {
        text.push_str(&format!("{c}\n"));
    }
    if s.write_all(text.as_bytes()).await.is_err() {
        return;
    }
    loop {
        match rx.recv().await {
            Ok(c) => {
                if s.write_all(format!("{c}\n").as_bytes()).await.is_err() {
                    return;
                }
            }
            Err(RecvError::Lagged(n)) => {
                debug!(missed = n, "disconnecting slow subscriber");
                return;
            }
            Err(RecvError::Closed) => return,
        }
    }
}

pub(super) async fn serve_debug(node: Arc<Node>, listener: UnixListener) {
    while let Ok((mut s, _)) = listener.accept().await {
        let mut body = serde_json::to_vec(&node.debug_state()).expect("debug state serializes");
        body.push(b'\n');
        tokio::spawn(async move {
            let _ = s.write_all(&body).await;
        });
    }
}

/// Reads one snapshot from a node's debug endpoint (blocking).
pub fn read_debug(dir: &Path) -> io::Result<serde_json::Value> {
    let mut s = std::os::unix::net::UnixStream::connect(dir.join(DEBUG_SOCK))?;
    let mut buf = String::new();
    io::Read::read_to_string(&mut s, &mut buf)?;
    serde_json::from_str(&buf).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}
