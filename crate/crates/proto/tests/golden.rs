//! Byte-exact golden fixtures for every wire variant.
//!
//! Regenerate with `BOXER_BLESS=1 cargo test -p boxer-proto --test golden`
//! only when a format change is intended.

mod support;

use std::collections::BTreeSet;
use std::fs;
use std::path::PathBuf;

use boxer_proto::samples::{encoded, to_hex};

fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

fn protocol_doc() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../docs/protocol.md")
}

fn bless() -> bool {
    std::env::var_os("BOXER_BLESS").is_some()
}

#[test]
fn fixtures_match_encoding() {
    let dir = golden_dir();
    if !bless() {
        support::golden::fixtures_match(&dir);
        return;
    }
    fs::create_dir_all(&dir).unwrap();
    for (name, _, bytes) in encoded() {
        fs::write(
            dir.join(format!("{name}.hex")),
            format!("{}\n", to_hex(&bytes)),
        )
        .unwrap();
    }
}

#[test]
fn kind_tags_are_unique() {
    let samples = encoded();
    let tags: BTreeSet<u8> = samples.iter().map(|(_, k, _)| *k).collect();
    assert_eq!(tags.len(), samples.len());
}

#[test]
fn protocol_doc_lists_every_fixture() {
    let doc = fs::read_to_string(protocol_doc()).expect("docs/protocol.md");
    for (name, kind, bytes) in encoded() {
        assert!(
            doc.contains(&format!("`{name}`")),
            "{name} missing from docs/protocol.md"
        );
        assert!(
            doc.contains(&format!("0x{kind:02x}")),
            "tag of {name} missing"
        );
        assert!(doc.contains(&to_hex(&bytes)), "hex dump of {name} missing");
    }
}

/// Prints the fixture table for docs/protocol.md.
#[test]
#[ignore]
fn print_fixture_table() {
    for (name, kind, bytes) in encoded() {
        println!("| `{name}` | 0x{kind:02x} | `{}` |", to_hex(&bytes));
    }
}
