use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use boxer_proto::samples::{encoded, to_hex};

/// Every sample's encoding equals its `<name>.hex` fixture in `dir`, and
/// every fixture has a sample.
pub fn fixtures_match(dir: &Path) {
    for (name, _, bytes) in encoded() {
        let path = dir.join(format!("{name}.hex"));
        let want = fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(to_hex(&bytes), want.trim(), "golden mismatch for {name}");
    }
    let names: BTreeSet<String> = encoded()
        .into_iter()
        .map(|(n, _, _)| n.to_string())
        .collect();
    for entry in fs::read_dir(dir).unwrap() {
        let file = entry.unwrap().file_name().into_string().unwrap();
        let stem = file.strip_suffix(".hex").expect("only .hex fixtures");
        assert!(names.contains(stem), "stale fixture {file}");
    }
}
