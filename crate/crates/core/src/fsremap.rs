//! File-name remapping for guests.
//!
//! Rule file format, one rule per line:
//!
//! ```text
//! # comment
//! exact  /etc/hosts  $BOXER_DIR/hosts
//! prefix /var/data   /tmp/data
//! ```
//!
//! `$BOXER_DIR` (or `${BOXER_DIR}`) expands to the supervisor's base
//! directory. Paths are normalized lexically before matching.

use std::collections::HashMap;
use std::path::{Component, Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RemapError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("reading rule file: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Exact,
    Prefix,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RemapRule {
    pub mode: Mode,
    pub from: PathBuf,
    pub to: PathBuf,
}

#[derive(Debug, Clone, Default)]
pub struct RemapTable {
    exact: HashMap<PathBuf, PathBuf>,
    /// Later rules for the same prefix replace earlier ones.
    prefix: Vec<(PathBuf, PathBuf)>,
}

/// Collapses `.`, `..` and repeated separators without touching the
/// filesystem. `..` at the root stays at the root.
pub fn normalize(path: &Path) -> PathBuf {
    let mut out = PathBuf::from("/");
    for c in path.components() {
        match c {
            Component::Normal(part) => out.push(part),
            Component::ParentDir => {
                out.pop();
            }
            Component::RootDir | Component::CurDir | Component::Prefix(_) => {}
        }
    }
    out
}

fn expand(s: &str, base: &Path) -> String {
    let b = base.to_string_lossy();
    s.replace("${BOXER_DIR}", &b).replace("$BOXER_DIR", &b)
}

impl RemapTable {
    /// Only the resolver-configuration substitute.
    pub fn builtin(base: &Path) -> Self {
        let mut t = RemapTable::default();
        t.exact
            .insert(PathBuf::from("/etc/resolv.conf"), base.join("resolv.conf"));
        t
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self, RemapError> {
        let mut t = Self::builtin(base);
        let mut user_exact = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let err = |msg: String| RemapError::Parse { line, msg };
            let fields: Vec<&str> = body.split_whitespace().collect();
            let [mode, from, to] = fields[..] else {
                return Err(err(format!(
                    "expected `exact|prefix <match> <target>`, got {} fields",
                    fields.len()
                )));
            };
            let mode = match mode {
                "exact" => Mode::Exact,
                "prefix" => Mode::Prefix,
                other => return Err(err(format!("unknown mode `{other}`"))),
            };
            let (from, to) = (expand(from, base), expand(to, base));
            for p in [&from, &to] {
                if !p.starts_with('/') {
                    return Err(err(format!("`{p}` is not an absolute path")));
                }
            }
            let (from, to) = (normalize(Path::new(&from)), normalize(Path::new(&to)));
            match mode {
                Mode::Exact => {
                    user_exact.insert(from.clone(), line);
                    t.exact.insert(from, to);
                }
                Mode::Prefix => {
                    t.prefix.retain(|(p, _)| *p != from);
                    t.prefix.push((from, to));
                }
            }
        }
        for (p, _) in &t.prefix {
            if let Some(line) = user_exact.get(p) {
                return Err(RemapError::Parse {
                    line: *line,
                    msg: format!("exact rule for `{}` overlaps a prefix rule", p.display()),
                });
            }
        }
        Ok(t)
    }

    pub fn load(file: &Path, base: &Path) -> Result<Self, RemapError> {
        let text = std::fs::read_to_string(file)
            .map_err(|e| RemapError::Io(format!("{}: {e}", file.display())))?;
        Self::parse(&text, base)
    }

    pub fn rules(&self) -> Vec<RemapRule> {
        let mut v: Vec<RemapRule> = self
            .exact
            .iter()
            .map(|(f, t)| RemapRule {
                mode: Mode::Exact,
                from: f.clone(),
                to: t.clone(),
            })
            .collect();
        v.sort_by(|a, b| a.from.cmp(&b.from));
        v.extend(self.prefix.iter().map(|(f, t)| RemapRule {
            mode: Mode::Prefix,
            from: f.clone(),
            to: t.clone(),
        }));
        v
    }

    /// The rewritten path, or `None` when no rule applies.
    pub fn lookup(&self, path: &str) -> Option<PathBuf> {
        if !path.starts_with('/') {
            return None;
        }
        let p = normalize(Path::new(path));
        if let Some(t) = self.exact.get(&p) {
            return Some(t.clone());
        }
        self.prefix
            .iter()
            .filter_map(|(from, to)| {
                p.strip_prefix(from)
                    .ok()
                    .map(|rest| (from.components().count(), to, rest))
            })
            .max_by_key(|(depth, _, _)| *depth)
            .map(|(_, to, rest)| {
                if rest.as_os_str().is_empty() {
                    to.clone()
                } else {
                    to.join(rest)
                }
            })
    }

    /// Total form of [`lookup`](Self::lookup): unmatched paths come back
    /// unchanged.
    pub fn remap(&self, path: &str) -> String {
        self.lookup(path)
            .map(|p| p.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.to_string())
    }
}
