//! Persistent pairwise-description cache.
//!
//! Layout: `pairs.jsonl` is an append-only record log (one JSON object per
//! line); `index.txt` lists the frozen key set and doubles as the
//! restricted-mode marker. Interrupted runs resume by replaying the log.

use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffgen::DifferentialRecord;

/// Unit separator; must not occur in class ids.
pub const PAIR_KEY_SEPARATOR: char = '\u{1f}';

const LOG_FILE: &str = "pairs.jsonl";
const INDEX_FILE: &str = "index.txt";

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("class id {0:?} contains the reserved key separator")]
    ReservedSeparator(String),
    #[error("pair classes must be distinct, got {0:?} twice")]
    IdenticalClasses(String),
    #[error("cache is frozen; restricted mode rejects new entries")]
    Frozen,
    #[error("corrupt cache log at line {line}: {message}")]
    CorruptLog { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CacheMode {
    /// Misses trigger generation.
    Open,
    /// The key set is frozen; misses fall back to single-template
    /// descriptions without touching the backend.
    Restricted,
}

/// One stored pair in canonical orientation (class_1 < class_2, caption 1
/// belongs to class_1).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CachedPair {
    pub key: String,
    pub class_1: String,
    pub class_2: String,
    pub records: Vec<DifferentialRecord>,
}

pub struct PairCache {
    entries: HashMap<String, CachedPair>,
    mode: CacheMode,
    dir: Option<PathBuf>,
}

impl PairCache {
    pub fn in_memory(mode: CacheMode) -> Self {
        Self { entries: HashMap::new(), mode, dir: None }
    }

    /// Opens (or creates) a cache directory, replaying the record log. The
    /// mode is restricted iff a frozen index file is present.
    pub fn open_dir(dir: impl AsRef<Path>) -> Result<Self, CacheError> {
        let dir = dir.as_ref().to_path_buf();
        std::fs::create_dir_all(&dir)?;
        let mut entries = HashMap::new();
        let log_path = dir.join(LOG_FILE);
        if log_path.exists() {
            for (i, line) in std::fs::read_to_string(&log_path)?.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let pair: CachedPair = serde_json::from_str(line).map_err(|e| {
                    CacheError::CorruptLog { line: i + 1, message: e.to_string() }
                })?;
                entries.insert(pair.key.clone(), pair);
            }
        }
        let mode = if dir.join(INDEX_FILE).exists() { CacheMode::Restricted } else { CacheMode::Open };
        Ok(Self { entries, mode, dir: Some(dir) })
    }

    pub fn canonical_key(c1: &str, c2: &str) -> Result<String, CacheError> {
        for id in [c1, c2] {
            if id.contains(PAIR_KEY_SEPARATOR) {
                return Err(CacheError::ReservedSeparator(id.to_string()));
            }
        }
        if c1 == c2 {
            return Err(CacheError::IdenticalClasses(c1.to_string()));
        }
        let (a, b) = if c1 <= c2 { (c1, c2) } else { (c2, c1) };
        Ok(format!("{a}{PAIR_KEY_SEPARATOR}{b}"))
    }

    pub fn mode(&self) -> CacheMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, key: &str) -> Option<&CachedPair> {
        self.entries.get(key)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn insert(&mut self, pair: CachedPair) -> Result<(), CacheError> {
        if self.mode == CacheMode::Restricted {
            return Err(CacheError::Frozen);
        }
        if let Some(dir) = &self.dir {
            let mut line = serde_json::to_string(&pair)
                .expect("cached pair serializes");
            line.push('\n');
            let mut f = OpenOptions::new().create(true).append(true).open(dir.join(LOG_FILE))?;
            f.write_all(line.as_bytes())?;
            f.flush()?;
        }
        self.entries.insert(pair.key.clone(), pair);
        Ok(())
    }

    /// Switches to restricted mode and persists the frozen key set.
    pub fn freeze(&mut self) -> Result<(), CacheError> {
        if let Some(dir) = &self.dir {
            let mut keys: Vec<&str> = self.entries.keys().map(String::as_str).collect();
            keys.sort_unstable();
            let mut body = keys.join("\n");
            if !body.is_empty() {
                body.push('\n');
            }
            std::fs::write(dir.join(INDEX_FILE), body)?;
        }
        self.mode = CacheMode::Restricted;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(a: &str, b: &str) -> CachedPair {
        CachedPair {
            key: PairCache::canonical_key(a, b).unwrap(),
            class_1: a.min(b).to_string(),
            class_2: a.max(b).to_string(),
            records: vec![DifferentialRecord {
                attribute: "size".into(),
                caption_1: format!("{a} big"),
                caption_2: format!("{b} small"),
            }],
        }
    }

    #[test]
    fn canonical_key_is_order_independent() {
        assert_eq!(
            PairCache::canonical_key("b", "a").unwrap(),
            PairCache::canonical_key("a", "b").unwrap()
        );
        assert!(PairCache::canonical_key("a", "a").is_err());
        assert!(PairCache::canonical_key("a\u{1f}b", "c").is_err());
    }

    #[test]
    fn log_replay_resumes() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut c = PairCache::open_dir(dir.path()).unwrap();
            c.insert(pair("a", "b")).unwrap();
            c.insert(pair("a", "c")).unwrap();
        }
        let c = PairCache::open_dir(dir.path()).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.mode(), CacheMode::Open);
        assert!(c.contains(&PairCache::canonical_key("c", "a").unwrap()));
    }

    #[test]
    fn freeze_persists_restricted_mode() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut c = PairCache::open_dir(dir.path()).unwrap();
            c.insert(pair("a", "b")).unwrap();
            c.freeze().unwrap();
            assert!(matches!(c.insert(pair("a", "c")), Err(CacheError::Frozen)));
        }
        let c = PairCache::open_dir(dir.path()).unwrap();
        assert_eq!(c.mode(), CacheMode::Restricted);
        assert_eq!(c.len(), 1);
        let index = std::fs::read_to_string(dir.path().join(INDEX_FILE)).unwrap();
        assert_eq!(index, format!("a{PAIR_KEY_SEPARATOR}b\n"));
    }

    #[test]
    fn corrupt_log_is_reported_with_line() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join(LOG_FILE), "{\"key\": broken\n").unwrap();
        assert!(matches!(
            PairCache::open_dir(dir.path()),
            Err(CacheError::CorruptLog { line: 1, .. })
        ));
    }
}
