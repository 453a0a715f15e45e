use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::clocks::LogicalTimestamp;
use crate::election::quorum_size;

/// A value, or a tombstone (`None`) left by a delete.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LwwEntry {
    pub value: Option<String>,
    pub ts: LogicalTimestamp,
}

impl LwwEntry {
    /// Total order used by merge. Timestamps decide; the value breaks ties
    /// between entries that share a timestamp.
    fn rank(&self) -> (LogicalTimestamp, &Option<String>) {
        (self.ts, &self.value)
    }

    fn beats(&self, other: &LwwEntry) -> bool {
        self.rank() > other.rank()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LwwMap {
    entries: BTreeMap<String, LwwEntry>,
}

impl LwwMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &BTreeMap<String, LwwEntry> {
        &self.entries
    }

    pub fn entry(&self, key: &str) -> Option<&LwwEntry> {
        self.entries.get(key)
    }

    /// Live value of `key`; deleted and absent keys read as `None`.
    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).and_then(|e| e.value.as_deref())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Highest timestamp value held, for advancing a Lamport clock on merge.
    pub fn max_ts(&self) -> u64 {
        self.entries.values().map(|e| e.ts.value).max().unwrap_or(0)
    }

    /// Returns whether the entry was installed.
    pub fn put_entry(&mut self, key: impl Into<String>, entry: LwwEntry) -> bool {
        match self.entries.entry(key.into()) {
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(entry);
                true
            }
            std::collections::btree_map::Entry::Occupied(mut o) => {
                if entry.beats(o.get()) {
                    o.insert(entry);
                    true
                } else {
                    false
                }
            }
        }
    }

    pub fn put(&mut self, key: impl Into<String>, value: impl Into<String>, ts: LogicalTimestamp) -> bool {
        self.put_entry(key, LwwEntry { value: Some(value.into()), ts })
    }

    pub fn delete(&mut self, key: impl Into<String>, ts: LogicalTimestamp) -> bool {
        self.put_entry(key, LwwEntry { value: None, ts })
    }

    pub fn merge(&self, other: &LwwMap) -> LwwMap {
        let mut out = self.clone();
        out.merge_from(other);
        out
    }

    /// In-place merge; returns the number of entries that changed.
    pub fn merge_from(&mut self, other: &LwwMap) -> usize {
        other
            .entries
            .iter()
            .filter(|(k, e)| self.put_entry((*k).clone(), (*e).clone()))
            .count()
    }

    /// Sorted `key value ts.value ts.owner` lines; tombstones print as `-`.
    pub fn dump(&self) -> String {
        self.entries
            .iter()
            .map(|(k, e)| format!("{k} {} {} {}\n", e.value.as_deref().unwrap_or("-"), e.ts.value, e.ts.owner))
            .collect()
    }
}

pub fn lww_merge(a: &LwwMap, b: &LwwMap) -> LwwMap {
    a.merge(b)
}

/// The newest entry for `key` that at least a quorum of replicas hold
/// identically, as its live value. Returns `None` when no entry has a quorum
/// or the winning entry is a tombstone.
pub fn lww_majority_read(replicas: &[LwwMap], key: &str) -> Option<String> {
    let quorum = quorum_size(replicas.len()).ok()?;
    let mut counts: HashMap<&LwwEntry, usize> = HashMap::new();
    for r in replicas {
        if let Some(e) = r.entry(key) {
            *counts.entry(e).or_default() += 1;
        }
    }
    counts
        .into_iter()
        .filter(|(_, c)| *c >= quorum)
        .map(|(e, _)| e)
        .max_by(|a, b| a.rank().cmp(&b.rank()))
        .and_then(|e| e.value.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ts(v: u64, p: usize) -> LogicalTimestamp {
        LogicalTimestamp::at(v, p)
    }

    #[test]
    fn put_examples() {
        let mut m = LwwMap::new();
        m.put("k", "a", ts(1, 0));
        assert_eq!(m.get("k"), Some("a"));

        let mut m = LwwMap::new();
        m.put("k", "a", ts(5, 0));
        m.put("k", "b", ts(7, 1));
        assert_eq!(m.get("k"), Some("b"));

        let mut m = LwwMap::new();
        m.put("k", "a", ts(5, 0));
        m.put("k", "b", ts(5, 2));
        assert_eq!(m.get("k"), Some("b"));

        let mut m = LwwMap::new();
        m.put("k", "b", ts(7, 1));
        assert!(!m.put("k", "a", ts(5, 0)));
        assert_eq!(m.get("k"), Some("b"));
    }

    #[test]
    fn delete_races_put() {
        let mut a = LwwMap::new();
        a.put("k", "v", ts(3, 0));
        let mut b = LwwMap::new();
        b.delete("k", ts(4, 1));
        assert_eq!(a.merge(&b).get("k"), None);
        assert_eq!(b.merge(&a).get("k"), None);
        a.put("k", "w", ts(5, 0));
        assert_eq!(a.merge(&b).get("k"), Some("w"));
    }

    #[test]
    fn merge_examples() {
        let mut a = LwwMap::new();
        a.put("x", "1", ts(1, 0));
        let mut b = LwwMap::new();
        b.put("y", "2", ts(1, 1));
        let m = a.merge(&b);
        assert_eq!((m.get("x"), m.get("y")), (Some("1"), Some("2")));
        assert_eq!(a.merge(&a), a);
    }

    #[test]
    fn majority_read_examples() {
        let mut a = LwwMap::new();
        a.put("k", "a", ts(5, 0));
        assert_eq!(lww_majority_read(&[a.clone(), a.clone(), a.clone()], "k"), Some("a".into()));

        let mut b = LwwMap::new();
        b.put("k", "b", ts(7, 0));
        assert_eq!(lww_majority_read(&[a.clone(), a.clone(), b.clone()], "k"), Some("a".into()));

        let mut c = LwwMap::new();
        c.put("k", "c", ts(9, 0));
        assert_eq!(lww_majority_read(&[a, b, c], "k"), None);
        assert_eq!(lww_majority_read(&[], "k"), None);
    }

    #[test]
    fn dump_is_sorted() {
        let mut m = LwwMap::new();
        m.put("b", "2", ts(2, 1));
        m.delete("a", ts(3, 0));
        assert_eq!(m.dump(), "a - 3 0\nb 2 2 1\n");
    }
}
