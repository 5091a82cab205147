use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::ExtractError;

/// Id reserved for strings never seen during training.
pub const UNK: u32 = 0;

/// Dense string interner with occurrence counts. Ids start at 1.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabulary {
    ids: HashMap<String, u32>,
    strings: Vec<String>,
    counts: Vec<u64>,
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    /// Interns `s`, growing the vocabulary if needed, and bumps its count.
    pub fn intern(&mut self, s: &str) -> u32 {
        if let Some(&id) = self.ids.get(s) {
            self.counts[id as usize - 1] += 1;
            return id;
        }
        self.strings.push(s.to_string());
        self.counts.push(1);
        let id = self.strings.len() as u32;
        self.ids.insert(s.to_string(), id);
        id
    }

    /// Frozen lookup: unknown strings map to [`UNK`].
    pub fn get(&self, s: &str) -> u32 {
        self.ids.get(s).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, s: &str) -> bool {
        self.ids.contains_key(s)
    }

    pub fn string(&self, id: u32) -> Option<&str> {
        if id == UNK {
            return None;
        }
        self.strings.get(id as usize - 1).map(String::as_str)
    }

    pub fn count(&self, id: u32) -> u64 {
        if id == UNK {
            return 0;
        }
        self.counts.get(id as usize - 1).copied().unwrap_or(0)
    }

    /// Number of stored entries, not counting UNK.
    pub fn len(&self) -> usize {
        self.strings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.strings.is_empty()
    }

    /// Rows needed by an embedding table over this vocabulary (entries plus UNK).
    pub fn table_rows(&self) -> usize {
        self.strings.len() + 1
    }

    pub fn to_json(&self) -> Vec<u8> {
        let file = VocabFile {
            entries: self.ids.iter().map(|(k, &v)| (k.clone(), v)).collect(),
            counts: self
                .strings
                .iter()
                .zip(&self.counts)
                .map(|(k, &n)| (k.clone(), n))
                .collect(),
        };
        serde_json::to_vec(&file).expect("vocabulary serializes")
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, ExtractError> {
        let file: VocabFile = serde_json::from_slice(bytes)
            .map_err(|e| ExtractError::InvalidVocabulary(e.to_string()))?;
        let n = file.entries.len();
        let mut strings = vec![None; n];
        for (s, id) in file.entries {
            let slot = (id as usize)
                .checked_sub(1)
                .and_then(|i| strings.get_mut(i))
                .ok_or_else(|| ExtractError::InvalidVocabulary(format!("id {id} out of range")))?;
            if slot.is_some() {
                return Err(ExtractError::InvalidVocabulary(format!("duplicate id {id}")));
            }
            *slot = Some(s);
        }
        let strings: Vec<String> = strings.into_iter().map(Option::unwrap).collect();
        let mut counts = Vec::with_capacity(n);
        for s in &strings {
            match file.counts.get(s) {
                Some(&c) if c >= 1 => counts.push(c),
                _ => {
                    return Err(ExtractError::InvalidVocabulary(format!(
                        "missing or zero count for {s:?}"
                    )))
                }
            }
        }
        let ids = strings
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i as u32 + 1))
            .collect();
        Ok(Self {
            ids,
            strings,
            counts,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    entries: BTreeMap<String, u32>,
    counts: BTreeMap<String, u64>,
}

/// Token (leaf value) and path vocabularies used together during extraction.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VocabPair {
    pub tokens: Vocabulary,
    pub paths: Vocabulary,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interning_is_stable_and_dense() {
        let mut v = Vocabulary::new();
        let a = v.intern("a");
        let b = v.intern("b");
        assert_eq!((a, b), (1, 2));
        assert_eq!(v.intern("a"), a);
        assert_eq!(v.count(a), 2);
        assert_eq!(v.get("zzz"), UNK);
        assert_eq!(v.string(b), Some("b"));
        assert_eq!(v.table_rows(), 3);
    }

    #[test]
    fn json_round_trip() {
        let mut v = Vocabulary::new();
        for s in ["x", "y", "x", "z", "x"] {
            v.intern(s);
        }
        let back = Vocabulary::from_json(&v.to_json()).unwrap();
        assert_eq!(back, v);
        let text = String::from_utf8(v.to_json()).unwrap();
        assert_eq!(
            text,
            r#"{"entries":{"x":1,"y":2,"z":3},"counts":{"x":3,"y":1,"z":1}}"#
        );
    }

    #[test]
    fn rejects_sparse_ids() {
        let bad = br#"{"entries":{"x":1,"y":3},"counts":{"x":1,"y":1}}"#;
        assert!(Vocabulary::from_json(bad).is_err());
        let zero = br#"{"entries":{"x":1},"counts":{"x":0}}"#;
        assert!(Vocabulary::from_json(zero).is_err());
    }
}
