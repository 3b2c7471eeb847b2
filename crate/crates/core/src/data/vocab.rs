use std::collections::{BTreeMap, BTreeSet, HashMap};

use sha2::{Digest, Sha256};

/// Label that rare codes are folded into. Always id 0.
pub const OTHER_CODE: &str = "other";
pub const OTHER_ID: u32 = 0;
pub const DEFAULT_MIN_STAYS: usize = 100;

/// Dense code dictionary for one stream.
///
/// Codes seen in fewer than `min_stays` distinct stays are relabelled as
/// [`OTHER_CODE`]. Kept codes are numbered by decreasing stay count, ties by
/// code string, starting at 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    codes: Vec<String>,
    counts: Vec<usize>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Builds from the set of distinct codes of each stay.
    pub fn build<'a, I, S>(stays: I, min_stays: usize) -> Self
    where
        I: IntoIterator<Item = S>,
        S: IntoIterator<Item = &'a str>,
    {
        let sets: Vec<BTreeSet<&str>> = stays.into_iter().map(|s| s.into_iter().collect()).collect();
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for set in &sets {
            for code in set {
                *counts.entry(code).or_default() += 1;
            }
        }
        let is_kept = |code: &str| code != OTHER_CODE && counts.get(code).copied().unwrap_or(0) >= min_stays;
        let other_count = sets.iter().filter(|s| s.iter().any(|c| !is_kept(c))).count();

        let mut kept: Vec<(&str, usize)> = counts
            .iter()
            .filter(|(c, _)| is_kept(c))
            .map(|(c, n)| (*c, *n))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));

        let mut codes = vec![OTHER_CODE.to_string()];
        let mut cnts = vec![other_count];
        for (c, n) in kept {
            codes.push(c.to_string());
            cnts.push(n);
        }
        let index = codes.iter().enumerate().map(|(i, c)| (c.clone(), i as u32)).collect();
        Self {
            codes,
            counts: cnts,
            index,
        }
    }

    /// Id of a code; unknown or rare codes map to [`OTHER_ID`].
    pub fn id(&self, code: &str) -> u32 {
        self.index.get(code).copied().unwrap_or(OTHER_ID)
    }

    /// Exact lookup without folding.
    pub fn get(&self, code: &str) -> Option<u32> {
        self.index.get(code).copied()
    }

    pub fn code(&self, id: u32) -> &str {
        &self.codes[id as usize]
    }

    pub fn count(&self, id: u32) -> usize {
        self.counts[id as usize]
    }

    pub fn codes(&self) -> &[String] {
        &self.codes
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    /// Hex SHA-256 over the ordered code list.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for c in &self.codes {
            h.update(c.as_bytes());
            h.update([0u8]);
        }
        hex::encode(h.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus() -> Vec<Vec<&'static str>> {
        let mut stays = Vec::new();
        for i in 0..150 {
            let mut s = vec!["a"];
            if i < 99 {
                s.push("rare");
            }
            if i < 120 {
                s.push("b");
            }
            if i == 3 {
                s.push("single");
            }
            stays.push(s);
        }
        stays
    }

    #[test]
    fn rare_codes_fold_into_other() {
        let v = Vocabulary::build(corpus(), 100);
        assert_eq!(v.codes(), &["other", "a", "b"]);
        assert_eq!(v.id("rare"), OTHER_ID);
        assert_eq!(v.id("single"), OTHER_ID);
        assert_eq!(v.id("never-seen"), OTHER_ID);
        assert_eq!(v.count(OTHER_ID), 99);
        assert_eq!(v.count(v.id("a")), 150);
    }

    #[test]
    fn relabel_is_idempotent() {
        let v1 = Vocabulary::build(corpus(), 100);
        let relabelled: Vec<Vec<&str>> = corpus()
            .iter()
            .map(|s| s.iter().map(|c| v1.code(v1.id(c))).collect())
            .collect();
        let v2 = Vocabulary::build(relabelled, 100);
        assert_eq!(v1, v2);
    }
}
