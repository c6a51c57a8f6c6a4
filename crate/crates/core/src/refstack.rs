//! Leveled reference-counting stack over archive byte locations.
//!
//! Level `i` holds the set of bytes with a per-byte reference count of at
//! least `i + 1`: level 0 is everything referenced at all (the hot set),
//! level 1 everything referenced at least twice, and so on. High-level
//! counting is per canonical entity token; only 0->1 and 1->0 transitions
//! of an entity touch the byte levels, via the merge-up and unmerge-down
//! sweeps below.

use crate::carvpath::{ByteSet, Entity};
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("entity is not referenced: {0}")]
    UnknownEntity(String),
    #[error("entity has an empty byte set: {0}")]
    EmptyByteSet(String),
    #[error("reference stack corruption: {0}")]
    Corrupted(String),
}

/// Outcome of merging an entity up into the stack.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MergeResult {
    /// Bytes that transitioned cold -> hot on this add.
    pub newly_hot: ByteSet,
    /// True when no new bytes became hot; such an add marks the entity as
    /// a candidate for a secondary hashing sweep.
    pub fully_overlapped: bool,
    /// True when this was the entity's 0 -> 1 reference transition.
    pub first_reference: bool,
}

/// Outcome of unmerging an entity down from the stack.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UnmergeResult {
    /// Bytes that transitioned hot -> cold on this remove.
    pub newly_cold: ByteSet,
    /// True when this was the entity's 1 -> 0 reference transition.
    pub last_reference: bool,
}

/// Per-entity quantities consumed by the job-picking policies.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PolicyStats {
    /// Data bytes of the entity with a per-byte count of exactly one.
    pub bytes_at_count_1: u64,
    /// Data bytes sharing the highest count present anywhere in the stack.
    pub bytes_at_global_max_count: u64,
    /// Data bytes with a per-byte count of two or more.
    pub bytes_not_count_1: u64,
    /// Sum of per-byte counts over the entity's data bytes.
    pub weighted_count_sum: u64,
    /// Total data bytes (sparse excluded).
    pub data_bytes: u64,
    /// Lowest archive offset among the data bytes, when any exist.
    pub min_data_offset: Option<u64>,
}

/// The stack of byte sets plus the per-entity reference counts.
#[derive(Default)]
pub struct RefStack {
    levels: Vec<ByteSet>,
    entity_counts: HashMap<String, u64>,
}

impl RefStack {
    pub fn new() -> RefStack {
        RefStack::default()
    }

    /// Level `i`, empty when the stack is shallower.
    pub fn level(&self, i: usize) -> ByteSet {
        self.levels.get(i).cloned().unwrap_or_default()
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    /// Reference count currently held for an entity token.
    pub fn entity_count(&self, token: &str) -> u64 {
        self.entity_counts.get(token).copied().unwrap_or(0)
    }

    /// Tokens of all currently referenced entities.
    pub fn entity_tokens(&self) -> impl Iterator<Item = &str> {
        self.entity_counts.keys().map(String::as_str)
    }

    /// Total size of the hot set; the page-cache pressure measure.
    pub fn pressure(&self) -> u64 {
        self.levels.first().map(ByteSet::size).unwrap_or(0)
    }

    /// Bytes that would become hot if `entity` were added, without
    /// modifying the stack.
    pub fn whatif(&self, entity: &Entity) -> u64 {
        entity.byte_set().subtract(&self.level(0)).size()
    }

    /// Add one reference to `entity`, merging its bytes up into the stack
    /// on the 0 -> 1 transition.
    pub fn add_entity(&mut self, entity: &Entity) -> MergeResult {
        let token = entity.canonical_token();
        let count = self.entity_counts.entry(token).or_insert(0);
        *count += 1;
        if *count > 1 {
            return MergeResult {
                newly_hot: ByteSet::empty(),
                fully_overlapped: true,
                first_reference: false,
            };
        }
        let mut carry = entity.byte_set();
        let newly_hot = carry.subtract(&self.level(0));
        let mut i = 0;
        while !carry.is_empty() {
            if i == self.levels.len() {
                self.levels.push(ByteSet::empty());
            }
            let merged = carry.union(&self.levels[i]);
            carry = carry.intersect(&self.levels[i]);
            self.levels[i] = merged;
            i += 1;
        }
        MergeResult {
            fully_overlapped: newly_hot.is_empty(),
            newly_hot,
            first_reference: true,
        }
    }

    /// Drop one reference to `entity`, unmerging its bytes down from the
    /// stack on the 1 -> 0 transition.
    pub fn remove_entity(&mut self, entity: &Entity) -> Result<UnmergeResult, Error> {
        let token = entity.canonical_token();
        let count = self
            .entity_counts
            .get_mut(&token)
            .ok_or_else(|| Error::UnknownEntity(token.clone()))?;
        *count -= 1;
        if *count > 0 {
            return Ok(UnmergeResult { newly_cold: ByteSet::empty(), last_reference: false });
        }
        self.entity_counts.remove(&token);

        let bytes = entity.byte_set();
        if !bytes.is_subset_of(&self.level(0)) {
            return Err(Error::Corrupted(format!(
                "bytes of {token} missing from the hot set"
            )));
        }
        // Walk from the top: each byte is removed from its topmost level
        // (its current count) and only bytes absent there continue down.
        let mut carry = bytes;
        for i in (0..self.levels.len()).rev() {
            let next_carry = carry.subtract(&self.levels[i]);
            self.levels[i] = self.levels[i].subtract(&carry);
            if i > 0 {
                carry = next_carry;
            }
        }
        let newly_cold = carry;
        while self.levels.last().map(ByteSet::is_empty).unwrap_or(false) {
            self.levels.pop();
        }
        Ok(UnmergeResult { newly_cold, last_reference: true })
    }

    /// Minimum and maximum per-byte reference count over the entity's
    /// data bytes.
    pub fn refcount_range(&self, entity: &Entity) -> Result<(u64, u64), Error> {
        let bytes = entity.byte_set();
        if bytes.is_empty() {
            return Err(Error::EmptyByteSet(entity.canonical_token()));
        }
        let mut min = self.levels.len() as u64;
        for (i, level) in self.levels.iter().enumerate() {
            if !bytes.is_subset_of(level) {
                min = i as u64;
                break;
            }
        }
        let mut max = 0;
        for (i, level) in self.levels.iter().enumerate().rev() {
            if !bytes.intersect(level).is_empty() {
                max = i as u64 + 1;
                break;
            }
        }
        Ok((min, max))
    }

    /// One pass over the stack computing the quantities the picking
    /// policies need for `entity`.
    pub fn count_stats(&self, entity: &Entity) -> PolicyStats {
        let bytes = entity.byte_set();
        let data_bytes = bytes.size();
        let min_data_offset = bytes.first();
        let in_level0 = bytes.intersect(&self.level(0)).size();
        let in_level1 = bytes.intersect(&self.level(1)).size();
        let weighted_count_sum: u64 = self
            .levels
            .iter()
            .map(|level| bytes.intersect(level).size())
            .sum();
        let bytes_at_global_max_count = match self.levels.last() {
            Some(top) => bytes.intersect(top).size(),
            None => 0,
        };
        PolicyStats {
            bytes_at_count_1: in_level0 - in_level1,
            bytes_at_global_max_count,
            bytes_not_count_1: in_level1,
            weighted_count_sum,
            data_bytes,
            min_data_offset,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::carvpath::Entity;

    fn ent(token: &str) -> Entity {
        let table = crate::carvpath::LongPathTable::in_memory();
        crate::carvpath::parse_token(token, &table).unwrap()
    }

    #[test]
    fn first_add_marks_everything_hot() {
        let mut s = RefStack::new();
        let r = s.add_entity(&ent("0+10"));
        assert_eq!(r.newly_hot, ByteSet::interval(0, 10));
        assert!(!r.fully_overlapped);
        assert!(r.first_reference);
        assert_eq!(s.level(0), ByteSet::interval(0, 10));
        assert_eq!(s.depth(), 1);
        assert_eq!(s.pressure(), 10);
    }

    #[test]
    fn merge_up_worked_case() {
        let mut s = RefStack::new();
        s.add_entity(&ent("0+5"));
        let r = s.add_entity(&ent("0+10"));
        assert_eq!(s.level(0), ByteSet::interval(0, 10));
        assert_eq!(s.level(1), ByteSet::interval(0, 5));
        assert_eq!(r.newly_hot, ByteSet::interval(5, 10));
        assert!(!r.fully_overlapped);
    }

    #[test]
    fn covered_add_is_fully_overlapped() {
        let mut s = RefStack::new();
        s.add_entity(&ent("0+10"));
        let r = s.add_entity(&ent("2+4"));
        assert!(r.fully_overlapped);
        assert!(r.first_reference);
        assert!(r.newly_hot.is_empty());
        assert_eq!(s.level(0), ByteSet::interval(0, 10));
        assert_eq!(s.level(1), ByteSet::interval(2, 6));
    }

    #[test]
    fn unmerge_down_worked_case() {
        let mut s = RefStack::new();
        s.add_entity(&ent("0+5"));
        s.add_entity(&ent("0+10"));
        let r = s.remove_entity(&ent("0+10")).unwrap();
        assert_eq!(r.newly_cold, ByteSet::interval(5, 10));
        assert_eq!(s.level(0), ByteSet::interval(0, 5));
        assert_eq!(s.depth(), 1);
    }

    #[test]
    fn add_remove_is_inverse() {
        let mut s = RefStack::new();
        let e = ent("3+4_S2_9+1");
        let hot = s.add_entity(&e).newly_hot;
        let cold = s.remove_entity(&e).unwrap().newly_cold;
        assert_eq!(hot, cold);
        assert_eq!(s.depth(), 0);
        assert_eq!(s.pressure(), 0);
        assert_eq!(s.entity_count(&e.canonical_token()), 0);
    }

    #[test]
    fn remove_unknown_is_an_error() {
        let mut s = RefStack::new();
        assert!(matches!(
            s.remove_entity(&ent("0+10")),
            Err(Error::UnknownEntity(_))
        ));
    }

    #[test]
    fn second_reference_skips_the_sweep() {
        let mut s = RefStack::new();
        s.add_entity(&ent("0+10"));
        let r = s.add_entity(&ent("0+10"));
        assert!(!r.first_reference);
        assert_eq!(s.depth(), 1, "repeat reference of one entity stays at level 0");
        let r = s.remove_entity(&ent("0+10")).unwrap();
        assert!(!r.last_reference);
        assert_eq!(s.pressure(), 10);
    }

    #[test]
    fn sparse_only_entity_contributes_nothing() {
        let mut s = RefStack::new();
        let r = s.add_entity(&ent("S100"));
        assert!(r.fully_overlapped);
        assert_eq!(s.pressure(), 0);
        assert_eq!(s.depth(), 0);
        s.remove_entity(&ent("S100")).unwrap();
    }

    #[test]
    fn whatif_matches_subset_semantics() {
        let mut s = RefStack::new();
        s.add_entity(&ent("0+5"));
        assert_eq!(s.whatif(&ent("0+10")), 5);
        assert_eq!(s.whatif(&ent("0+3")), 0);
        assert_eq!(s.pressure(), 5, "whatif must not modify the stack");
    }

    #[test]
    fn refcount_range_cases() {
        let mut s = RefStack::new();
        s.add_entity(&ent("0+5"));
        s.add_entity(&ent("0+10"));
        assert_eq!(s.refcount_range(&ent("0+10")).unwrap(), (1, 2));
        assert_eq!(s.refcount_range(&ent("0+5")).unwrap(), (2, 2));
        assert_eq!(s.refcount_range(&ent("20+5")).unwrap(), (0, 0));
        assert!(matches!(
            s.refcount_range(&ent("S5")),
            Err(Error::EmptyByteSet(_))
        ));
    }

    #[test]
    fn nested_depths_echo_container_counts() {
        // Container, sub-container and leaf all open at once.
        let mut s = RefStack::new();
        s.add_entity(&ent("0+1000")); // image
        s.add_entity(&ent("100+300")); // mailbox inside it
        s.add_entity(&ent("150+20")); // mail inside the mailbox
        assert_eq!(s.refcount_range(&ent("0+1000")).unwrap(), (1, 3));
        assert_eq!(s.refcount_range(&ent("100+300")).unwrap(), (2, 3));
        assert_eq!(s.refcount_range(&ent("150+20")).unwrap(), (3, 3));
    }

    #[test]
    fn count_stats_worked_case() {
        let mut s = RefStack::new();
        s.add_entity(&ent("0+5"));
        s.add_entity(&ent("0+10"));
        let st = s.count_stats(&ent("0+10"));
        assert_eq!(st.bytes_at_count_1, 5);
        assert_eq!(st.bytes_at_global_max_count, 5);
        assert_eq!(st.bytes_not_count_1, 5);
        assert_eq!(st.weighted_count_sum, 15);
        assert_eq!(st.data_bytes, 10);
        assert_eq!(st.min_data_offset, Some(0));
    }

    #[test]
    fn count_stats_disjoint_entity() {
        let mut s = RefStack::new();
        s.add_entity(&ent("0+10"));
        let st = s.count_stats(&ent("50+8"));
        assert_eq!(st.bytes_at_count_1, 0);
        assert_eq!(st.bytes_at_global_max_count, 0);
        assert_eq!(st.bytes_not_count_1, 0);
        assert_eq!(st.weighted_count_sum, 0);
        assert_eq!(st.data_bytes, 8);
        assert_eq!(st.min_data_offset, Some(50));
    }
}
