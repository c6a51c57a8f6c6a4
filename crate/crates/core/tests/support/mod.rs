//! Shared brute-force oracles for the integration suites. Everything here
//! works on materialized per-byte arrays, independent of the interval and
//! stack algebra it is used to check.

#![allow(dead_code)]

use carvbus_core::carvpath::{ByteSet, Entity, Fragment};
use rand::Rng;

/// Per-byte address of one entity byte: a real archive position or sparse.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ByteAddr {
    Archive(u64),
    Sparse,
}

/// Materialize an entity into one address per logical byte.
pub fn materialize(entity: &Entity) -> Vec<ByteAddr> {
    let mut out = Vec::with_capacity(entity.total_size() as usize);
    for frag in entity.fragments() {
        match *frag {
            Fragment::Data { offset, size } => {
                out.extend((offset..offset + size).map(ByteAddr::Archive))
            }
            Fragment::Sparse { size } => out.extend((0..size).map(|_| ByteAddr::Sparse)),
        }
    }
    out
}

/// Oracle flatten: index the parent's byte list with the child's
/// positions; sparse child bytes and sparse parent bytes stay sparse.
pub fn flatten_oracle(parent: &Entity, child: &Entity) -> Option<Vec<ByteAddr>> {
    let parent_bytes = materialize(parent);
    let mut out = Vec::new();
    for frag in child.fragments() {
        match *frag {
            Fragment::Sparse { size } => out.extend((0..size).map(|_| ByteAddr::Sparse)),
            Fragment::Data { offset, size } => {
                if offset + size > parent_bytes.len() as u64 {
                    return None;
                }
                out.extend(
                    parent_bytes[offset as usize..(offset + size) as usize]
                        .iter()
                        .copied(),
                );
            }
        }
    }
    Some(out)
}

/// A boolean-array byte set over a small universe.
pub fn bools_of(set: &ByteSet, universe: usize) -> Vec<bool> {
    let mut out = vec![false; universe];
    for &(s, e) in set.intervals() {
        for b in s..e.min(universe as u64) {
            out[b as usize] = true;
        }
    }
    out
}

pub fn set_of_bools(bools: &[bool]) -> ByteSet {
    ByteSet::from_intervals(
        bools
            .iter()
            .enumerate()
            .filter(|(_, &v)| v)
            .map(|(i, _)| (i as u64, i as u64 + 1)),
    )
}

/// Per-byte reference counter: the oracle the stack must agree with.
#[derive(Clone)]
pub struct CountOracle {
    pub counts: Vec<u32>,
}

impl CountOracle {
    pub fn new(universe: usize) -> CountOracle {
        CountOracle { counts: vec![0; universe] }
    }

    pub fn add(&mut self, entity: &Entity) -> ByteSet {
        let mut newly_hot = Vec::new();
        for addr in materialize(entity) {
            if let ByteAddr::Archive(pos) = addr {
                let c = &mut self.counts[pos as usize];
                if *c == 0 {
                    newly_hot.push((pos, pos + 1));
                }
            }
        }
        // Count each byte once per add even when fragments overlap.
        for pos in entity_positions(entity) {
            self.counts[pos as usize] += 1;
        }
        ByteSet::from_intervals(newly_hot)
    }

    pub fn remove(&mut self, entity: &Entity) -> ByteSet {
        let mut newly_cold = Vec::new();
        for pos in entity_positions(entity) {
            let c = &mut self.counts[pos as usize];
            *c -= 1;
            if *c == 0 {
                newly_cold.push((pos, pos + 1));
            }
        }
        ByteSet::from_intervals(newly_cold)
    }

    /// Bytes with count >= threshold, as a set.
    pub fn at_least(&self, threshold: u32) -> ByteSet {
        ByteSet::from_intervals(
            self.counts
                .iter()
                .enumerate()
                .filter(|(_, &c)| c >= threshold)
                .map(|(i, _)| (i as u64, i as u64 + 1)),
        )
    }

    pub fn pressure(&self) -> u64 {
        self.counts.iter().filter(|&&c| c > 0).count() as u64
    }

    pub fn max_count(&self) -> u32 {
        self.counts.iter().copied().max().unwrap_or(0)
    }
}

/// Distinct archive byte positions of an entity (the byte set, per byte).
pub fn entity_positions(entity: &Entity) -> Vec<u64> {
    let mut positions: Vec<u64> = materialize(entity)
        .into_iter()
        .filter_map(|a| match a {
            ByteAddr::Archive(p) => Some(p),
            ByteAddr::Sparse => None,
        })
        .collect();
    positions.sort_unstable();
    positions.dedup();
    positions
}

/// Random entity over a byte universe: up to `max_fragments` fragments,
/// sparse runs mixed in.
pub fn random_entity<R: Rng>(rng: &mut R, universe: u64, max_fragments: usize) -> Entity {
    let count = rng.gen_range(1..=max_fragments);
    let fragments: Vec<Fragment> = (0..count)
        .map(|_| {
            if rng.gen_bool(0.25) {
                Fragment::Sparse { size: rng.gen_range(1..=universe / 8).max(1) }
            } else {
                let offset = rng.gen_range(0..universe - 1);
                let size = rng.gen_range(1..=(universe - offset).min(universe / 4).max(1));
                Fragment::Data { offset, size }
            }
        })
        .collect();
    Entity::new(fragments)
}

/// Independent BLAKE2b-256 implementation for digest cross-checks.
pub fn reference_digest(data: &[u8]) -> String {
    blake2b_simd::Params::new()
        .hash_length(32)
        .hash(data)
        .to_hex()
        .to_string()
}

/// Reference digest of an entity's materialized content.
pub fn reference_entity_digest(entity: &Entity, archive: &[u8]) -> String {
    let content: Vec<u8> = materialize(entity)
        .into_iter()
        .map(|addr| match addr {
            ByteAddr::Archive(pos) => archive[pos as usize],
            ByteAddr::Sparse => 0,
        })
        .collect();
    reference_digest(&content)
}
