//! Archive-wide opportunistic hash collection.
//!
//! Every hot entity carries an incremental BLAKE2b-256 context plus the
//! entity-relative offset of the first byte not yet hashed. Low-level
//! archive I/O is offered to the collection; a state advances only when a
//! chunk covers its exact next needed archive byte, so progress is strictly
//! sequential and deterministic. Sparse fragments are zero-fed the moment
//! the offset reaches them, so no I/O is ever needed for sparse bytes.

use crate::carvpath::{Blake2b256, Entity, Fragment};
use blake2::Digest;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io;
use thiserror::Error;

const ZERO_FEED: [u8; 4096] = [0u8; 4096];

#[derive(Debug, Error)]
pub enum Error {
    #[error("entity already has a hash state: {0}")]
    DuplicateEntity(String),
    #[error("entity has no hash state: {0}")]
    UnknownEntity(String),
    #[error("archive read failed during sweep: {0}")]
    Io(#[from] io::Error),
}

/// Page-residency query used by the secondary hashing sweep.
///
/// `resident_prefix` reports how many bytes, counted from the start of
/// `[offset, offset + len)`, currently reside in the page cache. The
/// production backend asks the OS; tests script the answer.
pub trait ResidencyOracle: Send {
    fn resident_prefix(&mut self, offset: u64, len: u64) -> u64;
}

/// Oracle reporting nothing resident; disables secondary sweeps.
pub struct NoneResident;

impl ResidencyOracle for NoneResident {
    fn resident_prefix(&mut self, _offset: u64, _len: u64) -> u64 {
        0
    }
}

/// Scripted oracle backed by an explicit set of resident ranges.
pub struct ScriptedResidency(pub crate::carvpath::ByteSet);

impl ResidencyOracle for ScriptedResidency {
    fn resident_prefix(&mut self, offset: u64, len: u64) -> u64 {
        for &(s, e) in self.0.intervals() {
            if offset >= s && offset < e {
                return (e - offset).min(len);
            }
        }
        0
    }
}

struct HashState {
    entity: Entity,
    ctx: Blake2b256,
    offset: u64,
    frag_idx: usize,
    frag_consumed: u64,
    result: Option<String>,
}

impl HashState {
    fn new(entity: Entity) -> HashState {
        let mut state = HashState {
            entity,
            ctx: Blake2b256::new(),
            offset: 0,
            frag_idx: 0,
            frag_consumed: 0,
            result: None,
        };
        state.drain_non_data();
        state
    }

    /// Zero-feed sparse fragments at the cursor and finalize at the end,
    /// leaving the cursor either on a data fragment or finished.
    fn drain_non_data(&mut self) {
        loop {
            match self.entity.fragments().get(self.frag_idx) {
                None => {
                    if self.result.is_none() {
                        self.result = Some(hex::encode(self.ctx.finalize_reset()));
                    }
                    return;
                }
                Some(Fragment::Sparse { size }) => {
                    let mut remaining = size - self.frag_consumed;
                    while remaining > 0 {
                        let n = remaining.min(ZERO_FEED.len() as u64);
                        self.ctx.update(&ZERO_FEED[..n as usize]);
                        remaining -= n;
                    }
                    self.offset += size - self.frag_consumed;
                    self.frag_idx += 1;
                    self.frag_consumed = 0;
                }
                Some(Fragment::Data { .. }) => return,
            }
        }
    }

    /// Archive position and in-fragment remainder of the next needed byte.
    fn next_needed(&self) -> Option<(u64, u64)> {
        match self.entity.fragments().get(self.frag_idx) {
            Some(&Fragment::Data { offset, size }) => {
                Some((offset + self.frag_consumed, size - self.frag_consumed))
            }
            _ => None,
        }
    }

    /// Feed bytes known to be exactly the next needed ones.
    fn consume(&mut self, data: &[u8]) {
        self.ctx.update(data);
        self.offset += data.len() as u64;
        self.frag_consumed += data.len() as u64;
        let frag_size = self.entity.fragments()[self.frag_idx].size();
        if self.frag_consumed == frag_size {
            self.frag_idx += 1;
            self.frag_consumed = 0;
        }
        self.drain_non_data();
    }
}

/// The per-hot-entity hash states, indexed by next needed archive offset
/// so that I/O fan-out touches only candidate states.
#[derive(Default)]
pub struct HashCollection {
    states: HashMap<String, HashState>,
    by_needed: BTreeMap<u64, BTreeSet<String>>,
}

impl HashCollection {
    pub fn new() -> HashCollection {
        HashCollection::default()
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn contains(&self, entity: &Entity) -> bool {
        self.states.contains_key(&entity.canonical_token())
    }

    /// Open a fresh state at offset zero. Leading sparse runs are consumed
    /// immediately; a zero-size entity finalizes right away.
    pub fn open_state(&mut self, entity: &Entity) -> Result<(), Error> {
        let token = entity.canonical_token();
        if self.states.contains_key(&token) {
            return Err(Error::DuplicateEntity(token));
        }
        let state = HashState::new(entity.clone());
        if let Some((needed, _)) = state.next_needed() {
            self.by_needed.entry(needed).or_default().insert(token.clone());
        }
        self.states.insert(token, state);
        Ok(())
    }

    /// Remove a state, returning its digest when hashing had completed.
    pub fn drop_state(&mut self, entity: &Entity) -> Result<Option<String>, Error> {
        let token = entity.canonical_token();
        let state = self
            .states
            .remove(&token)
            .ok_or_else(|| Error::UnknownEntity(token.clone()))?;
        if let Some((needed, _)) = state.next_needed() {
            if let Some(set) = self.by_needed.get_mut(&needed) {
                set.remove(&token);
                if set.is_empty() {
                    self.by_needed.remove(&needed);
                }
            }
        }
        Ok(state.result)
    }

    /// Offer a chunk of archive I/O to every state whose next needed byte
    /// it covers. States keep consuming while the chunk covers their
    /// cursor; everything else is untouched.
    pub fn feed_chunk(&mut self, archive_offset: u64, data: &[u8]) {
        if data.is_empty() {
            return;
        }
        let end = archive_offset + data.len() as u64;
        loop {
            let Some((&needed, tokens)) = self.by_needed.range(archive_offset..end).next() else {
                break;
            };
            let token = tokens.first().cloned().expect("index sets are non-empty");
            self.unindex(needed, &token);
            let state = self.states.get_mut(&token).expect("indexed state exists");
            let (_, frag_remaining) = state.next_needed().expect("indexed state needs data");
            let skip = (needed - archive_offset) as usize;
            let usable = frag_remaining.min((end - needed) as u64) as usize;
            state.consume(&data[skip..skip + usable]);
            if let Some((next, _)) = state.next_needed() {
                self.by_needed.entry(next).or_default().insert(token);
            }
        }
    }

    fn unindex(&mut self, needed: u64, token: &str) {
        if let Some(set) = self.by_needed.get_mut(&needed) {
            set.remove(token);
            if set.is_empty() {
                self.by_needed.remove(&needed);
            }
        }
    }

    /// Entity-relative offset of the first byte not yet hashed.
    pub fn hashing_offset(&self, entity: &Entity) -> Result<u64, Error> {
        self.state(entity).map(|s| s.offset)
    }

    /// The finalized digest, present once the whole entity is hashed.
    pub fn result(&self, entity: &Entity) -> Result<Option<String>, Error> {
        self.state(entity).map(|s| s.result.clone())
    }

    /// Archive position of the first unhashed data byte; absent when the
    /// entity is complete.
    pub fn next_needed_archive_offset(&self, entity: &Entity) -> Result<Option<u64>, Error> {
        self.state(entity).map(|s| s.next_needed().map(|(off, _)| off))
    }

    /// Advance an entity by actively reading page-resident leading data.
    ///
    /// Starting at the current offset, while the next needed range is
    /// reported resident, the resident prefix is read and offered to the
    /// whole collection (the read is real archive I/O). Stops at the first
    /// non-resident byte; returns the bytes the entity advanced by.
    pub fn secondary_sweep(
        &mut self,
        entity: &Entity,
        residency: &mut dyn ResidencyOracle,
        reader: &mut dyn FnMut(u64, u64) -> io::Result<Vec<u8>>,
    ) -> Result<u64, Error> {
        let token = entity.canonical_token();
        if !self.states.contains_key(&token) {
            return Err(Error::UnknownEntity(token));
        }
        let start = self.states[&token].offset;
        loop {
            let Some((needed, frag_remaining)) = self.states[&token].next_needed() else {
                break;
            };
            let resident = residency.resident_prefix(needed, frag_remaining);
            if resident == 0 {
                break;
            }
            let data = reader(needed, resident)?;
            debug_assert_eq!(data.len() as u64, resident);
            self.feed_chunk(needed, &data);
        }
        Ok(self.states[&token].offset - start)
    }

    fn state(&self, entity: &Entity) -> Result<&HashState, Error> {
        self.states
            .get(&entity.canonical_token())
            .ok_or_else(|| Error::UnknownEntity(entity.canonical_token()))
    }
}

/// One-shot BLAKE2b-256 of a buffer, lowercase hex.
pub fn digest_bytes(data: &[u8]) -> String {
    let mut ctx = Blake2b256::new();
    ctx.update(data);
    hex::encode(ctx.finalize())
}
