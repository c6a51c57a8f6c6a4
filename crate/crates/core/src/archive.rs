//! The growing append-only flat archive.
//!
//! One sparse backing file holds every byte ever entered. New data lives in
//! capability-guarded mutable regions until frozen, after which it is
//! immutable for the lifetime of the archive. Carve-path reads serve
//! fragment content with sparse zero-fill, and every low-level read or
//! write is fanned out to the opportunistic hash collection. Hot/cold
//! transitions reported by the reference stack drive the page advisor.

use crate::advice::{Advice, NullAdvisor, PageAdvisor};
use crate::capability::{CapKind, CapMinter, Capability};
use crate::carvpath::{ByteSet, Entity};
use crate::opphash::{HashCollection, NoneResident, ResidencyOracle};
use crate::refstack::RefStack;
use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io;
use std::os::unix::fs::FileExt;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("capability does not designate a mutable region: {0}")]
    InvalidCapability(String),
    #[error("mutable region is frozen: {0}")]
    Frozen(String),
    #[error("mutable region is already frozen: {0}")]
    AlreadyFrozen(String),
    #[error("range [{offset}, {offset}+{len}) exceeds size {size}")]
    OutOfBounds { offset: u64, len: u64, size: u64 },
    #[error("entity {token} references bytes beyond archive end {end}")]
    FragmentBeyondArchive { token: String, end: u64 },
    #[error(transparent)]
    Stack(#[from] crate::refstack::Error),
    #[error(transparent)]
    Hash(#[from] crate::opphash::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// A capability-guarded write window over fresh archive space.
struct MutableRegion {
    offset: u64,
    size: u64,
    frozen: bool,
    entity: Entity,
}

/// Whole-archive figures exposed for throttling decisions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArchiveStatus {
    /// Bytes currently advised as needed (the hot set size).
    pub normal_size: u64,
    /// Bytes currently advised as dontneed: everything else.
    pub dontneed_size: u64,
    /// Entity designating the whole current archive.
    pub full_archive: Entity,
}

/// Completed-hash / progress view of one entity.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HashStatus {
    pub digest: Option<String>,
    pub offset: u64,
}

pub struct Archive {
    file: File,
    end: u64,
    mutables: HashMap<Capability, MutableRegion>,
    advisor: Box<dyn PageAdvisor>,
    residency: Box<dyn ResidencyOracle>,
    minter: CapMinter,
    stack: RefStack,
    hashes: HashCollection,
    /// Digests of entities that completed hashing, kept after they go
    /// cold; frozen data never changes, so these stay valid.
    digest_memo: HashMap<String, String>,
    /// Fully-overlapped opens pending a secondary hashing sweep.
    sweep_candidates: BTreeMap<String, Entity>,
}

impl Archive {
    /// Open or create an archive file with the production backends
    /// (fadvise advisor, mincore residency, system entropy).
    pub fn open(path: &Path) -> Result<Archive, Error> {
        let file = File::options()
            .read(true)
            .write(true)
            .create(true)
            .truncate(false)
            .open(path)?;
        #[cfg(unix)]
        let (advisor, residency) = {
            use std::os::unix::io::AsRawFd;
            let fd = file.as_raw_fd();
            (
                Box::new(crate::advice::FadviseAdvisor::new(fd)) as Box<dyn PageAdvisor>,
                Box::new(crate::advice::MincoreResidency::new(fd)) as Box<dyn ResidencyOracle>,
            )
        };
        #[cfg(not(unix))]
        let (advisor, residency) = (
            Box::new(NullAdvisor) as Box<dyn PageAdvisor>,
            Box::new(NoneResident) as Box<dyn ResidencyOracle>,
        );
        Archive::with_backends(file, advisor, residency, CapMinter::system())
    }

    /// Open over an explicit file and injected backends.
    pub fn with_backends(
        file: File,
        advisor: Box<dyn PageAdvisor>,
        residency: Box<dyn ResidencyOracle>,
        minter: CapMinter,
    ) -> Result<Archive, Error> {
        let end = file.metadata()?.len();
        Ok(Archive {
            file,
            end,
            mutables: HashMap::new(),
            advisor,
            residency,
            minter,
            stack: RefStack::new(),
            hashes: HashCollection::new(),
            digest_memo: HashMap::new(),
            sweep_candidates: BTreeMap::new(),
        })
    }

    /// Archive over an anonymous unlinked temp file with a null advisor;
    /// convenient for embedding and tests.
    pub fn anonymous(minter: CapMinter) -> Result<Archive, Error> {
        let file = tempfile::tempfile()?;
        Archive::with_backends(file, Box::new(NullAdvisor), Box::new(NoneResident), minter)
    }

    pub fn end(&self) -> u64 {
        self.end
    }

    pub fn stack(&self) -> &RefStack {
        &self.stack
    }

    pub fn hashes(&self) -> &HashCollection {
        &self.hashes
    }

    pub fn minter_mut(&mut self) -> &mut CapMinter {
        &mut self.minter
    }

    /// Reserve a fresh zero-initialized region at the end of the archive.
    /// The region is hot from allocation until released.
    pub fn allocate_mutable(&mut self, size: u64) -> Result<Capability, Error> {
        let offset = self.end;
        self.end += size;
        self.file.set_len(self.end)?;
        let entity = Entity::data(offset, size);
        let cap = self.minter.mint(CapKind::Mutable);
        self.open_entity(&entity)?;
        self.mutables
            .insert(cap.clone(), MutableRegion { offset, size, frozen: false, entity });
        Ok(cap)
    }

    /// Write into an unfrozen mutable region. The bytes are stored and
    /// offered to the hash collection at their absolute archive position.
    pub fn write_mutable(
        &mut self,
        cap: &Capability,
        region_offset: u64,
        data: &[u8],
    ) -> Result<(), Error> {
        let region = self
            .mutables
            .get(cap)
            .ok_or_else(|| Error::InvalidCapability(crate::capability::redact(cap.as_str())))?;
        if region.frozen {
            return Err(Error::Frozen(crate::capability::redact(cap.as_str())));
        }
        let end = region_offset
            .checked_add(data.len() as u64)
            .ok_or(Error::OutOfBounds { offset: region_offset, len: data.len() as u64, size: region.size })?;
        if end > region.size {
            return Err(Error::OutOfBounds {
                offset: region_offset,
                len: data.len() as u64,
                size: region.size,
            });
        }
        let abs = region.offset + region_offset;
        self.file.write_all_at(data, abs)?;
        self.hashes.feed_chunk(abs, data);
        Ok(())
    }

    /// Revoke write authority and return the entity designating the
    /// region's bytes. Further writes fail; repeated freezes are rejected.
    pub fn freeze(&mut self, cap: &Capability) -> Result<Entity, Error> {
        let region = self
            .mutables
            .get_mut(cap)
            .ok_or_else(|| Error::InvalidCapability(crate::capability::redact(cap.as_str())))?;
        if region.frozen {
            return Err(Error::AlreadyFrozen(crate::capability::redact(cap.as_str())));
        }
        region.frozen = true;
        Ok(region.entity.clone())
    }

    /// True when the capability designates a live region; `frozen` tells
    /// whether it still accepts writes.
    pub fn mutable_state(&self, cap: &Capability) -> Option<(u64, u64, bool)> {
        self.mutables.get(cap).map(|r| (r.offset, r.size, r.frozen))
    }

    /// Drop the region's hot reference and invalidate its capability.
    /// An unfrozen region is frozen first (abandonment). Returns the
    /// completed digest when the region's entity went cold with one.
    pub fn release_mutable(&mut self, cap: &Capability) -> Result<Option<String>, Error> {
        let region = self
            .mutables
            .remove(cap)
            .ok_or_else(|| Error::InvalidCapability(crate::capability::redact(cap.as_str())))?;
        self.close_entity(&region.entity)
    }

    /// Read `len` bytes of entity content starting at the entity-relative
    /// `offset`. Sparse fragments yield zeroes; each contiguous data read
    /// is offered to the hash collection.
    pub fn read(&mut self, entity: &Entity, offset: u64, len: u64) -> Result<Vec<u8>, Error> {
        let end = offset
            .checked_add(len)
            .ok_or(Error::OutOfBounds { offset, len, size: entity.total_size() })?;
        if end > entity.total_size() {
            return Err(Error::OutOfBounds { offset, len, size: entity.total_size() });
        }
        self.check_within_archive(entity)?;
        let mut out = Vec::with_capacity(len as usize);
        let mut logical = 0u64;
        for frag in entity.fragments() {
            let frag_end = logical + frag.size();
            if frag_end <= offset {
                logical = frag_end;
                continue;
            }
            if logical >= end {
                break;
            }
            let from = offset.max(logical) - logical;
            let upto = end.min(frag_end) - logical;
            match *frag {
                crate::carvpath::Fragment::Sparse { .. } => {
                    out.resize(out.len() + (upto - from) as usize, 0);
                }
                crate::carvpath::Fragment::Data { offset: frag_off, .. } => {
                    let abs = frag_off + from;
                    let n = (upto - from) as usize;
                    let start = out.len();
                    out.resize(start + n, 0);
                    self.file.read_exact_at(&mut out[start..], abs)?;
                    self.hashes.feed_chunk(abs, &out[start..]);
                }
            }
            logical = frag_end;
        }
        Ok(out)
    }

    /// Take one hot reference on an entity: 0 -> 1 opens a hash state,
    /// emits normal advice for the newly hot bytes, and a fully-overlapped
    /// open queues a secondary hashing sweep.
    pub fn open_entity(&mut self, entity: &Entity) -> Result<(), Error> {
        self.check_within_archive(entity)?;
        let merge = self.stack.add_entity(entity);
        if merge.first_reference {
            self.hashes.open_state(entity)?;
        }
        for &(s, e) in merge.newly_hot.intervals() {
            self.advisor.advise(s, e - s, Advice::Normal);
        }
        if merge.fully_overlapped {
            self.sweep_candidates
                .insert(entity.canonical_token(), entity.clone());
        }
        self.run_secondary_sweeps()?;
        Ok(())
    }

    /// Drop one hot reference: 1 -> 0 drops the hash state (returning a
    /// completed digest for journaling) and emits dontneed advice for the
    /// newly cold bytes.
    pub fn close_entity(&mut self, entity: &Entity) -> Result<Option<String>, Error> {
        let unmerge = self.stack.remove_entity(entity)?;
        if !unmerge.last_reference {
            return Ok(None);
        }
        let token = entity.canonical_token();
        self.sweep_candidates.remove(&token);
        let digest = self.hashes.drop_state(entity)?;
        if let Some(d) = &digest {
            self.digest_memo.insert(token, d.clone());
        }
        for &(s, e) in unmerge.newly_cold.intervals() {
            self.advisor.advise(s, e - s, Advice::DontNeed);
        }
        Ok(digest)
    }

    /// Run pending secondary sweeps: actively read page-resident leading
    /// data of fully-overlapped entities into their hash states.
    pub fn run_secondary_sweeps(&mut self) -> Result<u64, Error> {
        let mut advanced = 0;
        let pending: Vec<Entity> = std::mem::take(&mut self.sweep_candidates)
            .into_values()
            .collect();
        let file = &self.file;
        let mut reader = |off: u64, len: u64| -> io::Result<Vec<u8>> {
            let mut buf = vec![0u8; len as usize];
            file.read_exact_at(&mut buf, off)?;
            Ok(buf)
        };
        for entity in pending {
            if !self.hashes.contains(&entity) {
                continue;
            }
            advanced += self
                .hashes
                .secondary_sweep(&entity, self.residency.as_mut(), &mut reader)?;
        }
        Ok(advanced)
    }

    /// Hash digest / progress for an entity: a live state if hot, the
    /// memoized digest if it completed before going cold.
    pub fn hash_status(&self, entity: &Entity) -> HashStatus {
        if self.hashes.contains(entity) {
            return HashStatus {
                digest: self.hashes.result(entity).expect("state checked"),
                offset: self.hashes.hashing_offset(entity).expect("state checked"),
            };
        }
        match self.digest_memo.get(&entity.canonical_token()) {
            Some(d) => HashStatus { digest: Some(d.clone()), offset: entity.total_size() },
            None => HashStatus { digest: None, offset: 0 },
        }
    }

    /// Per-entity advice accounting: (normal bytes, dontneed bytes) over
    /// the entity's data bytes.
    pub fn entity_advice_totals(&self, entity: &Entity) -> (u64, u64) {
        let bytes = entity.byte_set();
        let normal = bytes.intersect(&self.stack.level(0)).size();
        (normal, bytes.size() - normal)
    }

    pub fn status(&self) -> ArchiveStatus {
        let normal_size = self.stack.pressure();
        ArchiveStatus {
            normal_size,
            dontneed_size: self.end - normal_size,
            full_archive: Entity::data(0, self.end),
        }
    }

    fn check_within_archive(&self, entity: &Entity) -> Result<(), Error> {
        let bytes: ByteSet = entity.byte_set();
        if let Some(&(_, last_end)) = bytes.intervals().last() {
            if last_end > self.end {
                return Err(Error::FragmentBeyondArchive {
                    token: entity.canonical_token(),
                    end: self.end,
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::advice::RecordingAdvisor;
    use crate::opphash::digest_bytes;

    fn test_archive() -> (Archive, crate::advice::AdviceLog) {
        let (advisor, log) = RecordingAdvisor::new();
        let file = tempfile::tempfile().unwrap();
        let archive = Archive::with_backends(
            file,
            Box::new(advisor),
            Box::new(NoneResident),
            CapMinter::system(),
        )
        .unwrap();
        (archive, log)
    }

    #[test]
    fn allocations_append_at_end() {
        let (mut a, _) = test_archive();
        let c1 = a.allocate_mutable(10).unwrap();
        let c2 = a.allocate_mutable(20).unwrap();
        assert_eq!(a.mutable_state(&c1).unwrap().0, 0);
        assert_eq!(a.mutable_state(&c2).unwrap().0, 10);
        assert_eq!(a.end(), 30);
    }

    #[test]
    fn write_read_round_trip() {
        let (mut a, _) = test_archive();
        let cap = a.allocate_mutable(10).unwrap();
        a.write_mutable(&cap, 0, b"0123456789").unwrap();
        let e = a.freeze(&cap).unwrap();
        assert_eq!(e.canonical_token(), "0+10");
        assert_eq!(a.read(&e, 0, 10).unwrap(), b"0123456789");
        assert_eq!(a.read(&Entity::data(4, 4), 0, 4).unwrap(), b"4567");
    }

    #[test]
    fn write_after_freeze_fails() {
        let (mut a, _) = test_archive();
        let cap = a.allocate_mutable(4).unwrap();
        a.freeze(&cap).unwrap();
        assert!(matches!(a.write_mutable(&cap, 0, b"x"), Err(Error::Frozen(_))));
        assert!(matches!(a.freeze(&cap), Err(Error::AlreadyFrozen(_))));
    }

    #[test]
    fn write_out_of_bounds_leaves_region_unchanged() {
        let (mut a, _) = test_archive();
        let cap = a.allocate_mutable(4).unwrap();
        a.write_mutable(&cap, 0, b"abcd").unwrap();
        assert!(matches!(
            a.write_mutable(&cap, 2, b"xyz"),
            Err(Error::OutOfBounds { .. })
        ));
        let e = a.freeze(&cap).unwrap();
        assert_eq!(a.read(&e, 0, 4).unwrap(), b"abcd");
    }

    #[test]
    fn forged_capability_is_rejected() {
        let (mut a, _) = test_archive();
        a.allocate_mutable(4).unwrap();
        let forged = Capability::from_token("M-notyourtoken");
        assert!(matches!(a.write_mutable(&forged, 0, b"x"), Err(Error::InvalidCapability(_))));
        assert!(matches!(a.freeze(&forged), Err(Error::InvalidCapability(_))));
        assert!(matches!(a.release_mutable(&forged), Err(Error::InvalidCapability(_))));
    }

    #[test]
    fn zero_size_allocation_is_freezable() {
        let (mut a, _) = test_archive();
        let cap = a.allocate_mutable(0).unwrap();
        let e = a.freeze(&cap).unwrap();
        assert!(e.is_empty());
        assert_eq!(e.canonical_token(), "0+0");
        assert_eq!(a.read(&e, 0, 0).unwrap(), b"");
    }

    #[test]
    fn unwritten_frozen_region_reads_zeroes() {
        let (mut a, _) = test_archive();
        let cap = a.allocate_mutable(8).unwrap();
        let e = a.freeze(&cap).unwrap();
        assert_eq!(a.read(&e, 0, 8).unwrap(), vec![0u8; 8]);
    }

    #[test]
    fn sparse_entity_reads_zeroes_without_io() {
        let (mut a, _) = test_archive();
        let e = Entity::sparse(16);
        assert_eq!(a.read(&e, 3, 9).unwrap(), vec![0u8; 9]);
    }

    #[test]
    fn read_beyond_entity_is_out_of_bounds() {
        let (mut a, _) = test_archive();
        let cap = a.allocate_mutable(4).unwrap();
        let e = a.freeze(&cap).unwrap();
        assert!(matches!(a.read(&e, 2, 3), Err(Error::OutOfBounds { .. })));
    }

    #[test]
    fn entity_beyond_archive_is_rejected() {
        let (mut a, _) = test_archive();
        a.allocate_mutable(4).unwrap();
        let e = Entity::data(0, 100);
        assert!(matches!(a.read(&e, 0, 100), Err(Error::FragmentBeyondArchive { .. })));
        assert!(matches!(a.open_entity(&e), Err(Error::FragmentBeyondArchive { .. })));
    }

    #[test]
    fn open_close_advice_pairs_up() {
        let (mut a, log) = test_archive();
        let cap = a.allocate_mutable(100).unwrap();
        let e = a.freeze(&cap).unwrap();
        a.release_mutable(&cap).unwrap();
        log.clear();

        a.open_entity(&e).unwrap();
        a.close_entity(&e).unwrap();
        let events = log.events();
        assert_eq!(events.len(), 2);
        assert_eq!((events[0].offset, events[0].len, events[0].advice), (0, 100, Advice::Normal));
        assert_eq!((events[1].offset, events[1].len, events[1].advice), (0, 100, Advice::DontNeed));
    }

    #[test]
    fn nested_close_releases_only_the_uncovered_part() {
        let (mut a, log) = test_archive();
        let cap = a.allocate_mutable(10).unwrap();
        a.freeze(&cap).unwrap();
        a.release_mutable(&cap).unwrap();
        log.clear();

        a.open_entity(&Entity::data(0, 10)).unwrap();
        a.open_entity(&Entity::data(0, 5)).unwrap();
        a.close_entity(&Entity::data(0, 10)).unwrap();
        let last = *log.events().last().unwrap();
        assert_eq!((last.offset, last.len, last.advice), (5, 5, Advice::DontNeed));
        assert_eq!(log.net_normal_set(), a.stack().level(0));
    }

    #[test]
    fn full_read_completes_the_opportunistic_hash() {
        let (mut a, _) = test_archive();
        let cap = a.allocate_mutable(32).unwrap();
        let data: Vec<u8> = (0..32).collect();
        a.write_mutable(&cap, 0, &data).unwrap();
        let e = a.freeze(&cap).unwrap();
        // The region was hot during the writes, so its hash already
        // completed as a side effect.
        let digest = a.release_mutable(&cap).unwrap();
        assert_eq!(digest.unwrap(), digest_bytes(&data));

        a.open_entity(&e).unwrap();
        let status = a.hash_status(&e);
        assert_eq!(status.offset, 0, "re-open starts a fresh state");
        a.read(&e, 0, 32).unwrap();
        assert_eq!(a.hash_status(&e).digest.unwrap(), digest_bytes(&data));
        let digest = a.close_entity(&e).unwrap();
        assert_eq!(digest.unwrap(), digest_bytes(&data));
        // Completed digest stays readable after the entity went cold.
        assert_eq!(a.hash_status(&e).digest.unwrap(), digest_bytes(&data));
        assert_eq!(a.hash_status(&e).offset, 32);
    }

    #[test]
    fn status_accounts_every_byte() {
        let (mut a, _) = test_archive();
        assert_eq!(
            a.status(),
            ArchiveStatus { normal_size: 0, dontneed_size: 0, full_archive: Entity::empty() }
        );
        let cap = a.allocate_mutable(100).unwrap();
        let e = a.freeze(&cap).unwrap();
        // Region still hot from allocation.
        assert_eq!(a.status().normal_size, 100);
        a.release_mutable(&cap).unwrap();
        assert_eq!(
            a.status(),
            ArchiveStatus {
                normal_size: 0,
                dontneed_size: 100,
                full_archive: Entity::data(0, 100)
            }
        );
        a.open_entity(&e).unwrap();
        let status = a.status();
        assert_eq!((status.normal_size, status.dontneed_size), (100, 0));
        assert_eq!(status.normal_size + status.dontneed_size, a.end());
    }

    #[test]
    fn frozen_bytes_never_change() {
        let (mut a, _) = test_archive();
        let cap = a.allocate_mutable(16).unwrap();
        a.write_mutable(&cap, 0, b"fixed-content-16").unwrap();
        let e = a.freeze(&cap).unwrap();
        let before = digest_bytes(&a.read(&e, 0, 16).unwrap());
        // Interleave unrelated operations.
        let other = a.allocate_mutable(64).unwrap();
        a.write_mutable(&other, 0, &[0xAA; 64]).unwrap();
        a.freeze(&other).unwrap();
        a.release_mutable(&other).unwrap();
        a.open_entity(&e).unwrap();
        a.close_entity(&e).unwrap();
        let after = digest_bytes(&a.read(&e, 0, 16).unwrap());
        assert_eq!(before, after);
    }

    #[test]
    fn secondary_sweep_advances_covered_entity() {
        let (advisor, _log) = RecordingAdvisor::new();
        let file = tempfile::tempfile().unwrap();
        let mut a = Archive::with_backends(
            file,
            Box::new(advisor),
            Box::new(crate::opphash::ScriptedResidency(ByteSet::interval(0, 1 << 20))),
            CapMinter::system(),
        )
        .unwrap();
        let cap = a.allocate_mutable(64).unwrap();
        let data: Vec<u8> = (0..64).collect();
        a.write_mutable(&cap, 0, &data).unwrap();
        let e = a.freeze(&cap).unwrap();
        // Covered sub-entity: fully overlapped open triggers a sweep that
        // hashes it straight out of the (scripted) page cache.
        let sub = Entity::data(8, 16);
        a.open_entity(&sub).unwrap();
        assert_eq!(a.hash_status(&sub).digest.unwrap(), digest_bytes(&data[8..24]));
        a.close_entity(&sub).unwrap();
        a.release_mutable(&cap).unwrap();
    }
}
