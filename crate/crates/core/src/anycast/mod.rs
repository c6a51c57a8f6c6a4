//! The local anycast message bus.
//!
//! Actors hold sortable sets of pending jobs; workers register for an
//! actor and pick jobs under a policy; each job carries the five-field
//! routing payload (carve-path, mime type, extension, next actor, router
//! state). The bus shares one mutation context with the archive so every
//! transition also updates the reference stack, the hash collection and
//! the page advisor, and appends one trusted provenance record.

mod journal;
pub mod policy;

pub use journal::{parse_records, Journal, JournalBuffer, Record, RecordKind};

use crate::archive::Archive;
use crate::capability::{redact, CapKind, Capability};
use crate::carvpath::{self, Entity, LongPathTable};
use policy::{ActorPickInputs, JobPickInputs};
use std::collections::{BTreeMap, HashMap};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("bad actor name: {0:?}")]
    BadActorName(String),
    #[error("unknown actor: {0}")]
    UnknownActor(String),
    #[error("capability does not designate anything: {0}")]
    InvalidCapability(String),
    #[error("worker already has a job in progress")]
    WorkerBusy,
    #[error("unknown policy letter: {0:?}")]
    UnknownPolicyLetter(char),
    #[error("job has no current mutable")]
    NoCurrentMutable,
    #[error("invalid value: {0}")]
    InvalidValue(String),
    #[error(transparent)]
    Carvpath(#[from] carvpath::Error),
    #[error(transparent)]
    Archive(#[from] crate::archive::Error),
    #[error("journal write failed: {0}")]
    Journal(#[from] std::io::Error),
}

pub const DEFAULT_WEIGHT: u64 = 100;
pub const DEFAULT_OVERFLOW: u64 = 10;
pub const DEFAULT_JOB_POLICY: &str = "S";
pub const DEFAULT_ACTOR_POLICY: &str = "C";

/// The five-field routing payload plus the admission sequence.
#[derive(Clone, Debug)]
pub struct JobRecord {
    pub entity: Entity,
    pub mime_type: String,
    pub extension: String,
    pub next_actor: String,
    pub router_state: String,
    pub sequence: u64,
}

struct ActorState {
    weight: u64,
    overflow: u64,
    pending: BTreeMap<u64, JobRecord>,
    pending_volume: u64,
    worker_count: u64,
    submitted: u64,
    in_progress: u64,
    completed: u64,
    forwarded_out: u64,
}

impl ActorState {
    fn new() -> ActorState {
        ActorState {
            weight: DEFAULT_WEIGHT,
            overflow: DEFAULT_OVERFLOW,
            pending: BTreeMap::new(),
            pending_volume: 0,
            worker_count: 0,
            submitted: 0,
            in_progress: 0,
            completed: 0,
            forwarded_out: 0,
        }
    }

    fn enqueue(&mut self, record: JobRecord) {
        self.pending_volume += record.entity.total_size();
        self.pending.insert(record.sequence, record);
    }

    fn dequeue(&mut self, sequence: u64) -> JobRecord {
        let record = self.pending.remove(&sequence).expect("sequence present");
        self.pending_volume -= record.entity.total_size();
        record
    }
}

struct WorkerState {
    actor: String,
    job_policy: String,
    actor_policy: String,
    current_job: Option<Capability>,
}

struct JobState {
    record: JobRecord,
    actor: String,
    worker: Capability,
    mutables: Vec<Capability>,
    current_mutable: Option<Capability>,
}

/// Point-in-time figures for one actor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ActorStatus {
    pub worker_count: u64,
    pub set_size: u64,
    pub set_volume: u64,
}

/// Lifetime accounting for one actor; `submitted` covers everything that
/// ever entered its set (including forwarded-in jobs and kickstarts).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ActorAccounting {
    pub submitted: u64,
    pub pending: u64,
    pub in_progress: u64,
    pub completed: u64,
    pub forwarded_out: u64,
}

pub struct Bus {
    archive: Archive,
    table: LongPathTable,
    journal: Journal,
    actors: BTreeMap<String, ActorState>,
    workers: HashMap<Capability, WorkerState>,
    jobs: HashMap<Capability, JobState>,
    next_sequence: u64,
}

fn valid_actor_name(name: &str) -> bool {
    !name.is_empty()
        && name.len() <= 64
        && name
            .bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_' || b == b'-')
}

impl Bus {
    pub fn new(archive: Archive, journal: Journal) -> Bus {
        Bus {
            archive,
            table: LongPathTable::in_memory(),
            journal,
            actors: BTreeMap::new(),
            workers: HashMap::new(),
            jobs: HashMap::new(),
            next_sequence: 0,
        }
    }

    pub fn with_table(mut self, table: LongPathTable) -> Bus {
        self.table = table;
        self
    }

    pub fn archive(&self) -> &Archive {
        &self.archive
    }

    pub fn archive_mut(&mut self) -> &mut Archive {
        &mut self.archive
    }

    pub fn table(&self) -> &LongPathTable {
        &self.table
    }

    /// Register a worker for an actor, creating the actor with default
    /// weight and overflow on first reference.
    pub fn register_worker(&mut self, actor_name: &str) -> Result<Capability, Error> {
        let actor = self.actor_entry(actor_name)?;
        actor.worker_count += 1;
        let cap = self.archive.minter_mut().mint(CapKind::Worker);
        self.workers.insert(
            cap.clone(),
            WorkerState {
                actor: actor_name.to_owned(),
                job_policy: DEFAULT_JOB_POLICY.to_owned(),
                actor_policy: DEFAULT_ACTOR_POLICY.to_owned(),
                current_job: None,
            },
        );
        self.journal.append(Record {
            ts: 0.0,
            kind: RecordKind::Register,
            actor: actor_name.to_owned(),
            worker: Some(redact(cap.as_str())),
            job: None,
            carvpath: None,
            mime: None,
            ext: None,
            state: None,
            digest: None,
        })?;
        Ok(cap)
    }

    /// Invalidate a worker capability. An in-progress job is returned to
    /// its actor's set under its original sequence; its unfrozen mutable
    /// data is abandoned.
    pub fn unregister(&mut self, cap: &Capability) -> Result<(), Error> {
        let worker = self
            .workers
            .remove(cap)
            .ok_or_else(|| Error::InvalidCapability(redact(cap.as_str())))?;
        if let Some(job_cap) = &worker.current_job {
            let state = self.jobs.remove(job_cap).expect("current job tracked");
            self.release_job_mutables(&state)?;
            let actor = self.actors.get_mut(&state.actor).expect("actor exists");
            actor.in_progress -= 1;
            actor.enqueue(state.record);
        }
        let actor = self.actors.get_mut(&worker.actor).expect("actor exists");
        actor.worker_count -= 1;
        self.journal.append(Record {
            ts: 0.0,
            kind: RecordKind::Unregister,
            actor: worker.actor.clone(),
            worker: Some(redact(cap.as_str())),
            job: None,
            carvpath: None,
            mime: None,
            ext: None,
            state: None,
            digest: None,
        })?;
        Ok(())
    }

    /// Submit a job carrying the five-field payload; the entity becomes
    /// part of an active tool-chain and therefore hot.
    pub fn submit_job(
        &mut self,
        entity: &Entity,
        next_actor: &str,
        router_state: &str,
        mime_type: &str,
        extension: &str,
    ) -> Result<(), Error> {
        self.actor_entry(next_actor)?;
        self.archive.open_entity(entity)?;
        let sequence = self.next_sequence();
        let record = JobRecord {
            entity: entity.clone(),
            mime_type: mime_type.to_owned(),
            extension: extension.to_owned(),
            next_actor: next_actor.to_owned(),
            router_state: router_state.to_owned(),
            sequence,
        };
        let actor = self.actors.get_mut(next_actor).expect("actor just created");
        actor.submitted += 1;
        actor.enqueue(record);
        self.journal.append(Record {
            ts: 0.0,
            kind: RecordKind::Submit,
            actor: next_actor.to_owned(),
            worker: None,
            job: None,
            carvpath: Some(entity.canonical_token()),
            mime: some_nonempty(mime_type),
            ext: some_nonempty(extension),
            state: some_nonempty(router_state),
            digest: None,
        })?;
        Ok(())
    }

    /// Pick the best pending job under the worker's policy and hand out a
    /// job capability, or mint a kick-start job when the policy says `K`.
    /// Non-blocking: an empty set yields `None`.
    pub fn accept_job(&mut self, cap: &Capability) -> Result<Option<Capability>, Error> {
        let worker = self
            .workers
            .get(cap)
            .ok_or_else(|| Error::InvalidCapability(redact(cap.as_str())))?;
        if worker.current_job.is_some() {
            return Err(Error::WorkerBusy);
        }
        let actor_name = worker.actor.clone();
        let policy = worker.job_policy.clone();

        let record = if policy.contains('K') {
            let sequence = self.next_sequence();
            self.archive.open_entity(&Entity::empty())?;
            let actor = self.actors.get_mut(&actor_name).expect("actor exists");
            actor.submitted += 1;
            JobRecord {
                entity: Entity::empty(),
                mime_type: String::new(),
                extension: String::new(),
                next_actor: actor_name.clone(),
                router_state: String::new(),
                sequence,
            }
        } else {
            let Some(sequence) = self.pick_sequence(&actor_name, &policy)? else {
                return Ok(None);
            };
            self.actors
                .get_mut(&actor_name)
                .expect("actor exists")
                .dequeue(sequence)
        };

        let job_cap = self.archive.minter_mut().mint(CapKind::Job);
        let token = record.entity.canonical_token();
        let actor = self.actors.get_mut(&actor_name).expect("actor exists");
        actor.in_progress += 1;
        self.jobs.insert(
            job_cap.clone(),
            JobState {
                record,
                actor: actor_name.clone(),
                worker: cap.clone(),
                mutables: Vec::new(),
                current_mutable: None,
            },
        );
        self.workers.get_mut(cap).expect("worker exists").current_job = Some(job_cap.clone());
        self.journal.append(Record {
            ts: 0.0,
            kind: RecordKind::Accept,
            actor: actor_name,
            worker: Some(redact(cap.as_str())),
            job: Some(redact(job_cap.as_str())),
            carvpath: Some(token),
            mime: None,
            ext: None,
            state: None,
            digest: None,
        })?;
        Ok(Some(job_cap))
    }

    /// Inputs for the policy letters, for one pending job of an actor.
    pub fn job_pick_inputs(&self, record: &JobRecord) -> JobPickInputs {
        let stats = self.archive.stack().count_stats(&record.entity);
        let max_refcount = self
            .archive
            .stack()
            .refcount_range(&record.entity)
            .map(|(_, max)| max)
            .unwrap_or(0);
        let next_hash_offset = self
            .archive
            .hashes()
            .next_needed_archive_offset(&record.entity)
            .unwrap_or(None);
        JobPickInputs {
            stats,
            max_refcount,
            next_hash_offset,
            total_size: record.entity.total_size(),
            sequence: record.sequence,
        }
    }

    fn pick_sequence(&self, actor_name: &str, policy: &str) -> Result<Option<u64>, Error> {
        policy::validate_job_policy(policy).map_err(Error::UnknownPolicyLetter)?;
        let actor = self
            .actors
            .get(actor_name)
            .ok_or_else(|| Error::UnknownActor(actor_name.to_owned()))?;
        let mut best: Option<JobPickInputs> = None;
        for record in actor.pending.values() {
            let inputs = self.job_pick_inputs(record);
            best = Some(match best {
                None => inputs,
                Some(cur) => {
                    if policy::compare_jobs(&inputs, &cur, policy).is_lt() {
                        inputs
                    } else {
                        cur
                    }
                }
            });
        }
        Ok(best.map(|b| b.sequence))
    }

    /// Select the actor a load-balancing worker should pull from, under
    /// its actor policy. Only actors whose set size exceeds their overflow
    /// threshold are eligible; `None` when no actor qualifies.
    pub fn select_actor(&self, cap: &Capability) -> Result<Option<String>, Error> {
        let worker = self
            .workers
            .get(cap)
            .ok_or_else(|| Error::InvalidCapability(redact(cap.as_str())))?;
        let policy = &worker.actor_policy;
        policy::validate_actor_policy(policy).map_err(Error::UnknownPolicyLetter)?;
        let mut best: Option<ActorPickInputs> = None;
        for (name, actor) in &self.actors {
            if actor.pending.len() as u64 <= actor.overflow {
                continue;
            }
            let inputs = ActorPickInputs {
                name: name.clone(),
                weight: actor.weight,
                set_size: actor.pending.len() as u64,
                set_volume: actor.pending_volume,
            };
            best = Some(match best {
                None => inputs,
                Some(cur) => {
                    if policy::compare_actors(&inputs, &cur, policy).is_lt() {
                        inputs
                    } else {
                        cur
                    }
                }
            });
        }
        Ok(best.map(|b| b.name))
    }

    /// Close the job for the current worker and move it to the named
    /// actor's set with fresh routing fields and a new sequence. The
    /// entity's hot reference transfers with it.
    pub fn forward(
        &mut self,
        job_cap: &Capability,
        next_actor: &str,
        router_state: &str,
    ) -> Result<(), Error> {
        if !self.jobs.contains_key(job_cap) {
            return Err(Error::InvalidCapability(redact(job_cap.as_str())));
        }
        self.actor_entry(next_actor)?;
        let mut state = self.jobs.remove(job_cap).expect("checked above");
        self.release_job_mutables(&state)?;
        self.workers
            .get_mut(&state.worker)
            .expect("worker tracked")
            .current_job = None;
        let origin = self.actors.get_mut(&state.actor).expect("actor exists");
        origin.in_progress -= 1;
        origin.forwarded_out += 1;

        state.record.next_actor = next_actor.to_owned();
        state.record.router_state = router_state.to_owned();
        state.record.sequence = self.next_sequence();
        let token = state.record.entity.canonical_token();
        let target = self.actors.get_mut(next_actor).expect("actor just created");
        target.submitted += 1;
        target.enqueue(state.record);
        self.journal.append(Record {
            ts: 0.0,
            kind: RecordKind::Forward,
            actor: next_actor.to_owned(),
            worker: Some(redact(state.worker.as_str())),
            job: Some(redact(job_cap.as_str())),
            carvpath: Some(token),
            mime: None,
            ext: None,
            state: some_nonempty(router_state),
            digest: None,
        })?;
        Ok(())
    }

    /// Terminal hop: the tool-chain ends for this job. The entity's hot
    /// reference is dropped and a completed opportunistic digest, if any,
    /// is journaled.
    pub fn complete_job(&mut self, job_cap: &Capability) -> Result<(), Error> {
        let state = self
            .jobs
            .remove(job_cap)
            .ok_or_else(|| Error::InvalidCapability(redact(job_cap.as_str())))?;
        self.release_job_mutables(&state)?;
        self.workers
            .get_mut(&state.worker)
            .expect("worker tracked")
            .current_job = None;
        let actor = self.actors.get_mut(&state.actor).expect("actor exists");
        actor.in_progress -= 1;
        actor.completed += 1;
        let digest = self.archive.close_entity(&state.record.entity)?;
        self.journal.append(Record {
            ts: 0.0,
            kind: RecordKind::Complete,
            actor: state.actor.clone(),
            worker: Some(redact(state.worker.as_str())),
            job: Some(redact(job_cap.as_str())),
            carvpath: Some(state.record.entity.canonical_token()),
            mime: None,
            ext: None,
            state: None,
            digest,
        })?;
        Ok(())
    }

    /// Submit a child entity derived from the job's entity. A token
    /// starting with `/` is absolute in the archive address space; any
    /// other token is flattened against the job's entity.
    pub fn submit_child(
        &mut self,
        job_cap: &Capability,
        child_carvpath: &str,
        next_actor: &str,
        router_state: &str,
        mime_type: &str,
        extension: &str,
    ) -> Result<(), Error> {
        let state = self
            .jobs
            .get(job_cap)
            .ok_or_else(|| Error::InvalidCapability(redact(job_cap.as_str())))?;
        let child = match child_carvpath.strip_prefix('/') {
            Some(absolute) => carvpath::resolve_token(absolute, &self.table)?,
            None => {
                let relative = carvpath::resolve_token(child_carvpath, &self.table)?;
                carvpath::flatten(&state.record.entity, &relative)?
            }
        };
        let worker = redact(state.worker.as_str());
        let job = redact(job_cap.as_str());
        self.actor_entry(next_actor)?;
        self.archive.open_entity(&child)?;
        let sequence = self.next_sequence();
        let record = JobRecord {
            entity: child.clone(),
            mime_type: mime_type.to_owned(),
            extension: extension.to_owned(),
            next_actor: next_actor.to_owned(),
            router_state: router_state.to_owned(),
            sequence,
        };
        let actor = self.actors.get_mut(next_actor).expect("actor just created");
        actor.submitted += 1;
        actor.enqueue(record);
        self.journal.append(Record {
            ts: 0.0,
            kind: RecordKind::Child,
            actor: next_actor.to_owned(),
            worker: Some(worker),
            job: Some(job),
            carvpath: Some(child.canonical_token()),
            mime: some_nonempty(mime_type),
            ext: some_nonempty(extension),
            state: some_nonempty(router_state),
            digest: None,
        })?;
        Ok(())
    }

    /// Allocate a fresh mutable region under the job. A previous unfrozen
    /// mutable is abandoned (frozen without a journal record).
    pub fn job_mutable(&mut self, job_cap: &Capability, size: u64) -> Result<Capability, Error> {
        if !self.jobs.contains_key(job_cap) {
            return Err(Error::InvalidCapability(redact(job_cap.as_str())));
        }
        let previous = self.jobs[job_cap].current_mutable.clone();
        if let Some(prev) = previous {
            if let Some((_, _, frozen)) = self.archive.mutable_state(&prev) {
                if !frozen {
                    self.archive.freeze(&prev)?;
                }
            }
        }
        let cap = self.archive.allocate_mutable(size)?;
        let state = self.jobs.get_mut(job_cap).expect("checked above");
        state.mutables.push(cap.clone());
        state.current_mutable = Some(cap.clone());
        Ok(cap)
    }

    /// Freeze the job's current mutable into an immutable entity.
    pub fn job_frozen(&mut self, job_cap: &Capability) -> Result<Entity, Error> {
        let state = self
            .jobs
            .get(job_cap)
            .ok_or_else(|| Error::InvalidCapability(redact(job_cap.as_str())))?;
        let mutable = state.current_mutable.clone().ok_or(Error::NoCurrentMutable)?;
        let worker = redact(state.worker.as_str());
        let actor = state.actor.clone();
        let entity = self.archive.freeze(&mutable)?;
        self.journal.append(Record {
            ts: 0.0,
            kind: RecordKind::Freeze,
            actor,
            worker: Some(worker),
            job: Some(redact(job_cap.as_str())),
            carvpath: Some(entity.canonical_token()),
            mime: None,
            ext: None,
            state: None,
            digest: None,
        })?;
        Ok(entity)
    }

    /// The capability of the job's most recently allocated mutable.
    pub fn current_mutable(&self, job_cap: &Capability) -> Result<Option<Capability>, Error> {
        let state = self
            .jobs
            .get(job_cap)
            .ok_or_else(|| Error::InvalidCapability(redact(job_cap.as_str())))?;
        Ok(state.current_mutable.clone())
    }

    /// Routing payload of an in-progress job.
    pub fn job_record(&self, job_cap: &Capability) -> Result<&JobRecord, Error> {
        self.jobs
            .get(job_cap)
            .map(|s| &s.record)
            .ok_or_else(|| Error::InvalidCapability(redact(job_cap.as_str())))
    }

    pub fn actor_status(&self, name: &str) -> Result<ActorStatus, Error> {
        let actor = self
            .actors
            .get(name)
            .ok_or_else(|| Error::UnknownActor(name.to_owned()))?;
        Ok(ActorStatus {
            worker_count: actor.worker_count,
            set_size: actor.pending.len() as u64,
            set_volume: actor.pending_volume,
        })
    }

    pub fn actor_accounting(&self, name: &str) -> Result<ActorAccounting, Error> {
        let actor = self
            .actors
            .get(name)
            .ok_or_else(|| Error::UnknownActor(name.to_owned()))?;
        Ok(ActorAccounting {
            submitted: actor.submitted,
            pending: actor.pending.len() as u64,
            in_progress: actor.in_progress,
            completed: actor.completed,
            forwarded_out: actor.forwarded_out,
        })
    }

    pub fn actor_exists(&self, name: &str) -> bool {
        self.actors.contains_key(name)
    }

    pub fn worker_exists(&self, cap: &Capability) -> bool {
        self.workers.contains_key(cap)
    }

    pub fn job_exists(&self, cap: &Capability) -> bool {
        self.jobs.contains_key(cap)
    }

    pub fn actor_weight(&self, name: &str) -> Result<u64, Error> {
        self.actors
            .get(name)
            .map(|a| a.weight)
            .ok_or_else(|| Error::UnknownActor(name.to_owned()))
    }

    pub fn actor_overflow(&self, name: &str) -> Result<u64, Error> {
        self.actors
            .get(name)
            .map(|a| a.overflow)
            .ok_or_else(|| Error::UnknownActor(name.to_owned()))
    }

    pub fn set_actor_weight(&mut self, name: &str, weight: u64) -> Result<(), Error> {
        if weight == 0 {
            return Err(Error::InvalidValue("weight must be positive".to_owned()));
        }
        self.actor_entry(name)?.weight = weight;
        Ok(())
    }

    pub fn set_actor_overflow(&mut self, name: &str, overflow: u64) -> Result<(), Error> {
        self.actor_entry(name)?.overflow = overflow;
        Ok(())
    }

    pub fn set_job_policy(&mut self, cap: &Capability, policy: &str) -> Result<(), Error> {
        policy::validate_job_policy(policy).map_err(Error::UnknownPolicyLetter)?;
        let worker = self
            .workers
            .get_mut(cap)
            .ok_or_else(|| Error::InvalidCapability(redact(cap.as_str())))?;
        worker.job_policy = policy.to_owned();
        Ok(())
    }

    pub fn set_actor_policy(&mut self, cap: &Capability, policy: &str) -> Result<(), Error> {
        policy::validate_actor_policy(policy).map_err(Error::UnknownPolicyLetter)?;
        let worker = self
            .workers
            .get_mut(cap)
            .ok_or_else(|| Error::InvalidCapability(redact(cap.as_str())))?;
        worker.actor_policy = policy.to_owned();
        Ok(())
    }

    fn release_job_mutables(&mut self, state: &JobState) -> Result<(), Error> {
        for cap in &state.mutables {
            if self.archive.mutable_state(cap).is_some() {
                self.archive.release_mutable(cap)?;
            }
        }
        Ok(())
    }

    fn actor_entry(&mut self, name: &str) -> Result<&mut ActorState, Error> {
        if !valid_actor_name(name) {
            return Err(Error::BadActorName(name.to_owned()));
        }
        Ok(self.actors.entry(name.to_owned()).or_insert_with(ActorState::new))
    }

    fn next_sequence(&mut self) -> u64 {
        let seq = self.next_sequence;
        self.next_sequence += 1;
        seq
    }
}

fn some_nonempty(value: &str) -> Option<String> {
    if value.is_empty() {
        None
    } else {
        Some(value.to_owned())
    }
}
