//! Filesystem-shaped API over the archive and bus.
//!
//! Every capability, entity and control surface appears as a path under a
//! virtual root: `mattockfs.ctl` plus the `carvpath/`, `actor/`,
//! `worker/`, `job/` and `mutable/` directories. Operations are dispatched
//! through extended attributes with semicolon-separated values, and nested
//! carve-paths resolve to relative symlinks onto their flattened form.
//! The facade is transport-agnostic: a mount adapter can sit on top, and
//! tests drive it directly.

use crate::anycast::{self, Bus};
use crate::archive;
use crate::capability::Capability;
use crate::carvpath::{self, Entity};
use std::collections::HashMap;
use std::sync::Mutex;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no such node: {0}")]
    NotFound(String),
    #[error("access denied: {0}")]
    AccessDenied(String),
    #[error("unknown attribute {name:?} for this node")]
    UnknownAttribute { name: String },
    #[error("bad attribute value: {0}")]
    BadValue(String),
    #[error("node is read-only")]
    ReadOnly,
    #[error("stale file handle")]
    StaleHandle,
    #[error(transparent)]
    Bus(#[from] anycast::Error),
    #[error(transparent)]
    Archive(#[from] archive::Error),
}

/// What a path resolves to.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Node {
    RootCtl,
    CarvPathFile { entity: Entity, extension: String },
    CarvPathDir { entity: Entity },
    FlattenLink { target: String },
    ActorCtl { name: String },
    ActorInf { name: String },
    WorkerCtl { cap: Capability },
    JobCtl { cap: Capability },
    MutableDat { cap: Capability },
    OpaqueDir { name: &'static str },
}

/// Stat-style metadata for a node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeStat {
    pub size: u64,
    pub mode: u32,
    pub is_dir: bool,
    pub is_symlink: bool,
}

enum HandleTarget {
    Entity(Entity),
    Mutable(Capability),
}

struct Inner {
    bus: Bus,
    handles: HashMap<u64, HandleTarget>,
    next_handle: u64,
}

/// The facade. Each request executes one linearizable core operation;
/// the only gateway-held state is open-handle bookkeeping.
pub struct Gateway {
    inner: Mutex<Inner>,
}

const OPAQUE_DIRS: [&str; 5] = ["carvpath", "actor", "worker", "job", "mutable"];

impl Gateway {
    pub fn new(bus: Bus) -> Gateway {
        Gateway {
            inner: Mutex::new(Inner { bus, handles: HashMap::new(), next_handle: 1 }),
        }
    }

    /// Run a closure against the underlying bus, inside the gateway lock.
    pub fn with_bus<T>(&self, f: impl FnOnce(&mut Bus) -> T) -> T {
        f(&mut self.lock().bus)
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().expect("gateway lock poisoned")
    }

    /// Resolve an absolute path within the mount to a node.
    pub fn resolve(&self, path: &str) -> Result<Node, Error> {
        self.lock().resolve(path)
    }

    /// Read an extended attribute. Bare names and `user.`-prefixed names
    /// are both accepted.
    pub fn getxattr(&self, path: &str, name: &str) -> Result<String, Error> {
        let mut inner = self.lock();
        let node = inner.resolve(path)?;
        inner.getxattr(&node, strip_user(name))
    }

    /// Write an extended attribute.
    pub fn setxattr(&self, path: &str, name: &str, value: &str) -> Result<(), Error> {
        let mut inner = self.lock();
        let node = inner.resolve(path)?;
        inner.setxattr(&node, strip_user(name), value)
    }

    /// Open a pseudo file. Opening a carve-path file takes a hot
    /// reference on its entity.
    pub fn open(&self, path: &str) -> Result<u64, Error> {
        let mut inner = self.lock();
        let node = inner.resolve(path)?;
        let target = match node {
            Node::CarvPathFile { entity, .. } => {
                inner.bus.archive_mut().open_entity(&entity)?;
                HandleTarget::Entity(entity)
            }
            Node::MutableDat { cap } => HandleTarget::Mutable(cap),
            _ => return Err(Error::AccessDenied(path.to_owned())),
        };
        let handle = inner.next_handle;
        inner.next_handle += 1;
        inner.handles.insert(handle, target);
        Ok(handle)
    }

    /// Read from an open handle; reads feed the opportunistic hashes.
    pub fn read(&self, handle: u64, offset: u64, len: u64) -> Result<Vec<u8>, Error> {
        let mut inner = self.lock();
        let entity = match inner.handles.get(&handle) {
            Some(HandleTarget::Entity(entity)) => entity.clone(),
            Some(HandleTarget::Mutable(cap)) => {
                let (off, size, _) = inner
                    .bus
                    .archive()
                    .mutable_state(cap)
                    .ok_or(Error::StaleHandle)?;
                Entity::data(off, size)
            }
            None => return Err(Error::StaleHandle),
        };
        Ok(inner.bus.archive_mut().read(&entity, offset, len)?)
    }

    /// Write through a mutable-data handle. Carve-path files are read-only.
    pub fn write(&self, handle: u64, offset: u64, data: &[u8]) -> Result<(), Error> {
        let mut inner = self.lock();
        let cap = match inner.handles.get(&handle) {
            Some(HandleTarget::Mutable(cap)) => cap.clone(),
            Some(HandleTarget::Entity(_)) => return Err(Error::ReadOnly),
            None => return Err(Error::StaleHandle),
        };
        Ok(inner.bus.archive_mut().write_mutable(&cap, offset, data)?)
    }

    /// Close a handle, dropping the entity's hot reference when it was a
    /// carve-path file.
    pub fn close(&self, handle: u64) -> Result<(), Error> {
        let mut inner = self.lock();
        match inner.handles.remove(&handle) {
            Some(HandleTarget::Entity(entity)) => {
                inner.bus.archive_mut().close_entity(&entity)?;
                Ok(())
            }
            Some(HandleTarget::Mutable(_)) => Ok(()),
            None => Err(Error::StaleHandle),
        }
    }

    /// Symlink target of a flattening link.
    pub fn readlink(&self, path: &str) -> Result<String, Error> {
        match self.resolve(path)? {
            Node::FlattenLink { target } => Ok(target),
            _ => Err(Error::NotFound(path.to_owned())),
        }
    }

    pub fn stat(&self, path: &str) -> Result<NodeStat, Error> {
        let mut inner = self.lock();
        let node = inner.resolve(path)?;
        let stat = match node {
            Node::RootCtl => NodeStat { size: 0, mode: 0o444, is_dir: false, is_symlink: false },
            Node::CarvPathFile { entity, .. } => {
                NodeStat { size: entity.total_size(), mode: 0o444, is_dir: false, is_symlink: false }
            }
            Node::CarvPathDir { entity } => {
                NodeStat { size: entity.total_size(), mode: 0o111, is_dir: true, is_symlink: false }
            }
            Node::FlattenLink { target } => {
                NodeStat { size: target.len() as u64, mode: 0o777, is_dir: false, is_symlink: true }
            }
            Node::ActorCtl { .. } | Node::ActorInf { .. } | Node::WorkerCtl { .. } | Node::JobCtl { .. } => {
                NodeStat { size: 0, mode: 0o644, is_dir: false, is_symlink: false }
            }
            Node::MutableDat { cap } => {
                let (_, size, frozen) =
                    inner.bus.archive().mutable_state(&cap).ok_or(Error::StaleHandle)?;
                let mode = if frozen { 0o444 } else { 0o644 };
                NodeStat { size, mode, is_dir: false, is_symlink: false }
            }
            Node::OpaqueDir { .. } => {
                NodeStat { size: 0, mode: 0o111, is_dir: true, is_symlink: false }
            }
        };
        Ok(stat)
    }

    /// Directory listing. The control directories are execute-only and
    /// refuse listing; resolution of their members still succeeds.
    pub fn list(&self, path: &str) -> Result<Vec<String>, Error> {
        if path == "/" {
            let mut entries: Vec<String> =
                OPAQUE_DIRS.iter().map(|s| (*s).to_owned()).collect();
            entries.insert(0, "mattockfs.ctl".to_owned());
            return Ok(entries);
        }
        match self.resolve(path)? {
            Node::OpaqueDir { name } => Err(Error::AccessDenied(name.to_owned())),
            Node::CarvPathDir { .. } => Err(Error::AccessDenied(path.to_owned())),
            _ => Err(Error::NotFound(path.to_owned())),
        }
    }
}

fn strip_user(name: &str) -> &str {
    name.strip_prefix("user.").unwrap_or(name)
}

/// Split `tok.ext` at the first dot. Tokens never contain dots, so the
/// remainder (which may itself contain dots) is the extension.
fn split_extension(name: &str) -> Result<(&str, Option<&str>), ()> {
    match name.split_once('.') {
        None => Ok((name, None)),
        Some((_, "")) => Err(()),
        Some((base, ext)) => Ok((base, Some(ext))),
    }
}

impl Inner {
    fn resolve(&mut self, path: &str) -> Result<Node, Error> {
        let not_found = || Error::NotFound(path.to_owned());
        let rel = path.strip_prefix('/').ok_or_else(not_found)?;
        let parts: Vec<&str> = if rel.is_empty() { Vec::new() } else { rel.split('/').collect() };
        match parts.as_slice() {
            [] => Ok(Node::OpaqueDir { name: "" }),
            ["mattockfs.ctl"] => Ok(Node::RootCtl),
            [dir] if OPAQUE_DIRS.contains(dir) => {
                let name = OPAQUE_DIRS.iter().find(|d| *d == dir).expect("matched");
                Ok(Node::OpaqueDir { name })
            }
            ["carvpath", token] => {
                let (base, ext) = split_extension(token).map_err(|_| not_found())?;
                let entity = self.parse_bounded(base).ok_or_else(not_found)?;
                match ext {
                    Some(ext) => {
                        Ok(Node::CarvPathFile { entity, extension: ext.to_owned() })
                    }
                    None => Ok(Node::CarvPathDir { entity }),
                }
            }
            ["carvpath", parent_tok, child_tok] => {
                let (parent_base, parent_ext) =
                    split_extension(parent_tok).map_err(|_| not_found())?;
                if parent_ext.is_some() {
                    return Err(not_found());
                }
                let (child_base, child_ext) =
                    split_extension(child_tok).map_err(|_| not_found())?;
                let parent = self.parse_bounded(parent_base).ok_or_else(not_found)?;
                let child =
                    carvpath::parse_token(child_base, self.bus.table()).map_err(|_| not_found())?;
                let flat = carvpath::flatten(&parent, &child).map_err(|_| not_found())?;
                let token =
                    carvpath::serialize(&flat, self.bus.table()).map_err(|_| not_found())?;
                let suffix = child_ext.map(|e| format!(".{e}")).unwrap_or_default();
                Ok(Node::FlattenLink { target: format!("../{token}{suffix}") })
            }
            ["actor", entry] => match split_extension(entry).map_err(|_| not_found())? {
                (name, Some("ctl")) => Ok(Node::ActorCtl { name: name.to_owned() }),
                (name, Some("inf")) => Ok(Node::ActorInf { name: name.to_owned() }),
                _ => Err(not_found()),
            },
            ["worker", entry] => match split_extension(entry).map_err(|_| not_found())? {
                (token, Some("ctl")) => {
                    let cap = Capability::from_token(token);
                    if self.bus.worker_exists(&cap) {
                        Ok(Node::WorkerCtl { cap })
                    } else {
                        Err(not_found())
                    }
                }
                _ => Err(not_found()),
            },
            ["job", entry] => match split_extension(entry).map_err(|_| not_found())? {
                (token, Some("ctl")) => {
                    let cap = Capability::from_token(token);
                    if self.bus.job_exists(&cap) {
                        Ok(Node::JobCtl { cap })
                    } else {
                        Err(not_found())
                    }
                }
                _ => Err(not_found()),
            },
            ["mutable", entry] => match split_extension(entry).map_err(|_| not_found())? {
                (token, Some("dat")) => {
                    let cap = Capability::from_token(token);
                    if self.bus.archive().mutable_state(&cap).is_some() {
                        Ok(Node::MutableDat { cap })
                    } else {
                        Err(not_found())
                    }
                }
                _ => Err(not_found()),
            },
            _ => Err(not_found()),
        }
    }

    /// Parse a level token and require its data to fall inside the archive.
    fn parse_bounded(&self, token: &str) -> Option<Entity> {
        let entity = carvpath::parse_token(token, self.bus.table()).ok()?;
        let end = self.bus.archive().end();
        match entity.byte_set().intervals().last() {
            Some(&(_, last_end)) if last_end > end => None,
            _ => Some(entity),
        }
    }

    fn getxattr(&mut self, node: &Node, name: &str) -> Result<String, Error> {
        match node {
            Node::RootCtl => match name {
                "full_archive" => {
                    let status = self.bus.archive().status();
                    Ok(carvpath::serialize(&status.full_archive, self.bus.table())
                        .map_err(anycast::Error::from)?)
                }
                "fadvise_status" => {
                    let status = self.bus.archive().status();
                    Ok(format!("{};{}", status.normal_size, status.dontneed_size))
                }
                _ => Err(unknown(name)),
            },
            Node::CarvPathFile { entity, .. } | Node::CarvPathDir { entity } => match name {
                "opportunistic_hash" => {
                    let status = self.bus.archive().hash_status(entity);
                    Ok(format!("{};{}", status.digest.unwrap_or_default(), status.offset))
                }
                "fadvise_status" => {
                    let (normal, dontneed) = self.bus.archive().entity_advice_totals(entity);
                    Ok(format!("{normal};{dontneed}"))
                }
                _ => Err(unknown(name)),
            },
            Node::ActorCtl { name: actor } => match name {
                // A fresh worker representation is minted on every read.
                "register_worker" => Ok(self.bus.register_worker(actor)?.as_str().to_owned()),
                "weight" => Ok(self.bus.actor_weight(actor)?.to_string()),
                "overflow" => Ok(self.bus.actor_overflow(actor)?.to_string()),
                _ => Err(unknown(name)),
            },
            Node::ActorInf { name: actor } => match name {
                "worker_count" => Ok(self.bus.actor_status(actor)?.worker_count.to_string()),
                "anycast_status" => {
                    let status = self.bus.actor_status(actor)?;
                    Ok(format!("{};{}", status.set_size, status.set_volume))
                }
                _ => Err(unknown(name)),
            },
            Node::WorkerCtl { cap } => match name {
                "accept_job" => Ok(self
                    .bus
                    .accept_job(cap)?
                    .map(|job| job.as_str().to_owned())
                    .unwrap_or_default()),
                "select_actor" => Ok(self.bus.select_actor(cap)?.unwrap_or_default()),
                _ => Err(unknown(name)),
            },
            Node::JobCtl { cap } => match name {
                "job_carvpath" => {
                    let record = self.bus.job_record(cap)?;
                    let entity = record.entity.clone();
                    let extension = record.extension.clone();
                    let token = carvpath::serialize(&entity, self.bus.table())
                        .map_err(anycast::Error::from)?;
                    if extension.is_empty() {
                        Ok(token)
                    } else {
                        Ok(format!("{token}.{extension}"))
                    }
                }
                "routing_info" => {
                    let record = self.bus.job_record(cap)?;
                    Ok(format!("{};{}", record.next_actor, record.router_state))
                }
                "current_mutable" => Ok(self
                    .bus
                    .current_mutable(cap)?
                    .map(|m| m.as_str().to_owned())
                    .unwrap_or_default()),
                "frozen_mutable" => {
                    let entity = self.bus.job_frozen(cap)?;
                    Ok(carvpath::serialize(&entity, self.bus.table())
                        .map_err(anycast::Error::from)?)
                }
                _ => Err(unknown(name)),
            },
            Node::MutableDat { .. } | Node::FlattenLink { .. } | Node::OpaqueDir { .. } => {
                Err(unknown(name))
            }
        }
    }

    fn setxattr(&mut self, node: &Node, name: &str, value: &str) -> Result<(), Error> {
        match node {
            Node::ActorCtl { name: actor } => match name {
                "weight" => {
                    let weight = parse_decimal(value)?;
                    Ok(self.bus.set_actor_weight(actor, weight)?)
                }
                "overflow" => {
                    let overflow = parse_decimal(value)?;
                    Ok(self.bus.set_actor_overflow(actor, overflow)?)
                }
                _ => Err(unknown(name)),
            },
            Node::WorkerCtl { cap } => match name {
                "job_select_policy" => Ok(self.bus.set_job_policy(cap, value)?),
                "actor_select_policy" => Ok(self.bus.set_actor_policy(cap, value)?),
                "unregister" => {
                    if value != "1" {
                        return Err(Error::BadValue(format!(
                            "unregister expects \"1\", got {value:?}"
                        )));
                    }
                    Ok(self.bus.unregister(cap)?)
                }
                _ => Err(unknown(name)),
            },
            Node::JobCtl { cap } => match name {
                "routing_info" => {
                    let (actor, state) = value
                        .split_once(';')
                        .ok_or_else(|| Error::BadValue("expected <actor>;<state>".to_owned()))?;
                    Ok(self.bus.forward(cap, actor, state)?)
                }
                "submit_child" => {
                    let fields: Vec<&str> = value.splitn(5, ';').collect();
                    if fields.len() != 5 {
                        return Err(Error::BadValue(
                            "expected <carvpath>;<actor>;<state>;<mime>;<ext>".to_owned(),
                        ));
                    }
                    Ok(self.bus.submit_child(
                        cap, fields[0], fields[1], fields[2], fields[3], fields[4],
                    )?)
                }
                "allocate_mutable" => {
                    let size = parse_decimal(value)?;
                    self.bus.job_mutable(cap, size)?;
                    Ok(())
                }
                _ => Err(unknown(name)),
            },
            _ => Err(unknown(name)),
        }
    }
}

fn unknown(name: &str) -> Error {
    Error::UnknownAttribute { name: name.to_owned() }
}

fn parse_decimal(value: &str) -> Result<u64, Error> {
    value
        .parse::<u64>()
        .map_err(|_| Error::BadValue(format!("expected a decimal integer, got {value:?}")))
}
