//! Carve-path annotations: textual designations of (possibly fragmented,
//! possibly sparse) byte regions within a flat archive address space.
//!
//! A single nesting-level token is either a list of fragment tokens joined
//! by `_`, or `D` followed by a 64-hex digest standing in for a token too
//! long for a file name. A regular fragment is `<offset>+<size>`, a sparse
//! fragment is `S<size>`. Nesting levels are joined by `/` and resolved by
//! [`flatten`]. The distinguished token `0+0` designates the empty entity.

mod byteset;
mod table;

pub use byteset::ByteSet;
pub use table::{InMemoryStore, LongPathStore, LongPathTable};

use blake2::digest::consts::U32;
use blake2::{Blake2b, Digest};
use std::fmt;
use thiserror::Error;

pub(crate) type Blake2b256 = Blake2b<U32>;

/// Level tokens longer than this are replaced by a `D` digest token,
/// leaving headroom under common 255-byte file name limits.
pub const LONG_PATH_THRESHOLD: usize = 220;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed carve-path token: {0}")]
    MalformedToken(String),
    #[error("unknown long-path digest: {0}")]
    UnknownDigest(String),
    #[error("child fragment [{offset}, {offset}+{size}) exceeds parent size {parent_size}")]
    ChildOutOfBounds { offset: u64, size: u64, parent_size: u64 },
    #[error("long-path store failure: {0}")]
    Store(#[from] std::io::Error),
}

/// One fragment of an entity: real archive data or a sparse (zero) run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Fragment {
    Data { offset: u64, size: u64 },
    Sparse { size: u64 },
}

impl Fragment {
    pub fn size(&self) -> u64 {
        match *self {
            Fragment::Data { size, .. } | Fragment::Sparse { size } => size,
        }
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self, Fragment::Sparse { .. })
    }
}

impl fmt::Display for Fragment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Fragment::Data { offset, size } => write!(f, "{offset}+{size}"),
            Fragment::Sparse { size } => write!(f, "S{size}"),
        }
    }
}

/// A canonical ordered fragment list designating bytes in the archive
/// address space.
///
/// Canonical form: no zero-size fragments, and no two adjacent fragments
/// that could be merged (byte-adjacent data, or back-to-back sparse runs).
/// Construction canonicalizes, so two entities designating the same
/// fragment sequence always compare equal.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Entity {
    fragments: Vec<Fragment>,
    total_size: u64,
}

impl Entity {
    /// Canonicalize a fragment list into an entity. Zero-size fragments
    /// are dropped; mergeable neighbours are merged.
    pub fn new<I: IntoIterator<Item = Fragment>>(fragments: I) -> Entity {
        let mut out: Vec<Fragment> = Vec::new();
        let mut total: u64 = 0;
        for frag in fragments {
            if frag.size() == 0 {
                continue;
            }
            total += frag.size();
            match (out.last_mut(), frag) {
                (
                    Some(Fragment::Data { offset: po, size: ps }),
                    Fragment::Data { offset, size },
                ) if *po + *ps == offset => {
                    *ps += size;
                }
                (Some(Fragment::Sparse { size: ps }), Fragment::Sparse { size }) => {
                    *ps += size;
                }
                _ => out.push(frag),
            }
        }
        Entity { fragments: out, total_size: total }
    }

    /// The empty entity (token `0+0`).
    pub fn empty() -> Entity {
        Entity { fragments: Vec::new(), total_size: 0 }
    }

    /// A single data fragment `offset+size`.
    pub fn data(offset: u64, size: u64) -> Entity {
        Entity::new([Fragment::Data { offset, size }])
    }

    /// A single sparse fragment `S<size>`.
    pub fn sparse(size: u64) -> Entity {
        Entity::new([Fragment::Sparse { size }])
    }

    pub fn fragments(&self) -> &[Fragment] {
        &self.fragments
    }

    pub fn total_size(&self) -> u64 {
        self.total_size
    }

    pub fn is_empty(&self) -> bool {
        self.fragments.is_empty()
    }

    /// The set of archive byte locations designated by the data fragments;
    /// sparse fragments contribute nothing.
    pub fn byte_set(&self) -> ByteSet {
        ByteSet::from_intervals(self.fragments.iter().filter_map(|f| match *f {
            Fragment::Data { offset, size } => Some((offset, offset + size)),
            Fragment::Sparse { .. } => None,
        }))
    }

    /// Canonical token text, never digest-substituted. This is the stable
    /// in-process identity of the entity.
    pub fn canonical_token(&self) -> String {
        if self.fragments.is_empty() {
            return "0+0".to_owned();
        }
        let mut out = String::new();
        for (i, frag) in self.fragments.iter().enumerate() {
            if i > 0 {
                out.push('_');
            }
            out.push_str(&frag.to_string());
        }
        out
    }
}

impl fmt::Display for Entity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical_token())
    }
}

/// BLAKE2b-256 digest of a token, lowercase hex. Used both for long-path
/// substitution and by callers needing a stable token identity.
pub fn digest_token(token: &str) -> Result<String, Error> {
    if token.is_empty() {
        return Err(Error::MalformedToken("empty token".to_owned()));
    }
    let mut ctx = Blake2b256::new();
    ctx.update(token.as_bytes());
    Ok(hex::encode(ctx.finalize()))
}

fn parse_number(text: &str, token: &str) -> Result<u64, Error> {
    if text.is_empty() || !text.bytes().all(|b| b.is_ascii_digit()) {
        return Err(Error::MalformedToken(token.to_owned()));
    }
    text.parse::<u64>()
        .map_err(|_| Error::MalformedToken(token.to_owned()))
}

fn is_hex_digest(text: &str) -> bool {
    text.len() == 64 && text.bytes().all(|b| b.is_ascii_hexdigit() && !b.is_ascii_uppercase())
}

/// Parse one nesting-level token into a canonical entity.
///
/// `D<digest>` tokens are resolved through `table`. The distinguished
/// token `0+0` yields the empty entity; any other zero-size fragment is
/// rejected.
pub fn parse_token(text: &str, table: &LongPathTable) -> Result<Entity, Error> {
    if text.is_empty() {
        return Err(Error::MalformedToken(String::new()));
    }
    if let Some(rest) = text.strip_prefix('D') {
        if !is_hex_digest(rest) {
            return Err(Error::MalformedToken(text.to_owned()));
        }
        let stored = table
            .get(rest)
            .ok_or_else(|| Error::UnknownDigest(rest.to_owned()))?;
        return parse_token(&stored, table);
    }
    if text == "0+0" {
        return Ok(Entity::empty());
    }
    let mut fragments = Vec::new();
    let mut total: u64 = 0;
    for part in text.split('_') {
        let frag = if let Some(size_text) = part.strip_prefix('S') {
            Fragment::Sparse { size: parse_number(size_text, text)? }
        } else {
            let (off_text, size_text) = part
                .split_once('+')
                .ok_or_else(|| Error::MalformedToken(text.to_owned()))?;
            let offset = parse_number(off_text, text)?;
            let size = parse_number(size_text, text)?;
            if offset.checked_add(size).is_none() {
                return Err(Error::MalformedToken(text.to_owned()));
            }
            Fragment::Data { offset, size }
        };
        if frag.size() == 0 {
            return Err(Error::MalformedToken(text.to_owned()));
        }
        total = total
            .checked_add(frag.size())
            .ok_or_else(|| Error::MalformedToken(text.to_owned()))?;
        fragments.push(frag);
    }
    Ok(Entity::new(fragments))
}

/// Serialize an entity to its level token, substituting a `D` digest token
/// (stored in `table`) when the text exceeds [`LONG_PATH_THRESHOLD`].
pub fn serialize(entity: &Entity, table: &LongPathTable) -> Result<String, Error> {
    let token = entity.canonical_token();
    if token.len() <= LONG_PATH_THRESHOLD {
        return Ok(token);
    }
    let digest = digest_token(&token)?;
    table.put(&digest, &token)?;
    Ok(format!("D{digest}"))
}

/// Resolve a possibly multi-level token (`a/b/c`) by flattening each level
/// against the one above it.
pub fn resolve_token(text: &str, table: &LongPathTable) -> Result<Entity, Error> {
    let mut levels = text.split('/');
    let first = levels.next().ok_or_else(|| Error::MalformedToken(text.to_owned()))?;
    let mut entity = parse_token(first, table)?;
    for level in levels {
        let child = parse_token(level, table)?;
        entity = flatten(&entity, &child)?;
    }
    Ok(entity)
}

/// Reinterpret `child` offsets as positions within `parent`'s logical byte
/// space, mapping them through the parent's fragments into archive space.
///
/// Child data over parent sparse regions becomes sparse output; child
/// sparse fragments pass through unchanged. The result is canonical and
/// `flatten` is associative.
pub fn flatten(parent: &Entity, child: &Entity) -> Result<Entity, Error> {
    let mut out: Vec<Fragment> = Vec::new();
    for frag in child.fragments() {
        match *frag {
            Fragment::Sparse { size } => out.push(Fragment::Sparse { size }),
            Fragment::Data { offset, size } => {
                let end = offset.checked_add(size).ok_or(Error::ChildOutOfBounds {
                    offset,
                    size,
                    parent_size: parent.total_size(),
                })?;
                if end > parent.total_size() {
                    return Err(Error::ChildOutOfBounds {
                        offset,
                        size,
                        parent_size: parent.total_size(),
                    });
                }
                map_range(parent, offset, size, &mut out);
            }
        }
    }
    Ok(Entity::new(out))
}

/// Append the fragments of `parent` covering logical `[offset, offset+size)`.
fn map_range(parent: &Entity, offset: u64, size: u64, out: &mut Vec<Fragment>) {
    let mut logical = 0u64; // logical start of the current parent fragment
    let mut cur = offset;
    let end = offset + size;
    for frag in parent.fragments() {
        let frag_end = logical + frag.size();
        if cur >= end {
            break;
        }
        if cur < frag_end {
            let within = cur - logical;
            let take = (frag_end - cur).min(end - cur);
            match *frag {
                Fragment::Data { offset: po, .. } => {
                    out.push(Fragment::Data { offset: po + within, size: take })
                }
                Fragment::Sparse { .. } => out.push(Fragment::Sparse { size: take }),
            }
            cur += take;
        }
        logical = frag_end;
    }
    debug_assert_eq!(cur, end, "child range must be covered by parent fragments");
}
