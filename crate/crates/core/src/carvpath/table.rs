//! Lookup table mapping long-path digests back to the carve-path tokens
//! they stand in for.

use std::collections::HashMap;
use std::io;
use std::sync::Mutex;

/// Pluggable persistence backend for the digest -> token mapping.
///
/// `put` must be durable enough that a later `get` of the same digest
/// returns the exact original token. The default backend keeps the
/// mapping in process memory.
pub trait LongPathStore: Send {
    fn put(&mut self, digest: &str, token: &str) -> io::Result<()>;
    fn get(&self, digest: &str) -> Option<String>;
}

/// In-process store; the default backend.
#[derive(Default)]
pub struct InMemoryStore {
    map: HashMap<String, String>,
}

impl LongPathStore for InMemoryStore {
    fn put(&mut self, digest: &str, token: &str) -> io::Result<()> {
        self.map.insert(digest.to_owned(), token.to_owned());
        Ok(())
    }

    fn get(&self, digest: &str) -> Option<String> {
        self.map.get(digest).cloned()
    }
}

/// Digest -> full-token lookup with a pluggable backend.
///
/// Mutations are serialized internally, so shared references can be used
/// from any number of concurrent callers.
pub struct LongPathTable {
    store: Mutex<Box<dyn LongPathStore>>,
}

impl LongPathTable {
    /// Table backed by the in-process store.
    pub fn in_memory() -> Self {
        LongPathTable::with_store(Box::new(InMemoryStore::default()))
    }

    pub fn with_store(store: Box<dyn LongPathStore>) -> Self {
        LongPathTable { store: Mutex::new(store) }
    }

    pub fn put(&self, digest: &str, token: &str) -> io::Result<()> {
        self.store.lock().expect("long-path store poisoned").put(digest, token)
    }

    pub fn get(&self, digest: &str) -> Option<String> {
        self.store.lock().expect("long-path store poisoned").get(digest)
    }
}

impl Default for LongPathTable {
    fn default() -> Self {
        LongPathTable::in_memory()
    }
}
