//! Page-cache-aware forensic archive and local message-bus engine.
//!
//! The engine combines an append-only flat data archive addressed by
//! carve-path annotations with a local anycast job bus:
//!
//! - [`carvpath`]: parse, serialize, normalize and flatten carve-path
//!   annotations, plus byte-set algebra and long-path digest substitution.
//! - [`refstack`]: per-byte reference counts over the archive as a leveled
//!   stack of byte sets; drives hot/cold page advice and the pressure
//!   metric used for throttling.
//! - [`opphash`]: opportunistic BLAKE2b-256 hashing advanced as a side
//!   effect of archive I/O, with secondary sweeps over page-resident data.
//! - [`archive`]: the growing backing file, capability-guarded mutable
//!   regions, freeze-to-immutable, carve-path reads and advice emission.
//! - [`anycast`]: actors, workers, jobs, policy-driven picking, sparse
//!   capabilities and the trusted provenance journal.
//! - [`fsgateway`]: the filesystem-shaped facade (paths, extended
//!   attributes, flattening symlinks) over everything above.

pub mod advice;
pub mod anycast;
pub mod archive;
pub mod capability;
pub mod carvpath;
pub mod fsgateway;
pub mod opphash;
pub mod refstack;
