//! Command-line toolkit over the carvbus engine: serve an instance,
//! import raw evidence files, benchmark picking policies, and analyze
//! provenance/timing logs with a perfect-cache model.

pub mod analyze;
pub mod bench;
pub mod config;
pub mod import;
pub mod serve;
