//! Command-line harness around the streaming join sampler: stream files,
//! synthetic workloads, brute-force oracles, statistical validation,
//! baselines and benchmark tables.

pub mod baseline;
pub mod checks;
pub mod criteria;
pub mod gen;
pub mod ingest;
pub mod oracle;
pub mod queries;
pub mod stats;
pub mod validate;
pub mod bench;
pub mod rswp;
pub mod runner;
