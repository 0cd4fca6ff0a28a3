//! Uniform reservoir sampling over the results of a streaming natural join.
//!
//! Tuples arrive one at a time. After every arrival the [`engine::Engine`]
//! holds `k` results drawn uniformly without replacement from the join of
//! everything seen so far. New results are never enumerated one by one: each
//! insertion exposes a padded, positionally addressable array of candidate
//! results, and the reservoir jumps over it with geometric skips.
//!
//! Acyclic queries run on a join tree given in the query config. Cyclic
//! queries run on a user-supplied hypertree decomposition, and relations
//! linked by primary-key references can be pre-joined.

pub mod engine;
pub mod fkfuse;
pub mod ghd;
pub mod index;
pub mod model;
pub mod query;
pub mod reservoir;
pub mod storage;

pub use engine::{Candidate, Engine, EngineError, EngineMetrics, EngineOptions, JoinResult, Snapshot};
pub use model::{AttributeId, Interner, RelationId, StreamEvent, Tuple, Value};
pub use query::{load_query, JoinQuery, QueryError};
