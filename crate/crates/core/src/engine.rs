//! The streaming driver: index update, batch construction and batched
//! reservoir sampling with dummies filtered out.

use std::sync::Arc;

use smallvec::SmallVec;
use thiserror::Error;

use crate::fkfuse::{FkFuser, FuseError, Ingested};
use crate::ghd::GhdState;
use crate::index::{DeltaBatch, IndexCounters, IndexError, JoinIndex};
use crate::model::{StreamEvent, Value};
use crate::query::{JoinQuery, QueryShape};
use crate::reservoir::{BatchStream, Mutation, Reservoir, ReservoirStats, SkippableStream};
use crate::storage::RowId;

/// One row id per index relation.
pub type JoinResult = SmallVec<[RowId; 8]>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Candidate {
    Real(JoinResult),
    Dummy,
}

impl Candidate {
    pub fn is_real(&self) -> bool {
        matches!(self, Candidate::Real(_))
    }
}

/// Positional cursor over a [`DeltaBatch`].
pub struct BatchCursor<'a> {
    index: &'a JoinIndex,
    batch: DeltaBatch,
    next: u128,
    pub retrieves: u64,
    pub dummies: u64,
}

impl<'a> BatchCursor<'a> {
    pub fn new(index: &'a JoinIndex, batch: DeltaBatch) -> Self {
        Self {
            index,
            batch,
            next: 0,
            retrieves: 0,
            dummies: 0,
        }
    }
}

impl SkippableStream for BatchCursor<'_> {
    type Item = Candidate;

    fn skip(&mut self, i: u128) -> Option<Candidate> {
        let pos = self.next.saturating_add(i);
        if pos >= self.batch.size {
            self.next = self.batch.size;
            return None;
        }
        self.next = pos + 1;
        self.retrieves += 1;
        let mut out: JoinResult = SmallVec::from_elem(0, self.index.relations().len());
        let real = self
            .index
            .retrieve(&self.batch, pos, &mut out)
            .expect("position checked against batch size");
        if real {
            Some(Candidate::Real(out))
        } else {
            self.dummies += 1;
            Some(Candidate::Dummy)
        }
    }
}

impl BatchStream for BatchCursor<'_> {
    fn remain(&self) -> u128 {
        self.batch.size - self.next
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EngineError {
    #[error("unknown relation id {0}")]
    UnknownRelation(u32),
    #[error("relation {relation} expects {expected} values, got {got}")]
    Arity {
        relation: String,
        expected: usize,
        got: usize,
    },
    #[error(transparent)]
    Fuse(#[from] FuseError),
    #[error(transparent)]
    Index(#[from] IndexError),
}

#[derive(Clone, Copy, Debug)]
pub struct EngineOptions {
    pub k: usize,
    pub seed: u64,
    /// Overrides every grouping flag of the query.
    pub grouping: Option<bool>,
    pub mutation: Option<Mutation>,
}

impl EngineOptions {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            seed,
            grouping: None,
            mutation: None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EngineMetrics {
    pub events: u64,
    pub duplicates: u64,
    /// Insertions into the index, after fusion and decomposition.
    pub index_insertions: u64,
    pub batches: u64,
    pub empty_batches: u64,
    /// Running `Σ|ΔJ|`.
    pub join_total: u128,
    pub retrieve_calls: u64,
    pub dummy_hits: u64,
    /// Largest propagation-loop count caused by a single event.
    pub max_event_propagation: u64,
    pub max_event_propagation_at: u64,
    pub index: IndexCounters,
    pub reservoir: ReservoirStats,
}

/// Sampler state reported between events.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Snapshot {
    pub arrival: u64,
    pub sample_size: usize,
    pub join_total: u128,
    /// Values over the query attributes, in reservoir slot order.
    pub samples: Vec<Vec<Value>>,
}

pub struct Engine {
    query: Arc<JoinQuery>,
    fuser: Option<FkFuser>,
    ghd: Option<GhdState>,
    index: JoinIndex,
    reservoir: Reservoir<Candidate>,
    metrics: EngineMetrics,
    last_arrival: u64,
    /// For each index relation: `(column, attribute)` pairs.
    output_cols: Vec<Vec<(usize, usize)>>,
    fused: Vec<(usize, Vec<Value>)>,
    simulated: Vec<(usize, Vec<Value>)>,
}

impl Engine {
    pub fn new(query: Arc<JoinQuery>, options: EngineOptions) -> Self {
        let mut schema = query.index.clone();
        if let Some(on) = options.grouping {
            schema.grouping.iter_mut().for_each(|g| *g = on);
        }
        let output_cols = schema
            .relations
            .iter()
            .map(|r| {
                r.attrs
                    .iter()
                    .enumerate()
                    .map(|(c, a)| (c, a.index()))
                    .collect()
            })
            .collect();
        let fuser = (!query.fusion.is_identity())
            .then(|| FkFuser::new(&query.base, query.fusion.clone()));
        let ghd = match &query.shape {
            QueryShape::Cyclic(plan) => Some(GhdState::new(plan.clone(), query.relations.len())),
            QueryShape::Acyclic => None,
        };
        let mut reservoir = Reservoir::new(options.k, options.seed);
        if let Some(m) = options.mutation {
            reservoir = reservoir.with_mutation(m);
        }
        Self {
            index: JoinIndex::new(schema),
            query,
            fuser,
            ghd,
            reservoir,
            metrics: EngineMetrics::default(),
            last_arrival: 0,
            output_cols,
            fused: Vec::new(),
            simulated: Vec::new(),
        }
    }

    pub fn query(&self) -> &JoinQuery {
        &self.query
    }

    pub fn index(&self) -> &JoinIndex {
        &self.index
    }

    pub fn reservoir(&self) -> &Reservoir<Candidate> {
        &self.reservoir
    }

    pub fn ghd(&self) -> Option<&GhdState> {
        self.ghd.as_ref()
    }

    pub fn fuser(&self) -> Option<&FkFuser> {
        self.fuser.as_ref()
    }

    pub fn metrics(&self) -> EngineMetrics {
        let mut m = self.metrics;
        m.index = self.index.counters();
        m.reservoir = self.reservoir.stats();
        m
    }

    pub fn feed(&mut self, event: &StreamEvent) -> Result<(), EngineError> {
        self.feed_with(event, |_, _| {})
    }

    /// Like [`Engine::feed`], calling `observe` on every batch before the
    /// reservoir consumes it.
    pub fn feed_with<F>(&mut self, event: &StreamEvent, mut observe: F) -> Result<(), EngineError>
    where
        F: FnMut(&JoinIndex, &DeltaBatch),
    {
        let base = self
            .query
            .base
            .get(event.relation.index())
            .ok_or(EngineError::UnknownRelation(event.relation.0))?;
        if event.values.len() != base.arity() {
            return Err(EngineError::Arity {
                relation: base.name.clone(),
                expected: base.arity(),
                got: event.values.len(),
            });
        }
        self.metrics.events += 1;
        self.last_arrival = event.arrival;
        let loops_before = self.index.counters().propagation_loops;

        let mut fused = std::mem::take(&mut self.fused);
        fused.clear();
        let b = event.relation.index();
        match &mut self.fuser {
            Some(f) => {
                if f.ingest(b, &event.values, &mut fused)? == Ingested::Duplicate {
                    self.metrics.duplicates += 1;
                }
            }
            None => fused.push((b, event.values.clone())),
        }

        let mut simulated = std::mem::take(&mut self.simulated);
        for (rel, values) in fused.drain(..) {
            simulated.clear();
            match &mut self.ghd {
                Some(g) => {
                    if !g.ingest(rel, &values, &mut simulated) {
                        self.metrics.duplicates += 1;
                    }
                }
                None => simulated.push((rel, values)),
            }
            for (node, values) in simulated.drain(..) {
                let Some(row) = self.index.insert(node, &values)? else {
                    self.metrics.duplicates += 1;
                    continue;
                };
                self.metrics.index_insertions += 1;
                let batch = self.index.batch(node, row);
                observe(&self.index, &batch);
                self.consume(batch);
            }
        }
        self.fused = fused;
        self.simulated = simulated;

        let loops = self.index.counters().propagation_loops - loops_before;
        if loops > self.metrics.max_event_propagation {
            self.metrics.max_event_propagation = loops;
            self.metrics.max_event_propagation_at = event.arrival;
        }
        Ok(())
    }

    fn consume(&mut self, batch: DeltaBatch) {
        self.metrics.batches += 1;
        self.metrics.join_total += batch.size;
        if batch.size == 0 {
            self.metrics.empty_batches += 1;
        }
        let mut cursor = BatchCursor::new(&self.index, batch);
        self.reservoir.batch_update(&mut cursor, Candidate::is_real);
        self.metrics.retrieve_calls += cursor.retrieves;
        self.metrics.dummy_hits += cursor.dummies;
    }

    /// Values of a result over the query attributes.
    pub fn result_values(&self, result: &JoinResult) -> Vec<Value> {
        let mut out = vec![Value::Int(0); self.query.attributes.len()];
        for (e, cols) in self.output_cols.iter().enumerate() {
            let row = self.index.relation(e).row(result[e]);
            for &(c, a) in cols {
                out[a] = row[c];
            }
        }
        out
    }

    pub fn sample_values(&self) -> Vec<Vec<Value>> {
        self.reservoir
            .samples()
            .iter()
            .map(|c| match c {
                Candidate::Real(r) => self.result_values(r),
                Candidate::Dummy => unreachable!("dummies never enter the reservoir"),
            })
            .collect()
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            arrival: self.last_arrival,
            sample_size: self.reservoir.samples().len(),
            join_total: self.metrics.join_total,
            samples: self.sample_values(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::RelationId;
    use crate::query::load_query;

    fn two_table() -> Arc<JoinQuery> {
        Arc::new(
            load_query(
                r#"
                [[relation]]
                name = "R1"
                attrs = ["X", "Y"]
                [[relation]]
                name = "R2"
                attrs = ["Y", "Z"]
                [tree]
                edges = [["R1", "R2"]]
            "#,
            )
            .unwrap(),
        )
    }

    fn ev(rel: u32, v: &[i64], i: u64) -> StreamEvent {
        StreamEvent::new(RelationId(rel), v.iter().map(|&x| Value::Int(x)).collect(), i)
    }

    #[test]
    fn first_event_gives_empty_batch() {
        let mut e = Engine::new(two_table(), EngineOptions::new(3, 1));
        e.feed(&ev(0, &[1, 1], 0)).unwrap();
        let m = e.metrics();
        assert_eq!(m.batches, 1);
        assert_eq!(m.join_total, 0);
        assert!(e.snapshot().samples.is_empty());
    }

    #[test]
    fn unfilled_reservoir_takes_everything() {
        let mut e = Engine::new(two_table(), EngineOptions::new(10, 2));
        for x in 0..6 {
            e.feed(&ev(0, &[x, 7], x as u64)).unwrap();
        }
        e.feed(&ev(1, &[7, 1], 6)).unwrap();
        let mut got = e.snapshot().samples;
        got.sort();
        let want: Vec<Vec<Value>> = (0..6)
            .map(|x| vec![Value::Int(x), Value::Int(7), Value::Int(1)])
            .collect();
        assert_eq!(got, want);
    }

    #[test]
    fn snapshot_is_pure_and_duplicates_are_counted() {
        let mut e = Engine::new(two_table(), EngineOptions::new(2, 3));
        for (i, (r, v)) in [(0, [1, 1]), (1, [1, 2]), (0, [1, 1]), (0, [2, 1])]
            .into_iter()
            .enumerate()
        {
            e.feed(&ev(r, &v, i as u64)).unwrap();
        }
        assert_eq!(e.snapshot(), e.snapshot());
        assert_eq!(e.metrics().duplicates, 1);
        assert_eq!(e.snapshot().sample_size, 2);
    }

    #[test]
    fn malformed_events_are_rejected() {
        let mut e = Engine::new(two_table(), EngineOptions::new(2, 3));
        assert!(matches!(
            e.feed(&ev(5, &[1, 1], 0)),
            Err(EngineError::UnknownRelation(5))
        ));
        assert!(matches!(e.feed(&ev(0, &[1], 0)), Err(EngineError::Arity { .. })));
    }
}
