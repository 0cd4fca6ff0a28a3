//! Baselines that enumerate every new join result: an indexed delta join
//! over the base relations, a classic reservoir fed each result (B2), and a
//! rebuild-and-redraw sampler over the fully materialized join (B1).

use rustc_hash::{FxHashMap, FxHashSet};
use thiserror::Error;

use resjoin::model::Key;
use resjoin::reservoir::{ClassicReservoir, UniformSource};
use resjoin::{JoinQuery, StreamEvent, Value};

#[derive(Clone, Copy, Debug, Error, PartialEq, Eq)]
#[error("work budget of {budget} items exhausted")]
pub struct Timeout {
    pub budget: u64,
}

#[derive(Clone, Debug)]
struct Step {
    rel: usize,
    index: usize,
    /// Attributes that are bound when this step runs, in key order.
    bound: Vec<usize>,
    /// `(column, attribute)` pairs the step assigns.
    free: Vec<(usize, usize)>,
}

#[derive(Clone, Debug, Default)]
struct Table {
    attrs: Vec<usize>,
    rows: Vec<Vec<Value>>,
    set: FxHashSet<Vec<Value>>,
    /// Hash indexes: key columns and key → row ids.
    indexes: Vec<(Vec<usize>, FxHashMap<Key, Vec<u32>>)>,
}

impl Table {
    fn index_for(&mut self, cols: Vec<usize>) -> usize {
        if let Some(i) = self.indexes.iter().position(|(c, _)| *c == cols) {
            return i;
        }
        self.indexes.push((cols, FxHashMap::default()));
        self.indexes.len() - 1
    }
}

/// Relation-at-a-time delta join with one static plan per inserted relation.
#[derive(Clone, Debug)]
pub struct DeltaJoin {
    nattrs: usize,
    tables: Vec<Table>,
    plans: Vec<Vec<Step>>,
}

impl DeltaJoin {
    pub fn new(query: &JoinQuery) -> Self {
        let nattrs = query.attributes.len();
        let mut tables: Vec<Table> = query
            .base
            .iter()
            .map(|r| Table {
                attrs: r.attrs.iter().map(|a| a.index()).collect(),
                ..Table::default()
            })
            .collect();
        let n = tables.len();
        let mut plans = Vec::with_capacity(n);
        for start in 0..n {
            let mut bound = vec![false; nattrs];
            for &a in &tables[start].attrs {
                bound[a] = true;
            }
            let mut left: Vec<usize> = (0..n).filter(|&r| r != start).collect();
            let mut plan = Vec::new();
            while !left.is_empty() {
                let (i, _) = left
                    .iter()
                    .enumerate()
                    .max_by_key(|(_, &r)| {
                        let b = tables[r].attrs.iter().filter(|&&a| bound[a]).count();
                        (b, std::cmp::Reverse(r))
                    })
                    .unwrap();
                let r = left.remove(i);
                let attrs = tables[r].attrs.clone();
                let key_cols: Vec<usize> = (0..attrs.len()).filter(|&c| bound[attrs[c]]).collect();
                let free = (0..attrs.len())
                    .filter(|&c| !bound[attrs[c]])
                    .map(|c| (c, attrs[c]))
                    .collect();
                let step = Step {
                    rel: r,
                    bound: key_cols.iter().map(|&c| attrs[c]).collect(),
                    index: tables[r].index_for(key_cols),
                    free,
                };
                for &a in &attrs {
                    bound[a] = true;
                }
                plan.push(step);
            }
            plans.push(plan);
        }
        Self {
            nattrs,
            tables,
            plans,
        }
    }

    pub fn contains(&self, r: usize, values: &[Value]) -> bool {
        self.tables[r].set.contains(values)
    }

    pub fn insert(&mut self, r: usize, values: &[Value]) -> bool {
        let t = &mut self.tables[r];
        if !t.set.insert(values.to_vec()) {
            return false;
        }
        let id = t.rows.len() as u32;
        for (cols, map) in &mut t.indexes {
            let key: Key = cols.iter().map(|&c| values[c]).collect();
            map.entry(key).or_default().push(id);
        }
        t.rows.push(values.to_vec());
        true
    }

    /// Calls `f` on every result that uses `t` in relation `r`, stopping
    /// early when `f` returns false. Call before inserting `t`.
    pub fn for_each_delta(&self, r: usize, t: &[Value], f: &mut dyn FnMut(&[Value]) -> bool) {
        if self.contains(r, t) {
            return;
        }
        let mut binding = vec![Value::Int(0); self.nattrs];
        for (c, &a) in self.tables[r].attrs.iter().enumerate() {
            binding[a] = t[c];
        }
        self.extend(&self.plans[r], 0, &mut binding, f);
    }

    fn extend(
        &self,
        plan: &[Step],
        depth: usize,
        binding: &mut [Value],
        f: &mut dyn FnMut(&[Value]) -> bool,
    ) -> bool {
        let Some(step) = plan.get(depth) else {
            return f(binding);
        };
        let table = &self.tables[step.rel];
        let key: Key = step.bound.iter().map(|&a| binding[a]).collect();
        let Some(ids) = table.indexes[step.index].1.get(&key) else {
            return true;
        };
        for &id in ids {
            let row = &table.rows[id as usize];
            for &(c, a) in &step.free {
                binding[a] = row[c];
            }
            if !self.extend(plan, depth + 1, binding, f) {
                return false;
            }
        }
        true
    }
}

/// Classic reservoir over every enumerated result.
pub struct MaterializedReservoir {
    join: DeltaJoin,
    reservoir: ClassicReservoir<Vec<Value>>,
    budget: u64,
}

impl MaterializedReservoir {
    pub fn new(query: &JoinQuery, k: usize, seed: u64, budget: u64) -> Self {
        Self {
            join: DeltaJoin::new(query),
            reservoir: ClassicReservoir::new(k, seed),
            budget,
        }
    }

    pub fn feed(&mut self, event: &StreamEvent) -> Result<(), Timeout> {
        let r = event.relation.index();
        let (reservoir, budget) = (&mut self.reservoir, self.budget);
        let mut over = false;
        self.join.for_each_delta(r, &event.values, &mut |res| {
            if reservoir.seen() >= budget {
                over = true;
                return false;
            }
            reservoir.offer_with(|| res.to_vec());
            true
        });
        if over {
            return Err(Timeout { budget });
        }
        self.join.insert(r, &event.values);
        Ok(())
    }

    pub fn visited(&self) -> u64 {
        self.reservoir.seen()
    }

    pub fn join_size(&self) -> u64 {
        self.reservoir.seen()
    }

    pub fn samples(&self) -> &[Vec<Value>] {
        self.reservoir.samples()
    }
}

/// Keeps the whole join and redraws `k` samples after every event.
pub struct RebuildRedraw {
    join: DeltaJoin,
    results: Vec<Vec<Value>>,
    k: usize,
    src: UniformSource,
    samples: Vec<usize>,
    visited: u64,
    budget: u64,
}

impl RebuildRedraw {
    pub fn new(query: &JoinQuery, k: usize, seed: u64, budget: u64) -> Self {
        Self {
            join: DeltaJoin::new(query),
            results: Vec::new(),
            k,
            src: UniformSource::seeded(seed),
            samples: Vec::new(),
            visited: 0,
            budget,
        }
    }

    pub fn feed(&mut self, event: &StreamEvent) -> Result<(), Timeout> {
        let r = event.relation.index();
        let (results, budget) = (&mut self.results, self.budget);
        let mut visited = self.visited;
        let mut over = false;
        self.join.for_each_delta(r, &event.values, &mut |res| {
            if visited >= budget {
                over = true;
                return false;
            }
            visited += 1;
            results.push(res.to_vec());
            true
        });
        self.visited = visited;
        if over {
            return Err(Timeout { budget });
        }
        self.join.insert(r, &event.values);
        self.redraw();
        Ok(())
    }

    /// Partial Fisher-Yates over result positions with a sparse swap map.
    fn redraw(&mut self) {
        let n = self.results.len() as u64;
        let take = (self.k as u64).min(n);
        let mut swapped: FxHashMap<u64, u64> = FxHashMap::default();
        self.samples.clear();
        for i in 0..take {
            let j = i + self.src.below(n - i);
            let vj = *swapped.get(&j).unwrap_or(&j);
            let vi = *swapped.get(&i).unwrap_or(&i);
            swapped.insert(j, vi);
            self.samples.push(vj as usize);
        }
        self.visited += take;
    }

    pub fn visited(&self) -> u64 {
        self.visited
    }

    pub fn join_size(&self) -> u64 {
        self.results.len() as u64
    }

    pub fn samples(&self) -> Vec<Vec<Value>> {
        self.samples.iter().map(|&i| self.results[i].clone()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gen::{random_instance, rng};
    use crate::oracle::Oracle;
    use crate::queries;

    #[test]
    fn delta_join_matches_oracle() {
        for name in ["line3", "star3", "triangle", "dumbbell", "qy"] {
            let q = queries::load(name).unwrap();
            let events = random_instance(&q, 15, 4, &mut rng(21));
            let mut dj = DeltaJoin::new(&q);
            let mut o = Oracle::for_query(&q);
            for e in &events {
                let r = e.relation.index();
                let mut got = Vec::new();
                dj.for_each_delta(r, &e.values, &mut |v| {
                    got.push(v.to_vec());
                    true
                });
                got.sort();
                assert_eq!(got, o.delta(r, &e.values, u64::MAX).unwrap(), "{name}");
                dj.insert(r, &e.values);
                o.insert(r, &e.values);
            }
        }
    }

    #[test]
    fn baselines_sample_real_results() {
        let q = queries::load("line3").unwrap();
        let events = random_instance(&q, 20, 5, &mut rng(22));
        let mut b1 = RebuildRedraw::new(&q, 5, 1, u64::MAX);
        let mut b2 = MaterializedReservoir::new(&q, 5, 1, u64::MAX);
        let mut o = Oracle::for_query(&q);
        for e in &events {
            b1.feed(e).unwrap();
            b2.feed(e).unwrap();
            o.insert(e.relation.index(), &e.values);
        }
        let all = o.join(u64::MAX).unwrap();
        assert_eq!(b1.join_size(), all.len() as u64);
        assert_eq!(b2.join_size(), all.len() as u64);
        for s in b1.samples().iter().chain(b2.samples()) {
            assert!(all.binary_search(s).is_ok());
        }
        let mut distinct = b1.samples();
        distinct.sort();
        distinct.dedup();
        assert_eq!(distinct.len(), 5.min(all.len()));
    }

    #[test]
    fn budget_times_out() {
        let q = queries::load("two_table").unwrap();
        let mut b2 = MaterializedReservoir::new(&q, 2, 1, 3);
        let ev = |r: usize, a: i64, b: i64| crate::ingest::event(r, vec![Value::Int(a), Value::Int(b)]);
        for i in 0..4 {
            b2.feed(&ev(0, i, 0)).unwrap();
        }
        assert_eq!(b2.feed(&ev(1, 0, 0)), Err(Timeout { budget: 3 }));
    }
}
