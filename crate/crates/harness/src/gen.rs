//! Synthetic workloads: random graphs for the graph queries and
//! foreign-key-consistent instances for the schema-shaped ones.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustc_hash::FxHashSet;

use resjoin::{JoinQuery, RelationId, StreamEvent, Value};

use crate::ingest::renumber;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `m` distinct directed edges on `n` nodes, no self loops, chosen uniformly.
pub fn erdos_renyi(n: u64, m: usize, rng: &mut impl Rng) -> Vec<(i64, i64)> {
    assert!(n >= 2, "need at least two nodes");
    let cap = (n * (n - 1)) as usize;
    assert!(m <= cap, "{m} edges do not fit on {n} nodes");
    let mut seen = FxHashSet::default();
    let mut out = Vec::with_capacity(m);
    while out.len() < m {
        let u = rng.random_range(0..n) as i64;
        let v = rng.random_range(0..n) as i64;
        if u != v && seen.insert((u, v)) {
            out.push((u, v));
        }
    }
    out
}

/// Chung-Lu graph with expected degrees following a power law of exponent
/// `gamma`. Up to `m` distinct directed edges; fewer if the sampler stalls.
pub fn chung_lu(n: u64, m: usize, gamma: f64, rng: &mut impl Rng) -> Vec<(i64, i64)> {
    assert!(gamma > 2.0, "exponent must exceed 2");
    let weights: Vec<f64> = (0..n)
        .map(|i| ((i + 1) as f64).powf(-1.0 / (gamma - 1.0)))
        .collect();
    let pick = WeightedIndex::new(&weights).expect("positive weights");
    let mut seen = FxHashSet::default();
    let mut out = Vec::with_capacity(m);
    let mut misses = 0usize;
    while out.len() < m && misses < 50 * m + 1000 {
        let u = pick.sample(rng) as i64;
        let v = pick.sample(rng) as i64;
        if u != v && seen.insert((u, v)) {
            out.push((u, v));
        } else {
            misses += 1;
        }
    }
    out
}

/// Every relation receives its own shuffled copy of the edge list; the
/// copies are merged in a uniformly random interleaving.
pub fn graph_stream(
    query: &JoinQuery,
    edges: &[(i64, i64)],
    rng: &mut impl Rng,
) -> anyhow::Result<Vec<StreamEvent>> {
    if let Some(r) = query.base.iter().find(|r| r.arity() != 2) {
        anyhow::bail!("relation {} is not binary; graph streams need edge relations", r.name);
    }
    let rels = query.base.len();
    let copies: Vec<Vec<(i64, i64)>> = (0..rels)
        .map(|_| {
            let mut c = edges.to_vec();
            c.shuffle(rng);
            c
        })
        .collect();
    let mut order: Vec<usize> = (0..rels).flat_map(|r| std::iter::repeat_n(r, edges.len())).collect();
    order.shuffle(rng);
    let mut next = vec![0usize; rels];
    let mut events: Vec<StreamEvent> = order
        .into_iter()
        .map(|r| {
            let (u, v) = copies[r][next[r]];
            next[r] += 1;
            StreamEvent::new(RelationId(r as u32), vec![Value::Int(u), Value::Int(v)], 0)
        })
        .collect();
    renumber(&mut events);
    Ok(events)
}

/// Sizes and value domains of a random instance.
#[derive(Clone, Debug)]
pub struct InstanceSpec {
    /// Rows per base relation.
    pub rows: Vec<usize>,
    /// Values of each attribute are drawn from `0..domain`.
    pub domain: Vec<i64>,
    /// Relations emitted before everything else.
    pub preload: Vec<bool>,
}

impl InstanceSpec {
    pub fn uniform(query: &JoinQuery, rows: usize, domain: i64) -> Self {
        Self {
            rows: vec![rows; query.base.len()],
            domain: vec![domain.max(1); query.attributes.len()],
            preload: vec![false; query.base.len()],
        }
    }

    pub fn rows(mut self, query: &JoinQuery, relation: &str, rows: usize) -> Self {
        let r = query.base_id(relation).expect("known relation").index();
        self.rows[r] = rows;
        self
    }

    pub fn domain(mut self, query: &JoinQuery, attr: &str, domain: i64) -> Self {
        let a = query.attribute_id(attr).expect("known attribute").index();
        self.domain[a] = domain.max(1);
        self
    }

    pub fn preload(mut self, query: &JoinQuery, relation: &str) -> Self {
        let r = query.base_id(relation).expect("known relation").index();
        self.preload[r] = true;
        self
    }
}

/// A random instance satisfying every declared foreign key: parents get
/// unique keys, children copy the key of a random parent row. Rows within a
/// relation are distinct. Preloaded relations come first, the rest arrive in
/// a random interleaving.
pub fn instance_stream(
    query: &JoinQuery,
    spec: &InstanceSpec,
    rng: &mut impl Rng,
) -> Vec<StreamEvent> {
    let base = &query.base;
    let fks: Vec<_> = query
        .fusion
        .groups
        .iter()
        .flat_map(|g| g.foreign_keys.iter().cloned())
        .collect();
    // Parents before children.
    let mut order = Vec::with_capacity(base.len());
    let mut placed = vec![false; base.len()];
    while order.len() < base.len() {
        for r in 0..base.len() {
            if !placed[r] && fks.iter().all(|fk| fk.child != r || placed[fk.parent]) {
                placed[r] = true;
                order.push(r);
            }
        }
    }

    let mut tables: Vec<Vec<Vec<Value>>> = vec![Vec::new(); base.len()];
    for &r in &order {
        let schema = &base[r];
        let as_parent: Vec<Vec<usize>> = fks
            .iter()
            .filter(|fk| fk.parent == r)
            .map(|fk| fk.key.iter().map(|a| schema.col_of(*a).unwrap()).collect())
            .collect();
        let as_child: Vec<_> = fks.iter().filter(|fk| fk.child == r).collect();
        let inherited: FxHashSet<usize> = as_child
            .iter()
            .flat_map(|fk| fk.key.iter().map(|a| schema.col_of(*a).unwrap()))
            .collect();
        // A single-column key nobody else fills is numbered sequentially.
        let sequential: Option<usize> = match as_parent.as_slice() {
            [cols] if cols.len() == 1 && !inherited.contains(&cols[0]) => Some(cols[0]),
            _ => None,
        };
        let mut ids: Vec<i64> = (0..spec.rows[r] as i64).collect();
        ids.shuffle(rng);

        let mut rows_seen: FxHashSet<Vec<Value>> = FxHashSet::default();
        let mut keys_seen: Vec<FxHashSet<Vec<Value>>> = vec![FxHashSet::default(); as_parent.len()];
        let mut out = Vec::with_capacity(spec.rows[r]);
        let mut attempts = 0usize;
        while out.len() < spec.rows[r] && attempts < 20 * spec.rows[r] + 100 {
            attempts += 1;
            let mut row: Vec<Value> = schema
                .attrs
                .iter()
                .map(|a| Value::Int(rng.random_range(0..spec.domain[a.index()])))
                .collect();
            if let Some(c) = sequential {
                row[c] = Value::Int(ids[out.len()]);
            }
            let mut orphan = false;
            for fk in &as_child {
                let parents = &tables[fk.parent];
                if parents.is_empty() {
                    orphan = true;
                    break;
                }
                let p = &parents[rng.random_range(0..parents.len())];
                let pschema = &base[fk.parent];
                for a in &fk.key {
                    row[schema.col_of(*a).unwrap()] = p[pschema.col_of(*a).unwrap()];
                }
            }
            if orphan {
                break;
            }
            let fresh_keys = as_parent
                .iter()
                .zip(&keys_seen)
                .all(|(cols, seen)| !seen.contains(&cols.iter().map(|&c| row[c]).collect::<Vec<_>>()));
            if !fresh_keys || rows_seen.contains(&row) {
                continue;
            }
            for (cols, seen) in as_parent.iter().zip(keys_seen.iter_mut()) {
                seen.insert(cols.iter().map(|&c| row[c]).collect());
            }
            rows_seen.insert(row.clone());
            out.push(row);
        }
        tables[r] = out;
    }

    let mut events = Vec::new();
    for &r in &order {
        if spec.preload[r] {
            let mut rows = std::mem::take(&mut tables[r]);
            rows.shuffle(rng);
            events.extend(rows.into_iter().map(|v| StreamEvent::new(RelationId(r as u32), v, 0)));
        }
    }
    let mut labels: Vec<usize> = (0..base.len())
        .filter(|&r| !spec.preload[r])
        .flat_map(|r| std::iter::repeat_n(r, tables[r].len()))
        .collect();
    labels.shuffle(rng);
    for t in tables.iter_mut() {
        t.shuffle(rng);
        t.reverse();
    }
    for r in labels {
        let v = tables[r].pop().expect("label count matches rows");
        events.push(StreamEvent::new(RelationId(r as u32), v, 0));
    }
    renumber(&mut events);
    events
}

/// Uniform random instance with `rows` tuples per relation over `0..domain`.
pub fn random_instance(
    query: &JoinQuery,
    rows: usize,
    domain: i64,
    rng: &mut impl Rng,
) -> Vec<StreamEvent> {
    instance_stream(query, &InstanceSpec::uniform(query, rows, domain), rng)
}

/// Sizes for the retail-shaped star with a category side branch: `sales`
/// fact rows, customers and items a tenth and a twentieth of that, twenty
/// income bands and ten categories. Household tables are preloaded.
pub fn qz_spec(query: &JoinQuery, sales: usize) -> InstanceSpec {
    let customers = (sales / 10).max(4);
    let items = (sales / 20).max(4);
    let hdemo = 200.min(customers).max(2);
    InstanceSpec::uniform(query, customers, 1 << 40)
        .rows(query, "store_sales", sales)
        .rows(query, "c1", customers)
        .rows(query, "c2", customers)
        .rows(query, "d1", hdemo)
        .rows(query, "d2", hdemo)
        .rows(query, "i1", items)
        .rows(query, "i2", items)
        .domain(query, "band", 20)
        .domain(query, "category", 10)
        .preload(query, "d1")
        .preload(query, "d2")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::queries;
    use rustc_hash::FxHashMap;

    #[test]
    fn er_edges_are_distinct_and_loop_free() {
        let e = erdos_renyi(20, 150, &mut rng(1));
        let set: FxHashSet<_> = e.iter().copied().collect();
        assert_eq!(set.len(), 150);
        assert!(e.iter().all(|(u, v)| u != v));
    }

    #[test]
    fn chung_lu_is_skewed() {
        let e = chung_lu(1000, 5000, 2.5, &mut rng(2));
        assert_eq!(e.len(), 5000);
        let mut deg: FxHashMap<i64, usize> = FxHashMap::default();
        for (u, _) in &e {
            *deg.entry(*u).or_default() += 1;
        }
        let max = deg.values().max().copied().unwrap();
        assert!(max > 50, "max out-degree {max}");
    }

    #[test]
    fn graph_stream_copies_every_edge_per_relation() {
        let q = queries::load("line3").unwrap();
        let edges = erdos_renyi(10, 30, &mut rng(3));
        let ev = graph_stream(&q, &edges, &mut rng(4)).unwrap();
        assert_eq!(ev.len(), 90);
        for r in 0..3 {
            let mut got: Vec<(i64, i64)> = ev
                .iter()
                .filter(|e| e.relation.index() == r)
                .map(|e| match (e.values[0], e.values[1]) {
                    (Value::Int(a), Value::Int(b)) => (a, b),
                    _ => unreachable!(),
                })
                .collect();
            got.sort();
            let mut want = edges.clone();
            want.sort();
            assert_eq!(got, want);
        }
        assert!(ev.iter().enumerate().all(|(i, e)| e.arrival == i as u64 + 1));
    }

    #[test]
    fn graph_stream_rejects_wide_relations() {
        let q = queries::load("qz").unwrap();
        assert!(graph_stream(&q, &[(0, 1)], &mut rng(0)).is_err());
    }

    #[test]
    fn instances_satisfy_foreign_keys() {
        let q = queries::load("qz").unwrap();
        let ev = instance_stream(&q, &qz_spec(&q, 400), &mut rng(5));
        let rows = |name: &str| -> Vec<Vec<Value>> {
            let id = q.base_id(name).unwrap();
            ev.iter().filter(|e| e.relation == id).map(|e| e.values.clone()).collect()
        };
        for fk in q.fusion.groups.iter().flat_map(|g| &g.foreign_keys) {
            let (c, p) = (&q.base[fk.child], &q.base[fk.parent]);
            let key_of = |schema: &resjoin::query::RelationSchema, row: &[Value]| -> Vec<Value> {
                fk.key.iter().map(|a| row[schema.col_of(*a).unwrap()]).collect()
            };
            let parent_keys: Vec<Vec<Value>> = rows(&p.name).iter().map(|r| key_of(p, r)).collect();
            let unique: FxHashSet<_> = parent_keys.iter().cloned().collect();
            assert_eq!(unique.len(), parent_keys.len(), "{} keys repeat", p.name);
            for r in rows(&c.name) {
                assert!(unique.contains(&key_of(c, &r)), "{} row without parent", c.name);
            }
        }
        let d1 = q.base_id("d1").unwrap();
        let first_other = ev.iter().position(|e| e.relation != d1 && e.relation != q.base_id("d2").unwrap());
        assert!(ev[..first_other.unwrap()].iter().all(|e| [d1, q.base_id("d2").unwrap()].contains(&e.relation)));
    }

    #[test]
    fn same_seed_same_stream() {
        let q = queries::load("qx").unwrap();
        let spec = InstanceSpec::uniform(&q, 30, 8);
        assert_eq!(
            instance_stream(&q, &spec, &mut rng(9)),
            instance_stream(&q, &spec, &mut rng(9))
        );
    }
}
