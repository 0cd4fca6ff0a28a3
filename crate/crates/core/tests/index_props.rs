use std::collections::HashSet;

use proptest::prelude::*;

use resjoin::index::{wcnt, JoinIndex};
use resjoin::query::load_query;
use resjoin::storage::RowId;
use resjoin::{JoinQuery, Value};

const LINE3: &str = r#"
[[relation]]
name = "R1"
attrs = ["X", "Y"]
[[relation]]
name = "R2"
attrs = ["Y", "Z"]
[[relation]]
name = "R3"
attrs = ["Z", "W"]
[tree]
edges = [["R1", "R2"], ["R2", "R3"]]
"#;

const STAR3: &str = r#"
[[relation]]
name = "A"
attrs = ["s", "a"]
[[relation]]
name = "B"
attrs = ["s", "b"]
[[relation]]
name = "C"
attrs = ["s", "c"]
[tree]
edges = [["A", "B"], ["A", "C"]]
"#;

const LINE4: &str = r#"
[[relation]]
name = "R1"
attrs = ["a", "b"]
[[relation]]
name = "R2"
attrs = ["b", "c"]
[[relation]]
name = "R3"
attrs = ["c", "d"]
[[relation]]
name = "R4"
attrs = ["d", "e"]
[tree]
edges = [["R1", "R2"], ["R2", "R3"], ["R3", "R4"]]
"#;

/// A relation with three attributes whose middle node is narrower than its
/// neighbours' union, so grouping has something to do.
const WIDE: &str = r#"
[[relation]]
name = "F"
attrs = ["u", "v", "w"]
[[relation]]
name = "G"
attrs = ["u", "x"]
[[relation]]
name = "H"
attrs = ["v", "y"]
[tree]
edges = [["F", "G"], ["F", "H"]]
"#;

fn query(text: &str) -> JoinQuery {
    load_query(text).unwrap()
}

/// Every combination of rows that agrees on shared attributes.
fn brute_join(q: &JoinQuery, rows: &[Vec<Vec<Value>>]) -> HashSet<Vec<Value>> {
    fn go(
        q: &JoinQuery,
        rows: &[Vec<Vec<Value>>],
        r: usize,
        binding: &mut Vec<Option<Value>>,
        out: &mut HashSet<Vec<Value>>,
    ) {
        if r == rows.len() {
            out.insert(binding.iter().map(|v| v.unwrap()).collect());
            return;
        }
        let attrs = &q.relations[r].attrs;
        for row in &rows[r] {
            if attrs
                .iter()
                .zip(row)
                .all(|(a, v)| binding[a.index()].is_none_or(|b| b == *v))
            {
                let saved = binding.clone();
                for (a, v) in attrs.iter().zip(row) {
                    binding[a.index()] = Some(*v);
                }
                go(q, rows, r + 1, binding, out);
                *binding = saved;
            }
        }
    }
    let mut out = HashSet::new();
    go(q, rows, 0, &mut vec![None; q.attributes.len()], &mut out);
    out
}

fn values(index: &JoinIndex, q: &JoinQuery, ids: &[RowId]) -> Vec<Value> {
    let mut out = vec![Value::Int(0); q.attributes.len()];
    for (e, r) in q.index.relations.iter().enumerate() {
        for (a, v) in r.attrs.iter().zip(index.relation(e).row(ids[e])) {
            out[a.index()] = *v;
        }
    }
    out
}

/// `π_{key(c)}` of a row of relation `e`, in the tree rooted at `root`.
fn key_of(index: &JoinIndex, q: &JoinQuery, root: usize, c: usize, e: usize, row: &[Value]) -> Vec<Value> {
    let rel = index.relation(e);
    q.index.rooted[root].key[c]
        .iter()
        .map(|a| row[rel.col_of(*a).unwrap()])
        .collect()
}

fn events(rels: usize) -> impl Strategy<Value = Vec<(usize, i64, i64, i64)>> {
    prop::collection::vec((0..rels, 0i64..4, 0i64..4, 0i64..3), 0..70)
}

fn row_for(q: &JoinQuery, e: usize, a: i64, b: i64, c: i64) -> Vec<Value> {
    [a, b, c][..q.relations[e].attrs.len()]
        .iter()
        .map(|&x| Value::Int(x))
        .collect()
}

/// Replays a random stream, checking counters, batch sizes and retrieval.
fn replay(text: &str, evs: &[(usize, i64, i64, i64)], grouping: bool) -> Result<(), TestCaseError> {
    let q = query(text).with_grouping(grouping);
    let n = q.relations.len();
    let mut index = JoinIndex::new(q.index.clone());
    if grouping {
        prop_assert!((0..n).any(|r| (0..n).any(|e| index.is_grouped(r, e))));
    }
    let mut rows: Vec<Vec<Vec<Value>>> = vec![Vec::new(); n];
    let mut all = HashSet::new();
    for &(e, a, b, c) in evs {
        let e = e % n;
        let row = row_for(&q, e, a, b, c);
        let Some(id) = index.insert(e, &row).unwrap() else {
            prop_assert!(rows[e].contains(&row));
            continue;
        };
        rows[e].push(row.clone());

        // Batch size law against the explicit recursion and the child counters.
        let batch = index.batch(e, id);
        let mat = index.materialize(&batch);
        prop_assert_eq!(mat.len() as u128, batch.size);
        let rooted = &q.index.rooted[e];
        let product: u128 = rooted.children[e]
            .iter()
            .map(|&c| index.cnt(e, c, &key_of(&index, &q, e, c, e, &row)))
            .product();
        prop_assert_eq!(batch.size, product);

        // Positional retrieval reproduces the materialized array.
        let mut out = vec![0 as RowId; n];
        for (z, want) in mat.iter().enumerate() {
            let real = index.retrieve(&batch, z as u128, &mut out).unwrap();
            prop_assert_eq!(real, want.is_some());
            if real {
                prop_assert_eq!(&out[..], &want.as_ref().unwrap()[..]);
                prop_assert!(all.insert(values(&index, &q, &out)), "result repeated across events");
            }
        }
    }
    // Completeness: every result of the final instance came from exactly one batch.
    prop_assert_eq!(all, brute_join(&q, &rows));

    // Counter consistency in every rooting, recomputed from the rows.
    if !grouping {
        for (root, rooted) in q.index.rooted.iter().enumerate() {
            for e in 0..n {
                if e == root {
                    continue;
                }
                for (key, cnt) in index.keys(root, e) {
                    let mut want = 0u128;
                    let mut members = 0usize;
                    for row in index.relation(e).rows() {
                        if key_of(&index, &q, root, e, e, row) != key.to_vec() {
                            continue;
                        }
                        members += 1;
                        want += rooted.children[e]
                            .iter()
                            .map(|&c| wcnt(index.cnt(root, c, &key_of(&index, &q, root, c, e, row))))
                            .product::<u128>();
                    }
                    prop_assert_eq!(cnt, want);
                    prop_assert!(cnt <= wcnt(cnt) && (cnt == 0 || wcnt(cnt) < 2 * cnt));
                    if rooted.is_leaf(e) {
                        continue;
                    }
                    let profile = index.bucket_profile(root, e, &key);
                    let by_buckets: u128 = profile.iter().map(|&(i, m)| (1u128 << i) * m as u128).sum();
                    prop_assert_eq!(by_buckets, cnt);
                    prop_assert!(profile.iter().map(|p| p.1).sum::<usize>() <= members);
                    prop_assert!(profile.windows(2).all(|w| w[0].0 < w[1].0));
                }
            }
        }
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn line3_index(evs in events(3)) {
        replay(LINE3, &evs, false)?;
    }

    #[test]
    fn star3_index(evs in events(3)) {
        replay(STAR3, &evs, false)?;
    }

    #[test]
    fn line4_index(evs in events(4)) {
        replay(LINE4, &evs, false)?;
    }

    #[test]
    fn wide_index_ungrouped(evs in events(3)) {
        replay(WIDE, &evs, false)?;
    }

    #[test]
    fn wide_index_grouped(evs in events(3)) {
        replay(WIDE, &evs, true)?;
    }
}

