//! Dynamic join index with approximate degree counters and positional access
//! to dummy-padded delta batches.
//!
//! One [`TreeIndex`] is kept for every rooting of the join tree. For a non-root
//! node `e` and key value `t` of `key(e)`, `cnt[e,t]` sums, over the members of
//! `R_e ⋉ t`, the product of the children's rounded counters `wcnt`. Members
//! sit in buckets by the exponent of that product, so the `z`-th position of
//! the padded array below `t` is found by a prefix scan over the buckets.

use rustc_hash::FxHashMap;
use thiserror::Error;

use crate::model::{project_cols, AttributeId, Key, Value};
use crate::query::{IndexSchema, RootedTree};
use crate::storage::{Inserted, Relation, RowId, StorageError};

/// `2^⌈log2 cnt⌉`, or 0 for an empty count.
#[inline]
pub fn wcnt(cnt: u128) -> u128 {
    if cnt == 0 {
        0
    } else {
        cnt.next_power_of_two()
    }
}

#[inline]
fn ceil_log2(x: u128) -> u32 {
    debug_assert!(x > 0);
    x.next_power_of_two().trailing_zeros()
}

#[inline]
fn low_mask(bits: u32) -> u128 {
    if bits >= 128 {
        u128::MAX
    } else {
        (1u128 << bits) - 1
    }
}

const RESERVE: u8 = u8::MAX;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum IndexError {
    #[error("position {pos} is outside a batch of size {size}")]
    PositionOutOfRange { pos: u128, size: u128 },
    #[error("unknown relation index {0}")]
    UnknownRelation(usize),
    #[error(transparent)]
    Storage(#[from] StorageError),
}

/// Work counters of the index.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct IndexCounters {
    /// Executions of the parent re-bucketing loop after a `wcnt` change.
    pub propagation_loops: u64,
    pub wcnt_doublings: u64,
    pub bucket_moves: u64,
}

impl IndexCounters {
    pub fn total_work(&self) -> u64 {
        self.propagation_loops + self.bucket_moves
    }
}

#[derive(Clone, Debug)]
struct Bucket {
    exp: u8,
    members: Vec<u32>,
}

#[derive(Clone, Debug, Default)]
struct KeyEntry {
    cnt: u128,
    /// Non-empty buckets, ascending by exponent.
    buckets: Vec<Bucket>,
    /// Parent-node members whose projection on `key(e)` is this key.
    parent_members: Vec<u32>,
    /// Leaf nodes only: `R_e ⋉ t` in arrival order.
    rows: Vec<RowId>,
}

#[derive(Clone, Copy, Debug)]
struct Slot {
    exp: u8,
    pos: u32,
}

#[derive(Clone, Debug)]
struct NodeIndex {
    parent: Option<usize>,
    children: Vec<usize>,
    root: bool,
    leaf: bool,
    grouped: bool,
    key_cols: Vec<usize>,
    child_cols: Vec<Vec<usize>>,
    group_cols: Vec<usize>,
    entries: FxHashMap<Key, u32>,
    entry: Vec<KeyEntry>,
    groups: FxHashMap<Key, u32>,
    group_rows: Vec<Vec<RowId>>,
    member_entry: Vec<u32>,
    member_children: Vec<u32>,
    slots: Vec<Slot>,
}

impl NodeIndex {
    fn entry_id(&mut self, key: Key) -> u32 {
        let next = self.entry.len() as u32;
        let id = *self.entries.entry(key).or_insert(next);
        if id == next {
            self.entry.push(KeyEntry::default());
        }
        id
    }

    #[inline]
    fn child_entry(&self, member: u32, i: usize) -> u32 {
        self.member_children[member as usize * self.children.len() + i]
    }
}

/// The index for one rooting of the join tree.
#[derive(Clone, Debug)]
pub struct TreeIndex {
    tree: RootedTree,
    nodes: Vec<NodeIndex>,
}

impl TreeIndex {
    fn new(schema: &IndexSchema, root: usize) -> Self {
        let tree = schema.rooted[root].clone();
        let cols_of = |e: usize, attrs: &[AttributeId]| -> Vec<usize> {
            attrs
                .iter()
                .map(|a| schema.relations[e].col_of(*a).expect("key inside relation"))
                .collect()
        };
        let nodes = (0..schema.relations.len())
            .map(|e| {
                let children = tree.children[e].clone();
                let root = tree.parent[e].is_none();
                let leaf = children.is_empty();
                let mut ebar: Vec<AttributeId> = tree.key[e].clone();
                for &c in &children {
                    ebar.extend(tree.key[c].iter().copied());
                }
                ebar.sort();
                ebar.dedup();
                let grouped = schema.grouping[e]
                    && !root
                    && !leaf
                    && ebar.len() < schema.relations[e].attrs.len();
                NodeIndex {
                    parent: tree.parent[e],
                    root,
                    leaf,
                    grouped,
                    key_cols: cols_of(e, &tree.key[e]),
                    child_cols: children.iter().map(|&c| cols_of(e, &tree.key[c])).collect(),
                    group_cols: if grouped { cols_of(e, &ebar) } else { Vec::new() },
                    children,
                    entries: FxHashMap::default(),
                    entry: Vec::new(),
                    groups: FxHashMap::default(),
                    group_rows: Vec::new(),
                    member_entry: Vec::new(),
                    member_children: Vec::new(),
                    slots: Vec::new(),
                }
            })
            .collect();
        Self { tree, nodes }
    }

    pub fn tree(&self) -> &RootedTree {
        &self.tree
    }

    fn insert(&mut self, e: usize, row_id: RowId, row: &[Value], counters: &mut IndexCounters) {
        let (root, leaf, grouped) = {
            let n = &self.nodes[e];
            (n.root, n.leaf, n.grouped)
        };
        if root {
            self.register_member(e, row, false);
            return;
        }
        if leaf {
            let key = project_cols(row, &self.nodes[e].key_cols);
            let eid = self.nodes[e].entry_id(key);
            let entry = &mut self.nodes[e].entry[eid as usize];
            entry.rows.push(row_id);
            let old = entry.cnt;
            entry.cnt += 1;
            if wcnt(old) != wcnt(old + 1) {
                counters.wcnt_doublings += 1;
                self.propagate(e, eid, counters);
            }
            return;
        }
        if grouped {
            let gkey = project_cols(row, &self.nodes[e].group_cols);
            if let Some(&gid) = self.nodes[e].groups.get(&gkey) {
                let rows = &mut self.nodes[e].group_rows[gid as usize];
                rows.push(row_id);
                let feq = rows.len() as u128;
                if wcnt(feq) != wcnt(feq - 1) {
                    self.update_member(e, gid, counters);
                }
            } else {
                let gid = self.register_member(e, row, true);
                let n = &mut self.nodes[e];
                n.groups.insert(gkey, gid);
                n.group_rows.push(vec![row_id]);
                self.update_member(e, gid, counters);
            }
        } else {
            let m = self.register_member(e, row, true);
            debug_assert_eq!(m, row_id);
            self.update_member(e, m, counters);
        }
    }

    /// Resolves the member's own and children's key entries once.
    fn register_member(&mut self, e: usize, row: &[Value], with_slot: bool) -> u32 {
        let m = if self.nodes[e].root {
            (self.nodes[e].member_children.len() / self.nodes[e].children.len().max(1)) as u32
        } else {
            self.nodes[e].member_entry.len() as u32
        };
        let children = self.nodes[e].children.clone();
        for (i, &c) in children.iter().enumerate() {
            let key = project_cols(row, &self.nodes[e].child_cols[i]);
            let ce = self.nodes[c].entry_id(key);
            if !self.nodes[e].root {
                self.nodes[c].entry[ce as usize].parent_members.push(m);
            }
            self.nodes[e].member_children.push(ce);
        }
        if self.nodes[e].root {
            if children.is_empty() {
                self.nodes[e].slots.push(Slot { exp: 0, pos: 0 });
            }
            return m;
        }
        let key = project_cols(row, &self.nodes[e].key_cols);
        let own = self.nodes[e].entry_id(key);
        let n = &mut self.nodes[e];
        n.member_entry.push(own);
        if with_slot {
            n.slots.push(Slot {
                exp: RESERVE,
                pos: 0,
            });
        }
        m
    }

    fn member_exponent(&self, e: usize, m: u32) -> u8 {
        let n = &self.nodes[e];
        let mut exp = if n.grouped {
            ceil_log2(n.group_rows[m as usize].len() as u128)
        } else {
            0
        };
        for (i, &c) in n.children.iter().enumerate() {
            let cnt = self.nodes[c].entry[n.child_entry(m, i) as usize].cnt;
            if cnt == 0 {
                return RESERVE;
            }
            exp += ceil_log2(cnt);
        }
        assert!(exp < 128, "counter exponent {exp} overflows 128-bit counts");
        exp as u8
    }

    fn update_member(&mut self, e: usize, m: u32, counters: &mut IndexCounters) {
        let new = self.member_exponent(e, m);
        let n = &mut self.nodes[e];
        let slot = n.slots[m as usize];
        if slot.exp == new {
            return;
        }
        counters.bucket_moves += 1;
        let eid = n.member_entry[m as usize];
        let entry = &mut n.entry[eid as usize];
        let old_cnt = entry.cnt;
        if slot.exp != RESERVE {
            let b = entry
                .buckets
                .binary_search_by_key(&slot.exp, |b| b.exp)
                .expect("member bucket exists");
            let bucket = &mut entry.buckets[b];
            bucket.members.swap_remove(slot.pos as usize);
            if let Some(&moved) = bucket.members.get(slot.pos as usize) {
                n.slots[moved as usize].pos = slot.pos;
            }
            if bucket.members.is_empty() {
                entry.buckets.remove(b);
            }
            entry.cnt -= 1u128 << slot.exp;
        }
        let mut pos = 0;
        if new != RESERVE {
            let b = match entry.buckets.binary_search_by_key(&new, |b| b.exp) {
                Ok(b) => b,
                Err(b) => {
                    entry.buckets.insert(
                        b,
                        Bucket {
                            exp: new,
                            members: Vec::new(),
                        },
                    );
                    b
                }
            };
            pos = entry.buckets[b].members.len() as u32;
            entry.buckets[b].members.push(m);
            entry.cnt += 1u128 << new;
        }
        let new_cnt = entry.cnt;
        n.slots[m as usize] = Slot { exp: new, pos };
        if wcnt(old_cnt) != wcnt(new_cnt) {
            counters.wcnt_doublings += 1;
            self.propagate(e, eid, counters);
        }
    }

    fn propagate(&mut self, e: usize, eid: u32, counters: &mut IndexCounters) {
        let p = self.nodes[e].parent.expect("non-root node");
        if self.nodes[p].root {
            return;
        }
        let len = self.nodes[e].entry[eid as usize].parent_members.len();
        for i in 0..len {
            let m = self.nodes[e].entry[eid as usize].parent_members[i];
            counters.propagation_loops += 1;
            self.update_member(p, m, counters);
        }
    }

    /// Radix of child `i` of a root row: the exact count.
    fn root_radices(&self, row: RowId) -> impl Iterator<Item = u128> + '_ {
        let n = &self.nodes[self.tree.root];
        n.children
            .iter()
            .enumerate()
            .map(move |(i, &c)| self.nodes[c].entry[n.child_entry(row, i) as usize].cnt)
    }

    fn batch_size(&self, row: RowId) -> u128 {
        self.root_radices(row)
            .try_fold(1u128, |acc, r| acc.checked_mul(r))
            .expect("batch size overflows 128 bits")
    }

    fn retrieve(&self, row: RowId, mut z: u128, out: &mut [RowId]) -> bool {
        let r = self.tree.root;
        out[r] = row;
        let n = &self.nodes[r];
        let radices: Vec<u128> = self.root_radices(row).collect();
        let mut digits = vec![0u128; radices.len()];
        for i in (0..radices.len()).rev() {
            digits[i] = z % radices[i];
            z /= radices[i];
        }
        for (i, &c) in n.children.iter().enumerate() {
            if !self.retrieve_key(c, n.child_entry(row, i), digits[i], out) {
                return false;
            }
        }
        true
    }

    fn retrieve_key(&self, e: usize, eid: u32, mut z: u128, out: &mut [RowId]) -> bool {
        let n = &self.nodes[e];
        let entry = &n.entry[eid as usize];
        if z >= entry.cnt {
            return false;
        }
        if n.leaf {
            out[e] = entry.rows[z as usize];
            return true;
        }
        for b in &entry.buckets {
            let span = (b.members.len() as u128) << b.exp;
            if z >= span {
                z -= span;
                continue;
            }
            let m = b.members[(z >> b.exp) as usize];
            let mut l = z & low_mask(b.exp as u32);
            let row = if n.grouped {
                let rows = &n.group_rows[m as usize];
                let h = b.exp as u32 - ceil_log2(rows.len() as u128);
                let q = l >> h;
                if q >= rows.len() as u128 {
                    return false;
                }
                l &= low_mask(h);
                rows[q as usize]
            } else {
                m
            };
            out[e] = row;
            for i in (0..n.children.len()).rev() {
                let c = n.children[i];
                let ce = n.child_entry(m, i);
                let bits = ceil_log2(self.nodes[c].entry[ce as usize].cnt);
                let zi = l & low_mask(bits);
                l >>= bits;
                if !self.retrieve_key(c, ce, zi, out) {
                    return false;
                }
            }
            return true;
        }
        unreachable!("z < cnt always lands in a bucket")
    }

    fn entry(&self, e: usize, key: &[Value]) -> Option<&KeyEntry> {
        self.nodes[e]
            .entries
            .get(key)
            .map(|&id| &self.nodes[e].entry[id as usize])
    }
}

/// A delta batch: the padded array anchored at a freshly inserted root row.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DeltaBatch {
    pub relation: usize,
    pub row: RowId,
    pub size: u128,
}

/// Relations plus one [`TreeIndex`] per rooting.
#[derive(Clone, Debug)]
pub struct JoinIndex {
    schema: IndexSchema,
    relations: Vec<Relation>,
    trees: Vec<TreeIndex>,
    counters: IndexCounters,
}

impl JoinIndex {
    pub fn new(schema: IndexSchema) -> Self {
        let relations = schema
            .relations
            .iter()
            .map(|r| Relation::new(r.id, r.name.clone(), r.attrs.clone()))
            .collect();
        let trees = (0..schema.relations.len())
            .map(|r| TreeIndex::new(&schema, r))
            .collect();
        Self {
            schema,
            relations,
            trees,
            counters: IndexCounters::default(),
        }
    }

    pub fn schema(&self) -> &IndexSchema {
        &self.schema
    }

    pub fn relations(&self) -> &[Relation] {
        &self.relations
    }

    pub fn relation(&self, e: usize) -> &Relation {
        &self.relations[e]
    }

    pub fn tree(&self, root: usize) -> &TreeIndex {
        &self.trees[root]
    }

    pub fn counters(&self) -> IndexCounters {
        self.counters
    }

    /// Inserts a row into relation `e` and updates every rooted tree.
    /// Returns `None` for a duplicate.
    pub fn insert(&mut self, e: usize, values: &[Value]) -> Result<Option<RowId>, IndexError> {
        let rel = self
            .relations
            .get_mut(e)
            .ok_or(IndexError::UnknownRelation(e))?;
        let row_id = match rel.insert(values)? {
            Inserted::Duplicate => return Ok(None),
            Inserted::New(id) => id,
        };
        let row = self.relations[e].row(row_id);
        for tree in &mut self.trees {
            tree.insert(e, row_id, row, &mut self.counters);
        }
        Ok(Some(row_id))
    }

    /// The batch for a row of `e`, in the tree rooted at `e`.
    pub fn batch(&self, e: usize, row: RowId) -> DeltaBatch {
        DeltaBatch {
            relation: e,
            row,
            size: self.trees[e].batch_size(row),
        }
    }

    /// Fills `out` (one row id per relation) with the result at position `z`.
    /// `Ok(false)` marks a dummy.
    pub fn retrieve(
        &self,
        batch: &DeltaBatch,
        z: u128,
        out: &mut [RowId],
    ) -> Result<bool, IndexError> {
        if z >= batch.size {
            return Err(IndexError::PositionOutOfRange {
                pos: z,
                size: batch.size,
            });
        }
        Ok(self.trees[batch.relation].retrieve(batch.row, z, out))
    }

    /// `cnt[T_root, e, key]`, with key values ordered by attribute id.
    pub fn cnt(&self, root: usize, e: usize, key: &[Value]) -> u128 {
        self.trees[root].entry(e, key).map_or(0, |en| en.cnt)
    }

    /// All key values materialized at node `e` of the tree rooted at `root`.
    pub fn keys(&self, root: usize, e: usize) -> Vec<(Key, u128)> {
        let n = &self.trees[root].nodes[e];
        let mut out: Vec<(Key, u128)> = n
            .entries
            .iter()
            .map(|(k, &id)| (k.clone(), n.entry[id as usize].cnt))
            .collect();
        out.sort();
        out
    }

    /// `(exponent, bucket size)` pairs below a key, ascending.
    pub fn bucket_profile(&self, root: usize, e: usize, key: &[Value]) -> Vec<(u8, usize)> {
        self.trees[root].entry(e, key).map_or(Vec::new(), |en| {
            en.buckets
                .iter()
                .map(|b| (b.exp, b.members.len()))
                .collect()
        })
    }

    /// Whether node `e` groups its tuples in the tree rooted at `root`.
    pub fn is_grouped(&self, root: usize, e: usize) -> bool {
        self.trees[root].nodes[e].grouped
    }

    /// The padded array of a batch built by explicit recursion over the
    /// buckets, without positional decoding. Dummies are `None`.
    pub fn materialize(&self, batch: &DeltaBatch) -> Vec<Option<Vec<RowId>>> {
        let t = &self.trees[batch.relation];
        let r = t.tree.root;
        let width = self.relations.len();
        let mut acc: Vec<Option<Vec<RowId>>> = vec![Some(vec![RowId::MAX; width])];
        acc[0].as_mut().unwrap()[r] = batch.row;
        let n = &t.nodes[r];
        for (i, &c) in n.children.iter().enumerate() {
            let ce = n.child_entry(batch.row, i);
            let cnt = t.nodes[c].entry[ce as usize].cnt;
            let sub = self.materialize_key(t, c, ce, cnt);
            acc = cross(&acc, &sub);
        }
        acc
    }

    fn materialize_key(
        &self,
        t: &TreeIndex,
        e: usize,
        eid: u32,
        len: u128,
    ) -> Vec<Option<Vec<RowId>>> {
        let width = self.relations.len();
        let n = &t.nodes[e];
        let entry = &n.entry[eid as usize];
        let mut out = Vec::new();
        if n.leaf {
            for &row in &entry.rows {
                let mut v = vec![RowId::MAX; width];
                v[e] = row;
                out.push(Some(v));
            }
        } else {
            for b in &entry.buckets {
                for &m in &b.members {
                    let rows: Vec<RowId> = if n.grouped {
                        n.group_rows[m as usize].clone()
                    } else {
                        vec![m]
                    };
                    let mut child_part: Vec<Option<Vec<RowId>>> = vec![Some(vec![RowId::MAX; width])];
                    for (i, &c) in n.children.iter().enumerate() {
                        let ce = n.child_entry(m, i);
                        let w = wcnt(t.nodes[c].entry[ce as usize].cnt);
                        child_part = cross(&child_part, &self.materialize_key(t, c, ce, w));
                    }
                    let span = 1u128 << b.exp;
                    let mut block: Vec<Option<Vec<RowId>>> = Vec::new();
                    for &row in &rows {
                        for cp in &child_part {
                            block.push(cp.clone().map(|mut v| {
                                v[e] = row;
                                v
                            }));
                        }
                    }
                    block.resize(span as usize, None);
                    out.extend(block);
                }
            }
        }
        out.resize(len as usize, None);
        out
    }
}

fn cross(a: &[Option<Vec<RowId>>], b: &[Option<Vec<RowId>>]) -> Vec<Option<Vec<RowId>>> {
    let mut out = Vec::with_capacity(a.len() * b.len());
    for x in a {
        for y in b {
            out.push(match (x, y) {
                (Some(x), Some(y)) => Some(
                    x.iter()
                        .zip(y)
                        .map(|(&p, &q)| if p == RowId::MAX { q } else { p })
                        .collect(),
                ),
                _ => None,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::query::load_query;

    fn iv(v: &[i64]) -> Vec<Value> {
        v.iter().map(|&x| Value::Int(x)).collect()
    }

    fn line3() -> JoinIndex {
        let q = load_query(
            r#"
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
        "#,
        )
        .unwrap();
        JoinIndex::new(q.index)
    }

    #[test]
    fn wcnt_rounding() {
        assert_eq!(wcnt(0), 0);
        assert_eq!(wcnt(1), 1);
        assert_eq!(wcnt(2), 2);
        assert_eq!(wcnt(3), 4);
        assert_eq!(wcnt(5), 8);
        for c in 1..2000u128 {
            assert!(c <= wcnt(c) && wcnt(c) < 2 * c);
        }
    }

    #[test]
    fn first_r2_tuple_waits_in_reserve() {
        let mut idx = line3();
        idx.insert(1, &iv(&[1, 1])).unwrap();
        // Tree rooted at R1: R3 is empty, so the (1,1) member contributes nothing.
        assert_eq!(idx.cnt(0, 1, &iv(&[1])), 0);
        assert!(idx.bucket_profile(0, 1, &iv(&[1])).is_empty());
        idx.insert(2, &iv(&[1, 5])).unwrap();
        assert_eq!(idx.bucket_profile(0, 1, &iv(&[1])), vec![(0, 1)]);
        assert_eq!(idx.cnt(0, 1, &iv(&[1])), 1);
    }

    #[test]
    fn rebucketing_follows_doublings() {
        let mut idx = line3();
        idx.insert(1, &iv(&[1, 1])).unwrap();
        idx.insert(1, &iv(&[2, 1])).unwrap();
        let mut moves = Vec::new();
        let mut wc = Vec::new();
        for w in 0..3 {
            let before = idx.counters().propagation_loops;
            idx.insert(2, &iv(&[1, w])).unwrap();
            moves.push(idx.counters().propagation_loops - before);
            wc.push(wcnt(idx.cnt(0, 2, &iv(&[1]))));
        }
        assert_eq!(wc, vec![1, 2, 4]);
        // Only the tree rooted at R1 has R3 below a non-root R2. Both R2
        // members move on every change of wcnt: 0 -> 1, 1 -> 2 and 2 -> 4.
        assert_eq!(moves, vec![2, 2, 2]);
        let row = idx.insert(2, &iv(&[1, 3])).unwrap();
        assert!(row.is_some());
        assert_eq!(wcnt(idx.cnt(0, 2, &iv(&[1]))), 4);
    }

    #[test]
    fn two_table_batch_is_exact_list() {
        let q = load_query(
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
        .unwrap();
        let mut idx = JoinIndex::new(q.index);
        idx.insert(0, &iv(&[1, 1])).unwrap();
        idx.insert(0, &iv(&[2, 1])).unwrap();
        let row = idx.insert(1, &iv(&[1, 9])).unwrap().unwrap();
        let batch = idx.batch(1, row);
        assert_eq!(batch.size, 2);
        let mut out = [0; 2];
        for z in 0..2 {
            assert!(idx.retrieve(&batch, z, &mut out).unwrap());
            assert_eq!(out, [z as RowId, row]);
        }
        assert_eq!(
            idx.retrieve(&batch, 2, &mut out),
            Err(IndexError::PositionOutOfRange { pos: 2, size: 2 })
        );
    }

    #[test]
    fn empty_children_give_empty_batch() {
        let mut idx = line3();
        let row = idx.insert(0, &iv(&[1, 2])).unwrap().unwrap();
        assert_eq!(idx.batch(0, row).size, 0);
        let row = idx.insert(1, &iv(&[2, 3])).unwrap().unwrap();
        assert_eq!(idx.batch(1, row).size, 0);
    }

    #[test]
    fn bucket_sum_example() {
        // Under Y=1: two R2 members whose Z-side has count 2, one with count 8.
        let mut idx = line3();
        for (z, n) in [(10, 2), (11, 2), (12, 8)] {
            idx.insert(1, &iv(&[1, z])).unwrap();
            for w in 0..n {
                idx.insert(2, &iv(&[z, w])).unwrap();
            }
        }
        assert_eq!(idx.bucket_profile(0, 1, &iv(&[1])), vec![(1, 2), (3, 1)]);
        let row = idx.insert(0, &iv(&[7, 1])).unwrap().unwrap();
        let batch = idx.batch(0, row);
        assert_eq!(batch.size, 12);
        // z = 6 skips the exponent-1 bucket (4 slots) and lands at j=0, l=2.
        let mut out = [0; 3];
        assert!(idx.retrieve(&batch, 6, &mut out).unwrap());
        assert_eq!(idx.relation(1).row(out[1]), &iv(&[1, 12])[..]);
        assert_eq!(idx.relation(2).row(out[2]), &iv(&[12, 2])[..]);
    }

    #[test]
    fn sweep_matches_materialized_recursion() {
        let mut idx = line3();
        let mut rng = 12345u64;
        let mut next = || {
            rng = rng.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (rng >> 33) as i64 % 4
        };
        for _ in 0..150 {
            let rel = (next() % 3) as usize;
            let vals = iv(&[next(), next()]);
            if let Some(row) = idx.insert(rel, &vals).unwrap() {
                let batch = idx.batch(rel, row);
                let mat = idx.materialize(&batch);
                assert_eq!(mat.len() as u128, batch.size);
                let mut out = [0; 3];
                for (z, want) in mat.iter().enumerate() {
                    let real = idx.retrieve(&batch, z as u128, &mut out).unwrap();
                    assert_eq!(real, want.is_some());
                    if let Some(w) = want {
                        assert_eq!(&out[..], &w[..]);
                    }
                }
            }
        }
    }
}
