//! Brute-force ground truth: join results by backtracking over plain row
//! lists, and exact counts by dynamic programming over a GYO join tree.

use rustc_hash::{FxHashMap, FxHashSet};
use thiserror::Error;

use resjoin::query::gyo_join_tree;
use resjoin::{AttributeId, JoinQuery, Value};

#[derive(Clone, Copy, Debug, Error, PartialEq, Eq)]
#[error("oracle exceeded its cap of {cap} search steps")]
pub struct CapExceeded {
    pub cap: u64,
}

#[derive(Clone, Debug, Default)]
pub struct OracleRel {
    /// Attribute index of every column.
    pub attrs: Vec<usize>,
    pub rows: Vec<Vec<Value>>,
    set: FxHashSet<Vec<Value>>,
}

/// A set of relations over a shared attribute space.
#[derive(Clone, Debug)]
pub struct Oracle {
    nattrs: usize,
    rels: Vec<OracleRel>,
}

type Binding = Vec<Option<Value>>;

impl Oracle {
    pub fn new(nattrs: usize, schemas: Vec<Vec<usize>>) -> Self {
        let rels = schemas
            .into_iter()
            .map(|attrs| OracleRel {
                attrs,
                ..OracleRel::default()
            })
            .collect();
        Self { nattrs, rels }
    }

    /// The base relations of a query.
    pub fn for_query(query: &JoinQuery) -> Self {
        Self::new(
            query.attributes.len(),
            query
                .base
                .iter()
                .map(|r| r.attrs.iter().map(|a| a.index()).collect())
                .collect(),
        )
    }

    pub fn relation(&self, r: usize) -> &OracleRel {
        &self.rels[r]
    }

    pub fn relation_count(&self) -> usize {
        self.rels.len()
    }

    /// Returns false for a row already present.
    pub fn insert(&mut self, r: usize, values: &[Value]) -> bool {
        let rel = &mut self.rels[r];
        assert_eq!(values.len(), rel.attrs.len(), "arity mismatch");
        if !rel.set.insert(values.to_vec()) {
            return false;
        }
        rel.rows.push(values.to_vec());
        true
    }

    pub fn contains(&self, r: usize, values: &[Value]) -> bool {
        self.rels[r].set.contains(values)
    }

    /// `Q(R)` as full attribute vectors, sorted.
    pub fn join(&self, cap: u64) -> Result<Vec<Vec<Value>>, CapExceeded> {
        let all: Vec<usize> = (0..self.rels.len()).collect();
        let mut out = Vec::new();
        self.search(&all, None, vec![None; self.nattrs], cap, &mut |b| {
            out.push(b.iter().map(|v| v.expect("every attribute bound")).collect())
        })?;
        out.sort();
        Ok(out)
    }

    pub fn count(&self, cap: u64) -> Result<u64, CapExceeded> {
        let all: Vec<usize> = (0..self.rels.len()).collect();
        let mut n = 0u64;
        self.search(&all, None, vec![None; self.nattrs], cap, &mut |_| n += 1)?;
        Ok(n)
    }

    /// `ΔQ(R, t)`: the results that use `t` as the row of relation `r`,
    /// sorted. Empty when `t` is already stored.
    pub fn delta(&self, r: usize, t: &[Value], cap: u64) -> Result<Vec<Vec<Value>>, CapExceeded> {
        if self.contains(r, t) {
            return Ok(Vec::new());
        }
        let all: Vec<usize> = (0..self.rels.len()).collect();
        let mut out = Vec::new();
        self.search(&all, Some((r, t)), vec![None; self.nattrs], cap, &mut |b| {
            out.push(b.iter().map(|v| v.expect("every attribute bound")).collect())
        })?;
        out.sort();
        Ok(out)
    }

    /// Number of results of the join of `rels` alone that agree with `fixed`.
    pub fn partial_count(
        &self,
        rels: &[usize],
        fixed: &[(usize, Value)],
        cap: u64,
    ) -> Result<u64, CapExceeded> {
        let mut init = vec![None; self.nattrs];
        for &(a, v) in fixed {
            init[a] = Some(v);
        }
        let mut n = 0u64;
        self.search(rels, None, init, cap, &mut |_| n += 1)?;
        Ok(n)
    }

    fn search(
        &self,
        rels: &[usize],
        pinned: Option<(usize, &[Value])>,
        mut binding: Binding,
        cap: u64,
        visit: &mut dyn FnMut(&Binding),
    ) -> Result<(), CapExceeded> {
        // Most-constrained relation next, starting from the pinned one.
        let mut order = Vec::with_capacity(rels.len());
        let mut bound: Vec<bool> = binding.iter().map(Option::is_some).collect();
        let mut left: Vec<usize> = rels.to_vec();
        if let Some((p, _)) = pinned {
            left.retain(|&r| r != p);
            order.push(p);
            for &a in &self.rels[p].attrs {
                bound[a] = true;
            }
        }
        while !left.is_empty() {
            let (i, _) = left
                .iter()
                .enumerate()
                .max_by_key(|(_, &r)| {
                    let b = self.rels[r].attrs.iter().filter(|&&a| bound[a]).count();
                    (b, std::cmp::Reverse(r))
                })
                .unwrap();
            let r = left.remove(i);
            for &a in &self.rels[r].attrs {
                bound[a] = true;
            }
            order.push(r);
        }
        let mut steps = 0u64;
        self.extend(&order, 0, pinned, &mut binding, &mut steps, cap, visit)
    }

    #[allow(clippy::too_many_arguments)]
    fn extend(
        &self,
        order: &[usize],
        depth: usize,
        pinned: Option<(usize, &[Value])>,
        binding: &mut Binding,
        steps: &mut u64,
        cap: u64,
        visit: &mut dyn FnMut(&Binding),
    ) -> Result<(), CapExceeded> {
        if depth == order.len() {
            visit(binding);
            return Ok(());
        }
        let r = order[depth];
        let rel = &self.rels[r];
        let single;
        let rows: &[Vec<Value>] = match pinned {
            Some((p, t)) if p == r => {
                single = [t.to_vec()];
                &single
            }
            _ => &rel.rows,
        };
        let mut assigned = Vec::with_capacity(rel.attrs.len());
        for row in rows {
            *steps += 1;
            if *steps > cap {
                return Err(CapExceeded { cap });
            }
            let mut ok = true;
            for (c, &a) in rel.attrs.iter().enumerate() {
                match binding[a] {
                    Some(v) if v != row[c] => {
                        ok = false;
                        break;
                    }
                    Some(_) => {}
                    None => {
                        binding[a] = Some(row[c]);
                        assigned.push(a);
                    }
                }
            }
            if ok {
                self.extend(order, depth + 1, pinned, binding, steps, cap, visit)?;
            }
            for a in assigned.drain(..) {
                binding[a] = None;
            }
        }
        Ok(())
    }

    /// `|Q(R)|` by message passing over a GYO join tree; `None` for a
    /// cyclic query.
    pub fn tree_count(&self) -> Option<u128> {
        let n = self.rels.len();
        let sets: Vec<Vec<AttributeId>> = self
            .rels
            .iter()
            .map(|r| r.attrs.iter().map(|&a| AttributeId(a as u32)).collect())
            .collect();
        let edges = gyo_join_tree(&sets)?;
        let mut adj = vec![Vec::new(); n];
        for &(a, b) in &edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        // Post-order from relation 0.
        let mut parent = vec![usize::MAX; n];
        let mut seen = vec![false; n];
        let mut pre = vec![0usize];
        seen[0] = true;
        let mut i = 0;
        while i < pre.len() {
            let u = pre[i];
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    parent[v] = u;
                    pre.push(v);
                }
            }
            i += 1;
        }
        let shared = |e: usize, p: usize| -> Vec<(usize, usize)> {
            // (column in e, column in p)
            self.rels[e]
                .attrs
                .iter()
                .enumerate()
                .filter_map(|(c, a)| self.rels[p].attrs.iter().position(|b| b == a).map(|pc| (c, pc)))
                .collect()
        };
        let mut messages: Vec<FxHashMap<Vec<Value>, u128>> = vec![FxHashMap::default(); n];
        let mut total = 0u128;
        for &u in pre.iter().rev() {
            let children: Vec<usize> = adj[u].iter().copied().filter(|&v| parent[v] == u).collect();
            let child_keys: Vec<Vec<(usize, usize)>> = children.iter().map(|&c| shared(c, u)).collect();
            let up = (parent[u] != usize::MAX).then(|| shared(u, parent[u]));
            let mut msg: FxHashMap<Vec<Value>, u128> = FxHashMap::default();
            for row in &self.rels[u].rows {
                let mut w = 1u128;
                for (ci, &c) in children.iter().enumerate() {
                    let key: Vec<Value> = child_keys[ci].iter().map(|&(_, pc)| row[pc]).collect();
                    w *= messages[c].get(&key).copied().unwrap_or(0);
                    if w == 0 {
                        break;
                    }
                }
                match &up {
                    Some(cols) => {
                        let key: Vec<Value> = cols.iter().map(|&(c, _)| row[c]).collect();
                        *msg.entry(key).or_default() += w;
                    }
                    None => total += w,
                }
            }
            messages[u] = msg;
        }
        Some(total)
    }
}
