//! Cyclic queries through a user-supplied generalized hypertree decomposition.
//!
//! Every node keeps the projections `π_{e∩λ(u)} R_e` of the relations it
//! overlaps. When a projection is new, the node's delta `Q_u(R_u) ⋉ t` is
//! enumerated by attribute-at-a-time backtracking, and every delta tuple is
//! handed to the acyclic index over the decomposition tree.

use rustc_hash::{FxHashMap, FxHashSet};

use crate::model::{AttributeId, Key, RelationId, Value};
use crate::query::{IndexSchema, JoinTree, QueryError, RelationSchema};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GhdNodeSpec {
    pub name: String,
    pub attrs: Vec<AttributeId>,
    pub order: Option<Vec<AttributeId>>,
    pub group: bool,
}

/// The part of relation `relation` that node `u` sees.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NodePart {
    pub relation: usize,
    /// `e ∩ λ(u)` in the node's elimination order.
    pub attrs: Vec<AttributeId>,
    /// Column of each of `attrs` inside the relation row.
    pub cols: Vec<usize>,
    /// Position of each of `attrs` inside the node tuple.
    pub node_pos: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GhdNode {
    pub name: String,
    pub attrs: Vec<AttributeId>,
    pub order: Vec<AttributeId>,
    pub group: bool,
    pub parts: Vec<NodePart>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GhdPlan {
    pub nodes: Vec<GhdNode>,
    pub tree: JoinTree,
    /// For each query relation, a node with `e ⊆ λ(u)`.
    pub anchors: Vec<usize>,
}

impl GhdPlan {
    pub fn build(
        relations: &[RelationSchema],
        specs: Vec<GhdNodeSpec>,
        edges: &[(usize, usize)],
        anchor_overrides: &[(usize, usize)],
        attr_name: &dyn Fn(AttributeId) -> String,
    ) -> Result<GhdPlan, QueryError> {
        if specs.is_empty() {
            return Err(QueryError::InvalidGhd("no nodes".into()));
        }
        let query_attrs: FxHashSet<AttributeId> =
            relations.iter().flat_map(|r| r.attrs.iter().copied()).collect();
        let mut nodes = Vec::with_capacity(specs.len());
        for spec in specs {
            let mut seen = FxHashSet::default();
            for a in &spec.attrs {
                if !query_attrs.contains(a) {
                    return Err(QueryError::InvalidGhd(format!(
                        "node {} uses attribute {} outside the query",
                        spec.name,
                        attr_name(*a)
                    )));
                }
                if !seen.insert(*a) {
                    return Err(QueryError::InvalidGhd(format!(
                        "node {} repeats attribute {}",
                        spec.name,
                        attr_name(*a)
                    )));
                }
            }
            let order = spec.order.clone().unwrap_or_else(|| spec.attrs.clone());
            let mut sorted_order = order.clone();
            sorted_order.sort();
            let mut sorted_attrs = spec.attrs.clone();
            sorted_attrs.sort();
            if sorted_order != sorted_attrs {
                return Err(QueryError::InvalidGhd(format!(
                    "order of node {} is not a permutation of its attributes",
                    spec.name
                )));
            }
            let parts = relations
                .iter()
                .enumerate()
                .filter_map(|(ri, r)| {
                    let attrs: Vec<AttributeId> =
                        order.iter().copied().filter(|a| r.has(*a)).collect();
                    if attrs.is_empty() {
                        return None;
                    }
                    Some(NodePart {
                        relation: ri,
                        cols: attrs.iter().map(|a| r.col_of(*a).unwrap()).collect(),
                        node_pos: attrs
                            .iter()
                            .map(|a| spec.attrs.iter().position(|b| b == a).unwrap())
                            .collect(),
                        attrs,
                    })
                })
                .collect();
            nodes.push(GhdNode {
                name: spec.name,
                attrs: spec.attrs,
                order,
                group: spec.group,
                parts,
            });
        }
        let node_sets: Vec<Vec<AttributeId>> = nodes.iter().map(|n| n.attrs.clone()).collect();
        let tree = JoinTree::validate(&node_sets, edges, attr_name)
            .map_err(|e| QueryError::InvalidGhd(e.to_string()))?;

        let mut anchors = Vec::with_capacity(relations.len());
        for (ri, r) in relations.iter().enumerate() {
            let covers = |u: usize| r.attrs.iter().all(|a| nodes[u].attrs.contains(a));
            let anchor = match anchor_overrides.iter().find(|(rel, _)| *rel == ri) {
                Some(&(_, u)) if covers(u) => u,
                Some(&(_, u)) => {
                    return Err(QueryError::InvalidGhd(format!(
                        "anchor {} does not cover relation {}",
                        nodes[u].name, r.name
                    )))
                }
                None => (0..nodes.len()).find(|&u| covers(u)).ok_or_else(|| {
                    QueryError::InvalidGhd(format!("no node covers relation {}", r.name))
                })?,
            };
            anchors.push(anchor);
        }
        Ok(GhdPlan {
            nodes,
            tree,
            anchors,
        })
    }

    /// The acyclic schema over decomposition nodes.
    pub fn index_schema(&self) -> IndexSchema {
        let relations = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| RelationSchema {
                id: RelationId(i as u32),
                name: n.name.clone(),
                attrs: n.attrs.clone(),
            })
            .collect();
        IndexSchema::new(
            relations,
            self.tree.clone(),
            self.nodes.iter().map(|n| n.group).collect(),
        )
    }
}

/// Distinct values of one attribute for each binding of some bound attributes.
#[derive(Clone, Debug, Default)]
struct Extension {
    values: Vec<Value>,
    set: FxHashSet<Value>,
}

#[derive(Clone, Debug)]
struct ExtIndex {
    /// Positions inside the part tuple.
    bound: Vec<usize>,
    target: usize,
    map: FxHashMap<Key, Extension>,
}

#[derive(Clone, Debug)]
struct PartStore {
    rows: FxHashSet<Key>,
    indexes: Vec<ExtIndex>,
}

impl PartStore {
    fn ext_index(&mut self, bound: Vec<usize>, target: usize) -> usize {
        if let Some(i) = self
            .indexes
            .iter()
            .position(|ix| ix.bound == bound && ix.target == target)
        {
            return i;
        }
        self.indexes.push(ExtIndex {
            bound,
            target,
            map: FxHashMap::default(),
        });
        self.indexes.len() - 1
    }

    fn insert(&mut self, row: Key) -> bool {
        if self.rows.contains(&row) {
            return false;
        }
        for ix in &mut self.indexes {
            let key: Key = ix.bound.iter().map(|&p| row[p]).collect();
            let v = row[ix.target];
            let ext = ix.map.entry(key).or_default();
            if ext.set.insert(v) {
                ext.values.push(v);
            }
        }
        self.rows.insert(row);
        true
    }
}

/// One attribute step of the enumeration: candidates come from `driver`,
/// and every other part in `checks` must also extend.
#[derive(Clone, Debug)]
struct Step {
    /// Position in the node tuple.
    pos: usize,
    sources: Vec<(usize, usize)>,
}

#[derive(Clone, Debug)]
struct DeltaPlan {
    /// Node positions bound by the seed part.
    seed_pos: Vec<usize>,
    /// Parts fully bound by the seed, checked once by membership.
    seed_checks: Vec<usize>,
    steps: Vec<Step>,
}

#[derive(Clone, Debug)]
struct NodeState {
    parts: Vec<PartStore>,
    /// Per part: plan used when that part gains a tuple.
    plans: Vec<DeltaPlan>,
}

/// Runtime projections for every decomposition node.
#[derive(Clone, Debug)]
pub struct GhdState {
    plan: GhdPlan,
    nodes: Vec<NodeState>,
    /// For each query relation: `(node, part)` pairs, anchor node first.
    touch: Vec<Vec<(usize, usize)>>,
    seen: Vec<FxHashSet<Box<[Value]>>>,
    simulated: u64,
}

impl GhdState {
    pub fn new(plan: GhdPlan, relation_count: usize) -> Self {
        let mut nodes = Vec::with_capacity(plan.nodes.len());
        for node in &plan.nodes {
            let mut parts: Vec<PartStore> = node
                .parts
                .iter()
                .map(|_| PartStore {
                    rows: FxHashSet::default(),
                    indexes: Vec::new(),
                })
                .collect();
            let plans = (0..node.parts.len())
                .map(|seed| Self::delta_plan(node, seed, &mut parts))
                .collect();
            nodes.push(NodeState { parts, plans });
        }
        let mut touch = vec![Vec::new(); relation_count];
        for (r, list) in touch.iter_mut().enumerate() {
            let anchor = plan.anchors[r];
            let order = std::iter::once(anchor).chain((0..plan.nodes.len()).filter(|&u| u != anchor));
            for u in order {
                if let Some(p) = plan.nodes[u].parts.iter().position(|p| p.relation == r) {
                    list.push((u, p));
                }
            }
        }
        Self {
            plan,
            nodes,
            touch,
            seen: vec![FxHashSet::default(); relation_count],
            simulated: 0,
        }
    }

    fn delta_plan(node: &GhdNode, seed: usize, parts: &mut [PartStore]) -> DeltaPlan {
        let pos_of = |a: AttributeId| node.attrs.iter().position(|&b| b == a).unwrap();
        let mut bound: Vec<AttributeId> = node.parts[seed].attrs.clone();
        let seed_pos = bound.iter().map(|&a| pos_of(a)).collect();
        let mut steps = Vec::new();
        for &x in &node.order {
            if bound.contains(&x) {
                continue;
            }
            let mut sources = Vec::new();
            for (pi, part) in node.parts.iter().enumerate() {
                let Some(target) = part.attrs.iter().position(|&a| a == x) else {
                    continue;
                };
                let bound_cols: Vec<usize> = part
                    .attrs
                    .iter()
                    .enumerate()
                    .filter(|(_, a)| bound.contains(a))
                    .map(|(i, _)| i)
                    .collect();
                let ix = parts[pi].ext_index(bound_cols, target);
                sources.push((pi, ix));
            }
            steps.push(Step {
                pos: pos_of(x),
                sources,
            });
            bound.push(x);
        }
        let seed_attrs = &node.parts[seed].attrs;
        let seed_checks = (0..node.parts.len())
            .filter(|&pi| pi != seed && node.parts[pi].attrs.iter().all(|a| seed_attrs.contains(a)))
            .collect();
        DeltaPlan {
            seed_pos,
            seed_checks,
            steps,
        }
    }

    pub fn plan(&self) -> &GhdPlan {
        &self.plan
    }

    /// Total simulated insertions produced so far.
    pub fn simulated(&self) -> u64 {
        self.simulated
    }

    /// Feeds one query-relation tuple. Returns `false` for a duplicate. New node
    /// tuples are pushed to `out` as `(node, values in node attribute order)`.
    pub fn ingest(
        &mut self,
        relation: usize,
        values: &[Value],
        out: &mut Vec<(usize, Vec<Value>)>,
    ) -> bool {
        if !self.seen[relation].insert(values.into()) {
            return false;
        }
        let before = out.len();
        for i in 0..self.touch[relation].len() {
            let (u, p) = self.touch[relation][i];
            let part = &self.plan.nodes[u].parts[p];
            let row: Key = part.cols.iter().map(|&c| values[c]).collect();
            if self.nodes[u].parts[p].insert(row.clone()) {
                self.delta(u, p, &row, out);
            }
        }
        self.simulated += (out.len() - before) as u64;
        true
    }

    /// `Q_u(R_u) ⋉ t` for a tuple `t` just added to part `p` of node `u`.
    fn delta(&self, u: usize, p: usize, row: &[Value], out: &mut Vec<(usize, Vec<Value>)>) {
        let node = &self.plan.nodes[u];
        let state = &self.nodes[u];
        let plan = &state.plans[p];
        let mut binding: Vec<Value> = vec![Value::Int(0); node.attrs.len()];
        for (i, &pos) in plan.seed_pos.iter().enumerate() {
            binding[pos] = row[i];
        }
        for &pi in &plan.seed_checks {
            let key: Key = node.parts[pi].node_pos.iter().map(|&q| binding[q]).collect();
            if !state.parts[pi].rows.contains(&key) {
                return;
            }
        }
        self.extend(u, plan, 0, &mut binding, out);
    }

    fn extend(
        &self,
        u: usize,
        plan: &DeltaPlan,
        depth: usize,
        binding: &mut Vec<Value>,
        out: &mut Vec<(usize, Vec<Value>)>,
    ) {
        let Some(step) = plan.steps.get(depth) else {
            out.push((u, binding.clone()));
            return;
        };
        let node = &self.plan.nodes[u];
        let state = &self.nodes[u];
        let mut exts: Vec<&Extension> = Vec::with_capacity(step.sources.len());
        for &(pi, ix) in &step.sources {
            let index = &state.parts[pi].indexes[ix];
            let key: Key = index
                .bound
                .iter()
                .map(|&c| binding[node.parts[pi].node_pos[c]])
                .collect();
            match index.map.get(&key) {
                Some(ext) => exts.push(ext),
                None => return,
            }
        }
        let (driver, rest) = {
            let d = (0..exts.len()).min_by_key(|&i| exts[i].values.len()).unwrap();
            (exts[d], d)
        };
        for &v in &driver.values {
            if exts
                .iter()
                .enumerate()
                .all(|(i, e)| i == rest || e.set.contains(&v))
            {
                binding[step.pos] = v;
                self.extend(u, plan, depth + 1, binding, out);
            }
        }
    }

    /// Size of `Q_u(R_u)` by full enumeration; test and harness support.
    pub fn node_result_count(&self, u: usize) -> u64 {
        let mut count = 0u64;
        let mut out = Vec::new();
        for row in &self.nodes[u].parts[0].rows {
            out.clear();
            self.delta(u, 0, row, &mut out);
            count += out.len() as u64;
        }
        count
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::query::{load_query, QueryShape};

    const TRIANGLE: &str = r#"
        [[relation]]
        name = "G1"
        attrs = ["x1", "x2"]
        [[relation]]
        name = "G2"
        attrs = ["x2", "x3"]
        [[relation]]
        name = "G3"
        attrs = ["x1", "x3"]
        [ghd]
        [[ghd.node]]
        name = "T"
        attrs = ["x1", "x2", "x3"]
    "#;

    fn iv(v: &[i64]) -> Vec<Value> {
        v.iter().map(|&x| Value::Int(x)).collect()
    }

    fn state(text: &str) -> GhdState {
        let q = load_query(text).unwrap();
        let QueryShape::Cyclic(plan) = q.shape.clone() else {
            panic!("expected a GHD")
        };
        GhdState::new(plan, q.relations.len())
    }

    #[test]
    fn triangle_delta() {
        let mut s = state(TRIANGLE);
        let mut out = Vec::new();
        assert!(s.ingest(1, &iv(&[2, 3]), &mut out));
        assert!(s.ingest(2, &iv(&[1, 3]), &mut out));
        assert!(out.is_empty());
        assert!(s.ingest(0, &iv(&[1, 2]), &mut out));
        assert_eq!(out, vec![(0, iv(&[1, 2, 3]))]);
    }

    #[test]
    fn duplicate_projection_yields_nothing() {
        let mut s = state(TRIANGLE);
        let mut out = Vec::new();
        s.ingest(0, &iv(&[1, 2]), &mut out);
        assert!(!s.ingest(0, &iv(&[1, 2]), &mut out));
        s.ingest(1, &iv(&[5, 6]), &mut out);
        assert!(out.is_empty());
    }

    #[test]
    fn single_relation_node_echoes_projection() {
        let mut s = state(
            r#"
            [[relation]]
            name = "R"
            attrs = ["a", "b"]
            [ghd]
            [[ghd.node]]
            name = "U"
            attrs = ["b", "a"]
        "#,
        );
        let mut out = Vec::new();
        s.ingest(0, &iv(&[1, 2]), &mut out);
        assert_eq!(out, vec![(0, iv(&[2, 1]))]);
    }

    #[test]
    fn uncovered_relation_is_rejected() {
        let bad = TRIANGLE.replace(r#"attrs = ["x1", "x2", "x3"]"#, r#"attrs = ["x1", "x2"]"#);
        assert!(matches!(load_query(&bad), Err(QueryError::InvalidGhd(_))));
    }

    #[test]
    fn disconnected_attribute_in_ghd_is_rejected() {
        let text = r#"
            [[relation]]
            name = "A"
            attrs = ["x", "y"]
            [[relation]]
            name = "B"
            attrs = ["y", "z"]
            [[relation]]
            name = "C"
            attrs = ["z", "x"]
            [ghd]
            edges = [["u1", "u2"], ["u2", "u3"]]
            [[ghd.node]]
            name = "u1"
            attrs = ["x", "y"]
            [[ghd.node]]
            name = "u2"
            attrs = ["y", "z"]
            [[ghd.node]]
            name = "u3"
            attrs = ["z", "x"]
        "#;
        assert!(matches!(load_query(text), Err(QueryError::InvalidGhd(_))));
    }
}
