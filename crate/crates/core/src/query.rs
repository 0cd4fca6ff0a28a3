//! Join queries, join trees and the TOML query configuration.

use std::collections::{BTreeMap, HashMap};

use serde::Deserialize;
use thiserror::Error;

use crate::fkfuse::{ForeignKey, FusionPlan};
use crate::ghd::{GhdNodeSpec, GhdPlan};
use crate::model::{AttributeId, RelationId};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum QueryError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("unknown relation {0:?}")]
    UnknownRelation(String),
    #[error("unknown attribute {0:?}")]
    UnknownAttribute(String),
    #[error("invalid join tree: {0}")]
    InvalidJoinTree(String),
    #[error("invalid GHD: {0}")]
    InvalidGhd(String),
    #[error("invalid foreign key: {0}")]
    InvalidForeignKey(String),
    #[error("invalid query: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RelationSchema {
    pub id: RelationId,
    pub name: String,
    pub attrs: Vec<AttributeId>,
}

impl RelationSchema {
    pub fn arity(&self) -> usize {
        self.attrs.len()
    }

    pub fn col_of(&self, attr: AttributeId) -> Option<usize> {
        self.attrs.iter().position(|&a| a == attr)
    }

    pub fn has(&self, attr: AttributeId) -> bool {
        self.attrs.contains(&attr)
    }
}

/// An unrooted join tree over `nodes` relations.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct JoinTree {
    pub nodes: usize,
    pub edges: Vec<(usize, usize)>,
}

impl JoinTree {
    /// Checks the tree shape and attribute connectedness.
    pub fn validate(
        attr_sets: &[Vec<AttributeId>],
        edges: &[(usize, usize)],
        attr_name: &dyn Fn(AttributeId) -> String,
    ) -> Result<JoinTree, QueryError> {
        let n = attr_sets.len();
        if n == 0 {
            return Err(QueryError::InvalidJoinTree("no relations".into()));
        }
        if edges.len() != n - 1 {
            return Err(QueryError::InvalidJoinTree(format!(
                "{} nodes need {} edges, got {}",
                n,
                n - 1,
                edges.len()
            )));
        }
        let mut uf = UnionFind::new(n);
        for &(a, b) in edges {
            if a >= n || b >= n || a == b {
                return Err(QueryError::InvalidJoinTree(format!("bad edge ({a}, {b})")));
            }
            if !uf.union(a, b) {
                return Err(QueryError::InvalidJoinTree("edges contain a cycle".into()));
            }
        }
        let mut attrs: Vec<AttributeId> = attr_sets.iter().flatten().copied().collect();
        attrs.sort();
        attrs.dedup();
        for x in attrs {
            let holders = attr_sets.iter().filter(|s| s.contains(&x)).count();
            let inner = edges
                .iter()
                .filter(|&&(a, b)| attr_sets[a].contains(&x) && attr_sets[b].contains(&x))
                .count();
            if inner + 1 != holders {
                return Err(QueryError::InvalidJoinTree(format!(
                    "nodes containing attribute {} are not connected",
                    attr_name(x)
                )));
            }
        }
        Ok(JoinTree {
            nodes: n,
            edges: edges.to_vec(),
        })
    }

    pub fn neighbours(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.nodes];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    pub fn rooted(&self, attr_sets: &[Vec<AttributeId>], root: usize) -> RootedTree {
        RootedTree::new(self, attr_sets, root)
    }
}

/// A join tree rooted at one node, with `key(e) = e ∩ p_e` precomputed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RootedTree {
    pub root: usize,
    pub parent: Vec<Option<usize>>,
    pub children: Vec<Vec<usize>>,
    /// `key(e)`, sorted by attribute id; empty at the root.
    pub key: Vec<Vec<AttributeId>>,
    pub subtree_size: Vec<usize>,
    /// Parents before children.
    pub preorder: Vec<usize>,
}

impl RootedTree {
    fn new(tree: &JoinTree, attr_sets: &[Vec<AttributeId>], root: usize) -> Self {
        let n = tree.nodes;
        let adj = tree.neighbours();
        let mut parent = vec![None; n];
        let mut children = vec![Vec::new(); n];
        let mut preorder = Vec::with_capacity(n);
        let mut visited = vec![false; n];
        let mut stack = vec![root];
        visited[root] = true;
        while let Some(u) = stack.pop() {
            preorder.push(u);
            for &v in adj[u].iter().rev() {
                if !visited[v] {
                    visited[v] = true;
                    parent[v] = Some(u);
                    stack.push(v);
                }
            }
        }
        for &u in &preorder {
            if let Some(p) = parent[u] {
                children[p].push(u);
            }
        }
        for list in &mut children {
            list.sort_unstable();
        }
        let key = (0..n)
            .map(|e| match parent[e] {
                None => Vec::new(),
                Some(p) => {
                    let mut k: Vec<AttributeId> = attr_sets[e]
                        .iter()
                        .copied()
                        .filter(|a| attr_sets[p].contains(a))
                        .collect();
                    k.sort();
                    k
                }
            })
            .collect();
        let mut subtree_size = vec![1; n];
        for &u in preorder.iter().rev() {
            if let Some(p) = parent[u] {
                subtree_size[p] += subtree_size[u];
            }
        }
        Self {
            root,
            parent,
            children,
            key,
            subtree_size,
            preorder,
        }
    }

    pub fn is_leaf(&self, e: usize) -> bool {
        self.children[e].is_empty()
    }
}

/// GYO ear reduction. Returns join tree edges when the hypergraph is acyclic.
pub fn gyo_join_tree(attr_sets: &[Vec<AttributeId>]) -> Option<Vec<(usize, usize)>> {
    let n = attr_sets.len();
    let mut alive: Vec<bool> = vec![true; n];
    let mut edges = Vec::with_capacity(n.saturating_sub(1));
    for _ in 1..n {
        let mut removed = false;
        for e in 0..n {
            if !alive[e] {
                continue;
            }
            let shared: Vec<AttributeId> = attr_sets[e]
                .iter()
                .copied()
                .filter(|a| (0..n).any(|f| f != e && alive[f] && attr_sets[f].contains(a)))
                .collect();
            let witness = (0..n).find(|&f| {
                f != e && alive[f] && shared.iter().all(|a| attr_sets[f].contains(a))
            });
            if let Some(f) = witness {
                alive[e] = false;
                edges.push((e, f));
                removed = true;
                break;
            }
        }
        if !removed {
            return None;
        }
    }
    Some(edges)
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[ra] = rb;
        true
    }
}

/// Everything the acyclic index needs: relations, one join tree, its rootings
/// and the per-node grouping flags.
#[derive(Clone, Debug)]
pub struct IndexSchema {
    pub relations: Vec<RelationSchema>,
    pub tree: JoinTree,
    pub rooted: Vec<RootedTree>,
    pub grouping: Vec<bool>,
}

impl IndexSchema {
    pub fn new(relations: Vec<RelationSchema>, tree: JoinTree, grouping: Vec<bool>) -> Self {
        let attr_sets: Vec<Vec<AttributeId>> = relations.iter().map(|r| r.attrs.clone()).collect();
        let rooted = (0..relations.len())
            .map(|r| tree.rooted(&attr_sets, r))
            .collect();
        Self {
            relations,
            tree,
            rooted,
            grouping,
        }
    }
}

#[derive(Clone, Debug)]
pub enum QueryShape {
    /// The index runs directly over the (possibly fused) query relations.
    Acyclic,
    /// The index runs over GHD nodes.
    Cyclic(GhdPlan),
}

/// A validated natural-join query.
#[derive(Clone, Debug)]
pub struct JoinQuery {
    pub name: String,
    pub attributes: Vec<String>,
    /// Relations named by the input stream.
    pub base: Vec<RelationSchema>,
    /// Foreign-key fusion from base relations to query relations.
    pub fusion: FusionPlan,
    /// Relations after fusion: the hyperedges `E`.
    pub relations: Vec<RelationSchema>,
    pub shape: QueryShape,
    pub index: IndexSchema,
}

impl JoinQuery {
    pub fn attribute_id(&self, name: &str) -> Option<AttributeId> {
        self.attributes
            .iter()
            .position(|a| a == name)
            .map(|i| AttributeId(i as u32))
    }

    pub fn base_id(&self, name: &str) -> Option<RelationId> {
        self.base.iter().find(|r| r.name == name).map(|r| r.id)
    }

    pub fn is_cyclic(&self) -> bool {
        matches!(self.shape, QueryShape::Cyclic(_))
    }

    /// The same query with every grouping flag forced to `on`.
    pub fn with_grouping(&self, on: bool) -> JoinQuery {
        let mut q = self.clone();
        for g in &mut q.index.grouping {
            *g = on;
        }
        q
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    name: Option<String>,
    relation: Vec<RawRelation>,
    tree: Option<RawTree>,
    #[serde(default)]
    foreign_key: Vec<RawForeignKey>,
    #[serde(default)]
    fused: Vec<RawFused>,
    ghd: Option<RawGhd>,
    options: Option<RawOptions>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRelation {
    name: String,
    attrs: Vec<String>,
    group: Option<bool>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTree {
    edges: Vec<[String; 2]>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawForeignKey {
    child: String,
    key: Vec<String>,
    parent: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFused {
    name: String,
    members: Vec<String>,
    group: Option<bool>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGhd {
    node: Vec<RawGhdNode>,
    #[serde(default)]
    edges: Vec<[String; 2]>,
    #[serde(default)]
    anchors: BTreeMap<String, String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGhdNode {
    name: String,
    attrs: Vec<String>,
    order: Option<Vec<String>>,
    group: Option<bool>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOptions {
    grouping: Option<bool>,
}

/// Parses and validates a TOML query configuration.
pub fn load_query(config_text: &str) -> Result<JoinQuery, QueryError> {
    let raw: RawConfig = toml::from_str(config_text).map_err(|e| QueryError::Parse(e.to_string()))?;
    if raw.relation.is_empty() {
        return Err(QueryError::Invalid("at least one relation is required".into()));
    }
    let default_group = raw.options.as_ref().and_then(|o| o.grouping).unwrap_or(true);

    let mut attributes: Vec<String> = Vec::new();
    let mut attr_ids: HashMap<String, AttributeId> = HashMap::new();
    let mut base = Vec::with_capacity(raw.relation.len());
    let mut base_group = Vec::with_capacity(raw.relation.len());
    for (i, r) in raw.relation.iter().enumerate() {
        if base.iter().any(|b: &RelationSchema| b.name == r.name) {
            return Err(QueryError::Invalid(format!("relation {} declared twice", r.name)));
        }
        let mut attrs = Vec::with_capacity(r.attrs.len());
        for a in &r.attrs {
            let id = *attr_ids.entry(a.clone()).or_insert_with(|| {
                attributes.push(a.clone());
                AttributeId(attributes.len() as u32 - 1)
            });
            if attrs.contains(&id) {
                return Err(QueryError::Invalid(format!(
                    "relation {} repeats attribute {a}",
                    r.name
                )));
            }
            attrs.push(id);
        }
        if attrs.is_empty() {
            return Err(QueryError::Invalid(format!("relation {} has no attributes", r.name)));
        }
        base.push(RelationSchema {
            id: RelationId(i as u32),
            name: r.name.clone(),
            attrs,
        });
        base_group.push(r.group.unwrap_or(default_group));
    }
    let base_index = |name: &str| -> Result<usize, QueryError> {
        base.iter()
            .position(|b| b.name == name)
            .ok_or_else(|| QueryError::UnknownRelation(name.to_string()))
    };
    let attr_index = |name: &str| -> Result<AttributeId, QueryError> {
        attr_ids
            .get(name)
            .copied()
            .ok_or_else(|| QueryError::UnknownAttribute(name.to_string()))
    };

    let mut fks = Vec::with_capacity(raw.foreign_key.len());
    for fk in &raw.foreign_key {
        let key = fk
            .key
            .iter()
            .map(|a| attr_index(a))
            .collect::<Result<Vec<_>, _>>()?;
        fks.push(ForeignKey {
            child: base_index(&fk.child)?,
            key,
            parent: base_index(&fk.parent)?,
        });
    }
    let mut names = Vec::with_capacity(raw.fused.len());
    for f in &raw.fused {
        let members = f
            .members
            .iter()
            .map(|m| base_index(m))
            .collect::<Result<Vec<_>, _>>()?;
        names.push((f.name.clone(), members, f.group));
    }
    let fusion = FusionPlan::build(&base, fks, &names)?;
    let relations = fusion.query_relations.clone();
    let rel_group: Vec<bool> = fusion
        .groups
        .iter()
        .map(|g| match g.group_flag {
            Some(flag) => flag,
            None if g.members.len() == 1 => base_group[g.members[0]],
            None => default_group,
        })
        .collect();

    let attr_name = |a: AttributeId| attributes[a.index()].clone();
    let rel_index = |name: &str| -> Result<usize, QueryError> {
        relations
            .iter()
            .position(|r| r.name == name)
            .ok_or_else(|| QueryError::UnknownRelation(name.to_string()))
    };

    let (shape, index) = if let Some(g) = &raw.ghd {
        if raw.tree.is_some() {
            return Err(QueryError::Invalid(
                "a query has either a join tree or a GHD, not both".into(),
            ));
        }
        let mut nodes = Vec::with_capacity(g.node.len());
        for n in &g.node {
            let attrs = n
                .attrs
                .iter()
                .map(|a| attr_index(a))
                .collect::<Result<Vec<_>, _>>()?;
            let order = match &n.order {
                None => None,
                Some(o) => Some(o.iter().map(|a| attr_index(a)).collect::<Result<Vec<_>, _>>()?),
            };
            nodes.push(GhdNodeSpec {
                name: n.name.clone(),
                attrs,
                order,
                group: n.group.unwrap_or(default_group),
            });
        }
        let node_index = |name: &str| -> Result<usize, QueryError> {
            nodes
                .iter()
                .position(|n| n.name == name)
                .ok_or_else(|| QueryError::InvalidGhd(format!("unknown GHD node {name:?}")))
        };
        let edges = g
            .edges
            .iter()
            .map(|[a, b]| Ok((node_index(a)?, node_index(b)?)))
            .collect::<Result<Vec<_>, QueryError>>()?;
        let mut anchors = Vec::new();
        for (rel, node) in &g.anchors {
            anchors.push((rel_index(rel)?, node_index(node)?));
        }
        let plan = GhdPlan::build(&relations, nodes, &edges, &anchors, &attr_name)?;
        let index = plan.index_schema();
        (QueryShape::Cyclic(plan), index)
    } else {
        let attr_sets: Vec<Vec<AttributeId>> = relations.iter().map(|r| r.attrs.clone()).collect();
        let edges = match &raw.tree {
            Some(t) => t
                .edges
                .iter()
                .map(|[a, b]| Ok((rel_index(a)?, rel_index(b)?)))
                .collect::<Result<Vec<_>, QueryError>>()?,
            None if relations.len() == 1 => Vec::new(),
            None => {
                return Err(QueryError::InvalidJoinTree(
                    "no [tree] section; acyclic queries must pin their join tree".into(),
                ))
            }
        };
        let tree = JoinTree::validate(&attr_sets, &edges, &attr_name)?;
        (
            QueryShape::Acyclic,
            IndexSchema::new(relations.clone(), tree, rel_group),
        )
    };

    Ok(JoinQuery {
        name: raw.name.unwrap_or_else(|| "query".into()),
        attributes,
        base,
        fusion,
        relations,
        shape,
        index,
    })
}
