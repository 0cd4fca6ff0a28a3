//! Foreign-key fusion: relations joined to a primary-key parent are streamed
//! as one pre-joined relation.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::model::{AttributeId, RelationId, Value};
use crate::query::{QueryError, RelationSchema};
use crate::storage::{Relation, StorageError};

/// `child.key` references the primary key `key` of `parent`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ForeignKey {
    pub child: usize,
    pub key: Vec<AttributeId>,
    pub parent: usize,
}

/// Base relations that fuse into one query relation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FusionGroup {
    pub name: String,
    /// Base relation indexes, ascending.
    pub members: Vec<usize>,
    pub foreign_keys: Vec<ForeignKey>,
    pub attrs: Vec<AttributeId>,
    pub group_flag: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FusionPlan {
    pub groups: Vec<FusionGroup>,
    pub base_to_query: Vec<usize>,
    pub query_relations: Vec<RelationSchema>,
}

impl FusionPlan {
    /// Groups base relations by connected foreign-key declarations.
    /// `names` optionally names a group: `(name, members, grouping flag)`.
    pub fn build(
        base: &[RelationSchema],
        foreign_keys: Vec<ForeignKey>,
        names: &[(String, Vec<usize>, Option<bool>)],
    ) -> Result<FusionPlan, QueryError> {
        let n = base.len();
        let mut comp: Vec<usize> = (0..n).collect();
        fn find(comp: &mut [usize], mut x: usize) -> usize {
            while comp[x] != x {
                comp[x] = comp[comp[x]];
                x = comp[x];
            }
            x
        }
        for fk in &foreign_keys {
            let (c, p) = (&base[fk.child], &base[fk.parent]);
            if fk.child == fk.parent {
                return Err(QueryError::InvalidForeignKey(format!(
                    "{} references itself",
                    c.name
                )));
            }
            if fk.key.is_empty() || fk.key.iter().any(|a| !c.has(*a) || !p.has(*a)) {
                return Err(QueryError::InvalidForeignKey(format!(
                    "key of {} -> {} must be shared by both relations",
                    c.name, p.name
                )));
            }
            if foreign_keys.iter().filter(|o| o.parent == fk.parent).count() > 1 {
                return Err(QueryError::InvalidForeignKey(format!(
                    "{} is referenced by more than one foreign key",
                    p.name
                )));
            }
            let (rc, rp) = (find(&mut comp, fk.child), find(&mut comp, fk.parent));
            if rc == rp {
                return Err(QueryError::InvalidForeignKey(format!(
                    "{} -> {} closes a cycle of foreign keys",
                    c.name, p.name
                )));
            }
            comp[rc] = rp;
        }

        let mut groups: Vec<FusionGroup> = Vec::new();
        let mut base_to_query = vec![usize::MAX; n];
        for b in 0..n {
            if base_to_query[b] != usize::MAX {
                continue;
            }
            let root = find(&mut comp, b);
            let members: Vec<usize> = (0..n).filter(|&m| find(&mut comp, m) == root).collect();
            let mut attrs = Vec::new();
            for &m in &members {
                for &a in &base[m].attrs {
                    if !attrs.contains(&a) {
                        attrs.push(a);
                    }
                }
            }
            let fks: Vec<ForeignKey> = foreign_keys
                .iter()
                .filter(|fk| members.contains(&fk.child))
                .cloned()
                .collect();
            let name = if members.len() == 1 {
                base[b].name.clone()
            } else {
                members
                    .iter()
                    .map(|&m| base[m].name.as_str())
                    .collect::<Vec<_>>()
                    .join("_")
            };
            for &m in &members {
                base_to_query[m] = groups.len();
            }
            groups.push(FusionGroup {
                name,
                members,
                foreign_keys: fks,
                attrs,
                group_flag: None,
            });
        }
        for (name, members, flag) in names {
            let wanted: BTreeSet<usize> = members.iter().copied().collect();
            let g = groups
                .iter_mut()
                .find(|g| g.members.iter().copied().collect::<BTreeSet<_>>() == wanted)
                .ok_or_else(|| {
                    QueryError::InvalidForeignKey(format!(
                        "fused relation {name} does not match a foreign-key component"
                    ))
                })?;
            g.name = name.clone();
            g.group_flag = *flag;
        }
        let query_relations = groups
            .iter()
            .enumerate()
            .map(|(i, g)| RelationSchema {
                id: RelationId(i as u32),
                name: g.name.clone(),
                attrs: g.attrs.clone(),
            })
            .collect();
        Ok(FusionPlan {
            groups,
            base_to_query,
            query_relations,
        })
    }

    pub fn is_identity(&self) -> bool {
        self.groups.iter().all(|g| g.members.len() == 1)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FuseError {
    #[error("second tuple in {relation} with primary key {key:?}")]
    PrimaryKeyViolation { relation: String, key: Vec<Value> },
    #[error(transparent)]
    Storage(#[from] StorageError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ingested {
    Accepted,
    Duplicate,
}

#[derive(Clone, Debug)]
struct Step {
    member: usize,
    handle: usize,
    /// Positions of the probe key inside the fused layout, ordered by attribute id.
    key_pos: Vec<usize>,
}

/// Runtime side of a [`FusionPlan`].
#[derive(Debug, Clone)]
pub struct FkFuser {
    plan: FusionPlan,
    members: Vec<Relation>,
    /// For each base relation: positions of its columns in the fused layout.
    layout: Vec<Vec<usize>>,
    /// Primary-key index handle for relations that are some parent.
    pk_handle: Vec<Option<usize>>,
    /// Join order when a tuple of this base relation arrives.
    steps: Vec<Vec<Step>>,
    emitted: u64,
    buffered_children: u64,
}

impl FkFuser {
    pub fn new(base: &[RelationSchema], plan: FusionPlan) -> Self {
        let mut members: Vec<Relation> = base
            .iter()
            .map(|r| Relation::new(r.id, r.name.clone(), r.attrs.clone()))
            .collect();
        let mut layout = vec![Vec::new(); base.len()];
        let mut pk_handle = vec![None; base.len()];
        let mut steps = vec![Vec::new(); base.len()];
        for g in &plan.groups {
            for &m in &g.members {
                layout[m] = base[m]
                    .attrs
                    .iter()
                    .map(|a| g.attrs.iter().position(|b| b == a).expect("member attr in group"))
                    .collect();
            }
            if g.members.len() == 1 {
                continue;
            }
            for fk in &g.foreign_keys {
                let hp = members[fk.parent]
                    .register_index(&fk.key)
                    .expect("validated key");
                pk_handle[fk.parent] = Some(hp);
                members[fk.child]
                    .register_index(&fk.key)
                    .expect("validated key");
            }
            for &start in &g.members {
                let mut seen = vec![start];
                let mut frontier = std::collections::VecDeque::from([start]);
                let mut order = Vec::new();
                while let Some(u) = frontier.pop_front() {
                    for fk in &g.foreign_keys {
                        let next = if fk.child == u {
                            fk.parent
                        } else if fk.parent == u {
                            fk.child
                        } else {
                            continue;
                        };
                        if seen.contains(&next) {
                            continue;
                        }
                        seen.push(next);
                        frontier.push_back(next);
                        let mut key = fk.key.clone();
                        key.sort();
                        order.push(Step {
                            member: next,
                            handle: members[next].index_handle(&key).expect("registered"),
                            key_pos: key
                                .iter()
                                .map(|a| g.attrs.iter().position(|b| b == a).unwrap())
                                .collect(),
                        });
                    }
                }
                steps[start] = order;
            }
        }
        Self {
            plan,
            members,
            layout,
            pk_handle,
            steps,
            emitted: 0,
            buffered_children: 0,
        }
    }

    pub fn plan(&self) -> &FusionPlan {
        &self.plan
    }

    pub fn emitted(&self) -> u64 {
        self.emitted
    }

    /// Tuples that arrived without producing any fused output yet.
    pub fn unmatched_arrivals(&self) -> u64 {
        self.buffered_children
    }

    /// Feeds one base tuple; pushes `(query relation, fused values)` pairs to `out`.
    pub fn ingest(
        &mut self,
        base: usize,
        values: &[Value],
        out: &mut Vec<(usize, Vec<Value>)>,
    ) -> Result<Ingested, FuseError> {
        let q = self.plan.base_to_query[base];
        let group = &self.plan.groups[q];
        if group.members.len() == 1 {
            out.push((q, values.to_vec()));
            return Ok(Ingested::Accepted);
        }
        let rel = &self.members[base];
        if rel.contains(values) {
            self.members[base].insert(values)?;
            return Ok(Ingested::Duplicate);
        }
        if let Some(h) = self.pk_handle[base] {
            let fk = group
                .foreign_keys
                .iter()
                .find(|fk| fk.parent == base)
                .expect("pk handle implies a foreign key");
            let mut key = fk.key.clone();
            key.sort();
            let probe: Vec<Value> = key
                .iter()
                .map(|a| values[rel.col_of(*a).unwrap()])
                .collect();
            if !rel.lookup_key(h, &probe).is_empty() {
                return Err(FuseError::PrimaryKeyViolation {
                    relation: rel.name().to_string(),
                    key: probe,
                });
            }
        }
        self.members[base].insert(values)?;

        let width = self.plan.groups[q].attrs.len();
        let mut binding: Vec<Option<Value>> = vec![None; width];
        for (c, &pos) in self.layout[base].iter().enumerate() {
            binding[pos] = Some(values[c]);
        }
        let before = out.len();
        self.extend(q, &self.steps[base], 0, &mut binding, out);
        let produced = (out.len() - before) as u64;
        self.emitted += produced;
        if produced == 0 {
            self.buffered_children += 1;
        }
        Ok(Ingested::Accepted)
    }

    fn extend(
        &self,
        q: usize,
        steps: &[Step],
        depth: usize,
        binding: &mut Vec<Option<Value>>,
        out: &mut Vec<(usize, Vec<Value>)>,
    ) {
        let Some(step) = steps.get(depth) else {
            out.push((q, binding.iter().map(|v| v.expect("all bound")).collect()));
            return;
        };
        let probe: Vec<Value> = step
            .key_pos
            .iter()
            .map(|&p| binding[p].expect("key bound by an earlier step"))
            .collect();
        let rel = &self.members[step.member];
        let layout = &self.layout[step.member];
        for &row in rel.lookup_key(step.handle, &probe) {
            let vals = rel.row(row);
            let mut assigned = Vec::new();
            let mut ok = true;
            for (c, &pos) in layout.iter().enumerate() {
                match binding[pos] {
                    Some(v) if v != vals[c] => {
                        ok = false;
                        break;
                    }
                    Some(_) => {}
                    None => {
                        binding[pos] = Some(vals[c]);
                        assigned.push(pos);
                    }
                }
            }
            if ok {
                self.extend(q, steps, depth + 1, binding, out);
            }
            for pos in assigned {
                binding[pos] = None;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::query::load_query;

    fn iv(v: &[i64]) -> Vec<Value> {
        v.iter().map(|&x| Value::Int(x)).collect()
    }

    const CHILD_PARENT: &str = r#"
        [[relation]]
        name = "C"
        attrs = ["A", "U"]
        [[relation]]
        name = "P"
        attrs = ["U", "B"]
        [[foreign_key]]
        child = "C"
        key = ["U"]
        parent = "P"
    "#;

    #[test]
    fn late_parent_flushes_child() {
        let q = load_query(CHILD_PARENT).unwrap();
        assert_eq!(q.relations.len(), 1);
        let mut f = FkFuser::new(&q.base, q.fusion.clone());
        let mut out = Vec::new();
        f.ingest(0, &iv(&[1, 7]), &mut out).unwrap();
        assert!(out.is_empty());
        f.ingest(1, &iv(&[7, 3]), &mut out).unwrap();
        assert_eq!(out, vec![(0, iv(&[1, 7, 3]))]);
    }

    #[test]
    fn early_parent_emits_in_child_order() {
        let q = load_query(CHILD_PARENT).unwrap();
        let mut f = FkFuser::new(&q.base, q.fusion.clone());
        let mut out = Vec::new();
        f.ingest(1, &iv(&[7, 3]), &mut out).unwrap();
        for a in [5, 2, 9] {
            f.ingest(0, &iv(&[a, 7]), &mut out).unwrap();
        }
        assert_eq!(
            out,
            vec![(0, iv(&[5, 7, 3])), (0, iv(&[2, 7, 3])), (0, iv(&[9, 7, 3]))]
        );
    }

    #[test]
    fn primary_key_violation() {
        let q = load_query(CHILD_PARENT).unwrap();
        let mut f = FkFuser::new(&q.base, q.fusion.clone());
        let mut out = Vec::new();
        f.ingest(1, &iv(&[7, 3]), &mut out).unwrap();
        assert_eq!(f.ingest(1, &iv(&[7, 3]), &mut out).unwrap(), Ingested::Duplicate);
        assert!(matches!(
            f.ingest(1, &iv(&[7, 4]), &mut out),
            Err(FuseError::PrimaryKeyViolation { .. })
        ));
    }

    #[test]
    fn six_relation_chain_collapses_to_three() {
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
            attrs = ["Z", "W", "U"]
            [[relation]]
            name = "R4"
            attrs = ["U", "A"]
            [[relation]]
            name = "R5"
            attrs = ["A", "C"]
            [[relation]]
            name = "R6"
            attrs = ["C", "E"]
            [[foreign_key]]
            child = "R3"
            key = ["Z"]
            parent = "R2"
            [[foreign_key]]
            child = "R3"
            key = ["U"]
            parent = "R4"
            [[foreign_key]]
            child = "R6"
            key = ["C"]
            parent = "R5"
            [[fused]]
            name = "S"
            members = ["R2", "R3", "R4"]
            [[fused]]
            name = "T"
            members = ["R5", "R6"]
            [tree]
            edges = [["R1", "S"], ["S", "T"]]
        "#,
        )
        .unwrap();
        let shape: Vec<(String, Vec<String>)> = q
            .relations
            .iter()
            .map(|r| {
                (
                    r.name.clone(),
                    r.attrs.iter().map(|a| q.attributes[a.index()].clone()).collect(),
                )
            })
            .collect();
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        assert_eq!(
            shape,
            vec![
                ("R1".to_string(), s(&["X", "Y"])),
                ("S".to_string(), s(&["Y", "Z", "W", "U", "A"])),
                ("T".to_string(), s(&["A", "C", "E"])),
            ]
        );

        // R3 arrives between its two parents.
        let mut f = FkFuser::new(&q.base, q.fusion.clone());
        let mut out = Vec::new();
        f.ingest(1, &iv(&[10, 20]), &mut out).unwrap();
        f.ingest(2, &iv(&[20, 30, 40]), &mut out).unwrap();
        assert!(out.is_empty());
        f.ingest(3, &iv(&[40, 50]), &mut out).unwrap();
        assert_eq!(out, vec![(1, iv(&[10, 20, 30, 40, 50]))]);
    }

    #[test]
    fn cyclic_foreign_keys_are_rejected() {
        let text = CHILD_PARENT.to_string()
            + r#"
            [[foreign_key]]
            child = "P"
            key = ["U"]
            parent = "C"
        "#;
        assert!(matches!(
            load_query(&text),
            Err(QueryError::InvalidForeignKey(_))
        ));
    }

    #[test]
    fn shared_parent_is_rejected() {
        let text = CHILD_PARENT.to_string()
            + r#"
            [[relation]]
            name = "D"
            attrs = ["U", "F"]
            [[foreign_key]]
            child = "D"
            key = ["U"]
            parent = "P"
        "#;
        assert!(matches!(
            load_query(&text),
            Err(QueryError::InvalidForeignKey(_))
        ));
    }
}
