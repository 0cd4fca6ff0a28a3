//! Set-semantics relation storage with insertion-ordered hash indexes.

use rustc_hash::FxHashMap;
use thiserror::Error;

use crate::model::{project_cols, AttributeId, Key, RelationId, Tuple, Value};

pub type RowId = u32;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StorageError {
    #[error("relation {relation} expects {expected} values, got {got}")]
    Arity {
        relation: String,
        expected: usize,
        got: usize,
    },
    #[error("relation {relation} has no index on {key:?}")]
    MissingIndex {
        relation: String,
        key: Vec<AttributeId>,
    },
    #[error("attribute {attr:?} is not in relation {relation} or the probe tuple")]
    KeyOutOfScope {
        relation: String,
        attr: AttributeId,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Inserted {
    New(RowId),
    Duplicate,
}

#[derive(Debug, Clone)]
struct HashIndex {
    /// Key attributes, sorted by id.
    attrs: Vec<AttributeId>,
    cols: Vec<usize>,
    lists: FxHashMap<Key, Vec<RowId>>,
}

/// Rows of one relation, deduplicated, addressed by arrival-ordered row id.
#[derive(Debug, Clone)]
pub struct Relation {
    id: RelationId,
    name: String,
    attrs: Vec<AttributeId>,
    rows: Vec<Box<[Value]>>,
    lookup: FxHashMap<Box<[Value]>, RowId>,
    indexes: Vec<HashIndex>,
    duplicates: u64,
}

impl Relation {
    pub fn new(id: RelationId, name: impl Into<String>, attrs: Vec<AttributeId>) -> Self {
        Self {
            id,
            name: name.into(),
            attrs,
            rows: Vec::new(),
            lookup: FxHashMap::default(),
            indexes: Vec::new(),
            duplicates: 0,
        }
    }

    pub fn id(&self) -> RelationId {
        self.id
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn attrs(&self) -> &[AttributeId] {
        &self.attrs
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn duplicates(&self) -> u64 {
        self.duplicates
    }

    pub fn row(&self, id: RowId) -> &[Value] {
        &self.rows[id as usize]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[Value]> {
        self.rows.iter().map(|r| &**r)
    }

    pub fn tuple(&self, id: RowId) -> Tuple {
        Tuple::new(&self.attrs, self.row(id)).expect("relation schema has distinct attributes")
    }

    pub fn contains(&self, values: &[Value]) -> bool {
        self.lookup.contains_key(values)
    }

    pub fn col_of(&self, attr: AttributeId) -> Option<usize> {
        self.attrs.iter().position(|&a| a == attr)
    }

    /// Inserts a row given in schema order. Duplicates are counted and ignored.
    pub fn insert(&mut self, values: &[Value]) -> Result<Inserted, StorageError> {
        if values.len() != self.attrs.len() {
            return Err(StorageError::Arity {
                relation: self.name.clone(),
                expected: self.attrs.len(),
                got: values.len(),
            });
        }
        if self.lookup.contains_key(values) {
            self.duplicates += 1;
            return Ok(Inserted::Duplicate);
        }
        let id = self.rows.len() as RowId;
        let row: Box<[Value]> = values.into();
        for index in &mut self.indexes {
            index
                .lists
                .entry(project_cols(&row, &index.cols))
                .or_default()
                .push(id);
        }
        self.lookup.insert(row.clone(), id);
        self.rows.push(row);
        Ok(Inserted::New(id))
    }

    /// Registers a hash index on `key` (any order) and returns its handle.
    /// Existing rows are indexed immediately.
    pub fn register_index(&mut self, key: &[AttributeId]) -> Result<usize, StorageError> {
        let mut attrs = key.to_vec();
        attrs.sort();
        attrs.dedup();
        if let Some(i) = self.indexes.iter().position(|ix| ix.attrs == attrs) {
            return Ok(i);
        }
        let cols = attrs
            .iter()
            .map(|&a| {
                self.col_of(a).ok_or_else(|| StorageError::KeyOutOfScope {
                    relation: self.name.clone(),
                    attr: a,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut lists: FxHashMap<Key, Vec<RowId>> = FxHashMap::default();
        for (id, row) in self.rows.iter().enumerate() {
            lists
                .entry(project_cols(row, &cols))
                .or_default()
                .push(id as RowId);
        }
        self.indexes.push(HashIndex { attrs, cols, lists });
        Ok(self.indexes.len() - 1)
    }

    pub fn index_handle(&self, key: &[AttributeId]) -> Option<usize> {
        let mut attrs = key.to_vec();
        attrs.sort();
        attrs.dedup();
        self.indexes.iter().position(|ix| ix.attrs == attrs)
    }

    /// `R_e ⋉ t` restricted to `key`, in arrival order.
    pub fn semijoin_list(&self, t: &Tuple, key: &[AttributeId]) -> Result<&[RowId], StorageError> {
        let handle = self
            .index_handle(key)
            .ok_or_else(|| StorageError::MissingIndex {
                relation: self.name.clone(),
                key: key.to_vec(),
            })?;
        let attrs = &self.indexes[handle].attrs;
        let mut probe = Key::with_capacity(attrs.len());
        for &a in attrs {
            match t.get(a) {
                Some(v) => probe.push(v),
                None => {
                    return Err(StorageError::KeyOutOfScope {
                        relation: self.name.clone(),
                        attr: a,
                    })
                }
            }
        }
        Ok(self.lookup_key(handle, &probe))
    }

    /// Probe with key values already ordered by attribute id.
    pub fn lookup_key(&self, handle: usize, key: &[Value]) -> &[RowId] {
        self.indexes[handle]
            .lists
            .get(key)
            .map(|v| v.as_slice())
            .unwrap_or(&[])
    }
}
