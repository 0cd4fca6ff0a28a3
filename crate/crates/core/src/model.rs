//! Values, tuples and stream events shared by every other module.

use std::fmt;

use rustc_hash::FxHashMap;
use smallvec::SmallVec;
use thiserror::Error;

/// Interned attribute name; an index into [`crate::query::JoinQuery::attributes`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AttributeId(pub u32);

impl AttributeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Position of a relation inside the schema that owns it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RelationId(pub u32);

impl RelationId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Interned string handle. Only meaningful together with the [`Interner`]
/// that produced it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Symbol(pub u32);

/// An attribute value: a 64-bit integer or an interned string.
///
/// Integers order before strings; strings order by symbol id.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Value {
    Int(i64),
    Str(Symbol),
}

impl Value {
    /// Canonical 9-byte encoding: a tag byte followed by the big-endian payload.
    pub fn encode(&self) -> [u8; 9] {
        let mut out = [0u8; 9];
        match *self {
            Value::Int(v) => {
                out[0] = 0;
                out[1..].copy_from_slice(&v.to_be_bytes());
            }
            Value::Str(Symbol(s)) => {
                out[0] = 1;
                out[1..].copy_from_slice(&u64::from(s).to_be_bytes());
            }
        }
        out
    }
}

impl From<i64> for Value {
    fn from(v: i64) -> Self {
        Value::Int(v)
    }
}

/// Projection key used by every hash index.
pub type Key = SmallVec<[Value; 4]>;

/// Projects `row` onto the given column positions.
#[inline]
pub fn project_cols(row: &[Value], cols: &[usize]) -> Key {
    cols.iter().map(|&c| row[c]).collect()
}

/// String interner for [`Value::Str`].
#[derive(Debug, Default, Clone)]
pub struct Interner {
    ids: FxHashMap<Box<str>, u32>,
    names: Vec<Box<str>>,
}

impl Interner {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern(&mut self, s: &str) -> Symbol {
        if let Some(&id) = self.ids.get(s) {
            return Symbol(id);
        }
        let id = self.names.len() as u32;
        self.names.push(s.into());
        self.ids.insert(s.into(), id);
        Symbol(id)
    }

    pub fn resolve(&self, sym: Symbol) -> Option<&str> {
        self.names.get(sym.0 as usize).map(|s| &**s)
    }

    /// Parses a field: integers become [`Value::Int`], anything else is interned.
    pub fn parse_value(&mut self, field: &str) -> Value {
        match field.parse::<i64>() {
            Ok(v) => Value::Int(v),
            Err(_) => Value::Str(self.intern(field)),
        }
    }

    pub fn display(&self, value: Value) -> ValueDisplay<'_> {
        ValueDisplay {
            value,
            interner: self,
        }
    }
}

pub struct ValueDisplay<'a> {
    value: Value,
    interner: &'a Interner,
}

impl fmt::Display for ValueDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.value {
            Value::Int(v) => write!(f, "{v}"),
            Value::Str(sym) => match self.interner.resolve(sym) {
                Some(s) => f.write_str(s),
                None => write!(f, "#{}", sym.0),
            },
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("attributes {missing:?} are not in the tuple's support")]
    UnsupportedAttributes { missing: Vec<AttributeId> },
    #[error("tuple has {values} values for {attrs} attributes")]
    ArityMismatch { attrs: usize, values: usize },
    #[error("attribute {0:?} appears twice in a tuple")]
    RepeatedAttribute(AttributeId),
}

/// A tuple over an explicit attribute support, kept sorted by attribute id.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Tuple {
    support: Vec<AttributeId>,
    values: Vec<Value>,
}

impl Tuple {
    /// Builds a tuple from parallel attribute and value lists in any order.
    pub fn new(attrs: &[AttributeId], values: &[Value]) -> Result<Self, ModelError> {
        if attrs.len() != values.len() {
            return Err(ModelError::ArityMismatch {
                attrs: attrs.len(),
                values: values.len(),
            });
        }
        let mut pairs: Vec<(AttributeId, Value)> =
            attrs.iter().copied().zip(values.iter().copied()).collect();
        pairs.sort_by_key(|p| p.0);
        if let Some(w) = pairs.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(ModelError::RepeatedAttribute(w[0].0));
        }
        Ok(Self {
            support: pairs.iter().map(|p| p.0).collect(),
            values: pairs.iter().map(|p| p.1).collect(),
        })
    }

    pub fn empty() -> Self {
        Self {
            support: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn support(&self) -> &[AttributeId] {
        &self.support
    }

    pub fn values(&self) -> &[Value] {
        &self.values
    }

    pub fn get(&self, attr: AttributeId) -> Option<Value> {
        self.support
            .binary_search(&attr)
            .ok()
            .map(|i| self.values[i])
    }

    /// `π_x t`. Fails unless every attribute of `attrs` is in the support.
    pub fn project(&self, attrs: &[AttributeId]) -> Result<Tuple, ModelError> {
        let mut wanted: Vec<AttributeId> = attrs.to_vec();
        wanted.sort();
        wanted.dedup();
        let mut values = Vec::with_capacity(wanted.len());
        let mut missing = Vec::new();
        for &a in &wanted {
            match self.get(a) {
                Some(v) => values.push(v),
                None => missing.push(a),
            }
        }
        if !missing.is_empty() {
            return Err(ModelError::UnsupportedAttributes { missing });
        }
        Ok(Tuple {
            support: wanted,
            values,
        })
    }

    /// Canonical byte encoding: arity, then (attribute, value) pairs in support order.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + self.values.len() * 13);
        out.extend_from_slice(&(self.values.len() as u32).to_be_bytes());
        for (a, v) in self.support.iter().zip(&self.values) {
            out.extend_from_slice(&a.0.to_be_bytes());
            out.extend_from_slice(&v.encode());
        }
        out
    }
}

/// One insertion in the input stream: `(t, i, R_e)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StreamEvent {
    pub relation: RelationId,
    pub values: Vec<Value>,
    pub arrival: u64,
}

impl StreamEvent {
    pub fn new(relation: RelationId, values: Vec<Value>, arrival: u64) -> Self {
        Self {
            relation,
            values,
            arrival,
        }
    }
}
