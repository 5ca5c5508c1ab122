//! Super-cell data model, target-schema and label types.
//!
//! A [`SuperCell`] is the atomic unit of source data: a group of cells from one
//! source tuple that always travel to the target table together. Each one is
//! described by parallel `keys` / `attributes` / `values` vectors. A
//! [`TargetPosition`] is the label a super cell is mapped to: one entry per
//! target key attribute, one target attribute per cell, and an [`AggMode`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("super cell has {attributes} attributes but {values} values")]
    WidthMismatch { attributes: usize, values: usize },
    #[error("super cell has no cells")]
    EmptyCell,
    #[error("super cell has no key components")]
    MissingKeys,
    #[error("key component {0} is empty")]
    EmptyKeyComponent(usize),
    #[error("invalid target schema: {0}")]
    InvalidSchema(String),
    #[error("invalid target position: {0}")]
    InvalidPosition(String),
    #[error("key value {value:?} is not in the domain of {attribute:?}")]
    UnknownKeyValue { attribute: String, value: String },
    #[error("attribute {0:?} is not part of the target schema")]
    UnknownAttribute(String),
    #[error("COPY({index}) exceeds the codec's {slots} copy slots")]
    CopySlotOutOfRange { index: usize, slots: usize },
    #[error("super cell width {width} exceeds the codec's {slots} attribute slots")]
    TooWide { width: usize, slots: usize },
    #[error("label vector has {got} entries, expected {expected}")]
    LabelLength { got: usize, expected: usize },
    #[error("class index {index} out of range for head {head} ({classes} classes)")]
    ClassOutOfRange {
        head: usize,
        index: usize,
        classes: usize,
    },
    #[error("line {line}: {message}")]
    Json { line: usize, message: String },
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for ModelError {
    fn from(e: std::io::Error) -> Self {
        ModelError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuperCell {
    pub source_id: String,
    pub keys: Vec<String>,
    pub attributes: Vec<String>,
    pub values: Vec<String>,
    pub row_ordinal: u64,
}

impl SuperCell {
    pub fn new(
        source_id: impl Into<String>,
        keys: Vec<String>,
        attributes: Vec<String>,
        values: Vec<String>,
        row_ordinal: u64,
    ) -> Self {
        SuperCell {
            source_id: source_id.into(),
            keys,
            attributes,
            values,
            row_ordinal,
        }
    }

    /// Number of cells (`|s_ij|`).
    pub fn width(&self) -> usize {
        self.values.len()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.attributes.len() != self.values.len() {
            return Err(ModelError::WidthMismatch {
                attributes: self.attributes.len(),
                values: self.values.len(),
            });
        }
        if self.values.is_empty() {
            return Err(ModelError::EmptyCell);
        }
        if self.keys.is_empty() {
            return Err(ModelError::MissingKeys);
        }
        if let Some(i) = self.keys.iter().position(|k| k.trim().is_empty()) {
            return Err(ModelError::EmptyKeyComponent(i));
        }
        Ok(())
    }

    /// Content identity ignoring provenance; used for multiset comparisons.
    pub fn content(&self) -> (Vec<String>, Vec<String>, Vec<String>) {
        (
            self.keys.clone(),
            self.attributes.clone(),
            self.values.clone(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeyDomain {
    #[serde(default)]
    pub values: BTreeSet<String>,
    /// Open domains admit COPY-resolved values that are not listed.
    #[serde(default)]
    pub open: bool,
}

impl KeyDomain {
    pub fn open() -> Self {
        KeyDomain {
            values: BTreeSet::new(),
            open: true,
        }
    }

    pub fn closed<I, S>(values: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        KeyDomain {
            values: values.into_iter().map(Into::into).collect(),
            open: false,
        }
    }

    pub fn admits(&self, value: &str) -> bool {
        self.open || self.values.contains(value)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSchema {
    pub attributes: Vec<String>,
    pub key_attributes: Vec<String>,
    #[serde(default)]
    pub key_domains: BTreeMap<String, KeyDomain>,
}

impl TargetSchema {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.key_attributes.is_empty() {
            return Err(ModelError::InvalidSchema(
                "at least one key attribute is required".into(),
            ));
        }
        let mut seen = BTreeSet::new();
        for a in &self.attributes {
            if !seen.insert(a) {
                return Err(ModelError::InvalidSchema(format!(
                    "duplicate attribute {a:?}"
                )));
            }
        }
        for k in &self.key_attributes {
            if !seen.contains(k) {
                return Err(ModelError::InvalidSchema(format!(
                    "key attribute {k:?} is not a schema attribute"
                )));
            }
        }
        for name in self.key_domains.keys() {
            if !self.key_attributes.contains(name) {
                return Err(ModelError::InvalidSchema(format!(
                    "domain given for non-key attribute {name:?}"
                )));
            }
        }
        Ok(())
    }

    /// `q`, the key arity.
    pub fn key_arity(&self) -> usize {
        self.key_attributes.len()
    }

    pub fn is_key(&self, attribute: &str) -> bool {
        self.key_attributes.iter().any(|k| k == attribute)
    }

    pub fn has_attribute(&self, attribute: &str) -> bool {
        self.attributes.iter().any(|a| a == attribute)
    }

    /// Domain of the `l`-th key attribute; missing entries are open.
    pub fn domain(&self, l: usize) -> KeyDomain {
        self.key_domains
            .get(&self.key_attributes[l])
            .cloned()
            .unwrap_or_else(KeyDomain::open)
    }

    /// Non-key attributes in schema order.
    pub fn value_attributes(&self) -> Vec<String> {
        self.attributes
            .iter()
            .filter(|a| !self.is_key(a))
            .cloned()
            .collect()
    }

    /// Output column order: key attributes first, then the rest in schema order.
    pub fn output_columns(&self) -> Vec<String> {
        let mut cols = self.key_attributes.clone();
        cols.extend(self.value_attributes());
        cols
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggMode {
    Sum,
    Avg,
    Min,
    Max,
    Count,
    Replace,
    Discard,
    Concat,
}

impl AggMode {
    pub const ALL: [AggMode; 8] = [
        AggMode::Sum,
        AggMode::Avg,
        AggMode::Min,
        AggMode::Max,
        AggMode::Count,
        AggMode::Replace,
        AggMode::Discard,
        AggMode::Concat,
    ];

    pub fn index(self) -> usize {
        AggMode::ALL.iter().position(|m| *m == self).unwrap()
    }

    pub fn from_index(i: usize) -> Option<AggMode> {
        AggMode::ALL.get(i).copied()
    }

    /// Modes whose result does not depend on write order.
    pub fn is_commutative(self) -> bool {
        matches!(
            self,
            AggMode::Sum | AggMode::Avg | AggMode::Min | AggMode::Max | AggMode::Count
        )
    }

    pub fn is_numeric(self) -> bool {
        self.is_commutative()
    }

    pub fn name(self) -> &'static str {
        match self {
            AggMode::Sum => "sum",
            AggMode::Avg => "avg",
            AggMode::Min => "min",
            AggMode::Max => "max",
            AggMode::Count => "count",
            AggMode::Replace => "replace",
            AggMode::Discard => "discard",
            AggMode::Concat => "concat",
        }
    }
}

impl fmt::Display for AggMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One component of a target key label.
///
/// On the wire: `null`, a plain string, `{"copy": i}` or `{"wildcard": true}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum KeyEntry {
    Null,
    Value(String),
    /// Resolve to the canonicalized `i`-th source key component.
    Copy(usize),
    /// Broadcast to every existing row matching the other components.
    Wildcard,
}

impl KeyEntry {
    pub fn value(v: impl Into<String>) -> Self {
        KeyEntry::Value(v.into())
    }

    pub fn is_null(&self) -> bool {
        matches!(self, KeyEntry::Null)
    }
}

impl fmt::Display for KeyEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KeyEntry::Null => f.write_str("NULL"),
            KeyEntry::Value(v) => f.write_str(v),
            KeyEntry::Copy(i) => write!(f, "COPY({i})"),
            KeyEntry::Wildcard => f.write_str("*"),
        }
    }
}

impl Serialize for KeyEntry {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        match self {
            KeyEntry::Null => s.serialize_none(),
            KeyEntry::Value(v) => s.serialize_str(v),
            KeyEntry::Copy(i) => {
                let mut m = s.serialize_map(Some(1))?;
                m.serialize_entry("copy", i)?;
                m.end()
            }
            KeyEntry::Wildcard => {
                let mut m = s.serialize_map(Some(1))?;
                m.serialize_entry("wildcard", &true)?;
                m.end()
            }
        }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum KeyEntryWire {
    Value(String),
    Copy {
        copy: usize,
    },
    Wildcard {
        wildcard: bool,
    },
}

impl<'de> Deserialize<'de> for KeyEntry {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match Option::<KeyEntryWire>::deserialize(d)? {
            None => Ok(KeyEntry::Null),
            Some(KeyEntryWire::Value(v)) => Ok(KeyEntry::Value(v)),
            Some(KeyEntryWire::Copy { copy }) => Ok(KeyEntry::Copy(copy)),
            Some(KeyEntryWire::Wildcard { wildcard: true }) => Ok(KeyEntry::Wildcard),
            Some(KeyEntryWire::Wildcard { wildcard: false }) => {
                Err(D::Error::custom("wildcard marker must be true"))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetPosition {
    pub keys: Vec<KeyEntry>,
    pub attributes: Vec<Option<String>>,
    pub agg_mode: AggMode,
}

impl TargetPosition {
    /// The "discard entire super cell" position.
    pub fn discard(key_arity: usize, width: usize) -> Self {
        TargetPosition {
            keys: vec![KeyEntry::Null; key_arity],
            attributes: vec![None; width],
            agg_mode: AggMode::Discard,
        }
    }

    pub fn is_discard(&self) -> bool {
        self.attributes.iter().all(Option::is_none)
    }

    pub fn has_wildcard(&self) -> bool {
        self.keys.iter().any(|k| matches!(k, KeyEntry::Wildcard))
    }

    pub fn validate(&self, schema: &TargetSchema, width: usize) -> Result<(), ModelError> {
        if self.keys.len() != schema.key_arity() {
            return Err(ModelError::InvalidPosition(format!(
                "{} key entries for a schema with {} key attributes",
                self.keys.len(),
                schema.key_arity()
            )));
        }
        if self.attributes.len() != width {
            return Err(ModelError::InvalidPosition(format!(
                "{} attribute entries for a super cell of width {width}",
                self.attributes.len()
            )));
        }
        if self.is_discard() && !self.keys.iter().all(KeyEntry::is_null) {
            return Err(ModelError::InvalidPosition(
                "discard position must have all-NULL keys".into(),
            ));
        }
        for a in self.attributes.iter().flatten() {
            if !schema.has_attribute(a) {
                return Err(ModelError::UnknownAttribute(a.clone()));
            }
        }
        Ok(())
    }

    /// Replace `COPY(i)` with the cell's `i`-th key component.
    ///
    /// Out-of-range copies degrade to NULL; the number of such degradations
    /// is returned alongside the resolved position.
    pub fn resolve(&self, cell: &SuperCell) -> (TargetPosition, usize) {
        let mut degraded = 0;
        let keys = self
            .keys
            .iter()
            .map(|k| match k {
                KeyEntry::Copy(i) => match cell.keys.get(*i) {
                    Some(v) => KeyEntry::Value(v.clone()),
                    None => {
                        degraded += 1;
                        KeyEntry::Null
                    }
                },
                other => other.clone(),
            })
            .collect();
        (
            TargetPosition {
                keys,
                attributes: self.attributes.clone(),
                agg_mode: self.agg_mode,
            },
            degraded,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Segment {
    Key,
    Attr,
    Val,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureSentence {
    pub tokens: Vec<String>,
    pub segment_tags: Vec<Segment>,
}

impl FeatureSentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

fn push_tokens(out: &mut FeatureSentence, text: &str, tag: Segment) {
    let lowered = text.to_lowercase();
    let before = out.tokens.len();
    for t in lowered.split_whitespace() {
        out.tokens.push(t.to_string());
        out.segment_tags.push(tag);
    }
    // Blank fields still occupy a position so the sentence shape is stable.
    if out.tokens.len() == before {
        out.tokens.push("_".to_string());
        out.segment_tags.push(tag);
    }
}

/// Keys followed by interleaved (attribute, value) pairs, lower-cased and
/// whitespace-split.
pub fn render_feature(cell: &SuperCell) -> FeatureSentence {
    let mut out = FeatureSentence {
        tokens: Vec::new(),
        segment_tags: Vec::new(),
    };
    for k in &cell.keys {
        push_tokens(&mut out, k, Segment::Key);
    }
    for (a, v) in cell.attributes.iter().zip(&cell.values) {
        push_tokens(&mut out, a, Segment::Attr);
        push_tokens(&mut out, v, Segment::Val);
    }
    out
}

/// A class of a key head.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum KeyClass {
    Null,
    Wildcard,
    Copy(usize),
    Value(String),
}

impl KeyClass {
    fn from_entry(e: &KeyEntry) -> KeyClass {
        match e {
            KeyEntry::Null => KeyClass::Null,
            KeyEntry::Wildcard => KeyClass::Wildcard,
            KeyEntry::Copy(i) => KeyClass::Copy(*i),
            KeyEntry::Value(v) => KeyClass::Value(v.clone()),
        }
    }

    fn to_entry(&self) -> KeyEntry {
        match self {
            KeyClass::Null => KeyEntry::Null,
            KeyClass::Wildcard => KeyEntry::Wildcard,
            KeyClass::Copy(i) => KeyEntry::Copy(*i),
            KeyClass::Value(v) => KeyEntry::Value(v.clone()),
        }
    }
}

/// One class index per classifier head: `q` key heads, then one attribute head
/// per cell slot, then the aggregation head.
pub type LabelVector = Vec<usize>;

/// Encodes target positions as classifier-head indices and back.
///
/// Key head `l` has classes `[NULL, WILDCARD, COPY(0), .., COPY(copy_slots-1),
/// domain values in sorted order]`; attribute heads have `[NULL] ++ A`; the
/// aggregation head has the eight [`AggMode`]s.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCodec {
    pub schema: TargetSchema,
    pub copy_slots: usize,
    pub width_slots: usize,
}

impl LabelCodec {
    pub fn new(schema: TargetSchema, copy_slots: usize, width_slots: usize) -> Self {
        LabelCodec {
            schema,
            copy_slots,
            width_slots,
        }
    }

    fn key_domain_values(&self, l: usize) -> Vec<String> {
        self.schema.domain(l).values.into_iter().collect()
    }

    pub fn key_classes(&self, l: usize) -> Vec<KeyClass> {
        let mut classes = vec![KeyClass::Null, KeyClass::Wildcard];
        classes.extend((0..self.copy_slots).map(KeyClass::Copy));
        classes.extend(self.key_domain_values(l).into_iter().map(KeyClass::Value));
        classes
    }

    pub fn attribute_classes(&self) -> Vec<Option<String>> {
        std::iter::once(None)
            .chain(self.schema.attributes.iter().cloned().map(Some))
            .collect()
    }

    pub fn head_count(&self) -> usize {
        self.schema.key_arity() + self.width_slots + 1
    }

    /// Class counts per head, in label-vector order.
    pub fn head_sizes(&self) -> Vec<usize> {
        let mut sizes: Vec<usize> = (0..self.schema.key_arity())
            .map(|l| 2 + self.copy_slots + self.schema.domain(l).values.len())
            .collect();
        sizes.extend(std::iter::repeat(self.schema.attributes.len() + 1).take(self.width_slots));
        sizes.push(AggMode::ALL.len());
        sizes
    }

    pub fn agg_head(&self) -> usize {
        self.schema.key_arity() + self.width_slots
    }

    pub fn attribute_head(&self, slot: usize) -> usize {
        self.schema.key_arity() + slot
    }

    fn key_index(&self, l: usize, entry: &KeyEntry) -> Result<usize, ModelError> {
        match entry {
            KeyEntry::Null => Ok(0),
            KeyEntry::Wildcard => Ok(1),
            KeyEntry::Copy(i) if *i < self.copy_slots => Ok(2 + i),
            KeyEntry::Copy(i) => Err(ModelError::CopySlotOutOfRange {
                index: *i,
                slots: self.copy_slots,
            }),
            KeyEntry::Value(v) => self
                .schema
                .domain(l)
                .values
                .iter()
                .position(|d| d == v)
                .map(|p| 2 + self.copy_slots + p)
                .ok_or_else(|| ModelError::UnknownKeyValue {
                    attribute: self.schema.key_attributes[l].clone(),
                    value: v.clone(),
                }),
        }
    }

    /// Encode a position; attribute slots past the cell width are NULL.
    pub fn render_label(&self, pos: &TargetPosition) -> Result<LabelVector, ModelError> {
        let q = self.schema.key_arity();
        if pos.keys.len() != q {
            return Err(ModelError::InvalidPosition(format!(
                "{} key entries, expected {q}",
                pos.keys.len()
            )));
        }
        if pos.attributes.len() > self.width_slots {
            return Err(ModelError::TooWide {
                width: pos.attributes.len(),
                slots: self.width_slots,
            });
        }
        let mut out = Vec::with_capacity(self.head_count());
        for (l, k) in pos.keys.iter().enumerate() {
            out.push(self.key_index(l, k)?);
        }
        for slot in 0..self.width_slots {
            match pos.attributes.get(slot).cloned().flatten() {
                None => out.push(0),
                Some(a) => {
                    let idx = self
                        .schema
                        .attributes
                        .iter()
                        .position(|x| *x == a)
                        .ok_or(ModelError::UnknownAttribute(a))?;
                    out.push(idx + 1);
                }
            }
        }
        out.push(pos.agg_mode.index());
        Ok(out)
    }

    /// Decode a label vector for a super cell of the given width.
    pub fn decode(&self, label: &[usize], width: usize) -> Result<TargetPosition, ModelError> {
        let sizes = self.head_sizes();
        if label.len() != sizes.len() {
            return Err(ModelError::LabelLength {
                got: label.len(),
                expected: sizes.len(),
            });
        }
        if width > self.width_slots {
            return Err(ModelError::TooWide {
                width,
                slots: self.width_slots,
            });
        }
        for (head, (&idx, &n)) in label.iter().zip(&sizes).enumerate() {
            if idx >= n {
                return Err(ModelError::ClassOutOfRange {
                    head,
                    index: idx,
                    classes: n,
                });
            }
        }
        let q = self.schema.key_arity();
        let keys = (0..q)
            .map(|l| self.key_classes(l)[label[l]].to_entry())
            .collect();
        let attributes = (0..width)
            .map(|slot| {
                let idx = label[q + slot];
                (idx > 0).then(|| self.schema.attributes[idx - 1].clone())
            })
            .collect();
        let agg_mode = AggMode::from_index(label[self.agg_head()]).unwrap();
        Ok(TargetPosition {
            keys,
            attributes,
            agg_mode,
        })
    }

    pub fn key_class(&self, l: usize, entry: &KeyEntry) -> Result<KeyClass, ModelError> {
        self.key_index(l, entry)?;
        Ok(KeyClass::from_entry(entry))
    }
}

/// Write one JSON object per line.
pub fn write_json_lines<T: Serialize, W: Write>(items: &[T], mut w: W) -> Result<(), ModelError> {
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|e| ModelError::Json { line: 0, message: e.to_string() })?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Read one JSON object per non-blank line.
pub fn read_json_lines<T: for<'de> Deserialize<'de>, R: BufRead>(r: R) -> Result<Vec<T>, ModelError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| ModelError::Json {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}
