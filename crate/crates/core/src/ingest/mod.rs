//! Decomposition of raw sources (CSV, pivoted CSV, line logs) into super cells.

mod canon;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Read;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::SuperCell;

pub use canon::{
    canonicalize, month_abbrev, parse_date, parse_number, render_decimal, try_canonicalize,
    CanonKind, CanonWarning, DateTime, Dictionaries, SynonymDictionary,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IngestError {
    #[error("source {source_id}: key column {column:?} not found in header")]
    MissingKeyColumn { source_id: String, column: String },
    #[error("source {source_id}: row {row} has {got} fields, header has {expected}")]
    RaggedRow {
        source_id: String,
        row: usize,
        got: usize,
        expected: usize,
    },
    #[error("source {0}: empty input")]
    EmptyInput(String),
    #[error("source {0}: no log rule matched any line")]
    NoRuleMatchedAnything(String),
    #[error("invalid source descriptor {source_id}: {reason}")]
    InvalidDescriptor { source_id: String, reason: String },
    #[error("unknown dictionary {0:?}")]
    UnknownDictionary(String),
    #[error("dictionary: {0}")]
    Dictionary(String),
    #[error("csv: {0}")]
    Csv(String),
    #[error("io: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SourceFormat {
    #[serde(rename = "csv")]
    Csv,
    #[serde(rename = "pivoted_csv")]
    PivotedCsv,
    #[serde(rename = "log_lines")]
    LogLines,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PivotSpec {
    /// Name of the key dimension whose values appear as column headers.
    pub pivot_axis_name: String,
    /// Attribute name given to the pivoted values.
    pub value_attr_name: String,
}

/// One cell produced by a log rule: an attribute (literal or captured) and a
/// captured value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogCell {
    #[serde(default)]
    pub attr: Option<String>,
    #[serde(default)]
    pub attr_capture: Option<String>,
    pub value_capture: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogRule {
    pub pattern: String,
    /// Captures that set key fields; names must be descriptor key columns.
    #[serde(default)]
    pub key_captures: Vec<String>,
    /// Cells emitted by a match. A rule with no cells only updates the
    /// ambient keys carried to later lines.
    #[serde(default)]
    pub attr_value_captures: Vec<LogCell>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceDescriptor {
    pub source_id: String,
    pub format: SourceFormat,
    pub key_columns: Vec<String>,
    #[serde(default)]
    pub supercell_groups: Vec<Vec<String>>,
    #[serde(default)]
    pub pivot: Option<PivotSpec>,
    #[serde(default)]
    pub log_rules: Vec<LogRule>,
    #[serde(default)]
    pub canonicalizers: BTreeMap<String, CanonKind>,
    /// Finer-grained key column filled only on expanded rows; when present
    /// and non-empty its value is appended as an extra key component.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub child_key_column: Option<String>,
}

impl SourceDescriptor {
    pub fn csv(source_id: impl Into<String>, key_columns: &[&str]) -> Self {
        SourceDescriptor {
            source_id: source_id.into(),
            format: SourceFormat::Csv,
            key_columns: key_columns.iter().map(|s| s.to_string()).collect(),
            supercell_groups: Vec::new(),
            pivot: None,
            log_rules: Vec::new(),
            canonicalizers: BTreeMap::new(),
            child_key_column: None,
        }
    }

    fn invalid(&self, reason: impl Into<String>) -> IngestError {
        IngestError::InvalidDescriptor {
            source_id: self.source_id.clone(),
            reason: reason.into(),
        }
    }

    pub fn validate(&self, dicts: &Dictionaries) -> Result<(), IngestError> {
        let keys: BTreeSet<String> = self.key_columns.iter().map(|k| norm(k)).collect();
        if keys.len() != self.key_columns.len() {
            return Err(self.invalid("duplicate key column"));
        }
        let mut grouped = BTreeSet::new();
        for g in &self.supercell_groups {
            if g.is_empty() {
                return Err(self.invalid("empty super-cell group"));
            }
            for c in g {
                let c = norm(c);
                if keys.contains(&c) {
                    return Err(self.invalid(format!("key column {c:?} used in a group")));
                }
                if !grouped.insert(c.clone()) {
                    return Err(self.invalid(format!("column {c:?} in more than one group")));
                }
            }
        }
        if let Some(c) = &self.child_key_column {
            if keys.contains(&norm(c)) || grouped.contains(&norm(c)) {
                return Err(self.invalid(format!("child key column {c:?} used elsewhere")));
            }
            if self.format != SourceFormat::Csv {
                return Err(self.invalid("child key column requires csv format"));
            }
        }
        match self.format {
            SourceFormat::PivotedCsv if self.pivot.is_none() => {
                return Err(self.invalid("pivoted_csv requires a pivot section"))
            }
            SourceFormat::LogLines if self.log_rules.is_empty() => {
                return Err(self.invalid("log_lines requires at least one rule"))
            }
            _ => {}
        }
        for kind in self.canonicalizers.values() {
            if let CanonKind::Dictionary(name) = kind {
                dicts.require(name)?;
            }
        }
        Ok(())
    }

    /// Number of key components every super cell of this source carries.
    pub fn key_arity(&self) -> usize {
        self.key_columns.len() + usize::from(self.format == SourceFormat::PivotedCsv)
    }

    pub fn canon_for(&self, column: &str) -> CanonKind {
        let c = norm(column);
        self.canonicalizers
            .iter()
            .find(|(k, _)| norm(k) == c)
            .map(|(_, v)| v.clone())
            .unwrap_or_default()
    }
}

/// Column names are matched case-insensitively after trimming.
pub fn norm(name: &str) -> String {
    name.trim().to_lowercase()
}

/// Header plus rows of raw string fields.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RawTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl RawTable {
    pub fn new(header: Vec<String>, rows: Vec<Vec<String>>) -> Self {
        RawTable { header, rows }
    }

    /// Read RFC-4180 CSV; the first record is the header. Row lengths are not
    /// checked here (see [`decompose`]).
    pub fn from_csv<R: Read>(reader: R) -> Result<Self, IngestError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(reader);
        let mut records = rdr.records();
        let header = match records.next() {
            None => return Ok(RawTable::default()),
            Some(r) => r
                .map_err(|e| IngestError::Csv(e.to_string()))?
                .iter()
                .map(str::to_string)
                .collect(),
        };
        let mut rows = Vec::new();
        for r in records {
            let r = r.map_err(|e| IngestError::Csv(e.to_string()))?;
            rows.push(r.iter().map(str::to_string).collect());
        }
        Ok(RawTable { header, rows })
    }

    pub fn from_csv_str(text: &str) -> Result<Self, IngestError> {
        Self::from_csv(text.as_bytes())
    }

    pub fn to_csv_string(&self) -> String {
        let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
        w.write_record(&self.header).unwrap();
        for r in &self.rows {
            w.write_record(r).unwrap();
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        let n = norm(name);
        self.header.iter().position(|h| norm(h) == n)
    }
}

/// Empty strings and NA/null markers are missing cells.
pub fn is_missing(value: &str) -> bool {
    let v = value.trim();
    v.is_empty() || v.eq_ignore_ascii_case("na") || v.eq_ignore_ascii_case("null")
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub rows: usize,
    pub cells_emitted: usize,
    pub missing_cells: usize,
    pub rows_missing_key: usize,
    pub unparseable_values: usize,
    pub unmatched_lines: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decomposition {
    pub cells: Vec<SuperCell>,
    pub stats: IngestStats,
}

struct Canon<'a> {
    dicts: &'a Dictionaries,
    stats: &'a mut IngestStats,
}

impl Canon<'_> {
    fn apply(&mut self, value: &str, kind: &CanonKind) -> Result<String, IngestError> {
        let (v, warn) = try_canonicalize(value, kind, self.dicts)?;
        if warn.is_some() {
            self.stats.unparseable_values += 1;
        }
        Ok(v)
    }
}

/// Split a keyed table into super cells: one per (row, group), in
/// (row_ordinal, group index) order.
///
/// Declared groups come first, in declaration order; every other non-key
/// column becomes a singleton group, ordered by column name so the output does
/// not depend on the column layout of the file.
pub fn decompose(
    table: &RawTable,
    desc: &SourceDescriptor,
    dicts: &Dictionaries,
) -> Result<Decomposition, IngestError> {
    desc.validate(dicts)?;
    if desc.format == SourceFormat::LogLines {
        return Err(desc.invalid("log sources are decomposed with decompose_log"));
    }
    if table.header.is_empty() {
        return Err(IngestError::EmptyInput(desc.source_id.clone()));
    }
    let key_idx: Vec<usize> = desc
        .key_columns
        .iter()
        .map(|k| {
            table
                .column_index(k)
                .ok_or_else(|| IngestError::MissingKeyColumn {
                    source_id: desc.source_id.clone(),
                    column: k.clone(),
                })
        })
        .collect::<Result<_, _>>()?;

    let mut stats = IngestStats::default();
    let mut cells = Vec::new();
    match desc.format {
        SourceFormat::Csv => {
            let child_idx = desc.child_key_column.as_ref().and_then(|c| table.column_index(c));
            let mut excluded = key_idx.clone();
            excluded.extend(child_idx);
            let groups = column_groups(table, desc, &excluded);
            for (r, row) in table.rows.iter().enumerate() {
                check_width(desc, table, r, row)?;
                stats.rows += 1;
                let mut canon = Canon {
                    dicts,
                    stats: &mut stats,
                };
                let Some(mut keys) = row_keys(row, table, desc, &key_idx, &mut canon)? else {
                    continue;
                };
                if let Some(c) = child_idx.filter(|&c| !is_missing(&row[c])) {
                    keys.push(canon.apply(&row[c], &desc.canon_for(&table.header[c]))?);
                }
                for group in &groups {
                    let mut attributes = Vec::new();
                    let mut values = Vec::new();
                    for &c in group {
                        let raw = &row[c];
                        if is_missing(raw) {
                            canon.stats.missing_cells += 1;
                            continue;
                        }
                        let name = &table.header[c];
                        attributes.push(norm(name));
                        values.push(canon.apply(raw, &desc.canon_for(name))?);
                    }
                    if !values.is_empty() {
                        cells.push(SuperCell::new(
                            desc.source_id.clone(),
                            keys.clone(),
                            attributes,
                            values,
                            r as u64,
                        ));
                    }
                }
            }
        }
        SourceFormat::PivotedCsv => {
            let pivot = desc.pivot.as_ref().unwrap();
            let axis_kind = desc.canon_for(&pivot.pivot_axis_name);
            let value_kind = desc.canon_for(&pivot.value_attr_name);
            let mut value_cols: Vec<usize> = (0..table.header.len())
                .filter(|c| !key_idx.contains(c))
                .collect();
            let mut canon = Canon {
                dicts,
                stats: &mut stats,
            };
            let mut axis_values = HashMap::new();
            for &c in &value_cols {
                axis_values.insert(c, canon.apply(&table.header[c], &axis_kind)?);
            }
            // Order pivoted cells by canonical axis value, not header position.
            value_cols.sort_by(|a, b| axis_values[a].cmp(&axis_values[b]).then(a.cmp(b)));
            for (r, row) in table.rows.iter().enumerate() {
                check_width(desc, table, r, row)?;
                canon.stats.rows += 1;
                let Some(keys) = row_keys(row, table, desc, &key_idx, &mut canon)? else {
                    continue;
                };
                for &c in &value_cols {
                    let raw = &row[c];
                    if is_missing(raw) {
                        canon.stats.missing_cells += 1;
                        continue;
                    }
                    let mut k = keys.clone();
                    k.push(axis_values[&c].clone());
                    cells.push(SuperCell::new(
                        desc.source_id.clone(),
                        k,
                        vec![norm(&pivot.value_attr_name)],
                        vec![canon.apply(raw, &value_kind)?],
                        r as u64,
                    ));
                }
            }
        }
        SourceFormat::LogLines => unreachable!(),
    }
    stats.cells_emitted = cells.len();
    Ok(Decomposition { cells, stats })
}

fn check_width(
    desc: &SourceDescriptor,
    table: &RawTable,
    r: usize,
    row: &[String],
) -> Result<(), IngestError> {
    if row.len() != table.header.len() {
        return Err(IngestError::RaggedRow {
            source_id: desc.source_id.clone(),
            row: r,
            got: row.len(),
            expected: table.header.len(),
        });
    }
    Ok(())
}

fn row_keys(
    row: &[String],
    table: &RawTable,
    desc: &SourceDescriptor,
    key_idx: &[usize],
    canon: &mut Canon<'_>,
) -> Result<Option<Vec<String>>, IngestError> {
    let mut keys = Vec::with_capacity(key_idx.len());
    for &k in key_idx {
        if is_missing(&row[k]) {
            canon.stats.rows_missing_key += 1;
            return Ok(None);
        }
        keys.push(canon.apply(&row[k], &desc.canon_for(&table.header[k]))?);
    }
    Ok(Some(keys))
}

fn column_groups(table: &RawTable, desc: &SourceDescriptor, key_idx: &[usize]) -> Vec<Vec<usize>> {
    let mut used: BTreeSet<usize> = key_idx.iter().copied().collect();
    let mut groups = Vec::new();
    for g in &desc.supercell_groups {
        let cols: Vec<usize> = g.iter().filter_map(|c| table.column_index(c)).collect();
        used.extend(cols.iter().copied());
        if !cols.is_empty() {
            groups.push(cols);
        }
    }
    let mut singles: Vec<usize> = (0..table.header.len()).filter(|c| !used.contains(c)).collect();
    singles.sort_by(|a, b| {
        norm(&table.header[*a])
            .cmp(&norm(&table.header[*b]))
            .then(a.cmp(b))
    });
    groups.extend(singles.into_iter().map(|c| vec![c]));
    groups
}

struct CompiledRule<'a> {
    re: Regex,
    rule: &'a LogRule,
}

/// Decompose a line-oriented log. The first matching rule wins for each line.
///
/// Key fields persist across lines: a rule's key captures update the ambient
/// keys, and each emitted super cell takes the current value of every
/// descriptor key column. Lines that match no rule, or that would emit a cell
/// while some key is still unknown, are counted and skipped.
pub fn decompose_log(
    text: &str,
    desc: &SourceDescriptor,
    dicts: &Dictionaries,
) -> Result<Decomposition, IngestError> {
    desc.validate(dicts)?;
    let rules: Vec<CompiledRule<'_>> = desc
        .log_rules
        .iter()
        .map(|rule| {
            let re = Regex::new(&rule.pattern)
                .map_err(|e| desc.invalid(format!("bad pattern {:?}: {e}", rule.pattern)))?;
            let names: BTreeSet<&str> = re.capture_names().flatten().collect();
            let mut needed: Vec<&str> = rule.key_captures.iter().map(String::as_str).collect();
            for cell in &rule.attr_value_captures {
                needed.push(&cell.value_capture);
                match (&cell.attr, &cell.attr_capture) {
                    (Some(_), None) => {}
                    (None, Some(c)) => needed.push(c),
                    _ => return Err(desc.invalid("log cell needs exactly one of attr / attr_capture")),
                }
            }
            if let Some(missing) = needed.iter().find(|n| !names.contains(*n)) {
                return Err(desc.invalid(format!("pattern has no capture named {missing:?}")));
            }
            for k in &rule.key_captures {
                if !desc.key_columns.iter().any(|c| norm(c) == norm(k)) {
                    return Err(desc.invalid(format!("capture {k:?} is not a key column")));
                }
            }
            Ok(CompiledRule { re, rule })
        })
        .collect::<Result<_, IngestError>>()?;

    let mut stats = IngestStats::default();
    let mut ambient: Vec<Option<String>> = vec![None; desc.key_columns.len()];
    let mut cells = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        stats.rows += 1;
        let Some((rule, caps)) = rules
            .iter()
            .find_map(|r| r.re.captures(line).map(|c| (r, c)))
        else {
            stats.unmatched_lines += 1;
            continue;
        };
        let mut canon = Canon {
            dicts,
            stats: &mut stats,
        };
        for k in &rule.rule.key_captures {
            let pos = desc.key_columns.iter().position(|c| norm(c) == norm(k)).unwrap();
            let raw = caps.name(k).map(|m| m.as_str()).unwrap_or("");
            ambient[pos] = if is_missing(raw) {
                None
            } else {
                Some(canon.apply(raw, &desc.canon_for(k))?)
            };
        }
        if rule.rule.attr_value_captures.is_empty() {
            continue;
        }
        let Some(keys) = ambient.iter().cloned().collect::<Option<Vec<String>>>() else {
            canon.stats.rows_missing_key += 1;
            continue;
        };
        let mut attributes = Vec::new();
        let mut values = Vec::new();
        for cell in &rule.rule.attr_value_captures {
            let raw = caps.name(&cell.value_capture).map(|m| m.as_str()).unwrap_or("");
            if is_missing(raw) {
                canon.stats.missing_cells += 1;
                continue;
            }
            let attr = match (&cell.attr, &cell.attr_capture) {
                (Some(a), _) => norm(a),
                (None, Some(c)) => norm(caps.name(c).map(|m| m.as_str()).unwrap_or("")),
                _ => unreachable!(),
            };
            let kind = match (&cell.attr, &cell.attr_capture) {
                (Some(a), _) => desc.canon_for(a),
                _ => desc.canon_for(&cell.value_capture),
            };
            attributes.push(attr);
            values.push(canon.apply(raw, &kind)?);
        }
        if !values.is_empty() {
            cells.push(SuperCell::new(
                desc.source_id.clone(),
                keys,
                attributes,
                values,
                line_no as u64,
            ));
        }
    }
    if cells.is_empty() {
        return Err(IngestError::NoRuleMatchedAnything(desc.source_id.clone()));
    }
    stats.cells_emitted = cells.len();
    Ok(Decomposition { cells, stats })
}

/// Raw content of one source, in the shape its descriptor expects.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SourceData {
    Table(RawTable),
    Log(String),
}

impl SourceData {
    pub fn parse(desc: &SourceDescriptor, text: &str) -> Result<Self, IngestError> {
        Ok(match desc.format {
            SourceFormat::LogLines => SourceData::Log(text.to_string()),
            _ => SourceData::Table(RawTable::from_csv_str(text)?),
        })
    }

    pub fn as_table(&self) -> Option<&RawTable> {
        match self {
            SourceData::Table(t) => Some(t),
            SourceData::Log(_) => None,
        }
    }
}

pub fn decompose_source(
    data: &SourceData,
    desc: &SourceDescriptor,
    dicts: &Dictionaries,
) -> Result<Decomposition, IngestError> {
    match data {
        SourceData::Table(t) => decompose(t, desc, dicts),
        SourceData::Log(text) => decompose_log(text, desc, dicts),
    }
}
