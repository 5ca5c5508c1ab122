//! Column-matching baseline: MinHash signatures per column, matching against
//! a target example, greedy source selection and an exact equi-join.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assemble::{FinalTable, TargetTable};
use crate::ingest::{is_missing, try_canonicalize, Dictionaries, IngestError, RawTable, SourceDescriptor};
use crate::learner::fnv1a64;
use crate::model::{AggMode, KeyEntry, SuperCell, TargetPosition, TargetSchema};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LshError {
    #[error("column {0} has no values")]
    EmptyColumn(String),
    #[error("signatures differ in length or seed")]
    IncompatibleSignatures,
    #[error("no selected source can supply attribute {0}")]
    UncoverableAttribute(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("io: {0}")]
    Io(String),
}

pub const DEFAULT_SIGNATURE_LEN: usize = 128;
pub const DEFAULT_THRESHOLD: f64 = 0.5;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinHashSignature {
    pub seed: u64,
    pub values: Vec<u32>,
}

impl MinHashSignature {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// 3-character shingles; values shorter than three characters are one shingle.
pub fn shingles<'a, I: IntoIterator<Item = &'a str>>(values: I) -> HashSet<String> {
    let mut out = HashSet::new();
    for v in values {
        let chars: Vec<char> = v.chars().collect();
        if chars.len() < 3 {
            out.insert(v.to_string());
        } else {
            out.extend(chars.windows(3).map(|w| w.iter().collect::<String>()));
        }
    }
    out
}

pub fn signature_of_set(set: &HashSet<String>, l: usize, seed: u64) -> MinHashSignature {
    let seeds: Vec<u64> = (0..l as u64).map(|j| splitmix64(seed.wrapping_add(j))).collect();
    let mut values = vec![u32::MAX; l];
    for s in set {
        let base = fnv1a64(s.as_bytes());
        for (v, sj) in values.iter_mut().zip(&seeds) {
            let h = splitmix64(base ^ sj) as u32;
            if h < *v {
                *v = h;
            }
        }
    }
    MinHashSignature { seed, values }
}

/// Signature of a column's non-missing values.
pub fn signature(name: &str, column: &[String], l: usize, seed: u64) -> Result<MinHashSignature, LshError> {
    let set = shingles(column.iter().filter(|v| !is_missing(v)).map(String::as_str));
    if set.is_empty() {
        return Err(LshError::EmptyColumn(name.to_string()));
    }
    Ok(signature_of_set(&set, l, seed))
}

pub fn estimate_jaccard(a: &MinHashSignature, b: &MinHashSignature) -> Result<f64, LshError> {
    if a.len() != b.len() || a.seed != b.seed || a.is_empty() {
        return Err(LshError::IncompatibleSignatures);
    }
    let agree = a.values.iter().zip(&b.values).filter(|(x, y)| x == y).count();
    Ok(agree as f64 / a.len() as f64)
}

pub fn exact_jaccard(a: &HashSet<String>, b: &HashSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

/// A tabular source with canonicalized column values.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CanonTable {
    pub source_id: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CanonTable {
    pub fn new(table: &RawTable, desc: &SourceDescriptor, dicts: &Dictionaries) -> Result<Self, LshError> {
        let kinds: Vec<_> = table.header.iter().map(|h| desc.canon_for(h)).collect();
        let rows = table
            .rows
            .iter()
            .map(|r| {
                r.iter()
                    .zip(&kinds)
                    .map(|(v, k)| {
                        if is_missing(v) {
                            Ok(String::new())
                        } else {
                            try_canonicalize(v, k, dicts).map(|(c, _)| c)
                        }
                    })
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(CanonTable {
            source_id: desc.source_id.clone(),
            header: table.header.clone(),
            rows,
        })
    }

    pub fn column(&self, c: usize) -> Vec<String> {
        self.rows.iter().map(|r| r[c].clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignatureEntry {
    pub source: String,
    pub column: String,
    pub signature: MinHashSignature,
}

/// Signatures of every non-empty column of every source, in source then
/// column order.
pub fn build_signatures(sources: &[CanonTable], l: usize, seed: u64) -> Vec<SignatureEntry> {
    let mut out = Vec::new();
    for t in sources {
        for (c, name) in t.header.iter().enumerate() {
            if let Ok(signature) = signature(name, &t.column(c), l, seed) {
                out.push(SignatureEntry {
                    source: t.source_id.clone(),
                    column: name.clone(),
                    signature,
                });
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnMatch {
    pub source: String,
    pub column: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    /// Best column per matched target attribute.
    pub best: BTreeMap<String, ColumnMatch>,
    /// Every column at or above the threshold, per attribute, best first.
    pub candidates: BTreeMap<String, Vec<ColumnMatch>>,
    /// Target attributes with no column at or above the threshold.
    pub no_match: Vec<String>,
}

/// Match target attributes to source columns by estimated Jaccard similarity
/// of their shingle sets. Ties go to the earlier source, then column.
pub fn match_columns(
    signatures: &[SignatureEntry],
    target_example: &FinalTable,
    threshold: f64,
    l: usize,
    seed: u64,
) -> Result<MatchReport, LshError> {
    let mut report = MatchReport {
        best: BTreeMap::new(),
        candidates: BTreeMap::new(),
        no_match: Vec::new(),
    };
    for (c, attr) in target_example.columns.iter().enumerate() {
        let column: Vec<String> = target_example.rows.iter().map(|r| r[c].clone()).collect();
        let target = match signature(attr, &column, l, seed) {
            Ok(s) => s,
            Err(LshError::EmptyColumn(_)) => {
                report.no_match.push(attr.clone());
                continue;
            }
            Err(e) => return Err(e),
        };
        let mut found: Vec<ColumnMatch> = Vec::new();
        for e in signatures {
            let score = estimate_jaccard(&target, &e.signature)?;
            if score >= threshold {
                found.push(ColumnMatch {
                    source: e.source.clone(),
                    column: e.column.clone(),
                    score,
                });
            }
        }
        // stable sort keeps source/column order among equal scores
        found.sort_by(|a, b| b.score.total_cmp(&a.score));
        match found.first() {
            Some(m) => {
                report.best.insert(attr.clone(), m.clone());
                report.candidates.insert(attr.clone(), found);
            }
            None => report.no_match.push(attr.clone()),
        }
    }
    Ok(report)
}

/// Greedy set cover of the matched attributes by source; ties go to the
/// source listed first in `source_order`. Fails when a key attribute has no
/// match at all.
pub fn select_sources(
    matches: &MatchReport,
    schema: &TargetSchema,
    source_order: &[String],
) -> Result<Vec<String>, LshError> {
    if let Some(k) = schema.key_attributes.iter().find(|k| !matches.best.contains_key(*k)) {
        return Err(LshError::UncoverableAttribute(k.clone()));
    }
    let mut uncovered: BTreeSet<&String> = matches
        .best
        .keys()
        .filter(|a| !schema.is_key(a))
        .collect();
    let covers = |src: &str, open: &BTreeSet<&String>| {
        open.iter()
            .filter(|a| matches.best[**a].source == src)
            .count()
    };
    let mut chosen = Vec::new();
    while !uncovered.is_empty() {
        let mut best: Option<(&String, usize)> = None;
        for s in source_order {
            let n = covers(s, &uncovered);
            if n > 0 && best.map_or(true, |(_, b)| n > b) {
                best = Some((s, n));
            }
        }
        let Some((s, _)) = best else {
            let a = uncovered.iter().next().unwrap();
            return Err(LshError::UncoverableAttribute((*a).clone()));
        };
        uncovered.retain(|a| matches.best[*a].source != *s);
        chosen.push(s.clone());
    }
    Ok(chosen)
}

/// Full outer equi-join of the selected sources on their matched key
/// columns, projecting each source's best-matched value columns.
pub fn baseline_integrate(
    matches: &MatchReport,
    selected: &[String],
    sources: &[CanonTable],
    schema: &TargetSchema,
) -> Result<TargetTable, LshError> {
    let mut table = TargetTable::new(schema.clone());
    for src in selected {
        let Some(t) = sources.iter().find(|t| &t.source_id == src) else { continue };
        let col = |name: &str| t.header.iter().position(|h| h == name);
        let mut key_cols = Vec::new();
        for k in &schema.key_attributes {
            let c = matches
                .candidates
                .get(k)
                .and_then(|cs| cs.iter().find(|m| &m.source == src))
                .and_then(|m| col(&m.column))
                .ok_or_else(|| LshError::UncoverableAttribute(k.clone()))?;
            key_cols.push(c);
        }
        let projected: Vec<(usize, String)> = schema
            .value_attributes()
            .into_iter()
            .filter_map(|a| {
                let m = matches.best.get(&a).filter(|m| &m.source == src)?;
                col(&m.column).map(|c| (c, a))
            })
            .collect();
        if projected.is_empty() {
            continue;
        }
        for (r, row) in t.rows.iter().enumerate() {
            if key_cols.iter().any(|&c| row[c].is_empty()) {
                continue;
            }
            let present: Vec<&(usize, String)> = projected.iter().filter(|(c, _)| !row[*c].is_empty()).collect();
            if present.is_empty() {
                continue;
            }
            let keys: Vec<String> = key_cols.iter().map(|&c| row[c].clone()).collect();
            let cell = SuperCell::new(
                src.clone(),
                keys.clone(),
                present.iter().map(|(_, a)| a.clone()).collect(),
                present.iter().map(|(c, _)| row[*c].clone()).collect(),
                r as u64,
            );
            let pos = TargetPosition {
                keys: keys.into_iter().map(KeyEntry::Value).collect(),
                attributes: present.iter().map(|(_, a)| Some(a.clone())).collect(),
                agg_mode: AggMode::Replace,
            };
            table
                .apply(&cell, &pos)
                .map_err(|e| LshError::Io(e.to_string()))?;
        }
    }
    Ok(table)
}

/// Bytes needed to store the signatures: columns × L × 4.
pub fn storage_report(signatures: &[SignatureEntry]) -> u64 {
    signatures.iter().map(|s| s.signature.len() as u64 * 4).sum()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreIndexEntry {
    pub source: String,
    pub column: String,
    #[serde(rename = "L")]
    pub l: usize,
    pub seed: u64,
}

/// Write signatures as concatenated little-endian u32 values plus a JSON index.
pub fn write_signature_store(signatures: &[SignatureEntry], bin: &Path, index: &Path) -> Result<u64, LshError> {
    let io = |e: std::io::Error| LshError::Io(e.to_string());
    let mut w = std::io::BufWriter::new(std::fs::File::create(bin).map_err(io)?);
    let mut written = 0u64;
    for s in signatures {
        for v in &s.signature.values {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
            written += 4;
        }
    }
    w.flush().map_err(io)?;
    let idx: Vec<StoreIndexEntry> = signatures
        .iter()
        .map(|s| StoreIndexEntry {
            source: s.source.clone(),
            column: s.column.clone(),
            l: s.signature.len(),
            seed: s.signature.seed,
        })
        .collect();
    std::fs::write(index, serde_json::to_string_pretty(&idx).unwrap()).map_err(io)?;
    Ok(written)
}

pub fn read_signature_store(bin: &Path, index: &Path) -> Result<Vec<SignatureEntry>, LshError> {
    let io = |e: std::io::Error| LshError::Io(e.to_string());
    let bytes = std::fs::read(bin).map_err(io)?;
    let idx: Vec<StoreIndexEntry> = serde_json::from_str(&std::fs::read_to_string(index).map_err(io)?)
        .map_err(|e| LshError::Io(e.to_string()))?;
    let mut at = 0;
    let mut out = Vec::new();
    for e in idx {
        let end = at + e.l * 4;
        let chunk = bytes.get(at..end).ok_or_else(|| LshError::Io("signature store truncated".into()))?;
        let values = chunk
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        out.push(SignatureEntry {
            source: e.source,
            column: e.column,
            signature: MinHashSignature { seed: e.seed, values },
        });
        at = end;
    }
    if at != bytes.len() {
        return Err(LshError::Io("signature store has trailing bytes".into()));
    }
    Ok(out)
}
