//! Materializes target positions into the target table.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use rust_decimal::{Decimal, RoundingStrategy};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{parse_number, render_decimal};
use crate::model::{AggMode, KeyEntry, SuperCell, TargetPosition, TargetSchema};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AssembleError {
    #[error("value {0:?} is not numeric")]
    NumericParseFailure(String),
    #[error("cell {key:?}/{attribute} already aggregates with {existing}, got {incoming}")]
    AggModeConflict {
        key: Vec<String>,
        attribute: String,
        existing: AggMode,
        incoming: AggMode,
    },
    #[error("invalid position: {0}")]
    InvalidPosition(String),
    #[error("io: {0}")]
    IoFailure(String),
}

/// Accumulated state of one target cell.
///
/// `acc` holds the running sum (Sum/Avg) or the current extreme (Min/Max);
/// `count` the number of accepted writes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellState {
    pub value: String,
    pub mode: AggMode,
    pub count: u64,
    pub acc: Decimal,
}

impl CellState {
    fn first(mode: AggMode, value: &str) -> Result<Self, AssembleError> {
        let mut s = CellState {
            value: String::new(),
            mode,
            count: 1,
            acc: Decimal::ZERO,
        };
        if mode.is_numeric() {
            s.acc = numeric(value)?;
        } else {
            s.value = value.to_string();
        }
        if mode == AggMode::Count {
            s.acc = Decimal::ZERO;
        }
        Ok(s)
    }

    fn merge(&mut self, value: &str) -> Result<(), AssembleError> {
        match self.mode {
            AggMode::Sum | AggMode::Avg => {
                let d = numeric(value)?;
                self.acc = self
                    .acc
                    .checked_add(d)
                    .ok_or_else(|| AssembleError::NumericParseFailure(value.to_string()))?;
            }
            AggMode::Min => self.acc = self.acc.min(numeric(value)?),
            AggMode::Max => self.acc = self.acc.max(numeric(value)?),
            AggMode::Count => {
                numeric(value)?;
            }
            AggMode::Replace => self.value = value.to_string(),
            AggMode::Discard => {}
            AggMode::Concat => {
                self.value.push('|');
                self.value.push_str(value);
            }
        }
        self.count += 1;
        Ok(())
    }

    pub fn render(&self) -> String {
        match self.mode {
            AggMode::Sum | AggMode::Min | AggMode::Max => render_decimal(self.acc),
            AggMode::Avg => {
                let avg = self.acc / Decimal::from(self.count);
                render_decimal(avg.round_dp_with_strategy(6, RoundingStrategy::MidpointNearestEven))
            }
            AggMode::Count => self.count.to_string(),
            AggMode::Replace | AggMode::Discard | AggMode::Concat => self.value.clone(),
        }
    }
}

fn numeric(value: &str) -> Result<Decimal, AssembleError> {
    parse_number(value).ok_or_else(|| AssembleError::NumericParseFailure(value.to_string()))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableStats {
    pub cells_written: u64,
    pub cells_skipped: u64,
    pub numeric_failures: u64,
    pub conflicts: u64,
    pub wildcard_misses: u64,
}

/// What happened to the cells of one super cell.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ApplyOutcome {
    pub written: usize,
    pub skipped: usize,
    pub errors: Vec<AssembleError>,
}

pub type RowKey = Vec<String>;

#[derive(Debug, Clone)]
pub struct TargetTable {
    schema: TargetSchema,
    rows: BTreeMap<RowKey, BTreeMap<String, CellState>>,
    stats: TableStats,
    build_time: Duration,
}

impl TargetTable {
    pub fn new(schema: TargetSchema) -> Self {
        TargetTable {
            schema,
            rows: BTreeMap::new(),
            stats: TableStats::default(),
            build_time: Duration::ZERO,
        }
    }

    pub fn schema(&self) -> &TargetSchema {
        &self.schema
    }

    pub fn stats(&self) -> &TableStats {
        &self.stats
    }

    pub fn row_count(&self) -> usize {
        self.rows.len()
    }

    pub fn cell(&self, key: &[String], attribute: &str) -> Option<&CellState> {
        self.rows.get(key).and_then(|r| r.get(attribute))
    }

    /// Apply one super cell at a resolved position.
    ///
    /// Non-numeric values under numeric modes and mode conflicts skip the
    /// offending cell and are reported in the outcome; malformed positions
    /// are rejected outright.
    pub fn apply(&mut self, cell: &SuperCell, pos: &TargetPosition) -> Result<ApplyOutcome, AssembleError> {
        let start = Instant::now();
        let out = self.apply_inner(cell, pos);
        self.build_time += start.elapsed();
        out
    }

    fn apply_inner(&mut self, cell: &SuperCell, pos: &TargetPosition) -> Result<ApplyOutcome, AssembleError> {
        let mut outcome = ApplyOutcome::default();
        if pos.is_discard() {
            return Ok(outcome);
        }
        if pos.keys.len() != self.schema.key_arity() {
            return Err(AssembleError::InvalidPosition(format!(
                "{} key entries, schema has {}",
                pos.keys.len(),
                self.schema.key_arity()
            )));
        }
        if pos.attributes.len() != cell.values.len() {
            return Err(AssembleError::InvalidPosition(format!(
                "{} attribute entries for {} values",
                pos.attributes.len(),
                cell.values.len()
            )));
        }
        let mut pattern = Vec::with_capacity(pos.keys.len());
        for k in &pos.keys {
            pattern.push(match k {
                KeyEntry::Value(v) => Some(v.clone()),
                KeyEntry::Wildcard => None,
                KeyEntry::Copy(_) => {
                    return Err(AssembleError::InvalidPosition("unresolved COPY marker".into()))
                }
                KeyEntry::Null => {
                    // A keyed write with a missing component cannot be placed.
                    let n = pos.attributes.iter().flatten().count();
                    outcome.skipped += n;
                    self.stats.cells_skipped += n as u64;
                    return Ok(outcome);
                }
            });
        }
        let targets: Vec<RowKey> = if pattern.iter().all(Option::is_some) {
            vec![pattern.into_iter().map(Option::unwrap).collect()]
        } else {
            let matched: Vec<RowKey> = self
                .rows
                .keys()
                .filter(|k| {
                    k.iter()
                        .zip(&pattern)
                        .all(|(have, want)| want.as_ref().map_or(true, |w| w == have))
                })
                .cloned()
                .collect();
            if matched.is_empty() {
                self.stats.wildcard_misses += 1;
            }
            matched
        };
        for key in targets {
            let row = self.rows.entry(key.clone()).or_default();
            for (attr, value) in pos.attributes.iter().zip(&cell.values) {
                let Some(attr) = attr else { continue };
                let result = match row.get_mut(attr) {
                    None => CellState::first(pos.agg_mode, value).map(|s| {
                        row.insert(attr.clone(), s);
                    }),
                    Some(state) if state.mode != pos.agg_mode => Err(AssembleError::AggModeConflict {
                        key: key.clone(),
                        attribute: attr.clone(),
                        existing: state.mode,
                        incoming: pos.agg_mode,
                    }),
                    Some(state) => state.merge(value),
                };
                match result {
                    Ok(()) => {
                        outcome.written += 1;
                        self.stats.cells_written += 1;
                    }
                    Err(e) => {
                        match e {
                            AssembleError::AggModeConflict { .. } => self.stats.conflicts += 1,
                            _ => self.stats.numeric_failures += 1,
                        }
                        outcome.skipped += 1;
                        self.stats.cells_skipped += 1;
                        outcome.errors.push(e);
                    }
                }
            }
        }
        Ok(outcome)
    }

    /// Render every cell; rows sorted by key tuple, columns keys-first.
    pub fn finalize(&self) -> FinalTable {
        let columns = self.schema.output_columns();
        let q = self.schema.key_arity();
        let rows = self
            .rows
            .iter()
            .map(|(key, cells)| {
                let mut out = key.clone();
                for col in &columns[q..] {
                    out.push(cells.get(col).map(CellState::render).unwrap_or_default());
                }
                out
            })
            .collect();
        FinalTable { columns, rows }
    }
}

/// Apply items in two passes: keyed writes first, then wildcard broadcasts,
/// each pass in input order.
pub fn build_table<'a, I>(schema: &TargetSchema, items: I) -> Result<(TargetTable, Vec<AssembleError>), AssembleError>
where
    I: IntoIterator<Item = (&'a SuperCell, &'a TargetPosition)>,
{
    let mut table = TargetTable::new(schema.clone());
    let mut errors = Vec::new();
    let mut deferred = Vec::new();
    for (cell, pos) in items {
        if pos.has_wildcard() {
            deferred.push((cell, pos));
        } else {
            errors.extend(table.apply(cell, pos)?.errors);
        }
    }
    for (cell, pos) in deferred {
        errors.extend(table.apply(cell, pos)?.errors);
    }
    Ok((table, errors))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FinalTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl FinalTable {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), AssembleError> {
        let mut wr = csv::Writer::from_writer(w);
        let io = |e: csv::Error| AssembleError::IoFailure(e.to_string());
        wr.write_record(&self.columns).map_err(io)?;
        for r in &self.rows {
            wr.write_record(r).map_err(io)?;
        }
        wr.flush().map_err(|e| AssembleError::IoFailure(e.to_string()))
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("utf-8 fields")
    }

    pub fn read_csv(text: &str) -> Result<FinalTable, AssembleError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(text.as_bytes());
        let mut records = rdr.records();
        let io = |e: csv::Error| AssembleError::IoFailure(e.to_string());
        let columns = match records.next() {
            None => return Err(AssembleError::IoFailure("empty csv".into())),
            Some(r) => r.map_err(io)?.iter().map(str::to_string).collect(),
        };
        let rows = records
            .map(|r| r.map(|r| r.iter().map(str::to_string).collect()).map_err(io))
            .collect::<Result<_, _>>()?;
        Ok(FinalTable { columns, rows })
    }

    /// Non-empty cells keyed by (row key, column), for `key_arity` leading key columns.
    pub fn cells(&self, key_arity: usize) -> BTreeMap<(RowKey, String), String> {
        let mut out = BTreeMap::new();
        for r in &self.rows {
            let key = r[..key_arity].to_vec();
            for (c, v) in self.columns.iter().zip(r).skip(key_arity) {
                if !v.is_empty() {
                    out.insert((key.clone(), c.clone()), v.clone());
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellDiff {
    pub key: RowKey,
    pub column: String,
    pub expected: Option<String>,
    pub actual: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableAgreement {
    pub matching: usize,
    pub total: usize,
    pub diffs: Vec<CellDiff>,
}

impl TableAgreement {
    pub fn fraction(&self) -> f64 {
        if self.total == 0 {
            1.0
        } else {
            self.matching as f64 / self.total as f64
        }
    }
}

/// Cell-level agreement over the union of non-empty cells of both tables.
pub fn compare_tables(expected: &FinalTable, actual: &FinalTable, key_arity: usize) -> TableAgreement {
    let e = expected.cells(key_arity);
    let a = actual.cells(key_arity);
    let positions: BTreeSet<&(RowKey, String)> = e.keys().chain(a.keys()).collect();
    let mut matching = 0;
    let mut diffs = Vec::new();
    for p in &positions {
        let (ev, av) = (e.get(*p), a.get(*p));
        if ev == av {
            matching += 1;
        } else {
            diffs.push(CellDiff {
                key: p.0.clone(),
                column: p.1.clone(),
                expected: ev.cloned(),
                actual: av.cloned(),
            });
        }
    }
    TableAgreement {
        matching,
        total: positions.len(),
        diffs,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssemblyReport {
    pub build_ms: f64,
    pub transform_ms: f64,
    pub write_ms: f64,
    pub cells_written: u64,
    pub cells_skipped: u64,
}

/// Finalize the table and write it as CSV, timing each stage.
pub fn finalize_and_write(table: &TargetTable, path: &Path) -> Result<AssemblyReport, AssembleError> {
    let t0 = Instant::now();
    let fin = table.finalize();
    let transform = t0.elapsed();
    let t1 = Instant::now();
    let file = std::fs::File::create(path)
        .map_err(|e| AssembleError::IoFailure(format!("{}: {e}", path.display())))?;
    fin.write_csv(std::io::BufWriter::new(file))?;
    let write = t1.elapsed();
    Ok(AssemblyReport {
        build_ms: table.build_time.as_secs_f64() * 1e3,
        transform_ms: transform.as_secs_f64() * 1e3,
        write_ms: write.as_secs_f64() * 1e3,
        cells_written: table.stats.cells_written,
        cells_skipped: table.stats.cells_skipped,
    })
}
