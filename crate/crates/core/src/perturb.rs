//! Schema-change simulation: renames, character noise, value reformatting,
//! key expansion, pivoting, column reordering and irrelevant columns.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{
    is_missing, month_abbrev, norm, parse_date, parse_number, render_decimal, try_canonicalize, CanonKind,
    Dictionaries, IngestError, PivotSpec, RawTable, SourceDescriptor, SourceFormat, SynonymDictionary,
};
use crate::mapping::{KeyHierarchy, LabeledSample, MappingSpec};
use crate::model::{render_feature, SuperCell, TargetPosition};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PerturbError {
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("two rows share keys {key:?} at pivot value {axis:?}")]
    DuplicateCellOnPivot { key: Vec<String>, axis: String },
    #[error("column {0:?} not found")]
    MissingColumn(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

/// Irrelevant column names used for noise columns.
pub const NOISE_COLUMNS: &[&str] = &[
    "fips",
    "uid",
    "iso2",
    "iso3",
    "code3",
    "combined_key",
    "last_update",
    "incident_rate",
    "testing_rate",
    "people_tested",
    "people_hospitalized",
    "mortality_rate",
    "hospitalization_rate",
    "parks",
    "residential",
    "transit_stations",
    "notes",
    "population_density",
    "median_age",
    "station_id",
];

/// Noise samples drawn per noise column during augmentation.
const NOISE_SAMPLES_PER_COLUMN: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationPlan {
    pub seed: u64,
    #[serde(default)]
    pub attr_rename_rate: f64,
    #[serde(default)]
    pub char_noise_rate: f64,
    #[serde(default)]
    pub value_reformat_rate: f64,
    #[serde(default)]
    pub key_expansion_rate: f64,
    #[serde(default)]
    pub pivot_enabled: bool,
    #[serde(default)]
    pub add_remove_noise_columns: usize,
    #[serde(default)]
    pub synonym_dict: Option<String>,
    /// Perturbed copies generated per original sample.
    #[serde(default = "one")]
    pub copies: usize,
}

fn one() -> usize {
    1
}

impl PerturbationPlan {
    pub fn none(seed: u64) -> Self {
        PerturbationPlan {
            seed,
            attr_rename_rate: 0.0,
            char_noise_rate: 0.0,
            value_reformat_rate: 0.0,
            key_expansion_rate: 0.0,
            pivot_enabled: false,
            add_remove_noise_columns: 0,
            synonym_dict: None,
            copies: 1,
        }
    }

    pub fn validate(&self) -> Result<(), PerturbError> {
        for (name, r) in [
            ("attr_rename_rate", self.attr_rename_rate),
            ("char_noise_rate", self.char_noise_rate),
            ("value_reformat_rate", self.value_reformat_rate),
            ("key_expansion_rate", self.key_expansion_rate),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return Err(PerturbError::InvalidPlan(format!("{name} = {r} is outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn is_noop(&self) -> bool {
        self.copies == 0
            || (self.attr_rename_rate == 0.0
                && self.char_noise_rate == 0.0
                && self.value_reformat_rate == 0.0
                && self.key_expansion_rate == 0.0
                && !self.pivot_enabled
                && self.add_remove_noise_columns == 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbOp {
    Rename,
    CharNoise,
    Reformat,
    ExpandKeys,
    Pivot,
    NoiseColumn,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerturbLogEntry {
    pub sample_id: usize,
    /// Index of the original sample this one was derived from.
    pub derived_from: Option<usize>,
    pub ops_applied: Vec<PerturbOp>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentStats {
    pub attributes_total: usize,
    /// Attributes renamed in the first perturbed snapshot.
    pub attributes_renamed: usize,
    pub perturbed_samples: usize,
    pub expanded_samples: usize,
    pub non_numeric_expansions: usize,
    pub noise_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Augmented {
    pub samples: Vec<LabeledSample>,
    pub log: Vec<PerturbLogEntry>,
    pub stats: AugmentStats,
}

pub fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// One random deletion or substitution; tokens shorter than two characters
/// are only ever substituted.
pub fn char_noise<R: Rng>(token: &str, rng: &mut R) -> String {
    let mut chars: Vec<char> = token.chars().collect();
    if chars.is_empty() {
        return String::new();
    }
    let i = rng.gen_range(0..chars.len());
    if chars.len() >= 3 && rng.gen_bool(0.5) {
        chars.remove(i);
    } else {
        let old = chars[i];
        let mut c = old;
        while c == old {
            c = rng.gen_range(b'a'..=b'z') as char;
        }
        chars[i] = c;
    }
    chars.into_iter().collect()
}

/// Apply char noise to each whitespace token with probability `rate`.
pub fn noise_phrase<R: Rng>(phrase: &str, rate: f64, rng: &mut R) -> (String, bool) {
    let mut changed = false;
    let tokens: Vec<String> = phrase
        .split_whitespace()
        .map(|t| {
            if rate > 0.0 && rng.gen_bool(rate) {
                changed = true;
                char_noise(t, rng)
            } else {
                t.to_string()
            }
        })
        .collect();
    (tokens.join(" "), changed)
}

/// A synonym sibling when the dictionary knows the name, else a one-edit
/// variant of one of its tokens.
pub fn rename_target<R: Rng>(name: &str, synonyms: Option<&SynonymDictionary>, rng: &mut R) -> String {
    if let Some(s) = synonyms.map(|d| d.siblings(name)).filter(|s| !s.is_empty()) {
        return s.choose(rng).unwrap().to_string();
    }
    let mut tokens: Vec<String> = name.split_whitespace().map(str::to_string).collect();
    if tokens.is_empty() {
        return char_noise(name, rng);
    }
    let i = rng.gen_range(0..tokens.len());
    tokens[i] = char_noise(&tokens[i], rng);
    tokens.join(" ")
}

/// Pick `count` of `names` (uniformly, seeded) and assign each a new name.
pub fn rename_plan<R: Rng>(
    names: &[String],
    count: usize,
    synonyms: Option<&SynonymDictionary>,
    rng: &mut R,
) -> BTreeMap<String, String> {
    let mut pool: Vec<&String> = names.iter().collect::<BTreeSet<_>>().into_iter().collect();
    pool.shuffle(rng);
    pool.into_iter()
        .take(count)
        .map(|n| (n.clone(), rename_target(n, synonyms, rng)))
        .collect()
}

pub fn rename_count(total: usize, rate: f64) -> usize {
    ((total as f64) * rate).round() as usize
}

fn date_alternates(v: &str) -> Vec<String> {
    let Some(d) = parse_date(v) else { return Vec::new() };
    let (y, m, day) = (d.year, d.month, d.day);
    let mut out = match d.time {
        None => vec![
            format!("{m}/{day}/{y}"),
            format!("{m:02}{day:02}{y:04}"),
            format!("{} {day}, {y}", month_abbrev(m)),
            format!("{y:04}-{m:02}-{day:02}"),
        ],
        Some((h, mi, s)) => {
            let mut alts = vec![
                format!("{m}/{day}/{y} {h}:{mi:02}:{s:02}"),
                format!("{y:04}-{m:02}-{day:02}T{h:02}:{mi:02}:{s:02}"),
            ];
            if s == 0 {
                alts.push(format!("{m}/{day}/{y} {h}:{mi:02}"));
            }
            alts
        }
    };
    out.retain(|a| a != v.trim());
    out
}

fn with_thousands(v: &str) -> Option<String> {
    let v = v.trim();
    let (sign, rest) = v.strip_prefix('-').map_or(("", v), |r| ("-", r));
    let (int, frac) = rest.split_once('.').map_or((rest, None), |(a, b)| (a, Some(b)));
    if int.len() <= 3 || !int.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let mut grouped = String::new();
    for (i, c) in int.chars().enumerate() {
        if i > 0 && (int.len() - i) % 3 == 0 {
            grouped.push(',');
        }
        grouped.push(c);
    }
    Some(match frac {
        Some(f) => format!("{sign}{grouped}.{f}"),
        None => format!("{sign}{grouped}"),
    })
}

fn number_alternates(v: &str) -> Vec<String> {
    if parse_number(v).is_none() {
        return Vec::new();
    }
    let v = v.trim();
    let mut out: Vec<String> = with_thousands(v).into_iter().collect();
    if v.contains('.') {
        out.push(format!("{v}0"));
    } else if v.bytes().all(|b| b.is_ascii_digit() || b == b'-') {
        out.push(format!("{v}.0"));
    }
    out
}

/// Guess how a canonical value was canonicalized: ISO dates and plain
/// decimals are recognised, anything else is left alone.
pub fn infer_kind(v: &str) -> CanonKind {
    if parse_date(v).is_some_and(|d| d.iso() == v) {
        CanonKind::Date
    } else if parse_number(v).is_some_and(|d| render_decimal(d) == v) {
        CanonKind::Number
    } else {
        CanonKind::None
    }
}

/// An alternate surface form of `v` that canonicalizes (under `kind`) to the
/// same string as `v`, or `None` when no rule applies.
pub fn reformat_value<R: Rng>(v: &str, kind: &CanonKind, dicts: &Dictionaries, rng: &mut R) -> Option<String> {
    let alts = match kind {
        CanonKind::Date => date_alternates(v),
        CanonKind::Number => number_alternates(v),
        CanonKind::Dictionary(name) => {
            let dict = dicts.get(name)?;
            dict.group_of(v)
                .map(|g| g.iter().filter(|t| t.trim() != v.trim()).cloned().collect())
                .unwrap_or_default()
        }
        CanonKind::None => Vec::new(),
    };
    alts.choose(rng).cloned()
}

/// Random composition of `d` into `k` parts summing exactly to `d`, at the
/// scale of `d`.
pub fn partition<R: Rng>(d: Decimal, k: usize, rng: &mut R) -> Vec<Decimal> {
    let scale = d.scale();
    let units = d.mantissa();
    let total = units.unsigned_abs();
    let mut cuts: Vec<u128> = (0..k.saturating_sub(1)).map(|_| rng.gen_range(0..=total)).collect();
    cuts.sort_unstable();
    cuts.push(total);
    let mut prev = 0u128;
    cuts.into_iter()
        .map(|c| {
            let part = (c - prev) as i128;
            prev = c;
            Decimal::from_i128_with_scale(if units < 0 { -part } else { part }, scale)
        })
        .collect()
}

fn rename_in(names: &mut [String], map: &BTreeMap<String, String>) {
    for n in names {
        if let Some(new) = map.get(&norm(n)) {
            *n = new.clone();
        }
    }
}

/// Rename table columns (matched case-insensitively) and carry the renames
/// into the descriptor.
pub fn rename_columns(
    table: &RawTable,
    desc: &SourceDescriptor,
    map: &BTreeMap<String, String>,
) -> (RawTable, SourceDescriptor) {
    let map: BTreeMap<String, String> = map.iter().map(|(k, v)| (norm(k), v.clone())).collect();
    let mut t = table.clone();
    rename_in(&mut t.header, &map);
    let mut d = desc.clone();
    rename_in(&mut d.key_columns, &map);
    for g in &mut d.supercell_groups {
        rename_in(g, &map);
    }
    d.canonicalizers = d
        .canonicalizers
        .into_iter()
        .map(|(k, v)| (map.get(&norm(&k)).cloned().unwrap_or(k), v))
        .collect();
    if let Some(c) = &mut d.child_key_column {
        rename_in(std::slice::from_mut(c), &map);
    }
    (t, d)
}

/// Non-key value columns of a keyed table, in header order.
pub fn value_columns(table: &RawTable, desc: &SourceDescriptor) -> Vec<String> {
    let keys: BTreeSet<String> = desc
        .key_columns
        .iter()
        .chain(&desc.child_key_column)
        .map(|k| norm(k))
        .collect();
    table.header.iter().filter(|h| !keys.contains(&norm(h))).cloned().collect()
}

/// Seeded column permutation.
pub fn reorder_columns(table: &RawTable, seed: u64) -> RawTable {
    let mut order: Vec<usize> = (0..table.header.len()).collect();
    order.shuffle(&mut rng_for(seed));
    permute_columns(table, &order)
}

pub fn permute_columns(table: &RawTable, order: &[usize]) -> RawTable {
    RawTable::new(
        order.iter().map(|&i| table.header[i].clone()).collect(),
        table
            .rows
            .iter()
            .map(|r| order.iter().map(|&i| r.get(i).cloned().unwrap_or_default()).collect())
            .collect(),
    )
}

/// Rewrite each non-missing field with probability `rate` to an alternate
/// form under its column's canonicalizer. Returns the number of rewrites.
pub fn reformat_table<R: Rng>(
    table: &RawTable,
    desc: &SourceDescriptor,
    rate: f64,
    dicts: &Dictionaries,
    rng: &mut R,
) -> (RawTable, usize) {
    let kinds: Vec<CanonKind> = table.header.iter().map(|h| desc.canon_for(h)).collect();
    let mut t = table.clone();
    let mut changed = 0;
    for row in &mut t.rows {
        for (v, kind) in row.iter_mut().zip(&kinds) {
            if is_missing(v) || rate == 0.0 || !rng.gen_bool(rate) {
                continue;
            }
            if let Some(alt) = reformat_value(v, kind, dicts, rng) {
                *v = alt;
                changed += 1;
            }
        }
    }
    (t, changed)
}

/// Append `n` irrelevant numeric columns.
pub fn add_noise_columns<R: Rng>(table: &RawTable, n: usize, rng: &mut R) -> RawTable {
    let present: BTreeSet<String> = table.header.iter().map(|h| norm(h)).collect();
    let mut names: Vec<String> = NOISE_COLUMNS
        .iter()
        .filter(|c| !present.contains(**c))
        .map(|c| c.to_string())
        .collect();
    names.shuffle(rng);
    let mut i = 0;
    while names.len() < n {
        names.push(format!("extra_{i}"));
        i += 1;
    }
    names.truncate(n);
    let mut t = table.clone();
    t.header.extend(names);
    for row in &mut t.rows {
        for _ in 0..n {
            row.push(random_number(rng));
        }
    }
    t
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpansionReport {
    pub eligible_rows: usize,
    pub rows_expanded: usize,
    pub child_rows: usize,
    /// Selected rows left unexpanded because a value was not numeric.
    pub non_numeric_rows: usize,
}

/// Split a fraction of rows into child rows keyed by an extra child column
/// whose numeric values partition the parent's.
pub fn expand_table<R: Rng>(
    table: &RawTable,
    desc: &SourceDescriptor,
    hierarchy: &KeyHierarchy,
    parent_column: &str,
    rate: f64,
    dicts: &Dictionaries,
    rng: &mut R,
) -> Result<(RawTable, SourceDescriptor, ExpansionReport), PerturbError> {
    let parent = table
        .column_index(parent_column)
        .ok_or_else(|| PerturbError::MissingColumn(parent_column.to_string()))?;
    let parent_kind = desc.canon_for(parent_column);
    let keys: BTreeSet<usize> = desc.key_columns.iter().filter_map(|k| table.column_index(k)).collect();
    let mut report = ExpansionReport::default();

    let mut eligible = Vec::new();
    for (r, row) in table.rows.iter().enumerate() {
        if is_missing(&row[parent]) {
            continue;
        }
        let (canon, _) = try_canonicalize(&row[parent], &parent_kind, dicts)?;
        if hierarchy.children.get(&canon).is_some_and(|c| c.len() >= 2) {
            eligible.push((r, canon));
        }
    }
    report.eligible_rows = eligible.len();
    eligible.shuffle(rng);
    eligible.truncate(rename_count(report.eligible_rows, rate));
    let selected: HashMap<usize, String> = eligible.into_iter().collect();

    let mut header = table.header.clone();
    header.push(hierarchy.child_attribute.clone());
    let mut rows = Vec::new();
    for (r, row) in table.rows.iter().enumerate() {
        let mut plain = row.clone();
        plain.push(String::new());
        let Some(canon) = selected.get(&r) else {
            rows.push(plain);
            continue;
        };
        let values: Option<Vec<(usize, Option<Decimal>)>> = (0..row.len())
            .filter(|c| !keys.contains(c))
            .map(|c| {
                if is_missing(&row[c]) {
                    Some((c, None))
                } else {
                    parse_number(&row[c]).map(|d| (c, Some(d)))
                }
            })
            .collect();
        let Some(values) = values else {
            report.non_numeric_rows += 1;
            rows.push(plain);
            continue;
        };
        let children = &hierarchy.children[canon];
        let k = rng.gen_range(2..=children.len().min(3));
        let picked: Vec<&String> = children.choose_multiple(rng, k).collect();
        let mut parts: Vec<Vec<String>> = vec![plain.clone(); k];
        for (c, d) in values {
            let Some(d) = d else { continue };
            for (child, p) in parts.iter_mut().zip(partition(d, k, rng)) {
                child[c] = render_decimal(p);
            }
        }
        for (child, name) in parts.iter_mut().zip(picked) {
            *child.last_mut().unwrap() = name.clone();
        }
        report.rows_expanded += 1;
        report.child_rows += k;
        rows.extend(parts);
    }
    let mut d = desc.clone();
    d.child_key_column = Some(hierarchy.child_attribute.clone());
    Ok((RawTable::new(header, rows), d, report))
}

/// Pivot a keyed table on `axis`: one table per value column, with the
/// remaining keys as row keys and the axis values as column headers.
pub fn pivot_table(
    table: &RawTable,
    desc: &SourceDescriptor,
    axis: &str,
) -> Result<Vec<(RawTable, SourceDescriptor)>, PerturbError> {
    if desc.format != SourceFormat::Csv {
        return Err(PerturbError::InvalidPlan("only keyed csv tables can be pivoted".into()));
    }
    let key_idx: Vec<usize> = desc
        .key_columns
        .iter()
        .map(|k| table.column_index(k).ok_or_else(|| PerturbError::MissingColumn(k.clone())))
        .collect::<Result<_, _>>()?;
    let axis_idx = table
        .column_index(axis)
        .filter(|i| key_idx.contains(i))
        .ok_or_else(|| PerturbError::MissingColumn(axis.to_string()))?;
    let rest: Vec<usize> = key_idx.iter().copied().filter(|&i| i != axis_idx).collect();

    let mut row_keys: Vec<Vec<String>> = Vec::new();
    let mut row_of: HashMap<Vec<String>, usize> = HashMap::new();
    let mut axis_values: Vec<String> = Vec::new();
    let mut col_of: HashMap<String, usize> = HashMap::new();
    let mut grid: HashMap<(usize, usize), usize> = HashMap::new();
    for (r, row) in table.rows.iter().enumerate() {
        if key_idx.iter().any(|&k| is_missing(&row[k])) {
            continue;
        }
        let rk: Vec<String> = rest.iter().map(|&i| row[i].clone()).collect();
        let ri = *row_of.entry(rk.clone()).or_insert_with(|| {
            row_keys.push(rk.clone());
            row_keys.len() - 1
        });
        let av = row[axis_idx].clone();
        let ci = *col_of.entry(av.clone()).or_insert_with(|| {
            axis_values.push(av.clone());
            axis_values.len() - 1
        });
        if grid.insert((ri, ci), r).is_some() {
            return Err(PerturbError::DuplicateCellOnPivot { key: rk, axis: av });
        }
    }

    let mut out = Vec::new();
    for v in value_columns(table, desc) {
        let vi = table.column_index(&v).unwrap();
        let mut header: Vec<String> = rest.iter().map(|&i| table.header[i].clone()).collect();
        header.extend(axis_values.iter().cloned());
        let rows = row_keys
            .iter()
            .enumerate()
            .map(|(ri, rk)| {
                let mut out = rk.clone();
                out.extend((0..axis_values.len()).map(|ci| {
                    grid.get(&(ri, ci)).map(|&r| table.rows[r][vi].clone()).unwrap_or_default()
                }));
                out
            })
            .collect();
        let mut d = desc.clone();
        d.format = SourceFormat::PivotedCsv;
        d.key_columns = rest.iter().map(|&i| table.header[i].clone()).collect();
        d.supercell_groups = Vec::new();
        d.child_key_column = None;
        d.pivot = Some(PivotSpec {
            pivot_axis_name: table.header[axis_idx].clone(),
            value_attr_name: v.clone(),
        });
        out.push((RawTable::new(header, rows), d));
    }
    Ok(out)
}

fn random_number<R: Rng>(rng: &mut R) -> String {
    format!("{}.{:02}", rng.gen_range(0..1000), rng.gen_range(0..100))
}

/// Originals followed by perturbed copies. A copy is emitted only when at
/// least one operation changed the sample; labels are preserved except for
/// key-expanded samples, which take the rollup mode.
pub fn augment(
    samples: &[LabeledSample],
    plan: &PerturbationPlan,
    spec: &MappingSpec,
    dicts: &Dictionaries,
) -> Result<Augmented, PerturbError> {
    plan.validate()?;
    let mut out = Augmented {
        samples: samples.to_vec(),
        log: (0..samples.len())
            .map(|i| PerturbLogEntry {
                sample_id: i,
                derived_from: None,
                ops_applied: Vec::new(),
            })
            .collect(),
        stats: AugmentStats::default(),
    };
    let attrs: Vec<String> = samples
        .iter()
        .flat_map(|s| s.cell.attributes.iter().cloned())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    out.stats.attributes_total = attrs.len();
    if plan.is_noop() {
        return Ok(out);
    }
    let synonyms = match &plan.synonym_dict {
        Some(name) => Some(dicts.require(name)?),
        None => None,
    };
    let q = spec.target.key_arity();
    let mut rng = rng_for(plan.seed);
    let push = |out: &mut Augmented, sample: LabeledSample, from: usize, ops: Vec<PerturbOp>| {
        out.log.push(PerturbLogEntry {
            sample_id: out.samples.len(),
            derived_from: Some(from),
            ops_applied: ops,
        });
        out.samples.push(sample);
    };

    // Per attribute: synonym siblings and the next one to use. Each copy
    // takes the next sibling in turn from a random start, so a few copies
    // cover the whole group.
    let mut rotation: BTreeMap<String, (Vec<String>, usize)> = BTreeMap::new();
    for a in &attrs {
        let siblings: Vec<String> = synonyms
            .map(|d| d.siblings(a).into_iter().map(norm).collect())
            .unwrap_or_default();
        if !siblings.is_empty() {
            let start = rng.gen_range(0..siblings.len());
            rotation.insert(a.clone(), (siblings, start));
        }
    }
    for copy in 0..plan.copies {
        let mut chosen: Vec<&String> = attrs.iter().collect();
        chosen.shuffle(&mut rng);
        chosen.truncate(rename_count(attrs.len(), plan.attr_rename_rate));
        let mut renames: BTreeMap<String, String> = BTreeMap::new();
        for a in chosen {
            let new = match rotation.get_mut(a) {
                Some((siblings, next)) => {
                    let n = siblings[*next % siblings.len()].clone();
                    *next += 1;
                    n
                }
                None => norm(&rename_target(a, None, &mut rng)),
            };
            renames.insert(a.clone(), new);
        }
        if copy == 0 {
            out.stats.attributes_renamed = renames.len();
        }
        for (i, s) in samples.iter().enumerate() {
            let desc = spec.descriptor(&s.cell.source_id);
            let mut cell = s.cell.clone();
            let mut ops = Vec::new();
            for a in &mut cell.attributes {
                if let Some(new) = renames.get(a) {
                    *a = new.clone();
                    if !ops.contains(&PerturbOp::Rename) {
                        ops.push(PerturbOp::Rename);
                    }
                }
            }
            if plan.char_noise_rate > 0.0 {
                let mut noised = false;
                for a in &mut cell.attributes {
                    let (n, changed) = noise_phrase(a, plan.char_noise_rate, &mut rng);
                    if changed && !n.trim().is_empty() {
                        *a = n;
                        noised = true;
                    }
                }
                if noised {
                    ops.push(PerturbOp::CharNoise);
                }
            }
            if plan.value_reformat_rate > 0.0 {
                let mut reformatted = false;
                for (a, v) in s.cell.attributes.iter().zip(cell.values.iter_mut()) {
                    if !rng.gen_bool(plan.value_reformat_rate) {
                        continue;
                    }
                    let kind = match desc.map(|d| d.canon_for(a)) {
                        Some(k) if k != CanonKind::None => k,
                        _ => infer_kind(v),
                    };
                    if let Some(alt) = reformat_value(v, &kind, dicts, &mut rng) {
                        *v = alt;
                        reformatted = true;
                    }
                }
                if reformatted {
                    ops.push(PerturbOp::Reformat);
                }
            }
            let perturbed = cell.clone();
            if !ops.is_empty() {
                let sample = LabeledSample {
                    feature: render_feature(&cell),
                    label: s.label.clone(),
                    origin: s.origin.clone(),
                    cell,
                };
                push(&mut out, sample, i, ops.clone());
                out.stats.perturbed_samples += 1;
            }

            if plan.key_expansion_rate > 0.0 && rng.gen_bool(plan.key_expansion_rate) {
                let base = LabeledSample {
                    cell: perturbed.clone(),
                    ..s.clone()
                };
                match expand_sample(&base, spec, &mut rng) {
                    Expansion::Children(children) => {
                        out.stats.expanded_samples += 1;
                        let mut eops = ops.clone();
                        eops.push(PerturbOp::ExpandKeys);
                        for c in children {
                            push(&mut out, c, i, eops.clone());
                        }
                    }
                    Expansion::NonNumeric => out.stats.non_numeric_expansions += 1,
                    Expansion::NotApplicable => {}
                }
            }

            if plan.pivot_enabled && s.cell.width() > 1 && !s.label.is_discard() {
                for j in 0..s.cell.width() {
                    let cell = SuperCell::new(
                        s.cell.source_id.clone(),
                        s.cell.keys.clone(),
                        vec![perturbed.attributes[j].clone()],
                        vec![perturbed.values[j].clone()],
                        s.cell.row_ordinal,
                    );
                    let mut label = s.label.clone();
                    label.attributes = vec![s.label.attributes[j].clone()];
                    if label.is_discard() {
                        label = TargetPosition::discard(q, 1);
                    }
                    let sample = LabeledSample {
                        feature: render_feature(&cell),
                        label,
                        origin: s.origin.clone(),
                        cell,
                    };
                    let mut pops = ops.clone();
                    pops.push(PerturbOp::Pivot);
                    push(&mut out, sample, i, pops);
                }
            }
        }

        if plan.add_remove_noise_columns > 0 && !samples.is_empty() {
            let present: BTreeSet<&str> = attrs.iter().map(String::as_str).collect();
            let mut names: Vec<&str> = NOISE_COLUMNS.iter().copied().filter(|c| !present.contains(c)).collect();
            names.shuffle(&mut rng);
            names.truncate(plan.add_remove_noise_columns);
            for name in names {
                for _ in 0..NOISE_SAMPLES_PER_COLUMN.min(samples.len()) {
                    let i = rng.gen_range(0..samples.len());
                    let base = &samples[i].cell;
                    let mut keys = base.keys.clone();
                    if plan.key_expansion_rate > 0.0 && rng.gen_bool(plan.key_expansion_rate) {
                        if let Some(child) = child_key(&samples[i], spec, &mut rng) {
                            keys.push(child);
                        }
                    }
                    let cell = SuperCell::new(
                        base.source_id.clone(),
                        keys,
                        vec![name.to_string()],
                        vec![random_number(&mut rng)],
                        base.row_ordinal,
                    );
                    let sample = LabeledSample {
                        feature: render_feature(&cell),
                        label: TargetPosition::discard(q, 1),
                        origin: samples[i].origin.clone(),
                        cell,
                    };
                    push(&mut out, sample, i, vec![PerturbOp::NoiseColumn]);
                    out.stats.noise_samples += 1;
                }
            }
        }
    }
    Ok(out)
}

enum Expansion {
    Children(Vec<LabeledSample>),
    NonNumeric,
    NotApplicable,
}

/// A random child name for the sample's parent key, when the sample is at
/// its source's declared key arity and the hierarchy knows the parent.
fn child_key<R: Rng>(s: &LabeledSample, spec: &MappingSpec, rng: &mut R) -> Option<String> {
    let h = spec.key_hierarchy.as_ref()?;
    let declared = spec.descriptor(&s.cell.source_id)?.key_arity();
    if declared != s.cell.keys.len() {
        return None;
    }
    let component = spec
        .mapping(&s.cell.source_id)?
        .key_map
        .iter()
        .find(|e| e.target == h.parent_attribute)?
        .component;
    h.children.get(&s.cell.keys[component])?.choose(rng).map(|c| norm(c))
}

fn expand_sample<R: Rng>(s: &LabeledSample, spec: &MappingSpec, rng: &mut R) -> Expansion {
    let Some(h) = &spec.key_hierarchy else { return Expansion::NotApplicable };
    if s.label.is_discard() {
        return Expansion::NotApplicable;
    }
    let declared = spec.descriptor(&s.cell.source_id).map(|d| d.key_arity());
    if declared != Some(s.cell.keys.len()) {
        return Expansion::NotApplicable;
    }
    let Some(component) = spec
        .mapping(&s.cell.source_id)
        .and_then(|m| m.key_map.iter().find(|e| e.target == h.parent_attribute))
        .map(|e| e.component)
    else {
        return Expansion::NotApplicable;
    };
    let Some(children) = h.children.get(&s.cell.keys[component]).filter(|c| c.len() >= 2) else {
        return Expansion::NotApplicable;
    };
    let Some(values) = s.cell.values.iter().map(|v| parse_number(v)).collect::<Option<Vec<_>>>() else {
        return Expansion::NonNumeric;
    };
    let k = rng.gen_range(2..=children.len().min(3));
    let picked: Vec<&String> = children.choose_multiple(rng, k).collect();
    let splits: Vec<Vec<Decimal>> = values.iter().map(|d| partition(*d, k, rng)).collect();
    let mut label = s.label.clone();
    label.agg_mode = h.rollup;
    Expansion::Children(
        picked
            .into_iter()
            .enumerate()
            .map(|(j, child)| {
                let mut keys = s.cell.keys.clone();
                keys.push(norm(child));
                let cell = SuperCell::new(
                    s.cell.source_id.clone(),
                    keys,
                    s.cell.attributes.clone(),
                    splits.iter().map(|p| render_decimal(p[j])).collect(),
                    s.cell.row_ordinal,
                );
                LabeledSample {
                    feature: render_feature(&cell),
                    label: label.clone(),
                    origin: s.origin.clone(),
                    cell,
                }
            })
            .collect(),
    )
}

pub fn write_log<W: std::io::Write>(log: &[PerturbLogEntry], w: W) -> Result<(), crate::model::ModelError> {
    crate::model::write_json_lines(log, w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{canonicalize, decompose};

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    fn syn() -> SynonymDictionary {
        SynonymDictionary::new(vec![
            s(&["longitude", "long_"]),
            s(&["province/state", "province_state"]),
        ])
        .unwrap()
    }

    #[test]
    fn rename_uses_synonym_sibling() {
        let mut rng = rng_for(1);
        assert_eq!(rename_target("longitude", Some(&syn()), &mut rng), "long_");
        assert_eq!(rename_target("Province/State", Some(&syn()), &mut rng), "province_state");
        let other = rename_target("confirmed", Some(&syn()), &mut rng);
        assert_ne!(other, "confirmed");
    }

    #[test]
    fn char_noise_is_one_edit() {
        let mut rng = rng_for(3);
        for _ in 0..200 {
            let n = char_noise("confirmed", &mut rng);
            assert_ne!(n, "confirmed");
            let len = n.chars().count();
            assert!(len == 8 || len == 9);
            if len == 9 {
                assert_eq!(n.chars().zip("confirmed".chars()).filter(|(a, b)| a != b).count(), 1);
            }
        }
    }

    #[test]
    fn rename_plan_exact_count() {
        let names: Vec<String> = (0..12).map(|i| format!("c{i}")).collect();
        let mut rng = rng_for(9);
        let m = rename_plan(&names, rename_count(12, 0.583), None, &mut rng);
        assert_eq!(m.len(), 7);
        assert!(rename_plan(&names, 0, None, &mut rng).is_empty());
    }

    #[test]
    fn reformat_examples() {
        let d = Dictionaries::new().with(
            "states",
            SynonymDictionary::new(vec![s(&["arizona", "AZ"])]).unwrap(),
        );
        let mut seen = BTreeSet::new();
        let mut rng = rng_for(5);
        for _ in 0..50 {
            seen.insert(reformat_value("2020-01-22 17:00:00", &CanonKind::Date, &d, &mut rng).unwrap());
        }
        assert!(seen.contains("1/22/2020 17:00"));
        let kind = CanonKind::Dictionary("states".into());
        assert_eq!(reformat_value("arizona", &kind, &d, &mut rng).unwrap(), "AZ");
        assert_eq!(reformat_value("x", &CanonKind::None, &d, &mut rng), None);
        let n = reformat_value("1234567", &CanonKind::Number, &d, &mut rng).unwrap();
        assert_eq!(canonicalize(&n, &CanonKind::Number, &d).unwrap(), "1234567");
    }

    #[test]
    fn partition_sums_exactly() {
        let mut rng = rng_for(2);
        let p = partition(Decimal::from(10), 2, &mut rng);
        assert_eq!(p.iter().sum::<Decimal>(), Decimal::from(10));
        let d: Decimal = "-33.75".parse().unwrap();
        assert_eq!(partition(d, 3, &mut rng).iter().sum::<Decimal>(), d);
    }

    fn table() -> (RawTable, SourceDescriptor) {
        let t = RawTable::from_csv_str("date,state,confirmed,deaths\nd1,az,10,1\nd1,oh,4,0\nd2,az,12,2\n").unwrap();
        (t, SourceDescriptor::csv("jhu", &["state", "date"]))
    }

    fn triples(cells: &[SuperCell]) -> Vec<(Vec<String>, String, String)> {
        let mut v: Vec<_> = cells
            .iter()
            .flat_map(|c| {
                c.attributes
                    .iter()
                    .zip(&c.values)
                    .map(|(a, x)| (c.keys.clone(), a.clone(), x.clone()))
                    .collect::<Vec<_>>()
            })
            .collect();
        v.sort();
        v
    }

    #[test]
    fn pivot_then_decompose_matches_original() {
        let (t, desc) = table();
        let d = Dictionaries::new();
        let orig = decompose(&t, &desc, &d).unwrap().cells;
        let pivots = pivot_table(&t, &desc, "date").unwrap();
        assert_eq!(pivots.len(), 2);
        assert_eq!(pivots[0].0.to_csv_string(), "state,d1,d2\naz,10,12\noh,4,\n");
        let cells: Vec<SuperCell> = pivots
            .iter()
            .flat_map(|(pt, pd)| decompose(pt, pd, &d).unwrap().cells)
            .collect();
        assert_eq!(triples(&cells), triples(&orig));
    }

    #[test]
    fn pivot_single_row_and_duplicates() {
        let t = RawTable::from_csv_str("k,a,v\n1,x,5\n").unwrap();
        let desc = SourceDescriptor::csv("t", &["k", "a"]);
        let p = pivot_table(&t, &desc, "a").unwrap();
        assert_eq!(p[0].0.to_csv_string(), "k,x\n1,5\n");
        let t = RawTable::from_csv_str("k,a,v\n1,x,5\n1,x,6\n").unwrap();
        assert!(matches!(
            pivot_table(&t, &desc, "a"),
            Err(PerturbError::DuplicateCellOnPivot { .. })
        ));
    }

    #[test]
    fn reorder_preserves_cells() {
        let (t, desc) = table();
        let d = Dictionaries::new();
        let orig = decompose(&t, &desc, &d).unwrap().cells;
        let rev = permute_columns(&t, &[3, 2, 1, 0]);
        assert_eq!(decompose(&rev, &desc, &d).unwrap().cells, orig);
        assert_eq!(permute_columns(&t, &[0, 1, 2, 3]), t);
        assert_eq!(reorder_columns(&t, 4), reorder_columns(&t, 4));
    }

    #[test]
    fn expansion_conserves_sums() {
        let (t, desc) = table();
        let h = KeyHierarchy {
            parent_attribute: "state".into(),
            child_attribute: "admin2".into(),
            children: BTreeMap::from([("az".to_string(), s(&["maricopa county", "pima county", "yuma county"]))]),
            rollup: crate::model::AggMode::Sum,
        };
        let d = Dictionaries::new();
        let (et, ed, rep) = expand_table(&t, &desc, &h, "state", 1.0, &d, &mut rng_for(1)).unwrap();
        assert_eq!(rep.eligible_rows, 2);
        assert_eq!(rep.rows_expanded, 2);
        let cells = decompose(&et, &ed, &d).unwrap().cells;
        let total: Decimal = cells
            .iter()
            .filter(|c| c.keys[0] == "az" && c.attributes[0] == "confirmed")
            .map(|c| parse_number(&c.values[0]).unwrap())
            .sum();
        assert_eq!(total, Decimal::from(22));
        assert!(cells.iter().any(|c| c.keys.len() == 3));
        let (same, _, rep) = expand_table(&t, &desc, &h, "state", 0.0, &d, &mut rng_for(1)).unwrap();
        assert_eq!(rep.rows_expanded, 0);
        assert_eq!(decompose(&same, &ed, &d).unwrap().cells, decompose(&t, &desc, &d).unwrap().cells);
    }

    #[test]
    fn rename_columns_updates_descriptor() {
        let (t, mut desc) = table();
        desc.supercell_groups = vec![s(&["confirmed", "deaths"])];
        let map = BTreeMap::from([("Confirmed".to_string(), "cases".to_string())]);
        let (rt, rd) = rename_columns(&t, &desc, &map);
        assert_eq!(rt.header, s(&["date", "state", "cases", "deaths"]));
        assert_eq!(rd.supercell_groups[0], s(&["cases", "deaths"]));
    }

    #[test]
    fn noise_columns_appended() {
        let (t, _) = table();
        let n = add_noise_columns(&t, 2, &mut rng_for(0));
        assert_eq!(n.header.len(), 6);
        assert!(n.rows.iter().all(|r| r.len() == 6));
    }

    #[test]
    fn plan_validation_and_json() {
        let mut p = PerturbationPlan::none(1);
        assert!(p.is_noop());
        p.char_noise_rate = 1.5;
        assert!(p.validate().is_err());
        let p: PerturbationPlan = serde_json::from_str(r#"{"seed": 3, "attr_rename_rate": 0.5}"#).unwrap();
        assert_eq!(p.copies, 1);
        assert!(serde_json::from_str::<PerturbationPlan>(r#"{"seed": 3, "bogus": 1}"#).is_err());
    }
}
