//! Declarative integration specs, the deterministic oracle integrator, and
//! labeled training data derived from them.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assemble::{build_table, compare_tables, AssembleError, FinalTable, TableAgreement, TargetTable};
use crate::ingest::{norm, try_canonicalize, CanonKind, Dictionaries, IngestError, SourceDescriptor};
use crate::model::{
    render_feature, AggMode, FeatureSentence, KeyEntry, ModelError, SuperCell, TargetPosition, TargetSchema,
};

pub const DISCARD: &str = "DISCARD";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MappingError {
    #[error("spec violation: {0}")]
    SpecViolation(String),
    #[error("source {source_id} row {row}: {reason}")]
    KeyResolutionFailure {
        source_id: String,
        row: u64,
        reason: String,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("io: {0}")]
    Io(String),
}

/// Maps one source key component onto a target key attribute.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyMapEntry {
    pub component: usize,
    pub target: String,
    #[serde(default)]
    pub canon: CanonKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceMapping {
    pub source_id: String,
    pub key_map: Vec<KeyMapEntry>,
    /// Target key attributes this source does not carry; written as WILDCARD.
    #[serde(default)]
    pub broadcast: Vec<String>,
    /// Source attribute → target attribute or `"DISCARD"`. Unlisted attributes
    /// are discarded.
    #[serde(default)]
    pub attr_map: BTreeMap<String, String>,
    #[serde(default)]
    pub agg_map: BTreeMap<String, AggMode>,
}

/// Parent/child key relation used by key expansion (e.g. state → counties).
/// Cells carrying one more key component than their source declares are
/// child-level cells and roll up into the parent row with `rollup`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyHierarchy {
    pub parent_attribute: String,
    /// Column name used for the child key when expanding tables.
    #[serde(default = "default_child_attribute")]
    pub child_attribute: String,
    #[serde(default)]
    pub children: BTreeMap<String, Vec<String>>,
    #[serde(default = "default_rollup")]
    pub rollup: AggMode,
}

fn default_child_attribute() -> String {
    "admin2".into()
}

fn default_rollup() -> AggMode {
    AggMode::Sum
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MappingSpec {
    pub target: TargetSchema,
    pub sources: Vec<SourceDescriptor>,
    pub mappings: Vec<SourceMapping>,
    #[serde(default)]
    pub key_hierarchy: Option<KeyHierarchy>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Origin {
    pub source_id: String,
    pub row_ordinal: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub feature: FeatureSentence,
    pub label: TargetPosition,
    pub origin: Origin,
    /// The originating super cell, needed to resolve COPY labels.
    pub cell: SuperCell,
}

/// Super cells per source id.
pub type Corpora = BTreeMap<String, Vec<SuperCell>>;

impl MappingSpec {
    pub fn from_json(text: &str) -> Result<Self, MappingError> {
        serde_json::from_str(text).map_err(|e| MappingError::SpecViolation(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, MappingError> {
        let text = std::fs::read_to_string(path).map_err(|e| MappingError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    pub fn descriptor(&self, source_id: &str) -> Option<&SourceDescriptor> {
        self.sources.iter().find(|d| d.source_id == source_id)
    }

    pub fn mapping(&self, source_id: &str) -> Option<&SourceMapping> {
        self.mappings.iter().find(|m| m.source_id == source_id)
    }

    /// COPY slots a label codec needs: the widest key tuple any cell can carry.
    pub fn copy_slots(&self) -> usize {
        let widest = self.sources.iter().map(|d| d.key_arity()).max().unwrap_or(0);
        widest + usize::from(self.key_hierarchy.is_some())
    }

    pub fn validate(&self, dicts: &Dictionaries) -> Result<(), MappingError> {
        let bad = |m: String| Err(MappingError::SpecViolation(m));
        self.target.validate()?;
        let mut ids = BTreeSet::new();
        for d in &self.sources {
            d.validate(dicts)?;
            if !ids.insert(d.source_id.as_str()) {
                return bad(format!("duplicate source {}", d.source_id));
            }
        }
        let mut mapped = BTreeSet::new();
        for m in &self.mappings {
            let Some(desc) = self.descriptor(&m.source_id) else {
                return bad(format!("mapping for undeclared source {}", m.source_id));
            };
            if !mapped.insert(m.source_id.as_str()) {
                return bad(format!("source {} mapped twice", m.source_id));
            }
            let mut covered = BTreeSet::new();
            for e in &m.key_map {
                if e.component >= desc.key_arity() {
                    return bad(format!(
                        "source {}: key component {} out of range (arity {})",
                        m.source_id,
                        e.component,
                        desc.key_arity()
                    ));
                }
                if !self.target.is_key(&e.target) {
                    return bad(format!("source {}: {} is not a target key", m.source_id, e.target));
                }
                if let CanonKind::Dictionary(name) = &e.canon {
                    dicts.require(name)?;
                }
                if !covered.insert(e.target.as_str()) {
                    return bad(format!("source {}: target key {} mapped twice", m.source_id, e.target));
                }
            }
            for b in &m.broadcast {
                if !self.target.is_key(b) || !covered.insert(b.as_str()) {
                    return bad(format!("source {}: bad broadcast attribute {b}", m.source_id));
                }
            }
            if let Some(missing) = self.target.key_attributes.iter().find(|k| !covered.contains(k.as_str())) {
                return bad(format!("source {}: target key {missing} not covered", m.source_id));
            }
            let attrs: BTreeSet<String> = m.attr_map.keys().map(|a| norm(a)).collect();
            for t in m.attr_map.values() {
                if t != DISCARD && !self.target.has_attribute(t) {
                    return bad(format!("source {}: unknown target attribute {t}", m.source_id));
                }
            }
            for a in m.agg_map.keys() {
                if !attrs.contains(&norm(a)) {
                    return bad(format!("source {}: agg_map attribute {a} not in attr_map", m.source_id));
                }
            }
        }
        if let Some(h) = &self.key_hierarchy {
            if !self.target.is_key(&h.parent_attribute) {
                return bad(format!("hierarchy parent {} is not a target key", h.parent_attribute));
            }
        }
        Ok(())
    }

    /// The labeled position of one super cell, with COPY markers where the
    /// target key value equals the source component verbatim.
    pub fn position_for(&self, cell: &SuperCell, dicts: &Dictionaries) -> Result<TargetPosition, MappingError> {
        let q = self.target.key_arity();
        let width = cell.width();
        let Some(m) = self.mapping(&cell.source_id) else {
            return Ok(TargetPosition::discard(q, width));
        };
        let attr_target = |a: &str| -> Option<&String> {
            m.attr_map
                .iter()
                .find(|(k, _)| norm(k) == norm(a))
                .map(|(_, v)| v)
                .filter(|v| v.as_str() != DISCARD)
        };
        let attributes: Vec<Option<String>> = cell.attributes.iter().map(|a| attr_target(a).cloned()).collect();
        if attributes.iter().all(Option::is_none) {
            return Ok(TargetPosition::discard(q, width));
        }

        let declared = self.descriptor(&cell.source_id).map_or(cell.keys.len(), |d| d.key_arity());
        let fail = |reason: String| MappingError::KeyResolutionFailure {
            source_id: cell.source_id.clone(),
            row: cell.row_ordinal,
            reason,
        };
        let expanded = match cell.keys.len() {
            n if n == declared => false,
            n if n == declared + 1 && self.key_hierarchy.is_some() => true,
            n => return Err(fail(format!("{n} key components, source declares {declared}"))),
        };

        let mut keys = Vec::with_capacity(q);
        for (l, target) in self.target.key_attributes.iter().enumerate() {
            if m.broadcast.contains(target) {
                keys.push(KeyEntry::Wildcard);
                continue;
            }
            let e = m.key_map.iter().find(|e| &e.target == target).expect("validated coverage");
            let raw = &cell.keys[e.component];
            let (value, _) = try_canonicalize(raw, &e.canon, dicts)?;
            if !self.target.domain(l).admits(&value) {
                return Err(fail(format!("{value:?} is not in the domain of {target}")));
            }
            keys.push(if &value == raw {
                KeyEntry::Copy(e.component)
            } else {
                KeyEntry::Value(value)
            });
        }

        let agg_mode = if expanded {
            self.key_hierarchy.as_ref().unwrap().rollup
        } else {
            let mut modes = cell
                .attributes
                .iter()
                .zip(&attributes)
                .filter(|(_, t)| t.is_some())
                .map(|(a, _)| {
                    m.agg_map
                        .iter()
                        .find(|(k, _)| norm(k) == norm(a))
                        .map_or(AggMode::Replace, |(_, v)| *v)
                });
            let first = modes.next().unwrap();
            if modes.any(|x| x != first) {
                return Err(MappingError::SpecViolation(format!(
                    "source {}: attributes of one super cell carry different aggregation modes",
                    cell.source_id
                )));
            }
            first
        };
        Ok(TargetPosition {
            keys,
            attributes,
            agg_mode,
        })
    }
}

/// Cells in deterministic merge order: declared source order, then corpus
/// order; corpora for undeclared sources follow in id order.
fn ordered_cells<'a>(spec: &'a MappingSpec, corpora: &'a Corpora) -> impl Iterator<Item = &'a SuperCell> {
    let declared: Vec<&str> = spec.sources.iter().map(|d| d.source_id.as_str()).collect();
    let extra = corpora.keys().filter(move |k| !declared.contains(&k.as_str()));
    spec.sources
        .iter()
        .map(|d| &d.source_id)
        .chain(extra)
        .filter_map(|id| corpora.get(id))
        .flatten()
}

pub fn generate_training_data(
    spec: &MappingSpec,
    corpora: &Corpora,
    dicts: &Dictionaries,
) -> Result<Vec<LabeledSample>, MappingError> {
    spec.validate(dicts)?;
    ordered_cells(spec, corpora)
        .map(|cell| {
            Ok(LabeledSample {
                feature: render_feature(cell),
                label: spec.position_for(cell, dicts)?,
                origin: Origin {
                    source_id: cell.source_id.clone(),
                    row_ordinal: cell.row_ordinal,
                },
                cell: cell.clone(),
            })
        })
        .collect()
}

fn assemble_positions(
    schema: &TargetSchema,
    items: &[(SuperCell, TargetPosition)],
) -> Result<TargetTable, MappingError> {
    let (table, errors) = build_table(schema, items.iter().map(|(c, p)| (c, p)))
        .map_err(|e| MappingError::SpecViolation(e.to_string()))?;
    if let Some(e) = errors.iter().find(|e| matches!(e, AssembleError::AggModeConflict { .. })) {
        return Err(MappingError::SpecViolation(e.to_string()));
    }
    Ok(table)
}

/// Full outer join of all sources under the spec, computed directly from the
/// key, attribute and aggregation maps.
pub fn oracle_integrate(spec: &MappingSpec, corpora: &Corpora, dicts: &Dictionaries) -> Result<TargetTable, MappingError> {
    spec.validate(dicts)?;
    let items = ordered_cells(spec, corpora)
        .map(|c| {
            let (pos, _) = spec.position_for(c, dicts)?.resolve(c);
            Ok((c.clone(), pos))
        })
        .collect::<Result<Vec<_>, MappingError>>()?;
    assemble_positions(&spec.target, &items)
}

/// Assemble labeled samples (resolving COPY against their cells).
pub fn assemble_samples(schema: &TargetSchema, samples: &[LabeledSample]) -> Result<TargetTable, MappingError> {
    let items: Vec<_> = samples
        .iter()
        .map(|s| (s.cell.clone(), s.label.resolve(&s.cell).0))
        .collect();
    assemble_positions(schema, &items)
}

/// Compare assembled samples against an expected table.
pub fn check_samples(
    schema: &TargetSchema,
    samples: &[LabeledSample],
    expected: &FinalTable,
) -> Result<TableAgreement, MappingError> {
    let got = assemble_samples(schema, samples)?.finalize();
    Ok(compare_tables(expected, &got, schema.key_arity()))
}

/// Verify that assembling the generated labels reproduces the oracle.
pub fn consistency_check(spec: &MappingSpec, corpora: &Corpora, dicts: &Dictionaries) -> Result<TableAgreement, MappingError> {
    let oracle = oracle_integrate(spec, corpora, dicts)?.finalize();
    let samples = generate_training_data(spec, corpora, dicts)?;
    check_samples(&spec.target, &samples, &oracle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::SynonymDictionary;
    use crate::model::KeyDomain;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    fn schema() -> TargetSchema {
        TargetSchema {
            attributes: s(&["date", "state", "country", "confirmed", "recovered", "workplace", "recreation", "grocery"]),
            key_attributes: s(&["date", "state", "country"]),
            key_domains: BTreeMap::new(),
        }
    }

    fn identity_keys() -> Vec<KeyMapEntry> {
        ["date", "state", "country"]
            .iter()
            .enumerate()
            .map(|(i, t)| KeyMapEntry {
                component: i,
                target: t.to_string(),
                canon: CanonKind::None,
            })
            .collect()
    }

    fn spec() -> MappingSpec {
        let covid = SourceDescriptor::csv("covid", &["date", "state", "country"]);
        let mobility = SourceDescriptor::csv("mobility", &["time", "sub_region", "region"]);
        let noise = SourceDescriptor::csv("noise", &["id"]);
        MappingSpec {
            target: schema(),
            sources: vec![covid, mobility, noise],
            mappings: vec![
                SourceMapping {
                    source_id: "covid".into(),
                    key_map: identity_keys(),
                    broadcast: vec![],
                    attr_map: [("confirmed", "confirmed"), ("recovered", "recovered"), ("lat", DISCARD)]
                        .iter()
                        .map(|(a, b)| (a.to_string(), b.to_string()))
                        .collect(),
                    agg_map: BTreeMap::new(),
                },
                SourceMapping {
                    source_id: "mobility".into(),
                    key_map: identity_keys(),
                    broadcast: vec![],
                    attr_map: [("workplace", "workplace"), ("recreation", "recreation"), ("grocery", "grocery")]
                        .iter()
                        .map(|(a, b)| (a.to_string(), b.to_string()))
                        .collect(),
                    agg_map: BTreeMap::new(),
                },
            ],
            key_hierarchy: None,
        }
    }

    fn cell(src: &str, keys: &[&str], attrs: &[&str], vals: &[&str], row: u64) -> SuperCell {
        SuperCell::new(src, s(keys), s(attrs), s(vals), row)
    }

    fn corpora() -> Corpora {
        let mut c = Corpora::new();
        c.insert(
            "covid".into(),
            vec![
                cell("covid", &["2020-10-06", "az", "us"], &["confirmed", "recovered"], &["3103", "2214"], 0),
                cell("covid", &["2020-10-06", "az", "us"], &["lat"], &["33.7"], 0),
                cell("covid", &["2020-10-07", "az", "us"], &["confirmed", "recovered"], &["3200", "2300"], 1),
            ],
        );
        c.insert(
            "mobility".into(),
            vec![
                cell("mobility", &["2020-10-06", "az", "us"], &["workplace", "recreation", "grocery"], &["21", "5", "17"], 0),
                cell("mobility", &["2020-10-08", "az", "us"], &["workplace", "recreation", "grocery"], &["20", "4", "16"], 1),
            ],
        );
        c.insert("noise".into(), vec![cell("noise", &["7"], &["x"], &["1"], 0)]);
        c
    }

    #[test]
    fn mobility_label_copies_keys() {
        let c = &corpora()["mobility"][0];
        let pos = spec().position_for(c, &Dictionaries::new()).unwrap();
        assert_eq!(pos.keys, vec![KeyEntry::Copy(0), KeyEntry::Copy(1), KeyEntry::Copy(2)]);
        assert_eq!(pos.attributes, vec![Some("workplace".into()), Some("recreation".into()), Some("grocery".into())]);
        assert_eq!(pos.agg_mode, AggMode::Replace);
    }

    #[test]
    fn discarded_and_irrelevant_cells() {
        let sp = spec();
        let d = Dictionaries::new();
        let c = corpora();
        assert_eq!(sp.position_for(&c["covid"][1], &d).unwrap(), TargetPosition::discard(3, 1));
        assert_eq!(sp.position_for(&c["noise"][0], &d).unwrap(), TargetPosition::discard(3, 1));
    }

    #[test]
    fn non_identity_canonicalizer_yields_literal() {
        let mut sp = spec();
        let dict = SynonymDictionary::new(vec![s(&["Oct 6, 2020", "2020-10-06"])]).unwrap();
        let d = Dictionaries::new().with("dates", dict);
        sp.mappings[1].key_map[0].canon = CanonKind::Dictionary("dates".into());
        let pos = sp.position_for(&corpora()["mobility"][0], &d).unwrap();
        assert_eq!(pos.keys[0], KeyEntry::value("Oct 6, 2020"));
        assert_eq!(pos.keys[1], KeyEntry::Copy(1));
    }

    #[test]
    fn oracle_is_full_outer_join() {
        let t = oracle_integrate(&spec(), &corpora(), &Dictionaries::new()).unwrap().finalize();
        assert_eq!(
            t.to_csv_string(),
            "date,state,country,confirmed,recovered,workplace,recreation,grocery\n\
             2020-10-06,az,us,3103,2214,21,5,17\n\
             2020-10-07,az,us,3200,2300,,,\n\
             2020-10-08,az,us,,,20,4,16\n"
        );
    }

    #[test]
    fn sum_merges_same_position() {
        let mut sp = spec();
        sp.mappings[0].agg_map.insert("confirmed".into(), AggMode::Sum);
        sp.mappings[0].attr_map.remove("recovered");
        let mut c = Corpora::new();
        c.insert(
            "covid".into(),
            vec![
                cell("covid", &["d", "az", "us"], &["confirmed"], &["3103"], 0),
                cell("covid", &["d", "az", "us"], &["confirmed"], &["120"], 1),
            ],
        );
        let t = oracle_integrate(&sp, &c, &Dictionaries::new()).unwrap();
        assert_eq!(t.cell(&s(&["d", "az", "us"]), "confirmed").unwrap().render(), "3223");
    }

    #[test]
    fn identity_single_source_reproduces_input() {
        let target = TargetSchema {
            attributes: s(&["k", "a", "b"]),
            key_attributes: s(&["k"]),
            key_domains: BTreeMap::new(),
        };
        let desc = SourceDescriptor::csv("t", &["k"]);
        let sp = MappingSpec {
            target,
            sources: vec![desc.clone()],
            mappings: vec![SourceMapping {
                source_id: "t".into(),
                key_map: vec![KeyMapEntry {
                    component: 0,
                    target: "k".into(),
                    canon: CanonKind::None,
                }],
                broadcast: vec![],
                attr_map: [("a", "a"), ("b", "b")].iter().map(|(x, y)| (x.to_string(), y.to_string())).collect(),
                agg_map: BTreeMap::new(),
            }],
            key_hierarchy: None,
        };
        let input = "k,a,b\n1,x,y\n2,z,w\n";
        let raw = crate::ingest::RawTable::from_csv_str(input).unwrap();
        let cells = crate::ingest::decompose(&raw, &desc, &Dictionaries::new()).unwrap().cells;
        let corp: Corpora = [("t".to_string(), cells)].into_iter().collect();
        let t = oracle_integrate(&sp, &corp, &Dictionaries::new()).unwrap();
        assert_eq!(t.finalize().to_csv_string(), input);
        assert!(consistency_check(&sp, &corp, &Dictionaries::new()).unwrap().diffs.is_empty());
    }

    #[test]
    fn training_data_one_per_cell_with_provenance() {
        let c = corpora();
        let samples = generate_training_data(&spec(), &c, &Dictionaries::new()).unwrap();
        assert_eq!(samples.len(), c.values().map(Vec::len).sum::<usize>());
        for smp in &samples {
            assert_eq!(smp.feature, render_feature(&smp.cell));
            assert_eq!(smp.origin.source_id, smp.cell.source_id);
        }
        assert_eq!(samples[0].origin.source_id, "covid");
        assert_eq!(samples.last().unwrap().origin.source_id, "noise");
    }

    #[test]
    fn consistency_detects_corrupted_label() {
        let sp = spec();
        let d = Dictionaries::new();
        let c = corpora();
        assert!(consistency_check(&sp, &c, &d).unwrap().diffs.is_empty());
        let oracle = oracle_integrate(&sp, &c, &d).unwrap().finalize();
        let mut samples = generate_training_data(&sp, &c, &d).unwrap();
        samples[0].label.attributes[1] = Some("confirmed".into());
        samples[0].label.attributes[0] = Some("recovered".into());
        let report = check_samples(&sp.target, &samples, &oracle).unwrap();
        assert_eq!(report.diffs.len(), 2);
        assert_eq!(report.diffs[0].key, s(&["2020-10-06", "az", "us"]));
    }

    #[test]
    fn closed_domain_violation() {
        let mut sp = spec();
        sp.target.key_domains.insert("state".into(), KeyDomain::closed(["oh"]));
        let err = sp.position_for(&corpora()["covid"][0], &Dictionaries::new()).unwrap_err();
        assert!(matches!(err, MappingError::KeyResolutionFailure { .. }));
    }

    #[test]
    fn spec_invariants() {
        let d = Dictionaries::new();
        let mut sp = spec();
        sp.mappings[0].key_map.pop();
        assert!(matches!(sp.validate(&d), Err(MappingError::SpecViolation(_))));
        let mut sp = spec();
        sp.mappings[0].attr_map.insert("x".into(), "nowhere".into());
        assert!(sp.validate(&d).is_err());
        let mut sp = spec();
        sp.mappings[0].agg_map.insert("unmapped".into(), AggMode::Sum);
        assert!(sp.validate(&d).is_err());
        let mut sp = spec();
        sp.mappings[0].agg_map.insert("confirmed".into(), AggMode::Sum);
        assert!(matches!(
            oracle_integrate(&sp, &corpora(), &d),
            Err(MappingError::SpecViolation(_))
        ));
    }

    #[test]
    fn broadcast_and_expansion() {
        let mut sp = spec();
        sp.target.attributes.push("population".into());
        sp.sources.push(SourceDescriptor::csv("pop", &["state", "country"]));
        sp.mappings.push(SourceMapping {
            source_id: "pop".into(),
            key_map: vec![
                KeyMapEntry { component: 0, target: "state".into(), canon: CanonKind::None },
                KeyMapEntry { component: 1, target: "country".into(), canon: CanonKind::None },
            ],
            broadcast: vec!["date".into()],
            attr_map: [("population".to_string(), "population".to_string())].into_iter().collect(),
            agg_map: BTreeMap::new(),
        });
        sp.key_hierarchy = Some(KeyHierarchy {
            parent_attribute: "state".into(),
            child_attribute: "admin2".into(),
            children: BTreeMap::new(),
            rollup: AggMode::Sum,
        });
        let mut c = corpora();
        c.insert("pop".into(), vec![cell("pop", &["az", "us"], &["population"], &["7151502"], 0)]);
        c.get_mut("covid").unwrap().retain(|x| x.row_ordinal == 1);
        c.get_mut("covid").unwrap().extend([
            cell("covid", &["2020-10-06", "az", "us", "maricopa county"], &["confirmed", "recovered"], &["3000", "2000"], 0),
            cell("covid", &["2020-10-06", "az", "us", "pima county"], &["confirmed", "recovered"], &["103", "214"], 0),
        ]);
        let d = Dictionaries::new();
        let pos = sp.position_for(&c["covid"][1], &d).unwrap();
        assert_eq!(pos.agg_mode, AggMode::Sum);
        assert_eq!(sp.copy_slots(), 4);
        let t = oracle_integrate(&sp, &c, &d).unwrap();
        assert_eq!(t.cell(&s(&["2020-10-06", "az", "us"]), "confirmed").unwrap().render(), "3103");
        assert_eq!(t.cell(&s(&["2020-10-08", "az", "us"]), "population").unwrap().render(), "7151502");
        assert!(consistency_check(&sp, &c, &d).unwrap().diffs.is_empty());
    }

    #[test]
    fn spec_json_round_trip() {
        let sp = spec();
        assert_eq!(MappingSpec::from_json(&sp.to_json()).unwrap(), sp);
    }
}
