//! Synthetic corpora modeled on the COVID (JHU + mobility) and machine-log
//! integration tasks, plus the `Scenario` bundle that ties a mapping spec,
//! dictionaries and raw source data together.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::assemble::TargetTable;
use crate::ingest::{
    decompose_source, CanonKind, Dictionaries, IngestError, LogCell, LogRule, RawTable, SourceData,
    SourceDescriptor, SourceFormat, SynonymDictionary,
};
use crate::mapping::{
    generate_training_data, oracle_integrate, Corpora, KeyHierarchy, KeyMapEntry, LabeledSample, MappingError,
    MappingSpec, SourceMapping, DISCARD,
};
use crate::model::{AggMode, KeyDomain, TargetSchema};
use crate::perturb::{pivot_table, rng_for, PerturbError};

pub const US_STATES: [(&str, &str); 50] = [
    ("Alabama", "AL"),
    ("Alaska", "AK"),
    ("Arizona", "AZ"),
    ("Arkansas", "AR"),
    ("California", "CA"),
    ("Colorado", "CO"),
    ("Connecticut", "CT"),
    ("Delaware", "DE"),
    ("Florida", "FL"),
    ("Georgia", "GA"),
    ("Hawaii", "HI"),
    ("Idaho", "ID"),
    ("Illinois", "IL"),
    ("Indiana", "IN"),
    ("Iowa", "IA"),
    ("Kansas", "KS"),
    ("Kentucky", "KY"),
    ("Louisiana", "LA"),
    ("Maine", "ME"),
    ("Maryland", "MD"),
    ("Massachusetts", "MA"),
    ("Michigan", "MI"),
    ("Minnesota", "MN"),
    ("Mississippi", "MS"),
    ("Missouri", "MO"),
    ("Montana", "MT"),
    ("Nebraska", "NE"),
    ("Nevada", "NV"),
    ("New Hampshire", "NH"),
    ("New Jersey", "NJ"),
    ("New Mexico", "NM"),
    ("New York", "NY"),
    ("North Carolina", "NC"),
    ("North Dakota", "ND"),
    ("Ohio", "OH"),
    ("Oklahoma", "OK"),
    ("Oregon", "OR"),
    ("Pennsylvania", "PA"),
    ("Rhode Island", "RI"),
    ("South Carolina", "SC"),
    ("South Dakota", "SD"),
    ("Tennessee", "TN"),
    ("Texas", "TX"),
    ("Utah", "UT"),
    ("Vermont", "VT"),
    ("Virginia", "VA"),
    ("Washington", "WA"),
    ("West Virginia", "WV"),
    ("Wisconsin", "WI"),
    ("Wyoming", "WY"),
];

const COUNTY_NAMES: [&str; 16] = [
    "washington", "jefferson", "franklin", "jackson", "lincoln", "madison", "clay", "montgomery", "union",
    "marion", "monroe", "greene", "warren", "wayne", "grant", "clark",
];

/// One raw source: its descriptor and contents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceInput {
    pub descriptor: SourceDescriptor,
    pub data: SourceData,
}

/// An integration task with data. Several inputs may share a source id (a
/// pivoted source split into per-attribute tables); their cells are merged.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub spec: MappingSpec,
    pub dicts: Dictionaries,
    pub inputs: Vec<SourceInput>,
}

impl Scenario {
    pub fn decompose(&self) -> Result<Corpora, IngestError> {
        let mut corpora = Corpora::new();
        for input in &self.inputs {
            let d = decompose_source(&input.data, &input.descriptor, &self.dicts)?;
            corpora.entry(input.descriptor.source_id.clone()).or_default().extend(d.cells);
        }
        Ok(corpora)
    }

    pub fn labeled(&self) -> Result<Vec<LabeledSample>, MappingError> {
        generate_training_data(&self.spec, &self.decompose()?, &self.dicts)
    }

    pub fn oracle(&self) -> Result<TargetTable, MappingError> {
        oracle_integrate(&self.spec, &self.decompose()?, &self.dicts)
    }

    /// Write the scenario as plain files and return the manifest that
    /// points at them (paths relative to `dir`).
    pub fn write_dir(&self, dir: &Path) -> std::io::Result<ScenarioFiles> {
        fs::create_dir_all(dir.join("dictionaries"))?;
        fs::create_dir_all(dir.join("sources"))?;
        fs::write(dir.join("spec.json"), self.spec.to_json())?;
        let mut files = ScenarioFiles {
            spec: PathBuf::from("spec.json"),
            dictionaries: BTreeMap::new(),
            inputs: Vec::new(),
        };
        for name in self.dicts.names() {
            let rel = PathBuf::from("dictionaries").join(format!("{name}.json"));
            let groups = self.dicts.get(name).unwrap().groups();
            fs::write(dir.join(&rel), serde_json::to_string_pretty(groups).unwrap())?;
            files.dictionaries.insert(name.to_string(), rel);
        }
        for (i, input) in self.inputs.iter().enumerate() {
            let stem = format!("{i:02}_{}", input.descriptor.source_id);
            let desc = PathBuf::from("sources").join(format!("{stem}.json"));
            let (ext, text) = match &input.data {
                SourceData::Table(t) => ("csv", t.to_csv_string()),
                SourceData::Log(s) => ("log", s.clone()),
            };
            let data = PathBuf::from("sources").join(format!("{stem}.{ext}"));
            fs::write(dir.join(&desc), serde_json::to_string_pretty(&input.descriptor).unwrap())?;
            fs::write(dir.join(&data), text)?;
            files.inputs.push(InputFiles {
                descriptor: desc,
                data,
            });
        }
        fs::write(dir.join("scenario.json"), serde_json::to_string_pretty(&files).unwrap())?;
        Ok(files)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputFiles {
    pub descriptor: PathBuf,
    pub data: PathBuf,
}

/// File locations of a scenario.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFiles {
    pub spec: PathBuf,
    #[serde(default)]
    pub dictionaries: BTreeMap<String, PathBuf>,
    pub inputs: Vec<InputFiles>,
}

impl ScenarioFiles {
    /// Load everything, resolving relative paths against `base`.
    pub fn load(&self, base: &Path) -> Result<Scenario, MappingError> {
        let at = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        let read = |p: &Path| fs::read_to_string(at(p)).map_err(|e| MappingError::Io(format!("{}: {e}", at(p).display())));
        let spec = MappingSpec::from_json(&read(&self.spec)?)?;
        let mut dicts = Dictionaries::new();
        for (name, path) in &self.dictionaries {
            dicts.insert(name.clone(), SynonymDictionary::from_json(&read(path)?)?);
        }
        let mut inputs = Vec::new();
        for f in &self.inputs {
            let descriptor: SourceDescriptor = serde_json::from_str(&read(&f.descriptor)?)
                .map_err(|e| MappingError::SpecViolation(format!("{}: {e}", f.descriptor.display())))?;
            let data = SourceData::parse(&descriptor, &read(&f.data)?)?;
            inputs.push(SourceInput { descriptor, data });
        }
        Ok(Scenario { spec, dicts, inputs })
    }
}

fn groups(v: &[&[&str]]) -> SynonymDictionary {
    SynonymDictionary::new(v.iter().map(|g| g.iter().map(|s| s.to_string()).collect()).collect())
        .expect("fixture dictionary is well formed")
}

pub fn us_states_dictionary() -> SynonymDictionary {
    SynonymDictionary::new(
        US_STATES
            .iter()
            .map(|(name, abbr)| vec![name.to_lowercase(), abbr.to_string()])
            .collect(),
    )
    .expect("state names are distinct")
}

pub fn countries_dictionary() -> SynonymDictionary {
    groups(&[&["us", "united states", "usa", "united states of america"]])
}

pub fn covid_attribute_dictionary() -> SynonymDictionary {
    groups(&[
        &["confirmed", "confirmed cases", "total cases", "positive tests"],
        &["deaths", "death count", "fatalities", "deceased"],
        &["recovered", "recoveries", "total recovered", "cured"],
        &["workplaces", "workplace visits", "at work", "offices"],
        &["retail_and_recreation", "retail and recreation", "leisure", "shops and leisure"],
        &["grocery_and_pharmacy", "grocery and pharmacy", "supermarkets", "food stores"],
        &["province_state", "province/state", "state name"],
        &["country_region", "country/region", "nation"],
        &["longitude", "long_", "lng"],
        &["latitude", "lat"],
    ])
}

pub fn log_term_dictionary() -> SynonymDictionary {
    groups(&[
        &["user", "us", "usr", "usertime"],
        &["sys", "sy", "system", "kernel"],
        &["idle", "id", "idl", "idletime"],
        &["used", "inuse", "occupied", "allocated"],
        &["free", "unused", "avail", "available"],
        &["total", "tot", "capacity"],
    ])
}

pub fn covid_dictionaries() -> Dictionaries {
    Dictionaries::new()
        .with("us_states", us_states_dictionary())
        .with("countries", countries_dictionary())
        .with("covid_attributes", covid_attribute_dictionary())
}

fn key(component: usize, target: &str, canon: CanonKind) -> KeyMapEntry {
    KeyMapEntry {
        component,
        target: target.into(),
        canon,
    }
}

fn attr_map(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
    pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
}

fn canon(pairs: &[(&str, CanonKind)]) -> BTreeMap<String, CanonKind> {
    pairs.iter().map(|(a, k)| (a.to_string(), k.clone())).collect()
}

fn dict(name: &str) -> CanonKind {
    CanonKind::Dictionary(name.into())
}

fn s(v: &[&str]) -> Vec<String> {
    v.iter().map(|x| x.to_string()).collect()
}

/// County names per state (lowercase state name → children) for key
/// expansion.
pub fn county_hierarchy() -> KeyHierarchy {
    let children = US_STATES
        .iter()
        .enumerate()
        .map(|(i, (name, _))| {
            let kids = (0..3)
                .map(|j| format!("{} county", COUNTY_NAMES[(i * 3 + j * 5) % COUNTY_NAMES.len()]))
                .collect();
            (name.to_lowercase(), kids)
        })
        .collect();
    KeyHierarchy {
        parent_attribute: "state".into(),
        child_attribute: "admin2".into(),
        children,
        rollup: AggMode::Sum,
    }
}

fn state_domain() -> KeyDomain {
    KeyDomain::closed(US_STATES.iter().map(|(n, _)| n.to_lowercase()))
}

pub fn jhu_descriptor() -> SourceDescriptor {
    let mut d = SourceDescriptor::csv("jhu", &["Province_State", "Country_Region", "Date"]);
    d.supercell_groups = vec![s(&["Confirmed", "Deaths"])];
    d.canonicalizers = canon(&[
        ("Province_State", dict("us_states")),
        ("Country_Region", dict("countries")),
        ("Date", CanonKind::Date),
        ("Confirmed", CanonKind::Number),
        ("Deaths", CanonKind::Number),
        ("Recovered", CanonKind::Number),
    ]);
    d
}

pub fn mobility_descriptor() -> SourceDescriptor {
    let mut d = SourceDescriptor::csv("mobility", &["date", "sub_region_1", "country_region"]);
    d.supercell_groups = vec![s(&["workplaces", "retail_and_recreation", "grocery_and_pharmacy"])];
    d.canonicalizers = canon(&[
        ("date", CanonKind::Date),
        ("sub_region_1", dict("us_states")),
        ("country_region", dict("countries")),
        ("workplaces", CanonKind::Number),
        ("retail_and_recreation", CanonKind::Number),
        ("grocery_and_pharmacy", CanonKind::Number),
    ]);
    d
}

pub fn covid_spec() -> MappingSpec {
    let mut key_domains = BTreeMap::new();
    key_domains.insert("date".to_string(), KeyDomain::open());
    key_domains.insert("state".to_string(), state_domain());
    key_domains.insert("country".to_string(), KeyDomain::closed(["us"]));
    MappingSpec {
        target: TargetSchema {
            attributes: s(&[
                "date", "state", "country", "confirmed", "deaths", "recovered", "workplace", "recreation", "grocery",
            ]),
            key_attributes: s(&["date", "state", "country"]),
            key_domains,
        },
        sources: vec![jhu_descriptor(), mobility_descriptor()],
        mappings: vec![
            SourceMapping {
                source_id: "jhu".into(),
                key_map: vec![
                    key(0, "state", dict("us_states")),
                    key(1, "country", dict("countries")),
                    key(2, "date", CanonKind::Date),
                ],
                broadcast: Vec::new(),
                attr_map: attr_map(&[("Confirmed", "confirmed"), ("Deaths", "deaths"), ("Recovered", "recovered")]),
                agg_map: BTreeMap::new(),
            },
            SourceMapping {
                source_id: "mobility".into(),
                key_map: vec![
                    key(0, "date", CanonKind::Date),
                    key(1, "state", dict("us_states")),
                    key(2, "country", dict("countries")),
                ],
                broadcast: Vec::new(),
                attr_map: attr_map(&[
                    ("workplaces", "workplace"),
                    ("retail_and_recreation", "recreation"),
                    ("grocery_and_pharmacy", "grocery"),
                ]),
                agg_map: BTreeMap::new(),
            },
        ],
        key_hierarchy: Some(county_hierarchy()),
    }
}

/// Dates `(month, day)` of `year`, `n` consecutive days from `start_day`.
fn dates(year: u32, month: u32, start_day: u32, n: usize) -> Vec<(u32, u32, u32)> {
    assert!(start_day as usize + n <= 29, "fixture dates stay within one month");
    (0..n as u32).map(|i| (year, month, start_day + i)).collect()
}

/// Calendar window of a COVID fixture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub year: u32,
    pub month: u32,
    pub start_day: u32,
    pub days: usize,
}

impl Window {
    pub const TRAIN: Window = Window {
        year: 2020,
        month: 10,
        start_day: 1,
        days: 20,
    };
    pub const TEST: Window = Window {
        year: 2020,
        month: 11,
        start_day: 3,
        days: 20,
    };
}

/// JHU-style daily report and a Google-mobility-style table for 50 states.
pub fn covid_tables(seed: u64, w: Window) -> (RawTable, RawTable) {
    let mut rng = rng_for(seed);
    let days = dates(w.year, w.month, w.start_day, w.days);
    let mut jhu = Vec::new();
    let mut mob = Vec::new();
    for (name, abbr) in US_STATES {
        let base: u64 = rng.gen_range(2_000..400_000);
        let growth: u64 = rng.gen_range(100..5_000);
        let cfr: f64 = rng.gen_range(0.008..0.03);
        let work: i64 = rng.gen_range(-45..-5);
        let rec: i64 = rng.gen_range(-40..0);
        let groc: i64 = rng.gen_range(-20..10);
        for (i, &(y, m, d)) in days.iter().enumerate() {
            let confirmed = base + growth * i as u64 + rng.gen_range(0..growth / 2 + 1);
            let deaths = (confirmed as f64 * cfr) as u64;
            let recovered = (confirmed as f64 * rng.gen_range(0.4..0.7)) as u64;
            jhu.push(vec![
                name.to_string(),
                "US".to_string(),
                format!("{m}/{d}/{y}"),
                confirmed.to_string(),
                deaths.to_string(),
                recovered.to_string(),
            ]);
            mob.push(vec![
                format!("{y:04}-{m:02}-{d:02}"),
                abbr.to_string(),
                "United States".to_string(),
                (work + rng.gen_range(-6..7)).to_string(),
                (rec + rng.gen_range(-6..7)).to_string(),
                (groc + rng.gen_range(-6..7)).to_string(),
            ]);
        }
    }
    (
        RawTable::new(
            s(&["Province_State", "Country_Region", "Date", "Confirmed", "Deaths", "Recovered"]),
            jhu,
        ),
        RawTable::new(
            s(&[
                "date",
                "sub_region_1",
                "country_region",
                "workplaces",
                "retail_and_recreation",
                "grocery_and_pharmacy",
            ]),
            mob,
        ),
    )
}

/// The two-source COVID scenario: 50 states × `w.days` dates, three super
/// cells per state and date.
pub fn covid(seed: u64, w: Window) -> Scenario {
    let (jhu, mob) = covid_tables(seed, w);
    Scenario {
        spec: covid_spec(),
        dicts: covid_dictionaries(),
        inputs: vec![
            SourceInput {
                descriptor: jhu_descriptor(),
                data: SourceData::Table(jhu),
            },
            SourceInput {
                descriptor: mobility_descriptor(),
                data: SourceData::Table(mob),
            },
        ],
    }
}

/// Confirmed and death counts as two time-series tables with one column per
/// date.
pub fn covid_timeseries(seed: u64, w: Window) -> Result<Scenario, PerturbError> {
    let (jhu, _) = covid_tables(seed, w);
    let pivoted = pivot_table(&jhu, &jhu_descriptor(), "Date")?;
    let mut inputs = Vec::new();
    let mut sources = Vec::new();
    let mut mappings = Vec::new();
    for (table, mut desc) in pivoted {
        let attr = desc.pivot.as_ref().unwrap().value_attr_name.clone();
        let target = match attr.as_str() {
            "Confirmed" => "confirmed",
            "Deaths" => "deaths",
            _ => continue,
        };
        desc.source_id = format!("{target}_ts");
        mappings.push(SourceMapping {
            source_id: desc.source_id.clone(),
            key_map: vec![
                key(0, "state", dict("us_states")),
                key(1, "country", dict("countries")),
                key(2, "date", CanonKind::Date),
            ],
            broadcast: Vec::new(),
            attr_map: attr_map(&[(&attr, target)]),
            agg_map: BTreeMap::new(),
        });
        sources.push(desc.clone());
        inputs.push(SourceInput {
            descriptor: desc,
            data: SourceData::Table(table),
        });
    }
    let mut key_domains = BTreeMap::new();
    key_domains.insert("date".to_string(), KeyDomain::open());
    key_domains.insert("state".to_string(), state_domain());
    key_domains.insert("country".to_string(), KeyDomain::closed(["us"]));
    Ok(Scenario {
        spec: MappingSpec {
            target: TargetSchema {
                attributes: s(&["date", "state", "country", "confirmed", "deaths"]),
                key_attributes: s(&["date", "state", "country"]),
                key_domains,
            },
            sources,
            mappings,
            key_hierarchy: None,
        },
        dicts: covid_dictionaries(),
        inputs,
    })
}

/// A keyed table with `columns` columns in total (three keys plus numeric
/// measures) over `rows` rows.
pub fn wide_table(seed: u64, columns: usize, rows: usize) -> (RawTable, SourceDescriptor) {
    assert!(columns > 3);
    let mut rng = rng_for(seed);
    let mut header = s(&["Province_State", "Country_Region", "Date"]);
    header.extend((0..columns - 3).map(|i| format!("measure_{i:03}")));
    let body = (0..rows)
        .map(|r| {
            let (name, _) = US_STATES[r % US_STATES.len()];
            let mut row = vec![name.to_string(), "US".to_string(), format!("10/{}/2020", 1 + r / US_STATES.len())];
            row.extend((0..columns - 3).map(|_| rng.gen_range(0..100_000u32).to_string()));
            row
        })
        .collect();
    let mut d = SourceDescriptor::csv("wide", &["Province_State", "Country_Region", "Date"]);
    d.canonicalizers = canon(&[
        ("Province_State", dict("us_states")),
        ("Country_Region", dict("countries")),
        ("Date", CanonKind::Date),
    ]);
    (RawTable::new(header, body), d)
}

fn log_cells(n: usize) -> Vec<LogCell> {
    (1..=n)
        .map(|i| LogCell {
            attr: None,
            attr_capture: Some(format!("a{i}")),
            value_capture: format!("v{i}"),
        })
        .collect()
}

fn literal_cell(attr: &str) -> Vec<LogCell> {
    vec![LogCell {
        attr: Some(attr.into()),
        attr_capture: None,
        value_capture: "v1".into(),
    }]
}

fn log_descriptor(id: &str, rules: Vec<LogRule>, literal: &str) -> SourceDescriptor {
    let mut d = SourceDescriptor::csv(id, &["host", "time"]);
    d.format = SourceFormat::LogLines;
    d.log_rules = rules;
    d.canonicalizers = canon(&[
        ("time", CanonKind::Date),
        ("v1", CanonKind::Number),
        ("v2", CanonKind::Number),
        ("v3", CanonKind::Number),
        (literal, CanonKind::Number),
    ]);
    d
}

fn rule(pattern: &str, keys: &[&str], cells: Vec<LogCell>) -> LogRule {
    LogRule {
        pattern: pattern.into(),
        key_captures: s(keys),
        attr_value_captures: cells,
    }
}

pub fn macos_descriptor() -> SourceDescriptor {
    log_descriptor(
        "macos",
        vec![
            rule(r"^== (?P<host>\S+) (?P<time>.+) ==$", &["host", "time"], Vec::new()),
            rule(r"^Processes: (?P<v1>\d+) total", &[], literal_cell("processes")),
            rule(
                r"^CPU usage: (?P<v1>[\d.]+)% (?P<a1>\w+), (?P<v2>[\d.]+)% (?P<a2>\w+), (?P<v3>[\d.]+)% (?P<a3>\w+)$",
                &[],
                log_cells(3),
            ),
            rule(r"^PhysMem: (?P<v1>\d+)M (?P<a1>\w+), (?P<v2>\d+)M (?P<a2>\w+)$", &[], log_cells(2)),
        ],
        "processes",
    )
}

pub fn ubuntu_descriptor() -> SourceDescriptor {
    log_descriptor(
        "ubuntu",
        vec![
            rule(r"^top - host (?P<host>\S+) at (?P<time>.+)$", &["host", "time"], Vec::new()),
            rule(r"^Tasks: (?P<v1>\d+) total", &[], literal_cell("tasks")),
            rule(
                r"^%Cpu\(s\):\s*(?P<v1>[\d.]+) (?P<a1>\w+),\s*(?P<v2>[\d.]+) (?P<a2>\w+),\s*(?P<v3>[\d.]+) (?P<a3>\w+)$",
                &[],
                log_cells(3),
            ),
            rule(
                r"^MiB Mem :\s*(?P<v1>[\d.]+) (?P<a1>\w+),\s*(?P<v2>[\d.]+) (?P<a2>\w+),\s*(?P<v3>[\d.]+) (?P<a3>\w+)$",
                &[],
                log_cells(3),
            ),
        ],
        "tasks",
    )
}

pub fn android_descriptor() -> SourceDescriptor {
    log_descriptor(
        "android",
        vec![
            rule(r"^\[(?P<host>\S+)\] (?P<time>.+)$", &["host", "time"], Vec::new()),
            rule(r"^Tasks: (?P<v1>\d+) total", &[], literal_cell("tasks")),
            rule(
                r"^\d+%cpu\s+(?P<v1>\d+)%(?P<a1>\w+)\s+\d+%nice\s+(?P<v2>\d+)%(?P<a2>\w+)\s+(?P<v3>\d+)%(?P<a3>\w+)$",
                &[],
                log_cells(3),
            ),
            rule(
                r"^Mem:\s*(?P<v1>\d+)K (?P<a1>\w+),\s*(?P<v2>\d+)K (?P<a2>\w+),\s*(?P<v3>\d+)K (?P<a3>\w+)$",
                &[],
                log_cells(3),
            ),
        ],
        "tasks",
    )
}

fn log_mapping(id: &str, pairs: &[(&str, &str)]) -> SourceMapping {
    SourceMapping {
        source_id: id.into(),
        key_map: vec![key(0, "host", CanonKind::None), key(1, "time", CanonKind::Date)],
        broadcast: Vec::new(),
        attr_map: attr_map(pairs),
        agg_map: BTreeMap::new(),
    }
}

pub fn log_spec() -> MappingSpec {
    let mut key_domains = BTreeMap::new();
    key_domains.insert("host".to_string(), KeyDomain::open());
    key_domains.insert("time".to_string(), KeyDomain::open());
    MappingSpec {
        target: TargetSchema {
            attributes: s(&["host", "time", "cpu_user", "cpu_sys", "cpu_idle", "mem_used", "mem_free"]),
            key_attributes: s(&["host", "time"]),
            key_domains,
        },
        sources: vec![macos_descriptor(), ubuntu_descriptor(), android_descriptor()],
        mappings: vec![
            log_mapping(
                "macos",
                &[
                    ("user", "cpu_user"),
                    ("sys", "cpu_sys"),
                    ("idle", "cpu_idle"),
                    ("used", "mem_used"),
                    ("unused", "mem_free"),
                    ("processes", DISCARD),
                ],
            ),
            log_mapping(
                "ubuntu",
                &[
                    ("us", "cpu_user"),
                    ("sy", "cpu_sys"),
                    ("id", "cpu_idle"),
                    ("used", "mem_used"),
                    ("free", "mem_free"),
                    ("total", DISCARD),
                    ("tasks", DISCARD),
                ],
            ),
            log_mapping(
                "android",
                &[
                    ("user", "cpu_user"),
                    ("sys", "cpu_sys"),
                    ("idle", "cpu_idle"),
                    ("used", "mem_used"),
                    ("free", "mem_free"),
                    ("total", DISCARD),
                    ("tasks", DISCARD),
                ],
            ),
        ],
        key_hierarchy: None,
    }
}

pub fn log_dictionaries() -> Dictionaries {
    Dictionaries::new().with("log_terms", log_term_dictionary())
}

/// Three `top`-style logs (MacOS, Ubuntu, Android) with `hosts` machines each
/// sampled `snapshots` times, one minute apart from `hour`:00.
pub fn machine_logs(seed: u64, hosts: usize, snapshots: usize, hour: u32) -> Scenario {
    let mut rng = rng_for(seed);
    let mut mac = String::new();
    let mut ubu = String::new();
    let mut and = String::new();
    for h in 0..hosts {
        for t in 0..snapshots {
            let (hh, mm) = (hour + t as u32 / 60, t as u32 % 60);
            let user: f64 = rng.gen_range(1.0..60.0);
            let sys: f64 = rng.gen_range(1.0..30.0);
            let idle = (100.0 - user - sys).max(0.0);
            mac.push_str(&format!("== mac-{h:02} 2021-03-04 {hh:02}:{mm:02}:00 ==\n"));
            mac.push_str(&format!("Processes: {} total, 3 running\n", rng.gen_range(200..600)));
            mac.push_str(&format!("CPU usage: {user:.2}% user, {sys:.2}% sys, {idle:.2}% idle\n"));
            let used = rng.gen_range(2000..15000);
            mac.push_str(&format!("PhysMem: {used}M used, {}M unused\n", 16384 - used));

            let user: f64 = rng.gen_range(1.0..60.0);
            let sys: f64 = rng.gen_range(1.0..30.0);
            let idle = (100.0 - user - sys).max(0.0);
            ubu.push_str(&format!("top - host ubuntu-{h:02} at 3/4/2021 {hh}:{mm:02}:00\n"));
            ubu.push_str(&format!("Tasks: {} total, 1 running\n", rng.gen_range(100..400)));
            ubu.push_str(&format!("%Cpu(s): {user:.1} us, {sys:.1} sy, {idle:.1} id\n"));
            let total = 7821.4;
            let free: f64 = rng.gen_range(200.0..4000.0);
            ubu.push_str(&format!("MiB Mem : {total:.1} total, {free:.1} free, {:.1} used\n", total - free - 300.0));

            let user = rng.gen_range(10..200);
            let sys = rng.gen_range(10..100);
            and.push_str(&format!("[pixel-{h:02}] 2021-03-04T{hh:02}:{mm:02}:00\n"));
            and.push_str(&format!("Tasks: {} total, 2 running\n", rng.gen_range(300..700)));
            and.push_str(&format!("400%cpu {user}%user 0%nice {sys}%sys {}%idle\n", 400 - user - sys));
            let used = rng.gen_range(1_000_000..3_800_000);
            and.push_str(&format!("Mem: 3855652K total, {used}K used, {}K free\n", 3_855_652 - used));
        }
    }
    let spec = log_spec();
    let inputs = [mac, ubu, and]
        .into_iter()
        .zip(spec.sources.iter())
        .map(|(text, d)| SourceInput {
            descriptor: d.clone(),
            data: SourceData::Log(text),
        })
        .collect();
    Scenario {
        spec,
        dicts: log_dictionaries(),
        inputs,
    }
}
