//! Measurement: test-variant corpora, ablations with and without
//! augmentation, learner-vs-baseline comparison and stage timings.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::assemble::{build_table, compare_tables, AssembleError, FinalTable, TableAgreement, TargetTable};
use crate::baseline::{
    baseline_integrate, build_signatures, match_columns, select_sources, storage_report, CanonTable, LshError,
};
use crate::fixtures::{Scenario, SourceInput};
use crate::ingest::{norm, Dictionaries, IngestError, SourceData, SourceDescriptor, SourceFormat};
use crate::learner::{accuracy, train, LearnError, TrainConfig, TrainReport, TrainedModel};
use crate::mapping::{LabeledSample, MappingError};
use crate::model::{SuperCell, TargetSchema};
use crate::perturb::{
    add_noise_columns, augment, expand_table, noise_phrase, pivot_table, reformat_table, reformat_value,
    rename_columns, rename_count, rename_plan, rng_for, PerturbError, PerturbationPlan,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Mapping(#[from] MappingError),
    #[error(transparent)]
    Perturb(#[from] PerturbError),
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error(transparent)]
    Lsh(#[from] LshError),
    #[error(transparent)]
    Assemble(#[from] AssembleError),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for EvalError {
    fn from(e: std::io::Error) -> Self {
        EvalError::Io(e.to_string())
    }
}

/// Apply a schema-change plan to a whole scenario, the way a source would
/// evolve between snapshots: noise columns, attribute renames (one rename map
/// shared by all sources), character noise on names, value reformatting, key
/// expansion and pivoting on each source's last key column. The mapping spec
/// is updated so that its oracle still describes the changed sources.
pub fn apply_variant(scenario: &Scenario, plan: &PerturbationPlan) -> Result<Scenario, EvalError> {
    plan.validate()?;
    let mut rng = rng_for(plan.seed);
    let dicts = &scenario.dicts;
    let synonyms = match &plan.synonym_dict {
        Some(name) => Some(dicts.require(name)?),
        None => None,
    };

    let names: Vec<String> = scenario
        .spec
        .mappings
        .iter()
        .flat_map(|m| m.attr_map.keys().map(|k| norm(k)))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut renames: BTreeMap<String, String> =
        rename_plan(&names, rename_count(names.len(), plan.attr_rename_rate), synonyms, &mut rng)
            .into_iter()
            .map(|(k, v)| (k, norm(&v)))
            .collect();
    if plan.char_noise_rate > 0.0 {
        for n in &names {
            let base = renames.get(n).cloned().unwrap_or_else(|| n.clone());
            let (noised, changed) = noise_phrase(&base, plan.char_noise_rate, &mut rng);
            if changed && !noised.trim().is_empty() {
                renames.insert(n.clone(), noised);
            }
        }
    }
    // a log term must stay one word to be captured again
    let log_safe = Regex::new(r"^\w+$").unwrap();

    let mut spec = scenario.spec.clone();
    for m in &mut spec.mappings {
        let log = spec
            .sources
            .iter()
            .any(|d| d.source_id == m.source_id && d.format == SourceFormat::LogLines);
        let keep = |n: &str| !log || log_safe.is_match(n);
        rekey(&mut m.attr_map, &renames, keep);
        rekey(&mut m.agg_map, &renames, keep);
    }

    let mut inputs = Vec::new();
    for input in &scenario.inputs {
        let desc = &input.descriptor;
        match &input.data {
            SourceData::Log(text) => {
                let log_renames: BTreeMap<String, String> = renames
                    .iter()
                    .filter(|(_, v)| log_safe.is_match(v))
                    .map(|(k, v)| (k.clone(), v.clone()))
                    .collect();
                let text = perturb_log(text, desc, &log_renames, plan.value_reformat_rate, dicts, &mut rng)?;
                inputs.push(SourceInput {
                    descriptor: desc.clone(),
                    data: SourceData::Log(text),
                });
            }
            SourceData::Table(table) => {
                if desc.format != SourceFormat::Csv {
                    let (t, d) = rename_columns(table, desc, &renames);
                    inputs.push(SourceInput {
                        descriptor: d,
                        data: SourceData::Table(t),
                    });
                    continue;
                }
                let mut t = add_noise_columns(table, plan.add_remove_noise_columns, &mut rng);
                let (renamed, mut d) = rename_columns(&t, desc, &renames);
                t = renamed;
                t = reformat_table(&t, &d, plan.value_reformat_rate, dicts, &mut rng).0;
                if plan.key_expansion_rate > 0.0 {
                    if let Some(h) = &spec.key_hierarchy {
                        let parent = spec
                            .mapping(&d.source_id)
                            .and_then(|m| m.key_map.iter().find(|e| e.target == h.parent_attribute))
                            .map(|e| d.key_columns[e.component].clone());
                        if let Some(parent) = parent {
                            let (et, ed, _) = expand_table(&t, &d, h, &parent, plan.key_expansion_rate, dicts, &mut rng)?;
                            t = et;
                            d = ed;
                        }
                    }
                }
                if plan.pivot_enabled && d.child_key_column.is_none() {
                    let axis = d.key_columns.last().unwrap().clone();
                    for (pt, pd) in pivot_table(&t, &d, &axis)? {
                        inputs.push(SourceInput {
                            descriptor: pd,
                            data: SourceData::Table(pt),
                        });
                    }
                } else {
                    inputs.push(SourceInput {
                        descriptor: d,
                        data: SourceData::Table(t),
                    });
                }
            }
        }
    }
    for d in &mut spec.sources {
        if let Some(i) = inputs.iter().find(|i| i.descriptor.source_id == d.source_id) {
            *d = i.descriptor.clone();
        }
    }
    Ok(Scenario {
        spec,
        dicts: scenario.dicts.clone(),
        inputs,
    })
}

fn rekey<V>(map: &mut BTreeMap<String, V>, renames: &BTreeMap<String, String>, keep: impl Fn(&str) -> bool) {
    for (k, v) in std::mem::take(map) {
        let new = match renames.get(&norm(&k)) {
            Some(n) if keep(n) => n.clone(),
            _ => k,
        };
        map.insert(new, v);
    }
}

/// Rewrite captured attribute terms and reformat captured key/value fields
/// of a log, keeping every line parseable by the same rules.
pub fn perturb_log<R: Rng>(
    text: &str,
    desc: &SourceDescriptor,
    renames: &BTreeMap<String, String>,
    reformat_rate: f64,
    dicts: &Dictionaries,
    rng: &mut R,
) -> Result<String, EvalError> {
    let rules: Vec<Regex> = desc
        .log_rules
        .iter()
        .map(|r| Regex::new(&r.pattern))
        .collect::<Result<_, _>>()
        .map_err(|e| IngestError::InvalidDescriptor {
            source_id: desc.source_id.clone(),
            reason: e.to_string(),
        })?;
    let mut out = String::with_capacity(text.len());
    for line in text.lines() {
        let Some((ri, caps)) = rules.iter().enumerate().find_map(|(i, re)| re.captures(line).map(|c| (i, c))) else {
            out.push_str(line);
            out.push('\n');
            continue;
        };
        let rule = &desc.log_rules[ri];
        let attr_caps: BTreeSet<&str> = rule.attr_value_captures.iter().filter_map(|c| c.attr_capture.as_deref()).collect();
        let mut edits: Vec<(usize, usize, String)> = Vec::new();
        for name in rules[ri].capture_names().flatten() {
            let Some(m) = caps.name(name) else { continue };
            if attr_caps.contains(name) {
                if let Some(new) = renames.get(&norm(m.as_str())) {
                    edits.push((m.start(), m.end(), new.clone()));
                }
                continue;
            }
            let kind = desc.canon_for(name);
            if reformat_rate > 0.0 && rng.gen_bool(reformat_rate) {
                if let Some(alt) = reformat_value(m.as_str(), &kind, dicts, rng) {
                    if rules[ri].is_match(&format!("{}{alt}{}", &line[..m.start()], &line[m.end()..])) {
                        edits.push((m.start(), m.end(), alt));
                    }
                }
            }
        }
        edits.sort_by(|a, b| b.0.cmp(&a.0));
        let mut l = line.to_string();
        for (s, e, new) in edits {
            l.replace_range(s..e, &new);
        }
        out.push_str(&l);
        out.push('\n');
    }
    Ok(out)
}

/// Predict a position for every cell and assemble the target table.
pub fn learned_integrate(
    model: &TrainedModel,
    cells: &[SuperCell],
    schema: &TargetSchema,
) -> Result<(TargetTable, Vec<AssembleError>), EvalError> {
    let positions: Vec<_> = cells.iter().map(|c| model.predict(c).position).collect();
    Ok(build_table(schema, cells.iter().zip(positions.iter()))?)
}

/// Integrate a scenario with the model and compare against its oracle.
pub fn learned_agreement(model: &TrainedModel, scenario: &Scenario) -> Result<TableAgreement, EvalError> {
    let cells = all_cells(scenario)?;
    let (table, _) = learned_integrate(model, &cells, &scenario.spec.target)?;
    let expected = scenario.oracle()?.finalize();
    Ok(compare_tables(&expected, &table.finalize(), scenario.spec.target.key_arity()))
}

pub fn all_cells(scenario: &Scenario) -> Result<Vec<SuperCell>, EvalError> {
    let corpora = scenario.decompose()?;
    let mut order: Vec<&str> = scenario.spec.sources.iter().map(|d| d.source_id.as_str()).collect();
    for k in corpora.keys() {
        if !order.contains(&k.as_str()) {
            order.push(k);
        }
    }
    Ok(order.iter().filter_map(|k| corpora.get(*k)).flatten().cloned().collect())
}

/// Whether a dictionary is available to the augmentation step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DictionaryMode {
    Local,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestVariant {
    pub name: String,
    pub plan: PerturbationPlan,
    /// Accuracy the variant is compared against in reports, if any.
    #[serde(default)]
    pub reference: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationConfig {
    pub variants: Vec<TestVariant>,
    pub with_augmentation: bool,
    pub dictionary: DictionaryMode,
    /// Training-time augmentation plan, used when `with_augmentation`.
    pub augmentation: PerturbationPlan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub samples: usize,
    pub accuracy: f64,
    pub reference: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub condition: String,
    pub training_samples: usize,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn accuracy_of(&self, variant: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.variant == variant).map(|r| r.accuracy)
    }
}

pub const ABLATION_HEADER: &str = "condition,variant,samples,accuracy,reference";

/// CSV with one row per condition and variant; accuracy in percent.
pub fn ablation_csv(reports: &[AblationReport]) -> String {
    let mut out = format!("{ABLATION_HEADER}\n");
    for r in reports {
        for row in &r.rows {
            let reference = row.reference.map(|x| format!("{x:.1}")).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{:.2},{}\n",
                r.condition,
                row.variant,
                row.samples,
                row.accuracy * 100.0,
                reference
            ));
        }
    }
    out
}

/// Training samples for one condition: the labeled training corpus, with
/// augmentation applied when requested.
pub fn training_samples(train: &Scenario, ablation: &AblationConfig) -> Result<Vec<LabeledSample>, EvalError> {
    let base = train.labeled()?;
    if !ablation.with_augmentation {
        return Ok(base);
    }
    let mut plan = ablation.augmentation.clone();
    if ablation.dictionary == DictionaryMode::None {
        plan.synonym_dict = None;
    }
    Ok(augment(&base, &plan, &train.spec, &train.dicts)?.samples)
}

pub fn condition_name(ablation: &AblationConfig) -> String {
    let aug = if ablation.with_augmentation { "augmented" } else { "plain" };
    match ablation.dictionary {
        DictionaryMode::Local => format!("{aug}+dictionary"),
        DictionaryMode::None => aug.to_string(),
    }
}

/// Train once for the condition, then score every test variant.
pub fn run_ablation(
    model_config: &TrainConfig,
    train: &Scenario,
    test: &Scenario,
    ablation: &AblationConfig,
) -> Result<(AblationReport, TrainedModel, TrainReport), EvalError> {
    let samples = training_samples(train, ablation)?;
    let (model, train_report) = train_model(&samples, train, model_config)?;
    let mut report = AblationReport {
        condition: condition_name(ablation),
        training_samples: samples.len(),
        rows: Vec::new(),
    };
    for v in &ablation.variants {
        let variant = apply_variant(test, &v.plan)?;
        let eval = variant.labeled()?;
        report.rows.push(AblationRow {
            variant: v.name.clone(),
            samples: eval.len(),
            accuracy: accuracy(&eval, &model)?,
            reference: v.reference,
        });
    }
    Ok((report, model, train_report))
}

pub fn train_model(
    samples: &[LabeledSample],
    scenario: &Scenario,
    config: &TrainConfig,
) -> Result<(TrainedModel, TrainReport), EvalError> {
    Ok(train(samples, &scenario.spec.target, scenario.spec.copy_slots(), config)?)
}

/// The incremental test variants: clean, irrelevant columns, growing numbers
/// of attribute renames, value format changes and key expansion.
pub fn standard_variants(seed: u64, attributes: usize, synonym_dict: Option<&str>) -> Vec<TestVariant> {
    let mut plan = PerturbationPlan::none(seed);
    plan.synonym_dict = synonym_dict.map(str::to_string);
    let mut out = vec![TestVariant {
        name: "clean".into(),
        plan: plan.clone(),
        reference: Some(99.9),
    }];
    plan.add_remove_noise_columns = 1;
    out.push(TestVariant {
        name: "irrelevant data".into(),
        plan: plan.clone(),
        reference: None,
    });
    let n = attributes.max(1) as f64;
    for k in [2usize, 4] {
        if k < attributes {
            plan.attr_rename_rate = k as f64 / n;
            out.push(TestVariant {
                name: format!("{k} attribute renames"),
                plan: plan.clone(),
                reference: None,
            });
        }
    }
    plan.attr_rename_rate = 1.0;
    plan.value_reformat_rate = 0.5;
    out.push(TestVariant {
        name: format!("{attributes} renames + value format"),
        plan: plan.clone(),
        reference: Some(97.5),
    });
    plan.key_expansion_rate = 0.3;
    out.push(TestVariant {
        name: "key expansion".into(),
        plan,
        reference: Some(96.4),
    });
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
    pub samples: usize,
    pub per_sample_seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub stages: Vec<StageTiming>,
}

impl TimingReport {
    pub fn record(&mut self, stage: &str, seconds: f64, samples: usize) {
        self.stages.push(StageTiming {
            stage: stage.into(),
            seconds,
            samples,
            per_sample_seconds: if samples == 0 { 0.0 } else { seconds / samples as f64 },
        });
    }

    /// Run `f`, recording its wall time against `stage`.
    pub fn time<T>(&mut self, stage: &str, samples: usize, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.record(stage, start.elapsed().as_secs_f64(), samples);
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).unwrap()
    }

    pub fn from_json(text: &str) -> Result<Self, EvalError> {
        serde_json::from_str(text).map_err(|e| EvalError::Io(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LshConfig {
    pub signature_len: usize,
    pub seed: u64,
    pub threshold: f64,
}

impl Default for LshConfig {
    fn default() -> Self {
        LshConfig {
            signature_len: crate::baseline::DEFAULT_SIGNATURE_LEN,
            seed: 0,
            threshold: crate::baseline::DEFAULT_THRESHOLD,
        }
    }
}

/// Outcome of the baseline on one corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRun {
    pub agreement: Option<f64>,
    pub no_match: Vec<String>,
    pub error: Option<String>,
    pub signature_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusComparison {
    pub corpus: String,
    pub cells: usize,
    pub learner_agreement: f64,
    pub baseline: BaselineRun,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub model_bytes: u64,
    pub corpora: Vec<CorpusComparison>,
}

/// Canonicalized tables of every tabular input; logs have no columns to
/// sign.
pub fn canon_tables(scenario: &Scenario) -> Result<Vec<CanonTable>, EvalError> {
    let mut out = Vec::new();
    for (i, input) in scenario.inputs.iter().enumerate() {
        if let SourceData::Table(t) = &input.data {
            let mut c = CanonTable::new(t, &input.descriptor, &scenario.dicts)?;
            if scenario.inputs.iter().filter(|j| j.descriptor.source_id == input.descriptor.source_id).count() > 1 {
                c.source_id = format!("{}#{i}", c.source_id);
            }
            out.push(c);
        }
    }
    Ok(out)
}

/// Run the baseline against a target example table.
pub fn run_baseline(
    scenario: &Scenario,
    target_example: &FinalTable,
    expected: &FinalTable,
    lsh: &LshConfig,
    timing: &mut TimingReport,
    label: &str,
) -> Result<BaselineRun, EvalError> {
    let tables = canon_tables(scenario)?;
    let columns: usize = tables.iter().map(|t| t.header.len()).sum();
    let sigs = timing.time(&format!("{label}/signature_build"), columns, || {
        build_signatures(&tables, lsh.signature_len, lsh.seed)
    });
    let report = timing.time(&format!("{label}/match"), columns, || {
        match_columns(&sigs, target_example, lsh.threshold, lsh.signature_len, lsh.seed)
    })?;
    let order: Vec<String> = tables.iter().map(|t| t.source_id.clone()).collect();
    let mut run = BaselineRun {
        agreement: None,
        no_match: report.no_match.clone(),
        error: None,
        signature_bytes: storage_report(&sigs),
    };
    let schema = &scenario.spec.target;
    let start = Instant::now();
    let joined = select_sources(&report, schema, &order)
        .and_then(|selected| baseline_integrate(&report, &selected, &tables, schema));
    let rows = tables.iter().map(|t| t.rows.len()).sum();
    timing.record(&format!("{label}/join"), start.elapsed().as_secs_f64(), rows);
    match joined {
        Ok(t) => {
            run.agreement = Some(compare_tables(expected, &t.finalize(), schema.key_arity()).fraction());
        }
        Err(e) => run.error = Some(e.to_string()),
    }
    Ok(run)
}

/// Learner pipeline and baseline on each corpus, scored against the
/// corpus's oracle. The baseline matches columns against `target_example`,
/// or against the corpus's own oracle table when none is given.
pub fn compare_baseline(
    model: &TrainedModel,
    corpora: &[(String, Scenario)],
    target_example: Option<&FinalTable>,
    lsh: &LshConfig,
    timing: &mut TimingReport,
) -> Result<ComparisonReport, EvalError> {
    let mut report = ComparisonReport {
        model_bytes: model.to_bytes().len() as u64,
        corpora: Vec::new(),
    };
    for (name, sc) in corpora {
        let start = Instant::now();
        let cells = all_cells(sc)?;
        timing.record(&format!("{name}/decompose"), start.elapsed().as_secs_f64(), cells.len());
        let expected = sc.oracle()?.finalize();
        let start = Instant::now();
        let positions: Vec<_> = cells.iter().map(|c| model.predict(c).position).collect();
        timing.record(&format!("{name}/predict"), start.elapsed().as_secs_f64(), cells.len());
        let start = Instant::now();
        let (table, _) = build_table(&sc.spec.target, cells.iter().zip(positions.iter()))?;
        let actual = table.finalize();
        timing.record(&format!("{name}/assemble"), start.elapsed().as_secs_f64(), cells.len());
        let learner_agreement = compare_tables(&expected, &actual, sc.spec.target.key_arity()).fraction();
        let baseline = run_baseline(sc, target_example.unwrap_or(&expected), &expected, lsh, timing, name)?;
        report.corpora.push(CorpusComparison {
            corpus: name.clone(),
            cells: cells.len(),
            learner_agreement,
            baseline,
        });
    }
    Ok(report)
}

/// `base/run-<hash>` where the hash covers the serialized config.
pub fn run_dir(base: &Path, config_json: &str) -> PathBuf {
    let digest = Sha256::digest(config_json.as_bytes());
    let hex: String = digest.iter().take(8).map(|b| format!("{b:02x}")).collect();
    base.join(format!("run-{hex}"))
}

/// Everything the eval suite needs; serialized into the run directory and
/// hashed into its name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    pub seed: u64,
    pub model: TrainConfig,
    pub augmentation: PerturbationPlan,
    pub lsh: LshConfig,
    /// Days per COVID window.
    pub days: usize,
}

impl SuiteConfig {
    /// Settings used by the shipped COVID evaluation.
    pub fn covid_default(seed: u64) -> Self {
        SuiteConfig {
            seed,
            model: covid_train_config(seed),
            augmentation: covid_augmentation(seed),
            lsh: LshConfig {
                seed,
                ..LshConfig::default()
            },
            days: 20,
        }
    }
}

pub fn covid_train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        buckets: 4096,
        dim: 16,
        hidden: 32,
        lr: 0.01,
        batch_size: 64,
        epochs: 8,
        seed,
        ..TrainConfig::default()
    }
}

pub fn log_train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        encoder: crate::learner::EncoderKind::BiRecurrent,
        buckets: 2048,
        dim: 16,
        hidden: 24,
        lr: 0.01,
        batch_size: 32,
        epochs: 12,
        seed,
        width_slots: None,
    }
}

pub fn log_augmentation(seed: u64) -> PerturbationPlan {
    PerturbationPlan {
        seed: seed.wrapping_add(202),
        attr_rename_rate: 0.8,
        char_noise_rate: 0.05,
        value_reformat_rate: 0.3,
        key_expansion_rate: 0.0,
        pivot_enabled: false,
        add_remove_noise_columns: 0,
        synonym_dict: Some("log_terms".into()),
        copies: 5,
    }
}

pub fn covid_augmentation(seed: u64) -> PerturbationPlan {
    PerturbationPlan {
        seed: seed.wrapping_add(101),
        attr_rename_rate: 0.8,
        char_noise_rate: 0.05,
        value_reformat_rate: 0.3,
        key_expansion_rate: 0.3,
        pivot_enabled: true,
        add_remove_noise_columns: crate::perturb::NOISE_COLUMNS.len(),
        synonym_dict: Some("covid_attributes".into()),
        copies: 5,
    }
}

/// Paths written by one suite run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuiteOutput {
    pub dir: PathBuf,
    pub ablation: PathBuf,
    pub comparison: PathBuf,
    pub timing: PathBuf,
    pub model: PathBuf,
}

/// Ablation with and without augmentation on the COVID fixture, then the
/// learner-vs-baseline comparison on clean, renamed and pivoted corpora.
/// Everything except `timing.json` is a pure function of the config.
pub fn run_suite(config: &SuiteConfig, base: &Path) -> Result<SuiteOutput, EvalError> {
    use crate::fixtures::{covid, covid_timeseries, Window};
    let config_json = serde_json::to_string_pretty(config).unwrap();
    let dir = run_dir(base, &config_json);
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("config.json"), &config_json)?;
    let mut timing = TimingReport::default();

    let train_w = Window {
        days: config.days,
        ..Window::TRAIN
    };
    let test_w = Window {
        days: config.days,
        ..Window::TEST
    };
    let train_sc = timing.time("fixtures", 0, || covid(config.seed, train_w));
    let test_sc = covid(config.seed.wrapping_add(1), test_w);
    let variants = standard_variants(config.seed.wrapping_add(7), 6, Some("covid_attributes"));

    let mut reports = Vec::new();
    let mut augmented_model = None;
    for with_augmentation in [true, false] {
        let ablation = AblationConfig {
            variants: variants.clone(),
            with_augmentation,
            dictionary: DictionaryMode::Local,
            augmentation: config.augmentation.clone(),
        };
        let start = Instant::now();
        let (report, model, train_report) = run_ablation(&config.model, &train_sc, &test_sc, &ablation)?;
        let epochs = train_report.curve.len().saturating_sub(1).max(1);
        timing.record(
            &format!("{}/train_per_epoch", report.condition),
            start.elapsed().as_secs_f64() / epochs as f64,
            report.training_samples,
        );
        if with_augmentation {
            augmented_model = Some(model);
        }
        reports.push(report);
    }
    let ablation = dir.join("ablation.csv");
    fs::write(&ablation, ablation_csv(&reports))?;
    let model = augmented_model.expect("augmented condition ran");
    let model_path = dir.join("model.bin");
    model.save(&model_path)?;

    let renamed = apply_variant(&test_sc, &variants[variants.len() - 2].plan)?;
    let mut corpora = vec![("clean".to_string(), test_sc.clone()), ("renamed".to_string(), renamed)];
    let pivot = PerturbationPlan {
        pivot_enabled: true,
        ..PerturbationPlan::none(config.seed)
    };
    corpora.push(("pivoted".to_string(), apply_variant(&test_sc, &pivot)?));
    let comparison = compare_baseline(&model, &corpora, None, &config.lsh, &mut timing)?;

    // time-series corpus: only the learner sees it as the same task
    let ts_train = covid_timeseries(config.seed, train_w)?;
    let ts_test = covid_timeseries(config.seed.wrapping_add(1), test_w)?;
    let ts_ablation = AblationConfig {
        variants: Vec::new(),
        with_augmentation: true,
        dictionary: DictionaryMode::Local,
        augmentation: config.augmentation.clone(),
    };
    let ts_samples = training_samples(&ts_train, &ts_ablation)?;
    let (ts_model, _) = train_model(&ts_samples, &ts_train, &config.model)?;
    let ts_cmp = compare_baseline(
        &ts_model,
        &[("timeseries".to_string(), ts_test)],
        None,
        &config.lsh,
        &mut timing,
    )?;
    let mut all = comparison;
    all.corpora.extend(ts_cmp.corpora);

    let comparison = dir.join("comparison.json");
    fs::write(&comparison, serde_json::to_string_pretty(&all).unwrap())?;
    let timing_path = dir.join("timing.json");
    fs::write(&timing_path, timing.to_json())?;
    Ok(SuiteOutput {
        dir,
        ablation,
        comparison,
        timing: timing_path,
        model: model_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{covid, machine_logs, Window};
    use crate::mapping::consistency_check;

    fn small() -> Window {
        Window {
            days: 3,
            ..Window::TRAIN
        }
    }

    #[test]
    fn variant_noop_keeps_scenario() {
        let sc = covid(0, small());
        let v = apply_variant(&sc, &PerturbationPlan::none(3)).unwrap();
        assert_eq!(v.inputs, sc.inputs);
        assert_eq!(v.spec, sc.spec);
    }

    #[test]
    fn renamed_variant_keeps_oracle() {
        let sc = covid(0, small());
        let mut plan = PerturbationPlan::none(5);
        plan.attr_rename_rate = 1.0;
        plan.value_reformat_rate = 0.5;
        plan.add_remove_noise_columns = 2;
        plan.synonym_dict = Some("covid_attributes".into());
        let v = apply_variant(&sc, &plan).unwrap();
        let SourceData::Table(t) = &v.inputs[0].data else { panic!() };
        assert!(!t.header.iter().any(|h| h == "Confirmed"));
        assert_eq!(t.header.len(), 8);
        let a = compare_tables(&sc.oracle().unwrap().finalize(), &v.oracle().unwrap().finalize(), 3);
        assert_eq!(a.fraction(), 1.0);
        let corpora = v.decompose().unwrap();
        assert_eq!(consistency_check(&v.spec, &corpora, &v.dicts).unwrap().fraction(), 1.0);
    }

    #[test]
    fn expanded_and_pivoted_variants_keep_oracle() {
        let sc = covid(1, small());
        let expected = sc.oracle().unwrap().finalize();
        let mut plan = PerturbationPlan::none(9);
        plan.key_expansion_rate = 0.5;
        let v = apply_variant(&sc, &plan).unwrap();
        assert!(v.inputs[0].descriptor.child_key_column.is_some());
        assert_eq!(compare_tables(&expected, &v.oracle().unwrap().finalize(), 3).fraction(), 1.0);

        plan = PerturbationPlan::none(9);
        plan.pivot_enabled = true;
        let v = apply_variant(&sc, &plan).unwrap();
        assert!(v.inputs.len() > 2);
        assert_eq!(compare_tables(&expected, &v.oracle().unwrap().finalize(), 3).fraction(), 1.0);
    }

    #[test]
    fn log_variant_renames_terms_in_text() {
        let sc = machine_logs(2, 1, 4, 8);
        let mut plan = PerturbationPlan::none(11);
        plan.attr_rename_rate = 1.0;
        plan.value_reformat_rate = 1.0;
        plan.synonym_dict = Some("log_terms".into());
        let v = apply_variant(&sc, &plan).unwrap();
        let SourceData::Log(text) = &v.inputs[1].data else { panic!() };
        assert!(!text.contains(" us,"), "{text}");
        let expected = sc.oracle().unwrap().finalize();
        assert_eq!(compare_tables(&expected, &v.oracle().unwrap().finalize(), 2).fraction(), 1.0);
    }

    #[test]
    fn empty_variant_list_gives_header_only() {
        assert_eq!(ablation_csv(&[]), format!("{ABLATION_HEADER}\n"));
        let r = AblationReport {
            condition: "plain".into(),
            training_samples: 0,
            rows: Vec::new(),
        };
        assert_eq!(ablation_csv(&[r]), format!("{ABLATION_HEADER}\n"));
    }

    #[test]
    fn timing_report_round_trips() {
        let mut t = TimingReport::default();
        t.record("predict", 2.0, 4);
        t.record("assemble", 0.0, 0);
        assert_eq!(t.stages[0].per_sample_seconds, 0.5);
        assert!(t.stages.iter().all(|s| s.seconds >= 0.0));
        assert_eq!(TimingReport::from_json(&t.to_json()).unwrap(), t);
    }

    #[test]
    fn run_dir_depends_on_config() {
        let a = run_dir(Path::new("/x"), "{\"seed\":1}");
        assert_eq!(a, run_dir(Path::new("/x"), "{\"seed\":1}"));
        assert_ne!(a, run_dir(Path::new("/x"), "{\"seed\":2}"));
        assert!(a.file_name().unwrap().to_str().unwrap().starts_with("run-"));
    }

    #[test]
    fn standard_variants_are_incremental() {
        let v = standard_variants(1, 6, Some("covid_attributes"));
        let names: Vec<&str> = v.iter().map(|v| v.name.as_str()).collect();
        assert_eq!(
            names,
            [
                "clean",
                "irrelevant data",
                "2 attribute renames",
                "4 attribute renames",
                "6 renames + value format",
                "key expansion"
            ]
        );
        for w in v.windows(2) {
            assert!(w[1].plan.attr_rename_rate >= w[0].plan.attr_rename_rate);
            assert!(w[1].plan.add_remove_noise_columns >= w[0].plan.add_remove_noise_columns);
        }
    }
}
