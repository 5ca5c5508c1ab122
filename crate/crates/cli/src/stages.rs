use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::Serialize;
use supercell::assemble::{compare_tables, finalize_and_write, FinalTable};
use supercell::baseline::{
    baseline_integrate, build_signatures, match_columns, select_sources, storage_report, write_signature_store,
};
use supercell::eval::*;
use supercell::fixtures::{covid, machine_logs, Scenario, ScenarioFiles, Window};
use supercell::learner::{gradient_check, write_loss_curve, EncoderKind, TrainedModel};
use supercell::mapping::{check_samples, generate_training_data, oracle_integrate, Corpora, LabeledSample};
use supercell::model::{read_json_lines, write_json_lines, SuperCell, TargetPosition};
use supercell::perturb::{augment, write_log, PerturbationPlan};

use crate::config::RunConfig;
use crate::CliError;

pub const CELLS: &str = "supercells.jsonl";
pub const TRAIN: &str = "train.jsonl";
pub const AUGMENTED: &str = "augmented.jsonl";
pub const ORACLE: &str = "oracle.csv";
pub const INTEGRATED: &str = "integrated.csv";
const GRADIENT_TOLERANCE: f64 = 1e-3;

fn data<E: std::fmt::Display>(path: &Path) -> impl Fn(E) -> CliError + '_ {
    move |e| CliError::Data(format!("{}: {e}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    fs::write(path, serde_json::to_string_pretty(value).unwrap()).map_err(data(path))
}

fn write_lines<T: Serialize>(path: &Path, items: &[T]) -> Result<(), CliError> {
    let f = File::create(path).map_err(data(path))?;
    write_json_lines(items, BufWriter::new(f)).map_err(data(path))
}

fn read_lines<T: for<'de> serde::Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CliError> {
    let f = File::open(path).map_err(data(path))?;
    read_json_lines(BufReader::new(f)).map_err(data(path))
}

pub fn load_scenario(path: &Path) -> Result<Scenario, CliError> {
    let text = fs::read_to_string(path).map_err(data(path))?;
    let files: ScenarioFiles = serde_json::from_str(&text).map_err(data(path))?;
    Ok(files.load(path.parent().unwrap_or(Path::new(".")))?)
}

fn load_plan(cfg: &RunConfig) -> Result<PerturbationPlan, CliError> {
    let path = cfg.require(&cfg.plan, "plan")?;
    let text = fs::read_to_string(path).map_err(data(path))?;
    let mut plan: PerturbationPlan =
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    if let Some(seed) = cfg.seed {
        plan.seed = seed;
    }
    plan.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(plan)
}

fn model_path(cfg: &RunConfig, out: &Path) -> PathBuf {
    cfg.model.clone().unwrap_or_else(|| out.join("model.bin"))
}

/// Cells grouped by source in file order, the shape the mapping stage expects.
pub fn corpora_of(cells: &[SuperCell]) -> Corpora {
    let mut corpora = Corpora::new();
    for c in cells {
        corpora.entry(c.source_id.clone()).or_default().push(c.clone());
    }
    corpora
}

pub fn decompose(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let sc = load_scenario(cfg.require(&cfg.scenario, "scenario")?)?;
    let cells = all_cells(&sc)?;
    write_lines(&out.join(CELLS), &cells)?;
    info!("decompose: {} super cells from {} inputs", cells.len(), sc.inputs.len());
    Ok(())
}

pub fn gen_train(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let sc = load_scenario(cfg.require(&cfg.scenario, "scenario")?)?;
    let cells: Vec<SuperCell> = read_lines(&out.join(CELLS))?;
    let corpora = corpora_of(&cells);
    let samples = generate_training_data(&sc.spec, &corpora, &sc.dicts)?;
    let oracle = oracle_integrate(&sc.spec, &corpora, &sc.dicts)?;
    let agreement = check_samples(&sc.spec.target, &samples, &oracle.finalize())?;
    if agreement.matching != agreement.total {
        return Err(CliError::Internal(format!(
            "labels reproduce {}/{} oracle cells",
            agreement.matching, agreement.total
        )));
    }
    write_lines(&out.join(TRAIN), &samples)?;
    finalize_and_write(&oracle, &out.join(ORACLE)).map_err(EvalError::from)?;
    info!("gen-train: {} labeled samples, oracle has {} rows", samples.len(), oracle.row_count());
    Ok(())
}

pub fn augment_stage(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let sc = load_scenario(cfg.require(&cfg.scenario, "scenario")?)?;
    let plan = load_plan(cfg)?;
    let samples: Vec<LabeledSample> = read_lines(&out.join(TRAIN))?;
    let aug = augment(&samples, &plan, &sc.spec, &sc.dicts).map_err(EvalError::from)?;
    write_lines(&out.join(AUGMENTED), &aug.samples)?;
    let log_path = out.join("perturb_log.jsonl");
    write_log(&aug.log, BufWriter::new(File::create(&log_path).map_err(data(&log_path))?)).map_err(data(&log_path))?;
    write_json(&out.join("augment_stats.json"), &aug.stats)?;
    info!("augment: {} -> {} samples", samples.len(), aug.samples.len());
    Ok(())
}

pub fn train_stage(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let sc = load_scenario(cfg.require(&cfg.scenario, "scenario")?)?;
    let input = [AUGMENTED, TRAIN]
        .iter()
        .map(|f| out.join(f))
        .find(|p| p.exists())
        .ok_or_else(|| CliError::Data(format!("no {AUGMENTED} or {TRAIN} in {}", out.display())))?;
    info!("train: reading {}", input.display());
    let samples: Vec<LabeledSample> = read_lines(&input)?;
    let (model, report) = train_model(&samples, &sc, &cfg.train)?;
    let path = model_path(cfg, out);
    model.save(&path).map_err(EvalError::from)?;
    let curve = out.join("loss_curve.csv");
    write_loss_curve(&report.curve, File::create(&curve).map_err(data(&curve))?).map_err(EvalError::from)?;
    write_json(&out.join("train_report.json"), &report)?;
    if let Some(last) = report.curve.last() {
        info!("train: loss {:.4}, train accuracy {:.4}", last.loss, last.train_acc);
    }
    Ok(())
}

pub fn integrate(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let sc = load_scenario(cfg.require(&cfg.scenario, "scenario")?)?;
    let model = TrainedModel::load(&model_path(cfg, out)).map_err(EvalError::from)?;
    let cells: Vec<SuperCell> = read_lines(&out.join(CELLS))?;
    let positions: Vec<TargetPosition> = cells.iter().map(|c| model.predict(c).position).collect();
    write_lines(&out.join("predictions.jsonl"), &positions)?;
    let (table, errors) = learned_integrate(&model, &cells, &sc.spec.target)?;
    if !errors.is_empty() {
        warn!("integrate: {} cells skipped during assembly", errors.len());
    }
    let report = finalize_and_write(&table, &out.join(INTEGRATED)).map_err(EvalError::from)?;
    write_json(&out.join("assembly_report.json"), &report)?;
    let oracle = out.join(ORACLE);
    if oracle.exists() {
        let text = fs::read_to_string(&oracle).map_err(data(&oracle))?;
        let expected = FinalTable::read_csv(&text).map_err(EvalError::from)?;
        let agreement = compare_tables(&expected, &table.finalize(), sc.spec.target.key_arity());
        info!("integrate: {}/{} cells match the oracle", agreement.matching, agreement.total);
        write_json(&out.join("agreement.json"), &agreement)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct BaselineReport {
    signature_bytes: u64,
    selected: Vec<String>,
    error: Option<String>,
    agreement: Option<f64>,
}

pub fn baseline(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let sc = load_scenario(cfg.require(&cfg.scenario, "scenario")?)?;
    let tables = canon_tables(&sc)?;
    let sigs = build_signatures(&tables, cfg.lsh.signature_len, cfg.lsh.seed);
    write_signature_store(&sigs, &out.join("signatures.bin"), &out.join("signatures.json")).map_err(EvalError::from)?;
    let oracle = sc.oracle()?.finalize();
    let example = match &cfg.target_example {
        Some(p) => FinalTable::read_csv(&fs::read_to_string(p).map_err(data(p))?).map_err(EvalError::from)?,
        None => oracle.clone(),
    };
    let matches = match_columns(&sigs, &example, cfg.lsh.threshold, cfg.lsh.signature_len, cfg.lsh.seed)
        .map_err(EvalError::from)?;
    write_json(&out.join("match_report.json"), &matches)?;
    let order: Vec<String> = tables.iter().map(|t| t.source_id.clone()).collect();
    let schema = &sc.spec.target;
    let mut report = BaselineReport {
        signature_bytes: storage_report(&sigs),
        selected: Vec::new(),
        error: None,
        agreement: None,
    };
    let joined = select_sources(&matches, schema, &order).and_then(|selected| {
        report.selected = selected.clone();
        baseline_integrate(&matches, &selected, &tables, schema)
    });
    match joined {
        Ok(t) => {
            finalize_and_write(&t, &out.join("baseline.csv")).map_err(EvalError::from)?;
            report.agreement = Some(compare_tables(&oracle, &t.finalize(), schema.key_arity()).fraction());
        }
        Err(e) => {
            // the baseline failing on a schema change is a result, not a crash
            warn!("baseline: {e}");
            report.error = Some(e.to_string());
        }
    }
    info!("baseline: unmatched attributes {:?}", matches.no_match);
    write_json(&out.join("baseline_report.json"), &report)
}

pub fn eval(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let mut suite = SuiteConfig::covid_default(cfg.seed.unwrap_or(0));
    if let Some(days) = cfg.eval_days {
        suite.days = days;
    }
    let o = run_suite(&suite, out)?;
    info!("eval: reports in {}", o.dir.display());
    Ok(())
}

pub fn ablate(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let train = load_scenario(cfg.require(&cfg.scenario, "scenario")?)?;
    let test = load_scenario(cfg.require(&cfg.test_scenario, "test_scenario")?)?;
    let plan = load_plan(cfg)?;
    let variants = standard_variants(
        plan.seed.wrapping_add(7),
        test.spec.target.value_attributes().len(),
        plan.synonym_dict.as_deref(),
    );
    let mut reports = Vec::new();
    for with_augmentation in [true, false] {
        let ablation = AblationConfig {
            variants: variants.clone(),
            with_augmentation,
            dictionary: DictionaryMode::Local,
            augmentation: plan.clone(),
        };
        let (report, _, _) = run_ablation(&cfg.train, &train, &test, &ablation)?;
        for row in &report.rows {
            info!("ablate: {} / {}: {:.2}%", report.condition, row.variant, row.accuracy * 100.0);
        }
        reports.push(report);
    }
    fs::write(out.join("ablation.csv"), ablation_csv(&reports)).map_err(data(out))
}

#[derive(Serialize)]
struct GradCheck {
    encoder: EncoderKind,
    seed: u64,
    max_relative_error: f64,
}

pub fn gradcheck(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let base = cfg.seed.unwrap_or(0);
    let mut rows = Vec::new();
    for encoder in [EncoderKind::Pooled, EncoderKind::BiRecurrent] {
        for seed in base..base + 20 {
            rows.push(GradCheck {
                encoder,
                seed,
                max_relative_error: gradient_check(encoder, seed),
            });
        }
    }
    write_json(&out.join("gradcheck.json"), &rows)?;
    let worst = rows.iter().map(|r| r.max_relative_error).fold(0.0, f64::max);
    info!("gradcheck: max relative error {worst:.3e}");
    if worst >= GRADIENT_TOLERANCE {
        return Err(CliError::Internal(format!("gradient check failed: {worst:.3e}")));
    }
    Ok(())
}

/// Write the shipped fixtures as plain files together with ready-to-run
/// configs.
pub fn fixtures(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let seed = cfg.seed.unwrap_or(0);
    let scenarios = [
        ("covid-train", covid(seed, Window::TRAIN)),
        ("covid-test", covid(seed.wrapping_add(1), Window::TEST)),
        ("logs-train", machine_logs(seed, 3, 30, 9)),
        ("logs-test", machine_logs(seed.wrapping_add(1), 3, 30, 14)),
    ];
    for (name, sc) in &scenarios {
        sc.write_dir(&out.join(name)).map_err(data(out))?;
    }
    write_json(&out.join("covid_plan.json"), &covid_augmentation(seed))?;
    write_json(&out.join("log_plan.json"), &log_augmentation(seed))?;
    for (name, train, plan, model) in [
        ("covid", "covid-train", "covid_plan.json", covid_train_config(seed)),
        ("logs", "logs-train", "log_plan.json", log_train_config(seed)),
    ] {
        let test = train.replace("train", "test");
        let run = RunConfig {
            scenario: Some(format!("{train}/scenario.json").into()),
            test_scenario: Some(format!("{test}/scenario.json").into()),
            plan: Some(plan.into()),
            out: Some(format!("runs/{name}").into()),
            seed: Some(seed),
            train: model,
            ..RunConfig::default()
        };
        write_json(&out.join(format!("{name}.json")), &run)?;
    }
    info!("fixtures: wrote {} scenarios to {}", scenarios.len(), out.display());
    Ok(())
}
