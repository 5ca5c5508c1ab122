//! Acceptance gates. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any gate fails.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use supercell::assemble::TargetTable;
use supercell::baseline::{
    build_signatures, estimate_jaccard, exact_jaccard, signature_of_set, storage_report, write_signature_store,
    CanonTable,
};
use supercell::eval::*;
use supercell::fixtures::{covid, machine_logs, wide_table, Window};
use supercell::ingest::{decompose, Dictionaries, RawTable, SourceDescriptor};
use supercell::learner::{gradient_check, EncoderKind, TrainedModel};
use supercell::model::{AggMode, KeyEntry, SuperCell, TargetPosition, TargetSchema};
use supercell::perturb::{pivot_table, reorder_columns, rng_for, PerturbationPlan};

const SEED: u64 = 0;
const RUNTIME_LIMIT_S: f64 = 180.0;

struct Suite {
    first: SuiteOutput,
    second: SuiteOutput,
    seconds: f64,
    model: TrainedModel,
    comparison: ComparisonReport,
    ablation: BTreeMap<(String, String), f64>,
    _dirs: (tempfile::TempDir, tempfile::TempDir),
}

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn run_suites() -> Result<Suite, String> {
    let config = SuiteConfig::covid_default(SEED);
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let start = Instant::now();
    let first = run_suite(&config, a.path()).map_err(|e| e.to_string())?;
    let seconds = start.elapsed().as_secs_f64();
    let second = run_suite(&config, b.path()).map_err(|e| e.to_string())?;
    let model = TrainedModel::load(&first.model).map_err(|e| e.to_string())?;
    let comparison: ComparisonReport =
        serde_json::from_str(&std::fs::read_to_string(&first.comparison).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    let text = std::fs::read_to_string(&first.ablation).map_err(|e| e.to_string())?;
    let mut ablation = BTreeMap::new();
    let mut lines = text.lines();
    if lines.next() != Some(ABLATION_HEADER) {
        return Err("ablation.csv header mismatch".into());
    }
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        let acc: f64 = f[3].parse().map_err(|_| format!("bad accuracy in {line:?}"))?;
        ablation.insert((f[0].to_string(), f[1].to_string()), acc);
    }
    Ok(Suite {
        first,
        second,
        seconds,
        model,
        comparison,
        ablation,
        _dirs: (a, b),
    })
}

fn corpus<'a>(s: &'a Suite, name: &str) -> Result<&'a CorpusComparison, String> {
    s.comparison
        .corpora
        .iter()
        .find(|c| c.corpus == name)
        .ok_or_else(|| format!("no {name} corpus in comparison report"))
}

fn oracle_equivalence(s: &Suite) -> Outcome {
    let test = covid(SEED + 1, Window::TEST);
    let a = learned_agreement(&s.model, &test).map_err(|e| e.to_string())?;
    check(
        a.fraction() >= 0.99 && s.seconds < RUNTIME_LIMIT_S,
        format!(
            "{}/{} cells identical ({:.4}), suite runtime {:.1}s",
            a.matching,
            a.total,
            a.fraction(),
            s.seconds
        ),
    )
}

fn robustness(s: &Suite) -> Outcome {
    let get = |cond: &str, variant: &str| {
        s.ablation
            .get(&(cond.to_string(), variant.to_string()))
            .copied()
            .ok_or_else(|| format!("missing ablation row {cond}/{variant}"))
    };
    let aug_clean = get("augmented+dictionary", "clean")?;
    let aug_hard = get("augmented+dictionary", "6 renames + value format")?;
    let plain_clean = get("plain+dictionary", "clean")?;
    let plain_hard = get("plain+dictionary", "6 renames + value format")?;
    let aug_exp = get("augmented+dictionary", "key expansion")?;
    check(
        aug_hard >= 95.0 && aug_clean - aug_hard <= 5.0 && plain_clean - plain_hard >= 10.0 && aug_exp >= 90.0,
        format!(
            "augmented clean {aug_clean:.2} rename+format {aug_hard:.2} expansion {aug_exp:.2}; \
             plain clean {plain_clean:.2} rename+format {plain_hard:.2}"
        ),
    )
}

fn random_keyed_table<R: Rng>(rng: &mut R) -> (RawTable, SourceDescriptor) {
    let q = rng.gen_range(2..=3);
    let m = rng.gen_range(1..=4);
    let keys: Vec<String> = (0..q).map(|i| format!("key{i}")).collect();
    let mut header = keys.clone();
    header.extend((0..m).map(|i| format!("val{i}")));
    let rows_outer = rng.gen_range(1..=5);
    let axis = rng.gen_range(1..=5);
    let mut rows = Vec::new();
    for r in 0..rows_outer {
        for a in 0..axis {
            if rng.gen_bool(0.2) {
                continue;
            }
            let mut row: Vec<String> = (0..q - 1).map(|i| format!("r{r}x{i}")).collect();
            row.push(format!("d{a}"));
            for _ in 0..m {
                row.push(if rng.gen_bool(0.15) {
                    String::new()
                } else {
                    format!("{}.{}", rng.gen_range(0..1000), rng.gen_range(0..10))
                });
            }
            rows.push(row);
        }
    }
    rows.shuffle(rng);
    let refs: Vec<&str> = keys.iter().map(String::as_str).collect();
    (RawTable::new(header, rows), SourceDescriptor::csv("t", &refs))
}

fn multiset(cells: &[SuperCell]) -> BTreeMap<(Vec<String>, Vec<String>, Vec<String>), usize> {
    let mut m = BTreeMap::new();
    for c in cells {
        *m.entry(c.content()).or_insert(0) += 1;
    }
    m
}

fn predictions(model: &TrainedModel, cells: &[SuperCell]) -> BTreeMap<(Vec<String>, Vec<String>, Vec<String>), TargetPosition> {
    cells.iter().map(|c| (c.content(), model.predict(c).position)).collect()
}

fn pivot_reorder_invariance(s: &Suite) -> Outcome {
    let dicts = Dictionaries::new();
    let mut rng = rng_for(SEED + 3);
    for t in 0..100 {
        let (table, desc) = random_keyed_table(&mut rng);
        let base = decompose(&table, &desc, &dicts).map_err(|e| e.to_string())?.cells;
        let axis = desc.key_columns.last().unwrap().clone();
        let mut pivoted = Vec::new();
        for (pt, pd) in pivot_table(&table, &desc, &axis).map_err(|e| e.to_string())? {
            pivoted.extend(decompose(&pt, &pd, &dicts).map_err(|e| e.to_string())?.cells);
        }
        let reordered = decompose(&reorder_columns(&table, t), &desc, &dicts)
            .map_err(|e| e.to_string())?
            .cells;
        let want = multiset(&base);
        if multiset(&pivoted) != want || multiset(&reordered) != want {
            return Err(format!("table {t}: super cell multisets differ"));
        }
        let p = predictions(&s.model, &base);
        if predictions(&s.model, &pivoted) != p || predictions(&s.model, &reordered) != p {
            return Err(format!("table {t}: predictions differ"));
        }
    }
    Ok("100 tables: pivoted and reordered decompositions and predictions match".into())
}

fn gradients() -> Outcome {
    let mut worst: f64 = 0.0;
    for encoder in [EncoderKind::Pooled, EncoderKind::BiRecurrent] {
        for seed in 0..20 {
            worst = worst.max(gradient_check(encoder, seed));
        }
    }
    check(worst < 1e-3, format!("max relative error {worst:.2e} over 40 models"))
}

fn render_thousandths(v: i128, scale: u32) -> String {
    let div = 10i128.pow(scale);
    let sign = if v < 0 { "-" } else { "" };
    let a = v.abs();
    let frac = format!("{:0width$}", a % div, width = scale as usize);
    let frac = frac.trim_end_matches('0');
    if a == 0 {
        "0".into()
    } else if frac.is_empty() {
        format!("{sign}{}", a / div)
    } else {
        format!("{sign}{}.{frac}", a / div)
    }
}

fn brute_force(mode: AggMode, raw: &[String], milli: &[i128]) -> String {
    let total: i128 = milli.iter().sum();
    match mode {
        AggMode::Sum => render_thousandths(total, 3),
        AggMode::Min => render_thousandths(*milli.iter().min().unwrap(), 3),
        AggMode::Max => render_thousandths(*milli.iter().max().unwrap(), 3),
        AggMode::Count => raw.len().to_string(),
        AggMode::Avg => {
            let num = total * 1000;
            let den = milli.len() as i128;
            let (mut q, r) = (num.abs() / den, num.abs() % den);
            if 2 * r > den || (2 * r == den && q % 2 == 1) {
                q += 1;
            }
            render_thousandths(if num < 0 { -q } else { q }, 6)
        }
        AggMode::Replace => raw.last().unwrap().clone(),
        AggMode::Discard => raw[0].clone(),
        AggMode::Concat => raw.join("|"),
    }
}

fn assembled(mode: AggMode, raw: &[String]) -> Result<String, String> {
    let schema = TargetSchema {
        attributes: vec!["k".into(), "x".into()],
        key_attributes: vec!["k".into()],
        key_domains: BTreeMap::new(),
    };
    let mut table = TargetTable::new(schema);
    let pos = TargetPosition {
        keys: vec![KeyEntry::value("row")],
        attributes: vec![Some("x".into())],
        agg_mode: mode,
    };
    for (i, v) in raw.iter().enumerate() {
        let cell = SuperCell::new("s", vec!["row".into()], vec!["a".into()], vec![v.clone()], i as u64);
        let out = table.apply(&cell, &pos).map_err(|e| e.to_string())?;
        if !out.errors.is_empty() {
            return Err(format!("{:?}", out.errors));
        }
    }
    Ok(table.cell(&["row".to_string()], "x").ok_or("cell missing")?.render())
}

fn aggregation() -> Outcome {
    let mut rng = rng_for(SEED + 5);
    let words = ["alpha", "beta", "gamma", "delta", "x", "7", "n/a"];
    for mode in AggMode::ALL {
        for seq in 0..1000 {
            let n = rng.gen_range(1..=12);
            let milli: Vec<i128> = (0..n).map(|_| rng.gen_range(-99_999i128..=99_999)).collect();
            let raw: Vec<String> = if mode.is_numeric() {
                milli.iter().map(|&m| render_thousandths(m, 3)).collect()
            } else {
                (0..n).map(|_| words.choose(&mut rng).unwrap().to_string()).collect()
            };
            let want = brute_force(mode, &raw, &milli);
            let got = assembled(mode, &raw)?;
            if got != want {
                return Err(format!("{mode} sequence {seq}: got {got:?}, expected {want:?} for {raw:?}"));
            }
            if mode.is_commutative() {
                let mut shuffled = raw.clone();
                shuffled.shuffle(&mut rng);
                let again = assembled(mode, &shuffled)?;
                if again != got {
                    return Err(format!("{mode} sequence {seq}: permutation changed {got:?} to {again:?}"));
                }
            }
        }
    }
    Ok("8 modes x 1000 sequences match brute force; commutative modes permutation-invariant".into())
}

fn minhash() -> Outcome {
    let l = 128;
    let mut rng = rng_for(SEED + 6);
    let (mut err, mut bound) = (0.0, 0.0);
    for pair in 0..500u64 {
        let shared = rng.gen_range(0..60);
        let only_a = rng.gen_range(0..60);
        let only_b = rng.gen_range(0..60);
        let mut a: HashSet<String> = (0..shared).map(|i| format!("s{pair}-{i}")).collect();
        let mut b = a.clone();
        a.extend((0..only_a).map(|i| format!("a{pair}-{i}")));
        b.extend((0..only_b).map(|i| format!("b{pair}-{i}")));
        if a.is_empty() || b.is_empty() {
            a.insert("pad".into());
            b.insert("pad".into());
        }
        let j = exact_jaccard(&a, &b);
        let est = estimate_jaccard(&signature_of_set(&a, l, pair), &signature_of_set(&b, l, pair))
            .map_err(|e| e.to_string())?;
        err += (est - j).abs();
        bound += 2.0 * (j * (1.0 - j) / l as f64).sqrt();
    }
    let (mae, bound) = (err / 500.0, bound / 500.0);

    let (table, desc) = wide_table(SEED, 470, 200);
    let canon = CanonTable::new(&table, &desc, &supercell::fixtures::covid_dictionaries()).map_err(|e| e.to_string())?;
    let bytes = storage_report(&build_signatures(&[canon], 512, SEED));
    check(
        mae <= bound && bytes == 470 * 512 * 4 && bytes / 1024 == 940,
        format!("MAE {mae:.4} <= bound {bound:.4} at L={l}; 470 columns at L=512 take {bytes} bytes = {} KB", bytes / 1024),
    )
}

fn baseline_fragility(s: &Suite) -> Outcome {
    let ts = corpus(s, "timeseries")?;
    let pv = corpus(s, "pivoted")?;
    let pivot_unmatched = ts.baseline.no_match.iter().any(|a| a == "date");
    let pivoted_fails = pv.baseline.error.is_some() || pv.baseline.agreement.is_some_and(|a| a < 0.99);
    check(
        pivot_unmatched && ts.learner_agreement >= 0.99 && pivoted_fails && pv.learner_agreement >= 0.99,
        format!(
            "timeseries: baseline unmatched {:?}, learner {:.4}; pivoted: baseline {}, learner {:.4}",
            ts.baseline.no_match,
            ts.learner_agreement,
            pv.baseline.error.clone().unwrap_or_else(|| format!("{:?}", pv.baseline.agreement)),
            pv.learner_agreement
        ),
    )
}

fn storage(s: &Suite) -> Outcome {
    let model_bytes = std::fs::metadata(&s.first.model).map_err(|e| e.to_string())?.len();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (table, desc) = wide_table(SEED, 470, 1000);
    let canon = CanonTable::new(&table, &desc, &supercell::fixtures::covid_dictionaries()).map_err(|e| e.to_string())?;
    let sigs = build_signatures(&[canon], 512, SEED);
    let store = write_signature_store(&sigs, &dir.path().join("sig.bin"), &dir.path().join("sig.json"))
        .map_err(|e| e.to_string())?;
    check(
        model_bytes < 1_000_000 && model_bytes < store,
        format!("model {model_bytes} bytes, signature store {store} bytes"),
    )
}

fn same_bytes(a: &Path, b: &Path) -> Result<bool, String> {
    Ok(std::fs::read(a).map_err(|e| e.to_string())? == std::fs::read(b).map_err(|e| e.to_string())?)
}

fn determinism(s: &Suite) -> Outcome {
    let (a, b) = (&s.first, &s.second);
    let mut differing = Vec::new();
    if a.dir.file_name() != b.dir.file_name() {
        differing.push("run directory".to_string());
    }
    for name in ["config.json", "ablation.csv", "comparison.json", "model.bin"] {
        if !same_bytes(&a.dir.join(name), &b.dir.join(name))? {
            differing.push(name.to_string());
        }
    }
    check(
        differing.is_empty(),
        if differing.is_empty() {
            "two runs produced identical reports and model".into()
        } else {
            format!("differs: {}", differing.join(", "))
        },
    )
}

fn machine_log_union() -> Outcome {
    let train = machine_logs(SEED, 3, 30, 9);
    let test = machine_logs(SEED + 1, 3, 30, 14);
    let ablation = AblationConfig {
        variants: Vec::new(),
        with_augmentation: true,
        dictionary: DictionaryMode::Local,
        augmentation: log_augmentation(SEED),
    };
    let samples = training_samples(&train, &ablation).map_err(|e| e.to_string())?;
    let (model, _) = train_model(&samples, &train, &log_train_config(SEED)).map_err(|e| e.to_string())?;
    let clean = learned_agreement(&model, &test).map_err(|e| e.to_string())?;
    let mut plan = PerturbationPlan::none(SEED + 9);
    plan.attr_rename_rate = 1.0;
    plan.value_reformat_rate = 0.5;
    plan.synonym_dict = Some("log_terms".into());
    let variant = apply_variant(&test, &plan).map_err(|e| e.to_string())?;
    let perturbed = learned_agreement(&model, &variant).map_err(|e| e.to_string())?;
    check(
        clean.total > 0 && clean.matching == clean.total && perturbed.fraction() >= 0.90,
        format!(
            "clean {}/{}, renamed+reformatted {}/{} ({:.4})",
            clean.matching,
            clean.total,
            perturbed.matching,
            perturbed.total,
            perturbed.fraction()
        ),
    )
}

fn main() -> ExitCode {
    let suite = run_suites();
    let with_suite = |f: fn(&Suite) -> Outcome| -> Box<dyn FnOnce() -> Outcome + '_> {
        let s = suite.as_ref().map_err(Clone::clone);
        Box::new(move || s.and_then(f))
    };
    let criteria: Vec<(&str, Box<dyn FnOnce() -> Outcome + '_>)> = vec![
        ("oracle equivalence", with_suite(oracle_equivalence)),
        ("robustness gate", with_suite(robustness)),
        ("pivot/reorder invariance", with_suite(pivot_reorder_invariance)),
        ("gradient correctness", Box::new(gradients)),
        ("aggregation semantics", Box::new(aggregation)),
        ("minhash estimator", Box::new(minhash)),
        ("baseline fragility", with_suite(baseline_fragility)),
        ("storage comparison", with_suite(storage)),
        ("determinism", with_suite(determinism)),
        ("machine-log union", Box::new(machine_log_union)),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.into_iter().enumerate() {
        match run() {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 10 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
