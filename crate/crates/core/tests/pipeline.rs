use supercell::baseline::{build_signatures, read_signature_store, write_signature_store};
use supercell::eval::*;
use supercell::fixtures::{covid, machine_logs, Window};
use supercell::learner::{EncoderKind, TrainConfig, TrainedModel};
use supercell::mapping::MappingSpec;

fn tiny() -> Window {
    Window {
        days: 2,
        ..Window::TRAIN
    }
}

fn quick_config(encoder: EncoderKind) -> TrainConfig {
    TrainConfig {
        encoder,
        buckets: 512,
        dim: 8,
        hidden: 12,
        lr: 0.02,
        batch_size: 32,
        epochs: 6,
        seed: 3,
        width_slots: None,
    }
}

#[test]
fn scenario_survives_a_trip_through_files() {
    let sc = covid(4, tiny());
    let dir = tempfile::tempdir().unwrap();
    let files = sc.write_dir(dir.path()).unwrap();
    let loaded = files.load(dir.path()).unwrap();
    assert_eq!(loaded.decompose().unwrap(), sc.decompose().unwrap());
    assert_eq!(loaded.oracle().unwrap().finalize(), sc.oracle().unwrap().finalize());

    let logs = machine_logs(4, 2, 3, 9);
    let dir = tempfile::tempdir().unwrap();
    let loaded = logs.write_dir(dir.path()).unwrap().load(dir.path()).unwrap();
    assert_eq!(loaded.decompose().unwrap(), logs.decompose().unwrap());
}

#[test]
fn spec_json_round_trips() {
    let spec = covid(0, tiny()).spec;
    assert_eq!(MappingSpec::from_json(&spec.to_json()).unwrap(), spec);
}

#[test]
fn saved_model_predicts_like_the_original() {
    let train = covid(5, tiny());
    let samples = train.labeled().unwrap();
    for encoder in [EncoderKind::Pooled, EncoderKind::BiRecurrent] {
        let (model, report) = train_model(&samples, &train, &quick_config(encoder)).unwrap();
        assert_eq!(report.curve.len(), 7);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        model.save(&path).unwrap();
        let loaded = TrainedModel::load(&path).unwrap();
        for s in samples.iter().take(200) {
            assert_eq!(loaded.predict(&s.cell).position, model.predict(&s.cell).position);
        }
        assert_eq!(loaded.to_bytes(), model.to_bytes());
    }
}

#[test]
fn corrupt_model_file_is_rejected() {
    let train = covid(5, tiny());
    let (model, _) = train_model(&train.labeled().unwrap(), &train, &quick_config(EncoderKind::Pooled)).unwrap();
    let mut bytes = model.to_bytes();
    bytes[0] ^= 0xff;
    assert!(TrainedModel::from_bytes(&bytes).is_err());
    let bytes = model.to_bytes();
    assert!(TrainedModel::from_bytes(&bytes[..bytes.len() / 2]).is_err());
}

#[test]
fn learned_pipeline_reproduces_the_oracle_on_a_small_fixture() {
    let train = covid(6, tiny());
    let test = covid(7, Window { days: 2, ..Window::TEST });
    let cfg = TrainConfig {
        epochs: 25,
        ..quick_config(EncoderKind::Pooled)
    };
    let (model, _) = train_model(&train.labeled().unwrap(), &train, &cfg).unwrap();
    let a = learned_agreement(&model, &test).unwrap();
    assert!(a.fraction() >= 0.95, "{}/{}", a.matching, a.total);
}

#[test]
fn signature_store_round_trips() {
    let sc = covid(8, tiny());
    let tables = canon_tables(&sc).unwrap();
    let sigs = build_signatures(&tables, 32, 11);
    let dir = tempfile::tempdir().unwrap();
    let (bin, idx) = (dir.path().join("s.bin"), dir.path().join("s.json"));
    let written = write_signature_store(&sigs, &bin, &idx).unwrap();
    assert_eq!(written, sigs.len() as u64 * 32 * 4);
    assert_eq!(read_signature_store(&bin, &idx).unwrap(), sigs);
}

#[test]
fn baseline_handles_the_clean_corpus() {
    let train = covid(9, tiny());
    let (model, _) = train_model(&train.labeled().unwrap(), &train, &quick_config(EncoderKind::Pooled)).unwrap();
    let mut timing = TimingReport::default();
    let report = compare_baseline(
        &model,
        &[("clean".to_string(), covid(10, tiny()))],
        None,
        &LshConfig::default(),
        &mut timing,
    )
    .unwrap();
    let clean = &report.corpora[0];
    assert!(clean.baseline.error.is_none(), "{:?}", clean.baseline.error);
    assert_eq!(clean.baseline.agreement, Some(1.0));
    assert!(clean.baseline.no_match.is_empty());
    let back = TimingReport::from_json(&timing.to_json()).unwrap();
    assert_eq!(back, timing);
}

#[test]
fn ablation_csv_lists_every_condition_and_variant() {
    let train = covid(11, tiny());
    let test = covid(12, Window { days: 2, ..Window::TEST });
    let variants = standard_variants(13, 6, Some("covid_attributes"));
    let mut reports = Vec::new();
    for with_augmentation in [true, false] {
        let ablation = AblationConfig {
            variants: variants.clone(),
            with_augmentation,
            dictionary: DictionaryMode::Local,
            augmentation: supercell::perturb::PerturbationPlan {
                copies: 1,
                ..covid_augmentation(13)
            },
        };
        let cfg = TrainConfig {
            epochs: 1,
            ..quick_config(EncoderKind::Pooled)
        };
        reports.push(run_ablation(&cfg, &train, &test, &ablation).unwrap().0);
    }
    assert!(reports[0].training_samples > reports[1].training_samples);
    let csv = ablation_csv(&reports);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], ABLATION_HEADER);
    assert_eq!(lines.len(), 1 + 2 * variants.len());
    assert!(lines[1].starts_with("augmented+dictionary,clean,"));
}
