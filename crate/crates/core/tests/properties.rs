use std::collections::{BTreeMap, HashSet};

use proptest::prelude::*;
use rust_decimal::Decimal;
use supercell::assemble::TargetTable;
use supercell::baseline::{estimate_jaccard, signature_of_set};
use supercell::eval::apply_variant;
use supercell::fixtures::{county_hierarchy, covid, covid_dictionaries, jhu_descriptor, covid_tables, Window};
use supercell::ingest::{canonicalize, decompose, parse_number, CanonKind, Dictionaries, RawTable, SourceDescriptor};
use supercell::mapping::consistency_check;
use supercell::model::{AggMode, KeyDomain, KeyEntry, LabelCodec, SuperCell, TargetPosition, TargetSchema};
use supercell::perturb::{augment, expand_table, partition, pivot_table, reformat_value, reorder_columns, rng_for, PerturbationPlan};

fn schema() -> TargetSchema {
    let mut domains = BTreeMap::new();
    domains.insert("state".to_string(), KeyDomain::closed(["alaska", "ohio", "texas"]));
    TargetSchema {
        attributes: ["date", "state", "a", "b", "c"].map(String::from).to_vec(),
        key_attributes: ["date", "state"].map(String::from).to_vec(),
        key_domains: domains,
    }
}

fn key_entry(l: usize) -> impl Strategy<Value = KeyEntry> {
    let values: Vec<&str> = if l == 1 { vec!["alaska", "ohio", "texas"] } else { vec![] };
    let mut options = vec![Just(KeyEntry::Null).boxed(), Just(KeyEntry::Wildcard).boxed(), (0..3usize).prop_map(KeyEntry::Copy).boxed()];
    if !values.is_empty() {
        options.push(proptest::sample::select(values).prop_map(KeyEntry::value).boxed());
    }
    proptest::strategy::Union::new(options)
}

fn position() -> impl Strategy<Value = TargetPosition> {
    let attr = proptest::option::of(proptest::sample::select(vec!["date", "state", "a", "b", "c"]).prop_map(String::from));
    (
        key_entry(0),
        key_entry(1),
        proptest::collection::vec(attr, 1..=4),
        proptest::sample::select(AggMode::ALL.to_vec()),
    )
        .prop_map(|(k0, k1, attributes, agg_mode)| TargetPosition {
            keys: vec![k0, k1],
            attributes,
            agg_mode,
        })
}

fn date_string() -> impl Strategy<Value = String> {
    (2000i32..2030, 1u32..=12, 1u32..=28, 0usize..3).prop_map(|(y, m, d, f)| match f {
        0 => format!("{m}/{d}/{y}"),
        1 => format!("{y}-{m:02}-{d:02}"),
        _ => format!("{y}-{m:02}-{d:02}T{:02}:{:02}:00", d % 24, m * 4),
    })
}

fn number_string() -> impl Strategy<Value = String> {
    (-1_000_000i64..1_000_000, 0u32..4, any::<bool>()).prop_map(|(n, scale, pct)| {
        let d = Decimal::new(n, scale);
        if pct {
            format!("{d}%")
        } else {
            d.to_string()
        }
    })
}

fn multiset(cells: &[SuperCell]) -> BTreeMap<(Vec<String>, Vec<String>, Vec<String>), usize> {
    let mut m = BTreeMap::new();
    for c in cells {
        *m.entry(c.content()).or_insert(0) += 1;
    }
    m
}

fn keyed_table() -> impl Strategy<Value = (RawTable, SourceDescriptor)> {
    (1usize..=3, 1usize..=4, 1usize..=4, 1usize..=3)
        .prop_flat_map(|(rows, axis, values, rest)| {
            let cells = proptest::collection::vec(
                proptest::option::of(proptest::option::of(0u32..10_000)),
                rows * axis * values,
            );
            (Just((rows, axis, values, rest)), cells)
        })
        .prop_map(|((rows, axis, values, rest), cells)| {
            let mut header: Vec<String> = (0..rest).map(|i| format!("k{i}")).collect();
            header.push("axis".into());
            header.extend((0..values).map(|i| format!("v{i}")));
            let mut body = Vec::new();
            let mut it = cells.into_iter();
            for r in 0..rows {
                for a in 0..axis {
                    let fields: Vec<Option<Option<u32>>> = it.by_ref().take(values).collect();
                    // an outer None drops the whole row
                    if fields[0].is_none() {
                        continue;
                    }
                    let mut row: Vec<String> = (0..rest).map(|i| format!("row{r}-{i}")).collect();
                    row.push(format!("t{a}"));
                    row.extend(fields.into_iter().map(|f| f.flatten().map(|v| v.to_string()).unwrap_or_default()));
                    body.push(row);
                }
            }
            let keys: Vec<String> = header[..=rest].to_vec();
            let refs: Vec<&str> = keys.iter().map(String::as_str).collect();
            (RawTable::new(header, body), SourceDescriptor::csv("p", &refs))
        })
}

fn single_cell_table(mode: AggMode, values: &[String]) -> String {
    let mut t = TargetTable::new(TargetSchema {
        attributes: vec!["k".into(), "x".into()],
        key_attributes: vec!["k".into()],
        key_domains: BTreeMap::new(),
    });
    let pos = TargetPosition {
        keys: vec![KeyEntry::value("r")],
        attributes: vec![Some("x".into())],
        agg_mode: mode,
    };
    for (i, v) in values.iter().enumerate() {
        let cell = SuperCell::new("s", vec!["r".into()], vec!["y".into()], vec![v.clone()], i as u64);
        t.apply(&cell, &pos).unwrap();
    }
    t.cell(&["r".to_string()], "x").unwrap().render()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn label_round_trip(pos in position()) {
        let codec = LabelCodec::new(schema(), 3, 4);
        let label = codec.render_label(&pos).unwrap();
        prop_assert_eq!(label.len(), codec.head_count());
        prop_assert_eq!(codec.decode(&label, pos.attributes.len()).unwrap(), pos);
    }

    #[test]
    fn canonicalize_is_idempotent(d in date_string(), n in number_string(), t in "[A-Za-z ]{1,12}") {
        let dicts = covid_dictionaries();
        let kinds = [
            (d, CanonKind::Date),
            (n, CanonKind::Number),
            (t.clone(), CanonKind::Dictionary("us_states".into())),
            (t, CanonKind::None),
        ];
        for (v, kind) in kinds {
            let once = canonicalize(&v, &kind, &dicts).unwrap();
            prop_assert_eq!(canonicalize(&once, &kind, &dicts).unwrap(), once);
        }
    }

    #[test]
    fn reformatting_preserves_canonical_form(d in date_string(), n in number_string(), state in 0usize..50, seed in any::<u64>()) {
        let dicts = covid_dictionaries();
        let mut rng = rng_for(seed);
        let state = supercell::fixtures::US_STATES[state].0.to_lowercase();
        for (v, kind) in [(d, CanonKind::Date), (n, CanonKind::Number), (state, CanonKind::Dictionary("us_states".into()))] {
            let canon = canonicalize(&v, &kind, &dicts).unwrap();
            if let Some(alt) = reformat_value(&canon, &kind, &dicts, &mut rng) {
                prop_assert_ne!(&alt, &canon);
                prop_assert_eq!(canonicalize(&alt, &kind, &dicts).unwrap(), canon);
            }
        }
    }

    #[test]
    fn pivot_and_reorder_preserve_super_cells((table, desc) in keyed_table(), seed in any::<u64>()) {
        let dicts = Dictionaries::new();
        let base = multiset(&decompose(&table, &desc, &dicts).unwrap().cells);
        let reordered = decompose(&reorder_columns(&table, seed), &desc, &dicts).unwrap().cells;
        prop_assert_eq!(&multiset(&reordered), &base);
        let mut pivoted = Vec::new();
        for (t, d) in pivot_table(&table, &desc, "axis").unwrap() {
            pivoted.extend(decompose(&t, &d, &dicts).unwrap().cells);
        }
        prop_assert_eq!(&multiset(&pivoted), &base);
    }

    #[test]
    fn partition_sums_exactly(n in -10_000_000i64..10_000_000, scale in 0u32..4, k in 1usize..6, seed in any::<u64>()) {
        let d = Decimal::new(n, scale);
        let parts = partition(d, k, &mut rng_for(seed));
        prop_assert_eq!(parts.len(), k);
        prop_assert_eq!(parts.iter().copied().sum::<Decimal>(), d);
    }

    #[test]
    fn sum_and_concat_match_brute_force(values in proptest::collection::vec(-50_000i64..50_000, 1..20)) {
        let raw: Vec<String> = values.iter().map(|v| v.to_string()).collect();
        prop_assert_eq!(single_cell_table(AggMode::Sum, &raw), values.iter().sum::<i64>().to_string());
        prop_assert_eq!(single_cell_table(AggMode::Min, &raw), values.iter().min().unwrap().to_string());
        prop_assert_eq!(single_cell_table(AggMode::Concat, &raw), raw.join("|"));
        prop_assert_eq!(single_cell_table(AggMode::Count, &raw), raw.len().to_string());
        let mut reversed = raw.clone();
        reversed.reverse();
        prop_assert_eq!(single_cell_table(AggMode::Avg, &reversed), single_cell_table(AggMode::Avg, &raw));
    }

    #[test]
    fn identical_sets_estimate_one(items in proptest::collection::hash_set("[a-z]{1,6}", 1..40), seed in any::<u64>()) {
        let set: HashSet<String> = items.into_iter().collect();
        let a = signature_of_set(&set, 64, seed);
        prop_assert_eq!(&a, &signature_of_set(&set, 64, seed));
        prop_assert_eq!(estimate_jaccard(&a, &signature_of_set(&set, 64, seed)).unwrap(), 1.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn expansion_conserves_parent_totals(seed in any::<u64>(), rate in 0.1f64..1.0) {
        let dicts = covid_dictionaries();
        let (jhu, _) = covid_tables(seed, Window { days: 2, ..Window::TRAIN });
        let desc = jhu_descriptor();
        let (expanded, _, report) =
            expand_table(&jhu, &desc, &county_hierarchy(), "Province_State", rate, &dicts, &mut rng_for(seed)).unwrap();
        prop_assert_eq!(expanded.rows.len(), jhu.rows.len() - report.rows_expanded + report.child_rows);
        let totals = |t: &RawTable| {
            let mut out: BTreeMap<(String, String, String), Decimal> = BTreeMap::new();
            let keys: Vec<usize> = desc.key_columns.iter().map(|k| t.column_index(k).unwrap()).collect();
            for row in &t.rows {
                for c in ["Confirmed", "Deaths", "Recovered"] {
                    let v = &row[t.column_index(c).unwrap()];
                    if let Some(d) = parse_number(v) {
                        *out.entry((row[keys[0]].clone(), row[keys[2]].clone(), c.to_string())).or_default() += d;
                    }
                }
            }
            out
        };
        prop_assert_eq!(totals(&expanded), totals(&jhu));
    }

    #[test]
    fn labels_reproduce_oracle(seed in any::<u64>(), days in 1usize..4) {
        let sc = covid(seed, Window { days, ..Window::TRAIN });
        let a = consistency_check(&sc.spec, &sc.decompose().unwrap(), &sc.dicts).unwrap();
        prop_assert!(a.total > 0);
        prop_assert_eq!(a.matching, a.total);
    }

    #[test]
    fn expanded_corpus_has_same_oracle(seed in any::<u64>()) {
        let sc = covid(seed, Window { days: 2, ..Window::TRAIN });
        let plan = PerturbationPlan { key_expansion_rate: 0.5, ..PerturbationPlan::none(seed) };
        let expanded = apply_variant(&sc, &plan).unwrap();
        prop_assert_eq!(expanded.oracle().unwrap().finalize(), sc.oracle().unwrap().finalize());
    }

    #[test]
    fn augmentation_is_deterministic(seed in any::<u64>()) {
        let sc = covid(seed, Window { days: 1, ..Window::TRAIN });
        let samples = sc.labeled().unwrap();
        let plan = PerturbationPlan {
            attr_rename_rate: 0.8,
            char_noise_rate: 0.1,
            value_reformat_rate: 0.3,
            key_expansion_rate: 0.3,
            pivot_enabled: true,
            add_remove_noise_columns: 2,
            synonym_dict: Some("covid_attributes".into()),
            copies: 2,
            ..PerturbationPlan::none(seed)
        };
        let a = augment(&samples, &plan, &sc.spec, &sc.dicts).unwrap();
        let b = augment(&samples, &plan, &sc.spec, &sc.dicts).unwrap();
        prop_assert!(a.samples.len() > samples.len());
        prop_assert_eq!(a, b);
    }
}
