use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use supercell::baseline::{estimate_jaccard, exact_jaccard, shingles, signature_of_set};
use supercell::eval::{all_cells, learned_agreement, learned_integrate, train_model, training_samples, AblationConfig, DictionaryMode};
use supercell::fixtures::{covid, machine_logs, Scenario, ScenarioFiles, Window};
use supercell::ingest::{canonicalize as canon, CanonKind};
use supercell::learner::{gradient_check as grad_check, EncoderKind, TrainConfig, TrainedModel};
use supercell::model::{KeyEntry, SuperCell};
use supercell::perturb::PerturbationPlan;

fn value_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn load_scenario(path: &str) -> PyResult<Scenario> {
    let path = Path::new(path);
    let text = std::fs::read_to_string(path).map_err(|e| PyIOError::new_err(format!("{}: {e}", path.display())))?;
    let files: ScenarioFiles = serde_json::from_str(&text).map_err(value_err)?;
    files.load(path.parent().unwrap_or(Path::new("."))).map_err(value_err)
}

/// A trained integration model.
#[pyclass(module = "supercell_py", frozen)]
struct Model {
    inner: TrainedModel,
}

#[pymethods]
impl Model {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        TrainedModel::load(&path).map(|inner| Model { inner }).map_err(value_err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(|e| PyIOError::new_err(e.to_string()))
    }

    /// Target position of one canonicalized super cell (as produced by
    /// decomposition): `(keys, attributes, agg_mode)`. Broadcast keys come
    /// back as `"*"`, unset ones as `None`.
    #[pyo3(signature = (keys, attributes, values, source_id = "py"))]
    fn predict(
        &self,
        keys: Vec<String>,
        attributes: Vec<String>,
        values: Vec<String>,
        source_id: &str,
    ) -> PyResult<(Vec<Option<String>>, Vec<Option<String>>, String)> {
        if attributes.len() != values.len() || values.is_empty() {
            return Err(PyValueError::new_err("attributes and values must be non-empty and equally long"));
        }
        let cell = SuperCell::new(source_id, keys, attributes, values, 0);
        let p = self.inner.predict(&cell).position;
        let keys = p
            .keys
            .into_iter()
            .map(|k| match k {
                KeyEntry::Value(v) => Some(v),
                KeyEntry::Wildcard => Some("*".to_string()),
                KeyEntry::Null | KeyEntry::Copy(_) => None,
            })
            .collect();
        Ok((keys, p.attributes, p.agg_mode.name().to_string()))
    }

    /// Integrate a scenario and return the target table as CSV.
    fn integrate(&self, scenario: &str) -> PyResult<String> {
        let sc = load_scenario(scenario)?;
        let cells = all_cells(&sc).map_err(value_err)?;
        let (table, _) = learned_integrate(&self.inner, &cells, &sc.spec.target).map_err(value_err)?;
        Ok(table.finalize().to_csv_string())
    }

    /// `(matching, total)` cells against the scenario's oracle.
    fn agreement(&self, scenario: &str) -> PyResult<(usize, usize)> {
        let a = learned_agreement(&self.inner, &load_scenario(scenario)?).map_err(value_err)?;
        Ok((a.matching, a.total))
    }

    fn size_bytes(&self) -> usize {
        self.inner.to_bytes().len()
    }
}

/// Train on a scenario. `config` and `plan` are JSON objects in the same
/// format as the command-line run config's `train` field and plan files.
#[pyfunction]
#[pyo3(signature = (scenario, config = "{}", plan = None))]
fn train(py: Python<'_>, scenario: &str, config: &str, plan: Option<&str>) -> PyResult<Model> {
    let sc = load_scenario(scenario)?;
    let cfg: TrainConfig = serde_json::from_str(config).map_err(value_err)?;
    let plan: Option<PerturbationPlan> = plan.map(serde_json::from_str).transpose().map_err(value_err)?;
    py.detach(|| {
        let ablation = AblationConfig {
            variants: Vec::new(),
            with_augmentation: plan.is_some(),
            dictionary: DictionaryMode::Local,
            augmentation: plan.unwrap_or_else(|| PerturbationPlan::none(cfg.seed)),
        };
        let samples = training_samples(&sc, &ablation)?;
        train_model(&samples, &sc, &cfg)
    })
    .map(|(inner, _)| Model { inner })
    .map_err(value_err)
}

/// The oracle target table of a scenario, as CSV.
#[pyfunction]
fn oracle(scenario: &str) -> PyResult<String> {
    let sc = load_scenario(scenario)?;
    Ok(sc.oracle().map_err(value_err)?.finalize().to_csv_string())
}

/// Number of super cells per source.
#[pyfunction]
fn decompose(scenario: &str) -> PyResult<BTreeMap<String, usize>> {
    let corpora = load_scenario(scenario)?.decompose().map_err(value_err)?;
    Ok(corpora.into_iter().map(|(k, v)| (k, v.len())).collect())
}

/// Write the built-in fixtures under `out` and return their manifest paths.
#[pyfunction]
#[pyo3(signature = (out, seed = 0, days = 20))]
fn write_fixtures(out: PathBuf, seed: u64, days: usize) -> PyResult<BTreeMap<String, String>> {
    let scenarios = [
        ("covid-train", covid(seed, Window { days, ..Window::TRAIN })),
        ("covid-test", covid(seed.wrapping_add(1), Window { days, ..Window::TEST })),
        ("logs-train", machine_logs(seed, 3, days.max(1), 9)),
        ("logs-test", machine_logs(seed.wrapping_add(1), 3, days.max(1), 14)),
    ];
    let mut paths = BTreeMap::new();
    for (name, sc) in scenarios {
        let dir = out.join(name);
        sc.write_dir(&dir).map_err(|e| PyIOError::new_err(e.to_string()))?;
        paths.insert(name.to_string(), dir.join("scenario.json").to_string_lossy().into_owned());
    }
    Ok(paths)
}

/// Canonical form of `value`; `kind` is "date", "number", "none" or
/// "dict:<name>" with `dictionary` giving that dictionary's synonym groups.
#[pyfunction]
#[pyo3(signature = (value, kind, dictionary = None))]
fn canonicalize(value: &str, kind: &str, dictionary: Option<Vec<Vec<String>>>) -> PyResult<String> {
    let mut dicts = supercell::ingest::Dictionaries::new();
    let kind = match kind {
        "date" => CanonKind::Date,
        "number" => CanonKind::Number,
        "none" => CanonKind::None,
        other => {
            let name = other
                .strip_prefix("dict:")
                .ok_or_else(|| PyValueError::new_err(format!("unknown kind {other:?}")))?;
            let groups = dictionary.ok_or_else(|| PyValueError::new_err("dictionary groups required"))?;
            dicts.insert(name, supercell::ingest::SynonymDictionary::new(groups).map_err(value_err)?);
            CanonKind::Dictionary(name.to_string())
        }
    };
    canon(value, &kind, &dicts).map_err(value_err)
}

/// `(estimate, exact)` Jaccard similarity of two columns' shingle sets.
#[pyfunction]
#[pyo3(signature = (a, b, l = 128, seed = 0))]
fn jaccard(a: Vec<String>, b: Vec<String>, l: usize, seed: u64) -> PyResult<(f64, f64)> {
    let sa: HashSet<String> = shingles(a.iter().map(String::as_str));
    let sb: HashSet<String> = shingles(b.iter().map(String::as_str));
    let est = estimate_jaccard(&signature_of_set(&sa, l, seed), &signature_of_set(&sb, l, seed)).map_err(value_err)?;
    Ok((est, exact_jaccard(&sa, &sb)))
}

/// Largest relative gradient error on a random tiny model.
#[pyfunction]
#[pyo3(signature = (encoder = "pooled", seed = 0))]
fn gradient_check(encoder: &str, seed: u64) -> PyResult<f64> {
    let encoder = match encoder {
        "pooled" => EncoderKind::Pooled,
        "birecurrent" => EncoderKind::BiRecurrent,
        other => return Err(PyValueError::new_err(format!("unknown encoder {other:?}"))),
    };
    Ok(grad_check(encoder, seed))
}

#[pymodule]
fn supercell_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(oracle, m)?)?;
    m.add_function(wrap_pyfunction!(decompose, m)?)?;
    m.add_function(wrap_pyfunction!(write_fixtures, m)?)?;
    m.add_function(wrap_pyfunction!(canonicalize, m)?)?;
    m.add_function(wrap_pyfunction!(jaccard, m)?)?;
    m.add_function(wrap_pyfunction!(gradient_check, m)?)?;
    Ok(())
}
