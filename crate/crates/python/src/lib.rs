//! Python module `mmcap`: vocabularies, feature files, metrics, energy
//! attribution and checkpointed models.

use std::path::PathBuf;

use ::mmcap as core;
use core::aggregation::{self, Decision, WordAttribution};
use core::config::RunConfig;
use core::dataio::{self, FeatureMatrix};
use core::generator::{greedy_decode, Model as CoreModel};
use core::metrics::{self, EvalCorpus};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn err(e: core::Error) -> PyErr {
    let msg = format!("{}: {e}", e.code());
    match e {
        core::Error::Io { .. } => PyIOError::new_err(msg),
        _ => PyValueError::new_err(msg),
    }
}

fn decision_name(d: Decision) -> &'static str {
    match d {
        Decision::Visual => "visual",
        Decision::Audio => "audio",
        Decision::Tie => "tie",
    }
}

#[pyclass(name = "Vocabulary", module = "mmcap", frozen)]
struct Vocabulary(dataio::Vocabulary);

#[pymethods]
impl Vocabulary {
    #[staticmethod]
    #[pyo3(signature = (captions, min_freq = 2))]
    fn build(captions: Vec<String>, min_freq: usize) -> Self {
        Vocabulary(dataio::Vocabulary::build(&captions, min_freq))
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        dataio::Vocabulary::load(&path).map(Vocabulary).map_err(err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.save(&path).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __contains__(&self, word: &str) -> bool {
        self.0.contains(word)
    }

    #[getter]
    fn words(&self) -> Vec<String> {
        self.0.words().to_vec()
    }

    #[getter]
    fn min_freq(&self) -> usize {
        self.0.min_freq()
    }

    fn id(&self, word: &str) -> usize {
        self.0.id(word)
    }

    fn encode(&self, caption: &str) -> Vec<usize> {
        self.0.encode(caption)
    }

    fn decode(&self, ids: Vec<usize>) -> PyResult<Vec<String>> {
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.0.len()) {
            return Err(PyValueError::new_err(format!("token id {bad} outside a vocabulary of {}", self.0.len())));
        }
        Ok(self.0.decode(&ids))
    }

    fn __repr__(&self) -> String {
        format!("Vocabulary(len={}, min_freq={})", self.0.len(), self.0.min_freq())
    }
}

/// Row-major `rows × cols` float32 matrix, stored on disk as MMCF.
#[pyclass(name = "FeatureMatrix", module = "mmcap", frozen)]
struct PyFeatureMatrix(FeatureMatrix);

#[pymethods]
impl PyFeatureMatrix {
    #[new]
    fn new(rows: Vec<Vec<f32>>) -> PyResult<Self> {
        let refs: Vec<&[f32]> = rows.iter().map(Vec::as_slice).collect();
        FeatureMatrix::from_rows(&refs).map(PyFeatureMatrix).map_err(err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        dataio::load_feature_matrix(&path).map(PyFeatureMatrix).map_err(err)
    }

    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Self> {
        FeatureMatrix::from_bytes(data).map(PyFeatureMatrix).map_err(err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.save(&path).map_err(err)
    }

    fn to_bytes(&self) -> Vec<u8> {
        self.0.to_bytes()
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        (self.0.rows(), self.0.cols())
    }

    fn tolist(&self) -> Vec<Vec<f32>> {
        (0..self.0.rows()).map(|r| self.0.row(r).to_vec()).collect()
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.0 == other.0
    }

    fn __repr__(&self) -> String {
        format!("FeatureMatrix({}x{})", self.0.rows(), self.0.cols())
    }
}

#[pyclass(name = "WordAttribution", module = "mmcap", frozen, get_all)]
struct PyAttribution {
    index: usize,
    word: String,
    e_v: f64,
    e_a: f64,
    decision: &'static str,
}

impl From<WordAttribution> for PyAttribution {
    fn from(a: WordAttribution) -> Self {
        PyAttribution {
            index: a.index,
            word: a.word,
            e_v: a.e_v,
            e_a: a.e_a,
            decision: decision_name(a.decision),
        }
    }
}

#[pymethods]
impl PyAttribution {
    fn __repr__(&self) -> String {
        format!("WordAttribution({:?}, e_v={:.4}, e_a={:.4}, {})", self.word, self.e_v, self.e_a, self.decision)
    }
}

/// A trained or freshly initialised captioning model with its vocabulary.
#[pyclass(name = "Model", module = "mmcap", frozen)]
struct Model {
    model: CoreModel,
    vocab: dataio::Vocabulary,
}

impl Model {
    fn decode(
        &self,
        visual: Option<&PyFeatureMatrix>,
        audio: Option<&PyFeatureMatrix>,
        max_len: usize,
    ) -> PyResult<core::generator::Decoded> {
        greedy_decode(&self.model, visual.map(|m| &m.0), audio.map(|m| &m.0), &self.vocab, max_len).map_err(err)
    }
}

#[pymethods]
impl Model {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let (model, vocab) = core::checkpoint::load(&path).map_err(err)?;
        Ok(Model { model, vocab })
    }

    /// Randomly initialised model; `config` is a JSON run configuration.
    #[staticmethod]
    #[pyo3(signature = (vocab, config = "{}", seed = 0))]
    fn init(vocab: &Vocabulary, config: &str, seed: u64) -> PyResult<Self> {
        let rc: RunConfig = serde_json::from_str(config).map_err(|e| PyValueError::new_err(format!("config: {e}")))?;
        rc.validate().map_err(err)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = CoreModel::init(rc.model_config(vocab.0.len()), &mut rng).map_err(err)?;
        Ok(Model {
            model,
            vocab: vocab.0.clone(),
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        core::checkpoint::save(&path, &self.model, &self.vocab).map_err(err)
    }

    #[getter]
    fn vocab(&self) -> Vocabulary {
        Vocabulary(self.vocab.clone())
    }

    /// Model configuration as a dict.
    #[getter]
    fn config<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let json = serde_json::to_string(&self.model.config).map_err(|e| PyValueError::new_err(e.to_string()))?;
        py.import("json")?.call_method1("loads", (json,))
    }

    #[pyo3(signature = (visual = None, audio = None, max_len = 30))]
    fn caption(&self, visual: Option<PyRef<'_, PyFeatureMatrix>>, audio: Option<PyRef<'_, PyFeatureMatrix>>, max_len: usize) -> PyResult<String> {
        Ok(self.decode(visual.as_deref(), audio.as_deref(), max_len)?.sentence())
    }

    /// Generated words with their per-word energy attribution.
    #[pyo3(signature = (visual = None, audio = None, max_len = 30))]
    fn explain(
        &self,
        visual: Option<PyRef<'_, PyFeatureMatrix>>,
        audio: Option<PyRef<'_, PyFeatureMatrix>>,
        max_len: usize,
    ) -> PyResult<Vec<PyAttribution>> {
        let d = self.decode(visual.as_deref(), audio.as_deref(), max_len)?;
        Ok(d.attributions.into_iter().map(PyAttribution::from).collect())
    }
}

#[pyfunction]
fn tokenize(caption: &str) -> Vec<String> {
    dataio::tokenize(caption)
}

/// `(e_v, e_a)` for one row of aggregation weights.
#[pyfunction]
fn activation_energies(weights: Vec<f32>, t_v: usize) -> PyResult<(f64, f64)> {
    if t_v > weights.len() {
        return Err(PyValueError::new_err(format!("t_v = {t_v} exceeds {} weights", weights.len())));
    }
    Ok(aggregation::activation_energies(&weights, t_v))
}

#[pyfunction]
fn attribute(e_v: f64, e_a: f64) -> &'static str {
    decision_name(aggregation::attribute(e_v, e_a))
}

/// Scores `{id: candidate}` against `{id: [references]}`; both must cover
/// the same ids.
#[pyfunction]
fn evaluate<'py>(
    py: Python<'py>,
    candidates: std::collections::HashMap<String, String>,
    references: std::collections::HashMap<String, Vec<String>>,
) -> PyResult<Bound<'py, PyDict>> {
    let mut missing: Vec<&String> = candidates.keys().filter(|k| !references.contains_key(*k)).collect();
    missing.extend(references.keys().filter(|k| !candidates.contains_key(*k)));
    missing.sort();
    if !missing.is_empty() {
        return Err(PyValueError::new_err(format!("ids without a match: {missing:?}")));
    }
    let corpus = EvalCorpus::from_sentences(candidates.into_iter().map(|(id, c)| {
        let refs = references[&id].clone();
        (id, c, refs)
    }))
    .map_err(err)?;
    let r = metrics::evaluate(&corpus).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("bleu4", r.bleu4)?;
    out.set_item("rouge_l", r.rouge_l)?;
    out.set_item("cider", r.cider)?;
    out.set_item("meteor", r.meteor)?;
    out.set_item("clip_count", r.clip_count)?;
    Ok(out)
}

/// Writes the synthetic corpus; returns the manifest path.
#[pyfunction]
#[pyo3(signature = (out_dir, clips = 8, seed = 7, noise = 0.0))]
fn make_synthetic(out_dir: PathBuf, clips: usize, seed: u64, noise: f32) -> PyResult<PathBuf> {
    let spec = core::synthetic::SyntheticSpec {
        clips,
        seed,
        noise,
        ..Default::default()
    };
    core::synthetic::write(&out_dir, &spec).map_err(err)
}

#[pymodule]
fn mmcap(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Vocabulary>()?;
    m.add_class::<PyFeatureMatrix>()?;
    m.add_class::<PyAttribution>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(activation_energies, m)?)?;
    m.add_function(wrap_pyfunction!(attribute, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(make_synthetic, m)?)?;
    Ok(())
}
