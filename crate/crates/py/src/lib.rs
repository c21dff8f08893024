//! Python bindings for the epigraph library.

use std::path::PathBuf;

use epigraph::alignment::{nw_align as align, Scoring};
use epigraph::cli::{attach_pair_features, build_from_pdb, build_options, BuildOutcome, FeatureSource, StructureArgs};
use epigraph::encoding::{blosum_encode, load_embedding_file, onehot_encode, FeatureMatrix};
use epigraph::evaluation::{auc_roc as auc, binary_metrics as metrics, evaluate_testset};
use epigraph::geometry::{atom_sasa as sasa, SasaParams};
use epigraph::graph::GraphPair;
use epigraph::model::{
    aggregate_node_predictions, load_checkpoint, predict, save_checkpoint, walle_loss as loss, AggregationConfig,
    CheckpointHeader, LossConfig, PreparedPair, WalleModel,
};
use epigraph::split::{split_by_group as group_split, split_by_ratio as ratio_split, GroupTargets, SplitFractions};
use epigraph::toy::{toy_dataset as toy, toy_train_config, ToySpec};
use epigraph::training::{fit, TrainConfig};
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use serde_json::Value;

fn to_py(e: epigraph::Error) -> PyErr {
    match e {
        epigraph::Error::File { .. } => PyOSError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn json_err(e: serde_json::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Converts any JSON value into plain Python objects.
fn json_to_py(py: Python<'_>, v: &Value) -> PyResult<Py<PyAny>> {
    Ok(match v {
        Value::Null => py.None(),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any().unbind(),
        Value::Number(n) => match n.as_i64() {
            Some(i) => i.into_pyobject(py)?.into_any().unbind(),
            None => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any().unbind(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any().unbind(),
        Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(json_to_py(py, item)?)?;
            }
            list.into_any().unbind()
        }
        Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, item) in map {
                dict.set_item(k, json_to_py(py, item)?)?;
            }
            dict.into_any().unbind()
        }
    })
}

fn serialize(py: Python<'_>, v: &impl serde::Serialize) -> PyResult<Py<PyAny>> {
    json_to_py(py, &serde_json::to_value(v).map_err(json_err)?)
}

fn rows(m: &FeatureMatrix) -> Vec<Vec<f32>> {
    (0..m.rows).map(|i| m.row(i).to_vec()).collect()
}

/// An antibody–antigen graph pair.
#[pyclass(name = "GraphPair", module = "epigraph_py", skip_from_py_object)]
#[derive(Clone)]
struct PyGraphPair {
    inner: GraphPair,
}

#[pymethods]
impl PyGraphPair {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyGraphPair {
            inner: GraphPair::from_json(text).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        Ok(PyGraphPair {
            inner: GraphPair::read_json(&path).map_err(to_py)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(to_py)
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        self.inner.write_json(&path).map_err(to_py)
    }

    #[getter]
    fn id(&self) -> &str {
        &self.inner.id
    }

    /// Number of antibody (CDR) nodes.
    #[getter]
    fn m(&self) -> usize {
        self.inner.m()
    }

    /// Number of antigen surface nodes.
    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn edge_labels(&self) -> Vec<(usize, usize)> {
        self.inner.edge_labels.iter().map(|e| (e[0], e[1])).collect()
    }

    #[getter]
    fn node_labels(&self) -> Vec<bool> {
        self.inner.node_labels.clone()
    }

    #[getter]
    fn antibody_nodes(&self) -> Vec<String> {
        self.inner.ab.node_ids.iter().map(|k| k.to_string()).collect()
    }

    #[getter]
    fn antigen_nodes(&self) -> Vec<String> {
        self.inner.ag.node_ids.iter().map(|k| k.to_string()).collect()
    }

    #[getter]
    fn antibody_edges(&self) -> Vec<(usize, usize)> {
        self.inner.ab.adjacency.upper_pairs().into_iter().map(|e| (e[0], e[1])).collect()
    }

    #[getter]
    fn antigen_edges(&self) -> Vec<(usize, usize)> {
        self.inner.ag.adjacency.upper_pairs().into_iter().map(|e| (e[0], e[1])).collect()
    }

    #[getter]
    fn stats(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        serialize(py, &self.inner.stats)
    }

    #[getter]
    fn has_features(&self) -> bool {
        self.inner.ab.features.is_some() && self.inner.ag.features.is_some()
    }

    /// Attaches node features: `"onehot"`, `"blosum62"`, or a directory of EMB1 files.
    #[pyo3(signature = (source = "onehot"))]
    fn attach_features(&mut self, source: &str) -> PyResult<()> {
        attach_pair_features(&mut self.inner, &FeatureSource::parse(source)).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("GraphPair(id={:?}, m={}, n={})", self.inner.id, self.inner.m(), self.inner.n())
    }
}

fn prepared(pair: &PyGraphPair, features: &str) -> PyResult<PreparedPair> {
    if pair.has_features() {
        return PreparedPair::from_pair(&pair.inner).map_err(to_py);
    }
    let mut p = pair.inner.clone();
    attach_pair_features(&mut p, &FeatureSource::parse(features)).map_err(to_py)?;
    PreparedPair::from_pair(&p).map_err(to_py)
}

fn prepared_all(pairs: &[PyRef<'_, PyGraphPair>], features: &str) -> PyResult<Vec<PreparedPair>> {
    pairs.iter().map(|p| prepared(p, features)).collect()
}

/// A trained or freshly initialised link-prediction model.
#[pyclass(name = "Model", module = "epigraph_py")]
struct PyModel {
    model: WalleModel,
    header: CheckpointHeader,
}

fn header_for(model: &WalleModel, cfg: &TrainConfig) -> PyResult<CheckpointHeader> {
    Ok(CheckpointHeader {
        architecture: model.arch,
        seed: cfg.seed,
        loss: cfg.loss,
        aggregation: cfg.aggregation,
        training: serde_json::to_value(cfg).map_err(json_err)?,
    })
}

#[pymethods]
impl PyModel {
    /// Seeded initialisation for the given feature widths and `key = value` config.
    #[new]
    #[pyo3(signature = (dim_ab, dim_ag, config = ""))]
    fn new(dim_ab: usize, dim_ag: usize, config: &str) -> PyResult<Self> {
        let cfg = TrainConfig::parse(config).map_err(to_py)?;
        let model = WalleModel::new(cfg.architecture(dim_ab, dim_ag), cfg.seed).map_err(to_py)?;
        let header = header_for(&model, &cfg)?;
        Ok(PyModel { model, header })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let (model, header) = load_checkpoint(&path).map_err(to_py)?;
        Ok(PyModel { model, header })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_checkpoint(&path, &self.model, &self.header).map_err(to_py)
    }

    #[getter]
    fn parameter_names(&self) -> Vec<String> {
        self.model.names.clone()
    }

    #[getter]
    fn parameter_count(&self) -> usize {
        self.model.parameter_count()
    }

    #[getter]
    fn node_threshold(&self) -> f64 {
        self.header.aggregation.node_threshold
    }

    #[getter]
    fn architecture(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        serialize(py, &self.model.arch)
    }

    /// Edge probabilities as an `m × n` nested list.
    #[pyo3(signature = (pair, features = "onehot"))]
    fn predict(&self, pair: PyRef<'_, PyGraphPair>, features: &str) -> PyResult<Vec<Vec<f64>>> {
        let p = prepared(&pair, features)?;
        let pred = predict(&self.model, &p).map_err(to_py)?;
        Ok((0..pred.probs.rows).map(|i| pred.probs.row(i).to_vec()).collect())
    }

    /// Per-antigen-node summed probability and the thresholded epitope call.
    #[pyo3(signature = (pair, threshold = None, features = "onehot"))]
    fn predict_epitope(
        &self,
        pair: PyRef<'_, PyGraphPair>,
        threshold: Option<f64>,
        features: &str,
    ) -> PyResult<(Vec<f64>, Vec<bool>)> {
        let p = prepared(&pair, features)?;
        let pred = predict(&self.model, &p).map_err(to_py)?;
        let agg = AggregationConfig {
            node_threshold: threshold.unwrap_or(self.header.aggregation.node_threshold),
        };
        Ok(aggregate_node_predictions(&pred.probs, &agg))
    }

    /// Node and link metric summaries over `pairs`.
    #[pyo3(signature = (pairs, threshold = None, features = "onehot"))]
    fn evaluate(
        &self,
        py: Python<'_>,
        pairs: Vec<PyRef<'_, PyGraphPair>>,
        threshold: Option<f64>,
        features: &str,
    ) -> PyResult<Py<PyAny>> {
        let prep = prepared_all(&pairs, features)?;
        let agg = AggregationConfig {
            node_threshold: threshold.unwrap_or(self.header.aggregation.node_threshold),
        };
        let report = evaluate_testset(&self.model, &prep, &agg).map_err(to_py)?;
        let out = PyDict::new(py);
        out.set_item("node", serialize(py, &report.node)?)?;
        out.set_item("link", serialize(py, &report.link)?)?;
        Ok(out.into_any().unbind())
    }
}

/// Trains on `train`, selecting on `val`; returns the model and per-epoch history.
#[pyfunction]
#[pyo3(signature = (train, val, config = "", features = "onehot"))]
fn train(
    py: Python<'_>,
    train: Vec<PyRef<'_, PyGraphPair>>,
    val: Vec<PyRef<'_, PyGraphPair>>,
    config: &str,
    features: &str,
) -> PyResult<(PyModel, Py<PyAny>)> {
    let cfg = TrainConfig::parse(config).map_err(to_py)?;
    let (tr, va) = (prepared_all(&train, features)?, prepared_all(&val, features)?);
    let first = tr.first().ok_or_else(|| PyValueError::new_err("training set is empty"))?;
    let model = WalleModel::new(cfg.architecture(first.x_ab.cols, first.x_ag.cols), cfg.seed).map_err(to_py)?;
    let result = py.detach(|| fit(model, &tr, &va, &cfg)).map_err(to_py)?;
    let header = header_for(&result.model, &cfg)?;
    let history = serialize(py, &result.history.epochs)?;
    Ok((
        PyModel {
            model: result.model,
            header,
        },
        history,
    ))
}

/// The toy training configuration as `key = value` text.
#[pyfunction]
#[pyo3(signature = (seed = 0))]
fn toy_config(seed: u64) -> String {
    toy_train_config(seed).to_text()
}

/// Planted synthetic graph pairs with one-hot features attached.
#[pyfunction]
#[pyo3(signature = (pairs = 20, seed = 7))]
fn toy_dataset(pairs: usize, seed: u64) -> PyResult<Vec<PyGraphPair>> {
    let spec = ToySpec {
        pairs,
        ..ToySpec::default()
    };
    Ok(toy(&spec, seed)
        .map_err(to_py)?
        .into_iter()
        .map(|inner| PyGraphPair { inner })
        .collect())
}

/// Builds a graph pair from a PDB file; raises `ValueError` listing reasons on rejection.
#[pyfunction]
#[pyo3(signature = (path, heavy = "H", light = "L", antigen = None, cutoff = 4.5))]
fn build_graph(path: PathBuf, heavy: &str, light: &str, antigen: Option<String>, cutoff: f64) -> PyResult<PyGraphPair> {
    let mut args = StructureArgs::default();
    args.chains.heavy = heavy.to_string();
    args.chains.light = light.to_string();
    args.chains.antigen = antigen;
    args.cutoff = cutoff;
    let opts = build_options(&args).map_err(to_py)?;
    match build_from_pdb(&path, &args, &opts).map_err(to_py)? {
        BuildOutcome::Built(p) => Ok(PyGraphPair { inner: *p }),
        BuildOutcome::Rejected(reasons) => Err(PyValueError::new_err(format!("rejected: {}", reasons.join(";")))),
    }
}

/// Chain summaries of a PDB text: resolved residue count and both sequences.
#[pyfunction]
fn parse_pdb(py: Python<'_>, text: &str) -> PyResult<Py<PyAny>> {
    let s = epigraph::structure::parse_pdb(text).map_err(to_py)?;
    let out = PyDict::new(py);
    for id in s.chain_ids() {
        let c = s.chain(id).expect("listed chain");
        let d = PyDict::new(py);
        d.set_item("residues", c.residues.len())?;
        d.set_item("atmseq", &c.atmseq)?;
        d.set_item("seqres", &c.seqres)?;
        out.set_item(id, d)?;
    }
    Ok(out.into_any().unbind())
}

#[pyfunction]
fn onehot(seq: &str) -> PyResult<Vec<Vec<f32>>> {
    Ok(rows(&onehot_encode(seq).map_err(to_py)?))
}

#[pyfunction]
fn blosum62(seq: &str) -> PyResult<Vec<Vec<f32>>> {
    Ok(rows(&blosum_encode(seq).map_err(to_py)?))
}

/// Reads an EMB1 file as `(source_tag, rows)`.
#[pyfunction]
fn read_emb1(path: PathBuf) -> PyResult<(String, Vec<Vec<f32>>)> {
    let m = load_embedding_file(&path).map_err(to_py)?;
    Ok((m.source_tag.clone(), rows(&m)))
}

/// Global alignment; `scheme` is `"blosum62"` (affine) or `"linear"` (+1/−2/−1).
#[pyfunction]
#[pyo3(signature = (a, b, scheme = "blosum62"))]
fn nw_align(py: Python<'_>, a: &str, b: &str, scheme: &str) -> PyResult<Py<PyAny>> {
    let scoring = match scheme {
        "blosum62" => Scoring::blosum62_affine(),
        "linear" => Scoring::seqres_linear(),
        other => return Err(PyValueError::new_err(format!("unknown scheme {other:?}"))),
    };
    let aln = align(a, b, &scoring).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("score", aln.score)?;
    d.set_item("aligned_a", &aln.aligned_a)?;
    d.set_item("aligned_b", &aln.aligned_b)?;
    d.set_item("identity", aln.identity)?;
    d.set_item("coverage_a", aln.coverage_a)?;
    d.set_item("coverage_b", aln.coverage_b)?;
    Ok(d.into_any().unbind())
}

/// Per-atom accessible surface area.
#[pyfunction]
#[pyo3(signature = (centers, radii, probe = 1.4, points = 960))]
fn atom_sasa(centers: Vec<[f64; 3]>, radii: Vec<f64>, probe: f64, points: usize) -> PyResult<Vec<f64>> {
    sasa(&centers, &radii, SasaParams { probe, n_points: points }).map_err(to_py)
}

#[pyfunction]
fn binary_metrics(py: Python<'_>, y_true: Vec<bool>, y_pred: Vec<bool>) -> PyResult<Py<PyAny>> {
    let m = metrics(&y_true, &y_pred).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("mcc", m.mcc)?;
    d.set_item("precision", m.precision)?;
    d.set_item("recall", m.recall)?;
    d.set_item("f1", m.f1)?;
    d.set_item("degenerate", m.degenerate)?;
    d.set_item("tp", m.confusion.tp)?;
    d.set_item("fp", m.confusion.fp)?;
    d.set_item("tn", m.confusion.tn)?;
    d.set_item("fn", m.confusion.fn_)?;
    Ok(d.into_any().unbind())
}

/// `None` when only one class is present.
#[pyfunction]
fn auc_roc(scores: Vec<f64>, y_true: Vec<bool>) -> PyResult<Option<f64>> {
    auc(&scores, &y_true).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (probs, labels, w_pos = 100.0, w_neg = 1.0, lam = 1e-5, c = 43.0))]
fn walle_loss(probs: Vec<f64>, labels: Vec<f64>, w_pos: f64, w_neg: f64, lam: f64, c: f64) -> PyResult<f64> {
    if probs.len() != labels.len() {
        return Err(PyValueError::new_err("probs and labels differ in length"));
    }
    let cfg = LossConfig {
        w_pos,
        w_neg,
        lambda: lam,
        c,
    };
    cfg.validate().map_err(to_py)?;
    Ok(loss(&probs, &labels, &cfg))
}

fn assignment_dict(py: Python<'_>, r: epigraph::split::SplitResult) -> PyResult<Py<PyAny>> {
    let d = PyDict::new(py);
    d.set_item("train", r.assignment.train)?;
    d.set_item("val", r.assignment.val)?;
    d.set_item("test", r.assignment.test)?;
    d.set_item("warnings", r.warnings)?;
    Ok(d.into_any().unbind())
}

/// Stratified split of `(id, ratio_bin)` items.
#[pyfunction]
#[pyo3(signature = (items, seed = 0, val = 0.1, test = 0.1))]
fn split_by_ratio(py: Python<'_>, items: Vec<(String, usize)>, seed: u64, val: f64, test: f64) -> PyResult<Py<PyAny>> {
    let f = SplitFractions {
        train: 1.0 - val - test,
        val,
        test,
    };
    assignment_dict(py, ratio_split(&items, f, seed).map_err(to_py)?)
}

/// Whole-group split of `(id, group)` items, by fractions or explicit counts.
#[pyfunction]
#[pyo3(signature = (items, seed = 0, val = 0.1, test = 0.1, val_count = None, test_count = None))]
fn split_by_group(
    py: Python<'_>,
    items: Vec<(String, usize)>,
    seed: u64,
    val: f64,
    test: f64,
    val_count: Option<usize>,
    test_count: Option<usize>,
) -> PyResult<Py<PyAny>> {
    let targets = match (val_count, test_count) {
        (Some(v), Some(t)) => GroupTargets::Counts { val: v, test: t },
        (None, None) => GroupTargets::Fractions(SplitFractions {
            train: 1.0 - val - test,
            val,
            test,
        }),
        _ => return Err(PyValueError::new_err("give both val_count and test_count or neither")),
    };
    assignment_dict(py, group_split(&items, targets, seed).map_err(to_py)?)
}

/// Runs the command-line tool in-process and returns its exit code.
#[pyfunction]
fn run_cli(py: Python<'_>, args: Vec<String>) -> i32 {
    let mut argv = vec!["epigraph".to_string()];
    argv.extend(args);
    py.detach(|| epigraph::cli::run(argv))
}

#[pymodule]
fn epigraph_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGraphPair>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(toy_config, m)?)?;
    m.add_function(wrap_pyfunction!(toy_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(build_graph, m)?)?;
    m.add_function(wrap_pyfunction!(parse_pdb, m)?)?;
    m.add_function(wrap_pyfunction!(onehot, m)?)?;
    m.add_function(wrap_pyfunction!(blosum62, m)?)?;
    m.add_function(wrap_pyfunction!(read_emb1, m)?)?;
    m.add_function(wrap_pyfunction!(nw_align, m)?)?;
    m.add_function(wrap_pyfunction!(atom_sasa, m)?)?;
    m.add_function(wrap_pyfunction!(binary_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(auc_roc, m)?)?;
    m.add_function(wrap_pyfunction!(walle_loss, m)?)?;
    m.add_function(wrap_pyfunction!(split_by_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(split_by_group, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
