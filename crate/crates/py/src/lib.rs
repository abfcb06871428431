//! Python bindings: datasets, IL tables, the selection loop and the scoring
//! primitives. Heavy calls release the GIL.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyKeyError, PyValueError};
use pyo3::prelude::*;

use rholoss::data::{gen_synthetic, inject_uniform_noise, split, LabeledDataset, SplitSpec};
use rholoss::il::{compute_il_table, train_il_model, IlTraining, IrreducibleLossTable};
use rholoss::nn::{MlpConfig, MlpModel};
use rholoss::optim::OptimizerConfig;
use rholoss::selection::{sample_grad_norm_is, score_rho_loss, select_top_k, SelectionPolicy};
use rholoss::tensor::Tensor;
use rholoss::trainer::{run_training, RunConfig, RunRecord};
use rholoss::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        Error::Lookup(id) => PyKeyError::new_err(id),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn arch(input: usize, hidden: &[usize], classes: usize) -> MlpConfig {
    let mut sizes = vec![input];
    sizes.extend_from_slice(hidden);
    sizes.push(classes);
    MlpConfig::new(sizes)
}

#[pyclass(name = "Dataset", module = "rholoss_py", frozen)]
struct PyDataset {
    inner: LabeledDataset,
}

#[pymethods]
impl PyDataset {
    #[new]
    fn new(features: Vec<Vec<f64>>, labels: Vec<usize>, classes: usize) -> PyResult<Self> {
        let x = Tensor::from_rows(&features).map_err(py_err)?;
        let inner = LabeledDataset::new(x, labels, classes).map_err(py_err)?;
        Ok(Self { inner })
    }

    /// Gaussian clusters, one per class.
    #[staticmethod]
    #[pyo3(signature = (classes, per_class, dim, spread, seed = 0))]
    fn synthetic(classes: usize, per_class: usize, dim: usize, spread: f64, seed: u64) -> PyResult<Self> {
        let inner = gen_synthetic(classes, per_class, dim, spread, seed).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load_csv(path: PathBuf) -> PyResult<Self> {
        let inner = LabeledDataset::load_csv(&path).map_err(py_err)?;
        Ok(Self { inner })
    }

    fn save_csv(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save_csv(&path).map_err(py_err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(len={}, dim={}, classes={}, corrupted={})",
            self.inner.len(),
            self.inner.dim(),
            self.inner.classes(),
            self.inner.corrupted_count()
        )
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn classes(&self) -> usize {
        self.inner.classes()
    }

    #[getter]
    fn ids(&self) -> Vec<u64> {
        self.inner.ids().to_vec()
    }

    #[getter]
    fn labels(&self) -> Vec<usize> {
        self.inner.labels().to_vec()
    }

    #[getter]
    fn original_labels(&self) -> Vec<usize> {
        self.inner.original_labels().to_vec()
    }

    fn features(&self) -> Vec<Vec<f64>> {
        self.inner.features().iter_rows().map(<[f64]>::to_vec).collect()
    }

    fn corrupted_count(&self) -> usize {
        self.inner.corrupted_count()
    }

    fn content_hash(&self) -> String {
        self.inner.content_hash()
    }

    /// `(rest, held)` with `round(fraction * len)` examples held out.
    #[pyo3(signature = (fraction, seed = 0))]
    fn split(&self, fraction: f64, seed: u64) -> PyResult<(Self, Self)> {
        let (a, b) = split(&self.inner, &SplitSpec::holdout(fraction, seed)).map_err(py_err)?;
        Ok((Self { inner: a }, Self { inner: b }))
    }

    #[pyo3(signature = (p, seed = 0))]
    fn with_uniform_noise(&self, p: f64, seed: u64) -> PyResult<Self> {
        let inner = inject_uniform_noise(&self.inner, p, seed).map_err(py_err)?;
        Ok(Self { inner })
    }
}

#[pyclass(name = "IlTable", module = "rholoss_py", frozen)]
struct PyIlTable {
    inner: IrreducibleLossTable,
}

#[pymethods]
impl PyIlTable {
    /// Trains the IL model on `holdout`, keeps the epoch with the lowest
    /// loss on `pool`, and tabulates its loss on every example of `pool`.
    #[staticmethod]
    #[pyo3(signature = (holdout, pool, hidden = vec![128, 128], epochs = 40, lr = 1e-3, seed = 0))]
    fn fit(
        py: Python<'_>,
        holdout: &PyDataset,
        pool: &PyDataset,
        hidden: Vec<usize>,
        epochs: usize,
        lr: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let training = IlTraining {
            arch: arch(pool.inner.dim(), &hidden, pool.inner.classes()),
            epochs,
            optimizer: OptimizerConfig::default().with_lr(lr),
            batch_size: 32,
            seed,
        };
        let (h, p) = (&holdout.inner, &pool.inner);
        let inner = py
            .detach(|| {
                let (model, _) = train_il_model(h, p, &training)?;
                compute_il_table(&model, p)
            })
            .map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load_csv(path: PathBuf) -> PyResult<Self> {
        let inner = IrreducibleLossTable::load_csv(&path).map_err(py_err)?;
        Ok(Self { inner })
    }

    fn save_csv(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save_csv(&path).map_err(py_err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __getitem__(&self, id: u64) -> PyResult<f64> {
        self.inner.get(id).map_err(py_err)
    }

    fn to_dict(&self) -> std::collections::HashMap<u64, f64> {
        self.inner.iter().collect()
    }

    #[getter]
    fn scheme(&self) -> &'static str {
        self.inner.scheme().as_str()
    }

    #[getter]
    fn provenance(&self) -> Vec<String> {
        self.inner.provenance().to_vec()
    }
}

#[pyclass(name = "Run", module = "rholoss_py", frozen)]
struct PyRun {
    inner: RunRecord,
}

#[pymethods]
impl PyRun {
    #[getter]
    fn policy(&self) -> String {
        self.inner.header.policy.clone()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.header.seed
    }

    #[getter]
    fn final_accuracy(&self) -> Option<f64> {
        self.inner.final_accuracy()
    }

    /// `(step, epoch, accuracy, loss)` per evaluation.
    fn evals(&self) -> Vec<(usize, usize, f64, f64)> {
        self.inner.evals.iter().map(|e| (e.step, e.epoch, e.accuracy, e.loss)).collect()
    }

    /// `(epoch, corrupted, low_relevance, already_correct)` fractions of
    /// the selected points, per epoch.
    fn compositions(&self) -> Vec<(usize, f64, f64, f64)> {
        self.inner
            .compositions
            .iter()
            .map(|c| (c.epoch, c.corrupted, c.low_relevance, c.already_correct))
            .collect()
    }

    fn to_csv(&self) -> String {
        self.inner.to_csv_string()
    }
}

/// Trains an MLP on `train` with online batch selection and evaluates on
/// `test` after every epoch.
#[pyfunction]
#[pyo3(signature = (train, test, policy = "rho-loss", il_table = None, n_b = 32, n_big = 320, epochs = 10, hidden = vec![128, 128], lr = 1e-3, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn run(
    py: Python<'_>,
    train: &PyDataset,
    test: &PyDataset,
    policy: &str,
    il_table: Option<&PyIlTable>,
    n_b: usize,
    n_big: usize,
    epochs: usize,
    hidden: Vec<usize>,
    lr: f64,
    seed: u64,
) -> PyResult<PyRun> {
    let policy: SelectionPolicy = policy.parse().map_err(py_err)?;
    let mut rc = RunConfig::new(policy, epochs, seed);
    rc.n_b = n_b;
    rc.n_big = n_big;
    rc.optimizer = rc.optimizer.with_lr(lr);
    let model = MlpModel::new(arch(train.inner.dim(), &hidden, train.inner.classes()), seed).map_err(py_err)?;
    let (tr, te, table) = (&train.inner, &test.inner, il_table.map(|t| &t.inner));
    let inner = py.detach(|| run_training(tr, te, table, &rc, model)).map_err(py_err)?;
    Ok(PyRun { inner })
}

/// Training loss minus irreducible loss, unclamped.
#[pyfunction]
fn rho_loss_scores(losses: Vec<f64>, il: Vec<f64>) -> PyResult<Vec<f64>> {
    score_rho_loss(&losses, &il).map_err(py_err)
}

/// Indices of the `n_b` highest scores; ties broken by a seeded shuffle.
#[pyfunction]
#[pyo3(signature = (scores, n_b, tie_seed = 0))]
fn top_k(scores: Vec<f64>, n_b: usize, tie_seed: u64) -> PyResult<Vec<usize>> {
    select_top_k(&scores, n_b, tie_seed).map_err(py_err)
}

/// `n_b` draws with replacement, p ∝ score^(1/T), and their weights.
#[pyfunction]
#[pyo3(signature = (scores, n_b, temperature = 1.0, seed = 0))]
fn importance_sample(scores: Vec<f64>, n_b: usize, temperature: f64, seed: u64) -> PyResult<(Vec<usize>, Vec<f64>)> {
    sample_grad_norm_is(&scores, n_b, temperature, seed).map_err(py_err)
}

/// Spearman correlation with average ranks for ties; None when either
/// side is constant.
#[pyfunction]
fn spearman(xs: Vec<f64>, ys: Vec<f64>) -> PyResult<Option<f64>> {
    rholoss::ladder::spearman(&xs, &ys).map_err(py_err)
}

#[pyfunction]
fn derive_seed(seed: u64, stream: u64) -> u64 {
    rholoss::rng::derive_seed(seed, stream)
}

#[pymodule]
fn rholoss_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyIlTable>()?;
    m.add_class::<PyRun>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(rho_loss_scores, m)?)?;
    m.add_function(wrap_pyfunction!(top_k, m)?)?;
    m.add_function(wrap_pyfunction!(importance_sample, m)?)?;
    m.add_function(wrap_pyfunction!(spearman, m)?)?;
    m.add_function(wrap_pyfunction!(derive_seed, m)?)?;
    m.add("POLICIES", rholoss::selection::POLICY_NAMES.to_vec())?;
    Ok(())
}
