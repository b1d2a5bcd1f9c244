//! Python bindings exposing the search space, the rank-consistency
//! metrics, the synthetic architecture oracle, and oracle-backed searcher
//! runs. Built as an extension module named `autoctr`.

use std::sync::Arc;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use autoctr_core::evaluator::OracleEvaluator;
use autoctr_core::lanas::{lanas_search, LanasConfig};
use autoctr_core::metrics;
use autoctr_core::model;
use autoctr_core::search_space as space;
use autoctr_core::searcher::{random_search, search, SearchConfig};

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// A point in the block-based DAG search space.
#[pyclass(name = "Architecture")]
#[derive(Clone)]
struct PyArchitecture {
    inner: space::Architecture,
}

#[pymethods]
impl PyArchitecture {
    /// Uniformly sample a valid architecture.
    #[staticmethod]
    #[pyo3(signature = (seed, allow_empty = true))]
    fn random(seed: u64, allow_empty: bool) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PyArchitecture {
            inner: space::random_arch(&mut rng, allow_empty),
        }
    }

    /// `deepfm_like`, `dlrm_like`, or `mlp_warmstart`.
    #[staticmethod]
    fn preset(name: &str) -> PyResult<Self> {
        let name: space::PresetName = name.parse().map_err(err)?;
        Ok(PyArchitecture {
            inner: space::preset(name),
        })
    }

    #[staticmethod]
    fn from_json(json: &str) -> PyResult<Self> {
        Ok(PyArchitecture {
            inner: space::Architecture::from_json(json).map_err(err)?,
        })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    /// Structural violations; empty means valid.
    fn validate(&self) -> Vec<String> {
        space::validate(&self.inner)
    }

    /// Fixed-width numeric encoding (length 105).
    fn encode(&self) -> PyResult<Vec<f64>> {
        Ok(space::encode(&self.inner).map_err(err)?.into_vec())
    }

    /// One mutation operator application followed by repair.
    fn mutate(&self, seed: u64) -> PyResult<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(PyArchitecture {
            inner: space::mutate(&self.inner, &mut rng).map_err(err)?,
        })
    }

    /// Exactly `n` unique single-mutation neighbors.
    fn neighbors(&self, n: usize, seed: u64) -> PyResult<Vec<PyArchitecture>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(space::neighbors(&self.inner, n, &mut rng)
            .map_err(err)?
            .into_iter()
            .map(|inner| PyArchitecture { inner })
            .collect())
    }

    fn n_nonempty(&self) -> usize {
        self.inner.n_nonempty()
    }

    /// Parameter and per-example FLOP counts under a feature shape given
    /// as (n_dense, sparse cardinalities, embedding_dim).
    #[pyo3(signature = (n_dense, sparse_cardinalities, embedding_dim = 16))]
    fn complexity(
        &self,
        n_dense: usize,
        sparse_cardinalities: Vec<u32>,
        embedding_dim: usize,
    ) -> PyResult<(u64, u64)> {
        let fields = sparse_cardinalities
            .into_iter()
            .enumerate()
            .map(|(i, c)| space::SparseFieldSpec::new(format!("s{i}"), c))
            .collect();
        let spec = space::FeatureSpec::new(n_dense, fields, embedding_dim).map_err(err)?;
        let report = model::complexity(&self.inner, &spec).map_err(err)?;
        Ok((report.n_params, report.flops))
    }

    fn __repr__(&self) -> String {
        format!("Architecture({})", self.inner.to_json())
    }

    fn __eq__(&self, other: &PyArchitecture) -> bool {
        self.inner == other.inner
    }
}

/// Decode a 105-slot vector back into an architecture.
#[pyfunction]
fn decode(values: Vec<f64>) -> PyResult<PyArchitecture> {
    Ok(PyArchitecture {
        inner: space::decode(&values).map_err(err)?,
    })
}

/// Exact count of distinct valid architectures.
#[pyfunction]
fn space_size(max_blocks: usize, allow_empty: bool) -> u128 {
    space::space_size(max_blocks, allow_empty)
}

#[pyfunction]
fn kendall_tau_b(x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    metrics::kendall_tau_b(&x, &y).map_err(err)
}

#[pyfunction]
fn ndcg_at_k(relevance_by_predicted_order: Vec<f64>, k: usize) -> f64 {
    metrics::ndcg_at_k(&relevance_by_predicted_order, k)
}

#[pyfunction]
fn auc(labels: Vec<u8>, probs: Vec<f64>) -> PyResult<f64> {
    metrics::auc(&labels, &probs).map_err(err)
}

#[pyfunction]
fn logloss(labels: Vec<u8>, probs: Vec<f64>) -> PyResult<f64> {
    metrics::logloss(&labels, &probs).map_err(err)
}

/// Deterministic pseudo-logloss of the synthetic architecture oracle.
#[pyfunction]
fn synthetic_oracle(arch: &PyArchitecture) -> PyResult<f64> {
    metrics::synthetic_arch_oracle(&arch.inner).map_err(err)
}

/// Parent-selection probability of quality rank `r_star` in a
/// population of `p` under intensity `lam`.
#[pyfunction]
fn parent_prob(r_star: usize, p: usize, lam: usize) -> PyResult<f64> {
    autoctr_core::searcher::parent_prob(r_star, p, lam).map_err(err)
}

/// Outcome of an oracle-backed searcher run.
#[pyclass(name = "SearchSummary")]
struct PySearchSummary {
    #[pyo3(get)]
    best_logloss: f64,
    #[pyo3(get)]
    best_arch_json: String,
    #[pyo3(get)]
    curve: Vec<f64>,
}

/// Run a searcher against the synthetic oracle: `autoctr`, `random`, or
/// `lanas+`. Single-worker runs replay deterministically from the seed.
#[pyfunction]
#[pyo3(signature = (searcher, budget, init, seed, workers = 1))]
fn run_oracle_search(
    searcher: &str,
    budget: usize,
    init: usize,
    seed: u64,
    workers: usize,
) -> PyResult<PySearchSummary> {
    let evaluator = Arc::new(OracleEvaluator::with_default_spec());
    let result = match searcher {
        "autoctr" => {
            let config = SearchConfig {
                init_size: init,
                budget,
                workers,
                ..SearchConfig::default()
            };
            search(evaluator, &config, seed).map_err(err)?
        }
        "random" => {
            let config = SearchConfig {
                init_size: init,
                budget,
                workers,
                ..SearchConfig::default()
            };
            random_search(evaluator, &config, seed).map_err(err)?
        }
        "lanas+" => {
            let config = LanasConfig {
                init_size: init,
                budget,
                workers,
                ..LanasConfig::default()
            };
            lanas_search(evaluator, &config, seed).map_err(err)?
        }
        other => return Err(err(format!("unknown searcher `{other}`"))),
    };
    Ok(PySearchSummary {
        best_logloss: result.best.val_logloss,
        best_arch_json: result.best.arch.to_json(),
        curve: result.curve,
    })
}

#[pymodule]
fn autoctr(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyArchitecture>()?;
    m.add_class::<PySearchSummary>()?;
    m.add_function(wrap_pyfunction!(decode, m)?)?;
    m.add_function(wrap_pyfunction!(space_size, m)?)?;
    m.add_function(wrap_pyfunction!(kendall_tau_b, m)?)?;
    m.add_function(wrap_pyfunction!(ndcg_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(auc, m)?)?;
    m.add_function(wrap_pyfunction!(logloss, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_oracle, m)?)?;
    m.add_function(wrap_pyfunction!(parent_prob, m)?)?;
    m.add_function(wrap_pyfunction!(run_oracle_search, m)?)?;
    Ok(())
}
