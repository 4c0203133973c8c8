//! Python bindings: families, tree growth, likelihoods, estimators, limit
//! laws, the asymptotic covariance and the urn covariance.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use patree::estimate::{self, FitResult};
use patree::model::{default_family, FamilyKind};
use patree::{inference, limits, tree, urn, PaError};

fn to_py(e: PaError) -> PyErr {
    match e {
        PaError::Domain(_) | PaError::Parse(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn vec_of(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

/// A preference-function family with its default parameter box.
#[pyclass(name = "Family", frozen)]
struct PyFamily {
    inner: patree::PaFamily,
}

#[pymethods]
impl PyFamily {
    /// `kind` is one of power-offset, affine, log-power[:shift] or
    /// eventually-constant:K.
    #[new]
    #[pyo3(signature = (kind = "power-offset"))]
    fn new(kind: &str) -> PyResult<Self> {
        let kind: FamilyKind = kind.parse().map_err(to_py)?;
        Ok(Self {
            inner: default_family(&kind).map_err(to_py)?,
        })
    }

    #[getter]
    fn kind(&self) -> String {
        self.inner.kind().to_string()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    /// `(lower, upper)` bounds of the parameter box.
    #[getter]
    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let b = self.inner.bounds();
        (b.lower.clone(), b.upper.clone())
    }

    /// `f_theta(k)`.
    fn __call__(&self, theta: Vec<f64>, k: usize) -> PyResult<f64> {
        self.inner.eval(&theta, k).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("Family('{}')", self.inner.kind())
    }
}

/// A grown tree: the attachment-degree sequence and the final degree counts.
#[pyclass(name = "Tree", frozen)]
struct PyTree {
    history: tree::GrowthHistory,
    snapshot: tree::DegreeSnapshot,
}

#[pymethods]
impl PyTree {
    #[getter]
    fn n(&self) -> usize {
        self.history.n()
    }

    /// Degree of the node chosen by each newcomer, in arrival order.
    #[getter]
    fn degrees(&self) -> Vec<u32> {
        self.history.degrees().to_vec()
    }

    /// `{k: N_k}` for the final tree.
    #[getter]
    fn counts(&self) -> BTreeMap<usize, u64> {
        self.snapshot.to_map()
    }

    fn __repr__(&self) -> String {
        format!(
            "Tree(n={}, max_degree={})",
            self.history.n(),
            self.snapshot.max_degree()
        )
    }
}

#[pyfunction]
fn grow(family: &PyFamily, theta: Vec<f64>, n: usize, seed: u64) -> PyResult<PyTree> {
    let (history, snapshot) = patree::grow(&family.inner, &theta, n, seed).map_err(to_py)?;
    Ok(PyTree { history, snapshot })
}

#[pyfunction]
fn loglik(family: &PyFamily, theta: Vec<f64>, tree: &PyTree) -> PyResult<f64> {
    estimate::loglik(&family.inner, &theta, &tree.history).map_err(to_py)
}

#[pyfunction]
fn score(family: &PyFamily, theta: Vec<f64>, tree: &PyTree) -> PyResult<Vec<f64>> {
    Ok(vec_of(
        &estimate::score(&family.inner, &theta, &tree.history).map_err(to_py)?,
    ))
}

#[pyfunction]
fn hessian(family: &PyFamily, theta: Vec<f64>, tree: &PyTree) -> PyResult<Vec<Vec<f64>>> {
    Ok(rows(
        &estimate::hessian(&family.inner, &theta, &tree.history).map_err(to_py)?,
    ))
}

#[pyfunction]
fn pseudo_loglik(family: &PyFamily, theta: Vec<f64>, tree: &PyTree) -> PyResult<f64> {
    estimate::pseudo_loglik(&family.inner, &theta, &tree.snapshot).map_err(to_py)
}

fn fit_dict<'py>(py: Python<'py>, fit: &FitResult) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("theta", fit.theta_hat.clone())?;
    d.set_item("objective", fit.objective)?;
    d.set_item("score_norm", fit.score_norm)?;
    d.set_item("iterations", fit.iterations)?;
    d.set_item("converged", fit.converged)?;
    d.set_item("at_boundary", fit.at_boundary.clone())?;
    Ok(d)
}

/// Maximum likelihood from the full history.
#[pyfunction]
#[pyo3(signature = (family, tree, init = None))]
fn fit_mle<'py>(
    py: Python<'py>,
    family: &PyFamily,
    tree: &PyTree,
    init: Option<Vec<f64>>,
) -> PyResult<Bound<'py, PyDict>> {
    let fit = estimate::fit_mle(&family.inner, &tree.history, init.as_deref()).map_err(to_py)?;
    fit_dict(py, &fit)
}

/// Pseudo maximum likelihood from the final degree counts only.
#[pyfunction]
#[pyo3(signature = (family, tree, init = None))]
fn fit_pmle<'py>(
    py: Python<'py>,
    family: &PyFamily,
    tree: &PyTree,
    init: Option<Vec<f64>>,
) -> PyResult<Bound<'py, PyDict>> {
    let fit = estimate::fit_pmle(&family.inner, &tree.snapshot, init.as_deref()).map_err(to_py)?;
    fit_dict(py, &fit)
}

/// Ratio-matching estimate from the final degree counts.
#[pyfunction]
fn fit_empirical(family: &PyFamily, tree: &PyTree) -> PyResult<Vec<f64>> {
    estimate::empirical_fit(&family.inner, &tree.snapshot).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (family, theta, tol = 1e-12))]
fn malthusian(family: &PyFamily, theta: Vec<f64>, tol: f64) -> PyResult<f64> {
    limits::malthusian(&family.inner, &theta, tol).map_err(to_py)
}

/// `(lambda*, [p_1, .., p_K], [p_{>1}, .., p_{>K}])` with the tail beyond
/// `K` below `tail_tol`.
#[pyfunction]
#[pyo3(signature = (family, theta, tail_tol = 1e-12))]
fn limit_law(family: &PyFamily, theta: Vec<f64>, tail_tol: f64) -> PyResult<(f64, Vec<f64>, Vec<f64>)> {
    let law = limits::limit_law(&family.inner, &theta, tail_tol).map_err(to_py)?;
    Ok((law.lambda_star, law.probs, law.tails))
}

/// `(V0, V0^{-1})`; the MLE satisfies `sqrt(n)(theta_hat - theta0) -> N(0, V0^{-1})`.
#[pyfunction]
fn fisher_v0(family: &PyFamily, theta: Vec<f64>) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let info = inference::asymptotic_info(&family.inner, &theta).map_err(to_py)?;
    Ok((rows(&info.v0), rows(&info.v0_inv)))
}

/// Test of `beta = 1` for the power-offset family: `(statistic, critical value, reject)`.
#[pyfunction]
#[pyo3(signature = (alpha_hat, beta_hat, n, size = 0.05))]
fn wald_affinity(alpha_hat: f64, beta_hat: f64, n: usize, size: f64) -> PyResult<(f64, f64, bool)> {
    let fam = patree::PaFamily::power_offset();
    let w = inference::wald_affinity(&fam, alpha_hat, beta_hat, n, size).map_err(to_py)?;
    Ok((w.statistic, w.critical_value, w.reject))
}

/// Bootstrap covariance of the pseudo maximum likelihood estimate.
#[pyfunction]
fn bootstrap_variance(family: &PyFamily, theta: Vec<f64>, m: usize, s: usize, seed: u64) -> PyResult<Vec<Vec<f64>>> {
    let b = inference::bootstrap_variance(&family.inner, &theta, m, s, seed).map_err(to_py)?;
    Ok(rows(&b.sigma_tilde))
}

fn urn_dict<'py>(py: Python<'py>, system: &urn::UrnSystem, tol: f64) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("lambda1", system.lambda1())?;
    d.set_item("lambda2_real", system.lambda2_real())?;
    d.set_item("mean", vec_of(&system.mean_limit()))?;
    d.set_item("transfer", rows(system.transfer()))?;
    d.set_item("sigma", rows(&system.limit_covariance(tol).map_err(to_py)?))?;
    Ok(d)
}

/// Urn for `f(k) = k + alpha` tracking degrees `1..=kappa` and the
/// preference of the rest; returns the Perron data and limit covariance.
#[pyfunction]
#[pyo3(signature = (alpha, kappa, tol = 1e-10))]
fn affine_urn<'py>(py: Python<'py>, alpha: f64, kappa: usize, tol: f64) -> PyResult<Bound<'py, PyDict>> {
    let system = urn::build_affine_urn(alpha, kappa).map_err(to_py)?;
    urn_dict(py, &system, tol)
}

/// Urn for a preference function constant from degree `kappa` on.
#[pyfunction]
#[pyo3(signature = (family, theta, kappa, tol = 1e-10))]
fn cutoff_urn<'py>(
    py: Python<'py>,
    family: &PyFamily,
    theta: Vec<f64>,
    kappa: usize,
    tol: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let system = urn::build_cutoff_urn(&family.inner, &theta, kappa).map_err(to_py)?;
    urn_dict(py, &system, tol)
}

#[pymodule]
#[pyo3(name = "patree")]
fn patree_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyFamily>()?;
    m.add_class::<PyTree>()?;
    m.add_function(wrap_pyfunction!(grow, m)?)?;
    m.add_function(wrap_pyfunction!(loglik, m)?)?;
    m.add_function(wrap_pyfunction!(score, m)?)?;
    m.add_function(wrap_pyfunction!(hessian, m)?)?;
    m.add_function(wrap_pyfunction!(pseudo_loglik, m)?)?;
    m.add_function(wrap_pyfunction!(fit_mle, m)?)?;
    m.add_function(wrap_pyfunction!(fit_pmle, m)?)?;
    m.add_function(wrap_pyfunction!(fit_empirical, m)?)?;
    m.add_function(wrap_pyfunction!(malthusian, m)?)?;
    m.add_function(wrap_pyfunction!(limit_law, m)?)?;
    m.add_function(wrap_pyfunction!(fisher_v0, m)?)?;
    m.add_function(wrap_pyfunction!(wald_affinity, m)?)?;
    m.add_function(wrap_pyfunction!(bootstrap_variance, m)?)?;
    m.add_function(wrap_pyfunction!(affine_urn, m)?)?;
    m.add_function(wrap_pyfunction!(cutoff_urn, m)?)?;
    Ok(())
}
