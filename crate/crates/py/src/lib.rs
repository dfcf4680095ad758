//! Python bindings: tables, measures, entropy, Fisher information,
//! Jacobians and the Monte Carlo harness. Reports cross the boundary as
//! JSON strings.

use num_complex::Complex64;
use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use rectfree::cumulant::{cumulants_to_moments, moments_to_cumulants};
use rectfree::dblock::{ScalarCumulantTable, ScalarMomentTable};
use rectfree::entropy::{chi_single, constant_c, maximizer_gap, rate_j, EntropyInput};
use rectfree::fisher::{cramer_rao, fisher_info, ConjugateCandidate};
use rectfree::measures::GridMeasure;
use rectfree::ncderiv::{jacobian_report, MatrixPoint, PolySystem};
use rectfree::ncpart;
use rectfree::randmat::{convergence_experiment, polar_scenario, singular_law_check, EnsemblePlan};

create_exception!(rectfree_py, RectfreeError, PyValueError);
create_exception!(rectfree_py, CapacityError, RectfreeError);

fn err(e: rectfree::Error) -> PyErr {
    match e {
        rectfree::Error::Capacity(_) => CapacityError::new_err(e.to_string()),
        _ => RectfreeError::new_err(e.to_string()),
    }
}

fn parse(s: &str) -> PyResult<serde_json::Value> {
    serde_json::from_str(s).map_err(|e| RectfreeError::new_err(format!("invalid JSON: {e}")))
}

fn dump<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("reports serialize")
}

#[pyclass(name = "MomentTable", module = "rectfree_py", skip_from_py_object)]
#[derive(Clone)]
struct PyMomentTable {
    inner: ScalarMomentTable,
}

#[pymethods]
impl PyMomentTable {
    #[staticmethod]
    fn from_json(s: &str) -> PyResult<Self> {
        Ok(PyMomentTable { inner: ScalarMomentTable::from_json(s).map_err(err)? })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn degree(&self) -> usize {
        self.inner.degree()
    }

    /// Value of a word such as `"a a*"`; zero for chain-broken words.
    fn value(&self, word: &str) -> PyResult<Complex64> {
        self.inner.value_str(word).map_err(err)
    }

    /// Consistency violations as `(check, word, partner, discrepancy)`.
    fn violations(&self) -> Vec<(String, String, String, f64)> {
        self.inner.validate().into_iter().map(|v| (v.check.to_string(), v.word, v.partner, v.discrepancy)).collect()
    }

    fn to_cumulants(&self) -> PyResult<PyCumulantTable> {
        Ok(PyCumulantTable { inner: moments_to_cumulants(&self.inner).map_err(err)? })
    }
}

#[pyclass(name = "CumulantTable", module = "rectfree_py", skip_from_py_object)]
#[derive(Clone)]
struct PyCumulantTable {
    inner: ScalarCumulantTable,
}

#[pymethods]
impl PyCumulantTable {
    #[staticmethod]
    fn from_json(s: &str) -> PyResult<Self> {
        Ok(PyCumulantTable { inner: ScalarCumulantTable::from_json(s).map_err(err)? })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn degree(&self) -> usize {
        self.inner.degree()
    }

    fn value(&self, word: &str) -> PyResult<Complex64> {
        self.inner.value_str(word).map_err(err)
    }

    fn to_moments(&self) -> PyResult<PyMomentTable> {
        Ok(PyMomentTable { inner: cumulants_to_moments(&self.inner).map_err(err)? })
    }
}

#[pyclass(name = "Measure", module = "rectfree_py", skip_from_py_object)]
#[derive(Clone)]
struct PyMeasure {
    inner: GridMeasure,
}

#[pymethods]
impl PyMeasure {
    #[staticmethod]
    fn from_json(s: &str) -> PyResult<Self> {
        Ok(PyMeasure { inner: GridMeasure::from_json(s).map_err(err)? })
    }

    #[staticmethod]
    #[pyo3(signature = (lam, scale = 1.0))]
    fn mp(lam: f64, scale: f64) -> PyResult<Self> {
        Ok(PyMeasure { inner: GridMeasure::mp(lam, scale).map_err(err)? })
    }

    #[staticmethod]
    fn uniform(xmin: f64, xmax: f64) -> PyResult<Self> {
        Ok(PyMeasure { inner: GridMeasure::uniform(xmin, xmax).map_err(err)? })
    }

    #[staticmethod]
    fn atoms(atoms: Vec<(f64, f64)>) -> PyResult<Self> {
        Ok(PyMeasure { inner: GridMeasure::atoms(atoms).map_err(err)? })
    }

    fn to_json(&self) -> String {
        self.inner.to_json_value().to_string()
    }

    fn mean(&self) -> f64 {
        self.inner.mean()
    }

    fn moment(&self, p: u32) -> f64 {
        self.inner.moment(p)
    }

    fn support(&self) -> (f64, f64) {
        self.inner.support()
    }
}

#[pyfunction]
fn catalan(n: usize) -> u64 {
    ncpart::catalan(n)
}

#[pyfunction]
fn count_nc(n: usize) -> PyResult<u64> {
    ncpart::count_nc(n).map_err(err)
}

/// Free entropy of a single element whose polar law is `mu`.
#[pyfunction]
fn chi(mu: &PyMeasure, rho_k: f64, rho_l: f64) -> PyResult<f64> {
    let inp = EntropyInput::new(mu.inner.clone(), rho_k, rho_l).map_err(err)?;
    Ok(chi_single(&inp).map_err(err)?.to_f64())
}

#[pyfunction]
fn entropy_constant(rho_k: f64, rho_l: f64) -> PyResult<f64> {
    constant_c(rho_k, rho_l).map_err(err)
}

#[pyfunction]
fn rate(mu: &PyMeasure, rho_k: f64, rho_l: f64) -> PyResult<f64> {
    rate_j(&mu.inner, rho_k, rho_l).map_err(err)
}

#[pyfunction]
fn gap(mu: &PyMeasure, rho_k: f64, rho_l: f64, mean_cap: f64) -> PyResult<f64> {
    maximizer_gap(&mu.inner, rho_k, rho_l, mean_cap).map_err(err)
}

/// `(phi_r, cramer_rao_slack)` for a joint table with conjugate letters.
#[pyfunction]
#[pyo3(signature = (joint, xi_names, degree = 8))]
fn fisher(joint: &PyMomentTable, xi_names: Vec<String>, degree: usize) -> PyResult<(f64, f64)> {
    let names: Vec<&str> = xi_names.iter().map(String::as_str).collect();
    let cand = ConjugateCandidate::new(joint.inner.clone(), &names).map_err(err)?;
    let phi = fisher_info(&cand, degree).map_err(err)?.phi_r.to_f64();
    Ok((phi, cramer_rao(&cand, degree).map_err(err)?.slack))
}

/// `(log_jacobian, fd_estimate, discrepancy)` from system and point JSON.
#[pyfunction]
fn jacobian(system_json: &str, point_json: &str) -> PyResult<(f64, f64, f64)> {
    let sys = PolySystem::from_json_value(&parse(system_json)?).map_err(err)?;
    let pt = MatrixPoint::from_json_value(sys.alphabet.clone(), &parse(point_json)?).map_err(err)?;
    let r = jacobian_report(&sys, &pt).map_err(err)?;
    Ok((r.log_jacobian, r.fd_estimate, r.discrepancy))
}

#[pyclass(name = "EnsemblePlan", module = "rectfree_py", skip_from_py_object)]
#[derive(Clone)]
struct PyEnsemblePlan {
    inner: EnsemblePlan,
}

#[pymethods]
impl PyEnsemblePlan {
    #[staticmethod]
    fn from_json(s: &str) -> PyResult<Self> {
        Ok(PyEnsemblePlan { inner: EnsemblePlan::from_json(s).map_err(err)? })
    }

    #[staticmethod]
    fn standard_battery() -> Self {
        PyEnsemblePlan { inner: EnsemblePlan::standard_battery() }
    }

    fn to_json(&self) -> String {
        dump(&self.inner)
    }

    /// Runs the experiment and returns the JSON report.
    fn run(&self) -> PyResult<String> {
        Ok(dump(&convergence_experiment(&self.inner).map_err(err)?))
    }

    fn run_csv(&self) -> PyResult<String> {
        Ok(convergence_experiment(&self.inner).map_err(err)?.to_csv())
    }
}

#[pyfunction]
fn singular_law(q: usize, q_prime: usize, samples: usize, seed: u64) -> PyResult<String> {
    Ok(dump(&singular_law_check(q, q_prime, samples, seed).map_err(err)?))
}

#[pyfunction]
fn polar(n: usize, kernel_fraction: f64, h_law: &PyMeasure, trials: usize, seed: u64) -> PyResult<String> {
    Ok(dump(&polar_scenario(n, kernel_fraction, &h_law.inner, trials, seed).map_err(err)?))
}

#[pymodule]
fn rectfree_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("RectfreeError", m.py().get_type::<RectfreeError>())?;
    m.add("CapacityError", m.py().get_type::<CapacityError>())?;
    m.add_class::<PyMomentTable>()?;
    m.add_class::<PyCumulantTable>()?;
    m.add_class::<PyMeasure>()?;
    m.add_class::<PyEnsemblePlan>()?;
    m.add_function(wrap_pyfunction!(catalan, m)?)?;
    m.add_function(wrap_pyfunction!(count_nc, m)?)?;
    m.add_function(wrap_pyfunction!(chi, m)?)?;
    m.add_function(wrap_pyfunction!(entropy_constant, m)?)?;
    m.add_function(wrap_pyfunction!(rate, m)?)?;
    m.add_function(wrap_pyfunction!(gap, m)?)?;
    m.add_function(wrap_pyfunction!(fisher, m)?)?;
    m.add_function(wrap_pyfunction!(jacobian, m)?)?;
    m.add_function(wrap_pyfunction!(singular_law, m)?)?;
    m.add_function(wrap_pyfunction!(polar, m)?)?;
    Ok(())
}
