//! Python bindings for the spcrystal solver.
//!
//! Structured results (study tables, reports) cross the boundary as plain
//! Python dicts built from their JSON form; fields cross as lists of complex.

use num_complex::Complex64;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyAny;

use spcrystal::densities::{check_condition_infrared, IonProfile, IonSpecies, PhysicalUnits};
use spcrystal::energy::energy;
use spcrystal::geometry::Cell;
use spcrystal::groundstate::{self, GroundStateResult};
use spcrystal::minimizer::{self, SolverConfig};
use spcrystal::problem::{Problem, ProblemSpec};
use spcrystal::spectral::ScalarField;

fn to_py_err(e: spcrystal::Error) -> PyErr {
    match e {
        spcrystal::Error::NotConverged(_) | spcrystal::Error::LineSearchStalled { .. } => {
            PyRuntimeError::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_python<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Simulation cell: `d` lattice periods plus truncation half-lengths.
#[pyclass(name = "Cell", module = "spcrystal_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyCell {
    inner: Cell,
}

#[pymethods]
impl PyCell {
    #[new]
    #[pyo3(signature = (d, periods, grid, trunc = Vec::new()))]
    fn new(d: usize, periods: Vec<[f64; 3]>, grid: [usize; 3], trunc: Vec<f64>) -> PyResult<Self> {
        let inner = Cell::new(d, &periods, &trunc, grid).map_err(to_py_err)?;
        Ok(PyCell { inner })
    }

    #[staticmethod]
    fn unit_torus(n: usize) -> PyResult<Self> {
        Ok(PyCell {
            inner: Cell::unit_torus(n).map_err(to_py_err)?,
        })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn grid(&self) -> [usize; 3] {
        self.inner.grid()
    }

    #[getter]
    fn volume(&self) -> f64 {
        self.inner.volume()
    }

    fn __repr__(&self) -> String {
        format!(
            "Cell(d={}, grid={:?}, trunc={:?})",
            self.inner.dim(),
            self.inner.grid(),
            self.inner.trunc()
        )
    }
}

/// One ion species.
#[pyclass(name = "Species", module = "spcrystal_py", frozen, from_py_object)]
#[derive(Clone)]
struct PySpecies {
    inner: IonSpecies,
}

#[pymethods]
impl PySpecies {
    #[staticmethod]
    #[pyo3(signature = (charge, sigma, position = [0.0; 3]))]
    fn gaussian(charge: f64, sigma: f64, position: [f64; 3]) -> Self {
        PySpecies {
            inner: IonSpecies::gaussian(charge, sigma, position),
        }
    }

    #[staticmethod]
    fn jellium(charge: f64) -> Self {
        PySpecies {
            inner: IonSpecies::jellium(charge),
        }
    }

    #[staticmethod]
    #[pyo3(signature = (charge, radii, density, position = [0.0; 3]))]
    fn tabulated(charge: f64, radii: Vec<f64>, density: Vec<f64>, position: [f64; 3]) -> PyResult<Self> {
        let table = spcrystal::densities::RadialTable::new(radii, density).map_err(to_py_err)?;
        Ok(PySpecies {
            inner: IonSpecies {
                charge,
                profile: IonProfile::Tabulated(table),
                mass: 1.0,
                position,
            },
        })
    }

    #[getter]
    fn charge(&self) -> f64 {
        self.inner.charge
    }

    #[getter]
    fn position(&self) -> [f64; 3] {
        self.inner.position
    }
}

/// Validated problem: cell, species and units.
#[pyclass(name = "Problem", module = "spcrystal_py", frozen)]
struct PyProblem {
    inner: Problem,
}

#[pymethods]
impl PyProblem {
    #[new]
    #[pyo3(signature = (cell, species, hbar = 1.0, mass_e = 1.0, charge_e = -1.0))]
    fn new(cell: &PyCell, species: Vec<PySpecies>, hbar: f64, mass_e: f64, charge_e: f64) -> PyResult<Self> {
        let units = PhysicalUnits { hbar, mass_e, charge_e };
        let species = species.into_iter().map(|s| s.inner).collect();
        Ok(PyProblem {
            inner: Problem::new(cell.inner.clone(), species, units).map_err(to_py_err)?,
        })
    }

    /// Builds a problem from the JSON form of its specification.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let spec: ProblemSpec = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(PyProblem {
            inner: Problem::from_spec(&spec).map_err(to_py_err)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner.spec()).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    #[getter]
    fn cell(&self) -> PyCell {
        PyCell {
            inner: self.inner.cell().clone(),
        }
    }

    /// Seeded initial electron field on the constraint sphere.
    #[pyo3(signature = (seed = 0))]
    fn initial_psi(&self, seed: u64) -> PyResult<Vec<Complex64>> {
        Ok(self.inner.initial_psi(seed).map_err(to_py_err)?.into_values())
    }

    /// `(I1, I2, U)` of an electron field; the field is first projected onto
    /// the constraint sphere.
    fn energy(&self, psi: Vec<Complex64>) -> PyResult<(f64, f64, f64)> {
        let field = ScalarField::new(self.inner.cell(), psi).map_err(to_py_err)?;
        let config = self.inner.configuration(&field).map_err(to_py_err)?;
        let e = energy(&config).map_err(to_py_err)?;
        Ok((e.kinetic, e.coulomb, e.total))
    }

    /// Infrared-condition report per species.
    fn check_infrared<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyAny>>> {
        self.inner
            .species()
            .iter()
            .map(|s| {
                let r = check_condition_infrared(s, self.inner.cell(), self.inner.units()).map_err(to_py_err)?;
                to_python(py, &r)
            })
            .collect()
    }
}

/// Solver settings.
#[pyclass(name = "SolverConfig", module = "spcrystal_py", get_all, set_all, skip_from_py_object)]
#[derive(Clone)]
struct PySolverConfig {
    max_iters: usize,
    grad_tol: f64,
    energy_tol: f64,
    step0: f64,
    backtrack: f64,
    ion_relaxation: bool,
    seed: u64,
    scf_damping: f64,
}

impl From<&PySolverConfig> for SolverConfig {
    fn from(c: &PySolverConfig) -> Self {
        SolverConfig {
            max_iters: c.max_iters,
            grad_tol: c.grad_tol,
            energy_tol: c.energy_tol,
            step0: c.step0,
            backtrack: c.backtrack,
            ion_relaxation: c.ion_relaxation,
            seed: c.seed,
            scf_damping: c.scf_damping,
        }
    }
}

#[pymethods]
impl PySolverConfig {
    #[new]
    #[pyo3(signature = (**kwargs))]
    fn new(kwargs: Option<&Bound<'_, pyo3::types::PyDict>>) -> PyResult<Self> {
        let d = SolverConfig::default();
        let mut c = PySolverConfig {
            max_iters: d.max_iters,
            grad_tol: d.grad_tol,
            energy_tol: d.energy_tol,
            step0: d.step0,
            backtrack: d.backtrack,
            ion_relaxation: d.ion_relaxation,
            seed: d.seed,
            scf_damping: d.scf_damping,
        };
        if let Some(kw) = kwargs {
            for (k, v) in kw.iter() {
                let key: String = k.extract()?;
                match key.as_str() {
                    "max_iters" => c.max_iters = v.extract()?,
                    "grad_tol" => c.grad_tol = v.extract()?,
                    "energy_tol" => c.energy_tol = v.extract()?,
                    "step0" => c.step0 = v.extract()?,
                    "backtrack" => c.backtrack = v.extract()?,
                    "ion_relaxation" => c.ion_relaxation = v.extract()?,
                    "seed" => c.seed = v.extract()?,
                    "scf_damping" => c.scf_damping = v.extract()?,
                    other => return Err(PyValueError::new_err(format!("unknown solver setting {other:?}"))),
                }
            }
        }
        SolverConfig::from(&c).validate().map_err(to_py_err)?;
        Ok(c)
    }
}

/// Solved ground state.
#[pyclass(name = "GroundState", module = "spcrystal_py", frozen)]
struct PyGroundState {
    inner: GroundStateResult,
}

#[pymethods]
impl PyGroundState {
    #[getter]
    fn u0(&self) -> f64 {
        self.inner.u0
    }

    #[getter]
    fn omega0(&self) -> Complex64 {
        self.inner.omega0
    }

    #[getter]
    fn converged(&self) -> bool {
        self.inner.converged
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.inner.iterations
    }

    #[getter]
    fn ions0(&self) -> Vec<[f64; 3]> {
        self.inner.ions0.clone()
    }

    fn psi0(&self) -> Vec<Complex64> {
        self.inner.psi0.values().to_vec()
    }

    fn phi0(&self) -> Vec<f64> {
        self.inner.phi0.values().iter().map(|v| v.re).collect()
    }

    fn residuals<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_python(py, &self.inner.residuals)
    }

    fn diagnostics<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_python(py, &self.inner.diagnostics)
    }

    /// Writes the JSON record and the field snapshots; returns the record.
    fn write<'py>(&self, py: Python<'py>, path: std::path::PathBuf, snapshot_dir: std::path::PathBuf) -> PyResult<Bound<'py, PyAny>> {
        let rec = self.inner.write(&path, &snapshot_dir).map_err(to_py_err)?;
        to_python(py, &rec)
    }
}

/// Minimizes the energy (relaxing ions if requested) and assembles the result.
#[pyfunction]
#[pyo3(signature = (problem, solver = None))]
fn solve(py: Python<'_>, problem: &PyProblem, solver: Option<&PySolverConfig>) -> PyResult<PyGroundState> {
    let s = solver.map(SolverConfig::from).unwrap_or_default();
    let (result, _) = py
        .detach(|| groundstate::solve(&problem.inner, &s))
        .map_err(to_py_err)?;
    Ok(PyGroundState { inner: result })
}

/// Energy of the damped self-consistent-field fixed point.
#[pyfunction]
#[pyo3(signature = (problem, solver = None))]
fn scf_energy(py: Python<'_>, problem: &PyProblem, solver: Option<&PySolverConfig>) -> PyResult<f64> {
    let s = solver.map(SolverConfig::from).unwrap_or_default();
    py.detach(|| {
        let start = problem.inner.initial_configuration(s.seed)?;
        let c = minimizer::scf_oracle(&start, &s)?;
        Ok(energy(&c)?.total)
    })
    .map_err(to_py_err)
}

/// Truncation study over half-lengths; one dict per row.
#[pyfunction]
#[pyo3(signature = (problem, lengths, solver = None))]
fn truncation_study<'py>(
    py: Python<'py>,
    problem: &PyProblem,
    lengths: Vec<f64>,
    solver: Option<&PySolverConfig>,
) -> PyResult<Bound<'py, PyAny>> {
    let s = solver.map(SolverConfig::from).unwrap_or_default();
    let rows = py
        .detach(|| groundstate::truncation_study(&problem.inner, &lengths, &s))
        .map_err(to_py_err)?;
    to_python(py, &rows)
}

#[pymodule]
fn spcrystal_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCell>()?;
    m.add_class::<PySpecies>()?;
    m.add_class::<PyProblem>()?;
    m.add_class::<PySolverConfig>()?;
    m.add_class::<PyGroundState>()?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(scf_energy, m)?)?;
    m.add_function(wrap_pyfunction!(truncation_study, m)?)?;
    Ok(())
}
