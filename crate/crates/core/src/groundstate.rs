//! The solved state: frequency, residuals of the stationary system and
//! qualitative diagnostics, plus the truncation study for `d < 3`.

use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::densities::{check_condition_infrared, PhysicalUnits};
use crate::energy::{apply_hamiltonian, energy, ion_gradients_with, Configuration, EnergyBreakdown};
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::minimizer::{minimize, relax_ions, IterationTrace, SolverConfig};
use crate::problem::Problem;
use crate::spectral::{check_neutral, forward, laplacian, snapshot, ScalarField, SpectrumField};

/// `omega = <H psi, psi> / (hbar ||psi||^2)` for a given potential.
pub fn omega_for_potential(psi: &ScalarField, phi: &ScalarField, units: &PhysicalUnits) -> Result<Complex64> {
    let h = apply_hamiltonian(psi, phi, units)?;
    Ok(h.inner(psi)? / (units.hbar * psi.norm_sq()))
}

/// Frequency of the state from the Rayleigh quotient of its own Hamiltonian.
pub fn extract_omega(config: &Configuration) -> Result<Complex64> {
    check_neutral(&config.rho()?, config.charge_scale())?;
    omega_for_potential(config.psi(), &config.potential()?, config.units())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    /// `||H psi - hbar omega psi|| / ||psi||`.
    pub schrodinger: f64,
    /// `||-Laplacian phi - rho|| / ||rho||`, 0 when `rho = 0`.
    pub poisson: f64,
    /// Largest ion force magnitude.
    pub force: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralDecay {
    /// Share of `||psi_hat||^2` in the upper half of the frequency box.
    pub psi_tail: f64,
    /// Share of `||phi_hat||^2` in the upper half of the frequency box.
    pub phi_tail: f64,
}

/// Fit of `max |phi - phi(0)|` against the distance from the origin along
/// the truncated directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthDiagnostic {
    /// `(r, max |phi - phi(0)|)` pairs used in the fit.
    pub samples: Vec<(f64, f64)>,
    /// `None` when `phi` vanishes ("flat").
    pub exponent: Option<f64>,
    pub constant: Option<f64>,
    /// RMS residual of the log-log fit.
    pub fit_residual: Option<f64>,
    /// `"power (r+1)"` for `d = 2`, `"power log(r+2)"` for `d = 1`, or `"flat"`.
    pub model: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub phi_growth: Option<GrowthDiagnostic>,
    pub spectral_decay: SpectralDecay,
    /// `|int rho|`.
    pub neutrality: f64,
}

/// The assembled ground state.
#[derive(Debug, Clone)]
pub struct GroundStateResult {
    pub config: Configuration,
    pub psi0: ScalarField,
    pub phi0: ScalarField,
    pub ions0: Vec<Vec3>,
    pub omega0: Complex64,
    pub u0: f64,
    pub energy: EnergyBreakdown,
    pub residuals: Residuals,
    pub diagnostics: Diagnostics,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OmegaRecord {
    pub re: f64,
    pub im: f64,
}

/// JSON form of [`GroundStateResult`]; fields are stored as snapshot files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultRecord {
    pub psi0: PathBuf,
    pub phi0: PathBuf,
    pub ions0: Vec<Vec3>,
    pub omega0: OmegaRecord,
    #[serde(rename = "U0")]
    pub u0: f64,
    #[serde(rename = "I1")]
    pub i1: f64,
    #[serde(rename = "I2")]
    pub i2: f64,
    pub residuals: Residuals,
    pub diagnostics: Diagnostics,
    pub converged: bool,
    pub iterations: usize,
}

impl GroundStateResult {
    pub fn assemble(config: Configuration, converged: bool, iterations: usize) -> Result<Self> {
        let rho = config.rho()?;
        check_neutral(&rho, config.charge_scale())?;
        let phi0 = config.potential()?;
        let omega0 = omega_for_potential(config.psi(), &phi0, config.units())?;
        let energy = energy(&config)?;
        let neutrality = rho.integral().norm();
        let mut result = GroundStateResult {
            psi0: config.psi().clone(),
            ions0: config.positions(),
            phi0,
            omega0,
            u0: energy.total,
            energy,
            residuals: Residuals {
                schrodinger: 0.0,
                poisson: 0.0,
                force: 0.0,
            },
            diagnostics: Diagnostics {
                phi_growth: None,
                spectral_decay: SpectralDecay {
                    psi_tail: 0.0,
                    phi_tail: 0.0,
                },
                neutrality,
            },
            config,
            converged,
            iterations,
        };
        result.residuals = residuals(&result)?;
        result.diagnostics.spectral_decay = spectral_decay(&result);
        if result.config.cell().dim() < 3 {
            result.diagnostics.phi_growth = Some(growth_diagnostic(&result)?);
        }
        Ok(result)
    }

    /// Writes `psi0.spfld`, `phi0.spfld` into `snapshot_dir` and the JSON
    /// record to `path`. Snapshot paths in the record are as written.
    pub fn write(&self, path: &Path, snapshot_dir: &Path) -> Result<ResultRecord> {
        let psi_path = snapshot_dir.join("psi0.spfld");
        let phi_path = snapshot_dir.join("phi0.spfld");
        snapshot::write(&psi_path, &self.psi0)?;
        snapshot::write(&phi_path, &self.phi0)?;
        let record = ResultRecord {
            psi0: psi_path,
            phi0: phi_path,
            ions0: self.ions0.clone(),
            omega0: OmegaRecord {
                re: self.omega0.re,
                im: self.omega0.im,
            },
            u0: self.u0,
            i1: self.energy.kinetic,
            i2: self.energy.coulomb,
            residuals: self.residuals,
            diagnostics: self.diagnostics.clone(),
            converged: self.converged,
            iterations: self.iterations,
        };
        crate::persist::write_json(path, &record)?;
        Ok(record)
    }
}

/// Residuals of the stationary Schrodinger, Poisson and force equations.
pub fn residuals(result: &GroundStateResult) -> Result<Residuals> {
    let config = &result.config;
    let units = config.units();
    let psi = &result.psi0;
    let h = apply_hamiltonian(psi, &result.phi0, units)?;
    let r = h.add_scaled(psi, -result.omega0 * units.hbar)?;
    let psi_norm = psi.norm();
    let schrodinger = if psi_norm > 0.0 { r.norm() / psi_norm } else { 0.0 };

    // The net charge is reported separately as the neutrality diagnostic.
    let rho = config.rho()?;
    let mean = rho.integral() / config.cell().volume();
    let rho = rho.map(|v| v - mean);
    let lap = laplacian(&result.phi0).scaled(Complex64::new(-1.0, 0.0));
    let rho_norm = rho.norm();
    let poisson = if rho_norm > 0.0 {
        lap.sub(&rho)?.norm() / rho_norm
    } else {
        lap.norm()
    };
    let force = ion_gradients_with(config, &result.phi0)?
        .iter()
        .map(crate::geometry::norm)
        .fold(0.0, f64::max);
    Ok(Residuals {
        schrodinger,
        poisson,
        force,
    })
}

fn tail_fraction(spec: &SpectrumField) -> f64 {
    let cell = spec.cell();
    let grid = cell.grid();
    let mut total = 0.0;
    let mut tail = 0.0;
    for (m, c) in cell.modes().iter().zip(spec.coeffs()) {
        let w = c.norm_sqr();
        total += w;
        let rel = (0..3)
            .map(|a| m.index[a].unsigned_abs() as f64 / (grid[a] as f64 / 2.0))
            .fold(0.0, f64::max);
        if rel > 0.5 {
            tail += w;
        }
    }
    if total > 0.0 {
        tail / total
    } else {
        0.0
    }
}

/// Share of spectral weight in modes with `max_a |m_a| / (n_a/2) > 1/2`.
pub fn spectral_decay(result: &GroundStateResult) -> SpectralDecay {
    SpectralDecay {
        psi_tail: tail_fraction(&forward(&result.psi0)),
        phi_tail: tail_fraction(&forward(&result.phi0)),
    }
}

/// Relative size below which `phi` is treated as identically zero.
const FLAT_TOL: f64 = 1e-12;

/// Growth of `max |phi(x) - phi(0)|` over the sets `|x_perp| = r`, where
/// `x_perp` collects the truncated coordinates, fitted over `r` in `[L/8, L/2]`.
///
/// The potential is referred to its value at the origin, which removes the
/// additive constant of the zero-mean convention. For `d = 2` the model is
/// `C (r + 1)^p`; for `d = 1` it is `C log(r + 2)^p`.
pub fn growth_diagnostic(result: &GroundStateResult) -> Result<GrowthDiagnostic> {
    let cell = result.config.cell();
    let d = cell.dim();
    if d == 3 {
        return Err(Error::WrongDimension {
            expected: "d in {1, 2}",
            found: 3,
        });
    }
    let l = cell.trunc().iter().cloned().fold(f64::INFINITY, f64::min);
    let h = (d..3)
        .map(|a| 2.0 * cell.trunc()[a - d] / cell.grid()[a] as f64)
        .fold(0.0, f64::max);
    let bin = |r: f64| (r / h).round() as usize;

    let grid = cell.grid();
    let f0 = cell.to_fractional(&[0.0; 3]);
    let origin = [0, 1, 2].map(|a| ((f0[a] * grid[a] as f64).round() as i64).rem_euclid(grid[a] as i64) as usize);
    let reference = result.phi0.values()[cell.flat(origin)];

    let mut bins: std::collections::BTreeMap<usize, f64> = std::collections::BTreeMap::new();
    for (i, v) in result.phi0.values().iter().enumerate() {
        let x = cell.point(i);
        let r = (d..3).map(|a| x[a] * x[a]).sum::<f64>().sqrt();
        if r < l / 8.0 - 1e-12 || r > l / 2.0 + 1e-12 {
            continue;
        }
        let e = bins.entry(bin(r)).or_insert(0.0);
        *e = e.max((v - reference).norm());
    }
    let samples: Vec<(f64, f64)> = bins.into_iter().map(|(b, m)| (b as f64 * h, m)).collect();
    let scale = result.phi0.max_abs();
    let charge = result.config.charge_scale();
    if scale <= FLAT_TOL * charge.max(1.0) || samples.iter().any(|(_, m)| *m <= 0.0) || samples.len() < 2 {
        return Ok(GrowthDiagnostic {
            samples,
            exponent: None,
            constant: None,
            fit_residual: None,
            model: "flat".into(),
        });
    }
    let (xs, model): (Vec<f64>, &str) = if d == 2 {
        (samples.iter().map(|(r, _)| (r + 1.0).ln()).collect(), "power (r+1)")
    } else {
        (samples.iter().map(|(r, _)| (r + 2.0).ln().ln()).collect(), "power log(r+2)")
    };
    let ys: Vec<f64> = samples.iter().map(|(_, m)| m.ln()).collect();
    let (slope, intercept, rms) = least_squares(&xs, &ys);
    Ok(GrowthDiagnostic {
        samples,
        exponent: Some(slope),
        constant: Some(intercept.exp()),
        fit_residual: Some(rms),
        model: model.into(),
    })
}

fn least_squares(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let rms = (x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - intercept - slope * a).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    (slope, intercept, rms)
}

/// Minimizes (relaxing ions when requested on a 3-torus) and assembles the result.
pub fn solve(problem: &Problem, solver: &SolverConfig) -> Result<(GroundStateResult, IterationTrace)> {
    let start = problem.initial_configuration(solver.seed)?;
    let (config, trace) = if solver.ion_relaxation {
        relax_ions(&start, solver)?
    } else {
        minimize(&start, solver)?
    };
    let result = GroundStateResult::assemble(config, trace.converged(), trace.records.len())?;
    Ok((result, trace))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    #[serde(rename = "L")]
    pub l: f64,
    #[serde(with = "grid_label")]
    pub grid: [usize; 3],
    #[serde(rename = "U0")]
    pub u0: Option<f64>,
    pub omega_re: Option<f64>,
    pub omega_im: Option<f64>,
    pub exponent: Option<f64>,
    /// `|U0(L_i) - U0(L_{i-1})|`, absent on the first row.
    pub delta_u0: Option<f64>,
    pub converged: bool,
    pub error: Option<String>,
}

/// Writes a grid as `NxMxK` so study rows stay flat in CSV.
mod grid_label {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(g: &[usize; 3], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{}x{}x{}", g[0], g[1], g[2]))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[usize; 3], D::Error> {
        let text = String::deserialize(d)?;
        let parts = text
            .split('x')
            .map(|p| p.parse::<usize>().map_err(D::Error::custom))
            .collect::<Result<Vec<_>, _>>()?;
        parts
            .try_into()
            .map_err(|_| D::Error::custom(format!("grid label {text:?} is not NxMxK")))
    }
}

/// Solves the problem at each truncation half-length in `lengths`, keeping
/// the grid spacing fixed. Refuses inputs failing the infrared condition.
pub fn truncation_study(problem: &Problem, lengths: &[f64], solver: &SolverConfig) -> Result<Vec<StudyRow>> {
    let cell = problem.cell();
    if cell.dim() == 3 {
        return Err(Error::WrongDimension {
            expected: "d in {1, 2}",
            found: 3,
        });
    }
    for s in problem.species() {
        let report = check_condition_infrared(s, cell, problem.units())?;
        if !report.pass {
            return Err(Error::CheckFailed(format!(
                "infrared condition {:?} fails (refinement ratio {:.3}, quotient norm {:e})",
                report.condition, report.refinement_ratio, report.quotient_norm
            )));
        }
    }
    let mut rows: Vec<StudyRow> = lengths
        .par_iter()
        .map(|&l| {
            let attempt = problem.with_half_length(l).and_then(|p| {
                let grid = p.cell().grid();
                solve(&p, solver).map(|(r, _)| (r, grid))
            });
            match attempt {
                Ok((r, grid)) => StudyRow {
                    l,
                    grid,
                    u0: Some(r.u0),
                    omega_re: Some(r.omega0.re),
                    omega_im: Some(r.omega0.im),
                    exponent: r.diagnostics.phi_growth.and_then(|g| g.exponent),
                    delta_u0: None,
                    converged: r.converged,
                    error: None,
                },
                Err(e) => StudyRow {
                    l,
                    grid: [0; 3],
                    u0: None,
                    omega_re: None,
                    omega_im: None,
                    exponent: None,
                    delta_u0: None,
                    converged: false,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    for i in 1..rows.len() {
        if let (Some(a), Some(b)) = (rows[i - 1].u0, rows[i].u0) {
            rows[i].delta_u0 = Some((b - a).abs());
        }
    }
    Ok(rows)
}
