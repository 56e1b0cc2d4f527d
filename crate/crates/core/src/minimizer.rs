//! Constrained minimization of `U` on the sphere `||psi||^2 = Z`.
//!
//! [`minimize`] runs preconditioned projected gradient descent with Armijo
//! backtracking; [`scf_oracle`] is an independent damped self-consistent-field
//! iteration used to cross-check it.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::densities::project_to_manifold;
use crate::energy::{apply_hamiltonian, energy, energy_difference, ion_gradients_with, Configuration};
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::spectral::{apply_multiplier, check_neutral, forward, inv_laplacian, inverse, ScalarField};

/// Smallest step tried by the line search before giving up.
pub const MIN_STEP: f64 = 1e-14;
const ARMIJO_C: f64 = 1e-4;
const MAX_STEP: f64 = 1e6;
/// Iterations without progress after which a run is declared stalled.
const STALL_WINDOW: usize = 200;

fn default_max_iters() -> usize {
    100_000
}
fn default_grad_tol() -> f64 {
    1e-8
}
fn default_energy_tol() -> f64 {
    1e-12
}
fn default_step0() -> f64 {
    1.0
}
fn default_backtrack() -> f64 {
    0.5
}
fn default_scf_damping() -> f64 {
    0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    /// Threshold on the projected-gradient norm (and on the largest ion force).
    #[serde(default = "default_grad_tol")]
    pub grad_tol: f64,
    /// Relative energy decrease below which an iteration counts as stalled.
    #[serde(default = "default_energy_tol")]
    pub energy_tol: f64,
    #[serde(default = "default_step0")]
    pub step0: f64,
    #[serde(default = "default_backtrack")]
    pub backtrack: f64,
    #[serde(default)]
    pub ion_relaxation: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_scf_damping")]
    pub scf_damping: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iters: default_max_iters(),
            grad_tol: default_grad_tol(),
            energy_tol: default_energy_tol(),
            step0: default_step0(),
            backtrack: default_backtrack(),
            ion_relaxation: false,
            seed: 0,
            scf_damping: default_scf_damping(),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.max_iters == 0 {
            return bad("max_iters must be >= 1".into());
        }
        if !(self.grad_tol > 0.0) || !(self.energy_tol > 0.0) {
            return bad("grad_tol and energy_tol must be > 0".into());
        }
        if !(self.step0 > 0.0 && self.step0.is_finite()) {
            return bad(format!("step0 must be finite and > 0, got {}", self.step0));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return bad(format!("backtrack must lie in (0, 1), got {}", self.backtrack));
        }
        if !(self.scf_damping > 0.0 && self.scf_damping <= 1.0) {
            return bad(format!("scf_damping must lie in (0, 1], got {}", self.scf_damping));
        }
        Ok(())
    }
}

/// One accepted iteration. Serializes to the trace CSV columns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    #[serde(rename = "U")]
    pub u: f64,
    #[serde(rename = "I1")]
    pub i1: f64,
    #[serde(rename = "I2")]
    pub i2: f64,
    pub gnorm: f64,
    pub fmax: f64,
    pub step: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    MaxIters,
    Stalled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub records: Vec<IterationRecord>,
    pub stop: StopReason,
}

impl IterationTrace {
    pub fn converged(&self) -> bool {
        self.stop == StopReason::Converged
    }

    pub fn last(&self) -> Option<&IterationRecord> {
        self.records.last()
    }

    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        crate::persist::write_csv(path, &self.records)
    }
}

/// Current iterate with everything derived from it.
struct State {
    config: Configuration,
    phi: ScalarField,
    h_psi: ScalarField,
    lambda: f64,
}

impl State {
    fn new(config: Configuration) -> Result<Self> {
        let phi = config.potential()?;
        let h_psi = apply_hamiltonian(config.psi(), &phi, config.units())?;
        let lambda = h_psi.inner(config.psi())?.re / config.psi().norm_sq();
        Ok(State {
            config,
            phi,
            h_psi,
            lambda,
        })
    }

    /// `H psi - lambda psi`, half the projected L2 gradient of `U`.
    fn projected_gradient(&self) -> Result<ScalarField> {
        let psi = self.config.psi();
        let z = psi.norm_sq();
        let g = self.h_psi.add_scaled(psi, Complex64::new(-self.lambda, 0.0))?;
        let c = g.inner(psi)?.re / z;
        g.add_scaled(psi, Complex64::new(-c, 0.0))
    }

    fn forces(&self, relax: bool) -> Result<Vec<Vec3>> {
        if !relax {
            return Ok(Vec::new());
        }
        Ok(ion_gradients_with(&self.config, &self.phi)?
            .into_iter()
            .map(|g| [-g[0], -g[1], -g[2]])
            .collect())
    }
}

fn max_norm(v: &[Vec3]) -> f64 {
    v.iter().map(crate::geometry::norm).fold(0.0, f64::max)
}

/// Preconditioner for the electronic step: the inverse of a kinetic plus
/// linearized Coulomb symbol, shifted by a kinetic energy scale.
fn precondition(g: &ScalarField, config: &Configuration, kinetic: f64) -> ScalarField {
    let cell = config.cell();
    let kp = config.units().kinetic_prefactor();
    let z = config.charge().z;
    let e2n0 = config.units().e_abs().powi(2) * z / cell.volume();
    let k2_min = cell
        .modes()
        .iter()
        .map(|m| m.k2_even)
        .filter(|k| *k > 0.0)
        .fold(f64::INFINITY, f64::min);
    let shift = (kinetic / z).max(kp * k2_min);
    let out = inverse(&apply_multiplier(&forward(g), |m| {
        let coul = if m.k2_even > 0.0 { 2.0 * e2n0 / m.k2_even } else { 0.0 };
        1.0 / (kp * m.k2_even + coul + shift)
    }));
    if g.is_real(0.0) {
        out.real_part()
    } else {
        out
    }
}

/// Multiplies `psi` by the phase that makes `int psi` real and nonnegative.
pub fn fix_gauge(psi: &ScalarField) -> ScalarField {
    let s = psi.integral();
    if s.norm() == 0.0 {
        return psi.clone();
    }
    let phase = s.conj() / s.norm();
    let out = psi.scaled(phase);
    if phase.im == 0.0 {
        out
    } else if out.is_real(1e-14 * out.max_abs()) {
        out.real_part()
    } else {
        out
    }
}

fn wrap_positions(config: &Configuration, positions: &mut [Vec3]) {
    let d = config.cell().dim();
    for p in positions.iter_mut() {
        for x in p.iter_mut().take(d) {
            *x = x.rem_euclid(1.0);
        }
    }
}

fn record(iter: usize, state: &State, gnorm: f64, fmax: f64, step: f64) -> Result<IterationRecord> {
    let e = energy(&state.config)?;
    Ok(IterationRecord {
        iter,
        u: e.total,
        i1: e.kinetic,
        i2: e.coulomb,
        gnorm,
        fmax,
        step,
    })
}

/// Preconditioned projected gradient descent with Armijo backtracking.
///
/// The electron field is retracted onto the sphere after every step. When
/// `solver.ion_relaxation` is set and the cell is a 3-torus, each iteration
/// also takes a backtracked step of the ions along the forces. Energy
/// comparisons use [`energy_difference`], which stays accurate near the
/// minimum where `U` itself no longer resolves the decrease.
///
/// Returns the final configuration (with the gauge fixed so that `int psi` is
/// real and nonnegative) and the trace; an unconverged run is flagged in the
/// trace rather than returned as an error.
pub fn minimize(initial: &Configuration, solver: &SolverConfig) -> Result<(Configuration, IterationTrace)> {
    solver.validate()?;
    let z = initial.charge().z;
    check_neutral(&initial.rho()?, initial.charge_scale())?;
    let relax = solver.ion_relaxation && initial.cell().dim() == 3;
    let psi0 = project_to_manifold(initial.psi(), z)?;
    let mut state = State::new(initial.with_psi(psi0)?)?;
    let mut records = Vec::new();
    let mut alpha = solver.step0;
    let mut beta = solver.step0;
    let mut best_gnorm = f64::INFINITY;
    let mut since_best = 0usize;
    let mut stop = StopReason::MaxIters;

    for iter in 0..=solver.max_iters {
        let g = state.projected_gradient()?;
        let gnorm = g.norm();
        let forces = state.forces(relax)?;
        let fmax = max_norm(&forces);
        let step_taken = if iter == 0 { 0.0 } else { alpha };
        let rec = record(iter, &state, gnorm, fmax, step_taken)?;
        let u_now = rec.u;
        records.push(rec);

        if gnorm <= solver.grad_tol && (!relax || fmax <= solver.grad_tol) {
            stop = StopReason::Converged;
            break;
        }
        if iter == solver.max_iters {
            break;
        }
        if gnorm < best_gnorm * 0.999 || fmax > solver.grad_tol {
            best_gnorm = best_gnorm.min(gnorm);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= STALL_WINDOW {
                stop = StopReason::Stalled;
                break;
            }
        }

        let mut decrease = 0.0;
        if gnorm > solver.grad_tol {
            let kinetic = crate::energy::kinetic_energy(&state.config);
            let (next, step, du) =
                electron_step(&state, &g, kinetic, alpha.min(MAX_STEP), solver).map_err(|e| at_iter(e, iter))?;
            state = next;
            alpha = step / solver.backtrack;
            decrease += du;
        }
        if relax && fmax > solver.grad_tol {
            // forces at the updated electron field, so the slope matches the state
            let forces = state.forces(relax)?;
            let (next, step, du) =
                ion_step(&state, &forces, beta.min(MAX_STEP), solver).map_err(|e| at_iter(e, iter))?;
            state = next;
            beta = step / solver.backtrack;
            decrease += du;
        }
        if -decrease <= solver.energy_tol * u_now.abs() * f64::EPSILON {
            // Decrease below what the energy difference can resolve.
            since_best += 1;
        }
    }

    let psi = fix_gauge(state.config.psi());
    let config = state.config.with_psi(psi)?;
    Ok((config, IterationTrace { records, stop }))
}

fn at_iter(e: Error, iter: usize) -> Error {
    match e {
        Error::LineSearchStalled { step, .. } => Error::LineSearchStalled { iter, step },
        other => other,
    }
}

/// One Armijo-backtracked electronic step. Returns the new state, the
/// accepted step and the energy change.
fn electron_step(
    state: &State,
    g: &ScalarField,
    kinetic: f64,
    alpha0: f64,
    solver: &SolverConfig,
) -> Result<(State, f64, f64)> {
    let psi = state.config.psi();
    let z = psi.norm_sq();
    let pg = precondition(g, &state.config, kinetic);
    let c = pg.inner(psi)?.re / z;
    let dir = pg.add_scaled(psi, Complex64::new(-c, 0.0))?.scaled(Complex64::new(-1.0, 0.0));
    // derivative of U along dir: <2 H psi, dir> with dir tangent
    let slope = 2.0 * g.inner(&dir)?.re;
    if !(slope < 0.0) {
        return Err(Error::LineSearchStalled { iter: 0, step: 0.0 });
    }
    let mut alpha = alpha0;
    loop {
        let trial = project_to_manifold(&psi.add_scaled(&dir, Complex64::new(alpha, 0.0))?, z)?;
        let cand = state.config.with_psi(trial)?;
        let du = energy_difference(&state.config, &cand)?;
        if du <= ARMIJO_C * alpha * slope {
            return Ok((State::new(cand)?, alpha, du));
        }
        alpha *= solver.backtrack;
        if alpha < MIN_STEP {
            return Err(Error::LineSearchStalled { iter: 0, step: alpha });
        }
    }
}

fn ion_step(state: &State, forces: &[Vec3], beta0: f64, solver: &SolverConfig) -> Result<(State, f64, f64)> {
    let cell = state.config.cell().clone();
    let slope = -forces.iter().map(|f| crate::geometry::dot(f, f)).sum::<f64>();
    let start = state.config.positions();
    let mut beta = beta0;
    loop {
        let mut pos: Vec<Vec3> = start
            .iter()
            .zip(forces)
            .map(|(p, f)| {
                let df = cell.displacement_to_fractional(&[beta * f[0], beta * f[1], beta * f[2]]);
                [p[0] + df[0], p[1] + df[1], p[2] + df[2]]
            })
            .collect();
        wrap_positions(&state.config, &mut pos);
        let cand = state.config.with_positions(&pos)?;
        let du = energy_difference(&state.config, &cand)?;
        if du <= ARMIJO_C * beta * slope {
            return Ok((State::new(cand)?, beta, du));
        }
        beta *= solver.backtrack;
        if beta < MIN_STEP {
            return Err(Error::LineSearchStalled { iter: 0, step: beta });
        }
    }
}

/// Relaxes the ions together with the electron field until the largest force
/// is at most `grad_tol`. For `d < 3` the single ion position is a gauge and
/// this reduces to [`minimize`].
pub fn relax_ions(config: &Configuration, solver: &SolverConfig) -> Result<(Configuration, IterationTrace)> {
    let mut s = *solver;
    s.ion_relaxation = config.cell().dim() == 3;
    minimize(config, &s)
}

/// Lowest eigenpair of `-(hbar^2/2m) Laplacian + e phi` by shifted inverse
/// iteration, each solve done with preconditioned conjugate gradients.
/// Returns the eigenvector normalized to `||psi||^2 = z` and its eigenvalue.
pub fn lowest_eigenpair(
    phi: &ScalarField,
    start: &ScalarField,
    z: f64,
    units: &crate::densities::PhysicalUnits,
    tol: f64,
    max_iters: usize,
) -> Result<(ScalarField, f64)> {
    let e = units.charge_e;
    let v_min = phi.values().iter().map(|p| e * p.re).fold(f64::INFINITY, f64::min);
    let v_mean = phi.values().iter().map(|p| e * p.re).sum::<f64>() / phi.len() as f64;
    let safe_shift = v_min - 1.0;
    let mut psi = project_to_manifold(start, z)?;
    let mut last_res = f64::INFINITY;
    let mut stuck = 0;
    for _ in 0..max_iters {
        let h = apply_hamiltonian(&psi, phi, units)?;
        let lambda = h.inner(&psi)?.re / z;
        let r = h.add_scaled(&psi, Complex64::new(-lambda, 0.0))?;
        let res = r.norm() / z.sqrt();
        if res <= tol {
            return Ok((psi, lambda));
        }
        if res > 0.9 * last_res {
            stuck += 1;
            if stuck > 50 {
                return Err(Error::NotConverged(format!(
                    "inverse iteration stagnated at eigen-residual {res:e}"
                )));
            }
        } else {
            stuck = 0;
        }
        last_res = last_res.min(res);
        // Close to convergence the eigenvalue nearest the Rayleigh quotient is
        // the lowest one, and a shift just below it converges superlinearly.
        let aggressive = lambda - 10.0 * res;
        let shifts: &[f64] = if res < 1e-2 * (lambda - safe_shift).abs().max(1.0) && aggressive > safe_shift {
            &[aggressive, safe_shift]
        } else {
            &[safe_shift]
        };
        let mut solved = None;
        for &s in shifts {
            let c = (v_mean - s).max(1e-3);
            if let Some(x) = pcg_shifted(&psi, phi, units, s, c, 1e-13, 2000)? {
                solved = Some(x);
                break;
            }
        }
        let x = solved.ok_or_else(|| Error::NotConverged("shifted solve broke down".into()))?;
        psi = project_to_manifold(&x, z)?;
    }
    Err(Error::NotConverged(format!(
        "inverse iteration did not reach eigen-residual {tol:e} in {max_iters} steps"
    )))
}

/// Solves `(H - s) x = b` by preconditioned CG with preconditioner
/// `1/(kp k^2 + c)`. Returns `None` when the operator shows non-positive
/// curvature.
fn pcg_shifted(
    b: &ScalarField,
    phi: &ScalarField,
    units: &crate::densities::PhysicalUnits,
    s: f64,
    c: f64,
    rtol: f64,
    max_iters: usize,
) -> Result<Option<ScalarField>> {
    let kp = units.kinetic_prefactor();
    let apply = |x: &ScalarField| -> Result<ScalarField> {
        apply_hamiltonian(x, phi, units)?.add_scaled(x, Complex64::new(-s, 0.0))
    };
    let real = b.is_real(0.0);
    let prec = |r: &ScalarField| {
        let out = inverse(&apply_multiplier(&forward(r), |m| 1.0 / (kp * m.k2_even + c)));
        if real {
            out.real_part()
        } else {
            out
        }
    };
    let b_norm = b.norm();
    let mut x = ScalarField::zeros(b.cell());
    let mut r = b.clone();
    let mut zv = prec(&r);
    let mut p = zv.clone();
    let mut rz = r.inner(&zv)?.re;
    for _ in 0..max_iters {
        if r.norm() <= rtol * b_norm {
            return Ok(Some(x));
        }
        let ap = apply(&p)?;
        let pap = p.inner(&ap)?.re;
        if !(pap > 0.0) {
            return Ok(None);
        }
        let a = rz / pap;
        x = x.add_scaled(&p, Complex64::new(a, 0.0))?;
        r = r.add_scaled(&ap, Complex64::new(-a, 0.0))?;
        zv = prec(&r);
        let rz_new = r.inner(&zv)?.re;
        p = zv.add_scaled(&p, Complex64::new(rz_new / rz, 0.0))?;
        rz = rz_new;
    }
    // An inexact solve still improves the eigenvector estimate.
    Ok(Some(x))
}

/// Damped self-consistent-field iteration: `phi <- (1 - b) phi + b (-Laplacian)^{-1} rho(psi)`
/// with `psi` the lowest eigenfunction of `-(hbar^2/2m) Laplacian + e phi`,
/// normalized to `||psi||^2 = Z`. Stops when `||psi_{n+1} - psi_n|| <= grad_tol`.
pub fn scf_oracle(initial: &Configuration, solver: &SolverConfig) -> Result<Configuration> {
    solver.validate()?;
    let z = initial.charge().z;
    let scale = initial.charge_scale();
    let units = *initial.units();
    check_neutral(&initial.rho()?, scale)?;
    let damping = solver.scf_damping;
    let mut phi = initial.potential()?;
    let mut psi = fix_gauge(&project_to_manifold(initial.psi(), z)?);
    let eig_tol = (solver.grad_tol * 1e-2).max(1e-13);
    let mut best = f64::INFINITY;
    let mut since_best = 0;
    for _ in 0..solver.max_iters {
        let (next, _) = lowest_eigenpair(&phi, &psi, z, &units, eig_tol, 10_000)?;
        let next = fix_gauge(&next);
        let change = next.sub(&psi)?.norm();
        psi = next;
        if change <= solver.grad_tol {
            return initial.with_psi(psi);
        }
        if change < 0.99 * best {
            best = change;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > STALL_WINDOW / 4 {
                return Err(Error::NotConverged(format!(
                    "SCF oscillates: ||psi_(n+1) - psi_n|| stuck near {best:e} with damping {damping}"
                )));
            }
        }
        let rho = crate::densities::assemble_rho(&psi, initial.rho_plus(), &units)?;
        let phi_out = inv_laplacian(&rho, scale)?;
        phi = phi.zip_map(&phi_out, |a, b| a * (1.0 - damping) + b * damping)?;
    }
    Err(Error::NotConverged(format!(
        "SCF did not converge in {} iterations",
        solver.max_iters
    )))
}
