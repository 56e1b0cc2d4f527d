//! The per-cell energy `U = I1 + I2`, its derivatives, and the stereographic
//! chart on the constraint sphere `||psi||^2 = Z`.
//!
//! `I1 = (hbar^2 / 2m) int |grad psi|^2` and `I2 = 1/2 ||Lambda rho||^2` with
//! `rho = rho^+ + e |psi|^2`. The same expression covers `d = 1, 2, 3`; on
//! the torus `I2` coincides with `1/2 int phi rho`, `phi = (-Laplacian)^{-1} rho`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::densities::{assemble_rho, assemble_rho_plus, periodize_spectrum, ChargeState, IonSpecies, PhysicalUnits};
use crate::error::{Error, Result};
use crate::geometry::{Cell, Vec3};
use crate::spectral::{
    check_neutral, forward, inv_laplacian, laplacian, lambda_op, ScalarField, REAL_TOL,
};

/// Relative tolerance on `||psi||^2 = Z` for a configuration.
pub const MANIFOLD_TOL: f64 = 1e-10;
/// Relative tolerance on `<tau, psi0>` for a tangent vector.
pub const TANGENT_TOL: f64 = 1e-8;

/// Electron field plus ion positions: a point of the constraint manifold.
#[derive(Debug, Clone)]
pub struct Configuration {
    psi: ScalarField,
    ions: Vec<IonSpecies>,
    units: PhysicalUnits,
    rho_plus: ScalarField,
    charge: ChargeState,
}

impl Configuration {
    /// Validates the species and the norm constraint and caches `rho^+`.
    pub fn new(psi: ScalarField, ions: Vec<IonSpecies>, units: PhysicalUnits) -> Result<Self> {
        let config = Self::new_unchecked(psi, ions, units)?;
        let z = config.charge.z;
        let n2 = config.psi.norm_sq();
        if (n2 - z).abs() > MANIFOLD_TOL * z {
            return Err(Error::InvalidConfig(format!(
                "||psi||^2 = {n2} is off the manifold ||psi||^2 = Z = {z}"
            )));
        }
        Ok(config)
    }

    /// Like [`Configuration::new`] but without the norm check. Used for
    /// finite-difference probes that step slightly off the sphere; the
    /// Coulomb term still rejects non-neutral densities.
    pub fn new_unchecked(psi: ScalarField, ions: Vec<IonSpecies>, units: PhysicalUnits) -> Result<Self> {
        units.validate()?;
        let cell = psi.cell().clone();
        let charge = ChargeState::from_species(&ions);
        if ions.is_empty() || !(charge.z > 0.0) {
            return Err(Error::InvalidConfig(
                "total ion charge Z must be > 0 for a neutral cell".into(),
            ));
        }
        if cell.dim() < 3 && ions.len() != 1 {
            return Err(Error::InvalidConfig(format!(
                "d = {} cells carry exactly one ion per cell, got {}",
                cell.dim(),
                ions.len()
            )));
        }
        let rho_plus = assemble_rho_plus(&ions, &cell, &units)?;
        Ok(Configuration {
            psi,
            ions,
            units,
            rho_plus,
            charge,
        })
    }

    pub fn cell(&self) -> &Cell {
        self.psi.cell()
    }

    pub fn psi(&self) -> &ScalarField {
        &self.psi
    }

    pub fn ions(&self) -> &[IonSpecies] {
        &self.ions
    }

    pub fn units(&self) -> &PhysicalUnits {
        &self.units
    }

    pub fn rho_plus(&self) -> &ScalarField {
        &self.rho_plus
    }

    pub fn charge(&self) -> ChargeState {
        self.charge
    }

    /// `Z |e|`, the reference charge for neutrality checks.
    pub fn charge_scale(&self) -> f64 {
        self.charge.z * self.units.e_abs()
    }

    /// Same ions, new electron field (norm checked).
    pub fn with_psi(&self, psi: ScalarField) -> Result<Self> {
        psi.same_cell(&self.psi)?;
        let mut next = self.clone();
        next.psi = psi;
        let n2 = next.psi.norm_sq();
        if (n2 - self.charge.z).abs() > MANIFOLD_TOL * self.charge.z {
            return Err(Error::InvalidConfig(format!("||psi||^2 = {n2} is off the manifold")));
        }
        Ok(next)
    }

    /// Same ions, new electron field, norm not checked.
    pub fn with_psi_unchecked(&self, psi: ScalarField) -> Result<Self> {
        psi.same_cell(&self.psi)?;
        let mut next = self.clone();
        next.psi = psi;
        Ok(next)
    }

    /// Same electron field, ions moved to new fractional positions.
    pub fn with_positions(&self, positions: &[Vec3]) -> Result<Self> {
        if positions.len() != self.ions.len() {
            return Err(Error::InvalidConfig("one position per ion expected".into()));
        }
        let mut ions = self.ions.clone();
        for (ion, p) in ions.iter_mut().zip(positions) {
            ion.position = *p;
        }
        let rho_plus = assemble_rho_plus(&ions, self.cell(), &self.units)?;
        Ok(Configuration {
            psi: self.psi.clone(),
            ions,
            units: self.units,
            rho_plus,
            charge: self.charge,
        })
    }

    pub fn positions(&self) -> Vec<Vec3> {
        self.ions.iter().map(|i| i.position).collect()
    }

    /// Total charge density `rho = rho^+ + e|psi|^2`.
    pub fn rho(&self) -> Result<ScalarField> {
        assemble_rho(&self.psi, &self.rho_plus, &self.units)
    }

    /// Zero-mean potential `phi = (-Laplacian)^{-1} rho`.
    pub fn potential(&self) -> Result<ScalarField> {
        inv_laplacian(&self.rho()?, self.charge_scale())
    }
}

/// Kinetic and Coulomb parts of the energy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub kinetic: f64,
    pub coulomb: f64,
    pub total: f64,
}

/// `I1 = (hbar^2/2m) sum_k k^2 |psi_k|^2`, weighted as an L2 integral.
pub fn kinetic_energy(config: &Configuration) -> f64 {
    config.units.kinetic_prefactor() * crate::spectral::dirichlet_form(&config.psi)
}

/// `I2 = 1/2 ||Lambda rho||^2`.
pub fn coulomb_energy(config: &Configuration) -> Result<f64> {
    coulomb_of(&config.rho()?, config.charge_scale())
}

fn coulomb_of(rho: &ScalarField, charge_scale: f64) -> Result<f64> {
    check_neutral(rho, charge_scale)?;
    let spec = forward(rho);
    let cell = rho.cell();
    let sum: f64 = cell
        .modes()
        .iter()
        .zip(spec.coeffs())
        .filter(|(m, _)| m.k2_even > 0.0)
        .map(|(m, c)| c.norm_sqr() / m.k2_even)
        .sum();
    Ok(0.5 * sum * cell.dv())
}

/// The energy `U(psi, x) = I1 + I2` of a configuration.
pub fn energy(config: &Configuration) -> Result<EnergyBreakdown> {
    let kinetic = kinetic_energy(config);
    let coulomb = coulomb_energy(config)?;
    Ok(EnergyBreakdown {
        kinetic,
        coulomb,
        total: kinetic + coulomb,
    })
}

/// `U(to) - U(from)` evaluated from difference fields, so that it keeps its
/// relative accuracy when the two configurations are close.
pub fn energy_difference(from: &Configuration, to: &Configuration) -> Result<f64> {
    from.psi.same_cell(&to.psi)?;
    if from.units != to.units {
        return Err(Error::InvalidConfig("energy difference across different units".into()));
    }
    let cell = from.cell();
    let units = &from.units;
    // |a|^2 - |b|^2 = Re((a - b) conj(a + b))
    let delta = to.psi.sub(&from.psi)?;
    let sum = to.psi.zip_map(&from.psi, |a, b| a + b)?;
    let d_spec = forward(&delta);
    let s_spec = forward(&sum);
    let kinetic: f64 = cell
        .modes()
        .iter()
        .zip(d_spec.coeffs())
        .zip(s_spec.coeffs())
        .map(|((m, d), s)| m.k2_even * (d * s.conj()).re)
        .sum::<f64>()
        * units.kinetic_prefactor()
        * cell.dv();

    let e = units.charge_e;
    let d_rho_el = delta.zip_map(&sum, |d, s| Complex64::new(e * (d * s.conj()).re, 0.0))?;
    let d_rho = to.rho_plus.sub(&from.rho_plus)?.zip_map(&d_rho_el, |a, b| a + b)?;
    let s_rho = to.rho()?.zip_map(&from.rho()?, |a, b| a + b)?;
    let dr = forward(&d_rho);
    let sr = forward(&s_rho);
    let coulomb: f64 = cell
        .modes()
        .iter()
        .zip(dr.coeffs())
        .zip(sr.coeffs())
        .filter(|((m, _), _)| m.k2_even > 0.0)
        .map(|((m, d), s)| (d * s.conj()).re / m.k2_even)
        .sum::<f64>()
        * 0.5
        * cell.dv();
    Ok(kinetic + coulomb)
}

/// `1/2 int phi rho`, the potential route to the Coulomb term.
pub fn coulomb_via_potential(config: &Configuration) -> Result<f64> {
    let rho = config.rho()?;
    let phi = inv_laplacian(&rho, config.charge_scale())?;
    Ok(0.5 * phi.inner(&rho)?.re)
}

/// `1/2 int |grad phi|^2`, the field route to the Coulomb term. Agrees with
/// the other routes when `rho` carries nothing on Nyquist rows.
pub fn coulomb_via_field(rho: &ScalarField, charge_scale: f64) -> Result<f64> {
    let phi = inv_laplacian(rho, charge_scale)?;
    Ok(0.5 * crate::spectral::grad(&phi).iter().map(|g| g.norm_sq()).sum::<f64>())
}

/// `1/2 ||Lambda rho||^2` of an arbitrary density.
pub fn coulomb_via_lambda(rho: &ScalarField, charge_scale: f64) -> Result<f64> {
    Ok(0.5 * lambda_op(rho, charge_scale)?.norm_sq())
}

/// `H psi = -(hbar^2/2m) Laplacian psi + e phi psi` for a given potential.
pub fn apply_hamiltonian(psi: &ScalarField, phi: &ScalarField, units: &PhysicalUnits) -> Result<ScalarField> {
    let kin = laplacian(psi).scaled(Complex64::new(-units.kinetic_prefactor(), 0.0));
    let e = units.charge_e;
    kin.zip_map(&psi.zip_map(phi, |p, f| p * (e * f.re))?, |a, b| a + b)
}

/// Unconstrained L2 gradient `dU/dPsi = -2 (hbar^2/2m) Laplacian psi + 2 e phi psi`
/// under the real pairing `Re int g conj(delta)`.
pub fn grad_psi(config: &Configuration) -> Result<ScalarField> {
    let phi = config.potential()?;
    Ok(apply_hamiltonian(&config.psi, &phi, &config.units)?.scaled(Complex64::new(2.0, 0.0)))
}

/// `dU/dx_j = -<phi, grad rho_j^per(x - x_j)>` in Cartesian components.
pub fn grad_ions(config: &Configuration) -> Result<Vec<Vec3>> {
    let phi = config.potential()?;
    ion_gradients_with(config, &phi)
}

pub(crate) fn ion_gradients_with(config: &Configuration, phi: &ScalarField) -> Result<Vec<Vec3>> {
    let cell = config.cell();
    let phi_spec = forward(phi);
    config
        .ions
        .iter()
        .map(|ion| {
            let spec = periodize_spectrum(ion, cell, &config.units)?;
            let mut g = [0.0; 3];
            for (c, gc) in g.iter_mut().enumerate() {
                let s: Complex64 = cell
                    .modes()
                    .iter()
                    .zip(phi_spec.coeffs())
                    .zip(spec.coeffs())
                    .map(|((m, p), r)| p.conj() * Complex64::new(0.0, m.k[c]) * r)
                    .sum();
                *gc = s.re * cell.dv();
            }
            Ok(g)
        })
        .collect()
}

/// A vector of the tangent space `{tau : <tau, psi0> = 0}`.
#[derive(Debug, Clone)]
pub struct TangentVector {
    tau: ScalarField,
}

impl TangentVector {
    /// Checks `|<tau, psi0>| <= TANGENT_TOL ||tau|| ||psi0||`.
    pub fn new(tau: ScalarField, psi0: &ScalarField) -> Result<Self> {
        let ip = tau.inner(psi0)?.norm();
        if ip > TANGENT_TOL * tau.norm() * psi0.norm() {
            return Err(Error::NotTangent(ip));
        }
        Ok(TangentVector { tau })
    }

    /// Orthogonal projection of `field` onto the tangent space at `psi0`.
    pub fn project(field: &ScalarField, psi0: &ScalarField) -> Result<Self> {
        let z = psi0.norm_sq();
        if !(z > 0.0) {
            return Err(Error::ZeroField);
        }
        let c = field.inner(psi0)? / z;
        let tau = field.add_scaled(psi0, -c)?;
        // second pass against rounding
        let c2 = tau.inner(psi0)? / z;
        Ok(TangentVector {
            tau: tau.add_scaled(psi0, -c2)?,
        })
    }

    pub fn field(&self) -> &ScalarField {
        &self.tau
    }

    pub fn into_field(self) -> ScalarField {
        self.tau
    }

    /// `||tau||_{H1}` with the norm `||tau||^2 + ||grad tau||^2`.
    pub fn h1_norm(&self) -> f64 {
        (self.tau.norm_sq() + crate::spectral::dirichlet_form(&self.tau)).sqrt()
    }
}

/// Stereographic chart `psi_tau = sqrt(Z) (psi0 + eps tau) / ||psi0 + eps tau||`
/// with `Z = ||psi0||^2`.
pub fn chart_point(psi0: &ScalarField, tau: &TangentVector, eps: f64) -> Result<ScalarField> {
    let z = psi0.norm_sq();
    let w = psi0.add_scaled(&tau.tau, Complex64::new(eps, 0.0))?;
    crate::densities::project_to_manifold(&w, z)
}

/// Gateaux derivative of `U` at `config.psi()` along the tangent `tau`:
/// `int (hbar^2/2m)(grad tau . conj grad psi0 + grad psi0 . conj grad tau)
///  + e Lambda rho0 Lambda(tau conj psi0 + psi0 conj tau)`.
pub fn directional_derivative(config: &Configuration, tau: &TangentVector) -> Result<f64> {
    let psi0 = &config.psi;
    let ip = tau.tau.inner(psi0)?.norm();
    if ip > TANGENT_TOL * tau.tau.norm() * psi0.norm() {
        return Err(Error::NotTangent(ip));
    }
    let cell = config.cell();
    let t_spec = forward(&tau.tau);
    let p_spec = forward(psi0);
    let kin: f64 = cell
        .modes()
        .iter()
        .zip(t_spec.coeffs())
        .zip(p_spec.coeffs())
        .map(|((m, t), p)| m.k2_even * (t * p.conj()).re)
        .sum::<f64>()
        * 2.0
        * cell.dv()
        * config.units.kinetic_prefactor();

    // tau conj(psi0) + psi0 conj(tau) = 2 Re(tau conj psi0), zero mean by orthogonality
    let cross = tau.tau.zip_map(psi0, |t, p| Complex64::new(2.0 * (t * p.conj()).re, 0.0))?;
    let scale = config.charge_scale();
    let l_rho = lambda_op(&config.rho()?, scale)?;
    let l_cross = lambda_op(&cross, scale)?;
    let coul = config.units.charge_e * l_rho.inner(&l_cross)?.re;
    Ok(kin + coul)
}

/// Norm of the second-order remainder of the chart expansion of `Lambda rho`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RemainderReport {
    /// `||R(eps)||_{L2}`.
    pub norm: f64,
    /// `eps^2 T_hat(0,0) - Z tan^2(alpha)` with `T = |tau|^2`.
    pub dc_identity: f64,
    /// Mean of the bracket before Lambda is applied, times the volume.
    pub bracket_charge: f64,
    pub alpha: f64,
}

/// Relative tolerance of the DC cancellation checked before Lambda.
pub const DC_CANCEL_TOL: f64 = 1e-12;

/// `R(eps) = Lambda[eps^2 |tau|^2 cos^2(alpha) - |psi0|^2 sin^2(alpha)]`,
/// `alpha = arctan(eps ||tau|| / ||psi0||)`.
pub fn remainder_norm(psi0: &ScalarField, tau: &TangentVector, eps: f64) -> Result<RemainderReport> {
    let ip = tau.tau.inner(psi0)?.norm();
    if ip > TANGENT_TOL * tau.tau.norm() * psi0.norm() {
        return Err(Error::NotTangent(ip));
    }
    let z = psi0.norm_sq();
    let t_norm_sq = tau.tau.norm_sq();
    let alpha = (eps * t_norm_sq.sqrt() / z.sqrt()).atan();
    let (sin, cos) = alpha.sin_cos();
    let t_hat_00 = tau.tau.map(|t| Complex64::new(t.norm_sqr(), 0.0)).integral().re;
    let dc_identity = eps * eps * t_hat_00 - z * alpha.tan().powi(2);
    if eps == 0.0 {
        return Ok(RemainderReport {
            norm: 0.0,
            dc_identity,
            bracket_charge: 0.0,
            alpha,
        });
    }
    let (c2, s2) = (cos * cos, sin * sin);
    let bracket = tau
        .tau
        .zip_map(psi0, |t, p| Complex64::new(eps * eps * t.norm_sqr() * c2 - p.norm_sqr() * s2, 0.0))?;
    let bracket_charge = bracket.integral().re;
    let scale = z * s2;
    if dc_identity.abs() > DC_CANCEL_TOL * eps * eps * t_hat_00
        || bracket_charge.abs() > DC_CANCEL_TOL * scale.max(f64::MIN_POSITIVE)
    {
        return Err(Error::CheckFailed(format!(
            "DC cancellation violated: identity {dc_identity:e}, bracket charge {bracket_charge:e}"
        )));
    }
    let r = lambda_op(&bracket, scale)?;
    debug_assert!(r.is_real(REAL_TOL));
    Ok(RemainderReport {
        norm: r.norm(),
        dc_identity,
        bracket_charge,
        alpha,
    })
}

/// Rayleigh-quotient eigenvalue `<H psi, psi> / ||psi||^2` for a fixed potential.
pub fn rayleigh_quotient(psi: &ScalarField, phi: &ScalarField, units: &PhysicalUnits) -> Result<Complex64> {
    let h = apply_hamiltonian(psi, phi, units)?;
    Ok(h.inner(psi)? / psi.norm_sq())
}

/// One row of a chart finite-difference check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradcheckRow {
    pub eps: f64,
    /// `(U(psi_tau(eps)) - U(psi0)) / eps` along the chart.
    pub fd: f64,
    /// `D_tau U`.
    pub analytic: f64,
    pub diff: f64,
    /// `||R(eps)||`.
    pub remainder: f64,
}

/// Compares chart finite differences with [`directional_derivative`] and
/// evaluates the chart remainder at each `eps`.
pub fn gradcheck_table(config: &Configuration, tau: &TangentVector, eps: &[f64]) -> Result<Vec<GradcheckRow>> {
    let analytic = directional_derivative(config, tau)?;
    eps.iter()
        .map(|&e| {
            if !(e > 0.0 && e.is_finite()) {
                return Err(Error::InvalidConfig(format!("eps must be finite and > 0, got {e}")));
            }
            let moved = config.with_psi(chart_point(config.psi(), tau, e)?)?;
            let fd = energy_difference(config, &moved)? / e;
            Ok(GradcheckRow {
                eps: e,
                fd,
                analytic,
                diff: (fd - analytic).abs(),
                remainder: remainder_norm(config.psi(), tau, e)?.norm,
            })
        })
        .collect()
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::densities::IonSpecies;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn jellium(n: usize) -> Configuration {
        let cell = Cell::unit_torus(n).unwrap();
        let psi = ScalarField::constant(&cell, Complex64::new(1.0, 0.0));
        Configuration::new(psi, vec![IonSpecies::jellium(1.0)], PhysicalUnits::default()).unwrap()
    }

    fn gaussian_config(seed: u64) -> Configuration {
        let cell = Cell::unit_torus(8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw = ScalarField::random_band_limited(&cell, &mut rng, false);
        let psi = crate::densities::project_to_manifold(&raw, 1.0).unwrap();
        Configuration::new(
            psi,
            vec![IonSpecies::gaussian(1.0, 0.3, [0.2, 0.5, 0.6])],
            PhysicalUnits::default(),
        )
        .unwrap()
    }

    #[test]
    fn jellium_has_zero_energy_and_gradient() {
        let c = jellium(8);
        let e = energy(&c).unwrap();
        assert!(e.total.abs() < 1e-28, "{e:?}");
        assert!(grad_psi(&c).unwrap().max_abs() < 1e-13);
        assert!(grad_ions(&c).unwrap()[0].iter().all(|g| g.abs() < 1e-14));
    }

    #[test]
    fn plane_wave_kinetic_energy() {
        let cell = Cell::unit_torus(8).unwrap();
        let psi = ScalarField::from_fn(&cell, |x| Complex64::from_polar(1.0, -2.0 * PI * x[0]));
        let c = Configuration::new(psi, vec![IonSpecies::jellium(1.0)], PhysicalUnits::default()).unwrap();
        let e = energy(&c).unwrap();
        assert!(e.coulomb.abs() < 1e-26);
        assert_relative_eq!(e.kinetic, 0.5 * 4.0 * PI * PI, max_relative = 1e-13);
    }

    #[test]
    fn coulomb_two_routes_agree() {
        for seed in 0..5 {
            let c = gaussian_config(seed);
            let a = coulomb_energy(&c).unwrap();
            let b = coulomb_via_potential(&c).unwrap();
            assert_relative_eq!(a, b, max_relative = 1e-10);
        }
    }

    #[test]
    fn non_neutral_rejected() {
        let c = gaussian_config(1);
        let doubled = c.psi().scaled(Complex64::new(2.0, 0.0));
        let c2 = c.with_psi_unchecked(doubled).unwrap();
        assert!(matches!(energy(&c2), Err(Error::NonNeutral { .. })));
    }

    #[test]
    fn zero_charge_rejected() {
        let cell = Cell::unit_torus(4).unwrap();
        let psi = ScalarField::constant(&cell, Complex64::new(1.0, 0.0));
        assert!(Configuration::new(psi.clone(), vec![], PhysicalUnits::default()).is_err());
    }

    #[test]
    fn frozen_potential_linearity() {
        let c = gaussian_config(2);
        let phi = c.potential().unwrap();
        let h1 = apply_hamiltonian(c.psi(), &phi, c.units()).unwrap();
        let h2 = apply_hamiltonian(&c.psi().scaled(Complex64::new(2.0, 0.0)), &phi, c.units()).unwrap();
        let diff = h2.add_scaled(&h1, Complex64::new(-2.0, 0.0)).unwrap();
        assert!(diff.max_abs() <= 1e-13 * h1.max_abs());
    }

    #[test]
    fn chart_basics() {
        let c = gaussian_config(3);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let raw = ScalarField::random_band_limited(c.cell(), &mut rng, false);
        let tau = TangentVector::project(&raw, c.psi()).unwrap();
        let p0 = chart_point(c.psi(), &tau, 0.0).unwrap();
        assert!(p0.sub(c.psi()).unwrap().max_abs() < 1e-14);
        for eps in [0.3, -1.7, 1e-3] {
            let p = chart_point(c.psi(), &tau, eps).unwrap();
            assert_relative_eq!(p.norm_sq(), 1.0, max_relative = 1e-14);
        }
        assert!(matches!(
            TangentVector::new(c.psi().clone(), c.psi()),
            Err(Error::NotTangent(_))
        ));
    }

    #[test]
    fn directional_derivative_matches_gradient_pairing() {
        let c = gaussian_config(4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let tau = TangentVector::project(&ScalarField::random_band_limited(c.cell(), &mut rng, false), c.psi()).unwrap();
        let d = directional_derivative(&c, &tau).unwrap();
        let g = grad_psi(&c).unwrap();
        let pairing = g.inner(tau.field()).unwrap().re;
        assert_relative_eq!(d, pairing, max_relative = 1e-10);
    }

    #[test]
    fn jellium_directional_derivative_vanishes() {
        let c = jellium(8);
        let tau = ScalarField::from_fn(c.cell(), |x| Complex64::from_polar(0.5, -2.0 * PI * (x[1] + x[2])));
        let tau = TangentVector::new(tau, c.psi()).unwrap();
        assert!(directional_derivative(&c, &tau).unwrap().abs() < 1e-12);
    }

    #[test]
    fn remainder_zero_at_origin() {
        let c = gaussian_config(6);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let tau = TangentVector::project(&ScalarField::random_band_limited(c.cell(), &mut rng, false), c.psi()).unwrap();
        let r = remainder_norm(c.psi(), &tau, 0.0).unwrap();
        assert_eq!(r.norm, 0.0);
        let r = remainder_norm(c.psi(), &tau, 0.1).unwrap();
        assert!(r.dc_identity.abs() <= 1e-12 * 0.01 * tau.field().norm_sq());
    }
}
