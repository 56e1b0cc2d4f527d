//! Ion species, periodized charge densities and charge bookkeeping.

mod radial;

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

pub use radial::{RadialSamples, RadialTable};

use crate::error::{Error, Result};
use crate::geometry::{Cell, Vec3};
use crate::spectral::{inverse, ScalarField, SpectrumField};

/// Physical constants of the model. Defaults are the dimensionless units
/// `hbar = m = 1`, `e = -1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicalUnits {
    #[serde(default = "one")]
    pub hbar: f64,
    #[serde(default = "one")]
    pub mass_e: f64,
    #[serde(default = "minus_one")]
    pub charge_e: f64,
}

fn one() -> f64 {
    1.0
}

fn minus_one() -> f64 {
    -1.0
}

impl Default for PhysicalUnits {
    fn default() -> Self {
        PhysicalUnits {
            hbar: 1.0,
            mass_e: 1.0,
            charge_e: -1.0,
        }
    }
}

impl PhysicalUnits {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v != 0.0;
        if !(ok(self.hbar) && self.hbar > 0.0) {
            return Err(Error::InvalidConfig("hbar must be finite and > 0".into()));
        }
        if !(ok(self.mass_e) && self.mass_e > 0.0) {
            return Err(Error::InvalidConfig("electron mass must be finite and > 0".into()));
        }
        if !(ok(self.charge_e) && self.charge_e < 0.0) {
            return Err(Error::InvalidConfig("electron charge must be finite and < 0".into()));
        }
        Ok(())
    }

    /// `hbar^2 / (2 m)`.
    pub fn kinetic_prefactor(&self) -> f64 {
        self.hbar * self.hbar / (2.0 * self.mass_e)
    }

    /// `|e|`.
    pub fn e_abs(&self) -> f64 {
        self.charge_e.abs()
    }
}

/// Shape of a single ion charge cloud.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum IonProfile {
    /// Isotropic Gaussian of width `sigma`.
    Gaussian { sigma: f64 },
    /// Radial table, rescaled to carry the species charge.
    Tabulated(RadialTable),
    /// Charge spread uniformly over the cell (jellium background).
    Uniform,
}

impl IonProfile {
    /// Fourier transform of the normalized profile at wavenumber `k`
    /// (1 at `k = 0`).
    pub fn shape(&self, k: f64) -> f64 {
        match self {
            IonProfile::Gaussian { sigma } => (-0.5 * sigma * sigma * k * k).exp(),
            IonProfile::Tabulated(t) => t.shape(k),
            IonProfile::Uniform => {
                if k == 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// One ion species: charge number, profile, mass and position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IonSpecies {
    /// Charge number `Z_j > 0`; the cloud carries `Z_j |e|`.
    pub charge: f64,
    pub profile: IonProfile,
    /// Ion mass. Not used by the static solver.
    #[serde(default = "one")]
    pub mass: f64,
    /// Fractional coordinates in the cell box.
    pub position: Vec3,
}

impl IonSpecies {
    pub fn gaussian(charge: f64, sigma: f64, position: Vec3) -> Self {
        IonSpecies {
            charge,
            profile: IonProfile::Gaussian { sigma },
            mass: 1.0,
            position,
        }
    }

    pub fn jellium(charge: f64) -> Self {
        IonSpecies {
            charge,
            profile: IonProfile::Uniform,
            mass: 1.0,
            position: [0.0; 3],
        }
    }

    pub fn validate(&self, cell: &Cell) -> Result<()> {
        if !(self.charge.is_finite() && self.charge > 0.0) {
            return Err(Error::BadSpecies(format!("charge number {} must be > 0", self.charge)));
        }
        if !(self.mass.is_finite() && self.mass > 0.0) {
            return Err(Error::BadSpecies(format!("mass {} must be > 0", self.mass)));
        }
        if self.position.iter().any(|x| !x.is_finite()) {
            return Err(Error::BadSpecies("non-finite position".into()));
        }
        if let IonProfile::Gaussian { sigma } = self.profile {
            if !(sigma > 0.0 && sigma.is_finite()) {
                return Err(Error::BadSpecies(format!("gaussian sigma {sigma} must be > 0")));
            }
            if sigma > 0.5 * cell.min_period() {
                return Err(Error::BadSpecies(format!(
                    "gaussian sigma {sigma} exceeds half the shortest period"
                )));
            }
            let required = 2.0 * cell.max_spacing();
            if sigma < required {
                return Err(Error::UnderResolved { sigma, required });
            }
        }
        Ok(())
    }
}

/// Total ion charge number per cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChargeState {
    pub z: f64,
}

impl ChargeState {
    pub fn from_species(species: &[IonSpecies]) -> Self {
        ChargeState {
            z: species.iter().map(|s| s.charge).sum(),
        }
    }

    /// Target electron norm `sqrt(Z)`.
    pub fn target_norm(&self) -> f64 {
        self.z.sqrt()
    }
}

/// Spectrum of the periodized density of one species (Poisson summation).
///
/// Nyquist rows are left empty so the sampled density is exactly real.
pub fn periodize_spectrum(species: &IonSpecies, cell: &Cell, units: &PhysicalUnits) -> Result<SpectrumField> {
    species.validate(cell)?;
    let amplitude = (cell.len() as f64).sqrt() * species.charge * units.e_abs() / cell.volume();
    let f = species.position;
    let coeffs = cell
        .modes()
        .iter()
        .map(|m| {
            if m.nyquist {
                return Complex64::new(0.0, 0.0);
            }
            let phase = 2.0 * PI * (m.index[0] as f64 * f[0] + m.index[1] as f64 * f[1] + m.index[2] as f64 * f[2]);
            Complex64::from_polar(amplitude * species.profile.shape(m.k2.sqrt()), phase)
        })
        .collect();
    SpectrumField::new(cell, coeffs)
}

/// The periodized density `sum_n rho_j(x - x(n) - x_j)` sampled on the grid.
pub fn periodize(species: &IonSpecies, cell: &Cell, units: &PhysicalUnits) -> Result<ScalarField> {
    Ok(inverse(&periodize_spectrum(species, cell, units)?).real_part())
}

/// `rho^+ = sum_j rho_j^per(x - x_j)`; an empty list gives the zero field.
pub fn assemble_rho_plus(species: &[IonSpecies], cell: &Cell, units: &PhysicalUnits) -> Result<ScalarField> {
    let mut total = ScalarField::zeros(cell);
    for s in species {
        let part = periodize(s, cell, units)?;
        total = total.add_scaled(&part, Complex64::new(1.0, 0.0))?;
    }
    Ok(total)
}

/// `rho = rho^+ + e |psi|^2`, returned as a real field.
pub fn assemble_rho(psi: &ScalarField, rho_plus: &ScalarField, units: &PhysicalUnits) -> Result<ScalarField> {
    let e = units.charge_e;
    rho_plus.zip_map(psi, |rp, p| Complex64::new(rp.re + e * p.norm_sqr(), 0.0))
}

/// Rescales `psi` onto the sphere `||psi||^2 = z`.
pub fn project_to_manifold(psi: &ScalarField, z: f64) -> Result<ScalarField> {
    if !(z > 0.0 && z.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "total charge Z = {z}: a neutral cell needs Z > 0"
        )));
    }
    let n = psi.norm();
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::ZeroField);
    }
    let s = z.sqrt() / n;
    let out = psi.scaled(Complex64::new(s, 0.0));
    // One refinement pass absorbs the rounding of the first rescale.
    let s2 = z.sqrt() / out.norm();
    Ok(out.scaled(Complex64::new(s2, 0.0)))
}

/// Which infrared condition applies to a cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfraredCondition {
    /// `d = 3`: nothing to check.
    Vacuous,
    /// `d = 2`: quotient in `L2(-1, 1)`.
    #[serde(rename = "cylinder_ii")]
    CylinderII,
    /// `d = 1`: quotient in `L2` of the unit disc.
    #[serde(rename = "slab_iii")]
    SlabIII,
}

/// One refinement level of the quotient evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuotientLevel {
    pub spacing: f64,
    pub norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfraredReport {
    pub condition: InfraredCondition,
    pub pass: bool,
    /// `int (|x_perp| + 1) |rho_j| dx` over the unbounded coordinates.
    pub moment: f64,
    /// Quotient norm at the finest level.
    pub quotient_norm: f64,
    /// Finest-to-previous norm ratio.
    pub refinement_ratio: f64,
    pub levels: Vec<QuotientLevel>,
}

/// Largest allowed growth of the quotient norm between refinement levels.
pub const INFRARED_RATIO_MAX: f64 = 1.1;
/// Refinement continues until the transverse spacing is at most this.
const INFRARED_FINEST_SPACING: f64 = 1.0 / 32.0;

/// Checks the infrared square-integrability condition of a species on the
/// unbounded directions of `cell`.
///
/// The quotient `(rho_hat^per(0, xi) + e Z) / |xi|` is sampled on the
/// transverse modes `0 < |xi| <= 1` of the truncated cell and then on
/// successively halved mode spacings; the condition passes when the moment
/// and quotient norms are finite and the last refinement grows the norm by
/// no more than [`INFRARED_RATIO_MAX`].
pub fn check_condition_infrared(species: &IonSpecies, cell: &Cell, units: &PhysicalUnits) -> Result<InfraredReport> {
    species.validate(cell)?;
    let d = cell.dim();
    let q_charge = species.charge * units.e_abs();
    if d == 3 {
        return Ok(InfraredReport {
            condition: InfraredCondition::Vacuous,
            pass: true,
            moment: f64::NAN,
            quotient_norm: 0.0,
            refinement_ratio: 1.0,
            levels: Vec::new(),
        });
    }
    let unbounded_axes = (3 - d) as f64;
    let axis_moment = match &species.profile {
        IonProfile::Gaussian { sigma } => sigma * (2.0 / PI).sqrt(),
        IonProfile::Tabulated(t) => t.axis_moment(),
        IonProfile::Uniform => f64::INFINITY,
    };
    let moment = q_charge * (1.0 + unbounded_axes * axis_moment);

    let quotient = |xi: f64| q_charge * (species.profile.shape(xi) - 1.0) / xi;
    let base: Vec<f64> = cell.trunc().iter().map(|l| PI / l).collect();
    let mut levels = Vec::new();
    let mut level = 0;
    loop {
        let scale = 0.5f64.powi(level);
        let norm_sq = match d {
            2 => {
                let h = base[0] * scale;
                let mut acc = 0.0;
                let mut m = 1;
                while m as f64 * h <= 1.0 {
                    acc += 2.0 * quotient(m as f64 * h).powi(2);
                    m += 1;
                }
                acc * h
            }
            _ => {
                let (h2, h3) = (base[0] * scale, base[1] * scale);
                let m2max = (1.0 / h2).floor() as i64;
                let m3max = (1.0 / h3).floor() as i64;
                let mut acc = 0.0;
                for m2 in -m2max..=m2max {
                    for m3 in -m3max..=m3max {
                        let xi = ((m2 as f64 * h2).powi(2) + (m3 as f64 * h3).powi(2)).sqrt();
                        if xi == 0.0 || xi > 1.0 {
                            continue;
                        }
                        acc += quotient(xi).powi(2);
                    }
                }
                acc * h2 * h3
            }
        };
        let spacing = base.iter().fold(0.0f64, |a, b| a.max(*b)) * scale;
        levels.push(QuotientLevel {
            spacing,
            norm: norm_sq.sqrt(),
        });
        if levels.len() >= 2 && spacing <= INFRARED_FINEST_SPACING {
            break;
        }
        level += 1;
    }
    let last = levels[levels.len() - 1].norm;
    let prev = levels[levels.len() - 2].norm;
    let refinement_ratio = if prev > 0.0 { last / prev } else if last == 0.0 { 1.0 } else { f64::INFINITY };
    let pass = moment.is_finite() && last.is_finite() && refinement_ratio <= INFRARED_RATIO_MAX;
    Ok(InfraredReport {
        condition: if d == 2 {
            InfraredCondition::CylinderII
        } else {
            InfraredCondition::SlabIII
        },
        pass,
        moment,
        quotient_norm: last,
        refinement_ratio,
        levels,
    })
}
