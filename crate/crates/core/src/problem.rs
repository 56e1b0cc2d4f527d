//! Problem description: cell, ions and units, plus initial guesses.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::densities::{assemble_rho_plus, project_to_manifold, ChargeState, IonSpecies, PhysicalUnits};
use crate::energy::Configuration;
use crate::error::{Error, Result};
use crate::geometry::{Cell, CellSpec, Vec3};
use crate::spectral::ScalarField;

/// Serializable problem description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub d: usize,
    pub periods: Vec<Vec3>,
    #[serde(default)]
    pub trunc: Vec<f64>,
    pub grid: [usize; 3],
    pub species: Vec<IonSpecies>,
    #[serde(default)]
    pub units: PhysicalUnits,
}

/// A validated problem.
#[derive(Debug, Clone)]
pub struct Problem {
    cell: Cell,
    species: Vec<IonSpecies>,
    units: PhysicalUnits,
}

/// Relative amplitude of the seeded multiplicative noise in the initial guess.
const INIT_NOISE: f64 = 0.1;
/// Uniform floor added to `sqrt(rho^+/|e|)`, relative to `sqrt(Z / volume)`.
const INIT_FLOOR: f64 = 0.05;

impl Problem {
    pub fn new(cell: Cell, species: Vec<IonSpecies>, units: PhysicalUnits) -> Result<Self> {
        units.validate()?;
        let z = ChargeState::from_species(&species).z;
        if species.is_empty() || !(z > 0.0) {
            return Err(Error::InvalidConfig(
                "total ion charge Z must be > 0: the electron norm ||psi||^2 = Z is fixed by neutrality".into(),
            ));
        }
        if cell.dim() < 3 && species.len() != 1 {
            return Err(Error::InvalidConfig(format!(
                "d = {} cells carry exactly one ion per cell, got {}",
                cell.dim(),
                species.len()
            )));
        }
        for s in &species {
            s.validate(&cell)?;
        }
        Ok(Problem { cell, species, units })
    }

    pub fn from_spec(spec: &ProblemSpec) -> Result<Self> {
        let cell = CellSpec {
            d: spec.d,
            periods: spec.periods.clone(),
            trunc: spec.trunc.clone(),
            grid: spec.grid,
        }
        .build()?;
        Problem::new(cell, spec.species.clone(), spec.units)
    }

    pub fn spec(&self) -> ProblemSpec {
        let c = self.cell.spec();
        ProblemSpec {
            d: c.d,
            periods: c.periods,
            trunc: c.trunc,
            grid: c.grid,
            species: self.species.clone(),
            units: self.units,
        }
    }

    pub fn cell(&self) -> &Cell {
        &self.cell
    }

    pub fn species(&self) -> &[IonSpecies] {
        &self.species
    }

    pub fn units(&self) -> &PhysicalUnits {
        &self.units
    }

    pub fn charge(&self) -> ChargeState {
        ChargeState::from_species(&self.species)
    }

    /// Positive initial field `sqrt(rho^+/|e|)` plus a small uniform floor,
    /// modulated by seeded band-limited noise of relative size 0.1 and
    /// projected onto the manifold.
    pub fn initial_psi(&self, seed: u64) -> Result<ScalarField> {
        let z = self.charge().z;
        let rho_plus = assemble_rho_plus(&self.species, &self.cell, &self.units)?;
        let floor = INIT_FLOOR * (z / self.cell.volume()).sqrt();
        let e = self.units.e_abs();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = ScalarField::random_band_limited(&self.cell, &mut rng, true);
        let amp = noise.max_abs();
        let noise = if amp > 0.0 {
            noise.scaled(Complex64::new(INIT_NOISE / amp, 0.0))
        } else {
            noise
        };
        let base = rho_plus.zip_map(&noise, |r, n| Complex64::new(((r.re / e).max(0.0).sqrt() + floor) * (1.0 + n.re), 0.0))?;
        match project_to_manifold(&base, z) {
            Ok(p) => Ok(p),
            Err(Error::ZeroField) => project_to_manifold(&noise.map(|v| v + 1.0), z),
            Err(e) => Err(e),
        }
    }

    pub fn initial_configuration(&self, seed: u64) -> Result<Configuration> {
        Configuration::new(self.initial_psi(seed)?, self.species.clone(), self.units)
    }

    /// Configuration from a given electron field (projected onto the manifold).
    pub fn configuration(&self, psi: &ScalarField) -> Result<Configuration> {
        let psi = project_to_manifold(psi, self.charge().z)?;
        Configuration::new(psi, self.species.clone(), self.units)
    }

    /// Same problem on a cell whose truncated axes have half-length `l`,
    /// keeping the sample spacing along those axes.
    pub fn with_half_length(&self, l: f64) -> Result<Self> {
        let d = self.cell.dim();
        if d == 3 {
            return Err(Error::WrongDimension {
                expected: "d in {1, 2}",
                found: 3,
            });
        }
        let mut grid = self.cell.grid();
        let mut trunc = Vec::new();
        for (j, old) in self.cell.trunc().iter().enumerate() {
            let axis = d + j;
            let n = (grid[axis] as f64 * l / old / 2.0).round() as usize * 2;
            grid[axis] = n.max(2);
            trunc.push(l);
        }
        let cell = self.cell.with_trunc(&trunc, grid)?;
        Problem::new(cell, self.species.clone(), self.units)
    }
}
