use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use spcrystal::densities::{IonProfile, IonSpecies, PhysicalUnits, RadialTable};
use spcrystal::geometry::Vec3;
use spcrystal::minimizer::SolverConfig;
use spcrystal::problem::{Problem, ProblemSpec};

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ProfileConfig {
    Gaussian { sigma: f64 },
    /// Two-column `radius density` file, relative to the config file.
    Tabulated { path: PathBuf },
    Uniform,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SpeciesConfig {
    pub charge: f64,
    pub profile: ProfileConfig,
    #[serde(default = "one")]
    pub mass: f64,
    #[serde(default)]
    pub position: Vec3,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub d: usize,
    pub periods: Vec<Vec3>,
    #[serde(default)]
    pub trunc: Vec<f64>,
    pub grid: [usize; 3],
    pub species: Vec<SpeciesConfig>,
    #[serde(default)]
    pub units: PhysicalUnits,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct OutputsConfig {
    #[serde(default = "default_result")]
    pub result: PathBuf,
    #[serde(default = "default_trace")]
    pub trace: PathBuf,
    #[serde(default = "default_snapshots")]
    pub snapshots: PathBuf,
    #[serde(default)]
    pub emit_plot_data: bool,
}

fn default_result() -> PathBuf {
    "result.json".into()
}
fn default_trace() -> PathBuf {
    "trace.csv".into()
}
fn default_snapshots() -> PathBuf {
    "snapshots".into()
}

impl Default for OutputsConfig {
    fn default() -> Self {
        OutputsConfig {
            result: default_result(),
            trace: default_trace(),
            snapshots: default_snapshots(),
            emit_plot_data: false,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GradcheckConfig {
    #[serde(default = "default_eps")]
    pub eps: Vec<f64>,
    #[serde(default = "default_gradcheck_out")]
    pub output: PathBuf,
}

fn default_eps() -> Vec<f64> {
    vec![1e-1, 1e-2, 1e-3]
}
fn default_gradcheck_out() -> PathBuf {
    "gradcheck.csv".into()
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            eps: default_eps(),
            output: default_gradcheck_out(),
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    #[serde(default)]
    pub lengths: Vec<f64>,
    #[serde(default = "default_study_out")]
    pub output: PathBuf,
}

fn default_study_out() -> PathBuf {
    "study.csv".into()
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            lengths: Vec::new(),
            output: default_study_out(),
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub outputs: OutputsConfig,
    #[serde(default)]
    pub gradcheck: GradcheckConfig,
    #[serde(default)]
    pub study: StudyConfig,
}

/// A parsed config together with the directory relative paths refer to.
pub struct Loaded {
    pub run: RunConfig,
    pub base: PathBuf,
}

/// Reading or parsing the config failed, as opposed to a physics error.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn load(path: &Path) -> Result<Loaded> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
    let run: RunConfig = serde_json::from_str(&text)
        .map_err(|e| ConfigError(format!("invalid config {}: {e}", path.display())))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(Loaded { run, base })
}

impl Loaded {
    pub fn problem(&self) -> Result<Problem> {
        let p = &self.run.problem;
        let species = p
            .species
            .iter()
            .map(|s| {
                let profile = match &s.profile {
                    ProfileConfig::Gaussian { sigma } => IonProfile::Gaussian { sigma: *sigma },
                    ProfileConfig::Uniform => IonProfile::Uniform,
                    ProfileConfig::Tabulated { path } => {
                        let full = self.base.join(path);
                        IonProfile::Tabulated(
                            RadialTable::load(&full)
                                .with_context(|| format!("loading radial table {}", full.display()))?,
                        )
                    }
                };
                Ok(IonSpecies {
                    charge: s.charge,
                    profile,
                    mass: s.mass,
                    position: s.position,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let spec = ProblemSpec {
            d: p.d,
            periods: p.periods.clone(),
            trunc: p.trunc.clone(),
            grid: p.grid,
            species,
            units: p.units,
        };
        Ok(Problem::from_spec(&spec)?)
    }
}
