mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use spcrystal::densities::{check_condition_infrared, IonProfile};
use spcrystal::energy::{gradcheck_table, loglog_slope, TangentVector};
use spcrystal::groundstate::{solve, truncation_study};
use spcrystal::persist::write_csv;
use spcrystal::problem::Problem;
use spcrystal::spectral::ScalarField;
use spcrystal::Complex64;

use config::{ConfigError, Loaded};

#[derive(Parser)]
#[command(name = "spcrystal", version, about = "Periodic Schrodinger-Poisson ground states on tori, cylinders and slabs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Directory that relative output paths are resolved against.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Overrides `solver.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Suppress progress and summary lines on stdout
    #[arg(long)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Minimize the energy and write the ground state.
    Solve(Common),
    /// Finite-difference check of the directional derivative and chart remainder.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Comma-separated step sizes (at least three).
        #[arg(long, value_delimiter = ',')]
        eps: Option<Vec<f64>>,
    },
    /// Solve at several truncation half-lengths.
    Study {
        #[command(flatten)]
        common: Common,
        /// Comma-separated half-lengths.
        #[arg(long, value_delimiter = ',')]
        lengths: Option<Vec<f64>>,
    },
    /// Validate the problem and report the profile and infrared conditions.
    Check(Common),
}

const EXIT_VALIDATION: u8 = 1;
const EXIT_NOT_CONVERGED: u8 = 2;
const EXIT_CHECK_FAILED: u8 = 3;

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<ConfigError>().is_some() {
            return EXIT_VALIDATION;
        }
        if let Some(e) = cause.downcast_ref::<spcrystal::Error>() {
            return match e {
                spcrystal::Error::NotConverged(_) | spcrystal::Error::LineSearchStalled { .. } => EXIT_NOT_CONVERGED,
                spcrystal::Error::CheckFailed(_) => EXIT_CHECK_FAILED,
                _ => EXIT_VALIDATION,
            };
        }
    }
    EXIT_VALIDATION
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let common = match &cli.command {
        Command::Solve(c) | Command::Check(c) => c,
        Command::Gradcheck { common, .. } | Command::Study { common, .. } => common,
    };
    if let Some(n) = common.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(EXIT_VALIDATION);
        }
    }
    let outcome = match &cli.command {
        Command::Solve(c) => cmd_solve(c),
        Command::Gradcheck { common, eps } => cmd_gradcheck(common, eps.clone()),
        Command::Study { common, lengths } => cmd_study(common, lengths.clone()),
        Command::Check(c) => cmd_check(c),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn load(common: &Common) -> Result<(Loaded, Problem)> {
    let mut loaded = config::load(&common.config)?;
    if let Some(seed) = common.seed {
        loaded.run.solver.seed = seed;
    }
    loaded.run.solver.validate()?;
    let problem = loaded.problem()?;
    Ok((loaded, problem))
}

fn say(common: &Common, msg: impl AsRef<str>) {
    if !common.quiet {
        println!("{}", msg.as_ref());
    }
}

/// Runs the infrared check for every species; returns whether all pass.
fn infrared_gate(common: &Common, problem: &Problem) -> Result<bool> {
    let mut ok = true;
    for (j, s) in problem.species().iter().enumerate() {
        let r = check_condition_infrared(s, problem.cell(), problem.units())?;
        say(
            common,
            format!(
                "species {j}: infrared {:?} {} (quotient norm {:.6e}, refinement ratio {:.4})",
                r.condition,
                if r.pass { "pass" } else { "FAIL" },
                r.quotient_norm,
                r.refinement_ratio
            ),
        );
        ok &= r.pass;
    }
    Ok(ok)
}

#[derive(Serialize)]
struct ProfileRow {
    x: f64,
    y: f64,
    z: f64,
    phi: f64,
    density: f64,
}

#[derive(Serialize)]
struct GrowthRow {
    r: f64,
    max_abs_phi: f64,
}

fn cmd_solve(common: &Common) -> Result<u8> {
    let (loaded, problem) = load(common)?;
    if problem.cell().dim() < 3 && !infrared_gate(common, &problem)? {
        eprintln!("error: infrared condition fails; refusing to solve on a truncated cell");
        return Ok(EXIT_CHECK_FAILED);
    }
    let solver = loaded.run.solver;
    let (result, trace) = solve(&problem, &solver)?;
    let outputs = &loaded.run.outputs;
    let out = &common.out;
    result.write(&out.join(&outputs.result), &out.join(&outputs.snapshots))?;
    trace.write_csv(&out.join(&outputs.trace))?;
    if outputs.emit_plot_data {
        write_plot_data(out, &result)?;
    }
    say(
        common,
        format!(
            "U0 = {:.15e}  omega0 = {:.15e} {:+.3e}i  iterations = {}  converged = {}",
            result.u0, result.omega0.re, result.omega0.im, result.iterations, result.converged
        ),
    );
    say(
        common,
        format!(
            "residuals: schrodinger {:.3e}  poisson {:.3e}  force {:.3e}",
            result.residuals.schrodinger, result.residuals.poisson, result.residuals.force
        ),
    );
    if result.converged {
        Ok(0)
    } else {
        eprintln!("error: not converged after {} iterations ({:?})", result.iterations, trace.stop);
        Ok(EXIT_NOT_CONVERGED)
    }
}

/// Line profile of `phi` and `|psi|^2` through the first grid point along the
/// last axis, plus the growth samples for truncated cells.
fn write_plot_data(out: &Path, result: &spcrystal::groundstate::GroundStateResult) -> Result<()> {
    let cell = result.config.cell();
    let n = cell.grid()[2];
    let rows: Vec<ProfileRow> = (0..n)
        .map(|k| {
            let idx = cell.flat([0, 0, k]);
            let x = cell.point(idx);
            ProfileRow {
                x: x[0],
                y: x[1],
                z: x[2],
                phi: result.phi0.values()[idx].re,
                density: result.psi0.values()[idx].norm_sqr(),
            }
        })
        .collect();
    write_csv(&out.join("plot_profile.csv"), &rows)?;
    if let Some(g) = &result.diagnostics.phi_growth {
        let rows: Vec<GrowthRow> = g.samples.iter().map(|&(r, m)| GrowthRow { r, max_abs_phi: m }).collect();
        write_csv(&out.join("plot_growth.csv"), &rows)?;
    }
    Ok(())
}

const FD_SLOPE: f64 = 1.0;
const REMAINDER_SLOPE: f64 = 2.0;
const SLOPE_TOL: f64 = 0.1;
/// Differences below this are treated as exact agreement (vacuous slope).
const VACUOUS_DIFF: f64 = 1e-13;

fn cmd_gradcheck(common: &Common, eps: Option<Vec<f64>>) -> Result<u8> {
    let (loaded, problem) = load(common)?;
    let eps = eps.unwrap_or_else(|| loaded.run.gradcheck.eps.clone());
    if eps.len() < 3 {
        return Err(ConfigError(format!(
            "gradcheck needs at least three eps values for the slope regression, got {}",
            eps.len()
        ))
        .into());
    }
    let seed = loaded.run.solver.seed;
    let config = problem.initial_configuration(seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let raw = ScalarField::random_band_limited(problem.cell(), &mut rng, false);
    let tau = TangentVector::project(&raw, config.psi())?;
    let scale = config.psi().norm() / tau.field().norm();
    let tau = TangentVector::project(&tau.field().scaled(Complex64::new(scale, 0.0)), config.psi())?;

    let table = gradcheck_table(&config, &tau, &eps)?;
    write_csv(&common.out.join(&loaded.run.gradcheck.output), &table)?;
    for r in &table {
        say(
            common,
            format!(
                "eps {:.1e}  fd {:.12e}  analytic {:.12e}  |diff| {:.3e}  ||R|| {:.3e}",
                r.eps, r.fd, r.analytic, r.diff, r.remainder
            ),
        );
    }
    let diffs: Vec<f64> = table.iter().map(|r| r.diff).collect();
    let rems: Vec<f64> = table.iter().map(|r| r.remainder).collect();
    let fd_ok = if diffs.iter().all(|d| *d <= VACUOUS_DIFF) {
        say(common, "finite differences: exact agreement (vacuous pass)");
        true
    } else {
        let s = loglog_slope(&eps, &diffs);
        let ok = (s - FD_SLOPE).abs() <= SLOPE_TOL;
        say(common, format!("finite-difference slope {s:.4} (expect {FD_SLOPE} +- {SLOPE_TOL}): {}", verdict(ok)));
        ok
    };
    let s = loglog_slope(&eps, &rems);
    let rem_ok = (s - REMAINDER_SLOPE).abs() <= SLOPE_TOL;
    say(
        common,
        format!("remainder slope {s:.4} (expect {REMAINDER_SLOPE} +- {SLOPE_TOL}): {}", verdict(rem_ok)),
    );
    Ok(if fd_ok && rem_ok { 0 } else { EXIT_CHECK_FAILED })
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "pass"
    } else {
        "FAIL"
    }
}

fn cmd_study(common: &Common, lengths: Option<Vec<f64>>) -> Result<u8> {
    let (loaded, problem) = load(common)?;
    let lengths = lengths.unwrap_or_else(|| loaded.run.study.lengths.clone());
    if lengths.is_empty() {
        bail!(ConfigError("study needs at least one half-length".into()));
    }
    let rows = truncation_study(&problem, &lengths, &loaded.run.solver)?;
    write_csv(&common.out.join(&loaded.run.study.output), &rows)?;
    for r in &rows {
        match &r.error {
            Some(e) => say(common, format!("L = {}: failed: {e}", r.l)),
            None => say(
                common,
                format!(
                    "L = {}  U0 = {:.15e}  dU0 = {}  exponent = {}  converged = {}",
                    r.l,
                    r.u0.unwrap_or(f64::NAN),
                    r.delta_u0.map_or("-".into(), |v| format!("{v:.3e}")),
                    r.exponent.map_or("flat".into(), |v| format!("{v:.3}")),
                    r.converged
                ),
            ),
        }
    }
    Ok(if rows.iter().all(|r| r.converged) { 0 } else { EXIT_NOT_CONVERGED })
}

fn cmd_check(common: &Common) -> Result<u8> {
    let (_, problem) = load(common)?;
    let cell = problem.cell();
    say(
        common,
        format!(
            "geometry: d = {}, grid {:?}, volume {:.6e}: pass",
            cell.dim(),
            cell.grid(),
            cell.volume()
        ),
    );
    let mut all = true;
    for (j, s) in problem.species().iter().enumerate() {
        let (mass_ok, what) = match &s.profile {
            IonProfile::Gaussian { .. } => (true, "gaussian".to_string()),
            IonProfile::Uniform => (true, "uniform".to_string()),
            IonProfile::Tabulated(t) => {
                let m = t.axis_moment();
                (m.is_finite(), format!("tabulated, axis moment {m:.6e}"))
            }
        };
        say(common, format!("species {j}: condition I (L1 profile, {what}): {}", verdict(mass_ok)));
        all &= mass_ok;
        let r = check_condition_infrared(s, cell, problem.units())?;
        let label = match r.condition {
            spcrystal::densities::InfraredCondition::Vacuous => "conditions II/III: vacuous (d = 3)".to_string(),
            c => format!(
                "{c:?}: quotient norm {:.6e}, refinement ratio {:.4}, moment {:.6e}",
                r.quotient_norm, r.refinement_ratio, r.moment
            ),
        };
        say(common, format!("species {j}: {label}: {}", verdict(r.pass)));
        all &= r.pass;
    }
    Ok(if all { 0 } else { EXIT_CHECK_FAILED })
}
