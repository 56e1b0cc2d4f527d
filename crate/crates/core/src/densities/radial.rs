//! Tabulated radial density profiles.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 8-point Gauss-Legendre rule on [-1, 1].
const GL_NODES: [f64; 8] = [
    -0.960_289_856_497_536_3,
    -0.796_666_477_413_626_7,
    -0.525_532_409_916_329,
    -0.183_434_642_495_649_8,
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const GL_WEIGHTS: [f64; 8] = [
    0.101_228_536_290_376_26,
    0.222_381_034_453_374_47,
    0.313_706_645_877_887_3,
    0.362_683_783_378_362,
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_47,
    0.101_228_536_290_376_26,
];

fn gauss_legendre(a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (b + a);
    GL_NODES
        .iter()
        .zip(GL_WEIGHTS)
        .map(|(x, w)| w * f(mid + half * x))
        .sum::<f64>()
        * half
}

/// Radial density `rho(r)` given as samples, interpolated by a natural cubic
/// spline. Zero beyond the last radius, constant below the first one.
#[derive(Serialize, Deserialize)]
#[serde(try_from = "RadialSamples", into = "RadialSamples")]
pub struct RadialTable {
    radii: Vec<f64>,
    density: Vec<f64>,
    second: Vec<f64>,
    raw_mass: f64,
    cache: Mutex<HashMap<u64, f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadialSamples {
    pub radii: Vec<f64>,
    pub density: Vec<f64>,
}

impl TryFrom<RadialSamples> for RadialTable {
    type Error = Error;

    fn try_from(s: RadialSamples) -> Result<Self> {
        RadialTable::new(s.radii, s.density)
    }
}

impl From<RadialTable> for RadialSamples {
    fn from(t: RadialTable) -> Self {
        RadialSamples {
            radii: t.radii,
            density: t.density,
        }
    }
}

impl Clone for RadialTable {
    fn clone(&self) -> Self {
        RadialTable {
            radii: self.radii.clone(),
            density: self.density.clone(),
            second: self.second.clone(),
            raw_mass: self.raw_mass,
            cache: Mutex::new(HashMap::new()),
        }
    }
}

impl std::fmt::Debug for RadialTable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RadialTable")
            .field("points", &self.radii.len())
            .field("r_max", &self.r_max())
            .finish()
    }
}

impl PartialEq for RadialTable {
    fn eq(&self, other: &Self) -> bool {
        self.radii == other.radii && self.density == other.density
    }
}

impl RadialTable {
    pub fn new(radii: Vec<f64>, density: Vec<f64>) -> Result<Self> {
        let bad = |m: &str| Error::BadSpecies(format!("radial table: {m}"));
        if radii.len() != density.len() {
            return Err(bad("column lengths differ"));
        }
        if radii.len() < 2 {
            return Err(bad("need at least two samples"));
        }
        if radii[0] < 0.0 || radii.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(bad("radii must be nonnegative and strictly increasing"));
        }
        if density.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err(bad("density must be finite and nonnegative"));
        }
        let second = natural_spline(&radii, &density);
        let mut table = RadialTable {
            radii,
            density,
            second,
            raw_mass: 0.0,
            cache: Mutex::new(HashMap::new()),
        };
        table.raw_mass = table.raw_transform(0.0);
        if !(table.raw_mass > 0.0) {
            return Err(bad("profile carries no charge"));
        }
        Ok(table)
    }

    /// Reads a two-column text file `radius density`; `#` starts a comment.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut radii = Vec::new();
        let mut density = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(|c: char| c.is_whitespace() || c == ',').filter(|s| !s.is_empty()).collect();
            let parse = |s: &str| {
                s.parse::<f64>().map_err(|_| {
                    Error::BadSpecies(format!("{}:{}: cannot parse {s:?}", path.display(), lineno + 1))
                })
            };
            if cols.len() != 2 {
                return Err(Error::BadSpecies(format!(
                    "{}:{}: expected two columns",
                    path.display(),
                    lineno + 1
                )));
            }
            radii.push(parse(cols[0])?);
            density.push(parse(cols[1])?);
        }
        Self::new(radii, density)
    }

    pub fn r_max(&self) -> f64 {
        *self.radii.last().unwrap()
    }

    pub fn samples(&self) -> (&[f64], &[f64]) {
        (&self.radii, &self.density)
    }

    /// Interpolated density.
    pub fn eval(&self, r: f64) -> f64 {
        let n = self.radii.len();
        if r > self.radii[n - 1] {
            return 0.0;
        }
        if r <= self.radii[0] {
            return self.density[0];
        }
        let i = match self.radii.binary_search_by(|x| x.partial_cmp(&r).unwrap()) {
            Ok(i) => return self.density[i],
            Err(i) => i - 1,
        };
        let (x0, x1) = (self.radii[i], self.radii[i + 1]);
        let h = x1 - x0;
        let a = (x1 - r) / h;
        let b = (r - x0) / h;
        a * self.density[i]
            + b * self.density[i + 1]
            + ((a * a * a - a) * self.second[i] + (b * b * b - b) * self.second[i + 1]) * h * h / 6.0
    }

    /// `4 pi int_0^R r^2 rho(r) sin(kr)/(kr) dr` for the raw (unnormalized) table.
    fn raw_transform(&self, k: f64) -> f64 {
        let weight = |r: f64| {
            let kr = k * r;
            let sinc = if kr.abs() < 1e-4 {
                1.0 - kr * kr / 6.0
            } else {
                kr.sin() / kr
            };
            r * r * self.eval(r) * sinc
        };
        self.integrate(weight, k)
    }

    /// Integrates `f` over `[0, r_max]`, splitting each spline segment so that
    /// each piece spans at most about one radian of `k r`.
    fn integrate(&self, f: impl Fn(f64) -> f64, k: f64) -> f64 {
        let mut total = 0.0;
        let mut edges = Vec::with_capacity(self.radii.len() + 1);
        if self.radii[0] > 0.0 {
            edges.push(0.0);
        }
        edges.extend_from_slice(&self.radii);
        for w in edges.windows(2) {
            let (a, b) = (w[0], w[1]);
            let pieces = ((k * (b - a)).ceil() as usize).max(1);
            let h = (b - a) / pieces as f64;
            for p in 0..pieces {
                let lo = a + p as f64 * h;
                total += gauss_legendre(lo, lo + h, &f);
            }
        }
        4.0 * std::f64::consts::PI * total
    }

    /// Fourier transform normalized to 1 at `k = 0`.
    pub fn shape(&self, k: f64) -> f64 {
        let key = k.abs().to_bits();
        if let Some(v) = self.cache.lock().unwrap().get(&key) {
            return *v;
        }
        let v = self.raw_transform(k.abs()) / self.raw_mass;
        self.cache.lock().unwrap().insert(key, v);
        v
    }

    /// `int |x_axis| rho dx / int rho dx` over the table (any single axis).
    pub fn axis_moment(&self) -> f64 {
        // int |r cos(theta)| dOmega = 2 pi
        let m = self.integrate(|r| r * r * r * self.eval(r), 0.0) / (4.0 * std::f64::consts::PI);
        2.0 * std::f64::consts::PI * m / self.raw_mass
    }
}

fn natural_spline(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut m = vec![0.0; n];
    if n < 3 {
        return m;
    }
    // Tridiagonal system for interior second derivatives (Thomas algorithm).
    let mut c_prime = vec![0.0; n];
    let mut d_prime = vec![0.0; n];
    for i in 1..n - 1 {
        let h0 = x[i] - x[i - 1];
        let h1 = x[i + 1] - x[i];
        let a = h0 / 6.0;
        let b = (h0 + h1) / 3.0;
        let c = h1 / 6.0;
        let d = (y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0;
        let denom = b - a * c_prime[i - 1];
        c_prime[i] = c / denom;
        d_prime[i] = (d - a * d_prime[i - 1]) / denom;
    }
    for i in (1..n - 1).rev() {
        m[i] = d_prime[i] - c_prime[i] * m[i + 1];
    }
    m
}
