//! Physical constants, grid geometry and the grain-dependent coefficients.
//!
//! Everything downstream of [`validate`] works in internal units where the
//! action constant `h` and the particle mass `M` are both 1. [`UnitSystem`]
//! records the factors needed to go back to user units.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Moving fractions above this mark the swarm as leaving the non-relativistic regime.
pub const NON_RELATIVISTIC_LIMIT: f64 = 0.2;

/// `c·dt` may be at most this fraction of `dx`.
pub const SCALE_SEPARATION: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("{name} must be positive and finite, got {value}")]
    NonPositiveScale { name: &'static str, value: f64 },
    #[error("scale separation violated: c*dt = {c_dt} exceeds dx/10 = {limit}")]
    ScaleSeparationViolated { c_dt: f64, limit: f64 },
    #[error("dims must be 1, 2 or 3, got {0}")]
    InvalidDims(usize),
    #[error("extent along axis {axis} must be at least 2 cells, got {cells}")]
    ExtentTooSmall { axis: usize, cells: usize },
    #[error("physical config has dims={physical} but grid has dims={grid}")]
    DimensionMismatch { physical: usize, grid: usize },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("missing required key `{0}`")]
    MissingKey(&'static str),
    #[error("unknown key `{0}`")]
    UnknownKey(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Periodic,
    Reflecting,
}

impl FromStr for Boundary {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "periodic" => Ok(Boundary::Periodic),
            "reflecting" => Ok(Boundary::Reflecting),
            other => Err(format!("unknown boundary `{other}`")),
        }
    }
}

impl fmt::Display for Boundary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Boundary::Periodic => f.write_str("periodic"),
            Boundary::Reflecting => f.write_str("reflecting"),
        }
    }
}

/// Constants of the simulated particle and of its swarm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConfig {
    /// Planck constant (action).
    pub h: f64,
    /// Mass `M` of the quantum particle.
    pub mass: f64,
    /// Charge `Q` of the quantum particle.
    pub charge: f64,
    /// The single nonzero speed modulus of a sample.
    pub c: f64,
    /// Swarm size `n`.
    pub n_samples: u64,
    pub dims: usize,
}

impl PhysicalConfig {
    /// `m = M/n`.
    pub fn sample_mass(&self) -> f64 {
        self.mass / self.n_samples as f64
    }

    /// `q = Q/n`.
    pub fn sample_charge(&self) -> f64 {
        self.charge / self.n_samples as f64
    }
}

/// Regular cubic lattice with grain `dx` and time step `dt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dx: f64,
    pub dt: f64,
    /// Cells per axis; axes at or beyond `dims` hold 1.
    pub extent: [usize; 3],
    pub dims: usize,
    pub boundary: Boundary,
}

impl GridSpec {
    pub fn new(dx: f64, dt: f64, extent: &[usize], boundary: Boundary) -> Self {
        let mut ext = [1usize; 3];
        ext[..extent.len()].copy_from_slice(extent);
        GridSpec {
            dx,
            dt,
            extent: ext,
            dims: extent.len(),
            boundary,
        }
    }

    pub fn n_cells(&self) -> usize {
        self.extent[..self.dims].iter().product()
    }

    /// Domain length along `axis`.
    pub fn length(&self, axis: usize) -> f64 {
        self.extent[axis] as f64 * self.dx
    }

    /// `dx^dims`.
    pub fn cell_volume(&self) -> f64 {
        self.dx.powi(self.dims as i32)
    }

    #[inline]
    pub fn linear_index(&self, coords: [usize; 3]) -> usize {
        coords[0] + self.extent[0] * (coords[1] + self.extent[1] * coords[2])
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let nx = self.extent[0];
        let ny = self.extent[1];
        [index % nx, (index / nx) % ny, index / (nx * ny)]
    }

    /// Center of a cell in physical coordinates (unused axes are 0).
    pub fn cell_center(&self, index: usize) -> [f64; 3] {
        let c = self.coords(index);
        let mut out = [0.0; 3];
        for (axis, slot) in out.iter_mut().enumerate().take(self.dims) {
            *slot = (c[axis] as f64 + 0.5) * self.dx;
        }
        out
    }

    /// Neighbor of `index` one cell along `axis` in direction `step` (±1).
    /// `None` when the step leaves a reflecting domain.
    #[inline]
    pub fn neighbor(&self, index: usize, axis: usize, step: isize) -> Option<usize> {
        let mut c = self.coords(index);
        let n = self.extent[axis] as isize;
        let mut v = c[axis] as isize + step;
        if v < 0 || v >= n {
            match self.boundary {
                Boundary::Periodic => v = v.rem_euclid(n),
                Boundary::Reflecting => return None,
            }
        }
        c[axis] = v as usize;
        Some(self.linear_index(c))
    }

    /// Whether two cells share a face; returns the axis and the direction from `a` to `b`.
    pub fn adjacency(&self, a: usize, b: usize) -> Option<(usize, isize)> {
        for axis in 0..self.dims {
            for step in [1isize, -1] {
                if self.neighbor(a, axis, step) == Some(b) {
                    return Some((axis, step));
                }
            }
        }
        None
    }

    /// Same geometry with a different grain, keeping the physical domain and `c·dt/dx`.
    pub fn regrained(&self, dx: f64) -> GridSpec {
        let ratio = self.dx / dx;
        let mut extent = self.extent;
        for e in extent.iter_mut().take(self.dims) {
            *e = ((*e as f64) * ratio).round().max(2.0) as usize;
        }
        GridSpec {
            dx,
            dt: self.dt * dx / self.dx,
            extent,
            dims: self.dims,
            boundary: self.boundary,
        }
    }
}

/// Grain-dependent intensities.
///
/// `intensity = h²/(2m²dx³)`, `kappa = h/(m dx)`, `gamma = h/(2M dx²)` and
/// `alpha = -3h²/(m dx²)`. The sample mass `m` and particle mass `M` appear
/// exactly where the formulas put them. `inertia` is fixed to 1 by the unit choice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedCoefficients {
    pub intensity: f64,
    pub kappa: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub inertia: f64,
}

impl DerivedCoefficients {
    pub fn compute(physical: &PhysicalConfig, grid: &GridSpec) -> Self {
        let h = physical.h;
        let m = physical.sample_mass();
        let big_m = physical.mass;
        let dx = grid.dx;
        DerivedCoefficients {
            intensity: h * h / (2.0 * m * m * dx * dx * dx),
            kappa: h / (m * dx),
            gamma: h / (2.0 * big_m) / (dx * dx),
            alpha: -3.0 * h * h / (m * dx * dx),
            inertia: 1.0,
        }
    }

    /// Intensity in velocity² units that reproduces the two-cell second
    /// derivative `2γ²(ρ(x₁) − ρ(x))` with a single face flux: `2γ²dx²`.
    pub fn two_cell_intensity(&self, grid: &GridSpec) -> f64 {
        2.0 * self.gamma * self.gamma * grid.dx * grid.dx
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ConfigWarning {
    /// Expected moving fraction above [`NON_RELATIVISTIC_LIMIT`].
    RelativisticRegime { expected_moving_fraction: f64 },
}

/// A config that passed [`validate`]; immutable afterwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidatedConfig {
    pub physical: PhysicalConfig,
    pub grid: GridSpec,
    pub coeffs: DerivedCoefficients,
    pub warnings: Vec<ConfigWarning>,
}

impl ValidatedConfig {
    /// Moving fraction a grain-matched swarm needs: `dims · 2γ²dx² / c²`.
    pub fn expected_moving_fraction(&self) -> f64 {
        self.grid.dims as f64 * self.coeffs.two_cell_intensity(&self.grid)
            / (self.physical.c * self.physical.c)
    }

    pub fn sample_mass(&self) -> f64 {
        self.physical.sample_mass()
    }

    /// Same physics on a different grain; revalidated.
    pub fn with_grain(&self, dx: f64) -> Result<ValidatedConfig, ConfigError> {
        validate(self.physical.clone(), self.grid.regrained(dx))
    }
}

fn positive(name: &'static str, value: f64) -> Result<(), ConfigError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::NonPositiveScale { name, value })
    }
}

pub fn validate(physical: PhysicalConfig, grid: GridSpec) -> Result<ValidatedConfig, ConfigError> {
    positive("dx", grid.dx)?;
    positive("dt", grid.dt)?;
    positive("c", physical.c)?;
    positive("mass", physical.mass)?;
    positive("h", physical.h)?;
    if physical.n_samples == 0 {
        return Err(ConfigError::NonPositiveScale {
            name: "n_samples",
            value: 0.0,
        });
    }
    if !(1..=3).contains(&physical.dims) {
        return Err(ConfigError::InvalidDims(physical.dims));
    }
    if grid.dims != physical.dims {
        return Err(ConfigError::DimensionMismatch {
            physical: physical.dims,
            grid: grid.dims,
        });
    }
    for axis in 0..grid.dims {
        if grid.extent[axis] < 2 {
            return Err(ConfigError::ExtentTooSmall {
                axis,
                cells: grid.extent[axis],
            });
        }
    }
    let c_dt = physical.c * grid.dt;
    let limit = grid.dx * SCALE_SEPARATION;
    if c_dt > limit {
        return Err(ConfigError::ScaleSeparationViolated { c_dt, limit });
    }
    let coeffs = DerivedCoefficients::compute(&physical, &grid);
    let mut validated = ValidatedConfig {
        physical,
        grid,
        coeffs,
        warnings: Vec::new(),
    };
    let f = validated.expected_moving_fraction();
    if f > NON_RELATIVISTIC_LIMIT {
        log::warn!("expected moving fraction {f:.3} exceeds {NON_RELATIVISTIC_LIMIT}");
        validated.warnings.push(ConfigWarning::RelativisticRegime {
            expected_moving_fraction: f,
        });
    }
    Ok(validated)
}

/// Scale factors between user units and the internal `h = M = 1` system.
/// Lengths keep their user unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitSystem {
    pub action: f64,
    pub mass: f64,
    pub length: f64,
}

impl UnitSystem {
    pub fn of(physical: &PhysicalConfig) -> Self {
        UnitSystem {
            action: physical.h,
            mass: physical.mass,
            length: 1.0,
        }
    }

    pub fn time(&self) -> f64 {
        self.mass * self.length * self.length / self.action
    }

    pub fn velocity(&self) -> f64 {
        self.length / self.time()
    }

    pub fn energy(&self) -> f64 {
        self.action / self.time()
    }

    pub fn physical_to_internal(&self, p: &PhysicalConfig) -> PhysicalConfig {
        PhysicalConfig {
            h: p.h / self.action,
            mass: p.mass / self.mass,
            charge: p.charge,
            c: p.c / self.velocity(),
            n_samples: p.n_samples,
            dims: p.dims,
        }
    }

    pub fn physical_from_internal(&self, p: &PhysicalConfig) -> PhysicalConfig {
        PhysicalConfig {
            h: p.h * self.action,
            mass: p.mass * self.mass,
            charge: p.charge,
            c: p.c * self.velocity(),
            n_samples: p.n_samples,
            dims: p.dims,
        }
    }

    pub fn grid_to_internal(&self, g: &GridSpec) -> GridSpec {
        GridSpec {
            dx: g.dx / self.length,
            dt: g.dt / self.time(),
            ..g.clone()
        }
    }

    pub fn grid_from_internal(&self, g: &GridSpec) -> GridSpec {
        GridSpec {
            dx: g.dx * self.length,
            dt: g.dt * self.time(),
            ..g.clone()
        }
    }
}

/// Rescale to `h = M = 1`, returning the factors for output conversion.
pub fn to_internal_units(physical: &PhysicalConfig) -> (PhysicalConfig, UnitSystem) {
    let units = UnitSystem::of(physical);
    (units.physical_to_internal(physical), units)
}

/// Parsed contents of a `key = value` config file.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigFile {
    pub physical: PhysicalConfig,
    pub grid: GridSpec,
    pub seed: u64,
    /// `scenario.*` keys with the prefix stripped.
    pub scenario: BTreeMap<String, String>,
}

const KNOWN_KEYS: &[&str] = &[
    "h", "mass", "charge", "c", "n_samples", "dx", "dt", "extent_x", "extent_y", "extent_z",
    "dims", "boundary", "seed",
];

impl ConfigFile {
    pub fn parse(text: &str) -> Result<ConfigFile, ConfigError> {
        let mut values: BTreeMap<String, (usize, String)> = BTreeMap::new();
        let mut scenario = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Parse {
                line: line_no,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            let key = key.trim();
            let value = value.trim().to_string();
            if let Some(rest) = key.strip_prefix("scenario.") {
                scenario.insert(rest.to_string(), value);
            } else if KNOWN_KEYS.contains(&key) {
                values.insert(key.to_string(), (line_no, value));
            } else {
                return Err(ConfigError::UnknownKey(key.to_string()));
            }
        }

        fn get<T: FromStr>(
            values: &BTreeMap<String, (usize, String)>,
            key: &'static str,
        ) -> Result<Option<T>, ConfigError> {
            match values.get(key) {
                None => Ok(None),
                Some((line, v)) => v.parse::<T>().map(Some).map_err(|_| ConfigError::Parse {
                    line: *line,
                    message: format!("bad value `{v}` for `{key}`"),
                }),
            }
        }
        fn req<T: FromStr>(
            values: &BTreeMap<String, (usize, String)>,
            key: &'static str,
        ) -> Result<T, ConfigError> {
            get(values, key)?.ok_or(ConfigError::MissingKey(key))
        }

        let dims: usize = req(&values, "dims")?;
        if !(1..=3).contains(&dims) {
            return Err(ConfigError::InvalidDims(dims));
        }
        let axis_keys = ["extent_x", "extent_y", "extent_z"];
        let mut extent = Vec::with_capacity(dims);
        for key in axis_keys.iter().take(dims) {
            extent.push(req::<usize>(&values, key)?);
        }
        let boundary = match values.get("boundary") {
            None => Boundary::Periodic,
            Some((line, v)) => v.parse().map_err(|message| ConfigError::Parse {
                line: *line,
                message,
            })?,
        };
        let physical = PhysicalConfig {
            h: req(&values, "h")?,
            mass: req(&values, "mass")?,
            charge: get(&values, "charge")?.unwrap_or(0.0),
            c: req(&values, "c")?,
            n_samples: req(&values, "n_samples")?,
            dims,
        };
        let grid = GridSpec::new(req(&values, "dx")?, req(&values, "dt")?, &extent, boundary);
        Ok(ConfigFile {
            physical,
            grid,
            seed: get(&values, "seed")?.unwrap_or(0),
            scenario,
        })
    }

    /// Render back to the file format; scenario keys keep their prefix.
    pub fn render(&self) -> String {
        let p = &self.physical;
        let g = &self.grid;
        let mut out = String::new();
        out.push_str(&format!("h = {}\nmass = {}\ncharge = {}\nc = {}\n", p.h, p.mass, p.charge, p.c));
        out.push_str(&format!("n_samples = {}\ndims = {}\n", p.n_samples, p.dims));
        out.push_str(&format!("dx = {}\ndt = {}\n", g.dx, g.dt));
        for (axis, key) in ["extent_x", "extent_y", "extent_z"].iter().enumerate().take(g.dims) {
            out.push_str(&format!("{key} = {}\n", g.extent[axis]));
        }
        out.push_str(&format!("boundary = {}\nseed = {}\n", g.boundary, self.seed));
        for (k, v) in &self.scenario {
            out.push_str(&format!("scenario.{k} = {v}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn phys(n: u64) -> PhysicalConfig {
        PhysicalConfig {
            h: 1.0,
            mass: 1.0,
            charge: 0.0,
            c: 1.0,
            n_samples: n,
            dims: 1,
        }
    }

    #[test]
    fn intensity_by_direct_substitution() {
        let grid = GridSpec::new(0.1, 0.001, &[16], Boundary::Periodic);
        let cfg = validate(phys(1_000_000), grid).unwrap();
        assert!((cfg.physical.sample_mass() - 1e-6).abs() < 1e-20);
        let rel = (cfg.coeffs.intensity - 5e14).abs() / 5e14;
        assert!(rel < 1e-12, "I = {}", cfg.coeffs.intensity);
        assert!((cfg.coeffs.gamma - 50.0).abs() < 1e-9);
        assert_eq!(cfg.coeffs.inertia, 1.0);
    }

    #[test]
    fn rejects_scale_separation_violation() {
        let grid = GridSpec::new(0.1, 0.05, &[16], Boundary::Periodic);
        assert!(matches!(
            validate(phys(10), grid),
            Err(ConfigError::ScaleSeparationViolated { .. })
        ));
    }

    #[test]
    fn rejects_non_positive_scales() {
        let grid = GridSpec::new(-0.1, 0.001, &[16], Boundary::Periodic);
        assert!(matches!(
            validate(phys(10), grid),
            Err(ConfigError::NonPositiveScale { name: "dx", .. })
        ));
        let grid = GridSpec::new(0.1, 0.001, &[16], Boundary::Periodic);
        assert!(matches!(
            validate(phys(0), grid),
            Err(ConfigError::NonPositiveScale { name: "n_samples", .. })
        ));
        let mut p = phys(10);
        p.c = 0.0;
        let grid = GridSpec::new(0.1, 0.001, &[16], Boundary::Periodic);
        assert!(matches!(
            validate(p, grid),
            Err(ConfigError::NonPositiveScale { name: "c", .. })
        ));
    }

    #[test]
    fn warns_outside_non_relativistic_regime() {
        // 2γ²dx² = 1/(2dx²) = 50 for dx = 0.1; with c = 1 that is far above 0.2.
        let grid = GridSpec::new(0.1, 0.001, &[16], Boundary::Periodic);
        let cfg = validate(phys(10), grid).unwrap();
        assert_eq!(cfg.warnings.len(), 1);
        let mut p = phys(10);
        p.c = 100.0;
        let grid = GridSpec::new(0.1, 0.00005, &[16], Boundary::Periodic);
        let cfg = validate(p, grid).unwrap();
        assert!(cfg.warnings.is_empty());
    }

    #[test]
    fn halving_grain_scales_coefficients() {
        let grid = GridSpec::new(0.2, 0.001, &[16], Boundary::Periodic);
        let a = validate(phys(1000), grid.clone()).unwrap().coeffs;
        let b = validate(phys(1000), GridSpec { dx: 0.1, ..grid }).unwrap().coeffs;
        assert_eq!(b.intensity / a.intensity, 8.0);
        assert_eq!(b.kappa / a.kappa, 2.0);
        assert_eq!(b.gamma / a.gamma, 4.0);
        assert_eq!(b.alpha / a.alpha, 4.0);
    }

    #[test]
    fn recomputation_is_bit_identical() {
        let grid = GridSpec::new(0.037, 0.0001, &[16, 9], Boundary::Reflecting);
        let mut p = phys(12345);
        p.dims = 2;
        p.h = 1.3;
        let cfg = validate(p, grid).unwrap();
        assert_eq!(DerivedCoefficients::compute(&cfg.physical, &cfg.grid), cfg.coeffs);
    }

    #[test]
    fn internal_units_identity_and_round_trip() {
        let p = phys(100);
        let (internal, units) = to_internal_units(&p);
        assert_eq!(internal, p);
        assert_eq!(units.time(), 1.0);

        let user = PhysicalConfig {
            h: 6.6e-34,
            mass: 9.1e-31,
            charge: 1.6e-19,
            c: 3.0e5,
            n_samples: 1000,
            dims: 3,
        };
        let (internal, units) = to_internal_units(&user);
        assert!((internal.h - 1.0).abs() < 1e-15);
        assert!((internal.mass - 1.0).abs() < 1e-15);
        let back = units.physical_from_internal(&internal);
        for (a, b) in [(back.h, user.h), (back.mass, user.mass), (back.c, user.c)] {
            assert!(((a - b) / b).abs() < 1e-14);
        }
        let grid = GridSpec::new(1e-9, 1e-17, &[4, 4, 4], Boundary::Periodic);
        let g2 = units.grid_from_internal(&units.grid_to_internal(&grid));
        assert!(((g2.dt - grid.dt) / grid.dt).abs() < 1e-14);
    }

    #[test]
    fn parses_config_file() {
        let text = "\
# swarm config
h = 1
mass = 1
c = 2.5
n_samples = 1000000
dx = 0.1
dt = 0.002   # c*dt = 0.005
dims = 2
extent_x = 64
extent_y = 32
boundary = reflecting
seed = 42
scenario.sigma0 = 0.8
";
        let f = ConfigFile::parse(text).unwrap();
        assert_eq!(f.physical.c, 2.5);
        assert_eq!(f.grid.extent, [64, 32, 1]);
        assert_eq!(f.grid.boundary, Boundary::Reflecting);
        assert_eq!(f.seed, 42);
        assert_eq!(f.scenario["sigma0"], "0.8");
        let again = ConfigFile::parse(&f.render()).unwrap();
        assert_eq!(again, f);
    }

    #[test]
    fn config_file_errors() {
        assert!(matches!(
            ConfigFile::parse("h = 1\nbogus = 3\n"),
            Err(ConfigError::UnknownKey(_))
        ));
        assert!(matches!(
            ConfigFile::parse("dims = 1\nh = x\n"),
            Err(ConfigError::MissingKey(_)) | Err(ConfigError::Parse { .. })
        ));
        assert!(matches!(
            ConfigFile::parse("dims = 1\nextent_x = 4\nh = 1\n"),
            Err(ConfigError::MissingKey("mass"))
        ));
        assert!(matches!(ConfigFile::parse("no equals sign"), Err(ConfigError::Parse { line: 1, .. })));
    }

    #[test]
    fn grid_neighbors() {
        let g = GridSpec::new(1.0, 0.01, &[4, 3], Boundary::Periodic);
        assert_eq!(g.neighbor(0, 0, -1), Some(3));
        assert_eq!(g.neighbor(0, 1, -1), Some(8));
        let r = GridSpec { boundary: Boundary::Reflecting, ..g.clone() };
        assert_eq!(r.neighbor(0, 0, -1), None);
        assert_eq!(g.adjacency(5, 6), Some((0, 1)));
        assert_eq!(g.adjacency(5, 1), Some((1, -1)));
        assert_eq!(g.adjacency(5, 7), None);
        for i in 0..g.n_cells() {
            assert_eq!(g.linear_index(g.coords(i)), i);
        }
    }
}
