//! Scenario runner.
//!
//! Puts the swarm, the continuum model and the reference solver on one grid,
//! steps them to shared frame times, and compares their densities against
//! the sampling noise a perfect swarm would still show.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::continuum::{integrate_continuum, write_field_csv, ContinuumError, FluxCoefficients};
use crate::fields::{l1_distance, l2_distance, same_grid, DensityField, FieldError, ImpulseField, Potential, VelocityField};
use crate::observables::{ehrenfest_check, EhrenfestReport, ObservableRecord};
use crate::phase::{analytic_k, calibrate_k, reconstruct_phase, reconstruct_wave, PhaseError};
use crate::quantum::{ground_state, harmonic_ground_width, write_wave_csv, CrankNicolson, QuantumError, WaveField};
use crate::rng::{multinomial, Phase, StreamKey};
use crate::swarm::{
    calibrate_diffusion, calibrate_kick_gain, sample_initial_swarm, KickCalibration, Calibration, CalibrationOptions, DiffusionTarget, Dynamics,
    PotentialHook, StepDiagnostics, Swarm, SwarmError, SwarmPhysics, SwarmState,
};
use crate::units::{Boundary, ConfigError, DerivedCoefficients, GridSpec, ValidatedConfig};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("scenario does not fit the grid: {0}")]
    ScenarioGridMismatch(String),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Swarm(#[from] SwarmError),
    #[error(transparent)]
    Continuum(#[from] ContinuumError),
    #[error(transparent)]
    Quantum(#[from] QuantumError),
    #[error(transparent)]
    Phase(#[from] PhaseError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl HarnessError {
    /// Bad input rather than a failed run.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            HarnessError::Config(_)
                | HarnessError::InvalidScenario(_)
                | HarnessError::ScenarioGridMismatch(_)
                | HarnessError::Field(_)
                | HarnessError::Swarm(SwarmError::Field(_))
                | HarnessError::Continuum(ContinuumError::Field(_))
                | HarnessError::Quantum(QuantumError::Field(_))
        )
    }

    /// A layer blew up or a calibration failed to settle.
    pub fn is_divergence(&self) -> bool {
        matches!(
            self,
            HarnessError::Swarm(SwarmError::CalibrationDiverged { .. })
                | HarnessError::Continuum(ContinuumError::UnstableStep { .. })
                | HarnessError::Continuum(ContinuumError::BadStep { .. })
                | HarnessError::Quantum(QuantumError::NormDrift { .. })
                | HarnessError::Quantum(QuantumError::NoConvergence { .. })
                | HarnessError::Quantum(QuantumError::LinearSolveFailed { .. })
                | HarnessError::Quantum(QuantumError::ZeroNorm)
                | HarnessError::Phase(PhaseError::CalibrationDiverged { .. })
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialState {
    FreeGaussian { sigma: f64, center: [f64; 3], k: [f64; 3] },
    /// Discrete ground state of `V = (Mω²/2) r²`.
    HarmonicGround { omega: f64 },
    /// Ground-state-shaped Gaussian shifted by `offset`.
    DisplacedGaussian { omega: f64, offset: [f64; 3] },
    PlaneWave { k: [f64; 3] },
    /// CSV `ix,iy,iz,psi_r,psi_i[,rho]`.
    Custom { file: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PotentialSpec {
    None,
    /// `a |r − center|²` about the domain center.
    Harmonic { a: f64 },
    /// `s(t)·target` with `s = sin²(πt/2τ)` for `t ≤ τ`, 1 afterwards.
    Switched { target: Box<PotentialSpec>, ramp_time: f64 },
    /// CSV `ix,iy,iz,v`.
    Custom { file: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub initial: InitialState,
    pub potential: PotentialSpec,
    pub duration: f64,
    pub frame_interval: f64,
}

pub const PRESETS: &[&str] = &[
    "free_gaussian",
    "harmonic_ground",
    "displaced_gaussian",
    "plane_wave",
    "switched_harmonic",
    "custom",
];

const SCENARIO_KEYS: &[&str] = &[
    "initial",
    "sigma",
    "center",
    "k",
    "omega",
    "offset",
    "file",
    "potential",
    "a",
    "target",
    "ramp_time",
    "potential_file",
    "duration",
    "frame_interval",
];

fn invalid(msg: impl Into<String>) -> HarnessError {
    HarnessError::InvalidScenario(msg.into())
}

fn parse_scalar(keys: &BTreeMap<String, String>, key: &str) -> Result<Option<f64>, HarnessError> {
    keys.get(key)
        .map(|v| v.parse::<f64>().map_err(|_| invalid(format!("bad number `{v}` for `{key}`"))))
        .transpose()
}

fn parse_vector(keys: &BTreeMap<String, String>, key: &str) -> Result<Option<[f64; 3]>, HarnessError> {
    let Some(raw) = keys.get(key) else { return Ok(None) };
    let mut out = [0.0; 3];
    let parts: Vec<&str> = raw.split(',').map(str::trim).collect();
    if parts.len() > 3 {
        return Err(invalid(format!("`{key}` has more than three components")));
    }
    for (slot, part) in out.iter_mut().zip(&parts) {
        *slot = part.parse().map_err(|_| invalid(format!("bad component `{part}` in `{key}`")))?;
    }
    Ok(Some(out))
}

impl Scenario {
    /// Build a named preset, with `scenario.*` config keys overriding its
    /// defaults. Defaults scale with the grid so the state spans several
    /// cells; relative file paths resolve against `base_dir`.
    pub fn from_config(
        name: &str,
        cfg: &ValidatedConfig,
        keys: &BTreeMap<String, String>,
        base_dir: &Path,
    ) -> Result<Scenario, HarnessError> {
        if let Some(k) = keys.keys().find(|k| !SCENARIO_KEYS.contains(&k.as_str())) {
            return Err(invalid(format!("unknown scenario key `{k}`")));
        }
        let (default_initial, default_potential) = match name {
            "free_gaussian" => ("free_gaussian", "none"),
            "harmonic_ground" => ("harmonic_ground", "harmonic"),
            "displaced_gaussian" => ("displaced_gaussian", "harmonic"),
            "plane_wave" => ("plane_wave", "none"),
            "switched_harmonic" => ("free_gaussian", "switched"),
            "custom" => ("custom", if keys.contains_key("potential_file") { "custom" } else { "none" }),
            other => return Err(invalid(format!("unknown scenario `{other}`"))),
        };
        let h = cfg.physical.h;
        let mass = cfg.physical.mass;
        let grid = &cfg.grid;
        let dx = grid.dx;
        let center = crate::fields::grid_center(grid);
        let initial_kind = keys.get("initial").map(String::as_str).unwrap_or(default_initial);
        let potential_kind = keys.get("potential").map(String::as_str).unwrap_or(default_potential);

        let sigma_default = 8.0 * dx;
        let omega = match (parse_scalar(keys, "omega")?, parse_scalar(keys, "a")?) {
            (Some(w), _) => w,
            (None, Some(a)) => (2.0 * a / mass).sqrt(),
            (None, None) => h / (2.0 * mass * sigma_default * sigma_default),
        };
        let a = parse_scalar(keys, "a")?.unwrap_or(0.5 * mass * omega * omega);
        let resolve = |f: &String| -> PathBuf {
            let p = PathBuf::from(f);
            if p.is_relative() {
                base_dir.join(p)
            } else {
                p
            }
        };

        let initial = match initial_kind {
            "free_gaussian" => {
                let sigma = parse_scalar(keys, "sigma")?.unwrap_or(if potential_kind == "switched" {
                    harmonic_ground_width(a, h, mass)
                } else {
                    sigma_default
                });
                let mut c = center;
                if let Some(v) = parse_vector(keys, "center")? {
                    c[..grid.dims].copy_from_slice(&v[..grid.dims]);
                }
                InitialState::FreeGaussian {
                    sigma,
                    center: c,
                    k: parse_vector(keys, "k")?.unwrap_or([0.0; 3]),
                }
            }
            "harmonic_ground" => InitialState::HarmonicGround { omega },
            "displaced_gaussian" => {
                let width = (h / (2.0 * mass * omega)).sqrt();
                InitialState::DisplacedGaussian {
                    omega,
                    offset: parse_vector(keys, "offset")?.unwrap_or([2.0 * width, 0.0, 0.0]),
                }
            }
            "plane_wave" => {
                let mut k = parse_vector(keys, "k")?.unwrap_or([0.2 / dx, 0.0, 0.0]);
                // Snap to the nearest wavenumber the periodic domain supports.
                for (axis, slot) in k.iter_mut().enumerate().take(grid.dims) {
                    let len = grid.length(axis);
                    let two_pi = 2.0 * std::f64::consts::PI;
                    *slot = (*slot * len / two_pi).round() * two_pi / len;
                }
                InitialState::PlaneWave { k }
            }
            "custom" => InitialState::Custom {
                file: resolve(keys.get("file").ok_or_else(|| invalid("custom initial state needs `file`"))?),
            },
            other => return Err(invalid(format!("unknown initial state `{other}`"))),
        };

        let harmonic = PotentialSpec::Harmonic { a };
        let potential = match potential_kind {
            "none" => PotentialSpec::None,
            "harmonic" => harmonic,
            "custom" => PotentialSpec::Custom {
                file: resolve(
                    keys.get("potential_file")
                        .ok_or_else(|| invalid("custom potential needs `potential_file`"))?,
                ),
            },
            "switched" => {
                let target = match keys.get("target").map(String::as_str).unwrap_or("harmonic") {
                    "harmonic" => harmonic,
                    "custom" => PotentialSpec::Custom {
                        file: resolve(
                            keys.get("potential_file")
                                .ok_or_else(|| invalid("custom potential needs `potential_file`"))?,
                        ),
                    },
                    other => return Err(invalid(format!("cannot switch on `{other}`"))),
                };
                PotentialSpec::Switched {
                    target: Box::new(target),
                    ramp_time: f64::NAN,
                }
            }
            other => return Err(invalid(format!("unknown potential `{other}`"))),
        };

        let period = 2.0 * std::f64::consts::PI / omega;
        let default_duration = match &initial {
            InitialState::FreeGaussian { sigma, .. } if potential == PotentialSpec::None => {
                // Long enough for the width to grow by half.
                2.5 * sigma * sigma * mass / h
            }
            InitialState::PlaneWave { k } => {
                let speed = h * k.iter().map(|v| v * v).sum::<f64>().sqrt() / mass;
                if speed > 0.0 {
                    10.0 * dx / speed
                } else {
                    1000.0 * grid.dt
                }
            }
            _ => period,
        };
        let duration = parse_scalar(keys, "duration")?.unwrap_or(default_duration);
        let frame_interval = parse_scalar(keys, "frame_interval")?.unwrap_or(duration / 10.0);
        let potential = match potential {
            PotentialSpec::Switched { target, .. } => PotentialSpec::Switched {
                target,
                ramp_time: parse_scalar(keys, "ramp_time")?.unwrap_or(0.25 * duration),
            },
            other => other,
        };
        let scenario = Scenario {
            name: name.to_string(),
            initial,
            potential,
            duration,
            frame_interval,
        };
        scenario.validate(grid)?;
        Ok(scenario)
    }

    pub fn validate(&self, grid: &GridSpec) -> Result<(), HarnessError> {
        if !(self.frame_interval > 0.0) || !(self.duration >= self.frame_interval) {
            return Err(invalid(format!(
                "need duration ≥ frame_interval > 0, got {} and {}",
                self.duration, self.frame_interval
            )));
        }
        if self.frame_interval < grid.dt {
            return Err(invalid("frame_interval is shorter than one step"));
        }
        fn check_potential(p: &PotentialSpec) -> Result<(), HarnessError> {
            match p {
                PotentialSpec::Harmonic { a } if !(*a >= 0.0) => Err(invalid("harmonic `a` must be ≥ 0")),
                PotentialSpec::Switched { target, ramp_time } => {
                    if !(*ramp_time > 0.0) {
                        return Err(invalid("switched potential needs ramp_time > 0"));
                    }
                    check_potential(target)
                }
                _ => Ok(()),
            }
        }
        check_potential(&self.potential)?;
        match &self.initial {
            InitialState::FreeGaussian { sigma, .. } if !(*sigma > 0.0) => Err(invalid("sigma must be > 0")),
            InitialState::HarmonicGround { omega } | InitialState::DisplacedGaussian { omega, .. }
                if !(*omega > 0.0) =>
            {
                Err(invalid("omega must be > 0"))
            }
            InitialState::PlaneWave { .. } if grid.boundary != Boundary::Periodic => Err(
                HarnessError::ScenarioGridMismatch("plane waves need a periodic grid".into()),
            ),
            _ => Ok(()),
        }
    }

    /// Frame count and steps per frame at the grid step.
    pub fn schedule(&self, dt: f64) -> (usize, u64) {
        let frames = (self.duration / self.frame_interval).round().max(1.0) as usize;
        let steps = (self.frame_interval / dt).round().max(1.0) as u64;
        (frames, steps)
    }

    /// Initial wave function on `grid`.
    pub fn initial_wave(&self, grid: &GridSpec, h: f64, mass: f64) -> Result<WaveField, HarnessError> {
        let center = crate::fields::grid_center(grid);
        let w = match &self.initial {
            InitialState::FreeGaussian { sigma, center, k } => WaveField::gaussian(grid, *center, *sigma, *k),
            InitialState::HarmonicGround { omega } => {
                let pot = Potential::harmonic(grid, 0.5 * mass * omega * omega, center);
                ground_state(&pot, h, mass)?.0
            }
            InitialState::DisplacedGaussian { omega, offset } => {
                let width = (h / (2.0 * mass * omega)).sqrt();
                let mut c = center;
                for a in 0..grid.dims {
                    c[a] += offset[a];
                }
                WaveField::gaussian(grid, c, width, [0.0; 3])
            }
            InitialState::PlaneWave { k } => WaveField::plane_wave(grid, *k),
            InitialState::Custom { file } => {
                let mut w = read_wave_csv(grid, file)?;
                w.normalize()?;
                w
            }
        };
        Ok(w)
    }

    /// Potential at full strength.
    pub fn full_potential(&self, grid: &GridSpec) -> Result<Potential, HarnessError> {
        potential_of(&self.potential, grid)
    }

    /// Ramp factor at time `t`.
    pub fn ramp(&self, t: f64) -> f64 {
        match &self.potential {
            PotentialSpec::Switched { ramp_time, .. } => switch_factor(t, *ramp_time),
            _ => 1.0,
        }
    }

    pub fn is_switched(&self) -> bool {
        matches!(self.potential, PotentialSpec::Switched { .. })
    }

    /// Width the swarm's spreading should match: the rms per-axis spread of
    /// the initial density, or the grain for states without a finite width.
    pub fn diffusion_target(&self, wave: &WaveField) -> DiffusionTarget {
        match self.initial {
            InitialState::PlaneWave { .. } => DiffusionTarget::Grain,
            _ => {
                let var = wave.density().moments().1;
                let dims = wave.grid.dims;
                let mean_var = var[..dims].iter().sum::<f64>() / dims as f64;
                DiffusionTarget::StateWidth(mean_var.sqrt())
            }
        }
    }
}

/// `sin²(πt/2τ)` for `t ≤ τ`, then 1.
pub fn switch_factor(t: f64, ramp_time: f64) -> f64 {
    if t >= ramp_time {
        1.0
    } else {
        (std::f64::consts::PI * t.max(0.0) / (2.0 * ramp_time)).sin().powi(2)
    }
}

fn potential_of(spec: &PotentialSpec, grid: &GridSpec) -> Result<Potential, HarnessError> {
    Ok(match spec {
        PotentialSpec::None => Potential::zero(grid),
        PotentialSpec::Harmonic { a } => Potential::harmonic(grid, *a, crate::fields::grid_center(grid)),
        PotentialSpec::Switched { target, .. } => potential_of(target, grid)?,
        PotentialSpec::Custom { file } => read_potential_csv(grid, file)?,
    })
}

fn read_cells<const N: usize>(grid: &GridSpec, file: &Path, columns: [&str; N]) -> Result<Vec<[f64; N]>, HarnessError> {
    let mut reader = csv::Reader::from_path(file)?;
    let headers = reader.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| HarnessError::ScenarioGridMismatch(format!("{} lacks column `{name}`", file.display())))
    };
    let idx = [find("ix")?, find("iy")?, find("iz")?];
    let mut cols = [0usize; N];
    for (slot, name) in cols.iter_mut().zip(columns) {
        *slot = find(name)?;
    }
    let mut out = vec![[0.0; N]; grid.n_cells()];
    let mut seen = vec![false; grid.n_cells()];
    for record in reader.records() {
        let record = record?;
        let mut c = [0usize; 3];
        for (a, slot) in c.iter_mut().enumerate() {
            *slot = record[idx[a]].trim().parse().map_err(|_| {
                HarnessError::ScenarioGridMismatch(format!("bad index `{}` in {}", &record[idx[a]], file.display()))
            })?;
        }
        if (0..3).any(|a| c[a] >= grid.extent[a].max(1)) {
            return Err(HarnessError::ScenarioGridMismatch(format!(
                "cell {c:?} in {} lies outside the grid",
                file.display()
            )));
        }
        let cell = grid.linear_index(c);
        for (v, &col) in out[cell].iter_mut().zip(&cols) {
            *v = record[col].trim().parse().map_err(|_| {
                HarnessError::ScenarioGridMismatch(format!("bad value `{}` in {}", &record[col], file.display()))
            })?;
        }
        seen[cell] = true;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(HarnessError::ScenarioGridMismatch(format!(
            "{} has no row for cell {:?}",
            file.display(),
            grid.coords(missing)
        )));
    }
    Ok(out)
}

pub fn read_wave_csv(grid: &GridSpec, file: &Path) -> Result<WaveField, HarnessError> {
    let rows = read_cells(grid, file, ["psi_r", "psi_i"])?;
    let values: Vec<Complex64> = rows.iter().map(|r| Complex64::new(r[0], r[1])).collect();
    Ok(WaveField::from_complex(grid, &values))
}

pub fn read_potential_csv(grid: &GridSpec, file: &Path) -> Result<Potential, HarnessError> {
    let rows = read_cells(grid, file, ["v"])?;
    Ok(Potential::new(grid, rows.iter().map(|r| r[0]).collect())?)
}

/// Ramps a fixed target potential on the swarm's clock.
pub struct SwitchedHook {
    target: Vec<f64>,
    ramp_time: f64,
}

impl SwitchedHook {
    pub fn new(target: &Potential, ramp_time: f64) -> Self {
        SwitchedHook {
            target: target.values().to_vec(),
            ramp_time,
        }
    }

    pub fn at(&self, grid: &GridSpec, t: f64) -> Potential {
        let s = switch_factor(t, self.ramp_time);
        Potential::new(grid, self.target.iter().map(|v| s * v).collect()).expect("scaled potential is finite")
    }
}

impl PotentialHook for SwitchedHook {
    fn refresh(&mut self, state: &SwarmState, potential: &mut Potential) {
        let s = switch_factor(state.time, self.ramp_time);
        potential
            .set_values(self.target.iter().map(|v| s * v).collect())
            .expect("scaled potential is finite");
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layer {
    Swarm,
    Continuum,
    Reference,
}

impl FromStr for Layer {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "swarm" => Ok(Layer::Swarm),
            "continuum" => Ok(Layer::Continuum),
            "reference" => Ok(Layer::Reference),
            other => Err(format!("unknown layer `{other}`")),
        }
    }
}

/// Expected L1 distance between a multinomial histogram and its parent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatisticalFloor {
    /// `Σ √(p(1−p)/n) · √(2/π)`.
    pub closed_form: f64,
    /// Mean L1 over resampled histograms.
    pub bootstrap: f64,
}

/// Floor for `n_samples` spread evenly over `n_occupied_cells`.
pub fn statistical_floor(n_samples: u64, n_occupied_cells: usize, reps: usize, seed: u64) -> StatisticalFloor {
    let c = n_occupied_cells.max(1);
    distribution_floor(n_samples, &vec![1.0 / c as f64; c], reps, seed)
}

/// Floor for `n_samples` drawn from `probs`.
pub fn distribution_floor(n_samples: u64, probs: &[f64], reps: usize, seed: u64) -> StatisticalFloor {
    let n = n_samples.max(1) as f64;
    let closed_form = probs.iter().map(|p| (p * (1.0 - p) / n).max(0.0).sqrt()).sum::<f64>()
        * (2.0 / std::f64::consts::PI).sqrt();
    let key = StreamKey::new(seed);
    let mut total = 0.0;
    for rep in 0..reps {
        let counts = multinomial(n_samples, probs, &mut key.stream(rep as u64, Phase::Bootstrap, 0));
        total += counts.iter().zip(probs).map(|(k, p)| (*k as f64 / n - p).abs()).sum::<f64>();
    }
    StatisticalFloor {
        closed_form,
        bootstrap: if reps > 0 { total / reps as f64 } else { f64::NAN },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub layers: Vec<Layer>,
    pub seed: u64,
    /// Worker threads for the swarm; `None` uses the global pool.
    pub workers: Option<usize>,
    /// Overrides the scenario's diffusion target.
    pub target: Option<DiffusionTarget>,
    /// Skip calibration and use this `d`.
    pub fixed_d: Option<f64>,
    /// Kick gain; `None` calibrates it in a trap when the potential is not
    /// flat and `calibrate_kick` is set, otherwise keeps the engine default.
    pub kick_gain: Option<f64>,
    pub calibrate_kick: bool,
    pub calibration: CalibrationOptions,
    /// Samples in the calibration run; `None` matches the peak occupancy.
    pub calibration_samples: Option<u64>,
    pub bootstrap_reps: usize,
    /// Reconstruct the swarm wave function per frame (needs the reference).
    pub reconstruct: bool,
    /// Fit `k` numerically instead of the closed form.
    pub calibrate_k: bool,
    pub out: Option<PathBuf>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            layers: vec![Layer::Swarm, Layer::Reference],
            seed: 0,
            workers: None,
            target: None,
            fixed_d: None,
            kick_gain: None,
            calibrate_kick: true,
            calibration: CalibrationOptions::default(),
            calibration_samples: None,
            bootstrap_reps: 20,
            reconstruct: true,
            calibrate_k: true,
            out: None,
        }
    }
}

/// One density comparison with its noise floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameComparison {
    pub time: f64,
    pub l1: f64,
    pub l2: f64,
    pub floor: StatisticalFloor,
    /// `l1 / floor.closed_form`; `None` when the floor is zero.
    pub ratio: Option<f64>,
    pub within: bool,
}

impl FrameComparison {
    fn new(time: f64, a: &DensityField, b: &DensityField, floor: StatisticalFloor) -> Result<Self, FieldError> {
        let a = a.normalized_copy();
        let b = b.normalized_copy();
        let l1 = l1_distance(&a, &b)?;
        let l2 = l2_distance(&a, &b)?;
        let ratio = (floor.closed_form > 0.0).then(|| l1 / floor.closed_form);
        Ok(FrameComparison {
            time,
            l1,
            l2,
            floor,
            ratio,
            within: l1 <= 3.0 * floor.closed_form,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Conservation {
    pub swarm_count_error: i64,
    /// Change of the net moving count per axis; zero under a flat potential.
    pub swarm_impulse_change: [i64; 3],
    pub reference_norm_drift: f64,
    /// Largest `|ρ(t) − ρ(0)|` of the reference over the frames.
    pub reference_linf_drift: f64,
    pub continuum_mass_drift: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub wall_seconds: f64,
    pub calibration_seconds: f64,
    pub swarm_seconds: f64,
    pub sample_steps: u64,
    /// Sample-steps per second of swarm stepping.
    pub throughput: f64,
    pub workers: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Traces {
    pub swarm: Vec<ObservableRecord>,
    pub reference: Vec<ObservableRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: Scenario,
    pub layers: Vec<Layer>,
    pub seed: u64,
    pub grid: GridSpec,
    pub n_samples: u64,
    pub coeffs: DerivedCoefficients,
    pub calibration: Option<Calibration>,
    pub kick: Option<KickCalibration>,
    pub kick_gain: Option<f64>,
    pub continuum_coefficients: FluxCoefficients,
    pub k_cal: f64,
    pub frame_times: Vec<f64>,
    pub swarm_vs_reference: Vec<FrameComparison>,
    /// Swarm against the exact initial density, frame by frame.
    pub swarm_drift: Vec<FrameComparison>,
    /// Deterministic layers: the floor is zero.
    pub continuum_vs_reference: Vec<FrameComparison>,
    pub swarm_vs_continuum: Vec<FrameComparison>,
    /// Fidelity of the wave rebuilt from swarm `(ρ, p̄)` against the reference.
    pub fidelity: Vec<f64>,
    pub clipped_links: u64,
    pub traces: Traces,
    pub ehrenfest: Option<EhrenfestReport>,
    pub conservation: Conservation,
    pub diagnostics: StepDiagnostics,
    /// Every swarm/reference frame within 3× its floor.
    pub agreement: Option<bool>,
    pub warnings: Vec<String>,
    /// Kept out of `report.json` so runs stay byte-comparable.
    #[serde(skip)]
    pub timing: Timing,
}

/// Compact view printed by `report`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario: String,
    pub layers: Vec<Layer>,
    pub seed: u64,
    pub frames: usize,
    pub d: Option<f64>,
    pub kick_gain: Option<f64>,
    pub k_cal: f64,
    pub max_l1: Option<f64>,
    pub worst_floor_ratio: Option<f64>,
    pub min_fidelity: Option<f64>,
    pub agreement: Option<bool>,
    pub conservation: Conservation,
    pub warnings: Vec<String>,
}

impl RunReport {
    pub fn summary(&self) -> RunSummary {
        let cmp = &self.swarm_vs_reference;
        RunSummary {
            scenario: self.scenario.name.clone(),
            layers: self.layers.clone(),
            seed: self.seed,
            frames: self.frame_times.len(),
            d: self.calibration.as_ref().map(|c| c.d),
            kick_gain: self.kick_gain,
            k_cal: self.k_cal,
            max_l1: cmp.iter().map(|c| c.l1).reduce(f64::max),
            worst_floor_ratio: cmp.iter().filter_map(|c| c.ratio).reduce(f64::max),
            min_fidelity: self.fidelity.iter().cloned().reduce(f64::min),
            agreement: self.agreement,
            conservation: self.conservation.clone(),
            warnings: self.warnings.clone(),
        }
    }
}

/// Per-frame metrics line.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct MetricsLine {
    frame: usize,
    time: f64,
    swarm: Option<ObservableRecord>,
    reference: Option<ObservableRecord>,
    continuum_mass: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ManifestFrame {
    pub index: usize,
    pub time: f64,
    pub files: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub grid: GridSpec,
    pub frames: Vec<ManifestFrame>,
}

/// Samples for the calibration run so its peak cell holds as many samples
/// as the real run's.
fn calibration_samples(n: u64, wave: &WaveField) -> u64 {
    let peak = wave.density().probabilities().into_iter().fold(0.0, f64::max);
    // Peak probability of the 1-D calibration packet (σ = 6 cells) is 1/(6√(2π)).
    let scale = 6.0 * (2.0 * std::f64::consts::PI).sqrt();
    ((n as f64 * peak * scale) as u64).clamp(10_000, 200_000)
}

/// Run `scenario` on `cfg`, stepping the requested layers to shared frame times.
pub fn run_scenario(scenario: &Scenario, cfg: &ValidatedConfig, opts: &RunOptions) -> Result<RunReport, HarnessError> {
    let wall = Instant::now();
    let grid = cfg.grid.clone();
    scenario.validate(&grid)?;
    let h = cfg.physical.h;
    let mass = cfg.physical.mass;
    let n = cfg.physical.n_samples;
    let want = |l: Layer| opts.layers.contains(&l);
    let mut layers = opts.layers.clone();
    layers.sort();
    layers.dedup();
    let mut warnings: Vec<String> = cfg.warnings.iter().map(|w| format!("{w:?}")).collect();

    let psi0 = scenario.initial_wave(&grid, h, mass)?;
    let full = scenario.full_potential(&grid)?;
    let potential_at = |t: f64| -> Potential {
        if scenario.is_switched() {
            full.scaled(scenario.ramp(t))
        } else {
            full.clone()
        }
    };
    let (n_frames, steps_per_frame) = scenario.schedule(grid.dt);
    let dt = grid.dt;
    let rho0 = psi0.density();
    let origin = crate::fields::grid_center(&grid);

    let target = opts.target.unwrap_or_else(|| scenario.diffusion_target(&psi0));
    let target_intensity = target.intensity(cfg);
    let continuum_coefficients = FluxCoefficients::new(target_intensity, 1.0 / mass);

    let mut timing = Timing::default();
    let cal_clock = Instant::now();
    let calibration = if want(Layer::Swarm) {
        let c = match opts.fixed_d {
            Some(d) => Calibration {
                d,
                target_intensity,
                moving_fraction: d / (1.0 + d),
                eta: 1.0,
                residual: 0.0,
                clipped: false,
                warnings: Vec::new(),
            },
            None => {
                let mut copts = opts.calibration;
                copts.samples = opts.calibration_samples.unwrap_or_else(|| calibration_samples(n, &psi0));
                calibrate_diffusion(cfg, target, &copts)?
            }
        };
        warnings.extend(c.warnings.iter().map(|w| format!("{w:?}")));
        Some(c)
    } else {
        None
    };
    let kick = match (&calibration, opts.kick_gain) {
        (Some(cal), None) if opts.calibrate_kick && !full.is_flat() => {
            let mut copts = opts.calibration;
            copts.samples = opts.calibration_samples.unwrap_or_else(|| calibration_samples(n, &psi0));
            Some(calibrate_kick_gain(cfg, cal.d, target_intensity, &copts)?)
        }
        _ => None,
    };
    let kick_gain = calibration
        .as_ref()
        .map(|_| opts.kick_gain.or(kick.as_ref().map(|k| k.gain)).unwrap_or(1.0));
    let k_cal = if opts.calibrate_k {
        calibrate_k(grid.dx, 0.1 / grid.dx, h, mass)?.k_cal
    } else {
        analytic_k(h, grid.dx)
    };
    timing.calibration_seconds = cal_clock.elapsed().as_secs_f64();

    // Swarm layer.
    let mut swarm = match &calibration {
        Some(cal) => {
            let physics = SwarmPhysics::of(cfg);
            let p0 = psi0.impulse_density(h, mass);
            let velocity = velocity_of(&rho0, &p0, mass);
            let state = sample_initial_swarm(&rho0, Some(&velocity), n, physics, opts.seed)?;
            let mut dynamics = Dynamics::new(cal.d);
            if let Some(g) = kick_gain {
                dynamics.kick_gain = g;
            }
            let s = Swarm::new(state, dynamics);
            let s = match opts.workers {
                Some(w) => s.with_workers(w)?,
                None => s,
            };
            timing.workers = opts.workers.unwrap_or_else(rayon::current_num_threads);
            Some(s)
        }
        None => None,
    };
    let mut swarm_potential = potential_at(0.0);
    let mut hook: Box<dyn PotentialHook> = match &scenario.potential {
        PotentialSpec::Switched { ramp_time, .. } => Box::new(SwitchedHook::new(&full, *ramp_time)),
        _ => Box::new(crate::swarm::StaticPotential),
    };
    let initial_net = swarm.as_ref().map(|s| s.state.net_speed_counts()).unwrap_or([0; 3]);

    // Reference layer.
    let mut wave = want(Layer::Reference).then(|| psi0.clone());
    let mut solver = CrankNicolson::new(&potential_at(0.5 * dt), h, mass, dt);
    let norm0 = psi0.norm();

    // Continuum layer.
    let mut cont = want(Layer::Continuum).then(|| {
        let p = psi0.impulse_density(h, mass);
        let mut flux = ImpulseField::zeros(&grid);
        for a in 0..grid.dims {
            flux.p[a] = p.p[a].iter().map(|v| v / mass).collect();
        }
        (rho0.clone(), flux)
    });
    let mass0 = rho0.mass();

    let writer = match &opts.out {
        Some(dir) => Some(FrameWriter::new(dir, &grid)?),
        None => None,
    };
    let mut writer = writer;

    let mut report = RunReport {
        scenario: scenario.clone(),
        layers: layers.clone(),
        seed: opts.seed,
        grid: grid.clone(),
        n_samples: n,
        coeffs: cfg.coeffs,
        calibration: calibration.clone(),
        kick,
        kick_gain,
        continuum_coefficients,
        k_cal,
        frame_times: Vec::new(),
        swarm_vs_reference: Vec::new(),
        swarm_drift: Vec::new(),
        continuum_vs_reference: Vec::new(),
        swarm_vs_continuum: Vec::new(),
        fidelity: Vec::new(),
        clipped_links: 0,
        traces: Traces::default(),
        ehrenfest: None,
        conservation: Conservation::default(),
        diagnostics: StepDiagnostics::default(),
        agreement: None,
        warnings: Vec::new(),
        timing: Timing::default(),
    };
    let floor_seed = opts.seed ^ 0xf100_7000;
    let zero_floor = StatisticalFloor {
        closed_form: 0.0,
        bootstrap: 0.0,
    };
    let drift_floor = distribution_floor(n, &rho0.probabilities(), opts.bootstrap_reps, floor_seed);

    for frame in 0..=n_frames {
        if frame > 0 {
            let t_start = (frame as u64 - 1) * steps_per_frame;
            if let Some(s) = swarm.as_mut() {
                let clock = Instant::now();
                for _ in 0..steps_per_frame {
                    s.full_step(&mut swarm_potential, hook.as_mut())?;
                }
                timing.swarm_seconds += clock.elapsed().as_secs_f64();
                timing.sample_steps += steps_per_frame * s.state.len() as u64;
            }
            if let Some(w) = wave.as_mut() {
                for step in 0..steps_per_frame {
                    if scenario.is_switched() {
                        let t_mid = ((t_start + step) as f64 + 0.5) * dt;
                        solver.set_potential(&potential_at(t_mid));
                    }
                    solver.step(w)?;
                }
            }
            if let Some((rho, p)) = cont.as_mut() {
                if scenario.is_switched() {
                    for step in 0..steps_per_frame {
                        let t_mid = ((t_start + step) as f64 + 0.5) * dt;
                        let out = integrate_continuum(rho, p, &potential_at(t_mid), &continuum_coefficients, dt, dt, None)?;
                        let last = out.into_iter().last().expect("integration returns frames");
                        *rho = last.rho;
                        *p = last.p;
                    }
                } else {
                    let span = steps_per_frame as f64 * dt;
                    let out = integrate_continuum(rho, p, &full, &continuum_coefficients, span, span, None)?;
                    let last = out.into_iter().last().expect("integration returns frames");
                    *rho = last.rho;
                    *p = last.p;
                }
            }
        }
        let time = frame as f64 * steps_per_frame as f64 * dt;
        report.frame_times.push(time);
        let pot_now = potential_at(time);
        let mut line = MetricsLine {
            frame,
            time,
            swarm: None,
            reference: None,
            continuum_mass: None,
        };

        let swarm_rho = swarm.as_ref().map(|s| s.state.normalized_density());
        if let (Some(s), Some(srho)) = (swarm.as_ref(), swarm_rho.as_ref()) {
            let rec = ObservableRecord::from_swarm(&s.state, &pot_now, origin);
            report.traces.swarm.push(rec);
            line.swarm = Some(rec);
            report.swarm_drift.push(FrameComparison::new(time, srho, &rho0, drift_floor)?);
        }
        if let Some(w) = wave.as_ref() {
            let rec = ObservableRecord::from_wave(w, &pot_now, h, mass, time, origin)?;
            report.traces.reference.push(rec);
            line.reference = Some(rec);
            let rho = w.density();
            report.conservation.reference_norm_drift = report
                .conservation
                .reference_norm_drift
                .max(((w.norm() - norm0) / norm0).abs());
            let linf = rho.rho.iter().zip(&rho0.rho).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            report.conservation.reference_linf_drift = report.conservation.reference_linf_drift.max(linf);
            if let (Some(s), Some(srho)) = (swarm.as_ref(), swarm_rho.as_ref()) {
                let floor = distribution_floor(n, &rho.probabilities(), opts.bootstrap_reps, floor_seed + frame as u64);
                report.swarm_vs_reference.push(FrameComparison::new(time, srho, &rho, floor)?);
                if opts.reconstruct {
                    let p = s.state.impulse_field();
                    let floor_rho = 1e-4 * srho.peak();
                    let peak = (0..srho.rho.len())
                        .fold(0, |b, i| if srho.rho[i] > srho.rho[b] { i } else { b });
                    let field = reconstruct_phase(srho, &p, peak, k_cal, floor_rho)?;
                    report.clipped_links += field.clipped_links;
                    let rebuilt = reconstruct_wave(srho, &field);
                    report.fidelity.push(rebuilt.fidelity(w)?);
                }
            }
            if let Some((crho, _)) = cont.as_ref() {
                report.continuum_vs_reference.push(FrameComparison::new(time, crho, &rho, zero_floor)?);
            }
        }
        if let Some((crho, _)) = cont.as_ref() {
            let drift = ((crho.mass() - mass0) / mass0).abs();
            report.conservation.continuum_mass_drift = report.conservation.continuum_mass_drift.max(drift);
            line.continuum_mass = Some(crho.mass());
            if let Some(srho) = swarm_rho.as_ref() {
                let floor = distribution_floor(n, &crho.probabilities(), opts.bootstrap_reps, floor_seed + frame as u64);
                report.swarm_vs_continuum.push(FrameComparison::new(time, srho, crho, floor)?);
            }
        }
        if let Some(wr) = writer.as_mut() {
            wr.write_frame(frame, time, swarm.as_ref().map(|s| &s.state), wave.as_ref(), cont.as_ref(), mass)?;
            wr.write_metrics(&line)?;
        }
    }

    if let Some(s) = swarm.as_ref() {
        report.diagnostics = s.diagnostics;
        report.conservation.swarm_count_error = s.state.len() as i64 - n as i64;
        let net = s.state.net_speed_counts();
        for a in 0..3 {
            report.conservation.swarm_impulse_change[a] = net[a] - initial_net[a];
        }
        if s.diagnostics.relativistic() {
            warnings.push(format!("{} kicks could not be granted", s.diagnostics.missing_kicks));
        }
    }
    if !report.traces.swarm.is_empty() && !report.traces.reference.is_empty() {
        report.ehrenfest = Some(ehrenfest_check(&report.traces.swarm, &report.traces.reference, grid.dims, 3.0, mass));
    }
    if !report.swarm_vs_reference.is_empty() {
        report.agreement = Some(report.swarm_vs_reference.iter().all(|c| c.within));
    }
    if report.clipped_links > 0 {
        warnings.push(format!("{} phase links clipped", report.clipped_links));
    }
    report.warnings = warnings;
    timing.wall_seconds = wall.elapsed().as_secs_f64();
    timing.throughput = if timing.swarm_seconds > 0.0 {
        timing.sample_steps as f64 / timing.swarm_seconds
    } else {
        0.0
    };
    report.timing = timing;
    if let Some(wr) = writer {
        wr.finish(&report)?;
    }
    Ok(report)
}

/// `v = p̄ / (M ρ)`, zero where the density vanishes.
fn velocity_of(rho: &DensityField, p: &ImpulseField, mass: f64) -> VelocityField {
    let grid = &rho.grid;
    let mut v = VelocityField::from_fn(grid, |_| [0.0; 3]);
    for a in 0..grid.dims {
        for i in 0..grid.n_cells() {
            if rho.rho[i] > 0.0 {
                v.v[a][i] = p.p[a][i] / (mass * rho.rho[i]);
            }
        }
    }
    v
}

struct FrameWriter {
    dir: PathBuf,
    manifest: Manifest,
    metrics: BufWriter<fs::File>,
}

impl FrameWriter {
    fn new(dir: &Path, grid: &GridSpec) -> Result<Self, HarnessError> {
        fs::create_dir_all(dir.join("frames"))?;
        let metrics = BufWriter::new(fs::File::create(dir.join("metrics.jsonl"))?);
        Ok(FrameWriter {
            dir: dir.to_path_buf(),
            manifest: Manifest {
                grid: grid.clone(),
                frames: Vec::new(),
            },
            metrics,
        })
    }

    fn write_frame(
        &mut self,
        index: usize,
        time: f64,
        swarm: Option<&SwarmState>,
        wave: Option<&WaveField>,
        cont: Option<&(DensityField, ImpulseField)>,
        mass: f64,
    ) -> Result<(), HarnessError> {
        let mut entry = ManifestFrame {
            index,
            time,
            files: BTreeMap::new(),
        };
        if let Some(s) = swarm {
            let name = format!("frames/swarm_{index:04}.csv");
            let out = BufWriter::new(fs::File::create(self.dir.join(&name))?);
            write_field_csv(&s.normalized_density(), &s.impulse_field(), out)?;
            entry.files.insert("swarm".into(), name);
        }
        if let Some(w) = wave {
            let name = format!("frames/reference_{index:04}.csv");
            write_wave_csv(w, BufWriter::new(fs::File::create(self.dir.join(&name))?))?;
            entry.files.insert("reference".into(), name);
        }
        if let Some((rho, flux)) = cont {
            let name = format!("frames/continuum_{index:04}.csv");
            let mut p = flux.clone();
            for comp in p.p.iter_mut() {
                comp.iter_mut().for_each(|v| *v *= mass);
            }
            write_field_csv(rho, &p, BufWriter::new(fs::File::create(self.dir.join(&name))?))?;
            entry.files.insert("continuum".into(), name);
        }
        self.manifest.frames.push(entry);
        Ok(())
    }

    fn write_metrics(&mut self, line: &MetricsLine) -> Result<(), HarnessError> {
        use std::io::Write;
        serde_json::to_writer(&mut self.metrics, line)?;
        self.metrics.write_all(b"\n")?;
        Ok(())
    }

    fn finish(mut self, report: &RunReport) -> Result<(), HarnessError> {
        use std::io::Write;
        self.metrics.flush()?;
        fs::write(self.dir.join("manifest.json"), serde_json::to_string_pretty(&self.manifest)?)?;
        fs::write(self.dir.join("report.json"), serde_json::to_string_pretty(report)?)?;
        fs::write(self.dir.join("timing.json"), serde_json::to_string_pretty(&report.timing)?)?;
        Ok(())
    }
}

/// Load `report.json` and `timing.json` from a run directory.
pub fn load_report(dir: &Path) -> Result<RunReport, HarnessError> {
    let mut report: RunReport = serde_json::from_str(&fs::read_to_string(dir.join("report.json"))?)?;
    if let Ok(text) = fs::read_to_string(dir.join("timing.json")) {
        report.timing = serde_json::from_str(&text)?;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub dx: f64,
    pub d: Option<f64>,
    pub moving_fraction: Option<f64>,
    pub k_cal: f64,
    pub coeffs: DerivedCoefficients,
    pub max_l1: Option<f64>,
    pub max_floor: Option<f64>,
    pub worst_ratio: Option<f64>,
    pub min_fidelity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub scenario: Scenario,
    pub entries: Vec<SweepEntry>,
    /// Moving fraction grows as the grain shrinks.
    pub moving_fraction_increasing: Option<bool>,
    /// Density error shrinks as the grain shrinks.
    pub error_decreasing: Option<bool>,
    /// Between consecutive grains: measured `[I, κ, γ, α]` ratios over the
    /// predicted `[r³, r, r², r²]` with `r = dx_prev / dx`.
    pub coefficient_ratio_errors: Vec<[f64; 4]>,
}

/// Rerun `scenario` at each grain with recalibrated `d` and `k`. The
/// scenario keeps its physical lengths; `base` keeps its physics and domain.
pub fn grain_sweep(
    scenario: &Scenario,
    grains: &[f64],
    base: &ValidatedConfig,
    opts: &RunOptions,
) -> Result<SweepReport, HarnessError> {
    if grains.len() < 2 {
        return Err(invalid("a sweep needs at least two grains"));
    }
    let mut entries: Vec<SweepEntry> = Vec::new();
    for &dx in grains {
        let cfg = base.with_grain(dx)?;
        let mut o = opts.clone();
        o.out = opts.out.as_ref().map(|d| d.join(format!("dx_{dx}")));
        let rep = run_scenario(scenario, &cfg, &o)?;
        let s = rep.summary();
        entries.push(SweepEntry {
            dx,
            d: s.d,
            moving_fraction: rep.calibration.as_ref().map(|c| c.moving_fraction),
            k_cal: rep.k_cal,
            coeffs: cfg.coeffs,
            max_l1: s.max_l1,
            max_floor: rep.swarm_vs_reference.iter().map(|c| c.floor.closed_form).reduce(f64::max),
            worst_ratio: s.worst_floor_ratio,
            min_fidelity: s.min_fidelity,
        });
    }
    let mut order: Vec<&SweepEntry> = entries.iter().collect();
    order.sort_by(|a, b| b.dx.total_cmp(&a.dx));
    let trend = |f: &dyn Fn(&SweepEntry) -> Option<f64>, increasing: bool| -> Option<bool> {
        let vals: Option<Vec<f64>> = order.iter().map(|e| f(e)).collect();
        vals.map(|v| v.windows(2).all(|w| if increasing { w[1] > w[0] } else { w[1] < w[0] }))
    };
    let moving_fraction_increasing = trend(&|e| e.moving_fraction, true);
    let error_decreasing = trend(&|e| e.max_l1, false);
    let coefficient_ratio_errors = entries
        .windows(2)
        .map(|w| {
            let r = w[0].dx / w[1].dx;
            let (a, b) = (&w[0].coeffs, &w[1].coeffs);
            [
                b.intensity / a.intensity / r.powi(3) - 1.0,
                b.kappa / a.kappa / r - 1.0,
                b.gamma / a.gamma / (r * r) - 1.0,
                b.alpha / a.alpha / (r * r) - 1.0,
            ]
        })
        .collect();
    let report = SweepReport {
        scenario: scenario.clone(),
        entries,
        moving_fraction_increasing,
        error_decreasing,
        coefficient_ratio_errors,
    };
    if let Some(dir) = &opts.out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("sweep.json"), serde_json::to_string_pretty(&report)?)?;
    }
    Ok(report)
}

/// Reject potentials or waves defined on another grid.
pub fn check_grid(expected: &GridSpec, got: &GridSpec) -> Result<(), HarnessError> {
    same_grid(expected, got).map_err(|_| HarnessError::ScenarioGridMismatch("grid metadata differ".into()))
}
