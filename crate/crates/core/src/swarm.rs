//! The sample swarm and its four-step update.
//!
//! Samples live in a structure-of-arrays store that is kept sorted by cell,
//! so each cell owns one contiguous slice of speed tags. The per-cell steps
//! (rebalancing and potential kicks) run in parallel over those slices with
//! keyed random streams, which makes the trajectory independent of the
//! worker count.

use std::io::{Read, Write};
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fields::{DensityField, FieldError, ImpulseField, Potential, VelocityField};
use crate::rng::{multinomial, stochastic_round, Phase, StreamKey};
use crate::units::{Boundary, ConfigWarning, GridSpec, ValidatedConfig};

#[derive(Debug, Error)]
pub enum SwarmError {
    #[error("sample {id} at {pos:?} is outside the domain")]
    PositionOutOfDomain { id: u64, pos: [f64; 3] },
    #[error("reaction pair does not have opposite speeds: {a:?} and {b:?}")]
    PairNotOpposite { a: SpeedState, b: SpeedState },
    #[error("reaction pair is {distance} apart, limit is {limit}")]
    PairTooFar { distance: f64, limit: f64 },
    #[error("speed tag {0} is not valid for this grid")]
    BadSpeed(u8),
    #[error("negative density {value} in cell {cell}")]
    NegativeDensity { cell: usize, value: f64 },
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("diffusion calibration diverged: residual {residual:.3}")]
    CalibrationDiverged { residual: f64 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("worker pool: {0}")]
    Pool(String),
}

/// Zero, or `±c` along one axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[repr(u8)]
pub enum SpeedState {
    #[default]
    Zero = 0,
    PlusX = 1,
    MinusX = 2,
    PlusY = 3,
    MinusY = 4,
    PlusZ = 5,
    MinusZ = 6,
}

impl SpeedState {
    pub const ALL: [SpeedState; 7] = [
        SpeedState::Zero,
        SpeedState::PlusX,
        SpeedState::MinusX,
        SpeedState::PlusY,
        SpeedState::MinusY,
        SpeedState::PlusZ,
        SpeedState::MinusZ,
    ];

    #[inline]
    pub fn along(axis: usize, positive: bool) -> SpeedState {
        SpeedState::ALL[1 + 2 * axis + (!positive) as usize]
    }

    #[inline]
    pub fn is_moving(self) -> bool {
        self != SpeedState::Zero
    }

    #[inline]
    pub fn axis(self) -> Option<usize> {
        match self {
            SpeedState::Zero => None,
            s => Some((s as usize - 1) / 2),
        }
    }

    /// +1, −1 or 0.
    #[inline]
    pub fn sign(self) -> i64 {
        match self {
            SpeedState::Zero => 0,
            s if (s as u8) % 2 == 1 => 1,
            _ => -1,
        }
    }

    #[inline]
    pub fn opposite(self) -> SpeedState {
        match self.axis() {
            None => SpeedState::Zero,
            Some(a) => SpeedState::along(a, self.sign() < 0),
        }
    }

    pub fn velocity(self, c: f64) -> [f64; 3] {
        let mut v = [0.0; 3];
        if let Some(a) = self.axis() {
            v[a] = self.sign() as f64 * c;
        }
        v
    }

    pub fn tag(self) -> u8 {
        self as u8
    }

    pub fn from_tag(tag: u8) -> Option<SpeedState> {
        SpeedState::ALL.get(tag as usize).copied()
    }

    /// Whether this state is allowed on a grid of `dims` axes.
    pub fn valid_for(self, dims: usize) -> bool {
        self.axis().is_none_or(|a| a < dims)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub pos: [f64; 3],
    pub speed: SpeedState,
    pub id: u64,
}

/// Occupation counts of one cell.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellStats {
    pub n: u32,
    pub n_zero: u32,
    pub n_plus: [u32; 3],
    pub n_minus: [u32; 3],
}

impl CellStats {
    pub fn of(speeds: &[SpeedState]) -> CellStats {
        let mut counts = [0u32; 7];
        for s in speeds {
            counts[*s as usize] += 1;
        }
        CellStats {
            n: speeds.len() as u32,
            n_zero: counts[0],
            n_plus: [counts[1], counts[3], counts[5]],
            n_minus: [counts[2], counts[4], counts[6]],
        }
    }

    /// Opposite-speed pairs per axis.
    pub fn pairs(&self) -> u32 {
        (0..3).map(|a| self.n_plus[a].min(self.n_minus[a])).sum()
    }

    /// Size of the largest zero-sum subset of moving samples.
    pub fn s(&self) -> u32 {
        2 * self.pairs()
    }

    /// `n_plus − n_minus` along `axis`.
    pub fn net(&self, axis: usize) -> i64 {
        self.n_plus[axis] as i64 - self.n_minus[axis] as i64
    }

    pub fn moving(&self) -> u32 {
        self.n - self.n_zero
    }
}

/// Physical constants the engine needs, in internal units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwarmPhysics {
    pub c: f64,
    /// Mass of one sample, `M/n`.
    pub sample_mass: f64,
    /// Particle mass `M`.
    pub mass: f64,
}

impl SwarmPhysics {
    pub fn of(cfg: &ValidatedConfig) -> Self {
        SwarmPhysics {
            c: cfg.physical.c,
            sample_mass: cfg.physical.sample_mass(),
            mass: cfg.physical.mass,
        }
    }
}

/// Tunable parameters of the update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dynamics {
    /// Target ratio `s/n_zero` of paired movers to stationary samples.
    pub d: f64,
    /// Multiplier on the physical kick rate; 1 gives `dP/dt = −N grad V / M`.
    pub kick_gain: f64,
}

impl Dynamics {
    pub fn new(d: f64) -> Self {
        Dynamics { d, kick_gain: 1.0 }
    }
}

/// Counters gathered over one or more steps.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub created_pairs: u64,
    pub annihilated_pairs: u64,
    pub kicks: u64,
    /// Kicks that could not be granted for lack of stationary samples.
    pub missing_kicks: u64,
    pub saturated_cells: u64,
}

impl StepDiagnostics {
    pub fn absorb(&mut self, other: &StepDiagnostics) {
        self.created_pairs += other.created_pairs;
        self.annihilated_pairs += other.annihilated_pairs;
        self.kicks += other.kicks;
        self.missing_kicks += other.missing_kicks;
        self.saturated_cells += other.saturated_cells;
    }

    /// True when any kick was clipped, i.e. the cell ran out of stationary samples.
    pub fn relativistic(&self) -> bool {
        self.missing_kicks > 0
    }
}

/// Full state; samples are stored sorted by cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwarmState {
    pub grid: GridSpec,
    pub physics: SwarmPhysics,
    pos: [Vec<f64>; 3],
    speed: Vec<SpeedState>,
    ids: Vec<u64>,
    /// `cell_start[c]..cell_start[c+1]` are the samples of cell `c`.
    cell_start: Vec<usize>,
    pub step: u64,
    pub time: f64,
    pub key: StreamKey,
}

impl SwarmState {
    pub fn from_samples(
        grid: &GridSpec,
        physics: SwarmPhysics,
        samples: &[Sample],
        seed: u64,
    ) -> Result<SwarmState, SwarmError> {
        let mut state = SwarmState {
            grid: grid.clone(),
            physics,
            pos: [
                samples.iter().map(|s| s.pos[0]).collect(),
                samples.iter().map(|s| s.pos[1]).collect(),
                samples.iter().map(|s| s.pos[2]).collect(),
            ],
            speed: samples.iter().map(|s| s.speed).collect(),
            ids: samples.iter().map(|s| s.id).collect(),
            cell_start: vec![0; grid.n_cells() + 1],
            step: 0,
            time: 0.0,
            key: StreamKey::new(seed),
        };
        if let Some(s) = state.speed.iter().find(|s| !s.valid_for(grid.dims)) {
            return Err(SwarmError::BadSpeed(s.tag()));
        }
        state.rebin()?;
        Ok(state)
    }

    pub fn len(&self) -> usize {
        self.speed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.speed.is_empty()
    }

    pub fn sample(&self, i: usize) -> Sample {
        Sample {
            pos: [self.pos[0][i], self.pos[1][i], self.pos[2][i]],
            speed: self.speed[i],
            id: self.ids[i],
        }
    }

    pub fn samples(&self) -> impl Iterator<Item = Sample> + '_ {
        (0..self.len()).map(|i| self.sample(i))
    }

    pub fn positions(&self, axis: usize) -> &[f64] {
        &self.pos[axis]
    }

    pub fn speeds(&self) -> &[SpeedState] {
        &self.speed
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    /// Index range of the samples in `cell`.
    pub fn cell_range(&self, cell: usize) -> std::ops::Range<usize> {
        self.cell_start[cell]..self.cell_start[cell + 1]
    }

    pub fn cell_stats(&self) -> Vec<CellStats> {
        (0..self.grid.n_cells())
            .into_par_iter()
            .map(|c| CellStats::of(&self.speed[self.cell_range(c)]))
            .collect()
    }

    pub fn counts(&self) -> Vec<u32> {
        (0..self.grid.n_cells())
            .map(|c| (self.cell_start[c + 1] - self.cell_start[c]) as u32)
            .collect()
    }

    /// `ρ = n / dx^dims` per cell; sums to the sample count.
    pub fn density(&self) -> DensityField {
        let vol = self.grid.cell_volume();
        let rho = self.counts().into_iter().map(|n| n as f64 / vol).collect();
        DensityField::new(self.grid.clone(), rho, false).expect("counts are nonnegative")
    }

    /// Density rescaled to unit mass, comparable with `|ψ|²`.
    pub fn normalized_density(&self) -> DensityField {
        self.density().normalized_copy()
    }

    /// Impulse per unit volume, `m c (n_plus − n_minus) / dx^dims`.
    pub fn impulse_field(&self) -> ImpulseField {
        let stats = self.cell_stats();
        let scale = self.physics.sample_mass * self.physics.c / self.grid.cell_volume();
        let mut out = ImpulseField::zeros(&self.grid);
        for (c, st) in stats.iter().enumerate() {
            for a in 0..self.grid.dims {
                out.p[a][c] = st.net(a) as f64 * scale;
            }
        }
        out
    }

    /// Net moving samples per axis; total impulse is `m c` times this.
    pub fn net_speed_counts(&self) -> [i64; 3] {
        let mut out = [0i64; 3];
        for s in &self.speed {
            if let Some(a) = s.axis() {
                out[a] += s.sign();
            }
        }
        out
    }

    pub fn total_impulse(&self) -> [f64; 3] {
        let n = self.net_speed_counts();
        let scale = self.physics.sample_mass * self.physics.c;
        [n[0] as f64 * scale, n[1] as f64 * scale, n[2] as f64 * scale]
    }

    #[inline]
    fn cell_of(&self, i: usize) -> Result<usize, SwarmError> {
        let mut c = [0usize; 3];
        for (axis, slot) in c.iter_mut().enumerate().take(self.grid.dims) {
            let x = self.pos[axis][i];
            let len = self.grid.length(axis);
            if !(0.0..len).contains(&x) {
                return Err(SwarmError::PositionOutOfDomain {
                    id: self.ids[i],
                    pos: [self.pos[0][i], self.pos[1][i], self.pos[2][i]],
                });
            }
            *slot = ((x / self.grid.dx) as usize).min(self.grid.extent[axis] - 1);
        }
        Ok(self.grid.linear_index(c))
    }

    /// Stable counting sort of all samples by cell.
    fn rebin(&mut self) -> Result<(), SwarmError> {
        let n = self.len();
        let cells: Vec<usize> = (0..n)
            .into_par_iter()
            .map(|i| self.cell_of(i))
            .collect::<Result<_, _>>()?;
        let n_cells = self.grid.n_cells();
        let mut start = vec![0usize; n_cells + 1];
        for &c in &cells {
            start[c + 1] += 1;
        }
        for c in 0..n_cells {
            start[c + 1] += start[c];
        }
        // Nothing to do when already sorted.
        if cells.windows(2).all(|w| w[0] <= w[1]) {
            self.cell_start = start;
            return Ok(());
        }
        let mut cursor = start.clone();
        let mut order = vec![0usize; n];
        for (i, &c) in cells.iter().enumerate() {
            order[cursor[c]] = i;
            cursor[c] += 1;
        }
        let permute_f = |v: &Vec<f64>| -> Vec<f64> { order.par_iter().map(|&i| v[i]).collect() };
        self.pos = [
            permute_f(&self.pos[0]),
            permute_f(&self.pos[1]),
            permute_f(&self.pos[2]),
        ];
        self.speed = order.par_iter().map(|&i| self.speed[i]).collect();
        self.ids = order.par_iter().map(|&i| self.ids[i]).collect();
        self.cell_start = start;
        Ok(())
    }

    /// Split the speed array into one mutable slice per cell.
    fn cell_slices(&mut self) -> Vec<&mut [SpeedState]> {
        let mut out = Vec::with_capacity(self.grid.n_cells());
        let mut rest: &mut [SpeedState] = &mut self.speed;
        for c in 0..self.grid.n_cells() {
            let len = self.cell_start[c + 1] - self.cell_start[c];
            let (head, tail) = rest.split_at_mut(len);
            out.push(head);
            rest = tail;
        }
        out
    }

    /// Translate every sample by `v dt`, applying the boundary, then re-sort.
    pub fn advect(&mut self) -> Result<(), SwarmError> {
        let dt = self.grid.dt;
        let c = self.physics.c;
        let boundary = self.grid.boundary;
        let lengths = [self.grid.length(0), self.grid.length(1), self.grid.length(2)];
        let [p0, p1, p2] = &mut self.pos;
        (
            p0.par_iter_mut(),
            p1.par_iter_mut(),
            p2.par_iter_mut(),
            self.speed.par_iter_mut(),
        )
            .into_par_iter()
            .for_each(|(x, y, z, s)| {
                let Some(axis) = s.axis() else { return };
                let coord = match axis {
                    0 => x,
                    1 => y,
                    _ => z,
                };
                let len = lengths[axis];
                let mut v = *coord + s.sign() as f64 * c * dt;
                match boundary {
                    Boundary::Periodic => {
                        if v >= len {
                            v -= len;
                        } else if v < 0.0 {
                            v += len;
                        }
                        if v >= len {
                            v = 0.0;
                        }
                    }
                    Boundary::Reflecting => {
                        if v < 0.0 {
                            v = -v;
                            *s = s.opposite();
                        } else if v >= len {
                            v = 2.0 * len - v;
                            *s = s.opposite();
                        }
                        if v >= len {
                            v = len.next_down();
                        }
                    }
                }
                *coord = v;
            });
        self.rebin()
    }
}

/// Number of opposite pairs closest to `s/n_zero = d` when `total` samples
/// (stationary plus paired) are available; ties go to fewer pairs.
pub fn target_pairs(total: u32, d: f64) -> u32 {
    if d <= 0.0 || total < 2 {
        return 0;
    }
    let max_pairs = (total - 1) / 2;
    let x = d * total as f64 / (2.0 * (1.0 + d));
    let lo = (x.floor() as u32).min(max_pairs);
    let hi = (lo + 1).min(max_pairs);
    let err = |k: u32| (2.0 * k as f64 / (total - 2 * k) as f64 - d).abs();
    if err(hi) < err(lo) {
        hi
    } else {
        lo
    }
}

/// Reaction of change for an explicit pair: opposite movers stop, stationary
/// pairs start moving oppositely along a uniformly chosen axis.
pub fn reaction_of_change<R: Rng + ?Sized>(
    a: Sample,
    b: Sample,
    grid: &GridSpec,
    rng: &mut R,
) -> Result<(Sample, Sample), SwarmError> {
    if a.speed.opposite() != b.speed {
        return Err(SwarmError::PairNotOpposite {
            a: a.speed,
            b: b.speed,
        });
    }
    let distance = (0..3).map(|k| (a.pos[k] - b.pos[k]).powi(2)).sum::<f64>().sqrt();
    if distance > grid.dx {
        return Err(SwarmError::PairTooFar {
            distance,
            limit: grid.dx,
        });
    }
    let (mut a, mut b) = (a, b);
    if a.speed.is_moving() {
        a.speed = SpeedState::Zero;
        b.speed = SpeedState::Zero;
    } else {
        let axis = rng.random_range(0..grid.dims);
        let positive = rng.random::<bool>();
        a.speed = SpeedState::along(axis, positive);
        b.speed = a.speed.opposite();
    }
    Ok((a, b))
}

#[derive(Default)]
struct Scratch {
    zero: Vec<u32>,
    movers: [Vec<u32>; 6],
}

/// Move `k` uniformly chosen entries to the front of `v`.
fn choose_front<R: Rng + ?Sized>(v: &mut [u32], k: usize, rng: &mut R) {
    for j in 0..k.min(v.len()) {
        let pick = rng.random_range(j..v.len());
        v.swap(j, pick);
    }
}

/// Step 1 on one cell. Returns (created, annihilated) pairs.
fn balance_cell<R: Rng + ?Sized>(
    speeds: &mut [SpeedState],
    dims: usize,
    d: f64,
    rng: &mut R,
    scratch: &mut Scratch,
) -> (u32, u32) {
    let stats = CellStats::of(speeds);
    let pairs = stats.pairs();
    let target = target_pairs(stats.n_zero + 2 * pairs, d);
    if target > pairs {
        let need = 2 * (target - pairs) as usize;
        scratch.zero.clear();
        scratch.zero.extend(
            speeds.iter().enumerate().filter(|(_, s)| !s.is_moving()).map(|(i, _)| i as u32),
        );
        choose_front(&mut scratch.zero, need, rng);
        for pair in scratch.zero[..need].chunks_exact(2) {
            let axis = rng.random_range(0..dims);
            speeds[pair[0] as usize] = SpeedState::along(axis, true);
            speeds[pair[1] as usize] = SpeedState::along(axis, false);
        }
        (target - pairs, 0)
    } else if target < pairs {
        for list in scratch.movers.iter_mut() {
            list.clear();
        }
        for (i, s) in speeds.iter().enumerate() {
            if s.is_moving() {
                scratch.movers[*s as usize - 1].push(i as u32);
            }
        }
        for _ in 0..(pairs - target) {
            // Uniform over all opposite pairs: axis weight n_plus·n_minus.
            let weights: [u64; 3] = std::array::from_fn(|a| {
                (scratch.movers[2 * a].len() * scratch.movers[2 * a + 1].len()) as u64
            });
            let mut r = rng.random_range(0..weights.iter().sum::<u64>());
            let mut axis = 0;
            while r >= weights[axis] {
                r -= weights[axis];
                axis += 1;
            }
            for list in [2 * axis, 2 * axis + 1] {
                let l = &mut scratch.movers[list];
                let pick = rng.random_range(0..l.len());
                speeds[l.swap_remove(pick) as usize] = SpeedState::Zero;
            }
        }
        (0, pairs - target)
    } else {
        (0, 0)
    }
}

/// Step 2 on one cell: grant `−sign(∂V)·c` to stationary samples at a rate
/// carrying impulse `N |∂V| dt / M` per step, with `factor = gain·dt/(M c)`.
fn kick_cell<R: Rng + ?Sized>(
    speeds: &mut [SpeedState],
    grad: [f64; 3],
    dims: usize,
    factor: f64,
    rng: &mut R,
    scratch: &mut Scratch,
    diag: &mut StepDiagnostics,
) {
    if grad[..dims].iter().all(|g| *g == 0.0) {
        return;
    }
    scratch.zero.clear();
    scratch.zero.extend(
        speeds.iter().enumerate().filter(|(_, s)| !s.is_moving()).map(|(i, _)| i as u32),
    );
    let n = speeds.len() as f64;
    let mut used = 0usize;
    let mut saturated = false;
    for (axis, &g) in grad.iter().enumerate().take(dims) {
        if g == 0.0 {
            continue;
        }
        let k = stochastic_round(factor * n * g.abs(), rng) as usize;
        let available = scratch.zero.len() - used;
        let granted = k.min(available);
        if granted < k {
            diag.missing_kicks += (k - granted) as u64;
            saturated = true;
        }
        choose_front(&mut scratch.zero[used..], granted, rng);
        let state = SpeedState::along(axis, g < 0.0);
        for &i in &scratch.zero[used..used + granted] {
            speeds[i as usize] = state;
        }
        used += granted;
        diag.kicks += granted as u64;
    }
    diag.saturated_cells += saturated as u64;
}

/// Recomputes the external potential between steps.
pub trait PotentialHook: Send {
    fn refresh(&mut self, state: &SwarmState, potential: &mut Potential);
}

/// Leaves the potential unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct StaticPotential;

impl PotentialHook for StaticPotential {
    fn refresh(&mut self, _state: &SwarmState, _potential: &mut Potential) {}
}

/// Engine: state plus update parameters and an optional private worker pool.
pub struct Swarm {
    pub state: SwarmState,
    pub dynamics: Dynamics,
    pub diagnostics: StepDiagnostics,
    pool: Option<Arc<rayon::ThreadPool>>,
}

impl Swarm {
    pub fn new(state: SwarmState, dynamics: Dynamics) -> Self {
        Swarm {
            state,
            dynamics,
            diagnostics: StepDiagnostics::default(),
            pool: None,
        }
    }

    /// Run the parallel phases on exactly `workers` threads.
    pub fn with_workers(mut self, workers: usize) -> Result<Self, SwarmError> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build()
            .map_err(|e| SwarmError::Pool(e.to_string()))?;
        self.pool = Some(Arc::new(pool));
        Ok(self)
    }

    fn run<T: Send>(&mut self, f: impl FnOnce(&mut Self) -> T + Send) -> T {
        match self.pool.clone() {
            Some(pool) => pool.install(|| f(self)),
            None => f(self),
        }
    }

    /// Steps 1 and 2 over all cells.
    fn react(&mut self, potential: &Potential) -> StepDiagnostics {
        let dims = self.state.grid.dims;
        let d = self.dynamics.d;
        let factor =
            self.dynamics.kick_gain * self.state.grid.dt / (self.state.physics.mass * self.state.physics.c);
        let key = self.state.key;
        let step = self.state.step;
        let kick = !potential.is_flat();
        let slices = self.state.cell_slices();
        slices
            .into_par_iter()
            .enumerate()
            .fold(
                || (Scratch::default(), StepDiagnostics::default()),
                |(mut scratch, mut diag), (cell, speeds)| {
                    if !speeds.is_empty() {
                        let mut rng = key.stream(step, Phase::Balance, cell as u64);
                        let (created, annihilated) =
                            balance_cell(speeds, dims, d, &mut rng, &mut scratch);
                        diag.created_pairs += created as u64;
                        diag.annihilated_pairs += annihilated as u64;
                        if kick {
                            let mut rng = key.stream(step, Phase::Kick, cell as u64);
                            let grad = potential.grad_at(cell);
                            kick_cell(speeds, grad, dims, factor, &mut rng, &mut scratch, &mut diag);
                        }
                    }
                    (scratch, diag)
                },
            )
            .map(|(_, d)| d)
            .reduce(StepDiagnostics::default, |mut a, b| {
                a.absorb(&b);
                a
            })
    }

    /// One full update: rebalance, kick, advect, refresh the potential.
    pub fn full_step(
        &mut self,
        potential: &mut Potential,
        hook: &mut dyn PotentialHook,
    ) -> Result<StepDiagnostics, SwarmError> {
        crate::fields::same_grid(&self.state.grid, potential.grid())?;
        let pot: &Potential = potential;
        let diag = self.run(|s| -> Result<StepDiagnostics, SwarmError> {
            let diag = s.react(pot);
            s.state.advect()?;
            Ok(diag)
        })?;
        self.state.step += 1;
        self.state.time = self.state.step as f64 * self.state.grid.dt;
        hook.refresh(&self.state, potential);
        self.diagnostics.absorb(&diag);
        Ok(diag)
    }

    /// `full_step` with a fixed potential.
    pub fn step(&mut self, potential: &Potential) -> Result<StepDiagnostics, SwarmError> {
        let mut p = potential.clone();
        let mut hook = StaticPotential;
        self.full_step(&mut p, &mut hook)
    }

    pub fn run_steps(&mut self, potential: &Potential, steps: u64) -> Result<(), SwarmError> {
        let mut p = potential.clone();
        let mut hook = StaticPotential;
        for _ in 0..steps {
            self.full_step(&mut p, &mut hook)?;
        }
        Ok(())
    }
}

/// Draw `n` samples from `density0`: multinomial cell counts, uniform
/// positions inside each cell, and, given a velocity field, enough movers per
/// cell that the mean impulse matches `m n(r) v̄(r)`.
pub fn sample_initial_swarm(
    density0: &DensityField,
    velocity: Option<&VelocityField>,
    n: u64,
    physics: SwarmPhysics,
    seed: u64,
) -> Result<SwarmState, SwarmError> {
    let grid = &density0.grid;
    if let Some((cell, &value)) = density0.rho.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
        return Err(SwarmError::NegativeDensity { cell, value });
    }
    if let Some(v) = velocity {
        crate::fields::same_grid(grid, &v.grid)?;
    }
    let key = StreamKey::new(seed);
    let probs = density0.probabilities();
    let counts = multinomial(n, &probs, &mut key.stream(0, Phase::Init, 0));
    let mut offsets = vec![0u64; counts.len() + 1];
    for c in 0..counts.len() {
        offsets[c + 1] = offsets[c] + counts[c];
    }
    let dims = grid.dims;
    let dx = grid.dx;
    let c_speed = physics.c;
    let per_cell: Vec<Vec<Sample>> = (0..counts.len())
        .into_par_iter()
        .map(|cell| {
            let k = counts[cell] as usize;
            let mut out = Vec::with_capacity(k);
            if k == 0 {
                return out;
            }
            let mut rng = key.stream(0, Phase::Init, cell as u64 + 1);
            let origin = grid.coords(cell);
            for j in 0..k {
                let mut pos = [0.0; 3];
                for a in 0..dims {
                    let u: f64 = rng.random();
                    let x = (origin[a] as f64 + u) * dx;
                    pos[a] = x.min(grid.length(a).next_down());
                }
                out.push(Sample {
                    pos,
                    speed: SpeedState::Zero,
                    id: offsets[cell] + j as u64,
                });
            }
            if let Some(v) = velocity {
                let mut rng = key.stream(0, Phase::InitVelocity, cell as u64);
                let mut next = 0usize;
                for a in 0..dims {
                    let target = k as f64 * v.v[a][cell] / c_speed;
                    let movers = (stochastic_round(target.abs(), &mut rng) as usize).min(k - next);
                    for s in &mut out[next..next + movers] {
                        s.speed = SpeedState::along(a, target > 0.0);
                    }
                    next += movers;
                }
            }
            out
        })
        .collect();
    let samples: Vec<Sample> = per_cell.into_iter().flatten().collect();
    SwarmState::from_samples(grid, physics, &samples, seed)
}

/// What the swarm's diffusion intensity should match, in velocity² units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DiffusionTarget {
    /// `2γ²dx² = h²/(2M²dx²)`: the two-cell exchange rate at this grain.
    Grain,
    /// `h²/(4M²σ²)`: the quantum pressure scale of a state of width `σ`.
    StateWidth(f64),
    /// Explicit value.
    Intensity(f64),
}

impl DiffusionTarget {
    pub fn intensity(&self, cfg: &ValidatedConfig) -> f64 {
        let h = cfg.physical.h;
        let m = cfg.physical.mass;
        match *self {
            DiffusionTarget::Grain => cfg.coeffs.two_cell_intensity(&cfg.grid),
            DiffusionTarget::StateWidth(sigma) => h * h / (4.0 * m * m * sigma * sigma),
            DiffusionTarget::Intensity(i) => i,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationOptions {
    /// Skip the measurement runs and return the kinematic estimate.
    pub refine: bool,
    /// Samples in the 1-D measurement run; match the occupancy of the real run.
    pub samples: u64,
    pub max_steps: u64,
    pub iterations: usize,
    /// Relative rms misfit of the variance curve above which calibration fails.
    pub max_residual: f64,
    pub seed: u64,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        CalibrationOptions {
            refine: true,
            samples: 50_000,
            max_steps: 4_000,
            iterations: 5,
            max_residual: 0.25,
            seed: 0x5eed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub d: f64,
    pub target_intensity: f64,
    /// Paired-mover fraction `d/(1+d)`; unpaired movers come on top.
    pub moving_fraction: f64,
    /// Measured intensity over `c² d/(1+d)` on the last refinement run (1 if not
    /// refined). Unpaired movers make this well above 1.
    pub eta: f64,
    pub residual: f64,
    pub clipped: bool,
    pub warnings: Vec<ConfigWarning>,
}

/// Intensity a swarm of moving fraction `f` carries: `c² f / dims`.
pub fn kinematic_intensity(c: f64, moving_fraction: f64, dims: usize) -> f64 {
    c * c * moving_fraction / dims as f64
}

/// Variance growth measured on a 1-D free-spreading run: returns the fitted
/// intensity `I` in `σ² = σ₀² + I t²` and the relative rms misfit.
pub fn measure_spreading(
    cfg: &ValidatedConfig,
    d: f64,
    opts: &CalibrationOptions,
    expected_intensity: f64,
) -> Result<(f64, f64), SwarmError> {
    let dx = cfg.grid.dx;
    let sigma0 = 6.0 * dx;
    let grid = GridSpec::new(dx, cfg.grid.dt, &[160], Boundary::Periodic);
    let physics = SwarmPhysics {
        c: cfg.physical.c,
        sample_mass: cfg.physical.mass / opts.samples as f64,
        mass: cfg.physical.mass,
    };
    let rho0 = crate::fields::gaussian_density(&grid, crate::fields::grid_center(&grid), sigma0);
    let state = sample_initial_swarm(&rho0, None, opts.samples, physics, opts.seed)?;
    let mut swarm = Swarm::new(state, Dynamics::new(d));
    let t_goal = 2.0 * sigma0 / expected_intensity.max(1e-300).sqrt();
    let total_steps = ((t_goal / grid.dt).ceil() as u64).clamp(10, opts.max_steps);
    let frames = 10u64;
    let zero = Potential::zero(&grid);
    let variance = |s: &SwarmState| {
        let xs = s.positions(0);
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64
    };
    // Let the pair population settle before the clock starts.
    swarm.step(&zero)?;
    let t0 = swarm.state.time;
    let v0 = variance(&swarm.state);
    let mut points = Vec::new();
    for f in 1..=frames {
        let until = f * total_steps / frames;
        while swarm.state.step < until + 1 {
            swarm.step(&zero)?;
        }
        points.push((swarm.state.time - t0, variance(&swarm.state) - v0));
    }
    let num: f64 = points.iter().map(|(t, y)| y * t * t).sum();
    let den: f64 = points.iter().map(|(t, _)| t.powi(4)).sum();
    let fitted = num / den;
    let scale = points.iter().map(|(_, y)| y.abs()).fold(0.0, f64::max).max(1e-300);
    let rms = (points.iter().map(|(t, y)| (y - fitted * t * t).powi(2)).sum::<f64>()
        / points.len() as f64)
        .sqrt();
    Ok((fitted, rms / scale))
}

/// Choose `d` so the swarm's spreading intensity equals the target.
///
/// The starting point follows from kinematics: a swarm with moving fraction
/// `f` has momentum flux `c² f / dims` per unit density, and `s/n_zero = d`
/// gives `f ≈ d/(1+d)`. Refinement runs a 1-D free packet, fits the variance
/// curve and rescales `f` by the measured/target ratio.
pub fn calibrate_diffusion(
    cfg: &ValidatedConfig,
    target: DiffusionTarget,
    opts: &CalibrationOptions,
) -> Result<Calibration, SwarmError> {
    let intensity = target.intensity(cfg);
    let c = cfg.physical.c;
    let dims = cfg.grid.dims;
    let mut warnings = Vec::new();
    if intensity <= 0.0 {
        return Ok(Calibration {
            d: 0.0,
            target_intensity: 0.0,
            moving_fraction: 0.0,
            eta: 1.0,
            residual: 0.0,
            clipped: false,
            warnings,
        });
    }
    let f0 = dims as f64 * intensity / (c * c);
    let to_d = |f: f64| if f < 1.0 { f / (1.0 - f) } else { f64::INFINITY };
    let mut raw = to_d(f0);
    let mut eta = 1.0;
    let mut residual = 0.0;
    if opts.refine {
        // The 1-D run must carry the full moving fraction on one axis.
        let target_1d = kinematic_intensity(c, f0, 1);
        let mut d = raw.min(0.5);
        let mut last: Option<(f64, f64)> = None;
        for _ in 0..opts.iterations {
            let (measured, res) = measure_spreading(cfg, d, opts, target_1d)?;
            if measured <= 0.0 && res == 0.0 {
                // Below one pair per cell nothing moves; step out of the dead zone.
                d = (4.0 * d).min(0.5);
                raw = d;
                continue;
            }
            residual = res;
            if !(res <= opts.max_residual) || !(measured > 0.0) {
                return Err(SwarmError::CalibrationDiverged { residual: res });
            }
            eta = measured / kinematic_intensity(c, d / (1.0 + d), 1);
            let point = (d.ln(), measured.ln());
            // Secant in log–log, slope kept within a sane band.
            let slope = match last {
                Some((ld, li)) if (point.0 - ld).abs() > 1e-9 => {
                    ((point.1 - li) / (point.0 - ld)).clamp(0.3, 3.0)
                }
                _ => 1.0,
            };
            last = Some(point);
            raw = (point.0 + (target_1d.ln() - point.1) / slope).exp();
            if (measured / target_1d - 1.0).abs() < 0.02 {
                raw = d;
                break;
            }
            d = raw.min(0.5);
        }
    }
    let f = raw / (1.0 + raw);
    let clipped = raw > 0.5;
    if clipped {
        log::warn!("calibrated d = {raw:.3} exceeds 0.5; clipping");
        warnings.push(ConfigWarning::RelativisticRegime {
            expected_moving_fraction: f,
        });
    }
    let d = raw.min(0.5);
    Ok(Calibration {
        d,
        target_intensity: intensity,
        moving_fraction: d / (1.0 + d),
        eta,
        residual,
        clipped,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KickCalibration {
    pub gain: f64,
    /// Relative change of the interquartile width at the chosen gain.
    pub width_change: f64,
    pub evaluations: usize,
}

fn interquartile(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let q = |f: f64| v[((v.len() - 1) as f64 * f).round() as usize];
    q(0.75) - q(0.25)
}

/// Relative change of the interquartile width of a trapped Gaussian after a
/// short run at kick gain `gain`. The trap `a = M I / (2σ²)` balances a
/// swarm of spreading intensity `I` and width `σ = 6 dx` when the kick
/// normalization is right.
pub fn trapped_width_change(
    cfg: &ValidatedConfig,
    d: f64,
    intensity: f64,
    gain: f64,
    opts: &CalibrationOptions,
) -> Result<f64, SwarmError> {
    let dx = cfg.grid.dx;
    let sigma = 6.0 * dx;
    let grid = GridSpec::new(dx, cfg.grid.dt, &[160], Boundary::Periodic);
    let center = crate::fields::grid_center(&grid);
    let mass = cfg.physical.mass;
    let a = mass * intensity / (2.0 * sigma * sigma);
    let potential = Potential::harmonic(&grid, a, center);
    let physics = SwarmPhysics {
        c: cfg.physical.c,
        sample_mass: mass / opts.samples as f64,
        mass,
    };
    let rho0 = crate::fields::gaussian_density(&grid, center, sigma);
    let state = sample_initial_swarm(&rho0, None, opts.samples, physics, opts.seed ^ 0x6a1e)?;
    let mut swarm = Swarm::new(state, Dynamics { d, kick_gain: gain });
    let w0 = interquartile(swarm.state.positions(0));
    let t_goal = sigma / intensity.max(1e-300).sqrt();
    let steps = ((t_goal / grid.dt).ceil() as u64).clamp(10, opts.max_steps);
    swarm.run_steps(&potential, steps)?;
    Ok(interquartile(swarm.state.positions(0)) / w0 - 1.0)
}

/// Kick gain that keeps a trapped, pressure-balanced Gaussian at constant
/// width: Illinois regula falsi on [`trapped_width_change`], bracketed from
/// `[0, 1]` upwards.
pub fn calibrate_kick_gain(
    cfg: &ValidatedConfig,
    d: f64,
    intensity: f64,
    opts: &CalibrationOptions,
) -> Result<KickCalibration, SwarmError> {
    let mut evaluations = 0;
    let mut eval = |g: f64| {
        evaluations += 1;
        trapped_width_change(cfg, d, intensity, g, opts)
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    let mut f_lo = eval(lo)?;
    let mut f_hi = eval(hi)?;
    while f_hi > 0.0 && hi < 16.0 {
        lo = hi;
        f_lo = f_hi;
        hi *= 2.0;
        f_hi = eval(hi)?;
    }
    if f_hi > 0.0 || f_lo < 0.0 {
        // No sign change: either pressure wins at any gain or kicks win at zero.
        return Err(SwarmError::CalibrationDiverged {
            residual: if f_hi > 0.0 { f_hi } else { f_lo },
        });
    }
    let mut best = if f_lo.abs() < f_hi.abs() { (lo, f_lo) } else { (hi, f_hi) };
    let mut side = 0i8;
    for _ in 0..opts.iterations {
        if best.1.abs() < 2e-3 {
            break;
        }
        let g = (lo * f_hi - hi * f_lo) / (f_hi - f_lo);
        let f = eval(g)?;
        if f.abs() < best.1.abs() {
            best = (g, f);
        }
        if f > 0.0 {
            lo = g;
            f_lo = f;
            if side == 1 {
                f_hi *= 0.5;
            }
            side = 1;
        } else {
            hi = g;
            f_hi = f;
            if side == -1 {
                f_lo *= 0.5;
            }
            side = -1;
        }
    }
    Ok(KickCalibration {
        gain: best.0,
        width_change: best.1,
        evaluations,
    })
}

/// CSV table `id,x,y,z,speed_tag`.
pub fn write_snapshot_csv<W: Write>(state: &SwarmState, out: W) -> Result<(), SwarmError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["id", "x", "y", "z", "speed_tag"])?;
    for s in state.samples() {
        w.serialize((s.id, s.pos[0], s.pos[1], s.pos[2], s.speed.tag()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_snapshot_csv<R: Read>(input: R) -> Result<Vec<Sample>, SwarmError> {
    let mut r = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for row in r.deserialize() {
        let (id, x, y, z, tag): (u64, f64, f64, f64, u8) = row?;
        let speed = SpeedState::from_tag(tag).ok_or(SwarmError::BadSpeed(tag))?;
        out.push(Sample {
            pos: [x, y, z],
            speed,
            id,
        });
    }
    Ok(out)
}

/// CSV table `ix,iy,iz,count,rho`.
pub fn write_density_csv<W: Write>(state: &SwarmState, out: W) -> Result<(), SwarmError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["ix", "iy", "iz", "count", "rho"])?;
    let vol = state.grid.cell_volume();
    for (cell, n) in state.counts().into_iter().enumerate() {
        let c = state.grid.coords(cell);
        w.serialize((c[0], c[1], c[2], n, n as f64 / vol))?;
    }
    w.flush()?;
    Ok(())
}

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    dynamics: Dynamics,
    state: SwarmState,
}

pub fn save_checkpoint<W: Write>(swarm: &Swarm, out: W) -> Result<(), SwarmError> {
    let ck = Checkpoint {
        version: CHECKPOINT_VERSION,
        dynamics: swarm.dynamics,
        state: swarm.state.clone(),
    };
    serde_json::to_writer(out, &ck).map_err(|e| SwarmError::Checkpoint(e.to_string()))
}

pub fn load_checkpoint<R: Read>(input: R) -> Result<Swarm, SwarmError> {
    let ck: Checkpoint =
        serde_json::from_reader(input).map_err(|e| SwarmError::Checkpoint(e.to_string()))?;
    if ck.version != CHECKPOINT_VERSION {
        return Err(SwarmError::Checkpoint(format!(
            "unsupported version {}",
            ck.version
        )));
    }
    let mut state = ck.state;
    state.rebin()?;
    Ok(Swarm::new(state, ck.dynamics))
}
