//! Impulse, energy and angular-momentum estimators from swarm counts, with
//! reference-solver counterparts and an Ehrenfest comparison.

use serde::{Deserialize, Serialize};

use crate::fields::Potential;
use crate::quantum::{QuantumError, WaveField};
use crate::swarm::{CellStats, SwarmPhysics, SwarmState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservableRecord {
    pub time: f64,
    pub impulse: [f64; 3],
    pub kinetic: f64,
    pub potential: f64,
    pub angular: [f64; 3],
    pub mean_position: [f64; 3],
    /// Standard error of `mean_position` from the sample spread.
    pub position_se: [f64; 3],
    /// Standard error of `impulse / M` from the moving counts.
    pub velocity_se: [f64; 3],
}

/// `Σ_r m c (n⁺(r) − n⁻(r))` per axis: the summed impulse of all samples.
pub fn estimate_impulse(stats: &[CellStats], physics: &SwarmPhysics) -> [f64; 3] {
    let mut net = [0i64; 3];
    for st in stats {
        for (a, slot) in net.iter_mut().enumerate() {
            *slot += st.net(a);
        }
    }
    let mc = physics.sample_mass * physics.c;
    [net[0] as f64 * mc, net[1] as f64 * mc, net[2] as f64 * mc]
}

/// `Σ_s m v(s)` sample by sample.
pub fn direct_impulse(state: &SwarmState) -> [f64; 3] {
    let mut out = [0.0; 3];
    for s in state.speeds() {
        let v = s.velocity(state.physics.c);
        for a in 0..3 {
            out[a] += state.physics.sample_mass * v[a];
        }
    }
    out
}

/// `Σ_r Σ_u m c² n_u(r)² / (2 n(r))` with `n_u = n_u⁺ − n_u⁻`: the kinetic
/// energy of each cell's mean flow.
pub fn estimate_kinetic(stats: &[CellStats], physics: &SwarmPhysics) -> f64 {
    let mc2 = physics.sample_mass * physics.c * physics.c;
    stats
        .iter()
        .filter(|st| st.n > 0)
        .map(|st| {
            let sq: f64 = (0..3).map(|a| (st.net(a) as f64).powi(2)).sum();
            mc2 * sq / (2.0 * st.n as f64)
        })
        .sum()
}

/// The same quantity written as `M_cell |v_mean|² / 2` with
/// `v_mean = c n_u / n` and `M_cell = m n`.
pub fn kinetic_from_mean_velocity(stats: &[CellStats], physics: &SwarmPhysics) -> f64 {
    stats
        .iter()
        .filter(|st| st.n > 0)
        .map(|st| {
            let n = st.n as f64;
            let cell_mass = physics.sample_mass * n;
            let v2: f64 = (0..3).map(|a| (physics.c * st.net(a) as f64 / n).powi(2)).sum();
            0.5 * cell_mass * v2
        })
        .sum()
}

/// `Σ_r n(r)/N · V(r)`.
pub fn estimate_potential(counts: &[u32], potential: &Potential) -> f64 {
    let total: u64 = counts.iter().map(|c| *c as u64).sum();
    if total == 0 {
        return 0.0;
    }
    counts
        .iter()
        .zip(potential.values())
        .map(|(n, v)| *n as f64 * v)
        .sum::<f64>()
        / total as f64
}

/// `Σ_s (r(s) − origin) × m v(s)`.
pub fn estimate_angular(state: &SwarmState, origin: [f64; 3]) -> [f64; 3] {
    let m = state.physics.sample_mass;
    let mut l = [0.0; 3];
    for s in state.samples() {
        if !s.speed.is_moving() {
            continue;
        }
        let v = s.speed.velocity(state.physics.c);
        let r = [s.pos[0] - origin[0], s.pos[1] - origin[1], s.pos[2] - origin[2]];
        l[0] += m * (r[1] * v[2] - r[2] * v[1]);
        l[1] += m * (r[2] * v[0] - r[0] * v[2]);
        l[2] += m * (r[0] * v[1] - r[1] * v[0]);
    }
    l
}

impl ObservableRecord {
    pub fn from_swarm(state: &SwarmState, potential: &Potential, origin: [f64; 3]) -> Self {
        let stats = state.cell_stats();
        let n = state.len() as f64;
        let dims = state.grid.dims;
        let mut mean = [0.0; 3];
        let mut se = [0.0; 3];
        for a in 0..dims {
            let xs = state.positions(a);
            let m = xs.iter().sum::<f64>() / n;
            let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
            mean[a] = m;
            se[a] = (var / n).sqrt();
        }
        let mut movers = [0u64; 3];
        for st in &stats {
            for (a, slot) in movers.iter_mut().enumerate() {
                *slot += (st.n_plus[a] + st.n_minus[a]) as u64;
            }
        }
        let per_sample = state.physics.sample_mass * state.physics.c / state.physics.mass;
        ObservableRecord {
            time: state.time,
            impulse: estimate_impulse(&stats, &state.physics),
            kinetic: estimate_kinetic(&stats, &state.physics),
            potential: estimate_potential(&state.counts(), potential),
            angular: estimate_angular(state, origin),
            mean_position: mean,
            position_se: se,
            velocity_se: movers.map(|k| per_sample * (k as f64).sqrt()),
        }
    }

    /// Expectation values `⟨A⟩ = ∫ψ* A ψ`; kinetic is `⟨H⟩ − ⟨V⟩`.
    pub fn from_wave(
        wave: &WaveField,
        potential: &Potential,
        h: f64,
        mass: f64,
        time: f64,
        origin: [f64; 3],
    ) -> Result<Self, QuantumError> {
        let rho = wave.density();
        let p = wave.impulse_density(h, mass);
        let vol = wave.grid.cell_volume();
        let norm = wave.norm();
        let pot: f64 =
            rho.rho.iter().zip(potential.values()).map(|(r, v)| r * v).sum::<f64>() * vol / norm;
        let energy = wave.energy(potential, h, mass)?;
        let mut angular = [0.0; 3];
        for i in 0..wave.grid.n_cells() {
            let c = wave.grid.cell_center(i);
            let r = [c[0] - origin[0], c[1] - origin[1], c[2] - origin[2]];
            let q = p.at(i);
            angular[0] += (r[1] * q[2] - r[2] * q[1]) * vol;
            angular[1] += (r[2] * q[0] - r[0] * q[2]) * vol;
            angular[2] += (r[0] * q[1] - r[1] * q[0]) * vol;
        }
        Ok(ObservableRecord {
            time,
            impulse: wave.mean_momentum(h, mass),
            kinetic: energy - pot,
            potential: pot,
            angular,
            mean_position: rho.moments().0,
            position_se: [0.0; 3],
            velocity_se: [0.0; 3],
        })
    }
}

/// Trailing moving average of the kinetic estimate over `window` records.
pub fn windowed_kinetic(records: &[ObservableRecord], window: usize) -> Vec<f64> {
    let w = window.max(1);
    (0..records.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(w);
            let slice = &records[lo..=i];
            slice.iter().map(|r| r.kinetic).sum::<f64>() / slice.len() as f64
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EhrenfestReport {
    /// Largest `|⟨x⟩_swarm − ⟨x⟩_ref|` over frames and axes.
    pub max_position_deviation: f64,
    /// Largest deviation divided by its band.
    pub worst_position_ratio: f64,
    pub max_impulse_deviation: f64,
    pub worst_impulse_ratio: f64,
    /// Reference `⟨H⟩` spread relative to its mean.
    pub reference_energy_drift: f64,
    pub within_band: bool,
}

/// Compare swarm and reference traces frame by frame. The band is
/// `bands · standard error`, plus `floor` for deterministic bias.
pub fn ehrenfest_check(
    swarm: &[ObservableRecord],
    reference: &[ObservableRecord],
    dims: usize,
    bands: f64,
    mass: f64,
) -> EhrenfestReport {
    let mut rep = EhrenfestReport {
        max_position_deviation: 0.0,
        worst_position_ratio: 0.0,
        max_impulse_deviation: 0.0,
        worst_impulse_ratio: 0.0,
        reference_energy_drift: 0.0,
        within_band: true,
    };
    for (s, r) in swarm.iter().zip(reference) {
        for a in 0..dims {
            let dx = (s.mean_position[a] - r.mean_position[a]).abs();
            let dp = (s.impulse[a] - r.impulse[a]).abs();
            rep.max_position_deviation = rep.max_position_deviation.max(dx);
            rep.max_impulse_deviation = rep.max_impulse_deviation.max(dp);
            let px = dx / (bands * s.position_se[a]).max(f64::MIN_POSITIVE);
            let pp = dp / (bands * s.velocity_se[a] * mass).max(f64::MIN_POSITIVE);
            rep.worst_position_ratio = rep.worst_position_ratio.max(px);
            rep.worst_impulse_ratio = rep.worst_impulse_ratio.max(pp);
        }
    }
    let energies: Vec<f64> = reference.iter().map(|r| r.kinetic + r.potential).collect();
    if let Some(first) = energies.first() {
        let spread = energies.iter().map(|e| (e - first).abs()).fold(0.0, f64::max);
        rep.reference_energy_drift = spread / first.abs().max(f64::MIN_POSITIVE);
    }
    rep.within_band = rep.worst_position_ratio <= 1.0;
    rep
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::swarm::{Sample, SpeedState};
    use crate::units::{Boundary, GridSpec};

    fn physics() -> SwarmPhysics {
        SwarmPhysics {
            c: 2.0,
            sample_mass: 0.01,
            mass: 1.0,
        }
    }

    fn swarm(samples: &[(f64, f64, SpeedState)]) -> SwarmState {
        let g = GridSpec::new(1.0, 0.01, &[4, 4], Boundary::Periodic);
        let s: Vec<Sample> = samples
            .iter()
            .enumerate()
            .map(|(i, (x, y, v))| Sample {
                pos: [*x, *y, 0.0],
                speed: *v,
                id: i as u64,
            })
            .collect();
        SwarmState::from_samples(&g, physics(), &s, 0).unwrap()
    }

    #[test]
    fn impulse_examples() {
        let s = swarm(&[(0.5, 0.5, SpeedState::Zero), (1.5, 0.5, SpeedState::Zero)]);
        assert_eq!(estimate_impulse(&s.cell_stats(), &s.physics), [0.0; 3]);
        let s = swarm(&[
            (0.5, 0.5, SpeedState::PlusX),
            (1.5, 0.5, SpeedState::PlusX),
            (1.5, 2.5, SpeedState::PlusX),
            (3.5, 0.5, SpeedState::Zero),
        ]);
        let p = estimate_impulse(&s.cell_stats(), &s.physics);
        assert!((p[0] - 3.0 * 0.01 * 2.0).abs() < 1e-15);
        assert_eq!(p, direct_impulse(&s));
    }

    #[test]
    fn kinetic_examples() {
        let s = swarm(&[(0.5, 0.5, SpeedState::Zero); 5]);
        assert_eq!(estimate_kinetic(&s.cell_stats(), &s.physics), 0.0);
        // all n samples moving +X in one cell: M_cell c² / 2
        let s = swarm(&[(0.5, 0.5, SpeedState::PlusX); 10]);
        let k = estimate_kinetic(&s.cell_stats(), &s.physics);
        assert!((k - 0.5 * 0.1 * 4.0).abs() < 1e-15);
        assert_eq!(k, kinetic_from_mean_velocity(&s.cell_stats(), &s.physics));
        let s = swarm(&[(0.5, 0.5, SpeedState::PlusX), (0.6, 0.5, SpeedState::MinusX)]);
        assert_eq!(estimate_kinetic(&s.cell_stats(), &s.physics), 0.0);
    }

    #[test]
    fn potential_examples() {
        let g = GridSpec::new(1.0, 0.01, &[4, 4], Boundary::Periodic);
        let s = swarm(&[(0.5, 0.5, SpeedState::Zero); 3]);
        assert_eq!(estimate_potential(&s.counts(), &Potential::zero(&g)), 0.0);
        let v = Potential::from_fn(&g, |r| if r[0] < 1.0 && r[1] < 1.0 { 2.5 } else { 7.0 });
        assert_eq!(estimate_potential(&s.counts(), &v), 2.5);
    }

    #[test]
    fn angular_examples() {
        let s = swarm(&[(0.5, 0.5, SpeedState::Zero)]);
        assert_eq!(estimate_angular(&s, [0.0; 3]), [0.0; 3]);
        let s = swarm(&[(1.5, 0.0, SpeedState::PlusY)]);
        let l = estimate_angular(&s, [0.0; 3]);
        assert_eq!(l, [0.0, 0.0, 1.5 * 0.01 * 2.0]);
    }

    #[test]
    fn windowed_average() {
        let mut r = ObservableRecord::from_swarm(
            &swarm(&[(0.5, 0.5, SpeedState::Zero)]),
            &Potential::zero(&GridSpec::new(1.0, 0.01, &[4, 4], Boundary::Periodic)),
            [0.0; 3],
        );
        let recs: Vec<ObservableRecord> = (0..4)
            .map(|i| {
                r.kinetic = i as f64;
                r
            })
            .collect();
        assert_eq!(windowed_kinetic(&recs, 2), vec![0.0, 0.5, 1.5, 2.5]);
    }

    #[test]
    fn wave_record_of_ground_state() {
        use crate::fields::grid_center;
        use crate::quantum::ground_state;
        let g = GridSpec::new(0.05, 0.01, &[200], Boundary::Reflecting);
        let v = Potential::harmonic(&g, 0.5, grid_center(&g));
        let (gs, e) = ground_state(&v, 1.0, 1.0).unwrap();
        let rec = ObservableRecord::from_wave(&gs, &v, 1.0, 1.0, 0.0, grid_center(&g)).unwrap();
        assert!(rec.impulse[0].abs() < 1e-14);
        assert!((rec.kinetic + rec.potential - e).abs() < 1e-10);
        // virial theorem for the oscillator
        assert!((rec.kinetic - rec.potential).abs() < 1e-3);
    }
}
