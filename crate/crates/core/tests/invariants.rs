use dyndiff::continuum::drho_dt;
use dyndiff::fields::{DensityField, ImpulseField, Potential};
use dyndiff::observables::{estimate_impulse, estimate_kinetic};
use dyndiff::phase::{link_phase, wrap};
use dyndiff::rng::multinomial;
use dyndiff::swarm::{target_pairs, Dynamics, Sample, SpeedState, Swarm, SwarmPhysics, SwarmState};
use dyndiff::units::{validate, Boundary, ConfigFile, GridSpec, PhysicalConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn grid_strategy() -> impl Strategy<Value = GridSpec> {
    (1usize..=3, prop::collection::vec(2usize..7, 3), prop::bool::ANY).prop_map(|(dims, ext, periodic)| {
        let boundary = if periodic { Boundary::Periodic } else { Boundary::Reflecting };
        GridSpec::new(1.0, 0.05, &ext[..dims], boundary)
    })
}

fn speed_strategy(dims: usize) -> impl Strategy<Value = SpeedState> {
    (0..=2 * dims).prop_map(|k| match k {
        0 => SpeedState::Zero,
        k => SpeedState::along((k - 1) / 2, k % 2 == 1),
    })
}

/// A grid plus samples placed anywhere in its domain.
fn swarm_strategy() -> impl Strategy<Value = (GridSpec, Vec<Sample>)> {
    grid_strategy().prop_flat_map(|grid| {
        let dims = grid.dims;
        let lengths = [grid.length(0), grid.length(1), grid.length(2)];
        let sample = (prop::array::uniform3(0.0f64..1.0), speed_strategy(dims));
        (Just(grid), prop::collection::vec(sample, 1..300)).prop_map(move |(grid, raw)| {
            let samples = raw
                .into_iter()
                .enumerate()
                .map(|(id, (u, speed))| {
                    let mut pos = [0.0; 3];
                    for a in 0..dims {
                        pos[a] = u[a] * lengths[a];
                    }
                    Sample { pos, speed, id: id as u64 }
                })
                .collect();
            (grid, samples)
        })
    })
}

fn physics(n: usize) -> SwarmPhysics {
    SwarmPhysics { c: 1.0, sample_mass: 1.0 / n as f64, mass: 1.0 }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn flat_steps_conserve_count_and_net_speed((grid, samples) in swarm_strategy(), d in 0.0f64..2.0, seed in any::<u64>()) {
        prop_assume!(grid.boundary == Boundary::Periodic);
        let state = SwarmState::from_samples(&grid, physics(samples.len()), &samples, seed).unwrap();
        let net0 = state.net_speed_counts();
        let mut swarm = Swarm::new(state, Dynamics::new(d));
        swarm.run_steps(&Potential::zero(&grid), 20).unwrap();
        prop_assert_eq!(swarm.state.len(), samples.len());
        prop_assert_eq!(swarm.state.net_speed_counts(), net0);
    }

    #[test]
    fn advect_keeps_samples_inside((grid, samples) in swarm_strategy()) {
        let mut state = SwarmState::from_samples(&grid, physics(samples.len()), &samples, 0).unwrap();
        for _ in 0..50 {
            state.advect().unwrap();
        }
        for a in 0..grid.dims {
            let len = grid.length(a);
            prop_assert!(state.positions(a).iter().all(|x| (0.0..len).contains(x)));
        }
        let mut ids = state.ids().to_vec();
        ids.sort_unstable();
        prop_assert_eq!(ids, (0..samples.len() as u64).collect::<Vec<_>>());
    }

    #[test]
    fn speeds_stay_valid_for_the_dimension((grid, samples) in swarm_strategy(), seed in any::<u64>()) {
        let state = SwarmState::from_samples(&grid, physics(samples.len()), &samples, seed).unwrap();
        let centre = dyndiff::fields::grid_center(&grid);
        let trap = Potential::harmonic(&grid, 0.3, centre);
        let mut swarm = Swarm::new(state, Dynamics::new(0.2));
        swarm.run_steps(&trap, 10).unwrap();
        prop_assert!(swarm.state.speeds().iter().all(|s| s.valid_for(grid.dims)));
    }

    #[test]
    fn estimators_ignore_sample_order((grid, samples) in swarm_strategy(), seed in any::<u64>()) {
        let phys = physics(samples.len());
        let a = SwarmState::from_samples(&grid, phys, &samples, 0).unwrap();
        let mut shuffled = samples.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rand::seq::SliceRandom::shuffle(shuffled.as_mut_slice(), &mut rng);
        let b = SwarmState::from_samples(&grid, phys, &shuffled, 0).unwrap();
        prop_assert_eq!(a.cell_stats(), b.cell_stats());
        prop_assert_eq!(estimate_impulse(&a.cell_stats(), &phys), estimate_impulse(&b.cell_stats(), &phys));
        prop_assert_eq!(estimate_kinetic(&a.cell_stats(), &phys), estimate_kinetic(&b.cell_stats(), &phys));
    }

    #[test]
    fn target_pairs_is_nearest_feasible(total in 0u32..5000, d in 0.0f64..3.0) {
        let k = target_pairs(total, d);
        if total < 2 || d == 0.0 {
            prop_assert_eq!(k, 0);
        } else {
            let max = (total - 1) / 2;
            prop_assert!(k <= max);
            let err = |k: u32| (2.0 * k as f64 / (total - 2 * k) as f64 - d).abs();
            if k > 0 {
                prop_assert!(err(k) <= err(k - 1));
            }
            if k < max {
                prop_assert!(err(k) <= err(k + 1) + 1e-12);
            }
        }
    }

    #[test]
    fn drho_dt_is_linear_and_conservative(
        ext in 3usize..20,
        p1 in prop::collection::vec(-1.0f64..1.0, 20),
        p2 in prop::collection::vec(-1.0f64..1.0, 20),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
    ) {
        let grid = GridSpec::new(0.5, 0.01, &[ext], Boundary::Periodic);
        let field = |v: &[f64]| {
            let mut f = ImpulseField::zeros(&grid);
            f.p[0] = v[..ext].to_vec();
            f
        };
        let combo: Vec<f64> = (0..ext).map(|i| a * p1[i] + b * p2[i]).collect();
        let r1 = drho_dt(&field(&p1), &grid).unwrap();
        let r2 = drho_dt(&field(&p2), &grid).unwrap();
        let rc = drho_dt(&field(&combo), &grid).unwrap();
        for i in 0..ext {
            prop_assert!((rc[i] - (a * r1[i] + b * r2[i])).abs() <= 1e-12);
        }
        prop_assert!(rc.iter().sum::<f64>().abs() <= 1e-12);
    }

    #[test]
    fn link_phase_is_antisymmetric(
        rho in prop::collection::vec(0.1f64..2.0, 8),
        p in prop::collection::vec(-0.2f64..0.2, 8),
        cell in 0usize..7,
    ) {
        let grid = GridSpec::new(0.5, 0.01, &[8], Boundary::Periodic);
        let density = DensityField::new(grid.clone(), rho, false).unwrap();
        let mut flux = ImpulseField::zeros(&grid);
        flux.p[0] = p;
        let ab = link_phase(&density, &flux, cell, cell + 1, 1.0, 0.0).unwrap();
        let ba = link_phase(&density, &flux, cell + 1, cell, 1.0, 0.0).unwrap();
        prop_assert_eq!(ab.value, -ba.value);
    }

    #[test]
    fn wrap_lands_in_half_open_interval(x in -100.0f64..100.0) {
        let y = wrap(x);
        prop_assert!(y > -std::f64::consts::PI && y <= std::f64::consts::PI);
        let turns = (x - y) / (2.0 * std::f64::consts::PI);
        prop_assert!((turns - turns.round()).abs() < 1e-9);
    }

    #[test]
    fn multinomial_counts_sum_to_n(n in 0u64..100_000, weights in prop::collection::vec(0.0f64..1.0, 1..40), seed in any::<u64>()) {
        let total: f64 = weights.iter().sum();
        prop_assume!(total > 0.0);
        let probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let counts = multinomial(n, &probs, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(counts.iter().sum::<u64>(), n);
        for (c, p) in counts.iter().zip(&probs) {
            if *p == 0.0 {
                prop_assert_eq!(*c, 0);
            }
        }
    }

    #[test]
    fn halving_the_grain_scales_coefficients_exactly(dx in 0.01f64..2.0, h in 0.1f64..10.0, mass in 0.1f64..10.0) {
        let phys = PhysicalConfig { h, mass, charge: 0.0, c: 1.0, n_samples: 1000, dims: 1 };
        let grid = GridSpec::new(dx, dx / 100.0, &[32], Boundary::Periodic);
        let Ok(cfg) = validate(phys, grid) else { return Ok(()) };
        let Ok(half) = cfg.with_grain(dx / 2.0) else { return Ok(()) };
        let (a, b) = (cfg.coeffs, half.coeffs);
        prop_assert_eq!(b.intensity, 8.0 * a.intensity);
        prop_assert_eq!(b.kappa, 2.0 * a.kappa);
        prop_assert_eq!(b.gamma, 4.0 * a.gamma);
        prop_assert_eq!(b.alpha, 4.0 * a.alpha);
    }

    #[test]
    fn config_render_round_trips(n in 1u64..10_000_000, c in 0.5f64..50.0, ext in 2usize..200, seed in any::<u64>()) {
        let text = format!(
            "h = 1\nmass = 1\nc = {c}\nn_samples = {n}\ndims = 1\ndx = 0.5\ndt = 0.001\nextent_x = {ext}\nboundary = reflecting\nseed = {seed}\nscenario.sigma = 2\n"
        );
        let parsed = ConfigFile::parse(&text).unwrap();
        let again = ConfigFile::parse(&parsed.render()).unwrap();
        prop_assert_eq!(parsed, again);
    }
}
