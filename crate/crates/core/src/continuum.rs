//! Deterministic field model for the pair (ρ, p̄).
//!
//! The impulse obeys `∂p̄/∂t = −I grad ρ − κ ρ grad V (+ g ρ p̄)` and the
//! density changes by the net face flux of `p̄` through each cell boundary.
//! Outward flux decreases the density of the cell it leaves. Works in
//! internal units (`M = 1`), so `p̄` doubles as the probability flux.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fields::{
    central_gradient, face_flux_divergence, same_grid, DensityField, FieldError, ImpulseField,
    Potential,
};
use crate::units::{DerivedCoefficients, GridSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ContinuumError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("unstable step at t = {time}: mass drift {mass_drift:e}")]
    UnstableStep { time: f64, mass_drift: f64 },
    #[error("time step {dt} must be positive and finite")]
    BadStep { dt: f64 },
}

/// Coefficients of the impulse flux law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluxCoefficients {
    /// `I`, multiplies `grad ρ`.
    pub intensity: f64,
    /// `κ`, multiplies `ρ grad V`.
    pub kappa: f64,
    /// `g` of the inertia term `g ρ p̄`; `None` drops the term.
    pub inertia: Option<f64>,
}

impl FluxCoefficients {
    pub fn new(intensity: f64, kappa: f64) -> Self {
        FluxCoefficients {
            intensity,
            kappa,
            inertia: None,
        }
    }

    pub fn with_inertia(mut self, g: f64) -> Self {
        self.inertia = Some(g);
        self
    }
}

impl From<&DerivedCoefficients> for FluxCoefficients {
    fn from(c: &DerivedCoefficients) -> Self {
        FluxCoefficients::new(c.intensity, c.kappa)
    }
}

/// `∂p̄/∂t` per cell.
pub fn dpdt(
    rho: &DensityField,
    potential: &Potential,
    coeffs: &FluxCoefficients,
    p: Option<&ImpulseField>,
) -> Result<ImpulseField, ContinuumError> {
    let grid = &rho.grid;
    same_grid(grid, potential.grid())?;
    let grad_rho = central_gradient(grid, &rho.rho);
    let mut out = ImpulseField::zeros(grid);
    for axis in 0..grid.dims {
        let gv = potential.grad(axis);
        for (i, slot) in out.p[axis].iter_mut().enumerate() {
            *slot = -coeffs.intensity * grad_rho[axis][i] - coeffs.kappa * rho.rho[i] * gv[i];
        }
    }
    if let (Some(g), Some(p)) = (coeffs.inertia, p) {
        same_grid(grid, &p.grid)?;
        for axis in 0..grid.dims {
            for i in 0..grid.n_cells() {
                out.p[axis][i] += g * rho.rho[i] * p.p[axis][i];
            }
        }
    }
    Ok(out)
}

/// `∂ρ/∂t = −(1/dx^d) Σ_faces (p̄_face · n̂) dx^{d−1}`.
pub fn drho_dt(p: &ImpulseField, grid: &GridSpec) -> Result<Vec<f64>, ContinuumError> {
    same_grid(grid, &p.grid)?;
    Ok(face_flux_divergence(grid, &p.p).into_iter().map(|v| -v).collect())
}

/// `∂²ρ/∂t²` as the face-flux integral of `∂p̄/∂t`: exactly `drho_dt(dpdt(..))`.
pub fn d2rho_dt2(
    rho: &DensityField,
    potential: &Potential,
    coeffs: &FluxCoefficients,
) -> Result<Vec<f64>, ContinuumError> {
    let rate = dpdt(rho, potential, coeffs, None)?;
    drho_dt(&rate, &rho.grid)
}

/// Two cells one grain apart exchanging through their shared face only:
/// `∂²ρ_a/∂t² = [I (ρ_b − ρ_a) + κ ρ_a (V_b − V_a)] / dx²`.
pub fn two_cell_d2rho_dt2(
    rho_a: f64,
    rho_b: f64,
    v_a: f64,
    v_b: f64,
    coeffs: &FluxCoefficients,
    dx: f64,
) -> f64 {
    (coeffs.intensity * (rho_b - rho_a) + coeffs.kappa * rho_a * (v_b - v_a)) / (dx * dx)
}

/// One saved state of the integration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuumFrame {
    pub time: f64,
    pub rho: DensityField,
    pub p: ImpulseField,
}

/// Default step: `1/ω_max`, half the leapfrog stability limit `2/ω_max`.
/// The wide central stencil gives `ω² ≤ dims·I/dx²`; the potential adds a
/// bound from its curvature and slope.
pub fn stable_step(grid: &GridSpec, potential: &Potential, coeffs: &FluxCoefficients) -> f64 {
    let dims = grid.dims as f64;
    let mut curvature: f64 = 0.0;
    for axis in 0..grid.dims {
        let g = potential.grad(axis);
        for i in 0..grid.n_cells() {
            if let Some(j) = grid.neighbor(i, axis, 1) {
                curvature = curvature.max(((g[j] - g[i]) / grid.dx).abs());
            }
        }
    }
    let omega2 = dims * coeffs.intensity.abs() / (grid.dx * grid.dx)
        + coeffs.kappa.abs() * (curvature + potential_slope(potential) / grid.dx);
    if omega2 <= 0.0 {
        return f64::INFINITY;
    }
    1.0 / omega2.sqrt()
}

fn potential_slope(potential: &Potential) -> f64 {
    (0..potential.grid().dims)
        .flat_map(|a| potential.grad(a).iter())
        .fold(0.0f64, |m, v| m.max(v.abs()))
}

fn half_kick(
    p: &mut ImpulseField,
    rho: &DensityField,
    potential: &Potential,
    coeffs: &FluxCoefficients,
    h: f64,
) -> Result<(), ContinuumError> {
    let rate = dpdt(rho, potential, coeffs, Some(p))?;
    for axis in 0..rho.grid.dims {
        for (pv, rv) in p.p[axis].iter_mut().zip(&rate.p[axis]) {
            *pv += h * rv;
        }
    }
    Ok(())
}

/// Integrate `(ρ, p̄)` to `t_end`, saving a frame every `frame_interval`.
///
/// Each step is kick–drift–kick leapfrog: half an update of `p̄`, a full
/// update of `ρ` from the new `p̄`, another half update of `p̄`. Explicit,
/// symplectic, second order; the free second moment grows exactly as `I t²`. `dt = None` picks
/// [`stable_step`]. Mass is conserved by the flux form up to rounding; drift
/// beyond `1e-9` relative aborts with [`ContinuumError::UnstableStep`].
pub fn integrate_continuum(
    rho0: &DensityField,
    p0: &ImpulseField,
    potential: &Potential,
    coeffs: &FluxCoefficients,
    t_end: f64,
    frame_interval: f64,
    dt: Option<f64>,
) -> Result<Vec<ContinuumFrame>, ContinuumError> {
    let grid = rho0.grid.clone();
    same_grid(&grid, &p0.grid)?;
    same_grid(&grid, potential.grid())?;
    let max_dt = dt.unwrap_or_else(|| stable_step(&grid, potential, coeffs));
    if !(max_dt > 0.0) {
        return Err(ContinuumError::BadStep { dt: max_dt });
    }
    let mut rho = rho0.clone();
    let mut p = p0.clone();
    let mass0 = rho.mass();
    let mut time = 0.0;
    let mut frames = vec![ContinuumFrame {
        time,
        rho: rho.clone(),
        p: p.clone(),
    }];
    let n_frames = if frame_interval > 0.0 {
        (t_end / frame_interval).round() as usize
    } else {
        1
    };
    for frame in 1..=n_frames {
        let target = if frame == n_frames {
            t_end
        } else {
            frame as f64 * frame_interval
        };
        let span = target - time;
        let substeps = (span / max_dt).ceil().max(1.0) as usize;
        let h = span / substeps as f64;
        for _ in 0..substeps {
            half_kick(&mut p, &rho, potential, coeffs, 0.5 * h)?;
            let dr = drho_dt(&p, &grid)?;
            for (r, d) in rho.rho.iter_mut().zip(&dr) {
                *r += h * d;
            }
            half_kick(&mut p, &rho, potential, coeffs, 0.5 * h)?;
        }
        time = target;
        let drift = if mass0 != 0.0 {
            ((rho.mass() - mass0) / mass0).abs()
        } else {
            0.0
        };
        if !(drift <= 1e-9) || !p.is_finite() {
            return Err(ContinuumError::UnstableStep {
                time,
                mass_drift: drift,
            });
        }
        frames.push(ContinuumFrame {
            time,
            rho: rho.clone(),
            p: p.clone(),
        });
    }
    Ok(frames)
}

/// CSV table `ix,iy,iz,rho,px,py,pz`.
pub fn write_field_csv<W: std::io::Write>(
    rho: &DensityField,
    p: &ImpulseField,
    out: W,
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["ix", "iy", "iz", "rho", "px", "py", "pz"])?;
    for i in 0..rho.grid.n_cells() {
        let c = rho.grid.coords(i);
        w.serialize((c[0], c[1], c[2], rho.rho[i], p.p[0][i], p.p[1][i], p.p[2][i]))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{gaussian_density, grid_center};
    use crate::units::Boundary;

    fn grid1(n: usize) -> GridSpec {
        GridSpec::new(0.25, 0.01, &[n], Boundary::Periodic)
    }

    #[test]
    fn uniform_free_state_has_no_rate() {
        let g = grid1(32);
        let rho = DensityField::uniform(&g);
        let rate = dpdt(&rho, &Potential::zero(&g), &FluxCoefficients::new(2.0, 1.0), None).unwrap();
        assert!(rate.p[0].iter().all(|v| *v == 0.0));
        let d2 = d2rho_dt2(&rho, &Potential::zero(&g), &FluxCoefficients::new(2.0, 1.0)).unwrap();
        assert!(d2.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn gaussian_rate_points_away_from_peak() {
        let g = grid1(64);
        let rho = gaussian_density(&g, grid_center(&g), 1.5);
        let rate = dpdt(&rho, &Potential::zero(&g), &FluxCoefficients::new(1.0, 1.0), None).unwrap();
        for i in 0..64 {
            let x = g.cell_center(i)[0] - grid_center(&g)[0];
            if x.abs() > 0.3 && x.abs() < 5.0 {
                assert_eq!(rate.p[0][i].signum(), x.signum(), "cell {i}");
            }
        }
    }

    #[test]
    fn uniform_density_in_harmonic_potential() {
        let g = grid1(40);
        let rho = DensityField::uniform(&g);
        let v = Potential::harmonic(&g, 0.7, grid_center(&g));
        let coeffs = FluxCoefficients::new(3.0, 2.0);
        let rate = dpdt(&rho, &v, &coeffs, None).unwrap();
        for i in 0..40 {
            let expected = -2.0 * rho.rho[i] * v.grad(0)[i];
            assert_eq!(rate.p[0][i], expected);
        }
    }

    #[test]
    fn drho_dt_cases() {
        let g = GridSpec::new(0.5, 0.01, &[6, 5], Boundary::Periodic);
        let zero = ImpulseField::zeros(&g);
        assert!(drho_dt(&zero, &g).unwrap().iter().all(|v| *v == 0.0));
        let uniform = ImpulseField::from_fn(&g, |_| [0.3, -1.1, 0.0]);
        assert!(drho_dt(&uniform, &g).unwrap().iter().all(|v| v.abs() < 1e-12));
        let other = GridSpec::new(0.4, 0.01, &[6, 5], Boundary::Periodic);
        assert!(matches!(
            drho_dt(&zero, &other),
            Err(ContinuumError::Field(FieldError::GridMismatch))
        ));
    }

    #[test]
    fn two_cell_flux_is_antisymmetric() {
        // All flux from A to B on a reflecting two-cell strip.
        let g = GridSpec::new(1.0, 0.01, &[2], Boundary::Reflecting);
        let mut p = ImpulseField::zeros(&g);
        p.p[0] = vec![0.4, 0.4];
        let d = drho_dt(&p, &g).unwrap();
        assert!(d[0] < 0.0);
        assert_eq!(d[0], -d[1]);
    }

    #[test]
    fn composition_identity_is_exact() {
        let g = GridSpec::new(0.3, 0.01, &[12, 7], Boundary::Periodic);
        let rho = gaussian_density(&g, grid_center(&g), 0.6);
        let v = Potential::harmonic(&g, 1.3, [1.0, 0.5, 0.0]);
        let coeffs = FluxCoefficients::new(0.8, 1.7);
        let direct = d2rho_dt2(&rho, &v, &coeffs).unwrap();
        let composed = drho_dt(&dpdt(&rho, &v, &coeffs, None).unwrap(), &g).unwrap();
        assert_eq!(direct, composed);
    }

    #[test]
    fn integration_keeps_uniform_state_fixed() {
        let g = grid1(16);
        let rho = DensityField::uniform(&g);
        let frames = integrate_continuum(
            &rho,
            &ImpulseField::zeros(&g),
            &Potential::zero(&g),
            &FluxCoefficients::new(1.0, 1.0),
            1.0,
            0.25,
            None,
        )
        .unwrap();
        assert_eq!(frames.len(), 5);
        for f in &frames {
            assert_eq!(f.rho.rho, rho.rho);
        }
    }

    #[test]
    fn integration_spreads_gaussian_and_conserves_mass() {
        let g = grid1(256);
        let rho = gaussian_density(&g, grid_center(&g), 2.0);
        let intensity = 0.5;
        let frames = integrate_continuum(
            &rho,
            &ImpulseField::zeros(&g),
            &Potential::zero(&g),
            &FluxCoefficients::new(intensity, 1.0),
            4.0,
            1.0,
            None,
        )
        .unwrap();
        let (_, v0) = frames[0].rho.moments();
        let mut last = v0[0];
        for f in &frames[1..] {
            let (_, v) = f.rho.moments();
            assert!(v[0] > last);
            last = v[0];
            assert!((f.rho.mass() - 1.0).abs() < 1e-12);
            // the field model spreads as σ² = σ₀² + I t²
            let expected = v0[0] + intensity * f.time * f.time;
            assert!((v[0] - expected).abs() / expected < 0.02, "{} vs {}", v[0], expected);
        }
    }
}
