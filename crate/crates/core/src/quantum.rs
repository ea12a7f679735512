//! Finite-difference Schrödinger reference and the two-cell oracle.
//!
//! Internal units: `h` and `M` are passed explicitly so user configs that
//! skip [`crate::units::to_internal_units`] still work. Reflecting grids
//! become hard walls (`ψ = 0` just outside); periodic grids wrap.

use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::continuum::FluxCoefficients;
use crate::fields::{same_grid, DensityField, FieldError, ImpulseField, Potential};
use crate::units::{Boundary, DerivedCoefficients, GridSpec};

#[derive(Debug, Error)]
pub enum QuantumError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("linear solve failed: zero pivot in row {row}")]
    LinearSolveFailed { row: usize },
    #[error("norm drifted by {drift:e} in one step")]
    NormDrift { drift: f64 },
    #[error("wave field has zero norm")]
    ZeroNorm,
    #[error("ground state iteration did not converge (residual {residual:e})")]
    NoConvergence { residual: f64 },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Real and imaginary parts of `ψ` per cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveField {
    pub grid: GridSpec,
    pub psi_r: Vec<f64>,
    pub psi_i: Vec<f64>,
}

impl WaveField {
    pub fn zeros(grid: &GridSpec) -> Self {
        let n = grid.n_cells();
        WaveField {
            grid: grid.clone(),
            psi_r: vec![0.0; n],
            psi_i: vec![0.0; n],
        }
    }

    /// Evaluate `f` at cell centers (not normalized).
    pub fn from_fn(grid: &GridSpec, f: impl Fn([f64; 3]) -> Complex64) -> Self {
        let values: Vec<Complex64> = (0..grid.n_cells()).map(|i| f(grid.cell_center(i))).collect();
        WaveField::from_complex(grid, &values)
    }

    pub fn from_complex(grid: &GridSpec, values: &[Complex64]) -> Self {
        WaveField {
            grid: grid.clone(),
            psi_r: values.iter().map(|z| z.re).collect(),
            psi_i: values.iter().map(|z| z.im).collect(),
        }
    }

    /// Normalized Gaussian packet whose density has standard deviation
    /// `sigma` per axis, moving with wavevector `k`.
    pub fn gaussian(grid: &GridSpec, center: [f64; 3], sigma: f64, k: [f64; 3]) -> Self {
        let dims = grid.dims;
        let mut w = WaveField::from_fn(grid, |r| {
            let mut q = 0.0;
            let mut phase = 0.0;
            for a in 0..dims {
                q += (r[a] - center[a]).powi(2);
                phase += k[a] * (r[a] - center[a]);
            }
            Complex64::from_polar((-q / (4.0 * sigma * sigma)).exp(), phase)
        });
        w.normalize().expect("gaussian has mass");
        w
    }

    /// Normalized `e^{i k·r}`.
    pub fn plane_wave(grid: &GridSpec, k: [f64; 3]) -> Self {
        let dims = grid.dims;
        let mut w = WaveField::from_fn(grid, |r| {
            Complex64::from_polar(1.0, (0..dims).map(|a| k[a] * r[a]).sum())
        });
        w.normalize().expect("plane wave has mass");
        w
    }

    pub fn at(&self, cell: usize) -> Complex64 {
        Complex64::new(self.psi_r[cell], self.psi_i[cell])
    }

    pub fn to_complex(&self) -> Vec<Complex64> {
        self.psi_r.iter().zip(&self.psi_i).map(|(r, i)| Complex64::new(*r, *i)).collect()
    }

    /// `Σ |ψ|² dx^dims`.
    pub fn norm(&self) -> f64 {
        let s: f64 = self.psi_r.iter().zip(&self.psi_i).map(|(r, i)| r * r + i * i).sum();
        s * self.grid.cell_volume()
    }

    pub fn normalize(&mut self) -> Result<(), QuantumError> {
        let n = self.norm();
        if !(n > 0.0) {
            return Err(QuantumError::ZeroNorm);
        }
        let s = 1.0 / n.sqrt();
        self.psi_r.iter_mut().for_each(|v| *v *= s);
        self.psi_i.iter_mut().for_each(|v| *v *= s);
        Ok(())
    }

    /// `|ψ|²` as a normalized density.
    pub fn density(&self) -> DensityField {
        let rho = self.psi_r.iter().zip(&self.psi_i).map(|(r, i)| r * r + i * i).collect();
        DensityField::new(self.grid.clone(), rho, true).expect("squares are nonnegative")
    }

    /// `⟨a|b⟩ = Σ conj(a) b dx^dims`.
    pub fn overlap(&self, other: &WaveField) -> Result<Complex64, QuantumError> {
        same_grid(&self.grid, &other.grid)?;
        let mut s = Complex64::new(0.0, 0.0);
        for i in 0..self.psi_r.len() {
            s += self.at(i).conj() * other.at(i);
        }
        Ok(s * self.grid.cell_volume())
    }

    /// `|⟨a|b⟩| / (‖a‖ ‖b‖)`: 1 for states equal up to a global phase.
    pub fn fidelity(&self, other: &WaveField) -> Result<f64, QuantumError> {
        let o = self.overlap(other)?.norm();
        Ok(o / (self.norm() * other.norm()).sqrt())
    }

    /// Lattice probability current through the `+axis` face of each cell,
    /// `(h/(M dx)) Im(conj(ψ_i) ψ_{i+1})`; zero on walls.
    pub fn face_current(&self, axis: usize, h: f64, mass: f64) -> Vec<f64> {
        let scale = h / (mass * self.grid.dx);
        (0..self.grid.n_cells())
            .map(|i| match self.grid.neighbor(i, axis, 1) {
                Some(j) => scale * (self.at(i).conj() * self.at(j)).im,
                None => 0.0,
            })
            .collect()
    }

    /// Impulse density `M j` at cell centers (average of the two faces).
    pub fn impulse_density(&self, h: f64, mass: f64) -> ImpulseField {
        let mut out = ImpulseField::zeros(&self.grid);
        for axis in 0..self.grid.dims {
            let j = self.face_current(axis, h, mass);
            for i in 0..self.grid.n_cells() {
                let below = self.grid.neighbor(i, axis, -1).map_or(0.0, |k| j[k]);
                out.p[axis][i] = 0.5 * mass * (j[i] + below);
            }
        }
        out
    }

    pub fn mean_position(&self) -> [f64; 3] {
        self.density().moments().0
    }

    /// `⟨p⟩` from the lattice current.
    pub fn mean_momentum(&self, h: f64, mass: f64) -> [f64; 3] {
        let p = self.impulse_density(h, mass).total();
        let n = self.norm();
        [p[0] / n, p[1] / n, p[2] / n]
    }

    /// `⟨H⟩` with the same stencil the solver uses.
    pub fn energy(&self, potential: &Potential, h: f64, mass: f64) -> Result<f64, QuantumError> {
        same_grid(&self.grid, potential.grid())?;
        let psi = self.to_complex();
        let hpsi = apply_hamiltonian_c(&self.grid, potential.values(), h, mass, &psi);
        let e: f64 = psi.iter().zip(&hpsi).map(|(a, b)| (a.conj() * b).re).sum();
        Ok(e * self.grid.cell_volume() / self.norm())
    }
}

/// CSV table `ix,iy,iz,psi_r,psi_i,rho`.
pub fn write_wave_csv<W: Write>(wave: &WaveField, out: W) -> Result<(), QuantumError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["ix", "iy", "iz", "psi_r", "psi_i", "rho"])?;
    for i in 0..wave.grid.n_cells() {
        let c = wave.grid.coords(i);
        let (r, im) = (wave.psi_r[i], wave.psi_i[i]);
        w.serialize((c[0], c[1], c[2], r, im, r * r + im * im))?;
    }
    w.flush()?;
    Ok(())
}

fn kinetic_scale(grid: &GridSpec, h: f64, mass: f64) -> f64 {
    h * h / (2.0 * mass * grid.dx * grid.dx)
}

fn apply_hamiltonian_c(
    grid: &GridSpec,
    v: &[f64],
    h: f64,
    mass: f64,
    psi: &[Complex64],
) -> Vec<Complex64> {
    let beta = kinetic_scale(grid, h, mass);
    (0..grid.n_cells())
        .map(|i| {
            let mut acc = psi[i] * v[i];
            for axis in 0..grid.dims {
                let up = grid.neighbor(i, axis, 1).map_or(Complex64::new(0.0, 0.0), |j| psi[j]);
                let dn = grid.neighbor(i, axis, -1).map_or(Complex64::new(0.0, 0.0), |j| psi[j]);
                acc += (psi[i] * 2.0 - up - dn) * beta;
            }
            acc
        })
        .collect()
}

fn apply_hamiltonian_r(grid: &GridSpec, v: &[f64], beta: f64, shift: f64, x: &[f64]) -> Vec<f64> {
    (0..grid.n_cells())
        .map(|i| {
            let mut acc = x[i] * (v[i] - shift);
            for axis in 0..grid.dims {
                let up = grid.neighbor(i, axis, 1).map_or(0.0, |j| x[j]);
                let dn = grid.neighbor(i, axis, -1).map_or(0.0, |j| x[j]);
                acc += beta * (2.0 * x[i] - up - dn);
            }
            acc
        })
        .collect()
}

/// Thomas algorithm; `a` is the sub-diagonal (`a[0]` unused), `c` the
/// super-diagonal (`c[n-1]` unused).
pub fn solve_tridiagonal(
    a: &[Complex64],
    b: &[Complex64],
    c: &[Complex64],
    d: &[Complex64],
) -> Result<Vec<Complex64>, QuantumError> {
    let n = b.len();
    let mut cp = vec![Complex64::new(0.0, 0.0); n];
    let mut dp = vec![Complex64::new(0.0, 0.0); n];
    let mut denom = b[0];
    if denom.norm() == 0.0 {
        return Err(QuantumError::LinearSolveFailed { row: 0 });
    }
    cp[0] = c[0] / denom;
    dp[0] = d[0] / denom;
    for i in 1..n {
        denom = b[i] - a[i] * cp[i - 1];
        if denom.norm() == 0.0 {
            return Err(QuantumError::LinearSolveFailed { row: i });
        }
        if i + 1 < n {
            cp[i] = c[i] / denom;
        }
        dp[i] = (d[i] - a[i] * dp[i - 1]) / denom;
    }
    let mut x = dp;
    for i in (0..n - 1).rev() {
        let next = x[i + 1];
        x[i] -= cp[i] * next;
    }
    Ok(x)
}

/// Cyclic tridiagonal solve (corner entries `a[0]` at (0, n−1) and `c[n−1]`
/// at (n−1, 0)) by Sherman–Morrison.
pub fn solve_cyclic(
    a: &[Complex64],
    b: &[Complex64],
    c: &[Complex64],
    d: &[Complex64],
) -> Result<Vec<Complex64>, QuantumError> {
    let n = b.len();
    if n == 2 {
        // Both off-diagonal couplings land on the same entry.
        let m01 = c[0] + a[0];
        let m10 = a[1] + c[1];
        let det = b[0] * b[1] - m01 * m10;
        if det.norm() == 0.0 {
            return Err(QuantumError::LinearSolveFailed { row: 0 });
        }
        return Ok(vec![
            (d[0] * b[1] - m01 * d[1]) / det,
            (b[0] * d[1] - m10 * d[0]) / det,
        ]);
    }
    let alpha = c[n - 1];
    let beta = a[0];
    let gamma = -b[0];
    let mut bb = b.to_vec();
    bb[0] = b[0] - gamma;
    bb[n - 1] = b[n - 1] - alpha * beta / gamma;
    let x = solve_tridiagonal(a, &bb, c, d)?;
    let mut u = vec![Complex64::new(0.0, 0.0); n];
    u[0] = gamma;
    u[n - 1] = alpha;
    let z = solve_tridiagonal(a, &bb, c, &u)?;
    let fact = (x[0] + beta * x[n - 1] / gamma) / (Complex64::new(1.0, 0.0) + z[0] + beta * z[n - 1] / gamma);
    Ok(x.iter().zip(&z).map(|(xi, zi)| xi - fact * zi).collect())
}

/// Crank–Nicolson propagator.
///
/// In 1-D the potential sits inside the tridiagonal system, so discrete
/// eigenstates are stationary to rounding. In 2-D/3-D the step is Strang
/// split: half potential phase, one implicit solve per axis, half phase.
/// The potential minimum is removed before use so a constant offset only
/// changes a global phase the solver never sees.
#[derive(Debug, Clone)]
pub struct CrankNicolson {
    grid: GridSpec,
    h: f64,
    mass: f64,
    dt: f64,
    v: Vec<f64>,
    pub v_offset: f64,
}

impl CrankNicolson {
    pub fn new(potential: &Potential, h: f64, mass: f64, dt: f64) -> Self {
        let values = potential.values();
        let offset = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let offset = if offset.is_finite() { offset } else { 0.0 };
        CrankNicolson {
            grid: potential.grid().clone(),
            h,
            mass,
            dt,
            v: values.iter().map(|v| v - offset).collect(),
            v_offset: offset,
        }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn set_potential(&mut self, potential: &Potential) {
        *self = CrankNicolson::new(potential, self.h, self.mass, self.dt);
    }

    fn line_starts(&self, axis: usize) -> Vec<usize> {
        (0..self.grid.n_cells())
            .filter(|&i| self.grid.coords(i)[axis] == 0)
            .collect()
    }

    fn sweep(&self, psi: &mut [Complex64], axis: usize, with_potential: bool) -> Result<(), QuantumError> {
        let g = &self.grid;
        let n = g.extent[axis];
        let stride = match axis {
            0 => 1,
            1 => g.extent[0],
            _ => g.extent[0] * g.extent[1],
        };
        let beta = kinetic_scale(g, self.h, self.mass);
        let tau = Complex64::new(0.0, self.dt / (2.0 * self.h));
        let periodic = g.boundary == Boundary::Periodic;
        let starts = self.line_starts(axis);
        let solved: Vec<(usize, Vec<Complex64>)> = starts
            .par_iter()
            .map(|&s| -> Result<(usize, Vec<Complex64>), QuantumError> {
                let idx = |k: usize| s + k * stride;
                let diag: Vec<f64> = (0..n)
                    .map(|k| 2.0 * beta + if with_potential { self.v[idx(k)] } else { 0.0 })
                    .collect();
                let line: Vec<Complex64> = (0..n).map(|k| psi[idx(k)]).collect();
                let mut rhs = vec![Complex64::new(0.0, 0.0); n];
                for k in 0..n {
                    let mut hpsi = line[k] * diag[k];
                    let up = if k + 1 < n { Some(k + 1) } else if periodic { Some(0) } else { None };
                    let dn = if k > 0 { Some(k - 1) } else if periodic { Some(n - 1) } else { None };
                    if let Some(u) = up {
                        hpsi -= line[u] * beta;
                    }
                    if let Some(d) = dn {
                        hpsi -= line[d] * beta;
                    }
                    rhs[k] = line[k] - tau * hpsi;
                }
                let off = -tau * beta;
                let a = vec![off; n];
                let c = vec![off; n];
                let b: Vec<Complex64> = diag.iter().map(|d| Complex64::new(1.0, 0.0) + tau * d).collect();
                let x = if periodic {
                    solve_cyclic(&a, &b, &c, &rhs)?
                } else {
                    solve_tridiagonal(&a, &b, &c, &rhs)?
                };
                Ok((s, x))
            })
            .collect::<Result<_, _>>()?;
        for (s, x) in solved {
            for (k, v) in x.into_iter().enumerate() {
                psi[s + k * stride] = v;
            }
        }
        Ok(())
    }

    fn potential_phase(&self, psi: &mut [Complex64], time: f64) {
        let h = self.h;
        psi.par_iter_mut().zip(&self.v).for_each(|(p, v)| {
            *p *= Complex64::from_polar(1.0, -v * time / h);
        });
    }

    /// One step; fails if the norm moves by more than `1e-9` relative.
    pub fn step(&self, wave: &mut WaveField) -> Result<(), QuantumError> {
        same_grid(&self.grid, &wave.grid)?;
        let before = wave.norm();
        let mut psi = wave.to_complex();
        if self.grid.dims == 1 {
            self.sweep(&mut psi, 0, true)?;
        } else {
            self.potential_phase(&mut psi, 0.5 * self.dt);
            for axis in 0..self.grid.dims {
                self.sweep(&mut psi, axis, false)?;
            }
            self.potential_phase(&mut psi, 0.5 * self.dt);
        }
        *wave = WaveField::from_complex(&self.grid, &psi);
        let drift = ((wave.norm() - before) / before).abs();
        if drift > 1e-9 {
            return Err(QuantumError::NormDrift { drift });
        }
        Ok(())
    }

    pub fn run(&self, wave: &mut WaveField, steps: usize) -> Result<(), QuantumError> {
        for _ in 0..steps {
            self.step(wave)?;
        }
        Ok(())
    }
}

/// Explicit staggered scheme on the real/imaginary split
/// `∂ψʳ/∂t = Hψⁱ/h`, `∂ψⁱ/∂t = −Hψʳ/h`. Stable for `dt < 2h/E_max`.
#[derive(Debug, Clone)]
pub struct Visscher {
    grid: GridSpec,
    h: f64,
    mass: f64,
    dt: f64,
    v: Vec<f64>,
}

impl Visscher {
    pub fn new(potential: &Potential, h: f64, mass: f64, dt: f64) -> Self {
        let values = potential.values();
        let offset = values.iter().cloned().fold(f64::INFINITY, f64::min);
        Visscher {
            grid: potential.grid().clone(),
            h,
            mass,
            dt,
            v: values.iter().map(|v| v - offset).collect(),
        }
    }

    /// Largest stable step.
    pub fn max_dt(&self) -> f64 {
        let beta = kinetic_scale(&self.grid, self.h, self.mass);
        let vmax = self.v.iter().cloned().fold(0.0, f64::max);
        2.0 * self.h / (4.0 * beta * self.grid.dims as f64 + vmax)
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let beta = kinetic_scale(&self.grid, self.h, self.mass);
        apply_hamiltonian_r(&self.grid, &self.v, beta, 0.0, x)
    }

    pub fn step(&self, wave: &mut WaveField) -> Result<(), QuantumError> {
        same_grid(&self.grid, &wave.grid)?;
        let k = self.dt / self.h;
        let hi = self.apply(&wave.psi_i);
        for (r, v) in wave.psi_r.iter_mut().zip(&hi) {
            *r += k * v;
        }
        let hr = self.apply(&wave.psi_r);
        for (i, v) in wave.psi_i.iter_mut().zip(&hr) {
            *i -= k * v;
        }
        Ok(())
    }
}

/// Lowest eigenstate of the discrete Hamiltonian, by inverse iteration with
/// conjugate-gradient inner solves. Real and positive.
pub fn ground_state(potential: &Potential, h: f64, mass: f64) -> Result<(WaveField, f64), QuantumError> {
    let grid = potential.grid().clone();
    let v = potential.values();
    let beta = kinetic_scale(&grid, h, mass);
    let vmin = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let n = grid.n_cells();
    let mut x: Vec<f64> = (0..n)
        .map(|i| {
            // Start from a positive bump so the iteration stays in the right symmetry class.
            let c = grid.cell_center(i);
            1.0 + 1e-3 * (c[0] + c[1] + c[2]) / grid.length(0)
        })
        .collect();
    let shift = vmin - beta * 1e-3;
    let mut energy = 0.0;
    let normalize = |x: &mut Vec<f64>| {
        let s = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        x.iter_mut().for_each(|v| *v /= s);
    };
    normalize(&mut x);
    let mut residual = f64::INFINITY;
    for _ in 0..500 {
        let y = conjugate_gradient(|p| apply_hamiltonian_r(&grid, v, beta, shift, p), &x, 1e-14, 20 * n)?;
        x = y;
        normalize(&mut x);
        let hx = apply_hamiltonian_r(&grid, v, beta, 0.0, &x);
        energy = x.iter().zip(&hx).map(|(a, b)| a * b).sum();
        residual = hx.iter().zip(&x).map(|(a, b)| (a - energy * b).powi(2)).sum::<f64>().sqrt();
        if residual < 1e-11 * energy.abs().max(beta) {
            break;
        }
    }
    if !(residual < 1e-8 * energy.abs().max(beta)) {
        return Err(QuantumError::NoConvergence { residual });
    }
    if x.iter().sum::<f64>() < 0.0 {
        x.iter_mut().for_each(|v| *v = -*v);
    }
    let mut w = WaveField {
        grid: grid.clone(),
        psi_r: x,
        psi_i: vec![0.0; n],
    };
    w.normalize()?;
    Ok((w, energy))
}

fn conjugate_gradient(
    apply: impl Fn(&[f64]) -> Vec<f64>,
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>, QuantumError> {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut x = vec![0.0; b.len()];
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let target = tol * tol * rr;
    for _ in 0..max_iter {
        if rr <= target {
            break;
        }
        let ap = apply(&p);
        let alpha = rr / dot(&p, &ap);
        for i in 0..x.len() {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..p.len() {
            p[i] = r[i] + beta * p[i];
        }
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(QuantumError::NoConvergence { residual: rr.sqrt() });
    }
    Ok(x)
}

/// Variance of a free Gaussian packet: `σ₀²(1 + (h t/(2Mσ₀²))²)`.
pub fn free_packet_variance(sigma0: f64, t: f64, h: f64, mass: f64) -> f64 {
    let s2 = sigma0 * sigma0;
    s2 * (1.0 + (h * t / (2.0 * mass * s2)).powi(2))
}

/// Trap frequency of `V = a r²`.
pub fn harmonic_frequency(a: f64, mass: f64) -> f64 {
    (2.0 * a / mass).sqrt()
}

/// Density width of the ground state of `V = a r²`.
pub fn harmonic_ground_width(a: f64, h: f64, mass: f64) -> f64 {
    (h / (2.0 * mass * harmonic_frequency(a, mass))).sqrt()
}

/// `V + α`; only used by the two-cell analysis, never by the solver physics.
pub fn shifted_potential(v: &Potential, coeffs: &DerivedCoefficients) -> Potential {
    v.shifted(coeffs.alpha)
}

/// Two neighboring cells `x`, `x₁` coupled by `γ`, each with an on-site
/// potential (in frequency units).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoCellState {
    pub psi_r_x: f64,
    pub psi_i_x: f64,
    pub psi_r_x1: f64,
    pub psi_i_x1: f64,
    pub v_x: f64,
    pub v_x1: f64,
    pub gamma: f64,
}

/// The second derivative of `ρ(x)` split into its parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecondDerivative {
    /// `2γ²(ρ(x₁) − ρ(x))`.
    pub leading: f64,
    /// `2γ(V(x₁) − V(x)) ρ(x)`.
    pub potential: f64,
    /// `2γ (ψʳψʳ₁ + ψⁱψⁱ₁ − ρ)(V(x₁) − V(x))`.
    pub remainder: f64,
}

impl SecondDerivative {
    pub fn total(&self) -> f64 {
        self.leading + self.potential + self.remainder
    }
}

impl TwoCellState {
    pub fn rho_x(&self) -> f64 {
        self.psi_r_x.powi(2) + self.psi_i_x.powi(2)
    }

    pub fn rho_x1(&self) -> f64 {
        self.psi_r_x1.powi(2) + self.psi_i_x1.powi(2)
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.psi_r_x, self.psi_i_x, self.psi_r_x1, self.psi_i_x1]
    }

    pub fn with_array(&self, a: [f64; 4]) -> TwoCellState {
        TwoCellState {
            psi_r_x: a[0],
            psi_i_x: a[1],
            psi_r_x1: a[2],
            psi_i_x1: a[3],
            ..*self
        }
    }

    /// Time derivatives of `(ψʳ(x), ψⁱ(x), ψʳ(x₁), ψⁱ(x₁))`.
    pub fn rhs(&self) -> [f64; 4] {
        let g = self.gamma;
        [
            -g * self.psi_i_x1 + self.v_x * self.psi_i_x,
            g * self.psi_r_x1 - self.v_x * self.psi_r_x,
            -g * self.psi_i_x + self.v_x1 * self.psi_i_x1,
            g * self.psi_r_x - self.v_x1 * self.psi_r_x1,
        ]
    }

    /// `(∂ρ(x)/∂t, ∂ρ(x₁)/∂t)`; the second is the negation of the first.
    pub fn drho_dt(&self) -> (f64, f64) {
        let a = 2.0 * self.gamma * (self.psi_i_x * self.psi_r_x1 - self.psi_r_x * self.psi_i_x1);
        (a, -a)
    }

    /// Closed form for `∂²ρ(x)/∂t²`.
    pub fn d2rho_dt2(&self) -> SecondDerivative {
        let g = self.gamma;
        let dv = self.v_x1 - self.v_x;
        let rho = self.rho_x();
        let cross = self.psi_r_x * self.psi_r_x1 + self.psi_i_x * self.psi_i_x1;
        SecondDerivative {
            leading: 2.0 * g * g * (self.rho_x1() - rho),
            potential: 2.0 * g * dv * rho,
            remainder: 2.0 * g * (cross - rho) * dv,
        }
    }

    /// `∂²ρ(x)/∂t²` by differentiating `∂ρ/∂t` through the chain rule, using
    /// [`rhs`](Self::rhs) rather than the closed form.
    pub fn d2rho_dt2_chain(&self) -> f64 {
        let [dr, di, dr1, di1] = self.rhs();
        2.0 * self.gamma
            * (di * self.psi_r_x1 + self.psi_i_x * dr1 - dr * self.psi_i_x1 - self.psi_r_x * di1)
    }

    /// Classical fourth-order Runge–Kutta.
    pub fn rk4_step(&self, dt: f64) -> TwoCellState {
        let y = self.as_array();
        let f = |y: [f64; 4]| self.with_array(y).rhs();
        let add = |y: [f64; 4], k: [f64; 4], s: f64| std::array::from_fn(|i| y[i] + s * k[i]);
        let k1 = f(y);
        let k2 = f(add(y, k1, dt / 2.0));
        let k3 = f(add(y, k2, dt / 2.0));
        let k4 = f(add(y, k3, dt));
        self.with_array(std::array::from_fn(|i| {
            y[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
        }))
    }

    /// State after time `t` in `steps` RK4 steps (negative `t` runs backwards).
    pub fn evolve(&self, t: f64, steps: usize) -> TwoCellState {
        let dt = t / steps as f64;
        (0..steps).fold(*self, |s, _| s.rk4_step(dt))
    }

    /// `∂²ρ(x)/∂t²` from the central second difference of the integrated
    /// trajectory with spacing `dt`.
    pub fn d2rho_numeric(&self, dt: f64, substeps: usize) -> f64 {
        let plus = self.evolve(dt, substeps).rho_x();
        let minus = self.evolve(-dt, substeps).rho_x();
        (plus - 2.0 * self.rho_x() + minus) / (dt * dt)
    }
}

/// Single-face continuum coefficients that reproduce the two-cell
/// exchange: `I = 2γ²dx²`, `κ = 2γdx²`.
pub fn matched_two_cell_coefficients(gamma: f64, dx: f64) -> FluxCoefficients {
    FluxCoefficients::new(2.0 * gamma * gamma * dx * dx, 2.0 * gamma * dx * dx)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub quantum: f64,
    pub continuum: f64,
    pub absolute: f64,
    pub relative: f64,
    /// `|2γ·o|`, the size of the remainder term.
    pub remainder_bound: f64,
}

/// Compare the two-cell quantum `∂²ρ(x)/∂t²` with the continuum single-face form.
pub fn equivalence_report(state: &TwoCellState, coeffs: &FluxCoefficients, dx: f64) -> EquivalenceReport {
    let q = state.d2rho_dt2();
    let quantum = q.total();
    let continuum = crate::continuum::two_cell_d2rho_dt2(
        state.rho_x(),
        state.rho_x1(),
        state.v_x,
        state.v_x1,
        coeffs,
        dx,
    );
    let absolute = (quantum - continuum).abs();
    let scale = quantum.abs().max(continuum.abs());
    EquivalenceReport {
        quantum,
        continuum,
        absolute,
        relative: if scale > 0.0 { absolute / scale } else { 0.0 },
        remainder_bound: q.remainder.abs(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::grid_center;

    fn line(n: usize, dx: f64, boundary: Boundary) -> GridSpec {
        GridSpec::new(dx, 0.01, &[n], boundary)
    }

    #[test]
    fn tridiagonal_solvers_match_dense_products() {
        let n = 7;
        let a: Vec<Complex64> = (0..n).map(|i| Complex64::new(0.3 + i as f64 * 0.1, -0.2)).collect();
        let b: Vec<Complex64> = (0..n).map(|i| Complex64::new(3.0, 0.5 * i as f64)).collect();
        let c: Vec<Complex64> = (0..n).map(|i| Complex64::new(-0.4, 0.1 * i as f64)).collect();
        let d: Vec<Complex64> = (0..n).map(|i| Complex64::new(i as f64, 1.0)).collect();
        for cyclic in [false, true] {
            let x = if cyclic {
                solve_cyclic(&a, &b, &c, &d).unwrap()
            } else {
                solve_tridiagonal(&a, &b, &c, &d).unwrap()
            };
            for i in 0..n {
                let mut s = b[i] * x[i];
                if i > 0 {
                    s += a[i] * x[i - 1];
                } else if cyclic {
                    s += a[0] * x[n - 1];
                }
                if i + 1 < n {
                    s += c[i] * x[i + 1];
                } else if cyclic {
                    s += c[n - 1] * x[0];
                }
                assert!((s - d[i]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn free_packet_matches_analytic_spreading() {
        let g = line(1024, 0.05, Boundary::Periodic);
        let sigma0 = 1.0;
        let mut w = WaveField::gaussian(&g, grid_center(&g), sigma0, [0.0; 3]);
        let cn = CrankNicolson::new(&Potential::zero(&g), 1.0, 1.0, 0.005);
        cn.run(&mut w, 400).unwrap();
        let var = w.density().moments().1[0];
        let expected = free_packet_variance(sigma0, 2.0, 1.0, 1.0);
        assert!((var / expected - 1.0).abs() < 0.005, "{var} vs {expected}");
        assert!((w.norm() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn ground_state_is_stationary_and_matches_oscillator() {
        let g = line(200, 0.05, Boundary::Reflecting);
        let a = 0.5;
        let v = Potential::harmonic(&g, a, grid_center(&g));
        let (gs, e) = ground_state(&v, 1.0, 1.0).unwrap();
        let omega = harmonic_frequency(a, 1.0);
        assert!((e - omega / 2.0).abs() < 1e-3, "{e}");
        let width = gs.density().moments().1[0].sqrt();
        assert!((width / harmonic_ground_width(a, 1.0, 1.0) - 1.0).abs() < 1e-3);
        let rho0 = gs.density();
        let mut w = gs.clone();
        let cn = CrankNicolson::new(&v, 1.0, 1.0, 0.01);
        cn.run(&mut w, 1000).unwrap();
        let rho = w.density();
        let peak = rho0.peak();
        let drift = rho0.rho.iter().zip(&rho.rho).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(drift / peak < 1e-6, "{drift}");
    }

    #[test]
    fn two_dimensional_ground_state() {
        let g = GridSpec::new(0.2, 0.01, &[40, 40], Boundary::Reflecting);
        let v = Potential::harmonic(&g, 0.5, grid_center(&g));
        let (gs, e) = ground_state(&v, 1.0, 1.0).unwrap();
        assert!((e - 1.0).abs() < 0.01, "{e}");
        let mut w = gs.clone();
        CrankNicolson::new(&v, 1.0, 1.0, 0.005).run(&mut w, 200).unwrap();
        assert!(gs.fidelity(&w).unwrap() > 1.0 - 1e-6);
    }

    #[test]
    fn constant_potential_shift_leaves_density_unchanged() {
        let g = line(128, 0.1, Boundary::Reflecting);
        let v = Potential::harmonic(&g, 0.3, [4.0, 0.0, 0.0]);
        let w0 = WaveField::gaussian(&g, [6.0, 0.0, 0.0], 1.0, [0.5, 0.0, 0.0]);
        let mut a = w0.clone();
        let mut b = w0.clone();
        CrankNicolson::new(&v, 1.0, 1.0, 0.01).run(&mut a, 200).unwrap();
        CrankNicolson::new(&v.shifted(123.0), 1.0, 1.0, 0.01).run(&mut b, 200).unwrap();
        let (ra, rb) = (a.density(), b.density());
        for (x, y) in ra.rho.iter().zip(&rb.rho) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn visscher_tracks_crank_nicolson() {
        let g = line(256, 0.1, Boundary::Periodic);
        let v = Potential::harmonic(&g, 0.2, grid_center(&g));
        let w0 = WaveField::gaussian(&g, [11.0, 0.0, 0.0], 1.2, [0.0; 3]);
        let vis = Visscher::new(&v, 1.0, 1.0, 0.002);
        assert!(vis.max_dt() > 0.002);
        let mut a = w0.clone();
        let mut b = w0.clone();
        for _ in 0..500 {
            vis.step(&mut a).unwrap();
        }
        CrankNicolson::new(&v, 1.0, 1.0, 0.002).run(&mut b, 500).unwrap();
        let da = a.density().normalized_copy();
        let db = b.density();
        let l1 = crate::fields::l1_distance(&da, &db).unwrap();
        assert!(l1 < 0.02, "{l1}");
    }

    #[test]
    fn plane_wave_current_and_momentum() {
        let g = line(64, 0.1, Boundary::Periodic);
        let k = 2.0 * std::f64::consts::PI * 3.0 / 6.4;
        let w = WaveField::plane_wave(&g, [k, 0.0, 0.0]);
        let p = w.mean_momentum(1.0, 1.0)[0];
        // lattice momentum sin(k dx)/dx
        assert!((p - (k * 0.1).sin() / 0.1).abs() < 1e-10);
        let x = WaveField::gaussian(&g, [3.2, 0.0, 0.0], 0.5, [0.0; 3]);
        assert!(x.mean_momentum(1.0, 1.0)[0].abs() < 1e-12);
    }

    #[test]
    fn energy_of_ground_state() {
        let g = line(160, 0.05, Boundary::Reflecting);
        let v = Potential::harmonic(&g, 0.5, grid_center(&g));
        let (gs, e) = ground_state(&v, 1.0, 1.0).unwrap();
        assert!((gs.energy(&v, 1.0, 1.0).unwrap() - e).abs() < 1e-10);
    }

    #[test]
    fn shifted_potential_examples() {
        use crate::units::{DerivedCoefficients, PhysicalConfig};
        let phys = PhysicalConfig {
            h: 1.0,
            mass: 1.0,
            charge: 0.0,
            c: 1.0,
            n_samples: 100,
            dims: 1,
        };
        let g = line(8, 0.5, Boundary::Periodic);
        let c = DerivedCoefficients::compute(&phys, &g);
        let v = shifted_potential(&Potential::zero(&g), &c);
        assert!(v.values().iter().all(|x| *x == c.alpha));
        let c2 = DerivedCoefficients::compute(&phys, &g.regrained(0.25));
        assert_eq!(c2.alpha / c.alpha, 4.0);
    }

    fn two_cell(a: [f64; 4], v: (f64, f64), gamma: f64) -> TwoCellState {
        TwoCellState {
            psi_r_x: a[0],
            psi_i_x: a[1],
            psi_r_x1: a[2],
            psi_i_x1: a[3],
            v_x: v.0,
            v_x1: v.1,
            gamma,
        }
    }

    #[test]
    fn two_cell_examples() {
        let s = two_cell([0.3, 0.7, 0.0, 0.0], (0.0, 0.4), 1.3);
        let r = s.rhs();
        assert_eq!((r[0], r[1]), (0.0, 0.0));
        let s = two_cell([0.3, 0.7, -0.2, 0.5], (0.6, 0.9), 0.0);
        let r = s.rhs();
        assert_eq!(r, [0.6 * 0.7, -0.6 * 0.3, 0.9 * 0.5, 0.9 * 0.2]);
        assert_eq!(s.drho_dt(), (0.0, -0.0));
        let s = two_cell([1.0, 0.0, 0.0, 1.0], (0.0, 0.0), 1.0);
        assert_eq!(s.drho_dt().0, -2.0);
        let real = two_cell([0.4, 0.0, 0.9, 0.0], (0.1, 0.2), 2.0);
        assert_eq!(real.drho_dt().0, 0.0);
    }

    #[test]
    fn two_cell_conserves_total_density() {
        let s = two_cell([0.3, -0.7, 0.5, 0.2], (0.3, -0.8), 1.7);
        let r = s.rhs();
        let y = s.as_array();
        let total = 2.0 * (y[0] * r[0] + y[1] * r[1] + y[2] * r[2] + y[3] * r[3]);
        assert!(total.abs() < 1e-15);
        let later = s.evolve(3.0, 3000);
        assert!(((later.rho_x() + later.rho_x1()) - (s.rho_x() + s.rho_x1())).abs() < 1e-10);
    }

    #[test]
    fn closed_form_matches_chain_rule_and_equivalence() {
        let s = two_cell([0.3, -0.7, 0.5, 0.2], (0.3, -0.8), 1.7);
        let d = s.d2rho_dt2();
        assert!((d.total() - s.d2rho_dt2_chain()).abs() < 1e-12);
        let dx = 0.1;
        let rep = equivalence_report(&s, &matched_two_cell_coefficients(s.gamma, dx), dx);
        assert!((rep.absolute - d.remainder.abs()).abs() < 1e-12);
        let eq = two_cell([0.3, -0.7, 0.5, 0.2], (0.3, 0.3), 1.7);
        let rep = equivalence_report(&eq, &matched_two_cell_coefficients(eq.gamma, dx), dx);
        assert!(rep.relative < 1e-12);
        let zero = two_cell([0.0; 4], (0.0, 0.0), 1.0);
        let rep = equivalence_report(&zero, &matched_two_cell_coefficients(1.0, dx), dx);
        assert_eq!((rep.quantum, rep.continuum, rep.absolute), (0.0, 0.0, 0.0));
    }
}
