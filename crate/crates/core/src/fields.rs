//! Cell-centered fields shared by the swarm, continuum and reference layers.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::units::GridSpec;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("field grids differ")]
    GridMismatch,
    #[error("field has {got} values, grid has {expected} cells")]
    WrongLength { expected: usize, got: usize },
    #[error("negative density {value} in cell {cell}")]
    NegativeDensity { cell: usize, value: f64 },
}

/// Nonnegative scalar density per cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityField {
    pub grid: GridSpec,
    pub rho: Vec<f64>,
    /// True when `Σ rho·dx^dims` is 1 rather than a sample count.
    pub normalized: bool,
}

impl DensityField {
    pub fn new(grid: GridSpec, rho: Vec<f64>, normalized: bool) -> Result<Self, FieldError> {
        if rho.len() != grid.n_cells() {
            return Err(FieldError::WrongLength {
                expected: grid.n_cells(),
                got: rho.len(),
            });
        }
        if let Some((cell, &value)) = rho.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
            return Err(FieldError::NegativeDensity { cell, value });
        }
        Ok(DensityField {
            grid,
            rho,
            normalized,
        })
    }

    pub fn zeros(grid: &GridSpec) -> Self {
        DensityField {
            grid: grid.clone(),
            rho: vec![0.0; grid.n_cells()],
            normalized: false,
        }
    }

    /// Evaluate `f` at cell centers and normalize.
    pub fn from_fn(grid: &GridSpec, f: impl Fn([f64; 3]) -> f64) -> Result<Self, FieldError> {
        let rho = (0..grid.n_cells()).map(|i| f(grid.cell_center(i))).collect();
        let mut field = DensityField::new(grid.clone(), rho, false)?;
        field.normalize();
        Ok(field)
    }

    pub fn uniform(grid: &GridSpec) -> Self {
        let n = grid.n_cells();
        let v = 1.0 / (n as f64 * grid.cell_volume());
        DensityField {
            grid: grid.clone(),
            rho: vec![v; n],
            normalized: true,
        }
    }

    /// All mass in one cell.
    pub fn point_mass(grid: &GridSpec, cell: usize) -> Self {
        let mut rho = vec![0.0; grid.n_cells()];
        rho[cell] = 1.0 / grid.cell_volume();
        DensityField {
            grid: grid.clone(),
            rho,
            normalized: true,
        }
    }

    /// `Σ rho · dx^dims`.
    pub fn mass(&self) -> f64 {
        self.rho.iter().sum::<f64>() * self.grid.cell_volume()
    }

    pub fn normalize(&mut self) {
        let m = self.mass();
        if m > 0.0 {
            for r in &mut self.rho {
                *r /= m;
            }
        }
        self.normalized = true;
    }

    pub fn normalized_copy(&self) -> Self {
        let mut out = self.clone();
        out.normalize();
        out
    }

    /// Per-cell probabilities `rho · dx^dims / mass`.
    pub fn probabilities(&self) -> Vec<f64> {
        let total: f64 = self.rho.iter().sum();
        if total == 0.0 {
            return vec![0.0; self.rho.len()];
        }
        self.rho.iter().map(|r| r / total).collect()
    }

    pub fn peak(&self) -> f64 {
        self.rho.iter().cloned().fold(0.0, f64::max)
    }

    /// Mean position and variance per axis (ignores periodic wrap).
    pub fn moments(&self) -> ([f64; 3], [f64; 3]) {
        let probs = self.probabilities();
        let mut mean = [0.0; 3];
        let mut second = [0.0; 3];
        for (i, p) in probs.iter().enumerate() {
            let c = self.grid.cell_center(i);
            for a in 0..self.grid.dims {
                mean[a] += p * c[a];
                second[a] += p * c[a] * c[a];
            }
        }
        let mut var = [0.0; 3];
        for a in 0..self.grid.dims {
            var[a] = second[a] - mean[a] * mean[a];
        }
        (mean, var)
    }
}

/// Impulse density per cell, one component per active axis (inactive ones stay zero).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpulseField {
    pub grid: GridSpec,
    pub p: [Vec<f64>; 3],
}

impl ImpulseField {
    pub fn zeros(grid: &GridSpec) -> Self {
        let n = grid.n_cells();
        ImpulseField {
            grid: grid.clone(),
            p: [vec![0.0; n], vec![0.0; n], vec![0.0; n]],
        }
    }

    pub fn from_fn(grid: &GridSpec, f: impl Fn([f64; 3]) -> [f64; 3]) -> Self {
        let mut out = ImpulseField::zeros(grid);
        for i in 0..grid.n_cells() {
            let v = f(grid.cell_center(i));
            for a in 0..grid.dims {
                out.p[a][i] = v[a];
            }
        }
        out
    }

    pub fn at(&self, cell: usize) -> [f64; 3] {
        [self.p[0][cell], self.p[1][cell], self.p[2][cell]]
    }

    /// `Σ p · dx^dims` per axis.
    pub fn total(&self) -> [f64; 3] {
        let vol = self.grid.cell_volume();
        let mut out = [0.0; 3];
        for (a, slot) in out.iter_mut().enumerate().take(self.grid.dims) {
            *slot = self.p[a].iter().sum::<f64>() * vol;
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.p.iter().all(|c| c.iter().all(|v| v.is_finite()))
    }
}

/// Mean velocity per cell, used to seed moving samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelocityField {
    pub grid: GridSpec,
    pub v: [Vec<f64>; 3],
}

impl VelocityField {
    pub fn from_fn(grid: &GridSpec, f: impl Fn([f64; 3]) -> [f64; 3]) -> Self {
        let n = grid.n_cells();
        let mut v = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        for i in 0..n {
            let val = f(grid.cell_center(i));
            for a in 0..grid.dims {
                v[a][i] = val[a];
            }
        }
        VelocityField {
            grid: grid.clone(),
            v,
        }
    }
}

/// External potential energy on cells plus its central-difference gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Potential {
    grid: GridSpec,
    values: Vec<f64>,
    grad: [Vec<f64>; 3],
}

impl Potential {
    pub fn new(grid: &GridSpec, values: Vec<f64>) -> Result<Self, FieldError> {
        if values.len() != grid.n_cells() {
            return Err(FieldError::WrongLength {
                expected: grid.n_cells(),
                got: values.len(),
            });
        }
        let grad = central_gradient(grid, &values);
        Ok(Potential {
            grid: grid.clone(),
            values,
            grad,
        })
    }

    pub fn zero(grid: &GridSpec) -> Self {
        Potential::new(grid, vec![0.0; grid.n_cells()]).expect("length matches")
    }

    pub fn from_fn(grid: &GridSpec, f: impl Fn([f64; 3]) -> f64) -> Self {
        let values = (0..grid.n_cells()).map(|i| f(grid.cell_center(i))).collect();
        Potential::new(grid, values).expect("length matches")
    }

    /// `a · |r − center|²`.
    pub fn harmonic(grid: &GridSpec, a: f64, center: [f64; 3]) -> Self {
        let dims = grid.dims;
        Potential::from_fn(grid, |r| {
            (0..dims).map(|k| (r[k] - center[k]).powi(2)).sum::<f64>() * a
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn grad(&self, axis: usize) -> &[f64] {
        &self.grad[axis]
    }

    pub fn grad_at(&self, cell: usize) -> [f64; 3] {
        [self.grad[0][cell], self.grad[1][cell], self.grad[2][cell]]
    }

    /// Replace the values; the gradient is recomputed.
    pub fn set_values(&mut self, values: Vec<f64>) -> Result<(), FieldError> {
        *self = Potential::new(&self.grid, values)?;
        Ok(())
    }

    pub fn shifted(&self, shift: f64) -> Potential {
        Potential::new(&self.grid, self.values.iter().map(|v| v + shift).collect())
            .expect("length matches")
    }

    pub fn scaled(&self, factor: f64) -> Potential {
        Potential::new(&self.grid, self.values.iter().map(|v| v * factor).collect())
            .expect("length matches")
    }

    pub fn is_flat(&self) -> bool {
        self.grad.iter().all(|g| g.iter().all(|v| *v == 0.0))
    }
}

/// Central-difference gradient; reflecting edges mirror the boundary cell.
pub fn central_gradient(grid: &GridSpec, f: &[f64]) -> [Vec<f64>; 3] {
    let n = grid.n_cells();
    let mut out = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let inv = 1.0 / (2.0 * grid.dx);
    for (axis, comp) in out.iter_mut().enumerate().take(grid.dims) {
        for (i, slot) in comp.iter_mut().enumerate() {
            let up = grid.neighbor(i, axis, 1).unwrap_or(i);
            let down = grid.neighbor(i, axis, -1).unwrap_or(i);
            *slot = (f[up] - f[down]) * inv;
        }
    }
    out
}

/// Net outward face flux per unit volume: each face carries the average of
/// the two adjacent cell values; reflecting boundary faces carry nothing.
pub fn face_flux_divergence(grid: &GridSpec, comps: &[Vec<f64>; 3]) -> Vec<f64> {
    let n = grid.n_cells();
    let mut out = vec![0.0; n];
    let inv = 1.0 / grid.dx;
    for (axis, comp) in comps.iter().enumerate().take(grid.dims) {
        for (i, slot) in out.iter_mut().enumerate() {
            let plus = grid.neighbor(i, axis, 1).map_or(0.0, |j| 0.5 * (comp[i] + comp[j]));
            let minus = grid.neighbor(i, axis, -1).map_or(0.0, |j| 0.5 * (comp[i] + comp[j]));
            *slot += (plus - minus) * inv;
        }
    }
    out
}

pub(crate) fn same_grid(a: &GridSpec, b: &GridSpec) -> Result<(), FieldError> {
    if a.extent == b.extent && a.dims == b.dims && a.dx == b.dx && a.boundary == b.boundary {
        Ok(())
    } else {
        Err(FieldError::GridMismatch)
    }
}

/// Normalized 1-D/2-D/3-D Gaussian density with per-axis standard deviation `sigma`.
pub fn gaussian_density(grid: &GridSpec, center: [f64; 3], sigma: f64) -> DensityField {
    let dims = grid.dims;
    DensityField::from_fn(grid, |r| {
        let q: f64 = (0..dims).map(|k| (r[k] - center[k]).powi(2)).sum();
        (-q / (2.0 * sigma * sigma)).exp()
    })
    .expect("gaussian is nonnegative")
}

/// Domain center.
pub fn grid_center(grid: &GridSpec) -> [f64; 3] {
    let mut c = [0.0; 3];
    for (a, slot) in c.iter_mut().enumerate().take(grid.dims) {
        *slot = 0.5 * grid.length(a);
    }
    c
}

/// L1 distance `Σ|a−b|·dx^dims` between two densities on one grid.
pub fn l1_distance(a: &DensityField, b: &DensityField) -> Result<f64, FieldError> {
    same_grid(&a.grid, &b.grid)?;
    let vol = a.grid.cell_volume();
    Ok(a.rho.iter().zip(&b.rho).map(|(x, y)| (x - y).abs()).sum::<f64>() * vol)
}

/// L2 distance `(Σ|a−b|²·dx^dims)^½`.
pub fn l2_distance(a: &DensityField, b: &DensityField) -> Result<f64, FieldError> {
    same_grid(&a.grid, &b.grid)?;
    let vol = a.grid.cell_volume();
    Ok((a.rho.iter().zip(&b.rho).map(|(x, y)| (x - y).powi(2)).sum::<f64>() * vol).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::Boundary;

    fn grid1(n: usize, boundary: Boundary) -> GridSpec {
        GridSpec::new(0.5, 0.01, &[n], boundary)
    }

    #[test]
    fn gradient_of_linear_field_is_exact_in_the_interior() {
        let g = grid1(10, Boundary::Reflecting);
        let f: Vec<f64> = (0..10).map(|i| 3.0 * i as f64).collect();
        let grad = central_gradient(&g, &f);
        for v in &grad[0][1..9] {
            assert!((v - 6.0).abs() < 1e-12);
        }
        // mirrored edges see half the slope
        assert!((grad[0][0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn divergence_of_constant_vanishes_on_periodic_grid() {
        let g = GridSpec::new(0.3, 0.01, &[5, 4], Boundary::Periodic);
        let n = g.n_cells();
        let comps = [vec![1.7; n], vec![-0.4; n], vec![0.0; n]];
        assert!(face_flux_divergence(&g, &comps).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn density_constructors() {
        let g = grid1(8, Boundary::Periodic);
        assert!((DensityField::uniform(&g).mass() - 1.0).abs() < 1e-12);
        let p = DensityField::point_mass(&g, 3);
        assert_eq!(p.probabilities()[3], 1.0);
        assert!(DensityField::new(g.clone(), vec![-1.0; 8], false).is_err());
        let gauss = gaussian_density(&g, grid_center(&g), 0.7);
        assert!((gauss.mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn potential_gradient_tracks_values() {
        let g = grid1(6, Boundary::Periodic);
        let mut v = Potential::zero(&g);
        assert!(v.is_flat());
        v.set_values((0..6).map(|i| (i * i) as f64).collect()).unwrap();
        assert!(!v.is_flat());
        assert_eq!(v.grad(0)[2], (9.0 - 1.0) / 1.0);
        assert!(v.set_values(vec![0.0; 3]).is_err());
    }
}
