//! Relative phase from the state pair (ρ, p̄).
//!
//! Across a face between cells `a` and `b`,
//! `φ(a) − φ(b) = arcsin(k dx² p̄·(r_a − r_b) / √(ρ_a ρ_b))`, with `p̄` the
//! face average of the cell impulse densities. Phases are accumulated along
//! a breadth-first spanning tree.

use std::collections::VecDeque;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fields::{same_grid, DensityField, FieldError, ImpulseField};
use crate::quantum::WaveField;
use crate::units::{Boundary, GridSpec};

#[derive(Debug, Error)]
pub enum PhaseError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("cells {a} and {b} are not adjacent")]
    NotAdjacent { a: usize, b: usize },
    #[error("density below the node floor in cell {cell}")]
    NodeCell { cell: usize },
    #[error("contour crosses a node at cell {cell} in frame {frame}")]
    NodeCrossing { frame: usize, cell: usize },
    #[error("k calibration did not converge (residual {residual:e})")]
    CalibrationDiverged { residual: f64 },
    #[error("contour is empty or not closed")]
    BadContour,
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// One link increment `φ(a) − φ(b)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkPhase {
    pub value: f64,
    /// The arcsin argument left `[−1, 1]` and was clipped.
    pub clipped: bool,
}

pub fn link_phase(
    rho: &DensityField,
    p: &ImpulseField,
    a: usize,
    b: usize,
    k_cal: f64,
    floor: f64,
) -> Result<LinkPhase, PhaseError> {
    let grid = &rho.grid;
    let (axis, step) = grid.adjacency(a, b).ok_or(PhaseError::NotAdjacent { a, b })?;
    for cell in [a, b] {
        if !(rho.rho[cell] > floor) {
            return Err(PhaseError::NodeCell { cell });
        }
    }
    let p_face = 0.5 * (p.p[axis][a] + p.p[axis][b]);
    let sep = -(step as f64) * grid.dx;
    let arg = k_cal * grid.dx * grid.dx * p_face * sep / (rho.rho[a] * rho.rho[b]).sqrt();
    let clipped = arg.abs() > 1.0;
    Ok(LinkPhase {
        value: arg.clamp(-1.0, 1.0).asin(),
        clipped,
    })
}

/// `k = 1/(h dx²)`, which makes plane-wave links exact for the lattice current.
pub fn analytic_k(h: f64, dx: f64) -> f64 {
    1.0 / (h * dx * dx)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseField {
    pub grid: GridSpec,
    /// Accumulated phase; not wrapped.
    pub phi: Vec<f64>,
    pub defined: Vec<bool>,
    /// Origin of each connected component; the first is the requested reference.
    pub origins: Vec<usize>,
    pub k_cal: f64,
    pub clipped_links: u64,
}

impl PhaseField {
    pub fn ref_cell(&self) -> usize {
        self.origins[0]
    }

    pub fn disconnected(&self) -> bool {
        self.origins.len() > 1
    }

    /// Phases wrapped into `(−π, π]`.
    pub fn wrapped(&self) -> Vec<f64> {
        self.phi.iter().map(|p| wrap(*p)).collect()
    }

    /// CSV table `ix,iy,iz,phi,defined_flag`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), PhaseError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["ix", "iy", "iz", "phi", "defined_flag"])?;
        for i in 0..self.grid.n_cells() {
            let c = self.grid.coords(i);
            w.serialize((c[0], c[1], c[2], self.phi[i], self.defined[i] as u8))?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// Wrap into `(−π, π]`.
pub fn wrap(x: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut y = x.rem_euclid(two_pi);
    if y > std::f64::consts::PI {
        y -= two_pi;
    }
    y
}

/// Accumulate link phases breadth-first from `ref_cell`. Cells at or below
/// `floor` are nodes and stay undefined; unreachable supported regions get
/// their own origin.
pub fn reconstruct_phase(
    rho: &DensityField,
    p: &ImpulseField,
    ref_cell: usize,
    k_cal: f64,
    floor: f64,
) -> Result<PhaseField, PhaseError> {
    let grid = rho.grid.clone();
    same_grid(&grid, &p.grid)?;
    let n = grid.n_cells();
    let mut phi = vec![0.0; n];
    let mut defined = vec![false; n];
    let mut origins = Vec::new();
    let mut clipped = 0u64;
    let mut queue = VecDeque::new();
    let seeds = std::iter::once(ref_cell).chain(0..n);
    for seed in seeds {
        if defined[seed] || !(rho.rho[seed] > floor) {
            continue;
        }
        origins.push(seed);
        defined[seed] = true;
        queue.push_back(seed);
        while let Some(a) = queue.pop_front() {
            for axis in 0..grid.dims {
                for step in [1isize, -1] {
                    let Some(b) = grid.neighbor(a, axis, step) else { continue };
                    if defined[b] || !(rho.rho[b] > floor) {
                        continue;
                    }
                    let link = link_phase(rho, p, a, b, k_cal, floor)?;
                    clipped += link.clipped as u64;
                    phi[b] = phi[a] - link.value;
                    defined[b] = true;
                    queue.push_back(b);
                }
            }
        }
    }
    if origins.is_empty() {
        return Err(PhaseError::NodeCell { cell: ref_cell });
    }
    if origins.len() > 1 {
        log::info!("phase support splits into {} components", origins.len());
    }
    Ok(PhaseField {
        grid,
        phi,
        defined,
        origins,
        k_cal,
        clipped_links: clipped,
    })
}

/// `√ρ e^{iφ}`; undefined cells keep zero phase.
pub fn reconstruct_wave(rho: &DensityField, phase: &PhaseField) -> WaveField {
    let values: Vec<num_complex::Complex64> = rho
        .rho
        .iter()
        .zip(&phase.phi)
        .map(|(r, p)| num_complex::Complex64::from_polar(r.sqrt(), *p))
        .collect();
    WaveField::from_complex(&rho.grid, &values)
}

/// Ordered chain of face-adjacent cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contour {
    pub cells: Vec<usize>,
    pub closed: bool,
}

impl Contour {
    pub fn new(grid: &GridSpec, cells: Vec<usize>, closed: bool) -> Result<Self, PhaseError> {
        if cells.is_empty() {
            return Err(PhaseError::BadContour);
        }
        for w in cells.windows(2) {
            grid.adjacency(w[0], w[1]).ok_or(PhaseError::NotAdjacent { a: w[0], b: w[1] })?;
        }
        if closed && cells.first() != cells.last() {
            return Err(PhaseError::BadContour);
        }
        Ok(Contour { cells, closed })
    }

    /// L-shaped lattice path from `from` to `to`, walking axes in `order`.
    pub fn lattice_path(grid: &GridSpec, from: [usize; 3], to: [usize; 3], order: &[usize]) -> Self {
        let mut c = from;
        let mut cells = vec![grid.linear_index(c)];
        for &axis in order {
            while c[axis] != to[axis] {
                if c[axis] < to[axis] {
                    c[axis] += 1;
                } else {
                    c[axis] -= 1;
                }
                cells.push(grid.linear_index(c));
            }
        }
        Contour {
            cells,
            closed: false,
        }
    }

    /// Counter-clockwise rectangle in the x–y plane with corners `lo`, `hi`.
    pub fn rectangle(grid: &GridSpec, lo: [usize; 2], hi: [usize; 2]) -> Self {
        let mut cells = Vec::new();
        let at = |x: usize, y: usize| grid.linear_index([x, y, 0]);
        for x in lo[0]..hi[0] {
            cells.push(at(x, lo[1]));
        }
        for y in lo[1]..hi[1] {
            cells.push(at(hi[0], y));
        }
        for x in (lo[0] + 1..=hi[0]).rev() {
            cells.push(at(x, hi[1]));
        }
        for y in (lo[1] + 1..=hi[1]).rev() {
            cells.push(at(lo[0], y));
        }
        cells.push(at(lo[0], lo[1]));
        Contour {
            cells,
            closed: true,
        }
    }
}

/// `φ(end) − φ(start)` along a contour.
pub fn path_phase(
    rho: &DensityField,
    p: &ImpulseField,
    contour: &Contour,
    k_cal: f64,
    floor: f64,
) -> Result<f64, PhaseError> {
    let mut acc = 0.0;
    for w in contour.cells.windows(2) {
        acc -= link_phase(rho, p, w[0], w[1], k_cal, floor)?.value;
    }
    Ok(acc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathReport {
    /// Raw path differences.
    pub differences: Vec<f64>,
    /// Whole turns in each difference.
    pub windings: Vec<i64>,
    /// Largest difference after removing whole turns.
    pub max_deviation: f64,
}

/// Compare alternative paths with shared endpoints, modulo 2π.
pub fn path_independence_check(
    rho: &DensityField,
    p: &ImpulseField,
    pairs: &[(Contour, Contour)],
    k_cal: f64,
    floor: f64,
) -> Result<PathReport, PhaseError> {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut rep = PathReport {
        differences: Vec::new(),
        windings: Vec::new(),
        max_deviation: 0.0,
    };
    for (a, b) in pairs {
        let d = path_phase(rho, p, a, k_cal, floor)? - path_phase(rho, p, b, k_cal, floor)?;
        rep.differences.push(d);
        rep.windings.push((d / two_pi).round() as i64);
        rep.max_deviation = rep.max_deviation.max(wrap(d).abs());
    }
    Ok(rep)
}

/// `∮ v·dl` with `v = p̄_face / ρ_face` on each link.
pub fn circulation(
    rho: &DensityField,
    p: &ImpulseField,
    contour: &Contour,
    floor: f64,
) -> Result<f64, PhaseError> {
    if !contour.closed {
        return Err(PhaseError::BadContour);
    }
    let grid = &rho.grid;
    let mut acc = 0.0;
    for w in contour.cells.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (axis, step) = grid.adjacency(a, b).ok_or(PhaseError::NotAdjacent { a, b })?;
        for cell in [a, b] {
            if !(rho.rho[cell] > floor) {
                return Err(PhaseError::NodeCell { cell });
            }
        }
        let v = (p.p[axis][a] + p.p[axis][b]) / (rho.rho[a] + rho.rho[b]);
        acc += v * step as f64 * grid.dx;
    }
    Ok(acc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CirculationReport {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// Least-squares slope of circulation against time.
    pub drift: f64,
    pub max_abs: f64,
}

/// Circulation per frame and its drift rate.
pub fn circulation_drift(
    frames: &[(f64, DensityField, ImpulseField)],
    contour: &Contour,
    floor: f64,
) -> Result<CirculationReport, PhaseError> {
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (i, (t, rho, p)) in frames.iter().enumerate() {
        let c = circulation(rho, p, contour, floor).map_err(|e| match e {
            PhaseError::NodeCell { cell } => PhaseError::NodeCrossing { frame: i, cell },
            other => other,
        })?;
        times.push(*t);
        values.push(c);
    }
    let n = times.len() as f64;
    let tm = times.iter().sum::<f64>() / n;
    let vm = values.iter().sum::<f64>() / n;
    let num: f64 = times.iter().zip(&values).map(|(t, v)| (t - tm) * (v - vm)).sum();
    let den: f64 = times.iter().map(|t| (t - tm).powi(2)).sum();
    Ok(CirculationReport {
        drift: if den > 0.0 { num / den } else { 0.0 },
        max_abs: values.iter().fold(0.0, |m, v| m.max(v.abs())),
        times,
        values,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KCalibration {
    pub k_cal: f64,
    /// Relative slope error on the fitting wave.
    pub residual: f64,
    pub wavenumber: f64,
}

/// Slope of the reconstructed phase for `e^{iKx}` on a 1-D line at grain
/// `dx`, fitted over interior cells.
pub fn plane_wave_slope(dx: f64, cells: usize, wavenumber: f64, h: f64, mass: f64, k_cal: f64) -> Result<f64, PhaseError> {
    let grid = GridSpec::new(dx, dx, &[cells], Boundary::Reflecting);
    let w = WaveField::plane_wave(&grid, [wavenumber, 0.0, 0.0]);
    let rho = w.density();
    let p = w.impulse_density(h, mass);
    let field = reconstruct_phase(&rho, &p, 0, k_cal, 0.0)?;
    // Wall cells see a one-sided current; leave them out.
    let xs: Vec<(f64, f64)> = (2..cells - 2).map(|i| (grid.cell_center(i)[0], field.phi[i])).collect();
    let n = xs.len() as f64;
    let xm = xs.iter().map(|p| p.0).sum::<f64>() / n;
    let ym = xs.iter().map(|p| p.1).sum::<f64>() / n;
    let num: f64 = xs.iter().map(|(x, y)| (x - xm) * (y - ym)).sum();
    let den: f64 = xs.iter().map(|(x, _)| (x - xm).powi(2)).sum();
    Ok(num / den)
}

/// Fit `k` so a plane wave of wavenumber `K` reconstructs with slope `K`.
/// The slope is monotone in `k`, so bisection on a bracket around the
/// analytic value suffices.
pub fn calibrate_k(dx: f64, wavenumber: f64, h: f64, mass: f64) -> Result<KCalibration, PhaseError> {
    let cells = 64;
    let guess = analytic_k(h, dx);
    let slope = |k: f64| plane_wave_slope(dx, cells, wavenumber, h, mass, k);
    let (mut lo, mut hi) = (0.0, 4.0 * guess);
    if slope(hi)? < wavenumber {
        return Err(PhaseError::CalibrationDiverged {
            residual: 1.0 - slope(hi)? / wavenumber,
        });
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if slope(mid)? < wavenumber {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo) <= 1e-14 * hi {
            break;
        }
    }
    let k = 0.5 * (lo + hi);
    let residual = (slope(k)? / wavenumber - 1.0).abs();
    if residual > 0.01 {
        return Err(PhaseError::CalibrationDiverged { residual });
    }
    Ok(KCalibration {
        k_cal: k,
        residual,
        wavenumber,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{gaussian_density, grid_center};

    #[test]
    fn zero_impulse_gives_zero_phase() {
        let g = GridSpec::new(0.2, 0.01, &[10, 10], Boundary::Periodic);
        let rho = gaussian_density(&g, grid_center(&g), 0.6);
        let p = ImpulseField::zeros(&g);
        let f = reconstruct_phase(&rho, &p, 0, 1.0, 0.0).unwrap();
        assert!(f.phi.iter().all(|x| *x == 0.0));
        assert_eq!(link_phase(&rho, &p, 0, 1, 1.0, 0.0).unwrap().value, 0.0);
    }

    #[test]
    fn link_is_antisymmetric() {
        let g = GridSpec::new(0.2, 0.01, &[8], Boundary::Periodic);
        let rho = DensityField::uniform(&g);
        let p = ImpulseField::from_fn(&g, |r| [0.3 * r[0], 0.0, 0.0]);
        let ab = link_phase(&rho, &p, 2, 3, 4.0, 0.0).unwrap().value;
        let ba = link_phase(&rho, &p, 3, 2, 4.0, 0.0).unwrap().value;
        assert_eq!(ab, -ba);
        assert!(matches!(
            link_phase(&rho, &p, 2, 5, 4.0, 0.0),
            Err(PhaseError::NotAdjacent { .. })
        ));
        let mut holes = rho.clone();
        holes.rho[3] = 0.0;
        assert!(matches!(
            link_phase(&holes, &p, 2, 3, 4.0, 0.0),
            Err(PhaseError::NodeCell { cell: 3 })
        ));
    }

    #[test]
    fn clipping_is_counted() {
        let g = GridSpec::new(1.0, 0.01, &[4], Boundary::Reflecting);
        let rho = DensityField::uniform(&g);
        let p = ImpulseField::from_fn(&g, |_| [10.0, 0.0, 0.0]);
        let f = reconstruct_phase(&rho, &p, 0, 1.0, 0.0).unwrap();
        assert_eq!(f.clipped_links, 3);
        assert!((f.phi[1] - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
    }

    #[test]
    fn plane_wave_slope_is_exact_at_analytic_k() {
        for kdx in [0.05, 0.1, 0.3] {
            let dx = 0.1;
            let s = plane_wave_slope(dx, 64, kdx / dx, 1.0, 1.0, analytic_k(1.0, dx)).unwrap();
            assert!((s * dx / kdx - 1.0).abs() < 1e-10, "{kdx}: {s}");
        }
    }

    #[test]
    fn calibration_transfers_and_scales_with_grain() {
        let a = calibrate_k(0.1, 1.0, 1.0, 1.0).unwrap();
        assert!(a.residual < 0.01);
        let s = plane_wave_slope(0.1, 64, 3.0, 1.0, 1.0, a.k_cal).unwrap();
        assert!((s / 3.0 - 1.0).abs() < 0.02);
        let b = calibrate_k(0.05, 2.0, 1.0, 1.0).unwrap();
        assert!((b.k_cal / a.k_cal - 4.0).abs() < 0.4);
    }

    #[test]
    fn disconnected_support_gets_two_origins() {
        let g = GridSpec::new(1.0, 0.01, &[7], Boundary::Reflecting);
        let mut rho = DensityField::uniform(&g);
        rho.rho[3] = 0.0;
        let f = reconstruct_phase(&rho, &ImpulseField::zeros(&g), 1, 1.0, 1e-9).unwrap();
        assert_eq!(f.origins, vec![1, 4]);
        assert!(!f.defined[3] && f.disconnected());
    }

    #[test]
    fn gradient_field_is_path_independent() {
        let g = GridSpec::new(0.25, 0.01, &[12, 12], Boundary::Reflecting);
        let rho = DensityField::uniform(&g);
        // curl-free impulse along x only
        let mut p = ImpulseField::zeros(&g);
        for i in 0..g.n_cells() {
            let c = g.cell_center(i);
            p.p[0][i] = 0.05 * (c[0] - 1.5);
            p.p[1][i] = 0.0;
        }
        let pairs = vec![
            (
                Contour::lattice_path(&g, [1, 1, 0], [9, 8, 0], &[0, 1]),
                Contour::lattice_path(&g, [1, 1, 0], [9, 8, 0], &[1, 0]),
            ),
            (
                Contour::lattice_path(&g, [2, 2, 0], [5, 5, 0], &[0, 1]),
                Contour::lattice_path(&g, [2, 2, 0], [5, 5, 0], &[0, 1]),
            ),
        ];
        let rep = path_independence_check(&rho, &p, &pairs, 3.0, 0.0).unwrap();
        assert!(rep.max_deviation < 1e-12, "{:?}", rep);
        assert_eq!(rep.differences[1], 0.0);
    }

    #[test]
    fn vortex_loop_winds_once() {
        let n = 41;
        let dx = 0.25;
        let g = GridSpec::new(dx, 0.01, &[n, n], Boundary::Reflecting);
        let c = grid_center(&g);
        let w = WaveField::from_fn(&g, |r| {
            let (x, y) = (r[0] - c[0], r[1] - c[1]);
            let rr = (x * x + y * y).sqrt();
            num_complex::Complex64::from_polar(rr * (-rr * rr / 8.0).exp(), y.atan2(x))
        });
        let rho = w.density();
        let p = w.impulse_density(1.0, 1.0);
        let mid = n / 2;
        let k = analytic_k(1.0, dx);
        let up = {
            let mut cells = Contour::lattice_path(&g, [mid - 6, mid, 0], [mid - 6, mid + 6, 0], &[1]).cells;
            cells.extend(Contour::lattice_path(&g, [mid - 6, mid + 6, 0], [mid + 6, mid + 6, 0], &[0]).cells.into_iter().skip(1));
            cells.extend(Contour::lattice_path(&g, [mid + 6, mid + 6, 0], [mid + 6, mid, 0], &[1]).cells.into_iter().skip(1));
            Contour::new(&g, cells, false).unwrap()
        };
        let down = {
            let mut cells = Contour::lattice_path(&g, [mid - 6, mid, 0], [mid - 6, mid - 6, 0], &[1]).cells;
            cells.extend(Contour::lattice_path(&g, [mid - 6, mid - 6, 0], [mid + 6, mid - 6, 0], &[0]).cells.into_iter().skip(1));
            cells.extend(Contour::lattice_path(&g, [mid + 6, mid - 6, 0], [mid + 6, mid, 0], &[1]).cells.into_iter().skip(1));
            Contour::new(&g, cells, false).unwrap()
        };
        let rep = path_independence_check(&rho, &p, &[(down, up)], k, 1e-12).unwrap();
        assert_eq!(rep.windings, vec![1], "{:?}", rep);
        assert!(rep.max_deviation < 0.3, "{:?}", rep);
    }

    #[test]
    fn static_state_has_zero_circulation() {
        let g = GridSpec::new(0.25, 0.01, &[16, 16], Boundary::Reflecting);
        let rho = gaussian_density(&g, grid_center(&g), 1.0);
        let loop_ = Contour::rectangle(&g, [4, 4], [11, 10]);
        assert!(Contour::new(&g, loop_.cells.clone(), true).is_ok());
        let c = circulation(&rho, &ImpulseField::zeros(&g), &loop_, 0.0).unwrap();
        assert_eq!(c, 0.0);
        // a uniform flow has zero circulation around any loop
        let p = ImpulseField::from_fn(&g, |_| [0.2, -0.1, 0.0]);
        let flat = DensityField::uniform(&g);
        assert!(circulation(&flat, &p, &loop_, 0.0).unwrap().abs() < 1e-12);
    }

    #[test]
    fn drift_of_constant_trace_is_zero() {
        let g = GridSpec::new(0.25, 0.01, &[8, 8], Boundary::Reflecting);
        let rho = gaussian_density(&g, grid_center(&g), 1.0);
        let loop_ = Contour::rectangle(&g, [2, 2], [5, 5]);
        let frames: Vec<_> = (0..5).map(|i| (i as f64, rho.clone(), ImpulseField::zeros(&g))).collect();
        let rep = circulation_drift(&frames, &loop_, 0.0).unwrap();
        assert_eq!(rep.drift, 0.0);
        let mut holes = rho.clone();
        holes.rho[g.linear_index([2, 2, 0])] = 0.0;
        let frames = vec![(0.0, rho.clone(), ImpulseField::zeros(&g)), (1.0, holes, ImpulseField::zeros(&g))];
        assert!(matches!(
            circulation_drift(&frames, &loop_, 1e-12),
            Err(PhaseError::NodeCrossing { frame: 1, .. })
        ));
    }
}
