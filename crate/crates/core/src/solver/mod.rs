//! Ground-truth frequency-domain field solver.
//!
//! Solves the 2D transverse-magnetic scalar reduction of the wave equation,
//!
//! ```text
//! ∇·(μ_r⁻¹ ∇E_z) + k₀²(ε_r − jσ/(ωε₀))E_z = jωμ₀J_z
//! ```
//!
//! on the phantom raster with a stretched-coordinate PML border. Time
//! convention is e^{+jωt}, so passive media have Im(ε) ≤ 0 and the outgoing
//! free-space solution is E_z = −(ωμ₀/4)H₀⁽²⁾(k₀r)I.
//!
//! The discrete operator is a five-point stencil with μ_r⁻¹ harmonically
//! averaged on cell faces. The equation is multiplied through by s_x s_y so
//! the operator stays complex-symmetric, which is what makes source/probe
//! reciprocity hold to solver precision.

mod bessel;
mod bicgstab;
mod dense;

pub use bessel::{bessel_j0, bessel_y0};

use std::fmt;
use std::time::Instant;

use num_complex::Complex64;

use crate::constants::{C0, EPS0, MU0};
use crate::phantom::{AntennaPlacement, MaterialTable, PhantomError, TissueLabelGrid};

/// Default iteration cap for [`compute_field`].
pub const DEFAULT_MAX_ITERATIONS: usize = 50_000;

#[derive(Debug, Clone, PartialEq)]
pub enum SolverError {
    MissingMaterial { label: u8 },
    FrequencyMismatch { system_hz: f64, table_hz: f64 },
    SourceInPml { i: usize, j: usize, thickness: usize },
    SourceNotBackground { i: usize, j: usize, label: u8 },
    SourceOutOfBounds { i: usize, j: usize },
    PmlTooThick { thickness: usize, width: usize, height: usize },
    BadPml(String),
    InvalidTolerance(f64),
    NoConvergence { iterations: usize, best_residual: f64 },
    IluBreakdown { row: usize },
    TooLargeForDense { cells: usize, max: usize },
    SingularDense { row: usize },
    NonFiniteSolution,
    InvalidDistance(f64),
    InvalidRefinement(usize),
    Phantom(PhantomError),
}

impl fmt::Display for SolverError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SolverError::MissingMaterial { label } => {
                write!(f, "no material row for tissue label {label}")
            }
            SolverError::FrequencyMismatch { system_hz, table_hz } => write!(
                f,
                "assembly at {system_hz} Hz with a material table for {table_hz} Hz"
            ),
            SolverError::SourceInPml { i, j, thickness } => write!(
                f,
                "source cell ({i}, {j}) lies inside the {thickness}-cell PML border"
            ),
            SolverError::SourceNotBackground { i, j, label } => {
                write!(f, "source cell ({i}, {j}) carries tissue label {label}")
            }
            SolverError::SourceOutOfBounds { i, j } => {
                write!(f, "source cell ({i}, {j}) outside grid")
            }
            SolverError::PmlTooThick { thickness, width, height } => write!(
                f,
                "PML thickness {thickness} too large for {width}x{height} grid"
            ),
            SolverError::BadPml(msg) => write!(f, "invalid PML config: {msg}"),
            SolverError::InvalidTolerance(t) => {
                write!(f, "tolerance must be in (0, 1), got {t}")
            }
            SolverError::NoConvergence { iterations, best_residual } => write!(
                f,
                "no convergence after {iterations} iterations; best relative residual {best_residual:.3e}"
            ),
            SolverError::IluBreakdown { row } => {
                write!(f, "ILU(0) factorization hit a zero pivot at row {row}")
            }
            SolverError::TooLargeForDense { cells, max } => {
                write!(f, "dense solve limited to {max} cells, got {cells}")
            }
            SolverError::SingularDense { row } => {
                write!(f, "dense factorization found a zero pivot at row {row}")
            }
            SolverError::NonFiniteSolution => write!(f, "solution contains NaN or Inf"),
            SolverError::InvalidDistance(d) => {
                write!(f, "line-source distance must be positive, got {d}")
            }
            SolverError::InvalidRefinement(r) => {
                write!(f, "refinement factor must be at least 1, got {r}")
            }
            SolverError::Phantom(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for SolverError {}

impl From<PhantomError> for SolverError {
    fn from(e: PhantomError) -> Self {
        SolverError::Phantom(e)
    }
}

/// 2D complex phasor field E_z (V/m) on the solver raster.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldMap {
    width: usize,
    height: usize,
    frequency: f64,
    values: Vec<Complex64>,
}

impl FieldMap {
    pub fn new(width: usize, height: usize, frequency: f64, values: Vec<Complex64>) -> Self {
        assert_eq!(values.len(), width * height, "field buffer length mismatch");
        Self {
            width,
            height,
            frequency,
            values,
        }
    }

    pub fn zeros(width: usize, height: usize, frequency: f64) -> Self {
        Self::new(width, height, frequency, vec![Complex64::default(); width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn frequency(&self) -> f64 {
        self.frequency
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> Complex64 {
        self.values[i * self.width + j]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

/// Stretched-coordinate PML parameters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PmlConfig {
    /// Border width in cells.
    pub thickness: usize,
    /// Polynomial grading order of the conductivity profile.
    pub order: f64,
    /// Target normal-incidence reflection coefficient.
    pub target_reflection: f64,
}

impl Default for PmlConfig {
    fn default() -> Self {
        Self {
            thickness: 10,
            order: 3.0,
            target_reflection: 1e-6,
        }
    }
}

impl PmlConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        if self.thickness < 4 {
            return Err(SolverError::BadPml(format!(
                "thickness {} below the 4-cell minimum",
                self.thickness
            )));
        }
        if !(self.order >= 1.0) {
            return Err(SolverError::BadPml(format!("order {} below 1", self.order)));
        }
        if !(self.target_reflection > 0.0 && self.target_reflection < 1.0) {
            return Err(SolverError::BadPml(format!(
                "target reflection {} outside (0, 1)",
                self.target_reflection
            )));
        }
        Ok(())
    }

    /// Scale to a refined grid: same physical depth, `factor`× the cells.
    fn refined(&self, factor: usize) -> Self {
        Self {
            thickness: self.thickness * factor,
            ..*self
        }
    }
}

/// Convergence record for one solve.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SolveStats {
    pub iterations: usize,
    /// True relative residual ‖b − Ax‖/‖b‖ at exit.
    pub final_residual: f64,
    pub wall_seconds: f64,
}

/// Five-point stencil operator on a width×height grid, stored as one array
/// per stencil leg. Couplings across the grid boundary are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct StencilOperator {
    width: usize,
    height: usize,
    pub center: Vec<Complex64>,
    /// Coupling to (i, j+1); zero in the last column.
    pub east: Vec<Complex64>,
    /// Coupling to (i, j−1); zero in the first column.
    pub west: Vec<Complex64>,
    /// Coupling to (i+1, j); zero in the last row.
    pub south: Vec<Complex64>,
    /// Coupling to (i−1, j); zero in the first row.
    pub north: Vec<Complex64>,
}

impl StencilOperator {
    pub(crate) fn zeros(width: usize, height: usize) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            center: vec![Complex64::default(); n],
            east: vec![Complex64::default(); n],
            west: vec![Complex64::default(); n],
            south: vec![Complex64::default(); n],
            north: vec![Complex64::default(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.center.len()
    }

    pub fn is_empty(&self) -> bool {
        self.center.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// y = A·x
    pub fn matvec(&self, x: &[Complex64], y: &mut [Complex64]) {
        let w = self.width;
        let n = self.len();
        for k in 0..n {
            let mut acc = self.center[k] * x[k];
            if k % w + 1 < w {
                acc += self.east[k] * x[k + 1];
            }
            if k % w > 0 {
                acc += self.west[k] * x[k - 1];
            }
            if k + w < n {
                acc += self.south[k] * x[k + w];
            }
            if k >= w {
                acc += self.north[k] * x[k - w];
            }
            y[k] = acc;
        }
    }

    /// Maximum |A_kl − A_lk| over stored couplings; zero for a symmetric
    /// operator.
    pub fn symmetry_defect(&self) -> f64 {
        let w = self.width;
        let n = self.len();
        let mut worst: f64 = 0.0;
        for k in 0..n {
            if k % w + 1 < w {
                worst = worst.max((self.east[k] - self.west[k + 1]).norm());
            }
            if k + w < n {
                worst = worst.max((self.south[k] - self.north[k + w]).norm());
            }
        }
        worst
    }
}

/// Assembled discrete system A·e = b for one phantom, frequency, and source.
#[derive(Debug, Clone)]
pub struct HelmholtzSystem {
    pub width: usize,
    pub height: usize,
    pub spacing: f64,
    pub frequency: f64,
    /// Free-space wavenumber ω√(μ₀ε₀) (rad/m).
    pub wavenumber: f64,
    pub operator: StencilOperator,
    pub rhs: Vec<Complex64>,
    pub pml: PmlConfig,
}

/// Complex stretch factor s = 1 − jσ(depth)/(ωε₀) at continuous coordinate
/// `pos` along an axis of `n` cells, with polynomial grading inside the PML.
fn stretch(pos: f64, n: usize, h: f64, pml: &PmlConfig, omega: f64, sigma_max: f64) -> Complex64 {
    let depth = pml.thickness as f64 * h;
    let lo = depth;
    let hi = n as f64 * h - depth;
    let xi = if pos < lo {
        (lo - pos) / depth
    } else if pos > hi {
        (pos - hi) / depth
    } else {
        return Complex64::new(1.0, 0.0);
    };
    let sigma = sigma_max * xi.powf(pml.order);
    Complex64::new(1.0, -sigma / (omega * EPS0))
}

/// Discretize the TMz wave equation on the phantom grid.
///
/// The right-hand side is zero except at the source cell, which carries the
/// line-current delta jωμ₀·I/h².
pub fn assemble(
    grid: &TissueLabelGrid,
    materials: &MaterialTable,
    frequency: f64,
    source: &AntennaPlacement,
    pml: &PmlConfig,
) -> Result<HelmholtzSystem, SolverError> {
    pml.validate()?;
    let (w, h) = (grid.width(), grid.height());
    if 2 * pml.thickness >= w.min(h) {
        return Err(SolverError::PmlTooThick {
            thickness: pml.thickness,
            width: w,
            height: h,
        });
    }
    let rel = (frequency - materials.frequency()).abs();
    if rel > 1e-6 * frequency.abs().max(materials.frequency().abs()) {
        return Err(SolverError::FrequencyMismatch {
            system_hz: frequency,
            table_hz: materials.frequency(),
        });
    }
    materials.check_covers(grid).map_err(|e| match e {
        PhantomError::MissingMaterial { label } => SolverError::MissingMaterial { label },
        other => SolverError::Phantom(other),
    })?;
    if !grid.in_bounds(source.i, source.j) {
        return Err(SolverError::SourceOutOfBounds {
            i: source.i,
            j: source.j,
        });
    }
    let src_label = grid.label(source.i, source.j);
    if src_label != crate::phantom::tissue::BACKGROUND {
        return Err(SolverError::SourceNotBackground {
            i: source.i,
            j: source.j,
            label: src_label,
        });
    }
    let t = pml.thickness;
    if source.i < t || source.i >= h - t || source.j < t || source.j >= w - t {
        return Err(SolverError::SourceInPml {
            i: source.i,
            j: source.j,
            thickness: t,
        });
    }

    let omega = 2.0 * std::f64::consts::PI * frequency;
    let k0 = omega / C0;
    let spacing = grid.spacing();
    let inv_h2 = 1.0 / (spacing * spacing);
    let depth = t as f64 * spacing;
    let sigma_max =
        -(pml.order + 1.0) * EPS0 * C0 * pml.target_reflection.ln() / (2.0 * depth);

    // Stretch factors at cell centers and at east/south faces.
    let sx_c: Vec<Complex64> = (0..w)
        .map(|j| stretch((j as f64 + 0.5) * spacing, w, spacing, pml, omega, sigma_max))
        .collect();
    let sy_c: Vec<Complex64> = (0..h)
        .map(|i| stretch((i as f64 + 0.5) * spacing, h, spacing, pml, omega, sigma_max))
        .collect();
    let sx_f: Vec<Complex64> = (0..w)
        .map(|j| stretch((j as f64 + 1.0) * spacing, w, spacing, pml, omega, sigma_max))
        .collect();
    let sy_f: Vec<Complex64> = (0..h)
        .map(|i| stretch((i as f64 + 1.0) * spacing, h, spacing, pml, omega, sigma_max))
        .collect();

    // Per-cell material lookups, densified by label.
    let mut eps_by_label = [Complex64::default(); crate::phantom::tissue::LABEL_COUNT];
    let mut mu_by_label = [0.0f64; crate::phantom::tissue::LABEL_COUNT];
    for label in materials.labels() {
        eps_by_label[label as usize] = materials.complex_relative_permittivity(label).unwrap();
        mu_by_label[label as usize] = materials.get(label).unwrap().mu_r;
    }

    let mut op = StencilOperator::zeros(w, h);
    for i in 0..h {
        for j in 0..w {
            let k = i * w + j;
            let label = grid.label(i, j) as usize;
            let mut diag = k0 * k0 * eps_by_label[label] * sx_c[j] * sy_c[i];
            // Harmonic average of μ_r⁻¹ on each face keeps flux continuous
            // across material interfaces: 2/(μ_a + μ_b).
            if j + 1 < w {
                let hm = 2.0 / (mu_by_label[label] + mu_by_label[grid.label(i, j + 1) as usize]);
                let coeff = sy_c[i] * hm / sx_f[j] * inv_h2;
                op.east[k] = coeff;
                diag -= coeff;
            }
            if j > 0 {
                let hm = 2.0 / (mu_by_label[label] + mu_by_label[grid.label(i, j - 1) as usize]);
                let coeff = sy_c[i] * hm / sx_f[j - 1] * inv_h2;
                op.west[k] = coeff;
                diag -= coeff;
            }
            if i + 1 < h {
                let hm = 2.0 / (mu_by_label[label] + mu_by_label[grid.label(i + 1, j) as usize]);
                let coeff = sx_c[j] * hm / sy_f[i] * inv_h2;
                op.south[k] = coeff;
                diag -= coeff;
            }
            if i > 0 {
                let hm = 2.0 / (mu_by_label[label] + mu_by_label[grid.label(i - 1, j) as usize]);
                let coeff = sx_c[j] * hm / sy_f[i - 1] * inv_h2;
                op.north[k] = coeff;
                diag -= coeff;
            }
            op.center[k] = diag;
        }
    }

    let mut rhs = vec![Complex64::default(); w * h];
    rhs[source.i * w + source.j] = Complex64::new(0.0, omega * MU0) * source.current * inv_h2;

    Ok(HelmholtzSystem {
        width: w,
        height: h,
        spacing,
        frequency,
        wavenumber: k0,
        operator: op,
        rhs,
        pml: *pml,
    })
}

/// Solve the assembled system iteratively (ILU(0)-preconditioned BiCGStab)
/// to the requested true relative residual.
pub fn solve(
    system: &HelmholtzSystem,
    tolerance: f64,
    max_iterations: usize,
) -> Result<(FieldMap, SolveStats), SolverError> {
    if !(tolerance > 0.0 && tolerance < 1.0) {
        return Err(SolverError::InvalidTolerance(tolerance));
    }
    let start = Instant::now();
    let (x, iterations, residual) =
        bicgstab::solve_ilu_bicgstab(&system.operator, &system.rhs, tolerance, max_iterations)?;
    let field = FieldMap::new(system.width, system.height, system.frequency, x);
    if !field.is_finite() {
        return Err(SolverError::NonFiniteSolution);
    }
    let stats = SolveStats {
        iterations,
        final_residual: residual,
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    Ok((field, stats))
}

/// Brute-force oracle: dense LU factorization of the same operator.
/// Limited to 4096 cells to guard against accidental huge solves.
pub fn dense_solve(system: &HelmholtzSystem) -> Result<FieldMap, SolverError> {
    const MAX_CELLS: usize = 4096;
    let n = system.width * system.height;
    if n > MAX_CELLS {
        return Err(SolverError::TooLargeForDense {
            cells: n,
            max: MAX_CELLS,
        });
    }
    let x = dense::lu_solve(&system.operator, &system.rhs)?;
    let field = FieldMap::new(system.width, system.height, system.frequency, x);
    if !field.is_finite() {
        return Err(SolverError::NonFiniteSolution);
    }
    Ok(field)
}

/// Free-space field of a 2D line current: E_z = −(ωμ₀/4)·H₀⁽²⁾(k₀r)·I.
pub fn analytic_line_source(
    distance: f64,
    frequency: f64,
    current: Complex64,
) -> Result<Complex64, SolverError> {
    if !(distance > 0.0) {
        return Err(SolverError::InvalidDistance(distance));
    }
    if current == Complex64::default() {
        return Ok(Complex64::default());
    }
    let omega = 2.0 * std::f64::consts::PI * frequency;
    let x = omega / C0 * distance;
    let h02 = Complex64::new(bessel_j0(x), -bessel_y0(x));
    Ok(Complex64::new(0.0, 0.0) - omega * MU0 / 4.0 * h02 * current)
}

/// Convenience composition: assemble then solve.
pub fn compute_field(
    grid: &TissueLabelGrid,
    materials: &MaterialTable,
    frequency: f64,
    source: &AntennaPlacement,
    pml: &PmlConfig,
    tolerance: f64,
) -> Result<(FieldMap, SolveStats), SolverError> {
    let system = assemble(grid, materials, frequency, source, pml)?;
    solve(&system, tolerance, DEFAULT_MAX_ITERATIONS)
}

/// Like [`compute_field`] but solving on a `refine`× finer grid (labels
/// replicated, same physical extent) and sampling the result back onto the
/// base raster. `refine = 1` is the plain path.
pub fn compute_field_refined(
    grid: &TissueLabelGrid,
    materials: &MaterialTable,
    frequency: f64,
    source: &AntennaPlacement,
    pml: &PmlConfig,
    tolerance: f64,
    refine: usize,
) -> Result<(FieldMap, SolveStats), SolverError> {
    if refine == 0 {
        return Err(SolverError::InvalidRefinement(refine));
    }
    if refine == 1 {
        return compute_field(grid, materials, frequency, source, pml, tolerance);
    }
    let (w, h) = (grid.width(), grid.height());
    let (fw, fh) = (w * refine, h * refine);
    let mut labels = vec![0u8; fw * fh];
    for i in 0..fh {
        for j in 0..fw {
            labels[i * fw + j] = grid.label(i / refine, j / refine);
        }
    }
    let fine = TissueLabelGrid::new(fw, fh, grid.spacing() / refine as f64, labels)?;
    let half = refine / 2;
    let fine_src = AntennaPlacement {
        i: source.i * refine + half,
        j: source.j * refine + half,
        current: source.current,
    };
    let fine_pml = pml.refined(refine);
    let system = assemble(&fine, materials, frequency, &fine_src, &fine_pml)?;
    let (fine_field, stats) = solve(&system, tolerance, DEFAULT_MAX_ITERATIONS)?;
    let mut values = Vec::with_capacity(w * h);
    for i in 0..h {
        for j in 0..w {
            values.push(fine_field.at(i * refine + half, j * refine + half));
        }
    }
    Ok((FieldMap::new(w, h, frequency, values), stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{self, tissue};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn vacuum_grid(w: usize, h: usize, spacing: f64) -> TissueLabelGrid {
        // One far-corner tissue cell satisfies the "not all background"
        // invariant without disturbing the interior.
        let mut labels = vec![0u8; w * h];
        labels[w - 1] = tissue::FAT;
        TissueLabelGrid::new(w, h, spacing, labels).unwrap()
    }

    /// Random blobby heterogeneous grid for oracle-agreement tests.
    pub(crate) fn random_phantom(seed: u64, w: usize, h: usize, spacing: f64) -> TissueLabelGrid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut labels = vec![0u8; w * h];
        let blobs = rng.gen_range(3..7);
        for _ in 0..blobs {
            let ci = rng.gen_range(0.3..0.7) * h as f64;
            let cj = rng.gen_range(0.3..0.7) * w as f64;
            let r = rng.gen_range(2.0..(w.min(h) as f64 / 4.0));
            let label = rng.gen_range(1..=tissue::MAX_LABEL);
            for i in 0..h {
                for j in 0..w {
                    let d = ((i as f64 - ci).powi(2) + (j as f64 - cj).powi(2)).sqrt();
                    if d < r {
                        labels[i * w + j] = label;
                    }
                }
            }
        }
        if labels.iter().all(|&l| l == 0) {
            labels[(h / 2) * w + w / 2] = tissue::MUSCLE;
        }
        TissueLabelGrid::new(w, h, spacing, labels).unwrap()
    }

    fn small_pml() -> PmlConfig {
        PmlConfig {
            thickness: 4,
            order: 3.0,
            target_reflection: 1e-6,
        }
    }

    /// First background cell strictly outside the PML border.
    fn interior_background_cell(g: &TissueLabelGrid, pml_thickness: usize) -> AntennaPlacement {
        for i in pml_thickness + 1..g.height() - pml_thickness - 1 {
            for j in pml_thickness + 1..g.width() - pml_thickness - 1 {
                if g.label(i, j) == tissue::BACKGROUND {
                    return AntennaPlacement::unit(i, j);
                }
            }
        }
        panic!("no interior background cell");
    }

    #[test]
    fn vacuum_operator_is_translation_invariant() {
        let g = vacuum_grid(24, 24, 1e-2);
        let table = phantom::default_material_table(4e8).unwrap();
        let src = AntennaPlacement::unit(12, 12);
        let sys = assemble(&g, &table, 4e8, &src, &small_pml()).unwrap();
        // Rows well inside the interior (outside PML, away from the corner
        // tissue cell) must carry the same stencil.
        let k1 = 10 * 24 + 10;
        let k2 = 13 * 24 + 11;
        assert!((sys.operator.center[k1] - sys.operator.center[k2]).norm() < 1e-9);
        assert!((sys.operator.east[k1] - sys.operator.east[k2]).norm() < 1e-9);
        assert!((sys.operator.north[k1] - sys.operator.north[k2]).norm() < 1e-9);
    }

    #[test]
    fn operator_is_complex_symmetric() {
        let g = random_phantom(5, 28, 22, 2e-3);
        let table = phantom::default_material_table(9e8).unwrap();
        let src = AntennaPlacement::unit(5, 5);
        let sys = assemble(&g, &table, 9e8, &src, &small_pml()).unwrap();
        assert!(sys.operator.symmetry_defect() < 1e-12);
    }

    #[test]
    fn zero_current_gives_zero_rhs_and_zero_field() {
        let g = vacuum_grid(24, 24, 1e-2);
        let table = phantom::default_material_table(4e8).unwrap();
        let src = AntennaPlacement {
            i: 12,
            j: 12,
            current: Complex64::default(),
        };
        let sys = assemble(&g, &table, 4e8, &src, &small_pml()).unwrap();
        assert!(sys.rhs.iter().all(|v| *v == Complex64::default()));
        let (field, stats) = solve(&sys, 1e-10, 100).unwrap();
        assert!(field.values().iter().all(|v| *v == Complex64::default()));
        assert_eq!(stats.iterations, 0);
    }

    #[test]
    fn rhs_has_single_entry_with_line_current_magnitude() {
        let g = vacuum_grid(16, 16, 2.5e-3);
        let table = phantom::default_material_table(4e8).unwrap();
        let src = AntennaPlacement::unit(8, 8);
        let sys = assemble(&g, &table, 4e8, &src, &small_pml()).unwrap();
        let nonzero: Vec<_> = sys
            .rhs
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != Complex64::default())
            .collect();
        assert_eq!(nonzero.len(), 1);
        assert_eq!(nonzero[0].0, 8 * 16 + 8);
        let omega = 2.0 * std::f64::consts::PI * 4e8;
        let expected = omega * MU0 / (2.5e-3 * 2.5e-3);
        assert!((nonzero[0].1.norm() - expected).abs() / expected < 1e-12);
    }

    #[test]
    fn assembly_rejects_bad_sources() {
        let g = phantom::generate_phantom(1, 64, 64, 3e-3).unwrap();
        let table = phantom::default_material_table(4e8).unwrap();
        let pml = PmlConfig::default();
        // inside PML
        let err = assemble(&g, &table, 4e8, &AntennaPlacement::unit(2, 32), &pml).unwrap_err();
        assert!(matches!(err, SolverError::SourceInPml { .. }));
        // on tissue
        let err = assemble(&g, &table, 4e8, &AntennaPlacement::unit(32, 32), &pml).unwrap_err();
        assert!(matches!(err, SolverError::SourceNotBackground { .. }));
    }

    #[test]
    fn assembly_names_missing_material_label() {
        let g = random_phantom(3, 24, 24, 2e-3);
        let present = g.labels().iter().copied().find(|&l| l != 0).unwrap();
        let mut rows = std::collections::BTreeMap::new();
        for label in 0..=tissue::MAX_LABEL {
            if label == present {
                continue;
            }
            rows.insert(
                label,
                phantom::MaterialProperties {
                    eps_r: if label == 0 { 1.0 } else { 40.0 },
                    sigma: if label == 0 { 0.0 } else { 0.5 },
                    mu_r: 1.0,
                },
            );
        }
        let table = phantom::MaterialTable::new(4e8, rows).unwrap();
        let src_cell = (0..g.labels().len())
            .find(|&k| g.labels()[k] == 0 && k / 24 >= 8 && k / 24 < 16 && k % 24 >= 8 && k % 24 < 16)
            .unwrap();
        let src = AntennaPlacement::unit(src_cell / 24, src_cell % 24);
        match assemble(&g, &table, 4e8, &src, &small_pml()) {
            Err(SolverError::MissingMaterial { label }) => assert_eq!(label, present),
            other => panic!("expected MissingMaterial, got {other:?}"),
        }
    }

    #[test]
    fn dense_identity_system_returns_rhs() {
        let g = vacuum_grid(16, 16, 1e-3);
        let table = phantom::default_material_table(4e8).unwrap();
        let src = AntennaPlacement::unit(8, 8);
        let mut sys = assemble(&g, &table, 4e8, &src, &small_pml()).unwrap();
        let n = sys.width * sys.height;
        sys.operator.center = vec![Complex64::new(1.0, 0.0); n];
        sys.operator.east = vec![Complex64::default(); n];
        sys.operator.west = vec![Complex64::default(); n];
        sys.operator.south = vec![Complex64::default(); n];
        sys.operator.north = vec![Complex64::default(); n];
        sys.rhs = vec![Complex64::default(); n];
        sys.rhs[37] = Complex64::new(2.0, -1.0);
        let field = dense_solve(&sys).unwrap();
        for (k, v) in field.values().iter().enumerate() {
            if k == 37 {
                assert!((v - Complex64::new(2.0, -1.0)).norm() < 1e-14);
            } else {
                assert_eq!(*v, Complex64::default());
            }
        }
    }

    #[test]
    fn dense_rejects_oversized_systems() {
        let g = vacuum_grid(80, 80, 1e-3);
        let table = phantom::default_material_table(4e8).unwrap();
        let src = AntennaPlacement::unit(40, 40);
        let sys = assemble(&g, &table, 4e8, &src, &small_pml()).unwrap();
        assert!(matches!(
            dense_solve(&sys),
            Err(SolverError::TooLargeForDense { .. })
        ));
    }

    #[test]
    fn iterative_matches_dense_on_heterogeneous_grids() {
        let table = phantom::default_material_table(9e8).unwrap();
        for seed in [11, 12, 13] {
            let g = random_phantom(seed, 20, 18, 2e-3);
            let src = interior_background_cell(&g, 4);
            let sys = assemble(&g, &table, 9e8, &src, &small_pml()).unwrap();
            let (iterative, _) = solve(&sys, 1e-12, 20_000).unwrap();
            let direct = dense_solve(&sys).unwrap();
            let scale = direct.max_abs();
            let worst = iterative
                .values()
                .iter()
                .zip(direct.values())
                .map(|(a, b)| (a - b).norm() / scale)
                .fold(0.0, f64::max);
            assert!(worst < 1e-8, "seed {seed}: max rel diff {worst:.3e}");
        }
    }

    #[test]
    fn doubling_current_doubles_field() {
        let g = vacuum_grid(24, 24, 5e-3);
        let table = phantom::default_material_table(4e8).unwrap();
        let one = AntennaPlacement::unit(12, 12);
        let two = AntennaPlacement {
            current: Complex64::new(2.0, 0.0),
            ..one
        };
        let (f1, _) = compute_field(&g, &table, 4e8, &one, &small_pml(), 1e-10).unwrap();
        let (f2, _) = compute_field(&g, &table, 4e8, &two, &small_pml(), 1e-10).unwrap();
        for (a, b) in f1.values().iter().zip(f2.values()) {
            assert!((b - a * 2.0).norm() <= 1e-9 * b.norm().max(1e-30));
        }
    }

    #[test]
    fn solve_is_deterministic() {
        let g = random_phantom(21, 24, 24, 3e-3);
        let table = phantom::default_material_table(1.5e9).unwrap();
        let src = interior_background_cell(&g, 4);
        let (f1, s1) = compute_field(&g, &table, 1.5e9, &src, &small_pml(), 1e-9).unwrap();
        let (f2, s2) = compute_field(&g, &table, 1.5e9, &src, &small_pml(), 1e-9).unwrap();
        assert_eq!(f1.values(), f2.values());
        assert_eq!(s1.iterations, s2.iterations);
    }

    #[test]
    fn reciprocity_between_background_cells() {
        let g = phantom::generate_phantom(4, 64, 64, 3e-3).unwrap();
        let table = phantom::default_material_table(4e8).unwrap();
        let pml = PmlConfig {
            thickness: 8,
            ..PmlConfig::default()
        };
        let a = AntennaPlacement::unit(10, 30);
        let b = AntennaPlacement::unit(52, 33);
        assert_eq!(g.label(a.i, a.j), 0);
        assert_eq!(g.label(b.i, b.j), 0);
        let (fa, _) = compute_field(&g, &table, 4e8, &a, &pml, 1e-12).unwrap();
        let (fb, _) = compute_field(&g, &table, 4e8, &b, &pml, 1e-12).unwrap();
        let e_ab = fa.at(b.i, b.j);
        let e_ba = fb.at(a.i, a.j);
        assert!(
            (e_ab - e_ba).norm() / e_ab.norm() < 1e-6,
            "reciprocity violated: {e_ab} vs {e_ba}"
        );
    }

    #[test]
    fn analytic_line_source_reference_values() {
        // Reference values from scipy: -(w*mu0/4)*hankel2(0, k0*r).
        let cases = [
            (4.0e8, 0.5, 2.9821785247520683e2, -7.1603425497639947e1),
            (4.0e8, 2.0, 1.4841067062626865e2, -4.0428623794895685e1),
            (9.0e8, 0.75, -2.6613866800780119e2, 2.6665748941061969e2),
            (1.5e9, 0.1, 9.0265501303484791e2, 9.6994118858567367e2),
            (1.5e9, 1.3, 2.6780114079245874e2, 2.5462494143076859e2),
        ];
        for (f, r, re, im) in cases {
            let e = analytic_line_source(r, f, Complex64::new(1.0, 0.0)).unwrap();
            assert!(
                (e - Complex64::new(re, im)).norm() < 1e-6 * Complex64::new(re, im).norm(),
                "f={f} r={r}: {e}"
            );
        }
    }

    #[test]
    fn analytic_line_source_edge_cases() {
        assert_eq!(
            analytic_line_source(0.3, 4e8, Complex64::default()).unwrap(),
            Complex64::default()
        );
        assert!(matches!(
            analytic_line_source(0.0, 4e8, Complex64::new(1.0, 0.0)),
            Err(SolverError::InvalidDistance(_))
        ));
        // |H0(2)| decays monotonically beyond a wavelength.
        let lambda = C0 / 4e8;
        let mut prev = f64::INFINITY;
        for k in 0..40 {
            let r = lambda * (1.0 + 0.2 * k as f64);
            let mag = analytic_line_source(r, 4e8, Complex64::new(1.0, 0.0))
                .unwrap()
                .norm();
            assert!(mag < prev);
            prev = mag;
        }
        // Far-field phase advances by ≈ −k0·Δr per radial step.
        let k0 = 2.0 * std::f64::consts::PI / lambda;
        let dr = lambda / 50.0;
        for k in 0..20 {
            let r = 3.0 * lambda + k as f64 * dr;
            let e1 = analytic_line_source(r, 4e8, Complex64::new(1.0, 0.0)).unwrap();
            let e2 = analytic_line_source(r + dr, 4e8, Complex64::new(1.0, 0.0)).unwrap();
            let dphase = (e2 / e1).arg();
            assert!(
                (dphase + k0 * dr).abs() < 0.02 * k0 * dr,
                "phase step {dphase} vs {}",
                -k0 * dr
            );
        }
    }

    /// Vacuum solve vs analytic over the validation annulus 2λ ≤ r ≤ edge−PML.
    fn vacuum_vs_analytic(freq: f64, ppw: f64, w: usize, h: usize) -> f64 {
        let lambda = C0 / freq;
        let spacing = lambda / ppw;
        let g = vacuum_grid(w, h, spacing);
        let table = phantom::default_material_table(freq).unwrap();
        let (si, sj) = (h / 2, w / 2);
        let src = AntennaPlacement::unit(si, sj);
        let pml = PmlConfig::default();
        let (field, _) = compute_field(&g, &table, freq, &src, &pml, 1e-8).unwrap();
        let r_max = (si.min(h - 1 - si).min(sj).min(w - 1 - sj) - pml.thickness) as f64 * spacing;
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..h {
            for j in 0..w {
                if i.abs_diff(si) <= 1 && j.abs_diff(sj) <= 1 {
                    continue;
                }
                let r = (((i as f64 - si as f64) * spacing).powi(2)
                    + ((j as f64 - sj as f64) * spacing).powi(2))
                .sqrt();
                if r < 2.0 * lambda || r > r_max {
                    continue;
                }
                let reference = analytic_line_source(r, freq, Complex64::new(1.0, 0.0)).unwrap();
                num += (field.at(i, j) - reference).norm_sqr();
                den += reference.norm_sqr();
            }
        }
        assert!(den > 0.0, "empty annulus");
        (num / den).sqrt()
    }

    #[test]
    fn vacuum_solution_matches_analytic_within_5_percent() {
        let err = vacuum_vs_analytic(4e8, 24.0, 158, 133);
        assert!(err < 0.05, "relative L2 {err:.4}");
    }

    #[test]
    fn halving_spacing_cuts_analytic_error_by_3x() {
        // Same physical domain at two resolutions; the 5-point stencil is
        // second order so the dispersion-dominated error should drop ~4x.
        let coarse = vacuum_vs_analytic(9e8, 12.0, 96, 96);
        let fine = vacuum_vs_analytic(9e8, 24.0, 192, 192);
        assert!(
            coarse / fine >= 3.0,
            "convergence ratio {:.2} (coarse {coarse:.4}, fine {fine:.4})",
            coarse / fine
        );
    }

    #[test]
    fn refined_solve_matches_plain_on_vacuum() {
        let g = vacuum_grid(48, 40, 8e-3);
        let table = phantom::default_material_table(9e8).unwrap();
        let src = AntennaPlacement::unit(20, 24);
        let pml = small_pml();
        let (plain, _) = compute_field_refined(&g, &table, 9e8, &src, &pml, 1e-9, 1).unwrap();
        let (refined, _) = compute_field_refined(&g, &table, 9e8, &src, &pml, 1e-9, 2).unwrap();
        assert_eq!(refined.width(), plain.width());
        assert_eq!(refined.height(), plain.height());
        // The two discretizations agree loosely away from the source.
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0usize..40 {
            for j in 0usize..48 {
                if i.abs_diff(20) <= 2 && j.abs_diff(24) <= 2 {
                    continue;
                }
                num += (refined.at(i, j) - plain.at(i, j)).norm_sqr();
                den += plain.at(i, j).norm_sqr();
            }
        }
        assert!((num / den).sqrt() < 0.35);
    }
}
