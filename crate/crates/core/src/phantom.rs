//! Synthetic segmented head phantoms, tissue dielectric tables, and antenna
//! placements.
//!
//! A phantom is a 2D raster of tissue IDs built from concentric perturbed
//! ellipses (scalp to white matter, outside in) with small randomly placed
//! inclusions. It stands in for an MRI-segmented head slice; the solver and
//! surrogate only ever see the label raster, so externally segmented data can
//! be imported through the same type.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::constants::EPS0;

/// Tissue label constants. Label 0 is background (air); 1–12 are tissues.
pub mod tissue {
    pub const BACKGROUND: u8 = 0;
    pub const CSF: u8 = 1;
    pub const GREY_MATTER: u8 = 2;
    pub const WHITE_MATTER: u8 = 3;
    pub const FAT: u8 = 4;
    pub const MUSCLE: u8 = 5;
    pub const MUSCLE_SKIN: u8 = 6;
    pub const SKULL: u8 = 7;
    pub const VESSELS: u8 = 8;
    pub const CONNECTIVE_TISSUE: u8 = 9;
    pub const DURA: u8 = 10;
    pub const BONE_MARROW: u8 = 11;
    pub const SKIN: u8 = 12;

    /// Highest valid label.
    pub const MAX_LABEL: u8 = 12;
    /// Number of distinct labels including background.
    pub const LABEL_COUNT: usize = 13;

    /// Concentric layer labels, outermost first.
    pub const LAYERS: [u8; 7] = [
        MUSCLE_SKIN,
        FAT,
        SKULL,
        DURA,
        CSF,
        GREY_MATTER,
        WHITE_MATTER,
    ];
}

/// Smallest grid side on which all seven concentric layers fit together with
/// the background margin required for antennas and the absorbing boundary.
pub const MIN_PHANTOM_DIM: usize = 58;

/// Background margin (cells) kept free of tissue on every side.
const PHANTOM_MARGIN: f64 = 14.0;

/// Antenna ring sits this many cells outside the outermost tissue extent.
const RING_OFFSET: f64 = 3.0;

#[derive(Debug, Clone, PartialEq)]
pub enum PhantomError {
    /// Grid cannot hold all tissue layers plus the background margin.
    GridTooSmall {
        width: usize,
        height: usize,
        min_dim: usize,
    },
    InvalidSpacing(f64),
    InvalidDimensions {
        width: usize,
        height: usize,
    },
    LabelOutOfRange {
        index: usize,
        label: u8,
    },
    /// A grid must contain at least one non-background cell.
    AllBackground,
    LabelBufferLength {
        expected: usize,
        actual: usize,
    },
    /// The antenna ellipse does not fit inside the grid.
    RingOutOfBounds {
        semi_i: f64,
        semi_j: f64,
    },
    /// More ring antennas requested than distinct cells on the ellipse.
    RingTooDense {
        count: usize,
    },
    /// Could not find enough non-colliding background cells.
    PlacementExhausted {
        requested: usize,
        placed: usize,
    },
    /// Placement counts must be at least one.
    InvalidCount,
    OutOfBounds {
        i: usize,
        j: usize,
    },
    NotBackground {
        i: usize,
        j: usize,
        label: u8,
    },
    ZeroCurrent,
    /// No bundled material table at the requested frequency.
    UnknownFrequency {
        requested_hz: f64,
        available_hz: Vec<f64>,
    },
    /// Material table entry violates its invariants.
    BadMaterialRow {
        tissue_id: u8,
        reason: String,
    },
    MissingMaterial {
        label: u8,
    },
    MaterialParse(String),
}

impl fmt::Display for PhantomError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PhantomError::GridTooSmall { width, height, min_dim } => write!(
                f,
                "grid {width}x{height} too small for layered phantom; need at least {min_dim} cells per side"
            ),
            PhantomError::InvalidSpacing(s) => write!(f, "spacing must be positive, got {s}"),
            PhantomError::InvalidDimensions { width, height } => {
                write!(f, "grid dimensions {width}x{height} below the 16-cell minimum")
            }
            PhantomError::LabelOutOfRange { index, label } => {
                write!(f, "label {label} at cell {index} outside 0..=12")
            }
            PhantomError::AllBackground => write!(f, "grid contains no tissue cells"),
            PhantomError::LabelBufferLength { expected, actual } => {
                write!(f, "label buffer length {actual}, expected {expected}")
            }
            PhantomError::RingOutOfBounds { semi_i, semi_j } => write!(
                f,
                "antenna ellipse (semi-axes {semi_i:.1} x {semi_j:.1} cells) exits the grid"
            ),
            PhantomError::RingTooDense { count } => {
                write!(f, "{count} antennas collide on the placement ellipse")
            }
            PhantomError::PlacementExhausted { requested, placed } => write!(
                f,
                "placed only {placed} of {requested} antennas before running out of retries"
            ),
            PhantomError::InvalidCount => write!(f, "placement count must be at least 1"),
            PhantomError::OutOfBounds { i, j } => write!(f, "cell ({i}, {j}) outside grid"),
            PhantomError::NotBackground { i, j, label } => {
                write!(f, "cell ({i}, {j}) carries tissue label {label}, not background")
            }
            PhantomError::ZeroCurrent => write!(f, "antenna current must be nonzero"),
            PhantomError::UnknownFrequency { requested_hz, available_hz } => write!(
                f,
                "no bundled material data at {requested_hz} Hz; bundled frequencies: {available_hz:?}"
            ),
            PhantomError::BadMaterialRow { tissue_id, reason } => {
                write!(f, "material row for tissue {tissue_id}: {reason}")
            }
            PhantomError::MissingMaterial { label } => {
                write!(f, "material table has no entry for label {label}")
            }
            PhantomError::MaterialParse(e) => write!(f, "material table parse error: {e}"),
        }
    }
}

impl std::error::Error for PhantomError {}

/// 2D integer tissue-ID raster standing in for a segmented head slice.
///
/// Row-major storage: `labels[i * width + j]` with `i` the row and `j` the
/// column. `spacing` is the isotropic cell size in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct TissueLabelGrid {
    width: usize,
    height: usize,
    spacing: f64,
    labels: Vec<u8>,
}

impl TissueLabelGrid {
    pub fn new(
        width: usize,
        height: usize,
        spacing: f64,
        labels: Vec<u8>,
    ) -> Result<Self, PhantomError> {
        if width < 16 || height < 16 {
            return Err(PhantomError::InvalidDimensions { width, height });
        }
        if !(spacing > 0.0) {
            return Err(PhantomError::InvalidSpacing(spacing));
        }
        if labels.len() != width * height {
            return Err(PhantomError::LabelBufferLength {
                expected: width * height,
                actual: labels.len(),
            });
        }
        if let Some((index, &label)) = labels
            .iter()
            .enumerate()
            .find(|(_, &l)| l > tissue::MAX_LABEL)
        {
            return Err(PhantomError::LabelOutOfRange { index, label });
        }
        if labels.iter().all(|&l| l == tissue::BACKGROUND) {
            return Err(PhantomError::AllBackground);
        }
        Ok(Self {
            width,
            height,
            spacing,
            labels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.width + j
    }

    #[inline]
    pub fn label(&self, i: usize, j: usize) -> u8 {
        self.labels[i * self.width + j]
    }

    pub fn in_bounds(&self, i: usize, j: usize) -> bool {
        i < self.height && j < self.width
    }

    /// Bounding box of non-background cells as (min_i, max_i, min_j, max_j),
    /// inclusive. The constructor guarantees at least one tissue cell.
    pub fn tissue_bbox(&self) -> (usize, usize, usize, usize) {
        let (mut min_i, mut max_i, mut min_j, mut max_j) = (self.height, 0, self.width, 0);
        for i in 0..self.height {
            for j in 0..self.width {
                if self.label(i, j) != tissue::BACKGROUND {
                    min_i = min_i.min(i);
                    max_i = max_i.max(i);
                    min_j = min_j.min(j);
                    max_j = max_j.max(j);
                }
            }
        }
        (min_i, max_i, min_j, max_j)
    }
}

/// Per-tissue dielectric properties at one frequency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialProperties {
    /// Relative permittivity ε_r (dimensionless, ≥ 1).
    pub eps_r: f64,
    /// Conductivity σ (S/m, ≥ 0).
    pub sigma: f64,
    /// Relative permeability μ_r (dimensionless, > 0).
    pub mu_r: f64,
}

/// Map tissue ID → dielectric properties, valid at a single frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct MaterialTable {
    frequency: f64,
    rows: BTreeMap<u8, MaterialProperties>,
}

#[derive(Deserialize, Serialize)]
struct MaterialFileRow {
    tissue_id: u8,
    name: String,
    properties: Vec<MaterialFileProps>,
}

#[derive(Deserialize, Serialize)]
struct MaterialFileProps {
    f_hz: f64,
    eps_r: f64,
    sigma_s_per_m: f64,
    mu_r: f64,
}

const BUNDLED_MATERIALS: &str = include_str!("../assets/materials.json");

impl MaterialTable {
    pub fn new(frequency: f64, rows: BTreeMap<u8, MaterialProperties>) -> Result<Self, PhantomError> {
        for (&id, row) in &rows {
            if id == tissue::BACKGROUND
                && (row.eps_r != 1.0 || row.sigma != 0.0 || row.mu_r != 1.0)
            {
                return Err(PhantomError::BadMaterialRow {
                    tissue_id: id,
                    reason: "background must be exactly (eps_r=1, sigma=0, mu_r=1)".into(),
                });
            }
            if !(row.eps_r >= 1.0) {
                return Err(PhantomError::BadMaterialRow {
                    tissue_id: id,
                    reason: format!("eps_r {} below 1", row.eps_r),
                });
            }
            if !(row.sigma >= 0.0) {
                return Err(PhantomError::BadMaterialRow {
                    tissue_id: id,
                    reason: format!("sigma {} negative", row.sigma),
                });
            }
            if !(row.mu_r > 0.0) {
                return Err(PhantomError::BadMaterialRow {
                    tissue_id: id,
                    reason: format!("mu_r {} not positive", row.mu_r),
                });
            }
        }
        Ok(Self { frequency, rows })
    }

    /// Parse a table from the JSON schema used by `materials.json`, selecting
    /// the rows at `frequency` (matched to within 1 part in 10⁶).
    pub fn from_json_str(json: &str, frequency: f64) -> Result<Self, PhantomError> {
        let file: Vec<MaterialFileRow> =
            serde_json::from_str(json).map_err(|e| PhantomError::MaterialParse(e.to_string()))?;
        let mut rows = BTreeMap::new();
        let mut available: Vec<f64> = Vec::new();
        for entry in &file {
            for p in &entry.properties {
                if !available.iter().any(|&f| close(f, p.f_hz)) {
                    available.push(p.f_hz);
                }
            }
            let Some(p) = entry.properties.iter().find(|p| close(p.f_hz, frequency)) else {
                continue;
            };
            rows.insert(
                entry.tissue_id,
                MaterialProperties {
                    eps_r: p.eps_r,
                    sigma: p.sigma_s_per_m,
                    mu_r: p.mu_r,
                },
            );
        }
        if rows.is_empty() {
            available.sort_by(|a, b| a.partial_cmp(b).unwrap());
            return Err(PhantomError::UnknownFrequency {
                requested_hz: frequency,
                available_hz: available,
            });
        }
        Self::new(frequency, rows)
    }

    pub fn frequency(&self) -> f64 {
        self.frequency
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, label: u8) -> Option<&MaterialProperties> {
        self.rows.get(&label)
    }

    pub fn labels(&self) -> impl Iterator<Item = u8> + '_ {
        self.rows.keys().copied()
    }

    /// Absolute complex permittivity ε = ε₀ε_r − jσ/ω (F/m).
    pub fn complex_permittivity(&self, label: u8) -> Option<Complex64> {
        let row = self.rows.get(&label)?;
        let omega = 2.0 * std::f64::consts::PI * self.frequency;
        Some(Complex64::new(EPS0 * row.eps_r, -row.sigma / omega))
    }

    /// Relative complex permittivity ε̃_r = ε_r − jσ/(ωε₀) (dimensionless).
    pub fn complex_relative_permittivity(&self, label: u8) -> Option<Complex64> {
        let row = self.rows.get(&label)?;
        let omega = 2.0 * std::f64::consts::PI * self.frequency;
        Some(Complex64::new(row.eps_r, -row.sigma / (omega * EPS0)))
    }

    /// Error with the first label present in `grid` but absent from the table.
    pub fn check_covers(&self, grid: &TissueLabelGrid) -> Result<(), PhantomError> {
        for &label in grid.labels() {
            if !self.rows.contains_key(&label) {
                return Err(PhantomError::MissingMaterial { label });
            }
        }
        Ok(())
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-6 * a.abs().max(b.abs())
}

/// The bundled dielectric table at one of the three supported frequencies
/// (400 MHz, 900 MHz, 1.5 GHz). Other frequencies need a user-supplied table
/// in the same JSON schema.
pub fn default_material_table(frequency: f64) -> Result<MaterialTable, PhantomError> {
    MaterialTable::from_json_str(BUNDLED_MATERIALS, frequency)
}

/// A point line-current source at a background cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AntennaPlacement {
    /// Row index.
    pub i: usize,
    /// Column index.
    pub j: usize,
    /// Complex phasor current (A). Defaults to 1 + 0j.
    pub current: Complex64,
}

impl AntennaPlacement {
    pub fn new(
        grid: &TissueLabelGrid,
        i: usize,
        j: usize,
        current: Complex64,
    ) -> Result<Self, PhantomError> {
        if !grid.in_bounds(i, j) {
            return Err(PhantomError::OutOfBounds { i, j });
        }
        let label = grid.label(i, j);
        if label != tissue::BACKGROUND {
            return Err(PhantomError::NotBackground { i, j, label });
        }
        if current.norm() == 0.0 {
            return Err(PhantomError::ZeroCurrent);
        }
        Ok(Self { i, j, current })
    }

    pub fn unit(i: usize, j: usize) -> Self {
        Self {
            i,
            j,
            current: Complex64::new(1.0, 0.0),
        }
    }
}

/// Normalized layer boundaries (fractions of the outer boundary radius),
/// outermost first: each entry is the inner edge of the corresponding
/// `tissue::LAYERS` ring. `thin` is the per-ring thickness for the five thin
/// anatomical shells.
fn layer_bounds(thin: f64) -> [f64; 7] {
    let after_shells = 1.0 - 5.0 * thin;
    let grey_inner = after_shells * 0.58;
    [
        1.0 - thin,         // muscle/skin inner edge
        1.0 - 2.0 * thin,   // fat
        1.0 - 3.0 * thin,   // skull
        1.0 - 4.0 * thin,   // dura
        after_shells,       // CSF
        grey_inner,         // grey matter
        0.0,                // white matter core
    ]
}

/// Deterministically generate a layered elliptical head phantom.
///
/// Layers from outside in: muscle/skin, fat, skull, dura, CSF, grey matter,
/// white matter, plus small inclusions of vessels, bone marrow, connective
/// tissue, and muscle. At least 12 cells of background are kept on all sides
/// for antennas and the absorbing boundary.
pub fn generate_phantom(
    seed: u64,
    width: usize,
    height: usize,
    spacing: f64,
) -> Result<TissueLabelGrid, PhantomError> {
    if !(spacing > 0.0) {
        return Err(PhantomError::InvalidSpacing(spacing));
    }
    if width < MIN_PHANTOM_DIM || height < MIN_PHANTOM_DIM {
        return Err(PhantomError::GridTooSmall {
            width,
            height,
            min_dim: MIN_PHANTOM_DIM,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base_a = width as f64 / 2.0 - PHANTOM_MARGIN;
    let base_b = height as f64 / 2.0 - PHANTOM_MARGIN;

    // Per-subject shape variation. Scales stay ≤ 1 so the margin is preserved.
    let scale_a: f64 = rng.gen_range(0.90..1.0);
    let scale_b: f64 = rng.gen_range(0.90..1.0);
    let semi_a = base_a * scale_a;
    let semi_b = base_b * scale_b;
    let off_i: f64 = rng.gen_range(-1.5..1.5);
    let off_j: f64 = rng.gen_range(-1.5..1.5);
    let ci = (height as f64 - 1.0) / 2.0 + off_i;
    let cj = (width as f64 - 1.0) / 2.0 + off_j;

    // Smooth angular wobble of the outer boundary, bounded by WOBBLE so the
    // boundary never grows past the unperturbed ellipse.
    const WOBBLE: f64 = 0.05;
    let amps: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.0..WOBBLE / 3.0));
    let phases: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.0..std::f64::consts::TAU));

    let r_min = semi_a.min(semi_b) * (1.0 - 2.0 * WOBBLE);
    // Thin shells are at least ~1.3 cells thick even on the smallest grids.
    let thin = (1.3 / r_min).max(0.075);
    let bounds = layer_bounds(thin);

    let mut labels = vec![tissue::BACKGROUND; width * height];
    for i in 0..height {
        for j in 0..width {
            let u = (j as f64 - cj) / semi_a;
            let v = (i as f64 - ci) / semi_b;
            let r0 = (u * u + v * v).sqrt();
            if r0 == 0.0 {
                labels[i * width + j] = tissue::WHITE_MATTER;
                continue;
            }
            let theta = v.atan2(u);
            let mut boundary = 1.0 - WOBBLE;
            for m in 0..3 {
                boundary += amps[m] * ((m as f64 + 2.0) * theta + phases[m]).cos();
            }
            let rho = r0 / boundary;
            if rho > 1.0 {
                continue;
            }
            let mut label = *tissue::LAYERS.last().unwrap();
            for (k, &inner) in bounds.iter().enumerate() {
                if rho > inner {
                    label = tissue::LAYERS[k];
                    break;
                }
            }
            labels[i * width + j] = label;
        }
    }

    // Elliptic radius of a cell in the wobbled frame; > 1 means background.
    let rho_of = |i: usize, j: usize| -> f64 {
        let u = (j as f64 - cj) / semi_a;
        let v = (i as f64 - ci) / semi_b;
        let r0 = (u * u + v * v).sqrt();
        let theta = v.atan2(u);
        let mut boundary = 1.0 - WOBBLE;
        for m in 0..3 {
            boundary += amps[m] * ((m as f64 + 2.0) * theta + phases[m]).cos();
        }
        r0 / boundary
    };

    let stamp = |rng: &mut ChaCha8Rng,
                     labels: &mut Vec<u8>,
                     rho_lo: f64,
                     rho_hi: f64,
                     radius_lo: f64,
                     radius_hi: f64,
                     allowed: &[u8],
                     new_label: u8| {
        let rho_c = rng.gen_range(rho_lo..rho_hi);
        let theta = rng.gen_range(0.0..std::f64::consts::TAU);
        let radius = rng.gen_range(radius_lo..radius_hi);
        let jc = cj + rho_c * semi_a * theta.cos();
        let ic = ci + rho_c * semi_b * theta.sin();
        let r_cells = radius.ceil() as isize + 1;
        for di in -r_cells..=r_cells {
            for dj in -r_cells..=r_cells {
                let i = ic.round() as isize + di;
                let j = jc.round() as isize + dj;
                if i < 0 || j < 0 || i as usize >= height || j as usize >= width {
                    continue;
                }
                let (i, j) = (i as usize, j as usize);
                let d = ((i as f64 - ic).powi(2) + (j as f64 - jc).powi(2)).sqrt();
                if d > radius {
                    continue;
                }
                let cell = &mut labels[i * width + j];
                if allowed.contains(cell) && rho_of(i, j) < 0.98 {
                    *cell = new_label;
                }
            }
        }
    };

    let brain_hi = bounds[4]; // inner edge of CSF = outer edge of grey matter
    let n_vessels = rng.gen_range(2..=4);
    for _ in 0..n_vessels {
        stamp(
            &mut rng,
            &mut labels,
            0.05,
            brain_hi * 0.9,
            0.8,
            1.6,
            &[tissue::GREY_MATTER, tissue::WHITE_MATTER],
            tissue::VESSELS,
        );
    }
    let n_marrow = rng.gen_range(1..=3);
    for _ in 0..n_marrow {
        stamp(
            &mut rng,
            &mut labels,
            bounds[2],
            bounds[1],
            0.6,
            1.2,
            &[tissue::SKULL],
            tissue::BONE_MARROW,
        );
    }
    let n_connective = rng.gen_range(1..=3);
    for _ in 0..n_connective {
        stamp(
            &mut rng,
            &mut labels,
            bounds[3],
            bounds[1],
            0.6,
            1.2,
            &[tissue::DURA, tissue::FAT],
            tissue::CONNECTIVE_TISSUE,
        );
    }
    let n_muscle = rng.gen_range(1..=2);
    for _ in 0..n_muscle {
        stamp(
            &mut rng,
            &mut labels,
            bounds[1],
            1.0 - 0.3 * thin,
            0.8,
            1.5,
            &[tissue::FAT, tissue::MUSCLE_SKIN],
            tissue::MUSCLE,
        );
    }

    TissueLabelGrid::new(width, height, spacing, labels)
}

/// Ellipse on which antennas are placed: tissue bounding box inflated by
/// `RING_OFFSET` cells. Returns (center_i, center_j, semi_i, semi_j).
fn ring_ellipse(grid: &TissueLabelGrid) -> Result<(f64, f64, f64, f64), PhantomError> {
    let (min_i, max_i, min_j, max_j) = grid.tissue_bbox();
    let ci = (min_i + max_i) as f64 / 2.0;
    let cj = (min_j + max_j) as f64 / 2.0;
    let semi_i = (max_i - min_i) as f64 / 2.0 + RING_OFFSET;
    let semi_j = (max_j - min_j) as f64 / 2.0 + RING_OFFSET;
    if ci - semi_i < 0.0
        || ci + semi_i > (grid.height() - 1) as f64
        || cj - semi_j < 0.0
        || cj + semi_j > (grid.width() - 1) as f64
    {
        return Err(PhantomError::RingOutOfBounds { semi_i, semi_j });
    }
    Ok((ci, cj, semi_i, semi_j))
}

/// `count` unit-current placements evenly spaced in angle on the ring
/// ellipse, ordered by increasing angle from the positive horizontal
/// (column) axis, angle increasing toward increasing row index.
pub fn antenna_ring(
    grid: &TissueLabelGrid,
    count: usize,
) -> Result<Vec<AntennaPlacement>, PhantomError> {
    if count == 0 {
        return Err(PhantomError::InvalidCount);
    }
    let (ci, cj, semi_i, semi_j) = ring_ellipse(grid)?;
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let theta = std::f64::consts::TAU * k as f64 / count as f64;
        let i = (ci + semi_i * theta.sin()).round() as usize;
        let j = (cj + semi_j * theta.cos()).round() as usize;
        if !grid.in_bounds(i, j) {
            return Err(PhantomError::OutOfBounds { i, j });
        }
        let label = grid.label(i, j);
        if label != tissue::BACKGROUND {
            return Err(PhantomError::NotBackground { i, j, label });
        }
        if !seen.insert((i, j)) {
            return Err(PhantomError::RingTooDense { count });
        }
        out.push(AntennaPlacement::unit(i, j));
    }
    Ok(out)
}

/// `count` placements uniform in angle on the ring ellipse with ±2 cells of
/// radial jitter, deterministic for a fixed seed, avoiding both repeats and
/// every placement in `avoid` (typically the trained antenna ring).
pub fn random_antenna_locations(
    grid: &TissueLabelGrid,
    seed: u64,
    count: usize,
    avoid: &[AntennaPlacement],
) -> Result<Vec<AntennaPlacement>, PhantomError> {
    if count == 0 {
        return Err(PhantomError::InvalidCount);
    }
    let (ci, cj, semi_i, semi_j) = ring_ellipse(grid)?;
    let excluded: HashSet<(usize, usize)> = avoid.iter().map(|p| (p.i, p.j)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = HashSet::new();
    let mut out = Vec::with_capacity(count);
    let max_attempts = count * 1000;
    let mut attempts = 0;
    while out.len() < count {
        attempts += 1;
        if attempts > max_attempts {
            return Err(PhantomError::PlacementExhausted {
                requested: count,
                placed: out.len(),
            });
        }
        let theta = rng.gen_range(0.0..std::f64::consts::TAU);
        let jitter = rng.gen_range(-2.0..2.0);
        let fi = ci + (semi_i + jitter) * theta.sin();
        let fj = cj + (semi_j + jitter) * theta.cos();
        if fi < 0.0 || fj < 0.0 {
            continue;
        }
        let (i, j) = (fi.round() as usize, fj.round() as usize);
        if !grid.in_bounds(i, j)
            || grid.label(i, j) != tissue::BACKGROUND
            || excluded.contains(&(i, j))
            || chosen.contains(&(i, j))
        {
            continue;
        }
        chosen.insert((i, j));
        out.push(AntennaPlacement::unit(i, j));
    }
    Ok(out)
}
