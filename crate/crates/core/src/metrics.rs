//! Evaluation metrics for complex field maps.
//!
//! Per-sample metrics between a ground-truth field y and a prediction ŷ:
//!
//! ```text
//! AD = |y − ŷ|                                  (V/m, per voxel)
//! RD = ||y_v| − |ŷ_v|| / max_v |y_v| × 100      (%, per voxel)
//! PD = min(|∠y − ∠ŷ|, 2π − |∠y − ∠ŷ|)           (rad, per voxel, in [0, π])
//! CC = |Σ_v y_v·conj(ŷ_v)| / (‖y‖·‖ŷ‖)          (dimensionless, in [0, 1])
//! ```
//!
//! CC here is the non-mean-centered normalized complex inner product, which
//! is exactly 1 for any nonzero complex rescaling of the field; the
//! mean-centered variant is available as [`complex_correlation_centered`].

use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::solver::FieldMap;

/// Phase is reported only where |y| exceeds this fraction of max|y|;
/// below it the phase of the ground truth is numerically meaningless.
pub const PHASE_MASK_REL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub enum MetricsError {
    ShapeMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },
    /// All-zero ground truth: RD's reference max|y| is degenerate.
    DegenerateReference,
    /// CC needs both fields to carry energy.
    ZeroEnergy,
    EmptyGroup,
    EmptyInput,
}

impl fmt::Display for MetricsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricsError::ShapeMismatch { left, right } => write!(
                f,
                "field dims {}x{} vs {}x{}",
                left.0, left.1, right.0, right.1
            ),
            MetricsError::DegenerateReference => {
                write!(f, "ground truth is identically zero; RD reference undefined")
            }
            MetricsError::ZeroEnergy => write!(f, "correlation undefined for zero-energy fields"),
            MetricsError::EmptyGroup => write!(f, "per-subject statistics need at least 1 sample"),
            MetricsError::EmptyInput => write!(f, "timing comparison needs non-empty inputs"),
        }
    }
}

impl std::error::Error for MetricsError {}

fn check_dims(y: &FieldMap, y_hat: &FieldMap) -> Result<(), MetricsError> {
    if y.width() != y_hat.width() || y.height() != y_hat.height() {
        return Err(MetricsError::ShapeMismatch {
            left: (y.width(), y.height()),
            right: (y_hat.width(), y_hat.height()),
        });
    }
    Ok(())
}

/// Elementwise |y − ŷ| (V/m).
pub fn absolute_difference(y: &FieldMap, y_hat: &FieldMap) -> Result<Vec<f64>, MetricsError> {
    check_dims(y, y_hat)?;
    Ok(y.values()
        .iter()
        .zip(y_hat.values())
        .map(|(a, b)| (a - b).norm())
        .collect())
}

/// Per-voxel percentage difference of magnitudes relative to the single
/// per-sample maximum of |y|.
pub fn relative_difference(y: &FieldMap, y_hat: &FieldMap) -> Result<Vec<f64>, MetricsError> {
    check_dims(y, y_hat)?;
    let reference = y.max_abs();
    if reference == 0.0 {
        return Err(MetricsError::DegenerateReference);
    }
    Ok(y.values()
        .iter()
        .zip(y_hat.values())
        .map(|(a, b)| (a.norm() - b.norm()).abs() / reference * 100.0)
        .collect())
}

/// Wrapped per-voxel phase distance in [0, π].
pub fn phase_difference(y: &FieldMap, y_hat: &FieldMap) -> Result<Vec<f64>, MetricsError> {
    check_dims(y, y_hat)?;
    Ok(y.values()
        .iter()
        .zip(y_hat.values())
        .map(|(a, b)| {
            let pa = a.arg().rem_euclid(std::f64::consts::TAU);
            let pb = b.arg().rem_euclid(std::f64::consts::TAU);
            let d = (pa - pb).abs();
            d.min(std::f64::consts::TAU - d)
        })
        .collect())
}

/// Mask of voxels where the ground-truth amplitude is large enough for phase
/// to be meaningful: |y| > 1e-6·max|y|.
pub fn phase_valid_mask(y: &FieldMap) -> Vec<bool> {
    let threshold = PHASE_MASK_REL * y.max_abs();
    y.values().iter().map(|v| v.norm() > threshold).collect()
}

/// Mean phase distance over the valid mask; 0 when nothing is valid.
pub fn mean_phase_difference(y: &FieldMap, y_hat: &FieldMap) -> Result<f64, MetricsError> {
    let pd = phase_difference(y, y_hat)?;
    let mask = phase_valid_mask(y);
    let mut sum = 0.0;
    let mut count = 0usize;
    for (v, keep) in pd.iter().zip(mask) {
        if keep {
            sum += v;
            count += 1;
        }
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

/// Magnitude of the complex correlation coefficient, in [0, 1].
pub fn complex_correlation(y: &FieldMap, y_hat: &FieldMap) -> Result<f64, MetricsError> {
    check_dims(y, y_hat)?;
    let mut inner = Complex64::default();
    let mut ey = 0.0;
    let mut eh = 0.0;
    for (a, b) in y.values().iter().zip(y_hat.values()) {
        inner += a * b.conj();
        ey += a.norm_sqr();
        eh += b.norm_sqr();
    }
    if ey == 0.0 || eh == 0.0 {
        return Err(MetricsError::ZeroEnergy);
    }
    Ok((inner.norm() / (ey.sqrt() * eh.sqrt())).min(1.0))
}

/// Mean-centered variant of [`complex_correlation`]; not the default.
pub fn complex_correlation_centered(
    y: &FieldMap,
    y_hat: &FieldMap,
) -> Result<f64, MetricsError> {
    check_dims(y, y_hat)?;
    let n = y.values().len() as f64;
    let my = y.values().iter().sum::<Complex64>() / n;
    let mh = y_hat.values().iter().sum::<Complex64>() / n;
    let mut inner = Complex64::default();
    let mut ey = 0.0;
    let mut eh = 0.0;
    for (a, b) in y.values().iter().zip(y_hat.values()) {
        let (da, db) = (a - my, b - mh);
        inner += da * db.conj();
        ey += da.norm_sqr();
        eh += db.norm_sqr();
    }
    if ey == 0.0 || eh == 0.0 {
        return Err(MetricsError::ZeroEnergy);
    }
    Ok((inner.norm() / (ey.sqrt() * eh.sqrt())).min(1.0))
}

/// Metrics for one validation sample.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub subject: String,
    pub antenna_i: usize,
    pub antenna_j: usize,
    pub on_ring: bool,
    pub cc: f64,
    pub mean_ad: f64,
    pub max_rd_percent: f64,
    pub mean_pd_rad: f64,
}

/// Aggregate all four per-sample metrics at once.
pub fn sample_metrics(
    y: &FieldMap,
    y_hat: &FieldMap,
    subject: &str,
    antenna: (usize, usize),
    on_ring: bool,
) -> Result<SampleMetrics, MetricsError> {
    let ad = absolute_difference(y, y_hat)?;
    let rd = relative_difference(y, y_hat)?;
    let cc = complex_correlation(y, y_hat)?;
    let pd = mean_phase_difference(y, y_hat)?;
    Ok(SampleMetrics {
        subject: subject.to_string(),
        antenna_i: antenna.0,
        antenna_j: antenna.1,
        on_ring,
        cc,
        mean_ad: ad.iter().sum::<f64>() / ad.len() as f64,
        max_rd_percent: rd.iter().fold(0.0, |a: f64, &b| a.max(b)),
        mean_pd_rad: pd,
    })
}

/// Per-subject mean and population standard deviation of CC.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectStats {
    pub subject: String,
    pub mean_cc: f64,
    pub std_cc: f64,
    pub samples: usize,
}

/// Group CC values by subject (input order preserved for subjects).
pub fn per_subject_stats(
    samples: &[(String, f64)],
) -> Result<Vec<SubjectStats>, MetricsError> {
    if samples.is_empty() {
        return Err(MetricsError::EmptyGroup);
    }
    let mut order: Vec<&str> = Vec::new();
    for (subject, _) in samples {
        if !order.contains(&subject.as_str()) {
            order.push(subject);
        }
    }
    let mut out = Vec::with_capacity(order.len());
    for subject in order {
        let values: Vec<f64> = samples
            .iter()
            .filter(|(s, _)| s == subject)
            .map(|(_, cc)| *cc)
            .collect();
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        out.push(SubjectStats {
            subject: subject.to_string(),
            mean_cc: mean,
            std_cc: var.sqrt(),
            samples: values.len(),
        });
    }
    Ok(out)
}

/// Wall-time comparison between the physics solver and the surrogate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingSummary {
    pub mean_solver_seconds: f64,
    pub mean_surrogate_seconds: f64,
    /// mean solver time / mean surrogate time.
    pub speedup: f64,
}

pub fn timing_comparison(
    solver_seconds: &[f64],
    surrogate_seconds: &[f64],
) -> Result<TimingSummary, MetricsError> {
    if solver_seconds.is_empty() || surrogate_seconds.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mean_solver = solver_seconds.iter().sum::<f64>() / solver_seconds.len() as f64;
    let mean_surrogate = surrogate_seconds.iter().sum::<f64>() / surrogate_seconds.len() as f64;
    Ok(TimingSummary {
        mean_solver_seconds: mean_solver,
        mean_surrogate_seconds: mean_surrogate,
        speedup: mean_solver / mean_surrogate,
    })
}
