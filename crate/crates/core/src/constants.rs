//! Physical constants (SI units).

/// Vacuum permittivity ε₀ (F/m).
pub const EPS0: f64 = 8.8541878128e-12;

/// Vacuum permeability μ₀ (H/m).
pub const MU0: f64 = 1.25663706212e-6;

/// Speed of light in vacuum, 1/√(μ₀ε₀) (m/s).
pub const C0: f64 = 299_792_458.0;
