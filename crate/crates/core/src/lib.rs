//! Frequency-domain electric field simulation in segmented tissue phantoms,
//! plus a convolutional surrogate that learns to replace the simulator.
//!
//! The crate is organized around the pipeline:
//!
//! 1. [`phantom`] — synthetic segmented head phantoms, dielectric material
//!    tables, and antenna placements.
//! 2. [`solver`] — a 2D TMz finite-difference frequency-domain solver for
//!    ∇·(μ_r⁻¹∇E_z) + k₀²ε̃_r E_z = jωμ₀J_z with a stretched-coordinate PML,
//!    used as the ground-truth oracle.
//! 3. [`surrogate`] — a four-stage U-Net regression model with from-scratch
//!    reverse-mode differentiation, mapping (tissue map + antenna pixel) to
//!    the complex field.
//! 4. [`metrics`] — complex-field evaluation metrics (AD, RD, PD, CC) and
//!    timing aggregation.
//! 5. [`harness`] — dataset container, training/evaluation orchestration,
//!    benchmarking, and image rendering behind the `emu` CLI.

pub mod constants;
pub mod harness;
pub mod metrics;
pub mod phantom;
pub mod solver;
pub mod surrogate;
