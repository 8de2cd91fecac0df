//! Steady states, reproduction numbers, and small-diffusion limit profiles
//! for a two-species SIS reaction-diffusion model with mass-action-like
//! incidence `beta(x) S^q I^p` and no-flux boundaries.
//!
//! The crate is organised around a cell-centered finite-volume discretisation
//! ([`grid`]) on intervals, rectangles, and disks. On top of it sit:
//!
//! * [`equilibrium`] — endemic steady states via a one-parameter reduction
//!   (the combination `kappa = d_S S + d_I I` is spatially constant at
//!   equilibrium) with a damped Newton inner solve;
//! * [`spectra`] — the basic reproduction number as a generalised Rayleigh
//!   quotient, plus logistic (Fisher-KPP type) auxiliary problems;
//! * [`limits`] — closed-form / scalar-equation limit profiles for small
//!   diffusion in either species and for the joint limit at a fixed ratio;
//! * [`evolve`] — an IMEX time stepper for the parabolic system, used both
//!   for simulation output and as an independent cross-check of the steady
//!   solver;
//! * [`study`] — parameter sweeps that measure how fast computed equilibria
//!   approach their limit profiles, with CSV/PGM reporting.

pub mod config;
pub mod equilibrium;
pub mod error;
pub mod evolve;
pub mod fields;
pub mod grid;
pub mod limits;
pub mod linalg;
pub mod output;
pub mod solver;
pub mod spectra;
pub mod study;
