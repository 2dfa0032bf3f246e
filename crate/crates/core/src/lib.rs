//! Finite-volume simulator for the regularized chemotaxis-Stokes system with
//! porous-medium cell diffusion and tensor-valued chemotactic sensitivity,
//! together with diagnostics that track the quantities controlling its
//! boundedness and large-time behavior.
//!
//! Module map:
//! - [`model`]: parameter functions, regularizations, exponent-regime checks.
//! - [`fields`]: MAC grid, discrete calculus, quadrature.
//! - [`linsolve`]: Krylov solves and the discrete Leray projection.
//! - [`stepper`]: the split time integrator and its time-step control.
//! - [`diagnostics`]: monitored functionals, bounds, convergence metrics.
//! - [`config`], [`init`], [`io`], [`cli`]: run configuration, initial data,
//!   file formats and the command-line surface.

// `!(x >= 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Axis-indexed loops read better than zipped iterators in stencil code.
#![allow(clippy::needless_range_loop)]

pub mod model;
pub mod fields;
pub mod linsolve;
pub mod stepper;
pub mod diagnostics;
pub mod config;
pub mod init;
pub mod io;
pub mod cli;
