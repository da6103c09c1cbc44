//! Least-squares finite elements for diffuse-interface two-phase flow.
//!
//! The solver minimizes the first-order system least-squares functional of
//! the Allen-Cahn/Navier-Stokes equations with Newton's method, BDF time
//! stepping and nested iteration from a 2x2 bilinear grid up to a uniformly
//! or adaptively refined biquadratic grid. Linear systems are solved by
//! conjugate gradients preconditioned with a geometric multigrid V-cycle.
//!
//! Module map:
//! - [`mesh`]: quadtree meshes with 1-irregular refinement
//! - [`fespace`]: Lagrange spaces, hanging-node constraints, boundary conditions, transfers
//! - [`twophase`]: residual, linearization, functional and assembly
//! - [`linsolve`]: sparse matrices, multigrid, PCG, work units
//! - [`nested_driver`]: Newton loop, nested iteration, time stepping
//! - [`adapt`]: error indicators and marking
//! - [`energy`]: energy, dissipation and interface diagnostics
//! - [`io`]: configuration files, snapshots, energy series and reports
//! - [`verify`]: property checks behind the `verify` command

// NaN-rejecting `!(x > 0.0)` guards and index loops over coupled arrays are intended.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod adapt;
pub mod energy;
pub mod error;
pub mod fespace;
pub mod io;
pub mod linsolve;
pub mod mesh;
pub mod nested_driver;
pub mod twophase;
pub mod verify;

pub use error::{Error, Result};
