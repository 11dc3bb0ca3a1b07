//! Multiscale solver for 2D mixed-dimensional elliptic problems.
//!
//! The model couples diffusion in bulk subdomains (codimension 0) with
//! tangential diffusion on embedded interfaces (codimension 1) through Robin
//! transfer terms; interfaces meet at junction points (codimension 2) where
//! the interface solution is continuous. The library provides:
//!
//! - geometry construction and validation from declarative polyline specs
//!   ([`geometry`]),
//! - compatible bulk/interface mesh hierarchies, element patches and
//!   agglomerated coarse elements ([`mesh`]),
//! - the fitted fine-scale discretization with broken bulk spaces and direct
//!   sparse solves ([`dof`], [`assemble`], [`sparse`]),
//! - quantity-of-interest interpolation and localized multiscale basis
//!   construction in global, stabilized, and naive variants ([`interp`],
//!   [`lod`]),
//! - a configuration-driven experiment harness with CSV reports and rate
//!   fits ([`harness`]).
//!
//! All data structures are immutable after construction; parallel sections
//! reduce in fixed element order, so results are independent of thread count.

// Index loops mirror the matrix formulas throughout the numeric kernels.
#![allow(clippy::needless_range_loop)]

pub mod assemble;
pub mod dof;
pub mod geometry;
pub mod harness;
pub mod interp;
pub mod lod;
pub mod mesh;
pub mod sparse;

pub use assemble::{
    assemble_load, assemble_operator, energy_norm, solve_dirichlet, Coefficient, CoefficientSet,
    EnergyOperator,
};
pub use dof::{build_space, DofMap};
pub use geometry::{build_domain, GeometrySpec, MixedDomain, SegmentId, Violation};
pub use harness::{fit_rates, run_experiment, ExperimentConfig, RateMode, ReportRow, Session};
pub use interp::{assemble_constraints, qoi, Interpolator, NodalInterp, PouInterp};
pub use lod::{
    apply_rl, build_basis, build_restricted, corrector_solve, decay_profile, solve_multiscale,
    BasisVariant, CorrectorResult, LodContext, MultiscaleBasis,
};
pub use mesh::{
    agglomerate, block_assignment, build_mesh, CoarseElem, CoarseTopology, MeshHierarchy, MeshPair,
    Patch,
};
