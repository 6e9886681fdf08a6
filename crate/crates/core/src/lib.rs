//! Numerical toolkit for Green's functions of two-dimensional divergence-form
//! elliptic operators and for concentrated, uniformly rotating helical vortex
//! patches in a pipe of circular cross-section.
//!
//! The crate is organised bottom-up:
//!
//! * [`helical_coeff`]: the helical coefficient matrix `K_H`, its Cholesky-type
//!   factor `T`, the rotation coefficient `α` and the potential `Y`.
//! * [`mesh`]: concentric-ring triangulations of the disc and point location.
//! * [`fem`]: P1 Galerkin assembly and a Jacobi-preconditioned CG solver for
//!   `-div(K ∇u) = f` with homogeneous Dirichlet data.
//! * [`green`]: discrete Green's functions and the split `G = G₀ + S`.
//! * [`patch`]: bathtub iteration for the constrained energy maximiser.
//! * [`transport`]: time evolution of the vorticity equation and the
//!   orbital-stability experiment.
//! * [`helix`]: the binormal-flow helix and the lift of a planar patch to a
//!   helical vortex tube.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checks;
pub mod error;
pub mod fem;
pub mod green;
pub mod helical_coeff;
pub mod helix;
pub mod linalg;
pub mod mesh;
pub mod patch;
pub mod stats;
pub mod transport;

pub use error::{Error, Result};
pub use helical_coeff::{CoefficientField, HelicalField, HelixParams, IdentityField, Mat2, Point};
pub use mesh::DiscMesh;
