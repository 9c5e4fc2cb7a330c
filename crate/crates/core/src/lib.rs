//! Principal eigenvalues and eigenfunctions of the infinity-Laplacian
//! problem Δ∞u + λa(x)u³ = 0 on 2-D grid domains and radial domains.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dirichlet;
pub mod eigen;
pub mod geometry;
pub mod io;
pub mod operator;
pub mod radial;
pub mod verify;
