//! Linearized force-based quasicontinuum (QCF) coupling of a one-dimensional
//! chain with nearest and next-nearest neighbour pair interactions.
//!
//! [`potentials`] holds the nonlinear energies and force fields, [`operators`]
//! the assembled linear operators, [`stability`] the coercivity and inf-sup
//! quantities, [`solver`] the atomistic/QCF solves and error measurements, and
//! [`cli`] the experiment runner used by the `qcf` binary.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod lattice;
pub mod potentials;
pub mod operators;
pub mod stability;
pub mod solver;
pub mod fit;
pub mod cli;
