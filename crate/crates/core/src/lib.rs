//! Homogenized bidomain model of a fascicle of myelinated axons.
//!
//! The pipeline runs in three stages:
//!
//! 1. [`geometry`] voxelizes the periodicity cell and [`cell_solver`] solves
//!    the periodic Laplace cell problems on it;
//! 2. [`effective`] turns cell fields into the effective conductivities that
//!    parameterize the macroscopic model;
//! 3. [`bidomain`] integrates the homogenized bidomain system with
//!    FitzHugh-Nagumo membrane kinetics ([`membrane`]), while [`ladder`]
//!    provides a discrete micro-scale network used to check convergence as
//!    the cell size shrinks.
//!
//! [`app`] binds the stages to configuration files and output writers.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod app;
pub mod bidomain;
pub mod cell_solver;
pub mod effective;
pub mod error;
pub mod geometry;
pub mod ladder;
pub mod membrane;
pub mod numerics;

pub use error::{Error, Result};
