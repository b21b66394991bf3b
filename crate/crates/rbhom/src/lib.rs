//! Certified reduced-basis homogenization of 2D scalar elliptic diffusion.
//!
//! The crate solves parametrized periodic cell problems with P1 finite
//! elements on the unit torus, builds a greedy reduced basis with rigorous a
//! posteriori output error bounds, and uses either engine (truth FE or
//! reduced) to assemble and solve macroscopic homogenized problems with
//! two-scale corrector reconstruction.
//!
//! Module map:
//! - [`mesh`], [`sparse`], [`assemble`] — periodic P1 finite elements,
//!   block-wise assembly, quotient-space solves;
//! - [`param`] — the five-parameter inclusion model and its affine
//!   decomposition over the fixed reference cell;
//! - [`cell`] — truth solves of the cell problems and the homogenized tensor;
//! - [`rb`] — greedy basis construction, online solves, certified error
//!   bounds and the effectivity audit;
//! - [`basis_io`] — the binary basis container;
//! - [`macroscale`] — macro mesh, homogenized solves, corrector sampling;
//! - [`sample`], [`config`], [`report`], [`commands`] — the experiment
//!   harness behind the `rbhom` binary.

pub mod assemble;
pub mod basis_io;
pub mod cell;
pub mod commands;
pub mod config;
pub mod error;
pub mod macroscale;
pub mod mesh;
pub mod param;
pub mod rb;
pub mod report;
pub mod sample;
pub mod sparse;

pub use assemble::Direction;
pub use cell::{AffineSystem, CellSolution, HomogTensor};
pub use error::{Error, Result};
pub use mesh::PeriodicMesh;
pub use param::{AffineCoeffs, CellParam, ParamBox};
pub use rb::{greedy_build, GreedyOptions, OnlineResult, ReducedBasis};
pub use sample::{sample_params, SampleSpec};
pub use sparse::{solve_spd, QuotientConstraint, SparseSpd};
