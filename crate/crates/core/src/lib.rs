//! Exact aggregate flexibility of EV charging fleets.
//!
//! Each vehicle's set of feasible charging profiles is a permutahedron on its
//! arrival/departure window. Vehicles sharing a window add up to a single
//! permutahedron, and the whole fleet becomes a Minkowski sum of one
//! permutahedron per window. [`aggregate`] builds and queries that set,
//! [`solver`] optimizes over it through per-window doubly stochastic
//! variables, and [`disaggregate`] turns an optimal aggregate profile back
//! into per-vehicle schedules.

pub mod aggregate;
pub mod disaggregate;
pub mod error;
pub mod fleet;
pub mod oracle;
pub mod permutahedron;
pub mod series;
pub mod solver;

pub use aggregate::AggregateFlexibility;
pub use error::{Error, Result};
pub use fleet::{EvRequest, MonotoneVertex, TimeHorizon, Window};
pub use permutahedron::Permutation;
pub use solver::{Objective, SolveOptions, SolverSolution};
