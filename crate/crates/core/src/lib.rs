//! Numerical laboratory for sectorial operators on periodic grids: Hölder
//! norms, symbol calculus, resolvent sweeps, semiclassical parametrices,
//! contour semigroups and fourth-order geometric flows.

pub mod flow;
pub mod grid;
pub mod operator;
pub mod report;
pub mod resolvent;
pub mod semiclassical;
pub mod semigroup;
pub mod stats;
pub mod symbol;

pub use num_complex::Complex64;
