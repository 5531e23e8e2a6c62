//! Upper-bound solvers for the time-dependent travelling salesman problem.
//!
//! The toolkit builds a *path ranking invariant* auxiliary graph whose travel
//! times come from a shared stepwise speed function and per-arc lengths, fits
//! that graph to the original time-dependent travel times with a linear
//! program, and then solves a plain time-invariant ATSP on the fitted graph to
//! obtain an upper bound on the optimal tour duration. Three heuristics are
//! provided:
//!
//! * `HTSP` — baseline with constant worst-case arc costs,
//! * `PL-HTSP` — LP fit enforced on a full discretization of the horizon,
//! * `MLPL-HTSP` — LP fit enforced only around arrival times predicted by a
//!   small regression model trained on previously solved instances.
//!
//! Exact solvers (a FIFO-exploiting subset dynamic program and brute-force
//! enumerators) provide ground truth at small sizes, and `io` holds the
//! instance/model/result file formats plus a seeded synthetic generator.

pub mod atsp;
pub mod bounds;
pub mod config;
pub mod error;
pub mod fitlp;
pub mod io;
pub mod learn;
pub mod oracle;
pub mod tdgraph;

#[cfg(test)]
pub(crate) mod testutil;

pub use config::Tolerances;
pub use error::{Error, Result};
