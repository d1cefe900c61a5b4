//! Numerical laboratory for consensus dynamics on time-varying directed
//! clustered networks.
//!
//! The crate takes a network of agents partitioned into clusters, with
//! closed-form time-varying interaction weights, and provides the full
//! analysis chain:
//!
//! * [`expr`] — parse and evaluate the weight expressions;
//! * [`network`] — build the adjacency/Laplacian matrices and their
//!   intra/inter-cluster split;
//! * [`assumptions`] — compute cut quantities and verify the coupling
//!   assumptions on a time grid;
//! * [`integrate`] — integrate the consensus dynamics, the isolated
//!   cluster dynamics and their fundamental matrices, and extract the
//!   per-cluster aggregation weights;
//! * [`decompose`] — change variables to aggregate/disagreement
//!   coordinates, rescale time, and form the block system;
//! * [`reduce`] — build the averaged slow model and the boundary-layer
//!   model;
//! * [`study`] — run end-to-end approximation studies across a sweep of
//!   coupling scales;
//! * [`io`] — CSV and SVG emission.
//!
//! With the default `parallel` feature, grid sweeps and independent runs
//! use rayon; disabling it yields a fully sequential build with identical
//! results.
//!
//! ```
//! use tscale_core::{assumptions::check_assumptions, network::NetworkSpec};
//!
//! let config = r#"
//!     n = 2
//!     eps = 0.5
//!     horizon = 5.0
//!     clusters = [[1, 2]]
//!     w.1.2 = "2+cos(2*t)"
//!     w.2.1 = "2+cos(2*t)"
//! "#;
//! let (spec, _) = NetworkSpec::load(config)?;
//! let report = check_assumptions(&spec, 200)?;
//! assert!(report.all_hold());
//! # Ok::<(), tscale_core::Error>(())
//! ```

pub use nalgebra;

pub mod assumptions;
pub mod builtin;
pub mod decompose;
pub mod error;
pub mod exec;
pub mod expr;
pub mod integrate;
pub mod io;
pub mod network;
pub mod reduce;
pub mod study;
pub mod util;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
