//! Error type shared across the crate.

use thiserror::Error;

/// Everything that can go wrong between reading a config file and
/// writing a study report.
#[derive(Debug, Error)]
pub enum Error {
    /// Weight expression failed to parse; `offset` is a byte offset into
    /// the expression source.
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    /// Structural problem in a network config (bad clusters, bad indices,
    /// malformed TOML, ...).
    #[error("config error: {0}")]
    Config(String),

    /// A weight evaluated to a negative or non-finite value on the
    /// validation grid.
    #[error("invalid weight w.{i}.{j} at t = {t}: {detail}")]
    InvalidWeight {
        i: usize,
        j: usize,
        t: f64,
        detail: String,
    },

    /// An assumption check failed (or a study refused to run because of
    /// it). Carries the printable witness.
    #[error("assumption violated: {0}")]
    Assumption(String),

    /// Exhaustive subset enumeration refused: cluster too large.
    #[error("cluster {cluster} has {size} agents, above the enumeration cap of {cap}")]
    ClusterTooLarge {
        cluster: usize,
        size: usize,
        cap: usize,
    },

    /// Integrator failure: step underflow, non-finite state, or no
    /// convergence of a propagator within its time cap.
    #[error("solver error: {0}")]
    Solver(String),

    /// The small-parameter limit of a rescaled block is not stable under
    /// halving the probe value, i.e. external weights are not
    /// proportional to `eps`.
    #[error("unstable limit at small coupling: {0}")]
    UnstableLimit(String),

    /// Nothing to draw.
    #[error("nothing to plot")]
    EmptyPlot,

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code convention used by the CLI: 2 assumption
    /// failure, 3 solver failure, 4 I/O, 1 anything else. An unstable
    /// small-coupling limit counts as an assumption failure: the
    /// averaged model's existence is one of the verified hypotheses.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Assumption(_) | Error::UnstableLimit(_) => 2,
            Error::Solver(_) => 3,
            Error::Io(_) => 4,
            _ => 1,
        }
    }
}
