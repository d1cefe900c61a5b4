//! Reduced slow model and boundary-layer model.
//!
//! The slow model averages the aggregate-coupling block of the rescaled
//! system (in its vanishing-coupling limit) over long fast-time windows;
//! the average generates an m-dimensional consensus among the cluster
//! aggregates in slow time. The boundary layer integrates the
//! disagreement block at the same limit in fast time and decays to zero.
//!
//! The averaging assumption is verified, not assumed: the average is
//! recomputed over a halved window and from a second anchor, and the
//! worst discrepancy is reported. When the config declares a weight
//! period, windows are whole multiples of the period (in fast time), so
//! periodic inputs average essentially exactly.

use nalgebra::{DMatrix, DVector};

use crate::assumptions::AveragingRecord;
use crate::decompose::{QSchedule, RescaledSystem, TimeRescaling};
use crate::error::Error;
use crate::integrate::{integrate, SolverOptions, Trajectory};
use crate::network::NetworkSpec;
use crate::util::{inf_norm, linspace};
use crate::Result;

/// Samples per averaging window (trapezoid weights, endpoints included).
const WINDOW_SAMPLES: usize = 2001;

/// Relative threshold on the averaging residual.
pub const AVERAGING_TOL: f64 = 1e-4;

/// The averaged slow generator and the per-pair slow coupling weights.
#[derive(Debug, Clone)]
pub struct AveragedModel {
    /// m x m generator of the slow consensus system.
    pub matrix: DMatrix<f64>,
    /// Off-diagonal coupling weights (diagonal zero).
    pub slow_weights: DMatrix<f64>,
    /// Window length used, in fast time.
    pub window_tf: f64,
    /// Worst discrepancy across window halving and anchor change.
    pub residual: f64,
}

impl AveragedModel {
    /// Largest absolute row sum (a consensus generator has zero rows).
    pub fn row_sum_error(&self) -> f64 {
        self.matrix
            .row_iter()
            .map(|r| r.sum().abs())
            .fold(0.0, f64::max)
    }

    /// Smallest off-diagonal entry (nonnegative for a consensus
    /// generator, up to numerical noise).
    pub fn min_off_diagonal(&self) -> f64 {
        let m = self.matrix.nrows();
        let mut lo = f64::INFINITY;
        for k in 0..m {
            for l in 0..m {
                if k != l {
                    lo = lo.min(self.matrix[(k, l)]);
                }
            }
        }
        if lo.is_finite() {
            lo
        } else {
            0.0
        }
    }

    /// Verification record for the assumption report.
    pub fn averaging_record(&self) -> AveragingRecord {
        let norm = inf_norm(&self.matrix);
        AveragingRecord {
            holds: self.residual <= AVERAGING_TOL * norm.max(f64::MIN_POSITIVE),
            residual: self.residual,
            norm,
        }
    }
}

/// Anchors and window length used for the averages, in fast time.
#[derive(Debug, Clone, Copy)]
pub struct AveragingWindows {
    pub anchors: [f64; 2],
    pub window: f64,
}

/// Pick windows inside the tabulated fast-time span. With a declared
/// period, windows are whole multiples of it (up to 16) and the second
/// anchor sits two periods in; otherwise fractions of the span are used
/// and the residual honestly reflects whatever non-periodicity is
/// present.
pub fn averaging_windows(
    rescaling: &TimeRescaling,
    period: Option<f64>,
) -> Result<AveragingWindows> {
    let span = rescaling.fast_span();
    if let Some(p) = period {
        if p > 0.0 && rescaling.t_max() >= p {
            let p_tf = rescaling.fast_time(p);
            let anchor2 = 2.0 * p_tf;
            let periods = (((span - anchor2) / p_tf).floor() as usize).min(16);
            if periods >= 1 {
                return Ok(AveragingWindows {
                    anchors: [0.0, anchor2],
                    window: periods as f64 * p_tf,
                });
            }
        }
    }
    if span <= 0.0 {
        return Err(Error::Config(
            "fast-time table is empty; cannot average".into(),
        ));
    }
    Ok(AveragingWindows {
        anchors: [0.0, 0.1 * span],
        window: 0.4 * span,
    })
}

/// Trapezoid average of a matrix-valued map over `[anchor, anchor+window]`.
fn window_average<F: Fn(f64) -> Result<DMatrix<f64>>>(
    f: &F,
    anchor: f64,
    window: f64,
) -> Result<DMatrix<f64>> {
    let samples = linspace(anchor, anchor + window, WINDOW_SAMPLES);
    let mut acc: Option<DMatrix<f64>> = None;
    for (i, &s) in samples.iter().enumerate() {
        let weight = if i == 0 || i == samples.len() - 1 {
            0.5
        } else {
            1.0
        };
        let m = f(s)? * weight;
        acc = Some(match acc {
            None => m,
            Some(a) => a + m,
        });
    }
    Ok(acc.unwrap() / (WINDOW_SAMPLES - 1) as f64)
}

/// Average the slow block of the rescaled system at vanishing coupling
/// over two anchors and two window lengths; the primary window yields
/// the model, the spread of the four answers the residual.
pub fn averaged_model(
    sys: &RescaledSystem<'_>,
    windows: AveragingWindows,
) -> Result<AveragedModel> {
    let m = sys.spec().partition().cluster_count();
    if m == 1 {
        return Ok(AveragedModel {
            matrix: DMatrix::zeros(1, 1),
            slow_weights: DMatrix::zeros(1, 1),
            window_tf: 0.0,
            residual: 0.0,
        });
    }
    let span = sys.rescaling().fast_span();
    for anchor in windows.anchors {
        if anchor + windows.window > span * (1.0 + 1e-9) {
            return Err(Error::Config(format!(
                "averaging window [{anchor}, {}] exceeds the tabulated fast span {span}",
                anchor + windows.window
            )));
        }
    }

    let slow_block = |s: f64| Ok(sys.limit_blocks_at(s)?.slow_slow);
    let mut averages = Vec::with_capacity(4);
    for &anchor in &windows.anchors {
        for factor in [1.0, 0.5] {
            averages.push(window_average(
                &slow_block,
                anchor,
                windows.window * factor,
            )?);
        }
    }
    let primary = averages[0].clone();
    let mut residual = 0.0f64;
    for other in &averages[1..] {
        residual = residual.max(inf_norm(&(&primary - other)));
    }

    let mut slow_weights = DMatrix::zeros(m, m);
    for k in 0..m {
        for l in 0..m {
            if k != l {
                slow_weights[(k, l)] = primary[(k, l)];
            }
        }
    }
    Ok(AveragedModel {
        matrix: primary,
        slow_weights,
        window_tf: windows.window,
        residual,
    })
}

/// Slow coupling weights straight from their defining double sum: the
/// window average of
/// `sum_{j in C_l} sum_{i in C_k} q_i(t) a_ij(t) / (internal_cut(t) * eps)`
/// with `t` the base time of the fast sample. Cross-checks the averaged
/// model's off-diagonal entries.
pub fn slow_weights_direct(
    spec: &NetworkSpec,
    schedule: &QSchedule,
    rescaling: &TimeRescaling,
    windows: AveragingWindows,
) -> Result<DMatrix<f64>> {
    let partition = spec.partition();
    let m = partition.cluster_count();
    if m == 1 {
        return Ok(DMatrix::zeros(1, 1));
    }
    let eps = spec.eps();
    let summand = |s: f64| -> Result<DMatrix<f64>> {
        let t = rescaling.base_time(s);
        let c = rescaling.internal_cut(t);
        let snapshot = spec.snapshot(t);
        let qs = schedule.at(t);
        let mut out = DMatrix::zeros(m, m);
        for k in 0..m {
            for l in 0..m {
                if k == l {
                    continue;
                }
                let mut sum = 0.0;
                for (local, i) in partition.range(k).enumerate() {
                    let qi = qs[k][local];
                    for j in partition.range(l) {
                        sum += qi * snapshot.a[(i, j)];
                    }
                }
                out[(k, l)] = sum / (c * eps);
            }
        }
        Ok(out)
    };
    window_average(&summand, windows.anchors[0], windows.window)
}

/// Integrate the slow system `dy/dt_s = matrix * y` over `[0,
/// ts_horizon]`.
pub fn simulate_slow(
    model: &AveragedModel,
    y0: &DVector<f64>,
    ts_horizon: f64,
    opts: SolverOptions,
) -> Result<Trajectory> {
    integrate(|_| model.matrix.clone(), y0, 0.0, ts_horizon, opts)
}

/// Integrate the boundary layer `dz/dt_f = fast_fast(t_f, limit) * z`
/// over `[0, tf_horizon]`.
pub fn simulate_boundary_layer(
    sys: &RescaledSystem<'_>,
    z0: &DVector<f64>,
    tf_horizon: f64,
    opts: SolverOptions,
) -> Result<Trajectory> {
    if z0.iter().all(|&v| v == 0.0) {
        // Equilibrium: nothing to integrate.
        return integrate(
            |_| DMatrix::zeros(z0.len(), z0.len()),
            z0,
            0.0,
            tf_horizon,
            SolverOptions {
                step: Some(tf_horizon / 8.0),
                ..opts
            },
        );
    }
    let rhs = |t_f: f64| {
        sys.limit_blocks_at(t_f)
            .expect("limit blocks failed inside boundary layer")
            .fast_fast
    };
    integrate(rhs, z0, 0.0, tf_horizon, opts)
}
