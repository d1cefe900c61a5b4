//! Change of variables to aggregate/disagreement coordinates.
//!
//! For each cluster the state is re-expressed as one aggregate value
//! (the invariant weighted average) plus the distances of the remaining
//! agents to the cluster's first agent. Four block-diagonal matrices
//! realize the map: `aggregate` (rows of per-cluster weights),
//! `difference` (first-agent distance stencils), `indicator` (all-ones
//! columns) and `lift`, chosen so that
//!
//! * `difference * 1 = 0`,
//! * `aggregate * lift = 0`,
//! * `difference * lift = I`,
//! * `lift * difference = I - indicator * aggregate`.
//!
//! On top of that this module provides the block form of the dynamics in
//! the new coordinates, the fast-time rescaling `t -> integral of the
//! internal cut`, and the rescaled block system, including its limit as
//! the coupling scale goes to zero (evaluated through a small probe
//! value of `eps`).

use nalgebra::{DMatrix, DVector};

use crate::assumptions::weakest_internal_cut;
use crate::error::Error;
use crate::exec;
use crate::integrate::compute_q;
use crate::network::{ClusterPartition, LaplacianSnapshot, NetworkSpec};
use crate::util::{inf_norm, linspace};
use crate::Result;

/// Probe value standing in for the coupling-scale limit.
pub const LIMIT_PROBE_EPS: f64 = 1e-6;

/// The four change-of-variable matrices at one time.
#[derive(Debug, Clone)]
pub struct VariableSplit {
    /// m x n; row k holds cluster k's aggregation weights, so
    /// `y = aggregate * x`.
    pub aggregate: DMatrix<f64>,
    /// (n-m) x n; per-cluster distance-to-first-agent stencil, so
    /// `z = difference * x`.
    pub difference: DMatrix<f64>,
    /// n x (n-m); completes the inverse map `x = indicator*y + lift*z`.
    pub lift: DMatrix<f64>,
    /// n x m block-diagonal of all-ones columns.
    pub indicator: DMatrix<f64>,
    /// Time the aggregation weights were taken at.
    pub t: f64,
}

impl VariableSplit {
    /// Assemble the split from per-cluster aggregation weight vectors.
    pub fn build(
        partition: &ClusterPartition,
        qs: &[DVector<f64>],
        t: f64,
    ) -> Result<VariableSplit> {
        let m = partition.cluster_count();
        let n = partition.n();
        if qs.len() != m {
            return Err(Error::Config(format!(
                "expected {m} weight vectors, got {}",
                qs.len()
            )));
        }
        for (k, q) in qs.iter().enumerate() {
            if q.len() != partition.size(k) {
                return Err(Error::Config(format!(
                    "weight vector for cluster {} has length {}, expected {}",
                    k + 1,
                    q.len(),
                    partition.size(k)
                )));
            }
            let sum = q.sum();
            if (sum - 1.0).abs() > 1e-8 {
                return Err(Error::Config(format!(
                    "weights of cluster {} sum to {sum}, not 1",
                    k + 1
                )));
            }
            if q.iter().any(|&v| v <= 0.0) {
                return Err(Error::Config(format!(
                    "weights of cluster {} are not strictly positive",
                    k + 1
                )));
            }
        }

        let mut aggregate = DMatrix::zeros(m, n);
        let mut indicator = DMatrix::zeros(n, m);
        let mut difference = DMatrix::zeros(n - m, n);
        let mut lift = DMatrix::zeros(n, n - m);

        let mut z_row = 0;
        for k in 0..m {
            let range = partition.range(k);
            let nk = range.len();
            let base = range.start;
            for (local, q) in qs[k].iter().enumerate() {
                aggregate[(k, base + local)] = *q;
                indicator[(base + local, k)] = 1.0;
            }
            // Distance stencil: row r maps to x_{r+1} - x_first.
            for r in 0..nk - 1 {
                difference[(z_row + r, base)] = -1.0;
                difference[(z_row + r, base + r + 1)] = 1.0;
            }
            // Lift column c carries -q_{c+1} in every row of the block,
            // plus 1 on the row of agent c+1.
            for c in 0..nk - 1 {
                let qc = qs[k][c + 1];
                for i in 0..nk {
                    lift[(base + i, z_row + c)] = if i == c + 1 { 1.0 - qc } else { -qc };
                }
            }
            z_row += nk - 1;
        }

        Ok(VariableSplit {
            aggregate,
            difference,
            lift,
            indicator,
            t,
        })
    }

    /// `(y, z)` coordinates of a state vector.
    pub fn split(&self, x: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        (&self.aggregate * x, &self.difference * x)
    }

    /// Inverse map `x = indicator*y + lift*z`.
    pub fn reconstruct(&self, y: &DVector<f64>, z: &DVector<f64>) -> DVector<f64> {
        &self.indicator * y + &self.lift * z
    }

    /// Largest absolute residual over the five algebraic identities the
    /// four matrices must satisfy.
    pub fn max_identity_residual(&self) -> f64 {
        let n = self.aggregate.ncols();
        let m = self.aggregate.nrows();
        let ones = DVector::from_element(n, 1.0);
        let mut worst = 0.0f64;
        worst = worst.max(
            (&self.difference * &ones)
                .iter()
                .fold(0.0f64, |a, &v| a.max(v.abs())),
        );
        worst = worst.max(max_abs(&(&self.aggregate * &self.lift)));
        worst = worst.max(max_abs(
            &(&self.difference * &self.lift - DMatrix::identity(n - m, n - m)),
        ));
        worst = worst.max(max_abs(
            &(&self.lift * &self.difference
                - (DMatrix::identity(n, n) - &self.indicator * &self.aggregate)),
        ));
        worst = worst.max(max_abs(
            &(&self.aggregate * &self.indicator - DMatrix::identity(m, m)),
        ));
        worst
    }
}

/// Largest absolute entry (identity residuals are entrywise statements).
fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |a, &v| a.max(v.abs()))
}

/// Aggregation weights as a function of time.
///
/// Weights are constant whenever each cluster's internal Laplacian
/// varies by a common scalar factor; the builder detects that case by
/// probing a few base times. Otherwise the weights are sampled on a
/// uniform grid and interpolated linearly (linear interpolation
/// preserves the unit sum).
#[derive(Debug, Clone)]
pub enum QSchedule {
    Constant(Vec<DVector<f64>>),
    Sampled {
        times: Vec<f64>,
        values: Vec<Vec<DVector<f64>>>,
    },
}

/// Agreement threshold below which probed weights count as constant.
const CONSTANT_Q_TOL: f64 = 1e-8;

impl QSchedule {
    /// Build over `[0, t_max]`. `cap_gap` bounds each propagator run,
    /// `tol` is its convergence threshold, `samples` the grid size used
    /// when the weights genuinely vary.
    pub fn build(
        spec: &NetworkSpec,
        t_max: f64,
        tol: f64,
        cap_gap: f64,
        samples: usize,
    ) -> Result<QSchedule> {
        let partition = spec.partition();
        let m = partition.cluster_count();

        let probes: Vec<f64> = linspace(0.0, t_max, 5);
        let probe_qs: Vec<Vec<DVector<f64>>> = map_q_at_times(spec, &probes, tol, cap_gap)?;

        let mut constant = true;
        'outer: for k in 0..m {
            for probe in &probe_qs[1..] {
                let diff = &probe[k] - &probe_qs[0][k];
                if diff.iter().any(|v| v.abs() > CONSTANT_Q_TOL) {
                    constant = false;
                    break 'outer;
                }
            }
        }
        if constant {
            return Ok(QSchedule::Constant(probe_qs.into_iter().next().unwrap()));
        }

        let times = linspace(0.0, t_max, samples.max(2));
        let values = map_q_at_times(spec, &times, tol, cap_gap)?;
        Ok(QSchedule::Sampled { times, values })
    }

    /// Weight vectors at time `t`.
    pub fn at(&self, t: f64) -> Vec<DVector<f64>> {
        match self {
            QSchedule::Constant(qs) => qs.clone(),
            QSchedule::Sampled { times, values } => {
                let t0 = times[0];
                let t1 = *times.last().unwrap();
                let t = t.clamp(t0, t1);
                let idx = match times.binary_search_by(|p| p.total_cmp(&t)) {
                    Ok(i) => return values[i].clone(),
                    Err(i) => i - 1,
                };
                let w = (t - times[idx]) / (times[idx + 1] - times[idx]);
                values[idx]
                    .iter()
                    .zip(&values[idx + 1])
                    .map(|(a, b)| a * (1.0 - w) + b * w)
                    .collect()
            }
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, QSchedule::Constant(_))
    }

    /// The split at time `t`.
    pub fn split_at(&self, partition: &ClusterPartition, t: f64) -> Result<VariableSplit> {
        VariableSplit::build(partition, &self.at(t), t)
    }
}

/// Compute per-cluster weights at each listed time (parallel over
/// times).
fn map_q_at_times(
    spec: &NetworkSpec,
    times: &[f64],
    tol: f64,
    cap_gap: f64,
) -> Result<Vec<Vec<DVector<f64>>>> {
    let partition = spec.partition();
    let m = partition.cluster_count();
    let results = exec::map_collect(times, |&t| -> Result<Vec<DVector<f64>>> {
        (0..m)
            .map(|k| {
                let lk = |s: f64| spec.snapshot(s).cluster_laplacian(partition, k);
                Ok(compute_q(lk, t, tol, t + cap_gap)?.weights)
            })
            .collect()
    });
    results.into_iter().collect()
}

/// Dynamics blocks in the split coordinates at one time: the `slow_*`
/// rows drive the aggregates, the `fast_*` rows the disagreements.
#[derive(Debug, Clone)]
pub struct BlockSystem {
    pub slow_slow: DMatrix<f64>,
    pub slow_fast: DMatrix<f64>,
    pub fast_slow: DMatrix<f64>,
    pub fast_fast: DMatrix<f64>,
}

impl BlockSystem {
    /// Stack the four blocks into the full (y, z) system matrix.
    pub fn assemble(&self) -> DMatrix<f64> {
        let m = self.slow_slow.nrows();
        let d = self.fast_fast.nrows();
        let mut full = DMatrix::zeros(m + d, m + d);
        full.view_mut((0, 0), (m, m)).copy_from(&self.slow_slow);
        full.view_mut((0, m), (m, d)).copy_from(&self.slow_fast);
        full.view_mut((m, 0), (d, m)).copy_from(&self.fast_slow);
        full.view_mut((m, m), (d, d)).copy_from(&self.fast_fast);
        full
    }

    /// Largest excess of the three coupling blocks' norms over `limit`.
    pub fn upper_bound_violation(&self, limit: f64) -> f64 {
        let mut v = 0.0f64;
        v = v.max(inf_norm(&self.slow_slow) - limit);
        v = v.max(inf_norm(&self.slow_fast) - limit);
        v = v.max(inf_norm(&self.fast_slow) - limit);
        v.max(0.0)
    }

    /// Shortfall of the disagreement block's norm below `floor`.
    pub fn lower_bound_violation(&self, floor: f64) -> f64 {
        (floor - inf_norm(&self.fast_fast)).max(0.0)
    }
}

/// Unscaled blocks of the split dynamics at the snapshot's time.
pub fn block_matrices(snapshot: &LaplacianSnapshot, split: &VariableSplit) -> BlockSystem {
    let neg_l = -&snapshot.l;
    let al = &split.aggregate * &neg_l;
    let dl = &split.difference * &neg_l;
    BlockSystem {
        slow_slow: &al * &split.indicator,
        slow_fast: &al * &split.lift,
        fast_slow: &dl * &split.indicator,
        fast_fast: &dl * &split.lift,
    }
}

/// Monotone table of the fast-time map `t_f(t) = integral of the
/// internal cut`, with its inverse and the slow scale `t_s = eps * t_f`.
#[derive(Debug, Clone)]
pub struct TimeRescaling {
    times: Vec<f64>,
    fast: Vec<f64>,
    /// Internal cut sampled on the same grid.
    cuts: Vec<f64>,
    pub eps: f64,
}

impl TimeRescaling {
    /// Tabulate over `[0, t_max]` with `resolution` points (cumulative
    /// trapezoid). Errors if the internal cut is not strictly positive
    /// at a grid point.
    pub fn build(spec: &NetworkSpec, resolution: usize, t_max: f64) -> Result<TimeRescaling> {
        let times = linspace(0.0, t_max, resolution.max(2));
        let partition = spec.partition();
        let cuts_r: Vec<Result<f64>> = exec::map_collect(&times, |&t| {
            weakest_internal_cut(&spec.snapshot(t), partition)
        });
        let mut cuts = Vec::with_capacity(times.len());
        for (i, c) in cuts_r.into_iter().enumerate() {
            let c = c?;
            if c <= 0.0 {
                return Err(Error::Assumption(format!(
                    "internal cut is {c} at t = {}; fast time undefined",
                    times[i]
                )));
            }
            cuts.push(c);
        }
        let mut fast = Vec::with_capacity(times.len());
        fast.push(0.0);
        for i in 1..times.len() {
            let h = times[i] - times[i - 1];
            let inc = 0.5 * h * (cuts[i - 1] + cuts[i]);
            fast.push(fast[i - 1] + inc);
        }
        Ok(TimeRescaling {
            times,
            fast,
            cuts,
            eps: spec.eps(),
        })
    }

    pub fn t_max(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Largest tabulated fast time.
    pub fn fast_span(&self) -> f64 {
        *self.fast.last().unwrap()
    }

    /// `t_f(t)` by linear interpolation.
    pub fn fast_time(&self, t: f64) -> f64 {
        interp(&self.times, &self.fast, t)
    }

    /// Inverse map: the base time whose fast time is `t_f`.
    pub fn base_time(&self, t_f: f64) -> f64 {
        interp(&self.fast, &self.times, t_f)
    }

    /// Slow time of a base time.
    pub fn slow_time(&self, t: f64) -> f64 {
        self.eps * self.fast_time(t)
    }

    /// Interpolated internal cut at base time `t`.
    pub fn internal_cut(&self, t: f64) -> f64 {
        interp(&self.times, &self.cuts, t)
    }
}

fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let x0 = xs[0];
    let x1 = *xs.last().unwrap();
    assert!(
        x >= x0 - 1e-9 && x <= x1 + x1.abs() * 1e-12 + 1e-9,
        "query {x} outside tabulated range [{x0}, {x1}]"
    );
    let x = x.clamp(x0, x1);
    let idx = match xs.binary_search_by(|p| p.total_cmp(&x)) {
        Ok(i) => return ys[i],
        Err(i) => i - 1,
    };
    let w = (x - xs[idx]) / (xs[idx + 1] - xs[idx]);
    ys[idx] * (1.0 - w) + ys[idx + 1] * w
}

/// Rescaled block system in fast time. Construction verifies that the
/// small-coupling limit is stable: external weights must scale with
/// `eps`, otherwise the probe quotient changes when the probe halves.
#[derive(Debug)]
pub struct RescaledSystem<'a> {
    spec: &'a NetworkSpec,
    schedule: &'a QSchedule,
    rescaling: &'a TimeRescaling,
    /// Split reused across evaluations when the weights are constant.
    cached_split: Option<VariableSplit>,
}

impl<'a> RescaledSystem<'a> {
    pub fn new(
        spec: &'a NetworkSpec,
        schedule: &'a QSchedule,
        rescaling: &'a TimeRescaling,
    ) -> Result<Self> {
        let cached_split = if schedule.is_constant() {
            Some(schedule.split_at(spec.partition(), 0.0)?)
        } else {
            None
        };
        let sys = RescaledSystem {
            spec,
            schedule,
            rescaling,
            cached_split,
        };
        if spec.partition().cluster_count() >= 2 {
            sys.validate_limit()?;
        }
        Ok(sys)
    }

    pub fn rescaling(&self) -> &TimeRescaling {
        self.rescaling
    }

    pub fn spec(&self) -> &NetworkSpec {
        self.spec
    }

    /// Unscaled blocks of `spec` evaluated at base time `t` with an
    /// overridden coupling scale.
    fn bar_blocks(&self, t: f64, eps_value: f64) -> Result<BlockSystem> {
        let probe_spec = self.spec.with_eps(eps_value);
        let snapshot = probe_spec.snapshot(t);
        let built;
        let split = match &self.cached_split {
            Some(split) => split,
            None => {
                built = self.schedule.split_at(self.spec.partition(), t)?;
                &built
            }
        };
        Ok(block_matrices(&snapshot, split))
    }

    /// Rescaled blocks at fast time `t_f` for a positive coupling scale.
    pub fn blocks_at(&self, t_f: f64, eps: f64) -> Result<BlockSystem> {
        if eps <= 0.0 || eps.is_nan() {
            return Err(Error::Config(format!(
                "coupling scale must be positive, got {eps}; use limit_blocks_at for the limit"
            )));
        }
        let t = self.rescaling.base_time(t_f);
        let c = self.rescaling.internal_cut(t);
        let bar = self.bar_blocks(t, eps)?;
        Ok(BlockSystem {
            slow_slow: bar.slow_slow / (c * eps),
            slow_fast: bar.slow_fast / (c * eps),
            fast_slow: bar.fast_slow / (c * eps),
            fast_fast: bar.fast_fast / c,
        })
    }

    /// Rescaled blocks at fast time `t_f` in the vanishing-coupling
    /// limit, evaluated through the probe scale.
    pub fn limit_blocks_at(&self, t_f: f64) -> Result<BlockSystem> {
        let t = self.rescaling.base_time(t_f);
        let c = self.rescaling.internal_cut(t);
        let bar = self.bar_blocks(t, LIMIT_PROBE_EPS)?;
        Ok(BlockSystem {
            slow_slow: bar.slow_slow / (c * LIMIT_PROBE_EPS),
            slow_fast: bar.slow_fast / (c * LIMIT_PROBE_EPS),
            fast_slow: bar.fast_slow / (c * LIMIT_PROBE_EPS),
            fast_fast: bar.fast_fast / c,
        })
    }

    /// Compare the probe quotient at the probe scale and at half of it
    /// on a spread of sample times.
    fn validate_limit(&self) -> Result<()> {
        for &t_f in &linspace(0.0, self.rescaling.fast_span(), 16) {
            let t = self.rescaling.base_time(t_f);
            let c = self.rescaling.internal_cut(t);
            let full = self.bar_blocks(t, LIMIT_PROBE_EPS)?;
            let half = self.bar_blocks(t, 0.5 * LIMIT_PROBE_EPS)?;

            let q_full = [
                full.slow_slow / (c * LIMIT_PROBE_EPS),
                full.slow_fast / (c * LIMIT_PROBE_EPS),
                full.fast_slow / (c * LIMIT_PROBE_EPS),
                full.fast_fast / c,
            ];
            let q_half = [
                half.slow_slow / (c * 0.5 * LIMIT_PROBE_EPS),
                half.slow_fast / (c * 0.5 * LIMIT_PROBE_EPS),
                half.fast_slow / (c * 0.5 * LIMIT_PROBE_EPS),
                half.fast_fast / c,
            ];
            for (idx, (a, b)) in q_full.iter().zip(&q_half).enumerate() {
                // The disagreement block converges linearly in the probe
                // value itself, so it gets a probe-sized slack.
                let tol = if idx == 3 {
                    1e-6 + 16.0 * LIMIT_PROBE_EPS
                } else {
                    1e-6
                };
                let scale = inf_norm(a).max(inf_norm(b));
                if scale == 0.0 {
                    continue;
                }
                let rel = inf_norm(&(a - b)) / scale;
                if rel > tol {
                    return Err(Error::UnstableLimit(format!(
                        "probe quotients differ by {rel:.3e} (relative) at t = {t:.4}; \
                         external weights must be proportional to eps"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Sup-norm mismatch between integrating the block system and
/// integrating the original dynamics directly, both reconstructed to the
/// agent coordinates on a shared step grid.
pub fn dynamics_equivalence_residual(
    spec: &NetworkSpec,
    schedule: &QSchedule,
    x0: &DVector<f64>,
    t_end: f64,
) -> Result<f64> {
    use crate::integrate::{integrate, SolverOptions};

    let partition = spec.partition();
    let split0 = schedule.split_at(partition, 0.0)?;
    let (y0, z0) = split0.split(x0);
    let mut w0 = DVector::zeros(x0.len());
    w0.rows_mut(0, y0.len()).copy_from(&y0);
    w0.rows_mut(y0.len(), z0.len()).copy_from(&z0);

    // Shared fixed step so the two runs sample identical times.
    let direct_rhs = |t: f64| -spec.snapshot(t).l;
    let h = {
        let mut norm_max = 0.0f64;
        for t in linspace(0.0, t_end, 101) {
            norm_max = norm_max.max(inf_norm(&direct_rhs(t)));
        }
        if norm_max == 0.0 {
            0.01
        } else {
            (0.01f64).min(0.1 / norm_max)
        }
    };
    let opts = SolverOptions {
        step: Some(h),
        ..Default::default()
    };

    let direct = integrate(direct_rhs, x0, 0.0, t_end, opts)?;
    let block_rhs = |t: f64| {
        let snapshot = spec.snapshot(t);
        let split = schedule
            .split_at(partition, t)
            .expect("schedule produced an invalid split");
        block_matrices(&snapshot, &split).assemble()
    };
    let blocks = integrate(block_rhs, &w0, 0.0, t_end, opts)?;

    let m = partition.cluster_count();
    let mut worst = 0.0f64;
    for (i, &t) in blocks.times.iter().enumerate() {
        let w = &blocks.states[i];
        let split = schedule.split_at(partition, t)?;
        let y = w.rows(0, m).into_owned();
        let z = w.rows(m, w.len() - m).into_owned();
        let x_rec = split.reconstruct(&y, &z);
        let diff = &x_rec - &direct.states[i];
        worst = worst.max(diff.iter().fold(0.0f64, |a, &v| a.max(v.abs())));
    }
    Ok(worst)
}
