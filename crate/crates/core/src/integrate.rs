//! Time integration of the consensus dynamics.
//!
//! Everything here integrates linear systems `dx/ds = M(s) x` where the
//! matrix-valued map `M` is supplied by the caller (for the full network
//! that is `-L(t)`; rescaled systems pass their own maps). The default
//! scheme is classic fourth-order Runge-Kutta with a fixed step chosen
//! from the sampled matrix norm, which keeps runs deterministic and
//! reproducible. A step-doubling adaptive mode exists for high-contrast
//! weights.
//!
//! The same stepper drives the matrix equation for the fundamental
//! matrix of an isolated cluster, from which the per-cluster aggregation
//! weights are extracted: the fundamental matrix is integrated forward
//! until its rows agree, and the common row (averaged over rows) is the
//! weight vector defining the invariant cluster aggregate.

use nalgebra::{DMatrix, DVector};

use crate::error::Error;
use crate::util::{inf_norm, linspace};
use crate::Result;

/// Steps below this are treated as underflow.
const MIN_STEP: f64 = 1e-12;

/// Solver configuration.
#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    /// Fixed step size; `None` picks `min(0.01, 0.1 / max_s ||M(s)||)`.
    pub step: Option<f64>,
    /// Use step-doubling adaptive control instead of a fixed step.
    pub adaptive: bool,
    /// Local error tolerance for the adaptive mode.
    pub tol: f64,
    /// Keep every k-th step in the trajectory (the last step is always
    /// kept).
    pub record_every: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            step: None,
            adaptive: false,
            tol: 1e-9,
            record_every: 1,
        }
    }
}

/// Settings a trajectory was produced with.
#[derive(Debug, Clone, Copy)]
pub struct SolverMeta {
    pub method: &'static str,
    /// The fixed step, or the initial step for the adaptive mode.
    pub step: f64,
    pub tol: f64,
}

/// Sampled solution of one integration run.
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// Strictly increasing sample times.
    pub times: Vec<f64>,
    /// State at each sample time.
    pub states: Vec<DVector<f64>>,
    pub meta: SolverMeta,
    /// Derivatives at the samples, kept for dense output.
    derivs: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn final_state(&self) -> &DVector<f64> {
        self.states.last().unwrap()
    }

    /// Cubic Hermite interpolation between the two samples bracketing
    /// `t`. `t` may exceed the sampled range by at most a rounding slack.
    pub fn sample(&self, t: f64) -> DVector<f64> {
        let t0 = self.times[0];
        let t1 = self.final_time();
        assert!(
            t >= t0 - 1e-9 && t <= t1 + 1e-9,
            "sample time {t} outside [{t0}, {t1}]"
        );
        let t = t.clamp(t0, t1);
        let idx = match self.times.binary_search_by(|probe| probe.total_cmp(&t)) {
            Ok(i) => return self.states[i].clone(),
            Err(i) => i - 1,
        };
        let h = self.times[idx + 1] - self.times[idx];
        let theta = (t - self.times[idx]) / h;
        let t2 = theta * theta;
        let t3 = t2 * theta;
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + theta;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        &self.states[idx] * h00
            + &self.derivs[idx] * (h10 * h)
            + &self.states[idx + 1] * h01
            + &self.derivs[idx + 1] * (h11 * h)
    }

    /// Largest violation of the consensus envelope: for consensus
    /// dynamics the componentwise minimum may only grow and the maximum
    /// only shrink along the run. Returns 0 for a perfectly contracting
    /// trajectory.
    pub fn envelope_violation(&self) -> f64 {
        let mut worst = 0.0f64;
        for pair in self.states.windows(2) {
            let (lo0, hi0) = min_max(&pair[0]);
            let (lo1, hi1) = min_max(&pair[1]);
            worst = worst.max(lo0 - lo1).max(hi1 - hi0);
        }
        worst
    }
}

fn min_max(v: &DVector<f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &x in v.iter() {
        lo = lo.min(x);
        hi = hi.max(x);
    }
    (lo, hi)
}

/// Pick the default fixed step from the sampled matrix norm.
fn auto_step<F: Fn(f64) -> DMatrix<f64>>(rhs: &F, t0: f64, t1: f64) -> f64 {
    let mut norm_max = 0.0f64;
    for t in linspace(t0, t1, 101) {
        norm_max = norm_max.max(inf_norm(&rhs(t)));
    }
    if norm_max == 0.0 {
        0.01f64.min(t1 - t0)
    } else {
        (0.01f64).min(0.1 / norm_max).min(t1 - t0)
    }
}

fn rk4_step_vec<F: Fn(f64) -> DMatrix<f64>>(
    rhs: &F,
    t: f64,
    x: &DVector<f64>,
    h: f64,
    m_t: &DMatrix<f64>,
) -> DVector<f64> {
    let m_half = rhs(t + 0.5 * h);
    let m_full = rhs(t + h);
    let k1 = m_t * x;
    let k2 = &m_half * (x + &k1 * (0.5 * h));
    let k3 = &m_half * (x + &k2 * (0.5 * h));
    let k4 = &m_full * (x + &k3 * h);
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

fn rk4_step_mat<F: Fn(f64) -> DMatrix<f64>>(
    rhs: &F,
    t: f64,
    x: &DMatrix<f64>,
    h: f64,
) -> DMatrix<f64> {
    let m_t = rhs(t);
    let m_half = rhs(t + 0.5 * h);
    let m_full = rhs(t + h);
    let k1 = &m_t * x;
    let k2 = &m_half * (x + &k1 * (0.5 * h));
    let k3 = &m_half * (x + &k2 * (0.5 * h));
    let k4 = &m_full * (x + &k3 * h);
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// Integrate `dx/ds = rhs(s) x` from `x0` over `[t0, t1]`.
pub fn integrate<F: Fn(f64) -> DMatrix<f64>>(
    rhs: F,
    x0: &DVector<f64>,
    t0: f64,
    t1: f64,
    opts: SolverOptions,
) -> Result<Trajectory> {
    if t1 <= t0 {
        return Err(Error::Solver(format!("empty time span [{t0}, {t1}]")));
    }
    if opts.adaptive {
        integrate_adaptive(rhs, x0, t0, t1, opts)
    } else {
        integrate_fixed(rhs, x0, t0, t1, opts)
    }
}

fn integrate_fixed<F: Fn(f64) -> DMatrix<f64>>(
    rhs: F,
    x0: &DVector<f64>,
    t0: f64,
    t1: f64,
    opts: SolverOptions,
) -> Result<Trajectory> {
    let h = opts.step.unwrap_or_else(|| auto_step(&rhs, t0, t1));
    if h < MIN_STEP {
        return Err(Error::Solver(format!("step underflow: h = {h}")));
    }
    let steps = ((t1 - t0) / h).ceil() as usize;
    let every = opts.record_every.max(1);

    let mut times = Vec::with_capacity(steps / every + 2);
    let mut states = Vec::with_capacity(steps / every + 2);
    let mut derivs = Vec::with_capacity(steps / every + 2);

    let mut t = t0;
    let mut x = x0.clone();
    let mut m_t = rhs(t);
    times.push(t);
    derivs.push(&m_t * &x);
    states.push(x.clone());

    for step in 0..steps {
        let h_step = if t + h > t1 { t1 - t } else { h };
        if h_step <= 0.0 {
            break;
        }
        x = rk4_step_vec(&rhs, t, &x, h_step, &m_t);
        t = if step == steps - 1 { t1 } else { t + h_step };
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Solver(format!("non-finite state at t = {t}")));
        }
        m_t = rhs(t);
        if (step + 1) % every == 0 || step == steps - 1 {
            times.push(t);
            derivs.push(&m_t * &x);
            states.push(x.clone());
        }
    }

    Ok(Trajectory {
        times,
        states,
        derivs,
        meta: SolverMeta {
            method: "rk4-fixed",
            step: h,
            tol: opts.tol,
        },
    })
}

fn integrate_adaptive<F: Fn(f64) -> DMatrix<f64>>(
    rhs: F,
    x0: &DVector<f64>,
    t0: f64,
    t1: f64,
    opts: SolverOptions,
) -> Result<Trajectory> {
    let h0 = opts.step.unwrap_or_else(|| auto_step(&rhs, t0, t1));
    let mut h = h0;
    let mut t = t0;
    let mut x = x0.clone();

    let mut times = vec![t];
    let mut derivs = vec![&rhs(t) * &x];
    let mut states = vec![x.clone()];

    while t < t1 {
        if h < MIN_STEP {
            return Err(Error::Solver(format!("step underflow at t = {t}: h = {h}")));
        }
        let h_step = h.min(t1 - t);
        let m_t = rhs(t);
        let full = rk4_step_vec(&rhs, t, &x, h_step, &m_t);
        let half = rk4_step_vec(&rhs, t, &x, 0.5 * h_step, &m_t);
        let m_mid = rhs(t + 0.5 * h_step);
        let two_half = rk4_step_vec(&rhs, t + 0.5 * h_step, &half, 0.5 * h_step, &m_mid);
        let err = (&full - &two_half)
            .iter()
            .map(|v| v.abs())
            .fold(0.0, f64::max)
            / 15.0;

        if err <= opts.tol || h_step <= MIN_STEP {
            t += h_step;
            x = two_half;
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Solver(format!("non-finite state at t = {t}")));
            }
            times.push(t);
            derivs.push(&rhs(t) * &x);
            states.push(x.clone());
        }

        // Standard step-size controller with conservative clamping.
        let scale = if err == 0.0 {
            5.0
        } else {
            (0.9 * (opts.tol / err).powf(0.2)).clamp(0.2, 5.0)
        };
        h = h_step * scale;
    }

    Ok(Trajectory {
        times,
        states,
        derivs,
        meta: SolverMeta {
            method: "rk4-adaptive",
            step: h0,
            tol: opts.tol,
        },
    })
}

/// Fundamental matrix of an isolated cluster: maps the cluster state at
/// `start` to the state at `end`.
#[derive(Debug, Clone)]
pub struct FundamentalMatrix {
    pub matrix: DMatrix<f64>,
    pub start: f64,
    pub end: f64,
}

impl FundamentalMatrix {
    /// Most negative entry (0 when all entries are nonnegative).
    pub fn negativity(&self) -> f64 {
        self.matrix
            .iter()
            .fold(0.0f64, |acc, &v| acc.min(v))
            .min(0.0)
    }

    /// Largest deviation of a row sum from 1.
    pub fn row_sum_error(&self) -> f64 {
        self.matrix
            .row_iter()
            .map(|row| (row.sum() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Largest over columns of (max minus min across rows); zero when
    /// every row is identical.
    pub fn row_disagreement(&self) -> f64 {
        column_spread(&self.matrix)
    }
}

fn column_spread(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for col in m.column_iter() {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in col.iter() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        worst = worst.max(hi - lo);
    }
    worst
}

/// Integrate the matrix equation `dP/ds = -Lk(s) P` from the identity at
/// `t` up to `tau`.
pub fn fundamental_matrix<F: Fn(f64) -> DMatrix<f64>>(
    lk: F,
    t: f64,
    tau: f64,
) -> Result<FundamentalMatrix> {
    let nk = lk(t).nrows();
    if tau < t {
        return Err(Error::Solver(format!("end time {tau} before start {t}")));
    }
    let mut phi = DMatrix::identity(nk, nk);
    if tau > t {
        let rhs = |s: f64| -lk(s);
        let h = auto_step(&rhs, t, tau);
        let steps = ((tau - t) / h).ceil() as usize;
        let mut s = t;
        for step in 0..steps {
            let h_step = if s + h > tau { tau - s } else { h };
            phi = rk4_step_mat(&rhs, s, &phi, h_step);
            s = if step == steps - 1 { tau } else { s + h_step };
        }
        if phi.iter().any(|v| !v.is_finite()) {
            return Err(Error::Solver(format!("non-finite propagator at s = {s}")));
        }
    }
    Ok(FundamentalMatrix {
        matrix: phi,
        start: t,
        end: tau,
    })
}

/// Convergence log of a propagator integration.
#[derive(Debug, Clone, Copy)]
pub struct PhiCheckpoint {
    /// Time of the checkpoint.
    pub s: f64,
    /// Row disagreement at that time.
    pub spread: f64,
    /// Smallest matrix entry at that time.
    pub min_entry: f64,
}

/// Aggregation weights of one cluster: the common row of the converged
/// fundamental matrix. Defines the time-invariant weighted average of
/// the cluster's isolated dynamics.
#[derive(Debug, Clone)]
pub struct AggregationWeights {
    /// One weight per agent of the cluster; sums to 1.
    pub weights: DVector<f64>,
    /// Base time the propagator started from.
    pub base_time: f64,
    /// Row disagreement at truncation: the error bar on the weights.
    pub spread: f64,
    /// Checkpoints recorded along the integration.
    pub trace: Vec<PhiCheckpoint>,
}

/// Steps between convergence checks while integrating the propagator.
const CHECK_INTERVAL: usize = 16;

/// Extract the aggregation weights at base time `t`: integrate the
/// propagator forward until its row disagreement falls below `tol`
/// (errors out at `t_cap`), then average the rows.
pub fn compute_q<F: Fn(f64) -> DMatrix<f64>>(
    lk: F,
    t: f64,
    tol: f64,
    t_cap: f64,
) -> Result<AggregationWeights> {
    let nk = lk(t).nrows();
    if nk == 1 {
        return Ok(AggregationWeights {
            weights: DVector::from_element(1, 1.0),
            base_time: t,
            spread: 0.0,
            trace: vec![PhiCheckpoint {
                s: t,
                spread: 0.0,
                min_entry: 1.0,
            }],
        });
    }
    if t_cap <= t {
        return Err(Error::Solver(format!(
            "time cap {t_cap} does not exceed base time {t}"
        )));
    }
    let rhs = |s: f64| -lk(s);
    let h = auto_step(&rhs, t, t_cap);
    let mut phi = DMatrix::identity(nk, nk);
    let mut s = t;
    let mut trace = Vec::new();
    let mut spread = column_spread(&phi);

    let steps = ((t_cap - t) / h).ceil() as usize;
    for step in 0..steps {
        let h_step = if s + h > t_cap { t_cap - s } else { h };
        phi = rk4_step_mat(&rhs, s, &phi, h_step);
        s = if step == steps - 1 { t_cap } else { s + h_step };
        if (step + 1) % CHECK_INTERVAL == 0 || step == steps - 1 {
            if phi.iter().any(|v| !v.is_finite()) {
                return Err(Error::Solver(format!("non-finite propagator at s = {s}")));
            }
            spread = column_spread(&phi);
            let min_entry = phi.iter().fold(f64::INFINITY, |acc, &v| acc.min(v));
            trace.push(PhiCheckpoint {
                s,
                spread,
                min_entry,
            });
            if spread < tol {
                break;
            }
        }
    }
    if spread >= tol {
        return Err(Error::Solver(format!(
            "propagator rows did not agree below {tol} by s = {t_cap} \
             (got {spread}); weak internal coupling or cap too small"
        )));
    }

    // Average over rows: residual disagreement cancels symmetrically.
    let mut weights = DVector::zeros(nk);
    for j in 0..nk {
        weights[j] = phi.column(j).sum() / nk as f64;
    }
    Ok(AggregationWeights {
        weights,
        base_time: t,
        spread,
        trace,
    })
}

/// Evaluate the invariant `q(t)^T x(t)` along the isolated dynamics at
/// each grid time. `cap_gap` bounds how far past each grid point the
/// propagator may integrate.
pub fn q_invariant<F: Fn(f64) -> DMatrix<f64> + Copy>(
    lk: F,
    x0: &DVector<f64>,
    t_grid: &[f64],
    tol: f64,
    cap_gap: f64,
) -> Result<Vec<f64>> {
    assert!(!t_grid.is_empty());
    let t0 = t_grid[0];
    let t1 = *t_grid.last().unwrap();
    let traj = if t1 > t0 {
        Some(integrate(
            move |s| -lk(s),
            x0,
            t0,
            t1,
            SolverOptions::default(),
        )?)
    } else {
        None
    };
    let mut out = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let q = compute_q(lk, t, tol, t + cap_gap)?;
        let x = match &traj {
            Some(traj) => traj.sample(t),
            None => x0.clone(),
        };
        out.push(q.weights.dot(&x));
    }
    Ok(out)
}
