//! End-to-end approximation studies.
//!
//! A study fixes initial conditions, builds the reduced slow and
//! boundary-layer models once (they do not depend on the coupling
//! scale), then for each requested scale simulates the full network,
//! maps it into aggregate/disagreement coordinates and measures the
//! sup-norm gap to the reduced trajectories over a shared fast-time
//! grid. Every run also continues the full simulation until the agents
//! agree, recording the consensus value and the final spread.
//!
//! All comparisons happen on explicit sample grids; the reported
//! suprema are grid maxima and the grids are part of the report.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::assumptions::{check_assumptions_over, AssumptionReport};
use crate::builtin;
use crate::decompose::{QSchedule, RescaledSystem, TimeRescaling};
use crate::error::Error;
use crate::exec;
use crate::integrate::{integrate, SolverOptions, Trajectory};
use crate::io::{self, Plot, Series};
use crate::network::NetworkSpec;
use crate::reduce::{
    averaged_model, averaging_windows, simulate_boundary_layer, simulate_slow, AveragedModel,
};
use crate::util::{inf_norm_vec, linspace, spread};
use crate::Result;

/// Default number of fast-time comparison samples.
pub const DEFAULT_GRID: usize = 2000;

/// Default convergence threshold for aggregation weights.
pub const DEFAULT_Q_TOL: f64 = 1e-10;

/// Slow-horizon auto rule: stop when the slow spread falls below this
/// fraction of its initial value, capped at the stated slow time.
const SLOW_SPREAD_FRACTION: f64 = 0.01;
const SLOW_HORIZON_CAP: f64 = 20.0;

/// Consensus extension: keep integrating until the full spread falls
/// below this, up to the stated slow time.
const CONSENSUS_SPREAD_TARGET: f64 = 1e-5;
const CONSENSUS_SLOW_CAP: f64 = 100.0;

/// Study configuration.
#[derive(Debug, Clone, Copy)]
pub struct StudyOptions {
    /// Comparison grid size in fast time.
    pub grid_size: usize,
    /// Slow-time comparison horizon; `None` applies the auto rule.
    pub ts_horizon: Option<f64>,
    /// Aggregation-weight convergence threshold.
    pub q_tol: f64,
}

impl Default for StudyOptions {
    fn default() -> Self {
        StudyOptions {
            grid_size: DEFAULT_GRID,
            ts_horizon: None,
            q_tol: DEFAULT_Q_TOL,
        }
    }
}

/// Comparison outcome for one coupling scale.
#[derive(Debug, Clone)]
pub struct EpsRun {
    pub eps: f64,
    /// Grid supremum of the aggregate approximation error.
    pub sup_err_y: f64,
    /// Grid supremum of the disagreement approximation error.
    pub sup_err_z: f64,
    /// Sup-norm error of the stacked (aggregate, disagreement) state:
    /// the larger of the two components.
    pub combined_sup_err: f64,
    /// Common value the full system settles at.
    pub consensus_value: f64,
    /// Spread of the full state at the end of the consensus run.
    pub final_spread: f64,
    /// Disagreement magnitude of the full system at the end of the
    /// consensus run.
    pub final_z_norm: f64,
    /// Boundary-layer magnitude at the end of the comparison window.
    pub layer_final_norm: f64,
    /// Fast-time comparison horizon of this run.
    pub tf_horizon: f64,
    /// Slow time at which the consensus run stopped.
    pub consensus_ts: f64,
    /// The comparison grid, in slow time units (eps * t_f).
    pub ts_grid: Vec<f64>,
    /// Aggregates of the full system on the grid.
    pub y_full: Vec<DVector<f64>>,
    /// Reduced slow trajectory on the grid.
    pub y_slow: Vec<DVector<f64>>,
    /// Disagreements of the full system on the grid.
    pub z_full: Vec<DVector<f64>>,
    /// Boundary-layer trajectory on the grid.
    pub z_layer: Vec<DVector<f64>>,
}

/// Sup-norm approximation errors across a sweep of coupling scales.
#[derive(Debug, Clone)]
pub struct ApproximationReport {
    pub runs: Vec<EpsRun>,
    /// Slow-time comparison horizon shared by all runs.
    pub ts_horizon: f64,
    /// The averaged slow generator used for every run.
    pub slow_matrix: DMatrix<f64>,
    /// Assumption report of the reference scale, averaging included.
    pub assumptions: AssumptionReport,
}

impl ApproximationReport {
    pub fn eps_values(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.eps).collect()
    }

    /// Human-readable summary.
    pub fn render_text(&self) -> String {
        use std::fmt::Write as _;
        let mut out = String::new();
        let _ = writeln!(out, "slow-time horizon: {:.6}", self.ts_horizon);
        let _ = writeln!(out, "slow generator:");
        for r in 0..self.slow_matrix.nrows() {
            let row: Vec<String> = (0..self.slow_matrix.ncols())
                .map(|c| format!("{:+.6}", self.slow_matrix[(r, c)]))
                .collect();
            let _ = writeln!(out, "  [{}]", row.join(", "));
        }
        let _ = writeln!(
            out,
            "{:>8}  {:>12}  {:>12}  {:>12}  {:>14}  {:>12}",
            "eps", "sup|y-ys|", "sup|z-zf|", "sup err", "consensus", "final spread"
        );
        for run in &self.runs {
            let _ = writeln!(
                out,
                "{:>8}  {:>12.6e}  {:>12.6e}  {:>12.6e}  {:>14.8}  {:>12.6e}",
                run.eps,
                run.sup_err_y,
                run.sup_err_z,
                run.combined_sup_err,
                run.consensus_value,
                run.final_spread
            );
        }
        out
    }
}

/// Full-network right-hand side in fast time.
fn fast_time_rhs<'a>(
    spec: &'a NetworkSpec,
    rescaling: &'a TimeRescaling,
) -> impl Fn(f64) -> DMatrix<f64> + 'a {
    move |t_f: f64| {
        let t = rescaling.base_time(t_f);
        let c = rescaling.internal_cut(t);
        -spec.snapshot(t).l / c
    }
}

/// Run the approximation study.
///
/// Refuses to run (with a witness) if any requested scale violates the
/// verified assumptions. The same initial state is used for the full
/// and the reduced systems at every scale.
pub fn run_study(
    spec: &NetworkSpec,
    x0: &DVector<f64>,
    eps_list: &[f64],
    opts: StudyOptions,
) -> Result<ApproximationReport> {
    if eps_list.is_empty() {
        return Err(Error::Config("empty list of coupling scales".into()));
    }
    for &eps in eps_list {
        if !(eps > 0.0 && eps <= 1.0) {
            return Err(Error::Config(format!(
                "coupling scale {eps} outside (0, 1]"
            )));
        }
    }
    if x0.len() != spec.n() {
        return Err(Error::Config(format!(
            "initial state has {} entries, expected {}",
            x0.len(),
            spec.n()
        )));
    }
    let eps_min = eps_list.iter().cloned().fold(f64::INFINITY, f64::min);

    // Reference pipeline at the smallest scale: it needs the longest
    // time span, and the reduced models it produces are scale-free.
    let reference = Pipeline::build(spec, eps_min, None, opts)?;
    let windows = averaging_windows(&reference.rescaling, spec.period())?;
    let sys = RescaledSystem::new(&reference.spec, &reference.schedule, &reference.rescaling)?;
    let model = averaged_model(&sys, windows)?;
    let mut assumptions = reference.assumptions.clone();
    assumptions.averaging = Some(model.averaging_record());

    let split0 = reference.schedule.split_at(spec.partition(), 0.0)?;
    let (y0, z0) = split0.split(x0);

    let ts_horizon = match opts.ts_horizon {
        Some(h) if h > 0.0 => h,
        _ => auto_slow_horizon(&model, &y0)?,
    };

    // The reference pipeline must cover the longest run; rebuild it if
    // the auto horizon exceeds the first estimate.
    let tf_needed = ts_horizon / eps_min;
    let reference = if reference.rescaling.fast_span() < tf_needed {
        Pipeline::build(spec, eps_min, Some(ts_horizon), opts)?
    } else {
        reference
    };
    let sys = RescaledSystem::new(&reference.spec, &reference.schedule, &reference.rescaling)?;

    // Shared reduced trajectories.
    let y_slow = simulate_slow(&model, &y0, ts_horizon, SolverOptions::default())?;
    let tf_global = ts_horizon / eps_min;
    let z_layer = simulate_boundary_layer(&sys, &z0, tf_global, SolverOptions::default())?;

    let runs: Vec<Result<EpsRun>> = exec::map_collect(eps_list, |&eps| {
        run_one_scale(spec, eps, x0, ts_horizon, &y_slow, &z_layer, opts)
    });
    let runs: Vec<EpsRun> = runs.into_iter().collect::<Result<_>>()?;

    Ok(ApproximationReport {
        runs,
        ts_horizon,
        slow_matrix: model.matrix.clone(),
        assumptions,
    })
}

/// Slow horizon from the auto rule.
fn auto_slow_horizon(model: &AveragedModel, y0: &DVector<f64>) -> Result<f64> {
    let initial = spread(y0);
    if initial < 1e-12 || model.matrix.nrows() < 2 {
        return Ok(SLOW_HORIZON_CAP / 4.0);
    }
    let traj = simulate_slow(model, y0, SLOW_HORIZON_CAP, SolverOptions::default())?;
    for (t, y) in traj.times.iter().zip(&traj.states) {
        if spread(y) < SLOW_SPREAD_FRACTION * initial && *t > 0.0 {
            return Ok(*t);
        }
    }
    Ok(SLOW_HORIZON_CAP)
}

/// Assumption-checked spec with its schedule and rescaling table.
struct Pipeline {
    spec: NetworkSpec,
    schedule: QSchedule,
    rescaling: TimeRescaling,
    assumptions: AssumptionReport,
}

impl Pipeline {
    /// Build for one scale. `ts_horizon` (when known) sizes the time
    /// span; otherwise the declared horizon and the averaging needs
    /// decide.
    fn build(
        spec: &NetworkSpec,
        eps: f64,
        ts_horizon: Option<f64>,
        opts: StudyOptions,
    ) -> Result<Pipeline> {
        let spec_e = spec.with_eps(eps);

        // Coarse pass for the internal-cut floor, to size the span.
        let coarse = check_assumptions_over(&spec_e, 100, spec.horizon())?;
        if coarse.intra.cut_floor <= 0.0 {
            return Err(Error::Assumption(format!(
                "internal cut vanishes on the declared horizon{}",
                coarse
                    .first_witness()
                    .map_or(String::new(), |w| format!(" ({w})"))
            )));
        }
        let cut_floor = coarse.intra.cut_floor;
        let ts = ts_horizon.unwrap_or(SLOW_HORIZON_CAP);
        let tf_needed = (CONSENSUS_SLOW_CAP.max(ts) / eps).max(ts / eps);
        let mut t_max = (1.05 * tf_needed / cut_floor).max(spec.horizon());
        if let Some(p) = spec.period() {
            t_max = t_max.max(18.5 * p);
        }

        spec_e.validate_to(t_max)?;
        let assumptions = check_assumptions_over(&spec_e, opts.grid_size.max(2), t_max)?;
        if !(assumptions.intra.holds && assumptions.inter.holds && assumptions.ratio.holds) {
            let witness = assumptions
                .first_witness()
                .map_or("no witness recorded".to_string(), |w| w.to_string());
            return Err(Error::Assumption(format!(
                "scale eps = {eps} violates the verified assumptions: {witness}"
            )));
        }

        let cap_gap = 50.0 / assumptions.intra.cut_floor;
        let schedule = QSchedule::build(&spec_e, t_max, opts.q_tol, cap_gap, 128)?;
        let resolution = (4000usize).max((16.0 * t_max) as usize);
        let rescaling = TimeRescaling::build(&spec_e, resolution, t_max)?;
        Ok(Pipeline {
            spec: spec_e,
            schedule,
            rescaling,
            assumptions,
        })
    }
}

fn run_one_scale(
    spec: &NetworkSpec,
    eps: f64,
    x0: &DVector<f64>,
    ts_horizon: f64,
    y_slow: &Trajectory,
    z_layer: &Trajectory,
    opts: StudyOptions,
) -> Result<EpsRun> {
    let pipeline = Pipeline::build(spec, eps, Some(ts_horizon), opts)?;
    let partition = pipeline.spec.partition();
    let tf_horizon = ts_horizon / eps;

    let rhs = fast_time_rhs(&pipeline.spec, &pipeline.rescaling);
    let full = integrate(&rhs, x0, 0.0, tf_horizon, SolverOptions::default())?;

    // Shared comparison grid in fast time.
    let grid = linspace(0.0, tf_horizon, opts.grid_size.max(2));
    let mut sup_err_y = 0.0f64;
    let mut sup_err_z = 0.0f64;
    let mut ts_grid = Vec::with_capacity(grid.len());
    let mut y_full_s = Vec::with_capacity(grid.len());
    let mut y_slow_s = Vec::with_capacity(grid.len());
    let mut z_full_s = Vec::with_capacity(grid.len());
    let mut z_layer_s = Vec::with_capacity(grid.len());

    for &t_f in &grid {
        let t = pipeline.rescaling.base_time(t_f);
        let split = pipeline.schedule.split_at(partition, t)?;
        let x = full.sample(t_f);
        let (y_hat, z_hat) = split.split(&x);
        let ys = y_slow.sample((eps * t_f).min(ts_horizon));
        let zf = z_layer.sample(t_f.min(z_layer.final_time()));
        sup_err_y = sup_err_y.max(inf_norm_vec(&(&y_hat - &ys)));
        sup_err_z = sup_err_z.max(inf_norm_vec(&(&z_hat - &zf)));
        ts_grid.push(eps * t_f);
        y_full_s.push(y_hat);
        y_slow_s.push(ys);
        z_full_s.push(z_hat);
        z_layer_s.push(zf);
    }
    let layer_final_norm = z_layer_s.last().map_or(0.0, inf_norm_vec);

    // Continue until the agents agree (bounded by the slow-time cap).
    let mut state = full.final_state().clone();
    let mut t_f = tf_horizon;
    let mut final_spread = spread(&state);
    let chunk = 5.0 / eps;
    while final_spread >= CONSENSUS_SPREAD_TARGET && t_f * eps < CONSENSUS_SLOW_CAP {
        let end = (t_f + chunk).min(CONSENSUS_SLOW_CAP / eps);
        let cont = integrate(
            &rhs,
            &state,
            t_f,
            end,
            SolverOptions {
                record_every: 64,
                ..Default::default()
            },
        )?;
        state = cont.final_state().clone();
        t_f = end;
        final_spread = spread(&state);
    }
    let consensus_value = state.sum() / state.len() as f64;
    let final_z_norm = {
        let split = pipeline
            .schedule
            .split_at(partition, pipeline.rescaling.base_time(t_f))?;
        let (_, z_end) = split.split(&state);
        inf_norm_vec(&z_end)
    };

    Ok(EpsRun {
        eps,
        sup_err_y,
        sup_err_z,
        combined_sup_err: sup_err_y.max(sup_err_z),
        consensus_value,
        final_spread,
        final_z_norm,
        layer_final_norm,
        tf_horizon,
        consensus_ts: t_f * eps,
        ts_grid,
        y_full: y_full_s,
        y_slow: y_slow_s,
        z_full: z_full_s,
        z_layer: z_layer_s,
    })
}

/// Index of each cluster's first disagreement row (clusters of size one
/// contribute none).
pub fn first_difference_rows(spec: &NetworkSpec) -> Vec<Option<usize>> {
    let partition = spec.partition();
    let mut rows = Vec::with_capacity(partition.cluster_count());
    let mut offset = 0;
    for k in 0..partition.cluster_count() {
        let nk = partition.size(k);
        rows.push(if nk > 1 { Some(offset) } else { None });
        offset += nk - 1;
    }
    rows
}

/// Palette shared by the bundle plots: cluster 1 red, cluster 2 blue,
/// further clusters cycle.
fn cluster_color(k: usize) -> &'static str {
    const COLORS: [&str; 6] = [
        "#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
    ];
    COLORS[k % COLORS.len()]
}

/// Write a study's artifacts into `out`: assumption report (text and
/// JSON records), study summary, and per-scale comparison CSVs plus
/// aggregate/disagreement figures.
pub fn write_study_bundle(
    out: &Path,
    spec: &NetworkSpec,
    config_text: Option<&str>,
    report: &ApproximationReport,
) -> Result<()> {
    std::fs::create_dir_all(out)?;
    if let Some(text) = config_text {
        std::fs::write(out.join("config.toml"), text)?;
    }
    std::fs::write(
        out.join("assumptions.txt"),
        report.assumptions.render_text(),
    )?;
    std::fs::write(
        out.join("assumptions.json"),
        report.assumptions.render_json(),
    )?;
    std::fs::write(out.join("report.txt"), report.render_text())?;

    let mut summary_rows = Vec::new();
    for run in &report.runs {
        summary_rows.push(vec![
            run.eps,
            run.sup_err_y,
            run.sup_err_z,
            run.consensus_value,
            run.final_spread,
        ]);
    }
    std::fs::write(
        out.join("report.csv"),
        io::table_csv(
            &[
                "eps",
                "sup_err_y",
                "sup_err_z",
                "consensus_value",
                "final_spread",
            ],
            &summary_rows,
        ),
    )?;

    let m = spec.partition().cluster_count();
    let z_rows = first_difference_rows(spec);
    for run in &report.runs {
        let tag = format!("{}", run.eps).replace('.', "p");

        // Comparison table in slow time.
        let mut header: Vec<String> = vec!["ts".into()];
        for k in 0..m {
            header.push(format!("y{}", k + 1));
        }
        for k in 0..m {
            header.push(format!("ys{}", k + 1));
        }
        for (k, row) in z_rows.iter().enumerate() {
            if row.is_some() {
                header.push(format!("z_c{}", k + 1));
                header.push(format!("zf_c{}", k + 1));
            }
        }
        let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
        let mut rows = Vec::with_capacity(run.ts_grid.len());
        for i in 0..run.ts_grid.len() {
            let mut row = vec![run.ts_grid[i]];
            row.extend(run.y_full[i].iter().cloned());
            row.extend(run.y_slow[i].iter().cloned());
            for z_row in z_rows.iter().flatten() {
                row.push(run.z_full[i][*z_row]);
                row.push(run.z_layer[i][*z_row]);
            }
            rows.push(row);
        }
        std::fs::write(
            out.join(format!("comparison_eps_{tag}.csv")),
            io::table_csv(&header_refs, &rows),
        )?;

        // Aggregates: solid true, dashed reduced.
        let mut agg_series = Vec::new();
        for k in 0..m {
            agg_series.push(Series {
                label: format!("cluster {} aggregate", k + 1),
                color: cluster_color(k).into(),
                dashed: false,
                points: run
                    .ts_grid
                    .iter()
                    .zip(&run.y_full)
                    .map(|(&ts, y)| (ts, y[k]))
                    .collect(),
            });
            agg_series.push(Series {
                label: format!("cluster {} reduced", k + 1),
                color: cluster_color(k).into(),
                dashed: true,
                points: run
                    .ts_grid
                    .iter()
                    .zip(&run.y_slow)
                    .map(|(&ts, y)| (ts, y[k]))
                    .collect(),
            });
        }
        io::emit_plot(
            &Plot {
                title: format!("aggregates vs reduced model, eps = {}", run.eps),
                x_label: "slow time".into(),
                y_label: "aggregate state".into(),
                series: agg_series,
            },
            &out.join(format!("aggregates_eps_{tag}.svg")),
        )?;

        // First disagreement variable of each cluster.
        let mut dis_series = Vec::new();
        for (k, row) in z_rows.iter().enumerate() {
            let Some(row) = *row else { continue };
            dis_series.push(Series {
                label: format!("cluster {} disagreement", k + 1),
                color: cluster_color(k).into(),
                dashed: false,
                points: run
                    .ts_grid
                    .iter()
                    .zip(&run.z_full)
                    .map(|(&ts, z)| (ts, z[row]))
                    .collect(),
            });
            dis_series.push(Series {
                label: format!("cluster {} boundary layer", k + 1),
                color: cluster_color(k).into(),
                dashed: true,
                points: run
                    .ts_grid
                    .iter()
                    .zip(&run.z_layer)
                    .map(|(&ts, z)| (ts, z[row]))
                    .collect(),
            });
        }
        io::emit_plot(
            &Plot {
                title: format!("disagreements vs boundary layer, eps = {}", run.eps),
                x_label: "slow time".into(),
                y_label: "disagreement".into(),
                series: dis_series,
            },
            &out.join(format!("disagreement_eps_{tag}.svg")),
        )?;
    }
    Ok(())
}

/// Run the bundled demonstration end to end and write its artifacts.
/// Returns the report for further inspection.
pub fn reproduce_demo(out: &Path, opts: StudyOptions) -> Result<ApproximationReport> {
    let config = builtin::demo_config(0.2, 40.0);
    let (spec, _) = NetworkSpec::load(&config)?;
    let x0 = DVector::from_column_slice(&builtin::DEMO_X0);
    let report = run_study(&spec, &x0, &[1.0, 0.2, 0.04], opts)?;
    write_study_bundle(out, &spec, Some(&config), &report)?;
    Ok(report)
}
