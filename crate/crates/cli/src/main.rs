//! Command-line laboratory for clustered consensus time-scale studies.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;

use tscale_core::assumptions::{check_assumptions, AveragingRecord};
use tscale_core::decompose::{block_matrices, QSchedule, RescaledSystem, TimeRescaling};
use tscale_core::integrate::{integrate, SolverOptions};
use tscale_core::io;
use tscale_core::network::NetworkSpec;
use tscale_core::reduce::{
    averaged_model, averaging_windows, simulate_boundary_layer, simulate_slow, slow_weights_direct,
};
use tscale_core::study::{
    reproduce_demo, run_study, write_study_bundle, StudyOptions, DEFAULT_GRID,
};
use tscale_core::{builtin, Error};

#[derive(Parser)]
#[command(
    name = "tscale",
    about = "Analyze consensus networks with clustered, time-varying, directed interactions",
    version
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// Network config file (TOML). Required by every subcommand except
    /// `paper`.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory for generated files.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Grid size for assumption checks and comparison grids.
    #[arg(long, global = true, default_value_t = DEFAULT_GRID)]
    grid: usize,

    /// Convergence tolerance for aggregation weights.
    #[arg(long, global = true, default_value_t = 1e-10)]
    tol: f64,

    /// Accepted for interface stability; the analysis pipeline is
    /// deterministic and ignores it.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Verify the coupling assumptions on a time grid.
    Check {
        /// Also print machine-readable records (one JSON object per
        /// assumption).
        #[arg(long)]
        json: bool,
        /// Skip the averaging check (assumption 4), which needs the full
        /// reduction pipeline.
        #[arg(long)]
        skip_averaging: bool,
    },
    /// Integrate the full network and write the trajectory as CSV.
    Simulate {
        /// Override the initial state, comma-separated.
        #[arg(long, value_delimiter = ',')]
        x0: Option<Vec<f64>>,
        /// End time (defaults to the config horizon).
        #[arg(long)]
        t_end: Option<f64>,
        /// Use the step-doubling adaptive integrator.
        #[arg(long)]
        adaptive: bool,
    },
    /// Dump the change-of-variable matrices and dynamics blocks at
    /// chosen times.
    Decompose {
        /// Times to evaluate at, comma-separated.
        #[arg(long, value_delimiter = ',', default_value = "0.0")]
        times: Vec<f64>,
    },
    /// Build the reduced slow model and boundary layer; print the
    /// averaged generator, slow weights and averaging residual.
    Reduce {
        /// Override the initial state, comma-separated.
        #[arg(long, value_delimiter = ',')]
        x0: Option<Vec<f64>>,
    },
    /// Compare the full system against the reduced models across a
    /// sweep of coupling scales.
    Study {
        /// Coupling scales, comma-separated.
        #[arg(long, value_delimiter = ',', default_value = "1.0,0.2,0.04")]
        eps_list: Vec<f64>,
        /// Slow-time comparison horizon (auto rule when omitted).
        #[arg(long)]
        ts_horizon: Option<f64>,
        /// Override the initial state, comma-separated.
        #[arg(long, value_delimiter = ',')]
        x0: Option<Vec<f64>>,
    },
    /// Run the bundled two-cluster demonstration end to end and write
    /// its artifact bundle.
    Paper {
        /// Coupling scales for the sweep.
        #[arg(long, value_delimiter = ',', default_value = "1.0,0.2,0.04")]
        eps_list: Vec<f64>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

fn load_config(global: &GlobalArgs) -> Result<(NetworkSpec, String), Error> {
    let path = global
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config <path> is required".into()))?;
    let text = std::fs::read_to_string(path)?;
    let (spec, _) = NetworkSpec::load(&text)?;
    Ok((spec, text))
}

fn initial_state(spec: &NetworkSpec, flag: Option<Vec<f64>>) -> Result<DVector<f64>, Error> {
    match flag {
        Some(values) => {
            if values.len() != spec.n() {
                return Err(Error::Config(format!(
                    "--x0 has {} entries, expected {}",
                    values.len(),
                    spec.n()
                )));
            }
            Ok(DVector::from_vec(values))
        }
        None => match spec.x0() {
            Some(x0) => Ok(DVector::from_column_slice(x0)),
            None => Err(Error::Config(
                "no initial state: add x0 = [...] to the config or pass --x0".into(),
            )),
        },
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let global = &cli.global;
    match cli.command {
        Command::Check {
            json,
            skip_averaging,
        } => {
            let (spec, _) = load_config(global)?;
            let mut report = check_assumptions(&spec, global.grid.max(2))?;
            let basics_hold = report.intra.holds && report.inter.holds && report.ratio.holds;
            if basics_hold && !skip_averaging {
                let cap_gap = 50.0 / report.intra.cut_floor;
                let mut t_max = spec.horizon();
                if let Some(p) = spec.period() {
                    t_max = t_max.max(18.5 * p);
                }
                spec.validate_to(t_max)?;
                let schedule = QSchedule::build(&spec, t_max, global.tol, cap_gap, 128)?;

                // With genuinely time-varying aggregation weights the
                // block form of the dynamics is only approximate; flag
                // the measured mismatch instead of silently correcting.
                if !schedule.is_constant() {
                    let probe =
                        DVector::from_fn(spec.n(), |i, _| if i % 2 == 0 { 1.0 } else { -1.0 });
                    let span = spec.horizon().min(5.0);
                    let residual = tscale_core::decompose::dynamics_equivalence_residual(
                        &spec, &schedule, &probe, span,
                    )?;
                    println!(
                        "time-varying aggregation weights: block-form residual {residual:.3e} over [0, {span}]{}",
                        if residual > 1e-6 {
                            "  (above 1e-6: the block system is an approximation for this network)"
                        } else {
                            ""
                        }
                    );
                }

                let resolution = 4000usize.max((16.0 * t_max) as usize);
                let rescaling = TimeRescaling::build(&spec, resolution, t_max)?;
                match RescaledSystem::new(&spec, &schedule, &rescaling) {
                    Ok(sys) => {
                        let windows = averaging_windows(&rescaling, spec.period())?;
                        let model = averaged_model(&sys, windows)?;
                        report.averaging = Some(model.averaging_record());
                    }
                    Err(Error::UnstableLimit(msg)) => {
                        println!("averaging unavailable: {msg}");
                        report.averaging = Some(AveragingRecord {
                            holds: false,
                            residual: f64::INFINITY,
                            norm: 0.0,
                        });
                    }
                    Err(other) => return Err(other),
                }
            }
            print!("{}", report.render_text());
            if json {
                print!("{}", report.render_json());
            }
            if !report.all_hold() {
                return Err(Error::Assumption(
                    report
                        .first_witness()
                        .map_or("see report above".to_string(), |w| w.to_string()),
                ));
            }
            Ok(())
        }

        Command::Simulate {
            x0,
            t_end,
            adaptive,
        } => {
            let (spec, _) = load_config(global)?;
            let x0 = initial_state(&spec, x0)?;
            let t_end = t_end.unwrap_or(spec.horizon());
            spec.validate_to(t_end)?;
            let traj = integrate(
                |t| -spec.snapshot(t).l,
                &x0,
                0.0,
                t_end,
                SolverOptions {
                    adaptive,
                    ..Default::default()
                },
            )?;
            std::fs::create_dir_all(&global.out)?;
            let path = global.out.join("trajectory.csv");
            io::emit_csv(&traj, &path)?;
            println!(
                "wrote {} ({} samples, method {})",
                path.display(),
                traj.len(),
                traj.meta.method
            );
            Ok(())
        }

        Command::Decompose { times } => {
            let (spec, _) = load_config(global)?;
            let report = check_assumptions(&spec, global.grid.max(2))?;
            if !(report.intra.holds && report.ratio.holds) {
                return Err(Error::Assumption(
                    report
                        .first_witness()
                        .map_or("assumption check failed".to_string(), |w| w.to_string()),
                ));
            }
            let cap_gap = 50.0 / report.intra.cut_floor;
            let schedule = QSchedule::build(&spec, spec.horizon(), global.tol, cap_gap, 128)?;
            let rescaling = TimeRescaling::build(&spec, 4000, spec.horizon())?;
            let sys = RescaledSystem::new(&spec, &schedule, &rescaling)?;
            std::fs::create_dir_all(&global.out)?;
            for (idx, &t) in times.iter().enumerate() {
                let split = schedule.split_at(spec.partition(), t)?;
                let bar = block_matrices(&spec.snapshot(t), &split);
                let t_f = rescaling.fast_time(t);
                let scaled = sys.blocks_at(t_f, spec.eps())?;
                let dir = global.out.join(format!("decompose_t{idx}"));
                std::fs::create_dir_all(&dir)?;
                for (name, matrix) in [
                    ("aggregate", &split.aggregate),
                    ("difference", &split.difference),
                    ("lift", &split.lift),
                    ("indicator", &split.indicator),
                    ("slow_slow_bar", &bar.slow_slow),
                    ("slow_fast_bar", &bar.slow_fast),
                    ("fast_slow_bar", &bar.fast_slow),
                    ("fast_fast_bar", &bar.fast_fast),
                    ("slow_slow", &scaled.slow_slow),
                    ("slow_fast", &scaled.slow_fast),
                    ("fast_slow", &scaled.fast_slow),
                    ("fast_fast", &scaled.fast_fast),
                ] {
                    std::fs::write(dir.join(format!("{name}.csv")), io::matrix_csv(matrix))?;
                }
                println!("t = {t} (fast time {t_f:.6}) -> {}", dir.display());
            }
            Ok(())
        }

        Command::Reduce { x0 } => {
            let (spec, _) = load_config(global)?;
            let report = check_assumptions(&spec, global.grid.max(2))?;
            if !(report.intra.holds && report.inter.holds && report.ratio.holds) {
                return Err(Error::Assumption(
                    report
                        .first_witness()
                        .map_or("assumption check failed".to_string(), |w| w.to_string()),
                ));
            }
            let cap_gap = 50.0 / report.intra.cut_floor;
            let mut t_max = spec.horizon();
            if let Some(p) = spec.period() {
                t_max = t_max.max(18.5 * p);
            }
            spec.validate_to(t_max)?;
            let schedule = QSchedule::build(&spec, t_max, global.tol, cap_gap, 128)?;
            let resolution = 4000usize.max((16.0 * t_max) as usize);
            let rescaling = TimeRescaling::build(&spec, resolution, t_max)?;
            let sys = RescaledSystem::new(&spec, &schedule, &rescaling)?;
            let windows = averaging_windows(&rescaling, spec.period())?;
            let model = averaged_model(&sys, windows)?;
            let direct = slow_weights_direct(&spec, &schedule, &rescaling, windows)?;

            println!("averaged slow generator:");
            for r in 0..model.matrix.nrows() {
                let row: Vec<String> = (0..model.matrix.ncols())
                    .map(|c| format!("{:+.8}", model.matrix[(r, c)]))
                    .collect();
                println!("  [{}]", row.join(", "));
            }
            println!("slow coupling weights (direct formula):");
            for r in 0..direct.nrows() {
                let row: Vec<String> = (0..direct.ncols())
                    .map(|c| format!("{:+.8}", direct[(r, c)]))
                    .collect();
                println!("  [{}]", row.join(", "));
            }
            let record = model.averaging_record();
            println!(
                "averaging residual: {:.3e} (norm {:.6}) -> {}",
                record.residual,
                record.norm,
                if record.holds { "holds" } else { "FAILS" }
            );

            if let Ok(x0) = initial_state(&spec, x0) {
                let split = schedule.split_at(spec.partition(), 0.0)?;
                let (y0, z0) = split.split(&x0);
                let slow = simulate_slow(&model, &y0, 20.0, SolverOptions::default())?;
                let layer = simulate_boundary_layer(
                    &sys,
                    &z0,
                    rescaling.fast_span(),
                    SolverOptions {
                        record_every: 16,
                        ..Default::default()
                    },
                )?;
                std::fs::create_dir_all(&global.out)?;
                io::emit_csv(&slow, &global.out.join("slow_trajectory.csv"))?;
                io::emit_csv(&layer, &global.out.join("boundary_layer.csv"))?;
                println!(
                    "wrote {} and {}",
                    global.out.join("slow_trajectory.csv").display(),
                    global.out.join("boundary_layer.csv").display()
                );
            }
            Ok(())
        }

        Command::Study {
            eps_list,
            ts_horizon,
            x0,
        } => {
            let (spec, config_text) = load_config(global)?;
            let x0 = initial_state(&spec, x0)?;
            let report = run_study(
                &spec,
                &x0,
                &eps_list,
                StudyOptions {
                    grid_size: global.grid,
                    ts_horizon,
                    q_tol: global.tol,
                },
            )?;
            print!("{}", report.render_text());
            write_study_bundle(&global.out, &spec, Some(&config_text), &report)?;
            println!("bundle written to {}", global.out.display());
            Ok(())
        }

        Command::Paper { eps_list } => {
            let opts = StudyOptions {
                grid_size: global.grid,
                ts_horizon: None,
                q_tol: global.tol,
            };
            let report = if eps_list == [1.0, 0.2, 0.04] {
                reproduce_demo(&global.out, opts)?
            } else {
                let config = builtin::demo_config(0.2, 40.0);
                let (spec, _) = NetworkSpec::load(&config)?;
                let x0 = DVector::from_column_slice(&builtin::DEMO_X0);
                let report = run_study(&spec, &x0, &eps_list, opts)?;
                write_study_bundle(&global.out, &spec, Some(&config), &report)?;
                report
            };
            print!("{}", report.render_text());
            println!("bundle written to {}", global.out.display());
            Ok(())
        }
    }
}
