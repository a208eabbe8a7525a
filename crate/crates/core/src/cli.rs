//! Command-line driver: `forward`, `verify`, `invert` and `scenario`.
//!
//! Exit codes: 0 success, 1 verification failure, 2 configuration or input
//! error, 3 numerical failure.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use crate::adjoint::AdjointOptions;
use crate::bounds::{compute_constants, default_scenarios, verify_inequality_suite, CtVariant, SuiteOptions};
use crate::config::{InversionMode, RunConfig};
use crate::error::{Error, Result};
use crate::forward::BeamProblem;
use crate::inversion::{reconstruct_parametric, run_with_objective, ParametricFamily, ParametricOptions};
use crate::io;
use crate::measurements::{
    add_noise, generate_scenario, series_derivative, smooth_by_discrepancy, smooth_to_h1, NoisyMeasurements,
    ScenarioKind,
};
use crate::model::{time_norm_sq, CoefficientSet, LoadField, MeasurementSeries, Smoothness};
use crate::objective::Objective;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFICATION: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "beamload", version, about = "Load reconstruction on a damped beam from end-slope measurements")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the forward problem for the configured scenario load.
    Forward(CommonArgs),
    /// Run the inequality, duality and gradient verification suite.
    Verify(CommonArgs),
    /// Reconstruct the load from measurements.
    Invert(CommonArgs),
    /// Generate a scenario load with clean and noisy measurements.
    Scenario(CommonArgs),
}

#[derive(Debug, Args, Clone)]
pub struct CommonArgs {
    /// Configuration file (`key = value` lines); defaults to the baseline run.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides `output.dir`; default `out`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Random seed (overrides `seed`).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Time-constant reading used in the adjoint bounds.
    #[arg(long, value_parser = parse_variant)]
    pub ct_variant: Option<CtVariant>,
}

fn parse_variant(s: &str) -> std::result::Result<CtVariant, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Divergence { .. } | Error::InversionDiverged { .. } | Error::Internal(_) => EXIT_NUMERIC,
        _ => EXIT_CONFIG,
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let (name, common) = match &cli.command {
        Command::Forward(a) => ("forward", a),
        Command::Verify(a) => ("verify", a),
        Command::Invert(a) => ("invert", a),
        Command::Scenario(a) => ("scenario", a),
    };
    let result = Context::new(name, common).and_then(|ctx| match &cli.command {
        Command::Forward(_) => cmd_forward(&ctx),
        Command::Verify(_) => cmd_verify(&ctx),
        Command::Invert(_) => cmd_invert(&ctx),
        Command::Scenario(_) => cmd_scenario(&ctx),
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

struct Context {
    command: &'static str,
    cfg: RunConfig,
    out: PathBuf,
}

impl Context {
    fn new(command: &'static str, args: &CommonArgs) -> Result<Self> {
        let mut cfg = match &args.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::baseline(),
        };
        if let Some(s) = args.seed {
            cfg.seed = s;
        }
        if let Some(v) = args.ct_variant {
            cfg.ct_variant = v;
            cfg.inversion.landweber.variant = v;
        }
        let out = args
            .out
            .clone()
            .or_else(|| cfg.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from("out"));
        std::fs::create_dir_all(&out).map_err(|source| Error::Io {
            path: out.clone(),
            source,
        })?;
        Ok(Self { command, cfg, out })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn manifest(&self, files: &[&str]) -> Result<()> {
        let g = &self.cfg.grid;
        let mut pairs: Vec<(String, String)> = vec![
            ("command".into(), self.command.into()),
            ("config_sha256".into(), self.cfg.hash.clone()),
            ("seed".into(), self.cfg.seed.to_string()),
            ("ct_variant".into(), self.cfg.ct_variant.to_string()),
            ("version".into(), env!("CARGO_PKG_VERSION").into()),
            ("grid".into(), format!("{}x{}", g.n_elements(), g.n_steps())),
        ];
        pairs.push(("outputs".into(), files.join(" ")));
        io::write_key_values(&self.path("manifest.txt"), &pairs)
    }
}

fn kv(k: &str, v: impl ToString) -> (String, String) {
    (k.to_string(), v.to_string())
}

fn sci(v: f64) -> String {
    format!("{v:.10e}")
}

fn write_series(ctx: &Context, name: &str, m: &MeasurementSeries) -> Result<()> {
    io::write_measurements(&ctx.path(name), &ctx.cfg.grid, &m.theta0, &m.theta_l)
}

/// Max-norm relative nodal error against `u = t² sin(pi x / l)`.
fn manufactured_error(ctx: &Context, deflection: &LoadField) -> f64 {
    let g = &ctx.cfg.grid;
    let exact = LoadField::from_fn(g, |x, t| t * t * (std::f64::consts::PI * x / g.length()).sin());
    let scale = exact.as_time_major().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let err = deflection
        .as_time_major()
        .iter()
        .zip(exact.as_time_major())
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    err / scale.max(f64::MIN_POSITIVE)
}

fn cmd_forward(ctx: &Context) -> Result<i32> {
    let cfg = &ctx.cfg;
    let coeffs = cfg.coefficient_set()?;
    let problem = BeamProblem::new(&cfg.grid, &coeffs)?;
    let (load, _) = crate::measurements::scenario_load(&cfg.scenario, &cfg.grid, &coeffs)?;
    let traj = problem.solve(&load)?;
    let balance = problem.energy_balance(&traj, &load)?;
    let residual = balance.relative_residual();
    let deflection = traj.deflection_field();

    io::write_field(&ctx.path("load.csv"), "F", &load)?;
    write_series(ctx, "measurements.csv", &traj.outputs)?;
    io::write_field(&ctx.path("deflection.csv"), "u", &deflection)?;
    let times = cfg.grid.times();
    io::write_columns(
        &ctx.path("energy.csv"),
        &["t", "energy", "dissipation", "work", "residual"],
        &[&times, &balance.energy, &balance.dissipation, &balance.work, &residual],
    )?;
    let g = &cfg.grid;
    let mut summary = vec![
        kv("scenario", cfg.scenario.name()),
        kv("max_energy_residual", sci(residual.iter().fold(0.0, |m: f64, r| m.max(*r)))),
        kv("norm_theta0", sci(time_norm_sq(g, &traj.outputs.theta0).sqrt())),
        kv("norm_thetaL", sci(time_norm_sq(g, &traj.outputs.theta_l).sqrt())),
        kv("load_norm", sci(load.norm_sq().sqrt())),
    ];
    if cfg.scenario == ScenarioKind::Manufactured {
        let e = manufactured_error(ctx, &deflection);
        summary.push(kv("max_relative_solution_error", sci(e)));
        println!("max relative solution error: {e:.3e}");
    }
    io::write_key_values(&ctx.path("summary.txt"), &summary)?;
    ctx.manifest(&["load.csv", "measurements.csv", "deflection.csv", "energy.csv", "summary.txt"])?;
    info!("forward run written to {}", ctx.out.display());
    Ok(EXIT_OK)
}

fn cmd_verify(ctx: &Context) -> Result<i32> {
    let cfg = &ctx.cfg;
    let v = &cfg.verify;
    let scenarios = default_scenarios(&cfg.grid, v.scenarios, cfg.seed);
    let opts = SuiteOptions {
        slack: v.slack,
        variant: cfg.ct_variant,
        duality: v.duality,
        gradient: v.gradient,
        adjoint: AdjointOptions {
            flip_boundary_sign: v.corrupt_adjoint_sign,
        },
        ..SuiteOptions::default()
    };
    if v.corrupt_adjoint_sign {
        warn!("adjoint boundary sign deliberately flipped (negative control)");
    }
    let report = verify_inequality_suite(&scenarios, &opts);
    let text = report.to_text();
    io::write_text(&ctx.path("report.txt"), &text)?;
    report.write_csv(&ctx.path("report.csv"))?;
    ctx.manifest(&["report.txt", "report.csv"])?;
    print!("{text}");
    Ok(if report.passed() { EXIT_OK } else { EXIT_VERIFICATION })
}

/// Measurements for `invert`, with the synthetic truth and noise record when generated here.
struct InversionData {
    measurements: MeasurementSeries,
    truth: Option<LoadField>,
    noise: Option<NoisyMeasurements>,
    smoothing: Option<(f64, f64)>,
}

fn prepare_data(ctx: &Context, coeffs: &CoefficientSet) -> Result<InversionData> {
    let cfg = &ctx.cfg;
    let g = &cfg.grid;
    if let Some(path) = &cfg.measurements {
        let (a, b) = io::read_measurements(path, g)?;
        let lam = cfg.smoothing.unwrap_or(0.0);
        let raw = MeasurementSeries::raw(g, a, b)?;
        let m = if lam > 0.0 {
            smooth_to_h1(&raw, lam, g)?
        } else {
            let (da, db) = (series_derivative(g.dt(), &raw.theta0), series_derivative(g.dt(), &raw.theta_l));
            MeasurementSeries::smoothed(g, raw.theta0, raw.theta_l, da, db)?
        };
        return Ok(InversionData {
            measurements: m,
            truth: None,
            noise: None,
            smoothing: Some((lam, lam)),
        });
    }
    let s = generate_scenario(&cfg.scenario, g, coeffs)?;
    if cfg.noise_rel == 0.0 {
        return Ok(InversionData {
            measurements: s.measurements,
            truth: Some(s.load),
            noise: None,
            smoothing: None,
        });
    }
    let noisy = add_noise(&s.measurements, cfg.noise_spec(), g)?;
    let (m, lam) = match cfg.smoothing {
        Some(l) => (smooth_to_h1(&noisy.series, l, g)?, (l, l)),
        None => smooth_by_discrepancy(&noisy, g)?,
    };
    Ok(InversionData {
        measurements: m,
        truth: Some(s.load),
        noise: Some(noisy),
        smoothing: Some(lam),
    })
}

fn cmd_invert(ctx: &Context) -> Result<i32> {
    let cfg = &ctx.cfg;
    let g = &cfg.grid;
    let coeffs = cfg.coefficient_set()?;
    let data = prepare_data(ctx, &coeffs)?;
    let noise_level = cfg
        .inversion
        .noise_level_override
        .or_else(|| data.noise.as_ref().map(NoisyMeasurements::delta))
        .unwrap_or(0.0);
    let mut files = vec!["measurements.csv"];
    write_series(ctx, "measurements.csv", &data.measurements)?;
    if let Some(n) = &data.noise {
        io::write_key_values(&ctx.path("noise.txt"), &n.metadata())?;
        files.push("noise.txt");
    }
    let mut summary = vec![
        kv("mode", match &cfg.inversion.mode {
            InversionMode::Field => "field",
            InversionMode::Gaussian { .. } => "gaussian",
            InversionMode::Modal { .. } => "modal",
        }),
        kv("measurement_smoothness", data.measurements.smoothness()),
        kv("noise_level", sci(noise_level)),
    ];
    if let Some((a, b)) = data.smoothing {
        summary.push(kv("smoothing_lambda_theta0", sci(a)));
        summary.push(kv("smoothing_lambda_thetaL", sci(b)));
    }
    if data.measurements.smoothness() == Smoothness::Raw {
        warn!("inverting raw measurements");
    }

    let estimate = match &cfg.inversion.mode {
        InversionMode::Field => {
            let problem = BeamProblem::new(g, &coeffs)?;
            let obj = Objective::new(problem, data.measurements.clone())?;
            let mut lw = cfg.inversion.landweber.clone();
            lw.noise_level = noise_level;
            let state = run_with_objective(&obj, &lw)?;
            let rows = state.log_rows();
            let col = |k: usize| rows.iter().map(|r| r[k]).collect::<Vec<_>>();
            io::write_columns(
                &ctx.path("iterations.csv"),
                &["iter", "J", "grad_norm", "discrepancy"],
                &[&col(0), &col(1), &col(2), &col(3)],
            )?;
            let (_, adj) = obj.evaluate_with_adjoint(&state.iterate)?;
            let phi = adj.nodal_field();
            io::write_field(&ctx.path("adjoint.csv"), "phi", &phi)?;
            let grad = adj.gradient_field(obj.problem().load_operator());
            io::write_field(&ctx.path("gradient.csv"), "grad", &grad)?;
            files.extend(["iterations.csv", "adjoint.csv", "gradient.csv"]);
            let theta_norms = (
                time_norm_sq(g, &data.measurements.theta0).sqrt(),
                time_norm_sq(g, &data.measurements.theta_l).sqrt(),
            );
            let k = compute_constants(g, coeffs.bounds(), lw.c_f, theta_norms, lw.variant)?;
            summary.extend([
                kv("stop_reason", state.stop_reason),
                kv("iterations", state.iterations),
                kv("initial_j", sci(state.j_history[0])),
                kv("final_j", sci(state.final_j())),
                kv("final_discrepancy", sci((2.0 * state.final_j()).sqrt())),
                kv("discrepancy_target", sci(lw.safety_factor * noise_level)),
                kv("lipschitz_constant", sci(k.l_g)),
            ]);
            println!(
                "stopped ({}) after {} iterations, J = {:.6e}",
                state.stop_reason,
                state.iterations,
                state.final_j()
            );
            state.iterate
        }
        mode => {
            let family = match mode {
                InversionMode::Gaussian { start, .. } => ParametricFamily::MovingGaussian { start: *start },
                InversionMode::Modal { modes } => ParametricFamily::Modal { modes: modes.clone() },
                InversionMode::Field => unreachable!(),
            };
            let guess = match mode {
                InversionMode::Gaussian { guess, .. } => *guess,
                _ => None,
            };
            let r = reconstruct_parametric(
                &data.measurements,
                &coeffs,
                g,
                &family,
                &ParametricOptions {
                    guess,
                    noise_level,
                    ..ParametricOptions::default()
                },
            )?;
            let truth = parameter_truth(&cfg.scenario, &family);
            let mut w = csv::Writer::from_path(ctx.path("parameters.csv")).map_err(|source| Error::Csv {
                path: ctx.path("parameters.csv"),
                source,
            })?;
            let csv_err = |source| Error::Csv {
                path: ctx.path("parameters.csv"),
                source,
            };
            w.write_record(["name", "value", "truth", "relative_error"]).map_err(csv_err)?;
            for (name, value) in &r.parameters {
                let t = truth.iter().find(|(n, _)| n == name).map(|(_, v)| *v);
                let rel = t.map(|t| if t != 0.0 { (value - t).abs() / t.abs() } else { value.abs() });
                let opt = |v: Option<f64>| v.map(sci).unwrap_or_default();
                w.write_record([name.clone(), sci(*value), opt(t), opt(rel)]).map_err(csv_err)?;
                if let Some(rel) = rel {
                    summary.push(kv(&format!("relative_error_{name}"), sci(rel)));
                }
                println!("{name} = {value:.6e}");
            }
            w.flush().map_err(|source| Error::Io {
                path: ctx.path("parameters.csv"),
                source,
            })?;
            files.push("parameters.csv");
            summary.extend([
                kv("final_j", sci(r.j)),
                kv("iterations", r.iterations),
                kv("condition", sci(r.condition)),
                kv("identifiable", r.identifiable),
            ]);
            if let Some(f) = r.amplitude_noise_floor {
                summary.push(kv("amplitude_noise_floor", sci(f)));
            }
            r.load
        }
    };
    io::write_field(&ctx.path("field.csv"), "F", &estimate)?;
    files.push("field.csv");
    if let Some(t) = &data.truth {
        let tn = t.norm_sq().sqrt();
        if tn > 0.0 {
            summary.push(kv("relative_field_error", sci(estimate.sub(t)?.norm_sq().sqrt() / tn)));
        }
    }
    io::write_key_values(&ctx.path("summary.txt"), &summary)?;
    files.push("summary.txt");
    ctx.manifest(&files)?;
    Ok(EXIT_OK)
}

fn parameter_truth(scenario: &ScenarioKind, family: &ParametricFamily) -> Vec<(String, f64)> {
    match (scenario, family) {
        (
            ScenarioKind::MovingGaussian {
                amplitude,
                speed,
                width,
                ..
            },
            ParametricFamily::MovingGaussian { .. },
        ) => vec![
            ("amplitude".into(), *amplitude),
            ("speed".into(), *speed),
            ("width".into(), *width),
        ],
        (ScenarioKind::Modal { terms }, ParametricFamily::Modal { modes }) => modes
            .iter()
            .map(|&(a, b)| {
                let v = terms
                    .iter()
                    .filter(|(x, y, _)| (*x, *y) == (a, b))
                    .map(|t| t.2)
                    .sum();
                (format!("a_{a}_{b}"), v)
            })
            .collect(),
        _ => Vec::new(),
    }
}

fn cmd_scenario(ctx: &Context) -> Result<i32> {
    let cfg = &ctx.cfg;
    let coeffs = cfg.coefficient_set()?;
    let s = generate_scenario(&cfg.scenario, &cfg.grid, &coeffs)?;
    io::write_field(&ctx.path("load.csv"), "F", &s.load)?;
    write_series(ctx, "clean_measurements.csv", &s.measurements)?;
    let mut files = vec!["load.csv", "clean_measurements.csv", "measurements.csv"];
    if cfg.noise_rel > 0.0 {
        let noisy = add_noise(&s.measurements, cfg.noise_spec(), &cfg.grid)?;
        write_series(ctx, "measurements.csv", &noisy.series)?;
        io::write_key_values(&ctx.path("noise.txt"), &noisy.metadata())?;
        files.push("noise.txt");
    } else {
        write_series(ctx, "measurements.csv", &s.measurements)?;
    }
    if !s.warnings.is_empty() {
        io::write_text(&ctx.path("warnings.txt"), &(s.warnings.join("\n") + "\n"))?;
        files.push("warnings.txt");
    }
    ctx.manifest(&files)?;
    Ok(EXIT_OK)
}

/// Used by `main`.
pub fn main_with_logging() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    run(std::env::args_os())
}
