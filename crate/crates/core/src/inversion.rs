//! Projected Landweber iteration for the full load field, and low-dimensional
//! fits for parametric load families.

use std::fmt;

use log::{debug, info, warn};
use nalgebra::{DMatrix, DVector};

use crate::bounds::{compute_constants, CtVariant};
use crate::error::{Error, Result};
use crate::forward::BeamProblem;
use crate::model::{
    project_admissible, time_inner, time_norm_sq, CoefficientSet, LoadField, MeasurementSeries, SpaceTimeGrid,
};
use crate::objective::Objective;

const SMALL_GRADIENT: f64 = 1e-12;
const STAGNATION_WINDOW: usize = 10;
const STAGNATION_TOL: f64 = 1e-10;
const ARMIJO: f64 = 1e-4;

/// Step-size rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepRule {
    /// Constant step; `None` means `1 / L_G`.
    Fixed(Option<f64>),
    /// Projected Armijo backtracking, halving from a secant-type first trial.
    Backtracking,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InversionConfig {
    pub step: StepRule,
    pub max_iterations: usize,
    /// Absolute noise level `delta = ||(noise_0, noise_l)||`; 0 disables discrepancy stopping.
    pub noise_level: f64,
    pub safety_factor: f64,
    /// Admissible radius: iterates satisfy `||F||² <= c_f`.
    pub c_f: f64,
    pub initial: Option<LoadField>,
    pub variant: CtVariant,
}

impl Default for InversionConfig {
    fn default() -> Self {
        Self {
            step: StepRule::Fixed(None),
            max_iterations: 500,
            noise_level: 0.0,
            safety_factor: 1.1,
            c_f: 1e6,
            initial: None,
            variant: CtVariant::default(),
        }
    }
}

impl InversionConfig {
    pub fn validate(&self) -> Result<()> {
        if let StepRule::Fixed(Some(w)) = self.step {
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::Config(format!("step size must be > 0, got {w}")));
            }
        }
        if !(self.safety_factor > 1.0) {
            return Err(Error::Config(format!("safety factor must be > 1, got {}", self.safety_factor)));
        }
        if !(self.noise_level >= 0.0 && self.noise_level.is_finite()) {
            return Err(Error::Config(format!("noise level must be >= 0, got {}", self.noise_level)));
        }
        if !(self.c_f > 0.0 && self.c_f.is_finite()) {
            return Err(Error::Config(format!("admissible radius must be > 0, got {}", self.c_f)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxIterations,
    Discrepancy,
    SmallGradient,
    Stagnation,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::MaxIterations => "max-iterations",
            StopReason::Discrepancy => "discrepancy",
            StopReason::SmallGradient => "small-gradient",
            StopReason::Stagnation => "stagnation",
        })
    }
}

/// Final iterate and per-iterate histories (`iterations + 1` entries each).
#[derive(Debug, Clone, PartialEq)]
pub struct InversionState {
    pub iterate: LoadField,
    pub j_history: Vec<f64>,
    pub grad_norm_history: Vec<f64>,
    /// `sqrt(2 J)`, the data misfit norm.
    pub discrepancy_history: Vec<f64>,
    /// Accepted step sizes (`iterations` entries).
    pub step_history: Vec<f64>,
    pub stop_reason: StopReason,
    pub iterations: usize,
    /// `1 / L_G` for the run's constants.
    pub theoretical_step: f64,
}

impl InversionState {
    pub fn final_j(&self) -> f64 {
        *self.j_history.last().expect("history is never empty")
    }

    /// `iter,J,grad_norm,discrepancy` rows.
    pub fn log_rows(&self) -> Vec<[f64; 4]> {
        (0..self.j_history.len())
            .map(|n| {
                [
                    n as f64,
                    self.j_history[n],
                    self.grad_norm_history[n],
                    self.discrepancy_history[n],
                ]
            })
            .collect()
    }
}

/// Full-field projected Landweber iteration from the measured end slopes.
pub fn run_inversion(
    measurements: &MeasurementSeries,
    coeffs: &CoefficientSet,
    grid: &SpaceTimeGrid,
    config: &InversionConfig,
) -> Result<InversionState> {
    config.validate()?;
    let obj = Objective::new(BeamProblem::new(grid, coeffs)?, measurements.clone())?;
    run_with_objective(&obj, config)
}

/// As [`run_inversion`] on a prepared objective.
pub fn run_with_objective(obj: &Objective, config: &InversionConfig) -> Result<InversionState> {
    config.validate()?;
    let grid = *obj.grid();
    let meas = obj.measurements();
    let theta_norms = (
        time_norm_sq(&grid, &meas.theta0).sqrt(),
        time_norm_sq(&grid, &meas.theta_l).sqrt(),
    );
    let constants = compute_constants(&grid, obj.problem().coeffs().bounds(), config.c_f, theta_norms, config.variant)?;
    let theoretical_step = 1.0 / constants.l_g;

    let mut f = match &config.initial {
        Some(f0) => {
            if f0.grid() != &grid {
                return Err(Error::Input("initial iterate lives on a different grid".into()));
            }
            project_admissible(f0, config.c_f)?
        }
        None => LoadField::zeros(&grid),
    };
    let target = config.safety_factor * config.noise_level;

    let (mut eval, mut grad) = obj.gradient(&f)?;
    let mut state = InversionState {
        iterate: f.clone(),
        j_history: vec![eval.j],
        grad_norm_history: vec![grad.norm()],
        discrepancy_history: vec![(2.0 * eval.j).sqrt()],
        step_history: Vec::new(),
        stop_reason: StopReason::MaxIterations,
        iterations: 0,
        theoretical_step,
    };
    let mut increases = 0usize;
    let mut last_step = None::<f64>;

    let stop = loop {
        let n = state.iterations;
        let j = eval.j;
        if config.noise_level > 0.0 && (2.0 * j).sqrt() <= target {
            break StopReason::Discrepancy;
        }
        if grad.norm() < SMALL_GRADIENT {
            break StopReason::SmallGradient;
        }
        if n >= STAGNATION_WINDOW {
            let old = state.j_history[n - STAGNATION_WINDOW];
            if (old - j).abs() <= STAGNATION_TOL * old.abs() {
                break StopReason::Stagnation;
            }
        }
        if n >= config.max_iterations {
            break StopReason::MaxIterations;
        }

        let g = grad.field();
        let (next, step) = match config.step {
            StepRule::Fixed(w) => {
                let w = w.unwrap_or(theoretical_step);
                (project_admissible(&f.add_scaled(-w, g)?, config.c_f)?, w)
            }
            StepRule::Backtracking => {
                let gn2 = grad.norm().powi(2);
                let secant = 2.0 * j / gn2;
                let mut w = match last_step {
                    Some(prev) => (4.0 * prev).min(secant),
                    None => secant,
                };
                let mut accepted = None;
                for _ in 0..60 {
                    let trial = project_admissible(&f.add_scaled(-w, g)?, config.c_f)?;
                    let decrease = grad.inner(&f.sub(&trial)?)?;
                    let jt = obj.evaluate(&trial)?.j;
                    if jt <= j - ARMIJO * decrease {
                        accepted = Some(trial);
                        break;
                    }
                    w *= 0.5;
                }
                match accepted {
                    Some(trial) => (trial, w),
                    None => break StopReason::Stagnation,
                }
            }
        };
        let (e, gr) = obj.gradient(&next)?;
        if !e.j.is_finite() {
            return Err(Error::InversionDiverged {
                iteration: n + 1,
                diagnostic: "objective became non-finite".into(),
            });
        }
        if e.j > j {
            increases += 1;
            if matches!(config.step, StepRule::Fixed(_)) && increases >= 3 {
                return Err(Error::InversionDiverged {
                    iteration: n + 1,
                    diagnostic: format!(
                        "J increased on 3 consecutive fixed steps (omega = {step:.3e}, 1/L_G = {theoretical_step:.3e}); \
                         the step exceeds the gradient's Lipschitz scale or the discretization is inconsistent"
                    ),
                });
            }
        } else {
            increases = 0;
        }
        debug!("iteration {}: J = {:.6e}, |g| = {:.3e}, step = {:.3e}", n + 1, e.j, gr.norm(), step);
        f = next;
        eval = e;
        grad = gr;
        last_step = Some(step);
        state.iterations += 1;
        state.step_history.push(step);
        state.j_history.push(eval.j);
        state.grad_norm_history.push(grad.norm());
        state.discrepancy_history.push((2.0 * eval.j).sqrt());
    };
    state.iterate = f;
    state.stop_reason = stop;
    info!(
        "inversion stopped ({stop}) after {} iterations, J = {:.6e}",
        state.iterations,
        state.final_j()
    );
    Ok(state)
}

/// Low-dimensional load families.
#[derive(Debug, Clone, PartialEq)]
pub enum ParametricFamily {
    /// `A exp(-(x - start - v t)² / (2 sigma²))` with `start` fixed.
    MovingGaussian { start: f64 },
    /// `sum a_k sin(kx pi x / l) sin(kt pi t / T)` over at most 8 `(kx, kt)` pairs.
    Modal { modes: Vec<(usize, usize)> },
}

/// Starting values for the nonlinear Gaussian parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianGuess {
    pub speed: f64,
    pub width: f64,
}

impl GaussianGuess {
    /// `v = 0.8 l / T`, `sigma = 1.5 l / 20`.
    pub fn default_for(grid: &SpaceTimeGrid) -> Self {
        Self {
            speed: 0.8 * grid.length() / grid.final_time(),
            width: 1.5 * grid.length() / 20.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParametricOptions {
    pub guess: Option<GaussianGuess>,
    pub max_iterations: usize,
    /// Absolute noise level used for the amplitude noise floor.
    pub noise_level: f64,
}

impl Default for ParametricOptions {
    fn default() -> Self {
        Self {
            guess: None,
            max_iterations: 200,
            noise_level: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParametricResult {
    /// Named estimates in family order (`amplitude, speed, width` or `a_kx_kt`).
    pub parameters: Vec<(String, f64)>,
    pub j: f64,
    pub iterations: usize,
    /// Condition number of the scaled output sensitivities at the estimate.
    pub condition: f64,
    pub identifiable: bool,
    /// `delta / ||output of the unit-amplitude shape||`; `None` for modal fits.
    pub amplitude_noise_floor: Option<f64>,
    pub load: LoadField,
}

impl ParametricResult {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.parameters.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }
}

const CONDITION_LIMIT: f64 = 1e8;

fn outputs(problem: &BeamProblem, f: &LoadField) -> Result<(Vec<f64>, Vec<f64>)> {
    let t = problem.solve(f)?;
    Ok((t.outputs.theta0, t.outputs.theta_l))
}

fn pair_inner(grid: &SpaceTimeGrid, a: &(Vec<f64>, Vec<f64>), b: (&[f64], &[f64])) -> f64 {
    time_inner(grid, &a.0, b.0) + time_inner(grid, &a.1, b.1)
}

/// Condition of the column set, from the singular values of its Gram matrix.
fn gram_condition(grid: &SpaceTimeGrid, cols: &[(Vec<f64>, Vec<f64>)]) -> f64 {
    let k = cols.len();
    let g = DMatrix::from_fn(k, k, |i, j| pair_inner(grid, &cols[i], (&cols[j].0, &cols[j].1)));
    let sv = g.singular_values();
    let (mx, mn) = (sv.max(), sv.min());
    if mn <= 0.0 || !mn.is_finite() {
        f64::INFINITY
    } else {
        (mx / mn).sqrt()
    }
}

fn gaussian_shape(grid: &SpaceTimeGrid, start: f64, speed: f64, width: f64) -> [LoadField; 3] {
    let z = move |x: f64, t: f64| (x - start - speed * t) / width;
    let g = move |x: f64, t: f64| (-0.5 * z(x, t).powi(2)).exp();
    [
        LoadField::from_fn(grid, g),
        LoadField::from_fn(grid, move |x, t| g(x, t) * z(x, t) * t / width),
        LoadField::from_fn(grid, move |x, t| g(x, t) * z(x, t).powi(2) / width),
    ]
}

/// Reduced misfit over the nonlinear parameters with the amplitude eliminated.
struct GaussianFit<'a> {
    obj: &'a Objective,
    start: f64,
    speed_scale: f64,
    width_scale: f64,
}

struct GaussianPoint {
    j: f64,
    grad: [f64; 2],
    amplitude: f64,
    speed: f64,
    width: f64,
}

impl GaussianFit<'_> {
    fn unpack(&self, s: [f64; 2]) -> (f64, f64) {
        (s[0] * self.speed_scale, self.width_scale * s[1].exp())
    }

    fn eval(&self, s: [f64; 2]) -> Result<GaussianPoint> {
        let (speed, width) = self.unpack(s);
        let grid = *self.obj.grid();
        let [g, dv, dw] = gaussian_shape(&grid, self.start, speed, width);
        let y = outputs(self.obj.problem(), &g)?;
        let m = self.obj.measurements();
        let yy = pair_inner(&grid, &y, (&y.0, &y.1));
        let amplitude = if yy > 0.0 {
            pair_inner(&grid, &y, (&m.theta0, &m.theta_l)) / yy
        } else {
            0.0
        };
        let (eval, grad) = self.obj.gradient(&g.scaled(amplitude))?;
        let gv = amplitude * grad.inner(&dv)? * self.speed_scale;
        let gw = amplitude * grad.inner(&dw)? * width;
        Ok(GaussianPoint {
            j: eval.j,
            grad: [gv, gw],
            amplitude,
            speed,
            width,
        })
    }
}

/// Fits a parametric family to the measured end slopes.
pub fn reconstruct_parametric(
    measurements: &MeasurementSeries,
    coeffs: &CoefficientSet,
    grid: &SpaceTimeGrid,
    family: &ParametricFamily,
    options: &ParametricOptions,
) -> Result<ParametricResult> {
    let obj = Objective::new(BeamProblem::new(grid, coeffs)?, measurements.clone())?;
    match family {
        ParametricFamily::MovingGaussian { start } => fit_gaussian(&obj, *start, options),
        ParametricFamily::Modal { modes } => fit_modal(&obj, modes),
    }
}

fn fit_gaussian(obj: &Objective, start: f64, options: &ParametricOptions) -> Result<ParametricResult> {
    let grid = *obj.grid();
    let guess = options.guess.unwrap_or_else(|| GaussianGuess::default_for(&grid));
    if !(guess.width > 0.0) {
        return Err(Error::Domain(format!("initial width must be > 0, got {}", guess.width)));
    }
    let fit = GaussianFit {
        obj,
        start,
        speed_scale: grid.length() / grid.final_time(),
        width_scale: grid.length(),
    };
    let mut s = [guess.speed / fit.speed_scale, (guess.width / fit.width_scale).ln()];
    let mut pt = fit.eval(s)?;
    let j0 = pt.j.max(f64::MIN_POSITIVE);
    // inverse Hessian approximation
    let mut h = [[1.0, 0.0], [0.0, 1.0]];
    let mut first = true;
    let mut iterations = 0;
    while iterations < options.max_iterations {
        let gnorm = pt.grad[0].hypot(pt.grad[1]);
        if gnorm <= 1e-10 * j0 || pt.j <= 1e-28 * j0 || pt.amplitude == 0.0 {
            break;
        }
        let mut d = [
            -(h[0][0] * pt.grad[0] + h[0][1] * pt.grad[1]),
            -(h[1][0] * pt.grad[0] + h[1][1] * pt.grad[1]),
        ];
        let mut slope = d[0] * pt.grad[0] + d[1] * pt.grad[1];
        if slope >= 0.0 {
            h = [[1.0, 0.0], [0.0, 1.0]];
            d = [-pt.grad[0], -pt.grad[1]];
            slope = -gnorm * gnorm;
        }
        // keep the first step moderate in the scaled variables
        let dn = d[0].hypot(d[1]);
        let mut a = if first { (0.1 / dn).min(1.0) } else { (0.5 / dn).min(1.0) };
        let mut next = None;
        for _ in 0..40 {
            let trial = [s[0] + a * d[0], s[1] + a * d[1]];
            let p = fit.eval(trial)?;
            if p.j <= pt.j + ARMIJO * a * slope {
                next = Some((trial, p));
                break;
            }
            a *= 0.5;
        }
        let Some((trial, p)) = next else { break };
        iterations += 1;
        let step = [trial[0] - s[0], trial[1] - s[1]];
        let yv = [p.grad[0] - pt.grad[0], p.grad[1] - pt.grad[1]];
        let sy = step[0] * yv[0] + step[1] * yv[1];
        if sy > 1e-300 {
            if first {
                let yy = yv[0] * yv[0] + yv[1] * yv[1];
                let scale = sy / yy;
                h = [[scale, 0.0], [0.0, scale]];
            }
            let rho = 1.0 / sy;
            let hy = [h[0][0] * yv[0] + h[0][1] * yv[1], h[1][0] * yv[0] + h[1][1] * yv[1]];
            let yhy = yv[0] * hy[0] + yv[1] * hy[1];
            for i in 0..2 {
                for k in 0..2 {
                    h[i][k] += (1.0 + rho * yhy) * rho * step[i] * step[k] - rho * (hy[i] * step[k] + step[i] * hy[k]);
                }
            }
            first = false;
        }
        let rel = (pt.j - p.j).abs() / pt.j.max(f64::MIN_POSITIVE);
        s = trial;
        pt = p;
        debug!("gaussian fit {iterations}: J = {:.6e} A = {:.6e} v = {:.6e} sigma = {:.6e}", pt.j, pt.amplitude, pt.speed, pt.width);
        if rel < 1e-14 {
            break;
        }
    }

    let problem = obj.problem();
    let [g, dv, dw] = gaussian_shape(&grid, start, pt.speed, pt.width);
    let y = outputs(problem, &g)?;
    let yv = outputs(problem, &dv.scaled(pt.amplitude * fit.speed_scale))?;
    let yw = outputs(problem, &dw.scaled(pt.amplitude * pt.width))?;
    let ynorm = pair_inner(&grid, &y, (&y.0, &y.1)).sqrt();
    let condition = gram_condition(&grid, &[y.clone(), yv, yw]);
    let identifiable = condition.is_finite() && condition <= CONDITION_LIMIT;
    if !identifiable {
        warn!("moving-Gaussian parameters are not identifiable at the estimate (condition {condition:.3e})");
    }
    Ok(ParametricResult {
        parameters: vec![
            ("amplitude".into(), pt.amplitude),
            ("speed".into(), pt.speed),
            ("width".into(), pt.width),
        ],
        j: pt.j,
        iterations,
        condition,
        identifiable,
        amplitude_noise_floor: Some(if ynorm > 0.0 { options.noise_level / ynorm } else { f64::INFINITY }),
        load: g.scaled(pt.amplitude),
    })
}

fn modal_shape(grid: &SpaceTimeGrid, kx: usize, kt: usize) -> LoadField {
    let (l, t_end) = (grid.length(), grid.final_time());
    LoadField::from_fn(grid, move |x, t| {
        (kx as f64 * std::f64::consts::PI * x / l).sin() * (kt as f64 * std::f64::consts::PI * t / t_end).sin()
    })
}

fn fit_modal(obj: &Objective, modes: &[(usize, usize)]) -> Result<ParametricResult> {
    if modes.is_empty() || modes.len() > 8 {
        return Err(Error::Input(format!("modal family needs 1 to 8 terms, got {}", modes.len())));
    }
    if modes.iter().any(|&(a, b)| a == 0 || b == 0) {
        return Err(Error::Input("mode indices start at 1".into()));
    }
    let grid = *obj.grid();
    let shapes: Vec<LoadField> = modes.iter().map(|&(a, b)| modal_shape(&grid, a, b)).collect();
    let cols = shapes
        .iter()
        .map(|s| outputs(obj.problem(), s))
        .collect::<Result<Vec<_>>>()?;
    let m = obj.measurements();
    let k = cols.len();
    let gram = DMatrix::from_fn(k, k, |i, j| pair_inner(&grid, &cols[i], (&cols[j].0, &cols[j].1)));
    let rhs = DVector::from_fn(k, |i, _| pair_inner(&grid, &cols[i], (&m.theta0, &m.theta_l)));
    let condition = gram_condition(&grid, &cols);
    let identifiable = condition.is_finite() && condition <= CONDITION_LIMIT;
    if !identifiable {
        warn!("modal coefficients are not identifiable (condition {condition:.3e})");
    }
    let coef = gram
        .clone()
        .svd(true, true)
        .solve(&rhs, 1e-14 * gram.norm())
        .map_err(|e| Error::Internal(e.to_string()))?;
    let mut load = LoadField::zeros(&grid);
    for (a, s) in coef.iter().zip(&shapes) {
        load = load.add_scaled(*a, s)?;
    }
    let j = obj.evaluate(&load)?.j;
    Ok(ParametricResult {
        parameters: modes
            .iter()
            .zip(coef.iter())
            .map(|(&(a, b), c)| (format!("a_{a}_{b}"), *c))
            .collect(),
        j,
        iterations: 1,
        condition,
        identifiable,
        amplitude_noise_floor: None,
        load,
    })
}
