//! Input–output operators, the least-squares misfit functional and its
//! adjoint gradient.

use log::warn;

use crate::adjoint::{AdjointField, AdjointOptions};
use crate::error::{Error, Result};
use crate::forward::{BeamProblem, BeamTrajectory, EPS_FLOOR};
use crate::model::{
    time_inner, time_norm_sq, CoefficientSet, LoadField, MeasurementSeries, Smoothness, SpaceTimeGrid,
};

/// End slopes `(u_x(0, .), u_x(l, .))` produced by the load `f`.
pub fn apply_io_operators(
    f: &LoadField,
    coeffs: &CoefficientSet,
    grid: &SpaceTimeGrid,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let traj = BeamProblem::new(grid, coeffs)?.solve(f)?;
    Ok((traj.outputs.theta0, traj.outputs.theta_l))
}

/// Misfit value and residual series at one load.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveEvaluation {
    /// `½||p||² + ½||q||²`.
    pub j: f64,
    /// `½||p||²`
    pub misfit_start: f64,
    /// `½||q||²`
    pub misfit_end: f64,
    /// `u_x(0, t; F) - theta_0(t)`
    pub p: Vec<f64>,
    /// `u_x(l, t; F) - theta_l(t)`
    pub q: Vec<f64>,
    /// `(p', q')` when the measurements carry derivatives.
    pub rates: Option<(Vec<f64>, Vec<f64>)>,
}

/// Adjoint gradient `J'(F) ≈ phi(x, t; F)` on the load grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    field: LoadField,
    norm: f64,
}

impl GradientField {
    pub fn new(field: LoadField) -> Self {
        let norm = field.norm_sq().max(0.0).sqrt();
        Self { field, norm }
    }

    pub fn field(&self) -> &LoadField {
        &self.field
    }

    pub fn into_field(self) -> LoadField {
        self.field
    }

    /// `||J'(F)||_{L²(Omega_T)}`.
    pub fn norm(&self) -> f64 {
        self.norm
    }

    /// `<J'(F), d>` with the same quadrature as the load norm.
    pub fn inner(&self, d: &LoadField) -> Result<f64> {
        self.field.inner(d)
    }
}

/// Misfit functional for fixed measurements on an assembled beam.
#[derive(Debug, Clone)]
pub struct Objective {
    problem: BeamProblem,
    measurements: MeasurementSeries,
    adjoint: AdjointOptions,
}

impl Objective {
    pub fn new(problem: BeamProblem, measurements: MeasurementSeries) -> Result<Self> {
        measurements.check_grid(problem.grid())?;
        if !measurements.is_finite() {
            return Err(Error::Input("measurements contain non-finite samples".into()));
        }
        Ok(Self {
            problem,
            measurements,
            adjoint: AdjointOptions::default(),
        })
    }

    pub fn with_adjoint_options(mut self, opts: AdjointOptions) -> Self {
        self.adjoint = opts;
        self
    }

    pub fn problem(&self) -> &BeamProblem {
        &self.problem
    }

    pub fn grid(&self) -> &SpaceTimeGrid {
        self.problem.grid()
    }

    pub fn measurements(&self) -> &MeasurementSeries {
        &self.measurements
    }

    /// Misfit of a precomputed trajectory.
    pub fn evaluate_trajectory(&self, traj: &BeamTrajectory) -> ObjectiveEvaluation {
        let grid = self.grid();
        let m = &self.measurements;
        let o = &traj.outputs;
        let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>();
        let p = diff(&o.theta0, &m.theta0);
        let q = diff(&o.theta_l, &m.theta_l);
        let rates = match (o.derivatives(), m.derivatives()) {
            (Some((u0, ul)), Some((d0, dl))) => Some((diff(u0, d0), diff(ul, dl))),
            _ => None,
        };
        let misfit_start = 0.5 * time_norm_sq(grid, &p);
        let misfit_end = 0.5 * time_norm_sq(grid, &q);
        ObjectiveEvaluation {
            j: misfit_start + misfit_end,
            misfit_start,
            misfit_end,
            p,
            q,
            rates,
        }
    }

    pub fn evaluate(&self, f: &LoadField) -> Result<ObjectiveEvaluation> {
        Ok(self.evaluate_trajectory(&self.problem.solve(f)?))
    }

    /// Misfit and the adjoint field at `f`.
    pub fn evaluate_with_adjoint(&self, f: &LoadField) -> Result<(ObjectiveEvaluation, AdjointField)> {
        let eval = self.evaluate(f)?;
        let mut adj = self.problem.solve_adjoint_with(&eval.p, &eval.q, self.adjoint)?;
        if let Some((dp, dq)) = &eval.rates {
            adj = adj.with_input_rates(dp.clone(), dq.clone())?;
        }
        Ok((eval, adj))
    }

    /// Misfit and gradient at `f`.
    pub fn gradient(&self, f: &LoadField) -> Result<(ObjectiveEvaluation, GradientField)> {
        if self.measurements.smoothness() == Smoothness::Raw {
            warn!("gradient computed from raw measurements; the adjoint data may not be H1-regular");
        }
        let (eval, adj) = self.evaluate_with_adjoint(f)?;
        Ok((eval, GradientField::new(adj.gradient_field(self.problem.load_operator()))))
    }
}

/// `J(F)` for the given measurements.
pub fn evaluate_objective(
    f: &LoadField,
    measurements: &MeasurementSeries,
    coeffs: &CoefficientSet,
    grid: &SpaceTimeGrid,
) -> Result<ObjectiveEvaluation> {
    if f.grid() != grid {
        return Err(Error::Input("load field and grid differ".into()));
    }
    Objective::new(BeamProblem::new(grid, coeffs)?, measurements.clone())?.evaluate(f)
}

/// Adjoint gradient `J'(F)`.
pub fn compute_gradient(
    f: &LoadField,
    measurements: &MeasurementSeries,
    coeffs: &CoefficientSet,
    grid: &SpaceTimeGrid,
) -> Result<GradientField> {
    Ok(Objective::new(BeamProblem::new(grid, coeffs)?, measurements.clone())?
        .gradient(f)?
        .1)
}

/// Relative mismatch of the duality relation
/// `<p, du_x(0)> + <q, du_x(l)> = <dF, phi>` where `du` is driven by `df`
/// and `phi` solves the backward problem with data `(p, q)`.
pub fn duality_residual(
    problem: &BeamProblem,
    df: &LoadField,
    p: &[f64],
    q: &[f64],
    opts: AdjointOptions,
) -> Result<f64> {
    let grid = problem.grid();
    let du = problem.solve(df)?;
    let phi = problem.solve_adjoint_with(p, q, opts)?;
    let lhs = time_inner(grid, p, &du.outputs.theta0) + time_inner(grid, q, &du.outputs.theta_l);
    let rhs = df.inner(&phi.gradient_field(problem.load_operator()))?;
    Ok((lhs - rhs).abs() / (rhs.abs() + EPS_FLOOR))
}

/// Adjoint versus central-difference directional derivative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectionalCheck {
    pub adjoint: f64,
    pub finite_difference: f64,
    pub epsilon: f64,
    pub relative_error: f64,
}

/// Compares `<J'(F), d>` with `(J(F + eps d) - J(F - eps d)) / (2 eps)`,
/// `eps = 1e-4 ||F|| / ||d||` (or `1e-4 / ||d||` at `F = 0`).
pub fn directional_derivative_check(obj: &Objective, f: &LoadField, d: &LoadField) -> Result<DirectionalCheck> {
    let fnorm = f.norm_sq().sqrt();
    let dnorm = d.norm_sq().sqrt();
    if dnorm == 0.0 {
        return Err(Error::Input("direction must be nonzero".into()));
    }
    let epsilon = 1e-4 * if fnorm > 0.0 { fnorm } else { 1.0 } / dnorm;
    let (_, g) = obj.gradient(f)?;
    let adjoint = g.inner(d)?;
    let jp = obj.evaluate(&f.add_scaled(epsilon, d)?)?.j;
    let jm = obj.evaluate(&f.add_scaled(-epsilon, d)?)?.j;
    let finite_difference = (jp - jm) / (2.0 * epsilon);
    let relative_error = (adjoint - finite_difference).abs() / finite_difference.abs().max(EPS_FLOOR);
    Ok(DirectionalCheck {
        adjoint,
        finite_difference,
        epsilon,
        relative_error,
    })
}

/// Output norms `||u_x(0, .)||` for the unit-norm loads
/// `sin(k pi x / l) g(t)` with `g(t) = sin(pi t / T)`, for each `k`.
pub fn mode_output_norms(problem: &BeamProblem, modes: &[usize]) -> Result<Vec<f64>> {
    let grid = *problem.grid();
    let (l, t_end) = (grid.length(), grid.final_time());
    modes
        .iter()
        .map(|&k| {
            let f = LoadField::from_fn(&grid, |x, t| {
                (k as f64 * std::f64::consts::PI * x / l).sin() * (std::f64::consts::PI * t / t_end).sin()
            });
            let f = f.scaled(1.0 / f.norm_sq().sqrt());
            let traj = problem.solve(&f)?;
            Ok(time_norm_sq(&grid, &traj.outputs.theta0).sqrt())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn setup(ne: usize, ns: usize) -> (SpaceTimeGrid, CoefficientSet, BeamProblem) {
        let g = SpaceTimeGrid::new(1.0, 1.0, ne, ns).unwrap();
        let c = CoefficientSet::constant(&g, 1.0, 0.1, 0.2, 1.0, 0.05);
        let p = BeamProblem::new(&g, &c).unwrap();
        (g, c, p)
    }

    fn smooth_load(g: &SpaceTimeGrid, a: f64) -> LoadField {
        LoadField::from_fn(g, move |x, t| a * ((PI * x).sin() * (1.0 + t) + 0.3 * (2.0 * PI * x).sin() * (3.0 * t).cos()))
    }

    #[test]
    fn zero_load_has_zero_outputs() {
        let (g, c, _) = setup(8, 16);
        let (a, b) = apply_io_operators(&LoadField::zeros(&g), &c, &g).unwrap();
        assert!(a.iter().chain(&b).all(|x| *x == 0.0));
    }

    #[test]
    fn io_operators_are_linear() {
        let (g, c, _) = setup(8, 32);
        let f = smooth_load(&g, 1.0);
        let (a, _) = apply_io_operators(&f, &c, &g).unwrap();
        let (b, _) = apply_io_operators(&f.scaled(2.0), &c, &g).unwrap();
        let scale = a.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        assert!(a.iter().zip(&b).all(|(x, y)| (2.0 * x - y).abs() <= 1e-10 * scale));
    }

    #[test]
    fn twin_data_has_zero_misfit_and_zero_gradient() {
        let (g, _, p) = setup(8, 32);
        let f = smooth_load(&g, 1.0);
        let traj = p.solve(&f).unwrap();
        let obj = Objective::new(p, traj.outputs.clone()).unwrap();
        let (eval, grad) = obj.gradient(&f).unwrap();
        assert_eq!(eval.j, 0.0);
        assert_eq!(grad.norm(), 0.0);
    }

    #[test]
    fn zero_measurements_give_half_output_norms() {
        let (g, _, p) = setup(8, 32);
        let f = smooth_load(&g, 1.0);
        let traj = p.solve(&f).unwrap();
        let obj = Objective::new(p, MeasurementSeries::zeros(&g)).unwrap();
        let eval = obj.evaluate(&f).unwrap();
        let expect = 0.5 * (time_norm_sq(&g, &traj.outputs.theta0) + time_norm_sq(&g, &traj.outputs.theta_l));
        assert_eq!(eval.j, expect);
        assert!(eval.j > 0.0);
    }

    #[test]
    fn measurement_grid_is_checked() {
        let (g, c, _) = setup(8, 32);
        let other = SpaceTimeGrid::new(1.0, 1.0, 8, 16).unwrap();
        let r = evaluate_objective(&LoadField::zeros(&g), &MeasurementSeries::zeros(&other), &c, &g);
        assert!(matches!(r, Err(Error::Dimension { .. })));
    }

    #[test]
    fn duality_holds_and_fails_with_flipped_sign() {
        let (g, _, p) = setup(16, 64);
        let df = LoadField::from_fn(&g, |x, t| (PI * x).sin() * t + x * (1.0 - x) * (4.0 * t).cos());
        let ps: Vec<f64> = g.times().iter().map(|t| (2.0 * t).sin()).collect();
        let qs: Vec<f64> = g.times().iter().map(|t| t * (1.0 - 0.5 * t)).collect();
        let r = duality_residual(&p, &df, &ps, &qs, AdjointOptions::default()).unwrap();
        assert!(r < 1e-2, "residual {r}");
        let flipped = AdjointOptions { flip_boundary_sign: true };
        let r = duality_residual(&p, &df, &ps, &qs, flipped).unwrap();
        assert!(r > 1.0, "flipped residual {r}");
        let r = duality_residual(&p, &LoadField::zeros(&g), &ps, &qs, AdjointOptions::default()).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn gradient_matches_finite_differences_on_a_coarse_grid() {
        let (g, _, p) = setup(16, 64);
        let truth = smooth_load(&g, 2.0);
        let meas = p.solve(&truth).unwrap().outputs;
        let obj = Objective::new(p, meas).unwrap();
        let f = smooth_load(&g, 0.5);
        let d = LoadField::from_fn(&g, |x, t| x * (1.0 - x) * (1.0 + (5.0 * t).sin()));
        let chk = directional_derivative_check(&obj, &f, &d).unwrap();
        assert!(chk.relative_error < 2e-2, "{chk:?}");
    }

    #[test]
    fn high_spatial_modes_are_damped_in_the_outputs() {
        let (_, _, p) = setup(64, 256);
        let n = mode_output_norms(&p, &[1, 16]).unwrap();
        assert!(n[1] <= 0.1 * n[0], "{n:?}");
    }
}
