//! Time integration of the damped beam and the output traces.
//!
//! The semi-discrete system `M a + (C_ext + K_kappa) v + (K_T + K_r) u = f(t)` is
//! advanced with the average-acceleration Newmark scheme (`gamma = 1/2`,
//! `beta = 1/4`). The effective matrix is factored once per problem.

use log::debug;

use crate::banded::{BandCholesky, SymBandMatrix};
use crate::bounds::{ConstantSet, InequalityCheck};
use crate::discretization::{assemble, DofMap, LoadOperator, NormMatrices, SystemMatrices};
use crate::error::{check_len, Error, Result};
use crate::model::{CoefficientSet, LoadField, MeasurementSeries, SpaceTimeGrid};

/// Relative residual floor.
pub const EPS_FLOOR: f64 = 1e-14;

/// Assembled and factored beam on one grid, reusable across many solves.
#[derive(Debug, Clone)]
pub struct BeamProblem {
    grid: SpaceTimeGrid,
    coeffs: CoefficientSet,
    matrices: SystemMatrices,
    damping: SymBandMatrix,
    stiffness: SymBandMatrix,
    effective: BandCholesky,
    mass_factor: BandCholesky,
    load: LoadOperator,
    norms: NormMatrices,
}

impl BeamProblem {
    pub fn new(grid: &SpaceTimeGrid, coeffs: &CoefficientSet) -> Result<Self> {
        let matrices = assemble(grid, coeffs)?;
        let damping = matrices.damping();
        let stiffness = matrices.stiffness();
        let dt = grid.dt();
        let s = SymBandMatrix::linear_combination(&[
            (1.0, &matrices.mass),
            (0.5 * dt, &damping),
            (0.25 * dt * dt, &stiffness),
        ]);
        let effective = s
            .cholesky()
            .map_err(|e| Error::Internal(format!("effective Newmark matrix: {e}")))?;
        let mass_factor = matrices
            .mass
            .cholesky()
            .map_err(|e| Error::Internal(format!("mass matrix: {e}")))?;
        Ok(Self {
            grid: *grid,
            coeffs: coeffs.clone(),
            matrices,
            damping,
            stiffness,
            effective,
            mass_factor,
            load: LoadOperator::new(grid),
            norms: NormMatrices::new(grid),
        })
    }

    pub fn grid(&self) -> &SpaceTimeGrid {
        &self.grid
    }

    pub fn coeffs(&self) -> &CoefficientSet {
        &self.coeffs
    }

    pub fn matrices(&self) -> &SystemMatrices {
        &self.matrices
    }

    pub fn norms(&self) -> &NormMatrices {
        &self.norms
    }

    pub fn dofs(&self) -> DofMap {
        self.matrices.dofs
    }

    pub fn load_operator(&self) -> &LoadOperator {
        &self.load
    }

    /// Integrates from rest with the DOF forcing written by `forcing(n, f)` at
    /// every time instant. Returns time-major displacement and velocity arrays.
    pub(crate) fn integrate(
        &self,
        mut forcing: impl FnMut(usize, &mut [f64]),
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let nd = self.dofs().n_reduced();
        let nt = self.grid.n_times();
        let dt = self.grid.dt();
        let mut u = vec![0.0; nd * nt];
        let mut v = vec![0.0; nd * nt];

        let mut f = vec![0.0; nd];
        forcing(0, &mut f);
        // at rest, M a_0 = f_0
        let mut a = self.mass_factor.solve(&f);
        let mut rhs = vec![0.0; nd];
        let mut pred = vec![0.0; nd];
        for n in 0..self.grid.n_steps() {
            let (done, next) = u.split_at_mut((n + 1) * nd);
            let un = &done[n * nd..];
            let (vdone, vnext) = v.split_at_mut((n + 1) * nd);
            let vn = &vdone[n * nd..];

            forcing(n + 1, &mut f);
            rhs.copy_from_slice(&f);
            for i in 0..nd {
                pred[i] = vn[i] + 0.5 * dt * a[i];
            }
            self.damping.mul_vec_add(-1.0, &pred, &mut rhs);
            for i in 0..nd {
                pred[i] = un[i] + dt * vn[i] + 0.25 * dt * dt * a[i];
            }
            self.stiffness.mul_vec_add(-1.0, &pred, &mut rhs);
            self.effective.solve_in_place(&mut rhs);
            let a_next = &rhs;
            if let Some(i) = a_next.iter().position(|x| !x.is_finite()) {
                return Err(Error::Divergence {
                    step: n + 1,
                    detail: format!("non-finite acceleration in DOF {i}"),
                });
            }
            let u1 = &mut next[..nd];
            let v1 = &mut vnext[..nd];
            for i in 0..nd {
                let sum = a[i] + a_next[i];
                u1[i] = un[i] + dt * vn[i] + 0.25 * dt * dt * sum;
                v1[i] = vn[i] + 0.5 * dt * sum;
            }
            a.copy_from_slice(a_next);
        }
        debug!("integrated {} steps over {nd} DOFs", self.grid.n_steps());
        Ok((u, v))
    }

    /// Forward solve for the load `f`.
    pub fn solve(&self, f: &LoadField) -> Result<BeamTrajectory> {
        if f.grid() != &self.grid {
            return Err(Error::Input("load field and problem use different grids".into()));
        }
        if !f.is_finite() {
            return Err(Error::Input("load field contains non-finite samples".into()));
        }
        let (u, v) = self.integrate(|n, out| self.load.apply_into(f.at_time(n), out))?;
        BeamTrajectory::new(&self.grid, self.dofs(), u, v)
    }

    /// Consistent DOF load vectors of `f`, one per time instant (time-major).
    pub fn load_vectors(&self, f: &LoadField) -> Vec<f64> {
        let nd = self.dofs().n_reduced();
        let mut out = vec![0.0; nd * self.grid.n_times()];
        for (n, chunk) in out.chunks_mut(nd).enumerate() {
            self.load.apply_into(f.at_time(n), chunk);
        }
        out
    }

    /// Energy balance of a trajectory produced by [`BeamProblem::solve`] with `f`.
    pub fn energy_balance(&self, traj: &BeamTrajectory, f: &LoadField) -> Result<EnergyBalance> {
        traj.check_grid(&self.grid)?;
        f.check_same_grid(&LoadField::zeros(&self.grid))?;
        let nd = self.dofs().n_reduced();
        let nt = self.grid.n_times();
        let dt = self.grid.dt();
        let loads = self.load_vectors(f);
        let mut energy = Vec::with_capacity(nt);
        let mut dissipation = Vec::with_capacity(nt);
        let mut work = Vec::with_capacity(nt);
        let mut prev: Option<(f64, f64)> = None;
        let (mut d_acc, mut w_acc) = (0.0, 0.0);
        for n in 0..nt {
            let u = traj.displacement(n);
            let v = traj.velocity(n);
            energy.push(self.matrices.mass.quad_form(v) + self.stiffness.quad_form(u));
            let d_rate = self.damping.quad_form(v);
            let w_rate: f64 = loads[n * nd..(n + 1) * nd].iter().zip(v).map(|(a, b)| a * b).sum();
            if let Some((pd, pw)) = prev {
                d_acc += dt * (pd + d_rate);
                w_acc += dt * (pw + w_rate);
            }
            prev = Some((d_rate, w_rate));
            dissipation.push(d_acc);
            work.push(w_acc);
        }
        Ok(EnergyBalance {
            energy,
            dissipation,
            work,
        })
    }
}

/// Terms of the energy identity at every time instant:
/// `energy(t) + dissipation(t) = work(t)` where
/// `energy = ∫ rho_A u_t² + r u_xx² + T_r u_x²`,
/// `dissipation = 2 ∫∫ mu u_t² + kappa u_xxt²` and `work = 2 ∫∫ F u_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyBalance {
    pub energy: Vec<f64>,
    pub dissipation: Vec<f64>,
    pub work: Vec<f64>,
}

impl EnergyBalance {
    /// `|energy + dissipation - work| / max(max |work|, EPS_FLOOR)` per instant.
    pub fn relative_residual(&self) -> Vec<f64> {
        let scale = self
            .work
            .iter()
            .fold(0.0f64, |m, w| m.max(w.abs()))
            .max(EPS_FLOOR);
        self.energy
            .iter()
            .zip(&self.dissipation)
            .zip(&self.work)
            .map(|((e, d), w)| (e + d - w).abs() / scale)
            .collect()
    }
}

/// Discrete forward solution with its end-slope outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamTrajectory {
    grid: SpaceTimeGrid,
    dofs: DofMap,
    // time-major, n_times x n_reduced
    u: Vec<f64>,
    v: Vec<f64>,
    /// `u_x(0, t)`, `u_x(l, t)` with their time derivatives.
    pub outputs: MeasurementSeries,
}

impl BeamTrajectory {
    pub(crate) fn new(grid: &SpaceTimeGrid, dofs: DofMap, u: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        let nd = dofs.n_reduced();
        check_len("trajectory samples", nd * grid.n_times(), u.len())?;
        check_len("velocity samples", nd * grid.n_times(), v.len())?;
        let pick = |a: &[f64], k: usize| a.chunks(nd).map(|c| c[k]).collect::<Vec<_>>();
        let (s, e) = (dofs.rotation_start(), dofs.rotation_end());
        let outputs = MeasurementSeries::smoothed(grid, pick(&u, s), pick(&u, e), pick(&v, s), pick(&v, e))?;
        Ok(Self {
            grid: *grid,
            dofs,
            u,
            v,
            outputs,
        })
    }

    pub fn grid(&self) -> &SpaceTimeGrid {
        &self.grid
    }

    pub fn dofs(&self) -> DofMap {
        self.dofs
    }

    /// Reduced DOF vector at time instant `n`.
    pub fn displacement(&self, n: usize) -> &[f64] {
        let nd = self.dofs.n_reduced();
        &self.u[n * nd..(n + 1) * nd]
    }

    pub fn velocity(&self, n: usize) -> &[f64] {
        let nd = self.dofs.n_reduced();
        &self.v[n * nd..(n + 1) * nd]
    }

    /// Nodal deflections `u(x_i, t_n)` as a field on the load grid.
    pub fn deflection_field(&self) -> LoadField {
        let values = (0..self.grid.n_times())
            .flat_map(|n| self.dofs.nodal_deflections(self.displacement(n)))
            .collect();
        LoadField::from_time_major(&self.grid, values).expect("grid-sized deflections")
    }

    /// True when every sample is finite.
    pub fn is_finite(&self) -> bool {
        self.u.iter().chain(&self.v).all(|x| x.is_finite())
    }

    pub(crate) fn check_grid(&self, grid: &SpaceTimeGrid) -> Result<()> {
        if &self.grid != grid {
            return Err(Error::Input("trajectory belongs to a different grid".into()));
        }
        Ok(())
    }
}

/// Solves the forward problem for load `f` on `grid`.
pub fn solve_forward(coeffs: &CoefficientSet, f: &LoadField, grid: &SpaceTimeGrid) -> Result<BeamTrajectory> {
    BeamProblem::new(grid, coeffs)?.solve(f)
}

/// Relative energy-identity residual per time instant.
pub fn energy_residual(traj: &BeamTrajectory, coeffs: &CoefficientSet, f: &LoadField) -> Result<Vec<f64>> {
    let problem = BeamProblem::new(traj.grid(), coeffs)?;
    Ok(problem.energy_balance(traj, f)?.relative_residual())
}

/// Space–time norms of a discrete field used by the a-priori checks.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub(crate) struct FieldNorms {
    pub rate_sup: f64,
    pub rate_l2: f64,
    pub curvature_sup: f64,
    pub curvature_l2: f64,
    pub curvature_rate_sup: f64,
    pub curvature_rate_l2: f64,
}

/// Squared `L∞(L²)` and `L²(L²)` norms of `w`, `w_xx`, `w_xxt` from
/// displacement/velocity accessors.
pub(crate) fn field_norms<'a>(
    grid: &SpaceTimeGrid,
    norms: &NormMatrices,
    disp: impl Fn(usize) -> &'a [f64],
    vel: impl Fn(usize) -> &'a [f64],
) -> FieldNorms {
    let wt = grid.time_weights();
    let mut out = FieldNorms::default();
    for (n, &w) in wt.iter().enumerate() {
        let (u, v) = (disp(n), vel(n));
        let rate = norms.value.quad_form(v);
        let curv = norms.curvature.quad_form(u);
        let curv_rate = norms.curvature.quad_form(v);
        out.rate_sup = out.rate_sup.max(rate);
        out.rate_l2 += w * rate;
        out.curvature_sup = out.curvature_sup.max(curv);
        out.curvature_l2 += w * curv;
        out.curvature_rate_sup = out.curvature_rate_sup.max(curv_rate);
        out.curvature_rate_l2 += w * curv_rate;
    }
    out
}

/// Checks the six interior a-priori estimates and the four end-slope trace
/// estimates for a forward solution, with relative slack `slack`.
pub fn check_apriori_estimates(
    traj: &BeamTrajectory,
    coeffs: &CoefficientSet,
    f: &LoadField,
    constants: &ConstantSet,
    slack: f64,
) -> Result<Vec<InequalityCheck>> {
    let grid = traj.grid();
    check_len("coefficient samples vs grid nodes", grid.n_nodes(), coeffs.n_nodes())?;
    f.check_same_grid(&LoadField::zeros(grid))?;
    let norms = NormMatrices::new(grid);
    let b = coeffs.bounds();
    let (rho0, r0, kappa0) = (b.rho_0(), b.r_0(), b.kappa_0());
    let f2 = f.norm_sq();
    let ce2 = constants.ce2;
    let c12 = constants.c1_sq;
    let fnorm = field_norms(grid, &norms, |n| traj.displacement(n), |n| traj.velocity(n));
    let o = &traj.outputs;
    let (d0, dl) = o.derivatives().expect("trajectory outputs carry rates");
    let tn = |s: &[f64]| crate::model::time_norm_sq(grid, s);
    let mk = |name: &str, lhs: f64, rhs: f64| InequalityCheck::new(name, lhs, rhs, slack);
    Ok(vec![
        mk("energy.rate_sup", fnorm.rate_sup, ce2 / rho0 * f2),
        mk("energy.rate_l2", fnorm.rate_l2, (ce2 - 1.0) * f2),
        mk("energy.curvature_sup", fnorm.curvature_sup, ce2 / r0 * f2),
        mk("energy.curvature_l2", fnorm.curvature_l2, rho0 / r0 * (ce2 - 1.0) * f2),
        mk("energy.curvature_rate_sup", fnorm.curvature_rate_sup, ce2 / kappa0 * f2),
        mk("energy.curvature_rate_l2", fnorm.curvature_rate_l2, rho0 / kappa0 * (ce2 - 1.0) * f2),
        mk("trace.slope_start", tn(&o.theta0), c12 / r0 * f2),
        mk("trace.slope_rate_start", tn(d0), c12 / kappa0 * f2),
        mk("trace.slope_end", tn(&o.theta_l), c12 / r0 * f2),
        mk("trace.slope_rate_end", tn(dl), c12 / kappa0 * f2),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::{compute_constants, CtVariant};
    use std::f64::consts::PI;

    pub(crate) fn baseline_coeffs(g: &SpaceTimeGrid) -> CoefficientSet {
        CoefficientSet::constant(g, 1.0, 0.1, 0.2, 1.0, 0.05)
    }

    fn manufactured_load(g: &SpaceTimeGrid) -> LoadField {
        let b = PI;
        let b4 = b.powi(4);
        LoadField::from_fn(g, move |x, t| {
            (2.0 + 0.2 * t + 2.0 * 0.05 * b4 * t + (0.2 * b * b + b4) * t * t) * (b * x).sin()
        })
    }

    fn max_rel_error(ne: usize, ns: usize) -> f64 {
        let g = SpaceTimeGrid::new(1.0, 1.0, ne, ns).unwrap();
        let traj = solve_forward(&baseline_coeffs(&g), &manufactured_load(&g), &g).unwrap();
        let mut err: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for n in 0..g.n_times() {
            let t = g.time(n);
            let w = traj.dofs().nodal_deflections(traj.displacement(n));
            for (i, wi) in w.iter().enumerate() {
                let exact = t * t * (PI * g.node(i)).sin();
                err = err.max((wi - exact).abs());
                scale = scale.max(exact.abs());
            }
            err = err.max((traj.outputs.theta0[n] - PI * t * t).abs());
            err = err.max((traj.outputs.theta_l[n] + PI * t * t).abs());
        }
        err / scale
    }

    #[test]
    fn zero_load_gives_zero_solution() {
        let g = SpaceTimeGrid::new(1.0, 1.0, 8, 16).unwrap();
        let traj = solve_forward(&baseline_coeffs(&g), &LoadField::zeros(&g), &g).unwrap();
        assert!(traj.u.iter().chain(&traj.v).all(|x| *x == 0.0));
        assert!(traj.outputs.theta0.iter().chain(&traj.outputs.theta_l).all(|x| *x == 0.0));
        let r = energy_residual(&traj, &baseline_coeffs(&g), &LoadField::zeros(&g)).unwrap();
        assert!(r.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn manufactured_solution_converges_at_second_order() {
        let e1 = max_rel_error(16, 128);
        let e2 = max_rel_error(32, 256);
        assert!(e1 < 5e-2, "coarse error {e1}");
        assert!(e1 / e2 >= 3.5, "ratio {}", e1 / e2);
    }

    #[test]
    fn initial_state_is_at_rest() {
        let g = SpaceTimeGrid::new(1.0, 1.0, 8, 16).unwrap();
        let traj = solve_forward(&baseline_coeffs(&g), &manufactured_load(&g), &g).unwrap();
        assert!(traj.displacement(0).iter().chain(traj.velocity(0)).all(|x| *x == 0.0));
    }

    #[test]
    fn solution_is_linear_in_the_load() {
        let g = SpaceTimeGrid::new(1.0, 1.0, 8, 32).unwrap();
        let c = baseline_coeffs(&g);
        let f1 = LoadField::from_fn(&g, |x, t| (3.0 * x).sin() * t);
        let f2 = LoadField::from_fn(&g, |x, t| x * (1.0 - x) * (5.0 * t).cos());
        let comb = f1.scaled(2.0).add_scaled(-0.7, &f2).unwrap();
        let p = BeamProblem::new(&g, &c).unwrap();
        let (a, b, s) = (p.solve(&f1).unwrap(), p.solve(&f2).unwrap(), p.solve(&comb).unwrap());
        let scale = s.u.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        for i in 0..s.u.len() {
            assert!((2.0 * a.u[i] - 0.7 * b.u[i] - s.u[i]).abs() <= 1e-10 * scale);
        }
    }

    #[test]
    fn energy_identity_residual_shrinks_under_refinement() {
        let res = |ne, ns| {
            let g = SpaceTimeGrid::new(1.0, 1.0, ne, ns).unwrap();
            let c = baseline_coeffs(&g);
            let f = manufactured_load(&g);
            let traj = solve_forward(&c, &f, &g).unwrap();
            energy_residual(&traj, &c, &f).unwrap().into_iter().fold(0.0, f64::max)
        };
        let (r1, r2) = (res(16, 64), res(32, 128));
        assert!(r2 < r1, "{r1} -> {r2}");
        assert!(r2 < 1e-2);
    }

    #[test]
    fn energy_does_not_grow_after_the_load_stops() {
        let g = SpaceTimeGrid::new(1.0, 1.0, 16, 128).unwrap();
        let c = baseline_coeffs(&g);
        let f = LoadField::from_fn(&g, |x, t| if t <= 0.5 { (PI * x).sin() + 2.0 * x * x } else { 0.0 });
        let p = BeamProblem::new(&g, &c).unwrap();
        let traj = p.solve(&f).unwrap();
        let e = p.energy_balance(&traj, &f).unwrap().energy;
        let half = g.n_steps() / 2 + 1;
        for w in e[half..].windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12), "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn apriori_estimates_hold_for_a_smooth_load() {
        let g = SpaceTimeGrid::new(1.0, 1.0, 16, 64).unwrap();
        let c = baseline_coeffs(&g);
        let f = LoadField::from_fn(&g, |x, t| 3.0 * (2.0 * PI * x).sin() * (1.0 + t) + x);
        let traj = solve_forward(&c, &f, &g).unwrap();
        let k = compute_constants(&g, c.bounds(), 10.0, (0.0, 0.0), CtVariant::Literal).unwrap();
        let checks = check_apriori_estimates(&traj, &c, &f, &k, 0.05).unwrap();
        assert_eq!(checks.len(), 10);
        for ch in &checks {
            assert!(ch.pass, "{ch:?}");
        }
        let zero = solve_forward(&c, &LoadField::zeros(&g), &g).unwrap();
        let checks = check_apriori_estimates(&zero, &c, &LoadField::zeros(&g), &k, 0.05).unwrap();
        assert!(checks.iter().all(|ch| ch.pass && ch.lhs == 0.0 && ch.rhs == 0.0));
    }
}
