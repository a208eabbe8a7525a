//! Backward (adjoint) problem with moment data at the beam ends.
//!
//! The final-value problem is reversed in time (`tau = T - t`). In `tau` both
//! damping terms keep their dissipative sign, so the reversed system reuses
//! the forward matrices unchanged and is driven through the end rotations.

use crate::bounds::{ConstantSet, InequalityCheck};
use crate::discretization::{DofMap, LoadOperator};
use crate::error::{check_len, Error, Result};
use crate::forward::{field_norms, BeamProblem};
use crate::model::{time_norm_sq, CoefficientSet, LoadField, SpaceTimeGrid};

/// Switches for the adjoint solve.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AdjointOptions {
    /// Negates the boundary forcing. Only useful as a negative control for
    /// the duality test.
    pub flip_boundary_sign: bool,
}

/// Solution `phi(x, t)` of the backward problem in original time.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointField {
    grid: SpaceTimeGrid,
    dofs: DofMap,
    // time-major in t
    phi: Vec<f64>,
    phi_t: Vec<f64>,
    p: Vec<f64>,
    q: Vec<f64>,
    input_rates: Option<(Vec<f64>, Vec<f64>)>,
}

impl AdjointField {
    pub fn grid(&self) -> &SpaceTimeGrid {
        &self.grid
    }

    pub fn dofs(&self) -> DofMap {
        self.dofs
    }

    /// Reduced DOF vector of `phi` at time instant `n`.
    pub fn phi(&self, n: usize) -> &[f64] {
        let nd = self.dofs.n_reduced();
        &self.phi[n * nd..(n + 1) * nd]
    }

    /// `phi_t` at time instant `n`.
    pub fn phi_rate(&self, n: usize) -> &[f64] {
        let nd = self.dofs.n_reduced();
        &self.phi_t[n * nd..(n + 1) * nd]
    }

    /// Moment data at `x = 0`.
    pub fn p(&self) -> &[f64] {
        &self.p
    }

    /// Moment data at `x = l`.
    pub fn q(&self) -> &[f64] {
        &self.q
    }

    /// Attaches `p'` and `q'`, needed by [`check_adjoint_estimates`].
    pub fn with_input_rates(mut self, dp: Vec<f64>, dq: Vec<f64>) -> Result<Self> {
        check_len("p' series", self.grid.n_times(), dp.len())?;
        check_len("q' series", self.grid.n_times(), dq.len())?;
        if !dp.iter().chain(&dq).all(|v| v.is_finite()) {
            return Err(Error::Input("moment-data derivatives must be finite".into()));
        }
        self.input_rates = Some((dp, dq));
        Ok(self)
    }

    pub fn input_rates(&self) -> Option<(&[f64], &[f64])> {
        self.input_rates.as_ref().map(|(a, b)| (a.as_slice(), b.as_slice()))
    }

    /// Nodal deflections `phi(x_i, t_n)` on the load grid.
    pub fn nodal_field(&self) -> LoadField {
        let values = (0..self.grid.n_times())
            .flat_map(|n| self.dofs.nodal_deflections(self.phi(n)))
            .collect();
        LoadField::from_time_major(&self.grid, values).expect("grid-sized adjoint samples")
    }

    /// Representer of `d -> sum_n w_n <phi_h(t_n), d_h(t_n)>` in the trapezoidal
    /// load inner product: the exact pairing of `phi` with linearly interpolated
    /// loads, divided by the nodal weights. Agrees with [`Self::nodal_field`] to `O(h²)`.
    pub fn gradient_field(&self, load: &LoadOperator) -> LoadField {
        let wx = self.grid.space_weights();
        let values = (0..self.grid.n_times())
            .flat_map(|n| {
                load.transpose(self.phi(n))
                    .into_iter()
                    .zip(&wx)
                    .map(|(v, w)| v / w)
                    .collect::<Vec<_>>()
            })
            .collect();
        LoadField::from_time_major(&self.grid, values).expect("grid-sized adjoint samples")
    }
}

impl BeamProblem {
    pub fn solve_adjoint(&self, p: &[f64], q: &[f64]) -> Result<AdjointField> {
        self.solve_adjoint_with(p, q, AdjointOptions::default())
    }

    pub fn solve_adjoint_with(&self, p: &[f64], q: &[f64], opts: AdjointOptions) -> Result<AdjointField> {
        let grid = *self.grid();
        check_len("moment series p", grid.n_times(), p.len())?;
        check_len("moment series q", grid.n_times(), q.len())?;
        if !p.iter().chain(q).all(|v| v.is_finite()) {
            return Err(Error::Input("moment data must be finite".into()));
        }
        let dofs = self.dofs();
        let (s, e) = (dofs.rotation_start(), dofs.rotation_end());
        let sign = if opts.flip_boundary_sign { -1.0 } else { 1.0 };
        let last = grid.n_steps();
        let (ut, vt) = self.integrate(|k, out| {
            out.iter_mut().for_each(|x| *x = 0.0);
            out[s] = sign * p[last - k];
            out[e] = sign * q[last - k];
        })?;
        let nd = dofs.n_reduced();
        let mut phi = Vec::with_capacity(ut.len());
        let mut phi_t = Vec::with_capacity(vt.len());
        for n in 0..grid.n_times() {
            let k = last - n;
            phi.extend_from_slice(&ut[k * nd..(k + 1) * nd]);
            phi_t.extend(vt[k * nd..(k + 1) * nd].iter().map(|x| -x));
        }
        Ok(AdjointField {
            grid,
            dofs,
            phi,
            phi_t,
            p: p.to_vec(),
            q: q.to_vec(),
            input_rates: None,
        })
    }
}

/// Solves the backward problem with moment data `p` at `x = 0` and `q` at `x = l`.
pub fn solve_adjoint(coeffs: &CoefficientSet, p: &[f64], q: &[f64], grid: &SpaceTimeGrid) -> Result<AdjointField> {
    BeamProblem::new(grid, coeffs)?.solve_adjoint(p, q)
}

/// Checks the six energy estimates of the backward solution against the
/// bound `C_0² ||Q'||²`, with `||Q'||² = ||p'||² + ||q'||²`.
pub fn check_adjoint_estimates(
    field: &AdjointField,
    coeffs: &CoefficientSet,
    constants: &ConstantSet,
    slack: f64,
) -> Result<Vec<InequalityCheck>> {
    let (dp, dq) = field.input_rates().ok_or_else(|| {
        Error::Precondition("adjoint estimates need the derivatives of the moment data".into())
    })?;
    let grid = field.grid();
    let q_rate_sq = time_norm_sq(grid, dp) + time_norm_sq(grid, dq);
    adjoint_checks(field, coeffs, constants, q_rate_sq, "adjoint", slack)
}

/// Same six norms as [`check_adjoint_estimates`], bounded by
/// `C_0² * data_sq` with the given prefix.
pub(crate) fn adjoint_checks(
    field: &AdjointField,
    coeffs: &CoefficientSet,
    constants: &ConstantSet,
    data_sq: f64,
    prefix: &str,
    slack: f64,
) -> Result<Vec<InequalityCheck>> {
    let grid = field.grid();
    check_len("coefficient samples vs grid nodes", grid.n_nodes(), coeffs.n_nodes())?;
    let b = coeffs.bounds();
    let (rho0, r0, kappa0) = (b.rho_0(), b.r_0(), b.kappa_0());
    let norms = crate::discretization::NormMatrices::new(grid);
    let n = field_norms(grid, &norms, |k| field.phi(k), |k| field.phi_rate(k));
    let et = grid.final_time().exp();
    let c0 = constants.c0_sq * data_sq;
    let mk = |name: &str, lhs, rhs| InequalityCheck::new(&format!("{prefix}.{name}"), lhs, rhs, slack);
    Ok(vec![
        mk("curvature_sup", n.curvature_sup, et * c0),
        mk("curvature_l2", n.curvature_l2, (et - 1.0) * c0),
        mk("rate_sup", n.rate_sup, et * r0 / (2.0 * rho0) * c0),
        mk("rate_l2", n.rate_l2, (et - 1.0) * r0 / (2.0 * rho0) * c0),
        mk("curvature_rate_sup", n.curvature_rate_sup, et * r0 / (2.0 * kappa0) * c0),
        mk("curvature_rate_l2", n.curvature_rate_l2, (et - 1.0) * r0 / (2.0 * kappa0) * c0),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::{compute_constants, CtVariant};
    use std::f64::consts::PI;

    fn setup(ne: usize, ns: usize) -> (SpaceTimeGrid, BeamProblem) {
        let g = SpaceTimeGrid::new(1.0, 1.0, ne, ns).unwrap();
        let c = CoefficientSet::constant(&g, 1.0, 0.1, 0.2, 1.0, 0.05);
        let p = BeamProblem::new(&g, &c).unwrap();
        (g, p)
    }

    #[test]
    fn zero_data_gives_zero_field() {
        let (g, prob) = setup(8, 16);
        let z = vec![0.0; g.n_times()];
        let a = prob.solve_adjoint(&z, &z).unwrap();
        assert!(a.phi.iter().chain(&a.phi_t).all(|x| *x == 0.0));
    }

    #[test]
    fn final_state_is_exactly_zero() {
        let (g, prob) = setup(8, 16);
        let p: Vec<f64> = g.times().iter().map(|t| (3.0 * t).sin() + 0.5).collect();
        let q: Vec<f64> = g.times().iter().map(|t| t * t).collect();
        let a = prob.solve_adjoint(&p, &q).unwrap();
        let last = g.n_steps();
        assert!(a.phi(last).iter().chain(a.phi_rate(last)).all(|x| *x == 0.0));
        assert!(a.phi(0).iter().any(|x| *x != 0.0));
    }

    #[test]
    fn linear_in_the_moment_data() {
        let (g, prob) = setup(8, 32);
        let p1: Vec<f64> = g.times().iter().map(|t| (2.0 * t).sin()).collect();
        let q1: Vec<f64> = g.times().iter().map(|t| t.cos()).collect();
        let p2: Vec<f64> = g.times().iter().map(|t| t * t).collect();
        let q2: Vec<f64> = g.times().iter().map(|t| 1.0 - t).collect();
        let comb = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| 3.0 * x - 2.0 * y).collect::<Vec<_>>();
        let a = prob.solve_adjoint(&p1, &q1).unwrap();
        let b = prob.solve_adjoint(&p2, &q2).unwrap();
        let s = prob.solve_adjoint(&comb(&p1, &p2), &comb(&q1, &q2)).unwrap();
        let scale = s.phi.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        for i in 0..s.phi.len() {
            assert!((3.0 * a.phi[i] - 2.0 * b.phi[i] - s.phi[i]).abs() <= 1e-10 * scale);
        }
    }

    #[test]
    fn non_finite_data_is_rejected() {
        let (g, prob) = setup(8, 16);
        let mut p = vec![0.0; g.n_times()];
        p[3] = f64::NAN;
        assert!(matches!(prob.solve_adjoint(&p, &p), Err(Error::Input(_))));
        assert!(matches!(prob.solve_adjoint(&p[1..], &p), Err(Error::Dimension { .. })));
    }

    #[test]
    fn estimates_need_derivatives_and_hold_for_smooth_data() {
        let (g, prob) = setup(16, 64);
        let c = prob.coeffs().clone();
        let k = compute_constants(&g, c.bounds(), 1.0, (0.0, 0.0), CtVariant::Literal).unwrap();
        let p: Vec<f64> = g.times().iter().map(|t| (PI * t).sin() * 0.3).collect();
        let q: Vec<f64> = g.times().iter().map(|t| t * t * 0.2).collect();
        let a = prob.solve_adjoint(&p, &q).unwrap();
        assert!(matches!(check_adjoint_estimates(&a, &c, &k, 0.05), Err(Error::Precondition(_))));
        let dp = g.times().iter().map(|t| 0.3 * PI * (PI * t).cos()).collect();
        let dq = g.times().iter().map(|t| 0.4 * t).collect();
        let a = a.with_input_rates(dp, dq).unwrap();
        let checks = check_adjoint_estimates(&a, &c, &k, 0.05).unwrap();
        assert_eq!(checks.len(), 6);
        assert!(checks.iter().all(|ch| ch.pass), "{checks:?}");

        let z = vec![0.0; g.n_times()];
        let a = prob.solve_adjoint(&z, &z).unwrap().with_input_rates(z.clone(), z).unwrap();
        assert!(check_adjoint_estimates(&a, &c, &k, 0.05).unwrap().iter().all(|ch| ch.pass));
    }
}
