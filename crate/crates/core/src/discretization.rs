//! Galerkin discretization of the damped beam with cubic Hermite elements.
//!
//! Each node carries a deflection and a rotation degree of freedom. The
//! deflections at `x = 0` and `x = l` are eliminated (simply supported ends);
//! the end rotations stay in the system and are exactly the measured slopes.
//! Zero bending moment at the ends is a natural condition of the weak form.
//!
//! Reduced DOF ordering: `theta_0, w_1, theta_1, ..., w_{n-1}, theta_{n-1}, theta_n`.

use std::io::Write;
use std::path::Path;

use crate::banded::SymBandMatrix;
use crate::error::{check_len, Error, Result};
use crate::model::{validate_coefficients, Coefficient, CoefficientSet, SpaceTimeGrid};

/// Gauss–Legendre rule with four points on `[0, 1]`; exact to degree 7.
const GAUSS4: [(f64, f64); 4] = [
    (0.069_431_844_202_973_71, 0.173_927_422_568_726_93),
    (0.330_009_478_207_571_87, 0.326_072_577_431_273_07),
    (0.669_990_521_792_428_1, 0.326_072_577_431_273_07),
    (0.930_568_155_797_026_3, 0.173_927_422_568_726_93),
];

/// Half-bandwidth of every assembled matrix.
pub const BANDWIDTH: usize = 3;

/// Hermite shape functions and their first two x-derivatives at local
/// coordinate `xi` on an element of length `h`.
pub(crate) fn hermite(xi: f64, h: f64) -> ([f64; 4], [f64; 4], [f64; 4]) {
    let xi2 = xi * xi;
    let xi3 = xi2 * xi;
    let n = [
        1.0 - 3.0 * xi2 + 2.0 * xi3,
        h * (xi - 2.0 * xi2 + xi3),
        3.0 * xi2 - 2.0 * xi3,
        h * (-xi2 + xi3),
    ];
    let d = [
        (-6.0 * xi + 6.0 * xi2) / h,
        1.0 - 4.0 * xi + 3.0 * xi2,
        (6.0 * xi - 6.0 * xi2) / h,
        -2.0 * xi + 3.0 * xi2,
    ];
    let dd = [
        (-6.0 + 12.0 * xi) / (h * h),
        (-4.0 + 6.0 * xi) / h,
        (6.0 - 12.0 * xi) / (h * h),
        (-2.0 + 6.0 * xi) / h,
    ];
    (n, d, dd)
}

/// Bilinear form kind assembled by [`assemble_form`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Form {
    /// `∫ c u v`
    Mass,
    /// `∫ c u' v'`
    Slope,
    /// `∫ c u'' v''`
    Curvature,
}

/// Degree-of-freedom bookkeeping for the simply supported beam.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DofMap {
    n_elements: usize,
}

impl DofMap {
    pub fn new(n_elements: usize) -> Self {
        Self { n_elements }
    }

    pub fn n_elements(&self) -> usize {
        self.n_elements
    }

    /// Unconstrained DOF count, `2 (n + 1)`.
    pub fn n_full(&self) -> usize {
        2 * (self.n_elements + 1)
    }

    /// Constrained DOF count, `2 n`.
    pub fn n_reduced(&self) -> usize {
        2 * self.n_elements
    }

    pub fn full_deflection(node: usize) -> usize {
        2 * node
    }

    pub fn full_rotation(node: usize) -> usize {
        2 * node + 1
    }

    /// Reduced index of an unconstrained DOF, `None` for the eliminated end deflections.
    pub fn reduce(&self, full: usize) -> Option<usize> {
        let last = self.n_full() - 2;
        if full == 0 || full == last {
            None
        } else if full < last {
            Some(full - 1)
        } else {
            Some(full - 2)
        }
    }

    /// Reduced index of the rotation at `x = 0`.
    pub fn rotation_start(&self) -> usize {
        0
    }

    /// Reduced index of the rotation at `x = l`.
    pub fn rotation_end(&self) -> usize {
        self.n_reduced() - 1
    }

    /// Nodal deflections (ends included, always zero) of a reduced DOF vector.
    pub fn nodal_deflections(&self, u: &[f64]) -> Vec<f64> {
        let mut w = vec![0.0; self.n_elements + 1];
        for (i, wi) in w.iter_mut().enumerate().take(self.n_elements).skip(1) {
            *wi = u[2 * i - 1];
        }
        w
    }
}

/// Assembles `form` weighted by the node-sampled, linearly interpolated
/// coefficient `c` over all `2 (n + 1)` DOFs.
pub fn assemble_form_full(grid: &SpaceTimeGrid, c: &[f64], form: Form) -> SymBandMatrix {
    let h = grid.h();
    let ndof = DofMap::new(grid.n_elements()).n_full();
    let mut a = SymBandMatrix::zeros(ndof, BANDWIDTH);
    for e in 0..grid.n_elements() {
        let mut ke = [[0.0; 4]; 4];
        for &(xi, w) in &GAUSS4 {
            let ce = c[e] * (1.0 - xi) + c[e + 1] * xi;
            let (n, d, dd) = hermite(xi, h);
            let basis = match form {
                Form::Mass => n,
                Form::Slope => d,
                Form::Curvature => dd,
            };
            for i in 0..4 {
                for j in 0..=i {
                    ke[i][j] += w * h * ce * basis[i] * basis[j];
                }
            }
        }
        let base = 2 * e;
        for i in 0..4 {
            for j in 0..=i {
                a.add(base + i, base + j, ke[i][j]);
            }
        }
    }
    a
}

/// Drops the eliminated end-deflection rows and columns.
pub fn reduce_matrix(full: &SymBandMatrix, dofs: &DofMap) -> SymBandMatrix {
    let mut out = SymBandMatrix::zeros(dofs.n_reduced(), full.bandwidth());
    for (i, j, v) in full.triplets() {
        if j > i {
            continue;
        }
        if let (Some(ri), Some(rj)) = (dofs.reduce(i), dofs.reduce(j)) {
            out.add(ri, rj, v);
        }
    }
    out
}

/// Constrained matrix of `form` weighted by `c`.
pub fn assemble_form(grid: &SpaceTimeGrid, c: &[f64], form: Form) -> SymBandMatrix {
    reduce_matrix(
        &assemble_form_full(grid, c, form),
        &DofMap::new(grid.n_elements()),
    )
}

/// Mass, damping and stiffness matrices of the damped beam over the constrained DOFs.
#[derive(Debug, Clone)]
pub struct SystemMatrices {
    pub dofs: DofMap,
    /// `∫ rho_A u v`
    pub mass: SymBandMatrix,
    /// `∫ mu u v`
    pub ext_damping: SymBandMatrix,
    /// `∫ T_r u' v'`
    pub tension: SymBandMatrix,
    /// `∫ r u'' v''`
    pub bending: SymBandMatrix,
    /// `∫ kappa u'' v''`
    pub kelvin_voigt: SymBandMatrix,
}

impl SystemMatrices {
    /// Total velocity-proportional matrix `C_ext + K_kappa`.
    pub fn damping(&self) -> SymBandMatrix {
        SymBandMatrix::linear_combination(&[(1.0, &self.ext_damping), (1.0, &self.kelvin_voigt)])
    }

    /// Total stiffness `K_T + K_r`.
    pub fn stiffness(&self) -> SymBandMatrix {
        SymBandMatrix::linear_combination(&[(1.0, &self.tension), (1.0, &self.bending)])
    }
}

/// Assembles every system matrix after checking the coefficient bounds.
pub fn assemble(grid: &SpaceTimeGrid, coeffs: &CoefficientSet) -> Result<SystemMatrices> {
    check_len("coefficient samples vs grid nodes", grid.n_nodes(), coeffs.n_nodes())?;
    let report = validate_coefficients(coeffs)?;
    if !report.is_valid() {
        return Err(Error::InvalidCoefficients(report.to_string()));
    }
    Ok(assemble_unchecked(grid, coeffs))
}

pub(crate) fn assemble_unchecked(grid: &SpaceTimeGrid, coeffs: &CoefficientSet) -> SystemMatrices {
    let f = |c, form| assemble_form(grid, coeffs.field(c), form);
    SystemMatrices {
        dofs: DofMap::new(grid.n_elements()),
        mass: f(Coefficient::MassDensity, Form::Mass),
        ext_damping: f(Coefficient::ViscousDamping, Form::Mass),
        tension: f(Coefficient::Tension, Form::Slope),
        bending: f(Coefficient::Rigidity, Form::Curvature),
        kelvin_voigt: f(Coefficient::KelvinVoigt, Form::Curvature),
    }
}

/// Unit-weight Gram matrices used to evaluate `L²` norms of `u`, `u_x` and `u_xx`
/// for finite-element fields exactly.
#[derive(Debug, Clone)]
pub struct NormMatrices {
    pub value: SymBandMatrix,
    pub slope: SymBandMatrix,
    pub curvature: SymBandMatrix,
}

impl NormMatrices {
    pub fn new(grid: &SpaceTimeGrid) -> Self {
        let ones = vec![1.0; grid.n_nodes()];
        Self {
            value: assemble_form(grid, &ones, Form::Mass),
            slope: assemble_form(grid, &ones, Form::Slope),
            curvature: assemble_form(grid, &ones, Form::Curvature),
        }
    }
}

/// Maps node samples of a load (interpolated linearly in `x`) to its
/// consistent DOF load vector `f_i = ∫ F N_i dx`.
#[derive(Debug, Clone)]
pub struct LoadOperator {
    dofs: DofMap,
    // ∫ N_a L_b over one element
    element: [[f64; 2]; 4],
}

impl LoadOperator {
    pub fn new(grid: &SpaceTimeGrid) -> Self {
        let h = grid.h();
        let mut element = [[0.0; 2]; 4];
        for &(xi, w) in &GAUSS4 {
            let (n, _, _) = hermite(xi, h);
            let lin = [1.0 - xi, xi];
            for a in 0..4 {
                for b in 0..2 {
                    element[a][b] += w * h * n[a] * lin[b];
                }
            }
        }
        Self {
            dofs: DofMap::new(grid.n_elements()),
            element,
        }
    }

    /// Writes the load vector of the node samples `nodal` into `out`.
    pub fn apply_into(&self, nodal: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let ne = nodal.len() - 1;
        for e in 0..ne {
            let fe = [nodal[e], nodal[e + 1]];
            for a in 0..4 {
                if let Some(r) = self.dofs.reduce(2 * e + a) {
                    out[r] += self.element[a][0] * fe[0] + self.element[a][1] * fe[1];
                }
            }
        }
    }

    pub fn apply(&self, nodal: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dofs.n_reduced()];
        self.apply_into(nodal, &mut out);
        out
    }

    /// Transpose: `out[i] = ∫ w_h L_i` for the DOF vector `dofs` of `w_h`.
    pub fn transpose(&self, dofs: &[f64]) -> Vec<f64> {
        let ne = self.dofs.n_elements();
        let mut out = vec![0.0; ne + 1];
        for e in 0..ne {
            for a in 0..4 {
                if let Some(r) = self.dofs.reduce(2 * e + a) {
                    out[e] += self.element[a][0] * dofs[r];
                    out[e + 1] += self.element[a][1] * dofs[r];
                }
            }
        }
        out
    }
}

/// Boundary forcing carried by the end rotations: `p(t)` at `x = 0` and `q(t)` at `x = l`.
///
/// Returns one constrained DOF vector per time instant. The sign convention
/// (both positive) makes the discrete duality test pass for a backward
/// problem whose moment data are `-m(0) = p`, `m(l) = q`.
pub fn natural_bc_load(p: &[f64], q: &[f64], grid: &SpaceTimeGrid) -> Result<Vec<Vec<f64>>> {
    check_len("moment series p", grid.n_times(), p.len())?;
    check_len("moment series q", grid.n_times(), q.len())?;
    let dofs = DofMap::new(grid.n_elements());
    Ok(p.iter()
        .zip(q)
        .map(|(&pn, &qn)| {
            let mut v = vec![0.0; dofs.n_reduced()];
            v[dofs.rotation_start()] = pn;
            v[dofs.rotation_end()] = qn;
            v
        })
        .collect())
}

/// Writes a matrix as `row,col,value` lines sorted row-major.
pub fn write_matrix_coo(path: &Path, m: &SymBandMatrix) -> Result<()> {
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(out, "row,col,value").map_err(io)?;
    for (i, j, v) in m.triplets() {
        writeln!(out, "{i},{j},{v:.17e}").map_err(io)?;
    }
    out.flush().map_err(io)
}
