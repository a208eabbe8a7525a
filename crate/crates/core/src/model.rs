//! Physical model data: the space–time grid, the coefficient fields of the
//! damped beam, spatiotemporal loads and boundary-slope measurements.
//!
//! Everything here is immutable after construction. Space–time integrals use
//! the trapezoidal rule on the grid.

use std::fmt;

use crate::error::{check_len, Error, Result};

/// Uniform grid on `(0, length) x (0, final_time)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpaceTimeGrid {
    length: f64,
    final_time: f64,
    n_elements: usize,
    n_steps: usize,
}

impl SpaceTimeGrid {
    pub const MIN_ELEMENTS: usize = 4;
    pub const MIN_STEPS: usize = 4;

    pub fn new(length: f64, final_time: f64, n_elements: usize, n_steps: usize) -> Result<Self> {
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::Domain(format!("beam length must be > 0, got {length}")));
        }
        if !(final_time.is_finite() && final_time > 0.0) {
            return Err(Error::Domain(format!("final time must be > 0, got {final_time}")));
        }
        if n_elements < Self::MIN_ELEMENTS {
            return Err(Error::Domain(format!(
                "need at least {} elements, got {n_elements}",
                Self::MIN_ELEMENTS
            )));
        }
        if n_steps < Self::MIN_STEPS {
            return Err(Error::Domain(format!(
                "need at least {} time steps, got {n_steps}",
                Self::MIN_STEPS
            )));
        }
        Ok(Self {
            length,
            final_time,
            n_elements,
            n_steps,
        })
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn final_time(&self) -> f64 {
        self.final_time
    }

    pub fn n_elements(&self) -> usize {
        self.n_elements
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_nodes(&self) -> usize {
        self.n_elements + 1
    }

    pub fn n_times(&self) -> usize {
        self.n_steps + 1
    }

    /// Node spacing.
    pub fn h(&self) -> f64 {
        self.length / self.n_elements as f64
    }

    /// Time step.
    pub fn dt(&self) -> f64 {
        self.final_time / self.n_steps as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        // exact end points
        if i == self.n_elements {
            self.length
        } else {
            i as f64 * self.h()
        }
    }

    pub fn time(&self, n: usize) -> f64 {
        if n == self.n_steps {
            self.final_time
        } else {
            n as f64 * self.dt()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n_nodes()).map(|i| self.node(i)).collect()
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.n_times()).map(|n| self.time(n)).collect()
    }

    /// Trapezoidal weights over the node set.
    pub fn space_weights(&self) -> Vec<f64> {
        trapezoid_weights(self.n_nodes(), self.h())
    }

    /// Trapezoidal weights over the time instants.
    pub fn time_weights(&self) -> Vec<f64> {
        trapezoid_weights(self.n_times(), self.dt())
    }

    /// Same geometry with every cell split in two.
    pub fn refined(&self) -> Self {
        Self {
            n_elements: 2 * self.n_elements,
            n_steps: 2 * self.n_steps,
            ..*self
        }
    }

    /// Same geometry with a different resolution.
    pub fn with_resolution(&self, n_elements: usize, n_steps: usize) -> Result<Self> {
        Self::new(self.length, self.final_time, n_elements, n_steps)
    }
}

pub(crate) fn trapezoid_weights(n: usize, step: f64) -> Vec<f64> {
    let mut w = vec![step; n];
    if n > 0 {
        w[0] = 0.5 * step;
        w[n - 1] = 0.5 * step;
    }
    w
}

/// Trapezoidal `L²(0,T)` inner product of two time series on `grid`.
pub fn time_inner(grid: &SpaceTimeGrid, a: &[f64], b: &[f64]) -> f64 {
    let dt = grid.dt();
    let n = a.len().min(b.len());
    if n == 0 {
        return 0.0;
    }
    let interior: f64 = (1..n - 1).map(|i| a[i] * b[i]).sum();
    dt * (interior + 0.5 * (a[0] * b[0] + a[n - 1] * b[n - 1]))
}

/// Squared trapezoidal `L²(0,T)` norm of a time series.
pub fn time_norm_sq(grid: &SpaceTimeGrid, a: &[f64]) -> f64 {
    time_inner(grid, a, a)
}

/// Closed interval `[lo, hi]` used for coefficient bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    fn of(values: &[f64]) -> Self {
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self { lo, hi }
    }
}

/// Names of the five coefficient fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Coefficient {
    /// Mass per unit length, `rho_A`.
    MassDensity,
    /// External viscous damping, `mu`.
    ViscousDamping,
    /// Axial tension, `T_r`.
    Tension,
    /// Flexural rigidity, `r = EI`.
    Rigidity,
    /// Kelvin–Voigt (strain-rate) damping, `kappa`.
    KelvinVoigt,
}

impl Coefficient {
    pub const ALL: [Coefficient; 5] = [
        Coefficient::MassDensity,
        Coefficient::ViscousDamping,
        Coefficient::Tension,
        Coefficient::Rigidity,
        Coefficient::KelvinVoigt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Coefficient::MassDensity => "rho_a",
            Coefficient::ViscousDamping => "mu",
            Coefficient::Tension => "tension",
            Coefficient::Rigidity => "rigidity",
            Coefficient::KelvinVoigt => "kelvin_voigt",
        }
    }

    /// Whether the lower bound must be strictly positive (otherwise `>= 0`).
    fn strictly_positive(self) -> bool {
        matches!(
            self,
            Coefficient::MassDensity | Coefficient::Rigidity | Coefficient::KelvinVoigt
        )
    }
}

impl fmt::Display for Coefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Declared lower/upper bounds of every coefficient field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoefficientBounds {
    pub mass_density: Interval,
    pub viscous_damping: Interval,
    pub tension: Interval,
    pub rigidity: Interval,
    pub kelvin_voigt: Interval,
}

impl CoefficientBounds {
    /// Bounds given as `(rho_0, rho_1, mu_0, mu_1, T_r0, T_r1, r_0, r_1, kappa_0, kappa_1)`.
    pub fn from_tuple(b: (f64, f64, f64, f64, f64, f64, f64, f64, f64, f64)) -> Self {
        Self {
            mass_density: Interval::new(b.0, b.1),
            viscous_damping: Interval::new(b.2, b.3),
            tension: Interval::new(b.4, b.5),
            rigidity: Interval::new(b.6, b.7),
            kelvin_voigt: Interval::new(b.8, b.9),
        }
    }

    pub fn get(&self, c: Coefficient) -> Interval {
        match c {
            Coefficient::MassDensity => self.mass_density,
            Coefficient::ViscousDamping => self.viscous_damping,
            Coefficient::Tension => self.tension,
            Coefficient::Rigidity => self.rigidity,
            Coefficient::KelvinVoigt => self.kelvin_voigt,
        }
    }

    pub fn rho_0(&self) -> f64 {
        self.mass_density.lo
    }

    pub fn r_0(&self) -> f64 {
        self.rigidity.lo
    }

    pub fn kappa_0(&self) -> f64 {
        self.kelvin_voigt.lo
    }
}

/// The five coefficient fields, sampled at the grid nodes and interpolated
/// linearly inside elements, together with their declared bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSet {
    mass_density: Vec<f64>,
    viscous_damping: Vec<f64>,
    tension: Vec<f64>,
    rigidity: Vec<f64>,
    kelvin_voigt: Vec<f64>,
    bounds: CoefficientBounds,
}

impl CoefficientSet {
    /// Builds a set from node samples. Bounds default to the sampled extrema.
    pub fn from_samples(
        mass_density: Vec<f64>,
        viscous_damping: Vec<f64>,
        tension: Vec<f64>,
        rigidity: Vec<f64>,
        kelvin_voigt: Vec<f64>,
    ) -> Result<Self> {
        let n = mass_density.len();
        check_len("viscous damping samples", n, viscous_damping.len())?;
        check_len("tension samples", n, tension.len())?;
        check_len("rigidity samples", n, rigidity.len())?;
        check_len("Kelvin-Voigt samples", n, kelvin_voigt.len())?;
        if n < 2 {
            return Err(Error::Input("coefficient fields need at least two samples".into()));
        }
        let bounds = CoefficientBounds {
            mass_density: Interval::of(&mass_density),
            viscous_damping: Interval::of(&viscous_damping),
            tension: Interval::of(&tension),
            rigidity: Interval::of(&rigidity),
            kelvin_voigt: Interval::of(&kelvin_voigt),
        };
        Ok(Self {
            mass_density,
            viscous_damping,
            tension,
            rigidity,
            kelvin_voigt,
            bounds,
        })
    }

    /// Constant fields on the nodes of `grid`.
    pub fn constant(
        grid: &SpaceTimeGrid,
        rho_a: f64,
        mu: f64,
        tension: f64,
        rigidity: f64,
        kappa: f64,
    ) -> Self {
        let n = grid.n_nodes();
        Self::from_samples(
            vec![rho_a; n],
            vec![mu; n],
            vec![tension; n],
            vec![rigidity; n],
            vec![kappa; n],
        )
        .expect("equal-length constant fields")
    }

    /// Samples each field from a function of `x` on the nodes of `grid`.
    pub fn from_fn(grid: &SpaceTimeGrid, f: impl Fn(Coefficient, f64) -> f64) -> Self {
        let xs = grid.nodes();
        let sample = |c| xs.iter().map(|&x| f(c, x)).collect::<Vec<_>>();
        Self::from_samples(
            sample(Coefficient::MassDensity),
            sample(Coefficient::ViscousDamping),
            sample(Coefficient::Tension),
            sample(Coefficient::Rigidity),
            sample(Coefficient::KelvinVoigt),
        )
        .expect("equal-length sampled fields")
    }

    pub fn with_bounds(mut self, bounds: CoefficientBounds) -> Self {
        self.bounds = bounds;
        self
    }

    pub fn bounds(&self) -> &CoefficientBounds {
        &self.bounds
    }

    pub fn n_nodes(&self) -> usize {
        self.mass_density.len()
    }

    pub fn field(&self, c: Coefficient) -> &[f64] {
        match c {
            Coefficient::MassDensity => &self.mass_density,
            Coefficient::ViscousDamping => &self.viscous_damping,
            Coefficient::Tension => &self.tension,
            Coefficient::Rigidity => &self.rigidity,
            Coefficient::KelvinVoigt => &self.kelvin_voigt,
        }
    }

    /// Every field multiplied by `alpha`, bounds included.
    pub fn scaled(&self, alpha: f64) -> Self {
        let s = |v: &[f64]| v.iter().map(|x| alpha * x).collect::<Vec<_>>();
        let si = |i: Interval| Interval::new(alpha * i.lo, alpha * i.hi);
        Self {
            mass_density: s(&self.mass_density),
            viscous_damping: s(&self.viscous_damping),
            tension: s(&self.tension),
            rigidity: s(&self.rigidity),
            kelvin_voigt: s(&self.kelvin_voigt),
            bounds: CoefficientBounds {
                mass_density: si(self.bounds.mass_density),
                viscous_damping: si(self.bounds.viscous_damping),
                tension: si(self.bounds.tension),
                rigidity: si(self.bounds.rigidity),
                kelvin_voigt: si(self.bounds.kelvin_voigt),
            },
        }
    }

    /// True when every field is constant along the beam.
    pub fn is_homogeneous(&self) -> bool {
        Coefficient::ALL.iter().all(|&c| {
            let f = self.field(c);
            f.iter().all(|&v| v == f[0])
        })
    }

    /// True when every field is mirror-symmetric under `x -> length - x`.
    pub fn is_symmetric(&self) -> bool {
        Coefficient::ALL.iter().all(|&c| {
            let f = self.field(c);
            f.iter().zip(f.iter().rev()).all(|(a, b)| a == b)
        })
    }
}

/// Which side of an interval a sample violates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundSide {
    Lower,
    Upper,
}

/// A coefficient sample outside its declared interval.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeViolation {
    pub coefficient: Coefficient,
    pub node: usize,
    pub value: f64,
    pub side: BoundSide,
    pub bound: f64,
}

/// Outcome of [`validate_coefficients`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    /// Problems with the declared bounds themselves (sign or ordering).
    pub bound_errors: Vec<String>,
    pub violations: Vec<NodeViolation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.bound_errors.is_empty() && self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_valid() {
            return f.write_str("all coefficient bounds satisfied");
        }
        let mut parts: Vec<String> = self.bound_errors.clone();
        for v in self.violations.iter().take(8) {
            let rel = match v.side {
                BoundSide::Lower => "<",
                BoundSide::Upper => ">",
            };
            parts.push(format!(
                "{}[{}] = {} {} {}",
                v.coefficient, v.node, v.value, rel, v.bound
            ));
        }
        if self.violations.len() > 8 {
            parts.push(format!("... {} more", self.violations.len() - 8));
        }
        f.write_str(&parts.join("; "))
    }
}

/// Checks the admissibility conditions node by node:
/// `0 < rho_0 <= rho_A <= rho_1`, `0 <= mu_0 <= mu <= mu_1`,
/// `0 <= T_r0 <= T_r <= T_r1`, `0 < r_0 <= r <= r_1`, `0 < kappa_0 <= kappa <= kappa_1`.
pub fn validate_coefficients(coeffs: &CoefficientSet) -> Result<ValidationReport> {
    let n = coeffs.n_nodes();
    let mut report = ValidationReport::default();
    for c in Coefficient::ALL {
        let field = coeffs.field(c);
        check_len("coefficient samples", n, field.len())?;
        let b = coeffs.bounds.get(c);
        if c.strictly_positive() {
            if !(b.lo > 0.0) {
                report
                    .bound_errors
                    .push(format!("lower bound of {c} must be > 0, got {}", b.lo));
            }
        } else if !(b.lo >= 0.0) {
            report
                .bound_errors
                .push(format!("lower bound of {c} must be >= 0, got {}", b.lo));
        }
        if !(b.lo <= b.hi) {
            report
                .bound_errors
                .push(format!("bounds of {c} are not ordered: [{}, {}]", b.lo, b.hi));
        }
        for (node, &value) in field.iter().enumerate() {
            if !(value >= b.lo) {
                report.violations.push(NodeViolation {
                    coefficient: c,
                    node,
                    value,
                    side: BoundSide::Lower,
                    bound: b.lo,
                });
            } else if !(value <= b.hi) {
                report.violations.push(NodeViolation {
                    coefficient: c,
                    node,
                    value,
                    side: BoundSide::Upper,
                    bound: b.hi,
                });
            }
        }
    }
    Ok(report)
}

/// Spatiotemporal load `F(x, t)` sampled at grid nodes and time instants (N/m).
#[derive(Debug, Clone, PartialEq)]
pub struct LoadField {
    grid: SpaceTimeGrid,
    // time-major: values[n * n_nodes + i] = F(x_i, t_n)
    values: Vec<f64>,
}

impl LoadField {
    pub fn zeros(grid: &SpaceTimeGrid) -> Self {
        Self {
            grid: *grid,
            values: vec![0.0; grid.n_nodes() * grid.n_times()],
        }
    }

    pub fn from_fn(grid: &SpaceTimeGrid, f: impl Fn(f64, f64) -> f64) -> Self {
        let xs = grid.nodes();
        let mut values = Vec::with_capacity(grid.n_nodes() * grid.n_times());
        for n in 0..grid.n_times() {
            let t = grid.time(n);
            values.extend(xs.iter().map(|&x| f(x, t)));
        }
        Self {
            grid: *grid,
            values,
        }
    }

    /// Wraps time-major samples (`values[n * n_nodes + i]`).
    pub fn from_time_major(grid: &SpaceTimeGrid, values: Vec<f64>) -> Result<Self> {
        check_len("load samples", grid.n_nodes() * grid.n_times(), values.len())?;
        Ok(Self {
            grid: *grid,
            values,
        })
    }

    pub fn grid(&self) -> &SpaceTimeGrid {
        &self.grid
    }

    pub fn get(&self, node: usize, time: usize) -> f64 {
        self.values[time * self.grid.n_nodes() + node]
    }

    pub fn set(&mut self, node: usize, time: usize, value: f64) {
        let n = self.grid.n_nodes();
        self.values[time * n + node] = value;
    }

    /// Node samples at time instant `n`.
    pub fn at_time(&self, n: usize) -> &[f64] {
        let nn = self.grid.n_nodes();
        &self.values[n * nn..(n + 1) * nn]
    }

    pub fn as_time_major(&self) -> &[f64] {
        &self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Trapezoidal `L²(Omega_T)` inner product.
    pub fn inner(&self, other: &LoadField) -> Result<f64> {
        self.check_same_grid(other)?;
        let wx = self.grid.space_weights();
        let wt = self.grid.time_weights();
        let nn = self.grid.n_nodes();
        let mut total = 0.0;
        for (n, &w_t) in wt.iter().enumerate() {
            let a = &self.values[n * nn..(n + 1) * nn];
            let b = &other.values[n * nn..(n + 1) * nn];
            let row: f64 = a.iter().zip(b).zip(&wx).map(|((p, q), w)| p * q * w).sum();
            total += w_t * row;
        }
        Ok(total)
    }

    /// Squared trapezoidal `L²(Omega_T)` norm.
    pub fn norm_sq(&self) -> f64 {
        self.inner(self).expect("same grid")
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|v| alpha * v).collect(),
        }
    }

    /// `self + alpha * other`.
    pub fn add_scaled(&self, alpha: f64, other: &LoadField) -> Result<Self> {
        self.check_same_grid(other)?;
        Ok(Self {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + alpha * b)
                .collect(),
        })
    }

    pub fn sub(&self, other: &LoadField) -> Result<Self> {
        self.add_scaled(-1.0, other)
    }

    /// Membership in the admissible set `||F||² <= c_f`.
    pub fn is_admissible(&self, c_f: f64) -> bool {
        self.norm_sq() <= c_f
    }

    pub(crate) fn check_same_grid(&self, other: &LoadField) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::Input("load fields live on different grids".into()));
        }
        Ok(())
    }
}

/// Trapezoidal approximation of `||F||_{L²(Omega_T)}`.
pub fn l2_norm_spacetime(f: &LoadField) -> f64 {
    f.norm_sq().max(0.0).sqrt()
}

/// Radial projection onto `{F : ||F||² <= c_f}`.
pub fn project_admissible(f: &LoadField, c_f: f64) -> Result<LoadField> {
    if !(c_f > 0.0) {
        return Err(Error::Domain(format!("admissible radius C_F must be > 0, got {c_f}")));
    }
    let norm_sq = f.norm_sq();
    if norm_sq <= c_f {
        return Ok(f.clone());
    }
    Ok(f.scaled((c_f / norm_sq).sqrt()))
}

/// Regularity tag of a measurement series.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Smoothness {
    Raw,
    H1Smoothed,
}

impl fmt::Display for Smoothness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Smoothness::Raw => "raw",
            Smoothness::H1Smoothed => "h1-smoothed",
        })
    }
}

/// End-slope series `theta_0(t) = u_x(0,t)`, `theta_l(t) = u_x(l,t)` (rad).
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSeries {
    pub theta0: Vec<f64>,
    pub theta_l: Vec<f64>,
    smoothness: Smoothness,
    derivative: Option<(Vec<f64>, Vec<f64>)>,
}

impl MeasurementSeries {
    pub fn raw(grid: &SpaceTimeGrid, theta0: Vec<f64>, theta_l: Vec<f64>) -> Result<Self> {
        check_len("theta_0 series", grid.n_times(), theta0.len())?;
        check_len("theta_l series", grid.n_times(), theta_l.len())?;
        Ok(Self {
            theta0,
            theta_l,
            smoothness: Smoothness::Raw,
            derivative: None,
        })
    }

    pub fn smoothed(
        grid: &SpaceTimeGrid,
        theta0: Vec<f64>,
        theta_l: Vec<f64>,
        dtheta0: Vec<f64>,
        dtheta_l: Vec<f64>,
    ) -> Result<Self> {
        let n = grid.n_times();
        check_len("theta_0 series", n, theta0.len())?;
        check_len("theta_l series", n, theta_l.len())?;
        check_len("theta_0 derivative series", n, dtheta0.len())?;
        check_len("theta_l derivative series", n, dtheta_l.len())?;
        if !dtheta0.iter().chain(&dtheta_l).all(|v| v.is_finite()) {
            return Err(Error::Input("derivative series must be finite".into()));
        }
        Ok(Self {
            theta0,
            theta_l,
            smoothness: Smoothness::H1Smoothed,
            derivative: Some((dtheta0, dtheta_l)),
        })
    }

    /// Identically zero, smooth series.
    pub fn zeros(grid: &SpaceTimeGrid) -> Self {
        let z = vec![0.0; grid.n_times()];
        Self::smoothed(grid, z.clone(), z.clone(), z.clone(), z).expect("matching lengths")
    }

    pub fn smoothness(&self) -> Smoothness {
        self.smoothness
    }

    pub fn len(&self) -> usize {
        self.theta0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta0.is_empty()
    }

    /// `(theta_0', theta_l')` when the series has been smoothed.
    pub fn derivatives(&self) -> Option<(&[f64], &[f64])> {
        self.derivative
            .as_ref()
            .map(|(a, b)| (a.as_slice(), b.as_slice()))
    }

    pub fn check_grid(&self, grid: &SpaceTimeGrid) -> Result<()> {
        check_len("measurement series", grid.n_times(), self.theta0.len())?;
        check_len("measurement series", grid.n_times(), self.theta_l.len())
    }

    pub fn is_finite(&self) -> bool {
        self.theta0.iter().chain(&self.theta_l).all(|v| v.is_finite())
    }
}
