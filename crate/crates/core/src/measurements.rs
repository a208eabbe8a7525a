//! Synthetic end-slope data: scenario loads, Gaussian noise and smoothing
//! of raw series to `H¹`.
//!
//! All scenario families here are constructions of this crate; the model
//! only requires `F` in `L²`.

use std::f64::consts::PI;
use std::path::PathBuf;

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::banded::SymBandMatrix;
use crate::error::{Error, Result};
use crate::forward::BeamProblem;
use crate::model::{time_norm_sq, Coefficient, CoefficientSet, LoadField, MeasurementSeries, SpaceTimeGrid};

/// Zero-mean Gaussian noise at a relative level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub delta_rel: f64,
    pub seed: u64,
}

/// Noisy series with the realized absolute noise norms.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyMeasurements {
    pub series: MeasurementSeries,
    pub spec: NoiseSpec,
    /// `||noise||` per channel `(x = 0, x = l)`.
    pub realized: (f64, f64),
}

impl NoisyMeasurements {
    /// Combined level `sqrt(delta_0² + delta_l²)`, the scale of `sqrt(2 J)`.
    pub fn delta(&self) -> f64 {
        self.realized.0.hypot(self.realized.1)
    }

    /// Sidecar `key=value` pairs.
    pub fn metadata(&self) -> Vec<(String, String)> {
        vec![
            ("seed".into(), self.spec.seed.to_string()),
            ("delta_rel".into(), format!("{:.16e}", self.spec.delta_rel)),
            ("realized_delta".into(), format!("{:.16e}", self.delta())),
            ("realized_delta_theta0".into(), format!("{:.16e}", self.realized.0)),
            ("realized_delta_thetaL".into(), format!("{:.16e}", self.realized.1)),
        ]
    }
}

fn noisy_channel(grid: &SpaceTimeGrid, clean: &[f64], delta_rel: f64, rng: &mut ChaCha8Rng) -> (Vec<f64>, f64) {
    let e: Vec<f64> = (0..clean.len()).map(|_| StandardNormal.sample(rng)).collect();
    let target = delta_rel * time_norm_sq(grid, clean).sqrt();
    let en = time_norm_sq(grid, &e).sqrt();
    if target == 0.0 || en == 0.0 {
        return (clean.to_vec(), 0.0);
    }
    let s = target / en;
    (clean.iter().zip(&e).map(|(c, x)| c + s * x).collect(), target)
}

/// Adds noise scaled so each channel's perturbation norm is exactly
/// `delta_rel` times the channel norm. The result is tagged raw.
pub fn add_noise(series: &MeasurementSeries, spec: NoiseSpec, grid: &SpaceTimeGrid) -> Result<NoisyMeasurements> {
    series.check_grid(grid)?;
    if !(spec.delta_rel >= 0.0 && spec.delta_rel.is_finite()) {
        return Err(Error::Domain(format!("noise level must be >= 0, got {}", spec.delta_rel)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (a, d0) = noisy_channel(grid, &series.theta0, spec.delta_rel, &mut rng);
    let (b, dl) = noisy_channel(grid, &series.theta_l, spec.delta_rel, &mut rng);
    Ok(NoisyMeasurements {
        series: MeasurementSeries::raw(grid, a, b)?,
        spec,
        realized: (d0, dl),
    })
}

/// Second-order finite-difference derivative of a uniformly sampled series.
pub fn series_derivative(dt: f64, s: &[f64]) -> Vec<f64> {
    let n = s.len();
    if n < 3 {
        return vec![0.0; n];
    }
    let mut d = vec![0.0; n];
    d[0] = (-3.0 * s[0] + 4.0 * s[1] - s[2]) / (2.0 * dt);
    for i in 1..n - 1 {
        d[i] = (s[i + 1] - s[i - 1]) / (2.0 * dt);
    }
    d[n - 1] = (3.0 * s[n - 1] - 4.0 * s[n - 2] + s[n - 3]) / (2.0 * dt);
    d
}

/// Penalized fit `(I + lambda D2^T D2) s = y` with `D2` the second-difference operator.
pub fn whittaker(y: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Domain(format!("smoothing parameter must be >= 0, got {lambda}")));
    }
    let n = y.len();
    if n < 3 || lambda == 0.0 {
        return Ok(y.to_vec());
    }
    let mut a = SymBandMatrix::zeros(n, 2);
    for i in 0..n {
        a.add(i, i, 1.0);
    }
    let c = [1.0, -2.0, 1.0];
    for k in 0..n - 2 {
        for p in 0..3 {
            for q in 0..=p {
                a.add(k + p, k + q, lambda * c[p] * c[q]);
            }
        }
    }
    Ok(a.cholesky()?.solve(y))
}

/// Sum of squared second differences.
pub fn second_difference_seminorm_sq(s: &[f64]) -> f64 {
    s.windows(3).map(|w| (w[0] - 2.0 * w[1] + w[2]).powi(2)).sum()
}

/// Smooths both channels with parameter `lambda` and attaches finite-difference
/// derivatives; the result is tagged `H1Smoothed`.
pub fn smooth_to_h1(series: &MeasurementSeries, lambda: f64, grid: &SpaceTimeGrid) -> Result<MeasurementSeries> {
    smooth_channels(series, (lambda, lambda), grid)
}

fn smooth_channels(series: &MeasurementSeries, lambda: (f64, f64), grid: &SpaceTimeGrid) -> Result<MeasurementSeries> {
    series.check_grid(grid)?;
    let a = whittaker(&series.theta0, lambda.0)?;
    let b = whittaker(&series.theta_l, lambda.1)?;
    let (da, db) = (series_derivative(grid.dt(), &a), series_derivative(grid.dt(), &b));
    MeasurementSeries::smoothed(grid, a, b, da, db)
}

fn discrepancy_lambda(grid: &SpaceTimeGrid, y: &[f64], delta: f64) -> Result<f64> {
    if delta <= 0.0 {
        return Ok(0.0);
    }
    let misfit = |lam: f64| -> Result<f64> {
        let s = whittaker(y, lam)?;
        let r: Vec<f64> = s.iter().zip(y).map(|(a, b)| a - b).collect();
        Ok(time_norm_sq(grid, &r).sqrt())
    };
    let (mut lo, mut hi) = (-12.0f64, 8.0f64);
    if misfit(10f64.powf(hi))? <= delta {
        return Ok(10f64.powf(hi));
    }
    if misfit(10f64.powf(lo))? >= delta {
        return Ok(10f64.powf(lo));
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if misfit(10f64.powf(mid))? < delta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(10f64.powf(0.5 * (lo + hi)))
}

/// Smoothing with the parameter of each channel chosen so the fit residual
/// matches that channel's noise norm. Returns the series and `(lambda_0, lambda_l)`.
pub fn smooth_by_discrepancy(noisy: &NoisyMeasurements, grid: &SpaceTimeGrid) -> Result<(MeasurementSeries, (f64, f64))> {
    let s = &noisy.series;
    let l0 = discrepancy_lambda(grid, &s.theta0, noisy.realized.0)?;
    let ll = discrepancy_lambda(grid, &s.theta_l, noisy.realized.1)?;
    Ok((smooth_channels(s, (l0, ll), grid)?, (l0, ll)))
}

/// Load families for synthetic experiments.
#[derive(Debug, Clone, PartialEq)]
pub enum ScenarioKind {
    /// `A exp(-(x - x0 - v t)² / (2 sigma²))`. With `clamp` the centre stops at the ends.
    MovingGaussian {
        amplitude: f64,
        speed: f64,
        width: f64,
        start: f64,
        clamp: bool,
    },
    /// `sum a sin(kx pi x / l) sin(kt pi t / T)` over `(kx, kt, a)`.
    Modal { terms: Vec<(usize, usize, f64)> },
    /// Load read from an `x,t,value` file.
    Csv { path: PathBuf },
    /// Load whose exact response is `u = t² sin(pi x / l)` (homogeneous coefficients only).
    Manufactured,
    Zero,
}

impl ScenarioKind {
    pub fn name(&self) -> &'static str {
        match self {
            ScenarioKind::MovingGaussian { .. } => "moving_gaussian",
            ScenarioKind::Modal { .. } => "modal",
            ScenarioKind::Csv { .. } => "custom_csv",
            ScenarioKind::Manufactured => "manufactured",
            ScenarioKind::Zero => "zero",
        }
    }
}

/// A load with its clean end-slope series.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub load: LoadField,
    pub measurements: MeasurementSeries,
    pub warnings: Vec<String>,
}

/// Builds the load of `kind` on `grid`, with warnings.
pub fn scenario_load(kind: &ScenarioKind, grid: &SpaceTimeGrid, coeffs: &CoefficientSet) -> Result<(LoadField, Vec<String>)> {
    let (l, t_end) = (grid.length(), grid.final_time());
    let mut warnings = Vec::new();
    let load = match kind {
        ScenarioKind::MovingGaussian {
            amplitude,
            speed,
            width,
            start,
            clamp,
        } => {
            if !(*width > 0.0) {
                return Err(Error::Domain(format!("vehicle width must be > 0, got {width}")));
            }
            let end = start + speed * t_end;
            if !(0.0..=l).contains(&end) || !(0.0..=l).contains(start) {
                if *clamp {
                    warnings.push(format!("vehicle path {start} -> {end} leaves [0, {l}]; position clamped"));
                } else {
                    warnings.push(format!("vehicle path {start} -> {end} leaves [0, {l}]; load truncated at the boundary"));
                }
            }
            let (a, v, s, x0, c) = (*amplitude, *speed, *width, *start, *clamp);
            LoadField::from_fn(grid, move |x, t| {
                let mut centre = x0 + v * t;
                if c {
                    centre = centre.clamp(0.0, l);
                }
                let z = (x - centre) / s;
                a * (-0.5 * z * z).exp()
            })
        }
        ScenarioKind::Modal { terms } => {
            let terms = terms.clone();
            LoadField::from_fn(grid, move |x, t| {
                terms
                    .iter()
                    .map(|&(kx, kt, a)| a * (kx as f64 * PI * x / l).sin() * (kt as f64 * PI * t / t_end).sin())
                    .sum()
            })
        }
        ScenarioKind::Csv { path } => crate::io::read_field(path, grid)?,
        ScenarioKind::Manufactured => {
            if !coeffs.is_homogeneous() {
                return Err(Error::Input("the manufactured load needs constant coefficients".into()));
            }
            let c = |k: Coefficient| coeffs.field(k)[0];
            let (rho, mu, ten, r, kappa) = (
                c(Coefficient::MassDensity),
                c(Coefficient::ViscousDamping),
                c(Coefficient::Tension),
                c(Coefficient::Rigidity),
                c(Coefficient::KelvinVoigt),
            );
            manufactured_load(grid, rho, mu, ten, r, kappa)
        }
        ScenarioKind::Zero => LoadField::zeros(grid),
    };
    for w in &warnings {
        warn!("{w}");
    }
    Ok((load, warnings))
}

/// Load for which `u = t² sin(beta x)`, `beta = pi / l`, solves the constant-coefficient beam.
pub fn manufactured_load(grid: &SpaceTimeGrid, rho: f64, mu: f64, tension: f64, r: f64, kappa: f64) -> LoadField {
    let b = PI / grid.length();
    let (b2, b4) = (b * b, b.powi(4));
    LoadField::from_fn(grid, move |x, t| {
        (2.0 * rho + 2.0 * mu * t + 2.0 * kappa * b4 * t + (tension * b2 + r * b4) * t * t) * (b * x).sin()
    })
}

/// Builds the load and its clean measurements.
pub fn generate_scenario(kind: &ScenarioKind, grid: &SpaceTimeGrid, coeffs: &CoefficientSet) -> Result<Scenario> {
    let (load, warnings) = scenario_load(kind, grid, coeffs)?;
    let traj = BeamProblem::new(grid, coeffs)?.solve(&load)?;
    Ok(Scenario {
        load,
        measurements: traj.outputs,
        warnings,
    })
}
