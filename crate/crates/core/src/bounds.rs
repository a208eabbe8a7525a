//! Closed-form stability constants and the randomized inequality harness.
//!
//! Constants are computed from the declared coefficient bounds, never from
//! sampled field minima.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::adjoint::{adjoint_checks, check_adjoint_estimates, AdjointOptions};
use crate::discretization::NormMatrices;
use crate::error::{Error, Result};
use crate::forward::{check_apriori_estimates, BeamProblem};
use crate::model::{
    time_norm_sq, Coefficient, CoefficientBounds, CoefficientSet, LoadField, MeasurementSeries,
    SpaceTimeGrid,
};
use crate::objective::{directional_derivative_check, duality_residual, Objective};

/// How the time constant of the adjoint estimate is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CtVariant {
    /// `max(2/T, 1 + T)`, the expression as printed.
    #[default]
    Literal,
    /// `max(2/T, 1 + 2T/3)`, the coefficients that appear in the derivation.
    Corrected,
}

impl CtVariant {
    pub fn value(self, t: f64) -> f64 {
        match self {
            CtVariant::Literal => (2.0 / t).max(1.0 + 3.0 * t / 3.0),
            CtVariant::Corrected => (2.0 / t).max(1.0 + 2.0 * t / 3.0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CtVariant::Literal => "literal",
            CtVariant::Corrected => "corrected",
        }
    }
}

impl fmt::Display for CtVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CtVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "literal" => Ok(CtVariant::Literal),
            "corrected" => Ok(CtVariant::Corrected),
            other => Err(Error::Config(format!(
                "unknown ct variant `{other}` (expected literal or corrected)"
            ))),
        }
    }
}

/// Every stability constant, plus the `C_T`-dependent ones under the other variant.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantSet {
    /// `exp(T / rho_0)`
    pub ce2: f64,
    /// `(5 l rho_0 / 3)(C_e² - 1)`
    pub c1_sq: f64,
    /// `C_1 / sqrt(r_0)`
    pub c_l: f64,
    /// `[2 C_1 C_F / sqrt(r_0) + ||theta_0|| + ||theta_l||] C_L`
    pub c_j: f64,
    pub variant: CtVariant,
    pub c_t: f64,
    /// `20 l C_T / (3 r_0²)`
    pub c0_sq: f64,
    /// `sqrt((e^T - 1) / (2 kappa_0)) l² C_0 C_1`
    pub l_g: f64,
    /// `(C_T, C_0², L_G)` under the other variant.
    pub alternate: (f64, f64, f64),
    /// `(name, note)` per constant.
    pub provenance: Vec<(&'static str, String)>,
}

impl ConstantSet {
    pub fn c1(&self) -> f64 {
        self.c1_sq.sqrt()
    }

    /// `key = value` lines for summaries and manifests.
    pub fn to_text(&self) -> String {
        let other = match self.variant {
            CtVariant::Literal => CtVariant::Corrected,
            CtVariant::Corrected => CtVariant::Literal,
        };
        let mut s = String::new();
        let mut line = |k: &str, v: f64| s.push_str(&format!("{k} = {v:.10e}\n"));
        line("ce2", self.ce2);
        line("c1_sq", self.c1_sq);
        line("c_l", self.c_l);
        line("c_j", self.c_j);
        line("c_t", self.c_t);
        line("c0_sq", self.c0_sq);
        line("l_g", self.l_g);
        line(&format!("c_t.{other}"), self.alternate.0);
        line(&format!("c0_sq.{other}"), self.alternate.1);
        line(&format!("l_g.{other}"), self.alternate.2);
        s.push_str(&format!("ct_variant = {}\n", self.variant));
        for (k, note) in &self.provenance {
            s.push_str(&format!("note.{k} = {note}\n"));
        }
        s
    }
}

/// Evaluates the constants for geometry `grid`, declared `bounds`, admissible
/// radius `c_f` and measurement norms `(||theta_0||, ||theta_l||)`.
pub fn compute_constants(
    grid: &SpaceTimeGrid,
    bounds: &CoefficientBounds,
    c_f: f64,
    theta_norms: (f64, f64),
    variant: CtVariant,
) -> Result<ConstantSet> {
    let (l, t) = (grid.length(), grid.final_time());
    let (rho0, r0, kappa0) = (bounds.rho_0(), bounds.r_0(), bounds.kappa_0());
    for (name, v) in [("rho_0", rho0), ("r_0", r0), ("kappa_0", kappa0), ("C_F", c_f)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::Domain(format!("{name} must be positive, got {v}")));
        }
    }
    let ce2 = (t / rho0).exp();
    let c1_sq = 5.0 * l * rho0 / 3.0 * (ce2 - 1.0);
    let c1 = c1_sq.sqrt();
    let c_l = c1 / r0.sqrt();
    let c_j = (2.0 * c1 * c_f / r0.sqrt() + theta_norms.0 + theta_norms.1) * c_l;
    let tail = |v: CtVariant| {
        let c_t = v.value(t);
        let c0_sq = 20.0 * l * c_t / (3.0 * r0 * r0);
        let l_g = ((t.exp() - 1.0) / (2.0 * kappa0)).sqrt() * l * l * c0_sq.sqrt() * c1;
        (c_t, c0_sq, l_g)
    };
    let (c_t, c0_sq, l_g) = tail(variant);
    let alternate = tail(match variant {
        CtVariant::Literal => CtVariant::Corrected,
        CtVariant::Corrected => CtVariant::Literal,
    });
    let provenance = vec![
        ("ce2", "exp(T/rho_0)".to_string()),
        ("c1_sq", "(5 l rho_0 / 3)(ce2 - 1)".to_string()),
        ("c_l", "C_1 / sqrt(r_0)".to_string()),
        ("c_j", "[2 C_1 C_F / sqrt(r_0) + |theta_0| + |theta_l|] C_L, C_F used as printed".to_string()),
        (
            "c_t",
            match variant {
                CtVariant::Literal => "max(2/T, 1 + T) as printed".to_string(),
                CtVariant::Corrected => "max(2/T, 1 + 2T/3) from the derivation".to_string(),
            },
        ),
        ("c0_sq", "20 l C_T / (3 r_0^2)".to_string()),
        ("l_g", "sqrt((e^T - 1)/(2 kappa_0)) l^2 C_0 C_1".to_string()),
    ];
    Ok(ConstantSet {
        ce2,
        c1_sq,
        c_l,
        c_j,
        variant,
        c_t,
        c0_sq,
        l_g,
        alternate,
        provenance,
    })
}

/// Warnings for declared lower bounds more than 10x below the sampled minimum.
pub fn bound_slack_warnings(coeffs: &CoefficientSet) -> Vec<String> {
    let mut out = Vec::new();
    for c in [Coefficient::MassDensity, Coefficient::Rigidity, Coefficient::KelvinVoigt] {
        let lo = coeffs.bounds().get(c).lo;
        let min = coeffs.field(c).iter().copied().fold(f64::INFINITY, f64::min);
        if lo > 0.0 && min > 10.0 * lo {
            out.push(format!(
                "declared lower bound of {c} ({lo}) is {:.1}x below the sampled minimum ({min})",
                min / lo
            ));
        }
    }
    out
}

/// One inequality `lhs <= rhs`, accepted with relative slack.
#[derive(Debug, Clone, PartialEq)]
pub struct InequalityCheck {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

impl InequalityCheck {
    pub fn new(name: &str, lhs: f64, rhs: f64, slack: f64) -> Self {
        let pass = lhs.is_finite() && rhs.is_finite() && lhs <= rhs * (1.0 + slack);
        Self {
            name: name.to_string(),
            lhs,
            rhs,
            pass,
        }
    }

    /// A tolerance check (`lhs` is an error measure, `rhs` its tolerance).
    pub fn tolerance(name: &str, error: f64, tol: f64) -> Self {
        Self::new(name, error, tol, 0.0)
    }
}

/// `∫ v_x² <= (l²/2) ∫ v_xx²` for a finite-element function `v` with zero end deflections.
pub fn poincare_check(grid: &SpaceTimeGrid, norms: &NormMatrices, v: &[f64], slack: f64) -> InequalityCheck {
    let l = grid.length();
    InequalityCheck::new(
        "poincare",
        norms.slope.quad_form(v),
        0.5 * l * l * norms.curvature.quad_form(v),
        slack,
    )
}

/// Randomized admissible inputs for one pass of the harness.
#[derive(Debug, Clone)]
pub struct SuiteScenario {
    pub id: usize,
    pub coeffs: CoefficientSet,
    /// Base load `F_1`.
    pub load: LoadField,
    /// Second load `F_2` for the Lipschitz checks.
    pub other: LoadField,
    /// Load that generated the measurements.
    pub source: LoadField,
    /// Admissible radius, `10 max ||F||²` over the three loads (at least 1).
    pub c_f: f64,
    /// Direction for the finite-difference gradient check.
    pub direction: LoadField,
}

/// Harness switches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuiteOptions {
    pub slack: f64,
    pub variant: CtVariant,
    pub duality: bool,
    pub gradient: bool,
    pub adjoint: AdjointOptions,
    pub duality_tol: f64,
    pub gradient_tol: f64,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            slack: 0.05,
            variant: CtVariant::Literal,
            duality: true,
            gradient: true,
            adjoint: AdjointOptions::default(),
            duality_tol: 1e-3,
            gradient_tol: 5e-3,
        }
    }
}

/// Smooth random load: a few spatial modes with smooth temporal profiles,
/// plus one moving bump.
pub fn random_smooth_load(grid: &SpaceTimeGrid, rng: &mut impl Rng) -> LoadField {
    use std::f64::consts::PI;
    let (l, t_end) = (grid.length(), grid.final_time());
    let mut terms = Vec::new();
    for k in 1..=4 {
        let a: f64 = rng.random_range(-1.0..1.0) / k as f64;
        let w: f64 = rng.random_range(0.5..4.0);
        let ph: f64 = rng.random_range(0.0..2.0 * PI);
        terms.push((k as f64, a, w, ph));
    }
    let amp: f64 = rng.random_range(0.5..2.0);
    let x0: f64 = rng.random_range(0.0..0.3) * l;
    let v: f64 = rng.random_range(0.3..0.7) * l / t_end;
    let sigma: f64 = rng.random_range(0.05..0.15) * l;
    LoadField::from_fn(grid, move |x, t| {
        let modal: f64 = terms
            .iter()
            .map(|&(k, a, w, ph)| a * (k * PI * x / l).sin() * (w * t + ph).sin())
            .sum();
        let z = (x - x0 - v * t) / sigma;
        modal + amp * (-0.5 * z * z).exp()
    })
}

/// Smooth coefficient fields inside the baseline intervals; declared bounds
/// are the sampled extrema.
pub fn random_coefficients(grid: &SpaceTimeGrid, rng: &mut impl Rng) -> CoefficientSet {
    use std::f64::consts::PI;
    let mut field = |base: f64, rel: f64| {
        let a: f64 = rng.random_range(-rel..rel);
        let b: f64 = rng.random_range(-rel..rel) * 0.5;
        move |x: f64| base * (1.0 + a * (PI * x).cos() + b * (2.0 * PI * x).sin())
    };
    let rho = field(1.0, 0.3);
    let mu = field(0.1, 0.5);
    let ten = field(0.2, 0.5);
    let rig = field(1.0, 0.3);
    let kap = field(0.05, 0.3);
    let l = grid.length();
    CoefficientSet::from_fn(grid, |c, x| {
        let s = x / l;
        match c {
            Coefficient::MassDensity => rho(s),
            Coefficient::ViscousDamping => mu(s),
            Coefficient::Tension => ten(s),
            Coefficient::Rigidity => rig(s),
            Coefficient::KelvinVoigt => kap(s),
        }
    })
}

/// The default randomized suite: `count` scenarios from `seed`. Scenario 0
/// uses the constant baseline coefficients.
pub fn default_scenarios(grid: &SpaceTimeGrid, count: usize, seed: u64) -> Vec<SuiteScenario> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|id| {
            let coeffs = if id == 0 {
                CoefficientSet::constant(grid, 1.0, 0.1, 0.2, 1.0, 0.05)
            } else {
                random_coefficients(grid, &mut rng)
            };
            let load = random_smooth_load(grid, &mut rng);
            let other = random_smooth_load(grid, &mut rng);
            let source = random_smooth_load(grid, &mut rng);
            let direction = random_smooth_load(grid, &mut rng);
            let c_f = (10.0 * [&load, &other, &source].iter().map(|f| f.norm_sq()).fold(0.0, f64::max)).max(1.0);
            SuiteScenario {
                id,
                coeffs,
                load,
                other,
                source,
                c_f,
                direction,
            }
        })
        .collect()
}

/// Every check of one scenario, in a fixed order.
pub fn run_scenario(s: &SuiteScenario, opts: &SuiteOptions) -> Result<Vec<InequalityCheck>> {
    let problem = BeamProblem::new(s.load.grid(), &s.coeffs)?;
    let grid = *problem.grid();
    let slack = opts.slack;
    let meas: MeasurementSeries = problem.solve(&s.source)?.outputs;
    let theta_norms = (time_norm_sq(&grid, &meas.theta0).sqrt(), time_norm_sq(&grid, &meas.theta_l).sqrt());
    let k = compute_constants(&grid, s.coeffs.bounds(), s.c_f, theta_norms, opts.variant)?;
    let mut out = Vec::new();

    let t1 = problem.solve(&s.load)?;
    let t2 = problem.solve(&s.other)?;
    out.extend(check_apriori_estimates(&t1, &s.coeffs, &s.load, &k, slack)?);

    // Poincaré at the instant of largest curvature, and in L²(0,T)
    let norms = problem.norms();
    let worst = (0..grid.n_times())
        .max_by(|&a, &b| {
            let ca = norms.curvature.quad_form(t1.displacement(a));
            let cb = norms.curvature.quad_form(t1.displacement(b));
            ca.total_cmp(&cb)
        })
        .unwrap_or(0);
    out.push(poincare_check(&grid, norms, t1.displacement(worst), slack));

    // input-output Lipschitz bounds
    let df = s.load.sub(&s.other)?;
    let dnorm = df.norm_sq().sqrt();
    let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>();
    let d0 = time_norm_sq(&grid, &diff(&t1.outputs.theta0, &t2.outputs.theta0)).sqrt();
    let dl = time_norm_sq(&grid, &diff(&t1.outputs.theta_l, &t2.outputs.theta_l)).sqrt();
    out.push(InequalityCheck::new("io_lipschitz.start", d0, k.c_l * dnorm, slack));
    out.push(InequalityCheck::new("io_lipschitz.end", dl, k.c_l * dnorm, slack));

    // misfit Lipschitz bound
    let obj = Objective::new(problem.clone(), meas.clone())?.with_adjoint_options(opts.adjoint);
    let e1 = obj.evaluate_trajectory(&t1);
    let e2 = obj.evaluate_trajectory(&t2);
    out.push(InequalityCheck::new("misfit_lipschitz", (e1.j - e2.j).abs(), k.c_j * dnorm, slack));

    // adjoint estimates with residual data
    let (_, adj1) = obj.evaluate_with_adjoint(&s.load)?;
    out.extend(check_adjoint_estimates(&adj1, &s.coeffs, &k, slack)?);

    // the same norms against the load/measurement-derivative aggregate
    let (md0, mdl) = meas.derivatives().expect("forward outputs carry rates");
    let theta_rate_sq = time_norm_sq(&grid, md0) + time_norm_sq(&grid, mdl);
    let b = s.coeffs.bounds();
    let aggregate = 2.0 * (2.0 * k.c1_sq / b.kappa_0() * s.load.norm_sq() + theta_rate_sq);
    out.extend(adjoint_checks(&adj1, &s.coeffs, &k, aggregate, "adjoint_data", slack)?);

    // gradient Lipschitz bound
    let (_, adj2) = obj.evaluate_with_adjoint(&s.other)?;
    let dphi = adj1.nodal_field().sub(&adj2.nodal_field())?;
    out.push(InequalityCheck::new("gradient_lipschitz", dphi.norm_sq().sqrt(), k.l_g * dnorm, slack));

    if opts.duality {
        let r = duality_residual(&problem, &df, &e1.p, &e1.q, opts.adjoint)?;
        out.push(InequalityCheck::tolerance("duality", r, opts.duality_tol));
    }
    if opts.gradient {
        let c = directional_derivative_check(&obj, &s.load, &s.direction)?;
        out.push(InequalityCheck::tolerance("gradient_fd", c.relative_error, opts.gradient_tol));
    }
    Ok(out)
}

/// One row of the harness report.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteEntry {
    pub scenario: usize,
    pub check: InequalityCheck,
}

/// Aggregated harness output, ordered by scenario then check.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SuiteReport {
    pub entries: Vec<SuiteEntry>,
    /// Scenarios that could not be solved, with the error text.
    pub failures: Vec<(usize, String)>,
}

impl SuiteReport {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty() && self.failures.is_empty()
    }

    pub fn violations(&self) -> Vec<&SuiteEntry> {
        self.entries.iter().filter(|e| !e.check.pass).collect()
    }

    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.entries.iter().all(|e| e.check.pass)
    }

    /// Human-readable summary with per-check pass counts and every violation.
    pub fn to_text(&self) -> String {
        let mut names: Vec<&str> = Vec::new();
        for e in &self.entries {
            if !names.contains(&e.check.name.as_str()) {
                names.push(&e.check.name);
            }
        }
        let mut s = format!(
            "checks: {}  violations: {}  scenario errors: {}\n",
            self.entries.len(),
            self.violations().len(),
            self.failures.len()
        );
        for n in names {
            let rows: Vec<_> = self.entries.iter().filter(|e| e.check.name == n).collect();
            let ok = rows.iter().filter(|e| e.check.pass).count();
            let worst = rows
                .iter()
                .map(|e| if e.check.rhs > 0.0 { e.check.lhs / e.check.rhs } else { 0.0 })
                .fold(0.0, f64::max);
            s.push_str(&format!("  {n:<34} {ok:>3}/{:<3} max lhs/rhs = {worst:.3e}\n", rows.len()));
        }
        for v in self.violations() {
            s.push_str(&format!(
                "VIOLATION scenario={} check={} lhs={:.6e} rhs={:.6e}\n",
                v.scenario, v.check.name, v.check.lhs, v.check.rhs
            ));
        }
        for (id, msg) in &self.failures {
            s.push_str(&format!("ERROR scenario={id}: {msg}\n"));
        }
        s
    }

    /// `check,scenario,lhs,rhs,pass` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let io = |source| Error::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
        writeln!(w, "check,scenario,lhs,rhs,pass").map_err(io)?;
        for e in &self.entries {
            writeln!(
                w,
                "{},{},{:.16e},{:.16e},{}",
                e.check.name, e.scenario, e.check.lhs, e.check.rhs, e.check.pass
            )
            .map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

/// Runs every scenario (in parallel) and merges the checks in scenario order.
pub fn verify_inequality_suite(scenarios: &[SuiteScenario], opts: &SuiteOptions) -> SuiteReport {
    let results: Vec<_> = scenarios.par_iter().map(|s| (s.id, run_scenario(s, opts))).collect();
    let mut report = SuiteReport::default();
    for (id, r) in results {
        match r {
            Ok(checks) => report
                .entries
                .extend(checks.into_iter().map(|check| SuiteEntry { scenario: id, check })),
            Err(e) => {
                warn!("scenario {id} failed: {e}");
                report.failures.push((id, e.to_string()));
            }
        }
    }
    report
}
