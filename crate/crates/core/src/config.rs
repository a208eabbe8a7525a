//! Run configuration: line-oriented `key = value` text with `#` comments and
//! dotted section prefixes (`grid.n_elements = 64`).
//!
//! Relative paths are resolved against the directory of the configuration
//! file and must exist when the file is parsed. Unknown keys are rejected.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::bounds::CtVariant;
use crate::error::{Error, Result};
use crate::inversion::{GaussianGuess, InversionConfig, StepRule};
use crate::measurements::{NoiseSpec, ScenarioKind};
use crate::model::{Coefficient, CoefficientSet, Interval, SpaceTimeGrid};

/// Source of one coefficient field.
#[derive(Debug, Clone, PartialEq)]
pub enum CoefficientSource {
    Constant(f64),
    /// `x,value` samples at the grid nodes.
    Csv(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSpec {
    pub coefficient: Coefficient,
    pub source: CoefficientSource,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

/// What `invert` reconstructs.
#[derive(Debug, Clone, PartialEq)]
pub enum InversionMode {
    Field,
    Gaussian { start: f64, guess: Option<GaussianGuess> },
    Modal { modes: Vec<(usize, usize)> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct InversionSettings {
    pub mode: InversionMode,
    /// Landweber settings; `noise_level` is replaced by the realized noise
    /// unless `noise_level_override` is set.
    pub landweber: InversionConfig,
    pub noise_level_override: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifySettings {
    pub scenarios: usize,
    pub slack: f64,
    pub duality: bool,
    pub gradient: bool,
    /// Negative control: runs the suite with the adjoint boundary sign flipped.
    pub corrupt_adjoint_sign: bool,
}

/// Parsed configuration of one CLI run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub grid: SpaceTimeGrid,
    pub coefficients: Vec<CoefficientSpec>,
    pub scenario: ScenarioKind,
    pub measurements: Option<PathBuf>,
    pub noise_rel: f64,
    pub smoothing: Option<f64>,
    pub inversion: InversionSettings,
    pub verify: VerifySettings,
    pub ct_variant: CtVariant,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    /// SHA-256 of the normalized `key = value` pairs.
    pub hash: String,
}

const KEYS: &[&str] = &[
    "seed",
    "geometry.length",
    "geometry.final_time",
    "grid.n_elements",
    "grid.n_steps",
    "coefficients.rho_a",
    "coefficients.mu",
    "coefficients.tension",
    "coefficients.rigidity",
    "coefficients.kelvin_voigt",
    "coefficients.rho_a.lower",
    "coefficients.mu.lower",
    "coefficients.tension.lower",
    "coefficients.rigidity.lower",
    "coefficients.kelvin_voigt.lower",
    "coefficients.rho_a.upper",
    "coefficients.mu.upper",
    "coefficients.tension.upper",
    "coefficients.rigidity.upper",
    "coefficients.kelvin_voigt.upper",
    "scenario.kind",
    "scenario.amplitude",
    "scenario.speed",
    "scenario.width",
    "scenario.start",
    "scenario.clamp",
    "scenario.modes",
    "scenario.path",
    "measurements.path",
    "noise.delta_rel",
    "smoothing.lambda",
    "inversion.mode",
    "inversion.step",
    "inversion.omega",
    "inversion.max_iterations",
    "inversion.safety_factor",
    "inversion.c_f",
    "inversion.noise_level",
    "inversion.start",
    "inversion.guess_speed",
    "inversion.guess_width",
    "inversion.modes",
    "verify.scenarios",
    "verify.slack",
    "verify.duality",
    "verify.gradient",
    "verify.corrupt_adjoint_sign",
    "bounds.ct_variant",
    "output.dir",
];

/// Raw `key = value` pairs with typed accessors.
#[derive(Debug, Clone, Default)]
struct Table {
    values: BTreeMap<String, String>,
    base: PathBuf,
}

impl Table {
    fn parse(text: &str, base: PathBuf) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (k, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!("line {}: expected `key = value`, got `{line}`", k + 1)));
            };
            let key = key.trim().to_string();
            if !KEYS.contains(&key.as_str()) {
                return Err(Error::Config(format!("line {}: unknown key `{key}`", k + 1)));
            }
            if values.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key `{key}`", k + 1)));
            }
        }
        Ok(Self { values, base })
    }

    fn str(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.str(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| Error::Config(format!("`{key}`: cannot parse `{v}`: {e}")))
            })
            .transpose()
    }

    fn or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    fn path(&self, key: &str) -> Result<Option<PathBuf>> {
        let Some(v) = self.str(key) else { return Ok(None) };
        let p = Path::new(v);
        let p = if p.is_absolute() { p.to_path_buf() } else { self.base.join(p) };
        if !p.exists() {
            return Err(Error::Config(format!("`{key}`: file not found: {}", p.display())));
        }
        Ok(Some(p))
    }

    fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in &self.values {
            h.update(k.as_bytes());
            h.update(b"=");
            h.update(v.as_bytes());
            h.update(b"\n");
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn positive(key: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Config(format!("`{key}` must be > 0, got {v}")))
    }
}

fn parse_modes(key: &str, s: &str) -> Result<Vec<Vec<f64>>> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| {
            t.split(':')
                .map(|x| {
                    x.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Config(format!("`{key}`: bad term `{}`: {e}", t.trim())))
                })
                .collect()
        })
        .collect()
}

fn index(key: &str, v: f64) -> Result<usize> {
    if v >= 1.0 && v.fract() == 0.0 {
        Ok(v as usize)
    } else {
        Err(Error::Config(format!("`{key}`: mode index must be a positive integer, got {v}")))
    }
}

const BASELINE: [(Coefficient, f64); 5] = [
    (Coefficient::MassDensity, 1.0),
    (Coefficient::ViscousDamping, 0.1),
    (Coefficient::Tension, 0.2),
    (Coefficient::Rigidity, 1.0),
    (Coefficient::KelvinVoigt, 0.05),
];

impl RunConfig {
    /// Baseline run: unit beam, 64 elements, 512 steps, constant baseline coefficients.
    pub fn baseline() -> Self {
        Self::from_table(&Table::default()).expect("defaults are valid")
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read configuration {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_table(&Table::parse(&text, base)?)
    }

    /// Parses configuration text; relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        Self::from_table(&Table::parse(text, base.to_path_buf())?)
    }

    fn from_table(t: &Table) -> Result<Self> {
        let length = positive("geometry.length", t.or("geometry.length", 1.0)?)?;
        let final_time = positive("geometry.final_time", t.or("geometry.final_time", 1.0)?)?;
        let grid = SpaceTimeGrid::new(length, final_time, t.or("grid.n_elements", 64)?, t.or("grid.n_steps", 512)?)
            .map_err(|e| Error::Config(e.to_string()))?;

        let mut coefficients = Vec::new();
        for (c, default) in BASELINE {
            let key = format!("coefficients.{}", c.name());
            let source = match t.str(&key) {
                None => CoefficientSource::Constant(default),
                Some(v) => match v.parse::<f64>() {
                    Ok(x) => CoefficientSource::Constant(x),
                    Err(_) => CoefficientSource::Csv(t.path(&key)?.expect("key present")),
                },
            };
            coefficients.push(CoefficientSpec {
                coefficient: c,
                source,
                lower: t.get(&format!("{key}.lower"))?,
                upper: t.get(&format!("{key}.upper"))?,
            });
        }

        let kind = t.or("scenario.kind", "zero".to_string())?;
        let scenario = match kind.as_str() {
            "zero" => ScenarioKind::Zero,
            "manufactured" => ScenarioKind::Manufactured,
            "moving_gaussian" => ScenarioKind::MovingGaussian {
                amplitude: t.or("scenario.amplitude", 1000.0)?,
                speed: t.or("scenario.speed", length / final_time)?,
                width: positive("scenario.width", t.or("scenario.width", 2.0 * grid.h())?)?,
                start: t.or("scenario.start", 0.0)?,
                clamp: t.or("scenario.clamp", false)?,
            },
            "modal" => {
                let raw = t.str("scenario.modes").unwrap_or("1:1:1");
                let terms = parse_modes("scenario.modes", raw)?
                    .into_iter()
                    .map(|v| match v.as_slice() {
                        [kx, kt, a] => Ok((index("scenario.modes", *kx)?, index("scenario.modes", *kt)?, *a)),
                        _ => Err(Error::Config("`scenario.modes`: terms are `kx:kt:amplitude`".into())),
                    })
                    .collect::<Result<Vec<_>>>()?;
                ScenarioKind::Modal { terms }
            }
            "csv" => ScenarioKind::Csv {
                path: t
                    .path("scenario.path")?
                    .ok_or_else(|| Error::Config("`scenario.kind = csv` needs `scenario.path`".into()))?,
            },
            other => return Err(Error::Config(format!("unknown scenario kind `{other}`"))),
        };

        let noise_rel: f64 = t.or("noise.delta_rel", 0.0)?;
        if !(noise_rel >= 0.0 && noise_rel.is_finite()) {
            return Err(Error::Config(format!("`noise.delta_rel` must be >= 0, got {noise_rel}")));
        }
        let smoothing: Option<f64> = t.get("smoothing.lambda")?;
        if let Some(l) = smoothing {
            if !(l >= 0.0) {
                return Err(Error::Config(format!("`smoothing.lambda` must be >= 0, got {l}")));
            }
        }

        let ct_variant: CtVariant = t.or("bounds.ct_variant", CtVariant::Literal)?;
        let step = match t.or("inversion.step", "fixed".to_string())?.as_str() {
            "fixed" => StepRule::Fixed(t.get("inversion.omega")?),
            "backtracking" => StepRule::Backtracking,
            other => return Err(Error::Config(format!("unknown step rule `{other}`"))),
        };
        let landweber = InversionConfig {
            step,
            max_iterations: t.or("inversion.max_iterations", 500)?,
            noise_level: 0.0,
            safety_factor: t.or("inversion.safety_factor", 1.1)?,
            c_f: t.or("inversion.c_f", 1e6)?,
            initial: None,
            variant: ct_variant,
        };
        landweber.validate()?;
        let mode = match t.or("inversion.mode", "field".to_string())?.as_str() {
            "field" => InversionMode::Field,
            "gaussian" => {
                let speed: Option<f64> = t.get("inversion.guess_speed")?;
                let width: Option<f64> = t.get("inversion.guess_width")?;
                let guess = match (speed, width) {
                    (None, None) => None,
                    (s, w) => {
                        let d = GaussianGuess::default_for(&grid);
                        Some(GaussianGuess {
                            speed: s.unwrap_or(d.speed),
                            width: positive("inversion.guess_width", w.unwrap_or(d.width))?,
                        })
                    }
                };
                InversionMode::Gaussian {
                    start: t.or("inversion.start", 0.0)?,
                    guess,
                }
            }
            "modal" => {
                let raw = t.str("inversion.modes").unwrap_or("1:1");
                let modes = parse_modes("inversion.modes", raw)?
                    .into_iter()
                    .map(|v| match v.as_slice() {
                        [kx, kt] => Ok((index("inversion.modes", *kx)?, index("inversion.modes", *kt)?)),
                        _ => Err(Error::Config("`inversion.modes`: terms are `kx:kt`".into())),
                    })
                    .collect::<Result<Vec<_>>>()?;
                if modes.is_empty() || modes.len() > 8 {
                    return Err(Error::Config("`inversion.modes` needs 1 to 8 terms".into()));
                }
                InversionMode::Modal { modes }
            }
            other => return Err(Error::Config(format!("unknown inversion mode `{other}`"))),
        };
        let noise_level_override: Option<f64> = t.get("inversion.noise_level")?;

        let verify = VerifySettings {
            scenarios: t.or("verify.scenarios", 20)?,
            slack: t.or("verify.slack", 0.05)?,
            duality: t.or("verify.duality", true)?,
            gradient: t.or("verify.gradient", true)?,
            corrupt_adjoint_sign: t.or("verify.corrupt_adjoint_sign", false)?,
        };

        Ok(Self {
            grid,
            coefficients,
            scenario,
            measurements: t.path("measurements.path")?,
            noise_rel,
            smoothing,
            inversion: InversionSettings {
                mode,
                landweber,
                noise_level_override,
            },
            verify,
            ct_variant,
            seed: t.or("seed", 0)?,
            output_dir: t.str("output.dir").map(|d| t.base.join(d)),
            hash: t.hash(),
        })
    }

    /// Builds the coefficient fields on the configured grid.
    pub fn coefficient_set(&self) -> Result<CoefficientSet> {
        let mut fields = Vec::new();
        for spec in &self.coefficients {
            fields.push(match &spec.source {
                CoefficientSource::Constant(v) => vec![*v; self.grid.n_nodes()],
                CoefficientSource::Csv(p) => crate::io::read_profile(p, &self.grid)?,
            });
        }
        let mut it = fields.into_iter();
        let mut next = || it.next().expect("five fields");
        let set = CoefficientSet::from_samples(next(), next(), next(), next(), next())?;
        let mut bounds = *set.bounds();
        for spec in &self.coefficients {
            let b = bounds.get(spec.coefficient);
            let i = Interval::new(spec.lower.unwrap_or(b.lo), spec.upper.unwrap_or(b.hi));
            match spec.coefficient {
                Coefficient::MassDensity => bounds.mass_density = i,
                Coefficient::ViscousDamping => bounds.viscous_damping = i,
                Coefficient::Tension => bounds.tension = i,
                Coefficient::Rigidity => bounds.rigidity = i,
                Coefficient::KelvinVoigt => bounds.kelvin_voigt = i,
            }
        }
        Ok(set.with_bounds(bounds))
    }

    pub fn noise_spec(&self) -> NoiseSpec {
        NoiseSpec {
            delta_rel: self.noise_rel,
            seed: self.seed,
        }
    }
}
