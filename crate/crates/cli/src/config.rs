//! Experiment configuration: strict TOML schema, dotted overrides, digest.

use std::path::{Path, PathBuf};

use dsde_core::coefficients::{builtin_family, CoefficientSet, Params};
use dsde_core::density::Normalization;
use dsde_core::grid::Bounds;
use dsde_core::simulator::SimConfig;
use dsde_core::testfn::{Bump, GaussianBump};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::Failure;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilySpec {
    pub name: String,
    #[serde(default)]
    pub params: Params,
}

impl FamilySpec {
    pub fn build(&self) -> Result<CoefficientSet, Failure> {
        builtin_family(&self.name, &self.params).map_err(Failure::from)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub n: usize,
}

impl BoxSpec {
    pub fn bounds(&self) -> Result<Bounds, Failure> {
        Bounds::new(self.lower.clone(), self.upper.clone()).map_err(Failure::from)
    }
}

/// Initial datum or test function given by kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Datum {
    One,
    Gaussian {
        center: Vec<f64>,
        width: f64,
        #[serde(default = "one")]
        amplitude: f64,
    },
    Bump {
        center: Vec<f64>,
        radius: f64,
    },
    /// `x_axis` (1-based), clipped to `[−clip, clip]`.
    Coordinate {
        axis: usize,
        #[serde(default = "infinite")]
        clip: f64,
    },
    BallIndicator {
        #[serde(default)]
        center: Option<Vec<f64>>,
        radius: f64,
    },
}

fn one() -> f64 {
    1.0
}

fn infinite() -> f64 {
    f64::MAX
}

pub type PointFn = Box<dyn Fn(&[f64]) -> f64 + Send + Sync>;

impl Datum {
    pub fn function(&self, d: usize) -> Result<PointFn, Failure> {
        let check = |v: &[f64], what: &str| {
            if v.len() != d {
                Err(Failure::config(format!("{what} has {} entries, d = {d}", v.len())))
            } else {
                Ok(())
            }
        };
        Ok(match self.clone() {
            Datum::One => Box::new(|_| 1.0),
            Datum::Gaussian { center, width, amplitude } => {
                check(&center, "gaussian center")?;
                if !(width > 0.0) {
                    return Err(Failure::config("gaussian width must be positive"));
                }
                let g = GaussianBump { center, width, amplitude };
                Box::new(move |x| g.value(x))
            }
            Datum::Bump { center, radius } => {
                check(&center, "bump center")?;
                if !(radius > 0.0) {
                    return Err(Failure::config("bump radius must be positive"));
                }
                let b = Bump::new(center, radius);
                Box::new(move |x| b.value(x))
            }
            Datum::Coordinate { axis, clip } => {
                if axis == 0 || axis > d {
                    return Err(Failure::config(format!("axis must lie in 1..={d}")));
                }
                Box::new(move |x| x[axis - 1].clamp(-clip, clip))
            }
            Datum::BallIndicator { center, radius } => {
                let c = center.unwrap_or_else(|| vec![0.0; d]);
                check(&c, "indicator center")?;
                Box::new(move |x| {
                    let r2: f64 = x.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum();
                    if r2 < radius * radius {
                        1.0
                    } else {
                        0.0
                    }
                })
            }
        })
    }

    pub fn label(&self) -> String {
        match self {
            Datum::One => "one".into(),
            Datum::Gaussian { .. } => "gaussian".into(),
            Datum::Bump { .. } => "bump".into(),
            Datum::Coordinate { axis, .. } => format!("x{axis}"),
            Datum::BallIndicator { radius, .. } => format!("ball_{radius}"),
        }
    }
}

fn default_resolution() -> usize {
    65
}
fn default_probes() -> usize {
    64
}
fn default_factor_tol() -> f64 {
    1e-10
}
fn default_ellipticity_samples() -> usize {
    2000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckSpec {
    /// Grid points per axis for `min_M`.
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    /// Random probe points for the factorization check.
    #[serde(default = "default_probes")]
    pub probes: usize,
    #[serde(default = "default_factor_tol")]
    pub factorization_tol: f64,
    #[serde(default = "default_ellipticity_samples")]
    pub ellipticity_samples: usize,
    /// Points where the growth margin is reported and required `≥ 0`.
    #[serde(default)]
    pub growth_points: Vec<Vec<f64>>,
    /// `M` for the growth margins; `min_M` from the grid if absent.
    #[serde(default)]
    pub growth_m: Option<f64>,
}

impl Default for CheckSpec {
    fn default() -> Self {
        Self {
            resolution: default_resolution(),
            probes: default_probes(),
            factorization_tol: default_factor_tol(),
            ellipticity_samples: default_ellipticity_samples(),
            growth_points: Vec::new(),
            growth_m: None,
        }
    }
}

fn default_pre_tol() -> f64 {
    1e-4
}
fn default_div_tol() -> f64 {
    1e-3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensitySpec {
    #[serde(default)]
    pub normalization: Normalization,
    #[serde(default = "default_pre_tol")]
    pub preinvariance_tol: f64,
    #[serde(default = "default_div_tol")]
    pub divergence_tol: f64,
    #[serde(default = "yes")]
    pub csv: bool,
}

impl Default for DensitySpec {
    fn default() -> Self {
        Self {
            normalization: Normalization::Anchor,
            preinvariance_tol: default_pre_tol(),
            divergence_tol: default_div_tol(),
            csv: true,
        }
    }
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalBoundednessSpec {
    pub center: Vec<f64>,
    pub t_bar: f64,
    pub r: f64,
    #[serde(default = "six")]
    pub p: f64,
}

fn six() -> f64 {
    6.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SemigroupSpec {
    pub t_end: f64,
    pub dt: f64,
    pub initial: Datum,
    /// Store (and dump) every `store_stride`-th step.
    #[serde(default = "hundred")]
    pub store_stride: usize,
    #[serde(default = "yes")]
    pub csv: bool,
    #[serde(default)]
    pub local_boundedness: Option<LocalBoundednessSpec>,
}

fn hundred() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SimulateSpec {
    /// Write `paths.bin` with every recorded state.
    #[serde(default)]
    pub dump_paths: bool,
    /// Radii for exit statistics in addition to `sim.r_exit`.
    #[serde(default)]
    pub exit_radii: Vec<f64>,
    /// Fail if the exit fraction at `sim.r_exit` exceeds this.
    #[serde(default)]
    pub max_exit_fraction: Option<f64>,
    /// Fail if any path spends positive time on the null set.
    #[serde(default)]
    pub require_zero_occupation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantSpec {
    pub label: String,
    /// Family name; the base family when absent.
    #[serde(default)]
    pub family: Option<String>,
    /// Overrides merged into the base family parameters.
    #[serde(default)]
    pub params: Params,
    #[serde(default)]
    pub dt: Option<f64>,
}

fn level() -> f64 {
    0.01
}
fn perms() -> usize {
    199
}
fn cap() -> usize {
    1000
}
fn hom_tol() -> f64 {
    1e-12
}
fn two() -> f64 {
    2.0
}
fn space_cells() -> usize {
    400
}
fn time_cells() -> usize {
    32
}
fn lambda() -> f64 {
    3.7
}
fn budget() -> f64 {
    3.0
}
fn leak() -> f64 {
    0.01
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DiagnosticSpec {
    Uniqueness {
        variants: Vec<VariantSpec>,
        t_checks: Vec<f64>,
        #[serde(default = "level")]
        level: f64,
        #[serde(default)]
        common_seed: bool,
        #[serde(default = "perms")]
        permutations: usize,
        #[serde(default = "cap")]
        energy_cap: usize,
    },
    Krylov {
        radius: f64,
        t_end: f64,
        dictionary: Vec<Datum>,
        /// Step sizes to compare; `sim.dt` when empty.
        #[serde(default)]
        dts: Vec<f64>,
        #[serde(default = "hom_tol")]
        homogeneity_tol: f64,
        #[serde(default = "two")]
        max_factor: f64,
        #[serde(default = "space_cells")]
        space_cells: usize,
        #[serde(default = "time_cells")]
        time_cells: usize,
        #[serde(default = "lambda")]
        lambda: f64,
    },
    FeynmanKac {
        t_end: f64,
        pde_dt: f64,
        initial: Datum,
        #[serde(default = "budget")]
        budget_factor: f64,
        #[serde(default = "leak")]
        leakage_tol: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub format_version: u32,
    #[serde(default = "default_out")]
    pub output_dir: PathBuf,
    pub family: FamilySpec,
    /// Start point; the origin when absent.
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    #[serde(rename = "box")]
    pub box_: BoxSpec,
    pub sim: SimConfig,
    #[serde(default)]
    pub check: CheckSpec,
    #[serde(default)]
    pub density: DensitySpec,
    #[serde(default)]
    pub semigroup: Option<SemigroupSpec>,
    #[serde(default)]
    pub simulate: SimulateSpec,
    #[serde(default)]
    pub diagnostics: Vec<DiagnosticSpec>,
}

fn default_out() -> PathBuf {
    PathBuf::from("dsde-out")
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self, Failure> {
        let mut value: toml::Table =
            toml::from_str(text).map_err(|e| Failure::config(format!("config parse error: {e}")))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg: ExperimentConfig = toml::Value::Table(value)
            .try_into()
            .map_err(|e| Failure::config(format!("config schema error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text, overrides)
    }

    pub fn validate(&self) -> Result<(), Failure> {
        if self.format_version != FORMAT_VERSION {
            return Err(Failure::config(format!(
                "format_version {} is not supported (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        let c = self.family.build()?;
        let d = c.d();
        if self.box_.lower.len() != d || self.box_.upper.len() != d {
            return Err(Failure::config(format!("box dimension differs from d = {d}")));
        }
        self.box_.bounds()?;
        if self.box_.n < 3 {
            return Err(Failure::config("box.n must be at least 3"));
        }
        if let Some(x) = &self.x0 {
            if x.len() != d {
                return Err(Failure::config(format!("x0 has {} entries, d = {d}", x.len())));
            }
        }
        self.sim.validate().map_err(Failure::from)?;
        Ok(())
    }

    pub fn x0(&self, d: usize) -> Vec<f64> {
        self.x0.clone().unwrap_or_else(|| vec![0.0; d])
    }

    /// SHA-256 of the canonical JSON form, with `output_dir` blanked so that
    /// the digest names the experiment rather than where it was written.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    #[cfg(test)]
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&doc) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Applies `a.b.c=value`; numeric segments index arrays.
pub fn apply_override(root: &mut toml::Table, spec: &str) -> Result<(), Failure> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Failure::config(format!("override '{spec}' is not key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Failure::config(format!("bad override key '{path}'")));
    }
    let value = parse_value(raw.trim());
    let mut cur: &mut toml::Value = root
        .entry(keys[0].to_string())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    if keys.len() == 1 {
        *cur = value;
        return Ok(());
    }
    for (i, k) in keys[1..].iter().enumerate() {
        let last = i + 2 == keys.len();
        cur = match cur {
            toml::Value::Table(t) => {
                let e = t
                    .entry(k.to_string())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()));
                if last {
                    *e = value;
                    return Ok(());
                }
                e
            }
            toml::Value::Array(a) => {
                let idx: usize = k
                    .parse()
                    .map_err(|_| Failure::config(format!("'{k}' in '{path}' must index an array")))?;
                let len = a.len();
                let e = a
                    .get_mut(idx)
                    .ok_or_else(|| Failure::config(format!("index {idx} out of range ({len}) in '{path}'")))?;
                if last {
                    *e = value;
                    return Ok(());
                }
                e
            }
            _ => return Err(Failure::config(format!("'{path}' descends into a scalar"))),
        };
    }
    Ok(())
}
