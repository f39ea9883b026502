//! Run configurations: clap flags, JSON overrides, validation and hashing.

use std::path::Path;

use clap::{Args, Subcommand};
use isoenergy::denominators::DenomKind;
use isoenergy::dispersion::is_regular;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum RunConfig {
    /// Per-vertex curvature table of a level set.
    Geometry(LevelArgs),
    /// Mesh a level set and store it in the binary cache.
    Surface(LevelArgs),
    /// Zero-curvature curve and tangential points.
    Gamma(LevelArgs),
    /// Sampled certificates of the geometric assumptions.
    Assumptions(AssumptionsArgs),
    /// |mu_hat(r omega)| scans with exponent fits and the decay bound.
    Decay(DecayArgs),
    /// Monte-Carlo sweep of J(M) = int_{|xi| <= M} |mu_hat|^4.
    L4(L4Args),
    /// Denominator integrals and eta sweeps.
    Denom(DenomArgs),
    /// Dyadic curvature/annulus volume table.
    Diagnostics(DiagnosticsArgs),
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelArgs {
    #[arg(long, default_value_t = 2.5)]
    pub a: f64,
    #[arg(long, default_value_t = 64)]
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssumptionsArgs {
    #[arg(long, default_value_t = 2.3)]
    pub a_lo: f64,
    #[arg(long, default_value_t = 2.7)]
    pub a_hi: f64,
    #[arg(long, default_value_t = 64)]
    pub n: usize,
    #[arg(long, default_value_t = 20_000)]
    pub volume_samples: usize,
    #[arg(long, default_value_t = 500)]
    pub directions: usize,
    #[arg(long, default_value_t = 3)]
    pub levels: usize,
    #[arg(long, default_value_t = 0.3)]
    pub lambda: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecayArgs {
    #[arg(long, default_value_t = 2.5)]
    pub a: f64,
    #[arg(long, default_value_t = 64)]
    pub n: usize,
    /// Direction `x,y,z` (repeatable).
    #[arg(long = "direction", value_parser = parse_vec3)]
    pub directions: Vec<[f64; 3]>,
    /// Additional uniformly random directions.
    #[arg(long, default_value_t = 0)]
    pub random_directions: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 10.0)]
    pub r_min: f64,
    #[arg(long, default_value_t = 300.0)]
    pub r_max: f64,
    #[arg(long, default_value_t = 400)]
    pub points: usize,
    /// Constant of the bound column; fitted as the largest ratio if absent.
    #[arg(long)]
    pub constant: Option<f64>,
    #[arg(long, default_value_t = 0.3)]
    pub lambda: f64,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct L4Args {
    #[arg(long, default_value_t = 2.5)]
    pub a: f64,
    #[arg(long, default_value_t = 32)]
    pub n: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [8.0, 16.0, 32.0, 64.0])]
    pub radii: Vec<f64>,
    #[arg(long, default_value_t = 64)]
    pub directions: usize,
    #[arg(long, default_value_t = 1024)]
    pub max_directions: usize,
    /// Target relative standard error at the largest radius (0 disables).
    #[arg(long, default_value_t = 0.05)]
    pub target_stderr: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.3)]
    pub lambda: f64,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenomArgs {
    #[arg(long, value_parser = parse_kind)]
    pub kind: DenomKind,
    #[arg(long, default_value_t = 3.0)]
    pub alpha: f64,
    /// One value, or a comma-separated sweep.
    #[arg(long, value_delimiter = ',', required = true)]
    pub eta: Vec<f64>,
    #[arg(long, default_value_t = 64)]
    pub n: usize,
    /// Shift of the second denominator (kind two).
    #[arg(long, value_parser = parse_vec3, default_value = "0,0,0")]
    pub q: [f64; 3],
    /// Shift of the fourth denominator (kind four).
    #[arg(long, value_parser = parse_vec3, default_value = "0,0,0")]
    pub u: [f64; 3],
    #[arg(long, default_value_t = 0.3)]
    pub lambda: f64,
    /// Multiply the resolvent by the cutoff chi(e).
    #[arg(long)]
    pub cutoff: bool,
    /// Per-eta resolution `lo,hi`: smallest power of two >= max(lo, 8/eta), capped at hi.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    pub budget: Option<Vec<usize>>,
    /// Relative tolerance of the N vs N/2 check; 0 disables it. Defaults to
    /// 0.05, or off with `--oracle` (the oracle checks the grid sum itself).
    #[arg(long)]
    pub doubling_tolerance: Option<f64>,
    /// Compare against the direct O(N^9) sum (kind four).
    #[arg(long)]
    pub oracle: bool,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsArgs {
    #[arg(long, default_value_t = 2.5)]
    pub a: f64,
    #[arg(long, default_value_t = 64)]
    pub n: usize,
    #[arg(long, value_parser = parse_vec3, default_value = "1,0.2,-0.4")]
    pub direction: [f64; 3],
    #[arg(long, default_value_t = 5)]
    pub depth: u32,
    #[arg(long, default_value_t = 1.0)]
    pub c0: f64,
    #[arg(long, default_value_t = 12)]
    pub annuli: u32,
    #[arg(long, default_value_t = 12)]
    pub subdivisions: usize,
    #[arg(long, default_value_t = 2)]
    pub order: u32,
    #[arg(long, default_value_t = 10.0)]
    pub dichotomy_constant: f64,
    #[arg(long, default_value_t = 0.3)]
    pub lambda: f64,
}

pub fn parse_vec3(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("expected x,y,z, got {s:?}"));
    }
    let mut v = [0.0; 3];
    for (slot, p) in v.iter_mut().zip(parts) {
        *slot = p.parse().map_err(|_| format!("not a number: {p:?}"))?;
    }
    Ok(v)
}

fn parse_kind(s: &str) -> Result<DenomKind, String> {
    s.parse().map_err(|e: isoenergy::Error| e.to_string())
}

impl RunConfig {
    pub fn name(&self) -> &'static str {
        match self {
            RunConfig::Geometry(_) => "geometry",
            RunConfig::Surface(_) => "surface",
            RunConfig::Gamma(_) => "gamma",
            RunConfig::Assumptions(_) => "assumptions",
            RunConfig::Decay(_) => "decay",
            RunConfig::L4(_) => "l4",
            RunConfig::Denom(_) => "denom",
            RunConfig::Diagnostics(_) => "diagnostics",
        }
    }

    /// Applies the fields of a JSON config file on top of the flags.
    pub fn with_overrides(self, path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let file: Value = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let Value::Object(fields) = file else {
            return Err(CliError::Config(format!("{}: expected a JSON object", path.display())));
        };
        let mut merged = serde_json::to_value(&self).expect("configs serialize");
        let name = self.name();
        for (k, v) in fields {
            if k == "command" && v != Value::String(name.into()) {
                return Err(CliError::Config(format!("config file is for command {v}, not {name:?}")));
            }
            merged[k] = v;
        }
        serde_json::from_value(merged).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("configs serialize");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let mut errs = Vec::new();
        let mut check = |ok: bool, field: &str, msg: &str| {
            if !ok {
                errs.push(format!("{field}: {msg}"));
            }
        };
        match self {
            RunConfig::Geometry(l) | RunConfig::Surface(l) | RunConfig::Gamma(l) => level_checks(&mut check, l.a, l.n),
            RunConfig::Assumptions(c) => {
                check(0.0 < c.a_lo && c.a_lo <= c.a_hi && c.a_hi < 6.0, "a_lo/a_hi", "need 0 < a_lo <= a_hi < 6");
                check(c.n >= 16, "n", "must be at least 16");
                check(c.levels >= 1 && c.directions >= 1, "levels/directions", "must be positive");
            }
            RunConfig::Decay(c) => {
                level_checks(&mut check, c.a, c.n);
                regular(&mut check, c.a, c.lambda);
                check(0.0 < c.r_min && c.r_min < c.r_max, "r_min/r_max", "need 0 < r_min < r_max");
                check(c.points >= 2, "points", "need at least 2 radii");
                check(!c.directions.is_empty() || c.random_directions > 0, "direction", "give --direction or --random-directions");
                check(c.directions.iter().all(|d| d.iter().any(|x| *x != 0.0) && d.iter().all(|x| x.is_finite())), "direction", "must be finite and nonzero");
                check(c.constant.is_none_or(|k| k > 0.0), "constant", "must be positive");
            }
            RunConfig::L4(c) => {
                level_checks(&mut check, c.a, c.n);
                regular(&mut check, c.a, c.lambda);
                check(!c.radii.is_empty() && c.radii.iter().all(|&m| m >= 2.0), "radii", "every M must be >= 2");
                check(c.radii.windows(2).all(|w| w[0] < w[1]), "radii", "must be increasing");
                check(c.directions >= 2 && c.directions <= c.max_directions, "directions", "need 2 <= directions <= max_directions");
                check(c.target_stderr >= 0.0, "target_stderr", "must be >= 0");
            }
            RunConfig::Denom(c) => {
                check(c.n.is_power_of_two() && c.n >= 4, "n", "must be a power of two >= 4");
                check(c.alpha.is_finite(), "alpha", "must be finite");
                check(!c.eta.is_empty() && c.eta.iter().all(|&e| e > 0.0 && e <= 0.5), "eta", "values must lie in (0, 1/2]");
                check(c.doubling_tolerance.is_none_or(|t| t >= 0.0), "doubling_tolerance", "must be >= 0");
                check(!c.oracle || c.kind == DenomKind::Four, "oracle", "only available for kind four");
                check(!c.oracle || c.n <= 16, "oracle", "the direct sum is O(N^9); use n <= 16");
                if let Some(b) = &c.budget {
                    check(b.len() == 2 && b[0] >= 4 && b[0] <= b[1] && b[1].is_power_of_two(), "budget", "need lo,hi with 4 <= lo <= hi, hi a power of two");
                }
            }
            RunConfig::Diagnostics(c) => {
                level_checks(&mut check, c.a, c.n);
                regular(&mut check, c.a, c.lambda);
                check(c.direction.iter().any(|x| *x != 0.0), "direction", "must be nonzero");
                check(c.depth >= 1 && c.subdivisions >= 1 && c.c0 > 0.0, "depth/subdivisions/c0", "must be positive");
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(errs.join("; ")))
        }
    }
}

fn level_checks(check: &mut impl FnMut(bool, &str, &str), a: f64, n: usize) {
    check(a > 0.0 && a < 6.0, "a", "level must lie in (0, 6)");
    check(n >= 16 && n.is_power_of_two(), "n", "must be a power of two >= 16");
}

fn regular(check: &mut impl FnMut(bool, &str, &str), a: f64, lambda: f64) {
    check(is_regular(a, lambda), "a", "level is within lambda of an exceptional level {0, 2, 3, 4, 6}");
}
