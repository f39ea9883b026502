use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use isoenergy::cache::{self, Artifact};
use isoenergy::curvegeom::{self, CertificateConfig, TangentialSet};
use isoenergy::denominators::{
    eta_sweep, four_denominator, four_denominator_direct, one_denominator, two_denominator, DenomKind, ResolventParams, DOUBLING_TOLERANCE,
    SweepConfig, SWEEP_COLUMNS,
};
use isoenergy::levelset::{extract_surface, integrate_surface};
use isoenergy::oscillatory::{self, DecayScan, DyadicConfig, L4Config, MuHatQuadrature, QuadratureConfig};
use isoenergy::output::{fmt_f64, CsvTable};
use isoenergy::rng::{random_direction, task_rng};
use isoenergy::{CutoffSpec, Direction, SurfaceMesh};
use serde::Serialize;
use serde_json::json;

mod config;

use config::*;

/// Thread count for the internal parallel loops.
const THREADS_ENV: &str = "ISOENERGY_THREADS";

#[derive(Parser)]
#[command(name = "isoenergy", version, about = "Level-set geometry and oscillatory estimates for e(p) = 3 - sum cos p_i")]
struct Cli {
    /// JSON file whose fields override the flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for output files.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Mesh cache to use instead of meshing again.
    #[arg(long, global = true)]
    mesh: Option<PathBuf>,
    #[command(subcommand)]
    command: RunConfig,
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Domain(isoenergy::Error),
}

impl From<isoenergy::Error> for CliError {
    fn from(e: isoenergy::Error) -> Self {
        CliError::Domain(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Domain(e.into())
    }
}

struct Ctx {
    cfg: RunConfig,
    hash: String,
    out_dir: PathBuf,
    mesh: Option<PathBuf>,
}

impl Ctx {
    fn header(&self) -> String {
        format!("isoenergy {} {} config_sha256={}", env!("CARGO_PKG_VERSION"), self.cfg.name(), self.hash)
    }

    fn write_csv(&self, name: &str, table: &CsvTable) -> Result<PathBuf, CliError> {
        let path = self.out_dir.join(name);
        fs::write(&path, table.render(Some(&self.header())))?;
        Ok(path)
    }

    fn write_json<T: Serialize>(&self, name: &str, body: T) -> Result<PathBuf, CliError> {
        let doc = json!({
            "header": {
                "tool": "isoenergy",
                "version": env!("CARGO_PKG_VERSION"),
                "command": self.cfg.name(),
                "config_sha256": self.hash,
                "config": self.cfg,
            },
            "data": body,
        });
        let path = self.out_dir.join(name);
        let mut text = serde_json::to_string_pretty(&doc).map_err(isoenergy::Error::from)?;
        text.push('\n');
        fs::write(&path, text)?;
        Ok(path)
    }

    fn surface(&self, a: f64, n: usize) -> Result<SurfaceMesh, CliError> {
        match &self.mesh {
            Some(p) => {
                let m = cache::load_mesh(p)?;
                if m.level != a || m.resolution != n {
                    return Err(CliError::Config(format!(
                        "mesh cache {} holds a = {}, N = {}; the run asks for a = {a}, N = {n}",
                        p.display(),
                        m.level,
                        m.resolution
                    )));
                }
                Ok(m)
            }
            None => Ok(extract_surface(a, n)?),
        }
    }
}

fn direction(v: &[f64; 3]) -> Result<Direction, CliError> {
    Direction::from_xyz(v[0], v[1], v[2]).ok_or_else(|| CliError::Config(format!("direction {v:?} cannot be normalised")))
}

fn tangential(a: f64, mesh: &SurfaceMesh) -> Result<(curvegeom::GammaCurve, TangentialSet), CliError> {
    let mut gamma = curvegeom::extract_gamma(a, mesh)?;
    if gamma.is_empty() {
        return Ok((gamma, TangentialSet::empty(a)));
    }
    let tset = curvegeom::find_tangential_points(a, &gamma)?;
    gamma.attach_tangential(&tset);
    Ok((gamma, tset))
}

fn run(ctx: &Ctx) -> Result<(), CliError> {
    fs::create_dir_all(&ctx.out_dir)?;
    match &ctx.cfg {
        RunConfig::Geometry(c) => {
            let mesh = ctx.surface(c.a, c.n)?;
            let mut t = CsvTable::new(&["p1", "p2", "p3", "grad_norm", "nu_x", "nu_y", "nu_z", "gauss", "mean", "kappa1", "kappa2"]);
            for (v, g) in mesh.vertices.iter().zip(&mesh.geometry) {
                let nu = g.normal.vec();
                t.push_numbers(&[v.p[0], v.p[1], v.p[2], g.grad_norm, nu.x, nu.y, nu.z, g.gauss, g.mean, g.kappa1, g.kappa2]);
            }
            let path = ctx.write_csv("geometry.csv", &t)?;
            let gauss_integral = integrate_surface(&mesh, &mesh.gauss());
            println!(
                "a = {}: {} vertices, area {}, chi {}, int K = {} (2 pi chi = {}) -> {}",
                c.a,
                mesh.vertices.len(),
                fmt_f64(mesh.total_area()),
                mesh.euler_characteristic(),
                fmt_f64(gauss_integral),
                fmt_f64(2.0 * std::f64::consts::PI * mesh.euler_characteristic() as f64),
                path.display()
            );
        }
        RunConfig::Surface(c) => {
            let mesh = extract_surface(c.a, c.n)?;
            let bin = ctx.out_dir.join("surface.bin");
            cache::store(&Artifact::Mesh(mesh.clone()), &bin)?;
            let path = ctx.write_json(
                "surface.json",
                json!({
                    "level": mesh.level,
                    "resolution": mesh.resolution,
                    "area": mesh.total_area(),
                    "euler_characteristic": mesh.euler_characteristic(),
                    "max_level_residual": mesh.max_level_residual(),
                    "vertices": mesh.vertices.iter().map(|v| v.p).collect::<Vec<_>>(),
                    "triangles": mesh.triangles,
                }),
            )?;
            println!("{} triangles -> {}, {}", mesh.triangles.len(), bin.display(), path.display());
        }
        RunConfig::Gamma(c) => {
            let mesh = ctx.surface(c.a, c.n)?;
            let (gamma, tset) = tangential(c.a, &mesh)?;
            let path = ctx.write_json("gamma.json", json!({ "gamma": gamma, "tangential": tset }))?;
            println!(
                "a = {}: {} components, {} samples, {} tangential points -> {}",
                c.a,
                gamma.components.len(),
                gamma.sample_count(),
                tset.len(),
                path.display()
            );
        }
        RunConfig::Assumptions(c) => {
            let cert = curvegeom::check_assumptions(&CertificateConfig {
                a_window: [c.a_lo, c.a_hi],
                resolution: c.n,
                volume_samples: c.volume_samples,
                directions: c.directions,
                levels: c.levels,
                lambda: c.lambda,
                seed: c.seed,
            })?;
            let path = ctx.write_json("assumptions.json", &cert)?;
            println!("C2 = {}, C4 = {} -> {}", fmt_f64(cert.c2), cert.c4, path.display());
        }
        RunConfig::Decay(c) => {
            let mesh = ctx.surface(c.a, c.n)?;
            let (_, tset) = tangential(c.a, &mesh)?;
            let quad = MuHatQuadrature::new(&mesh, QuadratureConfig::for_radius(c.r_max))?;
            let mut dirs = c.directions.iter().map(direction).collect::<Result<Vec<_>, _>>()?;
            let mut rng = task_rng(c.seed, 0);
            dirs.extend((0..c.random_directions).map(|_| random_direction(&mut rng)));
            let radii = oscillatory::log_radii(c.r_min, c.r_max, c.points);
            let scans = dirs
                .iter()
                .map(|w| oscillatory::decay_scan(&quad, &tset, w, &radii))
                .collect::<Result<Vec<DecayScan>, _>>()?;
            let constant = c.constant.unwrap_or_else(|| scans.iter().map(DecayScan::bound_ratio).fold(0.0, f64::max));
            let csv = ctx.write_csv("decay.csv", &oscillatory::decay_csv(&scans, constant))?;
            let fits: Vec<_> = scans
                .iter()
                .map(|s| {
                    json!({
                        "omega": s.direction.vec().as_slice(),
                        "d_value": s.d_value,
                        "exponent": s.exponent,
                        "constant": s.constant,
                        "fit_residual": s.fit_residual,
                        "fit_points": s.fit_points,
                        "bound_ratio": s.bound_ratio(),
                    })
                })
                .collect();
            let fit = ctx.write_json("decay_fits.json", json!({ "level": c.a, "bound_constant": constant, "scans": fits }))?;
            for s in &scans {
                println!("omega {:?}: exponent {:.3}, D = {:.3}", s.direction.vec().as_slice(), s.exponent, s.d_value);
            }
            println!("C = {} -> {}, {}", fmt_f64(constant), csv.display(), fit.display());
        }
        RunConfig::L4(c) => {
            let mesh = ctx.surface(c.a, c.n)?;
            let (_, tset) = tangential(c.a, &mesh)?;
            let m_max = c.radii.iter().copied().fold(0.0, f64::max);
            let quad = MuHatQuadrature::new(&mesh, QuadratureConfig::for_radius(m_max))?;
            let cfg = L4Config {
                radii: c.radii.clone(),
                directions: c.directions,
                max_directions: c.max_directions,
                target_rel_stderr: (c.target_stderr > 0.0).then_some(c.target_stderr),
                seed: c.seed,
                ..Default::default()
            };
            let r = oscillatory::l4_integral(&quad, &tset, &cfg)?;
            let path = ctx.write_csv("l4.csv", &r.to_csv())?;
            println!("{} directions, power slope {:.3} -> {}", r.directions, r.power_slope(), path.display());
        }
        RunConfig::Denom(c) => denom(ctx, c)?,
        RunConfig::Diagnostics(c) => {
            let mesh = ctx.surface(c.a, c.n)?;
            let (_, tset) = tangential(c.a, &mesh)?;
            let w = direction(&c.direction)?;
            let cfg = DyadicConfig {
                depth: c.depth,
                c0: c.c0,
                order: c.order,
                annuli: c.annuli,
                subdivisions: c.subdivisions,
                dichotomy_constant: c.dichotomy_constant,
            };
            let r = oscillatory::dyadic_diagnostics(&mesh, &tset, &w, &cfg)?;
            let mut t = CsvTable::new(&["k", "j", "volume", "weighted", "bound", "violation"]);
            for cell in &r.cells {
                t.push(vec![
                    cell.k.to_string(),
                    cell.j.to_string(),
                    fmt_f64(cell.volume),
                    fmt_f64(cell.weighted),
                    fmt_f64(cell.bound),
                    u8::from(cell.violation).to_string(),
                ]);
            }
            let csv = ctx.write_csv("diagnostics.csv", &t)?;
            let summary = ctx.write_json(
                "diagnostics_summary.json",
                json!({
                    "level": r.level,
                    "omega": r.direction.vec().as_slice(),
                    "d_value": r.d_value,
                    "band_volumes": r.band_volumes,
                    "row_sums": r.row_sums,
                    "band_constant": r.band_constant,
                    "volume_constant": r.volume_constant,
                    "violations": r.violations,
                    "required_constant": r.required_constant,
                    "sample_spacing": r.sample_spacing,
                }),
            )?;
            println!("{} violations (required constant {:.3}) -> {}, {}", r.violations, r.required_constant, csv.display(), summary.display());
        }
    }
    Ok(())
}

fn denom(ctx: &Ctx, c: &DenomArgs) -> Result<(), CliError> {
    let tol = c.doubling_tolerance.unwrap_or(if c.oracle { 0.0 } else { DOUBLING_TOLERANCE });
    let template = ResolventParams {
        alpha: c.alpha,
        eta: c.eta[0],
        lambda: c.lambda,
        u: c.u,
        n: c.n,
        cutoff: CutoffSpec { lambda: c.lambda.min(0.5), ..Default::default() },
        apply_cutoff: c.cutoff,
        doubling_tolerance: (tol > 0.0).then_some(tol),
    };
    if c.eta.len() >= 2 {
        let report = eta_sweep(&SweepConfig {
            kind: c.kind,
            template: template.clone(),
            etas: c.eta.clone(),
            q: c.q,
            resolution_budget: c.budget.as_ref().map(|b| (b[0], b[1])),
        })?;
        let csv = ctx.write_csv("denom.csv", &report.to_csv())?;
        let fit = ctx.write_json("denom_fit.json", &report)?;
        println!(
            "s = {:.3} (log residual {:.3e}), preferred {:?} -> {}, {}",
            report.power.params[0],
            report.power.log_residual,
            report.preferred,
            csv.display(),
            fit.display()
        );
        for w in &report.warnings {
            eprintln!("warning: {w}");
        }
    } else {
        let v = match c.kind {
            DenomKind::One => one_denominator(&template)?,
            DenomKind::Two => two_denominator(&template, &c.q)?,
            DenomKind::Four => four_denominator(&template)?,
        };
        let shift = if c.kind == DenomKind::Two { c.q } else { c.u };
        let mut t = CsvTable::new(&SWEEP_COLUMNS);
        t.push(vec![
            c.kind.name().to_string(),
            fmt_f64(c.alpha),
            fmt_f64(template.eta),
            v.n.to_string(),
            shift.map(fmt_f64).join(" "),
            fmt_f64(v.value),
            v.rel_change.map(fmt_f64).unwrap_or_default(),
        ]);
        let csv = ctx.write_csv("denom.csv", &t)?;
        println!("value {} -> {}", fmt_f64(v.value), csv.display());
        for w in &v.warnings {
            eprintln!("warning: {w}");
        }
    }
    if c.oracle {
        let mut t = CsvTable::new(&["alpha", "eta", "N", "spectral", "direct", "rel_error"]);
        for &eta in &c.eta {
            let p = ResolventParams { eta, doubling_tolerance: None, ..template.clone() };
            let spectral = four_denominator(&p)?.value;
            let direct = four_denominator_direct(&p)?;
            let rel = (spectral - direct).abs() / direct.abs();
            println!("oracle eta={} N={}: spectral {} direct {} rel_error {}", eta, p.n, fmt_f64(spectral), fmt_f64(direct), fmt_f64(rel));
            t.push_numbers(&[c.alpha, eta, p.n as f64, spectral, direct, rel]);
        }
        ctx.write_csv("denom_oracle.csv", &t)?;
    }
    Ok(())
}

fn init_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var(THREADS_ENV) else { return Ok(()) };
    let n: usize = v.parse().map_err(|_| CliError::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("{THREADS_ENV}: {e}")))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = (|| {
        init_threads()?;
        let cfg = match &cli.config {
            Some(p) => cli.command.clone().with_overrides(p)?,
            None => cli.command.clone(),
        };
        cfg.validate()?;
        let ctx = Ctx { hash: cfg.hash(), cfg, out_dir: cli.out_dir.clone(), mesh: cli.mesh.clone() };
        run(&ctx)
    })();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Domain(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
