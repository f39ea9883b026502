//! wasm-bindgen front end for the static page in `www/`.
//!
//! Every export returns a JSON string; the page parses and draws it. The
//! `*_json` functions are plain Rust so they can be tested natively.

use isoenergy::curvegeom::{extract_gamma, find_tangential_points, TangentialSet};
use isoenergy::dispersion::{self, Vec3};
use isoenergy::levelset::extract_surface;
use isoenergy::oscillatory::{decay_scan, log_radii, MuHatQuadrature, QuadratureConfig};
use isoenergy::Direction;
use serde_json::json;
use wasm_bindgen::prelude::*;

/// Mesh resolution used by the demo; coarse enough for a single thread.
pub const DEMO_RESOLUTION: usize = 32;
/// Largest radius the decay scan accepts.
pub const MAX_RADIUS: f64 = 150.0;

pub fn curvature_json(p1: f64, p2: f64, p3: f64) -> Result<String, String> {
    let p = Vec3::new(p1, p2, p3);
    let c = dispersion::curvature(&p).map_err(|e| e.to_string())?;
    Ok(json!({
        "e": dispersion::eval_e(&p),
        "grad_norm": c.grad_norm,
        "normal": c.normal.vec().as_slice(),
        "gauss": c.gauss,
        "mean": c.mean,
        "kappa1": c.kappa1,
        "kappa2": c.kappa2,
    })
    .to_string())
}

pub fn gamma_json(a: f64) -> Result<String, String> {
    let mesh = extract_surface(a, DEMO_RESOLUTION).map_err(|e| e.to_string())?;
    let gamma = extract_gamma(a, &mesh).map_err(|e| e.to_string())?;
    let tset = if gamma.is_empty() {
        TangentialSet::empty(a)
    } else {
        find_tangential_points(a, &gamma).map_err(|e| e.to_string())?
    };
    let components: Vec<Vec<[f64; 3]>> = gamma.components.iter().map(|c| c.iter().map(|s| s.point.p).collect()).collect();
    let tangential: Vec<[f64; 3]> = tset.points.iter().map(|t| t.point.p).collect();
    Ok(json!({
        "level": a,
        "area": mesh.total_area(),
        "euler_characteristic": mesh.euler_characteristic(),
        "components": components,
        "tangential": tangential,
    })
    .to_string())
}

pub fn decay_json(a: f64, wx: f64, wy: f64, wz: f64, r_max: f64) -> Result<String, String> {
    if !(r_max > 2.0 && r_max <= MAX_RADIUS) {
        return Err(format!("r_max must lie in (2, {MAX_RADIUS}]"));
    }
    let w = Direction::from_xyz(wx, wy, wz).ok_or("direction must be nonzero")?;
    let mesh = extract_surface(a, DEMO_RESOLUTION).map_err(|e| e.to_string())?;
    let gamma = extract_gamma(a, &mesh).map_err(|e| e.to_string())?;
    let tset = if gamma.is_empty() {
        TangentialSet::empty(a)
    } else {
        find_tangential_points(a, &gamma).map_err(|e| e.to_string())?
    };
    let quad = MuHatQuadrature::new(&mesh, QuadratureConfig::for_radius(r_max)).map_err(|e| e.to_string())?;
    let radii = log_radii(1.0, r_max, 300);
    let s = decay_scan(&quad, &tset, &w, &radii).map_err(|e| e.to_string())?;
    Ok(json!({
        "level": a,
        "omega": w.vec().as_slice(),
        "d_value": s.d_value,
        "radii": s.radii,
        "values": s.values,
        "bound": s.bound,
        "bound_ratio": s.bound_ratio(),
        "exponent": s.exponent,
        "mass": quad.mass(),
    })
    .to_string())
}

/// Curvatures of the level set through `p`.
#[wasm_bindgen]
pub fn curvature(p1: f64, p2: f64, p3: f64) -> Result<String, JsError> {
    curvature_json(p1, p2, p3).map_err(|e| JsError::new(&e))
}

/// Zero-curvature curve and tangential points of `{e = a}`.
#[wasm_bindgen]
pub fn gamma(a: f64) -> Result<String, JsError> {
    gamma_json(a).map_err(|e| JsError::new(&e))
}

/// `|mu_hat(r omega)|` for `1 <= r <= r_max` with the unit-constant bound.
#[wasm_bindgen]
pub fn decay(a: f64, wx: f64, wy: f64, wz: f64, r_max: f64) -> Result<String, JsError> {
    decay_json(a, wx, wy, wz, r_max).map_err(|e| JsError::new(&e))
}
