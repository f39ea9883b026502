//! Surface geometry and oscillatory-integral estimates for the level sets of
//! the cubic-lattice dispersion relation `e(p) = 3 - cos p1 - cos p2 - cos p3`
//! on the torus `[-pi, pi)^3`.
//!
//! The crate is organised bottom-up:
//!
//! * [`dispersion`]: closed-form `e`, its derivatives, curvature fields and the
//!   cutoff function.
//! * [`levelset`]: periodic meshing of `{e = a}` and surface quadrature.
//! * [`curvegeom`]: the zero-curvature curve, tangential points and sampled
//!   assumption certificates.
//! * [`oscillatory`]: Fourier transform of the surface measure, decay scans and
//!   the `L^4` integral.
//! * [`denominators`]: resolvent-denominator integrals on periodic grids.
//! * [`fit`], [`rng`], [`cache`], [`output`]: fitting, seeding, artifact
//!   storage and CSV formatting.

pub mod cache;
pub mod curvegeom;
pub mod denominators;
pub mod dispersion;
mod error;
pub mod fit;
pub mod levelset;
pub mod oscillatory;
pub mod output;
mod par;
pub mod rng;

pub use error::{Error, Result};

pub use dispersion::{CurvatureSample, CutoffSpec, Direction, TorusPoint};
pub use levelset::SurfaceMesh;
