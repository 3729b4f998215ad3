pub mod anisotropy;
pub mod checks;
pub mod contour;
pub mod distance;
pub mod error;
pub mod flow;
pub mod grid;
pub mod oracles;
pub mod raster;
pub mod solver;
pub mod stencil;

pub use anisotropy::{Anisotropy, AnisotropySpec};
pub use error::{AtwError, Result};
pub use grid::{GridDomain, IndicatorField, ScalarField, Shape, VectorField};
