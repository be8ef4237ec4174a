pub mod error;
pub mod geometry;
pub mod onedim;
pub mod sde;
pub mod bridge;
pub mod reflection;
pub mod montecarlo;

pub use error::{CouplingError, Result};
pub use geometry::{Curvature, CylPoint, Flagged, FrameIsometry, SurfacePoint};
pub use montecarlo::{McConfig, TailCurve};
