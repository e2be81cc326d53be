//! Differentiable view synthesis with combined projected uncertainty, the
//! losses built on it, a desk-scale scene generator and optimizer, and a
//! trajectory evaluation toolkit.

pub mod autodiff;
pub mod coprou;
pub mod evalkit;
pub mod field;
pub mod geometry;
pub mod losses;
pub mod photometric;
pub mod synthopt;
pub mod warp;

pub use autodiff::{Dual, Real};
pub use coprou::{LaplacePair, UncertaintyMode, SIGMA_FLOOR};
pub use evalkit::{SimilarityTransform, Trajectory};
pub use field::{Field, ScalarField, ValidityMask};
pub use geometry::{CameraIntrinsics, PixelCoord, Pose6};
pub use losses::{FrameInputs, LossBreakdown, LossWeights, ObjectiveConfig};
pub use photometric::ResidualConfig;
pub use synthopt::{OptimReport, OptimState, PatchSpec, SceneSpec, Schedule, SyntheticScene};
