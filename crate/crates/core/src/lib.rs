//! View subset selection for camera trajectories.
//!
//! Given `N` posed frames (optionally with image features), pick `K` of them
//! that maximize a diversity utility built on a pairwise affinity matrix, or
//! a voxel-coverage utility, using greedy marginal-gain selection.

pub mod distance;
pub mod error;
pub mod geometry;
pub mod model;
pub mod oracle;
pub mod selector;
pub mod utility;

pub use distance::{build_matrix, AffinityMatrix};
pub use error::{Error, Result};
pub use model::{
    load_features, load_trajectory, normalize_positions, CameraView, DistanceWeights, FeatureTable,
    PoseFormat, Trajectory,
};
pub use selector::{select, SampleSize, SelectionConfig, SelectionResult, Strategy};
pub use utility::{LogDet, MaxMinDistance, UniformCoverage, Utility};
