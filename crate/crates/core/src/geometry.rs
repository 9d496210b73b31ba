//! Voxel regions, view frusta and angular histograms for the coverage utility.
//!
//! Cameras follow the `transforms.json` convention: the rotation is
//! camera-to-world, the camera looks down its local `-z` axis and `+y` is up.

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Aabb, CameraView, Trajectory, SCENE_HALF_EXTENT};

/// Regular grid of voxel centers. Each center stands for one region.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub aabb: Aabb,
    pub resolution: [usize; 3],
    pub centers: Vec<Vector3<f64>>,
}

impl VoxelGrid {
    /// Cell-midpoint grid over an arbitrary box, x varying fastest.
    pub fn over(aabb: Aabb, resolution: [usize; 3]) -> Result<Self> {
        if resolution.iter().any(|&r| r < 1) {
            return Err(Error::Config(format!(
                "grid resolution must be at least 1 per axis, got {resolution:?}"
            )));
        }
        let ext = aabb.extent();
        let step = [
            ext[0] / resolution[0] as f64,
            ext[1] / resolution[1] as f64,
            ext[2] / resolution[2] as f64,
        ];
        let mut centers = Vec::with_capacity(resolution.iter().product());
        for iz in 0..resolution[2] {
            for iy in 0..resolution[1] {
                for ix in 0..resolution[0] {
                    centers.push(Vector3::new(
                        aabb.min[0] + (ix as f64 + 0.5) * step[0],
                        aabb.min[1] + (iy as f64 + 0.5) * step[1],
                        aabb.min[2] + (iz as f64 + 0.5) * step[2],
                    ));
                }
            }
        }
        Ok(VoxelGrid {
            aabb,
            resolution,
            centers,
        })
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }
}

/// Grid over the normalized scene cube `[-4, 4]³` with `resolution` cells per axis.
pub fn build_grid(_traj: &Trajectory, resolution: usize) -> Result<VoxelGrid> {
    let h = SCENE_HALF_EXTENT;
    VoxelGrid::over(
        Aabb {
            min: [-h; 3],
            max: [h; 3],
        },
        [resolution; 3],
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrustumParams {
    /// Vertical field of view, radians.
    pub fov_y: f64,
    /// Width over height.
    pub aspect: f64,
    pub near: f64,
    pub far: f64,
}

impl Default for FrustumParams {
    fn default() -> Self {
        FrustumParams {
            fov_y: std::f64::consts::FRAC_PI_2,
            aspect: 1.0,
            near: 0.05,
            far: 20.0,
        }
    }
}

impl FrustumParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.fov_y > 0.0 && self.fov_y < std::f64::consts::PI) {
            return Err(Error::Config(format!(
                "fov_y = {} rad must lie in (0, π)",
                self.fov_y
            )));
        }
        if !(self.aspect > 0.0 && self.aspect.is_finite()) {
            return Err(Error::Config(format!(
                "aspect = {} must be positive",
                self.aspect
            )));
        }
        if !(self.near > 0.0 && self.near < self.far && self.far.is_finite()) {
            return Err(Error::Config(format!(
                "need 0 < near < far, got near = {} far = {}",
                self.near, self.far
            )));
        }
        Ok(())
    }
}

/// Whether `point` lies inside the view's truncated pyramid.
pub fn frustum_covers(view: &CameraView, params: &FrustumParams, point: &Vector3<f64>) -> bool {
    let local = view.rotation.transpose() * (point - view.position);
    let depth = -local.z;
    if depth < params.near || depth > params.far {
        return false;
    }
    let half_h = (params.fov_y / 2.0).tan() * depth;
    let half_w = half_h * params.aspect;
    local.y.abs() <= half_h && local.x.abs() <= half_w
}

/// Discretization of observation directions: each direction on the sphere
/// belongs to the bin whose unit vector it is most aligned with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngularBins {
    directions: Vec<[f64; 3]>,
}

impl AngularBins {
    pub fn new(directions: Vec<[f64; 3]>) -> Result<Self> {
        if directions.len() < 2 {
            return Err(Error::Config("need at least two angular bins".into()));
        }
        if directions.len() > u16::MAX as usize {
            return Err(Error::Config("too many angular bins".into()));
        }
        let directions = directions
            .into_iter()
            .map(|d| {
                let v = Vector3::from(d);
                let n = v.norm();
                if !(n > 0.0 && n.is_finite()) {
                    return Err(Error::Config(format!(
                        "bin direction {d:?} cannot be normalized"
                    )));
                }
                let u = v / n;
                Ok([u.x, u.y, u.z])
            })
            .collect::<Result<_>>()?;
        Ok(AngularBins { directions })
    }

    /// `+x, -x, +y, -y, +z, -z`.
    pub fn axes() -> Self {
        AngularBins::new(vec![
            [1.0, 0.0, 0.0],
            [-1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, -1.0, 0.0],
            [0.0, 0.0, 1.0],
            [0.0, 0.0, -1.0],
        ])
        .expect("valid")
    }

    /// The 26 non-zero directions of the `{-1, 0, 1}³` lattice.
    pub fn lattice26() -> Self {
        let mut dirs = Vec::with_capacity(26);
        for x in [-1.0, 0.0, 1.0] {
            for y in [-1.0, 0.0, 1.0] {
                for z in [-1.0, 0.0, 1.0] {
                    if (x, y, z) != (0.0, 0.0, 0.0) {
                        dirs.push([x, y, z]);
                    }
                }
            }
        }
        AngularBins::new(dirs).expect("valid")
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    pub fn directions(&self) -> &[[f64; 3]] {
        &self.directions
    }
}

/// Bin of the unit vector from `voxel_center` toward `view_position`.
/// Exact ties go to the lower bin index.
pub fn direction_bin(
    view_position: &Vector3<f64>,
    voxel_center: &Vector3<f64>,
    bins: &AngularBins,
) -> Result<usize> {
    let d = view_position - voxel_center;
    let n = d.norm();
    if n == 0.0 {
        return Err(Error::Contract("camera coincides with voxel center".into()));
    }
    let u = d / n;
    let mut best = 0;
    let mut best_dot = f64::NEG_INFINITY;
    for (i, dir) in bins.directions.iter().enumerate() {
        let dot = u.x * dir[0] + u.y * dir[1] + u.z * dir[2];
        if dot > best_dot {
            best = i;
            best_dot = dot;
        }
    }
    Ok(best)
}

/// Total variation between a histogram's empirical distribution and the
/// uniform one over `n_bins`. An empty histogram counts as maximally
/// non-uniform (1).
pub fn total_variation(hist: &[u32], count: u32, n_bins: usize) -> f64 {
    if count == 0 {
        return 1.0;
    }
    let u = 1.0 / n_bins as f64;
    let c = count as f64;
    0.5 * hist.iter().map(|&h| (h as f64 / c - u).abs()).sum::<f64>()
}

/// Per-view coverage: for every view, the voxels inside its frustum and the
/// angular bin each is observed from.
#[derive(Debug, Clone)]
pub struct CoverageModel {
    pub grid: VoxelGrid,
    pub frustum: FrustumParams,
    pub bins: AngularBins,
    visible: Vec<Vec<(u32, u16)>>,
}

impl CoverageModel {
    pub fn build(
        traj: &Trajectory,
        grid: VoxelGrid,
        frustum: FrustumParams,
        bins: AngularBins,
    ) -> Result<Self> {
        frustum.validate()?;
        if grid.len() > u32::MAX as usize {
            return Err(Error::Config("voxel grid too large".into()));
        }
        let visible = traj
            .views()
            .par_iter()
            .map(|view| {
                grid.centers
                    .iter()
                    .enumerate()
                    .filter(|(_, c)| frustum_covers(view, &frustum, c))
                    .map(|(x, c)| {
                        let bin = direction_bin(&view.position, c, &bins)
                            .expect("covered voxels lie at positive depth");
                        (x as u32, bin as u16)
                    })
                    .collect()
            })
            .collect();
        Ok(CoverageModel {
            grid,
            frustum,
            bins,
            visible,
        })
    }

    pub fn n_views(&self) -> usize {
        self.visible.len()
    }

    pub fn n_voxels(&self) -> usize {
        self.grid.len()
    }

    pub fn n_bins(&self) -> usize {
        self.bins.len()
    }

    /// `(voxel, bin)` pairs observed by `view`, ascending by voxel.
    pub fn visible(&self, view: usize) -> &[(u32, u16)] {
        &self.visible[view]
    }
}

/// Accumulated coverage of a selected set: cover counts and direction
/// histograms per voxel, plus a cached total variation per voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageState {
    pub selected: Vec<usize>,
    in_set: Vec<bool>,
    counts: Vec<u32>,
    /// `n_voxels × n_bins`, row per voxel.
    hist: Vec<u32>,
    tv: Vec<f64>,
    n_bins: usize,
}

impl CoverageState {
    pub fn empty(n_views: usize, n_voxels: usize, n_bins: usize) -> Self {
        CoverageState {
            selected: Vec::new(),
            in_set: vec![false; n_views],
            counts: vec![0; n_voxels],
            hist: vec![0; n_voxels * n_bins],
            tv: vec![1.0; n_voxels],
            n_bins,
        }
    }

    pub fn contains(&self, view: usize) -> bool {
        self.in_set[view]
    }

    pub fn count(&self, voxel: usize) -> u32 {
        self.counts[voxel]
    }

    pub fn histogram(&self, voxel: usize) -> &[u32] {
        &self.hist[voxel * self.n_bins..(voxel + 1) * self.n_bins]
    }

    pub fn tv(&self, voxel: usize) -> f64 {
        self.tv[voxel]
    }

    /// Uniform reference density `1 / |bins|`.
    pub fn uniform_density(&self) -> f64 {
        1.0 / self.n_bins as f64
    }

    /// `c(x)`: fraction of the selected views covering `voxel`.
    pub fn cover_ratio(&self, voxel: usize) -> f64 {
        if self.selected.is_empty() {
            0.0
        } else {
            self.counts[voxel] as f64 / self.selected.len() as f64
        }
    }

    pub(crate) fn add(&mut self, view: usize, visible: &[(u32, u16)]) {
        self.in_set[view] = true;
        self.selected.push(view);
        for &(x, b) in visible {
            let x = x as usize;
            self.counts[x] += 1;
            self.hist[x * self.n_bins + b as usize] += 1;
            self.tv[x] = total_variation(
                &self.hist[x * self.n_bins..(x + 1) * self.n_bins],
                self.counts[x],
                self.n_bins,
            );
        }
    }
}
