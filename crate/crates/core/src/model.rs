//! Camera trajectories and the files they come from.
//!
//! Two pose formats are understood: NeRF-style `transforms.json` (4×4
//! camera-to-world matrices) and a flat CSV with a position and a unit
//! quaternion per row. Feature vectors come separately, either as a JSON map
//! or as a little-endian `VSFT` binary sidecar, and are attached afterwards.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Matrix4, Quaternion, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Orthonormality tolerance for ingested rotations.
pub const ROTATION_TOLERANCE: f64 = 1e-6;

/// Half-width of the cube positions are normalized into.
pub const SCENE_HALF_EXTENT: f64 = 4.0;

const FEATURE_MAGIC: &[u8; 4] = b"VSFT";

#[derive(Debug, Clone, PartialEq)]
pub struct CameraView {
    /// 0-based frame index, contiguous within a trajectory.
    pub id: usize,
    pub position: Vector3<f64>,
    /// Camera-to-world rotation.
    pub rotation: Matrix3<f64>,
    /// Unit-norm semantic feature, if one was attached.
    pub feature: Option<Vec<f64>>,
    pub frame_time: Option<f64>,
}

impl CameraView {
    pub fn new(id: usize, position: Vector3<f64>, rotation: Matrix3<f64>) -> Self {
        CameraView {
            id,
            position,
            rotation,
            feature: None,
            frame_time: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn of_points<'a>(points: impl IntoIterator<Item = &'a Vector3<f64>>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = it.next()?;
        let mut min = [first.x, first.y, first.z];
        let mut max = min;
        for p in it {
            for a in 0..3 {
                min[a] = min[a].min(p[a]);
                max[a] = max[a].max(p[a]);
            }
        }
        Some(Aabb { min, max })
    }

    pub fn extent(&self) -> [f64; 3] {
        [
            self.max[0] - self.min[0],
            self.max[1] - self.min[1],
            self.max[2] - self.min[2],
        ]
    }

    pub fn center(&self) -> Vector3<f64> {
        Vector3::new(
            0.5 * (self.min[0] + self.max[0]),
            0.5 * (self.min[1] + self.max[1]),
            0.5 * (self.min[2] + self.max[2]),
        )
    }
}

/// An ordered capture. View order is capture order.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    views: Vec<CameraView>,
    pub bounds: Aabb,
    pub source_path: String,
    /// Vertical field of view in radians, when the pose file carried intrinsics.
    pub fov_y: Option<f64>,
    pub aspect: Option<f64>,
}

impl Trajectory {
    /// Builds a trajectory from views already in capture order. Ids are
    /// rewritten to `0..n`.
    pub fn from_views(mut views: Vec<CameraView>, source_path: impl Into<String>) -> Result<Self> {
        if views.is_empty() {
            return Err(Error::Config("a trajectory needs at least one view".into()));
        }
        for (i, v) in views.iter_mut().enumerate() {
            v.id = i;
            check_rotation(i, &v.rotation)?;
        }
        let bounds = Aabb::of_points(views.iter().map(|v| &v.position)).expect("non-empty");
        Ok(Trajectory {
            views,
            bounds,
            source_path: source_path.into(),
            fov_y: None,
            aspect: None,
        })
    }

    pub fn views(&self) -> &[CameraView] {
        &self.views
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    pub fn has_features(&self) -> bool {
        self.views.iter().all(|v| v.feature.is_some())
    }

    /// Attaches a feature table. An empty table is a no-op; any other table
    /// must cover exactly the ids `0..n`.
    pub fn attach_features(&mut self, table: &FeatureTable) -> Result<()> {
        if table.is_empty() {
            return Ok(());
        }
        if let Some(extra) = table.rows.keys().find(|&&id| id >= self.views.len()) {
            return Err(Error::Validation {
                frame: *extra,
                message: format!(
                    "feature table references frame {extra} but the trajectory has {} views",
                    self.views.len()
                ),
            });
        }
        if let Some(missing) = (0..self.views.len()).find(|id| !table.rows.contains_key(id)) {
            return Err(Error::Validation {
                frame: missing,
                message: "feature table is partial: no vector for this frame".into(),
            });
        }
        for v in &mut self.views {
            v.feature = Some(table.rows[&v.id].clone());
        }
        Ok(())
    }
}

fn check_rotation(frame: usize, r: &Matrix3<f64>) -> Result<()> {
    if !r.iter().all(|x| x.is_finite()) {
        return Err(Error::Validation {
            frame,
            message: "rotation has non-finite entries".into(),
        });
    }
    let gram_err = (r.transpose() * r - Matrix3::identity()).amax();
    let det = r.determinant();
    if gram_err > ROTATION_TOLERANCE || (det - 1.0).abs() > ROTATION_TOLERANCE {
        return Err(Error::Validation {
            frame,
            message: format!(
                "rotation is not orthonormal (max |RᵀR − I| = {gram_err:.3e}, det = {det:.9})"
            ),
        });
    }
    Ok(())
}

/// Quaternion `(w, x, y, z)` to a rotation matrix, normalizing first.
pub fn quaternion_to_matrix(w: f64, x: f64, y: f64, z: f64) -> Option<Matrix3<f64>> {
    let q = Quaternion::new(w, x, y, z);
    let norm = q.norm();
    if !norm.is_finite() || norm < 1e-12 {
        return None;
    }
    Some(
        *UnitQuaternion::from_quaternion(q)
            .to_rotation_matrix()
            .matrix(),
    )
}

/// Rotation matrix to a unit quaternion `(w, x, y, z)` with `w >= 0`.
pub fn matrix_to_quaternion(r: &Matrix3<f64>) -> [f64; 4] {
    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*r));
    let (w, i, j, k) = (q.w, q.i, q.j, q.k);
    if w < 0.0 {
        [-w, -i, -j, -k]
    } else {
        [w, i, j, k]
    }
}

/// Weights of the position, orientation and semantic terms of the affinity
/// matrix, plus the Gaussian bandwidth for the position term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub sigma: f64,
}

impl Default for DistanceWeights {
    fn default() -> Self {
        DistanceWeights {
            alpha: 0.7,
            beta: 0.2,
            gamma: 0.1,
            sigma: 0.5,
        }
    }
}

impl DistanceWeights {
    pub fn new(alpha: f64, beta: f64, gamma: f64, sigma: f64) -> Result<Self> {
        let w = DistanceWeights {
            alpha,
            beta,
            gamma,
            sigma,
        };
        w.validate()?;
        Ok(w)
    }

    /// Weights on the simplex (each in `[0, 1]`, summing to 1 within 1e-9), `sigma > 0`.
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
        ] {
            if !(0.0..=1.0).contains(&w) {
                return Err(Error::Config(format!("{name} = {w} is outside [0, 1]")));
            }
        }
        let sum = self.alpha + self.beta + self.gamma;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "alpha + beta + gamma = {sum} but must equal 1"
            )));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!(
                "sigma = {} must be positive",
                self.sigma
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoseFormat {
    TransformsJson,
    PoseCsv,
}

impl PoseFormat {
    /// Guesses the format from the file extension (`.csv` or anything else as JSON).
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => PoseFormat::PoseCsv,
            _ => PoseFormat::TransformsJson,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TransformsFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    camera_angle_x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    camera_angle_y: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    w: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    h: Option<f64>,
    frames: Vec<TransformsFrame>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TransformsFrame {
    file_path: String,
    transform_matrix: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    time: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PoseRow {
    id: i64,
    tx: f64,
    ty: f64,
    tz: f64,
    qw: f64,
    qx: f64,
    qy: f64,
    qz: f64,
}

pub fn load_trajectory(path: &Path, format: PoseFormat) -> Result<Trajectory> {
    match format {
        PoseFormat::TransformsJson => load_transforms_json(path),
        PoseFormat::PoseCsv => load_pose_csv(path),
    }
}

fn load_transforms_json(path: &Path) -> Result<Trajectory> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: TransformsFile = serde_json::from_str(&text)
        .map_err(|e| Error::parse(path, format!("line {} column {}", e.line(), e.column()), e))?;
    if file.frames.is_empty() {
        return Err(Error::parse(path, "frames", "no frames"));
    }

    let mut frames: Vec<(usize, TransformsFrame)> = file.frames.into_iter().enumerate().collect();
    // Capture order: explicit timestamps when every frame has one, else file name.
    if frames.iter().all(|(_, f)| f.time.is_some()) {
        frames.sort_by(|a, b| a.1.time.unwrap().total_cmp(&b.1.time.unwrap()));
    } else {
        frames.sort_by(|a, b| a.1.file_path.cmp(&b.1.file_path));
    }

    let mut views = Vec::with_capacity(frames.len());
    for (id, (file_idx, frame)) in frames.into_iter().enumerate() {
        let loc = || format!("frame {file_idx} ({})", frame.file_path);
        let m = &frame.transform_matrix;
        if m.len() != 4 || m.iter().any(|row| row.len() != 4) {
            return Err(Error::parse(path, loc(), "transform_matrix must be 4x4"));
        }
        let mat = Matrix4::from_fn(|r, c| m[r][c]);
        let rotation: Matrix3<f64> = mat.fixed_view::<3, 3>(0, 0).into_owned();
        let position = Vector3::new(mat[(0, 3)], mat[(1, 3)], mat[(2, 3)]);
        check_rotation(id, &rotation).map_err(|e| match e {
            Error::Validation { message, .. } => Error::Validation {
                frame: id,
                message: format!("{message} [{}]", loc()),
            },
            other => other,
        })?;
        let mut view = CameraView::new(id, position, rotation);
        view.frame_time = frame.time;
        views.push(view);
    }

    let mut traj = Trajectory::from_views(views, path.display().to_string())?;
    traj.fov_y = match (file.camera_angle_y, file.camera_angle_x, file.w, file.h) {
        (Some(fy), _, _, _) => Some(fy),
        (None, Some(fx), Some(w), Some(h)) if w > 0.0 && h > 0.0 => {
            Some(2.0 * ((fx / 2.0).tan() * h / w).atan())
        }
        _ => None,
    };
    traj.aspect = match (file.w, file.h) {
        (Some(w), Some(h)) if w > 0.0 && h > 0.0 => Some(w / h),
        _ => None,
    };
    Ok(traj)
}

fn load_pose_csv(path: &Path) -> Result<Trajectory> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::parse(path, "header", e))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::parse(path, "header", e))?
        .clone();
    let expected = ["id", "tx", "ty", "tz", "qw", "qx", "qy", "qz"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::parse(
            path,
            "line 1",
            format!("expected header `{}`", expected.join(",")),
        ));
    }

    let mut views = Vec::new();
    for (id, record) in reader.deserialize::<PoseRow>().enumerate() {
        let row = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(id as u64 + 2);
            Error::parse(path, format!("line {line}"), e)
        })?;
        let rotation = quaternion_to_matrix(row.qw, row.qx, row.qy, row.qz).ok_or_else(|| {
            Error::Validation {
                frame: id,
                message: format!(
                    "quaternion for row id {} has zero or non-finite norm",
                    row.id
                ),
            }
        })?;
        check_rotation(id, &rotation)?;
        views.push(CameraView::new(
            id,
            Vector3::new(row.tx, row.ty, row.tz),
            rotation,
        ));
    }
    if views.is_empty() {
        return Err(Error::parse(path, "line 2", "no pose rows"));
    }
    Trajectory::from_views(views, path.display().to_string())
}

/// Writes a trajectory in either pose format. Frame times and intrinsics are
/// kept for `transforms_json`; CSV carries poses only.
pub fn save_trajectory(traj: &Trajectory, path: &Path, format: PoseFormat) -> Result<()> {
    match format {
        PoseFormat::TransformsJson => {
            let frames = traj
                .views()
                .iter()
                .map(|v| {
                    let mut m: Vec<Vec<f64>> = (0..3)
                        .map(|r| {
                            vec![
                                v.rotation[(r, 0)],
                                v.rotation[(r, 1)],
                                v.rotation[(r, 2)],
                                v.position[r],
                            ]
                        })
                        .collect();
                    m.push(vec![0.0, 0.0, 0.0, 1.0]);
                    TransformsFrame {
                        file_path: format!("frame_{:06}", v.id),
                        transform_matrix: m,
                        time: v.frame_time,
                    }
                })
                .collect();
            let file = TransformsFile {
                camera_angle_x: None,
                camera_angle_y: traj.fov_y,
                w: traj.aspect,
                h: traj.aspect.map(|_| 1.0),
                frames,
            };
            let text = serde_json::to_string_pretty(&file).expect("serializable");
            fs::write(path, text).map_err(|e| Error::io(path, e))
        }
        PoseFormat::PoseCsv => {
            let mut writer =
                csv::Writer::from_path(path).map_err(|e| Error::parse(path, "write", e))?;
            for v in traj.views() {
                let [qw, qx, qy, qz] = matrix_to_quaternion(&v.rotation);
                writer
                    .serialize(PoseRow {
                        id: v.id as i64,
                        tx: v.position.x,
                        ty: v.position.y,
                        tz: v.position.z,
                        qw,
                        qx,
                        qy,
                        qz,
                    })
                    .map_err(|e| Error::parse(path, format!("frame {}", v.id), e))?;
            }
            writer.flush().map_err(|e| Error::io(path, e))
        }
    }
}

/// Uniformly rescales positions so their bounding box is centered and its
/// longest side spans `[-4, 4]`. A trajectory with zero extent collapses to
/// the origin.
pub fn normalize_positions(mut traj: Trajectory) -> Trajectory {
    let center = traj.bounds.center();
    let longest = traj.bounds.extent().into_iter().fold(0.0, f64::max);
    let scale = if longest > 0.0 {
        2.0 * SCENE_HALF_EXTENT / longest
    } else {
        0.0
    };
    for v in &mut traj.views {
        v.position = (v.position - center) * scale;
    }
    traj.bounds = Aabb::of_points(traj.views.iter().map(|v| &v.position)).expect("non-empty");
    traj
}

/// Frame id → unit-norm feature vector.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureTable {
    rows: BTreeMap<usize, Vec<f64>>,
}

impl FeatureTable {
    /// Builds a table, L2-normalizing each vector.
    pub fn from_rows(rows: impl IntoIterator<Item = (usize, Vec<f64>)>) -> Result<Self> {
        let mut out = BTreeMap::new();
        let mut dim = None;
        for (id, mut v) in rows {
            match dim {
                None => dim = Some(v.len()),
                Some(d) if d != v.len() => {
                    return Err(Error::Validation {
                        frame: id,
                        message: format!("feature dimension {} differs from {d}", v.len()),
                    })
                }
                _ => {}
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !norm.is_finite() || norm == 0.0 {
                return Err(Error::Validation {
                    frame: id,
                    message: "feature vector is zero or non-finite and cannot be normalized".into(),
                });
            }
            v.iter_mut().for_each(|x| *x /= norm);
            out.insert(id, v);
        }
        Ok(FeatureTable { rows: out })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.rows.values().next().map(Vec::len)
    }

    pub fn get(&self, id: usize) -> Option<&[f64]> {
        self.rows.get(&id).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &[f64])> {
        self.rows.iter().map(|(k, v)| (*k, v.as_slice()))
    }
}

/// Reads a features file. Binary `VSFT` sidecars are recognized by their
/// magic; anything else is parsed as a JSON object of id → vector.
pub fn load_features(path: &Path) -> Result<FeatureTable> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.iter().all(u8::is_ascii_whitespace) {
        return Ok(FeatureTable::default());
    }
    if bytes.starts_with(FEATURE_MAGIC) {
        return parse_features_binary(path, &bytes);
    }
    let map: BTreeMap<String, Vec<f64>> = serde_json::from_slice(&bytes)
        .map_err(|e| Error::parse(path, format!("line {} column {}", e.line(), e.column()), e))?;
    let mut rows = Vec::with_capacity(map.len());
    for (key, v) in map {
        let id: usize = key.parse().map_err(|_| {
            Error::parse(
                path,
                format!("key {key:?}"),
                "frame id is not a non-negative integer",
            )
        })?;
        rows.push((id, v));
    }
    FeatureTable::from_rows(rows)
}

fn parse_features_binary(path: &Path, bytes: &[u8]) -> Result<FeatureTable> {
    let header = bytes
        .get(4..12)
        .ok_or_else(|| Error::parse(path, "header", "truncated VSFT header"))?;
    let count = u32::from_le_bytes(header[0..4].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let body = &bytes[12..];
    let expected = count
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::parse(path, "header", "count × dim overflows"))?;
    if body.len() != expected {
        return Err(Error::parse(
            path,
            "body",
            format!(
                "expected {expected} bytes for {count}×{dim} floats, found {}",
                body.len()
            ),
        ));
    }
    let rows = (0..count).map(|i| {
        let row = body[i * dim * 4..(i + 1) * dim * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        (i, row)
    });
    FeatureTable::from_rows(rows)
}

/// Writes the binary sidecar. Ids must be contiguous from 0.
pub fn save_features_binary(table: &FeatureTable, path: &Path) -> Result<()> {
    let dim = table.dim().unwrap_or(0);
    let mut out = Vec::with_capacity(12 + table.len() * dim * 4);
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&(table.len() as u32).to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    for (expect, (id, row)) in table.iter().enumerate() {
        if id != expect {
            return Err(Error::Validation {
                frame: expect,
                message: "binary feature files need contiguous ids".into(),
            });
        }
        for &x in row {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn save_features_json(table: &FeatureTable, path: &Path) -> Result<()> {
    let map: BTreeMap<String, &[f64]> = table.iter().map(|(k, v)| (k.to_string(), v)).collect();
    let text = serde_json::to_string(&map).expect("serializable");
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
