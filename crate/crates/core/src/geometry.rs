//! Poses, the pinhole camera, depth back-projection and the timestamped
//! pose buffer used to compensate detector latency.

use std::collections::VecDeque;
use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix3, Point3, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("quaternion norm {0} is not within 1e-9 of 1")]
    NonUnitQuaternion(f64),
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(&'static str),
    #[error("invalid bounding box: {0}")]
    InvalidBox(&'static str),
    #[error("no valid depth pixel inside the detection box")]
    NoValidDepth,
    #[error("pose buffer is empty")]
    EmptyBuffer,
    #[error("timestamp {new} does not follow the last buffered timestamp {last}")]
    NonMonotonicTimestamp { last: f64, new: f64 },
    #[error("point cloud is expected in the {expected:?} frame")]
    WrongFrame { expected: Frame },
}

/// Wraps an angle into (-π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// Planar pose of the robot or of a mapped object.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    #[serde(default)]
    pub theta: f64,
}

impl Pose2D {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: wrap_angle(theta),
        }
    }

    pub fn identity() -> Self {
        Self::default()
    }

    /// `self ∘ other`: `other` is expressed in the frame of `self`.
    pub fn compose(&self, other: &Pose2D) -> Pose2D {
        let (s, c) = self.theta.sin_cos();
        Pose2D::new(
            self.x + c * other.x - s * other.y,
            self.y + s * other.x + c * other.y,
            self.theta + other.theta,
        )
    }

    pub fn inverse(&self) -> Pose2D {
        let (s, c) = self.theta.sin_cos();
        Pose2D::new(
            -(c * self.x + s * self.y),
            s * self.x - c * self.y,
            -self.theta,
        )
    }

    /// Expresses `other` in the frame of `self`, i.e. `self⁻¹ ∘ other`.
    pub fn relative(&self, other: &Pose2D) -> Pose2D {
        self.inverse().compose(other)
    }

    pub fn distance_to(&self, other: &Pose2D) -> f64 {
        (other.x - self.x).hypot(other.y - self.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.theta.is_finite()
    }
}

/// Rigid transform in 3D. Used for camera extrinsics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose3D {
    pub translation: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
}

impl Pose3D {
    pub fn identity() -> Self {
        Self {
            translation: Vector3::zeros(),
            rotation: UnitQuaternion::identity(),
        }
    }

    /// Builds a pose from a translation and a (w, x, y, z) quaternion that must
    /// already be unit length.
    pub fn from_parts(translation: [f64; 3], wxyz: [f64; 4]) -> Result<Self, GeometryError> {
        let q = nalgebra::Quaternion::new(wxyz[0], wxyz[1], wxyz[2], wxyz[3]);
        let norm = q.norm();
        if !norm.is_finite() || (norm - 1.0).abs() > 1e-9 {
            return Err(GeometryError::NonUnitQuaternion(norm));
        }
        Ok(Self {
            translation: Vector3::from(translation),
            rotation: UnitQuaternion::new_unchecked(q),
        })
    }

    pub fn from_yaw(translation: [f64; 3], yaw: f64) -> Self {
        Self {
            translation: Vector3::from(translation),
            rotation: UnitQuaternion::from_euler_angles(0.0, 0.0, yaw),
        }
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &Pose3D) -> Pose3D {
        Pose3D {
            translation: self.rotation * other.translation + self.translation,
            rotation: self.rotation * other.rotation,
        }
    }

    pub fn transform_point(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * p.coords + self.translation)
    }
}

/// Pose of a level, forward-looking optical camera (x right, y down, z
/// forward) mounted `mount_height` above the robot's ground position.
pub fn camera_pose_from_robot(robot: &Pose2D, mount_height: f64) -> Pose3D {
    let (s, c) = robot.theta.sin_cos();
    let axes = Matrix3::from_columns(&[
        Vector3::new(s, -c, 0.0),
        Vector3::new(0.0, 0.0, -1.0),
        Vector3::new(c, s, 0.0),
    ]);
    let rotation = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(axes));
    Pose3D {
        translation: Vector3::new(robot.x, robot.y, mount_height),
        rotation,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        Self {
            fx: 525.0,
            fy: 525.0,
            cx: 319.5,
            cy: 239.5,
            width: 640,
            height: 480,
        }
    }
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.fx > 0.0 && self.fy > 0.0) || !self.fx.is_finite() || !self.fy.is_finite() {
            return Err(GeometryError::InvalidIntrinsics("focal lengths must be positive"));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64) {
            return Err(GeometryError::InvalidIntrinsics("cx outside the image"));
        }
        if !(self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(GeometryError::InvalidIntrinsics("cy outside the image"));
        }
        Ok(())
    }

    /// Pixel coordinates of a camera-frame point, `None` behind the camera.
    pub fn project(&self, p: &Point3<f64>) -> Option<(f64, f64)> {
        if p.z <= 0.0 {
            return None;
        }
        Some((self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }

    /// Camera-frame ray through pixel (u, v), scaled to unit depth.
    pub fn ray(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    pub fn horizontal_fov(&self) -> f64 {
        2.0 * (self.width as f64 / (2.0 * self.fx)).atan()
    }
}

/// Detection box in pixels, stored as center and size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub center_x: f64,
    pub center_y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn from_corners(u_min: f64, v_min: f64, u_max: f64, v_max: f64) -> Self {
        Self {
            center_x: 0.5 * (u_min + u_max),
            center_y: 0.5 * (v_min + v_max),
            w: u_max - u_min,
            h: v_max - v_min,
        }
    }

    pub fn left(&self) -> f64 {
        self.center_x - 0.5 * self.w
    }
    pub fn right(&self) -> f64 {
        self.center_x + 0.5 * self.w
    }
    pub fn top(&self) -> f64 {
        self.center_y - 0.5 * self.h
    }
    pub fn bottom(&self) -> f64 {
        self.center_y + 0.5 * self.h
    }

    /// Half-open containment test on pixel coordinates.
    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= self.left() && u < self.right() && v >= self.top() && v < self.bottom()
    }

    pub fn validate(&self, intr: &CameraIntrinsics) -> Result<(), GeometryError> {
        if !(self.w > 0.0 && self.h > 0.0) || !self.center_x.is_finite() || !self.center_y.is_finite() {
            return Err(GeometryError::InvalidBox("width and height must be positive"));
        }
        if self.right() <= 0.0
            || self.bottom() <= 0.0
            || self.left() >= intr.width as f64
            || self.top() >= intr.height as f64
        {
            return Err(GeometryError::InvalidBox("box does not intersect the image"));
        }
        Ok(())
    }
}

/// Coordinate frame a cloud is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Frame {
    Camera,
    Map,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3<f64>>,
    pub frame: Frame,
}

impl PointCloud {
    pub fn new(points: Vec<Point3<f64>>, frame: Frame) -> Self {
        debug_assert!(points.iter().all(|p| p.iter().all(|c| c.is_finite())));
        Self { points, frame }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Option<Point3<f64>> {
        centroid_of(self.points.iter())
    }
}

pub(crate) fn centroid_of<'a>(points: impl Iterator<Item = &'a Point3<f64>>) -> Option<Point3<f64>> {
    let mut sum = Vector3::zeros();
    let mut n = 0usize;
    for p in points {
        sum += p.coords;
        n += 1;
    }
    (n > 0).then(|| Point3::from(sum / n as f64))
}

/// Depth samples of a rectangular image region, taken every `stride` pixels
/// starting at pixel (`u0`, `v0`). Depth is in meters; zero or non-finite
/// marks a missing reading.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthPatch {
    pub u0: u32,
    pub v0: u32,
    pub stride: u32,
    pub cols: u32,
    pub rows: u32,
    pub depth: Vec<f64>,
}

impl DepthPatch {
    pub fn single(u: u32, v: u32, depth: f64) -> Self {
        Self {
            u0: u,
            v0: v,
            stride: 1,
            cols: 1,
            rows: 1,
            depth: vec![depth],
        }
    }

    pub fn is_consistent(&self) -> bool {
        self.stride > 0 && self.depth.len() == (self.cols as usize) * (self.rows as usize)
    }

    pub fn pixel(&self, col: u32, row: u32) -> (u32, u32) {
        (self.u0 + col * self.stride, self.v0 + row * self.stride)
    }
}

/// Pixels are visited at most every second row and column.
pub const MIN_PIXEL_STEP: u32 = 2;

/// Lifts the valid depth pixels of `patch` that fall inside `bbox` to 3D
/// camera-frame points through the pinhole model.
pub fn backproject_box(
    patch: &DepthPatch,
    intr: &CameraIntrinsics,
    bbox: &BoundingBox,
) -> Result<PointCloud, GeometryError> {
    intr.validate()?;
    bbox.validate(intr)?;
    if !patch.is_consistent() {
        return Err(GeometryError::InvalidBox("depth patch size does not match its shape"));
    }
    let skip = MIN_PIXEL_STEP.div_ceil(patch.stride).max(1);
    let mut points = Vec::new();
    for row in (0..patch.rows).step_by(skip as usize) {
        for col in (0..patch.cols).step_by(skip as usize) {
            let z = patch.depth[(row * patch.cols + col) as usize];
            if !(z.is_finite() && z > 0.0) {
                continue;
            }
            let (u, v) = patch.pixel(col, row);
            let (u, v) = (u as f64, v as f64);
            if !bbox.contains(u, v) {
                continue;
            }
            points.push(Point3::from(intr.ray(u, v) * z));
        }
    }
    if points.is_empty() {
        return Err(GeometryError::NoValidDepth);
    }
    Ok(PointCloud::new(points, Frame::Camera))
}

/// Moves a camera-frame cloud into the map frame.
pub fn transform_cloud(cloud: &PointCloud, cam_pose: &Pose3D) -> Result<PointCloud, GeometryError> {
    if cloud.frame != Frame::Camera {
        return Err(GeometryError::WrongFrame {
            expected: Frame::Camera,
        });
    }
    Ok(PointCloud::new(
        cloud.points.iter().map(|p| cam_pose.transform_point(p)).collect(),
        Frame::Map,
    ))
}

/// Drops the vertical component of a map-frame point.
pub fn project_to_ground(p: &Point3<f64>) -> (f64, f64) {
    (p.x, p.y)
}

pub const DEFAULT_POSE_BUFFER_CAPACITY: usize = 512;

/// Bounded history of timestamped robot poses. Oldest samples are evicted.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseBuffer {
    capacity: usize,
    samples: VecDeque<(f64, Pose2D)>,
}

impl Default for PoseBuffer {
    fn default() -> Self {
        Self::with_capacity(DEFAULT_POSE_BUFFER_CAPACITY)
    }
}

impl PoseBuffer {
    pub fn with_capacity(capacity: usize) -> Self {
        let capacity = capacity.max(1);
        Self {
            capacity,
            samples: VecDeque::with_capacity(capacity),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn oldest(&self) -> Option<f64> {
        self.samples.front().map(|s| s.0)
    }

    pub fn push(&mut self, t: f64, pose: Pose2D) -> Result<(), GeometryError> {
        if let Some(&(last, _)) = self.samples.back() {
            if !(t > last) {
                return Err(GeometryError::NonMonotonicTimestamp { last, new: t });
            }
        }
        if self.samples.len() == self.capacity {
            self.samples.pop_front();
        }
        self.samples.push_back((t, pose));
        Ok(())
    }

    /// Pose at time `t`: linear in position, shortest arc in heading, and
    /// clamped to the nearest endpoint outside the buffered span.
    pub fn pose_at(&self, t: f64) -> Result<Pose2D, GeometryError> {
        let (&(t_first, first), &(t_last, last)) = match (self.samples.front(), self.samples.back()) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(GeometryError::EmptyBuffer),
        };
        if t <= t_first {
            return Ok(first);
        }
        if t >= t_last {
            return Ok(last);
        }
        // first index with timestamp > t; guaranteed in 1..len
        let hi = self.samples.partition_point(|&(ts, _)| ts <= t);
        let (t0, a) = self.samples[hi - 1];
        let (t1, b) = self.samples[hi];
        let alpha = (t - t0) / (t1 - t0);
        Ok(Pose2D::new(
            a.x + alpha * (b.x - a.x),
            a.y + alpha * (b.y - a.y),
            a.theta + alpha * wrap_angle(b.theta - a.theta),
        ))
    }
}
