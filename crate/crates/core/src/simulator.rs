//! Scenario engine: a robot follows waypoints through an occupancy grid and
//! a simulated camera reports detection boxes with depth patches of the
//! objects it can see. Odometry drifts; loop closures snap it back.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::class::ClassLabel;
use crate::fitting::Detection;
use crate::geometry::{camera_pose_from_robot, BoundingBox, CameraIntrinsics, DepthPatch, Pose2D, Pose3D};
use crate::map_io::{load_grid, Cell, GroundTruthAnnotation, MapIoError, OccupancyGrid, DEFAULT_RESOLUTION};
use crate::pipeline::TrackingConfig;
use crate::tracker::NodeId;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error("trajectory: {0}")]
    Trajectory(String),
    #[error("trajectory leaves the grid at t={0}")]
    LeavesGrid(f64),
    #[error(transparent)]
    Grid(#[from] MapIoError),
}

/// Where the occupancy grid comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GridSpec {
    /// Straight walled corridor `length × width`, origin at (0, 0).
    Corridor {
        length: f64,
        width: f64,
        #[serde(default = "default_resolution")]
        resolution: f64,
    },
    /// Rectangular loop: outer walls `length × width`, corridors of
    /// `corridor_width` around an occupied core.
    Ring {
        length: f64,
        width: f64,
        corridor_width: f64,
        #[serde(default = "default_resolution")]
        resolution: f64,
    },
    /// PGM grid with sidecar, relative paths resolved against the scenario
    /// file's directory.
    File { path: PathBuf },
}

fn default_resolution() -> f64 {
    DEFAULT_RESOLUTION
}

impl GridSpec {
    pub fn build(&self, base_dir: Option<&Path>) -> Result<OccupancyGrid, SimError> {
        match self {
            GridSpec::Corridor {
                length,
                width,
                resolution,
            } => walled(*length, *width, *resolution, None),
            GridSpec::Ring {
                length,
                width,
                corridor_width,
                resolution,
            } => {
                if !(*corridor_width > 0.0) || 2.0 * corridor_width >= length.min(*width) {
                    return Err(SimError::Config("corridor_width must leave an inner block".into()));
                }
                walled(*length, *width, *resolution, Some(*corridor_width))
            }
            GridSpec::File { path } => {
                let path = match base_dir {
                    Some(dir) if path.is_relative() => dir.join(path),
                    _ => path.clone(),
                };
                Ok(load_grid(&path)?)
            }
        }
    }
}

fn walled(length: f64, width: f64, res: f64, core: Option<f64>) -> Result<OccupancyGrid, SimError> {
    if !(length > 0.0 && width > 0.0) {
        return Err(SimError::Config("grid dimensions must be positive".into()));
    }
    let mut g = OccupancyGrid::covering(length, width, res, Pose2D::identity())?;
    let (w, h) = (g.width(), g.height());
    for col in 0..w {
        g.set(col, 0, Cell::Occupied);
        g.set(col, h - 1, Cell::Occupied);
    }
    for row in 0..h {
        g.set(0, row, Cell::Occupied);
        g.set(w - 1, row, Cell::Occupied);
    }
    if let Some(cw) = core {
        g.fill_rect(cw, cw, length - cw, width - cw, Cell::Occupied);
    }
    Ok(g)
}

/// A physical object in the simulated world. Doors are vertical rectangles
/// whose pose sits at the bottom center of the door leaf with theta along
/// the outward normal; everything else is an ellipsoid centered over the
/// pose. `extent` is (width, depth, height) in the object frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldObject {
    pub class: ClassLabel,
    pub pose: Pose2D,
    pub extent: [f64; 3],
    #[serde(default)]
    pub base_height: f64,
}

impl WorldObject {
    /// Object with typical dimensions for its class.
    pub fn standard(class: ClassLabel, pose: Pose2D) -> Self {
        let (extent, base_height) = match class {
            ClassLabel::Door => ([0.9, 0.0, 2.0], 0.0),
            ClassLabel::FireExtinguisher => ([0.12, 0.12, 0.45], 0.7),
            ClassLabel::TrashBin => ([0.4, 0.4, 0.7], 0.0),
            ClassLabel::Bench => ([0.5, 1.5, 0.45], 0.0),
            ClassLabel::WaterFountain => ([0.3, 0.4, 0.9], 0.0),
            ClassLabel::Person => ([0.35, 0.5, 1.7], 0.0),
        };
        Self {
            class,
            pose,
            extent,
            base_height,
        }
    }

    fn surface(&self) -> Surface {
        let (s, c) = self.pose.theta.sin_cos();
        let [ew, ed, eh] = self.extent;
        if self.class.is_planar() {
            Surface::Rect {
                origin: Point3::new(self.pose.x, self.pose.y, self.base_height),
                normal: Vector3::new(c, s, 0.0),
                tangent: Vector3::new(-s, c, 0.0),
                half_width: 0.5 * ew,
                height: eh,
            }
        } else {
            Surface::Ellipsoid {
                center: Point3::new(self.pose.x, self.pose.y, self.base_height + 0.5 * eh),
                axes: [Vector3::new(c, s, 0.0), Vector3::new(-s, c, 0.0), Vector3::z()],
                semi: [0.5 * ed, 0.5 * ew, 0.5 * eh],
            }
        }
    }
}

enum Surface {
    Rect {
        origin: Point3<f64>,
        normal: Vector3<f64>,
        tangent: Vector3<f64>,
        half_width: f64,
        height: f64,
    },
    Ellipsoid {
        center: Point3<f64>,
        axes: [Vector3<f64>; 3],
        semi: [f64; 3],
    },
}

impl Surface {
    /// Points whose projection bounds the object's image.
    fn outline(&self) -> Vec<Point3<f64>> {
        match self {
            Surface::Rect {
                origin,
                tangent,
                half_width,
                height,
                ..
            } => [(-1.0, 0.0), (1.0, 0.0), (-1.0, 1.0), (1.0, 1.0)]
                .iter()
                .map(|&(a, b)| origin + tangent * (a * half_width) + Vector3::z() * (b * height))
                .collect(),
            Surface::Ellipsoid { center, axes, semi } => {
                let mut pts = Vec::with_capacity(8);
                for a in [-1.0, 1.0] {
                    for b in [-1.0, 1.0] {
                        for c in [-1.0, 1.0] {
                            pts.push(center + axes[0] * (a * semi[0]) + axes[1] * (b * semi[1]) + axes[2] * (c * semi[2]));
                        }
                    }
                }
                pts
            }
        }
    }

    /// Smallest positive `λ` with `o + λ·d` on the surface.
    fn intersect(&self, o: &Point3<f64>, d: &Vector3<f64>) -> Option<f64> {
        match self {
            Surface::Rect {
                origin,
                normal,
                tangent,
                half_width,
                height,
            } => {
                let denom = normal.dot(d);
                if denom.abs() < 1e-12 {
                    return None;
                }
                let lambda = normal.dot(&(origin - o)) / denom;
                let hit = o + d * lambda - origin;
                (lambda > 0.0 && tangent.dot(&hit).abs() <= *half_width && (0.0..=*height).contains(&hit.z))
                    .then_some(lambda)
            }
            Surface::Ellipsoid { center, axes, semi } => {
                let rel = o - center;
                let po = Vector3::from_fn(|i, _| axes[i].dot(&rel) / semi[i]);
                let pd = Vector3::from_fn(|i, _| axes[i].dot(d) / semi[i]);
                let (a, b, c) = (pd.norm_squared(), 2.0 * po.dot(&pd), po.norm_squared() - 1.0);
                let disc = b * b - 4.0 * a * c;
                if disc < 0.0 || a == 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                [(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)]
                    .into_iter()
                    .find(|l| *l > 0.0)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraRig {
    pub intrinsics: CameraIntrinsics,
    pub mount_height: f64,
}

impl Default for CameraRig {
    fn default() -> Self {
        Self {
            intrinsics: CameraIntrinsics::default(),
            mount_height: 1.0,
        }
    }
}

/// Image noise level. Depth noise is tied to it: σ_D = 0.1·σ_I meters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorNoiseModel {
    #[serde(rename = "sigma_I", default)]
    pub sigma_i: f64,
    /// Optional; must equal 0.1·σ_I when given.
    #[serde(rename = "sigma_D", default, skip_serializing_if = "Option::is_none")]
    pub sigma_d: Option<f64>,
}

impl SensorNoiseModel {
    pub fn new(sigma_i: f64) -> Self {
        Self { sigma_i, sigma_d: None }
    }

    pub fn depth_sigma(&self) -> f64 {
        0.1 * self.sigma_i
    }

    /// Detection probability after image corruption.
    pub fn effective_p_detect(&self, p_detect: f64) -> f64 {
        p_detect * (1.0 - self.sigma_i / 25.0).max(0.0)
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.sigma_i >= 0.0) || !self.sigma_i.is_finite() {
            return Err("sigma_I must be non-negative".into());
        }
        if let Some(d) = self.sigma_d {
            if (d - self.depth_sigma()).abs() > 1e-12 {
                return Err(format!("sigma_D must be 0.1*sigma_I = {}", self.depth_sigma()));
            }
        }
        Ok(())
    }
}

fn default_fov() -> f64 {
    60.0
}
fn default_detect_range() -> f64 {
    8.0
}
fn default_p_detect() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub grid: GridSpec,
    #[serde(default)]
    pub objects: Vec<WorldObject>,
    /// Path corners; only x and y are used.
    pub waypoints: Vec<Pose2D>,
    /// m/s
    pub speed: f64,
    /// Hz
    pub frame_rate: f64,
    #[serde(default)]
    pub camera: CameraRig,
    #[serde(default = "default_fov")]
    pub fov_deg: f64,
    #[serde(default = "default_detect_range")]
    pub detect_range: f64,
    #[serde(default = "default_p_detect")]
    pub p_detect: f64,
    /// Mean number of false detections per frame.
    #[serde(default)]
    pub clutter_rate: f64,
    #[serde(default)]
    pub noise: SensorNoiseModel,
    /// Meters of odometry drift per meter traveled.
    #[serde(default)]
    pub drift_rate: f64,
    #[serde(default)]
    pub loop_closure_at: Vec<f64>,
    /// Seconds between image capture and detection delivery.
    #[serde(default)]
    pub latency: f64,
    pub seed: u64,
    #[serde(default)]
    pub tracking: TrackingConfig,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Config(m.into()));
        if !(0.0..=1.0).contains(&self.p_detect) {
            return bad("p_detect must be in [0, 1]");
        }
        if !(self.frame_rate > 0.0) || !self.frame_rate.is_finite() {
            return bad("frame_rate must be positive");
        }
        if !(self.speed > 0.0) || !self.speed.is_finite() {
            return bad("speed must be positive");
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return bad("fov_deg must be in (0, 180)");
        }
        if !(self.detect_range > 0.0) {
            return bad("detect_range must be positive");
        }
        if !(self.clutter_rate >= 0.0) || !(self.drift_rate >= 0.0) || !(self.latency >= 0.0) {
            return bad("clutter_rate, drift_rate and latency must be non-negative");
        }
        if !(self.camera.mount_height > 0.0) {
            return bad("camera mount_height must be positive");
        }
        self.camera.intrinsics.validate().map_err(|e| SimError::Config(e.to_string()))?;
        self.noise.validate().map_err(SimError::Config)?;
        self.tracking.validate().map_err(SimError::Config)?;
        if self.objects.iter().any(|o| !o.pose.is_finite() || o.extent.iter().any(|e| !(*e >= 0.0))) {
            return bad("objects need finite poses and non-negative extents");
        }
        if self.loop_closure_at.iter().any(|t| !t.is_finite()) {
            return bad("loop closure times must be finite");
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| SimError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One detection with the depth samples inside its box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensedObject {
    pub detection: Detection,
    pub patch: DepthPatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub timestamp: f64,
    pub true_pose: Pose2D,
    pub odom_pose: Pose2D,
    pub anchor_node: NodeId,
    pub detections: Vec<SensedObject>,
}

/// Corrected poses for every node emitted up to `timestamp`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionEvent {
    pub timestamp: f64,
    pub corrections: BTreeMap<NodeId, Pose2D>,
}

/// Constant-speed walk along the waypoint polyline.
#[derive(Debug, Clone)]
pub struct Path2D {
    corners: Vec<(f64, f64)>,
    /// Arc length at each corner.
    stations: Vec<f64>,
}

impl Path2D {
    pub fn new(waypoints: &[Pose2D]) -> Result<Self, SimError> {
        if waypoints.len() < 2 {
            return Err(SimError::Trajectory("need at least two waypoints".into()));
        }
        let corners: Vec<_> = waypoints.iter().map(|p| (p.x, p.y)).collect();
        let mut stations = vec![0.0];
        for (i, w) in corners.windows(2).enumerate() {
            let d = (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1);
            if !(d > 1e-9) {
                return Err(SimError::Trajectory(format!("waypoints {i} and {} coincide", i + 1)));
            }
            stations.push(stations[i] + d);
        }
        Ok(Self { corners, stations })
    }

    pub fn length(&self) -> f64 {
        *self.stations.last().expect("non-empty")
    }

    /// Pose at arc length `s`, clamped to the path. A sample exactly on a
    /// corner already faces the next leg.
    pub fn pose_at(&self, s: f64) -> Pose2D {
        let s = s.clamp(0.0, self.length());
        let legs = self.corners.len() - 1;
        let i = self.stations[1..].partition_point(|&st| st <= s).min(legs - 1);
        let (a, b) = (self.corners[i], self.corners[i + 1]);
        let f = (s - self.stations[i]) / (self.stations[i + 1] - self.stations[i]);
        Pose2D::new(a.0 + f * (b.0 - a.0), a.1 + f * (b.1 - a.1), (b.1 - a.1).atan2(b.0 - a.0))
    }
}

/// Poses sampled every `1/frame_rate` seconds along the waypoints.
pub fn generate_trajectory(waypoints: &[Pose2D], speed: f64, frame_rate: f64) -> Result<Vec<(f64, Pose2D)>, SimError> {
    if !(speed > 0.0) || !(frame_rate > 0.0) {
        return Err(SimError::Config("speed and frame_rate must be positive".into()));
    }
    let path = Path2D::new(waypoints)?;
    let n = (path.length() / speed * frame_rate + 1e-9).floor() as usize + 1;
    Ok((0..n)
        .map(|k| {
            let t = k as f64 / frame_rate;
            (t, path.pose_at(speed * t))
        })
        .collect())
}

/// Cells on the integer line between two cells, endpoints included.
fn line_cells(a: (i64, i64), b: (i64, i64)) -> impl Iterator<Item = (i64, i64)> {
    let (dx, dy) = ((b.0 - a.0).abs(), -(b.1 - a.1).abs());
    let (sx, sy) = ((b.0 - a.0).signum(), (b.1 - a.1).signum());
    let mut err = dx + dy;
    let mut cur = Some(a);
    std::iter::from_fn(move || {
        let c = cur?;
        cur = if c == b {
            None
        } else {
            let (mut x, mut y) = c;
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
            Some((x, y))
        };
        Some(c)
    })
}

/// Line of sight plus field-of-view and range test. Occupied cells next to
/// the target (within one cell) are ignored so that wall-mounted objects
/// are not hidden by their own wall.
pub fn visible(robot: &Pose2D, target: &Pose2D, grid: &OccupancyGrid, fov_deg: f64, detect_range: f64) -> bool {
    let range = robot.distance_to(target);
    if range > detect_range {
        return false;
    }
    let bearing = crate::geometry::wrap_angle((target.y - robot.y).atan2(target.x - robot.x) - robot.theta);
    if bearing.abs() > 0.5 * fov_deg.to_radians() {
        return false;
    }
    let from = grid.cell_of(robot.x, robot.y);
    let to = grid.cell_of(target.x, target.y);
    if !grid.in_bounds(from.0, from.1) || !grid.in_bounds(to.0, to.1) {
        return false;
    }
    line_cells(from, to).all(|(c, r)| {
        let near_target = (c - to.0).abs() <= 1 && (r - to.1).abs() <= 1;
        near_target || grid.get(c as usize, r as usize) != Some(Cell::Occupied)
    })
}

/// Depth samples per detection are capped near this count.
pub const MAX_PATCH_SAMPLES: u32 = 1500;

fn world_to_camera(cam: &Pose3D, p: &Point3<f64>) -> Point3<f64> {
    Point3::from(cam.rotation.inverse() * (p.coords - cam.translation))
}

/// Detection box of an object seen from `cam`, if it projects completely
/// inside the image.
fn image_box(obj: &WorldObject, cam: &Pose3D, intr: &CameraIntrinsics) -> Option<(f64, f64, f64, f64)> {
    let mut bounds = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in obj.surface().outline() {
        let pc = world_to_camera(cam, &p);
        if pc.z < 0.1 {
            return None;
        }
        let (u, v) = intr.project(&pc)?;
        bounds = (bounds.0.min(u), bounds.1.min(v), bounds.2.max(u), bounds.3.max(v));
    }
    let (u0, v0, u1, v1) = bounds;
    let inside = u0 >= 0.0 && v0 >= 0.0 && u1 <= intr.width as f64 - 1.0 && v1 <= intr.height as f64 - 1.0;
    (inside && u1 - u0 >= 1.0 && v1 - v0 >= 1.0).then_some(bounds)
}

/// Adds zero-mean Gaussian noise of standard deviation `sigma` to a depth.
pub fn perturb_depth(z: f64, sigma: f64, rng: &mut impl Rng) -> f64 {
    if sigma > 0.0 {
        z + Normal::new(0.0, sigma).expect("finite sigma").sample(rng)
    } else {
        z
    }
}

fn sense(
    obj: &WorldObject,
    cam: &Pose3D,
    bounds: (f64, f64, f64, f64),
    rig: &CameraRig,
    sigma_d: f64,
    timestamp: f64,
    rng: &mut ChaCha8Rng,
) -> SensedObject {
    let intr = &rig.intrinsics;
    let (u_min, v_min, u_max, v_max) = bounds;
    let bbox = BoundingBox::from_corners(u_min, v_min, u_max, v_max);
    let (first_u, first_v) = (u_min.ceil(), v_min.ceil());
    let span_u = (u_max - first_u).max(0.0);
    let span_v = (v_max - first_v).max(0.0);
    let area = (span_u + 1.0) * (span_v + 1.0);
    let stride = ((area / MAX_PATCH_SAMPLES as f64).sqrt().ceil() as u32).max(2);
    // half-open box: the last column must stay strictly left of u_max
    let count = |span: f64| ((span - 1e-9) / stride as f64).floor().max(0.0) as u32 + 1;
    let (cols, rows) = (count(span_u), count(span_v));
    let surface = obj.surface();
    let origin = Point3::from(cam.translation);
    let mut depth = Vec::with_capacity((cols * rows) as usize);
    for r in 0..rows {
        for c in 0..cols {
            let u = first_u + (c * stride) as f64;
            let v = first_v + (r * stride) as f64;
            let dir = cam.rotation * intr.ray(u, v);
            depth.push(match surface.intersect(&origin, &dir) {
                Some(z) => perturb_depth(z, sigma_d, rng),
                None => 0.0,
            });
        }
    }
    SensedObject {
        detection: Detection {
            class_label: obj.class,
            bbox,
            confidence: rng.random_range(0.5..1.0),
            timestamp,
        },
        patch: DepthPatch {
            u0: first_u as u32,
            v0: first_v as u32,
            stride,
            cols,
            rows,
            depth,
        },
    }
}

/// Everything a run produces.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationLog {
    pub camera: CameraRig,
    pub grid: OccupancyGrid,
    pub frames: Vec<FrameRecord>,
    pub events: Vec<CorrectionEvent>,
    pub truth: Vec<GroundTruthAnnotation>,
    /// Per truth entry: whether it was ever fully in view.
    pub observed: Vec<bool>,
}

struct World<'a> {
    cfg: &'a ScenarioConfig,
    grid: &'a OccupancyGrid,
}

impl World<'_> {
    fn detectable(&self, obj: &WorldObject, robot: &Pose2D, cam: &Pose3D) -> Option<(f64, f64, f64, f64)> {
        if !visible(robot, &obj.pose, self.grid, self.cfg.fov_deg, self.cfg.detect_range) {
            return None;
        }
        image_box(obj, cam, &self.cfg.camera.intrinsics)
    }

    fn clutter_object(&self, robot: &Pose2D, rng: &mut ChaCha8Rng) -> Option<WorldObject> {
        let class = ClassLabel::STATIC[rng.random_range(0..ClassLabel::STATIC.len())];
        let half = 0.5 * self.cfg.fov_deg.to_radians();
        let bearing = robot.theta + rng.random_range(-half..=half);
        let range = rng.random_range(1.0..=self.cfg.detect_range.max(1.0 + 1e-9));
        let (x, y) = (robot.x + range * bearing.cos(), robot.y + range * bearing.sin());
        (self.grid.cell_at(x, y) == Some(Cell::Free))
            .then(|| WorldObject::standard(class, Pose2D::new(x, y, bearing + std::f64::consts::PI)))
    }
}

/// Runs the scenario. `base_dir` resolves a file-backed grid.
pub fn run_scenario(cfg: &ScenarioConfig, base_dir: Option<&Path>) -> Result<SimulationLog, SimError> {
    cfg.validate()?;
    let grid = cfg.grid.build(base_dir)?;
    let path = Path2D::new(&cfg.waypoints)?;
    let trajectory = generate_trajectory(&cfg.waypoints, cfg.speed, cfg.frame_rate)?;
    for &(t, p) in &trajectory {
        let (c, r) = grid.cell_of(p.x, p.y);
        if !grid.in_bounds(c, r) {
            return Err(SimError::LeavesGrid(t));
        }
    }
    let t_end = trajectory.last().expect("non-empty").0;
    let mut closures = cfg.loop_closure_at.clone();
    closures.sort_by(f64::total_cmp);
    if closures.iter().any(|&t| t < 0.0 || t > t_end + 1e-9) {
        return Err(SimError::Config(format!("loop closures must lie within [0, {t_end}]")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let drift_heading: f64 = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    let drift_dir = (drift_heading.cos(), drift_heading.sin());

    let world = World { cfg, grid: &grid };
    let statics: Vec<(usize, &WorldObject)> = cfg.objects.iter().filter(|o| o.class.is_static()).enumerate().collect();
    let mut observed = vec![false; statics.len()];
    let p_eff = cfg.noise.effective_p_detect(cfg.p_detect);
    let sigma_d = cfg.noise.depth_sigma();
    let clutter = (cfg.clutter_rate > 0.0).then(|| Poisson::new(cfg.clutter_rate).expect("positive rate"));

    let mut frames = Vec::with_capacity(trajectory.len());
    for (k, &(t, true_pose)) in trajectory.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(k as u64 + 1);

        let since = closures.iter().rev().find(|&&c| c < t).map_or(0.0, |&c| cfg.speed * c);
        let drift = cfg.drift_rate * (cfg.speed * t - since);
        let odom_pose = Pose2D::new(true_pose.x + drift * drift_dir.0, true_pose.y + drift * drift_dir.1, true_pose.theta);

        let capture = t - cfg.latency;
        let mut detections = Vec::new();
        if capture >= 0.0 {
            let robot = path.pose_at(cfg.speed * capture);
            let cam = camera_pose_from_robot(&robot, cfg.camera.mount_height);
            let mut emit = |obj: &WorldObject, bounds, rng: &mut ChaCha8Rng| {
                detections.push(sense(obj, &cam, bounds, &cfg.camera, sigma_d, capture, rng));
            };
            for (i, obj) in &statics {
                if let Some(b) = world.detectable(obj, &robot, &cam) {
                    observed[*i] = true;
                    if rng.random_bool(p_eff) {
                        emit(obj, b, &mut rng);
                    }
                }
            }
            for obj in cfg.objects.iter().filter(|o| !o.class.is_static()) {
                if let Some(b) = world.detectable(obj, &robot, &cam) {
                    if rng.random_bool(p_eff) {
                        emit(obj, b, &mut rng);
                    }
                }
            }
            if let Some(dist) = &clutter {
                let n = dist.sample(&mut rng) as usize;
                for _ in 0..n {
                    if let Some(ghost) = world.clutter_object(&robot, &mut rng) {
                        if let Some(b) = world.detectable(&ghost, &robot, &cam) {
                            emit(&ghost, b, &mut rng);
                        }
                    }
                }
            }
        }
        frames.push(FrameRecord {
            timestamp: t,
            true_pose,
            odom_pose,
            anchor_node: k as NodeId,
            detections,
        });
    }

    let events = closures
        .iter()
        .map(|&tc| CorrectionEvent {
            timestamp: tc,
            corrections: trajectory
                .iter()
                .enumerate()
                .take_while(|(_, (t, _))| *t <= tc + 1e-9)
                .map(|(k, (_, p))| (k as NodeId, *p))
                .collect(),
        })
        .collect();

    let truth = statics
        .iter()
        .map(|(_, o)| GroundTruthAnnotation {
            class_label: o.class,
            pose: o.pose,
        })
        .collect();

    Ok(SimulationLog {
        camera: cfg.camera,
        grid,
        frames,
        events,
        truth,
        observed,
    })
}

/// Ready-made scenarios.
pub mod presets {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn door(x: f64, y: f64, theta: f64) -> WorldObject {
        WorldObject::standard(ClassLabel::Door, Pose2D::new(x, y, theta))
    }

    fn base(grid: GridSpec, waypoints: Vec<Pose2D>, objects: Vec<WorldObject>, seed: u64) -> ScenarioConfig {
        ScenarioConfig {
            grid,
            objects,
            waypoints,
            speed: 0.5,
            frame_rate: 5.0,
            camera: CameraRig::default(),
            fov_deg: default_fov(),
            detect_range: default_detect_range(),
            p_detect: 1.0,
            clutter_rate: 0.0,
            noise: SensorNoiseModel::default(),
            drift_rate: 0.0,
            loop_closure_at: vec![],
            latency: 0.0,
            seed,
            tracking: TrackingConfig::default(),
        }
    }

    /// Cell-thick walls leave the free corridor starting one cell in.
    const WALL: f64 = DEFAULT_RESOLUTION;

    /// 20 m × 2.5 m corridor with three doors and two fire extinguishers,
    /// no noise, no drift.
    pub fn noiseless_corridor(seed: u64) -> ScenarioConfig {
        let (len, wid) = (20.0, 2.5);
        let (lo, hi) = (WALL, wid - WALL);
        let ext = |x: f64, y: f64| WorldObject::standard(ClassLabel::FireExtinguisher, Pose2D::new(x, y, 0.0));
        let objects = vec![
            door(5.0, lo, FRAC_PI_2),
            door(10.0, hi, -FRAC_PI_2),
            door(15.0, lo, FRAC_PI_2),
            ext(7.5, hi - 0.06),
            ext(12.5, lo + 0.06),
        ];
        let path = vec![Pose2D::new(1.0, wid / 2.0, 0.0), Pose2D::new(len - 1.0, wid / 2.0, 0.0)];
        base(
            GridSpec::Corridor {
                length: len,
                width: wid,
                resolution: DEFAULT_RESOLUTION,
            },
            path,
            objects,
            seed,
        )
    }

    /// Doors 1 to 2 m apart along both walls of a 24 m corridor, with
    /// moderate sensor noise and a little drift.
    pub fn clustered_doors(seed: u64) -> ScenarioConfig {
        let (len, wid) = (24.0, 2.5);
        let (lo, hi) = (WALL, wid - WALL);
        let gaps = [1.0, 1.6, 1.2, 2.0, 1.4, 1.0, 1.8, 1.2];
        let mut objects = Vec::new();
        let mut x = 3.0;
        for g in gaps {
            objects.push(door(x, lo, FRAC_PI_2));
            x += g;
        }
        objects.push(door(x, lo, FRAC_PI_2));
        let mut x = 3.7;
        for g in gaps.iter().rev() {
            objects.push(door(x, hi, -FRAC_PI_2));
            x += g;
        }
        objects.push(door(x, hi, -FRAC_PI_2));
        let path = vec![Pose2D::new(1.0, wid / 2.0, 0.0), Pose2D::new(len - 1.0, wid / 2.0, 0.0)];
        let mut cfg = base(
            GridSpec::Corridor {
                length: len,
                width: wid,
                resolution: DEFAULT_RESOLUTION,
            },
            path,
            objects,
            seed,
        );
        cfg.noise = SensorNoiseModel::new(5.0);
        cfg.p_detect = 0.9;
        cfg.clutter_rate = 0.05;
        cfg.drift_rate = 0.01;
        cfg
    }

    fn ring_path(length: f64, width: f64, cw: f64) -> Vec<Pose2D> {
        let (a, b) = (cw / 2.0, cw / 2.0);
        let (c, d) = (length - cw / 2.0, width - cw / 2.0);
        vec![
            Pose2D::new(a, b, 0.0),
            Pose2D::new(c, b, 0.0),
            Pose2D::new(c, d, 0.0),
            Pose2D::new(a, d, 0.0),
            Pose2D::new(a, b + 0.5, 0.0),
        ]
    }

    /// Doors on the outer walls of a ring corridor, placed every `spacing`
    /// meters along each leg.
    fn ring_doors(length: f64, width: f64, cw: f64, per_leg: [usize; 4]) -> Vec<WorldObject> {
        let (lo, hi_x, hi_y) = (WALL, length - WALL, width - WALL);
        let mut out = Vec::new();
        let spread = |n: usize, from: f64, to: f64| -> Vec<f64> {
            (0..n).map(|i| from + (to - from) * (i as f64 + 0.5) / n as f64).collect()
        };
        for x in spread(per_leg[0], cw + 1.0, length - cw - 1.0) {
            out.push(door(x, lo, FRAC_PI_2));
        }
        for y in spread(per_leg[1], cw + 1.0, width - cw - 1.0) {
            out.push(door(hi_x, y, std::f64::consts::PI));
        }
        for x in spread(per_leg[2], cw + 1.0, length - cw - 1.0).into_iter().rev() {
            out.push(door(x, hi_y, -FRAC_PI_2));
        }
        for y in spread(per_leg[3], cw + 1.0, width - cw - 1.0).into_iter().rev() {
            out.push(door(lo, y, 0.0));
        }
        out
    }

    /// 20 m × 10 m ring whose center line is a 50 m loop, with odometry
    /// drifting 1 cm per meter and a loop closure at the end.
    pub fn drift_loop(seed: u64) -> ScenarioConfig {
        let (len, wid, cw) = (20.0, 10.0, 2.5);
        let mut path = ring_path(len, wid, cw);
        path.pop();
        path.push(Pose2D::new(cw / 2.0, cw / 2.0, 0.0));
        let mut cfg = base(
            GridSpec::Ring {
                length: len,
                width: wid,
                corridor_width: cw,
                resolution: DEFAULT_RESOLUTION,
            },
            path,
            ring_doors(len, wid, cw, [4, 1, 4, 1]),
            seed,
        );
        cfg.speed = 1.0;
        cfg.drift_rate = 0.01;
        cfg.loop_closure_at = vec![50.0];
        cfg
    }

    /// 42 m × 18.5 m ring with 19 doors, σ_I = 5 and 0.5 % drift, closing
    /// the loop at the end.
    pub fn office_floor(seed: u64) -> ScenarioConfig {
        let (len, wid, cw) = (42.0, 18.5, 2.5);
        let path = ring_path(len, wid, cw);
        let mut cfg = base(
            GridSpec::Ring {
                length: len,
                width: wid,
                corridor_width: cw,
                resolution: DEFAULT_RESOLUTION,
            },
            path.clone(),
            ring_doors(len, wid, cw, [7, 3, 6, 3]),
            seed,
        );
        cfg.speed = 1.0;
        cfg.noise = SensorNoiseModel::new(5.0);
        cfg.drift_rate = 0.005;
        let total = Path2D::new(&path).expect("valid ring").length();
        let t_end = (total / cfg.speed * cfg.frame_rate + 1e-9).floor() / cfg.frame_rate;
        cfg.loop_closure_at = vec![t_end];
        cfg
    }

    pub fn by_name(name: &str, seed: u64) -> Option<ScenarioConfig> {
        Some(match name {
            "noiseless_corridor" => noiseless_corridor(seed),
            "clustered_doors" => clustered_doors(seed),
            "drift_loop" => drift_loop(seed),
            "office_floor" => office_floor(seed),
            _ => return None,
        })
    }

    pub const NAMES: [&str; 4] = ["noiseless_corridor", "clustered_doors", "drift_loop", "office_floor"];
}
