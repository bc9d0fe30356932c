//! Shape priors that turn a detection's point patch into a map observation:
//! RANSAC planes for doors, Euclidean clustering for compact objects.

use std::collections::HashMap;

use nalgebra::{Matrix3, Point3, SymmetricEigen, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::class::ClassLabel;
use crate::geometry::{centroid_of, project_to_ground, wrap_angle, BoundingBox, PointCloud, Pose2D};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FitError {
    #[error("need at least 3 points to fit a plane, got {0}")]
    InsufficientPoints(usize),
    #[error("every sampled point triple was degenerate")]
    Degenerate,
    #[error("best plane has {found} inliers, fewer than the required {required}")]
    NoConsensus { found: usize, required: usize },
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("no cluster reached the minimum size of {0} points")]
    NoCluster(usize),
    #[error("plane is seen edge-on ({0:.1} degrees from its normal)")]
    EdgeOn(f64),
}

/// One detector output. `confidence` is carried along but not used by the
/// tracker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub class_label: ClassLabel,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub confidence: f64,
    pub timestamp: f64,
}

/// Plane `normal · p + offset = 0` with its supporting points.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneModel {
    pub normal: Vector3<f64>,
    pub offset: f64,
    pub inlier_indices: Vec<usize>,
    pub centroid: Point3<f64>,
    /// Distance threshold the inlier set was collected with.
    pub threshold: f64,
}

impl PlaneModel {
    pub fn distance(&self, p: &Point3<f64>) -> f64 {
        (self.normal.dot(&p.coords) + self.offset).abs()
    }

    /// RMS point-to-plane distance over `indices`.
    pub fn rms(&self, cloud: &PointCloud, indices: &[usize]) -> f64 {
        if indices.is_empty() {
            return 0.0;
        }
        let ss: f64 = indices.iter().map(|&i| self.distance(&cloud.points[i]).powi(2)).sum();
        (ss / indices.len() as f64).sqrt()
    }

    /// Center of the inlier patch inside the plane, taken as the midpoint of
    /// the 2nd and 98th percentiles along the plane's horizontal and vertical
    /// axes. Unlike the mean it does not lean toward the near edge of an
    /// obliquely viewed patch, where perspective packs more pixels.
    pub fn patch_center(&self, cloud: &PointCloud) -> Point3<f64> {
        let up = Vector3::z();
        let horizontal = self.normal.cross(&up);
        let horizontal = if horizontal.norm() > 1e-9 {
            horizontal.normalize()
        } else {
            Vector3::x()
        };
        let vertical = self.normal.cross(&horizontal).normalize();
        let mut along_h = Vec::with_capacity(self.inlier_indices.len());
        let mut along_v = Vec::with_capacity(self.inlier_indices.len());
        for &i in &self.inlier_indices {
            let d = cloud.points[i] - self.centroid;
            along_h.push(d.dot(&horizontal));
            along_v.push(d.dot(&vertical));
        }
        let mid = |mut xs: Vec<f64>| {
            if xs.is_empty() {
                return 0.0;
            }
            xs.sort_by(f64::total_cmp);
            let q = |f: f64| xs[((xs.len() - 1) as f64 * f).round() as usize];
            0.5 * (q(0.02) + q(0.98))
        };
        self.centroid + horizontal * mid(along_h) + vertical * mid(along_v)
    }

    fn flip(&mut self) {
        self.normal = -self.normal;
        self.offset = -self.offset;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub member_indices: Vec<usize>,
    pub centroid: Point3<f64>,
    /// Axis-aligned size of the cluster's convex hull (dx, dy, dz).
    pub hull_extent: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    Plane(PlaneModel),
    Cluster(Cluster),
}

/// A single-frame measurement of one object, projected onto the map.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectObservation {
    pub class_label: ClassLabel,
    pub pose: Pose2D,
    pub shape: Shape,
    pub timestamp: f64,
    pub range_from_robot: f64,
}

impl ObjectObservation {
    /// Observation without shape payload, handy for driving the tracker
    /// directly.
    pub fn at(class_label: ClassLabel, pose: Pose2D, timestamp: f64, range_from_robot: f64) -> Self {
        Self {
            class_label,
            pose,
            shape: Shape::Cluster(Cluster {
                member_indices: Vec::new(),
                centroid: Point3::new(pose.x, pose.y, 0.0),
                hull_extent: Vector3::zeros(),
            }),
            timestamp,
            range_from_robot,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FittingConfig {
    pub plane_threshold: f64,
    pub ransac_iterations: usize,
    pub min_inliers: usize,
    pub cluster_tolerance: f64,
    pub cluster_min_size: usize,
    /// Planes seen more obliquely than this (degrees between the normal and
    /// the line of sight) are rejected as edge-on.
    pub max_incidence_deg: f64,
    pub seed: u64,
}

impl Default for FittingConfig {
    fn default() -> Self {
        Self {
            plane_threshold: 0.03,
            ransac_iterations: 200,
            min_inliers: 50,
            cluster_tolerance: 0.10,
            cluster_min_size: 30,
            max_incidence_deg: 85.0,
            seed: 0,
        }
    }
}

fn plane_through(a: &Point3<f64>, b: &Point3<f64>, c: &Point3<f64>) -> Option<(Vector3<f64>, f64)> {
    let n = (b - a).cross(&(c - a));
    let norm = n.norm();
    let scale = (b - a).norm() * (c - a).norm();
    if !(norm > 1e-12 * scale.max(1e-300)) {
        return None;
    }
    let n = n / norm;
    Some((n, -n.dot(&a.coords)))
}

fn inliers_of(cloud: &PointCloud, normal: &Vector3<f64>, offset: f64, thresh: f64) -> Vec<usize> {
    cloud
        .points
        .iter()
        .enumerate()
        .filter(|(_, p)| (normal.dot(&p.coords) + offset).abs() <= thresh)
        .map(|(i, _)| i)
        .collect()
}

/// Best-consensus plane over `max_iters` random three-point hypotheses.
/// The returned normal faces the coordinate origin (the camera when the
/// cloud is in camera frame).
pub fn ransac_plane(
    cloud: &PointCloud,
    dist_thresh: f64,
    max_iters: usize,
    min_inliers: usize,
    seed: u64,
) -> Result<PlaneModel, FitError> {
    let n = cloud.len();
    if n < 3 {
        return Err(FitError::InsufficientPoints(n));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(usize, Vector3<f64>, f64)> = None;
    for _ in 0..max_iters {
        let idx = rand::seq::index::sample(&mut rng, n, 3);
        let (a, b, c) = (&cloud.points[idx.index(0)], &cloud.points[idx.index(1)], &cloud.points[idx.index(2)]);
        let Some((normal, offset)) = plane_through(a, b, c) else {
            continue;
        };
        let count = cloud
            .points
            .iter()
            .filter(|p| (normal.dot(&p.coords) + offset).abs() <= dist_thresh)
            .count();
        if best.as_ref().is_none_or(|(c, _, _)| count > *c) {
            best = Some((count, normal, offset));
        }
    }
    let Some((count, normal, offset)) = best else {
        return Err(FitError::Degenerate);
    };
    if count < min_inliers.max(3) {
        return Err(FitError::NoConsensus {
            found: count,
            required: min_inliers.max(3),
        });
    }
    let inlier_indices = inliers_of(cloud, &normal, offset, dist_thresh);
    let centroid = centroid_of(inlier_indices.iter().map(|&i| &cloud.points[i])).expect("non-empty inliers");
    let mut model = PlaneModel {
        normal,
        offset,
        inlier_indices,
        centroid,
        threshold: dist_thresh,
    };
    if model.normal.dot(&(-centroid.coords)) < 0.0 {
        model.flip();
    }
    Ok(model)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Refinement {
    pub model: PlaneModel,
    /// Set when the inliers did not span a plane and the input was returned.
    pub degenerate: bool,
}

/// Least-squares plane through the current inliers (smallest principal axis
/// of their covariance), after which inliers are re-collected from `cloud`
/// with the model's threshold. RMS over the input inlier set never grows
/// since the least-squares plane minimizes it.
pub fn refine_plane(model: &PlaneModel, cloud: &PointCloud) -> Refinement {
    let unchanged = |degenerate| Refinement {
        model: model.clone(),
        degenerate,
    };
    if model.inlier_indices.len() < 3 {
        return unchanged(true);
    }
    let pts = || model.inlier_indices.iter().map(|&i| &cloud.points[i]);
    let centroid = centroid_of(pts()).expect("non-empty");
    let mut cov = Matrix3::zeros();
    for p in pts() {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    cov /= model.inlier_indices.len() as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let largest = eig.eigenvalues[order[2]];
    let middle = eig.eigenvalues[order[1]];
    if !(largest > 0.0) || middle <= 1e-12 * largest {
        return unchanged(true);
    }
    let mut normal: Vector3<f64> = eig.eigenvectors.column(order[0]).into_owned().normalize();
    if normal.dot(&model.normal) < 0.0 {
        normal = -normal;
    }
    let offset = -normal.dot(&centroid.coords);
    let inlier_indices = inliers_of(cloud, &normal, offset, model.threshold);
    if inlier_indices.len() < 3 {
        return unchanged(false);
    }
    let centroid = centroid_of(inlier_indices.iter().map(|&i| &cloud.points[i])).expect("non-empty");
    Refinement {
        model: PlaneModel {
            normal,
            offset,
            inlier_indices,
            centroid,
            threshold: model.threshold,
        },
        degenerate: false,
    }
}

/// Disjoint-set forest with path halving and union by size.
#[derive(Debug, Clone)]
pub(crate) struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub(crate) fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    pub(crate) fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub(crate) fn union(&mut self, a: usize, b: usize) {
        let (mut a, mut b) = (self.find(a), self.find(b));
        if a == b {
            return;
        }
        if self.size[a] < self.size[b] {
            std::mem::swap(&mut a, &mut b);
        }
        self.parent[b] = a;
        self.size[a] += self.size[b];
    }
}

/// Connected components of the graph joining points closer than `tol`.
/// Components below `min_size` are dropped; the rest are ordered by size,
/// largest first, ties by lowest member index.
pub fn euclidean_cluster(cloud: &PointCloud, tol: f64, min_size: usize) -> Vec<Cluster> {
    let n = cloud.len();
    if n == 0 || !(tol > 0.0) {
        return Vec::new();
    }
    let key = |p: &Point3<f64>| {
        (
            (p.x / tol).floor() as i64,
            (p.y / tol).floor() as i64,
            (p.z / tol).floor() as i64,
        )
    };
    let mut grid: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
    for (i, p) in cloud.points.iter().enumerate() {
        grid.entry(key(p)).or_default().push(i);
    }
    let tol2 = tol * tol;
    let mut sets = UnionFind::new(n);
    for (i, p) in cloud.points.iter().enumerate() {
        let (kx, ky, kz) = key(p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let Some(bucket) = grid.get(&(kx + dx, ky + dy, kz + dz)) else {
                        continue;
                    };
                    for &j in bucket {
                        if j > i && (cloud.points[j] - p).norm_squared() <= tol2 {
                            sets.union(i, j);
                        }
                    }
                }
            }
        }
    }
    let mut groups: HashMap<usize, Vec<usize>> = HashMap::new();
    for i in 0..n {
        let root = sets.find(i);
        groups.entry(root).or_default().push(i);
    }
    let mut clusters: Vec<Cluster> = groups
        .into_values()
        .filter(|members| members.len() >= min_size.max(1))
        .map(|member_indices| cluster_from(cloud, member_indices))
        .collect();
    clusters.sort_by(|a, b| {
        b.member_indices
            .len()
            .cmp(&a.member_indices.len())
            .then(a.member_indices[0].cmp(&b.member_indices[0]))
    });
    clusters
}

fn cluster_from(cloud: &PointCloud, member_indices: Vec<usize>) -> Cluster {
    let pts = || member_indices.iter().map(|&i| &cloud.points[i]);
    let centroid = centroid_of(pts()).expect("non-empty cluster");
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for p in pts() {
        lo = lo.inf(&p.coords);
        hi = hi.sup(&p.coords);
    }
    Cluster {
        member_indices,
        centroid,
        hull_extent: hi - lo,
    }
}

/// Fits the class's shape prior to a map-frame cloud and projects the result
/// to a planar pose. Doors take the heading of their robot-facing normal;
/// compact objects take the bearing from the robot.
pub fn extract_observation(
    det: &Detection,
    cloud: &PointCloud,
    robot: &Pose2D,
    cfg: &FittingConfig,
) -> Result<ObjectObservation, FitError> {
    if cloud.is_empty() {
        return Err(FitError::EmptyCloud);
    }
    let (pose, shape) = if det.class_label.is_planar() {
        let coarse = ransac_plane(cloud, cfg.plane_threshold, cfg.ransac_iterations, cfg.min_inliers, cfg.seed)?;
        let mut plane = refine_plane(&coarse, cloud).model;
        let to_robot = Vector3::new(robot.x - plane.centroid.x, robot.y - plane.centroid.y, 0.0);
        if plane.normal.dot(&to_robot) < 0.0 {
            plane.flip();
        }
        let horizontal = Vector3::new(plane.normal.x, plane.normal.y, 0.0);
        let incidence = horizontal.angle(&to_robot).to_degrees();
        if !(incidence <= cfg.max_incidence_deg) {
            return Err(FitError::EdgeOn(incidence));
        }
        let (x, y) = project_to_ground(&plane.patch_center(cloud));
        let theta = wrap_angle(plane.normal.y.atan2(plane.normal.x));
        (Pose2D::new(x, y, theta), Shape::Plane(plane))
    } else {
        let cluster = euclidean_cluster(cloud, cfg.cluster_tolerance, cfg.cluster_min_size)
            .into_iter()
            .next()
            .ok_or(FitError::NoCluster(cfg.cluster_min_size))?;
        let (x, y) = project_to_ground(&cluster.centroid);
        let theta = (y - robot.y).atan2(x - robot.x);
        (Pose2D::new(x, y, theta), Shape::Cluster(cluster))
    };
    Ok(ObjectObservation {
        class_label: det.class_label,
        range_from_robot: robot.distance_to(&pose),
        pose,
        shape,
        timestamp: det.timestamp,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Frame;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn cloud(points: Vec<Point3<f64>>) -> PointCloud {
        PointCloud::new(points, Frame::Map)
    }

    fn grid_plane_z1() -> PointCloud {
        cloud(
            (0..20)
                .flat_map(|i| (0..20).map(move |j| Point3::new(i as f64 * 0.1 - 1.0, j as f64 * 0.1 - 1.0, 1.0)))
                .collect(),
        )
    }

    fn det(class_label: ClassLabel) -> Detection {
        Detection {
            class_label,
            bbox: BoundingBox {
                center_x: 320.0,
                center_y: 240.0,
                w: 100.0,
                h: 100.0,
            },
            confidence: 0.9,
            timestamp: 1.0,
        }
    }

    /// 2000 points: 60% on the x = 3 wall with N(0, 0.01²) noise, 40% uniform
    /// in a 2 m box around it. Returns the cloud and the true inlier count
    /// (true inliers come first).
    pub(crate) fn noisy_wall(seed: u64) -> (PointCloud, usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.01).unwrap();
        let n_in = 1200;
        let mut pts = Vec::with_capacity(2000);
        for _ in 0..n_in {
            pts.push(Point3::new(
                3.0 + noise.sample(&mut rng),
                rng.random_range(-1.0..1.0),
                rng.random_range(0.0..2.0),
            ));
        }
        for _ in n_in..2000 {
            pts.push(Point3::new(
                rng.random_range(2.0..4.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(0.0..2.0),
            ));
        }
        (cloud(pts), n_in)
    }

    #[test]
    fn exact_plane_faces_origin() {
        let c = grid_plane_z1();
        let m = ransac_plane(&c, 0.03, 200, 50, 7).unwrap();
        assert!((m.normal - Vector3::new(0.0, 0.0, -1.0)).norm() < 1e-9);
        assert!((m.offset - 1.0).abs() < 1e-9);
        assert_eq!(m.inlier_indices.len(), c.len());
    }

    #[test]
    fn too_few_points() {
        let c = cloud(vec![Point3::origin(), Point3::new(1.0, 0.0, 0.0)]);
        assert_eq!(ransac_plane(&c, 0.03, 10, 1, 0), Err(FitError::InsufficientPoints(2)));
    }

    #[test]
    fn collinear_points_are_degenerate() {
        let c = cloud((0..10).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect());
        assert_eq!(ransac_plane(&c, 0.03, 20, 3, 0), Err(FitError::Degenerate));
    }

    #[test]
    fn consensus_threshold_enforced() {
        let c = grid_plane_z1();
        assert!(matches!(
            ransac_plane(&c, 0.03, 50, 1000, 1),
            Err(FitError::NoConsensus { found: 400, required: 1000 })
        ));
    }

    #[test]
    fn noisy_wall_recovered() {
        let (c, n_in) = noisy_wall(11);
        let coarse = ransac_plane(&c, 0.03, 200, 50, 11).unwrap();
        let m = refine_plane(&coarse, &c).model;
        // the origin sits on the -x side of the wall
        let angle = m.normal.dot(&Vector3::new(-1.0, 0.0, 0.0)).clamp(-1.0, 1.0).acos();
        assert!(angle.to_degrees() < 1.0, "normal off by {} deg", angle.to_degrees());
        let recalled = m.inlier_indices.iter().filter(|&&i| i < n_in).count();
        assert!(recalled as f64 >= 0.98 * n_in as f64, "recall {recalled}/{n_in}");
    }

    #[test]
    fn refine_keeps_exact_plane() {
        let c = grid_plane_z1();
        let m = ransac_plane(&c, 0.03, 200, 50, 3).unwrap();
        let r = refine_plane(&m, &c);
        assert!(!r.degenerate);
        assert!((r.model.normal - m.normal).norm() < 1e-9);
        assert!((r.model.offset - m.offset).abs() < 1e-9);
    }

    #[test]
    fn refine_does_not_increase_rms() {
        for seed in 0..10 {
            let (c, _) = noisy_wall(seed);
            let m = ransac_plane(&c, 0.03, 200, 50, seed).unwrap();
            let r = refine_plane(&m, &c).model;
            assert!(r.rms(&c, &m.inlier_indices) <= m.rms(&c, &m.inlier_indices) + 1e-15);
        }
    }

    #[test]
    fn refine_collinear_inliers_is_degenerate() {
        let c = cloud(vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(2.0, 0.0, 0.0),
        ]);
        let m = PlaneModel {
            normal: Vector3::z(),
            offset: 0.0,
            inlier_indices: vec![0, 1, 2],
            centroid: Point3::new(1.0, 0.0, 0.0),
            threshold: 0.03,
        };
        let r = refine_plane(&m, &c);
        assert!(r.degenerate);
        assert_eq!(r.model, m);
    }

    fn blob(center: Point3<f64>, n: usize, rng: &mut ChaCha8Rng) -> Vec<Point3<f64>> {
        (0..n)
            .map(|_| {
                center
                    + Vector3::new(
                        rng.random_range(-0.05..0.05),
                        rng.random_range(-0.05..0.05),
                        rng.random_range(-0.05..0.05),
                    )
            })
            .collect()
    }

    #[test]
    fn separated_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut pts = blob(Point3::origin(), 50, &mut rng);
        pts.extend(blob(Point3::new(1.0, 0.0, 0.0), 50, &mut rng));
        let c = cloud(pts);
        let tight = euclidean_cluster(&c, 0.2, 10);
        assert_eq!(tight.len(), 2);
        assert!(tight.iter().all(|k| k.member_indices.len() == 50));
        let loose = euclidean_cluster(&c, 1.5, 10);
        assert_eq!(loose.len(), 1);
        assert_eq!(loose[0].member_indices.len(), 100);
    }

    #[test]
    fn small_components_dropped_and_sorted() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut pts = blob(Point3::origin(), 20, &mut rng);
        pts.extend(blob(Point3::new(5.0, 0.0, 0.0), 40, &mut rng));
        pts.extend(blob(Point3::new(10.0, 0.0, 0.0), 5, &mut rng));
        let c = cloud(pts);
        let k = euclidean_cluster(&c, 0.3, 10);
        assert_eq!(k.iter().map(|k| k.member_indices.len()).collect::<Vec<_>>(), vec![40, 20]);
        assert!(euclidean_cluster(&cloud(vec![]), 0.1, 1).is_empty());
    }

    /// Brute-force oracle: union-find over every pair within `tol`.
    fn oracle_components(c: &PointCloud, tol: f64, min_size: usize) -> Vec<Vec<usize>> {
        let n = c.len();
        let mut uf = UnionFind::new(n);
        for i in 0..n {
            for j in i + 1..n {
                if (c.points[i] - c.points[j]).norm() <= tol {
                    uf.union(i, j);
                }
            }
        }
        let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
        for i in 0..n {
            let r = uf.find(i);
            groups.entry(r).or_default().push(i);
        }
        let mut out: Vec<Vec<usize>> = groups.into_values().filter(|g| g.len() >= min_size).collect();
        out.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
        out
    }

    #[test]
    fn clustering_matches_brute_force() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = cloud(
                (0..200)
                    .map(|_| {
                        Point3::new(
                            rng.random_range(-1.0..1.0),
                            rng.random_range(-1.0..1.0),
                            rng.random_range(-1.0..1.0),
                        )
                    })
                    .collect(),
            );
            let got: Vec<Vec<usize>> = euclidean_cluster(&c, 0.2, 3)
                .into_iter()
                .map(|k| k.member_indices)
                .collect();
            assert_eq!(got, oracle_components(&c, 0.2, 3), "seed {seed}");
        }
    }

    #[test]
    fn door_faces_robot() {
        // vertical wall patch at x = 3 centered on y = 0.5
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let noise = Normal::new(0.0, 0.005).unwrap();
        let pts: Vec<_> = (0..600)
            .map(|_| {
                Point3::new(
                    3.0 + noise.sample(&mut rng),
                    rng.random_range(0.05..0.95),
                    rng.random_range(0.0..2.0),
                )
            })
            .collect();
        let obs = extract_observation(&det(ClassLabel::Door), &cloud(pts), &Pose2D::identity(), &Default::default())
            .unwrap();
        assert!((obs.pose.x - 3.0).abs() < 0.02);
        assert!((obs.pose.y - 0.5).abs() < 0.05);
        assert!(wrap_angle(obs.pose.theta - std::f64::consts::PI).abs() < 0.05);
        assert!((obs.range_from_robot - 3.0f64.hypot(0.5)).abs() < 0.05);
        assert!(matches!(obs.shape, Shape::Plane(_)));
    }

    #[test]
    fn compact_object_takes_bearing() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts = blob(Point3::new(2.0, 1.0, 0.5), 100, &mut rng);
        let centroid = centroid_of(pts.iter()).unwrap();
        let obs = extract_observation(
            &det(ClassLabel::FireExtinguisher),
            &cloud(pts),
            &Pose2D::identity(),
            &Default::default(),
        )
        .unwrap();
        assert!((obs.pose.x - centroid.x).abs() < 1e-12);
        assert!((obs.pose.theta - centroid.y.atan2(centroid.x)).abs() < 1e-12);
        assert!((obs.pose.theta - 1.0f64.atan2(2.0)).abs() < 0.02);
    }

    #[test]
    fn empty_cloud_rejected() {
        let r = extract_observation(&det(ClassLabel::Bench), &cloud(vec![]), &Pose2D::identity(), &Default::default());
        assert_eq!(r, Err(FitError::EmptyCloud));
    }

    #[test]
    fn extraction_is_deterministic() {
        let (c, _) = noisy_wall(9);
        let cfg = FittingConfig::default();
        let a = extract_observation(&det(ClassLabel::Door), &c, &Pose2D::identity(), &cfg).unwrap();
        let b = extract_observation(&det(ClassLabel::Door), &c, &Pose2D::identity(), &cfg).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn plane_inliers_within_threshold(seed in any::<u64>(), thresh in 0.01..0.1f64) {
            let (c, _) = noisy_wall(seed);
            let m = ransac_plane(&c, thresh, 100, 10, seed).unwrap();
            prop_assert!((m.normal.norm() - 1.0).abs() < 1e-9);
            prop_assert!(m.inlier_indices.iter().all(|&i| m.distance(&c.points[i]) <= thresh));
            let r = refine_plane(&m, &c).model;
            prop_assert!(r.inlier_indices.iter().all(|&i| r.distance(&c.points[i]) <= thresh));
        }

        #[test]
        fn clusters_partition_and_bound(seed in any::<u64>(), tol in 0.05..0.5f64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = cloud((0..150).map(|_| Point3::new(
                rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.0..0.5))).collect());
            let ks = euclidean_cluster(&c, tol, 2);
            let mut seen = vec![false; c.len()];
            for k in &ks {
                prop_assert!(k.member_indices.len() >= 2);
                for &i in &k.member_indices {
                    prop_assert!(!seen[i]);
                    seen[i] = true;
                    let d = c.points[i] - k.centroid;
                    prop_assert!(d.abs().iter().zip(k.hull_extent.iter()).all(|(a, e)| *a <= *e + 1e-12));
                }
                prop_assert!(k.hull_extent.iter().all(|e| *e >= 0.0));
            }
        }
    }
}
