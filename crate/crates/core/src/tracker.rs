//! Registry of persistent map objects.
//!
//! Each frame, observations of a class are scored against that class's
//! instances with the Mahalanobis distance, assigned with the Hungarian
//! method, gated by δ, and fused with a constant-state Kalman filter.
//! Unmatched observations become new instances. Instances hang off a
//! pose-graph node so that trajectory corrections can move them.

use std::collections::BTreeMap;

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::assignment::{hungarian, CostMatrix};
use crate::class::ClassLabel;
use crate::fitting::ObjectObservation;
use crate::geometry::{wrap_angle, Pose2D};

pub type NodeId = u64;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrackError {
    #[error("covariance is not symmetric positive-definite")]
    NotPositiveDefinite,
    #[error("anchor node {0} is missing from the correction")]
    UnknownAnchor(NodeId),
}

/// Diagonal of a 3×3 covariance in (m², m², rad²).
pub type Diagonal = [f64; 3];

pub fn diag(d: Diagonal) -> Matrix3<f64> {
    Matrix3::from_diagonal(&Vector3::from(d))
}

/// Which covariance weights the association distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateCovariance {
    /// The instance's own state covariance S.
    Instance,
    /// S + R, the covariance of the predicted measurement.
    Innovation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AssociationConfig {
    /// Gate applied to every class without an override.
    pub delta: f64,
    pub class_delta: BTreeMap<ClassLabel, f64>,
    /// Observations farther than this from the robot are ignored (m).
    pub max_range: f64,
    pub measurement_noise: Diagonal,
    pub process_noise: Diagonal,
    pub initial_covariance: Diagonal,
    /// Gate on (x, y) only instead of the full (x, y, θ) state.
    pub position_only: bool,
    pub gate_covariance: GateCovariance,
}

impl Default for AssociationConfig {
    fn default() -> Self {
        Self {
            delta: 1.2,
            class_delta: BTreeMap::new(),
            max_range: 6.0,
            measurement_noise: [0.15 * 0.15, 0.15 * 0.15, 0.2 * 0.2],
            process_noise: [0.0; 3],
            initial_covariance: [0.25, 0.25, 0.25],
            position_only: false,
            gate_covariance: GateCovariance::Innovation,
        }
    }
}

impl AssociationConfig {
    pub fn delta_for(&self, class: ClassLabel) -> f64 {
        self.class_delta.get(&class).copied().unwrap_or(self.delta)
    }

    pub fn validate(&self) -> Result<(), String> {
        let deltas = std::iter::once(self.delta).chain(self.class_delta.values().copied());
        if deltas.into_iter().any(|d| !(d > 0.0)) {
            return Err("delta must be positive".into());
        }
        if !(self.max_range > 0.0) {
            return Err("max_range must be positive".into());
        }
        let nonneg = |d: &Diagonal| d.iter().all(|v| *v >= 0.0 && v.is_finite());
        if !nonneg(&self.measurement_noise) || !nonneg(&self.process_noise) {
            return Err("noise diagonals must be non-negative".into());
        }
        if !self.initial_covariance.iter().all(|v| *v > 0.0 && v.is_finite()) {
            return Err("initial covariance diagonal must be positive".into());
        }
        Ok(())
    }
}

/// One persistent object in the map.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackedInstance {
    pub id: u64,
    pub class_label: ClassLabel,
    pub state: Pose2D,
    pub covariance: Matrix3<f64>,
    pub observation_count: u32,
    pub last_seen: f64,
    pub anchor_node: NodeId,
    /// State expressed in the anchor node's frame.
    pub offset_from_anchor: Pose2D,
}

/// Residual `y - x` with the heading difference wrapped.
pub fn residual(x: &Pose2D, y: &Pose2D) -> Vector3<f64> {
    Vector3::new(y.x - x.x, y.y - x.y, wrap_angle(y.theta - x.theta))
}

fn is_symmetric(s: &Matrix3<f64>) -> bool {
    let scale = s.amax().max(1.0);
    (s - s.transpose()).amax() <= 1e-12 * scale
}

/// `sqrt(rᵀ S⁻¹ r)` over the full (x, y, θ) residual.
pub fn mahalanobis(x: &Pose2D, s: &Matrix3<f64>, y: &Pose2D) -> Result<f64, TrackError> {
    if !is_symmetric(s) {
        return Err(TrackError::NotPositiveDefinite);
    }
    let chol = s.cholesky().ok_or(TrackError::NotPositiveDefinite)?;
    let r = residual(x, y);
    Ok(r.dot(&chol.solve(&r)).max(0.0).sqrt())
}

/// Mahalanobis distance restricted to the position block of `s`.
pub fn mahalanobis_position(x: &Pose2D, s: &Matrix3<f64>, y: &Pose2D) -> Result<f64, TrackError> {
    if !is_symmetric(s) {
        return Err(TrackError::NotPositiveDefinite);
    }
    let block: Matrix2<f64> = s.fixed_view::<2, 2>(0, 0).into_owned();
    let chol = block.cholesky().ok_or(TrackError::NotPositiveDefinite)?;
    let r = Vector2::new(y.x - x.x, y.y - x.y);
    Ok(r.dot(&chol.solve(&r)).max(0.0).sqrt())
}

/// Constant-state Kalman update: identity dynamics and identity
/// measurement model.
pub fn kalman_update(inst: &TrackedInstance, obs: &ObjectObservation, cfg: &AssociationConfig) -> TrackedInstance {
    let predicted = inst.covariance + diag(cfg.process_noise);
    let r = diag(cfg.measurement_noise);
    let innovation_cov = predicted + r;
    let gain = match innovation_cov.try_inverse() {
        Some(inv) => predicted * inv,
        None => Matrix3::zeros(),
    };
    let innovation = residual(&inst.state, &obs.pose);
    let correction = gain * innovation;
    let state = Pose2D::new(
        inst.state.x + correction.x,
        inst.state.y + correction.y,
        inst.state.theta + correction.z,
    );
    // Joseph form keeps the result symmetric positive-definite.
    let i_k = Matrix3::identity() - gain;
    let cov = i_k * predicted * i_k.transpose() + gain * r * gain.transpose();
    let covariance = 0.5 * (cov + cov.transpose());
    TrackedInstance {
        state,
        covariance,
        observation_count: inst.observation_count + 1,
        last_seen: obs.timestamp,
        ..inst.clone()
    }
}

/// What happened to each observation during one `step`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepReport {
    /// (instance id, observation index, distance)
    pub associated: Vec<(u64, usize, f64)>,
    pub spawned: Vec<u64>,
    pub out_of_range: usize,
    pub ignored_dynamic: usize,
}

/// All tracked instances, grouped by class, plus the pose-graph node poses
/// the instances are anchored to.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrackerState {
    classes: BTreeMap<ClassLabel, Vec<TrackedInstance>>,
    next_id: u64,
    node_poses: BTreeMap<NodeId, Pose2D>,
}

/// Large finite cost used when a distance cannot be computed.
const UNREACHABLE: f64 = 1e12;

impl TrackerState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rebuilds a tracker from stored instances.
    pub fn from_instances(instances: impl IntoIterator<Item = TrackedInstance>) -> Self {
        let mut state = Self::new();
        for inst in instances {
            state.next_id = state.next_id.max(inst.id + 1);
            state.classes.entry(inst.class_label).or_default().push(inst);
        }
        state
    }

    pub fn instances(&self) -> impl Iterator<Item = &TrackedInstance> {
        self.classes.values().flatten()
    }

    pub fn instances_of(&self, class: ClassLabel) -> &[TrackedInstance] {
        self.classes.get(&class).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.classes.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn node_poses(&self) -> &BTreeMap<NodeId, Pose2D> {
        &self.node_poses
    }

    /// Instances sorted by id.
    pub fn snapshot(&self) -> Vec<TrackedInstance> {
        let mut all: Vec<_> = self.instances().cloned().collect();
        all.sort_by_key(|i| i.id);
        all
    }

    /// Integrates one frame of observations seen from `robot`, which is also
    /// the pose of pose-graph node `anchor`.
    pub fn step(
        &mut self,
        observations: &[ObjectObservation],
        robot: Pose2D,
        anchor: NodeId,
        cfg: &AssociationConfig,
    ) -> StepReport {
        self.node_poses.insert(anchor, robot);
        let mut report = StepReport::default();
        let mut by_class: BTreeMap<ClassLabel, Vec<usize>> = BTreeMap::new();
        for (j, obs) in observations.iter().enumerate() {
            if !obs.class_label.is_static() {
                report.ignored_dynamic += 1;
            } else if obs.range_from_robot > cfg.max_range {
                report.out_of_range += 1;
            } else {
                by_class.entry(obs.class_label).or_default().push(j);
            }
        }

        for (class, obs_idx) in by_class {
            let delta = cfg.delta_for(class);
            let instances = self.classes.entry(class).or_default();
            let costs = CostMatrix::from_fn(instances.len(), obs_idx.len(), |i, k| {
                let inst = &instances[i];
                let s = match cfg.gate_covariance {
                    GateCovariance::Instance => inst.covariance,
                    GateCovariance::Innovation => inst.covariance + diag(cfg.measurement_noise),
                };
                let y = &observations[obs_idx[k]].pose;
                let d = if cfg.position_only {
                    mahalanobis_position(&inst.state, &s, y)
                } else {
                    mahalanobis(&inst.state, &s, y)
                };
                d.map(|d| d.min(UNREACHABLE)).unwrap_or(UNREACHABLE)
            })
            .expect("distances are finite");

            let mut used = vec![false; obs_idx.len()];
            for (i, k) in hungarian(&costs).pairs {
                let d = costs.get(i, k);
                if d >= delta {
                    continue;
                }
                let j = obs_idx[k];
                let mut updated = kalman_update(&instances[i], &observations[j], cfg);
                if let Some(anchor_pose) = self.node_poses.get(&updated.anchor_node) {
                    updated.offset_from_anchor = anchor_pose.relative(&updated.state);
                }
                report.associated.push((updated.id, j, d));
                instances[i] = updated;
                used[k] = true;
            }

            for (k, &j) in obs_idx.iter().enumerate() {
                if used[k] {
                    continue;
                }
                let obs = &observations[j];
                let id = self.next_id;
                self.next_id += 1;
                instances.push(TrackedInstance {
                    id,
                    class_label: class,
                    state: obs.pose,
                    covariance: diag(cfg.initial_covariance),
                    observation_count: 1,
                    last_seen: obs.timestamp,
                    anchor_node: anchor,
                    offset_from_anchor: robot.relative(&obs.pose),
                });
                report.spawned.push(id);
            }
        }
        report
    }

    /// Moves every instance with its anchor after a trajectory correction:
    /// the new state is `corrected[anchor] ∘ offset_from_anchor`.
    /// Node poses are updated to the corrected values.
    pub fn reanchor(
        &mut self,
        corrections: &BTreeMap<NodeId, Pose2D>,
        original: &BTreeMap<NodeId, Pose2D>,
    ) -> Result<(), TrackError> {
        if let Some(missing) = self
            .instances()
            .map(|i| i.anchor_node)
            .find(|n| !corrections.contains_key(n) || !original.contains_key(n))
        {
            return Err(TrackError::UnknownAnchor(missing));
        }
        for inst in self.classes.values_mut().flatten() {
            inst.state = corrections[&inst.anchor_node].compose(&inst.offset_from_anchor);
        }
        for (node, pose) in corrections {
            self.node_poses.insert(*node, *pose);
        }
        Ok(())
    }
}
