//! Replays a recorded frame log through shape fitting and the tracker.

use serde::{Deserialize, Serialize};

use crate::fitting::{extract_observation, FittingConfig};
use crate::geometry::{
    backproject_box, camera_pose_from_robot, transform_cloud, CameraIntrinsics, GeometryError, PoseBuffer,
    DEFAULT_POSE_BUFFER_CAPACITY,
};
use crate::simulator::{CameraRig, CorrectionEvent, FrameRecord};
use crate::tracker::{AssociationConfig, TrackError, TrackerState};

/// Everything the tracking back end can be tuned with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackingConfig {
    pub association: AssociationConfig,
    pub fitting: FittingConfig,
    pub pose_buffer_capacity: usize,
}

impl Default for TrackingConfig {
    fn default() -> Self {
        Self {
            association: AssociationConfig::default(),
            fitting: FittingConfig::default(),
            pose_buffer_capacity: DEFAULT_POSE_BUFFER_CAPACITY,
        }
    }
}

impl TrackingConfig {
    pub fn validate(&self) -> Result<(), String> {
        self.association.validate()?;
        if self.pose_buffer_capacity == 0 {
            return Err("pose_buffer_capacity must be positive".into());
        }
        if !(self.fitting.plane_threshold > 0.0) || !(self.fitting.cluster_tolerance > 0.0) {
            return Err("fitting thresholds must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("frame {index}: {source}")]
    Pose {
        index: usize,
        #[source]
        source: GeometryError,
    },
    #[error("correction at t={timestamp}: {source}")]
    Correction {
        timestamp: f64,
        #[source]
        source: TrackError,
    },
    #[error("invalid camera: {0}")]
    Camera(#[from] GeometryError),
}

/// Counters describing how detections fared.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayStats {
    pub frames: usize,
    pub detections: usize,
    /// Detections dropped because back-projection or fitting failed.
    pub dropped: usize,
    pub associated: usize,
    pub spawned: usize,
    pub out_of_range: usize,
    pub corrections: usize,
}

/// Incremental replay: feed frames and corrections in time order.
#[derive(Debug, Clone)]
pub struct Replayer {
    camera: CameraRig,
    cfg: TrackingConfig,
    poses: PoseBuffer,
    tracker: TrackerState,
    stats: ReplayStats,
}

impl Replayer {
    pub fn new(camera: CameraRig, cfg: TrackingConfig) -> Result<Self, PipelineError> {
        camera.intrinsics.validate()?;
        Ok(Self {
            poses: PoseBuffer::with_capacity(cfg.pose_buffer_capacity.max(1)),
            camera,
            cfg,
            tracker: TrackerState::new(),
            stats: ReplayStats::default(),
        })
    }

    pub fn tracker(&self) -> &TrackerState {
        &self.tracker
    }

    pub fn stats(&self) -> ReplayStats {
        self.stats
    }

    pub fn into_tracker(self) -> TrackerState {
        self.tracker
    }

    pub fn frame(&mut self, index: usize, frame: &FrameRecord) -> Result<(), PipelineError> {
        let pose_err = |source| PipelineError::Pose { index, source };
        self.poses.push(frame.timestamp, frame.odom_pose).map_err(pose_err)?;
        self.stats.frames += 1;
        let intr: &CameraIntrinsics = &self.camera.intrinsics;
        let mut observations = Vec::with_capacity(frame.detections.len());
        for sensed in &frame.detections {
            self.stats.detections += 1;
            // the image was taken when the detection's timestamp says, not now
            let robot = self.poses.pose_at(sensed.detection.timestamp).map_err(pose_err)?;
            let cam = camera_pose_from_robot(&robot, self.camera.mount_height);
            let fitted = backproject_box(&sensed.patch, intr, &sensed.detection.bbox)
                .and_then(|c| transform_cloud(&c, &cam))
                .ok()
                .and_then(|cloud| extract_observation(&sensed.detection, &cloud, &robot, &self.cfg.fitting).ok());
            match fitted {
                Some(obs) => observations.push(obs),
                None => self.stats.dropped += 1,
            }
        }
        let report = self
            .tracker
            .step(&observations, frame.odom_pose, frame.anchor_node, &self.cfg.association);
        self.stats.associated += report.associated.len();
        self.stats.spawned += report.spawned.len();
        self.stats.out_of_range += report.out_of_range;
        Ok(())
    }

    pub fn correction(&mut self, event: &CorrectionEvent) -> Result<(), PipelineError> {
        let original = self.tracker.node_poses().clone();
        self.tracker
            .reanchor(&event.corrections, &original)
            .map_err(|source| PipelineError::Correction {
                timestamp: event.timestamp,
                source,
            })?;
        self.stats.corrections += 1;
        Ok(())
    }
}

/// Replays a whole log. A correction is applied before the first frame
/// stamped later than it; corrections after the last frame are applied at
/// the end.
pub fn replay(
    camera: CameraRig,
    frames: &[FrameRecord],
    events: &[CorrectionEvent],
    cfg: &TrackingConfig,
) -> Result<(TrackerState, ReplayStats), PipelineError> {
    let mut r = Replayer::new(camera, cfg.clone())?;
    let mut events = events.iter().peekable();
    for (i, frame) in frames.iter().enumerate() {
        while let Some(e) = events.next_if(|e| e.timestamp < frame.timestamp) {
            r.correction(e)?;
        }
        r.frame(i, frame)?;
    }
    for e in events {
        r.correction(e)?;
    }
    let stats = r.stats();
    Ok((r.into_tracker(), stats))
}
