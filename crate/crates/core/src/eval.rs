//! Scoring augmented maps against ground truth, and parameter sweeps.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assignment::{hungarian, CostMatrix};
use crate::class::ClassLabel;
use crate::map_io::GroundTruthAnnotation;
use crate::pipeline::{replay, PipelineError};
use crate::simulator::{run_scenario, ScenarioConfig, SimError, SimulationLog};
use crate::tracker::TrackedInstance;

pub const DEFAULT_RADIUS: f64 = 2.0;

/// One instance-to-truth pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub instance: usize,
    pub truth: usize,
    pub error: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Matching {
    pub matches: Vec<Match>,
    /// Indices of instances with no truth partner.
    pub false_positives: Vec<usize>,
    /// Indices of observed truths with no instance partner.
    pub false_negatives: Vec<usize>,
}

/// Per class, a one-to-one matching between instances and observed truths
/// that pairs as many as possible within `radius` and, among those, has
/// the least total distance. Truths whose `observed` flag is false take no
/// part.
pub fn match_instances(
    instances: &[TrackedInstance],
    truth: &[GroundTruthAnnotation],
    observed: Option<&[bool]>,
    radius: f64,
) -> Matching {
    let mut out = Matching::default();
    let seen = |j: usize| observed.is_none_or(|m| m.get(j).copied().unwrap_or(false));
    for class in ClassLabel::ALL {
        let inst: Vec<usize> = (0..instances.len()).filter(|&i| instances[i].class_label == class).collect();
        let gt: Vec<usize> = (0..truth.len()).filter(|&j| truth[j].class_label == class && seen(j)).collect();
        let dist = |i: usize, j: usize| instances[inst[i]].state.distance_to(&truth[gt[j]].pose);
        // out-of-radius pairs cost more than any full set of valid ones, so
        // the assignment first maximizes the number of valid pairs
        let beyond = radius * (inst.len().min(gt.len()) + 1) as f64;
        let costs = CostMatrix::from_fn(inst.len(), gt.len(), |i, j| {
            let d = dist(i, j);
            if d <= radius {
                d
            } else {
                beyond
            }
        })
        .expect("finite poses");
        let mut inst_used = vec![false; inst.len()];
        let mut gt_used = vec![false; gt.len()];
        for (i, j) in hungarian(&costs).pairs {
            let error = dist(i, j);
            if error <= radius {
                inst_used[i] = true;
                gt_used[j] = true;
                out.matches.push(Match {
                    instance: inst[i],
                    truth: gt[j],
                    error,
                });
            }
        }
        out.false_positives
            .extend(inst.iter().zip(&inst_used).filter(|(_, u)| !**u).map(|(i, _)| *i));
        out.false_negatives
            .extend(gt.iter().zip(&gt_used).filter(|(_, u)| !**u).map(|(j, _)| *j));
    }
    out
}

/// Scores for one class, or for all classes pooled (`class` = "all").
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class: String,
    pub instances: usize,
    /// Observed ground-truth objects.
    pub truths: usize,
    /// Matched instances.
    pub detections: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// Mean position error over matches (m); 0 without matches.
    pub avg_error: f64,
    pub std_error: f64,
    /// FP and FN per observed ground-truth object.
    pub fp_rate: f64,
    pub fn_rate: f64,
}

impl ClassReport {
    fn from_errors(class: String, instances: usize, truths: usize, errors: &[f64]) -> Self {
        let n = errors.len();
        let (avg, std) = mean_std(errors);
        let fp = instances - n;
        let fn_ = truths - n;
        let per_truth = |c: usize| c as f64 / truths.max(1) as f64;
        Self {
            class,
            instances,
            truths,
            detections: n,
            fp,
            fn_,
            avg_error: avg,
            std_error: std,
            fp_rate: per_truth(fp),
            fn_rate: per_truth(fn_),
        }
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Classes present in the map or the observed truth, in label order.
    pub classes: Vec<ClassReport>,
    pub all: ClassReport,
}

impl EvalReport {
    pub fn class(&self, class: ClassLabel) -> Option<&ClassReport> {
        self.classes.iter().find(|c| c.class == class.as_str())
    }

    /// Text table with one row per class plus the pooled row.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<18} {:>9} {:>4} {:>4} {:>10} {:>8} {:>8} {:>8}",
            "class", "detection", "FP", "FN", "avg.error", "std", "FP%", "FN%"
        );
        for r in self.classes.iter().chain(std::iter::once(&self.all)) {
            let _ = writeln!(
                s,
                "{:<18} {:>9} {:>4} {:>4} {:>10.3} {:>8.3} {:>7.1}% {:>7.1}%",
                r.class,
                r.detections,
                r.fp,
                r.fn_,
                r.avg_error,
                r.std_error,
                100.0 * r.fp_rate,
                100.0 * r.fn_rate
            );
        }
        s
    }

    /// One JSON object per row.
    pub fn jsonl(&self) -> String {
        let mut s = String::new();
        for r in self.classes.iter().chain(std::iter::once(&self.all)) {
            s.push_str(&serde_json::to_string(r).expect("plain data"));
            s.push('\n');
        }
        s
    }
}

pub fn evaluate(
    instances: &[TrackedInstance],
    truth: &[GroundTruthAnnotation],
    observed: Option<&[bool]>,
    radius: f64,
) -> EvalReport {
    let m = match_instances(instances, truth, observed, radius);
    let seen = |j: usize| observed.is_none_or(|mask| mask.get(j).copied().unwrap_or(false));
    let mut classes = Vec::new();
    for class in ClassLabel::ALL {
        let n_inst = instances.iter().filter(|i| i.class_label == class).count();
        let n_truth = (0..truth.len()).filter(|&j| truth[j].class_label == class && seen(j)).count();
        if n_inst == 0 && n_truth == 0 {
            continue;
        }
        let errors: Vec<f64> = m
            .matches
            .iter()
            .filter(|x| truth[x.truth].class_label == class)
            .map(|x| x.error)
            .collect();
        classes.push(ClassReport::from_errors(class.to_string(), n_inst, n_truth, &errors));
    }
    let errors: Vec<f64> = m.matches.iter().map(|x| x.error).collect();
    let n_truth = (0..truth.len()).filter(|&j| seen(j)).count();
    let all = ClassReport::from_errors("all".into(), instances.len(), n_truth, &errors);
    EvalReport { classes, all }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Delta,
    #[serde(rename = "sigma_I")]
    SigmaI,
    MaxRange,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Delta => "delta",
            SweepParam::SigmaI => "sigma_I",
            SweepParam::MaxRange => "max_range",
        }
    }

    /// Only the noise level changes the simulated data.
    fn changes_log(self) -> bool {
        self == SweepParam::SigmaI
    }

    fn apply(self, cfg: &mut ScenarioConfig, value: f64) {
        match self {
            SweepParam::Delta => {
                cfg.tracking.association.delta = value;
                cfg.tracking.association.class_delta.clear();
            }
            SweepParam::SigmaI => cfg.noise.sigma_i = value,
            SweepParam::MaxRange => cfg.tracking.association.max_range = value,
        }
    }
}

impl std::str::FromStr for SweepParam {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "delta" => Ok(SweepParam::Delta),
            "sigma_I" | "sigma_i" => Ok(SweepParam::SigmaI),
            "max_range" => Ok(SweepParam::MaxRange),
            other => Err(format!("unknown sweep parameter `{other}` (delta, sigma_I, max_range)")),
        }
    }
}

/// Mean of per-seed scores for one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanReport {
    pub class: String,
    pub detections: f64,
    pub fp: f64,
    #[serde(rename = "fn")]
    pub fn_: f64,
    /// Averaged over the seeds that produced at least one match.
    pub avg_error: f64,
    pub fp_rate: f64,
    pub fn_rate: f64,
}

impl MeanReport {
    fn of(class: &str, rows: &[&ClassReport]) -> Self {
        let n = rows.len().max(1) as f64;
        let mean = |f: &dyn Fn(&ClassReport) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / n;
        let with_matches: Vec<f64> = rows.iter().filter(|r| r.detections > 0).map(|r| r.avg_error).collect();
        Self {
            class: class.to_string(),
            detections: mean(&|r| r.detections as f64),
            fp: mean(&|r| r.fp as f64),
            fn_: mean(&|r| r.fn_ as f64),
            avg_error: mean_std(&with_matches).0,
            fp_rate: mean(&|r| r.fp_rate),
            fn_rate: mean(&|r| r.fn_rate),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    /// Pooled over all classes, then per class.
    pub mean: Vec<MeanReport>,
    pub per_seed: Vec<EvalReport>,
}

impl SweepPoint {
    pub fn class(&self, class: &str) -> Option<&MeanReport> {
        self.mean.iter().find(|m| m.class == class)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub parameter: SweepParam,
    pub seeds: Vec<u64>,
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    /// Aligned table of mean scores for one class row ("all" pools classes).
    pub fn table(&self, class: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:>10} {:>10} {:>8} {:>8} {:>8} {:>8} {:>10}",
            self.parameter.name(),
            "detection",
            "FP",
            "FN",
            "FP%",
            "FN%",
            "avg.error"
        );
        for p in &self.points {
            if let Some(m) = p.class(class) {
                let _ = writeln!(
                    s,
                    "{:>10} {:>10.2} {:>8.2} {:>8.2} {:>7.1}% {:>7.1}% {:>10.3}",
                    p.value,
                    m.detections,
                    m.fp,
                    m.fn_,
                    100.0 * m.fp_rate,
                    100.0 * m.fn_rate,
                    m.avg_error
                );
            }
        }
        s
    }

    /// One JSON record per (value, class) mean.
    pub fn jsonl(&self) -> String {
        #[derive(Serialize)]
        struct Row<'a> {
            parameter: &'static str,
            value: f64,
            seeds: usize,
            #[serde(flatten)]
            mean: &'a MeanReport,
        }
        let mut s = String::new();
        for p in &self.points {
            for m in &p.mean {
                let row = Row {
                    parameter: self.parameter.name(),
                    value: p.value,
                    seeds: self.seeds.len(),
                    mean: m,
                };
                s.push_str(&serde_json::to_string(&row).expect("plain data"));
                s.push('\n');
            }
        }
        s
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SweepError {
    #[error("a sweep needs at least two values")]
    TooFewValues,
    #[error("sweep values must be strictly increasing")]
    NotIncreasing,
    #[error("a sweep needs at least one seed")]
    NoSeeds,
    #[error("invalid value {value} for {param}: {msg}")]
    BadValue { param: &'static str, value: f64, msg: String },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

/// Simulates, tracks and scores one scenario.
pub fn run_and_evaluate(cfg: &ScenarioConfig, base_dir: Option<&Path>, radius: f64) -> Result<EvalReport, SweepError> {
    let log = run_scenario(cfg, base_dir)?;
    Ok(track_and_evaluate(&log, cfg, radius)?)
}

fn track_and_evaluate(log: &SimulationLog, cfg: &ScenarioConfig, radius: f64) -> Result<EvalReport, PipelineError> {
    let (tracker, _) = replay(log.camera, &log.frames, &log.events, &cfg.tracking)?;
    Ok(evaluate(&tracker.snapshot(), &log.truth, Some(&log.observed), radius))
}

/// Runs every (value, seed) combination, seeds `base.seed .. base.seed +
/// seeds`. Runs are independent and execute in parallel; results are
/// reduced in (value, seed) order.
pub fn sweep(
    base: &ScenarioConfig,
    base_dir: Option<&Path>,
    param: SweepParam,
    values: &[f64],
    seeds: u64,
    radius: f64,
) -> Result<SweepResult, SweepError> {
    if values.len() < 2 {
        return Err(SweepError::TooFewValues);
    }
    if values.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(SweepError::NotIncreasing);
    }
    if seeds == 0 {
        return Err(SweepError::NoSeeds);
    }
    let seed_list: Vec<u64> = (0..seeds).map(|i| base.seed.wrapping_add(i)).collect();
    let configure = |value: f64, seed: u64| -> Result<ScenarioConfig, SweepError> {
        let mut cfg = base.clone();
        cfg.seed = seed;
        param.apply(&mut cfg, value);
        cfg.validate().map_err(|e| SweepError::BadValue {
            param: param.name(),
            value,
            msg: e.to_string(),
        })?;
        Ok(cfg)
    };
    for &v in values {
        configure(v, base.seed)?;
    }

    let reports: Vec<Vec<EvalReport>> = if param.changes_log() {
        let jobs: Vec<(f64, u64)> = values
            .iter()
            .flat_map(|&v| seed_list.iter().map(move |&s| (v, s)))
            .collect();
        let flat: Vec<EvalReport> = jobs
            .par_iter()
            .map(|&(v, s)| run_and_evaluate(&configure(v, s)?, base_dir, radius))
            .collect::<Result<_, _>>()?;
        flat.chunks(seed_list.len()).map(<[_]>::to_vec).collect()
    } else {
        // tracker-side parameters reuse one simulated log per seed
        let per_seed: Vec<Vec<EvalReport>> = seed_list
            .par_iter()
            .map(|&s| {
                let log = run_scenario(&configure(values[0], s)?, base_dir)?;
                values
                    .iter()
                    .map(|&v| Ok(track_and_evaluate(&log, &configure(v, s)?, radius)?))
                    .collect::<Result<Vec<_>, SweepError>>()
            })
            .collect::<Result<_, _>>()?;
        (0..values.len())
            .map(|vi| per_seed.iter().map(|r| r[vi].clone()).collect())
            .collect()
    };

    let points = values
        .iter()
        .zip(reports)
        .map(|(&value, per_seed)| {
            let mut mean = vec![MeanReport::of("all", &per_seed.iter().map(|r| &r.all).collect::<Vec<_>>())];
            for class in ClassLabel::STATIC {
                let rows: Vec<&ClassReport> = per_seed.iter().filter_map(|r| r.class(class)).collect();
                if !rows.is_empty() {
                    mean.push(MeanReport::of(class.as_str(), &rows));
                }
            }
            SweepPoint { value, mean, per_seed }
        })
        .collect();
    Ok(SweepResult {
        parameter: param,
        seeds: seed_list,
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Pose2D;
    use crate::simulator::presets;
    use crate::tracker::diag;

    fn inst(id: u64, class: ClassLabel, x: f64, y: f64) -> TrackedInstance {
        TrackedInstance {
            id,
            class_label: class,
            state: Pose2D::new(x, y, 0.0),
            covariance: diag([0.1; 3]),
            observation_count: 1,
            last_seen: 0.0,
            anchor_node: 0,
            offset_from_anchor: Pose2D::new(x, y, 0.0),
        }
    }

    fn gt(class: ClassLabel, x: f64, y: f64) -> GroundTruthAnnotation {
        GroundTruthAnnotation {
            class_label: class,
            pose: Pose2D::new(x, y, 0.0),
        }
    }

    fn door(x: f64) -> TrackedInstance {
        inst(0, ClassLabel::Door, x, 0.0)
    }

    #[test]
    fn single_match_within_radius() {
        let r = evaluate(&[door(0.3)], &[gt(ClassLabel::Door, 0.0, 0.0)], None, 2.0);
        let d = r.class(ClassLabel::Door).unwrap();
        assert_eq!((d.detections, d.fp, d.fn_), (1, 0, 0));
        assert!((d.avg_error - 0.3).abs() < 1e-12);
    }

    #[test]
    fn far_instance_is_fp_and_fn() {
        let r = evaluate(&[door(5.0)], &[gt(ClassLabel::Door, 0.0, 0.0)], None, 2.0);
        let d = r.class(ClassLabel::Door).unwrap();
        assert_eq!((d.detections, d.fp, d.fn_), (0, 1, 1));
        assert_eq!(d.avg_error, 0.0);
    }

    #[test]
    fn matching_is_one_to_one() {
        let m = match_instances(&[door(0.1), door(-0.2)], &[gt(ClassLabel::Door, 0.0, 0.0)], None, 2.0);
        assert_eq!(m.matches.len(), 1);
        assert_eq!(m.matches[0].instance, 0);
        assert_eq!(m.false_positives, vec![1]);
        assert!(m.false_negatives.is_empty());
    }

    #[test]
    fn matching_prefers_more_pairs_within_radius() {
        // pairing 0-0 and 1-1 costs 0.1 + 1.9; the cheaper 1-0 leaves both
        // other items beyond the radius
        let instances = [door(0.0), door(1.9)];
        let truth = [gt(ClassLabel::Door, 1.8, 0.0), gt(ClassLabel::Door, 3.8, 0.0)];
        let m = match_instances(&instances, &truth, None, 2.0);
        assert_eq!(m.matches.len(), 2);
        assert!(m.false_positives.is_empty() && m.false_negatives.is_empty());
    }

    #[test]
    fn classes_never_cross_match() {
        let r = evaluate(
            &[inst(0, ClassLabel::Bench, 0.0, 0.0)],
            &[gt(ClassLabel::Door, 0.0, 0.0)],
            None,
            2.0,
        );
        assert_eq!(r.class(ClassLabel::Bench).unwrap().fp, 1);
        assert_eq!(r.class(ClassLabel::Door).unwrap().fn_, 1);
        assert_eq!((r.all.fp, r.all.fn_, r.all.detections), (1, 1, 0));
    }

    #[test]
    fn no_instances_all_fn() {
        let truth: Vec<_> = (0..5).map(|i| gt(ClassLabel::Door, i as f64 * 3.0, 0.0)).collect();
        let r = evaluate(&[], &truth, None, 2.0);
        assert_eq!(r.class(ClassLabel::Door).unwrap().fn_, 5);
        assert_eq!(r.class(ClassLabel::Door).unwrap().fn_rate, 1.0);
    }

    #[test]
    fn unobserved_truths_are_not_fn() {
        let truth = [gt(ClassLabel::Door, 0.0, 0.0), gt(ClassLabel::Door, 10.0, 0.0)];
        let r = evaluate(&[door(0.1)], &truth, Some(&[true, false]), 2.0);
        let d = r.class(ClassLabel::Door).unwrap();
        assert_eq!((d.truths, d.detections, d.fp, d.fn_), (1, 1, 0, 0));
    }

    #[test]
    fn count_identities_hold() {
        let instances = [door(0.1), door(3.0), door(9.0), inst(3, ClassLabel::Bench, 1.0, 1.0)];
        let truth = [
            gt(ClassLabel::Door, 0.0, 0.0),
            gt(ClassLabel::Door, 3.5, 0.0),
            gt(ClassLabel::Door, 6.0, 0.0),
            gt(ClassLabel::TrashBin, 2.0, 2.0),
        ];
        let r = evaluate(&instances, &truth, None, 2.0);
        for c in r.classes.iter().chain(std::iter::once(&r.all)) {
            assert_eq!(c.detections + c.fp, c.instances, "{}", c.class);
            assert_eq!(c.detections + c.fn_, c.truths, "{}", c.class);
            assert!(c.avg_error >= 0.0 && c.std_error >= 0.0);
        }
    }

    #[test]
    fn table_has_expected_columns() {
        let r = evaluate(&[door(0.3)], &[gt(ClassLabel::Door, 0.0, 0.0)], None, 2.0);
        let t = r.table();
        let header = t.lines().next().unwrap();
        for col in ["class", "detection", "FP", "FN", "avg.error"] {
            assert!(header.contains(col));
        }
        assert!(t.lines().nth(1).unwrap().starts_with("door"));
        assert_eq!(r.jsonl().lines().count(), 2);
    }

    #[test]
    fn noiseless_corridor_is_perfect() {
        let cfg = presets::noiseless_corridor(0);
        let r = run_and_evaluate(&cfg, None, DEFAULT_RADIUS).unwrap();
        assert_eq!((r.all.fp, r.all.fn_), (0, 0), "\n{}", r.table());
        assert!(r.all.avg_error <= 0.05, "\n{}", r.table());
    }

    #[test]
    fn sweep_rejects_bad_value_lists() {
        let cfg = presets::noiseless_corridor(0);
        assert!(matches!(
            sweep(&cfg, None, SweepParam::Delta, &[1.0], 1, 2.0),
            Err(SweepError::TooFewValues)
        ));
        assert!(matches!(
            sweep(&cfg, None, SweepParam::Delta, &[1.0, 0.9], 1, 2.0),
            Err(SweepError::NotIncreasing)
        ));
        assert!(matches!(
            sweep(&cfg, None, SweepParam::Delta, &[-1.0, 1.0], 1, 2.0),
            Err(SweepError::BadValue { .. })
        ));
    }

    #[test]
    fn sweep_is_deterministic() {
        let cfg = presets::noiseless_corridor(0);
        let a = sweep(&cfg, None, SweepParam::MaxRange, &[3.0, 6.0], 2, 2.0).unwrap();
        let b = sweep(&cfg, None, SweepParam::MaxRange, &[3.0, 6.0], 2, 2.0).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.points.len(), 2);
        assert_eq!(a.seeds, vec![0, 1]);
        assert_eq!(a.jsonl(), b.jsonl());
        assert!(a.table("all").lines().count() == 3);
    }

    #[test]
    fn param_names_parse() {
        for p in [SweepParam::Delta, SweepParam::SigmaI, SweepParam::MaxRange] {
            assert_eq!(p.name().parse::<SweepParam>().unwrap(), p);
        }
        assert!("gamma".parse::<SweepParam>().is_err());
    }
}
