//! Percentage of correct keypoints, normalized by torso size.
//!
//! A keypoint is correct when its error is strictly smaller than
//! `tolerance × torso_size(gt)`, where the torso size is the distance between
//! the mid-shoulder and mid-hip points of the ground truth.

use std::fmt::Write as _;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::synthdata::{DatasetManifest, Image};
use crate::topology::{coco17_subset, KeypointId, TopologySubset};
use crate::{Error, Pose, Result};

/// What to do with keypoints the ground truth marks invisible.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InvisibleRule {
    #[default]
    Exclude,
    CountIncorrect,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Subset {
    #[default]
    Coco17,
    Full,
}

impl Subset {
    pub fn topology(self) -> TopologySubset {
        match self {
            Subset::Coco17 => coco17_subset(),
            Subset::Full => TopologySubset::full(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub tolerance: f64,
    pub subset: Subset,
    pub invisible: InvisibleRule,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            tolerance: 0.2,
            subset: Subset::Coco17,
            invisible: InvisibleRule::Exclude,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) || !self.tolerance.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        Ok(())
    }

    pub fn with_tolerance(self, tolerance: f64) -> Self {
        Self { tolerance, ..self }
    }
}

pub fn torso_size(gt: &Pose) -> Result<f64> {
    let size = gt.mid_shoulder().distance(gt.mid_hip());
    if !size.is_finite() {
        return Err(Error::DegeneratePose("non-finite torso"));
    }
    if size == 0.0 {
        return Err(Error::DegeneratePose("zero torso size"));
    }
    Ok(size)
}

/// Outcome for each subset member: `None` when excluded.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleScore {
    pub keypoints: Vec<(KeypointId, Option<bool>)>,
}

impl SampleScore {
    pub fn correct(&self) -> usize {
        self.keypoints.iter().filter(|(_, c)| *c == Some(true)).count()
    }

    pub fn total(&self) -> usize {
        self.keypoints.iter().filter(|(_, c)| c.is_some()).count()
    }

    /// `None` when every keypoint was excluded.
    pub fn pck(&self) -> Option<f64> {
        let total = self.total();
        (total > 0).then(|| 100.0 * self.correct() as f64 / total as f64)
    }
}

pub fn pck(pred: &Pose, gt: &Pose, config: &EvalConfig) -> Result<SampleScore> {
    config.validate()?;
    let threshold = config.tolerance * torso_size(gt)?;
    let keypoints = config
        .subset
        .topology()
        .members
        .into_iter()
        .map(|id| {
            let visible = gt.visibility[id.index()] >= 0.5;
            let outcome = match (visible, config.invisible) {
                (false, InvisibleRule::Exclude) => None,
                (false, InvisibleRule::CountIncorrect) => Some(false),
                (true, _) => Some(pred.point(id).distance(gt.point(id)) < threshold),
            };
            (id, outcome)
        })
        .collect();
    Ok(SampleScore { keypoints })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub correct: u64,
    pub total: u64,
}

impl Counts {
    pub fn pck(&self) -> Option<f64> {
        (self.total > 0).then(|| 100.0 * self.correct as f64 / self.total as f64)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub model: String,
    pub dataset: String,
    pub tolerance: f64,
    pub per_keypoint: Vec<(KeypointId, Counts)>,
    pub per_sample: Vec<Counts>,
    /// Wall time spent inside the predictor.
    pub predictor_seconds: f64,
}

impl EvalReport {
    pub fn new(model: &str, dataset: &str, config: &EvalConfig) -> Self {
        Self {
            model: model.into(),
            dataset: dataset.into(),
            tolerance: config.tolerance,
            per_keypoint: config
                .subset
                .topology()
                .members
                .into_iter()
                .map(|id| (id, Counts::default()))
                .collect(),
            per_sample: Vec::new(),
            predictor_seconds: 0.0,
        }
    }

    pub fn add(&mut self, score: &SampleScore) {
        for ((id, counts), (sid, outcome)) in self.per_keypoint.iter_mut().zip(&score.keypoints) {
            debug_assert_eq!(id, sid);
            if let Some(ok) = outcome {
                counts.total += 1;
                counts.correct += u64::from(*ok);
            }
        }
        self.per_sample.push(Counts {
            correct: score.correct() as u64,
            total: score.total() as u64,
        });
    }

    pub fn totals(&self) -> Counts {
        self.per_keypoint.iter().fold(Counts::default(), |acc, (_, c)| Counts {
            correct: acc.correct + c.correct,
            total: acc.total + c.total,
        })
    }

    /// `100 × Σcorrect / Σtotal`; zero when nothing was scored.
    pub fn aggregate(&self) -> f64 {
        self.totals().pck().unwrap_or(0.0)
    }

    pub fn frames(&self) -> usize {
        self.per_sample.len()
    }

    pub fn fps(&self) -> Option<f64> {
        (self.predictor_seconds > 0.0).then(|| self.frames() as f64 / self.predictor_seconds)
    }

    /// Count-weighted union of two reports over the same subset.
    pub fn merge(&mut self, other: &EvalReport) -> Result<()> {
        let same_subset = self.per_keypoint.len() == other.per_keypoint.len()
            && self
                .per_keypoint
                .iter()
                .zip(&other.per_keypoint)
                .all(|(a, b)| a.0 == b.0);
        if !same_subset {
            return Err(Error::InvalidConfig("merging reports over different subsets".into()));
        }
        for ((_, a), (_, b)) in self.per_keypoint.iter_mut().zip(&other.per_keypoint) {
            a.correct += b.correct;
            a.total += b.total;
        }
        self.per_sample.extend_from_slice(&other.per_sample);
        self.predictor_seconds += other.predictor_seconds;
        Ok(())
    }
}

pub fn evaluate_poses(
    preds: &[Pose],
    gts: &[Pose],
    config: &EvalConfig,
    model: &str,
    dataset: &str,
) -> Result<EvalReport> {
    if preds.len() != gts.len() {
        return Err(Error::InvalidConfig(format!(
            "{} predictions for {} ground-truth poses",
            preds.len(),
            gts.len()
        )));
    }
    let mut report = EvalReport::new(model, dataset, config);
    for (p, g) in preds.iter().zip(gts) {
        report.add(&pck(p, g, config)?);
    }
    Ok(report)
}

/// Runs `predictor` on every manifest image in order and scores the results.
/// The predictor also receives the ground truth so that oracle-aligned
/// pipelines can derive their region of interest from it.
pub fn evaluate_dataset<F>(
    mut predictor: F,
    manifest: &DatasetManifest,
    config: &EvalConfig,
    model: &str,
) -> Result<EvalReport>
where
    F: FnMut(&Image, &Pose) -> Result<Pose>,
{
    if manifest.is_empty() {
        return Err(Error::EmptyDataset);
    }
    config.validate()?;
    let dataset = manifest
        .root
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    let mut report = EvalReport::new(model, &dataset, config);
    let mut elapsed = Duration::ZERO;
    for (i, record) in manifest.records.iter().enumerate() {
        let image = manifest.load_image(i)?;
        let gt = record.pose()?;
        let start = std::time::Instant::now();
        let pred = predictor(&image, &gt)?;
        elapsed += start.elapsed();
        report.add(&pck(&pred, &gt, config)?);
    }
    report.predictor_seconds = elapsed.as_secs_f64();
    Ok(report)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Agreement {
    pub b_against_a: EvalReport,
    pub a_against_b: EvalReport,
}

impl Agreement {
    pub fn mean(&self) -> f64 {
        0.5 * (self.b_against_a.aggregate() + self.a_against_b.aggregate())
    }
}

/// Scores annotation set `b` against `a` and `a` against `b`.
pub fn annotator_agreement(a: &DatasetManifest, b: &DatasetManifest, config: &EvalConfig) -> Result<Agreement> {
    if a.len() != b.len() {
        return Err(Error::MismatchedManifests(format!(
            "{} vs {} records",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for (ra, rb) in a.records.iter().zip(&b.records) {
        if ra.image != rb.image {
            return Err(Error::MismatchedManifests(format!(
                "{} vs {}",
                ra.image.display(),
                rb.image.display()
            )));
        }
    }
    let (pa, pb) = (a.poses()?, b.poses()?);
    Ok(Agreement {
        b_against_a: evaluate_poses(&pb, &pa, config, "annotator B", "A")?,
        a_against_b: evaluate_poses(&pa, &pb, config, "annotator A", "B")?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Csv,
}

/// Table with one row per model and one PCK column per dataset.
pub fn emit_report(reports: &[EvalReport], format: ReportFormat) -> Result<String> {
    let first = reports.first().ok_or(Error::EmptyDataset)?;
    let mut models: Vec<&str> = Vec::new();
    let mut datasets: Vec<&str> = Vec::new();
    for r in reports {
        if !models.contains(&r.model.as_str()) {
            models.push(&r.model);
        }
        if !datasets.contains(&r.dataset.as_str()) {
            datasets.push(&r.dataset);
        }
    }
    let metric = format!("PCK@{}", first.tolerance);
    let mut header = vec!["Model".to_string(), "FPS".to_string()];
    header.extend(datasets.iter().map(|d| format!("{d} {metric}")));
    let rows: Vec<Vec<String>> = models
        .iter()
        .map(|m| {
            let mine: Vec<&EvalReport> = reports.iter().filter(|r| r.model == *m).collect();
            let fps = mine
                .iter()
                .find_map(|r| r.fps())
                .map(|f| format!("{f:.1}"))
                .unwrap_or_else(|| "-".into());
            let mut row = vec![m.to_string(), fps];
            for d in &datasets {
                row.push(
                    mine.iter()
                        .find(|r| r.dataset == *d)
                        .map(|r| format!("{:.1}", r.aggregate()))
                        .unwrap_or_else(|| "-".into()),
                );
            }
            row
        })
        .collect();
    let mut out = String::new();
    match format {
        ReportFormat::Markdown => {
            let line = |cells: &[String]| format!("| {} |\n", cells.join(" | "));
            out.push_str(&line(&header));
            out.push_str(&line(&vec!["---".to_string(); header.len()]));
            for row in &rows {
                out.push_str(&line(row));
            }
        }
        ReportFormat::Csv => {
            let quote = |c: &String| {
                if c.contains([',', '"', '\n']) {
                    format!("\"{}\"", c.replace('"', "\"\""))
                } else {
                    c.clone()
                }
            };
            for row in std::iter::once(&header).chain(&rows) {
                let cells: Vec<String> = row.iter().map(quote).collect();
                let _ = writeln!(out, "{}", cells.join(","));
            }
        }
    }
    Ok(out)
}
