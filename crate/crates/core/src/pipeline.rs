//! Run configuration and the commands behind the CLI.
//!
//! Each command is a pure function of its inputs and the resolved
//! [`RunConfig`]. Per-image work runs on a rayon pool of the requested size
//! and is merged in image-id order, so the thread count never changes the
//! result.

use std::collections::BTreeMap;
use std::path::Path;

use clap::ValueEnum;
use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::annotation::{
    cub_merged_groups, sort_by_score_desc, ImageAnnotation, ImageId, PredictionSet,
    CUB_KEYPOINT_NAMES,
};
use crate::consensus::{
    consensus_image, Bandwidth, ConsensusConfig, InlierLocation, Method, DEFAULT_LAMBDA,
    GT_BOX_VISIBILITY, GT_BOX_Z, NO_GT_BOX_VISIBILITY, NO_GT_BOX_Z,
};
use crate::error::{Error, FormatError, Result};
use crate::geometry::{containment_fraction, iou, CROP_BUFFER, CROP_SIDE};
use crate::io::{ConsensusTable, CubImage, ManifestRecord, PartBoxRecord};
use crate::metrics::{
    evaluate, part_localization_accuracy, AeUnits, AnnotatorStd, EvalReport, MetricOptions, AE_CAP,
    PART_IOU_MIN, PCP_FACTOR,
};
use crate::partbox::{
    gt_part_boxes, predict_part_boxes, BodyParts, PartBoxes, PartDefinition, ScoredBox,
    BODY_CONTAINMENT_MIN, BODY_IOU_MIN, HEAD_KEYPOINTS, PART_NAMES, TORSO_KEYPOINTS,
};
use crate::simulator::{
    run_sweep, stream_rng, synthetic_dataset, ConfidenceModel, LocationNoise, NoiseModel,
    SceneParams, SweepRow,
};
use crate::training_prep::{
    cub_flip_map, flip_example, make_background, make_targets_with, select_training_boxes,
    SelectionParams,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Object box known: proposals pre-filtered against it.
    GtBox,
    /// Only ranked proposals: top-k by score.
    NoGtBox,
}

impl Preset {
    pub fn thresholds(self) -> (f64, f64) {
        match self {
            Preset::GtBox => (GT_BOX_VISIBILITY, GT_BOX_Z),
            Preset::NoGtBox => (NO_GT_BOX_VISIBILITY, NO_GT_BOX_Z),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum MethodName {
    Medoid,
    #[default]
    Inliers,
    MedoidShift,
}

impl From<MethodName> for Method {
    fn from(m: MethodName) -> Self {
        match m {
            MethodName::Medoid => Method::MedoidOnly,
            MethodName::Inliers => Method::InlierSet,
            MethodName::MedoidShift => Method::MedoidShift,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InlierLocationName {
    #[default]
    FilteredMedoid,
    InlierMedoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    #[default]
    All,
    Train,
    Test,
}

impl Split {
    fn keeps(self, img: &CubImage) -> bool {
        match self {
            Split::All => true,
            Split::Train => img.is_train,
            Split::Test => !img.is_train,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsSection {
    pub pcp_factor: f64,
    pub ae_cap: f64,
    /// `std` (annotator standard deviations) or `pixels`.
    pub ae_units: String,
    pub part_iou_min: f64,
    /// Annotator standard deviation file.
    pub std_file: Option<String>,
    pub split: Split,
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self {
            pcp_factor: PCP_FACTOR,
            ae_cap: AE_CAP,
            ae_units: "std".into(),
            part_iou_min: PART_IOU_MIN,
            std_file: None,
            split: Split::All,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PartsSection {
    pub head: Vec<String>,
    pub torso: Vec<String>,
    pub body_containment_min: f64,
    pub body_iou_min: f64,
}

impl Default for PartsSection {
    fn default() -> Self {
        Self {
            head: HEAD_KEYPOINTS.iter().map(|s| s.to_string()).collect(),
            torso: TORSO_KEYPOINTS.iter().map(|s| s.to_string()).collect(),
            body_containment_min: BODY_CONTAINMENT_MIN,
            body_iou_min: BODY_IOU_MIN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrepareSection {
    pub min_containment: f64,
    pub min_iou: f64,
    pub max_background: usize,
    pub flip: bool,
    pub crop_side: f64,
    pub crop_buffer: f64,
    pub split: Split,
    /// Images per class labelled `val` (the lowest ids of each class).
    pub val_per_class: usize,
}

impl Default for PrepareSection {
    fn default() -> Self {
        let p = SelectionParams::<f64>::default();
        Self {
            min_containment: p.min_containment,
            min_iou: p.min_iou,
            max_background: p.max_background,
            flip: true,
            crop_side: CROP_SIDE,
            crop_buffer: CROP_BUFFER,
            split: Split::Train,
            val_per_class: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSection {
    pub images: usize,
    /// Proposal counts evaluated, largest first.
    pub box_counts: Vec<usize>,
    pub loc_sigma: f64,
    /// `pixels` or `diagonal` (fraction of the proposal diagonal).
    pub loc_sigma_units: String,
    pub outlier_rate: f64,
    pub outlier_conf: f64,
    pub false_vis_rate: f64,
    /// Beta parameters `[alpha, beta]`.
    pub conf_visible: [f64; 2],
    pub conf_invisible: [f64; 2],
}

impl Default for SimulateSection {
    fn default() -> Self {
        let nm = NoiseModel::default();
        let beta = |c: ConfidenceModel| match c {
            ConfidenceModel::Beta { alpha, beta } => [alpha, beta],
            ConfidenceModel::Fixed(_) => unreachable!("default model is Beta"),
        };
        Self {
            images: 100,
            box_counts: vec![600, 300, 100, 50],
            loc_sigma: 3.0,
            loc_sigma_units: "pixels".into(),
            outlier_rate: nm.outlier_rate,
            outlier_conf: nm.outlier_conf,
            false_vis_rate: nm.false_vis_rate,
            conf_visible: beta(nm.conf_visible),
            conf_invisible: beta(nm.conf_invisible),
        }
    }
}

/// Every tunable of a run. Loaded from TOML, overridden by CLI flags and
/// echoed, resolved, into every output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Threshold preset; unset picks `gt-box` when annotations are given.
    pub preset: Option<Preset>,
    /// Overrides the preset's visibility threshold.
    pub visibility_threshold: Option<f64>,
    /// Overrides the preset's Z-score threshold.
    pub z_threshold: Option<f64>,
    pub lambda: f64,
    pub method: MethodName,
    pub inlier_location: InlierLocationName,
    /// Medoid-shift bandwidth in pixels; unset means automatic.
    pub bandwidth: Option<f64>,
    pub top_k_boxes: usize,
    pub seed: u64,
    /// Subtract 1 from CUB coordinates on load.
    pub one_indexed: bool,
    pub metrics: MetricsSection,
    pub parts: PartsSection,
    pub prepare: PrepareSection,
    pub simulate: SimulateSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            preset: None,
            visibility_threshold: None,
            z_threshold: None,
            lambda: DEFAULT_LAMBDA,
            method: MethodName::Inliers,
            inlier_location: InlierLocationName::FilteredMedoid,
            bandwidth: None,
            top_k_boxes: 600,
            seed: 0,
            one_indexed: false,
            metrics: MetricsSection::default(),
            parts: PartsSection::default(),
            prepare: PrepareSection::default(),
            simulate: SimulateSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Fills the preset (with `default` when unset) and the thresholds it
    /// implies, then validates.
    pub fn resolve(mut self, default: Preset) -> Result<Self> {
        let preset = *self.preset.get_or_insert(default);
        let (tau, z) = preset.thresholds();
        self.visibility_threshold.get_or_insert(tau);
        self.z_threshold.get_or_insert(z);
        self.consensus_config()?;
        self.body_parts()?;
        self.metric_options()?;
        self.noise_model()?.validate()?;
        Ok(self)
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn consensus_config(&self) -> Result<ConsensusConfig<f64>> {
        let (tau, z) = self.preset.unwrap_or(Preset::GtBox).thresholds();
        let cfg = ConsensusConfig {
            visibility_threshold: self.visibility_threshold.unwrap_or(tau),
            z_threshold: self.z_threshold.unwrap_or(z),
            lambda: self.lambda,
            method: self.method.into(),
            bandwidth: self.bandwidth.map_or(Bandwidth::Auto, Bandwidth::Fixed),
            inlier_location: match self.inlier_location {
                InlierLocationName::FilteredMedoid => InlierLocation::FilteredMedoid,
                InlierLocationName::InlierMedoid => InlierLocation::InlierMedoid,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn body_parts(&self) -> Result<BodyParts> {
        Ok(BodyParts {
            head: PartDefinition::from_cub_names("head", &self.parts.head)?,
            torso: PartDefinition::from_cub_names("torso", &self.parts.torso)?,
        })
    }

    pub fn metric_options(&self) -> Result<MetricOptions<f64>> {
        let ae_units = match self.metrics.ae_units.as_str() {
            "std" => AeUnits::AnnotatorStd,
            "pixels" => AeUnits::Pixels,
            other => {
                return Err(Error::Config(format!(
                    "metrics.ae_units: unknown units `{other}`"
                )))
            }
        };
        Ok(MetricOptions {
            pcp_factor: self.metrics.pcp_factor,
            ae_cap: self.metrics.ae_cap,
            ae_units,
            part_iou_min: self.metrics.part_iou_min,
        })
    }

    pub fn selection_params(&self) -> SelectionParams<f64> {
        SelectionParams {
            min_containment: self.prepare.min_containment,
            min_iou: self.prepare.min_iou,
            max_background: self.prepare.max_background,
        }
    }

    pub fn noise_model(&self) -> Result<NoiseModel> {
        let s = &self.simulate;
        let location = match s.loc_sigma_units.as_str() {
            "pixels" => LocationNoise::Pixels(s.loc_sigma),
            "diagonal" => LocationNoise::DiagonalFraction(s.loc_sigma),
            other => {
                return Err(Error::Config(format!(
                    "simulate.loc_sigma_units: unknown units `{other}`"
                )))
            }
        };
        Ok(NoiseModel {
            location,
            outlier_rate: s.outlier_rate,
            outlier_conf: s.outlier_conf,
            false_vis_rate: s.false_vis_rate,
            conf_visible: ConfidenceModel::Beta {
                alpha: s.conf_visible[0],
                beta: s.conf_visible[1],
            },
            conf_invisible: ConfidenceModel::Beta {
                alpha: s.conf_invisible[0],
                beta: s.conf_invisible[1],
            },
            seed: self.seed,
        })
    }
}

/// The resolved config wrapped with the command name, as echoed in output
/// headers.
pub fn provenance(command: &str, cfg: &RunConfig) -> Value {
    serde_json::json!({ "command": command, "run": cfg.to_value() })
}

fn pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// Groups records by image, keeping file order within each image.
pub fn group_by_image(sets: Vec<PredictionSet<f64>>) -> BTreeMap<ImageId, Vec<PredictionSet<f64>>> {
    let mut out: BTreeMap<ImageId, Vec<PredictionSet<f64>>> = BTreeMap::new();
    for s in sets {
        out.entry(s.image_id).or_default().push(s);
    }
    out
}

/// The `k` highest-scored records, earlier records first on equal scores.
pub fn top_k(mut sets: Vec<PredictionSet<f64>>, k: usize) -> Vec<PredictionSet<f64>> {
    sort_by_score_desc(&mut sets);
    sets.truncate(k);
    sets
}

fn annotation_index(
    annotations: &[ImageAnnotation<f64>],
) -> BTreeMap<ImageId, &ImageAnnotation<f64>> {
    annotations.iter().map(|a| (a.image_id, a)).collect()
}

fn missing_annotation(id: ImageId) -> Error {
    FormatError::InconsistentIds {
        file: "annotations".into(),
        message: format!("no annotation for image {id}"),
    }
    .into()
}

/// Consensus for every image in `predictions`.
///
/// With annotations, each image uses the predictions whose box is at least
/// `prepare.min_containment` inside the object box and overlaps it with IOU
/// at least `prepare.min_iou`. Without, the `top_k_boxes` highest scored.
pub fn run_consensus(
    predictions: Vec<PredictionSet<f64>>,
    annotations: Option<&[ImageAnnotation<f64>]>,
    cfg: &RunConfig,
    threads: usize,
) -> Result<ConsensusTable> {
    let consensus_cfg = cfg.consensus_config()?;
    let groups: Vec<(ImageId, Vec<PredictionSet<f64>>)> =
        group_by_image(predictions).into_iter().collect();
    let num_keypoints = groups
        .iter()
        .flat_map(|(_, g)| g.iter())
        .map(|p| p.loc.len())
        .max()
        .unwrap_or(0);
    let index = annotations.map(annotation_index);
    let params = cfg.selection_params();

    let results: Vec<Result<(ImageId, Vec<_>)>> = pool(threads)?.install(|| {
        groups
            .into_par_iter()
            .map(|(id, sets)| {
                let used = match &index {
                    Some(index) => {
                        let gt = index
                            .get(&id)
                            .ok_or_else(|| missing_annotation(id))?
                            .object_box;
                        sets.into_iter()
                            .filter(|p| {
                                containment_fraction(&p.rect, &gt) >= params.min_containment
                                    && iou(&p.rect, &gt) >= params.min_iou
                            })
                            .collect()
                    }
                    None => top_k(sets, cfg.top_k_boxes),
                };
                Ok((id, consensus_image(&used, num_keypoints, &consensus_cfg)?))
            })
            .collect()
    });
    results.into_iter().collect()
}

fn candidates_by_image(
    proposals: Option<Vec<PredictionSet<f64>>>,
    k: usize,
) -> BTreeMap<ImageId, Vec<ScoredBox<f64>>> {
    group_by_image(proposals.unwrap_or_default())
        .into_iter()
        .map(|(id, sets)| {
            let boxes = top_k(sets, k)
                .into_iter()
                .map(|p| ScoredBox {
                    rect: p.rect,
                    score: p.score,
                })
                .collect();
            (id, boxes)
        })
        .collect()
}

/// Head, torso and whole-body boxes for every image of the consensus
/// table, three records per image. The body box is grown over the image's
/// `top_k_boxes` highest scored proposals, if any.
pub fn run_partbox(
    table: &ConsensusTable,
    proposals: Option<Vec<PredictionSet<f64>>>,
    cfg: &RunConfig,
    threads: usize,
) -> Result<Vec<PartBoxRecord>> {
    let parts = cfg.body_parts()?;
    let candidates = candidates_by_image(proposals, cfg.top_k_boxes);
    let boxes = predicted_part_boxes(table, &parts, &candidates, cfg, threads)?;
    Ok(boxes
        .into_iter()
        .flat_map(|(id, b)| {
            PART_NAMES
                .iter()
                .zip(b.as_array())
                .map(move |(name, rect)| PartBoxRecord {
                    image_id: id,
                    part: name.to_string(),
                    rect,
                })
        })
        .collect())
}

fn predicted_part_boxes(
    table: &ConsensusTable,
    parts: &BodyParts,
    candidates: &BTreeMap<ImageId, Vec<ScoredBox<f64>>>,
    cfg: &RunConfig,
    threads: usize,
) -> Result<Vec<(ImageId, PartBoxes<f64>)>> {
    let entries: Vec<(&ImageId, &Vec<_>)> = table.iter().collect();
    Ok(pool(threads)?.install(|| {
        entries
            .into_par_iter()
            .map(|(id, results)| {
                let cands = candidates.get(id).map_or(&[][..], Vec::as_slice);
                let b = predict_part_boxes(
                    results,
                    parts,
                    cands,
                    cfg.parts.body_containment_min,
                    cfg.parts.body_iou_min,
                );
                (*id, b)
            })
            .collect()
    }))
}

/// Evaluates a consensus table against the annotated images of the
/// configured split. Images without consensus records count as predicting
/// every keypoint invisible; records for unannotated images are an error.
pub fn run_evaluate(
    table: &ConsensusTable,
    images: &[CubImage],
    std: &AnnotatorStd<f64>,
    proposals: Option<Vec<PredictionSet<f64>>>,
    cfg: &RunConfig,
    threads: usize,
) -> Result<EvalReport<f64>> {
    let opts = cfg.metric_options()?;
    let parts = cfg.body_parts()?;
    let gts: Vec<ImageAnnotation<f64>> = images
        .iter()
        .filter(|i| cfg.metrics.split.keeps(i))
        .map(|i| i.annotation.clone())
        .collect();
    let index = annotation_index(&gts);
    if let Some(id) = table.keys().find(|id| !index.contains_key(id)) {
        return Err(missing_annotation(*id));
    }

    let mut full = ConsensusTable::new();
    for g in &gts {
        let results = match table.get(&g.image_id) {
            Some(r) => r.clone(),
            None => vec![crate::consensus::ConsensusResult::invisible(); g.num_keypoints()],
        };
        full.insert(g.image_id, results);
    }
    let preds: Vec<_> = full.values().cloned().collect();
    let groups = cub_merged_groups();
    let mut report = evaluate(&preds, &gts, std, &opts, &groups)?;

    let candidates = candidates_by_image(proposals, cfg.top_k_boxes);
    let predicted = predicted_part_boxes(&full, &parts, &candidates, cfg, threads)?;
    let truth: Vec<PartBoxes<f64>> = gts.iter().map(|g| gt_part_boxes(g, &parts)).collect();
    for (p, name) in PART_NAMES.iter().enumerate() {
        let pred: Vec<_> = predicted.iter().map(|(_, b)| b.as_array()[p]).collect();
        let gt: Vec<_> = truth.iter().map(|b| b.as_array()[p]).collect();
        report.part_accuracy.insert(
            name.to_string(),
            part_localization_accuracy(&pred, &gt, opts.part_iou_min)?,
        );
    }
    Ok(report)
}

/// Keypoint names used to label report entries.
pub fn keypoint_names() -> Vec<String> {
    CUB_KEYPOINT_NAMES.iter().map(|s| s.to_string()).collect()
}

/// Training manifest: for every image of the configured split, the positive
/// crops, their mirror images (when enabled) and the background crops.
pub fn run_prepare(
    images: &[CubImage],
    proposals: Vec<PredictionSet<f64>>,
    cfg: &RunConfig,
    threads: usize,
) -> Result<Vec<ManifestRecord>> {
    let params = cfg.selection_params();
    let prep = &cfg.prepare;
    let flip = cub_flip_map();
    let by_image = group_by_image(proposals);

    let mut seen_per_class: BTreeMap<&str, usize> = BTreeMap::new();
    let selected: Vec<(&CubImage, &'static str)> = images
        .iter()
        .filter(|i| prep.split.keeps(i))
        .map(|img| {
            let seen = seen_per_class
                .entry(img.annotation.class_label.as_str())
                .or_default();
            *seen += 1;
            let split = if *seen <= prep.val_per_class {
                "val"
            } else {
                "train"
            };
            (img, split)
        })
        .collect();

    let per_image: Vec<Result<Vec<ManifestRecord>>> = pool(threads)?.install(|| {
        selected
            .into_par_iter()
            .map(|(img, split)| {
                let a = &img.annotation;
                let rects: Vec<_> = by_image
                    .get(&a.image_id)
                    .map(|sets| {
                        top_k(sets.clone(), usize::MAX)
                            .iter()
                            .map(|p| p.rect)
                            .collect()
                    })
                    .unwrap_or_default();
                let seed = stream_rng(cfg.seed, a.image_id.0).next_u64();
                let chosen = select_training_boxes(&rects, &a.object_box, seed, &params);
                let mut positives = Vec::new();
                let mut backgrounds = Vec::new();
                for s in &chosen {
                    if s.is_background {
                        backgrounds.push(make_background(
                            &s.rect,
                            a.num_keypoints(),
                            prep.crop_side,
                            prep.crop_buffer,
                        )?);
                    } else {
                        positives.push(make_targets_with(
                            &s.rect,
                            a,
                            prep.crop_side,
                            prep.crop_buffer,
                        )?);
                    }
                }
                let flips = if prep.flip {
                    positives
                        .iter()
                        .map(|e| flip_example(e, a.width, &flip))
                        .collect::<Result<Vec<_>>>()?
                } else {
                    Vec::new()
                };
                Ok(positives
                    .into_iter()
                    .chain(flips)
                    .chain(backgrounds)
                    .map(|example| ManifestRecord {
                        image_id: a.image_id,
                        split: split.to_string(),
                        example,
                    })
                    .collect())
            })
            .collect()
    });
    Ok(per_image
        .into_iter()
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect())
}

/// Box-count sweep on the synthetic dataset.
pub fn run_simulate(cfg: &RunConfig, threads: usize) -> Result<Vec<SweepRow>> {
    let s = &cfg.simulate;
    if s.box_counts.is_empty() || s.box_counts.contains(&0) {
        return Err(Error::Config(
            "simulate.box_counts must be non-empty and positive".into(),
        ));
    }
    if s.box_counts.windows(2).any(|w| w[0] < w[1]) {
        return Err(Error::Config(
            "simulate.box_counts must be sorted in descending order".into(),
        ));
    }
    let max = s.box_counts[0];
    let scenes = synthetic_dataset(s.images, max, cfg.seed, &SceneParams::default());
    run_sweep(
        &scenes,
        &cfg.noise_model()?,
        &s.box_counts,
        &cfg.consensus_config()?,
        &cfg.body_parts()?,
        (cfg.parts.body_containment_min, cfg.parts.body_iou_min),
        cfg.metrics.part_iou_min,
        threads,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{NormalizedPoint, Rect};

    #[test]
    fn default_config_round_trips_through_toml() {
        let cfg = RunConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
        assert_eq!(RunConfig::from_toml("").unwrap(), cfg);
    }

    #[test]
    fn presets_resolve_to_their_thresholds() {
        let gt = RunConfig::default().resolve(Preset::GtBox).unwrap();
        assert_eq!(
            (gt.visibility_threshold, gt.z_threshold),
            (Some(0.6), Some(0.35))
        );
        let no = RunConfig::default().resolve(Preset::NoGtBox).unwrap();
        assert_eq!(
            (no.visibility_threshold, no.z_threshold),
            (Some(0.94), Some(0.3))
        );
        let explicit = RunConfig::from_toml("preset = \"no-gt-box\"\nz_threshold = 0.5").unwrap();
        let r = explicit.resolve(Preset::GtBox).unwrap();
        assert_eq!(r.preset, Some(Preset::NoGtBox));
        assert_eq!(
            (r.visibility_threshold, r.z_threshold),
            (Some(0.94), Some(0.5))
        );
    }

    #[test]
    fn config_rejects_bad_values() {
        assert!(RunConfig::from_toml("unknown = 1").is_err());
        assert!(RunConfig::from_toml("method = \"mean\"").is_err());
        let bad = RunConfig::from_toml("visibility_threshold = 1.5").unwrap();
        assert!(bad.resolve(Preset::GtBox).is_err());
        let bad = RunConfig::from_toml("[parts]\nhead = [\"elbow\"]").unwrap();
        assert!(bad.resolve(Preset::GtBox).is_err());
        let bad = RunConfig::from_toml("[metrics]\nae_units = \"inches\"").unwrap();
        assert!(bad.resolve(Preset::GtBox).is_err());
    }

    fn set(id: u64, score: f64, vis: f64) -> PredictionSet<f64> {
        PredictionSet {
            image_id: ImageId(id),
            rect: Rect::new(0.0, 0.0, 100.0, 100.0).unwrap(),
            score,
            loc: vec![NormalizedPoint::new(0.5, 0.25)],
            vis: vec![vis],
        }
    }

    #[test]
    fn top_k_is_stable() {
        let sets = vec![set(1, 0.5, 1.0), set(1, 0.9, 1.0), set(1, 0.5, 0.0)];
        let top = top_k(sets, 2);
        assert_eq!(top[0].score, 0.9);
        assert_eq!(top[1].vis, vec![1.0]);
    }

    #[test]
    fn consensus_single_proposal_is_denormalized_prediction() {
        let cfg = RunConfig::default().resolve(Preset::NoGtBox).unwrap();
        let table = run_consensus(vec![set(4, 1.0, 0.99)], None, &cfg, 1).unwrap();
        assert_eq!(
            table[&ImageId(4)][0].location,
            Some(crate::geometry::Point::new(50.0, 25.0))
        );
        assert!(run_consensus(Vec::new(), None, &cfg, 1).unwrap().is_empty());
    }

    #[test]
    fn simulate_rejects_unsorted_counts() {
        let mut cfg = RunConfig::default().resolve(Preset::NoGtBox).unwrap();
        cfg.simulate.box_counts = vec![50, 100];
        assert!(run_simulate(&cfg, 1).is_err());
    }
}
