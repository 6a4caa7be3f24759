//! Synthetic predictor and scenes for verifying the consensus pipeline
//! without a trained network.
//!
//! [`simulate_predictions`] plays the role of the keypoint network: for each
//! proposal it emits a noisy normalized location and a visibility
//! confidence per keypoint, under a [`NoiseModel`]. The noise model is a
//! verification instrument and makes no claim about real network errors.
//!
//! Randomness is drawn from ChaCha8 streams selected by index (image id,
//! trial number), so results do not depend on evaluation order or thread
//! count.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Normal};
use rayon::prelude::*;

use crate::annotation::{ImageAnnotation, ImageId, Keypoint, PredictionSet, CUB_NUM_KEYPOINTS};
use crate::consensus::{consensus_image, ConsensusConfig};
use crate::error::{Error, Result};
use crate::geometry::{iou, to_normalized, NormalizedPoint, Point, Rect};
use crate::metrics::{part_localization_accuracy, Tally};
use crate::partbox::{gt_part_boxes, predict_part_boxes, BodyParts, ScoredBox};
use crate::training_prep::cub_flip_map;

/// RNG for stream `stream` of the generator seeded with `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LocationNoise {
    /// Standard deviation in pixels.
    Pixels(f64),
    /// Standard deviation as a fraction of the proposal diagonal.
    DiagonalFraction(f64),
}

impl LocationNoise {
    fn sigma(&self, rect: &Rect<f64>) -> f64 {
        match *self {
            LocationNoise::Pixels(s) => s,
            LocationNoise::DiagonalFraction(f) => f * rect.diagonal(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConfidenceModel {
    Beta { alpha: f64, beta: f64 },
    Fixed(f64),
}

impl ConfidenceModel {
    pub fn mean(&self) -> f64 {
        match *self {
            ConfidenceModel::Beta { alpha, beta } => alpha / (alpha + beta),
            ConfidenceModel::Fixed(c) => c,
        }
    }

    fn validate(&self, what: &str) -> Result<()> {
        match *self {
            ConfidenceModel::Beta { alpha, beta } => {
                if !(alpha > 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite()) {
                    return Err(Error::Config(format!(
                        "{what}: beta parameters must be positive"
                    )));
                }
            }
            ConfidenceModel::Fixed(c) => check_unit(what, c)?,
        }
        Ok(())
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            ConfidenceModel::Beta { alpha, beta } => Beta::new(alpha, beta)
                .expect("validated parameters")
                .sample(rng),
            ConfidenceModel::Fixed(c) => c,
        }
    }
}

fn check_unit(what: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::OutOfRange {
            what: what.to_string(),
            value: v,
            range: "[0, 1]",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub location: LocationNoise,
    /// Probability that a covered, visible keypoint is predicted at a
    /// uniformly random location in the proposal.
    pub outlier_rate: f64,
    /// Confidence attached to outliers and false detections.
    pub outlier_conf: f64,
    /// Probability that an uncovered or invisible keypoint is reported with
    /// high confidence anyway.
    pub false_vis_rate: f64,
    pub conf_visible: ConfidenceModel,
    pub conf_invisible: ConfidenceModel,
    pub seed: u64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            location: LocationNoise::Pixels(3.0),
            outlier_rate: 0.1,
            outlier_conf: 0.95,
            false_vis_rate: 0.02,
            conf_visible: ConfidenceModel::Beta {
                alpha: 19.0,
                beta: 1.0,
            },
            conf_invisible: ConfidenceModel::Beta {
                alpha: 1.0,
                beta: 19.0,
            },
            seed: 0,
        }
    }
}

impl NoiseModel {
    /// Every covered visible keypoint predicted exactly with confidence 1;
    /// everything else with confidence 0.
    pub fn noise_free() -> Self {
        Self {
            location: LocationNoise::Pixels(0.0),
            outlier_rate: 0.0,
            outlier_conf: 1.0,
            false_vis_rate: 0.0,
            conf_visible: ConfidenceModel::Fixed(1.0),
            conf_invisible: ConfidenceModel::Fixed(0.0),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_unit("outlier_rate", self.outlier_rate)?;
        check_unit("outlier_conf", self.outlier_conf)?;
        check_unit("false_vis_rate", self.false_vis_rate)?;
        let sigma = match self.location {
            LocationNoise::Pixels(s) | LocationNoise::DiagonalFraction(s) => s,
        };
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::OutOfRange {
                what: "loc_sigma".into(),
                value: sigma,
                range: "[0, inf)",
            });
        }
        self.conf_visible.validate("conf_visible")?;
        self.conf_invisible.validate("conf_invisible")
    }
}

fn uniform_in<R: Rng>(rng: &mut R) -> NormalizedPoint<f64> {
    NormalizedPoint::new(rng.random::<f64>(), rng.random::<f64>())
}

/// Synthetic predictions for every box, drawn from the stream selected by
/// the image id.
pub fn simulate_predictions(
    annotation: &ImageAnnotation<f64>,
    boxes: &[Rect<f64>],
    nm: &NoiseModel,
) -> Result<Vec<PredictionSet<f64>>> {
    simulate_predictions_with(
        annotation,
        boxes,
        nm,
        &mut stream_rng(nm.seed, annotation.image_id.0),
    )
}

/// [`simulate_predictions`] drawing from a caller-supplied generator.
/// Boxes are processed in order, so the predictions for a prefix of `boxes`
/// do not depend on the boxes after it.
pub fn simulate_predictions_with<R: Rng>(
    annotation: &ImageAnnotation<f64>,
    boxes: &[Rect<f64>],
    nm: &NoiseModel,
    rng: &mut R,
) -> Result<Vec<PredictionSet<f64>>> {
    nm.validate()?;
    let mut out = Vec::with_capacity(boxes.len());
    for (b, rect) in boxes.iter().enumerate() {
        let sigma = nm.location.sigma(rect);
        let noise = Normal::new(0.0, sigma.max(0.0)).expect("finite sigma");
        let mut loc = Vec::with_capacity(annotation.keypoints.len());
        let mut vis = Vec::with_capacity(annotation.keypoints.len());
        for kp in &annotation.keypoints {
            let covered = kp.visible && rect.contains(&kp.location);
            let (l, c) = if covered {
                if rng.random_bool(nm.outlier_rate) {
                    (uniform_in(rng), nm.outlier_conf)
                } else {
                    let p = Point::new(
                        kp.location.x + noise.sample(rng),
                        kp.location.y + noise.sample(rng),
                    );
                    (to_normalized(&p, rect), nm.conf_visible.sample(rng))
                }
            } else if rng.random_bool(nm.false_vis_rate) {
                (uniform_in(rng), nm.outlier_conf)
            } else {
                (uniform_in(rng), nm.conf_invisible.sample(rng))
            };
            loc.push(l);
            vis.push(c.clamp(0.0, 1.0));
        }
        out.push(PredictionSet {
            image_id: annotation.image_id,
            rect: *rect,
            score: (boxes.len() - b) as f64,
            loc,
            vis,
        });
    }
    Ok(out)
}

/// Keypoint layout of a bird facing right, normalized to its object box, in
/// CUB keypoint order.
const BIRD_TEMPLATE: [(f64, f64); CUB_NUM_KEYPOINTS] = [
    (0.45, 0.30), // back
    (0.96, 0.22), // beak
    (0.50, 0.70), // belly
    (0.70, 0.55), // breast
    (0.80, 0.06), // crown
    (0.88, 0.10), // forehead
    (0.84, 0.16), // left eye
    (0.48, 0.94), // left leg
    (0.40, 0.45), // left wing
    (0.70, 0.18), // nape
    (0.86, 0.17), // right eye
    (0.56, 0.94), // right leg
    (0.46, 0.40), // right wing
    (0.04, 0.62), // tail
    (0.84, 0.36), // throat
];

/// Keypoints on the side facing away from the viewer when the bird faces
/// right, with the probability that each is hidden.
const FAR_SIDE: [(usize, f64); 3] = [(6, 0.7), (7, 0.5), (8, 0.5)];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneParams {
    pub image_width: f64,
    pub image_height: f64,
    pub min_object: (f64, f64),
    pub max_object: (f64, f64),
    /// Keypoint jitter as a fraction of the object size.
    pub keypoint_jitter: f64,
    /// Probability that a near-side keypoint is annotated invisible.
    pub occlusion_rate: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            image_width: 500.0,
            image_height: 400.0,
            min_object: (160.0, 120.0),
            max_object: (280.0, 220.0),
            keypoint_jitter: 0.02,
            occlusion_rate: 0.05,
        }
    }
}

/// A synthetic bird annotation.
pub fn synthetic_annotation<R: Rng>(
    image_id: ImageId,
    params: &SceneParams,
    rng: &mut R,
) -> ImageAnnotation<f64> {
    let w = rng.random_range(params.min_object.0..=params.max_object.0);
    let h = rng.random_range(params.min_object.1..=params.max_object.1);
    let x = rng.random_range(0.0..=(params.image_width - w).max(0.0));
    let y = rng.random_range(0.0..=(params.image_height - h).max(0.0));
    let object_box = Rect::new(x, y, w, h).expect("positive object size");
    let faces_left = rng.random_bool(0.5);
    let flip = cub_flip_map();
    let jitter = Normal::new(0.0, params.keypoint_jitter).expect("finite jitter");

    let mut keypoints = Vec::with_capacity(CUB_NUM_KEYPOINTS);
    for k in 0..CUB_NUM_KEYPOINTS {
        // a bird facing left is the mirror image with left/right swapped
        let (u, v) = if faces_left {
            let (u, v) = BIRD_TEMPLATE[flip.partner(k)];
            (1.0 - u, v)
        } else {
            BIRD_TEMPLATE[k]
        };
        let u = (u + jitter.sample(rng)).clamp(0.0, 1.0);
        let v = (v + jitter.sample(rng)).clamp(0.0, 1.0);
        let far_side = FAR_SIDE.iter().find(|(i, _)| {
            if faces_left {
                flip.partner(k) == *i
            } else {
                k == *i
            }
        });
        let hidden = match far_side {
            Some(&(_, p)) => rng.random_bool(p),
            None => rng.random_bool(params.occlusion_rate),
        };
        keypoints.push(Keypoint {
            location: Point::new(x + u * w, y + v * h),
            visible: !hidden,
        });
    }
    ImageAnnotation {
        image_id,
        width: params.image_width,
        height: params.image_height,
        keypoints,
        object_box,
        class_label: format!("synthetic.{:03}", image_id.0 % 200 + 1),
    }
}

fn clip_to_image(x0: f64, y0: f64, x1: f64, y1: f64, width: f64, height: f64) -> Option<Rect<f64>> {
    let (l, t) = (x0.max(0.0), y0.max(0.0));
    let (r, b) = (x1.min(width), y1.min(height));
    if r - l >= 8.0 && b - t >= 8.0 {
        Rect::from_corners(l, t, r, b).ok()
    } else {
        None
    }
}

/// Proposals around and inside the object plus uniform clutter, scored by
/// IOU with the object box plus Gaussian noise, sorted by descending score.
pub fn synthetic_proposals<R: Rng>(
    annotation: &ImageAnnotation<f64>,
    count: usize,
    rng: &mut R,
) -> Vec<ScoredBox<f64>> {
    let gt = annotation.object_box;
    let (width, height) = (annotation.width, annotation.height);
    let c = gt.center();
    let shift = Normal::new(0.0, 0.2).expect("finite");
    let log_scale = Normal::new(0.0f64, 0.3).expect("finite");
    let score_noise = Normal::new(0.0, 0.1).expect("finite");
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let kind = rng.random::<f64>();
        let rect = if kind < 0.5 {
            // jittered copies of the object box
            let cx = c.x + shift.sample(rng) * gt.w();
            let cy = c.y + shift.sample(rng) * gt.h();
            let w = gt.w() * log_scale.sample(rng).exp();
            let h = gt.h() * log_scale.sample(rng).exp();
            clip_to_image(
                cx - w / 2.0,
                cy - h / 2.0,
                cx + w / 2.0,
                cy + h / 2.0,
                width,
                height,
            )
        } else if kind < 0.7 {
            // sub-regions of the object
            let w = gt.w() * rng.random_range(0.3..0.8);
            let h = gt.h() * rng.random_range(0.3..0.8);
            let x = gt.x() + rng.random::<f64>() * (gt.w() - w);
            let y = gt.y() + rng.random::<f64>() * (gt.h() - h);
            clip_to_image(x, y, x + w, y + h, width, height)
        } else {
            let w = rng.random_range(20.0..width * 0.6);
            let h = rng.random_range(20.0..height * 0.6);
            let x = rng.random::<f64>() * (width - w);
            let y = rng.random::<f64>() * (height - h);
            clip_to_image(x, y, x + w, y + h, width, height)
        };
        if let Some(rect) = rect {
            let score = iou(&rect, &gt) + score_noise.sample(rng);
            out.push(ScoredBox { rect, score });
        }
    }
    out.sort_by(|a, b| b.score.total_cmp(&a.score));
    out
}

/// One synthetic image: annotation plus ranked proposals.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub annotation: ImageAnnotation<f64>,
    pub proposals: Vec<ScoredBox<f64>>,
}

/// `images` synthetic scenes with `proposals` ranked boxes each. Scene `i`
/// (image id `i + 1`) draws from stream `i` of `seed`.
pub fn synthetic_dataset(
    images: usize,
    proposals: usize,
    seed: u64,
    params: &SceneParams,
) -> Vec<Scene> {
    (0..images)
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            let annotation = synthetic_annotation(ImageId(i as u64 + 1), params, &mut rng);
            let proposals = synthetic_proposals(&annotation, proposals, &mut rng);
            Scene {
                annotation,
                proposals,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub box_count: usize,
    pub head: Tally,
    pub torso: Tally,
    pub body: Tally,
}

/// Box-count study: for each count, keeps the top-scored proposals of every
/// scene, runs consensus on their simulated predictions and scores the
/// head, torso and whole-body boxes against ground truth (IOU > `iou_min`).
#[allow(clippy::too_many_arguments)]
pub fn run_sweep(
    scenes: &[Scene],
    nm: &NoiseModel,
    box_counts: &[usize],
    cfg: &ConsensusConfig<f64>,
    parts: &BodyParts,
    body_thresholds: (f64, f64),
    iou_min: f64,
    threads: usize,
) -> Result<Vec<SweepRow>> {
    nm.validate()?;
    cfg.validate()?;
    let max_count = box_counts.iter().copied().max().unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;

    // per scene, per count: (predicted, ground truth) part boxes
    let per_scene: Vec<Result<Vec<_>>> = pool.install(|| {
        scenes
            .par_iter()
            .map(|scene| {
                let n = scene.annotation.num_keypoints();
                let top: Vec<Rect<f64>> = scene
                    .proposals
                    .iter()
                    .take(max_count)
                    .map(|b| b.rect)
                    .collect();
                let preds = simulate_predictions(&scene.annotation, &top, nm)?;
                let gt = gt_part_boxes(&scene.annotation, parts);
                box_counts
                    .iter()
                    .map(|&count| {
                        let k = count.min(preds.len());
                        let results = consensus_image(&preds[..k], n, cfg)?;
                        let predicted = predict_part_boxes(
                            &results,
                            parts,
                            &scene.proposals[..k],
                            body_thresholds.0,
                            body_thresholds.1,
                        );
                        Ok((predicted, gt))
                    })
                    .collect()
            })
            .collect()
    });
    let per_scene = per_scene.into_iter().collect::<Result<Vec<_>>>()?;

    box_counts
        .iter()
        .enumerate()
        .map(|(ci, &box_count)| {
            let mut tallies = [Tally::default(); 3];
            for (part, tally) in tallies.iter_mut().enumerate() {
                let (pred, gt): (Vec<_>, Vec<_>) = per_scene
                    .iter()
                    .map(|rows| (rows[ci].0.as_array()[part], rows[ci].1.as_array()[part]))
                    .unzip();
                *tally = part_localization_accuracy(&pred, &gt, iou_min)?;
            }
            Ok(SweepRow {
                box_count,
                head: tallies[0],
                torso: tallies[1],
                body: tallies[2],
            })
        })
        .collect()
}
