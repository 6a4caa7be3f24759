//! Head, torso and whole-body boxes built from consensus keypoints.

use crate::annotation::cub_keypoint_index;
use crate::consensus::ConsensusResult;
use crate::error::{Error, Result};
use crate::geometry::{containment_fraction, iou, tightest_box, Point, Rect};
use crate::scalar::Scalar;

/// Minimum fraction of the seed box a candidate must contain.
pub const BODY_CONTAINMENT_MIN: f64 = 0.9;
/// Minimum IOU between the seed box and a candidate.
pub const BODY_IOU_MIN: f64 = 0.5;

pub const HEAD_KEYPOINTS: [&str; 7] = [
    "beak",
    "crown",
    "forehead",
    "left eye",
    "right eye",
    "nape",
    "throat",
];

pub const TORSO_KEYPOINTS: [&str; 9] = [
    "back",
    "breast",
    "left wing",
    "right wing",
    "tail",
    "throat",
    "belly",
    "left leg",
    "right leg",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartDefinition {
    name: String,
    members: Vec<usize>,
}

impl PartDefinition {
    /// `num_keypoints` bounds the member indices.
    pub fn new(name: impl Into<String>, members: Vec<usize>, num_keypoints: usize) -> Result<Self> {
        let name = name.into();
        if members.is_empty() {
            return Err(Error::EmptyPart(name));
        }
        if let Some(&index) = members.iter().find(|&&i| i >= num_keypoints) {
            return Err(Error::PartIndex {
                part: name,
                index,
                count: num_keypoints,
            });
        }
        Ok(Self { name, members })
    }

    /// Part over CUB keypoint names.
    pub fn from_cub_names<S: AsRef<str>>(name: impl Into<String>, keypoints: &[S]) -> Result<Self> {
        let members = keypoints
            .iter()
            .map(|k| cub_keypoint_index(k.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(name, members, crate::annotation::CUB_NUM_KEYPOINTS)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }
}

/// The CUB head and torso definitions.
pub fn cub_parts() -> (PartDefinition, PartDefinition) {
    (
        PartDefinition::from_cub_names("head", &HEAD_KEYPOINTS).expect("static table"),
        PartDefinition::from_cub_names("torso", &TORSO_KEYPOINTS).expect("static table"),
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredBox<T> {
    pub rect: Rect<T>,
    pub score: T,
}

/// Tightest box over the inlier locations of the visible member keypoints.
/// With the medoid-only method a keypoint's single inlier is its consensus
/// location. Absent when no member is visible.
pub fn part_box<T: Scalar>(
    results: &[ConsensusResult<T>],
    def: &PartDefinition,
) -> Option<Rect<T>> {
    let points: Vec<Point<T>> = def
        .members
        .iter()
        .filter_map(|&i| results.get(i))
        .filter(|r| r.visible)
        .flat_map(|r| r.inliers.iter().map(|o| o.location))
        .collect();
    if points.is_empty() {
        None
    } else {
        tightest_box(&points).ok()
    }
}

/// Ground-truth part box: tightest box over the visible annotated members.
pub fn gt_part_box<T: Scalar>(
    annotation: &crate::annotation::ImageAnnotation<T>,
    def: &PartDefinition,
) -> Option<Rect<T>> {
    let points = annotation.visible_locations(&def.members);
    if points.is_empty() {
        None
    } else {
        tightest_box(&points).ok()
    }
}

/// Whole-body box from the head and torso boxes.
///
/// The seed is the tightest box around whichever of head and torso are
/// present. Among the candidates that contain at least `containment_min` of
/// the seed and overlap it with IOU at least `iou_min`, the highest scored
/// one (earliest on ties) is returned; otherwise the seed.
pub fn whole_body_box<T: Scalar>(
    head: Option<&Rect<T>>,
    torso: Option<&Rect<T>>,
    candidates: &[ScoredBox<T>],
    containment_min: T,
    iou_min: T,
) -> Result<Rect<T>> {
    let seed = match (head, torso) {
        (Some(h), Some(t)) => h.union_box(t),
        (Some(b), None) | (None, Some(b)) => *b,
        (None, None) => return Err(Error::NoSeedBox),
    };
    let mut best: Option<&ScoredBox<T>> = None;
    for c in candidates {
        if containment_fraction(&seed, &c.rect) >= containment_min
            && iou(&seed, &c.rect) >= iou_min
            && best.is_none_or(|b| c.score > b.score)
        {
            best = Some(c);
        }
    }
    Ok(best.map_or(seed, |b| b.rect))
}

/// The head and torso definitions a whole-body box is seeded from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BodyParts {
    pub head: PartDefinition,
    pub torso: PartDefinition,
}

impl BodyParts {
    pub fn cub() -> Self {
        let (head, torso) = cub_parts();
        Self { head, torso }
    }
}

/// Head, torso and whole-body boxes of one image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartBoxes<T> {
    pub head: Option<Rect<T>>,
    pub torso: Option<Rect<T>>,
    pub body: Option<Rect<T>>,
}

impl<T: Scalar> PartBoxes<T> {
    pub fn as_array(&self) -> [Option<Rect<T>>; 3] {
        [self.head, self.torso, self.body]
    }
}

pub const PART_NAMES: [&str; 3] = ["head", "torso", "body"];

/// Predicted part boxes. The body box is absent only when neither head nor
/// torso could be built.
pub fn predict_part_boxes<T: Scalar>(
    results: &[ConsensusResult<T>],
    parts: &BodyParts,
    candidates: &[ScoredBox<T>],
    containment_min: T,
    iou_min: T,
) -> PartBoxes<T> {
    let head = part_box(results, &parts.head);
    let torso = part_box(results, &parts.torso);
    let body = whole_body_box(
        head.as_ref(),
        torso.as_ref(),
        candidates,
        containment_min,
        iou_min,
    )
    .ok();
    PartBoxes { head, torso, body }
}

/// Ground-truth part boxes; the body box is the annotated object box.
pub fn gt_part_boxes<T: Scalar>(
    annotation: &crate::annotation::ImageAnnotation<T>,
    parts: &BodyParts,
) -> PartBoxes<T> {
    PartBoxes {
        head: gt_part_box(annotation, &parts.head),
        torso: gt_part_box(annotation, &parts.torso),
        body: Some(annotation.object_box),
    }
}
