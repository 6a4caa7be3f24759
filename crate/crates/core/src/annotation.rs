//! Ground-truth annotations, per-proposal predictions and the CUB keypoint
//! table.

use std::fmt;

use crate::error::{Error, Result};
use crate::geometry::{NormalizedPoint, Point, Rect};
use crate::scalar::Scalar;

/// CUB keypoint names in part-id order (part id = index + 1).
pub const CUB_KEYPOINT_NAMES: [&str; 15] = [
    "back",
    "beak",
    "belly",
    "breast",
    "crown",
    "forehead",
    "left eye",
    "left leg",
    "left wing",
    "nape",
    "right eye",
    "right leg",
    "right wing",
    "tail",
    "throat",
];

pub const CUB_NUM_KEYPOINTS: usize = CUB_KEYPOINT_NAMES.len();

/// Index of a CUB keypoint by name. Accepts underscores in place of spaces.
pub fn cub_keypoint_index(name: &str) -> Result<usize> {
    let wanted = name.trim().replace('_', " ").to_ascii_lowercase();
    CUB_KEYPOINT_NAMES
        .iter()
        .position(|n| *n == wanted)
        .ok_or_else(|| Error::UnknownKeypoint(name.to_string()))
}

/// Reporting groups that merge left/right keypoint pairs, with the member
/// indices of each group.
pub fn cub_merged_groups() -> Vec<(&'static str, Vec<usize>)> {
    vec![
        ("back", vec![0]),
        ("beak", vec![1]),
        ("belly", vec![2]),
        ("breast", vec![3]),
        ("crown", vec![4]),
        ("forehead", vec![5]),
        ("eye", vec![6, 10]),
        ("leg", vec![7, 11]),
        ("wing", vec![8, 12]),
        ("nape", vec![9]),
        ("tail", vec![13]),
        ("throat", vec![14]),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct ImageId(pub u64);

impl fmt::Display for ImageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint<T> {
    pub location: Point<T>,
    pub visible: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageAnnotation<T> {
    pub image_id: ImageId,
    pub width: T,
    pub height: T,
    pub keypoints: Vec<Keypoint<T>>,
    pub object_box: Rect<T>,
    pub class_label: String,
}

impl<T: Scalar> ImageAnnotation<T> {
    pub fn num_keypoints(&self) -> usize {
        self.keypoints.len()
    }

    /// Locations of the visible keypoints among `members`.
    pub fn visible_locations(&self, members: &[usize]) -> Vec<Point<T>> {
        members
            .iter()
            .filter_map(|&i| self.keypoints.get(i))
            .filter(|k| k.visible)
            .map(|k| k.location)
            .collect()
    }
}

/// One proposal's output: a box with its objectness score and, per keypoint,
/// a normalized location and a visibility confidence. Proposal-only records
/// carry empty `loc` and `vis`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet<T> {
    pub image_id: ImageId,
    pub rect: Rect<T>,
    pub score: T,
    pub loc: Vec<NormalizedPoint<T>>,
    pub vis: Vec<T>,
}

impl<T: Scalar> PredictionSet<T> {
    /// A proposal without predictions.
    pub fn proposal(image_id: ImageId, rect: Rect<T>, score: T) -> Self {
        Self {
            image_id,
            rect,
            score,
            loc: Vec::new(),
            vis: Vec::new(),
        }
    }

    pub fn is_proposal_only(&self) -> bool {
        self.loc.is_empty() && self.vis.is_empty()
    }
}

/// Sorts proposals by descending score; equal scores keep their input order.
pub fn sort_by_score_desc<T: Scalar>(sets: &mut [PredictionSet<T>]) {
    sets.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(std::cmp::Ordering::Equal)
    });
}
