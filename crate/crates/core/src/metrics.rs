//! Keypoint and part-localization metrics.
//!
//! - PCP: fraction of ground-truth-visible keypoints predicted visible and
//!   within `pcp_factor` annotator standard deviations (boundary inclusive).
//! - AE: mean capped error over pairs where both the prediction and the
//!   ground truth are visible, in annotator-std units or pixels.
//! - FVR / FIR: false visibility and false invisibility rates.
//! - Part accuracy: fraction of ground-truth part boxes matched with IOU
//!   strictly above the threshold.
//!
//! Every ratio is reported together with the integer tally it came from.

use std::collections::BTreeMap;

use crate::annotation::ImageAnnotation;
use crate::consensus::ConsensusResult;
use crate::error::{Error, Result};
use crate::geometry::{iou, Rect};
use crate::scalar::Scalar;

pub const PCP_FACTOR: f64 = 1.5;
pub const AE_CAP: f64 = 5.0;
pub const PART_IOU_MIN: f64 = 0.5;

/// Numerator and denominator of a reported ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Tally {
    pub hits: u64,
    pub total: u64,
}

impl Tally {
    pub fn new(hits: u64, total: u64) -> Self {
        debug_assert!(hits <= total);
        Self { hits, total }
    }

    /// `None` when the denominator is zero.
    pub fn ratio(&self) -> Option<f64> {
        (self.total > 0).then(|| self.hits as f64 / self.total as f64)
    }

    pub fn add(&mut self, hit: bool) {
        self.total += 1;
        self.hits += u64::from(hit);
    }
}

impl std::ops::Add for Tally {
    type Output = Tally;
    fn add(self, rhs: Tally) -> Tally {
        Tally::new(self.hits + rhs.hits, self.total + rhs.total)
    }
}

impl std::iter::Sum for Tally {
    fn sum<I: Iterator<Item = Tally>>(iter: I) -> Tally {
        iter.fold(Tally::default(), |a, b| a + b)
    }
}

/// Per-keypoint annotator standard deviations, in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatorStd<T> {
    sigma: Vec<T>,
}

impl<T: Scalar> AnnotatorStd<T> {
    pub fn new(sigma: Vec<T>) -> Result<Self> {
        if let Some((k, s)) = sigma
            .iter()
            .enumerate()
            .find(|(_, s)| !(**s > T::zero() && s.is_finite()))
        {
            return Err(Error::OutOfRange {
                what: format!("sigma[{k}]"),
                value: s.as_f64(),
                range: "(0, inf)",
            });
        }
        Ok(Self { sigma })
    }

    pub fn sigma(&self, k: usize) -> Result<T> {
        self.sigma.get(k).copied().ok_or(Error::MissingSigma(k))
    }

    pub fn len(&self) -> usize {
        self.sigma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma.is_empty()
    }

    pub fn values(&self) -> &[T] {
        &self.sigma
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AeUnits {
    #[default]
    AnnotatorStd,
    Pixels,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricOptions<T> {
    pub pcp_factor: T,
    pub ae_cap: T,
    pub ae_units: AeUnits,
    pub part_iou_min: T,
}

impl<T: Scalar> Default for MetricOptions<T> {
    fn default() -> Self {
        Self {
            pcp_factor: T::lit(PCP_FACTOR),
            ae_cap: T::lit(AE_CAP),
            ae_units: AeUnits::AnnotatorStd,
            part_iou_min: T::lit(PART_IOU_MIN),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcpReport {
    pub per_keypoint: Vec<Tally>,
    pub total: Tally,
}

impl PcpReport {
    /// Pools the tallies of each named group of keypoints.
    pub fn merged(&self, groups: &[(&str, Vec<usize>)]) -> BTreeMap<String, Tally> {
        groups
            .iter()
            .map(|(name, members)| {
                let t = members
                    .iter()
                    .filter_map(|&k| self.per_keypoint.get(k).copied())
                    .sum();
                (name.to_string(), t)
            })
            .collect()
    }
}

/// Sum and count behind an average error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorStats<T> {
    pub sum: T,
    pub count: u64,
}

impl<T: Scalar> ErrorStats<T> {
    pub fn mean(&self) -> Option<T> {
        (self.count > 0).then(|| self.sum / T::lit(self.count as f64))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct VisibilityRates {
    /// Predicted visible among ground-truth invisible.
    pub false_visible: Tally,
    /// Predicted invisible among ground-truth visible.
    pub false_invisible: Tally,
}

impl VisibilityRates {
    pub fn fvr(&self) -> Option<f64> {
        self.false_visible.ratio()
    }

    pub fn fir(&self) -> Option<f64> {
        self.false_invisible.ratio()
    }
}

fn check_aligned<T: Scalar>(
    preds: &[Vec<ConsensusResult<T>>],
    gts: &[ImageAnnotation<T>],
) -> Result<()> {
    if preds.len() != gts.len() {
        return Err(Error::LengthMismatch {
            what: "images",
            expected: gts.len(),
            found: preds.len(),
        });
    }
    for (p, g) in preds.iter().zip(gts) {
        if p.len() != g.keypoints.len() {
            return Err(Error::LengthMismatch {
                what: "keypoints",
                expected: g.keypoints.len(),
                found: p.len(),
            });
        }
    }
    Ok(())
}

/// Percent of correct parts, per keypoint and pooled.
pub fn pcp<T: Scalar>(
    preds: &[Vec<ConsensusResult<T>>],
    gts: &[ImageAnnotation<T>],
    std: &AnnotatorStd<T>,
    factor: T,
) -> Result<PcpReport> {
    check_aligned(preds, gts)?;
    let n = gts.iter().map(|g| g.keypoints.len()).max().unwrap_or(0);
    let mut per_keypoint = vec![Tally::default(); n];
    for (p, g) in preds.iter().zip(gts) {
        for (k, (r, gt)) in p.iter().zip(&g.keypoints).enumerate() {
            if !gt.visible {
                continue;
            }
            let limit = factor * std.sigma(k)?;
            let hit = match (r.visible, r.location) {
                (true, Some(loc)) => loc.distance(&gt.location) <= limit,
                _ => false,
            };
            per_keypoint[k].add(hit);
        }
    }
    let total = per_keypoint.iter().copied().sum();
    Ok(PcpReport {
        per_keypoint,
        total,
    })
}

/// Capped localization error over pairs with both a visible prediction and a
/// visible ground truth.
pub fn error_stats<T: Scalar>(
    preds: &[Vec<ConsensusResult<T>>],
    gts: &[ImageAnnotation<T>],
    std: &AnnotatorStd<T>,
    cap: T,
    units: AeUnits,
) -> Result<ErrorStats<T>> {
    check_aligned(preds, gts)?;
    let mut stats = ErrorStats {
        sum: T::zero(),
        count: 0,
    };
    for (p, g) in preds.iter().zip(gts) {
        for (k, (r, gt)) in p.iter().zip(&g.keypoints).enumerate() {
            let Some(loc) = r.location.filter(|_| r.visible && gt.visible) else {
                continue;
            };
            let d = loc.distance(&gt.location);
            let e = match units {
                AeUnits::AnnotatorStd => d / std.sigma(k)?,
                AeUnits::Pixels => d,
            };
            stats.sum += e.min(cap);
            stats.count += 1;
        }
    }
    Ok(stats)
}

/// Mean of [`error_stats`]; fails on an empty evaluation set.
pub fn average_error<T: Scalar>(
    preds: &[Vec<ConsensusResult<T>>],
    gts: &[ImageAnnotation<T>],
    std: &AnnotatorStd<T>,
    cap: T,
    units: AeUnits,
) -> Result<T> {
    error_stats(preds, gts, std, cap, units)?
        .mean()
        .ok_or(Error::EmptyEvaluation)
}

pub fn visibility_rates<T: Scalar>(
    preds: &[Vec<ConsensusResult<T>>],
    gts: &[ImageAnnotation<T>],
) -> Result<VisibilityRates> {
    check_aligned(preds, gts)?;
    let mut rates = VisibilityRates::default();
    for (p, g) in preds.iter().zip(gts) {
        for (r, gt) in p.iter().zip(&g.keypoints) {
            if gt.visible {
                rates.false_invisible.add(!r.visible);
            } else {
                rates.false_visible.add(r.visible);
            }
        }
    }
    Ok(rates)
}

/// Counts ground-truth boxes matched by a predicted box with IOU strictly
/// above `iou_min`. Pairs without a ground-truth box are skipped; a missing
/// prediction is a miss.
pub fn part_localization_accuracy<T: Scalar>(
    pred: &[Option<Rect<T>>],
    gt: &[Option<Rect<T>>],
    iou_min: T,
) -> Result<Tally> {
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch {
            what: "part boxes",
            expected: gt.len(),
            found: pred.len(),
        });
    }
    let mut t = Tally::default();
    for (p, g) in pred.iter().zip(gt) {
        if let Some(g) = g {
            t.add(p.is_some_and(|p| iou(&p, g) > iou_min));
        }
    }
    Ok(t)
}

/// Keypoint and part metrics of one evaluation run.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport<T> {
    pub pcp: PcpReport,
    /// PCP pooled over named keypoint groups (left/right merged).
    pub pcp_merged: BTreeMap<String, Tally>,
    pub error: ErrorStats<T>,
    pub ae_units: AeUnits,
    pub visibility: VisibilityRates,
    pub part_accuracy: BTreeMap<String, Tally>,
}

/// PCP, average error and visibility rates. Part accuracy is left empty
/// for the caller to fill.
pub fn evaluate<T: Scalar>(
    preds: &[Vec<ConsensusResult<T>>],
    gts: &[ImageAnnotation<T>],
    std: &AnnotatorStd<T>,
    opts: &MetricOptions<T>,
    groups: &[(&str, Vec<usize>)],
) -> Result<EvalReport<T>> {
    let pcp = pcp(preds, gts, std, opts.pcp_factor)?;
    let pcp_merged = pcp.merged(groups);
    Ok(EvalReport {
        pcp,
        pcp_merged,
        error: error_stats(preds, gts, std, opts.ae_cap, opts.ae_units)?,
        ae_units: opts.ae_units,
        visibility: visibility_rates(preds, gts)?,
        part_accuracy: BTreeMap::new(),
    })
}
