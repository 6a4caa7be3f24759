//! Robust per-keypoint consensus over the predictions of many proposals.
//!
//! For one keypoint, every proposal contributes a location and a visibility
//! confidence. Low-confidence predictions are dropped, then a location is
//! selected among the survivors:
//!
//! - [`Method::MedoidOnly`] reports the medoid of the survivors;
//! - [`Method::InlierSet`] additionally keeps the survivors whose modified
//!   Z-score (distance to the medoid over the median distance to the medoid,
//!   scaled by `lambda`) does not exceed a threshold;
//! - [`Method::MedoidShift`] clusters the survivors with a flat-kernel
//!   medoid-shift and reports the medoid of the largest cluster.
//!
//! Every reported location is one of the input locations.

use std::collections::BTreeMap;

use crate::annotation::PredictionSet;
use crate::error::{Error, Result};
use crate::geometry::{to_image, Point};
use crate::scalar::{median, Scalar};

/// Visibility threshold when the ground-truth object box is available.
pub const GT_BOX_VISIBILITY: f64 = 0.6;
/// Z-score threshold when the ground-truth object box is available.
pub const GT_BOX_Z: f64 = 0.35;
/// Visibility threshold when proposals are ranked without a ground-truth box.
pub const NO_GT_BOX_VISIBILITY: f64 = 0.94;
/// Z-score threshold when proposals are ranked without a ground-truth box.
pub const NO_GT_BOX_Z: f64 = 0.3;
/// Consistency constant of the modified Z-score.
pub const DEFAULT_LAMBDA: f64 = 0.6745;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeypointObservation<T> {
    pub location: Point<T>,
    pub confidence: T,
    /// Index of the proposal that produced the observation.
    pub source_box: usize,
}

impl<T: Scalar> KeypointObservation<T> {
    pub fn new(location: Point<T>, confidence: T, source_box: usize) -> Self {
        Self {
            location,
            confidence,
            source_box,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Method {
    MedoidOnly,
    #[default]
    InlierSet,
    MedoidShift,
}

/// Which medoid [`Method::InlierSet`] reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InlierLocation {
    /// Medoid of all visibility-filtered observations.
    #[default]
    FilteredMedoid,
    /// Medoid of the inlier set.
    InlierMedoid,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth<T> {
    /// Median pairwise distance of the filtered set, floored at one pixel.
    Auto,
    Fixed(T),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsensusConfig<T> {
    pub visibility_threshold: T,
    pub z_threshold: T,
    pub lambda: T,
    pub method: Method,
    pub bandwidth: Bandwidth<T>,
    pub inlier_location: InlierLocation,
}

impl<T: Scalar> ConsensusConfig<T> {
    pub fn new(visibility_threshold: T, z_threshold: T, method: Method) -> Result<Self> {
        let cfg = Self {
            visibility_threshold,
            z_threshold,
            lambda: T::lit(DEFAULT_LAMBDA),
            method,
            bandwidth: Bandwidth::Auto,
            inlier_location: InlierLocation::FilteredMedoid,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Thresholds used when the ground-truth object box is given.
    pub fn gt_box() -> Self {
        Self::new(
            T::lit(GT_BOX_VISIBILITY),
            T::lit(GT_BOX_Z),
            Method::InlierSet,
        )
        .expect("preset is valid")
    }

    /// Thresholds used when only ranked proposals are available.
    pub fn no_gt_box() -> Self {
        Self::new(
            T::lit(NO_GT_BOX_VISIBILITY),
            T::lit(NO_GT_BOX_Z),
            Method::InlierSet,
        )
        .expect("preset is valid")
    }

    pub fn with_method(mut self, method: Method) -> Self {
        self.method = method;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let tau = self.visibility_threshold;
        if !(tau >= T::zero() && tau <= T::one()) {
            return Err(Error::OutOfRange {
                what: "visibility_threshold".into(),
                value: tau.as_f64(),
                range: "[0, 1]",
            });
        }
        if self.z_threshold.is_nan() || self.z_threshold <= T::zero() {
            return Err(Error::OutOfRange {
                what: "z_threshold".into(),
                value: self.z_threshold.as_f64(),
                range: "(0, inf]",
            });
        }
        if !(self.lambda > T::zero() && self.lambda.is_finite()) {
            return Err(Error::OutOfRange {
                what: "lambda".into(),
                value: self.lambda.as_f64(),
                range: "(0, inf)",
            });
        }
        if let Bandwidth::Fixed(h) = self.bandwidth {
            if !(h > T::zero() && h.is_finite()) {
                return Err(Error::OutOfRange {
                    what: "bandwidth".into(),
                    value: h.as_f64(),
                    range: "(0, inf)",
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusResult<T> {
    pub visible: bool,
    pub location: Option<Point<T>>,
    pub inliers: Vec<KeypointObservation<T>>,
    /// Observations that passed the visibility threshold.
    pub all_filtered: Vec<KeypointObservation<T>>,
}

impl<T: Scalar> ConsensusResult<T> {
    pub fn invisible() -> Self {
        Self {
            visible: false,
            location: None,
            inliers: Vec::new(),
            all_filtered: Vec::new(),
        }
    }
}

/// Keeps the observations whose confidence is at least `threshold`,
/// preserving order.
pub fn filter_by_visibility<T: Scalar>(
    obs: &[KeypointObservation<T>],
    threshold: T,
) -> Vec<KeypointObservation<T>> {
    obs.iter()
        .filter(|o| o.confidence >= threshold)
        .copied()
        .collect()
}

/// Index of the smallest cost. Costs within a few ulps of the minimum count
/// as tied and the lowest such index wins.
fn argmin_lowest_index<T: Scalar>(costs: &[T]) -> usize {
    let min = costs.iter().copied().fold(T::infinity(), T::min);
    let tol = min.abs() * T::epsilon() * T::lit(4.0 * costs.len() as f64);
    costs
        .iter()
        .position(|&c| c <= min + tol)
        .expect("non-empty cost vector")
}

fn distance_matrix<T: Scalar>(points: &[Point<T>]) -> Vec<Vec<T>> {
    let n = points.len();
    let mut d = vec![vec![T::zero(); n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let dij = points[i].distance(&points[j]);
            d[i][j] = dij;
            d[j][i] = dij;
        }
    }
    d
}

/// The input point minimizing the sum of Euclidean distances to all inputs.
/// Ties go to the lowest index.
pub fn medoid<T: Scalar>(points: &[Point<T>]) -> Result<(usize, Point<T>)> {
    if points.is_empty() {
        return Err(Error::NoPoints);
    }
    let idx = medoid_index(points);
    Ok((idx, points[idx]))
}

fn medoid_index<T: Scalar>(points: &[Point<T>]) -> usize {
    let n = points.len();
    let mut sums = vec![T::zero(); n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = points[i].distance(&points[j]);
            sums[i] += d;
            sums[j] += d;
        }
    }
    argmin_lowest_index(&sums)
}

/// Modified Z-score of every point relative to the medoid.
///
/// When the median distance to the medoid is zero, points coincident with
/// the medoid score 0 and every other point scores `+inf`.
pub fn modified_z_scores<T: Scalar>(points: &[Point<T>], lambda: T) -> Result<Vec<T>> {
    let (m, center) = medoid(points)?;
    let dist: Vec<T> = points.iter().map(|p| p.distance(&center)).collect();
    let mad = median(&dist).expect("non-empty");
    Ok(dist
        .iter()
        .enumerate()
        .map(|(i, &d)| {
            if i == m || d == T::zero() {
                T::zero()
            } else if mad == T::zero() {
                T::infinity()
            } else {
                lambda * d / mad
            }
        })
        .collect())
}

/// Drops observations whose modified Z-score exceeds `cfg.z_threshold`.
/// The medoid always survives.
pub fn filter_inliers<T: Scalar>(
    obs: &[KeypointObservation<T>],
    cfg: &ConsensusConfig<T>,
) -> Vec<KeypointObservation<T>> {
    if obs.is_empty() {
        return Vec::new();
    }
    let points: Vec<Point<T>> = obs.iter().map(|o| o.location).collect();
    let scores = modified_z_scores(&points, cfg.lambda).expect("non-empty");
    obs.iter()
        .zip(scores)
        .filter(|(_, z)| *z <= cfg.z_threshold)
        .map(|(o, _)| *o)
        .collect()
}

/// Output of [`medoid_shift`].
#[derive(Debug, Clone, PartialEq)]
pub struct MedoidShiftClusters<T> {
    /// Basins of attraction, each sorted ascending, ordered by their
    /// attractor index.
    pub clusters: Vec<Vec<usize>>,
    /// Medoid (input index) of the largest cluster.
    pub mode: usize,
    /// Position of the largest cluster within `clusters`.
    pub largest: usize,
    /// Kernel radius actually used.
    pub bandwidth: T,
}

/// Median pairwise distance, floored at one pixel.
pub fn auto_bandwidth<T: Scalar>(points: &[Point<T>]) -> T {
    let n = points.len();
    let mut pairwise = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            pairwise.push(points[i].distance(&points[j]));
        }
    }
    median(&pairwise).unwrap_or(T::one()).max(T::one())
}

/// Flat-kernel medoid-shift.
///
/// Each point `i` links to `argmin_j sum_k d(j, k)` over the neighbours `k`
/// of `i` (points within `bandwidth`). Following links to their fixed points
/// partitions the input into basins. Link cycles, which ties can produce,
/// resolve to their lowest index.
pub fn medoid_shift<T: Scalar>(
    points: &[Point<T>],
    bandwidth: Bandwidth<T>,
) -> Result<MedoidShiftClusters<T>> {
    if points.is_empty() {
        return Err(Error::NoPoints);
    }
    let h = match bandwidth {
        Bandwidth::Auto => auto_bandwidth(points),
        Bandwidth::Fixed(h) => {
            if !(h > T::zero() && h.is_finite()) {
                return Err(Error::OutOfRange {
                    what: "bandwidth".into(),
                    value: h.as_f64(),
                    range: "(0, inf)",
                });
            }
            h
        }
    };
    let n = points.len();
    let d = distance_matrix(points);

    let mut link = vec![0usize; n];
    let mut costs = vec![T::zero(); n];
    for i in 0..n {
        let neighbours: Vec<usize> = (0..n).filter(|&k| d[i][k] <= h).collect();
        for (j, cost) in costs.iter_mut().enumerate() {
            *cost = neighbours.iter().map(|&k| d[j][k]).sum();
        }
        link[i] = argmin_lowest_index(&costs);
    }

    let roots = follow_links(&link);
    let mut basins: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &r) in roots.iter().enumerate() {
        basins.entry(r).or_default().push(i);
    }
    let clusters: Vec<Vec<usize>> = basins.into_values().collect();

    let mut best: Option<(usize, usize, usize)> = None; // (size, medoid, position)
    for (pos, members) in clusters.iter().enumerate() {
        let member_points: Vec<Point<T>> = members.iter().map(|&i| points[i]).collect();
        let med = members[medoid_index(&member_points)];
        let better = match best {
            None => true,
            Some((size, m, _)) => members.len() > size || (members.len() == size && med < m),
        };
        if better {
            best = Some((members.len(), med, pos));
        }
    }
    let (_, mode, largest) = best.expect("at least one cluster");
    Ok(MedoidShiftClusters {
        clusters,
        mode,
        largest,
        bandwidth: h,
    })
}

fn follow_links(link: &[usize]) -> Vec<usize> {
    let n = link.len();
    let mut root: Vec<Option<usize>> = vec![None; n];
    for start in 0..n {
        if root[start].is_some() {
            continue;
        }
        let mut path = Vec::new();
        let mut on_path = vec![false; n];
        let mut cur = start;
        let r = loop {
            if let Some(r) = root[cur] {
                break r;
            }
            if link[cur] == cur {
                break cur;
            }
            if on_path[cur] {
                let pos = path.iter().position(|&p| p == cur).expect("on path");
                break *path[pos..].iter().min().expect("non-empty cycle");
            }
            on_path[cur] = true;
            path.push(cur);
            cur = link[cur];
        };
        root[cur] = Some(r);
        for p in path {
            root[p] = Some(r);
        }
    }
    root.into_iter().map(|r| r.expect("resolved")).collect()
}

/// Consensus for one keypoint.
pub fn consensus_keypoint<T: Scalar>(
    obs: &[KeypointObservation<T>],
    cfg: &ConsensusConfig<T>,
) -> ConsensusResult<T> {
    let filtered = filter_by_visibility(obs, cfg.visibility_threshold);
    if filtered.is_empty() {
        return ConsensusResult::invisible();
    }
    let points: Vec<Point<T>> = filtered.iter().map(|o| o.location).collect();
    let (location, inliers) = match cfg.method {
        Method::MedoidOnly => {
            let m = medoid_index(&points);
            (points[m], vec![filtered[m]])
        }
        Method::InlierSet => {
            let inliers = filter_inliers(&filtered, cfg);
            let location = match cfg.inlier_location {
                InlierLocation::FilteredMedoid => points[medoid_index(&points)],
                InlierLocation::InlierMedoid => {
                    let ip: Vec<Point<T>> = inliers.iter().map(|o| o.location).collect();
                    ip[medoid_index(&ip)]
                }
            };
            (location, inliers)
        }
        Method::MedoidShift => {
            let ms = medoid_shift(&points, cfg.bandwidth).expect("non-empty, validated bandwidth");
            let members = ms.clusters[ms.largest]
                .iter()
                .map(|&i| filtered[i])
                .collect();
            (points[ms.mode], members)
        }
    };
    ConsensusResult {
        visible: true,
        location: Some(location),
        inliers,
        all_filtered: filtered,
    }
}

/// Gathers the observations of keypoint `k` from every proposal, converted
/// to image coordinates.
pub fn observations_for_keypoint<T: Scalar>(
    predictions: &[PredictionSet<T>],
    k: usize,
) -> Vec<KeypointObservation<T>> {
    predictions
        .iter()
        .enumerate()
        .map(|(b, p)| KeypointObservation::new(to_image(&p.loc[k], &p.rect), p.vis[k], b))
        .collect()
}

/// Runs [`consensus_keypoint`] independently for each of `num_keypoints`
/// keypoints over all proposals of one image.
pub fn consensus_image<T: Scalar>(
    predictions: &[PredictionSet<T>],
    num_keypoints: usize,
    cfg: &ConsensusConfig<T>,
) -> Result<Vec<ConsensusResult<T>>> {
    cfg.validate()?;
    for p in predictions {
        for (what, found) in [("loc", p.loc.len()), ("vis", p.vis.len())] {
            if found != num_keypoints {
                return Err(Error::LengthMismatch {
                    what,
                    expected: num_keypoints,
                    found,
                });
            }
        }
        if let Some(c) = p
            .vis
            .iter()
            .find(|c| !(**c >= T::zero() && **c <= T::one()))
        {
            return Err(Error::OutOfRange {
                what: "confidence".into(),
                value: c.as_f64(),
                range: "[0, 1]",
            });
        }
    }
    Ok((0..num_keypoints)
        .map(|k| consensus_keypoint(&observations_for_keypoint(predictions, k), cfg))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::ImageId;
    use crate::geometry::{NormalizedPoint, Rect};
    use proptest::prelude::*;

    fn pts(xy: &[(f64, f64)]) -> Vec<Point<f64>> {
        xy.iter().map(|&(x, y)| Point::new(x, y)).collect()
    }

    fn obs(xy: &[(f64, f64)], conf: f64) -> Vec<KeypointObservation<f64>> {
        xy.iter()
            .enumerate()
            .map(|(i, &(x, y))| KeypointObservation::new(Point::new(x, y), conf, i))
            .collect()
    }

    /// Brute-force oracle: exhaustive distance sums, lowest index among the
    /// minimizers (with a relative tie tolerance).
    fn brute_medoid(points: &[Point<f64>]) -> usize {
        let sums: Vec<f64> = points
            .iter()
            .map(|p| {
                points
                    .iter()
                    .map(|q| ((p.x - q.x).powi(2) + (p.y - q.y).powi(2)).sqrt())
                    .sum()
            })
            .collect();
        let min = sums.iter().cloned().fold(f64::INFINITY, f64::min);
        sums.iter()
            .position(|&s| s <= min + min.abs() * 1e-12)
            .unwrap()
    }

    #[test]
    fn visibility_filter() {
        let o = vec![
            KeypointObservation::new(Point::new(0.0, 0.0), 0.5, 0),
            KeypointObservation::new(Point::new(1.0, 0.0), 0.6, 1),
            KeypointObservation::new(Point::new(2.0, 0.0), 0.9, 2),
        ];
        assert_eq!(filter_by_visibility(&o, 0.0), o);
        assert!(filter_by_visibility(&o, 0.95).is_empty());
        let kept = filter_by_visibility(&o, 0.6);
        assert_eq!(
            kept.iter().map(|k| k.source_box).collect::<Vec<_>>(),
            vec![1, 2]
        );
    }

    #[test]
    fn medoid_examples() {
        assert!(medoid::<f64>(&[]).is_err());
        assert_eq!(
            medoid(&pts(&[(3.0, 4.0)])).unwrap(),
            (0, Point::new(3.0, 4.0))
        );
        assert_eq!(
            medoid(&pts(&[(0.0, 0.0), (1.0, 0.0), (10.0, 0.0)])).unwrap(),
            (1, Point::new(1.0, 0.0))
        );
        let square = pts(&[(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]);
        assert_eq!(medoid(&square).unwrap().0, 0);
        let square = pts(&[(0.3, 0.7), (1.3, 0.7), (1.3, 1.7), (0.3, 1.7)]);
        assert_eq!(medoid(&square).unwrap().0, 0);
    }

    #[test]
    fn z_score_examples() {
        let same = pts(&[(2.0, 2.0); 4]);
        assert_eq!(modified_z_scores(&same, 0.6745).unwrap(), vec![0.0; 4]);

        let line = pts(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0), (9.0, 0.0)]);
        let z = modified_z_scores(&line, DEFAULT_LAMBDA).unwrap();
        let expected = [0.6745, 0.0, 0.6745, 5.396];
        for (a, b) in z.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{z:?}");
        }

        let mad0 = pts(&[(0.0, 0.0), (0.0, 0.0), (0.0, 0.0), (10.0, 0.0)]);
        assert_eq!(
            modified_z_scores(&mad0, DEFAULT_LAMBDA).unwrap(),
            vec![0.0, 0.0, 0.0, f64::INFINITY]
        );
        assert!(modified_z_scores::<f64>(&[], 1.0).is_err());
    }

    #[test]
    fn inlier_filter_examples() {
        let cfg = ConsensusConfig::gt_box();
        let single = obs(&[(4.0, 4.0)], 1.0);
        assert_eq!(filter_inliers(&single, &cfg), single);

        let line = obs(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0), (9.0, 0.0)], 1.0);
        let kept = filter_inliers(&line, &cfg);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].source_box, 1);

        let cfg = ConsensusConfig::no_gt_box();
        let pair = obs(&[(5.0, 5.0), (5.0, 5.0), (50.0, 5.0)], 1.0);
        let kept = filter_inliers(&pair, &cfg);
        assert_eq!(
            kept.iter().map(|k| k.source_box).collect::<Vec<_>>(),
            vec![0, 1]
        );
    }

    #[test]
    fn medoid_shift_single_cluster_and_single_point() {
        let p = pts(&[(0.0, 0.0), (1.0, 0.5), (0.5, 1.0), (2.0, 2.0)]);
        let ms = medoid_shift(&p, Bandwidth::Fixed(10.0)).unwrap();
        assert_eq!(ms.clusters, vec![vec![0, 1, 2, 3]]);
        assert_eq!(ms.mode, medoid(&p).unwrap().0);

        let one = medoid_shift(&pts(&[(7.0, 7.0)]), Bandwidth::Auto).unwrap();
        assert_eq!(one.clusters, vec![vec![0]]);
        assert_eq!(one.mode, 0);
        assert!(medoid_shift::<f64>(&[], Bandwidth::Auto).is_err());
        assert!(medoid_shift(&p, Bandwidth::Fixed(0.0)).is_err());
    }

    /// Oracle for the basin partition: repeatedly apply the link map until
    /// it stops changing, then group by the final target.
    fn brute_basins(points: &[Point<f64>], h: f64) -> Vec<Vec<usize>> {
        let n = points.len();
        let d = |a: usize, b: usize| {
            ((points[a].x - points[b].x).powi(2) + (points[a].y - points[b].y).powi(2)).sqrt()
        };
        let link: Vec<usize> = (0..n)
            .map(|i| {
                let cost: Vec<f64> = (0..n)
                    .map(|j| (0..n).filter(|&k| d(i, k) <= h).map(|k| d(j, k)).sum())
                    .collect();
                let min = cost.iter().cloned().fold(f64::INFINITY, f64::min);
                cost.iter().position(|&c| c <= min + min * 1e-12).unwrap()
            })
            .collect();
        let mut target: Vec<usize> = (0..n).collect();
        for _ in 0..n {
            target = target.iter().map(|&t| link[t]).collect();
        }
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, t) in target.into_iter().enumerate() {
            groups.entry(t).or_default().push(i);
        }
        groups.into_values().collect()
    }

    #[test]
    fn medoid_shift_two_separated_groups() {
        let h = 2.0;
        let mut p = Vec::new();
        let small = [(0.0, 0.0), (0.5, 0.2), (0.1, 0.6)];
        let big = [
            (0.0, 0.0),
            (0.3, 0.1),
            (-0.2, 0.4),
            (0.5, -0.3),
            (0.1, 0.2),
            (-0.4, -0.1),
            (0.2, 0.5),
        ];
        // interleave so the larger group does not simply come first
        for (i, &(x, y)) in big.iter().enumerate() {
            p.push(Point::new(x + 100.0 * h, y));
            if let Some(&(sx, sy)) = small.get(i) {
                p.push(Point::new(sx, sy));
            }
        }
        let ms = medoid_shift(&p, Bandwidth::Fixed(h)).unwrap();
        assert_eq!(ms.clusters, brute_basins(&p, h));
        assert_eq!(ms.clusters.len(), 2);
        let largest = &ms.clusters[ms.largest];
        assert_eq!(largest.len(), 7);
        let big_pts: Vec<_> = largest.iter().map(|&i| p[i]).collect();
        assert_eq!(ms.mode, largest[medoid(&big_pts).unwrap().0]);
        assert!(p[ms.mode].x > 100.0);
    }

    #[test]
    fn link_cycles_resolve_to_lowest_index() {
        assert_eq!(follow_links(&[1, 0, 2, 2]), vec![0, 0, 2, 2]);
        assert_eq!(follow_links(&[1, 2, 1, 0]), vec![1, 1, 1, 1]);
    }

    #[test]
    fn consensus_keypoint_examples() {
        let cfg = ConsensusConfig::gt_box();
        let low = obs(&[(1.0, 1.0), (2.0, 2.0)], 0.1);
        let r = consensus_keypoint(&low, &cfg);
        assert_eq!(r, ConsensusResult::invisible());

        let mut one = low.clone();
        one[1].confidence = 0.9;
        let r = consensus_keypoint(&one, &cfg);
        assert!(r.visible);
        assert_eq!(r.location, Some(Point::new(2.0, 2.0)));
        assert_eq!(r.inliers.len(), 1);
        assert_eq!(r.all_filtered.len(), 1);
    }

    #[test]
    fn consensus_ignores_confident_outlier() {
        let cluster = [
            (50.0, 50.0),
            (51.0, 49.5),
            (49.2, 50.8),
            (50.5, 51.1),
            (48.9, 49.4),
            (50.2, 48.8),
            (51.4, 50.3),
            (49.6, 51.6),
            (50.9, 50.6),
        ];
        let mut o = obs(&cluster, 0.8);
        o.push(KeypointObservation::new(Point::new(150.0, 10.0), 0.99, 9));
        for method in [Method::MedoidOnly, Method::InlierSet, Method::MedoidShift] {
            let cfg = ConsensusConfig::gt_box().with_method(method);
            let r = consensus_keypoint(&o, &cfg);
            let loc = r.location.unwrap();
            assert!(cluster.contains(&(loc.x, loc.y)), "{method:?}");
            assert!(r.inliers.iter().all(|i| i.source_box != 9), "{method:?}");
        }
    }

    #[test]
    fn inlier_location_variant() {
        let o = obs(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0), (9.0, 0.0)], 1.0);
        let mut cfg = ConsensusConfig::gt_box();
        cfg.inlier_location = InlierLocation::InlierMedoid;
        assert_eq!(
            consensus_keypoint(&o, &cfg).location,
            Some(Point::new(1.0, 0.0))
        );
    }

    #[test]
    fn consensus_image_examples() {
        let cfg = ConsensusConfig::gt_box();
        let none = consensus_image::<f64>(&[], 3, &cfg).unwrap();
        assert_eq!(none, vec![ConsensusResult::invisible(); 3]);

        let rect = Rect::new(10.0, 20.0, 100.0, 50.0).unwrap();
        let set = PredictionSet {
            image_id: ImageId(1),
            rect,
            score: 1.0,
            loc: vec![
                NormalizedPoint::new(0.5, 0.5),
                NormalizedPoint::new(0.0, 1.0),
            ],
            vis: vec![1.0, 1.0],
        };
        let res = consensus_image(std::slice::from_ref(&set), 2, &cfg).unwrap();
        assert_eq!(res[0].location, Some(Point::new(60.0, 45.0)));
        assert_eq!(res[1].location, Some(Point::new(10.0, 70.0)));

        assert!(matches!(
            consensus_image(std::slice::from_ref(&set), 3, &cfg),
            Err(Error::LengthMismatch { .. })
        ));
        let mut bad = set;
        bad.vis[0] = 1.5;
        assert!(consensus_image(&[bad], 2, &cfg).is_err());
    }

    #[test]
    fn config_validation() {
        let mut cfg = ConsensusConfig::<f64>::gt_box();
        assert!(cfg.validate().is_ok());
        cfg.visibility_threshold = 1.2;
        assert!(cfg.validate().is_err());
        let mut cfg = ConsensusConfig::<f64>::gt_box();
        cfg.lambda = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = ConsensusConfig::<f64>::gt_box();
        cfg.bandwidth = Bandwidth::Fixed(-1.0);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn single_precision_matches_double() {
        let p64 = pts(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0), (9.0, 0.0)]);
        let p32: Vec<Point<f32>> = p64
            .iter()
            .map(|p| Point::new(p.x as f32, p.y as f32))
            .collect();
        assert_eq!(medoid(&p64).unwrap().0, medoid(&p32).unwrap().0);
        let z = modified_z_scores(&p32, DEFAULT_LAMBDA as f32).unwrap();
        assert!((z[3] - 5.396).abs() < 1e-5);
    }

    fn arb_points(max: usize) -> impl Strategy<Value = Vec<Point<f64>>> {
        prop::collection::vec((-100.0..100.0f64, -100.0..100.0f64), 1..max)
            .prop_map(|v| v.into_iter().map(|(x, y)| Point::new(x, y)).collect())
    }

    proptest! {
        #[test]
        fn medoid_matches_brute_force(p in arb_points(50)) {
            prop_assert_eq!(medoid(&p).unwrap().0, brute_medoid(&p));
        }

        #[test]
        fn medoid_is_rigid_equivariant(p in arb_points(30), theta in 0.0..std::f64::consts::TAU, tx in -50.0..50.0f64, ty in -50.0..50.0f64) {
            let (c, s) = (theta.cos(), theta.sin());
            let q: Vec<_> = p.iter().map(|p| Point::new(c * p.x - s * p.y + tx, s * p.x + c * p.y + ty)).collect();
            prop_assert_eq!(medoid(&p).unwrap().0, medoid(&q).unwrap().0);
        }

        #[test]
        fn z_scores_scale_invariant(p in arb_points(30), s in prop::sample::select(vec![1e-3, 0.5, 1.0, 7.0, 1e3])) {
            let z = modified_z_scores(&p, DEFAULT_LAMBDA).unwrap();
            let q: Vec<_> = p.iter().map(|p| Point::new(p.x * s, p.y * s)).collect();
            let zs = modified_z_scores(&q, DEFAULT_LAMBDA).unwrap();
            for (a, b) in z.iter().zip(&zs) {
                if a.is_finite() {
                    prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1e-300));
                } else {
                    prop_assert!(b.is_infinite());
                }
            }
        }

        #[test]
        fn inliers_never_empty(p in arb_points(30), z in 0.01..2.0f64) {
            let o: Vec<_> = p.iter().enumerate().map(|(i, &p)| KeypointObservation::new(p, 1.0, i)).collect();
            let mut cfg = ConsensusConfig::gt_box();
            cfg.z_threshold = z;
            prop_assert!(!filter_inliers(&o, &cfg).is_empty());
        }

        #[test]
        fn consensus_selects_an_input(p in arb_points(25), conf in prop::collection::vec(0.0..1.0f64, 25)) {
            let o: Vec<_> = p.iter().zip(&conf).enumerate().map(|(i, (&p, &c))| KeypointObservation::new(p, c, i)).collect();
            for method in [Method::MedoidOnly, Method::InlierSet, Method::MedoidShift] {
                let r = consensus_keypoint(&o, &ConsensusConfig::gt_box().with_method(method));
                prop_assert_eq!(r.visible, r.location.is_some());
                prop_assert_eq!(r.visible, !r.inliers.is_empty());
                if let Some(loc) = r.location {
                    prop_assert!(r.all_filtered.iter().any(|f| f.location == loc));
                }
            }
        }

        #[test]
        fn wide_bandwidth_gives_one_cluster(p in arb_points(25)) {
            let ms = medoid_shift(&p, Bandwidth::Fixed(1e4)).unwrap();
            prop_assert_eq!(ms.clusters.len(), 1);
            prop_assert_eq!(ms.mode, medoid(&p).unwrap().0);
        }

        #[test]
        fn selection_is_permutation_invariant(p in arb_points(20), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            // general position only: a unique minimizer of the distance sums
            let mut sums: Vec<f64> = p.iter().map(|a| p.iter().map(|b| a.distance(b)).sum()).collect();
            sums.sort_by(|a, b| a.partial_cmp(b).unwrap());
            prop_assume!(sums.len() < 2 || sums[1] - sums[0] > 1e-6 * sums[0].max(1.0));
            let o: Vec<_> = p.iter().enumerate().map(|(i, &p)| KeypointObservation::new(p, 1.0, i)).collect();
            let mut shuffled = o.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            for method in [Method::MedoidOnly, Method::InlierSet] {
                let cfg = ConsensusConfig::gt_box().with_method(method);
                prop_assert_eq!(consensus_keypoint(&o, &cfg).location, consensus_keypoint(&shuffled, &cfg).location);
            }
        }
    }
}
