//! Training crops, visibility/location targets, flip augmentation and the
//! reference losses with their analytic gradients.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::annotation::{cub_keypoint_index, ImageAnnotation, CUB_NUM_KEYPOINTS};
use crate::error::{Error, Result};
use crate::geometry::{
    containment_fraction, iou, pad_box, to_normalized, NormalizedPoint, Rect, CROP_BUFFER,
    CROP_SIDE,
};
use crate::scalar::Scalar;

/// Rules for picking training crops among the proposals of one image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionParams<T> {
    /// Minimum fraction of a positive crop inside the object box.
    pub min_containment: T,
    /// Minimum IOU of a positive crop with the object box.
    pub min_iou: T,
    /// Maximum number of background crops per image.
    pub max_background: usize,
}

impl<T: Scalar> Default for SelectionParams<T> {
    fn default() -> Self {
        Self {
            min_containment: T::lit(0.5),
            min_iou: T::lit(0.2),
            max_background: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectedBox<T> {
    pub rect: Rect<T>,
    /// Position in the proposal list.
    pub proposal: usize,
    pub is_background: bool,
}

/// Positives in proposal order, followed by up to `max_background`
/// background crops (no overlap with the object box) drawn uniformly
/// without replacement with the given seed.
pub fn select_training_boxes<T: Scalar>(
    proposals: &[Rect<T>],
    gt_box: &Rect<T>,
    seed: u64,
    params: &SelectionParams<T>,
) -> Vec<SelectedBox<T>> {
    let mut out: Vec<SelectedBox<T>> = proposals
        .iter()
        .enumerate()
        .filter(|(_, p)| {
            containment_fraction(p, gt_box) >= params.min_containment
                && iou(p, gt_box) >= params.min_iou
        })
        .map(|(i, p)| SelectedBox {
            rect: *p,
            proposal: i,
            is_background: false,
        })
        .collect();

    let eligible: Vec<usize> = proposals
        .iter()
        .enumerate()
        .filter(|(_, p)| p.intersection_area(gt_box) == T::zero())
        .map(|(i, _)| i)
        .collect();
    let take = eligible.len().min(params.max_background);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<usize> = index::sample(&mut rng, eligible.len(), take)
        .into_iter()
        .map(|j| eligible[j])
        .collect();
    picked.sort_unstable();
    out.extend(picked.into_iter().map(|i| SelectedBox {
        rect: proposals[i],
        proposal: i,
        is_background: true,
    }));
    out
}

/// Left/right keypoint pairing. Always an involution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlipMap(Vec<usize>);

impl FlipMap {
    pub fn new(perm: Vec<usize>) -> Result<Self> {
        let n = perm.len();
        for (i, &j) in perm.iter().enumerate() {
            if j >= n || perm[j] != i {
                return Err(Error::Config(format!(
                    "flip map is not an involution at index {i}"
                )));
            }
        }
        Ok(Self(perm))
    }

    pub fn identity(n: usize) -> Self {
        Self((0..n).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn partner(&self, i: usize) -> usize {
        self.0[i]
    }
}

/// Swaps left/right eye, leg and wing.
pub fn cub_flip_map() -> FlipMap {
    let mut perm: Vec<usize> = (0..CUB_NUM_KEYPOINTS).collect();
    for side in ["eye", "leg", "wing"] {
        let l = cub_keypoint_index(&format!("left {side}")).expect("static table");
        let r = cub_keypoint_index(&format!("right {side}")).expect("static table");
        perm.swap(l, r);
    }
    FlipMap::new(perm).expect("pairs form an involution")
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample<T> {
    pub rect: Rect<T>,
    pub padded: Rect<T>,
    pub visible: Vec<bool>,
    /// Normalized target per keypoint; `None` where the keypoint is not
    /// visible in the crop.
    pub location: Vec<Option<NormalizedPoint<T>>>,
    pub is_background: bool,
    pub flipped: bool,
}

impl<T: Scalar> TrainingExample<T> {
    /// Dense targets for the loss functions: `v` as 0/1 and `l` with NaN in
    /// masked slots.
    pub fn targets(&self) -> (Vec<T>, Vec<NormalizedPoint<T>>) {
        let v = self
            .visible
            .iter()
            .map(|&b| if b { T::one() } else { T::zero() })
            .collect();
        let l = self
            .location
            .iter()
            .map(|l| l.unwrap_or(NormalizedPoint::new(T::nan(), T::nan())))
            .collect();
        (v, l)
    }
}

/// Targets for a positive crop: a keypoint is visible iff it is annotated
/// visible and lies inside the un-padded box (boundary inclusive).
pub fn make_targets<T: Scalar>(
    rect: &Rect<T>,
    annotation: &ImageAnnotation<T>,
) -> Result<TrainingExample<T>> {
    make_targets_with(rect, annotation, T::lit(CROP_SIDE), T::lit(CROP_BUFFER))
}

pub fn make_targets_with<T: Scalar>(
    rect: &Rect<T>,
    annotation: &ImageAnnotation<T>,
    crop_side: T,
    buffer: T,
) -> Result<TrainingExample<T>> {
    let padded = pad_box(rect, crop_side, buffer)?;
    let (visible, location) = annotation
        .keypoints
        .iter()
        .map(|k| {
            if k.visible && rect.contains(&k.location) {
                (true, Some(to_normalized(&k.location, rect)))
            } else {
                (false, None)
            }
        })
        .unzip();
    Ok(TrainingExample {
        rect: *rect,
        padded,
        visible,
        location,
        is_background: false,
        flipped: false,
    })
}

/// Background crop: every keypoint absent.
pub fn make_background<T: Scalar>(
    rect: &Rect<T>,
    num_keypoints: usize,
    crop_side: T,
    buffer: T,
) -> Result<TrainingExample<T>> {
    Ok(TrainingExample {
        rect: *rect,
        padded: pad_box(rect, crop_side, buffer)?,
        visible: vec![false; num_keypoints],
        location: vec![None; num_keypoints],
        is_background: true,
        flipped: false,
    })
}

/// Mirrors an example about the vertical axis of the image, swapping
/// left/right keypoints.
pub fn flip_example<T: Scalar>(
    ex: &TrainingExample<T>,
    image_width: T,
    fm: &FlipMap,
) -> Result<TrainingExample<T>> {
    let n = ex.visible.len();
    if fm.len() != n || ex.location.len() != n {
        return Err(Error::LengthMismatch {
            what: "flip map",
            expected: n,
            found: fm.len(),
        });
    }
    let mut visible = vec![false; n];
    let mut location = vec![None; n];
    for i in 0..n {
        let j = fm.partner(i);
        visible[j] = ex.visible[i];
        location[j] = ex.location[i].map(|p| NormalizedPoint::new(T::one() - p.u, p.v));
    }
    Ok(TrainingExample {
        rect: ex.rect.mirror_horizontal(image_width),
        padded: ex.padded.mirror_horizontal(image_width),
        visible,
        location,
        is_background: ex.is_background,
        flipped: !ex.flipped,
    })
}

fn check_len(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::LengthMismatch {
            what,
            expected,
            found,
        })
    }
}

fn check_confidences<T: Scalar>(v_hat: &[T]) -> Result<()> {
    match v_hat
        .iter()
        .position(|c| !(*c >= T::zero() && *c <= T::one()))
    {
        Some(i) => Err(Error::OutOfRange {
            what: format!("v_hat[{i}]"),
            value: v_hat[i].as_f64(),
            range: "[0, 1]",
        }),
        None => Ok(()),
    }
}

/// Squared Euclidean distance between target and predicted visibility.
pub fn loss_vis<T: Scalar>(v: &[T], v_hat: &[T]) -> Result<T> {
    check_len("v_hat", v.len(), v_hat.len())?;
    check_confidences(v_hat)?;
    Ok(v.iter().zip(v_hat).map(|(&a, &b)| (a - b) * (a - b)).sum())
}

/// Squared location error summed over keypoints with `v_i != 0`, weighted by
/// `v_i`. Masked targets are never read.
pub fn loss_loc<T: Scalar>(
    v: &[T],
    l: &[NormalizedPoint<T>],
    l_hat: &[NormalizedPoint<T>],
) -> Result<T> {
    check_len("l", v.len(), l.len())?;
    check_len("l_hat", v.len(), l_hat.len())?;
    Ok(v.iter()
        .zip(l.iter().zip(l_hat))
        .filter(|(w, _)| **w != T::zero())
        .map(|(&w, (t, p))| {
            let (du, dv) = (t.u - p.u, t.v - p.v);
            w * (du * du + dv * dv)
        })
        .sum())
}

pub fn loss_net<T: Scalar>(
    v: &[T],
    v_hat: &[T],
    l: &[NormalizedPoint<T>],
    l_hat: &[NormalizedPoint<T>],
) -> Result<T> {
    Ok(loss_vis(v, v_hat)? + loss_loc(v, l, l_hat)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossGradients<T> {
    /// d L_net / d v_hat
    pub visibility: Vec<T>,
    /// d L_net / d l_hat
    pub location: Vec<NormalizedPoint<T>>,
}

/// Analytic gradients of [`loss_net`] with respect to the predictions.
pub fn loss_gradients<T: Scalar>(
    v: &[T],
    v_hat: &[T],
    l: &[NormalizedPoint<T>],
    l_hat: &[NormalizedPoint<T>],
) -> Result<LossGradients<T>> {
    check_len("v_hat", v.len(), v_hat.len())?;
    check_len("l", v.len(), l.len())?;
    check_len("l_hat", v.len(), l_hat.len())?;
    check_confidences(v_hat)?;
    let two = T::lit(2.0);
    let visibility = v.iter().zip(v_hat).map(|(&a, &b)| -two * (a - b)).collect();
    let location = v
        .iter()
        .zip(l.iter().zip(l_hat))
        .map(|(&w, (t, p))| {
            if w == T::zero() {
                NormalizedPoint::new(T::zero(), T::zero())
            } else {
                NormalizedPoint::new(-two * w * (t.u - p.u), -two * w * (t.v - p.v))
            }
        })
        .collect();
    Ok(LossGradients {
        visibility,
        location,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::{ImageId, Keypoint};
    use crate::geometry::Point;
    use proptest::prelude::*;

    fn r(x: f64, y: f64, w: f64, h: f64) -> Rect<f64> {
        Rect::new(x, y, w, h).unwrap()
    }

    fn ann(kps: &[(f64, f64, bool)]) -> ImageAnnotation<f64> {
        ImageAnnotation {
            image_id: ImageId(3),
            width: 300.0,
            height: 200.0,
            keypoints: kps
                .iter()
                .map(|&(x, y, v)| Keypoint {
                    location: Point::new(x, y),
                    visible: v,
                })
                .collect(),
            object_box: r(0.0, 0.0, 100.0, 100.0),
            class_label: "c".into(),
        }
    }

    #[test]
    fn selection_examples() {
        let gt = r(0.0, 0.0, 100.0, 100.0);
        let p = SelectionParams::default();
        let props = vec![
            gt,                          // positive
            r(300.0, 300.0, 50.0, 50.0), // background
            r(70.0, 0.0, 50.0, 50.0),    // containment 0.6, IOU 1500/11000
            r(50.0, 0.0, 100.0, 100.0),  // containment 0.5, IOU 1/3
            r(100.0, 0.0, 20.0, 20.0),   // touches the edge only: background
        ];
        assert!((containment_fraction(&props[2], &gt) - 0.6).abs() < 1e-12);
        assert!(iou(&props[2], &gt) < 0.2);
        let sel = select_training_boxes(&props, &gt, 7, &p);
        let pos: Vec<_> = sel
            .iter()
            .filter(|s| !s.is_background)
            .map(|s| s.proposal)
            .collect();
        let bg: Vec<_> = sel
            .iter()
            .filter(|s| s.is_background)
            .map(|s| s.proposal)
            .collect();
        assert_eq!(pos, vec![0, 3]);
        assert_eq!(bg, vec![1, 4]);
    }

    #[test]
    fn background_sampling_is_seeded_and_capped() {
        let gt = r(0.0, 0.0, 10.0, 10.0);
        let props: Vec<_> = (0..200)
            .map(|i| r(20.0 + i as f64, 20.0, 5.0, 5.0))
            .collect();
        let p = SelectionParams {
            max_background: 50,
            ..Default::default()
        };
        let a = select_training_boxes(&props, &gt, 1, &p);
        assert_eq!(a.len(), 50);
        assert_eq!(a, select_training_boxes(&props, &gt, 1, &p));
        assert_ne!(a, select_training_boxes(&props, &gt, 2, &p));
    }

    #[test]
    fn target_examples() {
        let b = r(0.0, 0.0, 100.0, 50.0);
        let a = ann(&[
            (50.0, 25.0, true),
            (10.0, 10.0, false),
            (150.0, 10.0, true),
            (100.0, 50.0, true),
        ]);
        let ex = make_targets(&b, &a).unwrap();
        assert_eq!(ex.visible, vec![true, false, false, true]);
        assert_eq!(ex.location[0], Some(NormalizedPoint::new(0.5, 0.5)));
        assert_eq!(ex.location[1], None);
        assert_eq!(ex.location[3], Some(NormalizedPoint::new(1.0, 1.0)));
        assert_eq!(ex.padded, pad_box(&b, 227.0, 16.0).unwrap());
        let (v, l) = ex.targets();
        assert_eq!(v, vec![1.0, 0.0, 0.0, 1.0]);
        assert!(l[1].u.is_nan());

        let bg = make_background(&b, 4, 227.0, 16.0).unwrap();
        assert!(bg.visible.iter().all(|v| !v) && bg.is_background);
    }

    #[test]
    fn flip_examples() {
        let fm = cub_flip_map();
        assert_eq!(fm.partner(6), 10);
        assert_eq!(fm.partner(12), 8);
        assert_eq!(fm.partner(0), 0);
        assert!(FlipMap::new(vec![1, 2, 0]).is_err());

        let mut kps = vec![(0.0, 0.0, false); 15];
        kps[6] = (25.0, 30.0, true); // left eye at u = 0.25
        let a = ann(&kps);
        let ex = make_targets(&r(0.0, 0.0, 100.0, 100.0), &a).unwrap();
        let f = flip_example(&ex, a.width, &fm).unwrap();
        assert!(!f.visible[6] && f.visible[10]);
        assert_eq!(f.location[10], Some(NormalizedPoint::new(0.75, 0.3)));
        assert_eq!(f.rect, r(200.0, 0.0, 100.0, 100.0));
        assert!(f.flipped);
        let back = flip_example(&f, a.width, &fm).unwrap();
        assert_eq!(back.rect, ex.rect);
        assert_eq!(back.visible, ex.visible);
        assert_eq!(back.location, ex.location);
        assert!((back.padded.x() - ex.padded.x()).abs() < 1e-12);
        assert!(!back.flipped);
    }

    #[test]
    fn loss_examples() {
        let v = [1.0f64, 0.0];
        let v_hat = [0.5, 0.5];
        let l = [
            NormalizedPoint::new(0.2, 0.2),
            NormalizedPoint::new(f64::NAN, f64::NAN),
        ];
        let l_hat = [
            NormalizedPoint::new(0.5, 0.6),
            NormalizedPoint::new(0.9, 0.1),
        ];
        assert!((loss_vis(&v, &v_hat).unwrap() - 0.5).abs() < 1e-15);
        assert!((loss_loc(&v, &l, &l_hat).unwrap() - 0.25).abs() < 1e-15);
        assert!((loss_net(&v, &v_hat, &l, &l_hat).unwrap() - 0.75).abs() < 1e-15);

        let g = loss_gradients(&v, &v_hat, &l, &l_hat).unwrap();
        assert_eq!(g.visibility, vec![-1.0, 1.0]);
        assert!((g.location[0].u - 0.6).abs() < 1e-15 && (g.location[0].v - 0.8).abs() < 1e-15);
        assert_eq!(g.location[1], NormalizedPoint::new(0.0, 0.0));

        let zero = loss_gradients(&v, &[1.0, 0.0], &l, &[l[0], l_hat[1]]).unwrap();
        assert!(zero.visibility.iter().all(|g| *g == 0.0));
        assert_eq!(zero.location[0], NormalizedPoint::new(0.0, 0.0));
        assert_eq!(
            loss_net(&v, &[1.0, 0.0], &l, &[l[0], l_hat[1]]).unwrap(),
            0.0
        );

        assert_eq!(loss_loc(&[0.0, 0.0], &l, &l_hat).unwrap(), 0.0);
        assert!(loss_vis(&v, &[0.5]).is_err());
        assert!(loss_vis(&v, &[1.5, 0.0]).is_err());
    }

    proptest! {
        #[test]
        fn loss_is_non_negative(
            data in prop::collection::vec((any::<bool>(), 0.0..1.0f64, -1.0..2.0f64, -1.0..2.0f64, -1.0..2.0f64, -1.0..2.0f64), 1..15)
        ) {
            let v: Vec<f64> = data.iter().map(|d| if d.0 { 1.0 } else { 0.0 }).collect();
            let vh: Vec<f64> = data.iter().map(|d| d.1).collect();
            let l: Vec<_> = data.iter().map(|d| NormalizedPoint::new(d.2, d.3)).collect();
            let lh: Vec<_> = data.iter().map(|d| NormalizedPoint::new(d.4, d.5)).collect();
            prop_assert!(loss_net(&v, &vh, &l, &lh).unwrap() >= 0.0);
        }

        #[test]
        fn positives_do_not_depend_on_seed(seed_a in any::<u64>(), seed_b in any::<u64>()) {
            let gt = r(10.0, 10.0, 100.0, 80.0);
            let props: Vec<_> = (0..40).map(|i| {
                let f = i as f64;
                r(f * 7.0 % 150.0, f * 3.0 % 120.0, 30.0 + f, 20.0 + f)
            }).collect();
            let p = SelectionParams { max_background: 3, ..Default::default() };
            let pos = |s| select_training_boxes(&props, &gt, s, &p).into_iter().filter(|b| !b.is_background).collect::<Vec<_>>();
            prop_assert_eq!(pos(seed_a), pos(seed_b));
        }
    }
}
