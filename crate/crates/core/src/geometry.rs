//! Axis-aligned boxes and the coordinate frames used around a proposal.
//!
//! Three frames appear in the pipeline:
//!
//! - image space: pixels, origin at the top-left corner, `x` to the right and
//!   `y` downward;
//! - proposal space: coordinates normalized to an un-padded box, `(0, 0)` at
//!   its top-left corner and `(1, 1)` at its bottom-right corner;
//! - crop space: pixels of the square warped crop fed to the predictor, where
//!   the un-padded box occupies the central region and a fixed buffer
//!   surrounds it.
//!
//! Boxes are real-valued and intervals are closed.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Side of the square warped crop, in pixels.
pub const CROP_SIDE: f64 = 227.0;
/// Buffer kept around the un-padded box inside the warped crop, in pixels.
pub const CROP_BUFFER: f64 = 16.0;
/// Minimum side given to degenerate tightest boxes, in pixels.
pub const MIN_BOX_SIDE: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point<T> {
    pub x: T,
    pub y: T,
}

impl<T: Scalar> Point<T> {
    pub fn new(x: T, y: T) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Self) -> T {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// Point expressed relative to an un-padded box. Values outside `[0, 1]`
/// denote locations outside the box.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NormalizedPoint<T> {
    pub u: T,
    pub v: T,
}

impl<T: Scalar> NormalizedPoint<T> {
    pub fn new(u: T, v: T) -> Self {
        Self { u, v }
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.v.is_finite()
    }
}

/// Axis-aligned rectangle with strictly positive extent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect<T> {
    x: T,
    y: T,
    w: T,
    h: T,
}

impl<T: Scalar> Rect<T> {
    /// Builds a rectangle from its top-left corner and size. Rejects
    /// non-positive or non-finite sizes.
    pub fn new(x: T, y: T, w: T, h: T) -> Result<Self> {
        if !(x.is_finite() && y.is_finite()) {
            return Err(Error::NonFinite);
        }
        if !(w.is_finite() && h.is_finite() && w > T::zero() && h > T::zero()) {
            return Err(Error::InvalidRect {
                w: w.as_f64(),
                h: h.as_f64(),
            });
        }
        Ok(Self { x, y, w, h })
    }

    /// Builds a rectangle from two opposite corners.
    pub fn from_corners(left: T, top: T, right: T, bottom: T) -> Result<Self> {
        Self::new(left, top, right - left, bottom - top)
    }

    pub fn x(&self) -> T {
        self.x
    }

    pub fn y(&self) -> T {
        self.y
    }

    pub fn w(&self) -> T {
        self.w
    }

    pub fn h(&self) -> T {
        self.h
    }

    pub fn right(&self) -> T {
        self.x + self.w
    }

    pub fn bottom(&self) -> T {
        self.y + self.h
    }

    pub fn area(&self) -> T {
        self.w * self.h
    }

    pub fn center(&self) -> Point<T> {
        let half = T::lit(0.5);
        Point::new(self.x + half * self.w, self.y + half * self.h)
    }

    pub fn diagonal(&self) -> T {
        self.w.hypot(self.h)
    }

    /// Closed containment test.
    pub fn contains(&self, p: &Point<T>) -> bool {
        p.x >= self.x && p.x <= self.right() && p.y >= self.y && p.y <= self.bottom()
    }

    /// Area of the overlap with `other`; zero when the boxes are disjoint or
    /// only touch along an edge.
    pub fn intersection_area(&self, other: &Self) -> T {
        let iw = self.right().min(other.right()) - self.x.max(other.x);
        let ih = self.bottom().min(other.bottom()) - self.y.max(other.y);
        if iw <= T::zero() || ih <= T::zero() {
            T::zero()
        } else {
            iw * ih
        }
    }

    /// Smallest rectangle enclosing both boxes.
    pub fn union_box(&self, other: &Self) -> Self {
        Self {
            x: self.x.min(other.x),
            y: self.y.min(other.y),
            w: self.right().max(other.right()) - self.x.min(other.x),
            h: self.bottom().max(other.bottom()) - self.y.min(other.y),
        }
    }

    /// Mirrors the box about the vertical axis of an image `image_width`
    /// pixels wide.
    pub fn mirror_horizontal(&self, image_width: T) -> Self {
        Self {
            x: image_width - self.right(),
            ..*self
        }
    }
}

/// Intersection over union of two boxes.
pub fn iou<T: Scalar>(a: &Rect<T>, b: &Rect<T>) -> T {
    if a == b {
        return T::one();
    }
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    (inter / union).min(T::one())
}

/// Fraction of `inner`'s area lying inside `outer`.
pub fn containment_fraction<T: Scalar>(inner: &Rect<T>, outer: &Rect<T>) -> T {
    (inner.intersection_area(outer) / inner.area()).min(T::one())
}

/// Minimal box containing every point. Sides shorter than `min_side` are
/// widened to `min_side`, keeping the top-left corner fixed.
pub fn tightest_box_with_min<T: Scalar>(points: &[Point<T>], min_side: T) -> Result<Rect<T>> {
    let first = points.first().ok_or(Error::NoPoints)?;
    if !first.is_finite() {
        return Err(Error::NonFinite);
    }
    let (mut left, mut top, mut right, mut bottom) = (first.x, first.y, first.x, first.y);
    for p in &points[1..] {
        if !p.is_finite() {
            return Err(Error::NonFinite);
        }
        left = left.min(p.x);
        top = top.min(p.y);
        right = right.max(p.x);
        bottom = bottom.max(p.y);
    }
    Rect::new(
        left,
        top,
        span(left, right, min_side),
        span(top, bottom, min_side),
    )
}

/// Extent from `lo` to `hi`, at least `min_side`, such that `lo + extent`
/// does not round below `hi`.
fn span<T: Scalar>(lo: T, hi: T, min_side: T) -> T {
    let mut w = (hi - lo).max(min_side);
    while lo + w < hi {
        w = w + T::epsilon() * w.max(hi.abs());
    }
    w
}

/// [`tightest_box_with_min`] with the default 1-pixel minimum side.
pub fn tightest_box<T: Scalar>(points: &[Point<T>]) -> Result<Rect<T>> {
    tightest_box_with_min(points, T::lit(MIN_BOX_SIDE))
}

/// Grows `b` about its center so that, once warped to a `crop_side` square,
/// the original box fills the central `crop_side - 2 * buffer` region.
pub fn pad_box<T: Scalar>(b: &Rect<T>, crop_side: T, buffer: T) -> Result<Rect<T>> {
    let inner = crop_side - buffer - buffer;
    if !(buffer >= T::zero() && inner > T::zero()) {
        return Err(Error::InvalidPadding {
            crop_side: crop_side.as_f64(),
            buffer: buffer.as_f64(),
        });
    }
    if buffer == T::zero() {
        return Ok(*b);
    }
    let scale = crop_side / inner;
    let c = b.center();
    let (w, h) = (b.w * scale, b.h * scale);
    let half = T::lit(0.5);
    Rect::new(c.x - half * w, c.y - half * h, w, h)
}

/// Inverse of [`pad_box`].
pub fn unpad_box<T: Scalar>(padded: &Rect<T>, crop_side: T, buffer: T) -> Result<Rect<T>> {
    let inner = crop_side - buffer - buffer;
    if !(buffer >= T::zero() && inner > T::zero()) {
        return Err(Error::InvalidPadding {
            crop_side: crop_side.as_f64(),
            buffer: buffer.as_f64(),
        });
    }
    if buffer == T::zero() {
        return Ok(*padded);
    }
    let scale = inner / crop_side;
    let c = padded.center();
    let (w, h) = (padded.w * scale, padded.h * scale);
    let half = T::lit(0.5);
    Rect::new(c.x - half * w, c.y - half * h, w, h)
}

pub fn to_normalized<T: Scalar>(p: &Point<T>, b: &Rect<T>) -> NormalizedPoint<T> {
    NormalizedPoint::new((p.x - b.x) / b.w, (p.y - b.y) / b.h)
}

pub fn to_image<T: Scalar>(n: &NormalizedPoint<T>, b: &Rect<T>) -> Point<T> {
    Point::new(b.x + n.u * b.w, b.y + n.v * b.h)
}

/// Maps an image point into pixel coordinates of the warped crop built
/// from `padded` (a box produced by [`pad_box`]).
pub fn to_crop<T: Scalar>(p: &Point<T>, padded: &Rect<T>, crop_side: T) -> Point<T> {
    let n = to_normalized(p, padded);
    Point::new(n.u * crop_side, n.v * crop_side)
}

/// Inverse of [`to_crop`].
pub fn from_crop<T: Scalar>(p: &Point<T>, padded: &Rect<T>, crop_side: T) -> Point<T> {
    to_image(
        &NormalizedPoint::new(p.x / crop_side, p.y / crop_side),
        padded,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn r(x: f64, y: f64, w: f64, h: f64) -> Rect<f64> {
        Rect::new(x, y, w, h).unwrap()
    }

    #[test]
    fn rejects_degenerate_rects() {
        assert!(Rect::new(0.0, 0.0, 0.0, 1.0).is_err());
        assert!(Rect::new(0.0, 0.0, 1.0, -1.0).is_err());
        assert!(Rect::new(f64::NAN, 0.0, 1.0, 1.0).is_err());
        assert!(Rect::new(0.0, 0.0, f64::INFINITY, 1.0).is_err());
        assert_eq!(r(1.0, 2.0, 3.0, 4.0).area(), 12.0);
    }

    #[test]
    fn iou_examples() {
        let a = r(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &r(20.0, 20.0, 5.0, 5.0)), 0.0);
        // touching edges only
        assert_eq!(iou(&a, &r(10.0, 0.0, 5.0, 5.0)), 0.0);
        let third = iou(&a, &r(5.0, 0.0, 10.0, 10.0));
        assert!((third - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn containment_examples() {
        let outer = r(0.0, 0.0, 100.0, 100.0);
        assert_eq!(containment_fraction(&r(10.0, 10.0, 5.0, 5.0), &outer), 1.0);
        assert_eq!(containment_fraction(&r(200.0, 0.0, 5.0, 5.0), &outer), 0.0);
        assert_eq!(
            containment_fraction(&r(0.0, 0.0, 10.0, 10.0), &r(0.0, 0.0, 5.0, 10.0)),
            0.5
        );
    }

    #[test]
    fn tightest_box_examples() {
        assert_eq!(
            tightest_box::<f64>(&[]).unwrap_err().to_string(),
            "no points"
        );
        assert_eq!(
            tightest_box(&[Point::new(2.0, 3.0)]).unwrap(),
            r(2.0, 3.0, 1.0, 1.0)
        );
        assert_eq!(
            tightest_box(&[Point::new(0.0, 0.0), Point::new(10.0, 4.0)]).unwrap(),
            r(0.0, 0.0, 10.0, 4.0)
        );
        assert_eq!(
            tightest_box(&[
                Point::new(0.0, 0.0),
                Point::new(5.0, 5.0),
                Point::new(10.0, 4.0)
            ])
            .unwrap(),
            r(0.0, 0.0, 10.0, 5.0)
        );
        // collinear: only the flat axis is widened
        assert_eq!(
            tightest_box(&[Point::new(0.0, 0.0), Point::new(0.0, 5.0)]).unwrap(),
            r(0.0, 0.0, 1.0, 5.0)
        );
    }

    #[test]
    fn pad_box_examples() {
        let b = r(0.0, 0.0, 195.0, 195.0);
        assert_eq!(pad_box(&b, 227.0, 0.0).unwrap(), b);
        let p = pad_box(&b, CROP_SIDE, CROP_BUFFER).unwrap();
        assert!((p.x() + 16.0).abs() < 1e-12);
        assert!((p.y() + 16.0).abs() < 1e-12);
        assert!((p.w() - 227.0).abs() < 1e-12);
        assert!((p.h() - 227.0).abs() < 1e-12);
        let sq = pad_box(&r(3.0, 7.0, 40.0, 40.0), CROP_SIDE, CROP_BUFFER).unwrap();
        assert_eq!(sq.w(), sq.h());
        assert!(pad_box(&b, 32.0, 16.0).is_err());
        assert!(pad_box(&b, 227.0, -1.0).is_err());
    }

    #[test]
    fn padded_box_maps_original_to_central_region() {
        let b = r(40.0, 10.0, 80.0, 120.0);
        let padded = pad_box(&b, CROP_SIDE, CROP_BUFFER).unwrap();
        let tl = to_crop(&Point::new(b.x(), b.y()), &padded, CROP_SIDE);
        let br = to_crop(&Point::new(b.right(), b.bottom()), &padded, CROP_SIDE);
        assert!((tl.x - 16.0).abs() < 1e-9 && (tl.y - 16.0).abs() < 1e-9);
        assert!((br.x - 211.0).abs() < 1e-9 && (br.y - 211.0).abs() < 1e-9);
        let back = unpad_box(&padded, CROP_SIDE, CROP_BUFFER).unwrap();
        assert!((back.x() - b.x()).abs() < 1e-9 && (back.h() - b.h()).abs() < 1e-9);
        let p = from_crop(&tl, &padded, CROP_SIDE);
        assert!((p.x - 40.0).abs() < 1e-9 && (p.y - 10.0).abs() < 1e-9);
    }

    #[test]
    fn normalization_examples() {
        let b = r(5.0, 1.0, 4.0, 8.0);
        assert_eq!(
            to_normalized(&Point::new(5.0, 1.0), &b),
            NormalizedPoint::new(0.0, 0.0)
        );
        assert_eq!(
            to_normalized(&b.center(), &b),
            NormalizedPoint::new(0.5, 0.5)
        );
        assert_eq!(
            to_normalized(&Point::new(7.0, 3.0), &b),
            NormalizedPoint::new(0.5, 0.25)
        );
    }

    #[test]
    fn works_in_single_precision() {
        let a = Rect::<f32>::new(0.0, 0.0, 10.0, 10.0).unwrap();
        let b = Rect::<f32>::new(5.0, 0.0, 10.0, 10.0).unwrap();
        assert!((iou(&a, &b) - 1.0 / 3.0).abs() < 1e-6);
    }

    fn arb_rect() -> impl Strategy<Value = Rect<f64>> {
        (
            -500.0..500.0f64,
            -500.0..500.0f64,
            0.5..300.0f64,
            0.5..300.0f64,
        )
            .prop_map(|(x, y, w, h)| Rect::new(x, y, w, h).unwrap())
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in arb_rect(), b in arb_rect()) {
            let ab = iou(&a, &b);
            prop_assert_eq!(ab, iou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(iou(&a, &a), 1.0);
        }

        #[test]
        fn containment_weighted_by_area_is_intersection(a in arb_rect(), b in arb_rect()) {
            let lhs = containment_fraction(&a, &b) * a.area();
            let rhs = containment_fraction(&b, &a) * b.area();
            prop_assert!((lhs - rhs).abs() <= 1e-9 * a.area().max(b.area()));
        }

        #[test]
        fn normalization_round_trip(
            b in (-500.0..500.0f64, -500.0..500.0f64, 1.0..300.0f64, 1.0..300.0f64),
            px in -1000.0..1000.0f64,
            py in -1000.0..1000.0f64,
        ) {
            let b = Rect::new(b.0, b.1, b.2, b.3).unwrap();
            let p = Point::new(px, py);
            let q = to_image(&to_normalized(&p, &b), &b);
            let scale = 1.0 + px.abs().max(py.abs()) + b.x().abs().max(b.y().abs());
            prop_assert!((q.x - p.x).abs() <= 1e-9 * scale);
            prop_assert!((q.y - p.y).abs() <= 1e-9 * scale);
        }

        #[test]
        fn tightest_box_contains_inputs(pts in prop::collection::vec((-100.0..100.0f64, -100.0..100.0f64), 1..20)) {
            let pts: Vec<_> = pts.into_iter().map(|(x, y)| Point::new(x, y)).collect();
            let b = tightest_box(&pts).unwrap();
            for p in &pts {
                prop_assert!(b.contains(p));
            }
        }
    }
}
