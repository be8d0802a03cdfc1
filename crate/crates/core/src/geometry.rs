//! Axis-aligned boxes in continuous pixel coordinates.
//!
//! Boxes are stored top-left `xywh`, the same layout as a COCO `bbox`.

use serde::{Deserialize, Serialize};

/// Area thresholds separating small / medium / large objects (pixels²).
pub const SMALL_AREA_MAX: f64 = 32.0 * 32.0;
pub const MEDIUM_AREA_MAX: f64 = 96.0 * 96.0;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl From<[f64; 4]> for BBox {
    fn from([x, y, w, h]: [f64; 4]) -> Self {
        BBox { x, y, w, h }
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

impl BBox {
    pub const fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        BBox { x, y, w, h }
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        BBox {
            x: cx - w / 2.0,
            y: cy - h / 2.0,
            w,
            h,
        }
    }

    /// True when all fields are finite and the extent is non-negative.
    pub fn is_valid(&self) -> bool {
        self.x.is_finite()
            && self.y.is_finite()
            && self.w.is_finite()
            && self.h.is_finite()
            && self.w >= 0.0
            && self.h >= 0.0
    }

    #[inline]
    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    #[inline]
    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    #[inline]
    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        BBox {
            x: self.x + dx,
            y: self.y + dy,
            ..*self
        }
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let iw = self.right().min(other.right()) - self.x.max(other.x);
        let ih = self.bottom().min(other.bottom()) - self.y.max(other.y);
        if iw <= 0.0 || ih <= 0.0 {
            0.0
        } else {
            iw * ih
        }
    }

    /// Clip to `[0, width] x [0, height]`. Returns `None` if less than
    /// `min_area` survives.
    pub fn clip_to(&self, width: f64, height: f64, min_area: f64) -> Option<BBox> {
        let x0 = self.x.max(0.0);
        let y0 = self.y.max(0.0);
        let x1 = self.right().min(width);
        let y1 = self.bottom().min(height);
        if x1 <= x0 || y1 <= y0 {
            return None;
        }
        let clipped = BBox::new(x0, y0, x1 - x0, y1 - y0);
        (clipped.area() >= min_area).then_some(clipped)
    }
}

/// Intersection over union. Zero when the union is empty.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// `current.len() x previous.len()` matrix of pairwise IoU values, row-major.
pub fn iou_matrix(current: &[BBox], previous: &[BBox]) -> Vec<Vec<f64>> {
    current
        .iter()
        .map(|c| previous.iter().map(|p| iou(c, p)).collect())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AreaBucket {
    Small,
    Medium,
    Large,
}

impl AreaBucket {
    pub const ALL: [AreaBucket; 3] = [AreaBucket::Small, AreaBucket::Medium, AreaBucket::Large];
}

/// Half-open COCO size buckets: `[0, 32²)`, `[32², 96²)`, `[96², ∞)`.
pub fn area_bucket(b: &BBox) -> AreaBucket {
    let a = b.area();
    if a < SMALL_AREA_MAX {
        AreaBucket::Small
    } else if a < MEDIUM_AREA_MAX {
        AreaBucket::Medium
    } else {
        AreaBucket::Large
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn iou_examples() {
        let a = BBox::new(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &BBox::new(100.0, 100.0, 5.0, 5.0)), 0.0);
        // intersection 50, union 150
        assert_abs_diff_eq!(
            iou(&a, &BBox::new(5.0, 0.0, 10.0, 10.0)),
            1.0 / 3.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn degenerate_boxes_have_zero_iou() {
        let p = BBox::new(3.0, 3.0, 0.0, 0.0);
        assert_eq!(iou(&p, &p), 0.0);
        let line = BBox::new(0.0, 0.0, 10.0, 0.0);
        assert_eq!(iou(&line, &BBox::new(0.0, 0.0, 10.0, 10.0)), 0.0);
    }

    #[test]
    fn touching_edges_do_not_intersect() {
        let a = BBox::new(0.0, 0.0, 10.0, 10.0);
        let b = BBox::new(10.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &b), 0.0);
    }

    #[test]
    fn matrix_shapes() {
        let unit = BBox::new(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou_matrix(&[unit], &[unit]), vec![vec![1.0]]);

        let m = iou_matrix(&[], &[BBox::new(0.0, 0.0, 1.0, 1.0)]);
        assert!(m.is_empty());

        let m = iou_matrix(
            &[unit, BBox::new(10.0, 0.0, 10.0, 10.0)],
            &[BBox::new(5.0, 0.0, 10.0, 10.0)],
        );
        assert_eq!(m.len(), 2);
        assert_abs_diff_eq!(m[0][0], 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m[1][0], 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn buckets() {
        assert_eq!(
            area_bucket(&BBox::new(0.0, 0.0, 10.0, 10.0)),
            AreaBucket::Small
        );
        assert_eq!(
            area_bucket(&BBox::new(0.0, 0.0, 32.0, 32.0)),
            AreaBucket::Medium
        );
        assert_eq!(
            area_bucket(&BBox::new(0.0, 0.0, 96.0, 96.0)),
            AreaBucket::Large
        );
        assert_eq!(
            area_bucket(&BBox::new(0.0, 0.0, 100.0, 100.0)),
            AreaBucket::Large
        );
    }

    #[test]
    fn clip_drops_slivers() {
        let b = BBox::new(-5.0, -5.0, 10.0, 10.0);
        assert_eq!(
            b.clip_to(100.0, 100.0, 1.0),
            Some(BBox::new(0.0, 0.0, 5.0, 5.0))
        );
        let outside = BBox::new(200.0, 0.0, 10.0, 10.0);
        assert_eq!(outside.clip_to(100.0, 100.0, 1.0), None);
        let sliver = BBox::new(99.5, 0.0, 10.0, 1.0);
        assert_eq!(sliver.clip_to(100.0, 100.0, 1.0), None);
    }

    #[test]
    fn serde_as_coco_array() {
        let b = BBox::new(1.0, 2.0, 3.0, 4.0);
        assert_eq!(serde_json::to_string(&b).unwrap(), "[1.0,2.0,3.0,4.0]");
        let back: BBox = serde_json::from_str("[1,2,3,4]").unwrap();
        assert_eq!(back, b);
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (
            -500.0..500.0f64,
            -500.0..500.0f64,
            0.0..200.0f64,
            0.0..200.0f64,
        )
            .prop_map(|(x, y, w, h)| BBox::new(x, y, w, h))
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let ab = iou(&a, &b);
            prop_assert_eq!(ab, iou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
        }

        #[test]
        fn self_iou_is_one(a in arb_box()) {
            prop_assume!(a.area() > 0.0);
            prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
        }

        #[test]
        fn translation_invariant(a in arb_box(), b in arb_box(), dx in -100.0..100.0f64, dy in -100.0..100.0f64) {
            let moved = iou(&a.translate(dx, dy), &b.translate(dx, dy));
            prop_assert!((moved - iou(&a, &b)).abs() < 1e-9);
        }

        #[test]
        fn scale_invariant(a in arb_box(), b in arb_box(), s in 0.1..10.0f64) {
            let scale = |r: &BBox| BBox::new(r.x * s, r.y * s, r.w * s, r.h * s);
            prop_assert!((iou(&scale(&a), &scale(&b)) - iou(&a, &b)).abs() < 1e-12);
        }
    }
}
