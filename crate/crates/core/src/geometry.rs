//! Axis-aligned boxes in normalized `[0, 1]` image coordinates.

use crate::error::{LabError, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    /// Builds a box, clamping every corner to `[0, 1]` and ordering corners.
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        let c = |v: f64| v.clamp(0.0, 1.0);
        let (x1, x2) = (c(x1.min(x2)), c(x1.max(x2)));
        let (y1, y2) = (c(y1.min(y2)), c(y1.max(y2)));
        BBox { x1, y1, x2, y2 }
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))
    }

    pub fn coords(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn intersection(&self, other: &BBox) -> f64 {
        let w = (self.x2.min(other.x2) - self.x1.max(other.x1)).max(0.0);
        let h = (self.y2.min(other.y2) - self.y1.max(other.y1)).max(0.0);
        w * h
    }

    pub fn is_valid(&self) -> bool {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        unit(self.x1)
            && unit(self.y1)
            && unit(self.x2)
            && unit(self.y2)
            && self.x1 <= self.x2
            && self.y1 <= self.y2
    }
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Indices sorted by descending score, ties by ascending index.
pub fn rank_by_score(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

/// Greedy non-maximum suppression. A box survives iff its IoU with every
/// previously kept (higher-ranked) box is at most `threshold`. The result is
/// in rank order.
pub fn nms(boxes: &[BBox], scores: &[f64], threshold: f64) -> Result<Vec<usize>> {
    if boxes.len() != scores.len() {
        return Err(LabError::dim("nms", &[boxes.len()], &[scores.len()]));
    }
    let mut kept: Vec<usize> = Vec::new();
    for i in rank_by_score(scores) {
        if kept.iter().all(|&k| iou(&boxes[i], &boxes[k]) <= threshold) {
            kept.push(i);
        }
    }
    Ok(kept)
}

/// `true` for each proposal whose best IoU against `gt` reaches `threshold`.
pub fn match_gt(proposals: &[BBox], gt: &[BBox], threshold: f64) -> Vec<bool> {
    proposals
        .iter()
        .map(|p| gt.iter().any(|g| iou(p, g) >= threshold))
        .collect()
}

/// Translates the box by `δx ~ U[−w/2, w/2]`, `δy ~ U[−h/2, h/2]` and clamps
/// the result to the unit square.
pub fn perturb_box<R: Rng + ?Sized>(b: &BBox, rng: &mut R) -> BBox {
    let (w, h) = (b.width(), b.height());
    let dx = if w > 0.0 { rng.random_range(-0.5 * w..=0.5 * w) } else { 0.0 };
    let dy = if h > 0.0 { rng.random_range(-0.5 * h..=0.5 * h) } else { 0.0 };
    BBox::new(b.x1 + dx, b.y1 + dy, b.x2 + dx, b.y2 + dy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;

    #[test]
    fn iou_examples() {
        let a = BBox::new(0.0, 0.0, 0.2, 0.2);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &BBox::new(0.5, 0.5, 0.7, 0.9)), 0.0);
        // inter = 0.1·0.2 = 0.02, union = 0.04 + 0.04 − 0.02 = 0.06
        let b = BBox::new(0.1, 0.0, 0.3, 0.2);
        assert!((iou(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
        let degenerate = BBox::new(0.3, 0.3, 0.3, 0.3);
        assert_eq!(iou(&degenerate, &degenerate), 0.0);
    }

    #[test]
    fn nms_examples() {
        let a = BBox::new(0.1, 0.1, 0.5, 0.5);
        assert_eq!(nms(&[a], &[0.3], 0.5).unwrap(), vec![0]);
        // same height, shifted so that IoU = 0.8: inter w = 0.4−s, union w = 0.4+s
        let s = 0.4 / 9.0;
        let b = BBox::new(0.1 + s, 0.1, 0.5 + s, 0.5);
        assert!((iou(&a, &b) - 0.8).abs() < 1e-12);
        assert_eq!(nms(&[a, b], &[0.9, 0.7], 0.5).unwrap(), vec![0]);
        assert_eq!(nms(&[a, a], &[0.5, 0.5], 0.5).unwrap(), vec![0]);
        assert!(matches!(nms(&[a], &[0.1, 0.2], 0.5), Err(LabError::Dimension { .. })));
    }

    #[test]
    fn match_gt_examples() {
        let g = BBox::new(0.2, 0.2, 0.4, 0.4);
        assert_eq!(match_gt(&[g], &[g], 0.5), vec![true]);
        assert_eq!(match_gt(&[g], &[], 0.5), vec![false]);
        // height equal, width shifted so that IoU = 0.49: (w−s)/(w+s) = 0.49
        let w = 0.2;
        let s = w * (1.0 - 0.49) / 1.49;
        let p = BBox::new(0.2 + s, 0.2, 0.4 + s, 0.4);
        assert!((iou(&p, &g) - 0.49).abs() < 1e-12);
        assert_eq!(match_gt(&[p], &[g], 0.5), vec![false]);
    }

    #[test]
    fn perturb_examples() {
        let d = BBox::new(0.4, 0.4, 0.4, 0.4);
        let mut r = rng::stream(1, "perturb", 0);
        assert_eq!(perturb_box(&d, &mut r), d);
        let b = BBox::new(0.3, 0.3, 0.5, 0.6);
        let p1 = perturb_box(&b, &mut rng::stream(9, "perturb", 2));
        let p2 = perturb_box(&b, &mut rng::stream(9, "perturb", 2));
        assert_eq!(p1, p2);
    }

    #[test]
    fn perturb_offsets_bounded_over_many_draws() {
        let b = BBox::new(0.35, 0.4, 0.55, 0.5);
        let (w, h) = (b.width(), b.height());
        let mut r = rng::stream(3, "perturb-mc", 0);
        for _ in 0..100_000 {
            let p = perturb_box(&b, &mut r);
            // no clamping can occur for this box, so offsets are exact
            let (dx, dy) = (p.x1 - b.x1, p.y1 - b.y1);
            assert!(dx.abs() <= 0.5 * w + 1e-12 && dy.abs() <= 0.5 * h + 1e-12);
        }
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (0.0..1.0f64, 0.0..1.0f64, 0.0..1.0f64, 0.0..1.0f64)
            .prop_map(|(a, b, c, d)| BBox::new(a, b, c, d))
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let x = iou(&a, &b);
            prop_assert!((0.0..=1.0).contains(&x));
            prop_assert_eq!(x, iou(&b, &a));
        }

        #[test]
        fn iou_one_only_for_equal(a in arb_box(), b in arb_box()) {
            prop_assume!(a.area() > 1e-6 && b.area() > 1e-6);
            prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
            if a != b {
                prop_assert!(iou(&a, &b) < 1.0 - 1e-12 || a.max_corner_gap(&b) < 1e-9);
            }
        }

        #[test]
        fn match_gt_monotone(ps in prop::collection::vec(arb_box(), 1..8),
                             gs in prop::collection::vec(arb_box(), 0..5),
                             t1 in 0.01..1.0f64, t2 in 0.01..1.0f64) {
            let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
            let at_lo = match_gt(&ps, &gs, lo);
            let at_hi = match_gt(&ps, &gs, hi);
            for (l, h) in at_lo.iter().zip(&at_hi) {
                prop_assert!(!(*h && !*l));
            }
        }

        #[test]
        fn perturb_preserves_area_without_clamping(b in arb_box(), seed in any::<u64>()) {
            let p = perturb_box(&b, &mut rng::stream(seed, "perturb", 0));
            prop_assert!(p.is_valid());
            let shifted_inside = b.x1 - 0.5 * b.width() >= 0.0 && b.x2 + 0.5 * b.width() <= 1.0
                && b.y1 - 0.5 * b.height() >= 0.0 && b.y2 + 0.5 * b.height() <= 1.0;
            if shifted_inside {
                prop_assert!((p.area() - b.area()).abs() < 1e-12);
            }
        }
    }

    impl BBox {
        fn max_corner_gap(&self, o: &BBox) -> f64 {
            self.coords()
                .iter()
                .zip(o.coords())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        }
    }
}
