//! Brute-force references for NMS and GT matching, in exact integer
//! arithmetic on a dyadic grid so float and rational IoU agree.

use rand::Rng;
use vislab::geometry::{match_gt, nms, BBox};
use vislab::rng;

pub const GRID: i64 = 16;
/// Thresholds as (numerator, denominator).
pub const THRESHOLDS: [(i64, i64); 5] = [(3, 10), (2, 5), (1, 2), (7, 10), (0, 1)];

#[derive(Clone, Copy, Debug)]
pub struct GridBox {
    pub x1: i64,
    pub y1: i64,
    pub x2: i64,
    pub y2: i64,
}

impl GridBox {
    pub fn to_bbox(self) -> BBox {
        let g = GRID as f64;
        BBox::new(self.x1 as f64 / g, self.y1 as f64 / g, self.x2 as f64 / g, self.y2 as f64 / g)
    }

    fn area(self) -> i64 {
        (self.x2 - self.x1) * (self.y2 - self.y1)
    }
}

/// IoU as an exact fraction (intersection, union); union 0 means IoU 0.
fn iou_frac(a: GridBox, b: GridBox) -> (i64, i64) {
    let w = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0);
    let h = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0);
    let inter = w * h;
    let union = a.area() + b.area() - inter;
    if union == 0 {
        (0, 1)
    } else {
        (inter, union)
    }
}

fn above(a: GridBox, b: GridBox, (num, den): (i64, i64)) -> bool {
    let (i, u) = iou_frac(a, b);
    i * den > num * u
}

fn at_least(a: GridBox, b: GridBox, (num, den): (i64, i64)) -> bool {
    let (i, u) = iou_frac(a, b);
    i * den >= num * u
}

/// `j` outranks `i`: higher score, or equal score and lower index.
fn outranks(scores: &[i64], j: usize, i: usize) -> bool {
    scores[j] > scores[i] || (scores[j] == scores[i] && j < i)
}

/// Every subset that is its own suppression fixed point: a box is kept iff
/// no kept box outranking it overlaps it above the threshold. Greedy NMS is
/// the unique such set.
pub fn nms_fixed_points(boxes: &[GridBox], scores: &[i64], t: (i64, i64)) -> Vec<Vec<usize>> {
    let n = boxes.len();
    let mut found = Vec::new();
    for mask in 0u32..(1 << n) {
        let kept = |i: usize| mask & (1 << i) != 0;
        let consistent = (0..n).all(|i| {
            let free = (0..n).all(|j| !(kept(j) && outranks(scores, j, i) && above(boxes[i], boxes[j], t)));
            kept(i) == free
        });
        if consistent {
            let mut set: Vec<usize> = (0..n).filter(|&i| kept(i)).collect();
            // rank order: count of members that outrank each one
            set.sort_by_key(|&i| (0..n).filter(|&j| outranks(scores, j, i)).count());
            found.push(set);
        }
    }
    found
}

pub fn match_reference(props: &[GridBox], gt: &[GridBox], t: (i64, i64)) -> Vec<bool> {
    props.iter().map(|&p| gt.iter().any(|&g| at_least(p, g, t))).collect()
}

fn random_box<R: Rng>(r: &mut R) -> GridBox {
    let (x1, y1) = (r.random_range(0..GRID), r.random_range(0..GRID));
    // occasional degenerate boxes
    let (x2, y2) = if r.random_bool(0.05) {
        (x1, r.random_range(y1..=GRID))
    } else {
        (r.random_range(x1 + 1..=GRID), r.random_range(y1 + 1..=GRID))
    };
    GridBox { x1, y1, x2, y2 }
}

#[derive(Debug, Default)]
pub struct OracleReport {
    pub instances: usize,
    pub nms_mismatches: usize,
    pub match_mismatches: usize,
    /// Instances where the reference did not find exactly one fixed point.
    pub non_unique: usize,
}

/// Random instances of 1..=10 boxes, some duplicated, with tied scores.
pub fn run(instances: usize, seed: u64) -> OracleReport {
    let mut r = rng::stream(seed, "geometry-oracle", 0);
    let mut rep = OracleReport {
        instances,
        ..OracleReport::default()
    };
    for _ in 0..instances {
        let n = r.random_range(1..=10);
        let mut boxes: Vec<GridBox> = Vec::with_capacity(n);
        for _ in 0..n {
            if !boxes.is_empty() && r.random_bool(0.1) {
                let copy = boxes[r.random_range(0..boxes.len())];
                boxes.push(copy);
            } else {
                boxes.push(random_box(&mut r));
            }
        }
        let scores: Vec<i64> = (0..n).map(|_| r.random_range(0..6)).collect();
        let t = THRESHOLDS[r.random_range(0..THRESHOLDS.len())];
        let theta = t.0 as f64 / t.1 as f64;
        let fboxes: Vec<BBox> = boxes.iter().map(|b| b.to_bbox()).collect();
        let fscores: Vec<f64> = scores.iter().map(|&s| s as f64 / 5.0).collect();

        let reference = nms_fixed_points(&boxes, &scores, t);
        if reference.len() != 1 {
            rep.non_unique += 1;
        }
        if reference.first() != Some(&nms(&fboxes, &fscores, theta).unwrap()) {
            rep.nms_mismatches += 1;
        }

        let m = r.random_range(0..=4);
        let gt: Vec<GridBox> = (0..m).map(|_| random_box(&mut r)).collect();
        let fgt: Vec<BBox> = gt.iter().map(|b| b.to_bbox()).collect();
        if match_reference(&boxes, &gt, t) != match_gt(&fboxes, &fgt, theta) {
            rep.match_mismatches += 1;
        }
    }
    rep
}
