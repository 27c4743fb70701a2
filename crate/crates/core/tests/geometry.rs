mod common;

use common::geometry_oracle::{self, GridBox};

#[test]
fn nms_and_matching_equal_brute_force_on_ten_thousand_instances() {
    let rep = geometry_oracle::run(10_000, 7);
    assert_eq!(rep.non_unique, 0, "{rep:?}");
    assert_eq!(rep.nms_mismatches, 0, "{rep:?}");
    assert_eq!(rep.match_mismatches, 0, "{rep:?}");
}

#[test]
fn reference_agrees_with_hand_cases() {
    let a = GridBox { x1: 0, y1: 0, x2: 4, y2: 4 };
    let b = GridBox { x1: 0, y1: 0, x2: 4, y2: 2 }; // IoU 1/2 with a
    let c = GridBox { x1: 8, y1: 8, x2: 12, y2: 12 };
    // tie at exactly the threshold survives
    let sets = geometry_oracle::nms_fixed_points(&[a, b, c], &[3, 2, 1], (1, 2));
    assert_eq!(sets, vec![vec![0, 1, 2]]);
    let sets = geometry_oracle::nms_fixed_points(&[a, b, c], &[3, 2, 1], (2, 5));
    assert_eq!(sets, vec![vec![0, 2]]);
    // equal scores rank by index
    let sets = geometry_oracle::nms_fixed_points(&[b, a], &[1, 1], (2, 5));
    assert_eq!(sets, vec![vec![0]]);
    assert_eq!(geometry_oracle::match_reference(&[a, c], &[b], (1, 2)), vec![true, false]);
}
