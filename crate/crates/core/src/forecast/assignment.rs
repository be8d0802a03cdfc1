//! IoU-gated one-to-one association via the Hungarian method.

use serde::{Deserialize, Serialize};

use crate::datamodel::{CategoryId, Detection};
use crate::geometry::{iou, BBox};

use super::kalman::TrackState;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Association {
    /// `(left index, right index)`, sorted by left index.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_left: Vec<usize>,
    pub unmatched_right: Vec<usize>,
}

/// Maximum-weight assignment on a rectangular non-negative weight matrix.
/// Returns, for every row, the column it is assigned to (or `None` when
/// there are more rows than columns).
///
/// Shortest augmenting path with potentials, O(n³) on the padded square.
/// Ties resolve toward the lowest column index, so the result is a pure
/// function of the matrix.
pub fn max_weight_assignment(weights: &[Vec<f64>]) -> Vec<Option<usize>> {
    let rows = weights.len();
    let cols = weights.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return vec![None; rows];
    }
    let n = rows.max(cols);
    // Minimize cost = -weight, padding with zeros. 1-based with a sentinel
    // column 0.
    let cost = |i: usize, j: usize| -> f64 {
        if i <= rows && j <= cols {
            -weights[i - 1][j - 1]
        } else {
            0.0
        }
    };
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut min_v = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0, j) - u[i0] - v[j];
                if cur < min_v[j] {
                    min_v[j] = cur;
                    way[j] = j0;
                }
                if min_v[j] < delta {
                    delta = min_v[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_v[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut row_to_col = vec![None; rows];
    for (j, &i) in owner.iter().enumerate().skip(1) {
        if i >= 1 && i <= rows && j <= cols {
            row_to_col[i - 1] = Some(j - 1);
        }
    }
    row_to_col
}

/// Gated, category-aware association between two box lists. Only pairs of
/// the same category with IoU ≥ `gate` may match; among those the total IoU
/// is maximized.
pub fn associate_boxes(
    left: &[(BBox, CategoryId)],
    right: &[(BBox, CategoryId)],
    gate: f64,
) -> Association {
    let weights: Vec<Vec<f64>> = left
        .iter()
        .map(|(lb, lc)| {
            right
                .iter()
                .map(|(rb, rc)| {
                    if lc != rc {
                        return 0.0;
                    }
                    let v = iou(lb, rb);
                    if v >= gate {
                        v
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();

    let assignment = max_weight_assignment(&weights);
    let mut out = Association::default();
    let mut right_used = vec![false; right.len()];
    for (i, col) in assignment.into_iter().enumerate() {
        match col {
            Some(j) if weights[i][j] > 0.0 => {
                out.pairs.push((i, j));
                right_used[j] = true;
            }
            _ => out.unmatched_left.push(i),
        }
    }
    out.unmatched_right = (0..right.len()).filter(|&j| !right_used[j]).collect();
    out
}

/// Matches tracks (at their current predicted boxes) to detections.
pub fn associate(tracks: &[TrackState], detections: &[Detection], gate: f64) -> Association {
    let left: Vec<_> = tracks.iter().map(|t| (t.bbox(), t.category_id)).collect();
    let right: Vec<_> = detections.iter().map(|d| (d.bbox, d.category_id)).collect();
    associate_boxes(&left, &right, gate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Exhaustive search over all injective row → column maps.
    fn brute_force(weights: &[Vec<f64>]) -> f64 {
        fn go(weights: &[Vec<f64>], row: usize, used: &mut Vec<bool>) -> f64 {
            if row == weights.len() {
                return 0.0;
            }
            // leaving this row unassigned
            let mut best = go(weights, row + 1, used);
            for j in 0..used.len() {
                if !used[j] {
                    used[j] = true;
                    best = best.max(weights[row][j] + go(weights, row + 1, used));
                    used[j] = false;
                }
            }
            best
        }
        let cols = weights.first().map_or(0, Vec::len);
        go(weights, 0, &mut vec![false; cols])
    }

    fn total(weights: &[Vec<f64>], a: &[Option<usize>]) -> f64 {
        a.iter()
            .enumerate()
            .filter_map(|(i, c)| c.map(|j| weights[i][j]))
            .sum()
    }

    #[test]
    fn prefers_global_optimum() {
        let w = vec![vec![0.6, 0.5], vec![0.5, 0.1]];
        assert_eq!(max_weight_assignment(&w), vec![Some(1), Some(0)]);
    }

    #[test]
    fn gate_and_category() {
        let a = BBox::new(0.0, 0.0, 10.0, 10.0);
        // IoU 0.9
        let close = BBox::new(0.0, 0.0, 10.0, 9.0);
        // IoU 0.1
        let far = BBox::new(0.0, 0.0, 10.0, 1.0);
        let r = associate_boxes(&[(a, 1)], &[(close, 1)], 0.3);
        assert_eq!(r.pairs, vec![(0, 0)]);
        let r = associate_boxes(&[(a, 1)], &[(far, 1)], 0.3);
        assert!(r.pairs.is_empty());
        assert_eq!(
            (r.unmatched_left.as_slice(), r.unmatched_right.as_slice()),
            (&[0][..], &[0][..])
        );
        let r = associate_boxes(&[(a, 1)], &[(close, 2)], 0.3);
        assert!(r.pairs.is_empty());
    }

    #[test]
    fn rectangular_and_empty() {
        assert_eq!(max_weight_assignment(&[]), Vec::<Option<usize>>::new());
        assert_eq!(max_weight_assignment(&[vec![], vec![]]), vec![None, None]);
        let w = vec![vec![0.2], vec![0.9], vec![0.4]];
        assert_eq!(max_weight_assignment(&w), vec![None, Some(0), None]);
        let w = vec![vec![0.2, 0.7, 0.1]];
        assert_eq!(max_weight_assignment(&w), vec![Some(1)]);
    }

    proptest! {
        #[test]
        fn matches_brute_force(rows in 0usize..=6, cols in 0usize..=6, seed in prop::collection::vec(0.0..1.0f64, 36)) {
            let w: Vec<Vec<f64>> = (0..rows).map(|i| (0..cols).map(|j| seed[i * 6 + j]).collect()).collect();
            let a = max_weight_assignment(&w);
            let mut seen = std::collections::BTreeSet::new();
            for j in a.iter().flatten() {
                prop_assert!(seen.insert(*j));
            }
            prop_assert!((total(&w, &a) - brute_force(&w)).abs() < 1e-12);
        }
    }
}
