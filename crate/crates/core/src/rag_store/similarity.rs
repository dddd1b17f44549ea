//! Object-set and plan-sequence similarity, both in `[0, 1]`.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::meta_action::Plan;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityScores {
    pub object_similarity: f64,
    pub sequence_similarity: f64,
}

/// Jaccard index; two empty sets count as identical.
pub fn object_similarity(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

/// Levenshtein distance over whole symbols.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `1 - lev / max(len)` over canonical meta-action lines.
pub fn sequence_similarity(a: &Plan, b: &Plan) -> f64 {
    let longest = a.len().max(b.len());
    if longest == 0 {
        return 1.0;
    }
    let d = edit_distance(&a.lines(), &b.lines());
    1.0 - d as f64 / longest as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(xs: &[&str]) -> BTreeSet<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn jaccard_examples() {
        assert_eq!(object_similarity(&set(&["cup", "table"]), &set(&["cup", "table"])), 1.0);
        assert!((object_similarity(&set(&["cup", "table"]), &set(&["cup", "bin"])) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(object_similarity(&set(&["pen"]), &set(&["drawer"])), 0.0);
        assert_eq!(object_similarity(&set(&[]), &set(&[])), 1.0);
    }

    #[test]
    fn edit_distance_basics() {
        assert_eq!(edit_distance(&[1, 2, 3], &[1, 2, 3]), 0);
        assert_eq!(edit_distance(&[1, 2, 3], &[1, 3]), 1);
        assert_eq!(edit_distance::<u8>(&[], &[4, 5]), 2);
        assert_eq!(edit_distance(&[1, 2], &[2, 1]), 2);
    }

    #[test]
    fn sequence_examples() {
        let p = |lines: &str| Plan::from_text("t", lines).unwrap();
        let a = p("opened, move to, above, cup, opened\nopened, move to, on, cup, closed\n");
        let b = p("opened, move to, above, cup, opened\nopened, move to, on, mug, closed\n");
        assert_eq!(sequence_similarity(&a, &a), 1.0);
        assert_eq!(sequence_similarity(&a, &b), 0.5);
        let c = p("opened, move to, up, , opened\nopened, move to, down, , opened\nopened, move to, left of, , opened\n");
        let d = p("closed, move to, up, , closed\nclosed, move to, down, , closed\nclosed, move to, left of, , closed\n");
        assert_eq!(sequence_similarity(&c, &d), 0.0);
    }
}
