use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{ConstTree, TreeError, ROOT_LABEL};

/// Raw bracket counts, summable across a corpus for micro-averaging.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanCounts {
    pub matched: usize,
    pub predicted: usize,
    pub gold: usize,
}

/// Precision, recall and F1 in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpanScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl SpanCounts {
    pub fn add(&mut self, other: SpanCounts) {
        self.matched += other.matched;
        self.predicted += other.predicted;
        self.gold += other.gold;
    }

    pub fn scores(&self) -> SpanScores {
        if self.predicted == 0 && self.gold == 0 {
            return SpanScores {
                precision: 100.0,
                recall: 100.0,
                f1: 100.0,
            };
        }
        let ratio = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
        let p = ratio(self.matched, self.predicted);
        let r = ratio(self.matched, self.gold);
        let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        SpanScores {
            precision: 100.0 * p,
            recall: 100.0 * r,
            f1: 100.0 * f,
        }
    }
}

fn bracket_bag(tree: &ConstTree) -> HashMap<(usize, usize, String), usize> {
    let mut bag = HashMap::new();
    for (i, s) in tree.labeled_spans().into_iter().enumerate() {
        if i == 0 && s.label == ROOT_LABEL {
            continue;
        }
        *bag.entry((s.start, s.end, s.label)).or_insert(0) += 1;
    }
    bag
}

/// Labeled-bracket counts; depth is ignored and the `<T>` root is skipped.
pub fn span_prf_counts(pred: &ConstTree, gold: &ConstTree) -> Result<SpanCounts, TreeError> {
    let (py, gy) = (pred.yield_refs(), gold.yield_refs());
    if py.len() != gy.len() {
        return Err(TreeError::YieldMismatch(py.len(), gy.len()));
    }
    if let Some(i) = py.iter().zip(&gy).position(|(a, b)| a != b) {
        return Err(TreeError::YieldDiffers(i));
    }
    let pb = bracket_bag(pred);
    let gb = bracket_bag(gold);
    let matched = pb
        .iter()
        .map(|(k, &n)| n.min(gb.get(k).copied().unwrap_or(0)))
        .sum();
    Ok(SpanCounts {
        matched,
        predicted: pb.values().sum(),
        gold: gb.values().sum(),
    })
}

pub fn span_prf(pred: &ConstTree, gold: &ConstTree) -> Result<SpanScores, TreeError> {
    Ok(span_prf_counts(pred, gold)?.scores())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::parse_bracketed;

    fn t(s: &str) -> ConstTree {
        parse_bracketed(s).unwrap()
    }

    #[test]
    fn identical_trees_score_100() {
        let a = t("(<T> (S (NP I) (VP ate (NP an apple)) .))");
        let s = span_prf(&a, &a).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (100.0, 100.0, 100.0));
        let flat = t("(<T> a b)");
        assert_eq!(span_prf(&flat, &flat).unwrap().f1, 100.0);
    }

    #[test]
    fn disjoint_labels_score_zero() {
        let s = span_prf(&t("(S (NP a) (VP b))"), &t("(X (Y a) (Z b))")).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn half_overlap() {
        // pred {(0,5,S),(0,1,NP)} vs gold {(0,5,S),(1,4,VP)}
        let pred = t("(<T> (S (NP a) b c d e))");
        let gold = t("(<T> (S a (VP b c d) e))");
        let c = span_prf_counts(&pred, &gold).unwrap();
        assert_eq!(c, SpanCounts { matched: 1, predicted: 2, gold: 2 });
        let s = c.scores();
        assert!((s.precision - 50.0).abs() < 1e-12);
        assert!((s.recall - 50.0).abs() < 1e-12);
        assert!((s.f1 - 50.0).abs() < 1e-12);
    }

    #[test]
    fn depth_is_ignored_and_multiset_matched() {
        let pred = t("(S (S (NP a)))");
        let gold = t("(S (NP a))");
        let c = span_prf_counts(&pred, &gold).unwrap();
        assert_eq!(c, SpanCounts { matched: 2, predicted: 3, gold: 2 });
    }

    #[test]
    fn yield_mismatch_is_an_error() {
        assert!(span_prf(&t("(S a)"), &t("(S b)")).is_err());
        assert!(span_prf(&t("(S a)"), &t("(S a b)")).is_err());
    }
}
