//! Slow, independent reference implementations used only by tests.

use crate::tree::Template;

/// Full-table Levenshtein distance over chars.
pub fn levenshtein_table(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        d[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let cost = if a[i - 1] == b[j - 1] { 0 } else { 1 };
            d[i][j] = (d[i - 1][j] + 1).min(d[i][j - 1] + 1).min(d[i - 1][j - 1] + cost);
        }
    }
    d[a.len()][b.len()]
}

struct Flat {
    labels: Vec<String>,
    /// Preorder index one past the last descendant.
    end: Vec<usize>,
}

impl Flat {
    fn new(t: &Template) -> Flat {
        fn walk(t: &Template, f: &mut Flat) {
            let i = f.labels.len();
            f.labels.push(t.label.clone());
            f.end.push(0);
            for c in &t.children {
                walk(c, f);
            }
            f.end[i] = f.labels.len();
        }
        let mut f = Flat {
            labels: Vec::new(),
            end: Vec::new(),
        };
        walk(t, &mut f);
        f
    }

    fn ancestor(&self, i: usize, j: usize) -> bool {
        i < j && j < self.end[i]
    }

    fn left_of(&self, i: usize, j: usize) -> bool {
        i < j && !self.ancestor(i, j)
    }
}

/// Minimum edit cost over every valid mapping (one-to-one, ancestor- and
/// sibling-order-preserving) between the two trees. Exponential; meant for
/// trees of at most about six nodes.
pub fn ted_bruteforce(a: &Template, b: &Template) -> usize {
    let fa = Flat::new(a);
    let fb = Flat::new(b);
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    let mut used = vec![false; fb.labels.len()];
    let mut best = usize::MAX;

    fn compatible(fa: &Flat, fb: &Flat, pairs: &[(usize, usize)], i: usize, j: usize) -> bool {
        pairs.iter().all(|&(k, l)| {
            fa.ancestor(k, i) == fb.ancestor(l, j)
                && fa.ancestor(i, k) == fb.ancestor(j, l)
                && fa.left_of(k, i) == fb.left_of(l, j)
                && fa.left_of(i, k) == fb.left_of(j, l)
        })
    }

    fn rec(fa: &Flat, fb: &Flat, i: usize, pairs: &mut Vec<(usize, usize)>, used: &mut [bool], best: &mut usize) {
        if i == fa.labels.len() {
            let relabel = pairs.iter().filter(|&&(k, l)| fa.labels[k] != fb.labels[l]).count();
            let cost = relabel + (fa.labels.len() - pairs.len()) + (fb.labels.len() - pairs.len());
            *best = (*best).min(cost);
            return;
        }
        rec(fa, fb, i + 1, pairs, used, best);
        for j in 0..fb.labels.len() {
            if !used[j] && compatible(fa, fb, pairs, i, j) {
                used[j] = true;
                pairs.push((i, j));
                rec(fa, fb, i + 1, pairs, used, best);
                pairs.pop();
                used[j] = false;
            }
        }
    }

    rec(&fa, &fb, 0, &mut pairs, &mut used, &mut best);
    best
}

/// A three-sentence corpus whose n-gram statistics were counted by hand.
pub struct BleuFixture {
    pub hyps: Vec<Vec<String>>,
    pub refs: Vec<Vec<Vec<String>>>,
    /// Clipped matches and hypothesis n-gram totals per order 1..=4.
    pub matches: [usize; 4],
    pub totals: [usize; 4],
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl BleuFixture {
    pub fn expected_bleu(&self) -> f64 {
        let log_p: f64 = self
            .matches
            .iter()
            .zip(&self.totals)
            .map(|(&m, &t)| (m as f64 / t as f64).ln())
            .sum::<f64>()
            / 4.0;
        let bp = if self.hyp_len < self.ref_len {
            (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp()
        } else {
            1.0
        };
        100.0 * bp * log_p.exp()
    }
}

pub fn bleu_fixture() -> BleuFixture {
    let t = |s: &str| s.split_whitespace().map(str::to_string).collect::<Vec<_>>();
    BleuFixture {
        hyps: vec![t("the cat sat on the mat"), t("a dog runs fast"), t("big big big")],
        refs: vec![
            vec![t("the cat sat on a mat")],
            vec![t("a dog runs quickly"), t("the dog runs fast")],
            vec![t("the big house is big")],
        ],
        // 1-grams: 5/6 (one "the" clipped), 4/4, 2/3 ("big" clipped to 2)
        // 2-grams: 3/5, 3/3, 0/2
        // 3-grams: 2/4, 2/2, 0/1
        // 4-grams: 1/3, 0/1, 0/0
        matches: [11, 6, 4, 1],
        totals: [13, 10, 7, 4],
        hyp_len: 13,
        ref_len: 15,
    }
}
