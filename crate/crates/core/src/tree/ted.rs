//! Ordered tree edit distance (Zhang–Shasha keyroot dynamic program) with
//! unit costs for relabel, insert and delete.

use super::{ConstTree, Node, Template};

/// Anything that can be viewed as an ordered labelled tree. Tokens of a
/// [`ConstTree`] become leaf nodes labelled by the token.
pub trait ToLabelTree {
    fn to_label_tree(&self) -> Template;
}

impl ToLabelTree for Template {
    fn to_label_tree(&self) -> Template {
        self.clone()
    }
}

impl ToLabelTree for ConstTree {
    fn to_label_tree(&self) -> Template {
        fn conv(n: &Node) -> Template {
            match n {
                Node::Leaf(t) => Template::new(t.clone(), vec![]),
                Node::Internal { label, children } => {
                    Template::new(label.clone(), children.iter().map(conv).collect())
                }
            }
        }
        conv(self.root())
    }
}

struct Postorder<'a> {
    labels: Vec<&'a str>,
    // leftmost leaf descendant, postorder index
    lmld: Vec<usize>,
    keyroots: Vec<usize>,
}

impl<'a> Postorder<'a> {
    fn new(root: &'a Template) -> Self {
        fn walk<'a>(t: &'a Template, labels: &mut Vec<&'a str>, lmld: &mut Vec<usize>) -> usize {
            let mut first = None;
            for c in &t.children {
                let l = walk(c, labels, lmld);
                first.get_or_insert(l);
            }
            let idx = labels.len();
            labels.push(&t.label);
            let leftmost = first.unwrap_or(idx);
            lmld.push(leftmost);
            leftmost
        }
        let mut labels = Vec::new();
        let mut lmld = Vec::new();
        walk(root, &mut labels, &mut lmld);
        // keyroots: for each distinct leftmost leaf, the highest node having it
        let n = labels.len();
        let mut seen = vec![false; n];
        let mut keyroots = Vec::new();
        for i in (0..n).rev() {
            if !seen[lmld[i]] {
                seen[lmld[i]] = true;
                keyroots.push(i);
            }
        }
        keyroots.sort_unstable();
        Postorder {
            labels,
            lmld,
            keyroots,
        }
    }
}

/// Minimum number of unit-cost node edits turning `a` into `b`.
pub fn tree_edit_distance<A: ToLabelTree + ?Sized, B: ToLabelTree + ?Sized>(a: &A, b: &B) -> usize {
    let ta = a.to_label_tree();
    let tb = b.to_label_tree();
    let pa = Postorder::new(&ta);
    let pb = Postorder::new(&tb);
    let (n, m) = (pa.labels.len(), pb.labels.len());
    let mut treedist = vec![vec![0usize; m]; n];
    let mut fd = vec![vec![0usize; m + 1]; n + 1];

    for &i in &pa.keyroots {
        for &j in &pb.keyroots {
            let li = pa.lmld[i];
            let lj = pb.lmld[j];
            // forest distance over a[li..=i] x b[lj..=j]; row/col 0 is the empty forest
            fd[0][0] = 0;
            for x in 1..=(i - li + 1) {
                fd[x][0] = fd[x - 1][0] + 1;
            }
            for y in 1..=(j - lj + 1) {
                fd[0][y] = fd[0][y - 1] + 1;
            }
            for x in 1..=(i - li + 1) {
                let ia = li + x - 1;
                for y in 1..=(j - lj + 1) {
                    let jb = lj + y - 1;
                    let del = fd[x - 1][y] + 1;
                    let ins = fd[x][y - 1] + 1;
                    if pa.lmld[ia] == li && pb.lmld[jb] == lj {
                        let relabel = usize::from(pa.labels[ia] != pb.labels[jb]);
                        let v = del.min(ins).min(fd[x - 1][y - 1] + relabel);
                        fd[x][y] = v;
                        treedist[ia][jb] = v;
                    } else {
                        let px = pa.lmld[ia] - li;
                        let py = pb.lmld[jb] - lj;
                        fd[x][y] = del.min(ins).min(fd[px][py] + treedist[ia][jb]);
                    }
                }
            }
        }
    }
    treedist[n - 1][m - 1]
}
