//! Paraphrase rewrites defined as tree transformations. Each produces a tree
//! whose yield is the paraphrase and whose structure is its known parse.

use std::fmt;
use std::str::FromStr;

use super::GrammarError;
use crate::tree::{ConstTree, Node};

const PASSIVES: [(&str, &str); 3] = [("saw", "seen"), ("chased", "chased"), ("ate", "eaten")];
const SYNONYMS: [(&str, &str); 6] = [
    ("big", "large"),
    ("large", "big"),
    ("quickly", "fast"),
    ("fast", "quickly"),
    ("cat", "kitten"),
    ("kitten", "cat"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Transform {
    Identity,
    /// Swaps the two children of a binary root constituent.
    SwapSiblings,
    /// `NP VP PP .` → `PP , NP VP .`
    FrontPp,
    /// `PP , NP VP .` → `NP VP PP .`
    BackPp,
    /// `NP₁ (VP verb NP₂) …` → `NP₂ (VP was participle (PP by NP₁)) …`
    Passive,
    /// Token-level synonym substitution; structure unchanged.
    Synonym,
}

impl Transform {
    pub const ALL: [Transform; 6] = [
        Transform::Identity,
        Transform::SwapSiblings,
        Transform::FrontPp,
        Transform::BackPp,
        Transform::Passive,
        Transform::Synonym,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Transform::Identity => "identity",
            Transform::SwapSiblings => "swap-siblings",
            Transform::FrontPp => "front-pp",
            Transform::BackPp => "back-pp",
            Transform::Passive => "passive",
            Transform::Synonym => "synonym",
        }
    }

    /// The rewritten tree, or `None` when the tree does not have the shape
    /// this transform needs.
    pub fn apply(self, tree: &ConstTree) -> Option<ConstTree> {
        let Node::Internal { label, children } = tree.root() else {
            return None;
        };
        let rebuilt = |children: Vec<Node>| ConstTree::new(Node::internal(label.clone(), children)).ok();
        let is = |n: &Node, l: &str| n.label() == Some(l);
        let is_tok = |n: &Node, t: &str| matches!(n, Node::Leaf(x) if x == t);
        match self {
            Transform::Identity => Some(tree.clone()),
            Transform::SwapSiblings => match children.as_slice() {
                [a, b] => rebuilt(vec![b.clone(), a.clone()]),
                _ => None,
            },
            Transform::FrontPp => match children.as_slice() {
                [np, vp, pp, stop] if is(np, "NP") && is(vp, "VP") && is(pp, "PP") && stop.is_leaf() => rebuilt(vec![
                    pp.clone(),
                    Node::leaf(","),
                    np.clone(),
                    vp.clone(),
                    stop.clone(),
                ]),
                _ => None,
            },
            Transform::BackPp => match children.as_slice() {
                [pp, comma, np, vp, stop]
                    if is(pp, "PP") && is_tok(comma, ",") && is(np, "NP") && is(vp, "VP") && stop.is_leaf() =>
                {
                    rebuilt(vec![np.clone(), vp.clone(), pp.clone(), stop.clone()])
                }
                _ => None,
            },
            Transform::Passive => {
                let [subj, vp, rest @ ..] = children.as_slice() else {
                    return None;
                };
                if !is(subj, "NP") {
                    return None;
                }
                let Node::Internal { label: vl, children: vc } = vp else {
                    return None;
                };
                let [Node::Leaf(verb), obj] = vc.as_slice() else {
                    return None;
                };
                if vl != "VP" || !is(obj, "NP") {
                    return None;
                }
                let participle = PASSIVES.iter().find(|(v, _)| v == verb)?.1;
                let by = Node::internal("PP", vec![Node::leaf("by"), subj.clone()]);
                let passive_vp = Node::internal("VP", vec![Node::leaf("was"), Node::leaf(participle), by]);
                let mut out = vec![obj.clone(), passive_vp];
                out.extend(rest.iter().cloned());
                rebuilt(out)
            }
            Transform::Synonym => {
                let mut changed = false;
                fn sub(n: &Node, changed: &mut bool) -> Node {
                    match n {
                        Node::Leaf(t) => match SYNONYMS.iter().find(|(a, _)| a == t) {
                            Some((_, b)) => {
                                *changed = true;
                                Node::leaf(*b)
                            }
                            None => n.clone(),
                        },
                        Node::Internal { label, children } => {
                            Node::internal(label.clone(), children.iter().map(|c| sub(c, changed)).collect())
                        }
                    }
                }
                let root = sub(tree.root(), &mut changed);
                if changed {
                    ConstTree::new(root).ok()
                } else {
                    None
                }
            }
        }
    }
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Transform {
    type Err = GrammarError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Transform::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| GrammarError::UnknownTransform(s.to_string()))
    }
}

/// A named, ordered set of rewrites, e.g. `identity,front-pp`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransformSet(pub Vec<Transform>);

impl TransformSet {
    pub fn parse(list: &str) -> Result<Self, GrammarError> {
        let v = list
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::parse)
            .collect::<Result<Vec<_>, _>>()?;
        if v.is_empty() {
            return Err(GrammarError::UnknownTransform(list.to_string()));
        }
        Ok(TransformSet(v))
    }
}
