//! Viterbi CKY over an internally binarized copy of the grammar.
//!
//! Terminals inside longer rules get a hidden preterminal, and rules longer
//! than two symbols are split right-branching through hidden intermediate
//! symbols. Both kinds of hidden node are spliced away when the best parse
//! is read back, so output trees use only the grammar's own labels.

use std::collections::HashMap;

use super::{GrammarError, Pcfg, Symbol};
use crate::tree::{ConstTree, Node};

#[derive(Debug, Clone, PartialEq)]
enum Kind {
    Label(String),
    /// Hidden preterminal for a terminal used inside a longer rule.
    Preterminal(String),
    /// Hidden right-branching remainder of a long rule.
    Intermediate,
}

#[derive(Debug, Clone, Copy)]
enum Back {
    None,
    Token,
    Unary(u32),
    Binary(usize, u32, u32),
}

/// A grammar compiled for repeated CKY parsing.
#[derive(Debug, Clone)]
pub struct CkyParser {
    kinds: Vec<Kind>,
    start: u32,
    lexical: HashMap<String, Vec<(u32, f64)>>,
    unary: Vec<(u32, u32, f64)>,
    binary: Vec<(u32, u32, u32, f64)>,
}

impl CkyParser {
    pub fn new(pcfg: &Pcfg) -> Self {
        let mut kinds: Vec<Kind> = Vec::new();
        let mut label_ids: HashMap<String, u32> = HashMap::new();
        for l in pcfg.labels() {
            label_ids.insert(l.to_string(), kinds.len() as u32);
            kinds.push(Kind::Label(l.to_string()));
        }
        let mut pre_ids: HashMap<String, u32> = HashMap::new();
        let mut lexical: HashMap<String, Vec<(u32, f64)>> = HashMap::new();
        let mut unary = Vec::new();
        let mut binary = Vec::new();

        for rule in pcfg.rules() {
            let lhs = label_ids[&rule.lhs];
            let lp = rule.prob.ln();
            if rule.rhs.len() == 1 {
                match &rule.rhs[0] {
                    Symbol::Terminal(t) => lexical.entry(t.clone()).or_default().push((lhs, lp)),
                    Symbol::Label(l) => unary.push((lhs, label_ids[l], lp)),
                }
                continue;
            }
            let syms: Vec<u32> = rule
                .rhs
                .iter()
                .map(|s| match s {
                    Symbol::Label(l) => label_ids[l],
                    Symbol::Terminal(t) => *pre_ids.entry(t.clone()).or_insert_with(|| {
                        kinds.push(Kind::Preterminal(t.clone()));
                        let id = kinds.len() as u32 - 1;
                        lexical.entry(t.clone()).or_default().push((id, 0.0));
                        id
                    }),
                })
                .collect();
            let mut parent = lhs;
            let mut logp = lp;
            for i in 0..syms.len() - 2 {
                kinds.push(Kind::Intermediate);
                let rest = kinds.len() as u32 - 1;
                binary.push((parent, syms[i], rest, logp));
                parent = rest;
                logp = 0.0;
            }
            let n = syms.len();
            binary.push((parent, syms[n - 2], syms[n - 1], logp));
        }
        CkyParser {
            kinds,
            start: label_ids[pcfg.start()],
            lexical,
            unary,
            binary,
        }
    }

    /// Best parse and its log-probability.
    pub fn parse(&self, tokens: &[String]) -> Result<(ConstTree, f64), GrammarError> {
        let n = tokens.len();
        if n == 0 {
            return Err(GrammarError::NoParse);
        }
        let s = self.kinds.len();
        let idx = |i: usize, j: usize| i * (n + 1) + j;
        let mut score = vec![f64::NEG_INFINITY; (n + 1) * (n + 1) * s];
        let mut back = vec![Back::None; (n + 1) * (n + 1) * s];

        for (i, tok) in tokens.iter().enumerate() {
            let entries = self
                .lexical
                .get(tok)
                .ok_or_else(|| GrammarError::UnknownToken(tok.clone()))?;
            let cell = idx(i, i + 1) * s;
            for &(sym, lp) in entries {
                if lp > score[cell + sym as usize] {
                    score[cell + sym as usize] = lp;
                    back[cell + sym as usize] = Back::Token;
                }
            }
            self.unary_closure(&mut score[cell..cell + s], &mut back[cell..cell + s]);
        }

        for len in 2..=n {
            for i in 0..=n - len {
                let j = i + len;
                let cell = idx(i, j) * s;
                for k in i + 1..j {
                    let left = idx(i, k) * s;
                    let right = idx(k, j) * s;
                    for &(p, l, r, lp) in &self.binary {
                        let ls = score[left + l as usize];
                        if ls == f64::NEG_INFINITY {
                            continue;
                        }
                        let rs = score[right + r as usize];
                        if rs == f64::NEG_INFINITY {
                            continue;
                        }
                        let cand = ls + rs + lp;
                        if cand > score[cell + p as usize] {
                            score[cell + p as usize] = cand;
                            back[cell + p as usize] = Back::Binary(k, l, r);
                        }
                    }
                }
                let (sc, bk) = (&mut score[cell..cell + s], &mut back[cell..cell + s]);
                self.unary_closure(sc, bk);
            }
        }

        let root = idx(0, n) * s + self.start as usize;
        if score[root] == f64::NEG_INFINITY {
            return Err(GrammarError::NoParse);
        }
        let mut nodes = self.build(&back, tokens, s, n, self.start, 0, n);
        debug_assert_eq!(nodes.len(), 1);
        let tree = ConstTree::new(nodes.pop().expect("root node"))?;
        Ok((tree, score[root]))
    }

    fn unary_closure(&self, score: &mut [f64], back: &mut [Back]) {
        // rule probabilities are ≤ 1, so cycles never improve a score
        for _ in 0..self.kinds.len() {
            let mut changed = false;
            for &(p, c, lp) in &self.unary {
                let cs = score[c as usize];
                if cs == f64::NEG_INFINITY {
                    continue;
                }
                if cs + lp > score[p as usize] {
                    score[p as usize] = cs + lp;
                    back[p as usize] = Back::Unary(c);
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn build(&self, back: &[Back], tokens: &[String], s: usize, n: usize, sym: u32, i: usize, j: usize) -> Vec<Node> {
        let b = back[(i * (n + 1) + j) * s + sym as usize];
        let children: Vec<Node> = match b {
            Back::None => unreachable!("reachable chart entry without backpointer"),
            Back::Token => vec![Node::leaf(tokens[i].clone())],
            Back::Unary(c) => self.build(back, tokens, s, n, c, i, j),
            Back::Binary(k, l, r) => {
                let mut v = self.build(back, tokens, s, n, l, i, k);
                v.extend(self.build(back, tokens, s, n, r, k, j));
                v
            }
        };
        match &self.kinds[sym as usize] {
            Kind::Label(l) => vec![Node::internal(l.clone(), children)],
            Kind::Preterminal(_) | Kind::Intermediate => children,
        }
    }
}

/// Parses `tokens` with a freshly compiled copy of `pcfg`.
pub fn cky_parse(pcfg: &Pcfg, tokens: &[String]) -> Result<(ConstTree, f64), GrammarError> {
    CkyParser::new(pcfg).parse(tokens)
}
