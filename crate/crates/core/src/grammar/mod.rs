//! A self-contained synthetic world: PCFG loading and sampling, Viterbi CKY
//! parsing, paraphrase corpus generation and constituent-label noise.

mod cky;
mod corpus;
mod transform;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::tree::{ConstTree, Node, TreeError, ROOT_LABEL};

pub use cky::{cky_parse, CkyParser};
pub use corpus::{gen_paraphrase_corpus, gen_paraphrase_corpus_with, inject_label_noise, CorpusOptions, ParallelCorpus, Record};
pub use transform::{Transform, TransformSet};

/// The bundled toy grammar.
pub const TOY_GRAMMAR: &str = include_str!("../../data/toy.pcfg");

const SUM_TOLERANCE: f64 = 1e-6;
const SAMPLE_RETRIES: usize = 1000;

#[derive(Debug, Error)]
pub enum GrammarError {
    #[error("line {line}: {detail}")]
    Syntax { line: usize, detail: String },
    #[error("probabilities for `{lhs}` sum to {sum}")]
    BadSum { lhs: String, sum: f64 },
    #[error("unknown symbol `{0}` (looks like a label but has no rules)")]
    UnknownSymbol(String),
    #[error("start symbol `{0}` has no terminating derivation")]
    UnreachableStart(String),
    #[error("label `{0}` has no terminating derivation")]
    NonTerminating(String),
    #[error("empty grammar")]
    Empty,
    #[error("no derivation within depth {max_depth} after {tries} tries")]
    SampleBudget { max_depth: usize, tries: usize },
    #[error("token `{0}` is not in the terminal alphabet")]
    UnknownToken(String),
    #[error("no parse for the sentence")]
    NoParse,
    #[error("rule `{0}` is not in the grammar")]
    MissingRule(String),
    #[error("transform `{0}` is unknown")]
    UnknownTransform(String),
    #[error("no transform applies to any sampled tree ({0} tries)")]
    TransformInapplicable(usize),
    #[error("no label different from `{0}` in the noise pool")]
    NoAlternativeLabel(String),
    #[error("empty noise pool")]
    EmptyPool,
    #[error("noise ratio {0} outside [0, 1]")]
    BadRatio(f64),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error("corpus: {0}")]
    Corpus(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Symbol {
    Label(String),
    Terminal(String),
}

impl Symbol {
    pub fn name(&self) -> &str {
        match self {
            Symbol::Label(s) | Symbol::Terminal(s) => s,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub lhs: String,
    pub rhs: Vec<Symbol>,
    pub prob: f64,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rhs: Vec<&str> = self.rhs.iter().map(Symbol::name).collect();
        write!(f, "{} -> {} | {}", self.lhs, rhs.join(" "), self.prob)
    }
}

/// A probabilistic context-free grammar. The start symbol is the left-hand
/// side of the first rule.
#[derive(Debug, Clone)]
pub struct Pcfg {
    start: String,
    rules: Vec<Rule>,
    by_lhs: BTreeMap<String, Vec<usize>>,
    terminals: BTreeSet<String>,
    lookup: HashMap<(String, Vec<String>), usize>,
}

fn looks_like_label(s: &str) -> bool {
    s.chars().next().is_some_and(|c| c.is_ascii_uppercase())
}

/// Parses `LHS -> sym sym … | prob` lines. A right-hand symbol is a label
/// when it has rules of its own; anything else is a terminal, except that a
/// symbol starting with an uppercase ASCII letter must have rules.
pub fn load_pcfg(text: &str) -> Result<Pcfg, GrammarError> {
    let mut raw: Vec<(String, Vec<String>, f64)> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let syntax = |detail: &str| GrammarError::Syntax {
            line: n + 1,
            detail: detail.to_string(),
        };
        let (lhs, rest) = line.split_once("->").ok_or_else(|| syntax("missing `->`"))?;
        let (rhs, prob) = rest.rsplit_once('|').ok_or_else(|| syntax("missing `| prob`"))?;
        let lhs = lhs.trim();
        if lhs.is_empty() || lhs.contains(char::is_whitespace) || lhs == ROOT_LABEL {
            return Err(syntax("bad left-hand side"));
        }
        let rhs: Vec<String> = rhs.split_whitespace().map(str::to_string).collect();
        if rhs.is_empty() {
            return Err(syntax("empty right-hand side"));
        }
        if rhs.iter().any(|s| s.contains(['(', ')'])) {
            return Err(syntax("parentheses are not allowed in symbols"));
        }
        let prob: f64 = prob.trim().parse().map_err(|_| syntax("bad probability"))?;
        if !(prob > 0.0 && prob <= 1.0) {
            return Err(syntax("probability outside (0, 1]"));
        }
        raw.push((lhs.to_string(), rhs, prob));
    }
    if raw.is_empty() {
        return Err(GrammarError::Empty);
    }
    let labels: BTreeSet<&str> = raw.iter().map(|(l, _, _)| l.as_str()).collect();
    let mut rules = Vec::with_capacity(raw.len());
    let mut terminals = BTreeSet::new();
    for (lhs, rhs, prob) in &raw {
        let mut syms = Vec::with_capacity(rhs.len());
        for s in rhs {
            if labels.contains(s.as_str()) {
                syms.push(Symbol::Label(s.clone()));
            } else if looks_like_label(s) {
                return Err(GrammarError::UnknownSymbol(s.clone()));
            } else {
                terminals.insert(s.clone());
                syms.push(Symbol::Terminal(s.clone()));
            }
        }
        rules.push(Rule {
            lhs: lhs.clone(),
            rhs: syms,
            prob: *prob,
        });
    }
    let mut by_lhs: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, r) in rules.iter().enumerate() {
        by_lhs.entry(r.lhs.clone()).or_default().push(i);
    }
    for (lhs, ids) in &by_lhs {
        let sum: f64 = ids.iter().map(|&i| rules[i].prob).sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(GrammarError::BadSum {
                lhs: lhs.clone(),
                sum,
            });
        }
    }
    let start = raw[0].0.clone();
    let lookup = rules
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let rhs = r.rhs.iter().map(|s| s.name().to_string()).collect();
            ((r.lhs.clone(), rhs), i)
        })
        .collect();
    let pcfg = Pcfg {
        start,
        rules,
        by_lhs,
        terminals,
        lookup,
    };
    pcfg.check_termination()?;
    Ok(pcfg)
}

impl Pcfg {
    pub fn start(&self) -> &str {
        &self.start
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.by_lhs.keys().map(String::as_str)
    }

    pub fn terminals(&self) -> &BTreeSet<String> {
        &self.terminals
    }

    pub fn rules_for(&self, lhs: &str) -> impl Iterator<Item = &Rule> {
        self.by_lhs
            .get(lhs)
            .into_iter()
            .flatten()
            .map(move |&i| &self.rules[i])
    }

    /// Fixpoint of labels with at least one fully terminating rule.
    fn check_termination(&self) -> Result<(), GrammarError> {
        let mut productive: BTreeSet<&str> = BTreeSet::new();
        loop {
            let before = productive.len();
            for r in &self.rules {
                if r.rhs.iter().all(|s| match s {
                    Symbol::Terminal(_) => true,
                    Symbol::Label(l) => productive.contains(l.as_str()),
                }) {
                    productive.insert(&r.lhs);
                }
            }
            if productive.len() == before {
                break;
            }
        }
        if !productive.contains(self.start.as_str()) {
            return Err(GrammarError::UnreachableStart(self.start.clone()));
        }
        if let Some(l) = self.by_lhs.keys().find(|l| !productive.contains(l.as_str())) {
            return Err(GrammarError::NonTerminating(l.clone()));
        }
        Ok(())
    }

    /// Log-probability of a derivation tree under this grammar.
    pub fn tree_logprob(&self, tree: &ConstTree) -> Result<f64, GrammarError> {
        fn walk(g: &Pcfg, node: &Node) -> Result<f64, GrammarError> {
            let Node::Internal { label, children } = node else {
                return Ok(0.0);
            };
            let rhs: Vec<String> = children
                .iter()
                .map(|c| match c {
                    Node::Leaf(t) => t.clone(),
                    Node::Internal { label, .. } => label.clone(),
                })
                .collect();
            let key = (label.clone(), rhs);
            let idx = g.lookup.get(&key).ok_or_else(|| {
                GrammarError::MissingRule(format!("{} -> {}", key.0, key.1.join(" ")))
            })?;
            let mut lp = g.rules[*idx].prob.ln();
            for c in children {
                lp += walk(g, c)?;
            }
            Ok(lp)
        }
        walk(self, tree.root())
    }

    /// Samples a derivation with `rng`, rejecting trees taller than
    /// `max_depth` (depth of the deepest token, root at 0).
    pub fn sample_with<R: Rng>(&self, rng: &mut R, max_depth: usize) -> Result<ConstTree, GrammarError> {
        for _ in 0..SAMPLE_RETRIES {
            if let Some(root) = self.expand_label(&self.start, 0, max_depth, rng) {
                return Ok(ConstTree::new(root)?);
            }
        }
        Err(GrammarError::SampleBudget {
            max_depth,
            tries: SAMPLE_RETRIES,
        })
    }

    fn expand_label<R: Rng>(&self, label: &str, depth: usize, max_depth: usize, rng: &mut R) -> Option<Node> {
        // a constituent at `depth` puts its tokens at depth + 1
        if depth + 1 > max_depth {
            return None;
        }
        let ids = &self.by_lhs[label];
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut chosen = *ids.last().expect("label has rules");
        for &i in ids {
            acc += self.rules[i].prob;
            if u < acc {
                chosen = i;
                break;
            }
        }
        let mut children = Vec::with_capacity(self.rules[chosen].rhs.len());
        for s in &self.rules[chosen].rhs {
            children.push(match s {
                Symbol::Terminal(t) => Node::leaf(t.clone()),
                Symbol::Label(l) => self.expand_label(l, depth + 1, max_depth, rng)?,
            });
        }
        Some(Node::internal(label, children))
    }
}

/// Samples one tree, deterministic in `seed`.
pub fn sample(pcfg: &Pcfg, seed: u64, max_depth: usize) -> Result<ConstTree, GrammarError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pcfg.sample_with(&mut rng, max_depth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::Whitelist;

    #[test]
    fn loads_a_minimal_grammar() {
        let g = load_pcfg("S -> NP VP | 1.0\nNP -> a | 1.0\nVP -> b # comment\n | 1.0").err();
        assert!(g.is_some(), "a rule cannot span lines");
        let g = load_pcfg("# toy\nS -> NP VP | 1.0\nNP -> a | 1.0\nVP -> b | 1.0\n").unwrap();
        assert_eq!(g.start(), "S");
        assert_eq!(g.rules_for("S").count(), 1);
        assert_eq!(g.terminals().iter().collect::<Vec<_>>(), ["a", "b"]);
    }

    #[test]
    fn rejects_bad_sums_and_unknown_symbols() {
        let bad = "S -> NP | 1.0\nNP -> a | 0.5\nNP -> b | 0.4\n";
        assert!(matches!(load_pcfg(bad), Err(GrammarError::BadSum { .. })));
        let unknown = "S -> NP VP | 1.0\nNP -> a | 1.0\n";
        assert!(matches!(load_pcfg(unknown), Err(GrammarError::UnknownSymbol(s)) if s == "VP"));
        let looping = "S -> S a | 1.0\n";
        assert!(matches!(load_pcfg(looping), Err(GrammarError::UnreachableStart(_))));
        let dead = "S -> a | 1.0\nX -> X | 1.0\n";
        assert!(matches!(load_pcfg(dead), Err(GrammarError::NonTerminating(_))));
        assert!(matches!(load_pcfg("# nothing\n"), Err(GrammarError::Empty)));
        assert!(load_pcfg("S -> a | 1.5").is_err());
        assert!(load_pcfg("S a | 1.0").is_err());
    }

    #[test]
    fn toy_grammar_uses_guidance_labels_only() {
        let g = load_pcfg(TOY_GRAMMAR).unwrap();
        let wl = Whitelist::default();
        for l in g.labels() {
            assert!(wl.contains(l), "{l}");
        }
        for r in g.rules() {
            assert!(r.prob > 0.0);
        }
        for l in g.labels() {
            let sum: f64 = g.rules_for(l).map(|r| r.prob).sum();
            assert!((sum - 1.0).abs() < 1e-9, "{l}: {sum}");
        }
    }

    #[test]
    fn deterministic_grammar_has_one_tree() {
        let g = load_pcfg("S -> NP VP . | 1.0\nNP -> the cat | 1.0\nVP -> slept | 1.0").unwrap();
        let t = sample(&g, 7, 10).unwrap();
        assert_eq!(t.to_bracketed(), "(S (NP the cat) (VP slept) .)");
    }

    #[test]
    fn sampling_is_seeded_and_depth_capped() {
        let g = load_pcfg(TOY_GRAMMAR).unwrap();
        for seed in 0..50 {
            let a = sample(&g, seed, 6).unwrap();
            assert_eq!(a, sample(&g, seed, 6).unwrap());
            assert!(a.height() <= 6);
        }
        let deep = load_pcfg("S -> a S | 0.9\nS -> a | 0.1").unwrap();
        assert!(matches!(sample(&deep, 1, 0), Err(GrammarError::SampleBudget { .. })));
    }

    #[test]
    fn coin_grammar_frequencies_within_three_sigma() {
        let g = load_pcfg("S -> heads | 0.3\nS -> tails | 0.7").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 10_000;
        let heads = (0..n)
            .filter(|_| g.sample_with(&mut rng, 4).unwrap().yield_refs() == ["heads"])
            .count();
        let sigma = (n as f64 * 0.3 * 0.7).sqrt();
        assert!((heads as f64 - 0.3 * n as f64).abs() < 3.0 * sigma, "{heads}");
    }

    #[test]
    fn tree_logprob_sums_rule_logs() {
        let g = load_pcfg(TOY_GRAMMAR).unwrap();
        let t = crate::tree::parse_bracketed("(S (NP the cat) (VP slept) .)").unwrap();
        let expected = 0.45f64.ln() + 0.15f64.ln() + 0.1f64.ln();
        assert!((g.tree_logprob(&t).unwrap() - expected).abs() < 1e-12);
        let bad = crate::tree::parse_bracketed("(S (NP the cat) .)").unwrap();
        assert!(g.tree_logprob(&bad).is_err());
    }
}
