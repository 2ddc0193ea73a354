//! Generation quality and diversity metrics: BLEU, iBLEU, lexical and
//! syntactic diversity, beam diversity and induced-tree agreement.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grammar::{CkyParser, Pcfg};
use crate::search::DecodeTrace;
use crate::tree::{induce_tree, span_prf_counts, tree_edit_distance, ConstTree, SpanCounts, SpanScores, Whitelist};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("{what}: {left} vs {right} entries")]
    LengthMismatch { what: &'static str, left: usize, right: usize },
    #[error("iBLEU weight r = {0} outside [0, 1]")]
    BadWeight(f64),
    #[error("hypothesis {0} has no references")]
    NoReference(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub r: f64,
    pub max_order: usize,
    /// Add-one smoothing for orders ≥ 2 in sentence-level BLEU.
    pub smooth_sentence: bool,
    pub scale: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            r: 0.7,
            max_order: 4,
            smooth_sentence: true,
            scale: 100.0,
        }
    }
}

/// Sufficient statistics for BLEU; corpus BLEU sums them over sentences.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BleuStats {
    pub matches: Vec<usize>,
    pub totals: Vec<usize>,
    pub hyp_len: usize,
    pub ref_len: usize,
}

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut out = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *out.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
        }
    }
    out
}

impl BleuStats {
    /// Clipped n-gram matches against the per-n-gram maximum over references,
    /// with the closest reference length (shorter on ties).
    pub fn sentence<S: AsRef<str>>(hyp: &[S], refs: &[Vec<S>], max_order: usize) -> BleuStats {
        let mut stats = BleuStats {
            matches: vec![0; max_order],
            totals: vec![0; max_order],
            hyp_len: hyp.len(),
            ref_len: refs
                .iter()
                .map(Vec::len)
                .min_by_key(|&l| (l.abs_diff(hyp.len()), l))
                .unwrap_or(0),
        };
        for n in 1..=max_order {
            let h = ngram_counts(hyp, n);
            let mut max_ref: HashMap<Vec<&str>, usize> = HashMap::new();
            for r in refs {
                for (g, c) in ngram_counts(r, n) {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(c);
                }
            }
            stats.totals[n - 1] = hyp.len().saturating_sub(n - 1);
            stats.matches[n - 1] = h.iter().map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0))).sum();
        }
        stats
    }

    pub fn add(&mut self, other: &BleuStats) {
        if self.matches.is_empty() {
            self.matches = vec![0; other.matches.len()];
            self.totals = vec![0; other.totals.len()];
        }
        for (a, b) in self.matches.iter_mut().zip(&other.matches) {
            *a += b;
        }
        for (a, b) in self.totals.iter_mut().zip(&other.totals) {
            *a += b;
        }
        self.hyp_len += other.hyp_len;
        self.ref_len += other.ref_len;
    }

    /// BLEU in percent. With `smooth`, orders ≥ 2 use (m + 1) / (t + 1).
    pub fn score(&self, smooth: bool) -> f64 {
        if self.hyp_len == 0 || self.matches.is_empty() {
            return 0.0;
        }
        let mut log_sum = 0.0;
        for (i, (&m, &t)) in self.matches.iter().zip(&self.totals).enumerate() {
            let (m, t) = if smooth && i > 0 {
                (m as f64 + 1.0, t as f64 + 1.0)
            } else {
                (m as f64, t as f64)
            };
            if m == 0.0 || t == 0.0 {
                return 0.0;
            }
            log_sum += (m / t).ln();
        }
        let log_bp = if self.hyp_len < self.ref_len {
            1.0 - self.ref_len as f64 / self.hyp_len as f64
        } else {
            0.0
        };
        100.0 * (log_bp + log_sum / self.matches.len() as f64).exp()
    }
}

fn check_aligned(what: &'static str, left: usize, right: usize) -> Result<(), MetricError> {
    if left == 0 {
        return Err(MetricError::EmptyCorpus);
    }
    if left != right {
        return Err(MetricError::LengthMismatch { what, left, right });
    }
    Ok(())
}

pub fn corpus_bleu_stats<S: AsRef<str>>(hyps: &[Vec<S>], refs: &[Vec<Vec<S>>], max_order: usize) -> Result<BleuStats, MetricError> {
    check_aligned("hypotheses vs references", hyps.len(), refs.len())?;
    let mut total = BleuStats::default();
    for (i, (h, r)) in hyps.iter().zip(refs).enumerate() {
        if r.is_empty() {
            return Err(MetricError::NoReference(i));
        }
        total.add(&BleuStats::sentence(h, r, max_order));
    }
    Ok(total)
}

/// Corpus-level BLEU (percent), 4-gram, unsmoothed.
pub fn bleu<S: AsRef<str>>(hyps: &[Vec<S>], refs: &[Vec<Vec<S>>]) -> Result<f64, MetricError> {
    Ok(corpus_bleu_stats(hyps, refs, 4)?.score(false))
}

/// Sentence-level BLEU (percent) with add-one smoothing on orders ≥ 2.
pub fn sentence_bleu<S: AsRef<str>>(hyp: &[S], refs: &[Vec<S>]) -> f64 {
    BleuStats::sentence(hyp, refs, 4).score(true)
}

pub fn ibleu_from_scores(bleu: f64, self_bleu: f64, r: f64) -> f64 {
    r * bleu - (1.0 - r) * self_bleu
}

/// `r · BLEU(hyps, refs) − (1 − r) · BLEU(hyps, srcs)`.
pub fn ibleu<S: AsRef<str> + Clone>(
    hyps: &[Vec<S>],
    refs: &[Vec<Vec<S>>],
    srcs: &[Vec<S>],
    config: &MetricConfig,
) -> Result<f64, MetricError> {
    if !(0.0..=1.0).contains(&config.r) {
        return Err(MetricError::BadWeight(config.r));
    }
    check_aligned("hypotheses vs sources", hyps.len(), srcs.len())?;
    let b = corpus_bleu_stats(hyps, refs, config.max_order)?.score(false);
    let src_refs: Vec<Vec<Vec<S>>> = srcs.iter().map(|s| vec![s.clone()]).collect();
    let sb = corpus_bleu_stats(hyps, &src_refs, config.max_order)?.score(false);
    Ok(ibleu_from_scores(b, sb, config.r))
}

/// Levenshtein distance over Unicode scalar values.
pub fn char_edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn bag_string<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut v: Vec<&str> = tokens.iter().map(AsRef::as_ref).collect();
    v.sort_unstable();
    v.join(" ")
}

/// Character edit distance between sorted bags of words, over the longer
/// bag string's length, in [0, 100].
pub fn d_lex<S: AsRef<str>>(a: &[S], b: &[S]) -> f64 {
    let (a, b) = (bag_string(a), bag_string(b));
    let longest = a.chars().count().max(b.chars().count());
    if longest == 0 {
        return 0.0;
    }
    100.0 * char_edit_distance(&a, &b) as f64 / longest as f64
}

/// Tree edit distance between delexicalized trees over the larger node
/// count, in [0, 100].
pub fn d_syn(a: &ConstTree, b: &ConstTree) -> f64 {
    let (a, b) = (a.delexicalize(), b.delexicalize());
    let n = a.node_count().max(b.node_count());
    let d = tree_edit_distance(&a, &b) as f64 / n as f64;
    100.0 * d.clamp(0.0, 1.0)
}

/// One beam candidate, optionally with its tree (needed for D_syn).
#[derive(Debug, Clone, PartialEq)]
pub struct BeamHyp {
    pub tokens: Vec<String>,
    pub tree: Option<ConstTree>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamDiversity {
    /// Mean pairwise D_lex; absent when no source has two candidates.
    pub d_lex: Option<f64>,
    /// Mean pairwise D_syn; absent also when any candidate lacks a tree.
    pub d_syn: Option<f64>,
    /// Mean sentence BLEU of every candidate against its references.
    pub bleu: f64,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn mean_pairwise<T>(items: &[T], f: impl Fn(&T, &T) -> f64) -> Option<f64> {
    let mut scores = Vec::new();
    for i in 0..items.len() {
        for j in i + 1..items.len() {
            scores.push(f(&items[i], &items[j]));
        }
    }
    mean(&scores)
}

pub fn beam_diversity(beams: &[Vec<BeamHyp>], refs: &[Vec<Vec<String>>]) -> Result<BeamDiversity, MetricError> {
    check_aligned("beams vs references", beams.len(), refs.len())?;
    let mut lex = Vec::new();
    let mut syn = Vec::new();
    let mut all_trees = true;
    let mut bleus = Vec::new();
    for (beam, r) in beams.iter().zip(refs) {
        for h in beam {
            bleus.push(sentence_bleu(&h.tokens, r));
        }
        if let Some(m) = mean_pairwise(beam, |a, b| d_lex(&a.tokens, &b.tokens)) {
            lex.push(m);
        }
        let trees: Option<Vec<&ConstTree>> = beam.iter().map(|h| h.tree.as_ref()).collect();
        match trees {
            Some(t) => syn.extend(mean_pairwise(&t, |a, b| d_syn(a, b))),
            None => all_trees = false,
        }
    }
    Ok(BeamDiversity {
        d_lex: mean(&lex),
        d_syn: if all_trees { mean(&syn) } else { None },
        bleu: mean(&bleus).unwrap_or(0.0),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpReport {
    pub counts: SpanCounts,
    pub scores: SpanScores,
    pub decodes: usize,
    /// Hypotheses the parser could not parse (or traces that do not induce
    /// a tree); their predicted spans count as unmatched.
    pub rejected: usize,
}

/// Micro-averaged labeled-span agreement between induced trees and CKY
/// re-parses of the hypotheses (normalized with `whitelist`).
pub fn interp_report(traces: &[DecodeTrace], parser: &Pcfg, whitelist: &Whitelist) -> InterpReport {
    let cky = CkyParser::new(parser);
    let mut counts = SpanCounts::default();
    let mut rejected = 0;
    for trace in traces {
        let Ok(induced) = induce_tree(trace) else {
            rejected += 1;
            continue;
        };
        let parsed = cky
            .parse(&induced.yield_tokens())
            .ok()
            .and_then(|(t, _)| t.attach_root().normalize(whitelist).ok());
        match parsed.map(|gold| span_prf_counts(&induced, &gold)) {
            Some(Ok(c)) => counts.add(c),
            _ => {
                rejected += 1;
                counts.add(SpanCounts {
                    matched: 0,
                    predicted: induced.internal_count().saturating_sub(1),
                    gold: 0,
                });
            }
        }
    }
    InterpReport {
        scores: counts.scores(),
        counts,
        decodes: traces.len(),
        rejected,
    }
}

/// Per-sentence breakdown inside [`EvalReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceScores {
    pub index: usize,
    pub bleu: f64,
    pub self_bleu: f64,
    pub d_lex: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_syn: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bleu: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub self_bleu: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ibleu: Option<f64>,
    /// Mean D_lex between hypothesis and source.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_lex: Option<f64>,
    /// Mean D_syn between hypothesis and source trees.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_syn: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beam: Option<BeamDiversity>,
    pub sentences: Vec<SentenceScores>,
}

impl EvalReport {
    /// Fills corpus BLEU, self-BLEU, iBLEU, D_lex and (with trees) D_syn.
    pub fn compute(
        hyps: &[Vec<String>],
        refs: &[Vec<Vec<String>>],
        srcs: &[Vec<String>],
        trees: Option<(&[ConstTree], &[ConstTree])>,
        config: &MetricConfig,
    ) -> Result<EvalReport, MetricError> {
        check_aligned("hypotheses vs sources", hyps.len(), srcs.len())?;
        if let Some((h, s)) = trees {
            check_aligned("hypothesis trees", hyps.len(), h.len())?;
            check_aligned("source trees", hyps.len(), s.len())?;
        }
        let b = corpus_bleu_stats(hyps, refs, config.max_order)?.score(false);
        let src_refs: Vec<Vec<Vec<String>>> = srcs.iter().map(|s| vec![s.clone()]).collect();
        let sb = corpus_bleu_stats(hyps, &src_refs, config.max_order)?.score(false);
        let sentences: Vec<SentenceScores> = (0..hyps.len())
            .map(|i| SentenceScores {
                index: i,
                bleu: BleuStats::sentence(&hyps[i], &refs[i], config.max_order).score(config.smooth_sentence),
                self_bleu: BleuStats::sentence(&hyps[i], &src_refs[i], config.max_order).score(config.smooth_sentence),
                d_lex: d_lex(&hyps[i], &srcs[i]),
                d_syn: trees.map(|(h, s)| d_syn(&h[i], &s[i])),
            })
            .collect();
        let d_lex_vals: Vec<f64> = sentences.iter().map(|s| s.d_lex).collect();
        let d_syn_vals: Vec<f64> = sentences.iter().filter_map(|s| s.d_syn).collect();
        Ok(EvalReport {
            bleu: Some(b),
            self_bleu: Some(sb),
            ibleu: Some(ibleu_from_scores(b, sb, config.r)),
            d_lex: mean(&d_lex_vals),
            d_syn: mean(&d_syn_vals),
            beam: None,
            sentences,
        })
    }

    /// Human-readable table of the corpus-level figures.
    pub fn table(&self) -> String {
        let mut out = String::from("metric      value\n");
        let mut row = |name: &str, v: Option<f64>| {
            if let Some(v) = v {
                out.push_str(&format!("{name:<11} {v:.2}\n"));
            }
        };
        row("BLEU", self.bleu);
        row("self-BLEU", self.self_bleu);
        row("iBLEU", self.ibleu);
        row("D_lex", self.d_lex);
        row("D_syn", self.d_syn);
        if let Some(b) = &self.beam {
            row("beam-D_lex", b.d_lex);
            row("beam-D_syn", b.d_syn);
            row("beam-BLEU", Some(b.bleu));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::parse_bracketed;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn perfect_and_disjoint_bleu() {
        let h = vec![toks("the cat sat on the mat"), toks("a dog ran in the park")];
        let r: Vec<_> = h.iter().map(|x| vec![x.clone()]).collect();
        assert!((bleu(&h, &r).unwrap() - 100.0).abs() < 1e-9);
        let r2 = vec![vec![toks("the cat sat at home")], vec![toks("a dog walked")]];
        let no4 = corpus_bleu_stats(&h, &r2, 4).unwrap();
        assert_eq!(no4.matches[3], 0);
        assert_eq!(no4.score(false), 0.0);
        assert!(matches!(bleu::<String>(&[], &[]), Err(MetricError::EmptyCorpus)));
    }

    #[test]
    fn sentence_smoothing_keeps_partial_credit() {
        let h = toks("the cat sat");
        let r = vec![toks("the cat ran")];
        assert_eq!(BleuStats::sentence(&h, &r, 4).score(false), 0.0);
        let s = sentence_bleu(&h, &r);
        // p1 = 2/3, p2 = 2/3, p3 = 1/2, p4 = 1/1
        let expected = 100.0 * (((2.0f64 / 3.0).ln() * 2.0 + 0.5f64.ln()) / 4.0).exp();
        assert!((s - expected).abs() < 1e-9);
    }

    #[test]
    fn closest_reference_length() {
        let h = toks("a b c d e");
        let refs = vec![toks("a b"), toks("a b c d e f"), toks("a b c d")];
        assert_eq!(BleuStats::sentence(&h, &refs, 4).ref_len, 4);
        let refs = vec![toks("a b c d e f g"), toks("a b c")];
        assert_eq!(BleuStats::sentence(&h, &refs, 4).ref_len, 3);
    }

    #[test]
    fn ibleu_anchor_arithmetic() {
        assert!((ibleu_from_scores(18.5, 100.0, 0.7) - -17.05).abs() < 1e-9);
        assert!((ibleu_from_scores(100.0, 18.6, 0.7) - 64.42).abs() < 1e-9);
        let h = vec![toks("a b c d e")];
        let r = vec![vec![toks("a b c d x")]];
        let s = vec![toks("a b c d e")];
        let one = MetricConfig {
            r: 1.0,
            ..MetricConfig::default()
        };
        assert_eq!(ibleu(&h, &r, &s, &one).unwrap(), bleu(&h, &r).unwrap());
        let bad = MetricConfig {
            r: 1.5,
            ..MetricConfig::default()
        };
        assert!(ibleu(&h, &r, &s, &bad).is_err());
    }

    #[test]
    fn lexical_diversity() {
        assert_eq!(d_lex(&toks("I ate an apple ."), &toks("I ate an apple .")), 0.0);
        assert_eq!(d_lex(&toks("an apple I ate ."), &toks("I ate an apple .")), 0.0);
        assert!((d_lex(&toks("a b"), &toks("a c")) - 100.0 / 3.0).abs() < 1e-9);
        assert_eq!(d_lex::<&str>(&[], &[]), 0.0);
        assert_eq!(char_edit_distance("kitten", "sitting"), 3);
    }

    #[test]
    fn syntactic_diversity() {
        let t = parse_bracketed("(S (NP I) (VP ate (NP an apple)) .)").unwrap();
        assert_eq!(d_syn(&t, &t), 0.0);
        assert_eq!(d_syn(&parse_bracketed("(X a)").unwrap(), &parse_bracketed("(Y a)").unwrap()), 100.0);
        let a = parse_bracketed("(S (NP a) (VP b))").unwrap();
        let b = parse_bracketed("(S (VP b))").unwrap();
        assert!((d_syn(&a, &b) - 100.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn beam_pairs() {
        let hyp = |s: &str, t: &str| BeamHyp {
            tokens: toks(s),
            tree: Some(parse_bracketed(t).unwrap()),
        };
        let same = vec![hyp("a b", "(S a b)"), hyp("a b", "(S a b)")];
        let r = vec![vec![toks("a b")]];
        let out = beam_diversity(&[same], &r).unwrap();
        assert_eq!(out.d_lex, Some(0.0));
        assert_eq!(out.d_syn, Some(0.0));

        let three = vec![hyp("a b", "(S (NP a) (VP b))"), hyp("a c", "(S (VP b))"), hyp("a b", "(X a b)")];
        let out = beam_diversity(&[three], &r).unwrap();
        // pairs: (0,1) 33.3/33.3, (0,2) 0/100, (1,2) 33.3/100
        let lex = (100.0 / 3.0 + 0.0 + 100.0 / 3.0) / 3.0;
        let syn = (100.0 / 3.0 + 100.0 + 100.0) / 3.0;
        assert!((out.d_lex.unwrap() - lex).abs() < 1e-9);
        assert!((out.d_syn.unwrap() - syn).abs() < 1e-9);

        let single = vec![hyp("a b", "(S a b)")];
        let out = beam_diversity(&[single], &r).unwrap();
        assert_eq!(out.d_lex, None);
        assert!((out.bleu - sentence_bleu(&toks("a b"), &r[0])).abs() < 1e-12);
    }

    #[test]
    fn report_table_lists_present_metrics() {
        let h = vec![toks("a b c d")];
        let r = vec![vec![toks("a b c d")]];
        let rep = EvalReport::compute(&h, &r, &h, None, &MetricConfig::default()).unwrap();
        assert_eq!(rep.bleu, Some(100.0));
        assert!((rep.ibleu.unwrap() - 40.0).abs() < 1e-9);
        assert!(rep.table().contains("iBLEU"));
        assert!(!rep.table().contains("D_syn"));
    }
}
