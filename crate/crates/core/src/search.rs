//! Top-down generation: constituent expansion, token-level inner beam
//! search, and structural beam search across tree depths.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ids_to_infilling, EncodedSource, ModelError, ScoreModel};
use crate::tree::{Item, SyntaxContext, Template};
use crate::triplet::{InfillingSequence, TripletError};

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("{groups} infilling groups for {placeholders} placeholders")]
    CountMismatch { groups: usize, placeholders: usize },
    #[error(transparent)]
    Infilling(#[from] TripletError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("no well-formed infilling for `{context}` at depth {depth}")]
    NoExpansion { depth: usize, context: String },
    #[error("every beam candidate failed: {}", .0.join("; "))]
    BeamExhausted(Vec<String>),
    #[error("invalid search configuration: {0}")]
    Config(String),
    #[error("invalid edit: {0}")]
    Edit(String),
    #[error("search already finished")]
    Finished,
}

fn template_serde_ser<S: serde::Serializer>(t: &Option<Template>, s: S) -> Result<S::Ok, S::Error> {
    match t {
        Some(t) => s.serialize_some(&t.to_bracketed()),
        None => s.serialize_none(),
    }
}

fn template_serde_de<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Option<Template>, D::Error> {
    Option::<String>::deserialize(d)?
        .map(|s| Template::parse(&s).map_err(serde::de::Error::custom))
        .transpose()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub k: usize,
    pub alpha: f64,
    pub d_max: usize,
    pub t_max: usize,
    #[serde(serialize_with = "template_serde_ser", deserialize_with = "template_serde_de")]
    pub template: Option<Template>,
    pub gamma: f64,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            k: 5,
            alpha: 0.8,
            d_max: 32,
            t_max: 128,
            template: None,
            gamma: 0.32,
            seed: 0,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), SearchError> {
        if self.k == 0 {
            return Err(SearchError::Config("beam width must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(SearchError::Config(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(SearchError::Config(format!("gamma {} must be ≥ 0", self.gamma)));
        }
        if self.t_max == 0 {
            return Err(SearchError::Config("t_max must be at least 1".into()));
        }
        Ok(())
    }

    pub fn greedy(&self) -> SearchConfig {
        SearchConfig { k: 1, ..self.clone() }
    }
}

/// Splits an infilling at its separators.
pub fn split_groups(f: &InfillingSequence) -> Result<Vec<Vec<Item>>, SearchError> {
    Ok(f.groups()?)
}

/// Replaces each placeholder of `s`, left to right, by its infilling group.
pub fn expand(s: &SyntaxContext, f: &InfillingSequence) -> Result<SyntaxContext, SearchError> {
    let groups = split_groups(f)?;
    let placeholders = s.placeholder_count();
    if groups.len() != placeholders {
        return Err(SearchError::CountMismatch {
            groups: groups.len(),
            placeholders,
        });
    }
    let mut groups = groups.into_iter();
    let mut items = Vec::with_capacity(s.len() + f.len());
    for item in s.items() {
        match item {
            Item::Token(_) => items.push(item.clone()),
            Item::Placeholder(_) => items.extend(groups.next().expect("counted")),
        }
    }
    Ok(SyntaxContext::new(items).expect("expansion of a nonempty context"))
}

pub fn is_terminated(s: &SyntaxContext) -> bool {
    s.is_terminated()
}

/// γ when the child context's placeholder labels equal the template's
/// frontier at `child_depth` (and that frontier is nonempty), else 0.
pub fn template_reward(child: &SyntaxContext, template: Option<&Template>, child_depth: usize, gamma: f64) -> f64 {
    let Some(template) = template else {
        return 0.0;
    };
    let frontier = template.frontier(child_depth);
    if frontier.is_empty() {
        return 0.0;
    }
    if child.placeholder_labels().eq(frontier.iter().map(String::as_str)) {
        gamma
    } else {
        0.0
    }
}

/// Length-capped token beam search for one syntax context. Finished
/// hypotheses stay in the beam; ill-formed ones are dropped afterwards.
/// Results are sorted by summed log-probability, best first.
pub fn inner_beam_search(
    model: &dyn ScoreModel,
    source: &EncodedSource,
    context: &SyntaxContext,
    k: usize,
    t_max: usize,
) -> Result<Vec<(f64, InfillingSequence)>, SearchError> {
    let vocab = model.vocab();
    let eos = vocab.eos();
    let enc = model.encode_context(source, context)?;

    struct Hyp {
        score: f64,
        ids: Vec<u32>,
        done: bool,
    }
    let mut beam = vec![Hyp {
        score: 0.0,
        ids: Vec::new(),
        done: false,
    }];
    for _ in 0..t_max {
        if beam.iter().all(|h| h.done) {
            break;
        }
        let mut next: Vec<Hyp> = Vec::with_capacity(beam.len() * vocab.len());
        for h in beam {
            if h.done {
                next.push(h);
                continue;
            }
            let lp = model.next_logprobs_encoded(&enc, &h.ids)?;
            for (id, &p) in lp.iter().enumerate() {
                let mut ids = h.ids.clone();
                ids.push(id as u32);
                next.push(Hyp {
                    score: h.score + p,
                    ids,
                    done: id as u32 == eos,
                });
            }
        }
        // stable: ties keep generation order (parent rank, then vocab id)
        next.sort_by(|a, b| b.score.total_cmp(&a.score));
        next.truncate(k);
        beam = next;
    }

    let placeholders = context.placeholder_count();
    let mut out = Vec::new();
    for h in beam.into_iter().filter(|h| h.done) {
        let Some(f) = ids_to_infilling(vocab, &h.ids[..h.ids.len() - 1]) else {
            continue;
        };
        match f.groups() {
            Ok(g) if g.len() == placeholders => out.push((h.score, f)),
            _ => {}
        }
    }
    Ok(out)
}

/// One constituent expansion in a candidate's history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub depth: usize,
    /// Context that was expanded (after any human edit).
    pub context: SyntaxContext,
    pub infilling: InfillingSequence,
    pub delta_f: f64,
    /// Accumulated score after this expansion.
    pub delta: f64,
    pub reward: f64,
    /// Model context replaced by a human edit before this expansion.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edited_from: Option<SyntaxContext>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DecodeTrace {
    pub steps: Vec<TraceStep>,
}

impl DecodeTrace {
    /// Every consecutive pair satisfies `expand(s_d, f_d) == s_{d+1}`
    /// (edited steps excepted).
    pub fn is_consistent(&self) -> bool {
        self.steps.windows(2).all(|w| {
            let next = w[1].edited_from.as_ref().unwrap_or(&w[1].context);
            expand(&w[0].context, &w[0].infilling).is_ok_and(|c| &c == next)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamCandidate {
    pub context: SyntaxContext,
    pub score: f64,
    pub finished: bool,
    pub failed: bool,
    pub trace: DecodeTrace,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
    #[serde(skip)]
    pending_edit: Option<SyntaxContext>,
}

impl BeamCandidate {
    pub fn root() -> Self {
        BeamCandidate {
            context: SyntaxContext::root(),
            score: 0.0,
            finished: false,
            failed: false,
            trace: DecodeTrace::default(),
            diagnostic: None,
            pending_edit: None,
        }
    }

    /// Realized tokens of the context.
    pub fn tokens(&self) -> Vec<String> {
        self.context.tokens()
    }

    fn is_live(&self) -> bool {
        !self.finished && !self.failed
    }

    fn expanded(&self, depth: usize, f: InfillingSequence, delta_f: f64, config: &SearchConfig) -> Result<Self, SearchError> {
        let context = expand(&self.context, &f)?;
        let reward = template_reward(&context, config.template.as_ref(), depth + 1, config.gamma);
        let delta = config.alpha * self.score + (1.0 - config.alpha) * delta_f + reward;
        let mut trace = self.trace.clone();
        trace.steps.push(TraceStep {
            depth,
            context: self.context.clone(),
            infilling: f,
            delta_f,
            delta,
            reward,
            edited_from: self.pending_edit.clone(),
        });
        Ok(BeamCandidate {
            finished: context.is_terminated(),
            context,
            score: delta,
            failed: false,
            trace,
            diagnostic: None,
            pending_edit: None,
        })
    }

    fn mark_failed(&mut self, why: String) {
        self.failed = true;
        self.diagnostic = Some(why);
    }
}

/// Ranking: live and finished candidates by score, failed ones last; ties
/// keep their generation order.
fn rank(cands: &mut [BeamCandidate]) {
    cands.sort_by(|a, b| match a.failed.cmp(&b.failed) {
        Ordering::Equal => b.score.total_cmp(&a.score),
        o => o,
    });
}

/// Greedy top-down decode: at each depth take the single best well-formed
/// infilling and expand.
pub fn greedy_decode(model: &dyn ScoreModel, source: &[String], config: &SearchConfig) -> Result<BeamCandidate, SearchError> {
    config.validate()?;
    let h = model.encode_source(source);
    let mut cand = BeamCandidate::root();
    for depth in 0..config.d_max {
        if cand.finished {
            break;
        }
        let mut results = inner_beam_search(model, &h, &cand.context, 1, config.t_max)?;
        if results.is_empty() {
            return Err(SearchError::NoExpansion {
                depth,
                context: cand.context.to_string(),
            });
        }
        let (delta_f, f) = results.swap_remove(0);
        cand = cand.expanded(depth, f, delta_f, config)?;
    }
    if !cand.finished {
        cand.mark_failed(format!("depth limit {} reached with `{}`", config.d_max, cand.context));
    }
    Ok(cand)
}

/// One inner-beam result and what became of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Expansion {
    pub parent_index: usize,
    pub infilling: InfillingSequence,
    pub context: SyntaxContext,
    pub delta_s: f64,
    pub delta_f: f64,
    pub delta: f64,
    pub reward: f64,
    /// Position in the pruned beam, if it survived.
    pub kept: Option<usize>,
}

/// A human replacement of a candidate's context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditRecord {
    pub index: usize,
    pub before: SyntaxContext,
    pub after: SyntaxContext,
    pub origin: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamEntry {
    pub index: usize,
    pub context: SyntaxContext,
    pub score: f64,
    pub finished: bool,
    pub failed: bool,
}

/// Everything that happened at one depth of structural beam search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthRecord {
    pub depth: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub edits: Vec<EditRecord>,
    pub expansions: Vec<Expansion>,
    pub beam: Vec<BeamEntry>,
}

/// Structural beam search advanced one depth at a time, so callers can
/// inspect or edit the beam between depths.
#[derive(Debug, Clone)]
pub struct BeamState {
    config: SearchConfig,
    depth: usize,
    beam: Vec<BeamCandidate>,
    history: Vec<DepthRecord>,
    pending_edits: Vec<EditRecord>,
}

impl BeamState {
    pub fn new(config: SearchConfig) -> Result<Self, SearchError> {
        config.validate()?;
        let config = SearchConfig {
            template: config.template.map(Template::attach_root),
            ..config
        };
        Ok(BeamState {
            config,
            depth: 0,
            beam: vec![BeamCandidate::root()],
            history: Vec::new(),
            pending_edits: Vec::new(),
        })
    }

    pub fn config(&self) -> &SearchConfig {
        &self.config
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn beam(&self) -> &[BeamCandidate] {
        &self.beam
    }

    pub fn history(&self) -> &[DepthRecord] {
        &self.history
    }

    pub fn entries(&self) -> Vec<BeamEntry> {
        self.beam
            .iter()
            .enumerate()
            .map(|(index, c)| BeamEntry {
                index,
                context: c.context.clone(),
                score: c.score,
                finished: c.finished,
                failed: c.failed,
            })
            .collect()
    }

    /// No live candidate remains or the depth limit is reached.
    pub fn is_done(&self) -> bool {
        self.depth >= self.config.d_max || !self.beam.iter().any(BeamCandidate::is_live)
    }

    /// Replaces a live candidate's context; its accumulated score is kept.
    pub fn edit(&mut self, index: usize, context: SyntaxContext, origin: &str) -> Result<(), SearchError> {
        if self.is_done() {
            return Err(SearchError::Finished);
        }
        let cand = self
            .beam
            .get_mut(index)
            .ok_or_else(|| SearchError::Edit(format!("no candidate at index {index}")))?;
        if !cand.is_live() {
            return Err(SearchError::Edit(format!("candidate {index} is no longer being expanded")));
        }
        let before = std::mem::replace(&mut cand.context, context.clone());
        cand.pending_edit.get_or_insert(before.clone());
        cand.finished = context.is_terminated();
        self.pending_edits.push(EditRecord {
            index,
            before,
            after: context,
            origin: origin.to_string(),
        });
        Ok(())
    }

    /// Expands every live candidate, accumulates scores, and prunes to `k`.
    pub fn step(&mut self, model: &dyn ScoreModel, source: &EncodedSource) -> Result<&DepthRecord, SearchError> {
        if self.is_done() {
            return Err(SearchError::Finished);
        }
        let cfg = &self.config;
        let depth = self.depth;
        let mut children: Vec<BeamCandidate> = Vec::new();
        let mut origins: Vec<Option<usize>> = Vec::new();
        let mut expansions = Vec::new();
        for (i, cand) in self.beam.iter().enumerate() {
            if !cand.is_live() {
                children.push(cand.clone());
                origins.push(None);
                continue;
            }
            let results = inner_beam_search(model, source, &cand.context, cfg.k, cfg.t_max)?;
            if results.is_empty() {
                let mut failed = cand.clone();
                failed.mark_failed(format!("no well-formed infilling for `{}` at depth {depth}", cand.context));
                children.push(failed);
                origins.push(None);
                continue;
            }
            for (delta_f, f) in results {
                let child = cand.expanded(depth, f.clone(), delta_f, cfg)?;
                let last = child.trace.steps.last().expect("just expanded");
                origins.push(Some(expansions.len()));
                expansions.push(Expansion {
                    parent_index: i,
                    infilling: f,
                    context: child.context.clone(),
                    delta_s: cand.score,
                    delta_f,
                    delta: last.delta,
                    reward: last.reward,
                    kept: None,
                });
                children.push(child);
            }
        }
        let mut order: Vec<usize> = (0..children.len()).collect();
        order.sort_by(|&a, &b| match children[a].failed.cmp(&children[b].failed) {
            Ordering::Equal => children[b].score.total_cmp(&children[a].score),
            o => o,
        });
        order.truncate(cfg.k);
        let mut beam = Vec::with_capacity(order.len());
        for (pos, &i) in order.iter().enumerate() {
            if let Some(e) = origins[i] {
                expansions[e].kept = Some(pos);
            }
            beam.push(children[i].clone());
        }
        self.beam = beam;
        self.depth += 1;
        let record = DepthRecord {
            depth,
            edits: std::mem::take(&mut self.pending_edits),
            expansions,
            beam: self.entries(),
        };
        self.history.push(record);
        Ok(self.history.last().expect("pushed"))
    }

    /// Final ranking. Candidates still unfinished are marked failed; it is an
    /// error only when no candidate produced any hypothesis at all.
    pub fn finish(&self) -> Result<Vec<BeamCandidate>, SearchError> {
        let mut out = self.beam.clone();
        for c in &mut out {
            if c.is_live() {
                c.mark_failed(format!("depth limit {} reached with `{}`", self.config.d_max, c.context));
            }
        }
        let exhausted = out
            .iter()
            .all(|c| c.failed && c.diagnostic.as_deref().is_some_and(|d| d.starts_with("no well-formed")));
        if exhausted {
            return Err(SearchError::BeamExhausted(
                out.iter().filter_map(|c| c.diagnostic.clone()).collect(),
            ));
        }
        rank(&mut out);
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutput {
    pub candidates: Vec<BeamCandidate>,
    pub depths: Vec<DepthRecord>,
}

/// Beam search over syntax contexts: each live candidate spawns up to `k`
/// children scored `α·δ_s + (1−α)·δ_f (+ γ)`, and the beam is pruned to `k`.
pub fn structural_beam_search(model: &dyn ScoreModel, source: &[String], config: &SearchConfig) -> Result<SearchOutput, SearchError> {
    let mut state = BeamState::new(config.clone())?;
    let h = model.encode_source(source);
    while !state.is_done() {
        state.step(model, &h)?;
    }
    Ok(SearchOutput {
        candidates: state.finish()?,
        depths: state.history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::{ParallelCorpus, Record};
    use crate::model::{train_count, CountModel};
    use crate::tree::{parse_bracketed, Whitelist};
    use crate::triplet::{Triplet, TripletSet, Vocab};

    fn ctx(s: &str) -> SyntaxContext {
        SyntaxContext::parse(s).unwrap()
    }

    fn seq(s: &str) -> InfillingSequence {
        InfillingSequence::parse(s).unwrap()
    }

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    fn model_for(trees: &[&str], eps: f64) -> (CountModel, ParallelCorpus) {
        let corpus = ParallelCorpus {
            records: trees
                .iter()
                .map(|s| {
                    let t = parse_bracketed(s).unwrap();
                    Record::new(t.yield_tokens(), t.yield_tokens(), t)
                })
                .collect(),
        };
        let wl = Whitelist::default();
        let ts = TripletSet::from_corpus(&corpus, &wl).unwrap();
        (train_count(&ts, Vocab::build(&corpus, &wl), eps).unwrap(), corpus)
    }

    #[test]
    fn splitting_groups() {
        assert_eq!(
            split_groups(&seq("<c> I <c> ate <NP>")).unwrap(),
            vec![vec![Item::token("I")], vec![Item::token("ate"), Item::placeholder("NP")]]
        );
        assert_eq!(split_groups(&seq("<c> a")).unwrap(), vec![vec![Item::token("a")]]);
        assert!(InfillingSequence::parse("<c> <c> a").is_err());
    }

    #[test]
    fn expansion() {
        assert_eq!(expand(&ctx("<NP> <VP> ."), &seq("<c> I <c> ate <NP>")).unwrap(), ctx("I ate <NP> ."));
        assert_eq!(expand(&ctx("<T>"), &seq("<c> a b")).unwrap(), ctx("a b"));
        assert!(matches!(
            expand(&ctx("<NP> <VP>"), &seq("<c> a")),
            Err(SearchError::CountMismatch { groups: 1, placeholders: 2 })
        ));
    }

    #[test]
    fn rewards() {
        let tpl = Template::parse("(S (NP) (VP))").unwrap();
        assert_eq!(template_reward(&ctx("<NP> <VP>"), Some(&tpl), 2, 0.32), 0.32);
        assert_eq!(template_reward(&ctx("did <NP> <VP> ?"), Some(&tpl), 2, 0.32), 0.32);
        assert_eq!(template_reward(&ctx("<VP> <NP>"), Some(&tpl), 2, 0.32), 0.0);
        assert_eq!(template_reward(&ctx("<NP> <VP>"), None, 2, 0.32), 0.0);
        assert_eq!(template_reward(&ctx("a b"), Some(&tpl), 5, 0.32), 0.0);
    }

    #[test]
    fn inner_beam_single_path() {
        let (m, corpus) = model_for(&["(S (NP I) (VP ate (NP an apple)) .)"], 1e-6);
        let h = m.encode_source(&corpus.records[0].source);
        let out = inner_beam_search(&m, &h, &ctx("<NP> <VP> ."), 1, 32).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].1, seq("<c> I <c> ate <NP>"));
        assert!(out[0].0.abs() < 1e-3);
    }

    #[test]
    fn inner_beam_ranks_by_count() {
        let src = toks("x");
        let mk = |f: &str| Triplet {
            source: src.clone(),
            context: SyntaxContext::root(),
            infilling: seq(f),
            depth: 0,
        };
        let ts = TripletSet {
            triplets: vec![mk("<c> a"), mk("<c> a"), mk("<c> a"), mk("<c> b")],
            records: vec![0, 1, 2, 3],
        };
        let m = train_count(&ts, Vocab::from_entries(toks("a b")), 1e-9).unwrap();
        let h = m.encode_source(&src);
        let out = inner_beam_search(&m, &h, &SyntaxContext::root(), 2, 8).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].1, seq("<c> a"));
        assert_eq!(out[1].1, seq("<c> b"));
        assert!((out[0].0 - 0.75f64.ln()).abs() < 1e-6);
        assert!((out[1].0 - 0.25f64.ln()).abs() < 1e-6);

        // every stored continuation needs three steps
        assert!(inner_beam_search(&m, &h, &SyntaxContext::root(), 2, 1).unwrap().is_empty());
    }

    #[test]
    fn greedy_memorizes_the_apple_record() {
        let (m, corpus) = model_for(&["(S (NP I) (VP ate (NP an apple)) .)"], 1e-4);
        let out = greedy_decode(&m, &corpus.records[0].source, &SearchConfig::default()).unwrap();
        assert!(out.finished && !out.failed);
        assert_eq!(out.tokens().join(" "), "I ate an apple .");
        assert_eq!(out.trace.steps.len(), 4);
        assert!(out.trace.is_consistent());
        let induced = crate::tree::induce_tree(&out.trace).unwrap();
        assert_eq!(induced, corpus.records[0].tree.clone().attach_root());
    }

    #[test]
    fn greedy_flat_and_depth_capped() {
        let (m, _) = model_for(&["(<T> a)"], 1e-4);
        let out = greedy_decode(&m, &toks("a"), &SearchConfig::default()).unwrap();
        assert_eq!(out.tokens(), ["a"]);

        let (m, corpus) = model_for(&["(S (NP I) (VP ate (NP an apple)) .)"], 1e-4);
        let cfg = SearchConfig {
            d_max: 1,
            ..SearchConfig::default()
        };
        let out = greedy_decode(&m, &corpus.records[0].source, &cfg).unwrap();
        assert!(out.failed && !out.finished);
        assert_eq!(out.context, ctx("<S>"));
        assert!(out.diagnostic.unwrap().contains("depth limit"));
    }

    #[test]
    fn accumulation_arithmetic() {
        let parent = BeamCandidate {
            score: -0.5,
            context: ctx("<NP>"),
            ..BeamCandidate::root()
        };
        let cfg = SearchConfig::default();
        let child = parent.expanded(1, seq("<c> a"), -1.5, &cfg).unwrap();
        assert!((child.score - -0.7).abs() < 1e-12);
    }

    #[test]
    fn alpha_one_freezes_scores() {
        let (m, corpus) = model_for(
            &["(S (NP I) (VP ate (NP an apple)) .)", "(S (NP you) (VP saw (NP a pear)) .)"],
            0.01,
        );
        let cfg = SearchConfig {
            alpha: 1.0,
            ..SearchConfig::default()
        };
        let out = structural_beam_search(&m, &corpus.records[0].source, &cfg).unwrap();
        for c in &out.candidates {
            assert_eq!(c.score, 0.0);
        }
        let cfg = SearchConfig {
            alpha: 0.0,
            ..SearchConfig::default()
        };
        let out = structural_beam_search(&m, &corpus.records[0].source, &cfg).unwrap();
        for c in out.candidates.iter().filter(|c| !c.failed) {
            assert_eq!(c.score, c.trace.steps.last().unwrap().delta_f);
        }
    }

    #[test]
    fn beam_of_one_matches_greedy() {
        let (m, corpus) = model_for(
            &["(S (NP I) (VP ate (NP an apple)) .)", "(S (NP you) (VP saw (NP a pear)) .)"],
            0.01,
        );
        for r in &corpus.records {
            for alpha in [0.0, 0.5, 0.8, 1.0] {
                let cfg = SearchConfig {
                    k: 1,
                    alpha,
                    ..SearchConfig::default()
                };
                let g = greedy_decode(&m, &r.source, &cfg).unwrap();
                let b = structural_beam_search(&m, &r.source, &cfg).unwrap();
                assert_eq!(b.candidates.len(), 1);
                assert_eq!(b.candidates[0].tokens(), g.tokens());
                assert_eq!(b.candidates[0].trace, g.trace);
            }
        }
    }

    #[test]
    fn beam_ranking_and_width() {
        let (m, corpus) = model_for(
            &["(S (NP I) (VP ate (NP an apple)) .)", "(S (NP you) (VP saw (NP a pear)) .)"],
            0.05,
        );
        let unseen = toks("a pear ate I .");
        for src in [&corpus.records[0].source, &unseen] {
            let out = structural_beam_search(&m, src, &SearchConfig::default()).unwrap();
            assert!(out.candidates.len() <= 5);
            let live: Vec<f64> = out.candidates.iter().filter(|c| !c.failed).map(|c| c.score).collect();
            assert!(live.windows(2).all(|w| w[0] >= w[1]));
            for d in &out.depths {
                assert!(d.beam.len() <= 5);
            }
            for c in out.candidates.iter().filter(|c| c.finished) {
                assert!(c.trace.is_consistent());
                let induced = crate::tree::induce_tree(&c.trace).unwrap();
                assert_eq!(induced.yield_tokens(), c.tokens());
            }
        }
    }

    #[test]
    fn zero_gamma_template_is_inert() {
        let (m, corpus) = model_for(
            &["(S (NP I) (VP ate (NP an apple)) .)", "(S (NP you) (VP saw (NP a pear)) .)"],
            0.05,
        );
        let base = SearchConfig::default();
        let with_tpl = SearchConfig {
            template: Some(Template::parse("(S (VP) (NP))").unwrap()),
            gamma: 0.0,
            ..base.clone()
        };
        let a = structural_beam_search(&m, &corpus.records[1].source, &base).unwrap();
        let b = structural_beam_search(&m, &corpus.records[1].source, &with_tpl).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn edits_steer_the_next_depth() {
        let (m, corpus) = model_for(
            &["(S (NP I) (VP ate (NP an apple)) .)", "(S did (NP you) (VP see (NP a pear)) ?)"],
            0.01,
        );
        let h = m.encode_source(&corpus.records[0].source);
        let mut st = BeamState::new(SearchConfig {
            k: 1,
            ..SearchConfig::default()
        })
        .unwrap();
        st.step(&m, &h).unwrap();
        st.step(&m, &h).unwrap();
        assert_eq!(st.beam()[0].context, ctx("<NP> <VP> ."));
        st.edit(0, ctx("did <NP> <VP> ?"), "human").unwrap();
        let rec = st.step(&m, &h).unwrap().clone();
        assert_eq!(rec.edits.len(), 1);
        assert!(!rec.expansions.is_empty());
        for e in &rec.expansions {
            assert_eq!(e.parent_index, 0);
            assert_eq!(e.context.items().first(), Some(&Item::token("did")));
            assert_eq!(e.context.items().last(), Some(&Item::token("?")));
        }
        let step = &st.beam()[0].trace.steps[2];
        assert_eq!(step.context, ctx("did <NP> <VP> ?"));
        assert_eq!(step.edited_from, Some(ctx("<NP> <VP> .")));
        assert!(st.beam()[0].trace.is_consistent());
        assert!(st.edit(9, ctx("a"), "human").is_err());
    }

    #[test]
    fn config_validation() {
        assert!(BeamState::new(SearchConfig { k: 0, ..SearchConfig::default() }).is_err());
        assert!(BeamState::new(SearchConfig { alpha: 1.5, ..SearchConfig::default() }).is_err());
        assert!(BeamState::new(SearchConfig { gamma: -1.0, ..SearchConfig::default() }).is_err());
        let json = serde_json::to_string(&SearchConfig {
            template: Some(Template::parse("(S (NP))").unwrap()),
            ..SearchConfig::default()
        })
        .unwrap();
        assert!(json.contains(r#""template":"(S (NP))""#));
        let back: SearchConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back.template.unwrap().to_bracketed(), "(S (NP))");
        let partial: SearchConfig = serde_json::from_str(r#"{"k": 2}"#).unwrap();
        assert_eq!(partial.k, 2);
        assert_eq!(partial.alpha, 0.8);
    }
}
