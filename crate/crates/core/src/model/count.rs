//! Trie-backed count model: exact relative frequencies of infilling tokens
//! per (source, context) key, with additive smoothing and a context-only
//! backoff.

use std::collections::{BTreeMap, HashMap};

use super::{infilling_ids, EncodedContext, EncodedSource, ModelError, ModelKind, ScoreModel};
use crate::tree::SyntaxContext;
use crate::triplet::{TripletSet, Vocab};

/// FNV-1a over the token strings, with a unit separator between tokens.
pub(crate) fn hash_tokens<I, S>(tokens: I) -> u64
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for t in tokens {
        for b in t.as_ref().bytes().chain(std::iter::once(0x1f)) {
            h ^= u64::from(b);
            h = h.wrapping_mul(PRIME);
        }
    }
    h
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TrieNode {
    pub total: u64,
    pub children: BTreeMap<u32, (u64, TrieNode)>,
}

impl TrieNode {
    fn insert(&mut self, ids: &[u32]) {
        let Some((&first, rest)) = ids.split_first() else {
            return;
        };
        self.total += 1;
        let (count, child) = self.children.entry(first).or_default();
        *count += 1;
        child.insert(rest);
    }

    fn walk(&self, prefix: &[u32]) -> Option<&TrieNode> {
        let mut node = self;
        for id in prefix {
            node = &node.children.get(id)?.1;
        }
        Some(node)
    }

    /// Child counts sum to the visit count at every node.
    pub fn is_consistent(&self) -> bool {
        self.children.values().map(|(c, _)| c).sum::<u64>() == self.total
            && self.children.values().all(|(_, n)| n.is_consistent())
    }

    fn branches(&self) -> bool {
        self.children.len() > 1 || self.children.values().any(|(_, n)| n.branches())
    }
}

/// Exact (smoothed) relative-frequency scorer.
#[derive(Debug, Clone, PartialEq)]
pub struct CountModel {
    pub(crate) vocab: Vocab,
    pub(crate) smoothing: f64,
    pub(crate) pairs: HashMap<(u64, u64), TrieNode>,
    pub(crate) contexts: HashMap<u64, TrieNode>,
}

/// Counts every triplet's infilling (plus end marker) under its
/// (source, context) key and under its context alone.
pub fn train_count(triplets: &TripletSet, vocab: Vocab, smoothing: f64) -> Result<CountModel, ModelError> {
    if triplets.is_empty() {
        return Err(ModelError::EmptyTrainingSet);
    }
    if !(smoothing > 0.0 && smoothing < 1.0) {
        return Err(ModelError::Config(format!("smoothing {smoothing} outside (0, 1)")));
    }
    let mut model = CountModel {
        vocab,
        smoothing,
        pairs: HashMap::new(),
        contexts: HashMap::new(),
    };
    for t in triplets.iter() {
        let ids = infilling_ids(&model.vocab, &t.infilling)?;
        let sk = hash_tokens(&t.source);
        let ck = hash_tokens(t.context.surfaces());
        model.pairs.entry((sk, ck)).or_default().insert(&ids);
        model.contexts.entry(ck).or_default().insert(&ids);
    }
    Ok(model)
}

impl CountModel {
    pub fn smoothing(&self) -> f64 {
        self.smoothing
    }

    pub fn pair_count(&self) -> usize {
        self.pairs.len()
    }

    /// Number of (source, context) keys seen with more than one infilling.
    pub fn ambiguous_keys(&self) -> usize {
        self.pairs.values().filter(|n| n.branches()).count()
    }

    pub fn is_consistent(&self) -> bool {
        self.pairs.values().chain(self.contexts.values()).all(TrieNode::is_consistent)
    }

    fn distribution(&self, node: &TrieNode) -> Vec<f64> {
        let v = self.vocab.len() as f64;
        let denom = (node.total as f64 + self.smoothing * v).ln();
        let floor = self.smoothing.ln() - denom;
        let mut out = vec![floor; self.vocab.len()];
        for (&id, (count, _)) in &node.children {
            out[id as usize] = (*count as f64 + self.smoothing).ln() - denom;
        }
        out
    }
}

impl ScoreModel for CountModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Count
    }

    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn encode_source(&self, source: &[String]) -> EncodedSource {
        EncodedSource::Count {
            key: hash_tokens(source),
        }
    }

    fn encode_context(&self, source: &EncodedSource, context: &SyntaxContext) -> Result<EncodedContext, ModelError> {
        let EncodedSource::Count { key } = source else {
            return Err(ModelError::KindMismatch);
        };
        Ok(EncodedContext::Count {
            source: *key,
            context: hash_tokens(context.surfaces()),
        })
    }

    fn next_logprobs_encoded(&self, context: &EncodedContext, prefix: &[u32]) -> Result<Vec<f64>, ModelError> {
        let EncodedContext::Count { source, context } = context else {
            return Err(ModelError::KindMismatch);
        };
        let node = self
            .pairs
            .get(&(*source, *context))
            .and_then(|n| n.walk(prefix))
            .filter(|n| n.total > 0)
            .or_else(|| {
                self.contexts
                    .get(context)
                    .and_then(|n| n.walk(prefix))
                    .filter(|n| n.total > 0)
            });
        Ok(match node {
            Some(n) => self.distribution(n),
            None => vec![-(self.vocab.len() as f64).ln(); self.vocab.len()],
        })
    }
}
