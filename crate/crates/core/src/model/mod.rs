//! Conditional scorers for infilling sequences given a source sentence and a
//! syntax context.

mod autodiff;
mod count;
pub mod io;
pub mod neural;

use std::sync::Arc;

use ndarray::Array2;
use thiserror::Error;

use crate::tree::SyntaxContext;
use crate::triplet::{InfillToken, InfillingSequence, Vocab};

pub use count::{train_count, CountModel, TrieNode};
pub use io::{load_model, save_model};
pub use neural::{
    ce_loss, eval_loss, grad_check, grad_check_with, init_neural, train_neural, train_neural_from, GradCheck, GradCheckOptions,
    LogEntry, LossAndGrad, NeuralConfig, NeuralModel, TrainLog,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("token `{0}` is not in the vocabulary")]
    OutOfVocab(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("empty training set")]
    EmptyTrainingSet,
    #[error("empty batch")]
    EmptyBatch,
    #[error("training diverged at step {0} (non-finite loss)")]
    Diverged(usize),
    #[error("model file: {0}")]
    Format(String),
    #[error("unsupported model file version {0}")]
    Version(u32),
    #[error("encoded input belongs to a different model kind")]
    KindMismatch,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Count,
    Neural,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Count => "count",
            ModelKind::Neural => "neural",
        }
    }
}

/// Source representation computed once per decode and reused at every depth.
#[derive(Debug, Clone)]
pub enum EncodedSource {
    Count { key: u64 },
    Neural(Arc<Array2<f64>>),
}

/// Syntax-context representation, computed once per context and reused for
/// every prefix of the inner beam.
#[derive(Debug, Clone)]
pub enum EncodedContext {
    Count { source: u64, context: u64 },
    Neural { source: Arc<Array2<f64>>, context: Array2<f64> },
}

/// p(f_t | x, s, f_<t) behind one interface.
pub trait ScoreModel: Send + Sync {
    fn kind(&self) -> ModelKind;

    fn vocab(&self) -> &Vocab;

    fn encode_source(&self, source: &[String]) -> EncodedSource;

    fn encode_context(&self, source: &EncodedSource, context: &SyntaxContext) -> Result<EncodedContext, ModelError>;

    /// Log-probabilities over the whole vocabulary for the token following
    /// `prefix` (ids, without the begin marker).
    fn next_logprobs_encoded(&self, context: &EncodedContext, prefix: &[u32]) -> Result<Vec<f64>, ModelError>;

    fn next_logprobs(&self, source: &EncodedSource, context: &SyntaxContext, prefix: &[u32]) -> Result<Vec<f64>, ModelError> {
        let enc = self.encode_context(source, context)?;
        self.next_logprobs_encoded(&enc, prefix)
    }
}

/// Vocabulary ids of an infilling sequence followed by the end marker.
pub fn infilling_ids(vocab: &Vocab, f: &InfillingSequence) -> Result<Vec<u32>, ModelError> {
    let mut ids = Vec::with_capacity(f.len() + 1);
    for t in f.tokens() {
        let s = t.surface();
        ids.push(vocab.id(&s).ok_or(ModelError::OutOfVocab(s))?);
    }
    ids.push(vocab.eos());
    Ok(ids)
}

/// Inverse of [`infilling_ids`] for ids without the end marker. Returns
/// `None` when an id is a reserved marker other than the separator.
pub fn ids_to_infilling(vocab: &Vocab, ids: &[u32]) -> Option<InfillingSequence> {
    let mut tokens = Vec::with_capacity(ids.len());
    for &id in ids {
        if id == vocab.sep() {
            tokens.push(InfillToken::Sep);
        } else if vocab.is_reserved(id) {
            return None;
        } else {
            tokens.push(InfillToken::from_surface(vocab.token(id)).ok()?);
        }
    }
    Some(InfillingSequence::unchecked(tokens))
}

/// Σ_t log p(f_t | x, s, f_<t), including the end marker.
pub fn score_sequence(
    model: &dyn ScoreModel,
    source: &EncodedSource,
    context: &SyntaxContext,
    f: &InfillingSequence,
) -> Result<f64, ModelError> {
    let ids = infilling_ids(model.vocab(), f)?;
    let enc = model.encode_context(source, context)?;
    let mut total = 0.0;
    for t in 0..ids.len() {
        let lp = model.next_logprobs_encoded(&enc, &ids[..t])?;
        total += lp[ids[t] as usize];
    }
    Ok(total)
}

/// Either scorer, chosen at load time.
pub enum AnyModel {
    Count(CountModel),
    Neural(NeuralModel),
}

impl AnyModel {
    pub fn as_dyn(&self) -> &dyn ScoreModel {
        match self {
            AnyModel::Count(m) => m,
            AnyModel::Neural(m) => m,
        }
    }
}

impl ScoreModel for AnyModel {
    fn kind(&self) -> ModelKind {
        self.as_dyn().kind()
    }

    fn vocab(&self) -> &Vocab {
        self.as_dyn().vocab()
    }

    fn encode_source(&self, source: &[String]) -> EncodedSource {
        self.as_dyn().encode_source(source)
    }

    fn encode_context(&self, source: &EncodedSource, context: &SyntaxContext) -> Result<EncodedContext, ModelError> {
        self.as_dyn().encode_context(source, context)
    }

    fn next_logprobs_encoded(&self, context: &EncodedContext, prefix: &[u32]) -> Result<Vec<f64>, ModelError> {
        self.as_dyn().next_logprobs_encoded(context, prefix)
    }
}
