//! Depth-indexed (source, syntax context, infilling) training triplets.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grammar::{ParallelCorpus, Record};
use crate::search::expand;
use crate::tree::{ConstTree, Item, SyntaxContext, TreeError, Whitelist, ROOT_LABEL, SEPARATOR};

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";

#[derive(Debug, Error)]
pub enum TripletError {
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error("infilling must start with {SEPARATOR}")]
    MissingSeparator,
    #[error("infilling group {0} is empty")]
    EmptyGroup(usize),
    #[error("infilling contains the root label")]
    RootInInfilling,
    #[error("no constituent at depth {0}")]
    NoPlaceholder(usize),
    #[error("{groups} infilling groups for {placeholders} placeholders")]
    GroupCount { groups: usize, placeholders: usize },
    #[error("target does not match the tree yield")]
    YieldMismatch,
    #[error("line {line}: {detail}")]
    Format { line: usize, detail: String },
    #[error("invalid vocabulary: {0}")]
    Vocab(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One position of an infilling sequence.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum InfillToken {
    Sep,
    Item(Item),
}

impl InfillToken {
    pub fn surface(&self) -> String {
        match self {
            InfillToken::Sep => SEPARATOR.to_string(),
            InfillToken::Item(i) => i.surface(),
        }
    }

    pub fn from_surface(s: &str) -> Result<Self, TreeError> {
        if s == SEPARATOR {
            Ok(InfillToken::Sep)
        } else {
            Item::from_surface(s).map(InfillToken::Item)
        }
    }
}

/// Concatenated next-level expansions, one `<c>`-led group per placeholder.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct InfillingSequence {
    tokens: Vec<InfillToken>,
}

impl InfillingSequence {
    /// Builds a sequence, requiring a leading separator, nonempty groups and
    /// no root label.
    pub fn new(tokens: Vec<InfillToken>) -> Result<Self, TripletError> {
        let seq = InfillingSequence { tokens };
        seq.groups()?;
        Ok(seq)
    }

    /// Wraps tokens without validation; used for raw model output.
    pub fn unchecked(tokens: Vec<InfillToken>) -> Self {
        InfillingSequence { tokens }
    }

    pub fn from_groups(groups: &[Vec<Item>]) -> Result<Self, TripletError> {
        let mut tokens = Vec::new();
        for g in groups {
            tokens.push(InfillToken::Sep);
            tokens.extend(g.iter().cloned().map(InfillToken::Item));
        }
        Self::new(tokens)
    }

    pub fn parse(text: &str) -> Result<Self, TripletError> {
        Self::from_surfaces(text.split_whitespace())
    }

    pub fn from_surfaces<I, S>(surfaces: I) -> Result<Self, TripletError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let tokens = surfaces
            .into_iter()
            .map(|s| InfillToken::from_surface(s.as_ref()))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(tokens)
    }

    pub fn tokens(&self) -> &[InfillToken] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn surfaces(&self) -> Vec<String> {
        self.tokens.iter().map(InfillToken::surface).collect()
    }

    /// Splits at each separator.
    pub fn groups(&self) -> Result<Vec<Vec<Item>>, TripletError> {
        let mut groups: Vec<Vec<Item>> = Vec::new();
        for (i, t) in self.tokens.iter().enumerate() {
            match t {
                InfillToken::Sep => {
                    if let Some(last) = groups.last() {
                        if last.is_empty() {
                            return Err(TripletError::EmptyGroup(groups.len() - 1));
                        }
                    }
                    groups.push(Vec::new());
                }
                InfillToken::Item(item) => {
                    if i == 0 {
                        return Err(TripletError::MissingSeparator);
                    }
                    if matches!(item, Item::Placeholder(l) if l == ROOT_LABEL) {
                        return Err(TripletError::RootInInfilling);
                    }
                    groups.last_mut().expect("separator seen").push(item.clone());
                }
            }
        }
        match groups.last() {
            None => Err(TripletError::MissingSeparator),
            Some(g) if g.is_empty() => Err(TripletError::EmptyGroup(groups.len() - 1)),
            Some(_) => Ok(groups),
        }
    }

    pub fn group_count(&self) -> usize {
        self.tokens.iter().filter(|t| matches!(t, InfillToken::Sep)).count()
    }
}

impl fmt::Display for InfillingSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.surfaces().join(" "))
    }
}

impl Serialize for InfillingSequence {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.surfaces().serialize(s)
    }
}

impl<'de> Deserialize<'de> for InfillingSequence {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = Vec::<String>::deserialize(d)?;
        InfillingSequence::from_surfaces(&v).map_err(serde::de::Error::custom)
    }
}

/// The oracle infilling of every constituent at depth `d`.
pub fn infilling_for_depth(tree: &ConstTree, d: usize) -> Result<InfillingSequence, TripletError> {
    let nodes = tree.nodes_at_depth(d);
    if nodes.is_empty() {
        return Err(TripletError::NoPlaceholder(d));
    }
    let mut tokens = Vec::new();
    for node in nodes {
        tokens.push(InfillToken::Sep);
        if let crate::tree::Node::Internal { children, .. } = node {
            for c in children {
                tokens.push(InfillToken::Item(match c {
                    crate::tree::Node::Leaf(t) => Item::Token(t.clone()),
                    crate::tree::Node::Internal { label, .. } => Item::Placeholder(label.clone()),
                }));
            }
        }
    }
    InfillingSequence::new(tokens)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Triplet {
    pub source: Vec<String>,
    pub context: SyntaxContext,
    pub infilling: InfillingSequence,
    pub depth: usize,
}

impl Triplet {
    pub fn check(&self) -> Result<(), TripletError> {
        let groups = self.infilling.groups()?.len();
        let placeholders = self.context.placeholder_count();
        if groups != placeholders {
            return Err(TripletError::GroupCount {
                groups,
                placeholders,
            });
        }
        Ok(())
    }
}

/// Decomposes one record into its level-order triplets, starting at the
/// `<T>` root (depth 0).
pub fn build_triplets(record: &Record, whitelist: &Whitelist) -> Result<Vec<Triplet>, TripletError> {
    if whitelist.is_empty() {
        return Err(TreeError::EmptyWhitelist.into());
    }
    if record.tree.yield_refs() != record.target.iter().map(String::as_str).collect::<Vec<_>>() {
        return Err(TripletError::YieldMismatch);
    }
    let tree = record.tree.clone().attach_root().normalize(whitelist)?;
    let mut out = Vec::new();
    for depth in 0.. {
        let context = tree.frontier_at_depth(depth);
        if context.is_terminated() {
            break;
        }
        let infilling = infilling_for_depth(&tree, depth)?;
        out.push(Triplet {
            source: record.source.clone(),
            context,
            infilling,
            depth,
        });
    }
    Ok(out)
}

/// All triplets of a corpus with the index of the record each came from.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TripletSet {
    pub triplets: Vec<Triplet>,
    pub records: Vec<usize>,
}

impl TripletSet {
    pub fn from_corpus(corpus: &ParallelCorpus, whitelist: &Whitelist) -> Result<Self, TripletError> {
        let mut set = TripletSet::default();
        for (i, r) in corpus.records.iter().enumerate() {
            for t in build_triplets(r, whitelist)? {
                set.triplets.push(t);
                set.records.push(i);
            }
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Triplet> {
        self.triplets.iter()
    }

    /// One triplet per line: source, context and infilling, tab-separated.
    pub fn write<W: Write>(&self, mut w: W) -> Result<(), TripletError> {
        for t in &self.triplets {
            writeln!(w, "{}\t{}\t{}", t.source.join(" "), t.context, t.infilling)?;
        }
        Ok(())
    }

    /// Reads the line format back, validating every invariant. A context of
    /// `<T>` opens a new record; depths count up from there and each context
    /// must be the expansion of the previous one.
    pub fn read<R: BufRead>(r: R) -> Result<Self, TripletError> {
        let mut set = TripletSet::default();
        let mut expected: Option<SyntaxContext> = None;
        let mut record = 0usize;
        let mut depth = 0usize;
        for (n, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let err = |detail: String| TripletError::Format { line: n + 1, detail };
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(err(format!("expected 3 tab-separated fields, found {}", fields.len())));
            }
            let source: Vec<String> = fields[0].split_whitespace().map(str::to_string).collect();
            let context = SyntaxContext::parse(fields[1]).map_err(|e| err(e.to_string()))?;
            let infilling = InfillingSequence::parse(fields[2]).map_err(|e| err(e.to_string()))?;
            if context == SyntaxContext::root() {
                if !set.is_empty() {
                    record += 1;
                }
                depth = 0;
            } else {
                match &expected {
                    Some(e) if *e == context => depth += 1,
                    _ => return Err(err(format!("context `{context}` does not continue the previous triplet"))),
                }
                if set.triplets.last().map(|t| &t.source) != Some(&source) {
                    return Err(err("source changed within a record".into()));
                }
            }
            let t = Triplet {
                source,
                context,
                infilling,
                depth,
            };
            t.check().map_err(|e| err(e.to_string()))?;
            expected = Some(expand(&t.context, &t.infilling).map_err(|e| err(e.to_string()))?);
            set.triplets.push(t);
            set.records.push(record);
        }
        Ok(set)
    }
}

/// Dense token ↔ id mapping. Reserved symbols come first, then every other
/// entry in lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

pub const RESERVED: [&str; 5] = [BOS, EOS, UNK, SEPARATOR, ROOT_LABEL];

impl Vocab {
    /// Builds a vocabulary from arbitrary entries; reserved symbols are
    /// always present and duplicates collapse.
    pub fn from_entries<I, S>(entries: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let rest: BTreeSet<String> = entries
            .into_iter()
            .map(Into::into)
            .filter(|e| !RESERVED.contains(&e.as_str()))
            .collect();
        let tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).chain(rest).collect();
        Self::from_ordered(tokens).expect("reserved prefix and distinct entries")
    }

    /// Rebuilds a vocabulary from a stored id order.
    pub fn from_ordered(tokens: Vec<String>) -> Result<Self, TripletError> {
        if tokens.len() < RESERVED.len() || tokens[..RESERVED.len()] != RESERVED {
            return Err(TripletError::Vocab(format!("must start with {}", RESERVED.join(" "))));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(TripletError::Vocab(format!("duplicate entry `{t}`")));
            }
        }
        Ok(Vocab { tokens, index })
    }

    pub fn build(corpus: &ParallelCorpus, whitelist: &Whitelist) -> Self {
        let mut entries: Vec<String> = whitelist.iter().map(crate::tree::placeholder_surface).collect();
        for r in &corpus.records {
            entries.extend(r.source.iter().cloned());
            entries.extend(r.target.iter().cloned());
        }
        Self::from_entries(entries)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn bos(&self) -> u32 {
        0
    }

    pub fn eos(&self) -> u32 {
        1
    }

    pub fn unk(&self) -> u32 {
        2
    }

    pub fn sep(&self) -> u32 {
        3
    }

    pub fn root(&self) -> u32 {
        4
    }

    pub fn is_reserved(&self, id: u32) -> bool {
        (id as usize) < RESERVED.len()
    }
}
