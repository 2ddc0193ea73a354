use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{GrammarError, Pcfg, TransformSet};
use crate::tree::{parse_bracketed, ConstTree, Whitelist, ROOT_LABEL};

/// One aligned example: source tokens, target tokens and the target's tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub source: Vec<String>,
    pub target: Vec<String>,
    pub tree: ConstTree,
    /// Name of the rewrite that produced the target, when known.
    pub transform: Option<String>,
}

impl Record {
    pub fn new(source: Vec<String>, target: Vec<String>, tree: ConstTree) -> Self {
        Record {
            source,
            target,
            tree,
            transform: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParallelCorpus {
    pub records: Vec<Record>,
}

fn with_ext(prefix: &Path, ext: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

impl ParallelCorpus {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn trees(&self) -> Vec<ConstTree> {
        self.records.iter().map(|r| r.tree.clone()).collect()
    }

    /// Same records with their trees replaced (yields must not change).
    pub fn with_trees(&self, trees: Vec<ConstTree>) -> Result<ParallelCorpus, GrammarError> {
        if trees.len() != self.records.len() {
            return Err(GrammarError::Corpus("tree count differs from record count".into()));
        }
        let records = self
            .records
            .iter()
            .zip(trees)
            .map(|(r, tree)| {
                if tree.yield_tokens() != r.target {
                    return Err(GrammarError::Corpus("tree yield differs from target".into()));
                }
                Ok(Record { tree, ..r.clone() })
            })
            .collect::<Result<_, _>>()?;
        Ok(ParallelCorpus { records })
    }

    pub fn src_path(prefix: &Path) -> PathBuf {
        with_ext(prefix, "src")
    }

    pub fn tgt_path(prefix: &Path) -> PathBuf {
        with_ext(prefix, "tgt")
    }

    pub fn tree_path(prefix: &Path) -> PathBuf {
        with_ext(prefix, "tree")
    }

    pub fn meta_path(prefix: &Path) -> PathBuf {
        with_ext(prefix, "meta")
    }

    /// Writes `<prefix>.src`, `.tgt`, `.tree` and `.meta`, line-aligned.
    pub fn write(&self, prefix: &Path) -> Result<(), GrammarError> {
        let mut src = Vec::new();
        let mut tgt = Vec::new();
        let mut tree = Vec::new();
        let mut meta = Vec::new();
        for r in &self.records {
            writeln!(src, "{}", r.source.join(" "))?;
            writeln!(tgt, "{}", r.target.join(" "))?;
            writeln!(tree, "{}", r.tree)?;
            writeln!(meta, "{}", r.transform.as_deref().unwrap_or("-"))?;
        }
        fs::write(Self::src_path(prefix), src)?;
        fs::write(Self::tgt_path(prefix), tgt)?;
        fs::write(Self::tree_path(prefix), tree)?;
        fs::write(Self::meta_path(prefix), meta)?;
        Ok(())
    }

    /// Reads the files written by [`ParallelCorpus::write`]; the metadata
    /// sidecar is optional.
    pub fn read(prefix: &Path) -> Result<Self, GrammarError> {
        let src = fs::read_to_string(Self::src_path(prefix))?;
        let tgt = fs::read_to_string(Self::tgt_path(prefix))?;
        let trees = fs::read_to_string(Self::tree_path(prefix))?;
        let meta = fs::read_to_string(Self::meta_path(prefix)).ok();
        let src: Vec<&str> = src.lines().collect();
        let tgt: Vec<&str> = tgt.lines().collect();
        let trees: Vec<&str> = trees.lines().collect();
        if src.len() != tgt.len() || tgt.len() != trees.len() {
            return Err(GrammarError::Corpus(format!(
                "misaligned files: {} sources, {} targets, {} trees",
                src.len(),
                tgt.len(),
                trees.len()
            )));
        }
        let meta: Vec<Option<String>> = match meta {
            Some(m) => {
                let v: Vec<Option<String>> = m
                    .lines()
                    .map(|l| (l != "-").then(|| l.to_string()))
                    .collect();
                if v.len() != src.len() {
                    return Err(GrammarError::Corpus("metadata is not line-aligned".into()));
                }
                v
            }
            None => vec![None; src.len()],
        };
        let mut records = Vec::with_capacity(src.len());
        for (i, (((s, t), tr), m)) in src.iter().zip(&tgt).zip(&trees).zip(meta).enumerate() {
            let tree = parse_bracketed(tr).map_err(|e| GrammarError::Corpus(format!("line {}: {e}", i + 1)))?;
            let target: Vec<String> = t.split_whitespace().map(str::to_string).collect();
            if tree.yield_tokens() != target {
                return Err(GrammarError::Corpus(format!("line {}: tree yield differs from target", i + 1)));
            }
            records.push(Record {
                source: s.split_whitespace().map(str::to_string).collect(),
                target,
                tree,
                transform: m,
            });
        }
        Ok(ParallelCorpus { records })
    }
}

#[derive(Debug, Clone)]
pub struct CorpusOptions {
    /// Maximum height of sampled trees.
    pub max_depth: usize,
    /// Reject samples whose source sentence was already emitted.
    pub unique_sources: bool,
    /// Samples drawn per record before giving up.
    pub retries: usize,
}

impl Default for CorpusOptions {
    fn default() -> Self {
        CorpusOptions {
            max_depth: 8,
            unique_sources: false,
            retries: 1000,
        }
    }
}

/// `n` paraphrase pairs: each record picks a rewrite uniformly, then samples
/// source trees until the rewrite applies.
pub fn gen_paraphrase_corpus(
    pcfg: &Pcfg,
    transforms: &TransformSet,
    n: usize,
    seed: u64,
) -> Result<ParallelCorpus, GrammarError> {
    gen_paraphrase_corpus_with(pcfg, transforms, n, seed, &CorpusOptions::default())
}

pub fn gen_paraphrase_corpus_with(
    pcfg: &Pcfg,
    transforms: &TransformSet,
    n: usize,
    seed: u64,
    options: &CorpusOptions,
) -> Result<ParallelCorpus, GrammarError> {
    if transforms.0.is_empty() {
        return Err(GrammarError::UnknownTransform(String::new()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen: HashSet<Vec<String>> = HashSet::new();
    let mut records = Vec::with_capacity(n);
    for _ in 0..n {
        let tr = transforms.0[rng.gen_range(0..transforms.0.len())];
        let mut made = None;
        for _ in 0..options.retries {
            let tree = pcfg.sample_with(&mut rng, options.max_depth)?;
            let source = tree.yield_tokens();
            if options.unique_sources && seen.contains(&source) {
                continue;
            }
            if let Some(out) = tr.apply(&tree) {
                made = Some((source, out));
                break;
            }
        }
        let (source, tree) = made.ok_or(GrammarError::TransformInapplicable(options.retries))?;
        if options.unique_sources {
            seen.insert(source.clone());
        }
        records.push(Record {
            source,
            target: tree.yield_tokens(),
            tree,
            transform: Some(tr.name().to_string()),
        });
    }
    Ok(ParallelCorpus { records })
}

/// Relabels exactly `round(ratio · N)` of the `N` non-root constituents
/// (rounding half up), chosen uniformly without replacement, each to a
/// uniformly drawn different label from `pool`.
pub fn inject_label_noise(
    trees: &[ConstTree],
    ratio: f64,
    pool: &Whitelist,
    seed: u64,
) -> Result<Vec<ConstTree>, GrammarError> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(GrammarError::BadRatio(ratio));
    }
    if pool.is_empty() {
        return Err(GrammarError::EmptyPool);
    }
    let eligible: usize = trees
        .iter()
        .map(|t| t.labeled_spans().iter().filter(|s| s.label != ROOT_LABEL).count())
        .sum();
    let count = (ratio * eligible as f64 + 0.5).floor() as usize;
    let count = count.min(eligible);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen: BTreeSet<usize> = index::sample(&mut rng, eligible, count).into_iter().collect();
    let labels: Vec<&str> = pool.iter().collect();

    let mut position = 0usize;
    let mut out = Vec::with_capacity(trees.len());
    let mut failure = None;
    for t in trees {
        let noisy = t.map_labels(|_, label| {
            if label == ROOT_LABEL {
                return label.to_string();
            }
            let hit = chosen.contains(&position);
            position += 1;
            if !hit || failure.is_some() {
                return label.to_string();
            }
            let options: Vec<&str> = labels.iter().copied().filter(|l| *l != label).collect();
            if options.is_empty() {
                failure = Some(label.to_string());
                return label.to_string();
            }
            options[rng.gen_range(0..options.len())].to_string()
        });
        out.push(noisy);
    }
    match failure {
        Some(l) => Err(GrammarError::NoAlternativeLabel(l)),
        None => Ok(out),
    }
}
