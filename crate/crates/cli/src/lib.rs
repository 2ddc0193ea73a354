//! The `syngen` command line. Every command prints exactly one JSON summary
//! line on stdout; progress and tables go to stderr. Exit codes: 1 usage
//! error, 2 data or validation error, 3 runtime failure.

use std::ffi::OsString;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use syngen::grammar::{
    gen_paraphrase_corpus_with, inject_label_noise, load_pcfg, CorpusOptions, GrammarError, ParallelCorpus, Pcfg,
    TransformSet, TOY_GRAMMAR,
};
use syngen::metrics::{beam_diversity, interp_report, BeamHyp, EvalReport, MetricConfig, MetricError};
use syngen::model::{
    load_model, save_model, train_count, train_neural, AnyModel, ModelError, NeuralConfig, ScoreModel,
};
use syngen::search::{greedy_decode, structural_beam_search, DecodeTrace, SearchConfig, SearchError};
use syngen::tree::{induce_tree, parse_bracketed, placeholder_surface, ConstTree, Template, TreeError, Whitelist, ROOT_LABEL};
use syngen::triplet::{TripletError, TripletSet, Vocab};
use syngen_service::{AppState, Hypothesis, ServiceConfig};

#[derive(Debug, Parser)]
#[command(name = "syngen", version, about = "Syntax-guided top-down text generation")]
pub struct Cli {
    /// Seed for every stochastic step; required by synth, noise and neural training.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Constituent labels kept as placeholders, comma-separated.
    #[arg(long, global = true, default_value = "NP,VP,PP,S,SBAR,ADJP,ADVP")]
    pub labels: String,
    /// Suppress progress output on stderr.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a paraphrase corpus from a grammar.
    Synth(SynthArgs),
    /// Decompose a corpus into (source, context, infilling) triplets.
    BuildTriplets(BuildTripletsArgs),
    /// Train a count or neural model on triplets.
    Train(TrainArgs),
    /// Decode source sentences with a trained model.
    Generate(GenerateArgs),
    /// Score hypotheses against references and sources.
    Eval(EvalArgs),
    /// Agreement between induced trees and grammar re-parses.
    InterpEval(InterpEvalArgs),
    /// Relabel a fraction of a corpus's constituents.
    Noise(NoiseArgs),
    /// Serve step-wise decoding sessions over HTTP.
    Serve(ServeArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::BuildTriplets(_) => "build-triplets",
            Command::Train(_) => "train",
            Command::Generate(_) => "generate",
            Command::Eval(_) => "eval",
            Command::InterpEval(_) => "interp-eval",
            Command::Noise(_) => "noise",
            Command::Serve(_) => "serve",
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Grammar file; the bundled toy grammar when omitted.
    #[arg(long)]
    pub grammar: Option<PathBuf>,
    /// Number of records.
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    /// Rewrites to draw from, e.g. `identity,front-pp,passive`.
    #[arg(long, default_value = "identity")]
    pub transforms: String,
    /// Never repeat a source sentence.
    #[arg(long)]
    pub unique_sources: bool,
    #[arg(long, default_value_t = 8)]
    pub max_depth: usize,
    /// Output prefix; writes `.src`, `.tgt`, `.tree` and `.meta`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BuildTripletsArgs {
    /// Corpus prefix.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    Count,
    Neural,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub kind: Kind,
    #[arg(long)]
    pub triplets: PathBuf,
    /// Model file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Additive smoothing of the count model.
    #[arg(long, default_value_t = 0.01)]
    pub smoothing: f64,
    /// Neural configuration as JSON; the flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Start from the width-8 test configuration.
    #[arg(long)]
    pub tiny: bool,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub heldout_fraction: Option<f64>,
    /// Training log destination, one line per evaluation.
    #[arg(long)]
    pub log_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Greedy,
    Beam,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Source sentences, one per line, whitespace-tokenized.
    #[arg(long)]
    pub input: PathBuf,
    /// Top hypothesis per source, one per line.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Mode::Beam)]
    pub mode: Mode,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, default_value_t = 0.8)]
    pub alpha: f64,
    /// Template reward.
    #[arg(long, default_value_t = 0.32)]
    pub gamma: f64,
    /// Bracketed label tree, e.g. `(S (PP) (NP) (VP))`.
    #[arg(long)]
    pub template: Option<String>,
    #[arg(long, default_value_t = 32)]
    pub d_max: usize,
    #[arg(long, default_value_t = 128)]
    pub t_max: usize,
    /// Every candidate with its decode trace, one JSON object per source.
    #[arg(long)]
    pub trace_out: Option<PathBuf>,
    /// Induced tree of each top hypothesis.
    #[arg(long)]
    pub trees_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub hyps: PathBuf,
    /// Reference file; repeat for multiple references per line.
    #[arg(long = "refs", required = true)]
    pub refs: Vec<PathBuf>,
    /// Source sentences, needed for ibleu and dlex.
    #[arg(long)]
    pub sources: Option<PathBuf>,
    /// Any of bleu, ibleu, dlex, dsyn, beamdiv.
    #[arg(long, default_value = "bleu,ibleu,dlex")]
    pub metrics: String,
    /// Hypothesis trees for dsyn.
    #[arg(long)]
    pub hyp_trees: Option<PathBuf>,
    /// Source trees for dsyn.
    #[arg(long)]
    pub src_trees: Option<PathBuf>,
    /// Trace file from `generate --trace-out`, for beamdiv.
    #[arg(long)]
    pub beams: Option<PathBuf>,
    /// iBLEU weight.
    #[arg(long, default_value_t = 0.7)]
    pub r: f64,
    /// Per-sentence scores as JSON lines.
    #[arg(long)]
    pub records_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InterpEvalArgs {
    /// Trace file from `generate --trace-out`.
    #[arg(long)]
    pub traces: PathBuf,
    /// Grammar used for re-parsing; the bundled toy grammar when omitted.
    #[arg(long)]
    pub grammar: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct NoiseArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub ratio: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Idle seconds before a session is dropped.
    #[arg(long, default_value_t = 1800)]
    pub idle_timeout: u64,
    /// Accept source tokens outside the model vocabulary.
    #[arg(long)]
    pub lenient_vocab: bool,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<GrammarError> for CliError {
    fn from(e: GrammarError) -> Self {
        match e {
            GrammarError::UnknownTransform(_) | GrammarError::BadRatio(_) => CliError::Usage(e.to_string()),
            GrammarError::SampleBudget { .. } | GrammarError::TransformInapplicable(_) => CliError::Runtime(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<TripletError> for CliError {
    fn from(e: TripletError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<TreeError> for CliError {
    fn from(e: TreeError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<MetricError> for CliError {
    fn from(e: MetricError) -> Self {
        match e {
            MetricError::BadWeight(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(_) => CliError::Usage(e.to_string()),
            ModelError::Diverged(_) => CliError::Runtime(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<SearchError> for CliError {
    fn from(e: SearchError) -> Self {
        match e {
            SearchError::Config(_) => CliError::Usage(e.to_string()),
            SearchError::Model(m) => m.into(),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Data(format!("{}: {e}", path.display()))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(io_err(path))
}

fn read_token_lines(path: &Path) -> Result<Vec<Vec<String>>, CliError> {
    Ok(read_text(path)?
        .lines()
        .map(|l| l.split_whitespace().map(str::to_string).collect())
        .collect())
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

fn load(path: &Path) -> Result<AnyModel, CliError> {
    load_model(path).map_err(|e| match e {
        ModelError::Io(e) => io_err(path)(e),
        e => CliError::Data(format!("{}: {e}", path.display())),
    })
}

fn grammar(path: Option<&Path>) -> Result<Pcfg, CliError> {
    match path {
        Some(p) => Ok(load_pcfg(&read_text(p)?)?),
        None => Ok(load_pcfg(TOY_GRAMMAR)?),
    }
}

fn require_seed(cli: &Cli) -> Result<u64, CliError> {
    cli.seed
        .ok_or_else(|| CliError::Usage(format!("`{}` is stochastic and needs --seed", cli.command.name())))
}

/// One line of a `generate --trace-out` file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceLine {
    pub index: usize,
    pub source: Vec<String>,
    pub hypotheses: Vec<Hypothesis>,
}

pub fn read_trace_lines(path: &Path) -> Result<Vec<TraceLine>, CliError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| CliError::Data(format!("{}:{}: {e}", path.display(), n + 1)))?,
        );
    }
    Ok(out)
}

/// Vocabulary covering every token a triplet file mentions plus all
/// whitelisted placeholders.
pub fn triplet_vocab(triplets: &TripletSet, whitelist: &Whitelist) -> Vocab {
    let mut entries: Vec<String> = whitelist.iter().map(placeholder_surface).collect();
    for t in triplets.iter() {
        entries.extend(t.source.iter().cloned());
        entries.extend(t.context.surfaces());
        entries.extend(t.infilling.surfaces());
    }
    Vocab::from_entries(entries)
}

/// Trees rooted at `<T>` and reduced to whitelisted constituents, so induced
/// and treebank trees compare on equal terms.
fn canonical_tree(tree: ConstTree, whitelist: &Whitelist) -> Result<ConstTree, CliError> {
    let rooted = if tree.root_label() == ROOT_LABEL { tree } else { tree.attach_root() };
    Ok(rooted.normalize(whitelist)?)
}

fn read_trees(path: &Path, whitelist: &Whitelist) -> Result<Vec<ConstTree>, CliError> {
    read_text(path)?
        .lines()
        .enumerate()
        .map(|(n, l)| {
            parse_bracketed(l)
                .map_err(|e| CliError::Data(format!("{}:{}: {e}", path.display(), n + 1)))
                .and_then(|t| canonical_tree(t, whitelist))
        })
        .collect()
}

fn summary(command: &str, fields: Value) -> String {
    let mut map = Map::new();
    map.insert("command".into(), command.into());
    map.insert("status".into(), "ok".into());
    if let Value::Object(f) = fields {
        map.extend(f);
    }
    Value::Object(map).to_string()
}

fn synth(cli: &Cli, a: &SynthArgs) -> Result<Value, CliError> {
    let seed = require_seed(cli)?;
    let g = grammar(a.grammar.as_deref())?;
    let transforms = TransformSet::parse(&a.transforms)?;
    let opts = CorpusOptions {
        max_depth: a.max_depth,
        unique_sources: a.unique_sources,
        ..CorpusOptions::default()
    };
    let corpus = gen_paraphrase_corpus_with(&g, &transforms, a.n, seed, &opts)?;
    corpus.write(&a.out)?;
    Ok(json!({ "records": corpus.len(), "out": a.out }))
}

fn build_triplets(whitelist: &Whitelist, a: &BuildTripletsArgs) -> Result<Value, CliError> {
    let corpus = ParallelCorpus::read(&a.corpus)?;
    let set = TripletSet::from_corpus(&corpus, whitelist)?;
    let mut w = create(&a.out)?;
    set.write(&mut w)?;
    w.flush().map_err(io_err(&a.out))?;
    Ok(json!({ "records": corpus.len(), "triplets": set.len(), "out": a.out }))
}

fn train(cli: &Cli, whitelist: &Whitelist, a: &TrainArgs) -> Result<Value, CliError> {
    let file = File::open(&a.triplets).map_err(io_err(&a.triplets))?;
    let set = TripletSet::read(BufReader::new(file))?;
    let vocab = triplet_vocab(&set, whitelist);
    let vocab_size = vocab.len();
    match a.kind {
        Kind::Count => {
            let model = train_count(&set, vocab, a.smoothing)?;
            save_model(&AnyModel::Count(model), &a.out)?;
            Ok(json!({ "kind": "count", "triplets": set.len(), "vocab": vocab_size, "out": a.out }))
        }
        Kind::Neural => {
            let seed = require_seed(cli)?;
            let mut config = match &a.config {
                Some(p) => serde_json::from_str(&read_text(p)?).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?,
                None if a.tiny => NeuralConfig::tiny(),
                None => NeuralConfig::default(),
            };
            config.seed = seed;
            config.steps = a.steps.unwrap_or(config.steps);
            config.lr = a.lr.unwrap_or(config.lr);
            config.batch_size = a.batch_size.unwrap_or(config.batch_size);
            config.heldout_fraction = a.heldout_fraction.unwrap_or(config.heldout_fraction);
            let (model, log) = train_neural(&set, vocab, config)?;
            let lines = log.lines();
            if !cli.quiet {
                for l in &lines {
                    eprintln!("{l}");
                }
            }
            if let Some(p) = &a.log_out {
                fs::write(p, lines.join("\n") + "\n").map_err(io_err(p))?;
            }
            let params = model.param_count();
            save_model(&AnyModel::Neural(model), &a.out)?;
            Ok(json!({
                "kind": "neural",
                "triplets": set.len(),
                "vocab": vocab_size,
                "params": params,
                "best_step": log.best_step,
                "best_heldout": log.best_heldout,
                "final_loss": log.entries.last().map(|e| e.loss),
                "out": a.out,
            }))
        }
    }
}

fn generate(cli: &Cli, a: &GenerateArgs) -> Result<Value, CliError> {
    let template = a
        .template
        .as_deref()
        .map(Template::parse)
        .transpose()
        .map_err(|e| CliError::Usage(format!("--template: {e}")))?;
    let config = SearchConfig {
        k: a.k,
        alpha: a.alpha,
        d_max: a.d_max,
        t_max: a.t_max,
        template,
        gamma: a.gamma,
        seed: cli.seed.unwrap_or(0),
    };
    config.validate()?;
    let model = load(&a.model)?;
    let sources = read_token_lines(&a.input)?;
    if let Some(i) = sources.iter().position(Vec::is_empty) {
        return Err(CliError::Data(format!("{}:{}: empty source", a.input.display(), i + 1)));
    }
    let mut out = create(&a.out)?;
    let mut traces = a.trace_out.as_deref().map(create).transpose()?;
    let mut trees = a.trees_out.as_deref().map(create).transpose()?;
    let mut failed = 0usize;
    for (index, source) in sources.iter().enumerate() {
        let candidates = match a.mode {
            Mode::Greedy => vec![greedy_decode(&model, source, &config)?],
            Mode::Beam => structural_beam_search(&model, source, &config)?.candidates,
        };
        let top = &candidates[0];
        if top.failed {
            failed += 1;
        }
        writeln!(out, "{}", top.tokens().join(" ")).map_err(io_err(&a.out))?;
        if let (Some(w), Some(p)) = (trees.as_mut(), a.trees_out.as_deref()) {
            let line = induce_tree(&top.trace).map(|t| t.to_bracketed()).unwrap_or_else(|_| "-".into());
            writeln!(w, "{line}").map_err(io_err(p))?;
        }
        if let (Some(w), Some(p)) = (traces.as_mut(), a.trace_out.as_deref()) {
            let line = TraceLine {
                index,
                source: source.clone(),
                hypotheses: candidates.iter().map(Hypothesis::from).collect(),
            };
            let text = serde_json::to_string(&line).map_err(|e| CliError::Runtime(e.to_string()))?;
            writeln!(w, "{text}").map_err(io_err(p))?;
        }
        if !cli.quiet && (index + 1) % 100 == 0 {
            eprintln!("decoded {}/{}", index + 1, sources.len());
        }
    }
    out.flush().map_err(io_err(&a.out))?;
    for (w, p) in [(traces, &a.trace_out), (trees, &a.trees_out)] {
        if let (Some(mut w), Some(p)) = (w, p) {
            w.flush().map_err(io_err(p))?;
        }
    }
    Ok(json!({
        "mode": match a.mode { Mode::Greedy => "greedy", Mode::Beam => "beam" },
        "model_kind": model.kind().name(),
        "sources": sources.len(),
        "failed": failed,
        "out": a.out,
    }))
}

const METRICS: [&str; 5] = ["bleu", "ibleu", "dlex", "dsyn", "beamdiv"];

fn eval(cli: &Cli, whitelist: &Whitelist, a: &EvalArgs) -> Result<Value, CliError> {
    let wanted: Vec<&str> = a.metrics.split(',').map(str::trim).filter(|m| !m.is_empty()).collect();
    if let Some(m) = wanted.iter().find(|m| !METRICS.contains(m)) {
        return Err(CliError::Usage(format!("unknown metric `{m}` (expected any of {})", METRICS.join(", "))));
    }
    let want = |m: &str| wanted.contains(&m);
    let hyps = read_token_lines(&a.hyps)?;
    let ref_files = a.refs.iter().map(|p| read_token_lines(p)).collect::<Result<Vec<_>, _>>()?;
    for (p, r) in a.refs.iter().zip(&ref_files) {
        if r.len() != hyps.len() {
            return Err(CliError::Data(format!("{}: {} lines for {} hypotheses", p.display(), r.len(), hyps.len())));
        }
    }
    let refs: Vec<Vec<Vec<String>>> = (0..hyps.len()).map(|i| ref_files.iter().map(|f| f[i].clone()).collect()).collect();
    let sources = match &a.sources {
        Some(p) => read_token_lines(p)?,
        None if want("ibleu") || want("dlex") => return Err(CliError::Usage("ibleu and dlex need --sources".into())),
        None => hyps.clone(),
    };
    let trees = if want("dsyn") {
        let (Some(h), Some(s)) = (&a.hyp_trees, &a.src_trees) else {
            return Err(CliError::Usage("dsyn needs --hyp-trees and --src-trees".into()));
        };
        Some((read_trees(h, whitelist)?, read_trees(s, whitelist)?))
    } else {
        None
    };
    let config = MetricConfig {
        r: a.r,
        ..MetricConfig::default()
    };
    if !(0.0..=1.0).contains(&a.r) {
        return Err(MetricError::BadWeight(a.r).into());
    }
    let mut report = EvalReport::compute(
        &hyps,
        &refs,
        &sources,
        trees.as_ref().map(|(h, s)| (h.as_slice(), s.as_slice())),
        &config,
    )?;
    if want("beamdiv") {
        let Some(p) = &a.beams else {
            return Err(CliError::Usage("beamdiv needs --beams".into()));
        };
        let lines = read_trace_lines(p)?;
        if lines.len() != hyps.len() {
            return Err(CliError::Data(format!("{}: {} beams for {} hypotheses", p.display(), lines.len(), hyps.len())));
        }
        let beams: Vec<Vec<BeamHyp>> = lines
            .iter()
            .map(|l| {
                l.hypotheses
                    .iter()
                    .filter(|h| h.finished && !h.failed)
                    .map(|h| BeamHyp {
                        tokens: h.tokens.clone(),
                        tree: induce_tree(&h.trace).ok(),
                    })
                    .collect()
            })
            .collect();
        report.beam = Some(beam_diversity(&beams, &refs)?);
    }
    if !want("bleu") {
        report.bleu = None;
    }
    if !want("ibleu") {
        report.self_bleu = None;
        report.ibleu = None;
    }
    if !want("dlex") {
        report.d_lex = None;
    }
    if !cli.quiet {
        eprint!("{}", report.table());
    }
    if let Some(p) = &a.records_out {
        let mut w = create(p)?;
        for s in &report.sentences {
            let text = serde_json::to_string(s).map_err(|e| CliError::Runtime(e.to_string()))?;
            writeln!(w, "{text}").map_err(io_err(p))?;
        }
        w.flush().map_err(io_err(p))?;
    }
    let mut fields = json!({ "sentences": hyps.len() });
    let obj = fields.as_object_mut().expect("object");
    let mut put = |k: &str, v: Option<f64>| {
        if let Some(v) = v {
            obj.insert(k.into(), json!(v));
        }
    };
    put("bleu", report.bleu);
    put("self_bleu", report.self_bleu);
    put("ibleu", report.ibleu);
    put("dlex", report.d_lex);
    put("dsyn", report.d_syn);
    if let Some(b) = &report.beam {
        put("beam_dlex", b.d_lex);
        put("beam_dsyn", b.d_syn);
        put("beam_bleu", Some(b.bleu));
    }
    Ok(fields)
}

fn interp_eval(whitelist: &Whitelist, a: &InterpEvalArgs) -> Result<Value, CliError> {
    let g = grammar(a.grammar.as_deref())?;
    let lines = read_trace_lines(&a.traces)?;
    let traces: Vec<DecodeTrace> = lines
        .iter()
        .map(|l| {
            l.hypotheses
                .iter()
                .find(|h| !h.failed)
                .or(l.hypotheses.first())
                .map(|h| h.trace.clone())
                .unwrap_or_default()
        })
        .collect();
    let report = interp_report(&traces, &g, whitelist);
    Ok(json!({
        "decodes": report.decodes,
        "rejected": report.rejected,
        "precision": report.scores.precision,
        "recall": report.scores.recall,
        "f1": report.scores.f1,
    }))
}

fn noise(cli: &Cli, whitelist: &Whitelist, a: &NoiseArgs) -> Result<Value, CliError> {
    let seed = require_seed(cli)?;
    let corpus = ParallelCorpus::read(&a.corpus)?;
    let trees = inject_label_noise(&corpus.trees(), a.ratio, whitelist, seed)?;
    let changed: usize = corpus
        .records
        .iter()
        .zip(&trees)
        .map(|(r, t)| {
            r.tree
                .labeled_spans()
                .iter()
                .zip(t.labeled_spans())
                .filter(|(x, y)| x.label != y.label)
                .count()
        })
        .sum();
    let noisy = corpus.with_trees(trees)?;
    noisy.write(&a.out)?;
    Ok(json!({ "records": noisy.len(), "ratio": a.ratio, "relabeled": changed, "out": a.out }))
}

fn serve(cli: &Cli, whitelist: &Whitelist, a: &ServeArgs) -> Result<Value, CliError> {
    let model = load(&a.model)?;
    let addr: SocketAddr = format!("{}:{}", a.host, a.port)
        .parse()
        .map_err(|e| CliError::Usage(format!("--host/--port: {e}")))?;
    let kind = model.kind().name();
    let state = AppState::new(
        model,
        ServiceConfig {
            idle_timeout: Duration::from_secs(a.idle_timeout),
            strict_vocab: !a.lenient_vocab,
            whitelist: whitelist.clone(),
        },
    );
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Runtime(e.to_string()))?;
    println!("{}", summary("serve", json!({ "addr": addr.to_string(), "model_kind": kind, "state": "listening" })));
    if !cli.quiet {
        eprintln!("listening on http://{addr}");
    }
    runtime
        .block_on(syngen_service::serve(state, addr))
        .map_err(|e| CliError::Runtime(format!("{addr}: {e}")))?;
    Ok(json!({ "addr": addr.to_string(), "state": "stopped" }))
}

pub fn execute(cli: &Cli) -> Result<Value, CliError> {
    let whitelist = Whitelist::parse(&cli.labels).map_err(|e| CliError::Usage(format!("--labels: {e}")))?;
    match &cli.command {
        Command::Synth(a) => synth(cli, a),
        Command::BuildTriplets(a) => build_triplets(&whitelist, a),
        Command::Train(a) => train(cli, &whitelist, a),
        Command::Generate(a) => generate(cli, a),
        Command::Eval(a) => eval(cli, &whitelist, a),
        Command::InterpEval(a) => interp_eval(&whitelist, a),
        Command::Noise(a) => noise(cli, &whitelist, a),
        Command::Serve(a) => serve(cli, &whitelist, a),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            e.print().ok();
            return code;
        }
    };
    match execute(&cli) {
        Ok(fields) => {
            println!("{}", summary(cli.command.name(), fields));
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            let line = json!({ "command": cli.command.name(), "status": "error", "exit_code": e.exit_code(), "message": e.to_string() });
            println!("{line}");
            e.exit_code()
        }
    }
}
