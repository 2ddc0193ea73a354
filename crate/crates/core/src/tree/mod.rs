//! Constituency trees, syntax contexts and delexicalized templates.
//!
//! Trees are rooted at an internal node. Depth is counted from the root at 0.
//! A [`SyntaxContext`] is the left-to-right frontier of a tree cut at some
//! depth: tokens that are already realized plus one placeholder per
//! constituent that still has to be expanded.

mod induce;
mod span;
mod ted;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub use induce::induce_tree;
pub use span::{span_prf, span_prf_counts, SpanCounts, SpanScores};
pub use ted::{tree_edit_distance, ToLabelTree};

/// Label of the artificial root every decode starts from.
pub const ROOT_LABEL: &str = "<T>";
/// Separator between infilling groups.
pub const SEPARATOR: &str = "<c>";

/// Constituent labels used for guidance unless configured otherwise.
pub const DEFAULT_LABELS: [&str; 7] = ["NP", "VP", "PP", "S", "SBAR", "ADJP", "ADVP"];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TreeError {
    #[error("empty input")]
    Empty,
    #[error("unbalanced parentheses at offset {0}")]
    Unbalanced(usize),
    #[error("constituent `{0}` has no children")]
    NoChildren(String),
    #[error("expected a label after `(` at offset {0}")]
    MissingLabel(usize),
    #[error("unexpected trailing input at offset {0}")]
    Trailing(usize),
    #[error("a tree must be rooted at a constituent, found bare token `{0}`")]
    BareToken(String),
    #[error("invalid label `{0}`")]
    InvalidLabel(String),
    #[error("invalid token `{0}`")]
    InvalidToken(String),
    #[error("root label `{0}` is neither whitelisted nor {ROOT_LABEL}")]
    RootNotWhitelisted(String),
    #[error("empty label whitelist")]
    EmptyWhitelist,
    #[error("yields differ: {0} vs {1} tokens")]
    YieldMismatch(usize, usize),
    #[error("yields differ at token {0}")]
    YieldDiffers(usize),
    #[error("inconsistent trace at step {step}: {detail}")]
    InconsistentTrace { step: usize, detail: String },
    #[error("empty syntax context")]
    EmptyContext,
    #[error("placeholder <{0}> is not an allowed label")]
    LabelNotAllowed(String),
}

/// A node of a constituency tree.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Node {
    Internal { label: String, children: Vec<Node> },
    Leaf(String),
}

impl Node {
    pub fn internal(label: impl Into<String>, children: Vec<Node>) -> Node {
        Node::Internal {
            label: label.into(),
            children,
        }
    }

    pub fn leaf(token: impl Into<String>) -> Node {
        Node::Leaf(token.into())
    }

    pub fn label(&self) -> Option<&str> {
        match self {
            Node::Internal { label, .. } => Some(label),
            Node::Leaf(_) => None,
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, Node::Leaf(_))
    }

    fn collect_tokens<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            Node::Leaf(t) => out.push(t),
            Node::Internal { children, .. } => children.iter().for_each(|c| c.collect_tokens(out)),
        }
    }

    fn write_bracketed(&self, out: &mut String) {
        match self {
            Node::Leaf(t) => out.push_str(t),
            Node::Internal { label, children } => {
                out.push('(');
                out.push_str(label);
                for c in children {
                    out.push(' ');
                    c.write_bracketed(out);
                }
                out.push(')');
            }
        }
    }

    fn validate(&self) -> Result<(), TreeError> {
        match self {
            Node::Leaf(t) => validate_token(t),
            Node::Internal { label, children } => {
                validate_label(label)?;
                if children.is_empty() {
                    return Err(TreeError::NoChildren(label.clone()));
                }
                children.iter().try_for_each(Node::validate)
            }
        }
    }
}

fn is_placeholder_form(s: &str) -> bool {
    s.len() > 2 && s.starts_with('<') && s.ends_with('>')
}

fn validate_token(t: &str) -> Result<(), TreeError> {
    if t.is_empty()
        || t.chars().any(|c| c.is_whitespace() || c == '(' || c == ')')
        || is_placeholder_form(t)
    {
        return Err(TreeError::InvalidToken(t.to_string()));
    }
    Ok(())
}

fn validate_label(l: &str) -> Result<(), TreeError> {
    if l.is_empty()
        || l == SEPARATOR
        || l.chars().any(|c| c.is_whitespace() || c == '(' || c == ')')
        || (l != ROOT_LABEL && (l.starts_with('<') || l.ends_with('>')))
    {
        return Err(TreeError::InvalidLabel(l.to_string()));
    }
    Ok(())
}

/// A constituency parse tree. The root is always an internal node.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ConstTree {
    root: Node,
}

/// One constituent: fencepost extent, depth of the node and its label.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LabeledSpan {
    pub start: usize,
    pub end: usize,
    pub depth: usize,
    pub label: String,
}

impl LabeledSpan {
    pub fn new(start: usize, end: usize, depth: usize, label: impl Into<String>) -> Self {
        LabeledSpan {
            start,
            end,
            depth,
            label: label.into(),
        }
    }
}

impl ConstTree {
    /// Builds a tree, checking every structural invariant.
    pub fn new(root: Node) -> Result<Self, TreeError> {
        match &root {
            Node::Leaf(t) => return Err(TreeError::BareToken(t.clone())),
            Node::Internal { .. } => root.validate()?,
        }
        Ok(ConstTree { root })
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn into_root(self) -> Node {
        self.root
    }

    pub fn root_label(&self) -> &str {
        self.root.label().expect("root is internal")
    }

    pub fn to_bracketed(&self) -> String {
        let mut out = String::new();
        self.root.write_bracketed(&mut out);
        out
    }

    /// Left-to-right leaf tokens.
    pub fn yield_tokens(&self) -> Vec<String> {
        self.yield_refs().into_iter().map(str::to_string).collect()
    }

    pub fn yield_refs(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.root.collect_tokens(&mut out);
        out
    }

    /// One span per internal node, in preorder.
    pub fn labeled_spans(&self) -> Vec<LabeledSpan> {
        fn walk(node: &Node, depth: usize, pos: &mut usize, out: &mut Vec<LabeledSpan>) {
            match node {
                Node::Leaf(_) => *pos += 1,
                Node::Internal { label, children } => {
                    let slot = out.len();
                    out.push(LabeledSpan::new(*pos, *pos, depth, label.clone()));
                    for c in children {
                        walk(c, depth + 1, pos, out);
                    }
                    out[slot].end = *pos;
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.root, 0, &mut 0, &mut out);
        out
    }

    pub fn internal_count(&self) -> usize {
        fn count(n: &Node) -> usize {
            match n {
                Node::Leaf(_) => 0,
                Node::Internal { children, .. } => 1 + children.iter().map(count).sum::<usize>(),
            }
        }
        count(&self.root)
    }

    pub fn node_count(&self) -> usize {
        fn count(n: &Node) -> usize {
            match n {
                Node::Leaf(_) => 1,
                Node::Internal { children, .. } => 1 + children.iter().map(count).sum::<usize>(),
            }
        }
        count(&self.root)
    }

    /// Depth of the deepest leaf.
    pub fn height(&self) -> usize {
        fn h(n: &Node) -> usize {
            match n {
                Node::Leaf(_) => 0,
                Node::Internal { children, .. } => 1 + children.iter().map(h).max().unwrap_or(0),
            }
        }
        h(&self.root)
    }

    /// Wraps the tree in a `<T>` root unless it already has one.
    pub fn attach_root(self) -> ConstTree {
        if self.root_label() == ROOT_LABEL {
            return self;
        }
        ConstTree {
            root: Node::internal(ROOT_LABEL, vec![self.root]),
        }
    }

    /// Dissolves every non-root constituent whose label is not whitelisted,
    /// splicing its children into the parent. Preterminals fall out of the
    /// same rule since their only child is a token.
    pub fn normalize(&self, whitelist: &Whitelist) -> Result<ConstTree, TreeError> {
        if whitelist.is_empty() {
            return Err(TreeError::EmptyWhitelist);
        }
        let root_label = self.root_label();
        if root_label != ROOT_LABEL && !whitelist.contains(root_label) {
            return Err(TreeError::RootNotWhitelisted(root_label.to_string()));
        }
        fn splice(node: &Node, whitelist: &Whitelist, out: &mut Vec<Node>) {
            match node {
                Node::Leaf(_) => out.push(node.clone()),
                Node::Internal { label, children } => {
                    let mut kept = Vec::with_capacity(children.len());
                    for c in children {
                        splice(c, whitelist, &mut kept);
                    }
                    if whitelist.contains(label) {
                        out.push(Node::internal(label.clone(), kept));
                    } else {
                        out.extend(kept);
                    }
                }
            }
        }
        let Node::Internal { label, children } = &self.root else {
            unreachable!("root is internal")
        };
        let mut kept = Vec::new();
        for c in children {
            splice(c, whitelist, &mut kept);
        }
        Ok(ConstTree {
            root: Node::internal(label.clone(), kept),
        })
    }

    /// The lexicalized syntax context at depth `d`: tokens at depth ≤ d and a
    /// placeholder for each constituent at exactly depth `d`.
    pub fn frontier_at_depth(&self, d: usize) -> SyntaxContext {
        fn walk(node: &Node, depth: usize, d: usize, out: &mut Vec<Item>) {
            match node {
                Node::Leaf(t) => out.push(Item::Token(t.clone())),
                Node::Internal { label, children } => {
                    if depth == d {
                        out.push(Item::Placeholder(label.clone()));
                    } else {
                        children.iter().for_each(|c| walk(c, depth + 1, d, out));
                    }
                }
            }
        }
        let mut items = Vec::new();
        walk(&self.root, 0, d, &mut items);
        SyntaxContext { items }
    }

    /// Constituents at exactly depth `d`, left to right.
    pub fn nodes_at_depth(&self, d: usize) -> Vec<&Node> {
        fn walk<'a>(node: &'a Node, depth: usize, d: usize, out: &mut Vec<&'a Node>) {
            if let Node::Internal { children, .. } = node {
                if depth == d {
                    out.push(node);
                } else {
                    children.iter().for_each(|c| walk(c, depth + 1, d, out));
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.root, 0, d, &mut out);
        out
    }

    /// Drops every token, keeping the labelled skeleton.
    pub fn delexicalize(&self) -> Template {
        fn strip(node: &Node) -> Option<Template> {
            match node {
                Node::Leaf(_) => None,
                Node::Internal { label, children } => Some(Template {
                    label: label.clone(),
                    children: children.iter().filter_map(strip).collect(),
                }),
            }
        }
        strip(&self.root).expect("root is internal")
    }

    /// Applies `f` to every internal label in preorder; the callback receives
    /// the node depth.
    pub fn map_labels(&self, mut f: impl FnMut(usize, &str) -> String) -> ConstTree {
        fn walk(node: &Node, depth: usize, f: &mut dyn FnMut(usize, &str) -> String) -> Node {
            match node {
                Node::Leaf(_) => node.clone(),
                Node::Internal { label, children } => {
                    let label = f(depth, label);
                    Node::internal(label, children.iter().map(|c| walk(c, depth + 1, f)).collect())
                }
            }
        }
        ConstTree {
            root: walk(&self.root, 0, &mut f),
        }
    }
}

impl fmt::Display for ConstTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_bracketed())
    }
}

impl FromStr for ConstTree {
    type Err = TreeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_bracketed(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Lexeme<'a> {
    Open(usize),
    Close(usize),
    Atom(usize, &'a str),
}

fn lex(text: &str) -> Vec<Lexeme<'_>> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        if c == '(' || c == ')' || c.is_whitespace() {
            if let Some(s) = start.take() {
                out.push(Lexeme::Atom(s, &text[s..i]));
            }
            match c {
                '(' => out.push(Lexeme::Open(i)),
                ')' => out.push(Lexeme::Close(i)),
                _ => {}
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        out.push(Lexeme::Atom(s, &text[s..]));
    }
    out
}

enum Parsed {
    Tree(Node),
    Template(Template),
}

/// Recursive-descent reader shared by trees and templates.
fn parse_node(lexemes: &[Lexeme<'_>], pos: &mut usize, template: bool) -> Result<Parsed, TreeError> {
    let open_at = match lexemes.get(*pos) {
        Some(Lexeme::Open(at)) => *at,
        Some(Lexeme::Atom(_, a)) => return Err(TreeError::BareToken(a.to_string())),
        Some(Lexeme::Close(at)) => return Err(TreeError::Unbalanced(*at)),
        None => return Err(TreeError::Empty),
    };
    *pos += 1;
    let label = match lexemes.get(*pos) {
        Some(Lexeme::Atom(_, l)) => l.to_string(),
        _ => return Err(TreeError::MissingLabel(open_at)),
    };
    validate_label(&label)?;
    *pos += 1;
    let mut nodes = Vec::new();
    let mut templates = Vec::new();
    loop {
        match lexemes.get(*pos) {
            None => return Err(TreeError::Unbalanced(open_at)),
            Some(Lexeme::Close(_)) => {
                *pos += 1;
                break;
            }
            Some(Lexeme::Atom(_, tok)) => {
                if template {
                    return Err(TreeError::InvalidToken(tok.to_string()));
                }
                validate_token(tok)?;
                nodes.push(Node::Leaf(tok.to_string()));
                *pos += 1;
            }
            Some(Lexeme::Open(_)) => match parse_node(lexemes, pos, template)? {
                Parsed::Tree(n) => nodes.push(n),
                Parsed::Template(t) => templates.push(t),
            },
        }
    }
    if template {
        Ok(Parsed::Template(Template {
            label,
            children: templates,
        }))
    } else {
        if nodes.is_empty() {
            return Err(TreeError::NoChildren(label));
        }
        Ok(Parsed::Tree(Node::internal(label, nodes)))
    }
}

fn parse_complete(text: &str, template: bool) -> Result<Parsed, TreeError> {
    let lexemes = lex(text);
    if lexemes.is_empty() {
        return Err(TreeError::Empty);
    }
    let mut pos = 0;
    let parsed = parse_node(&lexemes, &mut pos, template)?;
    if let Some(rest) = lexemes.get(pos) {
        let at = match rest {
            Lexeme::Open(a) | Lexeme::Close(a) | Lexeme::Atom(a, _) => *a,
        };
        return Err(match rest {
            Lexeme::Close(_) => TreeError::Unbalanced(at),
            _ => TreeError::Trailing(at),
        });
    }
    Ok(parsed)
}

/// Reads a single-line bracketed tree such as `(S (NP I) (VP ate (NP an apple)) .)`.
pub fn parse_bracketed(text: &str) -> Result<ConstTree, TreeError> {
    match parse_complete(text, false)? {
        Parsed::Tree(root) => Ok(ConstTree { root }),
        Parsed::Template(_) => unreachable!(),
    }
}

/// A set of constituent labels allowed to appear as placeholders.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Whitelist(BTreeSet<String>);

impl Whitelist {
    pub fn new<I, S>(labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Whitelist(labels.into_iter().map(Into::into).collect())
    }

    /// Comma-separated list, e.g. `NP,VP,PP`.
    pub fn parse(list: &str) -> Result<Self, TreeError> {
        let labels: BTreeSet<String> = list
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect();
        if labels.is_empty() {
            return Err(TreeError::EmptyWhitelist);
        }
        for l in &labels {
            validate_label(l)?;
        }
        Ok(Whitelist(labels))
    }

    pub fn contains(&self, label: &str) -> bool {
        self.0.contains(label)
    }

    /// Whitelisted or the root label.
    pub fn allows_placeholder(&self, label: &str) -> bool {
        label == ROOT_LABEL || self.contains(label)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }
}

impl Default for Whitelist {
    fn default() -> Self {
        Whitelist::new(DEFAULT_LABELS)
    }
}

impl fmt::Display for Whitelist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v: Vec<&str> = self.iter().collect();
        f.write_str(&v.join(","))
    }
}

/// One element of a syntax context.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Item {
    Token(String),
    Placeholder(String),
}

impl Item {
    pub fn placeholder(label: impl Into<String>) -> Item {
        Item::Placeholder(label.into())
    }

    pub fn token(t: impl Into<String>) -> Item {
        Item::Token(t.into())
    }

    pub fn is_placeholder(&self) -> bool {
        matches!(self, Item::Placeholder(_))
    }

    /// Surface form: tokens verbatim, placeholders in angle brackets.
    pub fn surface(&self) -> String {
        match self {
            Item::Token(t) => t.clone(),
            Item::Placeholder(l) => placeholder_surface(l),
        }
    }

    /// Inverse of [`Item::surface`]. The separator is not an item.
    pub fn from_surface(s: &str) -> Result<Item, TreeError> {
        if s == SEPARATOR {
            return Err(TreeError::InvalidToken(s.to_string()));
        }
        if s == ROOT_LABEL {
            return Ok(Item::Placeholder(ROOT_LABEL.to_string()));
        }
        if is_placeholder_form(s) {
            let label = &s[1..s.len() - 1];
            validate_label(label)?;
            return Ok(Item::Placeholder(label.to_string()));
        }
        validate_token(s)?;
        Ok(Item::Token(s.to_string()))
    }
}

pub fn placeholder_surface(label: &str) -> String {
    if label == ROOT_LABEL {
        label.to_string()
    } else {
        format!("<{label}>")
    }
}

impl fmt::Display for Item {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.surface())
    }
}

impl Serialize for Item {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.surface())
    }
}

impl<'de> Deserialize<'de> for Item {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Item::from_surface(&s).map_err(serde::de::Error::custom)
    }
}

/// Left-to-right mix of realized tokens and unexpanded constituents.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SyntaxContext {
    items: Vec<Item>,
}

impl SyntaxContext {
    pub fn new(items: Vec<Item>) -> Result<Self, TreeError> {
        if items.is_empty() {
            return Err(TreeError::EmptyContext);
        }
        Ok(SyntaxContext { items })
    }

    /// The initial context `[<T>]`.
    pub fn root() -> Self {
        SyntaxContext {
            items: vec![Item::Placeholder(ROOT_LABEL.to_string())],
        }
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn placeholder_count(&self) -> usize {
        self.items.iter().filter(|i| i.is_placeholder()).count()
    }

    pub fn placeholder_labels(&self) -> impl Iterator<Item = &str> {
        self.items.iter().filter_map(|i| match i {
            Item::Placeholder(l) => Some(l.as_str()),
            Item::Token(_) => None,
        })
    }

    /// No constituent left to expand.
    pub fn is_terminated(&self) -> bool {
        self.placeholder_count() == 0
    }

    /// Realized tokens, placeholders skipped.
    pub fn tokens(&self) -> Vec<String> {
        self.items
            .iter()
            .filter_map(|i| match i {
                Item::Token(t) => Some(t.clone()),
                Item::Placeholder(_) => None,
            })
            .collect()
    }

    pub fn surfaces(&self) -> Vec<String> {
        self.items.iter().map(Item::surface).collect()
    }

    /// Parses whitespace-separated surface forms.
    pub fn parse(text: &str) -> Result<Self, TreeError> {
        Self::from_surfaces(text.split_whitespace())
    }

    pub fn from_surfaces<I, S>(surfaces: I) -> Result<Self, TreeError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let items = surfaces
            .into_iter()
            .map(|s| Item::from_surface(s.as_ref()))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(items)
    }

    /// Rejects placeholders outside the whitelist (the root label is allowed).
    pub fn check_labels(&self, whitelist: &Whitelist) -> Result<(), TreeError> {
        for l in self.placeholder_labels() {
            if !whitelist.allows_placeholder(l) {
                return Err(TreeError::LabelNotAllowed(l.to_string()));
            }
        }
        Ok(())
    }
}

impl fmt::Display for SyntaxContext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.surfaces().join(" "))
    }
}

/// A delexicalized syntax template: a tree of labels without tokens.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Template {
    pub label: String,
    pub children: Vec<Template>,
}

impl Template {
    pub fn new(label: impl Into<String>, children: Vec<Template>) -> Self {
        Template {
            label: label.into(),
            children,
        }
    }

    pub fn parse(text: &str) -> Result<Self, TreeError> {
        match parse_complete(text, true)? {
            Parsed::Template(t) => Ok(t),
            Parsed::Tree(_) => unreachable!(),
        }
    }

    pub fn to_bracketed(&self) -> String {
        let mut out = format!("({}", self.label);
        for c in &self.children {
            out.push(' ');
            out.push_str(&c.to_bracketed());
        }
        out.push(')');
        out
    }

    pub fn node_count(&self) -> usize {
        1 + self.children.iter().map(Template::node_count).sum::<usize>()
    }

    /// Wraps the template under `<T>` unless already rooted there.
    pub fn attach_root(self) -> Template {
        if self.label == ROOT_LABEL {
            self
        } else {
            Template::new(ROOT_LABEL, vec![self])
        }
    }

    /// Labels of the nodes at exactly depth `d`, counting from a `<T>` root.
    pub fn frontier(&self, d: usize) -> Vec<String> {
        fn walk(t: &Template, depth: usize, d: usize, out: &mut Vec<String>) {
            if depth == d {
                out.push(t.label.clone());
            } else {
                t.children.iter().for_each(|c| walk(c, depth + 1, d, out));
            }
        }
        let mut out = Vec::new();
        if self.label == ROOT_LABEL {
            walk(self, 0, d, &mut out);
        } else if d == 0 {
            out.push(ROOT_LABEL.to_string());
        } else {
            walk(self, 1, d, &mut out);
        }
        out
    }

    /// Checks that every label is whitelisted, the root, or `start`.
    pub fn check_labels(&self, whitelist: &Whitelist, start: Option<&str>) -> Result<(), TreeError> {
        if !(whitelist.allows_placeholder(&self.label) || Some(self.label.as_str()) == start) {
            return Err(TreeError::LabelNotAllowed(self.label.clone()));
        }
        self.children.iter().try_for_each(|c| c.check_labels(whitelist, start))
    }
}

impl fmt::Display for Template {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_bracketed())
    }
}

impl FromStr for Template {
    type Err = TreeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Template::parse(s)
    }
}

/// Labels of `template` at depth `d` (see [`Template::frontier`]).
pub fn template_frontier(template: &Template, d: usize) -> Vec<String> {
    template.frontier(d)
}
