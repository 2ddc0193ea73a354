use super::{ConstTree, Item, Node, SyntaxContext, TreeError, ROOT_LABEL};
use crate::search::{expand, DecodeTrace};

enum Child {
    Leaf(String),
    Node(usize),
}

/// Rebuilds the tree implied by a trace's constituent expansions.
///
/// Every placeholder expanded at depth `d` becomes a constituent whose
/// children are its infilling group; placeholders inside the group become
/// the constituents expanded at depth `d + 1`.
pub fn induce_tree(trace: &DecodeTrace) -> Result<ConstTree, TreeError> {
    let inconsistent = |step: usize, detail: String| TreeError::InconsistentTrace { step, detail };

    let mut arena: Vec<(String, Vec<Child>)> = vec![(ROOT_LABEL.to_string(), Vec::new())];
    let mut open = vec![0usize];
    let mut current = SyntaxContext::root();

    for (i, step) in trace.steps.iter().enumerate() {
        if step.context != current {
            return Err(inconsistent(
                i,
                format!("context `{}` does not continue `{}`", step.context, current),
            ));
        }
        let groups = step
            .infilling
            .groups()
            .map_err(|e| inconsistent(i, e.to_string()))?;
        if groups.len() != open.len() {
            return Err(inconsistent(
                i,
                format!("{} groups for {} placeholders", groups.len(), open.len()),
            ));
        }
        let mut next_open = Vec::new();
        for (&slot, group) in open.iter().zip(groups) {
            for item in group {
                let child = match item {
                    Item::Token(t) => Child::Leaf(t.clone()),
                    Item::Placeholder(l) => {
                        arena.push((l.clone(), Vec::new()));
                        next_open.push(arena.len() - 1);
                        Child::Node(arena.len() - 1)
                    }
                };
                arena[slot].1.push(child);
            }
        }
        open = next_open;
        current = expand(&current, &step.infilling).map_err(|e| inconsistent(i, e.to_string()))?;
    }
    if !open.is_empty() {
        return Err(inconsistent(
            trace.steps.len(),
            format!("{} constituents never expanded", open.len()),
        ));
    }

    fn build(arena: &[(String, Vec<Child>)], idx: usize) -> Node {
        let (label, children) = &arena[idx];
        Node::internal(
            label.clone(),
            children
                .iter()
                .map(|c| match c {
                    Child::Leaf(t) => Node::leaf(t.clone()),
                    Child::Node(j) => build(arena, *j),
                })
                .collect(),
        )
    }
    ConstTree::new(build(&arena, 0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::search::TraceStep;
    use crate::tree::{parse_bracketed, Whitelist};
    use crate::grammar::Record;
    use crate::triplet::{build_triplets, InfillingSequence};

    fn step(depth: usize, ctx: &str, f: &str) -> TraceStep {
        TraceStep {
            depth,
            context: SyntaxContext::parse(ctx).unwrap(),
            infilling: InfillingSequence::parse(f).unwrap(),
            delta_f: 0.0,
            delta: 0.0,
            reward: 0.0,
            edited_from: None,
        }
    }

    #[test]
    fn oracle_trace_of_the_apple_tree() {
        let tree = parse_bracketed("(S (NP I) (VP ate (NP an apple)) .)").unwrap();
        let record = Record::new(tree.yield_tokens(), tree.yield_tokens(), tree.clone());
        let triplets = build_triplets(&record, &Whitelist::default()).unwrap();
        let trace = DecodeTrace {
            steps: triplets
                .iter()
                .map(|t| TraceStep {
                    depth: t.depth,
                    context: t.context.clone(),
                    infilling: t.infilling.clone(),
                    delta_f: 0.0,
                    delta: 0.0,
                    reward: 0.0,
                    edited_from: None,
                })
                .collect(),
        };
        let induced = induce_tree(&trace).unwrap();
        let rooted = tree.attach_root();
        assert_eq!(induced, rooted);
        assert_eq!(induced.labeled_spans(), rooted.labeled_spans());
    }

    #[test]
    fn single_depth_trace() {
        let trace = DecodeTrace {
            steps: vec![step(0, "<T>", "<c> a b")],
        };
        assert_eq!(induce_tree(&trace).unwrap().to_bracketed(), "(<T> a b)");
    }

    #[test]
    fn mismatched_group_count_is_rejected() {
        let trace = DecodeTrace {
            steps: vec![step(0, "<T>", "<c> <NP> <VP>"), step(1, "<NP> <VP>", "<c> a")],
        };
        assert!(matches!(
            induce_tree(&trace),
            Err(TreeError::InconsistentTrace { step: 1, .. })
        ));
    }

    #[test]
    fn incomplete_trace_is_rejected() {
        let trace = DecodeTrace {
            steps: vec![step(0, "<T>", "<c> <NP> b")],
        };
        assert!(induce_tree(&trace).is_err());
    }
}
