use serde::{Deserialize, Serialize};

use super::tree::SyntaxNode;
use super::vocab::VocabPair;
use super::ExtractError;

/// Separator placed after a node when the path climbs towards the root.
pub const UP: char = '↑';
/// Separator placed before a node when the path descends towards a leaf.
pub const DOWN: char = '↓';

/// Encoded leaf-to-leaf path: (start token id, path id, end token id).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[u32; 3]", into = "[u32; 3]")]
pub struct PathContext {
    pub start: u32,
    pub path: u32,
    pub end: u32,
}

impl PathContext {
    pub const UNKNOWN: PathContext = PathContext {
        start: 0,
        path: 0,
        end: 0,
    };

    pub fn new(start: u32, path: u32, end: u32) -> Self {
        Self { start, path, end }
    }
}

impl From<[u32; 3]> for PathContext {
    fn from([start, path, end]: [u32; 3]) -> Self {
        Self { start, path, end }
    }
}

impl From<PathContext> for [u32; 3] {
    fn from(pc: PathContext) -> Self {
        [pc.start, pc.path, pc.end]
    }
}

/// Path-context before interning.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RawContext {
    pub start: String,
    pub path: String,
    pub end: String,
}

/// Limits on which leaf pairs produce a context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathLimits {
    /// Maximum number of nodes on the path, endpoints included.
    pub max_length: usize,
    /// Maximum distance between the child indices under the top node.
    pub max_width: usize,
}

impl Default for PathLimits {
    fn default() -> Self {
        Self {
            max_length: 8,
            max_width: 2,
        }
    }
}

impl PathLimits {
    pub fn new(max_length: usize, max_width: usize) -> Result<Self, ExtractError> {
        if max_length < 2 || max_width < 1 {
            return Err(ExtractError::InvalidLimits {
                max_length,
                max_width,
            });
        }
        Ok(Self {
            max_length,
            max_width,
        })
    }
}

/// A leaf reachable below some node, with the kinds on the way up.
struct Reach<'a> {
    leaf: usize,
    /// Node kinds from the leaf up to (and including) the child of the top node.
    chain: Vec<&'a str>,
    token: &'a str,
}

/// Enumerates the raw path contexts of a tree, ordered by (start leaf, end leaf) source position.
pub fn enumerate_contexts(
    root: &SyntaxNode,
    limits: &PathLimits,
) -> Result<Vec<RawContext>, ExtractError> {
    let limits = PathLimits::new(limits.max_length, limits.max_width)?;
    let mut next_leaf = 0;
    let mut found: Vec<(usize, usize, RawContext)> = Vec::new();
    visit(root, &limits, &mut next_leaf, &mut found);
    if next_leaf < 2 {
        return Err(ExtractError::NoLeaves);
    }
    found.sort_by_key(|(u, v, _)| (*u, *v));
    Ok(found.into_iter().map(|(_, _, c)| c).collect())
}

/// Post-order walk; returns the leaves of `node`'s subtree whose chain up to
/// `node` (inclusive) still fits in a path.
fn visit<'a>(
    node: &'a SyntaxNode,
    limits: &PathLimits,
    next_leaf: &mut usize,
    found: &mut Vec<(usize, usize, RawContext)>,
) -> Vec<Reach<'a>> {
    if node.is_leaf() {
        let leaf = *next_leaf;
        *next_leaf += 1;
        return vec![Reach {
            leaf,
            chain: vec![node.kind.as_str()],
            token: node.token_text.as_str(),
        }];
    }
    // a path through this node as top has chain_u + 1 + chain_v nodes
    let max_chain = limits.max_length - 2;
    let below: Vec<Vec<Reach<'a>>> = node
        .children
        .iter()
        .map(|child| visit(child, limits, next_leaf, found))
        .collect();

    for a in 0..below.len() {
        let upper = (a + limits.max_width).min(below.len() - 1);
        for b in a + 1..=upper {
            for u in &below[a] {
                for v in &below[b] {
                    if u.chain.len() + v.chain.len() + 1 > limits.max_length {
                        continue;
                    }
                    found.push((u.leaf, v.leaf, raw_context(u, &node.kind, v)));
                }
            }
        }
    }

    below
        .into_iter()
        .flatten()
        .filter(|r| r.chain.len() < max_chain)
        .map(|mut r| {
            r.chain.push(node.kind.as_str());
            r
        })
        .collect()
}

fn raw_context(u: &Reach<'_>, top: &str, v: &Reach<'_>) -> RawContext {
    let mut path = String::new();
    for kind in &u.chain {
        path.push_str(kind);
        path.push(UP);
    }
    path.push_str(top);
    for kind in v.chain.iter().rev() {
        path.push(DOWN);
        path.push_str(kind);
    }
    RawContext {
        start: u.token.to_string(),
        path,
        end: v.token.to_string(),
    }
}

/// Training-mode extraction: unseen tokens and paths grow the vocabularies.
pub fn extract_path_contexts(
    root: &SyntaxNode,
    limits: &PathLimits,
    vocabs: &mut VocabPair,
) -> Result<Vec<PathContext>, ExtractError> {
    let raw = enumerate_contexts(root, limits)?;
    Ok(raw
        .iter()
        .map(|c| {
            PathContext::new(
                vocabs.tokens.intern(&c.start),
                vocabs.paths.intern(&c.path),
                vocabs.tokens.intern(&c.end),
            )
        })
        .collect())
}

/// Inference-mode extraction against frozen vocabularies; unseen strings map to UNK.
pub fn extract_path_contexts_frozen(
    root: &SyntaxNode,
    limits: &PathLimits,
    vocabs: &VocabPair,
) -> Result<Vec<PathContext>, ExtractError> {
    let raw = enumerate_contexts(root, limits)?;
    Ok(raw
        .iter()
        .map(|c| {
            PathContext::new(
                vocabs.tokens.get(&c.start),
                vocabs.paths.get(&c.path),
                vocabs.tokens.get(&c.end),
            )
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(k: &str, t: &str) -> SyntaxNode {
        SyntaxNode::leaf(k, t)
    }

    fn node(k: &str, c: Vec<SyntaxNode>) -> SyntaxNode {
        SyntaxNode::interior(k, c)
    }

    #[test]
    fn sibling_leaves_path_string() {
        let t = node("call", vec![leaf("id", "f"), leaf("num", "1")]);
        let got = enumerate_contexts(&t, &PathLimits::default()).unwrap();
        assert_eq!(
            got,
            vec![RawContext {
                start: "f".into(),
                path: "id↑call↓num".into(),
                end: "1".into(),
            }]
        );
    }

    #[test]
    fn direction_distinguishes_mirrored_shapes() {
        let left = node("r", vec![node("x", vec![leaf("a", "1")]), leaf("b", "2")]);
        let right = node("r", vec![leaf("b", "2"), node("x", vec![leaf("a", "1")])]);
        let l = enumerate_contexts(&left, &PathLimits::default()).unwrap();
        let r = enumerate_contexts(&right, &PathLimits::default()).unwrap();
        assert_eq!(l[0].path, "a↑x↑r↓b");
        assert_eq!(r[0].path, "b↑r↓x↓a");
    }

    #[test]
    fn width_and_length_limits() {
        let t = node(
            "r",
            vec![leaf("a", "1"), leaf("a", "2"), leaf("a", "3"), leaf("a", "4")],
        );
        // width 2 drops the (1,4) pair
        let got = enumerate_contexts(&t, &PathLimits::new(8, 2).unwrap()).unwrap();
        assert_eq!(got.len(), 5);
        let deep = node("r", vec![node("x", vec![node("y", vec![leaf("a", "1")])]), leaf("b", "2")]);
        // path a,y,x,r,b has 5 nodes
        assert_eq!(enumerate_contexts(&deep, &PathLimits::new(5, 1).unwrap()).unwrap().len(), 1);
        assert!(enumerate_contexts(&deep, &PathLimits::new(4, 1).unwrap()).unwrap().is_empty());
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(
            enumerate_contexts(&leaf("a", "1"), &PathLimits::default()),
            Err(ExtractError::NoLeaves)
        ));
        assert!(matches!(
            PathLimits::new(1, 2),
            Err(ExtractError::InvalidLimits { .. })
        ));
        assert!(PathLimits::new(2, 0).is_err());
    }

    #[test]
    fn frozen_mode_maps_unknowns_to_unk() {
        let t = node("call", vec![leaf("id", "f"), leaf("num", "1")]);
        let mut vocabs = VocabPair::default();
        let trained = extract_path_contexts(&t, &PathLimits::default(), &mut vocabs).unwrap();
        assert_eq!(trained, vec![PathContext::new(1, 1, 2)]);
        let other = node("call", vec![leaf("id", "g"), leaf("num", "1")]);
        let frozen = extract_path_contexts_frozen(&other, &PathLimits::default(), &vocabs).unwrap();
        assert_eq!(frozen, vec![PathContext::new(0, 1, 2)]);
        assert_eq!(vocabs.tokens.len(), 2);
    }

    #[test]
    fn context_serializes_as_triple() {
        let pc = PathContext::new(3, 9, 4);
        assert_eq!(serde_json::to_string(&pc).unwrap(), "[3,9,4]");
        let back: PathContext = serde_json::from_str("[3,9,4]").unwrap();
        assert_eq!(back, pc);
    }
}
