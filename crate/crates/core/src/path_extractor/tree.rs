use serde::{Deserialize, Serialize};

/// A node of a function's syntax tree, detached from the parser that produced it.
///
/// Leaves carry their source token; interior nodes only carry a kind.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntaxNode {
    pub kind: String,
    pub children: Vec<SyntaxNode>,
    pub token_text: String,
}

impl SyntaxNode {
    pub fn leaf(kind: impl Into<String>, token: impl Into<String>) -> Self {
        Self {
            kind: kind.into(),
            children: Vec::new(),
            token_text: token.into(),
        }
    }

    pub fn interior(kind: impl Into<String>, children: Vec<SyntaxNode>) -> Self {
        Self {
            kind: kind.into(),
            children,
            token_text: String::new(),
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    /// Leaves in source (pre-order) position.
    pub fn leaves(&self) -> Vec<&SyntaxNode> {
        let mut out = Vec::new();
        let mut stack = vec![self];
        while let Some(node) = stack.pop() {
            if node.is_leaf() {
                out.push(node);
            } else {
                stack.extend(node.children.iter().rev());
            }
        }
        out
    }

    /// Pre-order search for the first node of the given kind.
    pub fn find(&self, kind: &str) -> Option<&SyntaxNode> {
        let mut stack = vec![self];
        while let Some(node) = stack.pop() {
            if node.kind == kind {
                return Some(node);
            }
            stack.extend(node.children.iter().rev());
        }
        None
    }

    pub fn node_count(&self) -> usize {
        1 + self.children.iter().map(SyntaxNode::node_count).sum::<usize>()
    }

    /// Checks the structural invariants: leaves have text, interior nodes have children.
    pub fn is_well_formed(&self) -> bool {
        if self.is_leaf() {
            !self.token_text.is_empty()
        } else {
            self.token_text.is_empty() && self.children.iter().all(SyntaxNode::is_well_formed)
        }
    }
}
