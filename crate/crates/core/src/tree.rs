//! Rooted trees describing a nested Dirichlet structure, their edge
//! parameters, and the transform between compositions and branch proportions.
//!
//! Nodes live in an arena in preorder, so the root is always index 0 and every
//! parent precedes its children. Terminal nodes carry the component labels;
//! interior nodes are named `N1, N2, ...` in preorder.

use std::fmt::Write as _;

use ndarray::Array2;

use crate::composition::{CompositionMatrix, ROW_SUM_TOL};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Terminal,
    Interior,
    Root,
}

impl NodeKind {
    fn describe(self) -> &'static str {
        match self {
            NodeKind::Terminal => "terminal",
            NodeKind::Interior => "interior",
            NodeKind::Root => "root",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    name: String,
    kind: NodeKind,
    parent: Option<NodeId>,
    children: Vec<NodeId>,
    // T(k) as component indices, in component order.
    terminals: Vec<usize>,
}

impl Node {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> NodeKind {
        self.kind
    }

    pub fn parent(&self) -> Option<NodeId> {
        self.parent
    }

    pub fn children(&self) -> &[NodeId] {
        &self.children
    }

    pub fn is_terminal(&self) -> bool {
        self.kind == NodeKind::Terminal
    }
}

/// Recursive tree description, as read from or written to the text format.
#[derive(Debug, Clone, PartialEq)]
pub enum TreeShape {
    Leaf {
        label: String,
        alpha: Option<f64>,
    },
    Group {
        children: Vec<TreeShape>,
        alpha: Option<f64>,
    },
}

impl TreeShape {
    pub fn leaf(label: impl Into<String>) -> Self {
        TreeShape::Leaf {
            label: label.into(),
            alpha: None,
        }
    }

    pub fn group(children: Vec<TreeShape>) -> Self {
        TreeShape::Group { children, alpha: None }
    }

    fn alpha(&self) -> Option<f64> {
        match self {
            TreeShape::Leaf { alpha, .. } | TreeShape::Group { alpha, .. } => *alpha,
        }
    }
}

/// One step of the path from the root to a terminal: the nonterminal `node`
/// and its child `child` on the way down (C_j(k)).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PathStep {
    pub node: NodeId,
    pub child: NodeId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
    // Terminal node for each component, in component order.
    terminals: Vec<NodeId>,
    component_names: Vec<String>,
}

impl Tree {
    pub fn from_shape(shape: &TreeShape) -> Result<Self> {
        let TreeShape::Group { children, .. } = shape else {
            return Err(Error::Arity {
                offset: None,
                children: 0,
            });
        };
        if children.len() < 2 {
            return Err(Error::Arity {
                offset: None,
                children: children.len(),
            });
        }
        let mut tree = Tree {
            nodes: Vec::new(),
            terminals: Vec::new(),
            component_names: Vec::new(),
        };
        tree.push(shape, None)?;
        tree.name_interior_nodes();
        tree.fill_terminal_sets();
        Ok(tree)
    }

    fn push(&mut self, shape: &TreeShape, parent: Option<NodeId>) -> Result<NodeId> {
        let id = NodeId(self.nodes.len());
        match shape {
            TreeShape::Leaf { label, .. } => {
                if self.component_names.contains(label) {
                    return Err(Error::DuplicateLabel(label.clone()));
                }
                self.nodes.push(Node {
                    name: label.clone(),
                    kind: NodeKind::Terminal,
                    parent,
                    children: Vec::new(),
                    terminals: vec![self.component_names.len()],
                });
                self.terminals.push(id);
                self.component_names.push(label.clone());
            }
            TreeShape::Group { children, .. } => {
                if children.len() < 2 {
                    return Err(Error::Arity {
                        offset: None,
                        children: children.len(),
                    });
                }
                let kind = if parent.is_none() {
                    NodeKind::Root
                } else {
                    NodeKind::Interior
                };
                self.nodes.push(Node {
                    name: String::new(),
                    kind,
                    parent,
                    children: Vec::new(),
                    terminals: Vec::new(),
                });
                for child in children {
                    let c = self.push(child, Some(id))?;
                    self.nodes[id.0].children.push(c);
                }
            }
        }
        Ok(id)
    }

    fn name_interior_nodes(&mut self) {
        let taken = |name: &str, names: &[String]| names.iter().any(|n| n == name);
        let mut suffix = String::new();
        // Interior names must not shadow component labels.
        while taken(&format!("Root{suffix}"), &self.component_names)
            || (1..=self.nodes.len()).any(|i| taken(&format!("N{i}{suffix}"), &self.component_names))
        {
            suffix.push('_');
        }
        let mut counter = 0;
        for node in &mut self.nodes {
            match node.kind {
                NodeKind::Root => node.name = format!("Root{suffix}"),
                NodeKind::Interior => {
                    counter += 1;
                    node.name = format!("N{counter}{suffix}");
                }
                NodeKind::Terminal => {}
            }
        }
    }

    fn fill_terminal_sets(&mut self) {
        for i in (0..self.nodes.len()).rev() {
            if self.nodes[i].is_terminal() {
                continue;
            }
            let mut set: Vec<usize> = self.nodes[i]
                .children
                .iter()
                .flat_map(|c| self.nodes[c.0].terminals.iter().copied())
                .collect();
            set.sort_unstable();
            self.nodes[i].terminals = set;
        }
    }

    /// The Dirichlet tree with all components directly under the root.
    pub fn flat<S: AsRef<str>>(labels: &[S]) -> Result<Self> {
        let children = labels.iter().map(|l| TreeShape::leaf(l.as_ref())).collect();
        Self::from_shape(&TreeShape::group(children))
    }

    pub fn root(&self) -> NodeId {
        NodeId(0)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn name(&self, id: NodeId) -> &str {
        &self.nodes[id.0].name
    }

    pub fn kind(&self, id: NodeId) -> NodeKind {
        self.nodes[id.0].kind
    }

    pub fn children(&self, id: NodeId) -> &[NodeId] {
        &self.nodes[id.0].children
    }

    /// T(k): indices of the components under `id`.
    pub fn terminal_set(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].terminals
    }

    pub fn find(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().position(|n| n.name == name).map(NodeId)
    }

    pub fn contains(&self, id: NodeId) -> bool {
        id.0 < self.nodes.len()
    }

    /// Number of components p.
    pub fn num_components(&self) -> usize {
        self.terminals.len()
    }

    pub fn component_names(&self) -> &[String] {
        &self.component_names
    }

    /// Terminal node of component `j`.
    pub fn terminal(&self, j: usize) -> NodeId {
        self.terminals[j]
    }

    pub fn ids(&self) -> impl Iterator<Item = NodeId> {
        (0..self.nodes.len()).map(NodeId)
    }

    /// Root and interior nodes in preorder.
    pub fn nonterminals(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.ids().filter(|&id| !self.nodes[id.0].is_terminal())
    }

    pub fn interior_nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.ids().filter(|&id| self.nodes[id.0].kind == NodeKind::Interior)
    }

    pub fn non_root_nodes(&self) -> impl Iterator<Item = NodeId> {
        (1..self.nodes.len()).map(NodeId)
    }

    pub fn num_interior(&self) -> usize {
        self.interior_nodes().count()
    }

    /// True when every nonterminal node has exactly two children.
    pub fn is_fully_binary(&self) -> bool {
        self.nonterminals().all(|k| self.children(k).len() == 2)
    }

    /// P_j: the nodes from the root down to the parent of terminal `j`, each
    /// paired with its child on the path.
    pub fn path_to(&self, j: NodeId) -> Result<Vec<PathStep>> {
        if !self.contains(j) {
            return Err(Error::UnknownNode(format!("#{}", j.0)));
        }
        if !self.nodes[j.0].is_terminal() {
            return Err(Error::NodeKind {
                node: self.nodes[j.0].name.clone(),
                kind: self.nodes[j.0].kind.describe(),
            });
        }
        let mut steps = Vec::new();
        let mut child = j;
        while let Some(node) = self.nodes[child.0].parent {
            steps.push(PathStep { node, child });
            child = node;
        }
        steps.reverse();
        Ok(steps)
    }

    /// Maps tree components onto data columns: entry `j` is the column holding
    /// component `j`.
    pub fn align(&self, columns: &[String]) -> Result<Vec<usize>> {
        if columns.len() != self.num_components() {
            return Err(Error::ColumnMismatch(format!(
                "tree has {} components, data has {} columns",
                self.num_components(),
                columns.len()
            )));
        }
        self.component_names
            .iter()
            .map(|name| {
                columns
                    .iter()
                    .position(|c| c == name)
                    .ok_or_else(|| Error::ColumnMismatch(format!("no column named `{name}`")))
            })
            .collect()
    }

    pub fn to_shape(&self, params: Option<&ParamVector>) -> TreeShape {
        self.shape_of(self.root(), params)
    }

    fn shape_of(&self, id: NodeId, params: Option<&ParamVector>) -> TreeShape {
        let alpha = params.and_then(|p| p.get(id));
        let node = &self.nodes[id.0];
        if node.is_terminal() {
            TreeShape::Leaf {
                label: node.name.clone(),
                alpha,
            }
        } else {
            TreeShape::Group {
                children: node.children.iter().map(|&c| self.shape_of(c, params)).collect(),
                alpha,
            }
        }
    }
}

/// Edge parameters α_k for every non-root node of a tree.
#[derive(Debug, Clone)]
pub struct ParamVector {
    // Indexed by node; the root slot is unused (NaN).
    alpha: Vec<f64>,
}

impl PartialEq for ParamVector {
    fn eq(&self, other: &Self) -> bool {
        self.alpha.len() == other.alpha.len()
            && self
                .alpha
                .iter()
                .zip(&other.alpha)
                .all(|(a, b)| a == b || (a.is_nan() && b.is_nan()))
    }
}

impl ParamVector {
    pub fn new(tree: &Tree, values: impl IntoIterator<Item = (NodeId, f64)>) -> Result<Self> {
        let mut alpha = vec![f64::NAN; tree.len()];
        for (id, value) in values {
            if !tree.contains(id) {
                return Err(Error::UnknownNode(format!("#{}", id.0)));
            }
            if id == tree.root() {
                return Err(Error::InvalidParameter("the root carries no parameter".into()));
            }
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "alpha for `{}` must be positive and finite, got {value}",
                    tree.name(id)
                )));
            }
            if !alpha[id.0].is_nan() {
                return Err(Error::InvalidParameter(format!(
                    "alpha for `{}` given twice",
                    tree.name(id)
                )));
            }
            alpha[id.0] = value;
        }
        if let Some(missing) = tree.non_root_nodes().find(|id| alpha[id.0].is_nan()) {
            return Err(Error::InvalidParameter(format!(
                "no alpha for node `{}`",
                tree.name(missing)
            )));
        }
        Ok(Self { alpha })
    }

    /// Parameters keyed by node name (component labels or `N1`, `N2`, ...).
    pub fn from_names<S: AsRef<str>>(tree: &Tree, values: &[(S, f64)]) -> Result<Self> {
        let pairs = values
            .iter()
            .map(|(name, v)| {
                tree.find(name.as_ref())
                    .map(|id| (id, *v))
                    .ok_or_else(|| Error::UnknownNode(name.as_ref().to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(tree, pairs)
    }

    /// α for a non-root node; `None` for the root.
    pub fn get(&self, id: NodeId) -> Option<f64> {
        self.alpha.get(id.0).copied().filter(|a| !a.is_nan())
    }

    /// α for a non-root node.
    ///
    /// Panics on the root.
    pub fn alpha(&self, id: NodeId) -> f64 {
        let a = self.alpha[id.0];
        assert!(!a.is_nan(), "the root carries no parameter");
        a
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, f64)> + '_ {
        self.alpha.iter().enumerate().skip(1).map(|(i, &a)| (NodeId(i), a))
    }

    /// α values of the children of nonterminal `k`, in child order.
    pub fn child_alphas(&self, tree: &Tree, k: NodeId) -> Vec<f64> {
        tree.children(k).iter().map(|&c| self.alpha(c)).collect()
    }

    /// φ_k, the precision of node `k`'s branch vector.
    pub fn phi(&self, tree: &Tree, k: NodeId) -> f64 {
        tree.children(k).iter().map(|&c| self.alpha(c)).sum()
    }

    pub(crate) fn set(&mut self, id: NodeId, value: f64) {
        self.alpha[id.0] = value;
    }

    pub(crate) fn unset(tree: &Tree) -> Self {
        Self {
            alpha: vec![f64::NAN; tree.len()],
        }
    }
}

/// Δ(s) = α_s − Σ_{k ∈ C(s)} α_k for an interior node `s`.
pub fn delta(tree: &Tree, params: &ParamVector, s: NodeId) -> Result<f64> {
    if !tree.contains(s) {
        return Err(Error::UnknownNode(format!("#{}", s.0)));
    }
    let kind = tree.kind(s);
    if kind != NodeKind::Interior {
        return Err(Error::NodeKind {
            node: tree.name(s).to_string(),
            kind: kind.describe(),
        });
    }
    Ok(params.alpha(s) - params.phi(tree, s))
}

/// Branch-proportion matrices, one per nonterminal node in preorder.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchData {
    blocks: Vec<(NodeId, Array2<f64>)>,
}

impl BranchData {
    pub fn new(blocks: Vec<(NodeId, Array2<f64>)>) -> Self {
        Self { blocks }
    }

    pub fn get(&self, k: NodeId) -> Option<&Array2<f64>> {
        self.blocks.iter().find(|(id, _)| *id == k).map(|(_, b)| b)
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, &Array2<f64>)> {
        self.blocks.iter().map(|(id, b)| (*id, b))
    }

    pub fn nrows(&self) -> usize {
        self.blocks.first().map_or(0, |(_, b)| b.nrows())
    }
}

/// Sums of the components under every node, for one composition given in
/// tree component order.
pub(crate) fn subtree_sums(tree: &Tree, x: impl Fn(usize) -> f64) -> Vec<f64> {
    let mut sums = vec![0.0; tree.len()];
    for i in (0..tree.len()).rev() {
        let node = &tree.nodes[i];
        sums[i] = if node.is_terminal() {
            x(node.terminals[0])
        } else {
            node.children.iter().map(|c| sums[c.0]).sum()
        };
    }
    sums
}

/// Converts compositions into the branch proportions of every nonterminal
/// node: b_{k,A} = Σ_{T(A)} x / Σ_{T(k)} x.
pub fn to_branches(tree: &Tree, x: &CompositionMatrix) -> Result<BranchData> {
    let columns = tree.align(x.names())?;
    x.check_interior()?;
    let values = x.values();
    let n = values.nrows();
    let nonterminals: Vec<NodeId> = tree.nonterminals().collect();
    let mut blocks: Vec<Array2<f64>> = nonterminals
        .iter()
        .map(|&k| Array2::zeros((n, tree.children(k).len())))
        .collect();
    for i in 0..n {
        let row = values.row(i);
        let total: f64 = row.sum();
        if (total - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::RowSum { row: i, sum: total });
        }
        let sums = subtree_sums(tree, |j| row[columns[j]]);
        for (block, &k) in blocks.iter_mut().zip(&nonterminals) {
            let denom = sums[k.0];
            if denom <= 0.0 {
                return Err(Error::ZeroDenominator {
                    row: i,
                    node: tree.name(k).to_string(),
                });
            }
            for (c, &child) in tree.children(k).iter().enumerate() {
                block[[i, c]] = sums[child.0] / denom;
            }
        }
    }
    Ok(BranchData::new(nonterminals.into_iter().zip(blocks).collect()))
}

/// Inverse of [`to_branches`]: x_j = Π_{k ∈ P_j} b_{k, C_j(k)}. Columns come
/// out in tree component order.
pub fn from_branches(tree: &Tree, b: &BranchData) -> Result<CompositionMatrix> {
    let n = b.nrows();
    let mut slot = vec![None; tree.len()];
    for (k, block) in b.iter() {
        if !tree.contains(k) || tree.node(k).is_terminal() {
            return Err(Error::UnknownNode(format!("#{}", k.0)));
        }
        let width = tree.children(k).len();
        if block.ncols() != width {
            return Err(Error::Dimension {
                expected: width,
                found: block.ncols(),
            });
        }
        if block.nrows() != n {
            return Err(Error::Dimension {
                expected: n,
                found: block.nrows(),
            });
        }
        slot[k.0] = Some(block);
    }
    if let Some(k) = tree.nonterminals().find(|k| slot[k.0].is_none()) {
        return Err(Error::UnknownNode(format!(
            "no branch proportions for `{}`",
            tree.name(k)
        )));
    }
    let p = tree.num_components();
    let mut out = Array2::zeros((n, p));
    // Product of branch proportions from the root down to every node.
    let mut prod = vec![1.0; tree.len()];
    for i in 0..n {
        for k in tree.nonterminals() {
            let block = slot[k.0].expect("checked");
            for (c, &child) in tree.children(k).iter().enumerate() {
                prod[child.0] = prod[k.0] * block[[i, c]];
            }
        }
        for j in 0..p {
            out[[i, j]] = prod[tree.terminal(j).0];
        }
    }
    CompositionMatrix::new(tree.component_names().to_vec(), out)
}

/// Parses the parenthesized tree format, e.g. `((X1,X2):3.5,X3:1.2)`.
pub fn parse_shape(text: &str) -> Result<TreeShape> {
    let mut parser = Parser {
        bytes: text.as_bytes(),
        pos: 0,
    };
    parser.skip_ws();
    let shape = parser.node()?;
    parser.skip_ws();
    if parser.pos != parser.bytes.len() {
        return Err(parser.error("unexpected trailing input"));
    }
    Ok(shape)
}

pub fn parse_tree(text: &str) -> Result<Tree> {
    Tree::from_shape(&parse_shape(text)?)
}

/// Parses a tree and, when every non-root node carries a `:α` suffix, its
/// parameters. Partially annotated trees are rejected.
pub fn parse_model(text: &str) -> Result<(Tree, Option<ParamVector>)> {
    let shape = parse_shape(text)?;
    if shape.alpha().is_some() {
        return Err(Error::InvalidParameter("the root carries no parameter".into()));
    }
    let tree = Tree::from_shape(&shape)?;
    let mut alphas = Vec::with_capacity(tree.len());
    collect_alphas(&shape, &mut alphas);
    let given = alphas.iter().skip(1).filter(|a| a.is_some()).count();
    if given == 0 {
        return Ok((tree, None));
    }
    if given != tree.len() - 1 {
        return Err(Error::InvalidParameter(format!(
            "{given} of {} non-root nodes carry a parameter; annotate all or none",
            tree.len() - 1
        )));
    }
    let pairs = alphas
        .into_iter()
        .enumerate()
        .skip(1)
        .map(|(i, a)| (NodeId(i), a.expect("all present")));
    let params = ParamVector::new(&tree, pairs)?;
    Ok((tree, Some(params)))
}

// Preorder, matching the arena layout of `Tree::from_shape`.
fn collect_alphas(shape: &TreeShape, out: &mut Vec<Option<f64>>) {
    out.push(shape.alpha());
    if let TreeShape::Group { children, .. } = shape {
        for c in children {
            collect_alphas(c, out);
        }
    }
}

pub fn serialize_shape(shape: &TreeShape) -> String {
    let mut out = String::new();
    write_shape(shape, &mut out);
    out
}

pub fn serialize_tree(tree: &Tree, params: Option<&ParamVector>) -> String {
    serialize_shape(&tree.to_shape(params))
}

fn write_shape(shape: &TreeShape, out: &mut String) {
    match shape {
        TreeShape::Leaf { label, .. } => out.push_str(label),
        TreeShape::Group { children, .. } => {
            out.push('(');
            for (i, c) in children.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_shape(c, out);
            }
            out.push(')');
        }
    }
    if let Some(a) = shape.alpha() {
        let _ = write!(out, ":{a}");
    }
}

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn error(&self, message: &str) -> Error {
        Error::Syntax {
            offset: self.pos,
            message: message.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn node(&mut self) -> Result<TreeShape> {
        self.skip_ws();
        let start = self.pos;
        let mut shape = match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let mut children = vec![self.node()?];
                loop {
                    self.skip_ws();
                    match self.peek() {
                        Some(b',') => {
                            self.pos += 1;
                            children.push(self.node()?);
                        }
                        Some(b')') => {
                            self.pos += 1;
                            break;
                        }
                        _ => return Err(self.error("expected `,` or `)`")),
                    }
                }
                if children.len() < 2 {
                    return Err(Error::Arity {
                        offset: Some(start),
                        children: children.len(),
                    });
                }
                TreeShape::group(children)
            }
            Some(c) if is_label_byte(c) => {
                while self.peek().is_some_and(is_label_byte) {
                    self.pos += 1;
                }
                let label = std::str::from_utf8(&self.bytes[start..self.pos]).expect("ascii");
                TreeShape::leaf(label)
            }
            _ => return Err(self.error("expected a label or `(`")),
        };
        self.skip_ws();
        if self.peek() == Some(b':') {
            self.pos += 1;
            self.skip_ws();
            let value = self.number()?;
            match &mut shape {
                TreeShape::Leaf { alpha, .. } | TreeShape::Group { alpha, .. } => *alpha = Some(value),
            }
        }
        Ok(shape)
    }

    fn number(&mut self) -> Result<f64> {
        let start = self.pos;
        while self
            .peek()
            .is_some_and(|c| c.is_ascii_digit() || matches!(c, b'.' | b'e' | b'E' | b'+' | b'-'))
        {
            self.pos += 1;
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).expect("ascii");
        text.parse::<f64>().map_err(|_| Error::Syntax {
            offset: start,
            message: format!("invalid number `{text}`"),
        })
    }
}

fn is_label_byte(c: u8) -> bool {
    c.is_ascii_alphanumeric() || c == b'_'
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn synthetic() -> Tree {
        parse_tree("((X1,X2,X3),(X4,X5))").unwrap()
    }

    #[test]
    fn parse_shapes_of_figure_one() {
        let dd = parse_tree("(X1,X2,X3,X4)").unwrap();
        assert_eq!(dd.num_interior(), 0);
        assert_eq!(dd.children(dd.root()).len(), 4);

        let ndd = parse_tree("((X1,X2),(X3,X4))").unwrap();
        assert_eq!(ndd.num_interior(), 2);
        assert!(ndd.is_fully_binary());

        let gdd = parse_tree("(X1,(X2,(X3,X4)))").unwrap();
        assert_eq!(gdd.num_interior(), 2);
        assert_eq!(gdd.node(gdd.find("N2").unwrap()).parent(), gdd.find("N1"));
        assert_eq!(gdd.component_names(), ["X1", "X2", "X3", "X4"]);
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(parse_tree("(X1,X2"), Err(Error::Syntax { offset: 6, .. })));
        assert!(matches!(parse_tree("(X1,X1)"), Err(Error::DuplicateLabel(l)) if l == "X1"));
        assert!(matches!(
            parse_tree("((X1),X2)"),
            Err(Error::Arity {
                offset: Some(1),
                children: 1
            })
        ));
        assert!(matches!(parse_tree("X1"), Err(Error::Arity { .. })));
        assert!(matches!(parse_tree("(X1,X-2)"), Err(Error::Syntax { .. })));
        assert!(matches!(parse_tree("(X1,X2) x"), Err(Error::Syntax { offset: 8, .. })));
        assert!(matches!(
            parse_tree("(X1:abc,X2)"),
            Err(Error::Syntax { offset: 4, .. })
        ));
    }

    #[test]
    fn parse_with_parameters() {
        let (tree, params) = parse_model(" ( (X1:0.5, X2:1.5 ,X3:2):8 , (X4:10,X5:10):2 ) ").unwrap();
        let params = params.unwrap();
        let n1 = tree.find("N1").unwrap();
        let n2 = tree.find("N2").unwrap();
        assert_eq!(params.alpha(n1), 8.0);
        assert_eq!(delta(&tree, &params, n1).unwrap(), 4.0);
        assert_eq!(delta(&tree, &params, n2).unwrap(), -18.0);
        assert_eq!(
            serialize_tree(&tree, Some(&params)),
            "((X1:0.5,X2:1.5,X3:2):8,(X4:10,X5:10):2)"
        );
        assert_eq!(serialize_tree(&tree, None), "((X1,X2,X3),(X4,X5))");

        assert!(parse_model("((X1:1,X2),X3:2)").is_err());
        assert!(parse_model("(X1:1,X2:2):3").is_err());
        assert!(parse_model("(X1:1,X2:-2)").is_err());
        assert!(parse_model("(X1,X2)").unwrap().1.is_none());
    }

    #[test]
    fn delta_errors_and_dd_reduction() {
        let tree = synthetic();
        let params = ParamVector::from_names(
            &tree,
            &[
                ("X1", 1.0),
                ("X2", 2.0),
                ("X3", 3.0),
                ("X4", 4.0),
                ("X5", 5.0),
                ("N1", 6.0),
                ("N2", 9.0),
            ],
        )
        .unwrap();
        assert_eq!(delta(&tree, &params, tree.find("N1").unwrap()).unwrap(), 0.0);
        assert_eq!(delta(&tree, &params, tree.find("N2").unwrap()).unwrap(), 0.0);
        assert!(matches!(
            delta(&tree, &params, tree.root()),
            Err(Error::NodeKind { kind: "root", .. })
        ));
        assert!(matches!(
            delta(&tree, &params, tree.find("X1").unwrap()),
            Err(Error::NodeKind { kind: "terminal", .. })
        ));
        assert!(matches!(delta(&tree, &params, NodeId(99)), Err(Error::UnknownNode(_))));
    }

    #[test]
    fn param_vector_validation() {
        let tree = parse_tree("((X1,X2),X3)").unwrap();
        assert!(ParamVector::from_names(&tree, &[("X1", 1.0), ("X2", 1.0)]).is_err());
        assert!(ParamVector::from_names(&tree, &[("X1", 1.0), ("X2", 1.0), ("X3", 1.0), ("N9", 1.0)]).is_err());
        assert!(ParamVector::from_names(&tree, &[("X1", 1.0), ("X2", 0.0), ("X3", 1.0), ("N1", 1.0)]).is_err());
        let ok = ParamVector::from_names(&tree, &[("X1", 1.0), ("X2", 2.0), ("X3", 3.0), ("N1", 4.0)]).unwrap();
        assert_eq!(ok.phi(&tree, tree.root()), 7.0);
        assert_eq!(ok.get(tree.root()), None);
    }

    #[test]
    fn branches_of_worked_example() {
        let tree = synthetic();
        let x = CompositionMatrix::from_rows(&[vec![0.1, 0.2, 0.3, 0.15, 0.25]]).unwrap();
        let b = to_branches(&tree, &x).unwrap();
        let close = |a: &Array2<f64>, want: &[f64]| a.row(0).iter().zip(want).all(|(u, v)| (u - v).abs() < 1e-15);
        assert!(close(b.get(tree.root()).unwrap(), &[0.6, 0.4]));
        assert!(close(
            b.get(tree.find("N1").unwrap()).unwrap(),
            &[1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]
        ));
        assert!(close(b.get(tree.find("N2").unwrap()).unwrap(), &[0.375, 0.625]));

        let back = from_branches(&tree, &b).unwrap();
        assert!((back.row(0)[1] - 0.6 * (2.0 / 6.0)).abs() < 1e-15);
        for (u, v) in back.row(0).iter().zip(x.row(0)) {
            assert!((u - v).abs() < 1e-15);
        }
    }

    #[test]
    fn flat_tree_branches_are_identity() {
        let tree = parse_tree("(X1,X2,X3)").unwrap();
        let x = CompositionMatrix::from_rows(&[vec![0.2, 0.5, 0.3]]).unwrap();
        let b = to_branches(&tree, &x).unwrap();
        assert_eq!(b.get(tree.root()).unwrap().row(0).to_vec(), vec![0.2, 0.5, 0.3]);
        let back = from_branches(&tree, &b).unwrap();
        assert_eq!(back.row(0).to_vec(), vec![0.2, 0.5, 0.3]);
    }

    #[test]
    fn branch_errors() {
        let tree = synthetic();
        let wrong = CompositionMatrix::new(
            vec!["X1".into(), "X2".into(), "X3".into(), "X4".into(), "Y".into()],
            Array2::from_elem((1, 5), 0.2),
        )
        .unwrap();
        assert!(matches!(to_branches(&tree, &wrong), Err(Error::ColumnMismatch(_))));
        let zero = CompositionMatrix::from_rows(&[vec![0.0, 0.2, 0.3, 0.25, 0.25]]).unwrap();
        assert!(matches!(to_branches(&tree, &zero), Err(Error::Boundary { .. })));
        let off = CompositionMatrix::from_rows(&[vec![0.1, 0.2, 0.3, 0.15, 0.2]]).unwrap();
        assert!(matches!(to_branches(&tree, &off), Err(Error::RowSum { row: 0, .. })));
    }

    #[test]
    fn columns_are_matched_by_name() {
        let tree = parse_tree("((AQ1,OQ),(AQ2,TQ))").unwrap();
        let x = CompositionMatrix::new(
            vec!["TQ".into(), "AQ1".into(), "OQ".into(), "AQ2".into()],
            Array2::from_shape_vec((1, 4), vec![0.4, 0.3, 0.2, 0.1]).unwrap(),
        )
        .unwrap();
        let b = to_branches(&tree, &x).unwrap();
        let root = b.get(tree.root()).unwrap();
        assert!((root[[0, 0]] - 0.5).abs() < 1e-15);
        let back = from_branches(&tree, &b).unwrap();
        assert_eq!(back.names(), ["AQ1", "OQ", "AQ2", "TQ"]);
        assert!((back.row(0)[3] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn paths() {
        let tree = synthetic();
        let x2 = tree.find("X2").unwrap();
        let path = tree.path_to(x2).unwrap();
        assert_eq!(path.len(), 2);
        assert_eq!(
            path[0],
            PathStep {
                node: tree.root(),
                child: tree.find("N1").unwrap()
            }
        );
        assert_eq!(
            path[1],
            PathStep {
                node: tree.find("N1").unwrap(),
                child: x2
            }
        );

        let gdd = parse_tree("(X1,(X2,(X3,X4)))").unwrap();
        let names = |t: &Tree, j: &str| -> Vec<String> {
            t.path_to(t.find(j).unwrap())
                .unwrap()
                .iter()
                .map(|s| t.name(s.node).to_string())
                .collect()
        };
        assert_eq!(names(&gdd, "X1"), ["Root"]);
        assert_eq!(names(&gdd, "X4"), ["Root", "N1", "N2"]);
        assert!(gdd.path_to(gdd.root()).is_err());
    }

    #[test]
    fn interior_names_avoid_component_labels() {
        let tree = parse_tree("((N1,N2),Root)").unwrap();
        assert_eq!(tree.name(tree.root()), "Root_");
        assert!(tree.find("N1_").is_some());
        assert!(tree.kind(tree.find("N1").unwrap()) == NodeKind::Terminal);
    }

    fn arb_shape(labels: Vec<String>) -> BoxedStrategy<TreeShape> {
        if labels.len() == 1 {
            return Just(TreeShape::leaf(labels[0].clone())).boxed();
        }
        let n = labels.len();
        // Random partition of the labels into 2..=n blocks, each recursively shaped.
        (2..=n, any::<u64>())
            .prop_flat_map(move |(k, seed)| {
                let mut blocks: Vec<Vec<String>> = vec![Vec::new(); k];
                for (i, l) in labels.iter().enumerate() {
                    let slot = if i < k {
                        i
                    } else {
                        (seed.rotate_left(i as u32) as usize) % k
                    };
                    blocks[slot].push(l.clone());
                }
                let strategies: Vec<_> = blocks.into_iter().map(arb_shape).collect();
                strategies.prop_map(TreeShape::group)
            })
            .boxed()
    }

    pub(crate) fn arb_tree(max_p: usize) -> impl Strategy<Value = Tree> {
        (2..=max_p)
            .prop_flat_map(|p| arb_shape((1..=p).map(|j| format!("X{j}")).collect()))
            .prop_filter_map("root must be a group", |s| Tree::from_shape(&s).ok())
    }

    proptest! {
        #[test]
        fn round_trip_and_partition(tree in arb_tree(7), seed in any::<u64>()) {
            let p = tree.num_components();
            let mut raw: Vec<f64> = (0..p)
                .map(|j| 0.05 + ((seed.rotate_left(7 * j as u32) % 1000) as f64) / 1000.0)
                .collect();
            let s: f64 = raw.iter().sum();
            raw.iter_mut().for_each(|v| *v /= s);
            let x = CompositionMatrix::new(
                tree.component_names().to_vec(),
                Array2::from_shape_vec((1, p), raw.clone()).unwrap(),
            ).unwrap();
            let back = from_branches(&tree, &to_branches(&tree, &x).unwrap()).unwrap();
            for (u, v) in back.row(0).iter().zip(&raw) {
                prop_assert!((u - v).abs() <= 1e-12);
            }
            for k in tree.nonterminals() {
                let mut union: Vec<usize> = tree.children(k).iter()
                    .flat_map(|&c| tree.terminal_set(c).to_vec()).collect();
                union.sort_unstable();
                prop_assert_eq!(&union[..], tree.terminal_set(k));
            }
            for j in 0..p {
                let path = tree.path_to(tree.terminal(j)).unwrap();
                prop_assert!(!path.is_empty());
                let root_child = tree.node(tree.terminal(j)).parent() == Some(tree.root());
                prop_assert_eq!(path.len() == 1, root_child);
            }
            if tree.is_fully_binary() {
                prop_assert_eq!(tree.nonterminals().count(), p - 1);
            }
            let text = serialize_tree(&tree, None);
            prop_assert_eq!(serialize_tree(&parse_tree(&text).unwrap(), None), text);
        }
    }
}
