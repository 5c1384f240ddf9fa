//! Expression-tree networks.
//!
//! Every node of the tree is a neuron: it applies an activation drawn from a
//! fixed library to the outputs of its children and then its own affine map,
//! `E = w * f(children) + b`. Leaves are input variables and carry a `(w, b)`
//! pair like every other node.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, XnetError};

/// Default ceiling on tree depth (a lone leaf has depth 1).
pub const DEFAULT_MAX_DEPTH: usize = 10;

/// Number of operator kinds in the library, i.e. everything except `Var`.
pub const OPERATOR_KINDS: usize = 11;

/// Activation/operator library plus variable leaves.
///
/// Variant order is the canonical library order and doubles as the
/// tie-break order everywhere; the derived `Ord` follows it, with `Var(i)`
/// ordered by index after all operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NodeKind {
    Add,
    Sub,
    Mul,
    Div,
    Sin,
    Cos,
    Log,
    Sqrt,
    Exp,
    Relu,
    Sigmoid,
    Var(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arity {
    Leaf,
    Unary,
    Binary,
}

impl Arity {
    pub fn children(self) -> usize {
        match self {
            Arity::Leaf => 0,
            Arity::Unary => 1,
            Arity::Binary => 2,
        }
    }
}

impl NodeKind {
    pub const OPERATORS: [NodeKind; OPERATOR_KINDS] = [
        NodeKind::Add,
        NodeKind::Sub,
        NodeKind::Mul,
        NodeKind::Div,
        NodeKind::Sin,
        NodeKind::Cos,
        NodeKind::Log,
        NodeKind::Sqrt,
        NodeKind::Exp,
        NodeKind::Relu,
        NodeKind::Sigmoid,
    ];

    pub fn arity(self) -> Arity {
        match self {
            NodeKind::Add | NodeKind::Sub | NodeKind::Mul | NodeKind::Div => Arity::Binary,
            NodeKind::Var(_) => Arity::Leaf,
            _ => Arity::Unary,
        }
    }

    pub fn is_leaf(self) -> bool {
        matches!(self, NodeKind::Var(_))
    }

    /// Position in the canonical library order.
    pub fn canonical_index(self) -> usize {
        match self {
            NodeKind::Var(i) => OPERATOR_KINDS + i,
            op => NodeKind::OPERATORS.iter().position(|k| *k == op).unwrap(),
        }
    }

    /// The full library for `input_dim` variables, in canonical order.
    pub fn library(input_dim: usize) -> Vec<NodeKind> {
        NodeKind::OPERATORS
            .iter()
            .copied()
            .chain((0..input_dim).map(NodeKind::Var))
            .collect()
    }

    pub fn name(self) -> String {
        match self {
            NodeKind::Add => "add".into(),
            NodeKind::Sub => "sub".into(),
            NodeKind::Mul => "mul".into(),
            NodeKind::Div => "div".into(),
            NodeKind::Sin => "sin".into(),
            NodeKind::Cos => "cos".into(),
            NodeKind::Log => "log".into(),
            NodeKind::Sqrt => "sqrt".into(),
            NodeKind::Exp => "exp".into(),
            NodeKind::Relu => "relu".into(),
            NodeKind::Sigmoid => "sigmoid".into(),
            NodeKind::Var(i) => format!("x{}", i + 1),
        }
    }
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for NodeKind {
    type Err = XnetError;

    fn from_str(s: &str) -> Result<Self> {
        let kind = match s {
            "add" => NodeKind::Add,
            "sub" => NodeKind::Sub,
            "mul" => NodeKind::Mul,
            "div" => NodeKind::Div,
            "sin" => NodeKind::Sin,
            "cos" => NodeKind::Cos,
            "log" => NodeKind::Log,
            "sqrt" => NodeKind::Sqrt,
            "exp" => NodeKind::Exp,
            "relu" => NodeKind::Relu,
            "sigmoid" => NodeKind::Sigmoid,
            other => {
                let index = other
                    .strip_prefix('x')
                    .and_then(|n| n.parse::<usize>().ok())
                    .filter(|n| *n >= 1)
                    .ok_or_else(|| XnetError::MalformedEncoding(format!("unknown kind `{other}`")))?;
                NodeKind::Var(index - 1)
            }
        };
        Ok(kind)
    }
}

/// One neuron. Children are present exactly as the kind's arity requires.
#[derive(Debug, Clone)]
pub struct Node {
    pub kind: NodeKind,
    pub w: f64,
    pub b: f64,
    /// Output of this node from the most recent forward pass.
    pub e_cached: f64,
    pub left: Option<Box<Node>>,
    pub right: Option<Box<Node>>,
}

/// Structural equality: kinds and bit-exact parameters. The output cache is
/// not part of a node's identity.
impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
            && self.w.to_bits() == other.w.to_bits()
            && self.b.to_bits() == other.b.to_bits()
            && self.left == other.left
            && self.right == other.right
    }
}

impl Node {
    pub fn leaf(var: usize) -> Self {
        Node::with_children(NodeKind::Var(var), None, None)
    }

    pub fn unary(kind: NodeKind, child: Node) -> Self {
        debug_assert_eq!(kind.arity(), Arity::Unary);
        Node::with_children(kind, Some(Box::new(child)), None)
    }

    pub fn binary(kind: NodeKind, left: Node, right: Node) -> Self {
        debug_assert_eq!(kind.arity(), Arity::Binary);
        Node::with_children(kind, Some(Box::new(left)), Some(Box::new(right)))
    }

    fn with_children(kind: NodeKind, left: Option<Box<Node>>, right: Option<Box<Node>>) -> Self {
        Node {
            kind,
            w: 1.0,
            b: 0.0,
            e_cached: 0.0,
            left,
            right,
        }
    }

    pub fn with_params(mut self, w: f64, b: f64) -> Self {
        self.w = w;
        self.b = b;
        self
    }

    pub fn size(&self) -> usize {
        1 + self.left.as_ref().map_or(0, |n| n.size()) + self.right.as_ref().map_or(0, |n| n.size())
    }

    pub fn depth(&self) -> usize {
        1 + self
            .left
            .as_ref()
            .map_or(0, |n| n.depth())
            .max(self.right.as_ref().map_or(0, |n| n.depth()))
    }

    pub fn operator_count(&self) -> usize {
        usize::from(!self.kind.is_leaf())
            + self.left.as_ref().map_or(0, |n| n.operator_count())
            + self.right.as_ref().map_or(0, |n| n.operator_count())
    }

    fn arity_ok(&self, input_dim: usize) -> bool {
        let shape_ok = match self.kind.arity() {
            Arity::Leaf => self.left.is_none() && self.right.is_none(),
            Arity::Unary => self.left.is_some() && self.right.is_none(),
            Arity::Binary => self.left.is_some() && self.right.is_some(),
        };
        let var_ok = match self.kind {
            NodeKind::Var(i) => i < input_dim,
            _ => true,
        };
        shape_ok
            && var_ok
            && self.left.as_ref().is_none_or(|n| n.arity_ok(input_dim))
            && self.right.as_ref().is_none_or(|n| n.arity_ok(input_dim))
    }

    fn visit_preorder<'a>(&'a self, out: &mut Vec<&'a Node>) {
        out.push(self);
        if let Some(l) = &self.left {
            l.visit_preorder(out);
        }
        if let Some(r) = &self.right {
            r.visit_preorder(out);
        }
    }

    fn for_each_mut(&mut self, f: &mut impl FnMut(&mut Node)) {
        f(self);
        if let Some(l) = self.left.as_mut() {
            l.for_each_mut(f);
        }
        if let Some(r) = self.right.as_mut() {
            r.for_each_mut(f);
        }
    }

    /// Preorder lookup relative to this node (index 0 is `self`).
    fn find_mut(&mut self, index: usize) -> Option<&mut Node> {
        if index == 0 {
            return Some(self);
        }
        let left_size = self.left.as_ref().map_or(0, |n| n.size());
        if index <= left_size {
            self.left.as_mut()?.find_mut(index - 1)
        } else {
            self.right.as_mut()?.find_mut(index - 1 - left_size)
        }
    }
}

/// Node and parameter totals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeCounts {
    /// Non-leaf nodes.
    pub operators: usize,
    /// All nodes, leaves included.
    pub total: usize,
    /// One `w` and one `b` per node.
    pub parameters: usize,
}

/// The network: a binary tree of neurons over `input_dim` input variables.
#[derive(Debug, Clone)]
pub struct ExprTree {
    root: Node,
    input_dim: usize,
    /// Set by a forward pass, cleared by any structural or parameter edit.
    cache_valid: bool,
}

impl PartialEq for ExprTree {
    fn eq(&self, other: &Self) -> bool {
        self.input_dim == other.input_dim && self.root == other.root
    }
}

impl ExprTree {
    pub fn new(root: Node, input_dim: usize) -> Result<Self> {
        if input_dim == 0 {
            return Err(XnetError::InvalidDimension(0));
        }
        let tree = ExprTree {
            root,
            input_dim,
            cache_valid: false,
        };
        if !tree.arity_audit() {
            return Err(XnetError::MalformedEncoding(
                "children do not match node arity or a variable index is out of range".into(),
            ));
        }
        Ok(tree)
    }

    /// The starting network `x*x + sin(x)` with identity parameters.
    ///
    /// Only `x1` appears even when `input_dim > 1`; other variables enter the
    /// tree through evolution.
    pub fn init_default(input_dim: usize) -> Result<Self> {
        if input_dim == 0 {
            return Err(XnetError::InvalidDimension(0));
        }
        let root = Node::binary(
            NodeKind::Add,
            Node::binary(NodeKind::Mul, Node::leaf(0), Node::leaf(0)),
            Node::unary(NodeKind::Sin, Node::leaf(0)),
        );
        Ok(ExprTree {
            root,
            input_dim,
            cache_valid: false,
        })
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn root_mut(&mut self) -> &mut Node {
        self.cache_valid = false;
        &mut self.root
    }

    pub fn cache_valid(&self) -> bool {
        self.cache_valid
    }

    pub(crate) fn set_cache_valid(&mut self) {
        self.cache_valid = true;
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn len(&self) -> usize {
        self.root.size()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn depth(&self) -> usize {
        self.root.depth()
    }

    pub fn count_nodes(&self) -> NodeCounts {
        let total = self.root.size();
        NodeCounts {
            operators: self.root.operator_count(),
            total,
            parameters: 2 * total,
        }
    }

    /// True when every node has exactly the children its kind requires and
    /// every variable index is below `input_dim`.
    pub fn arity_audit(&self) -> bool {
        self.root.arity_ok(self.input_dim)
    }

    pub fn preorder(&self) -> Vec<&Node> {
        let mut out = Vec::with_capacity(self.len());
        self.root.visit_preorder(&mut out);
        out
    }

    pub fn node_at_mut(&mut self, index: usize) -> Option<&mut Node> {
        self.cache_valid = false;
        self.root.find_mut(index)
    }

    /// Depth of the node at preorder `index` (the root is at depth 1).
    pub fn depth_of(&self, index: usize) -> Option<usize> {
        fn walk(node: &Node, index: usize, level: usize) -> Option<usize> {
            if index == 0 {
                return Some(level);
            }
            let left_size = node.left.as_ref().map_or(0, |n| n.size());
            if index <= left_size {
                walk(node.left.as_ref()?, index - 1, level + 1)
            } else {
                walk(node.right.as_ref()?, index - 1 - left_size, level + 1)
            }
        }
        walk(&self.root, index, 1)
    }

    pub fn for_each_node_mut(&mut self, mut f: impl FnMut(&mut Node)) {
        self.cache_valid = false;
        self.root.for_each_mut(&mut f);
    }

    pub fn params(&self) -> Vec<(f64, f64)> {
        self.preorder().iter().map(|n| (n.w, n.b)).collect()
    }

    /// Resets every node to `w = 1`, `b = 0`.
    pub fn reset_params(&mut self) {
        self.for_each_node_mut(|n| {
            n.w = 1.0;
            n.b = 0.0;
        });
    }

    pub fn cached_outputs(&self) -> Vec<f64> {
        self.preorder().iter().map(|n| n.e_cached).collect()
    }

    pub fn serialize_preorder(&self) -> Vec<PreorderEntry> {
        self.preorder()
            .iter()
            .map(|n| PreorderEntry {
                kind: n.kind,
                w: n.w,
                b: n.b,
            })
            .collect()
    }

    pub fn deserialize_preorder(seq: &[PreorderEntry], input_dim: usize) -> Result<Self> {
        if input_dim == 0 {
            return Err(XnetError::InvalidDimension(0));
        }
        let mut cursor = 0;
        let root = build(seq, &mut cursor)?;
        if cursor != seq.len() {
            return Err(XnetError::MalformedEncoding(format!(
                "{} trailing entries after a complete tree",
                seq.len() - cursor
            )));
        }
        ExprTree::new(root, input_dim)
    }

    /// Canonical `.xnet` text: one `KIND w b` line per node in preorder.
    /// Parameters use the shortest representation that parses back to the
    /// same bits.
    pub fn to_xnet(&self) -> String {
        let mut out = String::new();
        for e in self.serialize_preorder() {
            out.push_str(&format!("{} {} {}\n", e.kind, e.w, e.b));
        }
        out
    }

    /// Parses `.xnet` text. Blank lines and lines starting with `#` are
    /// skipped.
    pub fn from_xnet(text: &str, input_dim: usize) -> Result<Self> {
        let mut seq = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(XnetError::MalformedEncoding(format!(
                    "line {}: expected `KIND w b`, got `{line}`",
                    lineno + 1
                )));
            }
            let parse = |s: &str| {
                s.parse::<f64>().map_err(|_| {
                    XnetError::MalformedEncoding(format!("line {}: bad number `{s}`", lineno + 1))
                })
            };
            seq.push(PreorderEntry {
                kind: fields[0].parse()?,
                w: parse(fields[1])?,
                b: parse(fields[2])?,
            });
        }
        ExprTree::deserialize_preorder(&seq, input_dim)
    }

    /// Smallest input dimension that covers every variable in the tree.
    pub fn min_input_dim(&self) -> usize {
        self.preorder()
            .iter()
            .filter_map(|n| match n.kind {
                NodeKind::Var(i) => Some(i + 1),
                _ => None,
            })
            .max()
            .unwrap_or(1)
    }

    /// Infix formula with constants rounded to `precision` decimals and
    /// variables named `x1, x2, ...`.
    pub fn to_formula(&self, precision: usize) -> String {
        self.render(&default_names(self.input_dim), Some(precision))
    }

    /// Infix formula with constants written losslessly.
    pub fn to_formula_exact(&self) -> String {
        self.render(&default_names(self.input_dim), None)
    }

    pub fn to_formula_named(&self, names: &[String], precision: Option<usize>) -> String {
        self.render(names, precision)
    }

    fn render(&self, names: &[String], precision: Option<usize>) -> String {
        render_node(&self.root, names, precision).text
    }
}

impl fmt::Display for ExprTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_formula(2))
    }
}

/// One element of the preorder serialization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreorderEntry {
    pub kind: NodeKind,
    pub w: f64,
    pub b: f64,
}

fn build(seq: &[PreorderEntry], cursor: &mut usize) -> Result<Node> {
    let entry = seq
        .get(*cursor)
        .ok_or_else(|| XnetError::MalformedEncoding("sequence ends before the tree is complete".into()))?;
    *cursor += 1;
    let mut node = match entry.kind.arity() {
        Arity::Leaf => Node::with_children(entry.kind, None, None),
        Arity::Unary => {
            let child = build(seq, cursor)?;
            Node::with_children(entry.kind, Some(Box::new(child)), None)
        }
        Arity::Binary => {
            let left = build(seq, cursor)?;
            let right = build(seq, cursor)?;
            Node::with_children(entry.kind, Some(Box::new(left)), Some(Box::new(right)))
        }
    };
    node.w = entry.w;
    node.b = entry.b;
    Ok(node)
}

fn default_names(input_dim: usize) -> Vec<String> {
    (0..input_dim).map(|i| format!("x{}", i + 1)).collect()
}

struct Rendered {
    text: String,
    /// Top level is a sum (`... + b`) and needs parentheses as an operand.
    is_sum: bool,
}

fn fmt_const(v: f64, precision: Option<usize>) -> String {
    match precision {
        Some(p) => format!("{v:.p$}"),
        None => format!("{v}"),
    }
}

fn render_node(node: &Node, names: &[String], precision: Option<usize>) -> Rendered {
    // A divisor with a weight prefix needs parentheses as well.
    let operand = |child: &Node, divisor: bool| {
        let r = render_node(child, names, precision);
        if r.is_sum || (divisor && child.w != 1.0) {
            format!("({})", r.text)
        } else {
            r.text
        }
    };
    let core = match node.kind {
        NodeKind::Var(i) => names.get(i).cloned().unwrap_or_else(|| format!("x{}", i + 1)),
        NodeKind::Add | NodeKind::Sub | NodeKind::Mul | NodeKind::Div => {
            let l = operand(node.left.as_ref().expect("binary node has a left child"), false);
            let r = operand(node.right.as_ref().expect("binary node has a right child"), node.kind == NodeKind::Div);
            let op = match node.kind {
                NodeKind::Add => " + ",
                NodeKind::Sub => " - ",
                NodeKind::Mul => "*",
                _ => "/",
            };
            format!("({l}{op}{r})")
        }
        kind => {
            let arg = render_node(node.left.as_ref().expect("unary node has a child"), names, precision);
            format!("{}({})", kind.name(), arg.text)
        }
    };
    let mut text = if node.w == 1.0 {
        core
    } else {
        format!("{}*{}", fmt_const(node.w, precision), core)
    };
    let is_sum = node.b != 0.0;
    if node.b > 0.0 {
        text.push_str(&format!(" + {}", fmt_const(node.b, precision)));
    } else if node.b < 0.0 {
        text.push_str(&format!(" - {}", fmt_const(-node.b, precision)));
    }
    Rendered { text, is_sum }
}

/// Random well-formed tree with identity parameters, no deeper than
/// `max_depth`. Used for fuzzing and property tests.
pub fn random_tree<R: Rng + ?Sized>(rng: &mut R, input_dim: usize, max_depth: usize) -> ExprTree {
    fn grow<R: Rng + ?Sized>(rng: &mut R, input_dim: usize, depth_left: usize) -> Node {
        let leaf_prob = if depth_left <= 1 { 1.0 } else { 0.3 };
        if rng.gen_bool(leaf_prob) {
            return Node::leaf(rng.gen_range(0..input_dim));
        }
        let kind = NodeKind::OPERATORS[rng.gen_range(0..OPERATOR_KINDS)];
        match kind.arity() {
            Arity::Binary => {
                let l = grow(rng, input_dim, depth_left - 1);
                let r = grow(rng, input_dim, depth_left - 1);
                Node::binary(kind, l, r)
            }
            _ => Node::unary(kind, grow(rng, input_dim, depth_left - 1)),
        }
    }
    let root = grow(rng, input_dim, max_depth.max(1));
    ExprTree {
        root,
        input_dim: input_dim.max(1),
        cache_valid: false,
    }
}
