//! Activation reselection and structural evolution.
//!
//! After an output step every node has a descended target output `E_new`.
//! Each node's children are fed through the whole activation library and the
//! candidate landing closest to `E_new` replaces the node's activation when
//! it is close enough. Substitution rules keep arity consistent whenever the
//! replacement changes the number of children.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, XnetError};
use crate::expr::{Arity, ExprTree, Node, NodeKind, DEFAULT_MAX_DEPTH};
use crate::numerics::{eval_node, evaluate_node, NumericLimits};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    /// A candidate is accepted only when its residual is strictly below this.
    pub accept_threshold: f64,
    /// Every `ite`-th update step reselects activations instead of stepping
    /// parameters.
    pub ite: usize,
    /// Non-improving epochs tolerated before a random perturbation.
    pub stagnation_limit: usize,
    pub max_depth: usize,
    pub rng_seed: u64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            accept_threshold: 0.01,
            ite: 50,
            stagnation_limit: 20,
            max_depth: DEFAULT_MAX_DEPTH,
            rng_seed: 0,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.accept_threshold.is_nan() || self.accept_threshold < 0.0 {
            return Err(XnetError::Config("accept_threshold must be non-negative".into()));
        }
        if self.ite == 0 || self.stagnation_limit == 0 || self.max_depth == 0 {
            return Err(XnetError::Config("ite, stagnation_limit and max_depth must be at least 1".into()));
        }
        Ok(())
    }
}

/// Output of one library entry on the current inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub kind: NodeKind,
    pub value: f64,
    /// False for `log`/`sqrt` on a non-positive input.
    pub admissible: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateScore {
    pub kind: NodeKind,
    pub value: f64,
    pub residual: f64,
}

/// Library outputs in canonical order. Binary entries need `e_right`; the
/// trailing entries are one per input variable, valued `x[j]`.
pub fn candidate_outputs(e_left: f64, e_right: Option<f64>, x: &[f64], limits: &NumericLimits) -> Vec<Candidate> {
    let mut out = Vec::with_capacity(NodeKind::OPERATORS.len() + x.len());
    for kind in NodeKind::OPERATORS {
        let right = match kind.arity() {
            Arity::Binary => match e_right {
                Some(r) => Some(r),
                None => continue,
            },
            _ => None,
        };
        let admissible = !matches!(kind, NodeKind::Log | NodeKind::Sqrt) || e_left > 0.0;
        out.push(Candidate {
            kind,
            value: eval_node(kind, e_left, right, limits),
            admissible,
        });
    }
    out.extend(x.iter().enumerate().map(|(j, &v)| Candidate {
        kind: NodeKind::Var(j),
        value: v,
        admissible: true,
    }));
    out
}

/// Inputs against which a node's candidates are scored.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionInputs {
    /// Descended target output of the node.
    pub e_new: f64,
    /// Descended left-child output (for leaves: the fresh-leaf value).
    pub e_left: f64,
    /// Descended right-child output; `None` drops binary candidates.
    pub e_right: Option<f64>,
}

/// Admissible candidates scored by `|value - E_new|`, sorted by residual with
/// canonical order breaking ties.
///
/// `log`/`sqrt` are inadmissible when the left input is non-positive or when
/// the node's current left child produced a non-positive cached output.
pub fn rank_candidates(node: &Node, inputs: &SelectionInputs, x: &[f64], limits: &NumericLimits) -> Vec<CandidateScore> {
    let child_positive = node.left.as_ref().is_none_or(|c| c.e_cached > 0.0);
    let mut scored: Vec<CandidateScore> = candidate_outputs(inputs.e_left, inputs.e_right, x, limits)
        .into_iter()
        .filter(|c| c.admissible && (child_positive || !matches!(c.kind, NodeKind::Log | NodeKind::Sqrt)))
        .map(|c| CandidateScore {
            kind: c.kind,
            value: c.value,
            residual: (c.value - inputs.e_new).abs(),
        })
        .filter(|c| c.residual.is_finite())
        .collect();
    scored.sort_by(|a, b| a.residual.total_cmp(&b.residual).then(a.kind.cmp(&b.kind)));
    scored
}

/// The argmin candidate when its residual is below the acceptance
/// threshold. May return the node's current kind.
pub fn select_kind(
    node: &Node,
    inputs: &SelectionInputs,
    x: &[f64],
    cfg: &SelectionConfig,
    limits: &NumericLimits,
) -> Option<NodeKind> {
    rank_candidates(node, inputs, x, limits)
        .first()
        .filter(|c| c.residual < cfg.accept_threshold)
        .map(|c| c.kind)
}

/// Which child survives a binary-to-unary rewrite.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SideHint {
    Left,
    Right,
    None,
}

/// What a substitution did to the node's children.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rewrite {
    /// Same arity, or a leaf switching variable: children untouched.
    KindOnly,
    /// Unary became binary: old child kept on the left, fresh leaf on the right.
    Grew,
    /// Binary became unary, keeping the given side.
    Collapsed(SideHint),
    /// Became a leaf; the subtree below is gone.
    Pruned,
    /// A leaf became an operator over fresh leaves.
    Sprouted,
}

/// Rewrites `node` in place to `new_kind`, applying the arity rules. The
/// node keeps its own `(w, b)`; fresh leaves are `Var(fresh_var)` with
/// identity parameters. `node_depth` is the node's level (root = 1).
pub fn substitute_node(
    node: &mut Node,
    new_kind: NodeKind,
    side: SideHint,
    fresh_var: usize,
    node_depth: usize,
    max_depth: usize,
) -> Result<Rewrite> {
    let old = node.kind.arity();
    let new = new_kind.arity();
    let fresh = || Some(Box::new(Node::leaf(fresh_var)));
    let grows = matches!((old, new), (Arity::Unary, Arity::Binary) | (Arity::Leaf, Arity::Unary | Arity::Binary));
    if grows {
        let subtree_depth = match old {
            Arity::Leaf => 2,
            _ => 1 + node.depth() - 1,
        };
        let depth = node_depth + subtree_depth - 1;
        if depth > max_depth {
            return Err(XnetError::DepthExceeded { depth, max: max_depth });
        }
    }
    let rewrite = match (old, new) {
        (_, Arity::Leaf) => {
            node.left = None;
            node.right = None;
            if old == Arity::Leaf {
                Rewrite::KindOnly
            } else {
                Rewrite::Pruned
            }
        }
        (Arity::Unary, Arity::Unary) | (Arity::Binary, Arity::Binary) => Rewrite::KindOnly,
        (Arity::Unary, Arity::Binary) => {
            node.right = fresh();
            Rewrite::Grew
        }
        (Arity::Binary, Arity::Unary) => {
            if side == SideHint::Right {
                node.left = node.right.take();
            } else {
                node.right = None;
            }
            Rewrite::Collapsed(if side == SideHint::Right { SideHint::Right } else { SideHint::Left })
        }
        (Arity::Leaf, Arity::Unary) => {
            node.left = fresh();
            Rewrite::Sprouted
        }
        (Arity::Leaf, Arity::Binary) => {
            node.left = fresh();
            node.right = fresh();
            Rewrite::Sprouted
        }
    };
    node.kind = new_kind;
    Ok(rewrite)
}

/// Tree-level substitution at a preorder position.
pub fn substitute(
    tree: &mut ExprTree,
    position: usize,
    new_kind: NodeKind,
    side: SideHint,
    fresh_var: usize,
    max_depth: usize,
) -> Result<Rewrite> {
    if let NodeKind::Var(j) = new_kind {
        if j >= tree.input_dim() {
            return Err(XnetError::InvalidInput(format!("variable x{} out of range", j + 1)));
        }
    }
    if fresh_var >= tree.input_dim() {
        return Err(XnetError::InvalidInput(format!("variable x{} out of range", fresh_var + 1)));
    }
    let depth = tree
        .depth_of(position)
        .ok_or_else(|| XnetError::InvalidInput(format!("no node at preorder position {position}")))?;
    let node = tree.node_at_mut(position).expect("position checked above");
    if node.kind == new_kind {
        return Ok(Rewrite::KindOnly);
    }
    substitute_node(node, new_kind, side, fresh_var, depth, max_depth)
}

/// Variable whose value lands closest to `e_new`.
fn nearest_variable(e_new: f64, x: &[f64]) -> usize {
    let mut best = 0;
    let mut best_res = f64::INFINITY;
    for (j, &v) in x.iter().enumerate() {
        let res = (v - e_new).abs();
        if res < best_res {
            best = j;
            best_res = res;
        }
    }
    best
}

/// True when the argument that `kind` would receive stays strictly positive
/// on every training input.
fn domain_ok(kind: NodeKind, argument: &Node, inputs: &[Vec<f64>], limits: &NumericLimits) -> bool {
    if !matches!(kind, NodeKind::Log | NodeKind::Sqrt) {
        return true;
    }
    inputs.iter().all(|x| evaluate_node(argument, x, limits) > 0.0)
}

struct Pass<'a> {
    e_new: &'a [f64],
    x: &'a [f64],
    train_inputs: Option<&'a [Vec<f64>]>,
    cfg: &'a SelectionConfig,
    limits: &'a NumericLimits,
    rewrites: usize,
}

impl Pass<'_> {
    fn visit(&mut self, node: &mut Node, index: usize, depth: usize) {
        let left_index = index + 1;
        let right_index = left_index + node.left.as_ref().map_or(0, |n| n.size());
        let e_new = self.e_new[index];
        let fresh_var = nearest_variable(e_new, self.x);
        let fresh_value = self.x[fresh_var];
        let inputs = match node.kind.arity() {
            Arity::Leaf => SelectionInputs {
                e_new,
                e_left: fresh_value,
                e_right: Some(fresh_value),
            },
            Arity::Unary => SelectionInputs {
                e_new,
                e_left: self.e_new[left_index],
                e_right: Some(fresh_value),
            },
            Arity::Binary => SelectionInputs {
                e_new,
                e_left: self.e_new[left_index],
                e_right: Some(self.e_new[right_index]),
            },
        };

        let ranked = rank_candidates(node, &inputs, self.x, self.limits);
        let current = ranked
            .iter()
            .find(|c| c.kind == node.kind)
            .map_or(f64::INFINITY, |c| c.residual);
        let bar = current.min(self.cfg.accept_threshold);
        let mut outcome = None;
        for cand in ranked {
            if cand.residual >= bar {
                break;
            }
            let side = self.side_for(node, cand.kind, &inputs);
            if !self.domain_allows(node, cand.kind, side, fresh_var) {
                continue;
            }
            match substitute_node(node, cand.kind, side, fresh_var, depth, self.cfg.max_depth) {
                Ok(rw) => {
                    outcome = Some(rw);
                    break;
                }
                Err(_) => continue,
            }
        }
        if outcome.is_some() {
            self.rewrites += 1;
        }

        match outcome {
            None | Some(Rewrite::KindOnly) => {
                if let Some(l) = node.left.as_mut() {
                    self.visit(l, left_index, depth + 1);
                }
                if let Some(r) = node.right.as_mut() {
                    self.visit(r, right_index, depth + 1);
                }
            }
            Some(Rewrite::Grew) => {
                self.visit(node.left.as_mut().expect("grown node keeps its child"), left_index, depth + 1);
            }
            Some(Rewrite::Collapsed(side)) => {
                let kept = if side == SideHint::Right { right_index } else { left_index };
                self.visit(node.left.as_mut().expect("collapsed node keeps a child"), kept, depth + 1);
            }
            Some(Rewrite::Pruned) | Some(Rewrite::Sprouted) => {}
        }
    }

    /// For a binary node turning unary, keep the side whose output gives the
    /// smaller residual under the new activation.
    fn side_for(&self, node: &Node, kind: NodeKind, inputs: &SelectionInputs) -> SideHint {
        if node.kind.arity() != Arity::Binary || kind.arity() != Arity::Unary {
            return SideHint::None;
        }
        let right = match inputs.e_right {
            Some(r) => r,
            None => return SideHint::Left,
        };
        let res = |v: f64| (eval_node(kind, v, None, self.limits) - inputs.e_new).abs();
        let right_ok = !matches!(kind, NodeKind::Log | NodeKind::Sqrt)
            || (right > 0.0 && node.right.as_ref().is_some_and(|c| c.e_cached > 0.0));
        if right_ok && res(right) < res(inputs.e_left) {
            SideHint::Right
        } else {
            SideHint::Left
        }
    }

    fn domain_allows(&self, node: &Node, kind: NodeKind, side: SideHint, fresh_var: usize) -> bool {
        let Some(inputs) = self.train_inputs else {
            return true;
        };
        if !matches!(kind, NodeKind::Log | NodeKind::Sqrt) {
            return true;
        }
        let fresh;
        let argument: &Node = match node.kind.arity() {
            Arity::Leaf => {
                fresh = Node::leaf(fresh_var);
                &fresh
            }
            _ if side == SideHint::Right => node.right.as_deref().expect("binary node"),
            _ => node.left.as_deref().expect("operator node"),
        };
        domain_ok(kind, argument, inputs, self.limits)
    }
}

/// Reselects activations across the tree in preorder and returns the number
/// of nodes rewritten.
///
/// `e_new` is aligned with the tree's preorder before any rewrite; child
/// targets always come from that same vector. Descendants of a node that is
/// pruned to a leaf or sprouted from one are skipped for this pass. When
/// `train_inputs` is given, `log`/`sqrt` rewrites are rejected unless their
/// argument is positive on every training input. A node is only rewritten
/// when the new kind's residual is strictly smaller than its current kind's.
pub fn update_all_kinds(
    tree: &mut ExprTree,
    e_new: &[f64],
    x: &[f64],
    train_inputs: Option<&[Vec<f64>]>,
    cfg: &SelectionConfig,
    limits: &NumericLimits,
) -> usize {
    debug_assert_eq!(e_new.len(), tree.len());
    let mut pass = Pass {
        e_new,
        x,
        train_inputs,
        cfg,
        limits,
        rewrites: 0,
    };
    pass.visit(tree.root_mut(), 0, 1);
    pass.rewrites
}

/// Once `stagnation_count` reaches the limit, rewrites one uniformly chosen
/// node to a uniformly chosen different kind and returns a reset count.
///
/// Kinds that would break the depth limit (or the `log`/`sqrt` domain, when
/// training inputs are supplied) are skipped in favour of the next random
/// choice. Returns whether the tree changed alongside the new count.
pub fn perturb_on_stagnation<R: Rng + ?Sized>(
    tree: &mut ExprTree,
    stagnation_count: usize,
    cfg: &SelectionConfig,
    train_inputs: Option<&[Vec<f64>]>,
    limits: &NumericLimits,
    rng: &mut R,
) -> (bool, usize) {
    if stagnation_count < cfg.stagnation_limit {
        return (false, stagnation_count);
    }
    let position = rng.gen_range(0..tree.len());
    let depth = tree.depth_of(position).expect("position within tree");
    let input_dim = tree.input_dim();
    let mut kinds = NodeKind::library(input_dim);
    kinds.shuffle(rng);
    let fresh_var = rng.gen_range(0..input_dim);
    let side = if rng.gen_bool(0.5) { SideHint::Left } else { SideHint::Right };

    let node = tree.node_at_mut(position).expect("position within tree");
    let current = node.kind;
    for kind in kinds.into_iter().filter(|k| *k != current) {
        if let Some(inputs) = train_inputs {
            if matches!(kind, NodeKind::Log | NodeKind::Sqrt) {
                let fresh = Node::leaf(fresh_var);
                let argument: &Node = match node.kind.arity() {
                    Arity::Leaf => &fresh,
                    Arity::Binary if side == SideHint::Right => node.right.as_deref().unwrap(),
                    _ => node.left.as_deref().unwrap(),
                };
                if !domain_ok(kind, argument, inputs, limits) {
                    continue;
                }
            }
        }
        if substitute_node(node, kind, side, fresh_var, depth, cfg.max_depth).is_ok() {
            return (true, 0);
        }
    }
    (false, 0)
}
