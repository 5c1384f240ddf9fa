//! Alternating backpropagation.
//!
//! One reverse sweep yields three gradients per node: with respect to its
//! weight, its bias and its output `E`. Parameter steps consume the first
//! two; output steps consume the third and feed activation reselection.

use serde::{Deserialize, Serialize};

use crate::error::{Result, XnetError};
use crate::expr::{ExprTree, Node, NodeKind};
use crate::numerics::{activation, sigmoid, NumericLimits};

/// Per-node gradients in preorder.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GradientSet {
    pub dw: Vec<f64>,
    pub db: Vec<f64>,
    /// Gradient of the loss with respect to each node's output.
    pub de: Vec<f64>,
}

impl GradientSet {
    pub fn len(&self) -> usize {
        self.de.len()
    }

    pub fn is_empty(&self) -> bool {
        self.de.is_empty()
    }

    pub fn zeros(n: usize) -> Self {
        GradientSet {
            dw: vec![0.0; n],
            db: vec![0.0; n],
            de: vec![0.0; n],
        }
    }
}

/// Loss history and settings for the adaptive step size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepState {
    pub loss_prev: f64,
    pub loss_curr: f64,
    /// Divisor bounding the adaptive step to `(0, tanh(1) / a]`.
    pub a: f64,
    pub alpha_fixed: f64,
    pub ada_enabled: bool,
}

impl Default for StepState {
    fn default() -> Self {
        StepState {
            loss_prev: 0.0,
            loss_curr: 0.0,
            a: 10.0,
            alpha_fixed: 0.01,
            ada_enabled: true,
        }
    }
}

impl StepState {
    pub fn validate(&self) -> Result<()> {
        if self.a > 0.0 && self.alpha_fixed > 0.0 {
            Ok(())
        } else {
            Err(XnetError::Config(format!(
                "step size settings need a > 0 and alpha_fixed > 0 (a = {}, alpha_fixed = {})",
                self.a, self.alpha_fixed
            )))
        }
    }

    /// Shifts the history: the current loss becomes the previous one.
    pub fn record(&mut self, loss: f64) {
        self.loss_prev = self.loss_curr;
        self.loss_curr = loss;
    }

    /// Starts the history at a single loss value, so `|Δloss| = 0`.
    pub fn reset(&mut self, loss: f64) {
        self.loss_prev = loss;
        self.loss_curr = loss;
    }

    /// True when the adaptive rule cannot be evaluated and the fixed step is
    /// used instead.
    pub fn falls_back(&self) -> bool {
        self.ada_enabled && !(self.loss_prev.is_finite() && self.loss_curr.is_finite())
    }
}

/// `α = tanh(exp(-|loss_prev - loss_curr|)) / a`, or the fixed step when the
/// rule is disabled or the losses are not finite.
pub fn ada_alpha(state: &StepState) -> f64 {
    if !state.ada_enabled || state.falls_back() {
        return state.alpha_fixed;
    }
    let delta = (state.loss_prev - state.loss_curr).abs();
    (-delta).exp().tanh() / state.a
}

/// Partial derivatives of a node's activation with respect to its left and
/// right inputs, at the cached child outputs.
fn local_derivatives(node: &Node, limits: &NumericLimits) -> (f64, f64) {
    let l = node.left.as_ref().map_or(0.0, |n| n.e_cached);
    let r = node.right.as_ref().map_or(0.0, |n| n.e_cached);
    match node.kind {
        NodeKind::Add => (1.0, 1.0),
        NodeKind::Sub => (1.0, -1.0),
        NodeKind::Mul => (r, l),
        NodeKind::Div => {
            let rg = limits.guard_denominator(r);
            (1.0 / rg, -l / (rg * rg))
        }
        NodeKind::Sin => (l.cos(), 0.0),
        NodeKind::Cos => (-l.sin(), 0.0),
        NodeKind::Log => (1.0 / limits.guard_domain(l), 0.0),
        NodeKind::Sqrt => (1.0 / (2.0 * limits.guard_domain(l).sqrt()), 0.0),
        NodeKind::Exp => (limits.clamp_output(l.exp()), 0.0),
        NodeKind::Relu => (if l > 0.0 { 1.0 } else { 0.0 }, 0.0),
        NodeKind::Sigmoid => {
            let s = sigmoid(l);
            (s * (1.0 - s), 0.0)
        }
        NodeKind::Var(_) => (0.0, 0.0),
    }
}

fn backward_node(node: &Node, d_out: f64, x: &[f64], limits: &NumericLimits, raw: &mut GradientSet) {
    let f = activation(node, x, limits);
    raw.dw.push(d_out * f);
    raw.db.push(d_out);
    raw.de.push(d_out);
    if node.kind.is_leaf() {
        return;
    }
    let (dl, dr) = local_derivatives(node, limits);
    if let Some(l) = &node.left {
        backward_node(l, d_out * node.w * dl, x, limits, raw);
    }
    if let Some(r) = &node.right {
        backward_node(r, d_out * node.w * dr, x, limits, raw);
    }
}

/// Gradients of the per-sample loss `½ (y - ŷ)²` for every node.
///
/// Requires a current forward cache for `x`. Raw gradients flow through the
/// chain rule unclamped; each returned quantity is clamped afterwards.
pub fn backward(tree: &ExprTree, x: &[f64], y: f64, limits: &NumericLimits) -> Result<GradientSet> {
    if !tree.cache_valid() {
        return Err(XnetError::StaleCache);
    }
    if x.len() != tree.input_dim() {
        return Err(XnetError::InvalidInput(format!(
            "expected {} input values, got {}",
            tree.input_dim(),
            x.len()
        )));
    }
    let n = tree.len();
    let mut raw = GradientSet {
        dw: Vec::with_capacity(n),
        db: Vec::with_capacity(n),
        de: Vec::with_capacity(n),
    };
    let y_hat = tree.root().e_cached;
    backward_node(tree.root(), y_hat - y, x, limits, &mut raw);
    let clamp = |v: Vec<f64>| v.into_iter().map(|g| limits.clamp_gradient(g)).collect();
    Ok(GradientSet {
        dw: clamp(raw.dw),
        db: clamp(raw.db),
        de: clamp(raw.de),
    })
}

/// `w -= α·dw`, `b -= α·db` at every node. Topology is unchanged.
pub fn sgd_step_params(tree: &mut ExprTree, grads: &GradientSet, alpha: f64) {
    debug_assert_eq!(grads.len(), tree.len());
    let mut i = 0;
    tree.for_each_node_mut(|n| {
        n.w -= alpha * grads.dw[i];
        n.b -= alpha * grads.db[i];
        i += 1;
    });
}

/// Descended node outputs `E - α·dE` in preorder. The tree is not modified.
pub fn sgd_step_outputs(tree: &ExprTree, grads: &GradientSet, alpha: f64) -> Vec<f64> {
    tree.preorder()
        .iter()
        .zip(&grads.de)
        .map(|(n, de)| n.e_cached - alpha * de)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Node;
    use crate::numerics::forward;

    fn lim() -> NumericLimits {
        NumericLimits::default()
    }

    fn scaled_leaf() -> ExprTree {
        let mut t = ExprTree::new(Node::leaf(0), 1).unwrap();
        forward(&mut t, &[2.0], &lim()).unwrap();
        t
    }

    #[test]
    fn leaf_gradients_match_hand_derivation() {
        let t = scaled_leaf();
        let g = backward(&t, &[2.0], 0.0, &lim()).unwrap();
        assert_eq!(g.dw, vec![4.0]);
        assert_eq!(g.db, vec![2.0]);
        assert_eq!(g.de, vec![2.0]);
    }

    #[test]
    fn perfect_prediction_gives_zero_gradients() {
        let mut t = ExprTree::init_default(1).unwrap();
        let y = forward(&mut t, &[0.7], &lim()).unwrap();
        let g = backward(&t, &[0.7], y, &lim()).unwrap();
        assert!(g.dw.iter().chain(&g.db).chain(&g.de).all(|v| *v == 0.0));
    }

    #[test]
    fn dead_relu_blocks_gradient() {
        let mut t = ExprTree::new(Node::unary(NodeKind::Relu, Node::leaf(0)), 1).unwrap();
        forward(&mut t, &[-1.5], &lim()).unwrap();
        let g = backward(&t, &[-1.5], 2.0, &lim()).unwrap();
        assert_eq!(g.de[0], -2.0);
        assert_eq!(g.de[1], 0.0);
        assert_eq!((g.dw[1], g.db[1]), (0.0, 0.0));
    }

    #[test]
    fn stale_cache_is_an_error() {
        let t = ExprTree::init_default(1).unwrap();
        assert!(matches!(backward(&t, &[1.0], 0.0, &lim()), Err(XnetError::StaleCache)));
        let mut t = scaled_leaf();
        let g = backward(&t, &[2.0], 0.0, &lim()).unwrap();
        sgd_step_params(&mut t, &g, 0.1);
        assert!(matches!(backward(&t, &[2.0], 0.0, &lim()), Err(XnetError::StaleCache)));
    }

    #[test]
    fn clamping_bounds_every_entry() {
        let mut t = ExprTree::new(
            Node::binary(NodeKind::Mul, Node::leaf(0).with_params(1e3, 0.0), Node::leaf(0)),
            1,
        )
        .unwrap();
        forward(&mut t, &[3.0], &lim()).unwrap();
        let g = backward(&t, &[3.0], 0.0, &lim()).unwrap();
        let l = lim();
        for v in g.dw.iter().chain(&g.db).chain(&g.de) {
            assert!(*v == 0.0 || (l.g_min..=l.g_max).contains(&v.abs()));
        }
        assert_eq!(g.de[0], 1e3);
    }

    #[test]
    fn parameter_step_examples() {
        let mut t = scaled_leaf();
        let g = backward(&t, &[2.0], 0.0, &lim()).unwrap();
        let before = t.clone();
        sgd_step_params(&mut t, &g, 0.0);
        assert_eq!(t, before);
        sgd_step_params(&mut t, &GradientSet::zeros(1), 0.3);
        assert_eq!(t, before);
        sgd_step_params(&mut t, &g, 0.1);
        let n = t.root();
        assert!((n.w - 0.6).abs() < 1e-15);
        assert!((n.b + 0.2).abs() < 1e-15);
    }

    #[test]
    fn output_step_examples() {
        let t = scaled_leaf();
        let g = backward(&t, &[2.0], 0.0, &lim()).unwrap();
        assert_eq!(sgd_step_outputs(&t, &g, 0.0), vec![2.0]);
        assert_eq!(sgd_step_outputs(&t, &g, 0.5), vec![1.0]);

        let mut t = ExprTree::init_default(1).unwrap();
        let y_hat = forward(&mut t, &[1.0], &lim()).unwrap();
        let y = 5.0;
        let g = backward(&t, &[1.0], y, &lim()).unwrap();
        let e_new = sgd_step_outputs(&t, &g, 0.1);
        assert!((e_new[0] - (y_hat - 0.1 * (y_hat - y))).abs() < 1e-12);
        assert!((e_new[0] - y).abs() < (y_hat - y).abs());
    }

    #[test]
    fn ada_alpha_closed_forms() {
        let mut s = StepState::default();
        s.reset(3.0);
        assert!((ada_alpha(&s) - 0.076_159_415_595_576_49).abs() < 1e-12);

        s.a = 1.0;
        s.loss_prev = 2.0;
        s.loss_curr = 1.0;
        assert!((ada_alpha(&s) - (-1f64).exp().tanh()).abs() < 1e-15);
        assert!((ada_alpha(&s) - 0.352_135_490_546_587).abs() < 1e-12);

        s.loss_prev = 1e6;
        assert!(ada_alpha(&s) < 1e-300);

        s.loss_prev = f64::NAN;
        assert!(s.falls_back());
        assert_eq!(ada_alpha(&s), s.alpha_fixed);

        s.ada_enabled = false;
        s.loss_prev = 1.0;
        assert_eq!(ada_alpha(&s), s.alpha_fixed);
    }
}
