//! Guarded forward evaluation, loss metrics and the finite-difference
//! gradient oracle.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Result, XnetError};
use crate::expr::{ExprTree, Node, NodeKind};

/// Clamps and guards that keep every forward and backward quantity finite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NumericLimits {
    /// Node outputs are clamped to `[-v_max, v_max]`.
    pub v_max: f64,
    /// Gradient magnitude ceiling.
    pub g_max: f64,
    /// Gradient magnitude floor, applied to nonzero gradients only.
    pub g_min: f64,
    /// Smallest denominator magnitude allowed in `Div`.
    pub div_eps: f64,
    /// Smallest argument passed to `Log` and `Sqrt`.
    pub domain_eps: f64,
}

impl Default for NumericLimits {
    fn default() -> Self {
        NumericLimits {
            v_max: 1e6,
            g_max: 1e3,
            g_min: 1e-8,
            div_eps: 1e-12,
            domain_eps: 1e-12,
        }
    }
}

impl NumericLimits {
    pub fn validate(&self) -> Result<()> {
        let ok = self.v_max > 0.0
            && self.g_min > 0.0
            && self.g_min < self.g_max
            && self.div_eps > 0.0
            && self.domain_eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(XnetError::Config(format!(
                "numeric limits must satisfy 0 < g_min < g_max, v_max > 0 and positive epsilons: {self:?}"
            )))
        }
    }

    /// `E -> sign(E) * V` once `|E| >= V`; NaN maps to `+V`.
    pub fn clamp_output(&self, v: f64) -> f64 {
        if v.is_nan() {
            self.v_max
        } else if v.abs() >= self.v_max {
            self.v_max.copysign(v)
        } else {
            v
        }
    }

    /// Signed magnitude clamp into `[g_min, g_max]`; exact zeros stay zero
    /// and NaN collapses to zero.
    pub fn clamp_gradient(&self, g: f64) -> f64 {
        if g == 0.0 || g.is_nan() {
            0.0
        } else if g.abs() >= self.g_max {
            self.g_max.copysign(g)
        } else if g.abs() <= self.g_min {
            self.g_min.copysign(g)
        } else {
            g
        }
    }

    /// Denominator with magnitude at least `div_eps`, keeping its sign (zero
    /// counts as positive).
    pub fn guard_denominator(&self, r: f64) -> f64 {
        if r.abs() < self.div_eps {
            if r.is_sign_negative() && r != 0.0 {
                -self.div_eps
            } else {
                self.div_eps
            }
        } else {
            r
        }
    }

    pub fn guard_domain(&self, l: f64) -> f64 {
        l.max(self.domain_eps)
    }
}

pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Applies `kind` to child outputs with domain guards, then clamps.
///
/// For a `Var` leaf, `left` is the input value itself.
pub fn eval_node(kind: NodeKind, left: f64, right: Option<f64>, limits: &NumericLimits) -> f64 {
    let binary = |op: fn(f64, f64) -> f64| {
        let r = right.expect("binary node evaluated without a right operand");
        op(left, r)
    };
    let raw = match kind {
        NodeKind::Add => binary(|l, r| l + r),
        NodeKind::Sub => binary(|l, r| l - r),
        NodeKind::Mul => binary(|l, r| l * r),
        NodeKind::Div => {
            let r = limits.guard_denominator(right.expect("binary node evaluated without a right operand"));
            left / r
        }
        NodeKind::Sin => left.sin(),
        NodeKind::Cos => left.cos(),
        NodeKind::Log => {
            let arg = limits.guard_domain(left);
            debug_assert!(arg >= limits.domain_eps);
            arg.ln()
        }
        NodeKind::Sqrt => {
            let arg = limits.guard_domain(left);
            debug_assert!(arg >= limits.domain_eps);
            arg.sqrt()
        }
        NodeKind::Exp => left.exp(),
        NodeKind::Relu => left.max(0.0),
        NodeKind::Sigmoid => sigmoid(left),
        NodeKind::Var(_) => left,
    };
    limits.clamp_output(raw)
}

/// Activation value `f(children)` of a node given its children's outputs.
pub(crate) fn activation(node: &Node, x: &[f64], limits: &NumericLimits) -> f64 {
    match node.kind {
        NodeKind::Var(i) => x[i],
        kind => {
            let l = node.left.as_ref().map_or(0.0, |n| n.e_cached);
            let r = node.right.as_ref().map(|n| n.e_cached);
            eval_node(kind, l, r, limits)
        }
    }
}

fn forward_node(node: &mut Node, x: &[f64], limits: &NumericLimits) -> f64 {
    let f = match node.kind {
        NodeKind::Var(i) => x[i],
        kind => {
            let l = forward_node(node.left.as_mut().expect("operator node has a left child"), x, limits);
            let r = node.right.as_mut().map(|n| forward_node(n, x, limits));
            eval_node(kind, l, r, limits)
        }
    };
    let out = limits.clamp_output(node.w * f + node.b);
    node.e_cached = out;
    out
}

/// Output of a subtree without touching any cache.
pub fn evaluate_node(node: &Node, x: &[f64], limits: &NumericLimits) -> f64 {
    let f = match node.kind {
        NodeKind::Var(i) => x[i],
        kind => {
            let l = evaluate_node(node.left.as_ref().expect("operator node has a left child"), x, limits);
            let r = node.right.as_ref().map(|n| evaluate_node(n, x, limits));
            eval_node(kind, l, r, limits)
        }
    };
    limits.clamp_output(node.w * f + node.b)
}

fn check_input(tree: &ExprTree, x: &[f64]) -> Result<()> {
    if x.len() != tree.input_dim() {
        return Err(XnetError::InvalidInput(format!(
            "expected {} input values, got {}",
            tree.input_dim(),
            x.len()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(XnetError::InvalidInput("input contains non-finite values".into()));
    }
    Ok(())
}

/// Post-order evaluation that refreshes every node's cached output and
/// returns the root output.
pub fn forward(tree: &mut ExprTree, x: &[f64], limits: &NumericLimits) -> Result<f64> {
    check_input(tree, x)?;
    let y = forward_node(tree.root_mut(), x, limits);
    tree.set_cache_valid();
    Ok(y)
}

/// Root output for one sample, leaving caches untouched.
pub fn evaluate(tree: &ExprTree, x: &[f64], limits: &NumericLimits) -> Result<f64> {
    check_input(tree, x)?;
    Ok(evaluate_node(tree.root(), x, limits))
}

pub fn predict_all(tree: &ExprTree, rows: &[Vec<f64>], limits: &NumericLimits) -> Result<Vec<f64>> {
    rows.iter().map(|x| evaluate(tree, x, limits)).collect()
}

fn check_pair(y: &[f64], y_hat: &[f64]) -> Result<()> {
    if y.len() != y_hat.len() {
        return Err(XnetError::InvalidInput(format!(
            "length mismatch: {} targets vs {} predictions",
            y.len(),
            y_hat.len()
        )));
    }
    if y.is_empty() {
        return Err(XnetError::InvalidInput("empty target vector".into()));
    }
    Ok(())
}

/// Mean squared error `(1/N) * sum (y - y_hat)^2`.
pub fn mse_loss(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_pair(y, y_hat)?;
    let sse: f64 = y.iter().zip(y_hat).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(sse / y.len() as f64)
}

/// Coefficient of determination `1 - SSE / SST`.
pub fn r_squared(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_pair(y, y_hat)?;
    if y.len() < 2 {
        return Err(XnetError::InvalidInput("R² needs at least two samples".into()));
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let sst: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    if sst == 0.0 {
        return Err(XnetError::UndefinedR2);
    }
    let sse: f64 = y.iter().zip(y_hat).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(1.0 - sse / sst)
}

/// Mean per-sample loss `½ (y - ŷ)²` over a dataset.
pub fn half_squared_loss(tree: &ExprTree, data: &Dataset, limits: &NumericLimits) -> Result<f64> {
    let mut total = 0.0;
    for (x, y) in data.x.iter().zip(&data.y) {
        let p = evaluate(tree, x, limits)?;
        total += 0.5 * (y - p).powi(2);
    }
    Ok(total / data.len() as f64)
}

/// Central-difference estimates of `(dL/dw, dL/db)` for every node in
/// preorder, where `L` is the mean half-squared loss over `data`.
pub fn finite_diff_grads(
    tree: &ExprTree,
    data: &Dataset,
    h: f64,
    limits: &NumericLimits,
) -> Result<Vec<(f64, f64)>> {
    if !(1e-7..=1e-4).contains(&h) {
        return Err(XnetError::InvalidInput(format!("step {h} outside [1e-7, 1e-4]")));
    }
    let n = tree.len();
    let mut probe = tree.clone();
    let mut loss_at = |index: usize, dw: f64, db: f64| -> Result<f64> {
        let node = probe.node_at_mut(index).expect("index within tree");
        node.w += dw;
        node.b += db;
        let loss = half_squared_loss(&probe, data, limits);
        let node = probe.node_at_mut(index).expect("index within tree");
        node.w -= dw;
        node.b -= db;
        loss
    };
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let gw = (loss_at(i, h, 0.0)? - loss_at(i, -h, 0.0)?) / (2.0 * h);
        let gb = (loss_at(i, 0.0, h)? - loss_at(i, 0.0, -h)?) / (2.0 * h);
        out.push((gw, gb));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Node;

    fn lim() -> NumericLimits {
        NumericLimits::default()
    }

    #[test]
    fn eval_node_basics() {
        assert_eq!(eval_node(NodeKind::Sin, 0.0, None, &lim()), 0.0);
        assert_eq!(eval_node(NodeKind::Add, 1.0, Some(2.0), &lim()), 3.0);
        assert_eq!(eval_node(NodeKind::Mul, 2e6, Some(1.0), &lim()), 1e6);
        assert_eq!(eval_node(NodeKind::Mul, -2e6, Some(1.0), &lim()), -1e6);
        assert_eq!(eval_node(NodeKind::Exp, 1e4, None, &lim()), 1e6);
    }

    #[test]
    fn guards_keep_evaluation_total() {
        let l = lim();
        assert_eq!(eval_node(NodeKind::Div, 1.0, Some(0.0), &l), 1e6);
        assert_eq!(eval_node(NodeKind::Div, 1e-13, Some(-0.0), &l), 0.1);
        assert_eq!(eval_node(NodeKind::Div, 1e-13, Some(-1e-20), &l), -0.1);
        assert_eq!(eval_node(NodeKind::Log, -3.0, None, &l), l.domain_eps.ln());
        assert_eq!(eval_node(NodeKind::Sqrt, -3.0, None, &l), l.domain_eps.sqrt());
        assert_eq!(l.clamp_output(f64::NAN), 1e6);
        assert_eq!(l.clamp_output(f64::NEG_INFINITY), -1e6);
    }

    #[test]
    fn gradient_clamp_preserves_zero_and_sign() {
        let l = lim();
        assert_eq!(l.clamp_gradient(0.0), 0.0);
        assert_eq!(l.clamp_gradient(-1e-20), -1e-8);
        assert_eq!(l.clamp_gradient(5e3), 1e3);
        assert_eq!(l.clamp_gradient(f64::NAN), 0.0);
        assert_eq!(l.clamp_gradient(0.5), 0.5);
    }

    #[test]
    fn forward_default_tree() {
        let mut t = ExprTree::init_default(1).unwrap();
        assert_eq!(forward(&mut t, &[0.0], &lim()).unwrap(), 0.0);
        let y = forward(&mut t, &[1.0], &lim()).unwrap();
        assert!((y - 1.841_470_984_807_896_5).abs() < 1e-15);
        assert!(t.cache_valid());
        assert_eq!(t.cached_outputs(), vec![y, 1.0, 1.0, 1.0, 1f64.sin(), 1.0]);
    }

    #[test]
    fn forward_affine_leaf() {
        let mut t = ExprTree::new(Node::leaf(0).with_params(9.10, -34.67), 1).unwrap();
        let y = forward(&mut t, &[6.0], &lim()).unwrap();
        assert!((y - 19.93).abs() < 1e-9);
    }

    #[test]
    fn forward_rejects_wrong_dimension() {
        let mut t = ExprTree::init_default(2).unwrap();
        assert!(matches!(forward(&mut t, &[1.0], &lim()), Err(XnetError::InvalidInput(_))));
        assert!(matches!(forward(&mut t, &[1.0, f64::NAN], &lim()), Err(XnetError::InvalidInput(_))));
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse_loss(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert!((mse_loss(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(mse_loss(&[], &[]).is_err());
    }

    #[test]
    fn r_squared_examples() {
        let y = [1.0, 2.0, 3.0];
        assert_eq!(r_squared(&y, &y).unwrap(), 1.0);
        assert_eq!(r_squared(&y, &[2.0, 2.0, 2.0]).unwrap(), 0.0);
        assert!((r_squared(&y, &[1.0, 2.0, 4.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(r_squared(&[4.0, 4.0], &[1.0, 2.0]), Err(XnetError::UndefinedR2)));
    }

    #[test]
    fn finite_differences_on_scaled_leaf() {
        let t = ExprTree::new(Node::leaf(0), 1).unwrap();
        let data = Dataset::new(vec![vec![2.0]], vec![0.0]).unwrap();
        let g = finite_diff_grads(&t, &data, 1e-5, &lim()).unwrap();
        assert!((g[0].0 - 4.0).abs() < 1e-8);
        assert!((g[0].1 - 2.0).abs() < 1e-8);
    }

    #[test]
    fn finite_differences_zero_for_dead_branch() {
        // relu(x) at x = -1 with default params: the leaf has no influence.
        let t = ExprTree::new(Node::unary(NodeKind::Relu, Node::leaf(0)), 1).unwrap();
        let data = Dataset::new(vec![vec![-1.0]], vec![3.0]).unwrap();
        let g = finite_diff_grads(&t, &data, 1e-5, &lim()).unwrap();
        assert_eq!(g[1], (0.0, 0.0));
        assert!(finite_diff_grads(&t, &data, 1e-2, &lim()).is_err());
    }
}
