//! Symbolic regression with expression-tree networks whose node activations
//! are learned alongside their affine parameters.

pub mod backprop;
pub mod bench;
pub mod data;
pub mod error;
pub mod evolve;
pub mod expr;
pub mod mlp;
pub mod numerics;
pub mod trainer;

pub use error::{Result, XnetError};
pub use expr::{ExprTree, Node, NodeKind};
pub use numerics::NumericLimits;
