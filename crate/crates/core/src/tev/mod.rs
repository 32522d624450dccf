//! Tensor evolution expressions.
//!
//! A [`Tev`] describes the value of a tensor at every iteration `i` of a loop:
//! either a loop-invariant expression, a chain `{E0, op1, E1, ..., opm, Em}`,
//! an opaque unknown, or an operator that could not be pushed into a chain.
//!
//! Chains follow the classic convention:
//! `eval({C, op, t}, 0) = eval(C, 0)` and
//! `eval({C, op, t}, i) = eval({C, op, t}, i - 1) op eval(t, i - 1)`.
//!
//! ```
//! use tev::tev::{Inv, Tev};
//! use tev::interp::Bindings;
//!
//! let c = |x: f64| Tev::Invariant(Inv::constant(x));
//! let chain = Tev::additive(vec![c(7.0), c(6.0), c(10.0), c(6.0)]).unwrap();
//! let value = tev::tev::eval_step(&chain, 5, &Bindings::new()).unwrap();
//! assert_eq!(value.data(), &[197.0]);
//! ```

mod eval;
mod inv;
mod rules;

use std::fmt;

use crate::cr::ChainOp;
use crate::tensor::{check_broadcast, concat_shape, Shape, SliceSpec, TensorError};

pub use eval::{
    closed_form_at, eval_sequence, eval_step, symbolic_closed_form, unroll_symbolic,
};
pub use inv::{Inv, InvKind};
pub use rules::{normalize, replay, RewriteTrace, TraceEntry, MAX_DEPTH, MAX_REWRITES};

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum TevError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("no binding for `{0}`")]
    Unbound(String),
    #[error("chain needs one more operand than operators")]
    Malformed,
    #[error("chain operands have different shapes: {0} and {1}")]
    OperandShape(Shape, Shape),
    #[error("closed form requires a chain with a single operator kind")]
    MixedOperatorChain,
    #[error("no closed form: {0}")]
    NotClosedForm(String),
    #[error("value of `{var}` is unknown: {reason}")]
    Unknown { var: String, reason: String },
    #[error("normalization exceeded {0} rule applications")]
    RewriteLimit(usize),
}

/// Operator node that has not (yet) been pushed into a chain.
#[derive(Clone, Debug, PartialEq)]
pub enum TevOp {
    Add,
    Mul,
    Neg,
    Scale(f64),
    Log,
    Exp,
    /// `pow(base, exponent)`; the base is loop-invariant. Rewrites assume a
    /// positive base, the domain on which `pow(b, x + y) = pow(b, x) * pow(b, y)`.
    Pow,
    Reshape(Shape),
    Transpose(Vec<usize>),
    Slice(SliceSpec),
    Concat(usize),
    Broadcast(Shape),
}

impl TevOp {
    pub fn name(&self) -> &'static str {
        match self {
            TevOp::Add => "add",
            TevOp::Mul => "mul",
            TevOp::Neg => "neg",
            TevOp::Scale(_) => "scale",
            TevOp::Log => "log",
            TevOp::Exp => "exp",
            TevOp::Pow => "pow",
            TevOp::Reshape(_) => "reshape",
            TevOp::Transpose(_) => "transpose",
            TevOp::Slice(_) => "slice",
            TevOp::Concat(_) => "concat",
            TevOp::Broadcast(_) => "broadcast",
        }
    }

    pub fn arity(&self) -> usize {
        match self {
            TevOp::Add | TevOp::Mul | TevOp::Pow | TevOp::Concat(_) => 2,
            _ => 1,
        }
    }

    fn output_shape(&self, args: &[&Shape]) -> Result<Shape, TensorError> {
        let same = |op: &'static str| {
            if args[0] == args[1] {
                Ok(args[0].clone())
            } else {
                Err(TensorError::ShapeMismatch {
                    op,
                    left: args[0].clone(),
                    right: args[1].clone(),
                })
            }
        };
        match self {
            TevOp::Add => same("add"),
            TevOp::Mul => same("mul"),
            TevOp::Pow => same("pow"),
            TevOp::Neg | TevOp::Scale(_) | TevOp::Log | TevOp::Exp => Ok(args[0].clone()),
            TevOp::Reshape(s) => {
                if s.numel() == args[0].numel() {
                    Ok(s.clone())
                } else {
                    Err(TensorError::ElementCountMismatch {
                        from: args[0].clone(),
                        to: s.clone(),
                    })
                }
            }
            TevOp::Transpose(p) => args[0].permuted(p),
            TevOp::Slice(spec) => spec.output_shape(args[0]),
            TevOp::Concat(axis) => concat_shape(args[0], args[1], *axis),
            TevOp::Broadcast(s) => check_broadcast(args[0], s).map(|_| s.clone()),
        }
    }

    /// The same operator over invariant arguments.
    pub fn apply_inv(&self, args: &[Inv]) -> Result<Inv, TensorError> {
        Ok(match self {
            TevOp::Add => Inv::add(&args[0], &args[1])?,
            TevOp::Mul => Inv::mul(&args[0], &args[1])?,
            TevOp::Neg => Inv::neg(&args[0]),
            TevOp::Scale(c) => Inv::scale(*c, &args[0]),
            TevOp::Log => Inv::log(&args[0]),
            TevOp::Exp => Inv::exp(&args[0]),
            TevOp::Pow => Inv::pow(&args[0], &args[1])?,
            TevOp::Reshape(s) => Inv::reshape(&args[0], s)?,
            TevOp::Transpose(p) => Inv::transpose(&args[0], p)?,
            TevOp::Slice(spec) => Inv::slice(&args[0], spec)?,
            TevOp::Concat(axis) => Inv::concat(&args[0], &args[1], *axis)?,
            TevOp::Broadcast(s) => Inv::broadcast(&args[0], s)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Tev {
    Invariant(Inv),
    /// `operands.len() == ops.len() + 1`, all operands of one shape.
    Chain {
        operands: Vec<Tev>,
        ops: Vec<ChainOp>,
    },
    Unknown {
        var: String,
        reason: String,
        shape: Shape,
    },
    Op {
        op: TevOp,
        args: Vec<Tev>,
        shape: Shape,
    },
}

impl From<Inv> for Tev {
    fn from(inv: Inv) -> Tev {
        Tev::Invariant(inv)
    }
}

impl Tev {
    pub fn chain(operands: Vec<Tev>, ops: Vec<ChainOp>) -> Result<Tev, TevError> {
        if operands.len() != ops.len() + 1 {
            return Err(TevError::Malformed);
        }
        let shape = operands[0].shape();
        if let Some(other) = operands.iter().find(|o| o.shape() != shape) {
            return Err(TevError::OperandShape(shape.clone(), other.shape().clone()));
        }
        Ok(Tev::Chain { operands, ops })
    }

    pub fn additive(operands: Vec<Tev>) -> Result<Tev, TevError> {
        let ops = vec![ChainOp::Add; operands.len().saturating_sub(1)];
        Tev::chain(operands, ops)
    }

    pub fn multiplicative(operands: Vec<Tev>) -> Result<Tev, TevError> {
        let ops = vec![ChainOp::Mul; operands.len().saturating_sub(1)];
        Tev::chain(operands, ops)
    }

    /// The loop counter `{0, +, 1}` as a rank-0 chain.
    pub fn counter() -> Tev {
        Tev::Chain {
            operands: vec![Inv::constant(0.0).into(), Inv::constant(1.0).into()],
            ops: vec![ChainOp::Add],
        }
    }

    pub fn unknown(var: impl Into<String>, reason: impl Into<String>, shape: Shape) -> Tev {
        Tev::Unknown {
            var: var.into(),
            reason: reason.into(),
            shape,
        }
    }

    pub fn op(op: TevOp, args: Vec<Tev>) -> Result<Tev, TevError> {
        if args.len() != op.arity() {
            return Err(TevError::Malformed);
        }
        let shapes: Vec<&Shape> = args.iter().map(|a| a.shape()).collect();
        let shape = op.output_shape(&shapes)?;
        Ok(Tev::Op { op, args, shape })
    }

    pub fn add(a: Tev, b: Tev) -> Result<Tev, TevError> {
        Tev::op(TevOp::Add, vec![a, b])
    }

    pub fn sub(a: Tev, b: Tev) -> Result<Tev, TevError> {
        Tev::op(TevOp::Add, vec![a, Tev::neg(b)])
    }

    pub fn mul(a: Tev, b: Tev) -> Result<Tev, TevError> {
        Tev::op(TevOp::Mul, vec![a, b])
    }

    pub fn neg(a: Tev) -> Tev {
        Tev::op(TevOp::Neg, vec![a]).expect("unary operator")
    }

    pub fn shape(&self) -> &Shape {
        match self {
            Tev::Invariant(inv) => inv.shape(),
            Tev::Chain { operands, .. } => operands[0].shape(),
            Tev::Unknown { shape, .. } | Tev::Op { shape, .. } => shape,
        }
    }

    pub fn as_invariant(&self) -> Option<&Inv> {
        match self {
            Tev::Invariant(inv) => Some(inv),
            _ => None,
        }
    }

    /// Number of operators of a chain, 0 for anything else.
    pub fn depth(&self) -> usize {
        match self {
            Tev::Chain { ops, .. } => ops.len(),
            _ => 0,
        }
    }

    pub fn children(&self) -> &[Tev] {
        match self {
            Tev::Chain { operands, .. } => operands,
            Tev::Op { args, .. } => args,
            _ => &[],
        }
    }

    pub fn contains_unknown(&self) -> bool {
        matches!(self, Tev::Unknown { .. }) || self.children().iter().any(|c| c.contains_unknown())
    }

    pub fn contains_chain(&self) -> bool {
        matches!(self, Tev::Chain { .. }) || self.children().iter().any(|c| c.contains_chain())
    }

    /// First unknown leaf, if any.
    pub fn find_unknown(&self) -> Option<(&str, &str)> {
        match self {
            Tev::Unknown { var, reason, .. } => Some((var, reason)),
            _ => self.children().iter().find_map(|c| c.find_unknown()),
        }
    }

    pub fn size(&self) -> usize {
        match self {
            Tev::Invariant(inv) => inv.size(),
            _ => 1 + self.children().iter().map(|c| c.size()).sum::<usize>(),
        }
    }

    /// Operator kinds of a chain whose operands are all invariant and whose
    /// operators agree.
    pub fn uniform_op(&self) -> Option<ChainOp> {
        match self {
            Tev::Chain { operands, ops } => {
                let first = ops[0];
                (ops.iter().all(|&o| o == first) && operands.iter().all(|o| o.as_invariant().is_some()))
                    .then_some(first)
            }
            _ => None,
        }
    }

    /// Structural predicate on normal forms: every chain is flat, has at
    /// least one operator, at most [`MAX_DEPTH`], and operands of one shape;
    /// every invariant is canonical.
    pub fn satisfies_chain_invariants(&self) -> bool {
        match self {
            Tev::Invariant(inv) => inv.is_canonical(),
            Tev::Unknown { .. } => true,
            Tev::Op { args, .. } => args.iter().all(|a| a.satisfies_chain_invariants()),
            Tev::Chain { operands, ops } => {
                let shape = operands[0].shape();
                !ops.is_empty()
                    && ops.len() <= MAX_DEPTH
                    && operands.len() == ops.len() + 1
                    && operands.iter().all(|o| {
                        o.shape() == shape
                            && !matches!(o, Tev::Chain { .. } | Tev::Unknown { .. })
                            && o.satisfies_chain_invariants()
                    })
            }
        }
    }
}

impl fmt::Display for Tev {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tev::Invariant(inv) => write!(f, "{inv}"),
            Tev::Chain { operands, ops } => {
                write!(f, "{{{}", operands[0])?;
                for (op, operand) in ops.iter().zip(&operands[1..]) {
                    write!(f, ", {op}, {operand}")?;
                }
                write!(f, "}}")
            }
            Tev::Unknown { var, .. } if var.is_empty() => write!(f, "unknown"),
            Tev::Unknown { var, .. } => write!(f, "unknown({var})"),
            Tev::Op { op, args, shape } => {
                write!(f, "{}(", op.name())?;
                if let TevOp::Scale(c) = op {
                    write!(f, "{}, ", inv::number(*c))?;
                }
                for (k, a) in args.iter().enumerate() {
                    if k > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{a}")?;
                }
                match op {
                    TevOp::Reshape(_) | TevOp::Broadcast(_) => {
                        write!(f, ", {}", inv::dims(shape.dims()))?
                    }
                    TevOp::Transpose(p) => write!(f, ", {}", inv::dims(p))?,
                    TevOp::Slice(spec) => write!(f, ", {spec}")?,
                    TevOp::Concat(axis) => write!(f, ", {axis}")?,
                    _ => {}
                }
                write!(f, ")")
            }
        }
    }
}
