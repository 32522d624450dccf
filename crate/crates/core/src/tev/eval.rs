//! Stepwise evaluation and closed forms.

use std::collections::HashMap;

use super::{Inv, Tev, TevError, TevOp};
use crate::cr::{binomial_f64, ChainOp};
use crate::interp::Bindings;
use crate::tensor::UnaryOp;
use crate::Tensor;

/// Values a chain can be evaluated in: concrete tensors or symbolic
/// invariant expressions.
trait Domain {
    type V: Clone;
    fn leaf(&mut self, inv: &Inv) -> Result<Self::V, TevError>;
    fn apply(&mut self, op: &TevOp, args: &[Self::V]) -> Result<Self::V, TevError>;
    fn combine(&mut self, op: ChainOp, a: &Self::V, b: &Self::V) -> Result<Self::V, TevError>;
}

struct Numeric<'a> {
    env: &'a Bindings,
    memo: HashMap<String, Tensor>,
}

impl Domain for Numeric<'_> {
    type V = Tensor;

    fn leaf(&mut self, inv: &Inv) -> Result<Tensor, TevError> {
        if let Some(v) = self.memo.get(inv.key()) {
            return Ok(v.clone());
        }
        let v = inv.eval(self.env)?;
        self.memo.insert(inv.key().to_string(), v.clone());
        Ok(v)
    }

    fn apply(&mut self, op: &TevOp, args: &[Tensor]) -> Result<Tensor, TevError> {
        Ok(match op {
            TevOp::Add => args[0].add(&args[1])?,
            TevOp::Mul => args[0].mul(&args[1])?,
            TevOp::Neg => args[0].unary(UnaryOp::Neg)?,
            TevOp::Scale(c) => args[0].scale(*c),
            TevOp::Log => args[0].unary(UnaryOp::Log)?,
            TevOp::Exp => args[0].unary(UnaryOp::Exp)?,
            TevOp::Pow => args[0].pow(&args[1])?,
            TevOp::Reshape(s) => args[0].reshape(s, None)?,
            TevOp::Transpose(p) => args[0].transpose(p)?,
            TevOp::Slice(spec) => args[0].slice(spec)?,
            TevOp::Concat(axis) => args[0].concat(&args[1], *axis)?,
            TevOp::Broadcast(s) => args[0].broadcast(s)?,
        })
    }

    fn combine(&mut self, op: ChainOp, a: &Tensor, b: &Tensor) -> Result<Tensor, TevError> {
        Ok(match op {
            ChainOp::Add => a.add(b)?,
            ChainOp::Mul => a.mul(b)?,
        })
    }
}

struct Symbolic;

impl Domain for Symbolic {
    type V = Inv;

    fn leaf(&mut self, inv: &Inv) -> Result<Inv, TevError> {
        Ok(inv.canonical())
    }

    fn apply(&mut self, op: &TevOp, args: &[Inv]) -> Result<Inv, TevError> {
        Ok(op.apply_inv(args)?.canonical())
    }

    fn combine(&mut self, op: ChainOp, a: &Inv, b: &Inv) -> Result<Inv, TevError> {
        Ok(match op {
            ChainOp::Add => Inv::add(a, b)?,
            ChainOp::Mul => Inv::mul(a, b)?,
        }
        .canonical())
    }
}

/// Values at iterations `0..=n`, or a single value when constant.
enum Seq<V> {
    Const(V),
    Vals(Vec<V>),
}

impl<V: Clone> Seq<V> {
    fn at(&self, i: usize) -> &V {
        match self {
            Seq::Const(v) => v,
            Seq::Vals(vs) => &vs[i],
        }
    }
}

fn sequence<D: Domain>(d: &mut D, t: &Tev, n: usize) -> Result<Seq<D::V>, TevError> {
    match t {
        Tev::Invariant(inv) => Ok(Seq::Const(d.leaf(inv)?)),
        Tev::Unknown { var, reason, .. } => Err(TevError::Unknown {
            var: var.clone(),
            reason: reason.clone(),
        }),
        Tev::Op { op, args, .. } => {
            let seqs = args
                .iter()
                .map(|a| sequence(d, a, n))
                .collect::<Result<Vec<_>, _>>()?;
            if seqs.iter().all(|s| matches!(s, Seq::Const(_))) {
                let vals: Vec<D::V> = seqs.iter().map(|s| s.at(0).clone()).collect();
                return Ok(Seq::Const(d.apply(op, &vals)?));
            }
            let mut out = Vec::with_capacity(n + 1);
            for i in 0..=n {
                let vals: Vec<D::V> = seqs.iter().map(|s| s.at(i).clone()).collect();
                out.push(d.apply(op, &vals)?);
            }
            Ok(Seq::Vals(out))
        }
        Tev::Chain { operands, ops } => {
            let m = ops.len();
            let mut suffix = sequence(d, &operands[m], n)?;
            for j in (0..m).rev() {
                let head = sequence(d, &operands[j], 0)?.at(0).clone();
                let mut vals = Vec::with_capacity(n + 1);
                vals.push(head);
                for i in 1..=n {
                    let next = d.combine(ops[j], &vals[i - 1], suffix.at(i - 1))?;
                    vals.push(next);
                }
                suffix = Seq::Vals(vals);
            }
            Ok(suffix)
        }
    }
}

/// Values of `t` at iterations `0..=n`.
pub fn eval_sequence(t: &Tev, n: u64, env: &Bindings) -> Result<Vec<Tensor>, TevError> {
    let n = n as usize;
    let mut d = Numeric {
        env,
        memo: HashMap::new(),
    };
    Ok(match sequence(&mut d, t, n)? {
        Seq::Const(v) => vec![v; n + 1],
        Seq::Vals(vs) => vs,
    })
}

/// Value of `t` at iteration `i`. `env` binds every variable that the
/// invariant leaves name (parameters and pre-loop values).
pub fn eval_step(t: &Tev, i: u64, env: &Bindings) -> Result<Tensor, TevError> {
    let mut d = Numeric {
        env,
        memo: HashMap::new(),
    };
    Ok(sequence(&mut d, t, i as usize)?.at(i as usize).clone())
}

/// Invariant expression for the value at iteration `i`, by symbolic
/// stepping. Cost grows with `i`.
pub fn unroll_symbolic(t: &Tev, i: u64) -> Result<Inv, TevError> {
    Ok(sequence(&mut Symbolic, t, i as usize)?.at(i as usize).clone())
}

/// Loop-independent expression for the value at iteration `i`:
/// `sum_j C(i,j) E_j` for additive chains, `prod_j E_j^C(i,j)` for
/// multiplicative ones.
pub fn closed_form_at(t: &Tev, i: u64) -> Result<Inv, TevError> {
    match t {
        Tev::Invariant(inv) => Ok(inv.canonical()),
        Tev::Unknown { var, reason, .. } => Err(TevError::Unknown {
            var: var.clone(),
            reason: reason.clone(),
        }),
        Tev::Op { .. } => Err(TevError::NotClosedForm(format!("`{t}` is not a chain"))),
        Tev::Chain { operands, ops } => {
            let first = ops[0];
            if ops.iter().any(|&o| o != first) {
                return Err(TevError::MixedOperatorChain);
            }
            let invs = operands
                .iter()
                .map(|o| o.as_invariant())
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| TevError::NotClosedForm(format!("`{t}` has a non-invariant operand")))?;
            let shape = t.shape().clone();
            let mut acc: Option<Inv> = None;
            for (j, e) in invs.into_iter().enumerate() {
                let c = binomial_f64(i, j as u64);
                if c == 0.0 {
                    break;
                }
                let term = match first {
                    ChainOp::Add => Inv::scale(c, e),
                    ChainOp::Mul => Inv::pow(e, &Inv::scale(c, &Inv::ones(shape.clone())))?,
                };
                acc = Some(match (acc, first) {
                    (None, _) => term,
                    (Some(a), ChainOp::Add) => Inv::add(&a, &term)?,
                    (Some(a), ChainOp::Mul) => Inv::mul(&a, &term)?,
                });
            }
            Ok(acc.expect("C(i, 0) = 1").canonical())
        }
    }
}

fn binomial_in(var: &str, j: usize) -> String {
    match j {
        0 => String::new(),
        1 => var.to_string(),
        _ => {
            let mut s = var.to_string();
            let mut fact: u128 = 1;
            for m in 1..j {
                s.push_str(&format!("({var}-{m})"));
                fact *= (m + 1) as u128;
            }
            format!("{s}/{fact}")
        }
    }
}

/// Closed form as a function of a symbolic iteration count, for chains
/// with a single operator kind and invariant operands.
pub fn symbolic_closed_form(t: &Tev, var: &str) -> Option<String> {
    match t {
        Tev::Invariant(inv) => Some(inv.to_string()),
        Tev::Chain { operands, .. } => {
            let op = t.uniform_op()?;
            let parts: Vec<String> = operands
                .iter()
                .enumerate()
                .map(|(j, e)| {
                    let e = e.to_string();
                    let needs_parens = e.contains(' ');
                    let e = if needs_parens && j > 0 { format!("({e})") } else { e };
                    let c = binomial_in(var, j);
                    match (j, op) {
                        (0, _) => e,
                        (_, ChainOp::Add) => format!("{c}*{e}"),
                        (1, ChainOp::Mul) => format!("{e}^{c}"),
                        (_, ChainOp::Mul) => format!("{e}^({c})"),
                    }
                })
                .collect();
            let sep = match op {
                ChainOp::Add => " + ",
                ChainOp::Mul => " * ",
            };
            Some(parts.join(sep))
        }
        _ => None,
    }
}
