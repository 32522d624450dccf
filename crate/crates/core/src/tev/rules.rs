//! Rewrite rules and the normalizer.
//!
//! Strategy: innermost first. Children are normalized, then at most one rule
//! fires at the root and its output is normalized again. Every application
//! is recorded so that a trace can be replayed from the initial expression.

use serde::Serialize;

use super::{Inv, Tev, TevError, TevOp};
use crate::cr::ChainOp;

/// Hard cap on rule applications in one normalization.
pub const MAX_REWRITES: usize = 10_000;
/// Chains with more operators than this degrade to unknown.
pub const MAX_DEPTH: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceEntry {
    pub rule: &'static str,
    pub before: String,
    pub after: String,
    #[serde(skip)]
    pub before_expr: Tev,
    #[serde(skip)]
    pub after_expr: Tev,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
#[serde(transparent)]
pub struct RewriteTrace {
    pub entries: Vec<TraceEntry>,
}

impl RewriteTrace {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn rules(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.entries.iter().map(|e| e.rule)
    }

    pub fn extend(&mut self, other: RewriteTrace) {
        self.entries.extend(other.entries);
    }
}

/// Rewrites `t` to normal form.
pub fn normalize(t: &Tev) -> Result<(Tev, RewriteTrace), TevError> {
    let mut n = Normalizer::default();
    let out = n.norm(t.clone())?;
    Ok((out, RewriteTrace { entries: n.entries }))
}

/// Re-applies `trace` to `initial`: each entry replaces the first subterm,
/// in post-order, equal to its `before` expression.
pub fn replay(initial: &Tev, trace: &RewriteTrace) -> Option<Tev> {
    let mut current = initial.clone();
    for entry in &trace.entries {
        current = replace_first(&current, &entry.before_expr, &entry.after_expr)?;
    }
    Some(current)
}

fn replace_first(t: &Tev, before: &Tev, after: &Tev) -> Option<Tev> {
    let children = t.children();
    for (k, child) in children.iter().enumerate() {
        if let Some(replaced) = replace_first(child, before, after) {
            let mut new_children = children.to_vec();
            new_children[k] = replaced;
            return Some(with_children(t, new_children));
        }
    }
    (t == before).then(|| after.clone())
}

fn with_children(t: &Tev, children: Vec<Tev>) -> Tev {
    match t {
        Tev::Chain { ops, .. } => Tev::Chain {
            operands: children,
            ops: ops.clone(),
        },
        Tev::Op { op, shape, .. } => Tev::Op {
            op: op.clone(),
            args: children,
            shape: shape.clone(),
        },
        other => other.clone(),
    }
}

#[derive(Default)]
struct Normalizer {
    entries: Vec<TraceEntry>,
}

impl Normalizer {
    fn norm(&mut self, t: Tev) -> Result<Tev, TevError> {
        let t = match t {
            Tev::Chain { operands, ops } => Tev::Chain {
                operands: operands
                    .into_iter()
                    .map(|o| self.norm(o))
                    .collect::<Result<_, _>>()?,
                ops,
            },
            Tev::Op { op, args, shape } => Tev::Op {
                op,
                args: args
                    .into_iter()
                    .map(|a| self.norm(a))
                    .collect::<Result<_, _>>()?,
                shape,
            },
            other => other,
        };
        match rewrite(&t)? {
            Some((rule, after)) => {
                if self.entries.len() >= MAX_REWRITES {
                    return Err(TevError::RewriteLimit(MAX_REWRITES));
                }
                self.entries.push(TraceEntry {
                    rule,
                    before: t.to_string(),
                    after: after.to_string(),
                    before_expr: t,
                    after_expr: after.clone(),
                });
                self.norm(after)
            }
            None => Ok(t),
        }
    }
}

/// Head operand, first operator and the remaining chain (or last operand).
fn split(operands: &[Tev], ops: &[ChainOp]) -> (Tev, ChainOp, Tev) {
    let rest = if ops.len() == 1 {
        operands[1].clone()
    } else {
        Tev::Chain {
            operands: operands[1..].to_vec(),
            ops: ops[1..].to_vec(),
        }
    };
    (operands[0].clone(), ops[0], rest)
}

fn head_op(t: &Tev) -> Option<ChainOp> {
    match t {
        Tev::Chain { ops, .. } => Some(ops[0]),
        _ => None,
    }
}

fn pair(head: Tev, op: ChainOp, rest: Tev) -> Tev {
    Tev::Chain {
        operands: vec![head, rest],
        ops: vec![op],
    }
}

fn identity(op: ChainOp, like: &Tev) -> Tev {
    let shape = like.shape().clone();
    Tev::Invariant(match op {
        ChainOp::Add => Inv::zeros(shape),
        ChainOp::Mul => Inv::ones(shape),
    })
}

/// Value at iteration 0 of an expression that may contain chains.
fn at_zero(t: &Tev) -> Tev {
    match t {
        Tev::Chain { operands, .. } => at_zero(&operands[0]),
        Tev::Op { op, args, shape } => Tev::Op {
            op: op.clone(),
            args: args.iter().map(at_zero).collect(),
            shape: shape.clone(),
        },
        other => other.clone(),
    }
}

type Rewrite = Option<(&'static str, Tev)>;

fn rewrite(t: &Tev) -> Result<Rewrite, TevError> {
    match t {
        Tev::Invariant(inv) => {
            let c = inv.canonical();
            Ok((c != *inv).then(|| ("canonicalize-invariant", Tev::Invariant(c))))
        }
        Tev::Unknown { .. } => Ok(None),
        Tev::Chain { operands, ops } => Ok(chain_rule(t, operands, ops)),
        Tev::Op { op, args, shape } => op_rule(op, args, shape),
    }
}

fn chain_rule(t: &Tev, operands: &[Tev], ops: &[ChainOp]) -> Rewrite {
    if let Some((var, reason)) = operands.iter().find_map(|o| match o {
        Tev::Unknown { var, reason, .. } => Some((var, reason)),
        _ => None,
    }) {
        return Some(("propagate-unknown", Tev::unknown(var, reason, t.shape().clone())));
    }
    if ops.is_empty() {
        return Some(("collapse", operands[0].clone()));
    }
    let last = operands.len() - 1;
    if operands[..last].iter().any(|o| o.contains_chain()) {
        let mut new = operands.to_vec();
        for o in &mut new[..last] {
            *o = at_zero(o);
        }
        return Some((
            "head-value",
            Tev::Chain {
                operands: new,
                ops: ops.to_vec(),
            },
        ));
    }
    if let Tev::Chain {
        operands: inner,
        ops: inner_ops,
    } = &operands[last]
    {
        let mut new = operands[..last].to_vec();
        new.extend(inner.iter().cloned());
        let mut new_ops = ops.to_vec();
        new_ops.extend(inner_ops.iter().copied());
        return Some((
            "inject",
            Tev::Chain {
                operands: new,
                ops: new_ops,
            },
        ));
    }
    if ops.len() > MAX_DEPTH {
        return Some((
            "depth-limit",
            Tev::unknown("", format!("chain depth exceeds {MAX_DEPTH}"), t.shape().clone()),
        ));
    }
    if let Tev::Invariant(inv) = &operands[last] {
        let trivial = match ops[last - 1] {
            ChainOp::Add => inv.is_zeros(),
            ChainOp::Mul => inv.is_ones(),
        };
        if trivial {
            let after = if last == 1 {
                operands[0].clone()
            } else {
                Tev::Chain {
                    operands: operands[..last].to_vec(),
                    ops: ops[..last - 1].to_vec(),
                }
            };
            return Some(("drop-identity", after));
        }
    }
    None
}

fn op_rule(op: &TevOp, args: &[Tev], shape: &crate::Shape) -> Result<Rewrite, TevError> {
    if let Some((var, reason)) = args.iter().find_map(|a| match a {
        Tev::Unknown { var, reason, .. } => Some((var, reason)),
        _ => None,
    }) {
        return Ok(Some(("propagate-unknown", Tev::unknown(var, reason, shape.clone()))));
    }
    if let Some(invs) = args
        .iter()
        .map(|a| a.as_invariant().cloned())
        .collect::<Option<Vec<Inv>>>()
    {
        let folded = op.apply_inv(&invs)?.canonical();
        return Ok(Some(("fold-invariant", Tev::Invariant(folded))));
    }
    let un = |o: TevOp, x: Tev| Tev::op(o, vec![x]);
    let bin = |o: TevOp, x: Tev, y: Tev| Tev::op(o, vec![x, y]);

    Ok(match op {
        TevOp::Neg | TevOp::Scale(_) => match &args[0] {
            Tev::Chain { operands, ops } => {
                let (h, o, r) = split(operands, ops);
                let rest = match o {
                    ChainOp::Add => un(op.clone(), r)?,
                    ChainOp::Mul => r,
                };
                Some(("mul-invariant", pair(un(op.clone(), h)?, o, rest)))
            }
            _ => None,
        },
        TevOp::Add => match (&args[0], &args[1]) {
            (Tev::Invariant(_), Tev::Chain { operands, ops })
            | (Tev::Chain { operands, ops }, Tev::Invariant(_))
                if ops[0] == ChainOp::Add =>
            {
                let k = if args[0].as_invariant().is_some() { &args[0] } else { &args[1] };
                let (h, o, r) = split(operands, ops);
                Some(("add-invariant", pair(bin(TevOp::Add, k.clone(), h)?, o, r)))
            }
            (Tev::Chain { operands: o1, ops: p1 }, Tev::Chain { operands: o2, ops: p2 })
                if p1[0] == ChainOp::Add && p2[0] == ChainOp::Add =>
            {
                let (h1, _, r1) = split(o1, p1);
                let (h2, _, r2) = split(o2, p2);
                Some((
                    "add-tev",
                    pair(bin(TevOp::Add, h1, h2)?, ChainOp::Add, bin(TevOp::Add, r1, r2)?),
                ))
            }
            _ => None,
        },
        TevOp::Mul => match (&args[0], &args[1]) {
            (Tev::Invariant(_), Tev::Chain { operands, ops })
            | (Tev::Chain { operands, ops }, Tev::Invariant(_)) => {
                let k = if args[0].as_invariant().is_some() { &args[0] } else { &args[1] };
                let (h, o, r) = split(operands, ops);
                let rest = match o {
                    ChainOp::Add => bin(TevOp::Mul, k.clone(), r)?,
                    ChainOp::Mul => r,
                };
                Some(("mul-invariant", pair(bin(TevOp::Mul, k.clone(), h)?, o, rest)))
            }
            (Tev::Chain { operands: o1, ops: p1 }, Tev::Chain { operands: o2, ops: p2 })
                if p1[0] == p2[0] =>
            {
                let (f, g) = (&args[0], &args[1]);
                let (h1, o, r1) = split(o1, p1);
                let (h2, _, r2) = split(o2, p2);
                let head = bin(TevOp::Mul, h1, h2)?;
                let rest = match o {
                    // (fg)(i+1) - (fg)(i) = f g1 + g f1 + f1 g1
                    ChainOp::Add => bin(
                        TevOp::Add,
                        bin(
                            TevOp::Add,
                            bin(TevOp::Mul, f.clone(), r2.clone())?,
                            bin(TevOp::Mul, g.clone(), r1.clone())?,
                        )?,
                        bin(TevOp::Mul, r1, r2)?,
                    )?,
                    ChainOp::Mul => bin(TevOp::Mul, r1, r2)?,
                };
                Some(("mul-tev", pair(head, o, rest)))
            }
            _ => None,
        },
        TevOp::Pow => match (&args[0], &args[1]) {
            (Tev::Invariant(_), Tev::Chain { operands, ops }) if ops[0] == ChainOp::Add => {
                let (h, _, r) = split(operands, ops);
                let base = args[0].clone();
                Some((
                    "pow-const-base",
                    pair(
                        bin(TevOp::Pow, base.clone(), h)?,
                        ChainOp::Mul,
                        bin(TevOp::Pow, base, r)?,
                    ),
                ))
            }
            _ => None,
        },
        TevOp::Exp | TevOp::Log => {
            let (from, to, rule) = match op {
                TevOp::Exp => (ChainOp::Add, ChainOp::Mul, "exp"),
                _ => (ChainOp::Mul, ChainOp::Add, "log"),
            };
            match &args[0] {
                Tev::Chain { operands, ops } if ops[0] == from => {
                    let (h, _, r) = split(operands, ops);
                    Some((rule, pair(un(op.clone(), h)?, to, un(op.clone(), r)?)))
                }
                _ => None,
            }
        }
        TevOp::Reshape(_) | TevOp::Transpose(_) | TevOp::Slice(_) | TevOp::Broadcast(_) => {
            match &args[0] {
                Tev::Chain { operands, ops } => {
                    let (h, o, r) = split(operands, ops);
                    Some((op.name(), pair(un(op.clone(), h)?, o, un(op.clone(), r)?)))
                }
                _ => None,
            }
        }
        TevOp::Concat(_) => {
            let (a, b) = (&args[0], &args[1]);
            let chain_op = match (head_op(a), head_op(b)) {
                (Some(x), Some(y)) if x == y => Some(x),
                (Some(x), None) if b.as_invariant().is_some() => Some(x),
                (None, Some(y)) if a.as_invariant().is_some() => Some(y),
                _ => None,
            };
            match chain_op {
                Some(o) => {
                    let parts = |t: &Tev| match t {
                        Tev::Chain { operands, ops } => {
                            let (h, _, r) = split(operands, ops);
                            (h, r)
                        }
                        _ => (t.clone(), identity(o, t)),
                    };
                    let (h1, r1) = parts(a);
                    let (h2, r2) = parts(b);
                    Some((
                        "concat",
                        pair(bin(op.clone(), h1, h2)?, o, bin(op.clone(), r1, r2)?),
                    ))
                }
                None => None,
            }
        }
    })
}
