//! Loop-invariant tensor expressions and their canonical form.
//!
//! The canonical form is a polynomial: a sum of `coef * f1 * f2 * ...` terms
//! whose factors are atoms (variables, non-constant literals, `log`, `exp`,
//! `pow`, `concat`) under at most a short stack of structural operators.
//! Structural operators are pushed through sums, products and element-wise
//! functions down to the atoms, and consecutive ones of the same kind merge.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::{Arc, OnceLock};

use crate::interp::Bindings;
use crate::tensor::{check_broadcast, concat_shape, Shape, SliceSpec, TensorError, UnaryOp};
use crate::Tensor;

use super::TevError;

#[derive(Clone, Debug, PartialEq)]
pub enum InvKind {
    Var(String),
    Literal(Tensor),
    Zeros,
    Ones,
    Add(Inv, Inv),
    Mul(Inv, Inv),
    Neg(Inv),
    Scale(f64, Inv),
    Log(Inv),
    Exp(Inv),
    Pow(Inv, Inv),
    /// Target shape is the node's shape.
    Reshape(Inv),
    Transpose(Inv, Vec<usize>),
    Slice(Inv, SliceSpec),
    Concat(Inv, Inv, usize),
    /// Target shape is the node's shape.
    Broadcast(Inv),
}

struct Node {
    kind: InvKind,
    shape: Shape,
    key: OnceLock<String>,
    canonical: OnceLock<Inv>,
}

/// Shared, immutable, shape-annotated invariant expression.
#[derive(Clone)]
pub struct Inv(Arc<Node>);

impl PartialEq for Inv {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
            || (self.0.shape == other.0.shape && self.0.kind == other.0.kind)
    }
}

impl fmt::Debug for Inv {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Inv({})", self.key())
    }
}

fn same_shape(op: &'static str, a: &Inv, b: &Inv) -> Result<(), TensorError> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(TensorError::ShapeMismatch {
            op,
            left: a.shape().clone(),
            right: b.shape().clone(),
        })
    }
}

impl Inv {
    fn make(kind: InvKind, shape: Shape) -> Inv {
        Inv(Arc::new(Node {
            kind,
            shape,
            key: OnceLock::new(),
            canonical: OnceLock::new(),
        }))
    }

    pub fn var(name: impl Into<String>, shape: impl Into<Shape>) -> Inv {
        Inv::make(InvKind::Var(name.into()), shape.into())
    }

    pub fn literal(value: Tensor) -> Inv {
        let shape = value.shape().clone();
        Inv::make(InvKind::Literal(value), shape)
    }

    pub fn constant(value: f64) -> Inv {
        Inv::literal(Tensor::scalar(value))
    }

    pub fn zeros(shape: impl Into<Shape>) -> Inv {
        Inv::make(InvKind::Zeros, shape.into())
    }

    pub fn ones(shape: impl Into<Shape>) -> Inv {
        Inv::make(InvKind::Ones, shape.into())
    }

    pub fn add(a: &Inv, b: &Inv) -> Result<Inv, TensorError> {
        same_shape("add", a, b)?;
        Ok(Inv::make(InvKind::Add(a.clone(), b.clone()), a.shape().clone()))
    }

    pub fn sub(a: &Inv, b: &Inv) -> Result<Inv, TensorError> {
        Inv::add(a, &Inv::neg(b))
    }

    pub fn mul(a: &Inv, b: &Inv) -> Result<Inv, TensorError> {
        same_shape("mul", a, b)?;
        Ok(Inv::make(InvKind::Mul(a.clone(), b.clone()), a.shape().clone()))
    }

    pub fn neg(a: &Inv) -> Inv {
        Inv::make(InvKind::Neg(a.clone()), a.shape().clone())
    }

    pub fn scale(factor: f64, a: &Inv) -> Inv {
        Inv::make(InvKind::Scale(factor, a.clone()), a.shape().clone())
    }

    pub fn log(a: &Inv) -> Inv {
        Inv::make(InvKind::Log(a.clone()), a.shape().clone())
    }

    pub fn exp(a: &Inv) -> Inv {
        Inv::make(InvKind::Exp(a.clone()), a.shape().clone())
    }

    pub fn unary(op: UnaryOp, a: &Inv) -> Inv {
        match op {
            UnaryOp::Neg => Inv::neg(a),
            UnaryOp::Log => Inv::log(a),
            UnaryOp::Exp => Inv::exp(a),
        }
    }

    pub fn pow(base: &Inv, exponent: &Inv) -> Result<Inv, TensorError> {
        same_shape("pow", base, exponent)?;
        Ok(Inv::make(
            InvKind::Pow(base.clone(), exponent.clone()),
            base.shape().clone(),
        ))
    }

    pub fn reshape(a: &Inv, shape: &Shape) -> Result<Inv, TensorError> {
        if a.shape().numel() != shape.numel() {
            return Err(TensorError::ElementCountMismatch {
                from: a.shape().clone(),
                to: shape.clone(),
            });
        }
        Ok(Inv::make(InvKind::Reshape(a.clone()), shape.clone()))
    }

    pub fn transpose(a: &Inv, perm: &[usize]) -> Result<Inv, TensorError> {
        let shape = a.shape().permuted(perm)?;
        Ok(Inv::make(InvKind::Transpose(a.clone(), perm.to_vec()), shape))
    }

    pub fn slice(a: &Inv, spec: &SliceSpec) -> Result<Inv, TensorError> {
        let shape = spec.output_shape(a.shape())?;
        Ok(Inv::make(InvKind::Slice(a.clone(), spec.clone()), shape))
    }

    pub fn concat(a: &Inv, b: &Inv, axis: usize) -> Result<Inv, TensorError> {
        let shape = concat_shape(a.shape(), b.shape(), axis)?;
        Ok(Inv::make(InvKind::Concat(a.clone(), b.clone(), axis), shape))
    }

    pub fn broadcast(a: &Inv, shape: &Shape) -> Result<Inv, TensorError> {
        check_broadcast(a.shape(), shape)?;
        Ok(Inv::make(InvKind::Broadcast(a.clone()), shape.clone()))
    }

    pub fn kind(&self) -> &InvKind {
        &self.0.kind
    }

    pub fn shape(&self) -> &Shape {
        &self.0.shape
    }

    pub fn is_zeros(&self) -> bool {
        matches!(self.kind(), InvKind::Zeros)
    }

    pub fn is_ones(&self) -> bool {
        matches!(self.kind(), InvKind::Ones)
    }

    pub fn children(&self) -> Vec<&Inv> {
        match self.kind() {
            InvKind::Var(_) | InvKind::Literal(_) | InvKind::Zeros | InvKind::Ones => vec![],
            InvKind::Neg(a)
            | InvKind::Scale(_, a)
            | InvKind::Log(a)
            | InvKind::Exp(a)
            | InvKind::Reshape(a)
            | InvKind::Transpose(a, _)
            | InvKind::Slice(a, _)
            | InvKind::Broadcast(a) => vec![a],
            InvKind::Add(a, b) | InvKind::Mul(a, b) | InvKind::Pow(a, b) | InvKind::Concat(a, b, _) => {
                vec![a, b]
            }
        }
    }

    /// Number of nodes, counting shared subtrees once per occurrence.
    pub fn size(&self) -> usize {
        1 + self.children().iter().map(|c| c.size()).sum::<usize>()
    }

    pub fn vars(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_vars(&mut out);
        out.sort();
        out.dedup();
        out
    }

    fn collect_vars(&self, out: &mut Vec<String>) {
        if let InvKind::Var(name) = self.kind() {
            out.push(name.clone());
        }
        for child in self.children() {
            child.collect_vars(out);
        }
    }

    /// Rendering, cached; doubles as the structural sort key.
    pub fn key(&self) -> &str {
        self.0.key.get_or_init(|| {
            let mut s = String::new();
            self.render(&mut s).expect("writing to a String cannot fail");
            s
        })
    }

    fn prec(&self) -> u8 {
        match self.kind() {
            InvKind::Add(..) => 1,
            InvKind::Mul(..) | InvKind::Scale(..) => 2,
            InvKind::Neg(_) => 3,
            _ => 4,
        }
    }

    fn render(&self, f: &mut impl fmt::Write) -> fmt::Result {
        let paren = |f: &mut dyn fmt::Write, e: &Inv, wrap: bool| -> fmt::Result {
            if wrap {
                write!(f, "({})", e.key())
            } else {
                write!(f, "{}", e.key())
            }
        };
        match self.kind() {
            InvKind::Var(name) => write!(f, "{name}"),
            InvKind::Literal(t) => write!(f, "{}", render_literal(t)),
            InvKind::Zeros => write!(f, "zeros({})", dims(self.shape().dims())),
            InvKind::Ones => write!(f, "ones({})", dims(self.shape().dims())),
            InvKind::Add(a, b) => {
                paren(f, a, false)?;
                match b.kind() {
                    InvKind::Neg(x) => {
                        write!(f, " - ")?;
                        paren(f, x, x.prec() <= 2)
                    }
                    InvKind::Scale(c, x) if *c < 0.0 => {
                        write!(f, " - {}*", number(-c))?;
                        paren(f, x, x.prec() < 2)
                    }
                    _ => {
                        write!(f, " + ")?;
                        paren(f, b, b.prec() <= 1)
                    }
                }
            }
            InvKind::Mul(a, b) => {
                paren(f, a, a.prec() < 2)?;
                write!(f, " * ")?;
                paren(f, b, b.prec() <= 2)
            }
            InvKind::Scale(c, a) => {
                write!(f, "{}*", number(*c))?;
                paren(f, a, a.prec() < 2)
            }
            InvKind::Neg(a) => {
                write!(f, "-")?;
                paren(f, a, a.prec() < 3)
            }
            InvKind::Log(a) => write!(f, "log({})", a.key()),
            InvKind::Exp(a) => write!(f, "exp({})", a.key()),
            InvKind::Pow(a, b) => write!(f, "pow({}, {})", a.key(), b.key()),
            InvKind::Reshape(a) => write!(f, "reshape({}, {})", a.key(), dims(self.shape().dims())),
            InvKind::Transpose(a, perm) => write!(f, "transpose({}, {})", a.key(), dims(perm)),
            InvKind::Slice(a, spec) => write!(f, "slice({}, {spec})", a.key()),
            InvKind::Concat(a, b, axis) => write!(f, "concat({}, {}, {axis})", a.key(), b.key()),
            InvKind::Broadcast(a) => {
                write!(f, "broadcast({}, {})", a.key(), dims(self.shape().dims()))
            }
        }
    }

    /// Value under `env`, which must bind every variable the expression names.
    pub fn eval(&self, env: &Bindings) -> Result<Tensor, TevError> {
        let mut memo = HashMap::new();
        self.eval_memo(env, &mut memo)
    }

    fn eval_memo(
        &self,
        env: &Bindings,
        memo: &mut HashMap<*const Node, Tensor>,
    ) -> Result<Tensor, TevError> {
        let id = Arc::as_ptr(&self.0);
        if let Some(v) = memo.get(&id) {
            return Ok(v.clone());
        }
        let mut ev = |e: &Inv| e.eval_memo(env, memo);
        let value = match self.kind() {
            InvKind::Var(name) => {
                let v = env
                    .get(name)
                    .ok_or_else(|| TevError::Unbound(name.clone()))?
                    .clone();
                if v.shape() != self.shape() {
                    return Err(TevError::Tensor(TensorError::ShapeMismatch {
                        op: "bind",
                        left: self.shape().clone(),
                        right: v.shape().clone(),
                    }));
                }
                v
            }
            InvKind::Literal(t) => t.clone(),
            InvKind::Zeros => Tensor::zeros(self.shape().clone()),
            InvKind::Ones => Tensor::ones(self.shape().clone()),
            InvKind::Add(a, b) => ev(a)?.add(&ev(b)?)?,
            InvKind::Mul(a, b) => ev(a)?.mul(&ev(b)?)?,
            InvKind::Neg(a) => ev(a)?.unary(UnaryOp::Neg)?,
            InvKind::Scale(c, a) => ev(a)?.scale(*c),
            InvKind::Log(a) => ev(a)?.unary(UnaryOp::Log)?,
            InvKind::Exp(a) => ev(a)?.unary(UnaryOp::Exp)?,
            InvKind::Pow(a, b) => ev(a)?.pow(&ev(b)?)?,
            InvKind::Reshape(a) => ev(a)?.reshape(self.shape(), None)?,
            InvKind::Transpose(a, perm) => ev(a)?.transpose(perm)?,
            InvKind::Slice(a, spec) => ev(a)?.slice(spec)?,
            InvKind::Concat(a, b, axis) => ev(a)?.concat(&ev(b)?, *axis)?,
            InvKind::Broadcast(a) => ev(a)?.broadcast(self.shape())?,
        };
        memo.insert(id, value.clone());
        Ok(value)
    }

    /// Canonical form (memoized per node). Canonicalizing a canonical
    /// expression returns it unchanged.
    pub fn canonical(&self) -> Inv {
        self.0
            .canonical
            .get_or_init(|| Poly::of(self).into_inv())
            .clone()
    }

    pub fn is_canonical(&self) -> bool {
        self.canonical() == *self
    }
}

impl fmt::Display for Inv {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

pub(crate) fn number(c: f64) -> String {
    if c.fract() == 0.0 && c.abs() < 1e15 {
        format!("{}", c as i64)
    } else {
        format!("{c:?}")
    }
}

pub(crate) fn dims(d: &[usize]) -> String {
    let parts: Vec<String> = d.iter().map(|x| x.to_string()).collect();
    format!("[{}]", parts.join(", "))
}

fn render_literal(t: &Tensor) -> String {
    if t.shape().rank() == 0 {
        return number(t.data()[0]);
    }
    let d: Vec<String> = t.shape().dims().iter().map(|x| x.to_string()).collect();
    let v: Vec<String> = t.data().iter().map(|&x| number(x)).collect();
    format!("tensor<{}>[{}]", d.join(","), v.join(", "))
}

/// Structural operator applied to a single tensor.
#[derive(Clone, Debug, PartialEq)]
enum Structural {
    Reshape(Shape),
    Transpose(Vec<usize>),
    Slice(SliceSpec),
    Broadcast(Shape),
}

impl Structural {
    fn of(e: &Inv) -> Option<(Structural, &Inv)> {
        Some(match e.kind() {
            InvKind::Reshape(a) => (Structural::Reshape(e.shape().clone()), a),
            InvKind::Transpose(a, p) => (Structural::Transpose(p.clone()), a),
            InvKind::Slice(a, s) => (Structural::Slice(s.clone()), a),
            InvKind::Broadcast(a) => (Structural::Broadcast(e.shape().clone()), a),
            _ => return None,
        })
    }

    fn apply(&self, e: &Inv) -> Inv {
        match self {
            Structural::Reshape(s) => Inv::reshape(e, s),
            Structural::Transpose(p) => Inv::transpose(e, p),
            Structural::Slice(spec) => Inv::slice(e, spec),
            Structural::Broadcast(s) => Inv::broadcast(e, s),
        }
        .expect("structural operator re-applied to an argument of the original shape")
    }

    fn output_shape(&self, input: &Shape) -> Shape {
        match self {
            Structural::Reshape(s) | Structural::Broadcast(s) => s.clone(),
            Structural::Transpose(p) => input.permuted(p).expect("validated permutation"),
            Structural::Slice(spec) => spec.output_shape(input).expect("validated slice"),
        }
    }

    fn is_identity(&self, input: &Shape) -> bool {
        match self {
            Structural::Reshape(s) | Structural::Broadcast(s) => s == input,
            Structural::Transpose(p) => p.iter().enumerate().all(|(k, &x)| k == x),
            Structural::Slice(spec) => *spec == SliceSpec::full(input),
        }
    }

    fn eval(&self, t: &Tensor) -> Tensor {
        match self {
            Structural::Reshape(s) => t.reshape(s, None),
            Structural::Transpose(p) => t.transpose(p),
            Structural::Slice(spec) => t.slice(spec),
            Structural::Broadcast(s) => t.broadcast(s),
        }
        .expect("shape-checked structural operator")
    }

    /// `self` applied after `inner`, as a single operator, when they merge.
    fn after(&self, inner: &Structural) -> Option<Structural> {
        match (inner, self) {
            (Structural::Reshape(_), Structural::Reshape(s)) => Some(Structural::Reshape(s.clone())),
            (Structural::Broadcast(_), Structural::Broadcast(s)) => {
                Some(Structural::Broadcast(s.clone()))
            }
            (Structural::Slice(first), Structural::Slice(second)) => {
                Some(Structural::Slice(first.compose(second)))
            }
            (Structural::Transpose(p1), Structural::Transpose(p2)) => {
                Some(Structural::Transpose(p2.iter().map(|&k| p1[k]).collect()))
            }
            _ => None,
        }
    }
}

/// Products larger than this stay unexpanded.
const MAX_EXPANDED_TERMS: usize = 512;

type TermKey = (usize, usize, String);

#[derive(Clone, Debug)]
struct Term {
    coef: f64,
    factors: Vec<Inv>,
}

impl Term {
    fn key(&self) -> TermKey {
        let size = self.factors.iter().map(|f| f.size()).sum();
        let text: Vec<&str> = self.factors.iter().map(|f| f.key()).collect();
        (self.factors.len(), size, text.join(" * "))
    }
}

/// Sum of monomials over one shape.
#[derive(Clone, Debug)]
struct Poly {
    shape: Shape,
    terms: BTreeMap<TermKey, Term>,
}

impl Poly {
    fn zero(shape: &Shape) -> Poly {
        Poly {
            shape: shape.clone(),
            terms: BTreeMap::new(),
        }
    }

    fn constant(shape: &Shape, c: f64) -> Poly {
        let mut p = Poly::zero(shape);
        p.push(Term {
            coef: c,
            factors: vec![],
        });
        p
    }

    fn atom(e: Inv) -> Poly {
        let mut p = Poly::zero(e.shape());
        p.push(Term {
            coef: 1.0,
            factors: vec![e],
        });
        p
    }

    fn push(&mut self, mut term: Term) {
        if term.coef == 0.0 {
            return;
        }
        term.factors.sort_by(|a, b| a.key().cmp(b.key()));
        let key = term.key();
        match self.terms.get_mut(&key) {
            Some(existing) => {
                existing.coef += term.coef;
                if existing.coef == 0.0 {
                    self.terms.remove(&key);
                }
            }
            None => {
                self.terms.insert(key, term);
            }
        }
    }

    fn add(mut self, other: Poly) -> Poly {
        for term in other.terms.into_values() {
            self.push(term);
        }
        self
    }

    fn scale(mut self, c: f64) -> Poly {
        if c == 0.0 {
            return Poly::zero(&self.shape);
        }
        for term in self.terms.values_mut() {
            term.coef *= c;
        }
        self
    }

    /// `Some(c)` when the polynomial is the constant `c` (zero included).
    fn as_constant(&self) -> Option<f64> {
        match self.terms.len() {
            0 => Some(0.0),
            1 => {
                let t = self.terms.values().next().unwrap();
                t.factors.is_empty().then_some(t.coef)
            }
            _ => None,
        }
    }

    fn mul(self, other: Poly) -> Poly {
        if let Some(c) = self.as_constant() {
            return other.scale(c);
        }
        if let Some(c) = other.as_constant() {
            return self.scale(c);
        }
        if self.terms.len() * other.terms.len() > MAX_EXPANDED_TERMS {
            let (a, b) = (self.into_inv(), other.into_inv());
            let (a, b) = if a.key() <= b.key() { (a, b) } else { (b, a) };
            return Poly::atom(Inv::mul(&a, &b).expect("operands share a shape"));
        }
        let mut out = Poly::zero(&self.shape);
        for x in self.terms.values() {
            for y in other.terms.values() {
                let mut factors = x.factors.clone();
                factors.extend(y.factors.iter().cloned());
                out.push(Term {
                    coef: x.coef * y.coef,
                    factors,
                });
            }
        }
        out
    }

    fn of(e: &Inv) -> Poly {
        let shape = e.shape();
        match e.kind() {
            InvKind::Var(_) => Poly::atom(e.clone()),
            InvKind::Literal(t) => match t.data().first() {
                None => Poly::zero(shape),
                Some(&c) if t.data().iter().all(|&x| x == c) => Poly::constant(shape, c),
                Some(_) => Poly::atom(e.clone()),
            },
            InvKind::Zeros => Poly::zero(shape),
            InvKind::Ones => Poly::constant(shape, 1.0),
            InvKind::Add(a, b) => Poly::of(a).add(Poly::of(b)),
            InvKind::Neg(a) => Poly::of(a).scale(-1.0),
            InvKind::Scale(c, a) => Poly::of(a).scale(*c),
            InvKind::Mul(a, b) => Poly::of(a).mul(Poly::of(b)),
            InvKind::Log(a) => {
                let p = Poly::of(a);
                if p.as_constant() == Some(1.0) {
                    return Poly::zero(shape);
                }
                Poly::atom(Inv::log(&p.into_inv()))
            }
            InvKind::Exp(a) => {
                let p = Poly::of(a);
                if p.as_constant() == Some(0.0) {
                    return Poly::constant(shape, 1.0);
                }
                Poly::atom(Inv::exp(&p.into_inv()))
            }
            InvKind::Pow(base, exponent) => {
                let pb = Poly::of(base);
                let pe = Poly::of(exponent);
                match (pb.as_constant(), pe.as_constant()) {
                    (_, Some(0.0)) | (Some(1.0), _) => Poly::constant(shape, 1.0),
                    (_, Some(1.0)) => pb,
                    (Some(b), Some(x)) => Poly::constant(shape, b.powf(x)),
                    _ => Poly::atom(
                        Inv::pow(&pb.into_inv(), &pe.into_inv()).expect("operands share a shape"),
                    ),
                }
            }
            InvKind::Concat(a, b, axis) => {
                let pa = Poly::of(a);
                let pb = Poly::of(b);
                match (pa.as_constant(), pb.as_constant()) {
                    (Some(x), Some(y)) if x == y => Poly::constant(shape, x),
                    _ => Poly::atom(
                        Inv::concat(&pa.into_inv(), &pb.into_inv(), *axis)
                            .expect("operands were concat-compatible"),
                    ),
                }
            }
            InvKind::Reshape(_)
            | InvKind::Transpose(..)
            | InvKind::Slice(..)
            | InvKind::Broadcast(_) => {
                let (op, arg) = Structural::of(e).unwrap();
                Poly::of(arg).map_structural(&op)
            }
        }
    }

    fn map_structural(self, op: &Structural) -> Poly {
        let shape = op.output_shape(&self.shape);
        let mut out = Poly::zero(&shape);
        for term in self.terms.into_values() {
            let mut p = Poly::constant(&shape, term.coef);
            for factor in &term.factors {
                p = p.mul(structural_atom(op, factor));
            }
            out = out.add(p);
        }
        out
    }

    fn into_inv(self) -> Inv {
        let mut sum: Option<Inv> = None;
        for term in self.terms.into_values() {
            let mut product: Option<Inv> = None;
            for factor in term.factors {
                product = Some(match product {
                    None => factor,
                    Some(p) => Inv::mul(&p, &factor).expect("factors share a shape"),
                });
            }
            let product = product.unwrap_or_else(|| Inv::ones(self.shape.clone()));
            let value = if term.coef == 1.0 {
                product
            } else if term.coef == -1.0 {
                Inv::neg(&product)
            } else {
                Inv::scale(term.coef, &product)
            };
            sum = Some(match sum {
                None => value,
                Some(s) => Inv::add(&s, &value).expect("terms share a shape"),
            });
        }
        sum.unwrap_or_else(|| Inv::zeros(self.shape))
    }
}

/// Canonical polynomial of `op` applied to a canonical atom.
fn structural_atom(op: &Structural, atom: &Inv) -> Poly {
    if op.is_identity(atom.shape()) {
        return Poly::atom(atom.clone());
    }
    match atom.kind() {
        InvKind::Literal(t) => Poly::of(&Inv::literal(op.eval(t))),
        InvKind::Log(a) => Poly::of(&Inv::log(&op.apply(a))),
        InvKind::Exp(a) => Poly::of(&Inv::exp(&op.apply(a))),
        InvKind::Pow(a, b) => {
            Poly::of(&Inv::pow(&op.apply(a), &op.apply(b)).expect("operands share a shape"))
        }
        InvKind::Mul(a, b) => Poly::of(a)
            .map_structural(op)
            .mul(Poly::of(b).map_structural(op)),
        _ => {
            if let Some((inner, arg)) = Structural::of(atom) {
                if let Some(merged) = op.after(&inner) {
                    return structural_atom(&merged, arg);
                }
            }
            Poly::atom(op.apply(atom))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x() -> Inv {
        Inv::var("x", [2, 3])
    }
    fn a() -> Inv {
        Inv::var("a", [2, 3])
    }
    fn row() -> SliceSpec {
        SliceSpec::new([(1, 2), (0, 3)])
    }

    #[test]
    fn like_terms_combine() {
        let e = Inv::add(&Inv::add(&x(), &a()).unwrap(), &Inv::scale(2.0, &x())).unwrap();
        assert_eq!(e.canonical().key(), "a + 3*x");
        let z = Inv::sub(&x(), &x()).unwrap();
        assert!(z.canonical().is_zeros());
    }

    #[test]
    fn structural_ops_distribute() {
        let sum = Inv::add(&x(), &Inv::scale(15.0, &a())).unwrap();
        let s = Inv::slice(&sum, &row()).unwrap();
        let r = Inv::reshape(&s, &Shape::new([3])).unwrap();
        assert_eq!(
            r.canonical().key(),
            "15*reshape(slice(a, [1:2, 0:3]), [3]) + reshape(slice(x, [1:2, 0:3]), [3])"
        );
    }

    #[test]
    fn structural_composition() {
        let s1 = Inv::slice(&x(), &SliceSpec::new([(0, 2), (1, 3)])).unwrap();
        let s2 = Inv::slice(&s1, &SliceSpec::new([(1, 2), (0, 1)])).unwrap();
        assert_eq!(s2.canonical().key(), "slice(x, [1:2, 1:2])");
        let t = Inv::transpose(&Inv::transpose(&x(), &[1, 0]).unwrap(), &[1, 0]).unwrap();
        assert_eq!(t.canonical(), x());
        let r = Inv::reshape(&Inv::reshape(&x(), &Shape::new([6])).unwrap(), &Shape::new([2, 3])).unwrap();
        assert_eq!(r.canonical(), x());
    }

    #[test]
    fn products_expand() {
        let s = Inv::add(&x(), &a()).unwrap();
        let sq = Inv::mul(&s, &s).unwrap();
        assert_eq!(sq.canonical().key(), "a * a + 2*a * x + x * x");
    }

    #[test]
    fn pow_and_log_identities() {
        let one = Inv::ones([2, 3]);
        assert!(Inv::log(&one).canonical().is_zeros());
        assert_eq!(Inv::pow(&x(), &one).unwrap().canonical(), x());
        assert!(Inv::pow(&x(), &Inv::zeros([2, 3])).unwrap().canonical().is_ones());
        assert!(Inv::exp(&Inv::zeros([2, 3])).canonical().is_ones());
    }

    #[test]
    fn canonical_is_idempotent_and_sound() {
        let s = Inv::slice(&Inv::mul(&Inv::add(&x(), &a()).unwrap(), &Inv::exp(&x())).unwrap(), &row()).unwrap();
        let c = s.canonical();
        assert!(c.is_canonical());
        let env: Bindings = [
            ("x".to_string(), Tensor::new([2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap()),
            ("a".to_string(), Tensor::new([2, 3], vec![-1., 0., 1., 2., 3., -4.]).unwrap()),
        ]
        .into_iter()
        .collect();
        assert!(c.eval(&env).unwrap().all_close(&s.eval(&env).unwrap(), 1e-12, 0.0));
    }

    #[test]
    fn constant_literals_fold() {
        let lit = Inv::literal(Tensor::full([2, 3], 4.0));
        let e = Inv::add(&lit, &Inv::ones([2, 3])).unwrap();
        assert_eq!(e.canonical().key(), "5*ones([2, 3])");
        let b = Inv::broadcast(&Inv::constant(2.0), &Shape::new([2, 3])).unwrap();
        assert_eq!(b.canonical().key(), "2*ones([2, 3])");
    }

    #[test]
    fn shape_errors() {
        let bad = Inv::add(&x(), &Inv::var("b", [3, 2]));
        assert!(matches!(bad, Err(TensorError::ShapeMismatch { .. })));
        assert!(Inv::slice(&x(), &SliceSpec::new([(0, 3), (0, 3)])).is_err());
    }
}
