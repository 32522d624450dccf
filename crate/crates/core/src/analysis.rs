//! Assigns a tensor evolution expression to every variable of a loop and
//! computes values at loop exit.
//!
//! The body is first inlined symbolically, so each body variable is an
//! expression over pre-loop names, the header values of loop-carried
//! variables and the counter. A carried variable whose end-of-iteration
//! value is `v + e` or `v * e`, with `e` free of `v`, gets the header chain
//! `{v, +, E}` or `{v, *, E}` where `E` is the expression of `e`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::sync::Arc;

use serde::Serialize;
use serde_json::json;

use crate::cr::ChainOp;
use crate::ir::{check_program, Diagnostic, Expr, ExprKind, LoopProgram};
use crate::tensor::{BinaryOp, Shape, UnaryOp};
use crate::tev::{
    closed_form_at, normalize, symbolic_closed_form, unroll_symbolic, Inv, RewriteTrace, Tev,
    TevError, TevOp,
};

/// Longest trip count for which chains without a closed form are unrolled.
pub const MAX_UNROLL: u64 = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum FailureKind {
    SelfReferentialStep,
    UnsupportedUpdate,
    MutualRecurrence,
    DependsOnUnknown,
    DepthLimit,
    RewriteLimit,
    NoTevAvailable,
    MixedChainTooLong,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Failure {
    pub kind: FailureKind,
    pub message: String,
}

impl Failure {
    fn new(kind: FailureKind, message: impl Into<String>) -> Failure {
        Failure {
            kind,
            message: message.into(),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}: {}", self.kind, self.message)
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum AnalysisError {
    #[error("program is invalid: {}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Diagnostic>),
}

#[derive(Clone, Debug, Default)]
pub struct AnalysisResult {
    pub counter: String,
    pub trip_count: u64,
    /// Loop-carried variables, in order of first read.
    pub carried: Vec<String>,
    /// Header value (start of iteration `i`) for carried variables; the value
    /// assigned during iteration `i` for the other body variables.
    pub per_variable: BTreeMap<String, Tev>,
    /// Value after the loop, for body variables that have one.
    pub exit_values: BTreeMap<String, Inv>,
    /// Closed form of carried variables in the symbolic trip count `k`.
    pub closed_forms: BTreeMap<String, String>,
    pub trace: RewriteTrace,
    /// Variables without an expression.
    pub failures: BTreeMap<String, Failure>,
    /// Variables with an expression but no exit value.
    pub exit_failures: BTreeMap<String, Failure>,
}

impl AnalysisResult {
    pub fn is_carried(&self, name: &str) -> bool {
        self.carried.iter().any(|c| c == name)
    }

    /// Why `name` has no exit value, if it has none.
    pub fn blocking_reason(&self, name: &str) -> Option<&Failure> {
        self.failures.get(name).or_else(|| self.exit_failures.get(name))
    }

    pub fn to_json(&self) -> serde_json::Value {
        let render = |m: &BTreeMap<String, Tev>| -> BTreeMap<String, String> {
            m.iter().map(|(k, v)| (k.clone(), v.to_string())).collect()
        };
        let exits: BTreeMap<String, String> = self
            .exit_values
            .iter()
            .map(|(k, v)| (k.clone(), v.to_string()))
            .collect();
        json!({
            "counter": self.counter,
            "tripCount": self.trip_count,
            "carried": self.carried,
            "perVariable": render(&self.per_variable),
            "exitValues": exits,
            "closedForms": self.closed_forms,
            "failures": self.failures,
            "exitFailures": self.exit_failures,
            "trace": self.trace,
        })
    }
}

impl fmt::Display for AnalysisResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "loop {} in 0..{}", self.counter, self.trip_count)?;
        for (name, tev) in &self.per_variable {
            let tag = if self.is_carried(name) { "header" } else { "value" };
            writeln!(f, "  {name} [{tag}] = {tev}")?;
            if let Some(cf) = self.closed_forms.get(name) {
                writeln!(f, "    closed form: {cf}")?;
            }
            if let Some(exit) = self.exit_values.get(name) {
                writeln!(f, "    exit: {exit}")?;
            }
            if let Some(fail) = self.exit_failures.get(name) {
                writeln!(f, "    no exit value: {fail}")?;
            }
        }
        for (name, fail) in &self.failures {
            writeln!(f, "  {name}: {fail}")?;
        }
        Ok(())
    }
}

fn rebuild(e: &Expr, f: &mut impl FnMut(&Arc<Expr>) -> Arc<Expr>) -> Expr {
    let kind = match &e.kind {
        ExprKind::Var { .. }
        | ExprKind::Literal { .. }
        | ExprKind::Zeros { .. }
        | ExprKind::Ones { .. } => e.kind.clone(),
        ExprKind::Binary { kind, lhs, rhs } => ExprKind::Binary {
            kind: *kind,
            lhs: f(lhs),
            rhs: f(rhs),
        },
        ExprKind::Unary { kind, arg } => ExprKind::Unary {
            kind: *kind,
            arg: f(arg),
        },
        ExprKind::Scale { factor, arg } => ExprKind::Scale {
            factor: *factor,
            arg: f(arg),
        },
        ExprKind::Pow { base, exponent } => ExprKind::Pow {
            base: f(base),
            exponent: f(exponent),
        },
        ExprKind::Reshape { arg, shape } => ExprKind::Reshape {
            arg: f(arg),
            shape: shape.clone(),
        },
        ExprKind::Transpose { arg, perm } => ExprKind::Transpose {
            arg: f(arg),
            perm: perm.clone(),
        },
        ExprKind::Slice { arg, spec } => ExprKind::Slice {
            arg: f(arg),
            spec: spec.clone(),
        },
        ExprKind::Concat { lhs, rhs, axis } => ExprKind::Concat {
            lhs: f(lhs),
            rhs: f(rhs),
            axis: *axis,
        },
        ExprKind::Broadcast { arg, shape } => ExprKind::Broadcast {
            arg: f(arg),
            shape: shape.clone(),
        },
    };
    Expr {
        kind,
        span: e.span,
    }
}

/// Replaces variables assigned earlier in the iteration by their values.
fn substitute(e: &Arc<Expr>, current: &HashMap<String, Arc<Expr>>) -> Arc<Expr> {
    if let ExprKind::Var { name } = &e.kind {
        return current.get(name).cloned().unwrap_or_else(|| e.clone());
    }
    if !e.free_vars().iter().any(|n| current.contains_key(n)) {
        return e.clone();
    }
    Arc::new(rebuild(e, &mut |c| substitute(c, current)))
}

fn is_var(e: &Expr, name: &str) -> bool {
    matches!(&e.kind, ExprKind::Var { name: n } if n == name)
}

/// Top-level signed terms of a sum.
fn terms(e: &Arc<Expr>, coef: f64, out: &mut Vec<(f64, Arc<Expr>)>) {
    match &e.kind {
        ExprKind::Binary {
            kind: BinaryOp::Add,
            lhs,
            rhs,
        } => {
            terms(lhs, coef, out);
            terms(rhs, coef, out);
        }
        ExprKind::Binary {
            kind: BinaryOp::Sub,
            lhs,
            rhs,
        } => {
            terms(lhs, coef, out);
            terms(rhs, -coef, out);
        }
        ExprKind::Unary {
            kind: UnaryOp::Neg,
            arg,
        } => terms(arg, -coef, out),
        ExprKind::Scale { factor, arg } => terms(arg, coef * factor, out),
        _ => out.push((coef, e.clone())),
    }
}

/// Top-level factors of a product, with the accumulated constant.
fn factors(e: &Arc<Expr>, coef: &mut f64, out: &mut Vec<Arc<Expr>>) {
    match &e.kind {
        ExprKind::Binary {
            kind: BinaryOp::Mul,
            lhs,
            rhs,
        } => {
            factors(lhs, coef, out);
            factors(rhs, coef, out);
        }
        ExprKind::Unary {
            kind: UnaryOp::Neg,
            arg,
        } => {
            *coef = -*coef;
            factors(arg, coef, out);
        }
        ExprKind::Scale { factor, arg } => {
            *coef *= factor;
            factors(arg, coef, out);
        }
        _ => out.push(e.clone()),
    }
}

/// How a carried variable changes per iteration.
enum Step {
    /// `v <- v + sum(coef * term)`
    Add(Vec<(f64, Arc<Expr>)>),
    /// `v <- v * coef * prod(factor)`
    Mul(f64, Vec<Arc<Expr>>),
}

fn recognize(v: &str, end: &Arc<Expr>) -> Result<Step, Failure> {
    let mut ts = Vec::new();
    terms(end, 1.0, &mut ts);
    let own: Vec<usize> = (0..ts.len()).filter(|&k| is_var(&ts[k].1, v)).collect();
    if own.len() == 1 && ts[own[0]].0 == 1.0 {
        let rest: Vec<(f64, Arc<Expr>)> = ts
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != own[0])
            .map(|(_, t)| t.clone())
            .collect();
        if rest.iter().all(|(_, e)| !e.mentions(v)) {
            return Ok(Step::Add(rest));
        }
    }
    let mut coef = 1.0;
    let mut fs = Vec::new();
    factors(end, &mut coef, &mut fs);
    let own: Vec<usize> = (0..fs.len()).filter(|&k| is_var(&fs[k], v)).collect();
    if own.len() == 1 {
        let rest: Vec<Arc<Expr>> = fs
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != own[0])
            .map(|(_, f)| f.clone())
            .collect();
        if rest.iter().all(|e| !e.mentions(v)) {
            return Ok(Step::Mul(coef, rest));
        }
    }
    if end.mentions(v) {
        Err(Failure::new(
            FailureKind::SelfReferentialStep,
            format!("`{v}` is updated as `{end}`, which is not `{v}` plus or times a term free of `{v}`"),
        ))
    } else {
        Err(Failure::new(
            FailureKind::UnsupportedUpdate,
            format!("`{v}` is overwritten with `{end}`, which does not depend on its previous value"),
        ))
    }
}

struct Ctx<'a> {
    counter: &'a str,
    shapes: &'a BTreeMap<String, Shape>,
    headers: HashMap<String, Tev>,
    memo: HashMap<*const Expr, Tev>,
}

impl Ctx<'_> {
    fn tev(&mut self, e: &Arc<Expr>) -> Result<Tev, TevError> {
        let id = Arc::as_ptr(e);
        if let Some(t) = self.memo.get(&id) {
            return Ok(t.clone());
        }
        let t = self.convert(e)?;
        self.memo.insert(id, t.clone());
        Ok(t)
    }

    fn convert(&mut self, e: &Arc<Expr>) -> Result<Tev, TevError> {
        Ok(match &e.kind {
            ExprKind::Var { name } if name == self.counter => Tev::counter(),
            ExprKind::Var { name } => match self.headers.get(name) {
                Some(t) => t.clone(),
                None => Tev::Invariant(Inv::var(name, self.shapes[name].clone())),
            },
            ExprKind::Literal { value } => Tev::Invariant(Inv::literal(value.clone())),
            ExprKind::Zeros { shape } => Tev::Invariant(Inv::zeros(shape.clone())),
            ExprKind::Ones { shape } => Tev::Invariant(Inv::ones(shape.clone())),
            ExprKind::Binary { kind, lhs, rhs } => {
                let (a, b) = (self.tev(lhs)?, self.tev(rhs)?);
                match kind {
                    BinaryOp::Add => Tev::add(a, b)?,
                    BinaryOp::Sub => Tev::sub(a, b)?,
                    BinaryOp::Mul => Tev::mul(a, b)?,
                }
            }
            ExprKind::Unary { kind, arg } => {
                let op = match kind {
                    UnaryOp::Neg => TevOp::Neg,
                    UnaryOp::Log => TevOp::Log,
                    UnaryOp::Exp => TevOp::Exp,
                };
                Tev::op(op, vec![self.tev(arg)?])?
            }
            ExprKind::Scale { factor, arg } => Tev::op(TevOp::Scale(*factor), vec![self.tev(arg)?])?,
            ExprKind::Pow { base, exponent } => {
                Tev::op(TevOp::Pow, vec![self.tev(base)?, self.tev(exponent)?])?
            }
            ExprKind::Reshape { arg, shape } => {
                Tev::op(TevOp::Reshape(shape.clone()), vec![self.tev(arg)?])?
            }
            ExprKind::Transpose { arg, perm } => {
                Tev::op(TevOp::Transpose(perm.clone()), vec![self.tev(arg)?])?
            }
            ExprKind::Slice { arg, spec } => Tev::op(TevOp::Slice(spec.clone()), vec![self.tev(arg)?])?,
            ExprKind::Concat { lhs, rhs, axis } => {
                Tev::op(TevOp::Concat(*axis), vec![self.tev(lhs)?, self.tev(rhs)?])?
            }
            ExprKind::Broadcast { arg, shape } => {
                Tev::op(TevOp::Broadcast(shape.clone()), vec![self.tev(arg)?])?
            }
        })
    }

    fn step_tev(&mut self, step: &Step, shape: &Shape) -> Result<(ChainOp, Tev), TevError> {
        Ok(match step {
            Step::Add(ts) => {
                let mut acc = Tev::Invariant(Inv::zeros(shape.clone()));
                for (coef, e) in ts {
                    let mut t = self.tev(e)?;
                    if *coef != 1.0 {
                        t = Tev::op(TevOp::Scale(*coef), vec![t])?;
                    }
                    acc = Tev::add(acc, t)?;
                }
                (ChainOp::Add, acc)
            }
            Step::Mul(coef, fs) => {
                let mut acc = Tev::Invariant(Inv::scale(*coef, &Inv::ones(shape.clone())));
                for e in fs {
                    acc = Tev::mul(acc, self.tev(e)?)?;
                }
                (ChainOp::Mul, acc)
            }
        })
    }
}

fn normalize_failure(err: TevError) -> Failure {
    match err {
        TevError::RewriteLimit(_) => Failure::new(FailureKind::RewriteLimit, err.to_string()),
        other => Failure::new(FailureKind::NoTevAvailable, other.to_string()),
    }
}

fn unknown_failure(t: &Tev) -> Option<Failure> {
    let (var, reason) = t.find_unknown()?;
    Some(if var.is_empty() {
        Failure::new(FailureKind::DepthLimit, reason.to_string())
    } else {
        Failure::new(
            FailureKind::DependsOnUnknown,
            format!("depends on `{var}`, which has no expression ({reason})"),
        )
    })
}

/// Value at iteration `i` as a loop-independent expression.
pub fn value_at(t: &Tev, i: u64) -> Result<Inv, Failure> {
    match closed_form_at(t, i) {
        Ok(inv) => Ok(inv),
        Err(TevError::MixedOperatorChain) | Err(TevError::NotClosedForm(_)) if i <= MAX_UNROLL => {
            unroll_symbolic(t, i).map_err(|e| Failure::new(FailureKind::NoTevAvailable, e.to_string()))
        }
        Err(TevError::MixedOperatorChain) | Err(TevError::NotClosedForm(_)) => Err(Failure::new(
            FailureKind::MixedChainTooLong,
            format!("`{t}` has no closed form and {i} iterations exceed the unroll limit of {MAX_UNROLL}"),
        )),
        Err(e) => Err(Failure::new(FailureKind::NoTevAvailable, e.to_string())),
    }
}

/// Exit value of `name` after `trip_count` iterations.
pub fn exit_value(r: &AnalysisResult, name: &str, trip_count: u64) -> Result<Inv, Failure> {
    let t = r.per_variable.get(name).ok_or_else(|| {
        r.failures.get(name).cloned().unwrap_or_else(|| {
            Failure::new(FailureKind::NoTevAvailable, format!("`{name}` is not assigned in the loop"))
        })
    })?;
    if r.is_carried(name) {
        value_at(t, trip_count)
    } else if trip_count == 0 {
        Err(Failure::new(
            FailureKind::NoTevAvailable,
            format!("`{name}` is never assigned when the loop does not run"),
        ))
    } else {
        value_at(t, trip_count - 1)
    }
}

pub fn analyze_loop(p: &LoopProgram) -> Result<AnalysisResult, AnalysisError> {
    let (shapes, diags) = check_program(p);
    if !diags.is_empty() {
        return Err(AnalysisError::Invalid(diags));
    }
    let Some(lp) = &p.lp else {
        return Ok(AnalysisResult::default());
    };
    let mut shapes = shapes;
    shapes.insert(lp.counter.clone(), Shape::scalar());

    let mut current: HashMap<String, Arc<Expr>> = HashMap::new();
    for stmt in &lp.body {
        let value = substitute(&Arc::new(stmt.value.clone()), &current);
        current.insert(stmt.name.clone(), value);
    }

    let carried = p.loop_carried();
    let mut result = AnalysisResult {
        counter: lp.counter.clone(),
        trip_count: lp.trip_count,
        carried: carried.clone(),
        ..AnalysisResult::default()
    };
    let mut ctx = Ctx {
        counter: &lp.counter,
        shapes: &shapes,
        headers: HashMap::new(),
        memo: HashMap::new(),
    };

    let mut steps: BTreeMap<String, Result<Step, Failure>> = BTreeMap::new();
    for v in &carried {
        steps.insert(v.clone(), recognize(v, &current[v]));
    }
    let deps: BTreeMap<String, BTreeSet<String>> = steps
        .iter()
        .map(|(v, s)| {
            let mut names = BTreeSet::new();
            if let Ok(step) = s {
                let exprs: Vec<&Arc<Expr>> = match step {
                    Step::Add(ts) => ts.iter().map(|(_, e)| e).collect(),
                    Step::Mul(_, fs) => fs.iter().collect(),
                };
                for e in exprs {
                    names.extend(e.free_vars().into_iter().filter(|n| steps.contains_key(n) && n != v));
                }
            }
            (v.clone(), names)
        })
        .collect();

    let mut solver = Solver {
        steps: &steps,
        deps: &deps,
        state: BTreeMap::new(),
        stack: Vec::new(),
        cyclic: BTreeSet::new(),
    };
    let mut order = Vec::new();
    for v in &carried {
        solver.visit(v, &mut order);
    }

    for v in order {
        let shape = shapes[&v].clone();
        let outcome = if solver.cyclic.contains(&v) {
            Err(Failure::new(
                FailureKind::MutualRecurrence,
                format!("`{v}` is part of a cycle of loop-carried updates"),
            ))
        } else {
            match &steps[&v] {
                Err(f) => Err(f.clone()),
                Ok(step) => ctx
                    .step_tev(step, &shape)
                    .and_then(|(op, s)| {
                        Tev::chain(vec![Tev::Invariant(Inv::var(&v, shape.clone())), s], vec![op])
                    })
                    .and_then(|t| normalize(&t))
                    .map_err(normalize_failure)
                    .and_then(|(t, trace)| {
                        result.trace.extend(trace);
                        match unknown_failure(&t) {
                            Some(f) => Err(f),
                            None => Ok(t),
                        }
                    }),
            }
        };
        match outcome {
            Ok(t) => {
                ctx.headers.insert(v.clone(), t.clone());
                result.per_variable.insert(v, t);
            }
            Err(f) => {
                ctx.headers
                    .insert(v.clone(), Tev::unknown(&v, f.message.clone(), shape));
                result.failures.insert(v, f);
            }
        }
    }

    let mut seen = BTreeSet::new();
    for stmt in &lp.body {
        let name = &stmt.name;
        if carried.contains(name) || !seen.insert(name.clone()) {
            continue;
        }
        let outcome = ctx
            .tev(&current[name])
            .and_then(|t| normalize(&t))
            .map_err(normalize_failure)
            .and_then(|(t, trace)| {
                result.trace.extend(trace);
                match unknown_failure(&t) {
                    Some(f) => Err(f),
                    None => Ok(t),
                }
            });
        match outcome {
            Ok(t) => {
                result.per_variable.insert(name.clone(), t);
            }
            Err(f) => {
                result.failures.insert(name.clone(), f);
            }
        }
    }

    let pre = p.pre_loop_names();
    let names: Vec<String> = result.per_variable.keys().cloned().collect();
    for name in names {
        if result.is_carried(&name) {
            if let Some(cf) = symbolic_closed_form(&result.per_variable[&name], "k") {
                result.closed_forms.insert(name.clone(), cf);
            }
        }
        if !result.is_carried(&name) && lp.trip_count == 0 {
            if pre.contains(&name) {
                let inv = Inv::var(&name, shapes[&name].clone());
                result.exit_values.insert(name, inv);
            }
            continue;
        }
        match exit_value(&result, &name, lp.trip_count) {
            Ok(inv) => {
                result.exit_values.insert(name, inv);
            }
            Err(f) => {
                result.exit_failures.insert(name, f);
            }
        }
    }
    Ok(result)
}

#[derive(Clone, Copy, PartialEq)]
enum Mark {
    Visiting,
    Done,
}

struct Solver<'a> {
    steps: &'a BTreeMap<String, Result<Step, Failure>>,
    deps: &'a BTreeMap<String, BTreeSet<String>>,
    state: BTreeMap<String, Mark>,
    stack: Vec<String>,
    cyclic: BTreeSet<String>,
}

impl Solver<'_> {
    /// Depth-first visit; appends `v` to `order` after its dependencies.
    fn visit(&mut self, v: &str, order: &mut Vec<String>) {
        match self.state.get(v) {
            Some(Mark::Done) => return,
            Some(Mark::Visiting) => {
                let start = self.stack.iter().position(|s| s == v).expect("on stack");
                self.cyclic.extend(self.stack[start..].iter().cloned());
                return;
            }
            None => {}
        }
        debug_assert!(self.steps.contains_key(v));
        self.state.insert(v.to_string(), Mark::Visiting);
        self.stack.push(v.to_string());
        for w in self.deps[v].clone() {
            self.visit(&w, order);
        }
        self.stack.pop();
        self.state.insert(v.to_string(), Mark::Done);
        order.push(v.to_string());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interp::{pre_loop_scope, run_program, Bindings};
    use crate::ir::parse_program;
    use crate::tev::eval_step;
    use crate::Tensor;

    const ACCUMULATE: &str = include_str!("../programs/accumulate.tev");
    const ROW_SUM: &str = include_str!("../programs/row_sum.tev");
    const POLYNOMIAL: &str = include_str!("../programs/polynomial.tev");
    const GEOMETRIC: &str = include_str!("../programs/geometric.tev");

    #[test]
    fn accumulate_chain() {
        let r = analyze_loop(&parse_program(ACCUMULATE).unwrap()).unwrap();
        assert_eq!(r.per_variable["x"].to_string(), "{x, +, a}");
        assert_eq!(r.exit_values["x"].to_string(), "15*a + x");
        assert_eq!(r.closed_forms["x"], "x + k*a");
    }

    #[test]
    fn row_sum_chains() {
        let r = analyze_loop(&parse_program(ROW_SUM).unwrap()).unwrap();
        let s = |v: &str| format!("reshape(slice({v}, [1:2, 0:3]), [3])");
        assert_eq!(
            r.per_variable["y"].to_string(),
            format!("{{y, +, {} + {}, +, {}}}", s("a"), s("x"), s("a"))
        );
        assert_eq!(
            r.exit_values["y"].to_string(),
            format!("y + 120*{} + 15*{}", s("a"), s("x"))
        );
    }

    #[test]
    fn self_referential() {
        let p = parse_program("func f(v: tensor<2>) { for i in 0..3 { v = mul(v, v) } return v }").unwrap();
        let r = analyze_loop(&p).unwrap();
        assert_eq!(r.failures["v"].kind, FailureKind::SelfReferentialStep);
        let p = parse_program("func f(v: tensor<2>) { for i in 0..3 { v = exp(v) } return v }").unwrap();
        assert_eq!(analyze_loop(&p).unwrap().failures["v"].kind, FailureKind::SelfReferentialStep);
    }

    #[test]
    fn mutual_recurrence() {
        let p = parse_program(
            "func f(u: tensor<2>, v: tensor<2>, w: tensor<2>) { for i in 0..3 { t = neg(u) u = add(u, v) v = add(v, t) w = add(w, u) } return w }",
        )
        .unwrap();
        let r = analyze_loop(&p).unwrap();
        assert_eq!(r.failures["u"].kind, FailureKind::MutualRecurrence);
        assert_eq!(r.failures["v"].kind, FailureKind::MutualRecurrence);
        assert_eq!(r.failures["w"].kind, FailureKind::DependsOnUnknown);
    }

    fn check_headers(src: &str, env: &Bindings) {
        let p = parse_program(src).unwrap();
        let r = analyze_loop(&p).unwrap();
        let run = run_program(&p, env, true).unwrap();
        let scope = pre_loop_scope(&p, env).unwrap();
        for (v, log) in run.headers.unwrap() {
            let t = &r.per_variable[&v];
            for (i, expected) in log.iter().enumerate() {
                let got = eval_step(t, i as u64, &scope).unwrap();
                assert!(got.all_close(expected, 1e-12, 1e-12), "{v} at {i}: {got} vs {expected}");
            }
        }
        let out = run_program(&p, env, false).unwrap();
        for (ret, value) in p.returns.iter().zip(&out.returns) {
            if let Some(exit) = r.exit_values.get(&ret.name) {
                let got = exit.eval(&scope).unwrap();
                assert!(got.all_close(value, 1e-9, 1e-12), "{}: {got} vs {value}", ret.name);
            }
        }
    }

    #[test]
    fn headers_match_interpreter() {
        let t = |d: &[usize], v: Vec<f64>| Tensor::new(d, v).unwrap();
        let env: Bindings = [
            ("a".to_string(), t(&[2, 3], vec![1., -2., 3., 0., 1., 2.])),
            ("x".to_string(), t(&[2, 3], vec![1., 2., 3., 4., 5., 6.])),
        ]
        .into_iter()
        .collect();
        check_headers(ROW_SUM, &env);

        let env: Bindings = [
            ("a".to_string(), t(&[3], vec![1., -2., 0.])),
            ("b".to_string(), t(&[3], vec![3., 1., -1.])),
        ]
        .into_iter()
        .collect();
        check_headers(POLYNOMIAL, &env);

        let env: Bindings = [
            ("g0".to_string(), t(&[2, 2], vec![1.5, 0.5, 2.0, 1.0])),
            ("r".to_string(), t(&[2, 2], vec![1.1, 0.9, 1.0, 1.25])),
        ]
        .into_iter()
        .collect();
        check_headers(GEOMETRIC, &env);
    }
}
