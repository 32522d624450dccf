//! Emits loop-free programs from analysis results.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use crate::analysis::{AnalysisResult, Failure};
use crate::ir::{Expr, Ident, LoopProgram, Stmt};
use crate::tensor::{BinaryOp, UnaryOp};
use crate::tev::{Inv, InvKind};

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub struct NotFullyAnalyzable {
    /// Variables needed after the loop that have no exit value.
    pub blocking: Vec<(String, Failure)>,
}

impl fmt::Display for NotFullyAnalyzable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "not fully analyzable:")?;
        for (name, why) in &self.blocking {
            write!(f, " `{name}` ({why});")?;
        }
        Ok(())
    }
}

fn fresh(base: &str, taken: &mut BTreeSet<String>) -> String {
    let mut name = base.to_string();
    let mut n = 1;
    while taken.contains(&name) {
        name = format!("{base}{n}");
        n += 1;
    }
    taken.insert(name.clone());
    name
}

fn all_names(p: &LoopProgram) -> BTreeSet<String> {
    let mut names = p.pre_loop_names();
    names.extend(p.body_assigned());
    if let Some(lp) = &p.lp {
        names.insert(lp.counter.clone());
    }
    for stmt in p.pre_stmts.iter().chain(&p.post_stmts) {
        names.insert(stmt.name.clone());
        names.extend(stmt.value.free_vars());
    }
    names
}

fn rename(e: &Expr, map: &HashMap<String, String>) -> Expr {
    let mut out = e.clone();
    rename_in(&mut out, map);
    out
}

fn rename_in(e: &mut Expr, map: &HashMap<String, String>) {
    use crate::ir::ExprKind;
    use std::sync::Arc;
    match &mut e.kind {
        ExprKind::Var { name } => {
            if let Some(new) = map.get(name) {
                *name = new.clone();
            }
        }
        ExprKind::Literal { .. } | ExprKind::Zeros { .. } | ExprKind::Ones { .. } => {}
        ExprKind::Binary { lhs, rhs, .. } | ExprKind::Concat { lhs, rhs, .. } => {
            rename_in(Arc::make_mut(lhs), map);
            rename_in(Arc::make_mut(rhs), map);
        }
        ExprKind::Pow { base, exponent } => {
            rename_in(Arc::make_mut(base), map);
            rename_in(Arc::make_mut(exponent), map);
        }
        ExprKind::Unary { arg, .. }
        | ExprKind::Scale { arg, .. }
        | ExprKind::Reshape { arg, .. }
        | ExprKind::Transpose { arg, .. }
        | ExprKind::Slice { arg, .. }
        | ExprKind::Broadcast { arg, .. } => rename_in(Arc::make_mut(arg), map),
    }
}

/// Lowers invariant expressions to IR, sharing repeated subtrees through
/// temporaries.
struct Lowering<'a> {
    counts: HashMap<String, usize>,
    bound: HashMap<String, String>,
    stmts: Vec<Stmt>,
    taken: &'a mut BTreeSet<String>,
}

fn is_leaf(e: &Inv) -> bool {
    matches!(
        e.kind(),
        InvKind::Var(_) | InvKind::Literal(_) | InvKind::Zeros | InvKind::Ones
    )
}

impl Lowering<'_> {
    fn count(&mut self, e: &Inv) {
        if is_leaf(e) {
            return;
        }
        let n = self.counts.entry(e.key().to_string()).or_insert(0);
        *n += 1;
        if *n == 1 {
            for c in e.children() {
                self.count(c);
            }
        }
    }

    fn lower(&mut self, e: &Inv) -> Expr {
        if let Some(name) = self.bound.get(e.key()) {
            return Expr::var(name.clone());
        }
        let expr = self.lower_node(e);
        if !is_leaf(e) && self.counts.get(e.key()).copied().unwrap_or(0) > 1 {
            let name = fresh("cse", self.taken);
            self.stmts.push(Stmt::new(name.clone(), expr));
            self.bound.insert(e.key().to_string(), name.clone());
            return Expr::var(name);
        }
        expr
    }

    fn lower_node(&mut self, e: &Inv) -> Expr {
        match e.kind() {
            InvKind::Var(name) => Expr::var(name.clone()),
            InvKind::Literal(t) => Expr::literal(t.clone()),
            InvKind::Zeros => Expr::zeros(e.shape().clone()),
            InvKind::Ones => Expr::ones(e.shape().clone()),
            InvKind::Add(a, b) => {
                if let InvKind::Neg(x) = b.kind() {
                    let (a, x) = (self.lower(a), self.lower(x));
                    return Expr::binary(BinaryOp::Sub, a, x);
                }
                let (a, b) = (self.lower(a), self.lower(b));
                Expr::binary(BinaryOp::Add, a, b)
            }
            InvKind::Mul(a, b) => {
                let (a, b) = (self.lower(a), self.lower(b));
                Expr::binary(BinaryOp::Mul, a, b)
            }
            InvKind::Neg(a) => Expr::unary(UnaryOp::Neg, self.lower(a)),
            InvKind::Scale(c, a) => Expr::scale(*c, self.lower(a)),
            InvKind::Log(a) => Expr::unary(UnaryOp::Log, self.lower(a)),
            InvKind::Exp(a) => Expr::unary(UnaryOp::Exp, self.lower(a)),
            InvKind::Pow(a, b) => {
                let (a, b) = (self.lower(a), self.lower(b));
                Expr::pow(a, b)
            }
            InvKind::Reshape(a) => Expr::reshape(self.lower(a), e.shape().clone()),
            InvKind::Transpose(a, perm) => Expr::transpose(self.lower(a), perm.clone()),
            InvKind::Slice(a, spec) => Expr::slice(self.lower(a), spec.clone()),
            InvKind::Concat(a, b, axis) => {
                let (a, b) = (self.lower(a), self.lower(b));
                Expr::concat(a, b, *axis)
            }
            InvKind::Broadcast(a) => Expr::broadcast(self.lower(a), e.shape().clone()),
        }
    }
}

/// Loop-free program with the same parameters and returns as `p`.
pub fn emit_optimized_program(
    p: &LoopProgram,
    r: &AnalysisResult,
) -> Result<LoopProgram, NotFullyAnalyzable> {
    if p.lp.is_none() {
        return Ok(p.clone());
    }
    let assigned = p.body_assigned();
    let mut needed: BTreeSet<String> = p
        .post_stmts
        .iter()
        .flat_map(|s| s.value.free_vars())
        .chain(p.returns.iter().map(|r| r.name.clone()))
        .filter(|n| assigned.contains(n))
        .collect();
    // Post-loop definitions shadow nothing, so anything they define is not a
    // loop value.
    for stmt in &p.post_stmts {
        needed.remove(&stmt.name);
    }

    let blocking: Vec<(String, Failure)> = needed
        .iter()
        .filter(|n| !r.exit_values.contains_key(*n))
        .map(|n| {
            let why = r.blocking_reason(n).cloned().unwrap_or_else(|| Failure {
                kind: crate::analysis::FailureKind::NoTevAvailable,
                message: format!("`{n}` has no exit value"),
            });
            (n.clone(), why)
        })
        .collect();
    if !blocking.is_empty() {
        return Err(NotFullyAnalyzable { blocking });
    }

    let mut taken = all_names(p);
    let mut lowering = Lowering {
        counts: HashMap::new(),
        bound: HashMap::new(),
        stmts: Vec::new(),
        taken: &mut taken,
    };
    for name in &needed {
        lowering.count(&r.exit_values[name]);
    }
    let mut renames = HashMap::new();
    let mut exits = Vec::new();
    for name in &needed {
        let value = lowering.lower(&r.exit_values[name]);
        let exit_name = fresh(&format!("{name}_exit"), lowering.taken);
        lowering.stmts.push(Stmt::new(exit_name.clone(), value));
        renames.insert(name.clone(), exit_name);
        exits.push(name.clone());
    }

    let mut pre_stmts = p.pre_stmts.clone();
    pre_stmts.extend(lowering.stmts);
    for stmt in &p.post_stmts {
        pre_stmts.push(Stmt::new(stmt.name.clone(), rename(&stmt.value, &renames)));
    }
    let returns = p
        .returns
        .iter()
        .map(|ret| Ident::new(renames.get(&ret.name).cloned().unwrap_or_else(|| ret.name.clone())))
        .collect();
    Ok(LoopProgram {
        name: p.name.clone(),
        params: p.params.clone(),
        pre_stmts,
        lp: None,
        post_stmts: Vec::new(),
        returns,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::analyze_loop;
    use crate::interp::{run_program, Bindings};
    use crate::ir::{parse_program, serialize_program, validate_program};
    use crate::Tensor;

    const ACCUMULATE: &str = include_str!("../programs/accumulate.tev");
    const ROW_SUM: &str = include_str!("../programs/row_sum.tev");

    fn optimize(src: &str) -> Result<LoopProgram, NotFullyAnalyzable> {
        let p = parse_program(src).unwrap();
        emit_optimized_program(&p, &analyze_loop(&p).unwrap())
    }

    #[test]
    fn accumulate_optimized() {
        let q = optimize(ACCUMULATE).unwrap();
        assert!(q.lp.is_none());
        assert!(validate_program(&q).is_empty());
        let text = serialize_program(&q);
        assert!(text.contains("x_exit = add(scale(15.0, a), x)"), "{text}");
        assert_eq!(parse_program(&text).unwrap(), q);
    }

    #[test]
    fn row_sum_optimized() {
        let q = optimize(ROW_SUM).unwrap();
        let text = serialize_program(&q);
        assert!(text.contains("scale(120.0, reshape(slice(a, [1:2, 0:3]), [3]))"), "{text}");
        assert!(text.contains("scale(15.0, reshape(slice(x, [1:2, 0:3]), [3]))"), "{text}");
        let env: Bindings = [
            ("a".to_string(), Tensor::ones([2, 3])),
            ("x".to_string(), Tensor::new([2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap()),
        ]
        .into_iter()
        .collect();
        let out = run_program(&q, &env, false).unwrap();
        assert_eq!(out.returns[0].data(), &[180.0, 195.0, 210.0]);
    }

    #[test]
    fn exp_update_blocks() {
        let err = optimize("func f(v: tensor<2>) { for i in 0..3 { v = exp(v) } return v }").unwrap_err();
        assert_eq!(err.blocking[0].0, "v");
    }

    #[test]
    fn shared_subtrees_become_temporaries() {
        let q = optimize(
            "func f(a: tensor<2>, b: tensor<2>, u: tensor<2>, w: tensor<2>) {
               for i in 0..4 { u = add(u, exp(mul(a, b))) w = sub(w, exp(mul(a, b))) }
               return u, w }",
        )
        .unwrap();
        let text = serialize_program(&q);
        assert_eq!(text.matches("exp(").count(), 1, "{text}");
    }
}
