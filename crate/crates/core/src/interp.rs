//! Reference interpreter: executes a program statement by statement with no
//! algebraic simplification. Every other component is checked against it.

use std::collections::BTreeMap;

use crate::ir::{Expr, ExprKind, LoopProgram};
use crate::tensor::{Shape, TensorError};
use crate::Tensor;

/// Parameter name to value.
pub type Bindings = BTreeMap<String, Tensor>;

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum InterpError {
    #[error("no binding for parameter `{0}`")]
    UnboundParameter(String),
    #[error("binding for `{name}` has shape {actual}, expected {expected}")]
    BindingShape {
        name: String,
        expected: Shape,
        actual: Shape,
    },
    #[error("variable `{0}` is undefined")]
    Undefined(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutput {
    pub returns: Vec<Tensor>,
    /// Value of each loop-carried variable at the start of every iteration.
    pub headers: Option<BTreeMap<String, Vec<Tensor>>>,
}

pub fn eval_expr(expr: &Expr, scope: &Bindings) -> Result<Tensor, InterpError> {
    Ok(match &expr.kind {
        ExprKind::Var { name } => scope
            .get(name)
            .cloned()
            .ok_or_else(|| InterpError::Undefined(name.clone()))?,
        ExprKind::Literal { value } => value.clone(),
        ExprKind::Zeros { shape } => Tensor::zeros(shape.clone()),
        ExprKind::Ones { shape } => Tensor::ones(shape.clone()),
        ExprKind::Binary { kind, lhs, rhs } => {
            eval_expr(lhs, scope)?.binary(*kind, &eval_expr(rhs, scope)?)?
        }
        ExprKind::Unary { kind, arg } => eval_expr(arg, scope)?.unary(*kind)?,
        ExprKind::Scale { factor, arg } => eval_expr(arg, scope)?.scale(*factor),
        ExprKind::Pow { base, exponent } => {
            eval_expr(base, scope)?.pow(&eval_expr(exponent, scope)?)?
        }
        ExprKind::Reshape { arg, shape } => eval_expr(arg, scope)?.reshape(shape, None)?,
        ExprKind::Transpose { arg, perm } => eval_expr(arg, scope)?.transpose(perm)?,
        ExprKind::Slice { arg, spec } => eval_expr(arg, scope)?.slice(spec)?,
        ExprKind::Concat { lhs, rhs, axis } => {
            eval_expr(lhs, scope)?.concat(&eval_expr(rhs, scope)?, *axis)?
        }
        ExprKind::Broadcast { arg, shape } => eval_expr(arg, scope)?.broadcast(shape)?,
    })
}

/// Scope after binding parameters and running the pre-loop statements.
pub fn pre_loop_scope(p: &LoopProgram, env: &Bindings) -> Result<Bindings, InterpError> {
    let mut scope = Bindings::new();
    for param in &p.params {
        let value = env
            .get(&param.name)
            .ok_or_else(|| InterpError::UnboundParameter(param.name.clone()))?;
        if *value.shape() != param.shape {
            return Err(InterpError::BindingShape {
                name: param.name.clone(),
                expected: param.shape.clone(),
                actual: value.shape().clone(),
            });
        }
        scope.insert(param.name.clone(), value.clone());
    }
    for stmt in &p.pre_stmts {
        let value = eval_expr(&stmt.value, &scope)?;
        scope.insert(stmt.name.clone(), value);
    }
    Ok(scope)
}

pub fn run_program(
    p: &LoopProgram,
    env: &Bindings,
    record_headers: bool,
) -> Result<RunOutput, InterpError> {
    let mut scope = pre_loop_scope(p, env)?;
    let mut headers = None;
    if let Some(lp) = &p.lp {
        let carried = p.loop_carried();
        let mut log: BTreeMap<String, Vec<Tensor>> = carried
            .iter()
            .map(|name| (name.clone(), Vec::new()))
            .collect();
        for i in 0..lp.trip_count {
            if record_headers {
                for (name, values) in log.iter_mut() {
                    values.push(scope[name].clone());
                }
            }
            scope.insert(lp.counter.clone(), Tensor::scalar(i as f64));
            for stmt in &lp.body {
                let value = eval_expr(&stmt.value, &scope)?;
                scope.insert(stmt.name.clone(), value);
            }
        }
        scope.remove(&lp.counter);
        if record_headers {
            headers = Some(log);
        }
    }
    for stmt in &p.post_stmts {
        let value = eval_expr(&stmt.value, &scope)?;
        scope.insert(stmt.name.clone(), value);
    }
    let returns = p
        .returns
        .iter()
        .map(|r| {
            scope
                .get(&r.name)
                .cloned()
                .ok_or_else(|| InterpError::Undefined(r.name.clone()))
        })
        .collect::<Result<_, _>>()?;
    Ok(RunOutput { returns, headers })
}
