//! Name resolution and static shape checking.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::ast::{Expr, ExprKind, LoopProgram, Span};
use crate::tensor::{check_broadcast, concat_shape, Shape, TensorError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum DiagnosticKind {
    UnknownIdentifier,
    DuplicateParam,
    DuplicateDefinition,
    CounterAssignment,
    EmptyLoopBody,
    ShapeMismatch,
    ShapeChange,
    OutOfBounds,
    ElementCountMismatch,
    InvalidPermutation,
    AxisOutOfRange,
    IncompatibleBroadcast,
    LoopVariantPowBase,
}

impl DiagnosticKind {
    /// Scoping problems, as opposed to shape problems.
    pub fn is_scope(self) -> bool {
        matches!(
            self,
            DiagnosticKind::UnknownIdentifier
                | DiagnosticKind::DuplicateParam
                | DiagnosticKind::DuplicateDefinition
                | DiagnosticKind::CounterAssignment
                | DiagnosticKind::EmptyLoopBody
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Diagnostic {
    pub kind: DiagnosticKind,
    pub message: String,
    pub span: Span,
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {:?}: {}", self.span, self.kind, self.message)
    }
}

fn tensor_diag(err: TensorError, span: Span) -> Diagnostic {
    let kind = match err {
        TensorError::ShapeMismatch { .. } | TensorError::DataLength { .. } => DiagnosticKind::ShapeMismatch,
        TensorError::ElementCountMismatch { .. } => DiagnosticKind::ElementCountMismatch,
        TensorError::InvalidPermutation { .. } => DiagnosticKind::InvalidPermutation,
        TensorError::OutOfBounds { .. } => DiagnosticKind::OutOfBounds,
        TensorError::AxisOutOfRange { .. } => DiagnosticKind::AxisOutOfRange,
        TensorError::IncompatibleBroadcast { .. } => DiagnosticKind::IncompatibleBroadcast,
        TensorError::Domain { .. } => DiagnosticKind::ShapeMismatch,
    };
    Diagnostic {
        kind,
        message: err.to_string(),
        span,
    }
}

/// Static shape of `expr`; `None` (with diagnostics pushed) when ill-formed.
pub fn expr_shape(
    expr: &Expr,
    lookup: &dyn Fn(&str) -> Option<Shape>,
    diags: &mut Vec<Diagnostic>,
) -> Option<Shape> {
    infer(expr, &|name| lookup(name).map(Some), diags)
}

/// `lookup` yields `Some(None)` for names that are defined but whose shape is
/// unknown because their own definition was ill-formed.
fn infer(
    expr: &Expr,
    lookup: &dyn Fn(&str) -> Option<Option<Shape>>,
    diags: &mut Vec<Diagnostic>,
) -> Option<Shape> {
    let span = expr.span;
    let same = |op: &'static str, a: Shape, b: Shape, diags: &mut Vec<Diagnostic>| {
        if a == b {
            Some(a)
        } else {
            diags.push(tensor_diag(
                TensorError::ShapeMismatch {
                    op,
                    left: a,
                    right: b,
                },
                span,
            ));
            None
        }
    };
    match &expr.kind {
        ExprKind::Var { name } => {
            let shape = lookup(name);
            if shape.is_none() {
                diags.push(Diagnostic {
                    kind: DiagnosticKind::UnknownIdentifier,
                    message: format!("unknown identifier `{name}`"),
                    span,
                });
            }
            shape.flatten()
        }
        ExprKind::Literal { value } => Some(value.shape().clone()),
        ExprKind::Zeros { shape } | ExprKind::Ones { shape } => Some(shape.clone()),
        ExprKind::Binary { kind, lhs, rhs } => {
            let a = infer(lhs, lookup, diags);
            let b = infer(rhs, lookup, diags);
            same(kind.name(), a?, b?, diags)
        }
        ExprKind::Pow { base, exponent } => {
            let a = infer(base, lookup, diags);
            let b = infer(exponent, lookup, diags);
            same("pow", a?, b?, diags)
        }
        ExprKind::Unary { arg, .. } | ExprKind::Scale { arg, .. } => infer(arg, lookup, diags),
        ExprKind::Reshape { arg, shape } => {
            let a = infer(arg, lookup, diags)?;
            if a.numel() != shape.numel() {
                diags.push(tensor_diag(
                    TensorError::ElementCountMismatch {
                        from: a,
                        to: shape.clone(),
                    },
                    span,
                ));
                return None;
            }
            Some(shape.clone())
        }
        ExprKind::Transpose { arg, perm } => {
            let a = infer(arg, lookup, diags)?;
            a.permuted(perm).map_err(|e| diags.push(tensor_diag(e, span))).ok()
        }
        ExprKind::Slice { arg, spec } => {
            let a = infer(arg, lookup, diags)?;
            spec.output_shape(&a).map_err(|e| diags.push(tensor_diag(e, span))).ok()
        }
        ExprKind::Concat { lhs, rhs, axis } => {
            let a = infer(lhs, lookup, diags);
            let b = infer(rhs, lookup, diags);
            concat_shape(&a?, &b?, *axis).map_err(|e| diags.push(tensor_diag(e, span))).ok()
        }
        ExprKind::Broadcast { arg, shape } => {
            let a = infer(arg, lookup, diags)?;
            check_broadcast(&a, shape)
                .map(|_| shape.clone())
                .map_err(|e| diags.push(tensor_diag(e, span)))
                .ok()
        }
    }
}

/// Checks a program and returns the shape of every named value it defines.
pub fn check_program(p: &LoopProgram) -> (BTreeMap<String, Shape>, Vec<Diagnostic>) {
    let mut diags = Vec::new();
    let mut scope: BTreeMap<String, Option<Shape>> = BTreeMap::new();
    let mut all: BTreeMap<String, Shape> = BTreeMap::new();

    for param in &p.params {
        if scope.contains_key(&param.name) {
            diags.push(Diagnostic {
                kind: DiagnosticKind::DuplicateParam,
                message: format!("parameter `{}` declared twice", param.name),
                span: param.span,
            });
            continue;
        }
        scope.insert(param.name.clone(), Some(param.shape.clone()));
    }

    let define = |scope: &mut BTreeMap<String, Option<Shape>>,
                      diags: &mut Vec<Diagnostic>,
                      name: &str,
                      shape: Option<Shape>,
                      span: Span| {
        if scope.contains_key(name) {
            diags.push(Diagnostic {
                kind: DiagnosticKind::DuplicateDefinition,
                message: format!("`{name}` is already defined"),
                span,
            });
        } else {
            scope.insert(name.to_string(), shape);
        }
    };

    for stmt in &p.pre_stmts {
        let shape = infer(&stmt.value, &|n| scope.get(n).cloned(), &mut diags);
        define(&mut scope, &mut diags, &stmt.name, shape, stmt.span);
    }
    all.extend(scope.iter().filter_map(|(k, v)| Some((k.clone(), v.clone()?))));

    let mut after_loop = scope.clone();
    if let Some(lp) = &p.lp {
        if scope.contains_key(&lp.counter) {
            diags.push(Diagnostic {
                kind: DiagnosticKind::DuplicateDefinition,
                message: format!("loop counter `{}` shadows an existing name", lp.counter),
                span: lp.span,
            });
        }
        if lp.body.is_empty() {
            diags.push(Diagnostic {
                kind: DiagnosticKind::EmptyLoopBody,
                message: "loop body must contain at least one statement".into(),
                span: lp.span,
            });
        }
        let mut variant: BTreeSet<String> = p.body_assigned();
        variant.insert(lp.counter.clone());

        let mut current = scope.clone();
        current.insert(lp.counter.clone(), Some(Shape::scalar()));
        for stmt in &lp.body {
            let shape = infer(&stmt.value, &|n| current.get(n).cloned(), &mut diags);
            check_pow_bases(&stmt.value, &variant, &mut diags);
            if stmt.name == lp.counter {
                diags.push(Diagnostic {
                    kind: DiagnosticKind::CounterAssignment,
                    message: format!("loop counter `{}` cannot be assigned", lp.counter),
                    span: stmt.span,
                });
                continue;
            }
            let Some(shape) = shape else {
                current.entry(stmt.name.clone()).or_insert(None);
                continue;
            };
            match current.get(&stmt.name) {
                Some(Some(prev)) if *prev != shape => diags.push(Diagnostic {
                    kind: DiagnosticKind::ShapeChange,
                    message: format!("`{}` changes shape from {prev} to {shape}", stmt.name),
                    span: stmt.span,
                }),
                _ => {
                    current.insert(stmt.name.clone(), Some(shape.clone()));
                    all.entry(stmt.name.clone()).or_insert(shape);
                }
            }
        }
        // Values first defined in the body exist after the loop only if it ran.
        for (name, shape) in current {
            if name == lp.counter {
                continue;
            }
            if scope.contains_key(&name) || lp.trip_count > 0 {
                after_loop.insert(name, shape);
            }
        }
    }

    for stmt in &p.post_stmts {
        let shape = infer(&stmt.value, &|n| after_loop.get(n).cloned(), &mut diags);
        let fresh = !after_loop.contains_key(&stmt.name);
        define(&mut after_loop, &mut diags, &stmt.name, shape.clone(), stmt.span);
        if let (true, Some(shape)) = (fresh, shape) {
            all.insert(stmt.name.clone(), shape);
        }
    }
    for ret in &p.returns {
        if !after_loop.contains_key(&ret.name) {
            diags.push(Diagnostic {
                kind: DiagnosticKind::UnknownIdentifier,
                message: format!("unknown identifier `{}`", ret.name),
                span: ret.span,
            });
        }
    }
    (all, diags)
}

fn check_pow_bases(expr: &Expr, variant: &BTreeSet<String>, diags: &mut Vec<Diagnostic>) {
    if let ExprKind::Pow { base, .. } = &expr.kind {
        if let Some(name) = base.free_vars().into_iter().find(|n| variant.contains(n)) {
            diags.push(Diagnostic {
                kind: DiagnosticKind::LoopVariantPowBase,
                message: format!("pow base depends on loop-variant `{name}`"),
                span: expr.span,
            });
        }
    }
    for child in expr.children() {
        check_pow_bases(child, variant, diags);
    }
}

/// All diagnostics for `p`; empty means valid.
pub fn validate_program(p: &LoopProgram) -> Vec<Diagnostic> {
    check_program(p).1
}
