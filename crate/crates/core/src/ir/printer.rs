use std::fmt::{self, Write as _};

use super::ast::{Expr, ExprKind, LoopProgram, Stmt};
use crate::tensor::Shape;

fn dims(f: &mut fmt::Formatter<'_>, shape: &Shape) -> fmt::Result {
    write!(f, "[")?;
    for (k, d) in shape.dims().iter().enumerate() {
        if k > 0 {
            write!(f, ", ")?;
        }
        write!(f, "{d}")?;
    }
    write!(f, "]")
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            ExprKind::Var { name } => write!(f, "{name}"),
            ExprKind::Literal { value } => write!(f, "{value}"),
            ExprKind::Zeros { shape } => {
                write!(f, "zeros(")?;
                dims(f, shape)?;
                write!(f, ")")
            }
            ExprKind::Ones { shape } => {
                write!(f, "ones(")?;
                dims(f, shape)?;
                write!(f, ")")
            }
            ExprKind::Binary { kind, lhs, rhs } => write!(f, "{}({lhs}, {rhs})", kind.name()),
            ExprKind::Unary { kind, arg } => write!(f, "{}({arg})", kind.name()),
            ExprKind::Scale { factor, arg } => write!(f, "scale({factor:?}, {arg})"),
            ExprKind::Pow { base, exponent } => write!(f, "pow({base}, {exponent})"),
            ExprKind::Reshape { arg, shape } => {
                write!(f, "reshape({arg}, ")?;
                dims(f, shape)?;
                write!(f, ")")
            }
            ExprKind::Transpose { arg, perm } => {
                write!(f, "transpose({arg}, ")?;
                dims(f, &Shape::new(perm.clone()))?;
                write!(f, ")")
            }
            ExprKind::Slice { arg, spec } => write!(f, "slice({arg}, {spec})"),
            ExprKind::Concat { lhs, rhs, axis } => write!(f, "concat({lhs}, {rhs}, {axis})"),
            ExprKind::Broadcast { arg, shape } => {
                write!(f, "broadcast({arg}, ")?;
                dims(f, shape)?;
                write!(f, ")")
            }
        }
    }
}

fn stmt_line(out: &mut String, indent: &str, stmt: &Stmt) {
    let _ = writeln!(out, "{indent}{} = {}", stmt.name, stmt.value);
}

/// Canonical text form; re-parses to a structurally equal program.
pub fn serialize_program(p: &LoopProgram) -> String {
    let mut out = String::new();
    let params: Vec<String> = p
        .params
        .iter()
        .map(|param| {
            let dims: Vec<String> = param.shape.dims().iter().map(|d| d.to_string()).collect();
            format!("{}: tensor<{}>", param.name, dims.join(","))
        })
        .collect();
    let _ = writeln!(out, "func {}({}) {{", p.name, params.join(", "));
    for stmt in &p.pre_stmts {
        stmt_line(&mut out, "  ", stmt);
    }
    if let Some(lp) = &p.lp {
        let _ = writeln!(out, "  for {} in 0..{} {{", lp.counter, lp.trip_count);
        for stmt in &lp.body {
            stmt_line(&mut out, "    ", stmt);
        }
        let _ = writeln!(out, "  }}");
    }
    for stmt in &p.post_stmts {
        stmt_line(&mut out, "  ", stmt);
    }
    let returns: Vec<&str> = p.returns.iter().map(|r| r.name.as_str()).collect();
    let _ = writeln!(out, "  return {}", returns.join(", "));
    out.push_str("}\n");
    out
}
