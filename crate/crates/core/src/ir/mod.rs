//! Textual IR for single-loop tensor programs.
//!
//! ```text
//! func forward(a: tensor<2,3>, x: tensor<2,3>) {
//!   y = zeros([3])
//!   for i in 0..15 {
//!     x = add(x, a)
//!     z = reshape(slice(x, [1:2, 0:3]), [3])
//!     y = add(y, z)
//!   }
//!   return y
//! }
//! ```
//!
//! The loop is optional so that loop-free (optimized) programs share the
//! same representation. Inside the body the counter reads as a rank-0 tensor.

mod ast;
mod parser;
mod printer;
mod validate;

pub use ast::{Expr, ExprKind, Ident, Loop, LoopProgram, Param, Span, Stmt};
pub use parser::{parse_syntax, KEYWORDS};
pub use printer::serialize_program;
pub use validate::{check_program, expr_shape, validate_program, Diagnostic, DiagnosticKind};

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum ParseError {
    #[error("syntax error at {line}:{column}: {message}")]
    Syntax {
        line: u32,
        column: u32,
        message: String,
    },
    #[error("{span}: parameter `{name}` declared twice")]
    DuplicateParam { name: String, span: Span },
    #[error("{span}: unknown identifier `{name}`")]
    UnknownIdentifier { name: String, span: Span },
    #[error("invalid program: {}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Diagnostic>),
}

/// Parses and resolves names. Shape errors are left to [`validate_program`].
pub fn parse_program(text: &str) -> Result<LoopProgram, ParseError> {
    let program = parse_syntax(text)?;
    let scope: Vec<Diagnostic> = validate_program(&program)
        .into_iter()
        .filter(|d| d.kind.is_scope())
        .collect();
    let Some(first) = scope.first() else {
        return Ok(program);
    };
    let name = first
        .message
        .split('`')
        .nth(1)
        .unwrap_or_default()
        .to_string();
    Err(match first.kind {
        DiagnosticKind::UnknownIdentifier => ParseError::UnknownIdentifier {
            name,
            span: first.span,
        },
        DiagnosticKind::DuplicateParam => ParseError::DuplicateParam {
            name,
            span: first.span,
        },
        _ => ParseError::Invalid(scope),
    })
}

/// JSON form of the AST.
pub fn to_json(p: &LoopProgram) -> serde_json::Value {
    serde_json::to_value(p).expect("AST serialization is infallible")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{BinaryOp, SliceSpec};

    const ACCUMULATE: &str = include_str!("../../programs/accumulate.tev");
    const ROW_SUM: &str = include_str!("../../programs/row_sum.tev");
    const ROW_SUM_BROADCAST: &str = include_str!("../../programs/row_sum_broadcast.tev");

    #[test]
    fn parses_accumulate_program() {
        let p = parse_program(ACCUMULATE).unwrap();
        let lp = p.lp.as_ref().unwrap();
        assert_eq!(lp.trip_count, 15);
        assert_eq!(lp.body.len(), 1);
        assert_eq!(
            lp.body[0].value,
            Expr::binary(BinaryOp::Add, Expr::var("a"), Expr::var("x"))
        );
        assert_eq!(p.loop_carried(), vec!["x".to_string()]);
    }

    #[test]
    fn empty_body_is_invalid() {
        let err = parse_program("func f(x: tensor<2>) { for i in 0..3 { } return x }").unwrap_err();
        match err {
            ParseError::Invalid(d) => assert_eq!(d[0].kind, DiagnosticKind::EmptyLoopBody),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_identifier_is_named() {
        let err = parse_program("func f(x: tensor<2>) { y = add(x, w) return y }").unwrap_err();
        assert!(matches!(err, ParseError::UnknownIdentifier { ref name, .. } if name == "w"));
    }

    #[test]
    fn duplicate_param() {
        let err = parse_program("func f(x: tensor<2>, x: tensor<3>) { return x }").unwrap_err();
        assert!(matches!(err, ParseError::DuplicateParam { ref name, .. } if name == "x"));
    }

    #[test]
    fn body_temporary_read_before_definition() {
        let err =
            parse_program("func f(x: tensor<2>) { for i in 0..3 { x = add(x, t) t = x } return x }")
                .unwrap_err();
        assert!(matches!(err, ParseError::UnknownIdentifier { ref name, .. } if name == "t"));
    }

    #[test]
    fn body_temporary_after_empty_loop() {
        let src = "func f(x: tensor<2>) { for i in 0..0 { t = neg(x) } return t }";
        assert!(matches!(
            parse_program(src),
            Err(ParseError::UnknownIdentifier { .. })
        ));
        assert!(parse_program(&src.replace("0..0", "0..1")).is_ok());
    }

    #[test]
    fn counter_cannot_be_assigned() {
        let err = parse_program("func f(x: tensor<>) { for i in 0..3 { i = add(x, i) } return x }")
            .unwrap_err();
        assert!(matches!(err, ParseError::Invalid(ref d) if d[0].kind == DiagnosticKind::CounterAssignment));
    }

    #[test]
    fn shape_mismatch_diagnostic() {
        let p = parse_program("func f(a: tensor<2,3>, b: tensor<3,2>) { c = add(a, b) return c }")
            .unwrap();
        let diags = validate_program(&p);
        assert_eq!(diags.len(), 1);
        assert_eq!(diags[0].kind, DiagnosticKind::ShapeMismatch);
        assert_eq!(diags[0].span, Span::new(1, 46));
    }

    #[test]
    fn slice_out_of_bounds_diagnostic() {
        let p = parse_program("func f(a: tensor<2,3>) { c = slice(a, [0:2, 1:4]) return c }").unwrap();
        let diags = validate_program(&p);
        assert_eq!(diags.len(), 1);
        assert_eq!(diags[0].kind, DiagnosticKind::OutOfBounds);
    }

    #[test]
    fn loop_variant_pow_base() {
        let p = parse_program(
            "func f(c: tensor<2>, x: tensor<2>) { for i in 0..3 { x = pow(x, c) } return x }",
        )
        .unwrap();
        let diags = validate_program(&p);
        assert_eq!(diags[0].kind, DiagnosticKind::LoopVariantPowBase);
        let ok = parse_program(
            "func f(c: tensor<2>, x: tensor<2>) { for i in 0..3 { x = pow(c, x) } return x }",
        )
        .unwrap();
        assert!(validate_program(&ok).is_empty());
    }

    #[test]
    fn loop_carried_shape_must_be_stable() {
        let p = parse_program(
            "func f(x: tensor<2,2>) { for i in 0..3 { x = reshape(x, [4]) } return x }",
        )
        .unwrap();
        assert_eq!(validate_program(&p)[0].kind, DiagnosticKind::ShapeChange);
    }

    #[test]
    fn shipped_programs_validate() {
        for src in [ACCUMULATE, ROW_SUM, ROW_SUM_BROADCAST] {
            let p = parse_program(src).unwrap();
            assert!(validate_program(&p).is_empty(), "{:?}", validate_program(&p));
        }
        let p = parse_program(ROW_SUM).unwrap();
        let (shapes, _) = check_program(&p);
        assert_eq!(shapes["z"].dims(), &[3]);
        assert_eq!(shapes["y"].dims(), &[3]);
    }

    #[test]
    fn round_trips() {
        for src in [ACCUMULATE, ROW_SUM, ROW_SUM_BROADCAST] {
            let p = parse_program(src).unwrap();
            let text = serialize_program(&p);
            assert_eq!(parse_program(&text).unwrap(), p, "{text}");
        }
    }

    #[test]
    fn json_carries_trip_count() {
        let json = to_json(&parse_program(ACCUMULATE).unwrap());
        assert_eq!(json["loop"]["tripCount"], 15);
        assert_eq!(json["loop"]["body"][0]["value"]["op"], "binary");
        assert_eq!(json["params"][0]["shape"], serde_json::json!([2]));
    }

    #[test]
    fn optional_loop_and_multiple_returns() {
        let p = parse_program("func f(a: tensor<2>) { b = neg(a) c = slice(b, [0:1]) return b, c }")
            .unwrap();
        assert!(p.lp.is_none());
        assert_eq!(p.returns.len(), 2);
        assert!(validate_program(&p).is_empty());
        assert_eq!(
            p.pre_stmts[1].value,
            Expr::slice(Expr::var("b"), SliceSpec::new([(0, 1)]))
        );
    }
}
