use std::collections::BTreeSet;
use std::sync::Arc;

use serde::Serialize;

use crate::tensor::{BinaryOp, Shape, SliceSpec, UnaryOp};
use crate::Tensor;

/// Source position (1-based). Spans never participate in structural
/// equality, so a re-parsed program compares equal to the original.
#[derive(Clone, Copy, Debug, Default, Eq, Serialize)]
pub struct Span {
    pub line: u32,
    pub column: u32,
}

impl Span {
    pub fn new(line: u32, column: u32) -> Self {
        Span { line, column }
    }
}

impl PartialEq for Span {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

impl std::fmt::Display for Span {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.line, self.column)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Expr {
    #[serde(flatten)]
    pub kind: ExprKind,
    pub span: Span,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum ExprKind {
    Var {
        name: String,
    },
    Literal {
        value: Tensor,
    },
    Zeros {
        shape: Shape,
    },
    Ones {
        shape: Shape,
    },
    Binary {
        kind: BinaryOp,
        lhs: Arc<Expr>,
        rhs: Arc<Expr>,
    },
    Unary {
        kind: UnaryOp,
        arg: Arc<Expr>,
    },
    Scale {
        factor: f64,
        arg: Arc<Expr>,
    },
    /// `base ^ exponent`; inside the loop the base must be loop-invariant.
    Pow {
        base: Arc<Expr>,
        exponent: Arc<Expr>,
    },
    Reshape {
        arg: Arc<Expr>,
        shape: Shape,
    },
    Transpose {
        arg: Arc<Expr>,
        perm: Vec<usize>,
    },
    Slice {
        arg: Arc<Expr>,
        spec: SliceSpec,
    },
    Concat {
        lhs: Arc<Expr>,
        rhs: Arc<Expr>,
        axis: usize,
    },
    Broadcast {
        arg: Arc<Expr>,
        shape: Shape,
    },
}

impl Expr {
    pub fn new(kind: ExprKind) -> Self {
        Expr {
            kind,
            span: Span::default(),
        }
    }

    pub fn with_span(mut self, span: Span) -> Self {
        self.span = span;
        self
    }

    pub fn var(name: impl Into<String>) -> Self {
        Expr::new(ExprKind::Var { name: name.into() })
    }

    pub fn literal(value: Tensor) -> Self {
        Expr::new(ExprKind::Literal { value })
    }

    pub fn zeros(shape: impl Into<Shape>) -> Self {
        Expr::new(ExprKind::Zeros {
            shape: shape.into(),
        })
    }

    pub fn ones(shape: impl Into<Shape>) -> Self {
        Expr::new(ExprKind::Ones {
            shape: shape.into(),
        })
    }

    pub fn binary(kind: BinaryOp, lhs: Expr, rhs: Expr) -> Self {
        Expr::new(ExprKind::Binary {
            kind,
            lhs: Arc::new(lhs),
            rhs: Arc::new(rhs),
        })
    }

    pub fn add(lhs: Expr, rhs: Expr) -> Self {
        Expr::binary(BinaryOp::Add, lhs, rhs)
    }

    pub fn sub(lhs: Expr, rhs: Expr) -> Self {
        Expr::binary(BinaryOp::Sub, lhs, rhs)
    }

    pub fn mul(lhs: Expr, rhs: Expr) -> Self {
        Expr::binary(BinaryOp::Mul, lhs, rhs)
    }

    pub fn unary(kind: UnaryOp, arg: Expr) -> Self {
        Expr::new(ExprKind::Unary {
            kind,
            arg: Arc::new(arg),
        })
    }

    pub fn scale(factor: f64, arg: Expr) -> Self {
        Expr::new(ExprKind::Scale {
            factor,
            arg: Arc::new(arg),
        })
    }

    pub fn pow(base: Expr, exponent: Expr) -> Self {
        Expr::new(ExprKind::Pow {
            base: Arc::new(base),
            exponent: Arc::new(exponent),
        })
    }

    pub fn reshape(arg: Expr, shape: impl Into<Shape>) -> Self {
        Expr::new(ExprKind::Reshape {
            arg: Arc::new(arg),
            shape: shape.into(),
        })
    }

    pub fn transpose(arg: Expr, perm: impl Into<Vec<usize>>) -> Self {
        Expr::new(ExprKind::Transpose {
            arg: Arc::new(arg),
            perm: perm.into(),
        })
    }

    pub fn slice(arg: Expr, spec: SliceSpec) -> Self {
        Expr::new(ExprKind::Slice {
            arg: Arc::new(arg),
            spec,
        })
    }

    pub fn concat(lhs: Expr, rhs: Expr, axis: usize) -> Self {
        Expr::new(ExprKind::Concat {
            lhs: Arc::new(lhs),
            rhs: Arc::new(rhs),
            axis,
        })
    }

    pub fn broadcast(arg: Expr, shape: impl Into<Shape>) -> Self {
        Expr::new(ExprKind::Broadcast {
            arg: Arc::new(arg),
            shape: shape.into(),
        })
    }

    /// Direct sub-expressions, left to right.
    pub fn children(&self) -> Vec<&Arc<Expr>> {
        match &self.kind {
            ExprKind::Var { .. }
            | ExprKind::Literal { .. }
            | ExprKind::Zeros { .. }
            | ExprKind::Ones { .. } => vec![],
            ExprKind::Binary { lhs, rhs, .. } | ExprKind::Concat { lhs, rhs, .. } => vec![lhs, rhs],
            ExprKind::Pow { base, exponent } => vec![base, exponent],
            ExprKind::Unary { arg, .. }
            | ExprKind::Scale { arg, .. }
            | ExprKind::Reshape { arg, .. }
            | ExprKind::Transpose { arg, .. }
            | ExprKind::Slice { arg, .. }
            | ExprKind::Broadcast { arg, .. } => vec![arg],
        }
    }

    /// Every variable name referenced, including repeats.
    pub fn visit_vars<'a>(&'a self, f: &mut impl FnMut(&'a str, Span)) {
        if let ExprKind::Var { name } = &self.kind {
            f(name, self.span);
        }
        for child in self.children() {
            child.visit_vars(f);
        }
    }

    pub fn free_vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.visit_vars(&mut |name, _| {
            out.insert(name.to_string());
        });
        out
    }

    pub fn mentions(&self, name: &str) -> bool {
        let mut found = false;
        self.visit_vars(&mut |n, _| found |= n == name);
        found
    }

    /// Number of nodes in the tree.
    pub fn size(&self) -> usize {
        1 + self.children().iter().map(|c| c.size()).sum::<usize>()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Stmt {
    pub name: String,
    pub value: Expr,
    pub span: Span,
}

impl Stmt {
    pub fn new(name: impl Into<String>, value: Expr) -> Self {
        Stmt {
            name: name.into(),
            value,
            span: Span::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Param {
    pub name: String,
    pub shape: Shape,
    pub span: Span,
}

impl Param {
    pub fn new(name: impl Into<String>, shape: impl Into<Shape>) -> Self {
        Param {
            name: name.into(),
            shape: shape.into(),
            span: Span::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Loop {
    /// Loop index; inside the body it reads as a rank-0 tensor.
    pub counter: String,
    pub trip_count: u64,
    pub body: Vec<Stmt>,
    pub span: Span,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Ident {
    pub name: String,
    pub span: Span,
}

impl Ident {
    pub fn new(name: impl Into<String>) -> Self {
        Ident {
            name: name.into(),
            span: Span::default(),
        }
    }
}

/// A single-loop tensor program. Optimized programs have no loop.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct LoopProgram {
    pub name: String,
    pub params: Vec<Param>,
    pub pre_stmts: Vec<Stmt>,
    #[serde(rename = "loop")]
    pub lp: Option<Loop>,
    pub post_stmts: Vec<Stmt>,
    pub returns: Vec<Ident>,
}

impl LoopProgram {
    pub fn trip_count(&self) -> Option<u64> {
        self.lp.as_ref().map(|l| l.trip_count)
    }

    /// Copy with the loop's trip count replaced.
    pub fn with_trip_count(&self, trip_count: u64) -> LoopProgram {
        let mut out = self.clone();
        if let Some(lp) = out.lp.as_mut() {
            lp.trip_count = trip_count;
        }
        out
    }

    /// Names defined before the loop starts (params and pre-loop statements).
    pub fn pre_loop_names(&self) -> BTreeSet<String> {
        self.params
            .iter()
            .map(|p| p.name.clone())
            .chain(self.pre_stmts.iter().map(|s| s.name.clone()))
            .collect()
    }

    /// Names assigned anywhere in the loop body.
    pub fn body_assigned(&self) -> BTreeSet<String> {
        self.lp
            .iter()
            .flat_map(|l| l.body.iter().map(|s| s.name.clone()))
            .collect()
    }

    /// Variables whose value flows from one iteration into the next: defined
    /// before the loop, assigned in the body, and read in the body before (or
    /// by) their first assignment.
    pub fn loop_carried(&self) -> Vec<String> {
        let Some(lp) = &self.lp else {
            return Vec::new();
        };
        let pre = self.pre_loop_names();
        let assigned = self.body_assigned();
        let mut written = BTreeSet::new();
        let mut carried = Vec::new();
        for stmt in &lp.body {
            for name in stmt.value.free_vars() {
                if pre.contains(&name)
                    && assigned.contains(&name)
                    && !written.contains(&name)
                    && !carried.contains(&name)
                {
                    carried.push(name);
                }
            }
            written.insert(stmt.name.clone());
        }
        carried
    }

    /// Total statement count outside and inside the loop.
    pub fn statement_count(&self) -> usize {
        self.pre_stmts.len()
            + self.post_stmts.len()
            + self.lp.as_ref().map_or(0, |l| l.body.len())
    }
}
