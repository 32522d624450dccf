//! Seeded generators shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tev::interp::Bindings;
use tev::tev::{Inv, Tev, TevError, TevOp};
use tev::{ChainOp, Shape, SliceSpec, Tensor, TensorError};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn shape_name(s: &Shape) -> String {
    s.dims().iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
}

/// Random TeV expressions over a small family of 2-d and 1-d shapes.
pub struct ExprGen {
    pub rng: ChaCha8Rng,
    /// Variables referenced so far, with their shapes.
    pub vars: BTreeMap<String, Shape>,
    /// Allow log, exp, pow and '*' chains.
    pub transcendental: bool,
}

impl ExprGen {
    pub fn new(seed: u64, transcendental: bool) -> Self {
        ExprGen {
            rng: rng(seed),
            vars: BTreeMap::new(),
            transcendental,
        }
    }

    pub fn var(&mut self, shape: &Shape) -> Inv {
        let letter = ['a', 'b', 'c'].choose(&mut self.rng).unwrap();
        let name = format!("{letter}{}", shape_name(shape));
        self.vars.insert(name.clone(), shape.clone());
        Inv::var(name, shape.clone())
    }

    pub fn inv(&mut self, shape: &Shape, depth: u32) -> Inv {
        let pick = if depth == 0 { self.rng.gen_range(0..2) } else { self.rng.gen_range(0..6) };
        match pick {
            0 => self.var(shape),
            1 => Inv::scale(self.rng.gen_range(-3i32..=3) as f64, &Inv::ones(shape.clone())),
            2 => Inv::add(&self.inv(shape, depth - 1), &self.inv(shape, depth - 1)).unwrap(),
            3 => Inv::mul(&self.inv(shape, depth - 1), &self.inv(shape, depth - 1)).unwrap(),
            4 => Inv::scale(self.rng.gen_range(-3i32..=3) as f64, &self.inv(shape, depth - 1)),
            _ => Inv::neg(&self.inv(shape, depth - 1)),
        }
    }

    pub fn chain_of(&mut self, shape: &Shape, op: ChainOp, len: usize, depth: u32) -> Tev {
        let operands = (0..len).map(|_| self.inv(shape, depth).into()).collect();
        Tev::chain(operands, vec![op; len - 1]).unwrap()
    }

    pub fn additive(&mut self, shape: &Shape) -> Tev {
        let len = self.rng.gen_range(2..=4);
        self.chain_of(shape, ChainOp::Add, len, 1)
    }

    /// A chain whose last operand is a variable, so it cannot collapse.
    pub fn live_chain(&mut self, shape: &Shape, op: ChainOp, len: usize) -> Tev {
        let Tev::Chain { mut operands, ops } = self.chain_of(shape, op, len, 1) else {
            unreachable!()
        };
        operands[len - 1] = self.var(shape).into();
        Tev::chain(operands, ops).unwrap()
    }

    pub fn live_additive(&mut self, shape: &Shape) -> Tev {
        let len = self.rng.gen_range(2..=4);
        self.live_chain(shape, ChainOp::Add, len)
    }

    /// Structural operator producing `shape`, with the shape its argument needs.
    fn structural(&mut self, shape: &Shape) -> Option<(TevOp, Vec<Shape>)> {
        let d = shape.dims().to_vec();
        let mut options: Vec<(TevOp, Vec<Shape>)> = Vec::new();
        match d.as_slice() {
            [r, c] => {
                options.push((TevOp::Reshape(shape.clone()), vec![Shape::new([r * c])]));
                options.push((TevOp::Transpose(vec![1, 0]), vec![Shape::new([*c, *r])]));
                options.push((TevOp::Broadcast(shape.clone()), vec![Shape::new([*c])]));
                options.push((TevOp::Broadcast(shape.clone()), vec![Shape::new([1, *c])]));
                if *r < 3 {
                    options.push((
                        TevOp::Slice(SliceSpec::new(vec![(1, r + 1), (0, *c)])),
                        vec![Shape::new([r + 1, *c])],
                    ));
                }
                if *r >= 2 {
                    options.push((TevOp::Concat(0), vec![Shape::new([1, *c]), Shape::new([r - 1, *c])]));
                }
            }
            [n] => {
                if *n == 6 {
                    options.push((TevOp::Reshape(shape.clone()), vec![Shape::new([2, 3])]));
                }
                if *n == 3 {
                    options.push((TevOp::Reshape(shape.clone()), vec![Shape::new([1, 3])]));
                    options.push((TevOp::Slice(SliceSpec::new(vec![(0, 3)])), vec![Shape::new([6])]));
                }
                if *n >= 2 {
                    options.push((TevOp::Concat(0), vec![Shape::new([1]), Shape::new([n - 1])]));
                }
            }
            _ => {}
        }
        options.choose(&mut self.rng).cloned()
    }

    /// Any expression of the given shape.
    pub fn tev(&mut self, shape: &Shape, depth: u32) -> Tev {
        if depth == 0 {
            return if self.rng.gen_bool(0.5) {
                self.inv(shape, 1).into()
            } else {
                self.additive(shape)
            };
        }
        let kinds = if self.transcendental { 11 } else { 8 };
        match self.rng.gen_range(0..kinds) {
            0 => self.inv(shape, 2).into(),
            1 => {
                let len = self.rng.gen_range(2..=3);
                let mut operands: Vec<Tev> = (0..len).map(|_| self.inv(shape, 1).into()).collect();
                // Nested chains in any position.
                let k = self.rng.gen_range(0..len);
                operands[k] = self.tev(shape, depth - 1);
                let op = if self.transcendental && self.rng.gen_bool(0.3) { ChainOp::Mul } else { ChainOp::Add };
                Tev::chain(operands, vec![op; len - 1]).unwrap()
            }
            2 | 3 => {
                let (a, b) = (self.tev(shape, depth - 1), self.tev(shape, depth - 1));
                if self.rng.gen_bool(0.5) { Tev::add(a, b) } else { Tev::sub(a, b) }.unwrap()
            }
            4 => Tev::mul(self.tev(shape, depth - 1), self.tev(shape, depth - 1)).unwrap(),
            5 => {
                let c = self.rng.gen_range(-3i32..=3) as f64;
                if self.rng.gen_bool(0.5) {
                    Tev::op(TevOp::Scale(c), vec![self.tev(shape, depth - 1)]).unwrap()
                } else {
                    Tev::neg(self.tev(shape, depth - 1))
                }
            }
            6 | 7 => match self.structural(shape) {
                Some((op, shapes)) => {
                    let args = shapes.iter().map(|s| self.tev(s, depth - 1)).collect();
                    Tev::op(op, args).unwrap()
                }
                None => self.tev(shape, depth - 1),
            },
            8 => Tev::op(TevOp::Exp, vec![self.tev(shape, depth - 1)]).unwrap(),
            9 => Tev::op(TevOp::Log, vec![self.tev(shape, depth - 1)]).unwrap(),
            _ => {
                // Powers are only rewritten for positive bases.
                let base = Inv::exp(&self.inv(shape, 1)).into();
                Tev::op(TevOp::Pow, vec![base, self.tev(shape, depth - 1)]).unwrap()
            }
        }
    }

    /// Random bindings for every variable referenced so far.
    pub fn env(&mut self, positive: bool) -> Bindings {
        let vars = self.vars.clone();
        vars.into_iter()
            .map(|(name, shape)| (name, random_tensor(&mut self.rng, &shape, positive)))
            .collect()
    }
}

pub fn random_tensor(rng: &mut impl Rng, shape: &Shape, positive: bool) -> Tensor {
    let data = (0..shape.numel())
        .map(|_| {
            if positive {
                rng.gen_range(0.5..=2.0)
            } else {
                rng.gen_range(-4i32..=4) as f64
            }
        })
        .collect();
    Tensor::new(shape.clone(), data).unwrap()
}

pub fn is_domain_error(e: &TevError) -> bool {
    matches!(e, TevError::Tensor(TensorError::Domain { .. }))
}

/// Random single-loop programs in the surface syntax.
///
/// Updates are sums of terms built from parameters, the counter, carried
/// values and earlier temporaries. With `nonlinear`, some updates multiply a
/// variable by itself or exponentiate it, which the analysis must reject.
pub struct ProgramGen {
    rng: ChaCha8Rng,
}

pub struct GeneratedProgram {
    pub source: String,
    /// Whether the program uses multiplicative updates or transcendental ops.
    pub multiplicative: bool,
}

impl ProgramGen {
    pub fn new(seed: u64) -> Self {
        ProgramGen { rng: rng(seed) }
    }

    fn term(&mut self, readable: &[String], mult: bool) -> String {
        let v = readable.choose(&mut self.rng).unwrap().clone();
        match self.rng.gen_range(0..10) {
            0 => format!("scale({}.0, {v})", self.rng.gen_range(-3i32..=3)),
            1 => format!("transpose(transpose({v}, [1, 0]), [1, 0])"),
            2 => format!("reshape(reshape({v}, [6]), [2, 3])"),
            3 => format!("broadcast(slice({v}, [1:2, 0:3]), [2, 3])"),
            4 => format!("concat(slice({v}, [0:1, 0:3]), slice({v}, [1:2, 0:3]), 0)"),
            5 => "broadcast(i, [2, 3])".to_string(),
            6 if mult => format!("exp(scale(0.1, {v}))"),
            7 if !mult => {
                let w = readable.choose(&mut self.rng).unwrap().clone();
                format!("mul({v}, {w})")
            }
            _ => v,
        }
    }

    pub fn generate(&mut self) -> GeneratedProgram {
        let mult = self.rng.gen_bool(0.25);
        let n_params = self.rng.gen_range(1..=3);
        let params: Vec<String> = ["a", "b", "c"][..n_params].iter().map(|s| s.to_string()).collect();
        let n_carried = self.rng.gen_range(1..=3);
        let carried: Vec<String> = ["u", "v", "w"][..n_carried].iter().map(|s| s.to_string()).collect();
        let trip = self.rng.gen_range(0..=20);

        let mut src = format!(
            "func g({}) {{\n",
            params.iter().map(|p| format!("{p}: tensor<2,3>")).collect::<Vec<_>>().join(", ")
        );
        for v in &carried {
            let init = match self.rng.gen_range(0..3) {
                0 => "zeros([2, 3])".to_string(),
                1 => "ones([2, 3])".to_string(),
                _ => params.choose(&mut self.rng).unwrap().clone(),
            };
            src += &format!("  {v} = {init}\n");
        }
        src += &format!("  for i in 0..{trip} {{\n");

        let mut readable: Vec<String> = params.clone();
        readable.extend(carried.iter().cloned());
        let n_stmts = self.rng.gen_range(1..=5);
        let mut temps = 0;
        for _ in 0..n_stmts {
            if self.rng.gen_bool(0.3) {
                let t = format!("t{temps}");
                temps += 1;
                let e = self.term(&readable, mult);
                src += &format!("    {t} = {e}\n");
                readable.push(t);
                continue;
            }
            let v = carried.choose(&mut self.rng).unwrap().clone();
            let roll = self.rng.gen_range(0..20);
            let stmt = if roll == 0 {
                format!("{v} = mul({v}, {v})")
            } else if roll == 1 {
                format!("{v} = exp({v})")
            } else if mult && self.rng.gen_bool(0.5) {
                // Keep factors positive and near one.
                let p = params.choose(&mut self.rng).unwrap();
                format!("{v} = mul({v}, {p})")
            } else {
                let others: Vec<String> = readable.iter().filter(|r| **r != v).cloned().collect();
                let mut e = self.term(&others, mult);
                if self.rng.gen_bool(0.4) {
                    e = format!("add({e}, {})", self.term(&others, mult));
                }
                if self.rng.gen_bool(0.2) {
                    format!("{v} = sub({v}, {e})")
                } else {
                    format!("{v} = add({v}, {e})")
                }
            };
            src += &format!("    {stmt}\n");
        }
        src += "  }\n";
        let ret = carried.choose(&mut self.rng).unwrap().clone();
        if self.rng.gen_bool(0.3) {
            let p = params.choose(&mut self.rng).unwrap();
            src += &format!("  r = add({ret}, {p})\n  return r, {}\n}}\n", carried[0]);
        } else {
            src += &format!("  return {}\n}}\n", carried.join(", "));
        }
        GeneratedProgram {
            source: src,
            multiplicative: mult,
        }
    }
}

/// Rules checked by the soundness suite, with the trace name each one uses.
pub const SOUNDNESS_RULES: &[&str] = &[
    "add-invariant",
    "mul-invariant",
    "add-tev",
    "mul-tev",
    "inject",
    "reshape",
    "slice",
    "broadcast",
    "concat",
    "log",
    "exp",
    "transpose",
    "pow-const-base",
];

/// Whether a rule is checked on positive reals with a relative tolerance
/// rather than exactly on integers.
pub fn rule_is_transcendental(rule: &str) -> bool {
    matches!(rule, "log" | "exp" | "pow-const-base")
}

/// An expression whose root is rewritten by `rule`.
pub fn rule_case(g: &mut ExprGen, rule: &str) -> Tev {
    let s23 = Shape::new([2, 3]);
    let s13 = Shape::new([1, 3]);
    match rule {
        "add-invariant" => {
            let (c, e) = (g.live_additive(&s23), g.inv(&s23, 1).into());
            if g.rng.gen_bool(0.5) { Tev::add(c, e) } else { Tev::add(e, c) }.unwrap()
        }
        "mul-invariant" => {
            let (c, e) = (g.live_additive(&s23), g.inv(&s23, 1).into());
            if g.rng.gen_bool(0.5) { Tev::mul(c, e) } else { Tev::mul(e, c) }.unwrap()
        }
        "add-tev" => Tev::add(g.live_additive(&s23), g.live_additive(&s23)).unwrap(),
        "mul-tev" => {
            let (a, b) = if g.rng.gen_bool(0.7) {
                (g.live_additive(&s23), g.live_additive(&s23))
            } else {
                // Short enough to stay exact on integer data.
                (g.live_chain(&s23, ChainOp::Mul, 2), g.live_chain(&s23, ChainOp::Mul, 2))
            };
            Tev::mul(a, b).unwrap()
        }
        "inject" => {
            let head = g.inv(&s23, 1).into();
            Tev::additive(vec![head, g.live_additive(&s23)]).unwrap()
        }
        "reshape" => {
            let target = if g.rng.gen_bool(0.5) { Shape::new([6]) } else { Shape::new([3, 2]) };
            Tev::op(TevOp::Reshape(target), vec![g.live_additive(&s23)]).unwrap()
        }
        "transpose" => Tev::op(TevOp::Transpose(vec![1, 0]), vec![g.live_additive(&s23)]).unwrap(),
        "slice" => {
            let row = g.rng.gen_range(0..2);
            let lo = g.rng.gen_range(0..2);
            let spec = SliceSpec::new(vec![(row, row + 1), (lo, 3)]);
            Tev::op(TevOp::Slice(spec), vec![g.live_additive(&s23)]).unwrap()
        }
        "broadcast" => {
            let from = if g.rng.gen_bool(0.5) { Shape::new([3]) } else { s13.clone() };
            Tev::op(TevOp::Broadcast(s23), vec![g.live_additive(&from)]).unwrap()
        }
        "concat" => {
            let (a, b) = if g.rng.gen_bool(0.5) {
                (g.live_additive(&s13), g.live_additive(&s13))
            } else {
                (g.live_additive(&s13), g.inv(&s13, 1).into())
            };
            Tev::op(TevOp::Concat(0), vec![a, b]).unwrap()
        }
        "log" => {
            let len = g.rng.gen_range(2..=3);
            // Positive on positive data.
            let operands = (0..len).map(|_| g.var(&s23).into()).collect();
            let chain = Tev::multiplicative(operands).unwrap();
            Tev::op(TevOp::Log, vec![chain]).unwrap()
        }
        "exp" => {
            let len = g.rng.gen_range(2..=3);
            let chain = g.live_chain(&s23, ChainOp::Add, len);
            Tev::op(TevOp::Exp, vec![chain]).unwrap()
        }
        "pow-const-base" => {
            let base = g.var(&s23).into();
            Tev::op(TevOp::Pow, vec![base, g.live_additive(&s23)]).unwrap()
        }
        other => panic!("no generator for rule {other}"),
    }
}

/// Rewrites `envs` random instances of `rule` and compares the values before
/// and after at iterations 0..=8.
pub fn rule_soundness(rule: &str, seed: u64, envs: usize) -> Result<(), String> {
    let positive = rule_is_transcendental(rule);
    for k in 0..envs {
        let mut g = ExprGen::new(seed.wrapping_mul(1_000_003).wrapping_add(k as u64), positive);
        let before = rule_case(&mut g, rule);
        let (after, trace) = tev::tev::normalize(&before).map_err(|e| format!("{before}: {e}"))?;
        if !trace.rules().any(|r| r == rule) {
            return Err(format!("`{rule}` did not fire on {before}; trace {:?}", trace.rules().collect::<Vec<_>>()));
        }
        let env = g.env(positive);
        for i in 0..=8 {
            let x = tev::tev::eval_step(&before, i, &env).map_err(|e| format!("{before} at {i}: {e}"))?;
            let y = tev::tev::eval_step(&after, i, &env).map_err(|e| format!("{after} at {i}: {e}"))?;
            let ok = if positive { y.all_close(&x, 1e-12, 1e-12) } else { x == y };
            if !ok {
                return Err(format!("{before} => {after} differs at i = {i}: {x} vs {y}"));
            }
        }
    }
    Ok(())
}
