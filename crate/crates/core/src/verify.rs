//! Differential check of an optimized program against the interpreter.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::analysis::{analyze_loop, AnalysisError, AnalysisResult};
use crate::codegen::{emit_optimized_program, NotFullyAnalyzable};
use crate::cr::ChainOp;
use crate::interp::{pre_loop_scope, run_program, Bindings, InterpError};
use crate::ir::{Expr, ExprKind, LoopProgram};
use crate::tensor::{TensorError, UnaryOp};
use crate::tev::{closed_form_at, eval_step, Tev};
use crate::Tensor;

pub const REL_TOL: f64 = 1e-9;
pub const ABS_TOL: f64 = 1e-12;
/// Largest trip count the interpreter is asked to run.
pub const ORACLE_CAP: u64 = 10_000;

#[derive(Clone, Debug)]
pub struct VerifyOptions {
    pub trials: usize,
    pub seed: u64,
    pub trip_count: Option<u64>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            trials: 200,
            seed: 42,
            trip_count: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct VerifyReport {
    pub pass: bool,
    pub trials: usize,
    pub compared: usize,
    /// Trials where the original program raised a domain error.
    pub skipped: usize,
    pub seed: u64,
    pub trip_count: u64,
    pub oracle_trip_count: u64,
    pub max_abs_deviation: f64,
    pub max_rel_deviation: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Largest relative gap between closed form and stepwise evaluation at
    /// the oracle trip count, when the full trip count exceeds it.
    pub closed_form_check: Option<f64>,
    /// Statement count of the optimized program at the full trip count.
    pub optimized_statements: usize,
    pub warnings: Vec<String>,
    pub failures: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum VerifyError {
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    NotFullyAnalyzable(#[from] NotFullyAnalyzable),
    #[error("optimized program failed: {0}")]
    Optimized(InterpError),
}

fn expr_uses_positive_domain(e: &Expr) -> bool {
    matches!(
        e.kind,
        ExprKind::Unary {
            kind: UnaryOp::Log,
            ..
        } | ExprKind::Pow { .. }
    ) || e.children().iter().any(|c| expr_uses_positive_domain(c))
}

fn has_mul_chain(t: &Tev) -> bool {
    matches!(t, Tev::Chain { ops, .. } if ops.contains(&ChainOp::Mul))
        || t.children().iter().any(has_mul_chain)
}

/// Whether inputs should be drawn from positive values: the program takes
/// logarithms or powers, or grows multiplicatively.
pub fn needs_positive_inputs(p: &LoopProgram, r: &AnalysisResult) -> bool {
    let stmts = p
        .pre_stmts
        .iter()
        .chain(p.lp.iter().flat_map(|l| &l.body))
        .chain(&p.post_stmts);
    stmts.into_iter().any(|s| expr_uses_positive_domain(&s.value))
        || r.per_variable.values().any(has_mul_chain)
}

/// Random bindings: integers in [-4, 4], or reals in [0.5, 2] when `positive`.
pub fn random_bindings(p: &LoopProgram, rng: &mut impl Rng, positive: bool) -> Bindings {
    p.params
        .iter()
        .map(|param| {
            let n = param.shape.numel();
            let data = (0..n)
                .map(|_| {
                    if positive {
                        rng.gen_range(0.5..=2.0)
                    } else {
                        rng.gen_range(-4i32..=4) as f64
                    }
                })
                .collect();
            (
                param.name.clone(),
                Tensor::new(param.shape.clone(), data).expect("length matches shape"),
            )
        })
        .collect()
}

fn deviation(got: &Tensor, reference: &Tensor) -> (f64, f64) {
    got.max_deviation(reference).unwrap_or((f64::INFINITY, f64::INFINITY))
}

pub fn verify_program(p: &LoopProgram, opts: &VerifyOptions) -> Result<VerifyReport, VerifyError> {
    let full = match opts.trip_count {
        Some(k) => p.with_trip_count(k),
        None => p.clone(),
    };
    let trip_count = full.trip_count().unwrap_or(0);
    let analysis = analyze_loop(&full)?;
    let optimized = emit_optimized_program(&full, &analysis)?;

    let oracle_trip = trip_count.min(ORACLE_CAP);
    let capped = trip_count > oracle_trip;
    let (oracle, oracle_analysis, oracle_optimized) = if capped {
        let o = full.with_trip_count(oracle_trip);
        let a = analyze_loop(&o)?;
        let q = emit_optimized_program(&o, &a)?;
        (o, a, q)
    } else {
        (full.clone(), analysis.clone(), optimized.clone())
    };

    let positive = needs_positive_inputs(&full, &analysis);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = VerifyReport {
        pass: true,
        trials: opts.trials,
        compared: 0,
        skipped: 0,
        seed: opts.seed,
        trip_count,
        oracle_trip_count: oracle_trip,
        max_abs_deviation: 0.0,
        max_rel_deviation: 0.0,
        rel_tol: REL_TOL,
        abs_tol: ABS_TOL,
        closed_form_check: None,
        optimized_statements: optimized.statement_count(),
        warnings: Vec::new(),
        failures: Vec::new(),
    };
    if opts.trials == 0 {
        report
            .warnings
            .push("no trials requested; the check passes vacuously".into());
    }
    if capped {
        report.warnings.push(format!(
            "interpreter capped at {oracle_trip} iterations; the optimized program runs at {trip_count}"
        ));
    }

    for trial in 0..opts.trials {
        let env = random_bindings(&full, &mut rng, positive);
        let expected = match run_program(&oracle, &env, false) {
            Ok(out) => out.returns,
            Err(InterpError::Tensor(TensorError::Domain { .. })) => {
                report.skipped += 1;
                continue;
            }
            Err(e) => {
                report.pass = false;
                report.failures.push(format!("trial {trial}: original program failed: {e}"));
                continue;
            }
        };
        let got = match run_program(&oracle_optimized, &env, false) {
            Ok(out) => out.returns,
            Err(e) => {
                report.pass = false;
                report.failures.push(format!("trial {trial}: optimized program failed: {e}"));
                continue;
            }
        };
        report.compared += 1;
        for (k, (g, e)) in got.iter().zip(&expected).enumerate() {
            let (abs, rel) = deviation(g, e);
            report.max_abs_deviation = report.max_abs_deviation.max(abs);
            report.max_rel_deviation = report.max_rel_deviation.max(rel);
            if !g.all_close(e, REL_TOL, ABS_TOL) {
                report.pass = false;
                report.failures.push(format!(
                    "trial {trial}: return {k} differs (abs {abs:e}, rel {rel:e})"
                ));
            }
        }
        if capped {
            let full_out = run_program(&optimized, &env, false).map_err(VerifyError::Optimized)?;
            if full_out.returns.len() != p.returns.len() {
                report.pass = false;
                report.failures.push(format!("trial {trial}: wrong number of returns"));
            }
            let scope = pre_loop_scope(&oracle, &env).map_err(VerifyError::Optimized)?;
            let mut worst = report.closed_form_check.unwrap_or(0.0);
            for tev in oracle_analysis.per_variable.values() {
                let Ok(cf) = closed_form_at(tev, oracle_trip) else {
                    continue;
                };
                let (Ok(closed), Ok(stepped)) = (cf.eval(&scope), eval_step(tev, oracle_trip, &scope)) else {
                    continue;
                };
                let (_, rel) = deviation(&closed, &stepped);
                worst = worst.max(rel);
                if !closed.all_close(&stepped, REL_TOL, ABS_TOL) {
                    report.pass = false;
                    report.failures.push(format!(
                        "trial {trial}: closed form of `{tev}` disagrees with stepping at {oracle_trip}"
                    ));
                }
            }
            report.closed_form_check = Some(worst);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_program;

    const ROW_SUM: &str = include_str!("../programs/row_sum.tev");
    const GEOMETRIC: &str = include_str!("../programs/geometric.tev");

    #[test]
    fn row_sum_passes() {
        let p = parse_program(ROW_SUM).unwrap();
        let r = verify_program(&p, &VerifyOptions { trials: 20, ..Default::default() }).unwrap();
        assert!(r.pass, "{r:?}");
        assert_eq!(r.compared, 20);
        assert_eq!(r.max_abs_deviation, 0.0);
    }

    #[test]
    fn geometric_uses_positive_inputs() {
        let p = parse_program(GEOMETRIC).unwrap();
        let r = verify_program(&p, &VerifyOptions { trials: 20, ..Default::default() }).unwrap();
        assert!(r.pass, "{r:?}");
        assert_eq!(r.skipped, 0);
    }

    #[test]
    fn zero_trials_is_vacuous() {
        let p = parse_program(ROW_SUM).unwrap();
        let r = verify_program(&p, &VerifyOptions { trials: 0, ..Default::default() }).unwrap();
        assert!(r.pass);
        assert_eq!(r.warnings.len(), 1);
    }

    #[test]
    fn reproducible() {
        let p = parse_program(GEOMETRIC).unwrap();
        let opts = VerifyOptions { trials: 5, seed: 7, trip_count: None };
        assert_eq!(verify_program(&p, &opts).unwrap(), verify_program(&p, &opts).unwrap());
    }
}
