//! Scalar chains of recurrences, generic over the number type.
//!
//! A chain `{c0, op1, c1, ..., opm, cm}` with constant operands is evaluated
//! under the classic convention: `f(0) = c0` and
//! `f(i) = f(i-1) op1 g(i-1)` where `g` is the chain `{c1, ..., cm}`.
//! The same convention drives the tensor algebra in [`crate::tev`]; a
//! rank-0 tensor chain behaves exactly like a `ScalarChain<f64>`.

use std::fmt;

use num_bigint::BigUint;
use num_traits::{FromPrimitive, Num, One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

/// Operator between two chain operands.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ChainOp {
    #[serde(rename = "+")]
    Add,
    #[serde(rename = "*")]
    Mul,
}

impl ChainOp {
    pub fn symbol(self) -> &'static str {
        match self {
            ChainOp::Add => "+",
            ChainOp::Mul => "*",
        }
    }

    pub fn apply<T: Num + Clone>(self, a: T, b: T) -> T {
        match self {
            ChainOp::Add => a + b,
            ChainOp::Mul => a * b,
        }
    }
}

impl fmt::Display for ChainOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum CrError {
    #[error("a chain needs one more operand than operators (got {operands} operands, {ops} operators)")]
    Malformed { operands: usize, ops: usize },
    #[error("closed form requires a chain with a single operator kind")]
    MixedOperatorChain,
    #[error("binomial coefficient C({n}, {k}) does not fit the number type")]
    CoefficientOverflow { n: u64, k: u64 },
}

/// Exact binomial coefficient `C(n, k)`.
pub fn binomial(n: u64, k: u64) -> BigUint {
    if k > n {
        return BigUint::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigUint::one();
    for j in 0..k {
        acc = acc * BigUint::from(n - j) / BigUint::from(j + 1);
    }
    acc
}

/// `C(n, k)` computed exactly, then rounded once to the nearest `f64`.
pub fn binomial_f64(n: u64, k: u64) -> f64 {
    binomial(n, k).to_f64().unwrap_or(f64::INFINITY)
}

/// Coefficients of the falling factorial `x (x-1) ... (x-j+1)` in the power
/// basis, lowest degree first (signed Stirling numbers of the first kind).
fn falling_factorial_coefficients(j: usize) -> Vec<i128> {
    let mut poly = vec![1i128];
    for m in 0..j as i128 {
        let mut next = vec![0i128; poly.len() + 1];
        for (p, &c) in poly.iter().enumerate() {
            next[p + 1] += c;
            next[p] -= m * c;
        }
        poly = next;
    }
    poly
}

/// A chain of recurrences over scalars.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarChain<T> {
    operands: Vec<T>,
    ops: Vec<ChainOp>,
}

impl<T: Num + Clone> ScalarChain<T> {
    pub fn new(operands: Vec<T>, ops: Vec<ChainOp>) -> Result<Self, CrError> {
        if operands.is_empty() || operands.len() != ops.len() + 1 {
            return Err(CrError::Malformed {
                operands: operands.len(),
                ops: ops.len(),
            });
        }
        Ok(ScalarChain { operands, ops })
    }

    /// `{c0, +, c1, +, ...}`.
    pub fn additive(operands: Vec<T>) -> Self {
        let ops = vec![ChainOp::Add; operands.len().saturating_sub(1)];
        Self::new(operands, ops).expect("operand list must be non-empty")
    }

    /// `{c0, *, c1, *, ...}`.
    pub fn multiplicative(operands: Vec<T>) -> Self {
        let ops = vec![ChainOp::Mul; operands.len().saturating_sub(1)];
        Self::new(operands, ops).expect("operand list must be non-empty")
    }

    pub fn operands(&self) -> &[T] {
        &self.operands
    }

    pub fn ops(&self) -> &[ChainOp] {
        &self.ops
    }

    pub fn depth(&self) -> usize {
        self.ops.len()
    }

    fn uniform_op(&self) -> Option<ChainOp> {
        match self.ops.first() {
            None => Some(ChainOp::Add),
            Some(&first) => self.ops.iter().all(|&op| op == first).then_some(first),
        }
    }

    /// Value at iteration `i` by running the recurrence `i` times.
    pub fn eval_step(&self, i: u64) -> T {
        let mut state = self.operands.clone();
        for _ in 0..i {
            for j in 0..self.ops.len() {
                let next = state[j + 1].clone();
                state[j] = self.ops[j].apply(state[j].clone(), next);
            }
        }
        state.swap_remove(0)
    }
}

impl<T: Num + Clone + FromPrimitive> ScalarChain<T> {
    fn coefficient(n: u64, k: u64) -> Result<T, CrError> {
        binomial(n, k)
            .to_u128()
            .and_then(T::from_u128)
            .ok_or(CrError::CoefficientOverflow { n, k })
    }

    /// Value at iteration `i` without iterating: `sum_j C(i, j) c_j` for
    /// additive chains and `prod_j c_j ^ C(i, j)` for multiplicative ones.
    pub fn closed_form(&self, i: u64) -> Result<T, CrError> {
        match self.uniform_op().ok_or(CrError::MixedOperatorChain)? {
            ChainOp::Add => {
                let mut acc = T::zero();
                for (j, c) in self.operands.iter().enumerate() {
                    if j as u64 > i {
                        break;
                    }
                    acc = acc + Self::coefficient(i, j as u64)? * c.clone();
                }
                Ok(acc)
            }
            ChainOp::Mul => {
                let mut acc = T::one();
                for (j, c) in self.operands.iter().enumerate() {
                    if j as u64 > i {
                        break;
                    }
                    let exponent = binomial(i, j as u64)
                        .to_usize()
                        .ok_or(CrError::CoefficientOverflow { n: i, k: j as u64 })?;
                    acc = acc * num_traits::pow(c.clone(), exponent);
                }
                Ok(acc)
            }
        }
    }

    /// Power-basis coefficients (lowest degree first) of the polynomial in `i`
    /// that an additive chain denotes. Exact for rational `T`.
    pub fn polynomial(&self) -> Result<Vec<T>, CrError> {
        if self.uniform_op() != Some(ChainOp::Add) {
            return Err(CrError::MixedOperatorChain);
        }
        let mut coeffs = vec![T::zero(); self.operands.len()];
        let mut factorial: u128 = 1;
        for (j, c) in self.operands.iter().enumerate() {
            if j > 0 {
                factorial *= j as u128;
            }
            let denom = T::from_u128(factorial).ok_or(CrError::CoefficientOverflow {
                n: j as u64,
                k: j as u64,
            })?;
            for (p, s) in falling_factorial_coefficients(j).into_iter().enumerate() {
                let s = T::from_i128(s).ok_or(CrError::CoefficientOverflow {
                    n: j as u64,
                    k: p as u64,
                })?;
                coeffs[p] = coeffs[p].clone() + s * c.clone() / denom.clone();
            }
        }
        Ok(coeffs)
    }
}

impl<T: fmt::Display> fmt::Display for ScalarChain<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{}", self.operands[0])?;
        for (op, c) in self.ops.iter().zip(&self.operands[1..]) {
            write!(f, ", {op}, {c}")?;
        }
        write!(f, "}}")
    }
}

/// Renders power-basis coefficients as a polynomial in `var`, highest degree first.
pub fn render_polynomial<T>(coeffs: &[T], var: &str) -> String
where
    T: Num + Clone + PartialOrd + fmt::Display + std::ops::Neg<Output = T>,
{
    let mut out = String::new();
    for (p, c) in coeffs.iter().enumerate().rev() {
        if c.is_zero() {
            continue;
        }
        let negative = *c < T::zero();
        let magnitude = if negative { -c.clone() } else { c.clone() };
        if out.is_empty() {
            if negative {
                out.push('-');
            }
        } else {
            out.push_str(if negative { " - " } else { " + " });
        }
        let term = match p {
            0 => magnitude.to_string(),
            1 => var.to_string(),
            _ => format!("{var}^{p}"),
        };
        if p > 0 && !magnitude.is_one() {
            out.push_str(&format!("{magnitude}*{term}"));
        } else {
            out.push_str(&term);
        }
    }
    if out.is_empty() {
        out.push('0');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Ratio;

    #[test]
    fn binomials() {
        assert_eq!(binomial(15, 2), BigUint::from(105u32));
        assert_eq!(binomial(5, 7), BigUint::zero());
        assert_eq!(binomial(0, 0), BigUint::one());
        assert_eq!(binomial_f64(1_000_000, 3), 166_666_166_667_000_000.0);
        // Pascal's rule across a range.
        for n in 1..30u64 {
            for k in 1..n {
                assert_eq!(binomial(n, k), binomial(n - 1, k - 1) + binomial(n - 1, k));
            }
        }
    }

    #[test]
    fn stepwise_matches_cubic() {
        let chain = ScalarChain::additive(vec![7i64, 6, 10, 6]);
        for i in 0..=20i64 {
            assert_eq!(chain.eval_step(i as u64), i * i * i + 2 * i * i + 3 * i + 7);
        }
        assert_eq!(chain.eval_step(5), 197);
    }

    #[test]
    fn closed_form_matches_stepwise() {
        let chain = ScalarChain::additive(vec![7i128, 6, 10, 6]);
        assert_eq!(chain.closed_form(3).unwrap(), 61);
        for i in 0..=20 {
            assert_eq!(chain.closed_form(i).unwrap(), chain.eval_step(i));
        }
        let geo = ScalarChain::multiplicative(vec![2i64, 3]);
        assert_eq!(geo.eval_step(2), 18);
        assert_eq!(geo.closed_form(2).unwrap(), 18);
        let geo2 = ScalarChain::multiplicative(vec![2i128, 3, 2]);
        for i in 0..8 {
            assert_eq!(geo2.closed_form(i).unwrap(), geo2.eval_step(i));
        }
    }

    #[test]
    fn mixed_chain_has_no_closed_form() {
        let chain = ScalarChain::new(vec![1i64, 2, 3], vec![ChainOp::Mul, ChainOp::Add]).unwrap();
        assert_eq!(chain.closed_form(3), Err(CrError::MixedOperatorChain));
        // {1, *, {2, +, 3}}: 1, 2, 2*5, 2*5*8
        assert_eq!(chain.eval_step(3), 80);
    }

    #[test]
    fn polynomial_of_cubic_chain() {
        let chain = ScalarChain::additive(
            [7, 6, 10, 6].iter().map(|&c| Ratio::from_integer(c as i128)).collect(),
        );
        let poly = chain.polynomial().unwrap();
        let expected: Vec<Ratio<i128>> = [7, 3, 2, 1].iter().map(|&c| Ratio::from_integer(c)).collect();
        assert_eq!(poly, expected);
        assert_eq!(render_polynomial(&poly, "i"), "i^3 + 2*i^2 + 3*i + 7");
    }

    #[test]
    fn polynomial_with_fractions() {
        // {0, +, 1, +, 1} is i(i+1)/2 ... shifted: sum_{j<i} (1 + j) = i(i+1)/2.
        let chain = ScalarChain::additive(vec![
            Ratio::from_integer(0i128),
            Ratio::from_integer(1),
            Ratio::from_integer(1),
        ]);
        let poly = chain.polynomial().unwrap();
        assert_eq!(poly, vec![Ratio::from_integer(0), Ratio::new(1, 2), Ratio::new(1, 2)]);
        assert_eq!(render_polynomial(&poly, "k"), "1/2*k^2 + 1/2*k");
    }

    #[test]
    fn malformed_chain() {
        assert!(ScalarChain::<i64>::new(vec![], vec![]).is_err());
        assert!(ScalarChain::new(vec![1i64, 2], vec![]).is_err());
    }
}
