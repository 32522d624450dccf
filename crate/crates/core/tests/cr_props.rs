use num_rational::Ratio;
use proptest::prelude::*;

use tev::{ChainOp, ExactChain, RationalChain};

proptest! {
    #[test]
    fn additive_closed_form_matches_stepping(
        ops in prop::collection::vec(-20i128..=20, 1..6),
        i in 0u64..40,
    ) {
        let chain = ExactChain::additive(ops);
        prop_assert_eq!(chain.closed_form(i).unwrap(), chain.eval_step(i));
    }

    #[test]
    fn multiplicative_closed_form_matches_stepping(
        ops in prop::collection::vec(-3i128..=3, 1..4),
        i in 0u64..8,
    ) {
        let chain = ExactChain::multiplicative(ops);
        prop_assert_eq!(chain.closed_form(i).unwrap(), chain.eval_step(i));
    }

    #[test]
    fn polynomial_interpolates_chain(ops in prop::collection::vec(-9i128..=9, 1..6), i in 0u64..30) {
        let chain = RationalChain::additive(ops.into_iter().map(Ratio::from_integer).collect());
        let coeffs = chain.polynomial().unwrap();
        let x = Ratio::from_integer(i as i128);
        let value = coeffs.iter().rev().fold(Ratio::from_integer(0), |acc, c| acc * x + c);
        prop_assert_eq!(value, chain.eval_step(i));
    }

    #[test]
    fn mixed_chain_has_no_closed_form(a in -5i128..5, b in -5i128..5, c in -5i128..5) {
        let chain = ExactChain::new(vec![a, b, c], vec![ChainOp::Add, ChainOp::Mul]).unwrap();
        prop_assert!(chain.closed_form(3).is_err());
    }

    #[test]
    fn binomial_symmetry(n in 0u64..200, k in 0u64..200) {
        let k = k.min(n);
        prop_assert_eq!(tev::cr::binomial(n, k), tev::cr::binomial(n, n - k));
    }
}

#[test]
fn malformed_chain_is_rejected() {
    assert!(ExactChain::new(vec![1, 2], vec![]).is_err());
    assert!(ExactChain::new(vec![], vec![]).is_err());
}
