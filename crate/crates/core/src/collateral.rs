//! Threshold-based collateral calls and their conversion into reversing
//! cash flows.
//!
//! A margin call at the shadow time before each bucket date sizes the
//! collateral account from the portfolio value; the posted amount then rides
//! the collateral factor over the margin period, so it can drift away from
//! the exposure it was meant to cover. Changes in the account enter the
//! bucket flows with reversed sign: growing collateral absorbs cash,
//! shrinking collateral returns it.

use crate::scenario::{FactorRole, ScenarioCube};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CollateralError {
    #[error("threshold and minimum transfer amounts must be nonnegative, got {0}")]
    BadThreshold(f64),
    #[error("margin period must be nonnegative and finite, got {0}")]
    BadMarginPeriod(f64),
}

/// Two-sided margin terms. Effective trigger levels combine threshold and
/// minimum transfer amount: the counterparty posts above `h_b`, the valuing
/// party posts below `h_a`. An infinite component disables that side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginAgreement {
    threshold_b: f64,
    mta_b: f64,
    threshold_a: f64,
    mta_a: f64,
    margin_period: f64,
}

impl MarginAgreement {
    pub fn new(
        threshold_b: f64,
        mta_b: f64,
        threshold_a: f64,
        mta_a: f64,
        margin_period: f64,
    ) -> Result<Self, CollateralError> {
        for v in [threshold_b, mta_b, threshold_a, mta_a] {
            // +inf is a valid "disabled" marker, negatives are not
            if v.is_nan() || v < 0.0 {
                return Err(CollateralError::BadThreshold(v));
            }
        }
        if !margin_period.is_finite() || margin_period < 0.0 {
            return Err(CollateralError::BadMarginPeriod(margin_period));
        }
        Ok(Self {
            threshold_b,
            mta_b,
            threshold_a,
            mta_a,
            margin_period,
        })
    }

    /// Upper trigger: exposure above this is collateralized by the
    /// counterparty.
    pub fn h_b(&self) -> f64 {
        self.threshold_b + self.mta_b
    }

    /// Lower trigger (nonpositive): exposure below this is collateralized by
    /// the valuing party.
    pub fn h_a(&self) -> f64 {
        -(self.threshold_a + self.mta_a)
    }

    pub fn margin_period(&self) -> f64 {
        self.margin_period
    }

    /// Whether any side can ever trigger a call.
    pub fn is_active(&self) -> bool {
        self.h_b().is_finite() || self.h_a().is_finite()
    }
}

/// Collateral required against a portfolio value `v` at the call time: the
/// excess over the triggered threshold, zero inside the band. Positive means
/// the counterparty posts, negative means the valuing party posts.
pub fn required_collateral(v: f64, agreement: &MarginAgreement) -> f64 {
    let h_b = agreement.h_b();
    let h_a = agreement.h_a();
    if v >= h_b {
        v - h_b
    } else if v <= h_a {
        v - h_a
    } else {
        0.0
    }
}

/// Carry a posted collateral amount from the call node to the bucket node on
/// one path, scaling by the collateral factor's ratio. Without a collateral
/// factor the account is assumed static over the margin period.
pub fn evolve_collateral(
    gamma_at_call: f64,
    cube: &ScenarioCube,
    collateral_factor: Option<usize>,
    path: usize,
    call_node: usize,
    bucket_node: usize,
) -> f64 {
    match collateral_factor {
        Some(f) if call_node != bucket_node => {
            let at_call = cube.value(path, call_node, f);
            let at_bucket = cube.value(path, bucket_node, f);
            gamma_at_call * (at_bucket / at_call)
        }
        _ => gamma_at_call,
    }
}

/// Locate the cube's collateral factor, if any.
pub fn collateral_factor_of(cube: &ScenarioCube) -> Option<usize> {
    cube.factor_index(FactorRole::Collateral)
}

/// Reversing cash flows from a collateral account trajectory. `gammas[k]`
/// is the account level at bucket date k, starting from the empty account
/// `gammas[0] = 0`; the bucket-k flow is minus the change over the interval.
pub fn collateral_cashflows(gammas: &[f64]) -> Vec<f64> {
    gammas.windows(2).map(|w| -(w[1] - w[0])).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{simulate, CorrelationSpec, ProcessKind, ProcessSpec, TimeBucketGrid};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn agreement(h_b: f64, h_a_magnitude: f64) -> MarginAgreement {
        MarginAgreement::new(h_b, 0.0, h_a_magnitude, 0.0, 14.0 / 365.0).unwrap()
    }

    #[test]
    fn call_amount_branches() {
        let agr = agreement(5.0, 10.0);
        assert_eq!(required_collateral(7.0, &agr), 2.0);
        assert_eq!(required_collateral(5.0, &agr), 0.0);
        assert_eq!(required_collateral(3.0, &agr), 0.0);
        assert_eq!(required_collateral(-14.0, &agr), -4.0);
        assert_eq!(required_collateral(-10.0, &agr), 0.0);
        assert_eq!(required_collateral(0.0, &agr), 0.0);
    }

    #[test]
    fn composite_triggers_add_threshold_and_transfer_amount() {
        let agr = MarginAgreement::new(3.0, 2.0, 7.0, 3.0, 0.0).unwrap();
        assert_eq!(agr.h_b(), 5.0);
        assert_eq!(agr.h_a(), -10.0);
        assert!(agr.is_active());
    }

    #[test]
    fn infinite_components_disable_a_side() {
        let one_way = MarginAgreement::new(5.0, 0.0, f64::INFINITY, 0.0, 0.1).unwrap();
        assert_eq!(required_collateral(-1e18, &one_way), 0.0);
        assert_eq!(required_collateral(9.0, &one_way), 4.0);
        let off = MarginAgreement::new(f64::INFINITY, 0.0, f64::INFINITY, 0.0, 0.1).unwrap();
        assert!(!off.is_active());
        assert_eq!(required_collateral(1e18, &off), 0.0);
        assert_eq!(required_collateral(-1e18, &off), 0.0);
    }

    #[test]
    fn validation_rejects_negatives_and_nan() {
        assert!(MarginAgreement::new(-1.0, 0.0, 0.0, 0.0, 0.1).is_err());
        assert!(MarginAgreement::new(0.0, f64::NAN, 0.0, 0.0, 0.1).is_err());
        assert!(MarginAgreement::new(0.0, 0.0, 0.0, 0.0, -0.1).is_err());
        assert!(MarginAgreement::new(0.0, 0.0, 0.0, 0.0, f64::INFINITY).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]
        #[test]
        fn call_amount_is_continuous_with_unit_or_zero_slope(
            v in -30.0f64..30.0,
            h_b in 0.0f64..10.0,
            h_a in 0.0f64..10.0,
        ) {
            let agr = agreement(h_b, h_a);
            let f = required_collateral(v, &agr);
            // piecewise linear with kinks at the triggers
            let expect = if v >= agr.h_b() {
                v - agr.h_b()
            } else if v <= agr.h_a() {
                v - agr.h_a()
            } else {
                0.0
            };
            prop_assert_eq!(f, expect);
            let eps = 1e-9;
            let nearby = required_collateral(v + eps, &agr);
            prop_assert!((nearby - f).abs() <= eps + 1e-12);
        }
    }

    #[test]
    fn reversing_flows_are_first_differences() {
        assert_eq!(collateral_cashflows(&[0.0, 5.0, 2.0]), vec![-5.0, 3.0]);
        assert_eq!(collateral_cashflows(&[0.0, 0.0, 0.0]), vec![0.0, 0.0]);
        let gammas = [0.0, 1.5, -2.0, 4.0, 4.0];
        let flows = collateral_cashflows(&gammas);
        let total: f64 = flows.iter().sum();
        // flows net to minus the final account level
        assert_relative_eq!(total, -gammas[gammas.len() - 1], max_relative = 1e-15);
    }

    #[test]
    fn evolution_follows_the_collateral_factor_ratio() {
        let grid = TimeBucketGrid::from_horizon(0.5, 0.25)
            .unwrap()
            .with_margin_nodes(0.1)
            .unwrap();
        let mu = 0.08;
        let specs = [ProcessSpec {
            role: FactorRole::Collateral,
            kind: ProcessKind::GeometricBrownian {
                drift: mu,
                volatility: 0.0,
            },
            initial: 1.0,
        }];
        let cube = simulate(&specs, &CorrelationSpec::identity(1), &grid, 1, 4).unwrap();
        let factor = collateral_factor_of(&cube);
        assert_eq!(factor, Some(0));
        let call = grid.shadow_node(1).unwrap();
        let bucket = grid.bucket_node(1);
        let evolved = evolve_collateral(10.0, &cube, factor, 0, call, bucket);
        assert_relative_eq!(evolved, 10.0 * (mu * 0.1f64).exp(), max_relative = 1e-12);
        // no factor, or a zero-length period, leaves the amount alone
        assert_eq!(evolve_collateral(10.0, &cube, None, 0, call, bucket), 10.0);
        assert_eq!(evolve_collateral(10.0, &cube, factor, 0, call, call), 10.0);
    }
}
