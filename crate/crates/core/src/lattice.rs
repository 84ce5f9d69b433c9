//! Backward-induction pricing of a deterministic cash-flow schedule under
//! counterparty default risk.
//!
//! The risky value recursion works backwards through the payment dates. At
//! each stage the sign of the forthcoming value (imminent cash flow plus
//! continuation) decides which credit adjustment applies, because the party
//! that suffers a loss on default is the one the deal currently favours.
//! Continuous default timing refines each period into small steps and
//! composes risk-adjusted rates; discrete timing multiplies one-period
//! settlement factors at the payment dates only.
//!
//! [`enumerate_default_states`] is an independent check of the discrete
//! model: it expands the full tree of per-period default states (two per
//! period when only the counterparty is risky, four when both parties are)
//! and sums probability-weighted discounted settlement payoffs directly.

use crate::curves::{CurveError, CurveKind, TermStructure};
use crate::joint_default::{
    bilateral_step_spreads, dtm_settlement_factors, DefaultModelError, JointDefaultLaw,
    RecoveryProfile,
};
use crate::risky_discount::{
    bilateral_ctm_rate, bilateral_dtm_factor, unilateral_ctm_rate, unilateral_dtm_factor,
    CreditSide, DefaultTiming, ModelRegime, SignState,
};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LatticeError {
    #[error(transparent)]
    Curve(#[from] CurveError),
    #[error(transparent)]
    Model(#[from] DefaultModelError),
    #[error("schedule has no payments")]
    EmptySchedule,
    #[error("payment times must be positive and strictly increasing (payment {index} at {time})")]
    BadPaymentTime { index: usize, time: f64 },
    #[error("payment amount {index} is not finite")]
    NonFiniteAmount { index: usize },
    #[error("{times} payment times but {amounts} amounts")]
    AmountCountMismatch { times: usize, amounts: usize },
    #[error("grid step must be positive and finite, got {0}")]
    BadStep(f64),
    #[error("grid has {steps} period step counts for {periods} periods")]
    MisalignedGrid { periods: usize, steps: usize },
    #[error("state enumeration supports at most {max} payments, got {count}")]
    TooManyPayments { count: usize, max: usize },
    #[error("bilateral pricing needs a hazard curve for party A")]
    MissingHazardA,
    #[error("{role} curve has kind {actual:?}")]
    WrongCurveKind {
        role: &'static str,
        actual: CurveKind,
    },
}

/// Payments the investor receives (positive) or pays (negative) at fixed
/// future times.
#[derive(Debug, Clone, PartialEq)]
pub struct CashflowSchedule {
    times: Vec<f64>,
    amounts: Vec<f64>,
}

impl CashflowSchedule {
    pub fn new(times: Vec<f64>, amounts: Vec<f64>) -> Result<Self, LatticeError> {
        if times.is_empty() {
            return Err(LatticeError::EmptySchedule);
        }
        if times.len() != amounts.len() {
            return Err(LatticeError::AmountCountMismatch {
                times: times.len(),
                amounts: amounts.len(),
            });
        }
        let mut prev = 0.0;
        for (i, &t) in times.iter().enumerate() {
            if !t.is_finite() || t <= prev {
                return Err(LatticeError::BadPaymentTime { index: i, time: t });
            }
            prev = t;
        }
        for (i, &a) in amounts.iter().enumerate() {
            if !a.is_finite() {
                return Err(LatticeError::NonFiniteAmount { index: i });
            }
        }
        Ok(Self { times, amounts })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn amounts(&self) -> &[f64] {
        &self.amounts
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn last_time(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Same dates, negated amounts.
    pub fn negated(&self) -> Self {
        Self {
            times: self.times.clone(),
            amounts: self.amounts.iter().map(|a| -a).collect(),
        }
    }
}

/// Step layout for continuous-timing induction: each period between
/// consecutive payment dates (starting from the valuation date) is cut into
/// equal steps no wider than the requested step, so payment dates always sit
/// exactly on grid nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct PricingGrid {
    step: f64,
    steps_per_period: Vec<usize>,
}

impl PricingGrid {
    pub fn with_step(schedule: &CashflowSchedule, step: f64) -> Result<Self, LatticeError> {
        if !step.is_finite() || step <= 0.0 {
            return Err(LatticeError::BadStep(step));
        }
        let mut steps_per_period = Vec::with_capacity(schedule.len());
        let mut prev = 0.0;
        for &t in schedule.times() {
            let n = ((t - prev) / step - 1e-9).ceil().max(1.0) as usize;
            steps_per_period.push(n);
            prev = t;
        }
        Ok(Self {
            step,
            steps_per_period,
        })
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn steps_per_period(&self) -> &[usize] {
        &self.steps_per_period
    }

    pub fn total_steps(&self) -> usize {
        self.steps_per_period.iter().sum()
    }
}

/// Deterministic market data for lattice pricing. `hazard_a` is only read in
/// the bilateral regime.
#[derive(Debug, Clone, Copy)]
pub struct MarketCurves<'a> {
    pub discount: &'a TermStructure,
    pub hazard_b: &'a TermStructure,
    pub hazard_a: Option<&'a TermStructure>,
}

impl<'a> MarketCurves<'a> {
    fn validate(&self, side: CreditSide) -> Result<(), LatticeError> {
        if self.discount.kind() != CurveKind::Interest {
            return Err(LatticeError::WrongCurveKind {
                role: "discount",
                actual: self.discount.kind(),
            });
        }
        if self.hazard_b.kind() != CurveKind::Hazard {
            return Err(LatticeError::WrongCurveKind {
                role: "hazard_b",
                actual: self.hazard_b.kind(),
            });
        }
        if side == CreditSide::Bilateral {
            let h_a = self.hazard_a.ok_or(LatticeError::MissingHazardA)?;
            if h_a.kind() != CurveKind::Hazard {
                return Err(LatticeError::WrongCurveKind {
                    role: "hazard_a",
                    actual: h_a.kind(),
                });
            }
        }
        Ok(())
    }
}

/// Risk-free value, risky value, and their difference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValuationResult {
    pub risk_free: f64,
    pub risky: f64,
    pub cva: f64,
}

/// Credit value adjustment as the gap between default-free and defaultable
/// values.
pub fn cva_from(risk_free: f64, risky: f64) -> f64 {
    risk_free - risky
}

/// Present value of the schedule off the discount curve alone.
pub fn price_risk_free(
    schedule: &CashflowSchedule,
    discount: &TermStructure,
) -> Result<f64, LatticeError> {
    if discount.kind() != CurveKind::Interest {
        return Err(LatticeError::WrongCurveKind {
            role: "discount",
            actual: discount.kind(),
        });
    }
    let mut value = 0.0;
    for (&t, &x) in schedule.times().iter().zip(schedule.amounts()) {
        value += discount.discount_factor(0.0, t)? * x;
    }
    Ok(value)
}

/// Backward-induction risky value of the schedule under the chosen regime.
///
/// The result's `risk_free` leg is rolled back through the same recursion
/// shape as the risky leg (rather than summed directly), so that the two are
/// floating-point identical whenever no credit adjustment applies; it agrees
/// with [`price_risk_free`] to rounding. The grid is only consulted for
/// continuous timing.
pub fn price_risky(
    schedule: &CashflowSchedule,
    regime: ModelRegime,
    curves: &MarketCurves,
    recoveries: &RecoveryProfile,
    rho: f64,
    grid: &PricingGrid,
) -> Result<ValuationResult, LatticeError> {
    curves.validate(regime.side)?;
    let (risky, risk_free) = match regime.timing {
        DefaultTiming::Ctm => ctm_rollback(schedule, regime.side, curves, recoveries, rho, grid)?,
        DefaultTiming::Dtm => dtm_rollback(schedule, regime.side, curves, recoveries, rho)?,
    };
    Ok(ValuationResult {
        risk_free,
        risky,
        cva: risk_free - risky,
    })
}

fn ctm_rollback(
    schedule: &CashflowSchedule,
    side: CreditSide,
    curves: &MarketCurves,
    recoveries: &RecoveryProfile,
    rho: f64,
    grid: &PricingGrid,
) -> Result<(f64, f64), LatticeError> {
    let m = schedule.len();
    if grid.steps_per_period().len() != m {
        return Err(LatticeError::MisalignedGrid {
            periods: m,
            steps: grid.steps_per_period().len(),
        });
    }
    let mut vd = 0.0;
    let mut vf = 0.0;
    for i in (0..m).rev() {
        vd += schedule.amounts()[i];
        vf += schedule.amounts()[i];
        let left = if i == 0 { 0.0 } else { schedule.times()[i - 1] };
        let right = schedule.times()[i];
        let n = grid.steps_per_period()[i];
        let delta = (right - left) / n as f64;
        for k in (0..n).rev() {
            let u = left + k as f64 * delta;
            let r = curves.discount.rate_at(u)?;
            // The sign test reads the value at the step's right node, which
            // at a payment date includes the payment.
            let sign = SignState::of(vd);
            let rate = match side {
                CreditSide::UnilateralB => {
                    let h_b = curves.hazard_b.rate_at(u)?;
                    unilateral_ctm_rate(r, h_b, recoveries.phi_b(), sign)
                }
                CreditSide::Bilateral => {
                    let h_a = curves.hazard_a.unwrap().rate_at(u)?;
                    let h_b = curves.hazard_b.rate_at(u)?;
                    let spreads = bilateral_step_spreads(h_a, h_b, recoveries, rho, delta)?;
                    bilateral_ctm_rate(r, spreads, sign)
                }
            };
            vd *= (-rate * delta).exp();
            vf *= (-r * delta).exp();
        }
    }
    Ok((vd, vf))
}

fn dtm_rollback(
    schedule: &CashflowSchedule,
    side: CreditSide,
    curves: &MarketCurves,
    recoveries: &RecoveryProfile,
    rho: f64,
) -> Result<(f64, f64), LatticeError> {
    let m = schedule.len();
    let mut vd = 0.0;
    let mut vf = 0.0;
    for j in (0..m).rev() {
        let left = if j == 0 { 0.0 } else { schedule.times()[j - 1] };
        let right = schedule.times()[j];
        let d = curves.discount.discount_factor(left, right)?;
        let inclusive = schedule.amounts()[j] + vd;
        let sign = SignState::of(inclusive);
        let factor = match side {
            CreditSide::UnilateralB => {
                let q_b = curves.hazard_b.default_probability(left, right)?;
                unilateral_dtm_factor(d, q_b, recoveries.phi_b(), sign)
            }
            CreditSide::Bilateral => {
                let s_b = curves.hazard_b.survival_probability(left, right)?;
                let h_a = curves.hazard_a.unwrap();
                let s_a = h_a.survival_probability(left, right)?;
                let factors =
                    dtm_settlement_factors(s_a, 1.0 - s_a, s_b, 1.0 - s_b, recoveries, rho)?;
                bilateral_dtm_factor(d, factors, sign)
            }
        };
        vd = factor * inclusive;
        vf = d * (schedule.amounts()[j] + vf);
    }
    Ok((vd, vf))
}

/// Most payments the state enumeration will expand.
pub const MAX_ENUM_PAYMENTS: usize = 6;

/// Price the schedule under discrete default timing by exhaustively expanding
/// the per-period default states and summing probability-weighted discounted
/// payoffs.
///
/// This is deliberately a different algorithm from [`price_risky`]: scenarios
/// are walked forward (survive and collect, or default and settle a recovery
/// fraction of the close-out amount), with the close-out continuation value
/// at each date computed by the same expansion started there. Settlement
/// weights follow each party's own recovery pair on its own side, which is
/// the [`crate::joint_default::CrossTermRecoveries::OwnParty`] convention.
pub fn enumerate_default_states(
    schedule: &CashflowSchedule,
    side: CreditSide,
    curves: &MarketCurves,
    recoveries: &RecoveryProfile,
    rho: f64,
) -> Result<f64, LatticeError> {
    let m = schedule.len();
    if m > MAX_ENUM_PAYMENTS {
        return Err(LatticeError::TooManyPayments {
            count: m,
            max: MAX_ENUM_PAYMENTS,
        });
    }
    curves.validate(side)?;

    // Per-interval discounts and default laws, interval j = (T_j, T_{j+1})
    // with T_0 the valuation date.
    let mut discounts = Vec::with_capacity(m);
    let mut laws = Vec::with_capacity(m);
    let mut prev = 0.0;
    for &t in schedule.times() {
        discounts.push(curves.discount.discount_factor(prev, t)?);
        let q_b = curves.hazard_b.default_probability(prev, t)?;
        let q_a = match side {
            CreditSide::UnilateralB => 0.0,
            CreditSide::Bilateral => curves.hazard_a.unwrap().default_probability(prev, t)?,
        };
        laws.push(JointDefaultLaw::new(q_a, q_b, rho)?);
        prev = t;
    }

    let enumerator = Enumerator {
        amounts: schedule.amounts(),
        discounts: &discounts,
        laws: &laws,
        recoveries,
        side,
    };
    // Continuation values by date, filled from the last payment backwards;
    // continuation[k] is the value at T_k of everything after T_k.
    let mut continuation = vec![0.0; m + 1];
    for k in (0..m).rev() {
        continuation[k] = enumerator.expand_from(k, &continuation);
    }
    Ok(continuation[0])
}

struct Enumerator<'a> {
    amounts: &'a [f64],
    discounts: &'a [f64],
    laws: &'a [JointDefaultLaw],
    recoveries: &'a RecoveryProfile,
    side: CreditSide,
}

impl Enumerator<'_> {
    fn expand_from(&self, k: usize, continuation: &[f64]) -> f64 {
        let mut total = 0.0;
        self.expand(k, 1.0, 1.0, 0.0, continuation, &mut total);
        total
    }

    /// Alive at date index `j` with accumulated scenario probability `p`,
    /// discount `disc` back to the expansion start, and already-collected
    /// discounted flows `acc`.
    fn expand(&self, j: usize, p: f64, disc: f64, acc: f64, continuation: &[f64], total: &mut f64) {
        let m = self.amounts.len();
        let d = disc * self.discounts[j];
        let x = self.amounts[j];
        let closeout = x + continuation[j + 1];
        let law = &self.laws[j];
        let rec = self.recoveries;
        match self.side {
            CreditSide::UnilateralB => {
                // Two states: B defaults (settle) or survives (collect).
                let w = if closeout >= 0.0 { rec.phi_b() } else { 1.0 };
                *total += p * law.q_b * (acc + d * w * closeout);
                let survive = p * law.p00;
                if j + 1 == m {
                    *total += survive * (acc + d * x);
                } else {
                    self.expand(j + 1, survive, d, acc + d * x, continuation, total);
                }
            }
            CreditSide::Bilateral => {
                // Four states; the defaulting party (or both) settles a
                // recovery fraction of the close-out amount.
                let (w_b_alone, w_a_alone, w_both) = if closeout >= 0.0 {
                    (rec.phi_b(), rec.phibar_b(), rec.phi_ab())
                } else {
                    (rec.phibar_a(), rec.phi_a(), rec.phi_ab())
                };
                *total += p * law.p01 * (acc + d * w_b_alone * closeout);
                *total += p * law.p10 * (acc + d * w_a_alone * closeout);
                *total += p * law.p11 * (acc + d * w_both * closeout);
                let survive = p * law.p00;
                if j + 1 == m {
                    *total += survive * (acc + d * x);
                } else {
                    self.expand(j + 1, survive, d, acc + d * x, continuation, total);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn flat(kind: CurveKind, rate: f64) -> TermStructure {
        TermStructure::flat(kind, rate, 40.0).unwrap()
    }

    fn unilateral_curves<'a>(
        discount: &'a TermStructure,
        hazard_b: &'a TermStructure,
    ) -> MarketCurves<'a> {
        MarketCurves {
            discount,
            hazard_b,
            hazard_a: None,
        }
    }

    #[test]
    fn risk_free_single_payment() {
        let d = flat(CurveKind::Interest, 0.03);
        let s = CashflowSchedule::new(vec![1.0], vec![100.0]).unwrap();
        assert_relative_eq!(
            price_risk_free(&s, &d).unwrap(),
            100.0 * (-0.03f64).exp(),
            max_relative = 1e-15
        );
    }

    #[test]
    fn unilateral_ctm_single_payment_matches_closed_form() {
        let d = flat(CurveKind::Interest, 0.02);
        let h = flat(CurveKind::Hazard, 0.05);
        let rec = RecoveryProfile::new(0.0, 0.40, 1.0, 1.0, 0.0).unwrap();
        let s = CashflowSchedule::new(vec![2.0], vec![1.0]).unwrap();
        let grid = PricingGrid::with_step(&s, 1.0 / 64.0).unwrap();
        let regime = ModelRegime::new(CreditSide::UnilateralB, DefaultTiming::Ctm);
        let v = price_risky(&s, regime, &unilateral_curves(&d, &h), &rec, 0.0, &grid).unwrap();
        let expect = (-(0.02 + 0.05 * 0.60) * 2.0f64).exp();
        assert_relative_eq!(v.risky, expect, max_relative = 1e-12);
        assert_relative_eq!(v.risk_free, (-0.02f64 * 2.0).exp(), max_relative = 1e-12);
        assert_eq!(v.cva, v.risk_free - v.risky);
    }

    #[test]
    fn unilateral_dtm_single_payment_matches_closed_form() {
        let d = flat(CurveKind::Interest, 0.02);
        let h = flat(CurveKind::Hazard, 0.05);
        let rec = RecoveryProfile::new(0.0, 0.40, 1.0, 1.0, 0.0).unwrap();
        let s = CashflowSchedule::new(vec![2.0], vec![1.0]).unwrap();
        let grid = PricingGrid::with_step(&s, 0.25).unwrap();
        let regime = ModelRegime::new(CreditSide::UnilateralB, DefaultTiming::Dtm);
        let v = price_risky(&s, regime, &unilateral_curves(&d, &h), &rec, 0.0, &grid).unwrap();
        let df = (-0.02f64 * 2.0).exp();
        let q = 1.0 - (-0.05f64 * 2.0).exp();
        assert_relative_eq!(v.risky, df * (1.0 - q * 0.60), max_relative = 1e-14);
    }

    #[test]
    fn liability_only_schedule_has_no_unilateral_adjustment() {
        let d = flat(CurveKind::Interest, 0.03);
        let h = flat(CurveKind::Hazard, 0.08);
        let rec = RecoveryProfile::new(0.0, 0.40, 1.0, 1.0, 0.0).unwrap();
        let s = CashflowSchedule::new(vec![0.5, 1.5, 2.5], vec![-1.0, -2.0, -0.5]).unwrap();
        let grid = PricingGrid::with_step(&s, 1.0 / 32.0).unwrap();
        for timing in [DefaultTiming::Ctm, DefaultTiming::Dtm] {
            let v = price_risky(
                &s,
                ModelRegime::new(CreditSide::UnilateralB, timing),
                &unilateral_curves(&d, &h),
                &rec,
                0.0,
                &grid,
            )
            .unwrap();
            assert_eq!(v.risky, v.risk_free);
            assert_eq!(v.cva, 0.0);
        }
    }

    #[test]
    fn rolled_risk_free_agrees_with_direct_sum() {
        let d = TermStructure::new(
            CurveKind::Interest,
            vec![0.0, 1.0, 4.0, 40.0],
            vec![0.01, 0.025, 0.03],
        )
        .unwrap();
        let h = flat(CurveKind::Hazard, 0.02);
        let rec = RecoveryProfile::new(0.0, 0.40, 1.0, 1.0, 0.0).unwrap();
        let s =
            CashflowSchedule::new(vec![0.5, 1.7, 2.9, 6.0], vec![3.0, -1.0, 2.0, -4.0]).unwrap();
        let grid = PricingGrid::with_step(&s, 1.0 / 12.0).unwrap();
        let v = price_risky(
            &s,
            ModelRegime::new(CreditSide::UnilateralB, DefaultTiming::Dtm),
            &unilateral_curves(&d, &h),
            &rec,
            0.0,
            &grid,
        )
        .unwrap();
        let direct = price_risk_free(&s, &d).unwrap();
        assert_relative_eq!(v.risk_free, direct, max_relative = 1e-13);
    }

    #[test]
    fn bilateral_with_riskless_investor_and_two_way_equals_unilateral() {
        let d = flat(CurveKind::Interest, 0.02);
        let h_b = flat(CurveKind::Hazard, 0.04);
        let h_a = flat(CurveKind::Hazard, 0.0);
        // phibar_a = 1 is the two-way clause that kills the liability-side
        // adjustment once the investor cannot default.
        let rec = RecoveryProfile::new(0.35, 0.45, 1.0, 0.7, 0.2).unwrap();
        let s =
            CashflowSchedule::new(vec![0.5, 1.0, 1.5, 2.0], vec![1.0, -0.4, 2.0, -0.7]).unwrap();
        let grid = PricingGrid::with_step(&s, 1.0 / 24.0).unwrap();
        let bi = MarketCurves {
            discount: &d,
            hazard_b: &h_b,
            hazard_a: Some(&h_a),
        };
        let uni = unilateral_curves(&d, &h_b);
        for timing in [DefaultTiming::Ctm, DefaultTiming::Dtm] {
            let v_bi = price_risky(
                &s,
                ModelRegime::new(CreditSide::Bilateral, timing),
                &bi,
                &rec,
                0.55,
                &grid,
            )
            .unwrap();
            let v_uni = price_risky(
                &s,
                ModelRegime::new(CreditSide::UnilateralB, timing),
                &uni,
                &rec,
                0.0,
                &grid,
            )
            .unwrap();
            assert_relative_eq!(v_bi.risky, v_uni.risky, max_relative = 1e-14);
        }
    }

    #[test]
    fn enumeration_oracle_matches_dtm_rollback() {
        let d = TermStructure::new(CurveKind::Interest, vec![0.0, 1.0, 40.0], vec![0.02, 0.03])
            .unwrap();
        let h_b = flat(CurveKind::Hazard, 0.06);
        let h_a =
            TermStructure::new(CurveKind::Hazard, vec![0.0, 2.0, 40.0], vec![0.01, 0.02]).unwrap();
        let rec = RecoveryProfile::new(0.35, 0.40, 0.25, 0.55, 0.15).unwrap();
        let s = CashflowSchedule::new(vec![0.5, 1.2, 2.0, 3.1], vec![1.0, -2.5, 1.7, 0.9]).unwrap();
        let grid = PricingGrid::with_step(&s, 0.5).unwrap();
        let curves = MarketCurves {
            discount: &d,
            hazard_b: &h_b,
            hazard_a: Some(&h_a),
        };
        for (side, rho) in [
            (CreditSide::UnilateralB, 0.0),
            (CreditSide::Bilateral, 0.0),
            (CreditSide::Bilateral, 0.4),
        ] {
            let v = price_risky(
                &s,
                ModelRegime::new(side, DefaultTiming::Dtm),
                &curves,
                &rec,
                rho,
                &grid,
            )
            .unwrap();
            let oracle = enumerate_default_states(&s, side, &curves, &rec, rho).unwrap();
            assert!(
                (v.risky - oracle).abs() <= 1e-12,
                "{side:?} rho={rho}: {} vs {}",
                v.risky,
                oracle
            );
        }
    }

    #[test]
    fn bilateral_mirror_antisymmetry() {
        // Negating the schedule and swapping the parties' roles negates the
        // risky value, when each side's settlement uses its own recoveries.
        let d = flat(CurveKind::Interest, 0.025);
        let h_b = flat(CurveKind::Hazard, 0.05);
        let h_a = flat(CurveKind::Hazard, 0.012);
        let rec = RecoveryProfile::new(0.31, 0.47, 0.2, 0.8, 0.12).unwrap();
        let swapped = RecoveryProfile::new(0.47, 0.31, 0.8, 0.2, 0.12).unwrap();
        let s = CashflowSchedule::new(vec![0.7, 1.3, 2.2], vec![1.4, -2.0, 0.8]).unwrap();
        let grid = PricingGrid::with_step(&s, 1.0 / 16.0).unwrap();
        let fwd = MarketCurves {
            discount: &d,
            hazard_b: &h_b,
            hazard_a: Some(&h_a),
        };
        let rev = MarketCurves {
            discount: &d,
            hazard_b: &h_a,
            hazard_a: Some(&h_b),
        };
        let neg = s.negated();
        for timing in [DefaultTiming::Ctm, DefaultTiming::Dtm] {
            let regime = ModelRegime::new(CreditSide::Bilateral, timing);
            let v = price_risky(&s, regime, &fwd, &rec, 0.3, &grid).unwrap();
            let mirrored = price_risky(&neg, regime, &rev, &swapped, 0.3, &grid).unwrap();
            assert!(
                (v.risky + mirrored.risky).abs() <= 1e-12,
                "{timing:?}: {} vs {}",
                v.risky,
                mirrored.risky
            );
        }
    }

    #[test]
    fn ctm_bilateral_converges_first_order_to_the_limit_spread() {
        let d = flat(CurveKind::Interest, 0.02);
        let h_b = flat(CurveKind::Hazard, 0.04);
        let h_a = flat(CurveKind::Hazard, 0.02);
        let rec = RecoveryProfile::new(0.35, 0.40, 0.6, 0.7, 0.2).unwrap();
        let rho = 0.6;
        let s = CashflowSchedule::new(vec![1.0], vec![1.0]).unwrap();
        let curves = MarketCurves {
            discount: &d,
            hazard_b: &h_b,
            hazard_a: Some(&h_a),
        };
        // dt -> 0 limit of the per-step spread gives the closed-form value.
        let (_, p_b) = bilateral_step_spreads(0.02, 0.04, &rec, rho, 0.0).unwrap();
        let limit = (-(0.02 + p_b)).exp();
        let regime = ModelRegime::new(CreditSide::Bilateral, DefaultTiming::Ctm);
        let mut errors = Vec::new();
        for k in [6, 7, 8, 9] {
            let grid = PricingGrid::with_step(&s, 2.0f64.powi(-k)).unwrap();
            let v = price_risky(&s, regime, &curves, &rec, rho, &grid).unwrap();
            errors.push((v.risky - limit).abs());
        }
        for pair in errors.windows(2) {
            let ratio = pair[0] / pair[1];
            assert!(
                (1.7..=2.3).contains(&ratio),
                "halving ratio {ratio} out of band: {errors:?}"
            );
        }
    }

    #[test]
    fn enumeration_rejects_long_schedules() {
        let d = flat(CurveKind::Interest, 0.02);
        let h = flat(CurveKind::Hazard, 0.02);
        let times: Vec<f64> = (1..=7).map(|i| i as f64 * 0.5).collect();
        let amounts = vec![1.0; 7];
        let s = CashflowSchedule::new(times, amounts).unwrap();
        let rec = RecoveryProfile::new(0.0, 0.4, 1.0, 1.0, 0.0).unwrap();
        assert!(matches!(
            enumerate_default_states(
                &s,
                CreditSide::UnilateralB,
                &unilateral_curves(&d, &h),
                &rec,
                0.0
            ),
            Err(LatticeError::TooManyPayments { count: 7, max: 6 })
        ));
    }

    #[test]
    fn schedule_and_grid_validation() {
        assert!(matches!(
            CashflowSchedule::new(vec![], vec![]),
            Err(LatticeError::EmptySchedule)
        ));
        assert!(matches!(
            CashflowSchedule::new(vec![0.0], vec![1.0]),
            Err(LatticeError::BadPaymentTime { index: 0, .. })
        ));
        assert!(matches!(
            CashflowSchedule::new(vec![1.0, 1.0], vec![1.0, 1.0]),
            Err(LatticeError::BadPaymentTime { index: 1, .. })
        ));
        assert!(matches!(
            CashflowSchedule::new(vec![1.0], vec![1.0, 2.0]),
            Err(LatticeError::AmountCountMismatch { .. })
        ));
        let s = CashflowSchedule::new(vec![1.0], vec![1.0]).unwrap();
        assert!(matches!(
            PricingGrid::with_step(&s, 0.0),
            Err(LatticeError::BadStep(_))
        ));
        let grid = PricingGrid::with_step(&s, 0.3).unwrap();
        assert_eq!(grid.steps_per_period(), &[4]);
    }

    #[test]
    fn bilateral_without_hazard_a_is_rejected() {
        let d = flat(CurveKind::Interest, 0.02);
        let h = flat(CurveKind::Hazard, 0.02);
        let s = CashflowSchedule::new(vec![1.0], vec![1.0]).unwrap();
        let grid = PricingGrid::with_step(&s, 0.5).unwrap();
        let rec = RecoveryProfile::new(0.4, 0.4, 1.0, 1.0, 0.2).unwrap();
        let out = price_risky(
            &s,
            ModelRegime::new(CreditSide::Bilateral, DefaultTiming::Dtm),
            &unilateral_curves(&d, &h),
            &rec,
            0.0,
            &grid,
        );
        assert!(matches!(out, Err(LatticeError::MissingHazardA)));
    }

    #[test]
    fn nonnegative_schedule_orders_risky_below_risk_free() {
        let d = flat(CurveKind::Interest, 0.02);
        let h = flat(CurveKind::Hazard, 0.03);
        let rec = RecoveryProfile::new(0.0, 0.35, 1.0, 1.0, 0.0).unwrap();
        let s = CashflowSchedule::new(vec![0.5, 1.0, 1.5], vec![0.02, 0.02, 1.02]).unwrap();
        let grid = PricingGrid::with_step(&s, 1.0 / 52.0).unwrap();
        for timing in [DefaultTiming::Ctm, DefaultTiming::Dtm] {
            let v = price_risky(
                &s,
                ModelRegime::new(CreditSide::UnilateralB, timing),
                &unilateral_curves(&d, &h),
                &rec,
                0.0,
                &grid,
            )
            .unwrap();
            assert!(v.risky > 0.0 && v.risky < v.risk_free);
            assert!(v.cva > 0.0);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn oracle_agrees_on_random_unilateral_schedules(
            n in 1usize..4,
            raw_times in proptest::collection::vec(0.05f64..3.0, 4),
            raw_amounts in proptest::collection::vec(-2.0f64..2.0, 4),
            h in 0.0f64..0.2,
            r in -0.01f64..0.08,
            phi_b in 0.0f64..1.0,
        ) {
            let mut times: Vec<f64> = raw_times[..n].to_vec();
            times.sort_by(f64::total_cmp);
            let mut prev = 0.0;
            for t in &mut times {
                if *t <= prev + 1e-3 {
                    *t = prev + 1e-3;
                }
                prev = *t;
            }
            let schedule = CashflowSchedule::new(times, raw_amounts[..n].to_vec()).unwrap();
            let d = TermStructure::flat(CurveKind::Interest, r, 10.0).unwrap();
            let hb = TermStructure::flat(CurveKind::Hazard, h, 10.0).unwrap();
            let rec = RecoveryProfile::new(0.0, phi_b, 1.0, 1.0, 0.0).unwrap();
            let curves = MarketCurves { discount: &d, hazard_b: &hb, hazard_a: None };
            let grid = PricingGrid::with_step(&schedule, 0.5).unwrap();
            let v = price_risky(
                &schedule,
                ModelRegime::new(CreditSide::UnilateralB, DefaultTiming::Dtm),
                &curves,
                &rec,
                0.0,
                &grid,
            ).unwrap();
            let oracle = enumerate_default_states(
                &schedule, CreditSide::UnilateralB, &curves, &rec, 0.0,
            ).unwrap();
            prop_assert!((v.risky - oracle).abs() <= 1e-12);
        }
    }
}
