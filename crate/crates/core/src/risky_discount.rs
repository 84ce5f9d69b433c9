//! Sign-dependent risky discounting.
//!
//! The value of a defaultable deal discounts at a rate that depends on whose
//! favour the deal is in. While the deal is an asset to the investor, the
//! counterparty's default risk widens the discount rate; while it is a
//! liability, either no adjustment applies (unilateral model) or the
//! investor's own default risk applies (bilateral model).
//!
//! Two timing conventions are supported and kept strictly separate:
//! continuous default timing composes *rates* over small steps, discrete
//! timing multiplies one-period settlement *factors* at payment dates.

/// Which parties carry default risk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CreditSide {
    /// Only the counterparty (party B) can default.
    UnilateralB,
    /// Both parties can default.
    Bilateral,
}

/// When default can settle the deal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DefaultTiming {
    /// Default at any instant; risky value composes per-step rates.
    Ctm,
    /// Default settled only at payment dates; risky value multiplies
    /// one-period factors.
    Dtm,
}

/// Full model selection for the lattice pricer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelRegime {
    pub side: CreditSide,
    pub timing: DefaultTiming,
}

impl ModelRegime {
    pub fn new(side: CreditSide, timing: DefaultTiming) -> Self {
        Self { side, timing }
    }
}

/// Sign of the value that controls which credit adjustment applies.
/// Zero counts as non-negative.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignState {
    Nonnegative,
    Negative,
}

impl SignState {
    pub fn of(value: f64) -> Self {
        if value >= 0.0 {
            SignState::Nonnegative
        } else {
            SignState::Negative
        }
    }
}

/// Instantaneous risky discount rate when only party B can default:
/// `r + h_b * (1 - phi_b)` on the asset side, plain `r` on the liability
/// side.
pub fn unilateral_ctm_rate(r: f64, h_b: f64, phi_b: f64, sign: SignState) -> f64 {
    match sign {
        SignState::Nonnegative => r + h_b * (1.0 - phi_b),
        SignState::Negative => r,
    }
}

/// One-period risky discount factor when only party B can default:
/// `D * (1 - q_b * (1 - phi_b))` on the asset side, plain `D` on the
/// liability side.
pub fn unilateral_dtm_factor(discount: f64, q_b: f64, phi_b: f64, sign: SignState) -> f64 {
    match sign {
        SignState::Nonnegative => discount * (1.0 - q_b * (1.0 - phi_b)),
        SignState::Negative => discount,
    }
}

/// Instantaneous risky discount rate with both parties risky; `spreads` is
/// `(p_a, p_b)` from [`crate::joint_default::bilateral_step_spreads`].
pub fn bilateral_ctm_rate(r: f64, spreads: (f64, f64), sign: SignState) -> f64 {
    match sign {
        SignState::Nonnegative => r + spreads.1,
        SignState::Negative => r + spreads.0,
    }
}

/// One-period risky discount factor with both parties risky; `factors` is
/// `(y_a, y_b)` from [`crate::joint_default::dtm_settlement_factors`].
pub fn bilateral_dtm_factor(discount: f64, factors: (f64, f64), sign: SignState) -> f64 {
    match sign {
        SignState::Nonnegative => discount * factors.1,
        SignState::Negative => discount * factors.0,
    }
}
