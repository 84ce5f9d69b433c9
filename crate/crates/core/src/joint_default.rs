//! Joint default behaviour of the two parties over one period.
//!
//! Party B is the counterparty, party A the investor doing the valuation.
//! Over a period each party either defaults or survives; the pair of
//! indicators follows a correlated Bernoulli law ([`JointDefaultLaw`]) whose
//! marginals are the per-period default probabilities and whose coupling is a
//! single correlation parameter. Settlement on default pays a recovery
//! fraction of the deal's market value; which fraction applies depends on who
//! defaulted and on the sign of the value ([`RecoveryProfile`]).

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DefaultModelError {
    #[error("recovery {field} must lie in [0,1], got {value}")]
    RecoveryOutOfRange { field: &'static str, value: f64 },
    #[error("default probability {name} must lie in [0,1], got {value}")]
    ProbabilityOutOfRange { name: &'static str, value: f64 },
    #[error("default-event correlation must lie in [-1,1], got {0}")]
    CorrelationOutOfRange(f64),
    #[error("correlation {rho} is infeasible for these marginals: cell {cell} would be {value}")]
    InfeasibleCorrelation {
        rho: f64,
        cell: &'static str,
        value: f64,
    },
    #[error("hazard rate must be non-negative and finite, got {0}")]
    BadHazard(f64),
    #[error("step too coarse: hazard {hazard} * dt {dt} exceeds 1")]
    StepTooCoarse { hazard: f64, dt: f64 },
    #[error("survival/default pair {name} = ({s}, {q}) is not a probability split")]
    BadSurvivalPair { name: &'static str, s: f64, q: f64 },
}

/// Which party's recovery pair weights the correlation cross term when the
/// deal value is negative to the investor.
///
/// The four-state settlement expansion produces each party's own recoveries
/// in its own branch, which is [`CrossTermRecoveries::OwnParty`]. The
/// alternative reuses party B's pair in both branches and is kept only for
/// comparison against conventions that state it that way.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CrossTermRecoveries {
    #[default]
    OwnParty,
    PartyB,
}

/// Recovery fractions applied at settlement.
///
/// `phi_*` is paid by a defaulting party on value held against it;
/// `phibar_*` is paid by a *non-defaulting* party whose side of the deal is a
/// liability when the other party defaults (1 = two-way settlement, the
/// non-defaulter pays in full; 0 = one-way, it pays nothing); `phi_ab`
/// applies when both default together.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecoveryProfile {
    phi_a: f64,
    phi_b: f64,
    phibar_a: f64,
    phibar_b: f64,
    phi_ab: f64,
    cross_term: CrossTermRecoveries,
}

impl RecoveryProfile {
    pub fn new(
        phi_a: f64,
        phi_b: f64,
        phibar_a: f64,
        phibar_b: f64,
        phi_ab: f64,
    ) -> Result<Self, DefaultModelError> {
        for (field, value) in [
            ("phi_a", phi_a),
            ("phi_b", phi_b),
            ("phibar_a", phibar_a),
            ("phibar_b", phibar_b),
            ("phi_ab", phi_ab),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(DefaultModelError::RecoveryOutOfRange { field, value });
            }
        }
        Ok(Self {
            phi_a,
            phi_b,
            phibar_a,
            phibar_b,
            phi_ab,
            cross_term: CrossTermRecoveries::OwnParty,
        })
    }

    /// Two-way settlement: a non-defaulting party pays its liability in full.
    pub fn two_way(phi_a: f64, phi_b: f64, phi_ab: f64) -> Result<Self, DefaultModelError> {
        Self::new(phi_a, phi_b, 1.0, 1.0, phi_ab)
    }

    /// One-way settlement: a non-defaulting party pays nothing.
    pub fn one_way(phi_a: f64, phi_b: f64, phi_ab: f64) -> Result<Self, DefaultModelError> {
        Self::new(phi_a, phi_b, 0.0, 0.0, phi_ab)
    }

    pub fn with_cross_term(mut self, cross_term: CrossTermRecoveries) -> Self {
        self.cross_term = cross_term;
        self
    }

    pub fn phi_a(&self) -> f64 {
        self.phi_a
    }
    pub fn phi_b(&self) -> f64 {
        self.phi_b
    }
    pub fn phibar_a(&self) -> f64 {
        self.phibar_a
    }
    pub fn phibar_b(&self) -> f64 {
        self.phibar_b
    }
    pub fn phi_ab(&self) -> f64 {
        self.phi_ab
    }
    pub fn cross_term(&self) -> CrossTermRecoveries {
        self.cross_term
    }

    /// `1 - phi_b - phibar_b + phi_ab`, the cross-term weight on the asset
    /// side. Evaluated left to right so that all-ones recoveries give an
    /// exact zero.
    fn k_b(&self) -> f64 {
        ((1.0 - self.phi_b) - self.phibar_b) + self.phi_ab
    }

    /// Cross-term weight on the liability side, per the configured
    /// convention.
    fn k_a(&self) -> f64 {
        match self.cross_term {
            CrossTermRecoveries::OwnParty => ((1.0 - self.phi_a) - self.phibar_a) + self.phi_ab,
            CrossTermRecoveries::PartyB => self.k_b(),
        }
    }
}

/// Joint law of the default indicators (A, B) over one period.
///
/// `p_ab` is the probability that A's indicator is `a` and B's is `b`
/// (1 = default). The coupling term is `rho * sqrt(q_a s_a q_b s_b)`, which
/// is exactly the Pearson correlation `rho` between the two indicators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointDefaultLaw {
    pub q_a: f64,
    pub q_b: f64,
    pub rho: f64,
    pub p11: f64,
    pub p10: f64,
    pub p01: f64,
    pub p00: f64,
}

/// Slack allowed on cell bounds before a correlation is declared infeasible;
/// covers rounding at the exactly-attainable endpoints.
const CELL_TOL: f64 = 1e-12;

impl JointDefaultLaw {
    pub fn new(q_a: f64, q_b: f64, rho: f64) -> Result<Self, DefaultModelError> {
        for (name, q) in [("q_a", q_a), ("q_b", q_b)] {
            if !(0.0..=1.0).contains(&q) {
                return Err(DefaultModelError::ProbabilityOutOfRange { name, value: q });
            }
        }
        if !(-1.0..=1.0).contains(&rho) {
            return Err(DefaultModelError::CorrelationOutOfRange(rho));
        }
        let s_a = 1.0 - q_a;
        let s_b = 1.0 - q_b;
        let gamma = rho * (q_a * s_a * q_b * s_b).sqrt();
        let cells = [
            ("p11", q_a * q_b + gamma),
            ("p10", q_a * s_b - gamma),
            ("p01", s_a * q_b - gamma),
            ("p00", s_a * s_b + gamma),
        ];
        for (cell, value) in cells {
            if !(-CELL_TOL..=1.0 + CELL_TOL).contains(&value) {
                return Err(DefaultModelError::InfeasibleCorrelation { rho, cell, value });
            }
        }
        let clamp = |x: f64| x.clamp(0.0, 1.0);
        Ok(Self {
            q_a,
            q_b,
            rho,
            p11: clamp(cells[0].1),
            p10: clamp(cells[1].1),
            p01: clamp(cells[2].1),
            p00: clamp(cells[3].1),
        })
    }
}

/// Largest closed interval of correlations for which all four cells of the
/// joint law stay in `[0,1]`, intersected with `[-1,1]`. Degenerate
/// marginals (either probability 0 or 1) pin the coupling term to zero, and
/// the convention is to return `[0,0]`.
pub fn rho_feasible_range(q_a: f64, q_b: f64) -> Result<(f64, f64), DefaultModelError> {
    for (name, q) in [("q_a", q_a), ("q_b", q_b)] {
        if !(0.0..=1.0).contains(&q) {
            return Err(DefaultModelError::ProbabilityOutOfRange { name, value: q });
        }
    }
    let s_a = 1.0 - q_a;
    let s_b = 1.0 - q_b;
    let c = (q_a * s_a * q_b * s_b).sqrt();
    if c == 0.0 {
        return Ok((0.0, 0.0));
    }
    let lo = [
        -1.0,
        -(q_a * q_b) / c,
        (q_a * s_b - 1.0) / c,
        (s_a * q_b - 1.0) / c,
        -(s_a * s_b) / c,
    ]
    .into_iter()
    .fold(f64::NEG_INFINITY, f64::max);
    let hi = [
        1.0,
        (1.0 - q_a * q_b) / c,
        (q_a * s_b) / c,
        (s_a * q_b) / c,
        (1.0 - s_a * s_b) / c,
    ]
    .into_iter()
    .fold(f64::INFINITY, f64::min);
    Ok((lo, hi))
}

fn check_hazard(h: f64) -> Result<(), DefaultModelError> {
    if !h.is_finite() || h < 0.0 {
        return Err(DefaultModelError::BadHazard(h));
    }
    Ok(())
}

/// Per-step credit spreads `(p_a, p_b)` added to the short rate when default
/// can happen at any instant and both parties are risky.
///
/// `p_b` applies while the deal is an asset to the investor, `p_a` while it
/// is a liability. The cross term couples the two hazards over a step of
/// length `dt` with default-event correlation `rho`; it requires
/// `h * dt <= 1` on both hazards.
pub fn bilateral_step_spreads(
    h_a: f64,
    h_b: f64,
    recoveries: &RecoveryProfile,
    rho: f64,
    dt: f64,
) -> Result<(f64, f64), DefaultModelError> {
    check_hazard(h_a)?;
    check_hazard(h_b)?;
    if !(-1.0..=1.0).contains(&rho) {
        return Err(DefaultModelError::CorrelationOutOfRange(rho));
    }
    for h in [h_a, h_b] {
        if h * dt > 1.0 {
            return Err(DefaultModelError::StepTooCoarse { hazard: h, dt });
        }
    }
    let cross = rho * (h_a * h_b * (1.0 - h_b * dt) * (1.0 - h_a * dt)).sqrt() + h_a * h_b * dt;
    let p_b = (1.0 - recoveries.phi_b) * h_b + (1.0 - recoveries.phibar_b) * h_a
        - recoveries.k_b() * cross;
    let p_a = (1.0 - recoveries.phi_a) * h_a + (1.0 - recoveries.phibar_a) * h_b
        - recoveries.k_a() * cross;
    Ok((p_a, p_b))
}

/// One-period settlement factors `(y_a, y_b)` when default is settled at the
/// period end and both parties are risky.
///
/// Each factor is the expected recovery weight over the four default states:
/// `y_b` applies when the period-end value (cash flow plus continuation) is
/// an asset to the investor, `y_a` when it is a liability. Inputs are the
/// parties' survival/default probabilities over the period; `q = 1 - s` must
/// hold so that the no-risk limits collapse exactly.
pub fn dtm_settlement_factors(
    s_a: f64,
    q_a: f64,
    s_b: f64,
    q_b: f64,
    recoveries: &RecoveryProfile,
    rho: f64,
) -> Result<(f64, f64), DefaultModelError> {
    for (name, s, q) in [("party A", s_a, q_a), ("party B", s_b, q_b)] {
        if !(0.0..=1.0).contains(&s) || !(0.0..=1.0).contains(&q) || (s + q - 1.0).abs() > 1e-9 {
            return Err(DefaultModelError::BadSurvivalPair { name, s, q });
        }
    }
    // Validates feasibility of rho for these marginals.
    let law = JointDefaultLaw::new(q_a, q_b, rho)?;
    let gamma = rho * (q_a * s_a * q_b * s_b).sqrt();
    debug_assert!((law.p00 - (s_a * s_b + gamma)).abs() <= 2.0 * CELL_TOL);
    // Factored so that all-ones recoveries reduce to s*(s+q) + q*(s+q) = 1
    // exactly in floating point.
    let y_b = s_a * (s_b + recoveries.phi_b * q_b)
        + q_a * (recoveries.phibar_b * s_b + recoveries.phi_ab * q_b)
        + gamma * recoveries.k_b();
    let y_a = s_b * (s_a + recoveries.phi_a * q_a)
        + q_b * (recoveries.phibar_a * s_a + recoveries.phi_ab * q_a)
        + gamma * recoveries.k_a();
    Ok((y_a, y_b))
}
