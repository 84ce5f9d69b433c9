//! Counterparty-risk valuation engine.
//!
//! The crate prices derivatives that are subject to default of either
//! counterparty and measures the credit value adjustment (CVA) of a
//! portfolio. It is organized in layers:
//!
//! - [`curves`]: deterministic piecewise-constant term structures (discount
//!   and hazard) and a CDS-strip hazard bootstrap.
//! - [`joint_default`]: the one-period joint default law of the two parties
//!   (correlated Bernoulli pair) and the settlement spreads/factors built
//!   from it.
//! - [`risky_discount`]: sign-dependent risk-adjusted discount rates (default
//!   possible at any instant) and one-period settlement factors (default
//!   settled at payment dates).
//! - [`lattice`]: deterministic-curve backward induction for a schedule of
//!   known cash flows, plus an exhaustive default-state enumeration oracle.
//! - [`scenario`]: seeded Monte-Carlo scenario generation over a time-bucket
//!   grid (CIR / GBM / Black-Karasinski factors, correlated drivers).
//! - [`cashflow`]: swap and schedule cash-flow determination and allocation
//!   onto buckets, with or without netting.
//! - [`collateral`]: margin agreements, collateral calls over the margin
//!   period of risk, and the collateral cash-flow stream.
//! - [`xva`]: portfolio-level risk-free and risky valuation over the
//!   scenario cube (least-squares conditional expectations) and CVA.
//!
//! All times are year fractions from the valuation date; rates are
//! continuously compounded per annum.

pub mod cashflow;
pub mod collateral;
pub mod curves;
pub mod joint_default;
pub mod lattice;
pub mod risky_discount;
pub mod scenario;
pub mod xva;

pub use cashflow::{
    BucketedCashflows, EquitySwapSpec, EquitySwaplet, Portfolio, Product, SwapSpec, Swaplet,
};
pub use collateral::MarginAgreement;
pub use curves::{bootstrap_hazards, CdsQuoteStrip, CurveKind, TermStructure};
pub use joint_default::{CrossTermRecoveries, JointDefaultLaw, RecoveryProfile};
pub use lattice::{CashflowSchedule, MarketCurves, PricingGrid, ValuationResult};
pub use risky_discount::{CreditSide, DefaultTiming, ModelRegime, SignState};
pub use scenario::{
    CorrelationSpec, FactorRole, ProcessKind, ProcessSpec, ScenarioCube, TimeBucketGrid,
};
pub use xva::{PortfolioValuation, RegressionSpec};
