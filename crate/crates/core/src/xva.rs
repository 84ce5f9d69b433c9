//! Portfolio-level Monte-Carlo valuation and credit value adjustment.
//!
//! The defaultable portfolio value rolls backwards bucket by bucket: each
//! step multiplies the running value plus the bucket's cash flow by a
//! one-period settlement factor whose asset-or-liability branch is chosen by
//! the conditional expectation of the continuation value, estimated by
//! cross-sectional least squares in the style of Longstaff and Schwartz. A
//! twin recursion discounts the same flows risk-free, so the credit value
//! adjustment is a paired per-path difference: when no credit adjustment
//! applies the two legs are identical floating-point numbers and the
//! adjustment is exactly zero.
//!
//! Collateralized portfolios first convert margin calls into reversing cash
//! flows: the account is sized at each call node from a regressed portfolio
//! value, evolves over the margin period on the collateral factor, and its
//! per-bucket changes are subtracted from the bucket flows.

use crate::cashflow::{bucket_portfolio, BucketedCashflows, CashflowError, PathMarket, Portfolio};
use crate::collateral::{
    collateral_factor_of, evolve_collateral, required_collateral, CollateralError, MarginAgreement,
};
use crate::curves::{CurveError, CurveKind, TermStructure};
use crate::joint_default::{dtm_settlement_factors, DefaultModelError, RecoveryProfile};
use crate::risky_discount::{bilateral_dtm_factor, unilateral_dtm_factor, CreditSide, SignState};
use crate::scenario::{FactorRole, ScenarioCube, ScenarioError};
use nalgebra::{Cholesky, DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum XvaError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Cashflow(#[from] CashflowError),
    #[error(transparent)]
    Curve(#[from] CurveError),
    #[error(transparent)]
    Model(#[from] DefaultModelError),
    #[error(transparent)]
    Collateral(#[from] CollateralError),
    #[error("{role} hazard curve has kind {actual:?}")]
    WrongHazardKind {
        role: &'static str,
        actual: CurveKind,
    },
    #[error("bilateral valuation needs a hazard curve or simulated hazard factor for party A")]
    MissingHazardA,
    #[error("regression needs at least {needed} paths, have {have}")]
    TooFewPaths { needed: usize, have: usize },
    #[error("margin agreements require netting")]
    MarginRequiresNetting,
    #[error("grid has no collateral call nodes; build it with margin nodes")]
    MissingShadowNodes,
    #[error("grid margin period {grid} does not match the agreement's {agreement}")]
    MarginPeriodMismatch { grid: f64, agreement: f64 },
    #[error("regression design is singular even with ridge regularization")]
    RegressionSingular,
    #[error("risk-free value from seed {risk_free} paired with risky value from seed {risky}")]
    MismatchedSeeds { risk_free: u64, risky: u64 },
}

/// Least-squares basis: all monomials of the state factors up to a total
/// degree, plus the intercept. Rank problems fall back to a small fixed
/// ridge and are reported, not hidden.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionSpec {
    degree: u32,
    ridge: f64,
}

impl Default for RegressionSpec {
    fn default() -> Self {
        Self {
            degree: 2,
            ridge: 1e-8,
        }
    }
}

impl RegressionSpec {
    pub fn new(degree: u32) -> Self {
        Self {
            degree,
            ..Self::default()
        }
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    /// Number of basis functions over `n_factors` state variables.
    pub fn basis_size(&self, n_factors: usize) -> usize {
        monomial_exponents(n_factors, self.degree).len()
    }
}

// Exponent tuples of all monomials with total degree <= degree, intercept
// first, then graded by degree in a fixed order.
fn monomial_exponents(n_factors: usize, degree: u32) -> Vec<Vec<u32>> {
    if n_factors == 0 {
        return vec![Vec::new()];
    }
    fn fill(remaining: u32, idx: usize, current: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if idx + 1 == current.len() {
            current[idx] = remaining;
            out.push(current.clone());
            current[idx] = 0;
            return;
        }
        for e in (0..=remaining).rev() {
            current[idx] = e;
            fill(remaining - e, idx + 1, current, out);
        }
        current[idx] = 0;
    }
    let mut out = Vec::new();
    let mut current = vec![0u32; n_factors];
    for d in 0..=degree {
        fill(d, 0, &mut current, &mut out);
    }
    out
}

/// Fitted conditional expectations, one per observation.
#[derive(Debug, Clone)]
pub struct RegressionFit {
    pub fitted: Vec<f64>,
    pub ridge_used: bool,
}

/// Cross-sectional least squares of `regressands` on polynomial basis
/// functions of the per-observation states (`states` holds `n_factors`
/// values per observation, observation-major).
pub fn conditional_expectation(
    regressands: &[f64],
    states: &[f64],
    n_factors: usize,
    spec: &RegressionSpec,
) -> Result<RegressionFit, XvaError> {
    let n = regressands.len();
    debug_assert_eq!(states.len(), n * n_factors);
    let exponents = monomial_exponents(n_factors, spec.degree);
    if n < exponents.len() {
        return Err(XvaError::TooFewPaths {
            needed: exponents.len(),
            have: n,
        });
    }

    // raw basis columns
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(exponents.len());
    for exps in &exponents {
        let mut col = Vec::with_capacity(n);
        for obs in 0..n {
            let state = &states[obs * n_factors..(obs + 1) * n_factors];
            let mut v = 1.0;
            for (x, &e) in state.iter().zip(exps) {
                if e > 0 {
                    v *= x.powi(e as i32);
                }
            }
            col.push(v);
        }
        columns.push(col);
    }

    // standardize non-intercept columns; constant columns carry no
    // information beyond the intercept and are dropped
    let mut kept: Vec<Vec<f64>> = vec![columns[0].clone()];
    for col in columns.into_iter().skip(1) {
        let mean = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        if sd <= 1e-12 * (1.0 + mean.abs()) {
            continue;
        }
        kept.push(col.iter().map(|v| (v - mean) / sd).collect());
    }

    let b = kept.len();
    let mut x = DMatrix::zeros(n, b);
    for (c, col) in kept.iter().enumerate() {
        for (r, &v) in col.iter().enumerate() {
            x[(r, c)] = v;
        }
    }
    let y = DVector::from_column_slice(regressands);
    let xtx = x.transpose() * &x;
    let xty = x.transpose() * &y;

    let (beta, ridge_used) = match Cholesky::new(xtx.clone()) {
        Some(chol) => (chol.solve(&xty), false),
        None => {
            let mut damped = xtx;
            for i in 0..b {
                damped[(i, i)] += spec.ridge;
            }
            let chol = Cholesky::new(damped).ok_or(XvaError::RegressionSingular)?;
            (chol.solve(&xty), true)
        }
    };
    let fitted = (&x * beta).iter().copied().collect();
    Ok(RegressionFit { fitted, ridge_used })
}

/// Deterministic hazard and discount inputs with the party correlation for
/// one valuation. Simulated hazard factors in the cube, when present, take
/// precedence over the curves.
#[derive(Debug, Clone, Copy)]
pub struct CreditInputs<'a> {
    pub side: CreditSide,
    pub hazard_b: &'a TermStructure,
    pub hazard_a: Option<&'a TermStructure>,
    pub recoveries: &'a RecoveryProfile,
    pub rho: f64,
}

impl CreditInputs<'_> {
    fn validate(&self, cube: &ScenarioCube) -> Result<(), XvaError> {
        if self.hazard_b.kind() != CurveKind::Hazard {
            return Err(XvaError::WrongHazardKind {
                role: "counterparty",
                actual: self.hazard_b.kind(),
            });
        }
        if let Some(h) = self.hazard_a {
            if h.kind() != CurveKind::Hazard {
                return Err(XvaError::WrongHazardKind {
                    role: "own",
                    actual: h.kind(),
                });
            }
        }
        if self.side == CreditSide::Bilateral
            && self.hazard_a.is_none()
            && cube.factor_index(FactorRole::HazardA).is_none()
        {
            return Err(XvaError::MissingHazardA);
        }
        Ok(())
    }
}

// Per-path discount factors over node intervals: simulated short rate at the
// left node when the cube has one, the deterministic curve otherwise.
struct Discounter<'a> {
    cube: &'a ScenarioCube,
    rate_factor: Option<usize>,
    det_node_df: Vec<f64>,
}

impl<'a> Discounter<'a> {
    fn new(market: &PathMarket<'a>) -> Result<Self, XvaError> {
        let cube = market.cube();
        let rate_factor = if market.has_stochastic_rates() {
            cube.factor_index(FactorRole::Rate)
        } else {
            None
        };
        let mut det_node_df = Vec::new();
        if rate_factor.is_none() {
            for node in 0..cube.grid().n_nodes() - 1 {
                det_node_df.push(market.node_discount(0, node)?);
            }
        }
        Ok(Self {
            cube,
            rate_factor,
            det_node_df,
        })
    }

    fn node_df(&self, path: usize, node: usize) -> f64 {
        match self.rate_factor {
            Some(f) => {
                let times = self.cube.grid().node_times();
                let r = self.cube.value(path, node, f);
                (-r * (times[node + 1] - times[node])).exp()
            }
            None => self.det_node_df[node],
        }
    }

    /// Discount factor over one bucket interval.
    fn bucket_df(&self, path: usize, bucket: usize) -> f64 {
        let grid = self.cube.grid();
        let mut df = 1.0;
        for node in grid.bucket_node(bucket - 1)..grid.bucket_node(bucket) {
            df *= self.node_df(path, node);
        }
        df
    }

    /// Cumulative discount factors from time zero to every node.
    fn df_to_nodes(&self, path: usize) -> Vec<f64> {
        let n = self.cube.grid().n_nodes();
        let mut out = Vec::with_capacity(n);
        let mut df = 1.0;
        out.push(df);
        for node in 0..n - 1 {
            df *= self.node_df(path, node);
            out.push(df);
        }
        out
    }
}

// Per-path survival probabilities over bucket intervals from a simulated
// hazard factor (piecewise-constant at the left node) or a deterministic
// curve.
struct HazardView<'a> {
    cube: &'a ScenarioCube,
    factor: Option<usize>,
    det_survival: Vec<f64>,
}

impl<'a> HazardView<'a> {
    fn new(
        cube: &'a ScenarioCube,
        role: FactorRole,
        curve: Option<&TermStructure>,
    ) -> Result<Self, XvaError> {
        let factor = cube.factor_index(role);
        let mut det_survival = Vec::new();
        if factor.is_none() {
            let curve = curve.ok_or(XvaError::MissingHazardA)?;
            let grid = cube.grid();
            for k in 1..=grid.n_buckets() {
                det_survival.push(
                    curve.survival_probability(grid.bucket_time(k - 1), grid.bucket_time(k))?,
                );
            }
        }
        Ok(Self {
            cube,
            factor,
            det_survival,
        })
    }

    fn survival(&self, path: usize, bucket: usize) -> f64 {
        match self.factor {
            Some(f) => {
                let grid = self.cube.grid();
                let times = grid.node_times();
                let mut integral = 0.0;
                for node in grid.bucket_node(bucket - 1)..grid.bucket_node(bucket) {
                    integral += self.cube.value(path, node, f) * (times[node + 1] - times[node]);
                }
                (-integral).exp()
            }
            None => self.det_survival[bucket - 1],
        }
    }
}

// State factors entering the regression basis: the short rate and traded
// underlyings, when simulated.
fn regression_state_factors(cube: &ScenarioCube) -> Vec<usize> {
    [FactorRole::Rate, FactorRole::Equity]
        .iter()
        .filter_map(|&r| cube.factor_index(r))
        .collect()
}

fn gather_states(cube: &ScenarioCube, factors: &[usize], node: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(cube.n_paths() * factors.len());
    for path in 0..cube.n_paths() {
        let state = cube.state_at(path, node);
        for &f in factors {
            out.push(state[f]);
        }
    }
    out
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Monte-Carlo risk-free portfolio value: discounted bucket flows summed
/// per path, averaged across paths.
#[derive(Debug, Clone)]
pub struct RiskFreeValue {
    pub value: f64,
    pub standard_error: f64,
    pub seed: u64,
    per_path: Vec<f64>,
}

impl RiskFreeValue {
    pub fn per_path(&self) -> &[f64] {
        &self.per_path
    }
}

pub fn portfolio_risk_free_value(
    buckets: &BucketedCashflows,
    market: &PathMarket,
) -> Result<RiskFreeValue, XvaError> {
    let cube = market.cube();
    let grid = cube.grid();
    let disc = Discounter::new(market)?;
    let per_path: Vec<f64> = (0..cube.n_paths())
        .into_par_iter()
        .map(|path| {
            let df = disc.df_to_nodes(path);
            let mut value = 0.0;
            for k in 0..=grid.n_buckets() {
                value += buckets.netted(path, k) * df[grid.bucket_node(k)];
            }
            value
        })
        .collect();
    let (value, standard_error) = mean_and_se(&per_path);
    Ok(RiskFreeValue {
        value,
        standard_error,
        seed: cube.seed(),
        per_path,
    })
}

/// Risky and paired risk-free path values with their headline statistics.
#[derive(Debug, Clone)]
pub struct PortfolioValuation {
    pub risky_value: f64,
    pub risky_standard_error: f64,
    /// Risk-free value from the twin recursion (agrees with the direct sum
    /// to rounding; identical shape to the risky leg).
    pub rolled_risk_free_value: f64,
    pub cva: f64,
    pub cva_standard_error: f64,
    pub ridge_used: bool,
    pub seed: u64,
    per_path_risky: Vec<f64>,
    per_path_risk_free: Vec<f64>,
}

impl PortfolioValuation {
    pub fn per_path_risky(&self) -> &[f64] {
        &self.per_path_risky
    }

    pub fn per_path_risk_free(&self) -> &[f64] {
        &self.per_path_risk_free
    }
}

/// Backward induction of the defaultable portfolio value over the bucket
/// grid.
///
/// Netted flows use the regressed continuation value plus the imminent flow
/// to pick each settlement factor's branch. Without netting every flow
/// stands alone, so the positive and negative streams roll back separately
/// with fixed branches and no regression.
pub fn risky_rollback(
    buckets: &BucketedCashflows,
    market: &PathMarket,
    credit: &CreditInputs,
    spec: &RegressionSpec,
) -> Result<PortfolioValuation, XvaError> {
    let cube = market.cube();
    let grid = cube.grid();
    let n_paths = cube.n_paths();
    let m = grid.n_buckets();
    credit.validate(cube)?;
    let disc = Discounter::new(market)?;
    let hazard_b = HazardView::new(cube, FactorRole::HazardB, Some(credit.hazard_b))?;
    let hazard_a = match credit.side {
        CreditSide::Bilateral => Some(HazardView::new(cube, FactorRole::HazardA, credit.hazard_a)?),
        CreditSide::UnilateralB => None,
    };
    let recoveries = credit.recoveries;
    let rho = credit.rho;

    let settlement_factor =
        |path: usize, bucket: usize, sign: SignState| -> Result<(f64, f64), XvaError> {
            let d = disc.bucket_df(path, bucket);
            let s_b = hazard_b.survival(path, bucket);
            let y = match credit.side {
                CreditSide::UnilateralB => {
                    unilateral_dtm_factor(d, 1.0 - s_b, recoveries.phi_b(), sign)
                }
                CreditSide::Bilateral => {
                    let s_a = hazard_a.as_ref().unwrap().survival(path, bucket);
                    let factors =
                        dtm_settlement_factors(s_a, 1.0 - s_a, s_b, 1.0 - s_b, recoveries, rho)?;
                    bilateral_dtm_factor(d, factors, sign)
                }
            };
            Ok((y, d))
        };

    let mut ridge_used = false;
    let mut risk_free = vec![0.0f64; n_paths];
    let mut risky = vec![0.0f64; n_paths];

    if buckets.netting() {
        let state_factors = regression_state_factors(cube);
        let mut psi = vec![0.0f64; n_paths];
        for k in (1..=m).rev() {
            let vhat = if k == m {
                vec![0.0; n_paths]
            } else {
                let states = gather_states(cube, &state_factors, grid.bucket_node(k));
                let fit = conditional_expectation(&psi, &states, state_factors.len(), spec)?;
                ridge_used |= fit.ridge_used;
                fit.fitted
            };
            psi.par_iter_mut()
                .zip(risk_free.par_iter_mut())
                .enumerate()
                .try_for_each(|(j, (p, f))| -> Result<(), XvaError> {
                    let chi = buckets.netted(j, k);
                    let sign = SignState::of(chi + vhat[j]);
                    let (y, d) = settlement_factor(j, k, sign)?;
                    *p = y * (chi + *p);
                    *f = d * (chi + *f);
                    Ok(())
                })?;
        }
        for j in 0..n_paths {
            risky[j] = buckets.netted(j, 0) + psi[j];
            risk_free[j] += buckets.netted(j, 0);
        }
    } else {
        let mut pos = vec![0.0f64; n_paths];
        let mut neg = vec![0.0f64; n_paths];
        for k in (1..=m).rev() {
            let updates: Result<Vec<(f64, f64, f64)>, XvaError> = (0..n_paths)
                .into_par_iter()
                .map(|j| {
                    let (y_pos, d) = settlement_factor(j, k, SignState::Nonnegative)?;
                    let (y_neg, _) = settlement_factor(j, k, SignState::Negative)?;
                    Ok((
                        y_pos * (buckets.positive(j, k) + pos[j]),
                        y_neg * (buckets.negative(j, k) + neg[j]),
                        d * (buckets.netted(j, k) + risk_free[j]),
                    ))
                })
                .collect();
            for (j, (p, n, f)) in updates?.into_iter().enumerate() {
                pos[j] = p;
                neg[j] = n;
                risk_free[j] = f;
            }
        }
        for j in 0..n_paths {
            risky[j] = buckets.positive(j, 0) + pos[j] + (buckets.negative(j, 0) + neg[j]);
            risk_free[j] += buckets.netted(j, 0);
        }
    }

    let (risky_value, risky_standard_error) = mean_and_se(&risky);
    let (rolled_risk_free_value, _) = mean_and_se(&risk_free);
    let diffs: Vec<f64> = risk_free.iter().zip(&risky).map(|(f, d)| f - d).collect();
    let (cva, cva_standard_error) = mean_and_se(&diffs);
    Ok(PortfolioValuation {
        risky_value,
        risky_standard_error,
        rolled_risk_free_value,
        cva,
        cva_standard_error,
        ridge_used,
        seed: cube.seed(),
        per_path_risky: risky,
        per_path_risk_free: risk_free,
    })
}

/// Size the collateral account at every call node from the regressed
/// risk-free portfolio value, evolve it over the margin period to the bucket
/// date, and fold the account in and out of the bucket flows: bucket `k`
/// is reduced by the collateral held against it and restored by the next
/// bucket's account, so the rolled-back value at bucket `k` is the
/// collateralized residual `V_k - gamma_k`. Only the margin-period gap
/// between the call-time value and the bucket-date value stays at risk. An
/// agreement with both sides disabled leaves the flows untouched.
pub struct CollateralOutcome {
    pub ridge_used: bool,
}

pub fn collateralize(
    buckets: &mut BucketedCashflows,
    market: &PathMarket,
    agreement: &MarginAgreement,
    spec: &RegressionSpec,
) -> Result<CollateralOutcome, XvaError> {
    if !buckets.netting() {
        return Err(XvaError::MarginRequiresNetting);
    }
    if !agreement.is_active() {
        return Ok(CollateralOutcome { ridge_used: false });
    }
    let cube = market.cube();
    let grid = cube.grid();
    let n_paths = cube.n_paths();
    let m = grid.n_buckets();
    if grid.shadow_node(1).is_none() {
        return Err(XvaError::MissingShadowNodes);
    }
    if (grid.margin_period() - agreement.margin_period()).abs() > 1e-12 {
        return Err(XvaError::MarginPeriodMismatch {
            grid: grid.margin_period(),
            agreement: agreement.margin_period(),
        });
    }
    let disc = Discounter::new(market)?;

    // pathwise value at each call node of the flows it covers: the call for
    // bucket k secures the settlements at buckets k..=m
    let mut future_values = vec![0.0f64; n_paths * m];
    future_values
        .par_chunks_mut(m)
        .enumerate()
        .for_each(|(path, row)| {
            let df = disc.df_to_nodes(path);
            let mut suffix = 0.0;
            for k in (1..=m).rev() {
                suffix += buckets.netted(path, k) * df[grid.bucket_node(k)];
                row[k - 1] = suffix / df[grid.shadow_node(k).unwrap()];
            }
        });

    let state_factors = regression_state_factors(cube);
    let collateral_factor = collateral_factor_of(cube);
    let mut ridge_used = false;
    let mut levels = vec![0.0f64; n_paths * m];
    for k in 1..=m {
        let call_node = grid.shadow_node(k).unwrap();
        let regressands: Vec<f64> = (0..n_paths).map(|j| future_values[j * m + k - 1]).collect();
        let states = gather_states(cube, &state_factors, call_node);
        let fit = conditional_expectation(&regressands, &states, state_factors.len(), spec)?;
        ridge_used |= fit.ridge_used;
        for j in 0..n_paths {
            let called = required_collateral(fit.fitted[j], agreement);
            levels[j * m + k - 1] = evolve_collateral(
                called,
                cube,
                collateral_factor,
                j,
                call_node,
                grid.bucket_node(k),
            );
        }
    }
    for j in 0..n_paths {
        for k in 1..=m {
            let held = levels[j * m + k - 1];
            let next = if k < m { levels[j * m + k] } else { 0.0 };
            buckets.add_assign(j, k, next - held);
        }
    }
    Ok(CollateralOutcome { ridge_used })
}

/// Credit value adjustment from a matched pair of valuations.
#[derive(Debug, Clone, Copy)]
pub struct CvaResult {
    pub cva: f64,
    pub standard_error: f64,
    pub risk_free_value: f64,
    pub risky_value: f64,
}

/// The adjustment is the mean paired difference between the rolled risk-free
/// and risky path values; the standalone risk-free value reports the
/// headline level. Both inputs must come from the same cube seed.
pub fn portfolio_cva(
    risk_free: &RiskFreeValue,
    valuation: &PortfolioValuation,
) -> Result<CvaResult, XvaError> {
    if risk_free.seed != valuation.seed {
        return Err(XvaError::MismatchedSeeds {
            risk_free: risk_free.seed,
            risky: valuation.seed,
        });
    }
    Ok(CvaResult {
        cva: valuation.cva,
        standard_error: valuation.cva_standard_error,
        risk_free_value: risk_free.value,
        risky_value: valuation.risky_value,
    })
}

/// End-to-end valuation: bucket the portfolio's flows, apply any margin
/// agreement, roll back, and difference the legs.
#[derive(Debug, Clone)]
pub struct FullValuation {
    pub risk_free: RiskFreeValue,
    pub valuation: PortfolioValuation,
    pub cva: CvaResult,
    pub collateral_ridge_used: bool,
}

pub fn value_portfolio(
    portfolio: &Portfolio,
    market: &PathMarket,
    credit: &CreditInputs,
    regression: &RegressionSpec,
    netting: bool,
    margin: Option<&MarginAgreement>,
) -> Result<FullValuation, XvaError> {
    let mut buckets = bucket_portfolio(portfolio, market, netting)?;
    // the headline risk-free value is the clean portfolio value; collateral
    // flows enter only the risky/risk-free twin pair behind the adjustment
    let risk_free = portfolio_risk_free_value(&buckets, market)?;
    let collateral_ridge_used = match margin {
        Some(agreement) => collateralize(&mut buckets, market, agreement, regression)?.ridge_used,
        None => false,
    };
    let valuation = risky_rollback(&buckets, market, credit, regression)?;
    let cva = portfolio_cva(&risk_free, &valuation)?;
    Ok(FullValuation {
        risk_free,
        valuation,
        cva,
        collateral_ridge_used,
    })
}
