//! Per-scenario cash-flow determination and time-bucket aggregation.
//!
//! Products generate signed payments at their own payment dates; each payment
//! is pulled back to the nearest bucket date at or before it with the path's
//! own discount factor, then summed per bucket, either netted or split by
//! sign when the parties have no netting agreement.

use crate::curves::{CurveError, CurveKind, TermStructure};
use crate::lattice::CashflowSchedule;
use crate::scenario::{FactorRole, ScenarioCube, ScenarioError};
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CashflowError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Curve(#[from] CurveError),
    #[error("notional must be finite and nonzero, got {0}")]
    BadNotional(f64),
    #[error("fixed rate must be finite, got {0}")]
    BadFixedRate(f64),
    #[error("swap needs at least one swaplet")]
    NoSwaplets,
    #[error("swaplet {index} dates must satisfy fixing <= start < end <= pay, all nonnegative")]
    BadSwapletDates { index: usize },
    #[error("swaplet {index} accrual must be positive and finite, got {value}")]
    BadAccrual { index: usize, value: f64 },
    #[error("swaplet {index} pays before swaplet {}", index - 1)]
    UnorderedPayments { index: usize },
    #[error("portfolio prices an equity leg but the cube has no equity factor")]
    MissingEquityFactor,
    #[error("discount curve has kind {0:?}")]
    WrongDiscountKind(CurveKind),
    #[error("payment at {t} falls beyond the bucket grid horizon {horizon}")]
    PaymentBeyondHorizon { t: f64, horizon: f64 },
    #[error("portfolio has no products")]
    EmptyPortfolio,
}

/// One floating-against-fixed interest accrual: rate observed at `fixing`
/// for the span `[start, end]`, settled at `pay`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Swaplet {
    pub fixing: f64,
    pub start: f64,
    pub end: f64,
    pub pay: f64,
    pub accrual: f64,
}

/// Fixed-for-floating interest rate swap. `pay_fixed` is the valuing party's
/// side: paying fixed means receiving the floating leg.
#[derive(Debug, Clone, PartialEq)]
pub struct SwapSpec {
    notional: f64,
    fixed_rate: f64,
    pay_fixed: bool,
    swaplets: Vec<Swaplet>,
}

impl SwapSpec {
    pub fn new(
        notional: f64,
        fixed_rate: f64,
        pay_fixed: bool,
        swaplets: Vec<Swaplet>,
    ) -> Result<Self, CashflowError> {
        if !notional.is_finite() || notional == 0.0 {
            return Err(CashflowError::BadNotional(notional));
        }
        if !fixed_rate.is_finite() {
            return Err(CashflowError::BadFixedRate(fixed_rate));
        }
        if swaplets.is_empty() {
            return Err(CashflowError::NoSwaplets);
        }
        for (i, s) in swaplets.iter().enumerate() {
            let ordered =
                0.0 <= s.fixing && s.fixing <= s.start && s.start < s.end && s.end <= s.pay;
            if !ordered || !s.pay.is_finite() {
                return Err(CashflowError::BadSwapletDates { index: i });
            }
            if !s.accrual.is_finite() || s.accrual <= 0.0 {
                return Err(CashflowError::BadAccrual {
                    index: i,
                    value: s.accrual,
                });
            }
            if i > 0 && s.pay < swaplets[i - 1].pay {
                return Err(CashflowError::UnorderedPayments { index: i });
            }
        }
        Ok(Self {
            notional,
            fixed_rate,
            pay_fixed,
            swaplets,
        })
    }

    /// Spot-starting swap with `periods` equal accruals of length `span`,
    /// fixing at each period start and paying at its end.
    pub fn standard(
        notional: f64,
        fixed_rate: f64,
        pay_fixed: bool,
        start: f64,
        periods: usize,
        span: f64,
    ) -> Result<Self, CashflowError> {
        let swaplets = (0..periods)
            .map(|i| {
                let s = start + i as f64 * span;
                Swaplet {
                    fixing: s,
                    start: s,
                    end: s + span,
                    pay: s + span,
                    accrual: span,
                }
            })
            .collect();
        Self::new(notional, fixed_rate, pay_fixed, swaplets)
    }

    pub fn swaplets(&self) -> &[Swaplet] {
        &self.swaplets
    }

    pub fn notional(&self) -> f64 {
        self.notional
    }

    pub fn fixed_rate(&self) -> f64 {
        self.fixed_rate
    }

    pub fn pay_fixed(&self) -> bool {
        self.pay_fixed
    }

    pub fn mirrored(&self) -> Self {
        Self {
            pay_fixed: !self.pay_fixed,
            swaplets: self.swaplets.clone(),
            ..*self
        }
    }
}

/// One equity total-return accrual against a fixed rate: the return of the
/// equity factor over `[start, end]`, settled at `pay`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquitySwaplet {
    pub start: f64,
    pub end: f64,
    pub pay: f64,
    pub accrual: f64,
}

/// Equity return swapped against fixed. `pay_equity` means the valuing party
/// pays the equity return and receives the fixed leg.
#[derive(Debug, Clone, PartialEq)]
pub struct EquitySwapSpec {
    notional: f64,
    fixed_rate: f64,
    pay_equity: bool,
    swaplets: Vec<EquitySwaplet>,
}

impl EquitySwapSpec {
    pub fn new(
        notional: f64,
        fixed_rate: f64,
        pay_equity: bool,
        swaplets: Vec<EquitySwaplet>,
    ) -> Result<Self, CashflowError> {
        if !notional.is_finite() || notional == 0.0 {
            return Err(CashflowError::BadNotional(notional));
        }
        if !fixed_rate.is_finite() {
            return Err(CashflowError::BadFixedRate(fixed_rate));
        }
        if swaplets.is_empty() {
            return Err(CashflowError::NoSwaplets);
        }
        for (i, s) in swaplets.iter().enumerate() {
            if !(0.0 <= s.start && s.start < s.end && s.end <= s.pay) || !s.pay.is_finite() {
                return Err(CashflowError::BadSwapletDates { index: i });
            }
            if !s.accrual.is_finite() || s.accrual <= 0.0 {
                return Err(CashflowError::BadAccrual {
                    index: i,
                    value: s.accrual,
                });
            }
            if i > 0 && s.pay < swaplets[i - 1].pay {
                return Err(CashflowError::UnorderedPayments { index: i });
            }
        }
        Ok(Self {
            notional,
            fixed_rate,
            pay_equity,
            swaplets,
        })
    }

    /// Reset-and-pay structure with `periods` equal spans starting at
    /// `start`.
    pub fn standard(
        notional: f64,
        fixed_rate: f64,
        pay_equity: bool,
        start: f64,
        periods: usize,
        span: f64,
    ) -> Result<Self, CashflowError> {
        let swaplets = (0..periods)
            .map(|i| {
                let s = start + i as f64 * span;
                EquitySwaplet {
                    start: s,
                    end: s + span,
                    pay: s + span,
                    accrual: span,
                }
            })
            .collect();
        Self::new(notional, fixed_rate, pay_equity, swaplets)
    }

    pub fn swaplets(&self) -> &[EquitySwaplet] {
        &self.swaplets
    }

    pub fn notional(&self) -> f64 {
        self.notional
    }

    pub fn fixed_rate(&self) -> f64 {
        self.fixed_rate
    }

    pub fn pay_equity(&self) -> bool {
        self.pay_equity
    }

    pub fn mirrored(&self) -> Self {
        Self {
            pay_equity: !self.pay_equity,
            swaplets: self.swaplets.clone(),
            ..*self
        }
    }
}

/// Anything that emits bucketable per-path cash flows.
#[derive(Debug, Clone, PartialEq)]
pub enum Product {
    /// Deterministic signed payments at fixed dates.
    Schedule(CashflowSchedule),
    Swap(SwapSpec),
    EquitySwap(EquitySwapSpec),
}

impl Product {
    pub fn last_payment(&self) -> f64 {
        match self {
            Product::Schedule(s) => s.last_time(),
            Product::Swap(s) => s.swaplets.last().unwrap().pay,
            Product::EquitySwap(s) => s.swaplets.last().unwrap().pay,
        }
    }

    pub fn mirrored(&self) -> Self {
        match self {
            Product::Schedule(s) => Product::Schedule(s.negated()),
            Product::Swap(s) => Product::Swap(s.mirrored()),
            Product::EquitySwap(s) => Product::EquitySwap(s.mirrored()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Portfolio {
    products: Vec<Product>,
}

impl Portfolio {
    pub fn new(products: Vec<Product>) -> Result<Self, CashflowError> {
        if products.is_empty() {
            return Err(CashflowError::EmptyPortfolio);
        }
        Ok(Self { products })
    }

    pub fn products(&self) -> &[Product] {
        &self.products
    }

    pub fn last_payment(&self) -> f64 {
        self.products
            .iter()
            .map(Product::last_payment)
            .fold(0.0, f64::max)
    }

    pub fn has_equity(&self) -> bool {
        self.products
            .iter()
            .any(|p| matches!(p, Product::EquitySwap(_)))
    }

    pub fn mirrored(&self) -> Self {
        Self {
            products: self.products.iter().map(Product::mirrored).collect(),
        }
    }
}

/// Per-path market view: simulated factors where the cube has them, the
/// deterministic curve otherwise. Discounting between nodes composes
/// one-step factors at the left node's short rate, so stochastic and
/// deterministic rate setups flow through the same code.
#[derive(Debug, Clone, Copy)]
pub struct PathMarket<'a> {
    cube: &'a ScenarioCube,
    discount: &'a TermStructure,
    rate_factor: Option<usize>,
    equity_factor: Option<usize>,
}

impl<'a> PathMarket<'a> {
    pub fn new(cube: &'a ScenarioCube, discount: &'a TermStructure) -> Result<Self, CashflowError> {
        if discount.kind() != CurveKind::Interest {
            return Err(CashflowError::WrongDiscountKind(discount.kind()));
        }
        Ok(Self {
            cube,
            discount,
            rate_factor: cube.factor_index(FactorRole::Rate),
            equity_factor: cube.factor_index(FactorRole::Equity),
        })
    }

    pub fn cube(&self) -> &'a ScenarioCube {
        self.cube
    }

    pub fn has_stochastic_rates(&self) -> bool {
        self.rate_factor.is_some()
    }

    /// Short rate prevailing at a grid node.
    pub fn short_rate(&self, path: usize, node: usize) -> Result<f64, CashflowError> {
        match self.rate_factor {
            Some(f) => Ok(self.cube.value(path, node, f)),
            None => Ok(self.discount.rate_at(self.cube.grid().node_times()[node])?),
        }
    }

    /// Short rate at an arbitrary time, interpolated between nodes.
    pub fn short_rate_at(&self, path: usize, t: f64) -> Result<f64, CashflowError> {
        match self.rate_factor {
            Some(f) => Ok(self.cube.interpolated(path, f, t)?),
            None => Ok(self.discount.rate_at(t)?),
        }
    }

    /// Discount factor over one node interval, `node` to `node + 1`.
    pub fn node_discount(&self, path: usize, node: usize) -> Result<f64, CashflowError> {
        let times = self.cube.grid().node_times();
        match self.rate_factor {
            Some(f) => {
                let r = self.cube.value(path, node, f);
                Ok((-r * (times[node + 1] - times[node])).exp())
            }
            None => Ok(self
                .discount
                .discount_factor(times[node], times[node + 1])?),
        }
    }

    /// Discount factor from a node forward to a time at or before the next
    /// bucket date, using the rate prevailing at that node.
    pub fn stub_discount(&self, path: usize, node: usize, to: f64) -> Result<f64, CashflowError> {
        let t0 = self.cube.grid().node_times()[node];
        match self.rate_factor {
            Some(f) => {
                let r = self.cube.value(path, node, f);
                Ok((-r * (to - t0)).exp())
            }
            None => Ok(self.discount.discount_factor(t0, to)?),
        }
    }

    /// Equity factor value at an arbitrary time.
    pub fn equity(&self, path: usize, t: f64) -> Result<f64, CashflowError> {
        let f = self
            .equity_factor
            .ok_or(CashflowError::MissingEquityFactor)?;
        Ok(self.cube.interpolated(path, f, t)?)
    }
}

/// Simply-compounded forward rate implied by a flat short-rate snapshot `r`
/// over a span of `delta` years.
pub fn simple_forward(r: f64, delta: f64) -> f64 {
    ((r * delta).exp() - 1.0) / delta
}

/// Signed payment of one interest swaplet on one path, settled at its pay
/// date: notional times (floating minus fixed) times accrual, negated for
/// the fixed receiver.
pub fn determine_swaplet_cashflow(
    spec: &SwapSpec,
    swaplet: &Swaplet,
    market: &PathMarket,
    path: usize,
) -> Result<f64, CashflowError> {
    let r_fix = market.short_rate_at(path, swaplet.fixing)?;
    let forward = simple_forward(r_fix, swaplet.end - swaplet.start);
    let flow = spec.notional * (forward - spec.fixed_rate) * swaplet.accrual;
    Ok(if spec.pay_fixed { flow } else { -flow })
}

/// Signed payment of one equity swaplet on one path: notional times (equity
/// return minus fixed accrual), negated for the equity payer.
pub fn determine_equity_swaplet_cashflow(
    spec: &EquitySwapSpec,
    swaplet: &EquitySwaplet,
    market: &PathMarket,
    path: usize,
) -> Result<f64, CashflowError> {
    let s_start = market.equity(path, swaplet.start)?;
    let s_end = market.equity(path, swaplet.end)?;
    let ret = s_end / s_start - 1.0;
    let flow = spec.notional * (ret - spec.fixed_rate * swaplet.accrual);
    Ok(if spec.pay_equity { -flow } else { flow })
}

/// Pull a payment at `t` back to the nearest bucket at or before it with
/// the path's discount factor from that bucket date.
pub fn allocate_to_bucket(
    amount: f64,
    t: f64,
    market: &PathMarket,
    path: usize,
) -> Result<(usize, f64), CashflowError> {
    let grid = market.cube().grid();
    if t > grid.horizon() + 1e-12 {
        return Err(CashflowError::PaymentBeyondHorizon {
            t,
            horizon: grid.horizon(),
        });
    }
    let bucket = grid.bucket_containing(t)?;
    let node = grid.bucket_node(bucket);
    let df = market.stub_discount(path, node, t)?;
    Ok((bucket, amount * df))
}

/// Per-path, per-bucket aggregated cash flows. Bucket index runs over the
/// grid's bucket dates, 0 through `n_buckets`.
#[derive(Debug, Clone, PartialEq)]
pub struct BucketedCashflows {
    n_paths: usize,
    n_dates: usize,
    netting: bool,
    netted: Vec<f64>,
    positive: Vec<f64>,
    negative: Vec<f64>,
}

impl BucketedCashflows {
    fn zeros(n_paths: usize, n_dates: usize, netting: bool) -> Self {
        let split = if netting { 0 } else { n_paths * n_dates };
        Self {
            n_paths,
            n_dates,
            netting,
            netted: vec![0.0; n_paths * n_dates],
            positive: vec![0.0; split],
            negative: vec![0.0; split],
        }
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn n_dates(&self) -> usize {
        self.n_dates
    }

    pub fn netting(&self) -> bool {
        self.netting
    }

    pub fn netted(&self, path: usize, bucket: usize) -> f64 {
        self.netted[path * self.n_dates + bucket]
    }

    /// Sum of positive contributions (non-netting only).
    pub fn positive(&self, path: usize, bucket: usize) -> f64 {
        self.positive[path * self.n_dates + bucket]
    }

    /// Sum of negative contributions (non-netting only).
    pub fn negative(&self, path: usize, bucket: usize) -> f64 {
        self.negative[path * self.n_dates + bucket]
    }

    fn add(&mut self, path: usize, bucket: usize, amount: f64) {
        let i = path * self.n_dates + bucket;
        self.netted[i] += amount;
        if !self.netting {
            if amount >= 0.0 {
                self.positive[i] += amount;
            } else {
                self.negative[i] += amount;
            }
        }
    }

    /// Shift a path's netted flow at one bucket, used for collateral deltas.
    pub fn add_assign(&mut self, path: usize, bucket: usize, amount: f64) {
        self.netted[path * self.n_dates + bucket] += amount;
    }

    /// Netted flows of one path across all buckets.
    pub fn path_netted(&self, path: usize) -> &[f64] {
        &self.netted[path * self.n_dates..(path + 1) * self.n_dates]
    }
}

/// Determine, discount-allocate, and aggregate every product payment for
/// every path.
pub fn bucket_portfolio(
    portfolio: &Portfolio,
    market: &PathMarket,
    netting: bool,
) -> Result<BucketedCashflows, CashflowError> {
    let grid = market.cube().grid();
    let n_paths = market.cube().n_paths();
    let n_dates = grid.n_buckets() + 1;
    if portfolio.has_equity() && market.equity_factor.is_none() {
        return Err(CashflowError::MissingEquityFactor);
    }

    let mut out = BucketedCashflows::zeros(n_paths, n_dates, netting);
    // one struct per path so the fill parallelizes over disjoint slices
    let results: Vec<Result<Vec<(usize, f64)>, CashflowError>> = (0..n_paths)
        .into_par_iter()
        .map(|path| {
            let mut contributions = Vec::new();
            for product in portfolio.products() {
                match product {
                    Product::Schedule(s) => {
                        for (&t, &x) in s.times().iter().zip(s.amounts()) {
                            contributions.push(allocate_to_bucket(x, t, market, path)?);
                        }
                    }
                    Product::Swap(s) => {
                        for swaplet in s.swaplets() {
                            let x = determine_swaplet_cashflow(s, swaplet, market, path)?;
                            contributions.push(allocate_to_bucket(x, swaplet.pay, market, path)?);
                        }
                    }
                    Product::EquitySwap(s) => {
                        for swaplet in s.swaplets() {
                            let x = determine_equity_swaplet_cashflow(s, swaplet, market, path)?;
                            contributions.push(allocate_to_bucket(x, swaplet.pay, market, path)?);
                        }
                    }
                }
            }
            Ok(contributions)
        })
        .collect();

    for (path, result) in results.into_iter().enumerate() {
        for (bucket, amount) in result? {
            out.add(path, bucket, amount);
        }
    }
    Ok(out)
}
