//! Piecewise-constant term structures and the CDS hazard bootstrap.
//!
//! A [`TermStructure`] stores continuously compounded forward rates that are
//! constant on each interval between node times. Integrals over the curve are
//! computed exactly segment by segment, so discount factors and survival
//! probabilities carry no quadrature error. Day counts are assumed to have
//! been applied already: every time is a year fraction from the valuation
//! date (ACT/365-fixed upstream).

use thiserror::Error;

/// What the curve's rates mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurveKind {
    /// Instantaneous short rate; integrates to discount factors.
    Interest,
    /// Default intensity; integrates to survival probabilities.
    Hazard,
}

#[derive(Debug, Error)]
pub enum CurveError {
    #[error("curve needs at least two node times, got {0}")]
    TooFewNodes(usize),
    #[error("node times must start at 0 and increase strictly (node {index} is {time})")]
    BadNodeTimes { index: usize, time: f64 },
    #[error("{times} node times define {} intervals but {rates} rates were given", times - 1)]
    NodeCountMismatch { times: usize, rates: usize },
    #[error("rate at interval {index} is not finite")]
    NonFiniteRate { index: usize },
    #[error("hazard rates must be non-negative, interval {index} has {rate}")]
    NegativeHazard { index: usize, rate: f64 },
    #[error("negative time {t}")]
    NegativeTime { t: f64 },
    #[error("reversed interval: start {t} is after end {s}")]
    ReversedInterval { t: f64, s: f64 },
    #[error("time {t} is beyond the curve horizon {horizon}")]
    HorizonExceeded { t: f64, horizon: f64 },
    #[error("{op} requires a {required:?} curve, got {actual:?}")]
    KindMismatch {
        op: &'static str,
        required: CurveKind,
        actual: CurveKind,
    },
    #[error("CDS maturities must be positive and strictly increasing (quote {index})")]
    BadQuoteStrip { index: usize },
    #[error("CDS quote count mismatch: {maturities} maturities, {spreads} spreads")]
    QuoteCountMismatch { maturities: usize, spreads: usize },
    #[error("CDS recovery must lie in [0,1], got {0}")]
    BadQuoteRecovery(f64),
    #[error("CDS spread at quote {index} must be non-negative, got {spread}")]
    NegativeSpread { index: usize, spread: f64 },
    #[error(
        "no non-negative hazard reprices quote {index} (maturity {maturity}): \
         the strip is arbitrage-inconsistent"
    )]
    NegativeImpliedHazard { index: usize, maturity: f64 },
    #[error("hazard bootstrap did not converge on quote {index} (residual {residual:e})")]
    BootstrapDiverged { index: usize, residual: f64 },
}

/// A piecewise-constant forward curve.
///
/// `node_times` starts at 0 and increases strictly; `node_rates` holds one
/// rate per interval, so it is one element shorter. Queries beyond the final
/// node are an error rather than an extrapolation.
#[derive(Debug, Clone, PartialEq)]
pub struct TermStructure {
    kind: CurveKind,
    node_times: Vec<f64>,
    node_rates: Vec<f64>,
}

impl TermStructure {
    pub fn new(
        kind: CurveKind,
        node_times: Vec<f64>,
        node_rates: Vec<f64>,
    ) -> Result<Self, CurveError> {
        if node_times.len() < 2 {
            return Err(CurveError::TooFewNodes(node_times.len()));
        }
        if node_times[0] != 0.0 {
            return Err(CurveError::BadNodeTimes {
                index: 0,
                time: node_times[0],
            });
        }
        for i in 1..node_times.len() {
            if !node_times[i].is_finite() || node_times[i] <= node_times[i - 1] {
                return Err(CurveError::BadNodeTimes {
                    index: i,
                    time: node_times[i],
                });
            }
        }
        if node_rates.len() != node_times.len() - 1 {
            return Err(CurveError::NodeCountMismatch {
                times: node_times.len(),
                rates: node_rates.len(),
            });
        }
        for (i, &r) in node_rates.iter().enumerate() {
            if !r.is_finite() {
                return Err(CurveError::NonFiniteRate { index: i });
            }
            if kind == CurveKind::Hazard && r < 0.0 {
                return Err(CurveError::NegativeHazard { index: i, rate: r });
            }
        }
        Ok(Self {
            kind,
            node_times,
            node_rates,
        })
    }

    /// Single-rate curve covering `[0, horizon]`.
    pub fn flat(kind: CurveKind, rate: f64, horizon: f64) -> Result<Self, CurveError> {
        Self::new(kind, vec![0.0, horizon], vec![rate])
    }

    pub fn kind(&self) -> CurveKind {
        self.kind
    }

    pub fn horizon(&self) -> f64 {
        *self.node_times.last().unwrap()
    }

    pub fn node_times(&self) -> &[f64] {
        &self.node_times
    }

    pub fn node_rates(&self) -> &[f64] {
        &self.node_rates
    }

    fn check_interval(&self, t: f64, s: f64) -> Result<(), CurveError> {
        if t < 0.0 {
            return Err(CurveError::NegativeTime { t });
        }
        if t > s {
            return Err(CurveError::ReversedInterval { t, s });
        }
        let horizon = self.horizon();
        if s > horizon {
            return Err(CurveError::HorizonExceeded { t: s, horizon });
        }
        Ok(())
    }

    /// Index of the interval containing `t`, left-closed; the final node
    /// belongs to the last interval.
    fn segment_of(&self, t: f64) -> usize {
        let n = self.node_times.len();
        let idx = self.node_times.partition_point(|&node| node <= t);
        idx.clamp(1, n - 1) - 1
    }

    /// Forward rate in effect at time `t`.
    pub fn rate_at(&self, t: f64) -> Result<f64, CurveError> {
        self.check_interval(t, t)?;
        Ok(self.node_rates[self.segment_of(t)])
    }

    /// Exact integral of the curve over `[t, s]`.
    pub fn integral(&self, t: f64, s: f64) -> Result<f64, CurveError> {
        self.check_interval(t, s)?;
        if t == s {
            return Ok(0.0);
        }
        let mut acc = 0.0;
        let mut left = t;
        let mut seg = self.segment_of(t);
        while left < s {
            let right = self.node_times[seg + 1].min(s);
            acc += self.node_rates[seg] * (right - left);
            left = right;
            seg += 1;
        }
        Ok(acc)
    }

    /// `exp(-integral)` on an interest curve.
    pub fn discount_factor(&self, t: f64, s: f64) -> Result<f64, CurveError> {
        if self.kind != CurveKind::Interest {
            return Err(CurveError::KindMismatch {
                op: "discount_factor",
                required: CurveKind::Interest,
                actual: self.kind,
            });
        }
        Ok((-self.integral(t, s)?).exp())
    }

    /// `exp(-integral)` on a hazard curve.
    pub fn survival_probability(&self, t: f64, s: f64) -> Result<f64, CurveError> {
        if self.kind != CurveKind::Hazard {
            return Err(CurveError::KindMismatch {
                op: "survival_probability",
                required: CurveKind::Hazard,
                actual: self.kind,
            });
        }
        Ok((-self.integral(t, s)?).exp())
    }

    /// Default probability over `[t, s]`, computed as `1 - S` so that the
    /// complement identity `S + Q == 1` holds exactly in floating point.
    pub fn default_probability(&self, t: f64, s: f64) -> Result<f64, CurveError> {
        Ok(1.0 - self.survival_probability(t, s)?)
    }
}

/// Par CDS quotes used to bootstrap a hazard curve.
#[derive(Debug, Clone)]
pub struct CdsQuoteStrip {
    maturities: Vec<f64>,
    spreads: Vec<f64>,
    recovery: f64,
}

impl CdsQuoteStrip {
    pub fn new(maturities: Vec<f64>, spreads: Vec<f64>, recovery: f64) -> Result<Self, CurveError> {
        if maturities.len() != spreads.len() {
            return Err(CurveError::QuoteCountMismatch {
                maturities: maturities.len(),
                spreads: spreads.len(),
            });
        }
        if maturities.is_empty() {
            return Err(CurveError::BadQuoteStrip { index: 0 });
        }
        let mut prev = 0.0;
        for (i, &m) in maturities.iter().enumerate() {
            if !m.is_finite() || m <= prev {
                return Err(CurveError::BadQuoteStrip { index: i });
            }
            prev = m;
        }
        for (i, &s) in spreads.iter().enumerate() {
            if !s.is_finite() || s < 0.0 {
                return Err(CurveError::NegativeSpread {
                    index: i,
                    spread: s,
                });
            }
        }
        if !(0.0..=1.0).contains(&recovery) {
            return Err(CurveError::BadQuoteRecovery(recovery));
        }
        Ok(Self {
            maturities,
            spreads,
            recovery,
        })
    }

    pub fn maturities(&self) -> &[f64] {
        &self.maturities
    }

    pub fn spreads(&self) -> &[f64] {
        &self.spreads
    }

    pub fn recovery(&self) -> f64 {
        self.recovery
    }
}

/// `(1 - exp(-x)) / x` with the removable singularity filled in.
fn one_minus_exp_over(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        -(-x).exp_m1() / x
    }
}

/// Present values of the protection leg and the premium annuity (risky PV01)
/// of a CDS over `[0, maturity]`, with a continuously paid premium.
///
/// Both legs reduce to closed forms on each segment where the discount rate
/// and the hazard are simultaneously constant.
fn cds_legs(
    discount: &TermStructure,
    hazard_times: &[f64],
    hazard_rates: &[f64],
    maturity: f64,
    recovery: f64,
) -> Result<(f64, f64), CurveError> {
    let mut protection = 0.0;
    let mut annuity = 0.0;
    // Running exp(-integral r) * exp(-integral h) at the segment start.
    let mut start_weight = 1.0;
    let mut left = 0.0;
    let mut hseg = 0usize;
    while left < maturity {
        // Next boundary from either curve, capped at maturity.
        while hseg + 1 < hazard_times.len() - 1 && hazard_times[hseg + 1] <= left {
            hseg += 1;
        }
        let r = discount.rate_at(left)?;
        let h = hazard_rates[hseg];
        let d_next = {
            let i = discount.node_times().partition_point(|&n| n <= left);
            discount.node_times()[i.min(discount.node_times().len() - 1)]
        };
        let h_next = hazard_times[(hseg + 1).min(hazard_times.len() - 1)];
        let right = d_next.min(h_next).min(maturity);
        debug_assert!(right > left);
        let dt = right - left;
        let x = (r + h) * dt;
        let integral = start_weight * dt * one_minus_exp_over(x);
        annuity += integral;
        protection += (1.0 - recovery) * h * integral;
        start_weight *= (-x).exp();
        left = right;
    }
    Ok((protection, annuity))
}

/// Par spread of a CDS maturing at `maturity`, valued on the given curves
/// with a continuous premium leg.
pub fn par_spread(
    discount: &TermStructure,
    hazard: &TermStructure,
    maturity: f64,
    recovery: f64,
) -> Result<f64, CurveError> {
    if hazard.kind() != CurveKind::Hazard {
        return Err(CurveError::KindMismatch {
            op: "par_spread",
            required: CurveKind::Hazard,
            actual: hazard.kind(),
        });
    }
    if maturity > hazard.horizon() {
        return Err(CurveError::HorizonExceeded {
            t: maturity,
            horizon: hazard.horizon(),
        });
    }
    let (protection, annuity) = cds_legs(
        discount,
        hazard.node_times(),
        hazard.node_rates(),
        maturity,
        recovery,
    )?;
    Ok(protection / annuity)
}

/// Repricing tolerance demanded of the bootstrap, in spread units.
const BOOTSTRAP_TOL: f64 = 1e-10;

/// Bootstrap a piecewise-constant hazard curve from a par CDS strip.
///
/// Works outward one quote at a time: the hazard on `(m_{i-1}, m_i]` is the
/// root of `protection - spread * annuity` over `[0, m_i]` with the earlier
/// segments held fixed. The root is bracketed from zero and bisected, then
/// every quote is repriced through the same valuation to `1e-10`.
pub fn bootstrap_hazards(
    quotes: &CdsQuoteStrip,
    discount: &TermStructure,
) -> Result<TermStructure, CurveError> {
    if discount.kind() != CurveKind::Interest {
        return Err(CurveError::KindMismatch {
            op: "bootstrap_hazards",
            required: CurveKind::Interest,
            actual: discount.kind(),
        });
    }
    let last = *quotes.maturities().last().unwrap();
    if last > discount.horizon() {
        return Err(CurveError::HorizonExceeded {
            t: last,
            horizon: discount.horizon(),
        });
    }

    let mut times = vec![0.0];
    times.extend_from_slice(quotes.maturities());
    let mut rates: Vec<f64> = Vec::with_capacity(quotes.maturities().len());

    for i in 0..quotes.maturities().len() {
        let maturity = quotes.maturities()[i];
        let spread = quotes.spreads()[i];
        let mismatch = |h: f64, rates: &mut Vec<f64>| -> Result<f64, CurveError> {
            rates.push(h);
            let r = cds_legs(
                discount,
                &times[..i + 2],
                rates,
                maturity,
                quotes.recovery(),
            );
            rates.pop();
            let (protection, annuity) = r?;
            Ok(protection - spread * annuity)
        };

        let f0 = mismatch(0.0, &mut rates)?;
        if f0 > 0.0 {
            return Err(CurveError::NegativeImpliedHazard { index: i, maturity });
        }
        let mut lo = 0.0;
        let mut hi = 1.0;
        let mut iterations = 0;
        while mismatch(hi, &mut rates)? < 0.0 {
            hi *= 2.0;
            iterations += 1;
            if iterations > 16 {
                return Err(CurveError::BootstrapDiverged {
                    index: i,
                    residual: f64::INFINITY,
                });
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mismatch(mid, &mut rates)? < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= f64::EPSILON * hi.max(1.0) {
                break;
            }
        }
        rates.push(0.5 * (lo + hi));
    }

    let curve = TermStructure::new(CurveKind::Hazard, times, rates)?;
    for (i, (&m, &s)) in quotes.maturities().iter().zip(quotes.spreads()).enumerate() {
        let repriced = par_spread(discount, &curve, m, quotes.recovery())?;
        let residual = (repriced - s).abs();
        if residual > BOOTSTRAP_TOL {
            return Err(CurveError::BootstrapDiverged { index: i, residual });
        }
    }
    Ok(curve)
}
