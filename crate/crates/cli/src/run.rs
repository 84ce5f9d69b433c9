//! Command execution: lowers the configuration, runs the requested pricing
//! job, and renders the artifacts.

use std::fmt::Display;
use std::time::Instant;

use thiserror::Error;

use riskyval_core::cashflow::{simple_forward, PathMarket};
use riskyval_core::lattice::price_risky;
use riskyval_core::scenario::{simulate, ScenarioCube};
use riskyval_core::xva::{value_portfolio, CreditInputs, FullValuation};
use riskyval_core::{
    CashflowSchedule, CorrelationSpec, CreditSide, DefaultTiming, FactorRole, MarginAgreement,
    MarketCurves, ModelRegime, Portfolio, PricingGrid, Product, TermStructure,
};

use crate::config::{self, invalid, ConfigError, LowerError, Lowered, MarginTerms, Sweep};
use crate::report::{format_sig6, render_meta, render_report, sha256_hex, ReportRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    Price,
    Cva,
    TableCtmDtm,
    TableCollateral,
    TableWrongway,
}

impl CommandKind {
    pub fn name(&self) -> &'static str {
        match self {
            CommandKind::Price => "price",
            CommandKind::Cva => "cva",
            CommandKind::TableCtmDtm => "table-ctm-dtm",
            CommandKind::TableCollateral => "table-collateral",
            CommandKind::TableWrongway => "table-wrongway",
        }
    }

    fn is_simulation(&self) -> bool {
        !matches!(self, CommandKind::Price | CommandKind::TableCtmDtm)
    }
}

/// Flag and environment overrides, already resolved by precedence.
#[derive(Debug, Default, Clone, Copy)]
pub struct Overrides {
    pub paths: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug)]
pub struct Artifacts {
    pub report: String,
    pub meta: String,
    pub rows: usize,
}

/// Configuration problems exit 2; numerical or output failures exit 3.
#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{module}: {message}")]
    Numerical {
        module: &'static str,
        message: String,
    },
    #[error("report: {0}")]
    Output(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            _ => 3,
        }
    }
}

impl From<LowerError> for RunError {
    fn from(e: LowerError) -> Self {
        match e {
            LowerError::Config(c) => RunError::Config(c),
            LowerError::Bootstrap(b) => RunError::Numerical {
                module: "curves",
                message: b.to_string(),
            },
        }
    }
}

fn num<E: Display>(module: &'static str) -> impl Fn(E) -> RunError {
    move |e| RunError::Numerical {
        module,
        message: e.to_string(),
    }
}

pub fn execute(
    kind: CommandKind,
    config_text: &str,
    overrides: &Overrides,
) -> Result<Artifacts, RunError> {
    let started = Instant::now();
    let cfg = config::parse(config_text)?;
    let mut lowered = config::lower(&cfg)?;
    if let Some(p) = overrides.paths {
        if p == 0 {
            return Err(invalid("run.paths", "must be positive").into());
        }
        lowered.paths = Some(p);
    }
    if let Some(s) = overrides.seed {
        lowered.seed = s;
    }

    let rows = match kind {
        CommandKind::Price => lattice_rows(&lowered, false)?,
        CommandKind::TableCtmDtm => lattice_rows(&lowered, true)?,
        CommandKind::Cva => cva_rows(&lowered)?,
        CommandKind::TableCollateral => collateral_rows(&lowered)?,
        CommandKind::TableWrongway => wrongway_rows(&lowered)?,
    };

    let paths_used = if kind.is_simulation() {
        lowered.paths.unwrap_or(0)
    } else {
        0
    };
    let meta = render_meta(
        kind.name(),
        lowered.seed,
        paths_used,
        &sha256_hex(config_text.as_bytes()),
        started.elapsed().as_millis(),
    );
    Ok(Artifacts {
        report: render_report(&rows),
        meta,
        rows: rows.len(),
    })
}

/// Known cash flows for the deterministic-curve pricer. Swaps settle their
/// floating legs on the discount curve's own forwards, the same convention
/// the simulation uses when rates are deterministic.
fn deterministic_schedule(
    label: &str,
    product: &Product,
    discount: &TermStructure,
) -> Result<CashflowSchedule, RunError> {
    match product {
        Product::Schedule(s) => Ok(s.clone()),
        Product::Swap(spec) => {
            let mut times: Vec<f64> = Vec::new();
            let mut amounts: Vec<f64> = Vec::new();
            for s in spec.swaplets() {
                let r = discount.rate_at(s.fixing).map_err(num("curves"))?;
                let forward = simple_forward(r, s.end - s.start);
                let flow = spec.notional() * (forward - spec.fixed_rate()) * s.accrual;
                let signed = if spec.pay_fixed() { flow } else { -flow };
                // merge only exact pay-date ties; swaplets arrive pay-ordered
                if times.last() == Some(&s.pay) {
                    *amounts.last_mut().unwrap() += signed;
                } else {
                    times.push(s.pay);
                    amounts.push(signed);
                }
            }
            CashflowSchedule::new(times, amounts).map_err(num("lattice"))
        }
        Product::EquitySwap(_) => Err(invalid(
            format!("product \"{label}\""),
            "equity swaps need simulated factors; use the cva command",
        )
        .into()),
    }
}

fn lattice_rows(lowered: &Lowered, both_timings: bool) -> Result<Vec<ReportRow>, RunError> {
    if lowered.side == CreditSide::Bilateral && lowered.hazard_a.is_none() {
        return Err(invalid(
            "credit.a",
            "deterministic pricing needs an own-party curve, not a simulated factor",
        )
        .into());
    }
    let curves = MarketCurves {
        discount: &lowered.discount,
        hazard_b: &lowered.hazard_b,
        hazard_a: lowered.hazard_a.as_ref(),
    };
    let mut rows = Vec::with_capacity(lowered.products.len());
    for lp in &lowered.products {
        let schedule = deterministic_schedule(&lp.label, &lp.product, &lowered.discount)?;
        let grid = PricingGrid::with_step(&schedule, lowered.ctm_step).map_err(num("lattice"))?;
        let price = |timing| {
            price_risky(
                &schedule,
                ModelRegime::new(lowered.side, timing),
                &curves,
                &lowered.recoveries,
                lowered.rho,
                &grid,
            )
            .map_err(num("lattice"))
        };
        let mut row = ReportRow::new(lp.label.clone());
        if both_timings {
            let ctm = price(DefaultTiming::Ctm)?;
            let dtm = price(DefaultTiming::Dtm)?;
            row.risk_free = Some(dtm.risk_free);
            row.risky_ctm = Some(ctm.risky);
            row.risky_dtm = Some(dtm.risky);
            row.cva_ctm = Some(ctm.cva);
            row.cva_dtm = Some(dtm.cva);
            row.relative_difference = (ctm.cva != 0.0).then(|| 1.0 - dtm.cva / ctm.cva);
        } else {
            let result = price(lowered.timing)?;
            row.risk_free = Some(result.risk_free);
            match lowered.timing {
                DefaultTiming::Ctm => {
                    row.risky_ctm = Some(result.risky);
                    row.cva_ctm = Some(result.cva);
                }
                DefaultTiming::Dtm => {
                    row.risky_dtm = Some(result.risky);
                    row.cva_dtm = Some(result.cva);
                }
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

fn require_paths(lowered: &Lowered) -> Result<usize, RunError> {
    match lowered.paths {
        Some(p) if p > 0 => Ok(p),
        _ => Err(invalid("run.paths", "required for simulation commands").into()),
    }
}

fn simulate_cube(
    lowered: &Lowered,
    paths: usize,
    correlation_rows: &[f64],
) -> Result<ScenarioCube, RunError> {
    if lowered.processes.is_empty() {
        return Err(invalid(
            "process",
            "at least one simulated factor is required for simulation commands",
        )
        .into());
    }
    if lowered
        .products
        .iter()
        .any(|p| matches!(p.product, Product::EquitySwap(_)))
        && !lowered
            .processes
            .iter()
            .any(|p| p.role == FactorRole::Equity)
    {
        return Err(invalid(
            "process",
            "an equity factor is required to simulate equity swaps",
        )
        .into());
    }
    let grid = lowered
        .grid
        .as_ref()
        .ok_or_else(|| invalid("grid", "required for simulation commands"))?;
    let n = lowered.processes.len();
    let correlation =
        CorrelationSpec::new(n, correlation_rows.to_vec()).map_err(|e| invalid("sweep", e))?;
    simulate(&lowered.processes, &correlation, grid, paths, lowered.seed).map_err(num("scenario"))
}

fn full_valuation(
    lowered: &Lowered,
    cube: &ScenarioCube,
    margin: Option<&MarginAgreement>,
) -> Result<FullValuation, RunError> {
    let market = PathMarket::new(cube, &lowered.discount).map_err(num("cashflow"))?;
    let products: Vec<Product> = lowered.products.iter().map(|p| p.product.clone()).collect();
    let portfolio = Portfolio::new(products).map_err(num("cashflow"))?;
    let credit = CreditInputs {
        side: lowered.side,
        hazard_b: &lowered.hazard_b,
        hazard_a: lowered.hazard_a.as_ref(),
        recoveries: &lowered.recoveries,
        rho: lowered.rho,
    };
    value_portfolio(
        &portfolio,
        &market,
        &credit,
        &lowered.regression,
        lowered.netting,
        margin,
    )
    .map_err(num("xva"))
}

fn mc_row(label: impl Into<String>, valuation: &FullValuation) -> ReportRow {
    let mut row = ReportRow::new(label);
    row.risk_free = Some(valuation.risk_free.value);
    row.risky_dtm = Some(valuation.valuation.risky_value);
    row.cva_dtm = Some(valuation.cva.cva);
    row.standard_error = Some(valuation.cva.standard_error);
    row
}

fn cva_rows(lowered: &Lowered) -> Result<Vec<ReportRow>, RunError> {
    let paths = require_paths(lowered)?;
    let cube = simulate_cube(lowered, paths, &lowered.correlation_rows)?;
    let agreement = lowered
        .margin
        .as_ref()
        .map(|t| t.agreement())
        .transpose()
        .map_err(num("collateral"))?;
    let valuation = full_valuation(lowered, &cube, agreement.as_ref())?;
    Ok(vec![mc_row("portfolio", &valuation)])
}

/// One threshold per row, everything else held fixed, all rows priced on the
/// same scenario cube so differences are not resimulation noise.
fn collateral_rows(lowered: &Lowered) -> Result<Vec<ReportRow>, RunError> {
    let paths = require_paths(lowered)?;
    let base = lowered
        .margin
        .as_ref()
        .ok_or_else(|| invalid("margin", "required for table-collateral"))?;
    let (sweep_b, values) = match &lowered.sweep {
        Some(Sweep::ThresholdsB(v)) => (true, v),
        Some(Sweep::ThresholdsA(v)) => (false, v),
        _ => {
            return Err(invalid(
                "sweep",
                "thresholds_b or thresholds_a is required for table-collateral",
            )
            .into())
        }
    };
    let cube = simulate_cube(lowered, paths, &lowered.correlation_rows)?;
    let mut rows = Vec::with_capacity(values.len());
    for &threshold in values {
        let terms = if sweep_b {
            MarginTerms {
                threshold_b: threshold,
                ..*base
            }
        } else {
            MarginTerms {
                threshold_a: threshold,
                ..*base
            }
        };
        let agreement = terms.agreement().map_err(|e| invalid("sweep", e))?;
        let valuation = full_valuation(lowered, &cube, Some(&agreement))?;
        rows.push(mc_row(format_sig6(threshold), &valuation));
    }
    Ok(rows)
}

/// One equity-against-counterparty-hazard driver correlation per row. Each
/// row resimulates from the same seed so the draw sequence is shared and
/// only the loading differs.
fn wrongway_rows(lowered: &Lowered) -> Result<Vec<ReportRow>, RunError> {
    let paths = require_paths(lowered)?;
    let values = match &lowered.sweep {
        Some(Sweep::Correlations(v)) => v,
        _ => return Err(invalid("sweep", "correlations is required for table-wrongway").into()),
    };
    let position = |role: FactorRole, name: &str| {
        lowered
            .processes
            .iter()
            .position(|p| p.role == role)
            .ok_or_else(|| {
                invalid(
                    "process",
                    format!("a {name} factor is required for table-wrongway"),
                )
            })
    };
    let i_equity = position(FactorRole::Equity, "equity")?;
    let i_hazard = position(FactorRole::HazardB, "hazard-b")?;
    let n = lowered.processes.len();
    let agreement = lowered
        .margin
        .as_ref()
        .map(|t| t.agreement())
        .transpose()
        .map_err(num("collateral"))?;
    let mut rows = Vec::with_capacity(values.len());
    for &c in values {
        let mut entries = lowered.correlation_rows.clone();
        entries[i_equity * n + i_hazard] = c;
        entries[i_hazard * n + i_equity] = c;
        let cube = simulate_cube(lowered, paths, &entries)?;
        let valuation = full_valuation(lowered, &cube, agreement.as_ref())?;
        rows.push(mc_row(format_sig6(c), &valuation));
    }
    Ok(rows)
}
