//! TOML run configuration and its lowering onto engine types.
//!
//! Field checks happen here so every rejection names the field it came
//! from. The one numerical job in scope, the CDS hazard bootstrap, reports
//! through a separate channel because a diverging strip is not a malformed
//! file.

use std::fmt::Display;

use serde::Deserialize;
use thiserror::Error;

use riskyval_core::curves::CurveError;
use riskyval_core::scenario::ScenarioError;
use riskyval_core::xva::RegressionSpec;
use riskyval_core::{
    bootstrap_hazards, CashflowSchedule, CdsQuoteStrip, CreditSide, CrossTermRecoveries, CurveKind,
    DefaultTiming, EquitySwapSpec, MarginAgreement, Product, RecoveryProfile, SwapSpec,
    TermStructure, TimeBucketGrid,
};

/// Pad added past the last date a run can query so flat curves never end
/// exactly where a stub discount might look.
const CURVE_PAD: f64 = 1.0;

#[derive(Debug, Error)]
pub enum ConfigError {
    /// Keeps the toml diagnostic, which carries line and column.
    #[error("config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config: cannot read {path}: {message}")]
    Unreadable { path: String, message: String },
    #[error("config {field}: {message}")]
    Invalid { field: String, message: String },
}

pub fn invalid(field: impl Into<String>, message: impl Display) -> ConfigError {
    ConfigError::Invalid {
        field: field.into(),
        message: message.to_string(),
    }
}

/// Lowering failures split by exit class: malformed configuration against
/// numerical breakdown inside the hazard bootstrap.
#[derive(Debug, Error)]
pub enum LowerError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("curves: {0}")]
    Bootstrap(CurveError),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub discount: CurveSection,
    pub credit: CreditSection,
    pub recovery: RecoverySection,
    #[serde(default)]
    pub grid: Option<GridSection>,
    #[serde(default)]
    pub margin: Option<MarginSection>,
    #[serde(default, rename = "process")]
    pub processes: Vec<ProcessSection>,
    #[serde(default)]
    pub correlation: Option<CorrelationSection>,
    #[serde(default)]
    pub regression: Option<RegressionSection>,
    #[serde(rename = "product")]
    pub products: Vec<ProductSection>,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    #[serde(default)]
    pub paths: Option<usize>,
    pub side: String,
    #[serde(default)]
    pub rho: f64,
    #[serde(default = "default_netting")]
    pub netting: bool,
    #[serde(default = "default_timing")]
    pub timing: String,
    #[serde(default = "default_ctm_step")]
    pub ctm_step: f64,
}

fn default_netting() -> bool {
    true
}

fn default_timing() -> String {
    "dtm".to_string()
}

fn default_ctm_step() -> f64 {
    1.0 / 512.0
}

/// Either a flat rate or interval end times with one rate per interval.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveSection {
    #[serde(default)]
    pub rate: Option<f64>,
    #[serde(default)]
    pub times: Option<Vec<f64>>,
    #[serde(default)]
    pub rates: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreditSection {
    pub b: PartySection,
    #[serde(default)]
    pub a: Option<PartySection>,
}

/// One of: a flat hazard, a node hazard curve, or a CDS strip to bootstrap.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartySection {
    #[serde(default)]
    pub hazard: Option<f64>,
    #[serde(default)]
    pub times: Option<Vec<f64>>,
    #[serde(default)]
    pub rates: Option<Vec<f64>>,
    #[serde(default)]
    pub cds: Option<CdsSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CdsSection {
    pub maturities: Vec<f64>,
    pub spreads: Vec<f64>,
    pub recovery: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecoverySection {
    pub phi_b: f64,
    #[serde(default)]
    pub phi_a: Option<f64>,
    #[serde(default)]
    pub phibar_b: Option<f64>,
    #[serde(default)]
    pub phibar_a: Option<f64>,
    #[serde(default)]
    pub phi_ab: Option<f64>,
    #[serde(default)]
    pub cross_term: Option<String>,
}

/// Bucket dates, either listed outright or spanned by a horizon and a
/// maximum step.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(default)]
    pub horizon: Option<f64>,
    #[serde(default)]
    pub step: Option<f64>,
    #[serde(default)]
    pub times: Option<Vec<f64>>,
}

/// Thresholds and minimum transfer amounts take `inf` to disable a side.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarginSection {
    pub threshold_b: f64,
    #[serde(default)]
    pub mta_b: f64,
    pub threshold_a: f64,
    #[serde(default)]
    pub mta_a: f64,
    pub period: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessSection {
    pub role: String,
    pub kind: String,
    pub initial: f64,
    #[serde(default)]
    pub drift: Option<f64>,
    #[serde(default)]
    pub speed: Option<f64>,
    #[serde(default)]
    pub level: Option<f64>,
    #[serde(default)]
    pub volatility: Option<f64>,
}

/// Driver correlation, rows in `[[process]]` order.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrelationSection {
    pub matrix: Vec<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressionSection {
    pub degree: u32,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProductSection {
    pub kind: String,
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default)]
    pub times: Option<Vec<f64>>,
    #[serde(default)]
    pub amounts: Option<Vec<f64>>,
    #[serde(default)]
    pub notional: Option<f64>,
    #[serde(default)]
    pub fixed_rate: Option<f64>,
    #[serde(default)]
    pub pay_fixed: Option<bool>,
    #[serde(default)]
    pub pay_equity: Option<bool>,
    #[serde(default)]
    pub start: Option<f64>,
    #[serde(default)]
    pub periods: Option<usize>,
    #[serde(default)]
    pub span: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(default)]
    pub thresholds_b: Option<Vec<f64>>,
    #[serde(default)]
    pub thresholds_a: Option<Vec<f64>>,
    #[serde(default)]
    pub correlations: Option<Vec<f64>>,
}

/// Margin terms kept apart from the built agreement so threshold sweeps can
/// rebuild one per row.
#[derive(Debug, Clone, Copy)]
pub struct MarginTerms {
    pub threshold_b: f64,
    pub mta_b: f64,
    pub threshold_a: f64,
    pub mta_a: f64,
    pub period: f64,
}

impl MarginTerms {
    pub fn agreement(&self) -> Result<MarginAgreement, riskyval_core::collateral::CollateralError> {
        MarginAgreement::new(
            self.threshold_b,
            self.mta_b,
            self.threshold_a,
            self.mta_a,
            self.period,
        )
    }
}

#[derive(Debug, Clone)]
pub enum Sweep {
    ThresholdsB(Vec<f64>),
    ThresholdsA(Vec<f64>),
    Correlations(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct LabeledProduct {
    pub label: String,
    pub product: Product,
}

/// Everything a command needs, already in engine terms.
#[derive(Debug)]
pub struct Lowered {
    pub seed: u64,
    pub paths: Option<usize>,
    pub side: CreditSide,
    pub timing: DefaultTiming,
    pub rho: f64,
    pub netting: bool,
    pub ctm_step: f64,
    pub regression: RegressionSpec,
    pub discount: TermStructure,
    pub hazard_b: TermStructure,
    pub hazard_a: Option<TermStructure>,
    pub recoveries: RecoveryProfile,
    pub grid: Option<TimeBucketGrid>,
    pub margin: Option<MarginTerms>,
    pub processes: Vec<riskyval_core::ProcessSpec>,
    /// Row-major driver correlation, identity when the section is absent.
    pub correlation_rows: Vec<f64>,
    pub products: Vec<LabeledProduct>,
    pub sweep: Option<Sweep>,
}

pub fn parse(text: &str) -> Result<RunConfig, ConfigError> {
    Ok(toml::from_str(text)?)
}

pub fn lower(cfg: &RunConfig) -> Result<Lowered, LowerError> {
    let side = match cfg.run.side.as_str() {
        "unilateral" => CreditSide::UnilateralB,
        "bilateral" => CreditSide::Bilateral,
        other => {
            return Err(invalid(
                "run.side",
                format!("expected \"unilateral\" or \"bilateral\", got \"{other}\""),
            )
            .into())
        }
    };
    let timing = match cfg.run.timing.as_str() {
        "ctm" => DefaultTiming::Ctm,
        "dtm" => DefaultTiming::Dtm,
        other => {
            return Err(invalid(
                "run.timing",
                format!("expected \"ctm\" or \"dtm\", got \"{other}\""),
            )
            .into())
        }
    };
    if !cfg.run.rho.is_finite() || !(-1.0..=1.0).contains(&cfg.run.rho) {
        return Err(invalid("run.rho", "must lie in [-1, 1]").into());
    }
    if side == CreditSide::UnilateralB && cfg.run.rho != 0.0 {
        return Err(invalid("run.rho", "only used by bilateral runs").into());
    }
    if !cfg.run.ctm_step.is_finite() || cfg.run.ctm_step <= 0.0 {
        return Err(invalid("run.ctm_step", "must be positive").into());
    }
    if cfg.run.paths == Some(0) {
        return Err(invalid("run.paths", "must be positive").into());
    }

    let products = lower_products(&cfg.products)?;
    let last_payment = products
        .iter()
        .map(|p| p.product.last_payment())
        .fold(0.0, f64::max);

    let grid_times = cfg.grid.as_ref().map(lower_grid_times).transpose()?;
    let grid_horizon = grid_times
        .as_ref()
        .map(|t| *t.last().unwrap())
        .unwrap_or(0.0);
    let needed = last_payment.max(grid_horizon);

    let cds_last = |p: &PartySection| -> f64 {
        p.cds
            .as_ref()
            .and_then(|c| c.maturities.last().copied())
            .unwrap_or(0.0)
    };
    let discount_needed = needed
        .max(cds_last(&cfg.credit.b))
        .max(cfg.credit.a.as_ref().map(&cds_last).unwrap_or(0.0));
    let discount = lower_curve(
        "discount",
        &cfg.discount,
        CurveKind::Interest,
        discount_needed,
    )?;

    let hazard_b = lower_party("credit.b", &cfg.credit.b, &discount, needed)?;
    let hazard_a = match (&cfg.credit.a, side) {
        (Some(a), CreditSide::Bilateral) => Some(lower_party("credit.a", a, &discount, needed)?),
        (Some(_), CreditSide::UnilateralB) => {
            return Err(invalid(
                "credit.a",
                "only used by bilateral runs; remove it or set run.side",
            )
            .into())
        }
        (None, _) => None,
    };

    let processes = lower_processes(&cfg.processes)?;
    if side == CreditSide::Bilateral
        && hazard_a.is_none()
        && !processes
            .iter()
            .any(|p| p.role == riskyval_core::FactorRole::HazardA)
    {
        return Err(invalid(
            "credit.a",
            "required for bilateral runs unless a hazard-a factor is simulated",
        )
        .into());
    }

    let recoveries = lower_recoveries(&cfg.recovery, side)?;

    let margin = match &cfg.margin {
        Some(m) => {
            let terms = MarginTerms {
                threshold_b: m.threshold_b,
                mta_b: m.mta_b,
                threshold_a: m.threshold_a,
                mta_a: m.mta_a,
                period: m.period,
            };
            terms.agreement().map_err(|e| invalid("margin", e))?;
            Some(terms)
        }
        None => None,
    };

    let grid = match grid_times {
        Some(times) => {
            let base =
                TimeBucketGrid::from_bucket_times(times).map_err(|e| invalid("grid.times", e))?;
            let with_margin = match &margin {
                Some(t) => base
                    .with_margin_nodes(t.period)
                    .map_err(|e| invalid("margin.period", e))?,
                None => base,
            };
            Some(with_margin)
        }
        None => None,
    };

    let correlation_rows = lower_correlation(cfg.correlation.as_ref(), processes.len())?;

    let regression = match &cfg.regression {
        Some(r) => RegressionSpec::new(r.degree),
        None => RegressionSpec::default(),
    };

    let sweep = cfg.sweep.as_ref().map(lower_sweep).transpose()?;

    Ok(Lowered {
        seed: cfg.run.seed,
        paths: cfg.run.paths,
        side,
        timing,
        rho: cfg.run.rho,
        netting: cfg.run.netting,
        ctm_step: cfg.run.ctm_step,
        regression,
        discount,
        hazard_b,
        hazard_a,
        recoveries,
        grid,
        margin,
        processes,
        correlation_rows,
        products,
        sweep,
    })
}

fn lower_curve(
    field: &str,
    section: &CurveSection,
    kind: CurveKind,
    needed: f64,
) -> Result<TermStructure, ConfigError> {
    let parts = (
        section.rate.as_ref(),
        section.times.as_ref(),
        section.rates.as_ref(),
    );
    match parts {
        (Some(rate), None, None) => TermStructure::flat(kind, *rate, needed + CURVE_PAD)
            .map_err(|e| invalid(format!("{field}.rate"), e)),
        (None, Some(times), Some(rates)) => {
            let mut node_times = Vec::with_capacity(times.len() + 1);
            node_times.push(0.0);
            node_times.extend_from_slice(times);
            let curve = TermStructure::new(kind, node_times, rates.clone())
                .map_err(|e| invalid(format!("{field}.times"), e))?;
            if curve.horizon() < needed - 1e-9 {
                return Err(invalid(
                    format!("{field}.times"),
                    format!(
                        "curve ends at {} but the run needs {needed}",
                        curve.horizon()
                    ),
                ));
            }
            Ok(curve)
        }
        _ => Err(invalid(
            field,
            "give either a flat rate or times with one rate per interval",
        )),
    }
}

fn lower_party(
    field: &str,
    section: &PartySection,
    discount: &TermStructure,
    needed: f64,
) -> Result<TermStructure, LowerError> {
    let shapes = usize::from(section.hazard.is_some())
        + usize::from(section.times.is_some() || section.rates.is_some())
        + usize::from(section.cds.is_some());
    if shapes != 1 {
        return Err(invalid(
            field,
            "give exactly one of a flat hazard, a node curve, or a cds strip",
        )
        .into());
    }
    if let Some(h) = section.hazard {
        return TermStructure::flat(CurveKind::Hazard, h, needed + CURVE_PAD)
            .map_err(|e| invalid(format!("{field}.hazard"), e).into());
    }
    if let Some(cds) = &section.cds {
        let strip = CdsQuoteStrip::new(cds.maturities.clone(), cds.spreads.clone(), cds.recovery)
            .map_err(|e| invalid(format!("{field}.cds"), e))?;
        let curve = bootstrap_hazards(&strip, discount).map_err(LowerError::Bootstrap)?;
        if curve.horizon() < needed - 1e-9 {
            return Err(invalid(
                format!("{field}.cds.maturities"),
                format!(
                    "strip ends at {} but the run needs {needed}",
                    curve.horizon()
                ),
            )
            .into());
        }
        return Ok(curve);
    }
    let pseudo = CurveSection {
        rate: None,
        times: section.times.clone(),
        rates: section.rates.clone(),
    };
    lower_curve(field, &pseudo, CurveKind::Hazard, needed).map_err(Into::into)
}

fn lower_recoveries(
    section: &RecoverySection,
    side: CreditSide,
) -> Result<RecoveryProfile, ConfigError> {
    if side == CreditSide::Bilateral && section.phi_a.is_none() {
        return Err(invalid("recovery.phi_a", "required for bilateral runs"));
    }
    let profile = RecoveryProfile::new(
        section.phi_a.unwrap_or(0.0),
        section.phi_b,
        section.phibar_a.unwrap_or(1.0),
        section.phibar_b.unwrap_or(1.0),
        section.phi_ab.unwrap_or(0.0),
    )
    .map_err(|e| invalid("recovery", e))?;
    let cross_term = match section.cross_term.as_deref() {
        None | Some("own-party") => CrossTermRecoveries::OwnParty,
        Some("party-b") => CrossTermRecoveries::PartyB,
        Some(other) => {
            return Err(invalid(
                "recovery.cross_term",
                format!("expected \"own-party\" or \"party-b\", got \"{other}\""),
            ))
        }
    };
    Ok(profile.with_cross_term(cross_term))
}

/// Bucket dates including the leading 0.
fn lower_grid_times(section: &GridSection) -> Result<Vec<f64>, ConfigError> {
    let parts = (section.times.as_ref(), section.horizon, section.step);
    match parts {
        (Some(times), None, None) => {
            let mut full = Vec::with_capacity(times.len() + 1);
            full.push(0.0);
            full.extend_from_slice(times);
            for i in 1..full.len() {
                if !full[i].is_finite() || full[i] <= full[i - 1] {
                    return Err(invalid(
                        "grid.times",
                        "must be positive and strictly increasing",
                    ));
                }
            }
            if full.len() < 2 {
                return Err(invalid("grid.times", "needs at least one bucket date"));
            }
            Ok(full)
        }
        (None, Some(horizon), Some(step)) => {
            if !horizon.is_finite() || horizon <= 0.0 {
                return Err(invalid("grid.horizon", "must be positive"));
            }
            if !step.is_finite() || step <= 0.0 {
                return Err(invalid("grid.step", "must be positive"));
            }
            let n = ((horizon / step - 1e-9).ceil().max(1.0)) as usize;
            let mut full = Vec::with_capacity(n + 1);
            for i in 0..=n {
                full.push(horizon * i as f64 / n as f64);
            }
            Ok(full)
        }
        _ => Err(invalid("grid", "give either times or a horizon and a step")),
    }
}

fn lower_processes(
    sections: &[ProcessSection],
) -> Result<Vec<riskyval_core::ProcessSpec>, ConfigError> {
    use riskyval_core::{FactorRole, ProcessKind, ProcessSpec};
    let mut specs = Vec::with_capacity(sections.len());
    for (i, s) in sections.iter().enumerate() {
        let field = |name: &str| format!("process[{i}].{name}");
        let role = match s.role.as_str() {
            "rate" => FactorRole::Rate,
            "hazard-a" => FactorRole::HazardA,
            "hazard-b" => FactorRole::HazardB,
            "equity" => FactorRole::Equity,
            "fx" => FactorRole::Fx,
            "collateral" => FactorRole::Collateral,
            other => {
                return Err(invalid(
                    field("role"),
                    format!(
                        "expected rate, hazard-a, hazard-b, equity, fx, or collateral, \
                         got \"{other}\""
                    ),
                ))
            }
        };
        let need = |name: &str, v: Option<f64>| {
            v.ok_or_else(|| invalid(field(name), format!("required by the {} kind", s.kind)))
        };
        let forbid = |name: &str, v: Option<f64>| match v {
            Some(_) => Err(invalid(
                field(name),
                format!("not a parameter of the {} kind", s.kind),
            )),
            None => Ok(()),
        };
        let kind = match s.kind.as_str() {
            "gbm" => {
                forbid("speed", s.speed)?;
                forbid("level", s.level)?;
                ProcessKind::GeometricBrownian {
                    drift: s.drift.unwrap_or(0.0),
                    volatility: need("volatility", s.volatility)?,
                }
            }
            "cir" => {
                forbid("drift", s.drift)?;
                ProcessKind::CoxIngersollRoss {
                    speed: need("speed", s.speed)?,
                    level: need("level", s.level)?,
                    volatility: need("volatility", s.volatility)?,
                }
            }
            "bk" => {
                forbid("drift", s.drift)?;
                ProcessKind::BlackKarasinski {
                    speed: need("speed", s.speed)?,
                    level: need("level", s.level)?,
                    volatility: need("volatility", s.volatility)?,
                }
            }
            other => {
                return Err(invalid(
                    field("kind"),
                    format!("expected gbm, cir, or bk, got \"{other}\""),
                ))
            }
        };
        let spec = ProcessSpec {
            role,
            kind,
            initial: s.initial,
        };
        spec.validate()
            .map_err(|e: ScenarioError| invalid(format!("process[{i}]"), e))?;
        if specs.iter().any(|p: &ProcessSpec| p.role == role) {
            return Err(invalid(
                field("role"),
                format!("duplicate role \"{}\"", s.role),
            ));
        }
        specs.push(spec);
    }
    Ok(specs)
}

fn lower_correlation(
    section: Option<&CorrelationSection>,
    n: usize,
) -> Result<Vec<f64>, ConfigError> {
    let Some(section) = section else {
        let mut rows = vec![0.0; n * n];
        for i in 0..n {
            rows[i * n + i] = 1.0;
        }
        return Ok(rows);
    };
    if n == 0 {
        return Err(invalid(
            "correlation",
            "needs at least one [[process]] entry",
        ));
    }
    if section.matrix.len() != n || section.matrix.iter().any(|r| r.len() != n) {
        return Err(invalid(
            "correlation.matrix",
            format!("must be {n}x{n} to match the [[process]] list"),
        ));
    }
    let rows: Vec<f64> = section.matrix.iter().flatten().copied().collect();
    riskyval_core::CorrelationSpec::new(n, rows.clone())
        .map_err(|e| invalid("correlation.matrix", e))?;
    Ok(rows)
}

fn lower_sweep(section: &SweepSection) -> Result<Sweep, ConfigError> {
    let axes = usize::from(section.thresholds_b.is_some())
        + usize::from(section.thresholds_a.is_some())
        + usize::from(section.correlations.is_some());
    if axes != 1 {
        return Err(invalid(
            "sweep",
            "give exactly one of thresholds_b, thresholds_a, or correlations",
        ));
    }
    if let Some(v) = &section.thresholds_b {
        check_thresholds("sweep.thresholds_b", v)?;
        return Ok(Sweep::ThresholdsB(v.clone()));
    }
    if let Some(v) = &section.thresholds_a {
        check_thresholds("sweep.thresholds_a", v)?;
        return Ok(Sweep::ThresholdsA(v.clone()));
    }
    let v = section.correlations.as_ref().unwrap();
    if v.is_empty() {
        return Err(invalid("sweep.correlations", "must not be empty"));
    }
    for &c in v {
        if !c.is_finite() || !(-1.0..=1.0).contains(&c) {
            return Err(invalid("sweep.correlations", "entries must lie in [-1, 1]"));
        }
    }
    Ok(Sweep::Correlations(v.clone()))
}

fn check_thresholds(field: &str, v: &[f64]) -> Result<(), ConfigError> {
    if v.is_empty() {
        return Err(invalid(field, "must not be empty"));
    }
    for &t in v {
        // +inf disables the side, so only NaN and negatives are malformed
        if t.is_nan() || t < 0.0 {
            return Err(invalid(field, "entries must be nonnegative (inf allowed)"));
        }
    }
    Ok(())
}

fn lower_products(sections: &[ProductSection]) -> Result<Vec<LabeledProduct>, ConfigError> {
    if sections.is_empty() {
        return Err(invalid("product", "at least one product is required"));
    }
    let mut out = Vec::with_capacity(sections.len());
    for (i, s) in sections.iter().enumerate() {
        let labeled = lower_product(i, s)?;
        if out
            .iter()
            .any(|p: &LabeledProduct| p.label == labeled.label)
        {
            return Err(invalid(
                format!("product[{i}].label"),
                format!("duplicate label \"{}\"", labeled.label),
            ));
        }
        out.push(labeled);
    }
    Ok(out)
}

fn lower_product(i: usize, s: &ProductSection) -> Result<LabeledProduct, ConfigError> {
    let field = |name: &str| format!("product[{i}].{name}");
    let label = match &s.label {
        Some(l) => {
            if l.is_empty() || l.contains([',', '"', '\n', '\r']) {
                return Err(invalid(
                    field("label"),
                    "must be nonempty without commas, quotes, or newlines",
                ));
            }
            l.clone()
        }
        None => format!("product-{}", i + 1),
    };
    let need_f = |name: &str, v: Option<f64>| {
        v.ok_or_else(|| invalid(field(name), format!("required by the {} kind", s.kind)))
    };
    let forbid = |name: &str, given: bool| {
        if given {
            Err(invalid(
                field(name),
                format!("not a field of the {} kind", s.kind),
            ))
        } else {
            Ok(())
        }
    };
    let product = match s.kind.as_str() {
        "schedule" => {
            forbid("notional", s.notional.is_some())?;
            forbid("fixed_rate", s.fixed_rate.is_some())?;
            forbid("pay_fixed", s.pay_fixed.is_some())?;
            forbid("pay_equity", s.pay_equity.is_some())?;
            forbid("start", s.start.is_some())?;
            forbid("periods", s.periods.is_some())?;
            forbid("span", s.span.is_some())?;
            let times = s
                .times
                .clone()
                .ok_or_else(|| invalid(field("times"), "required by the schedule kind"))?;
            let amounts = s
                .amounts
                .clone()
                .ok_or_else(|| invalid(field("amounts"), "required by the schedule kind"))?;
            let schedule = CashflowSchedule::new(times, amounts)
                .map_err(|e| invalid(format!("product[{i}]"), e))?;
            Product::Schedule(schedule)
        }
        "swap" => {
            forbid("times", s.times.is_some())?;
            forbid("amounts", s.amounts.is_some())?;
            forbid("pay_equity", s.pay_equity.is_some())?;
            let spec = SwapSpec::standard(
                need_f("notional", s.notional)?,
                need_f("fixed_rate", s.fixed_rate)?,
                s.pay_fixed
                    .ok_or_else(|| invalid(field("pay_fixed"), "required by the swap kind"))?,
                s.start.unwrap_or(0.0),
                s.periods
                    .ok_or_else(|| invalid(field("periods"), "required by the swap kind"))?,
                need_f("span", s.span)?,
            )
            .map_err(|e| invalid(format!("product[{i}]"), e))?;
            Product::Swap(spec)
        }
        "equity-swap" => {
            forbid("times", s.times.is_some())?;
            forbid("amounts", s.amounts.is_some())?;
            forbid("pay_fixed", s.pay_fixed.is_some())?;
            let spec = EquitySwapSpec::standard(
                need_f("notional", s.notional)?,
                need_f("fixed_rate", s.fixed_rate)?,
                s.pay_equity.ok_or_else(|| {
                    invalid(field("pay_equity"), "required by the equity-swap kind")
                })?,
                s.start.unwrap_or(0.0),
                s.periods
                    .ok_or_else(|| invalid(field("periods"), "required by the equity-swap kind"))?,
                need_f("span", s.span)?,
            )
            .map_err(|e| invalid(format!("product[{i}]"), e))?;
            Product::EquitySwap(spec)
        }
        other => {
            return Err(invalid(
                field("kind"),
                format!("expected schedule, swap, or equity-swap, got \"{other}\""),
            ))
        }
    };
    Ok(LabeledProduct { label, product })
}
