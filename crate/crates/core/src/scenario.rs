//! Correlated Monte-Carlo paths for market risk factors on a shared node
//! grid.
//!
//! Paths are generated per factor with exact mean-reversion drift and an
//! Euler diffusion term (full truncation for the square-root process, log
//! space for the lognormal ones), correlated through a symmetric
//! positive-semidefinite square root of the factor correlation matrix.
//! Every path draws from its own counter-based substream keyed by the path
//! index, so the cube is reproducible for a fixed seed regardless of worker
//! count, and growing the path count leaves existing paths untouched.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("grid needs at least two node times")]
    EmptyGrid,
    #[error("grid must start at time 0, got {0}")]
    GridMustStartAtZero(f64),
    #[error("grid times must be finite and strictly increasing (node {index})")]
    BadGridTime { index: usize },
    #[error("horizon must be positive and finite, got {0}")]
    BadHorizon(f64),
    #[error("bucket step must be positive and finite, got {0}")]
    BadBucketStep(f64),
    #[error("margin period must be nonnegative and finite, got {0}")]
    BadMarginPeriod(f64),
    #[error("no processes given")]
    NoProcesses,
    #[error("path count must be at least 1")]
    NoPaths,
    #[error("factor role {0:?} appears more than once")]
    DuplicateRole(FactorRole),
    #[error("correlation matrix is {actual}x{actual}, need {expected}x{expected}")]
    CorrelationSize { expected: usize, actual: usize },
    #[error("correlation entry ({row},{col}) = {value} outside [-1, 1]")]
    CorrelationEntryOutOfRange { row: usize, col: usize, value: f64 },
    #[error("correlation matrix is not symmetric at ({row},{col})")]
    CorrelationNotSymmetric { row: usize, col: usize },
    #[error("correlation diagonal entry {index} is not 1")]
    CorrelationNotUnitDiagonal { index: usize },
    #[error("correlation matrix has negative eigenvalue {eigenvalue}")]
    CorrelationNotPsd { eigenvalue: f64 },
    #[error("{role:?} initial value {value} is invalid for its process kind")]
    BadInitial { role: FactorRole, value: f64 },
    #[error("{role:?} volatility {value} must be nonnegative and finite")]
    BadVolatility { role: FactorRole, value: f64 },
    #[error("{role:?} long-run level {value} is invalid for its process kind")]
    BadLevel { role: FactorRole, value: f64 },
    #[error("{role:?} mean-reversion speed {value} must be nonnegative and finite")]
    BadMeanReversion { role: FactorRole, value: f64 },
    #[error("{role:?} drift {value} must be finite")]
    BadDrift { role: FactorRole, value: f64 },
    #[error("feller check only applies to the square-root process")]
    NotSquareRoot,
    #[error("time {t} lies outside the grid")]
    TimeOutsideGrid { t: f64 },
}

/// What a simulated factor drives downstream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FactorRole {
    Rate,
    HazardA,
    HazardB,
    Equity,
    Fx,
    Collateral,
}

/// Single-factor dynamics. The square-root process carries its raw state
/// between steps and clamps at zero only where the state is read, which is
/// the full-truncation convention.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProcessKind {
    /// dX = mu X dt + sigma X dW, stepped exactly in log space.
    GeometricBrownian { drift: f64, volatility: f64 },
    /// dX = speed (level - X) dt + sigma sqrt(X) dW, exact drift plus
    /// truncated diffusion.
    CoxIngersollRoss {
        speed: f64,
        level: f64,
        volatility: f64,
    },
    /// d ln X = speed (ln level - ln X) dt + sigma dW.
    BlackKarasinski {
        speed: f64,
        level: f64,
        volatility: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProcessSpec {
    pub role: FactorRole,
    pub kind: ProcessKind,
    pub initial: f64,
}

impl ProcessSpec {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let role = self.role;
        let bad_initial = ScenarioError::BadInitial {
            role,
            value: self.initial,
        };
        match self.kind {
            ProcessKind::GeometricBrownian { drift, volatility } => {
                if !(self.initial.is_finite() && self.initial > 0.0) {
                    return Err(bad_initial);
                }
                if !drift.is_finite() {
                    return Err(ScenarioError::BadDrift { role, value: drift });
                }
                check_volatility(role, volatility)?;
            }
            ProcessKind::CoxIngersollRoss {
                speed,
                level,
                volatility,
            } => {
                if !(self.initial.is_finite() && self.initial >= 0.0) {
                    return Err(bad_initial);
                }
                if !(level.is_finite() && level >= 0.0) {
                    return Err(ScenarioError::BadLevel { role, value: level });
                }
                check_speed(role, speed)?;
                check_volatility(role, volatility)?;
            }
            ProcessKind::BlackKarasinski {
                speed,
                level,
                volatility,
            } => {
                if !(self.initial.is_finite() && self.initial > 0.0) {
                    return Err(bad_initial);
                }
                if !(level.is_finite() && level > 0.0) {
                    return Err(ScenarioError::BadLevel { role, value: level });
                }
                check_speed(role, speed)?;
                check_volatility(role, volatility)?;
            }
        }
        Ok(())
    }
}

fn check_volatility(role: FactorRole, v: f64) -> Result<(), ScenarioError> {
    if !(v.is_finite() && v >= 0.0) {
        return Err(ScenarioError::BadVolatility { role, value: v });
    }
    Ok(())
}

fn check_speed(role: FactorRole, v: f64) -> Result<(), ScenarioError> {
    if !(v.is_finite() && v >= 0.0) {
        return Err(ScenarioError::BadMeanReversion { role, value: v });
    }
    Ok(())
}

/// Positivity diagnostic for the square-root process.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FellerReport {
    pub satisfied: bool,
    pub two_speed_level: f64,
    pub volatility_squared: f64,
}

impl std::fmt::Display for FellerReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "2*speed*level = {} {} volatility^2 = {}",
            self.two_speed_level,
            if self.satisfied { ">=" } else { "<" },
            self.volatility_squared
        )
    }
}

/// Whether the square-root process stays strictly positive (the origin is
/// unattainable). Truncation keeps simulation well defined either way, so a
/// failed check is advisory, not fatal.
pub fn feller_check(spec: &ProcessSpec) -> Result<FellerReport, ScenarioError> {
    match spec.kind {
        ProcessKind::CoxIngersollRoss {
            speed,
            level,
            volatility,
        } => {
            let two_speed_level = 2.0 * speed * level;
            let volatility_squared = volatility * volatility;
            Ok(FellerReport {
                satisfied: two_speed_level >= volatility_squared,
                two_speed_level,
                volatility_squared,
            })
        }
        _ => Err(ScenarioError::NotSquareRoot),
    }
}

/// One step of the raw factor state over `dt` with Brownian increment `dw`.
/// For the square-root process the input may be a raw (possibly negative)
/// carried state; read values through [`observed_state`].
pub fn transition(kind: ProcessKind, state: f64, dt: f64, dw: f64) -> f64 {
    match kind {
        ProcessKind::GeometricBrownian { drift, volatility } => {
            state * ((drift - 0.5 * volatility * volatility) * dt + volatility * dw).exp()
        }
        ProcessKind::CoxIngersollRoss {
            speed,
            level,
            volatility,
        } => {
            let x = state.max(0.0);
            level + (x - level) * (-speed * dt).exp() + volatility * x.sqrt() * dw
        }
        ProcessKind::BlackKarasinski {
            speed,
            level,
            volatility,
        } => {
            let log_level = level.ln();
            let log_next = log_level + (state.ln() - log_level) * (-speed * dt).exp();
            (log_next + volatility * dw).exp()
        }
    }
}

/// The value consumers see for a raw carried state.
pub fn observed_state(kind: ProcessKind, state: f64) -> f64 {
    match kind {
        ProcessKind::CoxIngersollRoss { .. } => state.max(0.0),
        _ => state,
    }
}

/// Simulation node times plus the bucket structure on top of them.
///
/// Buckets are the valuation dates of the backward induction; margin
/// agreements add a shadow node at each bucket's collateral call time so the
/// portfolio can be valued a margin period before the bucket date. All nodes
/// (bucket and shadow alike) are simulation steps.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeBucketGrid {
    node_times: Vec<f64>,
    bucket_nodes: Vec<usize>,
    // shadow_nodes[k-1] is the call-time node for bucket k >= 1
    shadow_nodes: Option<Vec<usize>>,
    margin_period: f64,
}

// Node times closer than this merge into one node.
const NODE_MERGE_TOL: f64 = 1e-12;

impl TimeBucketGrid {
    /// Grid whose nodes are exactly the given bucket times, which must start
    /// at zero and increase strictly.
    pub fn from_bucket_times(bucket_times: Vec<f64>) -> Result<Self, ScenarioError> {
        if bucket_times.len() < 2 {
            return Err(ScenarioError::EmptyGrid);
        }
        if bucket_times[0] != 0.0 {
            return Err(ScenarioError::GridMustStartAtZero(bucket_times[0]));
        }
        for i in 1..bucket_times.len() {
            if !bucket_times[i].is_finite() || bucket_times[i] <= bucket_times[i - 1] {
                return Err(ScenarioError::BadGridTime { index: i });
            }
        }
        let bucket_nodes = (0..bucket_times.len()).collect();
        Ok(Self {
            node_times: bucket_times,
            bucket_nodes,
            shadow_nodes: None,
            margin_period: 0.0,
        })
    }

    /// Uniform buckets covering `[0, horizon]` with spacing at most
    /// `max_step`.
    pub fn from_horizon(horizon: f64, max_step: f64) -> Result<Self, ScenarioError> {
        if !horizon.is_finite() || horizon <= 0.0 {
            return Err(ScenarioError::BadHorizon(horizon));
        }
        if !max_step.is_finite() || max_step <= 0.0 {
            return Err(ScenarioError::BadBucketStep(max_step));
        }
        let n = ((horizon / max_step - 1e-9).ceil().max(1.0)) as usize;
        let times = (0..=n).map(|k| horizon * (k as f64 / n as f64)).collect();
        Self::from_bucket_times(times)
    }

    /// Insert a collateral call node `margin_period` before every bucket
    /// date (clamped at zero, merged when it lands on an existing node).
    /// Valuations that compare collateralized against uncollateralized runs
    /// should use this grid for both so the draw sequence is shared.
    pub fn with_margin_nodes(&self, margin_period: f64) -> Result<Self, ScenarioError> {
        if !margin_period.is_finite() || margin_period < 0.0 {
            return Err(ScenarioError::BadMarginPeriod(margin_period));
        }
        let bucket_times: Vec<f64> = self.bucket_times().to_vec();
        let mut node_times = bucket_times.clone();
        for &t in &bucket_times[1..] {
            let call = (t - margin_period).max(0.0);
            insert_merged(&mut node_times, call);
        }
        let bucket_nodes = bucket_times
            .iter()
            .map(|&t| node_index_of(&node_times, t))
            .collect();
        let shadow_nodes = bucket_times[1..]
            .iter()
            .map(|&t| node_index_of(&node_times, (t - margin_period).max(0.0)))
            .collect();
        Ok(Self {
            node_times,
            bucket_nodes,
            shadow_nodes: Some(shadow_nodes),
            margin_period,
        })
    }

    pub fn node_times(&self) -> &[f64] {
        &self.node_times
    }

    pub fn n_nodes(&self) -> usize {
        self.node_times.len()
    }

    /// Number of bucket intervals; bucket dates are indexed 0..=n_buckets.
    pub fn n_buckets(&self) -> usize {
        self.bucket_nodes.len() - 1
    }

    pub fn bucket_node(&self, bucket: usize) -> usize {
        self.bucket_nodes[bucket]
    }

    pub fn bucket_time(&self, bucket: usize) -> f64 {
        self.node_times[self.bucket_nodes[bucket]]
    }

    pub fn bucket_times(&self) -> Vec<f64> {
        self.bucket_nodes
            .iter()
            .map(|&i| self.node_times[i])
            .collect()
    }

    /// Collateral call node for bucket `k >= 1`, when margin nodes exist.
    pub fn shadow_node(&self, bucket: usize) -> Option<usize> {
        self.shadow_nodes.as_ref().map(|s| s[bucket - 1])
    }

    pub fn margin_period(&self) -> f64 {
        self.margin_period
    }

    pub fn horizon(&self) -> f64 {
        *self.node_times.last().unwrap()
    }

    /// Bucket whose date is the nearest at or before `t`.
    pub fn bucket_containing(&self, t: f64) -> Result<usize, ScenarioError> {
        if !(t >= 0.0 && t <= self.horizon() + NODE_MERGE_TOL) {
            return Err(ScenarioError::TimeOutsideGrid { t });
        }
        let k = self
            .bucket_nodes
            .partition_point(|&i| self.node_times[i] <= t + NODE_MERGE_TOL);
        Ok(k.saturating_sub(1).min(self.n_buckets()))
    }

    /// Node interval containing `t` plus the linear weight toward its right
    /// node: `t = (1-w) t_i + w t_{i+1}`.
    pub fn locate(&self, t: f64) -> Result<(usize, f64), ScenarioError> {
        if !(t >= 0.0 && t <= self.horizon() + NODE_MERGE_TOL) {
            return Err(ScenarioError::TimeOutsideGrid { t });
        }
        if t >= self.horizon() {
            return Ok((self.n_nodes() - 2, 1.0));
        }
        let i = self.node_times.partition_point(|&u| u <= t) - 1;
        let left = self.node_times[i];
        let right = self.node_times[i + 1];
        Ok((i, (t - left) / (right - left)))
    }
}

fn insert_merged(times: &mut Vec<f64>, t: f64) {
    let pos = times.partition_point(|&u| u < t);
    let dup_right = pos < times.len() && (times[pos] - t).abs() <= NODE_MERGE_TOL;
    let dup_left = pos > 0 && (t - times[pos - 1]).abs() <= NODE_MERGE_TOL;
    if !dup_right && !dup_left {
        times.insert(pos, t);
    }
}

fn node_index_of(times: &[f64], t: f64) -> usize {
    let pos = times.partition_point(|&u| u < t - NODE_MERGE_TOL);
    debug_assert!((times[pos] - t).abs() <= NODE_MERGE_TOL);
    pos
}

/// Factor correlation matrix, validated symmetric with unit diagonal and no
/// negative eigenvalues beyond roundoff.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationSpec {
    n: usize,
    entries: Vec<f64>,
}

// Eigenvalues this far below zero are treated as roundoff and clamped.
const PSD_TOL: f64 = 1e-8;

impl CorrelationSpec {
    pub fn identity(n: usize) -> Self {
        let mut entries = vec![0.0; n * n];
        for i in 0..n {
            entries[i * n + i] = 1.0;
        }
        Self { n, entries }
    }

    /// Row-major entries, `n` x `n`.
    pub fn new(n: usize, entries: Vec<f64>) -> Result<Self, ScenarioError> {
        if entries.len() != n * n {
            return Err(ScenarioError::CorrelationSize {
                expected: n,
                actual: (entries.len() as f64).sqrt() as usize,
            });
        }
        let spec = Self { n, entries };
        for i in 0..n {
            if (spec.entry(i, i) - 1.0).abs() > 1e-12 {
                return Err(ScenarioError::CorrelationNotUnitDiagonal { index: i });
            }
            for j in 0..n {
                let v = spec.entry(i, j);
                if !v.is_finite() || !(-1.0..=1.0).contains(&v) {
                    return Err(ScenarioError::CorrelationEntryOutOfRange {
                        row: i,
                        col: j,
                        value: v,
                    });
                }
                if (v - spec.entry(j, i)).abs() > 1e-12 {
                    return Err(ScenarioError::CorrelationNotSymmetric { row: i, col: j });
                }
            }
        }
        spec.sqrt_psd()?;
        Ok(spec)
    }

    pub fn order(&self) -> usize {
        self.n
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    /// Symmetric PSD square root via the spectral decomposition. A spectral
    /// root (rather than Cholesky) keeps singular matrices usable, e.g. a
    /// perfectly anti-correlated pair.
    pub fn sqrt_psd(&self) -> Result<DMatrix<f64>, ScenarioError> {
        let m = DMatrix::from_row_slice(self.n, self.n, &self.entries);
        let eig = m.symmetric_eigen();
        let mut roots = DVector::zeros(self.n);
        for (i, &lambda) in eig.eigenvalues.iter().enumerate() {
            if lambda < -PSD_TOL {
                return Err(ScenarioError::CorrelationNotPsd { eigenvalue: lambda });
            }
            roots[i] = lambda.max(0.0).sqrt();
        }
        let u = &eig.eigenvectors;
        Ok(u * DMatrix::from_diagonal(&roots) * u.transpose())
    }
}

/// Simulated factor values for every (path, node, factor).
#[derive(Debug, Clone)]
pub struct ScenarioCube {
    grid: TimeBucketGrid,
    roles: Vec<FactorRole>,
    kinds: Vec<ProcessKind>,
    n_paths: usize,
    seed: u64,
    // path-major: values[(path * n_nodes + node) * n_factors + factor]
    values: Vec<f64>,
}

impl ScenarioCube {
    pub fn grid(&self) -> &TimeBucketGrid {
        &self.grid
    }

    pub fn roles(&self) -> &[FactorRole] {
        &self.roles
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn n_factors(&self) -> usize {
        self.roles.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn factor_index(&self, role: FactorRole) -> Option<usize> {
        self.roles.iter().position(|&r| r == role)
    }

    pub fn value(&self, path: usize, node: usize, factor: usize) -> f64 {
        self.values[(path * self.grid.n_nodes() + node) * self.n_factors() + factor]
    }

    /// All factor values at one node of one path.
    pub fn state_at(&self, path: usize, node: usize) -> &[f64] {
        let f = self.n_factors();
        let start = (path * self.grid.n_nodes() + node) * f;
        &self.values[start..start + f]
    }

    /// Linear-in-time interpolation of a factor between the surrounding
    /// nodes; exact on nodes.
    pub fn interpolated(&self, path: usize, factor: usize, t: f64) -> Result<f64, ScenarioError> {
        let (i, w) = self.grid.locate(t)?;
        if w == 0.0 {
            return Ok(self.value(path, i, factor));
        }
        let left = self.value(path, i, factor);
        let right = self.value(path, i + 1, factor);
        Ok(left + w * (right - left))
    }

    /// Flat binary dump: header (counts and factor names), node times, then
    /// the path-major value block as little-endian 64-bit floats.
    pub fn write_binary<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        out.write_all(b"SCUB")?;
        out.write_all(&1u32.to_le_bytes())?;
        out.write_all(&(self.n_paths as u64).to_le_bytes())?;
        out.write_all(&(self.grid.n_nodes() as u32).to_le_bytes())?;
        out.write_all(&(self.n_factors() as u32).to_le_bytes())?;
        for role in &self.roles {
            let name = format!("{role:?}");
            out.write_all(&(name.len() as u16).to_le_bytes())?;
            out.write_all(name.as_bytes())?;
        }
        for &t in self.grid.node_times() {
            out.write_all(&t.to_le_bytes())?;
        }
        for &v in &self.values {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }
}

/// Generate the scenario cube.
///
/// Draw order is fixed: per path, per node step, one standard normal per
/// factor, correlated with the spectral square root. Each path seeds an
/// independent substream of the same generator from (seed, path index).
pub fn simulate(
    specs: &[ProcessSpec],
    correlation: &CorrelationSpec,
    grid: &TimeBucketGrid,
    n_paths: usize,
    seed: u64,
) -> Result<ScenarioCube, ScenarioError> {
    if specs.is_empty() {
        return Err(ScenarioError::NoProcesses);
    }
    if n_paths == 0 {
        return Err(ScenarioError::NoPaths);
    }
    for spec in specs {
        spec.validate()?;
    }
    for (i, spec) in specs.iter().enumerate() {
        if specs[..i].iter().any(|s| s.role == spec.role) {
            return Err(ScenarioError::DuplicateRole(spec.role));
        }
    }
    let n_factors = specs.len();
    if correlation.order() != n_factors {
        return Err(ScenarioError::CorrelationSize {
            expected: n_factors,
            actual: correlation.order(),
        });
    }
    let sqrt_corr = correlation.sqrt_psd()?;
    let n_nodes = grid.n_nodes();
    let times = grid.node_times();

    let mut values = vec![0.0f64; n_paths * n_nodes * n_factors];
    values
        .par_chunks_mut(n_nodes * n_factors)
        .enumerate()
        .for_each(|(path, chunk)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(path as u64);
            let mut raw = vec![0.0f64; n_factors];
            let mut z = vec![0.0f64; n_factors];
            for (f, spec) in specs.iter().enumerate() {
                raw[f] = spec.initial;
                chunk[f] = observed_state(spec.kind, spec.initial);
            }
            for node in 1..n_nodes {
                let dt = times[node] - times[node - 1];
                let sqrt_dt = dt.sqrt();
                for zf in z.iter_mut() {
                    *zf = rng.sample(StandardNormal);
                }
                for (f, spec) in specs.iter().enumerate() {
                    let mut dw = 0.0;
                    for (j, zj) in z.iter().enumerate() {
                        dw += sqrt_corr[(f, j)] * zj;
                    }
                    raw[f] = transition(spec.kind, raw[f], dt, sqrt_dt * dw);
                    chunk[node * n_factors + f] = observed_state(spec.kind, raw[f]);
                }
            }
        });

    Ok(ScenarioCube {
        grid: grid.clone(),
        roles: specs.iter().map(|s| s.role).collect(),
        kinds: specs.iter().map(|s| s.kind).collect(),
        n_paths,
        seed,
        values,
    })
}

impl ScenarioCube {
    pub fn kind_of(&self, factor: usize) -> ProcessKind {
        self.kinds[factor]
    }
}
