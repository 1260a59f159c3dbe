//! Structural identification of the monetary-policy impact column and
//! bootstrap confidence bands.
//!
//! Two identification schemes are provided: a two-stage external-instrument
//! regression on the reduced-form residuals (with first-stage F screening
//! and an information-shock filter for high-frequency surprises), and sign
//! restrictions checked on impulse responses of rotated Cholesky factors.
//! Confidence bands come from a moving-block bootstrap of the descaled
//! residuals with per-replication re-estimation and re-identification.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg;
use crate::period::Period;
use crate::var::{self, Irf, VarError, VarModel, VolatilityOptions};

#[derive(Debug, Error)]
pub enum IdentifyError {
    #[error("only {overlap} overlapping observations between residuals and instrument, need {needed}")]
    NoOverlap { overlap: usize, needed: usize },
    #[error("first-stage slope is numerically zero")]
    ZeroFirstStage,
    #[error("sign constraint at horizon {horizon} exceeds impulse-response horizon {max}")]
    HorizonOutOfRange { horizon: usize, max: usize },
    #[error("innovation covariance has no Cholesky factor")]
    CholeskyFailure,
    #[error("instrument {name} is constant over its observed support")]
    ConstantInstrument { name: String },
    #[error("sign constraints conflict at variable {variable}, horizon {horizon}")]
    ConflictingSigns { variable: usize, horizon: usize },
    #[error("{dropped} of {total} bootstrap replications failed")]
    BootstrapDegenerate { dropped: usize, total: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("sign spec references unknown variable {0:?}")]
    UnknownVariable(String),
    #[error(transparent)]
    Var(#[from] VarError),
}

/// An external instrument series with missing values, tied to the policy
/// variable it instruments.
#[derive(Debug, Clone)]
pub struct Instrument {
    pub name: String,
    pub periods: Vec<Period>,
    /// Instrument values; `NaN` marks unobserved periods.
    pub z: Vec<f64>,
    /// Index of the policy variable inside the VAR.
    pub policy_index: usize,
}

impl Instrument {
    /// Validates that the instrument varies over its observed support.
    pub fn new(
        name: String,
        periods: Vec<Period>,
        z: Vec<f64>,
        policy_index: usize,
    ) -> Result<Self, IdentifyError> {
        assert_eq!(periods.len(), z.len(), "instrument axis mismatch");
        let observed: Vec<f64> = z.iter().copied().filter(|v| !v.is_nan()).collect();
        let constant = observed
            .first()
            .map(|&f| observed.iter().all(|&v| v == f))
            .unwrap_or(true);
        if constant {
            return Err(IdentifyError::ConstantInstrument { name });
        }
        Ok(Instrument { name, periods, z, policy_index })
    }

    /// Value at a period, `NaN` when unobserved or off the axis.
    pub fn at(&self, p: Period) -> f64 {
        match self.periods.iter().position(|&q| q == p) {
            Some(i) => self.z[i],
            None => f64::NAN,
        }
    }
}

/// Keep only surprises moving opposite to the paired equity surprise:
/// `z_t` survives where `sign(swap_t) * sign(equity_t) < 0` strictly, and
/// is set missing otherwise (zeros and missing pairs drop).
pub fn info_shock_filter(swap: &[f64], equity: &[f64]) -> Vec<f64> {
    assert_eq!(swap.len(), equity.len(), "surprise series length mismatch");
    swap.iter()
        .zip(equity)
        .map(|(&s, &e)| if s * e < 0.0 { s } else { f64::NAN })
        .collect()
}

/// How the impact column is scaled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Normalization {
    /// Unit impact of the shock on the policy variable.
    UnitPolicyImpact,
}

/// Identified impact column of the policy shock.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImpactColumn {
    /// Length-n impact vector with `s[policy_index] = 1`.
    pub s: DVector<f64>,
    pub normalization: Normalization,
    /// First-stage F statistic of the instrument regression.
    pub f_stat: f64,
    /// Number of periods the regression actually used.
    pub n_overlap: usize,
}

/// Two-stage identification from residuals already aligned to the
/// instrument: `z[i]` belongs to residual row `i` (`NaN` = unobserved).
pub fn proxy_iv_aligned(
    model: &VarModel,
    z: &[f64],
    policy_index: usize,
) -> Result<ImpactColumn, IdentifyError> {
    let rows = model.effective_obs();
    if z.len() != rows {
        return Err(IdentifyError::ShapeMismatch(format!(
            "{} instrument values vs {} residual rows",
            z.len(),
            rows
        )));
    }
    assert!(policy_index < model.n, "policy index out of range");
    let overlap: Vec<usize> = (0..rows).filter(|&i| !z[i].is_nan()).collect();
    let m = overlap.len();
    if m < 10 {
        return Err(IdentifyError::NoOverlap { overlap: m, needed: 10 });
    }

    let u = &model.residuals;
    let z_mean = overlap.iter().map(|&i| z[i]).sum::<f64>() / m as f64;
    let up_mean = overlap.iter().map(|&i| u[(i, policy_index)]).sum::<f64>() / m as f64;
    let mut szz = 0.0;
    let mut szu = 0.0;
    for &i in &overlap {
        let dz = z[i] - z_mean;
        szz += dz * dz;
        szu += dz * (u[(i, policy_index)] - up_mean);
    }
    if szz <= 0.0 {
        return Err(IdentifyError::ZeroFirstStage);
    }
    let beta = szu / szz;
    if beta == 0.0 || !beta.is_finite() {
        return Err(IdentifyError::ZeroFirstStage);
    }
    let alpha = up_mean - beta * z_mean;

    let mut rss = 0.0;
    let mut fitted = vec![0.0; rows];
    let mut fit_ss = 0.0;
    for &i in &overlap {
        let f = alpha + beta * z[i];
        fitted[i] = f;
        let resid = u[(i, policy_index)] - f;
        rss += resid * resid;
        fit_ss += f * f;
    }
    let se2 = rss / (m as f64 - 2.0) / szz;
    let f_stat = beta * beta / se2;

    let mut s = DVector::zeros(model.n);
    s[policy_index] = 1.0;
    for j in 0..model.n {
        if j == policy_index {
            continue;
        }
        let num: f64 = overlap.iter().map(|&i| fitted[i] * u[(i, j)]).sum();
        s[j] = num / fit_ss;
    }
    Ok(ImpactColumn { s, normalization: Normalization::UnitPolicyImpact, f_stat, n_overlap: m })
}

/// Align an instrument to the model's residual rows through the data
/// period axis (`y_periods[p + i]` belongs to residual row `i`), then run
/// the two-stage identification.
pub fn proxy_iv(
    model: &VarModel,
    instrument: &Instrument,
    y_periods: &[Period],
) -> Result<ImpactColumn, IdentifyError> {
    let rows = model.effective_obs();
    if y_periods.len() != rows + model.p {
        return Err(IdentifyError::ShapeMismatch(format!(
            "{} periods vs p = {} + {} residual rows",
            y_periods.len(),
            model.p,
            rows
        )));
    }
    let z: Vec<f64> = (0..rows).map(|i| instrument.at(y_periods[model.p + i])).collect();
    proxy_iv_aligned(model, &z, instrument.policy_index)
}

/// One screened instrument candidate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScreenEntry {
    pub name: String,
    /// First-stage F when the candidate was usable.
    pub f_stat: Option<f64>,
    /// F above the conventional strength threshold of 10.
    pub strong: bool,
    pub impact: Option<ImpactColumn>,
    pub error: Option<String>,
}

/// Rank instrument candidates by first-stage F statistic, descending;
/// candidates that fail (for example with no overlap) are reported last
/// with their error.
pub fn instrument_screen(
    model: &VarModel,
    candidates: &[Instrument],
    y_periods: &[Period],
) -> Vec<ScreenEntry> {
    assert!(!candidates.is_empty(), "need at least one candidate");
    let mut entries: Vec<ScreenEntry> = candidates
        .iter()
        .map(|cand| match proxy_iv(model, cand, y_periods) {
            Ok(impact) => ScreenEntry {
                name: cand.name.clone(),
                f_stat: Some(impact.f_stat),
                strong: impact.f_stat > 10.0,
                impact: Some(impact),
                error: None,
            },
            Err(err) => ScreenEntry {
                name: cand.name.clone(),
                f_stat: None,
                strong: false,
                impact: None,
                error: Some(err.to_string()),
            },
        })
        .collect();
    entries.sort_by(|a, b| {
        b.f_stat
            .unwrap_or(f64::NEG_INFINITY)
            .partial_cmp(&a.f_stat.unwrap_or(f64::NEG_INFINITY))
            .unwrap()
    });
    entries
}

/// Haar-distributed orthogonal matrix: QR of a standard-normal draw with
/// the R diagonal forced positive.
pub fn draw_rotation<R: Rng>(n: usize, rng: &mut R) -> DMatrix<f64> {
    assert!(n >= 1);
    let w = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    linalg::qr_positive_diag(w)
}

/// Required response sign.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sign {
    Positive,
    Negative,
}

/// One sign constraint on the policy-shock response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignConstraint {
    pub variable: usize,
    pub horizon: usize,
    pub sign: Sign,
}

/// Sign restrictions on the impulse response of the policy shock.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignSpec {
    pub constraints: Vec<SignConstraint>,
}

impl SignSpec {
    /// Validates that no cell carries conflicting signs.
    pub fn new(constraints: Vec<SignConstraint>) -> Result<Self, IdentifyError> {
        for (i, a) in constraints.iter().enumerate() {
            for b in &constraints[..i] {
                if a.variable == b.variable && a.horizon == b.horizon && a.sign != b.sign {
                    return Err(IdentifyError::ConflictingSigns {
                        variable: a.variable,
                        horizon: a.horizon,
                    });
                }
            }
        }
        Ok(SignSpec { constraints })
    }

    pub fn max_horizon(&self) -> usize {
        self.constraints.iter().map(|c| c.horizon).max().unwrap_or(0)
    }
}

/// Wire format of one sign restriction: variable by label or index,
/// sign as `"+"` or `"-"`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SignConstraintFile {
    pub variable: String,
    pub horizon: usize,
    pub sign: String,
}

/// Resolve a JSON-loaded constraint list against the VAR column labels.
pub fn resolve_sign_spec(
    file: &[SignConstraintFile],
    labels: &[String],
) -> Result<SignSpec, IdentifyError> {
    let mut constraints = Vec::with_capacity(file.len());
    for c in file {
        let variable = labels
            .iter()
            .position(|l| l == &c.variable)
            .or_else(|| c.variable.parse::<usize>().ok().filter(|&i| i < labels.len()))
            .ok_or_else(|| IdentifyError::UnknownVariable(c.variable.clone()))?;
        let sign = match c.sign.as_str() {
            "+" => Sign::Positive,
            "-" => Sign::Negative,
            other => return Err(IdentifyError::UnknownVariable(format!("sign {other:?}"))),
        };
        constraints.push(SignConstraint { variable, horizon: c.horizon, sign });
    }
    SignSpec::new(constraints)
}

/// True iff every constraint holds strictly (a response of exactly zero
/// fails).
pub fn check_signs(candidate: &Irf, spec: &SignSpec) -> Result<bool, IdentifyError> {
    let max = candidate.horizons();
    if let Some(c) = spec.constraints.iter().find(|c| c.horizon > max) {
        return Err(IdentifyError::HorizonOutOfRange { horizon: c.horizon, max });
    }
    for c in &spec.constraints {
        let v = candidate.values[(c.horizon, c.variable)];
        let ok = match c.sign {
            Sign::Positive => v > 0.0,
            Sign::Negative => v < 0.0,
        };
        if !ok {
            return Ok(false);
        }
    }
    Ok(true)
}

/// One accepted rotation draw.
#[derive(Debug, Clone)]
pub struct AcceptedDraw {
    /// Impact matrix `S = L Q'` with `S S' = Sigma`.
    pub s: DMatrix<f64>,
    /// Impulse response of the first structural shock.
    pub irf: Irf,
}

/// Result of the accept/reject search over rotations.
#[derive(Debug, Clone)]
pub struct SignIdentification {
    pub accepted: Vec<AcceptedDraw>,
    pub tries: usize,
    /// True when fewer than the requested draws were accepted within the
    /// try budget; `accepted` then holds the partial set.
    pub starved: bool,
}

/// Accept rotations of the Cholesky factor until `k` candidate impact
/// matrices whose first-shock impulse responses satisfy `spec` are found
/// (or `max_tries` draws are exhausted). Responses are computed to horizon
/// `h` with the given cumulation flags, the same object the caller plots.
pub fn sign_identify<R: Rng>(
    model: &VarModel,
    spec: &SignSpec,
    k: usize,
    max_tries: usize,
    h: usize,
    cumulative: &[bool],
    rng: &mut R,
) -> Result<SignIdentification, IdentifyError> {
    if spec.max_horizon() > h {
        return Err(IdentifyError::HorizonOutOfRange { horizon: spec.max_horizon(), max: h });
    }
    let l = linalg::cholesky_lower(&model.sigma).ok_or(IdentifyError::CholeskyFailure)?;
    // constraints only reach spec.max_horizon(); checking on the truncated
    // response (cumulation is prefix-stable) keeps the rejection loop cheap
    let h_check = spec.max_horizon();
    let mut accepted = Vec::with_capacity(k);
    let mut tries = 0;
    while accepted.len() < k && tries < max_tries {
        tries += 1;
        let q = draw_rotation(model.n, rng);
        let s = &l * q.transpose();
        let shock = s.column(0).into_owned();
        let candidate = var::irf(model, &shock, h_check, cumulative);
        if check_signs(&candidate, spec)? {
            let full = var::irf(model, &shock, h, cumulative);
            accepted.push(AcceptedDraw { s, irf: full });
        }
    }
    let starved = accepted.len() < k;
    Ok(SignIdentification { accepted, tries, starved })
}

/// Pick the member closest to the pointwise median: distances are summed
/// squared deviations standardized by the cross-draw standard deviation
/// per cell (cells with zero spread contribute nothing). Returns the index
/// and a clone of the winner.
pub fn fry_pagan_select(irfs: &[Irf]) -> (usize, Irf) {
    assert!(!irfs.is_empty(), "need at least one impulse response");
    let rows = irfs[0].values.nrows();
    let cols = irfs[0].values.ncols();
    for irf in irfs {
        assert_eq!(irf.values.shape(), (rows, cols), "mixed shapes");
    }
    let d = irfs.len();
    let mut median = DMatrix::zeros(rows, cols);
    let mut sd = DMatrix::zeros(rows, cols);
    let mut scratch = Vec::with_capacity(d);
    for i in 0..rows {
        for j in 0..cols {
            scratch.clear();
            scratch.extend(irfs.iter().map(|irf| irf.values[(i, j)]));
            median[(i, j)] = linalg::quantile_type7(&scratch, 0.5);
            let mean = scratch.iter().sum::<f64>() / d as f64;
            sd[(i, j)] = (scratch.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64).sqrt();
        }
    }
    let mut best = 0;
    let mut best_dist = f64::INFINITY;
    for (idx, irf) in irfs.iter().enumerate() {
        let mut dist = 0.0;
        for i in 0..rows {
            for j in 0..cols {
                if sd[(i, j)] > 0.0 {
                    dist += ((irf.values[(i, j)] - median[(i, j)]) / sd[(i, j)]).powi(2);
                }
            }
        }
        if dist < best_dist {
            best_dist = dist;
            best = idx;
        }
    }
    (best, irfs[best].clone())
}

/// Identification scheme used inside the bootstrap.
#[derive(Debug, Clone)]
pub enum Identification {
    /// External instrument, aligned to the data rows (`z[t]` belongs to
    /// data row `t`; leading `p` entries are ignored).
    Iv { z: Vec<f64>, policy_index: usize },
    /// Sign restrictions with `k` accepted draws per replication and the
    /// median-target selection; `policy_index` scales the optional
    /// unit-normalized output.
    Signs { spec: SignSpec, k: usize, max_tries: usize, policy_index: usize },
}

/// Bootstrap configuration.
#[derive(Debug, Clone)]
pub struct BootstrapConfig {
    /// Number of replications (the original sample is added on top).
    pub replications: usize,
    /// Moving-block length; default `ceil((T - p)^(1/3))`.
    pub block_length: Option<usize>,
    /// Impulse-response horizon.
    pub horizon: usize,
    pub seed: u64,
    /// Re-estimate the volatility scale inside each replication (only
    /// meaningful when the model carries a scaling window).
    pub reestimate_volatility: bool,
    /// Abort when more than this share of replications fails.
    pub max_dropped_share: f64,
    /// Additionally rescale every replication's response to a unit impact
    /// on the policy variable (the instrument path is already normalized).
    pub unit_normalize: bool,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            replications: 10_000,
            block_length: None,
            horizon: 48,
            seed: 0,
            reestimate_volatility: true,
            max_dropped_share: 0.10,
            unit_normalize: false,
        }
    }
}

/// Point response with percentile bands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrfBundle {
    /// Pointwise median across replications.
    pub point: Irf,
    pub lower: Irf,
    pub upper: Irf,
    /// Percentile levels of (lower, upper).
    pub level: (f64, f64),
}

/// Per-run bookkeeping of the bootstrap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapDiagnostics {
    pub replications: usize,
    pub dropped: usize,
    pub block_length: usize,
    /// First-stage F of the original sample (instrument path).
    pub f_stat: Option<f64>,
    /// Accepted share of rotation draws in the original sample (sign path).
    pub acceptance_rate: Option<f64>,
}

fn identify_irf(
    model: &VarModel,
    identification: &Identification,
    h: usize,
    cumulative: &[bool],
    rng: &mut ChaCha8Rng,
) -> Result<(Irf, Option<f64>, Option<f64>), IdentifyError> {
    match identification {
        Identification::Iv { z, policy_index } => {
            let aligned: Vec<f64> = (0..model.effective_obs()).map(|i| z[model.p + i]).collect();
            let impact = proxy_iv_aligned(model, &aligned, *policy_index)?;
            let response = var::irf(model, &impact.s, h, cumulative);
            Ok((response, Some(impact.f_stat), None))
        }
        Identification::Signs { spec, k, max_tries, .. } => {
            let run = sign_identify(model, spec, *k, *max_tries, h, cumulative, rng)?;
            if run.starved {
                return Err(IdentifyError::BootstrapDegenerate {
                    dropped: run.accepted.len(),
                    total: *k,
                });
            }
            let rate = run.accepted.len() as f64 / run.tries as f64;
            let irfs: Vec<Irf> = run.accepted.iter().map(|d| d.irf.clone()).collect();
            let (_, selected) = fry_pagan_select(&irfs);
            Ok((selected, None, Some(rate)))
        }
    }
}

impl Identification {
    pub fn policy_index(&self) -> usize {
        match self {
            Identification::Iv { policy_index, .. } => *policy_index,
            Identification::Signs { policy_index, .. } => *policy_index,
        }
    }
}

/// Moving-block resample of the residual rows: contiguous blocks of length
/// `block_len` drawn uniformly, concatenated, truncated to the sample.
fn resample_rows<R: Rng>(rows: usize, block_len: usize, rng: &mut R) -> Vec<usize> {
    let max_start = rows - block_len;
    let mut order = Vec::with_capacity(rows);
    while order.len() < rows {
        let start = if max_start == 0 { 0 } else { rng.gen_range(0..=max_start) };
        for offset in 0..block_len.min(rows - order.len()) {
            order.push(start + offset);
        }
    }
    order
}

/// Rebuild a sample from the first `p` observations, the fitted
/// coefficients, the original per-period scale, and resampled innovations.
fn rebuild(model: &VarModel, y: &DMatrix<f64>, order: &[usize]) -> DMatrix<f64> {
    let (t, n) = (y.nrows(), y.ncols());
    let p = model.p;
    let mut out = DMatrix::zeros(t, n);
    out.rows_mut(0, p).copy_from(&y.rows(0, p));
    for tt in p..t {
        let mut v = model.intercept.clone();
        for (lag, b) in model.lags.iter().enumerate() {
            v += b * out.row(tt - lag - 1).transpose();
        }
        let src = order[tt - p];
        let scale = model.sigma_t[tt - p];
        for j in 0..n {
            v[j] += scale * model.residuals[(src, j)];
        }
        out.row_mut(tt).copy_from(&v.transpose());
    }
    out
}

/// Block-bootstrap impulse-response bands.
///
/// Fits the original model, identifies the policy shock, then for each
/// replication resamples the descaled residuals in moving blocks, rebuilds
/// the sample from the first `p` observations (re-applying the original
/// per-period scale), re-fits, re-identifies, and recomputes the response.
/// The bundle holds the per-cell median and the 16th/84th percentiles over
/// the original plus all successful replications. Failed replications are
/// dropped and counted; more than `max_dropped_share` failures aborts.
///
/// `sigma_override` fixes the per-period scale of the original fit (the
/// country-loop harmonized scale); replication re-fits still re-estimate
/// their own scale unless `reestimate_volatility` is off.
///
/// With `unit_normalize` set, a second bundle is produced from the same
/// replications with every response rescaled to a unit horizon-0 impact on
/// the policy variable (the instrument path is already on that scale).
pub fn block_bootstrap_irfs(
    y: &DMatrix<f64>,
    p: usize,
    covid_start: Option<usize>,
    sigma_override: Option<&DVector<f64>>,
    identification: &Identification,
    cumulative: &[bool],
    cfg: &BootstrapConfig,
) -> Result<BootstrapOutcome, IdentifyError> {
    let model = match sigma_override {
        Some(sig) => var::fit_var_fixed_sigma(y, p, sig, covid_start)?,
        None => var::fit_var(y, p, covid_start)?,
    };
    let rows = model.effective_obs();
    let block_len = cfg.block_length.unwrap_or((rows as f64).powf(1.0 / 3.0).ceil() as usize);
    assert!(block_len >= 1 && block_len <= rows, "block length out of range");

    let mut rng0 = crate::rng::stream(cfg.seed, "identify", 0);
    let (original, f_stat, acceptance_rate) =
        identify_irf(&model, identification, cfg.horizon, cumulative, &mut rng0)?;

    let opts = VolatilityOptions::default();
    let replicate = |b: usize| -> Result<Irf, IdentifyError> {
        let mut rng = crate::rng::stream(cfg.seed, "bootstrap", b as u64);
        let order = resample_rows(rows, block_len, &mut rng);
        let y_star = rebuild(&model, y, &order);
        let refit = if cfg.reestimate_volatility {
            var::fit_var_with(&y_star, p, covid_start, &opts)?
        } else {
            var::fit_var_fixed_sigma(&y_star, p, &model.sigma_t, covid_start)?
        };
        let (irf, _, _) = identify_irf(&refit, identification, cfg.horizon, cumulative, &mut rng)?;
        Ok(irf)
    };

    let results: Vec<Result<Irf, IdentifyError>> =
        (1..=cfg.replications).into_par_iter().map(replicate).collect();
    let mut irfs: Vec<Irf> = vec![original];
    let mut dropped = 0;
    for r in results {
        match r {
            Ok(irf) => irfs.push(irf),
            Err(_) => dropped += 1,
        }
    }
    if (dropped as f64) > cfg.max_dropped_share * cfg.replications as f64 {
        return Err(IdentifyError::BootstrapDegenerate { dropped, total: cfg.replications });
    }

    let bundle = percentile_bundle(&irfs, (0.16, 0.84));
    let unit_bundle = if cfg.unit_normalize {
        let policy = identification.policy_index();
        let normalized: Vec<Irf> = irfs
            .iter()
            .map(|irf| {
                let impact0 = irf.values[(0, policy)];
                let mut out = irf.clone();
                if impact0 != 0.0 {
                    out.values /= impact0;
                }
                out
            })
            .collect();
        Some(percentile_bundle(&normalized, (0.16, 0.84)))
    } else {
        None
    };
    let diagnostics = BootstrapDiagnostics {
        replications: cfg.replications,
        dropped,
        block_length: block_len,
        f_stat,
        acceptance_rate,
    };
    Ok(BootstrapOutcome { bundle, unit_bundle, diagnostics })
}

/// Bands plus bookkeeping from one bootstrap run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BootstrapOutcome {
    pub bundle: IrfBundle,
    /// Present when `unit_normalize` was requested.
    pub unit_bundle: Option<IrfBundle>,
    pub diagnostics: BootstrapDiagnostics,
}

/// Pointwise median and percentile bands over a set of equally-shaped
/// responses.
pub fn percentile_bundle(irfs: &[Irf], level: (f64, f64)) -> IrfBundle {
    assert!(!irfs.is_empty());
    let rows = irfs[0].values.nrows();
    let cols = irfs[0].values.ncols();
    let cumulative = irfs[0].cumulative.clone();
    let mut point = DMatrix::zeros(rows, cols);
    let mut lower = DMatrix::zeros(rows, cols);
    let mut upper = DMatrix::zeros(rows, cols);
    let mut scratch = Vec::with_capacity(irfs.len());
    for i in 0..rows {
        for j in 0..cols {
            scratch.clear();
            scratch.extend(irfs.iter().map(|irf| irf.values[(i, j)]));
            scratch.sort_by(|a, b| a.partial_cmp(b).unwrap());
            point[(i, j)] = linalg::quantile_type7_sorted(&scratch, 0.5);
            lower[(i, j)] = linalg::quantile_type7_sorted(&scratch, level.0);
            upper[(i, j)] = linalg::quantile_type7_sorted(&scratch, level.1);
        }
    }
    IrfBundle {
        point: Irf { values: point, cumulative: cumulative.clone() },
        lower: Irf { values: lower, cumulative: cumulative.clone() },
        upper: Irf { values: upper, cumulative },
        level,
    }
}
