//! The common-component VAR workflow: assembling the endogenous vector
//! from observed series, common components, and optionally the first
//! factor; looping one model per national target with a harmonized
//! volatility scale; and the end-to-end pipeline from raw CSVs to
//! impulse-response files.
//!
//! The key structural rule is that the number of common-component entries
//! (plus the first factor, when included) must equal the number of
//! factors, which makes the recovered shocks fundamental. Because every
//! such entry is a linear combination of the factors, models that differ
//! only in the last variable are invertible linear transforms of one
//! another, so the responses of the shared block do not depend on the
//! chosen target under instrument identification.

mod pipeline;

pub use pipeline::{
    instrument_candidates, load_instrument_csv, pretreat, pretreat_files, run_pipeline, write_bundle_csv,
    write_panel_csv, BootstrapSettings, CovidConfig, EmConfig, IdentificationConfig,
    ImputationReport, InstrumentFile, PipelineArtifacts, PipelineError, PretreatSettings,
    Pretreated, RunConfig, SeriesTreatment, Stage, TransformSet, DEFAULT_SEED,
};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::factors::{CommonComponents, FactorError, FactorModel};
use crate::identify::{
    self, BootstrapConfig, BootstrapDiagnostics, Identification, IdentifyError, IrfBundle,
    SignConstraintFile,
};
use crate::panel::{Panel, PanelError};
use crate::period::Frequency;
use crate::var::VarError;

#[derive(Debug, Error)]
pub enum CcvarError {
    #[error("{n_star} spanned entries (common components plus first factor) but r = {r}")]
    NStarMismatch { n_star: usize, r: usize },
    #[error("unknown series {key}")]
    UnknownSeries { key: String },
    #[error("duplicate column {label} in the endogenous vector")]
    DuplicateColumn { label: String },
    #[error("no national targets configured")]
    NoTargets,
    #[error("every target failed: {0}")]
    AllTargetsFailed(String),
    #[error("shared-block responses differ across targets: max gap {gap:.3e} > {tol:.3e}")]
    EaInvarianceViolated { gap: f64, tol: f64 },
    #[error(transparent)]
    Panel(#[from] PanelError),
    #[error(transparent)]
    Factor(#[from] FactorError),
    #[error(transparent)]
    Var(#[from] VarError),
    #[error(transparent)]
    Identify(#[from] IdentifyError),
}

/// A series addressed by country and id.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeriesRef {
    pub country: String,
    pub id: String,
}

impl SeriesRef {
    pub fn key(&self) -> String {
        format!("{}:{}", self.country, self.id)
    }
}

/// How an entry feeds the endogenous vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesUse {
    Observed,
    CommonComponent,
}

/// Model family. The comparators reuse the same variable list with every
/// entry observed; the factor-augmented one appends the first factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[default]
    CcVar,
    Var,
    Favar,
}

/// Specification of the country loop.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CcvarSpec {
    pub frequency: Frequency,
    /// Number of factors; must equal the spanned-entry count for the
    /// common-component model.
    pub r: usize,
    pub p: usize,
    pub horizon: usize,
    /// Policy indicator; always enters observed, labeled `R`, column 0.
    pub policy: SeriesRef,
    /// Shared block after the policy rate, in order.
    pub ea_block: Vec<(SeriesRef, SeriesUse)>,
    pub include_first_factor: bool,
    /// Id of the national long-term rate, resolved in each target's
    /// country.
    pub national_rate_id: String,
    /// One model per target; the target is always the last column.
    pub targets: Vec<SeriesRef>,
    #[serde(default)]
    pub model_kind: ModelKind,
    /// Cumulate the first-factor response (it proxies output).
    #[serde(default = "default_true")]
    pub first_factor_cumulative: bool,
}

fn default_true() -> bool {
    true
}

impl CcvarSpec {
    /// Spanned entries: common-component columns plus the first factor.
    pub fn n_star(&self) -> usize {
        match self.model_kind {
            ModelKind::CcVar => {
                let cc_in_block = self
                    .ea_block
                    .iter()
                    .filter(|(_, u)| *u == SeriesUse::CommonComponent)
                    .count();
                // the national rate and the target always enter as
                // common components in this model family
                cc_in_block + 2 + usize::from(self.include_first_factor)
            }
            ModelKind::Var | ModelKind::Favar => 0,
        }
    }

    /// Number of endogenous variables.
    pub fn n_variables(&self) -> usize {
        let f1 = match self.model_kind {
            ModelKind::CcVar => usize::from(self.include_first_factor),
            ModelKind::Favar => 1,
            ModelKind::Var => 0,
        };
        1 + self.ea_block.len() + f1 + 2
    }

    /// Validate the structural counting rule; never adjusts silently.
    pub fn validate(&self) -> Result<(), CcvarError> {
        if self.targets.is_empty() {
            return Err(CcvarError::NoTargets);
        }
        if self.model_kind == ModelKind::CcVar && self.n_star() != self.r {
            return Err(CcvarError::NStarMismatch { n_star: self.n_star(), r: self.r });
        }
        Ok(())
    }
}

/// Assembled endogenous matrix for one target.
#[derive(Debug, Clone)]
pub struct BuiltY {
    /// T×n, column order: policy, shared block, optional first factor,
    /// national rate, target.
    pub y: DMatrix<f64>,
    pub labels: Vec<String>,
    pub cumulative: Vec<bool>,
    /// Column of the policy indicator (always 0).
    pub policy_col: usize,
    /// Number of leading columns shared by every target model.
    pub shared_cols: usize,
}

fn row_of<'a>(
    panel: &Panel,
    matrix: &'a DMatrix<f64>,
    series: &SeriesRef,
) -> Result<nalgebra::RowDVector<f64>, CcvarError> {
    let idx = panel
        .series_index(&series.country, &series.id)
        .ok_or_else(|| CcvarError::UnknownSeries { key: series.key() })?;
    Ok(matrix.row(idx).into_owned())
}

fn code_of(panel: &Panel, applied: &[u8], series: &SeriesRef) -> Result<u8, CcvarError> {
    let idx = panel
        .series_index(&series.country, &series.id)
        .ok_or_else(|| CcvarError::UnknownSeries { key: series.key() })?;
    Ok(applied[idx])
}

/// Build the endogenous matrix for one national target: the policy rate,
/// the shared block, optionally the first factor, the target country's
/// long rate, and the target itself last. Response cumulation flags derive
/// from each underlying series' applied transform code (differenced codes
/// cumulate).
pub fn build_y(
    fm: &FactorModel,
    cc: &CommonComponents,
    panel: &Panel,
    applied_codes: &[u8],
    spec: &CcvarSpec,
    target: &SeriesRef,
) -> Result<BuiltY, CcvarError> {
    spec.validate()?;
    let t = panel.n_periods();
    let n = spec.n_variables();
    let mut sink = ColumnSink {
        y: DMatrix::zeros(t, n),
        labels: Vec::with_capacity(n),
        cumulative: Vec::with_capacity(n),
        col: 0,
    };

    let cumulate = |code: u8| (2..=5).contains(&code);

    // policy indicator, observed
    let policy_code = code_of(panel, applied_codes, &spec.policy)?;
    sink.push(row_of(panel, &panel.values, &spec.policy)?, "R".to_string(), cumulate(policy_code));

    let as_cc =
        |u: SeriesUse| spec.model_kind == ModelKind::CcVar && u == SeriesUse::CommonComponent;
    for (series, series_use) in &spec.ea_block {
        let code = code_of(panel, applied_codes, series)?;
        if as_cc(*series_use) {
            sink.push(row_of(panel, &cc.chi, series)?, format!("chi:{}", series.key()), cumulate(code));
        } else {
            sink.push(row_of(panel, &panel.values, series)?, series.key(), cumulate(code));
        }
    }

    let include_f1 = match spec.model_kind {
        ModelKind::CcVar => spec.include_first_factor,
        ModelKind::Favar => true,
        ModelKind::Var => false,
    };
    if include_f1 {
        let f1 = fm.factors.column(0).transpose().into_owned();
        sink.push(f1, "f1".to_string(), spec.first_factor_cumulative);
    }
    let shared_cols = sink.col;

    let rate = SeriesRef { country: target.country.clone(), id: spec.national_rate_id.clone() };
    let national_cc = spec.model_kind == ModelKind::CcVar;
    for series in [&rate, target] {
        let code = code_of(panel, applied_codes, series)?;
        if national_cc {
            sink.push(row_of(panel, &cc.chi, series)?, format!("chi:{}", series.key()), cumulate(code));
        } else {
            sink.push(row_of(panel, &panel.values, series)?, series.key(), cumulate(code));
        }
    }

    let mut seen = std::collections::BTreeSet::new();
    for label in &sink.labels {
        if !seen.insert(label.clone()) {
            return Err(CcvarError::DuplicateColumn { label: label.clone() });
        }
    }
    Ok(BuiltY {
        y: sink.y,
        labels: sink.labels,
        cumulative: sink.cumulative,
        policy_col: 0,
        shared_cols,
    })
}

struct ColumnSink {
    y: DMatrix<f64>,
    labels: Vec<String>,
    cumulative: Vec<bool>,
    col: usize,
}

impl ColumnSink {
    fn push(&mut self, values: nalgebra::RowDVector<f64>, label: String, cum: bool) {
        self.y.column_mut(self.col).copy_from(&values.transpose());
        self.labels.push(label);
        self.cumulative.push(cum);
        self.col += 1;
    }
}

/// Identification input of the country loop.
#[derive(Debug, Clone)]
pub enum LoopIdentification {
    /// Instrument values aligned to the panel periods (`z[t]` belongs to
    /// data row `t`).
    Iv { z: Vec<f64> },
    Signs { constraints: Vec<SignConstraintFile>, k: usize, max_tries: usize },
}

/// Inputs of [`run_country_loop`].
pub struct LoopInputs<'a> {
    pub spec: &'a CcvarSpec,
    pub fm: &'a FactorModel,
    pub cc: &'a CommonComponents,
    pub panel: &'a Panel,
    pub applied_codes: &'a [u8],
    /// Data-row index where volatility scaling starts, if enabled.
    pub covid_start_row: Option<usize>,
    pub identification: LoopIdentification,
    pub replications: usize,
    pub block_length: Option<usize>,
    pub reestimate_volatility: bool,
    pub seed: u64,
    /// Tolerance of the shared-block invariance check (instrument path).
    pub ea_tolerance: f64,
}

/// Bands of a single variable, extracted from a bundle column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableBand {
    pub point: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

fn extract_band(bundle: &IrfBundle, col: usize) -> VariableBand {
    let take = |irf: &crate::var::Irf| irf.values.column(col).iter().copied().collect();
    VariableBand {
        point: take(&bundle.point),
        lower: take(&bundle.lower),
        upper: take(&bundle.upper),
    }
}

/// Result of one target model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetResult {
    pub target: String,
    pub labels: Vec<String>,
    pub cumulative: Vec<bool>,
    pub bundle: IrfBundle,
    /// Sign path only: responses rescaled to a unit policy impact.
    pub unit_bundle: Option<IrfBundle>,
    pub diagnostics: BootstrapDiagnostics,
}

/// Everything the country loop produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultBundle {
    pub targets: Vec<TargetResult>,
    /// Targets dropped with their error message.
    pub skipped: Vec<(String, String)>,
    /// Harmonized per-period scale used in the second pass.
    pub sigma_median: Vec<f64>,
    /// Labels of the shared block.
    pub ea_labels: Vec<String>,
    /// Shared-block bands, from the first successful target.
    pub ea_irfs: Vec<(String, VariableBand)>,
    /// Target's own band per target key.
    pub national_irfs: Vec<(String, VariableBand)>,
    /// Largest shared-block response gap across targets.
    pub ea_max_gap: f64,
}

/// Two-pass country loop.
///
/// Pass one estimates a volatility scale per target model; the per-period
/// median across targets becomes the harmonized scale. Pass two fixes that
/// scale, re-estimates each model, identifies the policy shock, and
/// bootstraps bands. Under instrument identification the shared-block
/// responses must agree across targets up to `ea_tolerance`; on the sign
/// path residual dispersion from the accept/reject draws is reported, not
/// asserted. Failing targets are skipped and reported.
pub fn run_country_loop(inputs: &LoopInputs) -> Result<ResultBundle, CcvarError> {
    let spec = inputs.spec;
    spec.validate()?;

    // pass 1: per-target volatility
    let mut built: Vec<(SeriesRef, BuiltY)> = Vec::new();
    let mut skipped: Vec<(String, String)> = Vec::new();
    let mut sigmas: Vec<DVector<f64>> = Vec::new();
    for target in &spec.targets {
        let by = match build_y(inputs.fm, inputs.cc, inputs.panel, inputs.applied_codes, spec, target) {
            Ok(by) => by,
            Err(err) => {
                skipped.push((target.key(), err.to_string()));
                continue;
            }
        };
        match crate::var::fit_var(&by.y, spec.p, inputs.covid_start_row) {
            Ok(model) => {
                sigmas.push(model.sigma_t.clone());
                built.push((target.clone(), by));
            }
            Err(err) => skipped.push((target.key(), err.to_string())),
        }
    }
    if built.is_empty() {
        let detail = skipped
            .first()
            .map(|(k, e)| format!("{k}: {e}"))
            .unwrap_or_else(|| "no targets".to_string());
        return Err(CcvarError::AllTargetsFailed(detail));
    }

    let rows = sigmas[0].len();
    let sigma_median = DVector::from_fn(rows, |i, _| {
        let values: Vec<f64> = sigmas.iter().map(|s| s[i]).collect();
        crate::linalg::quantile_type7(&values, 0.5)
    });

    // pass 2: identify and bootstrap with the harmonized scale
    let mut targets: Vec<TargetResult> = Vec::new();
    for (target, by) in &built {
        let identification = match &inputs.identification {
            LoopIdentification::Iv { z } => {
                Identification::Iv { z: z.clone(), policy_index: by.policy_col }
            }
            LoopIdentification::Signs { constraints, k, max_tries } => {
                let spec_resolved = identify::resolve_sign_spec(constraints, &by.labels)?;
                Identification::Signs {
                    spec: spec_resolved,
                    k: *k,
                    max_tries: *max_tries,
                    policy_index: by.policy_col,
                }
            }
        };
        let unit_normalize = matches!(identification, Identification::Signs { .. });
        let cfg = BootstrapConfig {
            replications: inputs.replications,
            block_length: inputs.block_length,
            horizon: spec.horizon,
            seed: inputs.seed,
            reestimate_volatility: inputs.reestimate_volatility,
            max_dropped_share: 0.10,
            unit_normalize,
        };
        let outcome = identify::block_bootstrap_irfs(
            &by.y,
            spec.p,
            inputs.covid_start_row,
            Some(&sigma_median),
            &identification,
            &by.cumulative,
            &cfg,
        );
        match outcome {
            Ok(out) => targets.push(TargetResult {
                target: target.key(),
                labels: by.labels.clone(),
                cumulative: by.cumulative.clone(),
                bundle: out.bundle,
                unit_bundle: out.unit_bundle,
                diagnostics: out.diagnostics,
            }),
            Err(err) => skipped.push((target.key(), err.to_string())),
        }
    }
    if targets.is_empty() {
        let detail = skipped
            .first()
            .map(|(k, e)| format!("{k}: {e}"))
            .unwrap_or_else(|| "no targets".to_string());
        return Err(CcvarError::AllTargetsFailed(detail));
    }

    // shared-block invariance across targets
    let shared = built[0].1.shared_cols;
    let mut ea_max_gap = 0.0f64;
    let first = &targets[0];
    for other in &targets[1..] {
        for col in 0..shared {
            for irf_pair in [
                (&first.bundle.point, &other.bundle.point),
                (&first.bundle.lower, &other.bundle.lower),
                (&first.bundle.upper, &other.bundle.upper),
            ] {
                let gap = (irf_pair.0.values.column(col) - irf_pair.1.values.column(col)).amax();
                ea_max_gap = ea_max_gap.max(gap);
            }
        }
    }
    if matches!(inputs.identification, LoopIdentification::Iv { .. })
        && ea_max_gap > inputs.ea_tolerance
    {
        return Err(CcvarError::EaInvarianceViolated { gap: ea_max_gap, tol: inputs.ea_tolerance });
    }

    let ea_labels: Vec<String> = first.labels[..shared].to_vec();
    let ea_irfs: Vec<(String, VariableBand)> = (0..shared)
        .map(|col| (first.labels[col].clone(), extract_band(&first.bundle, col)))
        .collect();
    let national_irfs: Vec<(String, VariableBand)> = targets
        .iter()
        .map(|t| {
            let last = t.labels.len() - 1;
            (t.target.clone(), extract_band(&t.bundle, last))
        })
        .collect();

    Ok(ResultBundle {
        targets,
        skipped,
        sigma_median: sigma_median.iter().copied().collect(),
        ea_labels,
        ea_irfs,
        national_irfs,
        ea_max_gap,
    })
}
