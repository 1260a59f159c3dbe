//! End-to-end pipeline: raw CSV vintages in, impulse-response files out.
//!
//! Every run is a pure function of the input files, the configuration,
//! and the seed; a manifest listing all three (with input hashes) is
//! written next to the outputs.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::catalog::{self, Catalog, Seasonal};
use crate::factors::{self, CommonComponents, FactorModel};
use crate::identify::{self, Instrument, ScreenEntry, SignConstraintFile};
use crate::panel::{self, Panel, StandardizedPanel};
use crate::period::{Frequency, Period, PeriodRange};

use super::{CcvarSpec, LoopIdentification, LoopInputs, ResultBundle};

/// Default seed used when neither the config, the environment, nor the
/// command line provides one.
pub const DEFAULT_SEED: u64 = 20240101;

/// Pipeline stage names used to tag errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    Config,
    Ingest,
    Frequency,
    Transform,
    Deseasonalize,
    Outliers,
    Impute,
    Standardize,
    Factors,
    Identify,
    Estimate,
    Write,
}

/// A failure tagged with the first stage that could not finish.
#[derive(Debug, Error)]
#[error("stage {stage:?}: {message}")]
pub struct PipelineError {
    pub stage: Stage,
    pub message: String,
}

fn err_at<E: fmt::Display>(stage: Stage) -> impl Fn(E) -> PipelineError {
    move |e| PipelineError { stage, message: e.to_string() }
}

/// Which transform column of the catalog to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformSet {
    #[default]
    Heavy,
    Light,
}

/// Covid handling: outlier exemption window and volatility-scaling start.
/// Unset bounds fall back to frequency defaults (2020-03..2020-12 monthly,
/// 2020-Q1..2020-Q4 quarterly; scaling from 2020-03 / 2020-Q2).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CovidConfig {
    pub enabled: bool,
    #[serde(default)]
    pub exempt_start: Option<Period>,
    #[serde(default)]
    pub exempt_end: Option<Period>,
    #[serde(default)]
    pub scale_from: Option<Period>,
}

impl Default for CovidConfig {
    fn default() -> Self {
        CovidConfig { enabled: true, exempt_start: None, exempt_end: None, scale_from: None }
    }
}

impl CovidConfig {
    pub fn exemption(&self, freq: Frequency) -> Option<PeriodRange> {
        if !self.enabled {
            return None;
        }
        let (d_start, d_end) = match freq {
            Frequency::Monthly => (Period::new(2020, 3), Period::new(2020, 12)),
            Frequency::Quarterly => (Period::new(2020, 1), Period::new(2020, 10)),
        };
        Some(PeriodRange::new(
            self.exempt_start.unwrap_or(d_start),
            self.exempt_end.unwrap_or(d_end),
        ))
    }

    pub fn scale_start(&self, freq: Frequency) -> Option<Period> {
        if !self.enabled {
            return None;
        }
        Some(self.scale_from.unwrap_or(match freq {
            Frequency::Monthly => Period::new(2020, 3),
            Frequency::Quarterly => Period::new(2020, 4),
        }))
    }
}

/// EM-imputation knobs; `r` defaults to the analysis factor count.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmConfig {
    #[serde(default)]
    pub r: Option<usize>,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig { r: None, tol: 1e-6, max_iter: 500 }
    }
}

/// Identification section of the run configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum IdentificationConfig {
    /// External instrument from a CSV with a `date` column, one column per
    /// candidate, and an optional `equity_surprise` column that switches
    /// on the opposite-sign information filter.
    Iv {
        instrument: PathBuf,
        /// Candidate column to use; all candidates are screened and the
        /// strongest taken when unset.
        #[serde(default)]
        column: Option<String>,
    },
    /// Sign restrictions from a JSON constraint list.
    Signs {
        spec: PathBuf,
        #[serde(default = "default_k")]
        k: usize,
        #[serde(default = "default_max_tries")]
        max_tries: usize,
    },
}

fn default_k() -> usize {
    30
}

fn default_max_tries() -> usize {
    100_000
}

/// Bootstrap section of the run configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BootstrapSettings {
    pub replications: usize,
    #[serde(default)]
    pub block_length: Option<usize>,
    #[serde(default = "default_true")]
    pub reestimate_volatility: bool,
}

fn default_true() -> bool {
    true
}

impl Default for BootstrapSettings {
    fn default() -> Self {
        BootstrapSettings { replications: 10_000, block_length: None, reestimate_volatility: true }
    }
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}

fn default_level_overrides() -> Vec<String> {
    vec!["UNETOT".to_string()]
}

fn default_trim_threshold() -> f64 {
    0.5
}

fn default_ea_tolerance() -> f64 {
    1e-8
}

/// One JSON file describing a full run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub catalog: PathBuf,
    pub data_dir: PathBuf,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub transforms: TransformSet,
    /// Series ids forced to enter in levels (transform code 0).
    #[serde(default = "default_level_overrides")]
    pub level_overrides: Vec<String>,
    /// Ids to deseasonalize with seasonal dummies; unset means every
    /// series whose catalog row is marked as manually adjusted.
    #[serde(default)]
    pub deseasonalize_ids: Option<Vec<String>>,
    #[serde(default)]
    pub covid: CovidConfig,
    #[serde(default)]
    pub em: EmConfig,
    /// Drop leading periods in which more than this share of series is
    /// missing (transform-induced start-up missings).
    #[serde(default = "default_trim_threshold")]
    pub trim_leading_missing_share: f64,
    pub ccvar: CcvarSpec,
    pub identification: IdentificationConfig,
    #[serde(default)]
    pub bootstrap: BootstrapSettings,
    /// Tolerance of the shared-block invariance assertion on the
    /// instrument path.
    #[serde(default = "default_ea_tolerance")]
    pub ea_tolerance: f64,
}

impl RunConfig {
    /// Load a config file, resolving its relative paths against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<RunConfig, PipelineError> {
        let text = fs::read_to_string(path).map_err(err_at(Stage::Config))?;
        let mut config: RunConfig =
            serde_json::from_str(&text).map_err(err_at(Stage::Config))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut config.catalog);
        resolve(&mut config.data_dir);
        if let Some(out) = config.output_dir.as_mut() {
            resolve(out);
        }
        match &mut config.identification {
            IdentificationConfig::Iv { instrument, .. } => resolve(instrument),
            IdentificationConfig::Signs { spec, .. } => resolve(spec),
        }
        Ok(config)
    }
}

/// Per-series pre-treatment bookkeeping.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeriesTreatment {
    pub key: String,
    pub applied_code: u8,
    pub deseasonalized: bool,
    pub outliers: usize,
    pub degenerate_iqr: bool,
    /// Missing cells at imputation time (ragged edges, transform start-up,
    /// removed outliers).
    pub imputed: usize,
}

/// Report of the outlier/imputation stage, written as JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImputationReport {
    pub converged: bool,
    pub iterations: usize,
    pub em_r: usize,
    pub series: Vec<SeriesTreatment>,
}

/// Balanced analysis panel plus everything later stages need.
#[derive(Debug, Clone)]
pub struct Pretreated {
    /// Balanced panel after imputation.
    pub panel: Panel,
    /// Panel after transforms and seasonal adjustment, before outlier
    /// removal and imputation (still unbalanced).
    pub transformed: Panel,
    pub applied_codes: Vec<u8>,
    pub report: ImputationReport,
}

fn season_base(freq: Frequency, first: Period) -> (usize, usize) {
    match freq {
        Frequency::Monthly => ((first.month() - 1) as usize, 12),
        Frequency::Quarterly => ((first.quarter() - 1) as usize, 4),
    }
}

/// Frequency and knobs of the pre-treatment stages, independent of any
/// model specification.
#[derive(Debug, Clone)]
pub struct PretreatSettings {
    pub frequency: Frequency,
    pub transforms: TransformSet,
    pub level_overrides: Vec<String>,
    pub deseasonalize_ids: Option<Vec<String>>,
    pub covid: CovidConfig,
    pub em_r: usize,
    pub em_tol: f64,
    pub em_max_iter: usize,
    pub trim_leading_missing_share: f64,
}

impl RunConfig {
    pub fn pretreat_settings(&self) -> PretreatSettings {
        PretreatSettings {
            frequency: self.ccvar.frequency,
            transforms: self.transforms,
            level_overrides: self.level_overrides.clone(),
            deseasonalize_ids: self.deseasonalize_ids.clone(),
            covid: self.covid.clone(),
            em_r: self.em.r.unwrap_or(self.ccvar.r),
            em_tol: self.em.tol,
            em_max_iter: self.em.max_iter,
            trim_leading_missing_share: self.trim_leading_missing_share,
        }
    }
}

/// Run the pre-treatment stages for a run configuration.
pub fn pretreat(config: &RunConfig) -> Result<Pretreated, PipelineError> {
    pretreat_files(&config.catalog, &config.data_dir, &config.pretreat_settings())
}

/// Run the pre-treatment stages: ingest, frequency handling, transforms,
/// seasonal dummies, outlier removal, and EM imputation.
pub fn pretreat_files(
    catalog_path: &Path,
    data_dir: &Path,
    settings: &PretreatSettings,
) -> Result<Pretreated, PipelineError> {
    let text = fs::read_to_string(catalog_path).map_err(err_at(Stage::Ingest))?;
    let catalog: Catalog = catalog::parse_catalog(&text).map_err(err_at(Stage::Ingest))?;
    let raw = catalog::load_vintage(data_dir, &catalog).map_err(err_at(Stage::Ingest))?;

    let freq = settings.frequency;
    let mut panel = match freq {
        Frequency::Monthly => panel::subset_monthly(&raw).map_err(err_at(Stage::Frequency))?,
        Frequency::Quarterly => {
            panel::aggregate_panel_to_quarterly(&raw).map_err(err_at(Stage::Frequency))?
        }
    };

    // stationarity transforms
    let mut applied_codes = Vec::with_capacity(panel.n_series());
    for i in 0..panel.n_series() {
        let meta = panel.metas[i].clone();
        let code = if settings.level_overrides.contains(&meta.id) {
            0
        } else {
            match settings.transforms {
                TransformSet::Heavy => meta.ht_code,
                TransformSet::Light => meta.lt_code,
            }
        };
        let row: Vec<f64> = panel.values.row(i).iter().copied().collect();
        let out = panel::apply_transform_keyed(&row, code, &meta.key())
            .map_err(err_at(Stage::Transform))?;
        for (j, v) in out.iter().enumerate() {
            panel.values[(i, j)] = *v;
        }
        applied_codes.push(code);
    }

    // seasonal dummies for flagged series
    let (start_season, season_count) = season_base(freq, panel.periods[0]);
    let deseason: BTreeSet<String> = match &settings.deseasonalize_ids {
        Some(ids) => ids.iter().cloned().collect(),
        None => panel
            .metas
            .iter()
            .filter(|m| m.seasonal == Seasonal::Msa)
            .map(|m| m.id.clone())
            .collect(),
    };
    let mut deseasonalized = vec![false; panel.n_series()];
    for i in 0..panel.n_series() {
        if !deseason.contains(&panel.metas[i].id) {
            continue;
        }
        let row: Vec<f64> = panel.values.row(i).iter().copied().collect();
        let out = panel::deseasonalize_dummies(&row, start_season, season_count)
            .map_err(err_at(Stage::Deseasonalize))?;
        for (j, v) in out.iter().enumerate() {
            panel.values[(i, j)] = *v;
        }
        deseasonalized[i] = true;
    }
    let transformed = panel.clone();

    // outliers, with the Covid window exempt
    let exempt = panel::exemption_mask(&panel.periods, settings.covid.exemption(freq));
    let mut outlier_counts = vec![0usize; panel.n_series()];
    let mut degenerate = vec![false; panel.n_series()];
    for i in 0..panel.n_series() {
        let row: Vec<f64> = panel.values.row(i).iter().copied().collect();
        let report =
            panel::detect_outliers(&row, Some(&exempt)).map_err(err_at(Stage::Outliers))?;
        outlier_counts[i] = report.indices.len();
        degenerate[i] = report.degenerate_iqr;
        for t in report.indices {
            panel.values[(i, t)] = f64::NAN;
        }
    }

    // drop the transform start-up: leading periods mostly missing
    let n = panel.n_series();
    let mut skip = 0;
    for t in 0..panel.n_periods() {
        let missing = (0..n).filter(|&i| panel.values[(i, t)].is_nan()).count();
        if (missing as f64) > settings.trim_leading_missing_share * n as f64 {
            skip = t + 1;
        } else {
            break;
        }
    }
    if skip > 0 {
        let t = panel.n_periods() - skip;
        let values = panel.values.columns(skip, t).into_owned();
        panel = Panel::new(freq, panel.periods[skip..].to_vec(), panel.metas.clone(), values)
            .map_err(err_at(Stage::Transform))?;
    }

    // EM imputation
    let imputed_counts: Vec<usize> = (0..n)
        .map(|i| panel.values.row(i).iter().filter(|v| v.is_nan()).count())
        .collect();
    let em = panel::em_impute(&panel, settings.em_r, settings.em_tol, settings.em_max_iter)
        .map_err(err_at(Stage::Impute))?;

    let series = (0..n)
        .map(|i| SeriesTreatment {
            key: panel.metas[i].key(),
            applied_code: applied_codes[i],
            deseasonalized: deseasonalized[i],
            outliers: outlier_counts[i],
            degenerate_iqr: degenerate[i],
            imputed: imputed_counts[i],
        })
        .collect();
    Ok(Pretreated {
        panel: em.panel,
        transformed,
        applied_codes,
        report: ImputationReport {
            converged: em.converged,
            iterations: em.iterations,
            em_r: settings.em_r,
            series,
        },
    })
}

/// A parsed instrument file: candidate columns plus the optional equity
/// surprise used by the information filter.
#[derive(Debug, Clone)]
pub struct InstrumentFile {
    pub periods: Vec<Period>,
    pub candidates: Vec<(String, Vec<f64>)>,
    pub equity: Option<Vec<f64>>,
}

/// Read `date, <candidate...>[, equity_surprise]`.
pub fn load_instrument_csv(path: &Path) -> Result<InstrumentFile, PipelineError> {
    let stage = Stage::Identify;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(err_at(stage))?;
    let header = reader.headers().map_err(err_at(stage))?.clone();
    let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut periods = Vec::new();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
    for record in reader.records() {
        let record = record.map_err(err_at(stage))?;
        let stamp = record.get(0).unwrap_or("");
        periods.push(stamp.parse::<Period>().map_err(err_at(stage))?);
        for (j, col) in columns.iter_mut().enumerate() {
            let raw = record.get(j + 1).unwrap_or("");
            let v = match catalog::parse_cell(raw) {
                None => f64::NAN,
                Some(Ok(v)) => v,
                Some(Err(())) => {
                    return Err(PipelineError {
                        stage,
                        message: format!("unparseable instrument value {raw:?}"),
                    })
                }
            };
            col.push(v);
        }
    }
    let mut candidates = Vec::new();
    let mut equity = None;
    for (name, col) in names.into_iter().zip(columns) {
        if name == "equity_surprise" {
            equity = Some(col);
        } else {
            candidates.push((name, col));
        }
    }
    if candidates.is_empty() {
        return Err(PipelineError { stage, message: "instrument file has no candidate columns".into() });
    }
    Ok(InstrumentFile { periods, candidates, equity })
}

/// Instrument candidates with the information filter applied where an
/// equity column is present.
pub fn instrument_candidates(
    file: &InstrumentFile,
    policy_index: usize,
) -> Result<Vec<Instrument>, PipelineError> {
    file.candidates
        .iter()
        .map(|(name, z)| {
            let filtered = match &file.equity {
                Some(eq) => identify::info_shock_filter(z, eq),
                None => z.clone(),
            };
            Instrument::new(name.clone(), file.periods.clone(), filtered, policy_index)
                .map_err(err_at(Stage::Identify))
        })
        .collect()
}

/// Artifacts written by a pipeline run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineArtifacts {
    pub output_dir: PathBuf,
    pub files: Vec<String>,
    /// Screening report of the instrument path.
    pub screen: Option<Vec<ScreenEntry>>,
}

/// Write a panel as CSV: `date` column plus one `COUNTRY:ID` column per
/// series; missing cells are left empty.
pub fn write_panel_csv(path: &Path, panel: &Panel) -> std::io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["date".to_string()];
    header.extend(panel.metas.iter().map(|m| m.key()));
    w.write_record(&header)?;
    for (t, p) in panel.periods.iter().enumerate() {
        let mut record = vec![p.to_string()];
        for i in 0..panel.n_series() {
            let v = panel.values[(i, t)];
            record.push(if v.is_nan() { String::new() } else { format!("{v}") });
        }
        w.write_record(&record)?;
    }
    w.flush()
}

/// Write an impulse-response bundle as CSV with columns
/// `horizon, variable, point, lo16, hi84`.
pub fn write_bundle_csv(
    path: &Path,
    labels: &[String],
    bundle: &identify::IrfBundle,
) -> std::io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["horizon", "variable", "point", "lo16", "hi84"])?;
    let rows = bundle.point.values.nrows();
    for h in 0..rows {
        for (j, label) in labels.iter().enumerate() {
            w.write_record([
                h.to_string(),
                label.clone(),
                format!("{}", bundle.point.values[(h, j)]),
                format!("{}", bundle.lower.values[(h, j)]),
                format!("{}", bundle.upper.values[(h, j)]),
            ])?;
        }
    }
    w.flush()
}

fn sha256_file(path: &Path) -> std::io::Result<String> {
    let bytes = fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(format!("{:x}", hasher.finalize()))
}

fn file_stem(target: &str) -> String {
    target.replace([':', '/', '\\'], "_")
}

/// Run the full pipeline and write every artifact into `output_dir`.
///
/// Outputs: the balanced panel, the treatment report, one bundle CSV per
/// target (plus a unit-normalized one on the sign path), the serialized
/// result bundle, diagnostics, and a manifest with input hashes, the
/// resolved configuration, and the seed.
pub fn run_pipeline(
    config: &RunConfig,
    output_dir: &Path,
) -> Result<(ResultBundle, PipelineArtifacts), PipelineError> {
    config.ccvar.validate().map_err(err_at(Stage::Config))?;
    let pre = pretreat(config)?;
    let sp: StandardizedPanel =
        panel::standardize(&pre.panel).map_err(err_at(Stage::Standardize))?;
    let fm: FactorModel =
        factors::pca_factors(&sp, config.ccvar.r).map_err(err_at(Stage::Factors))?;
    let cc: CommonComponents =
        factors::common_components(&fm, &sp).map_err(err_at(Stage::Factors))?;
    // the VAR consumes common components of the analysis panel; observed
    // entries come from the same (transformed, imputed) panel
    let analysis = pre.panel.clone();

    let freq = config.ccvar.frequency;
    let covid_start_row = config
        .covid
        .scale_start(freq)
        .and_then(|p| {
            if p <= analysis.periods[0] {
                Some(0)
            } else {
                analysis.period_index(if freq == Frequency::Quarterly {
                    p.quarter_start()
                } else {
                    p
                })
            }
        });

    let mut screen_report = None;
    let identification = match &config.identification {
        IdentificationConfig::Iv { instrument, column } => {
            let file = load_instrument_csv(instrument)?;
            let candidates = instrument_candidates(&file, config.ccvar.policy_index())?;
            let chosen = if let Some(name) = column {
                candidates
                    .into_iter()
                    .find(|c| &c.name == name)
                    .ok_or_else(|| PipelineError {
                        stage: Stage::Identify,
                        message: format!("instrument column {name:?} not in file"),
                    })?
            } else {
                // screen every candidate on the first target model
                let first_target = &config.ccvar.targets[0];
                let by = super::build_y(
                    &fm,
                    &cc,
                    &analysis,
                    &pre.applied_codes,
                    &config.ccvar,
                    first_target,
                )
                .map_err(err_at(Stage::Identify))?;
                let model = crate::var::fit_var(&by.y, config.ccvar.p, covid_start_row)
                    .map_err(err_at(Stage::Identify))?;
                let report = identify::instrument_screen(&model, &candidates, &analysis.periods);
                let best = report
                    .iter()
                    .find(|e| e.f_stat.is_some())
                    .map(|e| e.name.clone())
                    .ok_or_else(|| PipelineError {
                        stage: Stage::Identify,
                        message: "no usable instrument candidate".into(),
                    })?;
                screen_report = Some(report);
                candidates.into_iter().find(|c| c.name == best).unwrap()
            };
            let z: Vec<f64> = analysis.periods.iter().map(|&p| chosen.at(p)).collect();
            LoopIdentification::Iv { z }
        }
        IdentificationConfig::Signs { spec, k, max_tries } => {
            let text = fs::read_to_string(spec).map_err(err_at(Stage::Identify))?;
            let constraints: Vec<SignConstraintFile> =
                serde_json::from_str(&text).map_err(err_at(Stage::Identify))?;
            LoopIdentification::Signs { constraints, k: *k, max_tries: *max_tries }
        }
    };

    let inputs = LoopInputs {
        spec: &config.ccvar,
        fm: &fm,
        cc: &cc,
        panel: &analysis,
        applied_codes: &pre.applied_codes,
        covid_start_row,
        identification,
        replications: config.bootstrap.replications,
        block_length: config.bootstrap.block_length,
        reestimate_volatility: config.bootstrap.reestimate_volatility,
        seed: config.seed,
        ea_tolerance: config.ea_tolerance,
    };
    let result = super::run_country_loop(&inputs).map_err(err_at(Stage::Estimate))?;

    // artifacts
    fs::create_dir_all(output_dir).map_err(err_at(Stage::Write))?;
    let mut files = Vec::new();
    fn write_text(
        dir: &Path,
        files: &mut Vec<String>,
        name: &str,
        body: String,
    ) -> Result<(), PipelineError> {
        fs::write(dir.join(name), body).map_err(err_at(Stage::Write))?;
        files.push(name.to_string());
        Ok(())
    }

    write_panel_csv(&output_dir.join("panel.csv"), &pre.panel).map_err(err_at(Stage::Write))?;
    files.push("panel.csv".to_string());
    write_text(
        output_dir,
        &mut files,
        "treatment_report.json",
        serde_json::to_string_pretty(&pre.report).map_err(err_at(Stage::Write))?,
    )?;
    for target in &result.targets {
        let stem = file_stem(&target.target);
        let name = format!("irf_{stem}.csv");
        write_bundle_csv(&output_dir.join(&name), &target.labels, &target.bundle)
            .map_err(err_at(Stage::Write))?;
        files.push(name);
        if let Some(unit) = &target.unit_bundle {
            let name = format!("irf_{stem}_unit.csv");
            write_bundle_csv(&output_dir.join(&name), &target.labels, unit)
                .map_err(err_at(Stage::Write))?;
            files.push(name);
        }
    }
    write_text(
        output_dir,
        &mut files,
        "result.json",
        serde_json::to_string(&result).map_err(err_at(Stage::Write))?,
    )?;
    let diagnostics = serde_json::json!({
        "ea_max_gap": result.ea_max_gap,
        "sigma_median": result.sigma_median,
        "skipped": result.skipped,
        "per_target": result
            .targets
            .iter()
            .map(|t| serde_json::json!({"target": t.target, "diagnostics": t.diagnostics}))
            .collect::<Vec<_>>(),
        "screen": screen_report,
        "imputation_converged": pre.report.converged,
    });
    write_text(
        output_dir,
        &mut files,
        "diagnostics.json",
        serde_json::to_string_pretty(&diagnostics).map_err(err_at(Stage::Write))?,
    )?;

    // manifest: config echo (without the output dir), seed, input hashes
    let mut config_echo = config.clone();
    config_echo.output_dir = None;
    let mut inputs_json = vec![
        serde_json::json!({
            "path": config.catalog.to_string_lossy(),
            "sha256": sha256_file(&config.catalog).map_err(err_at(Stage::Write))?,
        }),
    ];
    let mut data_files: Vec<PathBuf> = fs::read_dir(&config.data_dir)
        .map_err(err_at(Stage::Write))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    data_files.sort();
    for f in data_files {
        inputs_json.push(serde_json::json!({
            "path": f.to_string_lossy(),
            "sha256": sha256_file(&f).map_err(err_at(Stage::Write))?,
        }));
    }
    match &config.identification {
        IdentificationConfig::Iv { instrument, .. } => {
            inputs_json.push(serde_json::json!({
                "path": instrument.to_string_lossy(),
                "sha256": sha256_file(instrument).map_err(err_at(Stage::Write))?,
            }));
        }
        IdentificationConfig::Signs { spec, .. } => {
            inputs_json.push(serde_json::json!({
                "path": spec.to_string_lossy(),
                "sha256": sha256_file(spec).map_err(err_at(Stage::Write))?,
            }));
        }
    }
    let manifest = serde_json::json!({
        "tool": {"name": "macrofactor", "version": env!("CARGO_PKG_VERSION")},
        "seed": config.seed,
        "config": config_echo,
        "inputs": inputs_json,
        "outputs": files,
    });
    fs::write(
        output_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).map_err(err_at(Stage::Write))?,
    )
    .map_err(err_at(Stage::Write))?;
    files.push("manifest.json".to_string());

    Ok((result, PipelineArtifacts { output_dir: output_dir.to_path_buf(), files, screen: screen_report }))
}

impl CcvarSpec {
    /// The policy indicator always occupies column 0.
    pub fn policy_index(&self) -> usize {
        0
    }
}
