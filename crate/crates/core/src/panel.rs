//! Panel pre-treatment: frequency aggregation, stationarity transforms,
//! seasonal-dummy adjustment, outlier screening, EM imputation of missing
//! cells, and standardization.
//!
//! Panels are N×T matrices (rows = series), with `NaN` marking missing
//! cells throughout.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{RawPanel, SeriesMeta, StockFlow};
use crate::linalg::{self, LinalgError};
use crate::period::{Frequency, Period, PeriodRange};

#[derive(Debug, Error)]
pub enum PanelError {
    #[error("series {key}: value at index {index} is not strictly positive, log transform impossible")]
    NonPositiveForLog { key: String, index: usize },
    #[error("seasonal adjustment needs at least {needed} observations, found {observed}")]
    TooShortForSeasonal { observed: usize, needed: usize },
    #[error("{context}: needs at least {needed} observed values, found {observed}")]
    TooFewObservations { context: String, observed: usize, needed: usize },
    #[error("series {key} is constant, cannot standardize")]
    ConstantSeries { key: String },
    #[error("panel has missing values; {context} requires a balanced panel")]
    NotBalanced { context: String },
    #[error("series {key}: {observed} observed cells, EM imputation needs at least {needed}")]
    TooManyMissing { key: String, observed: usize, needed: usize },
    #[error("factor count {r} must be below min(N, T) = {cap}")]
    RankTooLarge { r: usize, cap: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("panel shape mismatch: {0}")]
    Shape(String),
}

/// True when a cell is a missing marker.
pub fn is_missing(v: f64) -> bool {
    v.is_nan()
}

/// Single-frequency panel. Construction validates that the period axis is
/// contiguous at the panel frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub frequency: Frequency,
    pub periods: Vec<Period>,
    pub metas: Vec<SeriesMeta>,
    /// N×T, row i = series i.
    pub values: DMatrix<f64>,
}

impl Panel {
    pub fn new(
        frequency: Frequency,
        periods: Vec<Period>,
        metas: Vec<SeriesMeta>,
        values: DMatrix<f64>,
    ) -> Result<Self, PanelError> {
        if values.nrows() != metas.len() || values.ncols() != periods.len() {
            return Err(PanelError::Shape(format!(
                "{}x{} values vs {} metas, {} periods",
                values.nrows(),
                values.ncols(),
                metas.len(),
                periods.len()
            )));
        }
        for w in periods.windows(2) {
            if w[1].months_since(w[0]) != frequency.step_months() {
                return Err(PanelError::Shape(format!(
                    "period axis not contiguous at {} -> {}",
                    w[0], w[1]
                )));
            }
        }
        if frequency == Frequency::Quarterly {
            if let Some(p) = periods.iter().find(|p| !p.is_quarter_start()) {
                return Err(PanelError::Shape(format!("{p} is not a quarter start")));
            }
        }
        Ok(Panel { frequency, periods, metas, values })
    }

    pub fn n_series(&self) -> usize {
        self.metas.len()
    }

    pub fn n_periods(&self) -> usize {
        self.periods.len()
    }

    pub fn is_balanced(&self) -> bool {
        self.values.iter().all(|v| !is_missing(*v))
    }

    pub fn series_index(&self, country: &str, id: &str) -> Option<usize> {
        self.metas.iter().position(|m| m.country == country && m.id == id)
    }

    pub fn period_index(&self, p: Period) -> Option<usize> {
        self.periods.iter().position(|&q| q == p)
    }
}

/// Restrict a raw mixed-frequency panel to its monthly series.
pub fn subset_monthly(raw: &RawPanel) -> Result<Panel, PanelError> {
    let keep: Vec<usize> = raw
        .metas
        .iter()
        .enumerate()
        .filter(|(_, m)| m.frequency == Frequency::Monthly)
        .map(|(i, _)| i)
        .collect();
    let metas: Vec<SeriesMeta> = keep.iter().map(|&i| raw.metas[i].clone()).collect();
    let t = raw.periods.len();
    let mut values = DMatrix::from_element(keep.len(), t, f64::NAN);
    for (row, &i) in keep.iter().enumerate() {
        values.row_mut(row).copy_from(&raw.values.row(i));
    }
    Panel::new(Frequency::Monthly, raw.periods.clone(), metas, values)
}

/// Aggregate one monthly series to quarters.
///
/// Flows sum the three months of a quarter, stocks average them. A quarter
/// gets a value only when all three months lie on the axis and are
/// observed; otherwise it is emitted as missing. Quarters are emitted for
/// every quarter the monthly axis touches.
pub fn aggregate_to_quarterly(
    periods: &[Period],
    values: &[f64],
    kind: StockFlow,
) -> (Vec<Period>, Vec<f64>) {
    assert_eq!(periods.len(), values.len());
    let (Some(&first), Some(&last)) = (periods.first(), periods.last()) else {
        return (Vec::new(), Vec::new());
    };
    let mut out_periods = Vec::new();
    let mut out_values = Vec::new();
    let mut q = first.quarter_start();
    while q <= last {
        let mut sum = 0.0;
        let mut complete = true;
        for k in 0..3 {
            let month = q.add_months(k);
            match periods.iter().position(|&p| p == month) {
                Some(t) if !is_missing(values[t]) => sum += values[t],
                _ => {
                    complete = false;
                    break;
                }
            }
        }
        out_periods.push(q);
        out_values.push(if complete {
            match kind {
                StockFlow::Flow => sum,
                StockFlow::Stock => sum / 3.0,
            }
        } else {
            f64::NAN
        });
        q = q.next(Frequency::Quarterly);
    }
    (out_periods, out_values)
}

/// Aggregate a mixed-frequency raw panel onto a quarterly axis: monthly
/// series are aggregated per their stock/flow kind, quarterly series are
/// read off the quarter-start months.
pub fn aggregate_panel_to_quarterly(raw: &RawPanel) -> Result<Panel, PanelError> {
    let quarters: Vec<Period> = {
        let (Some(&first), Some(&last)) = (raw.periods.first(), raw.periods.last()) else {
            return Panel::new(
                Frequency::Quarterly,
                Vec::new(),
                raw.metas.clone(),
                DMatrix::zeros(raw.n_series(), 0),
            );
        };
        let mut q = first.quarter_start();
        let mut out = Vec::new();
        while q <= last {
            out.push(q);
            q = q.next(Frequency::Quarterly);
        }
        out
    };
    let mut values = DMatrix::from_element(raw.n_series(), quarters.len(), f64::NAN);
    for (i, meta) in raw.metas.iter().enumerate() {
        match meta.frequency {
            Frequency::Monthly => {
                let row: Vec<f64> = raw.values.row(i).iter().copied().collect();
                let (qp, qv) = aggregate_to_quarterly(&raw.periods, &row, meta.stock_flow);
                for (p, v) in qp.iter().zip(qv) {
                    let t = quarters.iter().position(|q| q == p).unwrap();
                    values[(i, t)] = v;
                }
            }
            Frequency::Quarterly => {
                for (t, q) in quarters.iter().enumerate() {
                    if let Some(src) = raw.periods.iter().position(|p| p == q) {
                        values[(i, t)] = raw.values[(i, src)];
                    }
                }
            }
        }
    }
    Panel::new(Frequency::Quarterly, quarters, raw.metas.clone(), values)
}

/// Apply a stationarity transform code 0-5 to one series.
///
/// Codes: 0 none, 1 `100*log`, 2 `100*dlog`, 3 `100*d2log`, 4 `d`, 5 `d2`.
/// Output has the input length; differencing marks leading entries missing
/// instead of shortening the series, and missing inputs propagate.
pub fn apply_transform(values: &[f64], code: u8) -> Result<Vec<f64>, PanelError> {
    apply_transform_keyed(values, code, "series")
}

pub(crate) fn apply_transform_keyed(
    values: &[f64],
    code: u8,
    key: &str,
) -> Result<Vec<f64>, PanelError> {
    assert!(code <= 5, "transform code out of range");
    if (1..=3).contains(&code) {
        if let Some(index) = values.iter().position(|&v| !is_missing(v) && v <= 0.0) {
            return Err(PanelError::NonPositiveForLog { key: key.to_string(), index });
        }
    }
    let n = values.len();
    let log100 = |v: f64| 100.0 * v.ln();
    let out: Vec<f64> = match code {
        0 => values.to_vec(),
        1 => values.iter().map(|&v| if is_missing(v) { v } else { log100(v) }).collect(),
        2 | 4 => {
            let f = |v: f64| if code == 2 { log100(v) } else { v };
            (0..n)
                .map(|t| {
                    if t == 0 || is_missing(values[t]) || is_missing(values[t - 1]) {
                        f64::NAN
                    } else {
                        f(values[t]) - f(values[t - 1])
                    }
                })
                .collect()
        }
        3 | 5 => {
            let f = |v: f64| if code == 3 { log100(v) } else { v };
            (0..n)
                .map(|t| {
                    if t < 2
                        || is_missing(values[t])
                        || is_missing(values[t - 1])
                        || is_missing(values[t - 2])
                    {
                        f64::NAN
                    } else {
                        f(values[t]) - 2.0 * f(values[t - 1]) + f(values[t - 2])
                    }
                })
                .collect()
        }
        _ => unreachable!(),
    };
    Ok(out)
}

/// Number of leading cells a transform code marks missing.
pub fn leading_missing(code: u8) -> usize {
    match code {
        2 | 4 => 1,
        3 | 5 => 2,
        _ => 0,
    }
}

/// Remove a deterministic seasonal pattern by regressing on an intercept
/// plus `season_count - 1` seasonal dummies and returning the residuals
/// re-centered on the grand mean. The season of observation `t` is
/// `(start_season + t) % season_count`.
///
/// The dummy regression is saturated, so the OLS fit equals the per-season
/// mean; the implementation uses that identity directly.
pub fn deseasonalize_dummies(
    values: &[f64],
    start_season: usize,
    season_count: usize,
) -> Result<Vec<f64>, PanelError> {
    assert!(season_count >= 2, "need at least two seasons");
    let observed: Vec<usize> = (0..values.len()).filter(|&t| !is_missing(values[t])).collect();
    let needed = 2 * season_count;
    if observed.len() < needed {
        return Err(PanelError::TooShortForSeasonal { observed: observed.len(), needed });
    }

    let mut sums = vec![0.0; season_count];
    let mut counts = vec![0usize; season_count];
    let mut grand = 0.0;
    for &t in &observed {
        let s = (start_season + t) % season_count;
        sums[s] += values[t];
        counts[s] += 1;
        grand += values[t];
    }
    let grand_mean = grand / observed.len() as f64;

    Ok((0..values.len())
        .map(|t| {
            if is_missing(values[t]) {
                return f64::NAN;
            }
            let s = (start_season + t) % season_count;
            values[t] - sums[s] / counts[s] as f64 + grand_mean
        })
        .collect())
}

/// Outlier screen result; `degenerate_iqr` warns that nothing could be
/// flagged because the interquartile range is zero.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutlierReport {
    pub indices: Vec<usize>,
    pub degenerate_iqr: bool,
}

/// Flag observations deviating from the sample median by more than ten
/// interquartile ranges. Indices where `exempt` is true (the Covid window)
/// are never flagged. Quartiles use linear interpolation (type 7).
pub fn detect_outliers(
    values: &[f64],
    exempt: Option<&[bool]>,
) -> Result<OutlierReport, PanelError> {
    let observed: Vec<f64> = values.iter().copied().filter(|v| !is_missing(*v)).collect();
    if observed.len() < 4 {
        return Err(PanelError::TooFewObservations {
            context: "outlier detection".to_string(),
            observed: observed.len(),
            needed: 4,
        });
    }
    let mut sorted = observed;
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = linalg::quantile_type7_sorted(&sorted, 0.5);
    let iqr = linalg::quantile_type7_sorted(&sorted, 0.75)
        - linalg::quantile_type7_sorted(&sorted, 0.25);
    if iqr == 0.0 {
        return Ok(OutlierReport { indices: Vec::new(), degenerate_iqr: true });
    }
    let indices = (0..values.len())
        .filter(|&t| {
            !is_missing(values[t])
                && (values[t] - median).abs() > 10.0 * iqr
                && !exempt.is_some_and(|e| e[t])
        })
        .collect();
    Ok(OutlierReport { indices, degenerate_iqr: false })
}

/// Exemption mask for [`detect_outliers`] from a period window.
pub fn exemption_mask(periods: &[Period], window: Option<PeriodRange>) -> Vec<bool> {
    periods.iter().map(|&p| window.is_some_and(|w| w.contains(p))).collect()
}

/// Result of [`em_impute`].
#[derive(Debug, Clone)]
pub struct EmOutcome {
    pub panel: Panel,
    pub iterations: usize,
    /// False when `max_iter` was hit; the best iterate is still returned.
    pub converged: bool,
    /// Sum of squared idiosyncratic residuals over observed standardized
    /// cells, one entry per iteration. Non-increasing.
    pub objective: Vec<f64>,
}

/// Fill missing cells with the `r`-factor common component of the
/// standardized panel, iterating to a fixed point.
///
/// Series are standardized once, by the mean and (population) standard
/// deviation of their observed cells; missing standardized cells start at
/// zero. Each iteration projects the filled panel on its top `r` principal
/// components and replaces the missing cells with the projection. Stops
/// when the largest change of an imputed standardized cell drops below
/// `tol`. Observed cells are never altered.
pub fn em_impute(
    panel: &Panel,
    r: usize,
    tol: f64,
    max_iter: usize,
) -> Result<EmOutcome, PanelError> {
    let (n, t) = (panel.n_series(), panel.n_periods());
    if r >= n.min(t) {
        return Err(PanelError::RankTooLarge { r, cap: n.min(t) });
    }
    let min_obs = 4.max((0.2 * t as f64).ceil() as usize);

    let mut mu = DVector::zeros(n);
    let mut omega = DVector::zeros(n);
    for i in 0..n {
        let row = panel.values.row(i);
        let obs: Vec<f64> = row.iter().copied().filter(|v| !is_missing(*v)).collect();
        if obs.len() < min_obs {
            return Err(PanelError::TooManyMissing {
                key: panel.metas[i].key(),
                observed: obs.len(),
                needed: min_obs,
            });
        }
        let m = obs.iter().sum::<f64>() / obs.len() as f64;
        let v = obs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / obs.len() as f64;
        if v <= 0.0 {
            return Err(PanelError::ConstantSeries { key: panel.metas[i].key() });
        }
        mu[i] = m;
        omega[i] = v.sqrt();
    }

    let missing: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (0..t).map(move |j| (i, j)))
        .filter(|&(i, j)| is_missing(panel.values[(i, j)]))
        .collect();

    let mut z = DMatrix::zeros(n, t);
    for i in 0..n {
        for j in 0..t {
            let v = panel.values[(i, j)];
            z[(i, j)] = if is_missing(v) { 0.0 } else { (v - mu[i]) / omega[i] };
        }
    }

    let mut objective = Vec::new();
    let mut converged = missing.is_empty();
    let mut iterations = 0;
    for _ in 0..max_iter {
        iterations += 1;
        let pca = linalg::pca(&z, r)?;
        let chi = &pca.loadings * pca.factors.transpose();
        let mut obj = 0.0;
        for i in 0..n {
            for j in 0..t {
                if !is_missing(panel.values[(i, j)]) {
                    obj += (z[(i, j)] - chi[(i, j)]).powi(2);
                }
            }
        }
        objective.push(obj);
        let mut delta = 0.0f64;
        for &(i, j) in &missing {
            delta = delta.max((chi[(i, j)] - z[(i, j)]).abs());
            z[(i, j)] = chi[(i, j)];
        }
        if delta < tol {
            converged = true;
            break;
        }
    }

    let mut values = panel.values.clone();
    for &(i, j) in &missing {
        values[(i, j)] = mu[i] + omega[i] * z[(i, j)];
    }
    let panel = Panel::new(panel.frequency, panel.periods.clone(), panel.metas.clone(), values)?;
    Ok(EmOutcome { panel, iterations, converged, objective })
}

/// A balanced panel together with the means and standard deviations that
/// map it back to the original scale.
#[derive(Debug, Clone)]
pub struct StandardizedPanel {
    /// Panel of standardized values (mean 0, variance 1 per series).
    pub panel: Panel,
    pub mu: DVector<f64>,
    /// Population standard deviations, all strictly positive.
    pub omega: DVector<f64>,
}

impl StandardizedPanel {
    pub fn n_series(&self) -> usize {
        self.panel.n_series()
    }

    pub fn n_periods(&self) -> usize {
        self.panel.n_periods()
    }

    /// The standardized values, N×T.
    pub fn z(&self) -> &DMatrix<f64> {
        &self.panel.values
    }

    /// Reconstruct the original-scale panel.
    pub fn destandardize(&self) -> Panel {
        let mut values = self.panel.values.clone();
        for i in 0..values.nrows() {
            for j in 0..values.ncols() {
                values[(i, j)] = self.mu[i] + self.omega[i] * values[(i, j)];
            }
        }
        Panel {
            frequency: self.panel.frequency,
            periods: self.panel.periods.clone(),
            metas: self.panel.metas.clone(),
            values,
        }
    }
}

/// Standardize a balanced panel to mean zero and unit variance per series,
/// using the 1/T (population) variance convention.
pub fn standardize(panel: &Panel) -> Result<StandardizedPanel, PanelError> {
    if !panel.is_balanced() {
        return Err(PanelError::NotBalanced { context: "standardize".to_string() });
    }
    let (n, t) = (panel.n_series(), panel.n_periods());
    let mut mu = DVector::zeros(n);
    let mut omega = DVector::zeros(n);
    let mut values = panel.values.clone();
    for i in 0..n {
        let row = panel.values.row(i);
        let m = row.mean();
        let v = row.iter().map(|x| (x - m).powi(2)).sum::<f64>() / t as f64;
        if v <= 0.0 {
            return Err(PanelError::ConstantSeries { key: panel.metas[i].key() });
        }
        mu[i] = m;
        omega[i] = v.sqrt();
        for j in 0..t {
            values[(i, j)] = (values[(i, j)] - m) / omega[i];
        }
    }
    let panel = Panel {
        frequency: panel.frequency,
        periods: panel.periods.clone(),
        metas: panel.metas.clone(),
        values,
    };
    Ok(StandardizedPanel { panel, mu, omega })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{parse_catalog, Catalog};
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn meta(id: &str, freq: &str) -> SeriesMeta {
        let text = format!(
            "N,ID,Country,Series,Unit,SA,F,Source,LT,HT,Class\n1,{id},EA,x,u,SA,{freq},EUR,0,0,R"
        );
        parse_catalog(&text).unwrap().entries.remove(0)
    }

    fn months(start: Period, n: usize) -> Vec<Period> {
        (0..n).map(|k| start.add_months(k as i32)).collect()
    }

    #[test]
    fn flow_sums_and_stock_averages() {
        let periods = months(Period::new(2000, 1), 3);
        let (qp, qv) = aggregate_to_quarterly(&periods, &[1.0, 2.0, 3.0], StockFlow::Flow);
        assert_eq!(qp, vec![Period::new(2000, 1)]);
        assert_eq!(qv, vec![6.0]);
        let (_, qv) = aggregate_to_quarterly(&periods, &[1.0, 2.0, 3.0], StockFlow::Stock);
        assert_eq!(qv, vec![2.0]);
    }

    #[test]
    fn incomplete_quarter_is_missing() {
        let periods = months(Period::new(2000, 1), 5); // Jan..May
        let (qp, qv) = aggregate_to_quarterly(&periods, &[1.0; 5], StockFlow::Flow);
        assert_eq!(qp.len(), 2);
        assert_eq!(qv[0], 3.0);
        assert!(qv[1].is_nan());
        // a missing month inside an otherwise covered quarter also blanks it
        let (_, qv) = aggregate_to_quarterly(
            &months(Period::new(2000, 1), 6),
            &[1.0, f64::NAN, 3.0, 1.0, 1.0, 1.0],
            StockFlow::Flow,
        );
        assert!(qv[0].is_nan());
        assert_eq!(qv[1], 3.0);
    }

    #[test]
    fn transform_code_0_and_2() {
        assert_eq!(apply_transform(&[5.0, -1.0, 7.0], 0).unwrap(), vec![5.0, -1.0, 7.0]);
        let out = apply_transform(&[100.0, 110.0], 2).unwrap();
        assert!(out[0].is_nan());
        assert_abs_diff_eq!(out[1], 100.0 * 1.1f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(out[1], 9.531017980432486, epsilon = 1e-12);
    }

    #[test]
    fn transform_code_3_kills_exp_linear() {
        let series: Vec<f64> = (0..40).map(|t| (0.3 + 0.02 * t as f64).exp()).collect();
        let out = apply_transform(&series, 3).unwrap();
        assert!(out[0].is_nan() && out[1].is_nan());
        for v in &out[2..] {
            assert!(v.abs() < 1e-9, "expected 0, got {v}");
        }
    }

    #[test]
    fn transform_missing_propagation_and_lengths() {
        let x = [1.0, f64::NAN, 3.0, 4.0];
        for code in 0..=5u8 {
            let out = apply_transform(&x, code).unwrap();
            assert_eq!(out.len(), x.len());
            for t in 0..leading_missing(code) {
                assert!(out[t].is_nan());
            }
        }
        let d = apply_transform(&x, 4).unwrap();
        assert!(d[1].is_nan() && d[2].is_nan()); // x1 missing poisons both diffs
        assert_eq!(d[3], 1.0);
    }

    #[test]
    fn log_transform_rejects_non_positive() {
        assert!(matches!(
            apply_transform(&[1.0, 0.0, 2.0], 2),
            Err(PanelError::NonPositiveForLog { index: 1, .. })
        ));
        assert!(apply_transform(&[1.0, -2.0], 4).is_ok());
    }

    #[test]
    fn seasonal_dummies_remove_additive_pattern() {
        let pattern = [1.0, 0.0, -1.0, 0.0];
        let series: Vec<f64> = (0..24).map(|t| 5.0 + pattern[t % 4]).collect();
        let out = deseasonalize_dummies(&series, 0, 4).unwrap();
        for v in &out {
            assert_abs_diff_eq!(*v, 5.0, epsilon = 1e-10);
        }
        let mean_in: f64 = series.iter().sum::<f64>() / 24.0;
        let mean_out: f64 = out.iter().sum::<f64>() / 24.0;
        assert_abs_diff_eq!(mean_in, mean_out, epsilon = 1e-10);
    }

    #[test]
    fn seasonal_dummies_leave_constant_unchanged() {
        let series = vec![3.25; 20];
        let out = deseasonalize_dummies(&series, 2, 4).unwrap();
        assert_eq!(out, series);
    }

    #[test]
    fn seasonal_dummies_need_two_cycles() {
        assert!(matches!(
            deseasonalize_dummies(&[1.0; 7], 0, 4),
            Err(PanelError::TooShortForSeasonal { observed: 7, needed: 8 })
        ));
    }

    /// Periodogram power at one frequency.
    fn power_at(series: &[f64], cycles_per_obs: f64) -> f64 {
        let n = series.len() as f64;
        let (mut re, mut im) = (0.0, 0.0);
        for (t, &v) in series.iter().enumerate() {
            let arg = 2.0 * std::f64::consts::PI * cycles_per_obs * t as f64;
            re += v * arg.cos();
            im += v * arg.sin();
        }
        (re * re + im * im) / n
    }

    #[test]
    fn seasonal_dummies_cut_monthly_sinusoid_by_99_percent() {
        let series: Vec<f64> = (0..240)
            .map(|t| {
                let seasonal = 10.0 * (2.0 * std::f64::consts::PI * t as f64 / 12.0).sin();
                0.01 * t as f64 + seasonal
            })
            .collect();
        let out = deseasonalize_dummies(&series, 0, 12).unwrap();
        let before = power_at(&series, 1.0 / 12.0);
        let after = power_at(&out, 1.0 / 12.0);
        assert!(after < 0.01 * before, "seasonal power only fell {before} -> {after}");
    }

    #[test]
    fn outlier_beyond_ten_iqr_is_flagged() {
        // 0..=40: median 20, quartiles 10 and 30, IQR 20, all hit exactly.
        // Replacing the maximum keeps every quantile in place, so the
        // deviation threshold is exactly 10 * 20 = 200.
        let mut series: Vec<f64> = (0..=40).map(f64::from).collect();
        series[40] = 20.0 + 10.5 * 20.0;
        let report = detect_outliers(&series, None).unwrap();
        assert_eq!(report.indices, vec![40]);
        assert!(!report.degenerate_iqr);
        // at exactly ten IQRs the strict rule does not fire
        series[40] = 20.0 + 10.0 * 20.0;
        assert!(detect_outliers(&series, None).unwrap().indices.is_empty());
    }

    #[test]
    fn covid_window_is_exempt() {
        let mut series: Vec<f64> = (0..40).map(|t| (t % 7) as f64).collect();
        series.push(1000.0);
        let mut exempt = vec![false; 41];
        exempt[40] = true;
        let report = detect_outliers(&series, Some(&exempt)).unwrap();
        assert!(report.indices.is_empty());
    }

    #[test]
    fn outliers_invariant_under_positive_affine_map() {
        let mut rng = crate::rng::stream(11, "outlier-test", 0);
        let mut series: Vec<f64> = (0..60).map(|_| rng.gen_range(-1.0..1.0)).collect();
        series[13] = 55.0;
        let base = detect_outliers(&series, None).unwrap();
        assert_eq!(base.indices, vec![13]);
        let scaled: Vec<f64> = series.iter().map(|v| 3.0 * v + 7.0).collect();
        assert_eq!(detect_outliers(&scaled, None).unwrap().indices, base.indices);
    }

    #[test]
    fn degenerate_iqr_flags_nothing() {
        let report = detect_outliers(&[1.0, 1.0, 1.0, 1.0, 9.0], None).unwrap();
        assert!(report.degenerate_iqr);
        assert!(report.indices.is_empty());
    }

    fn panel_from(values: DMatrix<f64>, freq: Frequency) -> Panel {
        let n = values.nrows();
        let t = values.ncols();
        let step = freq.step_months();
        let periods: Vec<Period> =
            (0..t).map(|k| Period::new(2000, 1).add_months(k as i32 * step)).collect();
        let metas: Vec<SeriesMeta> = (0..n)
            .map(|i| {
                let mut m = meta("X", if freq == Frequency::Monthly { "M" } else { "Q" });
                m.id = format!("S{i}");
                m
            })
            .collect();
        Panel::new(freq, periods, metas, values).unwrap()
    }

    #[test]
    fn standardize_matches_population_convention() {
        let panel = panel_from(DMatrix::from_row_slice(1, 2, &[0.0, 2.0]), Frequency::Monthly);
        let sp = standardize(&panel).unwrap();
        assert_eq!(sp.mu[0], 1.0);
        assert_eq!(sp.omega[0], 1.0);
        assert_eq!(sp.z()[(0, 0)], -1.0);
        assert_eq!(sp.z()[(0, 1)], 1.0);
    }

    #[test]
    fn standardize_roundtrip_and_idempotence() {
        let mut rng = crate::rng::stream(3, "std-test", 0);
        let values = DMatrix::from_fn(4, 30, |_, _| rng.gen_range(-5.0..5.0));
        let panel = panel_from(values, Frequency::Monthly);
        let sp = standardize(&panel).unwrap();
        let back = sp.destandardize();
        assert_abs_diff_eq!(back.values, panel.values, epsilon = 1e-12);
        // a standardized column is (nearly) unchanged by standardizing again
        let sp2 = standardize(&sp.panel).unwrap();
        assert_abs_diff_eq!(sp2.mu.amax(), 0.0, epsilon = 1e-10);
        for i in 0..4 {
            assert_abs_diff_eq!(sp2.omega[i], 1.0, epsilon = 1e-8);
        }
        assert!(matches!(
            standardize(&panel_from(DMatrix::from_element(1, 5, 2.0), Frequency::Monthly)),
            Err(PanelError::ConstantSeries { .. })
        ));
    }

    #[test]
    fn em_is_identity_on_balanced_panel() {
        let mut rng = crate::rng::stream(5, "em-test", 0);
        let values = DMatrix::from_fn(5, 30, |_, _| rng.gen_range(-1.0..1.0));
        let panel = panel_from(values.clone(), Frequency::Monthly);
        let out = em_impute(&panel, 2, 1e-6, 50).unwrap();
        assert_eq!(out.iterations, 1);
        assert!(out.converged);
        assert_eq!(out.panel.values, values);
    }

    #[test]
    fn em_recovers_masked_cell_of_rank_one_panel() {
        // f has zero mean; the masked cell sits at the series mean, so the
        // rank-1 structure stays exact and the EM fixed point is the truth.
        let t = 41;
        let f: Vec<f64> = (0..t).map(|k| k as f64 - 20.0).collect();
        let lambda = [1.0, -0.7, 0.4, 1.3, 0.9];
        let full = DMatrix::from_fn(5, t, |i, j| lambda[i] * f[j]);
        let mut masked = full.clone();
        masked[(2, 20)] = f64::NAN; // f[20] = 0 = mean of f
        let panel = panel_from(masked, Frequency::Monthly);
        let out = em_impute(&panel, 1, 1e-10, 200).unwrap();
        assert!(out.converged);
        assert_abs_diff_eq!(out.panel.values[(2, 20)], full[(2, 20)], epsilon = 1e-8);

        // symmetric two-cell mask: the exact completion is again a fixed point
        let mut masked = full.clone();
        masked[(2, 5)] = f64::NAN;
        masked[(2, 35)] = f64::NAN; // f[5] = -f[35]
        let panel = panel_from(masked, Frequency::Monthly);
        let out = em_impute(&panel, 1, 1e-12, 500).unwrap();
        assert_abs_diff_eq!(out.panel.values[(2, 5)], full[(2, 5)], epsilon = 1e-8);
        assert_abs_diff_eq!(out.panel.values[(2, 35)], full[(2, 35)], epsilon = 1e-8);
    }

    #[test]
    fn em_objective_is_monotone_and_observed_cells_untouched() {
        let mut rng = crate::rng::stream(6, "em-mc", 0);
        let (n, t, r) = (20, 60, 3);
        let loadings = DMatrix::from_fn(n, r, |_, _| rng.gen_range(-1.0..1.0));
        let factors = DMatrix::from_fn(r, t, |_, _| rng.gen_range(-1.0..1.0));
        let noise = DMatrix::from_fn(n, t, |_, _| 0.01 * rng.gen_range(-1.0..1.0));
        let full = &loadings * &factors + noise;
        let mut masked = full.clone();
        let mut holes = Vec::new();
        for _ in 0..(n * t / 10) {
            let (i, j) = (rng.gen_range(0..n), rng.gen_range(0..t));
            masked[(i, j)] = f64::NAN;
            holes.push((i, j));
        }
        let panel = panel_from(masked.clone(), Frequency::Monthly);
        let out = em_impute(&panel, r, 1e-8, 500).unwrap();
        assert!(out.converged);
        for w in out.objective.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "objective rose: {} -> {}", w[0], w[1]);
        }
        for i in 0..n {
            for j in 0..t {
                if !masked[(i, j)].is_nan() {
                    assert_eq!(out.panel.values[(i, j)].to_bits(), full[(i, j)].to_bits());
                }
            }
        }
        let rmse = (holes
            .iter()
            .map(|&(i, j)| (out.panel.values[(i, j)] - full[(i, j)]).powi(2))
            .sum::<f64>()
            / holes.len() as f64)
            .sqrt();
        assert!(rmse < 0.05, "imputation rmse {rmse}");
    }

    #[test]
    fn em_rejects_oversized_rank_and_starved_series() {
        let panel = panel_from(DMatrix::from_element(3, 10, 0.0), Frequency::Monthly);
        assert!(matches!(em_impute(&panel, 3, 1e-6, 10), Err(PanelError::RankTooLarge { .. })));
        let mut values = DMatrix::from_fn(3, 10, |i, j| (i + j) as f64);
        for j in 0..8 {
            values[(0, j)] = f64::NAN;
        }
        let panel = panel_from(values, Frequency::Monthly);
        assert!(matches!(
            em_impute(&panel, 1, 1e-6, 10),
            Err(PanelError::TooManyMissing { .. })
        ));
    }

    #[test]
    fn quarterly_aggregation_of_mixed_panel() {
        let text = "N,ID,Country,Series,Unit,SA,F,Source,LT,HT,Class,StockFlow,FirstObs\n\
                    1,A,EA,a,u,SA,M,EUR,0,0,R,Flow,\n\
                    2,GDP,EA,g,u,SCA,Q,EUR,2,2,R,Flow,";
        let catalog: Catalog = parse_catalog(text).unwrap();
        let periods = months(Period::new(2000, 1), 6);
        let mut values = DMatrix::from_element(2, 6, f64::NAN);
        for (j, v) in [1.0, 2.0, 3.0, 4.0, 5.0, 6.0].iter().enumerate() {
            values[(0, j)] = *v;
        }
        values[(1, 0)] = 100.0;
        values[(1, 3)] = 101.0;
        let raw = RawPanel { periods, metas: catalog.entries, values };
        let q = aggregate_panel_to_quarterly(&raw).unwrap();
        assert_eq!(q.periods, vec![Period::new(2000, 1), Period::new(2000, 4)]);
        assert_eq!(q.values[(0, 0)], 6.0);
        assert_eq!(q.values[(0, 1)], 15.0);
        assert_eq!(q.values[(1, 0)], 100.0);
        assert_eq!(q.values[(1, 1)], 101.0);
    }
}
