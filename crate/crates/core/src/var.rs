//! Reduced-form VAR estimation with optional post-2020 residual-volatility
//! scaling, and impulse responses from the truncated moving-average
//! representation.
//!
//! The model is `y_t = c + B_1 y_{t-1} + ... + B_p y_{t-p} + sigma_t u_t`
//! with `u_t` zero-mean innovations of covariance `Sigma` and `sigma_t = 1`
//! before the scaling window. Inside the window each `sigma_t` is the
//! per-period Gaussian likelihood maximizer given `Sigma`, and estimation
//! alternates weighted least squares, the `Sigma` update, and the
//! `sigma_t` update to a fixed point.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::linalg::{self, LinalgError};

#[derive(Debug, Error)]
pub enum VarError {
    #[error("need T - p > n*p + 1 observations: T = {t}, p = {p}, n = {n}")]
    NotEnoughObservations { t: usize, p: usize, n: usize },
    #[error("singular regressor matrix: {0}")]
    SingularRegressors(LinalgError),
    #[error("volatility iteration did not converge in {iterations} steps")]
    NoConvergence { iterations: usize },
    #[error("innovation covariance is not positive definite")]
    SingularSigma,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// Options of the volatility fixed-point iteration.
#[derive(Debug, Clone, Copy)]
pub struct VolatilityOptions {
    /// Lower clip for an estimated per-period scale.
    pub sigma_min: f64,
    /// Stop when the largest change of any `sigma_t` falls below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for VolatilityOptions {
    fn default() -> Self {
        VolatilityOptions { sigma_min: 1e-3, tol: 1e-6, max_iter: 200 }
    }
}

/// Estimated reduced-form VAR.
#[derive(Debug, Clone)]
pub struct VarModel {
    pub n: usize,
    pub p: usize,
    pub intercept: DVector<f64>,
    /// Lag matrices `B_1..B_p`.
    pub lags: Vec<DMatrix<f64>>,
    /// Innovation covariance of the descaled residuals.
    pub sigma: DMatrix<f64>,
    /// (T-p)×n descaled innovations `u_t`; row i belongs to data row p+i.
    pub residuals: DMatrix<f64>,
    /// Per-period scale, length T-p, aligned with `residuals`; exactly 1
    /// before the scaling window.
    pub sigma_t: DVector<f64>,
    /// Data-row index where scaling starts, if scaling was requested.
    pub covid_start: Option<usize>,
}

impl VarModel {
    pub fn effective_obs(&self) -> usize {
        self.residuals.nrows()
    }

    /// Raw residuals `sigma_t * u_t`.
    pub fn raw_residuals(&self) -> DMatrix<f64> {
        let mut e = self.residuals.clone();
        for i in 0..e.nrows() {
            for j in 0..e.ncols() {
                e[(i, j)] *= self.sigma_t[i];
            }
        }
        e
    }

    /// Companion matrix of the lag polynomial, `(n p)×(n p)`.
    pub fn companion(&self) -> DMatrix<f64> {
        let (n, p) = (self.n, self.p);
        let mut a = DMatrix::zeros(n * p, n * p);
        for (lag, b) in self.lags.iter().enumerate() {
            a.view_mut((0, lag * n), (n, n)).copy_from(b);
        }
        for i in 0..n * (p - 1) {
            a[(n + i, i)] = 1.0;
        }
        a
    }

    /// Largest modulus of a companion eigenvalue; below 1 means stable.
    pub fn spectral_radius(&self) -> f64 {
        if self.p == 0 {
            return 0.0;
        }
        linalg::spectral_radius(&self.companion())
    }
}

fn design_matrix(y: &DMatrix<f64>, p: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let (t, n) = (y.nrows(), y.ncols());
    let rows = t - p;
    let mut x = DMatrix::zeros(rows, 1 + n * p);
    let mut y_eff = DMatrix::zeros(rows, n);
    for (row, tt) in (p..t).enumerate() {
        x[(row, 0)] = 1.0;
        for lag in 1..=p {
            for j in 0..n {
                x[(row, 1 + (lag - 1) * n + j)] = y[(tt - lag, j)];
            }
        }
        y_eff.row_mut(row).copy_from(&y.row(tt));
    }
    (x, y_eff)
}

fn unpack(coef: &DMatrix<f64>, n: usize, p: usize) -> (DVector<f64>, Vec<DMatrix<f64>>) {
    let intercept = coef.row(0).transpose();
    let lags = (0..p)
        .map(|lag| {
            // coefficient block for lag l: rows 1 + l*n .. 1 + (l+1)*n of coef,
            // transposed so B_l maps y_{t-l-1} to y_t
            coef.view((1 + lag * n, 0), (n, n)).transpose().into_owned()
        })
        .collect();
    (intercept, lags)
}

/// Per-period volatility scale given raw residuals and `Sigma`: 1 outside
/// the window, `sqrt(e_t' Sigma^{-1} e_t / n)` (clipped below at
/// `sigma_min`) inside.
pub fn estimate_covid_volatility(
    raw_residuals: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    window: &[bool],
    sigma_min: f64,
) -> Result<DVector<f64>, VarError> {
    let (rows, n) = (raw_residuals.nrows(), raw_residuals.ncols());
    if window.len() != rows {
        return Err(VarError::ShapeMismatch(format!(
            "window length {} vs {} residual rows",
            window.len(),
            rows
        )));
    }
    let chol = sigma.clone().cholesky().ok_or(VarError::SingularSigma)?;
    let mut out = DVector::from_element(rows, 1.0);
    for i in 0..rows {
        if !window[i] {
            continue;
        }
        let e = raw_residuals.row(i).transpose();
        let solved = chol.solve(&e);
        let quad = e.dot(&solved);
        out[i] = (quad / n as f64).sqrt().max(sigma_min);
    }
    Ok(out)
}

/// Fit a VAR(p) by least squares. With `covid_start = Some(row)` the
/// residual variance from that data row onward is rescaled by a per-period
/// `sigma_t` and estimation iterates WLS, `Sigma`, and `sigma_t` to a
/// fixed point.
pub fn fit_var(
    y: &DMatrix<f64>,
    p: usize,
    covid_start: Option<usize>,
) -> Result<VarModel, VarError> {
    fit_var_with(y, p, covid_start, &VolatilityOptions::default())
}

pub fn fit_var_with(
    y: &DMatrix<f64>,
    p: usize,
    covid_start: Option<usize>,
    opts: &VolatilityOptions,
) -> Result<VarModel, VarError> {
    let (t, n) = (y.nrows(), y.ncols());
    assert!(p >= 1, "lag order must be at least 1");
    if t <= p || t - p <= n * p + 1 {
        return Err(VarError::NotEnoughObservations { t, p, n });
    }
    let (x, y_eff) = design_matrix(y, p);
    let rows = t - p;
    let window: Vec<bool> = (0..rows)
        .map(|i| covid_start.is_some_and(|start| p + i >= start))
        .collect();
    let scaling = window.iter().any(|&w| w);

    let mut sigma_t = DVector::from_element(rows, 1.0);
    let mut coef;
    let mut raw;
    let mut sigma;
    let mut iterations = 0;
    loop {
        iterations += 1;
        // weighted least squares with weights 1/sigma_t^2
        let (xw, yw) = if scaling {
            let mut xw = x.clone();
            let mut yw = y_eff.clone();
            for i in 0..rows {
                let w = 1.0 / sigma_t[i];
                for j in 0..xw.ncols() {
                    xw[(i, j)] *= w;
                }
                for j in 0..n {
                    yw[(i, j)] *= w;
                }
            }
            (xw, yw)
        } else {
            (x.clone(), y_eff.clone())
        };
        let fit = linalg::ols(&xw, &yw).map_err(VarError::SingularRegressors)?;
        coef = fit.coef;
        raw = &y_eff - &x * &coef;

        // Sigma from variance-adjusted residuals
        let mut s = DMatrix::zeros(n, n);
        for i in 0..rows {
            let e = raw.row(i).transpose() / sigma_t[i];
            s += &e * e.transpose();
        }
        sigma = s / rows as f64;

        if !scaling {
            break;
        }
        let next = estimate_covid_volatility(&raw, &sigma, &window, opts.sigma_min)?;
        let delta = (&next - &sigma_t).amax();
        sigma_t = next;
        if delta < opts.tol {
            break;
        }
        if iterations >= opts.max_iter {
            return Err(VarError::NoConvergence { iterations });
        }
    }

    let mut residuals = raw;
    for i in 0..rows {
        for j in 0..n {
            residuals[(i, j)] /= sigma_t[i];
        }
    }
    let (intercept, lags) = unpack(&coef, n, p);
    Ok(VarModel { n, p, intercept, lags, sigma, residuals, sigma_t, covid_start })
}

/// Fit by WLS holding a given per-period scale fixed (no volatility
/// iteration); `Sigma` comes from the descaled residuals.
pub fn fit_var_fixed_sigma(
    y: &DMatrix<f64>,
    p: usize,
    sigma_t: &DVector<f64>,
    covid_start: Option<usize>,
) -> Result<VarModel, VarError> {
    let (t, n) = (y.nrows(), y.ncols());
    assert!(p >= 1, "lag order must be at least 1");
    if t <= p || t - p <= n * p + 1 {
        return Err(VarError::NotEnoughObservations { t, p, n });
    }
    let rows = t - p;
    if sigma_t.len() != rows {
        return Err(VarError::ShapeMismatch(format!(
            "sigma_t length {} vs {} effective rows",
            sigma_t.len(),
            rows
        )));
    }
    let (x, y_eff) = design_matrix(y, p);
    let mut xw = x.clone();
    let mut yw = y_eff.clone();
    for i in 0..rows {
        let w = 1.0 / sigma_t[i];
        for j in 0..xw.ncols() {
            xw[(i, j)] *= w;
        }
        for j in 0..n {
            yw[(i, j)] *= w;
        }
    }
    let fit = linalg::ols(&xw, &yw).map_err(VarError::SingularRegressors)?;
    let raw = &y_eff - &x * &fit.coef;
    let mut residuals = raw;
    for i in 0..rows {
        for j in 0..n {
            residuals[(i, j)] /= sigma_t[i];
        }
    }
    let sigma = residuals.transpose() * &residuals / rows as f64;
    let (intercept, lags) = unpack(&fit.coef, n, p);
    Ok(VarModel {
        n,
        p,
        intercept,
        lags,
        sigma,
        residuals,
        sigma_t: sigma_t.clone(),
        covid_start,
    })
}

/// Impulse responses to one shock, horizon 0..=H per row, one column per
/// variable. Values are post-cumulation where `cumulative` is set.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(into = "IrfWire", try_from = "IrfWire")]
pub struct Irf {
    /// (H+1)×n responses.
    pub values: DMatrix<f64>,
    pub cumulative: Vec<bool>,
}

/// Row-major wire format for [`Irf`].
#[derive(serde::Serialize, serde::Deserialize)]
struct IrfWire {
    rows: Vec<Vec<f64>>,
    cumulative: Vec<bool>,
}

impl From<Irf> for IrfWire {
    fn from(irf: Irf) -> Self {
        let rows = (0..irf.values.nrows())
            .map(|h| irf.values.row(h).iter().copied().collect())
            .collect();
        IrfWire { rows, cumulative: irf.cumulative }
    }
}

impl TryFrom<IrfWire> for Irf {
    type Error = String;

    fn try_from(wire: IrfWire) -> Result<Self, Self::Error> {
        let nrows = wire.rows.len();
        let ncols = wire.cumulative.len();
        if wire.rows.iter().any(|r| r.len() != ncols) {
            return Err("ragged impulse-response rows".to_string());
        }
        let values = DMatrix::from_fn(nrows, ncols, |i, j| wire.rows[i][j]);
        Ok(Irf { values, cumulative: wire.cumulative })
    }
}

/// JSON dump of a fitted model: intercept, lag matrices and covariance in
/// row-major order, and the per-period scale.
pub fn model_to_json(model: &VarModel) -> serde_json::Value {
    let row_major = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
        (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
    };
    serde_json::json!({
        "n": model.n,
        "p": model.p,
        "intercept": model.intercept.as_slice(),
        "lags": model.lags.iter().map(row_major).collect::<Vec<_>>(),
        "sigma": row_major(&model.sigma),
        "sigma_t": model.sigma_t.as_slice(),
        "covid_start_row": model.covid_start,
    })
}

impl Irf {
    pub fn horizons(&self) -> usize {
        self.values.nrows() - 1
    }

    pub fn n_variables(&self) -> usize {
        self.values.ncols()
    }
}

/// Moving-average coefficient matrices `Psi_0..Psi_H` of the fitted lag
/// polynomial (`Psi_0 = I`).
pub fn ma_coefficients(model: &VarModel, h: usize) -> Vec<DMatrix<f64>> {
    let n = model.n;
    let mut psi: Vec<DMatrix<f64>> = Vec::with_capacity(h + 1);
    psi.push(DMatrix::identity(n, n));
    for step in 1..=h {
        let mut m = DMatrix::zeros(n, n);
        for (lag, b) in model.lags.iter().enumerate() {
            if step > lag {
                m += b * &psi[step - 1 - lag];
            }
        }
        psi.push(m);
    }
    psi
}

/// Response of every variable to the impact vector `s` over horizons
/// `0..=h`, cumulating variables flagged in `cumulative`.
pub fn irf(model: &VarModel, impact: &DVector<f64>, h: usize, cumulative: &[bool]) -> Irf {
    assert_eq!(impact.len(), model.n, "impact vector length");
    assert_eq!(cumulative.len(), model.n, "cumulative flag length");
    let psi = ma_coefficients(model, h);
    let mut values = DMatrix::zeros(h + 1, model.n);
    for (row, m) in psi.iter().enumerate() {
        let resp = m * impact;
        values.row_mut(row).copy_from(&resp.transpose());
    }
    for (j, &flag) in cumulative.iter().enumerate() {
        if flag {
            for row in 1..=h {
                values[(row, j)] += values[(row - 1, j)];
            }
        }
    }
    Irf { values, cumulative: cumulative.to_vec() }
}
