//! Synthetic data generators for tests, benchmarks, and the bundled
//! example fixtures: factor-structured panels and structural VARs with a
//! known impact matrix.

pub mod fixture;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::catalog::{parse_catalog, SeriesMeta};
use crate::linalg;
use crate::panel::Panel;
use crate::period::{Frequency, Period};

/// Configuration of a static-factor panel draw.
#[derive(Debug, Clone)]
pub struct FactorDgpConfig {
    pub n: usize,
    pub t: usize,
    pub r: usize,
    /// AR(1) coefficient of each factor.
    pub factor_ar: f64,
    /// AR(1) coefficient of the idiosyncratic noise.
    pub idio_ar: f64,
    /// Idiosyncratic-to-common variance ratio per series.
    pub noise_ratio: f64,
    pub frequency: Frequency,
    pub start: Period,
}

impl Default for FactorDgpConfig {
    fn default() -> Self {
        FactorDgpConfig {
            n: 100,
            t: 300,
            r: 6,
            factor_ar: 0.7,
            idio_ar: 0.3,
            noise_ratio: 1.0,
            frequency: Frequency::Monthly,
            start: Period::new(2000, 1),
        }
    }
}

/// A generated factor panel together with its true components.
#[derive(Debug, Clone)]
pub struct FactorDgp {
    pub panel: Panel,
    /// N×r true loadings.
    pub loadings: DMatrix<f64>,
    /// T×r true factors (unit variance each).
    pub factors: DMatrix<f64>,
    /// N×T true common component.
    pub common: DMatrix<f64>,
}

fn ar1_series<R: Rng>(t: usize, phi: f64, rng: &mut R) -> Vec<f64> {
    let innovation_sd = (1.0 - phi * phi).sqrt();
    let mut x = 0.0;
    for _ in 0..100 {
        x = phi * x + innovation_sd * rng.sample::<f64, _>(StandardNormal);
    }
    (0..t)
        .map(|_| {
            x = phi * x + innovation_sd * rng.sample::<f64, _>(StandardNormal);
            x
        })
        .collect()
}

/// Metadata rows for synthetic series `S000..`, all with transform code 0.
pub fn synthetic_metas(country: &str, n: usize, frequency: Frequency) -> Vec<SeriesMeta> {
    let freq = match frequency {
        Frequency::Monthly => "M",
        Frequency::Quarterly => "Q",
    };
    let mut text = String::from("N,ID,Country,Series,Unit,SA,F,Source,LT,HT,Class\n");
    for i in 0..n {
        text.push_str(&format!(
            "{},S{:03},{country},synthetic {i},u,SA,{freq},EUR,0,0,R\n",
            i + 1,
            i
        ));
    }
    parse_catalog(&text).expect("synthetic catalog").entries
}

/// Draw a balanced panel `x = loadings * factors' + noise` with AR(1)
/// factors and AR(1) idiosyncratic noise scaled per series to the
/// configured variance ratio.
pub fn factor_panel<R: Rng>(cfg: &FactorDgpConfig, rng: &mut R) -> FactorDgp {
    let FactorDgpConfig { n, t, r, .. } = *cfg;
    let factors = {
        let mut f = DMatrix::zeros(t, r);
        for k in 0..r {
            let col = ar1_series(t, cfg.factor_ar, rng);
            f.set_column(k, &DVector::from_vec(col));
        }
        f
    };
    let loadings = DMatrix::from_fn(n, r, |_, _| rng.sample::<f64, _>(StandardNormal));
    let common = &loadings * factors.transpose();

    let mut values = common.clone();
    for i in 0..n {
        let common_var = loadings.row(i).iter().map(|l| l * l).sum::<f64>().max(1e-6);
        let idio_sd = (cfg.noise_ratio * common_var).sqrt();
        let noise = ar1_series(t, cfg.idio_ar, rng);
        for j in 0..t {
            values[(i, j)] += idio_sd * noise[j];
        }
    }

    let step = cfg.frequency.step_months();
    let periods: Vec<Period> = (0..t).map(|k| cfg.start.add_months(k as i32 * step)).collect();
    let metas = synthetic_metas("EA", n, cfg.frequency);
    let panel = Panel::new(cfg.frequency, periods, metas, values).expect("synthetic panel");
    FactorDgp { panel, loadings, factors, common }
}

/// A generated stable VAR with a known structural impact matrix.
#[derive(Debug, Clone)]
pub struct SvarDgp {
    /// T×n data matrix.
    pub y: DMatrix<f64>,
    pub intercept: DVector<f64>,
    /// Lag coefficient matrices.
    pub b: Vec<DMatrix<f64>>,
    /// Structural impact matrix: `u = s * eps`.
    pub s: DMatrix<f64>,
    /// T×n structural shocks (row t drawn i.i.d. standard normal).
    pub shocks: DMatrix<f64>,
}

impl SvarDgp {
    /// True reduced-form error covariance `s s'`.
    pub fn sigma(&self) -> DMatrix<f64> {
        &self.s * self.s.transpose()
    }

    /// True impact column of shock `j`, normalized to unit impact on
    /// variable `policy`.
    pub fn unit_impact_column(&self, j: usize, policy: usize) -> DVector<f64> {
        let col = self.s.column(j).into_owned();
        &col / col[policy]
    }
}

/// Random diagonally-dominant stable lag matrix scaled to the requested
/// spectral radius.
fn stable_lag_matrix<R: Rng>(n: usize, radius: f64, rng: &mut R) -> DMatrix<f64> {
    let mut b = DMatrix::from_fn(n, n, |_, _| 0.3 * rng.sample::<f64, _>(StandardNormal));
    for i in 0..n {
        b[(i, i)] += 0.6;
    }
    let rho = linalg::spectral_radius(&b);
    b * (radius / rho.max(1e-12))
}

/// Simulate `y_t = c + b1 y_{t-1} + ... + s eps_t` with i.i.d. standard
/// normal structural shocks and a burn-in of 200 periods.
pub fn svar_panel<R: Rng>(
    n: usize,
    t: usize,
    p: usize,
    s: DMatrix<f64>,
    rng: &mut R,
) -> SvarDgp {
    assert_eq!(s.nrows(), n);
    assert_eq!(s.ncols(), n);
    let b: Vec<DMatrix<f64>> = (0..p)
        .map(|lag| stable_lag_matrix(n, 0.55 / (lag + 1) as f64, rng) / p as f64)
        .collect();
    let intercept = DVector::from_fn(n, |i, _| 0.1 * (i as f64 + 1.0));

    let burn = 200;
    let total = t + burn;
    let shocks_all = DMatrix::from_fn(total, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut y_all = DMatrix::zeros(total, n);
    for row in 0..total {
        let mut v = intercept.clone();
        for (lag, bl) in b.iter().enumerate() {
            if row > lag {
                v += bl * y_all.row(row - lag - 1).transpose();
            }
        }
        v += &s * shocks_all.row(row).transpose();
        y_all.row_mut(row).copy_from(&v.transpose());
    }
    SvarDgp {
        y: y_all.rows(burn, t).into_owned(),
        intercept,
        b,
        s,
        shocks: shocks_all.rows(burn, t).into_owned(),
    }
}

/// A well-conditioned 7×7 impact matrix whose first column is the policy
/// shock with impacts of mixed sign and order one. The policy residual
/// loads on the policy shock alone, so a unit-variance instrument noise
/// gives a first-stage R-squared of exactly one half.
pub fn default_impact_7() -> DMatrix<f64> {
    let mut s = DMatrix::zeros(7, 7);
    let first = [1.0, -0.8, -0.6, 0.7, -1.2, 0.55, -0.9];
    for (i, v) in first.iter().enumerate() {
        s[(i, 0)] = *v;
    }
    for j in 1..7 {
        s[(j, j)] = 0.6;
    }
    // mild cross-loadings keep Sigma away from block-diagonal
    for i in 1..7 {
        for j in 1..7 {
            if i != j {
                s[(i, j)] = 0.1 * (((i * 5 + j * 3) % 7) as f64 - 3.0) / 3.0;
            }
        }
    }
    s
}

/// T×n standard-normal shocks post-processed so that every column has an
/// exactly zero sample mean and columns `q != policy` are exactly
/// empirically orthogonal to the policy column. Feeding these through a
/// known impact matrix makes two-stage instrumental estimates exact up to
/// rounding.
pub fn exact_orthogonal_shocks<R: Rng>(
    t: usize,
    n: usize,
    policy: usize,
    rng: &mut R,
) -> DMatrix<f64> {
    let mut eps = DMatrix::from_fn(t, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    for j in 0..n {
        let mean = eps.column(j).mean();
        for i in 0..t {
            eps[(i, j)] -= mean;
        }
    }
    let p = eps.column(policy).into_owned();
    let ss = p.dot(&p);
    for j in 0..n {
        if j == policy {
            continue;
        }
        let beta = eps.column(j).dot(&p) / ss;
        for i in 0..t {
            eps[(i, j)] -= beta * p[i];
        }
    }
    eps
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn factor_panel_has_requested_shape_and_balance() {
        let cfg = FactorDgpConfig { n: 12, t: 40, r: 2, ..Default::default() };
        let dgp = factor_panel(&cfg, &mut crate::rng::stream(1, "synth", 0));
        assert_eq!(dgp.panel.n_series(), 12);
        assert_eq!(dgp.panel.n_periods(), 40);
        assert!(dgp.panel.is_balanced());
    }

    #[test]
    fn svar_is_stable_and_reproducible() {
        let s = default_impact_7();
        let a = svar_panel(7, 50, 2, s.clone(), &mut crate::rng::stream(9, "svar", 3));
        let b = svar_panel(7, 50, 2, s, &mut crate::rng::stream(9, "svar", 3));
        assert_eq!(a.y, b.y);
        for bl in &a.b {
            assert!(crate::linalg::spectral_radius(bl) < 1.0);
        }
        assert!(a.y.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn orthogonalized_shocks_are_exactly_orthogonal_to_policy() {
        let eps = exact_orthogonal_shocks(200, 4, 0, &mut crate::rng::stream(2, "orth", 0));
        let p = eps.column(0);
        for j in 1..4 {
            assert_abs_diff_eq!(eps.column(j).dot(&p), 0.0, epsilon = 1e-9);
            assert_abs_diff_eq!(eps.column(j).mean(), 0.0, epsilon = 1e-12);
        }
    }
}
