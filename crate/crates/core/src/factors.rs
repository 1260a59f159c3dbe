//! Principal-component estimation of the approximate factor model, common
//! components, explained-variance shares, and four criteria for choosing
//! the number of factors.
//!
//! For a standardized panel `z` (N×T) the sample covariance is `z z' / T`.
//! Loadings are `sqrt(N)` times the top eigenvectors, factors are the
//! projection `z' loadings / N`, and the common component on the original
//! scale is `mu + omega .* (loadings factors')` series by series.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, LinalgError};
use crate::panel::{PanelError, StandardizedPanel};

#[derive(Debug, Error)]
pub enum FactorError {
    #[error("factor count {r} exceeds min(N, T) = {cap}")]
    RankTooLarge { r: usize, cap: usize },
    #[error("rmax {rmax} too large: {criterion} needs rmax {slack} below min(N, T) = {cap}")]
    RmaxTooLarge { rmax: usize, cap: usize, slack: usize, criterion: &'static str },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Panel(#[from] PanelError),
}

/// Estimated factor model for a standardized panel.
#[derive(Debug, Clone)]
pub struct FactorModel {
    pub r: usize,
    /// N×r, normalized so `loadings' loadings / N = I`.
    pub loadings: DMatrix<f64>,
    /// T×r, column-orthogonal.
    pub factors: DMatrix<f64>,
    /// All min(N, T) covariance eigenvalues, descending.
    pub eigenvalues: DVector<f64>,
    pub mu: DVector<f64>,
    pub omega: DVector<f64>,
}

/// Common/idiosyncratic split of a panel: `chi + xi` reproduces the
/// de-standardized panel exactly.
#[derive(Debug, Clone)]
pub struct CommonComponents {
    pub chi: DMatrix<f64>,
    pub xi: DMatrix<f64>,
}

/// Estimate an `r`-factor model by principal components.
///
/// `r = 0` is allowed and yields an empty loading matrix, so the common
/// component degenerates to the series means.
pub fn pca_factors(sp: &StandardizedPanel, r: usize) -> Result<FactorModel, FactorError> {
    let cap = sp.n_series().min(sp.n_periods());
    if r > cap {
        return Err(FactorError::RankTooLarge { r, cap });
    }
    let pca = linalg::pca(sp.z(), r)?;
    Ok(FactorModel {
        r,
        loadings: pca.loadings,
        factors: pca.factors,
        eigenvalues: pca.eigenvalues,
        mu: sp.mu.clone(),
        omega: sp.omega.clone(),
    })
}

/// Split the panel into the de-standardized common component
/// `mu + omega .* (loadings factors')` and the residual.
pub fn common_components(
    fm: &FactorModel,
    sp: &StandardizedPanel,
) -> Result<CommonComponents, FactorError> {
    let (n, t) = (sp.n_series(), sp.n_periods());
    if fm.loadings.nrows() != n || fm.factors.nrows() != t {
        return Err(FactorError::ShapeMismatch(format!(
            "model for {}x{}, panel is {}x{}",
            fm.loadings.nrows(),
            fm.factors.nrows(),
            n,
            t
        )));
    }
    let chi_std = &fm.loadings * fm.factors.transpose();
    let mut chi = DMatrix::zeros(n, t);
    let mut xi = DMatrix::zeros(n, t);
    let original = sp.destandardize();
    for i in 0..n {
        for j in 0..t {
            chi[(i, j)] = fm.mu[i] + fm.omega[i] * chi_std[(i, j)];
            xi[(i, j)] = original.values[(i, j)] - chi[(i, j)];
        }
    }
    Ok(CommonComponents { chi, xi })
}

fn population_variance(row: &[f64]) -> f64 {
    let m = row.iter().sum::<f64>() / row.len() as f64;
    row.iter().map(|v| (v - m).powi(2)).sum::<f64>() / row.len() as f64
}

/// Share of the variance of series `i` explained by its common component,
/// in the population-variance convention.
pub fn explained_variance(
    fm: &FactorModel,
    sp: &StandardizedPanel,
    cc: &CommonComponents,
    i: usize,
) -> f64 {
    assert!(i < sp.n_series(), "series index out of range");
    let _ = fm;
    let row: Vec<f64> = cc.chi.row(i).iter().copied().collect();
    let chi_var = population_variance(&row);
    let x_var = sp.omega[i] * sp.omega[i];
    chi_var / x_var
}

/// Mean squared idiosyncratic residual of a `k`-factor fit, computed from
/// the eigenvalue tail. Tail mass at the numerical-noise floor counts as
/// zero, so exactly low-rank panels give an exactly zero residual.
fn residual_share(eigs: &[f64], n: usize, k: usize) -> f64 {
    let floor = eigs.first().copied().unwrap_or(0.0).abs() * 1e-14;
    let tail: f64 = eigs.iter().skip(k).filter(|v| v.abs() > floor).sum();
    (tail / n as f64).max(0.0)
}

/// Log information criterion with penalty multiplier `c`; `c = 1` is the
/// plain criterion. Ties resolve to the smallest count.
pub(crate) fn ic2_select(eigs: &[f64], n: usize, t: usize, rmax: usize, c: f64) -> usize {
    let penalty = (n + t) as f64 / (n * t) as f64 * (n.min(t) as f64).ln();
    let mut best_k = 0;
    let mut best = f64::INFINITY;
    for k in 0..=rmax {
        let v = residual_share(eigs, n, k).max(1e-300);
        let ic = v.ln() + c * k as f64 * penalty;
        if ic < best {
            best = ic;
            best_k = k;
        }
    }
    best_k
}

/// Choose the factor count minimizing `log V(k) + k ((N+T)/NT) log min(N,T)`
/// over `k = 0..=rmax`.
pub fn ic2_bai_ng(sp: &StandardizedPanel, rmax: usize) -> Result<usize, FactorError> {
    let cap = sp.n_series().min(sp.n_periods());
    if rmax >= cap {
        return Err(FactorError::RmaxTooLarge { rmax, cap, slack: 1, criterion: "ic2" });
    }
    let eigs = linalg::pca(sp.z(), 0)?.eigenvalues;
    Ok(ic2_select(eigs.as_slice(), sp.n_series(), sp.n_periods(), rmax, 1.0))
}

/// Eigenvalue-ratio selection on a descending spectrum: the `k` in
/// `1..=rmax` maximizing `eigs[k-1] / eigs[k]` (first maximum on ties).
pub(crate) fn er_select(eigs: &[f64], rmax: usize) -> usize {
    let mut best_k = 1;
    let mut best = f64::NEG_INFINITY;
    for k in 1..=rmax {
        let denom = eigs[k];
        let ratio = if denom > 0.0 {
            eigs[k - 1] / denom
        } else if eigs[k - 1] > 0.0 {
            f64::INFINITY
        } else {
            f64::NAN
        };
        if ratio > best {
            best = ratio;
            best_k = k;
        }
    }
    best_k
}

/// Eigenvalue-ratio criterion: `argmax_k eigenvalue_k / eigenvalue_{k+1}`.
pub fn er_ahn_horenstein(sp: &StandardizedPanel, rmax: usize) -> Result<usize, FactorError> {
    let cap = sp.n_series().min(sp.n_periods());
    if rmax + 1 > cap {
        return Err(FactorError::RmaxTooLarge { rmax, cap, slack: 1, criterion: "er" });
    }
    let eigs = linalg::pca(sp.z(), 0)?.eigenvalues;
    Ok(er_select(eigs.as_slice(), rmax))
}

/// Result of the edge-distribution test; `converged` is false when the
/// iteration hit `max_iter` without reaching a fixed point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OnatskiOutcome {
    pub r: usize,
    pub converged: bool,
}

/// Edge-distribution iteration on a descending spectrum (1-based index
/// arithmetic as in the published estimator).
///
/// Eigenvalues below the numerical floor are treated as exact zeros so
/// that rank-deficient spectra do not feed machine noise into the slope
/// regression, and a zero gap never counts as exceeding the threshold.
pub(crate) fn onatski_select(eigs: &[f64], rmax: usize, max_iter: usize) -> OnatskiOutcome {
    let floor = eigs.first().copied().unwrap_or(0.0).abs() * 1e-14;
    let eigs: Vec<f64> = eigs.iter().map(|&v| if v.abs() <= floor { 0.0 } else { v }).collect();
    let mut j = rmax + 1;
    let mut r = 0;
    for _ in 0..max_iter {
        // OLS slope of {eig_j .. eig_{j+4}} on {(j-1)^{2/3} .. (j+3)^{2/3}}
        let ys: Vec<f64> = (0..5).map(|i| eigs[j - 1 + i]).collect();
        let xs: Vec<f64> = (0..5).map(|i| ((j - 1 + i) as f64).powf(2.0 / 3.0)).collect();
        let x_mean = xs.iter().sum::<f64>() / 5.0;
        let y_mean = ys.iter().sum::<f64>() / 5.0;
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - x_mean) * (y - y_mean)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - x_mean).powi(2)).sum();
        let delta = 2.0 * (sxy / sxx).abs();

        r = (1..=rmax)
            .rev()
            .find(|&k| {
                let gap = eigs[k - 1] - eigs[k];
                gap > 0.0 && gap >= delta
            })
            .unwrap_or(0);
        if r + 1 == j {
            return OnatskiOutcome { r, converged: true };
        }
        j = r + 1;
    }
    OnatskiOutcome { r, converged: false }
}

/// Edge-distribution test for the number of factors.
pub fn onatski_test(
    sp: &StandardizedPanel,
    rmax: usize,
    max_iter: usize,
) -> Result<OnatskiOutcome, FactorError> {
    let cap = sp.n_series().min(sp.n_periods());
    if rmax + 5 > cap {
        return Err(FactorError::RmaxTooLarge { rmax, cap, slack: 5, criterion: "onatski" });
    }
    let eigs = linalg::pca(sp.z(), 0)?.eigenvalues;
    Ok(onatski_select(eigs.as_slice(), rmax, max_iter))
}

/// Configuration of the tuned-penalty criterion.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AbcConfig {
    /// Penalty-multiplier grid: `c = step, 2 step, ..., c_max`.
    pub c_max: f64,
    pub c_step: f64,
    /// Number of nested random subsamples.
    pub subsamples: usize,
    /// Largest fraction of N and T removed in the smallest subsample.
    pub shrink: f64,
}

impl Default for AbcConfig {
    fn default() -> Self {
        AbcConfig { c_max: 3.0, c_step: 0.01, subsamples: 30, shrink: 0.25 }
    }
}

/// Result of the tuned-penalty criterion. `fallback` marks a run where no
/// zero-variance interval existed and the plain criterion was used.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AbcOutcome {
    pub r: usize,
    pub fallback: bool,
    /// Number of maximal zero-variance runs found on the c grid.
    pub stable_runs: usize,
}

/// Tuned-penalty selection: the penalty multiplier is calibrated by
/// requiring the selection to be stable across nested random subsamples,
/// and the count picked on the full panel inside the second stability
/// interval (the first being the trivial plateau at small `c`). With a
/// single stability interval the whole grid is stable and that interval
/// is used directly.
pub fn abc_tuned<R: Rng>(
    sp: &StandardizedPanel,
    rmax: usize,
    cfg: &AbcConfig,
    rng: &mut R,
) -> Result<AbcOutcome, FactorError> {
    let (n, t) = (sp.n_series(), sp.n_periods());
    let cap = n.min(t);
    if rmax >= cap {
        return Err(FactorError::RmaxTooLarge { rmax, cap, slack: 1, criterion: "abc" });
    }
    assert!(cfg.subsamples >= 2, "need at least two subsamples");

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);

    // Per-subsample eigenvalues; subsamples grow to the full panel.
    let mut spectra: Vec<(Vec<f64>, usize, usize)> = Vec::with_capacity(cfg.subsamples);
    for j in 0..cfg.subsamples {
        let shrink = cfg.shrink * (cfg.subsamples - 1 - j) as f64 / (cfg.subsamples - 1) as f64;
        let nj = ((n as f64 * (1.0 - shrink)).round() as usize).max(rmax + 1).min(n);
        let tj = ((t as f64 * (1.0 - shrink)).round() as usize).max(rmax + 1).min(t);
        let mut sub = DMatrix::zeros(nj, tj);
        for (row, &src) in order[..nj].iter().enumerate() {
            for col in 0..tj {
                sub[(row, col)] = sp.z()[(src, t - tj + col)];
            }
        }
        // re-standardize within the subsample window
        for mut row in sub.row_iter_mut() {
            let m = row.mean();
            let sd = (row.iter().map(|v| (v - m).powi(2)).sum::<f64>() / tj as f64).sqrt();
            if sd > 0.0 {
                for v in row.iter_mut() {
                    *v = (*v - m) / sd;
                }
            }
        }
        let eigs = linalg::pca(&sub, 0)?.eigenvalues;
        spectra.push((eigs.as_slice().to_vec(), nj, tj));
    }

    let grid_len = (cfg.c_max / cfg.c_step).round() as usize;
    let mut stable = Vec::with_capacity(grid_len);
    let mut selections = Vec::with_capacity(grid_len);
    for g in 0..grid_len {
        let c = (g + 1) as f64 * cfg.c_step;
        let picks: Vec<usize> = spectra
            .iter()
            .map(|(eigs, nj, tj)| ic2_select(eigs, *nj, *tj, rmax.min(nj.min(tj) - 1), c))
            .collect();
        let all_equal = picks.windows(2).all(|w| w[0] == w[1]);
        stable.push(all_equal);
        selections.push(picks[cfg.subsamples - 1]);
    }

    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut g = 0;
    while g < grid_len {
        if stable[g] {
            let start = g;
            while g + 1 < grid_len && stable[g + 1] {
                g += 1;
            }
            runs.push((start, g));
        }
        g += 1;
    }

    let full_eigs = linalg::pca(sp.z(), 0)?.eigenvalues;
    let full = |c: f64| ic2_select(full_eigs.as_slice(), n, t, rmax, c);
    let outcome = match runs.len() {
        0 => AbcOutcome { r: full(1.0), fallback: true, stable_runs: 0 },
        1 => {
            let (a, b) = runs[0];
            AbcOutcome {
                r: full((((a + b) / 2) + 1) as f64 * cfg.c_step),
                fallback: false,
                stable_runs: 1,
            }
        }
        _ => {
            let (a, b) = runs[1];
            AbcOutcome {
                r: full((((a + b) / 2) + 1) as f64 * cfg.c_step),
                fallback: false,
                stable_runs: runs.len(),
            }
        }
    };
    Ok(outcome)
}

/// Factor counts from all four criteria, in the conventional reporting
/// order: information criterion, edge-distribution test, eigenvalue
/// ratio, tuned penalty.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FactorCountReport {
    pub ic2: usize,
    pub onatski: usize,
    pub onatski_converged: bool,
    pub er: usize,
    pub abc: usize,
    pub abc_fallback: bool,
}

/// Run every selector with shared defaults (20 edge iterations, default
/// tuned-penalty configuration, sub-stream `"abc-subsample"` of `seed`).
pub fn select_factor_counts(
    sp: &StandardizedPanel,
    rmax: usize,
    seed: u64,
) -> Result<FactorCountReport, FactorError> {
    let ic2 = ic2_bai_ng(sp, rmax)?;
    let onatski = onatski_test(sp, rmax, 20)?;
    let er = er_ahn_horenstein(sp, rmax)?;
    let abc = abc_tuned(
        sp,
        rmax,
        &AbcConfig::default(),
        &mut crate::rng::stream(seed, "abc-subsample", 0),
    )?;
    Ok(FactorCountReport {
        ic2,
        onatski: onatski.r,
        onatski_converged: onatski.converged,
        er,
        abc: abc.r,
        abc_fallback: abc.fallback,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::standardize;
    use crate::synth::{factor_panel, FactorDgpConfig};
    use approx::assert_abs_diff_eq;

    fn standardized(n: usize, t: usize, r: usize, seed: u64) -> StandardizedPanel {
        let cfg = FactorDgpConfig { n, t, r, ..Default::default() };
        let dgp = factor_panel(&cfg, &mut crate::rng::stream(seed, "factors-test", 0));
        standardize(&dgp.panel).unwrap()
    }

    fn noiseless(n: usize, t: usize, r: usize, seed: u64) -> StandardizedPanel {
        let cfg = FactorDgpConfig { n, t, r, noise_ratio: 0.0, ..Default::default() };
        let dgp = factor_panel(&cfg, &mut crate::rng::stream(seed, "factors-test", 1));
        standardize(&dgp.panel).unwrap()
    }

    #[test]
    fn collinear_pair_loads_unit_on_single_factor() {
        let mut dgp = factor_panel(
            &FactorDgpConfig { n: 2, t: 50, r: 1, noise_ratio: 0.0, ..Default::default() },
            &mut crate::rng::stream(4, "collinear", 0),
        );
        // force the two series identical
        let row: Vec<f64> = dgp.panel.values.row(0).iter().copied().collect();
        for (j, v) in row.iter().enumerate() {
            dgp.panel.values[(1, j)] = *v;
        }
        let sp = standardize(&dgp.panel).unwrap();
        let fm = pca_factors(&sp, 1).unwrap();
        assert_abs_diff_eq!(fm.loadings[(0, 0)], 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(fm.loadings[(1, 0)], 1.0, epsilon = 1e-10);
        // the factor is the (standardized) series itself
        for t in 0..50 {
            assert_abs_diff_eq!(fm.factors[(t, 0)], sp.z()[(0, t)], epsilon = 1e-10);
        }
        let share = fm.eigenvalues[0] / fm.eigenvalues.iter().sum::<f64>();
        assert_abs_diff_eq!(share, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn full_rank_model_reconstructs_panel() {
        let sp = standardized(5, 60, 2, 7);
        let fm = pca_factors(&sp, 5).unwrap();
        let cc = common_components(&fm, &sp).unwrap();
        let original = sp.destandardize();
        assert_abs_diff_eq!(cc.chi, original.values, epsilon = 1e-10);
        assert!(cc.xi.amax() < 1e-10);
    }

    #[test]
    fn rank_bounds_are_enforced() {
        let sp = standardized(5, 60, 2, 8);
        assert!(pca_factors(&sp, 5).is_ok());
        assert!(matches!(
            pca_factors(&sp, 6),
            Err(FactorError::RankTooLarge { r: 6, cap: 5 })
        ));
    }

    #[test]
    fn strong_factor_spectrum_dominates() {
        // signal-to-noise 10 per series
        let cfg = FactorDgpConfig { n: 60, t: 240, r: 3, noise_ratio: 0.1, ..Default::default() };
        let dgp = factor_panel(&cfg, &mut crate::rng::stream(9, "factors-test", 0));
        let sp = standardize(&dgp.panel).unwrap();
        let fm = pca_factors(&sp, 3).unwrap();
        for k in 0..3 {
            assert!(
                fm.eigenvalues[k] > 10.0 * fm.eigenvalues[3],
                "eigenvalue {k} not dominant: {} vs {}",
                fm.eigenvalues[k],
                fm.eigenvalues[3]
            );
        }
    }

    #[test]
    fn loadings_are_orthonormal_and_factors_orthogonal() {
        let sp = standardized(30, 120, 3, 10);
        let fm = pca_factors(&sp, 3).unwrap();
        let gram = fm.loadings.transpose() * &fm.loadings / 30.0;
        assert_abs_diff_eq!(gram, DMatrix::identity(3, 3), epsilon = 1e-8);
        let fgram = fm.factors.transpose() * &fm.factors;
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert_abs_diff_eq!(fgram[(i, j)], 0.0, epsilon = 1e-8);
                }
            }
        }
        for k in 0..fm.eigenvalues.len() {
            assert!(fm.eigenvalues[k] >= -1e-12);
        }
    }

    #[test]
    fn zero_factor_common_component_is_the_mean() {
        let sp = standardized(4, 40, 1, 11);
        let fm = pca_factors(&sp, 0).unwrap();
        let cc = common_components(&fm, &sp).unwrap();
        for i in 0..4 {
            for t in 0..40 {
                assert_abs_diff_eq!(cc.chi[(i, t)], fm.mu[i], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn chi_plus_xi_is_exact_and_xi_rows_mean_zero() {
        let sp = standardized(20, 80, 3, 12);
        let fm = pca_factors(&sp, 2).unwrap();
        let cc = common_components(&fm, &sp).unwrap();
        let original = sp.destandardize();
        // xi is the exact residual; re-adding it can round by one ulp
        let recomposed = &cc.chi + &cc.xi;
        assert_abs_diff_eq!(recomposed, original.values, epsilon = 1e-12);
        for i in 0..20 {
            assert_abs_diff_eq!(cc.xi.row(i).mean(), 0.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn explained_variance_identities() {
        let sp = standardized(25, 100, 3, 13);
        for r in [1usize, 3, 5] {
            let fm = pca_factors(&sp, r).unwrap();
            let cc = common_components(&fm, &sp).unwrap();
            let mean_share: f64 = (0..25)
                .map(|i| explained_variance(&fm, &sp, &cc, i))
                .sum::<f64>()
                / 25.0;
            let eig_share = fm.eigenvalues.iter().take(r).sum::<f64>()
                / fm.eigenvalues.iter().sum::<f64>();
            assert_abs_diff_eq!(mean_share, eig_share, epsilon = 1e-10);
        }
        // noiseless panel: every series fully explained
        let sp0 = noiseless(10, 50, 2, 14);
        let fm = pca_factors(&sp0, 2).unwrap();
        let cc = common_components(&fm, &sp0).unwrap();
        for i in 0..10 {
            assert_abs_diff_eq!(explained_variance(&fm, &sp0, &cc, i), 1.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn series_orthogonal_to_factors_has_zero_share() {
        // 3 series proportional to one factor, a 4th exactly orthogonal
        let t = 80;
        let f = crate::synth::exact_orthogonal_shocks(t, 2, 0, &mut crate::rng::stream(15, "ev", 0));
        let mut values = DMatrix::zeros(4, t);
        for j in 0..t {
            values[(0, j)] = 1.0 * f[(j, 0)];
            values[(1, j)] = -0.5 * f[(j, 0)];
            values[(2, j)] = 2.0 * f[(j, 0)];
            values[(3, j)] = f[(j, 1)]; // exactly orthogonal in-sample
        }
        let metas = crate::synth::synthetic_metas("EA", 4, crate::period::Frequency::Monthly);
        let periods: Vec<_> = (0..t).map(|k| crate::period::Period::new(2000, 1).add_months(k as i32)).collect();
        let panel = crate::panel::Panel::new(crate::period::Frequency::Monthly, periods, metas, values).unwrap();
        let sp = standardize(&panel).unwrap();
        let fm = pca_factors(&sp, 1).unwrap();
        let cc = common_components(&fm, &sp).unwrap();
        assert_abs_diff_eq!(explained_variance(&fm, &sp, &cc, 3), 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!(explained_variance(&fm, &sp, &cc, 0), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn permuting_series_permutes_loading_rows() {
        let sp = standardized(12, 60, 2, 16);
        let fm = pca_factors(&sp, 2).unwrap();
        let perm: Vec<usize> = (0..12).rev().collect();
        let mut permuted = sp.panel.clone();
        for (dst, &src) in perm.iter().enumerate() {
            permuted.values.row_mut(dst).copy_from(&sp.panel.values.row(src));
            permuted.metas[dst] = sp.panel.metas[src].clone();
        }
        let sp2 = StandardizedPanel {
            panel: permuted,
            mu: DVector::from_fn(12, |i, _| sp.mu[perm[i]]),
            omega: DVector::from_fn(12, |i, _| sp.omega[perm[i]]),
        };
        let fm2 = pca_factors(&sp2, 2).unwrap();
        for i in 0..12 {
            for k in 0..2 {
                assert_abs_diff_eq!(fm2.loadings[(i, k)], fm.loadings[(perm[i], k)], epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn nested_rank_keeps_leading_loadings() {
        let sp = standardized(20, 90, 3, 17);
        let small = pca_factors(&sp, 2).unwrap();
        let large = pca_factors(&sp, 5).unwrap();
        for k in 0..2 {
            for i in 0..20 {
                assert_abs_diff_eq!(
                    small.loadings[(i, k)],
                    large.loadings[(i, k)],
                    epsilon = 1e-9
                );
            }
        }
    }

    #[test]
    fn er_on_constructed_spectra() {
        let spectrum = [10.0, 9.0, 8.0, 0.1, 0.09, 0.08, 0.07];
        assert_eq!(er_select(&spectrum, 5), 3);
        let geometric: Vec<f64> = (1..10).map(|k| 0.5f64.powi(k)).collect();
        assert_eq!(er_select(&geometric, 6), 1);
    }

    #[test]
    fn onatski_on_constructed_spectrum() {
        // big gap after the 2nd eigenvalue, then a flat slowly-decaying tail
        let mut spectrum = vec![50.0, 30.0];
        for k in 0..20 {
            spectrum.push(1.0 - 0.01 * k as f64);
        }
        let out = onatski_select(&spectrum, 6, 20);
        assert_eq!(out.r, 2);
        assert!(out.converged);
    }

    #[test]
    fn selectors_agree_on_noiseless_rank_three_panel() {
        let sp = noiseless(40, 160, 3, 18);
        assert_eq!(ic2_bai_ng(&sp, 8).unwrap(), 3);
        assert_eq!(er_ahn_horenstein(&sp, 8).unwrap(), 3);
        assert_eq!(onatski_test(&sp, 8, 20).unwrap().r, 3);
        let abc = abc_tuned(
            &sp,
            8,
            &AbcConfig::default(),
            &mut crate::rng::stream(18, "abc", 0),
        )
        .unwrap();
        assert_eq!(abc.r, 3);
    }

    #[test]
    fn ic2_with_rmax_zero_returns_zero() {
        let sp = standardized(10, 40, 1, 19);
        assert_eq!(ic2_bai_ng(&sp, 0).unwrap(), 0);
    }

    #[test]
    fn selectors_recover_strong_six_factor_panel() {
        let sp = standardized(100, 300, 6, 20);
        let report = select_factor_counts(&sp, 12, 20).unwrap();
        assert_eq!(report.ic2, 6);
        assert_eq!(report.er, 6);
        assert_eq!(report.onatski, 6);
        assert_eq!(report.abc, 6);
    }

    #[test]
    fn ic2_rejects_noise_panel() {
        let mut rng = crate::rng::stream(21, "noise", 0);
        let values = DMatrix::from_fn(80, 200, |_, _| {
            rand::Rng::sample::<f64, _>(&mut rng, rand_distr::StandardNormal)
        });
        let metas = crate::synth::synthetic_metas("EA", 80, crate::period::Frequency::Monthly);
        let periods: Vec<_> = (0..200)
            .map(|k| crate::period::Period::new(2000, 1).add_months(k as i32))
            .collect();
        let panel =
            crate::panel::Panel::new(crate::period::Frequency::Monthly, periods, metas, values)
                .unwrap();
        let sp = standardize(&panel).unwrap();
        assert_eq!(ic2_bai_ng(&sp, 8).unwrap(), 0);
    }
}
