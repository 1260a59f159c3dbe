//! Factor-model toolkit for large macroeconomic panels.
//!
//! The crate covers the full workflow from raw mixed-frequency CSV vintages
//! to structural impulse responses with bootstrap bands:
//!
//! - [`catalog`] — series metadata and raw-vintage ingestion;
//! - [`panel`] — pre-treatment: aggregation, stationarity transforms,
//!   seasonal dummies, outlier handling, EM imputation, standardization;
//! - [`factors`] — principal-component factor estimation, common
//!   components, and factor-count selection criteria;
//! - [`var`] — reduced-form VAR estimation with post-2020 residual
//!   volatility scaling and impulse responses;
//! - [`identify`] — monetary-policy shock identification by external
//!   instrument or sign restrictions, plus block-bootstrap bands;
//! - [`ccvar`] — the common-component VAR country loop and the end-to-end
//!   pipeline.
//!
//! All randomness derives from a single seed via [`rng::stream`], so every
//! result is reproducible.

pub mod catalog;
pub mod ccvar;
pub mod factors;
pub mod identify;
pub mod linalg;
pub mod panel;
pub mod period;
pub mod rng;
pub mod synth;
pub mod var;
