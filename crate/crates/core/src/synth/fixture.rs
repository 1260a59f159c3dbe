//! Deterministic synthetic fixture: a small multi-country dataset with a
//! monthly instrument-identified run and a quarterly sign-identified run.
//!
//! The generator draws factor-structured stationary series, then inverts
//! each series' transform code so the written CSVs are levels; the
//! pipeline has to undo the inversion, strip a planted seasonal pattern,
//! remove planted outliers, fill ragged edges, and cope with a volatility
//! burst placed in the 2020 window. Regenerate the committed files with
//! `cargo run -p macrofactor-cli --example gen_fixtures`.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::ccvar::{BootstrapSettings, CcvarSpec, IdentificationConfig, ModelKind, RunConfig, SeriesRef, SeriesUse};
use crate::period::{Frequency, Period};

const FIXTURE_SEED: u64 = 77;

struct SeriesPlan {
    country: &'static str,
    id: String,
    code: u8,
    seasonal: bool,
    /// Loading pattern: None draws randomly.
    loadings: Option<Vec<f64>>,
    /// Months missing at the start / end.
    lead_missing: usize,
    tail_missing: usize,
    outlier_at: Option<usize>,
    flow: bool,
}

impl SeriesPlan {
    fn plain(country: &'static str, id: &str, code: u8) -> Self {
        SeriesPlan {
            country,
            id: id.to_string(),
            code,
            seasonal: false,
            loadings: None,
            lead_missing: 0,
            tail_missing: 0,
            outlier_at: None,
            flow: false,
        }
    }
}

struct Dataset {
    plans: Vec<SeriesPlan>,
    /// Stationary truth, series × periods.
    transformed: DMatrix<f64>,
    /// Factor innovations (periods × r), the instrument base.
    innovations: DMatrix<f64>,
}

/// Factor panel on the transformed scale with a scaled window of factor
/// innovations.
fn draw_dataset<R: Rng>(
    plans: Vec<SeriesPlan>,
    t: usize,
    r: usize,
    burst: std::ops::Range<usize>,
    rng: &mut R,
) -> Dataset {
    let n = plans.len();
    let mut innovations = DMatrix::zeros(t, r);
    for i in 0..t {
        let scale = if burst.contains(&i) { 3.0 } else { 1.0 };
        for k in 0..r {
            innovations[(i, k)] = scale * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let mut factors = DMatrix::zeros(t, r);
    for i in 0..t {
        for k in 0..r {
            let prev = if i == 0 { 0.0 } else { factors[(i - 1, k)] };
            factors[(i, k)] = 0.5 * prev + innovations[(i, k)];
        }
    }
    let mut loadings = DMatrix::zeros(n, r);
    for (row, plan) in plans.iter().enumerate() {
        match &plan.loadings {
            Some(l) => {
                for (k, v) in l.iter().enumerate() {
                    loadings[(row, k)] = *v;
                }
            }
            None => {
                for k in 0..r {
                    loadings[(row, k)] = rng.sample::<f64, _>(StandardNormal);
                }
            }
        }
    }
    let mut transformed = &loadings * factors.transpose();
    for (row, _plan) in plans.iter().enumerate() {
        let strength = loadings.row(row).iter().map(|v| v * v).sum::<f64>().sqrt();
        let idio_sd = 0.7 * strength.max(0.4);
        let mut e = 0.0;
        for col in 0..t {
            e = 0.3 * e + idio_sd * rng.sample::<f64, _>(StandardNormal);
            transformed[(row, col)] += e;
        }
    }
    // planted deterministic patterns
    for (row, plan) in plans.iter().enumerate() {
        if plan.seasonal {
            for col in 0..t {
                let season = (col % 12) as f64;
                transformed[(row, col)] +=
                    2.5 * (2.0 * std::f64::consts::PI * season / 12.0).sin();
            }
        }
        if let Some(at) = plan.outlier_at {
            transformed[(row, at)] += 60.0;
        }
    }
    Dataset { plans, transformed, innovations }
}

/// Invert a transform code so the pipeline's transform recovers the
/// stationary series (up to float error).
fn to_levels(code: u8, s: &[f64]) -> Vec<f64> {
    match code {
        0 => s.to_vec(),
        4 => {
            let mut level = 1.0;
            s.iter()
                .map(|d| {
                    level += d;
                    level
                })
                .collect()
        }
        2 => {
            let mut log_level = 0.0f64;
            s.iter()
                .map(|d| {
                    log_level += d / 100.0;
                    100.0 * log_level.exp()
                })
                .collect()
        }
        other => panic!("fixture does not use transform code {other}"),
    }
}

fn format_cell(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

struct CountryColumns {
    country: &'static str,
    /// (id, per-month value on the shared monthly axis).
    columns: Vec<(String, Vec<f64>)>,
}

fn catalog_rows(plans: &[&SeriesPlan], freq: char) -> String {
    let mut out = String::new();
    for (i, plan) in plans.iter().enumerate() {
        let sa = if plan.seasonal { "MSA" } else { "SA" };
        let sf = if plan.flow { "Flow" } else { "Stock" };
        out.push_str(&format!(
            "{},{},{},synthetic {id},u,{sa},{freq},EUR,{code},{code},R,{sf},\n",
            i + 1,
            plan.id,
            plan.country,
            id = plan.id,
            code = plan.code,
        ));
    }
    out
}

/// Write the complete fixture into `dir`; returns the file names written.
pub fn write_fixture(dir: &Path) -> std::io::Result<Vec<String>> {
    std::fs::create_dir_all(dir)?;
    let monthly_start = Period::new(2000, 1);
    let t_m = 300; // 2000-01 .. 2024-12
    let t_q = 96; // 2000-Q1 .. 2023-Q4
    let burst_m = 242..252; // 2020-03 .. 2020-12
    let burst_q = 80..84; // 2020-Q1 .. 2020-Q4

    // ---- monthly dataset (instrument identification) ----
    let mut plans_m: Vec<SeriesPlan> = Vec::new();
    let mut policy = SeriesPlan::plain("EA", "R2Y", 4);
    policy.loadings = Some(vec![1.5, 0.3, 0.2, -0.1, 0.1, 0.2]);
    plans_m.push(policy);
    for (id, code) in [("IPMN", 2), ("HICPOV", 2), ("LTIRT", 4), ("SHIX", 2), ("UNETOT", 0)] {
        plans_m.push(SeriesPlan::plain("EA", id, code));
    }
    for i in 0..12 {
        let code = [2u8, 0, 4][i % 3];
        let mut p = SeriesPlan::plain("EA", &format!("MF{i:02}"), code);
        match i {
            0 => p.seasonal = true,
            1 => p.outlier_at = Some(100),
            2 => p.lead_missing = 12,
            3 => p.tail_missing = 2,
            _ => {}
        }
        plans_m.push(p);
    }
    let mut flow = SeriesPlan::plain("EA", "CARM", 2);
    flow.flow = true;
    plans_m.push(flow);
    for country in ["C1", "C2"] {
        for (id, code) in [("LTIRT", 4), ("UNETOT", 0), ("IPMN", 2), ("SHIX", 2)] {
            plans_m.push(SeriesPlan::plain(country, id, code));
        }
        for i in 0..4 {
            let code = [2u8, 0, 4, 2][i];
            let mut p = SeriesPlan::plain(country, &format!("MF{i:02}"), code);
            if country == "C1" && i == 0 {
                p.seasonal = true;
            }
            if country == "C2" && i == 1 {
                p.outlier_at = Some(150);
                p.lead_missing = 6;
            }
            plans_m.push(p);
        }
    }
    let mut rng_m = crate::rng::stream(FIXTURE_SEED, "fixture-monthly", 0);
    let data_m = draw_dataset(plans_m, t_m, 6, burst_m, &mut rng_m);

    // ---- quarterly dataset (sign identification) ----
    let mut plans_q: Vec<SeriesPlan> = Vec::new();
    let mut policy_q = SeriesPlan::plain("EA", "R3M", 4);
    policy_q.loadings = Some(vec![1.4, 0.3, 0.1, 0.2, -0.1, 0.1, 0.1]);
    plans_q.push(policy_q);
    for (id, code) in [("GDP", 2), ("HICPQ", 2), ("LTRQ", 4), ("SHIXQ", 2)] {
        plans_q.push(SeriesPlan::plain("EA", id, code));
    }
    for i in 0..13 {
        let code = [2u8, 0, 4][i % 3];
        let mut p = SeriesPlan::plain("EA", &format!("QF{i:02}"), code);
        if i == 0 {
            p.seasonal = true;
        }
        if i == 1 {
            p.tail_missing = 1;
        }
        plans_q.push(p);
    }
    for country in ["C1", "C2"] {
        for (id, code) in [("LTRQ", 4), ("HFCE", 2), ("GCFC", 2)] {
            plans_q.push(SeriesPlan::plain(country, id, code));
        }
        for i in 0..3 {
            plans_q.push(SeriesPlan::plain(country, &format!("QF{i:02}"), [2u8, 0, 4][i]));
        }
    }
    let mut rng_q = crate::rng::stream(FIXTURE_SEED, "fixture-quarterly", 0);
    let data_q = draw_dataset(plans_q, t_q, 7, burst_q, &mut rng_q);

    // quarterly seasonality runs on a 4-period cycle, not 12
    // (draw_dataset planted a 12-cycle; replace it for quarterly series)
    let mut data_q = data_q;
    for (row, plan) in data_q.plans.iter().enumerate() {
        if plan.seasonal {
            for col in 0..t_q {
                let twelve = (col % 12) as f64;
                data_q.transformed[(row, col)] -=
                    2.5 * (2.0 * std::f64::consts::PI * twelve / 12.0).sin();
                let four = (col % 4) as f64;
                data_q.transformed[(row, col)] +=
                    2.5 * (2.0 * std::f64::consts::PI * four / 4.0).sin();
            }
        }
    }

    // ---- materialize columns on the shared monthly axis ----
    let mut countries: Vec<CountryColumns> = ["EA", "C1", "C2"]
        .iter()
        .map(|c| CountryColumns { country: c, columns: Vec::new() })
        .collect();
    let mut push_column = |country: &str, id: &str, values: Vec<f64>| {
        let slot = countries.iter_mut().find(|c| c.country == country).unwrap();
        slot.columns.push((id.to_string(), values));
    };

    for (row, plan) in data_m.plans.iter().enumerate() {
        let s: Vec<f64> = (0..t_m).map(|c| data_m.transformed[(row, c)]).collect();
        let mut level = to_levels(plan.code, &s);
        for v in level.iter_mut().take(plan.lead_missing) {
            *v = f64::NAN;
        }
        let len = level.len();
        for v in level.iter_mut().skip(len - plan.tail_missing.min(len)) {
            *v = f64::NAN;
        }
        push_column(plan.country, &plan.id, level);
    }
    for (row, plan) in data_q.plans.iter().enumerate() {
        let s: Vec<f64> = (0..t_q).map(|c| data_q.transformed[(row, c)]).collect();
        let mut level = to_levels(plan.code, &s);
        for v in level.iter_mut().take(plan.lead_missing) {
            *v = f64::NAN;
        }
        let len = level.len();
        for v in level.iter_mut().skip(len - plan.tail_missing.min(len)) {
            *v = f64::NAN;
        }
        // spread quarterly values over the monthly axis, quarter starts only
        let mut monthly = vec![f64::NAN; t_m];
        for (q, v) in level.iter().enumerate() {
            monthly[q * 3] = *v;
        }
        push_column(plan.country, &plan.id, monthly);
    }

    let mut written = Vec::new();
    for c in &countries {
        let name = format!("{}.csv", c.country);
        let mut f = std::fs::File::create(dir.join(&name))?;
        let header: Vec<&str> =
            std::iter::once("date").chain(c.columns.iter().map(|(id, _)| id.as_str())).collect();
        writeln!(f, "{}", header.join(","))?;
        for t in 0..t_m {
            let stamp = monthly_start.add_months(t as i32);
            let cells: Vec<String> =
                c.columns.iter().map(|(_, v)| format_cell(v[t])).collect();
            writeln!(f, "{},{}", stamp, cells.join(","))?;
        }
        written.push(name);
    }

    // ---- catalogs ----
    let header = "N,ID,Country,Series,Unit,SA,F,Source,LT,HT,Class,StockFlow,FirstObs\n";
    let m_refs: Vec<&SeriesPlan> = data_m.plans.iter().collect();
    std::fs::write(
        dir.join("catalog_m.csv"),
        format!("{header}{}", catalog_rows(&m_refs, 'M')),
    )?;
    written.push("catalog_m.csv".into());
    // the quarterly catalog also pulls two monthly series through
    // aggregation (one stock, one flow)
    let mut q_text = catalog_rows(&data_q.plans.iter().collect::<Vec<_>>(), 'Q');
    let base = data_q.plans.len();
    q_text.push_str(&format!(
        "{},IPMN,EA,synthetic IPMN,u,SA,M,EUR,2,2,R,Stock,\n{},CARM,EA,synthetic CARM,u,SA,M,EUR,2,2,R,Flow,\n",
        base + 1,
        base + 2
    ));
    std::fs::write(dir.join("catalog_q.csv"), format!("{header}{q_text}"))?;
    written.push("catalog_q.csv".into());

    // ---- instrument (monthly innovations of the first factor) ----
    let mut rng_z = crate::rng::stream(FIXTURE_SEED, "fixture-instrument", 0);
    let z_start = 24usize; // 2002-01
    let z_end = 294usize; // 2024-06
    let mut f = std::fs::File::create(dir.join("instrument.csv"))?;
    writeln!(f, "date,z1,z2,equity_surprise")?;
    for t in z_start..z_end {
        let stamp = monthly_start.add_months(t as i32);
        let missing: f64 = rng_z.gen();
        if missing < 0.12 {
            writeln!(f, "{stamp},,,")?;
            continue;
        }
        let eta = data_m.innovations[(t, 0)];
        let z1 = eta + 0.7 * rng_z.sample::<f64, _>(StandardNormal);
        let z2 = 0.25 * eta + rng_z.sample::<f64, _>(StandardNormal);
        let equity = -0.8 * z1 + 0.3 * rng_z.sample::<f64, _>(StandardNormal);
        writeln!(f, "{stamp},{z1},{z2},{equity}")?;
    }
    written.push("instrument.csv".into());

    // ---- sign restrictions ----
    let signs = serde_json::json!([
        {"variable": "R", "horizon": 0, "sign": "+"},
        {"variable": "R", "horizon": 1, "sign": "+"},
        {"variable": "chi:EA:GDP", "horizon": 1, "sign": "-"},
        {"variable": "chi:EA:GDP", "horizon": 2, "sign": "-"},
        {"variable": "chi:EA:HICPQ", "horizon": 1, "sign": "-"},
        {"variable": "chi:EA:HICPQ", "horizon": 2, "sign": "-"},
        {"variable": "chi:EA:LTRQ", "horizon": 0, "sign": "+"},
        {"variable": "chi:EA:LTRQ", "horizon": 1, "sign": "+"},
        {"variable": "chi:EA:SHIXQ", "horizon": 1, "sign": "-"},
        {"variable": "chi:EA:SHIXQ", "horizon": 2, "sign": "-"},
        {"variable": "f1", "horizon": 1, "sign": "-"},
        {"variable": "f1", "horizon": 2, "sign": "-"}
    ]);
    std::fs::write(dir.join("signs.json"), serde_json::to_string_pretty(&signs)?)?;
    written.push("signs.json".into());

    // ---- run configs ----
    let ea = |id: &str| SeriesRef { country: "EA".into(), id: id.into() };
    let nat = |c: &str, id: &str| SeriesRef { country: c.into(), id: id.into() };
    let cc = SeriesUse::CommonComponent;
    let run_iv = RunConfig {
        catalog: "catalog_m.csv".into(),
        data_dir: ".".into(),
        output_dir: None,
        seed: crate::ccvar::DEFAULT_SEED,
        transforms: Default::default(),
        level_overrides: vec!["UNETOT".into()],
        deseasonalize_ids: None,
        covid: Default::default(),
        em: Default::default(),
        trim_leading_missing_share: 0.5,
        ccvar: CcvarSpec {
            frequency: Frequency::Monthly,
            r: 6,
            p: 3,
            horizon: 24,
            policy: ea("R2Y"),
            ea_block: vec![
                (ea("IPMN"), cc),
                (ea("HICPOV"), cc),
                (ea("LTIRT"), cc),
                (ea("SHIX"), cc),
            ],
            include_first_factor: false,
            national_rate_id: "LTIRT".into(),
            targets: vec![
                nat("C1", "UNETOT"),
                nat("C1", "IPMN"),
                nat("C2", "UNETOT"),
                nat("C2", "IPMN"),
            ],
            model_kind: ModelKind::CcVar,
            first_factor_cumulative: true,
        },
        identification: IdentificationConfig::Iv {
            instrument: "instrument.csv".into(),
            column: Some("z1".into()),
        },
        bootstrap: BootstrapSettings { replications: 200, block_length: None, reestimate_volatility: true },
        ea_tolerance: 1e-8,
    };
    std::fs::write(dir.join("run_iv.json"), serde_json::to_string_pretty(&run_iv)?)?;
    written.push("run_iv.json".into());

    let run_sign = RunConfig {
        catalog: "catalog_q.csv".into(),
        data_dir: ".".into(),
        output_dir: None,
        seed: crate::ccvar::DEFAULT_SEED,
        transforms: Default::default(),
        level_overrides: vec!["UNETOT".into()],
        deseasonalize_ids: None,
        covid: Default::default(),
        em: Default::default(),
        trim_leading_missing_share: 0.5,
        ccvar: CcvarSpec {
            frequency: Frequency::Quarterly,
            r: 7,
            p: 2,
            horizon: 16,
            policy: ea("R3M"),
            ea_block: vec![
                (ea("GDP"), cc),
                (ea("HICPQ"), cc),
                (ea("LTRQ"), cc),
                (ea("SHIXQ"), cc),
            ],
            include_first_factor: true,
            national_rate_id: "LTRQ".into(),
            targets: vec![nat("C1", "HFCE"), nat("C1", "GCFC"), nat("C2", "HFCE")],
            model_kind: ModelKind::CcVar,
            first_factor_cumulative: true,
        },
        identification: IdentificationConfig::Signs {
            spec: "signs.json".into(),
            k: 30,
            max_tries: 100_000,
        },
        bootstrap: BootstrapSettings { replications: 100, block_length: None, reestimate_volatility: true },
        ea_tolerance: 1e-8,
    };
    std::fs::write(dir.join("run_sign.json"), serde_json::to_string_pretty(&run_sign)?)?;
    written.push("run_sign.json".into());

    Ok(written)
}
