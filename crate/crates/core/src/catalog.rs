//! Series catalog parsing and raw-vintage ingestion.
//!
//! A catalog lists every series of a dataset with its metadata (frequency,
//! seasonal status, transform codes, class). Raw data come as one CSV per
//! country with a `date` column and one column per series id; quarterly
//! series are recorded in the first month of their quarter and missing in
//! all other months.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::period::{Frequency, Period};

/// Seasonal-adjustment status as published.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Seasonal {
    /// Not seasonally adjusted.
    Nsa,
    /// Seasonally adjusted at the source.
    Sa,
    /// Seasonally and calendar adjusted at the source.
    Sca,
    /// Adjusted in-house; the pipeline re-applies the dummy method to these.
    Msa,
}

/// Data provider.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DataSource {
    Eur,
    Ecb,
    Oecd,
    Fred,
}

/// Broad economic class of a series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Klass {
    Real,
    Nominal,
    Financial,
    Confidence,
}

/// Whether monthly values aggregate to quarters by averaging or summing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum StockFlow {
    #[default]
    Stock,
    Flow,
}

/// One catalog row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesMeta {
    pub id: String,
    pub country: String,
    pub name: String,
    pub unit: String,
    pub seasonal: Seasonal,
    pub frequency: Frequency,
    pub source: DataSource,
    /// Light transformation code, 0–5.
    pub lt_code: u8,
    /// Heavy transformation code, 0–5 (the benchmark set).
    pub ht_code: u8,
    pub klass: Klass,
    pub stock_flow: StockFlow,
    pub first_obs: Option<Period>,
}

impl SeriesMeta {
    /// Panel column label, `COUNTRY:ID`.
    pub fn key(&self) -> String {
        format!("{}:{}", self.country, self.id)
    }
}

/// A parsed, validated catalog.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    /// Dataset tag: the common country of all entries, or `MULTI`.
    pub country: String,
    pub entries: Vec<SeriesMeta>,
}

impl Catalog {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn find(&self, country: &str, id: &str) -> Option<&SeriesMeta> {
        self.entries.iter().find(|m| m.country == country && m.id == id)
    }

    /// Entries restricted to one frequency, preserving order.
    pub fn with_frequency(&self, freq: Frequency) -> impl Iterator<Item = &SeriesMeta> {
        self.entries.iter().filter(move |m| m.frequency == freq)
    }
}

/// Raw mixed-frequency panel on a contiguous monthly axis. Missing cells
/// are `NaN`; quarterly series carry values only in quarter-start months.
#[derive(Debug, Clone)]
pub struct RawPanel {
    pub periods: Vec<Period>,
    pub metas: Vec<SeriesMeta>,
    /// N×T values, row i = series i over the axis.
    pub values: DMatrix<f64>,
}

impl RawPanel {
    pub fn n_series(&self) -> usize {
        self.metas.len()
    }

    pub fn n_periods(&self) -> usize {
        self.periods.len()
    }
}

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("unknown catalog column {0:?}")]
    UnknownColumn(String),
    #[error("missing catalog column {0:?}")]
    MissingColumn(String),
    #[error("series {id}: transform code {value:?} outside 0-5")]
    BadTransformCode { id: String, value: String },
    #[error("duplicate series ({country}, {id})")]
    DuplicateId { country: String, id: String },
    #[error("series {id}: bad {column} value {value:?}")]
    BadField { id: String, column: String, value: String },
    #[error("catalog row {0}: missing id")]
    EmptyId(usize),
    #[error("no data file for country {country} (series {id}): expected {file}")]
    MissingSeriesFile { country: String, id: String, file: String },
    #[error("{file}: {stamp}")]
    UnparseableDate { file: String, stamp: String },
    #[error("{file}: dates not strictly increasing at row {row}")]
    NonMonotonicDates { file: String, row: usize },
    #[error("{file}: column {column} row {row}: unparseable value {value:?}")]
    UnparseableValue { file: String, column: String, row: usize, value: String },
    #[error("quarterly series {key} has a value at {period}, not a quarter-start month")]
    QuarterlyValueOutsideFirstMonth { key: String, period: Period },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

const COLUMNS: [&str; 13] = [
    "N", "ID", "Country", "Series", "Unit", "SA", "F", "Source", "LT", "HT", "Class",
    "StockFlow", "FirstObs",
];
const REQUIRED: [&str; 11] =
    ["N", "ID", "Country", "Series", "Unit", "SA", "F", "Source", "LT", "HT", "Class"];

fn parse_code(id: &str, raw: &str) -> Result<u8, CatalogError> {
    match raw.trim().parse::<u8>() {
        Ok(c) if c <= 5 => Ok(c),
        _ => Err(CatalogError::BadTransformCode { id: id.to_string(), value: raw.to_string() }),
    }
}

fn bad_field(id: &str, column: &str, value: &str) -> CatalogError {
    CatalogError::BadField {
        id: id.to_string(),
        column: column.to_string(),
        value: value.to_string(),
    }
}

/// Parse a catalog CSV. Header must carry the documented column names
/// (`StockFlow` and `FirstObs` are optional).
pub fn parse_catalog(text: &str) -> Result<Catalog, CatalogError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let header = reader.headers()?.clone();
    let mut col_idx: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, name) in header.iter().enumerate() {
        if !COLUMNS.contains(&name) {
            return Err(CatalogError::UnknownColumn(name.to_string()));
        }
        col_idx.insert(COLUMNS.iter().find(|c| **c == name).unwrap(), i);
    }
    for required in REQUIRED {
        if !col_idx.contains_key(required) {
            return Err(CatalogError::MissingColumn(required.to_string()));
        }
    }

    let mut entries = Vec::new();
    let mut seen: BTreeSet<(String, String)> = BTreeSet::new();
    for (row_no, record) in reader.records().enumerate() {
        let record = record?;
        let field = |name: &str| col_idx.get(name).and_then(|&i| record.get(i)).unwrap_or("");

        let id = field("ID").to_string();
        if id.is_empty() {
            return Err(CatalogError::EmptyId(row_no + 2));
        }
        let country = field("Country").to_string();
        if !seen.insert((country.clone(), id.clone())) {
            return Err(CatalogError::DuplicateId { country, id });
        }

        let seasonal = match field("SA") {
            "NSA" => Seasonal::Nsa,
            "SA" => Seasonal::Sa,
            "SCA" => Seasonal::Sca,
            "MSA" => Seasonal::Msa,
            other => return Err(bad_field(&id, "SA", other)),
        };
        let frequency = match field("F") {
            "M" => Frequency::Monthly,
            "Q" => Frequency::Quarterly,
            other => return Err(bad_field(&id, "F", other)),
        };
        let source = match field("Source") {
            "EUR" => DataSource::Eur,
            "ECB" => DataSource::Ecb,
            "OECD" => DataSource::Oecd,
            "FRED" => DataSource::Fred,
            other => return Err(bad_field(&id, "Source", other)),
        };
        let klass = match field("Class") {
            "R" => Klass::Real,
            "N" => Klass::Nominal,
            "F" => Klass::Financial,
            "C" => Klass::Confidence,
            other => return Err(bad_field(&id, "Class", other)),
        };
        let stock_flow = match field("StockFlow") {
            "" => StockFlow::default(),
            "Stock" | "S" => StockFlow::Stock,
            "Flow" | "F" => StockFlow::Flow,
            other => return Err(bad_field(&id, "StockFlow", other)),
        };
        let first_obs = match field("FirstObs") {
            "" => None,
            stamp => Some(
                stamp
                    .parse::<Period>()
                    .map_err(|_| bad_field(&id, "FirstObs", stamp))?,
            ),
        };

        entries.push(SeriesMeta {
            lt_code: parse_code(&id, field("LT"))?,
            ht_code: parse_code(&id, field("HT"))?,
            id,
            country,
            name: field("Series").to_string(),
            unit: field("Unit").to_string(),
            seasonal,
            frequency,
            source,
            klass,
            stock_flow,
            first_obs,
        });
    }

    let country = match entries.first() {
        Some(first) if entries.iter().all(|m| m.country == first.country) => {
            first.country.clone()
        }
        Some(_) => "MULTI".to_string(),
        None => String::new(),
    };
    Ok(Catalog { country, entries })
}

/// Render a catalog back to CSV; `parse_catalog` of the output reproduces
/// the input.
pub fn serialize_catalog(catalog: &Catalog) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(COLUMNS).unwrap();
    for (i, m) in catalog.entries.iter().enumerate() {
        let seasonal = match m.seasonal {
            Seasonal::Nsa => "NSA",
            Seasonal::Sa => "SA",
            Seasonal::Sca => "SCA",
            Seasonal::Msa => "MSA",
        };
        let source = match m.source {
            DataSource::Eur => "EUR",
            DataSource::Ecb => "ECB",
            DataSource::Oecd => "OECD",
            DataSource::Fred => "FRED",
        };
        let klass = match m.klass {
            Klass::Real => "R",
            Klass::Nominal => "N",
            Klass::Financial => "F",
            Klass::Confidence => "C",
        };
        let stock_flow = match m.stock_flow {
            StockFlow::Stock => "Stock",
            StockFlow::Flow => "Flow",
        };
        w.write_record([
            (i + 1).to_string().as_str(),
            &m.id,
            &m.country,
            &m.name,
            &m.unit,
            seasonal,
            &m.frequency.to_string(),
            source,
            &m.lt_code.to_string(),
            &m.ht_code.to_string(),
            klass,
            stock_flow,
            &m.first_obs.map(|p| p.to_string()).unwrap_or_default(),
        ])
        .unwrap();
    }
    String::from_utf8(w.into_inner().unwrap()).unwrap()
}

/// The bundled replica of the Euro Area catalog (118 series).
pub fn replica_ea_catalog() -> Catalog {
    parse_catalog(include_str!("../data/ea_catalog.csv"))
        .expect("bundled EA catalog must parse")
}

/// Parse a missing-aware cell: empty and `NaN` mean missing.
pub fn parse_cell(raw: &str) -> Option<Result<f64, ()>> {
    let raw = raw.trim();
    if raw.is_empty() || raw.eq_ignore_ascii_case("nan") {
        return None;
    }
    Some(raw.parse::<f64>().map_err(|_| ()))
}

struct CountryFile {
    columns: BTreeMap<String, Vec<f64>>,
    periods: Vec<Period>,
}

fn load_country_file(path: &Path) -> Result<CountryFile, CatalogError> {
    let file_label = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let header = reader.headers()?.clone();
    let ids: Vec<String> = header.iter().skip(1).map(str::to_string).collect();

    let mut periods: Vec<Period> = Vec::new();
    let mut columns: BTreeMap<String, Vec<f64>> = ids.iter().map(|c| (c.clone(), Vec::new())).collect();
    for (row_no, record) in reader.records().enumerate() {
        let record = record?;
        let stamp = record.get(0).unwrap_or("");
        let period = stamp.parse::<Period>().map_err(|_| CatalogError::UnparseableDate {
            file: file_label.clone(),
            stamp: stamp.to_string(),
        })?;
        if let Some(&last) = periods.last() {
            if period <= last {
                return Err(CatalogError::NonMonotonicDates { file: file_label, row: row_no + 2 });
            }
        }
        periods.push(period);
        for (j, id) in ids.iter().enumerate() {
            let raw = record.get(j + 1).unwrap_or("");
            let value = match parse_cell(raw) {
                None => f64::NAN,
                Some(Ok(v)) => v,
                Some(Err(())) => {
                    return Err(CatalogError::UnparseableValue {
                        file: file_label,
                        column: id.clone(),
                        row: row_no + 2,
                        value: raw.to_string(),
                    })
                }
            };
            columns.get_mut(id).unwrap().push(value);
        }
    }
    Ok(CountryFile { columns, periods })
}

/// Load raw CSV vintages for every catalog entry into an aligned panel.
///
/// The directory must hold one `<COUNTRY>.csv` per country appearing in the
/// catalog. Observed values pass through bit-exact; cells outside a file's
/// range are missing.
pub fn load_vintage(dir: &Path, catalog: &Catalog) -> Result<RawPanel, CatalogError> {
    let mut files: BTreeMap<String, CountryFile> = BTreeMap::new();
    for meta in &catalog.entries {
        if files.contains_key(&meta.country) {
            continue;
        }
        let path = dir.join(format!("{}.csv", meta.country));
        if !path.is_file() {
            return Err(CatalogError::MissingSeriesFile {
                country: meta.country.clone(),
                id: meta.id.clone(),
                file: path.display().to_string(),
            });
        }
        files.insert(meta.country.clone(), load_country_file(&path)?);
    }

    let mut first: Option<Period> = None;
    let mut last: Option<Period> = None;
    for f in files.values() {
        if let (Some(&a), Some(&b)) = (f.periods.first(), f.periods.last()) {
            first = Some(first.map_or(a, |cur: Period| cur.min(a)));
            last = Some(last.map_or(b, |cur: Period| cur.max(b)));
        }
    }
    let (first, last) = match (first, last) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Ok(RawPanel {
                periods: Vec::new(),
                metas: catalog.entries.clone(),
                values: DMatrix::zeros(catalog.len(), 0),
            })
        }
    };
    let n_periods = (last.months_since(first) + 1) as usize;
    let periods: Vec<Period> = (0..n_periods).map(|k| first.add_months(k as i32)).collect();

    let n = catalog.len();
    let mut values = DMatrix::from_element(n, n_periods, f64::NAN);
    for (i, meta) in catalog.entries.iter().enumerate() {
        let file = &files[&meta.country];
        let column = file.columns.get(&meta.id).ok_or_else(|| CatalogError::MissingSeriesFile {
            country: meta.country.clone(),
            id: meta.id.clone(),
            file: dir.join(format!("{}.csv", meta.country)).display().to_string(),
        })?;
        for (p, &v) in file.periods.iter().zip(column) {
            if v.is_nan() {
                continue;
            }
            if meta.frequency == Frequency::Quarterly && !p.is_quarter_start() {
                return Err(CatalogError::QuarterlyValueOutsideFirstMonth {
                    key: meta.key(),
                    period: *p,
                });
            }
            let t = p.months_since(first) as usize;
            values[(i, t)] = v;
        }
    }

    Ok(RawPanel { periods, metas: catalog.entries.clone(), values })
}

impl fmt::Display for Catalog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} catalog, {} series", self.country, self.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    const HEADER: &str = "N,ID,Country,Series,Unit,SA,F,Source,LT,HT,Class,StockFlow,FirstObs";

    #[test]
    fn parses_a_gdp_row() {
        let text = format!(
            "{HEADER}\n1,GDP,EA,Real Gross Domestic Product,CLV(2015),SCA,Q,EUR,2,2,R,Flow,"
        );
        let cat = parse_catalog(&text).unwrap();
        assert_eq!(cat.len(), 1);
        let m = &cat.entries[0];
        assert_eq!(m.id, "GDP");
        assert_eq!(m.frequency, Frequency::Quarterly);
        assert_eq!(m.lt_code, 2);
        assert_eq!(m.ht_code, 2);
        assert_eq!(m.klass, Klass::Real);
        assert_eq!(cat.country, "EA");
    }

    #[test]
    fn rejects_transform_code_outside_range() {
        let text = format!("{HEADER}\n1,GDP,EA,x,u,SCA,Q,EUR,2,7,R,,");
        assert!(matches!(
            parse_catalog(&text),
            Err(CatalogError::BadTransformCode { .. })
        ));
    }

    #[test]
    fn header_only_gives_empty_catalog() {
        let cat = parse_catalog(&format!("{HEADER}\n")).unwrap();
        assert!(cat.is_empty());
    }

    #[test]
    fn rejects_duplicates_and_unknown_columns() {
        let dup = format!("{HEADER}\n1,GDP,EA,x,u,SCA,Q,EUR,2,2,R,,\n2,GDP,EA,y,u,SCA,Q,EUR,2,2,R,,");
        assert!(matches!(parse_catalog(&dup), Err(CatalogError::DuplicateId { .. })));
        // same id in another country is fine
        let ok = format!("{HEADER}\n1,GDP,EA,x,u,SCA,Q,EUR,2,2,R,,\n2,GDP,DE,y,u,SCA,Q,EUR,2,2,R,,");
        let cat = parse_catalog(&ok).unwrap();
        assert_eq!(cat.country, "MULTI");

        let bad = "N,ID,Country,Series,Unit,SA,F,Source,LT,HT,Class,Bogus\n";
        assert!(matches!(parse_catalog(bad), Err(CatalogError::UnknownColumn(c)) if c == "Bogus"));
    }

    #[test]
    fn replica_catalog_has_118_ea_entries() {
        let cat = replica_ea_catalog();
        assert_eq!(cat.country, "EA");
        assert_eq!(cat.entries.iter().filter(|m| m.country == "EA").count(), 118);
        let monthly = cat.with_frequency(Frequency::Monthly).count();
        assert_eq!(monthly, 47);
        assert_eq!(cat.len() - monthly, 71);
    }

    #[test]
    fn serialize_then_parse_is_identity() {
        let cat = replica_ea_catalog();
        let round = parse_catalog(&serialize_catalog(&cat)).unwrap();
        assert_eq!(round, cat);
    }

    fn write_file(dir: &Path, name: &str, body: &str) {
        let mut f = std::fs::File::create(dir.join(name)).unwrap();
        f.write_all(body.as_bytes()).unwrap();
    }

    fn two_series_catalog() -> Catalog {
        parse_catalog(&format!(
            "{HEADER}\n1,A,EA,a,u,SA,M,EUR,0,0,R,,\n2,GDP,EA,g,u,SCA,Q,EUR,2,2,R,Flow,"
        ))
        .unwrap()
    }

    #[test]
    fn loads_aligned_vintage() {
        let dir = tempfile::tempdir().unwrap();
        write_file(
            dir.path(),
            "EA.csv",
            "date,A,GDP\n2000-01,1.5,100.25\n2000-02,2.5,\n2000-03,3.5,NaN\n2000-04,4.5,101.5\n",
        );
        let panel = load_vintage(dir.path(), &two_series_catalog()).unwrap();
        assert_eq!(panel.n_periods(), 4);
        assert_eq!(panel.values[(0, 0)], 1.5);
        assert_eq!(panel.values[(1, 0)], 100.25); // bit-exact pass-through
        assert!(panel.values[(1, 1)].is_nan());
        assert!(panel.values[(1, 2)].is_nan());
        assert_eq!(panel.values[(1, 3)], 101.5);
    }

    #[test]
    fn quarterly_value_in_mid_quarter_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_file(dir.path(), "EA.csv", "date,A,GDP\n2000-01,1,100\n2000-02,2,99\n");
        assert!(matches!(
            load_vintage(dir.path(), &two_series_catalog()),
            Err(CatalogError::QuarterlyValueOutsideFirstMonth { .. })
        ));
    }

    #[test]
    fn missing_series_file_and_missing_column() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_vintage(dir.path(), &two_series_catalog()),
            Err(CatalogError::MissingSeriesFile { .. })
        ));
        write_file(dir.path(), "EA.csv", "date,A\n2000-01,1\n");
        assert!(matches!(
            load_vintage(dir.path(), &two_series_catalog()),
            Err(CatalogError::MissingSeriesFile { id, .. }) if id == "GDP"
        ));
    }

    #[test]
    fn bad_dates_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_file(dir.path(), "EA.csv", "date,A,GDP\n2000-13,1,\n");
        assert!(matches!(
            load_vintage(dir.path(), &two_series_catalog()),
            Err(CatalogError::UnparseableDate { .. })
        ));
        write_file(dir.path(), "EA.csv", "date,A,GDP\n2000-02,1,\n2000-01,2,\n");
        assert!(matches!(
            load_vintage(dir.path(), &two_series_catalog()),
            Err(CatalogError::NonMonotonicDates { .. })
        ));
    }
}
