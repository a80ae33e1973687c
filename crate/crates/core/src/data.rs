//! Sales history: ingest, synthetic generation, windowing and correlation.
//!
//! A [`Dataset`] is a dense panel: every category has exactly one record for
//! every date in its span. Gaps are rejected rather than imputed.

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of continuous per-day variables carried through the forecaster:
/// volume, price, spoilage (in that order).
pub const TARGET_DIM: usize = 3;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: malformed row: {message}")]
    Malformed { line: u64, message: String },
    #[error("line {line}: field `{field}` out of range: {value}")]
    OutOfRange {
        line: u64,
        field: &'static str,
        value: f64,
    },
    #[error("duplicate record for ({date}, {category})")]
    Duplicate { date: NaiveDate, category: String },
    #[error("category `{category}` has no record for {date}")]
    Gap { category: String, date: NaiveDate },
    #[error("dataset is empty")]
    Empty,
    #[error("unknown category `{0}`")]
    UnknownCategory(String),
    #[error("insufficient data: {0}")]
    Insufficient(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;

/// One category-day observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SalesRecord {
    pub date: NaiveDate,
    pub category: String,
    /// Selling price per LB.
    pub unit_price: f64,
    /// LB sold on the day.
    pub volume: f64,
    /// Wholesale cost per LB.
    pub wholesale_cost: f64,
    /// Fraction of stock lost to spoilage, in `[0, 1]`.
    pub spoilage_rate: f64,
}

impl SalesRecord {
    fn check(&self, line: u64) -> Result<()> {
        let fields = [
            ("unit_price", self.unit_price, self.unit_price > 0.0),
            ("volume", self.volume, self.volume >= 0.0),
            (
                "wholesale_cost",
                self.wholesale_cost,
                self.wholesale_cost > 0.0,
            ),
            (
                "spoilage_rate",
                self.spoilage_rate,
                (0.0..=1.0).contains(&self.spoilage_rate),
            ),
        ];
        for (field, value, ok) in fields {
            if !ok || !value.is_finite() {
                return Err(DataError::OutOfRange { line, field, value });
            }
        }
        Ok(())
    }

    /// The value of one of the forecaster's continuous variables.
    pub fn variable(&self, field: Field) -> f64 {
        match field {
            Field::Volume => self.volume,
            Field::Price => self.unit_price,
            Field::Spoilage => self.spoilage_rate,
            Field::Wholesale => self.wholesale_cost,
        }
    }
}

/// A dense, sorted panel of sales records.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    records: Vec<SalesRecord>,
    categories: Vec<String>,
    start: NaiveDate,
    end: NaiveDate,
}

impl Dataset {
    /// Validates and sorts `records` into a dense panel.
    pub fn new(records: Vec<SalesRecord>) -> Result<Self> {
        let lines: Vec<u64> = (0..records.len() as u64).map(|i| i + 2).collect();
        Self::with_lines(records, &lines)
    }

    fn with_lines(records: Vec<SalesRecord>, lines: &[u64]) -> Result<Self> {
        if records.is_empty() {
            return Err(DataError::Empty);
        }
        for (r, &line) in records.iter().zip(lines) {
            r.check(line)?;
        }
        let mut seen = BTreeSet::new();
        for r in &records {
            if !seen.insert((r.category.clone(), r.date)) {
                return Err(DataError::Duplicate {
                    date: r.date,
                    category: r.category.clone(),
                });
            }
        }
        let start = records.iter().map(|r| r.date).min().expect("nonempty");
        let end = records.iter().map(|r| r.date).max().expect("nonempty");
        let categories: Vec<String> = records
            .iter()
            .map(|r| r.category.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();

        let mut records = records;
        records.sort_by(|a, b| (&a.category, a.date).cmp(&(&b.category, b.date)));

        let n_days = (end - start).num_days() as usize + 1;
        for (ci, cat) in categories.iter().enumerate() {
            let slice = &records[ci * n_days..];
            for d in 0..n_days {
                let expected = start + Duration::days(d as i64);
                match slice.get(d) {
                    Some(r) if r.category == *cat && r.date == expected => {}
                    _ => {
                        return Err(DataError::Gap {
                            category: cat.clone(),
                            date: expected,
                        })
                    }
                }
            }
        }
        if records.len() != categories.len() * n_days {
            return Err(DataError::Invalid("panel is not dense".into()));
        }
        Ok(Self {
            records,
            categories,
            start,
            end,
        })
    }

    pub fn records(&self) -> &[SalesRecord] {
        &self.records
    }

    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    /// Inclusive date span.
    pub fn span(&self) -> (NaiveDate, NaiveDate) {
        (self.start, self.end)
    }

    pub fn n_days(&self) -> usize {
        (self.end - self.start).num_days() as usize + 1
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Chronological records for one category.
    pub fn series(&self, category: &str) -> Result<&[SalesRecord]> {
        let ci = self
            .categories
            .iter()
            .position(|c| c == category)
            .ok_or_else(|| DataError::UnknownCategory(category.to_string()))?;
        let n = self.n_days();
        Ok(&self.records[ci * n..(ci + 1) * n])
    }

    /// Appends records that continue every category's series contiguously
    /// from the day after the current span end.
    pub fn extend(&self, new_records: Vec<SalesRecord>) -> Result<Dataset> {
        if new_records.is_empty() {
            return Err(DataError::Invalid("no new records to append".into()));
        }
        let first_new = new_records.iter().map(|r| r.date).min().expect("nonempty");
        if first_new != self.end + Duration::days(1) {
            return Err(DataError::Invalid(format!(
                "new records must start on {} (found {first_new})",
                self.end + Duration::days(1)
            )));
        }
        let new_cats: BTreeSet<&String> = new_records.iter().map(|r| &r.category).collect();
        let old_cats: BTreeSet<&String> = self.categories.iter().collect();
        if new_cats != old_cats {
            return Err(DataError::Invalid(
                "new records must cover exactly the existing categories".into(),
            ));
        }
        let mut all = self.records.clone();
        all.extend(new_records);
        Dataset::new(all)
    }

    /// Keeps only the trailing `days` days (all of them when `days` exceeds
    /// the span).
    pub fn tail(&self, days: usize) -> Dataset {
        let n = self.n_days();
        if days >= n {
            return self.clone();
        }
        let cutoff = self.end - Duration::days(days as i64 - 1);
        let records = self
            .records
            .iter()
            .filter(|r| r.date >= cutoff)
            .cloned()
            .collect();
        Dataset::new(records).expect("tail of a dense panel is dense")
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for r in &self.records {
            w.serialize(r).map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

fn csv_io(e: csv::Error) -> DataError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => DataError::Io(io),
        other => DataError::Invalid(format!("{other:?}")),
    }
}

/// Reads a dataset from a CSV file with header
/// `date,category,unit_price,volume,wholesale_cost,spoilage_rate`.
pub fn ingest_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    read_csv(file)
}

pub fn read_csv<R: Read>(reader: R) -> Result<Dataset> {
    const HEADER: [&str; 6] = [
        "date",
        "category",
        "unit_price",
        "volume",
        "wholesale_cost",
        "spoilage_rate",
    ];
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let headers = rdr.headers().map_err(|e| DataError::Malformed {
        line: 1,
        message: e.to_string(),
    })?;
    if headers.iter().map(str::trim).ne(HEADER) {
        return Err(DataError::Malformed {
            line: 1,
            message: format!("expected header `{}`", HEADER.join(",")),
        });
    }
    let mut records = Vec::new();
    let mut lines = Vec::new();
    for row in rdr.deserialize::<SalesRecord>() {
        let line_of = |e: &csv::Error| e.position().map(|p| p.line()).unwrap_or(0);
        let rec = row.map_err(|e| DataError::Malformed {
            line: line_of(&e),
            message: match e.kind() {
                csv::ErrorKind::Deserialize { err, .. } => err.to_string(),
                _ => e.to_string(),
            },
        })?;
        lines.push(lines.len() as u64 + 2);
        records.push(rec);
    }
    Dataset::with_lines(records, &lines)
}

/// Per-category parameters for the synthetic generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryProfile {
    pub name: String,
    /// Demand slope in LB per currency unit; must be negative.
    pub slope: f64,
    pub intercept: f64,
    /// Selling prices are generated inside this band.
    pub price_band: (f64, f64),
    /// Wholesale cost as a fraction of the band midpoint.
    pub wholesale_ratio: f64,
    /// Mean spoilage rate.
    pub spoilage: f64,
}

/// Configuration for [`synthesize`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorProfile {
    /// Cycled (with a numeric suffix) when more categories are requested.
    pub categories: Vec<CategoryProfile>,
    /// Half-width of the uniform multiplicative noise band, e.g. 0.05 for ±5%.
    pub noise: f64,
    /// Multiplicative volume factor applied on Saturdays and Sundays.
    pub weekend_uplift: f64,
    pub start_date: NaiveDate,
}

impl Default for GeneratorProfile {
    fn default() -> Self {
        let cat = |name: &str, slope, intercept, band, spoilage| CategoryProfile {
            name: name.to_string(),
            slope,
            intercept,
            price_band: band,
            wholesale_ratio: 0.65,
            spoilage,
        };
        Self {
            categories: vec![
                cat("aquatic_roots", -3.17, 69.74, (15.3, 15.8), 0.10),
                cat("eggplant", -1.25, 37.87, (9.0, 12.0), 0.06),
                cat("cauliflower", -2.0, 48.0, (8.0, 11.0), 0.08),
                cat("leafy_greens", -4.0, 60.0, (5.0, 7.5), 0.14),
            ],
            noise: 0.03,
            weekend_uplift: 1.2,
            start_date: NaiveDate::from_ymd_opt(2023, 6, 1).expect("valid date"),
        }
    }
}

impl GeneratorProfile {
    /// A single demand line with no noise and no weekend effect: every
    /// generated record lies exactly on `volume = slope * price + intercept`.
    pub fn exact_line(slope: f64, intercept: f64, price_band: (f64, f64)) -> Self {
        Self {
            categories: vec![CategoryProfile {
                name: "line".into(),
                slope,
                intercept,
                price_band,
                wholesale_ratio: 0.65,
                spoilage: 0.1,
            }],
            noise: 0.0,
            weekend_uplift: 1.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.categories.is_empty() {
            return Err(DataError::Invalid("profile has no categories".into()));
        }
        if !(0.0..1.0).contains(&self.noise) {
            return Err(DataError::Invalid("noise must lie in [0, 1)".into()));
        }
        if self.weekend_uplift <= 0.0 {
            return Err(DataError::Invalid("weekend_uplift must be positive".into()));
        }
        for c in &self.categories {
            let (lo, hi) = c.price_band;
            if !(c.slope < 0.0 && lo > 0.0 && lo <= hi) {
                return Err(DataError::Invalid(format!(
                    "category `{}`: need slope < 0 and 0 < lo <= hi",
                    c.name
                )));
            }
            if !(0.0..1.0).contains(&c.spoilage) || c.wholesale_ratio <= 0.0 {
                return Err(DataError::Invalid(format!(
                    "category `{}`: spoilage in [0,1) and wholesale_ratio > 0 required",
                    c.name
                )));
            }
        }
        Ok(())
    }
}

/// Generates a seeded synthetic panel.
///
/// Prices follow a weekly cycle inside the band (plus noise, clipped to the
/// band); volumes sit on the category's demand line, scaled by the weekend
/// uplift and multiplicative noise.
pub fn synthesize(
    seed: u64,
    n_categories: usize,
    n_days: usize,
    profile: &GeneratorProfile,
) -> Result<Dataset> {
    if n_days < 14 {
        return Err(DataError::Invalid(format!(
            "n_days must be >= 14, got {n_days}"
        )));
    }
    if n_categories == 0 {
        return Err(DataError::Invalid("n_categories must be >= 1".into()));
    }
    profile.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(n_categories * n_days);
    for ci in 0..n_categories {
        let base = &profile.categories[ci % profile.categories.len()];
        let name = if ci < profile.categories.len() {
            base.name.clone()
        } else {
            format!("{}_{}", base.name, ci / profile.categories.len() + 1)
        };
        let (lo, hi) = base.price_band;
        let mid = 0.5 * (lo + hi);
        let half = 0.5 * (hi - lo);
        let phase: f64 = rng.random_range(0.0..7.0);
        let wholesale = base.wholesale_ratio * mid;
        for d in 0..n_days {
            let date = profile.start_date + Duration::days(d as i64);
            let cycle = (std::f64::consts::TAU * (d as f64 + phase) / 7.0).sin();
            let mut u = || {
                if profile.noise > 0.0 {
                    rng.random_range(-1.0..=1.0)
                } else {
                    0.0
                }
            };
            let price = (mid + half * (0.8 * cycle + profile.noise * u())).clamp(lo, hi);
            let weekend = matches!(date.weekday(), Weekday::Sat | Weekday::Sun);
            let uplift = if weekend { profile.weekend_uplift } else { 1.0 };
            let volume =
                ((base.slope * price + base.intercept) * uplift * (1.0 + profile.noise * u()))
                    .max(0.0);
            let wholesale_cost = wholesale * (1.0 + 0.5 * profile.noise * u());
            let spoilage_rate =
                (base.spoilage * (1.0 + 0.2 * cycle) * (1.0 + profile.noise * u())).clamp(0.0, 1.0);
            records.push(SalesRecord {
                date,
                category: name.clone(),
                unit_price: price,
                volume,
                wholesale_cost,
                spoilage_rate,
            });
        }
    }
    Dataset::new(records)
}

/// Per-feature min-max scaling fitted on a training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    /// `true` where the feature was constant over the fitting data; such
    /// features normalize to 0.5.
    pub degenerate: Vec<bool>,
}

impl Scaling {
    pub fn fit(rows: &[[f64; TARGET_DIM]]) -> Self {
        let mut min = vec![f64::INFINITY; TARGET_DIM];
        let mut max = vec![f64::NEG_INFINITY; TARGET_DIM];
        for row in rows {
            for k in 0..TARGET_DIM {
                min[k] = min[k].min(row[k]);
                max[k] = max[k].max(row[k]);
            }
        }
        let degenerate = min.iter().zip(&max).map(|(a, b)| a == b).collect();
        Self {
            min,
            max,
            degenerate,
        }
    }

    /// Maps into `[0, 1]`. Values outside the fitted range are clipped.
    pub fn normalize(&self, k: usize, v: f64) -> f64 {
        if self.degenerate[k] {
            0.5
        } else {
            ((v - self.min[k]) / (self.max[k] - self.min[k])).clamp(0.0, 1.0)
        }
    }

    pub fn denormalize(&self, k: usize, z: f64) -> f64 {
        if self.degenerate[k] {
            self.min[k]
        } else {
            self.min[k] + z * (self.max[k] - self.min[k])
        }
    }
}

/// Which inputs the forecaster sees per day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSet {
    /// Append a 7-way one-hot day-of-week encoding.
    pub day_of_week: bool,
}

impl Default for FeatureSet {
    fn default() -> Self {
        Self { day_of_week: true }
    }
}

impl FeatureSet {
    pub fn input_dim(&self) -> usize {
        TARGET_DIM + if self.day_of_week { 7 } else { 0 }
    }

    /// Builds one input vector from normalized continuous values and a date.
    pub fn encode(&self, normalized: &[f64; TARGET_DIM], date: NaiveDate) -> Vec<f64> {
        let mut v = normalized.to_vec();
        if self.day_of_week {
            let mut onehot = [0.0; 7];
            onehot[date.weekday().num_days_from_monday() as usize] = 1.0;
            v.extend_from_slice(&onehot);
        }
        v
    }
}

/// One training or evaluation example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowedSeries {
    /// `window_len` consecutive input vectors, oldest first.
    pub inputs: Vec<Vec<f64>>,
    /// Normalized (volume, price, spoilage) on the day after the window.
    pub target: Vec<f64>,
    pub first_date: NaiveDate,
    pub target_date: NaiveDate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Windows {
    pub train: Vec<WindowedSeries>,
    pub test: Vec<WindowedSeries>,
    pub scaling: Scaling,
    /// First day of the test split.
    pub split_date: NaiveDate,
}

pub fn raw_targets(series: &[SalesRecord]) -> Vec<[f64; TARGET_DIM]> {
    series
        .iter()
        .map(|r| [r.volume, r.unit_price, r.spoilage_rate])
        .collect()
}

fn windows_in(
    series: &[SalesRecord],
    rows: &[[f64; TARGET_DIM]],
    scaling: &Scaling,
    features: FeatureSet,
    window_len: usize,
    range: std::ops::Range<usize>,
) -> Vec<WindowedSeries> {
    let norm = |row: &[f64; TARGET_DIM]| {
        let mut out = [0.0; TARGET_DIM];
        for k in 0..TARGET_DIM {
            out[k] = scaling.normalize(k, row[k]);
        }
        out
    };
    let mut out = Vec::new();
    let mut start = range.start;
    while start + window_len < range.end {
        let inputs = (start..start + window_len)
            .map(|t| features.encode(&norm(&rows[t]), series[t].date))
            .collect();
        let t = start + window_len;
        out.push(WindowedSeries {
            inputs,
            target: norm(&rows[t]).to_vec(),
            first_date: series[start].date,
            target_date: series[t].date,
        });
        start += 1;
    }
    out
}

/// Splits one category's series chronologically and cuts it into windows.
///
/// The first `floor(n_days * split_frac)` days form the training split.
/// Scaling is fitted on the training days only; no window crosses the split.
pub fn make_windows(
    ds: &Dataset,
    category: &str,
    window_len: usize,
    split_frac: f64,
    features: FeatureSet,
) -> Result<Windows> {
    if window_len == 0 {
        return Err(DataError::Invalid("window_len must be >= 1".into()));
    }
    if !(split_frac > 0.0 && split_frac < 1.0) {
        return Err(DataError::Invalid(format!(
            "split_frac must lie in (0,1), got {split_frac}"
        )));
    }
    let series = ds.series(category)?;
    let n = series.len();
    if n <= window_len + 1 {
        return Err(DataError::Insufficient(format!(
            "{n} days cannot hold a window of {window_len} plus a target"
        )));
    }
    let split = ((n as f64) * split_frac).floor() as usize;
    let rows = raw_targets(series);
    let scaling = Scaling::fit(&rows[..split.max(1)]);
    let train = windows_in(series, &rows, &scaling, features, window_len, 0..split);
    let test = windows_in(series, &rows, &scaling, features, window_len, split..n);
    if train.is_empty() || test.is_empty() {
        return Err(DataError::Insufficient(format!(
            "window_len {window_len} over {n} days split at day {split} yields {} train and {} test windows",
            train.len(),
            test.len()
        )));
    }
    Ok(Windows {
        train,
        test,
        scaling,
        split_date: series[split].date,
    })
}

/// A record field usable in correlation analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    Volume,
    Price,
    Spoilage,
    Wholesale,
}

impl std::str::FromStr for Field {
    type Err = DataError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "volume" => Ok(Field::Volume),
            "price" | "unit_price" => Ok(Field::Price),
            "spoilage" | "spoilage_rate" => Ok(Field::Spoilage),
            "wholesale" | "wholesale_cost" => Ok(Field::Wholesale),
            other => Err(DataError::Invalid(format!("unknown field `{other}`"))),
        }
    }
}

impl std::fmt::Display for Field {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Field::Volume => "volume",
            Field::Price => "price",
            Field::Spoilage => "spoilage",
            Field::Wholesale => "wholesale",
        })
    }
}

/// `category:field`, e.g. `eggplant:price`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variable {
    pub category: String,
    pub field: Field,
}

impl std::str::FromStr for Variable {
    type Err = DataError;
    fn from_str(s: &str) -> Result<Self> {
        let (category, field) = s
            .rsplit_once(':')
            .ok_or_else(|| DataError::Invalid(format!("expected category:field, got `{s}`")))?;
        Ok(Self {
            category: category.to_string(),
            field: field.parse()?,
        })
    }
}

impl std::fmt::Display for Variable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.category, self.field)
    }
}

/// Pearson correlations between selected variables. `None` marks pairs
/// involving a zero-variance variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub labels: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
}

impl CorrelationMatrix {
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.values[i][j]
    }

    /// Labels in the first row and column; undefined entries are `NA`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec![String::new()];
        header.extend(self.labels.iter().cloned());
        w.write_record(&header).map_err(csv_io)?;
        for (label, row) in self.labels.iter().zip(&self.values) {
            let mut rec = vec![label.clone()];
            rec.extend(row.iter().map(|v| match v {
                Some(x) => x.to_string(),
                None => "NA".to_string(),
            }));
            w.write_record(&rec).map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Sample Pearson coefficient; `None` when either side has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

pub fn correlation_matrix(ds: &Dataset, variables: &[Variable]) -> Result<CorrelationMatrix> {
    if ds.n_days() < 2 {
        return Err(DataError::Insufficient("need at least 2 dates".into()));
    }
    let columns: Vec<Vec<f64>> = variables
        .iter()
        .map(|v| {
            Ok(ds
                .series(&v.category)?
                .iter()
                .map(|r| r.variable(v.field))
                .collect())
        })
        .collect::<Result<_>>()?;
    let constant: Vec<bool> = columns
        .iter()
        .map(|c| c.iter().all(|&x| x == c[0]))
        .collect();
    let k = variables.len();
    let mut values = vec![vec![None; k]; k];
    for i in 0..k {
        if !constant[i] {
            values[i][i] = Some(1.0);
        }
        for j in i + 1..k {
            let r = pearson(&columns[i], &columns[j]);
            values[i][j] = r;
            values[j][i] = r;
        }
    }
    Ok(CorrelationMatrix {
        labels: variables.iter().map(ToString::to_string).collect(),
        values,
    })
}
