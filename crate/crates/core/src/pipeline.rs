//! End-to-end planning runs.
//!
//! A run moves through four stages (ingest, train, forecast, optimize) and
//! persists every intermediate result as JSON or CSV inside its own run
//! directory:
//!
//! ```text
//! <runs>/<run id>/
//!   config.json          config snapshot (data source rewritten to data.csv)
//!   data.csv             full history used by the run
//!   meta.json            id, parent, timestamps, status, summary
//!   model/<cat>.json     trained forecaster
//!   loss/<cat>.csv       training loss per epoch
//!   forecast/<cat>.json  seven-day forecast bundle
//!   demand.json          fitted demand lines
//!   pricing_inputs.json  the scored pricing problem and cost-plus prices
//!   plan.json, plan.csv  optimized plan
//!   baseline.json        cost-plus reference plan
//!   swarm_history.csv    best fitness per swarm iteration
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDate, Utc};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::data::{ingest_csv, synthesize, DataError, Dataset, GeneratorProfile, SalesRecord};
use crate::forecast::{
    fit_category, forecast_week, historical_spoilage, CategoryModel, ForecastBundle,
    ForecastConfig, ForecastError, HORIZON,
};
use crate::pricing::{
    expected_sales, fit_demand, vector_from_plan, weighted_loss_rate, Constraints, CostModel,
    DemandModel, Plan, PlanCell, PlanLayout, PricingError, PricingProblem, DEFAULT_PENALTY,
};
use crate::swarm::{optimize_observed, Direction, EarlyStop, SwarmConfig, SwarmError, SwarmResult};
use crate::SCHEMA_VERSION;

/// Largest `cells x grid points` the oracle will enumerate.
pub const ORACLE_LIMIT: usize = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Config,
    Ingest,
    Train,
    Forecast,
    Optimize,
    Feedback,
    Scenario,
    Oracle,
    Persist,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Config => "config",
            Stage::Ingest => "ingest",
            Stage::Train => "train",
            Stage::Forecast => "forecast",
            Stage::Optimize => "optimize",
            Stage::Feedback => "feedback",
            Stage::Scenario => "scenario",
            Stage::Oracle => "oracle",
            Stage::Persist => "persist",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{stage}: invalid configuration: {message}")]
    Config { stage: Stage, message: String },
    #[error("{stage}: {source}")]
    Data { stage: Stage, source: DataError },
    #[error("{stage}: {source}")]
    Forecast { stage: Stage, source: ForecastError },
    #[error("{stage}: {source}")]
    Pricing { stage: Stage, source: PricingError },
    #[error("{stage}: {source}")]
    Swarm { stage: Stage, source: SwarmError },
    #[error("{stage}: missing artifact {}", path.display())]
    MissingArtifact { stage: Stage, path: PathBuf },
    #[error("{stage}: unknown run `{id}`")]
    UnknownRun { stage: Stage, id: String },
    #[error("{stage}: {}: {source}", path.display())]
    Io {
        stage: Stage,
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{stage}: {}: {source}", path.display())]
    Json {
        stage: Stage,
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("feedback: update contains no records")]
    EmptyUpdate,
    #[error("oracle: {cells} cells x {grid} grid points exceeds the limit of {limit}")]
    OracleTooLarge {
        cells: usize,
        grid: usize,
        limit: usize,
    },
}

impl PipelineError {
    pub fn stage(&self) -> Stage {
        match self {
            PipelineError::Config { stage, .. }
            | PipelineError::Data { stage, .. }
            | PipelineError::Forecast { stage, .. }
            | PipelineError::Pricing { stage, .. }
            | PipelineError::Swarm { stage, .. }
            | PipelineError::MissingArtifact { stage, .. }
            | PipelineError::UnknownRun { stage, .. }
            | PipelineError::Io { stage, .. }
            | PipelineError::Json { stage, .. } => *stage,
            PipelineError::EmptyUpdate => Stage::Feedback,
            PipelineError::OracleTooLarge { .. } => Stage::Oracle,
        }
    }

    /// Failures that point at a defect rather than at the inputs.
    pub fn is_internal(&self) -> bool {
        matches!(
            self,
            PipelineError::Swarm {
                source: SwarmError::NanAtInit { .. },
                ..
            } | PipelineError::Forecast {
                source: ForecastError::Dimension(_),
                ..
            } | PipelineError::Json {
                stage: Stage::Persist,
                ..
            }
        )
    }
}

type Result<T> = std::result::Result<T, PipelineError>;

fn config_err(message: impl Into<String>) -> PipelineError {
    PipelineError::Config {
        stage: Stage::Config,
        message: message.into(),
    }
}

// ---------------------------------------------------------------------------
// configuration

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    /// Relative paths resolve against the directory of the config file.
    Csv { path: PathBuf },
    Synth {
        seed: u64,
        #[serde(default = "default_synth_categories")]
        categories: usize,
        #[serde(default = "default_synth_days")]
        days: usize,
        #[serde(default)]
        profile: GeneratorProfile,
    },
}

fn default_synth_categories() -> usize {
    2
}

fn default_synth_days() -> usize {
    28
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synth {
            seed: 0,
            categories: default_synth_categories(),
            days: default_synth_days(),
            profile: GeneratorProfile::default(),
        }
    }
}

impl DataSource {
    pub fn load(&self) -> Result<Dataset> {
        let stage = Stage::Ingest;
        match self {
            DataSource::Csv { path } => {
                ingest_csv(path).map_err(|source| PipelineError::Data { stage, source })
            }
            DataSource::Synth {
                seed,
                categories,
                days,
                profile,
            } => synthesize(*seed, *categories, *days, profile)
                .map_err(|source| PipelineError::Data { stage, source }),
        }
    }
}

/// Swarm parameters for plan search; bounds come from the pricing problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SwarmSettings {
    pub n_particles: usize,
    pub max_iters: usize,
    pub w: f64,
    pub c1: f64,
    pub c2: f64,
    pub seed: u64,
    pub early_stop: Option<EarlyStop>,
    /// Start one particle at the cost-plus baseline plan.
    pub warm_start: bool,
}

impl Default for SwarmSettings {
    fn default() -> Self {
        let base = SwarmConfig::new(vec![(0.0, 1.0)]);
        Self {
            n_particles: base.n_particles,
            max_iters: base.max_iters,
            w: base.w,
            c1: base.c1,
            c2: base.c2,
            seed: 0,
            early_stop: None,
            warm_start: false,
        }
    }
}

impl SwarmSettings {
    pub fn swarm_config(&self, bounds: Vec<(f64, f64)>) -> SwarmConfig {
        let mut cfg = SwarmConfig::new(bounds);
        cfg.n_particles = self.n_particles;
        cfg.max_iters = self.max_iters;
        cfg.w = self.w;
        cfg.c1 = self.c1;
        cfg.c2 = self.c2;
        cfg.seed = self.seed;
        cfg.early_stop = self.early_stop;
        cfg.direction = Direction::Maximize;
        cfg
    }
}

/// One cap for every day, or one per day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CapSpec {
    Uniform(f64),
    Daily(Vec<f64>),
}

impl CapSpec {
    pub fn expand(&self, days: usize) -> std::result::Result<Vec<f64>, String> {
        let caps = match self {
            CapSpec::Uniform(c) => vec![*c; days],
            CapSpec::Daily(v) if v.len() == days => v.clone(),
            CapSpec::Daily(v) => {
                return Err(format!("expected {days} daily caps, got {}", v.len()))
            }
        };
        if caps.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err("caps must be finite and >= 0".into());
        }
        Ok(caps)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConstraintSettings {
    /// Explicit `[p_min, p_max]` per category.
    pub price_bands: BTreeMap<String, (f64, f64)>,
    /// Band for other categories, as multiples of the historical mean price.
    pub band_factors: (f64, f64),
    pub inventory_caps: BTreeMap<String, CapSpec>,
    /// Cap for other categories as a multiple of the largest historical
    /// daily volume; `None` leaves them uncapped.
    pub cap_factor: Option<f64>,
    pub penalty_coefficient: f64,
}

impl Default for ConstraintSettings {
    fn default() -> Self {
        Self {
            price_bands: BTreeMap::new(),
            band_factors: (0.8, 1.2),
            inventory_caps: BTreeMap::new(),
            cap_factor: Some(1.5),
            penalty_coefficient: DEFAULT_PENALTY,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostSettings {
    pub profit_margin: f64,
}

impl Default for CostSettings {
    fn default() -> Self {
        Self { profit_margin: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub schema_version: u32,
    pub data: DataSource,
    pub forecast: ForecastConfig,
    pub pso: SwarmSettings,
    pub constraints: ConstraintSettings,
    pub costs: CostSettings,
    /// Train and fit demand on only the trailing days; `None` uses the
    /// whole history.
    pub feedback_window_days: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            data: DataSource::default(),
            forecast: ForecastConfig::default(),
            pso: SwarmSettings::default(),
            constraints: ConstraintSettings::default(),
            costs: CostSettings::default(),
            feedback_window_days: None,
        }
    }
}

impl PipelineConfig {
    /// Reads a JSON config; relative CSV paths resolve against its
    /// directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg: PipelineConfig = read_json(path, Stage::Config)?;
        if let DataSource::Csv { path: p } = &mut cfg.data {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(config_err(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let f = &self.forecast;
        f.train.validate().map_err(|e| config_err(e.to_string()))?;
        if f.window_len == 0 || !(f.split_frac > 0.0 && f.split_frac < 1.0) {
            return Err(config_err(
                "forecast needs window_len >= 1 and 0 < split_frac < 1",
            ));
        }
        let p = &self.pso;
        if p.n_particles < 2 || !(0.0..=1.0).contains(&p.w) || !(p.c1 >= 0.0 && p.c2 >= 0.0) {
            return Err(config_err(
                "pso needs n_particles >= 2, 0 <= w <= 1, c1, c2 >= 0",
            ));
        }
        let c = &self.constraints;
        check_bands(&c.price_bands).map_err(config_err)?;
        let (lo, hi) = c.band_factors;
        if !(lo > 0.0 && lo < hi && hi.is_finite()) {
            return Err(config_err("band_factors need 0 < low < high"));
        }
        for (cat, cap) in &c.inventory_caps {
            cap.expand(HORIZON)
                .map_err(|m| config_err(format!("inventory cap for `{cat}`: {m}")))?;
        }
        if matches!(c.cap_factor, Some(k) if !(k > 0.0 && k.is_finite())) {
            return Err(config_err("cap_factor must be positive"));
        }
        if !(c.penalty_coefficient >= 0.0 && c.penalty_coefficient.is_finite()) {
            return Err(config_err("penalty_coefficient must be >= 0"));
        }
        if !(self.costs.profit_margin >= 0.0 && self.costs.profit_margin.is_finite()) {
            return Err(config_err("profit_margin must be >= 0"));
        }
        if self.feedback_window_days == Some(0) {
            return Err(config_err("feedback_window_days must be >= 1"));
        }
        Ok(())
    }

    /// Every category named in a constraint section must exist in the data.
    pub fn check_categories(&self, ds: &Dataset) -> Result<()> {
        let known = ds.categories();
        let named = self
            .constraints
            .price_bands
            .keys()
            .chain(self.constraints.inventory_caps.keys());
        for cat in named {
            if !known.contains(cat) {
                return Err(config_err(format!(
                    "constraints name unknown category `{cat}`"
                )));
            }
        }
        Ok(())
    }

    /// The history the models and demand lines are fitted on.
    pub fn training_data(&self, ds: &Dataset) -> Dataset {
        match self.feedback_window_days {
            Some(days) => ds.tail(days),
            None => ds.clone(),
        }
    }
}

fn check_bands(bands: &BTreeMap<String, (f64, f64)>) -> std::result::Result<(), String> {
    for (cat, &(lo, hi)) in bands {
        if !(lo > 0.0 && lo < hi && hi.is_finite()) {
            return Err(format!("price band for `{cat}` needs 0 < p_min < p_max"));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// scenario overrides

/// Economic levers applied on top of a finished run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioOverride {
    pub price_bands: BTreeMap<String, (f64, f64)>,
    pub profit_margin: Option<f64>,
    pub inventory_caps: BTreeMap<String, CapSpec>,
    pub max_iters: Option<usize>,
    pub n_particles: Option<usize>,
}

impl ScenarioOverride {
    pub fn is_empty(&self) -> bool {
        *self == Self::default()
    }

    pub fn validate(&self, categories: &[String]) -> std::result::Result<(), String> {
        check_bands(&self.price_bands)?;
        for cat in self.price_bands.keys().chain(self.inventory_caps.keys()) {
            if !categories.contains(cat) {
                return Err(format!("unknown category `{cat}`"));
            }
        }
        for (cat, cap) in &self.inventory_caps {
            cap.expand(HORIZON)
                .map_err(|m| format!("inventory cap for `{cat}`: {m}"))?;
        }
        if matches!(self.profit_margin, Some(m) if !(m >= 0.0 && m.is_finite())) {
            return Err("profit_margin must be >= 0".into());
        }
        if matches!(self.n_particles, Some(n) if n < 2) {
            return Err("n_particles must be >= 2".into());
        }
        Ok(())
    }

    /// The base config with every provided lever folded in.
    pub fn apply(&self, base: &PipelineConfig) -> PipelineConfig {
        let mut cfg = base.clone();
        for (cat, band) in &self.price_bands {
            cfg.constraints.price_bands.insert(cat.clone(), *band);
        }
        for (cat, cap) in &self.inventory_caps {
            cfg.constraints
                .inventory_caps
                .insert(cat.clone(), cap.clone());
        }
        if let Some(m) = self.profit_margin {
            cfg.costs.profit_margin = m;
        }
        if let Some(n) = self.max_iters {
            cfg.pso.max_iters = n;
        }
        if let Some(n) = self.n_particles {
            cfg.pso.n_particles = n;
        }
        cfg
    }
}

// ---------------------------------------------------------------------------
// pure stages

/// Trains one forecaster per category, in parallel.
pub fn train_models(ds: &Dataset, cfg: &ForecastConfig) -> Result<Vec<CategoryModel>> {
    ds.categories()
        .par_iter()
        .map(|cat| fit_category(ds, cat, cfg))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|source| PipelineError::Forecast {
            stage: Stage::Train,
            source,
        })
}

pub fn forecast_all(models: &[CategoryModel], ds: &Dataset) -> Result<Vec<ForecastBundle>> {
    models
        .iter()
        .map(|m| forecast_week(m, ds))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|source| PipelineError::Forecast {
            stage: Stage::Forecast,
            source,
        })
}

/// Where the per-day spoilage used in plan scoring came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpoilageSource {
    Forecast,
    Historical,
}

/// The scored pricing problem plus the unclipped cost-plus prices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PricingInputs {
    pub schema_version: u32,
    pub problem: PricingProblem,
    pub cost_plus_prices: Vec<f64>,
    pub spoilage_source: SpoilageSource,
}

/// Demand lines, costs, spoilage and constraints for the next week.
pub fn build_problem(
    cfg: &PipelineConfig,
    ds: &Dataset,
    bundles: Option<&[ForecastBundle]>,
) -> Result<PricingInputs> {
    let stage = Stage::Optimize;
    let pricing = |source| PipelineError::Pricing { stage, source };
    let cats = ds.categories().to_vec();
    let layout = PlanLayout::new(cats.clone(), HORIZON);
    let mut demand = Vec::with_capacity(cats.len());
    let mut costs = Vec::with_capacity(cats.len());
    let mut spoilage = Vec::with_capacity(cats.len());
    let mut bands = Vec::with_capacity(cats.len());
    let mut caps = Vec::with_capacity(cats.len());
    let cons = &cfg.constraints;
    for cat in &cats {
        let series = ds
            .series(cat)
            .map_err(|source| PipelineError::Data { stage, source })?;
        let n = series.len() as f64;
        let points: Vec<(f64, f64)> = series.iter().map(|r| (r.unit_price, r.volume)).collect();
        demand.push(fit_demand(cat, &points).map_err(pricing)?);

        let wholesale = series.iter().map(|r| r.wholesale_cost).sum::<f64>() / n;
        let pairs: Vec<(f64, f64)> = series.iter().map(|r| (r.volume, r.spoilage_rate)).collect();
        let loss = weighted_loss_rate(&pairs).map_err(pricing)?;
        costs.push(
            CostModel::from_loss_rate(cat, wholesale, loss, cfg.costs.profit_margin)
                .map_err(pricing)?,
        );

        let days = match bundles {
            Some(b) => b
                .iter()
                .find(|b| &b.category == cat)
                .map(|b| b.spoilage.clone())
                .ok_or_else(|| pricing(PricingError::MissingModel(cat.clone())))?,
            None => historical_spoilage(ds, cat)
                .map_err(|source| PipelineError::Forecast { stage, source })?,
        };
        spoilage.push(days);

        let band = match cons.price_bands.get(cat) {
            Some(b) => *b,
            None => {
                let mean = series.iter().map(|r| r.unit_price).sum::<f64>() / n;
                (cons.band_factors.0 * mean, cons.band_factors.1 * mean)
            }
        };
        bands.push(band);

        let cap = match cons.inventory_caps.get(cat) {
            Some(spec) => Some(spec.expand(HORIZON).map_err(config_err)?),
            None => cons.cap_factor.map(|k| {
                let peak = series.iter().map(|r| r.volume).fold(0.0, f64::max);
                vec![k * peak; HORIZON]
            }),
        };
        caps.push(cap);
    }
    let constraints = Constraints {
        price_bands: bands,
        inventory_caps: caps,
        penalty_coefficient: cons.penalty_coefficient,
    };
    let problem =
        PricingProblem::new(layout, &demand, &costs, spoilage, constraints).map_err(pricing)?;
    Ok(PricingInputs {
        schema_version: SCHEMA_VERSION,
        cost_plus_prices: problem.cost_plus_prices(),
        problem,
        spoilage_source: if bundles.is_some() {
            SpoilageSource::Forecast
        } else {
            SpoilageSource::Historical
        },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Optimized {
    pub plan: Plan,
    pub baseline: Plan,
    pub swarm: SwarmResult,
}

/// Maximizes penalized profit over plan vectors, reporting
/// `(iteration, best fitness)` after every swarm iteration.
pub fn optimize_plan<O>(
    problem: &PricingProblem,
    settings: &SwarmSettings,
    observe: O,
) -> Result<Optimized>
where
    O: FnMut(usize, f64),
{
    let stage = Stage::Optimize;
    let baseline = problem
        .baseline_plan()
        .map_err(|source| PipelineError::Pricing { stage, source })?;
    let mut cfg = settings.swarm_config(problem.search_bounds());
    if settings.warm_start {
        cfg.initial_positions = vec![vector_from_plan(&baseline.cells)];
    }
    let fitness = |x: &[f64]| problem.fitness(x);
    let swarm = optimize_observed(&cfg, &fitness, observe)
        .map_err(|source| PipelineError::Swarm { stage, source })?;
    let plan = problem
        .plan_from_vector(&swarm.gbest_pos)
        .map_err(|source| PipelineError::Pricing { stage, source })?;
    Ok(Optimized {
        plan,
        baseline,
        swarm,
    })
}

/// Exhaustive search over an even price grid per cell, stocking each cell at
/// [`PricingProblem::best_qty`].
///
/// Cells do not interact in the profit model, so maximizing each cell on its
/// own grid gives the exact grid optimum of the whole plan. For a fixed price
/// profit is linear in quantity below demand (slope `p(1 - s) - wholesale`)
/// and falls by the wholesale cost per unit above it, so demand capped at the
/// inventory limit, or zero when the slope is negative, is the best quantity.
pub fn oracle_best_plan(problem: &PricingProblem, grid: usize) -> Result<(Plan, f64)> {
    let cells = problem.layout.len() / 2;
    if grid < 2 {
        return Err(PipelineError::Config {
            stage: Stage::Oracle,
            message: "grid needs at least 2 points".into(),
        });
    }
    if cells.saturating_mul(grid) > ORACLE_LIMIT {
        return Err(PipelineError::OracleTooLarge {
            cells,
            grid,
            limit: ORACLE_LIMIT,
        });
    }
    let mut plan_cells = Vec::with_capacity(problem.layout.categories.len());
    for c in 0..problem.layout.categories.len() {
        let (lo, hi) = problem.constraints.price_bands[c];
        let mut row = Vec::with_capacity(problem.layout.days);
        for d in 0..problem.layout.days {
            let mut best: Option<(PlanCell, f64)> = None;
            for k in 0..grid {
                let price = if k + 1 == grid {
                    hi
                } else {
                    lo + (hi - lo) * k as f64 / (grid - 1) as f64
                };
                let cell = PlanCell {
                    price,
                    qty: problem.best_qty(c, d, price),
                };
                let profit = problem.cell_outcome(c, d, cell).profit;
                if best.is_none_or(|(_, b)| profit > b) {
                    best = Some((cell, profit));
                }
            }
            row.push(best.expect("grid is nonempty").0);
        }
        plan_cells.push(row);
    }
    let plan = Plan::scored(problem.layout.clone(), plan_cells, problem).map_err(|source| {
        PipelineError::Pricing {
            stage: Stage::Oracle,
            source,
        }
    })?;
    let profit = plan.projected_profit;
    Ok((plan, profit))
}

/// Profit-maximizing price of one uncapped cell: midway between the price
/// that just covers spoiled wholesale cost and the demand zero crossing.
pub fn vertex_price(dm: &DemandModel, wholesale: f64, spoilage: f64) -> Option<f64> {
    let zero = dm.zero_crossing()?;
    Some(0.5 * (zero + wholesale / (1.0 - spoilage)))
}

// ---------------------------------------------------------------------------
// run directories

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ingested,
    Trained,
    Forecast,
    Optimized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSummary {
    pub projected_profit: f64,
    pub penalized_fitness: f64,
    pub baseline_profit: f64,
    pub feasible: bool,
    pub iterations_run: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub schema_version: u32,
    pub run_id: String,
    pub parent: Option<String>,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
    pub status: RunStatus,
    pub categories: Vec<String>,
    pub data_span: (NaiveDate, NaiveDate),
    pub training_span: (NaiveDate, NaiveDate),
    pub scenario: Option<ScenarioOverride>,
    pub summary: Option<PlanSummary>,
}

/// A run directory under a runs root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunDir {
    root: PathBuf,
    id: String,
}

fn file_stem(category: &str) -> String {
    category
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

impl RunDir {
    /// An existing run.
    pub fn open(runs_root: impl AsRef<Path>, id: &str) -> Result<Self> {
        let bad = id.is_empty() || id.contains(['/', '\\']) || id.starts_with('.');
        let dir = Self {
            root: runs_root.as_ref().to_path_buf(),
            id: id.to_string(),
        };
        if bad || !dir.meta_path().is_file() {
            return Err(PipelineError::UnknownRun {
                stage: Stage::Persist,
                id: id.to_string(),
            });
        }
        Ok(dir)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn path(&self) -> PathBuf {
        self.root.join(&self.id)
    }

    pub fn runs_root(&self) -> &Path {
        &self.root
    }

    pub fn file(&self, rel: &str) -> PathBuf {
        self.path().join(rel)
    }

    pub fn config_path(&self) -> PathBuf {
        self.file("config.json")
    }

    pub fn data_path(&self) -> PathBuf {
        self.file("data.csv")
    }

    pub fn meta_path(&self) -> PathBuf {
        self.file("meta.json")
    }

    pub fn model_path(&self, category: &str) -> PathBuf {
        self.file(&format!("model/{}.json", file_stem(category)))
    }

    pub fn loss_path(&self, category: &str) -> PathBuf {
        self.file(&format!("loss/{}.csv", file_stem(category)))
    }

    pub fn forecast_path(&self, category: &str) -> PathBuf {
        self.file(&format!("forecast/{}.json", file_stem(category)))
    }

    pub fn demand_path(&self) -> PathBuf {
        self.file("demand.json")
    }

    pub fn inputs_path(&self) -> PathBuf {
        self.file("pricing_inputs.json")
    }

    pub fn plan_path(&self) -> PathBuf {
        self.file("plan.json")
    }

    pub fn plan_csv_path(&self) -> PathBuf {
        self.file("plan.csv")
    }

    pub fn baseline_path(&self) -> PathBuf {
        self.file("baseline.json")
    }

    pub fn history_path(&self) -> PathBuf {
        self.file("swarm_history.csv")
    }

    pub fn meta(&self) -> Result<RunMeta> {
        read_json(&self.meta_path(), Stage::Persist)
    }

    pub fn config(&self) -> Result<PipelineConfig> {
        read_json(&self.config_path(), Stage::Persist)
    }

    pub fn dataset(&self) -> Result<Dataset> {
        let path = self.data_path();
        require(&path, Stage::Persist)?;
        ingest_csv(&path).map_err(|source| PipelineError::Data {
            stage: Stage::Persist,
            source,
        })
    }

    /// Forecast bundles in category order; errors name the first missing
    /// file.
    pub fn bundles(&self, stage: Stage) -> Result<Vec<ForecastBundle>> {
        let meta = self.meta()?;
        meta.categories
            .iter()
            .map(|c| {
                let p = self.forecast_path(c);
                require(&p, stage)?;
                read_json(&p, stage)
            })
            .collect()
    }

    pub fn models(&self, stage: Stage) -> Result<Vec<CategoryModel>> {
        let meta = self.meta()?;
        meta.categories
            .iter()
            .map(|c| {
                let p = self.model_path(c);
                require(&p, stage)?;
                read_json(&p, stage)
            })
            .collect()
    }

    pub fn plan(&self) -> Result<Plan> {
        let p = self.plan_path();
        require(&p, Stage::Persist)?;
        read_json(&p, Stage::Persist)
    }

    pub fn swarm_history(&self) -> Result<Vec<f64>> {
        let p = self.history_path();
        require(&p, Stage::Persist)?;
        let text = fs::read_to_string(&p).map_err(|source| io_err(Stage::Persist, &p, source))?;
        text.lines()
            .skip(1)
            .map(|l| {
                l.split(',')
                    .nth(1)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| PipelineError::Config {
                        stage: Stage::Persist,
                        message: format!("{}: malformed row `{l}`", p.display()),
                    })
            })
            .collect()
    }

    fn set_status(&self, status: RunStatus, summary: Option<PlanSummary>) -> Result<RunMeta> {
        let mut meta = self.meta()?;
        meta.status = status;
        meta.updated_at = Utc::now();
        if summary.is_some() {
            meta.summary = summary;
        }
        write_json(&self.meta_path(), &meta)?;
        Ok(meta)
    }
}

/// Metadata of every run under `runs_root`, oldest first.
pub fn list_runs(runs_root: impl AsRef<Path>) -> Result<Vec<RunMeta>> {
    let root = runs_root.as_ref();
    if !root.exists() {
        return Ok(Vec::new());
    }
    let entries = fs::read_dir(root).map_err(|source| io_err(Stage::Persist, root, source))?;
    let mut metas = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|source| io_err(Stage::Persist, root, source))?;
        let meta_path = entry.path().join("meta.json");
        if meta_path.is_file() {
            metas.push(read_json::<RunMeta>(&meta_path, Stage::Persist)?);
        }
    }
    metas.sort_by(|a, b| (a.created_at, &a.run_id).cmp(&(b.created_at, &b.run_id)));
    Ok(metas)
}

/// The most recently created run, if any.
pub fn latest_run(runs_root: impl AsRef<Path>) -> Result<Option<RunDir>> {
    let root = runs_root.as_ref();
    match list_runs(root)?.pop() {
        Some(meta) => RunDir::open(root, &meta.run_id).map(Some),
        None => Ok(None),
    }
}

fn io_err(stage: Stage, path: &Path, source: std::io::Error) -> PipelineError {
    PipelineError::Io {
        stage,
        path: path.to_path_buf(),
        source,
    }
}

fn require(path: &Path, stage: Stage) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(PipelineError::MissingArtifact {
            stage,
            path: path.to_path_buf(),
        })
    }
}

fn read_json<T: DeserializeOwned>(path: &Path, stage: Stage) -> Result<T> {
    let bytes = fs::read(path).map_err(|source| io_err(stage, path, source))?;
    serde_json::from_slice(&bytes).map_err(|source| PipelineError::Json {
        stage,
        path: path.to_path_buf(),
        source,
    })
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|source| io_err(Stage::Persist, dir, source))?;
    }
    fs::write(path, bytes).map_err(|source| io_err(Stage::Persist, path, source))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| PipelineError::Json {
        stage: Stage::Persist,
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

fn dataset_csv(ds: &Dataset) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    ds.write_csv(&mut buf)
        .map_err(|source| PipelineError::Data {
            stage: Stage::Persist,
            source,
        })?;
    Ok(buf)
}

/// Content hash of the config snapshot, the data and the parent id.
fn run_id(config_json: &str, data_csv: &[u8], parent: Option<&str>) -> String {
    let mut h = Sha256::new();
    h.update(config_json.as_bytes());
    h.update([0]);
    h.update(data_csv);
    h.update([0]);
    h.update(parent.unwrap_or("").as_bytes());
    let digest = hex::encode(h.finalize());
    format!("run-{}", &digest[..12])
}

/// Creates a run directory holding the config snapshot and the data.
///
/// `dataset` overrides the config's data source (used by feedback updates,
/// whose data lives in the parent run). The snapshot's source always points
/// at the run's own `data.csv`, except for synthetic sources, which are
/// kept so the snapshot documents how the data was made.
pub fn create_run(
    cfg: &PipelineConfig,
    runs_root: impl AsRef<Path>,
    parent: Option<&str>,
    dataset: Option<Dataset>,
    scenario: Option<ScenarioOverride>,
) -> Result<RunDir> {
    cfg.validate()?;
    let ds = match dataset {
        Some(ds) => ds,
        None => cfg.data.load()?,
    };
    cfg.check_categories(&ds)?;
    let mut snapshot = cfg.clone();
    if !matches!(snapshot.data, DataSource::Synth { .. }) || parent.is_some() {
        snapshot.data = DataSource::Csv {
            path: PathBuf::from("data.csv"),
        };
    }
    let config_json =
        serde_json::to_string_pretty(&snapshot).map_err(|source| PipelineError::Json {
            stage: Stage::Persist,
            path: PathBuf::from("config.json"),
            source,
        })?;
    let data_csv = dataset_csv(&ds)?;

    let root = runs_root.as_ref();
    fs::create_dir_all(root).map_err(|source| io_err(Stage::Persist, root, source))?;
    let base = run_id(&config_json, &data_csv, parent);
    let mut id = base.clone();
    let mut k = 1;
    // create_dir fails on an existing directory, so concurrent creators
    // never share one
    loop {
        match fs::create_dir(root.join(&id)) {
            Ok(()) => break,
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                k += 1;
                id = format!("{base}-{k}");
            }
            Err(source) => return Err(io_err(Stage::Persist, &root.join(&id), source)),
        }
    }
    let dir = RunDir {
        root: root.to_path_buf(),
        id,
    };
    write_bytes(&dir.config_path(), format!("{config_json}\n").as_bytes())?;
    write_bytes(&dir.data_path(), &data_csv)?;
    let now = Utc::now();
    let meta = RunMeta {
        schema_version: SCHEMA_VERSION,
        run_id: dir.id.clone(),
        parent: parent.map(str::to_string),
        created_at: now,
        updated_at: now,
        status: RunStatus::Ingested,
        categories: ds.categories().to_vec(),
        data_span: ds.span(),
        training_span: cfg.training_data(&ds).span(),
        scenario,
        summary: None,
    };
    write_json(&dir.meta_path(), &meta)?;
    Ok(dir)
}

/// Trains every category's forecaster and writes models and loss curves.
pub fn train_stage(run: &RunDir) -> Result<Vec<CategoryModel>> {
    let cfg = run.config()?;
    let ds = cfg.training_data(&run.dataset()?);
    let models = if cfg.forecast.enabled {
        train_models(&ds, &cfg.forecast)?
    } else {
        Vec::new()
    };
    for m in &models {
        write_json(&run.model_path(&m.category), m)?;
        let mut csv = String::from("epoch,loss\n");
        for (e, l) in m.loss_history.iter().enumerate() {
            csv.push_str(&format!("{e},{l}\n"));
        }
        write_bytes(&run.loss_path(&m.category), csv.as_bytes())?;
    }
    run.set_status(RunStatus::Trained, None)?;
    Ok(models)
}

/// Forecasts the week after the training span for every category.
pub fn forecast_stage(run: &RunDir) -> Result<Vec<ForecastBundle>> {
    let cfg = run.config()?;
    let bundles = if cfg.forecast.enabled {
        let ds = cfg.training_data(&run.dataset()?);
        let models = run.models(Stage::Forecast)?;
        forecast_all(&models, &ds)?
    } else {
        Vec::new()
    };
    for b in &bundles {
        write_json(&run.forecast_path(&b.category), b)?;
    }
    run.set_status(RunStatus::Forecast, None)?;
    Ok(bundles)
}

/// Fits demand, searches for the best plan and writes the plan artifacts.
pub fn optimize_stage<O>(run: &RunDir, observe: O) -> Result<RunArtifact>
where
    O: FnMut(usize, f64),
{
    let cfg = run.config()?;
    let ds = cfg.training_data(&run.dataset()?);
    let bundles = if cfg.forecast.enabled {
        Some(run.bundles(Stage::Optimize)?)
    } else {
        None
    };
    let inputs = build_problem(&cfg, &ds, bundles.as_deref())?;
    let out = optimize_plan(&inputs.problem, &cfg.pso, observe)?;

    write_json(&run.demand_path(), &inputs.problem.demand)?;
    write_json(&run.inputs_path(), &inputs)?;
    write_json(&run.plan_path(), &out.plan)?;
    write_json(&run.baseline_path(), &out.baseline)?;
    let mut plan_csv = Vec::new();
    out.plan
        .write_csv(&mut plan_csv)
        .map_err(|source| io_err(Stage::Persist, &run.plan_csv_path(), source))?;
    write_bytes(&run.plan_csv_path(), &plan_csv)?;
    write_bytes(&run.history_path(), out.swarm.history_csv().as_bytes())?;
    let meta = run.set_status(
        RunStatus::Optimized,
        Some(PlanSummary {
            projected_profit: out.plan.projected_profit,
            penalized_fitness: out.plan.penalized_fitness,
            baseline_profit: out.baseline.projected_profit,
            feasible: out.plan.feasible,
            iterations_run: out.swarm.iterations_run,
        }),
    )?;
    Ok(RunArtifact {
        dir: run.clone(),
        meta,
        config: cfg,
        bundles: bundles.unwrap_or_default(),
        demand: inputs.problem.demand.clone(),
        inputs,
        plan: out.plan,
        baseline: out.baseline,
        swarm_history: out.swarm.history,
    })
}

/// Everything a finished run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifact {
    pub dir: RunDir,
    pub meta: RunMeta,
    pub config: PipelineConfig,
    pub bundles: Vec<ForecastBundle>,
    pub demand: Vec<DemandModel>,
    pub inputs: PricingInputs,
    pub plan: Plan,
    pub baseline: Plan,
    pub swarm_history: Vec<f64>,
}

impl RunArtifact {
    /// Reads a finished run back from disk.
    pub fn load(run: &RunDir) -> Result<Self> {
        let meta = run.meta()?;
        if meta.status < RunStatus::Optimized {
            return Err(PipelineError::MissingArtifact {
                stage: Stage::Persist,
                path: run.plan_path(),
            });
        }
        let config = run.config()?;
        let bundles = if config.forecast.enabled {
            run.bundles(Stage::Persist)?
        } else {
            Vec::new()
        };
        let inputs: PricingInputs = read_json(&run.inputs_path(), Stage::Persist)?;
        Ok(Self {
            dir: run.clone(),
            demand: read_json(&run.demand_path(), Stage::Persist)?,
            plan: run.plan()?,
            baseline: read_json(&run.baseline_path(), Stage::Persist)?,
            swarm_history: run.swarm_history()?,
            meta,
            config,
            bundles,
            inputs,
        })
    }

    pub fn id(&self) -> &str {
        self.dir.id()
    }
}

/// Runs every stage into a fresh run directory under `runs_root`.
pub fn run_pipeline(cfg: &PipelineConfig, runs_root: impl AsRef<Path>) -> Result<RunArtifact> {
    let run = create_run(cfg, runs_root, None, None, None)?;
    train_stage(&run)?;
    forecast_stage(&run)?;
    optimize_stage(&run, |_, _| {})
}

/// Appends new sales, retrains on the feedback window and re-optimizes into
/// a new run linked to `artifact`.
pub fn feedback_update(
    artifact: &RunArtifact,
    new_records: Vec<SalesRecord>,
) -> Result<RunArtifact> {
    if new_records.is_empty() {
        return Err(PipelineError::EmptyUpdate);
    }
    let ds = artifact
        .dir
        .dataset()?
        .extend(new_records)
        .map_err(|source| PipelineError::Data {
            stage: Stage::Feedback,
            source,
        })?;
    let run = create_run(
        &artifact.config,
        artifact.dir.runs_root(),
        Some(artifact.id()),
        Some(ds),
        None,
    )?;
    train_stage(&run)?;
    forecast_stage(&run)?;
    optimize_stage(&run, |_, _| {})
}

/// Re-optimizes a run's forecasts under manager overrides, without
/// retraining, into a new run linked to `base`.
pub fn run_scenario<O>(base: &RunDir, ov: &ScenarioOverride, observe: O) -> Result<RunArtifact>
where
    O: FnMut(usize, f64),
{
    let meta = base.meta()?;
    ov.validate(&meta.categories)
        .map_err(|message| PipelineError::Config {
            stage: Stage::Scenario,
            message,
        })?;
    if meta.status < RunStatus::Forecast {
        return Err(PipelineError::MissingArtifact {
            stage: Stage::Scenario,
            path: base.file("forecast"),
        });
    }
    let base_cfg = base.config()?;
    let cfg = ov.apply(&base_cfg);
    let ds = base.dataset()?;
    let run = create_run(
        &cfg,
        base.runs_root(),
        Some(base.id()),
        Some(ds),
        Some(ov.clone()),
    )?;
    if cfg.forecast.enabled {
        for m in base.models(Stage::Scenario)? {
            write_json(&run.model_path(&m.category), &m)?;
        }
        for b in base.bundles(Stage::Scenario)? {
            write_json(&run.forecast_path(&b.category), &b)?;
        }
    }
    run.set_status(RunStatus::Forecast, None)?;
    optimize_stage(&run, observe)
}

/// Expected sales at each cell's price; convenience for reports.
pub fn plan_demand(problem: &PricingProblem, plan: &Plan) -> Vec<Vec<f64>> {
    plan.cells
        .iter()
        .enumerate()
        .map(|(c, row)| {
            row.iter()
                .map(|cell| expected_sales(&problem.demand[c], cell.price))
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forecast::TrainConfig;
    use chrono::Duration;

    fn quick_config() -> PipelineConfig {
        PipelineConfig {
            data: DataSource::Synth {
                seed: 7,
                categories: 2,
                days: 28,
                profile: GeneratorProfile::default(),
            },
            forecast: ForecastConfig {
                train: TrainConfig {
                    hidden_dim: 4,
                    epochs: 30,
                    ..TrainConfig::default()
                },
                ..ForecastConfig::default()
            },
            pso: SwarmSettings {
                max_iters: 40,
                ..SwarmSettings::default()
            },
            ..PipelineConfig::default()
        }
    }

    fn next_week(art: &RunArtifact, days: usize, seed: u64) -> Vec<SalesRecord> {
        let (_, end) = art.meta.data_span;
        let profile = GeneratorProfile {
            start_date: end + Duration::days(1),
            ..GeneratorProfile::default()
        };
        // synthesize needs two weeks; keep the first `days`
        let ds = synthesize(seed, art.meta.categories.len(), 14.max(days), &profile).unwrap();
        let cutoff = end + Duration::days(days as i64);
        ds.records()
            .iter()
            .filter(|r| r.date <= cutoff)
            .cloned()
            .collect()
    }

    #[test]
    fn default_config_round_trips_through_json() {
        let cfg = PipelineConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<PipelineConfig>(&text).unwrap(), cfg);
        // every section has defaults
        let minimal: PipelineConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(minimal, cfg);
    }

    #[test]
    fn relative_csv_paths_resolve_against_the_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        fs::write(&path, r#"{"data": {"kind": "csv", "path": "sales.csv"}}"#).unwrap();
        let cfg = PipelineConfig::load(&path).unwrap();
        assert_eq!(
            cfg.data,
            DataSource::Csv {
                path: dir.path().join("sales.csv")
            }
        );
    }

    #[test]
    fn invalid_sections_are_rejected() {
        let mut cfg = PipelineConfig::default();
        cfg.constraints.price_bands.insert("a".into(), (5.0, 5.0));
        assert!(matches!(cfg.validate(), Err(PipelineError::Config { .. })));
        let mut cfg = PipelineConfig::default();
        cfg.costs.profit_margin = -1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = PipelineConfig::default();
        cfg.constraints
            .inventory_caps
            .insert("a".into(), CapSpec::Daily(vec![1.0; 3]));
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn constraints_must_name_known_categories() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = quick_config();
        cfg.constraints
            .price_bands
            .insert("durian".into(), (1.0, 2.0));
        let err = run_pipeline(&cfg, dir.path()).unwrap_err();
        assert_eq!(err.stage(), Stage::Config);
        assert!(err.to_string().contains("durian"));
    }

    #[test]
    fn two_category_run_has_the_expected_shape() {
        let dir = tempfile::tempdir().unwrap();
        let art = run_pipeline(&quick_config(), dir.path()).unwrap();
        assert_eq!(art.bundles.len(), 2);
        assert_eq!(art.demand.len(), 2);
        assert_eq!(art.plan.cells.len(), 2);
        assert!(art.plan.cells.iter().all(|r| r.len() == 7));
        assert_eq!(art.swarm_history.len(), 40);
        for f in [
            "config.json",
            "data.csv",
            "meta.json",
            "plan.json",
            "plan.csv",
            "swarm_history.csv",
        ] {
            assert!(art.dir.file(f).is_file(), "{f}");
        }
        for c in &art.meta.categories {
            assert!(art.dir.forecast_path(c).is_file());
            assert!(art.dir.model_path(c).is_file());
        }
        assert_eq!(RunArtifact::load(&art.dir).unwrap(), art);
        assert_eq!(list_runs(dir.path()).unwrap(), vec![art.meta.clone()]);
    }

    #[test]
    fn optimized_plan_is_feasible_and_beats_the_baseline() {
        let dir = tempfile::tempdir().unwrap();
        let art = run_pipeline(&quick_config(), dir.path()).unwrap();
        assert!(art.plan.feasible);
        assert!(art.plan.projected_profit >= art.baseline.projected_profit);
        let summary = art.meta.summary.unwrap();
        assert_eq!(summary.projected_profit, art.plan.projected_profit);
    }

    #[test]
    fn identical_configs_give_identical_plans() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let ra = run_pipeline(&quick_config(), a.path()).unwrap();
        let rb = run_pipeline(&quick_config(), b.path()).unwrap();
        assert_eq!(ra.id(), rb.id());
        let pa = fs::read(ra.dir.plan_path()).unwrap();
        let pb = fs::read(rb.dir.plan_path()).unwrap();
        assert_eq!(pa, pb);
        // same root: a second directory, same content
        let rc = run_pipeline(&quick_config(), a.path()).unwrap();
        assert_ne!(rc.id(), ra.id());
        assert_eq!(fs::read(rc.dir.plan_path()).unwrap(), pa);
    }

    #[test]
    fn disabled_forecasting_scores_with_historical_spoilage() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = quick_config();
        cfg.forecast.enabled = false;
        let art = run_pipeline(&cfg, dir.path()).unwrap();
        assert!(art.bundles.is_empty());
        assert_eq!(art.inputs.spoilage_source, SpoilageSource::Historical);
        let ds = art.dir.dataset().unwrap();
        let hist = historical_spoilage(&ds, &art.meta.categories[0]).unwrap();
        assert_eq!(art.inputs.problem.spoilage[0], hist);
    }

    #[test]
    fn optimize_without_forecast_names_the_missing_file() {
        let dir = tempfile::tempdir().unwrap();
        let run = create_run(&quick_config(), dir.path(), None, None, None).unwrap();
        train_stage(&run).unwrap();
        let err = optimize_stage(&run, |_, _| {}).unwrap_err();
        match err {
            PipelineError::MissingArtifact { stage, path } => {
                assert_eq!(stage, Stage::Optimize);
                assert!(
                    path.ends_with("forecast/aquatic_roots.json"),
                    "{}",
                    path.display()
                );
            }
            e => panic!("unexpected {e}"),
        }
        let err =
            forecast_stage(&create_run(&quick_config(), dir.path(), None, None, None).unwrap())
                .unwrap_err();
        assert!(matches!(
            err,
            PipelineError::MissingArtifact {
                stage: Stage::Forecast,
                ..
            }
        ));
    }

    #[test]
    fn feedback_extends_the_training_span() {
        let dir = tempfile::tempdir().unwrap();
        let art = run_pipeline(&quick_config(), dir.path()).unwrap();
        let next = feedback_update(&art, next_week(&art, 7, 1)).unwrap();
        assert_eq!(next.meta.parent.as_deref(), Some(art.id()));
        assert_eq!(
            next.meta.training_span.1,
            art.meta.training_span.1 + Duration::days(7)
        );
        assert_eq!(next.meta.training_span.0, art.meta.training_span.0);
        assert!(matches!(
            feedback_update(&art, Vec::new()),
            Err(PipelineError::EmptyUpdate)
        ));
    }

    #[test]
    fn feedback_rejects_gaps() {
        let dir = tempfile::tempdir().unwrap();
        let art = run_pipeline(&quick_config(), dir.path()).unwrap();
        let mut records = next_week(&art, 7, 1);
        records.retain(|r| r.date != art.meta.data_span.1 + Duration::days(1));
        let err = feedback_update(&art, records).unwrap_err();
        assert!(
            matches!(
                err,
                PipelineError::Data {
                    stage: Stage::Feedback,
                    ..
                }
            ),
            "{err}"
        );
    }

    #[test]
    fn feedback_chain_links_runs_with_increasing_spans() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = quick_config();
        cfg.feedback_window_days = Some(28);
        let mut chain = vec![run_pipeline(&cfg, dir.path()).unwrap()];
        for k in 0..3 {
            let prev = chain.last().unwrap();
            let next = feedback_update(prev, next_week(prev, 7, 10 + k)).unwrap();
            chain.push(next);
        }
        for pair in chain.windows(2) {
            assert_eq!(pair[1].meta.parent.as_deref(), Some(pair[0].id()));
            assert!(pair[1].meta.training_span.1 > pair[0].meta.training_span.1);
            // the sliding window keeps 28 days
            let (s, e) = pair[1].meta.training_span;
            assert_eq!((e - s).num_days(), 27);
        }
    }

    #[test]
    fn replaying_a_feedback_config_reproduces_its_plan() {
        let dir = tempfile::tempdir().unwrap();
        let art = run_pipeline(&quick_config(), dir.path()).unwrap();
        let next = feedback_update(&art, next_week(&art, 7, 3)).unwrap();
        let cfg = PipelineConfig::load(next.dir.config_path()).unwrap();
        let replay = run_pipeline(&cfg, tempfile::tempdir().unwrap().path()).unwrap();
        assert_eq!(replay.plan, next.plan);
    }

    #[test]
    fn empty_scenario_reproduces_the_base_plan() {
        let dir = tempfile::tempdir().unwrap();
        let base = run_pipeline(&quick_config(), dir.path()).unwrap();
        let sc = run_scenario(&base.dir, &ScenarioOverride::default(), |_, _| {}).unwrap();
        assert_eq!(sc.plan, base.plan);
        assert_eq!(sc.meta.parent.as_deref(), Some(base.id()));
        assert_eq!(sc.meta.scenario, Some(ScenarioOverride::default()));
        assert_eq!(sc.bundles, base.bundles);
    }

    #[test]
    fn margin_override_shifts_cost_plus_prices_by_variable_cost() {
        let dir = tempfile::tempdir().unwrap();
        let base = run_pipeline(&quick_config(), dir.path()).unwrap();
        let run = |m: f64| {
            let ov = ScenarioOverride {
                profit_margin: Some(m),
                max_iters: Some(2),
                ..ScenarioOverride::default()
            };
            run_scenario(&base.dir, &ov, |_, _| {}).unwrap()
        };
        let (a, b) = (run(0.0), run(0.5));
        for c in 0..2 {
            let v = a.inputs.problem.costs[c].variable_cost;
            let diff = b.inputs.cost_plus_prices[c] - a.inputs.cost_plus_prices[c];
            assert!((diff - 0.5 * v).abs() <= 1e-12 * v.max(1.0));
        }
    }

    #[test]
    fn scenario_overrides_are_validated() {
        let dir = tempfile::tempdir().unwrap();
        let base = run_pipeline(&quick_config(), dir.path()).unwrap();
        let cat = base.meta.categories[0].clone();
        let bad = [
            ScenarioOverride {
                price_bands: [(cat.clone(), (3.0, 2.0))].into(),
                ..ScenarioOverride::default()
            },
            ScenarioOverride {
                price_bands: [("nope".to_string(), (1.0, 2.0))].into(),
                ..ScenarioOverride::default()
            },
            ScenarioOverride {
                profit_margin: Some(-0.1),
                ..ScenarioOverride::default()
            },
        ];
        for ov in bad {
            let err = run_scenario(&base.dir, &ov, |_, _| {}).unwrap_err();
            assert!(matches!(
                err,
                PipelineError::Config {
                    stage: Stage::Scenario,
                    ..
                }
            ));
        }
        assert!(serde_json::from_str::<ScenarioOverride>(r#"{"margin": 1}"#).is_err());
    }

    #[test]
    fn band_override_moves_prices() {
        let dir = tempfile::tempdir().unwrap();
        let base = run_pipeline(&quick_config(), dir.path()).unwrap();
        let cat = base.meta.categories[1].clone();
        let ov = ScenarioOverride {
            price_bands: [(cat, (9.0, 9.5))].into(),
            inventory_caps: [(base.meta.categories[0].clone(), CapSpec::Uniform(5.0))].into(),
            ..ScenarioOverride::default()
        };
        let sc = run_scenario(&base.dir, &ov, |_, _| {}).unwrap();
        assert!(sc.plan.cells[1]
            .iter()
            .all(|c| (9.0..=9.5).contains(&c.price)));
        assert_eq!(
            sc.inputs.problem.constraints.inventory_caps[0],
            Some(vec![5.0; 7])
        );
        let replay = PipelineConfig::load(sc.dir.config_path()).unwrap();
        assert_eq!(replay.constraints.price_bands.len(), 1);
    }

    fn single_cell(
        slope: f64,
        intercept: f64,
        wholesale: f64,
        s: f64,
        band: (f64, f64),
    ) -> PricingProblem {
        PricingProblem::new(
            PlanLayout::new(vec!["a".into()], 1),
            &[DemandModel::new("a", slope, intercept)],
            &[CostModel {
                category: "a".into(),
                fixed_cost: wholesale,
                variable_cost: 0.0,
                profit_margin: 0.0,
            }],
            vec![vec![s]],
            Constraints {
                price_bands: vec![band],
                inventory_caps: vec![None],
                penalty_coefficient: DEFAULT_PENALTY,
            },
        )
        .unwrap()
    }

    #[test]
    fn oracle_matches_enumeration_on_one_cell() {
        let p = single_cell(-3.17, 69.74, 9.0, 0.1, (10.0, 20.0));
        let (plan, profit) = oracle_best_plan(&p, 100).unwrap();
        // independent enumeration with qty at demand
        let mut best = f64::NEG_INFINITY;
        for k in 0..100 {
            let price = 10.0 + 10.0 * k as f64 / 99.0;
            let d = (-3.17 * price + 69.74f64).max(0.0);
            best = best.max(price * d * 0.9 - 9.0 * d);
        }
        assert!((profit - best).abs() <= 1e-9, "{profit} vs {best}");
        assert_eq!(plan.projected_profit, profit);
    }

    #[test]
    fn oracle_price_is_within_a_grid_step_of_the_vertex() {
        let dm = DemandModel::new("a", -1.25, 37.87);
        let p = single_cell(-1.25, 37.87, 8.0, 0.05, (8.0, 30.0));
        let grid = 200;
        let (plan, _) = oracle_best_plan(&p, grid).unwrap();
        let vertex = vertex_price(&dm, 8.0, 0.05).unwrap();
        let step = 22.0 / (grid - 1) as f64;
        assert!((plan.cells[0][0].price - vertex).abs() <= step);
    }

    #[test]
    fn oracle_quantity_is_locally_optimal() {
        let p = single_cell(-3.17, 69.74, 9.0, 0.1, (10.0, 20.0));
        let (plan, profit) = oracle_best_plan(&p, 50).unwrap();
        let cell = plan.cells[0][0];
        for dq in [-1.0, 1.0] {
            let moved = PlanCell {
                qty: (cell.qty + dq).max(0.0),
                ..cell
            };
            assert!(p.cell_outcome(0, 0, moved).profit <= profit);
        }
    }

    #[test]
    fn oracle_refuses_huge_grids() {
        let p = single_cell(-1.0, 10.0, 1.0, 0.0, (1.0, 5.0));
        assert!(matches!(
            oracle_best_plan(&p, ORACLE_LIMIT + 1),
            Err(PipelineError::OracleTooLarge { .. })
        ));
        assert!(oracle_best_plan(&p, 1).is_err());
    }

    #[test]
    fn unprofitable_cells_are_left_empty() {
        // wholesale above any attainable price
        let p = single_cell(-1.0, 10.0, 50.0, 0.0, (1.0, 5.0));
        let (plan, profit) = oracle_best_plan(&p, 20).unwrap();
        assert_eq!(plan.cells[0][0].qty, 0.0);
        assert_eq!(profit, 0.0);
    }

    #[test]
    fn unknown_runs_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            RunDir::open(dir.path(), "run-x"),
            Err(PipelineError::UnknownRun { .. })
        ));
        assert!(RunDir::open(dir.path(), "../etc").is_err());
        assert!(latest_run(dir.path()).unwrap().is_none());
    }
}
