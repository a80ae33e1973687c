//! Cost-plus pricing, demand regression and the plan profit model.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::SCHEMA_VERSION;

#[derive(Debug, Error, PartialEq)]
pub enum PricingError {
    #[error("weighted loss rate undefined: total volume is zero")]
    ZeroVolume,
    #[error("demand slope undefined: {0}")]
    DegenerateFit(String),
    #[error("no model for category `{0}`")]
    MissingModel(String),
    #[error("plan shape mismatch: {0}")]
    Shape(String),
    #[error("invalid input: {0}")]
    Invalid(String),
}

/// `sum(volume * spoilage) / sum(volume)` over `(volume, spoilage)` pairs.
pub fn weighted_loss_rate(records: &[(f64, f64)]) -> Result<f64, PricingError> {
    if records.is_empty() {
        return Err(PricingError::Invalid("no records".into()));
    }
    let total: f64 = records.iter().map(|(v, _)| v).sum();
    if total <= 0.0 {
        return Err(PricingError::ZeroVolume);
    }
    Ok(records.iter().map(|(v, s)| (v / total) * s).sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub category: String,
    /// Wholesale cost per LB.
    pub fixed_cost: f64,
    /// Spoilage- and discount-driven cost per LB.
    pub variable_cost: f64,
    pub profit_margin: f64,
}

impl CostModel {
    /// Variable cost from the weighted loss rate: the wholesale value of
    /// goods lost, spread over goods sold, `wholesale * l / (1 - l)`.
    pub fn from_loss_rate(
        category: &str,
        wholesale: f64,
        loss_rate: f64,
        profit_margin: f64,
    ) -> Result<Self, PricingError> {
        if !(0.0..1.0).contains(&loss_rate) {
            return Err(PricingError::Invalid(format!(
                "loss rate must lie in [0, 1), got {loss_rate}"
            )));
        }
        let cm = Self {
            category: category.to_string(),
            fixed_cost: wholesale,
            variable_cost: wholesale * loss_rate / (1.0 - loss_rate),
            profit_margin,
        };
        cm.validate()?;
        Ok(cm)
    }

    pub fn validate(&self) -> Result<(), PricingError> {
        if !(self.fixed_cost > 0.0 && self.variable_cost >= 0.0 && self.profit_margin >= 0.0) {
            return Err(PricingError::Invalid(format!(
                "cost model for `{}` needs fixed > 0, variable >= 0, margin >= 0",
                self.category
            )));
        }
        Ok(())
    }
}

/// Fixed cost plus marked-up variable cost.
pub fn cost_plus_price(cm: &CostModel) -> f64 {
    cm.fixed_cost + cm.variable_cost * cm.profit_margin
}

/// Linear price-to-volume relationship.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandModel {
    pub category: String,
    pub slope: f64,
    pub intercept: f64,
    /// `None` when the observed volumes are constant.
    pub r_squared: Option<f64>,
    pub n_points: usize,
}

impl DemandModel {
    pub fn new(category: &str, slope: f64, intercept: f64) -> Self {
        Self {
            category: category.to_string(),
            slope,
            intercept,
            r_squared: None,
            n_points: 0,
        }
    }

    /// Price at which predicted demand reaches zero.
    pub fn zero_crossing(&self) -> Option<f64> {
        (self.slope < 0.0).then(|| self.intercept / -self.slope)
    }
}

/// Ordinary least squares fit of `volume = slope * price + intercept`.
pub fn fit_demand(category: &str, points: &[(f64, f64)]) -> Result<DemandModel, PricingError> {
    if points.len() < 2 {
        return Err(PricingError::DegenerateFit("need at least 2 points".into()));
    }
    let n = points.len() as f64;
    let mp = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mv = points.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut spp, mut spv, mut svv) = (0.0, 0.0, 0.0);
    for &(p, v) in points {
        spp += (p - mp) * (p - mp);
        spv += (p - mp) * (v - mv);
        svv += (v - mv) * (v - mv);
    }
    if spp == 0.0 {
        return Err(PricingError::DegenerateFit(
            "all prices are identical".into(),
        ));
    }
    let slope = spv / spp;
    let intercept = mv - slope * mp;
    let r_squared = (svv > 0.0).then(|| {
        let ss_res: f64 = points
            .iter()
            .map(|&(p, v)| (v - slope * p - intercept).powi(2))
            .sum();
        (1.0 - ss_res / svv).clamp(0.0, 1.0)
    });
    Ok(DemandModel {
        category: category.to_string(),
        slope,
        intercept,
        r_squared,
        n_points: points.len(),
    })
}

/// Predicted volume at `price`, floored at zero.
pub fn expected_sales(dm: &DemandModel, price: f64) -> f64 {
    (dm.slope * price + dm.intercept).max(0.0)
}

/// Maps plans to flat optimizer vectors: category-major, day-minor, price
/// before quantity. Element `2 * (c * days + d)` is the price of category
/// `c` on day `d`; the next element is its quantity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanLayout {
    pub categories: Vec<String>,
    pub days: usize,
}

impl PlanLayout {
    pub fn new(categories: Vec<String>, days: usize) -> Self {
        Self { categories, days }
    }

    pub fn len(&self) -> usize {
        2 * self.categories.len() * self.days
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn price_index(&self, c: usize, d: usize) -> usize {
        2 * (c * self.days + d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanCell {
    pub price: f64,
    pub qty: f64,
}

/// Signed distance to one constraint's boundary; negative means violated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slack {
    pub category: String,
    /// 1-based day.
    pub day: usize,
    pub constraint: String,
    pub slack: f64,
}

/// Per-cell economics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellOutcome {
    pub sellable: f64,
    pub waste: f64,
    pub revenue: f64,
    pub cost: f64,
    pub profit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfitReport {
    /// Profit before penalties.
    pub raw_profit: f64,
    pub penalty: f64,
    /// `raw_profit - penalty`.
    pub fitness: f64,
    /// `[category][day]`.
    pub cells: Vec<Vec<CellOutcome>>,
    pub slacks: Vec<Slack>,
}

impl ProfitReport {
    pub fn feasible(&self) -> bool {
        self.slacks.iter().all(|s| s.slack >= 0.0)
    }

    pub fn daily_profit(&self, c: usize) -> Vec<f64> {
        self.cells[c].iter().map(|o| o.profit).collect()
    }
}

/// A pricing and replenishment schedule. `cells[c][d]` is category `c` on
/// day `d + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub schema_version: u32,
    pub layout: PlanLayout,
    pub cells: Vec<Vec<PlanCell>>,
    pub projected_profit: f64,
    pub penalized_fitness: f64,
    pub feasible: bool,
    pub report: ProfitReport,
}

impl Plan {
    /// Builds a plan from raw cells and scores it, so its aggregates always
    /// match its cells.
    pub fn scored(
        layout: PlanLayout,
        cells: Vec<Vec<PlanCell>>,
        problem: &PricingProblem,
    ) -> Result<Plan, PricingError> {
        let report = problem.evaluate_cells(&cells)?;
        Ok(Plan {
            schema_version: SCHEMA_VERSION,
            layout,
            cells,
            projected_profit: report.raw_profit,
            penalized_fitness: report.fitness,
            feasible: report.feasible(),
            report,
        })
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["category", "day", "price", "qty", "profit"])?;
        for (c, cat) in self.layout.categories.iter().enumerate() {
            for (d, cell) in self.cells[c].iter().enumerate() {
                w.write_record([
                    cat.clone(),
                    (d + 1).to_string(),
                    cell.price.to_string(),
                    cell.qty.to_string(),
                    self.report.cells[c][d].profit.to_string(),
                ])?;
            }
        }
        w.flush()
    }
}

pub fn plan_from_vector(
    x: &[f64],
    layout: &PlanLayout,
) -> Result<Vec<Vec<PlanCell>>, PricingError> {
    if x.len() != layout.len() {
        return Err(PricingError::Shape(format!(
            "vector has {} entries, layout needs {}",
            x.len(),
            layout.len()
        )));
    }
    Ok((0..layout.categories.len())
        .map(|c| {
            (0..layout.days)
                .map(|d| {
                    let i = layout.price_index(c, d);
                    PlanCell {
                        price: x[i],
                        qty: x[i + 1],
                    }
                })
                .collect()
        })
        .collect())
}

pub fn vector_from_plan(cells: &[Vec<PlanCell>]) -> Vec<f64> {
    cells
        .iter()
        .flatten()
        .flat_map(|c| [c.price, c.qty])
        .collect()
}

/// Market price band and inventory cap per category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraints {
    /// `(p_min, p_max)` per category, in layout order.
    pub price_bands: Vec<(f64, f64)>,
    /// Daily cap per category and day; `None` leaves quantity uncapped.
    pub inventory_caps: Vec<Option<Vec<f64>>>,
    pub penalty_coefficient: f64,
}

impl Constraints {
    pub fn validate(&self, layout: &PlanLayout) -> Result<(), PricingError> {
        let n = layout.categories.len();
        if self.price_bands.len() != n || self.inventory_caps.len() != n {
            return Err(PricingError::Shape(
                "constraints must cover every category".into(),
            ));
        }
        for (cat, &(lo, hi)) in layout.categories.iter().zip(&self.price_bands) {
            if !(lo > 0.0 && lo < hi) {
                return Err(PricingError::Invalid(format!(
                    "price band for `{cat}` needs 0 < p_min < p_max"
                )));
            }
        }
        for caps in self.inventory_caps.iter().flatten() {
            if caps.len() != layout.days || caps.iter().any(|c| !(*c >= 0.0)) {
                return Err(PricingError::Invalid(
                    "inventory caps need one nonnegative entry per day".into(),
                ));
            }
        }
        if !(self.penalty_coefficient >= 0.0) {
            return Err(PricingError::Invalid(
                "penalty_coefficient must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

pub const DEFAULT_PENALTY: f64 = 1e4;

/// Everything needed to score a plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PricingProblem {
    pub layout: PlanLayout,
    pub demand: Vec<DemandModel>,
    pub costs: Vec<CostModel>,
    /// Spoilage fraction per category and day.
    pub spoilage: Vec<Vec<f64>>,
    pub constraints: Constraints,
}

impl PricingProblem {
    /// Orders models by the layout's categories and checks shapes.
    pub fn new(
        layout: PlanLayout,
        demand: &[DemandModel],
        costs: &[CostModel],
        spoilage: Vec<Vec<f64>>,
        constraints: Constraints,
    ) -> Result<Self, PricingError> {
        let find = |cat: &str| -> Result<(DemandModel, CostModel), PricingError> {
            let d = demand
                .iter()
                .find(|m| m.category == cat)
                .ok_or_else(|| PricingError::MissingModel(cat.to_string()))?;
            let c = costs
                .iter()
                .find(|m| m.category == cat)
                .ok_or_else(|| PricingError::MissingModel(cat.to_string()))?;
            Ok((d.clone(), c.clone()))
        };
        let (demand, costs): (Vec<_>, Vec<_>) = layout
            .categories
            .iter()
            .map(|c| find(c))
            .collect::<Result<Vec<_>, _>>()?
            .into_iter()
            .unzip();
        if spoilage.len() != layout.categories.len()
            || spoilage.iter().any(|s| s.len() != layout.days)
        {
            return Err(PricingError::Shape(
                "spoilage must be categories x days".into(),
            ));
        }
        if spoilage.iter().flatten().any(|s| !(0.0..=1.0).contains(s)) {
            return Err(PricingError::Invalid("spoilage must lie in [0, 1]".into()));
        }
        constraints.validate(&layout)?;
        for c in &costs {
            c.validate()?;
        }
        Ok(Self {
            layout,
            demand,
            costs,
            spoilage,
            constraints,
        })
    }

    pub fn cell_outcome(&self, c: usize, d: usize, cell: PlanCell) -> CellOutcome {
        let demand = expected_sales(&self.demand[c], cell.price);
        let sellable = cell.qty.min(demand).max(0.0);
        let revenue = cell.price * sellable * (1.0 - self.spoilage[c][d]);
        let cost = self.costs[c].fixed_cost * cell.qty;
        CellOutcome {
            sellable,
            waste: cell.qty - sellable,
            revenue,
            cost,
            profit: revenue - cost,
        }
    }

    pub fn evaluate_cells(&self, cells: &[Vec<PlanCell>]) -> Result<ProfitReport, PricingError> {
        let (nc, nd) = (self.layout.categories.len(), self.layout.days);
        if cells.len() != nc || cells.iter().any(|r| r.len() != nd) {
            return Err(PricingError::Shape(format!("plan must be {nc} x {nd}")));
        }
        let mut raw_profit = 0.0;
        let mut violation = 0.0;
        let mut slacks = Vec::with_capacity(nc * nd * 4);
        let mut outcomes = Vec::with_capacity(nc);
        for (c, row) in cells.iter().enumerate() {
            let cat = &self.layout.categories[c];
            let (lo, hi) = self.constraints.price_bands[c];
            let mut out_row = Vec::with_capacity(nd);
            for (d, &cell) in row.iter().enumerate() {
                let o = self.cell_outcome(c, d, cell);
                raw_profit += o.profit;
                out_row.push(o);
                let mut push = |name: &str, slack: f64| {
                    if slack < 0.0 {
                        violation += -slack;
                    }
                    slacks.push(Slack {
                        category: cat.clone(),
                        day: d + 1,
                        constraint: name.to_string(),
                        slack,
                    });
                };
                push("price_min", cell.price - lo);
                push("price_max", hi - cell.price);
                push("qty_nonnegative", cell.qty);
                if let Some(caps) = &self.constraints.inventory_caps[c] {
                    push("inventory_cap", caps[d] - cell.qty);
                }
            }
            outcomes.push(out_row);
        }
        let penalty = self.constraints.penalty_coefficient * violation;
        Ok(ProfitReport {
            raw_profit,
            penalty,
            fitness: raw_profit - penalty,
            cells: outcomes,
            slacks,
        })
    }

    /// Penalized fitness of a flat vector; the swarm's objective.
    pub fn fitness(&self, x: &[f64]) -> f64 {
        match plan_from_vector(x, &self.layout).and_then(|cells| self.evaluate_cells(&cells)) {
            Ok(r) => r.fitness,
            Err(_) => f64::NAN,
        }
    }

    pub fn plan_from_vector(&self, x: &[f64]) -> Result<Plan, PricingError> {
        let cells = plan_from_vector(x, &self.layout)?;
        Plan::scored(self.layout.clone(), cells, self)
    }

    /// Swarm search box: prices within their band, quantities from zero to
    /// 1.25x the largest demand in the band (so caps can be overshot).
    pub fn search_bounds(&self) -> Vec<(f64, f64)> {
        let mut bounds = Vec::with_capacity(self.layout.len());
        for c in 0..self.layout.categories.len() {
            let (lo, hi) = self.constraints.price_bands[c];
            let peak = expected_sales(&self.demand[c], lo).max(expected_sales(&self.demand[c], hi));
            let q_hi = (1.25 * peak).max(1.0);
            for _ in 0..self.layout.days {
                bounds.push((lo, hi));
                bounds.push((0.0, q_hi));
            }
        }
        bounds
    }

    /// Best stocking level for a fixed price: expected demand (capped) when
    /// each unit sold earns more than its wholesale cost, otherwise nothing.
    pub fn best_qty(&self, c: usize, d: usize, price: f64) -> f64 {
        let unit_margin = price * (1.0 - self.spoilage[c][d]) - self.costs[c].fixed_cost;
        if unit_margin <= 0.0 {
            return 0.0;
        }
        let demand = expected_sales(&self.demand[c], price);
        match &self.constraints.inventory_caps[c] {
            Some(caps) => demand.min(caps[d]),
            None => demand,
        }
    }

    /// Cost-plus prices per category, before clipping into the band.
    pub fn cost_plus_prices(&self) -> Vec<f64> {
        self.costs.iter().map(cost_plus_price).collect()
    }

    /// The cost-plus reference plan: cost-plus price clipped into the
    /// band, stocked at the best quantity for that price.
    pub fn baseline_plan(&self) -> Result<Plan, PricingError> {
        let prices = self.cost_plus_prices();
        let cells = (0..self.layout.categories.len())
            .map(|c| {
                let (lo, hi) = self.constraints.price_bands[c];
                let price = prices[c].clamp(lo, hi);
                (0..self.layout.days)
                    .map(|d| PlanCell {
                        price,
                        qty: self.best_qty(c, d, price),
                    })
                    .collect()
            })
            .collect();
        Plan::scored(self.layout.clone(), cells, self)
    }
}
