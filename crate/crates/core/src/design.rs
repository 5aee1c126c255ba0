//! Budget-constrained sampling designs.
//!
//! A design fixes per-instance query probabilities `π`, the payment rule that
//! sustains effort, and the efforts that rule implies. Sentinel designs minimize
//! the weighted objective `(1/n) Σ τᵢ / ((1 - ρ) πᵢ q(eᵢ))` under the expected
//! budget; baseline designs (uniform, cost-agnostic active) pay an accuracy-based
//! reward instead of running sentinels.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{Dataset, TaskKind};
use crate::effort::{sentinel_effort, EffortModel};
use crate::error::{domain, Error, Result};
use crate::optimize::grid_then_golden_min;
use crate::payment::{expected_cost, required_linear_payment, CostMode, SentinelScheme};

/// Distance kept from the ends of the auditing-rate interval.
pub const RHO_BRACKET_EPS: f64 = 1e-4;
/// Golden-section tolerance for auditing-rate searches.
pub const RHO_SEARCH_TOL: f64 = 1e-8;
/// Default query probability floor for instances with `τ̂ = 0`.
pub const DEFAULT_PI_MIN: f64 = 1e-4;

const RHO_GRID_CELLS: usize = 400;

/// Inputs to the sentinel design optimizers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignProblem {
    pub tau: Vec<f64>,
    pub budget: f64,
    pub w0: f64,
    pub k: f64,
    pub model: EffortModel,
    #[serde(default)]
    pub cost_mode: CostMode,
    #[serde(default = "default_pi_min")]
    pub pi_min: f64,
}

fn default_pi_min() -> f64 {
    DEFAULT_PI_MIN
}

impl DesignProblem {
    pub fn new(tau: Vec<f64>, budget: f64, w0: f64, k: f64, model: EffortModel) -> Result<Self> {
        let p = DesignProblem {
            tau,
            budget,
            w0,
            k,
            model,
            cost_mode: CostMode::Literal,
            pi_min: DEFAULT_PI_MIN,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_cost_mode(mut self, mode: CostMode) -> Self {
        self.cost_mode = mode;
        self
    }

    pub fn with_pi_min(mut self, pi_min: f64) -> Result<Self> {
        self.pi_min = pi_min;
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        if self.tau.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
            return domain("tau values must be nonnegative and finite");
        }
        if !self.tau.iter().any(|t| *t > 0.0) {
            return domain("at least one tau value must be positive");
        }
        if !(self.budget > 0.0 && self.budget.is_finite()) {
            return domain(format!("budget must be positive, got {}", self.budget));
        }
        if !(self.w0 >= 0.0 && self.k >= 0.0) {
            return domain("w0 and k must be nonnegative");
        }
        if !(self.pi_min > 0.0 && self.pi_min <= 1.0) {
            return domain(format!("pi_min must lie in (0, 1], got {}", self.pi_min));
        }
        Ok(())
    }

    /// Budget left for per-sample spending at auditing rate `rho`.
    fn available(&self, rho: f64) -> f64 {
        match self.cost_mode {
            CostMode::Literal => self.budget - rho * self.k,
            CostMode::PerSentinel => self.budget,
        }
    }

    /// Expected cost of one sampled task with bonus `bonus` and effort `effort`.
    fn unit_cost(&self, rho: f64, bonus: f64, effort: f64) -> f64 {
        let base = rho * bonus * self.model.q(effort) + self.w0;
        match self.cost_mode {
            CostMode::Literal => base,
            CostMode::PerSentinel => base + rho * self.k,
        }
    }
}

/// Payment rule attached to a design.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum PaymentRule {
    Sentinel {
        scheme: SentinelScheme,
        #[serde(default)]
        cost_mode: CostMode,
    },
    /// No sentinels; each correct label earns `rewards[i]` on top of the base payment `w0`.
    Accuracy { rewards: Vec<f64>, w0: f64 },
}

/// Query probabilities, payment rule, and implied efforts for one labeling round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingDesign {
    pub pi: Vec<f64>,
    pub payment: PaymentRule,
    pub efforts: Vec<f64>,
    pub objective_value: f64,
    pub expected_cost: f64,
}

impl SamplingDesign {
    /// Auditing rate; zero for designs without sentinels.
    pub fn rho(&self) -> f64 {
        match &self.payment {
            PaymentRule::Sentinel { scheme, .. } => scheme.rho,
            PaymentRule::Accuracy { .. } => 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.pi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pi.is_empty()
    }

    /// Short content hash of the serialized design.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).unwrap_or_default();
        let hash = Sha256::digest(&bytes);
        hash.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// Recomputes the objective after the efforts have been overridden.
    pub fn with_efforts(
        mut self,
        efforts: Vec<f64>,
        tau: &[f64],
        model: &EffortModel,
    ) -> Result<Self> {
        if efforts.len() != self.pi.len() {
            return domain("effort vector length mismatch");
        }
        self.efforts = efforts;
        self.objective_value = weighted_objective(&self, tau, model)?;
        Ok(self)
    }
}

/// `(1/n) Σᵢ τᵢ / ((1 - ρ)·πᵢ·q(eᵢ))`; instances with `τᵢ = 0` contribute nothing.
pub fn weighted_objective(
    design: &SamplingDesign,
    tau: &[f64],
    model: &EffortModel,
) -> Result<f64> {
    if tau.len() != design.pi.len() || design.efforts.len() != design.pi.len() {
        return domain(format!(
            "tau has {} entries for a design over {}",
            tau.len(),
            design.pi.len()
        ));
    }
    let keep = 1.0 - design.rho();
    let mut total = 0.0;
    for (i, ((&t, &p), &e)) in tau.iter().zip(&design.pi).zip(&design.efforts).enumerate() {
        if t == 0.0 {
            continue;
        }
        let denom = keep * p * model.q(e);
        if denom <= 0.0 {
            return Err(Error::Degenerate(format!(
                "instance {i} has tau > 0 but zero sampling weight"
            )));
        }
        total += t / denom;
    }
    Ok(total / tau.len() as f64)
}

/// Allocates `πᵢ = min(1, λ·wᵢ)` so that `Σ costᵢ·πᵢ = available`.
///
/// Zero-weight instances sit at `pi_min`. Instances hitting the cap are frozen
/// at 1 and `λ` is re-solved over the rest until no new cap binds. If every
/// weighted instance is capped the leftover budget stays unspent.
pub fn water_fill(weights: &[f64], costs: &[f64], available: f64, pi_min: f64) -> Result<Vec<f64>> {
    if weights.len() != costs.len() {
        return domain("weights and costs differ in length");
    }
    let mut pi = vec![0.0; weights.len()];
    let mut remaining = available;
    for (i, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            pi[i] = pi_min;
            remaining -= costs[i] * pi_min;
        }
    }
    if remaining <= 0.0 {
        return Err(Error::Infeasible(format!(
            "budget {available} does not cover the sampling floor"
        )));
    }
    let mut capped = vec![false; weights.len()];
    loop {
        let capped_cost: f64 = (0..weights.len())
            .filter(|&i| capped[i])
            .map(|i| costs[i])
            .sum();
        let denom: f64 = (0..weights.len())
            .filter(|&i| weights[i] > 0.0 && !capped[i])
            .map(|i| costs[i] * weights[i])
            .sum();
        let lambda = if denom > 0.0 {
            (remaining - capped_cost) / denom
        } else {
            f64::INFINITY
        };
        let mut changed = false;
        for i in 0..weights.len() {
            if weights[i] > 0.0 && !capped[i] && lambda * weights[i] >= 1.0 {
                capped[i] = true;
                changed = true;
            }
        }
        if !changed {
            for i in 0..weights.len() {
                if weights[i] > 0.0 {
                    pi[i] = if capped[i] { 1.0 } else { lambda * weights[i] };
                }
            }
            return Ok(pi);
        }
    }
}

fn sqrt_weights(tau: &[f64]) -> Vec<f64> {
    tau.iter().map(|t| t.sqrt()).collect()
}

/// Design with fixed `rho` and constant bonus `bonus`; `π ∝ √τ` with caps.
pub fn design_fixed_rho_b(problem: &DesignProblem, rho: f64, bonus: f64) -> Result<SamplingDesign> {
    let scheme = SentinelScheme::constant(rho, bonus, problem.w0, problem.k)?;
    let available = problem.available(rho);
    if available <= 0.0 {
        return Err(Error::Infeasible(format!(
            "budget {} leaves nothing for sampling after the sentinel cost {}",
            problem.budget,
            rho * problem.k
        )));
    }
    let effort = sentinel_effort(rho, bonus, &problem.model)?;
    if problem.model.q(effort) <= 0.0 {
        return Err(Error::Degenerate(format!(
            "bonus {bonus} at rho {rho} induces zero correction probability"
        )));
    }
    let n = problem.tau.len();
    let costs = vec![problem.unit_cost(rho, bonus, effort); n];
    let pi = water_fill(
        &sqrt_weights(&problem.tau),
        &costs,
        available,
        problem.pi_min,
    )?;
    let efforts = vec![effort; n];
    let cost = expected_cost(&scheme, &pi, &efforts, &problem.model, problem.cost_mode)?;
    let mut design = SamplingDesign {
        pi,
        payment: PaymentRule::Sentinel {
            scheme,
            cost_mode: problem.cost_mode,
        },
        efforts,
        objective_value: 0.0,
        expected_cost: cost,
    };
    design.objective_value = weighted_objective(&design, &problem.tau, &problem.model)?;
    Ok(design)
}

/// Upper end of the auditing-rate search interval.
fn rho_upper(problem: &DesignProblem) -> f64 {
    let mut hi = 1.0 - RHO_BRACKET_EPS;
    if problem.cost_mode == CostMode::Literal && problem.k > 0.0 {
        hi = hi.min(problem.budget / problem.k - RHO_BRACKET_EPS);
    }
    hi
}

/// Scalar criterion minimized over `rho` when the bonus is fixed and caps are ignored:
/// per-sample cost over `(1 - ρ)·q(e(ρ))·(budget left)`.
///
/// For `q(e) = e`, `c = e²/2` this is the textbook `(ρ²bμ(b) + w0) / ((1-ρ)ρ(B-ρk))` divided by `μ(b)`.
pub fn fixed_bonus_criterion(problem: &DesignProblem, rho: f64, bonus: f64) -> Result<f64> {
    let e = sentinel_effort(rho, bonus, &problem.model)?;
    let q = problem.model.q(e);
    Ok(problem.unit_cost(rho, bonus, e) / ((1.0 - rho) * q * problem.available(rho)))
}

/// Design with a constant bonus, auditing rate chosen by a 1-D search.
///
/// Requires `q(e) = e` and `c(e) = e²/2`.
pub fn design_fixed_b(problem: &DesignProblem, bonus: f64) -> Result<SamplingDesign> {
    if !problem.model.is_linear_quadratic() {
        return domain("fixed-bonus design requires linear correction and quadratic cost");
    }
    if !(bonus > 0.0 && bonus.is_finite()) {
        return domain(format!("bonus must be positive, got {bonus}"));
    }
    let lo = RHO_BRACKET_EPS;
    let hi = rho_upper(problem);
    if hi <= lo {
        return Err(Error::Infeasible(format!(
            "no auditing rate leaves budget {} for sampling",
            problem.budget
        )));
    }
    let rho = grid_then_golden_min(
        |r| fixed_bonus_criterion(problem, r, bonus).unwrap_or(f64::INFINITY),
        lo,
        hi,
        RHO_GRID_CELLS,
        RHO_SEARCH_TOL,
    )?;
    design_fixed_rho_b(problem, rho, bonus)
}

/// Closed-form auditing rate for a fixed bonus when `k` is negligible.
pub fn fixed_bonus_rho_closed_form(w0: f64, bonus: f64, model: &EffortModel) -> f64 {
    let bm = bonus * model.mu(bonus);
    (-w0 + (w0 * (w0 + bm)).sqrt()) / bm
}

/// Design with fixed `rho`, bonus `√w0/ρ`, `π ∝ √τ` spending `(B - ρk)/(2w0)` samples.
///
/// Requires linear correction, quadratic cost, risk-neutral utility, and `0 < w0 ≤ 1`.
pub fn design_fixed_rho(problem: &DesignProblem, rho: f64) -> Result<SamplingDesign> {
    if !(problem.model.is_linear_quadratic() && problem.model.is_risk_neutral()) {
        return domain(
            "fixed-rate design requires linear correction, quadratic cost and risk-neutral utility",
        );
    }
    if problem.w0 <= 0.0 {
        return domain(
            "fixed-rate design needs w0 > 0; the optimal bonus sqrt(w0)/rho degenerates",
        );
    }
    if problem.w0 > 1.0 {
        return domain(format!(
            "w0 = {} would push the induced effort sqrt(w0) above 1",
            problem.w0
        ));
    }
    if !(rho > 0.0 && rho < 1.0) {
        return domain(format!("auditing rate must lie in (0, 1), got {rho}"));
    }
    design_fixed_rho_b(problem, rho, problem.w0.sqrt() / rho)
}

/// Free `(π, ρ, b)`: fixed-rate solution at each `rho` on a grid, then golden-section refinement.
pub fn design_joint(problem: &DesignProblem) -> Result<SamplingDesign> {
    let lo = RHO_BRACKET_EPS;
    let hi = rho_upper(problem);
    if hi <= lo {
        return Err(Error::Infeasible(format!(
            "no auditing rate leaves budget {} for sampling",
            problem.budget
        )));
    }
    // Surface configuration errors before the search swallows them.
    design_fixed_rho(problem, 0.5 * (lo + hi))?;
    let rho = grid_then_golden_min(
        |r| {
            design_fixed_rho(problem, r)
                .map(|d| d.objective_value)
                .unwrap_or(f64::INFINITY)
        },
        lo,
        hi,
        RHO_GRID_CELLS,
        RHO_SEARCH_TOL,
    )?;
    design_fixed_rho(problem, rho)
}

/// How per-instance prediction error `τ̂` is obtained.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TauStrategy {
    /// The dataset's `uncertainty` column.
    Column,
    /// `p̂(1 - p̂)` for a probabilistic binary scorer.
    #[default]
    BinaryCalibrated,
    /// `p(X)·(y_true - y_false)²`, the exact value on synthetic data.
    ResidualOracle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TauEstimate {
    pub values: Vec<f64>,
    pub strategy: TauStrategy,
}

/// Per-instance `τ̂` by the chosen strategy.
pub fn estimate_tau(dataset: &Dataset, strategy: TauStrategy) -> Result<TauEstimate> {
    let values = match strategy {
        TauStrategy::Column => dataset
            .instances
            .iter()
            .map(|i| {
                i.uncertainty.ok_or_else(|| {
                    Error::Data(format!("instance {} has no uncertainty value", i.id))
                })
            })
            .collect::<Result<Vec<f64>>>()?,
        TauStrategy::BinaryCalibrated => {
            if dataset.kind != TaskKind::Binary {
                return Err(Error::Data(
                    "binary-calibrated tau needs a binary task".into(),
                ));
            }
            dataset
                .instances
                .iter()
                .map(|i| i.prediction * (1.0 - i.prediction))
                .collect()
        }
        TauStrategy::ResidualOracle => dataset
            .instances
            .iter()
            .map(|i| i.ai_error_prob * (i.y_true - i.y_false).powi(2))
            .collect(),
    };
    Ok(TauEstimate { values, strategy })
}

/// Principal's forecast of each instance's AI error probability.
///
/// For a calibrated binary scorer the output is wrong with probability
/// `2p̂(1 - p̂)`; continuous tasks carry the probability directly.
pub fn expected_error_prob(dataset: &Dataset) -> Vec<f64> {
    dataset
        .instances
        .iter()
        .map(|i| match dataset.kind {
            TaskKind::Binary => 2.0 * i.prediction * (1.0 - i.prediction),
            TaskKind::Continuous => i.ai_error_prob,
        })
        .collect()
}

/// How baseline designs pay for their pinned effort level.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum BaselinePayment {
    /// Per-correct reward from the linear-scheme first-order condition at each
    /// instance's expected AI error probability (floored at `min_error_prob`).
    Accuracy { min_error_prob: f64 },
    /// A flat fee per sampled task on top of `w0`.
    Flat { fee: f64 },
}

impl Default for BaselinePayment {
    fn default() -> Self {
        BaselinePayment::Accuracy {
            min_error_prob: 0.01,
        }
    }
}

/// Per-instance rewards and expected per-sample costs of a baseline payment rule.
#[derive(Clone, Debug, PartialEq)]
pub struct BaselineCosts {
    pub rewards: Vec<f64>,
    pub unit_costs: Vec<f64>,
    pub w0: f64,
    pub effort: f64,
}

/// Prices a pinned effort `effort` under `rule`.
///
/// `expected_error` is the principal's forecast of each instance's AI error
/// probability (it cannot condition on the unknown label).
pub fn baseline_costs(
    expected_error: &[f64],
    effort: f64,
    w0: f64,
    rule: BaselinePayment,
    model: &EffortModel,
) -> Result<BaselineCosts> {
    if !(effort > 0.0 && effort <= 1.0) {
        return domain(format!("baseline effort must lie in (0, 1], got {effort}"));
    }
    let q = model.q(effort);
    let (rewards, unit_costs) = match rule {
        BaselinePayment::Accuracy { min_error_prob } => {
            if !(min_error_prob > 0.0 && min_error_prob < 1.0) {
                return domain("min_error_prob must lie in (0, 1)");
            }
            // Pinned effort 1 has no interior first-order condition; price it just below.
            let e_price = effort.min(1.0 - 1e-9);
            let mut rewards = Vec::with_capacity(expected_error.len());
            let mut costs = Vec::with_capacity(expected_error.len());
            for &p in expected_error {
                let p = p.clamp(min_error_prob, 1.0 - 1e-9);
                let r = required_linear_payment(e_price, p, model)?;
                rewards.push(r.reward);
                costs.push(w0 + r.reward * (1.0 - p + p * q));
            }
            (rewards, costs)
        }
        BaselinePayment::Flat { fee } => {
            if !(fee >= 0.0) {
                return domain("flat fee must be nonnegative");
            }
            (
                vec![0.0; expected_error.len()],
                vec![w0 + fee; expected_error.len()],
            )
        }
    };
    let w0 = match rule {
        BaselinePayment::Flat { fee } => w0 + fee,
        BaselinePayment::Accuracy { .. } => w0,
    };
    Ok(BaselineCosts {
        rewards,
        unit_costs,
        w0,
        effort,
    })
}

fn baseline_design(
    pi: Vec<f64>,
    costs: &BaselineCosts,
    tau: &[f64],
    model: &EffortModel,
) -> Result<SamplingDesign> {
    let expected_cost = pi.iter().zip(&costs.unit_costs).map(|(p, c)| p * c).sum();
    let mut design = SamplingDesign {
        efforts: vec![costs.effort; pi.len()],
        pi,
        payment: PaymentRule::Accuracy {
            rewards: costs.rewards.clone(),
            w0: costs.w0,
        },
        objective_value: 0.0,
        expected_cost,
    };
    design.objective_value = weighted_objective(&design, tau, model)?;
    Ok(design)
}

/// Constant query probability spending the whole budget (capped at 1).
pub fn uniform_probability(costs: &BaselineCosts, budget: f64) -> Result<f64> {
    let total: f64 = costs.unit_costs.iter().sum();
    if !(budget > 0.0) {
        return Err(Error::Infeasible("budget must be positive".into()));
    }
    Ok(if total > 0.0 {
        (budget / total).min(1.0)
    } else {
        1.0
    })
}

/// Uniform-sampling baseline design.
pub fn uniform_design(
    costs: &BaselineCosts,
    budget: f64,
    tau: &[f64],
    model: &EffortModel,
) -> Result<SamplingDesign> {
    let p = uniform_probability(costs, budget)?;
    baseline_design(vec![p; costs.unit_costs.len()], costs, tau, model)
}

/// Cost-agnostic active baseline: `π ∝ √τ̂` spending the budget, mixed with the
/// uniform design by weight `tau_mix` (`0` is purely active, `1` purely uniform).
pub fn active_design(
    costs: &BaselineCosts,
    budget: f64,
    tau: &[f64],
    tau_mix: f64,
    pi_min: f64,
    model: &EffortModel,
) -> Result<SamplingDesign> {
    if !(0.0..=1.0).contains(&tau_mix) {
        return domain(format!("tau_mix must lie in [0, 1], got {tau_mix}"));
    }
    let active = water_fill(&sqrt_weights(tau), &costs.unit_costs, budget, pi_min)?;
    let unif = uniform_probability(costs, budget)?;
    let pi = active
        .iter()
        .map(|a| (1.0 - tau_mix) * a + tau_mix * unif)
        .collect();
    baseline_design(pi, costs, tau, model)
}
