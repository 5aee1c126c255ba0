//! Payment schemes: the accuracy-based status quo and sentinel auditing.
//!
//! Agent-facing payoffs, the payment a linear accuracy scheme needs to sustain a
//! target effort, and the principal's expected cost of a sentinel design.

use serde::{Deserialize, Serialize};

use crate::effort::EffortModel;
use crate::error::{check_probability, domain, Error, Result};

/// Pays `reward_per_correct` for every checked task whose output is correct.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearAccuracyPayment {
    pub reward_per_correct: f64,
    pub check_probability: f64,
}

impl LinearAccuracyPayment {
    pub fn new(reward_per_correct: f64, check_probability: f64) -> Result<Self> {
        if !(reward_per_correct >= 0.0 && reward_per_correct.is_finite()) {
            return domain(format!(
                "reward must be nonnegative, got {reward_per_correct}"
            ));
        }
        if !(check_probability > 0.0 && check_probability <= 1.0) {
            return domain(format!(
                "check probability must lie in (0, 1], got {check_probability}"
            ));
        }
        Ok(Self {
            reward_per_correct,
            check_probability,
        })
    }
}

/// Bonus paid on a correctly answered sentinel task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BonusSchedule {
    Constant(f64),
    PerInstance(Vec<f64>),
}

impl BonusSchedule {
    /// Bonus for instance `i`.
    pub fn at(&self, i: usize) -> f64 {
        match self {
            BonusSchedule::Constant(b) => *b,
            BonusSchedule::PerInstance(v) => v[i],
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            BonusSchedule::Constant(b) => *b >= 0.0 && b.is_finite(),
            BonusSchedule::PerInstance(v) => v.iter().all(|b| *b >= 0.0 && b.is_finite()),
        };
        if ok {
            Ok(())
        } else {
            domain("bonuses must be nonnegative and finite")
        }
    }
}

/// How the sentinel operational cost `k` enters the budget.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostMode {
    /// A single `ρ·k` term, independent of how many tasks are sampled.
    #[default]
    Literal,
    /// Experimental: `k` charged per sentinel task, i.e. `ρ·k` per sampled task.
    PerSentinel,
}

/// Sentinel auditing: each sampled task becomes a sentinel with probability `rho`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SentinelScheme {
    pub rho: f64,
    pub bonus: BonusSchedule,
    pub w0: f64,
    pub k: f64,
}

impl SentinelScheme {
    pub fn new(rho: f64, bonus: BonusSchedule, w0: f64, k: f64) -> Result<Self> {
        if !(rho > 0.0 && rho < 1.0) {
            return domain(format!("auditing rate must lie in (0, 1), got {rho}"));
        }
        bonus.validate()?;
        if !(w0 >= 0.0 && k >= 0.0 && w0.is_finite() && k.is_finite()) {
            return domain(format!("w0 and k must be nonnegative, got w0={w0}, k={k}"));
        }
        Ok(Self { rho, bonus, w0, k })
    }

    pub fn constant(rho: f64, bonus: f64, w0: f64, k: f64) -> Result<Self> {
        Self::new(rho, BonusSchedule::Constant(bonus), w0, k)
    }
}

/// Expected utility of effort `e` under a linear accuracy scheme when the AI errs with probability `p`.
///
/// Utility is risk-neutral here, matching the setting of the collapse result.
pub fn agent_payoff_linear(
    scheme: &LinearAccuracyPayment,
    model: &EffortModel,
    p: f64,
    e: f64,
) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return domain(format!("AI error probability must lie in (0, 1), got {p}"));
    }
    check_probability("effort", e)?;
    let p_correct = 1.0 - p + p * model.q(e);
    Ok(scheme.reward_per_correct * scheme.check_probability * p_correct - model.c(e))
}

/// Expected utility of effort `e` on a task whose sentinel bonus is `x_bonus`.
///
/// The `μ(w0)` term does not depend on effort.
pub fn agent_payoff_sentinel(
    scheme: &SentinelScheme,
    model: &EffortModel,
    x_bonus: f64,
    e: f64,
) -> Result<f64> {
    check_probability("effort", e)?;
    if !(x_bonus >= 0.0) {
        return domain(format!("bonus must be nonnegative, got {x_bonus}"));
    }
    Ok(scheme.rho * model.q(e) * model.mu(x_bonus) + model.mu(scheme.w0) - model.c(e))
}

/// Minimal linear-scheme reward sustaining effort `e_min`, and its expected payment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RequiredPayment {
    /// Per-correct reward `R*` from the binding first-order condition.
    pub reward: f64,
    /// `E[W] = R*·(1 - p + p·q(e_min))`.
    pub expected_payment: f64,
}

/// Reward a full-check linear scheme must offer so that the best response is at least `e_min`.
///
/// From `R·p·q'(e) = c'(e)` at `e = e_min`.
pub fn required_linear_payment(e_min: f64, p: f64, model: &EffortModel) -> Result<RequiredPayment> {
    if !(e_min > 0.0 && e_min < 1.0) {
        return domain(format!("target effort must lie in (0, 1), got {e_min}"));
    }
    if !(p > 0.0 && p < 1.0) {
        return domain(format!("AI error probability must lie in (0, 1), got {p}"));
    }
    let dq = model.dq(e_min);
    if dq <= 0.0 {
        return Err(Error::Infeasible(format!(
            "q'({e_min}) = 0, no reward can sustain this effort"
        )));
    }
    let reward = model.dc(e_min) / (p * dq);
    Ok(RequiredPayment {
        reward,
        expected_payment: reward * (1.0 - p + p * model.q(e_min)),
    })
}

/// One point of a collapse curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CollapsePoint {
    pub p: f64,
    pub required_payment: f64,
}

/// Expected linear-scheme payment needed to sustain `e_min` at each AI error probability.
///
/// `p_grid` must be strictly decreasing and positive.
pub fn collapse_curve(
    e_min: f64,
    model: &EffortModel,
    p_grid: &[f64],
) -> Result<Vec<CollapsePoint>> {
    if p_grid.is_empty() {
        return domain("p grid is empty");
    }
    if p_grid.windows(2).any(|w| w[1] >= w[0]) {
        return domain("p grid must be strictly decreasing");
    }
    p_grid
        .iter()
        .map(|&p| {
            required_linear_payment(e_min, p, model).map(|r| CollapsePoint {
                p,
                required_payment: r.expected_payment,
            })
        })
        .collect()
}

/// Writes a collapse curve as CSV with header `p,required_payment`.
pub fn write_collapse_csv<W: std::io::Write>(points: &[CollapsePoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["p", "required_payment"])?;
    for pt in points {
        w.write_record([pt.p.to_string(), pt.required_payment.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Principal's expected cost of a sentinel design:
/// `Σᵢ (ρ·b(Xᵢ)·q(e(Xᵢ)) + w0)·π(Xᵢ) + ρ·k`.
///
/// Under [`CostMode::PerSentinel`] the trailing term becomes `ρ·k·Σᵢ π(Xᵢ)`.
/// The AI error probability never enters.
pub fn expected_cost(
    scheme: &SentinelScheme,
    pi: &[f64],
    efforts: &[f64],
    model: &EffortModel,
    mode: CostMode,
) -> Result<f64> {
    if pi.len() != efforts.len() {
        return domain(format!(
            "pi has {} entries but efforts has {}",
            pi.len(),
            efforts.len()
        ));
    }
    if let BonusSchedule::PerInstance(b) = &scheme.bonus {
        if b.len() != pi.len() {
            return domain(format!(
                "bonus schedule has {} entries for {} instances",
                b.len(),
                pi.len()
            ));
        }
    }
    let mut total = 0.0;
    let mut mass = 0.0;
    for (i, (&p, &e)) in pi.iter().zip(efforts).enumerate() {
        check_probability("pi", p)?;
        check_probability("effort", e)?;
        total += (scheme.rho * scheme.bonus.at(i) * model.q(e) + scheme.w0) * p;
        mass += p;
    }
    Ok(match mode {
        CostMode::Literal => total + scheme.rho * scheme.k,
        CostMode::PerSentinel => total + scheme.rho * scheme.k * mass,
    })
}
