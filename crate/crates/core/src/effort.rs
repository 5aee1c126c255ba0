//! The agent's effort model and best-response problem.
//!
//! An agent picks effort `e ∈ [0, 1]`. Effort raises the probability `q(e)` of
//! catching and fixing an AI mistake, costs `c(e)`, and payments are valued
//! through a utility `μ(w)`. All three families are parametric and are checked
//! for the required shape when an [`EffortModel`] is built.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::optimize::{bisect_decreasing, golden_section_min};

const SHAPE_GRID: usize = 1000;

/// Correction probability `q(e) = e^a`, `a ∈ (0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum CorrectionFn {
    Power { a: f64 },
}

impl Default for CorrectionFn {
    fn default() -> Self {
        CorrectionFn::Power { a: 1.0 }
    }
}

impl CorrectionFn {
    pub fn value(&self, e: f64) -> f64 {
        match *self {
            CorrectionFn::Power { a } => e.powf(a),
        }
    }

    pub fn derivative(&self, e: f64) -> f64 {
        match *self {
            CorrectionFn::Power { a: 1.0 } => 1.0,
            CorrectionFn::Power { a } => {
                if e <= 0.0 {
                    f64::INFINITY
                } else {
                    a * e.powf(a - 1.0)
                }
            }
        }
    }

    fn validate_params(&self) -> Result<()> {
        match *self {
            CorrectionFn::Power { a } if a > 0.0 && a <= 1.0 => Ok(()),
            CorrectionFn::Power { a } => {
                domain(format!("correction exponent must lie in (0, 1], got {a}"))
            }
        }
    }
}

/// Effort cost `c(e) = κ·e^m / m`, `m ≥ 1`, `κ > 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum CostFn {
    Power { kappa: f64, m: f64 },
}

impl Default for CostFn {
    fn default() -> Self {
        CostFn::Power { kappa: 1.0, m: 2.0 }
    }
}

impl CostFn {
    pub fn value(&self, e: f64) -> f64 {
        match *self {
            CostFn::Power { kappa, m } => kappa * e.powf(m) / m,
        }
    }

    pub fn derivative(&self, e: f64) -> f64 {
        match *self {
            CostFn::Power { kappa, m: 1.0 } => kappa,
            CostFn::Power { kappa, m } => kappa * e.powf(m - 1.0),
        }
    }

    fn validate_params(&self) -> Result<()> {
        match *self {
            CostFn::Power { kappa, m }
                if kappa > 0.0 && m >= 1.0 && kappa.is_finite() && m.is_finite() =>
            {
                Ok(())
            }
            CostFn::Power { kappa, m } => domain(format!(
                "cost needs kappa > 0 and m >= 1, got kappa={kappa}, m={m}"
            )),
        }
    }
}

/// Utility of a payment.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum UtilityFn {
    #[default]
    Identity,
    Power {
        gamma: f64,
    },
    ShiftedLog,
}

impl UtilityFn {
    pub fn value(&self, w: f64) -> f64 {
        match *self {
            UtilityFn::Identity => w,
            UtilityFn::Power { gamma } => w.powf(gamma),
            UtilityFn::ShiftedLog => w.ln_1p(),
        }
    }

    pub fn derivative(&self, w: f64) -> f64 {
        match *self {
            UtilityFn::Identity => 1.0,
            UtilityFn::Power { gamma: 1.0 } => 1.0,
            UtilityFn::Power { gamma } => {
                if w <= 0.0 {
                    f64::INFINITY
                } else {
                    gamma * w.powf(gamma - 1.0)
                }
            }
            UtilityFn::ShiftedLog => 1.0 / (1.0 + w),
        }
    }

    fn validate_params(&self) -> Result<()> {
        match *self {
            UtilityFn::Power { gamma } if !(gamma > 0.0 && gamma <= 1.0) => {
                domain(format!("utility exponent must lie in (0, 1], got {gamma}"))
            }
            _ => Ok(()),
        }
    }
}

/// Validated `(q, c, μ)` triple.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EffortModelSpec", into = "EffortModelSpec")]
pub struct EffortModel {
    correction: CorrectionFn,
    cost: CostFn,
    utility: UtilityFn,
    max_payment: f64,
}

/// Serialized form of [`EffortModel`]; validated on conversion.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EffortModelSpec {
    #[serde(default)]
    pub correction: CorrectionFn,
    #[serde(default)]
    pub cost: CostFn,
    #[serde(default)]
    pub utility: UtilityFn,
    #[serde(default = "default_max_payment")]
    pub max_payment: f64,
}

fn default_max_payment() -> f64 {
    1.0e4
}

impl TryFrom<EffortModelSpec> for EffortModel {
    type Error = Error;
    fn try_from(s: EffortModelSpec) -> Result<Self> {
        EffortModel::new(s.correction, s.cost, s.utility, s.max_payment)
    }
}

impl From<EffortModel> for EffortModelSpec {
    fn from(m: EffortModel) -> Self {
        EffortModelSpec {
            correction: m.correction,
            cost: m.cost,
            utility: m.utility,
            max_payment: m.max_payment,
        }
    }
}

impl Default for EffortModel {
    /// Linear correction, quadratic cost, risk-neutral utility.
    fn default() -> Self {
        EffortModel {
            correction: CorrectionFn::default(),
            cost: CostFn::default(),
            utility: UtilityFn::default(),
            max_payment: default_max_payment(),
        }
    }
}

impl EffortModel {
    /// Builds a model after checking shape on a 1 000-point grid.
    ///
    /// `q` must be nondecreasing, concave, with `q(1) = 1`; `c` nondecreasing,
    /// convex, with `c(0) = 0`; `μ` strictly increasing and concave on `[0, max_payment]`.
    pub fn new(
        correction: CorrectionFn,
        cost: CostFn,
        utility: UtilityFn,
        max_payment: f64,
    ) -> Result<Self> {
        correction.validate_params()?;
        cost.validate_params()?;
        utility.validate_params()?;
        if !(max_payment > 0.0 && max_payment.is_finite()) {
            return domain(format!(
                "max_payment must be positive and finite, got {max_payment}"
            ));
        }
        let grid = |hi: f64| (0..=SHAPE_GRID).map(move |i| hi * i as f64 / SHAPE_GRID as f64);

        let qs: Vec<f64> = grid(1.0).map(|e| correction.value(e)).collect();
        check_shape("q", &qs, Monotone::NonDecreasing, Curvature::Concave)?;
        if (correction.value(1.0) - 1.0).abs() > 1e-12 {
            return domain("q(1) must equal 1");
        }

        let cs: Vec<f64> = grid(1.0).map(|e| cost.value(e)).collect();
        check_shape("c", &cs, Monotone::NonDecreasing, Curvature::Convex)?;
        if cost.value(0.0).abs() > 1e-15 {
            return domain("c(0) must equal 0");
        }

        let mus: Vec<f64> = grid(max_payment).map(|w| utility.value(w)).collect();
        check_shape("mu", &mus, Monotone::Increasing, Curvature::Concave)?;

        Ok(EffortModel {
            correction,
            cost,
            utility,
            max_payment,
        })
    }

    pub fn correction(&self) -> CorrectionFn {
        self.correction
    }

    pub fn cost_fn(&self) -> CostFn {
        self.cost
    }

    pub fn utility(&self) -> UtilityFn {
        self.utility
    }

    pub fn max_payment(&self) -> f64 {
        self.max_payment
    }

    pub fn q(&self, e: f64) -> f64 {
        self.correction.value(e)
    }

    pub fn dq(&self, e: f64) -> f64 {
        self.correction.derivative(e)
    }

    pub fn c(&self, e: f64) -> f64 {
        self.cost.value(e)
    }

    pub fn dc(&self, e: f64) -> f64 {
        self.cost.derivative(e)
    }

    pub fn mu(&self, w: f64) -> f64 {
        self.utility.value(w)
    }

    pub fn dmu(&self, w: f64) -> f64 {
        self.utility.derivative(w)
    }

    /// `q(e) = e` and `c(e) = e²/2`, the family with closed-form effort `ρμ(b)`.
    pub fn is_linear_quadratic(&self) -> bool {
        matches!(self.correction, CorrectionFn::Power { a } if a == 1.0)
            && matches!(self.cost, CostFn::Power { kappa, m } if kappa == 1.0 && m == 2.0)
    }

    pub fn is_risk_neutral(&self) -> bool {
        matches!(self.utility, UtilityFn::Identity)
            || matches!(self.utility, UtilityFn::Power { gamma } if gamma == 1.0)
    }
}

enum Monotone {
    NonDecreasing,
    Increasing,
}

enum Curvature {
    Concave,
    Convex,
}

fn check_shape(name: &str, v: &[f64], mono: Monotone, curv: Curvature) -> Result<()> {
    let scale = v.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    let eps = 1e-12 * scale;
    for (i, w) in v.windows(2).enumerate() {
        let d = w[1] - w[0];
        let ok = match mono {
            Monotone::NonDecreasing => d >= -eps,
            Monotone::Increasing => d > 0.0,
        };
        if !ok || !w[1].is_finite() {
            return domain(format!("{name} is not monotone at grid index {i}"));
        }
    }
    for (i, w) in v.windows(3).enumerate() {
        let d2 = w[2] - 2.0 * w[1] + w[0];
        let ok = match curv {
            Curvature::Concave => d2 <= eps,
            Curvature::Convex => d2 >= -eps,
        };
        if !ok {
            return domain(format!("{name} violates curvature at grid index {}", i + 1));
        }
    }
    Ok(())
}

/// Effort chosen by a rational agent facing sentinel auditing rate `rho` and bonus `bonus`.
///
/// Solves `ρ μ(b) q'(e) = c'(e)` on `[0, 1]`. When the marginal benefit still
/// exceeds the marginal cost at `e = 1` the agent saturates at full effort; when
/// it never exceeds it the agent exerts none.
pub fn sentinel_effort(rho: f64, bonus: f64, model: &EffortModel) -> Result<f64> {
    if !(0.0..1.0).contains(&rho) {
        return domain(format!("auditing rate must lie in [0, 1), got {rho}"));
    }
    if !(bonus >= 0.0 && bonus.is_finite()) {
        return domain(format!("bonus must be nonnegative and finite, got {bonus}"));
    }
    let gain = rho * model.mu(bonus);
    if gain <= 0.0 {
        return Ok(0.0);
    }
    let marginal = |e: f64| gain * model.dq(e) - model.dc(e);
    if marginal(0.0) <= 0.0 {
        return Ok(0.0);
    }
    if marginal(1.0) >= 0.0 {
        return Ok(1.0);
    }
    // Bisect to full precision; the closed-form family is checked at 1e-10.
    bisect_decreasing(marginal, 0.0, 1.0, 0.0)
}

/// Global maximizer of `payoff` on `[0, 1]`, accurate to `tolerance`.
///
/// A 1 001-point scan locates the best cell. If the scan certifies concavity the
/// cell is refined by bisection on a central-difference derivative, otherwise by
/// golden-section search. Flat payoffs resolve to the least effort.
pub fn best_response_effort<F>(mut payoff: F, tolerance: f64) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    if !(tolerance > 0.0) {
        return domain(format!("tolerance must be positive, got {tolerance}"));
    }
    const CELLS: usize = 1000;
    let step = 1.0 / CELLS as f64;
    let mut values = Vec::with_capacity(CELLS + 1);
    for i in 0..=CELLS {
        let e = i as f64 * step;
        let v = payoff(e);
        if !v.is_finite() {
            return Err(Error::Numeric(format!("payoff is not finite at e={e}")));
        }
        values.push(v);
    }
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    let lo = best.saturating_sub(1) as f64 * step;
    let hi = ((best + 1).min(CELLS)) as f64 * step;

    let scale = values.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let concave = values
        .windows(3)
        .all(|w| w[2] - 2.0 * w[1] + w[0] <= 1e-12 * scale);

    let candidate = if concave {
        let h = 1e-7;
        let mut slope = |e: f64| {
            let a = (e - h).max(0.0);
            let b = (e + h).min(1.0);
            (payoff(b) - payoff(a)) / (b - a)
        };
        if slope(lo) <= 0.0 {
            lo
        } else if slope(hi) >= 0.0 {
            hi
        } else {
            bisect_decreasing(slope, lo, hi, tolerance * 0.5)?
        }
    } else {
        golden_section_min(|e| -payoff(e), lo, hi, tolerance)?
    };

    // Prefer the cheaper endpoint of the cell when it does at least as well.
    let v = payoff(candidate);
    if payoff(lo) >= v {
        return Ok(lo);
    }
    if payoff(hi) > v {
        return Ok(hi);
    }
    Ok(candidate)
}
