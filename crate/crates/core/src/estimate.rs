//! Mean and odds-ratio estimators with normal-approximation intervals.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::design::SamplingDesign;
use crate::effort::EffortModel;
use crate::error::{domain, Error, Result};
use crate::simulate::LabelOutcome;
use crate::stats::{mean, sample_variance, z_critical};

/// Smallest admissible `π·q(e)` before the inverse weight is considered degenerate.
pub const POSITIVITY_FLOOR: f64 = 1e-10;
const CLASSICAL_POLE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Sentinel-audited active estimator.
    Ours,
    /// Cost-agnostic active sampling with pinned effort.
    Active,
    /// Uniform sampling with pinned effort.
    Uniform,
    /// Symmetric-noise Horvitz-Thompson correction.
    Classical,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Ours,
        Method::Active,
        Method::Uniform,
        Method::Classical,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ours => "ours",
            Method::Active => "active",
            Method::Uniform => "uniform",
            Method::Classical => "classical",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method '{s}'")))
    }
}

/// Point estimate with its per-observation variance and interval.
///
/// `variance` is the sample variance of the influence terms, so the interval
/// half-width is `z·√(variance/n)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub method: String,
    pub point: f64,
    pub variance: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n: usize,
    pub alpha: f64,
}

impl MeanEstimate {
    fn from_terms(method: &str, terms: &[f64], alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        if terms.is_empty() {
            return domain("no observations");
        }
        let point = mean(terms);
        let variance = sample_variance(terms);
        let half = z_critical(alpha) * (variance / terms.len() as f64).sqrt();
        Ok(MeanEstimate {
            method: method.to_string(),
            point,
            variance,
            ci_low: point - half,
            ci_high: point + half,
            n: terms.len(),
            alpha,
        })
    }

    pub fn width(&self) -> f64 {
        self.ci_high - self.ci_low
    }

    pub fn covers(&self, target: f64) -> bool {
        self.ci_low <= target && target <= self.ci_high
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        domain(format!("alpha must lie in (0, 1), got {alpha}"))
    }
}

/// `f + (Y - f)·1{sampled, regular} / (keep·π·q)` per instance.
fn ipw_terms(outcomes: &[LabelOutcome], pi: &[f64], q: &[f64], keep: f64) -> Result<Vec<f64>> {
    if pi.len() != outcomes.len() || q.len() != outcomes.len() {
        return domain(format!(
            "{} outcomes for a design over {}",
            outcomes.len(),
            pi.len()
        ));
    }
    outcomes
        .iter()
        .zip(pi.iter().zip(q))
        .map(|(o, (&p, &qe))| {
            let w = keep * p * qe;
            if w < POSITIVITY_FLOOR {
                return Err(Error::Degenerate(format!(
                    "instance {} has sampling weight {w:e}",
                    o.id
                )));
            }
            if !(o.sampled && o.regular) {
                return Ok(o.ai_output);
            }
            let y = o
                .label
                .ok_or_else(|| Error::Data(format!("sampled instance {} has no label", o.id)))?;
            Ok(o.ai_output + (y - o.ai_output) / w)
        })
        .collect()
}

/// Influence terms of the sentinel-audited estimator, with plug-in efforts from the design.
pub fn influence_terms(
    outcomes: &[LabelOutcome],
    design: &SamplingDesign,
    model: &EffortModel,
) -> Result<Vec<f64>> {
    let rho = design.rho();
    if !(0.0..1.0).contains(&rho) {
        return domain(format!("auditing rate must lie in [0, 1), got {rho}"));
    }
    let q: Vec<f64> = design.efforts.iter().map(|&e| model.q(e)).collect();
    ipw_terms(outcomes, &design.pi, &q, 1.0 - rho)
}

/// Sentinel-audited active estimator of the mean label.
pub fn estimate_mean(
    outcomes: &[LabelOutcome],
    design: &SamplingDesign,
    model: &EffortModel,
    alpha: f64,
) -> Result<MeanEstimate> {
    let terms = influence_terms(outcomes, design, model)?;
    MeanEstimate::from_terms(Method::Ours.name(), &terms, alpha)
}

/// Active baseline: residuals reweighted by `1/(π·q(effort))`; labels gathered without sentinels.
pub fn estimate_mean_active_baseline(
    outcomes: &[LabelOutcome],
    pi: &[f64],
    effort: f64,
    model: &EffortModel,
    alpha: f64,
) -> Result<MeanEstimate> {
    let q = vec![model.q(effort); pi.len()];
    let terms = ipw_terms(outcomes, pi, &q, 1.0)?;
    MeanEstimate::from_terms(Method::Active.name(), &terms, alpha)
}

/// Uniform baseline: the active baseline with constant `pi_unif`.
pub fn estimate_mean_uniform(
    outcomes: &[LabelOutcome],
    pi_unif: f64,
    effort: f64,
    model: &EffortModel,
    alpha: f64,
) -> Result<MeanEstimate> {
    let pi = vec![pi_unif; outcomes.len()];
    let mut est = estimate_mean_active_baseline(outcomes, &pi, effort, model, alpha)?;
    est.method = Method::Uniform.name().into();
    Ok(est)
}

/// Horvitz-Thompson mean of labels corrected for symmetric flips with keep-probability `q(effort)`.
pub fn estimate_mean_classical(
    outcomes: &[LabelOutcome],
    pi_unif: f64,
    effort: f64,
    model: &EffortModel,
    alpha: f64,
) -> Result<MeanEstimate> {
    let q = model.q(effort);
    if (q - 0.5).abs() < CLASSICAL_POLE {
        return Err(Error::Degenerate(format!("q(e) = {q} is too close to 1/2")));
    }
    if pi_unif < POSITIVITY_FLOOR {
        return Err(Error::Degenerate(format!(
            "sampling probability {pi_unif:e}"
        )));
    }
    let terms: Vec<f64> = outcomes
        .iter()
        .map(|o| match (o.sampled, o.label) {
            (true, Some(y)) => Ok((y + q - 1.0) / (2.0 * q - 1.0) / pi_unif),
            (true, None) => Err(Error::Data(format!(
                "sampled instance {} has no label",
                o.id
            ))),
            _ => Ok(0.0),
        })
        .collect::<Result<_>>()?;
    MeanEstimate::from_terms(Method::Classical.name(), &terms, alpha)
}

/// Ratio of the odds of two independently estimated probabilities.
///
/// The interval is the delta-method interval for the log odds ratio,
/// exponentiated. In the result, `n = n_a + n_b` and `variance` is `n` times
/// the variance of the log odds ratio, so `z·√(variance/n)` is the log-scale half-width.
pub fn estimate_odds_ratio(a: &MeanEstimate, b: &MeanEstimate, alpha: f64) -> Result<MeanEstimate> {
    check_alpha(alpha)?;
    for (name, e) in [("a", a), ("b", b)] {
        if !(e.point > 0.0 && e.point < 1.0) {
            return Err(Error::Degenerate(format!(
                "group {name} probability {} is not inside (0, 1)",
                e.point
            )));
        }
    }
    let logit = |p: f64| (p / (1.0 - p)).ln();
    let log_or = logit(a.point) - logit(b.point);
    let var_log = |e: &MeanEstimate| e.variance / e.n as f64 / (e.point * (1.0 - e.point)).powi(2);
    let v = var_log(a) + var_log(b);
    let half = z_critical(alpha) * v.sqrt();
    let n = a.n + b.n;
    Ok(MeanEstimate {
        method: format!("odds_ratio({},{})", a.method, b.method),
        point: log_or.exp(),
        variance: v * n as f64,
        ci_low: (log_or - half).exp(),
        ci_high: (log_or + half).exp(),
        n,
        alpha,
    })
}

/// Exact variance of one influence term when `X` is drawn uniformly from `dataset`.
///
/// Enumerates AI error, sampling, auditing and correction events for each
/// instance under the simulator's label process, with `f` the AI's own output.
pub fn analytic_variance(
    dataset: &Dataset,
    design: &SamplingDesign,
    model: &EffortModel,
) -> Result<f64> {
    if design.len() != dataset.len() {
        return domain("design does not cover the dataset");
    }
    let keep = 1.0 - design.rho();
    let (mut m1, mut m2) = (0.0, 0.0);
    for (i, inst) in dataset.instances.iter().enumerate() {
        let (pi, q) = (design.pi[i], model.q(design.efforts[i]));
        let w = keep * pi * q;
        if w < POSITIVITY_FLOOR {
            return Err(Error::Degenerate(format!(
                "instance {} has sampling weight {w:e}",
                inst.id
            )));
        }
        for (ai_err, p_err) in [
            (false, 1.0 - inst.ai_error_prob),
            (true, inst.ai_error_prob),
        ] {
            let f = if ai_err { inst.y_false } else { inst.y_true };
            // (observed and regular, corrected) branches; anything else leaves T = f.
            let branches = [
                (1.0 - keep * pi, f),
                (
                    keep * pi * (1.0 - q),
                    if ai_err { f } else { f + (inst.y_true - f) / w },
                ),
                (keep * pi * q, f + (inst.y_true - f) / w),
            ];
            for (prob, t) in branches {
                m1 += p_err * prob * t;
                m2 += p_err * prob * t * t;
            }
        }
    }
    let n = dataset.len() as f64;
    Ok(m2 / n - (m1 / n).powi(2))
}

/// Serialized estimate with cost and design provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub method: String,
    pub point: f64,
    pub variance: f64,
    pub ci: [f64; 2],
    pub alpha: f64,
    pub n: usize,
    pub realized_cost: f64,
    pub design_digest: String,
}

impl EstimateReport {
    pub fn new(est: &MeanEstimate, realized_cost: f64, design: &SamplingDesign) -> Self {
        EstimateReport {
            method: est.method.clone(),
            point: est.point,
            variance: est.variance,
            ci: [est.ci_low, est.ci_high],
            alpha: est.alpha,
            n: est.n,
            realized_cost,
            design_digest: design.digest(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::PaymentRule;
    use crate::payment::{CostMode, SentinelScheme};

    fn outcome(id: u64, sampled: bool, regular: bool, label: Option<f64>, f: f64) -> LabelOutcome {
        LabelOutcome {
            id,
            sampled,
            regular,
            label,
            ai_output: f,
            bonus_paid: 0.0,
            base_paid: 0.0,
            reward_paid: 0.0,
            effort_used: 1.0,
        }
    }

    fn design(pi: Vec<f64>, rho: f64, effort: f64) -> SamplingDesign {
        SamplingDesign {
            efforts: vec![effort; pi.len()],
            pi,
            payment: PaymentRule::Sentinel {
                scheme: SentinelScheme::constant(rho, 1.0, 0.0, 0.0).unwrap(),
                cost_mode: CostMode::Literal,
            },
            objective_value: 0.0,
            expected_cost: 0.0,
        }
    }

    #[test]
    fn single_instance_hand_value() {
        let m = EffortModel::default();
        let out = vec![outcome(0, true, true, Some(1.0), 0.0)];
        let e = estimate_mean(&out, &design(vec![1.0], 0.5, 1.0), &m, 0.05).unwrap();
        assert_eq!(e.point, 2.0);
        assert_eq!(e.variance, 0.0);
    }

    #[test]
    fn perfect_predictor_gives_mean_of_f() {
        let m = EffortModel::default();
        let ys = [1.0, 0.0, 1.0, 1.0, 0.0];
        let out: Vec<_> = ys
            .iter()
            .enumerate()
            .map(|(i, &y)| outcome(i as u64, i % 2 == 0, i != 2, Some(y), y))
            .collect();
        let e = estimate_mean(&out, &design(vec![0.3; 5], 0.2, 0.4), &m, 0.1).unwrap();
        assert!((e.point - 0.6).abs() < 1e-15);
        assert!((e.variance - sample_variance(&ys)).abs() < 1e-15);
        assert!(e.ci_low <= e.point && e.point <= e.ci_high);
        let half = z_critical(0.1) * (e.variance / 5.0).sqrt();
        assert!((e.width() - 2.0 * half).abs() < 1e-15);
    }

    #[test]
    fn degenerate_weight_rejected() {
        let m = EffortModel::default();
        let out = vec![outcome(0, false, false, None, 0.0)];
        assert!(matches!(
            estimate_mean(&out, &design(vec![1e-12], 0.1, 0.5), &m, 0.05),
            Err(Error::Degenerate(_))
        ));
        assert!(estimate_mean(&out, &design(vec![0.5], 0.1, 0.5), &m, 1.0).is_err());
    }

    #[test]
    fn baselines() {
        let m = EffortModel::default();
        let out = vec![
            outcome(0, true, true, Some(1.0), 0.0),
            outcome(1, false, false, None, 1.0),
        ];
        let a = estimate_mean_active_baseline(&out, &[0.5, 0.5], 0.8, &m, 0.05).unwrap();
        // Residual weight 1/(0.8·0.5) = 2.5.
        assert!((a.point - (2.5 + 1.0) / 2.0).abs() < 1e-15);
        let u = estimate_mean_uniform(&out, 0.5, 0.8, &m, 0.05).unwrap();
        assert_eq!(u.point, a.point);
        assert_eq!(u.method, "uniform");
        let full = vec![
            outcome(0, true, true, Some(1.0), 0.0),
            outcome(1, true, true, Some(0.0), 1.0),
        ];
        let u1 = estimate_mean_uniform(&full, 1.0, 1.0, &m, 0.05).unwrap();
        assert!((u1.point - 0.5).abs() < 1e-15);
    }

    #[test]
    fn classical_terms() {
        let m = EffortModel::default();
        let out = vec![outcome(0, true, true, Some(1.0), 0.0)];
        let c = estimate_mean_classical(&out, 1.0, 0.8, &m, 0.05).unwrap();
        assert!((c.point - 4.0 / 3.0).abs() < 1e-12);
        let c1 = estimate_mean_classical(&out, 1.0, 1.0, &m, 0.05).unwrap();
        assert_eq!(c1.point, 1.0);
        assert!(matches!(
            estimate_mean_classical(&out, 1.0, 0.5, &m, 0.05),
            Err(Error::Degenerate(_))
        ));
    }

    fn point(p: f64) -> MeanEstimate {
        MeanEstimate {
            method: "x".into(),
            point: p,
            variance: 0.2,
            ci_low: p,
            ci_high: p,
            n: 100,
            alpha: 0.05,
        }
    }

    #[test]
    fn odds_ratio_examples() {
        let or = estimate_odds_ratio(&point(0.8), &point(0.5), 0.05).unwrap();
        assert!((or.point - 4.0).abs() < 1e-12);
        assert!(or.ci_low < 4.0 && or.ci_high > 4.0);
        let same = estimate_odds_ratio(&point(0.3), &point(0.3), 0.05).unwrap();
        assert!((same.point - 1.0).abs() < 1e-15);
        assert!(estimate_odds_ratio(&point(1.0), &point(0.5), 0.05).is_err());
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("bogus".parse::<Method>().is_err());
    }
}
