//! One labeling round: sampling, sentinel injection, AI errors, human correction, payments.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::design::{PaymentRule, SamplingDesign};
use crate::effort::EffortModel;
use crate::error::{domain, Result};
use crate::payment::CostMode;
use crate::rng::KeyedRng;

/// Draw indices within an instance's random stream.
const DRAW_SAMPLE: u64 = 0;
const DRAW_REGULAR: u64 = 1;
const DRAW_AI: u64 = 2;
const DRAW_CORRECT: u64 = 3;

/// What happened to one instance in a round.
///
/// `ai_output` is the assistant's own output for the instance (drawn for every
/// instance, sampled or not); it plays the role of `f(X)` downstream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelOutcome {
    pub id: u64,
    pub sampled: bool,
    pub regular: bool,
    pub label: Option<f64>,
    pub ai_output: f64,
    pub bonus_paid: f64,
    pub base_paid: f64,
    pub reward_paid: f64,
    pub effort_used: f64,
}

impl LabelOutcome {
    pub fn is_sentinel(&self) -> bool {
        self.sampled && !self.regular
    }

    pub fn total_paid(&self) -> f64 {
        self.bonus_paid + self.base_paid + self.reward_paid
    }
}

/// Simulates one round under `design`.
///
/// Agents exert the efforts recorded in the design. Outcomes depend only on
/// `(seed, instance id)`, so the result does not depend on scheduling.
pub fn simulate_round(
    dataset: &Dataset,
    design: &SamplingDesign,
    model: &EffortModel,
    seed: u64,
) -> Result<Vec<LabelOutcome>> {
    if design.len() != dataset.len() || design.efforts.len() != dataset.len() {
        return domain(format!(
            "design covers {} instances, dataset has {}",
            design.len(),
            dataset.len()
        ));
    }
    if let PaymentRule::Accuracy { rewards, .. } = &design.payment {
        if rewards.len() != dataset.len() {
            return domain("reward vector does not cover the dataset");
        }
    }
    let rho = design.rho();
    let outcomes = dataset
        .instances
        .par_iter()
        .enumerate()
        .map(|(i, inst)| {
            let mut rng = KeyedRng::new(seed, inst.id);
            let sampled = rng.uniform_at(DRAW_SAMPLE) < design.pi[i];
            let regular = sampled && rng.uniform_at(DRAW_REGULAR) >= rho;
            let ai_errs = rng.uniform_at(DRAW_AI) < inst.ai_error_prob;
            let ai_output = if ai_errs { inst.y_false } else { inst.y_true };
            let effort = design.efforts[i];
            let mut out = LabelOutcome {
                id: inst.id,
                sampled,
                regular,
                label: None,
                ai_output,
                bonus_paid: 0.0,
                base_paid: 0.0,
                reward_paid: 0.0,
                effort_used: effort,
            };
            if !sampled {
                return out;
            }
            let shown = if regular { ai_output } else { inst.y_false };
            let label = if shown != inst.y_true && rng.uniform_at(DRAW_CORRECT) < model.q(effort) {
                inst.y_true
            } else {
                shown
            };
            let correct = label == inst.y_true;
            out.label = Some(label);
            match &design.payment {
                PaymentRule::Sentinel { scheme, .. } => {
                    out.base_paid = scheme.w0;
                    if !regular && correct {
                        out.bonus_paid = scheme.bonus.at(i);
                    }
                }
                PaymentRule::Accuracy { rewards, w0 } => {
                    out.base_paid = *w0;
                    if correct {
                        out.reward_paid = rewards[i];
                    }
                }
            }
            out
        })
        .collect();
    Ok(outcomes)
}

/// Total paid in a round, including the fixed sentinel overhead.
pub fn realized_cost(outcomes: &[LabelOutcome], design: &SamplingDesign) -> f64 {
    let paid: f64 = outcomes.iter().map(LabelOutcome::total_paid).sum();
    match &design.payment {
        PaymentRule::Sentinel {
            scheme,
            cost_mode: CostMode::Literal,
        } => paid + scheme.rho * scheme.k,
        PaymentRule::Sentinel {
            scheme,
            cost_mode: CostMode::PerSentinel,
        } => paid + scheme.k * outcomes.iter().filter(|o| o.is_sentinel()).count() as f64,
        PaymentRule::Accuracy { .. } => paid,
    }
}

pub fn write_outcomes_csv<W: std::io::Write>(outcomes: &[LabelOutcome], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for o in outcomes {
        w.serialize(o)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_outcomes_csv<R: std::io::Read>(input: R) -> Result<Vec<LabelOutcome>> {
    let mut r = csv::Reader::from_reader(input);
    let mut rows = Vec::new();
    for row in r.deserialize() {
        rows.push(row?);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, Instance, SyntheticConfig, TaskKind};
    use crate::design::{design_fixed_rho_b, DesignProblem};
    use crate::payment::SentinelScheme;

    fn design_with(pi: Vec<f64>, rho: f64, bonus: f64, effort: f64, k: f64) -> SamplingDesign {
        let n = pi.len();
        SamplingDesign {
            pi,
            payment: PaymentRule::Sentinel {
                scheme: SentinelScheme::constant(rho, bonus, 0.1, k).unwrap(),
                cost_mode: CostMode::Literal,
            },
            efforts: vec![effort; n],
            objective_value: 0.0,
            expected_cost: 0.0,
        }
    }

    fn flat_dataset(n: usize, p: f64) -> Dataset {
        let instances = (0..n as u64)
            .map(|id| Instance {
                id,
                prediction: 0.5,
                ai_error_prob: p,
                y_true: 1.0,
                y_false: 0.0,
                uncertainty: None,
            })
            .collect();
        Dataset::new(TaskKind::Binary, instances).unwrap()
    }

    #[test]
    fn perfect_correction_recovers_truth() {
        let ds = generate_synthetic(&SyntheticConfig::binary(200, 2.0, 2.0), 5).unwrap();
        let d = design_with(vec![1.0; 200], 1e-4, 1.0, 1.0, 0.0);
        let out = simulate_round(&ds, &d, &EffortModel::default(), 9).unwrap();
        for (o, inst) in out.iter().zip(&ds.instances) {
            assert_eq!(o.label, Some(inst.y_true));
        }
    }

    #[test]
    fn nothing_sampled_costs_only_overhead() {
        let ds = flat_dataset(50, 0.3);
        let d = design_with(vec![0.0; 50], 0.2, 1.0, 0.2, 3.0);
        let out = simulate_round(&ds, &d, &EffortModel::default(), 1).unwrap();
        assert!(out
            .iter()
            .all(|o| !o.sampled && !o.regular && o.label.is_none()));
        assert!((realized_cost(&out, &d) - 0.6).abs() < 1e-15);
    }

    #[test]
    fn zero_bonus_pays_no_bonus() {
        let ds = flat_dataset(500, 0.3);
        let d = design_with(vec![1.0; 500], 0.3, 0.0, 0.5, 0.0);
        let out = simulate_round(&ds, &d, &EffortModel::default(), 2).unwrap();
        assert!(out.iter().all(|o| o.bonus_paid == 0.0));
    }

    #[test]
    fn regular_label_accuracy() {
        let n = 200_000;
        let ds = flat_dataset(n, 0.2);
        let d = design_with(vec![1.0; n], 0.05, 1.0, 0.5, 0.0);
        let out = simulate_round(&ds, &d, &EffortModel::default(), 3).unwrap();
        let reg: Vec<_> = out.iter().filter(|o| o.regular).collect();
        let acc = reg.iter().filter(|o| o.label == Some(1.0)).count() as f64 / reg.len() as f64;
        assert!((acc - 0.9).abs() < 0.005, "accuracy {acc}");
    }

    #[test]
    fn realized_cost_tracks_expected_cost() {
        let ds = generate_synthetic(&SyntheticConfig::binary(100, 2.0, 2.0), 8).unwrap();
        let tau: Vec<f64> = ds
            .instances
            .iter()
            .map(|i| i.prediction * (1.0 - i.prediction))
            .collect();
        let p = DesignProblem::new(tau, 5.0, 0.05, 2.0, EffortModel::default()).unwrap();
        let d = design_fixed_rho_b(&p, 0.2, 2.0).unwrap();
        let rounds = 10_000;
        let costs: Vec<f64> = (0..rounds)
            .map(|r| {
                realized_cost(
                    &simulate_round(&ds, &d, &EffortModel::default(), r).unwrap(),
                    &d,
                )
            })
            .collect();
        let mean = crate::stats::mean(&costs);
        let se = (crate::stats::sample_variance(&costs) / rounds as f64).sqrt();
        assert!(
            (mean - d.expected_cost).abs() < 3.0 * se,
            "mean {mean} expected {} se {se}",
            d.expected_cost
        );
    }

    #[test]
    fn deterministic_and_order_free() {
        let ds = generate_synthetic(&SyntheticConfig::binary(300, 1.0, 1.0), 4).unwrap();
        let d = design_with(vec![0.6; 300], 0.2, 1.0, 0.2, 0.0);
        let a = simulate_round(&ds, &d, &EffortModel::default(), 11).unwrap();
        let b = simulate_round(&ds, &d, &EffortModel::default(), 11).unwrap();
        assert_eq!(a, b);
        let mut rev = ds.clone();
        rev.instances.reverse();
        let mut dr = d.clone();
        dr.pi.reverse();
        let mut c = simulate_round(&rev, &dr, &EffortModel::default(), 11).unwrap();
        c.reverse();
        assert_eq!(a, c);
    }

    #[test]
    fn mismatched_design_rejected() {
        let ds = flat_dataset(3, 0.1);
        let d = design_with(vec![1.0; 2], 0.2, 1.0, 0.2, 0.0);
        assert!(simulate_round(&ds, &d, &EffortModel::default(), 0).is_err());
    }

    #[test]
    fn outcomes_csv_round_trip() {
        let ds = flat_dataset(20, 0.4);
        let d = design_with(vec![0.5; 20], 0.3, 1.0, 0.3, 0.0);
        let out = simulate_round(&ds, &d, &EffortModel::default(), 6).unwrap();
        let mut buf = Vec::new();
        write_outcomes_csv(&out, &mut buf).unwrap();
        assert_eq!(read_outcomes_csv(&buf[..]).unwrap(), out);
    }
}
