//! Theory-verification suites with measured statistics.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{generate_synthetic, Calibration, Dataset, Instance, SyntheticConfig, TaskKind};
use crate::design::{
    active_design, baseline_costs, design_fixed_b, design_fixed_rho, design_fixed_rho_b,
    estimate_tau, fixed_bonus_criterion, fixed_bonus_rho_closed_form, uniform_design,
    weighted_objective, BaselinePayment, DesignProblem, PaymentRule, SamplingDesign, TauStrategy,
};
use crate::effort::{sentinel_effort, EffortModel};
use crate::error::{Error, Result};
use crate::estimate::{
    analytic_variance, estimate_mean, estimate_mean_active_baseline, estimate_mean_uniform,
};
use crate::mestimate::{
    estimate_m, generate_logistic, weighted_gradient, weighted_loss, weighted_samples,
    LogisticConfig, LogisticLoss, SquaredLoss,
};
use crate::payment::{collapse_curve, CostMode, SentinelScheme};
use crate::rng::{derive_seed, KeyedRng};
use crate::simulate::simulate_round;
use crate::stats::{mean, ols_fit, sample_variance};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub seed: u64,
    pub unbiased_rounds: usize,
    pub unbiased_n: usize,
    pub coverage_rounds: usize,
    pub coverage_n: usize,
    pub m_rounds: usize,
    pub m_n: usize,
    pub perturbations: usize,
    pub fidelity_n: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            seed: 7,
            unbiased_rounds: 10_000,
            unbiased_n: 500,
            coverage_rounds: 2000,
            coverage_n: 1000,
            m_rounds: 2000,
            m_n: 1000,
            perturbations: 200,
            fidelity_n: 200_000,
        }
    }
}

impl VerifyConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: VerifyConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let sizes = [
            cfg.unbiased_rounds,
            cfg.unbiased_n,
            cfg.coverage_rounds,
            cfg.coverage_n,
            cfg.m_rounds,
            cfg.m_n,
            cfg.fidelity_n,
        ];
        if sizes.iter().any(|&v| v < 2) {
            return Err(Error::Config(
                "round counts and sample sizes must be at least 2".into(),
            ));
        }
        Ok(cfg)
    }

    pub fn from_path(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.as_ref().display())))?;
        Self::from_toml_str(&text)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub name: String,
    pub passed: bool,
    pub measured: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub suites: Vec<SuiteResult>,
    pub all_passed: bool,
}

struct Suite {
    name: &'static str,
    passed: bool,
    measured: BTreeMap<String, f64>,
}

impl Suite {
    fn new(name: &'static str) -> Self {
        Suite {
            name,
            passed: true,
            measured: BTreeMap::new(),
        }
    }

    fn record(&mut self, key: impl Into<String>, value: f64, ok: bool) {
        self.measured.insert(key.into(), value);
        self.passed &= ok;
    }

    fn finish(self) -> SuiteResult {
        SuiteResult {
            name: self.name.into(),
            passed: self.passed,
            measured: self.measured,
        }
    }
}

pub fn collapse_slope() -> Result<SuiteResult> {
    let mut s = Suite::new("collapse_slope");
    let model = EffortModel::default();
    let grid: Vec<f64> = (0..=60)
        .map(|j| 10f64.powf(-1.0 - 3.0 * j as f64 / 60.0))
        .collect();
    for e_min in [0.3, 0.5, 0.8] {
        let curve = collapse_curve(e_min, &model, &grid)?;
        let x: Vec<f64> = curve.iter().map(|c| (1.0 / c.p).ln()).collect();
        let y: Vec<f64> = curve.iter().map(|c| c.required_payment.ln()).collect();
        let (slope, _) = ols_fit(&x, &y);
        s.record(
            format!("slope_e{e_min}"),
            slope,
            (slope - 1.0).abs() <= 0.02,
        );
    }
    Ok(s.finish())
}

pub fn sentinel_foc() -> Result<SuiteResult> {
    let mut s = Suite::new("sentinel_foc");
    let model = EffortModel::default();
    let mut worst: f64 = 0.0;
    for i in 0..50 {
        for j in 0..50 {
            let rho = 0.01 + 0.97 * i as f64 / 49.0;
            let b = 0.05 + 4.95 * j as f64 / 49.0;
            let e = sentinel_effort(rho, b, &model)?;
            worst = worst.max((e - (rho * b).min(1.0)).abs());
        }
    }
    s.record("max_abs_error", worst, worst <= 1e-8);
    Ok(s.finish())
}

pub fn fixed_bonus_closed_form() -> Result<SuiteResult> {
    let mut s = Suite::new("fixed_bonus_closed_form");
    let model = EffortModel::default();
    let p = DesignProblem::new(vec![0.1, 0.2, 0.05, 0.3], 1.0, 0.01, 0.0, model)?;
    let rho = design_fixed_b(&p, 1.0)?.rho();
    let closed = fixed_bonus_rho_closed_form(0.01, 1.0, &model);
    let mut best = (f64::NAN, f64::INFINITY);
    let mut r = 1e-4;
    while r < 1.0 - 1e-4 {
        let v = fixed_bonus_criterion(&p, r, 1.0)?;
        if v < best.1 {
            best = (r, v);
        }
        r += 1e-5;
    }
    s.record("rho", rho, (rho - closed).abs() <= 1e-5);
    s.record("rho_closed_form", closed, true);
    s.record("rho_grid", best.0, (rho - best.0).abs() <= 1e-5);
    Ok(s.finish())
}

pub fn fixed_rate_binding() -> Result<SuiteResult> {
    let mut s = Suite::new("fixed_rate_binding");
    let model = EffortModel::default();
    let (w0, rho, budget, k) = (0.04, 0.1, 0.5, 0.2);
    let tau: Vec<f64> = (0..20).map(|i| 0.01 + 0.01 * i as f64).collect();
    let p = DesignProblem::new(tau, budget, w0, k, model)?;
    let d = design_fixed_rho(&p, rho)?;
    let bonus = match &d.payment {
        PaymentRule::Sentinel { scheme, .. } => scheme.bonus.at(0),
        PaymentRule::Accuracy { .. } => f64::NAN,
    };
    let unit = rho * bonus * model.q(d.efforts[0]) + w0;
    let max_pi = d.pi.iter().cloned().fold(0.0, f64::max);
    s.record(
        "per_sample_cost_over_2w0",
        unit / (2.0 * w0),
        ((unit - 2.0 * w0) / (2.0 * w0)).abs() <= 1e-12,
    );
    s.record(
        "relative_budget_gap",
        (d.expected_cost - budget).abs() / budget,
        (d.expected_cost - budget).abs() / budget <= 1e-9,
    );
    s.record("max_pi", max_pi, max_pi < 1.0);
    Ok(s.finish())
}

/// Ten-instance population with binary and continuous outcomes.
fn discrete_population() -> Dataset {
    let instances = (0..10u64)
        .map(|id| {
            let x = id as f64 / 9.0;
            Instance {
                id,
                prediction: 0.2 + 0.6 * x,
                ai_error_prob: 0.05 + 0.4 * x * (1.0 - x),
                y_true: (id % 3) as f64,
                y_false: 1.5 - x,
                uncertainty: None,
            }
        })
        .collect();
    Dataset {
        kind: TaskKind::Continuous,
        instances,
    }
}

fn random_sentinel_design(
    n: usize,
    rng: &mut KeyedRng,
    model: &EffortModel,
) -> Result<SamplingDesign> {
    let rho = 0.05 + 0.5 * rng.uniform();
    let bonus = 0.2 + 2.0 * rng.uniform();
    let e = sentinel_effort(rho, bonus, model)?;
    Ok(SamplingDesign {
        pi: (0..n).map(|_| 0.05 + 0.95 * rng.uniform()).collect(),
        payment: PaymentRule::Sentinel {
            scheme: SentinelScheme::constant(rho, bonus, 0.1, 0.0)?,
            cost_mode: CostMode::Literal,
        },
        efforts: vec![e; n],
        objective_value: 0.0,
        expected_cost: 0.0,
    })
}

pub fn objective_equivalence(seed: u64) -> Result<SuiteResult> {
    let mut s = Suite::new("objective_equivalence");
    let model = EffortModel::default();
    let ds = discrete_population();
    let tau = estimate_tau(&ds, TauStrategy::ResidualOracle)?.values;
    let mut rng = KeyedRng::new(seed, 0x1e);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let d1 = random_sentinel_design(ds.len(), &mut rng, &model)?;
        let d2 = random_sentinel_design(ds.len(), &mut rng, &model)?;
        let var_gap = analytic_variance(&ds, &d1, &model)? - analytic_variance(&ds, &d2, &model)?;
        let obj_gap =
            weighted_objective(&d1, &tau, &model)? - weighted_objective(&d2, &tau, &model)?;
        worst = worst.max((var_gap - obj_gap).abs());
    }
    s.record("max_residual", worst, worst <= 1e-10);
    Ok(s.finish())
}

/// Rescales `pi` so the design spends `budget`; `None` if any probability would exceed 1.
fn rescale_to_budget(pi: &[f64], unit: f64, available: f64) -> Option<Vec<f64>> {
    let scale = available / (unit * pi.iter().sum::<f64>());
    let out: Vec<f64> = pi.iter().map(|p| p * scale).collect();
    out.iter().all(|p| *p <= 1.0).then_some(out)
}

fn sentinel_variant(
    base: &SamplingDesign,
    pi: Vec<f64>,
    rho: f64,
    bonus: f64,
    effort: f64,
    w0: f64,
    k: f64,
) -> Result<SamplingDesign> {
    Ok(SamplingDesign {
        efforts: vec![effort; pi.len()],
        pi,
        payment: PaymentRule::Sentinel {
            scheme: SentinelScheme::constant(rho, bonus, w0, k)?,
            cost_mode: CostMode::Literal,
        },
        objective_value: 0.0,
        expected_cost: base.expected_cost,
    })
}

pub fn design_optimality(seed: u64, perturbations: usize) -> Result<SuiteResult> {
    let mut s = Suite::new("design_optimality");
    let model = EffortModel::default();
    let tau: Vec<f64> = (0..25)
        .map(|i| 0.02 + 0.3 * ((i * 7) % 25) as f64 / 25.0)
        .collect();
    let (w0, k, budget) = (0.04, 0.3, 0.6);
    let p = DesignProblem::new(tau.clone(), budget, w0, k, model)?;
    let mut rng = KeyedRng::new(seed, 0x0b7);

    let examples: [(&str, SamplingDesign, bool, bool); 3] = [
        (
            "fixed_rho_b",
            design_fixed_rho_b(&p, 0.2, 1.0)?,
            false,
            false,
        ),
        ("fixed_b", design_fixed_b(&p, 1.0)?, true, false),
        ("fixed_rho", design_fixed_rho(&p, 0.1)?, false, true),
    ];
    for (name, opt, vary_rho, vary_bonus) in examples {
        let (rho0, b0) = match &opt.payment {
            PaymentRule::Sentinel { scheme, .. } => (scheme.rho, scheme.bonus.at(0)),
            PaymentRule::Accuracy { .. } => unreachable!(),
        };
        let best = weighted_objective(&opt, &tau, &model)?;
        let mut worst_gap = f64::INFINITY;
        let mut tried = 0;
        while tried < perturbations {
            let z = |rng: &mut KeyedRng| 2.0 * rng.uniform() - 1.0;
            let rho = if vary_rho {
                (rho0 * (0.4 * z(&mut rng)).exp()).min(0.9)
            } else {
                rho0
            };
            let bonus = if vary_bonus {
                b0 * (0.4 * z(&mut rng)).exp()
            } else {
                b0
            };
            let e = sentinel_effort(rho, bonus, &model)?;
            let unit = rho * bonus * model.q(e) + w0;
            let raw: Vec<f64> = opt
                .pi
                .iter()
                .map(|x| x * (0.5 * z(&mut rng)).exp())
                .collect();
            let Some(pi) = rescale_to_budget(&raw, unit, budget - rho * k) else {
                continue;
            };
            tried += 1;
            let cand = sentinel_variant(&opt, pi, rho, bonus, e, w0, k)?;
            worst_gap = worst_gap.min(weighted_objective(&cand, &tau, &model)? - best);
        }
        s.record(format!("{name}_min_gap"), worst_gap, worst_gap >= -1e-12);
    }
    Ok(s.finish())
}

struct Scenario {
    label: &'static str,
    data: SyntheticConfig,
    rho: f64,
}

fn unbiasedness_scenarios(n: usize) -> Vec<Scenario> {
    vec![
        Scenario {
            label: "binary_rho0.05",
            data: SyntheticConfig::binary(n, 2.0, 2.0),
            rho: 0.05,
        },
        Scenario {
            label: "binary_rho0.2",
            data: SyntheticConfig::binary(n, 2.0, 2.0),
            rho: 0.2,
        },
        Scenario {
            label: "miscalibrated_rho0.05",
            data: SyntheticConfig {
                calibration: Calibration::Miscalibrated { distortion: 2.0 },
                ..SyntheticConfig::binary(n, 4.0, 1.0)
            },
            rho: 0.05,
        },
        Scenario {
            label: "continuous_flat_rho0.2",
            data: SyntheticConfig::continuous(n, 0.5, 0.0),
            rho: 0.2,
        },
        Scenario {
            label: "continuous_hetero_rho0.05",
            data: SyntheticConfig::continuous(n, 0.5, 3.0),
            rho: 0.05,
        },
    ]
}

/// One round of the sentinel estimator on a freshly generated population.
fn ours_round(
    data: &SyntheticConfig,
    rho: f64,
    w0: f64,
    budget: f64,
    seed: u64,
) -> Result<crate::estimate::MeanEstimate> {
    let model = EffortModel::default();
    let ds = generate_synthetic(data, derive_seed(seed, 1))?;
    let tau = estimate_tau(&ds, TauStrategy::Column)?.values;
    let d = design_fixed_rho(&DesignProblem::new(tau, budget, w0, 0.0, model)?, rho)?;
    let out = simulate_round(&ds, &d, &model, derive_seed(seed, 2))?;
    estimate_mean(&out, &d, &model, 0.05)
}

pub fn unbiasedness(seed: u64, rounds: usize, n: usize) -> Result<SuiteResult> {
    let mut s = Suite::new("unbiasedness");
    for (si, sc) in unbiasedness_scenarios(n).iter().enumerate() {
        let budget = 0.1 * n as f64;
        let points: Vec<f64> = (0..rounds)
            .into_par_iter()
            .map(|r| {
                ours_round(
                    &sc.data,
                    sc.rho,
                    0.25,
                    budget,
                    derive_seed(seed, (si * rounds + r) as u64),
                )
                .map(|e| e.point)
            })
            .collect::<Result<_>>()?;
        let sd = sample_variance(&points).sqrt();
        let z = (mean(&points) - sc.data.population_mean()).abs() / (sd / (rounds as f64).sqrt());
        s.record(format!("{}_standardized_bias", sc.label), z, z <= 3.0);
    }
    Ok(s.finish())
}

pub fn coverage(seed: u64, rounds: usize, n: usize) -> Result<SuiteResult> {
    let mut s = Suite::new("coverage");
    let model = EffortModel::default();
    let data = SyntheticConfig::binary(n, 2.0, 2.0);
    let truth = data.population_mean();
    let (w0, effort) = (0.25, 0.8);
    let hits: Vec<[bool; 3]> = (0..rounds)
        .into_par_iter()
        .map(|r| -> Result<[bool; 3]> {
            let rs = derive_seed(seed, r as u64);
            let ds = generate_synthetic(&data, derive_seed(rs, 1))?;
            let tau = estimate_tau(&ds, TauStrategy::BinaryCalibrated)?.values;
            let ours = ours_round(&data, 0.1, w0, 0.5 * n as f64 * 2.0 * w0, rs)?;
            let costs = baseline_costs(
                &vec![0.5; n],
                effort,
                w0,
                BaselinePayment::Flat { fee: 0.0 },
                &model,
            )?;
            let budget = 0.5 * n as f64 * w0;
            let act = active_design(&costs, budget, &tau, 0.5, 1e-4, &model)?;
            let out = simulate_round(&ds, &act, &model, derive_seed(rs, 3))?;
            let a = estimate_mean_active_baseline(&out, &act.pi, effort, &model, 0.05)?;
            let uni = uniform_design(&costs, budget, &tau, &model)?;
            let out = simulate_round(&ds, &uni, &model, derive_seed(rs, 4))?;
            let u = estimate_mean_uniform(&out, uni.pi[0], effort, &model, 0.05)?;
            Ok([ours.covers(truth), a.covers(truth), u.covers(truth)])
        })
        .collect::<Result<_>>()?;
    for (j, name) in ["ours", "active", "uniform"].iter().enumerate() {
        let c = hits.iter().filter(|h| h[j]).count() as f64 / rounds as f64;
        s.record(format!("{name}_coverage"), c, (0.93..=0.97).contains(&c));
    }
    Ok(s.finish())
}

pub fn m_estimation(seed: u64, rounds: usize, n: usize) -> Result<SuiteResult> {
    let mut s = Suite::new("m_estimation");
    let model = EffortModel::default();
    let cfg = LogisticConfig {
        n,
        theta: [0.5, -1.0],
        ai_theta: [0.3, -0.7],
    };
    let design_for = |ds: &Dataset| -> Result<SamplingDesign> {
        let tau = estimate_tau(ds, TauStrategy::BinaryCalibrated)?.values;
        design_fixed_rho(
            &DesignProblem::new(tau, 0.5 * n as f64 * 0.5, 0.25, 0.0, model)?,
            0.1,
        )
    };

    // Gradient check and squared-loss reduction on one round.
    let (ds, feats) = generate_logistic(&cfg, derive_seed(seed, 0))?;
    let d = design_for(&ds)?;
    let out = simulate_round(&ds, &d, &model, derive_seed(seed, 1))?;
    let samples = weighted_samples(&feats, &out, &d, &model)?;
    let mut rng = KeyedRng::new(seed, 0x9d);
    let mut worst_rel: f64 = 0.0;
    for _ in 0..50 {
        let theta = [4.0 * rng.uniform() - 2.0, 4.0 * rng.uniform() - 2.0];
        let g = weighted_gradient(&LogisticLoss, &samples, &theta);
        for j in 0..2 {
            let (mut a, mut b) = (theta, theta);
            a[j] += 1e-6;
            b[j] -= 1e-6;
            let fd = (weighted_loss(&LogisticLoss, &samples, &a)
                - weighted_loss(&LogisticLoss, &samples, &b))
                / 2e-6;
            worst_rel = worst_rel.max((fd - g[j]).abs() / g[j].abs().max(1e-3));
        }
    }
    s.record("gradient_max_relative_error", worst_rel, worst_rel <= 1e-5);

    let ones: Vec<Vec<f64>> = vec![vec![1.0]; ds.len()];
    let mean_est = estimate_mean(&out, &d, &model, 0.05)?;
    let m = estimate_m(
        &SquaredLoss,
        &weighted_samples(&ones, &out, &d, &model)?,
        1,
        0.05,
    )?;
    let point_gap = (m.point[0] - mean_est.point).abs();
    let var_gap = (m.sandwich[0][0] - mean_est.variance).abs();
    s.record("squared_point_gap", point_gap, point_gap <= 1e-8);
    s.record("squared_variance_gap", var_gap, var_gap <= 1e-8);

    let hits: Vec<[bool; 2]> = (0..rounds)
        .into_par_iter()
        .map(|r| -> Result<[bool; 2]> {
            let rs = derive_seed(seed ^ 0x5eed, r as u64);
            let (ds, feats) = generate_logistic(&cfg, derive_seed(rs, 1))?;
            let d = design_for(&ds)?;
            let out = simulate_round(&ds, &d, &model, derive_seed(rs, 2))?;
            let est = estimate_m(
                &LogisticLoss,
                &weighted_samples(&feats, &out, &d, &model)?,
                2,
                0.05,
            )?;
            Ok([est.covers(0, cfg.theta[0]), est.covers(1, cfg.theta[1])])
        })
        .collect::<Result<_>>()?;
    for j in 0..2 {
        let c = hits.iter().filter(|h| h[j]).count() as f64 / rounds as f64;
        s.record(
            format!("logistic_coverage_theta{j}"),
            c,
            (c - 0.95).abs() <= 0.02,
        );
    }
    Ok(s.finish())
}

pub fn simulator_fidelity(seed: u64, n: usize) -> Result<SuiteResult> {
    let mut s = Suite::new("simulator_fidelity");
    let model = EffortModel::default();
    let ds = generate_synthetic(&SyntheticConfig::binary(n, 1.0, 1.0), derive_seed(seed, 1))?;
    let (rho, effort) = (0.1, 0.5);
    let d = SamplingDesign {
        pi: vec![1.0; n],
        payment: PaymentRule::Sentinel {
            scheme: SentinelScheme::constant(rho, 1.0, 0.1, 0.0)?,
            cost_mode: CostMode::Literal,
        },
        efforts: vec![effort; n],
        objective_value: 0.0,
        expected_cost: 0.0,
    };
    let out = simulate_round(&ds, &d, &model, derive_seed(seed, 2))?;
    let q = model.q(effort);

    let mut bins = vec![(0.0, 0.0, 0.0); 10];
    for (o, inst) in out.iter().zip(&ds.instances) {
        if !o.regular {
            continue;
        }
        let b = ((inst.ai_error_prob * 10.0) as usize).min(9);
        let acc = 1.0 - inst.ai_error_prob * (1.0 - q);
        let hit = if o.label == Some(inst.y_true) {
            1.0
        } else {
            0.0
        };
        bins[b].0 += hit - acc;
        bins[b].1 += acc * (1.0 - acc);
        bins[b].2 += 1.0;
    }
    let mut worst: f64 = 0.0;
    for (dev, var, _) in &bins {
        worst = worst.max(dev.abs() / var.sqrt());
    }
    s.record("accuracy_max_z", worst, worst <= 3.0);

    let sampled = out.iter().filter(|o| o.sampled).count() as f64;
    let sentinels: Vec<_> = out.iter().filter(|o| o.is_sentinel()).collect();
    let frac = sentinels.len() as f64 / sampled;
    let z = (frac - rho).abs() / (rho * (1.0 - rho) / sampled).sqrt();
    s.record("sentinel_fraction", frac, true);
    s.record("sentinel_fraction_z", z, z <= 3.0);
    let paid =
        sentinels.iter().filter(|o| o.bonus_paid > 0.0).count() as f64 / sentinels.len() as f64;
    let zb = (paid - q).abs() / (q * (1.0 - q) / sentinels.len() as f64).sqrt();
    s.record("bonus_rate_z", zb, zb <= 3.0);
    Ok(s.finish())
}

/// Runs every suite.
pub fn verify_theory(cfg: &VerifyConfig) -> Result<VerificationReport> {
    let suites = vec![
        collapse_slope()?,
        sentinel_foc()?,
        fixed_bonus_closed_form()?,
        fixed_rate_binding()?,
        objective_equivalence(cfg.seed)?,
        design_optimality(cfg.seed, cfg.perturbations)?,
        unbiasedness(cfg.seed, cfg.unbiased_rounds, cfg.unbiased_n)?,
        coverage(cfg.seed, cfg.coverage_rounds, cfg.coverage_n)?,
        m_estimation(cfg.seed, cfg.m_rounds, cfg.m_n)?,
        simulator_fidelity(cfg.seed, cfg.fidelity_n)?,
    ];
    let all_passed = suites.iter().all(|s| s.passed);
    Ok(VerificationReport { suites, all_passed })
}
