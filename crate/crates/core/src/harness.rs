//! Monte Carlo campaigns comparing the sentinel design with the baselines.

use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{
    generate_synthetic, ingest_csv, Calibration, ColumnMapping, Dataset, SyntheticConfig,
};
use crate::design::{
    active_design, baseline_costs, design_fixed_b, design_fixed_rho, design_fixed_rho_b,
    design_joint, estimate_tau, expected_error_prob, uniform_design, BaselineCosts,
    BaselinePayment, DesignProblem, SamplingDesign, TauStrategy, DEFAULT_PI_MIN,
};
use crate::effort::EffortModel;
use crate::error::{Error, Result};
use crate::estimate::{
    estimate_mean, estimate_mean_active_baseline, estimate_mean_classical, estimate_mean_uniform,
    estimate_odds_ratio, MeanEstimate, Method,
};
use crate::payment::CostMode;
use crate::rng::derive_seed;
use crate::simulate::{realized_cost, simulate_round, LabelOutcome};
use crate::stats::{isotonic_nonincreasing, mean, sample_variance};

/// Where a campaign's instances come from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    /// Regenerated every replication, so the estimand is the population mean.
    pub synthetic: Option<SyntheticConfig>,
    /// Fixed across replications; the estimand is the file's mean `y_true`.
    pub csv: Option<CsvSource>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    pub path: PathBuf,
    #[serde(default)]
    pub columns: ColumnMapping,
}

/// Sentinel design used for our method.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OursDesign {
    FixedRho { rho: f64 },
    FixedB { bonus: f64 },
    FixedRhoB { rho: f64, bonus: f64 },
    Joint,
}

impl Default for OursDesign {
    fn default() -> Self {
        OursDesign::FixedRho { rho: 0.1 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    /// Effort level the baseline payments are priced to induce.
    pub effort: f64,
    /// Weight on uniform sampling in the active baseline's mixture.
    pub tau_mix: f64,
    /// Choose `tau_mix` on a pilot split instead of using the fixed value.
    pub tune_tau_mix: bool,
    /// Fixed query probability for the uniform and classical baselines; derived from the budget when absent.
    pub pi_unif: Option<f64>,
    pub payment: BaselinePayment,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            effort: 0.8,
            tau_mix: 0.5,
            tune_tau_mix: false,
            pi_unif: None,
            payment: BaselinePayment::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostConfig {
    pub w0: f64,
    pub k: f64,
    pub mode: CostMode,
}

impl Default for CostConfig {
    fn default() -> Self {
        CostConfig {
            w0: 0.64,
            k: 0.0,
            mode: CostMode::Literal,
        }
    }
}

/// Quantity the campaign estimates.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Estimand {
    #[default]
    Mean,
    /// Odds ratio between the main source (group a) and a second synthetic group;
    /// each group receives half of every budget.
    OddsRatio { group_b: SyntheticConfig },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub replications: usize,
    pub alpha: f64,
    pub methods: Vec<Method>,
    pub budgets: Vec<f64>,
    pub source: SourceConfig,
    pub cost: CostConfig,
    pub effort: EffortModel,
    pub ours: OursDesign,
    pub baseline: BaselineConfig,
    pub tau_strategy: TauStrategy,
    pub estimand: Estimand,
    pub pi_min: f64,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 2024,
            replications: 2000,
            alpha: 0.05,
            methods: Method::ALL.to_vec(),
            budgets: vec![50.0, 100.0, 200.0, 400.0, 800.0, 1600.0, 3200.0],
            source: SourceConfig {
                synthetic: Some(SyntheticConfig {
                    calibration: Calibration::WellCalibrated,
                    ..SyntheticConfig::binary(1000, 4.0, 1.0)
                }),
                csv: None,
            },
            cost: CostConfig::default(),
            effort: EffortModel::default(),
            ours: OursDesign::default(),
            baseline: BaselineConfig::default(),
            tau_strategy: TauStrategy::BinaryCalibrated,
            estimand: Estimand::Mean,
            pi_min: DEFAULT_PI_MIN,
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.as_ref().display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.replications == 0 {
            return bad("replications must be at least 1".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if self.methods.is_empty() {
            return bad("no methods selected".into());
        }
        if self.budgets.is_empty() || self.budgets.iter().any(|b| !(*b > 0.0 && b.is_finite())) {
            return bad("budgets must be a nonempty list of positive numbers".into());
        }
        if self.budgets.windows(2).any(|w| w[1] <= w[0]) {
            return bad("budgets must be strictly increasing".into());
        }
        match (&self.source.synthetic, &self.source.csv) {
            (Some(s), None) => s.validate().map_err(|e| Error::Config(e.to_string()))?,
            (None, Some(_)) => {}
            _ => return bad("exactly one of source.synthetic and source.csv must be set".into()),
        }
        if let Estimand::OddsRatio { group_b } = &self.estimand {
            if self.source.synthetic.is_none() {
                return bad("the odds-ratio estimand needs a synthetic source".into());
            }
            group_b
                .validate()
                .map_err(|e| Error::Config(e.to_string()))?;
        }
        if !(self.cost.w0 >= 0.0 && self.cost.k >= 0.0) {
            return bad("w0 and k must be nonnegative".into());
        }
        let b = &self.baseline;
        if !(b.effort > 0.0 && b.effort <= 1.0) {
            return bad(format!(
                "baseline effort must lie in (0, 1], got {}",
                b.effort
            ));
        }
        if !(0.0..=1.0).contains(&b.tau_mix) {
            return bad(format!("tau_mix must lie in [0, 1], got {}", b.tau_mix));
        }
        if let Some(p) = b.pi_unif {
            if !(p > 0.0 && p <= 1.0) {
                return bad(format!("pi_unif must lie in (0, 1], got {p}"));
            }
        }
        if !(self.pi_min > 0.0 && self.pi_min <= 1.0) {
            return bad(format!("pi_min must lie in (0, 1], got {}", self.pi_min));
        }
        Ok(())
    }

    /// Short hash of the canonical JSON form, ignoring where output goes.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(&ExperimentConfig {
            output_dir: None,
            ..self.clone()
        })
        .unwrap_or_default();
        Sha256::digest(&bytes)
            .iter()
            .take(8)
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// Aggregates for one (method, budget) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub method: Method,
    pub budget: f64,
    pub replications: usize,
    pub failures: usize,
    pub mean_width: f64,
    pub width_se: f64,
    pub coverage: f64,
    pub mean_cost: f64,
    pub mean_point: f64,
    pub point_sd: f64,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SavingsPoint {
    pub baseline: Method,
    pub target_width: f64,
    pub budget_ours: f64,
    pub budget_baseline: f64,
    pub savings: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_digest: String,
    pub base_seed: u64,
    pub replications: usize,
    pub software_version: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub provenance: Provenance,
    pub estimand: f64,
    pub cells: Vec<CellSummary>,
    pub budget_saved: Vec<SavingsPoint>,
}

impl CampaignReport {
    pub fn cell(&self, method: Method, budget: f64) -> Option<&CellSummary> {
        self.cells
            .iter()
            .find(|c| c.method == method && c.budget == budget)
    }

    /// `(budget, mean width)` pairs for `method`, skipping failed cells.
    pub fn width_curve(&self, method: Method) -> Vec<(f64, f64)> {
        self.cells
            .iter()
            .filter(|c| c.method == method && c.error.is_none() && c.mean_width.is_finite())
            .map(|c| (c.budget, c.mean_width))
            .collect()
    }
}

/// One replication's result for one cell.
#[derive(Clone, Debug)]
struct Record {
    width: f64,
    covered: bool,
    cost: f64,
    point: f64,
}

/// Per-replication inputs shared by all methods.
struct Population {
    dataset: Dataset,
    tau: Vec<f64>,
    expected_error: Vec<f64>,
}

impl Population {
    fn new(dataset: Dataset, strategy: TauStrategy) -> Result<Self> {
        let tau = estimate_tau(&dataset, strategy)?.values;
        let expected_error = expected_error_prob(&dataset);
        Ok(Population {
            dataset,
            tau,
            expected_error,
        })
    }
}

fn ours_design(cfg: &ExperimentConfig, pop: &Population, budget: f64) -> Result<SamplingDesign> {
    let problem = DesignProblem::new(pop.tau.clone(), budget, cfg.cost.w0, cfg.cost.k, cfg.effort)?
        .with_cost_mode(cfg.cost.mode)
        .with_pi_min(cfg.pi_min)?;
    match cfg.ours {
        OursDesign::FixedRho { rho } => design_fixed_rho(&problem, rho),
        OursDesign::FixedB { bonus } => design_fixed_b(&problem, bonus),
        OursDesign::FixedRhoB { rho, bonus } => design_fixed_rho_b(&problem, rho, bonus),
        OursDesign::Joint => design_joint(&problem),
    }
}

fn costs_for(cfg: &ExperimentConfig, pop: &Population) -> Result<BaselineCosts> {
    baseline_costs(
        &pop.expected_error,
        cfg.baseline.effort,
        cfg.cost.w0,
        cfg.baseline.payment,
        &cfg.effort,
    )
}

const TAU_MIX_GRID: usize = 10;

/// Picks the mixing weight with the smallest estimated variance on the even-indexed half.
fn tune_tau_mix(cfg: &ExperimentConfig, pop: &Population, budget: f64, seed: u64) -> Result<f64> {
    let pick = |v: &[f64]| v.iter().step_by(2).copied().collect::<Vec<f64>>();
    let pilot = Dataset {
        kind: pop.dataset.kind,
        instances: pop.dataset.instances.iter().step_by(2).cloned().collect(),
    };
    let pilot_pop = Population {
        tau: pick(&pop.tau),
        expected_error: pick(&pop.expected_error),
        dataset: pilot,
    };
    let costs = costs_for(cfg, &pilot_pop)?;
    let mut best = (cfg.baseline.tau_mix, f64::INFINITY);
    for j in 0..=TAU_MIX_GRID {
        let mix = j as f64 / TAU_MIX_GRID as f64;
        let design = active_design(
            &costs,
            0.5 * budget,
            &pilot_pop.tau,
            mix,
            cfg.pi_min,
            &cfg.effort,
        )?;
        let out = simulate_round(&pilot_pop.dataset, &design, &cfg.effort, seed)?;
        let est = estimate_mean_active_baseline(
            &out,
            &design.pi,
            cfg.baseline.effort,
            &cfg.effort,
            cfg.alpha,
        )?;
        if est.variance < best.1 {
            best = (mix, est.variance);
        }
    }
    Ok(best.0)
}

fn design_for(
    cfg: &ExperimentConfig,
    pop: &Population,
    method: Method,
    budget: f64,
    seed: u64,
) -> Result<SamplingDesign> {
    match method {
        Method::Ours => ours_design(cfg, pop, budget),
        Method::Active => {
            let costs = costs_for(cfg, pop)?;
            let mix = if cfg.baseline.tune_tau_mix {
                tune_tau_mix(cfg, pop, budget, derive_seed(seed, 0x7a0))?
            } else {
                cfg.baseline.tau_mix
            };
            active_design(&costs, budget, &pop.tau, mix, cfg.pi_min, &cfg.effort)
        }
        Method::Uniform | Method::Classical => {
            let costs = costs_for(cfg, pop)?;
            let mut design = uniform_design(&costs, budget, &pop.tau, &cfg.effort)?;
            if let Some(p) = cfg.baseline.pi_unif {
                design.pi.iter_mut().for_each(|x| *x = p);
            }
            Ok(design)
        }
    }
}

/// The configured source's dataset: the CSV file, or the synthetic draw campaigns use for replication 0 at `seed`.
pub fn load_dataset(cfg: &ExperimentConfig, seed: u64) -> Result<Dataset> {
    match (&cfg.source.csv, &cfg.source.synthetic) {
        (Some(src), _) => ingest_csv(&src.path, &src.columns),
        (None, Some(syn)) => generate_synthetic(syn, derive_seed(seed, 1)),
        (None, None) => Err(Error::Config("no data source configured".into())),
    }
}

/// Builds the design `method` would use on `dataset` at `budget`.
///
/// `seed` only matters when the active baseline tunes its mixing weight.
pub fn method_design(
    cfg: &ExperimentConfig,
    dataset: &Dataset,
    method: Method,
    budget: f64,
    seed: u64,
) -> Result<SamplingDesign> {
    let pop = Population::new(dataset.clone(), cfg.tau_strategy)?;
    design_for(cfg, &pop, method, budget, seed)
}

/// Applies `method`'s estimator to one round of outcomes collected under `design`.
pub fn method_estimate(
    cfg: &ExperimentConfig,
    method: Method,
    outcomes: &[LabelOutcome],
    design: &SamplingDesign,
) -> Result<MeanEstimate> {
    let (model, e, alpha) = (&cfg.effort, cfg.baseline.effort, cfg.alpha);
    match method {
        Method::Ours => estimate_mean(outcomes, design, model, alpha),
        Method::Active => estimate_mean_active_baseline(outcomes, &design.pi, e, model, alpha),
        Method::Uniform | Method::Classical => {
            let p = *design
                .pi
                .first()
                .ok_or_else(|| Error::Domain("empty design".into()))?;
            if method == Method::Uniform {
                estimate_mean_uniform(outcomes, p, e, model, alpha)
            } else {
                estimate_mean_classical(outcomes, p, e, model, alpha)
            }
        }
    }
}

/// Runs one method at one budget on one population; returns the estimate and realized cost.
fn run_method(
    cfg: &ExperimentConfig,
    pop: &Population,
    method: Method,
    budget: f64,
    seed: u64,
) -> Result<(MeanEstimate, f64)> {
    let design = design_for(cfg, pop, method, budget, seed)?;
    let out = simulate_round(&pop.dataset, &design, &cfg.effort, seed)?;
    let est = method_estimate(cfg, method, &out, &design)?;
    Ok((est, realized_cost(&out, &design)))
}

fn replication(
    cfg: &ExperimentConfig,
    fixed: Option<&Dataset>,
    truth: f64,
    r: usize,
) -> Result<Vec<std::result::Result<Record, String>>> {
    let seed_r = cfg.seed.wrapping_add(r as u64);
    let dataset = match fixed {
        Some(d) => d.clone(),
        None => generate_synthetic(
            cfg.source.synthetic.as_ref().expect("validated source"),
            derive_seed(seed_r, 1),
        )?,
    };
    let pop = Population::new(dataset, cfg.tau_strategy)?;
    let pop_b = match &cfg.estimand {
        Estimand::OddsRatio { group_b } => Some(Population::new(
            generate_synthetic(group_b, derive_seed(seed_r, 3))?,
            cfg.tau_strategy,
        )?),
        Estimand::Mean => None,
    };
    let mut records = Vec::with_capacity(cfg.budgets.len() * cfg.methods.len());
    for (bi, &budget) in cfg.budgets.iter().enumerate() {
        let sim_seed = derive_seed(seed_r, 100 + bi as u64);
        for &method in &cfg.methods {
            let result = match &pop_b {
                None => run_method(cfg, &pop, method, budget, sim_seed),
                Some(pb) => {
                    run_method(cfg, &pop, method, 0.5 * budget, sim_seed).and_then(|(ea, ca)| {
                        let (eb, cb) =
                            run_method(cfg, pb, method, 0.5 * budget, derive_seed(sim_seed, 0xb))?;
                        Ok((estimate_odds_ratio(&ea, &eb, cfg.alpha)?, ca + cb))
                    })
                }
            };
            records.push(
                result
                    .map(|(est, cost)| Record {
                        width: est.width(),
                        covered: est.covers(truth),
                        cost,
                        point: est.point,
                    })
                    .map_err(|e| e.to_string()),
            );
        }
    }
    Ok(records)
}

fn odds(p: f64) -> f64 {
    p / (1.0 - p)
}

/// Runs every (method, budget) cell for `replications` rounds.
///
/// Replications run in parallel but are reduced in index order, so identical
/// configs give identical reports. A cell that fails in some replication keeps
/// its successful rounds and reports the first error.
pub fn run_campaign(cfg: &ExperimentConfig) -> Result<CampaignReport> {
    cfg.validate()?;
    let fixed = match &cfg.source.csv {
        Some(src) => Some(ingest_csv(&src.path, &src.columns)?),
        None => None,
    };
    let truth = match (&cfg.estimand, &fixed) {
        (Estimand::Mean, Some(d)) => d.mean_y_true(),
        (Estimand::Mean, None) => cfg
            .source
            .synthetic
            .as_ref()
            .map(|s| s.population_mean())
            .unwrap_or(f64::NAN),
        (Estimand::OddsRatio { group_b }, _) => {
            let pa = cfg
                .source
                .synthetic
                .as_ref()
                .map(|s| s.population_mean())
                .unwrap_or(f64::NAN);
            odds(pa) / odds(group_b.population_mean())
        }
    };
    info!(
        "campaign: {} replications, {} budgets, {} methods",
        cfg.replications,
        cfg.budgets.len(),
        cfg.methods.len()
    );
    let reps: Vec<_> = (0..cfg.replications)
        .into_par_iter()
        .map(|r| replication(cfg, fixed.as_ref(), truth, r))
        .collect::<Result<Vec<_>>>()?;

    let mut cells = Vec::new();
    for (bi, &budget) in cfg.budgets.iter().enumerate() {
        for (mi, &method) in cfg.methods.iter().enumerate() {
            let idx = bi * cfg.methods.len() + mi;
            let mut ok = Vec::new();
            let mut first_error = None;
            let mut failures = 0;
            for rep in &reps {
                match &rep[idx] {
                    Ok(rec) => ok.push(rec),
                    Err(e) => {
                        failures += 1;
                        first_error.get_or_insert_with(|| e.clone());
                    }
                }
            }
            if failures > 0 {
                warn!("{method} at budget {budget}: {failures} failed replications");
            }
            cells.push(summarize(method, budget, &ok, failures, first_error));
        }
    }
    let mut report = CampaignReport {
        provenance: Provenance {
            config_digest: cfg.digest(),
            base_seed: cfg.seed,
            replications: cfg.replications,
            software_version: env!("CARGO_PKG_VERSION").to_string(),
        },
        estimand: truth,
        cells,
        budget_saved: Vec::new(),
    };
    report.budget_saved = savings_table(&report, SAVINGS_POINTS);
    Ok(report)
}

fn summarize(
    method: Method,
    budget: f64,
    ok: &[&Record],
    failures: usize,
    error: Option<String>,
) -> CellSummary {
    let widths: Vec<f64> = ok.iter().map(|r| r.width).collect();
    let points: Vec<f64> = ok.iter().map(|r| r.point).collect();
    let costs: Vec<f64> = ok.iter().map(|r| r.cost).collect();
    let m = ok.len();
    let nan_if_empty = |v: f64| if m == 0 { f64::NAN } else { v };
    CellSummary {
        method,
        budget,
        replications: m,
        failures,
        mean_width: nan_if_empty(mean(&widths)),
        width_se: nan_if_empty((sample_variance(&widths) / m.max(1) as f64).sqrt()),
        coverage: nan_if_empty(ok.iter().filter(|r| r.covered).count() as f64 / m.max(1) as f64),
        mean_cost: nan_if_empty(mean(&costs)),
        mean_point: nan_if_empty(mean(&points)),
        point_sd: nan_if_empty(sample_variance(&points).sqrt()),
        error,
    }
}

/// Smallest budget whose isotonic-smoothed width reaches `target`, interpolating linearly.
pub fn required_budget(curve: &[(f64, f64)], target: f64) -> Result<f64> {
    if curve.len() < 2 {
        return Err(Error::Extrapolation(
            "a width curve needs at least two budgets".into(),
        ));
    }
    let budgets: Vec<f64> = curve.iter().map(|c| c.0).collect();
    let fitted = isotonic_nonincreasing(&curve.iter().map(|c| c.1).collect::<Vec<_>>());
    let (top, bottom) = (fitted[0], fitted[fitted.len() - 1]);
    if target > top || target < bottom {
        return Err(Error::Extrapolation(format!(
            "target width {target} outside [{bottom}, {top}]"
        )));
    }
    for j in 0..fitted.len() {
        if fitted[j] <= target {
            if j == 0 || fitted[j] == target {
                return Ok(budgets[j]);
            }
            let (w0, w1) = (fitted[j - 1], fitted[j]);
            return Ok(budgets[j - 1] + (w0 - target) / (w0 - w1) * (budgets[j] - budgets[j - 1]));
        }
    }
    unreachable!("target is bracketed by the fitted curve")
}

/// `1 - B_ours / B_baseline` at a target width, per baseline present in the report.
pub fn budget_saved(report: &CampaignReport, target_width: f64) -> Vec<(Method, Result<f64>)> {
    let ours = report.width_curve(Method::Ours);
    [Method::Active, Method::Uniform, Method::Classical]
        .into_iter()
        .filter(|m| report.cells.iter().any(|c| c.method == *m))
        .map(|m| {
            let s = required_budget(&ours, target_width).and_then(|bo| {
                required_budget(&report.width_curve(m), target_width).map(|bb| 1.0 - bo / bb)
            });
            (m, s)
        })
        .collect()
}

const SAVINGS_POINTS: usize = 5;

/// Savings on an evenly spaced grid of target widths inside the overlap of the two curves.
pub fn savings_table(report: &CampaignReport, points: usize) -> Vec<SavingsPoint> {
    let ours = report.width_curve(Method::Ours);
    let range = |curve: &[(f64, f64)]| {
        let f = isotonic_nonincreasing(&curve.iter().map(|c| c.1).collect::<Vec<_>>());
        (f[f.len() - 1], f[0])
    };
    let mut table = Vec::new();
    if ours.len() < 2 {
        return table;
    }
    let (o_lo, o_hi) = range(&ours);
    for baseline in [Method::Active, Method::Uniform, Method::Classical] {
        let curve = report.width_curve(baseline);
        if curve.len() < 2 {
            continue;
        }
        let (b_lo, b_hi) = range(&curve);
        let (lo, hi) = (o_lo.max(b_lo), o_hi.min(b_hi));
        if !(hi > lo) {
            continue;
        }
        for j in 1..=points {
            let target = lo + (hi - lo) * j as f64 / (points + 1) as f64;
            if let (Ok(bo), Ok(bb)) = (
                required_budget(&ours, target),
                required_budget(&curve, target),
            ) {
                table.push(SavingsPoint {
                    baseline,
                    target_width: target,
                    budget_ours: bo,
                    budget_baseline: bb,
                    savings: 1.0 - bo / bb,
                });
            }
        }
    }
    table
}

pub fn write_widths_csv<W: std::io::Write>(report: &CampaignReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "method",
        "budget",
        "mean_width",
        "width_se",
        "replications",
        "failures",
    ])?;
    for c in &report.cells {
        w.write_record([
            c.method.name().to_string(),
            c.budget.to_string(),
            c.mean_width.to_string(),
            c.width_se.to_string(),
            c.replications.to_string(),
            c.failures.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_coverage_csv<W: std::io::Write>(report: &CampaignReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["method", "budget", "coverage", "mean_cost", "replications"])?;
    for c in &report.cells {
        w.write_record([
            c.method.name().to_string(),
            c.budget.to_string(),
            c.coverage.to_string(),
            c.mean_cost.to_string(),
            c.replications.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_budget_saved_csv<W: std::io::Write>(report: &CampaignReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in &report.budget_saved {
        w.serialize(row)?;
    }
    if report.budget_saved.is_empty() {
        w.write_record([
            "baseline",
            "target_width",
            "budget_ours",
            "budget_baseline",
            "savings",
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `report.json`, `widths.csv`, `coverage.csv` and `budget_saved.csv` into `dir`.
pub fn write_report(report: &CampaignReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let file = |name: &str| std::fs::File::create(dir.join(name));
    serde_json::to_writer_pretty(file("report.json")?, report)?;
    write_widths_csv(report, file("widths.csv")?)?;
    write_coverage_csv(report, file("coverage.csv")?)?;
    write_budget_saved_csv(report, file("budget_saved.csv")?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ExperimentConfig {
        ExperimentConfig {
            replications: 4,
            budgets: vec![20.0, 40.0],
            source: SourceConfig {
                synthetic: Some(SyntheticConfig::binary(200, 4.0, 1.0)),
                csv: None,
            },
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn required_budget_interpolates() {
        let curve = [(10.0, 1.0), (20.0, 0.5), (40.0, 0.25)];
        assert_eq!(required_budget(&curve, 0.5).unwrap(), 20.0);
        assert!((required_budget(&curve, 0.375).unwrap() - 30.0).abs() < 1e-12);
        assert!(matches!(
            required_budget(&curve, 2.0),
            Err(Error::Extrapolation(_))
        ));
        assert!(matches!(
            required_budget(&curve, 0.1),
            Err(Error::Extrapolation(_))
        ));
        // Noise bump smoothed away.
        let noisy = [(10.0, 1.0), (20.0, 0.5), (30.0, 0.6), (40.0, 0.25)];
        assert_eq!(required_budget(&noisy, 0.55).unwrap(), 20.0);
        let b = required_budget(&noisy, 0.75).unwrap();
        assert!((b - (10.0 + 0.25 / 0.45 * 10.0)).abs() < 1e-12);
    }

    fn report_with(curves: &[(Method, Vec<(f64, f64)>)]) -> CampaignReport {
        let cells = curves
            .iter()
            .flat_map(|(m, c)| {
                c.iter().map(move |&(b, w)| CellSummary {
                    method: *m,
                    budget: b,
                    replications: 1,
                    failures: 0,
                    mean_width: w,
                    width_se: 0.0,
                    coverage: 1.0,
                    mean_cost: b,
                    mean_point: 0.0,
                    point_sd: 0.0,
                    error: None,
                })
            })
            .collect();
        CampaignReport {
            provenance: Provenance {
                config_digest: String::new(),
                base_seed: 0,
                replications: 1,
                software_version: String::new(),
            },
            estimand: 0.0,
            cells,
            budget_saved: Vec::new(),
        }
    }

    #[test]
    fn savings_hand_values() {
        let same = vec![(10.0, 1.0), (40.0, 0.5)];
        let r = report_with(&[(Method::Ours, same.clone()), (Method::Uniform, same)]);
        let s = budget_saved(&r, 0.75);
        assert_eq!(s.len(), 1);
        assert!(s[0].1.as_ref().unwrap().abs() < 1e-15);

        let r2 = report_with(&[
            (Method::Ours, vec![(5.0, 2.0), (10.0, 1.0), (20.0, 0.5)]),
            (Method::Active, vec![(20.0, 2.0), (40.0, 1.0), (80.0, 0.5)]),
        ]);
        let s2 = budget_saved(&r2, 1.0);
        assert!((s2[0].1.as_ref().unwrap() - 0.75).abs() < 1e-15);
        let table = savings_table(&r2, 3);
        assert_eq!(table.len(), 3);
        assert!(table.iter().all(|p| p.savings > 0.0));
    }

    #[test]
    fn config_validation() {
        assert!(ExperimentConfig::default().validate().is_ok());
        let c = ExperimentConfig {
            budgets: vec![10.0, 5.0],
            ..ExperimentConfig::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let c = ExperimentConfig {
            replications: 0,
            ..ExperimentConfig::default()
        };
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::default();
        c.source.csv = Some(CsvSource {
            path: "x.csv".into(),
            columns: ColumnMapping::default(),
        });
        assert!(c.validate().is_err());
        assert!(ExperimentConfig::from_toml_str("methods = [\"bogus\"]").is_err());
        assert!(ExperimentConfig::from_toml_str("unknown_key = 1").is_err());
    }

    #[test]
    fn toml_round_trip() {
        let text = r#"
            seed = 7
            replications = 3
            methods = ["ours", "uniform"]
            budgets = [10.0, 20.0]
            [source.synthetic]
            n = 100
            score_alpha = 2.0
            score_beta = 1.0
            [cost]
            w0 = 0.04
            k = 0.5
            [ours]
            kind = "fixed_b"
            bonus = 1.0
            [baseline]
            tau_mix = 0.3
        "#;
        let c = ExperimentConfig::from_toml_str(text).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.methods, vec![Method::Ours, Method::Uniform]);
        assert_eq!(c.ours, OursDesign::FixedB { bonus: 1.0 });
        assert_eq!(c.baseline.effort, 0.8);
        assert_eq!(c.source.synthetic.as_ref().unwrap().n, 100);
    }

    #[test]
    fn campaign_is_reproducible() {
        let cfg = small_config();
        let a = run_campaign(&cfg).unwrap();
        let b = run_campaign(&cfg).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        assert_eq!(a.cells.len(), 8);
        for c in &a.cells {
            assert!(c.coverage >= 0.0 && c.coverage <= 1.0 && c.mean_width >= 0.0);
        }
    }

    #[test]
    fn single_cell_campaign() {
        let cfg = ExperimentConfig {
            replications: 1,
            budgets: vec![30.0],
            methods: vec![Method::Ours],
            ..small_config()
        };
        let r = run_campaign(&cfg).unwrap();
        assert_eq!(r.cells.len(), 1);
        assert_eq!(r.cells[0].replications, 1);
    }

    #[test]
    fn infeasible_cells_are_recorded() {
        let cfg = ExperimentConfig {
            cost: CostConfig {
                w0: 0.25,
                k: 1000.0,
                mode: CostMode::Literal,
            },
            methods: vec![Method::Ours, Method::Uniform],
            ..small_config()
        };
        let r = run_campaign(&cfg).unwrap();
        let ours = r.cell(Method::Ours, 20.0).unwrap();
        assert_eq!(ours.replications, 0);
        assert!(ours.error.as_deref().unwrap().contains("infeasible"));
        assert!(r.cell(Method::Uniform, 20.0).unwrap().error.is_none());
    }

    #[test]
    fn odds_ratio_campaign_runs() {
        let cfg = ExperimentConfig {
            estimand: Estimand::OddsRatio {
                group_b: SyntheticConfig::binary(200, 2.0, 2.0),
            },
            methods: vec![Method::Ours],
            budgets: vec![80.0, 100.0],
            ..small_config()
        };
        let r = run_campaign(&cfg).unwrap();
        assert!((r.estimand - 4.0).abs() < 1e-12);
        assert!(r.cells.iter().all(|c| c.error.is_none()), "{:?}", r.cells);
    }

    #[test]
    fn reports_written_to_disk() {
        let dir = tempfile::tempdir().unwrap();
        let r = run_campaign(&small_config()).unwrap();
        write_report(&r, dir.path()).unwrap();
        for f in [
            "report.json",
            "widths.csv",
            "coverage.csv",
            "budget_saved.csv",
        ] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let widths = std::fs::read_to_string(dir.path().join("widths.csv")).unwrap();
        assert!(widths.starts_with("method,budget,mean_width"));
    }
}
