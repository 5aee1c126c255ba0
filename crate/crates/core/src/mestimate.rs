//! Incentive-aware M-estimation with sandwich standard errors.
//!
//! The weighted empirical loss is
//! `L(θ) = (1/n) Σ [ℓ_θ(xᵢ, fᵢ) + (ℓ_θ(xᵢ, Yᵢ) - ℓ_θ(xᵢ, fᵢ))·wᵢ]` with
//! `wᵢ = ξᵢζᵢ / ((1 - ρ)·πᵢ·q(eᵢ))`.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{binary_error_probability, Dataset, Instance, TaskKind};
use crate::design::SamplingDesign;
use crate::effort::EffortModel;
use crate::error::{domain, Error, Result};
use crate::estimate::POSITIVITY_FLOOR;
use crate::rng::{derive_seed, KeyedRng};
use crate::simulate::LabelOutcome;
use crate::stats::z_critical;

pub const GRADIENT_TOL: f64 = 1e-9;
pub const MAX_NEWTON_ITERS: usize = 100;

/// A convex per-observation loss `ℓ_θ(x, y)`.
pub trait LossSpec: Sync {
    fn loss(&self, theta: &[f64], x: &[f64], y: f64) -> f64;
    /// Adds `∇ℓ_θ(x, y)` scaled by `scale` into `out`.
    fn add_gradient(&self, theta: &[f64], x: &[f64], y: f64, scale: f64, out: &mut [f64]);
    /// Adds `∇²ℓ_θ(x, y)` scaled by `scale` into `out`.
    fn add_hessian(&self, theta: &[f64], x: &[f64], y: f64, scale: f64, out: &mut DMatrix<f64>);
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add_outer(x: &[f64], scale: f64, out: &mut DMatrix<f64>) {
    for i in 0..x.len() {
        for j in 0..x.len() {
            out[(i, j)] += scale * x[i] * x[j];
        }
    }
}

/// `½(y - θᵀx)²`; with `x ≡ 1` this is the mean.
#[derive(Clone, Copy, Debug, Default)]
pub struct SquaredLoss;

impl LossSpec for SquaredLoss {
    fn loss(&self, theta: &[f64], x: &[f64], y: f64) -> f64 {
        0.5 * (y - dot(theta, x)).powi(2)
    }

    fn add_gradient(&self, theta: &[f64], x: &[f64], y: f64, scale: f64, out: &mut [f64]) {
        let r = dot(theta, x) - y;
        for (o, xi) in out.iter_mut().zip(x) {
            *o += scale * r * xi;
        }
    }

    fn add_hessian(&self, _theta: &[f64], x: &[f64], _y: f64, scale: f64, out: &mut DMatrix<f64>) {
        add_outer(x, scale, out);
    }
}

/// Negative Bernoulli log-likelihood `log(1 + e^{θᵀx}) - y·θᵀx`.
#[derive(Clone, Copy, Debug, Default)]
pub struct LogisticLoss;

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

impl LossSpec for LogisticLoss {
    fn loss(&self, theta: &[f64], x: &[f64], y: f64) -> f64 {
        let t = dot(theta, x);
        softplus(t) - y * t
    }

    fn add_gradient(&self, theta: &[f64], x: &[f64], y: f64, scale: f64, out: &mut [f64]) {
        let r = sigmoid(dot(theta, x)) - y;
        for (o, xi) in out.iter_mut().zip(x) {
            *o += scale * r * xi;
        }
    }

    fn add_hessian(&self, theta: &[f64], x: &[f64], _y: f64, scale: f64, out: &mut DMatrix<f64>) {
        let s = sigmoid(dot(theta, x));
        add_outer(x, scale * s * (1.0 - s), out);
    }
}

/// Per-instance data entering the weighted loss.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedSample {
    pub x: Vec<f64>,
    pub f: f64,
    /// Observed label; only read when `weight != 0`.
    pub y: f64,
    pub weight: f64,
}

/// Builds weighted samples from a round's outcomes and the design's plug-in efforts.
pub fn weighted_samples(
    features: &[Vec<f64>],
    outcomes: &[LabelOutcome],
    design: &SamplingDesign,
    model: &EffortModel,
) -> Result<Vec<WeightedSample>> {
    if features.len() != outcomes.len() || design.len() != outcomes.len() {
        return domain("features, outcomes and design differ in length");
    }
    let keep = 1.0 - design.rho();
    features
        .iter()
        .zip(outcomes)
        .enumerate()
        .map(|(i, (x, o))| {
            let denom = keep * design.pi[i] * model.q(design.efforts[i]);
            if denom < POSITIVITY_FLOOR {
                return Err(Error::Degenerate(format!(
                    "instance {} has sampling weight {denom:e}",
                    o.id
                )));
            }
            let (y, weight) = match (o.sampled && o.regular, o.label) {
                (true, Some(y)) => (y, 1.0 / denom),
                (true, None) => {
                    return Err(Error::Data(format!(
                        "sampled instance {} has no label",
                        o.id
                    )))
                }
                (false, _) => (o.ai_output, 0.0),
            };
            Ok(WeightedSample {
                x: x.clone(),
                f: o.ai_output,
                y,
                weight,
            })
        })
        .collect()
}

/// Weighted empirical loss.
pub fn weighted_loss<L: LossSpec + ?Sized>(
    loss: &L,
    samples: &[WeightedSample],
    theta: &[f64],
) -> f64 {
    let total: f64 = samples
        .iter()
        .map(|s| {
            let lf = loss.loss(theta, &s.x, s.f);
            if s.weight == 0.0 {
                lf
            } else {
                lf + (loss.loss(theta, &s.x, s.y) - lf) * s.weight
            }
        })
        .sum();
    total / samples.len() as f64
}

/// Per-instance gradient of the weighted loss.
fn gradient_term<L: LossSpec + ?Sized>(
    loss: &L,
    s: &WeightedSample,
    theta: &[f64],
    out: &mut [f64],
) {
    out.iter_mut().for_each(|o| *o = 0.0);
    loss.add_gradient(theta, &s.x, s.f, 1.0 - s.weight, out);
    if s.weight != 0.0 {
        loss.add_gradient(theta, &s.x, s.y, s.weight, out);
    }
}

/// Gradient of the weighted loss.
pub fn weighted_gradient<L: LossSpec + ?Sized>(
    loss: &L,
    samples: &[WeightedSample],
    theta: &[f64],
) -> Vec<f64> {
    let mut g = vec![0.0; theta.len()];
    let mut term = vec![0.0; theta.len()];
    for s in samples {
        gradient_term(loss, s, theta, &mut term);
        for (a, b) in g.iter_mut().zip(&term) {
            *a += b;
        }
    }
    let n = samples.len() as f64;
    g.iter_mut().for_each(|a| *a /= n);
    g
}

/// Hessian of the weighted loss.
pub fn weighted_hessian<L: LossSpec + ?Sized>(
    loss: &L,
    samples: &[WeightedSample],
    theta: &[f64],
) -> DMatrix<f64> {
    let d = theta.len();
    let mut h = DMatrix::zeros(d, d);
    for s in samples {
        loss.add_hessian(theta, &s.x, s.f, 1.0 - s.weight, &mut h);
        if s.weight != 0.0 {
            loss.add_hessian(theta, &s.x, s.y, s.weight, &mut h);
        }
    }
    h / samples.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MEstimate {
    pub point: Vec<f64>,
    /// Row-major `d × d` sandwich covariance of `√n·(θ̂ - θ*)`.
    pub sandwich: Vec<Vec<f64>>,
    pub ci_low: Vec<f64>,
    pub ci_high: Vec<f64>,
    pub n: usize,
    pub alpha: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
}

impl MEstimate {
    pub fn covers(&self, j: usize, target: f64) -> bool {
        self.ci_low[j] <= target && target <= self.ci_high[j]
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn newton_step(h: &DMatrix<f64>, g: &[f64]) -> Result<DVector<f64>> {
    let rhs = -DVector::from_column_slice(g);
    if let Some(ch) = h.clone().cholesky() {
        return Ok(ch.solve(&rhs));
    }
    h.clone()
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Degenerate("weighted-loss Hessian is singular".into()))
}

/// Minimizes the weighted loss by damped Newton and attaches sandwich intervals.
pub fn estimate_m<L: LossSpec + ?Sized>(
    loss: &L,
    samples: &[WeightedSample],
    dim: usize,
    alpha: f64,
) -> Result<MEstimate> {
    if samples.is_empty() {
        return domain("no observations");
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return domain(format!("alpha must lie in (0, 1), got {alpha}"));
    }
    if samples.iter().any(|s| s.x.len() != dim) {
        return domain(format!("every feature vector must have dimension {dim}"));
    }
    let mut theta = vec![0.0; dim];
    let mut value = weighted_loss(loss, samples, &theta);
    let mut g = weighted_gradient(loss, samples, &theta);
    let mut iterations = 0;
    while norm(&g) > GRADIENT_TOL {
        if iterations == MAX_NEWTON_ITERS {
            return Err(Error::Optimization(format!(
                "Newton did not converge in {MAX_NEWTON_ITERS} iterations (gradient norm {:e})",
                norm(&g)
            )));
        }
        let h = weighted_hessian(loss, samples, &theta);
        let step = newton_step(&h, &g)?;
        let slope: f64 = step.iter().zip(&g).map(|(s, gi)| s * gi).sum();
        let mut t = 1.0;
        // Below rounding resolution of the loss, Armijo cannot discriminate; take the full step.
        if -slope > 1e-13 * (1.0 + value.abs()) {
            while t > 1e-12 {
                let cand: Vec<f64> = theta
                    .iter()
                    .zip(step.iter())
                    .map(|(a, s)| a + t * s)
                    .collect();
                if weighted_loss(loss, samples, &cand) <= value + 1e-4 * t * slope {
                    break;
                }
                t *= 0.5;
            }
        }
        theta
            .iter_mut()
            .zip(step.iter())
            .for_each(|(a, s)| *a += t * s);
        value = weighted_loss(loss, samples, &theta);
        g = weighted_gradient(loss, samples, &theta);
        iterations += 1;
    }
    let h = weighted_hessian(loss, samples, &theta);
    let h_inv = h.clone().cholesky().map(|c| c.inverse()).ok_or_else(|| {
        Error::Degenerate("weighted-loss Hessian is not positive definite at the solution".into())
    })?;

    let n = samples.len();
    let mut terms = DMatrix::zeros(n, dim);
    let mut buf = vec![0.0; dim];
    for (i, s) in samples.iter().enumerate() {
        gradient_term(loss, s, &theta, &mut buf);
        for j in 0..dim {
            terms[(i, j)] = buf[j];
        }
    }
    let means = terms.row_mean();
    for i in 0..n {
        for j in 0..dim {
            terms[(i, j)] -= means[j];
        }
    }
    let m = if n > 1 {
        terms.transpose() * &terms / (n - 1) as f64
    } else {
        DMatrix::zeros(dim, dim)
    };
    let mut sigma = &h_inv * m * &h_inv;
    sigma = (&sigma + sigma.transpose()) * 0.5;

    let z = z_critical(alpha);
    let half: Vec<f64> = (0..dim)
        .map(|j| z * (sigma[(j, j)].max(0.0) / n as f64).sqrt())
        .collect();
    Ok(MEstimate {
        ci_low: theta.iter().zip(&half).map(|(t, h)| t - h).collect(),
        ci_high: theta.iter().zip(&half).map(|(t, h)| t + h).collect(),
        sandwich: (0..dim)
            .map(|i| (0..dim).map(|j| sigma[(i, j)]).collect())
            .collect(),
        point: theta,
        n,
        alpha,
        gradient_norm: norm(&g),
        iterations,
    })
}

/// Synthetic logistic-regression population with an imperfect AI scorer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticConfig {
    pub n: usize,
    /// Coefficients of `P(Y = 1 | x) = σ(θᵀx)` with `x = (1, x₁)`, `x₁ ~ N(0, 1)`.
    pub theta: [f64; 2],
    /// Coefficients of the AI's score `p̂ = σ(θ_aiᵀx)`.
    pub ai_theta: [f64; 2],
}

/// Generates a binary dataset and the matching feature rows `(1, x₁)`.
pub fn generate_logistic(config: &LogisticConfig, seed: u64) -> Result<(Dataset, Vec<Vec<f64>>)> {
    if config.n == 0 {
        return domain("n must be positive");
    }
    let key = derive_seed(seed, 0x1061);
    let mut instances = Vec::with_capacity(config.n);
    let mut features = Vec::with_capacity(config.n);
    for id in 0..config.n as u64 {
        let mut rng = KeyedRng::new(key, id);
        let x1: f64 = StandardNormal.sample(rng.as_rng());
        let x = vec![1.0, x1];
        let p_true = sigmoid(dot(&config.theta, &x));
        let score = sigmoid(dot(&config.ai_theta, &x));
        let y = if rng.uniform() < p_true { 1.0 } else { 0.0 };
        instances.push(Instance {
            id,
            prediction: score,
            ai_error_prob: binary_error_probability(score, y),
            y_true: y,
            y_false: 1.0 - y,
            uncertainty: Some(score * (1.0 - score)),
        });
        features.push(x);
    }
    Ok((Dataset::new(TaskKind::Binary, instances)?, features))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(x: Vec<f64>, f: f64, y: f64, weight: f64) -> WeightedSample {
        WeightedSample { x, f, y, weight }
    }

    #[test]
    fn squared_mean_is_weighted_average_of_terms() {
        let s = vec![
            sample(vec![1.0], 0.0, 1.0, 2.0),
            sample(vec![1.0], 1.0, 1.0, 0.0),
            sample(vec![1.0], 0.5, 0.0, 4.0),
        ];
        let est = estimate_m(&SquaredLoss, &s, 1, 0.05).unwrap();
        let terms = [2.0, 1.0, 0.5 - 2.0];
        assert!((est.point[0] - crate::stats::mean(&terms)).abs() < 1e-12);
        assert!((est.sandwich[0][0] - crate::stats::sample_variance(&terms)).abs() < 1e-12);
        assert!(est.gradient_norm <= GRADIENT_TOL);
    }

    #[test]
    fn perfect_predictions_solve_f_only_problem() {
        let s: Vec<_> = (0..20)
            .map(|i| {
                let x1 = i as f64 / 10.0 - 1.0;
                let f = 1.0 + 2.0 * x1;
                sample(vec![1.0, x1], f, f, if i % 3 == 0 { 3.0 } else { 0.0 })
            })
            .collect();
        let est = estimate_m(&SquaredLoss, &s, 2, 0.05).unwrap();
        assert!((est.point[0] - 1.0).abs() < 1e-10 && (est.point[1] - 2.0).abs() < 1e-10);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (ds, feats) = generate_logistic(
            &LogisticConfig {
                n: 50,
                theta: [0.3, -1.0],
                ai_theta: [0.1, -0.8],
            },
            1,
        )
        .unwrap();
        let s: Vec<_> = ds
            .instances
            .iter()
            .zip(&feats)
            .enumerate()
            .map(|(i, (inst, x))| {
                sample(
                    x.clone(),
                    1.0 - inst.y_true,
                    inst.y_true,
                    if i % 4 == 0 { 2.5 } else { 0.0 },
                )
            })
            .collect();
        let theta = [0.4, -0.7];
        let g = weighted_gradient(&LogisticLoss, &s, &theta);
        for j in 0..2 {
            let mut a = theta;
            let mut b = theta;
            a[j] += 1e-6;
            b[j] -= 1e-6;
            let fd = (weighted_loss(&LogisticLoss, &s, &a) - weighted_loss(&LogisticLoss, &s, &b))
                / 2e-6;
            assert!((fd - g[j]).abs() <= 1e-5 * g[j].abs().max(1e-3));
        }
    }

    #[test]
    fn logistic_fit_recovers_coefficients_on_full_labels() {
        let (ds, feats) = generate_logistic(
            &LogisticConfig {
                n: 20_000,
                theta: [0.5, 1.5],
                ai_theta: [0.5, 1.5],
            },
            3,
        )
        .unwrap();
        let s: Vec<_> = ds
            .instances
            .iter()
            .zip(&feats)
            .map(|(i, x)| sample(x.clone(), i.y_true, i.y_true, 0.0))
            .collect();
        let est = estimate_m(&LogisticLoss, &s, 2, 0.05).unwrap();
        assert!(
            (est.point[0] - 0.5).abs() < 0.1 && (est.point[1] - 1.5).abs() < 0.1,
            "{:?}",
            est.point
        );
        let sym = (est.sandwich[0][1] - est.sandwich[1][0]).abs();
        assert!(sym == 0.0 && est.sandwich[0][0] >= 0.0 && est.sandwich[1][1] >= 0.0);
    }

    #[test]
    fn singular_hessian_is_degenerate() {
        let s: Vec<_> = (0..5)
            .map(|i| sample(vec![1.0, 0.0], i as f64, i as f64, 0.0))
            .collect();
        assert!(matches!(
            estimate_m(&SquaredLoss, &s, 2, 0.05),
            Err(Error::Degenerate(_))
        ));
    }
}
