//! Labeling instances: synthetic generation, CSV ingestion and serialization.
//!
//! For binary tasks `prediction` is the AI's class-1 score `p̂`, and the AI's
//! output on an instance is wrong with probability
//! `p = 1 - (p̂·y + (1 - p̂)·(1 - y))`. For continuous tasks the AI outputs its
//! point prediction, which is wrong (`p = 1`) and serves as `y_false`.

use std::collections::HashMap;
use std::path::Path;

use log::info;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::rng::{derive_seed, KeyedRng};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    #[default]
    Binary,
    Continuous,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub id: u64,
    pub prediction: f64,
    pub ai_error_prob: f64,
    pub y_true: f64,
    pub y_false: f64,
    pub uncertainty: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub kind: TaskKind,
    pub instances: Vec<Instance>,
}

/// AI error probability of a binary scorer, from the Bernoulli likelihood of the true label.
pub fn binary_error_probability(score: f64, y_true: f64) -> f64 {
    1.0 - (score * y_true + (1.0 - score) * (1.0 - y_true))
}

impl Dataset {
    pub fn new(kind: TaskKind, instances: Vec<Instance>) -> Result<Self> {
        let ds = Dataset { kind, instances };
        ds.validate()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn mean_y_true(&self) -> f64 {
        self.instances.iter().map(|i| i.y_true).sum::<f64>() / self.len() as f64
    }

    fn validate(&self) -> Result<()> {
        for (row, inst) in self.instances.iter().enumerate() {
            let bad = |m: String| {
                Err(Error::Data(format!(
                    "instance {} (row {row}): {m}",
                    inst.id
                )))
            };
            if !(0.0..=1.0).contains(&inst.ai_error_prob) {
                return bad(format!(
                    "ai_error_prob {} outside [0, 1]",
                    inst.ai_error_prob
                ));
            }
            if let Some(u) = inst.uncertainty {
                if !(u >= 0.0 && u.is_finite()) {
                    return bad(format!("uncertainty {u} must be nonnegative"));
                }
            }
            if !(inst.prediction.is_finite() && inst.y_true.is_finite() && inst.y_false.is_finite())
            {
                return bad("non-finite value".into());
            }
            if self.kind == TaskKind::Binary {
                if !(0.0..=1.0).contains(&inst.prediction) {
                    return bad(format!(
                        "binary prediction {} outside [0, 1]",
                        inst.prediction
                    ));
                }
                if inst.y_true != 0.0 && inst.y_true != 1.0 {
                    return bad(format!("binary y_true must be 0 or 1, got {}", inst.y_true));
                }
                if inst.y_false != 1.0 - inst.y_true {
                    return bad("binary y_false must equal 1 - y_true".into());
                }
            }
        }
        Ok(())
    }

    /// Writes the dataset with header `id,prediction,y_true,y_false,ai_error_prob,uncertainty`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_HEADER)?;
        for i in &self.instances {
            w.write_record([
                i.id.to_string(),
                i.prediction.to_string(),
                i.y_true.to_string(),
                i.y_false.to_string(),
                i.ai_error_prob.to_string(),
                i.uncertainty.map(|u| u.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Draws `n` rows with replacement, renumbering ids `0..n`.
    pub fn resample(&self, n: usize, seed: u64) -> Dataset {
        let mut rng = KeyedRng::new(seed, 0);
        let m = self.len();
        let instances = (0..n)
            .map(|j| {
                let pick = ((rng.uniform() * m as f64) as usize).min(m - 1);
                Instance {
                    id: j as u64,
                    ..self.instances[pick].clone()
                }
            })
            .collect();
        Dataset {
            kind: self.kind,
            instances,
        }
    }
}

pub const CSV_HEADER: [&str; 6] = [
    "id",
    "prediction",
    "y_true",
    "y_false",
    "ai_error_prob",
    "uncertainty",
];

/// How the true label relates to the AI score in a synthetic binary task.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "regime", rename_all = "snake_case")]
pub enum Calibration {
    /// `Y ~ Bern(p̂)`.
    #[default]
    WellCalibrated,
    /// `Y ~ Bern(p̂^distortion)`.
    Miscalibrated { distortion: f64 },
}

/// Parameters of the synthetic generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n: usize,
    #[serde(default)]
    pub kind: TaskKind,
    /// Beta shape parameters of the binary score `p̂`.
    #[serde(default = "one")]
    pub score_alpha: f64,
    #[serde(default = "one")]
    pub score_beta: f64,
    #[serde(default)]
    pub calibration: Calibration,
    /// Continuous tasks: base residual standard deviation.
    #[serde(default = "one")]
    pub residual_scale: f64,
    /// Continuous tasks: residual sd grows from `scale` to `scale·(1 + heterogeneity)` across covariates.
    #[serde(default)]
    pub heterogeneity: f64,
}

fn one() -> f64 {
    1.0
}

impl SyntheticConfig {
    pub fn binary(n: usize, score_alpha: f64, score_beta: f64) -> Self {
        SyntheticConfig {
            n,
            kind: TaskKind::Binary,
            score_alpha,
            score_beta,
            calibration: Calibration::WellCalibrated,
            residual_scale: 1.0,
            heterogeneity: 0.0,
        }
    }

    pub fn continuous(n: usize, residual_scale: f64, heterogeneity: f64) -> Self {
        SyntheticConfig {
            n,
            kind: TaskKind::Continuous,
            score_alpha: 1.0,
            score_beta: 1.0,
            calibration: Calibration::WellCalibrated,
            residual_scale,
            heterogeneity,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return domain("n must be positive");
        }
        match self.kind {
            TaskKind::Binary => {
                if !(self.score_alpha > 0.0 && self.score_beta > 0.0) {
                    return domain("score Beta parameters must be positive");
                }
                if let Calibration::Miscalibrated { distortion } = self.calibration {
                    if !(distortion > 0.0 && distortion.is_finite()) {
                        return domain(format!("distortion must be positive, got {distortion}"));
                    }
                }
            }
            TaskKind::Continuous => {
                if !(self.residual_scale > 0.0 && self.heterogeneity >= 0.0) {
                    return domain("residual_scale must be positive and heterogeneity nonnegative");
                }
            }
        }
        Ok(())
    }

    /// Population mean of `Y^true`, the estimand of a campaign on this generator.
    pub fn population_mean(&self) -> f64 {
        match self.kind {
            TaskKind::Binary => {
                let (a, b) = (self.score_alpha, self.score_beta);
                match self.calibration {
                    Calibration::WellCalibrated => a / (a + b),
                    // E[p̂^g] = B(a + g, b) / B(a, b).
                    Calibration::Miscalibrated { distortion: g } => {
                        (libm::lgamma(a + g) - libm::lgamma(a + b + g) + libm::lgamma(a + b)
                            - libm::lgamma(a))
                        .exp()
                    }
                }
            }
            // Predictions are 2x - 1 with x ~ U(0, 1) and mean-zero residuals.
            TaskKind::Continuous => 0.0,
        }
    }
}

/// Generates a reproducible synthetic dataset.
///
/// Each instance draws from its own keyed stream, so `(config, seed)` fixes the
/// output bit for bit.
pub fn generate_synthetic(config: &SyntheticConfig, seed: u64) -> Result<Dataset> {
    config.validate()?;
    let key = derive_seed(seed, 0xDA7A);
    let instances = match config.kind {
        TaskKind::Binary => {
            let beta = Beta::new(config.score_alpha, config.score_beta)
                .map_err(|e| Error::Domain(format!("invalid Beta parameters: {e}")))?;
            (0..config.n as u64)
                .map(|id| {
                    let mut rng = KeyedRng::new(key, id);
                    let score: f64 = beta.sample(rng.as_rng());
                    let p_one = match config.calibration {
                        Calibration::WellCalibrated => score,
                        Calibration::Miscalibrated { distortion } => score.powf(distortion),
                    };
                    let y = if rng.uniform() < p_one { 1.0 } else { 0.0 };
                    Instance {
                        id,
                        prediction: score,
                        ai_error_prob: binary_error_probability(score, y),
                        y_true: y,
                        y_false: 1.0 - y,
                        uncertainty: Some(score * (1.0 - score)),
                    }
                })
                .collect()
        }
        TaskKind::Continuous => (0..config.n as u64)
            .map(|id| {
                let mut rng = KeyedRng::new(key, id);
                let x = rng.uniform();
                let sd = config.residual_scale * (1.0 + config.heterogeneity * x);
                let z: f64 = StandardNormal.sample(rng.as_rng());
                let prediction = 2.0 * x - 1.0;
                Instance {
                    id,
                    prediction,
                    ai_error_prob: 1.0,
                    y_true: prediction + sd * z,
                    y_false: prediction,
                    uncertainty: Some(sd * sd),
                }
            })
            .collect(),
    };
    Ok(Dataset {
        kind: config.kind,
        instances,
    })
}

/// Maps logical columns to header names in a CSV file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColumnMapping {
    pub kind: TaskKind,
    pub id: String,
    pub prediction: String,
    pub y_true: String,
    pub y_false: String,
    pub ai_error_prob: String,
    pub uncertainty: String,
}

impl Default for ColumnMapping {
    fn default() -> Self {
        ColumnMapping {
            kind: TaskKind::Binary,
            id: "id".into(),
            prediction: "prediction".into(),
            y_true: "y_true".into(),
            y_false: "y_false".into(),
            ai_error_prob: "ai_error_prob".into(),
            uncertainty: "uncertainty".into(),
        }
    }
}

/// Reads and validates a prediction file.
///
/// Required columns: id, prediction, y_true. A missing `ai_error_prob` is derived
/// from the score for binary tasks; a missing `y_false` defaults to `1 - y_true`
/// for binary tasks and is an error for continuous ones.
pub fn ingest_csv(path: impl AsRef<Path>, schema: &ColumnMapping) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let index: HashMap<&str, usize> = headers
        .iter()
        .enumerate()
        .map(|(i, h)| (h.trim(), i))
        .collect();
    let col = |name: &str| index.get(name).copied();
    let required = |name: &str| {
        col(name).ok_or_else(|| Error::Data(format!("missing required column '{name}'")))
    };

    let id_col = required(&schema.id)?;
    let pred_col = required(&schema.prediction)?;
    let y_col = required(&schema.y_true)?;
    let err_col = col(&schema.ai_error_prob);
    let false_col = col(&schema.y_false);
    let unc_col = col(&schema.uncertainty);
    if schema.kind == TaskKind::Continuous && false_col.is_none() {
        return Err(Error::Data(format!(
            "continuous tasks require a '{}' column",
            schema.y_false
        )));
    }

    let mut instances = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize, name: &str| -> Result<f64> {
            let raw = record.get(i).unwrap_or("").trim();
            raw.parse::<f64>().map_err(|_| Error::Parse {
                line,
                message: format!("column '{name}': cannot parse '{raw}'"),
            })
        };
        let optional = |i: Option<usize>, name: &str| -> Result<Option<f64>> {
            match i {
                Some(i) if !record.get(i).unwrap_or("").trim().is_empty() => {
                    field(i, name).map(Some)
                }
                _ => Ok(None),
            }
        };
        let id_raw = record.get(id_col).unwrap_or("").trim();
        let id = id_raw.parse::<u64>().map_err(|_| Error::Parse {
            line,
            message: format!("column '{}': cannot parse id '{id_raw}'", schema.id),
        })?;
        let prediction = field(pred_col, &schema.prediction)?;
        let y_true = field(y_col, &schema.y_true)?;
        let out_of_range = |m: String| Err(Error::Parse { line, message: m });
        if schema.kind == TaskKind::Binary {
            if !(0.0..=1.0).contains(&prediction) {
                return out_of_range(format!("binary prediction {prediction} outside [0, 1]"));
            }
            if y_true != 0.0 && y_true != 1.0 {
                return out_of_range(format!("binary y_true must be 0 or 1, got {y_true}"));
            }
        }
        let y_false = match optional(false_col, &schema.y_false)? {
            Some(v) => v,
            None => 1.0 - y_true,
        };
        let ai_error_prob = match optional(err_col, &schema.ai_error_prob)? {
            Some(v) => v,
            None if schema.kind == TaskKind::Binary => binary_error_probability(prediction, y_true),
            None => 1.0,
        };
        if !(0.0..=1.0).contains(&ai_error_prob) {
            return out_of_range(format!("ai_error_prob {ai_error_prob} outside [0, 1]"));
        }
        let uncertainty = optional(unc_col, &schema.uncertainty)?;
        instances.push(Instance {
            id,
            prediction,
            ai_error_prob,
            y_true,
            y_false,
            uncertainty,
        });
    }
    info!(
        "ingested {} rows from {} (ai_error_prob: {}, y_false: {}, uncertainty: {})",
        instances.len(),
        path.display(),
        if err_col.is_some() {
            "column"
        } else {
            "derived"
        },
        if false_col.is_some() {
            "column"
        } else {
            "derived"
        },
        if unc_col.is_some() {
            "column"
        } else {
            "absent"
        },
    );
    Dataset::new(schema.kind, instances)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn generator_is_deterministic() {
        let cfg = SyntheticConfig::binary(4, 1.0, 1.0);
        let a = generate_synthetic(&cfg, 11).unwrap();
        let b = generate_synthetic(&cfg, 11).unwrap();
        assert_eq!(a.len(), 4);
        for (x, y) in a.instances.iter().zip(&b.instances) {
            assert_eq!(x.prediction.to_bits(), y.prediction.to_bits());
            assert_eq!(x.y_true, y.y_true);
        }
        let c = generate_synthetic(&cfg, 12).unwrap();
        assert_ne!(a.instances[0].prediction, c.instances[0].prediction);
    }

    #[test]
    fn perfect_scorer_never_errs() {
        for y in [0.0, 1.0] {
            assert_eq!(binary_error_probability(y, y), 0.0);
        }
    }

    #[test]
    fn mean_error_probability_uniform_scores() {
        // E[2 p̂ (1 - p̂)] = 1/3 for p̂ ~ U(0, 1); Monte Carlo oracle.
        let ds = generate_synthetic(&SyntheticConfig::binary(100_000, 1.0, 1.0), 5).unwrap();
        let m = ds.instances.iter().map(|i| i.ai_error_prob).sum::<f64>() / ds.len() as f64;
        assert!((m - 1.0 / 3.0).abs() < 0.01, "mean error prob {m}");
    }

    #[test]
    fn population_mean_matches_simulation() {
        let cfg = SyntheticConfig {
            calibration: Calibration::Miscalibrated { distortion: 2.0 },
            ..SyntheticConfig::binary(200_000, 3.0, 2.0)
        };
        // E[p̂²] for Beta(3, 2) = a(a+1)/((a+b)(a+b+1)) = 12/30.
        assert!((cfg.population_mean() - 0.4).abs() < 1e-12);
        let ds = generate_synthetic(&cfg, 1).unwrap();
        assert!((ds.mean_y_true() - 0.4).abs() < 0.005);
    }

    #[test]
    fn continuous_generator_shapes() {
        let ds = generate_synthetic(&SyntheticConfig::continuous(1000, 0.5, 2.0), 3).unwrap();
        assert!(ds
            .instances
            .iter()
            .all(|i| i.ai_error_prob == 1.0 && i.y_false == i.prediction));
        assert!(ds
            .instances
            .iter()
            .all(|i| i.uncertainty.unwrap() >= 0.25 - 1e-12));
    }

    #[test]
    fn invalid_config_rejected() {
        assert!(generate_synthetic(&SyntheticConfig::binary(0, 1.0, 1.0), 0).is_err());
        assert!(generate_synthetic(&SyntheticConfig::binary(3, -1.0, 1.0), 0).is_err());
    }

    fn write_temp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn ingest_valid_binary_file() {
        let f = write_temp("id,prediction,y_true\n0,0.9,1\n1,0.2,0\n2,0.6,0\n");
        let ds = ingest_csv(f.path(), &ColumnMapping::default()).unwrap();
        assert_eq!(ds.len(), 3);
        assert!((ds.instances[0].ai_error_prob - 0.1).abs() < 1e-12);
        assert!((ds.instances[2].ai_error_prob - 0.6).abs() < 1e-12);
        assert_eq!(ds.instances[1].y_false, 1.0);
    }

    #[test]
    fn ingest_reports_line_of_bad_prediction() {
        let f = write_temp("id,prediction,y_true\n0,0.9,1\n1,1.2,0\n");
        match ingest_csv(f.path(), &ColumnMapping::default()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn ingest_missing_columns() {
        let f = write_temp("id,prediction\n0,0.9\n");
        assert!(matches!(
            ingest_csv(f.path(), &ColumnMapping::default()),
            Err(Error::Data(_))
        ));
        let g = write_temp("id,prediction,y_true\n0,1.5,2.5\n");
        let cont = ColumnMapping {
            kind: TaskKind::Continuous,
            ..Default::default()
        };
        assert!(matches!(ingest_csv(g.path(), &cont), Err(Error::Data(_))));
    }

    #[test]
    fn csv_round_trip() {
        let ds = generate_synthetic(&SyntheticConfig::binary(25, 2.0, 3.0), 8).unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf)
            .starts_with("id,prediction,y_true,y_false,ai_error_prob,uncertainty\n"));
        let f = write_temp(std::str::from_utf8(&buf).unwrap());
        let back = ingest_csv(f.path(), &ColumnMapping::default()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn resample_is_deterministic_and_renumbered() {
        let ds = generate_synthetic(&SyntheticConfig::binary(10, 2.0, 2.0), 2).unwrap();
        let a = ds.resample(30, 4);
        assert_eq!(a, ds.resample(30, 4));
        assert!(a
            .instances
            .iter()
            .enumerate()
            .all(|(i, x)| x.id == i as u64));
    }
}
