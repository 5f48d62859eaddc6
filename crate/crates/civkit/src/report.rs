//! Machine-readable run reports: JSON and CSV renderings of fit results,
//! simulation summaries, and power curves.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::estimators::IvFit;
use crate::montecarlo::{PowerPoint, SimSummary, CRITICAL_VALUE};

/// One coefficient line of a fit report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoefficientRow {
    pub estimator: String,
    pub parameter: String,
    pub estimate: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// An estimator that errored during a fit run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitError {
    pub estimator: String,
    pub message: String,
}

/// Full report for a `fit` invocation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    pub coefficients: Vec<CoefficientRow>,
    pub errors: Vec<FitError>,
    pub warnings: Vec<String>,
    pub elapsed_ms: u128,
}

impl RunReport {
    /// Appends one fitted estimator; parameter names are "tau" followed by
    /// the covariate column names.
    pub fn push_fit(&mut self, fit: &IvFit, x_names: &[String]) {
        let est = fit.estimator_tag.to_string();
        for (idx, (&b, &s)) in fit.theta.iter().zip(&fit.se).enumerate() {
            let parameter = if idx == 0 {
                "tau".to_string()
            } else {
                x_names
                    .get(idx - 1)
                    .cloned()
                    .unwrap_or_else(|| format!("x{idx}"))
            };
            self.coefficients.push(CoefficientRow {
                estimator: est.clone(),
                parameter,
                estimate: b,
                se: s,
                ci_low: b - CRITICAL_VALUE * s,
                ci_high: b + CRITICAL_VALUE * s,
            });
        }
        if let Some(fs) = &fit.first_stage {
            if fs.model.k_effective < fs.model.k {
                self.warnings.push(format!(
                    "{est}: requested {} clusters but only {} distinct category means",
                    fs.model.k, fs.model.k_effective
                ));
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self).map_err(std::io::Error::other)?)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.coefficients {
            w.serialize(row)?;
        }
        let bytes = w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?;
        Ok(String::from_utf8(bytes).map_err(std::io::Error::other)?)
    }
}

/// Wide-format CSV, one row per estimator.
pub fn sim_summary_csv(summary: &SimSummary) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["estimator", "bias", "mae", "rp05", "iqr1090", "n_failed"])?;
    for row in &summary.rows {
        let fmt = |v: f64| format!("{v:.10}");
        match &row.stats {
            Some(s) => w.write_record([
                row.estimator.clone(),
                fmt(s.bias),
                fmt(s.mae),
                fmt(s.rp05),
                fmt(s.iqr1090),
                row.n_failed.to_string(),
            ])?,
            None => w.write_record([
                row.estimator.clone(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                row.n_failed.to_string(),
            ])?,
        }
    }
    let bytes = w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?;
    Ok(String::from_utf8(bytes).map_err(std::io::Error::other)?)
}

/// Long-format CSV: (tau0, estimator, rejection_rate, n_failed).
pub fn power_curve_csv(points: &[PowerPoint]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["tau0", "estimator", "rejection_rate", "n_failed"])?;
    for p in points {
        w.write_record([
            format!("{:.10}", p.tau0),
            p.estimator.clone(),
            format!("{:.10}", p.rejection_rate),
            p.n_failed.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?;
    Ok(String::from_utf8(bytes).map_err(std::io::Error::other)?)
}

/// Writes text to `path`, or to stdout when no path is given.
pub fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => {
            std::fs::write(p, text)?;
        }
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::tsls_fit;
    use crate::montecarlo::{run_replications, EstimatorSpec, SimConfig};
    use crate::testutil::random_dataset;
    use approx::assert_relative_eq;
    use rand::SeedableRng;

    #[test]
    fn confidence_intervals_use_the_normal_critical_value() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(41);
        let data = random_dataset(&mut rng, 200, 5, 2);
        let fit = tsls_fit(&data).unwrap();
        let mut report = RunReport {
            command: "test".into(),
            coefficients: vec![],
            errors: vec![],
            warnings: vec![],
            elapsed_ms: 0,
        };
        report.push_fit(&fit, &["age".into(), "inc".into()]);
        assert_eq!(report.coefficients.len(), 3);
        for row in &report.coefficients {
            assert_relative_eq!(
                row.ci_high - row.estimate,
                CRITICAL_VALUE * row.se,
                max_relative = 1e-12
            );
            assert_relative_eq!(
                row.estimate - row.ci_low,
                CRITICAL_VALUE * row.se,
                max_relative = 1e-12
            );
        }
        assert_eq!(report.coefficients[1].parameter, "age");
        let json = report.to_json().unwrap();
        assert!(json.contains("\"tau\""));
        let csv_text = report.to_csv().unwrap();
        assert!(csv_text.lines().count() == 4); // header + 3 rows
    }

    #[test]
    fn summary_csv_handles_all_failed_rows() {
        let mut cfg = SimConfig::table_preset(2, 20);
        cfg.replications = 3;
        let s = run_replications(&cfg, &[EstimatorSpec::Civ(1), EstimatorSpec::Oracle]).unwrap();
        let text = sim_summary_csv(&s).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("civ1,,,,,3"));
        assert!(lines[2].starts_with("oracle,"));
    }
}
