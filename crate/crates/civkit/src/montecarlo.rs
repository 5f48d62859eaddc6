//! Simulation laboratory: data-generating process, replicated estimator
//! comparisons, and power curves.
//!
//! Replication r draws from an RNG substream determined only by the master
//! seed and r, and results are folded in replication order, so summaries are
//! byte-identical regardless of how many worker threads run.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimators::{civ_fit, oracle_fit, tsls_fit, IvFit};
use crate::jive::{ijive_fit, jive1_fit, ujive_fit};
use crate::liml::liml_fit;

/// Two-sided 5% critical value of the standard normal.
pub const CRITICAL_VALUE: f64 = 1.959964;

/// Simulation design parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// True number of support points of the optimal instrument.
    pub k0: usize,
    /// Number of observed instrument categories.
    pub g: usize,
    /// Expected observations per category; n = g * expected_nz.
    pub expected_nz: usize,
    /// True average treatment effect.
    pub tau0: f64,
    /// Heterogeneous effects: pi0(X) = tau0 + het_amplitude * (1 - 2X).
    pub heterogeneous: bool,
    /// Amplitude of effect heterogeneity (0.5 for the summary tables).
    pub het_amplitude: f64,
    /// First-stage amplitude C.
    pub c: f64,
    /// First-stage error variance.
    pub sigma_v2: f64,
    /// Cov(U, V).
    pub rho_uv: f64,
    /// Number of Monte Carlo replications.
    pub replications: usize,
    /// Master RNG seed.
    pub seed: u64,
}

impl SimConfig {
    /// Preset matching the summary tables for a given K0 and expected
    /// category size.
    pub fn table_preset(k0: usize, expected_nz: usize) -> SimConfig {
        let c = match k0 {
            2 => 0.85,
            4 => 1.153,
            _ => f64::NAN, // caught by validate()
        };
        SimConfig {
            k0,
            g: 40,
            expected_nz,
            tau0: 0.0,
            heterogeneous: true,
            het_amplitude: 0.5,
            c,
            sigma_v2: 0.9,
            rho_uv: 0.6,
            replications: 1000,
            seed: 20260823,
        }
    }

    pub fn n(&self) -> usize {
        self.g * self.expected_nz
    }

    pub fn validate(&self) -> Result<()> {
        if self.k0 < 2 || self.g == 0 || self.g % self.k0 != 0 {
            return Err(Error::InvalidInput(format!(
                "g = {} must be a positive multiple of k0 = {}",
                self.g, self.k0
            )));
        }
        if self.expected_nz == 0 {
            return Err(Error::InvalidInput("expected_nz must be >= 1".into()));
        }
        if !(self.sigma_v2 > self.rho_uv * self.rho_uv) {
            return Err(Error::InvalidInput(format!(
                "need sigma_v2 > rho_uv^2 for a valid error covariance ({} vs {})",
                self.sigma_v2,
                self.rho_uv * self.rho_uv
            )));
        }
        if !self.c.is_finite() || self.replications == 0 {
            return Err(Error::InvalidInput(
                "c must be finite and replications >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Ground truth attached to one simulated dataset.
#[derive(Debug, Clone)]
pub struct SimTruth {
    /// In-sample mean of the individual effects pi0(X_i): the per-replication
    /// estimand under heterogeneity (equals tau0 exactly when effects are
    /// constant).
    pub e_bar: f64,
    /// Optimal instrument value per dataset category code.
    pub m0_by_code: Vec<f64>,
    /// True first-stage covariate coefficient (zero in this design).
    pub pi0: Vec<f64>,
}

/// Estimators available to the simulation runner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EstimatorSpec {
    Oracle,
    Civ(usize),
    Tsls,
    Jive1,
    Ijive,
    Ujive,
    Liml,
}

impl EstimatorSpec {
    pub fn name(&self) -> String {
        match self {
            EstimatorSpec::Oracle => "oracle".to_string(),
            EstimatorSpec::Civ(k) => format!("civ{k}"),
            EstimatorSpec::Tsls => "tsls".to_string(),
            EstimatorSpec::Jive1 => "jive".to_string(),
            EstimatorSpec::Ijive => "ijive".to_string(),
            EstimatorSpec::Ujive => "ujive".to_string(),
            EstimatorSpec::Liml => "liml".to_string(),
        }
    }

    pub fn fit(&self, data: &Dataset, truth: &SimTruth) -> Result<IvFit> {
        match self {
            EstimatorSpec::Oracle => oracle_fit(data, &truth.m0_by_code, &truth.pi0),
            EstimatorSpec::Civ(k) => civ_fit(data, *k),
            EstimatorSpec::Tsls => tsls_fit(data),
            EstimatorSpec::Jive1 => jive1_fit(data),
            EstimatorSpec::Ijive => ijive_fit(data),
            EstimatorSpec::Ujive => ujive_fit(data),
            EstimatorSpec::Liml => liml_fit(data),
        }
    }

    /// The default table line-up.
    pub fn table_suite() -> Vec<EstimatorSpec> {
        vec![
            EstimatorSpec::Oracle,
            EstimatorSpec::Civ(2),
            EstimatorSpec::Civ(4),
            EstimatorSpec::Tsls,
            EstimatorSpec::Jive1,
            EstimatorSpec::Ijive,
            EstimatorSpec::Ujive,
            EstimatorSpec::Liml,
        ]
    }
}

/// Parse a comma-separated estimator list like "oracle,civ2,tsls".
pub fn parse_estimator_list(s: &str) -> Result<Vec<EstimatorSpec>> {
    s.split(',')
        .map(|tok| {
            let t = tok.trim().to_ascii_lowercase();
            match t.as_str() {
                "oracle" => Ok(EstimatorSpec::Oracle),
                "tsls" => Ok(EstimatorSpec::Tsls),
                "jive" | "jive1" => Ok(EstimatorSpec::Jive1),
                "ijive" => Ok(EstimatorSpec::Ijive),
                "ujive" => Ok(EstimatorSpec::Ujive),
                "liml" => Ok(EstimatorSpec::Liml),
                _ => t
                    .strip_prefix("civ")
                    .and_then(|rest| rest.parse::<usize>().ok())
                    .map(EstimatorSpec::Civ)
                    .ok_or_else(|| {
                        Error::InvalidInput(format!("unknown estimator `{tok}`"))
                    }),
            }
        })
        .collect()
}

/// Draws one dataset from the design. The instrument takes values 1..=g with
/// uniform marginal probability; even codes pair with X = 0 and odd codes
/// with X = 1, so the covariate is perfectly predictable from the category
/// (its first-stage coefficient is absorbed by the category means).
pub fn simulate_dgp(config: &SimConfig, rep_seed: u64) -> Result<(Dataset, SimTruth)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(rep_seed.wrapping_add(1));

    let n = config.n();
    let g = config.g;
    let block = g / config.k0;
    let m0_of_z = |z_one_indexed: usize| -> f64 {
        let b = (z_one_indexed - 1) / block;
        config.c * b as f64 / (config.k0 - 1) as f64
    };
    let sd_extra = (config.sigma_v2 - config.rho_uv * config.rho_uv).sqrt();

    let mut x = Vec::with_capacity(n);
    let mut d = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut codes = Vec::with_capacity(n);
    let mut labels: Vec<String> = Vec::new();
    let mut code_of_z: Vec<Option<usize>> = vec![None; g + 1];
    let mut m0_by_code: Vec<f64> = Vec::new();
    let mut e_bar = 0.0;

    for _ in 0..n {
        let xi = if rng.random_range(0..2u32) == 1 { 1.0 } else { 0.0 };
        // Even 1-indexed codes when X = 0, odd when X = 1.
        let half = rng.random_range(0..(g / 2));
        let z = if xi == 0.0 { 2 * (half + 1) } else { 2 * half + 1 };
        let u: f64 = StandardNormal.sample(&mut rng);
        let e2: f64 = StandardNormal.sample(&mut rng);
        let v = config.rho_uv * u + sd_extra * e2;
        let di = m0_of_z(z) + v;
        let pi_i = if config.heterogeneous {
            config.tau0 + config.het_amplitude * (1.0 - 2.0 * xi)
        } else {
            config.tau0
        };
        e_bar += pi_i;
        let yi = di * pi_i + u;

        let code = *code_of_z[z].get_or_insert_with(|| {
            labels.push(z.to_string());
            m0_by_code.push(m0_of_z(z));
            labels.len() - 1
        });
        codes.push(code);
        x.push(xi);
        d.push(di);
        y.push(yi);
    }
    e_bar /= n as f64;

    let data = Dataset::new(y, d, x, 1, codes, labels)?;
    Ok((
        data,
        SimTruth {
            e_bar,
            m0_by_code,
            pi0: vec![0.0],
        },
    ))
}

/// One replication's outcome for one estimator.
#[derive(Debug, Clone, Copy)]
struct RepResult {
    tau: f64,
    se: f64,
}

/// Raw per-replication estimates: `raw[r][e]` is estimator `e`'s result in
/// replication `r`, None if it errored.
pub(crate) struct RawRuns {
    results: Vec<Vec<Option<RepResult>>>,
    e_bars: Vec<f64>,
}

fn run_raw(config: &SimConfig, estimators: &[EstimatorSpec]) -> Result<RawRuns> {
    config.validate()?;
    let rows: Vec<(Vec<Option<RepResult>>, f64)> = (0..config.replications)
        .into_par_iter()
        .map(|r| {
            let (data, truth) = simulate_dgp(config, r as u64)
                .expect("config validated before dispatch");
            let row = estimators
                .iter()
                .map(|spec| {
                    spec.fit(&data, &truth).ok().map(|fit| RepResult {
                        tau: fit.tau(),
                        se: fit.tau_se(),
                    })
                })
                .collect();
            (row, truth.e_bar)
        })
        .collect();
    let (results, e_bars) = rows.into_iter().unzip();
    Ok(RawRuns { results, e_bars })
}

/// Summary statistics for one estimator across replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub bias: f64,
    pub mae: f64,
    pub rp05: f64,
    pub iqr1090: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub estimator: String,
    pub n_failed: usize,
    /// None when every replication failed.
    pub stats: Option<SummaryStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub config: SimConfig,
    pub rows: Vec<EstimatorSummary>,
}

/// Type-7 (linear interpolation) quantile of already-sorted values.
pub fn quantile_type7(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty() && (0.0..=1.0).contains(&p));
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 < sorted.len() {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    } else {
        sorted[lo]
    }
}

fn median(sorted: &[f64]) -> f64 {
    quantile_type7(sorted, 0.5)
}

/// Runs the full experiment. Per replication r the error is normalized by the
/// in-sample estimand: e_r = tau_hat_r - mean_n pi0(X). Estimator failures
/// are excluded pairwise (only the failing estimator loses the replication).
pub fn run_replications(
    config: &SimConfig,
    estimators: &[EstimatorSpec],
) -> Result<SimSummary> {
    let raw = run_raw(config, estimators)?;
    let rows = estimators
        .iter()
        .enumerate()
        .map(|(e, spec)| {
            let mut errs: Vec<f64> = Vec::new();
            let mut taus: Vec<f64> = Vec::new();
            let mut rejects = 0usize;
            let mut n_failed = 0usize;
            for (r, row) in raw.results.iter().enumerate() {
                match row[e] {
                    Some(res) => {
                        let err = res.tau - raw.e_bars[r];
                        errs.push(err);
                        taus.push(res.tau);
                        if err.abs() / res.se > CRITICAL_VALUE {
                            rejects += 1;
                        }
                    }
                    None => n_failed += 1,
                }
            }
            let stats = if errs.is_empty() {
                None
            } else {
                let m = errs.len() as f64;
                let bias = errs.iter().sum::<f64>() / m;
                let mut abs_errs: Vec<f64> = errs.iter().map(|v| v.abs()).collect();
                abs_errs.sort_by(|a, b| a.total_cmp(b));
                taus.sort_by(|a, b| a.total_cmp(b));
                Some(SummaryStats {
                    bias,
                    mae: median(&abs_errs),
                    rp05: rejects as f64 / m,
                    iqr1090: quantile_type7(&taus, 0.9) - quantile_type7(&taus, 0.1),
                })
            };
            EstimatorSummary {
                estimator: spec.name(),
                n_failed,
                stats,
            }
        })
        .collect();
    Ok(SimSummary {
        config: config.clone(),
        rows,
    })
}

/// One point of a power curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerPoint {
    pub tau0: f64,
    pub estimator: String,
    pub rejection_rate: f64,
    pub n_failed: usize,
}

/// Rejection rate of H0: tau = 0 across a grid of true effects.
pub fn power_curve(
    config: &SimConfig,
    tau_grid: &[f64],
    estimators: &[EstimatorSpec],
) -> Result<Vec<PowerPoint>> {
    if tau_grid.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidInput("tau grid must be finite".into()));
    }
    let mut out = Vec::new();
    for &tau0 in tau_grid {
        let mut cfg = config.clone();
        cfg.tau0 = tau0;
        let raw = run_raw(&cfg, estimators)?;
        for (e, spec) in estimators.iter().enumerate() {
            let mut rejects = 0usize;
            let mut used = 0usize;
            let mut n_failed = 0usize;
            for row in &raw.results {
                match row[e] {
                    Some(res) => {
                        used += 1;
                        if res.tau.abs() / res.se > CRITICAL_VALUE {
                            rejects += 1;
                        }
                    }
                    None => n_failed += 1,
                }
            }
            out.push(PowerPoint {
                tau0,
                estimator: spec.name(),
                rejection_rate: if used > 0 {
                    rejects as f64 / used as f64
                } else {
                    f64::NAN
                },
                n_failed,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::estimate_pi_within;
    use approx::assert_relative_eq;

    fn small_config() -> SimConfig {
        let mut c = SimConfig::table_preset(2, 20);
        c.replications = 8;
        c
    }

    #[test]
    fn quantile_hand_cases() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_relative_eq!(quantile_type7(&v, 0.9), 3.7, max_relative = 1e-12);
        assert_relative_eq!(quantile_type7(&v, 0.0), 1.0);
        assert_relative_eq!(quantile_type7(&v, 1.0), 4.0);
        assert_relative_eq!(quantile_type7(&v, 0.5), 2.5);
        assert_relative_eq!(quantile_type7(&[5.0], 0.3), 5.0);
    }

    #[test]
    fn dgp_support_restriction_and_marginals() {
        let mut cfg = SimConfig::table_preset(2, 150);
        cfg.seed = 7;
        let (data, truth) = simulate_dgp(&cfg, 0).unwrap();
        let n = data.n() as f64;
        assert_eq!(data.n(), 6000);

        // Even 1-indexed codes carry X = 0, odd codes X = 1.
        for i in 0..data.n() {
            let label: usize = data.category_labels()[data.z()[i]].parse().unwrap();
            let xi = data.x_row(i)[0];
            assert_eq!(label % 2 == 0, xi == 0.0);
        }

        // mean(X) = 0.5 within 3 binomial SEs.
        let mean_x: f64 = (0..data.n()).map(|i| data.x_row(i)[0]).sum::<f64>() / n;
        assert!((mean_x - 0.5).abs() < 3.0 * 0.5 / n.sqrt());

        // Sample variance of m0(Z) near C^2/4 (two-point distribution).
        let m0: Vec<f64> = (0..data.n())
            .map(|i| truth.m0_by_code[data.z()[i]])
            .collect();
        let mean_m0 = m0.iter().sum::<f64>() / n;
        let var_m0 = m0.iter().map(|v| (v - mean_m0).powi(2)).sum::<f64>() / n;
        let target = cfg.c * cfg.c / 4.0;
        // Var of the Bernoulli(C^2) indicator-based variance estimate: use a
        // generous 3-sigma band from the binomial block split.
        let se = cfg.c * cfg.c * 0.5 / n.sqrt();
        assert!((var_m0 - target).abs() < 3.0 * se, "{var_m0} vs {target}");

        // All 40 categories occupied.
        assert_eq!(data.n_categories(), 40);
        assert!(data.category_counts().iter().all(|&c| c > 0));
    }

    #[test]
    fn heterogeneous_estimand_varies_but_constant_is_exact() {
        let cfg = small_config();
        let (_, truth) = simulate_dgp(&cfg, 3).unwrap();
        assert!(truth.e_bar != 0.0);
        let mut cfg2 = cfg.clone();
        cfg2.heterogeneous = false;
        cfg2.tau0 = 0.25;
        let (_, truth2) = simulate_dgp(&cfg2, 3).unwrap();
        assert_eq!(truth2.e_bar, 0.25);
    }

    #[test]
    fn pi_hat_is_absorbed_by_categories_in_the_dgp() {
        // X is deterministic given the category, so the within-category
        // regression puts exactly zero weight on it — consistent with the
        // true first-stage coefficient of zero.
        let mut cfg = SimConfig::table_preset(2, 100);
        cfg.seed = 11;
        let (data, _) = simulate_dgp(&cfg, 0).unwrap();
        assert_eq!(data.n(), 4000);
        let fs = estimate_pi_within(&data).unwrap();
        assert!(fs.pi_hat[0].abs() < 1e-10);
    }

    #[test]
    fn substreams_are_reproducible_and_distinct() {
        let cfg = small_config();
        let (a1, t1) = simulate_dgp(&cfg, 5).unwrap();
        let (a2, t2) = simulate_dgp(&cfg, 5).unwrap();
        assert_eq!(a1.y(), a2.y());
        assert_eq!(a1.d(), a2.d());
        assert_eq!(a1.z(), a2.z());
        assert_eq!(t1.e_bar, t2.e_bar);
        let (b, _) = simulate_dgp(&cfg, 6).unwrap();
        assert_ne!(a1.y(), b.y());
    }

    #[test]
    fn run_replications_is_deterministic() {
        let cfg = small_config();
        let ests = [EstimatorSpec::Oracle, EstimatorSpec::Civ(2), EstimatorSpec::Tsls];
        let s1 = run_replications(&cfg, &ests).unwrap();
        let s2 = run_replications(&cfg, &ests).unwrap();
        assert_eq!(
            serde_json::to_string(&s1).unwrap(),
            serde_json::to_string(&s2).unwrap()
        );
    }

    #[test]
    fn always_failing_estimator_reports_all_failed() {
        let cfg = small_config();
        // civ with k = 1 is outside the estimator's domain in every dataset.
        let s = run_replications(&cfg, &[EstimatorSpec::Civ(1)]).unwrap();
        assert_eq!(s.rows[0].n_failed, cfg.replications);
        assert!(s.rows[0].stats.is_none());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = SimConfig::table_preset(2, 20);
        c.g = 41; // not divisible by k0
        assert!(c.validate().is_err());
        let mut c2 = SimConfig::table_preset(2, 20);
        c2.sigma_v2 = 0.3; // below rho^2
        assert!(c2.validate().is_err());
        assert!(SimConfig::table_preset(3, 20).validate().is_err());
    }

    #[test]
    fn estimator_list_parsing() {
        let l = parse_estimator_list("oracle, civ2,CIV4,tsls,jive,ijive,ujive,liml").unwrap();
        assert_eq!(l, EstimatorSpec::table_suite());
        assert!(parse_estimator_list("bogus").is_err());
    }

    #[test]
    fn power_curve_rejects_everywhere_for_large_effects() {
        let mut cfg = small_config();
        cfg.replications = 12;
        let pts = power_curve(&cfg, &[8.0], &[EstimatorSpec::Oracle]).unwrap();
        assert_eq!(pts.len(), 1);
        assert_relative_eq!(pts[0].rejection_rate, 1.0);
    }
}
