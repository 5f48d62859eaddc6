//! Jackknife instrumental-variables estimators (JIVE, IJIVE, UJIVE).
//!
//! All leave-one-out fitted values are computed from group means and small
//! J x J cross products; leverages come from the closed form
//! P_ii = 1/n_{z_i} + x~_i' (X~'X~)^{-1} x~_i, so no n x n matrix is formed.

use nalgebra::DMatrix;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimators::{fit_linear_iv, EstimatorTag, GroupedDesign, IvFit};

const LEVERAGE_TOL: f64 = 1e-8;

fn loo_fit(fitted: &[f64], lev: &[f64], v: &[f64]) -> Vec<f64> {
    fitted
        .iter()
        .zip(lev)
        .zip(v)
        .map(|((&f, &p), &vi)| (f - p * vi) / (1.0 - p))
        .collect()
}

fn check_loo_defined(design: &GroupedDesign, lev: &[f64]) -> Result<()> {
    for (i, &p) in lev.iter().enumerate() {
        if 1.0 - p < LEVERAGE_TOL {
            return Err(Error::JackknifeUndefined {
                category: design.category_label(i),
            });
        }
    }
    Ok(())
}

/// Leave-one-out first-stage fit of D on [category dummies, X].
pub fn jive1_instrument(data: &Dataset) -> Result<Vec<f64>> {
    let design = GroupedDesign::new(data)?;
    let lev = design.leverage_zx();
    check_loo_defined(&design, &lev)?;
    let fitted = design.fitted_zx(data.d());
    Ok(loo_fit(&fitted, &lev, data.d()))
}

/// JIVE: the leave-one-out first-stage fit replaces the fitted value as the
/// instrument for D; intercept and covariates instrument themselves.
pub fn jive1_fit(data: &Dataset) -> Result<IvFit> {
    let h = jive1_instrument(data)?;
    fit_linear_iv(data, &h, EstimatorTag::Jive1, None)
}

/// Scalar ratio estimate with robust variance for tau, plus covariate
/// coefficients recovered by OLS of Y - D tau on [1, X]. The reported
/// covariance is block-diagonal between tau and beta.
fn scalar_ratio_fit(
    data: &Dataset,
    design: &GroupedDesign,
    h: &[f64],
    num_y: &[f64],
    den_d: &[f64],
    tag: EstimatorTag,
) -> Result<IvFit> {
    let n = data.n();
    let j = data.n_covariates();
    let hy: f64 = h.iter().zip(num_y).map(|(&a, &b)| a * b).sum();
    let hd: f64 = h.iter().zip(den_d).map(|(&a, &b)| a * b).sum();
    if hd.abs() < 1e-12 * n as f64 {
        return Err(Error::WeakInstrument(format!(
            "{tag}: instrument-treatment inner product is numerically zero"
        )));
    }
    let tau = hy / hd;

    // Robust variance of the ratio: sum(u_i^2 h_i^2) / (h'd)^2 with
    // u_i = num_y_i - den_d_i * tau.
    let var_tau: f64 = h
        .iter()
        .zip(num_y)
        .zip(den_d)
        .map(|((&hi, &yi), &di)| {
            let u = yi - di * tau;
            u * u * hi * hi
        })
        .sum::<f64>()
        / (hd * hd);

    // Back out beta: OLS of Y - D tau on [1, X] with HC0 errors.
    let resid: Vec<f64> = (0..n).map(|i| data.y()[i] - data.d()[i] * tau).collect();
    let fitted = design.fitted_x(&resid);
    let mut cov = DMatrix::zeros(j + 1, j + 1);
    cov[(0, 0)] = var_tau;
    let mut theta = vec![tau];
    if j > 0 {
        // Coefficients on the centered design, then the slope coefficients
        // coincide with the slopes on raw X.
        let mut xv = nalgebra::DVector::zeros(j);
        for i in 0..n {
            let row = design.centered_row(i);
            for c in 0..j {
                xv[c] += row[c] * resid[i];
            }
        }
        let psi = design.sxx_centered_inv().unwrap() * xv;
        theta.extend(psi.iter().copied());

        // HC0 for the slopes: (X''X'')^{-1} X'' diag(e^2) X'' (X''X'')^{-1}
        // with X'' the centered covariates (intercept partialled out).
        let inv = design.sxx_centered_inv().unwrap();
        let mut meat = DMatrix::zeros(j, j);
        for i in 0..n {
            let e = resid[i] - fitted[i];
            let row = design.centered_row(i);
            for a in 0..j {
                for b in 0..j {
                    meat[(a, b)] += e * e * row[a] * row[b];
                }
            }
        }
        let beta_cov = inv * meat * inv;
        for a in 0..j {
            for b in 0..j {
                cov[(a + 1, b + 1)] = beta_cov[(a, b)];
            }
        }
    }
    let se: Vec<f64> = (0..j + 1).map(|i| cov[(i, i)].max(0.0).sqrt()).collect();
    Ok(IvFit {
        theta,
        cov,
        se,
        estimator_tag: tag,
        first_stage: None,
    })
}

/// IJIVE: partial [1, X] out of Y, D and the category dummies, then apply the
/// leave-one-out fit within the partialled design and form the scalar ratio.
pub fn ijive_fit(data: &Dataset) -> Result<IvFit> {
    let design = GroupedDesign::new(data)?;
    let lev_zx = design.leverage_zx();
    let lev_x = design.leverage_x();
    // The projection onto the partialled dummies is P_{ZX} - P_{[1,X]}.
    let lev_tilde: Vec<f64> = lev_zx.iter().zip(&lev_x).map(|(&a, &b)| a - b).collect();
    for (i, &p) in lev_tilde.iter().enumerate() {
        if 1.0 - p < LEVERAGE_TOL {
            return Err(Error::JackknifeUndefined {
                category: design.category_label(i),
            });
        }
    }
    let y_t: Vec<f64> = data
        .y()
        .iter()
        .zip(design.fitted_x(data.y()))
        .map(|(&v, f)| v - f)
        .collect();
    let d_t: Vec<f64> = data
        .d()
        .iter()
        .zip(design.fitted_x(data.d()))
        .map(|(&v, f)| v - f)
        .collect();
    // Fitted values of the partialled D on the partialled dummies:
    // (P_{ZX} - P_X) M_X d = fitted_zx(d) - fitted_x(d).
    let fitted_t: Vec<f64> = design
        .fitted_zx(data.d())
        .iter()
        .zip(design.fitted_x(data.d()))
        .map(|(&a, b)| a - b)
        .collect();
    let h = loo_fit(&fitted_t, &lev_tilde, &d_t);
    scalar_ratio_fit(data, &design, &h, &y_t, &d_t, EstimatorTag::Ijive)
}

/// UJIVE: difference of two leave-one-out fits of D — one on the full design
/// [dummies, X] and one on the covariate-only design [1, X] — used as a
/// scalar instrument against the raw Y and D.
pub fn ujive_fit(data: &Dataset) -> Result<IvFit> {
    let design = GroupedDesign::new(data)?;
    let lev_zx = design.leverage_zx();
    check_loo_defined(&design, &lev_zx)?;
    let lev_x = design.leverage_x();
    for (i, &p) in lev_x.iter().enumerate() {
        if 1.0 - p < LEVERAGE_TOL {
            return Err(Error::JackknifeUndefined {
                category: design.category_label(i),
            });
        }
    }
    let loo_full = loo_fit(&design.fitted_zx(data.d()), &lev_zx, data.d());
    let loo_cov = loo_fit(&design.fitted_x(data.d()), &lev_x, data.d());
    let h: Vec<f64> = loo_full.iter().zip(&loo_cov).map(|(&a, &b)| a - b).collect();
    scalar_ratio_fit(data, &design, &h, data.y(), data.d(), EstimatorTag::Ujive)
}
