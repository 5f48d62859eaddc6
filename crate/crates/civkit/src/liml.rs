//! Limited-information maximum likelihood for one endogenous regressor.
//!
//! kappa_hat is the smaller root of the 2x2 generalized eigenvalue problem
//! det(B - kappa A) = 0 with A = Wb' M_{[Z,X]} Wb and B = Wb' M_{[1,X]} Wb,
//! Wb = [Y, D]. Because the annihilator M_{[Z,X]} kills the intercept and
//! the covariates, the k-class solve reduces to the shared just-identified
//! IV routine with instrument D - kappa (D - P_{[Z,X]} D).

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimators::{fit_linear_iv_with, CovBread, EstimatorTag, GroupedDesign, IvFit};

/// kappa must not fall materially below 1; smaller values indicate a
/// numerically broken eigenproblem rather than a valid likelihood solution.
const KAPPA_SLACK: f64 = 1e-6;

fn sym2x2_from_residuals(ry: &[f64], rd: &[f64]) -> [f64; 3] {
    let mut yy = 0.0;
    let mut yd = 0.0;
    let mut dd = 0.0;
    for (&a, &b) in ry.iter().zip(rd) {
        yy += a * a;
        yd += a * b;
        dd += b * b;
    }
    [yy, yd, dd]
}

/// Smallest kappa with det(B - kappa A) = 0 for symmetric 2x2 matrices
/// stored as [m11, m12, m22].
fn smallest_generalized_eigenvalue(a: [f64; 3], b: [f64; 3]) -> Result<f64> {
    let det_a = a[0] * a[2] - a[1] * a[1];
    let det_b = b[0] * b[2] - b[1] * b[1];
    // det(B - kA) = det_a k^2 - mid k + det_b; mid >= 0 for PSD A, B.
    let mid = a[0] * b[2] + a[2] * b[0] - 2.0 * a[1] * b[1];
    let mut disc = mid * mid - 4.0 * det_a * det_b;
    if disc < 0.0 {
        if disc > -1e-9 * mid * mid {
            disc = 0.0;
        } else {
            return Err(Error::Numerical(format!(
                "negative discriminant {disc:.3e} in the LIML eigenproblem"
            )));
        }
    }
    // Cancellation-free smaller root: k = det_b / q with q = (mid + sqrt)/2.
    // This stays finite and accurate even when det_a ~ 0 (perfect first
    // stage), where the larger root runs off to infinity.
    let q = (mid + disc.sqrt()) / 2.0;
    if q <= 0.0 {
        return Err(Error::Rank {
            context: "LIML structural residual matrices".into(),
            smallest_sv: q,
        });
    }
    Ok(det_b / q)
}

/// LIML fit with the same robust sandwich covariance as the other k-class
/// estimators (kappa = 1 recovers TSLS exactly).
pub fn liml_fit(data: &Dataset) -> Result<IvFit> {
    let design = GroupedDesign::new(data)?;
    let fit_zx_y = design.fitted_zx(data.y());
    let fit_zx_d = design.fitted_zx(data.d());
    let fit_x_y = design.fitted_x(data.y());
    let fit_x_d = design.fitted_x(data.d());

    let res = |v: &[f64], f: &[f64]| -> Vec<f64> {
        v.iter().zip(f).map(|(&a, &b)| a - b).collect()
    };
    let a = sym2x2_from_residuals(
        &res(data.y(), &fit_zx_y),
        &res(data.d(), &fit_zx_d),
    );
    let b = sym2x2_from_residuals(&res(data.y(), &fit_x_y), &res(data.d(), &fit_x_d));

    let mut kappa = smallest_generalized_eigenvalue(a, b)?;
    if kappa < 1.0 - KAPPA_SLACK {
        return Err(Error::Numerical(format!(
            "LIML kappa {kappa:.6} fell below 1; the eigenproblem is ill-posed"
        )));
    }
    kappa = kappa.max(1.0);

    let instrument: Vec<f64> = (0..data.n())
        .map(|i| data.d()[i] - kappa * (data.d()[i] - fit_zx_d[i]))
        .collect();
    // Sandwich bread midway between the moment cross product f'w and the
    // fitted-design outer product f'f. The three coincide at kappa = 1
    // (TSLS); for kappa > 1 the pure cross-moment bread overstates and the
    // pure outer-product bread understates the estimator's finite-sample
    // dispersion, while the midpoint tracks it closely.
    fit_linear_iv_with(
        data,
        &instrument,
        EstimatorTag::Liml,
        None,
        CovBread::Symmetrized,
    )
}
