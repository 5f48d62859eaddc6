//! IV estimators for a single categorical instrument with covariates.
//!
//! All estimators share the same second stage: a just-identified IV solve of
//! Y on (D, X) with a constructed instrument, followed by a
//! heteroskedasticity-robust (HC0) sandwich covariance. An intercept column
//! is carried internally (it is absorbed by the category dummies in every
//! first stage) and dropped from the reported coefficients, so `theta` is
//! ordered (tau, beta_1..beta_J).
//!
//! Projections onto the categorical design use group means and within-group
//! algebra throughout; no estimator materializes an n x G dummy matrix or an
//! n x n projection.

use nalgebra::{DMatrix, DVector};

use crate::data::{category_stats, Dataset};
use crate::error::{Error, Result};
use crate::kcmeans::{fit_kcmeans, KCMeansModel};

/// Which estimator produced a fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorTag {
    Civ(usize),
    Tsls,
    Jive1,
    Ijive,
    Ujive,
    Liml,
    Oracle,
}

impl std::fmt::Display for EstimatorTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EstimatorTag::Civ(k) => write!(f, "CIV(K={k})"),
            EstimatorTag::Tsls => write!(f, "TSLS"),
            EstimatorTag::Jive1 => write!(f, "JIVE"),
            EstimatorTag::Ijive => write!(f, "IJIVE"),
            EstimatorTag::Ujive => write!(f, "UJIVE"),
            EstimatorTag::Liml => write!(f, "LIML"),
            EstimatorTag::Oracle => write!(f, "ORACLE"),
        }
    }
}

/// First-stage clustering attached to a CIV fit.
#[derive(Debug, Clone)]
pub struct CivFirstStage {
    pub model: KCMeansModel,
    pub pi_hat: Vec<f64>,
}

/// A fitted IV estimate with robust covariance.
#[derive(Debug, Clone)]
pub struct IvFit {
    /// Coefficients ordered (tau, beta_1..beta_J).
    pub theta: Vec<f64>,
    /// Var(theta_hat), i.e. the sandwich already divided by n.
    pub cov: DMatrix<f64>,
    /// Square roots of the covariance diagonal.
    pub se: Vec<f64>,
    pub estimator_tag: EstimatorTag,
    pub first_stage: Option<CivFirstStage>,
}

impl IvFit {
    pub fn tau(&self) -> f64 {
        self.theta[0]
    }

    pub fn tau_se(&self) -> f64 {
        self.se[0]
    }
}

/// First-step regression output: pi_hat and the residual D - X'pi_hat fed to
/// the K-conditional-means problem.
#[derive(Debug, Clone)]
pub struct FirstStage {
    pub pi_hat: Vec<f64>,
    pub residuals: Vec<f64>,
}

const SV_RTOL: f64 = 1e-10;

/// Group-structured design helper: category means, within-demeaned and
/// grand-demeaned covariate cross products.
pub(crate) struct GroupedDesign<'a> {
    data: &'a Dataset,
    counts: Vec<usize>,
    /// G x J category means of X, row-major.
    x_cat_means: Vec<f64>,
    /// n x J within-category demeaned X.
    x_within: Vec<f64>,
    sxx_within_inv: Option<DMatrix<f64>>,
    /// n x J grand-mean demeaned X.
    x_centered: Vec<f64>,
    sxx_centered_inv: Option<DMatrix<f64>>,
}

fn checked_inverse(s: &DMatrix<f64>, context: &str) -> Result<DMatrix<f64>> {
    let svd = s.clone().svd(true, true);
    let max_sv = svd.singular_values.max();
    let min_sv = svd.singular_values.min();
    if !(min_sv > SV_RTOL * max_sv.max(1e-300)) {
        return Err(Error::Rank {
            context: context.to_string(),
            smallest_sv: min_sv,
        });
    }
    svd.pseudo_inverse(0.0).map_err(|e| Error::Numerical(e.to_string()))
}

/// Tolerance-based pseudo-inverse for covariate cross products. Covariates
/// that are collinear with the category dummies (or with each other) are
/// common in practice — e.g. group-level regressors — and are resolved by the
/// minimum-norm solution, which matches the convention of dropping collinear
/// columns: their coefficient is zero and fitted values project onto the
/// actual column span.
fn tolerant_pinv(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let svd = s.clone().svd(true, true);
    let max_sv = svd.singular_values.max();
    svd.pseudo_inverse(SV_RTOL * max_sv.max(1e-300))
        .map_err(|e| Error::Numerical(e.to_string()))
}

impl<'a> GroupedDesign<'a> {
    pub fn new(data: &'a Dataset) -> Result<Self> {
        let n = data.n();
        let g = data.n_categories();
        let j = data.n_covariates();
        let counts = data.category_counts();

        let mut x_cat_sums = vec![0.0; g * j];
        let mut x_grand_sums = vec![0.0; j];
        for i in 0..n {
            let row = data.x_row(i);
            let zc = data.z()[i];
            for (c, &v) in row.iter().enumerate() {
                x_cat_sums[zc * j + c] += v;
                x_grand_sums[c] += v;
            }
        }
        let x_cat_means: Vec<f64> = (0..g * j)
            .map(|idx| x_cat_sums[idx] / counts[idx / j.max(1)] as f64)
            .collect();
        let x_grand_means: Vec<f64> = x_grand_sums.iter().map(|s| s / n as f64).collect();

        let mut x_within = vec![0.0; n * j];
        let mut x_centered = vec![0.0; n * j];
        for i in 0..n {
            let row = data.x_row(i);
            let zc = data.z()[i];
            for c in 0..j {
                x_within[i * j + c] = row[c] - x_cat_means[zc * j + c];
                x_centered[i * j + c] = row[c] - x_grand_means[c];
            }
        }

        let cross = |m: &[f64]| -> DMatrix<f64> {
            let mut s = DMatrix::zeros(j, j);
            for i in 0..n {
                for a in 0..j {
                    for b in 0..j {
                        s[(a, b)] += m[i * j + a] * m[i * j + b];
                    }
                }
            }
            s
        };
        let (sxx_within_inv, sxx_centered_inv) = if j == 0 {
            (None, None)
        } else {
            (
                Some(tolerant_pinv(&cross(&x_within))?),
                Some(tolerant_pinv(&cross(&x_centered))?),
            )
        };

        Ok(GroupedDesign {
            data,
            counts,
            x_cat_means,
            x_within,
            sxx_within_inv,
            x_centered,
            sxx_centered_inv,
        })
    }

    fn j(&self) -> usize {
        self.data.n_covariates()
    }

    /// Per-category means of an arbitrary vector.
    pub fn cat_means(&self, v: &[f64]) -> Vec<f64> {
        let mut sums = vec![0.0; self.counts.len()];
        for (i, &val) in v.iter().enumerate() {
            sums[self.data.z()[i]] += val;
        }
        sums.iter()
            .zip(&self.counts)
            .map(|(&s, &c)| s / c as f64)
            .collect()
    }

    /// Within-category OLS coefficient of `v` on X.
    pub fn within_coef(&self, v: &[f64]) -> Vec<f64> {
        let j = self.j();
        if j == 0 {
            return Vec::new();
        }
        let mut xv = DVector::zeros(j);
        for (i, &val) in v.iter().enumerate() {
            for c in 0..j {
                xv[c] += self.x_within[i * j + c] * val;
            }
        }
        let coef = self.sxx_within_inv.as_ref().unwrap() * xv;
        coef.iter().copied().collect()
    }

    /// Fitted values of `v` on the full design [category dummies, X].
    pub fn fitted_zx(&self, v: &[f64]) -> Vec<f64> {
        let j = self.j();
        let pi = self.within_coef(v);
        let v_means = self.cat_means(v);
        // delta_g = mean_g(v) - mean_g(X)'pi
        let g = self.counts.len();
        let mut delta = v_means;
        for (gi, d) in delta.iter_mut().enumerate().take(g) {
            for c in 0..j {
                *d -= self.x_cat_means[gi * j + c] * pi[c];
            }
        }
        (0..v.len())
            .map(|i| {
                let mut f = delta[self.data.z()[i]];
                let row = self.data.x_row(i);
                for c in 0..j {
                    f += row[c] * pi[c];
                }
                f
            })
            .collect()
    }

    /// Diagonal of the projection onto [category dummies, X].
    pub fn leverage_zx(&self) -> Vec<f64> {
        let j = self.j();
        (0..self.data.n())
            .map(|i| {
                let mut p = 1.0 / self.counts[self.data.z()[i]] as f64;
                if j > 0 {
                    let xt = &self.x_within[i * j..(i + 1) * j];
                    let inv = self.sxx_within_inv.as_ref().unwrap();
                    for a in 0..j {
                        for b in 0..j {
                            p += xt[a] * inv[(a, b)] * xt[b];
                        }
                    }
                }
                p
            })
            .collect()
    }

    /// Fitted values of `v` on the covariate-only design [1, X].
    pub fn fitted_x(&self, v: &[f64]) -> Vec<f64> {
        let j = self.j();
        let n = v.len();
        let mean = v.iter().sum::<f64>() / n as f64;
        if j == 0 {
            return vec![mean; n];
        }
        let mut xv = DVector::zeros(j);
        for (i, &val) in v.iter().enumerate() {
            for c in 0..j {
                xv[c] += self.x_centered[i * j + c] * val;
            }
        }
        let psi = self.sxx_centered_inv.as_ref().unwrap() * xv;
        (0..n)
            .map(|i| {
                let mut f = mean;
                for c in 0..j {
                    f += self.x_centered[i * j + c] * psi[c];
                }
                f
            })
            .collect()
    }

    /// Diagonal of the projection onto [1, X].
    pub fn leverage_x(&self) -> Vec<f64> {
        let j = self.j();
        let n = self.data.n();
        (0..n)
            .map(|i| {
                let mut p = 1.0 / n as f64;
                if j > 0 {
                    let xt = &self.x_centered[i * j..(i + 1) * j];
                    let inv = self.sxx_centered_inv.as_ref().unwrap();
                    for a in 0..j {
                        for b in 0..j {
                            p += xt[a] * inv[(a, b)] * xt[b];
                        }
                    }
                }
                p
            })
            .collect()
    }

    /// Grand-mean-centered covariate row for observation `i`.
    pub fn centered_row(&self, i: usize) -> &[f64] {
        let j = self.j();
        &self.x_centered[i * j..(i + 1) * j]
    }

    pub fn sxx_centered_inv(&self) -> Option<&DMatrix<f64>> {
        self.sxx_centered_inv.as_ref()
    }

    /// Label of the category observation `i` belongs to.
    pub fn category_label(&self, i: usize) -> String {
        self.data.category_labels()[self.data.z()[i]].clone()
    }
}

/// Within-category regression of D on X: demean D and each X column within
/// each category of Z, regress, and return pi_hat together with the raw
/// (not demeaned) residual D - X'pi_hat.
pub fn estimate_pi_within(data: &Dataset) -> Result<FirstStage> {
    let design = GroupedDesign::new(data)?;
    Ok(first_stage_from(data, &design))
}

pub(crate) fn first_stage_from(data: &Dataset, design: &GroupedDesign) -> FirstStage {
    let pi_hat = design.within_coef(data.d());
    let residuals: Vec<f64> = (0..data.n())
        .map(|i| {
            let mut r = data.d()[i];
            let row = data.x_row(i);
            for (c, &p) in pi_hat.iter().enumerate() {
                r -= row[c] * p;
            }
            r
        })
        .collect();
    FirstStage { pi_hat, residuals }
}

/// HC0 sandwich: n^{-1} A^{-1} B A^{-T} with A = E_n f w', B = E_n u^2 f f',
/// symmetrized to remove round-off asymmetry.
pub fn sandwich_cov(fhat: &DMatrix<f64>, w: &DMatrix<f64>, uhat: &DVector<f64>) -> Result<DMatrix<f64>> {
    let n = fhat.nrows() as f64;
    let a = (fhat.transpose() * w) / n;
    let a_inv = checked_inverse(&a, "instrument-regressor moment matrix")?;
    let p = fhat.ncols();
    let mut b = DMatrix::zeros(p, p);
    for i in 0..fhat.nrows() {
        let u2 = uhat[i] * uhat[i];
        for r in 0..p {
            for c in 0..p {
                b[(r, c)] += u2 * fhat[(i, r)] * fhat[(i, c)];
            }
        }
    }
    b /= n;
    let cov = (&a_inv * b * a_inv.transpose()) / n;
    Ok((&cov + cov.transpose()) * 0.5)
}

/// Which bread matrix the sandwich uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum CovBread {
    /// A = E_n f w' — the instrument-regressor cross moment.
    InstrumentCross,
    /// A = E_n f (w + f)'/2 — symmetrized compromise between the moment
    /// bread f'w and the fitted-design bread f'f, used for k-class fits
    /// where the two differ.
    Symmetrized,
}

/// Builds the internal (J+2)-column instrument/regressor matrices with an
/// explicit intercept, solves the IV moment, and reports (tau, beta) with the
/// intercept dropped.
pub(crate) fn fit_linear_iv_with(
    data: &Dataset,
    instrument: &[f64],
    tag: EstimatorTag,
    first_stage: Option<CivFirstStage>,
    bread: CovBread,
) -> Result<IvFit> {
    let n = data.n();
    let j = data.n_covariates();
    let p = j + 2;

    let fill = |col0: &dyn Fn(usize) -> f64| -> DMatrix<f64> {
        DMatrix::from_fn(n, p, |i, c| match c {
            0 => col0(i),
            1 => 1.0,
            _ => data.x_row(i)[c - 2],
        })
    };
    let f = fill(&|i| instrument[i]);
    let w = fill(&|i| data.d()[i]);
    let y = DVector::from_column_slice(data.y());

    let a = (f.transpose() * &w) / n as f64;
    let a_inv = checked_inverse(&a, "instrument-regressor moment matrix")?;
    let fy = (f.transpose() * &y) / n as f64;
    let theta_full = &a_inv * fy;
    let uhat = &y - &w * &theta_full;
    let cov_full = match bread {
        CovBread::InstrumentCross => sandwich_cov(&f, &w, &uhat)?,
        CovBread::Symmetrized => {
            let mix = (&w + &f) * 0.5;
            sandwich_cov(&f, &mix, &uhat)?
        }
    };

    // Drop the internal intercept (index 1).
    let keep: Vec<usize> = std::iter::once(0).chain(2..p).collect();
    let theta: Vec<f64> = keep.iter().map(|&c| theta_full[c]).collect();
    let mut cov = DMatrix::zeros(j + 1, j + 1);
    for (r, &kr) in keep.iter().enumerate() {
        for (c, &kc) in keep.iter().enumerate() {
            cov[(r, c)] = cov_full[(kr, kc)];
        }
    }
    let se: Vec<f64> = (0..j + 1).map(|i| cov[(i, i)].max(0.0).sqrt()).collect();
    Ok(IvFit {
        theta,
        cov,
        se,
        estimator_tag: tag,
        first_stage,
    })
}

pub(crate) fn fit_linear_iv(
    data: &Dataset,
    instrument: &[f64],
    tag: EstimatorTag,
    first_stage: Option<CivFirstStage>,
) -> Result<IvFit> {
    fit_linear_iv_with(data, instrument, tag, first_stage, CovBread::InstrumentCross)
}

/// CIV: K-conditional-means first stage on the within residual, then IV with
/// the estimated optimal instrument m_hat(Z) + X'pi_hat.
pub fn civ_fit(data: &Dataset, k: usize) -> Result<IvFit> {
    if k < 2 {
        return Err(Error::Domain(
            "CIV requires k >= 2; a single cluster yields a constant instrument".into(),
        ));
    }
    let design = GroupedDesign::new(data)?;
    let fs = first_stage_from(data, &design);
    let stats = category_stats(&fs.residuals, data.z(), data.n_categories())?;
    let model = fit_kcmeans(&stats, k)?;
    if model.k_effective < 2 {
        return Err(Error::WeakInstrument(format!(
            "KCMeans used {} cluster(s); the instrument is constant",
            model.k_effective
        )));
    }
    let instrument: Vec<f64> = (0..data.n())
        .map(|i| {
            let mut g = model.alphas[model.assignment[data.z()[i]]];
            let row = data.x_row(i);
            for (c, &p) in fs.pi_hat.iter().enumerate() {
                g += row[c] * p;
            }
            g
        })
        .collect();
    let pi_hat = fs.pi_hat.clone();
    fit_linear_iv(
        data,
        &instrument,
        EstimatorTag::Civ(k),
        Some(CivFirstStage { model, pi_hat }),
    )
}

/// Infeasible oracle: the caller supplies the true per-category optimal
/// instrument values and the true pi.
pub fn oracle_fit(data: &Dataset, m0: &[f64], pi0: &[f64]) -> Result<IvFit> {
    if m0.len() != data.n_categories() {
        return Err(Error::InvalidInput(format!(
            "m0 has {} entries, expected G = {}",
            m0.len(),
            data.n_categories()
        )));
    }
    if pi0.len() != data.n_covariates() {
        return Err(Error::InvalidInput(format!(
            "pi0 has {} entries, expected J = {}",
            pi0.len(),
            data.n_covariates()
        )));
    }
    let instrument: Vec<f64> = (0..data.n())
        .map(|i| {
            let mut g = m0[data.z()[i]];
            let row = data.x_row(i);
            for (c, &p) in pi0.iter().enumerate() {
                g += row[c] * p;
            }
            g
        })
        .collect();
    fit_linear_iv(data, &instrument, EstimatorTag::Oracle, None)
}

/// Two-stage least squares with the saturated categorical first stage
/// (computed through group means, never an n x G dummy matrix).
pub fn tsls_fit(data: &Dataset) -> Result<IvFit> {
    let design = GroupedDesign::new(data)?;
    let fitted = design.fitted_zx(data.d());
    fit_linear_iv(data, &fitted, EstimatorTag::Tsls, None)
}

/// Diagonal of the projection onto [category dummies, X].
pub fn leverage(data: &Dataset) -> Result<Vec<f64>> {
    let design = GroupedDesign::new(data)?;
    Ok(design.leverage_zx())
}
