//! Shared generators and hand oracles for unit tests.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::Dataset;

/// Random dataset with `g` categories (each guaranteed non-empty), `j`
/// covariates, a category-dependent treatment mean, and endogeneity through
/// correlated errors so IV estimands are well-posed.
pub fn random_dataset<R: Rng>(rng: &mut R, n: usize, g: usize, j: usize) -> Dataset {
    assert!(n >= 2 * g.max(1));
    let z: Vec<usize> = (0..n)
        .map(|i| if i < g { i } else { rng.random_range(0..g) })
        .collect();
    let x: Vec<f64> = (0..n * j).map(|_| StandardNormal.sample(rng)).collect();
    let mut d = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let u: f64 = StandardNormal.sample(rng);
        let e: f64 = StandardNormal.sample(rng);
        let v = 0.6 * u + 0.8 * e;
        let mut xb = 0.0;
        let mut xg = 0.0;
        for c in 0..j {
            let xv = x[i * j + c];
            xb += 0.5 * xv;
            xg += -0.3 * xv;
        }
        let m0 = (z[i] as f64) - (g as f64 - 1.0) / 2.0;
        let di = m0 + xg + v;
        d.push(di);
        y.push(0.75 * di + xb + u);
    }
    let labels = (0..g).map(|c| format!("cat{c}")).collect();
    Dataset::new(y, d, x, j, z, labels).unwrap()
}

/// Hand Wald estimate for a binary instrument without covariates.
pub fn wald_ratio(data: &Dataset) -> f64 {
    assert_eq!(data.n_categories(), 2);
    assert_eq!(data.n_covariates(), 0);
    let mut sums = [[0.0f64; 2]; 2]; // [group][y or d]
    let mut counts = [0usize; 2];
    for i in 0..data.n() {
        let gidx = data.z()[i];
        sums[gidx][0] += data.y()[i];
        sums[gidx][1] += data.d()[i];
        counts[gidx] += 1;
    }
    let my = |gi: usize| sums[gi][0] / counts[gi] as f64;
    let md = |gi: usize| sums[gi][1] / counts[gi] as f64;
    (my(1) - my(0)) / (md(1) - md(0))
}
