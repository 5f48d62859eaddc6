//! Exact weighted univariate clustering of per-category residual means.
//!
//! Finds the global minimizer of the count-weighted within-cluster sum of
//! squares over all assignments of categories to at most K cluster values.
//! An optimal clustering of points on the real line only merges adjacent
//! points in sorted order, so the search reduces to contiguous partitions of
//! the sorted means and is solved by dynamic programming in O(G^2 K) time.
//! A brute-force enumerator over the same partition space serves as a test
//! oracle.

use crate::data::CategoryStats;
use crate::error::{Error, Result};

/// Fitted clustering of category means.
#[derive(Debug, Clone, PartialEq)]
pub struct KCMeansModel {
    /// Requested number of clusters.
    pub k: usize,
    /// Number of clusters actually used, `min(k, #distinct means)`.
    pub k_effective: usize,
    /// Split positions in sorted-mean category order: `breaks[i]` is the
    /// sorted-order index of the first category of cluster `i + 1`.
    pub breaks: Vec<usize>,
    /// Cluster means, strictly increasing.
    pub alphas: Vec<f64>,
    /// Category code -> cluster index.
    pub assignment: Vec<usize>,
    /// Total weighted within-cluster sum of squares on the residual-mean scale.
    pub objective: f64,
}

impl KCMeansModel {
    /// Cluster value for a category code seen at fit time.
    pub fn predict(&self, code: usize) -> Result<f64> {
        let cluster = *self
            .assignment
            .get(code)
            .ok_or_else(|| Error::Domain(format!("unknown category code {code}")))?;
        Ok(self.alphas[cluster])
    }
}

/// Categories with exactly equal means, collapsed into one point.
struct DistinctPoint {
    mean: f64,
    weight: f64,
    /// Range of positions in the sorted category order covered by this point.
    first_pos: usize,
    last_pos: usize,
}

fn collapse_distinct(stats: &CategoryStats) -> Vec<DistinctPoint> {
    let mut points: Vec<DistinctPoint> = Vec::new();
    for (pos, &code) in stats.order.iter().enumerate() {
        let mean = stats.means[code];
        let weight = stats.counts[code] as f64;
        match points.last_mut() {
            Some(p) if p.mean == mean => {
                p.weight += weight;
                p.last_pos = pos;
            }
            _ => points.push(DistinctPoint {
                mean,
                weight,
                first_pos: pos,
                last_pos: pos,
            }),
        }
    }
    points
}

/// Weighted SSE of points `a..=b`, by direct summation. Shared by the DP and
/// the brute-force oracle so equal partitions report equal objectives.
fn segment_cost(points: &[DistinctPoint], a: usize, b: usize) -> f64 {
    let mut w = 0.0;
    let mut s = 0.0;
    let mut q = 0.0;
    for p in &points[a..=b] {
        w += p.weight;
        s += p.weight * p.mean;
        q += p.weight * p.mean * p.mean;
    }
    q - s * s / w
}

fn segment_mean(points: &[DistinctPoint], a: usize, b: usize) -> f64 {
    let mut w = 0.0;
    let mut s = 0.0;
    for p in &points[a..=b] {
        w += p.weight;
        s += p.weight * p.mean;
    }
    s / w
}

/// Turns segment boundaries in distinct-point space into a full model.
/// `starts` holds the first distinct-point index of each cluster (starts[0] == 0).
fn build_model(stats: &CategoryStats, points: &[DistinctPoint], k: usize, starts: &[usize]) -> KCMeansModel {
    let k_effective = starts.len();
    let mut alphas = Vec::with_capacity(k_effective);
    let mut breaks = Vec::with_capacity(k_effective - 1);
    let mut assignment = vec![0usize; stats.n_categories()];
    let mut objective = 0.0;
    for (cluster, &a) in starts.iter().enumerate() {
        let b = if cluster + 1 < k_effective {
            starts[cluster + 1] - 1
        } else {
            points.len() - 1
        };
        alphas.push(segment_mean(points, a, b));
        objective += segment_cost(points, a, b);
        for p in &points[a..=b] {
            for pos in p.first_pos..=p.last_pos {
                assignment[stats.order[pos]] = cluster;
            }
        }
        if cluster + 1 < k_effective {
            breaks.push(points[starts[cluster + 1]].first_pos);
        }
    }
    KCMeansModel {
        k,
        k_effective,
        breaks,
        alphas,
        assignment,
        objective,
    }
}

/// Exact K-conditional-means fit by dynamic programming.
///
/// Ties in the split argmin are broken toward the smallest split index, so
/// repeated runs are bit-identical. When `k` is at least the number of
/// distinct means, every distinct mean is its own cluster and the objective
/// is zero.
pub fn fit_kcmeans(stats: &CategoryStats, k: usize) -> Result<KCMeansModel> {
    if k == 0 {
        return Err(Error::Domain("k must be at least 1".into()));
    }
    let points = collapse_distinct(stats);
    let m = points.len();
    let k_effective = k.min(m);

    // Weighted prefix sums over distinct points for O(1) segment costs.
    let mut pw = vec![0.0; m + 1];
    let mut ps = vec![0.0; m + 1];
    let mut pq = vec![0.0; m + 1];
    for (j, p) in points.iter().enumerate() {
        pw[j + 1] = pw[j] + p.weight;
        ps[j + 1] = ps[j] + p.weight * p.mean;
        pq[j + 1] = pq[j] + p.weight * p.mean * p.mean;
    }
    let seg = |a: usize, b: usize| -> f64 {
        let w = pw[b + 1] - pw[a];
        let s = ps[b + 1] - ps[a];
        let q = pq[b + 1] - pq[a];
        q - s * s / w
    };

    // cost[t][j]: best cost of covering points 0..=j with t+1 segments.
    let t_max = k_effective;
    let mut cost = vec![vec![f64::INFINITY; m]; t_max];
    let mut parent = vec![vec![0usize; m]; t_max];
    for j in 0..m {
        cost[0][j] = seg(0, j);
    }
    for t in 1..t_max {
        for j in t..m {
            let mut best = f64::INFINITY;
            let mut best_s = t;
            for s in t..=j {
                let c = cost[t - 1][s - 1] + seg(s, j);
                if c < best {
                    best = c;
                    best_s = s;
                }
            }
            cost[t][j] = best;
            parent[t][j] = best_s;
        }
    }

    let mut starts = vec![0usize; k_effective];
    let mut j = m - 1;
    for t in (1..k_effective).rev() {
        starts[t] = parent[t][j];
        j = parent[t][j] - 1;
    }
    Ok(build_model(stats, &points, k, &starts))
}

/// Exhaustive enumeration oracle over the same contiguous-partition space.
///
/// Identical tie-break rule as [`fit_kcmeans`]: among equal-objective
/// partitions, the last split index is minimized first, then the one before
/// it, and so on. Refuses G > 15.
pub fn brute_force_kcmeans(stats: &CategoryStats, k: usize) -> Result<KCMeansModel> {
    if k == 0 {
        return Err(Error::Domain("k must be at least 1".into()));
    }
    if stats.n_categories() > 15 {
        return Err(Error::Domain(
            "brute-force oracle refuses G > 15 categories".into(),
        ));
    }
    let points = collapse_distinct(stats);
    let m = points.len();
    let k_effective = k.min(m);

    let mut best_cost = f64::INFINITY;
    let mut best_starts: Option<Vec<usize>> = None;

    // Enumerate all choices of k_effective - 1 segment starts in 1..m.
    let mut starts = vec![0usize; k_effective];
    enumerate_partitions(m, k_effective, 1, &mut starts, 1, &mut |starts| {
        let mut total = 0.0;
        for (c, &a) in starts.iter().enumerate() {
            let b = if c + 1 < starts.len() {
                starts[c + 1] - 1
            } else {
                m - 1
            };
            total += segment_cost(&points, a, b);
        }
        let better = total < best_cost
            || (total == best_cost
                && best_starts
                    .as_ref()
                    .is_some_and(|prev| reversed_lex_less(starts, prev)));
        if better {
            best_cost = total;
            best_starts = Some(starts.to_vec());
        }
    });

    let starts = best_starts.expect("at least one partition exists");
    Ok(build_model(stats, &points, k, &starts))
}

/// Compares split vectors by last element first; the DP minimizes the final
/// split, then the previous one, and so on.
fn reversed_lex_less(a: &[usize], b: &[usize]) -> bool {
    for (x, y) in a.iter().rev().zip(b.iter().rev()) {
        if x != y {
            return x < y;
        }
    }
    false
}

fn enumerate_partitions(
    m: usize,
    k: usize,
    next_cluster: usize,
    starts: &mut Vec<usize>,
    min_start: usize,
    visit: &mut impl FnMut(&[usize]),
) {
    if next_cluster == k {
        visit(starts);
        return;
    }
    // Cluster `next_cluster` must start early enough to leave room for the rest.
    for s in min_start..=(m - (k - next_cluster)) {
        starts[next_cluster] = s;
        enumerate_partitions(m, k, next_cluster + 1, starts, s + 1, visit);
    }
}
