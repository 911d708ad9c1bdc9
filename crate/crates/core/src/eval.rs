//! Sample-quality and energy-quality metrics.

use crate::data::{DomainBox, Mixture};
use crate::error::{Error, Result};
use crate::rng::{Rng, Stream};
use crate::tensor::Tensor;

/// A fixed set of random unit directions.
#[derive(Debug, Clone, PartialEq)]
pub struct Projections {
    dim: usize,
    dirs: Vec<Vec<f64>>,
    seed: u64,
}

impl Projections {
    pub fn new(n: usize, dim: usize, seed: u64) -> Result<Self> {
        if n == 0 || dim == 0 {
            return Err(Error::Invalid("need at least one projection of positive dimension".into()));
        }
        let mut rng = Rng::stream(seed, Stream::Projection, 0);
        let mut dirs = Vec::with_capacity(n);
        while dirs.len() < n {
            let v = rng.normals(dim);
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                dirs.push(v.iter().map(|x| x / norm).collect());
            }
        }
        Ok(Self { dim, dirs, seed })
    }

    /// Explicit directions; each is normalized to unit length.
    pub fn from_directions(dirs: Vec<Vec<f64>>) -> Result<Self> {
        let dim = dirs.first().map_or(0, Vec::len);
        if dim == 0 || dirs.iter().any(|d| d.len() != dim) {
            return Err(Error::Invalid("directions must share a positive dimension".into()));
        }
        let dirs = dirs
            .into_iter()
            .map(|d| {
                let n = d.iter().map(|x| x * x).sum::<f64>().sqrt();
                d.iter().map(|x| x / n).collect()
            })
            .collect();
        Ok(Self { dim, dirs, seed: 0 })
    }

    pub fn len(&self) -> usize {
        self.dirs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dirs.is_empty()
    }

    pub fn directions(&self) -> &[Vec<f64>] {
        &self.dirs
    }
}

fn project_sorted(x: &Tensor, rows: &[usize], dir: &[f64]) -> Vec<f64> {
    let mut p: Vec<f64> = rows.iter().map(|&i| x.row(i).iter().zip(dir).map(|(a, b)| a * b).sum()).collect();
    p.sort_by(f64::total_cmp);
    p
}

/// Row subset used when the two sets differ in size: the larger one is
/// shuffled deterministically and truncated.
fn matched_rows(n: usize, keep: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    if keep < n {
        Rng::stream(seed, Stream::Projection, 1).shuffle(&mut idx);
        idx.truncate(keep);
    }
    idx
}

/// Sliced 2-Wasserstein distance: `sqrt(mean_θ W₂²(θᵀA, θᵀB))` with the
/// sorted coupling in each projection.
pub fn sliced_wasserstein2(a: &Tensor, b: &Tensor, proj: &Projections) -> Result<f64> {
    if a.rows() == 0 || b.rows() == 0 {
        return Err(Error::Invalid("sliced Wasserstein needs non-empty sets".into()));
    }
    if a.cols() != proj.dim || b.cols() != proj.dim {
        return Err(Error::Shape(format!("points have {} / {} columns, projections {}", a.cols(), b.cols(), proj.dim)));
    }
    let n = a.rows().min(b.rows());
    let ra = matched_rows(a.rows(), n, proj.seed);
    let rb = matched_rows(b.rows(), n, proj.seed);
    let mut total = 0.0;
    for dir in &proj.dirs {
        let pa = project_sorted(a, &ra, dir);
        let pb = project_sorted(b, &rb, dir);
        total += pa.iter().zip(&pb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n as f64;
    }
    Ok((total / proj.dirs.len() as f64).sqrt())
}

/// Exact 1D 2-Wasserstein distance between equal-size empirical measures.
pub fn wasserstein2_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Invalid("1D W2 needs equal non-empty samples".into()));
    }
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(f64::total_cmp);
    sb.sort_by(f64::total_cmp);
    Ok((sa.iter().zip(&sb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64).sqrt())
}

/// Scores of positives (data) and negatives (noise); larger means more data-like.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSet {
    pub positives: Vec<f64>,
    pub negatives: Vec<f64>,
}

impl ScoredSet {
    /// Lower energy counts as more data-like.
    pub fn from_energies(data: &[f64], noise: &[f64]) -> Self {
        Self { positives: data.iter().map(|e| -e).collect(), negatives: noise.iter().map(|e| -e).collect() }
    }
}

/// Mann–Whitney AUC: the probability that a positive outscores a negative,
/// ties counting one half.
pub fn auc(scored: &ScoredSet) -> Result<f64> {
    let (np, nn) = (scored.positives.len(), scored.negatives.len());
    if np == 0 || nn == 0 {
        return Err(Error::Invalid("AUC needs positives and negatives".into()));
    }
    if scored.positives.iter().chain(&scored.negatives).any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("AUC scores".into()));
    }
    let mut all: Vec<(f64, bool)> = scored
        .positives
        .iter()
        .map(|&s| (s, true))
        .chain(scored.negatives.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Twice the U statistic, accumulated exactly in integers.
    let mut twice_u: u128 = 0;
    let mut neg_below: u128 = 0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        let (mut p, mut q) = (0u128, 0u128);
        while j < all.len() && all[j].0 == all[i].0 {
            if all[j].1 {
                p += 1;
            } else {
                q += 1;
            }
            j += 1;
        }
        twice_u += 2 * p * neg_below + p * q;
        neg_below += q;
        i = j;
    }
    Ok(twice_u as f64 / (2 * np as u128 * nn as u128) as f64)
}

/// Hanley–McNeil standard error of an AUC estimate.
pub fn auc_standard_error(a: f64, n_pos: usize, n_neg: usize) -> f64 {
    let q1 = a / (2.0 - a);
    let q2 = 2.0 * a * a / (1.0 + a);
    let var = (a * (1.0 - a) + (n_pos as f64 - 1.0) * (q1 - a * a) + (n_neg as f64 - 1.0) * (q2 - a * a))
        / (n_pos as f64 * n_neg as f64);
    var.max(0.0).sqrt()
}

/// AUC of an arbitrary log-density scoring data against uniform noise.
pub fn density_auc(log_density: impl Fn(&[f64]) -> f64, data: &Tensor, noise: &Tensor) -> Result<f64> {
    let pos = (0..data.rows()).map(|i| log_density(data.row(i))).collect();
    let neg = (0..noise.rows()).map(|i| log_density(noise.row(i))).collect();
    auc(&ScoredSet { positives: pos, negatives: neg })
}

/// Ceiling AUC for an energy: the true mixture log-density as the score,
/// `n` mixture draws against `n` uniform draws over `domain`.
pub fn bayes_auc(mixture: &Mixture, domain: &DomainBox, n: usize, rng: &mut Rng) -> Result<f64> {
    let data = mixture.sample(n, rng);
    let noise = domain.sample(n, rng);
    density_auc(|x| mixture.log_density(x), &data, &noise)
}

/// `KL(N(m1, diag v1) ‖ N(m2, diag v2))`.
pub fn gaussian_kl(mean1: &[f64], var1: &[f64], mean2: &[f64], var2: &[f64]) -> Result<f64> {
    let d = mean1.len();
    if var1.len() != d || mean2.len() != d || var2.len() != d {
        return Err(Error::Shape("gaussian_kl arguments differ in length".into()));
    }
    if var1.iter().chain(var2).any(|v| !(*v > 0.0)) {
        return Err(Error::Invalid("variances must be positive".into()));
    }
    Ok(0.5
        * (0..d)
            .map(|k| (var2[k] / var1[k]).ln() + (var1[k] + (mean1[k] - mean2[k]).powi(2)) / var2[k] - 1.0)
            .sum::<f64>())
}
