//! Synthetic datasets: the eight-Gaussians ring, uniform box noise and a
//! two-point 1D toy, plus the exact mixture log-density used as an oracle.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Equal-weight isotropic Gaussian mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    centers: Vec<Vec<f64>>,
    std: f64,
}

impl Mixture {
    pub fn new(centers: Vec<Vec<f64>>, std: f64) -> Result<Self> {
        if centers.is_empty() {
            return Err(Error::Invalid("mixture needs at least one center".into()));
        }
        if !(std > 0.0) {
            return Err(Error::Invalid(format!("mixture std must be positive, got {std}")));
        }
        let d = centers[0].len();
        if d == 0 || centers.iter().any(|c| c.len() != d) {
            return Err(Error::Invalid("mixture centers must share a positive dimension".into()));
        }
        for i in 0..centers.len() {
            for j in 0..i {
                if centers[i] == centers[j] {
                    return Err(Error::Invalid("mixture centers must be distinct".into()));
                }
            }
        }
        Ok(Self { centers, std })
    }

    /// Eight components at angles `k·45°` on a circle.
    pub fn eight_gaussians(radius: f64, std: f64) -> Self {
        let centers = (0..8)
            .map(|k| {
                let a = k as f64 * std::f64::consts::FRAC_PI_4;
                vec![radius * a.cos(), radius * a.sin()]
            })
            .collect();
        Self::new(centers, std).expect("valid eight-gaussians mixture")
    }

    pub fn dim(&self) -> usize {
        self.centers[0].len()
    }

    pub fn centers(&self) -> &[Vec<f64>] {
        &self.centers
    }

    pub fn std(&self) -> f64 {
        self.std
    }

    pub fn weights(&self) -> Vec<f64> {
        vec![1.0 / self.centers.len() as f64; self.centers.len()]
    }

    /// Draws `n` points; also returns the component of each draw.
    pub fn sample_labeled(&self, n: usize, rng: &mut Rng) -> (Tensor, Vec<usize>) {
        let d = self.dim();
        let mut data = Vec::with_capacity(n * d);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let k = rng.below(self.centers.len());
            let z = rng.normals(d);
            data.extend(self.centers[k].iter().zip(&z).map(|(c, z)| c + self.std * z));
            labels.push(k);
        }
        (Tensor::matrix(n, d, data), labels)
    }

    pub fn sample(&self, n: usize, rng: &mut Rng) -> Tensor {
        self.sample_labeled(n, rng).0
    }

    /// Exact log-density via a max-shifted log-sum-exp.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        let d = self.dim() as f64;
        let var = self.std * self.std;
        let log_norm = -0.5 * d * (2.0 * std::f64::consts::PI * var).ln() - (self.centers.len() as f64).ln();
        let exps: Vec<f64> = self
            .centers
            .iter()
            .map(|c| -c.iter().zip(x).map(|(c, x)| (x - c) * (x - c)).sum::<f64>() / (2.0 * var))
            .collect();
        let m = exps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        log_norm + m + exps.iter().map(|e| (e - m).exp()).sum::<f64>().ln()
    }

    pub fn log_density_rows(&self, x: &Tensor) -> Vec<f64> {
        (0..x.rows()).map(|i| self.log_density(x.row(i))).collect()
    }
}

/// Axis-aligned box.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl DomainBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::Invalid("box bounds must have equal positive length".into()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u)) {
            return Err(Error::Invalid("box needs lower < upper per coordinate".into()));
        }
        Ok(Self { lower, upper })
    }

    pub fn cube(dim: usize, half_width: f64) -> Self {
        Self::new(vec![-half_width; dim], vec![half_width; dim]).expect("valid cube")
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn volume(&self) -> f64 {
        self.lower.iter().zip(&self.upper).map(|(l, u)| u - l).product()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (l, u))| *l <= *v && *v <= *u)
    }

    pub fn sample(&self, n: usize, rng: &mut Rng) -> Tensor {
        let d = self.dim();
        let mut data = Vec::with_capacity(n * d);
        for _ in 0..n {
            for k in 0..d {
                data.push(rng.uniform_in(self.lower[k], self.upper[k]));
            }
        }
        Tensor::matrix(n, d, data)
    }
}

/// Named datasets selectable from a run configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dataset {
    /// Eight Gaussians, radius 4, std 0.5, domain `[-8, 8]²`.
    #[serde(rename = "8gaussians")]
    EightGaussians,
    /// The points `-1` and `+1` in 1D with equal probability.
    TwoPoints,
}

pub const EIGHT_GAUSSIANS_RADIUS: f64 = 4.0;
pub const EIGHT_GAUSSIANS_STD: f64 = 0.5;
pub const EIGHT_GAUSSIANS_HALF_WIDTH: f64 = 8.0;

impl Dataset {
    pub fn dim(self) -> usize {
        match self {
            Dataset::EightGaussians => 2,
            Dataset::TwoPoints => 1,
        }
    }

    pub fn mixture(self) -> Option<Mixture> {
        match self {
            Dataset::EightGaussians => Some(Mixture::eight_gaussians(EIGHT_GAUSSIANS_RADIUS, EIGHT_GAUSSIANS_STD)),
            Dataset::TwoPoints => None,
        }
    }

    pub fn domain(self) -> DomainBox {
        match self {
            Dataset::EightGaussians => DomainBox::cube(2, EIGHT_GAUSSIANS_HALF_WIDTH),
            Dataset::TwoPoints => DomainBox::cube(1, 3.0),
        }
    }

    /// Coordinate scale that sample-quality metrics are normalized by.
    pub fn scale(self) -> f64 {
        match self {
            Dataset::EightGaussians => EIGHT_GAUSSIANS_RADIUS,
            Dataset::TwoPoints => 1.0,
        }
    }

    pub fn sample(self, n: usize, rng: &mut Rng) -> Tensor {
        match self {
            Dataset::EightGaussians => self.mixture().unwrap().sample(n, rng),
            Dataset::TwoPoints => {
                let data = (0..n).map(|_| if rng.below(2) == 0 { -1.0 } else { 1.0 }).collect();
                Tensor::matrix(n, 1, data)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mixture_validation() {
        assert!(Mixture::new(vec![vec![0.0], vec![0.0]], 1.0).is_err());
        assert!(Mixture::new(vec![vec![0.0]], 0.0).is_err());
        assert!(Mixture::new(vec![], 1.0).is_err());
        assert!(DomainBox::new(vec![1.0], vec![1.0]).is_err());
    }

    #[test]
    fn log_density_at_center_matches_direct_sum() {
        let m = Mixture::eight_gaussians(4.0, 0.5);
        let x = m.centers()[0].clone();
        let var: f64 = 0.25;
        let direct: f64 = m
            .centers()
            .iter()
            .map(|c| {
                let d2: f64 = c.iter().zip(&x).map(|(c, x)| (c - x).powi(2)).sum();
                0.125 * (-d2 / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var)
            })
            .sum();
        let lp = m.log_density(&x);
        assert!((lp - direct.ln()).abs() < 1e-12);
        assert!(lp.exp() >= 0.125 / (2.0 * std::f64::consts::PI * var));
    }

    #[test]
    fn log_density_far_away_is_finite() {
        let m = Mixture::eight_gaussians(4.0, 0.5);
        let lp = m.log_density(&[1e6, -3.0]);
        assert!(lp.is_finite());
        assert!(lp < -1e12);
    }

    #[test]
    fn eight_gaussians_box_contains_centers() {
        let ds = Dataset::EightGaussians;
        let b = ds.domain();
        assert!(ds.mixture().unwrap().centers().iter().all(|c| b.contains(c)));
    }

    #[test]
    fn uniform_samples_stay_inside() {
        let b = DomainBox::new(vec![-1.0, 2.0], vec![3.0, 2.5]).unwrap();
        let mut rng = Rng::from_seed(3);
        let x = b.sample(5000, &mut rng);
        assert!((0..x.rows()).all(|i| b.contains(x.row(i))));
    }

    #[test]
    fn two_points_only_hits_plus_minus_one() {
        let mut rng = Rng::from_seed(9);
        let x = Dataset::TwoPoints.sample(100, &mut rng);
        assert!(x.data().iter().all(|v| *v == 1.0 || *v == -1.0));
    }
}
