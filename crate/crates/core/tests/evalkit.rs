use dxmi_core::data::{Dataset, DomainBox, Mixture};
use dxmi_core::eval::{
    auc, auc_standard_error, bayes_auc, density_auc, gaussian_kl, sliced_wasserstein2, wasserstein2_1d, Projections, ScoredSet,
};
use dxmi_core::rng::Rng;
use dxmi_core::Tensor;
use proptest::prelude::*;

/// Bayes AUC of the default mixture against uniform noise on `[-8, 8]²`,
/// brute-forced once with 10⁶ samples per side.
const BAYES_AUC_REFERENCE: f64 = 0.9511;

fn gaussian_cloud(n: usize, shift: [f64; 2], rng: &mut Rng) -> Tensor {
    let z = rng.normals(2 * n);
    Tensor::matrix(n, 2, z.chunks(2).flat_map(|p| [p[0] + shift[0], p[1] + shift[1]]).collect())
}

#[test]
fn translation_oracle() {
    let mut rng = Rng::from_seed(1);
    let n = 100_000;
    let a = gaussian_cloud(n, [0.0, 0.0], &mut rng);
    let b = gaussian_cloud(n, [4.0, 0.0], &mut rng);
    let proj = Projections::new(200, 2, 7).unwrap();
    let sw = sliced_wasserstein2(&a, &b, &proj).unwrap();
    let want = 4.0 / 2f64.sqrt();
    assert!((sw - want).abs() <= 0.05 * want, "SW {sw} vs {want}");
}

#[test]
fn one_dimensional_sw_is_sorted_w2() {
    let mut rng = Rng::from_seed(2);
    for _ in 0..20 {
        let n = 1 + rng.below(300);
        let a: Vec<f64> = (0..n).map(|_| rng.uniform_in(-5.0, 5.0)).collect();
        let b: Vec<f64> = rng.normals(n);
        let w = wasserstein2_1d(&a, &b).unwrap();
        let p = Projections::from_directions(vec![vec![1.0]]).unwrap();
        let sw = sliced_wasserstein2(&Tensor::matrix(n, 1, a), &Tensor::matrix(n, 1, b), &p).unwrap();
        assert!((sw - w).abs() <= 1e-9);
    }
}

#[test]
fn sw_symmetry_and_triangle() {
    let mut rng = Rng::from_seed(3);
    let p = Projections::new(100, 2, 0).unwrap();
    for _ in 0..10 {
        let a = gaussian_cloud(400, [rng.normal(), rng.normal()], &mut rng);
        let b = gaussian_cloud(400, [rng.normal(), rng.normal()], &mut rng);
        let c = gaussian_cloud(400, [rng.normal(), rng.normal()], &mut rng);
        let ab = sliced_wasserstein2(&a, &b, &p).unwrap();
        let ba = sliced_wasserstein2(&b, &a, &p).unwrap();
        assert!((ab - ba).abs() <= 1e-12);
        let ac = sliced_wasserstein2(&a, &c, &p).unwrap();
        let cb = sliced_wasserstein2(&c, &b, &p).unwrap();
        assert!(ab <= ac + cb + 1e-9);
    }
}

#[test]
fn sw_errors_and_unequal_sizes() {
    let p = Projections::new(10, 2, 0).unwrap();
    let empty = Tensor::matrix(0, 2, vec![]);
    let a = Tensor::matrix(2, 2, vec![0.0; 4]);
    assert!(sliced_wasserstein2(&empty, &a, &p).is_err());
    let mut rng = Rng::from_seed(4);
    let big = gaussian_cloud(500, [0.0, 0.0], &mut rng);
    let small = gaussian_cloud(200, [0.0, 0.0], &mut rng);
    let x = sliced_wasserstein2(&big, &small, &p).unwrap();
    assert_eq!(x, sliced_wasserstein2(&big, &small, &p).unwrap());
    assert!(x.is_finite());
}

#[test]
fn projections_are_unit_and_seeded() {
    let p = Projections::new(50, 3, 11).unwrap();
    assert!(p.directions().iter().all(|d| (d.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12));
    assert_eq!(p, Projections::new(50, 3, 11).unwrap());
    assert!(Projections::new(0, 3, 11).is_err());
}

#[test]
fn bayes_self_consistency() {
    let ds = Dataset::EightGaussians;
    let m = ds.mixture().unwrap();
    let b = ds.domain();
    let mut rng = Rng::from_seed(5);
    let n = 10_000;
    let data = m.sample(n, &mut rng);
    let noise = b.sample(n, &mut rng);
    let a = density_auc(|x| m.log_density(x), &data, &noise).unwrap();
    let reference = bayes_auc(&m, &b, 100_000, &mut Rng::from_seed(6)).unwrap();
    let se = auc_standard_error(a, n, n);
    assert!((a - reference).abs() <= 2.0 * se, "AUC {a} vs Bayes {reference} (se {se})");
}

#[test]
fn bayes_reference_reproduces() {
    let ds = Dataset::EightGaussians;
    let a = bayes_auc(&ds.mixture().unwrap(), &ds.domain(), 100_000, &mut Rng::from_seed(7)).unwrap();
    assert!((a - BAYES_AUC_REFERENCE).abs() <= 0.005, "Bayes AUC {a}");
}

#[test]
fn bayes_limits() {
    let b = DomainBox::cube(2, 8.0);
    let tight = Mixture::eight_gaussians(4.0, 1e-3);
    assert!(bayes_auc(&tight, &b, 20_000, &mut Rng::from_seed(8)).unwrap() >= 0.999);
    let mut rng = Rng::from_seed(9);
    let x = b.sample(5000, &mut rng);
    let y = b.sample(5000, &mut rng);
    let uniform = -b.volume().ln();
    assert_eq!(density_auc(|_| uniform, &x, &y).unwrap(), 0.5);
}

#[test]
fn kl_closed_form_and_monte_carlo() {
    assert_eq!(gaussian_kl(&[1.0, 2.0], &[0.5, 3.0], &[1.0, 2.0], &[0.5, 3.0]).unwrap(), 0.0);
    assert!((gaussian_kl(&[0.0], &[1.0], &[1.0], &[1.0]).unwrap() - 0.5).abs() < 1e-15);

    let (m1, v1, m2, v2) = ([0.3, -0.5], [0.8, 1.7], [-0.2, 0.4], [1.3, 0.6]);
    let kl = gaussian_kl(&m1, &v1, &m2, &v2).unwrap();
    let logpdf = |x: &[f64], m: &[f64], v: &[f64]| -> f64 {
        (0..2).map(|k| -0.5 * (2.0 * std::f64::consts::PI * v[k]).ln() - (x[k] - m[k]).powi(2) / (2.0 * v[k])).sum()
    };
    let mut rng = Rng::from_seed(10);
    let n = 1_000_000;
    let mut s = 0.0;
    let mut s2 = 0.0;
    for _ in 0..n {
        let x = [m1[0] + v1[0].sqrt() * rng.normal(), m1[1] + v1[1].sqrt() * rng.normal()];
        let r = logpdf(&x, &m1, &v1) - logpdf(&x, &m2, &v2);
        s += r;
        s2 += r * r;
    }
    let mean = s / n as f64;
    let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
    assert!((mean - kl).abs() <= 3.0 * se, "MC {mean} vs {kl} (se {se})");
}

#[test]
fn auc_edge_cases() {
    assert_eq!(auc(&ScoredSet { positives: vec![5.0, 6.0], negatives: vec![1.0, 2.0] }).unwrap(), 1.0);
    assert_eq!(auc(&ScoredSet { positives: vec![1.0, 3.0, 3.0], negatives: vec![3.0, 1.0, 3.0] }).unwrap(), 0.5);
    assert!(auc(&ScoredSet { positives: vec![], negatives: vec![1.0] }).is_err());
    assert!(auc(&ScoredSet { positives: vec![f64::NAN], negatives: vec![1.0] }).is_err());
}

fn scores() -> impl Strategy<Value = Vec<f64>> {
    // Small integer grid so ties are common.
    prop::collection::vec((-20i32..20).prop_map(|v| v as f64 * 0.25), 1..60)
}

proptest! {
    #[test]
    fn auc_is_invariant_under_increasing_maps(pos in scores(), neg in scores()) {
        let base = auc(&ScoredSet { positives: pos.clone(), negatives: neg.clone() }).unwrap();
        let maps: [fn(f64) -> f64; 3] = [|s| s.exp(), |s| 3.0 * s - 7.0, |s| s * s * s + s];
        for f in maps {
            let mapped = ScoredSet { positives: pos.iter().map(|&s| f(s)).collect(), negatives: neg.iter().map(|&s| f(s)).collect() };
            prop_assert_eq!(auc(&mapped).unwrap(), base);
        }
    }

    #[test]
    fn auc_complement_identity(pos in scores(), neg in scores()) {
        let a = auc(&ScoredSet { positives: pos.clone(), negatives: neg.clone() }).unwrap();
        let b = auc(&ScoredSet { positives: neg, negatives: pos }).unwrap();
        prop_assert_eq!(a + b, 1.0);
    }

    #[test]
    fn auc_in_unit_interval(pos in scores(), neg in scores()) {
        let a = auc(&ScoredSet { positives: pos, negatives: neg }).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
    }
}
