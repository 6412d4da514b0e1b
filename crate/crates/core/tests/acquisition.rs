mod common;

use longrun::acquisition::{log_nei, log_nei_samples, optimize_batch, quasi_random_design, AcquisitionConfig};
use longrun::gp::{FittedGp, KernelFamily, PosteriorGaussian, SpatialKernelParams, TrainingSet};
use longrun::surrogate::Surrogate;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// A Gaussian with an explicit mean function and an RBF covariance of
/// adjustable amplitude, independent of any fitted model.
struct Fixed {
    mean: Box<dyn Fn(f64) -> f64 + Sync>,
    var: f64,
    ls: f64,
}

impl Surrogate for Fixed {
    fn dim(&self) -> usize {
        1
    }
    fn output_scale(&self) -> f64 {
        1.0
    }
    fn posterior(&self, x: &[Vec<f64>]) -> longrun::Result<PosteriorGaussian> {
        let n = x.len();
        Ok(PosteriorGaussian {
            mean: DVector::from_fn(n, |i, _| (self.mean)(x[i][0])),
            cov: DMatrix::from_fn(n, n, |i, j| self.var * (-0.5 * ((x[i][0] - x[j][0]) / self.ls).powi(2)).exp()),
        })
    }
    fn posterior_mean(&self, x: &[f64]) -> f64 {
        (self.mean)(x[0])
    }
}

fn noiseless_gp(xs: &[f64], f: impl Fn(f64) -> f64, ls: f64) -> FittedGp {
    let t = TrainingSet::noiseless(xs.iter().map(|x| vec![*x]).collect(), xs.iter().map(|x| f(*x)).collect()).unwrap();
    FittedGp::with_params(&t, &SpatialKernelParams::isotropic(KernelFamily::Rbf, 1, ls, 1.0), 1e-8).unwrap()
}

#[test]
fn designs_are_deterministic_and_in_bounds() {
    let b = vec![(-5.0, 10.0), (2.0, 3.0)];
    let one = quasi_random_design(&b, 1, 3).unwrap();
    assert_eq!(one.len(), 1);
    assert!(one[0][0] >= -5.0 && one[0][0] <= 10.0 && one[0][1] >= 2.0 && one[0][1] <= 3.0);
    assert_eq!(quasi_random_design(&b, 20, 9).unwrap(), quasi_random_design(&b, 20, 9).unwrap());
    assert!(quasi_random_design(&[(1.0, 1.0)], 3, 0).is_err());
    assert!(quasi_random_design(&[(0.0, f64::NAN)], 3, 0).is_err());
    assert!(quasi_random_design(&b, 0, 0).is_err());
}

#[test]
fn sixteen_points_fill_every_half() {
    for seed in 0..10 {
        let pts = quasi_random_design(&[(0.0, 1.0), (0.0, 1.0)], 16, seed).unwrap();
        for axis in 0..2 {
            let low = pts.iter().filter(|p| p[axis] < 0.5).count();
            assert!((4..=12).contains(&low), "seed {seed} axis {axis}: {low}");
        }
    }
}

#[test]
fn hopeless_candidate_scores_negligibly() {
    let gp = noiseless_gp(&[0.1, 0.9], |x| if x < 0.5 { 10.0 } else { 0.0 }, 0.1);
    let sd = gp.output_scale();
    let v = log_nei(&gp, &[vec![0.9]], &[vec![0.1]], &AcquisitionConfig::default()).unwrap();
    assert!(v <= (1e-3 * sd).ln(), "{v}");
}

#[test]
fn deterministic_limit_recovers_the_gap() {
    let delta = 2.0;
    let m = Fixed {
        mean: Box::new(move |x| if x > 0.5 { 1.0 + delta } else { 1.0 }),
        var: 1e-12,
        ls: 0.1,
    };
    let v = log_nei(&m, &[vec![0.8]], &[vec![0.2], vec![0.3]], &AcquisitionConfig::default()).unwrap();
    assert!((v - delta.ln()).abs() <= 0.05 * delta.ln().abs(), "{v} vs {}", delta.ln());
}

#[test]
fn baseline_order_does_not_matter() {
    let gp = noiseless_gp(&[0.1, 0.4, 0.6, 0.9], |x| (6.0 * x).sin(), 0.2);
    let cfg = AcquisitionConfig::default();
    let a = log_nei(&gp, &[vec![0.5]], &[vec![0.1], vec![0.4], vec![0.9]], &cfg).unwrap();
    let b = log_nei(&gp, &[vec![0.5]], &[vec![0.9], vec![0.1], vec![0.4]], &cfg).unwrap();
    assert_eq!(a, b);
}

#[test]
fn higher_mean_means_higher_value() {
    let mut r = common::rng(4);
    for _ in 0..20 {
        let var = r.random_range(0.01..1.0);
        let base = r.random_range(-1.0..1.0);
        let x = r.random_range(0.5..1.0);
        let bump = r.random_range(0.01..0.5);
        let low = Fixed { mean: Box::new(move |_| base), var, ls: 0.2 };
        let high = Fixed { mean: Box::new(move |t| if t > 0.45 { base + bump } else { base }), var, ls: 0.2 };
        let cfg = AcquisitionConfig::default();
        let bl = [vec![0.1], vec![0.2]];
        let a = log_nei(&low, &[vec![x]], &bl, &cfg).unwrap();
        let b = log_nei(&high, &[vec![x]], &bl, &cfg).unwrap();
        assert!(b > a, "{a} {b}");
    }
}

#[test]
fn estimate_converges_with_more_samples() {
    let mut r = common::rng(5);
    for case in 0..10 {
        let shift = r.random_range(-1.0..1.0);
        let m = Fixed { mean: Box::new(move |t| shift * t), var: r.random_range(0.1..1.0), ls: 0.3 };
        let cand = [vec![r.random::<f64>()]];
        let bl = [vec![0.2], vec![0.5]];
        let small = AcquisitionConfig { mc_samples: 256, seed: case, ..Default::default() };
        let large = AcquisitionConfig { mc_samples: 4096, seed: case, ..Default::default() };
        let s = log_nei_samples(&m, &cand, &bl, &small).unwrap();
        let e: Vec<f64> = s.iter().map(|v| v.exp()).collect();
        let mean = e.iter().sum::<f64>() / e.len() as f64;
        let sd = (e.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (e.len() - 1) as f64).sqrt();
        let se_log = sd / (e.len() as f64).sqrt() / mean;
        let a = log_nei(&m, &cand, &bl, &small).unwrap();
        let b = log_nei(&m, &cand, &bl, &large).unwrap();
        assert!((a - b).abs() <= 3.0 * se_log, "case {case}: {a} vs {b}, se {se_log}");
    }
}

fn grid_argmax(f: impl Fn(f64) -> f64) -> f64 {
    let mut best = (0.0, f64::NEG_INFINITY);
    for i in 0..=400 {
        let x = i as f64 / 400.0;
        let v = f(x);
        if v > best.1 {
            best = (x, v);
        }
    }
    best.0
}

#[test]
fn first_arm_finds_the_single_peak() {
    let peak = 0.63;
    let xs: Vec<f64> = (0..=20).map(|i| i as f64 / 20.0).collect();
    let gp = noiseless_gp(&xs, |x| (-(x - peak).powi(2) / 0.02).exp(), 0.15);
    let bounds = [(0.0, 1.0)];
    let baseline: Vec<Vec<f64>> = [0.0, 0.3, 0.9].iter().map(|x| vec![*x]).collect();
    let cfg = AcquisitionConfig::default();
    let batch = optimize_batch(&gp, &bounds, &cfg, &baseline, &[]).unwrap();
    assert!(!batch.fallback);
    let oracle = grid_argmax(|x| log_nei(&gp, &[vec![x]], &baseline, &cfg).unwrap());
    assert!((oracle - peak).abs() < 0.05, "grid argmax {oracle}");
    assert!((batch.arms[0][0] - peak).abs() < 0.05, "{:?}", batch.arms);
}

#[test]
fn batch_of_two_covers_both_peaks() {
    let f = |x: f64| (-(x - 0.25).powi(2) / 0.01).exp() + (-(x - 0.75).powi(2) / 0.01).exp();
    let xs: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0 + 0.02).filter(|x| *x <= 1.0).collect();
    let t = TrainingSet::new(xs.iter().map(|x| vec![*x]).collect(), xs.iter().map(|x| f(*x)).collect(), vec![0.05; xs.len()])
        .unwrap();
    let gp = FittedGp::with_params(&t, &SpatialKernelParams::isotropic(KernelFamily::Rbf, 1, 0.08, 1.0), 1e-4).unwrap();
    let baseline: Vec<Vec<f64>> = xs.iter().map(|x| vec![*x]).collect();
    let cfg = AcquisitionConfig { batch_size: 2, ..Default::default() };
    let batch = optimize_batch(&gp, &[(0.0, 1.0)], &cfg, &baseline, &[]).unwrap();
    let (a, b) = (batch.arms[0][0], batch.arms[1][0]);
    assert!((a - b).abs() >= 0.25, "{a} {b}");
}

#[test]
fn arms_respect_bounds_and_are_distinct() {
    let mut r = common::rng(6);
    let bounds = [(-3.0, 7.0), (100.0, 101.0)];
    let x: Vec<Vec<f64>> = (0..8).map(|_| vec![r.random(), r.random()]).collect();
    let y: Vec<f64> = x.iter().map(|p| p[0] * p[1] - (p[0] - 0.5).powi(2)).collect();
    let gp = FittedGp::with_params(
        &TrainingSet::new(x.clone(), y, vec![0.1; 8]).unwrap(),
        &SpatialKernelParams::isotropic(KernelFamily::Matern52, 2, 0.3, 1.0),
        1e-3,
    )
    .unwrap();
    let raw: Vec<Vec<f64>> = x.iter().map(|p| vec![-3.0 + 10.0 * p[0], 100.0 + p[1]]).collect();
    let cfg = AcquisitionConfig { batch_size: 4, ..Default::default() };
    let batch = optimize_batch(&gp, &bounds, &cfg, &raw[..4], &raw[4..]).unwrap();
    assert_eq!(batch.arms.len(), 4);
    for a in &batch.arms {
        assert!(a[0] >= -3.0 && a[0] <= 7.0 && a[1] >= 100.0 && a[1] <= 101.0);
    }
    let unit = |a: &Vec<f64>| vec![(a[0] + 3.0) / 10.0, a[1] - 100.0];
    let all: Vec<Vec<f64>> = batch.arms.iter().chain(&raw).map(unit).collect();
    for i in 0..all.len() {
        for j in 0..i {
            let d: f64 = all[i].iter().zip(&all[j]).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
            assert!(d >= 1e-6);
        }
    }
    let again = optimize_batch(&gp, &bounds, &cfg, &raw[..4], &raw[4..]).unwrap();
    assert_eq!(batch, again);
}
