mod common;

use std::collections::BTreeMap;
use std::time::Instant;

use common::{kernel, random_points, rng};
use longrun::gp::{fit_gp, GpConfig, KernelFamily, SpatialKernelParams, TrainingSet};
use longrun::multitask::{fit_mtgp, icm_kernel, FittedMtgp, MtgpConfig, TaskCovariance, TaskId};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;

fn tasks(sets: Vec<TrainingSet>) -> BTreeMap<TaskId, TrainingSet> {
    sets.into_iter().enumerate().map(|(i, s)| (TaskId(i), s)).collect()
}

/// Joint-Gaussian conditioning by explicit inversion, with per-task
/// centering and a pooled scale computed here from scratch.
fn brute_task_posterior(
    per_task: &BTreeMap<TaskId, TrainingSet>,
    k: &DMatrix<f64>,
    sp: &SpatialKernelParams,
    noise_var: f64,
    jitter: f64,
    t: usize,
    q: &[Vec<f64>],
) -> (DVector<f64>, DMatrix<f64>) {
    let mut pts = Vec::new();
    let mut centered = Vec::new();
    let mut means = vec![0.0; k.nrows()];
    let mut sems = Vec::new();
    for (task, set) in per_task {
        let m = set.y.iter().sum::<f64>() / set.len() as f64;
        means[task.0] = m;
        for i in 0..set.len() {
            pts.push((task.0, set.x[i].clone()));
            centered.push(set.y[i] - m);
            sems.push(set.noise_sem[i]);
        }
    }
    let n = pts.len();
    let sd = (centered.iter().map(|v| v * v).sum::<f64>() / (n as f64 - 1.0)).sqrt();
    let y = DVector::from_iterator(n, centered.iter().map(|v| v / sd));
    let mut g = DMatrix::from_fn(n, n, |i, j| k[(pts[i].0, pts[j].0)] * kernel(sp, &pts[i].1, &pts[j].1));
    for i in 0..n {
        g[(i, i)] += noise_var + jitter + (sems[i] / sd).powi(2);
    }
    let gi = g.try_inverse().unwrap();
    let kq = DMatrix::from_fn(n, q.len(), |i, j| k[(pts[i].0, t)] * kernel(sp, &pts[i].1, &q[j]));
    let kqq = DMatrix::from_fn(q.len(), q.len(), |i, j| k[(t, t)] * kernel(sp, &q[i], &q[j]));
    let mean = kq.transpose() * &gi * y;
    let cov = kqq - kq.transpose() * &gi * &kq;
    (mean.map(|v| means[t] + sd * v), cov * sd * sd)
}

fn random_set(r: &mut rand_chacha::ChaCha8Rng, n: usize, d: usize) -> TrainingSet {
    let x = random_points(r, n, d);
    let y = x.iter().map(|p| p.iter().map(|v| (4.0 * v).sin()).sum::<f64>() + 0.1 * r.random::<f64>()).collect();
    TrainingSet::new(x, y, vec![0.05; n]).unwrap()
}

fn noiseless(s: TrainingSet) -> TrainingSet {
    TrainingSet::noiseless(s.x, s.y).unwrap()
}

#[test]
fn icm_kernel_one_task_is_spatial_kernel() {
    let sp = SpatialKernelParams::new(KernelFamily::Matern52, vec![0.3, 0.7], 1.0);
    let k = TaskCovariance::from_matrix(&DMatrix::from_element(1, 1, 1.0)).unwrap();
    let mut r = rng(1);
    for _ in 0..20 {
        let a = random_points(&mut r, 1, 2).remove(0);
        let b = random_points(&mut r, 1, 2).remove(0);
        let v = icm_kernel(TaskId(0), &a, TaskId(0), &b, &k, &sp).unwrap();
        assert!((v - kernel(&sp, &a, &b)).abs() < 1e-8);
    }
}

#[test]
fn icm_kernel_zero_and_rank_one_task_matrices() {
    let sp = SpatialKernelParams::isotropic(KernelFamily::Rbf, 1, 0.2, 1.0);
    let diag = TaskCovariance::from_factor(DMatrix::identity(2, 2)).unwrap();
    assert_eq!(icm_kernel(TaskId(0), &[0.1], TaskId(1), &[0.1], &diag, &sp).unwrap(), 0.0);
    let ones = TaskCovariance::from_factor(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 0.0])).unwrap();
    for (t, u) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
        let v = icm_kernel(TaskId(t), &[0.4], TaskId(u), &[0.4], &ones, &sp).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
    }
    assert!(icm_kernel(TaskId(2), &[0.4], TaskId(0), &[0.4], &ones, &sp).is_err());
}

#[test]
fn icm_kernel_is_symmetric_under_joint_swap() {
    let sp = SpatialKernelParams::new(KernelFamily::Matern52, vec![0.4], 1.3);
    let k = TaskCovariance::from_factor(DMatrix::from_row_slice(2, 2, &[0.9, 0.0, -0.4, 0.6])).unwrap();
    let a = icm_kernel(TaskId(0), &[0.2], TaskId(1), &[0.7], &k, &sp).unwrap();
    let b = icm_kernel(TaskId(1), &[0.7], TaskId(0), &[0.2], &k, &sp).unwrap();
    assert!((a - b).abs() < 1e-15);
}

#[test]
fn posterior_matches_brute_force_conditioning() {
    let mut r = rng(2);
    for trial in 0..10 {
        let n_tasks = 2 + trial % 2;
        let sets: Vec<_> = (0..n_tasks).map(|t| random_set(&mut r, 2 + (t + trial) % 2, 2)).collect();
        let per = tasks(sets);
        let l = DMatrix::from_fn(n_tasks, n_tasks, |i, j| {
            if j > i {
                0.0
            } else if i == j {
                0.5 + r.random::<f64>()
            } else {
                r.random::<f64>() - 0.5
            }
        });
        let tc = TaskCovariance::from_factor(l).unwrap();
        let sp = SpatialKernelParams::new(KernelFamily::Matern52, vec![0.3, 0.5], 1.0);
        let m = FittedMtgp::with_params(&per, &tc, &sp, 1e-3).unwrap();
        let q = random_points(&mut r, 3, 2);
        for t in 0..n_tasks {
            let post = m.posterior_for_task(TaskId(t), &q).unwrap();
            let (bm, bc) = brute_task_posterior(&per, &tc.matrix(), &sp, 1e-3, m.jitter(), t, &q);
            let e = (post.mean.clone() - bm).abs().max();
            assert!(e < 1e-8, "trial {trial} task {t}: {e}");
            assert!((post.cov.clone() - bc).abs().max() < 1e-8);
        }
    }
}

#[test]
fn rank_one_task_matrix_transfers_short_run_prediction() {
    // Long-run task has one far-away point so the transfer is driven by the short-run data.
    let lr = TrainingSet::noiseless(vec![vec![5.0]], vec![0.0]).unwrap();
    let x: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64 / 4.0]).collect();
    let y: Vec<f64> = x.iter().map(|p| (3.0 * p[0]).sin()).collect();
    let sr = TrainingSet::noiseless(x, y).unwrap();
    let per = tasks(vec![lr, sr]);
    let tc = TaskCovariance::from_factor(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 2.0, 1e-4])).unwrap();
    let sp = SpatialKernelParams::isotropic(KernelFamily::Rbf, 1, 0.3, 1.0);
    let m = FittedMtgp::with_params(&per, &tc, &sp, 1e-8).unwrap();
    let q = vec![vec![0.3], vec![0.6]];
    let long = m.posterior_for_task(TaskId(0), &q).unwrap();
    let (bm, _) = brute_task_posterior(&per, &tc.matrix(), &sp, 1e-8, m.jitter(), 0, &q);
    assert!((long.mean.clone() - bm).abs().max() < 1e-6);
    // Perfect correlation: long-run deviation is half the short-run deviation.
    let short = m.posterior_for_task(TaskId(1), &q).unwrap();
    let s0 = m.task_standardizer(TaskId(0));
    let s1 = m.task_standardizer(TaskId(1));
    for i in 0..2 {
        let dl = long.mean[i] - s0.mean;
        let ds = short.mean[i] - s1.mean;
        assert!((dl - 0.5 * ds).abs() < 1e-3, "{dl} vs {ds}");
    }
}

#[test]
fn block_diagonal_task_matrix_ignores_short_run_data() {
    let mut r = rng(3);
    let lr = noiseless(random_set(&mut r, 4, 1));
    let sr = noiseless(random_set(&mut r, 4, 1));
    let per = tasks(vec![lr.clone(), sr]);
    let sp = SpatialKernelParams::isotropic(KernelFamily::Matern52, 1, 0.3, 1.0);
    let tc = TaskCovariance::from_factor(DMatrix::identity(2, 2)).unwrap();
    let m = FittedMtgp::with_params(&per, &tc, &sp, 1e-4).unwrap();
    let only = tasks(vec![lr]);
    let m1 = FittedMtgp::with_params(&only, &TaskCovariance::from_factor(DMatrix::identity(1, 1)).unwrap(), &sp, 1e-4)
        .unwrap();
    let q = random_points(&mut r, 5, 1);
    let a = m.posterior_standardized(TaskId(0), &q).unwrap();
    let b = m1.posterior_standardized(TaskId(0), &q).unwrap();
    // Pooled scales differ: means agree in raw units, variances in the
    // standardized units the task matrix is expressed in.
    let (sa, sb) = (m.task_standardizer(TaskId(0)), m1.task_standardizer(TaskId(0)));
    for i in 0..q.len() {
        assert!((sa.inverse(a.0[i]) - sb.inverse(b.0[i])).abs() < 1e-8);
        assert!((a.1[(i, i)] - b.1[(i, i)]).abs() < 1e-8);
    }
}

#[test]
fn single_task_reduces_to_fit_gp() {
    let mut r = rng(4);
    let set = random_set(&mut r, 8, 2);
    let gp = fit_gp(&set, &GpConfig::default(), 11).unwrap();
    let m = fit_mtgp(&tasks(vec![set]), &MtgpConfig::default(), 11).unwrap();
    let q = random_points(&mut r, 6, 2);
    let a = gp.posterior(&q).unwrap();
    let b = m.posterior_for_task(TaskId(0), &q).unwrap();
    let err = (a.mean.clone() - b.mean.clone()).abs().max().max((a.cov.clone() - b.cov.clone()).abs().max());
    assert!(err < 1e-6, "{err}");
}

#[test]
fn duplicated_tasks_are_positively_correlated() {
    let mut r = rng(5);
    let set = random_set(&mut r, 10, 1);
    let m = fit_mtgp(&tasks(vec![set.clone(), set]), &MtgpConfig::default(), 3).unwrap();
    let c = m.task_covariance().correlation(0, 1);
    assert!(c >= 0.9, "{c}");
}

#[test]
fn negated_tasks_are_anti_correlated() {
    let mut r = rng(6);
    let set = random_set(&mut r, 10, 1);
    let neg = TrainingSet::new(set.x.clone(), set.y.iter().map(|v| -v).collect(), set.noise_sem.clone()).unwrap();
    let m = fit_mtgp(&tasks(vec![set, neg]), &MtgpConfig::default(), 3).unwrap();
    let c = m.task_covariance().correlation(0, 1);
    assert!(c <= -0.9, "{c}");
}

#[test]
fn empty_long_run_task_is_rejected() {
    let mut per = BTreeMap::new();
    per.insert(TaskId(1), TrainingSet::noiseless(vec![vec![0.1]], vec![1.0]).unwrap());
    assert!(matches!(fit_mtgp(&per, &MtgpConfig::default(), 0), Err(longrun::Error::Input(_))));
}

fn argmax(f: impl Fn(f64) -> f64) -> f64 {
    (0..=200).map(|i| i as f64 / 200.0).fold((0.0, f64::NEG_INFINITY), |b, x| {
        let v = f(x);
        if v > b.1 {
            (x, v)
        } else {
            b
        }
    }).0
}

#[test]
fn short_run_bias_is_corrected_by_few_long_run_points() {
    // Long-run effect peaks at 0.6; the short-run effect adds a novelty bump
    // near 0.15 that dominates the short-run readout.
    let f_long = |x: f64| (-(x - 0.6).powi(2) / 0.05).exp();
    let f_short = |x: f64| 0.8 * f_long(x) + 1.2 * (-(x - 0.15).powi(2) / 0.02).exp();
    let lx = [0.05, 0.15, 0.35, 0.55, 0.8, 0.95];
    let lr = TrainingSet::new(lx.iter().map(|v| vec![*v]).collect(), lx.iter().map(|v| f_long(*v)).collect(), vec![0.01; 6])
        .unwrap();
    let sx: Vec<f64> = (0..20).map(|i| (i as f64 + 0.5) / 20.0).collect();
    let sr = TrainingSet::new(sx.iter().map(|v| vec![*v]).collect(), sx.iter().map(|v| f_short(*v)).collect(), vec![0.01; 20])
        .unwrap();
    let m = fit_mtgp(&tasks(vec![lr, sr.clone()]), &MtgpConfig::default(), 7).unwrap();
    let gp = fit_gp(&sr, &GpConfig::default(), 7).unwrap();
    let truth = argmax(f_long);
    let mt = argmax(|x| m.posterior_mean(TaskId(0), &[x]));
    let st = argmax(|x| gp.posterior_mean(&[x]));
    assert!((mt - truth).abs() <= 0.1, "mtgp argmax {mt}");
    assert!((st - truth).abs() > 0.1, "short-run gp argmax {st}");
}

#[test]
fn fitted_task_matrix_is_psd() {
    let mut r = rng(8);
    let sets: Vec<_> = (0..3).map(|_| random_set(&mut r, 5, 1)).collect();
    let m = fit_mtgp(&tasks(sets), &MtgpConfig::default(), 1).unwrap();
    let eig = m.task_covariance().matrix().symmetric_eigen();
    assert!(eig.eigenvalues.min() >= -1e-10);
    for i in 0..3 {
        assert!(m.task_covariance().entry(i, i) > 0.0);
    }
}

#[test]
fn fit_cost_grows_superlinearly_in_tasks() {
    let mut r = rng(9);
    let time = |s: usize, r: &mut rand_chacha::ChaCha8Rng| {
        let sets: Vec<_> = (0..=s).map(|_| random_set(r, 6, 1)).collect();
        let cfg = MtgpConfig {
            fit: longrun::gp::FitOptions { restarts: 2, ..Default::default() },
            ..Default::default()
        };
        let t0 = Instant::now();
        fit_mtgp(&tasks(sets), &cfg, 0).unwrap();
        t0.elapsed().as_secs_f64()
    };
    let small = time(1, &mut r);
    let large = time(6, &mut r);
    // Smoke test only: 3.5x the tasks should cost well over 3.5x the time.
    assert!(large > small, "{small} vs {large}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn task_matrix_psd_for_any_factor(entries in proptest::collection::vec(-3.0f64..3.0, 10)) {
        let l = DMatrix::from_fn(4, 4, |i, j| if j <= i { entries[i * (i + 1) / 2 + j] } else { 0.0 });
        let k = TaskCovariance::from_factor(l).unwrap().matrix();
        prop_assert!(k.symmetric_eigen().eigenvalues.min() >= -1e-10);
    }

    #[test]
    fn extra_short_run_point_never_raises_long_run_variance(seed in 0u64..1000) {
        let mut r = rng(seed);
        let lr = noiseless(random_set(&mut r, 3, 1));
        let sr = noiseless(random_set(&mut r, 3, 1));
        let tc = TaskCovariance::from_factor(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.6, 0.7])).unwrap();
        let sp = SpatialKernelParams::isotropic(KernelFamily::Matern52, 1, 0.3, 1.0);
        let q = random_points(&mut r, 5, 1);
        let mut more = sr.clone();
        more.push(vec![r.random()], r.random(), 0.0);
        let a = FittedMtgp::with_params(&tasks(vec![lr.clone(), sr]), &tc, &sp, 1e-4).unwrap();
        let b = FittedMtgp::with_params(&tasks(vec![lr, more]), &tc, &sp, 1e-4).unwrap();
        // Compare in standardized units: the conditioning itself is what must be monotone.
        let va = a.posterior_standardized(TaskId(0), &q).unwrap().1;
        let vb = b.posterior_standardized(TaskId(0), &q).unwrap().1;
        for i in 0..q.len() {
            prop_assert!(vb[(i, i)] <= va[(i, i)] + 1e-10);
        }
    }
}
