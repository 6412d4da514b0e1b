mod common;

use std::time::Instant;

use common::{random_points, rng, standard_normal};
use longrun::gp::{fit_gp, total_nll, FittedGp, GpConfig, KernelFamily, SpatialKernelParams, TrainingSet};
use longrun::tagp::{fit_base_models, fit_tagp, tagp_posterior, BaseModelSet, ProxyDataset, TagpConfig, TagpModel};
use rand_chacha::ChaCha8Rng;

fn target_fn(x: &[f64]) -> f64 {
    (14.0 * x[0]).sin() + 0.5 * x[0]
}

fn sample(r: &mut ChaCha8Rng, n: usize, f: impl Fn(&[f64]) -> f64, noise: f64) -> TrainingSet {
    let x = random_points(r, n, 1);
    let y = x.iter().map(|p| f(p) + noise * standard_normal(r)).collect();
    TrainingSet::new(x, y, vec![noise.max(1e-3); n]).unwrap()
}

fn noise_proxy(r: &mut ChaCha8Rng, id: usize) -> ProxyDataset {
    ProxyDataset::new(format!("noise{id}"), sample(r, 20, |_| 0.0, 1.0))
}

/// Five irrelevant proxies plus (optionally) one equal to the target.
fn problem(seed: u64, informative: bool) -> (Vec<ProxyDataset>, TrainingSet) {
    let mut r = rng(seed);
    let mut proxies: Vec<_> = (0..5).map(|i| noise_proxy(&mut r, i)).collect();
    if informative {
        proxies.push(ProxyDataset::new("signal", sample(&mut r, 40, target_fn, 0.01)));
    }
    let target = sample(&mut r, 8, target_fn, 0.05);
    (proxies, target)
}

#[test]
fn no_proxies_is_the_single_task_gp() {
    let (_, target) = problem(1, false);
    let m = fit_tagp(&BaseModelSet::default(), &target, &TagpConfig::default(), 4).unwrap();
    let g = fit_gp(&target, &GpConfig::default(), 4).unwrap();
    let q = random_points(&mut rng(2), 10, 1);
    let (a, b) = (tagp_posterior(&m, &q).unwrap(), g.posterior(&q).unwrap());
    assert_eq!(a.mean, b.mean);
    assert_eq!(a.cov, b.cov);
}

#[test]
fn forced_zero_weights_reduce_to_single_task_gp() {
    let (proxies, target) = problem(3, true);
    let base = fit_base_models(&proxies, &GpConfig::default(), 1);
    let cfg = TagpConfig {
        force_zero_weights: true,
        ..Default::default()
    };
    let m = fit_tagp(&base, &target, &cfg, 9).unwrap();
    assert!(m.weights.iter().all(|w| *w == 0.0));
    let g = fit_gp(&target, &GpConfig::default(), 9).unwrap();
    let q = random_points(&mut rng(4), 20, 1);
    let (a, b) = (tagp_posterior(&m, &q).unwrap(), g.posterior(&q).unwrap());
    assert!((a.mean - b.mean).abs().max() < 1e-10);
    assert!((a.cov - b.cov).abs().max() < 1e-10);
}

#[test]
fn irrelevant_proxies_get_negligible_weight() {
    let (proxies, target) = problem(5, false);
    let base = fit_base_models(&proxies, &GpConfig::default(), 1);
    let m = fit_tagp(&base, &target, &TagpConfig::default(), 2).unwrap();
    assert!(m.weights.iter().all(|w| *w <= 0.05), "{:?}", m.weights);
    let g = fit_gp(&target, &GpConfig::default(), 2).unwrap();
    let q = random_points(&mut rng(6), 20, 1);
    let (a, b) = (tagp_posterior(&m, &q).unwrap(), g.posterior(&q).unwrap());
    for i in 0..20 {
        let sd = b.cov[(i, i)].sqrt();
        assert!((a.mean[i] - b.mean[i]).abs() <= 0.1 * sd + 1e-9, "query {i}");
    }
}

#[test]
fn informative_proxy_dominates_and_improves_loo() {
    let (proxies, target) = problem(7, true);
    let base = fit_base_models(&proxies, &GpConfig::default(), 1);
    let m = fit_tagp(&base, &target, &TagpConfig::default(), 3).unwrap();
    let named = m.named_weights();
    let signal = named.iter().find(|(id, _)| id == "signal").unwrap().1;
    assert!(signal >= 0.7, "{named:?}");
    let g = fit_gp(&target, &GpConfig::default(), 3).unwrap();
    let (t, s) = (m.loo_cv().unwrap(), g.loo_cv().unwrap());
    assert!(total_nll(&t) < total_nll(&s));
    assert!(longrun::gp::mean_squared_error(&t) < longrun::gp::mean_squared_error(&s));
}

#[test]
fn negative_transfer_guard() {
    let (proxies, target) = problem(8, true);
    let base = fit_base_models(&proxies, &GpConfig::default(), 1);
    let m = fit_tagp(&base, &target, &TagpConfig::default(), 1).unwrap();
    let g = fit_gp(&target, &GpConfig::default(), 1).unwrap();
    assert!(total_nll(&m.loo_cv().unwrap()) <= total_nll(&g.loo_cv().unwrap()) + 1.0);
}

#[test]
fn base_models_keep_their_own_lengthscales() {
    let mut r = rng(10);
    let x: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64 / 39.0]).collect();
    let draw = |ls: f64, r: &mut ChaCha8Rng| {
        let y = common::gp_draw(&SpatialKernelParams::isotropic(KernelFamily::Matern52, 1, ls, 1.0), &x, r);
        TrainingSet::noiseless(x.clone(), y).unwrap()
    };
    let proxies = vec![ProxyDataset::new("short", draw(0.05, &mut r)), ProxyDataset::new("long", draw(0.8, &mut r))];
    let base = fit_base_models(&proxies, &GpConfig::default(), 0);
    let l0 = base.models[0].gp.params().lengthscales[0];
    let l1 = base.models[1].gp.params().lengthscales[0];
    assert!(l1 / l0 >= 4.0, "{l0} {l1}");
}

#[test]
fn base_fits_are_deterministic_and_failures_are_dropped() {
    let (mut proxies, _) = problem(11, true);
    let a = fit_base_models(&proxies, &GpConfig::default(), 5);
    let b = fit_base_models(&proxies, &GpConfig::default(), 5);
    for (x, y) in a.models.iter().zip(&b.models) {
        assert_eq!(x.gp.params(), y.gp.params());
    }
    proxies.push(ProxyDataset::new("empty", TrainingSet::default()));
    let c = fit_base_models(&proxies, &GpConfig::default(), 5);
    assert_eq!(c.len(), proxies.len() - 1);
    assert_eq!(c.warnings.len(), 1);
}

#[test]
fn target_needs_three_points() {
    let t = TrainingSet::noiseless(vec![vec![0.1], vec![0.2]], vec![1.0, 2.0]).unwrap();
    assert!(matches!(
        fit_tagp(&BaseModelSet::default(), &t, &TagpConfig::default(), 0),
        Err(longrun::Error::Input(_))
    ));
}

fn fixed_parts(seed: u64) -> (BaseModelSet, FittedGp) {
    let (proxies, target) = problem(seed, true);
    let base = fit_base_models(&proxies, &GpConfig::default(), 1);
    let bias = FittedGp::with_params(&target, &SpatialKernelParams::isotropic(KernelFamily::Matern52, 1, 0.3, 1.0), 1e-3)
        .unwrap();
    (base, bias)
}

#[test]
fn mean_is_linear_and_variance_monotone_in_weights() {
    let (base, bias) = fixed_parts(12);
    let q = random_points(&mut rng(13), 8, 1);
    let s = base.len();
    let w1: Vec<f64> = (0..s).map(|i| 0.1 * i as f64).collect();
    let w2: Vec<f64> = (0..s).map(|i| 0.3 - 0.05 * i as f64).collect();
    let sum: Vec<f64> = w1.iter().zip(&w2).map(|(a, b)| a + b).collect();
    let post = |w: &[f64]| {
        let m = TagpModel::assemble(base.clone(), w.to_vec(), bias.clone(), 1.7).unwrap();
        tagp_posterior(&m, &q).unwrap()
    };
    let zero = post(&vec![0.0; s]);
    let (p1, p2, p12) = (post(&w1), post(&w2), post(&sum));
    let lin = &p12.mean - (&p1.mean + &p2.mean - &zero.mean);
    assert!(lin.abs().max() < 1e-10);
    for j in 0..s {
        let mut lo = w1.clone();
        let mut hi = w1.clone();
        lo[j] = 0.2;
        hi[j] = 0.4;
        let (a, b) = (post(&lo), post(&hi));
        for i in 0..q.len() {
            assert!(b.cov[(i, i)] >= a.cov[(i, i)] - 1e-12);
        }
    }
}

#[test]
fn unit_weight_passes_the_proxy_through() {
    let mut r = rng(14);
    let proxy = sample(&mut r, 25, target_fn, 0.01);
    let base = fit_base_models(&[ProxyDataset::new("p", proxy.clone())], &GpConfig::default(), 0);
    // Bias GP trained on zero residuals.
    let zeros = TrainingSet::noiseless(proxy.x.clone(), vec![0.0; proxy.len()]).unwrap();
    let bias = fit_gp(&zeros, &GpConfig::default(), 0).unwrap();
    let sd = base.models[0].gp.standardizer().sd;
    let m = TagpModel::assemble(base.clone(), vec![1.0], bias, sd).unwrap();
    let q = random_points(&mut r, 5, 1);
    let (a, b) = (tagp_posterior(&m, &q).unwrap(), base.models[0].gp.posterior(&q).unwrap());
    let mean = base.models[0].gp.standardizer().mean;
    for i in 0..q.len() {
        assert!((a.mean[i] + mean - b.mean[i]).abs() < 1e-6);
    }
}

#[test]
fn weight_fit_scales_roughly_linearly_in_proxies() {
    let mut r = rng(15);
    let proxies: Vec<_> = (0..8).map(|i| noise_proxy(&mut r, i)).collect();
    let target = sample(&mut r, 10, target_fn, 0.05);
    let time = |k: usize| {
        let base = fit_base_models(&proxies[..k], &GpConfig::default(), 0);
        let t0 = Instant::now();
        fit_tagp(&base, &target, &TagpConfig::default(), 0).unwrap();
        t0.elapsed().as_secs_f64()
    };
    let (t2, t8) = (time(2), time(8));
    assert!(t8 <= 3.0 * t2, "S=2 {t2:.3}s, S=8 {t8:.3}s");
}

#[test]
fn loo_reports_share_a_schema_and_round_trip() {
    use longrun::multitask::{fit_mtgp, MtgpConfig, TaskId};
    use longrun::report::{loo_report, LooReport};
    let (proxies, target) = problem(16, true);
    let base = fit_base_models(&proxies, &GpConfig::default(), 1);
    let t = fit_tagp(&base, &target, &TagpConfig::default(), 1).unwrap();
    let g = fit_gp(&target, &GpConfig::default(), 1).unwrap();
    let mut tasks = std::collections::BTreeMap::new();
    tasks.insert(TaskId(0), target.clone());
    tasks.insert(TaskId(1), proxies[5].train.clone());
    let m = fit_mtgp(&tasks, &MtgpConfig::default(), 1).unwrap();
    let mut report = loo_report(&g).unwrap();
    let tr = loo_report(&t).unwrap();
    assert!(tr.mse() < report.mse());
    report.extend(tr);
    report.extend(loo_report(&m).unwrap());
    assert_eq!(report.rows.len(), 3 * target.len());
    let mut buf = Vec::new();
    report.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.starts_with("model_kind,point_id,observed,pred_mean,pred_sd,nll,sq_err"));
    let back = LooReport::read_csv(&buf[..]).unwrap();
    assert_eq!(back, report);
}

#[test]
fn noisy_flat_target_predicts_the_mean() {
    let mut r = rng(17);
    let target = sample(&mut r, 12, |_| 0.0, 1.0);
    let g = fit_gp(&target, &GpConfig::default(), 0).unwrap();
    let rep = longrun::report::loo_report(&g).unwrap();
    let mean = target.y.iter().sum::<f64>() / 12.0;
    let spread = target.y.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
    for row in &rep.rows {
        assert!((row.pred_mean - mean).abs() < 0.5 * spread);
        assert!(row.pred_sd > 0.5);
    }
}
