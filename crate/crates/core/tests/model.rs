use active_grasp::domain::{Bounds, GraspConfig, GraspSample, ObjectView, Source, VoxelGrid};
use active_grasp::model::{
    train_classifier, train_mdn, GraspModel, MdnPrior, ModelConfig, PreparedView, TrainOpts, ViewSet,
};
use active_grasp::net::{grad_check, relative_error, Parameterized};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn tiny_cfg(dim: usize, components: usize) -> ModelConfig {
    ModelConfig {
        dim,
        resolution: 4,
        components,
        sigma_floor: 1e-3,
        trunk_filters: [2, 3],
        trunk_dense: 6,
        config_dense: 5,
        head_dense: 6,
    }
}

fn view(id: u32, fill: usize) -> ObjectView {
    let mut g = VoxelGrid::empty(4);
    for x in 0..fill {
        for y in 0..4 {
            g.set(x, y, 1, true);
        }
    }
    ObjectView::new(id, [0.05 + 0.01 * id as f64, 0.04, 0.1], g).unwrap()
}

fn views(ids: &[u32]) -> (Vec<ObjectView>, ViewSet) {
    let v: Vec<ObjectView> = ids.iter().map(|&i| view(i, 1 + i as usize % 3)).collect();
    let set = ViewSet::new(&v, 4).unwrap();
    (v, set)
}

fn sample(id: u32, q: Vec<f64>, label: bool) -> GraspSample {
    GraspSample::new(id, GraspConfig::new(q).unwrap(), label, Source::Heuristic, 0)
}

#[test]
fn zeroed_output_layer_predicts_one_half() {
    let cfg = tiny_cfg(3, 2);
    let mut m = GraspModel::new(&cfg, &Bounds::grasp_default(3), &mut ChaCha8Rng::seed_from_u64(1));
    m.classifier.zero_output_layer();
    let (_, vs) = views(&[0]);
    let p = m.classifier.predict_success(vs.get(0).unwrap(), &[0.1, -0.3, 0.7]).unwrap();
    assert_eq!(p, 0.5);
}

#[test]
fn logit_gradient_matches_finite_differences() {
    let cfg = tiny_cfg(5, 2);
    let m = GraspModel::new(&cfg, &Bounds::grasp_default(5), &mut ChaCha8Rng::seed_from_u64(2));
    let (_, vs) = views(&[3]);
    let ctx = m.context(vs.get(3).unwrap()).unwrap();
    let q = [0.2, -0.4, 0.1, 0.9, 0.3];
    let (l, g) = ctx.logit_grad(&q).unwrap();
    assert_eq!(l, ctx.logit(&q).unwrap());
    for i in 0..q.len() {
        let (mut up, mut dn) = (q, q);
        up[i] += 1e-6;
        dn[i] -= 1e-6;
        let num = (ctx.logit(&up).unwrap() - ctx.logit(&dn).unwrap()) / 2e-6;
        assert!(relative_error(g[i], num) < 1e-5, "dim {i}: {} vs {num}", g[i]);
    }
}

#[test]
fn classifier_parameter_gradients() {
    let cfg = tiny_cfg(3, 2);
    let mut m = GraspModel::new(&cfg, &Bounds::grasp_default(3), &mut ChaCha8Rng::seed_from_u64(3));
    let (_, vs) = views(&[0, 1]);
    let batch = [
        sample(0, vec![0.1, 0.2, 0.3], true),
        sample(1, vec![-0.5, 0.0, 1.0], false),
        sample(0, vec![0.9, -0.9, 0.4], false),
    ];
    let refs: Vec<&GraspSample> = batch.iter().collect();
    let w = [1.0, 0.75, 0.75];
    let err = grad_check(
        &mut m.classifier,
        |c| {
            c.zero_grad();
            c.loss_and_grad(&refs, &w, &vs)
        },
        1e-5,
        300,
    )
    .unwrap();
    assert!(err < 1e-4, "relative error {err}");
}

#[test]
fn mdn_parameter_gradients() {
    let cfg = tiny_cfg(3, 2);
    let mut mdn = MdnPrior::new(&cfg, &[0.0, 0.0, 0.5], 0.2, &mut ChaCha8Rng::seed_from_u64(4));
    let (_, vs) = views(&[0, 2]);
    let batch = [
        sample(0, vec![0.1, 0.2, 0.3], true),
        sample(2, vec![-0.2, 0.1, 0.8], true),
    ];
    let refs: Vec<&GraspSample> = batch.iter().collect();
    let err = grad_check(
        &mut mdn,
        |m| {
            m.zero_grad();
            m.loss_and_grad(&refs, &vs)
        },
        1e-5,
        300,
    )
    .unwrap();
    assert!(err < 1e-4, "relative error {err}");
}

#[test]
fn prior_integrates_to_one() {
    let cfg = tiny_cfg(2, 3);
    let mdn = MdnPrior::new(&cfg, &[0.0, 0.0], 0.3, &mut ChaCha8Rng::seed_from_u64(5));
    let (_, vs) = views(&[1]);
    let mix = mdn.mixture(vs.get(1).unwrap()).unwrap();
    let (lo, hi, n) = (-4.0, 4.0, 800);
    let h = (hi - lo) / n as f64;
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            let q = [lo + (i as f64 + 0.5) * h, lo + (j as f64 + 0.5) * h];
            total += mix.log_density(&q).exp() * h * h;
        }
    }
    assert!((total - 1.0).abs() < 1e-3, "integral {total}");
}

#[test]
fn prior_samples_match_mixture_mean() {
    let cfg = tiny_cfg(2, 3);
    let m = GraspModel::new(&cfg, &Bounds::grasp_default(2), &mut ChaCha8Rng::seed_from_u64(6));
    let (_, vs) = views(&[0]);
    let ctx = m.context(vs.get(0).unwrap()).unwrap();
    let mix = &ctx.mixture;
    let n = 20_000;
    let draws = ctx.sample_prior(n, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
    for i in 0..2 {
        let mean: f64 = (0..mix.components()).map(|k| mix.weights[k] * mix.means[k][i]).sum();
        let second: f64 = (0..mix.components())
            .map(|k| mix.weights[k] * (mix.sigmas[k][i].powi(2) + mix.means[k][i].powi(2)))
            .sum();
        let sd = (second - mean * mean).sqrt();
        let emp = draws.iter().map(|q| q.as_slice()[i]).sum::<f64>() / n as f64;
        assert!((emp - mean).abs() < 4.0 * sd / (n as f64).sqrt(), "dim {i}: {emp} vs {mean}");
    }
    assert!(ctx.sample_prior(0, &mut ChaCha8Rng::seed_from_u64(7)).is_err());
}

#[test]
fn single_component_prior_learns_data_moments() {
    let cfg = tiny_cfg(2, 1);
    let mut mdn = MdnPrior::new(&cfg, &[0.0, 0.0], 0.0, &mut ChaCha8Rng::seed_from_u64(8));
    let (_, vs) = views(&[0]);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (nx, ny) = (Normal::new(0.4, 0.1).unwrap(), Normal::new(-0.2, 0.25).unwrap());
    let data: Vec<GraspSample> = (0..400)
        .map(|_| sample(0, vec![nx.sample(&mut rng), ny.sample(&mut rng)], true))
        .collect();
    let refs: Vec<&GraspSample> = data.iter().collect();
    let n = data.len() as f64;
    let mean: Vec<f64> = (0..2).map(|i| data.iter().map(|s| s.config.as_slice()[i]).sum::<f64>() / n).collect();
    let sd: Vec<f64> = (0..2)
        .map(|i| (data.iter().map(|s| (s.config.as_slice()[i] - mean[i]).powi(2)).sum::<f64>() / n).sqrt())
        .collect();
    let opts = TrainOpts {
        epochs: 500,
        lr: 1e-2,
        batch_size: 50,
        ..TrainOpts::default()
    };
    train_mdn(&mut mdn, &refs, &vs, &opts, &mut rng).unwrap();
    let mix = mdn.mixture(vs.get(0).unwrap()).unwrap();
    for i in 0..2 {
        assert!((mix.means[0][i] - mean[i]).abs() < 0.02, "mean {i}: {} vs {}", mix.means[0][i], mean[i]);
        assert!((mix.sigmas[0][i] / sd[i] - 1.0).abs() < 0.1, "sigma {i}: {} vs {}", mix.sigmas[0][i], sd[i]);
    }
}

#[test]
fn single_point_nll_heads_toward_the_floor() {
    let cfg = tiny_cfg(2, 1);
    let mut mdn = MdnPrior::new(&cfg, &[0.0, 0.0], 0.0, &mut ChaCha8Rng::seed_from_u64(10));
    let (_, vs) = views(&[0]);
    let data = [sample(0, vec![0.3, -0.1], true)];
    let refs: Vec<&GraspSample> = data.iter().collect();
    // NLL of a point at the mean of a floor-width Gaussian
    let floor = 2.0 * (cfg.sigma_floor * (2.0 * std::f64::consts::PI).sqrt()).ln();
    let before = mdn.nll(&refs, &vs).unwrap();
    let opts = TrainOpts {
        epochs: 300,
        lr: 1e-2,
        ..TrainOpts::default()
    };
    let trace = train_mdn(&mut mdn, &refs, &vs, &opts, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
    let after = mdn.nll(&refs, &vs).unwrap();
    assert!(after < before - 1.0, "{before} -> {after}");
    assert!(trace.iter().all(|v| *v >= floor - 1e-9));
    assert!(after >= floor);
}

#[test]
fn classifier_separates_toy_data() {
    let cfg = tiny_cfg(2, 1);
    let mut m = GraspModel::new(&cfg, &Bounds::grasp_default(2), &mut ChaCha8Rng::seed_from_u64(12));
    let (_, vs) = views(&[0, 1]);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let data: Vec<GraspSample> = (0..400)
        .map(|i| {
            let q = vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let label = q[0] + 0.5 * q[1] > 0.1;
            sample(i % 2, q, label)
        })
        .collect();
    let refs: Vec<&GraspSample> = data.iter().collect();
    let opts = TrainOpts {
        epochs: 60,
        lr: 2e-2,
        ..TrainOpts::default()
    };
    train_classifier(&mut m.classifier, &refs, &vs, &opts, &mut rng).unwrap();
    let correct = data
        .iter()
        .filter(|s| {
            let p = m.classifier.predict_success(vs.get(s.object_id).unwrap(), s.config.as_slice()).unwrap();
            (p > 0.5) == s.success()
        })
        .count();
    let acc = correct as f64 / data.len() as f64;
    assert!(acc >= 0.98, "accuracy {acc}");
}

#[test]
fn training_is_bitwise_reproducible() {
    let cfg = tiny_cfg(3, 2);
    let (_, vs) = views(&[0, 1]);
    let data: Vec<GraspSample> = (0..40)
        .map(|i| {
            let x = i as f64 / 40.0;
            sample(i % 2, vec![x - 0.5, 0.2, x], i % 3 == 0)
        })
        .collect();
    let refs: Vec<&GraspSample> = data.iter().collect();
    let run = || {
        let mut m = GraspModel::new(&cfg, &Bounds::grasp_default(3), &mut ChaCha8Rng::seed_from_u64(14));
        let r = m
            .train(&refs, &vs, &TrainOpts::default(), &mut ChaCha8Rng::seed_from_u64(15))
            .unwrap();
        (m.flat_params(), r)
    };
    let (a, ra) = run();
    let (b, rb) = run();
    assert_eq!(ra, rb);
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn training_without_successes_skips_the_prior() {
    let cfg = tiny_cfg(3, 2);
    let mut m = GraspModel::new(&cfg, &Bounds::grasp_default(3), &mut ChaCha8Rng::seed_from_u64(16));
    let (_, vs) = views(&[0]);
    let data = [sample(0, vec![0.0, 0.0, 0.5], false)];
    let refs: Vec<&GraspSample> = data.iter().collect();
    let mdn_before = m.mdn.flat_params();
    let r = m.train(&refs, &vs, &TrainOpts::default(), &mut ChaCha8Rng::seed_from_u64(17)).unwrap();
    assert!(r.mdn_nll.is_none());
    assert_eq!(m.mdn.flat_params(), mdn_before);
    assert!(train_mdn(&mut m.mdn, &[], &vs, &TrainOpts::default(), &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    assert!(train_mdn(&mut m.mdn, &refs, &vs, &TrainOpts::default(), &mut ChaCha8Rng::seed_from_u64(0)).is_err());
}

#[test]
fn checkpoint_round_trip_preserves_predictions() {
    let cfg = tiny_cfg(3, 2);
    let bounds = Bounds::grasp_default(3);
    let m = GraspModel::new(&cfg, &bounds, &mut ChaCha8Rng::seed_from_u64(18));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model");
    m.save(&path).unwrap();
    let back = GraspModel::load(&cfg, &bounds, &path).unwrap();
    let (_, vs) = views(&[2]);
    let pv: &PreparedView = vs.get(2).unwrap();
    let q = [0.3, 0.1, 1.2];
    assert_eq!(
        m.classifier.predict_success(pv, &q).unwrap().to_bits(),
        back.classifier.predict_success(pv, &q).unwrap().to_bits()
    );
    assert_eq!(m.mdn.mixture(pv).unwrap(), back.mdn.mixture(pv).unwrap());
    let wider = ModelConfig {
        head_dense: 7,
        ..cfg
    };
    assert!(GraspModel::load(&wider, &bounds, &path).is_err());
}

#[test]
fn zero_epochs_leave_the_model_untouched() {
    let cfg = tiny_cfg(3, 2);
    let mut m = GraspModel::new(&cfg, &Bounds::grasp_default(3), &mut ChaCha8Rng::seed_from_u64(19));
    let (_, vs) = views(&[0]);
    let data = [sample(0, vec![0.1, 0.0, 0.5], true), sample(0, vec![0.4, 0.2, 0.1], false)];
    let refs: Vec<&GraspSample> = data.iter().collect();
    let before = m.flat_params();
    let opts = TrainOpts {
        epochs: 0,
        ..TrainOpts::default()
    };
    let r = m.train(&refs, &vs, &opts, &mut ChaCha8Rng::seed_from_u64(20)).unwrap();
    assert!(r.classifier_loss.is_empty());
    assert_eq!(r.mdn_nll, Some(vec![]));
    assert_eq!(m.flat_params(), before);
}
