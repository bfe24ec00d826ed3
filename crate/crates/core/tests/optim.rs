use nbm::matrix::Matrix;
use nbm::models::{Architecture, Model, ModelKind, Task};
use nbm::nn::gradcheck::gradient_check;
use nbm::optim::{
    adamw_step, cosine_lr, cross_entropy_loss, fit, logistic_loss, mse_loss,
    objective_and_gradient, output_penalty, predict_all, AdamWState, Objective, Samples,
    TrainConfig,
};
use nbm::tensors::Tensors;
use nbm::{seeded_rng, Error};
use rand::Rng;

#[test]
fn mse_examples() {
    let a = Matrix::column(&[1.0, 2.0]);
    assert_eq!(mse_loss(&a, &a).unwrap().0, 0.0);
    let (l, g) = mse_loss(&Matrix::column(&[0.0]), &Matrix::column(&[2.0])).unwrap();
    assert_eq!(l, 4.0);
    assert_eq!(g.data(), &[-4.0]);
}

#[test]
fn mse_matches_two_pass_oracle() {
    let mut rng = seeded_rng(1);
    let p: Vec<f64> = (0..32).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let t: Vec<f64> = (0..32).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let diffs: Vec<f64> = p.iter().zip(&t).map(|(a, b)| a - b).collect();
    let oracle = diffs.iter().map(|d| d * d).sum::<f64>() / 32.0;
    let (l, _) = mse_loss(&Matrix::column(&p), &Matrix::column(&t)).unwrap();
    assert!((l - oracle).abs() < 1e-12);
}

#[test]
fn cross_entropy_examples() {
    let (l, _) = cross_entropy_loss(&Matrix::zeros(3, 2), &[0, 1, 0]).unwrap();
    assert!((l - 2f64.ln()).abs() < 1e-15);
    let logits = Matrix::from_rows(&[[50.0, 0.0, 0.0]]).unwrap();
    let (l, _) = cross_entropy_loss(&logits, &[0]).unwrap();
    assert!(l < 1e-20);
    assert!(matches!(cross_entropy_loss(&Matrix::zeros(1, 2), &[2]), Err(Error::Data(_))));
}

#[test]
fn cross_entropy_and_logistic_gradients() {
    let mut rng = seeded_rng(2);
    let logits = Matrix::from_fn(5, 4, |_, _| rng.gen_range(-2.0..2.0));
    let labels = [0, 3, 1, 1, 2];
    let (_, g) = cross_entropy_loss(&logits, &labels).unwrap();
    let err = gradient_check(logits.data(), g.data(), 1e-5, |t| {
        cross_entropy_loss(&Matrix::new(5, 4, t.to_vec()).unwrap(), &labels).unwrap().0
    })
    .unwrap();
    assert!(err < 1e-6, "{err}");
    let z = Matrix::column(&[-3.0, 0.2, 1.5, 40.0]);
    let y = [0, 1, 0, 1];
    let (_, g) = logistic_loss(&z, &y).unwrap();
    let err = gradient_check(z.data(), g.data(), 1e-5, |t| {
        logistic_loss(&Matrix::column(t), &y).unwrap().0
    })
    .unwrap();
    assert!(err < 1e-6, "{err}");
}

#[test]
fn output_penalty_examples() {
    let f = Matrix::from_rows(&[[1.0, -1.0]]).unwrap();
    assert_eq!(output_penalty(&f, 0.0), (0.0, None));
    let (p, g) = output_penalty(&f, 0.1);
    assert!((p - 0.2).abs() < 1e-15);
    assert_eq!(g.unwrap().data(), &[0.2, -0.2]);
}

#[test]
fn adamw_pure_decay_and_first_step() {
    let mut w = [1.0];
    let mut s = AdamWState::new(1, 0.1, 0.1);
    s.step_flat(&mut w, &[0.0], true).unwrap();
    assert!((w[0] - 0.99).abs() < 1e-15);
    let mut w = [1.0];
    let mut s = AdamWState::new(1, 0.1, 0.0);
    s.step_flat(&mut w, &[1.0], true).unwrap();
    assert!((w[0] - 0.9).abs() < 1e-7);
}

#[test]
fn adamw_two_hand_computed_steps() {
    let (lr, wd, b1, b2, eps): (f64, f64, f64, f64, f64) = (0.05, 0.01, 0.9, 0.999, 1e-8);
    let (mut m, mut v): (f64, f64) = (0.0, 0.0);
    let grads = [0.5, -2.0];
    let mut w = [0.3];
    let mut s = AdamWState::new(1, lr, wd);
    let mut expect = 0.3f64;
    for (t, &g) in grads.iter().enumerate() {
        let t = t as i32 + 1;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let mh = m / (1.0 - b1.powi(t));
        let vh = v / (1.0 - b2.powi(t));
        expect -= lr * (mh / (vh.sqrt() + eps) + wd * expect);
        s.step_flat(&mut w, &[g], true).unwrap();
    }
    assert!((w[0] - expect).abs() < 1e-12);
    assert_eq!(s.t, 2);
}

#[test]
fn adamw_rejects_non_finite_gradient() {
    let mut w = [1.0, 2.0];
    let mut s = AdamWState::new(2, 0.1, 0.0);
    assert!(matches!(s.step_flat(&mut w, &[0.0, f64::NAN], true), Err(Error::Numeric(_))));
    assert_eq!(w, [1.0, 2.0]);
    assert_eq!(s.t, 0);
}

#[test]
fn adamw_decays_only_weights() {
    let mut rng = seeded_rng(3);
    let mut arch = Architecture::new(ModelKind::Nbm, 2, 1);
    arch.hidden = vec![4];
    arch.num_bases = 3;
    arch.batch_norm = true;
    let mut m = Model::new(&arch, &mut rng).unwrap();
    m.visit_mut("", &mut |t| t.data.iter_mut().for_each(|v| *v = 1.0));
    let zero = m.zeros_like();
    let mut s = AdamWState::for_params(&m, 0.1, 0.5);
    adamw_step(&mut m, &zero, &mut s).unwrap();
    m.visit("", &mut |t| {
        let expect = if t.role.decays() { 0.95 } else { 1.0 };
        assert!(t.data.iter().all(|&v| (v - expect).abs() < 1e-15), "{}", t.name);
    });
}

#[test]
fn adamw_zero_lr_freezes_and_zero_decay_is_adam() {
    let mut w = [0.7, -0.2];
    let mut s = AdamWState::new(2, 0.0, 0.3);
    s.step_flat(&mut w, &[1.0, -4.0], true).unwrap();
    assert_eq!(w, [0.7, -0.2]);
    let mut a = [0.7, -0.2];
    let mut b = [0.7, -0.2];
    let mut sa = AdamWState::new(2, 0.01, 0.0);
    let mut sb = AdamWState::new(2, 0.01, 0.0);
    sa.step_flat(&mut a, &[1.0, -4.0], true).unwrap();
    sb.step_flat(&mut b, &[1.0, -4.0], false).unwrap();
    assert_eq!(a, b);
}

#[test]
fn cosine_schedule() {
    assert_eq!(cosine_lr(0, 10, 0.3).unwrap(), 0.3);
    assert!(cosine_lr(10, 10, 0.3).unwrap().abs() < 1e-17);
    assert!((cosine_lr(5, 10, 0.3).unwrap() - 0.15).abs() < 1e-15);
    assert!(matches!(cosine_lr(11, 10, 0.3), Err(Error::Contract(_))));
}

fn small(kind: ModelKind, d: usize, c: usize) -> Architecture {
    let mut a = Architecture::new(kind, d, c);
    a.hidden = vec![5, 4];
    a.num_bases = 3;
    a.pair_bases = 3;
    a
}

#[test]
fn total_objective_gradient_check_for_every_variant() {
    for seed in 0..3 {
        for kind in ModelKind::ALL {
            let mut rng = seeded_rng(seed);
            let mut m = Model::new(&small(kind, 3, 3), &mut rng).unwrap();
            // Random biases keep pre-activations off the ReLU kink even
            // when a whole layer is inactive for some row.
            let theta: Vec<f64> = (0..m.trainable_count()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            m.assign_trainable(&theta);
            let x = Matrix::from_fn(10, 3, |_, _| rng.gen_range(0.0..1.0));
            let y: Vec<f64> = (0..10).map(|i| (i % 3) as f64).collect();
            let obj = Objective {
                task: Task::Multiclass { classes: 3 },
                output_penalty: 0.3,
                dropout: Default::default(),
            };
            let (_, g, _) = objective_and_gradient(&m, &x, &y, &obj, &mut seeded_rng(9)).unwrap();
            let err = gradient_check(&m.flatten_trainable(), &g.flatten_trainable(), 1e-5, |t| {
                let mut mm = m.clone();
                mm.assign_trainable(t);
                objective_and_gradient(&mm, &x, &y, &obj, &mut seeded_rng(9)).unwrap().0
            })
            .unwrap();
            assert!(err < 1e-4, "{kind} seed {seed}: {err}");
        }
    }
}

fn line_data() -> (Matrix, Vec<f64>) {
    let x: Vec<f64> = (0..100).map(|i| i as f64 / 99.0).collect();
    let y = x.iter().map(|v| 2.0 * v + 1.0).collect();
    (Matrix::column(&x), y)
}

#[test]
fn fit_recovers_a_line() {
    let (x, y) = line_data();
    let cfg = TrainConfig {
        epochs: 200,
        batch_size: 10,
        lr: 0.05,
        ..Default::default()
    };
    let m = Model::new(&Architecture::new(ModelKind::Linear, 1, 1), &mut seeded_rng(0)).unwrap();
    let s = Samples::new(&x, &y).unwrap();
    let res = fit(m, s, s, Task::Regression, &cfg).unwrap();
    let Model::Linear(p) = &res.model else { unreachable!() };
    assert!((p.weights().get(0, 0) - 2.0).abs() < 1e-2, "{:?}", p.weights());
    assert_eq!(res.history.len(), 200);
    let best = res.best_epoch.unwrap();
    assert!(res.history.iter().all(|r| r.val_metric >= res.history[best].val_metric));
}

#[test]
fn zero_epochs_leave_parameters_unchanged() {
    let (x, y) = line_data();
    let m = Model::new(&Architecture::new(ModelKind::Linear, 1, 1), &mut seeded_rng(4)).unwrap();
    let s = Samples::new(&x, &y).unwrap();
    let cfg = TrainConfig {
        epochs: 0,
        ..Default::default()
    };
    let res = fit(m.clone(), s, s, Task::Regression, &cfg).unwrap();
    assert_eq!(res.model, m);
    assert!(res.history.is_empty());
}

#[test]
fn fit_is_deterministic_and_fits_additive_function() {
    let mut rng = seeded_rng(5);
    let n = 2000;
    let x = Matrix::from_fn(n, 2, |_, _| rng.gen_range(0.0..1.0));
    let y: Vec<f64> = (0..n)
        .map(|r| (2.0 * std::f64::consts::PI * x.get(r, 0)).sin() + x.get(r, 1).powi(2))
        .collect();
    let mut arch = Architecture::new(ModelKind::Nbm, 2, 1);
    arch.hidden = vec![32, 32];
    arch.num_bases = 16;
    let cfg = TrainConfig {
        epochs: 60,
        batch_size: 128,
        lr: 0.01,
        basis_dropout: 0.05,
        dropout: 0.05,
        output_penalty: 1e-4,
        weight_decay: 1e-5,
        ..Default::default()
    };
    let s = Samples::new(&x, &y).unwrap();
    let run = || {
        let m = Model::new(&arch, &mut seeded_rng(6)).unwrap();
        fit(m, s, s, Task::Regression, &cfg).unwrap()
    };
    let a = run();
    let b = run();
    assert_eq!(a.model, b.model);
    let pred = predict_all(&a.model, &x).unwrap();
    let mse = nbm::metrics::mse(pred.data(), &y).unwrap();
    assert!(mse < 0.01, "train mse {mse}");
}

#[test]
fn fit_rejects_bad_config_and_diverging_loss() {
    let (x, y) = line_data();
    let s = Samples::new(&x, &y).unwrap();
    let m = Model::new(&Architecture::new(ModelKind::Linear, 1, 1), &mut seeded_rng(0)).unwrap();
    let bad = TrainConfig {
        lr: -1.0,
        ..Default::default()
    };
    assert!(matches!(fit(m.clone(), s, s, Task::Regression, &bad), Err(Error::Config(_))));
    let huge: Vec<f64> = y.iter().map(|v| v * 1e200).collect();
    let s2 = Samples::new(&x, &huge).unwrap();
    let err = fit(m, s2, s2, Task::Regression, &TrainConfig::default()).unwrap_err();
    match err {
        Error::Numeric(msg) => assert!(msg.contains("batch"), "{msg}"),
        other => panic!("unexpected {other:?}"),
    }
}
