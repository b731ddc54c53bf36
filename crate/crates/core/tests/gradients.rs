use ndarray::Array2;
use vsde::density::{ArConfig, ArModel, PnnConfig};
use vsde::numerics::{finite_diff_check, RngStream};
use vsde::training::{vsde_batch_loss, vsde_batch_loss_grad};

fn random_case(rng: &mut RngStream) -> (ArModel<f64>, Array2<f64>) {
    let dim = 1 + rng.below(3);
    let config = ArConfig {
        dim,
        pnn: PnnConfig {
            hidden: (0..1 + rng.below(2)).map(|_| 1 + rng.below(8)).collect(),
            ..PnnConfig::default()
        },
        conditioner_hidden: (0..1 + rng.below(2)).map(|_| 1 + rng.below(16)).collect(),
        dropout: 0.1,
    };
    let mut model = ArModel::new(config, rng).unwrap();
    for p in model.params_mut() {
        *p += 0.3 * rng.normal();
    }
    let batch = Array2::from_shape_fn((4, dim), |_| rng.uniform_range(-3.0, 3.0));
    (model, batch)
}

fn check(model: &ArModel<f64>, batch: &Array2<f64>, lambda: f64, dropout_seed: Option<u64>) -> f64 {
    let stream = |s: Option<u64>| s.map(|s| RngStream::new(s, 0));
    let mut rng = stream(dropout_seed);
    let (_, grad) = vsde_batch_loss_grad(model, batch.view(), lambda, rng.as_mut()).unwrap();
    let config = model.config().clone();
    finite_diff_check(
        |theta| {
            let m = ArModel::from_params(config.clone(), theta.to_vec())?;
            let mut rng = stream(dropout_seed);
            Ok(vsde_batch_loss(&m, batch.view(), lambda, rng.as_mut())?.loss)
        },
        model.params(),
        &grad,
    )
    .unwrap()
}

#[test]
fn eval_mode_gradient_matches_central_differences() {
    let mut rng = RngStream::new(201, 0);
    for case in 0..20 {
        let (model, batch) = random_case(&mut rng);
        let err = check(&model, &batch, 3.33, None);
        assert!(err < 1e-4, "case {case}: relative error {err}");
    }
}

#[test]
fn unpenalized_gradient_matches_central_differences() {
    let mut rng = RngStream::new(202, 0);
    for case in 0..5 {
        let (model, batch) = random_case(&mut rng);
        let err = check(&model, &batch, 0.0, None);
        assert!(err < 1e-4, "case {case}: relative error {err}");
    }
}

#[test]
fn train_mode_gradient_with_replayed_dropout() {
    // a fixed stream yields the same masks for every perturbed evaluation
    let mut rng = RngStream::new(203, 0);
    for case in 0..5 {
        let (model, batch) = random_case(&mut rng);
        let err = check(&model, &batch, 3.33, Some(case));
        assert!(err < 1e-4, "case {case}: relative error {err}");
    }
}
