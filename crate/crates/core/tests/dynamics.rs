use asgd::linalg::frobenius_inner;
use asgd::model::{build_instance, derive_asgd_params, DistributionSpec, NoiseModel};
use asgd::operators::{build_operator_set, predict_tail_covariance};
use asgd::oracle::{draw_sample, estimate_fourth_moment, exact_gradient, rng_for, stochastic_gradient};
use asgd::solvers::{asgd_run, sgd_run, theorem1_bound, default_sgd_step, AsgdStepper};
use asgd::stats::{MatrixWelford, Welford};
use asgd::Instance;
use nalgebra::{DMatrix, DVector};

fn discrete(p: &[f64], sigma2: f64) -> Instance {
    let noise = if sigma2 > 0.0 { NoiseModel::AdditiveGaussian { sigma2 } } else { NoiseModel::Noiseless };
    build_instance(DistributionSpec::DiscreteOneHot { probabilities: p.to_vec() }, noise, DVector::zeros(p.len()))
        .unwrap()
}

#[test]
fn runs_are_seed_deterministic() {
    let inst = discrete(&[0.5, 0.3, 0.2], 1.0);
    let params = derive_asgd_params(&inst, None).unwrap();
    let a = asgd_run(&inst, &params, 500, 250, 7, None).unwrap();
    let b = asgd_run(&inst, &params, 500, 250, 7, None).unwrap();
    let c = asgd_run(&inst, &params, 500, 250, 8, None).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.tail_average, c.tail_average);
    let s1 = sgd_run(&inst, default_sgd_step(&inst), 500, 250, 7, None).unwrap();
    let s2 = sgd_run(&inst, default_sgd_step(&inst), 500, 250, 7, None).unwrap();
    assert_eq!(s1, s2);
}

#[test]
fn stochastic_gradient_is_unbiased() {
    let x_star = DVector::from_vec(vec![1.0, -2.0, 0.5]);
    let inst = build_instance(
        DistributionSpec::Gaussian { eigenvalues: vec![1.0, 0.4, 0.1] },
        NoiseModel::AdditiveGaussian { sigma2: 0.5 },
        x_star,
    )
    .unwrap();
    let x = DVector::from_vec(vec![0.3, 0.3, -1.0]);
    let mut rng = rng_for(3, 0);
    let mut acc = MatrixWelford::<f64>::new(3, 1);
    for _ in 0..200_000 {
        let g = stochastic_gradient(&draw_sample(&inst, &mut rng), &x).unwrap();
        acc.push(&DMatrix::from_column_slice(3, 1, g.as_slice()));
    }
    let exact = exact_gradient(&inst, &x);
    let se = acc.stderr();
    for i in 0..3 {
        assert!((acc.mean()[i] - exact[i]).abs() <= 5.0 * se[i], "coordinate {i}");
    }
}

#[test]
fn fourth_moment_estimate_matches_closed_form() {
    let inst = build_instance(
        DistributionSpec::Gaussian { eigenvalues: vec![1.0, 0.5] },
        NoiseModel::Noiseless,
        DVector::zeros(2),
    )
    .unwrap();
    let s = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, -0.2, 2.0]);
    let est = estimate_fourth_moment(&inst, &s, 400_000, &mut rng_for(9, 0));
    let exact: DMatrix<f64> = inst.fourth_moment(&s);
    for k in 0..4 {
        assert!((est.mean[k] - exact[k]).abs() <= 5.0 * est.stderr[k], "entry {k}: {} vs {}", est.mean[k], exact[k]);
    }
}

/// Noiseless potential `⟨G, θθᵀ⟩` decays at least at half the guaranteed
/// per-step rate, averaged over seeds.
#[test]
fn noiseless_potential_decays() {
    let inst = discrete(&[0.4, 0.3, 0.2, 0.1], 0.0);
    let params = derive_asgd_params(&inst, None).unwrap();
    let ops = build_operator_set(&inst, &params).unwrap();
    let rate = 1.0 - 1.0 / (18.0 * inst.kappa_product().sqrt());
    let n = 400;
    let x0 = DVector::from_element(4, 1.0);
    let potential = |x: &DVector<f64>, y: &DVector<f64>| {
        let theta = DVector::from_iterator(8, x.iter().chain(y.iter()).copied());
        frobenius_inner(&ops.g, &(&theta * theta.transpose()))
    };
    let start = potential(&x0, &x0);
    let mut mean = Welford::new();
    for seed in 0..256 {
        let mut s = AsgdStepper::new(&inst, params, x0.clone(), n);
        let mut rng = rng_for(seed, 0);
        for _ in 0..n {
            s.step(&mut rng);
        }
        mean.push(potential(s.x(), &s.y()));
    }
    assert!(mean.mean() <= rate.powi(n as i32) * start, "{} > {}", mean.mean(), rate.powi(n as i32) * start);
}

/// With a single deterministic feature the fluctuation operator vanishes and
/// the predicted tail risk is exact for simulated runs.
#[test]
fn unit_feature_tail_risk_matches_prediction() {
    let inst = discrete(&[1.0], 1.0);
    let params = derive_asgd_params(&inst, None).unwrap();
    let ops = build_operator_set(&inst, &params).unwrap();
    let (n, t) = (60, 30);
    let predicted = predict_tail_covariance(&ops, &DVector::zeros(2), t, n).unwrap().total_risk;
    let risks: Welford<f64> = (0..40_000).map(|seed| asgd_run(&inst, &params, n, t, seed, Some(n)).unwrap().tail_risk).collect();
    assert!((risks.mean() - predicted).abs() <= 5.0 * risks.stderr(), "{} vs {predicted}", risks.mean());
}

/// The leading bias term does not increase with the tail start once the
/// window is at least `18√(κκ̃)` long.
#[test]
fn leading_bias_is_monotone_in_tail_start() {
    let inst = discrete(&[0.4, 0.3, 0.2, 0.1], 1.0);
    let params = derive_asgd_params(&inst, None).unwrap();
    let n = 5000;
    let window = (18.0 * inst.kappa_product().sqrt()).ceil() as usize;
    let mut last = f64::INFINITY;
    for t in (0..=n - window).step_by(37) {
        let b = theorem1_bound(&inst, &params, n, t, 1.0, 1.0).unwrap().leading_bias;
        assert!(b <= last * (1.0 + 1e-12), "t = {t}");
        last = b;
    }
}
