use reslab::data::{make_teacher, sample_dataset};
use reslab::lossgrad::LabeledBatch;
use reslab::model::{forward, NetworkParams, NetworkShape};
use reslab::numkit::RngState;
use reslab::probes::*;

fn net(m: usize, depth: usize, seed: u64) -> NetworkParams<f64> {
    NetworkParams::init_gaussian(RngState::root(seed), NetworkShape::residual(6, depth, m, m)).unwrap()
}

fn data(n: usize, seed: u64) -> LabeledBatch<f64> {
    let teacher = make_teacher::<f64>(RngState::root(seed), 6, 32, 0.05).unwrap();
    sample_dataset(&teacher, RngState::root(seed + 1), n).unwrap().to_batch()
}

#[test]
fn threshold_counts_start_at_zero_and_grow() {
    let p = net(64, 4, 1);
    let b = data(30, 2);
    let r = probe_threshold_indices(&p, &b.inputs, &[0.0, 0.01, 0.1, 1.0]).unwrap();
    assert_eq!(r.get("fraction@0"), Some(0.0));
    let f: Vec<f64> = ["0.01", "0.1", "1"].iter().map(|b| r.get(&format!("fraction@{b}")).unwrap()).collect();
    assert!(f[0] <= f[1] && f[1] <= f[2], "{f:?}");
}

#[test]
fn zero_direction_has_zero_sparse_output() {
    let p = net(32, 4, 3);
    let b = data(3, 4);
    let trace = forward(&p, b.inputs.row(0)).unwrap();
    let vals = sparse_output_values(&p, &trace, &vec![0.0; 32]);
    assert_eq!(vals.len(), 4);
    assert!(vals.iter().all(|&v| v == 0.0));
}

#[test]
fn identical_inputs_are_skipped_by_the_lipschitz_probe() {
    let p = net(32, 4, 5);
    let b = data(4, 6);
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..4).map(|i| (b.inputs.row(i).to_vec(), b.inputs.row(i).to_vec())).collect();
    let r = probe_input_lipschitz(&p, &pairs, &InputLipschitzConfig::default()).unwrap();
    assert_eq!(r.get("skipped_pairs"), Some(4.0));
    assert_eq!(r.trials, 0);
}

#[test]
fn markov_holds_for_random_labels() {
    let p = net(64, 4, 7);
    let b = data(300, 8);
    let mut rng = RngState::root(9).rng();
    let labels = (0..b.len()).map(|_| if rng.uniform::<f64>() < 0.5 { 1 } else { -1 }).collect();
    let shuffled = LabeledBatch::new(b.inputs.clone(), labels).unwrap();
    let r = probe_surrogate_markov(&p, &shuffled, &MarkovConfig::default()).unwrap();
    assert!(r.holds(), "{:?}", r.measured);
}

#[test]
fn rademacher_estimate_grows_with_the_radius() {
    let p = net(32, 3, 10);
    let b = data(40, 11);
    let est = |tau: f64| {
        let cfg = RademacherConfig {
            tau,
            xi_draws: 6,
            ascent_steps: 20,
            ..Default::default()
        };
        rademacher_estimate(&p, &b, &cfg).unwrap().get("estimate").unwrap()
    };
    let (a, c, e) = (est(0.01), est(0.1), est(0.5));
    assert!(a <= c && c <= e, "{a} {c} {e}");
}

#[test]
fn semismoothness_control_residual_is_exactly_zero() {
    let p = net(16, 3, 12);
    let b = data(10, 13);
    let cfg = SemismoothnessConfig {
        draws: 5,
        ..Default::default()
    };
    let r = probe_semismoothness(&p, &b, &cfg).unwrap();
    assert!(r.get("control_residual").unwrap() <= 1e-12);
    let control = r.details.labeled("control").next().unwrap();
    assert!(control.holds());
}

#[test]
fn activation_norms_at_init_stay_in_band() {
    let p = net(256, 8, 14);
    let b = data(50, 15);
    let cfg = ActivationNormConfig {
        pairs: vec![(2, 8)],
        ..Default::default()
    };
    let r = probe_activation_norms(&p, &b.inputs, &cfg).unwrap();
    assert!(r.holds(), "{:?}", r.measured);
}

#[test]
fn gradient_bounds_reject_a_trajectory_of_the_wrong_depth() {
    let p = net(16, 3, 16);
    let b = data(20, 17);
    let cfg = reslab::trainer::TrainConfig {
        eta: 0.01,
        max_steps: 3,
        ..Default::default()
    };
    let out = reslab::trainer::train(&p, &b, &cfg).unwrap();
    let other = NetworkShape::residual(6, 5, 16, 16);
    assert!(probe_gradient_bounds(&out.records, &other, 0.05, &GradientBoundsConfig::default()).is_err());
    let r = probe_gradient_bounds(&out.records, p.shape(), 0.05, &GradientBoundsConfig::default()).unwrap();
    assert!(r.get("c_lower").unwrap() > 0.0);
}
