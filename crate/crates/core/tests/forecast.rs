mod common;

use proptest::prelude::*;
use vecsim_core::fleet::{generate_fleet, generate_traces, FleetConfig};
use vecsim_core::forecast::{
    predict_availability, train_on_traces, ForecastModel, Forecaster, RnnForecaster, TrainConfig,
};

#[test]
fn gradients_match_finite_differences() {
    for seed in 0..5 {
        let err = common::gradient_check(6, 4, 5, 3, seed);
        assert!(err < 1e-5, "seed {seed}: relative error {err:e}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn gradients_match_for_random_shapes(input in 1usize..5, hidden in 1usize..5, len in 1usize..6, seed in any::<u64>()) {
        let err = common::gradient_check(input, hidden, len, 2, seed);
        prop_assert!(err < 1e-5, "relative error {err:e}");
    }
}

fn tiny_traces(seed: u64) -> Vec<vecsim_core::fleet::AvailabilityTrace> {
    let cfg = FleetConfig { node_count: 4, horizon_hours: 24 * 35, ..FleetConfig::default() };
    let fleet = generate_fleet(&cfg, seed).unwrap();
    generate_traces(&fleet, cfg.start_epoch, cfg.horizon_hours, seed).unwrap()
}

fn tiny_config(seed: u64) -> TrainConfig {
    TrainConfig { epochs: 3, hidden_size: 8, holdout_hours: 24 * 7, window_stride: 6, eval_every: 1, seed, ..TrainConfig::default() }
}

#[test]
fn training_is_deterministic_and_checkpoints_round_trip() {
    let traces = tiny_traces(3);
    let (a, curve_a) = train_on_traces(&traces, &tiny_config(3)).unwrap();
    let (b, curve_b) = train_on_traces(&traces, &tiny_config(3)).unwrap();
    assert_eq!(a.to_text(), b.to_text());
    assert_eq!(curve_a, curve_b);
    assert_eq!(curve_a.len(), 3);
    assert!(curve_a.iter().all(|p| p.holdout_accuracy.is_some()));

    let restored = ForecastModel::from_text(&a.to_text()).unwrap();
    assert_eq!(restored.rnn.params, a.rnn.params);
    let t = traces[0].start_epoch + 24 * 30 * 3600;
    let h = a.history_at(1, t).unwrap();
    let p = predict_availability(&a, 1, t, &h).unwrap().predicted_availability;
    assert_eq!(p, predict_availability(&restored, 1, t, &h).unwrap().predicted_availability);
    assert!(p > 0.0 && p < 1.0);

    let (c, _) = train_on_traces(&traces, &tiny_config(4)).unwrap();
    assert_ne!(a.to_text(), c.to_text());
}

#[test]
fn one_epoch_gives_one_curve_row() {
    let cfg = TrainConfig { epochs: 1, ..tiny_config(1) };
    let (_, curve) = train_on_traces(&tiny_traces(1), &cfg).unwrap();
    assert_eq!(curve.len(), 1);
    assert!(curve[0].mean_loss.is_finite());
}

#[test]
fn forecaster_prediction_matches_model_and_window_min_is_a_lower_bound() {
    let traces = tiny_traces(5);
    let (model, _) = train_on_traces(&traces, &tiny_config(5)).unwrap();
    let t = traces[0].start_epoch + 24 * 30 * 3600 + 1234;
    let direct = predict_availability(&model, 2, t, &model.history_at(2, t).unwrap()).unwrap().predicted_availability;
    let mut f = RnnForecaster::new(model);
    assert_eq!(f.availability(2, t, 60).unwrap(), direct);
    let start_only = f.availability(2, t, 3 * 3600).unwrap();
    f.window_min = true;
    assert!(f.availability(2, t, 3 * 3600).unwrap() <= start_only);
    assert!(f.availability(99, t, 60).is_err());
}
