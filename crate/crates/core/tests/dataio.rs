use dpc_core::dataio::{
    apply_scaler, fit_scaler, generate_step_excitation, invert_scaler, minimum_data_length, persistent_excitation_check,
    ExcitationSpec, TrajectoryDataset,
};
use dpc_core::hankel::HankelBlocks;
use dpc_core::linalg::numerical_rank;
use dpc_core::plant::{PasteurizerParams, PasteurizerSurrogate, Plant};
use dpc_core::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn default_spec(samples: usize, seed: u64) -> ExcitationSpec {
    ExcitationSpec {
        n_u: 3,
        samples,
        ts: 10.0,
        bounds: vec![(30.0, 100.0), (20.0, 100.0), (0.0, 50.0)],
        step_duration_range: (5, 60),
        seed,
        synchronized: false,
    }
}

#[test]
fn default_excitation_is_exciting() {
    let u = generate_step_excitation(&default_spec(4000, 42)).unwrap();
    assert_eq!(u.shape(), (4000, 3));
    let past = persistent_excitation_check(&u, 10).unwrap();
    assert_eq!((past.rank, past.required, past.is_full), (30, 30, true));
    assert!(persistent_excitation_check(&u, 70).unwrap().is_full);
    assert_eq!(minimum_data_length(3, 10, 60, 9), 315);
}

#[test]
fn scaling_preserves_hankel_rank() {
    let u = generate_step_excitation(&default_spec(600, 3)).unwrap();
    let mut plant = PasteurizerSurrogate::new(PasteurizerParams::default()).unwrap();
    let mut y = DMatrix::zeros(600, 3);
    for t in 0..600 {
        let yt = plant.step(&u.row(t).transpose()).unwrap();
        y.row_mut(t).copy_from(&yt.transpose());
    }
    let data = TrajectoryDataset::new(u, y, 10.0).unwrap();
    let scaled = apply_scaler(&data, &fit_scaler(&data).unwrap()).unwrap();
    let raw = HankelBlocks::from_trajectory(&data.u, &data.y, 4, 6).unwrap();
    let norm = HankelBlocks::from_trajectory(&scaled.u, &scaled.y, 4, 6).unwrap();
    assert_eq!(numerical_rank(&raw.input_hankel(), 1e-10), numerical_rank(&norm.input_hankel(), 1e-10));
    assert_eq!(numerical_rank(&raw.input_hankel(), 1e-10), 30);
}

#[test]
fn white_noise_excitation_rank() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let u = DMatrix::from_fn(100, 2, |_, _| rng.random_range(-1.0..1.0));
    let report = persistent_excitation_check(&u, 5).unwrap();
    assert_eq!((report.rank, report.is_full), (10, true));
}

#[test]
fn constant_input_is_rank_one_per_channel() {
    let u = DMatrix::from_element(50, 2, 3.0);
    for order in 2..6 {
        let report = persistent_excitation_check(&u, order).unwrap();
        assert!(report.rank <= 2 && !report.is_full);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn excitation_respects_bounds(seed in any::<u64>(), samples in 10usize..300, lo in 1usize..5, extra in 0usize..10, sync in any::<bool>()) {
        let spec = ExcitationSpec { samples, step_duration_range: (lo, lo + extra), synchronized: sync, ..default_spec(samples, seed) };
        let u = generate_step_excitation(&spec).unwrap();
        for c in 0..3 {
            let (a, b) = spec.bounds[c];
            prop_assert!(u.column(c).iter().all(|&v| a <= v && v <= b));
        }
        prop_assert_eq!(u, generate_step_excitation(&spec).unwrap());
    }

    #[test]
    fn scaler_round_trip(seed in any::<u64>(), t in 2usize..60, n_u in 1usize..4, n_y in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = DMatrix::from_fn(t, n_u, |_, _| rng.random_range(-100.0..100.0));
        let y = DMatrix::from_fn(t, n_y, |_, _| rng.random_range(0.0..300.0));
        let data = TrajectoryDataset::new(u, y, 1.0).unwrap();
        let params = fit_scaler(&data).unwrap();
        let back = invert_scaler(&apply_scaler(&data, &params).unwrap(), &params).unwrap();
        prop_assert!((&back.u - &data.u).amax() <= 1e-12 * data.u.amax().max(1.0));
        prop_assert!((&back.y - &data.y).amax() <= 1e-12 * data.y.amax().max(1.0));
    }
}
