use afc_core::tomography::{
    process_fidelity, random_process, reconstruct_chi, simulate_tomography, ChiMatrix, MeasurementTable,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn table_and_process_files_round_trip() {
    let chi = random_process(&mut ChaCha8Rng::seed_from_u64(17));
    let table = simulate_tomography(&chi, 0.02, 4).unwrap();
    let from_csv = MeasurementTable::from_csv(table.to_csv().as_bytes()).unwrap();
    assert_eq!(from_csv, table);

    let rec = reconstruct_chi(&from_csv).unwrap();
    let restored = ChiMatrix::from_json(&rec.chi.to_json()).unwrap();
    assert_eq!(restored, rec.chi);
}

#[test]
fn reconstruction_is_deterministic() {
    let table = simulate_tomography(&ChiMatrix::identity_process(), 0.01, 8).unwrap();
    let a = reconstruct_chi(&table).unwrap();
    let b = reconstruct_chi(&table).unwrap();
    assert_eq!(a.chi, b.chi);
    assert_eq!(a.residual, b.residual);
}

#[test]
fn noisy_reconstructions_beat_raw_table_error() {
    // Fitting a physical χ can only remove noise components, never add them.
    let chi = random_process(&mut ChaCha8Rng::seed_from_u64(3));
    let ideal = simulate_tomography(&chi, 0.0, 0).unwrap();
    for seed in 0..10 {
        let noisy = simulate_tomography(&chi, 0.01, seed).unwrap();
        let rec = reconstruct_chi(&noisy).unwrap();
        let raw: f64 = (0..4)
            .flat_map(|i| (0..4).map(move |j| (i, j)))
            .map(|(i, j)| (noisy.get(i, j) - ideal.get(i, j)).powi(2))
            .sum();
        assert!(rec.residual <= raw + 1e-12, "seed {seed}: {} > {raw}", rec.residual);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn reconstructions_are_physical(process_seed in any::<u64>(), noise_seed in any::<u64>(), sigma in 0.0f64..0.05) {
        let chi = random_process(&mut ChaCha8Rng::seed_from_u64(process_seed));
        let rec = reconstruct_chi(&simulate_tomography(&chi, sigma, noise_seed).unwrap()).unwrap();
        prop_assert!(rec.residual >= 0.0);
        let f = process_fidelity(&rec.chi, &chi);
        prop_assert!((0.0..=1.0 + 1e-9).contains(&f));
        let eig = rec.chi.eigenvalues();
        prop_assert!(eig.iter().all(|&l| l >= -1e-9));
        prop_assert!((eig.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}
