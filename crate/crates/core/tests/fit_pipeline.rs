use afc_core::analysis::{fit_exponential, fit_lorentzian_holes, zeeman_splitting};
use afc_core::medium::{Grid, ProfileKind, SpectralProfile};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn lorentz(f: f64, center: f64, fwhm: f64) -> f64 {
    1.0 / (1.0 + (2.0 * (f - center) / fwhm).powi(2))
}

fn spectrum(spacing: f64, side: f64, noise: f64, seed: u64) -> SpectralProfile {
    let grid = Grid::centered(0.0, 12e6, 20e3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let values = grid
        .detunings()
        .map(|f| {
            0.05 + 0.6 * lorentz(f, 0.0, 0.6e6)
                + side * (lorentz(f, -spacing, 0.6e6) + lorentz(f, spacing, 0.6e6))
                + 0.25 * side * (lorentz(f, -2.0 * spacing, 0.6e6) + lorentz(f, 2.0 * spacing, 0.6e6))
                + noise * normal.sample(&mut rng)
        })
        .collect();
    SpectralProfile::from_grid(ProfileKind::Transmission, &grid, values).unwrap()
}

#[test]
fn double_exponential_over_seeds() {
    let t: Vec<f64> = (0..200).map(|i| 1e-3 * (15e3f64).powf(i as f64 / 199.0)).collect();
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 0.005).unwrap();
        let y: Vec<f64> = t
            .iter()
            .map(|t| 0.6 * (-t / 0.010).exp() + 0.4 * (-t / 3.0).exp() + normal.sample(&mut rng))
            .collect();
        let fit = fit_exponential(&t, &y, 2).unwrap();
        let (fast, slow) = (fit.param("tau1").unwrap(), fit.param("tau2").unwrap());
        assert!((fast / 0.010 - 1.0).abs() < 0.05, "seed {seed}: fast {fast}");
        assert!((slow / 3.0 - 1.0).abs() < 0.05, "seed {seed}: slow {slow}");
    }
}

#[test]
fn side_hole_spacing_tracks_zeeman_splitting() {
    // Side holes sit at a fixed fraction of the ground-state splitting.
    let fraction = 1e-4;
    let spacing = |b: f64| fraction * zeeman_splitting(2.0, b).unwrap();
    let fit = |b: f64| {
        fit_lorentzian_holes(&spectrum(spacing(b), 0.15, 0.002, 1), 2)
            .unwrap()
            .param("side_spacing_hz")
            .unwrap()
    };
    let (low, high) = (fit(1.0), fit(2.0));
    assert!((high / low / 2.0 - 1.0).abs() < 0.05, "{low} {high}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10))]

    #[test]
    fn more_side_pairs_never_fit_worse(spacing in 1.5e6f64..3e6, side in 0.0f64..0.2, seed in 0u64..1000) {
        let data = spectrum(spacing, side, 0.01, seed);
        let residuals: Vec<f64> = (0..3)
            .map(|n| fit_lorentzian_holes(&data, n).unwrap().residual_rms)
            .collect();
        prop_assert!(residuals[1] <= residuals[0] * (1.0 + 1e-12), "{:?}", residuals);
        prop_assert!(residuals[2] <= residuals[1] * (1.0 + 1e-12), "{:?}", residuals);
    }

    #[test]
    fn fits_are_deterministic(spacing in 1.5e6f64..3e6, seed in 0u64..1000) {
        let data = spectrum(spacing, 0.1, 0.01, seed);
        prop_assert_eq!(fit_lorentzian_holes(&data, 1).unwrap(), fit_lorentzian_holes(&data, 1).unwrap());
    }
}
