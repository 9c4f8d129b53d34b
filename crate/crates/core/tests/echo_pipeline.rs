use afc_core::echo::{
    comb_profile, echo_metrics, embed_comb, propagate, schedule_multiwindow, transfer_function,
    AfcWindow, RecallOrder, StoredInput, TimeTrace,
};
use afc_core::medium::{build_inhomogeneous_profile, Grid, IonParameters, ProfileKind, SpectralProfile};
use proptest::prelude::*;

fn narrow_grid() -> Grid {
    Grid::centered(0.0, 100e6, 10e3).unwrap()
}

fn gaussian_teeth(sigma: f64, height: f64, floor: f64) -> SpectralProfile {
    let grid = narrow_grid();
    let values = grid
        .detunings()
        .map(|f| {
            let mut v = floor;
            for k in -25..25 {
                let c = (k as f64 + 0.5) * 2e6;
                v += height * (-(f - c).powi(2) / (2.0 * sigma * sigma)).exp();
            }
            v
        })
        .collect();
    SpectralProfile::from_grid(ProfileKind::Od, &grid, values).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn smooth_profiles_give_causal_responses(
        sigma in 60e3f64..200e3,
        height in 0.5f64..4.0,
        floor in 0.0f64..1.0,
    ) {
        let response = transfer_function(&gaussian_teeth(sigma, height, floor), 1).unwrap().impulse_response();
        prop_assert!(response.max_acausal() <= 1e-8 * response.peak(),
            "acausal {} vs peak {}", response.max_acausal(), response.peak());
    }

    #[test]
    fn absorbing_media_never_amplify(
        finesse in 1.5f64..6.0,
        depth in 0.1f64..5.0,
        background in 0.0f64..1.5,
    ) {
        let window = AfcWindow { center: 0.0, bandwidth: 100e6, delta: 2e6, finesse, depth, background };
        let input = TimeTrace::gaussian(0.0, 5e-9, 20_000, 2e-6, 40e-9, 0.0).unwrap();
        let output = propagate(&input, &transfer_function(&comb_profile(&window, &narrow_grid()).unwrap(), 1).unwrap()).unwrap();
        prop_assert!(output.energy() <= input.energy() * (1.0 + 1e-12));
    }
}

#[test]
fn comb_in_absorbing_line_slows_the_leakage() {
    let line = build_inhomogeneous_profile(&IonParameters::default(), &Grid::default()).unwrap();
    let window = AfcWindow {
        center: 0.0,
        bandwidth: 100e6,
        delta: 2e6,
        finesse: 3.0,
        depth: 3.0,
        background: 0.1,
    };
    let medium = embed_comb(&window, &line).unwrap();
    let input = TimeTrace::gaussian(0.0, 5e-9, 20_000, 2e-6, 40e-9, 0.0).unwrap();
    let output = propagate(&input, &transfer_function(&medium, 1).unwrap()).unwrap();
    let metrics = echo_metrics(&output, &input, 2.5e-6, 0.25e-6).unwrap();
    let delay = metrics.leakage_group_delay.unwrap();
    assert!(delay > 0.0, "leakage delay {delay}");
    assert!(metrics.efficiency > 0.0);
}

#[test]
fn frequency_dependent_delay() {
    let base = SpectralProfile::constant(ProfileKind::Od, &narrow_grid(), 3.0).unwrap();
    let fast = AfcWindow {
        center: -40e6,
        bandwidth: 40e6,
        delta: 2e6,
        finesse: 3.0,
        depth: 3.0,
        background: 0.1,
    };
    let slow = AfcWindow { center: 40e6, delta: 1e6, ..fast };
    let medium = embed_comb(&slow, &embed_comb(&fast, &base).unwrap()).unwrap();

    let t0 = 2e-6;
    let mut input = TimeTrace::gaussian(0.0, 5e-9, 20_000, t0, 150e-9, -40e6).unwrap();
    input.add_gaussian(t0, 150e-9, 40e6, 1.0);
    let output = propagate(&input, &transfer_function(&medium, 1).unwrap()).unwrap();

    let schedule = schedule_multiwindow(
        &[
            StoredInput { time_bin: t0, center: -40e6 },
            StoredInput { time_bin: t0, center: 40e6 },
        ],
        &[fast, slow],
    )
    .unwrap();
    assert_eq!(schedule.order, RecallOrder::Coincident);
    for echo in &schedule.echoes {
        let t = echo.expected_echo_time;
        let peak = output.peak_time_in(t - 0.1e-6, t + 0.1e-6).unwrap();
        assert!((peak - t).abs() <= 10e-9, "echo at {peak}, expected {t}");
        assert!(output.energy_in(t - 0.1e-6, t + 0.1e-6) > 0.01 * input.energy());
    }
}

#[test]
fn trace_files_round_trip() {
    let mut trace = TimeTrace::gaussian(-1e-6, 2e-9, 500, 0.0, 30e-9, 5e6).unwrap();
    trace.add_gaussian(0.4e-6, 30e-9, -5e6, 0.5);
    let from_csv = TimeTrace::from_csv(trace.to_csv().as_bytes()).unwrap();
    let from_json = TimeTrace::from_json(&trace.to_json()).unwrap();
    assert_eq!(from_csv, trace);
    assert_eq!(from_json, trace);
}
