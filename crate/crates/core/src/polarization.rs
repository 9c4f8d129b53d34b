//! Jones calculus for the polarization path: waveplate matrices, chain
//! composition, projective measurements and the waveplate compensation
//! solver.
//!
//! The half-waveplate matrix is the pure rotation form
//! `[[cos 2φ, -sin 2φ], [sin 2φ, cos 2φ]]`, not the textbook reflection.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt;
use std::ops::Mul;
use std::str::FromStr;

use nalgebra::Matrix2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const UNITARY_TOLERANCE: f64 = 1e-9;
const GRID_POINTS: usize = 16;
const REFINED_STARTS: usize = 8;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JonesMatrix(pub Matrix2<Complex64>);

impl JonesMatrix {
    pub fn identity() -> Self {
        JonesMatrix(Matrix2::identity())
    }

    pub fn from_rows(a: Complex64, b: Complex64, c: Complex64, d: Complex64) -> Self {
        JonesMatrix(Matrix2::new(a, b, c, d))
    }

    pub fn entry(&self, row: usize, col: usize) -> Complex64 {
        self.0[(row, col)]
    }

    pub fn adjoint(&self) -> Self {
        JonesMatrix(self.0.adjoint())
    }

    pub fn trace(&self) -> Complex64 {
        self.0.trace()
    }

    /// `‖J†J − I‖_F`.
    pub fn unitarity_error(&self) -> f64 {
        (self.0.adjoint() * self.0 - Matrix2::identity()).norm()
    }

    pub fn is_unitary(&self, tol: f64) -> bool {
        self.unitarity_error() <= tol
    }

    pub fn apply(&self, state: &PolarizationState) -> PolarizationState {
        let v = self.0 * nalgebra::Vector2::new(state.h, state.v);
        PolarizationState { h: v[0], v: v[1] }
    }

    pub fn scale(&self, factor: Complex64) -> Self {
        JonesMatrix(self.0 * factor)
    }

    /// Frobenius distance to `other`.
    pub fn distance(&self, other: &JonesMatrix) -> f64 {
        (self.0 - other.0).norm()
    }
}

impl Mul for JonesMatrix {
    type Output = JonesMatrix;

    fn mul(self, rhs: JonesMatrix) -> JonesMatrix {
        JonesMatrix(self.0 * rhs.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum WaveplateKind {
    Hwp,
    Qwp,
    H0,
    Arb,
}

impl WaveplateKind {
    pub fn angle_count(self) -> usize {
        match self {
            WaveplateKind::Arb => 2,
            _ => 1,
        }
    }
}

impl FromStr for WaveplateKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "HWP" => Ok(WaveplateKind::Hwp),
            "QWP" => Ok(WaveplateKind::Qwp),
            "H0" => Ok(WaveplateKind::H0),
            "ARB" => Ok(WaveplateKind::Arb),
            other => Err(Error::Domain(format!("unknown waveplate kind '{other}'"))),
        }
    }
}

pub fn hwp(phi: f64) -> JonesMatrix {
    let (s, co) = (2.0 * phi).sin_cos();
    JonesMatrix::from_rows(c(co, 0.0), c(-s, 0.0), c(s, 0.0), c(co, 0.0))
}

pub fn qwp(phi: f64) -> JonesMatrix {
    let (s, co) = (2.0 * phi).sin_cos();
    let k = FRAC_1_SQRT_2;
    JonesMatrix::from_rows(
        c(k, -k * co),
        c(0.0, -k * s),
        c(0.0, -k * s),
        c(k, k * co),
    )
}

/// Tilted half waveplate at 0°: phase `γ` on V relative to H.
pub fn h0(gamma: f64) -> JonesMatrix {
    JonesMatrix::from_rows(
        c(1.0, 0.0),
        c(0.0, 0.0),
        c(0.0, 0.0),
        Complex64::from_polar(1.0, gamma),
    )
}

/// Retarder of retardance `γ` with its axis at `φ`.
pub fn arb(phi: f64, gamma: f64) -> JonesMatrix {
    let (s2, c2) = (2.0 * phi).sin_cos();
    let (sg, cg) = (0.5 * gamma).sin_cos();
    JonesMatrix::from_rows(
        c(cg, -sg * c2),
        c(0.0, -sg * s2),
        c(0.0, -sg * s2),
        c(cg, sg * c2),
    )
}

pub fn waveplate(kind: WaveplateKind, angles: &[f64]) -> Result<JonesMatrix> {
    if angles.len() != kind.angle_count() {
        return Err(Error::Domain(format!(
            "{kind:?} takes {} angle(s), got {}",
            kind.angle_count(),
            angles.len()
        )));
    }
    Ok(match kind {
        WaveplateKind::Hwp => hwp(angles[0]),
        WaveplateKind::Qwp => qwp(angles[0]),
        WaveplateKind::H0 => h0(angles[0]),
        WaveplateKind::Arb => arb(angles[0], angles[1]),
    })
}

/// Product of a chain given in propagation order: `[A, B, C]` ↦ `C·B·A`.
pub fn compose(chain: &[JonesMatrix]) -> JonesMatrix {
    chain
        .iter()
        .fold(JonesMatrix::identity(), |acc, m| *m * acc)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolarizationState {
    pub h: Complex64,
    pub v: Complex64,
}

impl PolarizationState {
    /// Normalized state; the zero vector is rejected.
    pub fn new(h: Complex64, v: Complex64) -> Result<Self> {
        let norm = (h.norm_sqr() + v.norm_sqr()).sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::Domain("polarization state must be non-zero".into()));
        }
        Ok(PolarizationState {
            h: h / norm,
            v: v / norm,
        })
    }

    pub fn horizontal() -> Self {
        PolarizationState {
            h: c(1.0, 0.0),
            v: c(0.0, 0.0),
        }
    }

    pub fn vertical() -> Self {
        PolarizationState {
            h: c(0.0, 0.0),
            v: c(1.0, 0.0),
        }
    }

    pub fn diagonal() -> Self {
        PolarizationState {
            h: c(FRAC_1_SQRT_2, 0.0),
            v: c(FRAC_1_SQRT_2, 0.0),
        }
    }

    pub fn antidiagonal() -> Self {
        PolarizationState {
            h: c(FRAC_1_SQRT_2, 0.0),
            v: c(-FRAC_1_SQRT_2, 0.0),
        }
    }

    /// `(H − iV)/√2`.
    pub fn right() -> Self {
        PolarizationState {
            h: c(FRAC_1_SQRT_2, 0.0),
            v: c(0.0, -FRAC_1_SQRT_2),
        }
    }

    pub fn left() -> Self {
        PolarizationState {
            h: c(FRAC_1_SQRT_2, 0.0),
            v: c(0.0, FRAC_1_SQRT_2),
        }
    }

    /// The tomography set in order H, V, D, R.
    pub fn tomography_set() -> [PolarizationState; 4] {
        [
            Self::horizontal(),
            Self::vertical(),
            Self::diagonal(),
            Self::right(),
        ]
    }

    pub fn norm(&self) -> f64 {
        (self.h.norm_sqr() + self.v.norm_sqr()).sqrt()
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &PolarizationState) -> Complex64 {
        self.h.conj() * other.h + self.v.conj() * other.v
    }

    pub fn as_vector(&self) -> nalgebra::Vector2<Complex64> {
        nalgebra::Vector2::new(self.h, self.v)
    }
}

/// `|⟨analyzer|state⟩|²`, clamped to [0, 1].
pub fn project(state: &PolarizationState, analyzer: &PolarizationState) -> f64 {
    analyzer.inner(state).norm_sqr().clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CompensationConfig {
    /// Tilted HWP, HWP, unknown element, HWP. Angles `[φ1, φ2, γ]`.
    TiltedHwpSandwich,
    /// HWP, QWP, HWP, unknown element. Angles `[φ1, φ2, φ3]`.
    HwpQwpHwp,
}

impl CompensationConfig {
    fn angle_ranges(self) -> [f64; 3] {
        match self {
            CompensationConfig::TiltedHwpSandwich => [PI, PI, 2.0 * PI],
            CompensationConfig::HwpQwpHwp => [PI, PI, PI],
        }
    }
}

impl FromStr for CompensationConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace('-', "_").as_str() {
            "TILTED_HWP_SANDWICH" | "I" | "1" => Ok(CompensationConfig::TiltedHwpSandwich),
            "HWP_QWP_HWP" | "II" | "2" => Ok(CompensationConfig::HwpQwpHwp),
            other => Err(Error::Domain(format!("unknown configuration '{other}'"))),
        }
    }
}

impl fmt::Display for CompensationConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CompensationConfig::TiltedHwpSandwich => "TILTED_HWP_SANDWICH",
            CompensationConfig::HwpQwpHwp => "HWP_QWP_HWP",
        })
    }
}

/// Net Jones matrix of a configuration around `j_arb`.
pub fn compensation_chain(
    j_arb: &JonesMatrix,
    config: CompensationConfig,
    angles: [f64; 3],
) -> JonesMatrix {
    match config {
        CompensationConfig::TiltedHwpSandwich => {
            compose(&[h0(angles[2]), hwp(angles[0]), *j_arb, hwp(angles[1])])
        }
        CompensationConfig::HwpQwpHwp => {
            compose(&[hwp(angles[0]), qwp(angles[1]), hwp(angles[2]), *j_arb])
        }
    }
}

/// `min_θ ‖M − e^{iθ} I‖_F` and the minimizing `θ`.
pub fn distance_to_identity(m: &JonesMatrix) -> (f64, f64) {
    let tr = m.trace();
    let sq = m.0.norm_squared() + 2.0 - 2.0 * tr.norm();
    (sq.max(0.0).sqrt(), tr.arg())
}

fn squared_distance(m: &JonesMatrix) -> f64 {
    (m.0.norm_squared() + 2.0 - 2.0 * m.trace().norm()).max(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompensationSolution {
    #[serde(rename = "angles_rad")]
    pub angles: Vec<f64>,
    #[serde(rename = "global_phase_rad")]
    pub global_phase: f64,
    pub residual: f64,
}

fn explore<F: Fn([f64; 3]) -> f64>(f: &F, base: [f64; 3], f_base: f64, step: f64) -> ([f64; 3], f64) {
    let (mut x, mut fx) = (base, f_base);
    for i in 0..3 {
        for dir in [1.0, -1.0] {
            let mut trial = x;
            trial[i] += dir * step;
            let ft = f(trial);
            if ft < fx {
                x = trial;
                fx = ft;
                break;
            }
        }
    }
    (x, fx)
}

/// Hooke–Jeeves search: coordinate exploration plus pattern moves along
/// the last successful displacement.
fn pattern_search<F: Fn([f64; 3]) -> f64>(f: &F, start: [f64; 3], step0: f64) -> ([f64; 3], f64) {
    let mut base = start;
    let mut f_base = f(base);
    let mut step = step0;
    while step > 1e-13 && f_base > 0.0 {
        let (mut x, mut fx) = explore(f, base, f_base, step);
        if fx >= f_base {
            step *= 0.5;
            continue;
        }
        loop {
            let pattern = [2.0 * x[0] - base[0], 2.0 * x[1] - base[1], 2.0 * x[2] - base[2]];
            base = x;
            f_base = fx;
            let f_pattern = f(pattern);
            let (y, fy) = explore(f, pattern, f_pattern, step);
            if fy < f_base {
                x = y;
                fx = fy;
            } else {
                break;
            }
        }
    }
    (base, f_base)
}

/// Waveplate angles bringing the configuration closest to the identity up
/// to a global phase: a 16-point grid per angle, then pattern-search
/// refinement from the best grid points.
pub fn solve_compensation(
    j_arb: &JonesMatrix,
    config: CompensationConfig,
) -> Result<CompensationSolution> {
    if !j_arb.is_unitary(UNITARY_TOLERANCE) {
        return Err(Error::Domain(format!(
            "element is not unitary (‖J†J − I‖ = {:.3e})",
            j_arb.unitarity_error()
        )));
    }
    let ranges = config.angle_ranges();
    let objective = |a: [f64; 3]| squared_distance(&compensation_chain(j_arb, config, a));

    let mut grid: Vec<([f64; 3], f64)> = Vec::with_capacity(GRID_POINTS.pow(3));
    for i in 0..GRID_POINTS {
        for j in 0..GRID_POINTS {
            for k in 0..GRID_POINTS {
                let a = [
                    ranges[0] * i as f64 / GRID_POINTS as f64,
                    ranges[1] * j as f64 / GRID_POINTS as f64,
                    ranges[2] * k as f64 / GRID_POINTS as f64,
                ];
                grid.push((a, objective(a)));
            }
        }
    }
    grid.sort_by(|a, b| a.1.total_cmp(&b.1));

    let step0 = PI / GRID_POINTS as f64;
    let (best, _) = grid
        .iter()
        .take(REFINED_STARTS)
        .map(|(a, _)| pattern_search(&objective, *a, step0))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("grid is non-empty");

    let angles: Vec<f64> = best
        .iter()
        .zip(ranges)
        .map(|(a, r)| a.rem_euclid(r))
        .collect();
    let (residual, global_phase) =
        distance_to_identity(&compensation_chain(j_arb, config, [angles[0], angles[1], angles[2]]));
    Ok(CompensationSolution {
        angles,
        global_phase,
        residual,
    })
}

/// Axis and retardance of sample `index` of a seeded draw: axis uniform on
/// [0, π), retardance uniform on [0, 2π).
pub fn sample_retarder_angles(seed: u64, index: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let phi = rng.random_range(0.0..PI);
    let gamma = rng.random_range(0.0..2.0 * PI);
    (phi, gamma)
}

pub fn sample_retarder(seed: u64, index: u64) -> JonesMatrix {
    let (phi, gamma) = sample_retarder_angles(seed, index);
    arb(phi, gamma)
}

/// Largest compensation residual over `n_samples` seeded retarders.
pub fn config_worst_case(config: CompensationConfig, n_samples: usize, seed: u64) -> Result<f64> {
    if n_samples == 0 {
        return Err(Error::InvalidParameter("n_samples must be at least 1".into()));
    }
    let residuals: Result<Vec<f64>> = (0..n_samples as u64)
        .into_par_iter()
        .map(|i| solve_compensation(&sample_retarder(seed, i), config).map(|s| s.residual))
        .collect();
    Ok(residuals?.into_iter().fold(0.0, f64::max))
}
