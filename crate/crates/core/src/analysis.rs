//! Physical formulas and curve fits for characterising the crystal: Zeeman
//! splitting, the Planck phonon density at the Zeeman frequency,
//! exponential decays and Lorentzian spectral holes with side holes.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::lsq::{levenberg_marquardt, LeastSquaresProblem, LmOptions};
use crate::medium::{ProfileKind, SpectralProfile};
use crate::{Error, Result};

/// CODATA 2018 values in SI units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalConstants {
    pub bohr_magneton: f64,
    pub boltzmann: f64,
    pub planck: f64,
    pub hbar: f64,
    pub light_speed: f64,
}

pub const CONSTANTS: PhysicalConstants = PhysicalConstants {
    bohr_magneton: 9.274_010_078_3e-24,
    boltzmann: 1.380_649e-23,
    planck: 6.626_070_15e-34,
    hbar: 6.626_070_15e-34 / (2.0 * PI),
    light_speed: 299_792_458.0,
};

/// `ν = g µ_B B / h` in Hz.
pub fn zeeman_splitting(g: f64, b: f64) -> Result<f64> {
    if !(g > 0.0) || !g.is_finite() {
        return Err(Error::Domain(format!("g factor must be positive, got {g}")));
    }
    if !(b >= 0.0) || !b.is_finite() {
        return Err(Error::Domain(format!("field must be non-negative, got {b} T")));
    }
    Ok(g * CONSTANTS.bohr_magneton * b / CONSTANTS.planck)
}

/// Planck energy density of phonons at the Zeeman energy `E = g µ_B B`:
/// `u = E³ / (π² ħ³ c³) / (exp(E / k_B T) − 1)` in J/m³. Zero field gives 0.
pub fn phonon_density(b: f64, temperature: f64, g: f64) -> Result<f64> {
    if !(g > 0.0) || !g.is_finite() {
        return Err(Error::Domain(format!("g factor must be positive, got {g}")));
    }
    if !(b >= 0.0) || !b.is_finite() {
        return Err(Error::Domain(format!("field must be non-negative, got {b} T")));
    }
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::Domain(format!(
            "temperature must be positive, got {temperature} K"
        )));
    }
    if b == 0.0 {
        return Ok(0.0);
    }
    let k = &CONSTANTS;
    let energy = g * k.bohr_magneton * b;
    let prefactor = energy.powi(3) / (PI * PI * (k.hbar * k.light_speed).powi(3));
    let x = energy / (k.boltzmann * temperature);
    Ok(prefactor / x.exp_m1())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: BTreeMap<String, f64>,
    pub residual_rms: f64,
    pub converged: bool,
}

impl FitResult {
    pub fn param(&self, name: &str) -> Option<f64> {
        self.params.get(name).copied()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("fit serialization cannot fail")
    }
}

/// Least-squares problem over a scalar model `f(x; p)` with analytic gradient.
struct CurveFit<'a, M> {
    x: &'a [f64],
    y: &'a [f64],
    model: M,
}

impl<M: Fn(&[f64], f64, &mut [f64]) -> f64> CurveFit<'_, M> {
    fn cost(&self, p: &[f64]) -> f64 {
        self.residuals(p).iter().map(|r| r * r).sum()
    }
}

impl<M: Fn(&[f64], f64, &mut [f64]) -> f64> LeastSquaresProblem for CurveFit<'_, M> {
    fn residuals(&self, p: &[f64]) -> Vec<f64> {
        let mut grad = vec![0.0; p.len()];
        self.x
            .iter()
            .zip(self.y)
            .map(|(&x, &y)| (self.model)(p, x, &mut grad) - y)
            .collect()
    }

    fn jacobian(&self, p: &[f64]) -> DMatrix<f64> {
        let mut jac = DMatrix::zeros(self.x.len(), p.len());
        let mut grad = vec![0.0; p.len()];
        for (i, &x) in self.x.iter().enumerate() {
            (self.model)(p, x, &mut grad);
            for (j, g) in grad.iter().enumerate() {
                jac[(i, j)] = *g;
            }
        }
        jac
    }
}

fn fit_options() -> LmOptions {
    LmOptions {
        max_iterations: 1000,
        ftol: 1e-15,
        xtol: 1e-15,
        gtol: 1e-15,
    }
}

fn check_xy(x: &[f64], y: &[f64], min_points: usize) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::InvalidParameter(format!(
            "x and y lengths differ ({} vs {})",
            x.len(),
            y.len()
        )));
    }
    if x.len() < min_points {
        return Err(Error::InvalidParameter(format!(
            "need at least {min_points} points, got {}",
            x.len()
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("data must be finite".into()));
    }
    if x.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter(
            "abscissa must be strictly increasing".into(),
        ));
    }
    Ok(())
}

fn is_constant(y: &[f64]) -> bool {
    let (lo, hi) = y
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    hi - lo <= 1e-12 * lo.abs().max(hi.abs()).max(f64::MIN_POSITIVE)
}

/// Linear least squares `y ≈ Σ coeff_k basis_k`, returning coefficients and cost.
fn linear_fit(columns: &[Vec<f64>], y: &[f64]) -> Option<(Vec<f64>, f64)> {
    let a = DMatrix::from_fn(y.len(), columns.len(), |i, k| columns[k][i]);
    let b = DVector::from_column_slice(y);
    let coeffs = a.clone().svd(true, true).solve(&b, 1e-14).ok()?;
    let cost = (a * &coeffs - b).norm_squared();
    cost.is_finite().then(|| (coeffs.iter().copied().collect(), cost))
}

/// Model `Σ a_i exp(−t/τ_i) + c` in shifted time; params
/// `[a_1, ln τ_1, …, a_n, ln τ_n, c]`.
fn exp_model(p: &[f64], t: f64, grad: &mut [f64]) -> f64 {
    let n = (p.len() - 1) / 2;
    let mut value = p[2 * n];
    for i in 0..n {
        let (a, tau) = (p[2 * i], p[2 * i + 1].exp());
        let e = (-t / tau).exp();
        value += a * e;
        grad[2 * i] = e;
        grad[2 * i + 1] = a * e * t / tau;
    }
    grad[2 * n] = 1.0;
    value
}

/// `ln τ` from log-linear regression of the data tail above its minimum.
fn tail_time_constant(t: &[f64], y: &[f64]) -> Option<f64> {
    let n = t.len();
    let floor = y[n - 1];
    let sign = if y[0] >= floor { 1.0 } else { -1.0 };
    let pts: Vec<(f64, f64)> = (n / 4..(3 * n / 4).max(n / 4 + 2))
        .filter_map(|i| {
            let d = sign * (y[i] - floor);
            (d > 0.0).then(|| (t[i], d.ln()))
        })
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let m = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    let (mx, my) = (sx / m, sy / m);
    let (sxy, sxx) = pts
        .iter()
        .fold((0.0, 0.0), |a, p| (a.0 + (p.0 - mx) * (p.1 - my), a.1 + (p.0 - mx).powi(2)));
    let slope = sxy / sxx;
    (slope < 0.0 && slope.is_finite()).then(|| (-1.0 / slope).ln())
}

fn exp_starts(t: &[f64], y: &[f64], n_terms: usize) -> Vec<Vec<f64>> {
    let span = t[t.len() - 1];
    let min_dt = t.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    let (lo, hi) = ((0.5 * min_dt).ln(), (10.0 * span).ln());
    let count = 48;
    let mut taus: Vec<f64> = (0..count)
        .map(|k| lo + (hi - lo) * k as f64 / (count - 1) as f64)
        .collect();
    if let Some(tail) = tail_time_constant(t, y) {
        taus.push(tail);
    }
    let column = |ln_tau: f64| -> Vec<f64> { t.iter().map(|&ti| (-ti / ln_tau.exp()).exp()).collect() };
    let ones = vec![1.0; t.len()];

    let mut scored: Vec<(f64, Vec<f64>)> = Vec::new();
    if n_terms == 1 {
        for &lt in &taus {
            if let Some((c, cost)) = linear_fit(&[column(lt), ones.clone()], y) {
                scored.push((cost, vec![c[0], lt, c[1]]));
            }
        }
    } else {
        let cols: Vec<Vec<f64>> = taus.iter().map(|&lt| column(lt)).collect();
        for i in 0..taus.len() {
            for j in 0..taus.len() {
                if taus[j] <= taus[i] + 0.1 {
                    continue;
                }
                if let Some((c, cost)) = linear_fit(&[cols[i].clone(), cols[j].clone(), ones.clone()], y) {
                    scored.push((cost, vec![c[0], taus[i], c[1], taus[j], c[2]]));
                }
            }
        }
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    scored.into_iter().take(4).map(|(_, p)| p).collect()
}

fn refine_exponential(t: &[f64], y: &[f64], starts: Vec<Vec<f64>>) -> Result<(Vec<f64>, f64, bool)> {
    let problem = CurveFit { x: t, y, model: exp_model };
    let mut best: Option<(Vec<f64>, f64, bool)> = None;
    for s in starts {
        let start_cost = problem.cost(&s);
        let rep = levenberg_marquardt(&problem, &s, &fit_options());
        let candidate = if rep.cost.is_finite() && rep.cost <= start_cost {
            (rep.params, rep.cost, rep.converged)
        } else {
            (s, start_cost, false)
        };
        if best.as_ref().is_none_or(|b| candidate.1 < b.1) {
            best = Some(candidate);
        }
    }
    best.ok_or_else(|| Error::Domain("no finite least-squares start; data magnitudes overflow".into()))
}

/// Least-squares fit of `y = Σ_i a_i e^{−t/τ_i} + c` with one or two terms.
///
/// Parameters are reported as `a1, tau1[, a2, tau2], c` with terms ordered
/// by increasing time constant. Constant data yields zero amplitudes and
/// `c` equal to the mean.
pub fn fit_exponential(t: &[f64], y: &[f64], n_terms: usize) -> Result<FitResult> {
    if !(1..=2).contains(&n_terms) {
        return Err(Error::InvalidParameter(format!(
            "n_terms must be 1 or 2, got {n_terms}"
        )));
    }
    check_xy(t, y, 2 * (n_terms + 1))?;
    let t0 = t[0];
    let shifted: Vec<f64> = t.iter().map(|ti| ti - t0).collect();
    let span = shifted[shifted.len() - 1];

    if is_constant(y) {
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        let rms = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / y.len() as f64).sqrt();
        let mut params = BTreeMap::new();
        for i in 1..=n_terms {
            params.insert(format!("a{i}"), 0.0);
            params.insert(format!("tau{i}"), span * i as f64);
        }
        params.insert("c".into(), mean);
        return Ok(FitResult {
            params,
            residual_rms: rms,
            converged: true,
        });
    }

    let one = refine_exponential(&shifted, y, exp_starts(&shifted, y, 1))?;
    let (p, cost, converged) = if n_terms == 1 {
        one
    } else {
        let mut starts = exp_starts(&shifted, y, 2);
        // The one-term optimum embedded with a dormant second term.
        let (a, lt, c) = (one.0[0], one.0[1], one.0[2]);
        let dormant = (lt.exp() * 10.0).ln();
        starts.push(vec![a, lt, 0.0, dormant, c]);
        let two = refine_exponential(&shifted, y, starts)?;
        if two.1 <= one.1 {
            two
        } else {
            (vec![a, lt, 0.0, dormant, c], one.1, one.2)
        }
    };

    let mut terms: Vec<(f64, f64)> = (0..n_terms)
        .map(|i| {
            let tau = p[2 * i + 1].exp();
            (p[2 * i] * (t0 / tau).exp(), tau)
        })
        .collect();
    terms.sort_by(|a, b| a.1.total_cmp(&b.1));
    let mut params = BTreeMap::new();
    for (i, (a, tau)) in terms.iter().enumerate() {
        params.insert(format!("a{}", i + 1), *a);
        params.insert(format!("tau{}", i + 1), *tau);
    }
    params.insert("c".into(), p[2 * n_terms]);
    Ok(FitResult {
        params,
        residual_rms: (cost / y.len() as f64).sqrt(),
        converged,
    })
}

fn lorentzian(x: f64, center: f64, fwhm: f64) -> (f64, f64, f64) {
    // Value and derivatives with respect to center and width.
    let hw = 0.5 * fwhm;
    let u = (x - center) / hw;
    let l = 1.0 / (1.0 + u * u);
    let l2 = l * l;
    let d_center = 2.0 * u * l2 / hw;
    let d_width = u * u * l2 / fwhm * 2.0;
    (l, d_center, d_width)
}

/// Params `[baseline, amplitude, center, fwhm, spacing, side_fwhm, A_1..A_n]`
/// (the last four absent without side pairs).
fn hole_model(p: &[f64], x: f64, grad: &mut [f64]) -> f64 {
    let (b, a, c, w) = (p[0], p[1], p[2], p[3]);
    let (l, dc, dw) = lorentzian(x, c, w);
    let mut value = b + a * l;
    grad[0] = 1.0;
    grad[1] = l;
    grad[2] = a * dc;
    grad[3] = a * dw;
    if p.len() > 4 {
        let (s, ws) = (p[4], p[5]);
        grad[4] = 0.0;
        grad[5] = 0.0;
        for k in 1..=p.len() - 6 {
            let ak = p[5 + k];
            let kf = k as f64;
            let (lm, dcm, dwm) = lorentzian(x, c - kf * s, ws);
            let (lp, dcp, dwp) = lorentzian(x, c + kf * s, ws);
            value += ak * (lm + lp);
            grad[2] += ak * (dcm + dcp);
            grad[4] += ak * kf * (dcp - dcm);
            grad[5] += ak * (dwm + dwp);
            grad[5 + k] = lm + lp;
        }
    }
    value
}

fn half_max_width(x: &[f64], y: &[f64], peak: usize, baseline: f64) -> f64 {
    let half = baseline + 0.5 * (y[peak] - baseline);
    let crossing = |range: &mut dyn Iterator<Item = usize>| -> Option<f64> {
        let mut prev = peak;
        for i in range {
            if y[i] <= half {
                let frac = (y[prev] - half) / (y[prev] - y[i]);
                return Some(x[prev] + frac * (x[i] - x[prev]));
            }
            prev = i;
        }
        None
    };
    let left = crossing(&mut (0..peak).rev());
    let right = crossing(&mut (peak + 1..x.len()));
    let step = x[1] - x[0];
    match (left, right) {
        (Some(l), Some(r)) => r - l,
        (Some(l), None) => 2.0 * (x[peak] - l),
        (None, Some(r)) => 2.0 * (r - x[peak]),
        (None, None) => 0.25 * (x[x.len() - 1] - x[0]),
    }
    .max(2.0 * step)
}

struct HoleFit {
    params: Vec<f64>,
    cost: f64,
    converged: bool,
}

fn refine_holes(x: &[f64], y: &[f64], starts: Vec<Vec<f64>>) -> HoleFit {
    let problem = CurveFit { x, y, model: hole_model };
    let mut best: Option<HoleFit> = None;
    for s in starts {
        let start_cost = problem.cost(&s);
        let rep = levenberg_marquardt(&problem, &s, &fit_options());
        let fit = if rep.cost.is_finite() && rep.cost <= start_cost {
            HoleFit {
                params: rep.params,
                cost: rep.cost,
                converged: rep.converged,
            }
        } else {
            HoleFit {
                params: s,
                cost: start_cost,
                converged: false,
            }
        };
        if best.as_ref().is_none_or(|b| fit.cost < b.cost) {
            best = Some(fit);
        }
    }
    best.expect("at least one start")
}

fn fit_holes(x: &[f64], y: &[f64], n_side_pairs: usize) -> Result<HoleFit> {
    let step = x[1] - x[0];
    if n_side_pairs == 0 {
        let n = x.len();
        let edge = (n / 20).max(1);
        let baseline = (y[..edge].iter().sum::<f64>() + y[n - edge..].iter().sum::<f64>()) / (2 * edge) as f64;
        let peak = y
            .iter()
            .enumerate()
            .fold(0, |best, (i, v)| if *v > y[best] { i } else { best });
        let width = half_max_width(x, y, peak, baseline);
        let start = vec![baseline, y[peak] - baseline, x[peak], width];
        return Ok(refine_holes(x, y, vec![start]));
    }

    let prev = fit_holes(x, y, n_side_pairs - 1)?;
    let (c, w) = (prev.params[2], prev.params[3].abs());
    let (s_prev, ws_prev) = if n_side_pairs > 1 {
        (prev.params[4].abs(), prev.params[5].abs())
    } else {
        (0.0, w)
    };

    // Symmetric residual of the previous fit, as a function of offset from the center.
    let mut grad = vec![0.0; prev.params.len()];
    let resid: Vec<f64> = x
        .iter()
        .zip(y)
        .map(|(&xi, &yi)| yi - hole_model(&prev.params, xi, &mut grad))
        .collect();
    let sym_at = |offset: f64| -> f64 {
        let at = |f: f64| -> Option<f64> {
            let idx = ((f - x[0]) / step).round();
            (idx >= 0.0 && (idx as usize) < x.len()).then(|| resid[idx as usize])
        };
        match (at(c - offset), at(c + offset)) {
            (Some(a), Some(b)) => 0.5 * (a + b),
            (Some(a), None) | (None, Some(a)) => a,
            (None, None) => 0.0,
        }
    };
    let max_offset = (x[x.len() - 1] - c).max(c - x[0]);

    let mut starts = Vec::new();
    if n_side_pairs == 1 {
        let mut best = (0.0, f64::NEG_INFINITY);
        let mut offset = w.max(2.0 * step);
        while offset <= max_offset {
            let v = sym_at(offset);
            if v > best.1 {
                best = (offset, v);
            }
            offset += step;
        }
        if best.1 > 0.0 {
            let s = best.0;
            let ws = w.min(s).max(2.0 * step);
            starts.push(vec![prev.params[0], prev.params[1], c, w, s, ws, best.1]);
        }
    } else {
        let s = s_prev;
        let mut p = prev.params.clone();
        p.push(sym_at(n_side_pairs as f64 * s).max(0.0));
        starts.push(p);
    }
    if n_side_pairs as f64 * 3.0 * step > max_offset {
        return Err(Error::Resolution(format!(
            "{n_side_pairs} side-hole pairs cannot be resolved on this grid"
        )));
    }

    // Previous optimum with a dormant extra pair: the cost cannot increase.
    let mut dormant = prev.params.clone();
    if n_side_pairs == 1 {
        let s = (2.0 * w).min(max_offset / 2.0);
        dormant.extend([s, ws_prev, 0.0]);
    } else {
        dormant.push(0.0);
    }
    starts.push(dormant);
    let fit = refine_holes(x, y, starts);
    Ok(if fit.cost <= prev.cost {
        fit
    } else {
        let mut params = prev.params;
        if n_side_pairs == 1 {
            params.extend([(2.0 * w).min(max_offset / 2.0), ws_prev, 0.0]);
        } else {
            params.push(0.0);
        }
        HoleFit {
            params,
            cost: prev.cost,
            converged: prev.converged,
        }
    })
}

/// Fits a central Lorentzian transmission hole plus `n_side_pairs` pairs of
/// side holes at `center ± k·spacing` sharing one width.
///
/// Parameters: `baseline, amplitude, center_hz, fwhm_hz` and, with side
/// pairs, `side_spacing_hz, side_fwhm_hz, side_amplitude_k`.
pub fn fit_lorentzian_holes(spectrum: &SpectralProfile, n_side_pairs: usize) -> Result<FitResult> {
    spectrum.require_kind(ProfileKind::Transmission)?;
    let grid = spectrum.grid();
    let x: Vec<f64> = grid.detunings().collect();
    let y = spectrum.values();
    let n_params = 4 + if n_side_pairs > 0 { 2 + n_side_pairs } else { 0 };
    if x.len() < 2 * n_params {
        return Err(Error::Resolution(format!(
            "{} grid points cannot constrain {n_params} parameters",
            x.len()
        )));
    }
    if is_constant(y) {
        return Err(Error::Domain("spectrum has no transmission hole".into()));
    }
    let fit = fit_holes(&x, y, n_side_pairs)?;
    let p = &fit.params;
    let mut params = BTreeMap::new();
    params.insert("baseline".to_string(), p[0]);
    params.insert("amplitude".to_string(), p[1]);
    params.insert("center_hz".to_string(), p[2]);
    params.insert("fwhm_hz".to_string(), p[3].abs());
    if n_side_pairs > 0 {
        params.insert("side_spacing_hz".to_string(), p[4].abs());
        params.insert("side_fwhm_hz".to_string(), p[5].abs());
        for k in 1..=n_side_pairs {
            params.insert(format!("side_amplitude_{k}"), p[5 + k]);
        }
    }
    Ok(FitResult {
        params,
        residual_rms: (fit.cost / y.len() as f64).sqrt(),
        converged: fit.converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::medium::Grid;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn overflowing_data_is_rejected_not_panicking() {
        let t: Vec<f64> = (0..40).map(|i| i as f64 * 0.1).collect();
        let y: Vec<f64> = (0..40).map(|i| if i % 2 == 0 { 1e300 } else { -1e300 }).collect();
        assert!(fit_exponential(&t, &y, 2).is_err());
    }

    #[test]
    fn zeeman_values() {
        assert_eq!(zeeman_splitting(2.0, 0.0).unwrap(), 0.0);
        let nu = zeeman_splitting(2.0, 1.0).unwrap();
        assert!((nu / 1e9 - 27.99).abs() < 0.01, "{nu}");
        assert_eq!(zeeman_splitting(2.0, 2.0).unwrap(), 2.0 * nu);
        assert!(zeeman_splitting(0.0, 1.0).is_err());
        assert!(zeeman_splitting(2.0, -1.0).is_err());
    }

    #[test]
    fn phonon_density_limits() {
        assert_eq!(phonon_density(0.0, 1.0, 2.0).unwrap(), 0.0);
        let small = phonon_density(1e-6, 1.0, 2.0).unwrap();
        let smaller = phonon_density(1e-7, 1.0, 2.0).unwrap();
        assert!(small > 0.0 && smaller < small / 50.0);
        assert!(phonon_density(1.0, 0.0, 2.0).is_err());
        // Deep in the Boltzmann tail the density underflows to zero, not NaN.
        assert_eq!(phonon_density(10.0, 1e-3, 15.0).unwrap(), 0.0);
    }

    #[test]
    fn phonon_density_reference_value() {
        // Independent evaluation: E = gµ_B B, u = E³/(π²(ħc)³)/(e^{E/kT} − 1).
        let (g, b, t): (f64, f64, f64) = (2.0, 1.0, 1.0);
        let e = g * 9.2740100783e-24 * b;
        let hbar_c: f64 = 6.62607015e-34 / (2.0 * PI) * 299792458.0;
        let expected = e.powi(3) / (PI * PI * hbar_c.powi(3)) / ((e / (1.380649e-23 * t)).exp() - 1.0);
        let u = phonon_density(b, t, g).unwrap();
        assert!((u / expected - 1.0).abs() < 1e-9, "{u} vs {expected}");
    }

    #[test]
    fn single_exponential_exact() {
        let t: Vec<f64> = (0..60).map(|i| i as f64 * 0.25).collect();
        let y: Vec<f64> = t.iter().map(|t| 0.8 * (-t / 3.0).exp() + 0.1).collect();
        let fit = fit_exponential(&t, &y, 1).unwrap();
        assert!(fit.converged);
        assert!((fit.param("tau1").unwrap() / 3.0 - 1.0).abs() < 1e-6);
        assert!((fit.param("a1").unwrap() - 0.8).abs() < 1e-6);
        assert!((fit.param("c").unwrap() - 0.1).abs() < 1e-6);
    }

    #[test]
    fn shifted_time_origin() {
        let t: Vec<f64> = (0..40).map(|i| 5.0 + i as f64 * 0.25).collect();
        let y: Vec<f64> = t.iter().map(|t| 2.0 * (-t / 3.0).exp()).collect();
        let fit = fit_exponential(&t, &y, 1).unwrap();
        assert!((fit.param("a1").unwrap() - 2.0).abs() < 1e-6);
    }

    #[test]
    fn constant_data() {
        let t: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y = vec![0.4; 10];
        let fit = fit_exponential(&t, &y, 2).unwrap();
        assert_eq!(fit.param("a1"), Some(0.0));
        assert_eq!(fit.param("a2"), Some(0.0));
        assert!((fit.param("c").unwrap() - 0.4).abs() < 1e-15);
    }

    #[test]
    fn exponential_preconditions() {
        let t = [0.0, 1.0, 2.0];
        assert!(fit_exponential(&t, &[1.0, 0.5, 0.2], 1).is_err());
        assert!(fit_exponential(&[0.0, 1.0, 1.0, 2.0], &[1.0; 4], 1).is_err());
        assert!(fit_exponential(&[0.0, 1.0, 2.0, 3.0], &[1.0; 4], 3).is_err());
    }

    fn double_exp_data(seed: u64, noise: f64) -> (Vec<f64>, Vec<f64>) {
        let t: Vec<f64> = (0..200).map(|i| 1e-3 * (15e3f64).powf(i as f64 / 199.0)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, noise.max(1e-300)).unwrap();
        let y = t
            .iter()
            .map(|t| {
                0.6 * (-t / 0.010).exp() + 0.4 * (-t / 3.0).exp()
                    + if noise > 0.0 { normal.sample(&mut rng) } else { 0.0 }
            })
            .collect();
        (t, y)
    }

    #[test]
    fn double_exponential_recovery() {
        for seed in 0..5 {
            let (t, y) = double_exp_data(seed, 0.01);
            let fit = fit_exponential(&t, &y, 2).unwrap();
            let (t1, t2) = (fit.param("tau1").unwrap(), fit.param("tau2").unwrap());
            assert!((t1 / 0.010 - 1.0).abs() < 0.05, "seed {seed}: tau1 {t1}");
            assert!((t2 / 3.0 - 1.0).abs() < 0.05, "seed {seed}: tau2 {t2}");
        }
    }

    #[test]
    fn extra_term_never_hurts() {
        for seed in 0..5 {
            let (t, y) = double_exp_data(seed, 0.02);
            let one = fit_exponential(&t, &y, 1).unwrap();
            let two = fit_exponential(&t, &y, 2).unwrap();
            assert!(two.residual_rms <= one.residual_rms);
        }
    }

    fn hole_spectrum(fwhm: f64, side: Option<(f64, f64)>) -> SpectralProfile {
        let grid = Grid::centered(0.0, 10e6, 20e3).unwrap();
        let values = grid
            .detunings()
            .map(|f| {
                let mut v = 0.1 + 0.7 * lorentzian(f, 0.0, fwhm).0;
                if let Some((s, a)) = side {
                    v += a * (lorentzian(f, -s, fwhm).0 + lorentzian(f, s, fwhm).0);
                }
                v
            })
            .collect();
        SpectralProfile::from_grid(ProfileKind::Transmission, &grid, values).unwrap()
    }

    #[test]
    fn lorentzian_exact() {
        let fit = fit_lorentzian_holes(&hole_spectrum(1e6, None), 0).unwrap();
        assert!((fit.param("fwhm_hz").unwrap() / 1e6 - 1.0).abs() < 1e-6);
        assert!(fit.param("center_hz").unwrap().abs() < 1.0);
        assert!((fit.param("baseline").unwrap() - 0.1).abs() < 1e-6);
    }

    #[test]
    fn side_holes_recovered() {
        let fit = fit_lorentzian_holes(&hole_spectrum(1e6, Some((3e6, 0.2))), 1).unwrap();
        assert!((fit.param("side_spacing_hz").unwrap() / 3e6 - 1.0).abs() < 1e-4);
        assert!((fit.param("side_amplitude_1").unwrap() - 0.2).abs() < 1e-4);
        let plain = fit_lorentzian_holes(&hole_spectrum(1e6, Some((3e6, 0.2))), 0).unwrap();
        assert!(fit.residual_rms <= plain.residual_rms);
    }

    #[test]
    fn hole_fit_preconditions() {
        let od = hole_spectrum(1e6, None);
        let od = SpectralProfile::from_grid(ProfileKind::Od, &od.grid(), od.values().to_vec()).unwrap();
        assert!(matches!(fit_lorentzian_holes(&od, 0), Err(Error::KindMismatch { .. })));
        let grid = Grid::centered(0.0, 10e6, 20e3).unwrap();
        let flat = SpectralProfile::constant(ProfileKind::Transmission, &grid, 0.5).unwrap();
        assert!(fit_lorentzian_holes(&flat, 0).is_err());
        let tiny = Grid::new(-2e3, 1e3, 5).unwrap();
        let t = SpectralProfile::from_grid(ProfileKind::Transmission, &tiny, vec![0.1, 0.3, 0.9, 0.3, 0.1]).unwrap();
        assert!(matches!(fit_lorentzian_holes(&t, 3), Err(Error::Resolution(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn zeeman_is_bilinear(g in 0.1..20.0f64, b in 0.0..10.0f64, k in 0.1..10.0f64) {
            let base = zeeman_splitting(g, b).unwrap();
            prop_assert!((zeeman_splitting(g * k, b).unwrap() - k * base).abs() <= 1e-15 * (k * base).abs().max(1.0));
            prop_assert!((zeeman_splitting(g, b * k).unwrap() - k * base).abs() <= 1e-15 * (k * base).abs().max(1.0));
        }

        #[test]
        fn phonon_density_rises_with_temperature(b in 0.1..10.0f64, t in 0.3..3.9f64, dt in 0.001..0.1f64) {
            let lo = phonon_density(b, t, 2.0).unwrap();
            let hi = phonon_density(b, t + dt, 2.0).unwrap();
            prop_assert!(hi > lo || (lo == 0.0 && hi == 0.0));
        }
    }
}
