//! AFC storage: the closed-form efficiency estimate, square-tooth comb
//! profiles, causal transfer functions and FFT-based propagation of pulse
//! envelopes, plus multi-window scheduling and echo diagnostics.
//!
//! Conventions: a trace `a(t)` has spectrum `A(f) = Σ a(t) e^{-i2πft}`, so
//! a pulse detuned by `f_c` carries the envelope factor `e^{+i2πf_c t}`.
//! A transfer function `H(f) = exp(-K(f))` is causal when `K` only has
//! non-negative-time Fourier components.

use std::f64::consts::PI;
use std::io::Read;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::medium::{Grid, ProfileKind, SpectralProfile};
use crate::{Error, Result};

/// Minimum zero-padding factor of the Kramers–Kronig reconstruction.
pub const KK_PADDING: usize = 4;
/// Fraction of the grid, at each edge, over which the OD is tapered to zero
/// before the Hilbert transform.
pub const KK_APODIZATION: f64 = 0.05;
/// Intensity fraction of the frequency-shifter etalon leakage.
pub const ETALON_LEAKAGE: f64 = 0.009;

/// Spectral energy fraction outside the response grid tolerated by
/// [`propagate`].
const ALIASING_TOLERANCE: f64 = 1e-6;

/// One comb window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AfcWindow {
    /// Window center (Hz).
    pub center: f64,
    /// Full window width (Hz).
    pub bandwidth: f64,
    /// Tooth spacing Δ (Hz).
    pub delta: f64,
    /// Δ / tooth width.
    pub finesse: f64,
    /// Tooth height above the background (OD).
    pub depth: f64,
    /// Background OD left in the troughs.
    pub background: f64,
}

impl AfcWindow {
    pub fn validate(&self) -> Result<()> {
        if !self.center.is_finite() {
            return Err(Error::InvalidParameter("window center must be finite".into()));
        }
        if !(self.delta > 0.0) || !self.delta.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "tooth spacing must be positive, got {}",
                self.delta
            )));
        }
        if !(self.bandwidth >= self.delta) || !self.bandwidth.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "window bandwidth {} must be at least the tooth spacing {}",
                self.bandwidth, self.delta
            )));
        }
        if !(self.finesse >= 1.0) || !self.finesse.is_finite() {
            return Err(Error::Domain(format!(
                "finesse must be >= 1, got {}",
                self.finesse
            )));
        }
        if !(self.depth >= 0.0) || !(self.background >= 0.0) {
            return Err(Error::InvalidParameter(
                "comb depth and background must be non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn storage_time(&self) -> f64 {
        1.0 / self.delta
    }

    pub fn tooth_width(&self) -> f64 {
        self.delta / self.finesse
    }

    pub fn edges(&self) -> (f64, f64) {
        (
            self.center - 0.5 * self.bandwidth,
            self.center + 0.5 * self.bandwidth,
        )
    }

    /// Number of whole periods that fit in the window.
    pub fn tooth_count(&self) -> usize {
        (self.bandwidth / self.delta + 1e-9).floor() as usize
    }

    /// Tooth centers: one per period, periods tiled symmetrically about the
    /// window center.
    pub fn tooth_centers(&self) -> Vec<f64> {
        let n = self.tooth_count();
        let first = self.center - 0.5 * n as f64 * self.delta;
        (0..n)
            .map(|k| first + (k as f64 + 0.5) * self.delta)
            .collect()
    }

    /// Trough centers between (and flanking) the teeth.
    pub fn trough_centers(&self) -> Vec<f64> {
        let n = self.tooth_count();
        let first = self.center - 0.5 * n as f64 * self.delta;
        (0..=n).map(|k| first + k as f64 * self.delta).collect()
    }

    pub fn contains(&self, f: f64) -> bool {
        let (lo, hi) = self.edges();
        f >= lo && f <= hi
    }

    /// Analytic efficiency of this window.
    pub fn analytic_efficiency(&self) -> Result<f64> {
        afc_efficiency_analytic(self.depth, self.finesse, self.background)
    }
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        x.sin() / x
    }
}

/// `η = (d/F)² e^{-d/F} sinc²(π/F) e^{-d₀}` with `sinc(x) = sin(x)/x`.
pub fn afc_efficiency_analytic(d: f64, finesse: f64, d0: f64) -> Result<f64> {
    if !(finesse >= 1.0) || !finesse.is_finite() {
        return Err(Error::Domain(format!("finesse must be >= 1, got {finesse}")));
    }
    if !(d >= 0.0) || !(d0 >= 0.0) || !d.is_finite() {
        return Err(Error::Domain(format!(
            "optical depths must be non-negative, got d={d}, d0={d0}"
        )));
    }
    let x = d / finesse;
    let s = sinc(PI / finesse);
    Ok((x * x * (-x).exp() * s * s * (-d0).exp()).clamp(0.0, 1.0))
}

/// Storage time `1/Δ`.
pub fn storage_time(delta: f64) -> Result<f64> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::Domain(format!(
            "tooth spacing must be positive, got {delta}"
        )));
    }
    Ok(1.0 / delta)
}

/// OD of the comb at `f` when `f` lies in the window. Odd-indexed teeth are
/// scaled by `odd_tooth_scale`.
fn comb_od_at(window: &AfcWindow, grid: &Grid, f: f64, odd_tooth_scale: f64) -> Option<f64> {
    let (lo, hi) = window.edges();
    if !grid.in_closed(f, lo, hi) {
        return None;
    }
    let n = window.tooth_count() as i64;
    let first = window.center - 0.5 * n as f64 * window.delta;
    let half = 0.5 * window.tooth_width();
    let k0 = ((f - first) / window.delta).floor() as i64;
    for k in [k0 - 1, k0, k0 + 1] {
        if k < 0 || k >= n {
            continue;
        }
        let c = first + (k as f64 + 0.5) * window.delta;
        if grid.in_closed(f, c - half, c + half) {
            let scale = if k % 2 == 1 { odd_tooth_scale } else { 1.0 };
            return Some(window.background + window.depth * scale);
        }
    }
    Some(window.background)
}

fn check_comb_resolution(window: &AfcWindow, grid: &Grid) -> Result<()> {
    window.validate()?;
    grid.validate()?;
    if window.tooth_width() < 2.0 * grid.step {
        return Err(Error::Resolution(format!(
            "tooth width {} Hz spans fewer than 2 grid steps of {} Hz",
            window.tooth_width(),
            grid.step
        )));
    }
    let (lo, hi) = window.edges();
    grid.require_covers(lo, hi)
}

/// Square-tooth comb: `d₀ + d` on the teeth, `d₀` in the troughs and
/// everywhere outside the window.
pub fn comb_profile(window: &AfcWindow, grid: &Grid) -> Result<SpectralProfile> {
    comb_profile_alternating(window, grid, 1.0)
}

/// As [`comb_profile`], with every other tooth's height scaled by
/// `odd_tooth_scale` (0 suppresses them).
pub fn comb_profile_alternating(
    window: &AfcWindow,
    grid: &Grid,
    odd_tooth_scale: f64,
) -> Result<SpectralProfile> {
    check_comb_resolution(window, grid)?;
    if !(odd_tooth_scale >= 0.0) {
        return Err(Error::InvalidParameter(
            "tooth scale must be non-negative".into(),
        ));
    }
    let values = grid
        .detunings()
        .map(|f| comb_od_at(window, grid, f, odd_tooth_scale).unwrap_or(window.background))
        .collect();
    SpectralProfile::from_grid(ProfileKind::Od, grid, values)
}

/// Replaces `base` by the comb inside the window, leaving it untouched
/// elsewhere. Windows can be embedded one after another.
pub fn embed_comb(window: &AfcWindow, base: &SpectralProfile) -> Result<SpectralProfile> {
    base.require_kind(ProfileKind::Od)?;
    let grid = base.grid();
    check_comb_resolution(window, &grid)?;
    let values = grid
        .detunings()
        .zip(base.values())
        .map(|(f, &b)| comb_od_at(window, &grid, f, 1.0).unwrap_or(b))
        .collect();
    SpectralProfile::from_grid(ProfileKind::Od, &grid, values)
}

fn fft_len(min: usize) -> usize {
    // Smallest even 2^a 3^b 5^c >= min.
    let mut best = usize::MAX;
    let mut p2 = 2;
    while p2 < 2 * min.max(1) {
        let mut p3 = p2;
        while p3 < 2 * min.max(1) {
            let mut p5 = p3;
            while p5 < min {
                p5 *= 5;
            }
            best = best.min(p5);
            p3 *= 3;
        }
        p2 *= 2;
    }
    best
}

struct FftPair {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl FftPair {
    fn new(len: usize) -> Self {
        let mut planner = FftPlanner::new();
        FftPair {
            forward: planner.plan_fft_forward(len),
            inverse: planner.plan_fft_inverse(len),
        }
    }
}

/// Complex response of an absorber, defined on the profile grid and
/// periodically on the padded Kramers–Kronig grid around it.
#[derive(Debug, Clone)]
pub struct TransferFunction {
    grid: Grid,
    passes: u32,
    /// `ln H = -K` on the padded grid, index `j` ↔ `start + j * step`
    /// (mod the padded length).
    log_response: Vec<Complex64>,
}

/// Causal amplitude/phase response of `passes` traversals of an OD profile.
///
/// The amplitude is `exp(-passes·OD/2)`; the phase is the discrete Hilbert
/// transform of `passes·OD/2`, computed on a ≥4× zero-padded grid after
/// tapering the outer 5% of the profile to zero at each edge.
pub fn transfer_function(profile: &SpectralProfile, passes: u32) -> Result<TransferFunction> {
    profile.require_kind(ProfileKind::Od)?;
    if passes == 0 {
        return Err(Error::InvalidParameter("passes must be at least 1".into()));
    }
    let grid = profile.grid();
    grid.validate()?;
    let n = grid.count;
    let m = fft_len(KK_PADDING * n);
    let taper_len = ((KK_APODIZATION * n as f64).ceil() as usize).max(1);

    let scale = 0.5 * passes as f64;
    let mut buf: Vec<Complex64> = vec![Complex64::new(0.0, 0.0); m];
    for (j, &od) in profile.values().iter().enumerate() {
        let edge = j.min(n - 1 - j);
        let w = if edge < taper_len {
            let x = (edge as f64 + 0.5) / taper_len as f64;
            (0.5 * PI * x).sin().powi(2)
        } else {
            1.0
        };
        buf[j] = Complex64::new(scale * od * w, 0.0);
    }

    let fft = FftPair::new(m);
    fft.inverse.process(&mut buf);
    let norm = 1.0 / m as f64;
    // One-sided (causal) cepstrum.
    buf[0] *= norm;
    for v in &mut buf[1..m / 2] {
        *v *= 2.0 * norm;
    }
    buf[m / 2] *= norm;
    for v in &mut buf[m / 2 + 1..] {
        *v = Complex64::new(0.0, 0.0);
    }
    fft.forward.process(&mut buf);
    for v in &mut buf {
        *v = -*v;
    }

    Ok(TransferFunction {
        grid,
        passes,
        log_response: buf,
    })
}

/// Impulse response sampled on `t_n = n·dt`; indices above `len/2`
/// represent negative times.
#[derive(Debug, Clone)]
pub struct ImpulseResponse {
    pub dt: f64,
    pub samples: Vec<Complex64>,
}

impl ImpulseResponse {
    pub fn time(&self, n: usize) -> f64 {
        let len = self.samples.len();
        if n <= len / 2 {
            n as f64 * self.dt
        } else {
            (n as f64 - len as f64) * self.dt
        }
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().map(|h| h.norm()).fold(0.0, f64::max)
    }

    /// Largest magnitude at strictly negative times.
    pub fn max_acausal(&self) -> f64 {
        let len = self.samples.len();
        self.samples[len / 2 + 1..]
            .iter()
            .map(|h| h.norm())
            .fold(0.0, f64::max)
    }
}

impl TransferFunction {
    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn passes(&self) -> u32 {
        self.passes
    }

    pub fn padded_len(&self) -> usize {
        self.log_response.len()
    }

    /// Complex response on the profile grid.
    pub fn values(&self) -> Vec<Complex64> {
        self.log_response[..self.grid.count]
            .iter()
            .map(|l| l.exp())
            .collect()
    }

    pub fn amplitude(&self) -> Vec<f64> {
        self.log_response[..self.grid.count]
            .iter()
            .map(|l| l.re.exp())
            .collect()
    }

    /// Unwrapped phase on the profile grid (rad).
    pub fn phase(&self) -> Vec<f64> {
        self.log_response[..self.grid.count]
            .iter()
            .map(|l| l.im)
            .collect()
    }

    /// Response at an arbitrary detuning, interpolating `ln H` linearly
    /// between padded-grid samples.
    pub fn at(&self, f: f64) -> Complex64 {
        self.log_at(f).exp()
    }

    fn log_at(&self, f: f64) -> Complex64 {
        let m = self.log_response.len();
        let x = ((f - self.grid.start) / self.grid.step).rem_euclid(m as f64);
        let i = x.floor();
        let frac = x - i;
        let i = (i as usize) % m;
        if frac < 1e-9 {
            return self.log_response[i];
        }
        let j = (i + 1) % m;
        if frac > 1.0 - 1e-9 {
            return self.log_response[j];
        }
        self.log_response[i] * (1.0 - frac) + self.log_response[j] * frac
    }

    pub fn in_band(&self, f: f64) -> bool {
        self.grid.in_closed(f, self.grid.start, self.grid.end())
    }

    /// Impulse response over the padded grid; time step `1/(M·step)` and
    /// span `1/step`.
    pub fn impulse_response(&self) -> ImpulseResponse {
        let m = self.log_response.len();
        let mut buf: Vec<Complex64> = self.log_response.iter().map(|l| l.exp()).collect();
        FftPair::new(m).inverse.process(&mut buf);
        let norm = 1.0 / m as f64;
        buf.iter_mut().for_each(|v| *v *= norm);
        ImpulseResponse {
            dt: 1.0 / (m as f64 * self.grid.step),
            samples: buf,
        }
    }
}

/// Complex field envelope sampled uniformly in time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTrace")]
pub struct TimeTrace {
    t_start: f64,
    dt: f64,
    samples: Vec<Complex64>,
}

#[derive(Deserialize)]
struct RawTrace {
    t_start: f64,
    dt: f64,
    samples: Vec<Complex64>,
}

impl TryFrom<RawTrace> for TimeTrace {
    type Error = Error;

    fn try_from(raw: RawTrace) -> Result<Self> {
        TimeTrace::new(raw.t_start, raw.dt, raw.samples)
    }
}

impl TimeTrace {
    pub fn new(t_start: f64, dt: f64, samples: Vec<Complex64>) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() || !t_start.is_finite() {
            return Err(Error::InvalidGrid(format!(
                "trace needs finite start and positive dt, got dt={dt}"
            )));
        }
        if samples.len() < 2 {
            return Err(Error::InvalidGrid("trace needs at least 2 samples".into()));
        }
        Ok(TimeTrace {
            t_start,
            dt,
            samples,
        })
    }

    pub fn zeros(t_start: f64, dt: f64, len: usize) -> Result<Self> {
        Self::new(t_start, dt, vec![Complex64::new(0.0, 0.0); len])
    }

    /// Gaussian pulse of intensity FWHM `fwhm`, centered at `t_center`,
    /// detuned by `detuning` Hz, with unit peak amplitude.
    pub fn gaussian(
        t_start: f64,
        dt: f64,
        len: usize,
        t_center: f64,
        fwhm: f64,
        detuning: f64,
    ) -> Result<Self> {
        if !(fwhm > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "pulse FWHM must be positive, got {fwhm}"
            )));
        }
        let mut trace = Self::zeros(t_start, dt, len)?;
        trace.add_gaussian(t_center, fwhm, detuning, 1.0);
        Ok(trace)
    }

    /// Adds a Gaussian pulse (see [`TimeTrace::gaussian`]) scaled by `amplitude`.
    pub fn add_gaussian(&mut self, t_center: f64, fwhm: f64, detuning: f64, amplitude: f64) {
        let a = 2.0 * std::f64::consts::LN_2 / (fwhm * fwhm);
        for n in 0..self.samples.len() {
            let t = self.time(n);
            let env = amplitude * (-a * (t - t_center).powi(2)).exp();
            self.samples[n] += Complex64::from_polar(env, 2.0 * PI * detuning * (t - t_center));
        }
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    #[inline]
    pub fn time(&self, n: usize) -> f64 {
        self.t_start + n as f64 * self.dt
    }

    pub fn t_end(&self) -> f64 {
        self.time(self.samples.len() - 1)
    }

    pub fn intensity(&self) -> Vec<f64> {
        self.samples.iter().map(|a| a.norm_sqr()).collect()
    }

    /// `Σ |a|² dt`.
    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|a| a.norm_sqr()).sum::<f64>() * self.dt
    }

    /// Energy of the samples with `t` in the closed interval `[lo, hi]`.
    pub fn energy_in(&self, lo: f64, hi: f64) -> f64 {
        self.indices_in(lo, hi)
            .map(|n| self.samples[n].norm_sqr())
            .sum::<f64>()
            * self.dt
    }

    fn indices_in(&self, lo: f64, hi: f64) -> std::ops::Range<usize> {
        let tol = 1e-9;
        let first = ((lo - self.t_start) / self.dt - tol).ceil().max(0.0) as usize;
        let last = ((hi - self.t_start) / self.dt + tol).floor();
        if last < 0.0 {
            return 0..0;
        }
        let last = (last as usize).min(self.samples.len() - 1);
        if first > last {
            0..0
        } else {
            first..last + 1
        }
    }

    /// Time of the intensity maximum inside `[lo, hi]`, refined by a
    /// three-point parabola. `None` when the gate holds no field.
    pub fn peak_time_in(&self, lo: f64, hi: f64) -> Option<f64> {
        let range = self.indices_in(lo, hi);
        let intensity = |n: usize| self.samples[n].norm_sqr();
        let (best, peak) = range
            .clone()
            .map(|n| (n, intensity(n)))
            .fold((usize::MAX, 0.0), |acc, (n, v)| if v > acc.1 { (n, v) } else { acc });
        if best == usize::MAX || peak <= 0.0 {
            return None;
        }
        let mut t = self.time(best);
        if best > range.start && best + 1 < range.end {
            let (a, b, c) = (intensity(best - 1), peak, intensity(best + 1));
            let denom = a - 2.0 * b + c;
            if denom < 0.0 {
                let shift = 0.5 * (a - c) / denom;
                t += shift.clamp(-0.5, 0.5) * self.dt;
            }
        }
        Some(t)
    }

    /// Adds `√fraction` × this trace re-centered at `carrier` (Hz), given
    /// that its content sits at `detuning`.
    pub fn with_etalon_leakage(&self, detuning: f64, carrier: f64, fraction: f64) -> TimeTrace {
        let amp = fraction.max(0.0).sqrt();
        let shift = carrier - detuning;
        let samples = self
            .samples
            .iter()
            .enumerate()
            .map(|(n, a)| {
                let t = self.time(n);
                a + a * Complex64::from_polar(amp, 2.0 * PI * shift * t)
            })
            .collect();
        TimeTrace {
            samples,
            ..self.clone()
        }
    }

    /// CSV with columns `t_s,re,im`; a leading `#` line pins the exact time base.
    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# t_start={:?} dt={:?}\nt_s,re,im\n",
            self.t_start, self.dt
        );
        for (n, a) in self.samples.iter().enumerate() {
            out.push_str(&format!("{:?},{:?},{:?}\n", self.time(n), a.re, a.im));
        }
        out
    }

    pub fn from_csv<R: Read>(mut reader: R) -> Result<Self> {
        let mut text = String::new();
        reader.read_to_string(&mut text)?;
        let mut t_start = None;
        let mut dt = None;
        for line in text.lines().filter(|l| l.trim_start().starts_with('#')) {
            for token in line.trim_start_matches('#').split_whitespace() {
                match token.split_once('=') {
                    Some(("t_start", v)) => t_start = v.parse::<f64>().ok(),
                    Some(("dt", v)) => dt = v.parse::<f64>().ok(),
                    _ => {}
                }
            }
        }
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut times = Vec::new();
        let mut samples = Vec::new();
        for (row, record) in rdr.records().enumerate() {
            let record = record?;
            let parse = |i: usize| -> Result<f64> {
                record
                    .get(i)
                    .and_then(|s| s.parse::<f64>().ok())
                    .ok_or_else(|| Error::Parse(format!("row {}: bad column {}", row + 2, i + 1)))
            };
            times.push(parse(0)?);
            samples.push(Complex64::new(parse(1)?, parse(2)?));
        }
        if times.len() < 2 {
            return Err(Error::InvalidGrid("trace CSV needs at least 2 rows".into()));
        }
        let t_start = t_start.unwrap_or(times[0]);
        let dt = dt.unwrap_or((times[times.len() - 1] - times[0]) / (times.len() - 1) as f64);
        TimeTrace::new(t_start, dt, samples)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("trace serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

fn fft_frequency(m: usize, len: usize, dt: f64) -> f64 {
    let k = if m < len.div_ceil(2) {
        m as f64
    } else {
        m as f64 - len as f64
    };
    k / (len as f64 * dt)
}

/// Linear filtering of `input` by `response` through the FFT.
///
/// The trace is treated as periodic: content delayed past its end wraps to
/// the start, so traces should span every delay of interest. Input spectral
/// energy outside the response grid is an aliasing error.
pub fn propagate(input: &TimeTrace, response: &TransferFunction) -> Result<TimeTrace> {
    let len = input.len();
    let fft = FftPair::new(len);
    let mut spectrum = input.samples.clone();
    fft.forward.process(&mut spectrum);

    let total: f64 = spectrum.iter().map(|a| a.norm_sqr()).sum();
    let outside: f64 = spectrum
        .iter()
        .enumerate()
        .filter(|(m, _)| !response.in_band(fft_frequency(*m, len, input.dt)))
        .map(|(_, a)| a.norm_sqr())
        .sum();
    if total > 0.0 && outside > ALIASING_TOLERANCE * total {
        return Err(Error::Aliasing(format!(
            "{:.3e} of the input energy lies outside the response grid [{}, {}] Hz",
            outside / total,
            response.grid.start,
            response.grid.end()
        )));
    }

    for (m, a) in spectrum.iter_mut().enumerate() {
        *a *= response.at(fft_frequency(m, len, input.dt));
    }
    fft.inverse.process(&mut spectrum);
    let norm = 1.0 / len as f64;
    spectrum.iter_mut().for_each(|a| *a *= norm);
    TimeTrace::new(input.t_start, input.dt, spectrum)
}

/// An input pulse to be stored: its time bin and carrier detuning.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoredInput {
    pub time_bin: f64,
    pub center: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduledEcho {
    pub input_index: usize,
    pub window_index: usize,
    pub expected_echo_time: f64,
}

/// Retrieval order of a multi-window storage schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecallOrder {
    /// Every earlier input is recalled earlier.
    Fifo,
    /// Every earlier input is recalled later.
    Filo,
    /// All inputs share one time bin (frequency-dependent delay only).
    Coincident,
    /// Neither order holds, or two ordered inputs are recalled together.
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub echoes: Vec<ScheduledEcho>,
    pub order: RecallOrder,
}

/// Assigns each input to the unique window containing its carrier and
/// predicts its echo time `time_bin + 1/Δ`.
pub fn schedule_multiwindow(inputs: &[StoredInput], windows: &[AfcWindow]) -> Result<Schedule> {
    for w in windows {
        w.validate()?;
    }
    let mut echoes = Vec::with_capacity(inputs.len());
    for (i, input) in inputs.iter().enumerate() {
        let matches: Vec<usize> = windows
            .iter()
            .enumerate()
            .filter(|(_, w)| w.contains(input.center))
            .map(|(k, _)| k)
            .collect();
        if matches.len() != 1 {
            return Err(Error::Matching(format!(
                "input {i} at {} Hz lies in {} windows",
                input.center,
                matches.len()
            )));
        }
        let k = matches[0];
        echoes.push(ScheduledEcho {
            input_index: i,
            window_index: k,
            expected_echo_time: input.time_bin + windows[k].storage_time(),
        });
    }

    let tol = 1e-15;
    let mut fifo = true;
    let mut filo = true;
    let mut ordered_pairs = 0;
    for a in 0..inputs.len() {
        for b in 0..inputs.len() {
            if inputs[a].time_bin + tol < inputs[b].time_bin {
                ordered_pairs += 1;
                let (ea, eb) = (echoes[a].expected_echo_time, echoes[b].expected_echo_time);
                fifo &= ea + tol < eb;
                filo &= ea > eb + tol;
            }
        }
    }
    let order = if ordered_pairs == 0 {
        RecallOrder::Coincident
    } else if fifo {
        RecallOrder::Fifo
    } else if filo {
        RecallOrder::Filo
    } else {
        RecallOrder::Mixed
    };
    Ok(Schedule { echoes, order })
}

/// Echo diagnostics of a propagated trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EchoMetrics {
    pub efficiency: f64,
    #[serde(rename = "echo_peak_time_s")]
    pub echo_peak_time: Option<f64>,
    #[serde(rename = "leakage_group_delay_s")]
    pub leakage_group_delay: Option<f64>,
}

/// Gated echo efficiency, echo peak time and leakage delay.
///
/// The echo gate is `expected_echo ± gate_width/2`; the leakage gate is the
/// same width around the input's intensity peak.
pub fn echo_metrics(
    output: &TimeTrace,
    input: &TimeTrace,
    expected_echo: f64,
    gate_width: f64,
) -> Result<EchoMetrics> {
    if !(gate_width > 0.0) {
        return Err(Error::Gating(format!(
            "gate width must be positive, got {gate_width}"
        )));
    }
    let half = 0.5 * gate_width;
    let (lo, hi) = (expected_echo - half, expected_echo + half);
    if lo < output.t_start || hi > output.t_end() {
        return Err(Error::Gating(format!(
            "echo gate [{lo}, {hi}] s exceeds the trace span [{}, {}] s",
            output.t_start,
            output.t_end()
        )));
    }
    if output.indices_in(lo, hi).is_empty() {
        return Err(Error::Gating("echo gate holds no samples".into()));
    }
    let input_energy = input.energy();
    if !(input_energy > 0.0) {
        return Err(Error::Gating("input trace carries no energy".into()));
    }
    let efficiency = output.energy_in(lo, hi) / input_energy;
    let echo_peak_time = output.peak_time_in(lo, hi);

    let leakage_group_delay = input
        .peak_time_in(input.t_start, input.t_end())
        .and_then(|t_in| {
            output
                .peak_time_in(t_in - half, t_in + half)
                .map(|t_out| t_out - t_in)
        });
    Ok(EchoMetrics {
        efficiency,
        echo_peak_time,
        leakage_group_delay,
    })
}

/// Mean photon number from a click probability, `µ = -ln(1 - p)`.
pub fn mean_photons_from_click(p_click: f64) -> Result<f64> {
    if !(p_click >= 0.0) {
        return Err(Error::Domain(format!(
            "click probability must be non-negative, got {p_click}"
        )));
    }
    if p_click >= 1.0 {
        return Err(Error::Saturation(p_click));
    }
    Ok(-(-p_click).ln_1p())
}
