//! Spectral tailoring by optical pumping.
//!
//! Each spectral bin carries a three-reservoir population: the initial
//! ground level `g`, the optically excited level `e` and the shelf `s` that
//! lumps every other hyperfine level. Under a local pump rate `R`:
//!
//! ```text
//! dg/dt = -R (g - e) + (1 - β) e / T₁ + s / T_shelf
//! de/dt =  R (g - e) - e / T₁
//! ds/dt =  β e / T₁ - s / T_shelf
//! ```
//!
//! The rate is piecewise constant over a pump schedule, so each interval is
//! advanced exactly with the matrix exponential of the 3×3 generator.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::medium::{Grid, IonParameters, ProfileKind, SpectralProfile};
use crate::{Error, Result};

/// A chirped pump pulse, described only by its square spectral footprint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PumpPulse {
    #[serde(rename = "center_hz")]
    pub center: f64,
    #[serde(rename = "bandwidth_hz")]
    pub bandwidth: f64,
    #[serde(rename = "duration_s")]
    pub duration: f64,
    /// Pump rate inside the band (s⁻¹).
    #[serde(rename = "rate_peak_per_s")]
    pub rate_peak: f64,
}

impl PumpPulse {
    pub fn validate(&self) -> Result<()> {
        if !self.center.is_finite() {
            return Err(Error::InvalidParameter("pulse center must be finite".into()));
        }
        for (name, v) in [
            ("bandwidth", self.bandwidth),
            ("duration", self.duration),
            ("rate_peak", self.rate_peak),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "pulse {name} must be positive and finite, got {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn band(&self) -> (f64, f64) {
        (
            self.center - 0.5 * self.bandwidth,
            self.center + 0.5 * self.bandwidth,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PumpMode {
    /// Dark in-loop delay after every batch of pulses.
    Interleaved,
    /// Back-to-back pulses, no in-loop delay.
    Continuous,
}

/// Loop schedule: `n_loop` repetitions of (all pulses, in-loop delay), then
/// one out-loop delay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSequence")]
pub struct PumpSequence {
    pub pulses: Vec<PumpPulse>,
    pub n_loop: u32,
    #[serde(rename = "in_loop_delay_s")]
    pub in_loop_delay: f64,
    #[serde(rename = "out_loop_delay_s")]
    pub out_loop_delay: f64,
    pub mode: PumpMode,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSequence {
    pulses: Vec<PumpPulse>,
    n_loop: u32,
    #[serde(default)]
    in_loop_delay_s: f64,
    out_loop_delay_s: f64,
    mode: PumpMode,
}

impl TryFrom<RawSequence> for PumpSequence {
    type Error = Error;

    fn try_from(raw: RawSequence) -> Result<Self> {
        let seq = PumpSequence {
            pulses: raw.pulses,
            n_loop: raw.n_loop,
            in_loop_delay: raw.in_loop_delay_s,
            out_loop_delay: raw.out_loop_delay_s,
            mode: raw.mode,
        };
        seq.validate()?;
        Ok(seq)
    }
}

impl PumpSequence {
    pub fn interleaved(
        pulses: Vec<PumpPulse>,
        n_loop: u32,
        in_loop_delay: f64,
        out_loop_delay: f64,
    ) -> Result<Self> {
        let seq = PumpSequence {
            pulses,
            n_loop,
            in_loop_delay,
            out_loop_delay,
            mode: PumpMode::Interleaved,
        };
        seq.validate()?;
        Ok(seq)
    }

    pub fn continuous(pulses: Vec<PumpPulse>, n_loop: u32, out_loop_delay: f64) -> Result<Self> {
        let seq = PumpSequence {
            pulses,
            n_loop,
            in_loop_delay: 0.0,
            out_loop_delay,
            mode: PumpMode::Continuous,
        };
        seq.validate()?;
        Ok(seq)
    }

    /// Same pulses and loop count with the in-loop delays removed.
    pub fn to_continuous(&self) -> PumpSequence {
        PumpSequence {
            in_loop_delay: 0.0,
            mode: PumpMode::Continuous,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for p in &self.pulses {
            p.validate()?;
        }
        if !(self.out_loop_delay >= 0.0) || !self.out_loop_delay.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "out_loop_delay must be finite and non-negative, got {}",
                self.out_loop_delay
            )));
        }
        match self.mode {
            PumpMode::Interleaved if !(self.in_loop_delay > 0.0) || !self.in_loop_delay.is_finite() => {
                Err(Error::InvalidParameter(format!(
                    "interleaved pumping needs a positive in_loop_delay, got {}",
                    self.in_loop_delay
                )))
            }
            PumpMode::Continuous if self.in_loop_delay != 0.0 => Err(Error::InvalidParameter(
                "continuous pumping has no in_loop_delay".into(),
            )),
            _ => Ok(()),
        }
    }

    /// Σ rate_peak × duration over every pulse application.
    pub fn integrated_pump(&self) -> f64 {
        self.n_loop as f64
            * self
                .pulses
                .iter()
                .map(|p| p.rate_peak * p.duration)
                .sum::<f64>()
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }
}

/// Per-bin reservoir populations after tailoring, with the resulting OD.
#[derive(Debug, Clone, PartialEq)]
pub struct TailoredMedium {
    pub ground: Vec<f64>,
    pub excited: Vec<f64>,
    pub shelf: Vec<f64>,
    initial_od: SpectralProfile,
    od: SpectralProfile,
}

impl TailoredMedium {
    /// All ions in the initial ground level.
    pub fn unpumped(profile: &SpectralProfile) -> Result<Self> {
        profile.require_kind(ProfileKind::Od)?;
        let n = profile.len();
        Ok(TailoredMedium {
            ground: vec![1.0; n],
            excited: vec![0.0; n],
            shelf: vec![0.0; n],
            initial_od: profile.clone(),
            od: profile.clone(),
        })
    }

    pub fn od(&self) -> &SpectralProfile {
        &self.od
    }

    pub fn initial_od(&self) -> &SpectralProfile {
        &self.initial_od
    }

    pub fn grid(&self) -> Grid {
        self.od.grid()
    }

    /// Excited population weighted by the unpumped OD (i.e. by ion number).
    pub fn excited_total(&self) -> f64 {
        self.excited
            .iter()
            .zip(self.initial_od.values())
            .map(|(e, w)| e * w)
            .sum()
    }

    fn refresh_od(&mut self) {
        let values = self
            .initial_od
            .values()
            .iter()
            .zip(self.ground.iter().zip(&self.excited))
            .map(|(od0, (g, e))| od0 * (g - e).max(0.0))
            .collect();
        self.od = SpectralProfile::new(
            ProfileKind::Od,
            self.initial_od.detuning_start(),
            self.initial_od.detuning_step(),
            values,
        )
        .expect("tailored OD is non-negative on a valid grid");
    }
}

/// Square pump-rate footprint of `pulse` on `grid`; band edges are included.
pub fn pump_rate_spectrum(pulse: &PumpPulse, grid: &Grid) -> Result<SpectralProfile> {
    pulse.validate()?;
    grid.validate()?;
    let (lo, hi) = pulse.band();
    grid.require_covers(lo, hi)?;
    let mut values = vec![0.0; grid.count];
    for v in &mut values[grid.index_range(lo, hi)] {
        *v = pulse.rate_peak;
    }
    SpectralProfile::from_grid(ProfileKind::Rate, grid, values)
}

fn generator(rate: f64, ions: &IonParameters) -> Matrix3<f64> {
    let decay = 1.0 / ions.excited_lifetime;
    let beta = ions.branching_ratio;
    let relax = 1.0 / ions.shelf_lifetime;
    // State ordering (g, e, s); columns sum to zero.
    Matrix3::new(
        -rate,
        rate + (1.0 - beta) * decay,
        relax,
        rate,
        -rate - decay,
        0.0,
        0.0,
        beta * decay,
        -relax,
    )
}

fn propagator(rate: f64, ions: &IonParameters, dt: f64) -> Result<Matrix3<f64>> {
    let p = (generator(rate, ions) * dt).exp();
    if p.iter().any(|v| !v.is_finite()) {
        return Err(Error::StepSize(format!(
            "non-finite propagator for rate {rate} s^-1 over {dt} s"
        )));
    }
    Ok(p)
}

/// Advances every bin by `dt` under the (piecewise-constant) `rate` profile.
pub fn evolve_populations(
    state: &TailoredMedium,
    rate: &SpectralProfile,
    ions: &IonParameters,
    dt: f64,
) -> Result<TailoredMedium> {
    rate.require_kind(ProfileKind::Rate)?;
    if !state.grid().same_as(&rate.grid()) {
        return Err(Error::GridMismatch(
            "rate profile and medium use different grids".into(),
        ));
    }
    let mut next = state.clone();
    evolve_in_place(&mut next, Some(rate.values()), ions, dt)?;
    Ok(next)
}

/// Free evolution (no pump) for `t` seconds.
pub fn free_decay(state: &TailoredMedium, ions: &IonParameters, t: f64) -> Result<TailoredMedium> {
    let mut next = state.clone();
    evolve_in_place(&mut next, None, ions, t)?;
    Ok(next)
}

fn evolve_in_place(
    state: &mut TailoredMedium,
    rate: Option<&[f64]>,
    ions: &IonParameters,
    dt: f64,
) -> Result<()> {
    ions.validate()?;
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::StepSize(format!(
            "time step must be positive and finite, got {dt}"
        )));
    }

    // Pump footprints are square, so an interval holds only a handful of
    // distinct rates; one propagator per distinct rate.
    let mut table: Vec<(u64, Matrix3<f64>)> = Vec::new();
    let mut lookup = |r: f64| -> Result<usize> {
        let key = r.to_bits();
        if let Some(i) = table.iter().position(|(k, _)| *k == key) {
            return Ok(i);
        }
        table.push((key, propagator(r, ions, dt)?));
        Ok(table.len() - 1)
    };
    let indices: Vec<usize> = match rate {
        Some(r) => r.iter().map(|&v| lookup(v)).collect::<Result<_>>()?,
        None => {
            lookup(0.0)?;
            vec![0; state.ground.len()]
        }
    };
    let props: Vec<Matrix3<f64>> = table.into_iter().map(|(_, m)| m).collect();

    state
        .ground
        .par_iter_mut()
        .zip(state.excited.par_iter_mut())
        .zip(state.shelf.par_iter_mut())
        .zip(indices.par_iter())
        .for_each(|(((g, e), s), &k)| {
            let x = props[k] * Vector3::new(*g, *e, *s);
            let (mut ng, mut ne, mut ns) = (x[0].max(0.0), x[1].max(0.0), x[2].max(0.0));
            let total = ng + ne + ns;
            ng /= total;
            ne /= total;
            ns /= total;
            *g = ng;
            *e = ne;
            *s = ns;
        });
    state.refresh_od();
    Ok(())
}

/// Runs the full pump schedule on an unpumped medium.
pub fn run_sequence(
    profile: &SpectralProfile,
    ions: &IonParameters,
    seq: &PumpSequence,
) -> Result<TailoredMedium> {
    seq.validate()?;
    ions.validate()?;
    let mut medium = TailoredMedium::unpumped(profile)?;
    let grid = profile.grid();
    let rates = seq
        .pulses
        .iter()
        .map(|p| pump_rate_spectrum(p, &grid))
        .collect::<Result<Vec<_>>>()?;

    for _ in 0..seq.n_loop {
        for (pulse, rate) in seq.pulses.iter().zip(&rates) {
            evolve_in_place(&mut medium, Some(rate.values()), ions, pulse.duration)?;
        }
        if seq.in_loop_delay > 0.0 {
            evolve_in_place(&mut medium, None, ions, seq.in_loop_delay)?;
        }
    }
    if seq.n_loop > 0 && seq.out_loop_delay > 0.0 {
        evolve_in_place(&mut medium, None, ions, seq.out_loop_delay)?;
    }
    Ok(medium)
}

/// `1 - mean(OD) / mean(initial OD)` over the closed window, clamped to [0, 1].
pub fn hole_depth(medium: &TailoredMedium, center: f64, bandwidth: f64) -> Result<f64> {
    let (lo, hi) = (center - 0.5 * bandwidth, center + 0.5 * bandwidth);
    let initial = medium.initial_od.mean_in(lo, hi)?;
    if initial <= 0.0 {
        return Err(Error::UndefinedDepth);
    }
    let now = medium.od.mean_in(lo, hi)?;
    Ok((1.0 - now / initial).clamp(0.0, 1.0))
}

/// Spontaneous-emission noise rate after waiting `t_wait`, relative to the
/// rate at `t_wait = 0`. Zero when no population is excited.
pub fn spontaneous_noise(medium: &TailoredMedium, t_wait: f64, ions: &IonParameters) -> Result<f64> {
    if !(t_wait >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "t_wait must be non-negative, got {t_wait}"
        )));
    }
    if medium.excited_total() <= 0.0 {
        return Ok(0.0);
    }
    Ok((-t_wait / ions.excited_lifetime).exp())
}
