//! Seeded random search over pump-sequence parameters.
//!
//! Each trial burns the comb troughs of a target window with an interleaved
//! schedule, extracts the tooth height, finesse and background of the
//! tailored OD, and scores them with the analytic AFC efficiency.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::echo::afc_efficiency_analytic;
use crate::medium::{build_inhomogeneous_profile, Grid, IonParameters, SpectralProfile};
use crate::pumping::{run_sequence, PumpPulse, PumpSequence};
use crate::{Error, Result};

/// Column labels of a parameter vector, in sampling order.
pub const PARAM_NAMES: [&str; 5] = [
    "rate_peak",
    "pulse_duration",
    "pulse_bandwidth",
    "n_loop",
    "in_loop_delay",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamRanges {
    /// Pump rate (s⁻¹).
    pub rate_peak: (f64, f64),
    /// Duration of each pulse (s).
    pub pulse_duration: (f64, f64),
    /// Spectral width of each trough-burning pulse (Hz).
    pub pulse_bandwidth: (f64, f64),
    pub n_loop: (u32, u32),
    /// Dark time after each batch of pulses (s).
    pub in_loop_delay: (f64, f64),
}

impl Default for ParamRanges {
    fn default() -> Self {
        ParamRanges {
            rate_peak: (100.0, 5000.0),
            pulse_duration: (0.5e-3, 5e-3),
            pulse_bandwidth: (0.5e6, 1.5e6),
            n_loop: (5, 50),
            in_loop_delay: (1e-3, 30e-3),
        }
    }
}

impl ParamRanges {
    pub fn validate(&self) -> Result<()> {
        let real = [
            ("rate_peak", self.rate_peak),
            ("pulse_duration", self.pulse_duration),
            ("pulse_bandwidth", self.pulse_bandwidth),
            ("in_loop_delay", self.in_loop_delay),
        ];
        for (name, (lo, hi)) in real {
            if !(lo > 0.0) || !hi.is_finite() || !(lo < hi) {
                return Err(Error::InvalidParameter(format!(
                    "{name} range must satisfy 0 < min < max, got ({lo}, {hi})"
                )));
            }
        }
        if !(1 <= self.n_loop.0 && self.n_loop.0 < self.n_loop.1) {
            return Err(Error::InvalidParameter(format!(
                "n_loop range must satisfy 1 <= min < max, got {:?}",
                self.n_loop
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub rate_peak: f64,
    pub pulse_duration: f64,
    pub pulse_bandwidth: f64,
    pub n_loop: u32,
    pub in_loop_delay: f64,
}

impl ParamVector {
    pub fn as_array(&self) -> [f64; 5] {
        [
            self.rate_peak,
            self.pulse_duration,
            self.pulse_bandwidth,
            self.n_loop as f64,
            self.in_loop_delay,
        ]
    }
}

fn uniform(u: f64, (lo, hi): (f64, f64)) -> f64 {
    (lo + u * (hi - lo)).clamp(lo, hi)
}

/// Independent uniform draws, one per parameter, in [`PARAM_NAMES`] order.
pub fn sample_params(ranges: &ParamRanges, seed: u64) -> Result<ParamVector> {
    ranges.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u = [0.0f64; 5];
    for v in &mut u {
        *v = rng.random::<f64>();
    }
    let (nlo, nhi) = ranges.n_loop;
    let n_count = (nhi - nlo + 1) as f64;
    Ok(ParamVector {
        rate_peak: uniform(u[0], ranges.rate_peak),
        pulse_duration: uniform(u[1], ranges.pulse_duration),
        pulse_bandwidth: uniform(u[2], ranges.pulse_bandwidth),
        n_loop: (nlo + (u[3] * n_count).floor() as u32).min(nhi),
        in_loop_delay: uniform(u[4], ranges.in_loop_delay),
    })
}

/// Comb window that the scan tries to carve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CombTarget {
    pub center: f64,
    pub bandwidth: f64,
    /// Tooth spacing (Hz).
    pub delta: f64,
}

impl CombTarget {
    pub fn validate(&self) -> Result<()> {
        if !self.center.is_finite() || !(self.delta > 0.0) || !(self.bandwidth >= self.delta) {
            return Err(Error::InvalidParameter(format!(
                "comb target needs bandwidth >= delta > 0, got {self:?}"
            )));
        }
        Ok(())
    }

    fn periods(&self) -> usize {
        (self.bandwidth / self.delta + 1e-9).floor() as usize
    }

    fn first_boundary(&self) -> f64 {
        self.center - 0.5 * self.periods() as f64 * self.delta
    }

    /// Trough centers at the period boundaries (`periods + 1` of them).
    pub fn trough_centers(&self) -> Vec<f64> {
        let first = self.first_boundary();
        (0..=self.periods())
            .map(|k| first + k as f64 * self.delta)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default)]
    pub ions: IonParameters,
    pub target: CombTarget,
    /// Spectral resolution of the simulation (Hz).
    #[serde(default = "default_step")]
    pub grid_step: f64,
    /// Wait between the last pump loop and storage (s).
    #[serde(default = "default_out_loop")]
    pub out_loop_delay: f64,
}

fn default_step() -> f64 {
    10e3
}

fn default_out_loop() -> f64 {
    0.1
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            ions: IonParameters::default(),
            target: CombTarget {
                center: 0.0,
                bandwidth: 8e6,
                delta: 2e6,
            },
            grid_step: default_step(),
            out_loop_delay: default_out_loop(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.ions.validate()?;
        self.target.validate()?;
        if !(self.grid_step > 0.0) || self.grid_step * 4.0 > self.target.delta {
            return Err(Error::Resolution(format!(
                "grid step {} Hz cannot resolve a {} Hz tooth spacing",
                self.grid_step, self.target.delta
            )));
        }
        if !(self.out_loop_delay >= 0.0) {
            return Err(Error::InvalidParameter("out_loop_delay must be non-negative".into()));
        }
        Ok(())
    }

    /// Inhomogeneous line restricted to the target window plus one spacing
    /// on each side.
    pub fn local_profile(&self) -> Result<SpectralProfile> {
        self.validate()?;
        let half = 0.5 * self.target.bandwidth + self.target.delta;
        let half_span = self.ions.inhomogeneous_fwhm.max(half + self.target.center.abs()) * 1.5;
        let full = build_inhomogeneous_profile(&self.ions, &Grid::centered(0.0, half_span, self.grid_step)?)?;
        full.slice(self.target.center - half, self.target.center + half)
    }

    /// Interleaved schedule burning every trough of the target.
    pub fn sequence(&self, params: &ParamVector) -> Result<PumpSequence> {
        let pulses = self
            .target
            .trough_centers()
            .into_iter()
            .map(|center| PumpPulse {
                center,
                bandwidth: params.pulse_bandwidth,
                duration: params.pulse_duration,
                rate_peak: params.rate_peak,
            })
            .collect();
        PumpSequence::interleaved(pulses, params.n_loop, params.in_loop_delay, self.out_loop_delay)
    }
}

/// Summary of a tailored comb: tooth height above the troughs, finesse and
/// trough OD.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CombEstimate {
    pub depth: f64,
    pub finesse: f64,
    pub background: f64,
}

/// Per-period tooth top, trough and width at half prominence, averaged
/// over the periods of the target window.
pub fn extract_comb(od: &SpectralProfile, target: &CombTarget) -> Result<CombEstimate> {
    target.validate()?;
    let grid = od.grid();
    let first = target.first_boundary();
    let n = target.periods();
    grid.require_covers(first, first + n as f64 * target.delta)?;
    let values = od.values();
    let (mut top_sum, mut trough_sum, mut width_sum) = (0.0, 0.0, 0.0);
    for k in 0..n {
        let lo = first + k as f64 * target.delta;
        let range = grid.index_range(lo, lo + target.delta);
        let slice = &values[range];
        if slice.is_empty() {
            return Err(Error::Resolution("comb period holds no grid points".into()));
        }
        let top = slice.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let trough = slice.iter().copied().fold(f64::INFINITY, f64::min);
        let level = trough + 0.5 * (top - trough);
        let above = slice.iter().filter(|v| **v >= level).count();
        top_sum += top;
        trough_sum += trough;
        width_sum += above as f64 * grid.step;
    }
    let (top, trough, width) = (top_sum / n as f64, trough_sum / n as f64, width_sum / n as f64);
    let depth = top - trough;
    if !(depth > 1e-12) {
        return Ok(CombEstimate {
            depth: 0.0,
            finesse: 1.0,
            background: trough.max(0.0),
        });
    }
    Ok(CombEstimate {
        depth,
        finesse: (target.delta / width).max(1.0),
        background: trough.max(0.0),
    })
}

/// Tailors the comb for `params` and returns its estimate and efficiency.
pub fn evaluate(params: &ParamVector, sim: &SimConfig, profile: &SpectralProfile) -> Result<(CombEstimate, f64)> {
    let seq = sim.sequence(params)?;
    let medium = run_sequence(profile, &sim.ions, &seq)?;
    let comb = extract_comb(medium.od(), &sim.target)?;
    let eta = afc_efficiency_analytic(comb.depth, comb.finesse, comb.background)?;
    Ok((comb, eta))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRecord {
    pub trial: usize,
    pub seed: u64,
    pub params: ParamVector,
    /// Zero for failed trials.
    pub efficiency: f64,
    pub error: Option<String>,
}

fn trial(i: usize, ranges: &ParamRanges, base_seed: u64, sim: &SimConfig, profile: &SpectralProfile) -> Result<ScanRecord> {
    let seed = base_seed.wrapping_add(i as u64);
    let params = sample_params(ranges, seed)?;
    Ok(match evaluate(&params, sim, profile) {
        Ok((_, efficiency)) => ScanRecord {
            trial: i,
            seed,
            params,
            efficiency,
            error: None,
        },
        Err(e) => ScanRecord {
            trial: i,
            seed,
            params,
            efficiency: 0.0,
            error: Some(e.to_string()),
        },
    })
}

fn check_scan(ranges: &ParamRanges, n_trials: usize, sim: &SimConfig) -> Result<SpectralProfile> {
    ranges.validate()?;
    if n_trials == 0 {
        return Err(Error::InvalidParameter("n_trials must be at least 1".into()));
    }
    sim.local_profile()
}

/// Runs `n_trials` trials in parallel; trial `i` uses seed `base_seed + i`.
/// Records come back in trial order.
pub fn run_scan(ranges: &ParamRanges, n_trials: usize, base_seed: u64, sim: &SimConfig) -> Result<Vec<ScanRecord>> {
    let profile = check_scan(ranges, n_trials, sim)?;
    (0..n_trials)
        .into_par_iter()
        .map(|i| trial(i, ranges, base_seed, sim, &profile))
        .collect()
}

/// Single-threaded [`run_scan`].
pub fn run_scan_sequential(ranges: &ParamRanges, n_trials: usize, base_seed: u64, sim: &SimConfig) -> Result<Vec<ScanRecord>> {
    let profile = check_scan(ranges, n_trials, sim)?;
    (0..n_trials)
        .map(|i| trial(i, ranges, base_seed, sim, &profile))
        .collect()
}

pub fn records_to_csv(records: &[ScanRecord]) -> String {
    let mut out = String::from(
        "trial,seed,rate_peak_per_s,pulse_duration_s,pulse_bandwidth_hz,n_loop,in_loop_delay_s,efficiency,error\n",
    );
    for r in records {
        let p = &r.params;
        out.push_str(&format!(
            "{},{},{:?},{:?},{:?},{},{:?},{:?},{}\n",
            r.trial,
            r.seed,
            p.rate_peak,
            p.pulse_duration,
            p.pulse_bandwidth,
            p.n_loop,
            p.in_loop_delay,
            r.efficiency,
            r.error.as_deref().unwrap_or("").replace([',', '\n'], ";")
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub labels: Vec<String>,
    pub matrix: Vec<Vec<f64>>,
    /// Columns with zero variance; their correlations are set to 0.
    pub zero_variance: Vec<String>,
}

/// Pearson correlations between named columns of equal length.
pub fn pearson_matrix(labels: &[&str], columns: &[Vec<f64>]) -> Result<CorrelationReport> {
    if labels.len() != columns.len() || columns.is_empty() {
        return Err(Error::InvalidParameter("one label per column required".into()));
    }
    let n = columns[0].len();
    if n < 3 || columns.iter().any(|c| c.len() != n) {
        return Err(Error::InvalidParameter(
            "correlation needs at least 3 rows in equal-length columns".into(),
        ));
    }
    let centered: Vec<(Vec<f64>, f64)> = columns
        .iter()
        .map(|c| {
            let mean = c.iter().sum::<f64>() / n as f64;
            let dev: Vec<f64> = c.iter().map(|v| v - mean).collect();
            let ss = dev.iter().map(|d| d * d).sum::<f64>();
            let scale = c.iter().map(|v| v.abs()).fold(0.0, f64::max);
            let degenerate = !(ss.sqrt() > 1e-12 * scale * (n as f64).sqrt()) || ss == 0.0;
            (dev, if degenerate { 0.0 } else { ss.sqrt() })
        })
        .collect();
    let k = columns.len();
    let mut matrix = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in 0..k {
            let (ref a, na) = centered[i];
            let (ref b, nb) = centered[j];
            matrix[i][j] = if i == j {
                1.0
            } else if na == 0.0 || nb == 0.0 {
                0.0
            } else {
                (a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)).clamp(-1.0, 1.0)
            };
        }
    }
    Ok(CorrelationReport {
        labels: labels.iter().map(|s| s.to_string()).collect(),
        matrix,
        zero_variance: labels
            .iter()
            .zip(&centered)
            .filter(|(_, c)| c.1 == 0.0)
            .map(|(l, _)| l.to_string())
            .collect(),
    })
}

/// Correlations among the five parameters and the efficiency, over the
/// successful records.
pub fn correlation_matrix(records: &[ScanRecord]) -> Result<CorrelationReport> {
    let ok: Vec<&ScanRecord> = records.iter().filter(|r| r.error.is_none()).collect();
    let mut columns: Vec<Vec<f64>> = (0..6).map(|_| Vec::with_capacity(ok.len())).collect();
    for r in &ok {
        for (c, v) in columns.iter_mut().zip(r.params.as_array()) {
            c.push(v);
        }
        columns[5].push(r.efficiency);
    }
    let mut labels: Vec<&str> = PARAM_NAMES.to_vec();
    labels.push("efficiency");
    pearson_matrix(&labels, &columns)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::medium::ProfileKind;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn sampling_is_deterministic_and_contained() {
        let r = ParamRanges::default();
        assert_eq!(sample_params(&r, 5).unwrap(), sample_params(&r, 5).unwrap());
        assert_ne!(sample_params(&r, 5).unwrap(), sample_params(&r, 6).unwrap());
        let tight = ParamRanges {
            rate_peak: (1000.0, 1000.0 + 1e-9),
            ..r
        };
        let p = sample_params(&tight, 1).unwrap();
        assert!(p.rate_peak >= 1000.0 && p.rate_peak <= 1000.0 + 1e-9);
    }

    #[test]
    fn invalid_ranges() {
        let bad = ParamRanges {
            pulse_duration: (2e-3, 1e-3),
            ..ParamRanges::default()
        };
        assert!(sample_params(&bad, 0).is_err());
        let bad = ParamRanges {
            n_loop: (4, 4),
            ..ParamRanges::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn sample_means_near_midpoints() {
        let r = ParamRanges::default();
        let samples: Vec<[f64; 5]> = (0..850).map(|s| sample_params(&r, s).unwrap().as_array()).collect();
        let bounds = [
            r.rate_peak,
            r.pulse_duration,
            r.pulse_bandwidth,
            (r.n_loop.0 as f64, r.n_loop.1 as f64),
            r.in_loop_delay,
        ];
        for (k, (lo, hi)) in bounds.iter().enumerate() {
            let mean = samples.iter().map(|s| s[k]).sum::<f64>() / 850.0;
            let mid = 0.5 * (lo + hi);
            assert!((mean / mid - 1.0).abs() < 0.05, "{}: {mean} vs {mid}", PARAM_NAMES[k]);
        }
    }

    #[test]
    fn trough_layout() {
        let t = CombTarget {
            center: 0.0,
            bandwidth: 8e6,
            delta: 2e6,
        };
        assert_eq!(t.trough_centers(), vec![-4e6, -2e6, 0.0, 2e6, 4e6]);
    }

    #[test]
    fn extraction_of_ideal_comb() {
        let target = CombTarget {
            center: 0.0,
            bandwidth: 8e6,
            delta: 2e6,
        };
        let grid = Grid::centered(0.0, 6e6, 10e3).unwrap();
        let window = crate::echo::AfcWindow {
            center: 0.0,
            bandwidth: 8e6,
            delta: 2e6,
            finesse: 4.0,
            depth: 2.0,
            background: 0.5,
        };
        let od = crate::echo::comb_profile(&window, &grid).unwrap();
        let est = extract_comb(&od, &target).unwrap();
        assert!((est.depth - 2.0).abs() < 1e-12);
        assert!((est.background - 0.5).abs() < 1e-12);
        // Closed tooth edges include one extra grid point.
        assert!((est.finesse - 2e6 / 510e3).abs() < 1e-9, "{}", est.finesse);

        let flat = SpectralProfile::constant(ProfileKind::Od, &grid, 1.0).unwrap();
        let est = extract_comb(&flat, &target).unwrap();
        assert_eq!(est.depth, 0.0);
        assert_eq!(est.finesse, 1.0);
    }

    #[test]
    fn scan_is_reproducible_and_parallel_safe() {
        let sim = SimConfig::default();
        let r = ParamRanges::default();
        let a = run_scan(&r, 12, 100, &sim).unwrap();
        let b = run_scan_sequential(&r, 12, 100, &sim).unwrap();
        assert_eq!(a, b);
        assert_eq!(records_to_csv(&a), records_to_csv(&run_scan(&r, 12, 100, &sim).unwrap()));
        assert!(a.iter().all(|r| r.error.is_none() && (0.0..=1.0).contains(&r.efficiency)));
        assert!(a.iter().enumerate().all(|(i, r)| r.trial == i && r.seed == 100 + i as u64));
    }

    #[test]
    fn pumping_carves_a_comb() {
        let sim = SimConfig::default();
        let profile = sim.local_profile().unwrap();
        let params = ParamVector {
            rate_peak: 2000.0,
            pulse_duration: 2e-3,
            pulse_bandwidth: 1.2e6,
            n_loop: 30,
            in_loop_delay: 20e-3,
        };
        let (comb, eta) = evaluate(&params, &sim, &profile).unwrap();
        assert!(comb.depth > 0.5 && comb.finesse > 1.2, "{comb:?}");
        assert!(eta > 0.0);
    }

    #[test]
    fn correlation_basics() {
        let x: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| v * v).collect();
        let z = vec![3.0; 50];
        let rep = pearson_matrix(&["x", "y", "z"], &[x.clone(), y, z]).unwrap();
        assert_eq!(rep.matrix[0][0], 1.0);
        assert!(rep.matrix[0][1] > 0.9);
        assert_eq!(rep.matrix[0][2], 0.0);
        assert_eq!(rep.zero_variance, vec!["z".to_string()]);
        assert!(pearson_matrix(&["x"], &[vec![1.0, 2.0]]).is_err());
    }

    proptest! {
        #[test]
        fn correlation_invariant_under_affine_rescaling(
            seed in any::<u64>(), scale in 0.01..100.0f64, shift in -1e3..1e3f64
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a: Vec<f64> = (0..20).map(|_| rng.random::<f64>()).collect();
            let b: Vec<f64> = (0..20).map(|_| rng.random::<f64>()).collect();
            let a2: Vec<f64> = a.iter().map(|v| v * scale + shift).collect();
            let r1 = pearson_matrix(&["a", "b"], &[a, b.clone()]).unwrap();
            let r2 = pearson_matrix(&["a", "b"], &[a2, b]).unwrap();
            prop_assert!((r1.matrix[0][1] - r2.matrix[0][1]).abs() < 1e-9);
            prop_assert!((r1.matrix[0][1] - r1.matrix[1][0]).abs() < 1e-15);
        }
    }
}
