//! Spectral model of the doped crystal: uniform detuning grids, sampled
//! profiles (optical depth, transmission, pump rate) and the inhomogeneous
//! absorption line.

use std::fmt;
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Absolute tolerance, in grid steps, for deciding whether a detuning lies on
/// a closed interval edge.
const EDGE_TOLERANCE: f64 = 1e-6;

/// What the samples of a [`SpectralProfile`] represent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileKind {
    /// Optical depth, dimensionless, non-negative.
    Od,
    /// Intensity transmission fraction in `[0, 1]`.
    Transmission,
    /// Pump rate in s⁻¹.
    Rate,
}

impl ProfileKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ProfileKind::Od => "od",
            ProfileKind::Transmission => "transmission",
            ProfileKind::Rate => "rate",
        }
    }
}

impl fmt::Display for ProfileKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ProfileKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "od" => Ok(ProfileKind::Od),
            "transmission" => Ok(ProfileKind::Transmission),
            "rate" => Ok(ProfileKind::Rate),
            other => Err(Error::Parse(format!("unknown profile kind '{other}'"))),
        }
    }
}

/// A uniform detuning grid `start + i * step`, `i = 0..count`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub start: f64,
    pub step: f64,
    pub count: usize,
}

impl Default for Grid {
    /// ±500 MHz around line center at 10 kHz resolution.
    fn default() -> Self {
        Grid {
            start: -500e6,
            step: 10e3,
            count: 100_001,
        }
    }
}

impl Grid {
    pub fn new(start: f64, step: f64, count: usize) -> Result<Self> {
        let grid = Grid { start, step, count };
        grid.validate()?;
        Ok(grid)
    }

    /// Grid of `2 * round(half_span / step) + 1` points centered on `center`.
    pub fn centered(center: f64, half_span: f64, step: f64) -> Result<Self> {
        if !(step > 0.0) || !step.is_finite() || !(half_span >= 0.0) {
            return Err(Error::InvalidGrid(format!(
                "step {step} and half span {half_span} must be positive"
            )));
        }
        let half = (half_span / step).round() as usize;
        Grid::new(center - half as f64 * step, step, 2 * half + 1)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) || !self.step.is_finite() {
            return Err(Error::InvalidGrid(format!(
                "step must be positive and finite, got {}",
                self.step
            )));
        }
        if !self.start.is_finite() {
            return Err(Error::InvalidGrid("start must be finite".into()));
        }
        if self.count < 2 {
            return Err(Error::InvalidGrid(format!(
                "at least 2 samples required, got {}",
                self.count
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn detuning(&self, i: usize) -> f64 {
        self.start + i as f64 * self.step
    }

    pub fn end(&self) -> f64 {
        self.detuning(self.count - 1)
    }

    pub fn span(&self) -> f64 {
        self.end() - self.start
    }

    pub fn detunings(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.count).map(move |i| self.detuning(i))
    }

    /// True when `[lo, hi]` lies inside the grid.
    pub fn covers(&self, lo: f64, hi: f64) -> bool {
        let tol = EDGE_TOLERANCE * self.step;
        lo >= self.start - tol && hi <= self.end() + tol
    }

    pub fn require_covers(&self, lo: f64, hi: f64) -> Result<()> {
        if self.covers(lo, hi) {
            Ok(())
        } else {
            Err(Error::Coverage {
                lo,
                hi,
                grid_lo: self.start,
                grid_hi: self.end(),
            })
        }
    }

    /// Indices whose detuning lies in the closed interval `[lo, hi]`.
    pub fn index_range(&self, lo: f64, hi: f64) -> std::ops::Range<usize> {
        let tol = EDGE_TOLERANCE;
        let first = ((lo - self.start) / self.step - tol).ceil().max(0.0);
        let last = ((hi - self.start) / self.step + tol).floor();
        if last < 0.0 || first > last {
            return 0..0;
        }
        let first = first as usize;
        let last = (last as usize).min(self.count - 1);
        if first > last {
            0..0
        } else {
            first..last + 1
        }
    }

    /// Whether `f` lies in the closed interval `[lo, hi]` with the grid's
    /// edge tolerance.
    #[inline]
    pub fn in_closed(&self, f: f64, lo: f64, hi: f64) -> bool {
        let tol = EDGE_TOLERANCE * self.step;
        f >= lo - tol && f <= hi + tol
    }

    pub fn same_as(&self, other: &Grid) -> bool {
        self.start == other.start && self.step == other.step && self.count == other.count
    }
}

/// Real samples on a uniform detuning grid, tagged by [`ProfileKind`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawProfile")]
pub struct SpectralProfile {
    kind: ProfileKind,
    detuning_start: f64,
    detuning_step: f64,
    values: Vec<f64>,
}

#[derive(Deserialize)]
struct RawProfile {
    kind: ProfileKind,
    detuning_start: f64,
    detuning_step: f64,
    values: Vec<f64>,
}

impl TryFrom<RawProfile> for SpectralProfile {
    type Error = Error;

    fn try_from(raw: RawProfile) -> Result<Self> {
        SpectralProfile::new(raw.kind, raw.detuning_start, raw.detuning_step, raw.values)
    }
}

impl SpectralProfile {
    pub fn new(kind: ProfileKind, start: f64, step: f64, values: Vec<f64>) -> Result<Self> {
        Grid::new(start, step, values.len())?;
        match kind {
            ProfileKind::Od => {
                if let Some(v) = values.iter().find(|v| !(**v >= 0.0)) {
                    return Err(Error::InvalidParameter(format!(
                        "optical depth must be non-negative, found {v}"
                    )));
                }
            }
            ProfileKind::Transmission => {
                if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                    return Err(Error::InvalidParameter(format!(
                        "transmission must lie in [0, 1], found {v}"
                    )));
                }
            }
            ProfileKind::Rate => {
                if let Some(v) = values.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
                    return Err(Error::InvalidParameter(format!(
                        "pump rate must be finite and non-negative, found {v}"
                    )));
                }
            }
        }
        Ok(SpectralProfile {
            kind,
            detuning_start: start,
            detuning_step: step,
            values,
        })
    }

    pub fn from_grid(kind: ProfileKind, grid: &Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.count {
            return Err(Error::GridMismatch(format!(
                "{} values for a grid of {} points",
                values.len(),
                grid.count
            )));
        }
        Self::new(kind, grid.start, grid.step, values)
    }

    pub fn constant(kind: ProfileKind, grid: &Grid, value: f64) -> Result<Self> {
        Self::from_grid(kind, grid, vec![value; grid.count])
    }

    pub fn kind(&self) -> ProfileKind {
        self.kind
    }

    pub fn grid(&self) -> Grid {
        Grid {
            start: self.detuning_start,
            step: self.detuning_step,
            count: self.values.len(),
        }
    }

    pub fn detuning_start(&self) -> f64 {
        self.detuning_start
    }

    pub fn detuning_step(&self) -> f64 {
        self.detuning_step
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn require_kind(&self, expected: ProfileKind) -> Result<()> {
        if self.kind == expected {
            Ok(())
        } else {
            Err(Error::KindMismatch {
                expected: expected.as_str(),
                found: self.kind.as_str(),
            })
        }
    }

    /// Linear interpolation; clamps to the end samples outside the grid.
    pub fn value_at(&self, detuning: f64) -> f64 {
        let x = (detuning - self.detuning_start) / self.detuning_step;
        if x <= 0.0 {
            return self.values[0];
        }
        let last = self.values.len() - 1;
        if x >= last as f64 {
            return self.values[last];
        }
        let i = x.floor() as usize;
        let frac = x - i as f64;
        self.values[i] * (1.0 - frac) + self.values[i + 1] * frac
    }

    /// Rectangle-rule integral over detuning.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.detuning_step
    }

    /// Mean of the samples inside the closed interval `[lo, hi]`.
    pub fn mean_in(&self, lo: f64, hi: f64) -> Result<f64> {
        let grid = self.grid();
        grid.require_covers(lo, hi)?;
        let range = grid.index_range(lo, hi);
        if range.is_empty() {
            return Err(Error::Resolution(format!(
                "no grid sample inside [{lo}, {hi}] Hz"
            )));
        }
        let n = range.len() as f64;
        Ok(self.values[range].iter().sum::<f64>() / n)
    }

    /// Sub-profile restricted to the closed interval `[lo, hi]`.
    pub fn slice(&self, lo: f64, hi: f64) -> Result<SpectralProfile> {
        let grid = self.grid();
        grid.require_covers(lo, hi)?;
        let range = grid.index_range(lo, hi);
        if range.len() < 2 {
            return Err(Error::InvalidGrid(format!(
                "slice [{lo}, {hi}] Hz holds fewer than 2 samples"
            )));
        }
        SpectralProfile::new(
            self.kind,
            grid.detuning(range.start),
            self.detuning_step,
            self.values[range].to_vec(),
        )
    }

    /// Two-column CSV `detuning_Hz,value`, preceded by a `#` metadata line
    /// carrying kind, start and step so the grid round-trips exactly.
    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# kind={} start={:?} step={:?}\ndetuning_Hz,value\n",
            self.kind, self.detuning_start, self.detuning_step
        );
        let grid = self.grid();
        for (i, v) in self.values.iter().enumerate() {
            out.push_str(&format!("{:?},{:?}\n", grid.detuning(i), v));
        }
        out
    }

    /// Parses the CSV form. Without a metadata line the grid is inferred from
    /// the detuning column (which must be uniform) and `default_kind` is used.
    pub fn from_csv<R: Read>(reader: R, default_kind: ProfileKind) -> Result<Self> {
        let mut text = String::new();
        let mut reader = reader;
        reader.read_to_string(&mut text)?;

        let mut kind = default_kind;
        let mut start = None;
        let mut step = None;
        for line in text.lines().filter(|l| l.trim_start().starts_with('#')) {
            for token in line.trim_start_matches('#').split_whitespace() {
                if let Some((key, value)) = token.split_once('=') {
                    match key {
                        "kind" => kind = value.parse()?,
                        "start" => start = Some(parse_f64(value)?),
                        "step" => step = Some(parse_f64(value)?),
                        _ => {}
                    }
                }
            }
        }

        let (detunings, values) = read_two_columns(text.as_bytes())?;
        if values.len() < 2 {
            return Err(Error::InvalidGrid("CSV holds fewer than 2 rows".into()));
        }
        let start = start.unwrap_or(detunings[0]);
        let step = match step {
            Some(s) => s,
            None => {
                let s = (detunings[detunings.len() - 1] - detunings[0])
                    / (detunings.len() - 1) as f64;
                for (i, d) in detunings.iter().enumerate() {
                    if (d - (start + i as f64 * s)).abs() > 1e-6 * s.abs() {
                        return Err(Error::InvalidGrid(format!(
                            "detuning column is not uniform at row {}",
                            i + 1
                        )));
                    }
                }
                s
            }
        };
        SpectralProfile::new(kind, start, step, values)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("profile serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

fn parse_f64(s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|e| Error::Parse(format!("'{s}': {e}")))
}

/// Reads a headered or headerless two-column numeric CSV, skipping `#`
/// comment lines.
pub fn read_two_columns<R: Read>(reader: R) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() < 2 {
            return Err(Error::Parse(format!("row {}: expected 2 columns", row + 1)));
        }
        let (x, y) = (record[0].parse::<f64>(), record[1].parse::<f64>());
        match (x, y) {
            (Ok(x), Ok(y)) => {
                xs.push(x);
                ys.push(y);
            }
            // A non-numeric first row is a header.
            _ if row == 0 && xs.is_empty() => continue,
            _ => {
                return Err(Error::Parse(format!(
                    "row {}: non-numeric value in '{},{}'",
                    row + 1,
                    &record[0],
                    &record[1]
                )))
            }
        }
    }
    Ok((xs, ys))
}

/// Spectroscopic parameters of the ion ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IonParameters {
    /// Excited-state lifetime T₁ (s).
    pub excited_lifetime: f64,
    /// Fraction of excited-state decays that land in the shelf levels.
    pub branching_ratio: f64,
    /// Lifetime of the shelved population (s). May be `f64::INFINITY`.
    pub shelf_lifetime: f64,
    /// Peak optical depth of the unpumped line.
    pub peak_od: f64,
    /// Inhomogeneous FWHM (Hz).
    pub inhomogeneous_fwhm: f64,
}

impl Default for IonParameters {
    fn default() -> Self {
        IonParameters {
            excited_lifetime: 10e-3,
            branching_ratio: 0.08,
            shelf_lifetime: 3.0,
            peak_od: 3.3,
            inhomogeneous_fwhm: 390e6,
        }
    }
}

impl IonParameters {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("excited_lifetime", self.excited_lifetime),
            ("branching_ratio", self.branching_ratio),
            ("shelf_lifetime", self.shelf_lifetime),
            ("peak_od", self.peak_od),
            ("inhomogeneous_fwhm", self.inhomogeneous_fwhm),
        ];
        for (name, v) in fields {
            if !(v > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if !self.excited_lifetime.is_finite() || !self.inhomogeneous_fwhm.is_finite() {
            return Err(Error::InvalidParameter(
                "excited_lifetime and inhomogeneous_fwhm must be finite".into(),
            ));
        }
        if self.branching_ratio >= 1.0 {
            return Err(Error::InvalidParameter(format!(
                "branching_ratio must be below 1, got {}",
                self.branching_ratio
            )));
        }
        Ok(())
    }
}

/// Gaussian inhomogeneous line centered at zero detuning.
pub fn build_inhomogeneous_profile(params: &IonParameters, grid: &Grid) -> Result<SpectralProfile> {
    grid.validate()?;
    params.validate()?;
    if grid.span() < params.inhomogeneous_fwhm {
        return Err(Error::InvalidGrid(format!(
            "grid span {} Hz is narrower than the {} Hz linewidth",
            grid.span(),
            params.inhomogeneous_fwhm
        )));
    }
    let values = grid
        .detunings()
        .map(|d| gaussian_od(params.peak_od, params.inhomogeneous_fwhm, d))
        .collect();
    SpectralProfile::from_grid(ProfileKind::Od, grid, values)
}

#[inline]
fn gaussian_od(peak: f64, fwhm: f64, detuning: f64) -> f64 {
    let x = detuning / fwhm;
    peak * (-4.0 * std::f64::consts::LN_2 * x * x).exp()
}

/// Pointwise `T = exp(-OD)`.
pub fn transmission(profile: &SpectralProfile) -> Result<SpectralProfile> {
    profile.require_kind(ProfileKind::Od)?;
    let values = profile.values.iter().map(|od| (-od).exp()).collect();
    SpectralProfile::new(
        ProfileKind::Transmission,
        profile.detuning_start,
        profile.detuning_step,
        values,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line() -> SpectralProfile {
        build_inhomogeneous_profile(&IonParameters::default(), &Grid::default()).unwrap()
    }

    #[test]
    fn peak_and_half_maximum() {
        let p = line();
        assert!((p.value_at(0.0) - 3.3).abs() < 1e-12);
        assert!((p.value_at(195e6) - 1.65).abs() < 1e-12);
        assert!((p.value_at(-195e6) - 1.65).abs() < 1e-12);
    }

    #[test]
    fn gaussian_tail_three_fwhm() {
        // 3.3 * exp(-4 ln2 * 9) = 3.3 * 2^-36
        let od = gaussian_od(3.3, 390e6, 3.0 * 390e6);
        assert!((od - 3.3 * 2f64.powi(-36)).abs() < 1e-20);
        assert!(od < 0.01);
    }

    #[test]
    fn symmetric_about_center() {
        let p = line();
        let n = p.len();
        for i in 0..n / 2 {
            let (a, b) = (p.values()[i], p.values()[n - 1 - i]);
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-300));
        }
    }

    #[test]
    fn integral_scales_with_peak() {
        let grid = Grid::default();
        let mut ions = IonParameters::default();
        let a = build_inhomogeneous_profile(&ions, &grid).unwrap().integral();
        ions.peak_od *= 2.5;
        let b = build_inhomogeneous_profile(&ions, &grid).unwrap().integral();
        assert!((b / a - 2.5).abs() < 1e-12);
    }

    #[test]
    fn invalid_grids() {
        assert!(matches!(Grid::new(0.0, 0.0, 10), Err(Error::InvalidGrid(_))));
        assert!(matches!(Grid::new(0.0, -1.0, 10), Err(Error::InvalidGrid(_))));
        assert!(matches!(Grid::new(0.0, 1.0, 1), Err(Error::InvalidGrid(_))));
        let narrow = Grid::centered(0.0, 1e6, 1e4).unwrap();
        assert!(build_inhomogeneous_profile(&IonParameters::default(), &narrow).is_err());
    }

    #[test]
    fn transmission_values() {
        let grid = Grid::new(0.0, 1.0, 3).unwrap();
        let zero = SpectralProfile::constant(ProfileKind::Od, &grid, 0.0).unwrap();
        assert!(transmission(&zero).unwrap().values().iter().all(|t| *t == 1.0));

        let p = SpectralProfile::new(ProfileKind::Od, 0.0, 1.0, vec![3.3, 1.3]).unwrap();
        let t = transmission(&p).unwrap();
        assert!((t.values()[0] - 0.036883167401240).abs() < 1e-12);
        assert!((t.values()[1] - 0.272531793034013).abs() < 1e-12);
        assert_eq!(t.kind(), ProfileKind::Transmission);
    }

    #[test]
    fn transmission_rejects_wrong_kind() {
        let p = SpectralProfile::new(ProfileKind::Rate, 0.0, 1.0, vec![1.0, 2.0]).unwrap();
        assert!(matches!(transmission(&p), Err(Error::KindMismatch { .. })));
    }

    #[test]
    fn kind_invariants_enforced() {
        assert!(SpectralProfile::new(ProfileKind::Od, 0.0, 1.0, vec![-0.1, 1.0]).is_err());
        assert!(SpectralProfile::new(ProfileKind::Transmission, 0.0, 1.0, vec![0.5, 1.1]).is_err());
        let bad = r#"{"kind":"od","detuning_start":0.0,"detuning_step":1.0,"values":[1.0,-2.0]}"#;
        assert!(SpectralProfile::from_json(bad).is_err());
    }

    #[test]
    fn closed_interval_indexing() {
        let grid = Grid::new(-4.0, 1.0, 9).unwrap();
        assert_eq!(grid.index_range(-2.0, 2.0), 2..7);
        assert_eq!(grid.index_range(-1.5, 1.5), 3..6);
        assert_eq!(grid.index_range(10.0, 11.0), 0..0);
    }

    #[test]
    fn headerless_csv_infers_grid() {
        let text = "1.0,0.5\n2.0,0.25\n3.0,0.0\n";
        let p = SpectralProfile::from_csv(text.as_bytes(), ProfileKind::Od).unwrap();
        assert_eq!(p.detuning_start(), 1.0);
        assert_eq!(p.detuning_step(), 1.0);
        assert_eq!(p.values(), &[0.5, 0.25, 0.0]);
        let ragged = "1.0,0.5\n2.0,0.25\n3.5,0.0\n";
        assert!(SpectralProfile::from_csv(ragged.as_bytes(), ProfileKind::Od).is_err());
    }

    proptest! {
        #[test]
        fn csv_and_json_round_trip(
            start in -1e9f64..1e9,
            step in 1e-3f64..1e7,
            values in proptest::collection::vec(0.0f64..10.0, 2..64),
        ) {
            let p = SpectralProfile::new(ProfileKind::Od, start, step, values).unwrap();
            let back = SpectralProfile::from_csv(p.to_csv().as_bytes(), ProfileKind::Rate).unwrap();
            prop_assert_eq!(&back, &p);
            let back = SpectralProfile::from_json(&p.to_json()).unwrap();
            prop_assert_eq!(&back, &p);
        }

        #[test]
        fn transmission_monotone_in_od(a in 0.0f64..50.0, b in 0.0f64..50.0) {
            let p = SpectralProfile::new(ProfileKind::Od, 0.0, 1.0, vec![a.min(b), a.max(b)]).unwrap();
            let t = transmission(&p).unwrap();
            prop_assert!(t.values()[0] >= t.values()[1]);
        }
    }
}
