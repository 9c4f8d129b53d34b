//! One pipeline per subcommand. Each returns the JSON summary fields; the
//! caller adds the command name and the artifact list.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use afc_core::analysis::{fit_exponential, fit_lorentzian_holes, phonon_density, zeeman_splitting, FitResult};
use afc_core::echo::{
    afc_efficiency_analytic, comb_profile_alternating, echo_metrics, embed_comb, propagate,
    schedule_multiwindow, storage_time, transfer_function, AfcWindow, StoredInput, TimeTrace,
    ETALON_LEAKAGE,
};
use afc_core::medium::{build_inhomogeneous_profile, read_two_columns, Grid, IonParameters, ProfileKind, SpectralProfile};
use afc_core::optimizer::{correlation_matrix, records_to_csv, run_scan, ParamRanges, SimConfig};
use afc_core::polarization::{
    arb, sample_retarder_angles, solve_compensation, waveplate, CompensationConfig, WaveplateKind,
};
use afc_core::pumping::{hole_depth, run_sequence, spontaneous_noise, PumpSequence};
use afc_core::tomography::{
    process_fidelity, random_process, reconstruct_chi, simulate_tomography, ChiMatrix, MeasurementTable,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use serde_json::{json, Map, Value};

use crate::config::{CliError, CliResult, Experiment};

/// Collects artifact files under the output directory.
pub struct Artifacts {
    dir: PathBuf,
    written: Vec<String>,
}

impl Artifacts {
    pub fn new(dir: &Path) -> Self {
        Artifacts {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        }
    }

    pub fn write(&mut self, name: &str, contents: &str) -> CliResult<()> {
        fs::create_dir_all(&self.dir).map_err(afc_core::Error::from)?;
        fs::write(self.dir.join(name), contents).map_err(afc_core::Error::from)?;
        self.written.push(name.to_string());
        Ok(())
    }

    pub fn write_json(&mut self, name: &str, value: &Value) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(value).expect("JSON values serialize");
        text.push('\n');
        self.write(name, &text)
    }

    /// Writes `metadata.json`, the only file carrying a timestamp.
    pub fn finish(mut self, command: &str, seed: Option<u64>, parameters: &toml::Table) -> CliResult<Vec<String>> {
        if self.written.is_empty() {
            return Ok(Vec::new());
        }
        let now = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let metadata = json!({
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "seed": seed,
            "created_unix_s": now,
            "parameters": serde_json::to_value(parameters).expect("TOML tables convert to JSON"),
        });
        self.write_json("metadata.json", &metadata)?;
        Ok(self
            .written
            .iter()
            .map(|n| self.dir.join(n).display().to_string())
            .collect())
    }
}

fn require_seed(seed: Option<u64>, why: &str) -> CliResult<u64> {
    seed.ok_or_else(|| CliError::config(format!("--seed is required {why}")))
}

fn read_file(exp: &Experiment, path: &Path) -> CliResult<(PathBuf, fs::File)> {
    let full = exp.resolve(path);
    let file = fs::File::open(&full)
        .map_err(|e| CliError::config(format!("cannot open {}: {e}", full.display())))?;
    Ok((full, file))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GridSpec {
    #[serde(default)]
    center_hz: f64,
    half_span_hz: f64,
    step_hz: f64,
}

/// Detuning grid from an optional `[grid]` block; the library default otherwise.
fn build_grid(spec: &Option<GridSpec>) -> CliResult<Grid> {
    match spec {
        Some(g) => Ok(Grid::centered(g.center_hz, g.half_span_hz, g.step_hz)?),
        None => Ok(Grid::default()),
    }
}

// ---------------------------------------------------------------- efficiency

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EfficiencyParams {
    d: f64,
    finesse: f64,
    d0: f64,
}

pub fn efficiency(exp: &Experiment) -> CliResult<Map<String, Value>> {
    let p: EfficiencyParams = exp.parse()?;
    let eta = afc_efficiency_analytic(p.d, p.finesse, p.d0)?;
    Ok(map(json!({ "d": p.d, "finesse": p.finesse, "d0": p.d0, "efficiency": eta })))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StorageParams {
    delta_hz: f64,
}

pub fn storage(exp: &Experiment) -> CliResult<Map<String, Value>> {
    let p: StorageParams = exp.parse()?;
    Ok(map(json!({ "delta_hz": p.delta_hz, "storage_time_s": storage_time(p.delta_hz)? })))
}

// ------------------------------------------------------------------ pump-sim

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ProbeWindow {
    center_hz: f64,
    bandwidth_hz: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PumpParams {
    #[serde(default)]
    ions: IonParameters,
    grid: Option<GridSpec>,
    sequence: PumpSequence,
    probe: Option<ProbeWindow>,
    #[serde(default)]
    compare_continuous: bool,
    /// Wait after pumping at which the spontaneous-noise ratio is reported (s).
    #[serde(default = "default_noise_wait")]
    noise_wait_s: f64,
}

fn default_noise_wait() -> f64 {
    50e-3
}

pub fn pump_sim(exp: &Experiment, out: &mut Artifacts) -> CliResult<Map<String, Value>> {
    let p: PumpParams = exp.parse()?;
    let line = build_inhomogeneous_profile(&p.ions, &build_grid(&p.grid)?)?;
    let medium = run_sequence(&line, &p.ions, &p.sequence)?;
    out.write("initial_od.csv", &medium.initial_od().to_csv())?;
    out.write("od.csv", &medium.od().to_csv())?;

    let mut summary = map(json!({
        "mode": p.sequence.mode,
        "integrated_pump": p.sequence.integrated_pump(),
        "spontaneous_noise": spontaneous_noise(&medium, p.noise_wait_s, &p.ions)?,
        "noise_wait_s": p.noise_wait_s,
    }));
    if let Some(probe) = &p.probe {
        summary.insert("hole_depth".into(), json!(hole_depth(&medium, probe.center_hz, probe.bandwidth_hz)?));
    }
    if p.compare_continuous {
        let continuous = run_sequence(&line, &p.ions, &p.sequence.to_continuous())?;
        out.write("od_continuous.csv", &continuous.od().to_csv())?;
        if let Some(probe) = &p.probe {
            summary.insert(
                "continuous_hole_depth".into(),
                json!(hole_depth(&continuous, probe.center_hz, probe.bandwidth_hz)?),
            );
        }
    }
    Ok(summary)
}

// ------------------------------------------------------------------ echo-sim

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum Base {
    /// The first window's comb, with its background outside the window.
    Comb {
        #[serde(default = "one")]
        odd_tooth_scale: f64,
    },
    Flat { od: f64 },
    Inhomogeneous {
        #[serde(default)]
        ions: IonParameters,
    },
}

fn one() -> f64 {
    1.0
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TraceSpec {
    #[serde(default)]
    t_start_s: f64,
    dt_s: f64,
    samples: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PulseSpec {
    t_center_s: f64,
    fwhm_s: f64,
    #[serde(default)]
    detuning_hz: f64,
    #[serde(default = "one")]
    amplitude: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EchoParams {
    grid: Option<GridSpec>,
    base: Base,
    windows: Vec<AfcWindow>,
    trace: TraceSpec,
    pulses: Vec<PulseSpec>,
    #[serde(default = "one_pass")]
    passes: u32,
    /// Adds the frequency shifter's etalon leakage at this carrier (Hz).
    etalon_carrier_hz: Option<f64>,
    gate_width_s: Option<f64>,
}

fn one_pass() -> u32 {
    1
}

pub fn echo_sim(exp: &Experiment, out: &mut Artifacts) -> CliResult<Map<String, Value>> {
    let p: EchoParams = exp.parse()?;
    if p.windows.is_empty() || p.pulses.is_empty() {
        return Err(CliError::config("echo-sim needs at least one window and one pulse"));
    }
    let grid = build_grid(&p.grid)?;
    let mut profile = match &p.base {
        Base::Comb { odd_tooth_scale } => comb_profile_alternating(&p.windows[0], &grid, *odd_tooth_scale)?,
        Base::Flat { od } => SpectralProfile::constant(ProfileKind::Od, &grid, *od)?,
        Base::Inhomogeneous { ions } => build_inhomogeneous_profile(ions, &grid)?,
    };
    let skip = usize::from(matches!(p.base, Base::Comb { .. }));
    for w in &p.windows[skip..] {
        profile = embed_comb(w, &profile)?;
    }
    let response = transfer_function(&profile, p.passes)?;

    let mut pulses = Vec::with_capacity(p.pulses.len());
    let mut summed = vec![num_complex::Complex64::new(0.0, 0.0); p.trace.samples];
    for spec in &p.pulses {
        let mut single = TimeTrace::zeros(p.trace.t_start_s, p.trace.dt_s, p.trace.samples)?;
        single.add_gaussian(spec.t_center_s, spec.fwhm_s, spec.detuning_hz, spec.amplitude);
        if let Some(carrier) = p.etalon_carrier_hz {
            single = single.with_etalon_leakage(spec.detuning_hz, carrier, ETALON_LEAKAGE);
        }
        for (acc, a) in summed.iter_mut().zip(single.samples()) {
            *acc += a;
        }
        pulses.push(single);
    }
    let input = TimeTrace::new(p.trace.t_start_s, p.trace.dt_s, summed)?;
    let output = propagate(&input, &response)?;

    let stored: Vec<StoredInput> = p
        .pulses
        .iter()
        .map(|s| StoredInput { time_bin: s.t_center_s, center: s.detuning_hz })
        .collect();
    let schedule = schedule_multiwindow(&stored, &p.windows)?;
    let shortest = p.windows.iter().map(AfcWindow::storage_time).fold(f64::INFINITY, f64::min);
    let gate = p.gate_width_s.unwrap_or(0.5 * shortest);
    let mut echoes = Vec::with_capacity(pulses.len());
    for (echo, single) in schedule.echoes.iter().zip(&pulses) {
        let metrics = echo_metrics(&output, single, echo.expected_echo_time, gate)?;
        echoes.push(json!({
            "input_index": echo.input_index,
            "window_index": echo.window_index,
            "expected_echo_time_s": echo.expected_echo_time,
            "metrics": metrics,
            "analytic_efficiency": p.windows[echo.window_index].analytic_efficiency()?,
        }));
    }

    out.write("od.csv", &profile.to_csv())?;
    out.write("input.csv", &input.to_csv())?;
    out.write("output.csv", &output.to_csv())?;
    out.write_json("echoes.json", &json!({ "order": schedule.order, "gate_width_s": gate, "echoes": echoes }))?;
    Ok(map(json!({ "order": schedule.order, "echoes": echoes })))
}

// ---------------------------------------------------------------------- scan

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScanParams {
    #[serde(default)]
    ranges: ParamRanges,
    #[serde(default)]
    sim: SimConfig,
    #[serde(default = "default_trials")]
    trials: usize,
}

fn default_trials() -> usize {
    850
}

pub fn scan(exp: &Experiment, seed: Option<u64>, out: &mut Artifacts) -> CliResult<Map<String, Value>> {
    let seed = require_seed(seed, "for scan")?;
    let p: ScanParams = exp.parse()?;
    let records = run_scan(&p.ranges, p.trials, seed, &p.sim)?;
    let correlations = correlation_matrix(&records)?;
    out.write("scan.csv", &records_to_csv(&records))?;
    out.write_json("correlation.json", &serde_json::to_value(&correlations).expect("report serializes"))?;
    let failed = records.iter().filter(|r| r.error.is_some()).count();
    let best = records
        .iter()
        .filter(|r| r.error.is_none())
        .max_by(|a, b| a.efficiency.total_cmp(&b.efficiency));
    Ok(map(json!({
        "trials": records.len(),
        "failed": failed,
        "best": best,
    })))
}

// ---------------------------------------------------------------------- tomo

#[derive(Deserialize, Clone, Copy, PartialEq)]
#[serde(rename_all = "snake_case")]
enum ProcessName {
    Identity,
    SigmaX,
    SigmaY,
    SigmaZ,
    Depolarizing,
    Random,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TomoParams {
    /// Measured table (CSV); when absent the table is simulated.
    table: Option<PathBuf>,
    #[serde(default = "identity")]
    process: ProcessName,
    #[serde(default)]
    noise_sigma: f64,
    /// Reference process for the fidelity report; defaults to the simulated
    /// process, or the identity for a measured table.
    ideal: Option<ProcessName>,
}

fn identity() -> ProcessName {
    ProcessName::Identity
}

fn named_process(name: ProcessName, seed: Option<u64>) -> CliResult<ChiMatrix> {
    Ok(match name {
        ProcessName::Identity => ChiMatrix::identity_process(),
        ProcessName::SigmaX => ChiMatrix::basis_process(1),
        ProcessName::SigmaY => ChiMatrix::basis_process(2),
        ProcessName::SigmaZ => ChiMatrix::basis_process(3),
        ProcessName::Depolarizing => ChiMatrix::depolarizing(),
        ProcessName::Random => {
            let seed = require_seed(seed, "for a random process")?;
            random_process(&mut ChaCha8Rng::seed_from_u64(seed))
        }
    })
}

pub fn tomo(exp: &Experiment, seed: Option<u64>, out: &mut Artifacts) -> CliResult<Map<String, Value>> {
    let p: TomoParams = exp.parse()?;
    let table = match &p.table {
        Some(path) => {
            let (_, file) = read_file(exp, path)?;
            MeasurementTable::from_csv(file)?
        }
        None => {
            let truth = named_process(p.process, seed)?;
            let noise_seed = if p.noise_sigma > 0.0 {
                require_seed(seed, "for noisy tomography")?
            } else {
                seed.unwrap_or(0)
            };
            simulate_tomography(&truth, p.noise_sigma, noise_seed)?
        }
    };
    out.write("table.csv", &table.to_csv())?;
    let rec = reconstruct_chi(&table)?;
    let reference = p.ideal.unwrap_or(if p.table.is_some() { ProcessName::Identity } else { p.process });
    let ideal = named_process(reference, seed)?;
    let fidelity = process_fidelity(&rec.chi, &ideal);
    out.write_json(
        "chi.json",
        &json!({
            "chi": rec.chi,
            "residual": rec.residual,
            "iterations": rec.iterations,
            "process_fidelity": fidelity,
        }),
    )?;
    Ok(map(json!({
        "process_fidelity": fidelity,
        "residual": rec.residual,
        "chi_00": rec.chi.get(0, 0).re,
    })))
}

// --------------------------------------------------------------------- polar

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Element {
    kind: WaveplateKind,
    angles: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PolarParams {
    configuration: CompensationConfig,
    /// Solve for one element; otherwise sample retarders.
    element: Option<Element>,
    #[serde(default = "default_samples")]
    samples: usize,
}

fn default_samples() -> usize {
    100
}

pub fn polar(exp: &Experiment, seed: Option<u64>, out: &mut Artifacts) -> CliResult<Map<String, Value>> {
    let p: PolarParams = exp.parse()?;
    if let Some(element) = &p.element {
        let j = waveplate(element.kind, &element.angles)?;
        let solution = solve_compensation(&j, p.configuration)?;
        let value = serde_json::to_value(&solution).expect("solution serializes");
        out.write_json("solution.json", &value)?;
        return Ok(map(json!({ "configuration": p.configuration, "solution": value })));
    }
    let seed = require_seed(seed, "for sampled retarders")?;
    let mut csv = String::from("index,axis_rad,retardance_rad,residual\n");
    let mut worst: f64 = 0.0;
    for i in 0..p.samples as u64 {
        let (axis, retardance) = sample_retarder_angles(seed, i);
        let residual = solve_compensation(&arb(axis, retardance), p.configuration)?.residual;
        worst = worst.max(residual);
        csv.push_str(&format!("{i},{axis:?},{retardance:?},{residual:?}\n"));
    }
    out.write("residuals.csv", &csv)?;
    Ok(map(json!({ "configuration": p.configuration, "samples": p.samples, "max_residual": worst })))
}

// ----------------------------------------------------------------------- fit

#[derive(Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
enum FitParams {
    Exponential {
        data: PathBuf,
        #[serde(default = "one_term")]
        n_terms: usize,
    },
    Lorentzian {
        data: PathBuf,
        #[serde(default)]
        n_side_pairs: usize,
    },
}

fn one_term() -> usize {
    1
}

pub fn fit(exp: &Experiment, out: &mut Artifacts) -> CliResult<Map<String, Value>> {
    let p: FitParams = exp.parse()?;
    let result: FitResult = match &p {
        FitParams::Exponential { data, n_terms } => {
            let (_, file) = read_file(exp, data)?;
            let (t, y) = read_two_columns(file)?;
            fit_exponential(&t, &y, *n_terms)?
        }
        FitParams::Lorentzian { data, n_side_pairs } => {
            let (_, file) = read_file(exp, data)?;
            let spectrum = SpectralProfile::from_csv(file, ProfileKind::Transmission)?;
            fit_lorentzian_holes(&spectrum, *n_side_pairs)?
        }
    };
    let value = serde_json::to_value(&result).expect("fit serializes");
    out.write_json("fit.json", &value)?;
    if !result.converged {
        return Err(CliError::NotConverged(format!(
            "fit did not converge; best iterate written to fit.json (rms {:e})",
            result.residual_rms
        )));
    }
    Ok(map(json!({ "fit": value })))
}

// ------------------------------------------------------------------- physics

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PhysicsParams {
    g: f64,
    fields_t: Vec<f64>,
    #[serde(default)]
    temperatures_k: Vec<f64>,
}

pub fn physics(exp: &Experiment, out: &mut Artifacts) -> CliResult<Map<String, Value>> {
    let p: PhysicsParams = exp.parse()?;
    if p.fields_t.is_empty() {
        return Err(CliError::config("physics needs at least one field value"));
    }
    let mut zeeman = Vec::with_capacity(p.fields_t.len());
    for &b in &p.fields_t {
        zeeman.push(json!({ "field_t": b, "splitting_hz": zeeman_splitting(p.g, b)? }));
    }
    if !p.temperatures_k.is_empty() {
        let mut csv = String::from("field_t,temperature_k,splitting_hz,phonon_density\n");
        for &b in &p.fields_t {
            for &t in &p.temperatures_k {
                csv.push_str(&format!(
                    "{b:?},{t:?},{:?},{:?}\n",
                    zeeman_splitting(p.g, b)?,
                    phonon_density(b, t, p.g)?
                ));
            }
        }
        out.write("physics.csv", &csv)?;
    }
    Ok(map(json!({ "g": p.g, "zeeman": zeeman })))
}

fn map(value: Value) -> Map<String, Value> {
    match value {
        Value::Object(m) => m,
        _ => unreachable!("summaries are JSON objects"),
    }
}
