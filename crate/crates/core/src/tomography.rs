//! Single-qubit polarization process tomography: the sixteen-measurement
//! simulation, constrained reconstruction of the process matrix χ, and
//! fidelity measures.
//!
//! χ is expressed in the operator basis `{I, σx, −iσy, σz}` with
//! `ℰ(ρ) = Σ χ_nm A_n ρ A_m†` and `Tr χ = 1`, so the identity process has
//! `χ₀₀ = 1`.

use std::io::Read;

use nalgebra::{DMatrix, DVector, Matrix2, Matrix4, SymmetricEigen, Vector4};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::lsq::{levenberg_marquardt, LeastSquaresProblem, LmOptions};
use crate::polarization::PolarizationState;
use crate::{Error, Result};

const PHYSICAL_TOLERANCE: f64 = 1e-9;
/// Labels of the input states and analyzers, in table order.
pub const STATE_LABELS: [&str; 4] = ["H", "V", "D", "R"];

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// The operator basis `{I, σx, −iσy, σz}`.
pub fn operator_basis() -> [Matrix2<Complex64>; 4] {
    let z = c(0.0, 0.0);
    let one = c(1.0, 0.0);
    [
        Matrix2::new(one, z, z, one),
        Matrix2::new(z, one, one, z),
        Matrix2::new(z, -one, one, z),
        Matrix2::new(one, z, z, -one),
    ]
}

fn hermitian_eigen(m: &Matrix4<Complex64>) -> SymmetricEigen<Complex64, nalgebra::U4> {
    let sym = (m + m.adjoint()) * c(0.5, 0.0);
    SymmetricEigen::new(sym)
}

/// Process matrix, validated Hermitian, positive semidefinite and of unit trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChiMatrix(Matrix4<Complex64>);

impl ChiMatrix {
    pub fn new(m: Matrix4<Complex64>) -> Result<Self> {
        let herm = (m - m.adjoint()).norm();
        if !(herm <= PHYSICAL_TOLERANCE) {
            return Err(Error::Domain(format!("χ is not Hermitian (‖χ − χ†‖ = {herm:.3e})")));
        }
        let tr = m.trace();
        if !((tr.re - 1.0).abs() <= PHYSICAL_TOLERANCE && tr.im.abs() <= PHYSICAL_TOLERANCE) {
            return Err(Error::Domain(format!("χ must have unit trace, got {tr}")));
        }
        let min_eig = hermitian_eigen(&m).eigenvalues.min();
        if min_eig < -PHYSICAL_TOLERANCE {
            return Err(Error::Domain(format!(
                "χ is not positive semidefinite (eigenvalue {min_eig:.3e})"
            )));
        }
        Ok(ChiMatrix(m))
    }

    /// The process with a single basis operator `A_k`.
    pub fn basis_process(k: usize) -> Self {
        assert!(k < 4, "basis index out of range");
        let mut m = Matrix4::zeros();
        m[(k, k)] = c(1.0, 0.0);
        ChiMatrix(m)
    }

    pub fn identity_process() -> Self {
        Self::basis_process(0)
    }

    /// `ℰ(ρ) = I/2` for every input.
    pub fn depolarizing() -> Self {
        ChiMatrix(Matrix4::identity() * c(0.25, 0.0))
    }

    /// Convex mixture `Σ w_k χ_k`; weights must be non-negative and sum to 1.
    pub fn mixture(parts: &[(f64, ChiMatrix)]) -> Result<Self> {
        let mut m = Matrix4::zeros();
        for (w, chi) in parts {
            if !(*w >= 0.0) {
                return Err(Error::Domain("mixture weights must be non-negative".into()));
            }
            m += chi.0 * c(*w, 0.0);
        }
        Self::new(m)
    }

    /// χ of the channel with the given Kraus operators.
    pub fn from_kraus(kraus: &[Matrix2<Complex64>]) -> Result<Self> {
        let basis = operator_basis();
        let mut m = Matrix4::zeros();
        for k in kraus {
            let coeffs = Vector4::from_fn(|n, _| (basis[n].adjoint() * k).trace() * 0.5);
            m += coeffs * coeffs.adjoint();
        }
        Self::new(m)
    }

    pub fn matrix(&self) -> &Matrix4<Complex64> {
        &self.0
    }

    pub fn get(&self, n: usize, m: usize) -> Complex64 {
        self.0[(n, m)]
    }

    pub fn eigenvalues(&self) -> Vector4<f64> {
        hermitian_eigen(&self.0).eigenvalues
    }

    /// Frobenius distance.
    pub fn distance(&self, other: &ChiMatrix) -> f64 {
        (self.0 - other.0).norm()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("χ serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

impl Serialize for ChiMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let rows: Vec<Vec<[f64; 2]>> = (0..4)
            .map(|i| (0..4).map(|j| [self.0[(i, j)].re, self.0[(i, j)].im]).collect())
            .collect();
        rows.serialize(s)
    }
}

impl<'de> Deserialize<'de> for ChiMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = <[[[f64; 2]; 4]; 4]>::deserialize(d)?;
        let m = Matrix4::from_fn(|i, j| c(rows[i][j][0], rows[i][j][1]));
        ChiMatrix::new(m).map_err(serde::de::Error::custom)
    }
}

pub fn density(state: &PolarizationState) -> Matrix2<Complex64> {
    let v = state.as_vector();
    v * v.adjoint()
}

fn validate_density(rho: &Matrix2<Complex64>) -> Result<()> {
    let herm = (rho - rho.adjoint()).norm();
    let tr = rho.trace();
    if herm > PHYSICAL_TOLERANCE || (tr.re - 1.0).abs() > PHYSICAL_TOLERANCE || tr.im.abs() > PHYSICAL_TOLERANCE {
        return Err(Error::Domain("not a unit-trace Hermitian density operator".into()));
    }
    let sym = (rho + rho.adjoint()) * c(0.5, 0.0);
    if SymmetricEigen::new(sym).eigenvalues.min() < -PHYSICAL_TOLERANCE {
        return Err(Error::Domain("density operator is not positive".into()));
    }
    Ok(())
}

/// `ℰ(ρ) = Σ χ_nm A_n ρ A_m†`.
pub fn apply_process(chi: &ChiMatrix, rho: &Matrix2<Complex64>) -> Result<Matrix2<Complex64>> {
    validate_density(rho)?;
    let basis = operator_basis();
    let mut out = Matrix2::zeros();
    for (n, en) in basis.iter().enumerate() {
        let left = en * rho;
        for (m, em) in basis.iter().enumerate() {
            let coeff = chi.0[(n, m)];
            if coeff != c(0.0, 0.0) {
                out += left * em.adjoint() * coeff;
            }
        }
    }
    Ok(out)
}

/// `v_n = conj(⟨analyzer|A_n|input⟩)`, so that `p = v† χ v`.
fn measurement_vector(input: &PolarizationState, analyzer: &PolarizationState) -> Vector4<Complex64> {
    let basis = operator_basis();
    let (a, s) = (analyzer.as_vector(), input.as_vector());
    Vector4::from_fn(|n, _| (a.adjoint() * basis[n] * s)[(0, 0)].conj())
}

fn measurement_vectors() -> Vec<Vector4<Complex64>> {
    let states = PolarizationState::tomography_set();
    let mut out = Vec::with_capacity(16);
    for input in &states {
        for analyzer in &states {
            out.push(measurement_vector(input, analyzer));
        }
    }
    out
}

/// `p[i][j]`: probability of analyzer `j` for input `i`, both in H, V, D, R order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[[f64; 4]; 4]", into = "[[f64; 4]; 4]")]
pub struct MeasurementTable {
    p: [[f64; 4]; 4],
}

impl TryFrom<[[f64; 4]; 4]> for MeasurementTable {
    type Error = Error;

    fn try_from(p: [[f64; 4]; 4]) -> Result<Self> {
        MeasurementTable::new(p)
    }
}

impl From<MeasurementTable> for [[f64; 4]; 4] {
    fn from(t: MeasurementTable) -> Self {
        t.p
    }
}

impl MeasurementTable {
    pub fn new(p: [[f64; 4]; 4]) -> Result<Self> {
        for (i, row) in p.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(v) {
                    return Err(Error::Domain(format!(
                        "p[{}][{}] = {v} is not a probability",
                        STATE_LABELS[i], STATE_LABELS[j]
                    )));
                }
            }
        }
        Ok(MeasurementTable { p })
    }

    pub fn get(&self, input: usize, analyzer: usize) -> f64 {
        self.p[input][analyzer]
    }

    pub fn values(&self) -> &[[f64; 4]; 4] {
        &self.p
    }

    /// Header row and first column carry the state labels.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("input,H,V,D,R\n");
        for (i, row) in self.p.iter().enumerate() {
            out.push_str(STATE_LABELS[i]);
            for v in row {
                out.push_str(&format!(",{v:?}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr.headers()?.clone();
        let cols: Vec<usize> = STATE_LABELS
            .iter()
            .map(|l| {
                headers
                    .iter()
                    .position(|h| h.eq_ignore_ascii_case(l))
                    .ok_or_else(|| Error::Parse(format!("missing analyzer column '{l}'")))
            })
            .collect::<Result<_>>()?;
        let mut p = [[f64::NAN; 4]; 4];
        let mut seen = [false; 4];
        for (line, record) in rdr.records().enumerate() {
            let record = record?;
            let label = record.get(0).unwrap_or("");
            let i = STATE_LABELS
                .iter()
                .position(|l| l.eq_ignore_ascii_case(label))
                .ok_or_else(|| Error::Parse(format!("row {}: unknown input '{label}'", line + 2)))?;
            for (j, &col) in cols.iter().enumerate() {
                p[i][j] = record
                    .get(col)
                    .and_then(|s| s.parse::<f64>().ok())
                    .ok_or_else(|| Error::Parse(format!("row {}: bad value for {}", line + 2, STATE_LABELS[j])))?;
            }
            seen[i] = true;
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::Parse(format!("missing row for input '{}'", STATE_LABELS[i])));
        }
        Self::new(p)
    }
}

/// Sixteen-measurement table for `chi`, with Gaussian noise of standard
/// deviation `noise_sigma` (clamped to [0, 1]) drawn from `seed`.
pub fn simulate_tomography(chi: &ChiMatrix, noise_sigma: f64, seed: u64) -> Result<MeasurementTable> {
    if !(noise_sigma >= 0.0) || !noise_sigma.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "noise sigma must be non-negative, got {noise_sigma}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_sigma).expect("sigma validated");
    let vectors = measurement_vectors();
    let mut p = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            let v = &vectors[4 * i + j];
            let ideal = (v.adjoint() * chi.0 * v)[(0, 0)].re;
            let perturbed = if noise_sigma > 0.0 {
                ideal + noise.sample(&mut rng)
            } else {
                ideal
            };
            p[i][j] = perturbed.clamp(0.0, 1.0);
        }
    }
    MeasurementTable::new(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Reconstruction {
    pub chi: ChiMatrix,
    /// `Σ (p_measured − p_model)²`.
    pub residual: f64,
    pub iterations: usize,
}

/// Hermitian basis element `k` of 16: diagonal, symmetric real and
/// antisymmetric imaginary parts.
fn hermitian_basis(k: usize) -> Matrix4<Complex64> {
    let mut m = Matrix4::zeros();
    if k < 4 {
        m[(k, k)] = c(1.0, 0.0);
        return m;
    }
    let pairs = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];
    let (a, b) = pairs[(k - 4) % 6];
    if k < 10 {
        m[(a, b)] = c(1.0, 0.0);
        m[(b, a)] = c(1.0, 0.0);
    } else {
        m[(a, b)] = c(0.0, 1.0);
        m[(b, a)] = c(0.0, -1.0);
    }
    m
}

fn linear_inversion(table: &MeasurementTable, vectors: &[Vector4<Complex64>]) -> Matrix4<Complex64> {
    let design = DMatrix::from_fn(16, 16, |row, k| {
        let v = &vectors[row];
        (v.adjoint() * hermitian_basis(k) * v)[(0, 0)].re
    });
    let rhs = DVector::from_fn(16, |row, _| table.p[row / 4][row % 4]);
    let coeffs = design
        .svd(true, true)
        .solve(&rhs, 1e-12)
        .expect("SVD with both factors computed");
    (0..16).fold(Matrix4::zeros(), |acc, k| acc + hermitian_basis(k) * c(coeffs[k], 0.0))
}

/// Nearest PSD unit-trace matrix by eigenvalue clipping.
fn project_physical(m: &Matrix4<Complex64>) -> Matrix4<Complex64> {
    let eig = hermitian_eigen(m);
    let clipped = eig.eigenvalues.map(|l| l.max(0.0));
    let total: f64 = clipped.sum();
    if total <= 0.0 {
        return Matrix4::identity() * c(0.25, 0.0);
    }
    let d = Matrix4::from_diagonal(&clipped.map(|l| c(l / total, 0.0)));
    eig.eigenvectors * d * eig.eigenvectors.adjoint()
}

/// Lower-triangular `L` with real diagonal and `L L† = χ`.
fn lower_factor(chi: &Matrix4<Complex64>) -> Matrix4<Complex64> {
    let eig = hermitian_eigen(chi);
    let root = Matrix4::from_diagonal(&eig.eigenvalues.map(|l| c(l.max(0.0).sqrt(), 0.0)));
    let b = eig.eigenvectors * root;
    let r = b.adjoint().qr().r();
    let mut l = r.adjoint();
    for k in 0..4 {
        let d = l[(k, k)];
        if d.norm() > 0.0 {
            let phase = d.conj() / d.norm();
            for i in 0..4 {
                l[(i, k)] *= phase;
            }
        }
        l[(k, k)] = c(l[(k, k)].re, 0.0);
    }
    l
}

const LOWER_OFFDIAG: [(usize, usize); 6] = [(1, 0), (2, 0), (2, 1), (3, 0), (3, 1), (3, 2)];

fn l_to_params(l: &Matrix4<Complex64>) -> Vec<f64> {
    let mut x: Vec<f64> = (0..4).map(|k| l[(k, k)].re).collect();
    for &(i, j) in &LOWER_OFFDIAG {
        x.push(l[(i, j)].re);
        x.push(l[(i, j)].im);
    }
    x
}

fn params_to_l(x: &[f64]) -> Matrix4<Complex64> {
    let mut l = Matrix4::zeros();
    for k in 0..4 {
        l[(k, k)] = c(x[k], 0.0);
    }
    for (n, &(i, j)) in LOWER_OFFDIAG.iter().enumerate() {
        l[(i, j)] = c(x[4 + 2 * n], x[5 + 2 * n]);
    }
    l
}

fn chi_from_params(x: &[f64]) -> Matrix4<Complex64> {
    let l = params_to_l(x);
    let m = l * l.adjoint();
    let tr = m.trace().re;
    if tr > 0.0 {
        m / c(tr, 0.0)
    } else {
        Matrix4::identity() * c(0.25, 0.0)
    }
}

struct ChiFit<'a> {
    vectors: &'a [Vector4<Complex64>],
    observed: [f64; 16],
}

impl LeastSquaresProblem for ChiFit<'_> {
    fn residuals(&self, x: &[f64]) -> Vec<f64> {
        let chi = chi_from_params(x);
        self.vectors
            .iter()
            .zip(&self.observed)
            .map(|(v, p)| (v.adjoint() * chi * v)[(0, 0)].re - p)
            .collect()
    }

    fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let l = params_to_l(x);
        let norm: f64 = x.iter().map(|v| v * v).sum();
        let mut jac = DMatrix::zeros(16, 16);
        for (row, v) in self.vectors.iter().enumerate() {
            let w = l.adjoint() * v;
            let q = w.norm_squared();
            let p = q / norm;
            // ∂q/∂Re L_kl = 2 Re(conj(w_l) v_k), ∂q/∂Im L_kl = 2 Im(conj(w_l) v_k).
            for k in 0..4 {
                let t = w[k].conj() * v[k];
                jac[(row, k)] = (2.0 * t.re - p * 2.0 * x[k]) / norm;
            }
            for (n, &(i, j)) in LOWER_OFFDIAG.iter().enumerate() {
                let t = w[j].conj() * v[i];
                let (re_idx, im_idx) = (4 + 2 * n, 5 + 2 * n);
                jac[(row, re_idx)] = (2.0 * t.re - p * 2.0 * x[re_idx]) / norm;
                jac[(row, im_idx)] = (2.0 * t.im - p * 2.0 * x[im_idx]) / norm;
            }
        }
        jac
    }
}

/// Euclidean projection of a real vector onto the probability simplex.
fn project_simplex(values: &[f64]) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut shift = 0.0;
    for (k, v) in sorted.iter().enumerate() {
        cumulative += v;
        let t = (cumulative - 1.0) / (k + 1) as f64;
        if v - t > 0.0 {
            shift = t;
        }
    }
    values.iter().map(|v| (v - shift).max(0.0)).collect()
}

/// Nearest (Frobenius) Hermitian PSD unit-trace matrix.
fn project_spectraplex(m: &Matrix4<Complex64>) -> Matrix4<Complex64> {
    let eig = hermitian_eigen(m);
    let lambda = project_simplex(eig.eigenvalues.as_slice());
    let d = Matrix4::from_fn(|i, j| if i == j { c(lambda[i], 0.0) } else { c(0.0, 0.0) });
    let out = eig.eigenvectors * d * eig.eigenvectors.adjoint();
    (out + out.adjoint()) * c(0.5, 0.0)
}

fn model_probabilities(chi: &Matrix4<Complex64>, vectors: &[Vector4<Complex64>]) -> Vec<f64> {
    vectors.iter().map(|v| (v.adjoint() * chi * v)[(0, 0)].re).collect()
}

fn squared_error(chi: &Matrix4<Complex64>, vectors: &[Vector4<Complex64>], observed: &[f64; 16]) -> f64 {
    model_probabilities(chi, vectors)
        .iter()
        .zip(observed)
        .map(|(p, o)| (p - o).powi(2))
        .sum()
}

const PROJECTED_GRADIENT_ITERATIONS: usize = 200_000;

/// Accelerated projected gradient over the PSD unit-trace set, with
/// adaptive restarts. Returns the iterate, iterations used and whether the
/// iterates settled.
fn projected_gradient(
    start: Matrix4<Complex64>,
    vectors: &[Vector4<Complex64>],
    observed: &[f64; 16],
) -> (Matrix4<Complex64>, usize, bool) {
    let outer: Vec<Matrix4<Complex64>> = vectors.iter().map(|v| v * v.adjoint()).collect();
    let lipschitz = 2.0 * vectors.iter().map(|v| v.norm_squared().powi(2)).sum::<f64>();
    let step = 1.0 / lipschitz;
    let gradient = |chi: &Matrix4<Complex64>| -> Matrix4<Complex64> {
        model_probabilities(chi, vectors)
            .iter()
            .zip(observed)
            .zip(&outer)
            .fold(Matrix4::zeros(), |acc, ((p, o), vv)| acc + vv * c(2.0 * (p - o), 0.0))
    };

    let mut x = project_spectraplex(&start);
    let mut y = x;
    let mut t = 1.0f64;
    let mut cost = squared_error(&x, vectors, observed);
    for iteration in 1..=PROJECTED_GRADIENT_ITERATIONS {
        let next = project_spectraplex(&(y - gradient(&y) * c(step, 0.0)));
        let next_cost = squared_error(&next, vectors, observed);
        if next_cost > cost {
            // Momentum overshoot: restart from the last iterate.
            y = x;
            t = 1.0;
        } else {
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            y = next + (next - x) * c((t - 1.0) / t_next, 0.0);
            t = t_next;
            x = next;
            cost = next_cost;
        }
        if iteration % 16 == 0 {
            let mapped = project_spectraplex(&(x - gradient(&x) * c(step, 0.0)));
            if (mapped - x).norm() < 1e-9 {
                return (x, iteration, true);
            }
        }
    }
    (x, PROJECTED_GRADIENT_ITERATIONS, false)
}

/// Physical χ closest, in summed squared probability error, to the table.
///
/// The objective is convex over the PSD unit-trace set. Linear inversion
/// projected onto that set seeds an accelerated projected-gradient solve,
/// which is then polished by Levenberg–Marquardt in the parameterization
/// `χ = L L† / Tr(L L†)` with `L` lower triangular.
pub fn reconstruct_chi(table: &MeasurementTable) -> Result<Reconstruction> {
    let vectors = measurement_vectors();
    let mut observed = [0.0; 16];
    for (row, o) in observed.iter_mut().enumerate() {
        *o = table.p[row / 4][row % 4];
    }
    let start = project_physical(&linear_inversion(table, &vectors));
    let (mut best, mut iterations, settled) = projected_gradient(start, &vectors, &observed);
    let mut cost = squared_error(&best, &vectors, &observed);

    let problem = ChiFit {
        vectors: &vectors,
        observed,
    };
    let options = LmOptions {
        max_iterations: 200,
        ftol: 1e-12,
        xtol: 1e-12,
        gtol: 1e-15,
    };
    let report = levenberg_marquardt(&problem, &l_to_params(&lower_factor(&best)), &options);
    iterations += report.iterations;
    let polished = chi_from_params(&report.params);
    let polished = (polished + polished.adjoint()) * c(0.5, 0.0);
    let polished_cost = squared_error(&polished, &vectors, &observed);
    if polished_cost < cost {
        best = polished;
        cost = polished_cost;
    }

    let chi = ChiMatrix::new(best / best.trace())?;
    if !settled {
        return Err(Error::Convergence {
            iterations,
            residual: cost,
            best: Box::new(chi),
        });
    }
    Ok(Reconstruction {
        chi,
        residual: cost,
        iterations,
    })
}

fn sqrt_psd(m: &Matrix4<Complex64>) -> Matrix4<Complex64> {
    let eig = hermitian_eigen(m);
    let d = Matrix4::from_diagonal(&eig.eigenvalues.map(|l| c(l.max(0.0).sqrt(), 0.0)));
    eig.eigenvectors * d * eig.eigenvectors.adjoint()
}

/// `(Tr √(√a · b · √a))²`, clamped to [0, 1].
pub fn process_fidelity(a: &ChiMatrix, b: &ChiMatrix) -> f64 {
    let ra = sqrt_psd(&a.0);
    let inner = ra * b.0 * ra;
    let eig = hermitian_eigen(&inner);
    let s: f64 = eig.eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum();
    (s * s).clamp(0.0, 1.0)
}

/// `α′ / (α′ + β′)`.
pub fn frequency_bin_fidelity(alpha_out: f64, beta_out: f64) -> Result<f64> {
    if !(alpha_out >= 0.0) || !(beta_out >= 0.0) {
        return Err(Error::Domain("counts must be non-negative".into()));
    }
    let total = alpha_out + beta_out;
    if total <= 0.0 || !total.is_finite() {
        return Err(Error::Undefined(
            "fidelity is undefined for zero total counts".into(),
        ));
    }
    Ok(alpha_out / total)
}

/// Random trace-preserving process: Kraus operators cut from a Haar-like
/// 8×2 isometry.
pub fn random_process(rng: &mut impl rand::Rng) -> ChiMatrix {
    let g = DMatrix::<Complex64>::from_fn(8, 2, |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        c(re, im)
    });
    let q = g.qr().q();
    let kraus: Vec<Matrix2<Complex64>> = (0..4)
        .map(|k| Matrix2::from_fn(|i, j| q[(2 * k + i, j)]))
        .collect();
    ChiMatrix::from_kraus(&kraus).expect("Kraus construction is physical")
}
