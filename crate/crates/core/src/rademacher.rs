//! Rademacher complexity of the linear ODE class `F` and its noise-injected SDE
//! counterpart `G`, plus independent oracles for every closed form.
//!
//! For positive samples and `0 < p < 1`:
//!
//! ```text
//! R(F) = (c/N) · exp(cTp) · E_σ ‖Σᵢ σᵢ xᵢ^p‖₂
//! R(G) = R(F) · exp(−p(1−p)γ²T/2)
//! ```

use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::circulant_matrix;
use crate::rng::{derive_seed, stream, NoiseSource};
use crate::tensor::l2_norm;

/// Sample counts up to this use exact enumeration of all sign vectors.
pub const ENUMERATION_LIMIT: usize = 20;
/// Draws per Monte-Carlo chunk; each chunk owns a derived seed.
const MC_CHUNK: usize = 8192;

/// `N` strictly positive vectors in `ℝ^d`, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    n: usize,
    d: usize,
    data: Vec<f64>,
}

impl SampleSet {
    pub fn new(n: usize, d: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 || d == 0 || data.len() != n * d {
            return Err(Error::dim(format!("sample set {n}x{d} with {} values", data.len())));
        }
        if data.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::invalid("samples must be strictly positive and finite"));
        }
        Ok(Self { n, d, data })
    }

    /// Uniform coordinates in `[lo, hi]`, `0 < lo < hi`.
    pub fn random<R: Rng + ?Sized>(n: usize, d: usize, lo: f64, hi: f64, rng: &mut R) -> Result<Self> {
        let data = (0..n * d).map(|_| rng.random_range(lo..hi)).collect();
        Self::new(n, d, data)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    /// Elementwise `xᵢ^p`, row-major.
    pub fn powered(&self, p: f64) -> Vec<f64> {
        self.data.iter().map(|v| v.powf(p)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexityParams {
    pub c: f64,
    pub t: f64,
    pub p: f64,
    pub gamma: f64,
}

impl ComplexityParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(Error::invalid("p must lie in (0, 1)"));
        }
        if !(self.c >= 0.0 && self.t >= 0.0 && self.gamma >= 0.0) {
            return Err(Error::invalid("c, T and gamma must be nonnegative"));
        }
        Ok(())
    }

    /// `exp(−p(1−p)γ²T/2)`.
    pub fn damping(&self) -> f64 {
        (-self.p * (1.0 - self.p) * self.gamma * self.gamma * self.t / 2.0).exp()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateMethod {
    ClosedFormEnumerated,
    ClosedFormMc,
    RandomSearchOracle,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexityEstimate {
    pub value: f64,
    pub method: EstimateMethod,
    pub std_error: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum SigmaMethod {
    /// Enumerate for `N ≤ 20`, otherwise Monte Carlo with the given draws and seed.
    Auto { draws: usize, seed: u64 },
    Enumerate,
    MonteCarlo { draws: usize, seed: u64 },
}

/// `E_σ ‖Σᵢ σᵢ xᵢ^p‖₂` together with how it was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SigmaExpectation {
    pub value: f64,
    pub std_error: f64,
    pub method: EstimateMethod,
}

fn enumerate_signs(xp: &[f64], n: usize, d: usize) -> f64 {
    // Gray-code walk: consecutive sign vectors differ in one coordinate.
    let mut sum = vec![0.0; d];
    for i in 0..n {
        for (s, v) in sum.iter_mut().zip(&xp[i * d..(i + 1) * d]) {
            *s += v;
        }
    }
    let mut signs = vec![1.0f64; n];
    let mut total = l2_norm(&sum);
    for step in 1u64..(1u64 << n) {
        let flip = step.trailing_zeros() as usize;
        let delta = -2.0 * signs[flip];
        signs[flip] = -signs[flip];
        for (s, v) in sum.iter_mut().zip(&xp[flip * d..(flip + 1) * d]) {
            *s += delta * v;
        }
        total += l2_norm(&sum);
    }
    total / (1u64 << n) as f64
}

fn monte_carlo_signs(xp: &[f64], n: usize, d: usize, draws: usize, seed: u64) -> (f64, f64) {
    let chunks = draws.div_ceil(MC_CHUNK);
    let partial: Vec<(f64, f64, usize)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let count = MC_CHUNK.min(draws - c * MC_CHUNK);
            let mut rng = stream(derive_seed(seed, c as u64), 0);
            let mut sum = vec![0.0; d];
            let (mut s1, mut s2) = (0.0, 0.0);
            for _ in 0..count {
                sum.iter_mut().for_each(|v| *v = 0.0);
                for i in 0..n {
                    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    for (s, v) in sum.iter_mut().zip(&xp[i * d..(i + 1) * d]) {
                        *s += sign * v;
                    }
                }
                let norm = l2_norm(&sum);
                s1 += norm;
                s2 += norm * norm;
            }
            (s1, s2, count)
        })
        .collect();
    let (s1, s2, m) = partial
        .iter()
        .fold((0.0, 0.0, 0usize), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2));
    let m = m as f64;
    let mean = s1 / m;
    let var = ((s2 / m - mean * mean) * m / (m - 1.0).max(1.0)).max(0.0);
    (mean, (var / m).sqrt())
}

pub fn sigma_expectation(samples: &SampleSet, p: f64, method: SigmaMethod) -> Result<SigmaExpectation> {
    let xp = samples.powered(p);
    let (n, d) = (samples.n, samples.d);
    let enumerate = |xp: &[f64]| SigmaExpectation {
        value: enumerate_signs(xp, n, d),
        std_error: 0.0,
        method: EstimateMethod::ClosedFormEnumerated,
    };
    let mc = |xp: &[f64], draws: usize, seed: u64| -> Result<SigmaExpectation> {
        if draws < 2 {
            return Err(Error::invalid("Monte Carlo needs at least 2 draws"));
        }
        let (value, std_error) = monte_carlo_signs(xp, n, d, draws, seed);
        Ok(SigmaExpectation {
            value,
            std_error,
            method: EstimateMethod::ClosedFormMc,
        })
    };
    match method {
        SigmaMethod::Enumerate if n > ENUMERATION_LIMIT => Err(Error::invalid(format!(
            "enumeration is limited to N <= {ENUMERATION_LIMIT}"
        ))),
        SigmaMethod::Enumerate => Ok(enumerate(&xp)),
        SigmaMethod::Auto { .. } if n <= ENUMERATION_LIMIT => Ok(enumerate(&xp)),
        SigmaMethod::Auto { draws, seed } | SigmaMethod::MonteCarlo { draws, seed } => mc(&xp, draws, seed),
    }
}

/// `R(F) = (c/N)·exp(cTp)·E_σ‖Σσᵢxᵢ^p‖₂`.
pub fn complexity_ode(samples: &SampleSet, params: &ComplexityParams, sigma: &SigmaExpectation) -> Result<ComplexityEstimate> {
    params.validate()?;
    let f = params.c / samples.n as f64 * (params.c * params.t * params.p).exp();
    Ok(ComplexityEstimate {
        value: f * sigma.value,
        method: sigma.method,
        std_error: f * sigma.std_error,
    })
}

/// `R(G) = R(F)·exp(−p(1−p)γ²T/2)`, from the same σ-expectation as `R(F)`.
pub fn complexity_sde(samples: &SampleSet, params: &ComplexityParams, sigma: &SigmaExpectation) -> Result<ComplexityEstimate> {
    let ode = complexity_ode(samples, params, sigma)?;
    let k = params.damping();
    Ok(ComplexityEstimate {
        value: ode.value * k,
        method: ode.method,
        std_error: ode.std_error * k,
    })
}

/// Eigenvalues `λᵢ = Σₖ aₖ mᵢᵏ` (`mᵢ = e^{2πi·i/d}`) of the circulant matrix
/// with first row `a`, and the unitary `Ψ` (row-major `d×d`) whose column `i`
/// is `(mᵢʲ)ⱼ / √d`, so that `C = Ψ diag(λ) Ψᴴ`.
pub fn dft_eigen_decompose(first_row: &[f64]) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
    let d = first_row.len();
    if d == 0 {
        return Err(Error::dim("empty first row"));
    }
    let mut buf: Vec<Complex64> = first_row.iter().map(|&a| Complex64::new(a, 0.0)).collect();
    // rustfft's inverse transform is the unnormalized sum with e^{+2πi jk/d}.
    FftPlanner::new().plan_fft_inverse(d).process(&mut buf);
    let scale = 1.0 / (d as f64).sqrt();
    let mut psi = vec![Complex64::new(0.0, 0.0); d * d];
    for j in 0..d {
        for i in 0..d {
            let angle = 2.0 * std::f64::consts::PI * ((i * j) % d) as f64 / d as f64;
            psi[j * d + i] = Complex64::from_polar(scale, angle);
        }
    }
    Ok((buf, psi))
}

/// `Ψ diag(λ) Ψᴴ`, row-major.
pub fn reconstruct_from_spectrum(eigenvalues: &[Complex64], psi: &[Complex64]) -> Vec<Complex64> {
    let d = eigenvalues.len();
    let mut out = vec![Complex64::new(0.0, 0.0); d * d];
    for r in 0..d {
        for c in 0..d {
            out[r * d + c] = (0..d)
                .map(|i| psi[r * d + i] * eigenvalues[i] * psi[c * d + i].conj())
                .sum();
        }
    }
    out
}

/// Frobenius distance between `Ψ diag(λ) Ψᴴ` and the explicit circulant matrix.
pub fn spectral_reconstruction_error(first_row: &[f64]) -> Result<f64> {
    let (lambda, psi) = dft_eigen_decompose(first_row)?;
    let rec = reconstruct_from_spectrum(&lambda, &psi);
    let explicit = circulant_matrix(first_row);
    Ok(rec
        .iter()
        .zip(&explicit)
        .map(|(z, &x)| (z - Complex64::new(x, 0.0)).norm_sqr())
        .sum::<f64>()
        .sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GbmOracle {
    pub mc_estimate: f64,
    pub std_error: f64,
    pub closed_form: f64,
    pub z_score: f64,
}

/// Monte-Carlo estimate of `E[y(T)^p]` for the scalar geometric Brownian
/// motion `dy = λy dt + γy dB`, `y(0) = x0`, against
/// `x0^p·exp(pλT − p(1−p)γ²T/2)`. Each path accumulates `steps` Brownian
/// increments and is evaluated through `y(t) = exp(λt − γ²t/2 + γB(t))·x0`.
pub fn gbm_moment_oracle(x0: f64, lam: f64, gamma: f64, t: f64, p: f64, n_paths: usize, steps: usize, seed: u64) -> Result<GbmOracle> {
    if !(x0 > 0.0) || n_paths < 2 || steps == 0 || !(t >= 0.0) {
        return Err(Error::invalid("need x0 > 0, T >= 0, at least 2 paths and 1 step"));
    }
    let closed_form = x0.powf(p) * (p * lam * t - p * (1.0 - p) * gamma * gamma * t / 2.0).exp();
    let sqrt_dt = (t / steps as f64).sqrt();
    let chunks = n_paths.div_ceil(MC_CHUNK);
    let partial: Vec<(f64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let count = MC_CHUNK.min(n_paths - c * MC_CHUNK);
            let mut rng = stream(derive_seed(seed, c as u64), 0);
            let mut inc = vec![0.0; steps];
            let (mut s1, mut s2) = (0.0, 0.0);
            for _ in 0..count {
                rng.fill_standard_normal(&mut inc);
                let b: f64 = inc.iter().sum::<f64>() * sqrt_dt;
                let y = x0 * ((lam - 0.5 * gamma * gamma) * t + gamma * b).exp();
                let v = y.powf(p);
                s1 += v;
                s2 += v * v;
            }
            (s1, s2)
        })
        .collect();
    let (s1, s2) = partial.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let m = n_paths as f64;
    let mean = s1 / m;
    let var = ((s2 / m - mean * mean) * m / (m - 1.0)).max(0.0);
    let std_error = (var / m).sqrt();
    let z_score = if std_error == 0.0 {
        if (mean - closed_form).abs() <= 1e-12 * closed_form.abs().max(1.0) {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (mean - closed_form) / std_error
    };
    Ok(GbmOracle {
        mc_estimate: mean,
        std_error,
        closed_form,
        z_score,
    })
}

/// `exp(A)` for a real row-major `d×d` matrix by scaling and squaring a
/// truncated Taylor series.
pub fn matrix_exp(a: &[f64], d: usize) -> Vec<f64> {
    let norm1 = (0..d)
        .map(|c| (0..d).map(|r| a[r * d + c].abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let squarings = if norm1 > 0.5 { (norm1 / 0.5).log2().ceil() as u32 } else { 0 };
    let scale = 0.5f64.powi(squarings as i32);
    let scaled: Vec<f64> = a.iter().map(|v| v * scale).collect();
    let mut result = identity(d);
    let mut term = identity(d);
    for k in 1..=20 {
        term = matmul(&term, &scaled, d);
        term.iter_mut().for_each(|v| *v /= k as f64);
        for (r, t) in result.iter_mut().zip(&term) {
            *r += t;
        }
    }
    for _ in 0..squarings {
        result = matmul(&result, &result, d);
    }
    result
}

fn identity(d: usize) -> Vec<f64> {
    let mut m = vec![0.0; d * d];
    for i in 0..d {
        m[i * d + i] = 1.0;
    }
    m
}

fn matmul(a: &[f64], b: &[f64], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for k in 0..d {
            let aik = a[i * d + k];
            for j in 0..d {
                out[i * d + j] += aik * b[k * d + j];
            }
        }
    }
    out
}

/// Real first row of the circulant matrix with spectrum `λ` (which must be
/// conjugate-symmetric, `λ_{d−i} = conj(λᵢ)`).
pub fn circulant_from_spectrum(lambda: &[Complex64]) -> Vec<f64> {
    let d = lambda.len();
    let mut buf = lambda.to_vec();
    // a_k = (1/d) Σᵢ λᵢ e^{−2πi ik/d}
    FftPlanner::new().plan_fft_forward(d).process(&mut buf);
    buf.iter().map(|z| z.re / d as f64).collect()
}

fn random_spectrum<R: Rng + ?Sized>(d: usize, c: f64, rng: &mut R) -> Vec<Complex64> {
    let mut lambda = vec![Complex64::new(0.0, 0.0); d];
    for i in 0..=d / 2 {
        let j = (d - i) % d;
        if i == j {
            lambda[i] = Complex64::new(rng.random_range(-c..=c), 0.0);
        } else {
            let r = c * rng.random::<f64>().sqrt();
            let th = rng.random_range(0.0..std::f64::consts::TAU);
            lambda[i] = Complex64::from_polar(r, th);
            lambda[j] = lambda[i].conj();
        }
    }
    lambda
}

fn perturb_spectrum<R: Rng + ?Sized>(base: &[Complex64], c: f64, radius: f64, rng: &mut R) -> Vec<Complex64> {
    let d = base.len();
    let mut lambda = base.to_vec();
    for i in 0..=d / 2 {
        let j = (d - i) % d;
        let mut z = base[i] + Complex64::new(rng.random_range(-radius..=radius), rng.random_range(-radius..=radius));
        if i == j {
            z.im = 0.0;
        }
        if z.norm() > c {
            z *= c / z.norm();
        }
        lambda[i] = z;
        lambda[j] = z.conj();
    }
    lambda
}

/// Objective `sup_w Σσᵢ w·exp(pTU)xᵢ^p = c‖exp(pTU)v‖₂` with `v = Σσᵢxᵢ^p`.
fn search_objective(v: &[f64], lambda: &[Complex64], params: &ComplexityParams) -> f64 {
    let d = v.len();
    let row = circulant_from_spectrum(lambda);
    let u = circulant_matrix(&row);
    let scaled: Vec<f64> = u.iter().map(|x| x * params.p * params.t).collect();
    let e = matrix_exp(&scaled, d);
    let y: Vec<f64> = (0..d).map(|r| (0..d).map(|k| e[r * d + k] * v[k]).sum()).collect();
    params.c * l2_norm(&y)
}

/// Closed-form supremum `c·exp(cTp)·‖Σσᵢxᵢ^p‖₂` for one sign vector.
pub fn sup_closed_form(samples: &SampleSet, sigma: &[f64], params: &ComplexityParams) -> f64 {
    let v = signed_sum(samples, sigma, params.p);
    params.c * (params.c * params.t * params.p).exp() * l2_norm(&v)
}

fn signed_sum(samples: &SampleSet, sigma: &[f64], p: f64) -> Vec<f64> {
    let xp = samples.powered(p);
    let d = samples.d;
    let mut v = vec![0.0; d];
    for (i, s) in sigma.iter().enumerate() {
        for (a, b) in v.iter_mut().zip(&xp[i * d..(i + 1) * d]) {
            *a += s * b;
        }
    }
    v
}

/// Random search over circulant `U` with spectrum in the disk `|λ| ≤ c`.
/// Half the trials sample fresh spectra, half perturb the incumbent with a
/// shrinking radius. The supremum over `‖w‖₂ ≤ c` is taken analytically.
pub fn sup_random_search_oracle(
    samples: &SampleSet,
    sigma: &[f64],
    params: &ComplexityParams,
    n_trials: usize,
    seed: u64,
) -> Result<ComplexityEstimate> {
    params.validate()?;
    if sigma.len() != samples.n || sigma.iter().any(|s| s.abs() != 1.0) {
        return Err(Error::invalid("sign vector must have N entries of ±1"));
    }
    let d = samples.d;
    let v = signed_sum(samples, sigma, params.p);
    let mut rng = stream(seed, 0);
    let mut best_lambda = vec![Complex64::new(0.0, 0.0); d];
    let mut best = search_objective(&v, &best_lambda, params);
    for trial in 0..n_trials {
        let candidate = if trial % 2 == 0 || params.c == 0.0 {
            random_spectrum(d, params.c, &mut rng)
        } else {
            let radius = params.c * (1.0 - trial as f64 / n_trials as f64).max(1e-4);
            perturb_spectrum(&best_lambda, params.c, radius, &mut rng)
        };
        let value = search_objective(&v, &candidate, params);
        if value > best {
            best = value;
            best_lambda = candidate;
        }
    }
    Ok(ComplexityEstimate {
        value: best,
        method: EstimateMethod::RandomSearchOracle,
        std_error: 0.0,
    })
}

/// One row of the complexity report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub params: ComplexityParams,
    pub n: usize,
    pub d: usize,
    pub f: ComplexityEstimate,
    pub g: ComplexityEstimate,
    pub ratio: f64,
    pub gbm_z_scores: Vec<f64>,
}

impl ComplexityReport {
    pub const CSV_HEADER: &'static str = "n,d,c,t,p,gamma,f,g,ratio,f_se,max_abs_z";

    pub fn csv_row(&self) -> String {
        let max_z = self.gbm_z_scores.iter().fold(0.0f64, |m, z| m.max(z.abs()));
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.n, self.d, self.params.c, self.params.t, self.params.p, self.params.gamma, self.f.value, self.g.value,
            self.ratio, self.f.std_error, max_z
        )
    }

    pub fn render(&self) -> String {
        let mut s = String::from("[rademacher]\n");
        let _ = writeln!(s, "n = {}\nd = {}", self.n, self.d);
        let _ = writeln!(
            s,
            "c = {}\nt = {}\np = {}\ngamma = {}",
            self.params.c, self.params.t, self.params.p, self.params.gamma
        );
        let _ = writeln!(s, "method = {:?}", self.f.method);
        let _ = writeln!(s, "complexity_f = {}\ncomplexity_g = {}\nratio = {}", self.f.value, self.g.value, self.ratio);
        let _ = writeln!(s, "std_error_f = {}", self.f.std_error);
        for (i, z) in self.gbm_z_scores.iter().enumerate() {
            let _ = writeln!(s, "gbm_z.{i} = {z}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn params(gamma: f64) -> ComplexityParams {
        ComplexityParams {
            c: 1.0,
            t: 1.0,
            p: 0.5,
            gamma,
        }
    }

    #[test]
    fn identity_and_shift_spectra() {
        let (l, _) = dft_eigen_decompose(&[1.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(l.iter().all(|z| (z - Complex64::new(1.0, 0.0)).norm() < 1e-15));
        let (l, _) = dft_eigen_decompose(&[0.0, 1.0, 0.0, 0.0]).unwrap();
        let expect = [(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0)];
        for (z, (re, im)) in l.iter().zip(expect) {
            assert!((z - Complex64::new(re, im)).norm() < 1e-15);
        }
    }

    #[test]
    fn spectrum_round_trip() {
        let mut rng = stream(3, 0);
        let row: Vec<f64> = (0..9).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (l, _) = dft_eigen_decompose(&row).unwrap();
        let back = circulant_from_spectrum(&l);
        for (a, b) in row.iter().zip(&back) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    proptest! {
        #[test]
        fn reconstruction(row in prop::collection::vec(-2.0f64..2.0, 1..=64)) {
            prop_assert!(spectral_reconstruction_error(&row).unwrap() < 1e-10);
        }
    }

    #[test]
    fn sigma_small_cases() {
        let x = SampleSet::new(1, 3, vec![4.0, 9.0, 1.0]).unwrap();
        let e = sigma_expectation(&x, 0.5, SigmaMethod::Enumerate).unwrap();
        assert!((e.value - (4.0f64 + 9.0 + 1.0).sqrt()).abs() < 1e-14);
        let x2 = SampleSet::new(2, 2, vec![2.0, 3.0, 2.0, 3.0]).unwrap();
        let e2 = sigma_expectation(&x2, 0.7, SigmaMethod::Enumerate).unwrap();
        let single = l2_norm(&[2f64.powf(0.7), 3f64.powf(0.7)]);
        assert!((e2.value - single).abs() < 1e-14);
    }

    #[test]
    fn enumeration_matches_brute_force() {
        let mut rng = stream(4, 0);
        let x = SampleSet::random(6, 3, 0.1, 2.0, &mut rng).unwrap();
        let xp = x.powered(0.3);
        let mut total = 0.0;
        for mask in 0..64u32 {
            let mut v = [0.0; 3];
            for i in 0..6 {
                let s = if mask >> i & 1 == 1 { -1.0 } else { 1.0 };
                for k in 0..3 {
                    v[k] += s * xp[i * 3 + k];
                }
            }
            total += l2_norm(&v);
        }
        let e = sigma_expectation(&x, 0.3, SigmaMethod::Enumerate).unwrap();
        assert!((e.value - total / 64.0).abs() < 1e-12);
    }

    #[test]
    fn monte_carlo_agrees_with_enumeration() {
        let x = SampleSet::random(12, 4, 0.1, 3.0, &mut stream(5, 0)).unwrap();
        let exact = sigma_expectation(&x, 0.5, SigmaMethod::Enumerate).unwrap();
        let mc = sigma_expectation(&x, 0.5, SigmaMethod::MonteCarlo { draws: 200_000, seed: 1 }).unwrap();
        assert!((mc.value - exact.value).abs() <= 3.0 * mc.std_error);
    }

    #[test]
    fn monte_carlo_thread_independent() {
        let x = SampleSet::random(25, 2, 0.1, 3.0, &mut stream(6, 0)).unwrap();
        let m = SigmaMethod::Auto { draws: 40_000, seed: 9 };
        let a = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(|| sigma_expectation(&x, 0.5, m).unwrap());
        let b = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap().install(|| sigma_expectation(&x, 0.5, m).unwrap());
        assert_eq!(a, b);
        assert_eq!(a.method, EstimateMethod::ClosedFormMc);
    }

    #[test]
    fn ode_scaling_and_limits() {
        let d = 4;
        let x = SampleSet::new(1, d, vec![1.0 / (d as f64).sqrt().powf(1.0 / 0.5); d]).unwrap();
        let s = sigma_expectation(&x, 0.5, SigmaMethod::Enumerate).unwrap();
        assert!((s.value - 1.0).abs() < 1e-14);
        let p0 = ComplexityParams { t: 0.0, ..params(0.0) };
        assert!((complexity_ode(&x, &p0, &s).unwrap().value - 1.0).abs() < 1e-14);
        let tiny = ComplexityParams { c: 1e-12, ..params(0.0) };
        assert!(complexity_ode(&x, &tiny, &s).unwrap().value < 1e-11);
        let a = complexity_ode(&x, &params(0.0), &s).unwrap().value;
        let b = complexity_ode(&x, &ComplexityParams { t: 2.0, ..params(0.0) }, &s).unwrap().value;
        assert!((b / a - (0.5f64).exp()).abs() < 1e-14);
    }

    #[test]
    fn sde_ratio_and_ordering() {
        let x = SampleSet::random(8, 3, 0.2, 2.0, &mut stream(7, 0)).unwrap();
        let s = sigma_expectation(&x, 0.5, SigmaMethod::Enumerate).unwrap();
        let p = ComplexityParams { t: 2.0, ..params(1.0) };
        let f = complexity_ode(&x, &p, &s).unwrap().value;
        let g = complexity_sde(&x, &p, &s).unwrap().value;
        assert!((g / f - (-0.25f64).exp()).abs() < 1e-15);
        assert!((p.damping() - 0.778_800_783_071_404_9).abs() < 1e-15);
        assert!(g < f);
        let zero = complexity_sde(&x, &params(0.0), &s).unwrap().value;
        assert_eq!(zero, complexity_ode(&x, &params(0.0), &s).unwrap().value);
    }

    #[test]
    fn matrix_exp_of_diagonal_and_rotation() {
        let e = matrix_exp(&[1.0, 0.0, 0.0, -2.0], 2);
        assert!((e[0] - 1f64.exp()).abs() < 1e-13 && (e[3] - (-2f64).exp()).abs() < 1e-14);
        let t = 3.0;
        let r = matrix_exp(&[0.0, -t, t, 0.0], 2);
        assert!((r[0] - t.cos()).abs() < 1e-12 && (r[2] - t.sin()).abs() < 1e-12);
    }

    #[test]
    fn gbm_deterministic_and_martingale() {
        let o = gbm_moment_oracle(2.0, 0.4, 0.0, 1.5, 0.5, 1000, 10, 1).unwrap();
        assert!((o.mc_estimate - o.closed_form).abs() < 1e-12);
        assert!((o.closed_form - 2f64.sqrt() * (0.3f64).exp()).abs() < 1e-12);
        let m = gbm_moment_oracle(1.0, 0.2, 0.5, 1.0, 0.999, 100_000, 20, 2).unwrap();
        assert!((m.closed_form - 0.2f64.exp()).abs() < 1e-3);
        assert!(m.z_score.abs() <= 3.0);
    }

    #[test]
    fn gbm_reference_case() {
        let o = gbm_moment_oracle(1.0, 0.3, 0.8, 1.0, 0.5, 100_000, 50, 3).unwrap();
        assert!(o.z_score.abs() <= 3.0, "z {}", o.z_score);
    }

    #[test]
    fn random_search_bounds() {
        let x = SampleSet::random(4, 4, 0.1, 2.0, &mut stream(8, 0)).unwrap();
        let sigma = [1.0, -1.0, 1.0, 1.0];
        let p = params(0.0);
        let closed = sup_closed_form(&x, &sigma, &p);
        let found = sup_random_search_oracle(&x, &sigma, &p, 10_000, 1).unwrap().value;
        assert!(found <= closed * (1.0 + 1e-9));
        assert!(found >= 0.9 * closed, "{found} vs {closed}");
        let zero = ComplexityParams { c: 0.0, ..p };
        assert_eq!(sup_random_search_oracle(&x, &sigma, &zero, 100, 1).unwrap().value, 0.0);
    }

    #[test]
    fn random_search_one_dimensional_optimum() {
        let x = SampleSet::new(2, 1, vec![0.5, 2.0]).unwrap();
        let sigma = [1.0, 1.0];
        let p = ComplexityParams { c: 1.5, t: 1.0, p: 0.4, gamma: 0.0 };
        let closed = sup_closed_form(&x, &sigma, &p);
        let found = sup_random_search_oracle(&x, &sigma, &p, 10_000, 2).unwrap().value;
        assert!((found - closed).abs() <= 1e-3 * closed);
    }
}
