//! Region-constrained Bayesian optimization of the rotation vector.
//!
//! The surrogate is a noiseless zero-mean GP with a squared-exponential kernel
//! on raw angles. Each iteration builds box regions around the current best
//! point, maximizes expected improvement over them with a multi-start
//! projected quasi-Newton search, evaluates the objective at the winner and
//! conditions the GP on the result.
//!
//! The acquisition search works on `log EI`, which stays finite and smooth
//! far from the data where EI itself underflows.

use std::f64::consts::{PI, SQRT_2};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::geometry::{
    feasible_regions, sample_feasible, validate_rotations, FeasibleRegions, NetworkLayout,
    RotationVector,
};

/// Variances at or below this are treated as exactly zero.
pub const VARIANCE_FLOOR: f64 = 1e-12;
const MAX_JITTER: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoConfig {
    /// `S`; `None` means `2·B·M`.
    pub init_samples: Option<usize>,
    /// `L`
    pub iterations: usize,
    pub jitter: f64,
    pub restarts: usize,
    pub inner_tol: f64,
    pub inner_max_iter: usize,
    pub lengthscale: f64,
    /// Standardize observations before conditioning. Off gives the plain
    /// zero-mean, unit-variance prior on raw rates.
    pub normalize: bool,
}

impl Default for BoConfig {
    fn default() -> Self {
        BoConfig {
            init_samples: None,
            iterations: 100,
            jitter: 1e-8,
            restarts: 10,
            inner_tol: 1e-6,
            inner_max_iter: 200,
            lengthscale: 1.0,
            normalize: false,
        }
    }
}

impl BoConfig {
    pub fn init_samples_for(&self, dim: usize) -> usize {
        self.init_samples.unwrap_or(2 * dim)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(s) = self.init_samples {
            if s < 2 {
                return Err(Error::param("bo.init_samples", format!("must be >= 2, got {s}")));
            }
        }
        if !(self.jitter > 0.0 && self.jitter <= MAX_JITTER) {
            return Err(Error::param(
                "bo.jitter",
                format!("must be in (0, {MAX_JITTER}], got {}", self.jitter),
            ));
        }
        if self.restarts == 0 {
            return Err(Error::param("bo.restarts", "must be >= 1"));
        }
        if !(self.inner_tol > 0.0) {
            return Err(Error::param("bo.inner_tol", "must be > 0"));
        }
        if !(self.lengthscale > 0.0 && self.lengthscale.is_finite()) {
            return Err(Error::param("bo.lengthscale", "must be positive and finite"));
        }
        Ok(())
    }
}

/// `exp(−½‖a − b‖²)`.
pub fn kernel(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(kernel_scaled(a, b, 1.0))
}

pub fn kernel_scaled(a: &[f64], b: &[f64], lengthscale: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-0.5 * d2 / (lengthscale * lengthscale)).exp()
}

/// GP conditioned on every observation so far.
#[derive(Debug, Clone)]
pub struct GpState {
    samples: Vec<Vec<f64>>,
    values: Vec<f64>,
    lengthscale: f64,
    base_jitter: f64,
    jitter: f64,
    chol_l: DMatrix<f64>,
    alpha: DVector<f64>,
    best_index: usize,
    normalize: bool,
    offset: f64,
    scale: f64,
}

impl GpState {
    pub fn new(samples: Vec<Vec<f64>>, values: Vec<f64>, lengthscale: f64, jitter: f64) -> Result<Self> {
        if samples.is_empty() || samples.len() != values.len() {
            return Err(Error::DimensionMismatch {
                expected: samples.len().max(1),
                actual: values.len(),
            });
        }
        let dim = samples[0].len();
        if let Some(bad) = samples.iter().find(|s| s.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: bad.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite observation".into()));
        }
        let mut gp = GpState {
            samples,
            values,
            lengthscale,
            base_jitter: jitter,
            jitter,
            chol_l: DMatrix::zeros(0, 0),
            alpha: DVector::zeros(0),
            best_index: 0,
            normalize: false,
            offset: 0.0,
            scale: 1.0,
        };
        gp.refit()?;
        Ok(gp)
    }

    /// Switches observation standardization on or off and refits.
    pub fn set_normalize(&mut self, on: bool) -> Result<()> {
        self.normalize = on;
        self.refit()
    }

    pub fn push(&mut self, x: Vec<f64>, y: f64) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: x.len(),
            });
        }
        if !y.is_finite() {
            return Err(Error::Numerical("non-finite observation".into()));
        }
        self.samples.push(x);
        self.values.push(y);
        self.refit()
    }

    fn refit(&mut self) -> Result<()> {
        let k = self.kernel_matrix();
        let n = k.nrows();
        let mut jitter = self.base_jitter;
        (self.offset, self.scale) = (0.0, 1.0);
        if self.normalize {
            let n = self.values.len() as f64;
            let mean = self.values.iter().sum::<f64>() / n;
            let var = self.values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            self.offset = mean;
            if var.sqrt() > 0.0 {
                self.scale = var.sqrt();
            }
        }
        let targets = DVector::from_iterator(n, self.values.iter().map(|v| (v - self.offset) / self.scale));
        loop {
            let shifted = &k + DMatrix::identity(n, n) * jitter;
            if let Some(chol) = shifted.cholesky() {
                self.chol_l = chol.l();
                self.alpha = chol.solve(&targets);
                self.jitter = jitter;
                break;
            }
            jitter *= 10.0;
            if jitter > MAX_JITTER * (1.0 + 1e-9) {
                return Err(Error::Numerical(format!(
                    "kernel matrix not positive definite with jitter up to {MAX_JITTER}"
                )));
            }
        }
        // first maximum wins
        self.best_index = self
            .values
            .iter()
            .enumerate()
            .fold(0, |bi, (i, &v)| if v > self.values[bi] { i } else { bi });
        Ok(())
    }

    /// `K_S` without jitter.
    pub fn kernel_matrix(&self) -> DMatrix<f64> {
        let n = self.samples.len();
        let mut k = DMatrix::zeros(n, n);
        for i in 0..n {
            k[(i, i)] = 1.0;
            for j in 0..i {
                let v = kernel_scaled(&self.samples[i], &self.samples[j], self.lengthscale);
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        k
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples[0].len()
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Jitter actually added to the diagonal after escalation.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn lengthscale(&self) -> f64 {
        self.lengthscale
    }

    pub fn best_index(&self) -> usize {
        self.best_index
    }

    pub fn best_value(&self) -> f64 {
        self.values[self.best_index]
    }

    pub fn best_point(&self) -> &[f64] {
        &self.samples[self.best_index]
    }

    fn cross_kernel(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.samples.len(),
            self.samples.iter().map(|s| kernel_scaled(x, s, self.lengthscale)),
        )
    }

    /// Offset and scale applied to observations before conditioning.
    pub fn output_transform(&self) -> (f64, f64) {
        (self.offset, self.scale)
    }

    /// Posterior mean and variance at `x`. The variance is clamped to
    /// `[0, s²]` where `s` is the output scale (1 unless normalizing).
    pub fn posterior(&self, x: &[f64]) -> (f64, f64) {
        let k = self.cross_kernel(x);
        let mean = k.dot(&self.alpha);
        let v = self
            .chol_l
            .solve_lower_triangular(&k)
            .expect("Cholesky factor has a positive diagonal");
        let var = (1.0 - v.norm_squared()).clamp(0.0, 1.0);
        (self.offset + self.scale * mean, self.scale * self.scale * var)
    }

    /// Posterior mean and standard deviation with their gradients in `x`.
    fn posterior_grad(&self, x: &[f64]) -> PosteriorGrad {
        let n = self.samples.len();
        let d = x.len();
        let k = self.cross_kernel(x);
        let mean = k.dot(&self.alpha);
        let v = self
            .chol_l
            .solve_lower_triangular(&k)
            .expect("Cholesky factor has a positive diagonal");
        let var = (1.0 - v.norm_squared()).clamp(0.0, 1.0);
        let w = self
            .chol_l
            .tr_solve_lower_triangular(&v)
            .expect("Cholesky factor has a positive diagonal");
        let inv_l2 = self.scale / (self.lengthscale * self.lengthscale);
        let inv_l2_var = self.scale * inv_l2;
        let mut d_mean = vec![0.0; d];
        // d(ζ²)/dx = −2 Σ w_i dk_i
        let mut d_var = vec![0.0; d];
        for i in 0..n {
            let s = &self.samples[i];
            let ca = -self.alpha[i] * k[i] * inv_l2;
            let cw = 2.0 * w[i] * k[i] * inv_l2_var;
            for j in 0..d {
                let diff = x[j] - s[j];
                d_mean[j] += ca * diff;
                d_var[j] += cw * diff;
            }
        }
        PosteriorGrad {
            mean: self.offset + self.scale * mean,
            var: self.scale * self.scale * var,
            unit_var: var,
            d_mean,
            d_var,
        }
    }
}

struct PosteriorGrad {
    mean: f64,
    var: f64,
    /// variance before output scaling
    unit_var: f64,
    d_mean: Vec<f64>,
    d_var: Vec<f64>,
}

pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}

/// Closed-form EI; zero when `ζ = 0`.
pub fn expected_improvement(mean: f64, std_dev: f64, best: f64) -> f64 {
    if !(std_dev > 0.0) {
        return 0.0;
    }
    let imp = mean - best;
    let z = imp / std_dev;
    imp * normal_cdf(z) + std_dev * normal_pdf(z)
}

/// `log h(z)` and `q = Φ(z)/h(z)` where `h(z) = φ(z) + zΦ(z)`.
fn log_h_and_ratio(z: f64) -> (f64, f64) {
    if z > -5.0 {
        let cdf = normal_cdf(z);
        let h = normal_pdf(z) + z * cdf;
        return (h.ln(), cdf / h);
    }
    // Mills ratio R(x) = 1/(x + t) with t from the continued fraction
    // 1/(x + 2/(x + 3/(x + ...))); then 1 − xR = t/(x + t) without cancellation.
    let x = -z;
    let mut t = 0.0;
    for n in (1..=60).rev() {
        t = n as f64 / (x + t);
    }
    let log_h = -0.5 * z * z - 0.5 * (2.0 * PI).ln() + (t / (x + t)).ln();
    (log_h, 1.0 / t)
}

/// `log EI` and its gradient, `-∞` where the posterior variance vanishes.
fn log_ei_with_grad(gp: &GpState, x: &[f64]) -> (f64, Vec<f64>) {
    let p = gp.posterior_grad(x);
    if p.unit_var <= VARIANCE_FLOOR {
        return (f64::NEG_INFINITY, vec![0.0; x.len()]);
    }
    let std = p.var.sqrt();
    let z = (p.mean - gp.best_value()) / std;
    let (log_h, q) = log_h_and_ratio(z);
    let c_sigma = 1.0 - q * z;
    let grad = p
        .d_mean
        .iter()
        .zip(&p.d_var)
        .map(|(dm, dv)| (q * dm + c_sigma * dv / (2.0 * std)) / std)
        .collect();
    (std.ln() + log_h, grad)
}

/// `log EI` at `x` under `gp`.
pub fn log_expected_improvement(gp: &GpState, x: &[f64]) -> f64 {
    log_ei_with_grad(gp, x).0
}

/// EI at `x` under `gp`.
pub fn acquisition(gp: &GpState, x: &[f64]) -> f64 {
    let (mean, var) = gp.posterior(x);
    if var <= VARIANCE_FLOOR * gp.scale * gp.scale {
        return 0.0;
    }
    expected_improvement(mean, var.sqrt(), gp.best_value())
}

/// Result of one acquisition search.
#[derive(Debug, Clone, PartialEq)]
pub struct AcquisitionMax {
    pub point: Vec<f64>,
    pub log_ei: f64,
    /// Restart that produced `point`.
    pub restart: usize,
}

impl AcquisitionMax {
    pub fn ei(&self) -> f64 {
        self.log_ei.exp()
    }
}

fn projected_gradient(x: &[f64], g: &[f64], regions: &FeasibleRegions) -> Vec<f64> {
    x.iter()
        .zip(g)
        .enumerate()
        .map(|(i, (&xi, &gi))| {
            let (lo, hi) = regions.interval(i);
            if (xi <= lo && gi < 0.0) || (xi >= hi && gi > 0.0) || lo == hi {
                0.0
            } else {
                gi
            }
        })
        .collect()
}

/// Projected BFGS ascent on `log EI` from `x0`.
fn local_ascent(gp: &GpState, regions: &FeasibleRegions, x0: Vec<f64>, tol: f64, max_iter: usize) -> (Vec<f64>, f64) {
    let n = x0.len();
    let mut x = x0;
    regions.project(&mut x);
    let (mut f, mut g) = log_ei_with_grad(gp, &x);
    if !f.is_finite() {
        return (x, f);
    }
    let identity = |scale: f64| DMatrix::<f64>::identity(n, n) * scale;
    let mut h = DMatrix::<f64>::zeros(n, n);
    let mut fresh = true;
    for _ in 0..max_iter {
        let pg = projected_gradient(&x, &g, regions);
        let pg_norm = pg.iter().map(|v| v * v).sum::<f64>().sqrt();
        if pg_norm < tol {
            break;
        }
        if fresh {
            h = identity((1.0 / pg_norm).min(1.0));
        }
        let pgv = DVector::from_column_slice(&pg);
        let mut d: Vec<f64> = (&h * &pgv).iter().copied().collect();
        for i in 0..n {
            if pg[i] == 0.0 {
                d[i] = 0.0;
            }
        }
        let slope: f64 = d.iter().zip(&pg).map(|(a, b)| a * b).sum();
        if !(slope > 0.0) {
            if fresh {
                break;
            }
            fresh = true;
            continue;
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..50 {
            let mut trial: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + step * b).collect();
            regions.project(&mut trial);
            let moved: f64 = trial.iter().zip(&x).zip(&g).map(|((t, a), gi)| (t - a) * gi).sum();
            let (ft, gt) = log_ei_with_grad(gp, &trial);
            if ft.is_finite() && ft >= f + 1e-4 * moved && trial != x {
                accepted = Some((trial, ft, gt));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fnew, gn)) = accepted else {
            if fresh {
                break;
            }
            fresh = true;
            continue;
        };
        // curvature pair for the minimization of −log EI
        let s = DVector::from_iterator(n, xn.iter().zip(&x).map(|(a, b)| a - b));
        let y = DVector::from_iterator(n, g.iter().zip(&gn).map(|(a, b)| a - b));
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() && sy > 0.0 {
            if fresh {
                h = identity(sy / y.norm_squared());
            }
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            h += (&s * s.transpose()) * (rho * (1.0 + rho * yhy))
                - (&hy * s.transpose() + &s * hy.transpose()) * rho;
            fresh = false;
        }
        let gain = fnew - f;
        x = xn;
        f = fnew;
        g = gn;
        if gain.abs() < 1e-14 * (1.0 + f.abs()) {
            break;
        }
    }
    (x, f)
}

/// Multi-start maximization of EI over `regions`.
///
/// `starts` are searched in parallel; the best final `log EI` wins and ties
/// go to the lowest index. If every start has zero EI the first start is
/// returned.
pub fn maximize_acquisition(
    gp: &GpState,
    regions: &FeasibleRegions,
    starts: Vec<Vec<f64>>,
    config: &BoConfig,
) -> AcquisitionMax {
    assert!(!starts.is_empty(), "at least one start point");
    let results: Vec<(Vec<f64>, f64)> = starts
        .into_par_iter()
        .map(|x0| local_ascent(gp, regions, x0, config.inner_tol, config.inner_max_iter))
        .collect();
    let mut best = 0;
    for (i, r) in results.iter().enumerate() {
        if r.1 > results[best].1 {
            best = i;
        }
    }
    let (point, log_ei) = results.into_iter().nth(best).expect("non-empty");
    AcquisitionMax {
        point,
        log_ei,
        restart: best,
    }
}

/// Start points for one iteration: the incumbent nudged off its sample, then
/// uniform draws from the regions.
pub fn restart_points<R: rand::Rng + ?Sized>(
    gp: &GpState,
    regions: &FeasibleRegions,
    restarts: usize,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    let mut first = gp.best_point().to_vec();
    for (i, v) in first.iter_mut().enumerate() {
        *v += if i % 2 == 0 { 1e-3 } else { -1e-3 };
    }
    regions.project(&mut first);
    let mut starts = vec![first];
    for _ in 1..restarts {
        starts.push(regions.sample_uniform(rng));
    }
    starts
}

/// One evaluated point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub rotation: Vec<f64>,
    pub value: f64,
    /// EI at the selected point; absent for the initial samples.
    pub ei: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoOutcome {
    pub best: RotationVector,
    pub value: f64,
    pub trace: Vec<TraceEntry>,
}

impl BoOutcome {
    /// Best value seen after each trace entry.
    pub fn best_so_far(&self) -> Vec<f64> {
        let mut best = f64::NEG_INFINITY;
        self.trace
            .iter()
            .map(|e| {
                best = best.max(e.value);
                best
            })
            .collect()
    }
}

/// Runs the full loop: `S` feasible random draws, then `L` region-constrained
/// EI steps. Every evaluated point is checked against the separation
/// constraints before the objective sees it.
pub fn optimize<F>(mut objective: F, layout: &NetworkLayout, config: &BoConfig, seed: u64) -> Result<BoOutcome>
where
    F: FnMut(&RotationVector) -> Result<f64>,
{
    config.validate()?;
    let b = layout.surfaces_per_ap;
    let m = layout.num_aps();
    let delta = layout.min_separation;
    let dim = layout.rotation_dim();
    let s = config.init_samples_for(dim);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);

    let mut trace = Vec::with_capacity(s + config.iterations);
    let mut points = Vec::with_capacity(s);
    let mut values = Vec::with_capacity(s);
    for i in 0..s {
        let phi = sample_feasible(m, b, delta, &mut rng);
        let value = objective(&phi)?;
        trace.push(TraceEntry {
            iteration: i,
            rotation: phi.as_slice().to_vec(),
            value,
            ei: None,
        });
        points.push(phi.into_vec());
        values.push(value);
    }
    let mut gp = GpState::new(points, values, config.lengthscale, config.jitter)?;
    if config.normalize {
        gp.set_normalize(true)?;
    }

    for l in 0..config.iterations {
        let anchor = RotationVector::new(b, gp.best_point().to_vec())?;
        let regions = feasible_regions(&anchor, delta)?;
        let starts = restart_points(&gp, &regions, config.restarts, &mut rng);
        let found = maximize_acquisition(&gp, &regions, starts, config);
        let phi = RotationVector::canonicalized(b, found.point)?;
        validate_rotations(&phi, delta).map_err(Error::Infeasible)?;
        let value = objective(&phi)?;
        trace.push(TraceEntry {
            iteration: s + l,
            rotation: phi.as_slice().to_vec(),
            value,
            ei: Some(found.log_ei.exp()),
        });
        gp.push(phi.into_vec(), value)?;
    }

    let best = RotationVector::new(b, gp.best_point().to_vec())?;
    Ok(BoOutcome {
        best,
        value: gp.best_value(),
        trace,
    })
}
