//! Passive acquisition: damped waves driven by ergodic noise, empirical cross correlations,
//! and the modal statistical correlation.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{DataSeries, PipelineOptions};
use crate::error::{Error, Result};
use crate::grid::{ArrayGeometry, Grid2D, Medium};
use crate::oracle::DenseOperator;
use crate::signal::{filter_even_series, low_pass, sample_pulse, SignalSpec};
use crate::wave::{solve_damped_noise, NoiseField, SimulationConfig};

/// Noise sources with covariance `F(t₁ − t₂)K(y₁)δ(y₁ − y₂)`, `F̂ = |f̂|²` of `spec`.
#[derive(Clone, Debug)]
pub struct NoiseModel {
    pub support: Vec<bool>,
    pub spec: SignalSpec,
    pub amplitude: f64,
    pub seed: u64,
    pub attenuation_time: f64,
}

impl NoiseModel {
    /// Sources everywhere in the grid (`K ≡ 1`).
    pub fn uniform(grid: &Grid2D, spec: SignalSpec, attenuation_time: f64, seed: u64) -> Self {
        Self {
            support: vec![true; grid.len()],
            spec,
            amplitude: 1.0,
            seed,
            attenuation_time,
        }
    }
}

/// Samples per node produced by one overlap-add block.
const NOISE_BLOCK: usize = 4096;

/// Streamed noise: white Gaussian sequences filtered through `f̂ = F̂^{1/2}` by block
/// overlap-add, one independent sequence per supported node.
pub struct FilteredNoise {
    active: Vec<usize>,
    rngs: Vec<ChaCha8Rng>,
    response: Vec<Complex<f64>>,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
    block: Vec<Vec<f64>>,
    tails: Vec<Vec<f64>>,
    taps: usize,
    cursor: usize,
}

impl FilteredNoise {
    fn refill(&mut self) {
        let len = self.response.len();
        let taps = self.taps;
        let (fft, ifft, response) = (&self.fft, &self.ifft, &self.response);
        self.block
            .par_iter_mut()
            .zip(self.tails.par_iter_mut())
            .zip(self.rngs.par_iter_mut())
            .for_each(|((block, tail), rng)| {
                let mut buf = vec![Complex::new(0.0, 0.0); len];
                for z in buf.iter_mut().take(NOISE_BLOCK) {
                    *z = Complex::new(StandardNormal.sample(rng), 0.0);
                }
                fft.process(&mut buf);
                for (z, g) in buf.iter_mut().zip(response) {
                    *z *= g;
                }
                ifft.process(&mut buf);
                for k in 0..NOISE_BLOCK {
                    block[k] = buf[k].re + tail.get(k).copied().unwrap_or(0.0);
                }
                let mut next = vec![0.0; taps - 1];
                for (k, v) in next.iter_mut().enumerate() {
                    let carried = tail.get(NOISE_BLOCK + k).copied().unwrap_or(0.0);
                    *v = buf[NOISE_BLOCK + k].re + carried;
                }
                *tail = next;
            });
        self.cursor = 0;
    }
}

impl NoiseField for FilteredNoise {
    fn fill(&mut self, _step: usize, out: &mut [f64]) {
        if self.cursor == NOISE_BLOCK {
            self.refill();
        }
        out.iter_mut().for_each(|v| *v = 0.0);
        for (&node, block) in self.active.iter().zip(&self.block) {
            out[node] = block[self.cursor];
        }
        self.cursor += 1;
    }
}

/// Noise stream at step `dt`: `S_k = Σ_l (√dt·f_l/h)·z_{k−l}`, so that the discrete covariance
/// tends to `F(t₁ − t₂)δ(y₁ − y₂)`. Node `k` draws from ChaCha stream `k` of the model seed.
pub fn synthesize_noise(model: &NoiseModel, grid: &Grid2D, dt: f64) -> Result<FilteredNoise> {
    if model.support.len() != grid.len() {
        return Err(Error::DimensionMismatch(format!(
            "support has {} nodes, grid has {}",
            model.support.len(),
            grid.len()
        )));
    }
    let pulse = sample_pulse(&model.spec.with_dt(dt))?;
    let gain = model.amplitude * dt.sqrt() / grid.h;
    let taps = pulse.samples.len();
    let len = (NOISE_BLOCK + taps - 1).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(len);
    let ifft = planner.plan_fft_inverse(len);
    let mut response = vec![Complex::new(0.0, 0.0); len];
    for (z, f) in response.iter_mut().zip(&pulse.samples) {
        *z = Complex::new(gain * f / len as f64, 0.0);
    }
    fft.process(&mut response);
    let active: Vec<usize> = (0..grid.len()).filter(|&k| model.support[k]).collect();
    let rngs = active
        .iter()
        .map(|&k| {
            let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
            rng.set_stream(k as u64);
            rng
        })
        .collect();
    let mut noise = FilteredNoise {
        block: vec![vec![0.0; NOISE_BLOCK]; active.len()],
        tails: vec![Vec::new(); active.len()],
        active,
        rngs,
        response,
        fft,
        ifft,
        taps,
        cursor: 0,
    };
    noise.refill();
    Ok(noise)
}

/// Cross correlations `C(k·dt)_{r,r'}` for lags `k = 0..=lag_max`.
#[derive(Clone, Debug, PartialEq)]
pub struct Correlation {
    pub dt: f64,
    pub values: Vec<DMatrix<f64>>,
}

impl Correlation {
    /// Value at a signed lag, using `C(−τ)_{r,r'} = C(τ)_{r',r}`.
    pub fn at(&self, k: isize) -> DMatrix<f64> {
        let v = &self.values[k.unsigned_abs()];
        if k < 0 {
            v.transpose()
        } else {
            v.clone()
        }
    }

    pub fn lag_count(&self) -> usize {
        self.values.len()
    }

    /// Lag-sign average `½(C(τ) + C(−τ))`.
    pub fn even_part(&self) -> Vec<DMatrix<f64>> {
        self.values.iter().map(|v| (v + v.transpose()) * 0.5).collect()
    }
}

/// `C_T(τ, r, r') = (1/T)∫₀ᵀ P(t, x_r) P(t + τ, x_{r'}) dt` by the trapezoid rule.
pub fn empirical_cross_correlation(
    traces: &[Vec<f64>],
    dt: f64,
    samples: usize,
    lag_max: usize,
) -> Result<Correlation> {
    let m = traces.len();
    let needed = samples + lag_max + 1;
    if let Some(short) = traces.iter().find(|t| t.len() < needed) {
        return Err(Error::InsufficientLength {
            needed,
            available: short.len(),
        });
    }
    if samples == 0 {
        return Err(Error::InsufficientLength {
            needed: 2,
            available: 1,
        });
    }
    let period = samples as f64 * dt;
    let values = (0..=lag_max)
        .map(|k| {
            DMatrix::from_fn(m, m, |r, s| {
                let (a, b) = (&traces[r], &traces[s][k..]);
                let inner: f64 = a[1..samples].iter().zip(&b[1..samples]).map(|(x, y)| x * y).sum();
                let ends = 0.5 * (a[0] * b[0] + a[samples] * b[samples]);
                (inner + ends) * dt / period
            })
        })
        .collect();
    Ok(Correlation { dt, values })
}

/// Records the damped response to a noise model: `burn_in` discarded steps followed by
/// `samples + lag_max + 1` recorded steps.
pub fn record_noise_traces(
    model: &NoiseModel,
    medium: &Medium,
    array: &ArrayGeometry,
    dt: f64,
    burn_in: usize,
    recorded: usize,
) -> Result<Vec<Vec<f64>>> {
    let mut noise = synthesize_noise(model, medium.grid(), dt)?;
    let config = SimulationConfig::new(dt, burn_in + recorded);
    let traces = solve_damped_noise(medium, array, model.attenuation_time, &mut noise, &config)?;
    Ok(traces.into_iter().map(|t| t[burn_in..].to_vec()).collect())
}

/// `D_j = −(4/T_a)∂²_τC(jτ)` and `D̈_j = −(4/T_a)∂⁴_τC(jτ)` from correlations on the fine lag grid.
pub fn passive_data_series(
    correlation: &Correlation,
    attenuation_time: f64,
    spec: &SignalSpec,
    tau: f64,
    n: usize,
    options: &PipelineOptions,
) -> Result<DataSeries> {
    let q = options.subsample;
    let dt = correlation.dt;
    if (tau / q as f64 - dt).abs() > 1e-9 * dt {
        return Err(Error::NonIntegerSubsampling(tau / dt));
    }
    let count = options.fine_count(n);
    if correlation.lag_count() < count {
        return Err(Error::InsufficientLength {
            needed: count,
            available: correlation.lag_count(),
        });
    }
    let even = correlation.even_part();
    let even = &even[..count];
    let lp = low_pass(spec.band_edge_hz(options.cutoff_bandwidths));
    let taper = options.taper_steps * q;
    let scale = -4.0 / attenuation_time;
    let second = filter_even_series(even, dt, |w| -w * w * lp(w), taper, count);
    let fourth = filter_even_series(even, dt, |w| w.powi(4) * lp(w), taper, count);
    let d = (0..2 * n).map(|j| &second[j * q] * scale).collect();
    let ddot = (0..2 * n).map(|j| &fourth[j * q] * scale).collect();
    let mut series = DataSeries::new(d, ddot, tau)?;
    series.symmetrize();
    Ok(series)
}

/// Factor matching `‖D_0‖_F` of a passive series to a reference series.
pub fn calibration_factor(passive: &DataSeries, reference: &DataSeries) -> f64 {
    let p = passive.d()[0].norm();
    if p == 0.0 {
        1.0
    } else {
        reference.d()[0].norm() / p
    }
}

/// Gauss-Legendre nodes and weights on `[−1, 1]` from the Jacobi matrix eigendecomposition.
pub fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    let jacobi = DMatrix::from_fn(order, order, |i, j| {
        if i.abs_diff(j) == 1 {
            let k = i.max(j) as f64;
            k / (4.0 * k * k - 1.0).sqrt()
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..order)
        .map(|i| (eig.eigenvalues[i], 2.0 * eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// Modal statistical correlation `C^(1)` and its first two lag derivatives.
#[derive(Clone, Debug)]
pub struct ModalCorrelation {
    pub lags: Vec<f64>,
    pub c: Vec<DMatrix<f64>>,
    pub dc: Vec<DMatrix<f64>>,
    pub d2c: Vec<DMatrix<f64>>,
}

/// Autocorrelation `Γ(u) = ∫ G(s)G(s + u) ds` of the damped modal Green's function
/// `G(t) = H(t)e^{−t/T_a} sin(bt)/b`.
fn green_autocorrelation(u: f64, a: f64, b: f64) -> f64 {
    let u = u.abs();
    let denom = a * a + b * b;
    let alpha = 1.0 / (4.0 * a * denom);
    let beta = 1.0 / (4.0 * b * denom);
    let (s, c) = (b * u).sin_cos();
    (-a * u).exp() * (alpha * c + beta * s)
}

/// `F(t)` and its first two derivatives.
fn autocorrelation_derivatives(spec: &SignalSpec, t: f64) -> [f64; 3] {
    let b = spec.bandwidth;
    let w0 = spec.omega0;
    let amp = std::f64::consts::PI.sqrt() / (2.0 * b);
    let e = (-(w0 / b).powi(2)).exp();
    let g = (-0.25 * (b * t).powi(2)).exp();
    let g1 = -0.5 * b * b * t * g;
    let g2 = (0.25 * b.powi(4) * t * t - 0.5 * b * b) * g;
    let (s, c) = (w0 * t).sin_cos();
    let h = c + e;
    let h1 = -w0 * s;
    let h2 = -w0 * w0 * c;
    [amp * g * h, amp * (g1 * h + g * h1), amp * (g2 * h + 2.0 * g1 * h1 + g * h2)]
}

/// Lag window, quadrature rule and Green's function damping shared by every mode.
struct ModalQuadrature {
    spec: SignalSpec,
    damping: f64,
    width: f64,
    band: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl ModalQuadrature {
    fn new(spec: &SignalSpec, attenuation_time: f64) -> Self {
        let (nodes, weights) = gauss_legendre(16);
        Self {
            spec: *spec,
            damping: 1.0 / attenuation_time,
            width: spec.autocorrelation_half_width(),
            band: spec.omega0 + 8.0 * spec.bandwidth,
            nodes,
            weights,
        }
    }

    /// `(F ⋆ Γ)(τ)` and its first two derivatives for a mode of eigenvalue `θ = b²`.
    fn mode(&self, b: f64, tau: f64) -> [f64; 3] {
        let panel = 2.0 * std::f64::consts::PI / b.max(self.band);
        let (lo, hi) = (tau - self.width, tau + self.width);
        let mut cuts = vec![lo];
        if lo < 0.0 && hi > 0.0 {
            cuts.push(0.0);
        }
        cuts.push(hi);
        let mut acc = [0.0; 3];
        for seg in cuts.windows(2) {
            let count = ((seg[1] - seg[0]) / panel).ceil().max(1.0) as usize;
            let step = (seg[1] - seg[0]) / count as f64;
            for p in 0..count {
                let mid = seg[0] + (p as f64 + 0.5) * step;
                for (x, w) in self.nodes.iter().zip(&self.weights) {
                    let u = mid + 0.5 * step * x;
                    let gamma = green_autocorrelation(u, self.damping, b) * w * 0.5 * step;
                    let f = autocorrelation_derivatives(&self.spec, tau - u);
                    for k in 0..3 {
                        acc[k] += f[k] * gamma;
                    }
                }
            }
        }
        acc
    }
}

/// Evaluates `C^(1)(τ) = Σ_j y_j(x_r)y_j(x_{r'})·(F ⋆ Γ_j)(τ)` with `K ≡ 1`, by composite
/// Gauss-Legendre quadrature split at `u = 0`.
pub fn modal_statistical_correlation(
    op: &DenseOperator,
    array: &ArrayGeometry,
    spec: &SignalSpec,
    attenuation_time: f64,
    lags: &[f64],
) -> Result<ModalCorrelation> {
    if !(attenuation_time > 0.0) {
        return Err(Error::Config("attenuation time must be positive".into()));
    }
    let sensors = op.sensor_dofs(array)?;
    let m = sensors.len();
    let h2 = op.grid().h * op.grid().h;
    let quad = ModalQuadrature::new(spec, attenuation_time);
    let per_mode: Vec<Vec<[f64; 3]>> = (0..op.dim())
        .into_par_iter()
        .map(|j| {
            let b = op.eigvals()[j].sqrt();
            lags.iter().map(|&tau| quad.mode(b, tau)).collect()
        })
        .collect();
    let vecs = op.eigvecs();
    let outers: Vec<DMatrix<f64>> = (0..op.dim())
        .map(|j| {
            let y = DVector::from_iterator(m, sensors.iter().map(|&d| vecs[(d, j)]));
            &y * y.transpose() / h2
        })
        .collect();
    let mut out = ModalCorrelation {
        lags: lags.to_vec(),
        c: Vec::with_capacity(lags.len()),
        dc: Vec::with_capacity(lags.len()),
        d2c: Vec::with_capacity(lags.len()),
    };
    for l in 0..lags.len() {
        let mut mats = [DMatrix::zeros(m, m), DMatrix::zeros(m, m), DMatrix::zeros(m, m)];
        for (values, outer) in per_mode.iter().zip(&outers) {
            for k in 0..3 {
                mats[k] += outer * values[l][k];
            }
        }
        let [c, dc, d2c] = mats;
        out.c.push(c);
        out.dc.push(dc);
        out.d2c.push(d2c);
    }
    Ok(out)
}

/// `max_j ‖(1/T_a)∂²_τC^(1)(jτ) + D_j/4‖_F / ‖D_j/4‖_F` over lags matched to `series`.
pub fn theorem4_error(modal: &ModalCorrelation, attenuation_time: f64, series: &DataSeries) -> f64 {
    let num: f64 = modal
        .d2c
        .iter()
        .zip(series.d())
        .map(|(c, d)| (c / attenuation_time + d / 4.0).norm_squared())
        .sum();
    let den: f64 = series.d().iter().map(|d| (d / 4.0).norm_squared()).sum();
    (num / den).sqrt()
}

/// Averaging lengths and realizations of a Monte Carlo convergence study.
#[derive(Clone, Debug, PartialEq)]
pub struct MonteCarloPlan {
    pub dt: f64,
    pub burn_in: usize,
    pub samples: Vec<usize>,
    pub realizations: usize,
}

impl MonteCarloPlan {
    pub fn durations(&self) -> Vec<f64> {
        self.samples.iter().map(|&s| s as f64 * self.dt).collect()
    }
}

/// Root-mean-square over realizations of the relative error `‖C_T − C^(1)‖/‖C^(1)‖` over lags
/// `k·dt`, for each averaging length of the plan. Realization `i` uses seed `model.seed + i` and
/// one damped simulation long enough for the largest averaging length.
pub fn monte_carlo_convergence(
    model: &NoiseModel,
    medium: &Medium,
    array: &ArrayGeometry,
    modal: &ModalCorrelation,
    plan: &MonteCarloPlan,
) -> Result<Vec<f64>> {
    let (dt, burn_in, samples_list) = (plan.dt, plan.burn_in, &plan.samples);
    let realizations = plan.realizations;
    let lag_max = modal.lags.len() - 1;
    let longest = samples_list.iter().copied().max().unwrap_or(0);
    let reference: f64 = modal.c.iter().map(|c| c.norm_squared()).sum::<f64>().sqrt();
    let runs: Vec<Vec<f64>> = (0..realizations.max(1))
        .into_par_iter()
        .map(|i| {
            let model = NoiseModel {
                seed: model.seed.wrapping_add(i as u64),
                ..model.clone()
            };
            let traces =
                record_noise_traces(&model, medium, array, dt, burn_in, longest + lag_max + 1)?;
            samples_list
                .iter()
                .map(|&samples| {
                    let emp = empirical_cross_correlation(&traces, dt, samples, lag_max)?;
                    let err: f64 = emp
                        .values
                        .iter()
                        .zip(&modal.c)
                        .map(|(a, b)| (a - b).norm_squared())
                        .sum();
                    Ok(err / (reference * reference))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok((0..samples_list.len())
        .map(|t| (runs.iter().map(|r| r[t]).sum::<f64>() / runs.len() as f64).sqrt())
        .collect())
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::homogeneous_medium;
    use crate::oracle::oracle_data_series;

    fn spec() -> SignalSpec {
        SignalSpec::new(6.0, 4.0, 0.0435 / 20.0).unwrap()
    }

    #[test]
    fn gauss_legendre_is_exact_for_polynomials() {
        let (x, w) = gauss_legendre(6);
        for p in 0..12 {
            let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(p)).sum();
            let exact = if p % 2 == 0 { 2.0 / (p as f64 + 1.0) } else { 0.0 };
            assert!((q - exact).abs() < 1e-13, "degree {p}: {q} vs {exact}");
        }
    }

    #[test]
    fn green_autocorrelation_matches_direct_integral() {
        let (a, b) = (0.7, 9.0);
        let g = |t: f64| (-a * t).exp() * (b * t).sin() / b;
        let ds = 1e-4;
        for u in [0.0f64, 0.13, -0.4, 1.1] {
            let direct: f64 = (0..200_000)
                .map(|k| {
                    let s = (k as f64 + 0.5) * ds;
                    g(s) * g(s + u.abs())
                })
                .sum::<f64>()
                * ds;
            let closed = green_autocorrelation(u, a, b);
            assert!((direct - closed).abs() < 1e-6 * closed.abs().max(1e-3), "{u}");
        }
    }

    #[test]
    fn autocorrelation_derivatives_match_finite_differences() {
        let s = spec();
        let e = 1e-5;
        for &t in &[0.0, 0.01, -0.03, 0.07] {
            let [f, f1, f2] = autocorrelation_derivatives(&s, t);
            assert!((f - s.autocorrelation(t)).abs() < 1e-14);
            let fd1 = (s.autocorrelation(t + e) - s.autocorrelation(t - e)) / (2.0 * e);
            let fd2 = (s.autocorrelation(t + e) - 2.0 * f + s.autocorrelation(t - e)) / (e * e);
            assert!((f1 - fd1).abs() < 1e-5 * f1.abs().max(1.0));
            assert!((f2 - fd2).abs() < 1e-3 * f2.abs().max(1.0));
        }
    }

    #[test]
    fn filtered_noise_has_the_pulse_autocorrelation() {
        let g = Grid2D::new(6, 6, 10.0, (0.0, 0.0)).unwrap();
        let s = spec();
        let mut model = NoiseModel::uniform(&g, s, 1.0, 7);
        model.support = (0..g.len()).map(|k| k == 14).collect();
        let mut noise = synthesize_noise(&model, &g, s.dt).unwrap();
        let mut out = vec![0.0; g.len()];
        let mut series = Vec::new();
        for k in 0..60_000 {
            noise.fill(k, &mut out);
            assert!(out.iter().enumerate().all(|(i, v)| i == 14 || *v == 0.0));
            series.push(out[14]);
        }
        let h2 = g.h * g.h;
        for lag in [0usize, 10, 25] {
            let cov: f64 = series.iter().zip(&series[lag..]).map(|(a, b)| a * b).sum::<f64>()
                / (series.len() - lag) as f64;
            let expect = s.autocorrelation(lag as f64 * s.dt) / h2;
            assert!((cov - expect).abs() < 0.05 * s.autocorrelation(0.0) / h2, "lag {lag}");
        }
    }

    #[test]
    fn empty_support_gives_silence() {
        let g = Grid2D::new(6, 6, 10.0, (0.0, 0.0)).unwrap();
        let mut model = NoiseModel::uniform(&g, spec(), 1.0, 1);
        model.support = vec![false; g.len()];
        let mut noise = synthesize_noise(&model, &g, spec().dt).unwrap();
        let mut out = vec![1.0; g.len()];
        for k in 0..10 {
            noise.fill(k, &mut out);
            assert!(out.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn empirical_correlation_of_white_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let traces: Vec<Vec<f64>> = (0..2)
            .map(|_| (0..40_010).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        let c = empirical_cross_correlation(&traces, 1.0, 40_000, 5).unwrap();
        assert!((c.values[0][(0, 0)] - 1.0).abs() < 0.03);
        assert!((c.values[0][(1, 1)] - 1.0).abs() < 0.03);
        assert!(c.values[0][(0, 1)].abs() < 0.03);
        assert!(c.values[3][(0, 0)].abs() < 0.03);
        assert_eq!(c.at(-3), c.values[3].transpose());
        assert!(matches!(
            empirical_cross_correlation(&traces, 1.0, 40_005, 5),
            Err(Error::InsufficientLength { .. })
        ));
    }

    #[test]
    fn negative_lags_swap_receivers() {
        let a: Vec<f64> = (0..50).map(|k| (0.3 * k as f64).sin()).collect();
        let b: Vec<f64> = (0..50).map(|k| (0.17 * k as f64 + 1.0).cos()).collect();
        let lag = 4;
        let fwd = empirical_cross_correlation(&[a.clone(), b.clone()], 0.1, 40, lag).unwrap();
        let direct: f64 = (0..=40)
            .map(|k| {
                let w = if k == 0 || k == 40 { 0.5 } else { 1.0 };
                w * b[k] * a[k + lag]
            })
            .sum::<f64>()
            / 40.0;
        assert!((fwd.at(-(lag as isize))[(0, 1)] - direct).abs() < 1e-12);
    }

    #[test]
    fn single_mode_matches_frequency_form() {
        let s = spec();
        let t_a = 0.8;
        let a = 1.0 / t_a;
        let b = 2.0 * std::f64::consts::PI * 7.0;
        let quad = ModalQuadrature::new(&s, t_a);
        let dw = 1e-3;
        for &tau in &[0.0, 0.05, 0.2] {
            let freq: f64 = (0..400_000)
                .map(|k| {
                    let w = (k as f64 + 0.5) * dw;
                    s.power_spectrum(w) * (w * tau).cos()
                        / ((b * b + a * a - w * w).powi(2) + 4.0 * a * a * w * w)
                })
                .sum::<f64>()
                * dw
                / std::f64::consts::PI;
            let [c, _, _] = quad.mode(b, tau);
            assert!((c - freq).abs() < 1e-6 * freq.abs().max(1e-4), "{tau}: {c} vs {freq}");
        }
    }

    fn small_homogeneous() -> (DenseOperator, ArrayGeometry) {
        let g = Grid2D::new(24, 20, 25.0, (0.0, 0.0)).unwrap();
        let med = homogeneous_medium(g, 3000.0).unwrap();
        let arr = ArrayGeometry::linear(&g, 3, 200.0, 100.0).unwrap();
        (DenseOperator::homogeneous(&med).unwrap(), arr)
    }

    #[test]
    fn modal_correlation_is_even_and_derivative_odd() {
        let (op, arr) = small_homogeneous();
        let lags = [-0.06, 0.06, -0.02, 0.02];
        let c = modal_statistical_correlation(&op, &arr, &spec(), 2.0, &lags).unwrap();
        for p in [0, 2] {
            assert!((&c.c[p] - &c.c[p + 1]).norm() < 1e-9 * c.c[p].norm());
            assert!((&c.dc[p] + &c.dc[p + 1]).norm() < 1e-9 * c.dc[p].norm());
            assert!((&c.d2c[p] - &c.d2c[p + 1]).norm() < 1e-9 * c.d2c[p].norm());
        }
    }

    #[test]
    fn correlation_curvature_tends_to_data() {
        let (op, arr) = small_homogeneous();
        let s = spec();
        let (tau, n) = (0.0435, 4);
        let series = oracle_data_series(&op, &arr, &s, tau, n).unwrap();
        let lags: Vec<f64> = (0..2 * n).map(|j| j as f64 * tau).collect();
        let errors: Vec<f64> = [1.0, 10.0]
            .iter()
            .map(|k| {
                let t_a = k * 100.0 * (2 * n - 1) as f64 * tau;
                let c = modal_statistical_correlation(&op, &arr, &s, t_a, &lags).unwrap();
                theorem4_error(&c, t_a, &series)
            })
            .collect();
        assert!(errors[0] < 0.05, "{errors:?}");
        let ratio = errors[0] / errors[1];
        assert!(ratio > 5.0 && ratio < 20.0, "{errors:?}");
    }

    #[test]
    fn distinct_nodes_are_independent_and_seeded() {
        let g = Grid2D::new(6, 6, 10.0, (0.0, 0.0)).unwrap();
        let s = spec();
        let model = NoiseModel::uniform(&g, s, 1.0, 11);
        let mut a = synthesize_noise(&model, &g, s.dt).unwrap();
        let mut b = synthesize_noise(&model, &g, s.dt).unwrap();
        let (mut oa, mut ob) = (vec![0.0; g.len()], vec![0.0; g.len()]);
        let (mut cross, mut var) = (0.0, 0.0);
        for k in 0..20_000 {
            a.fill(k, &mut oa);
            b.fill(k, &mut ob);
            assert_eq!(oa, ob);
            cross += oa[14] * oa[21];
            var += oa[14] * oa[14];
        }
        assert!(cross.abs() < 0.05 * var);
    }

    #[test]
    fn passive_series_from_the_statistical_correlation_matches_the_data() {
        let (op, arr) = small_homogeneous();
        let s = spec();
        let (tau, n) = (0.0435, 4);
        let options = PipelineOptions::default();
        let dt = tau / options.subsample as f64;
        let t_a = 50.0 * (2 * n - 1) as f64 * tau;
        let lags: Vec<f64> = (0..options.fine_count(n)).map(|k| k as f64 * dt).collect();
        let modal = modal_statistical_correlation(&op, &arr, &s, t_a, &lags).unwrap();
        let corr = Correlation { dt, values: modal.c };
        let passive = passive_data_series(&corr, t_a, &s, tau, n, &options).unwrap();
        let active = oracle_data_series(&op, &arr, &s, tau, n).unwrap();
        let num: f64 = passive.d().iter().zip(active.d()).map(|(p, a)| (p - a).norm_squared()).sum();
        let den: f64 = active.d().iter().map(|a| a.norm_squared()).sum();
        assert!((num / den).sqrt() < 0.1, "{}", (num / den).sqrt());
        let num: f64 =
            passive.ddot().iter().zip(active.ddot()).map(|(p, a)| (p - a).norm_squared()).sum();
        let den: f64 = active.ddot().iter().map(|a| a.norm_squared()).sum();
        assert!((num / den).sqrt() < 0.1, "{}", (num / den).sqrt());
        assert!((calibration_factor(&passive, &active) - 1.0).abs() < 0.1);

        let zero = Correlation { dt, values: vec![DMatrix::zeros(3, 3); lags.len()] };
        let z = passive_data_series(&zero, t_a, &s, tau, n, &options).unwrap();
        assert!(z.d().iter().chain(z.ddot()).all(|d| d.norm() == 0.0));
    }

    #[test]
    fn monte_carlo_curve_is_reproducible() {
        let g = Grid2D::new(12, 12, 25.0, (0.0, 0.0)).unwrap();
        let med = homogeneous_medium(g, 3000.0).unwrap();
        let arr = ArrayGeometry::linear(&g, 2, 100.0, 100.0).unwrap();
        let op = DenseOperator::homogeneous(&med).unwrap();
        let s = spec();
        let lags: Vec<f64> = (0..=20).map(|k| k as f64 * s.dt).collect();
        let modal = modal_statistical_correlation(&op, &arr, &s, 0.1, &lags).unwrap();
        let model = NoiseModel::uniform(&g, s, 0.1, 4);
        let plan = MonteCarloPlan { dt: s.dt, burn_in: 500, samples: vec![20, 4000], realizations: 2 };
        let a = monte_carlo_convergence(&model, &med, &arr, &modal, &plan).unwrap();
        let b = monte_carlo_convergence(&model, &med, &arr, &modal, &plan).unwrap();
        assert_eq!(a, b);
        assert!(a[0] > 0.3, "{a:?}");
        assert!(a[1] < a[0]);
    }

    #[test]
    fn loglog_slope_of_power_law() {
        let x = [1.0, 2.0, 4.0, 8.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(-0.5)).collect();
        assert!((loglog_slope(&x, &y) + 0.5).abs() < 1e-12);
    }
}
