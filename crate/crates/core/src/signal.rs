//! Probing signal, its transforms, and one-dimensional time-axis processing.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

/// Envelope level below which the pulse is truncated.
const SUPPORT_LEVEL: f64 = 1e-12;

/// Gaussian-modulated cosine `f(t) = cos(ω₀t)·exp(−B²t²/2)` sampled at `dt`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SignalSpec {
    pub omega0: f64,
    pub bandwidth: f64,
    pub dt: f64,
    pub half_width: f64,
}

impl SignalSpec {
    pub fn new(f0_hz: f64, bandwidth_hz: f64, dt: f64) -> Result<Self> {
        if !(f0_hz > 0.0 && bandwidth_hz > 0.0 && dt > 0.0) {
            return Err(Error::Config(format!(
                "signal parameters must be positive (f0 = {f0_hz}, B = {bandwidth_hz}, dt = {dt})"
            )));
        }
        let omega0 = 2.0 * PI * f0_hz;
        let bandwidth = 2.0 * PI * bandwidth_hz;
        let half_width = (-2.0 * SUPPORT_LEVEL.ln()).sqrt() / bandwidth;
        Ok(Self {
            omega0,
            bandwidth,
            dt,
            half_width,
        })
    }

    /// Same pulse sampled at a different interval.
    pub fn with_dt(&self, dt: f64) -> Self {
        Self { dt, ..*self }
    }

    pub fn central_frequency_hz(&self) -> f64 {
        self.omega0 / (2.0 * PI)
    }

    /// Low-pass cutoff `(ω₀ + 4B)/2π`.
    pub fn cutoff_hz(&self) -> f64 {
        self.band_edge_hz(4.0)
    }

    /// `(ω₀ + k·B)/2π`.
    pub fn band_edge_hz(&self, k: f64) -> f64 {
        (self.omega0 + k * self.bandwidth) / (2.0 * PI)
    }

    /// Central wavelength `2πc/ω₀`.
    pub fn central_wavelength(&self, c: f64) -> f64 {
        2.0 * PI * c / self.omega0
    }

    /// Number of samples on each side of `t = 0` covering the truncated support.
    pub fn support_samples(&self) -> usize {
        (self.half_width / self.dt).ceil() as usize
    }

    pub fn pulse(&self, t: f64) -> f64 {
        (self.omega0 * t).cos() * (-0.5 * (self.bandwidth * t).powi(2)).exp()
    }

    pub fn pulse_derivative(&self, t: f64) -> f64 {
        let env = (-0.5 * (self.bandwidth * t).powi(2)).exp();
        let (s, c) = (self.omega0 * t).sin_cos();
        -env * (self.omega0 * s + self.bandwidth * self.bandwidth * t * c)
    }

    /// Fourier transform `f̂(ω) = ∫ f(t) e^{iωt} dt`; real and nonnegative.
    pub fn spectrum(&self, omega: f64) -> f64 {
        let b2 = 2.0 * self.bandwidth * self.bandwidth;
        let scale = (2.0 * PI).sqrt() / (2.0 * self.bandwidth);
        scale
            * ((-(omega - self.omega0).powi(2) / b2).exp()
                + (-(omega + self.omega0).powi(2) / b2).exp())
    }

    /// Power spectrum `F̂(ω) = |f̂(ω)|²`.
    pub fn power_spectrum(&self, omega: f64) -> f64 {
        self.spectrum(omega).powi(2)
    }

    /// Closed form of the autocorrelation `F(t) = ∫ f(s) f(s + t) ds`.
    pub fn autocorrelation(&self, t: f64) -> f64 {
        let b = self.bandwidth;
        (PI.sqrt() / (2.0 * b))
            * (-0.25 * (b * t).powi(2)).exp()
            * ((self.omega0 * t).cos() + (-(self.omega0 / b).powi(2)).exp())
    }

    pub fn autocorrelation_half_width(&self) -> f64 {
        2.0 * (-SUPPORT_LEVEL.ln()).sqrt() / self.bandwidth
    }
}

/// Uniformly sampled signal: `samples[k]` is the value at `t0 + k·dt`.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub t0: f64,
    pub dt: f64,
    pub samples: Vec<f64>,
}

impl Waveform {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    /// Sample at integer offset `k` from `t0`, zero outside the stored range.
    pub fn at(&self, k: isize) -> f64 {
        if k < 0 {
            0.0
        } else {
            self.samples.get(k as usize).copied().unwrap_or(0.0)
        }
    }

    /// Index of `t = 0` when the waveform is centered on the origin.
    pub fn center(&self) -> usize {
        (-self.t0 / self.dt).round() as usize
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            samples: vec![0.0; self.len()],
            ..self.clone()
        }
    }
}

fn check_sampling(spec: &SignalSpec) -> Result<()> {
    let per_period = 2.0 * PI / spec.omega0 / spec.dt;
    if per_period < 10.0 {
        return Err(Error::UnderSampled(per_period));
    }
    Ok(())
}

fn sample_symmetric(spec: &SignalSpec, f: impl Fn(f64) -> f64) -> Waveform {
    let l = spec.support_samples() as isize;
    let samples = (-l..=l).map(|k| f(k as f64 * spec.dt)).collect();
    Waveform {
        t0: -(l as f64) * spec.dt,
        dt: spec.dt,
        samples,
    }
}

/// Samples `f(k·dt)` over the symmetric truncated support.
pub fn sample_pulse(spec: &SignalSpec) -> Result<Waveform> {
    check_sampling(spec)?;
    Ok(sample_symmetric(spec, |t| spec.pulse(t)))
}

/// Samples the analytic derivative `f'(k·dt)` over the same support.
pub fn sample_pulse_derivative(spec: &SignalSpec) -> Result<Waveform> {
    check_sampling(spec)?;
    Ok(sample_symmetric(spec, |t| spec.pulse_derivative(t)))
}

/// Discrete autocorrelation `F_k = dt·Σᵢ fᵢ f_{i+k}` computed by zero-padded FFT.
pub fn autocorrelate(signal: &Waveform) -> Waveform {
    let n = signal.len();
    if n == 0 {
        return signal.clone();
    }
    let len = (2 * (2 * n + 1)).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(len);
    let inv = planner.plan_fft_inverse(len);
    let mut buf: Vec<Complex<f64>> = signal
        .samples
        .iter()
        .map(|&x| Complex::new(x, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(len)
        .collect();
    fwd.process(&mut buf);
    for z in buf.iter_mut() {
        *z = Complex::new(z.norm_sqr(), 0.0);
    }
    inv.process(&mut buf);
    let scale = signal.dt / len as f64;
    let lag = |k: isize| buf[k.rem_euclid(len as isize) as usize].re * scale;
    let last = n as isize - 1;
    let samples = (-last..=last).map(|k| 0.5 * (lag(k) + lag(-k))).collect();
    Waveform {
        t0: -(last as f64) * signal.dt,
        dt: signal.dt,
        samples,
    }
}

/// Zero-phase signal `h` with `ĥ(ω) = f̂(ω)^{1/2}`, evaluated by cosine quadrature of its
/// spectrum on a uniform frequency grid.
///
/// The square root of the two-lobe spectrum has branch points on the imaginary frequency axis,
/// so `h` has an exponential rather than Gaussian tail; its support is found numerically.
#[derive(Clone, Debug)]
pub struct HalfPowerPulse {
    spec: SignalSpec,
    omegas: Vec<f64>,
    weights: Vec<f64>,
    half_width: f64,
}

impl HalfPowerPulse {
    pub fn new(spec: &SignalSpec) -> Self {
        let period = 32.0 * spec.half_width;
        let d_omega = 2.0 * PI / period;
        let omega_max = spec.omega0 + 14.0 * spec.bandwidth;
        let count = (omega_max / d_omega).ceil() as usize;
        let mut omegas = Vec::with_capacity(count + 1);
        let mut weights = Vec::with_capacity(count + 1);
        for q in 0..=count {
            let w = q as f64 * d_omega;
            let trap = if q == 0 { 0.5 } else { 1.0 };
            omegas.push(w);
            weights.push(trap * d_omega / PI * spec.spectrum(w).sqrt());
        }
        let mut pulse = Self {
            spec: *spec,
            omegas,
            weights,
            half_width: 0.0,
        };
        let peak = pulse.value(0.0).abs();
        let step = PI / spec.omega0 / 16.0;
        let limit = 0.25 * period;
        let mut t = 0.0;
        let mut last = 0.0;
        while t < limit {
            if pulse.value(t).abs() > SUPPORT_LEVEL * peak {
                last = t;
            }
            t += step;
        }
        pulse.half_width = last + step;
        pulse
    }

    pub fn spec(&self) -> &SignalSpec {
        &self.spec
    }

    /// Time beyond which `|h| < 10⁻¹² h(0)`.
    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn value(&self, t: f64) -> f64 {
        self.omegas
            .iter()
            .zip(&self.weights)
            .map(|(w, a)| a * (w * t).cos())
            .sum()
    }

    pub fn derivative(&self, t: f64) -> f64 {
        -self
            .omegas
            .iter()
            .zip(&self.weights)
            .map(|(w, a)| a * w * (w * t).sin())
            .sum::<f64>()
    }

    fn support_spec(&self, dt: f64) -> SignalSpec {
        SignalSpec {
            dt,
            half_width: self.half_width,
            ..self.spec
        }
    }

    pub fn sample(&self, dt: f64) -> Waveform {
        sample_symmetric(&self.support_spec(dt), |t| self.value(t))
    }

    pub fn sample_derivative(&self, dt: f64) -> Waveform {
        sample_symmetric(&self.support_spec(dt), |t| self.derivative(t))
    }
}

/// Samples the half-power signal at `dt` over the pulse support.
pub fn half_power_signal(spec: &SignalSpec, dt: f64) -> Result<Waveform> {
    check_sampling(&spec.with_dt(dt))?;
    Ok(HalfPowerPulse::new(spec).sample(dt))
}

/// Even data transform of one trace: `D(t_k) = M^f(t_k) + M^f(−t_k)` with
/// `M^f(t) = −dt·Σ_s f'(s − t) M(s)`, for `k = 0..count`.
///
/// `trace` starts at `trace_start·dt` (an integer offset, normally negative) and is zero before it.
/// `kernel` holds `f'` on a symmetric support centered at its middle sample.
pub fn even_transform(
    trace: &[f64],
    trace_start: isize,
    kernel: &Waveform,
    count: usize,
) -> Result<Vec<f64>> {
    let l = kernel.center() as isize;
    let needed = (count as isize - 1) + l - trace_start + 1;
    if count > 0 && needed > trace.len() as isize {
        return Err(Error::InsufficientRecordLength(format!(
            "need {needed} samples from the onset, have {}",
            trace.len()
        )));
    }
    let g = &kernel.samples;
    let dt = kernel.dt;
    let one_sided = |k: isize| -> f64 {
        let mut acc = 0.0;
        for o in -l..=l {
            let idx = k + o - trace_start;
            if idx >= 0 && (idx as usize) < trace.len() {
                acc += g[(o + l) as usize] * trace[idx as usize];
            }
        }
        -dt * acc
    };
    Ok((0..count as isize)
        .map(|k| one_sided(k) + one_sided(-k))
        .collect())
}

/// Maps the frequency index of a length-`len` DFT to angular frequency.
fn angular_frequency(q: usize, len: usize, dt: f64) -> f64 {
    let signed = if q <= len / 2 {
        q as f64
    } else {
        q as f64 - len as f64
    };
    2.0 * PI * signed / (len as f64 * dt)
}

/// Applies a real even frequency response to each entry of an evenly extended matrix series.
///
/// The series `x_0..x_{N-1}` is extended to the period `x_0..x_{N-1}, x_{N-2}..x_1` of length
/// `2N − 2`. When `taper > 0`, the last `taper` samples are rolled off smoothly and `pad` zeros are
/// appended before extension, so the output near the end of the input is not meaningful.
pub fn filter_even_series(
    series: &[DMatrix<f64>],
    dt: f64,
    response: impl Fn(f64) -> f64,
    taper: usize,
    pad: usize,
) -> Vec<DMatrix<f64>> {
    let n = series.len();
    if n == 0 {
        return Vec::new();
    }
    let (rows, cols) = series[0].shape();
    if n == 1 {
        return vec![&series[0] * response(0.0)];
    }
    let weights: Vec<f64> = (0..n).map(|k| taper_weight(k, n, taper)).collect();
    let total = n + pad;
    let period = 2 * total - 2;
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(period);
    let inv = planner.plan_fft_inverse(period);
    let gain: Vec<f64> = (0..period)
        .map(|q| response(angular_frequency(q, period, dt)) / period as f64)
        .collect();
    let mut out = vec![DMatrix::zeros(rows, cols); n];
    let mut buf = vec![Complex::new(0.0, 0.0); period];
    for r in 0..rows {
        for c in 0..cols {
            for z in buf.iter_mut() {
                *z = Complex::new(0.0, 0.0);
            }
            for k in 0..n {
                let v = series[k][(r, c)] * weights[k];
                buf[k] = Complex::new(v, 0.0);
                if k > 0 {
                    buf[period - k] = Complex::new(v, 0.0);
                }
            }
            fwd.process(&mut buf);
            for (z, g) in buf.iter_mut().zip(&gain) {
                *z *= g;
            }
            inv.process(&mut buf);
            for k in 0..n {
                out[k][(r, c)] = buf[k].re;
            }
        }
    }
    out
}

fn taper_weight(k: usize, n: usize, taper: usize) -> f64 {
    if taper == 0 || k + taper < n {
        return 1.0;
    }
    let x = (k + taper + 1 - n) as f64 / (taper + 1) as f64;
    smooth_step(1.0 - x)
}

/// C^∞ transition from 0 at `x ≤ 0` to 1 at `x ≥ 1`.
pub fn smooth_step(x: f64) -> f64 {
    let bump = |y: f64| if y > 0.0 { (-1.0 / y).exp() } else { 0.0 };
    let (a, b) = (bump(x), bump(1.0 - x));
    if a + b == 0.0 {
        0.0
    } else {
        a / (a + b)
    }
}

/// Low-pass indicator `|ω|/2π ≤ cutoff_hz`.
pub fn low_pass(cutoff_hz: f64) -> impl Fn(f64) -> f64 {
    move |w| {
        if w.abs() / (2.0 * PI) <= cutoff_hz {
            1.0
        } else {
            0.0
        }
    }
}

/// Second time derivative of an evenly extended series by low-pass spectral differentiation.
pub fn fft_second_derivative(
    series: &[DMatrix<f64>],
    dt: f64,
    cutoff_hz: f64,
) -> Vec<DMatrix<f64>> {
    let lp = low_pass(cutoff_hz);
    filter_even_series(series, dt, |w| -w * w * lp(w), 0, 0)
}

/// As [`fft_second_derivative`], with a smooth roll-off over the last `taper` samples and
/// zero padding; only the first `series.len() − taper` outputs are accurate.
pub fn fft_second_derivative_tapered(
    series: &[DMatrix<f64>],
    dt: f64,
    cutoff_hz: f64,
    taper: usize,
) -> Vec<DMatrix<f64>> {
    let lp = low_pass(cutoff_hz);
    filter_even_series(series, dt, |w| -w * w * lp(w), taper, series.len())
}
