//! Coarse-grid data series `D_j`, `D̈_j` from array response traces.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::signal::{even_transform, fft_second_derivative_tapered, Waveform};
use crate::signal::{sample_pulse_derivative, SignalSpec};
use crate::wave::ResponseRecord;

/// Default ratio between the coarse step `τ` and the solver step.
pub const DEFAULT_SUBSAMPLE: usize = 20;
/// Default number of extra coarse steps simulated beyond `(2n−1)τ` and used as a taper margin
/// for spectral differentiation.
pub const DEFAULT_TAPER_STEPS: usize = 8;
/// Default spectral-differentiation cutoff `(ω₀ + k·B)/2π`, in bandwidths `k`.
pub const DEFAULT_CUTOFF_BANDWIDTHS: f64 = 6.0;

/// `2n` symmetric `m × m` matrices `D_j` and their second time derivatives `D̈_j`.
#[derive(Clone, Debug, PartialEq)]
pub struct DataSeries {
    d: Vec<DMatrix<f64>>,
    ddot: Vec<DMatrix<f64>>,
    tau: f64,
}

impl DataSeries {
    pub fn new(d: Vec<DMatrix<f64>>, ddot: Vec<DMatrix<f64>>, tau: f64) -> Result<Self> {
        if d.is_empty() || d.len() % 2 != 0 || d.len() != ddot.len() {
            return Err(Error::DimensionMismatch(format!(
                "need 2n matrices in both lists, got {} and {}",
                d.len(),
                ddot.len()
            )));
        }
        let m = d[0].nrows();
        if d.iter().chain(&ddot).any(|x| x.shape() != (m, m)) {
            return Err(Error::DimensionMismatch(
                "matrices must be square and equal size".into(),
            ));
        }
        if !(tau > 0.0) {
            return Err(Error::Config(format!(
                "coarse step must be positive, got {tau}"
            )));
        }
        Ok(Self { d, ddot, tau })
    }

    pub fn d(&self) -> &[DMatrix<f64>] {
        &self.d
    }

    pub fn ddot(&self) -> &[DMatrix<f64>] {
        &self.ddot
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn n(&self) -> usize {
        self.d.len() / 2
    }

    pub fn m(&self) -> usize {
        self.d[0].nrows()
    }

    /// Replaces every matrix by its symmetric part.
    pub fn symmetrize(&mut self) {
        for x in self.d.iter_mut().chain(self.ddot.iter_mut()) {
            let t = x.transpose();
            *x += t;
            *x *= 0.5;
        }
    }

    /// Largest relative asymmetry `‖D_j − D_jᵀ‖/‖D_j‖`.
    pub fn asymmetry(&self) -> f64 {
        self.d
            .iter()
            .map(|x| {
                let n = x.norm();
                if n == 0.0 {
                    0.0
                } else {
                    (x - x.transpose()).norm() / n
                }
            })
            .fold(0.0, f64::max)
    }

    pub fn scale(&mut self, a: f64) {
        for x in self.d.iter_mut().chain(self.ddot.iter_mut()) {
            *x *= a;
        }
    }
}

/// Keeps `D_0..D_{2J−1}`.
pub fn restrict_series(series: &DataSeries, j: usize) -> Result<DataSeries> {
    if j == 0 || j > series.n() {
        return Err(Error::IndexRange {
            index: j,
            max: series.n(),
        });
    }
    Ok(DataSeries {
        d: series.d[..2 * j].to_vec(),
        ddot: series.ddot[..2 * j].to_vec(),
        tau: series.tau,
    })
}

/// Tuning of the trace-to-series transform.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PipelineOptions {
    pub subsample: usize,
    pub taper_steps: usize,
    pub cutoff_bandwidths: f64,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            subsample: DEFAULT_SUBSAMPLE,
            taper_steps: DEFAULT_TAPER_STEPS,
            cutoff_bandwidths: DEFAULT_CUTOFF_BANDWIDTHS,
        }
    }
}

impl PipelineOptions {
    /// Number of fine samples `D_{e,k}`, `k = 0..count`, needed for `2n` coarse samples.
    pub fn fine_count(&self, n: usize) -> usize {
        ((2 * n - 1) + self.taper_steps) * self.subsample + 1
    }

    /// Solver steps from the pulse onset needed by [`build_data_series`].
    pub fn required_steps(&self, spec: &SignalSpec, n: usize) -> usize {
        let l = spec.support_samples();
        self.fine_count(n) + 2 * l
    }
}

/// Applies the even transform `D(t) = M^f(t) + M^f(−t)` to every trace, on the fine grid
/// `t_k = k·dt`, `k = 0..count`.
pub fn map_to_even_data(
    response: &ResponseRecord,
    spec: &SignalSpec,
    count: usize,
) -> Result<Vec<DMatrix<f64>>> {
    let dt = response.dt();
    let kernel = sample_pulse_derivative(&spec.with_dt(dt))?;
    map_to_even_data_with(response, &kernel, count)
}

/// As [`map_to_even_data`] with an explicit derivative kernel.
pub fn map_to_even_data_with(
    response: &ResponseRecord,
    kernel: &Waveform,
    count: usize,
) -> Result<Vec<DMatrix<f64>>> {
    let dt = response.dt();
    let start = response.t0() / dt;
    if (start - start.round()).abs() > 1e-6 || start > 0.5 {
        return Err(Error::InsufficientRecordLength(format!(
            "record must start at or before t = 0 on the sampling grid (t0 = {})",
            response.t0()
        )));
    }
    let start = start.round() as isize;
    let m = response.m();
    let pairs: Vec<(usize, usize)> = (0..m).flat_map(|r| (0..m).map(move |s| (r, s))).collect();
    let columns: Vec<Vec<f64>> = pairs
        .par_iter()
        .map(|&(r, s)| even_transform(response.trace(r, s), start, kernel, count))
        .collect::<Result<_>>()?;
    Ok((0..count)
        .map(|k| DMatrix::from_fn(m, m, |r, s| columns[r * m + s][k]))
        .collect())
}

/// Builds `{D_j, D̈_j}_{j<2n}` from a response recorded from the pulse onset with step `τ/q`.
pub fn build_data_series(
    response: &ResponseRecord,
    spec: &SignalSpec,
    tau: f64,
    n: usize,
) -> Result<DataSeries> {
    let ratio = tau / response.dt();
    let q = ratio.round();
    if q < 1.0 || (ratio - q).abs() > 1e-6 * ratio {
        return Err(Error::NonIntegerSubsampling(ratio));
    }
    let options = PipelineOptions {
        subsample: q as usize,
        ..Default::default()
    };
    build_data_series_with(response, spec, tau, n, &options)
}

pub fn build_data_series_with(
    response: &ResponseRecord,
    spec: &SignalSpec,
    tau: f64,
    n: usize,
    options: &PipelineOptions,
) -> Result<DataSeries> {
    if n == 0 {
        return Err(Error::IndexRange { index: 0, max: 0 });
    }
    let q = options.subsample;
    let dt = tau / q as f64;
    if (dt - response.dt()).abs() > 1e-9 * dt {
        return Err(Error::NonIntegerSubsampling(tau / response.dt()));
    }
    let spec = spec.with_dt(dt);
    let count = options.fine_count(n);
    let onset = (-response.t0() / dt).round().max(0.0) as usize;
    let needed = count + spec.support_samples() + onset;
    let available = response.n_steps();
    if available < needed {
        return Err(Error::RecordTooShort { needed, available });
    }
    let fine = map_to_even_data(response, &spec, count)?;
    let cutoff = spec.band_edge_hz(options.cutoff_bandwidths);
    let fine_ddot = fft_second_derivative_tapered(&fine, dt, cutoff, options.taper_steps * q);
    let d = (0..2 * n).map(|j| fine[j * q].clone()).collect();
    let ddot = (0..2 * n).map(|j| fine_ddot[j * q].clone()).collect();
    let mut series = DataSeries::new(d, ddot, tau)?;
    series.symmetrize();
    Ok(series)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_series(values: &[f64]) -> DataSeries {
        let d: Vec<_> = values
            .iter()
            .map(|&v| DMatrix::from_element(1, 1, v))
            .collect();
        let z = vec![DMatrix::zeros(1, 1); values.len()];
        DataSeries::new(d, z, 0.1).unwrap()
    }

    #[test]
    fn restriction() {
        let s = scalar_series(&[1.0, 0.5, 0.2, 0.1, 0.05, 0.0]);
        assert_eq!(restrict_series(&s, 3).unwrap(), s);
        let r = restrict_series(&s, 1).unwrap();
        assert_eq!(r.d().len(), 2);
        assert_eq!(r.n(), 1);
        assert!(restrict_series(&s, 0).is_err());
        assert!(restrict_series(&s, 4).is_err());
    }

    #[test]
    fn validates_shapes() {
        let d = vec![DMatrix::zeros(2, 2); 3];
        assert!(DataSeries::new(d.clone(), d, 0.1).is_err());
        let d = vec![DMatrix::zeros(2, 2); 4];
        assert!(DataSeries::new(d.clone(), vec![DMatrix::zeros(1, 1); 4], 0.1).is_err());
    }

    #[test]
    fn zero_response_gives_zero_series() {
        let spec = SignalSpec::new(6.0, 4.0, 0.0435 / 20.0).unwrap();
        let opts = PipelineOptions::default();
        let steps = opts.required_steps(&spec, 4);
        let l = spec.support_samples();
        let rec = ResponseRecord::zeros(2, steps, spec.dt, -(l as f64) * spec.dt);
        let s = build_data_series(&rec, &spec, 0.0435, 4).unwrap();
        assert_eq!(s.d().len(), 8);
        assert!(s.d().iter().chain(s.ddot()).all(|x| x.norm() == 0.0));
        let short = ResponseRecord::zeros(2, steps - 1, spec.dt, -(l as f64) * spec.dt);
        assert!(matches!(
            build_data_series(&short, &spec, 0.0435, 4),
            Err(Error::RecordTooShort { .. })
        ));
        assert!(matches!(
            build_data_series(&rec, &spec, 0.0435 * 1.013, 4),
            Err(Error::NonIntegerSubsampling(_))
        ));
    }
}
