//! Reconstruction quality: image correlation and time-reversal refocusing.

use crate::error::{Error, Result};
use crate::grid::{ArrayGeometry, Grid2D, Medium};
use crate::signal::{sample_pulse, SignalSpec, Waveform};
use crate::wave::{simulate, PointSource, SimulationConfig};

/// Axis-aligned region `[x0, x1] × [y0, y1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Region {
    pub x: (f64, f64),
    pub y: (f64, f64),
}

impl Region {
    pub fn contains(&self, p: (f64, f64)) -> bool {
        p.0 >= self.x.0 && p.0 <= self.x.1 && p.1 >= self.y.0 && p.1 <= self.y.1
    }

    /// Flat indices of the grid nodes inside the region.
    pub fn nodes(&self, grid: &Grid2D) -> Vec<usize> {
        (0..grid.len())
            .filter(|&k| {
                let (ix, iy) = grid.unflatten(k);
                self.contains(grid.node_coordinate(ix, iy))
            })
            .collect()
    }
}

/// Pearson correlation of two fields over the listed nodes.
pub fn corr2(a: &[f64], b: &[f64], nodes: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "fields have {} and {} values",
            a.len(),
            b.len()
        )));
    }
    if nodes.is_empty() {
        return Err(Error::DegenerateField);
    }
    let count = nodes.len() as f64;
    let ma = nodes.iter().map(|&k| a[k]).sum::<f64>() / count;
    let mb = nodes.iter().map(|&k| b[k]).sum::<f64>() / count;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for &k in nodes {
        let (da, db) = (a[k] - ma, b[k] - mb);
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::DegenerateField);
    }
    Ok(sab / (saa * sbb).sqrt())
}

/// Correlation of two media on the same grid over a region.
pub fn assess(truth: &Medium, estimate: &Medium, region: &Region) -> Result<f64> {
    if truth.grid() != estimate.grid() {
        return Err(Error::DimensionMismatch("media live on different grids".into()));
    }
    corr2(truth.speed(), estimate.speed(), &region.nodes(truth.grid()))
}

/// Back-propagated field at the refocus instant and its focal metric.
#[derive(Clone, Debug, PartialEq)]
pub struct Refocusing {
    pub field: Vec<f64>,
    pub step: usize,
    pub peak: f64,
    pub off_focus: f64,
    pub focal_metric: f64,
}

/// Time-reversal experiment: a pulse from `source` recorded at the array in `truth` over
/// `duration`, reversed and re-emitted from the array into each of `media`.
#[derive(Clone, Debug)]
pub struct TimeReversal {
    pub source: (f64, f64),
    pub duration: f64,
    pub dt: f64,
    pub spec: SignalSpec,
    /// Radius around the source excluded from the off-focus maximum.
    pub exclusion_radius: f64,
}

impl TimeReversal {
    /// Recorded array traces, indexed from the first step of a simulation whose step `k` is
    /// time `(k − L)·dt`.
    pub fn record(&self, truth: &Medium, array: &ArrayGeometry) -> Result<Vec<Vec<f64>>> {
        let grid = truth.grid();
        let (ix, iy) = grid.snap_to_grid(self.source)?;
        let pulse = sample_pulse(&self.spec.with_dt(self.dt))?;
        let steps = self.total_steps();
        let config = SimulationConfig::new(self.dt, steps);
        let nodes = array.flat_nodes(grid);
        let mut traces = vec![Vec::with_capacity(steps); nodes.len()];
        let src = PointSource {
            node: grid.index(ix, iy),
            signal: &pulse,
        };
        simulate(truth, &[src], None, None, &config, |_, p| {
            for (t, &r) in traces.iter_mut().zip(&nodes) {
                t.push(p[r]);
            }
        })?;
        Ok(traces)
    }

    fn onset(&self) -> usize {
        self.spec.with_dt(self.dt).support_samples()
    }

    fn total_steps(&self) -> usize {
        self.onset() + (self.duration / self.dt).round() as usize + 1
    }

    /// Re-emits the reversed traces into `medium` and measures the refocusing at the source.
    pub fn refocus(&self, medium: &Medium, array: &ArrayGeometry, traces: &[Vec<f64>]) -> Result<Refocusing> {
        let grid = medium.grid();
        let (ix, iy) = grid.snap_to_grid(self.source)?;
        let focus = grid.index(ix, iy);
        let steps = self.total_steps();
        if traces.len() != array.m() || traces.iter().any(|t| t.len() != steps) {
            return Err(Error::DimensionMismatch(format!(
                "expected {} traces of {steps} samples",
                array.m()
            )));
        }
        let reversed: Vec<Waveform> = traces
            .iter()
            .map(|t| Waveform {
                t0: 0.0,
                dt: self.dt,
                samples: t.iter().rev().copied().collect(),
            })
            .collect();
        let sources: Vec<PointSource> = array
            .flat_nodes(grid)
            .into_iter()
            .zip(&reversed)
            .map(|(node, signal)| PointSource { node, signal })
            .collect();
        let nominal = steps - 1 - self.onset();
        let half_window = (0.25 * 2.0 * std::f64::consts::PI / self.spec.omega0 / self.dt).ceil() as usize;
        let first = nominal.saturating_sub(half_window);
        let last = nominal + half_window;
        let config = SimulationConfig::new(self.dt, last + 1);
        let mut best = (0usize, -1.0f64, Vec::new());
        simulate(medium, &sources, None, None, &config, |k, p| {
            if k >= first && p[focus].abs() > best.1 {
                best = (k, p[focus].abs(), p.to_vec());
            }
        })?;
        let (step, peak, field) = best;
        let radius2 = self.exclusion_radius * self.exclusion_radius;
        let off_focus = (0..grid.len())
            .filter(|&k| {
                let (jx, jy) = grid.unflatten(k);
                let (x, y) = grid.node_coordinate(jx, jy);
                (x - self.source.0).powi(2) + (y - self.source.1).powi(2) > radius2
            })
            .fold(0.0f64, |a, k| a.max(field[k].abs()));
        let focal_metric = if off_focus > 0.0 { peak / off_focus } else { 0.0 };
        Ok(Refocusing {
            field,
            step,
            peak,
            off_focus,
            focal_metric,
        })
    }
}
