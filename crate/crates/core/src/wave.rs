//! Leapfrog finite-difference solver for the acoustic wave equation with Dirichlet walls.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{ArrayGeometry, Medium};
use crate::signal::Waveform;

const BLOWUP: f64 = 1e100;
const CHECK_EVERY: usize = 128;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimulationConfig {
    pub dt: f64,
    pub n_steps: usize,
    pub record_full_field: bool,
    pub record_stride: usize,
}

impl SimulationConfig {
    pub fn new(dt: f64, n_steps: usize) -> Self {
        Self {
            dt,
            n_steps,
            record_full_field: false,
            record_stride: 20,
        }
    }
}

/// Largest stable time step `h/(c_max √2)`.
pub fn cfl_limit(medium: &Medium) -> f64 {
    medium.grid().h / (medium.c_max() * 2f64.sqrt())
}

pub fn check_cfl(medium: &Medium, dt: f64) -> Result<()> {
    let limit = cfl_limit(medium);
    if !(dt > 0.0) || dt > limit * (1.0 + 1e-12) {
        return Err(Error::CflViolation { dt, limit });
    }
    Ok(())
}

/// Stochastic forcing sampled once per fine step, one value per grid node.
pub trait NoiseField {
    fn fill(&mut self, step: usize, out: &mut [f64]);
}

/// Three-level time stepper holding `p^{k-1}`, `p^k` and scratch for `p^{k+1}`.
pub struct Leapfrog {
    nx: usize,
    ny: usize,
    dt: f64,
    coef: Vec<f64>,
    /// `(1 + dt/T_a)^{-1}`, `1 − dt/T_a`, `(dt/T_a)²`.
    damping: Option<(f64, f64, f64)>,
    prev: Vec<f64>,
    cur: Vec<f64>,
    next: Vec<f64>,
    step: usize,
}

impl Leapfrog {
    pub fn new(medium: &Medium, dt: f64, attenuation_time: Option<f64>) -> Result<Self> {
        check_cfl(medium, dt)?;
        let g = medium.grid();
        let mut coef = vec![0.0; g.len()];
        for ix in 1..g.nx - 1 {
            for iy in 1..g.ny - 1 {
                let k = g.index(ix, iy);
                coef[k] = (medium.speed()[k] * dt / g.h).powi(2);
            }
        }
        let damping = match attenuation_time {
            Some(t_a) if t_a > 0.0 && t_a.is_finite() => {
                let gamma = dt / t_a;
                Some((1.0 / (1.0 + gamma), 1.0 - gamma, gamma * gamma))
            }
            Some(t_a) if !(t_a > 0.0) => {
                return Err(Error::Config(format!(
                    "attenuation time must be positive, got {t_a}"
                )))
            }
            _ => None,
        };
        Ok(Self {
            nx: g.nx,
            ny: g.ny,
            dt,
            coef,
            damping,
            prev: vec![0.0; g.len()],
            cur: vec![0.0; g.len()],
            next: vec![0.0; g.len()],
            step: 0,
        })
    }

    /// Field `p^k` at the current step.
    pub fn field(&self) -> &[f64] {
        &self.cur
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    /// Advances from `p^k` to `p^{k+1}` given the forcing at `t_k`: point terms `(node, value)`
    /// plus an optional dense field. Forcing values are source densities (already scaled by `1/h²`
    /// for point sources).
    pub fn advance(&mut self, points: &[(usize, f64)], dense: Option<&[f64]>) -> Result<()> {
        let ny = self.ny;
        let dt2 = self.dt * self.dt;
        let first = self.step == 0;
        let (half, gain, carry, mass) = match (first, self.damping) {
            (true, _) => (0.5, 1.0, 0.0, 0.0),
            (false, None) => (1.0, 1.0, 1.0, 0.0),
            (false, Some((a, b, e))) => (1.0, a, b, e),
        };
        for ix in 1..self.nx - 1 {
            let base = ix * ny;
            let left = &self.cur[base - ny..base];
            let mid = &self.cur[base..base + ny];
            let right = &self.cur[base + ny..base + 2 * ny];
            let prev = &self.prev[base..base + ny];
            let coef = &self.coef[base..base + ny];
            let out = &mut self.next[base..base + ny];
            for iy in 1..ny - 1 {
                let p = mid[iy];
                let lap = left[iy] + right[iy] + mid[iy - 1] + mid[iy + 1] - 4.0 * p;
                let stencil = coef[iy] * lap - mass * p;
                out[iy] = if first {
                    p + half * stencil
                } else {
                    gain * (2.0 * p - carry * prev[iy] + stencil)
                };
            }
        }
        let scale = half * gain * dt2;
        if let Some(d) = dense {
            for (k, (o, s)) in self.next.iter_mut().zip(d).enumerate() {
                if self.coef[k] != 0.0 {
                    *o += scale * s;
                }
            }
        }
        for &(k, v) in points {
            if self.coef[k] != 0.0 {
                self.next[k] += scale * v;
            }
        }
        std::mem::swap(&mut self.prev, &mut self.cur);
        std::mem::swap(&mut self.cur, &mut self.next);
        self.step += 1;
        if self.step % CHECK_EVERY == 0 {
            self.check_stability()?;
        }
        Ok(())
    }

    fn check_stability(&self) -> Result<()> {
        let bad = self.cur.iter().any(|v| !v.is_finite() || v.abs() > BLOWUP);
        if bad {
            Err(Error::InstabilityDetected(self.step))
        } else {
            Ok(())
        }
    }
}

/// A point source at a flat node index emitting a sampled waveform.
#[derive(Clone, Copy, Debug)]
pub struct PointSource<'a> {
    pub node: usize,
    pub signal: &'a Waveform,
}

fn check_signal(signal: &Waveform, dt: f64) -> Result<()> {
    if (signal.dt - dt).abs() > 1e-12 * dt {
        return Err(Error::DimensionMismatch(format!(
            "signal sampled at {} but solver step is {dt}",
            signal.dt
        )));
    }
    Ok(())
}

/// Runs the solver from rest with the given sources, calling `observer(k, p^k)` for
/// `k = 0..n_steps`. All source waveforms are indexed from the first simulation step.
pub fn simulate<F: FnMut(usize, &[f64])>(
    medium: &Medium,
    sources: &[PointSource<'_>],
    attenuation_time: Option<f64>,
    mut noise: Option<&mut dyn NoiseField>,
    config: &SimulationConfig,
    mut observer: F,
) -> Result<()> {
    for s in sources {
        check_signal(s.signal, config.dt)?;
    }
    let mut solver = Leapfrog::new(medium, config.dt, attenuation_time)?;
    let inv_h2 = 1.0 / (medium.grid().h * medium.grid().h);
    let c_ref = medium.c_ref();
    let speed = medium.speed();
    let mut points = Vec::with_capacity(sources.len());
    let mut dense = noise.as_ref().map(|_| vec![0.0; speed.len()]);
    for k in 0..config.n_steps {
        observer(k, solver.field());
        if k + 1 == config.n_steps {
            break;
        }
        points.clear();
        for s in sources {
            let v = s.signal.at(k as isize);
            if v != 0.0 {
                points.push((s.node, v * inv_h2));
            }
        }
        if let (Some(n), Some(buf)) = (noise.as_deref_mut(), dense.as_mut()) {
            n.fill(k, buf);
            for (b, c) in buf.iter_mut().zip(speed) {
                *b *= c / c_ref;
            }
        }
        solver.advance(&points, dense.as_deref())?;
    }
    Ok(())
}

/// Receiver traces (and optional decimated full fields) from one source.
#[derive(Clone, Debug, Default)]
pub struct PointSourceSolution {
    pub traces: Vec<Vec<f64>>,
    pub snapshots: Vec<Vec<f64>>,
    pub snapshot_steps: Vec<usize>,
}

pub fn solve_point_source(
    medium: &Medium,
    array: &ArrayGeometry,
    source_index: usize,
    signal: &Waveform,
    config: &SimulationConfig,
) -> Result<PointSourceSolution> {
    let nodes = array.flat_nodes(medium.grid());
    let node = *nodes.get(source_index).ok_or(Error::IndexRange {
        index: source_index,
        max: nodes.len().saturating_sub(1),
    })?;
    let mut out = PointSourceSolution {
        traces: vec![Vec::with_capacity(config.n_steps); nodes.len()],
        ..Default::default()
    };
    let stride = config.record_stride.max(1);
    simulate(
        medium,
        &[PointSource { node, signal }],
        None,
        None,
        config,
        |k, p| {
            for (trace, &r) in out.traces.iter_mut().zip(&nodes) {
                trace.push(p[r]);
            }
            if config.record_full_field && k % stride == 0 {
                out.snapshots.push(p.to_vec());
                out.snapshot_steps.push(k);
            }
        },
    )?;
    Ok(out)
}

/// Array response matrix `M(t)`: `traces[r][s][k] = p^(s)(t0 + k·dt, x_r)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ResponseRecord {
    m: usize,
    n_steps: usize,
    dt: f64,
    t0: f64,
    traces: Vec<f64>,
}

impl ResponseRecord {
    pub fn new(m: usize, n_steps: usize, dt: f64, t0: f64, traces: Vec<f64>) -> Result<Self> {
        if traces.len() != m * m * n_steps {
            return Err(Error::DimensionMismatch(format!(
                "{} samples for {m}x{m} traces of length {n_steps}",
                traces.len()
            )));
        }
        Ok(Self {
            m,
            n_steps,
            dt,
            t0,
            traces,
        })
    }

    pub fn zeros(m: usize, n_steps: usize, dt: f64, t0: f64) -> Self {
        Self {
            m,
            n_steps,
            dt,
            t0,
            traces: vec![0.0; m * m * n_steps],
        }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Time of the first sample (the source onset).
    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn trace(&self, r: usize, s: usize) -> &[f64] {
        let start = (r * self.m + s) * self.n_steps;
        &self.traces[start..start + self.n_steps]
    }

    pub fn trace_mut(&mut self, r: usize, s: usize) -> &mut [f64] {
        let start = (r * self.m + s) * self.n_steps;
        &mut self.traces[start..start + self.n_steps]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.traces
    }

    pub fn matrix_at(&self, k: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.m, self.m, |r, s| self.trace(r, s)[k])
    }

    /// Largest `‖M_k − M_kᵀ‖_F / ‖M_k‖_F` over steps whose amplitude exceeds `floor` times the
    /// record maximum.
    pub fn reciprocity_error(&self, floor: f64) -> f64 {
        let peak = self.traces.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        (0..self.n_steps)
            .map(|k| {
                let mk = self.matrix_at(k);
                let norm = mk.norm();
                if norm <= floor * peak * self.m as f64 {
                    0.0
                } else {
                    (&mk - mk.transpose()).norm() / norm
                }
            })
            .fold(0.0, f64::max)
    }

    /// Scales every trace by `a`.
    pub fn scale(&mut self, a: f64) {
        self.traces.iter_mut().for_each(|v| *v *= a);
    }
}

/// Runs one solve per source and gathers the `m × m` response.
pub fn gather_response_matrix(
    medium: &Medium,
    array: &ArrayGeometry,
    signal: &Waveform,
    config: &SimulationConfig,
) -> Result<ResponseRecord> {
    let config = SimulationConfig {
        record_full_field: false,
        ..*config
    };
    let m = array.m();
    let columns: Vec<PointSourceSolution> = (0..m)
        .into_par_iter()
        .map(|s| solve_point_source(medium, array, s, signal, &config))
        .collect::<Result<_>>()?;
    let mut rec = ResponseRecord::zeros(m, config.n_steps, config.dt, signal.t0);
    for (s, col) in columns.iter().enumerate() {
        for (r, trace) in col.traces.iter().enumerate() {
            rec.trace_mut(r, s).copy_from_slice(trace);
        }
    }
    Ok(rec)
}

/// Receiver traces of the damped equation driven by a noise field (started from rest).
pub fn solve_damped_noise(
    medium: &Medium,
    array: &ArrayGeometry,
    attenuation_time: f64,
    noise: &mut dyn NoiseField,
    config: &SimulationConfig,
) -> Result<Vec<Vec<f64>>> {
    let nodes = array.flat_nodes(medium.grid());
    let mut traces = vec![Vec::with_capacity(config.n_steps); nodes.len()];
    simulate(
        medium,
        &[],
        Some(attenuation_time),
        Some(noise),
        config,
        |_, p| {
            for (t, &r) in traces.iter_mut().zip(&nodes) {
                t.push(p[r]);
            }
        },
    )?;
    Ok(traces)
}

/// Discrete energy `½‖(pᵏ⁺¹ − pᵏ)/dt‖² + ½⟨c²∇pᵏ⁺¹, ∇pᵏ⟩` (grid-weighted), conserved by the
/// undamped scheme.
pub fn discrete_energy(medium: &Medium, p0: &[f64], p1: &[f64], dt: f64) -> f64 {
    let g = medium.grid();
    let c = medium.speed();
    let h2 = g.h * g.h;
    let mut kinetic = 0.0;
    let mut potential = 0.0;
    for ix in 1..g.nx - 1 {
        for iy in 1..g.ny - 1 {
            let k = g.index(ix, iy);
            let v = (p1[k] - p0[k]) / dt;
            kinetic += v * v / (c[k] * c[k]);
        }
    }
    for k in 0..g.len() {
        let (ix, iy) = g.unflatten(k);
        if ix + 1 < g.nx {
            let j = g.index(ix + 1, iy);
            potential += (p1[j] - p1[k]) * (p0[j] - p0[k]);
        }
        if iy + 1 < g.ny {
            let j = g.index(ix, iy + 1);
            potential += (p1[j] - p1[k]) * (p0[j] - p0[k]);
        }
    }
    0.5 * h2 * kinetic + 0.5 * potential
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{homogeneous_medium, Grid2D};
    use crate::signal::{sample_pulse, SignalSpec};

    fn setup(n: usize, h: f64) -> (Medium, SignalSpec) {
        let g = Grid2D::new(n, n, h, (0.0, 0.0)).unwrap();
        let m = homogeneous_medium(g, 3000.0).unwrap();
        let spec = SignalSpec::new(6.0, 4.0, 0.0435 / 20.0).unwrap();
        (m, spec)
    }

    #[test]
    fn rejects_unstable_step() {
        let (m, _) = setup(20, 20.0);
        assert!(matches!(
            Leapfrog::new(&m, 0.01, None),
            Err(Error::CflViolation { .. })
        ));
    }

    #[test]
    fn zero_signal_gives_zero_traces() {
        let (m, spec) = setup(30, 20.0);
        let a = ArrayGeometry::linear(m.grid(), 2, 200.0, 200.0).unwrap();
        let f = sample_pulse(&spec).unwrap().zeros_like();
        let sol = solve_point_source(&m, &a, 0, &f, &SimulationConfig::new(spec.dt, 300)).unwrap();
        assert!(sol.traces.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn boundary_stays_zero_and_direct_wave_follows_pulse() {
        let (m, spec) = setup(41, 20.0);
        let a = ArrayGeometry::linear(m.grid(), 1, 0.0, 400.0).unwrap();
        let f = sample_pulse(&spec).unwrap();
        let mut cfg = SimulationConfig::new(spec.dt, 400);
        cfg.record_full_field = true;
        let sol = solve_point_source(&m, &a, 0, &f, &cfg).unwrap();
        let g = m.grid();
        for snap in &sol.snapshots {
            for k in 0..g.len() {
                let (ix, iy) = g.unflatten(k);
                if g.is_boundary(ix, iy) {
                    assert_eq!(snap[k], 0.0);
                }
            }
        }
        let tr = &sol.traces[0];
        let peak = tr
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
            .unwrap()
            .0;
        let t_peak = f.time(peak);
        assert!(t_peak > -0.02 && t_peak < 0.08, "peak at {t_peak}");
    }

    #[test]
    fn travel_time_between_sensors() {
        let g = Grid2D::new(121, 81, 10.0, (0.0, 0.0)).unwrap();
        let m = homogeneous_medium(g, 3000.0).unwrap();
        let spec = SignalSpec::new(6.0, 4.0, 0.0435 / 20.0).unwrap();
        let a = ArrayGeometry::new(&g, vec![(300.0, 400.0), (900.0, 400.0)]).unwrap();
        let f = sample_pulse(&spec).unwrap();
        let sol = solve_point_source(&m, &a, 0, &f, &SimulationConfig::new(spec.dt, 450)).unwrap();
        let own = &sol.traces[0];
        let cross = &sol.traces[1];
        let onset = |tr: &[f64]| {
            let peak = tr.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            tr.iter().position(|v| v.abs() > 0.05 * peak).unwrap()
        };
        let delay = (onset(cross) as f64 - onset(own) as f64) * spec.dt;
        assert!((delay - 0.2).abs() <= 5.0 * spec.dt + 0.01, "delay {delay}");
    }

    #[test]
    fn response_is_reciprocal_and_translation_invariant() {
        let g = Grid2D::new(61, 61, 20.0, (0.0, 0.0)).unwrap();
        let m = homogeneous_medium(g, 3000.0).unwrap();
        let spec = SignalSpec::new(6.0, 4.0, 0.0435 / 20.0).unwrap();
        let a = ArrayGeometry::linear(&g, 3, 400.0, 600.0).unwrap();
        let f = sample_pulse(&spec).unwrap();
        let cfg = SimulationConfig::new(spec.dt, 500);
        let rec = gather_response_matrix(&m, &a, &f, &cfg).unwrap();
        assert!(rec.reciprocity_error(1e-6) <= 1e-6);
        // Sensors sit 600 m from the nearest wall; echoes return after 0.4 s.
        let early = ((0.35 - f.t0) / spec.dt) as usize;
        let (t01, t12) = (rec.trace(0, 1), rec.trace(1, 2));
        let peak = t01.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for k in 0..early {
            assert!((t01[k] - t12[k]).abs() <= 1e-9 * peak);
        }
        let single = ArrayGeometry::linear(&g, 1, 0.0, 600.0).unwrap();
        let one = gather_response_matrix(&m, &single, &f, &cfg).unwrap();
        let direct = solve_point_source(&m, &single, 0, &f, &cfg).unwrap();
        assert_eq!(one.trace(0, 0), direct.traces[0].as_slice());
    }

    #[test]
    fn weak_damping_reproduces_undamped_solution() {
        let (m, spec) = setup(31, 20.0);
        let a = ArrayGeometry::linear(m.grid(), 2, 200.0, 200.0).unwrap();
        let f = sample_pulse(&spec).unwrap();
        let cfg = SimulationConfig::new(spec.dt, 600);
        let reference = solve_point_source(&m, &a, 0, &f, &cfg).unwrap();
        let duration = cfg.n_steps as f64 * cfg.dt;
        let node = a.flat_nodes(m.grid())[0];
        let mut traces = vec![Vec::new(); 2];
        let nodes = a.flat_nodes(m.grid());
        simulate(
            &m,
            &[PointSource { node, signal: &f }],
            Some(1e4 * duration),
            None,
            &cfg,
            |_, p| {
                for (t, &r) in traces.iter_mut().zip(&nodes) {
                    t.push(p[r]);
                }
            },
        )
        .unwrap();
        for (d, u) in traces.iter().zip(&reference.traces) {
            let num: f64 = d.iter().zip(u).map(|(x, y)| (x - y).powi(2)).sum();
            let den: f64 = u.iter().map(|y| y * y).sum();
            assert!((num / den).sqrt() < 1e-3);
        }
    }

    #[test]
    fn damped_energy_decays_exponentially() {
        let (m, spec) = setup(31, 20.0);
        let f = sample_pulse(&spec).unwrap();
        let node = m.grid().index(15, 12);
        let t_a = 1.0;
        let cfg = SimulationConfig::new(spec.dt, 1500);
        let mut fields = Vec::new();
        simulate(
            &m,
            &[PointSource { node, signal: &f }],
            Some(t_a),
            None,
            &cfg,
            |_, p| fields.push(p.to_vec()),
        )
        .unwrap();
        // Energy of the field with velocity (∂_t + 1/T_a)p, which equals e^{-2t/T_a} times a
        // conserved quantity.
        let energy = |k: usize| {
            let (p0, p1) = (&fields[k], &fields[k + 1]);
            let a = 1.0 + 0.5 * spec.dt / t_a;
            let b = 1.0 - 0.5 * spec.dt / t_a;
            let q1: Vec<f64> = p1.iter().map(|v| v * a).collect();
            let q0: Vec<f64> = p0.iter().map(|v| v * b).collect();
            discrete_energy(&m, &q0, &q1, spec.dt).sqrt()
        };
        let off = f.len() + 2;
        let e_off = energy(off);
        for k in (off..cfg.n_steps - 1).step_by(50) {
            let t = (k - off) as f64 * spec.dt;
            assert!(energy(k) <= (-t / t_a).exp() * e_off * 1.01, "step {k}");
        }
    }

    #[test]
    fn undamped_energy_is_conserved() {
        let (m, spec) = setup(25, 20.0);
        let f = sample_pulse(&spec).unwrap();
        let node = m.grid().index(12, 12);
        let cfg = SimulationConfig::new(spec.dt, 900);
        let mut fields = Vec::new();
        simulate(
            &m,
            &[PointSource { node, signal: &f }],
            None,
            None,
            &cfg,
            |_, p| fields.push(p.to_vec()),
        )
        .unwrap();
        let off = f.len() + 2;
        let e0 = discrete_energy(&m, &fields[off], &fields[off + 1], spec.dt);
        let e1 = discrete_energy(&m, &fields[880], &fields[881], spec.dt);
        assert!((e1 - e0).abs() < 1e-10 * e0);
    }
}
