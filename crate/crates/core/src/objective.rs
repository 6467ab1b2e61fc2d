//! Misfit functionals over a search medium: FWI, Cholesky-factor, operator-ROM and
//! propagator-ROM objectives.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::data::{build_data_series_with, DataSeries, PipelineOptions};
use crate::error::{Error, Result};
use crate::grid::{ArrayGeometry, Medium};
use crate::rom::{build_rom, RomPair, DEFAULT_TRUNC_TOL};
use crate::signal::{sample_pulse, SignalSpec, Waveform};
use crate::wave::{gather_response_matrix, ResponseRecord, SimulationConfig};

/// Fixed acquisition and processing parameters shared by measured and search data.
#[derive(Clone, Debug)]
pub struct Acquisition {
    pub array: ArrayGeometry,
    pub spec: SignalSpec,
    pub tau: f64,
    pub n: usize,
    pub options: PipelineOptions,
    pub trunc_tol: f64,
}

impl Acquisition {
    /// Sets the fine step of `spec` to `τ/q`.
    pub fn new(
        array: ArrayGeometry,
        spec: SignalSpec,
        tau: f64,
        n: usize,
        options: PipelineOptions,
    ) -> Result<Self> {
        if n == 0 || options.subsample == 0 {
            return Err(Error::Config(
                "n and the subsampling factor must be positive".into(),
            ));
        }
        let spec = spec.with_dt(tau / options.subsample as f64);
        sample_pulse(&spec)?;
        Ok(Self {
            array,
            spec,
            tau,
            n,
            options,
            trunc_tol: DEFAULT_TRUNC_TOL,
        })
    }

    pub fn dt(&self) -> f64 {
        self.spec.dt
    }

    pub fn pulse(&self) -> Waveform {
        sample_pulse(&self.spec).expect("sampling checked at construction")
    }

    /// Solver steps needed for a window of `j` snapshots.
    pub fn steps(&self, j: usize) -> usize {
        self.options.required_steps(&self.spec, j)
    }

    /// Response of `medium` long enough for a window of `j` snapshots.
    pub fn simulate(&self, medium: &Medium, j: usize) -> Result<ResponseRecord> {
        let config = SimulationConfig::new(self.dt(), self.steps(j));
        gather_response_matrix(medium, &self.array, &self.pulse(), &config)
    }

    /// `{D_k, D̈_k}_{k<2j}` from a response.
    pub fn series(&self, record: &ResponseRecord, j: usize) -> Result<DataSeries> {
        build_data_series_with(record, &self.spec, self.tau, j, &self.options)
    }

    /// Sample index of `t = 0` in a record produced by [`Acquisition::simulate`].
    pub fn onset(&self) -> usize {
        self.spec.support_samples()
    }

    /// Fine samples in `[0, (2j − 1)τ]`.
    pub fn fwi_samples(&self, j: usize) -> usize {
        (2 * j - 1) * self.options.subsample + 1
    }
}

/// Selector for the misfit functional.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ObjectiveKind {
    Fwi,
    Chol,
    RomOperator,
    Propagator,
}

impl ObjectiveKind {
    pub const ALL: [ObjectiveKind; 4] = [
        ObjectiveKind::Fwi,
        ObjectiveKind::Chol,
        ObjectiveKind::RomOperator,
        ObjectiveKind::Propagator,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ObjectiveKind::Fwi => "fwi",
            ObjectiveKind::Chol => "chol",
            ObjectiveKind::RomOperator => "rom_op",
            ObjectiveKind::Propagator => "prop",
        }
    }

    fn needs_rom(self) -> bool {
        self != ObjectiveKind::Fwi
    }
}

impl fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ObjectiveKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ObjectiveKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown objective '{s}'")))
    }
}

#[derive(Clone, Debug)]
struct Window {
    series: DataSeries,
    rom: RomPair,
}

/// Measured quantities for every layer-peeling window, plus the active window.
#[derive(Clone, Debug)]
pub struct ObjectiveContext {
    acq: Acquisition,
    record: ResponseRecord,
    windows: Vec<Window>,
    active: usize,
}

impl ObjectiveContext {
    /// Precomputes the measured series and ROMs of every window `J = 1..=n` from a response
    /// covering the full window.
    pub fn from_record(acq: Acquisition, record: ResponseRecord) -> Result<Self> {
        let windows = (1..=acq.n)
            .map(|j| {
                let series = acq.series(&record, j)?;
                let rom = build_rom(&series, acq.trunc_tol)?;
                Ok(Window { series, rom })
            })
            .collect::<Result<Vec<_>>>()?;
        let active = acq.n;
        Ok(Self {
            acq,
            record,
            windows,
            active,
        })
    }

    /// Simulates the measured data in `truth`.
    pub fn from_medium(acq: Acquisition, truth: &Medium) -> Result<Self> {
        let record = acq.simulate(truth, acq.n)?;
        Self::from_record(acq, record)
    }

    pub fn acquisition(&self) -> &Acquisition {
        &self.acq
    }

    pub fn record(&self) -> &ResponseRecord {
        &self.record
    }

    /// Active window `J` (number of snapshots).
    pub fn window(&self) -> usize {
        self.active
    }

    pub fn set_window(&mut self, j: usize) -> Result<()> {
        if j == 0 || j > self.acq.n {
            return Err(Error::IndexRange {
                index: j,
                max: self.acq.n,
            });
        }
        self.active = j;
        Ok(())
    }

    pub fn with_window(mut self, j: usize) -> Result<Self> {
        self.set_window(j)?;
        Ok(self)
    }

    pub fn measured_series(&self) -> &DataSeries {
        &self.windows[self.active - 1].series
    }

    pub fn measured_rom(&self) -> &RomPair {
        &self.windows[self.active - 1].rom
    }

    /// Simulates `w` over the active window, building its ROM when `with_rom` is set.
    pub fn search(&self, w: &Medium, with_rom: bool) -> Result<SearchData> {
        let j = self.active;
        let record = self.acq.simulate(w, j)?;
        let rom = if with_rom {
            let series = self.acq.series(&record, j)?;
            Some(build_rom(&series, self.acq.trunc_tol)?)
        } else {
            None
        };
        Ok(SearchData { record, rom })
    }

    /// Residual vector of `kind` whose squared norm is the objective.
    pub fn residual(&self, kind: ObjectiveKind, w: &Medium) -> Result<DVector<f64>> {
        let data = self.search(w, kind.needs_rom())?;
        self.residual_from(kind, &data)
    }

    pub fn residual_from(&self, kind: ObjectiveKind, data: &SearchData) -> Result<DVector<f64>> {
        let measured = self.measured_rom();
        let flat = |m: DMatrix<f64>| DVector::from_column_slice(m.as_slice());
        match kind {
            ObjectiveKind::Fwi => Ok(self.fwi_residual(&data.record)),
            ObjectiveKind::Chol => {
                let rom = data.rom()?;
                let mut x = rom.chol.solve_upper(measured.r().matrix());
                for i in 0..x.nrows() {
                    x[(i, i)] -= 1.0;
                }
                Ok(flat(x))
            }
            ObjectiveKind::RomOperator => {
                let rom = data.rom()?;
                Ok(flat(measured.a_rom.matrix() - rom.a_rom.matrix()))
            }
            ObjectiveKind::Propagator => {
                let rom = data.rom()?;
                Ok(flat(measured.p_rom.matrix() - rom.p_rom.matrix()))
            }
        }
    }

    /// Trace residuals over `[0, (2J − 1)τ]` weighted by the square roots of the trapezoid
    /// weights, so that their squared norm is the FWI time integral.
    fn fwi_residual(&self, search: &ResponseRecord) -> DVector<f64> {
        let m = self.acq.array.m();
        let count = self.acq.fwi_samples(self.active);
        let onset = self.acq.onset();
        let dt = self.acq.dt();
        let mut out = DVector::zeros(m * m * count);
        let mut idx = 0;
        for r in 0..m {
            for s in 0..m {
                let a = &self.record.trace(r, s)[onset..onset + count];
                let b = &search.trace(r, s)[onset..onset + count];
                for k in 0..count {
                    let w = if k == 0 || k + 1 == count { 0.5 } else { 1.0 };
                    out[idx] = (w * dt).sqrt() * (a[k] - b[k]);
                    idx += 1;
                }
            }
        }
        out
    }

    pub fn objective(&self, kind: ObjectiveKind, w: &Medium) -> Result<f64> {
        Ok(self.residual(kind, w)?.norm_squared())
    }

    /// All requested objectives from one simulation of `w`.
    pub fn evaluate(&self, kinds: &[ObjectiveKind], w: &Medium) -> Result<Vec<f64>> {
        let data = self.search(w, kinds.iter().any(|k| k.needs_rom()))?;
        kinds
            .iter()
            .map(|&k| Ok(self.residual_from(k, &data)?.norm_squared()))
            .collect()
    }
}

/// Simulated response of a search medium and, when requested, its ROM.
#[derive(Clone, Debug)]
pub struct SearchData {
    pub record: ResponseRecord,
    pub rom: Option<RomPair>,
}

impl SearchData {
    fn rom(&self) -> Result<&RomPair> {
        self.rom
            .as_ref()
            .ok_or_else(|| Error::Config("search data was built without a ROM".into()))
    }
}

pub fn fwi_objective(ctx: &ObjectiveContext, w: &Medium) -> Result<f64> {
    ctx.objective(ObjectiveKind::Fwi, w)
}

/// `‖R(w)^{−1}R − I‖_F²`.
pub fn chol_objective(ctx: &ObjectiveContext, w: &Medium) -> Result<f64> {
    ctx.objective(ObjectiveKind::Chol, w)
}

/// `‖A^ROM − A^ROM(w)‖_F²`.
pub fn rom_operator_objective(ctx: &ObjectiveContext, w: &Medium) -> Result<f64> {
    ctx.objective(ObjectiveKind::RomOperator, w)
}

/// `‖P^ROM − P^ROM(w)‖_F²`.
pub fn propagator_misfit(ctx: &ObjectiveContext, w: &Medium) -> Result<f64> {
    ctx.objective(ObjectiveKind::Propagator, w)
}

/// `w = c̄ + β{(1 − α)(c_fwi − c̄) + α(c_true − c̄)}`.
pub fn camembert_family(c_true: &Medium, c_fwi: &Medium, alpha: f64, beta: f64) -> Result<Medium> {
    if c_true.grid() != c_fwi.grid() || c_true.c_ref() != c_fwi.c_ref() {
        return Err(Error::DimensionMismatch(
            "family endpoints must share the grid and reference speed".into(),
        ));
    }
    let c0 = c_true.c_ref();
    let speed = c_true
        .speed()
        .iter()
        .zip(c_fwi.speed())
        .map(|(&c, &f)| c0 + beta * ((1.0 - alpha) * (f - c0) + alpha * (c - c0)))
        .collect();
    Medium::new(*c_true.grid(), speed, c0)
}

/// Cells of a row-major `rows × cols` sweep that are strictly smaller than all eight
/// neighbors; boundary cells and non-finite values never qualify.
pub fn grid_local_minima(values: &[f64], rows: usize, cols: usize) -> Vec<(usize, usize)> {
    assert_eq!(values.len(), rows * cols);
    let at = |i: usize, j: usize| values[i * cols + j];
    let mut out = Vec::new();
    for i in 1..rows.saturating_sub(1) {
        for j in 1..cols.saturating_sub(1) {
            let v = at(i, j);
            if !v.is_finite() {
                continue;
            }
            let is_min = (i - 1..=i + 1)
                .flat_map(|a| (j - 1..=j + 1).map(move |b| (a, b)))
                .filter(|&(a, b)| (a, b) != (i, j))
                .all(|(a, b)| v < at(a, b) || at(a, b).is_nan());
            if is_min {
                out.push((i, j));
            }
        }
    }
    out
}

/// Position of the smallest finite value of a row-major sweep.
pub fn grid_argmin(values: &[f64], cols: usize) -> Option<(usize, usize)> {
    values
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_finite())
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(k, _)| (k / cols, k % cols))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{homogeneous_medium, Grid2D};
    use crate::models::camembert;

    fn small_context() -> (ObjectiveContext, Medium) {
        let g = Grid2D::new(24, 24, 25.0, (0.0, 0.0)).unwrap();
        let array = ArrayGeometry::linear(&g, 2, 200.0, 100.0).unwrap();
        let spec = SignalSpec::new(6.0, 4.0, 1.0).unwrap();
        let opts = PipelineOptions {
            subsample: 10,
            ..Default::default()
        };
        let acq = Acquisition::new(array, spec, 0.0435, 4, opts).unwrap();
        let truth = camembert(&g, 3000.0, (300.0, 380.0), 100.0, 3600.0).unwrap();
        (ObjectiveContext::from_medium(acq, &truth).unwrap(), truth)
    }

    #[test]
    fn objectives_vanish_at_truth() {
        let (ctx, truth) = small_context();
        let values = ctx.evaluate(&ObjectiveKind::ALL, &truth).unwrap();
        assert_eq!(values[0], 0.0);
        assert!(values[1] < 1e-20);
        assert_eq!(&values[2..], &[0.0, 0.0]);
        let c0 = homogeneous_medium(*truth.grid(), 3000.0).unwrap();
        let off = ctx.evaluate(&ObjectiveKind::ALL, &c0).unwrap();
        assert!(off.iter().all(|&v| v > 0.0));
        assert_eq!(off, ctx.evaluate(&ObjectiveKind::ALL, &c0).unwrap());
        assert_eq!(off[1], chol_objective(&ctx, &c0).unwrap());
    }

    #[test]
    fn fwi_is_quadratic_in_the_data() {
        let (ctx, truth) = small_context();
        let c0 = homogeneous_medium(*truth.grid(), 3000.0).unwrap();
        let base = fwi_objective(&ctx, &c0).unwrap();
        let mut doubled = ctx.record().clone();
        doubled.scale(2.0);
        let mut search = ctx.acquisition().simulate(&c0, 4).unwrap();
        search.scale(2.0);
        let ctx2 = ObjectiveContext::from_record(ctx.acquisition().clone(), doubled).unwrap();
        let r = ctx2.fwi_residual(&search);
        assert!((r.norm_squared() / base - 4.0).abs() < 1e-12);
    }

    #[test]
    fn residual_lengths() {
        let (ctx, truth) = small_context();
        let c0 = homogeneous_medium(*truth.grid(), 3000.0).unwrap();
        let nm = 8;
        for kind in [
            ObjectiveKind::Chol,
            ObjectiveKind::RomOperator,
            ObjectiveKind::Propagator,
        ] {
            assert_eq!(ctx.residual(kind, &c0).unwrap().len(), nm * nm);
        }
        let ctx = ctx.with_window(2).unwrap();
        assert_eq!(ctx.residual(ObjectiveKind::Chol, &c0).unwrap().len(), 16);
        assert_eq!(ctx.residual(ObjectiveKind::Fwi, &c0).unwrap().len(), 4 * 31);
    }

    #[test]
    fn family_endpoints() {
        let g = Grid2D::new(10, 10, 20.0, (0.0, 0.0)).unwrap();
        let c = camembert(&g, 3000.0, (100.0, 100.0), 50.0, 3600.0).unwrap();
        let f = camembert(&g, 3000.0, (100.0, 60.0), 40.0, 3300.0).unwrap();
        assert_eq!(camembert_family(&c, &f, 1.0, 1.0).unwrap(), c);
        assert_eq!(camembert_family(&c, &f, 0.0, 1.0).unwrap(), f);
        assert!(camembert_family(&c, &f, 0.3, 0.0).unwrap().is_homogeneous());
        assert!(matches!(
            camembert_family(&c, &f, 1.0, -6.0),
            Err(Error::NonPositiveSpeed(_))
        ));
    }

    #[test]
    fn local_minima_rules() {
        let v = [
            5.0, 5.0, 5.0, 5.0, 5.0, //
            5.0, 1.0, 5.0, 0.5, 5.0, //
            5.0, 5.0, 5.0, 5.0, 5.0, //
            0.0, 5.0, 5.0, 5.0, 5.0,
        ];
        assert_eq!(grid_local_minima(&v, 4, 5), vec![(1, 1), (1, 3)]);
        assert_eq!(grid_argmin(&v, 5), Some((3, 0)));
        let flat = [1.0; 9];
        assert!(grid_local_minima(&flat, 3, 3).is_empty());
    }

    #[test]
    fn kind_names_round_trip() {
        for k in ObjectiveKind::ALL {
            assert_eq!(k.to_string().parse::<ObjectiveKind>().unwrap(), k);
        }
        assert!("wasserstein".parse::<ObjectiveKind>().is_err());
    }
}
