//! Full-field snapshots, their orthonormal basis, estimated internal waves and the
//! Lippmann-Schwinger data misfit.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::block::{block_cholesky, spectral_truncate, BlockCholesky, BlockMatrix};
use crate::data::DataSeries;
use crate::error::{Error, Result};
use crate::grid::{ArrayGeometry, Medium};
use crate::signal::{HalfPowerPulse, SignalSpec};
use crate::wave::{simulate, PointSource, SimulationConfig};

/// Snapshots `U_w` (`K × nm`, column `j·m + s`), orthonormal basis `V_w` and factor `R_w`.
#[derive(Clone, Debug)]
pub struct SnapshotBasis {
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub chol: BlockCholesky,
    pub h: f64,
}

impl SnapshotBasis {
    pub fn m(&self) -> usize {
        self.chol.m()
    }

    pub fn n(&self) -> usize {
        self.chol.n()
    }

    pub fn r(&self) -> &BlockMatrix {
        self.chol.r()
    }

    /// Block `j` of `U_w`.
    pub fn snapshot(&self, j: usize) -> DMatrix<f64> {
        let m = self.m();
        self.u.columns(j * m, m).into_owned()
    }

    /// `h²·U_wᵀU_w`.
    pub fn gramian(&self) -> DMatrix<f64> {
        self.u.transpose() * &self.u * (self.h * self.h)
    }

    /// `‖h²V_wᵀV_w − I‖_F`.
    pub fn orthonormality_error(&self) -> f64 {
        let dim = self.v.ncols();
        (self.v.transpose() * &self.v * (self.h * self.h) - DMatrix::identity(dim, dim)).norm()
    }

    /// `‖U_w − V_w R_w‖_F / ‖U_w‖_F`.
    pub fn factor_error(&self) -> f64 {
        (&self.v * self.r().matrix() - &self.u).norm() / self.u.norm()
    }
}

/// Symmetrized snapshot fields `u_j(x) = cos(jτ√A) u_0(x)` for `j < count`, one `K × m` block per
/// `j`, from probing `w` with the half-power pulse sampled at `spec.dt`.
pub fn snapshot_fields(
    w: &Medium,
    array: &ArrayGeometry,
    spec: &SignalSpec,
    tau: f64,
    count: usize,
) -> Result<Vec<DMatrix<f64>>> {
    let dt = spec.dt;
    let ratio = tau / dt;
    let q = ratio.round();
    if q < 1.0 || (ratio - q).abs() > 1e-6 * ratio {
        return Err(Error::NonIntegerSubsampling(ratio));
    }
    let q = q as isize;
    let pulse = HalfPowerPulse::new(spec);
    let signal = pulse.sample(dt);
    let kernel = pulse.sample_derivative(dt);
    let l = kernel.center() as isize;
    let g = &kernel.samples;
    let grid = w.grid();
    let k_len = grid.len();
    let nodes = array.flat_nodes(grid);
    let steps = ((count as isize - 1).max(0) * q + 2 * l + 1) as usize;
    let config = SimulationConfig::new(dt, steps);
    let scale: Vec<f64> = w.speed().iter().map(|c| w.c_ref() / c).collect();
    let per_source: Vec<Vec<Vec<f64>>> = nodes
        .par_iter()
        .map(|&node| {
            let mut acc = vec![vec![0.0; k_len]; count];
            simulate(
                w,
                &[PointSource {
                    node,
                    signal: &signal,
                }],
                None,
                None,
                &config,
                |k, p| {
                    let s = k as isize - l;
                    for (j, field) in acc.iter_mut().enumerate() {
                        let shift = j as isize * q;
                        let mut weight = 0.0;
                        for o in [s - shift, s + shift] {
                            if o.abs() <= l {
                                weight += g[(o + l) as usize];
                            }
                        }
                        if weight != 0.0 {
                            let a = -dt * weight;
                            for (f, v) in field.iter_mut().zip(p) {
                                *f += a * v;
                            }
                        }
                    }
                },
            )?;
            for field in acc.iter_mut() {
                for (f, c) in field.iter_mut().zip(&scale) {
                    *f *= c;
                }
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let m = nodes.len();
    Ok((0..count)
        .map(|j| DMatrix::from_fn(k_len, m, |x, s| per_source[s][j][x]))
        .collect())
}

fn stack_blocks(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks.first().map_or(0, |b| b.nrows());
    let m = blocks.first().map_or(0, |b| b.ncols());
    let mut out = DMatrix::zeros(rows, m * blocks.len());
    for (j, b) in blocks.iter().enumerate() {
        out.columns_mut(j * m, m).copy_from(b);
    }
    out
}

/// Orthonormalizes `n` snapshot blocks of `w` by block Cholesky of their Gramian.
pub fn compute_snapshot_basis(
    w: &Medium,
    array: &ArrayGeometry,
    spec: &SignalSpec,
    tau: f64,
    n: usize,
    trunc_tol: f64,
) -> Result<SnapshotBasis> {
    if n == 0 {
        return Err(Error::IndexRange { index: 0, max: 0 });
    }
    let fields = snapshot_fields(w, array, spec, tau, n)?;
    basis_from_snapshots(stack_blocks(&fields), array.m(), w.grid().h, trunc_tol)
}

/// Basis from a stacked snapshot matrix with `m` columns per time block.
pub fn basis_from_snapshots(
    u: DMatrix<f64>,
    m: usize,
    h: f64,
    trunc_tol: f64,
) -> Result<SnapshotBasis> {
    let full = u.ncols();
    let gram = u.transpose() * &u * (h * h);
    let mass = BlockMatrix::from_matrix(gram, m)?;
    let (mass, rank) = spectral_truncate(&mass, trunc_tol);
    if rank < full {
        return Err(Error::DegenerateSnapshots { rank, full });
    }
    let chol = block_cholesky(&mass, trunc_tol)?;
    let v = chol.solve_upper_transpose(&u.transpose()).transpose();
    Ok(SnapshotBasis { u, v, chol, h })
}

/// `u_j^est = V_w·R e_j` for `j < n`, each a `K × m` block.
pub fn estimate_internal_wave(basis: &SnapshotBasis, r_data: &BlockMatrix) -> Result<Vec<DMatrix<f64>>> {
    if r_data.m() != basis.m() || r_data.n() != basis.n() {
        return Err(Error::DimensionMismatch(format!(
            "basis has (n, m) = ({}, {}), R has ({}, {})",
            basis.n(),
            basis.m(),
            r_data.n(),
            r_data.m()
        )));
    }
    let m = basis.m();
    Ok((0..basis.n())
        .into_par_iter()
        .map(|j| &basis.v * r_data.matrix().columns(j * m, m))
        .collect())
}

/// Snapshots `V_w R_w e_j = U_w e_j` of the search medium.
pub fn born_snapshots(basis: &SnapshotBasis) -> Vec<DMatrix<f64>> {
    (0..basis.n()).map(|j| basis.snapshot(j)).collect()
}

/// `max_j ‖h²(u_0)ᵀu_j − D_j‖_F / ‖D_0‖_F` over the given snapshots.
pub fn data_fit_error(snapshots: &[DMatrix<f64>], h: f64, series: &DataSeries) -> f64 {
    let d0 = series.d()[0].norm();
    snapshots
        .iter()
        .zip(series.d())
        .map(|(u, d)| (snapshots[0].transpose() * u * (h * h) - d).norm() / d0)
        .fold(0.0, f64::max)
}

/// Contrast `(c² − w²)/(c·w)` sampled on the grid.
pub fn contrast_field(c: &Medium, w: &Medium) -> Result<DVector<f64>> {
    if c.grid() != w.grid() {
        return Err(Error::DimensionMismatch("media on different grids".into()));
    }
    Ok(DVector::from_iterator(
        c.speed().len(),
        c.speed().iter().zip(w.speed()).map(|(a, b)| (a * a - b * b) / (a * b)),
    ))
}

/// Data residual `D_j − D_j(w)` for `j < n` and the linear map from a contrast field to it.
#[derive(Clone, Debug)]
pub struct LsMisfit {
    pub residual: DVector<f64>,
    pub kernel: DMatrix<f64>,
    pub n: usize,
    pub m: usize,
}

impl LsMisfit {
    pub fn norm(&self) -> f64 {
        self.residual.norm()
    }

    /// Residual predicted by the kernel for a contrast field.
    pub fn predict(&self, contrast: &DVector<f64>) -> DVector<f64> {
        &self.kernel * contrast
    }

    /// Row of entry `(j, r, s)` in the residual stack.
    pub fn row(&self, j: usize, r: usize, s: usize) -> usize {
        (j * self.m + r) * self.m + s
    }
}

/// Discretizes `∫₀^{t_j}∫ κ u^(s) ∂_t u^(r)(·; w)` with the trapezoid rule on the `τ` grid and
/// centered differences of the search snapshots (even at `j = 0`, backward at `j = n − 1`).
pub fn ls_data_misfit(
    u_est: &[DMatrix<f64>],
    basis: &SnapshotBasis,
    measured: &DataSeries,
    search: &DataSeries,
) -> Result<LsMisfit> {
    let (n, m) = (basis.n(), basis.m());
    if u_est.len() != n || measured.n() < n || search.n() < n || measured.m() != m || search.m() != m {
        return Err(Error::DimensionMismatch(
            "snapshots and data series disagree in (n, m)".into(),
        ));
    }
    let tau = measured.tau();
    let born = born_snapshots(basis);
    let k_len = basis.u.nrows();
    let derivative: Vec<DMatrix<f64>> = (0..n)
        .map(|j| {
            if n == 1 || j == 0 {
                DMatrix::zeros(k_len, m)
            } else if j + 1 == n {
                (&born[j] - &born[j - 1]) / tau
            } else {
                (&born[j + 1] - &born[j - 1]) / (2.0 * tau)
            }
        })
        .collect();
    let h2 = basis.h * basis.h;
    let integrand = |j: usize| {
        DMatrix::from_fn(m * m, k_len, |row, x| {
            let (r, s) = (row / m, row % m);
            h2 * u_est[j][(x, s)] * derivative[j][(x, r)]
        })
    };
    let mut kernel = DMatrix::zeros(n * m * m, k_len);
    let mut previous = integrand(0);
    let mut cumulative = DMatrix::zeros(m * m, k_len);
    for j in 1..n {
        let current = integrand(j);
        cumulative += (&previous + &current) * (0.5 * tau);
        kernel.rows_mut(j * m * m, m * m).copy_from(&cumulative);
        previous = current;
    }
    let mut residual = DVector::zeros(n * m * m);
    for j in 0..n {
        let diff = &measured.d()[j] - &search.d()[j];
        for r in 0..m {
            for s in 0..m {
                residual[(j * m + r) * m + s] = diff[(r, s)];
            }
        }
    }
    Ok(LsMisfit {
        residual,
        kernel,
        n,
        m,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_data_series_with, PipelineOptions};
    use crate::grid::{homogeneous_medium, Grid2D};
    use crate::models::camembert;
    use crate::objective::Acquisition;
    use crate::oracle::{discretize_a, oracle_snapshots, oracle_u0};
    use crate::rom::build_rom;

    const TAU: f64 = 0.0435;

    fn setup(n: usize, inclusion: bool) -> (Medium, Acquisition) {
        let g = Grid2D::new(30, 30, 25.0, (0.0, 0.0)).unwrap();
        let arr = ArrayGeometry::linear(&g, 3, 300.0, 100.0).unwrap();
        let c = if inclusion {
            camembert(&g, 3000.0, (360.0, 450.0), 120.0, 3600.0).unwrap()
        } else {
            homogeneous_medium(g, 3000.0).unwrap()
        };
        let spec = SignalSpec::new(6.0, 4.0, 1.0).unwrap();
        let acq = Acquisition::new(arr, spec, TAU, n, PipelineOptions::default()).unwrap();
        (c, acq)
    }

    fn measured(c: &Medium, acq: &Acquisition) -> DataSeries {
        let record = acq.simulate(c, acq.n).unwrap();
        build_data_series_with(&record, &acq.spec, TAU, acq.n, &acq.options).unwrap()
    }

    fn basis(w: &Medium, acq: &Acquisition) -> SnapshotBasis {
        compute_snapshot_basis(w, &acq.array, &acq.spec, TAU, acq.n, 1e-12).unwrap()
    }

    #[test]
    fn snapshots_match_modal_oracle() {
        let (c, acq) = setup(3, true);
        let fields = snapshot_fields(&c, &acq.array, &acq.spec, TAU, 3).unwrap();
        let op = discretize_a(&c).unwrap();
        let u0 = oracle_u0(&op, &acq.array, &acq.spec).unwrap();
        let exact = oracle_snapshots(&op, &u0, TAU, 2);
        for (j, (f, e)) in fields.iter().zip(&exact).enumerate() {
            let f = DMatrix::from_fn(e.nrows(), e.ncols(), |i, s| f[(op.dofs()[i], s)]);
            let err = (&f - e).norm() / e.norm();
            assert!(err < 1e-2, "j = {j}: {err}");
        }
    }

    #[test]
    fn gramian_matches_data() {
        let (c, acq) = setup(3, true);
        let b = basis(&c, &acq);
        let series = measured(&c, &acq);
        let mass = crate::rom::assemble_mass(&series);
        let err = (b.gramian() - mass.matrix()).norm() / mass.norm();
        assert!(err < 1e-2, "{err}");
        assert!(b.factor_error() < 1e-10);
        assert!(b.orthonormality_error() < 1e-8);
    }

    #[test]
    fn orthonormal_on_homogeneous_40() {
        let g = Grid2D::new(40, 40, 25.0, (0.0, 0.0)).unwrap();
        let arr = ArrayGeometry::linear(&g, 3, 400.0, 100.0).unwrap();
        let w = homogeneous_medium(g, 3000.0).unwrap();
        let spec = SignalSpec::new(6.0, 4.0, TAU / 20.0).unwrap();
        let b = compute_snapshot_basis(&w, &arr, &spec, TAU, 4, 1e-12).unwrap();
        assert!(b.orthonormality_error() <= 1e-6 * 12.0);
        for i in 0..4 {
            for j in 0..i {
                assert_eq!(b.r().block(i, j).norm(), 0.0);
            }
        }
    }

    #[test]
    fn single_source_is_normalized_snapshot() {
        let u = DMatrix::from_fn(50, 1, |i, _| (i as f64 * 0.3).sin());
        let b = basis_from_snapshots(u.clone(), 1, 2.0, 1e-12).unwrap();
        let norm = 2.0 * u.norm();
        assert!((b.r().matrix()[(0, 0)] - norm).abs() < 1e-12 * norm);
        assert!((&b.v - &u / norm).norm() < 1e-12);
    }

    #[test]
    fn degenerate_snapshots_are_reported() {
        let col = DMatrix::from_fn(20, 1, |i, _| i as f64);
        let u = DMatrix::from_fn(20, 2, |i, _| col[(i, 0)]);
        assert!(matches!(
            basis_from_snapshots(u, 1, 1.0, 1e-9),
            Err(Error::DegenerateSnapshots { rank: 1, full: 2 })
        ));
    }

    #[test]
    fn estimated_waves_fit_the_data_for_any_search_speed() {
        let (c, acq) = setup(4, true);
        let series = measured(&c, &acq);
        let rom = build_rom(&series, 1e-12).unwrap();
        let w = homogeneous_medium(*c.grid(), 3000.0).unwrap();
        let b = basis(&w, &acq);
        let est = estimate_internal_wave(&b, rom.r()).unwrap();
        assert!(data_fit_error(&est, b.h, &series) < 1e-6);
        let born = born_snapshots(&b);
        assert!(data_fit_error(&born, b.h, &series) > 1e-2);
        let at_truth = basis(&c, &acq);
        let est = estimate_internal_wave(&at_truth, rom.r()).unwrap();
        for (e, u) in est.iter().zip(born_snapshots(&at_truth)) {
            assert!((e - &u).norm() < 2e-2 * u.norm());
        }
    }

    #[test]
    fn ls_kernel_properties() {
        let (c, acq) = setup(3, true);
        let series = measured(&c, &acq);
        let rom = build_rom(&series, 1e-12).unwrap();
        let b = basis(&c, &acq);
        let est = estimate_internal_wave(&b, rom.r()).unwrap();
        let ls = ls_data_misfit(&est, &b, &series, &series).unwrap();
        assert_eq!(ls.norm(), 0.0);
        assert_eq!(ls.kernel.shape(), (27, c.grid().len()));
        assert_eq!(ls.kernel.rows(0, 9).norm(), 0.0);
        let delta = DVector::from_fn(ls.kernel.ncols(), |k, _| (k as f64 * 0.37).cos());
        let r = DVector::from_fn(ls.kernel.nrows(), |k, _| (k as f64 * 1.3).sin());
        let lhs = ls.predict(&delta).dot(&r);
        let rhs = delta.dot(&(ls.kernel.transpose() * &r));
        assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0));
        let bump = |amp: f64| {
            let speed = c.speed().iter().enumerate().map(|(k, v)| {
                let (ix, iy) = c.grid().unflatten(k);
                let r2 = (ix as f64 - 15.0).powi(2) + (iy as f64 - 20.0).powi(2);
                v + amp * (-r2 / 8.0).exp()
            });
            Medium::new(*c.grid(), speed.collect(), 3000.0).unwrap()
        };
        let one = ls.predict(&contrast_field(&bump(10.0), &c).unwrap());
        let two = ls.predict(&contrast_field(&bump(20.0), &c).unwrap());
        assert!(one.norm() > 0.0);
        assert!(((two.norm() / one.norm()) - 2.0).abs() < 0.2);
    }
}
