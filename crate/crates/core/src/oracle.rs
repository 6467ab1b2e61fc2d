//! Dense spectral reference: `A_h = C L_h C` on interior nodes and exact functions of it.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::block::sorted_eigen;
use crate::data::DataSeries;
use crate::error::{Error, Result};
use crate::grid::{ArrayGeometry, Grid2D, Medium};
use crate::signal::SignalSpec;

/// Largest number of unknowns accepted by the dense eigensolver.
pub const MAX_DENSE_UNKNOWNS: usize = 4000;

/// `A_h` with its full eigendecomposition. Eigenvectors are Euclidean-orthonormal columns; the
/// continuum-normalized eigenfunctions are `y_j = v_j / h`.
#[derive(Clone, Debug)]
pub struct DenseOperator {
    grid: Grid2D,
    dofs: Vec<usize>,
    dof_of_node: Vec<Option<usize>>,
    matrix: DMatrix<f64>,
    eigvals: DVector<f64>,
    eigvecs: DMatrix<f64>,
}

fn interior_numbering(grid: &Grid2D) -> (Vec<usize>, Vec<Option<usize>>) {
    let mut dofs = Vec::with_capacity(grid.interior_len());
    let mut map = vec![None; grid.len()];
    for ix in 1..grid.nx - 1 {
        for iy in 1..grid.ny - 1 {
            let k = grid.index(ix, iy);
            map[k] = Some(dofs.len());
            dofs.push(k);
        }
    }
    (dofs, map)
}

fn assemble_operator(medium: &Medium, dofs: &[usize], map: &[Option<usize>]) -> DMatrix<f64> {
    let g = medium.grid();
    let c = medium.speed();
    let inv_h2 = 1.0 / (g.h * g.h);
    let k = dofs.len();
    let mut a = DMatrix::zeros(k, k);
    for (i, &node) in dofs.iter().enumerate() {
        let (ix, iy) = g.unflatten(node);
        a[(i, i)] = 4.0 * inv_h2 * c[node] * c[node];
        let neighbors = [
            g.index(ix - 1, iy),
            g.index(ix + 1, iy),
            g.index(ix, iy - 1),
            g.index(ix, iy + 1),
        ];
        for nb in neighbors {
            if let Some(j) = map[nb] {
                a[(i, j)] = -inv_h2 * c[node] * c[nb];
            }
        }
    }
    a
}

/// Dense operator with a numerical eigendecomposition.
pub fn discretize_a(medium: &Medium) -> Result<DenseOperator> {
    let g = *medium.grid();
    let (dofs, map) = interior_numbering(&g);
    if dofs.len() > MAX_DENSE_UNKNOWNS {
        return Err(Error::GridTooLarge(dofs.len()));
    }
    let matrix = assemble_operator(medium, &dofs, &map);
    let (eigvals, eigvecs) = sorted_eigen(matrix.clone());
    Ok(DenseOperator {
        grid: g,
        dofs,
        dof_of_node: map,
        matrix,
        eigvals,
        eigvecs,
    })
}

impl DenseOperator {
    /// Closed-form discrete sine eigenpairs of a homogeneous medium (no size cap).
    pub fn homogeneous(medium: &Medium) -> Result<Self> {
        if !medium.is_homogeneous() {
            return Err(Error::Config(
                "closed-form modes need a homogeneous medium".into(),
            ));
        }
        let g = *medium.grid();
        let c = medium.speed()[0];
        let (dofs, map) = interior_numbering(&g);
        let (px, py) = (g.nx - 1, g.ny - 1);
        let mut modes: Vec<(f64, usize, usize)> = Vec::with_capacity(dofs.len());
        for p in 1..px {
            for q in 1..py {
                let sx = (PI * p as f64 / (2.0 * px as f64)).sin();
                let sy = (PI * q as f64 / (2.0 * py as f64)).sin();
                let theta = c * c * 4.0 / (g.h * g.h) * (sx * sx + sy * sy);
                modes.push((theta, p, q));
            }
        }
        modes.sort_by(|a, b| a.0.total_cmp(&b.0));
        let k = dofs.len();
        let (nx, ny) = (2.0 / px as f64, 2.0 / py as f64);
        let norm = (nx * ny).sqrt();
        let mut eigvecs = DMatrix::zeros(k, k);
        for (col, &(_, p, q)) in modes.iter().enumerate() {
            for (row, &node) in dofs.iter().enumerate() {
                let (ix, iy) = g.unflatten(node);
                eigvecs[(row, col)] = norm
                    * (PI * (p * ix) as f64 / px as f64).sin()
                    * (PI * (q * iy) as f64 / py as f64).sin();
            }
        }
        let eigvals = DVector::from_iterator(k, modes.iter().map(|m| m.0));
        let matrix = assemble_operator(medium, &dofs, &map);
        Ok(Self {
            grid: g,
            dofs,
            dof_of_node: map,
            matrix,
            eigvals,
            eigvecs,
        })
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn eigvals(&self) -> &DVector<f64> {
        &self.eigvals
    }

    pub fn eigvecs(&self) -> &DMatrix<f64> {
        &self.eigvecs
    }

    pub fn dim(&self) -> usize {
        self.dofs.len()
    }

    /// Flat grid index of every unknown.
    pub fn dofs(&self) -> &[usize] {
        &self.dofs
    }

    /// Unknown index of each sensor node.
    pub fn sensor_dofs(&self, array: &ArrayGeometry) -> Result<Vec<usize>> {
        array
            .flat_nodes(&self.grid)
            .into_iter()
            .map(|k| {
                self.dof_of_node[k]
                    .ok_or_else(|| Error::InvalidArray("sensor is not on an interior node".into()))
            })
            .collect()
    }

    /// `φ(A_h) = V diag(φ(θ)) Vᵀ`.
    pub fn apply_function(&self, phi: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let weights = self.eigvals.map(phi);
        let mut scaled = self.eigvecs.clone();
        for (j, w) in weights.iter().enumerate() {
            scaled.column_mut(j).scale_mut(*w);
        }
        scaled * self.eigvecs.transpose()
    }

    /// `cos(t √A_h)`.
    pub fn cos_sqrt(&self, t: f64) -> DMatrix<f64> {
        self.apply_function(|theta| (t * theta.sqrt()).cos())
    }

    /// Expands a grid field over the interior unknowns into a full grid vector (zero on walls).
    pub fn to_grid(&self, values: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.len()];
        for (&k, v) in self.dofs.iter().zip(values) {
            out[k] = *v;
        }
        out
    }

    /// Restricts a full grid field to the interior unknowns.
    pub fn from_grid(&self, field: &[f64]) -> Vec<f64> {
        self.dofs.iter().map(|&k| field[k]).collect()
    }
}

/// `u_0^(s) = φ(√A) δ_s` with `δ_s = e_s/h²`, for a given spectral filter.
pub fn oracle_u0_with(
    op: &DenseOperator,
    array: &ArrayGeometry,
    filter: impl Fn(f64) -> f64,
) -> Result<DMatrix<f64>> {
    let sensors = op.sensor_dofs(array)?;
    let h2 = op.grid.h * op.grid.h;
    let k = op.dim();
    let weights = op.eigvals.map(|t| filter(t.sqrt()));
    let mut out = DMatrix::zeros(k, sensors.len());
    for (s, &dof) in sensors.iter().enumerate() {
        let coeff =
            DVector::from_iterator(k, (0..k).map(|j| weights[j] * op.eigvecs[(dof, j)] / h2));
        out.set_column(s, &(&op.eigvecs * coeff));
    }
    Ok(out)
}

/// `u_0^(s) = |f̂(√A)| δ_s`, one column per sensor.
pub fn oracle_u0(
    op: &DenseOperator,
    array: &ArrayGeometry,
    spec: &SignalSpec,
) -> Result<DMatrix<f64>> {
    oracle_u0_with(op, array, |w| spec.spectrum(w).abs())
}

/// `u_j = cos(jτ√A) u_0` for `j = 0..=n_max`.
pub fn oracle_snapshots(
    op: &DenseOperator,
    u0: &DMatrix<f64>,
    tau: f64,
    n_max: usize,
) -> Vec<DMatrix<f64>> {
    let coeff = op.eigvecs.transpose() * u0;
    let roots = op.eigvals.map(f64::sqrt);
    (0..=n_max)
        .map(|j| {
            let mut c = coeff.clone();
            for (row, w) in roots.iter().enumerate() {
                c.row_mut(row).scale_mut((j as f64 * tau * w).cos());
            }
            &op.eigvecs * c
        })
        .collect()
}

/// Exact modal evaluation of `D_j = h² u_0ᵀ u_j` and `D̈_j = −h² u_0ᵀ A u_j`, `j < 2n`.
pub fn oracle_data_series(
    op: &DenseOperator,
    array: &ArrayGeometry,
    spec: &SignalSpec,
    tau: f64,
    n: usize,
) -> Result<DataSeries> {
    let sensors = op.sensor_dofs(array)?;
    let m = sensors.len();
    let h2 = op.grid.h * op.grid.h;
    let k = op.dim();
    let power: Vec<f64> = op
        .eigvals
        .iter()
        .map(|t| spec.power_spectrum(t.sqrt()))
        .collect();
    let mut d = Vec::with_capacity(2 * n);
    let mut dd = Vec::with_capacity(2 * n);
    for j in 0..2 * n {
        let mut dj = DMatrix::zeros(m, m);
        let mut ddj = DMatrix::zeros(m, m);
        for mode in 0..k {
            let theta = op.eigvals[mode];
            let w = power[mode] * (j as f64 * tau * theta.sqrt()).cos() / h2;
            if w == 0.0 {
                continue;
            }
            for r in 0..m {
                let vr = op.eigvecs[(sensors[r], mode)];
                for s in 0..m {
                    let v = w * vr * op.eigvecs[(sensors[s], mode)];
                    dj[(r, s)] += v;
                    ddj[(r, s)] -= theta * v;
                }
            }
        }
        d.push(dj);
        dd.push(ddj);
    }
    let mut series = DataSeries::new(d, dd, tau)?;
    series.symmetrize();
    Ok(series)
}
