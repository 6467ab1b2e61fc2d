//! Mass and stiffness matrices from data, and the propagator and wave-operator ROMs.

use nalgebra::DMatrix;

use crate::block::{block_cholesky, spectral_truncate, BlockCholesky, BlockMatrix};
use crate::data::DataSeries;
use crate::error::{Error, Result};

/// Default relative eigenvalue floor applied to the mass matrix.
pub const DEFAULT_TRUNC_TOL: f64 = 1e-9;

fn assemble(n: usize, m: usize, block: impl Fn(usize, usize) -> DMatrix<f64>) -> BlockMatrix {
    let mut out = BlockMatrix::zeros(m, n);
    for i in 0..n {
        for j in i..n {
            let b = block(i, j);
            out.set_block(i, j, &b);
            if i != j {
                out.set_block(j, i, &b.transpose());
            }
        }
    }
    out.symmetrize();
    out
}

/// `M_{ij} = ½(D_{i+j} + D_{|i−j|})`.
pub fn assemble_mass(series: &DataSeries) -> BlockMatrix {
    let d = series.d();
    assemble(series.n(), series.m(), |i, j| {
        (&d[i + j] + &d[i.abs_diff(j)]) * 0.5
    })
}

/// `S_{ij} = ¼(D_{i+j+1} + D_{|i+j−1|} + D_{|i−j|+1} + D_{||i−j|−1|})`, the Gramian of snapshots
/// against `cos(τ√A)`.
pub fn assemble_stiffness_prop(series: &DataSeries) -> BlockMatrix {
    let d = series.d();
    assemble(series.n(), series.m(), |i, j| {
        let k = i.abs_diff(j);
        (&d[i + j + 1] + &d[(i + j).abs_diff(1)] + &d[k + 1] + &d[k.abs_diff(1)]) * 0.25
    })
}

/// `S̃_{ij} = −½(D̈_{i+j} + D̈_{|i−j|})`.
pub fn assemble_stiffness_wave(series: &DataSeries) -> BlockMatrix {
    let dd = series.ddot();
    assemble(series.n(), series.m(), |i, j| {
        (&dd[i + j] + &dd[i.abs_diff(j)]) * -0.5
    })
}

/// Data-driven propagator and wave-operator ROMs.
#[derive(Clone, Debug)]
pub struct RomPair {
    pub chol: BlockCholesky,
    pub p_rom: BlockMatrix,
    pub a_rom: BlockMatrix,
    pub truncation_rank: usize,
    pub mass: BlockMatrix,
}

impl RomPair {
    pub fn r(&self) -> &BlockMatrix {
        self.chol.r()
    }

    pub fn n(&self) -> usize {
        self.chol.n()
    }

    pub fn m(&self) -> usize {
        self.chol.m()
    }

    pub fn is_truncated(&self) -> bool {
        self.truncation_rank < self.mass.dim()
    }
}

/// Mass matrix (truncated) and its block Cholesky factor.
pub fn factor_mass(
    series: &DataSeries,
    trunc_tol: f64,
) -> Result<(BlockMatrix, usize, BlockCholesky)> {
    let mass = assemble_mass(series);
    if mass.norm() == 0.0 {
        return Err(Error::IndefinitePivot {
            block: 0,
            eigenvalue: 0.0,
        });
    }
    let (mass, rank) = spectral_truncate(&mass, trunc_tol);
    let chol = block_cholesky(&mass, trunc_tol)?;
    Ok((mass, rank, chol))
}

pub fn build_rom(series: &DataSeries, trunc_tol: f64) -> Result<RomPair> {
    let (mass, rank, chol) = factor_mass(series, trunc_tol)?;
    let p_rom = chol.congruence(&assemble_stiffness_prop(series));
    let a_rom = chol.congruence(&assemble_stiffness_wave(series));
    Ok(RomPair {
        chol,
        p_rom,
        a_rom,
        truncation_rank: rank,
        mass,
    })
}

/// ROM snapshots `u_j = R e_j` for `j < n`, continued by `u_{j+1} = 2P u_j − u_{|j−1|}`.
pub fn rom_time_step(rom: &RomPair, j_max: usize) -> Vec<DMatrix<f64>> {
    let (m, n) = (rom.m(), rom.n());
    let r = rom.r().matrix();
    let p = rom.p_rom.matrix();
    let mut out: Vec<DMatrix<f64>> = Vec::with_capacity(j_max + 1);
    for j in 0..=j_max {
        let u = if j < n {
            r.columns(j * m, m).into_owned()
        } else if j == 1 {
            p * &out[0]
        } else {
            let prev = &out[j - 1];
            let prev2 = &out[j - 2];
            p * prev * 2.0 - prev2
        };
        out.push(u);
    }
    out
}

/// Relative data-fit errors, each normalized by `‖D_0‖_F`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DataFitReport {
    /// `max_j ‖u_0ᵀu_j − D_j‖`, `j < n`.
    pub family1: f64,
    /// `max_j ‖2u_{n−1}ᵀu_j − u_0ᵀu_{n−1−j} − D_{j+n−1}‖`, `j < n`.
    pub family2: f64,
    /// `max_j ‖u_0ᵀu_j − D_j‖` for `n ≤ j < 2n` with snapshots advanced by `P^ROM`.
    pub propagated: f64,
    /// `‖RᵀR − M‖/‖M‖` against the truncated mass matrix.
    pub mass_residual: f64,
    pub truncation_rank: usize,
    pub dim: usize,
}

pub fn verify_data_fit(rom: &RomPair, series: &DataSeries) -> DataFitReport {
    let n = rom.n();
    let d = series.d();
    let scale = d[0].norm().max(f64::MIN_POSITIVE);
    let u = rom_time_step(rom, 2 * n - 1);
    let gram = |a: usize, b: usize| u[a].transpose() * &u[b];
    let rel = |x: DMatrix<f64>, y: &DMatrix<f64>| (x - y).norm() / scale;
    let family1 = (0..n).map(|j| rel(gram(0, j), &d[j])).fold(0.0, f64::max);
    let family2 = (0..n)
        .map(|j| rel(gram(n - 1, j) * 2.0 - gram(0, n - 1 - j), &d[j + n - 1]))
        .fold(0.0, f64::max);
    let propagated = (n..2 * n)
        .map(|j| rel(gram(0, j), &d[j]))
        .fold(0.0, f64::max);
    DataFitReport {
        family1,
        family2,
        propagated,
        mass_residual: rom.chol.reconstruction_error(&rom.mass),
        truncation_rank: rom.truncation_rank,
        dim: rom.mass.dim(),
    }
}
