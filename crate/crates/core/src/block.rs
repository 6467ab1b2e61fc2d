//! Block-structured matrices, spectral truncation and block Cholesky factorization.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// `nm × nm` matrix addressed by `m × m` blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockMatrix {
    storage: DMatrix<f64>,
    m: usize,
    n: usize,
}

impl BlockMatrix {
    pub fn zeros(m: usize, n: usize) -> Self {
        Self {
            storage: DMatrix::zeros(n * m, n * m),
            m,
            n,
        }
    }

    pub fn from_matrix(storage: DMatrix<f64>, m: usize) -> Result<Self> {
        let (rows, cols) = storage.shape();
        if m == 0 || rows != cols || rows % m != 0 {
            return Err(Error::DimensionMismatch(format!(
                "{rows}x{cols} matrix is not made of {m}x{m} blocks"
            )));
        }
        Ok(Self {
            n: rows / m,
            storage,
            m,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.n * self.m
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.storage
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.storage
    }

    pub fn block(&self, i: usize, j: usize) -> DMatrix<f64> {
        let m = self.m;
        self.storage.view((i * m, j * m), (m, m)).into_owned()
    }

    pub fn set_block(&mut self, i: usize, j: usize, value: &DMatrix<f64>) {
        let m = self.m;
        self.storage
            .view_mut((i * m, j * m), (m, m))
            .copy_from(value);
    }

    /// Leading `Jm × Jm` principal submatrix.
    pub fn leading(&self, j: usize) -> Self {
        let d = j * self.m;
        Self {
            storage: self.storage.view((0, 0), (d, d)).into_owned(),
            m: self.m,
            n: j,
        }
    }

    /// Replaces the matrix by `(X + Xᵀ)/2`.
    pub fn symmetrize(&mut self) {
        let t = self.storage.transpose();
        self.storage += t;
        self.storage *= 0.5;
    }

    pub fn asymmetry(&self) -> f64 {
        let n = self.storage.norm();
        if n == 0.0 {
            0.0
        } else {
            (&self.storage - self.storage.transpose()).norm() / n
        }
    }

    pub fn norm(&self) -> f64 {
        self.storage.norm()
    }

    /// Frobenius norm of block `(i, j)`.
    pub fn block_norm(&self, i: usize, j: usize) -> f64 {
        let m = self.m;
        self.storage.view((i * m, j * m), (m, m)).norm()
    }

    pub fn symmetric_eigenvalues(&self) -> DVector<f64> {
        let mut s = self.storage.clone();
        s += self.storage.transpose();
        s *= 0.5;
        sorted_eigen(s).0
    }
}

/// Symmetric eigendecomposition with ascending eigenvalues and each eigenvector's
/// largest-magnitude component made positive.
pub fn sorted_eigen(a: DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let eig = SymmetricEigen::new(a);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (col, &i) in order.iter().enumerate() {
        let v = eig.eigenvectors.column(i);
        let pivot = v
            .iter()
            .copied()
            .fold(0.0f64, |a, x| if x.abs() > a.abs() { x } else { a });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        vectors.set_column(col, &(v * sign));
    }
    (values, vectors)
}

/// Floors eigenvalues below `tol·λ_max` at `tol·λ_max`; returns the modified matrix and the
/// number of eigenvalues left untouched.
pub fn spectral_truncate(mass: &BlockMatrix, tol: f64) -> (BlockMatrix, usize) {
    let mut sym = mass.clone();
    sym.symmetrize();
    let (values, vectors) = sorted_eigen(sym.storage.clone());
    let lmax = values.iter().copied().fold(0.0f64, |a, v| a.max(v.abs()));
    let floor = tol * lmax;
    let rank = values.iter().filter(|&&v| v >= floor).count();
    if rank == values.len() || lmax == 0.0 {
        return (sym, rank);
    }
    let clipped = values.map(|v| v.max(floor));
    let mut out = &vectors * DMatrix::from_diagonal(&clipped) * vectors.transpose();
    let t = out.transpose();
    out += t;
    out *= 0.5;
    (
        BlockMatrix {
            storage: out,
            m: mass.m,
            n: mass.n,
        },
        rank,
    )
}

/// Block upper-triangular factor `R` with `RᵀR = M`, diagonal blocks symmetric square roots.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockCholesky {
    r: BlockMatrix,
    diag_inv: Vec<DMatrix<f64>>,
}

/// Right-looking block Cholesky factorization; diagonal pivots use the symmetric square root.
pub fn block_cholesky(mass: &BlockMatrix, trunc_tol: f64) -> Result<BlockCholesky> {
    let (m, n) = (mass.m, mass.n);
    let scale = mass
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(0.0f64, |a, v| a.max(v.abs()));
    let mut work = mass.clone();
    work.symmetrize();
    let mut r = BlockMatrix::zeros(m, n);
    let mut diag_inv = Vec::with_capacity(n);
    for k in 0..n {
        let pivot = work.block(k, k);
        let pivot = (&pivot + pivot.transpose()) * 0.5;
        let (values, vectors) = sorted_eigen(pivot);
        if values[0] < -trunc_tol * scale || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::IndefinitePivot {
                block: k,
                eigenvalue: values[0],
            });
        }
        let root = values.map(|v| v.max(0.0).sqrt());
        let inv_root = root.map(|v| if v > 0.0 { 1.0 / v } else { 0.0 });
        let rkk = &vectors * DMatrix::from_diagonal(&root) * vectors.transpose();
        let rkk_inv = &vectors * DMatrix::from_diagonal(&inv_root) * vectors.transpose();
        r.set_block(k, k, &rkk);
        for j in k + 1..n {
            let rkj = &rkk_inv * work.block(k, j);
            r.set_block(k, j, &rkj);
        }
        for i in k + 1..n {
            let rki_t = r.block(k, i).transpose();
            for j in i..n {
                let update = &rki_t * r.block(k, j);
                let value = work.block(i, j) - update;
                work.set_block(i, j, &value);
                if j != i {
                    work.set_block(j, i, &value.transpose());
                }
            }
        }
        diag_inv.push(rkk_inv);
    }
    Ok(BlockCholesky { r, diag_inv })
}

impl BlockCholesky {
    pub fn r(&self) -> &BlockMatrix {
        &self.r
    }

    pub fn m(&self) -> usize {
        self.r.m
    }

    pub fn n(&self) -> usize {
        self.r.n
    }

    /// Solves `R X = B` by block back substitution.
    pub fn solve_upper(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let (m, n) = (self.r.m, self.r.n);
        let cols = b.ncols();
        let mut x = DMatrix::zeros(n * m, cols);
        for i in (0..n).rev() {
            let mut rhs = b.rows(i * m, m).into_owned();
            for j in i + 1..n {
                let rij = self.r.storage.view((i * m, j * m), (m, m));
                rhs -= rij * x.rows(j * m, m);
            }
            let xi = &self.diag_inv[i] * rhs;
            x.rows_mut(i * m, m).copy_from(&xi);
        }
        x
    }

    /// Solves `Rᵀ X = B` by block forward substitution.
    pub fn solve_upper_transpose(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let (m, n) = (self.r.m, self.r.n);
        let cols = b.ncols();
        let mut x = DMatrix::zeros(n * m, cols);
        for i in 0..n {
            let mut rhs = b.rows(i * m, m).into_owned();
            for j in 0..i {
                let rji_t = self.r.storage.view((j * m, i * m), (m, m)).transpose();
                rhs -= rji_t * x.rows(j * m, m);
            }
            let xi = self.diag_inv[i].transpose() * rhs;
            x.rows_mut(i * m, m).copy_from(&xi);
        }
        x
    }

    /// `R^{−T} S R^{−1}`, symmetrized.
    pub fn congruence(&self, s: &BlockMatrix) -> BlockMatrix {
        let x = self.solve_upper_transpose(s.matrix());
        let y = self.solve_upper_transpose(&x.transpose());
        let mut out = BlockMatrix {
            storage: y.transpose(),
            m: self.r.m,
            n: self.r.n,
        };
        out.symmetrize();
        out
    }

    /// `‖RᵀR − M‖_F / ‖M‖_F`.
    pub fn reconstruction_error(&self, mass: &BlockMatrix) -> f64 {
        let rtr = self.r.storage.transpose() * &self.r.storage;
        (rtr - &mass.storage).norm() / mass.storage.norm()
    }
}
