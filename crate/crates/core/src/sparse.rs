//! Small helpers around `nalgebra-sparse` row-compressed matrices.

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::{CooMatrix, CsrMatrix};

/// Build a CSR matrix from triplets; duplicates are summed.
pub fn from_triplets(nrows: usize, ncols: usize, trips: &[(usize, usize, f64)]) -> CsrMatrix<f64> {
    let mut coo = CooMatrix::new(nrows, ncols);
    for &(i, j, v) in trips {
        coo.push(i, j, v);
    }
    CsrMatrix::from(&coo)
}

/// `y = A x`.
pub fn spmv(a: &CsrMatrix<f64>, x: &[f64]) -> DVector<f64> {
    let mut y = DVector::zeros(a.nrows());
    spmv_into(a, x, y.as_mut_slice());
    y
}

/// `y = A x` into an existing buffer.
pub fn spmv_into(a: &CsrMatrix<f64>, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(a.ncols(), x.len());
    for (yi, row) in y.iter_mut().zip(a.row_iter()) {
        *yi = row
            .col_indices()
            .iter()
            .zip(row.values())
            .map(|(&j, &v)| v * x[j])
            .sum();
    }
}

/// `y += alpha A x`.
pub fn spmv_add(a: &CsrMatrix<f64>, alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, row) in y.iter_mut().zip(a.row_iter()) {
        let s: f64 = row
            .col_indices()
            .iter()
            .zip(row.values())
            .map(|(&j, &v)| v * x[j])
            .sum();
        *yi += alpha * s;
    }
}

/// Block-diagonal matrix from square or rectangular blocks.
pub fn block_diag(blocks: &[CsrMatrix<f64>]) -> CsrMatrix<f64> {
    let nrows = blocks.iter().map(|b| b.nrows()).sum();
    let ncols = blocks.iter().map(|b| b.ncols()).sum();
    let mut coo = CooMatrix::new(nrows, ncols);
    let (mut r0, mut c0) = (0, 0);
    for b in blocks {
        for (i, j, &v) in b.triplet_iter() {
            coo.push(r0 + i, c0 + j, v);
        }
        r0 += b.nrows();
        c0 += b.ncols();
    }
    CsrMatrix::from(&coo)
}

/// Stack blocks sharing the same column space on top of each other.
pub fn vstack(blocks: &[CsrMatrix<f64>]) -> CsrMatrix<f64> {
    let nrows = blocks.iter().map(|b| b.nrows()).sum();
    let ncols = blocks.first().map_or(0, |b| b.ncols());
    let mut coo = CooMatrix::new(nrows, ncols);
    let mut r0 = 0;
    for b in blocks {
        assert_eq!(b.ncols(), ncols);
        for (i, j, &v) in b.triplet_iter() {
            coo.push(r0 + i, j, v);
        }
        r0 += b.nrows();
    }
    CsrMatrix::from(&coo)
}

pub fn diag(d: &DVector<f64>) -> CsrMatrix<f64> {
    let trips: Vec<_> = d.iter().enumerate().map(|(i, &v)| (i, i, v)).collect();
    from_triplets(d.len(), d.len(), &trips)
}

pub fn to_dense(a: &CsrMatrix<f64>) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(a.nrows(), a.ncols());
    for (i, j, &v) in a.triplet_iter() {
        m[(i, j)] += v;
    }
    m
}

/// Coordinate text dump: header `rows cols nnz`, then `row col value` lines in
/// row-major order.
pub fn write_coo<W: Write>(mut w: W, a: &CsrMatrix<f64>) -> io::Result<()> {
    writeln!(w, "{} {} {}", a.nrows(), a.ncols(), a.nnz())?;
    for (i, j, v) in a.triplet_iter() {
        writeln!(w, "{i} {j} {v:.17e}")?;
    }
    Ok(())
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
