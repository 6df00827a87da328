use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense matrix of `f64`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor2 {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor2 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim(
                "Tensor2::from_vec",
                format!("{} values for {rows}x{cols}", rows * cols),
                format!("{} values", data.len()),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::dim("Tensor2::from_rows", cols, r.len()));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn add_scaled(&mut self, alpha: f64, other: &Tensor2) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::dim(
                "Tensor2::add_scaled",
                format!("{:?}", self.shape()),
                format!("{:?}", other.shape()),
            ));
        }
        super::axpy(alpha, &other.data, &mut self.data);
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|x| *x *= alpha);
    }

    /// Appends the rows of `other` (column counts must agree).
    pub fn append_rows(&mut self, other: &Tensor2) -> Result<()> {
        if self.cols != other.cols && self.rows > 0 {
            return Err(Error::dim("Tensor2::append_rows", self.cols, other.cols));
        }
        self.cols = other.cols;
        self.rows += other.rows;
        self.data.extend_from_slice(&other.data);
        Ok(())
    }

    /// `y = selfᵀ x` for a `[n × m]` matrix and `x` of length `n`.
    pub fn t_matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.rows {
            return Err(Error::dim(
                "t_matvec",
                format!("input of length {} for {}x{} matrix", self.rows, self.rows, self.cols),
                format!("length {}", x.len()),
            ));
        }
        let mut y = vec![0.0; self.cols];
        self.t_matvec_into(x, &mut y);
        Ok(y)
    }

    /// Unchecked `y += selfᵀ x`.
    #[inline]
    pub(crate) fn t_matvec_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, &xi) in x.iter().enumerate() {
            if xi != 0.0 {
                super::axpy(xi, self.row(i), y);
            }
        }
    }

    /// Unchecked `y += self x` for `x` of length `cols`.
    #[inline]
    pub(crate) fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            *yi += super::dot(self.row(i), x);
        }
    }

    /// Unchecked rank-one update `self += alpha · a bᵀ`.
    #[inline]
    pub(crate) fn add_outer(&mut self, alpha: f64, a: &[f64], b: &[f64]) {
        for (i, &ai) in a.iter().enumerate() {
            if ai != 0.0 {
                super::axpy(alpha * ai, b, self.row_mut(i));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor2::from_vec(2, 2, vec![1.0; 3]).is_err());
        assert!(Tensor2::from_vec(2, 2, vec![1.0; 4]).is_ok());
    }

    #[test]
    fn append_rows_keeps_existing() {
        let mut a = Tensor2::from_rows(&[&[1.0, 2.0]]).unwrap();
        let b = Tensor2::from_rows(&[&[3.0, 4.0], &[5.0, 6.0]]).unwrap();
        a.append_rows(&b).unwrap();
        assert_eq!(a.shape(), (3, 2));
        assert_eq!(a.row(0), &[1.0, 2.0]);
        assert_eq!(a.row(2), &[5.0, 6.0]);
        let bad = Tensor2::zeros(1, 3);
        assert!(a.append_rows(&bad).is_err());
    }

    #[test]
    fn transpose_matvec() {
        let w = Tensor2::from_rows(&[&[1.0, 3.0], &[2.0, 4.0]]).unwrap();
        assert_eq!(w.t_matvec(&[1.0, 2.0]).unwrap(), vec![5.0, 11.0]);
        assert!(w.t_matvec(&[1.0]).is_err());
    }
}
