use crate::scalar::Scalar;

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// `out = selfᵀ · x`, where `x` has `rows` entries and `out` has `cols`.
    pub fn transpose_mul_vec(&self, x: &[T], out: &mut [T]) {
        assert_eq!(x.len(), self.rows);
        assert_eq!(out.len(), self.cols);
        out.iter_mut().for_each(|o| *o = T::zero());
        for (r, &xr) in x.iter().enumerate() {
            if xr == T::zero() {
                continue;
            }
            crate::scalar::axpy(out, xr, self.row(r));
        }
    }

    /// `out = self · y`, where `y` has `cols` entries and `out` has `rows`.
    pub fn mul_vec(&self, y: &[T], out: &mut [T]) {
        assert_eq!(y.len(), self.cols);
        assert_eq!(out.len(), self.rows);
        for (r, o) in out.iter_mut().enumerate() {
            *o = crate::scalar::dot(self.row(r), y);
        }
    }

    /// `self += x ⊗ y` (outer product).
    pub fn add_outer(&mut self, x: &[T], y: &[T]) {
        assert_eq!(x.len(), self.rows);
        assert_eq!(y.len(), self.cols);
        for (r, &xr) in x.iter().enumerate() {
            if xr == T::zero() {
                continue;
            }
            crate::scalar::axpy(self.row_mut(r), xr, y);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transpose_mul_and_outer() {
        let m = Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let mut out = [0.0; 3];
        m.transpose_mul_vec(&[1.0, -1.0], &mut out);
        assert_eq!(out, [-3.0, -3.0, -3.0]);

        let mut o2 = [0.0; 2];
        m.mul_vec(&[1.0, 0.0, 1.0], &mut o2);
        assert_eq!(o2, [4.0, 10.0]);

        let mut z = Matrix::<f64>::zeros(2, 2);
        z.add_outer(&[1.0, 2.0], &[3.0, 4.0]);
        assert_eq!(z.as_slice(), &[3.0, 4.0, 6.0, 8.0]);
    }
}
