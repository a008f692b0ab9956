//! Dense gap-by-token matrices.
//!
//! Row `i` is the gap after position `i` of the current sequence (row 0 is the
//! gap right after the begin marker). Column `c` is the insertable token with id
//! `c + 1`; the begin marker has no column since it is never inserted.

use std::ops::{Index, IndexMut};

use crate::seq::Token;

#[derive(Clone, Debug, PartialEq)]
pub struct GapMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Clone> GapMatrix<T> {
    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        GapMatrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }
}

impl<T: Clone + Default> GapMatrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, T::default())
    }
}

impl<T> GapMatrix<T> {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data does not match {rows}x{cols}");
        GapMatrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Entry for inserting `v` after position `i`; `None` for the begin marker.
    pub fn at(&self, i: usize, v: Token) -> Option<&T> {
        v.column().map(|c| &self[(i, c)])
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> GapMatrix<U> {
        GapMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(f).collect(),
        }
    }

    /// `(row, col, value)` triples in row-major order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, &T)> {
        let cols = self.cols.max(1);
        self.data.iter().enumerate().map(move |(k, x)| (k / cols, k % cols, x))
    }
}

impl GapMatrix<f64> {
    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }
}

impl<T> Index<(usize, usize)> for GapMatrix<T> {
    type Output = T;

    #[inline]
    fn index(&self, (i, c): (usize, usize)) -> &T {
        debug_assert!(i < self.rows && c < self.cols);
        &self.data[i * self.cols + c]
    }
}

impl<T> IndexMut<(usize, usize)> for GapMatrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, c): (usize, usize)) -> &mut T {
        debug_assert!(i < self.rows && c < self.cols);
        &mut self.data[i * self.cols + c]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexing_is_row_major() {
        let m = GapMatrix::from_vec(2, 3, vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(m[(1, 0)], 3);
        assert_eq!(m.row(1), &[3, 4, 5]);
        assert_eq!(m.at(0, Token(3)), Some(&2));
        assert_eq!(m.at(0, Token::BOS), None);
        let e: Vec<_> = m.entries().map(|(i, c, &x)| (i, c, x)).collect();
        assert_eq!(e[4], (1, 1, 4));
    }
}
