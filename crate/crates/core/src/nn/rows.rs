//! Row surgery on stacked `(batch·len) × d` sequences.

use ndarray::{s, Array2, Axis};

use super::Real;

/// Removes rows `at..at + count` from every sequence.
pub fn remove_rows<T: Real>(x: &Array2<T>, batch: usize, len: usize, at: usize, count: usize) -> Array2<T> {
    if count == 0 {
        return x.clone();
    }
    let new_len = len - count;
    let mut out = Array2::zeros((batch * new_len, x.ncols()));
    for b in 0..batch {
        let (src, dst) = (b * len, b * new_len);
        out.slice_mut(s![dst..dst + at, ..]).assign(&x.slice(s![src..src + at, ..]));
        out.slice_mut(s![dst + at..dst + new_len, ..]).assign(&x.slice(s![src + at + count..src + len, ..]));
    }
    out
}

/// Inserts the same `rows` block at position `at` of every sequence.
pub fn insert_rows<T: Real>(x: &Array2<T>, batch: usize, len: usize, at: usize, rows: &Array2<T>) -> Array2<T> {
    let count = rows.nrows();
    let new_len = len + count;
    let mut out = Array2::zeros((batch * new_len, x.ncols()));
    for b in 0..batch {
        let (src, dst) = (b * len, b * new_len);
        out.slice_mut(s![dst..dst + at, ..]).assign(&x.slice(s![src..src + at, ..]));
        out.slice_mut(s![dst + at..dst + at + count, ..]).assign(rows);
        out.slice_mut(s![dst + at + count..dst + new_len, ..]).assign(&x.slice(s![src + at..src + len, ..]));
    }
    out
}

/// Inserts `count` zero rows at position `at` of every sequence.
pub fn insert_zero_rows<T: Real>(x: &Array2<T>, batch: usize, len: usize, at: usize, count: usize) -> Array2<T> {
    if count == 0 {
        return x.clone();
    }
    insert_rows(x, batch, len, at, &Array2::zeros((count, x.ncols())))
}

/// Sums rows `at..at + count` across the batch.
pub fn sum_rows<T: Real>(x: &Array2<T>, batch: usize, len: usize, at: usize, count: usize) -> Array2<T> {
    let mut acc = Array2::zeros((count, x.ncols()));
    for b in 0..batch {
        acc += &x.slice(s![b * len + at..b * len + at + count, ..]);
    }
    acc
}

/// Row `index` of every sequence, stacked into a `batch × d` matrix.
pub fn select_row<T: Real>(x: &Array2<T>, batch: usize, len: usize, index: usize) -> Array2<T> {
    let idx: Vec<usize> = (0..batch).map(|b| b * len + index).collect();
    x.select(Axis(0), &idx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn insert_then_remove_is_identity() {
        let x = array![[1.0f64], [2.0], [3.0], [4.0]];
        let p = array![[9.0], [8.0]];
        let y = insert_rows(&x, 2, 2, 1, &p);
        assert_eq!(y, array![[1.0], [9.0], [8.0], [2.0], [3.0], [9.0], [8.0], [4.0]]);
        assert_eq!(remove_rows(&y, 2, 4, 1, 2), x);
        assert_eq!(sum_rows(&y, 2, 4, 1, 2), array![[18.0], [16.0]]);
        assert_eq!(select_row(&y, 2, 4, 3), array![[2.0], [4.0]]);
    }
}
