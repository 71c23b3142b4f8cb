//! Small numeric helpers shared across modules.

use nalgebra::DMatrix;

/// Relative tolerance under which a column's spread is treated as zero.
const ZERO_SPREAD: f64 = 1e-12;

/// In-place per-column standardization with population standard deviation.
/// Columns without spread are set to zero.
pub(crate) fn standardize_columns(m: &mut DMatrix<f64>) {
    let n = m.nrows() as f64;
    for mut col in m.column_iter_mut() {
        let mean = col.iter().sum::<f64>() / n;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        if sd <= ZERO_SPREAD * mean.abs().max(1.0) {
            col.fill(0.0);
        } else {
            col.iter_mut().for_each(|v| *v = (*v - mean) / sd);
        }
    }
}

pub(crate) fn rows_to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let d = rows.first().map_or(0, Vec::len);
    DMatrix::from_fn(rows.len(), d, |r, c| rows[r][c])
}

pub(crate) fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub(crate) fn centroid(points: &[Vec<f64>]) -> Vec<f64> {
    let d = points.first().map_or(0, Vec::len);
    let mut c = vec![0.0; d];
    for p in points {
        for (acc, v) in c.iter_mut().zip(p) {
            *acc += v;
        }
    }
    let n = points.len() as f64;
    c.iter_mut().for_each(|v| *v /= n);
    c
}

#[inline]
pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub(crate) fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Mean and (n−1)-normalized standard deviation.
pub(crate) fn mean_and_sample_std(values: &[f64]) -> (f64, f64) {
    let m = mean(values);
    if values.len() < 2 {
        return (m, 0.0);
    }
    let ss = values.iter().map(|v| (v - m).powi(2)).sum::<f64>();
    (m, (ss / (values.len() - 1) as f64).sqrt())
}
