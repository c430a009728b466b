//! Clutter suppression, slow-time differencing and range-window selection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Contiguous range-bin window `[start, end]`, both inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RangeWindow {
    pub start: usize,
    pub end: usize,
}

impl RangeWindow {
    pub fn new(start: usize, end: usize) -> Result<Self> {
        if start > end {
            return Err(Error::InvalidConfig(format!(
                "window start {start} > end {end}"
            )));
        }
        Ok(RangeWindow { start, end })
    }

    pub fn size(&self) -> usize {
        self.end - self.start + 1
    }
}

/// Removes each range bin's mean over slow time.
pub fn dc_suppress(r: &Matrix) -> Matrix {
    let mut out = r.clone();
    let n = r.cols() as f64;
    for m in 0..r.rows() {
        let row = out.row_mut(m);
        let mean = row.iter().sum::<f64>() / n;
        row.iter_mut().for_each(|v| *v -= mean);
    }
    out
}

/// Removes each frame's mean over range bins (static background).
pub fn background_suppress(rbar: &Matrix) -> Matrix {
    let (rows, cols) = rbar.shape();
    let mut means = vec![0.0; cols];
    for row in rbar.row_iter() {
        for (acc, v) in means.iter_mut().zip(row) {
            *acc += v;
        }
    }
    means.iter_mut().for_each(|v| *v /= rows as f64);
    let mut out = rbar.clone();
    for m in 0..rows {
        for (v, mean) in out.row_mut(m).iter_mut().zip(&means) {
            *v -= mean;
        }
    }
    out
}

/// DC then background suppression.
pub fn suppress_clutter(r: &Matrix) -> Matrix {
    background_suppress(&dc_suppress(r))
}

/// First difference along slow time; output is M×(N−1).
pub fn time_difference(y: &Matrix) -> Result<Matrix> {
    let (rows, cols) = y.shape();
    if cols < 2 {
        return Err(Error::Shape(format!(
            "time difference needs N >= 2, got {cols}"
        )));
    }
    let mut out = Matrix::zeros(rows, cols - 1);
    for m in 0..rows {
        let src = y.row(m);
        for (d, w) in out.row_mut(m).iter_mut().zip(src.windows(2)) {
            *d = w[1] - w[0];
        }
    }
    Ok(out)
}

/// Sum of squares of each row.
pub fn row_energies(x: &Matrix) -> Vec<f64> {
    x.row_iter()
        .map(|r| r.iter().map(|v| v * v).sum())
        .collect()
}

/// Finds the `ws`-row window with maximal energy; ties go to the smallest
/// start index. Runs in O(M·N) using a sliding sum over row energies.
pub fn select_range_window(yd: &Matrix, ws: usize) -> Result<RangeWindow> {
    let rows = yd.rows();
    if ws == 0 || ws > rows {
        return Err(Error::InvalidConfig(format!(
            "window size {ws} not in [1, {rows}]"
        )));
    }
    let energy = row_energies(yd);
    let mut prefix = vec![0.0; rows + 1];
    for (i, e) in energy.iter().enumerate() {
        prefix[i + 1] = prefix[i] + e;
    }
    let mut best = 0;
    let mut best_energy = prefix[ws] - prefix[0];
    for start in 1..=rows - ws {
        let e = prefix[start + ws] - prefix[start];
        if e > best_energy {
            best_energy = e;
            best = start;
        }
    }
    RangeWindow::new(best, best + ws - 1)
}

/// Copies rows `w.start..=w.end`.
pub fn crop(x: &Matrix, w: RangeWindow) -> Result<Matrix> {
    if w.start > w.end || w.end >= x.rows() {
        return Err(Error::Shape(format!(
            "window [{}, {}] outside {} rows",
            w.start,
            w.end,
            x.rows()
        )));
    }
    let cols = x.cols();
    let data = x.as_slice()[w.start * cols..(w.end + 1) * cols].to_vec();
    Matrix::from_vec(w.size(), cols, data)
}
