use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Euclidean projection of one row onto the probability simplex.
///
/// Sort descending (stable on the original index), find the largest k with
/// `1 + k*z_(k) > sum_{j<=k} z_(j)`, set `tau = (sum_{j<=k} z_(j) - 1)/k`,
/// and output `max(z - tau, 0)`. Entries below the threshold come out as
/// exactly zero; the survivors sum to one.
pub(crate) fn sparsemax_slice(z: &[f64]) -> Vec<f64> {
    let m = z.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| z[b].partial_cmp(&z[a]).expect("finite input"));

    let mut cumsum = 0.0;
    let mut k = 1;
    let mut tau = 0.0;
    for (rank, &idx) in order.iter().enumerate() {
        let j = rank + 1;
        cumsum += z[idx];
        if 1.0 + j as f64 * z[idx] > cumsum {
            k = j;
            tau = (cumsum - 1.0) / j as f64;
        } else {
            break;
        }
    }
    let _ = k;
    z.iter().map(|&v| (v - tau).max(0.0)).collect()
}

/// Sparsemax of a single vector.
pub fn sparsemax_row(z: &Tensor) -> Result<Tensor> {
    if !z.is_vector() {
        return Err(Error::invalid("sparsemax_row", "expects a vector"));
    }
    if !z.all_finite() {
        return Err(Error::NonFinite { op: "sparsemax_row" });
    }
    Ok(Tensor::vector(sparsemax_slice(z.data())))
}

/// Row-wise sparsemax of a matrix.
pub fn sparsemax_rows(z: &Tensor) -> Result<Tensor> {
    if !z.is_matrix() {
        return Err(Error::invalid("sparsemax_rows", "expects a matrix"));
    }
    if !z.all_finite() {
        return Err(Error::NonFinite { op: "sparsemax_rows" });
    }
    let (n, m) = (z.rows(), z.cols());
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let row = sparsemax_slice(z.row(i));
        out[i * m..(i + 1) * m].copy_from_slice(&row);
    }
    Tensor::new(vec![n, m], out)
}
