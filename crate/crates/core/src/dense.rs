//! Small dense helpers shared by the block-sparse kernels.

use faer::Mat;
use ndarray::{Array2, ArrayD, IxDyn};

use crate::error::{Error, Result};

/// Permutes `a` so that `row_axes` come first and `col_axes` last, then
/// flattens to a row-major matrix.
pub(crate) fn to_matrix(a: &ArrayD<f64>, row_axes: &[usize], col_axes: &[usize]) -> Array2<f64> {
    let perm: Vec<usize> = row_axes.iter().chain(col_axes).copied().collect();
    let rows: usize = row_axes.iter().map(|&i| a.shape()[i]).product();
    let cols: usize = col_axes.iter().map(|&i| a.shape()[i]).product();
    let permuted = a.view().permuted_axes(IxDyn(&perm));
    let data: Vec<f64> = permuted.iter().copied().collect();
    Array2::from_shape_vec((rows, cols), data).expect("row-major reshape")
}

pub(crate) fn from_matrix(m: Array2<f64>, shape: &[usize]) -> ArrayD<f64> {
    let (data, _) = m.into_raw_vec_and_offset();
    ArrayD::from_shape_vec(IxDyn(shape), data).expect("shape matches matrix size")
}

/// Thin SVD with singular values sorted in descending order.
pub(crate) fn svd(m: &Array2<f64>) -> Result<(Array2<f64>, Vec<f64>, Array2<f64>)> {
    let (r, c) = m.dim();
    let k = r.min(c);
    if k == 0 {
        return Ok((Array2::zeros((r, 0)), Vec::new(), Array2::zeros((0, c))));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite entry in SVD input".into()));
    }
    let mat = Mat::<f64>::from_fn(r, c, |i, j| m[[i, j]]);
    let svd = mat.thin_svd().map_err(|e| Error::Numerical(format!("SVD failed: {e:?}")))?;
    let (u, s, v) = (svd.U(), svd.S().column_vector(), svd.V());
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let mut uo = Array2::zeros((r, k));
    let mut vo = Array2::zeros((k, c));
    let mut so = Vec::with_capacity(k);
    for (new, &old) in order.iter().enumerate() {
        so.push(s[old]);
        for i in 0..r {
            uo[[i, new]] = u[(i, old)];
        }
        for j in 0..c {
            vo[[new, j]] = v[(j, old)];
        }
    }
    // Cheap guard against silently wrong factorisations.
    let scale = so[0].max(f64::MIN_POSITIVE);
    let recon = uo.dot(&Array2::from_diag(&ndarray::Array1::from(so.clone()))).dot(&vo);
    let err = (&recon - m).iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if !(err <= 1e-9 * scale) {
        return Err(Error::Numerical(format!("SVD reconstruction error {err:e}")));
    }
    Ok((uo, so, vo))
}

pub(crate) fn norm_sq(a: &ArrayD<f64>) -> f64 {
    a.iter().map(|v| v * v).sum()
}
