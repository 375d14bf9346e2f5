//! Dense kernels with operation counting.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};

use crate::cost::{self, OpCounter};

const LN_EPS: f64 = 1e-6;

pub(crate) fn matmul(a: ArrayView2<f64>, b: ArrayView2<f64>, ops: &mut OpCounter) -> Array2<f64> {
    ops.mac(a.nrows() * a.ncols() * b.ncols());
    a.dot(&b)
}

/// `W^T·v + bias` for a row vector `v` against `W: in × out`.
pub(crate) fn affine_vec(
    v: ArrayView1<f64>,
    w: ArrayView2<f64>,
    bias: ArrayView1<f64>,
    ops: &mut OpCounter,
) -> Array1<f64> {
    ops.mac(w.nrows() * w.ncols());
    ops.elementwise(cost::ELEMENTWISE, bias.len());
    v.dot(&w) + bias
}

/// Row-wise layer normalization without affine parameters.
pub(crate) fn layer_norm(x: ArrayView2<f64>, ops: &mut OpCounter) -> Array2<f64> {
    ops.elementwise(cost::NORM, x.len());
    let d = x.ncols() as f64;
    let mut out = x.to_owned();
    for mut row in out.rows_mut() {
        let mean = row.sum() / d;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        row.mapv_inplace(|v| (v - mean) * inv);
    }
    out
}

/// `h·(1 + scale) + shift`, broadcast over rows.
pub(crate) fn modulate(
    h: &mut Array2<f64>,
    shift: ArrayView1<f64>,
    scale: ArrayView1<f64>,
    ops: &mut OpCounter,
) {
    ops.elementwise(cost::MODULATE, h.len());
    for mut row in h.rows_mut() {
        Zip::from(&mut row)
            .and(&shift)
            .and(&scale)
            .for_each(|v, &sh, &sc| *v = *v * (1.0 + sc) + sh);
    }
}

/// Multi-head attention of `queries` over `keys`/`values`; all `rows × dim`
/// with heads split along columns.
pub(crate) fn attention(
    queries: ArrayView2<f64>,
    keys: ArrayView2<f64>,
    values: ArrayView2<f64>,
    heads: usize,
    ops: &mut OpCounter,
) -> Array2<f64> {
    let dim = queries.ncols();
    let dh = dim / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = Array2::zeros((queries.nrows(), dim));
    for h in 0..heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let mut scores = matmul(queries.slice(cols), keys.slice(cols).t(), ops);
        softmax_rows(&mut scores, scale, ops);
        let mixed = matmul(scores.view(), values.slice(cols), ops);
        out.slice_mut(cols).assign(&mixed);
    }
    out
}

fn softmax_rows(scores: &mut Array2<f64>, scale: f64, ops: &mut OpCounter) {
    ops.elementwise(cost::SOFTMAX, scores.len());
    for mut row in scores.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v * scale));
        row.mapv_inplace(|v| (v * scale - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

/// Tanh approximation of GELU.
pub(crate) fn gelu(x: &mut Array2<f64>, ops: &mut OpCounter) {
    ops.elementwise(cost::GELU, x.len());
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    x.mapv_inplace(|v| 0.5 * v * (1.0 + (C * (v + 0.044_715 * v * v * v)).tanh()));
}

/// Scales each row elementwise by `gate`.
pub(crate) fn gate(x: &Array2<f64>, gate: ArrayView1<f64>, ops: &mut OpCounter) -> Array2<f64> {
    ops.elementwise(cost::ELEMENTWISE, x.len());
    x * &gate.broadcast(x.raw_dim()).expect("gate width matches")
}

pub(crate) fn add_assign(x: &mut Array2<f64>, b: &Array2<f64>, ops: &mut OpCounter) {
    ops.elementwise(cost::ELEMENTWISE, x.len());
    *x += b;
}

/// Euclidean norm of each row, counted as one MAC per element.
pub(crate) fn row_norms(v: ArrayView2<f64>, ops: &mut OpCounter) -> Vec<f64> {
    ops.mac(v.len());
    v.axis_iter(Axis(0))
        .map(|row| row.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect()
}

pub(crate) fn silu(v: &Array1<f64>) -> Array1<f64> {
    v.mapv(|x| x / (1.0 + (-x).exp()))
}
