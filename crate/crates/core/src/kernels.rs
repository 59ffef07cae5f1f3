//! Scalar loops shaped so the optimizer can vectorize them.

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `y += alpha * x`
#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `y[r] = W[r,:] . x` for a row-major `rows x x.len()` matrix. Rows are
/// taken four at a time to reuse loads of `x`; each row sums in the same
/// order as [`dot`].
pub(crate) fn matvec(w: &[f64], x: &[f64], y: &mut [f64]) {
    let cols = x.len();
    let body = cols - cols % 4;
    let mut blocks = y.chunks_exact_mut(4);
    let mut r = 0;
    for yb in &mut blocks {
        let rows: [&[f64]; 4] = core::array::from_fn(|k| &w[(r + k) * cols..(r + k + 1) * cols]);
        let mut acc = [[0.0f64; 4]; 4];
        let mut j = 0;
        while j < body {
            let xs = &x[j..j + 4];
            for k in 0..4 {
                let wr = &rows[k][j..j + 4];
                acc[k][0] += wr[0] * xs[0];
                acc[k][1] += wr[1] * xs[1];
                acc[k][2] += wr[2] * xs[2];
                acc[k][3] += wr[3] * xs[3];
            }
            j += 4;
        }
        for k in 0..4 {
            let mut tail = 0.0;
            for (a, b) in rows[k][body..].iter().zip(&x[body..]) {
                tail += a * b;
            }
            let a = acc[k];
            yb[k] = (a[0] + a[1]) + (a[2] + a[3]) + tail;
        }
        r += 4;
    }
    for yr in blocks.into_remainder() {
        *yr = dot(&w[r * cols..(r + 1) * cols], x);
        r += 1;
    }
}

/// `x_grad += W^T . dy`
pub(crate) fn matvec_t_acc(w: &[f64], dy: &[f64], x_grad: &mut [f64]) {
    let cols = x_grad.len();
    let mut blocks = dy.chunks_exact(4);
    let mut r = 0;
    for d in &mut blocks {
        let rows: [&[f64]; 4] = core::array::from_fn(|k| &w[(r + k) * cols..(r + k + 1) * cols]);
        for (j, g) in x_grad.iter_mut().enumerate() {
            *g += (d[0] * rows[0][j] + d[1] * rows[1][j]) + (d[2] * rows[2][j] + d[3] * rows[3][j]);
        }
        r += 4;
    }
    for &d in blocks.remainder() {
        if d != 0.0 {
            axpy(d, &w[r * cols..(r + 1) * cols], x_grad);
        }
        r += 1;
    }
}

/// `W_grad += dy ⊗ x`
pub(crate) fn outer_acc(dy: &[f64], x: &[f64], w_grad: &mut [f64]) {
    let cols = x.len();
    for (r, &d) in dy.iter().enumerate() {
        if d != 0.0 {
            axpy(d, x, &mut w_grad[r * cols..(r + 1) * cols]);
        }
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

#[inline]
pub(crate) fn tanh(x: f64) -> f64 {
    libm::tanh(x)
}

/// Numerically stable log-sum-exp over a slice, optionally masked.
pub(crate) fn log_sum_exp(x: &[f64], mask: Option<&[bool]>) -> f64 {
    let keep = |i: usize| mask.map_or(true, |m| m[i]);
    let mut max = f64::NEG_INFINITY;
    for (i, &v) in x.iter().enumerate() {
        if keep(i) && v > max {
            max = v;
        }
    }
    let mut s = 0.0;
    for (i, &v) in x.iter().enumerate() {
        if keep(i) {
            s += libm::exp(v - max);
        }
    }
    max + libm::log(s)
}
