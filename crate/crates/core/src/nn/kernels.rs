//! Dense kernels behind the graph ops.

/// Strided read-only matrix view.
#[derive(Clone, Copy)]
pub(crate) struct Mat<'a> {
    data: &'a [f64],
    rows: usize,
    cols: usize,
    row_stride: isize,
    col_stride: isize,
}

impl<'a> Mat<'a> {
    pub(crate) fn row_major(data: &'a [f64], rows: usize, cols: usize) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Mat {
            data,
            rows,
            cols,
            row_stride: cols as isize,
            col_stride: 1,
        }
    }

    pub(crate) fn t(self) -> Self {
        Mat {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            row_stride: self.col_stride,
            col_stride: self.row_stride,
        }
    }
}

/// `out = a·b + beta·out`, `out` row-major `[a.rows, b.cols]`.
pub(crate) fn gemm(a: Mat<'_>, b: Mat<'_>, out: &mut [f64], beta: f64) {
    assert_eq!(a.cols, b.rows, "gemm inner dimensions");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert_eq!(out.len(), m * n, "gemm output size");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for o in out.iter_mut() {
            *o *= beta;
        }
        return;
    }
    // SAFETY: the views and `out` cover exactly the index ranges implied by
    // their dimensions and strides (checked above and in `Mat::row_major`).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.row_stride,
            a.col_stride,
            b.data.as_ptr(),
            b.row_stride,
            b.col_stride,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Unfolds a `[c, h, w]` image into `[c·k·k, ho·wo]` patch columns.
#[allow(clippy::too_many_arguments)]
pub(crate) fn im2col(
    x: &[f64],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) -> Vec<f64> {
    let mut col = vec![0.0; c * k * k * ho * wo];
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut col[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &x[ci * h * w + iy as usize * w..ci * h * w + (iy as usize + 1) * w];
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[oy * wo + ox] = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: scatter-adds patch columns back into an image.
#[allow(clippy::too_many_arguments)]
pub(crate) fn col2im(
    col: &[f64],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) -> Vec<f64> {
    let mut x = vec![0.0; c * h * w];
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &col[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let base = ci * h * w + iy as usize * w;
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            x[base + ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
    x
}
