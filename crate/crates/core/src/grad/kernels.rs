//! Raw numeric kernels behind the tape operations. Everything here works on
//! flat row-major slices; shape validation happens in the tape.

/// `c = op(a) · op(b)` (or `c += ...` when `accumulate`), where `op(a)` is
/// `m×k` and `op(b)` is `k×n`. A transposed operand is stored in its
/// untransposed row-major layout.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_transposed: bool,
    b: &[f64],
    b_transposed: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_transposed { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_transposed { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the slice lengths were checked above against the logical
    // dimensions, and the strides address exactly those elements.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        self.height + 2 * self.pad + 1 - self.kernel
    }

    pub fn out_width(&self) -> usize {
        self.width + 2 * self.pad + 1 - self.kernel
    }

    pub fn patch_len(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }
}

/// Unfolds one image `[C, H, W]` into a `[C·k·k, OH·OW]` patch matrix.
pub(crate) fn im2col(image: &[f64], g: ConvGeometry, cols: &mut [f64]) {
    let (oh, ow) = (g.out_height(), g.out_width());
    let plane = oh * ow;
    debug_assert_eq!(cols.len(), g.patch_len() * plane);
    for c in 0..g.channels {
        let src = &image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kernel {
            for kj in 0..g.kernel {
                let row = (c * g.kernel + ki) * g.kernel + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..oh {
                    let iy = (oy + ki) as isize - g.pad as isize;
                    let line = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= g.height as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src_row = &src[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, out) in line.iter_mut().enumerate() {
                        let ix = (ox + kj) as isize - g.pad as isize;
                        *out = if ix < 0 || ix >= g.width as isize {
                            0.0
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters a patch matrix back onto an image, accumulating.
pub(crate) fn col2im(cols: &[f64], g: ConvGeometry, image: &mut [f64]) {
    let (oh, ow) = (g.out_height(), g.out_width());
    let plane = oh * ow;
    for c in 0..g.channels {
        let dst = &mut image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kernel {
            for kj in 0..g.kernel {
                let row = (c * g.kernel + ki) * g.kernel + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..oh {
                    let iy = (oy + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let base = iy as usize * g.width;
                    for ox in 0..ow {
                        let ix = (ox + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.width as isize {
                            dst[base + ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Batched convolution forward: input `[N, C, H, W]`, kernels `[F, C, k, k]`,
/// bias `[F]`, output `[N, F, OH, OW]`.
pub(crate) fn conv2d_forward(
    input: &[f64],
    batch: usize,
    kernels: &[f64],
    filters: usize,
    bias: &[f64],
    g: ConvGeometry,
) -> Vec<f64> {
    let plane = g.out_height() * g.out_width();
    let in_len = g.channels * g.height * g.width;
    let mut out = vec![0.0; batch * filters * plane];
    let mut cols = vec![0.0; g.patch_len() * plane];
    for n in 0..batch {
        im2col(&input[n * in_len..(n + 1) * in_len], g, &mut cols);
        let dst = &mut out[n * filters * plane..(n + 1) * filters * plane];
        gemm(filters, g.patch_len(), plane, kernels, false, &cols, false, dst, false);
        for (f, row) in dst.chunks_mut(plane).enumerate() {
            row.iter_mut().for_each(|v| *v += bias[f]);
        }
    }
    out
}

pub(crate) struct ConvGrads {
    pub input: Option<Vec<f64>>,
    pub kernels: Option<Vec<f64>>,
    pub bias: Option<Vec<f64>>,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward(
    upstream: &[f64],
    input: &[f64],
    batch: usize,
    kernels: &[f64],
    filters: usize,
    g: ConvGeometry,
    want_input: bool,
    want_kernels: bool,
    want_bias: bool,
) -> ConvGrads {
    let plane = g.out_height() * g.out_width();
    let in_len = g.channels * g.height * g.width;
    let patch = g.patch_len();
    let mut d_input = want_input.then(|| vec![0.0; batch * in_len]);
    let mut d_kernels = want_kernels.then(|| vec![0.0; filters * patch]);
    let mut d_bias = want_bias.then(|| vec![0.0; filters]);
    let mut cols = vec![0.0; patch * plane];
    let mut d_cols = vec![0.0; patch * plane];
    for n in 0..batch {
        let up = &upstream[n * filters * plane..(n + 1) * filters * plane];
        if let Some(db) = d_bias.as_mut() {
            for (f, row) in up.chunks(plane).enumerate() {
                db[f] += row.iter().sum::<f64>();
            }
        }
        if let Some(dk) = d_kernels.as_mut() {
            im2col(&input[n * in_len..(n + 1) * in_len], g, &mut cols);
            gemm(filters, plane, patch, up, false, &cols, true, dk, true);
        }
        if let Some(dx) = d_input.as_mut() {
            gemm(patch, filters, plane, kernels, true, up, false, &mut d_cols, false);
            col2im(&d_cols, g, &mut dx[n * in_len..(n + 1) * in_len]);
        }
    }
    ConvGrads {
        input: d_input,
        kernels: d_kernels,
        bias: d_bias,
    }
}

/// 2×2 max pooling over `[planes, H, W]`; returns values and the flat input
/// index of each window's maximum (first occurrence in row-major scan).
pub(crate) fn maxpool2_forward(
    input: &[f64],
    planes: usize,
    height: usize,
    width: usize,
) -> (Vec<f64>, Vec<usize>) {
    let (oh, ow) = (height / 2, width / 2);
    let mut values = Vec::with_capacity(planes * oh * ow);
    let mut argmax = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let base = p * height * width;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + 2 * oy * width + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * width + 2 * ox + dx;
                    if input[idx] > input[best] {
                        best = idx;
                    }
                }
                values.push(input[best]);
                argmax.push(best);
            }
        }
    }
    (values, argmax)
}
