//! Dense linear algebra and convolution lowering.

/// Row-major view with explicit strides: element `(i, j)` lives at
/// `ptr[i * rs + j * cs]`.
#[derive(Clone, Copy)]
pub(crate) struct View<'a> {
    pub data: &'a [f32],
    pub rs: usize,
    pub cs: usize,
}

impl<'a> View<'a> {
    pub fn rows(data: &'a [f32], cols: usize) -> Self {
        Self { data, rs: cols, cs: 1 }
    }

    /// Transposed view of a row-major matrix with `cols` columns.
    pub fn transposed(data: &'a [f32], cols: usize) -> Self {
        Self { data, rs: 1, cs: cols }
    }
}

/// `c = beta * c + a (m×k) · b (k×n)`, `c` row-major with `n` columns.
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: View<'_>, b: View<'_>, beta: f32, c: &mut [f32]) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(c.len() >= m * n);
    if k == 0 {
        if beta == 0.0 {
            c[..m * n].fill(0.0);
        } else {
            c[..m * n].iter_mut().for_each(|v| *v *= beta);
        }
        return;
    }
    // SAFETY: the views cover the addressed ranges (checked in debug builds)
    // and `c` is a distinct, exclusively borrowed buffer of at least m*n.
    debug_assert!((m - 1) * a.rs + (k - 1) * a.cs < a.data.len());
    debug_assert!((k - 1) * b.rs + (n - 1) * b.cs < b.data.len());
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of a strided, zero-padded sliding window over a `c×h×w` image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn new(c: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Option<Self> {
        if k == 0 || stride == 0 || h + 2 * pad < k || w + 2 * pad < k {
            return None;
        }
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (w + 2 * pad - k) / stride + 1;
        Some(Self { c, h, w, k, stride, pad, oh, ow })
    }

    pub fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    pub fn positions(&self) -> usize {
        self.oh * self.ow
    }

    #[inline]
    fn source(&self, o: usize, kk: usize, len: usize) -> Option<usize> {
        let v = (o * self.stride + kk) as isize - self.pad as isize;
        (v >= 0 && (v as usize) < len).then_some(v as usize)
    }
}

/// Lower `n` images (sample-major, each `c*h*w`) into a
/// `rows × (n * positions)` column matrix.
pub(crate) fn im2col(g: &ConvGeom, n: usize, x: &[f32], cols: &mut [f32]) {
    let p = g.positions();
    let width = n * p;
    let img = g.c * g.h * g.w;
    debug_assert_eq!(cols.len(), g.rows() * width);
    for ci in 0..g.c {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let r = (ci * g.k + ki) * g.k + kj;
                let row = &mut cols[r * width..(r + 1) * width];
                for s in 0..n {
                    let plane = &x[s * img + ci * g.h * g.w..s * img + (ci + 1) * g.h * g.w];
                    let out = &mut row[s * p..(s + 1) * p];
                    for oy in 0..g.oh {
                        let dst = &mut out[oy * g.ow..(oy + 1) * g.ow];
                        match g.source(oy, ki, g.h) {
                            None => dst.fill(0.0),
                            Some(iy) => {
                                let src = &plane[iy * g.w..(iy + 1) * g.w];
                                for (ox, d) in dst.iter_mut().enumerate() {
                                    *d = match g.source(ox, kj, g.w) {
                                        Some(ix) => src[ix],
                                        None => 0.0,
                                    };
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulate columns back into `n` images.
pub(crate) fn col2im(g: &ConvGeom, n: usize, cols: &[f32], x: &mut [f32]) {
    let p = g.positions();
    let width = n * p;
    let img = g.c * g.h * g.w;
    debug_assert_eq!(cols.len(), g.rows() * width);
    for ci in 0..g.c {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let r = (ci * g.k + ki) * g.k + kj;
                let row = &cols[r * width..(r + 1) * width];
                for s in 0..n {
                    let plane = &mut x[s * img + ci * g.h * g.w..s * img + (ci + 1) * g.h * g.w];
                    let src = &row[s * p..(s + 1) * p];
                    for oy in 0..g.oh {
                        let Some(iy) = g.source(oy, ki, g.h) else { continue };
                        let dst = &mut plane[iy * g.w..(iy + 1) * g.w];
                        for ox in 0..g.ow {
                            if let Some(ix) = g.source(ox, kj, g.w) {
                                dst[ix] += src[oy * g.ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Sample-major `[n][c][p]` to channel-major `[c][n*p]`.
pub(crate) fn to_channel_major(n: usize, c: usize, p: usize, x: &[f32], out: &mut [f32]) {
    for s in 0..n {
        for ch in 0..c {
            out[ch * n * p + s * p..ch * n * p + (s + 1) * p]
                .copy_from_slice(&x[(s * c + ch) * p..(s * c + ch + 1) * p]);
        }
    }
}

/// Inverse of [`to_channel_major`].
pub(crate) fn to_sample_major(n: usize, c: usize, p: usize, x: &[f32], out: &mut [f32]) {
    for s in 0..n {
        for ch in 0..c {
            out[(s * c + ch) * p..(s * c + ch + 1) * p]
                .copy_from_slice(&x[ch * n * p + s * p..ch * n * p + (s + 1) * p]);
        }
    }
}
