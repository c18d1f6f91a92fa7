//! Safe wrappers around the strided matrix kernel plus the im2col/col2im
//! lowering used by both convolution directions.

use rayon::prelude::*;

use crate::real::Real;

/// Below this many multiply-adds a product runs on the calling thread.
const PAR_THRESHOLD: usize = 1 << 21;

/// Strided view of a matrix operand.
#[derive(Clone, Copy)]
pub(crate) struct Mat<'a, T> {
    pub data: &'a [T],
    pub rs: usize,
    pub cs: usize,
}

impl<'a, T> Mat<'a, T> {
    pub fn rows(data: &'a [T], cols: usize) -> Self {
        Self { data, rs: cols, cs: 1 }
    }

    /// Transposed view of a row-major `rows x cols` matrix.
    pub fn transposed(data: &'a [T], cols: usize) -> Self {
        Self { data, rs: 1, cs: cols }
    }

    fn check(&self, m: usize, n: usize) {
        if m > 0 && n > 0 {
            let last = (m - 1) * self.rs + (n - 1) * self.cs;
            assert!(last < self.data.len(), "matrix view out of bounds");
        }
    }
}

/// `c (m x n, row-major) = a·b + beta·c`.
///
/// Large products are split by output rows across the rayon pool. Each
/// output element is always produced by a single kernel call with the same
/// reduction order, so results do not depend on the thread count.
pub(crate) fn gemm<T: Real>(m: usize, k: usize, n: usize, a: Mat<'_, T>, b: Mat<'_, T>, beta: T, c: &mut [T]) {
    assert_eq!(c.len(), m * n, "output buffer size");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v = *v * beta);
        return;
    }
    a.check(m, k);
    b.check(k, n);
    let threads = rayon::current_num_threads();
    if threads <= 1 || m * n * k < PAR_THRESHOLD || m < 2 {
        unsafe { gemm_block(m, k, n, a, 0, b, beta, c) };
        return;
    }
    let rows_per = m.div_ceil(threads);
    c.par_chunks_mut(rows_per * n).enumerate().for_each(|(i, chunk)| {
        let row0 = i * rows_per;
        let rows = chunk.len() / n;
        unsafe { gemm_block(rows, k, n, a, row0, b, beta, chunk) };
    });
}

/// # Safety
/// Caller guarantees the row range `row0..row0 + m` of `a` is in bounds.
#[allow(clippy::too_many_arguments)]
unsafe fn gemm_block<T: Real>(m: usize, k: usize, n: usize, a: Mat<'_, T>, row0: usize, b: Mat<'_, T>, beta: T, c: &mut [T]) {
    T::gemm_raw(
        m,
        k,
        n,
        T::one(),
        a.data.as_ptr().add(row0 * a.rs),
        a.rs as isize,
        a.cs as isize,
        b.data.as_ptr(),
        b.rs as isize,
        b.cs as isize,
        beta,
        c.as_mut_ptr(),
        n as isize,
        1,
    )
}

/// Geometry of a sliding window over a `channels x h x w` image.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Window {
    pub channels: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl Window {
    pub fn col_rows(&self) -> usize {
        self.channels * self.k * self.k
    }

    pub fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Calls `f(col_index, image_index)` for every in-bounds tap, grouped by
    /// column row. Padding taps are skipped.
    #[inline]
    fn for_each_row(&self, mut f: impl FnMut(usize, usize, usize, usize, isize, isize)) {
        let kk = self.k * self.k;
        for c in 0..self.channels {
            for ki in 0..self.k {
                for kj in 0..self.k {
                    let row = c * kk + ki * self.k + kj;
                    f(row, c, ki, kj, ki as isize - self.pad as isize, kj as isize - self.pad as isize);
                }
            }
        }
    }
}

/// Unfolds image patches into columns: `(C·k·k) x (out_h·out_w)`.
pub(crate) fn im2col<T: Real>(img: &[T], win: &Window, cols: &mut [T]) {
    let ncol = win.col_cols();
    debug_assert_eq!(img.len(), win.channels * win.h * win.w);
    debug_assert_eq!(cols.len(), win.col_rows() * ncol);
    let (h, w, s) = (win.h as isize, win.w as isize, win.stride as isize);
    win.for_each_row(|row, c, _, _, di, dj| {
        let dst = &mut cols[row * ncol..(row + 1) * ncol];
        let plane = &img[c * win.h * win.w..(c + 1) * win.h * win.w];
        for oy in 0..win.out_h {
            let iy = oy as isize * s + di;
            let line = &mut dst[oy * win.out_w..(oy + 1) * win.out_w];
            if iy < 0 || iy >= h {
                line.iter_mut().for_each(|v| *v = T::zero());
                continue;
            }
            let src = &plane[iy as usize * win.w..(iy as usize + 1) * win.w];
            for (ox, v) in line.iter_mut().enumerate() {
                let ix = ox as isize * s + dj;
                *v = if ix < 0 || ix >= w { T::zero() } else { src[ix as usize] };
            }
        }
    });
}

/// Adjoint of [`im2col`]: scatters columns back and accumulates into `img`.
pub(crate) fn col2im<T: Real>(cols: &[T], win: &Window, img: &mut [T]) {
    let ncol = win.col_cols();
    debug_assert_eq!(img.len(), win.channels * win.h * win.w);
    let (h, w, s) = (win.h as isize, win.w as isize, win.stride as isize);
    win.for_each_row(|row, c, _, _, di, dj| {
        let src = &cols[row * ncol..(row + 1) * ncol];
        let plane = &mut img[c * win.h * win.w..(c + 1) * win.h * win.w];
        for oy in 0..win.out_h {
            let iy = oy as isize * s + di;
            if iy < 0 || iy >= h {
                continue;
            }
            let dst = &mut plane[iy as usize * win.w..(iy as usize + 1) * win.w];
            let line = &src[oy * win.out_w..(oy + 1) * win.out_w];
            for (ox, v) in line.iter().enumerate() {
                let ix = ox as isize * s + dj;
                if ix >= 0 && ix < w {
                    dst[ix as usize] += *v;
                }
            }
        }
    });
}
