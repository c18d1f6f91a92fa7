use crate::error::{GradError, Result};
use crate::real::Real;

/// Bilinear resampling of a row-major `h x w` image.
///
/// Half-pixel-center convention: output index `i` samples the source at
/// `(i + 0.5)·(src/dst) - 0.5`, clamped to the valid range. Not
/// differentiated; only constant weight maps go through it.
pub fn bilinear_resize<T: Real>(img: &[T], h: usize, w: usize, new_h: usize, new_w: usize) -> Result<Vec<T>> {
    if h == 0 || w == 0 || new_h == 0 || new_w == 0 {
        return Err(GradError::Argument(format!("cannot resize {h}x{w} to {new_h}x{new_w}")));
    }
    if img.len() != h * w {
        return Err(GradError::Shape(format!("image has {} values, expected {h}x{w}", img.len())));
    }
    let taps = |src: usize, dst: usize| -> Vec<(usize, usize, T)> {
        let scale = src as f64 / dst as f64;
        (0..dst)
            .map(|i| {
                let pos = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
                let i0 = pos.floor() as usize;
                let i1 = (i0 + 1).min(src - 1);
                (i0, i1, T::lit(pos - i0 as f64))
            })
            .collect()
    };
    let rows = taps(h, new_h);
    let cols = taps(w, new_w);
    let mut out = Vec::with_capacity(new_h * new_w);
    for &(r0, r1, fy) in &rows {
        for &(c0, c1, fx) in &cols {
            let top = img[r0 * w + c0] * (T::one() - fx) + img[r0 * w + c1] * fx;
            let bottom = img[r1 * w + c0] * (T::one() - fx) + img[r1 * w + c1] * fx;
            out.push(top * (T::one() - fy) + bottom * fy);
        }
    }
    Ok(out)
}
