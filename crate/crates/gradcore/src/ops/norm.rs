use crate::error::{shape_err, Result};
use crate::graph::{Ctx, Grads, Graph, Op, Var};
use crate::real::Real;
use crate::tensor::{dims4, Tensor};

pub const INSTANCE_NORM_EPS: f64 = 1e-5;

impl<T: Real> Graph<T> {
    /// Per-sample, per-channel standardization followed by a per-channel
    /// affine map `gain·x̂ + shift`. Uses the population variance with
    /// `1e-5` added under the square root.
    pub fn instance_norm(&mut self, x: Var, gain: Var, shift: Var) -> Result<Var> {
        let [n, c, h, w] = dims4(self.shape(x))?;
        if self.value(gain).len() != c || self.value(shift).len() != c {
            return shape_err(format!("instance_norm: affine parameters must have {c} entries"));
        }
        let plane = h * w;
        let inv_n = T::one() / T::from_usize(plane).unwrap();
        let eps = T::lit(INSTANCE_NORM_EPS);
        let xv = self.value(x).data();
        let gv = self.value(gain).data();
        let sv = self.value(shift).data();
        let mut xhat = vec![T::zero(); xv.len()];
        let mut inv_std = vec![T::zero(); n * c];
        let mut out = vec![T::zero(); xv.len()];
        for s in 0..n {
            for ch in 0..c {
                let idx = s * c + ch;
                let src = &xv[idx * plane..(idx + 1) * plane];
                let mean = src.iter().copied().sum::<T>() * inv_n;
                let var = src.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() * inv_n;
                let istd = T::one() / (var + eps).sqrt();
                inv_std[idx] = istd;
                let xh = &mut xhat[idx * plane..(idx + 1) * plane];
                let dst = &mut out[idx * plane..(idx + 1) * plane];
                for i in 0..plane {
                    xh[i] = (src[i] - mean) * istd;
                    dst[i] = gv[ch] * xh[i] + sv[ch];
                }
            }
        }
        let value = Tensor::new(self.shape(x).to_vec(), out)?;
        Ok(self.push(value, Op::InstanceNorm { x, gain, shift, xhat, inv_std }, &[x, gain, shift]))
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn instance_norm_backward<T: Real>(
    ctx: &Ctx<'_, T>,
    grads: &mut Grads<T>,
    x: Var,
    gain: Var,
    shift: Var,
    xhat: &[T],
    inv_std: &[T],
    gout: &[T],
) {
    let [n, c, h, w] = ctx.dims(x);
    let plane = h * w;
    let gv = ctx.val(gain);
    let count = T::from_usize(plane).unwrap();
    ctx.acc(grads, shift, |g| {
        for s in 0..n {
            for ch in 0..c {
                let idx = s * c + ch;
                g[ch] += gout[idx * plane..(idx + 1) * plane].iter().copied().sum::<T>();
            }
        }
    });
    ctx.acc(grads, gain, |g| {
        for s in 0..n {
            for ch in 0..c {
                let idx = s * c + ch;
                let r = idx * plane..(idx + 1) * plane;
                g[ch] += gout[r.clone()].iter().zip(&xhat[r]).map(|(a, b)| *a * *b).sum::<T>();
            }
        }
    });
    ctx.acc(grads, x, |g| {
        for s in 0..n {
            for ch in 0..c {
                let idx = s * c + ch;
                let r = idx * plane..(idx + 1) * plane;
                let go = &gout[r.clone()];
                let xh = &xhat[r.clone()];
                // dx = istd/N · (N·dx̂ - Σdx̂ - x̂·Σ(dx̂·x̂)),  dx̂ = gain·dy
                let sum_d = go.iter().copied().sum::<T>() * gv[ch];
                let sum_dx = go.iter().zip(xh).map(|(a, b)| *a * *b).sum::<T>() * gv[ch];
                let k = inv_std[idx] / count;
                for (i, gi) in g[r].iter_mut().enumerate() {
                    *gi += k * (count * gv[ch] * go[i] - sum_d - xh[i] * sum_dx);
                }
            }
        }
    });
}
