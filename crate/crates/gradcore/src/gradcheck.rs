use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Lower bound of the relative-error denominator.
const REL_FLOOR: f64 = 1e-3;
/// Near-zero entries are compared against this fraction of the largest
/// gradient magnitude; their central differences are dominated by
/// rounding of the loss value.
const REL_SCALE: f64 = 1e-2;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub checked: usize,
    pub passed: bool,
}

/// Compares reverse-mode gradients with central differences.
///
/// Inputs of the given shapes are drawn uniformly from `[-1, 1)` with
/// `seed`. A non-scalar output is reduced against fixed random weights so
/// every output element contributes. The relative error of each input
/// element is `|analytic - numeric| / max(|analytic|, |numeric|, floor)`
/// with `floor = max(1e-3, 1e-2 · max|analytic|)`.
pub fn grad_check<F>(op: F, shapes: &[Vec<usize>], seed: u64, h: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs: Vec<Tensor<f64>> = shapes
        .iter()
        .map(|s| {
            let n = s.iter().product();
            Tensor::new(s.clone(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
        })
        .collect::<Result<_>>()?;

    // probe once for the output size, then fix the reduction weights
    let out_len = {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), false)).collect();
        let out = op(&mut g, &vars)?;
        g.value(out).len()
    };
    let weights: Vec<f64> = (0..out_len).map(|_| rng.gen_range(0.5..1.5)).collect();

    let eval = |inputs: &[Tensor<f64>], track: bool| -> Result<(f64, Vec<Vec<f64>>)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), track)).collect();
        let out = op(&mut g, &vars)?;
        let loss = if out_len == 1 {
            out
        } else {
            let shape = g.shape(out).to_vec();
            let w = g.constant(Tensor::new(shape, weights.clone())?);
            let p = g.mul(out, w)?;
            g.sum(p)
        };
        let value = g.value(loss).item();
        if !track {
            return Ok((value, Vec::new()));
        }
        g.backward(loss)?;
        let grads = vars
            .iter()
            .zip(inputs)
            .map(|(v, t)| g.grad(*v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.len()]))
            .collect();
        Ok((value, grads))
    };

    let (_, analytic) = eval(&inputs, true)?;
    let peak = analytic.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = REL_FLOOR.max(REL_SCALE * peak);
    let mut max_rel: f64 = 0.0;
    let mut checked = 0;
    let mut probe = inputs.clone();
    for (ti, t) in inputs.iter().enumerate() {
        for j in 0..t.len() {
            let orig = t.data()[j];
            probe[ti].data_mut()[j] = orig + h;
            let (plus, _) = eval(&probe, false)?;
            probe[ti].data_mut()[j] = orig - h;
            let (minus, _) = eval(&probe, false)?;
            probe[ti].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[ti][j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            max_rel = max_rel.max(rel);
            checked += 1;
        }
    }
    Ok(GradCheckReport { max_rel_error: max_rel, tolerance, checked, passed: max_rel < tolerance })
}
