//! Generator, patch discriminator and frozen feature network.
//!
//! Each network owns a [`ParamStore`] plus a flat layer plan that refers to
//! parameters by store index. `forward` expects the store to be bound to the
//! graph (see [`ParamStore::bind`]) and receives the bound variables.

use gradcore::{Checkpoint, Graph, ParamStore, Real, Tensor, Var};

use crate::error::{arg, Error, Result};
use crate::model::arch::{ArchConfig, DiscriminatorConfig, FeatureNetConfig, FeatureWeights, FinalActivation};

#[derive(Clone, Copy, Debug)]
struct Conv {
    w: usize,
    b: usize,
    stride: usize,
    pad: usize,
}

#[derive(Clone, Copy, Debug)]
struct Norm {
    gain: usize,
    shift: usize,
}

#[derive(Clone, Copy, Debug)]
enum Layer {
    Conv(Conv),
    ConvT(Conv),
    Norm(Norm),
    Relu,
    Leaky,
    Tanh,
    /// `x + norm2(conv2(relu(norm1(conv1(x)))))`
    Residual { c1: Conv, n1: Norm, c2: Conv, n2: Norm },
}

fn add_conv<T: Real>(p: &mut ParamStore<T>, name: &str, cin: usize, cout: usize, k: usize, stride: usize, pad: usize) -> Result<Conv> {
    let w = p.add_kaiming(format!("{name}.weight"), &[cout, cin, k, k], cin * k * k)?;
    let b = p.add_full(format!("{name}.bias"), &[cout], T::zero())?;
    Ok(Conv { w, b, stride, pad })
}

/// Transposed conv weight `(in, out, k, k)`; each output sees about
/// `in·k²/stride²` taps.
fn add_conv_t<T: Real>(p: &mut ParamStore<T>, name: &str, cin: usize, cout: usize, k: usize) -> Result<Conv> {
    let w = p.add_kaiming(format!("{name}.weight"), &[cin, cout, k, k], cin * k * k / 4)?;
    let b = p.add_full(format!("{name}.bias"), &[cout], T::zero())?;
    Ok(Conv { w, b, stride: 2, pad: 1 })
}

fn add_norm<T: Real>(p: &mut ParamStore<T>, name: &str, c: usize) -> Result<Norm> {
    let gain = p.add_full(format!("{name}.gain"), &[c], T::one())?;
    let shift = p.add_full(format!("{name}.shift"), &[c], T::zero())?;
    Ok(Norm { gain, shift })
}

fn run<T: Real>(g: &mut Graph<T>, vars: &[Var], plan: &[Layer], slope: T, mut x: Var) -> Result<Var> {
    let conv = |g: &mut Graph<T>, c: &Conv, x: Var| g.conv2d(x, vars[c.w], Some(vars[c.b]), c.stride, c.pad);
    let norm = |g: &mut Graph<T>, n: &Norm, x: Var| g.instance_norm(x, vars[n.gain], vars[n.shift]);
    for layer in plan {
        x = match layer {
            Layer::Conv(c) => conv(g, c, x)?,
            Layer::ConvT(c) => g.conv_transpose2d(x, vars[c.w], Some(vars[c.b]), c.stride, c.pad)?,
            Layer::Norm(n) => norm(g, n, x)?,
            Layer::Relu => g.relu(x),
            Layer::Leaky => g.leaky_relu(x, slope),
            Layer::Tanh => g.tanh(x),
            Layer::Residual { c1, n1, c2, n2 } => {
                let h = conv(g, c1, x)?;
                let h = norm(g, n1, h)?;
                let h = g.relu(h);
                let h = conv(g, c2, h)?;
                let h = norm(g, n2, h)?;
                g.add(x, h)?
            }
        };
    }
    Ok(x)
}

fn check_vars<T: Real>(store: &ParamStore<T>, vars: &[Var]) -> Result<()> {
    if vars.len() != store.len() {
        return arg(format!("{} bound variables for {} parameters", vars.len(), store.len()));
    }
    Ok(())
}

/// Encoder-decoder translation network mapping `(1,1,H,W)` to `(1,1,H,W)`.
#[derive(Clone, Debug)]
pub struct Generator<T: Real> {
    pub config: ArchConfig,
    pub params: ParamStore<T>,
    plan: Vec<Layer>,
}

impl<T: Real> Generator<T> {
    pub fn new(config: &ArchConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut p = ParamStore::new(seed);
        let mut plan = Vec::new();
        let ch = &config.channels;
        let (ko, k) = (config.outer_kernel, config.kernel);
        let last = config.levels - 1;

        plan.push(Layer::Conv(add_conv(&mut p, "stem", 1, ch[0], ko, 1, ko / 2)?));
        plan.push(Layer::Norm(add_norm(&mut p, "stem.norm", ch[0])?));
        plan.push(Layer::Relu);
        for l in 1..config.levels {
            plan.push(Layer::Conv(add_conv(&mut p, &format!("down{l}"), ch[l - 1], ch[l], k, 2, k / 2)?));
            plan.push(Layer::Norm(add_norm(&mut p, &format!("down{l}.norm"), ch[l])?));
            plan.push(Layer::Relu);
        }
        let residual = |p: &mut ParamStore<T>, level: usize, i: usize| -> Result<Layer> {
            let name = format!("res{level}_{i}");
            let c = ch[level];
            Ok(Layer::Residual {
                c1: add_conv(p, &format!("{name}.conv1"), c, c, k, 1, k / 2)?,
                n1: add_norm(p, &format!("{name}.norm1"), c)?,
                c2: add_conv(p, &format!("{name}.conv2"), c, c, k, 1, k / 2)?,
                n2: add_norm(p, &format!("{name}.norm2"), c)?,
            })
        };
        for i in 0..config.resblocks[last] {
            plan.push(residual(&mut p, last, i)?);
        }
        for l in (1..config.levels).rev() {
            plan.push(Layer::ConvT(add_conv_t(&mut p, &format!("up{l}"), ch[l], ch[l - 1], config.up_kernel)?));
            plan.push(Layer::Norm(add_norm(&mut p, &format!("up{l}.norm"), ch[l - 1])?));
            plan.push(Layer::Relu);
            for i in 0..config.resblocks[l - 1] {
                plan.push(residual(&mut p, l - 1, i)?);
            }
        }
        plan.push(Layer::Conv(add_conv(&mut p, "out", ch[0], 1, ko, 1, ko / 2)?));
        if config.final_activation == FinalActivation::Tanh {
            plan.push(Layer::Tanh);
        }
        Ok(Self { config: config.clone(), params: p, plan })
    }

    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        let m = self.config.size_multiple();
        match shape {
            [1, 1, h, w] if h % m == 0 && w % m == 0 && *h > 0 && *w > 0 => Ok(()),
            [1, 1, h, w] => Err(gradcore::GradError::Shape(format!("generator input {h}x{w} must be a multiple of {m}")).into()),
            other => Err(gradcore::GradError::Shape(format!("generator expects (1,1,H,W), got {other:?}")).into()),
        }
    }

    pub fn forward(&self, g: &mut Graph<T>, vars: &[Var], x: Var) -> Result<Var> {
        check_vars(&self.params, vars)?;
        self.check_input(g.shape(x))?;
        run(g, vars, &self.plan, T::zero(), x)
    }

    /// Gradient-free forward pass on a single-channel image.
    pub fn predict(&self, image: &[T], h: usize, w: usize) -> Result<Vec<T>> {
        let mut g = Graph::new();
        let vars = self.params.bind(&mut g, false);
        let x = g.constant(Tensor::new([1, 1, h, w], image.to_vec())?);
        let y = self.forward(&mut g, &vars, x)?;
        Ok(g.value(y).data().to_vec())
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }
}

/// Conditional patch classifier on the channel stack `(condition, candidate)`.
#[derive(Clone, Debug)]
pub struct Discriminator<T: Real> {
    pub config: DiscriminatorConfig,
    pub params: ParamStore<T>,
    plan: Vec<Layer>,
}

impl<T: Real> Discriminator<T> {
    pub fn new(config: &DiscriminatorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut p = ParamStore::new(seed);
        let b = config.base_channels;
        let mut plan = vec![Layer::Conv(add_conv(&mut p, "c1", 2, b, 4, 2, 1)?), Layer::Leaky];
        let stages = [(b, 2 * b, 2), (2 * b, 4 * b, 2), (4 * b, 8 * b, 1)];
        for (i, (cin, cout, stride)) in stages.into_iter().enumerate() {
            let name = format!("c{}", i + 2);
            plan.push(Layer::Conv(add_conv(&mut p, &name, cin, cout, 4, stride, 1)?));
            plan.push(Layer::Norm(add_norm(&mut p, &format!("{name}.norm"), cout)?));
            plan.push(Layer::Leaky);
        }
        plan.push(Layer::Conv(add_conv(&mut p, "c5", 8 * b, 1, 4, 1, 1)?));
        Ok(Self { config: config.clone(), params: p, plan })
    }

    /// Logits for the pair `(condition, candidate)`, both `(1,1,H,W)`.
    pub fn forward(&self, g: &mut Graph<T>, vars: &[Var], condition: Var, candidate: Var) -> Result<Var> {
        check_vars(&self.params, vars)?;
        let [_, _, h, w] = g.value(condition).nchw()?;
        if self.config.output_size(h).is_none() || self.config.output_size(w).is_none() {
            return Err(gradcore::GradError::Shape(format!("discriminator input {h}x{w} is too small")).into());
        }
        let x = g.concat_channels(condition, candidate)?;
        run(g, vars, &self.plan, T::lit(self.config.leaky_slope()), x)
    }

    /// Sets every parameter to zero.
    pub fn zero_all(&mut self) {
        for i in 0..self.params.len() {
            self.params.value_mut(i).data_mut().fill(T::zero());
        }
    }
}

/// Frozen convolutional feature extractor; stage `s` (1-based) yields maps
/// at `1 / 2^s` of the input resolution.
#[derive(Clone, Debug)]
pub struct FeatureNet<T: Real> {
    pub config: FeatureNetConfig,
    params: ParamStore<T>,
    stages: Vec<Conv>,
}

pub const FEATURE_PREFIX: &str = "feat.";

impl<T: Real> FeatureNet<T> {
    pub fn new(config: &FeatureNetConfig) -> Result<Self> {
        config.validate()?;
        let mut p = ParamStore::new(config.seed);
        let mut stages = Vec::with_capacity(config.stages);
        let mut cin = 1;
        for (s, &cout) in config.channels.iter().enumerate() {
            stages.push(add_conv(&mut p, &format!("stage{}", s + 1), cin, cout, 3, 2, 1)?);
            cin = cout;
        }
        if let FeatureWeights::Loaded(path) = &config.weights {
            let ckpt = Checkpoint::load(std::path::Path::new(path)).map_err(Error::from)?;
            ckpt.load_store(FEATURE_PREFIX, &mut p)?;
        }
        Ok(Self { config: config.clone(), params: p, stages })
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    /// Binds the frozen weights as constants.
    pub fn bind(&self, g: &mut Graph<T>) -> Vec<Var> {
        self.params.bind(g, false)
    }

    /// Activation maps of every stage.
    pub fn forward(&self, g: &mut Graph<T>, vars: &[Var], x: Var) -> Result<Vec<Var>> {
        check_vars(&self.params, vars)?;
        let mut out = Vec::with_capacity(self.stages.len());
        let mut h = x;
        for c in &self.stages {
            h = g.conv2d(h, vars[c.w], Some(vars[c.b]), c.stride, c.pad)?;
            h = g.relu(h);
            out.push(h);
        }
        Ok(out)
    }
}
