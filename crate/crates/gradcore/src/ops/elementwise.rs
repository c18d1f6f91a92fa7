use crate::error::{shape_err, Result};
use crate::graph::{Graph, Op, Var};
use crate::real::Real;
use crate::tensor::{dims4, Tensor};

impl<T: Real> Graph<T> {
    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return shape_err(format!("{what}: {:?} vs {:?}", self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        Tensor::new(self.shape(a).to_vec(), data).expect("same shape")
    }

    fn unary_map(&self, a: Var, f: impl Fn(T) -> T) -> Tensor<T> {
        let data = self.value(a).data().iter().map(|x| f(*x)).collect();
        Tensor::new(self.shape(a).to_vec(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let v = self.zip_map(a, b, |x, y| x + y);
        Ok(self.push(v, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let v = self.zip_map(a, b, |x, y| x - y);
        Ok(self.push(v, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let v = self.zip_map(a, b, |x, y| x * y);
        Ok(self.push(v, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let v = self.unary_map(a, |x| x * s);
        self.push(v, Op::Scale(a, s), &[a])
    }

    /// Multiplies each `(n, c)` plane of an NCHW tensor by a constant
    /// `h x w` map.
    pub fn mul_map(&mut self, a: Var, map: &[T]) -> Result<Var> {
        let [_, _, h, w] = dims4(self.shape(a))?;
        if map.len() != h * w {
            return shape_err(format!("weight map has {} values, planes are {h}x{w}", map.len()));
        }
        let data = self
            .value(a)
            .data()
            .chunks(h * w)
            .flat_map(|plane| plane.iter().zip(map).map(|(x, m)| *x * *m))
            .collect();
        let v = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(v, Op::MulMap(a, map.to_vec()), &[a]))
    }

    /// Elementwise `|a - b|`; the subgradient at zero is 0.
    pub fn abs_diff(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "abs_diff")?;
        let v = self.zip_map(a, b, |x, y| (x - y).abs());
        Ok(self.push(v, Op::AbsDiff(a, b), &[a, b]))
    }

    /// Mean absolute difference.
    pub fn l1_diff(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.abs_diff(a, b)?;
        Ok(self.mean(d))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.unary_map(a, |x| if x > T::zero() { x } else { T::zero() });
        self.push(v, Op::Relu(a), &[a])
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Var {
        let v = self.unary_map(a, |x| if x > T::zero() { x } else { x * slope });
        self.push(v, Op::LeakyRelu(a, slope), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.unary_map(a, |x| x.tanh());
        self.push(v, Op::Tanh(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = T::from_usize(self.value(a).len().max(1)).unwrap();
        let s: T = self.value(a).data().iter().copied().sum();
        self.push(Tensor::scalar(s / n), Op::Mean(a), &[a])
    }

    /// Elementwise binary cross-entropy on logits against a constant target,
    /// `max(z, 0) - z·t + ln(1 + e^{-|z|})`.
    pub fn bce_with_logits(&mut self, logits: Var, target: T) -> Var {
        let v = self.unary_map(logits, |z| {
            z.max(T::zero()) - z * target + (-z.abs()).exp().ln_1p()
        });
        self.push(v, Op::BceLogits(logits, target), &[logits])
    }

    /// Stacks two NCHW tensors along the channel axis.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let [n, ca, h, w] = dims4(self.shape(a))?;
        let [nb, cb, hb, wb] = dims4(self.shape(b))?;
        if (n, h, w) != (nb, hb, wb) {
            return shape_err(format!("concat: {:?} vs {:?}", self.shape(a), self.shape(b)));
        }
        let plane = h * w;
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut data = Vec::with_capacity(n * (ca + cb) * plane);
        for s in 0..n {
            data.extend_from_slice(&av[s * ca * plane..(s + 1) * ca * plane]);
            data.extend_from_slice(&bv[s * cb * plane..(s + 1) * cb * plane]);
        }
        let v = Tensor::new(vec![n, ca + cb, h, w], data)?;
        Ok(self.push(v, Op::ConcatChannels(a, b), &[a, b]))
    }
}
