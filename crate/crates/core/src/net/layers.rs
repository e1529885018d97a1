use rand::Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::persist::ParamArray;

/// Anything that owns named parameter tensors with matching gradient buffers.
pub trait Parameterized {
    /// Visits `(name, value, grad)` in a fixed order.
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor, &Tensor));
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor, &mut Tensor));

    fn zero_grad(&mut self) {
        self.visit_params_mut(&mut |_, _, g| g.fill(0.0));
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, p, _| n += p.len());
        n
    }

    fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit_params(&mut |_, p, _| out.extend_from_slice(p.data()));
        out
    }

    fn flat_grads(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit_params(&mut |_, _, g| out.extend_from_slice(g.data()));
        out
    }

    fn set_flat_params(&mut self, values: &[f64]) {
        let mut off = 0;
        self.visit_params_mut(&mut |_, p, _| {
            let n = p.len();
            p.data_mut().copy_from_slice(&values[off..off + n]);
            off += n;
        });
    }

    fn to_param_arrays(&self) -> Vec<ParamArray> {
        let mut out = Vec::new();
        self.visit_params(&mut |name, p, _| {
            out.push(ParamArray {
                name: name.to_string(),
                shape: p.shape().to_vec(),
                data: p.data().to_vec(),
            })
        });
        out
    }

    /// Loads every parameter by name; names and shapes must match exactly.
    fn load_param_arrays(&mut self, arrays: &[ParamArray]) -> Result<()> {
        let mut err = None;
        let mut seen = 0;
        self.visit_params_mut(&mut |name, p, _| {
            if err.is_some() {
                return;
            }
            match arrays.iter().find(|a| a.name == name) {
                Some(a) if a.shape == p.shape() => {
                    p.data_mut().copy_from_slice(&a.data);
                    seen += 1;
                }
                Some(a) => {
                    err = Some(Error::Checkpoint(format!(
                        "{name}: shape {:?} != expected {:?}",
                        a.shape,
                        p.shape()
                    )))
                }
                None => err = Some(Error::Checkpoint(format!("missing parameter {name}"))),
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        if seen != arrays.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} arrays, model uses {seen}",
                arrays.len()
            )));
        }
        Ok(())
    }
}

/// Fully connected layer, `y = x Wᵀ + b` with `W: [out, in]`.
#[derive(Debug, Clone)]
pub struct Dense {
    name: String,
    w_name: String,
    b_name: String,
    pub(crate) w: Tensor,
    pub(crate) b: Tensor,
    gw: Tensor,
    gb: Tensor,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(name: impl Into<String>, inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let w = Tensor::he_normal(&[outputs, inputs], inputs, rng);
        Self::from_weights(name, w, Tensor::zeros(&[outputs])).expect("consistent shapes")
    }

    pub fn from_weights(name: impl Into<String>, w: Tensor, b: Tensor) -> Result<Self> {
        let name = name.into();
        if w.shape().len() != 2 || b.shape() != [w.shape()[0]] {
            return Err(Error::shape(
                name,
                format!("weight {:?} and bias {:?} disagree", w.shape(), b.shape()),
            ));
        }
        Ok(Dense {
            w_name: format!("{name}/w"),
            b_name: format!("{name}/b"),
            gw: Tensor::zeros(w.shape()),
            gb: Tensor::zeros(b.shape()),
            name,
            w,
            b,
        })
    }

    pub fn inputs(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn weight(&self) -> &Tensor {
        &self.w
    }

    pub fn bias(&self) -> &Tensor {
        &self.b
    }

    pub fn weight_mut(&mut self) -> &mut Tensor {
        &mut self.w
    }

    pub fn bias_mut(&mut self) -> &mut Tensor {
        &mut self.b
    }

    fn check(&self, x: &Tensor) -> Result<()> {
        if x.shape().len() != 2 || x.shape()[1] != self.inputs() {
            return Err(Error::shape(
                &self.name,
                format!("expected [B, {}], got {:?}", self.inputs(), x.shape()),
            ));
        }
        Ok(())
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check(x)?;
        let (n_in, n_out) = (self.inputs(), self.outputs());
        let batch = x.batch();
        let w = self.w.data();
        let mut out = Vec::with_capacity(batch * n_out);
        for r in 0..batch {
            let xr = x.row(r);
            for o in 0..n_out {
                let wr = &w[o * n_in..(o + 1) * n_in];
                let dot: f64 = wr.iter().zip(xr).map(|(a, b)| a * b).sum();
                out.push(dot + self.b.data()[o]);
            }
        }
        Tensor::new(vec![batch, n_out], out)
    }

    fn check_upstream(&self, x: &Tensor, gy: &Tensor) -> Result<()> {
        self.check(x)?;
        if gy.shape() != [x.batch(), self.outputs()] {
            return Err(Error::shape(&self.name, format!("bad upstream gradient {:?}", gy.shape())));
        }
        Ok(())
    }

    fn grad_input(&self, x: &Tensor, gy: &Tensor) -> Result<Tensor> {
        self.check_upstream(x, gy)?;
        let n_in = self.inputs();
        let batch = x.batch();
        let mut gx = vec![0.0; batch * n_in];
        let w = self.w.data();
        for r in 0..batch {
            let gxr = &mut gx[r * n_in..(r + 1) * n_in];
            for (o, &go) in gy.row(r).iter().enumerate() {
                if go == 0.0 {
                    continue;
                }
                for (a, &wv) in gxr.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                    *a += go * wv;
                }
            }
        }
        Tensor::new(vec![batch, n_in], gx)
    }

    fn accumulate(&mut self, x: &Tensor, gy: &Tensor) -> Result<()> {
        self.check_upstream(x, gy)?;
        let n_in = self.inputs();
        let gw = self.gw.data_mut();
        let gb = self.gb.data_mut();
        for r in 0..x.batch() {
            let xr = x.row(r);
            for (o, &go) in gy.row(r).iter().enumerate() {
                gb[o] += go;
                for (a, &xv) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(xr) {
                    *a += go * xv;
                }
            }
        }
        Ok(())
    }
}

/// 3×3×3 convolution with zero padding of one voxel. With stride `s` a side of
/// length `n` maps to `ceil(n / s)`.
#[derive(Debug, Clone)]
pub struct Conv3d {
    name: String,
    w_name: String,
    b_name: String,
    stride: usize,
    pub(crate) w: Tensor,
    pub(crate) b: Tensor,
    gw: Tensor,
    gb: Tensor,
}

pub const KERNEL: usize = 3;
const K3: usize = KERNEL * KERNEL * KERNEL;

impl Conv3d {
    pub fn new<R: Rng + ?Sized>(
        name: impl Into<String>,
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        let w = Tensor::he_normal(
            &[out_channels, in_channels, KERNEL, KERNEL, KERNEL],
            in_channels * K3,
            rng,
        );
        Self::from_weights(name, w, Tensor::zeros(&[out_channels]), stride).expect("consistent shapes")
    }

    pub fn from_weights(name: impl Into<String>, w: Tensor, b: Tensor, stride: usize) -> Result<Self> {
        let name = name.into();
        let s = w.shape();
        if s.len() != 5 || s[2..] != [KERNEL, KERNEL, KERNEL] || b.shape() != [s[0]] || stride == 0 {
            return Err(Error::shape(
                name,
                format!("conv kernel must be [out, in, 3, 3, 3] with bias [out], got {s:?}"),
            ));
        }
        Ok(Conv3d {
            w_name: format!("{name}/w"),
            b_name: format!("{name}/b"),
            gw: Tensor::zeros(w.shape()),
            gb: Tensor::zeros(b.shape()),
            name,
            stride,
            w,
            b,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn output_side(&self, side: usize) -> usize {
        (side - 1) / self.stride + 1
    }

    fn check(&self, x: &Tensor) -> Result<usize> {
        let s = x.shape();
        if s.len() != 5 || s[1] != self.in_channels() || s[2] != s[3] || s[3] != s[4] || s[2] == 0 {
            return Err(Error::shape(
                &self.name,
                format!("expected [B, {}, n, n, n], got {s:?}", self.in_channels()),
            ));
        }
        Ok(s[2])
    }

    /// Calls `f(out_index, in_index, kernel_index)` for every in-range tap.
    #[inline]
    fn for_each_tap(side: usize, stride: usize, out_side: usize, mut f: impl FnMut(usize, usize, usize)) {
        for oi in 0..out_side {
            for oj in 0..out_side {
                for ok in 0..out_side {
                    let o = (oi * out_side + oj) * out_side + ok;
                    for di in 0..KERNEL {
                        let ii = (oi * stride + di) as isize - 1;
                        if ii < 0 || ii >= side as isize {
                            continue;
                        }
                        for dj in 0..KERNEL {
                            let jj = (oj * stride + dj) as isize - 1;
                            if jj < 0 || jj >= side as isize {
                                continue;
                            }
                            for dk in 0..KERNEL {
                                let kk = (ok * stride + dk) as isize - 1;
                                if kk < 0 || kk >= side as isize {
                                    continue;
                                }
                                let xi = (ii as usize * side + jj as usize) * side + kk as usize;
                                f(o, xi, (di * KERNEL + dj) * KERNEL + dk);
                            }
                        }
                    }
                }
            }
        }
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let side = self.check(x)?;
        let (cin, cout) = (self.in_channels(), self.out_channels());
        let os = self.output_side(side);
        let (vin, vout) = (side.pow(3), os.pow(3));
        let batch = x.batch();
        let mut out = vec![0.0; batch * cout * vout];
        let w = self.w.data();
        let xd = x.data();
        for b in 0..batch {
            for co in 0..cout {
                let ob = &mut out[(b * cout + co) * vout..(b * cout + co + 1) * vout];
                ob.iter_mut().for_each(|v| *v = self.b.data()[co]);
                for ci in 0..cin {
                    let xb = &xd[(b * cin + ci) * vin..(b * cin + ci + 1) * vin];
                    let wk = &w[(co * cin + ci) * K3..(co * cin + ci + 1) * K3];
                    Self::for_each_tap(side, self.stride, os, |o, xi, k| ob[o] += wk[k] * xb[xi]);
                }
            }
        }
        Tensor::new(vec![batch, cout, os, os, os], out)
    }

    fn check_upstream(&self, x: &Tensor, gy: &Tensor) -> Result<usize> {
        let side = self.check(x)?;
        let os = self.output_side(side);
        if gy.shape() != [x.batch(), self.out_channels(), os, os, os] {
            return Err(Error::shape(&self.name, format!("bad upstream gradient {:?}", gy.shape())));
        }
        Ok(side)
    }

    fn grad_input(&self, x: &Tensor, gy: &Tensor) -> Result<Tensor> {
        let side = self.check_upstream(x, gy)?;
        let (cin, cout) = (self.in_channels(), self.out_channels());
        let os = self.output_side(side);
        let (vin, vout) = (side.pow(3), os.pow(3));
        let mut gx = vec![0.0; x.len()];
        let w = self.w.data();
        let gyd = gy.data();
        for b in 0..x.batch() {
            for co in 0..cout {
                let g = &gyd[(b * cout + co) * vout..(b * cout + co + 1) * vout];
                for ci in 0..cin {
                    let xoff = (b * cin + ci) * vin;
                    let wk = &w[(co * cin + ci) * K3..(co * cin + ci + 1) * K3];
                    let gxb = &mut gx[xoff..xoff + vin];
                    Self::for_each_tap(side, self.stride, os, |o, xi, k| gxb[xi] += g[o] * wk[k]);
                }
            }
        }
        Tensor::new(x.shape().to_vec(), gx)
    }

    fn accumulate(&mut self, x: &Tensor, gy: &Tensor) -> Result<()> {
        let side = self.check_upstream(x, gy)?;
        let (cin, cout) = (self.in_channels(), self.out_channels());
        let os = self.output_side(side);
        let (vin, vout) = (side.pow(3), os.pow(3));
        let xd = x.data();
        let gyd = gy.data();
        for b in 0..x.batch() {
            for co in 0..cout {
                let g = &gyd[(b * cout + co) * vout..(b * cout + co + 1) * vout];
                self.gb.data_mut()[co] += g.iter().sum::<f64>();
                for ci in 0..cin {
                    let xoff = (b * cin + ci) * vin;
                    let woff = (co * cin + ci) * K3;
                    let xb = &xd[xoff..xoff + vin];
                    let gwk = &mut self.gw.data_mut()[woff..woff + K3];
                    Self::for_each_tap(side, self.stride, os, |o, xi, k| gwk[k] += g[o] * xb[xi]);
                }
            }
        }
        Ok(())
    }
}

pub const ELU_ALPHA: f64 = 1.0;

#[inline]
pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        ELU_ALPHA * x.exp_m1()
    }
}

#[inline]
pub fn elu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        ELU_ALPHA * x.exp()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + eˣ)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `ln σ(x)`, stable for large `|x|`.
#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    -softplus(-x)
}

pub fn softmax_in_place(v: &mut [f64]) {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for x in v.iter_mut() {
        *x = (*x - m).exp();
        s += *x;
    }
    for x in v.iter_mut() {
        *x /= s;
    }
}

#[derive(Debug, Clone)]
pub enum Layer {
    Dense(Dense),
    Conv3d(Conv3d),
    Elu,
    Sigmoid,
    /// Softmax over the last axis.
    Softmax,
    /// `[B, ...] -> [B, prod(...)]`.
    Flatten,
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Dense(_) => "dense",
            Layer::Conv3d(_) => "conv3d",
            Layer::Elu => "elu",
            Layer::Sigmoid => "sigmoid",
            Layer::Softmax => "softmax",
            Layer::Flatten => "flatten",
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Dense(d) => d.forward(x),
            Layer::Conv3d(c) => c.forward(x),
            Layer::Elu => map(x, elu),
            Layer::Sigmoid => map(x, sigmoid),
            Layer::Softmax => {
                let mut y = x.clone();
                let last = *x.shape().last().unwrap_or(&0);
                if last == 0 {
                    return Err(Error::shape("softmax", "empty last axis"));
                }
                for chunk in y.data_mut().chunks_mut(last) {
                    softmax_in_place(chunk);
                }
                Ok(y)
            }
            Layer::Flatten => {
                let (b, w) = (x.batch(), x.row_len());
                x.clone().reshape(vec![b, w])
            }
        }
    }

    /// Gradient w.r.t. the layer input given the cached input `x`, output `y`
    /// and upstream gradient `gy`.
    pub fn grad_input(&self, x: &Tensor, y: &Tensor, gy: &Tensor) -> Result<Tensor> {
        if gy.shape() != y.shape() {
            return Err(Error::shape(
                self.kind(),
                format!("upstream gradient {:?} vs output {:?}", gy.shape(), y.shape()),
            ));
        }
        match self {
            Layer::Dense(d) => d.grad_input(x, gy),
            Layer::Conv3d(c) => c.grad_input(x, gy),
            Layer::Elu => zip_map(x, gy, |xv, g| g * elu_grad(xv)),
            Layer::Sigmoid => zip_map(y, gy, |yv, g| g * yv * (1.0 - yv)),
            Layer::Softmax => {
                let last = *y.shape().last().unwrap_or(&1);
                let mut gx = gy.clone();
                for (gc, yc) in gx.data_mut().chunks_mut(last).zip(y.data().chunks(last)) {
                    let dot: f64 = gc.iter().zip(yc).map(|(g, y)| g * y).sum();
                    for (g, y) in gc.iter_mut().zip(yc) {
                        *g = y * (*g - dot);
                    }
                }
                Ok(gx)
            }
            Layer::Flatten => gy.clone().reshape(x.shape().to_vec()),
        }
    }

    /// Adds this pass's parameter gradients into the layer's gradient buffers.
    pub fn accumulate(&mut self, x: &Tensor, gy: &Tensor) -> Result<()> {
        match self {
            Layer::Dense(d) => d.accumulate(x, gy),
            Layer::Conv3d(c) => c.accumulate(x, gy),
            _ => Ok(()),
        }
    }
}

fn map(x: &Tensor, f: impl Fn(f64) -> f64) -> Result<Tensor> {
    Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| f(v)).collect())
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    Tensor::new(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
}

/// A chain of layers. `forward` is pure; `forward_train` caches activations
/// for one subsequent `backward`.
#[derive(Debug, Clone)]
pub struct Sequential {
    name: String,
    layers: Vec<Layer>,
    tape: Option<Vec<Tensor>>,
}

impl Sequential {
    pub fn new(name: impl Into<String>) -> Self {
        Sequential {
            name: name.into(),
            layers: Vec::new(),
            tape: None,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    fn layer_name(&self, kind: &str) -> String {
        format!("{}/{}.{kind}", self.name, self.layers.len())
    }

    pub fn dense<R: Rng + ?Sized>(mut self, inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let n = self.layer_name("dense");
        self.layers.push(Layer::Dense(Dense::new(n, inputs, outputs, rng)));
        self
    }

    pub fn conv3d<R: Rng + ?Sized>(mut self, cin: usize, cout: usize, stride: usize, rng: &mut R) -> Self {
        let n = self.layer_name("conv3d");
        self.layers.push(Layer::Conv3d(Conv3d::new(n, cin, cout, stride, rng)));
        self
    }

    pub fn elu(mut self) -> Self {
        self.layers.push(Layer::Elu);
        self
    }

    pub fn sigmoid(mut self) -> Self {
        self.layers.push(Layer::Sigmoid);
        self
    }

    pub fn softmax(mut self) -> Self {
        self.layers.push(Layer::Softmax);
        self
    }

    pub fn flatten(mut self) -> Self {
        self.layers.push(Layer::Flatten);
        self
    }

    pub fn push(&mut self, layer: Layer) {
        self.layers.push(layer);
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// The last dense layer, typically the output head.
    pub fn last_dense_mut(&mut self) -> Option<&mut Dense> {
        self.layers.iter_mut().rev().find_map(|l| match l {
            Layer::Dense(d) => Some(d),
            _ => None,
        })
    }

    fn run(&self, x: &Tensor, keep: bool) -> Result<(Tensor, Vec<Tensor>)> {
        let mut tape = Vec::new();
        let mut cur = x.clone();
        for layer in &self.layers {
            let next = layer.forward(&cur)?;
            if keep {
                tape.push(cur);
            }
            cur = next;
        }
        if keep {
            tape.push(cur.clone());
        }
        Ok((cur, tape))
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.run(x, false)?.0)
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        let (y, tape) = self.run(x, true)?;
        self.tape = Some(tape);
        Ok(y)
    }

    /// Backpropagates through the cached pass, accumulating parameter
    /// gradients, and returns the gradient w.r.t. the input.
    pub fn backward(&mut self, gy: &Tensor) -> Result<Tensor> {
        let tape = self
            .tape
            .take()
            .ok_or_else(|| Error::NoForwardCache(self.name.clone()))?;
        let mut g = gy.clone();
        for (i, layer) in self.layers.iter_mut().enumerate().rev() {
            let gx = layer.grad_input(&tape[i], &tape[i + 1], &g)?;
            layer.accumulate(&tape[i], &g)?;
            g = gx;
        }
        Ok(g)
    }

    /// Output and input gradient for one pass; parameter gradients are untouched.
    /// `upstream` maps the network output to the gradient of the loss w.r.t. it.
    pub fn input_gradient(&self, x: &Tensor, upstream: impl FnOnce(&Tensor) -> Tensor) -> Result<(Tensor, Tensor)> {
        let (y, tape) = self.run(x, true)?;
        let mut g = upstream(&y);
        for (i, layer) in self.layers.iter().enumerate().rev() {
            g = layer.grad_input(&tape[i], &tape[i + 1], &g)?;
        }
        Ok((y, g))
    }
}

impl Parameterized for Sequential {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor, &Tensor)) {
        for layer in &self.layers {
            match layer {
                Layer::Dense(d) => {
                    f(&d.w_name, &d.w, &d.gw);
                    f(&d.b_name, &d.b, &d.gb);
                }
                Layer::Conv3d(c) => {
                    f(&c.w_name, &c.w, &c.gw);
                    f(&c.b_name, &c.b, &c.gb);
                }
                _ => {}
            }
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor, &mut Tensor)) {
        for layer in &mut self.layers {
            match layer {
                Layer::Dense(d) => {
                    f(&d.w_name, &mut d.w, &mut d.gw);
                    f(&d.b_name, &mut d.b, &mut d.gb);
                }
                Layer::Conv3d(c) => {
                    f(&c.w_name, &mut c.w, &mut c.gw);
                    f(&c.b_name, &mut c.b, &mut c.gb);
                }
                _ => {}
            }
        }
    }
}
