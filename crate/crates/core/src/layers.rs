//! Parameter-owning layer building blocks: convolution and batch norm,
//! plus the conv-BN-ReLU fusion both paper paths are built from.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::CoreResult;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tape::{Mode, NodeId, Tape};
use crate::tensor::{Parameter, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Kaiming-normal weight tensor for a `[cout, cin, k, k]` convolution.
pub fn kaiming_conv<T: Scalar>(rng: &mut Rng, cout: usize, cin: usize, k: usize) -> Tensor<T> {
    let fan_in = (cin * k * k) as f64;
    let std = libm::sqrt(2.0 / fan_in);
    Tensor::from_fn([cout, cin, k, k], |_, _, _, _| {
        T::from_f64(rng.normal() * std)
    })
}

#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub weight: Parameter<T>,
    pub bias: Option<Parameter<T>>,
    pub stride: usize,
    pub pad: usize,
}

impl<T: Scalar> Conv2d<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        rng: &mut Rng,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        bias: bool,
    ) -> Self {
        Conv2d {
            weight: Parameter::new(format!("{name}.weight"), kaiming_conv(rng, cout, cin, k)),
            bias: bias.then(|| Parameter::new(format!("{name}.bias"), Tensor::zeros([1, cout, 1, 1]))),
            stride,
            pad,
        }
    }

    /// All-zero weights; used for the spectral conv so the Fourier Unit
    /// starts as an exact identity.
    pub fn zero_init(name: &str, cin: usize, cout: usize, k: usize, stride: usize, pad: usize) -> Self {
        Conv2d {
            weight: Parameter::new(format!("{name}.weight"), Tensor::zeros([cout, cin, k, k])),
            bias: None,
            stride,
            pad,
        }
    }

    pub fn forward(&self, tape: &mut Tape<T>, x: NodeId) -> CoreResult<NodeId> {
        let w = tape.param(&self.weight.name, &self.weight.value)?;
        let b = match &self.bias {
            Some(p) => Some(tape.param(&p.name, &p.value)?),
            None => None,
        };
        tape.conv2d(x, w, b, self.stride, self.pad)
    }

    pub fn collect_params<'a>(&'a mut self, out: &mut Vec<&'a mut Parameter<T>>) {
        out.push(&mut self.weight);
        if let Some(b) = self.bias.as_mut() {
            out.push(b);
        }
    }

    pub fn collect_state<'a>(&'a mut self, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        out.push((self.weight.name.clone(), &mut self.weight.value));
        if let Some(b) = self.bias.as_mut() {
            out.push((b.name.clone(), &mut b.value));
        }
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm<T> {
    pub gamma: Parameter<T>,
    pub beta: Parameter<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    name: String,
    pub eps: T,
    pub momentum: T,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(name: &str, c: usize) -> Self {
        BatchNorm {
            gamma: Parameter::new(format!("{name}.gamma"), Tensor::full([1, c, 1, 1], T::ONE)),
            beta: Parameter::new(format!("{name}.beta"), Tensor::zeros([1, c, 1, 1])),
            running_mean: Tensor::zeros([1, c, 1, 1]),
            running_var: Tensor::full([1, c, 1, 1], T::ONE),
            name: String::from(name),
            eps: T::from_f64(BN_EPS),
            momentum: T::from_f64(BN_MOMENTUM),
        }
    }

    pub fn forward(&mut self, tape: &mut Tape<T>, x: NodeId, mode: Mode) -> CoreResult<NodeId> {
        let gamma = tape.param(&self.gamma.name, &self.gamma.value)?;
        let beta = tape.param(&self.beta.name, &self.beta.value)?;
        tape.batch_norm(
            x,
            gamma,
            beta,
            Some((&mut self.running_mean, &mut self.running_var)),
            self.momentum,
            self.eps,
            mode,
        )
    }

    pub fn collect_params<'a>(&'a mut self, out: &mut Vec<&'a mut Parameter<T>>) {
        out.push(&mut self.gamma);
        out.push(&mut self.beta);
    }

    pub fn collect_state<'a>(&'a mut self, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        out.push((self.gamma.name.clone(), &mut self.gamma.value));
        out.push((self.beta.name.clone(), &mut self.beta.value));
        out.push((format!("{}.running_mean", self.name), &mut self.running_mean));
        out.push((format!("{}.running_var", self.name), &mut self.running_var));
    }
}

/// conv -> BN -> ReLU, the unit both T_1 and the backbone blocks use.
#[derive(Debug, Clone)]
pub struct ConvBnRelu<T> {
    pub conv: Conv2d<T>,
    pub bn: BatchNorm<T>,
}

impl<T: Scalar> ConvBnRelu<T> {
    pub fn new(
        name: &str,
        rng: &mut Rng,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
    ) -> Self {
        ConvBnRelu {
            conv: Conv2d::new(&format!("{name}.conv"), rng, cin, cout, k, stride, k / 2, false),
            bn: BatchNorm::new(&format!("{name}.bn"), cout),
        }
    }

    pub fn forward(&mut self, tape: &mut Tape<T>, x: NodeId, mode: Mode) -> CoreResult<NodeId> {
        let y = self.conv.forward(tape, x)?;
        let y = self.bn.forward(tape, y, mode)?;
        Ok(tape.relu(y))
    }

    pub fn collect_params<'a>(&'a mut self, out: &mut Vec<&'a mut Parameter<T>>) {
        self.conv.collect_params(out);
        self.bn.collect_params(out);
    }

    pub fn collect_state<'a>(&'a mut self, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        self.conv.collect_state(out);
        self.bn.collect_state(out);
    }
}
