//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every op appends a node whose inputs already live on the tape, so node
//! ids are a topological order and the backward sweep is a single reverse
//! scan. Gradients from multiple consumers are summed.

use alloc::boxed::Box;
use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::{Cell, RefCell};

use crate::error::{Error, Result};
use crate::fft;
use crate::kernels;
use crate::ops::{self, Conv2dSpec};
use crate::tensor::Tensor;

/// What a backward rule sees: input values, output value, upstream
/// gradient and which inputs actually need a gradient.
pub struct BackwardCtx<'a> {
    pub inputs: Vec<&'a Tensor>,
    pub output: &'a Tensor,
    pub grad: &'a Tensor,
    pub needs: Vec<bool>,
}

type BackwardFn = Box<dyn Fn(&BackwardCtx<'_>) -> Vec<Option<Tensor>>>;

struct Node {
    value: Rc<Tensor>,
    parents: Vec<usize>,
    requires_grad: bool,
    backward: Option<BackwardFn>,
}

/// Recording of one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    macs: Cell<u64>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl core::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.value().shape())
            .finish()
    }
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var<'_>) -> Option<&Tensor> {
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros of its shape when nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var<'_>) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(v.value().shape()))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Trainable leaf.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push_node(value, Vec::new(), true, None)
    }

    /// Leaf that receives no gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push_node(value, Vec::new(), false, None)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Multiply-accumulates executed by matrix products on this tape.
    pub fn matmul_macs(&self) -> u64 {
        self.macs.get()
    }

    fn push_node(&self, value: Tensor, parents: Vec<usize>, requires_grad: bool, backward: Option<BackwardFn>) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            parents,
            requires_grad,
            backward,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Records an op result. The backward rule is dropped when no input
    /// needs a gradient.
    pub fn record<F>(&self, value: Tensor, inputs: &[Var<'_>], backward: F) -> Var<'_>
    where
        F: Fn(&BackwardCtx<'_>) -> Vec<Option<Tensor>> + 'static,
    {
        let parents: Vec<usize> = inputs.iter().map(|v| v.id).collect();
        let requires_grad = {
            let nodes = self.nodes.borrow();
            parents.iter().any(|&p| nodes[p].requires_grad)
        };
        let backward: Option<BackwardFn> = if requires_grad { Some(Box::new(backward)) } else { None };
        self.push_node(value, parents, requires_grad, backward)
    }

    /// Back-propagates from a one-element `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.numel() != 1 {
            return Err(Error::dim("backward", nodes[loss.id].value.shape(), &[1]));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[loss.id] = Some(Tensor::new(nodes[loss.id].value.shape(), vec![1.0])?);
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            let Some(rule) = node.backward.as_ref() else { continue };
            let Some(grad) = grads[id].take() else { continue };
            let ctx = BackwardCtx {
                inputs: node.parents.iter().map(|&p| nodes[p].value.as_ref()).collect(),
                output: node.value.as_ref(),
                grad: &grad,
                needs: node.parents.iter().map(|&p| nodes[p].requires_grad).collect(),
            };
            let parent_grads = rule(&ctx);
            for (&p, pg) in node.parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                if !nodes[p].requires_grad {
                    continue;
                }
                match grads[p].as_mut() {
                    Some(acc) => acc.add_assign(&pg)?,
                    None => grads[p] = Some(pg),
                }
            }
        }
        for (id, node) in nodes.iter().enumerate() {
            if !node.parents.is_empty() || !node.requires_grad {
                grads[id] = None;
            }
        }
        Ok(Gradients { grads })
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(op, a.shape(), b.shape()));
    }
    Ok(())
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        let out = a.add(&b)?;
        Ok(self.tape.record(out, &[self, other], |c| vec![Some(c.grad.clone()), Some(c.grad.clone())]))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        let out = a.sub(&b)?;
        Ok(self.tape.record(out, &[self, other], |c| vec![Some(c.grad.clone()), Some(c.grad.scale(-1.0))]))
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        let out = a.zip_map(&b, "mul", |x, y| x * y)?;
        Ok(self.tape.record(out, &[self, other], |c| {
            let ga = c.needs[0].then(|| c.grad.zip_map(c.inputs[1], "mul", |g, y| g * y).unwrap());
            let gb = c.needs[1].then(|| c.grad.zip_map(c.inputs[0], "mul", |g, x| g * x).unwrap());
            vec![ga, gb]
        }))
    }

    pub fn scale(self, s: f64) -> Var<'t> {
        let out = self.value().scale(s);
        self.tape.record(out, &[self], move |c| vec![Some(c.grad.scale(s))])
    }

    /// `x[c,h,w] * s[c,1,1]`, broadcast over space.
    pub fn mul_channel(self, s: Var<'t>) -> Result<Var<'t>> {
        let (x, sv) = (self.value(), s.value());
        if x.rank() != 3 || sv.numel() != x.shape()[0] {
            return Err(Error::dim("mul_channel", x.shape(), sv.shape()));
        }
        let hw = x.shape()[1] * x.shape()[2];
        let mut out = x.as_ref().clone();
        for (ch, plane) in out.data_mut().chunks_mut(hw).enumerate() {
            let f = sv.data()[ch];
            plane.iter_mut().for_each(|v| *v *= f);
        }
        Ok(self.tape.record(out, &[self, s], move |c| {
            let (x, sv, g) = (c.inputs[0], c.inputs[1], c.grad);
            let gx = c.needs[0].then(|| {
                let mut gx = g.clone();
                for (ch, plane) in gx.data_mut().chunks_mut(hw).enumerate() {
                    let f = sv.data()[ch];
                    plane.iter_mut().for_each(|v| *v *= f);
                }
                gx
            });
            let gs = c.needs[1].then(|| {
                let d = g
                    .data()
                    .chunks(hw)
                    .zip(x.data().chunks(hw))
                    .map(|(gp, xp)| gp.iter().zip(xp).map(|(a, b)| a * b).sum())
                    .collect();
                Tensor::new(sv.shape(), d).unwrap()
            });
            vec![gx, gs]
        }))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        let out = self.value().as_ref().clone().reshape(shape)?;
        let orig = self.shape();
        Ok(self.tape.record(out, &[self], move |c| {
            vec![Some(c.grad.clone().reshape(&orig).unwrap())]
        }))
    }

    /// Rows `start..start+len` of axis 0.
    pub fn narrow0(self, start: usize, len: usize) -> Result<Var<'t>> {
        let x = self.value();
        if x.rank() == 0 || start + len > x.shape()[0] {
            return Err(Error::dim("narrow0", x.shape(), &[start, len]));
        }
        let out = x.slice0(start, start + len);
        let full = x.shape().to_vec();
        Ok(self.tape.record(out, &[self], move |c| {
            let inner: usize = full[1..].iter().product();
            let mut g = Tensor::zeros(&full);
            g.data_mut()[start * inner..(start + len) * inner].copy_from_slice(c.grad.data());
            vec![Some(g)]
        }))
    }

    /// Concatenation along axis 0.
    pub fn cat0(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let first = *parts.first().ok_or_else(|| Error::config("cat0 of zero tensors"))?;
        let values: Vec<Rc<Tensor>> = parts.iter().map(|p| p.value()).collect();
        let refs: Vec<&Tensor> = values.iter().map(|v| v.as_ref()).collect();
        let out = Tensor::concat0(&refs)?;
        let sizes: Vec<usize> = values.iter().map(|v| v.numel()).collect();
        Ok(first.tape.record(out, parts, move |c| {
            let mut off = 0;
            sizes
                .iter()
                .zip(&c.inputs)
                .map(|(&n, inp)| {
                    let g = Tensor::new(inp.shape(), c.grad.data()[off..off + n].to_vec()).unwrap();
                    off += n;
                    Some(g)
                })
                .collect()
        }))
    }

    /// `out[i] = x.flat[index[i]]`; the backward rule scatter-adds.
    pub fn gather(self, index: Vec<usize>, shape: &[usize]) -> Result<Var<'t>> {
        let x = self.value();
        let n: usize = shape.iter().product();
        if n != index.len() || index.iter().any(|&i| i >= x.numel()) {
            return Err(Error::dim("gather", x.shape(), shape));
        }
        let out = Tensor::new(shape, index.iter().map(|&i| x.data()[i]).collect())?;
        Ok(self.tape.record(out, &[self], move |c| {
            let mut g = Tensor::zeros(c.inputs[0].shape());
            let gd = g.data_mut();
            for (&i, &v) in index.iter().zip(c.grad.data()) {
                gd[i] += v;
            }
            vec![Some(g)]
        }))
    }

    /// `[c·s², h, w] -> [c, s·h, s·w]`, see [`ops::pixel_shuffle`].
    pub fn pixel_shuffle(self, s: usize) -> Result<Var<'t>> {
        let shape = self.shape();
        if shape.len() != 3 || s == 0 || shape[0] % (s * s) != 0 {
            return Err(Error::dim("pixel_shuffle", &shape, &[s * s]));
        }
        let (c, h, w) = (shape[0], shape[1], shape[2]);
        self.gather(ops::pixel_shuffle_map(c, h, w, s), &[c / (s * s), h * s, w * s])
    }

    /// Batched `self · other`.
    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        let (batch, p, q, r, shared_b) = ops::matmul_dims(a.shape(), b.shape())?;
        let out = ops::matmul(&a, &b)?;
        self.tape.macs.set(self.tape.macs.get() + (batch * p * q * r) as u64);
        Ok(self.tape.record(out, &[self, other], move |c| {
            let (a, b, g) = (c.inputs[0].data(), c.inputs[1].data(), c.grad.data());
            let mut ga = c.needs[0].then(|| vec![0.0; a.len()]);
            let mut gb = c.needs[1].then(|| vec![0.0; b.len()]);
            for i in 0..batch {
                let bo = if shared_b { 0 } else { i * q * r };
                let gi = &g[i * p * r..(i + 1) * p * r];
                if let Some(ga) = ga.as_mut() {
                    kernels::gemm_nt(gi, &b[bo..bo + q * r], &mut ga[i * p * q..(i + 1) * p * q], p, r, q);
                }
                if let Some(gb) = gb.as_mut() {
                    kernels::gemm_tn(&a[i * p * q..(i + 1) * p * q], gi, &mut gb[bo..bo + q * r], q, p, r);
                }
            }
            vec![
                ga.map(|d| Tensor::new(c.inputs[0].shape(), d).unwrap()),
                gb.map(|d| Tensor::new(c.inputs[1].shape(), d).unwrap()),
            ]
        }))
    }

    /// Batched `self · otherᵀ` over the last two axes; both operands share
    /// batch dims.
    pub fn matmul_nt(self, other: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        let (ra, rb) = (a.rank(), b.rank());
        if ra < 2 || ra != rb || a.shape()[..ra - 2] != b.shape()[..rb - 2] || a.shape()[ra - 1] != b.shape()[rb - 1] {
            return Err(Error::dim("matmul_nt", a.shape(), b.shape()));
        }
        let (p, q, r) = (a.shape()[ra - 2], a.shape()[ra - 1], b.shape()[rb - 2]);
        let batch: usize = a.shape()[..ra - 2].iter().product();
        let mut out = vec![0.0; batch * p * r];
        for i in 0..batch {
            kernels::gemm_nt(
                &a.data()[i * p * q..(i + 1) * p * q],
                &b.data()[i * r * q..(i + 1) * r * q],
                &mut out[i * p * r..(i + 1) * p * r],
                p,
                q,
                r,
            );
        }
        self.tape.macs.set(self.tape.macs.get() + (batch * p * q * r) as u64);
        let mut shape = a.shape()[..ra - 2].to_vec();
        shape.extend_from_slice(&[p, r]);
        let out = Tensor::new(&shape, out)?;
        Ok(self.tape.record(out, &[self, other], move |c| {
            let (a, b, g) = (c.inputs[0].data(), c.inputs[1].data(), c.grad.data());
            let mut ga = c.needs[0].then(|| vec![0.0; a.len()]);
            let mut gb = c.needs[1].then(|| vec![0.0; b.len()]);
            for i in 0..batch {
                let gi = &g[i * p * r..(i + 1) * p * r];
                if let Some(ga) = ga.as_mut() {
                    kernels::gemm_nn(gi, &b[i * r * q..(i + 1) * r * q], &mut ga[i * p * q..(i + 1) * p * q], p, r, q);
                }
                if let Some(gb) = gb.as_mut() {
                    kernels::gemm_tn(gi, &a[i * p * q..(i + 1) * p * q], &mut gb[i * r * q..(i + 1) * r * q], r, p, q);
                }
            }
            vec![
                ga.map(|d| Tensor::new(c.inputs[0].shape(), d).unwrap()),
                gb.map(|d| Tensor::new(c.inputs[1].shape(), d).unwrap()),
            ]
        }))
    }

    /// Softmax over the last axis.
    pub fn softmax_last(self) -> Result<Var<'t>> {
        let x = self.value();
        if !x.is_finite() {
            return Err(Error::numeric("softmax input"));
        }
        let n = *x.shape().last().ok_or_else(|| Error::dim("softmax", x.shape(), &[1]))?;
        let out = Tensor::new(x.shape(), kernels::softmax_rows(x.data(), n))?;
        Ok(self.tape.record(out, &[self], move |c| {
            let mut g = vec![0.0; c.grad.numel()];
            for ((gr, yr), dst) in c.grad.data().chunks(n).zip(c.output.data().chunks(n)).zip(g.chunks_mut(n)) {
                let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                for ((d, &gv), &yv) in dst.iter_mut().zip(gr).zip(yr) {
                    *d = yv * (gv - dot);
                }
            }
            vec![Some(Tensor::new(c.output.shape(), g).unwrap())]
        }))
    }

    pub fn conv2d(self, weight: Var<'t>, bias: Option<Var<'t>>, spec: Conv2dSpec) -> Result<Var<'t>> {
        let (x, w) = (self.value(), weight.value());
        let bv = bias.map(|b| b.value());
        let out = ops::conv2d(&x, &w, bv.as_deref(), spec)?;
        let geom = ops::conv_geom(x.shape(), w.shape(), spec)?;
        let mut inputs = vec![self, weight];
        inputs.extend(bias);
        Ok(self.tape.record(out, &inputs, move |c| {
            let (gx, gw, gb) = kernels::conv_backward(&geom, c.inputs[0].data(), c.inputs[1].data(), c.grad.data(), c.needs[0], c.needs[1]);
            let mut res = vec![
                gx.map(|d| Tensor::new(c.inputs[0].shape(), d).unwrap()),
                gw.map(|d| Tensor::new(c.inputs[1].shape(), d).unwrap()),
            ];
            if c.inputs.len() == 3 {
                res.push(Some(Tensor::new(&[geom.cout], gb).unwrap()));
            }
            res
        }))
    }

    pub fn layer_norm(self, gamma: Var<'t>, beta: Var<'t>, eps: f64) -> Result<Var<'t>> {
        let (x, g, b) = (self.value(), gamma.value(), beta.value());
        let (out, xhat, rstd) = ops::layer_norm_parts(&x, &g, &b, eps)?;
        let (ch, hw) = (x.shape()[0], x.shape()[1] * x.shape()[2]);
        Ok(self.tape.record(out, &[self, gamma, beta], move |c| {
            let gy = c.grad.data();
            let gamma = c.inputs[1].data();
            let mut ggamma = vec![0.0; ch];
            let mut gbeta = vec![0.0; ch];
            for k in 0..ch {
                for s in 0..hw {
                    let i = k * hw + s;
                    ggamma[k] += gy[i] * xhat[i];
                    gbeta[k] += gy[i];
                }
            }
            let gx = c.needs[0].then(|| {
                let mut m1 = vec![0.0; hw];
                let mut m2 = vec![0.0; hw];
                for k in 0..ch {
                    for s in 0..hw {
                        let i = k * hw + s;
                        let gh = gy[i] * gamma[k];
                        m1[s] += gh;
                        m2[s] += gh * xhat[i];
                    }
                }
                let inv_c = 1.0 / ch as f64;
                let mut gx = vec![0.0; ch * hw];
                for k in 0..ch {
                    for s in 0..hw {
                        let i = k * hw + s;
                        let gh = gy[i] * gamma[k];
                        gx[i] = rstd[s] * (gh - m1[s] * inv_c - xhat[i] * m2[s] * inv_c);
                    }
                }
                Tensor::new(c.inputs[0].shape(), gx).unwrap()
            });
            vec![
                gx,
                Some(Tensor::new(&[ch], ggamma).unwrap()),
                Some(Tensor::new(&[ch], gbeta).unwrap()),
            ]
        }))
    }

    pub fn gelu(self) -> Var<'t> {
        let out = ops::gelu(&self.value());
        self.tape.record(out, &[self], |c| {
            vec![Some(c.grad.zip_map(c.inputs[0], "gelu", |g, x| g * kernels::gelu_grad(x)).unwrap())]
        })
    }

    /// Spatial average of `[c, h, w]`, kept as `[c, 1, 1]`.
    pub fn mean_spatial(self) -> Result<Var<'t>> {
        let x = self.value();
        if x.rank() != 3 {
            return Err(Error::dim("mean_spatial", x.shape(), &[0, 0, 0]));
        }
        let (ch, hw) = (x.shape()[0], x.shape()[1] * x.shape()[2]);
        let d = x.data().chunks(hw).map(|p| p.iter().sum::<f64>() / hw as f64).collect();
        let out = Tensor::new(&[ch, 1, 1], d)?;
        let shape = x.shape().to_vec();
        Ok(self.tape.record(out, &[self], move |c| {
            let mut g = Tensor::zeros(&shape);
            for (plane, &gv) in g.data_mut().chunks_mut(hw).zip(c.grad.data()) {
                plane.fill(gv / hw as f64);
            }
            vec![Some(g)]
        }))
    }

    pub fn sum_all(self) -> Var<'t> {
        let out = Tensor::scalar(self.value().sum());
        self.tape.record(out, &[self], |c| vec![Some(Tensor::full(c.inputs[0].shape(), c.grad.item()))])
    }

    pub fn mean_all(self) -> Var<'t> {
        let n = self.value().numel() as f64;
        self.sum_all().scale(1.0 / n)
    }

    /// `mean |self - other|`, subgradient 0 where the difference is exactly 0.
    pub fn l1_mean(self, other: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        same_shape("l1_mean", &a, &b)?;
        let n = a.numel() as f64;
        let s: f64 = a.data().iter().zip(b.data()).map(|(x, y)| libm::fabs(x - y)).sum();
        Ok(self.tape.record(Tensor::scalar(s / n), &[self, other], move |c| {
            let k = c.grad.item() / n;
            let ga = c.inputs[0].zip_map(c.inputs[1], "l1", |x, y| k * sign0(x - y)).unwrap();
            let gb = c.needs[1].then(|| ga.scale(-1.0));
            vec![Some(ga), gb]
        }))
    }

    /// Real and imaginary planes of the per-channel 2-D DFT, stacked as
    /// `[2, c, h, w]`.
    pub fn dft2(self) -> Result<Var<'t>> {
        let x = self.value();
        let (re, im) = fft::dft2(&x)?;
        let (ch, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let out = Tensor::concat0(&[&re, &im])?.reshape(&[2, ch, h, w])?;
        Ok(self.tape.record(out, &[self], move |c| {
            let n = ch * h * w;
            let g = c.grad.data();
            let gx = fft::dft2_real_backward(&g[..n], &g[n..], ch, h, w);
            vec![Some(Tensor::new(&[ch, h, w], gx).unwrap())]
        }))
    }

    /// Mean over complex entries of `|a - b|` for `[2, ...]` real/imag stacks.
    pub fn complex_modulus_l1(self, other: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        same_shape("complex_modulus_l1", &a, &b)?;
        if a.rank() == 0 || a.shape()[0] != 2 {
            return Err(Error::dim("complex_modulus_l1", a.shape(), &[2]));
        }
        let n = a.numel() / 2;
        let mods: Vec<f64> = (0..n)
            .map(|i| {
                let dr = a.data()[i] - b.data()[i];
                let di = a.data()[n + i] - b.data()[n + i];
                libm::sqrt(dr * dr + di * di)
            })
            .collect();
        let value = mods.iter().sum::<f64>() / n as f64;
        Ok(self.tape.record(Tensor::scalar(value), &[self, other], move |c| {
            let k = c.grad.item() / n as f64;
            let (a, b) = (c.inputs[0].data(), c.inputs[1].data());
            let mut ga = vec![0.0; 2 * n];
            for i in 0..n {
                if mods[i] > 0.0 {
                    ga[i] = k * (a[i] - b[i]) / mods[i];
                    ga[n + i] = k * (a[n + i] - b[n + i]) / mods[i];
                }
            }
            let ga = Tensor::new(c.inputs[0].shape(), ga).unwrap();
            let gb = c.needs[1].then(|| ga.scale(-1.0));
            vec![Some(ga), gb]
        }))
    }
}

pub(crate) fn sign0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}
