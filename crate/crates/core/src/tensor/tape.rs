//! Reverse-mode automatic differentiation over an append-only tape.
//!
//! Every op appends one node whose inputs are earlier nodes, so node order
//! is a topological order and [`Tape::backward`] is a single reverse sweep.

use super::conv::{self, ConvGeometry, Padding};
use super::norm::{self, BatchNormMode, RunningStats};
use super::{like_input, nhwc, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Scale(Var, f32),
    MulConst(Var, Vec<f32>),
    Sum(Var),
    Relu(Var),
    Reshape(Var),
    CropWidth {
        input: Var,
        left: usize,
    },
    Upsample2x(Var),
    FullyConnected {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        geom: ConvGeometry,
        cols: Option<Vec<f32>>,
    },
    Depthwise {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        geom: ConvGeometry,
    },
    TransposedConv2d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        geom: ConvGeometry,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        x_hat: Vec<f32>,
        inv_std: Vec<f32>,
        mode: BatchNormMode,
    },
    SoftAssign {
        z: Var,
        centers: Var,
        alpha: f64,
    },
    KlDivergence {
        p: Var,
        q: Var,
    },
    Reconstruction {
        pred: Var,
        target: Var,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Leaf gradients produced by one backward sweep, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f32>>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&[f32]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    /// Adds the gradient of `var` into `tensor`'s grad buffer. Returns whether
    /// any gradient reached `var`.
    pub fn accumulate_into(&self, var: Var, tensor: &mut Tensor) -> Result<bool> {
        match self.get(var) {
            Some(g) => {
                tensor.accumulate_grad(g)?;
                Ok(true)
            }
            None => Ok(false),
        }
    }
}

fn add_into(slot: &mut Option<Vec<f32>>, g: Vec<f32>) {
    match slot {
        Some(buf) => buf.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        None => *slot = Some(g),
    }
}

fn add_bias(y: &mut [f32], bias: &[f32]) {
    let c = bias.len();
    for row in y.chunks_exact_mut(c) {
        row.iter_mut().zip(bias).for_each(|(v, b)| *v += b);
    }
}

fn bias_grad(dy: &[f32], c: usize) -> Vec<f32> {
    let mut acc = vec![0.0f64; c];
    for row in dy.chunks_exact(c) {
        acc.iter_mut().zip(row).for_each(|(a, &g)| *a += g as f64);
    }
    acc.into_iter().map(|v| v as f32).collect()
}

/// Student-t similarity kernel matrix and row sums, in f64.
pub(crate) fn student_t_kernel<T: Copy + Into<f64>>(
    z: &[T],
    centers: &[T],
    dim: usize,
    alpha: f64,
) -> (Vec<f64>, Vec<f64>) {
    let k = centers.len() / dim;
    let n = z.len() / dim;
    let expo = -(alpha + 1.0) / 2.0;
    let mut dist = vec![0.0f64; n * k];
    let mut q = vec![0.0f64; n * k];
    for i in 0..n {
        let zi = &z[i * dim..(i + 1) * dim];
        let mut total = 0.0;
        for j in 0..k {
            let uj = &centers[j * dim..(j + 1) * dim];
            let d: f64 = zi
                .iter()
                .zip(uj)
                .map(|(&a, &b)| {
                    let t = a.into() - b.into();
                    t * t
                })
                .sum();
            dist[i * k + j] = d;
            let t = (1.0 + d / alpha).powf(expo);
            q[i * k + j] = t;
            total += t;
        }
        q[i * k..(i + 1) * k].iter_mut().for_each(|v| *v /= total);
    }
    (q, dist)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn rg_opt(&self, v: Option<Var>) -> bool {
        v.is_some_and(|v| self.rg(v))
    }

    /// Records a leaf. It takes part in differentiation iff
    /// `tensor.requires_grad()`.
    pub fn leaf(&mut self, mut tensor: Tensor) -> Var {
        let rg = tensor.requires_grad();
        tensor.zero_grad();
        self.push(tensor, rg, Op::Leaf)
    }

    /// Records a trainable copy of `tensor`.
    pub fn param(&mut self, tensor: &Tensor) -> Var {
        let t = Tensor::from_parts(tensor.shape().to_vec(), tensor.data().to_vec());
        self.push(t, true, Op::Leaf)
    }

    pub fn constant(&mut self, mut tensor: Tensor) -> Var {
        tensor.set_requires_grad(false);
        tensor.zero_grad();
        self.push(tensor, false, Op::Leaf)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::dim(
                "add",
                format!("lhs {:?} vs rhs {:?}", ta.shape(), tb.shape()),
            ));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| x + y)
            .collect();
        let out = Tensor::from_parts(ta.shape().to_vec(), data);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, rg, Op::Add(a, b)))
    }

    pub fn scale(&mut self, a: Var, factor: f32) -> Var {
        let t = self.value(a);
        let out = Tensor::from_parts(
            t.shape().to_vec(),
            t.data().iter().map(|v| v * factor).collect(),
        );
        let rg = self.rg(a);
        self.push(out, rg, Op::Scale(a, factor))
    }

    /// Elementwise product with a constant of the same shape.
    pub fn mul_const(&mut self, a: Var, weights: &Tensor) -> Result<Var> {
        let t = self.value(a);
        if t.shape() != weights.shape() {
            return Err(Error::dim(
                "mul_const",
                format!("input {:?} vs weights {:?}", t.shape(), weights.shape()),
            ));
        }
        let data = t
            .data()
            .iter()
            .zip(weights.data())
            .map(|(x, w)| x * w)
            .collect();
        let out = Tensor::from_parts(t.shape().to_vec(), data);
        let rg = self.rg(a);
        Ok(self.push(out, rg, Op::MulConst(a, weights.data().to_vec())))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data().iter().map(|&v| v as f64).sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s as f32), rg, Op::Sum(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let out = Tensor::from_parts(
            t.shape().to_vec(),
            t.data().iter().map(|&v| v.max(0.0)).collect(),
        );
        let rg = self.rg(a);
        self.push(out, rg, Op::Relu(a))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshape(shape.to_vec())?;
        let rg = self.rg(a);
        Ok(self.push(out, rg, Op::Reshape(a)))
    }

    /// Keeps columns `left..left+width` of an `[N,H,W,C]` map.
    pub fn crop_width(&mut self, a: Var, left: usize, width: usize) -> Result<Var> {
        let t = self.value(a);
        let [n, h, w, c] = nhwc("crop_width", t.shape())?;
        if width == 0 || left + width > w {
            return Err(Error::dim(
                "crop_width",
                format!("W={w} cannot supply columns {left}..{}", left + width),
            ));
        }
        let mut data = Vec::with_capacity(n * h * width * c);
        for row in t.data().chunks_exact(w * c) {
            data.extend_from_slice(&row[left * c..(left + width) * c]);
        }
        let out = Tensor::from_parts(like_input(t.shape().len(), [n, h, width, c]), data);
        let rg = self.rg(a);
        Ok(self.push(out, rg, Op::CropWidth { input: a, left }))
    }

    /// Nearest-neighbour 2x spatial upsampling of an `[N,H,W,C]` map.
    pub fn upsample2x(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let [n, h, w, c] = nhwc("upsample2x", t.shape())?;
        let mut data = vec![0.0f32; n * 4 * h * w * c];
        let src = t.data();
        for b in 0..n {
            for y in 0..2 * h {
                for x in 0..2 * w {
                    let s = ((b * h + y / 2) * w + x / 2) * c;
                    let d = ((b * 2 * h + y) * 2 * w + x) * c;
                    data[d..d + c].copy_from_slice(&src[s..s + c]);
                }
            }
        }
        let out = Tensor::from_parts(like_input(t.shape().len(), [n, 2 * h, 2 * w, c]), data);
        let rg = self.rg(a);
        Ok(self.push(out, rg, Op::Upsample2x(a)))
    }

    /// `input[N, D_in] * weight[D_in, D_out] + bias[D_out]`.
    pub fn fully_connected(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let (x, w) = (self.value(input), self.value(weight));
        let (n, din) = match *x.shape() {
            [n, d] => (n, d),
            _ => {
                return Err(Error::dim(
                    "fully_connected",
                    format!("input must be [N, D_in], got {:?}", x.shape()),
                ))
            }
        };
        let dout = match *w.shape() {
            [a, b] if a == din => b,
            _ => {
                return Err(Error::dim(
                    "fully_connected",
                    format!("weight {:?} does not accept D_in={din}", w.shape()),
                ))
            }
        };
        let mut y = vec![0.0f32; n * dout];
        conv::gemm(
            n,
            din,
            dout,
            x.data(),
            false,
            w.data(),
            false,
            &mut y,
            false,
        );
        if let Some(b) = bias {
            let b = self.value(b);
            if b.shape() != [dout] {
                return Err(Error::dim(
                    "fully_connected",
                    format!("bias {:?} vs D_out={dout}", b.shape()),
                ));
            }
            add_bias(&mut y, b.data());
        }
        let rg = self.rg(input) || self.rg(weight) || self.rg_opt(bias);
        Ok(self.push(
            Tensor::from_parts(vec![n, dout], y),
            rg,
            Op::FullyConnected {
                input,
                weight,
                bias,
            },
        ))
    }

    fn check_bias(&self, op: &'static str, bias: Option<Var>, c: usize) -> Result<()> {
        if let Some(b) = bias {
            let s = self.value(b).shape();
            if s != [c] {
                return Err(Error::dim(op, format!("bias {s:?} vs C_out={c}")));
            }
        }
        Ok(())
    }

    /// Cross-correlation of `input[N,H,W,C_in]` with `kernel[k,k,C_in,C_out]`.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        padding: Padding,
    ) -> Result<Var> {
        let (x, kt) = (self.value(input), self.value(kernel));
        let rank = x.shape().len();
        let [n, h, w, cin] = nhwc("conv2d", x.shape())?;
        let (k, cout) = match *kt.shape() {
            [k1, k2, ci, co] if k1 == k2 && ci == cin => (k1, co),
            _ => {
                return Err(Error::dim(
                    "conv2d",
                    format!("kernel {:?} must be [k,k,C_in={cin},C_out]", kt.shape()),
                ))
            }
        };
        self.check_bias("conv2d", bias, cout)?;
        let geom = ConvGeometry::forward("conv2d", h, w, k, stride, padding)?;
        let rows = n * geom.out_h * geom.out_w;
        let mut y = vec![0.0f32; rows * cout];
        let cols = if geom.is_identity_1x1() {
            conv::gemm(
                rows,
                cin,
                cout,
                x.data(),
                false,
                kt.data(),
                false,
                &mut y,
                false,
            );
            None
        } else {
            let cols = conv::im2col(x.data(), n, cin, &geom);
            conv::gemm(
                rows,
                k * k * cin,
                cout,
                &cols,
                false,
                kt.data(),
                false,
                &mut y,
                false,
            );
            Some(cols)
        };
        if let Some(b) = bias {
            add_bias(&mut y, self.value(b).data());
        }
        let rg = self.rg(input) || self.rg(kernel) || self.rg_opt(bias);
        let cols = if self.rg(kernel) { cols } else { None };
        let out = Tensor::from_parts(like_input(rank, [n, geom.out_h, geom.out_w, cout]), y);
        Ok(self.push(
            out,
            rg,
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
                cols,
            },
        ))
    }

    /// One `k x k` filter per channel; `kernel` is `[k,k,C]`.
    pub fn depthwise_conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        padding: Padding,
    ) -> Result<Var> {
        let (x, kt) = (self.value(input), self.value(kernel));
        let rank = x.shape().len();
        let [n, h, w, c] = nhwc("depthwise_conv2d", x.shape())?;
        let k = match *kt.shape() {
            [k1, k2, kc] if k1 == k2 && kc == c => k1,
            _ => {
                return Err(Error::dim(
                    "depthwise_conv2d",
                    format!("kernel {:?} must be [k,k,C={c}]", kt.shape()),
                ))
            }
        };
        self.check_bias("depthwise_conv2d", bias, c)?;
        let geom = ConvGeometry::forward("depthwise_conv2d", h, w, k, stride, padding)?;
        let mut y = conv::depthwise_forward(x.data(), kt.data(), n, c, &geom);
        if let Some(b) = bias {
            add_bias(&mut y, self.value(b).data());
        }
        let rg = self.rg(input) || self.rg(kernel) || self.rg_opt(bias);
        let out = Tensor::from_parts(like_input(rank, [n, geom.out_h, geom.out_w, c]), y);
        Ok(self.push(
            out,
            rg,
            Op::Depthwise {
                input,
                kernel,
                bias,
                geom,
            },
        ))
    }

    /// Per-pixel linear map with `kernel[1,1,C_in,C_out]`.
    pub fn pointwise_conv2d(&mut self, input: Var, kernel: Var, bias: Option<Var>) -> Result<Var> {
        let ks = self.value(kernel).shape();
        if !matches!(*ks, [1, 1, _, _]) {
            return Err(Error::dim(
                "pointwise_conv2d",
                format!("kernel {ks:?} must be [1,1,C_in,C_out]"),
            ));
        }
        self.conv2d(input, kernel, bias, 1, Padding::Valid)
    }

    /// Adjoint of [`Tape::conv2d`]: maps `input[N,H,W,C_in]` to
    /// `[N,(H-1)*stride+k-pad,..,C_out]` with `kernel[k,k,C_out,C_in]`.
    pub fn transposed_conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        padding: Padding,
    ) -> Result<Var> {
        let (x, kt) = (self.value(input), self.value(kernel));
        let rank = x.shape().len();
        let [n, h, w, cin] = nhwc("transposed_conv2d", x.shape())?;
        let (k, cout) = match *kt.shape() {
            [k1, k2, co, ci] if k1 == k2 && ci == cin => (k1, co),
            _ => {
                return Err(Error::dim(
                    "transposed_conv2d",
                    format!("kernel {:?} must be [k,k,C_out,C_in={cin}]", kt.shape()),
                ))
            }
        };
        self.check_bias("transposed_conv2d", bias, cout)?;
        let geom = ConvGeometry::transposed("transposed_conv2d", h, w, k, stride, padding)?;
        let mut y = if conv::has_direct_kernel(cin, cout) {
            conv::transposed_direct_forward(x.data(), kt.data(), n, cin, cout, &geom)
        } else {
            let rows = n * h * w;
            let mut cols = vec![0.0f32; rows * k * k * cout];
            conv::gemm(
                rows,
                cin,
                k * k * cout,
                x.data(),
                false,
                kt.data(),
                true,
                &mut cols,
                false,
            );
            let mut y = vec![0.0f32; n * geom.in_h * geom.in_w * cout];
            conv::col2im(&cols, n, cout, &geom, &mut y);
            y
        };
        if let Some(b) = bias {
            add_bias(&mut y, self.value(b).data());
        }
        let rg = self.rg(input) || self.rg(kernel) || self.rg_opt(bias);
        let out = Tensor::from_parts(like_input(rank, [n, geom.in_h, geom.in_w, cout]), y);
        Ok(self.push(
            out,
            rg,
            Op::TransposedConv2d {
                input,
                kernel,
                bias,
                geom,
            },
        ))
    }

    /// Per-channel normalization over every axis but the last. Train mode
    /// uses batch statistics and updates `stats`; eval mode reads `stats`.
    pub fn batch_norm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        stats: &mut RunningStats,
        mode: BatchNormMode,
    ) -> Result<Var> {
        let x = self.value(input);
        let c = *x.shape().last().expect("rank >= 1");
        let (g, b) = (self.value(gamma), self.value(beta));
        if g.shape() != [c] || b.shape() != [c] {
            return Err(Error::dim(
                "batch_norm",
                format!("gamma {:?} / beta {:?} vs C={c}", g.shape(), b.shape()),
            ));
        }
        let fwd = norm::bn_forward(x.data(), c, g.data(), b.data(), stats, mode)?;
        let out = Tensor::from_parts(x.shape().to_vec(), fwd.y);
        let rg = self.rg(input) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            out,
            rg,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                x_hat: fwd.x_hat,
                inv_std: fwd.inv_std,
                mode,
            },
        ))
    }

    /// Student-t soft assignment of embeddings `z[N,D]` to `centers[K,D]`.
    pub fn soft_assign(&mut self, z: Var, centers: Var, alpha: f64) -> Result<Var> {
        let (zt, ut) = (self.value(z), self.value(centers));
        let (n, d) = match *zt.shape() {
            [n, d] => (n, d),
            _ => {
                return Err(Error::dim(
                    "soft_assign",
                    format!("embeddings must be [N,D], got {:?}", zt.shape()),
                ))
            }
        };
        let k = match *ut.shape() {
            [k, dd] if dd == d => k,
            _ => {
                return Err(Error::dim(
                    "soft_assign",
                    format!("centers {:?} must be [K,D={d}]", ut.shape()),
                ))
            }
        };
        let (q, _) = student_t_kernel(zt.data(), ut.data(), d, alpha);
        let out = Tensor::from_parts(vec![n, k], q.into_iter().map(|v| v as f32).collect());
        let rg = self.rg(z) || self.rg(centers);
        Ok(self.push(out, rg, Op::SoftAssign { z, centers, alpha }))
    }

    /// `sum p * ln(p / q)` with `0 ln 0 = 0`. No gradient flows into `p`.
    pub fn kl_divergence(&mut self, p: Var, q: Var) -> Result<Var> {
        let (pt, qt) = (self.value(p), self.value(q));
        if pt.shape() != qt.shape() || pt.shape().len() != 2 {
            return Err(Error::dim(
                "kl_divergence",
                format!("P {:?} vs Q {:?}", pt.shape(), qt.shape()),
            ));
        }
        let k = pt.shape()[1];
        let mut total = 0.0f64;
        for (idx, (&pv, &qv)) in pt.data().iter().zip(qt.data()).enumerate() {
            if pv > 0.0 {
                if qv <= 0.0 {
                    return Err(Error::InfiniteDivergence {
                        row: idx / k,
                        col: idx % k,
                    });
                }
                total += pv as f64 * (pv as f64 / qv as f64).ln();
            }
        }
        let rg = self.rg(q);
        Ok(self.push(Tensor::scalar(total as f32), rg, Op::KlDivergence { p, q }))
    }

    /// Mean over the leading axis of the squared L2 norm of `pred - target`.
    pub fn reconstruction_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (a, b) = (self.value(pred), self.value(target));
        if a.shape() != b.shape() {
            return Err(Error::dim(
                "reconstruction_loss",
                format!("prediction {:?} vs target {:?}", a.shape(), b.shape()),
            ));
        }
        let n = a.shape()[0];
        let s: f64 = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| {
                let d = x as f64 - y as f64;
                d * d
            })
            .sum();
        let rg = self.rg(pred) || self.rg(target);
        Ok(self.push(
            Tensor::scalar((s / n as f64) as f32),
            rg,
            Op::Reconstruction { pred, target },
        ))
    }

    /// Back-propagates from the scalar `loss` through every recorded op.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(Error::Usage("backward on an empty tape".into()));
        }
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                lt.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(gy) = grads[idx].take() else {
                continue;
            };
            // Interior gradients are dropped once propagated; leaves keep theirs.
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(gy);
            } else {
                self.backward_node(node, gy, &mut grads)?;
            }
        }
        Ok(Gradients { grads })
    }

    fn backward_node(
        &self,
        node: &Node,
        gy_buf: Vec<f32>,
        grads: &mut [Option<Vec<f32>>],
    ) -> Result<()> {
        let gy = gy_buf.as_slice();
        let len = |v: Var| self.value(v).len();
        let send = |grads: &mut [Option<Vec<f32>>], v: Var, g: Vec<f32>| {
            if self.rg(v) {
                add_into(&mut grads[v.0], g);
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                send(grads, *a, gy.to_vec());
                send(grads, *b, gy_buf);
            }
            Op::Scale(a, f) => send(grads, *a, gy.iter().map(|g| g * f).collect()),
            Op::MulConst(a, w) => send(grads, *a, gy.iter().zip(w).map(|(g, w)| g * w).collect()),
            Op::Sum(a) => send(grads, *a, vec![gy[0]; len(*a)]),
            Op::Relu(a) => {
                let x = self.value(*a).data();
                send(
                    grads,
                    *a,
                    gy.iter()
                        .zip(x)
                        .map(|(&g, &v)| if v > 0.0 { g } else { 0.0 })
                        .collect(),
                );
            }
            Op::Reshape(a) => send(grads, *a, gy_buf),
            Op::CropWidth { input, left } => {
                let [_, _, w, c] = nhwc("crop_width", self.value(*input).shape())?;
                let width = node.value.shape()[node.value.shape().len() - 2];
                let mut g = vec![0.0f32; len(*input)];
                for (dst, src) in g.chunks_exact_mut(w * c).zip(gy.chunks_exact(width * c)) {
                    dst[left * c..(left + width) * c].copy_from_slice(src);
                }
                send(grads, *input, g);
            }
            Op::Upsample2x(a) => {
                let [n, h, w, c] = nhwc("upsample2x", self.value(*a).shape())?;
                let mut g = vec![0.0f32; len(*a)];
                for b in 0..n {
                    for y in 0..2 * h {
                        for x in 0..2 * w {
                            let d = ((b * h + y / 2) * w + x / 2) * c;
                            let s = ((b * 2 * h + y) * 2 * w + x) * c;
                            g[d..d + c]
                                .iter_mut()
                                .zip(&gy[s..s + c])
                                .for_each(|(a, b)| *a += b);
                        }
                    }
                }
                send(grads, *a, g);
            }
            Op::FullyConnected {
                input,
                weight,
                bias,
            } => {
                let (x, w) = (self.value(*input), self.value(*weight));
                let (n, din) = (x.shape()[0], x.shape()[1]);
                let dout = w.shape()[1];
                if self.rg(*input) {
                    let mut dx = vec![0.0f32; n * din];
                    conv::gemm(n, dout, din, gy, false, w.data(), true, &mut dx, false);
                    send(grads, *input, dx);
                }
                if self.rg(*weight) {
                    let mut dw = vec![0.0f32; din * dout];
                    conv::gemm(din, n, dout, x.data(), true, gy, false, &mut dw, false);
                    send(grads, *weight, dw);
                }
                if let Some(b) = bias {
                    send(grads, *b, bias_grad(gy, dout));
                }
            }
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
                cols,
            } => {
                let (x, kt) = (self.value(*input), self.value(*kernel));
                let [n, _, _, cin] = nhwc("conv2d", x.shape())?;
                let cout = kt.shape()[3];
                let k = geom.kernel;
                let rows = n * geom.out_h * geom.out_w;
                let kk = k * k * cin;
                if self.rg(*kernel) {
                    let mut dk = vec![0.0f32; kk * cout];
                    let a = cols.as_deref().unwrap_or(x.data());
                    conv::gemm(kk, rows, cout, a, true, gy, false, &mut dk, false);
                    send(grads, *kernel, dk);
                }
                if self.rg(*input) {
                    if geom.is_identity_1x1() {
                        let mut dx = vec![0.0f32; x.len()];
                        conv::gemm(rows, cout, cin, gy, false, kt.data(), true, &mut dx, false);
                        send(grads, *input, dx);
                    } else {
                        let mut dcols = vec![0.0f32; rows * kk];
                        conv::gemm(
                            rows,
                            cout,
                            kk,
                            gy,
                            false,
                            kt.data(),
                            true,
                            &mut dcols,
                            false,
                        );
                        let mut dx = vec![0.0f32; x.len()];
                        conv::col2im(&dcols, n, cin, geom, &mut dx);
                        send(grads, *input, dx);
                    }
                }
                if let Some(b) = bias {
                    send(grads, *b, bias_grad(gy, cout));
                }
            }
            Op::Depthwise {
                input,
                kernel,
                bias,
                geom,
            } => {
                let (x, kt) = (self.value(*input), self.value(*kernel));
                let [n, _, _, c] = nhwc("depthwise_conv2d", x.shape())?;
                let (dx, dk) = conv::depthwise_backward(
                    x.data(),
                    kt.data(),
                    gy,
                    n,
                    c,
                    geom,
                    self.rg(*input),
                    self.rg(*kernel),
                );
                if let Some(dx) = dx {
                    send(grads, *input, dx);
                }
                if let Some(dk) = dk {
                    send(grads, *kernel, dk);
                }
                if let Some(b) = bias {
                    send(grads, *b, bias_grad(gy, c));
                }
            }
            Op::TransposedConv2d {
                input,
                kernel,
                bias,
                geom,
            } => {
                let (x, kt) = (self.value(*input), self.value(*kernel));
                let [n, h, w, cin] = nhwc("transposed_conv2d", x.shape())?;
                let cout = kt.shape()[2];
                let kk = geom.kernel * geom.kernel * cout;
                let rows = n * h * w;
                if conv::has_direct_kernel(cin, cout) {
                    let (dx, dk) = conv::transposed_direct_backward(
                        x.data(),
                        kt.data(),
                        gy,
                        n,
                        cin,
                        cout,
                        geom,
                        self.rg(*input),
                        self.rg(*kernel),
                    );
                    if let Some(dx) = dx {
                        send(grads, *input, dx);
                    }
                    if let Some(dk) = dk {
                        send(grads, *kernel, dk);
                    }
                } else if self.rg(*input) || self.rg(*kernel) {
                    let dcols = conv::im2col(gy, n, cout, geom);
                    if self.rg(*input) {
                        let mut dx = vec![0.0f32; rows * cin];
                        conv::gemm(
                            rows,
                            kk,
                            cin,
                            &dcols,
                            false,
                            kt.data(),
                            false,
                            &mut dx,
                            false,
                        );
                        send(grads, *input, dx);
                    }
                    if self.rg(*kernel) {
                        let mut dk = vec![0.0f32; kk * cin];
                        conv::gemm(kk, rows, cin, &dcols, true, x.data(), false, &mut dk, false);
                        send(grads, *kernel, dk);
                    }
                }
                if let Some(b) = bias {
                    send(grads, *b, bias_grad(gy, cout));
                }
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                x_hat,
                inv_std,
                mode,
            } => {
                let g = self.value(*gamma).data();
                let bw = norm::bn_backward(gy, x_hat, inv_std, g, *mode);
                send(grads, *input, bw.dx);
                send(grads, *gamma, bw.dgamma);
                send(grads, *beta, bw.dbeta);
            }
            Op::SoftAssign { z, centers, alpha } => {
                let (zt, ut) = (self.value(*z), self.value(*centers));
                let d = zt.shape()[1];
                let k = ut.shape()[0];
                let n = zt.shape()[0];
                let (q, dist) = student_t_kernel(zt.data(), ut.data(), d, *alpha);
                let mut dz = vec![0.0f64; zt.len()];
                let mut du = vec![0.0f64; ut.len()];
                for i in 0..n {
                    let row = i * k;
                    let inner: f64 = (0..k).map(|j| gy[row + j] as f64 * q[row + j]).sum();
                    for j in 0..k {
                        // dL/d(log t_ij) through the row normalization, then
                        // d(log t_ij)/d(dist_ij).
                        let s = q[row + j] * (gy[row + j] as f64 - inner);
                        let a = -(alpha + 1.0) / (2.0 * (alpha + dist[row + j]));
                        let coef = 2.0 * s * a;
                        for t in 0..d {
                            let diff = zt.data()[i * d + t] as f64 - ut.data()[j * d + t] as f64;
                            dz[i * d + t] += coef * diff;
                            du[j * d + t] -= coef * diff;
                        }
                    }
                }
                send(grads, *z, dz.into_iter().map(|v| v as f32).collect());
                send(grads, *centers, du.into_iter().map(|v| v as f32).collect());
            }
            Op::KlDivergence { p, q } => {
                let (pt, qt) = (self.value(*p), self.value(*q));
                let g0 = gy[0];
                send(
                    grads,
                    *q,
                    pt.data()
                        .iter()
                        .zip(qt.data())
                        .map(|(&pv, &qv)| if pv > 0.0 { -g0 * pv / qv } else { 0.0 })
                        .collect(),
                );
            }
            Op::Reconstruction { pred, target } => {
                let (a, b) = (self.value(*pred), self.value(*target));
                let scale = 2.0 * gy[0] / a.shape()[0] as f32;
                let diff: Vec<f32> = a
                    .data()
                    .iter()
                    .zip(b.data())
                    .map(|(x, y)| scale * (x - y))
                    .collect();
                if self.rg(*target) {
                    send(grads, *target, diff.iter().map(|v| -v).collect());
                }
                send(grads, *pred, diff);
            }
        }
        Ok(())
    }
}
