use super::spec::{ActShape, ArchitectureSpec, LayerDescriptor, LayerKind};
use crate::error::{Error, Result};
use crate::tensor::{BatchNormMode, Gradients, Padding, RunningStats, Tape, Tensor, Var};
use rand::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum ConvKind {
    Standard,
    Depthwise,
    Transposed,
}

#[derive(Clone, Debug)]
struct BnRef {
    gamma: usize,
    beta: usize,
    stats: usize,
}

#[derive(Clone, Debug)]
struct ConvUnit {
    kind: ConvKind,
    kernel: usize,
    bias: Option<usize>,
    bn: Option<BnRef>,
    relu: bool,
    stride: usize,
    padding: Padding,
}

#[derive(Clone, Debug)]
enum Layer {
    Unit(ConvUnit),
    Separable {
        depthwise: ConvUnit,
        pointwise: ConvUnit,
    },
    Dsc {
        expand: ConvUnit,
        depthwise: ConvUnit,
        pointwise: ConvUnit,
        /// `None`: no residual. `Some(None)`: identity shortcut.
        shortcut: Option<Option<ConvUnit>>,
    },
    TransposedBlock {
        main: ConvUnit,
        /// `None`: no skip. `Some(None)`: plain upsampling skip.
        skip: Option<Option<ConvUnit>>,
    },
    Flatten,
    Dense {
        weight: usize,
        bias: Option<usize>,
        relu: bool,
    },
    Reshape([usize; 3]),
    Crop {
        width: usize,
    },
}

/// Tape handles for every model parameter, in [`Dscan::params`] order.
#[derive(Clone, Debug)]
pub struct Bindings {
    vars: Vec<Var>,
}

impl Bindings {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

struct Builder<'r, R: Rng + ?Sized> {
    params: Vec<Parameter>,
    stats: Vec<RunningStats>,
    stat_names: Vec<String>,
    rng: &'r mut R,
}

impl<R: Rng + ?Sized> Builder<'_, R> {
    fn add(&mut self, name: String, tensor: Tensor) -> usize {
        self.params.push(Parameter {
            name,
            tensor: tensor.with_requires_grad(),
        });
        self.params.len() - 1
    }

    fn bn(&mut self, name: &str, c: usize) -> BnRef {
        let gamma = self.add(format!("{name}.gamma"), Tensor::ones([c]));
        let beta = self.add(format!("{name}.beta"), Tensor::zeros([c]));
        self.stats.push(RunningStats::new(c));
        self.stat_names.push(name.to_string());
        BnRef {
            gamma,
            beta,
            stats: self.stats.len() - 1,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn unit(
        &mut self,
        name: &str,
        kind: ConvKind,
        kernel: usize,
        stride: usize,
        cin: usize,
        cout: usize,
        bias: bool,
        bn: bool,
        relu: bool,
        padding: Padding,
    ) -> ConvUnit {
        let k2 = kernel * kernel;
        let (shape, fan_in) = match kind {
            ConvKind::Standard => (vec![kernel, kernel, cin, cout], k2 * cin),
            ConvKind::Depthwise => (vec![kernel, kernel, cin], k2),
            ConvKind::Transposed => (
                vec![kernel, kernel, cout, cin],
                (k2 * cin / (stride * stride)).max(1),
            ),
        };
        let std = (2.0 / fan_in as f32).sqrt();
        let w = Tensor::randn(shape, std, self.rng);
        let kernel_idx = self.add(format!("{name}.kernel"), w);
        let out_c = if kind == ConvKind::Depthwise {
            cin
        } else {
            cout
        };
        let bias = bias.then(|| self.add(format!("{name}.bias"), Tensor::zeros([out_c])));
        let bn = bn.then(|| self.bn(&format!("{name}.bn"), out_c));
        ConvUnit {
            kind,
            kernel: kernel_idx,
            bias,
            bn,
            relu,
            stride,
            padding,
        }
    }

    fn dense(&mut self, name: &str, din: usize, dout: usize, bias: bool) -> (usize, Option<usize>) {
        let limit = (6.0 / (din + dout) as f32).sqrt();
        let w = Tensor::uniform([din, dout], -limit, limit, self.rng);
        let weight = self.add(format!("{name}.weight"), w);
        let bias = bias.then(|| self.add(format!("{name}.bias"), Tensor::zeros([dout])));
        (weight, bias)
    }

    fn layer(&mut self, spec: &ArchitectureSpec, d: &LayerDescriptor) -> Layer {
        let n = d.name.as_str();
        let (cin, cout) = (d.in_channels, d.out_channels);
        match d.kind {
            LayerKind::Conv | LayerKind::PointwiseConv => {
                let k = if d.kind == LayerKind::PointwiseConv {
                    1
                } else {
                    d.kernel
                };
                Layer::Unit(self.unit(
                    n,
                    ConvKind::Standard,
                    k,
                    d.stride,
                    cin,
                    cout,
                    d.bias,
                    d.batch_norm,
                    d.relu,
                    d.padding,
                ))
            }
            LayerKind::DepthwiseConv => Layer::Unit(self.unit(
                n,
                ConvKind::Depthwise,
                d.kernel,
                d.stride,
                cin,
                cin,
                d.bias,
                d.batch_norm,
                d.relu,
                d.padding,
            )),
            LayerKind::TransposedConv => Layer::Unit(self.unit(
                n,
                ConvKind::Transposed,
                d.kernel,
                d.stride,
                cin,
                cout,
                d.bias,
                d.batch_norm,
                d.relu,
                d.padding,
            )),
            LayerKind::SeparableConv => {
                let depthwise = self.unit(
                    &format!("{n}.depthwise"),
                    ConvKind::Depthwise,
                    d.kernel,
                    d.stride,
                    cin,
                    cin,
                    false,
                    false,
                    false,
                    d.padding,
                );
                let pointwise = self.unit(
                    &format!("{n}.pointwise"),
                    ConvKind::Standard,
                    1,
                    1,
                    cin,
                    cout,
                    d.bias,
                    d.batch_norm,
                    d.relu,
                    Padding::Valid,
                );
                Layer::Separable {
                    depthwise,
                    pointwise,
                }
            }
            LayerKind::DscBlock => {
                let v = Padding::Valid;
                let expand = self.unit(
                    &format!("{n}.expand"),
                    ConvKind::Standard,
                    1,
                    1,
                    cin,
                    cin,
                    false,
                    true,
                    true,
                    v,
                );
                let depthwise = self.unit(
                    &format!("{n}.depthwise"),
                    ConvKind::Depthwise,
                    d.kernel,
                    d.stride,
                    cin,
                    cin,
                    false,
                    true,
                    true,
                    d.padding,
                );
                let pointwise = self.unit(
                    &format!("{n}.pointwise"),
                    ConvKind::Standard,
                    1,
                    1,
                    cin,
                    cout,
                    false,
                    true,
                    true,
                    v,
                );
                let shortcut = d.residual.then(|| {
                    d.needs_projection().then(|| {
                        self.unit(
                            &format!("{n}.shortcut"),
                            ConvKind::Standard,
                            1,
                            d.stride,
                            cin,
                            cout,
                            false,
                            true,
                            false,
                            Padding::Valid,
                        )
                    })
                });
                Layer::Dsc {
                    expand,
                    depthwise,
                    pointwise,
                    shortcut,
                }
            }
            LayerKind::TransposedConvBlock => {
                let main = self.unit(
                    &format!("{n}.tconv"),
                    ConvKind::Transposed,
                    d.kernel,
                    d.stride,
                    cin,
                    cout,
                    false,
                    true,
                    true,
                    d.padding,
                );
                let skip = d.residual.then(|| {
                    (cin != cout).then(|| {
                        self.unit(
                            &format!("{n}.skip"),
                            ConvKind::Standard,
                            1,
                            1,
                            cin,
                            cout,
                            false,
                            false,
                            false,
                            Padding::Valid,
                        )
                    })
                });
                Layer::TransposedBlock { main, skip }
            }
            LayerKind::Flatten => Layer::Flatten,
            LayerKind::FullyConnected => {
                let (weight, bias) = self.dense(n, cin, cout, d.bias);
                Layer::Dense {
                    weight,
                    bias,
                    relu: d.relu,
                }
            }
            LayerKind::Reshape => Layer::Reshape(spec.decoder_reshape),
            LayerKind::CropWidth => Layer::Crop {
                width: spec.input_shape[1],
            },
        }
    }
}

fn conv_unit(
    tape: &mut Tape,
    vars: &[Var],
    stats: &mut [RunningStats],
    unit: &ConvUnit,
    x: Var,
    mode: BatchNormMode,
) -> Result<Var> {
    let k = vars[unit.kernel];
    let b = unit.bias.map(|i| vars[i]);
    let mut y = match unit.kind {
        ConvKind::Standard => tape.conv2d(x, k, b, unit.stride, unit.padding)?,
        ConvKind::Depthwise => tape.depthwise_conv2d(x, k, b, unit.stride, unit.padding)?,
        ConvKind::Transposed => tape.transposed_conv2d(x, k, b, unit.stride, unit.padding)?,
    };
    if let Some(bn) = &unit.bn {
        y = tape.batch_norm(y, vars[bn.gamma], vars[bn.beta], &mut stats[bn.stats], mode)?;
    }
    if unit.relu {
        y = tape.relu(y);
    }
    Ok(y)
}

fn run_layers(
    layers: &[Layer],
    tape: &mut Tape,
    vars: &[Var],
    stats: &mut [RunningStats],
    mut x: Var,
    mode: BatchNormMode,
) -> Result<Var> {
    for layer in layers {
        x = match layer {
            Layer::Unit(u) => conv_unit(tape, vars, stats, u, x, mode)?,
            Layer::Separable {
                depthwise,
                pointwise,
            } => {
                let h = conv_unit(tape, vars, stats, depthwise, x, mode)?;
                conv_unit(tape, vars, stats, pointwise, h, mode)?
            }
            Layer::Dsc {
                expand,
                depthwise,
                pointwise,
                shortcut,
            } => {
                let h = conv_unit(tape, vars, stats, expand, x, mode)?;
                let h = conv_unit(tape, vars, stats, depthwise, h, mode)?;
                let main = conv_unit(tape, vars, stats, pointwise, h, mode)?;
                match shortcut {
                    None => main,
                    Some(None) => tape.add(main, x)?,
                    Some(Some(proj)) => {
                        let s = conv_unit(tape, vars, stats, proj, x, mode)?;
                        tape.add(main, s)?
                    }
                }
            }
            Layer::TransposedBlock { main, skip } => {
                let m = conv_unit(tape, vars, stats, main, x, mode)?;
                match skip {
                    None => m,
                    Some(proj) => {
                        let s = match proj {
                            Some(p) => conv_unit(tape, vars, stats, p, x, mode)?,
                            None => x,
                        };
                        let s = tape.upsample2x(s)?;
                        tape.add(m, s)?
                    }
                }
            }
            Layer::Flatten => {
                let shape = tape.value(x).shape();
                let n = shape[0];
                let rest: usize = shape[1..].iter().product();
                tape.reshape(x, &[n, rest])?
            }
            Layer::Dense { weight, bias, relu } => {
                let y = tape.fully_connected(x, vars[*weight], bias.map(|b| vars[b]))?;
                if *relu {
                    tape.relu(y)
                } else {
                    y
                }
            }
            Layer::Reshape([h, w, c]) => {
                let n = tape.value(x).shape()[0];
                tape.reshape(x, &[n, *h, *w, *c])?
            }
            Layer::Crop { width } => {
                let w = tape.value(x).shape()[2];
                tape.crop_width(x, (w - width) / 2, *width)?
            }
        };
    }
    Ok(x)
}

/// The convolutional autoencoder: encoder `f` to a low-dimensional
/// embedding and decoder `g` back to the input feature shape.
#[derive(Clone, Debug)]
pub struct Dscan {
    spec: ArchitectureSpec,
    params: Vec<Parameter>,
    stats: Vec<RunningStats>,
    stat_names: Vec<String>,
    encoder: Vec<Layer>,
    decoder: Vec<Layer>,
}

/// How many feature maps go through the network per eval-mode chunk.
const EVAL_CHUNK: usize = 32;

impl Dscan {
    pub fn new<R: Rng + ?Sized>(spec: ArchitectureSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut b = Builder {
            params: Vec::new(),
            stats: Vec::new(),
            stat_names: Vec::new(),
            rng,
        };
        let encoder = spec.encoder.iter().map(|d| b.layer(&spec, d)).collect();
        let decoder = spec.decoder.iter().map(|d| b.layer(&spec, d)).collect();
        Ok(Dscan {
            params: b.params,
            stats: b.stats,
            stat_names: b.stat_names,
            spec,
            encoder,
            decoder,
        })
    }

    pub fn spec(&self) -> &ArchitectureSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    pub fn param_tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.params.iter_mut().map(|p| &mut p.tensor).collect()
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params
            .iter_mut()
            .find(|p| p.name == name)
            .map(|p| &mut p.tensor)
    }

    /// BN running statistics with the name of the layer they belong to.
    pub fn running_stats(&self) -> impl Iterator<Item = (&str, &RunningStats)> {
        self.stat_names.iter().map(String::as_str).zip(&self.stats)
    }

    /// Replaces a parameter tensor, keeping its shape.
    pub fn load_param(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        let slot = self
            .params
            .iter_mut()
            .find(|p| p.name == name)
            .ok_or_else(|| Error::Format(format!("unknown parameter {name:?}")))?;
        if slot.tensor.shape() != tensor.shape() {
            return Err(Error::dim(
                "load_param",
                format!(
                    "{name}: model has {:?}, got {:?}",
                    slot.tensor.shape(),
                    tensor.shape()
                ),
            ));
        }
        slot.tensor = tensor.with_requires_grad();
        Ok(())
    }

    pub fn load_running_stats(&mut self, name: &str, stats: RunningStats) -> Result<()> {
        let idx = self
            .stat_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Format(format!("unknown BN layer {name:?}")))?;
        if self.stats[idx].mean.len() != stats.mean.len() || stats.var.len() != stats.mean.len() {
            return Err(Error::dim(
                "load_running_stats",
                format!("{name}: channel count"),
            ));
        }
        self.stats[idx] = stats;
        Ok(())
    }

    /// Adds the gradients of a backward pass over `bindings` into the
    /// parameters' grad buffers.
    pub fn accumulate_grads(&mut self, bindings: &Bindings, grads: &Gradients) -> Result<()> {
        for (p, v) in self.params.iter_mut().zip(&bindings.vars) {
            grads.accumulate_into(*v, &mut p.tensor)?;
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(|p| p.tensor.zero_grad());
    }

    /// Records every parameter on `tape`, trainable or as constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bindings {
        let vars = self
            .params
            .iter()
            .map(|p| {
                if trainable {
                    tape.param(&p.tensor)
                } else {
                    tape.constant(p.tensor.clone())
                }
            })
            .collect();
        Bindings { vars }
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let [h, w, c] = self.spec.input_shape;
        match *shape {
            [_, a, b, d] if [a, b, d] == [h, w, c] => Ok(()),
            _ => Err(Error::dim(
                "encode",
                format!("input must be [N,{h},{w},{c}], got {shape:?}"),
            )),
        }
    }

    pub fn encode_on(
        &mut self,
        tape: &mut Tape,
        bindings: &Bindings,
        x: Var,
        mode: BatchNormMode,
    ) -> Result<Var> {
        self.check_input(tape.value(x).shape())?;
        run_layers(
            &self.encoder,
            tape,
            &bindings.vars,
            &mut self.stats,
            x,
            mode,
        )
    }

    pub fn decode_on(
        &mut self,
        tape: &mut Tape,
        bindings: &Bindings,
        z: Var,
        mode: BatchNormMode,
    ) -> Result<Var> {
        match *tape.value(z).shape() {
            [_, d] if d == self.spec.embedding_dim => {}
            ref s => {
                return Err(Error::dim(
                    "decode",
                    format!(
                        "embeddings must be [N,{}], got {s:?}",
                        self.spec.embedding_dim
                    ),
                ))
            }
        }
        run_layers(
            &self.decoder,
            tape,
            &bindings.vars,
            &mut self.stats,
            z,
            mode,
        )
    }

    fn eval_chunked(
        &self,
        x: &Tensor,
        f: impl Fn(&mut Dscan, &mut Tape, &Bindings, Var) -> Result<Var>,
    ) -> Result<Tensor> {
        let n = x.shape()[0];
        let per: usize = x.shape()[1..].iter().product();
        let mut scratch = self.clone();
        let mut out = Vec::new();
        let mut out_shape = Vec::new();
        for start in (0..n).step_by(EVAL_CHUNK) {
            let m = EVAL_CHUNK.min(n - start);
            let mut shape = x.shape().to_vec();
            shape[0] = m;
            let chunk = Tensor::new(shape, x.data()[start * per..(start + m) * per].to_vec())?;
            let mut tape = Tape::new();
            let b = scratch.bind(&mut tape, false);
            let xv = tape.constant(chunk);
            let y = f(&mut scratch, &mut tape, &b, xv)?;
            let yt = tape.value(y);
            out_shape = yt.shape().to_vec();
            out.extend_from_slice(yt.data());
        }
        out_shape[0] = n;
        Tensor::new(out_shape, out)
    }

    /// Eval-mode embeddings `[N, embedding_dim]` for a batch `[N,H,W,C]`.
    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x.shape())?;
        self.eval_chunked(x, |m, t, b, v| m.encode_on(t, b, v, BatchNormMode::Eval))
    }

    /// Eval-mode reconstruction from embeddings `[N, embedding_dim]`.
    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        match *z.shape() {
            [_, d] if d == self.spec.embedding_dim => {}
            ref s => {
                return Err(Error::dim(
                    "decode",
                    format!(
                        "embeddings must be [N,{}], got {s:?}",
                        self.spec.embedding_dim
                    ),
                ))
            }
        }
        self.eval_chunked(z, |m, t, b, v| m.decode_on(t, b, v, BatchNormMode::Eval))
    }

    /// Shape of each intermediate activation of the encoder for one input.
    pub fn encoder_shapes(&self) -> Result<Vec<(String, ActShape)>> {
        let mut shape = self.spec.input_act();
        self.spec
            .encoder
            .iter()
            .map(|d| {
                shape = self.spec.layer_output(d, shape)?;
                Ok((d.name.clone(), shape))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_spec() -> ArchitectureSpec {
        // 8x12 input, same topology as the reference at reduced size
        ArchitectureSpec {
            input_shape: [8, 12, 1],
            encoder: vec![
                LayerDescriptor::conv("enc.stem", 3, 2, 1, 4).bn_relu(),
                LayerDescriptor::dsc_block("enc.b1", 2, 4, 6),
                LayerDescriptor::dsc_block("enc.b2", 1, 6, 6),
                LayerDescriptor::new("enc.flatten", LayerKind::Flatten),
                LayerDescriptor::fully_connected("enc.embed", 2 * 3 * 6, 3),
            ],
            decoder: vec![
                LayerDescriptor::fully_connected("dec.fc", 3, 2 * 4 * 4).with_relu(),
                LayerDescriptor::new("dec.reshape", LayerKind::Reshape),
                LayerDescriptor::transposed_block("dec.b1", 4, 2),
                LayerDescriptor::transposed_block("dec.b2", 2, 2),
                LayerDescriptor::conv("dec.out", 3, 1, 2, 1)
                    .with_kind(LayerKind::TransposedConv)
                    .with_bias(),
                LayerDescriptor::new("dec.crop", LayerKind::CropWidth),
            ],
            embedding_dim: 3,
            decoder_fc_width: 32,
            decoder_reshape: [2, 4, 4],
            num_clusters: 0,
        }
    }

    #[test]
    fn small_model_round_trips_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = Dscan::new(small_spec(), &mut rng).unwrap();
        let x = Tensor::randn([3, 8, 12, 1], 1.0, &mut rng);
        let z = model.encode(&x).unwrap();
        assert_eq!(z.shape(), &[3, 3]);
        let y = model.decode(&z).unwrap();
        assert_eq!(y.shape(), x.shape());
    }

    #[test]
    fn wrong_input_shape_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = Dscan::new(small_spec(), &mut rng).unwrap();
        let x = Tensor::zeros([2, 8, 11, 1]);
        assert!(matches!(model.encode(&x), Err(Error::Dimension { .. })));
        assert!(matches!(
            model.decode(&Tensor::zeros([2, 4])),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn every_parameter_gets_a_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut model = Dscan::new(small_spec(), &mut rng).unwrap();
        let x = Tensor::randn([4, 8, 12, 1], 1.0, &mut rng);
        let mut tape = Tape::new();
        let b = model.bind(&mut tape, true);
        let xv = tape.constant(x);
        let z = model
            .encode_on(&mut tape, &b, xv, BatchNormMode::Train)
            .unwrap();
        let y = model
            .decode_on(&mut tape, &b, z, BatchNormMode::Train)
            .unwrap();
        let loss = tape.reconstruction_loss(y, xv).unwrap();
        let grads = tape.backward(loss).unwrap();
        for (p, v) in model.params().iter().zip(b.vars()) {
            let g = grads
                .get(*v)
                .unwrap_or_else(|| panic!("{} has no gradient", p.name));
            assert!(
                g.iter().any(|&x| x != 0.0),
                "{} gradient is all zero",
                p.name
            );
        }
    }

    #[test]
    fn zeroed_main_path_passes_the_shortcut() {
        let spec = ArchitectureSpec {
            input_shape: [6, 6, 3],
            encoder: vec![
                LayerDescriptor::dsc_block("b", 2, 3, 5),
                LayerDescriptor::new("f", LayerKind::Flatten),
            ],
            decoder: vec![],
            embedding_dim: 45,
            decoder_fc_width: 0,
            decoder_reshape: [0, 0, 0],
            num_clusters: 0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // decoder is empty, so build without validate()
        let mut b = Builder {
            params: Vec::new(),
            stats: Vec::new(),
            stat_names: Vec::new(),
            rng: &mut rng,
        };
        let layer = b.layer(&spec, &spec.encoder[0]);
        let mut params = b.params;
        let mut stats = b.stats;
        for p in params.iter_mut() {
            let main = ["b.expand", "b.depthwise", "b.pointwise"]
                .iter()
                .any(|m| p.name.starts_with(m));
            if main && p.name.ends_with(".kernel") {
                p.tensor.data_mut().fill(0.0);
            }
        }
        let x = Tensor::randn([2, 6, 6, 3], 1.0, b.rng);
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|p| tape.param(&p.tensor)).collect();
        let xv = tape.constant(x.clone());
        let y = run_layers(
            std::slice::from_ref(&layer),
            &mut tape,
            &vars,
            &mut stats,
            xv,
            BatchNormMode::Train,
        )
        .unwrap();
        // shortcut alone: 1x1 stride-2 conv then BN (train mode)
        let Layer::Dsc {
            shortcut: Some(Some(proj)),
            ..
        } = &layer
        else {
            panic!("expected a projected shortcut");
        };
        let mut stats2: Vec<RunningStats> = stats
            .iter()
            .map(|s| RunningStats::new(s.mean.len()))
            .collect();
        let s = conv_unit(
            &mut tape,
            &vars,
            &mut stats2,
            proj,
            xv,
            BatchNormMode::Train,
        )
        .unwrap();
        assert!(tape.value(y).max_abs_diff(tape.value(s)) < 1e-6);
    }
}
