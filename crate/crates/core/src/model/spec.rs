use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ConvGeometry, Padding};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    /// Standard `k x k` convolution.
    Conv,
    DepthwiseConv,
    PointwiseConv,
    /// Depthwise followed directly by pointwise, counted as one layer.
    SeparableConv,
    /// 1x1 conv, depthwise `k x k` (carries the stride), 1x1 pointwise, each
    /// with BN and ReLU, plus a shortcut when `residual`.
    DscBlock,
    Flatten,
    FullyConnected,
    /// Unflattens to the architecture's `decoder_reshape`.
    Reshape,
    /// Strided transposed conv with BN and ReLU, plus an upsampling skip
    /// connection when `residual`.
    TransposedConvBlock,
    TransposedConv,
    /// Symmetric crop of the width axis to the architecture's input width.
    CropWidth,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerDescriptor {
    pub name: String,
    pub kind: LayerKind,
    #[serde(default = "one")]
    pub kernel: usize,
    #[serde(default = "one")]
    pub stride: usize,
    #[serde(default)]
    pub in_channels: usize,
    #[serde(default)]
    pub out_channels: usize,
    #[serde(default)]
    pub residual: bool,
    #[serde(default)]
    pub bias: bool,
    #[serde(default)]
    pub batch_norm: bool,
    #[serde(default)]
    pub relu: bool,
    #[serde(default = "same")]
    pub padding: Padding,
}

fn one() -> usize {
    1
}

fn same() -> Padding {
    Padding::Same
}

impl LayerDescriptor {
    pub fn new(name: impl Into<String>, kind: LayerKind) -> Self {
        LayerDescriptor {
            name: name.into(),
            kind,
            kernel: 1,
            stride: 1,
            in_channels: 0,
            out_channels: 0,
            residual: false,
            bias: false,
            batch_norm: false,
            relu: false,
            padding: Padding::Same,
        }
    }

    pub fn conv(name: &str, kernel: usize, stride: usize, cin: usize, cout: usize) -> Self {
        LayerDescriptor {
            kernel,
            stride,
            in_channels: cin,
            out_channels: cout,
            ..Self::new(name, LayerKind::Conv)
        }
    }

    pub fn with_kind(mut self, kind: LayerKind) -> Self {
        self.kind = kind;
        self
    }

    /// Adds BN + ReLU after the layer (and drops the now redundant bias).
    pub fn bn_relu(mut self) -> Self {
        self.batch_norm = true;
        self.relu = true;
        self.bias = false;
        self
    }

    pub fn with_bias(mut self) -> Self {
        self.bias = true;
        self
    }

    pub fn with_relu(mut self) -> Self {
        self.relu = true;
        self
    }

    pub fn residual(mut self) -> Self {
        self.residual = true;
        self
    }

    pub fn dsc_block(name: &str, stride: usize, cin: usize, cout: usize) -> Self {
        LayerDescriptor {
            kernel: 3,
            stride,
            in_channels: cin,
            out_channels: cout,
            residual: true,
            batch_norm: true,
            relu: true,
            ..Self::new(name, LayerKind::DscBlock)
        }
    }

    pub fn transposed_block(name: &str, cin: usize, cout: usize) -> Self {
        LayerDescriptor {
            kernel: 3,
            stride: 2,
            in_channels: cin,
            out_channels: cout,
            residual: true,
            batch_norm: true,
            relu: true,
            ..Self::new(name, LayerKind::TransposedConvBlock)
        }
    }

    pub fn fully_connected(name: &str, din: usize, dout: usize) -> Self {
        LayerDescriptor {
            in_channels: din,
            out_channels: dout,
            bias: true,
            ..Self::new(name, LayerKind::FullyConnected)
        }
    }

    /// Whether a [`LayerKind::DscBlock`] needs a projection on its shortcut.
    pub fn needs_projection(&self) -> bool {
        self.stride != 1 || self.in_channels != self.out_channels
    }
}

/// Activation shape between layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActShape {
    Map { h: usize, w: usize, c: usize },
    Flat(usize),
}

impl ActShape {
    pub fn numel(&self) -> usize {
        match *self {
            ActShape::Map { h, w, c } => h * w * c,
            ActShape::Flat(d) => d,
        }
    }
}

impl std::fmt::Display for ActShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ActShape::Map { h, w, c } => write!(f, "{h}x{w}x{c}"),
            ActShape::Flat(d) => write!(f, "{d}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    /// `[H, W, C]` of one input feature.
    pub input_shape: [usize; 3],
    pub encoder: Vec<LayerDescriptor>,
    pub decoder: Vec<LayerDescriptor>,
    pub embedding_dim: usize,
    pub decoder_fc_width: usize,
    pub decoder_reshape: [usize; 3],
    /// Size of the clustering layer (K centers of `embedding_dim`).
    #[serde(default)]
    pub num_clusters: usize,
}

pub const EMBEDDING_DIM: usize = 10;
pub const DECODER_FC_WIDTH: usize = 2560;
pub const DECODER_RESHAPE: [usize; 3] = [4, 5, 128];

impl ArchitectureSpec {
    /// The reference encoder/decoder for 128x156 log-mel inputs.
    ///
    /// Encoder: 5x5/2 stem (32 ch, lands on 64x78), five DSC blocks with
    /// strides 2,2,2,2,1 and channels 24,32,48,64,64, a 1x1 conv to 16
    /// channels, then a dense layer to the embedding. Decoder: dense to
    /// 2560, reshape to 4x5x128, five stride-2 transposed blocks (8 channels
    /// each) up to 128x160, a 5x5 transposed conv to one channel, and a
    /// symmetric crop back to 156 frames.
    pub fn reference(num_clusters: usize) -> Self {
        let mut encoder = vec![LayerDescriptor::conv("enc.stem", 5, 2, 1, 32).bn_relu()];
        let chans = [32, 24, 32, 48, 64, 64];
        let strides = [2, 2, 2, 2, 1];
        for (i, s) in strides.iter().enumerate() {
            encoder.push(LayerDescriptor::dsc_block(
                &format!("enc.block{}", i + 1),
                *s,
                chans[i],
                chans[i + 1],
            ));
        }
        encoder.push(LayerDescriptor::conv("enc.head", 1, 1, 64, 16).bn_relu());
        encoder.push(LayerDescriptor::new("enc.flatten", LayerKind::Flatten));
        encoder.push(LayerDescriptor::fully_connected(
            "enc.embed",
            4 * 5 * 16,
            EMBEDDING_DIM,
        ));

        let mut decoder = vec![
            LayerDescriptor::fully_connected("dec.fc", EMBEDDING_DIM, DECODER_FC_WIDTH).with_relu(),
            LayerDescriptor::new("dec.reshape", LayerKind::Reshape),
        ];
        let dchans = [128, 8, 8, 8, 8, 8];
        for i in 0..5 {
            decoder.push(LayerDescriptor::transposed_block(
                &format!("dec.block{}", i + 1),
                dchans[i],
                dchans[i + 1],
            ));
        }
        decoder.push(
            LayerDescriptor::conv("dec.out", 5, 1, 8, 1)
                .with_kind(LayerKind::TransposedConv)
                .with_bias(),
        );
        decoder.push(LayerDescriptor::new("dec.crop", LayerKind::CropWidth));

        ArchitectureSpec {
            input_shape: [128, 156, 1],
            encoder,
            decoder,
            embedding_dim: EMBEDDING_DIM,
            decoder_fc_width: DECODER_FC_WIDTH,
            decoder_reshape: DECODER_RESHAPE,
            num_clusters,
        }
    }

    pub fn input_act(&self) -> ActShape {
        let [h, w, c] = self.input_shape;
        ActShape::Map { h, w, c }
    }

    /// Output shape of one layer, or the reason it cannot accept `input`.
    pub fn layer_output(&self, layer: &LayerDescriptor, input: ActShape) -> Result<ActShape> {
        let bad = |what: String| Error::dim("architecture", format!("{}: {what}", layer.name));
        let map = || match input {
            ActShape::Map { h, w, c } => Ok((h, w, c)),
            ActShape::Flat(_) => Err(bad(format!("needs a feature map, got {input}"))),
        };
        let check_c = |c: usize| {
            if c != layer.in_channels {
                Err(bad(format!(
                    "declares {} input channels, receives {c}",
                    layer.in_channels
                )))
            } else {
                Ok(())
            }
        };
        let forward = |h, w, k, s| {
            ConvGeometry::forward("architecture", h, w, k, s, layer.padding)
                .map_err(|e| bad(e.to_string()))
        };
        Ok(match layer.kind {
            LayerKind::Conv
            | LayerKind::PointwiseConv
            | LayerKind::SeparableConv
            | LayerKind::DscBlock => {
                let (h, w, c) = map()?;
                check_c(c)?;
                let k = if layer.kind == LayerKind::PointwiseConv {
                    1
                } else {
                    layer.kernel
                };
                let g = forward(h, w, k, layer.stride)?;
                ActShape::Map {
                    h: g.out_h,
                    w: g.out_w,
                    c: layer.out_channels,
                }
            }
            LayerKind::DepthwiseConv => {
                let (h, w, c) = map()?;
                check_c(c)?;
                let g = forward(h, w, layer.kernel, layer.stride)?;
                ActShape::Map {
                    h: g.out_h,
                    w: g.out_w,
                    c,
                }
            }
            LayerKind::TransposedConv | LayerKind::TransposedConvBlock => {
                let (h, w, c) = map()?;
                check_c(c)?;
                if layer.kind == LayerKind::TransposedConvBlock
                    && layer.residual
                    && layer.stride != 2
                {
                    return Err(bad("residual transposed blocks must have stride 2".into()));
                }
                let g = ConvGeometry::transposed(
                    "architecture",
                    h,
                    w,
                    layer.kernel,
                    layer.stride,
                    layer.padding,
                )
                .map_err(|e| bad(e.to_string()))?;
                ActShape::Map {
                    h: g.in_h,
                    w: g.in_w,
                    c: layer.out_channels,
                }
            }
            LayerKind::Flatten => ActShape::Flat(input.numel()),
            LayerKind::FullyConnected => match input {
                ActShape::Flat(d) if d == layer.in_channels => ActShape::Flat(layer.out_channels),
                _ => {
                    return Err(bad(format!(
                        "expects a flat {}-vector, got {input}",
                        layer.in_channels
                    )))
                }
            },
            LayerKind::Reshape => {
                let [h, w, c] = self.decoder_reshape;
                if input.numel() != h * w * c {
                    return Err(bad(format!("cannot reshape {input} to {h}x{w}x{c}")));
                }
                ActShape::Map { h, w, c }
            }
            LayerKind::CropWidth => {
                let (h, w, c) = map()?;
                let target = self.input_shape[1];
                if target > w || !(w - target).is_multiple_of(2) {
                    return Err(bad(format!(
                        "cannot crop width {w} symmetrically to {target}"
                    )));
                }
                ActShape::Map { h, w: target, c }
            }
        })
    }

    fn propagate(&self, layers: &[LayerDescriptor], input: ActShape) -> Result<ActShape> {
        layers
            .iter()
            .try_fold(input, |shape, layer| self.layer_output(layer, shape))
    }

    /// Checks that the encoder reaches `embedding_dim` and the decoder maps
    /// it back to the input shape.
    pub fn validate(&self) -> Result<()> {
        let [rh, rw, rc] = self.decoder_reshape;
        if self.decoder_fc_width != rh * rw * rc {
            return Err(Error::Config(format!(
                "decoder FC width {} != reshape {rh}x{rw}x{rc}",
                self.decoder_fc_width
            )));
        }
        let z = self.propagate(&self.encoder, self.input_act())?;
        if z != ActShape::Flat(self.embedding_dim) {
            return Err(Error::Config(format!(
                "encoder produces {z}, expected a {}-dim embedding",
                self.embedding_dim
            )));
        }
        let out = self.propagate(&self.decoder, ActShape::Flat(self.embedding_dim))?;
        if out != self.input_act() {
            return Err(Error::Config(format!(
                "decoder produces {out}, expected {}",
                self.input_act()
            )));
        }
        Ok(())
    }
}
