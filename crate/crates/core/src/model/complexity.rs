//! Multiply-accumulate and parameter counts.
//!
//! A standard `k x k` convolution evaluated on a `w x h` grid costs
//! `w*h*c_i*c_o*k^2` MACs and holds `c_i*k^2*c_o` weights; a depthwise
//! separable one costs `w*h*c_i*(k^2+c_o)` and holds `c_i*(k^2+c_o)`.

use serde::{Deserialize, Serialize};

use super::spec::{ActShape, ArchitectureSpec, LayerDescriptor, LayerKind};
use crate::error::Result;

pub const CONVENTIONS: &[&str] = &[
    "MACs of a convolution use the grid the kernel is evaluated on (the output grid; equal to the input grid for stride-1 same padding)",
    "standard conv: w*h*c_i*c_o*k^2 MACs, c_i*k^2*c_o weights",
    "depthwise separable conv: w*h*c_i*(k^2+c_o) MACs, c_i*(k^2+c_o) weights",
    "transposed conv: h_in*w_in*c_i*c_o*k^2 MACs (each input pixel scatters a k x k x c_o patch)",
    "fully connected: d_in*d_out MACs, d_in*d_out weights + d_out biases",
    "biases add parameters but no MACs",
    "batch normalization: 2*C parameters (gamma, beta), 0 MACs; running statistics are not counted",
    "ReLU, reshape, flatten, crop, nearest upsampling and residual sums: 0 MACs, 0 parameters",
    "clustering layer: K*D parameters, K*D MACs",
];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCost {
    pub name: String,
    pub section: String,
    pub output: String,
    pub macs: u64,
    pub params: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub conventions: Vec<String>,
    pub layers: Vec<LayerCost>,
    pub total_macs: u64,
    pub total_params: u64,
}

impl ComplexityReport {
    fn from_layers(layers: Vec<LayerCost>) -> Self {
        ComplexityReport {
            conventions: CONVENTIONS.iter().map(|s| s.to_string()).collect(),
            total_macs: layers.iter().map(|l| l.macs).sum(),
            total_params: layers.iter().map(|l| l.params).sum(),
            layers,
        }
    }

    pub fn section_params(&self, section: &str) -> u64 {
        self.layers
            .iter()
            .filter(|l| l.section == section)
            .map(|l| l.params)
            .sum()
    }
}

struct Costs<'a> {
    section: &'a str,
    out: Vec<LayerCost>,
}

impl Costs<'_> {
    fn push(&mut self, name: String, output: ActShape, macs: usize, params: usize) {
        self.out.push(LayerCost {
            name,
            section: self.section.to_string(),
            output: output.to_string(),
            macs: macs as u64,
            params: params as u64,
        });
    }

    fn bn(&mut self, owner: &str, suffix: &str, shape: ActShape, c: usize) {
        self.push(format!("{owner}.{suffix}"), shape, 0, 2 * c);
    }
}

fn grid(shape: ActShape) -> (usize, usize, usize) {
    match shape {
        ActShape::Map { h, w, c } => (h, w, c),
        ActShape::Flat(d) => (1, 1, d),
    }
}

fn layer_costs(
    spec: &ArchitectureSpec,
    layer: &LayerDescriptor,
    input: ActShape,
    costs: &mut Costs<'_>,
) -> Result<ActShape> {
    let output = spec.layer_output(layer, input)?;
    let (hi, wi, ci) = grid(input);
    let (ho, wo, co) = grid(output);
    let k2 = layer.kernel * layer.kernel;
    let bias = |c: usize| if layer.bias { c } else { 0 };
    let name = layer.name.clone();
    match layer.kind {
        LayerKind::Conv | LayerKind::PointwiseConv => {
            let k2 = if layer.kind == LayerKind::PointwiseConv {
                1
            } else {
                k2
            };
            costs.push(
                name.clone(),
                output,
                ho * wo * ci * co * k2,
                ci * k2 * co + bias(co),
            );
            if layer.batch_norm {
                costs.bn(&name, "bn", output, co);
            }
        }
        LayerKind::DepthwiseConv => {
            costs.push(name.clone(), output, ho * wo * ci * k2, ci * k2 + bias(ci));
            if layer.batch_norm {
                costs.bn(&name, "bn", output, co);
            }
        }
        LayerKind::SeparableConv => {
            costs.push(
                name.clone(),
                output,
                ho * wo * ci * (k2 + co),
                ci * (k2 + co) + bias(co),
            );
            if layer.batch_norm {
                costs.bn(&name, "bn", output, co);
            }
        }
        LayerKind::DscBlock => {
            let expanded = ActShape::Map {
                h: hi,
                w: wi,
                c: ci,
            };
            costs.push(
                format!("{name}.expand"),
                expanded,
                hi * wi * ci * ci,
                ci * ci,
            );
            costs.bn(&name, "expand_bn", expanded, ci);
            let dw = ActShape::Map {
                h: ho,
                w: wo,
                c: ci,
            };
            costs.push(format!("{name}.depthwise"), dw, ho * wo * ci * k2, ci * k2);
            costs.bn(&name, "depthwise_bn", dw, ci);
            costs.push(
                format!("{name}.pointwise"),
                output,
                ho * wo * ci * co,
                ci * co,
            );
            costs.bn(&name, "pointwise_bn", output, co);
            if layer.residual && layer.needs_projection() {
                costs.push(
                    format!("{name}.shortcut"),
                    output,
                    ho * wo * ci * co,
                    ci * co,
                );
                costs.bn(&name, "shortcut_bn", output, co);
            }
        }
        LayerKind::TransposedConv => {
            costs.push(
                name.clone(),
                output,
                hi * wi * ci * co * k2,
                k2 * co * ci + bias(co),
            );
            if layer.batch_norm {
                costs.bn(&name, "bn", output, co);
            }
        }
        LayerKind::TransposedConvBlock => {
            costs.push(
                format!("{name}.tconv"),
                output,
                hi * wi * ci * co * k2,
                k2 * co * ci,
            );
            costs.bn(&name, "bn", output, co);
            if layer.residual && ci != co {
                let proj = ActShape::Map {
                    h: hi,
                    w: wi,
                    c: co,
                };
                costs.push(format!("{name}.skip"), proj, hi * wi * ci * co, ci * co);
            }
        }
        LayerKind::FullyConnected => {
            costs.push(name, output, ci * co, ci * co + bias(co));
        }
        LayerKind::Flatten | LayerKind::Reshape | LayerKind::CropWidth => {
            costs.push(name, output, 0, 0);
        }
    }
    Ok(output)
}

/// Per-layer and total MACs and parameter counts. Composite blocks are
/// expanded into their constituent convolutions and BN layers.
pub fn analyze_complexity(spec: &ArchitectureSpec) -> Result<ComplexityReport> {
    let mut costs = Costs {
        section: "encoder",
        out: Vec::new(),
    };
    let mut shape = spec.input_act();
    for layer in &spec.encoder {
        shape = layer_costs(spec, layer, shape, &mut costs)?;
    }
    costs.section = "decoder";
    let mut shape = ActShape::Flat(spec.embedding_dim);
    for layer in &spec.decoder {
        shape = layer_costs(spec, layer, shape, &mut costs)?;
    }
    if spec.num_clusters > 0 {
        costs.section = "clustering";
        let kd = spec.num_clusters * spec.embedding_dim;
        costs.push(
            "cluster.centers".into(),
            ActShape::Flat(spec.num_clusters),
            kd,
            kd,
        );
    }
    Ok(ComplexityReport::from_layers(costs.out))
}

/// Ratio of standard to depthwise separable convolution cost,
/// `k^2*c_o / (k^2 + c_o)`.
pub fn dsc_reduction_ratio(kernel: usize, out_channels: usize) -> f64 {
    let k2 = (kernel * kernel) as f64;
    k2 * out_channels as f64 / (k2 + out_channels as f64)
}
