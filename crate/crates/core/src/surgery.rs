//! Structural filter removal and parameter/FLOP accounting.
//!
//! Removing output filter `k` of a layer drops row `k` of its weight and
//! bias, and the matching input slice of the next conv/dense layer. After a
//! flatten, channel `k` owns the feature range `[k·S, (k+1)·S)` with `S` the
//! spatial size at the flatten (channel-major order). ReLU, pooling, dropout
//! and flatten pass the channel selection through unchanged.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{LayerKind, LayerSpec, Network, Param};
use crate::prune::PruneDecision;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WidthChange {
    pub name: String,
    pub before: usize,
    pub after: usize,
}

/// Architecture change made by one surgery; FLOPs are per input image.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchDelta {
    pub layers: Vec<WidthChange>,
    pub params_before: usize,
    pub params_after: usize,
    pub flops_before: u64,
    pub flops_after: u64,
}

pub fn count_params<T: Scalar>(net: &Network<T>) -> usize {
    net.params()
        .iter()
        .flatten()
        .map(|p| p.weight.len() + p.bias.len())
        .sum()
}

/// FLOPs for one image: `2·K·C·kh·kw·Ho·Wo` per conv, `2·out·in` per dense,
/// nothing for activations, pooling or dropout.
pub fn count_flops_for(specs: &[LayerSpec], input_shape: &[usize]) -> Result<u64> {
    let mut shape = input_shape.to_vec();
    let mut total = 0u64;
    for spec in specs {
        let out = spec.output_shape(&shape)?;
        total += match &spec.kind {
            LayerKind::Conv2d {
                out_channels,
                in_channels,
                kernel,
                ..
            } => 2 * (*out_channels * *in_channels * kernel[0] * kernel[1] * out[1] * out[2]) as u64,
            LayerKind::Dense {
                out_features,
                in_features,
            } => 2 * (*out_features * *in_features) as u64,
            _ => 0,
        };
        shape = out;
    }
    Ok(total)
}

pub fn count_flops<T: Scalar>(net: &Network<T>) -> u64 {
    count_flops_for(net.specs(), net.input_shape()).expect("network shapes were validated")
}

/// Output widths of every conv/dense layer, in order.
pub fn layer_widths<T: Scalar>(net: &Network<T>) -> Vec<(String, usize)> {
    net.param_layers()
        .into_iter()
        .map(|i| (net.specs()[i].name.clone(), net.specs()[i].width().unwrap()))
        .collect()
}

fn select_rows<T: Scalar>(t: &Tensor<T>, rows: &[usize]) -> Result<Tensor<T>> {
    let stride = t.len() / t.shape()[0];
    let mut data = Vec::with_capacity(rows.len() * stride);
    for &r in rows {
        data.extend_from_slice(&t.data()[r * stride..(r + 1) * stride]);
    }
    let mut shape = t.shape().to_vec();
    shape[0] = rows.len();
    Tensor::from_vec(&shape, data)
}

/// Keeps input slices `cols` along axis 1; each slice spans `unit` entries
/// of that axis times the trailing axes.
fn select_inputs<T: Scalar>(t: &Tensor<T>, cols: &[usize], unit: usize) -> Result<Tensor<T>> {
    let shape = t.shape();
    let inner: usize = shape[2..].iter().product();
    let row_len = shape[1] * inner;
    let block = unit * inner;
    let mut data = Vec::with_capacity(shape[0] * cols.len() * block);
    for row in t.data().chunks(row_len) {
        for &c in cols {
            data.extend_from_slice(&row[c * block..(c + 1) * block]);
        }
    }
    let mut new_shape = shape.to_vec();
    new_shape[1] = cols.len() * unit;
    Tensor::from_vec(&new_shape, data)
}

/// Removes every filter whose mask bit is 0 in a gated layer, together
/// with the coupled input weights downstream.
pub fn apply_masks<T: Scalar>(net: &Network<T>, decision: &PruneDecision) -> Result<(Network<T>, ArchDelta)> {
    let classifier = net.classifier_index();
    let mut keep_out: Vec<Option<Vec<usize>>> = vec![None; net.specs().len()];
    for ld in decision.layers.iter().filter(|l| l.gated) {
        let i = net
            .layer_index(&ld.name)
            .ok_or_else(|| Error::ProfileMismatch(format!("decision names unknown layer {}", ld.name)))?;
        let width = net.specs()[i]
            .width()
            .ok_or_else(|| Error::ShapeMismatch(format!("layer {} has no filters", ld.name)))?;
        if Some(i) == classifier {
            return Err(Error::ShapeMismatch(format!(
                "classifier {} cannot lose outputs",
                ld.name
            )));
        }
        if ld.mask.len() != width {
            return Err(Error::ShapeMismatch(format!(
                "mask of length {} for layer {} with {width} filters",
                ld.mask.len(),
                ld.name
            )));
        }
        let kept: Vec<usize> = (0..width).filter(|&k| ld.mask[k]).collect();
        let floor = decision.config.min_filters_per_layer.clamp(1, width);
        if kept.len() < floor {
            return Err(Error::FloorViolation {
                layer: ld.name.clone(),
                kept: kept.len(),
                floor,
            });
        }
        if kept.len() < width {
            keep_out[i] = Some(kept);
        }
    }

    let mut specs = net.specs().to_vec();
    let mut params: Vec<Option<Param<T>>> = net.params().to_vec();
    // Channel subset flowing out of the last parameterized layer and the
    // number of input features each of those channels spans.
    let mut flowing: Option<Vec<usize>> = None;
    let mut unit = 1usize;
    for i in 0..specs.len() {
        let input_shape = if i == 0 { net.input_shape() } else { &net.output_shapes()[i - 1] };
        match &mut specs[i].kind {
            LayerKind::Conv2d {
                out_channels,
                in_channels,
                ..
            } => {
                let p = params[i].as_mut().expect("conv params");
                if let Some(cols) = &flowing {
                    p.weight = select_inputs(&p.weight, cols, 1)?;
                    *in_channels = cols.len();
                }
                if let Some(rows) = &keep_out[i] {
                    p.weight = select_rows(&p.weight, rows)?;
                    p.bias = select_rows(&p.bias, rows)?;
                    *out_channels = rows.len();
                }
                flowing = keep_out[i].clone();
                unit = 1;
            }
            LayerKind::Dense {
                out_features,
                in_features,
            } => {
                let p = params[i].as_mut().expect("dense params");
                if let Some(cols) = &flowing {
                    p.weight = select_inputs(&p.weight, cols, unit)?;
                    *in_features = cols.len() * unit;
                }
                if let Some(rows) = &keep_out[i] {
                    p.weight = select_rows(&p.weight, rows)?;
                    p.bias = select_rows(&p.bias, rows)?;
                    *out_features = rows.len();
                }
                flowing = keep_out[i].clone();
                unit = 1;
            }
            LayerKind::Flatten => {
                if input_shape.len() == 3 {
                    unit *= input_shape[1] * input_shape[2];
                }
            }
            LayerKind::Relu | LayerKind::MaxPool2d { .. } | LayerKind::Dropout { .. } | LayerKind::SoftmaxOutput => {}
        }
    }

    let mut pruned = Network::from_params(specs, net.input_shape(), params)?;
    pruned.set_mode(net.mode());
    let before = layer_widths(net);
    let after = layer_widths(&pruned);
    let delta = ArchDelta {
        layers: before
            .into_iter()
            .zip(after)
            .map(|((name, b), (_, a))| WidthChange { name, before: b, after: a })
            .collect(),
        params_before: count_params(net),
        params_after: count_params(&pruned),
        flops_before: count_flops(net),
        flops_after: count_flops(&pruned),
    };
    Ok((pruned, delta))
}
