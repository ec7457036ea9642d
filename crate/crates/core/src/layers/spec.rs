use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Layer descriptor. Only `Conv2d` and `Dense` carry parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Conv2d {
        out_channels: usize,
        in_channels: usize,
        kernel: [usize; 2],
        stride: usize,
        padding: usize,
    },
    Relu,
    #[serde(rename = "maxpool2d")]
    MaxPool2d { window: usize, stride: usize },
    Flatten,
    Dense {
        out_features: usize,
        in_features: usize,
    },
    Dropout { rate: f64 },
    SoftmaxOutput,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: LayerKind,
}

impl LayerSpec {
    pub fn new(name: impl Into<String>, kind: LayerKind) -> Self {
        Self {
            name: name.into(),
            kind,
        }
    }

    pub fn conv(name: &str, in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self::new(
            name,
            LayerKind::Conv2d {
                out_channels,
                in_channels,
                kernel: [kernel, kernel],
                stride,
                padding,
            },
        )
    }

    pub fn dense(name: &str, in_features: usize, out_features: usize) -> Self {
        Self::new(
            name,
            LayerKind::Dense {
                out_features,
                in_features,
            },
        )
    }

    pub fn is_parameterized(&self) -> bool {
        matches!(self.kind, LayerKind::Conv2d { .. } | LayerKind::Dense { .. })
    }

    /// Output width (filters or units) of a parameterized layer.
    pub fn width(&self) -> Option<usize> {
        match self.kind {
            LayerKind::Conv2d { out_channels, .. } => Some(out_channels),
            LayerKind::Dense { out_features, .. } => Some(out_features),
            _ => None,
        }
    }

    /// Weight tensor shape of a parameterized layer.
    pub fn weight_shape(&self) -> Option<Vec<usize>> {
        match self.kind {
            LayerKind::Conv2d {
                out_channels,
                in_channels,
                kernel,
                ..
            } => Some(vec![out_channels, in_channels, kernel[0], kernel[1]]),
            LayerKind::Dense {
                out_features,
                in_features,
            } => Some(vec![out_features, in_features]),
            _ => None,
        }
    }

    pub fn fan_in(&self) -> Option<usize> {
        self.weight_shape().map(|s| s[1..].iter().product())
    }

    pub fn param_count(&self) -> usize {
        match self.weight_shape() {
            Some(s) => s.iter().product::<usize>() + s[0],
            None => 0,
        }
    }

    /// Output shape for a single-sample input shape (`[C,H,W]` or `[F]`).
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let err = |msg: String| Err(Error::ShapeMismatch(format!("layer {}: {msg}", self.name)));
        match &self.kind {
            LayerKind::Conv2d {
                out_channels,
                in_channels,
                kernel,
                stride,
                padding,
            } => {
                let [c, h, w] = match input {
                    &[c, h, w] => [c, h, w],
                    _ => return err(format!("conv2d expects C×H×W input, got {input:?}")),
                };
                if c != *in_channels {
                    return err(format!("expects {in_channels} input channels, got {c}"));
                }
                if *stride == 0 || kernel[0] == 0 || kernel[1] == 0 || *out_channels == 0 {
                    return err("zero stride, kernel or width".into());
                }
                if h + 2 * padding < kernel[0] || w + 2 * padding < kernel[1] {
                    return err(format!("kernel {kernel:?} larger than padded input {h}×{w}"));
                }
                Ok(vec![
                    *out_channels,
                    (h + 2 * padding - kernel[0]) / stride + 1,
                    (w + 2 * padding - kernel[1]) / stride + 1,
                ])
            }
            LayerKind::MaxPool2d { window, stride } => {
                let [c, h, w] = match input {
                    &[c, h, w] => [c, h, w],
                    _ => return err(format!("maxpool2d expects C×H×W input, got {input:?}")),
                };
                if *window == 0 || *stride == 0 || h < *window || w < *window {
                    return err(format!("window {window} stride {stride} invalid for {h}×{w}"));
                }
                Ok(vec![c, (h - window) / stride + 1, (w - window) / stride + 1])
            }
            LayerKind::Flatten => Ok(vec![input.iter().product()]),
            LayerKind::Dense {
                out_features,
                in_features,
            } => match input {
                &[f] if f == *in_features && *out_features > 0 => Ok(vec![*out_features]),
                _ => err(format!("dense expects [{in_features}] input, got {input:?}")),
            },
            LayerKind::Dropout { rate } => {
                if !(0.0..1.0).contains(rate) {
                    return err(format!("dropout rate {rate} outside [0,1)"));
                }
                Ok(input.to_vec())
            }
            LayerKind::Relu => Ok(input.to_vec()),
            LayerKind::SoftmaxOutput => match input {
                &[_] => Ok(input.to_vec()),
                _ => err(format!("softmax_output expects a vector input, got {input:?}")),
            },
        }
    }
}

/// Validates a layer list against a single-sample input shape and returns
/// each layer's output shape.
pub fn infer_shapes(specs: &[LayerSpec], input: &[usize]) -> Result<Vec<Vec<usize>>> {
    if specs.is_empty() {
        return Err(Error::InvalidArgument("empty layer list".into()));
    }
    if input.is_empty() || input.contains(&0) {
        return Err(Error::InvalidShape(format!("input shape {input:?}")));
    }
    let mut seen = HashSet::new();
    for spec in specs {
        if !seen.insert(spec.name.as_str()) {
            return Err(Error::InvalidArgument(format!("duplicate layer name {}", spec.name)));
        }
    }
    if let Some(pos) = specs.iter().position(|s| s.kind == LayerKind::SoftmaxOutput) {
        if pos + 1 != specs.len() {
            return Err(Error::InvalidArgument("softmax_output must be the last layer".into()));
        }
    }
    let mut shapes = Vec::with_capacity(specs.len());
    let mut current = input.to_vec();
    for spec in specs {
        current = spec.output_shape(&current)?;
        shapes.push(current.clone());
    }
    match current.as_slice() {
        [_] => Ok(shapes),
        other => Err(Error::ShapeMismatch(format!(
            "network output must be a vector, got {other:?}"
        ))),
    }
}

/// VGG-16 with `num_classes` outputs for square `input_hw` RGB inputs.
///
/// Thirteen 3×3 conv layers in five pooled stages, then fc6, fc7 and the
/// classifier. Dropout (rate 0.5) follows fc6 and fc7.
pub fn make_vgg16_spec(num_classes: usize, input_hw: usize) -> Result<Vec<LayerSpec>> {
    if num_classes == 0 {
        return Err(Error::InvalidArgument("num_classes must be positive".into()));
    }
    if input_hw == 0 || input_hw % 32 != 0 {
        return Err(Error::InvalidArgument(format!(
            "VGG-16 input {input_hw} must be a positive multiple of 32"
        )));
    }
    const STAGES: [(usize, usize); 5] = [(64, 2), (128, 2), (256, 3), (512, 3), (512, 3)];
    let mut specs = Vec::new();
    let mut channels = 3;
    for (stage, &(width, depth)) in STAGES.iter().enumerate() {
        for i in 1..=depth {
            let id = format!("{}_{}", stage + 1, i);
            specs.push(LayerSpec::conv(&format!("conv{id}"), channels, width, 3, 1, 1));
            specs.push(LayerSpec::new(format!("relu{id}"), LayerKind::Relu));
            channels = width;
        }
        specs.push(LayerSpec::new(
            format!("pool{}", stage + 1),
            LayerKind::MaxPool2d { window: 2, stride: 2 },
        ));
    }
    let spatial = input_hw / 32;
    specs.push(LayerSpec::new("flatten", LayerKind::Flatten));
    push_fc_head(&mut specs, channels * spatial * spatial, &[("fc6", 4096), ("fc7", 4096)], num_classes, 0.5);
    Ok(specs)
}

/// Scaled-down VGG-style stack: per stage one 3×3 conv (padding 1), ReLU and
/// 2×2 max-pool; then one hidden dense layer `fc1` of width
/// `4 × widths.last()`, dropout and the classifier.
pub fn make_tiny_cnn_spec(num_classes: usize, input_hw: usize, widths: &[usize]) -> Result<Vec<LayerSpec>> {
    if widths.is_empty() {
        return Err(Error::InvalidArgument("tiny CNN needs at least one stage".into()));
    }
    if let Some(w) = widths.iter().find(|&&w| w < 2) {
        return Err(Error::InvalidArgument(format!("stage width {w} below 2")));
    }
    if num_classes < 2 {
        return Err(Error::InvalidArgument("num_classes must be at least 2".into()));
    }
    let reduction = 1usize << widths.len();
    if input_hw == 0 || input_hw % reduction != 0 {
        return Err(Error::InvalidArgument(format!(
            "input {input_hw} must be a positive multiple of {reduction}"
        )));
    }
    let mut specs = Vec::new();
    let mut channels = 3;
    for (i, &width) in widths.iter().enumerate() {
        let id = i + 1;
        specs.push(LayerSpec::conv(&format!("conv{id}"), channels, width, 3, 1, 1));
        specs.push(LayerSpec::new(format!("relu{id}"), LayerKind::Relu));
        specs.push(LayerSpec::new(format!("pool{id}"), LayerKind::MaxPool2d { window: 2, stride: 2 }));
        channels = width;
    }
    let spatial = input_hw / reduction;
    specs.push(LayerSpec::new("flatten", LayerKind::Flatten));
    let hidden = 4 * widths[widths.len() - 1];
    push_fc_head(&mut specs, channels * spatial * spatial, &[("fc1", hidden)], num_classes, 0.5);
    Ok(specs)
}

fn push_fc_head(specs: &mut Vec<LayerSpec>, mut features: usize, hidden: &[(&str, usize)], classes: usize, dropout: f64) {
    for &(name, width) in hidden {
        let suffix = name.trim_start_matches("fc");
        specs.push(LayerSpec::dense(name, features, width));
        specs.push(LayerSpec::new(format!("relu_fc{suffix}"), LayerKind::Relu));
        specs.push(LayerSpec::new(format!("drop_fc{suffix}"), LayerKind::Dropout { rate: dropout }));
        features = width;
    }
    specs.push(LayerSpec::dense("classifier", features, classes));
    specs.push(LayerSpec::new("softmax", LayerKind::SoftmaxOutput));
}

#[cfg(test)]
mod tests {
    use super::*;

    fn total_params(specs: &[LayerSpec]) -> usize {
        specs.iter().map(LayerSpec::param_count).sum()
    }

    #[test]
    fn vgg16_layout() {
        let specs = make_vgg16_spec(1000, 224).unwrap();
        let convs = specs.iter().filter(|s| matches!(s.kind, LayerKind::Conv2d { .. })).count();
        let dense = specs.iter().filter(|s| matches!(s.kind, LayerKind::Dense { .. })).count();
        assert_eq!((convs, dense), (13, 3));
        let fc6 = specs.iter().find(|s| s.name == "fc6").unwrap();
        assert_eq!(fc6.weight_shape().unwrap(), vec![4096, 25088]);
        infer_shapes(&specs, &[3, 224, 224]).unwrap();
    }

    #[test]
    fn vgg16_param_count_closed_form() {
        // Σ(K·C·9 + K) over the conv stack plus Σ(out·in + out) over the head.
        let widths = [64, 64, 128, 128, 256, 256, 256, 512, 512, 512, 512, 512, 512];
        let mut expected = 0usize;
        let mut c = 3;
        for &k in &widths {
            expected += k * c * 9 + k;
            c = k;
        }
        expected += 4096 * 25088 + 4096 + 4096 * 4096 + 4096 + 1000 * 4096 + 1000;
        assert_eq!(expected, 138_357_544);
        assert_eq!(total_params(&make_vgg16_spec(1000, 224).unwrap()), expected);
    }

    #[test]
    fn vgg16_rejects_indivisible_input() {
        assert!(matches!(make_vgg16_spec(1000, 223), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn tiny_cnn_contract() {
        let specs = make_tiny_cnn_spec(3, 32, &[8, 16]).unwrap();
        let convs = specs.iter().filter(|s| matches!(s.kind, LayerKind::Conv2d { .. })).count();
        let dense = specs.iter().filter(|s| matches!(s.kind, LayerKind::Dense { .. })).count();
        assert_eq!((convs, dense), (2, 2));
        let shapes = infer_shapes(&specs, &[3, 32, 32]).unwrap();
        assert_eq!(shapes.last().unwrap(), &vec![3]);
        // conv1 3→8, conv2 8→16, fc1 16·8·8→64, classifier 64→3
        let expected = (8 * 3 * 9 + 8) + (16 * 8 * 9 + 16) + (64 * 1024 + 64) + (3 * 64 + 3);
        assert_eq!(total_params(&specs), expected);
        assert!(make_tiny_cnn_spec(3, 32, &[]).is_err());
        assert!(make_tiny_cnn_spec(3, 32, &[8, 1]).is_err());
        assert!(make_tiny_cnn_spec(3, 30, &[8, 16]).is_err());
    }

    #[test]
    fn shape_chain_failures() {
        let specs = vec![LayerSpec::conv("c", 3, 4, 3, 1, 0), LayerSpec::new("f", LayerKind::Flatten), LayerSpec::dense("d", 10, 2)];
        assert!(matches!(infer_shapes(&specs, &[3, 4, 4]), Err(Error::ShapeMismatch(_))));
        let dup = vec![LayerSpec::dense("d", 4, 4), LayerSpec::dense("d", 4, 2)];
        assert!(infer_shapes(&dup, &[4]).is_err());
    }

    #[test]
    fn spec_json_shape() {
        let spec = LayerSpec::conv("conv1", 3, 8, 3, 1, 1);
        let json = serde_json::to_string(&spec).unwrap();
        assert_eq!(
            json,
            r#"{"name":"conv1","kind":"conv2d","out_channels":8,"in_channels":3,"kernel":[3,3],"stride":1,"padding":1}"#
        );
        let back: LayerSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
    }
}
