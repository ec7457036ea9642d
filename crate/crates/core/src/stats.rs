//! Per-filter activation statistics over a dataset.
//!
//! For every prunable layer the profile holds the dataset-averaged spatial
//! mean of each output channel (measured after the layer's ReLU), its
//! L1-normalized form, the descending sort order and the cumulative sum of
//! the sorted normalized values.

use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::layers::Network;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct LayerProfile {
    pub name: String,
    /// Dataset mean of each channel's spatial mean activation.
    pub mean_activation: Vec<f64>,
    /// `mean_activation / ‖mean_activation‖₁`; uniform when the layer is dead.
    pub normalized: Vec<f64>,
    /// Channel indices ordered by descending `normalized`, ties by index.
    pub sort_perm: Vec<usize>,
    /// Running sum of `normalized` in `sort_perm` order.
    pub cumsum: Vec<f64>,
    /// No channel fired on any sample.
    pub dead: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActivationProfile {
    pub n_samples: usize,
    pub layers: Vec<LayerProfile>,
}

/// Spatial mean of every channel of one sample's layer output (`K×H×W`, or
/// `K` for dense layers).
pub fn channel_mean<T: Scalar>(activation: &[T], channels: usize) -> Result<Vec<f64>> {
    if channels == 0 || activation.is_empty() || activation.len() % channels != 0 {
        return Err(Error::ShapeMismatch(format!(
            "{} values cannot split into {channels} channels",
            activation.len()
        )));
    }
    let plane = activation.len() / channels;
    Ok(activation
        .chunks(plane)
        .map(|c| c.iter().map(|v| v.to_f64()).sum::<f64>() / plane as f64)
        .collect())
}

/// Stable descending order of `values` (equal values keep index order).
pub fn descending_order(values: &[f64]) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..values.len()).collect();
    perm.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    perm
}

impl LayerProfile {
    /// Derives the normalized vector, sort order and cumulative sum from
    /// dataset-mean activations.
    pub fn from_means(name: impl Into<String>, mean_activation: Vec<f64>) -> Result<Self> {
        let k = mean_activation.len();
        if k == 0 {
            return Err(Error::InvalidArgument("layer profile needs at least one channel".into()));
        }
        if mean_activation.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument(
                "mean activations must be finite and non-negative".into(),
            ));
        }
        let l1: f64 = mean_activation.iter().sum();
        let dead = l1 == 0.0;
        let normalized: Vec<f64> = if dead {
            vec![1.0 / k as f64; k]
        } else {
            mean_activation.iter().map(|v| v / l1).collect()
        };
        let sort_perm = descending_order(&normalized);
        let mut acc = 0.0;
        let cumsum = sort_perm
            .iter()
            .map(|&i| {
                acc += normalized[i];
                acc
            })
            .collect();
        Ok(Self {
            name: name.into(),
            mean_activation,
            normalized,
            sort_perm,
            cumsum,
            dead,
        })
    }

    pub fn width(&self) -> usize {
        self.mean_activation.len()
    }
}

/// Accumulates channel means over `data` with the network in eval mode.
///
/// Samples are summed in ascending index order in `f64`, then divided by N.
pub fn collect_profile(net: &Network, data: &Dataset, batch_size: usize) -> Result<ActivationProfile> {
    if data.is_empty() {
        return Err(Error::Data("cannot profile an empty dataset".into()));
    }
    let prunable = net.prunable_layers();
    let widths: Vec<usize> = prunable.iter().map(|&i| net.specs()[i].width().unwrap()).collect();
    let mut sums: Vec<Vec<f64>> = widths.iter().map(|&k| vec![0.0; k]).collect();
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let (x, _) = data.batch(chunk, None)?;
        let (_, activations) = net.forward_activations(&x)?;
        accumulate(&mut sums, &widths, &activations)?;
    }
    let n = data.len();
    let layers = prunable
        .iter()
        .zip(sums)
        .map(|(&i, s)| LayerProfile::from_means(&net.specs()[i].name, s.into_iter().map(|v| v / n as f64).collect()))
        .collect::<Result<_>>()?;
    Ok(ActivationProfile { n_samples: n, layers })
}

fn accumulate<T: Scalar>(sums: &mut [Vec<f64>], widths: &[usize], activations: &[(String, Tensor<T>)]) -> Result<()> {
    for ((sum, &k), (_, act)) in sums.iter_mut().zip(widths).zip(activations) {
        let n = act.shape()[0];
        for s in 0..n {
            let means = channel_mean(act.outer(s), k)?;
            sum.iter_mut().zip(means).for_each(|(a, m)| *a += m);
        }
    }
    Ok(())
}

/// Rounds to nine significant digits.
fn sig9(v: f64) -> f64 {
    format!("{v:.8e}").parse().expect("formatted float parses")
}

impl ActivationProfile {
    pub fn layer(&self, name: &str) -> Option<&LayerProfile> {
        self.layers.iter().find(|l| l.name == name)
    }

    /// JSON document keyed by layer name in network order; reals carry nine
    /// significant digits.
    pub fn to_json(&self) -> Value {
        let mut map = Map::new();
        for l in &self.layers {
            let round = |v: &[f64]| v.iter().map(|&x| sig9(x)).collect::<Vec<_>>();
            map.insert(
                l.name.clone(),
                json!({
                    "n_samples": self.n_samples,
                    "mean_activation": round(&l.mean_activation),
                    "normalized": round(&l.normalized),
                    "sort_perm": l.sort_perm,
                    "cumsum": round(&l.cumsum),
                }),
            );
        }
        Value::Object(map)
    }

    /// Rebuilds a profile from [`ActivationProfile::to_json`] output; the
    /// derived vectors are recomputed from the mean activations.
    pub fn from_json(value: &Value) -> Result<Self> {
        let obj = value
            .as_object()
            .ok_or_else(|| Error::Data("profile JSON must be an object".into()))?;
        let mut n_samples = None;
        let mut layers = Vec::with_capacity(obj.len());
        for (name, entry) in obj {
            let n = entry["n_samples"]
                .as_u64()
                .ok_or_else(|| Error::Data(format!("profile layer {name}: missing n_samples")))?;
            if *n_samples.get_or_insert(n) != n {
                return Err(Error::Data("inconsistent n_samples across layers".into()));
            }
            let means: Vec<f64> = serde_json::from_value(entry["mean_activation"].clone())
                .map_err(|e| Error::Data(format!("profile layer {name}: {e}")))?;
            layers.push(LayerProfile::from_means(name.clone(), means)?);
        }
        Ok(Self {
            n_samples: n_samples.unwrap_or(0) as usize,
            layers,
        })
    }

    /// Hex SHA-256 prefix of the compact JSON export.
    pub fn fingerprint(&self) -> String {
        let bytes = serde_json::to_vec(&self.to_json()).expect("profile serializes");
        hex::encode(&Sha256::digest(bytes)[..8])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn channel_mean_examples() {
        assert_eq!(channel_mean(&[1.0f32, 2.0, 3.0, 4.0], 1).unwrap(), vec![2.5]);
        assert_eq!(channel_mean(&[0.0f32; 4], 1).unwrap(), vec![0.0]);
        let dense = channel_mean(&[0.1f64, 0.9], 2).unwrap();
        assert_eq!(dense, vec![0.1, 0.9]);
        assert!(channel_mean(&[1.0f32, 2.0, 3.0], 2).is_err());
    }

    #[test]
    fn worked_profile() {
        let l = LayerProfile::from_means("x", vec![4.0, 3.0, 2.0, 1.0]).unwrap();
        let expect_norm = [0.4, 0.3, 0.2, 0.1];
        let expect_cum = [0.4, 0.7, 0.9, 1.0];
        for i in 0..4 {
            assert!((l.normalized[i] - expect_norm[i]).abs() < 1e-12);
            assert!((l.cumsum[i] - expect_cum[i]).abs() < 1e-12);
        }
        assert_eq!(l.sort_perm, vec![0, 1, 2, 3]);
    }

    #[test]
    fn symmetric_two_sample_average() {
        // per-sample means [1,3] and [3,1] average to [2,2]
        let means: Vec<f64> = [1.0, 3.0].iter().zip([3.0, 1.0]).map(|(a, b)| (a + b) / 2.0).collect();
        let l = LayerProfile::from_means("x", means).unwrap();
        assert_eq!(l.mean_activation, vec![2.0, 2.0]);
        assert_eq!(l.normalized, vec![0.5, 0.5]);
        assert_eq!(l.cumsum, vec![0.5, 1.0]);
        assert_eq!(l.sort_perm, vec![0, 1]);
    }

    #[test]
    fn ties_sort_by_index() {
        let l = LayerProfile::from_means("x", vec![1.0, 2.0, 1.0, 2.0]).unwrap();
        assert_eq!(l.sort_perm, vec![1, 3, 0, 2]);
    }

    #[test]
    fn dead_layer_is_flagged() {
        let l = LayerProfile::from_means("x", vec![0.0; 4]).unwrap();
        assert!(l.dead);
        assert!((l.cumsum[3] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn json_round_trip_keeps_order_and_precision() {
        let p = ActivationProfile {
            n_samples: 7,
            layers: vec![
                LayerProfile::from_means("conv2", vec![1.0 / 3.0, 2.0]).unwrap(),
                LayerProfile::from_means("conv1", vec![0.5, 0.25, 0.25]).unwrap(),
            ],
        };
        let json = p.to_json();
        let keys: Vec<&String> = json.as_object().unwrap().keys().collect();
        assert_eq!(keys, ["conv2", "conv1"]);
        assert_eq!(json["conv2"]["mean_activation"][0].as_f64().unwrap(), 0.333333333);
        let back = ActivationProfile::from_json(&json).unwrap();
        assert_eq!(back.n_samples, 7);
        assert_eq!(back.layers[1], p.layers[1]);
        assert_eq!(p.fingerprint().len(), 16);
    }
}
