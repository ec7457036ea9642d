//! Independent reference implementations the library is checked against.

#![allow(dead_code)]

use nwadapt::data::{Dataset, Sample, Split};
use nwadapt::prune::{LayerDecision, PruneConfig, PruneDecision, Strategy};
use nwadapt::train::cross_entropy_loss;
use nwadapt::{LayerKind, LayerSpec, Mode, Network, Rng, Tensor};

/// Direct nested-loop convolution over `N×C×H×W` input.
pub fn naive_conv(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    b: &Tensor<f64>,
    stride: usize,
    pad: usize,
) -> Tensor<f64> {
    let (n, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (k, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (wd + 2 * pad - kw) / stride + 1;
    let mut out = Tensor::<f64>::zeros(&[n, k, ho, wo]).unwrap();
    for s in 0..n {
        for f in 0..k {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = b.get(&[f]);
                    for ch in 0..c {
                        for i in 0..kh {
                            for j in 0..kw {
                                let y = (oy * stride + i) as isize - pad as isize;
                                let xx = (ox * stride + j) as isize - pad as isize;
                                if y < 0 || xx < 0 || y >= h as isize || xx >= wd as isize {
                                    continue;
                                }
                                acc += w.get(&[f, ch, i, j]) * x.get(&[s, ch, y as usize, xx as usize]);
                            }
                        }
                    }
                    out.set(&[s, f, oy, ox], acc);
                }
            }
        }
    }
    out
}

pub struct GradInstance {
    pub net: Network<f64>,
    pub x: Tensor<f64>,
    pub labels: Vec<usize>,
    pub dropout_seed: u64,
}

fn relu(name: &str) -> LayerSpec {
    LayerSpec::new(name, LayerKind::Relu)
}

fn pool(name: &str, window: usize, stride: usize) -> LayerSpec {
    LayerSpec::new(name, LayerKind::MaxPool2d { window, stride })
}

fn flat() -> LayerSpec {
    LayerSpec::new("flatten", LayerKind::Flatten)
}

fn drop(name: &str, rate: f64) -> LayerSpec {
    LayerSpec::new(name, LayerKind::Dropout { rate })
}

fn softmax() -> LayerSpec {
    LayerSpec::new("softmax", LayerKind::SoftmaxOutput)
}

/// Small networks cycling through every layer kind, with random biases.
pub fn gradient_instance(index: usize) -> GradInstance {
    let mut rng = Rng::new(1000 + index as u64);
    let classes = 2 + index % 3;
    let batch = 2 + index % 2;
    let (specs, input): (Vec<LayerSpec>, Vec<usize>) = match index % 4 {
        0 => (
            vec![
                LayerSpec::conv("c1", 2, 3, 3, 1, 1),
                relu("r1"),
                pool("p1", 2, 2),
                flat(),
                LayerSpec::dense("fc", 3 * 2 * 2, classes),
                softmax(),
            ],
            vec![2, 4, 4],
        ),
        1 => (
            vec![
                LayerSpec::conv("c1", 2, 3, 3, 2, 0),
                relu("r1"),
                LayerSpec::conv("c2", 3, 2, 3, 1, 1),
                relu("r2"),
                flat(),
                LayerSpec::dense("fc1", 2 * 3 * 3, 5),
                relu("r3"),
                drop("d1", 0.5),
                LayerSpec::dense("fc2", 5, classes),
                softmax(),
            ],
            vec![2, 7, 7],
        ),
        2 => (
            vec![
                LayerSpec::dense("fc1", 6, 7),
                relu("r1"),
                LayerSpec::dense("fc2", 7, 5),
                relu("r2"),
                drop("d", 0.3),
                LayerSpec::dense("fc3", 5, classes),
            ],
            vec![6],
        ),
        _ => (
            vec![
                LayerSpec::conv("c1", 1, 3, 3, 1, 1),
                relu("r1"),
                pool("p1", 3, 1),
                LayerSpec::conv("c2", 3, 4, 2, 2, 1),
                relu("r2"),
                pool("p2", 2, 2),
                flat(),
                LayerSpec::dense("fc", 4, classes),
                softmax(),
            ],
            vec![1, 5, 5],
        ),
    };
    let mut net = Network::<f64>::new(specs, &input, &mut rng).unwrap();
    for i in net.param_layers() {
        let p = net.param_mut(i).unwrap();
        let k = p.bias.len();
        p.bias = Tensor::rand_normal(&[k], 0.0, 0.1, &mut rng).unwrap();
    }
    net.set_mode(Mode::Train);
    let mut shape = vec![batch];
    shape.extend(&input);
    let x = Tensor::rand_normal(&shape, 0.0, 1.0, &mut rng).unwrap();
    let labels = (0..batch).map(|_| rng.below(classes)).collect();
    GradInstance {
        net,
        x,
        labels,
        dropout_seed: 77 + index as u64,
    }
}

fn loss(inst: &GradInstance, net: &Network<f64>) -> f64 {
    let mut rng = Rng::new(inst.dropout_seed);
    let (logits, _) = net.forward_train(&inst.x, Some(&mut rng)).unwrap();
    cross_entropy_loss(&logits, &inst.labels).unwrap().0
}

fn relative(a: &[f64], n: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(n).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nn: f64 = n.iter().map(|v| v * v).sum::<f64>().sqrt();
    let scale = na.max(nn);
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

/// Largest per-tensor relative error `‖g − ĝ‖ / max(‖g‖, ‖ĝ‖)` between
/// backprop gradients and central differences of the full loss.
pub fn max_gradient_error(inst: &GradInstance, eps: f64) -> f64 {
    let mut rng = Rng::new(inst.dropout_seed);
    let (logits, tape) = inst.net.forward_train(&inst.x, Some(&mut rng)).unwrap();
    let (_, dlogits) = cross_entropy_loss(&logits, &inst.labels).unwrap();
    let grads = inst.net.backward(&tape, &dlogits).unwrap();
    let mut worst = 0.0f64;
    for i in inst.net.param_layers() {
        let g = grads.layers[i].as_ref().unwrap();
        for (which, analytic) in [(0, &g.weight), (1, &g.bias)] {
            let mut numeric = Vec::with_capacity(analytic.len());
            for e in 0..analytic.len() {
                let probe = |delta: f64| {
                    let mut net = inst.net.clone();
                    let p = net.param_mut(i).unwrap();
                    let t = if which == 0 { &mut p.weight } else { &mut p.bias };
                    t.data_mut()[e] += delta;
                    loss(inst, &net)
                };
                numeric.push((probe(eps) - probe(-eps)) / (2.0 * eps));
            }
            worst = worst.max(relative(analytic.data(), &numeric));
        }
    }
    worst
}

/// Output index of layer `i` at which its post-ReLU activation exists.
pub fn activation_point(net: &Network, i: usize) -> usize {
    match net.specs().get(i + 1).map(|s| &s.kind) {
        Some(LayerKind::Relu) => i + 1,
        _ => i,
    }
}

/// Unpruned forward pass with the masked channels' activations forced to 0.
pub fn masked_forward(net: &Network, x: &Tensor, masks: &[(String, Vec<bool>)]) -> Tensor {
    let points: Vec<(usize, &Vec<bool>)> = masks
        .iter()
        .map(|(name, m)| (activation_point(net, net.layer_index(name).unwrap()), m))
        .collect();
    let mut h = x.clone();
    for i in 0..net.specs().len() {
        h = net.forward_layer(i, &h).unwrap();
        for (p, mask) in &points {
            if *p != i {
                continue;
            }
            let n = h.shape()[0];
            let k = h.shape()[1];
            let plane = h.len() / (n * k);
            let data = h.data_mut();
            for s in 0..n {
                for (c, &keep) in mask.iter().enumerate() {
                    if !keep {
                        let start = (s * k + c) * plane;
                        data[start..start + plane].iter_mut().for_each(|v| *v = 0.0);
                    }
                }
            }
        }
    }
    h
}

/// Gated decision applying exactly `masks`.
pub fn decision_from_masks(masks: &[(String, Vec<bool>)]) -> PruneDecision {
    PruneDecision {
        strategy: Strategy::Nwa,
        keep_threshold: 0.9,
        prune_budget: 0.1,
        seed: 0,
        mean_priority: 0.0,
        profile_fingerprint: String::new(),
        config: PruneConfig::default(),
        layers: masks
            .iter()
            .map(|(name, mask)| {
                let kept = mask.iter().filter(|&&b| b).count();
                LayerDecision {
                    name: name.clone(),
                    width: mask.len(),
                    h: kept,
                    kept,
                    priority: 0.0,
                    gated: true,
                    excluded: false,
                    mask: mask.clone(),
                }
            })
            .collect(),
    }
}

/// Random network covering conv→conv, conv→flatten→dense and dense→dense
/// couplings, with random keep masks (at least one kept per layer) on every
/// prunable layer.
pub fn masked_triple(index: usize) -> (Network, Vec<(String, Vec<bool>)>, Tensor) {
    let mut rng = Rng::new(5000 + index as u64);
    let c0 = 1 + rng.below(3);
    let k1 = 2 + rng.below(5);
    let k2 = 2 + rng.below(5);
    let d1 = 2 + rng.below(6);
    let d2 = 2 + rng.below(6);
    let hw = 4 + 2 * rng.below(3);
    let pooled = rng.bernoulli(0.5);
    let stride = 1 + rng.below(2);
    let mut specs = vec![
        LayerSpec::conv("c1", c0, k1, 3, 1, 1),
        relu("r1"),
        LayerSpec::conv("c2", k1, k2, 3, stride, 1),
        relu("r2"),
    ];
    let mut side = (hw + 2 - 3) / stride + 1;
    if pooled {
        specs.push(pool("p2", 2, 2));
        side /= 2;
    }
    specs.extend([
        flat(),
        LayerSpec::dense("fc1", k2 * side * side, d1),
        relu("r3"),
        drop("d3", 0.5),
        LayerSpec::dense("fc2", d1, d2),
        relu("r4"),
        LayerSpec::dense("out", d2, 3),
        softmax(),
    ]);
    let mut net = Network::new(specs, &[c0, hw, hw], &mut rng).unwrap();
    for i in net.param_layers() {
        let p = net.param_mut(i).unwrap();
        let k = p.bias.len();
        p.bias = Tensor::rand_normal(&[k], 0.1, 0.2, &mut rng).unwrap();
    }
    let masks = ["c1", "c2", "fc1", "fc2"]
        .iter()
        .map(|name| {
            let width = net.specs()[net.layer_index(name).unwrap()].width().unwrap();
            let mut mask: Vec<bool> = (0..width).map(|_| rng.bernoulli(0.6)).collect();
            let forced = rng.below(width);
            mask[forced] = true;
            (name.to_string(), mask)
        })
        .collect();
    let n = 1 + rng.below(3);
    let x = Tensor::rand_normal(&[n, c0, hw, hw], 0.0, 1.0, &mut rng).unwrap();
    (net, masks, x)
}

pub fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs() as f64)
        .fold(0.0, f64::max)
}

/// Brute-force threshold index: every prefix length is scored directly.
pub fn brute_threshold(values: &[f64], rho: f64) -> usize {
    let total: f64 = values.iter().sum();
    let mut sorted: Vec<f64> = values.iter().map(|v| v / total).collect();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut best = 1;
    let mut best_gap = f64::INFINITY;
    for h in 1..=sorted.len() {
        let prefix: f64 = sorted[..h].iter().fold(0.0, |a, v| a + v);
        let gap = (prefix - rho).abs();
        if gap < best_gap {
            best_gap = gap;
            best = h;
        }
    }
    best
}

/// Keeps channel `i` iff fewer than `h` channels outrank it, where larger
/// values outrank smaller ones and equal values are ranked by index.
pub fn brute_mask(values: &[f64], h: usize) -> Vec<bool> {
    (0..values.len())
        .map(|i| {
            let rank = (0..values.len())
                .filter(|&j| values[j] > values[i] || (values[j] == values[i] && j < i))
                .count();
            rank < h
        })
        .collect()
}

/// Random non-negative activation vector; small integer levels make ties
/// common.
pub fn random_activation_vector(rng: &mut Rng) -> Vec<f64> {
    let k = 1 + rng.below(12);
    let tied = rng.bernoulli(0.5);
    let mut v: Vec<f64> = (0..k)
        .map(|_| if tied { rng.below(4) as f64 } else { rng.uniform() })
        .collect();
    if v.iter().all(|&x| x == 0.0) {
        v[0] = 1.0;
    }
    v
}

/// Small random image dataset with `classes` labels.
pub fn random_dataset(n: usize, shape: &[usize], classes: usize, rng: &mut Rng) -> Dataset {
    let samples = (0..n)
        .map(|i| Sample {
            image: Tensor::rand_normal(shape, 0.5, 0.3, rng).unwrap(),
            label: i % classes,
            split: Split::Train,
        })
        .collect();
    let names = (0..classes).map(|c| format!("class{c}")).collect();
    let mut ds = Dataset::new(samples, names, vec![0.0; shape[0]]).unwrap();
    ds.recompute_channel_means();
    ds
}

/// Dataset-mean channel activations from one forward pass over the whole
/// dataset, summed with explicit loops.
pub fn materialized_means(net: &Network, data: &Dataset) -> Vec<(String, Vec<f64>)> {
    let all: Vec<usize> = (0..data.len()).collect();
    let (x, _) = data.batch(&all, None).unwrap();
    let (_, acts) = net.forward_activations(&x).unwrap();
    acts.into_iter()
        .map(|(name, t)| {
            let n = t.shape()[0];
            let k = t.shape()[1];
            let plane = t.len() / (n * k);
            let mut means = vec![0.0f64; k];
            for s in 0..n {
                for (c, m) in means.iter_mut().enumerate() {
                    let start = (s * k + c) * plane;
                    let chunk = &t.data()[start..start + plane];
                    *m += chunk.iter().map(|&v| v as f64).sum::<f64>() / plane as f64;
                }
            }
            (name, means.into_iter().map(|m| m / n as f64).collect())
        })
        .collect()
}
