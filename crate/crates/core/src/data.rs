//! Labelled image datasets, on-disk manifests, augmentation, ten-crop
//! evaluation and the synthetic shape dataset used for desk-scale runs.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::{read_tensor, write_tensor};
use crate::layers::Network;
use crate::tensor::{Rng, Tensor};
use crate::train::softmax;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// `C×H×W`, values in `[0, 1]`.
    pub image: Tensor,
    pub label: usize,
    pub split: Split,
}

/// Images with labels. Network inputs are images minus `channel_means`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    class_names: Vec<String>,
    channel_means: Vec<f32>,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, class_names: Vec<String>, channel_means: Vec<f32>) -> Result<Self> {
        if class_names.is_empty() {
            return Err(Error::Data("dataset needs at least one class".into()));
        }
        if let Some(first) = samples.first() {
            let shape = first.image.shape();
            if shape.len() != 3 {
                return Err(Error::Data(format!("images must be C×H×W, got {shape:?}")));
            }
            if channel_means.len() != shape[0] {
                return Err(Error::Data(format!(
                    "{} channel means for {} channels",
                    channel_means.len(),
                    shape[0]
                )));
            }
            for (i, s) in samples.iter().enumerate() {
                if s.image.shape() != shape {
                    return Err(Error::Data(format!(
                        "sample {i} has shape {:?}, expected {shape:?}",
                        s.image.shape()
                    )));
                }
                if s.label >= class_names.len() {
                    return Err(Error::Data(format!(
                        "sample {i} label {} out of range for {} classes",
                        s.label,
                        class_names.len()
                    )));
                }
            }
        }
        Ok(Self {
            samples,
            class_names,
            channel_means,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn channel_means(&self) -> &[f32] {
        &self.channel_means
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn label(&self, i: usize) -> usize {
        self.samples[i].label
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// `C×H×W` of every image, or `None` when empty.
    pub fn image_shape(&self) -> Option<&[usize]> {
        self.samples.first().map(|s| s.image.shape())
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            class_names: self.class_names.clone(),
            channel_means: self.channel_means.clone(),
        }
    }

    pub fn with_split(&self, split: Split) -> Dataset {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| self.samples[i].split == split).collect();
        self.subset(&idx)
    }

    /// Relabels every sample's split tag.
    pub fn tagged(mut self, split: Split) -> Dataset {
        self.samples.iter_mut().for_each(|s| s.split = split);
        self
    }

    /// Concatenates datasets over the same classes.
    pub fn concat(parts: &[&Dataset]) -> Result<Dataset> {
        let first = parts.first().ok_or_else(|| Error::Data("nothing to concatenate".into()))?;
        let mut samples = Vec::new();
        for p in parts {
            if p.class_names != first.class_names {
                return Err(Error::Data("class lists differ".into()));
            }
            samples.extend(p.samples.iter().cloned());
        }
        Dataset::new(samples, first.class_names.clone(), first.channel_means.clone())
    }

    /// Sets per-channel means to the dataset's own pixel means.
    pub fn recompute_channel_means(&mut self) {
        let Some(shape) = self.image_shape().map(<[usize]>::to_vec) else {
            return;
        };
        let plane = shape[1] * shape[2];
        let mut sums = vec![0.0f64; shape[0]];
        for s in &self.samples {
            for (c, chunk) in s.image.data().chunks(plane).enumerate() {
                sums[c] += chunk.iter().map(|&v| v as f64).sum::<f64>();
            }
        }
        let n = (self.samples.len() * plane) as f64;
        self.channel_means = sums.into_iter().map(|s| (s / n) as f32).collect();
    }

    /// Network input for sample `i`: the image minus the channel means.
    pub fn input(&self, i: usize) -> Tensor {
        center(&self.samples[i].image, &self.channel_means)
    }

    /// Stacks the given samples into an `N×C×H×W` batch of network inputs.
    ///
    /// With augmentation, sample `i` is warped using the stream
    /// `rng.derive(&[i])`, so results do not depend on batch composition.
    pub fn batch(&self, indices: &[usize], augment: Option<(&AugmentConfig, &Rng)>) -> Result<(Tensor, Vec<usize>)> {
        let shape = self
            .image_shape()
            .ok_or_else(|| Error::Data("batch from empty dataset".into()))?
            .to_vec();
        let mut data = Vec::with_capacity(indices.len() * shape.iter().product::<usize>());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            let s = &self.samples[i];
            let img = match augment {
                Some((cfg, rng)) => augment_image(&s.image, cfg, &mut rng.derive(&[i as u64]))?,
                None => s.image.clone(),
            };
            data.extend(center(&img, &self.channel_means).into_data());
            labels.push(s.label);
        }
        let batch_shape = [indices.len(), shape[0], shape[1], shape[2]];
        Ok((Tensor::from_vec(&batch_shape, data)?, labels))
    }
}

fn center(image: &Tensor, means: &[f32]) -> Tensor {
    let plane = image.shape()[1] * image.shape()[2];
    let mut out = image.clone();
    for (chunk, &m) in out.data_mut().chunks_mut(plane).zip(means) {
        chunk.iter_mut().for_each(|v| *v -= m);
    }
    out
}

/// Bilinear sample of one channel plane at real coordinates `(y, x)`
/// (pixel centres on integers), zero outside the image.
fn sample_bilinear(plane: &[f32], h: usize, w: usize, y: f64, x: f64) -> f32 {
    let y0 = y.floor();
    let x0 = x.floor();
    let (fy, fx) = (y - y0, x - x0);
    let (y0, x0) = (y0 as i64, x0 as i64);
    let at = |yy: i64, xx: i64| -> f64 {
        if yy < 0 || xx < 0 || yy >= h as i64 || xx >= w as i64 {
            0.0
        } else {
            plane[yy as usize * w + xx as usize] as f64
        }
    };
    let mut v = 0.0;
    for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
        if wy == 0.0 {
            continue;
        }
        for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
            if wx == 0.0 {
                continue;
            }
            v += wy * wx * at(y0 + dy, x0 + dx);
        }
    }
    v as f32
}

/// Bilinear resize of a `C×H×W` image to `C×out_h×out_w` with half-pixel
/// centres and edge clamping.
pub fn resize_bilinear(img: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let &[c, h, w] = img.shape() else {
        return Err(Error::InvalidShape(format!("expected C×H×W, got {:?}", img.shape())));
    };
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidArgument("resize target must be positive".into()));
    }
    if (out_h, out_w) == (h, w) {
        return Ok(img.clone());
    }
    let src = |dst: usize, out: usize, inp: usize| -> f64 {
        ((dst as f64 + 0.5) * inp as f64 / out as f64 - 0.5).clamp(0.0, (inp - 1) as f64)
    };
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for plane in img.data().chunks(h * w) {
        for y in 0..out_h {
            let sy = src(y, out_h, h);
            for x in 0..out_w {
                out.push(sample_bilinear(plane, h, w, sy, src(x, out_w, w)));
            }
        }
    }
    Tensor::from_vec(&[c, out_h, out_w], out)
}

/// Scales the longer side to `target` and zero-pads the shorter side
/// symmetrically (an odd remainder puts the extra row/column at the end).
pub fn resize_with_aspect_pad(img: &Tensor, target: usize) -> Result<Tensor> {
    let &[c, h, w] = img.shape() else {
        return Err(Error::InvalidShape(format!("expected C×H×W, got {:?}", img.shape())));
    };
    if target == 0 {
        return Err(Error::InvalidArgument("target extent must be positive".into()));
    }
    let scale = target as f64 / h.max(w) as f64;
    let nh = ((h as f64 * scale).round() as usize).clamp(1, target);
    let nw = ((w as f64 * scale).round() as usize).clamp(1, target);
    let content = resize_bilinear(img, nh, nw)?;
    if (nh, nw) == (target, target) {
        return Ok(content);
    }
    let (top, left) = ((target - nh) / 2, (target - nw) / 2);
    let mut out = Tensor::zeros(&[c, target, target])?;
    for ch in 0..c {
        for y in 0..nh {
            let src = &content.data()[(ch * nh + y) * nw..(ch * nh + y + 1) * nw];
            let start = (ch * target + top + y) * target + left;
            out.data_mut()[start..start + nw].copy_from_slice(src);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub enabled: bool,
    pub jitter_px: usize,
    /// Scale factor range `[lo, hi]`.
    pub scale_range: [f64; 2],
    pub rotation_deg: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            jitter_px: 4,
            scale_range: [0.9, 1.1],
            rotation_deg: 10.0,
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.scale_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::Config(format!("augment: bad scale_range {:?}", self.scale_range)));
        }
        if !(self.rotation_deg >= 0.0 && self.rotation_deg.is_finite()) {
            return Err(Error::Config(format!("augment: bad rotation_deg {}", self.rotation_deg)));
        }
        Ok(())
    }
}

/// Random translation, scaling and rotation about the image centre, applied
/// as one inverse-mapped affine warp with bilinear sampling and zero fill.
pub fn augment_image(img: &Tensor, cfg: &AugmentConfig, rng: &mut Rng) -> Result<Tensor> {
    if !cfg.enabled {
        return Ok(img.clone());
    }
    cfg.validate()?;
    let &[_, h, w] = img.shape() else {
        return Err(Error::InvalidShape(format!("expected C×H×W, got {:?}", img.shape())));
    };
    let j = cfg.jitter_px as i64;
    let ty = (rng.below(2 * cfg.jitter_px + 1) as i64 - j) as f64;
    let tx = (rng.below(2 * cfg.jitter_px + 1) as i64 - j) as f64;
    let scale = rng.uniform_range(cfg.scale_range[0], cfg.scale_range[1]);
    let angle = rng.uniform_range(-cfg.rotation_deg, cfg.rotation_deg).to_radians();
    let (sin, cos) = angle.sin_cos();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let mut out = Vec::with_capacity(img.len());
    for plane in img.data().chunks(h * w) {
        for y in 0..h {
            for x in 0..w {
                // invert: p = c + s·R(θ)(q − c) + t
                let dy = y as f64 - cy - ty;
                let dx = x as f64 - cx - tx;
                let qy = cy + (cos * dy - sin * dx) / scale;
                let qx = cx + (sin * dy + cos * dx) / scale;
                out.push(sample_bilinear(plane, h, w, qy, qx));
            }
        }
    }
    Tensor::from_vec(img.shape(), out)
}

fn flip_horizontal(img: &Tensor) -> Tensor {
    let w = img.shape()[2];
    let mut out = img.clone();
    for row in out.data_mut().chunks_mut(w) {
        row.reverse();
    }
    out
}

fn crop(img: &Tensor, top: usize, left: usize, size: usize) -> Tensor {
    let (c, h, w) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    let mut data = Vec::with_capacity(c * size * size);
    for ch in 0..c {
        for y in top..top + size {
            let start = (ch * h + y) * w + left;
            data.extend_from_slice(&img.data()[start..start + size]);
        }
    }
    Tensor::from_vec(&[c, size, size], data).expect("crop shape")
}

/// Top-left corners of the four corner crops and the centre crop.
pub fn ten_crop_offsets(h: usize, w: usize, size: usize) -> [(usize, usize); 5] {
    [
        (0, 0),
        (0, w - size),
        (h - size, 0),
        (h - size, w - size),
        ((h - size) / 2, (w - size) / 2),
    ]
}

/// Class probabilities averaged over the four corner crops and the centre
/// crop of `input` and of its horizontal mirror.
///
/// `input` is a network-ready `C×H×W` tensor. Crops whose extent differs
/// from the network's input extent are bilinearly resized to it.
pub fn ten_crop_predict(net: &Network, input: &Tensor, crop_size: usize) -> Result<Vec<f64>> {
    let &[c, h, w] = input.shape() else {
        return Err(Error::InvalidShape(format!("expected C×H×W, got {:?}", input.shape())));
    };
    if crop_size == 0 || crop_size > h || crop_size > w {
        return Err(Error::InvalidArgument(format!(
            "crop {crop_size} does not fit a {h}×{w} image"
        )));
    }
    let net_shape = net.input_shape();
    if net_shape.len() != 3 || net_shape[0] != c || net_shape[1] != net_shape[2] {
        return Err(Error::ShapeMismatch(format!(
            "ten-crop needs a square {c}-channel network input, got {net_shape:?}"
        )));
    }
    let mut batch = Vec::with_capacity(10 * net_shape.iter().product::<usize>());
    for view in [input.clone(), flip_horizontal(input)] {
        for (top, left) in ten_crop_offsets(h, w, crop_size) {
            let patch = resize_bilinear(&crop(&view, top, left, crop_size), net_shape[1], net_shape[2])?;
            batch.extend(patch.into_data());
        }
    }
    let x = Tensor::from_vec(&[10, net_shape[0], net_shape[1], net_shape[2]], batch)?;
    let probs = softmax(&net.predict(&x)?);
    let classes = net.num_classes();
    let mut mean = vec![0.0f64; classes];
    for row in probs.data().chunks(classes) {
        mean.iter_mut().zip(row).for_each(|(m, &p)| *m += p as f64);
    }
    mean.iter_mut().for_each(|m| *m /= 10.0);
    Ok(mean)
}

/// Shape drawn for each synthetic class, in label order.
pub const SYNTHETIC_SHAPES: [&str; 8] = [
    "rectangle",
    "disk",
    "triangle",
    "cross",
    "ring",
    "stripes",
    "checker",
    "dot_grid",
];

/// Whether normalized coordinates `(u, v)` in `[-1, 1]²` lie inside `shape`.
fn inside(shape: usize, u: f64, v: f64) -> bool {
    let in_box = u.abs() <= 1.0 && v.abs() <= 1.0;
    let r = (u * u + v * v).sqrt();
    match shape {
        0 => u.abs() <= 1.0 && v.abs() <= 0.65,
        1 => r <= 1.0,
        2 => (-1.0..=1.0).contains(&v) && u.abs() <= (v + 1.0) / 2.0,
        3 => (u.abs() <= 0.3 && v.abs() <= 1.0) || (v.abs() <= 0.3 && u.abs() <= 1.0),
        4 => (0.55..=1.0).contains(&r),
        5 => in_box && ((u + 1.0) * 2.5).floor() as i64 % 2 == 0,
        6 => in_box && (((u + 1.0) * 2.0).floor() as i64 + ((v + 1.0) * 2.0).floor() as i64) % 2 == 0,
        7 => {
            let near = |t: f64| t - (t * 2.0).round() / 2.0;
            in_box && (near(u).powi(2) + near(v).powi(2)).sqrt() <= 0.15
        }
        _ => unreachable!("shape index"),
    }
}

/// Balanced RGB shape dataset: class `k` draws `SYNTHETIC_SHAPES[k]` at a
/// random position, size and tint over a black background with additive
/// Gaussian noise (σ = 0.05), clipped to `[0, 1]`. Samples are interleaved
/// by class and tagged [`Split::Train`].
pub fn generate_synthetic(classes: usize, per_class: usize, hw: usize, rng: &mut Rng) -> Result<Dataset> {
    if !(2..=8).contains(&classes) {
        return Err(Error::InvalidArgument(format!("classes must be in [2, 8], got {classes}")));
    }
    if per_class < 2 {
        return Err(Error::InvalidArgument(format!("per_class must be >= 2, got {per_class}")));
    }
    if hw < 8 {
        return Err(Error::InvalidArgument(format!("image extent {hw} below 8")));
    }
    let mut samples = Vec::with_capacity(classes * per_class);
    let size = hw as f64;
    for _ in 0..per_class {
        for label in 0..classes {
            let radius = rng.uniform_range(0.22, 0.4) * size;
            let cy = rng.uniform_range(radius, size - radius);
            let cx = rng.uniform_range(radius, size - radius);
            let intensity = rng.uniform_range(0.6, 1.0);
            let tint: Vec<f64> = (0..3).map(|_| rng.uniform_range(0.7, 1.0) * intensity).collect();
            let mut data = Vec::with_capacity(3 * hw * hw);
            for tone in &tint {
                for y in 0..hw {
                    for x in 0..hw {
                        let u = (x as f64 + 0.5 - cx) / radius;
                        let v = (y as f64 + 0.5 - cy) / radius;
                        let base = if inside(label, u, v) { *tone } else { 0.0 };
                        data.push(base);
                    }
                }
            }
            let noisy = data
                .into_iter()
                .map(|v| (v + rng.normal(0.0, 0.05)).clamp(0.0, 1.0) as f32)
                .collect();
            samples.push(Sample {
                image: Tensor::from_vec(&[3, hw, hw], noisy)?,
                label,
                split: Split::Train,
            });
        }
    }
    let names = SYNTHETIC_SHAPES[..classes].iter().map(|s| s.to_string()).collect();
    let mut ds = Dataset::new(samples, names, vec![0.0; 3])?;
    ds.recompute_channel_means();
    Ok(ds)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestSample {
    file: String,
    label: usize,
    split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    class_names: Vec<String>,
    channel_means: Vec<f32>,
    samples: Vec<ManifestSample>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes `manifest.json` plus one TNSR file per image under `images/`.
pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    let images = dir.join("images");
    fs::create_dir_all(&images).map_err(|e| Error::io(format!("creating {}", images.display()), e))?;
    let mut entries = Vec::with_capacity(ds.len());
    for (i, s) in ds.samples.iter().enumerate() {
        let file = format!("images/{i:06}.tnsr");
        write_tensor(&dir.join(&file), &s.image)?;
        entries.push(ManifestSample {
            file,
            label: s.label,
            split: s.split,
        });
    }
    let manifest = Manifest {
        class_names: ds.class_names.clone(),
        channel_means: ds.channel_means.clone(),
        samples: entries,
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Loads every sample listed in `dir/manifest.json`.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::Data(format!("missing manifest {}", path.display())),
        _ => Error::io(format!("reading {}", path.display()), e),
    })?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let mut samples = Vec::with_capacity(manifest.samples.len());
    for entry in &manifest.samples {
        if entry.label >= manifest.class_names.len() {
            return Err(Error::Data(format!(
                "{}: label {} out of range for {} classes",
                entry.file,
                entry.label,
                manifest.class_names.len()
            )));
        }
        let file = dir.join(&entry.file);
        if !file.is_file() {
            return Err(Error::Data(format!("manifest references missing file {}", entry.file)));
        }
        samples.push(Sample {
            image: read_tensor(&file)?,
            label: entry.label,
            split: entry.split,
        });
    }
    Dataset::new(samples, manifest.class_names, manifest.channel_means)
}
