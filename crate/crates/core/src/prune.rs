//! Filter selection from activation profiles.
//!
//! Per layer, the keep set is the shortest prefix of the descending
//! normalized activations whose cumulative sum is closest to the keep
//! threshold ρ. Each layer then gets a priority `(1 − ρ) / (1 − h/K)`; only
//! layers whose priority is strictly below the mean priority are pruned.
//! Uniform and random baselines share the same decision type.

use std::collections::BTreeSet;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::layers::Network;
use crate::stats::ActivationProfile;
use crate::tensor::Rng;

/// Slack on the strict below-mean gating comparison.
pub const GATING_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Cumulative-sum threshold with global priority gating.
    Nwa,
    /// Every layer drops its `⌊fraction·K⌋` least-activated filters.
    UniformLeastActivated,
    /// Every layer drops `⌊fraction·K⌋` filters chosen at random.
    UniformRandom,
    /// Per-layer removal counts copied from a reference decision, filters
    /// chosen at random.
    CountMatchedRandom,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PruneConfig {
    pub keep_threshold: f64,
    pub excluded_layers: BTreeSet<String>,
    pub min_filters_per_layer: usize,
    pub strategy: Strategy,
    pub uniform_fraction: f64,
}

impl Default for PruneConfig {
    fn default() -> Self {
        Self {
            keep_threshold: 0.98,
            excluded_layers: BTreeSet::new(),
            min_filters_per_layer: 1,
            strategy: Strategy::Nwa,
            uniform_fraction: 0.1,
        }
    }
}

impl PruneConfig {
    /// Config whose keep threshold is `1 − budget`.
    pub fn with_budget(budget: f64) -> Result<Self> {
        let cfg = Self {
            keep_threshold: 1.0 - budget,
            ..Self::default()
        };
        if !(0.0..1.0).contains(&budget) {
            return Err(Error::Config(format!("prune budget {budget} outside [0,1)")));
        }
        Ok(cfg)
    }

    pub fn prune_budget(&self) -> f64 {
        1.0 - self.keep_threshold
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.keep_threshold > 0.0 && self.keep_threshold <= 1.0) {
            return Err(Error::Config(format!(
                "keep_threshold {} outside (0,1]",
                self.keep_threshold
            )));
        }
        if self.min_filters_per_layer == 0 {
            return Err(Error::Config("min_filters_per_layer must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.uniform_fraction) {
            return Err(Error::Config(format!(
                "uniform_fraction {} outside [0,1)",
                self.uniform_fraction
            )));
        }
        Ok(())
    }
}

mod bitstring {
    use super::*;

    pub fn serialize<S: Serializer>(mask: &[bool], s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&mask.iter().map(|&b| if b { '1' } else { '0' }).collect::<String>())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<bool>, D::Error> {
        let text = String::deserialize(d)?;
        text.chars()
            .map(|c| match c {
                '1' => Ok(true),
                '0' => Ok(false),
                other => Err(serde::de::Error::custom(format!("mask character {other:?}"))),
            })
            .collect()
    }
}

/// `+∞` priorities serialize as JSON `null`.
mod priority {
    use super::*;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerDecision {
    pub name: String,
    #[serde(rename = "K")]
    pub width: usize,
    /// Threshold index: number of top filters whose cumulative activation is
    /// closest to the keep threshold.
    pub h: usize,
    pub kept: usize,
    #[serde(with = "priority")]
    pub priority: f64,
    pub gated: bool,
    pub excluded: bool,
    /// Keep flags in original channel order.
    #[serde(with = "bitstring")]
    pub mask: Vec<bool>,
}

impl LayerDecision {
    pub fn removed(&self) -> usize {
        self.width - self.kept
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneDecision {
    pub strategy: Strategy,
    pub keep_threshold: f64,
    pub prune_budget: f64,
    pub seed: u64,
    #[serde(with = "priority")]
    pub mean_priority: f64,
    pub profile_fingerprint: String,
    pub config: PruneConfig,
    pub layers: Vec<LayerDecision>,
}

impl PruneDecision {
    pub fn layer(&self, name: &str) -> Option<&LayerDecision> {
        self.layers.iter().find(|l| l.name == name)
    }

    /// Whether any layer loses at least one filter.
    pub fn prunes_anything(&self) -> bool {
        self.layers.iter().any(|l| l.kept < l.width)
    }
}

/// 1-based count `h` minimizing `|c[h−1] − ρ|`; the smaller `h` wins ties.
pub fn threshold_index(cumsum: &[f64], keep_threshold: f64) -> Result<usize> {
    if cumsum.is_empty() {
        return Err(Error::InvalidArgument("empty cumulative sum".into()));
    }
    let mut best = 0;
    let mut best_gap = f64::INFINITY;
    for (k, &c) in cumsum.iter().enumerate() {
        let gap = (c - keep_threshold).abs();
        if gap < best_gap {
            best = k;
            best_gap = gap;
        }
    }
    Ok(best + 1)
}

/// Keep mask in original channel order with ones at the first `h` entries of
/// `sort_perm`.
pub fn build_mask(sort_perm: &[usize], h: usize, width: usize) -> Result<Vec<bool>> {
    if sort_perm.len() != width {
        return Err(Error::InvalidArgument(format!(
            "permutation of length {} for {width} channels",
            sort_perm.len()
        )));
    }
    if h > width {
        return Err(Error::InvalidArgument(format!("h = {h} exceeds width {width}")));
    }
    let mut seen = vec![false; width];
    for &p in sort_perm {
        if p >= width || std::mem::replace(&mut seen[p], true) {
            return Err(Error::InvalidArgument(format!("{sort_perm:?} is not a permutation")));
        }
    }
    let mut mask = vec![false; width];
    for &p in &sort_perm[..h] {
        mask[p] = true;
    }
    Ok(mask)
}

/// `(1 − ρ) / (1 − h/K)`, or `+∞` when `h = K`.
pub fn layer_priority(keep_threshold: f64, h: usize, width: usize) -> Result<f64> {
    if width == 0 {
        return Err(Error::InvalidArgument("layer width must be positive".into()));
    }
    if h > width {
        return Err(Error::InvalidArgument(format!("h = {h} exceeds width {width}")));
    }
    if h == width {
        return Ok(f64::INFINITY);
    }
    Ok((1.0 - keep_threshold) / (1.0 - h as f64 / width as f64))
}

/// Mean priority over non-excluded layers with finite priority (`+∞` when
/// there are none) and, per layer, whether it falls strictly below it.
pub fn gate(priorities: &[f64], excluded: &[bool]) -> (f64, Vec<bool>) {
    let finite: Vec<f64> = priorities
        .iter()
        .zip(excluded)
        .filter(|(p, &x)| !x && p.is_finite())
        .map(|(p, _)| *p)
        .collect();
    let mean = if finite.is_empty() {
        f64::INFINITY
    } else {
        finite.iter().sum::<f64>() / finite.len() as f64
    };
    let gated = priorities
        .iter()
        .zip(excluded)
        .map(|(&p, &x)| !x && p < mean - GATING_EPS)
        .collect();
    (mean, gated)
}

fn random_mask(width: usize, kept: usize, rng: &mut Rng) -> Vec<bool> {
    let mut mask = vec![false; width];
    for i in rng.sample_indices(width, kept) {
        mask[i] = true;
    }
    mask
}

/// Builds a prune decision for every layer in `profile`.
///
/// `reference` supplies per-layer removal counts for
/// [`Strategy::CountMatchedRandom`] and is ignored otherwise.
pub fn decide(
    profile: &ActivationProfile,
    cfg: &PruneConfig,
    rng: &mut Rng,
    reference: Option<&PruneDecision>,
) -> Result<PruneDecision> {
    cfg.validate()?;
    let rho = cfg.keep_threshold;
    let mut layers = Vec::with_capacity(profile.layers.len());
    for lp in &profile.layers {
        let width = lp.width();
        let h = threshold_index(&lp.cumsum, rho)?;
        layers.push(LayerDecision {
            name: lp.name.clone(),
            width,
            h,
            kept: width,
            priority: layer_priority(rho, h, width)?,
            gated: false,
            excluded: cfg.excluded_layers.contains(&lp.name),
            mask: vec![true; width],
        });
    }
    let priorities: Vec<f64> = layers.iter().map(|l| l.priority).collect();
    let excluded: Vec<bool> = layers.iter().map(|l| l.excluded).collect();
    let (mean_priority, gates) = gate(&priorities, &excluded);

    for ((ld, lp), gated) in layers.iter_mut().zip(&profile.layers).zip(gates) {
        if ld.excluded {
            continue;
        }
        let floor = cfg.min_filters_per_layer.min(ld.width);
        let uniform_keep = || (ld.width - (cfg.uniform_fraction * ld.width as f64).floor() as usize).max(floor);
        match cfg.strategy {
            Strategy::Nwa => {
                ld.gated = gated;
                if ld.gated {
                    ld.kept = ld.h.max(floor);
                    ld.mask = build_mask(&lp.sort_perm, ld.kept, ld.width)?;
                }
            }
            Strategy::UniformLeastActivated => {
                ld.gated = true;
                ld.kept = uniform_keep();
                ld.mask = build_mask(&lp.sort_perm, ld.kept, ld.width)?;
            }
            Strategy::UniformRandom => {
                ld.gated = true;
                ld.kept = uniform_keep();
                ld.mask = random_mask(ld.width, ld.kept, rng);
            }
            Strategy::CountMatchedRandom => {
                let reference = reference.ok_or_else(|| {
                    Error::InvalidArgument("count-matched pruning needs a reference decision".into())
                })?;
                let r = reference.layer(&ld.name).ok_or_else(|| {
                    Error::ProfileMismatch(format!("reference decision has no layer {}", ld.name))
                })?;
                ld.gated = r.gated;
                ld.kept = ld.width.saturating_sub(r.removed()).max(floor);
                ld.mask = random_mask(ld.width, ld.kept, rng);
            }
        }
    }

    Ok(PruneDecision {
        strategy: cfg.strategy,
        keep_threshold: rho,
        prune_budget: cfg.prune_budget(),
        seed: rng.seed(),
        mean_priority,
        profile_fingerprint: profile.fingerprint(),
        config: cfg.clone(),
        layers,
    })
}

/// Checks that `profile` covers every prunable layer of `net` with matching
/// widths and names nothing else.
pub fn check_profile(net: &Network, profile: &ActivationProfile) -> Result<()> {
    let prunable = net.prunable_layers();
    for &i in &prunable {
        let spec = &net.specs()[i];
        let layer = profile
            .layer(&spec.name)
            .ok_or_else(|| Error::ProfileMismatch(format!("no statistics for layer {}", spec.name)))?;
        if Some(layer.width()) != spec.width() {
            return Err(Error::ProfileMismatch(format!(
                "layer {} has {} filters, profile has {}",
                spec.name,
                spec.width().unwrap(),
                layer.width()
            )));
        }
    }
    if profile.layers.len() != prunable.len() {
        return Err(Error::ProfileMismatch(format!(
            "profile has {} layers, network has {} prunable layers",
            profile.layers.len(),
            prunable.len()
        )));
    }
    Ok(())
}

/// [`decide`] after validating the profile against `net`.
pub fn decide_for(
    net: &Network,
    profile: &ActivationProfile,
    cfg: &PruneConfig,
    rng: &mut Rng,
    reference: Option<&PruneDecision>,
) -> Result<PruneDecision> {
    check_profile(net, profile)?;
    for name in &cfg.excluded_layers {
        if profile.layer(name).is_none() {
            return Err(Error::Config(format!("excluded layer {name} is not a prunable layer")));
        }
    }
    decide(profile, cfg, rng, reference)
}
