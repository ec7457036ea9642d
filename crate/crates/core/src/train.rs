//! Cross-entropy objective, plain SGD with decoupled-from-bias weight decay,
//! and the fine-tuning loop with plateau learning-rate drops, early stopping
//! and best-on-validation checkpointing.

use serde::{Deserialize, Serialize};

use crate::data::{AugmentConfig, Dataset};
use crate::error::{Error, Result};
use crate::layers::{Gradients, Mode, Network, Param};
use crate::tensor::{Rng, Scalar, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr_initial: f64,
    pub lr_drop_factor: f64,
    pub lr_plateau_patience: usize,
    pub early_stop_patience: usize,
    pub max_epochs: usize,
    pub weight_decay: f64,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            lr_initial: 1e-4,
            lr_drop_factor: 10.0,
            lr_plateau_patience: 3,
            early_stop_patience: 6,
            max_epochs: 30,
            weight_decay: 5e-4,
            dropout: 0.5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(format!("train: {msg}")));
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if self.lr_plateau_patience == 0 || self.early_stop_patience == 0 {
            return bad("patiences must be >= 1");
        }
        if !(self.lr_drop_factor > 1.0) {
            return bad("lr_drop_factor must be > 1");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0,1)");
        }
        if !(self.lr_initial >= 0.0) || !(self.weight_decay >= 0.0) {
            return bad("lr_initial and weight_decay must be non-negative");
        }
        Ok(())
    }

    /// Parses the flat JSON form; unknown keys are rejected.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub lr: f64,
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub best_params: Vec<Option<Param>>,
    pub best_val_accuracy: f64,
    /// `-1` when no epoch ran.
    pub best_epoch: i64,
    pub history: Vec<EpochRecord>,
}

/// Mean softmax cross-entropy over the batch and its gradient w.r.t. the logits.
pub fn cross_entropy_loss<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(f64, Tensor<T>)> {
    if logits.rank() != 2 || logits.shape()[0] != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "logits {:?} for {} labels",
            logits.shape(),
            labels.len()
        )));
    }
    let (n, classes) = (logits.shape()[0], logits.shape()[1]);
    let mut grad = vec![T::ZERO; n * classes];
    let mut total = 0.0f64;
    let inv_n = T::from_f64(1.0 / n as f64);
    for (s, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(Error::InvalidLabel { label, classes });
        }
        let row = &logits.data()[s * classes..(s + 1) * classes];
        let max = row.iter().copied().fold(row[0], T::max);
        let exps: Vec<T> = row.iter().map(|&z| (z - max).exp()).collect();
        let sum: T = exps.iter().copied().sum();
        total += (sum.ln() - (row[label] - max)).to_f64();
        let g = &mut grad[s * classes..(s + 1) * classes];
        for (j, (gj, &e)) in g.iter_mut().zip(&exps).enumerate() {
            let p = e / sum;
            *gj = (if j == label { p - T::ONE } else { p }) * inv_n;
        }
    }
    Ok((total / n as f64, Tensor::from_vec(logits.shape(), grad)?))
}

/// Row-wise softmax of a `[N, classes]` tensor.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Tensor<T> {
    let classes = *logits.shape().last().unwrap();
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(classes) {
        let max = row.iter().copied().fold(row[0], T::max);
        row.iter_mut().for_each(|v| *v = (*v - max).exp());
        let sum: T = row.iter().copied().sum();
        row.iter_mut().for_each(|v| *v /= sum);
    }
    out
}

/// `w ← w − lr·(g + weight_decay·w)` for weights, `b ← b − lr·g` for biases.
pub fn sgd_step<T: Scalar>(net: &mut Network<T>, grads: &Gradients<T>, lr: f64, weight_decay: f64) -> Result<()> {
    if grads.layers.len() != net.specs().len() {
        return Err(Error::ShapeMismatch("gradient list does not match layers".into()));
    }
    for (i, g) in grads.layers.iter().enumerate() {
        let (Some(g), Some(p)) = (g, net.param(i)) else {
            if g.is_some() != net.param(i).is_some() {
                return Err(Error::ShapeMismatch(format!("gradient slot {i} does not match parameters")));
            }
            continue;
        };
        if g.weight.shape() != p.weight.shape() || g.bias.shape() != p.bias.shape() {
            return Err(Error::ShapeMismatch(format!("gradient shape for layer {}", net.specs()[i].name)));
        }
    }
    let lr_t = T::from_f64(lr);
    let wd_t = T::from_f64(weight_decay);
    for (i, g) in grads.layers.iter().enumerate() {
        if let (Some(g), Some(p)) = (g, net.param_mut(i)) {
            for (w, &gw) in p.weight.data_mut().iter_mut().zip(g.weight.data()) {
                *w -= lr_t * (gw + wd_t * *w);
            }
            for (b, &gb) in p.bias.data_mut().iter_mut().zip(g.bias.data()) {
                *b -= lr_t * gb;
            }
        }
    }
    Ok(())
}

/// Loss and accuracy of eval-mode predictions over a dataset.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
}

pub fn evaluate(net: &Network, data: &Dataset, batch_size: usize) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty dataset".into()));
    }
    let mut loss = 0.0;
    let mut correct = 0usize;
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let (x, labels) = data.batch(chunk, None)?;
        let logits = net.predict(&x)?;
        let (l, _) = cross_entropy_loss(&logits, &labels)?;
        loss += l * chunk.len() as f64;
        correct += argmax_rows(&logits)
            .iter()
            .zip(&labels)
            .filter(|(p, l)| p == l)
            .count();
    }
    Ok(Evaluation {
        loss: loss / data.len() as f64,
        accuracy: correct as f64 / data.len() as f64,
    })
}

pub fn argmax_rows<T: Scalar>(logits: &Tensor<T>) -> Vec<usize> {
    let classes = *logits.shape().last().unwrap();
    logits
        .data()
        .chunks(classes)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Fine-tunes `net` in place and returns the best-on-validation snapshot.
///
/// On return `net` holds the parameters of the last epoch run; callers that
/// want the checkpoint restore `best_params` themselves.
pub fn fit(
    net: &mut Network,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
    augment: Option<&AugmentConfig>,
) -> Result<FitResult> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Data("training and validation sets must be non-empty".into()));
    }
    let classes = net.num_classes();
    if train.num_classes() != classes || val.num_classes() != classes {
        return Err(Error::Data(format!(
            "classifier has {classes} outputs, dataset has {} classes",
            train.num_classes()
        )));
    }
    net.set_dropout_rate(cfg.dropout)?;

    let initial = evaluate(net, val, cfg.batch_size)?;
    let mut result = FitResult {
        best_params: net.params().to_vec(),
        best_val_accuracy: initial.accuracy,
        best_epoch: -1,
        history: Vec::new(),
    };
    let root = Rng::new(cfg.seed);
    let mut best_val_loss = f64::INFINITY;
    let mut drops = 0i32;
    let mut plateau = 0usize;
    let mut stall = 0usize;

    for epoch in 0..cfg.max_epochs {
        let lr = cfg.lr_initial / cfg.lr_drop_factor.powi(drops);
        let mut order: Vec<usize> = (0..train.len()).collect();
        root.derive(&[0, epoch as u64]).shuffle(&mut order);

        net.set_mode(Mode::Train);
        let mut train_loss = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let aug = augment.map(|a| (a, root.derive(&[1, epoch as u64])));
            let (x, labels) = train.batch(chunk, aug.as_ref().map(|(a, r)| (*a, r)))?;
            let mut dropout_rng = root.derive(&[2, epoch as u64, b as u64]);
            let (logits, tape) = net.forward_train(&x, Some(&mut dropout_rng))?;
            let (loss, dlogits) = cross_entropy_loss(&logits, &labels)?;
            if !loss.is_finite() {
                net.set_mode(Mode::Eval);
                return Err(Error::Divergence { iteration: None, epoch });
            }
            train_loss += loss * chunk.len() as f64;
            let grads = net.backward(&tape, &dlogits)?;
            sgd_step(net, &grads, lr, cfg.weight_decay)?;
        }
        net.set_mode(Mode::Eval);
        train_loss /= train.len() as f64;

        let eval = evaluate(net, val, cfg.batch_size)?;
        if !eval.loss.is_finite() || !train_loss.is_finite() {
            return Err(Error::Divergence { iteration: None, epoch });
        }
        result.history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss: eval.loss,
            val_accuracy: eval.accuracy,
            lr,
        });
        if result.best_epoch < 0 || eval.accuracy > result.best_val_accuracy {
            result.best_val_accuracy = eval.accuracy;
            result.best_epoch = epoch as i64;
            result.best_params = net.params().to_vec();
        }

        if eval.loss < best_val_loss {
            best_val_loss = eval.loss;
            plateau = 0;
            stall = 0;
        } else {
            plateau += 1;
            stall += 1;
            if stall >= cfg.early_stop_patience {
                break;
            }
            if plateau >= cfg.lr_plateau_patience {
                drops += 1;
                plateau = 0;
            }
        }
    }
    Ok(result)
}

/// Splits off `fraction` of every class (rounded to nearest, at least one
/// sample when the class has two or more) as a validation set.
pub fn stratified_split(data: &Dataset, fraction: f64, rng: &mut Rng) -> Result<(Dataset, Dataset)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::InvalidArgument(format!("split fraction {fraction} outside [0,1)")));
    }
    let mut train_idx = Vec::new();
    let mut val_idx = Vec::new();
    for class in 0..data.num_classes() {
        let mut members: Vec<usize> = (0..data.len()).filter(|&i| data.label(i) == class).collect();
        rng.shuffle(&mut members);
        let mut take = (members.len() as f64 * fraction).round() as usize;
        if fraction > 0.0 && take == 0 && members.len() >= 2 {
            take = 1;
        }
        val_idx.extend_from_slice(&members[..take]);
        train_idx.extend_from_slice(&members[take..]);
    }
    train_idx.sort_unstable();
    val_idx.sort_unstable();
    Ok((data.subset(&train_idx), data.subset(&val_idx)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::LayerSpec;

    #[test]
    fn uniform_logits_give_ln2() {
        let logits = Tensor::from_vec(&[1, 2], vec![0.0f64, 0.0]).unwrap();
        let (loss, _) = cross_entropy_loss(&logits, &[0]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn saturated_logits_are_stable() {
        let logits = Tensor::from_vec(&[1, 2], vec![1000.0f32, 0.0]).unwrap();
        let (loss, grad) = cross_entropy_loss(&logits, &[0]).unwrap();
        assert!(loss.abs() < 1e-6);
        assert!(grad.all_finite());
    }

    #[test]
    fn label_out_of_range() {
        let logits = Tensor::from_vec(&[1, 2], vec![0.0f32, 0.0]).unwrap();
        assert!(matches!(
            cross_entropy_loss(&logits, &[2]),
            Err(Error::InvalidLabel { label: 2, classes: 2 })
        ));
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let mut rng = Rng::new(3);
        let logits = Tensor::<f64>::rand_normal(&[4, 3], 0.0, 2.0, &mut rng).unwrap();
        let labels = [0, 2, 1, 2];
        let (_, grad) = cross_entropy_loss(&logits, &labels).unwrap();
        let eps = 1e-4;
        for i in 0..logits.len() {
            let mut plus = logits.clone();
            plus.data_mut()[i] += eps;
            let mut minus = logits.clone();
            minus.data_mut()[i] -= eps;
            let fd = (cross_entropy_loss(&plus, &labels).unwrap().0 - cross_entropy_loss(&minus, &labels).unwrap().0)
                / (2.0 * eps);
            let an = grad.data()[i];
            assert!((fd - an).abs() <= 1e-6 * fd.abs().max(an.abs()).max(1e-3), "{fd} vs {an}");
        }
    }

    fn scalar_net(w: f32, b: f32) -> Network {
        let specs = vec![LayerSpec::dense("d", 1, 1)];
        Network::from_params(
            specs,
            &[1],
            vec![Some(Param {
                weight: Tensor::from_vec(&[1, 1], vec![w]).unwrap(),
                bias: Tensor::from_vec(&[1], vec![b]).unwrap(),
            })],
        )
        .unwrap()
    }

    fn scalar_grads(gw: f32, gb: f32) -> Gradients {
        Gradients {
            layers: vec![Some(Param {
                weight: Tensor::from_vec(&[1, 1], vec![gw]).unwrap(),
                bias: Tensor::from_vec(&[1], vec![gb]).unwrap(),
            })],
        }
    }

    #[test]
    fn sgd_examples() {
        let mut net = scalar_net(1.0, 1.0);
        sgd_step(&mut net, &scalar_grads(0.0, 0.0), 0.1, 0.5).unwrap();
        assert!((net.param(0).unwrap().weight.data()[0] - 0.95).abs() < 1e-7);
        // biases are not decayed
        assert_eq!(net.param(0).unwrap().bias.data()[0], 1.0);

        let mut net = scalar_net(2.0, 0.0);
        sgd_step(&mut net, &scalar_grads(1.0, 0.0), 0.1, 0.0).unwrap();
        assert!((net.param(0).unwrap().weight.data()[0] - 1.9).abs() < 1e-7);

        let mut net = scalar_net(2.0, 3.0);
        let before = net.clone();
        sgd_step(&mut net, &scalar_grads(5.0, 5.0), 0.0, 0.5).unwrap();
        assert_eq!(net, before);
    }

    #[test]
    fn sgd_rejects_mismatched_gradients() {
        let mut net = scalar_net(1.0, 0.0);
        let bad = Gradients {
            layers: vec![Some(Param {
                weight: Tensor::from_vec(&[1, 2], vec![0.0, 0.0]).unwrap(),
                bias: Tensor::from_vec(&[1], vec![0.0]).unwrap(),
            })],
        };
        assert!(matches!(sgd_step(&mut net, &bad, 0.1, 0.0), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn config_rejects_unknown_keys() {
        assert!(TrainConfig::from_json(r#"{"batch_size": 8}"#).is_ok());
        assert!(matches!(
            TrainConfig::from_json(r#"{"batch_size": 8, "momentum": 0.9}"#),
            Err(Error::Config(_))
        ));
        assert!(TrainConfig::from_json(r#"{"lr_drop_factor": 1.0}"#).is_err());
        let json = serde_json::to_string(&TrainConfig::default()).unwrap();
        assert_eq!(
            json,
            r#"{"batch_size":32,"lr_initial":0.0001,"lr_drop_factor":10.0,"lr_plateau_patience":3,"early_stop_patience":6,"max_epochs":30,"weight_decay":0.0005,"dropout":0.5,"seed":0}"#
        );
    }
}
