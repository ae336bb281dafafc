use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::SplitFractions;
use super::features::{Augmentation, FeatureSet};
use crate::error::{Error, Result};
use crate::tensor::{cross_entropy, fully_connected, head_gradients, softmax, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub validation_fraction: f64,
    pub test_fraction: f64,
    pub augmentation: Augmentation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            epochs: 40,
            batch_size: 32,
            seed: 0,
            validation_fraction: 0.10,
            test_fraction: 0.10,
            augmentation: Augmentation::None,
        }
    }
}

impl TrainConfig {
    /// A learning rate of zero is accepted and leaves the head untouched.
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be a finite non-negative number, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        self.fractions().map(|_| ())
    }

    pub fn fractions(&self) -> Result<SplitFractions> {
        SplitFractions::new(self.validation_fraction, self.test_fraction)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    /// `None` when the validation split is empty.
    pub validation_accuracy: Option<f64>,
}

/// Final-layer classifier trained on bottleneck features.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedHead {
    /// `[d, k]`
    pub weights: Tensor,
    /// `[k]`
    pub bias: Tensor,
    pub history: Vec<EpochStats>,
}

impl TrainedHead {
    pub fn num_classes(&self) -> usize {
        self.bias.len()
    }

    pub fn probabilities(&self, features: &Tensor) -> Result<Tensor> {
        softmax(&fully_connected(features, &self.weights, &self.bias)?)
    }

    pub fn predict(&self, features: &Tensor) -> Result<Vec<usize>> {
        self.probabilities(features)?.argmax_rows()
    }

    pub fn predict_set(&self, set: &FeatureSet) -> Result<Vec<usize>> {
        self.predict(&set.tensor()?)
    }
}

fn loss_and_accuracy(features: &Tensor, labels: &[usize], w: &Tensor, b: &Tensor) -> Result<(f64, f64)> {
    let probs = softmax(&fully_connected(features, w, b)?)?;
    let loss = cross_entropy(&probs, labels)?;
    let correct = probs.argmax_rows()?.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok((loss, correct as f64 / labels.len() as f64))
}

/// Mini-batch SGD on softmax cross-entropy from a zero-initialized head.
///
/// Each epoch visits the training rows in a fresh seeded permutation. After
/// every epoch the full-pass training loss and accuracy and the validation
/// accuracy are recorded. Final weights are rounded to f32 so the exported
/// bundle holds exactly the weights used for in-memory prediction.
pub fn train_head(
    train: &FeatureSet,
    validation: Option<&FeatureSet>,
    num_classes: usize,
    config: &TrainConfig,
) -> Result<TrainedHead> {
    config.validate()?;
    if num_classes < 2 {
        return Err(Error::Config(format!("need at least 2 classes, got {num_classes}")));
    }
    if let Some(&bad) = train.labels.iter().find(|&&l| l >= num_classes) {
        return Err(Error::invalid(format!("label {bad} out of range for {num_classes} classes")));
    }
    let mut present = vec![false; num_classes];
    train.labels.iter().for_each(|&l| present[l] = true);
    if let Some(missing) = present.iter().position(|p| !p) {
        return Err(Error::Dataset(format!("class {missing} has no training examples")));
    }

    let d = train.width;
    let features = train.tensor()?;
    let val = match validation {
        Some(v) if !v.is_empty() => Some((v.tensor()?, v.labels.as_slice())),
        _ => None,
    };
    let mut w = Tensor::zeros(&[d, num_classes]);
    let mut b = Tensor::zeros(&[num_classes]);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let lr = config.learning_rate;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let x = features.gather_batch(batch)?;
            let y: Vec<usize> = batch.iter().map(|&i| train.labels[i]).collect();
            let g = head_gradients(&x, &w, &b, &y)?;
            w = Tensor::new(
                w.shape().to_vec(),
                w.data().iter().zip(g.weights.data()).map(|(p, d)| p - lr * d).collect(),
            )?;
            b = Tensor::new(
                b.shape().to_vec(),
                b.data().iter().zip(g.bias.data()).map(|(p, d)| p - lr * d).collect(),
            )?;
        }
        let (train_loss, train_accuracy) = loss_and_accuracy(&features, &train.labels, &w, &b)?;
        let validation_accuracy = match &val {
            Some((x, y)) => Some(loss_and_accuracy(x, y, &w, &b)?.1),
            None => None,
        };
        log::debug!("epoch {epoch}: loss {train_loss:.5} train acc {train_accuracy:.4} val acc {validation_accuracy:?}");
        history.push(EpochStats {
            epoch,
            train_loss,
            train_accuracy,
            validation_accuracy,
        });
    }
    Ok(TrainedHead {
        weights: w.round_to_f32(),
        bias: b.round_to_f32(),
        history,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Evaluation {
    pub accuracy: f64,
    /// Rows are true classes, columns predicted classes.
    pub confusion: Vec<Vec<usize>>,
}

impl Evaluation {
    pub fn total(&self) -> usize {
        self.confusion.iter().flatten().sum()
    }
}

/// Accuracy and confusion matrix of predictions against true labels.
pub fn evaluate(predicted: &[usize], truth: &[usize], num_classes: usize) -> Result<Evaluation> {
    if truth.is_empty() {
        return Err(Error::Dataset("cannot evaluate an empty split".into()));
    }
    if predicted.len() != truth.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} labels",
            predicted.len(),
            truth.len()
        )));
    }
    let mut confusion = vec![vec![0; num_classes]; num_classes];
    for (&p, &t) in predicted.iter().zip(truth) {
        if p >= num_classes || t >= num_classes {
            return Err(Error::invalid(format!("class index out of range for {num_classes} classes")));
        }
        confusion[t][p] += 1;
    }
    let correct: usize = (0..num_classes).map(|i| confusion[i][i]).sum();
    Ok(Evaluation {
        accuracy: correct as f64 / truth.len() as f64,
        confusion,
    })
}

/// Runs a head over a feature set and evaluates it.
pub fn evaluate_head(head: &TrainedHead, set: &FeatureSet) -> Result<Evaluation> {
    if set.is_empty() {
        return Err(Error::Dataset("cannot evaluate an empty split".into()));
    }
    evaluate(&head.predict_set(set)?, &set.labels, head.num_classes())
}
