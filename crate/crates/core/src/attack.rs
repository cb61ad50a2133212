//! A small differentiable target model and gradient-sign attacks on it.
//!
//! The classifier is multinomial logistic regression over flattened
//! normalized pixels. Its input gradient is exact, which makes FGSM and BIM
//! reproducible without an autodiff framework.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eigen::dot;
use crate::error::{Result, SaakError};
use crate::io::{open_file, read_exact_array, write_atomic};
use crate::tensor::ImageTensor;

pub const CLASSIFIER_MAGIC: &[u8; 4] = b"SCLF";
pub const CLASSIFIER_VERSION: u32 = 1;

/// Conventional L∞ budget: 8/255.
pub const DEFAULT_EPSILON: f64 = 8.0 / 255.0;
/// Conventional BIM step: 2/255.
pub const DEFAULT_BIM_STEP: f64 = 2.0 / 255.0;
pub const DEFAULT_BIM_STEPS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxClassifier {
    shape: (usize, usize, usize),
    num_classes: usize,
    /// `num_classes × input_dim`, row-major.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

impl SoftmaxClassifier {
    pub fn new(shape: (usize, usize, usize), num_classes: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        let dim = shape.0 * shape.1 * shape.2;
        if num_classes < 2 || dim == 0 {
            return Err(SaakError::InvalidArgument(format!(
                "classifier needs >= 2 classes and a non-empty input, got {num_classes} classes over {shape:?}"
            )));
        }
        if weights.len() != num_classes * dim || bias.len() != num_classes {
            return Err(SaakError::LengthMismatch {
                expected: num_classes * dim + num_classes,
                actual: weights.len() + bias.len(),
            });
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(SaakError::InvalidArgument("classifier has non-finite parameters".into()));
        }
        Ok(Self {
            shape,
            num_classes,
            weights,
            bias,
        })
    }

    pub fn zeros(shape: (usize, usize, usize), num_classes: usize) -> Result<Self> {
        let dim = shape.0 * shape.1 * shape.2;
        Self::new(shape, num_classes, vec![0.0; num_classes * dim], vec![0.0; num_classes])
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        self.shape
    }

    pub fn input_dim(&self) -> usize {
        self.shape.0 * self.shape.1 * self.shape.2
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    fn row(&self, class: usize) -> &[f64] {
        let d = self.input_dim();
        &self.weights[class * d..(class + 1) * d]
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(SaakError::ShapeMismatch(format!(
                "input of {} values, classifier expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    fn check_label(&self, y: usize) -> Result<()> {
        if y >= self.num_classes {
            return Err(SaakError::LabelOutOfRange {
                label: y,
                classes: self.num_classes,
            });
        }
        Ok(())
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok((0..self.num_classes).map(|c| dot(self.row(c), x) + self.bias[c]).collect())
    }

    pub fn probabilities(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(x)?))
    }

    /// Arg-max class; ties go to the lowest index.
    pub fn predict(&self, img: &ImageTensor) -> Result<usize> {
        let logits = self.logits(img.data())?;
        let mut best = 0;
        for (c, l) in logits.iter().enumerate().skip(1) {
            if *l > logits[best] {
                best = c;
            }
        }
        Ok(best)
    }

    /// Cross-entropy `−log p_y(x)`.
    pub fn loss(&self, x: &[f64], y: usize) -> Result<f64> {
        self.check_label(y)?;
        let logits = self.logits(x)?;
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        Ok(lse - logits[y])
    }

    /// `∇ₓ L = Wᵀ (softmax(Wx + b) − onehot(y))`.
    pub fn loss_gradient_wrt_input(&self, img: &ImageTensor, y: usize) -> Result<Vec<f64>> {
        self.check_label(y)?;
        let mut p = self.probabilities(img.data())?;
        p[y] -= 1.0;
        let mut g = vec![0.0; self.input_dim()];
        for (c, pc) in p.iter().enumerate() {
            for (gi, wi) in g.iter_mut().zip(self.row(c)) {
                *gi += pc * wi;
            }
        }
        Ok(g)
    }

    /// Mean loss and its gradients with respect to weights and bias over a
    /// set of samples.
    pub fn batch_loss_and_gradients(&self, xs: &[&[f64]], ys: &[usize]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
        if xs.is_empty() || xs.len() != ys.len() {
            return Err(SaakError::ShapeMismatch(format!("{} inputs with {} labels", xs.len(), ys.len())));
        }
        let d = self.input_dim();
        let mut gw = vec![0.0; self.weights.len()];
        let mut gb = vec![0.0; self.num_classes];
        let mut loss = 0.0;
        for (x, &y) in xs.iter().zip(ys) {
            self.check_label(y)?;
            let logits = self.logits(x)?;
            let mut p = softmax(&logits);
            loss += -p[y].max(f64::MIN_POSITIVE).ln();
            p[y] -= 1.0;
            for (c, pc) in p.iter().enumerate() {
                gb[c] += pc;
                for (g, xi) in gw[c * d..(c + 1) * d].iter_mut().zip(x.iter()) {
                    *g += pc * xi;
                }
            }
        }
        let n = xs.len() as f64;
        gw.iter_mut().for_each(|g| *g /= n);
        gb.iter_mut().for_each(|g| *g /= n);
        Ok((loss / n, gw, gb))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(28 + 8 * (self.weights.len() + self.bias.len()));
        out.extend_from_slice(CLASSIFIER_MAGIC);
        out.extend_from_slice(&CLASSIFIER_VERSION.to_le_bytes());
        for v in [self.shape.0, self.shape.1, self.shape.2, self.num_classes] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for v in self.weights.iter().chain(&self.bias) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_reader<R: Read>(mut r: R) -> Result<Self> {
        let mut word = [0u8; 4];
        read_exact_array(&mut r, &mut word, "classifier magic")?;
        if &word != CLASSIFIER_MAGIC {
            return Err(SaakError::Format(format!("bad classifier magic {word:?}")));
        }
        let mut header = [0u32; 5];
        for h in header.iter_mut() {
            read_exact_array(&mut r, &mut word, "classifier header")?;
            *h = u32::from_le_bytes(word);
        }
        if header[0] != CLASSIFIER_VERSION {
            return Err(SaakError::Format(format!("unsupported classifier version {}", header[0])));
        }
        let shape = (header[1] as usize, header[2] as usize, header[3] as usize);
        let classes = header[4] as usize;
        let dim = shape.0 * shape.1 * shape.2;
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if rest.len() != 8 * (classes * dim + classes) {
            return Err(SaakError::Format(format!(
                "classifier payload has {} bytes, expected {}",
                rest.len(),
                8 * (classes * dim + classes)
            )));
        }
        let mut values: Vec<f64> = rest
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let bias = values.split_off(classes * dim);
        Self::new(shape, classes, values, bias)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes();
        write_atomic(path, |w| w.write_all(&bytes))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_reader(open_file(path)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            learning_rate: 0.05,
            batch_size: 32,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrainReport {
    pub final_loss: f64,
    pub train_accuracy: f64,
}

/// Fits multinomial logistic regression by mini-batch gradient descent on
/// cross-entropy. Weights start at zero; the seed drives the per-epoch
/// shuffles, so a fixed seed gives an identical classifier.
pub fn train_classifier(
    images: &[ImageTensor],
    labels: &[usize],
    config: &TrainConfig,
) -> Result<(SoftmaxClassifier, TrainReport)> {
    let first = images.first().ok_or(SaakError::Empty("no training images"))?;
    if images.len() != labels.len() {
        return Err(SaakError::LengthMismatch {
            expected: images.len(),
            actual: labels.len(),
        });
    }
    if config.batch_size == 0 || config.epochs == 0 || !(config.learning_rate.is_finite() && config.learning_rate > 0.0) {
        return Err(SaakError::InvalidArgument(
            "epochs, batch size and learning rate must be positive".into(),
        ));
    }
    let shape = first.shape();
    if images.iter().any(|i| i.shape() != shape) {
        return Err(SaakError::ShapeMismatch("training images differ in shape".into()));
    }
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    if num_classes < 2 {
        return Err(SaakError::InvalidArgument("training labels contain a single class".into()));
    }
    for c in 0..num_classes {
        if !labels.contains(&c) {
            return Err(SaakError::InvalidArgument(format!("class {c} has no training samples")));
        }
    }

    let mut clf = SoftmaxClassifier::zeros(shape, num_classes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut epoch_loss = 0.0;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let xs: Vec<&[f64]> = batch.iter().map(|&i| images[i].data()).collect();
            let ys: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let (loss, gw, gb) = clf.batch_loss_and_gradients(&xs, &ys)?;
            if !loss.is_finite() {
                return Err(SaakError::NonFiniteLoss(epoch));
            }
            epoch_loss += loss * batch.len() as f64;
            for (w, g) in clf.weights.iter_mut().zip(&gw) {
                *w -= config.learning_rate * g;
            }
            for (b, g) in clf.bias.iter_mut().zip(&gb) {
                *b -= config.learning_rate * g;
            }
        }
        epoch_loss /= images.len() as f64;
        log::debug!("epoch {epoch}: loss {epoch_loss:.5}");
    }
    if clf.weights.iter().any(|w| !w.is_finite()) {
        return Err(SaakError::NonFiniteLoss(config.epochs));
    }
    let train_accuracy = evaluate_accuracy(&clf, images, labels, None)?;
    Ok((
        clf,
        TrainReport {
            final_loss: epoch_loss,
            train_accuracy,
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    Fgsm,
    Bim,
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttackKind::Fgsm => "fgsm",
            AttackKind::Bim => "bim",
        })
    }
}

impl FromStr for AttackKind {
    type Err = SaakError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fgsm" => Ok(AttackKind::Fgsm),
            "bim" => Ok(AttackKind::Bim),
            other => Err(SaakError::InvalidArgument(format!("unknown attack {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub kind: AttackKind,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// BIM only.
    #[serde(default = "default_step")]
    pub step_size: f64,
    /// BIM only.
    #[serde(default = "default_steps")]
    pub steps: usize,
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

fn default_step() -> f64 {
    DEFAULT_BIM_STEP
}

fn default_steps() -> usize {
    DEFAULT_BIM_STEPS
}

impl AttackSpec {
    pub fn fgsm(epsilon: f64) -> Self {
        Self {
            kind: AttackKind::Fgsm,
            epsilon,
            step_size: epsilon,
            steps: 1,
        }
    }

    pub fn bim(epsilon: f64, step_size: f64, steps: usize) -> Self {
        Self {
            kind: AttackKind::Bim,
            epsilon,
            step_size,
            steps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(SaakError::InvalidArgument(format!("epsilon {} must be >= 0", self.epsilon)));
        }
        if self.kind == AttackKind::Bim {
            if self.steps == 0 || !(self.step_size.is_finite() && self.step_size > 0.0) {
                return Err(SaakError::InvalidArgument("BIM needs steps >= 1 and a positive step".into()));
            }
            if self.step_size > self.epsilon {
                return Err(SaakError::InvalidArgument(format!(
                    "BIM step {} exceeds epsilon {}",
                    self.step_size, self.epsilon
                )));
            }
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        match self.kind {
            AttackKind::Fgsm => format!("fgsm(eps={:.6})", self.epsilon),
            AttackKind::Bim => format!(
                "bim(eps={:.6},step={:.6},steps={})",
                self.epsilon, self.step_size, self.steps
            ),
        }
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Clamps `v` into the ε-ball around `orig` and into `[0, 1]`, so that
/// `|v − orig| ≤ ε` holds exactly in floating point, not only up to the
/// rounding of `orig ± ε`.
fn project(v: f64, orig: f64, epsilon: f64) -> f64 {
    let mut v = v.clamp(orig - epsilon, orig + epsilon).clamp(0.0, 1.0);
    while (v - orig).abs() > epsilon {
        v = if v > orig { v.next_down() } else { v.next_up() };
    }
    v
}

/// `clamp₀₁(x + ε·sign(∇ₓL(x, y)))`.
pub fn fgsm(f: &SoftmaxClassifier, x: &ImageTensor, y: usize, epsilon: f64) -> Result<ImageTensor> {
    let g = f.loss_gradient_wrt_input(x, y)?;
    let data = x
        .data()
        .iter()
        .zip(&g)
        .map(|(v, gi)| project(v + epsilon * sign(*gi), *v, epsilon))
        .collect();
    ImageTensor::new(x.height(), x.width(), x.channels(), data)
}

/// Iterated gradient-sign steps, each projected onto the ε-ball around `x`
/// and the unit box.
pub fn bim(f: &SoftmaxClassifier, x: &ImageTensor, y: usize, spec: &AttackSpec) -> Result<ImageTensor> {
    if spec.kind != AttackKind::Bim {
        return Err(SaakError::InvalidArgument("bim called with a non-BIM spec".into()));
    }
    spec.validate()?;
    let mut current = x.clone();
    for _ in 0..spec.steps {
        let g = f.loss_gradient_wrt_input(&current, y)?;
        let data = current
            .data()
            .iter()
            .zip(x.data())
            .zip(&g)
            .map(|((v, orig), gi)| {
                project(v + spec.step_size * sign(*gi), *orig, spec.epsilon)
            })
            .collect();
        current = ImageTensor::new(x.height(), x.width(), x.channels(), data)?;
    }
    Ok(current)
}

pub fn attack(f: &SoftmaxClassifier, x: &ImageTensor, y: usize, spec: &AttackSpec) -> Result<ImageTensor> {
    spec.validate()?;
    match spec.kind {
        AttackKind::Fgsm => fgsm(f, x, y, spec.epsilon),
        AttackKind::Bim => bim(f, x, y, spec),
    }
}

/// Attacks every image, parallel over images.
pub fn attack_batch(
    f: &SoftmaxClassifier,
    images: &[ImageTensor],
    labels: &[usize],
    spec: &AttackSpec,
) -> Result<Vec<ImageTensor>> {
    if images.len() != labels.len() {
        return Err(SaakError::LengthMismatch {
            expected: images.len(),
            actual: labels.len(),
        });
    }
    images
        .par_iter()
        .zip(labels.par_iter())
        .map(|(x, &y)| attack(f, x, y, spec))
        .collect()
}

/// Image-to-image preprocessing applied before classification.
pub type Preprocess<'a> = &'a (dyn Fn(&ImageTensor) -> Result<ImageTensor> + Sync);

/// Fraction of images classified correctly, after `preprocess` if given.
pub fn evaluate_accuracy(
    f: &SoftmaxClassifier,
    images: &[ImageTensor],
    labels: &[usize],
    preprocess: Option<Preprocess<'_>>,
) -> Result<f64> {
    if images.is_empty() {
        return Err(SaakError::Empty("no images to evaluate"));
    }
    if images.len() != labels.len() {
        return Err(SaakError::LengthMismatch {
            expected: images.len(),
            actual: labels.len(),
        });
    }
    let correct: usize = images
        .par_iter()
        .zip(labels.par_iter())
        .map(|(img, &y)| -> Result<usize> {
            let pred = match preprocess {
                Some(p) => f.predict(&p(img)?)?,
                None => f.predict(img)?,
            };
            Ok(usize::from(pred == y))
        })
        .sum::<Result<usize>>()?;
    Ok(correct as f64 / images.len() as f64)
}

/// Indices of the first `m` samples that `f` classifies correctly.
pub fn seed_set(f: &SoftmaxClassifier, images: &[ImageTensor], labels: &[usize], m: usize) -> Result<Vec<usize>> {
    let mut picked = Vec::with_capacity(m);
    for (i, (img, &y)) in images.iter().zip(labels).enumerate() {
        if picked.len() == m {
            break;
        }
        if f.predict(img)? == y {
            picked.push(i);
        }
    }
    Ok(picked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn img(values: &[f64]) -> ImageTensor {
        ImageTensor::new(1, values.len(), 1, values.to_vec()).unwrap()
    }

    fn random_classifier(dim: usize, classes: usize, rng: &mut ChaCha8Rng) -> SoftmaxClassifier {
        SoftmaxClassifier::new(
            (1, dim, 1),
            classes,
            (0..dim * classes).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            (0..classes).map(|_| rng.gen_range(-0.5..0.5)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn hand_computed_gradient() {
        let f = SoftmaxClassifier::new((1, 2, 1), 2, vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 0.0]).unwrap();
        let g = f.loss_gradient_wrt_input(&img(&[0.0, 0.0]), 0).unwrap();
        assert!((g[0] + 0.5).abs() < 1e-15 && g[1].abs() < 1e-15);
        // central differences agree
        let h = 1e-5;
        let fd = (f.loss(&[h, 0.0], 0).unwrap() - f.loss(&[-h, 0.0], 0).unwrap()) / (2.0 * h);
        assert!((fd + 0.5).abs() < 1e-9);
    }

    #[test]
    fn saturated_softmax_has_vanishing_gradient() {
        let f = SoftmaxClassifier::new((1, 1, 1), 2, vec![200.0, -200.0], vec![0.0, 0.0]).unwrap();
        let g = f.loss_gradient_wrt_input(&img(&[1.0]), 0).unwrap();
        assert!(g[0].abs() < 1e-12);
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for trial in 0..5 {
            let f = random_classifier(12, 3, &mut rng);
            let x: Vec<f64> = (0..12).map(|_| rng.gen_range(0.0..1.0)).collect();
            let y = trial % 3;
            let g = f.loss_gradient_wrt_input(&img(&x), y).unwrap();
            let h = 1e-5;
            for i in 0..12 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += h;
                xm[i] -= h;
                let fd = (f.loss(&xp, y).unwrap() - f.loss(&xm, y).unwrap()) / (2.0 * h);
                assert!((fd - g[i]).abs() < 1e-6, "coordinate {i}: {fd} vs {}", g[i]);
            }
        }
    }

    #[test]
    fn parameter_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = random_classifier(6, 3, &mut rng);
        let xs: Vec<Vec<f64>> = (0..5).map(|_| (0..6).map(|_| rng.gen_range(0.0..1.0)).collect()).collect();
        let refs: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
        let ys = vec![0, 1, 2, 1, 0];
        let (_, gw, gb) = f.batch_loss_and_gradients(&refs, &ys).unwrap();
        let loss_at = |f: &SoftmaxClassifier| f.batch_loss_and_gradients(&refs, &ys).unwrap().0;
        let h = 1e-5;
        for _ in 0..10 {
            let idx = rng.gen_range(0..f.weights().len() + f.bias().len());
            let mut plus = f.clone();
            let mut minus = f.clone();
            let analytic = if idx < gw.len() {
                plus.weights_mut()[idx] += h;
                minus.weights_mut()[idx] -= h;
                gw[idx]
            } else {
                plus.bias_mut()[idx - gw.len()] += h;
                minus.bias_mut()[idx - gw.len()] -= h;
                gb[idx - gw.len()]
            };
            let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
            assert!((fd - analytic).abs() <= 1e-5 * analytic.abs().max(1e-3), "{fd} vs {analytic}");
        }
    }

    #[test]
    fn separable_toy_set_is_learned() {
        let points = [(0.1, 0.2, 0), (0.2, 0.1, 0), (0.15, 0.3, 0), (0.8, 0.9, 1), (0.9, 0.7, 1), (0.7, 0.85, 1)];
        let images: Vec<ImageTensor> = points.iter().map(|(a, b, _)| img(&[*a, *b])).collect();
        let labels: Vec<usize> = points.iter().map(|p| p.2).collect();
        let cfg = TrainConfig {
            epochs: 300,
            learning_rate: 0.5,
            batch_size: 2,
            seed: 1,
        };
        let (clf, report) = train_classifier(&images, &labels, &cfg).unwrap();
        assert_eq!(report.train_accuracy, 1.0);
        let (again, _) = train_classifier(&images, &labels, &cfg).unwrap();
        assert_eq!(clf, again);
    }

    #[test]
    fn single_class_and_empty_rejected() {
        let images = vec![img(&[0.0]), img(&[1.0])];
        assert!(train_classifier(&images, &[0, 0], &TrainConfig::default()).is_err());
        assert!(train_classifier(&[], &[], &TrainConfig::default()).is_err());
        assert!(train_classifier(&images, &[0, 2], &TrainConfig::default()).is_err());
    }

    #[test]
    fn label_out_of_range() {
        let f = SoftmaxClassifier::zeros((1, 2, 1), 2).unwrap();
        assert!(matches!(
            f.loss_gradient_wrt_input(&img(&[0.0, 0.0]), 2),
            Err(SaakError::LabelOutOfRange { label: 2, classes: 2 })
        ));
    }

    #[test]
    fn predict_ties_go_to_lowest_index() {
        let f = SoftmaxClassifier::zeros((1, 2, 1), 3).unwrap();
        assert_eq!(f.predict(&img(&[0.3, 0.4])).unwrap(), 0);
    }

    #[test]
    fn zero_epsilon_is_identity_and_budget_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = random_classifier(20, 2, &mut rng);
        let x = img(&(0..20).map(|_| rng.gen_range(0.0..1.0)).collect::<Vec<_>>());
        assert_eq!(fgsm(&f, &x, 1, 0.0).unwrap(), x);
        for eps in [0.01, 8.0 / 255.0, 0.3] {
            let adv = fgsm(&f, &x, 0, eps).unwrap();
            assert!(adv.max_abs_diff(&x) <= eps);
            assert!(adv.data().iter().all(|v| (0.0..=1.0).contains(v)));
            let spec = AttackSpec::bim(eps, eps / 4.0, 7);
            let adv = bim(&f, &x, 0, &spec).unwrap();
            assert!(adv.max_abs_diff(&x) <= eps);
            assert!(adv.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn projection_is_exact_in_floating_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..10_000 {
            let orig: f64 = rng.gen_range(0.0..1.0);
            let eps = rng.gen_range(0.0..0.1);
            for v in [orig + eps, orig - eps, orig + 2.0 * eps, -1.0, 2.0] {
                let p = project(v, orig, eps);
                assert!((p - orig).abs() <= eps && (0.0..=1.0).contains(&p));
            }
        }
    }

    #[test]
    fn single_full_step_bim_equals_fgsm() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let f = random_classifier(15, 3, &mut rng);
        let x = img(&(0..15).map(|_| rng.gen_range(0.0..1.0)).collect::<Vec<_>>());
        let eps = 0.05;
        assert_eq!(bim(&f, &x, 2, &AttackSpec::bim(eps, eps, 1)).unwrap(), fgsm(&f, &x, 2, eps).unwrap());
    }

    #[test]
    fn attack_spec_validation() {
        assert!(AttackSpec::bim(0.01, 0.02, 3).validate().is_err());
        assert!(AttackSpec::bim(0.01, 0.01, 0).validate().is_err());
        assert!(AttackSpec::fgsm(-1.0).validate().is_err());
        assert!(AttackSpec::fgsm(0.03).validate().is_ok());
        assert_eq!("BIM".parse::<AttackKind>().unwrap(), AttackKind::Bim);
    }

    #[test]
    fn accuracy_and_seed_set() {
        let f = SoftmaxClassifier::new((1, 1, 1), 2, vec![1.0, -1.0], vec![0.0, 0.0]).unwrap();
        let images: Vec<ImageTensor> = [0.5, -0.5, 0.2, -0.1, 0.9].iter().map(|v| img(&[*v])).collect();
        let labels = vec![0, 0, 0, 1, 1];
        let seeds = seed_set(&f, &images, &labels, 3).unwrap();
        assert_eq!(seeds, vec![0, 2, 3]);
        let picked: Vec<ImageTensor> = seeds.iter().map(|&i| images[i].clone()).collect();
        let picked_labels: Vec<usize> = seeds.iter().map(|&i| labels[i]).collect();
        assert_eq!(evaluate_accuracy(&f, &picked, &picked_labels, None).unwrap(), 1.0);
        let wrong: Vec<usize> = picked_labels.iter().map(|l| 1 - l).collect();
        assert_eq!(evaluate_accuracy(&f, &picked, &wrong, None).unwrap(), 0.0);
        let negate = |x: &ImageTensor| -> Result<ImageTensor> { Ok(img(&[-x.data()[0]])) };
        assert_eq!(evaluate_accuracy(&f, &picked, &picked_labels, Some(&negate)).unwrap(), 0.0);
        assert!(evaluate_accuracy(&f, &[], &[], None).is_err());
    }

    #[test]
    fn classifier_bytes_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let f = random_classifier(9, 4, &mut rng);
        let bytes = f.to_bytes();
        assert_eq!(SoftmaxClassifier::from_reader(&bytes[..]).unwrap(), f);
        assert!(SoftmaxClassifier::from_reader(&bytes[..bytes.len() - 1]).is_err());
    }
}
