//! Gradient sources for experiments: a scripted synthetic generator with
//! programmable norm profiles, and a small softmax-regression trainer on
//! Gaussian-blob data for end-to-end convergence checks.

use thiserror::Error;

use crate::clr::l2_norm_flat;
use crate::rng::{mix3, CounterRng};

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("step {0} not covered by the norm profile")]
    StepNotCovered(u64),
    #[error("norm profile ranges must be disjoint and non-empty")]
    BadProfile,
}

/// Piecewise-constant target for the global gradient L2 norm: each entry
/// takes effect at its step and holds until the next breakpoint.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct NormProfile {
    /// (first step, target norm) breakpoints, ascending; must start at 0.
    pub breakpoints: Vec<(u64, f64)>,
}

impl NormProfile {
    pub fn constant(norm: f64) -> Self {
        Self {
            breakpoints: vec![(0, norm)],
        }
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        match self.breakpoints.first() {
            Some(&(0, _)) => {}
            _ => return Err(WorkloadError::BadProfile),
        }
        let ascending = self.breakpoints.windows(2).all(|w| w[0].0 < w[1].0);
        if !ascending || self.breakpoints.iter().any(|&(_, n)| n < 0.0) {
            return Err(WorkloadError::BadProfile);
        }
        Ok(())
    }

    pub fn target(&self, step: u64) -> Result<f64, WorkloadError> {
        self.breakpoints
            .iter()
            .rev()
            .find(|&&(s, _)| step >= s)
            .map(|&(_, n)| n)
            .ok_or(WorkloadError::StepNotCovered(step))
    }
}

/// Deterministic pseudo-random gradient whose global L2 norm equals the
/// profile target at `step` to within 1e-6 relative.
pub fn synth_gradient(
    step: u64,
    profile: &NormProfile,
    element_count: usize,
    seed: u64,
    worker: u64,
) -> Result<Vec<f32>, WorkloadError> {
    let target = profile.target(step)?;
    let key = mix3(seed, worker, step);
    let mut rng = CounterRng::new(key, 0);
    let mut values: Vec<f32> = (0..element_count)
        .map(|_| rng.range_f64(-1.0, 1.0) as f32)
        .collect();
    let norm = l2_norm_flat(&values);
    if norm > 0.0 {
        let scale = (target / norm) as f32;
        for v in &mut values {
            *v *= scale;
        }
    }
    Ok(values)
}

/// A labeled dataset of D-dimensional points.
#[derive(Debug, Clone)]
pub struct BlobDataset {
    pub features: usize,
    pub classes: usize,
    /// Row-major n x features.
    pub points: Vec<f32>,
    pub labels: Vec<usize>,
}

impl BlobDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f32] {
        &self.points[i * self.features..(i + 1) * self.features]
    }
}

/// Well-separated Gaussian blobs: class centers sit `separation` apart along
/// coordinate axes with unit noise, so a linear model separates them easily.
pub fn make_blobs(
    classes: usize,
    features: usize,
    per_class: usize,
    separation: f64,
    seed: u64,
) -> BlobDataset {
    assert!(classes <= features, "one center axis per class");
    let mut rng = CounterRng::new(seed, 0xb10b);
    let mut points = Vec::with_capacity(classes * per_class * features);
    let mut labels = Vec::with_capacity(classes * per_class);
    let mut order: Vec<usize> = (0..classes * per_class).map(|i| i % classes).collect();
    rng.shuffle(&mut order);
    for &class in &order {
        for d in 0..features {
            let center = if d == class { separation } else { 0.0 };
            points.push((center + rng.next_gauss()) as f32);
        }
        labels.push(class);
    }
    BlobDataset {
        features,
        classes,
        points,
        labels,
    }
}

/// Softmax regression: C x D weight matrix plus C biases, trained by SGD.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    pub classes: usize,
    pub features: usize,
    /// Row-major classes x features.
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

impl ToyModel {
    pub fn new(classes: usize, features: usize, seed: u64) -> Self {
        let mut rng = CounterRng::new(seed, 0x70f);
        let weights = (0..classes * features)
            .map(|_| (rng.next_gauss() * 0.01) as f32)
            .collect();
        let bias = vec![0.0; classes];
        Self {
            classes,
            features,
            weights,
            bias,
        }
    }

    /// Wire layout of the gradient/parameter buffer.
    pub fn layout(&self) -> Vec<(String, u64)> {
        vec![
            ("weights".into(), (self.classes * self.features) as u64),
            ("bias".into(), self.classes as u64),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.classes * self.features + self.classes
    }

    fn logits(&self, x: &[f32]) -> Vec<f64> {
        (0..self.classes)
            .map(|c| {
                let row = &self.weights[c * self.features..(c + 1) * self.features];
                row.iter()
                    .zip(x)
                    .map(|(&w, &xi)| w as f64 * xi as f64)
                    .sum::<f64>()
                    + self.bias[c] as f64
            })
            .collect()
    }

    fn softmax(&self, x: &[f32]) -> Vec<f64> {
        let logits = self.logits(x);
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / sum).collect()
    }

    /// Mean cross-entropy gradient over a batch, flattened as [weights, bias].
    pub fn grad(&self, data: &BlobDataset, batch: &[usize]) -> Vec<f32> {
        assert!(!batch.is_empty());
        let mut gw = vec![0.0f64; self.classes * self.features];
        let mut gb = vec![0.0f64; self.classes];
        for &i in batch {
            let x = data.point(i);
            let probs = self.softmax(x);
            for c in 0..self.classes {
                let err = probs[c] - if data.labels[i] == c { 1.0 } else { 0.0 };
                gb[c] += err;
                for (d, &xi) in x.iter().enumerate() {
                    gw[c * self.features + d] += err * xi as f64;
                }
            }
        }
        let scale = 1.0 / batch.len() as f64;
        gw.iter()
            .chain(gb.iter())
            .map(|&g| (g * scale) as f32)
            .collect()
    }

    /// Mean cross-entropy loss over a batch (finite-difference reference).
    pub fn loss(&self, data: &BlobDataset, batch: &[usize]) -> f64 {
        let mut total = 0.0;
        for &i in batch {
            let probs = self.softmax(data.point(i));
            total -= probs[data.labels[i]].max(1e-300).ln();
        }
        total / batch.len() as f64
    }

    /// SGD update from a flat [weights, bias] gradient.
    pub fn apply(&mut self, grad: &[f32], lr: f32) {
        assert_eq!(grad.len(), self.param_count());
        let nw = self.classes * self.features;
        for (w, &g) in self.weights.iter_mut().zip(&grad[..nw]) {
            *w -= lr * g;
        }
        for (b, &g) in self.bias.iter_mut().zip(&grad[nw..]) {
            *b -= lr * g;
        }
    }

    /// Fraction of correctly classified examples.
    pub fn eval(&self, data: &BlobDataset) -> f64 {
        let correct = (0..data.len())
            .filter(|&i| {
                let logits = self.logits(data.point(i));
                let argmax = logits
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(c, _)| c)
                    .unwrap();
                argmax == data.labels[i]
            })
            .count();
        correct as f64 / data.len() as f64
    }

    pub fn flat_params(&self) -> Vec<f32> {
        self.weights
            .iter()
            .chain(self.bias.iter())
            .copied()
            .collect()
    }
}

/// Cyclic mini-batch indices for a worker's step.
pub fn batch_indices(step: u64, batch_size: usize, dataset_len: usize) -> Vec<usize> {
    let start = (step as usize * batch_size) % dataset_len;
    (0..batch_size).map(|k| (start + k) % dataset_len).collect()
}
