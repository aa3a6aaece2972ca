use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{softmax, ModelError};
use crate::ids_data::Dataset;

#[derive(Debug, Clone, PartialEq)]
pub struct MlpConfig {
    pub hidden_sizes: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden_sizes: vec![64, 32],
            epochs: 20,
            batch_size: 256,
            learning_rate: 0.01,
            seed: 0,
        }
    }
}

/// Fully connected layer; `w` is `n_out x n_in`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub n_in: usize,
    pub n_out: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Layer {
    fn zeros(n_in: usize, n_out: usize) -> Self {
        Self {
            n_in,
            n_out,
            w: vec![0.0; n_in * n_out],
            b: vec![0.0; n_out],
        }
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n_out)
            .map(|o| {
                let row = &self.w[o * self.n_in..(o + 1) * self.n_in];
                self.b[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect()
    }
}

/// ReLU hidden layers, softmax output. Inputs are z-scored with the
/// training statistics stored in `mean` and `std`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub layers: Vec<Layer>,
}

impl Mlp {
    /// All weights and biases zero; identity standardization.
    pub fn zeros(sizes: &[usize]) -> Self {
        Self {
            mean: vec![0.0; sizes[0]],
            std: vec![1.0; sizes[0]],
            layers: sizes.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect(),
        }
    }

    /// He initialization: weights drawn from N(0, 2 / fan_in), zero biases.
    pub fn he_init(sizes: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Self::zeros(sizes);
        for layer in &mut m.layers {
            let normal = Normal::new(0.0, (2.0 / layer.n_in as f64).sqrt()).expect("finite std");
            for w in &mut layer.w {
                *w = normal.sample(&mut rng);
            }
        }
        m
    }

    fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    /// Pre-activations of every layer for one standardized input.
    fn forward_all(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut zs: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        let mut a = x.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&a);
            if l + 1 < self.layers.len() {
                a = z.iter().map(|v| v.max(0.0)).collect();
            }
            zs.push(z);
        }
        zs
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.forward_all(&self.standardize(x))
            .pop()
            .expect("at least one layer")
    }

    pub fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.logits(x))
    }

    fn accumulate(&self, x: &[f64], y: usize, grads: &mut [Layer]) -> f64 {
        let input = self.standardize(x);
        let zs = self.forward_all(&input);
        let last = zs.len() - 1;
        let p = softmax(&zs[last]);
        let loss = -p[y].max(f64::MIN_POSITIVE).ln();
        let mut delta: Vec<f64> = p;
        delta[y] -= 1.0;
        for l in (0..=last).rev() {
            let layer = &self.layers[l];
            let prev: Vec<f64> = if l == 0 {
                input.clone()
            } else {
                zs[l - 1].iter().map(|v| v.max(0.0)).collect()
            };
            let g = &mut grads[l];
            for o in 0..layer.n_out {
                g.b[o] += delta[o];
                let row = &mut g.w[o * layer.n_in..(o + 1) * layer.n_in];
                for (gw, a) in row.iter_mut().zip(&prev) {
                    *gw += delta[o] * a;
                }
            }
            if l > 0 {
                let mut next = vec![0.0; layer.n_in];
                for o in 0..layer.n_out {
                    let row = &layer.w[o * layer.n_in..(o + 1) * layer.n_in];
                    for (n, w) in next.iter_mut().zip(row) {
                        *n += w * delta[o];
                    }
                }
                for (n, z) in next.iter_mut().zip(&zs[l - 1]) {
                    if *z <= 0.0 {
                        *n = 0.0;
                    }
                }
                delta = next;
            }
        }
        loss
    }

    fn batch_grads(&self, xs: &[&[f64]], ys: &[usize]) -> (f64, Vec<Layer>) {
        let mut grads: Vec<Layer> = self.layers.iter().map(|l| Layer::zeros(l.n_in, l.n_out)).collect();
        let mut loss = 0.0;
        for (x, &y) in xs.iter().zip(ys) {
            loss += self.accumulate(x, y, &mut grads);
        }
        let scale = 1.0 / xs.len() as f64;
        for g in &mut grads {
            g.w.iter_mut().chain(g.b.iter_mut()).for_each(|v| *v *= scale);
        }
        (loss * scale, grads)
    }

    /// Parameters flattened layer by layer, weights before biases.
    pub fn flat_params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.w.iter().chain(&l.b).copied())
            .collect()
    }

    pub fn set_flat_params(&mut self, p: &[f64]) {
        let mut it = p.iter().copied();
        for l in &mut self.layers {
            for v in l.w.iter_mut().chain(l.b.iter_mut()) {
                *v = it.next().expect("parameter count");
            }
        }
        assert!(it.next().is_none(), "parameter count");
    }

    /// Mean cross-entropy over the batch and its gradient in
    /// [`Mlp::flat_params`] order.
    pub fn loss_and_grad(&self, xs: &[&[f64]], ys: &[usize]) -> (f64, Vec<f64>) {
        let (loss, grads) = self.batch_grads(xs, ys);
        let flat = grads
            .iter()
            .flat_map(|l| l.w.iter().chain(&l.b).copied())
            .collect();
        (loss, flat)
    }
}

/// Mini-batch gradient descent on the softmax cross-entropy. Rows are
/// reshuffled every epoch with a generator seeded from `config.seed`.
pub fn train_mlp(data: &Dataset, config: &MlpConfig) -> Result<Mlp, ModelError> {
    if data.is_empty() {
        return Err(ModelError::EmptyNode);
    }
    if data.per_class_counts().iter().filter(|&&c| c > 0).count() < 2 {
        return Err(ModelError::TooFewClasses);
    }
    let d = data.n_features();
    let n = data.len();
    let mut sizes = vec![d];
    sizes.extend(&config.hidden_sizes);
    sizes.push(data.labels.len());
    let mut model = Mlp::he_init(&sizes, config.seed);
    for j in 0..d {
        let col = data.column(j);
        let mean = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        model.mean[j] = mean;
        model.std[j] = if var > 0.0 { var.sqrt() } else { 1.0 };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..n).collect();
    let batch = config.batch_size.max(1);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for (b, chunk) in order.chunks(batch).enumerate() {
            let xs: Vec<&[f64]> = chunk.iter().map(|&i| data.row(i)).collect();
            let ys: Vec<usize> = chunk.iter().map(|&i| data.target(i)).collect();
            let (loss, grads) = model.batch_grads(&xs, &ys);
            if !loss.is_finite() {
                return Err(ModelError::NonFiniteLoss(format!(
                    "epoch {epoch} batch {b}: loss {loss}"
                )));
            }
            for (layer, g) in model.layers.iter_mut().zip(&grads) {
                for (w, gw) in layer.w.iter_mut().zip(&g.w) {
                    *w -= config.learning_rate * gw;
                }
                for (bias, gb) in layer.b.iter_mut().zip(&g.b) {
                    *bias -= config.learning_rate * gb;
                }
            }
        }
    }
    Ok(model)
}

/// Agreement between analytic and central-difference gradients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// `|g - fd| / max(|g|, |fd|)` over the whole parameter vector.
    pub relative: f64,
    /// Largest per-parameter relative error among entries of magnitude at
    /// least `resolution`.
    pub worst_entry: f64,
    /// Rounding noise of the difference quotient, `eps * |loss| / h`,
    /// times 1e4. Below it a single entry's relative error says nothing.
    pub resolution: f64,
}

pub fn gradient_check(m: &Mlp, xs: &[&[f64]], ys: &[usize]) -> GradCheck {
    let (loss, grad) = m.loss_and_grad(xs, ys);
    let p0 = m.flat_params();
    let h = 1e-5;
    let resolution = 1e4 * f64::EPSILON * loss.abs().max(1.0) / h;
    let mut probe = m.clone();
    let mut worst_entry: f64 = 0.0;
    let (mut diff2, mut g2, mut fd2) = (0.0, 0.0, 0.0);
    for i in 0..p0.len() {
        let mut p = p0.clone();
        p[i] += h;
        probe.set_flat_params(&p);
        let up = probe.loss_and_grad(xs, ys).0;
        p[i] -= 2.0 * h;
        probe.set_flat_params(&p);
        let down = probe.loss_and_grad(xs, ys).0;
        let fd = (up - down) / (2.0 * h);
        let scale = fd.abs().max(grad[i].abs());
        if scale >= resolution {
            worst_entry = worst_entry.max((fd - grad[i]).abs() / scale);
        }
        diff2 += (fd - grad[i]).powi(2);
        g2 += grad[i] * grad[i];
        fd2 += fd * fd;
    }
    let norm = g2.max(fd2).sqrt();
    GradCheck {
        relative: if norm > 0.0 { diff2.sqrt() / norm } else { 0.0 },
        worst_entry,
        resolution,
    }
}

#[cfg(test)]
mod tests {
    use rand::RngExt;

    use super::*;
    use crate::ids_data::{split, FeatureSchema, LabelMap};

    #[test]
    fn zero_network_is_uniform() {
        let m = Mlp::zeros(&[3, 4, 5]);
        assert_eq!(m.probabilities(&[1.0, -2.0, 3.0]), vec![0.2; 5]);
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..5 {
            let mut m = Mlp::he_init(&[4, 6, 5, 3], trial);
            m.mean = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            m.std = (0..4).map(|_| rng.random_range(0.5..2.0)).collect();
            let rows: Vec<Vec<f64>> = (0..3)
                .map(|_| (0..4).map(|_| rng.random_range(-2.0..2.0)).collect())
                .collect();
            let xs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
            let ys = [0, 2, 1];
            let c = gradient_check(&m, &xs, &ys);
            assert!(c.relative < 1e-4 && c.worst_entry < 1e-4, "{c:?}");
        }
    }

    #[test]
    fn separates_gaussian_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let rows: Vec<(Vec<f64>, usize)> = (0..1000)
            .map(|i| {
                let c = i % 2;
                let shift = if c == 0 { -3.0 } else { 3.0 };
                (
                    vec![shift + normal.sample(&mut rng), normal.sample(&mut rng)],
                    c,
                )
            })
            .collect();
        let d = Dataset::from_rows(
            FeatureSchema::new(vec!["a".into(), "b".into()]),
            LabelMap::new(vec!["A".into(), "B".into()]),
            &rows,
        );
        let (train, test) = split(&d, 0.3, 1, true).unwrap();
        let m = train_mlp(&train, &MlpConfig::default()).unwrap();
        let hits = (0..test.len())
            .filter(|&i| {
                let p = m.probabilities(test.row(i));
                usize::from(p[1] > p[0]) == test.target(i)
            })
            .count();
        assert!(hits as f64 / test.len() as f64 >= 0.99, "{hits}");
    }

    #[test]
    fn same_seed_same_model() {
        let rows: Vec<(Vec<f64>, usize)> = (0..50).map(|i| (vec![i as f64], usize::from(i > 25))).collect();
        let d = Dataset::from_rows(
            FeatureSchema::new(vec!["a".into()]),
            LabelMap::new(vec!["A".into(), "B".into()]),
            &rows,
        );
        let cfg = MlpConfig {
            epochs: 3,
            batch_size: 8,
            ..MlpConfig::default()
        };
        assert_eq!(train_mlp(&d, &cfg).unwrap(), train_mlp(&d, &cfg).unwrap());
    }
}
