use super::ModelError;
use crate::ids_data::Dataset;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GnbConfig {
    pub var_smoothing: f64,
}

impl Default for GnbConfig {
    fn default() -> Self {
        Self {
            var_smoothing: 1e-9,
        }
    }
}

/// Per-class Gaussian likelihoods with independent features.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianNb {
    pub class_counts: Vec<u64>,
    /// `means[k][j]`.
    pub means: Vec<Vec<f64>>,
    /// Floored variances, `vars[k][j]`.
    pub vars: Vec<Vec<f64>>,
    pub floor: f64,
}

impl GaussianNb {
    /// Unnormalized log posterior per class; `-inf` for classes absent
    /// from training.
    pub fn log_joint(&self, x: &[f64]) -> Vec<f64> {
        let n: u64 = self.class_counts.iter().sum();
        self.class_counts
            .iter()
            .enumerate()
            .map(|(k, &c)| {
                if c == 0 {
                    return f64::NEG_INFINITY;
                }
                let mut s = (c as f64 / n as f64).ln();
                for (j, &v) in x.iter().enumerate() {
                    let var = self.vars[k][j];
                    let diff = v - self.means[k][j];
                    s -= 0.5 * (2.0 * std::f64::consts::PI * var).ln() + diff * diff / (2.0 * var);
                }
                s
            })
            .collect()
    }

    pub fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        super::softmax(&self.log_joint(x))
    }
}

/// Class priors are frequencies; means and population variances are per
/// class and feature. Variances are floored at `var_smoothing` times the
/// largest feature variance over all rows (or at `var_smoothing` itself
/// when every feature is constant).
pub fn train_gnb(data: &Dataset, config: &GnbConfig) -> Result<GaussianNb, ModelError> {
    let k = data.labels.len();
    let d = data.n_features();
    let counts: Vec<u64> = data.per_class_counts().iter().map(|&c| c as u64).collect();
    for (class, &c) in counts.iter().enumerate() {
        if c == 1 {
            return Err(ModelError::ClassTooSmall(data.labels.name(class).to_string()));
        }
    }
    if counts.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(ModelError::TooFewClasses);
    }
    let mut sums = vec![vec![0.0; d]; k];
    for i in 0..data.len() {
        let t = data.target(i);
        for (s, v) in sums[t].iter_mut().zip(data.row(i)) {
            *s += v;
        }
    }
    let means: Vec<Vec<f64>> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| s.iter().map(|v| if c > 0 { v / c as f64 } else { 0.0 }).collect())
        .collect();
    let mut sq = vec![vec![0.0; d]; k];
    for i in 0..data.len() {
        let t = data.target(i);
        for j in 0..d {
            let diff = data.row(i)[j] - means[t][j];
            sq[t][j] += diff * diff;
        }
    }
    let max_var = (0..d)
        .map(|j| {
            let col = data.column(j);
            let m = col.iter().sum::<f64>() / col.len() as f64;
            col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / col.len() as f64
        })
        .fold(0.0, f64::max);
    let floor = if max_var > 0.0 {
        config.var_smoothing * max_var
    } else {
        config.var_smoothing
    };
    let vars = sq
        .iter()
        .zip(&counts)
        .map(|(s, &c)| {
            s.iter()
                .map(|v| if c > 0 { (v / c as f64).max(floor) } else { floor })
                .collect()
        })
        .collect();
    Ok(GaussianNb {
        class_counts: counts,
        means,
        vars,
        floor,
    })
}
