//! Classifier families behind one train/predict interface.

mod format;
mod gbt;
mod gnb;
mod mlp;
mod presort;
mod tree;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::ids_data::{Dataset, FeatureSchema, LabelMap};

pub use format::{load_model, read_model, serialize_model, write_model, MODEL_MAGIC, MODEL_VERSION};
pub use gbt::{cross_entropy, gradients, train_gbt, train_gbt_traced, Booster, GbtConfig, RegNode, RegTree};
pub use gnb::{train_gnb, GaussianNb, GnbConfig};
pub use mlp::{gradient_check, train_mlp, GradCheck, Layer, Mlp, MlpConfig};
pub use tree::{gini, train_tree, DecisionTree, TreeConfig, TreeNode};

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("empty node")]
    EmptyNode,
    #[error("dataset has no features")]
    NoFeatures,
    #[error("fewer than two classes present")]
    TooFewClasses,
    #[error("class `{0}` has fewer than two rows")]
    ClassTooSmall(String),
    #[error("non-finite training loss at {0}")]
    NonFiniteLoss(String),
    #[error("schema mismatch: model expects {expected} features, input has {found}")]
    SchemaMismatch { expected: usize, found: usize },
    #[error("not a model file")]
    BadMagic,
    #[error("model format version {0} is not supported")]
    VersionMismatch(u32),
    #[error("corrupt model file: {0}")]
    Corrupt(String),
    #[error("io: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Family {
    Gnb,
    Tree,
    Gbt,
    Mlp,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::Gnb, Family::Tree, Family::Gbt, Family::Mlp];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::Gnb => "gnb",
            Family::Tree => "tree",
            Family::Gbt => "gbt",
            Family::Mlp => "mlp",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Family::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| format!("unknown family `{s}` (expected gnb, tree, gbt or mlp)"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainConfig {
    Gnb(GnbConfig),
    Tree(TreeConfig),
    Gbt(GbtConfig),
    Mlp(MlpConfig),
}

impl TrainConfig {
    pub fn default_for(family: Family) -> Self {
        match family {
            Family::Gnb => TrainConfig::Gnb(GnbConfig::default()),
            Family::Tree => TrainConfig::Tree(TreeConfig::default()),
            Family::Gbt => TrainConfig::Gbt(GbtConfig::default()),
            Family::Mlp => TrainConfig::Mlp(MlpConfig::default()),
        }
    }

    pub fn family(&self) -> Family {
        match self {
            TrainConfig::Gnb(_) => Family::Gnb,
            TrainConfig::Tree(_) => Family::Tree,
            TrainConfig::Gbt(_) => Family::Gbt,
            TrainConfig::Mlp(_) => Family::Mlp,
        }
    }

    /// `key=value` lines describing the hyperparameters.
    pub fn describe(&self) -> Vec<(String, String)> {
        let kv = |k: &str, v: String| (k.to_string(), v);
        match self {
            TrainConfig::Gnb(c) => vec![kv("var_smoothing", format!("{:e}", c.var_smoothing))],
            TrainConfig::Tree(c) => vec![
                kv("max_depth", c.max_depth.to_string()),
                kv("min_samples_split", c.min_samples_split.to_string()),
            ],
            TrainConfig::Gbt(c) => vec![
                kv("n_rounds", c.n_rounds.to_string()),
                kv("learning_rate", c.learning_rate.to_string()),
                kv("max_depth", c.max_depth.to_string()),
                kv("lambda", c.lambda.to_string()),
            ],
            TrainConfig::Mlp(c) => vec![
                kv(
                    "hidden_sizes",
                    c.hidden_sizes.iter().map(|h| h.to_string()).collect::<Vec<_>>().join(","),
                ),
                kv("epochs", c.epochs.to_string()),
                kv("batch_size", c.batch_size.to_string()),
                kv("learning_rate", c.learning_rate.to_string()),
                kv("seed", c.seed.to_string()),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Params {
    Gnb(GaussianNb),
    Tree(DecisionTree),
    Gbt(Booster),
    Mlp(Mlp),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub class: usize,
    pub probabilities: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    pub schema: FeatureSchema,
    pub labels: LabelMap,
    pub config: TrainConfig,
    pub params: Params,
}

impl ClassifierModel {
    pub fn family(&self) -> Family {
        self.config.family()
    }

    fn check_schema(&self, schema: &FeatureSchema) -> Result<(), ModelError> {
        if schema.names != self.schema.names {
            return Err(ModelError::SchemaMismatch {
                expected: self.schema.len(),
                found: schema.len(),
            });
        }
        Ok(())
    }

    /// Prediction for one row laid out in `schema`, which must equal the
    /// training schema.
    pub fn predict(&self, schema: &FeatureSchema, row: &[f64]) -> Result<Prediction, ModelError> {
        self.check_schema(schema)?;
        if row.len() != self.schema.len() {
            return Err(ModelError::SchemaMismatch {
                expected: self.schema.len(),
                found: row.len(),
            });
        }
        Ok(self.predict_unchecked(row))
    }

    fn predict_unchecked(&self, row: &[f64]) -> Prediction {
        let probabilities = match &self.params {
            Params::Gnb(m) => m.probabilities(row),
            Params::Tree(m) => m.probabilities(row),
            Params::Gbt(m) => m.probabilities(row),
            Params::Mlp(m) => m.probabilities(row),
        };
        Prediction {
            class: argmax(&probabilities),
            probabilities,
        }
    }

    pub fn predict_dataset(&self, data: &Dataset) -> Result<Vec<Prediction>, ModelError> {
        use rayon::prelude::*;
        self.check_schema(&data.schema)?;
        Ok((0..data.len())
            .into_par_iter()
            .map(|i| self.predict_unchecked(data.row(i)))
            .collect())
    }
}

/// Trains one model on `data` with its current schema.
pub fn train(data: &Dataset, config: &TrainConfig) -> Result<ClassifierModel, ModelError> {
    let params = match config {
        TrainConfig::Gnb(c) => Params::Gnb(train_gnb(data, c)?),
        TrainConfig::Tree(c) => Params::Tree(train_tree(data, c)?),
        TrainConfig::Gbt(c) => Params::Gbt(train_gbt(data, c)?),
        TrainConfig::Mlp(c) => Params::Mlp(train_mlp(data, c)?),
    };
    Ok(ClassifierModel {
        schema: data.schema.clone(),
        labels: data.labels.clone(),
        config: config.clone(),
        params,
    })
}

/// Numerically stable softmax; `-inf` entries get probability 0.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return vec![1.0 / scores.len() as f64; scores.len()];
    }
    let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_shift_invariance_and_ties() {
        let a = softmax(&[1.0, 2.0, 2.0]);
        let b = softmax(&[101.0, 102.0, 102.0]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-15);
        }
        assert_eq!(argmax(&a), 1);
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(softmax(&[f64::NEG_INFINITY, 0.0]), vec![0.0, 1.0]);
    }

    #[test]
    fn family_names() {
        for f in Family::ALL {
            assert_eq!(f.as_str().parse::<Family>(), Ok(f));
        }
        assert!("svm".parse::<Family>().is_err());
    }

    #[test]
    fn tree_leaf_probabilities() {
        let t = DecisionTree {
            nodes: vec![TreeNode::Leaf { counts: vec![8, 2] }],
        };
        let m = ClassifierModel {
            schema: FeatureSchema::new(vec!["x".into()]),
            labels: LabelMap::new(vec!["A".into(), "B".into()]),
            config: TrainConfig::default_for(Family::Tree),
            params: Params::Tree(t),
        };
        let p = m.predict(&m.schema.clone(), &[0.0]).unwrap();
        assert_eq!(p.probabilities, vec![0.8, 0.2]);
        assert_eq!(p.class, 0);
        let other = FeatureSchema::new(vec!["y".into()]);
        assert!(matches!(m.predict(&other, &[0.0]), Err(ModelError::SchemaMismatch { .. })));
        assert!(m.predict(&m.schema.clone(), &[0.0, 1.0]).is_err());
    }
}
