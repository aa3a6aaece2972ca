//! Binary model file.
//!
//! Little-endian throughout; counts are u64, strings a u32 byte length plus
//! UTF-8, node indices u32.
//!
//! ```text
//! magic     8 bytes "IOTMODEL"
//! version   u32     1
//! family    u8      0 gnb, 1 tree, 2 gbt, 3 mlp
//! schema    names (count, strings), dropped (count, (string, u8 reason))
//! labels    count, strings
//! config    gnb:  f64 var_smoothing
//!           tree: u64 max_depth, u64 min_samples_split
//!           gbt:  u64 n_rounds, f64 learning_rate, u64 max_depth, f64 lambda
//!           mlp:  u64 count + u64 hidden sizes, u64 epochs, u64 batch_size,
//!                 f64 learning_rate, u64 seed
//! params    gnb:  K u64 class counts, K*D f64 means, K*D f64 variances,
//!                 f64 variance floor
//!           tree: one tree
//!           gbt:  u64 rounds, then rounds*K regression trees
//!           mlp:  D f64 means, D f64 stds, u64 layer count, per layer
//!                 u64 n_in, u64 n_out, n_out*n_in f64 weights (row-major),
//!                 n_out f64 biases
//! ```
//!
//! A tree is a u64 node count followed by nodes in preorder. A split node is
//! `u8 1, u32 feature, f64 threshold, u32 left, u32 right` (rows with
//! `x <= threshold` go left); a classification leaf is `u8 0` plus K u64
//! class counts, a regression leaf `u8 0` plus one f64 value.

use std::path::Path;

use crate::codec::{LeReader, LeWriter, Truncated};
use crate::ids_data::{DropReason, FeatureSchema, LabelMap};

use super::*;

pub const MODEL_MAGIC: &[u8; 8] = b"IOTMODEL";
pub const MODEL_VERSION: u32 = 1;

fn family_tag(f: Family) -> u8 {
    match f {
        Family::Gnb => 0,
        Family::Tree => 1,
        Family::Gbt => 2,
        Family::Mlp => 3,
    }
}

pub fn serialize_model(m: &ClassifierModel) -> Vec<u8> {
    let mut w = LeWriter::default();
    w.raw(MODEL_MAGIC);
    w.u32(MODEL_VERSION);
    w.u8(family_tag(m.family()));
    w.u64(m.schema.names.len() as u64);
    for n in &m.schema.names {
        w.str(n);
    }
    w.u64(m.schema.dropped.len() as u64);
    for (n, r) in &m.schema.dropped {
        w.str(n);
        w.u8(r.tag());
    }
    w.u64(m.labels.len() as u64);
    for c in m.labels.classes() {
        w.str(c);
    }
    match &m.config {
        TrainConfig::Gnb(c) => w.f64(c.var_smoothing),
        TrainConfig::Tree(c) => {
            w.u64(c.max_depth as u64);
            w.u64(c.min_samples_split as u64);
        }
        TrainConfig::Gbt(c) => {
            w.u64(c.n_rounds as u64);
            w.f64(c.learning_rate);
            w.u64(c.max_depth as u64);
            w.f64(c.lambda);
        }
        TrainConfig::Mlp(c) => {
            w.u64(c.hidden_sizes.len() as u64);
            for &h in &c.hidden_sizes {
                w.u64(h as u64);
            }
            w.u64(c.epochs as u64);
            w.u64(c.batch_size as u64);
            w.f64(c.learning_rate);
            w.u64(c.seed);
        }
    }
    match &m.params {
        Params::Gnb(g) => {
            for &c in &g.class_counts {
                w.u64(c);
            }
            for row in g.means.iter().chain(&g.vars) {
                for &v in row {
                    w.f64(v);
                }
            }
            w.f64(g.floor);
        }
        Params::Tree(t) => {
            w.u64(t.nodes.len() as u64);
            for n in &t.nodes {
                match n {
                    TreeNode::Leaf { counts } => {
                        w.u8(0);
                        counts.iter().for_each(|&c| w.u64(c));
                    }
                    TreeNode::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    } => write_split(&mut w, *feature, *threshold, *left, *right),
                }
            }
        }
        Params::Gbt(b) => {
            w.u64(b.rounds.len() as u64);
            for t in b.rounds.iter().flatten() {
                w.u64(t.nodes.len() as u64);
                for n in &t.nodes {
                    match n {
                        RegNode::Leaf { value } => {
                            w.u8(0);
                            w.f64(*value);
                        }
                        RegNode::Split {
                            feature,
                            threshold,
                            left,
                            right,
                        } => write_split(&mut w, *feature, *threshold, *left, *right),
                    }
                }
            }
        }
        Params::Mlp(p) => {
            p.mean.iter().chain(&p.std).for_each(|&v| w.f64(v));
            w.u64(p.layers.len() as u64);
            for l in &p.layers {
                w.u64(l.n_in as u64);
                w.u64(l.n_out as u64);
                l.w.iter().chain(&l.b).for_each(|&v| w.f64(v));
            }
        }
    }
    w.buf
}

fn write_split(w: &mut LeWriter, feature: usize, threshold: f64, left: usize, right: usize) {
    w.u8(1);
    w.u32(feature as u32);
    w.f64(threshold);
    w.u32(left as u32);
    w.u32(right as u32);
}

impl From<Truncated> for ModelError {
    fn from(e: Truncated) -> Self {
        ModelError::Corrupt(e.to_string())
    }
}

fn corrupt(msg: &str) -> ModelError {
    ModelError::Corrupt(msg.to_string())
}

struct Reader<'a> {
    r: LeReader<'a>,
    d: usize,
    k: usize,
}

impl Reader<'_> {
    fn usize(&mut self) -> Result<usize, ModelError> {
        usize::try_from(self.r.u64()?).map_err(|_| corrupt("integer out of range"))
    }

    fn strings(&mut self) -> Result<Vec<String>, ModelError> {
        let n = self.r.count(4)?;
        Ok((0..n).map(|_| self.r.str()).collect::<Result<_, _>>()?)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, ModelError> {
        if n.saturating_mul(8) > self.remaining() {
            return Err(corrupt("truncated"));
        }
        Ok((0..n).map(|_| self.r.f64()).collect::<Result<_, _>>()?)
    }

    fn remaining(&self) -> usize {
        // LeReader tracks the position only
        usize::MAX - self.r.position()
    }

    /// Reads a tree, validating structure; `leaf` decodes one leaf body.
    fn nodes<T>(
        &mut self,
        mut leaf: impl FnMut(&mut Self) -> Result<T, ModelError>,
        split: impl Fn(usize, f64, usize, usize) -> T,
    ) -> Result<Vec<T>, ModelError> {
        let count = self.r.count(9)?;
        if count == 0 {
            return Err(corrupt("empty tree"));
        }
        let mut out = Vec::with_capacity(count);
        for i in 0..count {
            match self.r.u8()? {
                0 => out.push(leaf(self)?),
                1 => {
                    let feature = self.r.u32()? as usize;
                    let threshold = self.r.f64()?;
                    let left = self.r.u32()? as usize;
                    let right = self.r.u32()? as usize;
                    if feature >= self.d
                        || left <= i
                        || right <= i
                        || left >= count
                        || right >= count
                        || threshold.is_nan()
                    {
                        return Err(corrupt("bad split node"));
                    }
                    out.push(split(feature, threshold, left, right));
                }
                _ => return Err(corrupt("bad node kind")),
            }
        }
        Ok(out)
    }
}

pub fn load_model(bytes: &[u8]) -> Result<ClassifierModel, ModelError> {
    if bytes.len() < 8 || &bytes[..8] != MODEL_MAGIC {
        return Err(ModelError::BadMagic);
    }
    let mut rd = Reader {
        r: LeReader::new(&bytes[8..]),
        d: 0,
        k: 0,
    };
    let version = rd.r.u32()?;
    if version != MODEL_VERSION {
        return Err(ModelError::VersionMismatch(version));
    }
    let family = match rd.r.u8()? {
        0 => Family::Gnb,
        1 => Family::Tree,
        2 => Family::Gbt,
        3 => Family::Mlp,
        _ => return Err(corrupt("unknown family")),
    };
    let names = rd.strings()?;
    let n_dropped = rd.r.count(5)?;
    let mut dropped = Vec::with_capacity(n_dropped);
    for _ in 0..n_dropped {
        let n = rd.r.str()?;
        let reason = DropReason::from_tag(rd.r.u8()?).ok_or_else(|| corrupt("bad drop reason"))?;
        dropped.push((n, reason));
    }
    let labels = LabelMap::new(rd.strings()?);
    rd.d = names.len();
    rd.k = labels.len();
    let (d, k) = (rd.d, rd.k);
    if k < 2 {
        return Err(corrupt("fewer than two classes"));
    }
    let config = match family {
        Family::Gnb => TrainConfig::Gnb(GnbConfig {
            var_smoothing: rd.r.f64()?,
        }),
        Family::Tree => TrainConfig::Tree(TreeConfig {
            max_depth: rd.usize()?,
            min_samples_split: rd.usize()?,
        }),
        Family::Gbt => TrainConfig::Gbt(GbtConfig {
            n_rounds: rd.usize()?,
            learning_rate: rd.r.f64()?,
            max_depth: rd.usize()?,
            lambda: rd.r.f64()?,
        }),
        Family::Mlp => {
            let n = rd.r.count(8)?;
            let hidden_sizes = (0..n).map(|_| rd.usize()).collect::<Result<_, _>>()?;
            TrainConfig::Mlp(MlpConfig {
                hidden_sizes,
                epochs: rd.usize()?,
                batch_size: rd.usize()?,
                learning_rate: rd.r.f64()?,
                seed: rd.r.u64()?,
            })
        }
    };
    let params = match family {
        Family::Gnb => {
            let class_counts = (0..k).map(|_| rd.r.u64()).collect::<Result<Vec<_>, _>>()?;
            let rows = |rd: &mut Reader| -> Result<Vec<Vec<f64>>, ModelError> {
                (0..k).map(|_| rd.f64s(d)).collect()
            };
            let means = rows(&mut rd)?;
            let vars = rows(&mut rd)?;
            if vars.iter().flatten().any(|v| v.is_nan() || *v <= 0.0) {
                return Err(corrupt("non-positive variance"));
            }
            Params::Gnb(GaussianNb {
                class_counts,
                means,
                vars,
                floor: rd.r.f64()?,
            })
        }
        Family::Tree => {
            let nodes = rd.nodes(
                |rd| {
                    let counts = (0..rd.k).map(|_| rd.r.u64()).collect::<Result<Vec<_>, _>>()?;
                    if counts.iter().all(|&c| c == 0) {
                        return Err(corrupt("empty leaf"));
                    }
                    Ok(TreeNode::Leaf { counts })
                },
                |feature, threshold, left, right| TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                },
            )?;
            Params::Tree(DecisionTree { nodes })
        }
        Family::Gbt => {
            let n_rounds = rd.r.count(k * 17)?;
            let mut rounds = Vec::with_capacity(n_rounds);
            for _ in 0..n_rounds {
                let mut trees = Vec::with_capacity(k);
                for _ in 0..k {
                    let nodes = rd.nodes(
                        |rd| Ok(RegNode::Leaf { value: rd.r.f64()? }),
                        |feature, threshold, left, right| RegNode::Split {
                            feature,
                            threshold,
                            left,
                            right,
                        },
                    )?;
                    trees.push(RegTree { nodes });
                }
                rounds.push(trees);
            }
            Params::Gbt(Booster { n_classes: k, rounds })
        }
        Family::Mlp => {
            let mean = rd.f64s(d)?;
            let std = rd.f64s(d)?;
            let n_layers = rd.r.count(16)?;
            let mut layers = Vec::with_capacity(n_layers);
            let mut width = d;
            for _ in 0..n_layers {
                let n_in = rd.usize()?;
                let n_out = rd.usize()?;
                if n_in != width || n_out == 0 {
                    return Err(corrupt("layer shapes do not chain"));
                }
                let w = rd.f64s(n_in.checked_mul(n_out).ok_or_else(|| corrupt("layer size"))?)?;
                let b = rd.f64s(n_out)?;
                layers.push(Layer { n_in, n_out, w, b });
                width = n_out;
            }
            if layers.is_empty() || width != k {
                return Err(corrupt("output width does not match labels"));
            }
            Params::Mlp(Mlp { mean, std, layers })
        }
    };
    if !rd.r.is_empty() {
        return Err(corrupt("trailing bytes"));
    }
    Ok(ClassifierModel {
        schema: FeatureSchema { names, dropped },
        labels,
        config,
        params,
    })
}

pub fn write_model(path: &Path, m: &ClassifierModel) -> Result<(), ModelError> {
    std::fs::write(path, serialize_model(m)).map_err(|e| ModelError::Io(e.to_string()))
}

pub fn read_model(path: &Path) -> Result<ClassifierModel, ModelError> {
    let bytes = std::fs::read(path).map_err(|e| ModelError::Io(format!("{}: {e}", path.display())))?;
    load_model(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids_data::{Dataset, FeatureSchema, LabelMap};

    fn toy() -> Dataset {
        let rows: Vec<_> = (0..30)
            .map(|i| (vec![i as f64, ((i * 7) % 5) as f64], i % 3))
            .collect();
        let mut schema = FeatureSchema::new(vec!["a".into(), "b".into()]);
        schema.dropped.push(("Flow ID".into(), DropReason::NamedColumn));
        Dataset::from_rows(
            schema,
            LabelMap::new(vec!["A".into(), "B".into(), "C".into()]),
            &rows,
        )
    }

    fn models() -> Vec<ClassifierModel> {
        let d = toy();
        let configs = [
            TrainConfig::default_for(Family::Gnb),
            TrainConfig::default_for(Family::Tree),
            TrainConfig::Gbt(GbtConfig {
                n_rounds: 3,
                ..GbtConfig::default()
            }),
            TrainConfig::Mlp(MlpConfig {
                hidden_sizes: vec![4],
                epochs: 2,
                batch_size: 8,
                ..MlpConfig::default()
            }),
        ];
        configs.iter().map(|c| train(&d, c).unwrap()).collect()
    }

    #[test]
    fn round_trip_every_family() {
        let probe = toy();
        for m in models() {
            let bytes = serialize_model(&m);
            let back = load_model(&bytes).unwrap();
            assert_eq!(back, m, "{}", m.family());
            let a = m.predict_dataset(&probe).unwrap();
            let b = back.predict_dataset(&probe).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert_eq!(x.class, y.class);
                let bits = |p: &Prediction| p.probabilities.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
                assert_eq!(bits(x), bits(y));
            }
            assert_eq!(serialize_model(&back), bytes);
        }
    }

    #[test]
    fn truncation_and_header_errors() {
        for m in models() {
            let bytes = serialize_model(&m);
            for cut in 0..bytes.len() {
                let r = load_model(&bytes[..cut]);
                assert!(r.is_err(), "{} cut at {cut}", m.family());
                if cut >= 12 {
                    assert!(matches!(r, Err(ModelError::Corrupt(_))), "{} cut {cut}: {r:?}", m.family());
                }
            }
            let mut b = bytes.clone();
            b[0] ^= 1;
            assert_eq!(load_model(&b), Err(ModelError::BadMagic));
            let mut b = bytes.clone();
            b[8] = 9;
            assert_eq!(load_model(&b), Err(ModelError::VersionMismatch(9)));
            let mut b = bytes;
            b.push(0);
            assert!(matches!(load_model(&b), Err(ModelError::Corrupt(_))));
        }
    }
}
