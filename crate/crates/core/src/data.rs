//! Datasets, whitespace tokenization and synthetic generators.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{contract, Error, Result};
use crate::manifold::gram_schmidt;
use crate::numerics::Tensor;
use crate::objective::Target;
use crate::rng::{self, Stream};

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Dense token ↔ id map with the two reserved ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl Default for Vocab {
    fn default() -> Self {
        let mut v = Self {
            tokens: Vec::new(),
            index: BTreeMap::new(),
        };
        v.insert(PAD_TOKEN);
        v.insert(UNK_TOKEN);
        v
    }
}

impl Vocab {
    /// Vocabulary `t2 … t{size-1}` for synthetic ids.
    pub fn synthetic(size: usize) -> Self {
        let mut v = Self::default();
        for i in 2..size {
            v.insert(&format!("t{i}"));
        }
        v
    }

    fn insert(&mut self, tok: &str) -> usize {
        if let Some(&id) = self.index.get(tok) {
            return id;
        }
        let id = self.tokens.len();
        self.tokens.push(tok.to_string());
        self.index.insert(tok.to_string(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Id of `tok`, or the unknown id.
    pub fn id(&self, tok: &str) -> usize {
        self.index.get(tok).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Dev,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelKind {
    Class,
    Regression,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    /// Unpadded token ids; the true length is `tokens.len()`.
    pub tokens: Vec<usize>,
    pub target: Target,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextDataset {
    pub examples: Vec<Example>,
    pub vocab: Vocab,
    /// `None` for regression.
    pub num_classes: Option<usize>,
    pub split: Split,
}

impl TextDataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn is_regression(&self) -> bool {
        self.num_classes.is_none()
    }

    /// Output width the model head needs.
    pub fn num_outputs(&self) -> usize {
        self.num_classes.unwrap_or(1)
    }
}

/// Parses `label<TAB>text` lines.
///
/// With `vocab = None` the vocabulary is built from this text (train split);
/// otherwise the given vocabulary is used frozen and unseen tokens map to
/// the unknown id. Sequences longer than `max_len` are truncated.
pub fn parse_tsv(text: &str, kind: LabelKind, vocab: Option<&Vocab>, max_len: usize) -> Result<TextDataset> {
    if max_len == 0 {
        return Err(contract("max_len must be positive"));
    }
    let mut owned = vocab.cloned().unwrap_or_default();
    let frozen = vocab.is_some();
    let mut examples = Vec::new();
    let mut max_label = 0usize;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let (label, body) = line.split_once('\t').ok_or_else(|| Error::Parse {
            line: line_no,
            reason: "expected label<TAB>text".to_string(),
        })?;
        let label = label.trim();
        let target = match kind {
            LabelKind::Class => {
                let c: usize = label.parse().map_err(|_| Error::Parse {
                    line: line_no,
                    reason: format!("label {label:?} is not a class index"),
                })?;
                max_label = max_label.max(c);
                Target::Class(c)
            }
            LabelKind::Regression => {
                let y: f64 = label.parse().map_err(|_| Error::Parse {
                    line: line_no,
                    reason: format!("label {label:?} is not a number"),
                })?;
                if !y.is_finite() {
                    return Err(Error::Parse {
                        line: line_no,
                        reason: "label is not finite".to_string(),
                    });
                }
                Target::Value(y)
            }
        };
        let mut tokens: Vec<usize> = body
            .split_whitespace()
            .map(|t| if frozen { owned.id(t) } else { owned.insert(t) })
            .collect();
        if tokens.is_empty() {
            return Err(Error::Parse {
                line: line_no,
                reason: "empty text".to_string(),
            });
        }
        tokens.truncate(max_len);
        examples.push(Example { tokens, target });
    }
    if examples.is_empty() {
        return Err(Error::Parse {
            line: 0,
            reason: "no examples".to_string(),
        });
    }
    Ok(TextDataset {
        examples,
        vocab: owned,
        num_classes: (kind == LabelKind::Class).then_some(max_label + 1),
        split: if frozen { Split::Dev } else { Split::Train },
    })
}

/// Class-conditional token sequences.
///
/// Ids `2..vocab_size` are content tokens. Each class owns a disjoint block
/// of signature tokens; every position draws from the class's block with
/// probability `margin` and uniformly from all content tokens otherwise.
/// Lengths are uniform in `[seq_len/2, seq_len]`. Dev sequences never occur
/// in train.
pub fn synth_classification(
    n_per_class: usize,
    num_classes: usize,
    seq_len: usize,
    vocab_size: usize,
    margin: f64,
    seed: u64,
) -> Result<(TextDataset, TextDataset)> {
    if n_per_class == 0 || num_classes < 2 || seq_len == 0 {
        return Err(contract("n_per_class, seq_len must be positive and num_classes ≥ 2"));
    }
    if !(margin > 0.0 && margin <= 1.0) {
        return Err(contract("margin must lie in (0, 1]"));
    }
    let content = vocab_size.saturating_sub(2);
    let block = content / (2 * num_classes);
    if block == 0 {
        return Err(contract("vocab_size too small for the number of classes"));
    }
    let mut rng = rng::stream(seed, Stream::Generator);
    let mut draw = |class: usize| -> Vec<usize> {
        let lo = (seq_len / 2).max(1);
        let len = lo + rng::below(&mut rng, seq_len - lo + 1);
        (0..len)
            .map(|_| {
                if rng::uniform(&mut rng) < margin {
                    2 + class * block + rng::below(&mut rng, block)
                } else {
                    2 + rng::below(&mut rng, content)
                }
            })
            .collect()
    };
    let mut seen: BTreeSet<Vec<usize>> = BTreeSet::new();
    let mut split = |draw: &mut dyn FnMut(usize) -> Vec<usize>| -> Result<Vec<Example>> {
        let mut out = Vec::with_capacity(n_per_class * num_classes);
        for i in 0..n_per_class * num_classes {
            let class = i % num_classes;
            let mut tries = 0;
            let tokens = loop {
                let t = draw(class);
                if seen.insert(t.clone()) {
                    break t;
                }
                tries += 1;
                if tries > 1000 {
                    return Err(contract("cannot draw enough distinct sequences"));
                }
            };
            out.push(Example {
                tokens,
                target: Target::Class(class),
            });
        }
        Ok(out)
    };
    let train = split(&mut draw)?;
    let dev = split(&mut draw)?;
    let vocab = Vocab::synthetic(vocab_size);
    let make = |examples, split| TextDataset {
        examples,
        vocab: vocab.clone(),
        num_classes: Some(num_classes),
        split,
    };
    Ok((make(train, Split::Train), make(dev, Split::Dev)))
}

/// Points on a `k_true`-dimensional manifold in `Rᵈ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticManifoldSet {
    pub points: Tensor,
    pub intrinsic_dim: usize,
    pub curvature: f64,
    pub seed: u64,
}

/// `x = A z + c · B (z ∘ z)` for `z` uniform in `[-1, 1]^k`, where `A` and
/// `B` have orthonormal columns spanning disjoint subspaces when `2k ≤ d`.
pub fn synth_manifold(n: usize, d: usize, k_true: usize, curvature: f64, seed: u64) -> Result<SyntheticManifoldSet> {
    if k_true == 0 || k_true >= d {
        return Err(contract("need 0 < k_true < d"));
    }
    if n == 0 {
        return Err(contract("need at least one point"));
    }
    let mut rng = rng::stream(seed, Stream::Generator);
    let cols = (2 * k_true).min(d);
    let raw: Vec<Vec<f64>> = (0..cols)
        .map(|_| (0..d).map(|_| rng::standard_normal(&mut rng)).collect())
        .collect();
    let q = gram_schmidt(&raw)?.basis;
    if q.len() < cols {
        return Err(contract("random frame is rank deficient"));
    }
    let (a, b) = q.split_at(k_true);
    let mut data = vec![0.0; n * d];
    for row in data.chunks_mut(d) {
        let z: Vec<f64> = (0..k_true).map(|_| 2.0 * rng::uniform(&mut rng) - 1.0).collect();
        for (j, zj) in z.iter().enumerate() {
            for (x, aj) in row.iter_mut().zip(&a[j]) {
                *x += zj * aj;
            }
            if curvature != 0.0 {
                let bj = &b[j % b.len()];
                for (x, bv) in row.iter_mut().zip(bj) {
                    *x += curvature * zj * zj * bv;
                }
            }
        }
    }
    Ok(SyntheticManifoldSet {
        points: Tensor::new(vec![n, d], data)?,
        intrinsic_dim: k_true,
        curvature,
        seed,
    })
}
