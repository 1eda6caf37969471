//! Windowed feed-forward feature function.
//!
//! Each token is represented by a trained embedding plus the mean of hashed
//! character n-gram embeddings; the vectors of a fixed window around position
//! t are concatenated and pushed through one or more tanh projections. The
//! result feeds every CRF head, which only assumes some differentiable
//! f(x_t) -> R^d and nothing about its internals.

use ndarray::{Array1, Array2};
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::FlatParams;

/// T × d matrix of feature vectors, one row per token.
pub type FeatureMatrix = Array2<f64>;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("upstream gradient has shape {found:?}, expected {expected:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub embedding_dim: usize,
    pub char_ngram_orders: Vec<usize>,
    pub hash_buckets: usize,
    /// Half-width of the context window; 0 means the token alone.
    pub window: usize,
    pub hidden_dim: usize,
    /// Stacked tanh projections; layers beyond the first map d -> d.
    pub num_layers: usize,
    pub seed: u64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            embedding_dim: 32,
            char_ngram_orders: vec![2, 3],
            hash_buckets: 4096,
            window: 1,
            hidden_dim: 64,
            num_layers: 1,
            seed: 0,
        }
    }
}

impl FeatureConfig {
    fn validate(&self) {
        assert!(self.embedding_dim > 0, "embedding_dim must be positive");
        assert!(self.hash_buckets > 0, "hash_buckets must be positive");
        assert!(self.hidden_dim > 0, "hidden_dim must be positive");
        assert!(self.num_layers > 0, "num_layers must be positive");
        assert!(
            self.char_ngram_orders.iter().all(|&n| n > 0),
            "n-gram orders must be positive"
        );
    }
}

/// One affine layer followed by tanh: h' = tanh(W h + b).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// All trainable tensors of the featurizer. The same struct carries
/// gradients, which share every shape with the parameters they mirror.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturizerParams {
    /// (V+2) × E. Rows 0..V are vocabulary tokens in sorted order; row V is
    /// the shared UNK row, row V+1 the PAD row for out-of-sentence positions.
    pub tok_emb: Array2<f64>,
    /// hash_buckets × E.
    pub char_emb: Array2<f64>,
    pub layers: Vec<Projection>,
}

impl FeaturizerParams {
    pub fn zeros_like(&self) -> FeaturizerParams {
        FeaturizerParams {
            tok_emb: Array2::zeros(self.tok_emb.raw_dim()),
            char_emb: Array2::zeros(self.char_emb.raw_dim()),
            layers: self
                .layers
                .iter()
                .map(|l| Projection {
                    w: Array2::zeros(l.w.raw_dim()),
                    b: Array1::zeros(l.b.raw_dim()),
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &FeaturizerParams) {
        self.tok_emb += &other.tok_emb;
        self.char_emb += &other.char_emb;
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.w += &b.w;
            a.b += &b.b;
        }
    }
}

impl FlatParams for FeaturizerParams {
    fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend(self.tok_emb.iter());
        out.extend(self.char_emb.iter());
        for l in &self.layers {
            out.extend(l.w.iter());
            out.extend(l.b.iter());
        }
        out
    }

    fn assign_flat(&mut self, flat: &[f64]) {
        let mut it = flat.iter();
        for slot in self
            .tok_emb
            .iter_mut()
            .chain(self.char_emb.iter_mut())
            .chain(self.layers.iter_mut().flat_map(|l| {
                l.w.iter_mut().chain(l.b.iter_mut())
            }))
        {
            *slot = *it.next().expect("flat vector too short");
        }
        assert!(it.next().is_none(), "flat vector too long");
    }
}

/// Feature function instance: configuration, vocabulary, and parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Featurizer {
    pub config: FeatureConfig,
    /// Sorted unique token inventory; looked up by binary search.
    pub vocab: Vec<String>,
    pub params: FeaturizerParams,
}

/// FNV-1a over the gram's UTF-8 bytes. Hand-rolled so bucket assignment is
/// stable across platforms and releases, unlike the stdlib hasher.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

impl Featurizer {
    /// Builds a featurizer over a token inventory. Duplicates are dropped and
    /// the inventory sorted, so initialization depends only on the token set
    /// and the config seed.
    pub fn new(config: FeatureConfig, vocabulary: impl IntoIterator<Item = String>) -> Featurizer {
        config.validate();
        let mut vocab: Vec<String> = vocabulary.into_iter().collect();
        vocab.sort();
        vocab.dedup();
        assert!(!vocab.is_empty(), "vocabulary must be non-empty");

        let e = config.embedding_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let emb_dist = Uniform::new_inclusive(-0.1, 0.1);
        let draw = |rows: usize, cols: usize, dist: Uniform<f64>, rng: &mut ChaCha8Rng| {
            Array2::from_shape_fn((rows, cols), |_| dist.sample(rng))
        };
        let tok_emb = draw(vocab.len() + 2, e, emb_dist, &mut rng);
        let char_emb = draw(config.hash_buckets, e, emb_dist, &mut rng);

        let in_dim = (2 * config.window + 1) * 2 * e;
        let mut layers = Vec::with_capacity(config.num_layers);
        let mut fan_in = in_dim;
        for _ in 0..config.num_layers {
            let bound = (6.0 / (fan_in + config.hidden_dim) as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound);
            layers.push(Projection {
                w: draw(config.hidden_dim, fan_in, dist, &mut rng),
                b: Array1::zeros(config.hidden_dim),
            });
            fan_in = config.hidden_dim;
        }

        Featurizer {
            config,
            vocab,
            params: FeaturizerParams {
                tok_emb,
                char_emb,
                layers,
            },
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.config.hidden_dim
    }

    fn unk_row(&self) -> usize {
        self.vocab.len()
    }

    fn pad_row(&self) -> usize {
        self.vocab.len() + 1
    }

    fn token_row(&self, token: &str) -> usize {
        self.vocab
            .binary_search_by(|v| v.as_str().cmp(token))
            .unwrap_or(self.unk_row())
    }

    /// Bucket ids of every character n-gram of the token, all orders pooled.
    fn gram_buckets(&self, token: &str) -> Vec<usize> {
        let chars: Vec<char> = token.chars().collect();
        let mut buckets = Vec::new();
        let mut gram = String::new();
        for &n in &self.config.char_ngram_orders {
            if chars.len() < n {
                continue;
            }
            for start in 0..=chars.len() - n {
                gram.clear();
                gram.extend(&chars[start..start + n]);
                buckets.push((fnv1a(gram.as_bytes()) % self.config.hash_buckets as u64) as usize);
            }
        }
        buckets
    }

    /// The 2E-dim representation of one window slot: [token row; gram mean].
    /// Out-of-sentence slots use the PAD row and a zero gram mean, as does
    /// the gram half of any token shorter than every n-gram order.
    fn slot_inputs(&self, tokens: &[String], pos: isize) -> (usize, Vec<usize>) {
        if pos < 0 || pos as usize >= tokens.len() {
            (self.pad_row(), Vec::new())
        } else {
            let token = &tokens[pos as usize];
            (self.token_row(token), self.gram_buckets(token))
        }
    }

    /// Runs the forward pass, keeping per-layer activations for backward.
    /// `acts[l]` holds the layer-l outputs, row per token; `acts[0]` is the
    /// concatenated window input.
    fn forward(&self, tokens: &[String]) -> Vec<Array2<f64>> {
        assert!(!tokens.is_empty(), "cannot featurize an empty sentence");
        let e = self.config.embedding_dim;
        let w = self.config.window as isize;
        let t_len = tokens.len();
        let in_dim = (2 * self.config.window + 1) * 2 * e;

        let mut input = Array2::zeros((t_len, in_dim));
        for t in 0..t_len {
            let mut offset = 0;
            for dw in -w..=w {
                let (row, buckets) = self.slot_inputs(tokens, t as isize + dw);
                for i in 0..e {
                    input[[t, offset + i]] = self.params.tok_emb[[row, i]];
                }
                if !buckets.is_empty() {
                    let scale = 1.0 / buckets.len() as f64;
                    for &bucket in &buckets {
                        for i in 0..e {
                            input[[t, offset + e + i]] += scale * self.params.char_emb[[bucket, i]];
                        }
                    }
                }
                offset += 2 * e;
            }
        }

        let mut acts = vec![input];
        for layer in &self.params.layers {
            let prev = acts.last().unwrap();
            let mut next = prev.dot(&layer.w.t());
            for mut row in next.rows_mut() {
                row += &layer.b;
                row.mapv_inplace(f64::tanh);
            }
            acts.push(next);
        }
        acts
    }

    /// Feature matrix for one sentence: row t = f(x_t).
    pub fn featurize(&self, tokens: &[String]) -> FeatureMatrix {
        self.forward(tokens).pop().unwrap()
    }

    /// Gradients of a scalar loss w.r.t. every parameter, given dL/dF.
    /// Recomputes the forward pass, then walks the chain rule back through
    /// the tanh stack, the window concatenation, and the embedding lookups.
    pub fn featurize_backward(
        &self,
        tokens: &[String],
        upstream: &Array2<f64>,
    ) -> Result<FeaturizerParams, FeatureError> {
        let expected = (tokens.len(), self.config.hidden_dim);
        if upstream.dim() != expected {
            return Err(FeatureError::ShapeMismatch {
                expected,
                found: upstream.dim(),
            });
        }
        let acts = self.forward(tokens);
        let mut grads = self.params.zeros_like();

        // d_h: gradient w.r.t. the output of the current layer.
        let mut d_h = upstream.clone();
        for (l, layer) in self.params.layers.iter().enumerate().rev() {
            let out = &acts[l + 1];
            let inp = &acts[l];
            // Through tanh: d_a = d_h * (1 - out^2), the pre-activation grad.
            let d_a = &d_h * &out.mapv(|v| 1.0 - v * v);
            grads.layers[l].w += &d_a.t().dot(inp);
            grads.layers[l].b += &d_a.sum_axis(ndarray::Axis(0));
            d_h = d_a.dot(&layer.w);
        }

        // d_h is now T × in_dim: scatter back to the embedding tables.
        let e = self.config.embedding_dim;
        let w = self.config.window as isize;
        for t in 0..tokens.len() {
            let mut offset = 0;
            for dw in -w..=w {
                let (row, buckets) = self.slot_inputs(tokens, t as isize + dw);
                for i in 0..e {
                    grads.tok_emb[[row, i]] += d_h[[t, offset + i]];
                }
                if !buckets.is_empty() {
                    let scale = 1.0 / buckets.len() as f64;
                    for &bucket in &buckets {
                        for i in 0..e {
                            grads.char_emb[[bucket, i]] += scale * d_h[[t, offset + e + i]];
                        }
                    }
                }
                offset += 2 * e;
            }
        }
        Ok(grads)
    }
}
