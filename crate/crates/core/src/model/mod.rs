//! Locally normalized autoregressive scorer `p(y | x, θ)` over grammar actions.
//!
//! Architecture: token embeddings feed a single-layer tanh recurrent encoder.
//! The decoder is a tanh recurrent cell over previous-action embeddings,
//! initialized from the last encoder state, with additive attention over the
//! encoder states. Each step scores only the actions the grammar allows and
//! normalizes over them.
//!
//! All parameters live in one flat vector, see [`Layout`] for the block order.

mod checkpoint;
mod linalg;
mod network;
mod vocab;

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC,
};
pub use network::{DecoderState, Encoded, Model, ScoredSequence};
pub use vocab::{Utterance, Vocab, UNK};

/// Half-width of the uniform initialization interval.
pub const INIT_SCALE: f64 = 0.08;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub num_actions: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
}

impl ModelConfig {
    pub const DEFAULT_EMBED: usize = 32;
    pub const DEFAULT_HIDDEN: usize = 64;

    pub fn new(vocab_size: usize, num_actions: usize) -> Self {
        ModelConfig {
            vocab_size,
            num_actions,
            embed_dim: Self::DEFAULT_EMBED,
            hidden_dim: Self::DEFAULT_HIDDEN,
        }
    }

    pub fn with_dims(mut self, embed_dim: usize, hidden_dim: usize) -> Self {
        self.embed_dim = embed_dim;
        self.hidden_dim = hidden_dim;
        self
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self)
    }

    pub fn num_params(&self) -> usize {
        self.layout().total
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0
            || self.num_actions == 0
            || self.embed_dim == 0
            || self.hidden_dim == 0
        {
            return Err(Error::Config(format!(
                "all model dimensions must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    /// Eight-byte fingerprint stored in checkpoints.
    pub fn hash(&self) -> [u8; 8] {
        use sha2::{Digest, Sha256};
        let text = format!(
            "vocab={};actions={};embed={};hidden={}",
            self.vocab_size, self.num_actions, self.embed_dim, self.hidden_dim
        );
        let digest = Sha256::digest(text.as_bytes());
        let mut out = [0u8; 8];
        out.copy_from_slice(&digest[..8]);
        out
    }
}

/// Offsets of the parameter blocks. Matrices are row-major `rows × cols`.
///
/// | block     | shape                  | role                                |
/// |-----------|------------------------|-------------------------------------|
/// | `tok_emb` | vocab × embed          | utterance token embeddings          |
/// | `enc_wx`  | hidden × embed         | encoder input weights               |
/// | `enc_wh`  | hidden × hidden        | encoder recurrent weights           |
/// | `enc_b`   | hidden                 | encoder bias                        |
/// | `act_emb` | (actions + 1) × embed  | previous-action embeddings, last row is BOS |
/// | `dec_wa`  | hidden × embed         | decoder input weights               |
/// | `dec_ws`  | hidden × hidden        | decoder recurrent weights           |
/// | `dec_b`   | hidden                 | decoder bias                        |
/// | `att_wh`  | hidden × hidden        | attention key projection            |
/// | `att_ws`  | hidden × hidden        | attention query projection          |
/// | `att_v`   | hidden                 | attention scoring vector            |
/// | `out_w`   | actions × (2·hidden)   | output weights over `[s; context]`  |
/// | `out_b`   | actions                | output bias                         |
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub tok_emb: Range<usize>,
    pub enc_wx: Range<usize>,
    pub enc_wh: Range<usize>,
    pub enc_b: Range<usize>,
    pub act_emb: Range<usize>,
    pub dec_wa: Range<usize>,
    pub dec_ws: Range<usize>,
    pub dec_b: Range<usize>,
    pub att_wh: Range<usize>,
    pub att_ws: Range<usize>,
    pub att_v: Range<usize>,
    pub out_w: Range<usize>,
    pub out_b: Range<usize>,
    pub total: usize,
}

impl Layout {
    fn new(c: &ModelConfig) -> Self {
        let (v, a, e, h) = (c.vocab_size, c.num_actions, c.embed_dim, c.hidden_dim);
        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        let tok_emb = take(v * e);
        let enc_wx = take(h * e);
        let enc_wh = take(h * h);
        let enc_b = take(h);
        let act_emb = take((a + 1) * e);
        let dec_wa = take(h * e);
        let dec_ws = take(h * h);
        let dec_b = take(h);
        let att_wh = take(h * h);
        let att_ws = take(h * h);
        let att_v = take(h);
        let out_w = take(a * 2 * h);
        let out_b = take(a);
        Layout {
            tok_emb,
            enc_wx,
            enc_wh,
            enc_b,
            act_emb,
            dec_wa,
            dec_ws,
            dec_b,
            att_wh,
            att_ws,
            att_v,
            out_w,
            out_b,
            total: at,
        }
    }
}

/// Flat parameter vector θ.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams(Vec<f64>);

impl ModelParams {
    pub fn zeros(config: &ModelConfig) -> Self {
        ModelParams(vec![0.0; config.num_params()])
    }

    /// Uniform in `[-INIT_SCALE, INIT_SCALE]` from a seeded generator.
    pub fn init(config: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::random(config, &mut rng, INIT_SCALE)
    }

    pub fn random<R: Rng>(config: &ModelConfig, rng: &mut R, scale: f64) -> Self {
        ModelParams(
            (0..config.num_params())
                .map(|_| rng.gen_range(-scale..=scale))
                .collect(),
        )
    }

    pub fn from_vec(config: &ModelConfig, data: Vec<f64>) -> Result<Self> {
        if data.len() != config.num_params() {
            return Err(Error::Config(format!(
                "parameter vector has {} entries, config needs {}",
                data.len(),
                config.num_params()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config("non-finite parameter".into()));
        }
        Ok(ModelParams(data))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    /// `θ ← θ + scale · direction`
    pub fn add_scaled(&mut self, direction: &[f64], scale: f64) {
        assert_eq!(direction.len(), self.0.len());
        for (p, d) in self.0.iter_mut().zip(direction) {
            *p += scale * d;
        }
    }
}
