use super::{scaled_normal, stream_rng, streams};
use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
use crate::scene::{Caption, Vocabulary};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("token {token:?} is not in the vocabulary")]
pub struct VocabError {
    pub token: String,
}

/// Vocabulary indices of `caption` followed by the end-of-sequence index.
pub fn tokenize(caption: &Caption, vocab: &Vocabulary) -> Result<Vec<usize>, VocabError> {
    let mut out = caption
        .tokens()
        .iter()
        .map(|t| vocab.index_of(t).ok_or_else(|| VocabError { token: t.clone() }))
        .collect::<Result<Vec<_>, _>>()?;
    out.push(vocab.eos());
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TextEncoder {
    /// `vocab × d_tok`
    pub embedding: Tensor,
    /// `d_tok × d`
    pub w1: Tensor,
    /// `1 × d`
    pub b1: Tensor,
    /// `d × d`
    pub w2: Tensor,
    /// `1 × d`
    pub b2: Tensor,
}

/// Tape handles for one registration of the text encoder's parameters.
#[derive(Clone, Copy, Debug)]
pub struct TextParams {
    pub embedding: Var,
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

impl TextEncoder {
    pub fn init(seed: u64, vocab: usize, d_tok: usize, d: usize) -> Self {
        assert!(vocab > 0 && d_tok > 0 && d > 0, "encoder dimensions must be positive");
        let mut rng = stream_rng(seed, streams::TEXT);
        let embedding = scaled_normal(&mut rng, vocab, d_tok).with_grad();
        let w1 = scaled_normal(&mut rng, d_tok, d).with_grad();
        let w2 = scaled_normal(&mut rng, d, d).with_grad();
        let zeros = |n| Tensor::zeros(vec![1, n]).expect("positive width").with_grad();
        Self { embedding, w1, b1: zeros(d), w2, b2: zeros(d) }
    }

    pub fn dim(&self) -> usize {
        self.w2.cols()
    }

    pub fn token_dim(&self) -> usize {
        self.embedding.cols()
    }

    pub fn vocab_size(&self) -> usize {
        self.embedding.rows()
    }

    pub fn register(&self, tape: &mut Tape) -> TextParams {
        TextParams {
            embedding: tape.leaf(&self.embedding),
            w1: tape.leaf(&self.w1),
            b1: tape.leaf(&self.b1),
            w2: tape.leaf(&self.w2),
            b2: tape.leaf(&self.b2),
        }
    }

    pub fn tensors(&self) -> [&Tensor; 5] {
        [&self.embedding, &self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 5] {
        [&mut self.embedding, &mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    /// Unit-norm embeddings for a batch of index sequences, `[B × d]`.
    pub fn forward(tape: &mut Tape, params: &TextParams, bags: &[Vec<usize>]) -> Result<Var, AutodiffError> {
        let pooled = tape.embed_bag(params.embedding, bags)?;
        let h = tape.matmul(pooled, params.w1)?;
        let h = tape.add_row_bias(h, params.b1)?;
        let h = tape.tanh(h);
        let out = tape.matmul(h, params.w2)?;
        let out = tape.add_row_bias(out, params.b2)?;
        tape.l2_normalize_rows(out)
    }

    /// Embedding of one index sequence, without recording gradients.
    pub fn encode(&self, indices: &[usize]) -> Result<Vec<f64>, AutodiffError> {
        if indices.is_empty() {
            return Err(AutodiffError::Contract("encode_text: empty index sequence".into()));
        }
        Ok(self.encode_batch(&[indices.to_vec()])?.pop().expect("one row"))
    }

    pub fn encode_batch(&self, bags: &[Vec<usize>]) -> Result<Vec<Vec<f64>>, AutodiffError> {
        let mut tape = Tape::new();
        let params = TextParams {
            embedding: tape.constant(self.embedding.rows(), self.embedding.cols(), self.embedding.values().to_vec())?,
            w1: tape.constant(self.w1.rows(), self.w1.cols(), self.w1.values().to_vec())?,
            b1: tape.constant(1, self.b1.cols(), self.b1.values().to_vec())?,
            w2: tape.constant(self.w2.rows(), self.w2.cols(), self.w2.values().to_vec())?,
            b2: tape.constant(1, self.b2.cols(), self.b2.values().to_vec())?,
        };
        let out = Self::forward(&mut tape, &params, bags)?;
        Ok(tape.value(out).chunks(self.dim()).map(<[f64]>::to_vec).collect())
    }
}
